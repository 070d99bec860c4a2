//! Train/validation/test partition, zero-shot users and sparsity bins.
//!
//! Zero-shot users are drawn first and all their interactions go to the
//! zero-shot set; the remaining users are split per user as in
//! [`partition_edges`]. Test users (those holding out at least one test
//! edge) are sorted by `(train frequency, user index)` and cut into equal
//! count bins: bin `b` of `B` takes sorted positions
//! `ceil(b N / B) .. ceil((b + 1) N / B)`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::dataset::{Dataset, IdIndex};
use crate::error::{Error, Result};
use crate::graph_cf::{partition_edges, Edge, InteractionGraph, NodeEmbeddings, Split, SplitSpec};
use crate::numerics::{axpy, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SparsityConfig {
    pub train: f64,
    pub validation: f64,
    pub bins: usize,
    pub zero_shot_fraction: f64,
    pub seed: u64,
}

impl Default for SparsityConfig {
    fn default() -> Self {
        Self {
            train: 0.7,
            validation: 0.1,
            bins: 5,
            zero_shot_fraction: 0.05,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeRole {
    Train,
    Validation,
    Test,
    ZeroShot,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEdge {
    pub user_id: String,
    pub item_id: String,
    pub role: EdgeRole,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub config: SparsityConfig,
    /// Users and items of the graph; zero-shot users are not in it.
    pub graph_index: IdIndex,
    pub zero_shot_users: Vec<String>,
    /// Sorted by `(user_id, item_id)`.
    pub edges: Vec<ManifestEdge>,
    /// Test users by sparsity bin, sparsest first.
    pub bins: Vec<Vec<String>>,
    /// Bins requested but merged away for lack of distinct frequencies.
    pub merged_bins: usize,
    /// Items whose only split edges were held out and got one moved back.
    pub repaired_items: usize,
}

/// Bins `users`, given as `(frequency, user)` pairs, into at most `bins`
/// equal-count groups sorted by `(frequency, user)`. With fewer distinct
/// frequencies than bins every distinct frequency gets its own bin instead.
pub fn frequency_bins(users: &[(usize, usize)], bins: usize) -> Result<(Vec<Vec<usize>>, usize)> {
    if bins == 0 {
        return Err(Error::InvalidArgument("at least one bin is needed".into()));
    }
    let mut sorted = users.to_vec();
    sorted.sort_unstable();
    let distinct: BTreeSet<usize> = sorted.iter().map(|p| p.0).collect();
    if distinct.len() < bins {
        let merged = bins - distinct.len().max(1);
        if !sorted.is_empty() {
            log::warn!(
                "only {} distinct train frequencies for {bins} bins; merging into {}",
                distinct.len(),
                distinct.len()
            );
        }
        let mut out: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (f, u) in sorted {
            out.entry(f).or_default().push(u);
        }
        let groups: Vec<Vec<usize>> = out.into_values().collect();
        return Ok((if groups.is_empty() { vec![Vec::new()] } else { groups }, merged));
    }
    let n = sorted.len();
    let bound = |b: usize| (b * n).div_ceil(bins);
    let out = (0..bins).map(|b| sorted[bound(b)..bound(b + 1)].iter().map(|p| p.1).collect()).collect();
    Ok((out, 0))
}

/// Splits the dataset's interactions.
pub fn sparsity_split(dataset: &Dataset, config: &SparsityConfig) -> Result<SplitManifest> {
    if !(0.0..1.0).contains(&config.zero_shot_fraction) {
        return Err(Error::InvalidArgument("zero_shot_fraction must lie in [0, 1)".into()));
    }
    let spec = SplitSpec::new(config.train, config.validation, config.seed)?;
    let full = dataset.index();
    if full.users.is_empty() {
        return Err(Error::EmptyInput);
    }
    let m = full.users.len();
    let n_zero = (config.zero_shot_fraction * m as f64).round() as usize;
    let mut rng = Rng::derived(config.seed, 0x2e70);
    let zero: BTreeSet<usize> = rng.sample_indices(m, n_zero).into_iter().collect();

    let kept_users: Vec<String> = (0..m).filter(|u| !zero.contains(u)).map(|u| full.users[u].clone()).collect();
    let graph_index = IdIndex::new(kept_users, full.items.clone());
    let mut interactions = Vec::new();
    let mut edges = Vec::with_capacity(dataset.records.len());
    for r in &dataset.records {
        match graph_index.user(&r.user_id) {
            Some(u) => interactions.push((u, graph_index.require_item(&r.item_id)?)),
            None => edges.push(ManifestEdge {
                user_id: r.user_id.clone(),
                item_id: r.item_id.clone(),
                role: EdgeRole::ZeroShot,
            }),
        }
    }
    let mut split = partition_edges(graph_index.users.len(), graph_index.items.len(), &interactions, &spec)?;
    let repaired_items = repair_items(&mut split, graph_index.items.len())?;
    for e in &split {
        edges.push(ManifestEdge {
            user_id: graph_index.users[e.user].clone(),
            item_id: graph_index.items[e.item].clone(),
            role: match e.split {
                Split::Train => EdgeRole::Train,
                Split::Validation => EdgeRole::Validation,
                Split::Test => EdgeRole::Test,
            },
        });
    }
    edges.sort_by(|a, b| (&a.user_id, &a.item_id).cmp(&(&b.user_id, &b.item_id)));

    let mut train_freq = vec![0usize; graph_index.users.len()];
    let mut is_test = vec![false; graph_index.users.len()];
    for e in &split {
        match e.split {
            Split::Train => train_freq[e.user] += 1,
            Split::Test => is_test[e.user] = true,
            Split::Validation => {}
        }
    }
    let test_users: Vec<(usize, usize)> = (0..graph_index.users.len())
        .filter(|&u| is_test[u])
        .map(|u| (train_freq[u], u))
        .collect();
    let (bins, merged_bins) = frequency_bins(&test_users, config.bins)?;
    let bins = bins
        .into_iter()
        .map(|b| b.into_iter().map(|u| graph_index.users[u].clone()).collect())
        .collect();

    Ok(SplitManifest {
        config: config.clone(),
        graph_index,
        zero_shot_users: zero.into_iter().map(|u| full.users[u].clone()).collect(),
        edges,
        bins,
        merged_bins,
        repaired_items,
    })
}

/// Moves one held-out edge back to train for every item left without a
/// train edge, taking the edge of the smallest user index.
fn repair_items(edges: &mut [Edge], num_items: usize) -> Result<usize> {
    let mut has_train = vec![false; num_items];
    for e in edges.iter() {
        if e.split == Split::Train {
            has_train[e.item] = true;
        }
    }
    let mut repaired = 0;
    for item in 0..num_items {
        if has_train[item] {
            continue;
        }
        let candidate = edges
            .iter_mut()
            .filter(|e| e.item == item)
            .min_by_key(|e| e.user)
            .ok_or_else(|| Error::Data(format!("item {item} interacts only with zero-shot users")))?;
        candidate.split = Split::Train;
        repaired += 1;
    }
    if repaired > 0 {
        log::warn!("{repaired} items had no train edge; one held-out edge each moved to train");
    }
    Ok(repaired)
}

impl SplitManifest {
    pub fn edges_with(&self, role: EdgeRole) -> impl Iterator<Item = &ManifestEdge> + '_ {
        self.edges.iter().filter(move |e| e.role == role)
    }

    /// The interaction graph over non-zero-shot users.
    pub fn graph(&self) -> Result<InteractionGraph> {
        let mut edges = Vec::new();
        for e in &self.edges {
            let split = match e.role {
                EdgeRole::Train => Split::Train,
                EdgeRole::Validation => Split::Validation,
                EdgeRole::Test => Split::Test,
                EdgeRole::ZeroShot => continue,
            };
            edges.push(Edge {
                user: self.graph_index.require_user(&e.user_id)?,
                item: self.graph_index.require_item(&e.item_id)?,
                split,
            });
        }
        InteractionGraph::from_edges(self.graph_index.users.len(), self.graph_index.items.len(), edges)
    }

    /// Bin names, `tst1` upward.
    pub fn bin_names(&self) -> Vec<String> {
        (1..=self.bins.len()).map(|b| format!("tst{b}")).collect()
    }

    /// Items each zero-shot user interacted with, by user id.
    pub fn zero_shot_items(&self) -> BTreeMap<String, Vec<String>> {
        let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for e in self.edges_with(EdgeRole::ZeroShot) {
            out.entry(e.user_id.clone()).or_default().push(e.item_id.clone());
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serialises")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: malformed split manifest: {e}", path.display())))
    }
}

/// Collaborative embedding of a user unseen in training: one propagation
/// step over the items they interacted with at test time,
/// `sum_i e_i / sqrt(|N_u| |N_i|)`, with `|N_i|` the item's train degree.
pub fn zero_shot_user_embedding(emb: &NodeEmbeddings, graph: &InteractionGraph, items: &[usize]) -> Result<Vec<f64>> {
    if items.is_empty() {
        return Err(Error::Data("a zero-shot user needs at least one interacted item".into()));
    }
    let du = items.len() as f64;
    let mut out = vec![0.0; emb.dim()];
    for &i in items {
        if i >= graph.num_items() {
            return Err(Error::UnknownId(format!("item index {i}")));
        }
        let di = graph.item_neighbors(i).len() as f64;
        axpy(1.0 / (du * di).sqrt(), emb.items.row(i), &mut out);
    }
    Ok(out)
}
