use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub user: usize,
    pub item: usize,
    pub split: Split,
}

/// Per-user stratified split fractions. The test fraction is whatever
/// remains after `train` and `validation`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub validation: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train: f64, validation: f64, seed: u64) -> Result<Self> {
        let spec = Self {
            train,
            validation,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn full_train(seed: u64) -> Self {
        Self {
            train: 1.0,
            validation: 0.0,
            seed,
        }
    }

    pub fn test(&self) -> f64 {
        (1.0 - self.train - self.validation).max(0.0)
    }

    fn validate(&self) -> Result<()> {
        let ok = |f: f64| (0.0..=1.0).contains(&f);
        if !ok(self.train) || !ok(self.validation) || self.train + self.validation > 1.0 + 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "split fractions train={} validation={} must lie in [0, 1] and sum to at most 1",
                self.train, self.validation
            )));
        }
        Ok(())
    }
}

/// Bipartite user-item graph. Adjacency lists hold train edges only.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionGraph {
    num_users: usize,
    num_items: usize,
    edges: Vec<Edge>,
    user_items: Vec<Vec<usize>>,
    item_users: Vec<Vec<usize>>,
    user_seen: Vec<Vec<usize>>,
}

fn floor_count(deg: usize, fraction: f64) -> usize {
    (deg as f64 * fraction + 1e-9).floor() as usize
}

/// Splits interactions per user: each user's items are shuffled and the
/// first `floor(deg * validation)` go to validation, the next
/// `floor(deg * test)` to test, and the rest to train.
pub fn partition_edges(
    num_users: usize,
    num_items: usize,
    interactions: &[(usize, usize)],
    spec: &SplitSpec,
) -> Result<Vec<Edge>> {
    spec.validate()?;
    let mut per_user: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); num_users];
    for &(u, i) in interactions {
        if u >= num_users || i >= num_items {
            return Err(Error::Graph(format!(
                "interaction ({u}, {i}) outside {num_users} users / {num_items} items"
            )));
        }
        per_user[u].insert(i);
    }
    let mut rng = Rng::derived(spec.seed, 0x5917);
    let mut edges = Vec::with_capacity(interactions.len());
    for (user, items) in per_user.into_iter().enumerate() {
        let mut items: Vec<usize> = items.into_iter().collect();
        rng.shuffle(&mut items);
        let deg = items.len();
        let n_val = floor_count(deg, spec.validation);
        let n_test = floor_count(deg, spec.test()).min(deg - n_val);
        for (rank, item) in items.into_iter().enumerate() {
            let split = if rank < n_val {
                Split::Validation
            } else if rank < n_val + n_test {
                Split::Test
            } else {
                Split::Train
            };
            edges.push(Edge { user, item, split });
        }
    }
    Ok(edges)
}

/// Deduplicates `interactions`, splits them with `spec` and validates the
/// result.
pub fn build_graph(
    num_users: usize,
    num_items: usize,
    interactions: &[(usize, usize)],
    spec: &SplitSpec,
) -> Result<InteractionGraph> {
    let edges = partition_edges(num_users, num_items, interactions, spec)?;
    InteractionGraph::from_edges(num_users, num_items, edges)
}

impl InteractionGraph {
    /// Builds a graph from already labelled edges.
    ///
    /// Every user and every item must have at least one train edge, since
    /// propagation normalises by node degree.
    pub fn from_edges(num_users: usize, num_items: usize, mut edges: Vec<Edge>) -> Result<Self> {
        edges.sort_by_key(|e| (e.user, e.item));
        for pair in edges.windows(2) {
            if pair[0].user == pair[1].user && pair[0].item == pair[1].item {
                return Err(Error::Graph(format!(
                    "duplicate edge ({}, {})",
                    pair[0].user, pair[0].item
                )));
            }
        }
        let mut user_items = vec![Vec::new(); num_users];
        let mut item_users = vec![Vec::new(); num_items];
        let mut user_seen = vec![Vec::new(); num_users];
        for e in &edges {
            if e.user >= num_users || e.item >= num_items {
                return Err(Error::Graph(format!(
                    "edge ({}, {}) outside {num_users} users / {num_items} items",
                    e.user, e.item
                )));
            }
            user_seen[e.user].push(e.item);
            if e.split == Split::Train {
                user_items[e.user].push(e.item);
                item_users[e.item].push(e.user);
            }
        }
        if let Some(u) = user_items.iter().position(Vec::is_empty) {
            return Err(Error::Graph(format!("user {u} has no train interactions after split")));
        }
        if let Some(i) = item_users.iter().position(Vec::is_empty) {
            return Err(Error::Graph(format!("item {i} has no train interactions after split")));
        }
        Ok(Self {
            num_users,
            num_items,
            edges,
            user_items,
            item_users,
            user_seen,
        })
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    /// All edges, sorted by `(user, item)`.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edges_in(&self, split: Split) -> impl Iterator<Item = &Edge> + '_ {
        self.edges.iter().filter(move |e| e.split == split)
    }

    pub fn num_edges_in(&self, split: Split) -> usize {
        self.edges_in(split).count()
    }

    /// Train neighbours of `user`, ascending.
    pub fn user_neighbors(&self, user: usize) -> &[usize] {
        &self.user_items[user]
    }

    /// Train neighbours of `item`, ascending.
    pub fn item_neighbors(&self, item: usize) -> &[usize] {
        &self.item_users[item]
    }

    /// Items `user` interacted with in any split, ascending.
    pub fn user_interactions(&self, user: usize) -> &[usize] {
        &self.user_seen[user]
    }

    /// Per-user lists of items held out in `split`.
    pub fn held_out(&self, split: Split) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_users];
        for e in self.edges_in(split) {
            out[e.user].push(e.item);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> Vec<(usize, usize)> {
        vec![(0, 0), (0, 1), (1, 0), (1, 1)]
    }

    #[test]
    fn full_train_keeps_every_edge() {
        let g = build_graph(2, 2, &square(), &SplitSpec::full_train(1)).unwrap();
        assert_eq!(g.num_edges_in(Split::Train), 4);
        assert_eq!(g.user_neighbors(0).len(), 2);
        assert_eq!(g.user_neighbors(1).len(), 2);
        assert_eq!(g.item_neighbors(1), &[0, 1]);
    }

    #[test]
    fn split_is_deterministic_per_seed() {
        let inter: Vec<(usize, usize)> = (0..5).flat_map(|u| (0..8).map(move |i| (u, i))).collect();
        let spec = SplitSpec::new(0.5, 0.25, 11).unwrap();
        let a = build_graph(5, 8, &inter, &spec).unwrap();
        let b = build_graph(5, 8, &inter, &spec).unwrap();
        assert_eq!(a.edges(), b.edges());
        assert_eq!(a.num_edges_in(Split::Validation), 10);
        assert_eq!(a.num_edges_in(Split::Test), 10);
        let c = build_graph(5, 8, &inter, &SplitSpec::new(0.5, 0.25, 12).unwrap()).unwrap();
        assert_ne!(a.edges(), c.edges());
    }

    #[test]
    fn duplicates_are_merged() {
        let mut inter = square();
        inter.push((0, 0));
        let g = build_graph(2, 2, &inter, &SplitSpec::full_train(0)).unwrap();
        assert_eq!(g.edges().len(), 4);
    }

    #[test]
    fn user_without_train_edges_is_named() {
        let err = build_graph(3, 2, &square(), &SplitSpec::full_train(0)).unwrap_err();
        assert!(err.to_string().contains("user 2"), "{err}");
        let err = build_graph(2, 2, &square(), &SplitSpec::new(0.0, 1.0, 0).unwrap()).unwrap_err();
        assert!(err.to_string().contains("user 0"), "{err}");
    }

    #[test]
    fn out_of_range_ids_are_rejected() {
        assert!(build_graph(2, 2, &[(0, 5)], &SplitSpec::full_train(0)).is_err());
        assert!(SplitSpec::new(0.8, 0.5, 0).is_err());
    }
}
