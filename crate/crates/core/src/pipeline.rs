//! End-to-end stages, in memory and on disk.
//!
//! Work directory layout, one directory per stage, each holding the
//! resolved `config.toml` it ran with:
//!
//! ```text
//! synth/      dataset.jsonl planted.json
//! split/      manifest.json
//! gnn/        checkpoint.json train_log.jsonl
//! corpus/     item_profiles.jsonl user_profiles.jsonl explanations.jsonl skipped.jsonl
//! lm/         checkpoint.json pretrain_log.jsonl heldout.json world/
//! explainer{variant}/  checkpoint.json adapter_log.jsonl
//! generate{variant}/   explanations.jsonl references.jsonl
//! evaluate{variant}/   report.txt report.jsonl scores.jsonl
//! ```
//!
//! `{variant}` is empty for the full model and otherwise names the disabled
//! parts, e.g. `-no-injection`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{PretrainSource, RunConfig};
use crate::corpus::{
    distill_batch, generate_item_profile, generate_user_profile, load_dataset, sparsity_split, synthesize_dataset,
    zero_shot_user_embedding, Dataset, EdgeRole, ExplanationRecord, Profile, SparsityConfig, SplitManifest, SynthConfig, TextGenerator,
    DISTILL_PROMPT, ITEM_PROFILE_PROMPT, USER_PROFILE_PROMPT,
};
use crate::error::{Error, Result};
use crate::eval::{
    align, report, score_set, Generated, NamedSplit, Report, ScoreRow, ScoredPair, ScorerPlugin, TokenOverlap,
};
use crate::graph_cf::{train_tokenizer, GnnCheckpoint, InteractionGraph, NodeEmbeddings, TrainingLog};
use crate::jsonl;
use crate::minilm::{
    build_prompt, generate, pretrain_lm, train_adapter, AdapterLog, Adapters, Example, ExplainModel,
    ExplainerCheckpoint, LmCheckpoint, MiniLm, PretrainLog, Profiles, PromptInstance, PromptTemplate, Vocabulary,
};
use crate::numerics::Rng;

/// Profiles and ground-truth explanations derived from a dataset.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corpus {
    pub item_profiles: BTreeMap<String, Profile>,
    pub user_profiles: BTreeMap<String, Profile>,
    /// Keyed by `(user_id, item_id)`.
    pub explanations: BTreeMap<(String, String), ExplanationRecord>,
    /// `(user_id, item_id, reason)` of reviews that could not be distilled.
    pub skipped: Vec<(String, String, String)>,
}

#[derive(Serialize, Deserialize)]
struct SkippedLine {
    user_id: String,
    item_id: String,
    reason: String,
}

/// Builds item profiles from train reviews, user profiles from the items a
/// user is known to have interacted with (train items, or every item for a
/// zero-shot user), and one distilled explanation per review.
pub fn build_corpus(
    dataset: &Dataset,
    manifest: &SplitManifest,
    config: &RunConfig,
    backend: &dyn TextGenerator,
) -> Result<Corpus> {
    let roles: BTreeMap<(&str, &str), EdgeRole> =
        manifest.edges.iter().map(|e| ((e.user_id.as_str(), e.item_id.as_str()), e.role)).collect();
    let mut train_reviews: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for r in &dataset.records {
        if roles.get(&(r.user_id.as_str(), r.item_id.as_str())) == Some(&EdgeRole::Train) && !r.review.trim().is_empty() {
            train_reviews.entry(r.item_id.as_str()).or_default().push(r.review.clone());
        }
    }
    let metadata = dataset.item_metadata();
    let mut corpus = Corpus::default();
    for item in &manifest.graph_index.items {
        let meta = metadata.get(item).cloned().unwrap_or_default();
        let reviews = train_reviews.get(item.as_str()).cloned().unwrap_or_default();
        let p = generate_item_profile(backend, item, &meta, &reviews, ITEM_PROFILE_PROMPT, &config.profiles)?;
        corpus.item_profiles.insert(item.clone(), p);
    }

    let mut known: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for e in &manifest.edges {
        if matches!(e.role, EdgeRole::Train | EdgeRole::ZeroShot) {
            known.entry(e.user_id.as_str()).or_default().push(e.item_id.as_str());
        }
    }
    for (user, items) in known {
        let profiles: Vec<(&str, &str)> = items
            .iter()
            .filter_map(|i| corpus.item_profiles.get(*i).map(|p| (*i, p.text.as_str())))
            .collect();
        let p = generate_user_profile(backend, user, &profiles, USER_PROFILE_PROMPT, &config.profiles)?;
        corpus.user_profiles.insert(user.to_string(), p);
    }

    let reviews: Vec<&str> = dataset.records.iter().map(|r| r.review.as_str()).collect();
    let out = distill_batch(backend, &reviews, DISTILL_PROMPT, &config.distill);
    for (k, text) in out.explanations {
        let r = &dataset.records[k];
        corpus.explanations.insert(
            (r.user_id.clone(), r.item_id.clone()),
            ExplanationRecord {
                user_id: r.user_id.clone(),
                item_id: r.item_id.clone(),
                text,
                provenance: backend.provenance(),
            },
        );
    }
    for s in out.skipped {
        let r = &dataset.records[s.index];
        corpus.skipped.push((r.user_id.clone(), r.item_id.clone(), s.reason));
    }
    Ok(corpus)
}

impl Corpus {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let items: Vec<&Profile> = self.item_profiles.values().collect();
        let users: Vec<&Profile> = self.user_profiles.values().collect();
        let expl: Vec<&ExplanationRecord> = self.explanations.values().collect();
        let skipped: Vec<SkippedLine> = self
            .skipped
            .iter()
            .map(|(u, i, r)| SkippedLine {
                user_id: u.clone(),
                item_id: i.clone(),
                reason: r.clone(),
            })
            .collect();
        jsonl::write(&dir.join("item_profiles.jsonl"), &items)?;
        jsonl::write(&dir.join("user_profiles.jsonl"), &users)?;
        jsonl::write(&dir.join("explanations.jsonl"), &expl)?;
        jsonl::write(&dir.join("skipped.jsonl"), &skipped)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let items: Vec<Profile> = jsonl::read(&dir.join("item_profiles.jsonl"))?;
        let users: Vec<Profile> = jsonl::read(&dir.join("user_profiles.jsonl"))?;
        let expl: Vec<ExplanationRecord> = jsonl::read(&dir.join("explanations.jsonl"))?;
        let skipped: Vec<SkippedLine> = jsonl::read(&dir.join("skipped.jsonl"))?;
        Ok(Self {
            item_profiles: items.into_iter().map(|p| (p.subject_id.clone(), p)).collect(),
            user_profiles: users.into_iter().map(|p| (p.subject_id.clone(), p)).collect(),
            explanations: expl
                .into_iter()
                .map(|e| ((e.user_id.clone(), e.item_id.clone()), e))
                .collect(),
            skipped: skipped.into_iter().map(|s| (s.user_id, s.item_id, s.reason)).collect(),
        })
    }

    pub fn explanation(&self, user: &str, item: &str) -> Option<&ExplanationRecord> {
        self.explanations.get(&(user.to_string(), item.to_string()))
    }

    /// Profiles and train explanations, the text a vocabulary is learnt from.
    pub fn training_texts<'a>(&'a self, manifest: &SplitManifest) -> Vec<&'a str> {
        let mut texts: Vec<&str> = Vec::new();
        texts.extend(self.item_profiles.values().map(|p| p.text.as_str()));
        texts.extend(self.user_profiles.values().map(|p| p.text.as_str()));
        for e in manifest.edges_with(EdgeRole::Train) {
            if let Some(x) = self.explanation(&e.user_id, &e.item_id) {
                texts.push(&x.text);
            }
        }
        texts
    }
}

/// Word pieces learnt from the training text of every given corpus.
pub fn build_vocabulary(parts: &[(&Corpus, &SplitManifest)], config: &RunConfig) -> Vocabulary {
    let texts: Vec<&str> = parts.iter().flat_map(|(c, m)| c.training_texts(m)).collect();
    Vocabulary::build(texts, config.vocab.min_count, config.vocab.max_pieces)
}

/// The separately synthesised dataset the language model is pretrained on
/// under [`PretrainSource::Synthetic`].
#[derive(Clone, Debug)]
pub struct PretrainWorld {
    pub dataset: Dataset,
    pub manifest: SplitManifest,
    pub corpus: Corpus,
}

impl PretrainWorld {
    pub fn build(config: &RunConfig, backend: &dyn TextGenerator) -> Result<Self> {
        let seed = Rng::derived(config.seed, 9).next_u64();
        let synth = SynthConfig {
            independent_moods: true,
            seed,
            ..config.synth.clone()
        };
        let split = SparsityConfig {
            zero_shot_fraction: 0.0,
            seed,
            ..config.split.clone()
        };
        let (dataset, _) = synthesize_dataset(&synth)?;
        let manifest = sparsity_split(&dataset, &split)?;
        let corpus = build_corpus(&dataset, &manifest, config, backend)?;
        Ok(Self {
            dataset,
            manifest,
            corpus,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.corpus.save(&dir.join("corpus"))?;
        self.dataset.save(&dir.join("dataset.jsonl"))?;
        self.manifest.save(&dir.join("manifest.json"))
    }
}

/// Builds the vocabulary, then pretrains and freezes the language model on
/// the configured source. Returns the pretraining world when one was used.
pub fn pretrain_language_model(
    corpus: &Corpus,
    manifest: &SplitManifest,
    config: &RunConfig,
    backend: &dyn TextGenerator,
) -> Result<(MiniLm, PretrainLog, Option<PretrainWorld>)> {
    let world = match config.pretrain_corpus.source {
        PretrainSource::Synthetic => Some(PretrainWorld::build(config, backend)?),
        PretrainSource::TrainEdges => None,
    };
    let mut parts = vec![(corpus, manifest)];
    if let Some(w) = &world {
        parts.push((&w.corpus, &w.manifest));
    }
    let vocab = build_vocabulary(&parts, config);
    let (c, m) = world.as_ref().map_or((corpus, manifest), |w| (&w.corpus, &w.manifest));
    let builder = PromptBuilder::new(&vocab, c, m);
    let (lm, log) = pretrain_stage(vocab.clone(), &builder, config)?;
    Ok((lm, log, world))
}

/// Everything needed to turn `(user, item)` into a prompt.
pub struct PromptBuilder<'a> {
    pub vocab: &'a Vocabulary,
    pub template: PromptTemplate,
    pub corpus: &'a Corpus,
    pub manifest: &'a SplitManifest,
}

impl<'a> PromptBuilder<'a> {
    pub fn new(vocab: &'a Vocabulary, corpus: &'a Corpus, manifest: &'a SplitManifest) -> Self {
        Self {
            vocab,
            template: PromptTemplate::default(),
            corpus,
            manifest,
        }
    }

    fn user_label(&self, user: &str) -> usize {
        let n = self.manifest.graph_index.users.len();
        self.manifest
            .graph_index
            .user(user)
            .or_else(|| self.manifest.zero_shot_users.iter().position(|z| z == user).map(|k| n + k))
            .unwrap_or(usize::MAX)
    }

    /// Prompt for the pair, optionally with profiles and target explanation.
    pub fn prompt(&self, user: &str, item: &str, with_profiles: bool, target: Option<&str>) -> Result<PromptInstance> {
        let item_label = self.manifest.graph_index.require_item(item)?;
        let profiles = if with_profiles {
            let u = self
                .corpus
                .user_profiles
                .get(user)
                .ok_or_else(|| Error::UnknownId(format!("no profile for user {user}")))?;
            let i = self
                .corpus
                .item_profiles
                .get(item)
                .ok_or_else(|| Error::UnknownId(format!("no profile for item {item}")))?;
            Some(Profiles {
                user: u.text.clone(),
                item: i.text.clone(),
            })
        } else {
            None
        };
        let p = build_prompt(self.vocab, &self.template, self.user_label(user), item_label, profiles.as_ref());
        Ok(match target {
            Some(t) => p.with_targets(self.vocab, t),
            None => p,
        })
    }

    /// Prompts with explanation targets for every edge of `role` that has a
    /// ground-truth explanation and fits in `max_context`.
    pub fn targets_for(&self, role: EdgeRole, with_profiles: bool, max_context: usize) -> Result<Vec<(String, String, PromptInstance)>> {
        let mut out = Vec::new();
        let mut too_long = 0;
        for e in self.manifest.edges_with(role) {
            let Some(x) = self.corpus.explanation(&e.user_id, &e.item_id) else {
                continue;
            };
            let p = self.prompt(&e.user_id, &e.item_id, with_profiles, Some(&x.text))?;
            if p.len() > max_context {
                too_long += 1;
                continue;
            }
            out.push((e.user_id.clone(), e.item_id.clone(), p));
        }
        if too_long > 0 {
            log::warn!("{too_long} {role:?} prompts exceed the context of {max_context} tokens and were left out");
        }
        Ok(out)
    }
}

/// Language model pretraining set: train pairs with profiles, plus the same
/// pairs without if configured. Held out: validation pairs with profiles.
pub fn pretraining_sets(builder: &PromptBuilder<'_>, config: &RunConfig) -> Result<(Vec<PromptInstance>, Vec<PromptInstance>)> {
    let ctx = config.lm.max_context;
    let mut train: Vec<PromptInstance> =
        builder.targets_for(EdgeRole::Train, true, ctx)?.into_iter().map(|t| t.2).collect();
    if config.pretrain_corpus.include_profile_free {
        train.extend(builder.targets_for(EdgeRole::Train, false, ctx)?.into_iter().map(|t| t.2));
    }
    let heldout = builder.targets_for(EdgeRole::Validation, true, ctx)?.into_iter().map(|t| t.2).collect();
    Ok((train, heldout))
}

pub fn pretrain_stage(vocab: Vocabulary, builder: &PromptBuilder<'_>, config: &RunConfig) -> Result<(MiniLm, PretrainLog)> {
    let (train, heldout) = pretraining_sets(builder, config)?;
    let mut rng = Rng::derived(config.seed, 8);
    let mut lm = MiniLm::new(config.lm.clone(), vocab, &mut rng)?;
    let log = pretrain_lm(&mut lm, &train, &heldout, &config.pretrain)?;
    Ok((lm, log))
}

/// Collaborative embeddings for users and items, including the zero-shot
/// rule for users outside the graph.
pub struct EmbeddingLookup<'a> {
    pub embeddings: &'a NodeEmbeddings,
    pub graph: &'a InteractionGraph,
    pub manifest: &'a SplitManifest,
    zero_shot_items: BTreeMap<String, Vec<usize>>,
    pub allow_zero_shot: bool,
}

impl<'a> EmbeddingLookup<'a> {
    pub fn new(
        embeddings: &'a NodeEmbeddings,
        graph: &'a InteractionGraph,
        manifest: &'a SplitManifest,
        allow_zero_shot: bool,
    ) -> Result<Self> {
        if embeddings.num_users() != graph.num_users() || embeddings.num_items() != graph.num_items() {
            return Err(Error::Shape(format!(
                "embeddings cover {} users / {} items, graph has {} / {}",
                embeddings.num_users(),
                embeddings.num_items(),
                graph.num_users(),
                graph.num_items()
            )));
        }
        let mut zero_shot_items = BTreeMap::new();
        for (u, items) in manifest.zero_shot_items() {
            let idx = items
                .iter()
                .map(|i| manifest.graph_index.require_item(i))
                .collect::<Result<Vec<_>>>()?;
            zero_shot_items.insert(u, idx);
        }
        Ok(Self {
            embeddings,
            graph,
            manifest,
            zero_shot_items,
            allow_zero_shot,
        })
    }

    pub fn is_zero_shot(&self, user: &str) -> bool {
        self.manifest.graph_index.user(user).is_none() && self.zero_shot_items.contains_key(user)
    }

    pub fn user(&self, user: &str) -> Result<Vec<f64>> {
        if let Some(u) = self.manifest.graph_index.user(user) {
            return Ok(self.embeddings.users.row(u).to_vec());
        }
        match self.zero_shot_items.get(user) {
            Some(items) if self.allow_zero_shot => zero_shot_user_embedding(self.embeddings, self.graph, items),
            Some(_) => Err(Error::UnknownId(format!("user {user} is unseen in training and zero-shot serving is off"))),
            None => Err(Error::UnknownId(format!("user {user}"))),
        }
    }

    pub fn item(&self, item: &str) -> Result<Vec<f64>> {
        let i = self.manifest.graph_index.require_item(item)?;
        Ok(self.embeddings.items.row(i).to_vec())
    }
}

/// Adapter examples for every edge of `role`.
pub fn adapter_examples(
    builder: &PromptBuilder<'_>,
    lookup: &EmbeddingLookup<'_>,
    role: EdgeRole,
    with_profiles: bool,
    max_context: usize,
) -> Result<Vec<Example>> {
    builder
        .targets_for(role, with_profiles, max_context)?
        .into_iter()
        .map(|(u, i, prompt)| {
            Ok(Example {
                prompt,
                user_embedding: lookup.user(&u)?,
                item_embedding: lookup.item(&i)?,
            })
        })
        .collect()
}

pub fn new_explainer(lm: MiniLm, gnn_dim: usize, config: &RunConfig) -> Result<ExplainModel> {
    let mut rng = Rng::derived(config.seed, 7);
    let adapters = Adapters::new(gnn_dim, lm.hidden(), &config.adapter, &mut rng);
    ExplainModel::new(lm, adapters, config.ablation.injection)
}

/// Trains the adapters of one ablation variant on train edges, holding out
/// validation edges.
pub fn adapter_stage(
    lm: MiniLm,
    gnn: &GnnCheckpoint,
    builder: &PromptBuilder<'_>,
    lookup: &EmbeddingLookup<'_>,
    config: &RunConfig,
) -> Result<(ExplainerCheckpoint, AdapterLog)> {
    let ctx = lm.config.max_context;
    let profiles = config.ablation.profiles;
    let train = adapter_examples(builder, lookup, EdgeRole::Train, profiles, ctx)?;
    let heldout = adapter_examples(builder, lookup, EdgeRole::Validation, profiles, ctx)?;
    let mut model = new_explainer(lm, gnn.dim, config)?;
    let log = train_adapter(&mut model, &gnn.final_embeddings, &train, &heldout, &config.adapter_train)?;
    Ok((ExplainerCheckpoint::new(model, gnn.content_hash.clone(), config.to_json()), log))
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PairKey {
    pub user_id: String,
    pub item_id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub user_id: String,
    pub item_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub zero_shot: bool,
    #[serde(default)]
    pub seed: u64,
}

/// Test and zero-shot pairs, sorted.
pub fn default_pairs(manifest: &SplitManifest) -> Vec<PairKey> {
    let mut out: Vec<PairKey> = manifest
        .edges
        .iter()
        .filter(|e| matches!(e.role, EdgeRole::Test | EdgeRole::ZeroShot))
        .map(|e| PairKey {
            user_id: e.user_id.clone(),
            item_id: e.item_id.clone(),
        })
        .collect();
    out.sort();
    out
}

/// One explanation per pair. Pairs that cannot be served get an error
/// entry instead of failing the batch.
pub fn generate_stage(
    model: &ExplainModel,
    builder: &PromptBuilder<'_>,
    lookup: &EmbeddingLookup<'_>,
    pairs: &[PairKey],
    config: &RunConfig,
) -> Vec<GenerationRecord> {
    pairs
        .iter()
        .map(|p| {
            let attempt = || -> Result<String> {
                let user = lookup.user(&p.user_id)?;
                let item = lookup.item(&p.item_id)?;
                let prompt = builder.prompt(&p.user_id, &p.item_id, config.ablation.profiles, None)?;
                generate(model, &prompt, &user, &item, &config.decode)
            };
            let (text, error) = match attempt() {
                Ok(t) => (Some(t), None),
                Err(e) => (None, Some(e.to_string())),
            };
            GenerationRecord {
                user_id: p.user_id.clone(),
                item_id: p.item_id.clone(),
                text,
                error,
                zero_shot: lookup.is_zero_shot(&p.user_id),
                seed: config.decode.seed,
            }
        })
        .collect()
}

/// Ground truth for the generated pairs, in the same order.
pub fn references_for(generations: &[GenerationRecord], corpus: &Corpus) -> Result<Vec<ExplanationRecord>> {
    generations
        .iter()
        .map(|g| {
            corpus
                .explanation(&g.user_id, &g.item_id)
                .cloned()
                .ok_or_else(|| Error::Data(format!("no ground-truth explanation for ({}, {})", g.user_id, g.item_id)))
        })
        .collect()
}

/// Sparsity bins followed by the zero-shot users.
pub fn evaluation_splits(manifest: &SplitManifest) -> Vec<NamedSplit> {
    let mut out: Vec<NamedSplit> = manifest
        .bin_names()
        .into_iter()
        .zip(&manifest.bins)
        .map(|(name, users)| NamedSplit {
            name,
            users: users.iter().cloned().collect(),
        })
        .collect();
    out.push(NamedSplit {
        name: "zero-shot".into(),
        users: manifest.zero_shot_users.iter().cloned().collect(),
    });
    out
}

/// Scores successful generations against their references with the token
/// overlap scorer and any configured external scorers. Failed generations
/// become failed rows.
pub fn evaluate_stage(
    generations: &[GenerationRecord],
    references: &[ExplanationRecord],
    splits: &[NamedSplit],
    config: &RunConfig,
) -> Result<(Report, Vec<ScoreRow>)> {
    let as_records: Vec<ExplanationRecord> = generations
        .iter()
        .map(|g| ExplanationRecord {
            user_id: g.user_id.clone(),
            item_id: g.item_id.clone(),
            text: g.text.clone().unwrap_or_default(),
            provenance: crate::corpus::Provenance::Template,
        })
        .collect();
    let aligned = align(&as_records, references)?;
    let by_key: BTreeMap<(&str, &str), &GenerationRecord> =
        generations.iter().map(|g| ((g.user_id.as_str(), g.item_id.as_str()), g)).collect();

    let mut plugins: Vec<Box<dyn ScorerPlugin>> = vec![Box::new(TokenOverlap)];
    for s in &config.eval.external_scorers {
        plugins.push(Box::new(s.clone()));
    }
    let ok: Vec<ScoredPair<'_>> = aligned
        .iter()
        .filter(|(g, _)| by_key[&(g.user_id.as_str(), g.item_id.as_str())].text.is_some())
        .map(|(g, r)| ScoredPair {
            user_id: &g.user_id,
            item_id: &g.item_id,
            reference: &r.text,
            candidate: &g.text,
        })
        .collect();
    let mut rows = Vec::new();
    for plugin in &plugins {
        let (mut r, _) = score_set(plugin.as_ref(), &ok);
        rows.append(&mut r);
        for g in generations.iter().filter(|g| g.text.is_none()) {
            rows.push(ScoreRow {
                user_id: g.user_id.clone(),
                item_id: g.item_id.clone(),
                scorer: plugin.name().to_string(),
                score: None,
                error: g.error.clone(),
            });
        }
    }
    let generated: Vec<Generated<'_>> = generations
        .iter()
        .filter_map(|g| {
            g.text.as_deref().map(|text| Generated {
                user_id: &g.user_id,
                item_id: &g.item_id,
                text,
            })
        })
        .collect();
    let rep = report(&rows, &generated, splits, config.eval.granularity)?;
    Ok((rep, rows))
}

/// Paths of a work directory.
#[derive(Clone, Debug)]
pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn dir(&self, stage: &str) -> PathBuf {
        self.root.join(stage)
    }

    pub fn dataset_path(&self, config: &RunConfig) -> PathBuf {
        config.dataset.clone().unwrap_or_else(|| self.dir("synth").join("dataset.jsonl"))
    }

    fn stage_dir(&self, stage: &str, config: &RunConfig) -> Result<PathBuf> {
        let dir = self.dir(stage);
        config.persist(&dir)?;
        Ok(dir)
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn run_synth(ws: &Workspace, config: &RunConfig) -> Result<PathBuf> {
    let dir = ws.stage_dir("synth", config)?;
    let (dataset, planted) = synthesize_dataset(&config.synth)?;
    let path = dir.join("dataset.jsonl");
    dataset.save(&path)?;
    write(&dir.join("planted.json"), &serde_json::to_string_pretty(&planted)?)?;
    Ok(path)
}

fn load_data(ws: &Workspace, config: &RunConfig) -> Result<Dataset> {
    let path = ws.dataset_path(config);
    if !path.exists() {
        return Err(Error::Data(format!("dataset {} does not exist", path.display())));
    }
    load_dataset(&path)
}

pub fn run_split(ws: &Workspace, config: &RunConfig) -> Result<SplitManifest> {
    let dataset = load_data(ws, config)?;
    let manifest = sparsity_split(&dataset, &config.split)?;
    let dir = ws.stage_dir("split", config)?;
    manifest.save(&dir.join("manifest.json"))?;
    Ok(manifest)
}

fn load_manifest(ws: &Workspace) -> Result<SplitManifest> {
    SplitManifest::load(&ws.dir("split").join("manifest.json"))
}

pub fn run_train_gnn(ws: &Workspace, config: &RunConfig) -> Result<(GnnCheckpoint, TrainingLog)> {
    let manifest = load_manifest(ws)?;
    let graph = manifest.graph()?;
    let trained = train_tokenizer(&graph, &config.gnn)?;
    let ckpt = GnnCheckpoint::from_trained(&trained);
    let dir = ws.stage_dir("gnn", config)?;
    ckpt.save(&dir.join("checkpoint.json"))?;
    write(&dir.join("train_log.jsonl"), &trained.log.to_jsonl())?;
    Ok((ckpt, trained.log))
}

fn load_or_build_corpus(ws: &Workspace, manifest: &SplitManifest, config: &RunConfig) -> Result<Corpus> {
    let dir = ws.dir("corpus");
    if dir.join("explanations.jsonl").exists() {
        return Corpus::load(&dir);
    }
    let dataset = load_data(ws, config)?;
    let backend = config.backend.build();
    let corpus = build_corpus(&dataset, manifest, config, backend.as_ref())?;
    let dir = ws.stage_dir("corpus", config)?;
    corpus.save(&dir)?;
    Ok(corpus)
}

/// Builds (or reuses) the corpus, then pretrains and freezes the model.
pub fn run_pretrain_lm(ws: &Workspace, config: &RunConfig) -> Result<(LmCheckpoint, PretrainLog)> {
    let manifest = load_manifest(ws)?;
    let corpus = load_or_build_corpus(ws, &manifest, config)?;
    let backend = config.backend.build();
    let (lm, log, world) = pretrain_language_model(&corpus, &manifest, config, backend.as_ref())?;
    let ckpt = LmCheckpoint::new(lm);
    let dir = ws.stage_dir("lm", config)?;
    if let Some(w) = world {
        w.save(&dir.join("world"))?;
    }
    ckpt.save(&dir.join("checkpoint.json"))?;
    write(&dir.join("pretrain_log.jsonl"), &jsonl::to_string(&log.steps))?;
    write(
        &dir.join("heldout.json"),
        &serde_json::to_string(&serde_json::json!({"before": log.heldout_before, "after": log.heldout_after}))?,
    )?;
    Ok((ckpt, log))
}

fn load_gnn(ws: &Workspace) -> Result<GnnCheckpoint> {
    GnnCheckpoint::load(&ws.dir("gnn").join("checkpoint.json"))
}

pub fn run_train_adapter(ws: &Workspace, config: &RunConfig) -> Result<(ExplainerCheckpoint, AdapterLog)> {
    let manifest = load_manifest(ws)?;
    let corpus = Corpus::load(&ws.dir("corpus"))?;
    let gnn = load_gnn(ws)?;
    let lm = LmCheckpoint::load(&ws.dir("lm").join("checkpoint.json"))?.model;
    if !lm.frozen {
        return Err(Error::Checkpoint("language model checkpoint is not frozen".into()));
    }
    let graph = manifest.graph()?;
    let lookup = EmbeddingLookup::new(&gnn.final_embeddings, &graph, &manifest, config.zero_shot)?;
    let vocab = lm.vocab.clone();
    let builder = PromptBuilder::new(&vocab, &corpus, &manifest);
    let (ckpt, log) = adapter_stage(lm, &gnn, &builder, &lookup, config)?;
    let dir = ws.stage_dir(&format!("explainer{}", config.ablation.suffix()), config)?;
    ckpt.save(&dir.join("checkpoint.json"))?;
    write(&dir.join("adapter_log.jsonl"), &log.to_jsonl())?;
    let mut summary = serde_json::to_value(&log)?;
    summary.as_object_mut().expect("log is an object").remove("steps");
    write(&dir.join("summary.json"), &serde_json::to_string_pretty(&summary)?)?;
    Ok((ckpt, log))
}

pub fn run_generate(ws: &Workspace, config: &RunConfig, pairs_file: Option<&Path>) -> Result<Vec<GenerationRecord>> {
    let manifest = load_manifest(ws)?;
    let corpus = Corpus::load(&ws.dir("corpus"))?;
    let gnn = load_gnn(ws)?;
    let suffix = config.ablation.suffix();
    let ckpt = ExplainerCheckpoint::load(&ws.dir(&format!("explainer{suffix}")).join("checkpoint.json"))?;
    if ckpt.gnn_hash != gnn.content_hash {
        return Err(Error::Checkpoint("explainer was trained against a different graph checkpoint".into()));
    }
    let pairs = match pairs_file {
        Some(p) => jsonl::read(p)?,
        None => default_pairs(&manifest),
    };
    let graph = manifest.graph()?;
    let lookup = EmbeddingLookup::new(&gnn.final_embeddings, &graph, &manifest, config.zero_shot)?;
    let builder = PromptBuilder::new(&ckpt.model.lm.vocab, &corpus, &manifest);
    let generations = generate_stage(&ckpt.model, &builder, &lookup, &pairs, config);
    let references: Vec<ExplanationRecord> = generations
        .iter()
        .filter_map(|g| corpus.explanation(&g.user_id, &g.item_id).cloned())
        .collect();
    let dir = ws.stage_dir(&format!("generate{suffix}"), config)?;
    jsonl::write(&dir.join("explanations.jsonl"), &generations)?;
    jsonl::write(&dir.join("references.jsonl"), &references)?;
    Ok(generations)
}

pub fn run_evaluate(
    ws: &Workspace,
    config: &RunConfig,
    explanations: Option<&Path>,
    references: Option<&Path>,
) -> Result<Report> {
    let suffix = config.ablation.suffix();
    let gen_dir = ws.dir(&format!("generate{suffix}"));
    let generations: Vec<GenerationRecord> =
        jsonl::read(&explanations.map_or_else(|| gen_dir.join("explanations.jsonl"), Path::to_path_buf))?;
    let refs: Vec<ExplanationRecord> =
        jsonl::read(&references.map_or_else(|| gen_dir.join("references.jsonl"), Path::to_path_buf))?;
    let manifest = load_manifest(ws)?;
    let splits = evaluation_splits(&manifest);
    let (rep, rows) = evaluate_stage(&generations, &refs, &splits, config)?;
    let dir = ws.stage_dir(&format!("evaluate{suffix}"), config)?;
    write(&dir.join("report.txt"), &rep.render())?;
    write(&dir.join("report.jsonl"), &rep.to_jsonl())?;
    jsonl::write(&dir.join("scores.jsonl"), &rows)?;
    Ok(rep)
}

/// Users appearing in more than one of `splits`, which should be none.
pub fn overlapping_users(splits: &[NamedSplit]) -> BTreeSet<String> {
    let mut seen = BTreeSet::new();
    let mut dup = BTreeSet::new();
    for s in splits {
        for u in &s.users {
            if !seen.insert(u.clone()) {
                dup.insert(u.clone());
            }
        }
    }
    dup
}
