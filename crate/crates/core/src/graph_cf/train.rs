use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph_cf::{
    joint_objective, recall_at_k, sample_negative, BprBatch, BprTriple, EmbeddingTable,
    InteractionGraph, NodeEmbeddings, Split,
};
use crate::numerics::{Adam, AdamConfig, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenizerConfig {
    pub dim: usize,
    pub num_layers: usize,
    pub batch_size: usize,
    pub lambda: f64,
    pub lr: f64,
    pub patience: usize,
    pub eval_k: usize,
    pub max_epochs: usize,
    pub init_std: f64,
    pub seed: u64,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            num_layers: 3,
            batch_size: 1024,
            lambda: 1e-4,
            lr: 1e-3,
            patience: 10,
            eval_k: 20,
            max_epochs: 200,
            init_std: 0.1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-triple `L_BPR + L_reg` over the epoch.
    pub loss: f64,
    pub recall: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_recall: f64,
    pub stopped_early: bool,
}

impl TrainingLog {
    /// One JSON object per epoch.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e).expect("epoch record serialises"));
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct TrainedTokenizer {
    /// Layer-0 parameters of the best validation epoch.
    pub table: EmbeddingTable,
    pub final_embeddings: NodeEmbeddings,
    pub log: TrainingLog,
    pub rng_state: u64,
    pub epochs_run: usize,
}

/// Seeded `Normal(0, init_std^2)` layer-0 table used as the starting point.
pub fn initial_table(graph: &InteractionGraph, config: &TokenizerConfig) -> EmbeddingTable {
    let mut init_rng = Rng::derived(config.seed, 1);
    EmbeddingTable::new_random(
        graph.num_users(),
        graph.num_items(),
        config.dim,
        config.num_layers,
        config.init_std,
        &mut init_rng,
    )
}

/// Minimises `L_BPR + L_reg` with Adam, evaluating validation Recall@K
/// after every epoch and stopping after `patience` epochs without
/// improvement. Returns the best checkpoint.
pub fn train_tokenizer(graph: &InteractionGraph, config: &TokenizerConfig) -> Result<TrainedTokenizer> {
    if graph.num_edges_in(Split::Validation) == 0 {
        return Err(Error::Data("tokenizer training needs a nonempty validation split".into()));
    }
    if config.batch_size == 0 || config.dim == 0 {
        return Err(Error::InvalidArgument("batch size and dimension must be positive".into()));
    }
    let mut table = initial_table(graph, config);
    let mut rng = Rng::derived(config.seed, 2);
    let mut adam = Adam::new(AdamConfig::with_lr(config.lr));
    let train: Vec<(usize, usize)> = graph.edges_in(Split::Train).map(|e| (e.user, e.item)).collect();

    let mut log = TrainingLog::default();
    let mut best: Option<(EmbeddingTable, NodeEmbeddings)> = None;
    let mut since_best = 0;
    let mut epochs_run = 0;

    for epoch in 1..=config.max_epochs {
        let mut order = train.clone();
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let mut triples = Vec::with_capacity(chunk.len());
            for &(user, positive) in chunk {
                let negative = sample_negative(graph, user, &mut rng)?;
                triples.push(BprTriple { user, positive, negative });
            }
            let batch = BprBatch::new(graph, triples)?;
            let obj = joint_objective(graph, &table, &batch, config.lambda)?;
            let loss = obj.total();
            if !loss.is_finite() || !obj.grad_layer0.is_finite() {
                return Err(Error::Divergence {
                    stage: "tokenizer training",
                    epoch,
                    step,
                });
            }
            epoch_loss += loss;
            let NodeEmbeddings { users, items } = &mut table.layer0;
            adam.step(
                &mut [users.as_mut_slice(), items.as_mut_slice()],
                &[obj.grad_layer0.users.as_slice(), obj.grad_layer0.items.as_slice()],
            );
        }
        epochs_run = epoch;
        let fin = table.final_embeddings(graph)?;
        let recall = recall_at_k(&fin, graph, Split::Validation, config.eval_k)?.mean;
        log.epochs.push(EpochRecord {
            epoch,
            loss: epoch_loss / train.len() as f64,
            recall,
        });
        if best.is_none() || recall > log.best_recall {
            log.best_recall = recall;
            log.best_epoch = epoch;
            best = Some((table.clone(), fin));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                log.stopped_early = true;
                break;
            }
        }
    }

    let (table, final_embeddings) = match best {
        Some(b) => b,
        None => {
            let fin = table.final_embeddings(graph)?;
            (table, fin)
        }
    };
    Ok(TrainedTokenizer {
        table,
        final_embeddings,
        log,
        rng_state: rng.state(),
        epochs_run,
    })
}
