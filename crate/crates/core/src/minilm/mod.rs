pub mod checkpoint;
pub mod explain;
pub mod generate;
pub mod loss;
pub mod model;
pub mod prompt;
pub mod train;
pub mod vocab;

pub use checkpoint::{ExplainerCheckpoint, LmCheckpoint};
pub use explain::{Adapters, Example, ExplainModel};
pub use generate::{generate, DecodeConfig, DecodeMode};
pub use loss::{batch_nll, nll_loss, sequence_nll};
pub use model::{ForwardCache, Injection, LayerParams, LmBackward, LmConfig, LmParams, MiniLm};
pub use prompt::{build_prompt, Profiles, PromptInstance, PromptTemplate, DEFAULT_TEMPLATE};
pub use train::{
    explanation_nll, pretrain_lm, prompt_nll, train_adapter, AdapterLog, AdapterTrainConfig, PretrainConfig,
    PretrainLog, StepRecord,
};
pub use vocab::Vocabulary;
