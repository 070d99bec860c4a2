pub mod backend;
pub mod dataset;
pub mod distill;
pub mod profiles;
pub mod split;
pub mod synth;

pub use backend::{
    keywords, BackendConfig, BackendKind, ExternalBackend, ExternalConfig, GenInput, GenRequest, Provenance,
    TemplateBackend, TextGenerator,
};
pub use dataset::{load_dataset, Dataset, DatasetRecord, DatasetStats, IdIndex};
pub use distill::{distill_batch, distill_explanation, DistillConfig, DistillOutcome, ExplanationRecord, Skipped, DISTILL_PROMPT};
pub use profiles::{
    fill_prompt, generate_item_profile, generate_user_profile, sampled_items, Profile, ProfileConfig, Subject,
    ITEM_PROFILE_PROMPT, USER_PROFILE_PROMPT,
};
pub use split::{
    frequency_bins, sparsity_split, zero_shot_user_embedding, EdgeRole, ManifestEdge, SparsityConfig, SplitManifest,
};
pub use synth::{synthesize_dataset, synthetic_review, PlantedStructure, SynthConfig};
