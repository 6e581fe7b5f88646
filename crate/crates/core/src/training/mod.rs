//! Source pretraining, few-shot transfer, the baselines, evaluation and
//! seed sweeps.

mod config;
mod eval;
mod experiment;
mod loops;
mod metrics;
mod optimizer;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{OptimizerKind, TrainConfig};
pub use eval::{evaluate, logits, predict, pseudo_labels, score_predictions, Evaluation};
pub use experiment::{
    aggregate, mean_and_se, run_experiment, run_seed_sweep, Aggregate, ExperimentConfig, ExperimentData, MethodResult,
    SeedResult, SweepOptions, SweepReport,
};
pub use loops::{
    baseline_finetune, baseline_target_only, pretrain_source, train_transfer, BatchCycler, Method, TargetData,
    TrainOutcome,
};
pub use metrics::{MetricsRecord, TermWeights};
pub use optimizer::Optimizer;

/// Independent random streams derived from one run seed.
pub mod streams {
    pub const PRETRAIN_BATCHES: u64 = 1;
    pub const PRETRAIN_AUGMENT: u64 = 2;
    pub const SOURCE_BATCHES: u64 = 3;
    pub const TARGET_BATCHES: u64 = 4;
    pub const UNLABELED_BATCHES: u64 = 5;
    pub const PAIRING: u64 = 6;
    pub const PROJECTIONS: u64 = 7;
    pub const BUDGET: u64 = 8;
}

/// ChaCha8 seeded with `seed`, on stream `stream`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives a per-step seed (splitmix64 finalizer over the combined words).
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
