//! Scalar objectives: cross-entropy, sliced Wasserstein alignment and the
//! supervised contrastive loss.

mod cross_entropy;
mod objective;
mod projections;
mod supcon;
mod swd;

pub use cross_entropy::{cross_entropy, cross_entropy_with, Reduction};
pub use objective::{transfer_objective, TermBreakdown, TransferBatch, TransferLoss, TransferWeights};
pub use projections::{sample_projections, ProjectionSet};
pub use supcon::{supcon_loss, SupConConfig};
pub use swd::{class_conditional_swd, equalize_counts, swd_distance, SwdConfig};
