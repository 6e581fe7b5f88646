//! Synthetic paired-modality data, the tensor container format,
//! augmentation and batch construction.

mod augment;
mod batches;
pub mod container;
mod dataset;
mod fewshot;
mod synthetic;

pub use augment::{augment, hflip, rotate90, translate, AugmentOp, AugmentPolicy};
pub use batches::{make_multiviewed_batch, shuffled_batches, ClassPairedSampler, MultiviewedBatch};
pub use container::{read_container, write_container, Entry, TensorData};
pub use dataset::{read_dataset_dir, write_dataset_dir, Dataset, DatasetManifest, Modality, Split};
pub use fewshot::{subsample_labeled, BudgetSize, FewShotBudget, FewShotSplit};
pub use synthetic::{generate_synthetic, stratified_indices, stratified_split, SyntheticSpec, Splits};
