//! Data plane of the SaTQA workspace: parameterized distortion families,
//! synthetic corpus generation with JSON-lines manifests, quality-dataset
//! loading, reference-disjoint splitting and the crop/flip patch pipeline.

pub mod corpus;
pub mod dataset;
pub mod distortion;
pub mod error;
pub mod patches;
pub mod refgen;

pub use corpus::{build_synthetic_corpus, CorpusManifest, ManifestHeader, ManifestRecord};
pub use dataset::{load_dataset, split_by_reference, DatasetKind, IqaSample, SplitSpec};
pub use distortion::{
    apply_distortion, category_index, default_family_bank, psnr, DistortionLabel, DistortionSpec,
};
pub use error::DataError;
pub use patches::{sample_patches, scl_augment_view, Patch, PatchBatch};
