//! Label taxonomies, dataset manifests, sample loading, augmentation and the
//! merged-task label transform.

pub mod augment;
pub mod catalog;
pub mod labels;
pub mod manifest;
pub mod sample;
pub mod stats;
pub mod synthetic;

pub use augment::{augment, AugmentationConfig};
pub use catalog::ClassCatalog;
pub use labels::{merge_labels, split_merged};
pub use manifest::{load_manifest, DatasetManifest, ManifestEntry, Split};
pub use sample::{load_sample, load_split, write_sample, Sample};
pub use stats::{compute_split_stats, SplitStats, SplitSummary};
