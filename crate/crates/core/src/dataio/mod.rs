//! File formats: manifests, prediction dumps, pseudo-label files, frequency
//! tables, run configuration and dataset statistics.

mod config;
mod freq;
mod import;
mod manifest;
mod records;
mod samples;
mod stats;

pub use config::{PathOptions, RunConfig, TrainOptions};
pub use freq::{CategoryFrequencyTable, FrequencyEntry, FREQ_FORMAT, RARE_BELOW};
pub use import::{import_hoi_json, ImportSummary};
pub use manifest::{
    AnnotationEntry, DatasetManifest, ImageEntry, Provenance, MANIFEST_FORMAT, MANIFEST_VERSION,
};
pub use records::{
    load_pseudo_labels, save_pseudo_labels, PredictionDump, PseudoLabelRecord, PREDICTIONS_FORMAT,
    PSEUDO_LABELS_FORMAT,
};
pub use samples::{load_real_samples, load_virtual_items};
pub use stats::{stats, CategoryStats, HistogramBin, StatsReport};
