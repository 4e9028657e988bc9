//! Dataset ingestion, normalisation, windowing, splitting and corruption.

pub mod corrupt;
pub mod dataset;
pub mod normalize;
pub mod synth;
pub mod window;

pub use corrupt::{corrupt_missing, density_bins, node_density, CorruptionMask, DensityClass};
pub use dataset::{
    load_dataset, parse_timestamp, read_meta, write_dataset, Dataset, DatasetKind, DatasetMeta,
    DatasetSpec, SplitRule, TimeIndex,
};
pub use normalize::NormalizationStats;
pub use synth::{CrimeSynth, SynthDataset, TrafficSynth};
pub use window::{make_windows, split_dataset, split_windows, Split, SplitPart, Windows};
