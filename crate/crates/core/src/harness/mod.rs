//! Manifests, seeded splits, experiments, ensembles and the synthetic corpus.

pub mod config;
pub mod experiment;
pub mod manifest;
pub mod split;
pub mod synth;

pub use config::{Combiner, RunConfig};
pub use experiment::{
    combine_predictions, ensemble_on, ensemble_predict, extract_dataset, load_bundle, predict, predict_inputs,
    predictions_csv, read_predictions, run_experiment, run_experiment_on, run_split, train_subset,
    write_predictions, Dataset, EnsembleResult, ExperimentReport, SplitRow,
};
pub use manifest::{DatasetManifest, Record};
pub use split::{derive_seed, split, Grouping, SplitPlan};
pub use synth::{make_synthetic_corpus, DistortionKind, Levels, SynthOptions};
