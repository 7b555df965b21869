//! Orchestration: configuration, dataset ingestion, synthetic data and the
//! end-to-end scenario driver.

pub mod config;
pub mod dataset;
pub mod run;
pub mod synth;

pub use config::{Profile, Scenario, ScenarioConfig};
pub use dataset::{ingest, Dataset, DatasetManifest, Split};
pub use run::{augmented_samples, compare_scenarios, prepare_input, run_scenario, segment, stage_plan, RunOutcome, Stage};
pub use synth::{generate_samples, synth_dataset, SynthOptions, SynthSample};
