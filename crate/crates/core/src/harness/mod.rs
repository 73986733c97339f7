//! Phantom corpora, experiment configuration and the run/ablation drivers.

pub mod config;
pub mod experiment;
pub mod phantom;

pub use config::{CorpusConfig, ExperimentConfig, OutputConfig, ScheduleConfig};
pub use experiment::{
    run_ablation, run_experiment, AblationOutcome, AblationRow, ExperimentOutcome,
};
pub use phantom::{generate_corpus, generate_phantom, Ellipse, PhantomSpec};
