//! Experiment orchestration: configuration, seeded frame generation and
//! datasets, sweeps, the convergence comparison, the fading experiment and
//! the command line.

pub mod cli;
pub mod config;
pub mod data;
pub mod experiments;

pub use config::{ExperimentConfig, FeatureMode};
pub use data::{generate_dataset, load_dataset, Dataset, FrameTruth, Manifest, Split};
pub use experiments::{
    compare_convergence, run_awgn_study, run_fading_experiment, run_sweep, AwgnStudy, ConvergenceRow, FadingStudy,
    SweepResult, SweepRow,
};
