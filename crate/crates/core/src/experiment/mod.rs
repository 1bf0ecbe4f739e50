//! Experiment configuration, training, inference, oracle runs and sweeps.

pub mod config;
pub mod optim;
pub mod run;
pub mod train;

pub use config::{desk_loss, desk_model, ExperimentConfig};
pub use run::{compare_retrieval, infer, oracle_predictions, run_pipeline, sweep, sweep_csv, RunOutcome, SweepParam};
pub use train::{effective_bank, full_bank, train, Dataset, LossLog, StepLog, Video};
