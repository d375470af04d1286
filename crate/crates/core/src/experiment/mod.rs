//! Training, evaluation and the multi-run workflows built on them.

mod analysis;
mod config;
mod gradcheck;
mod runs;
mod train;

pub use analysis::{emit_analysis, AnalysisBundle, CyclomaticSummary};
pub use config::ExperimentConfig;
pub use gradcheck::{gradcheck, gradcheck_full_width, random_batch, GradcheckSummary, RandomBatch, Term, TermReport};
pub use runs::{
    ablate, ablation_csv, run_transfer_matrix, sweep, transfer_tasks, write_csv, AblationRow, Sweep, SweepRow,
    TransferCell, TransferMatrix,
};
pub use train::{
    accuracy, evaluate, mean_std, record_objective, train, train_seed, write_run, BatchPlan, Corpus, EpochLosses,
    ObjectiveSettings, ObjectiveVars, RunResult, SeedRun,
};
