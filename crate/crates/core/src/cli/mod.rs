//! Experiment recipes behind the `slack` binary: a TOML experiment config
//! and one function per subcommand.
//!
//! Every artifact starts with a `# seed=.. config=..` line. Checkpoints live
//! under `paths.checkpoints` with fixed names, and each training stage
//! refuses to start without its predecessor's checkpoint.

mod commands;
mod config;

pub use commands::{
    attack, demo, eval_metrics, eval_slam, list_sequences, quality_models, report, synth, train_ae, train_attack, train_mmd,
    train_pretext, AttackSummary, Context, DemoSummary, Split, SynthArgs, AE_CKPT, AE_PD_CKPT, AE_TARGET_CKPT, ATTACK_CKPT,
    ATTACK_TARGET_CKPT, DSR_CKPT, LQI_CKPT, METRICS_CSV, METRICS_HEADER, PD_CKPT, REPORT_CSV,
};
pub use config::{EvalConfig, ExperimentConfig, Paths, QualityConfig, SynthConfig};

use crate::Error;

/// Process exit status for a failed command.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::MissingDependency { .. } => 3,
        Error::Divergence { .. } => 4,
        Error::BudgetParity { .. } => 5,
        Error::Io(_) => 1,
        _ => 2,
    }
}
