//! Command implementations behind the `metadg` binary: data generation,
//! training, evaluation, leave-one-domain-out experiments, gradient checks
//! and embedding export.

mod config;
mod data;
mod gradcheck;
mod loo;
mod run;

pub use config::{apply_override, DataConfig, Mode, RunConfig, RunSection};
pub use data::{build_split, cmd_generate_data, domain_file_name, read_domains, resolve_files, Manifest, Split, MANIFEST};
pub use gradcheck::{cmd_gradcheck, format_report, run_gradcheck, TermReport, TERMS, TOLERANCE};
pub use loo::{cmd_loo, fold_seed, run_fold, run_loo, summarize, variants, write_loo_tables, FoldResult, Variant, VariantSummary};
pub use run::{
    cmd_dump_embeddings, cmd_eval, cmd_train, eval_header, eval_row, load_model, trainer_checkpoint, TrainOutcome,
    CONFIG_ECHO, EVAL_CSV, FINAL_CHECKPOINT, LAST_CHECKPOINT, METRICS_CSV,
};
