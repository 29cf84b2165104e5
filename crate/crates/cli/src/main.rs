use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use metadg::autodiff::OpKind;
use metadg::harness::{
    cmd_dump_embeddings, cmd_eval, cmd_generate_data, cmd_gradcheck, cmd_loo, cmd_train, format_report, RunConfig,
};
use metadg::par::Exec;
use metadg::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "metadg", version, about = "Meta-learned domain generalization for text classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training seed (corpus seed for generate-data).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (data directory for generate-data).
    #[arg(long)]
    out: Option<PathBuf>,
    /// `section.key=value`, applied after the file; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the synthetic corpus as one JSONL file per domain plus a manifest.
    GenerateData {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model; writes metrics, evaluations and checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from `last.ckpt` in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a checkpoint on every configured domain.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Leave-one-domain-out experiment with optional baselines.
    Loo {
        #[command(flatten)]
        common: Common,
    },
    /// Finite-difference check of every loss gradient.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Seeds to check, comma separated.
        #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2, 3, 4])]
        seeds: Vec<u64>,
        /// Corrupt one backward rule, e.g. `tanh`, to confirm detection.
        #[arg(long)]
        inject_fault: Option<String>,
    },
    /// Export query-encoder features as TSV.
    DumpEmbeddings {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out_file: PathBuf,
        /// Take at most this many examples from each domain.
        #[arg(long)]
        per_domain: Option<usize>,
    },
}

fn load(common: &Common, data_cmd: bool) -> Result<RunConfig> {
    let mut overrides = Vec::new();
    if let Some(s) = common.seed {
        overrides.push(if data_cmd { format!("data.corpus_seed={s}") } else { format!("train.seed={s}") });
    }
    if let Some(o) = &common.out {
        let key = if data_cmd { "data.dir" } else { "run.out_dir" };
        overrides.push(format!("{key}=\"{}\"", o.display()));
    }
    overrides.extend(common.overrides.iter().cloned());
    RunConfig::load(common.config.as_deref(), &overrides)
}

fn exec_of(cfg: &RunConfig) -> Exec {
    if cfg.run.parallel {
        Exec::Parallel
    } else {
        Exec::Sequential
    }
}

fn parse_fault(name: &str) -> Result<OpKind> {
    serde_json::from_value(serde_json::Value::String(name.to_string()))
        .map_err(|_| Error::Config(format!("unknown op `{name}` for --inject-fault")))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenerateData { common } => {
            let cfg = load(&common, true)?;
            let m = cmd_generate_data(&cfg)?;
            println!("wrote {} domains ({:?} records) to {}", m.files.len(), m.counts, cfg.data.dir.display());
        }
        Command::Train { common, resume } => {
            let cfg = load(&common, false)?;
            let out = cmd_train(&cfg, resume, exec_of(&cfg))?;
            if let Some((epoch, m)) = out.evals.last() {
                println!("epoch {epoch}: accuracy {:.4}, macro-F1 {:.4}", m.accuracy, m.macro_f1);
            }
            println!("checkpoint {}", out.checkpoint.display());
        }
        Command::Eval { common, checkpoint } => {
            let cfg = load(&common, false)?;
            for (d, m) in cmd_eval(&cfg, &checkpoint, exec_of(&cfg))? {
                println!("domain {d}: accuracy {:.4}, macro-F1 {:.4}", m.accuracy, m.macro_f1);
            }
        }
        Command::Loo { common } => {
            let cfg = load(&common, false)?;
            for s in cmd_loo(&cfg)? {
                println!(
                    "{}: runs {}, accuracy {:.4}, macro-F1 {:.4}",
                    s.variant, s.runs, s.mean_accuracy, s.mean_macro_f1
                );
            }
        }
        Command::Gradcheck {
            common,
            seeds,
            inject_fault,
        } => {
            let cfg = load(&common, false)?;
            let fault = inject_fault.as_deref().map(parse_fault).transpose()?;
            let reports = cmd_gradcheck(&seeds, fault, &cfg.run.out_dir)?;
            print!("{}", format_report(&reports));
        }
        Command::DumpEmbeddings {
            common,
            checkpoint,
            out_file,
            per_domain,
        } => {
            let cfg = load(&common, false)?;
            let rows = cmd_dump_embeddings(&cfg, &checkpoint, &out_file, per_domain)?;
            println!("wrote {rows} rows to {}", out_file.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
