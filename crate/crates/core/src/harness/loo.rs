use std::fmt::Write as _;
use std::fs;

use crate::engine::{evaluate, EvalMetrics, TrainConfig, Trainer};
use crate::error::{Error, Result};
use crate::par::{self, Exec};
use crate::text::Record;

use super::config::RunConfig;
use super::data::{build_split, ensure_dir, read_domains};

/// A named training configuration compared across folds.
#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    pub name: String,
    pub config: TrainConfig,
}

/// The configured model, plus the ERM and meta-only baselines if requested.
pub fn variants(cfg: &RunConfig) -> Vec<Variant> {
    let mut v = vec![Variant {
        name: "main".into(),
        config: cfg.train.clone(),
    }];
    if cfg.run.compare_meta_only {
        v.push(Variant {
            name: "meta_only".into(),
            config: TrainConfig {
                use_meta: true,
                use_memory: false,
                use_jury: false,
                ..cfg.train.clone()
            },
        });
    }
    if cfg.run.compare_erm {
        v.push(Variant {
            name: "erm".into(),
            config: cfg.train.clone().erm(),
        });
    }
    v
}

/// Seed of a fold: `base + fold + 1000·repeat`.
pub fn fold_seed(base: u64, fold: usize, repeat: usize) -> u64 {
    base + fold as u64 + 1000 * repeat as u64
}

#[derive(Clone, Debug, PartialEq)]
pub struct FoldResult {
    pub variant: String,
    pub fold: usize,
    pub repeat: usize,
    pub seed: u64,
    pub metrics: EvalMetrics,
    /// Mean combined training objective of each epoch.
    pub epoch_loss: Vec<f64>,
}

/// Trains on every domain but `fold` and evaluates on `fold`.
pub fn run_fold(records: &[Vec<Record>], num_classes: usize, config: &TrainConfig, fold: usize) -> Result<(EvalMetrics, Vec<f64>)> {
    let split = build_split(records, num_classes, Some(fold), config.max_len)?;
    let mut trainer = Trainer::new(config.clone(), split.train, split.vocab.len(), Exec::Sequential)?;
    let mut sums = vec![0.0; config.epochs];
    let mut counts = vec![0usize; config.epochs];
    trainer.run(|_, row| {
        sums[row.epoch - 1] += row.total();
        counts[row.epoch - 1] += 1;
        Ok(())
    })?;
    let (_, held) = split.holdout.expect("fold is held out");
    let metrics = evaluate(&trainer.model, &held, config.chunk_size, Exec::Sequential)?;
    Ok((metrics, sums.iter().zip(&counts).map(|(s, &n)| s / n as f64).collect()))
}

/// Every (variant, fold, repeat) run. Runs are independent; with
/// `Exec::Parallel` they execute concurrently. Successful runs are returned
/// even when some fail, together with the first failure.
pub fn run_loo(
    records: &[Vec<Record>],
    num_classes: usize,
    variants: &[Variant],
    repeats: usize,
    exec: Exec,
) -> (Vec<FoldResult>, Option<Error>) {
    if records.len() < 3 {
        return (
            Vec::new(),
            Some(Error::Config(format!(
                "leave-one-out needs at least 3 domains, got {}",
                records.len()
            ))),
        );
    }
    let mut jobs = Vec::new();
    for v in variants {
        for fold in 0..records.len() {
            for repeat in 0..repeats {
                jobs.push((v, fold, repeat));
            }
        }
    }
    let results = par::map(exec, &jobs, |&(v, fold, repeat)| {
        let seed = fold_seed(v.config.seed, fold, repeat);
        let config = TrainConfig { seed, ..v.config.clone() };
        let (metrics, epoch_loss) = run_fold(records, num_classes, &config, fold)
            .inspect_err(|e| log::error!("{} fold {fold} repeat {repeat} failed: {e}", v.name))?;
        log::info!("{} fold {fold} repeat {repeat}: accuracy {:.4}", v.name, metrics.accuracy);
        Ok::<_, Error>(FoldResult {
            variant: v.name.clone(),
            fold,
            repeat,
            seed,
            metrics,
            epoch_loss,
        })
    });
    let mut ok = Vec::new();
    let mut first_err = None;
    for r in results {
        match r {
            Ok(f) => ok.push(f),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    (ok, first_err)
}

#[derive(Clone, Debug, PartialEq)]
pub struct VariantSummary {
    pub variant: String,
    pub mean_accuracy: f64,
    pub mean_macro_f1: f64,
    pub runs: usize,
}

pub fn summarize(results: &[FoldResult], variants: &[Variant]) -> Vec<VariantSummary> {
    variants
        .iter()
        .map(|v| {
            let runs: Vec<&FoldResult> = results.iter().filter(|r| r.variant == v.name).collect();
            let n = runs.len().max(1) as f64;
            VariantSummary {
                variant: v.name.clone(),
                mean_accuracy: runs.iter().map(|r| r.metrics.accuracy).sum::<f64>() / n,
                mean_macro_f1: runs.iter().map(|r| r.metrics.macro_f1).sum::<f64>() / n,
                runs: runs.len(),
            }
        })
        .collect()
}

/// Writes `loo_runs.csv`, `loo_summary.csv` and, when an ERM baseline ran,
/// `loo_paired.csv` with per-(fold, repeat) differences against it.
pub fn write_loo_tables(cfg: &RunConfig, results: &[FoldResult], variants: &[Variant]) -> Result<()> {
    let out = &cfg.run.out_dir;
    ensure_dir(out)?;
    let mut runs = String::from("variant,fold,repeat,seed,accuracy,macro_f1\n");
    for r in results {
        writeln!(
            runs,
            "{},{},{},{},{},{}",
            r.variant, r.fold, r.repeat, r.seed, r.metrics.accuracy, r.metrics.macro_f1
        )
        .expect("string write");
    }
    let mut summary = String::from("variant,runs,mean_accuracy,mean_macro_f1\n");
    for s in summarize(results, variants) {
        writeln!(summary, "{},{},{},{}", s.variant, s.runs, s.mean_accuracy, s.mean_macro_f1).expect("string write");
    }
    let write = |name: &str, text: &str| {
        let p = out.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write("loo_runs.csv", &runs)?;
    write("loo_summary.csv", &summary)?;

    if variants.iter().any(|v| v.name == "erm") {
        let mut paired = String::from("variant,fold,repeat,accuracy,erm_accuracy,accuracy_gain,macro_f1,erm_macro_f1,macro_f1_gain\n");
        for r in results.iter().filter(|r| r.variant != "erm") {
            if let Some(b) = results
                .iter()
                .find(|b| b.variant == "erm" && b.fold == r.fold && b.repeat == r.repeat)
            {
                writeln!(
                    paired,
                    "{},{},{},{},{},{},{},{},{}",
                    r.variant,
                    r.fold,
                    r.repeat,
                    r.metrics.accuracy,
                    b.metrics.accuracy,
                    r.metrics.accuracy - b.metrics.accuracy,
                    r.metrics.macro_f1,
                    b.metrics.macro_f1,
                    r.metrics.macro_f1 - b.metrics.macro_f1
                )
                .expect("string write");
            }
        }
        write("loo_paired.csv", &paired)?;
    }
    Ok(())
}

/// Leave-one-domain-out over the configured data. Partial tables are written
/// before a failure is reported.
pub fn cmd_loo(cfg: &RunConfig) -> Result<Vec<VariantSummary>> {
    let (records, num_classes) = read_domains(&cfg.data)?;
    let vs = variants(cfg);
    let exec = if cfg.run.parallel { Exec::Parallel } else { Exec::Sequential };
    let (results, err) = run_loo(&records, num_classes, &vs, cfg.run.repeats, exec);
    write_loo_tables(cfg, &results, &vs)?;
    if let Some(e) = err {
        return Err(e);
    }
    Ok(summarize(&results, &vs))
}
