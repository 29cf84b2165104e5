use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::autodiff::Parameters;
use crate::checkpoint::Checkpoint;
use crate::engine::{evaluate, EvalMetrics, MetricsRow, TrainConfig, Trainer};
use crate::error::{Error, Result};
use crate::model::{encode, QueryModel};
use crate::par::Exec;
use crate::text::{DomainDataset, Vocab};

use super::config::RunConfig;
use super::data::{build_split, ensure_dir, read_domains};

pub const CONFIG_ECHO: &str = "config.toml";
pub const METRICS_CSV: &str = "metrics.csv";
pub const EVAL_CSV: &str = "eval.csv";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

/// Trainer state plus the vocabulary and held-out domain it was built with.
pub fn trainer_checkpoint(trainer: &Trainer, vocab: &Vocab, holdout: Option<usize>) -> Result<Checkpoint> {
    let mut ck = trainer.to_checkpoint()?;
    ck.meta.insert("vocab".into(), json!(vocab.regular_tokens()));
    ck.meta.insert("holdout".into(), json!(holdout));
    Ok(ck)
}

/// Query model, training config and vocabulary stored in a checkpoint.
pub fn load_model(ck: &Checkpoint) -> Result<(TrainConfig, QueryModel, Vocab)> {
    let config: TrainConfig = ck.meta_field("config")?;
    let tokens: Vec<String> = ck.meta_field("vocab")?;
    let vocab = Vocab::from_tokens(tokens).map_err(Error::Checkpoint)?;
    let vocab_size: usize = ck.meta_field("vocab_size")?;
    if vocab.len() != vocab_size {
        return Err(Error::Checkpoint(format!(
            "vocabulary has {} entries but the model expects {vocab_size}",
            vocab.len()
        )));
    }
    let num_classes: usize = ck.meta_field("num_classes")?;
    let mut model = QueryModel::init(
        config.encoder_shape(vocab_size),
        config.activation,
        num_classes,
        &mut ChaCha8Rng::seed_from_u64(0),
    );
    let names = model.param_names();
    for (n, t) in names.iter().zip(model.tensors_mut()) {
        *t = ck.expect(&format!("model.{n}"), t.shape())?;
    }
    Ok((config, model, vocab))
}

pub fn eval_header(num_classes: usize) -> String {
    let mut h = String::from("epoch,domain,accuracy,macro_f1");
    for c in 0..num_classes {
        write!(h, ",precision_{c},recall_{c}").expect("string write");
    }
    h
}

pub fn eval_row(epoch: usize, domain: usize, m: &EvalMetrics) -> String {
    let mut r = format!("{epoch},{domain},{},{}", m.accuracy, m.macro_f1);
    for c in &m.per_class {
        write!(r, ",{},{}", c.precision, c.recall).expect("string write");
    }
    r
}

/// Keeps the header and the first `keep` data rows of a CSV file.
fn truncate_csv(path: &Path, keep: usize) -> Result<()> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = String::new();
    for line in text.lines().take(keep + 1) {
        out.push_str(line);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn open_csv(path: &Path, header: &str, append: bool) -> Result<BufWriter<File>> {
    if append && path.exists() {
        let f = OpenOptions::new().append(true).open(path).map_err(|e| Error::io(path, e))?;
        return Ok(BufWriter::new(f));
    }
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    writeln!(w, "{header}").map_err(|e| Error::io(path, e))?;
    Ok(w)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub rows: Vec<MetricsRow>,
    pub evals: Vec<(usize, EvalMetrics)>,
    pub checkpoint: PathBuf,
    pub finished: bool,
}

/// Trains per `cfg`, writing the config echo, `metrics.csv`, `eval.csv` and
/// checkpoints into `run.out_dir`. With `resume`, continues from
/// `last.ckpt` when present.
pub fn cmd_train(cfg: &RunConfig, resume: bool, exec: Exec) -> Result<TrainOutcome> {
    let (records, num_classes) = read_domains(&cfg.data)?;
    let holdout = cfg.run.holdout;
    let split = build_split(&records, num_classes, holdout, cfg.train.max_len)?;
    let out = &cfg.run.out_dir;
    ensure_dir(out)?;
    let ck_dir = out.join("checkpoints");
    ensure_dir(&ck_dir)?;
    let echo = out.join(CONFIG_ECHO);
    fs::write(&echo, cfg.to_toml()?).map_err(|e| Error::io(&echo, e))?;

    let last = out.join(LAST_CHECKPOINT);
    let resuming = resume && last.exists();
    let mut trainer = if resuming {
        let ck = Checkpoint::load(&last)?;
        let (_, _, vocab) = load_model(&ck)?;
        if vocab != split.vocab {
            return Err(Error::Checkpoint("checkpoint vocabulary differs from the configured data".into()));
        }
        let t = Trainer::from_checkpoint(&ck, split.train.clone(), exec)?;
        if t.config() != &cfg.train {
            return Err(Error::Config("resumed checkpoint was trained with a different [train] config".into()));
        }
        log::info!("resuming from iteration {}", t.iteration());
        t
    } else {
        Trainer::new(cfg.train.clone(), split.train.clone(), split.vocab.len(), exec)?
    };

    let metrics_path = out.join(METRICS_CSV);
    let eval_path = out.join(EVAL_CSV);
    let done_epochs = trainer.iteration() as usize / trainer.iterations_per_epoch();
    if resuming {
        truncate_csv(&metrics_path, trainer.iteration() as usize)?;
        if eval_path.exists() {
            let evals_kept = if holdout.is_some() { done_epochs / cfg.run.eval_every } else { 0 };
            truncate_csv(&eval_path, evals_kept)?;
        }
    }
    let mut metrics = open_csv(&metrics_path, MetricsRow::CSV_HEADER, resuming)?;
    let mut eval_csv = open_csv(&eval_path, &eval_header(num_classes), resuming)?;

    let save = |t: &Trainer, path: &Path| trainer_checkpoint(t, &split.vocab, holdout)?.save(path);
    let ipe = trainer.iterations_per_epoch() as u64;
    let mut rows = Vec::new();
    let mut evals = Vec::new();
    let stop_at = cfg.run.stop_after.unwrap_or(u64::MAX);
    while !trainer.is_done() && trainer.iteration() < stop_at {
        let row = trainer.step()?;
        writeln!(metrics, "{}", row.to_csv()).map_err(|e| Error::io(&metrics_path, e))?;
        if (row.iteration + 1) % ipe == 0 {
            let epoch = row.epoch;
            if let Some((h, ds)) = &split.holdout {
                if epoch % cfg.run.eval_every == 0 {
                    let m = evaluate(&trainer.model, ds, cfg.train.chunk_size, exec)?;
                    log::info!("epoch {epoch}: held-out accuracy {:.4}, macro-F1 {:.4}", m.accuracy, m.macro_f1);
                    writeln!(eval_csv, "{}", eval_row(epoch, *h, &m)).map_err(|e| Error::io(&eval_path, e))?;
                    evals.push((epoch, m));
                }
            }
            if cfg.run.checkpoint_every > 0 && epoch % cfg.run.checkpoint_every == 0 {
                metrics.flush().map_err(|e| Error::io(&metrics_path, e))?;
                eval_csv.flush().map_err(|e| Error::io(&eval_path, e))?;
                save(&trainer, &ck_dir.join(format!("epoch_{epoch:03}.ckpt")))?;
                save(&trainer, &last)?;
            }
        }
        rows.push(row);
    }
    metrics.flush().map_err(|e| Error::io(&metrics_path, e))?;
    eval_csv.flush().map_err(|e| Error::io(&eval_path, e))?;
    save(&trainer, &last)?;
    let finished = trainer.is_done();
    let checkpoint = if finished {
        let p = out.join(FINAL_CHECKPOINT);
        save(&trainer, &p)?;
        p
    } else {
        last
    };
    Ok(TrainOutcome {
        rows,
        evals,
        checkpoint,
        finished,
    })
}

fn datasets_for_checkpoint(cfg: &RunConfig, vocab: &Vocab, max_len: usize) -> Result<Vec<DomainDataset>> {
    let (records, nc) = read_domains(&cfg.data)?;
    records
        .iter()
        .enumerate()
        .map(|(d, r)| DomainDataset::from_records(d, nc, r, vocab, max_len))
        .collect()
}

/// Evaluates a checkpoint on every configured domain.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, exec: Exec) -> Result<Vec<(usize, EvalMetrics)>> {
    let ck = Checkpoint::load(checkpoint)?;
    let (tc, model, vocab) = load_model(&ck)?;
    let datasets = datasets_for_checkpoint(cfg, &vocab, tc.max_len)?;
    if datasets.iter().any(|d| d.num_classes() != model.classifier.num_classes()) {
        return Err(Error::Config("class count of the data differs from the checkpoint".into()));
    }
    let results = datasets
        .iter()
        .map(|ds| Ok((ds.domain(), evaluate(&model, ds, tc.chunk_size, exec)?)))
        .collect::<Result<Vec<_>>>()?;
    ensure_dir(&cfg.run.out_dir)?;
    let path = cfg.run.out_dir.join("eval_checkpoint.csv");
    let mut text = eval_header(model.classifier.num_classes()) + "\n";
    for (d, m) in &results {
        text.push_str(&eval_row(0, *d, m));
        text.push('\n');
    }
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(results)
}

/// Writes `domain, label, feature...` per example as TSV. At most
/// `per_domain` examples (the first ones) are taken from each domain.
pub fn cmd_dump_embeddings(
    cfg: &RunConfig,
    checkpoint: &Path,
    out: &Path,
    per_domain: Option<usize>,
) -> Result<usize> {
    let ck = Checkpoint::load(checkpoint)?;
    let (tc, model, vocab) = load_model(&ck)?;
    let dims = |c: &TrainConfig| (c.emb_dim, c.hidden_dim, c.feature_dim);
    if dims(&tc) != dims(&cfg.train) {
        return Err(Error::Config(format!(
            "checkpoint dimensions (emb, hidden, feature) = {:?} differ from the config's {:?}",
            dims(&tc),
            dims(&cfg.train)
        )));
    }
    let datasets = datasets_for_checkpoint(cfg, &vocab, tc.max_len)?;
    let mut text = String::new();
    let mut rows = 0;
    for ds in &datasets {
        let n = per_domain.unwrap_or(usize::MAX).min(ds.len());
        for chunk in ds.examples()[..n].chunks(tc.chunk_size) {
            let toks: Vec<Vec<usize>> = chunk.iter().map(|e| e.tokens.clone()).collect();
            let f = encode(&model.encoder, &toks)?;
            for (i, e) in chunk.iter().enumerate() {
                write!(text, "{}\t{}", ds.domain(), e.label).expect("string write");
                for v in f.row(i) {
                    write!(text, "\t{v}").expect("string write");
                }
                text.push('\n');
                rows += 1;
            }
        }
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    fs::write(out, text).map_err(|e| Error::io(out, e))?;
    Ok(rows)
}
