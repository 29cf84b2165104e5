use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::gradcheck::{check_gradients, GradcheckReport, DEFAULT_STEP};
use crate::autodiff::{l2_norm, OpKind, Tape, Tensor};
use crate::engine::{key_features, stage_loss, DomainBatch, LossContext};
use crate::error::{Error, Result};
use crate::jury::JuryQueues;
use crate::memory::MemoryBank;
use crate::model::{classify_on, encode_on, momentum_update, Activation, EncoderParams, EncoderShape, QueryModel};
use crate::par::Exec;
use crate::text::word_repetition;

pub const TOLERANCE: f64 = 1e-4;
pub const TERMS: [&str; 5] = ["classification", "memory", "jury", "meta_train", "meta_test"];

#[derive(Clone, Debug, PartialEq)]
pub struct TermReport {
    pub seed: u64,
    pub term: &'static str,
    pub report: GradcheckReport,
    pub passed: bool,
}

/// Random tiny model and data for one gradient-check seed.
struct Fixture {
    model: QueryModel,
    key: EncoderParams,
    bank: MemoryBank,
    queues: JuryQueues,
    batches: Vec<DomainBatch>,
    temperature: f64,
}

const TINY: EncoderShape = EncoderShape {
    vocab_size: 40,
    emb_dim: 6,
    hidden_dim: 5,
    feature_dim: 4,
};
const CLASSES: usize = 2;
const DOMAINS: usize = 3;
const BATCH: usize = 4;

fn unit_rows<R: Rng>(rng: &mut R, rows: usize, dim: usize) -> Tensor {
    let data: Vec<Vec<f64>> = (0..rows)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let n = l2_norm(&v);
            v.into_iter().map(|x| x / n).collect()
        })
        .collect();
    Tensor::from_rows(&data).expect("rectangular")
}

fn fixture(seed: u64) -> Result<Fixture> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = QueryModel::init(TINY, Activation::Tanh, CLASSES, &mut rng);
    let key = EncoderParams::init(TINY, Activation::Tanh, &mut rng);
    let slots = (0..DOMAINS).map(|_| unit_rows(&mut rng, CLASSES, TINY.feature_dim)).collect();
    let bank = MemoryBank::from_slots(slots, 0.2, 0.05, false)?;
    let queues = JuryQueues::init(CLASSES, 6, TINY.feature_dim, &mut rng)?;
    let batches = (0..DOMAINS)
        .map(|d| {
            let tokens: Vec<Vec<usize>> = (0..BATCH)
                .map(|_| {
                    let len = rng.gen_range(3..8);
                    (0..len).map(|_| rng.gen_range(1..TINY.vocab_size)).collect()
                })
                .collect();
            let twins = tokens.iter().map(|t| word_repetition(t, 0.32, &mut rng)).collect();
            DomainBatch {
                domain: d,
                tokens,
                twins,
                labels: (0..BATCH).map(|i| (i + d) % CLASSES).collect(),
            }
        })
        .collect();
    Ok(Fixture {
        model,
        key,
        bank,
        queues,
        batches,
        temperature: 0.05,
    })
}

type Eval<'a> = Box<dyn Fn(&QueryModel, Option<OpKind>) -> Result<(f64, Vec<Tensor>)> + 'a>;

fn single_term<'a>(fx: &'a Fixture, term: &'static str) -> Eval<'a> {
    Box::new(move |m, fault| {
        let b = &fx.batches[0];
        let mut tape = Tape::new();
        if let Some(k) = fault {
            tape.inject_backward_fault(k);
        }
        let vars = m.bind(&mut tape);
        let f = encode_on(&mut tape, &vars.encoder, &b.tokens)?;
        let loss = match term {
            "classification" => {
                let z = classify_on(&mut tape, &vars.classifier, f)?;
                tape.cross_entropy(z, &b.labels)?
            }
            "memory" => fx.bank.loss_on(&mut tape, f, &b.labels, b.domain)?,
            _ => {
                let keys = key_features(&fx.key, b)?;
                fx.queues.loss_on(&mut tape, f, &keys, &b.labels, fx.temperature)?
            }
        };
        let g = tape.backward(loss)?;
        Ok((tape.value(loss).item(), vars.grads(&g)))
    })
}

fn combined<'a>(fx: &'a Fixture, term: &'static str) -> Eval<'a> {
    Box::new(move |m, fault| {
        let ctx = LossContext {
            bank: Some(&fx.bank),
            queues: Some(&fx.queues),
            temperature: fx.temperature,
            fault,
        };
        let (batches, keys) = if term == "meta_train" {
            let b: Vec<&DomainBatch> = fx.batches[..DOMAINS - 1].iter().collect();
            let k = b.iter().map(|b| key_features(&fx.key, b)).collect::<Result<Vec<_>>>()?;
            (b, k)
        } else {
            // keys from one momentum step of the key encoder; constant in the check
            let b = vec![&fx.batches[DOMAINS - 1]];
            let mut k = fx.key.clone();
            momentum_update(&mut k, &fx.model.encoder, 0.999)?;
            let keys = vec![key_features(&k, b[0])?];
            (b, keys)
        };
        let e = stage_loss(m, &batches, &keys, &ctx, Exec::Sequential)?;
        Ok((e.value, e.grads))
    })
}

/// Central-difference check of every loss term on a fresh tiny model per
/// seed. `fault` corrupts one backward rule in the analytic pass only.
pub fn run_gradcheck(seeds: &[u64], fault: Option<OpKind>) -> Result<Vec<TermReport>> {
    let mut out = Vec::new();
    for &seed in seeds {
        let fx = fixture(seed)?;
        for term in TERMS {
            let eval = match term {
                "meta_train" | "meta_test" => combined(&fx, term),
                _ => single_term(&fx, term),
            };
            // the meta-test objective is evaluated at perturbed parameters
            let at = if term == "meta_test" {
                let mut p = fx.model.clone();
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
                for t in crate::autodiff::Parameters::tensors_mut(&mut p) {
                    t.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.05..0.05));
                }
                p
            } else {
                fx.model.clone()
            };
            let (_, grads) = eval(&at, fault)?;
            let report = check_gradients(&at, &grads, |m| Ok(eval(m, None)?.0), DEFAULT_STEP)?;
            let passed = report.passes(TOLERANCE);
            out.push(TermReport {
                seed,
                term,
                report,
                passed,
            });
        }
    }
    Ok(out)
}

pub fn format_report(reports: &[TermReport]) -> String {
    let mut s = String::from("seed,term,max_rel_error,worst,compared,skipped,passed\n");
    for r in reports {
        let worst = r.report.worst.as_ref().map(|(n, i)| format!("{n}[{i}]")).unwrap_or_default();
        writeln!(
            s,
            "{},{},{:e},{},{},{},{}",
            r.seed, r.term, r.report.max_rel_error, worst, r.report.compared, r.report.skipped, r.passed
        )
        .expect("string write");
    }
    s
}

/// Runs the check, writes `gradcheck.csv` into `out_dir`, and fails with a
/// numerical error if any term exceeds the tolerance.
pub fn cmd_gradcheck(seeds: &[u64], fault: Option<OpKind>, out_dir: &Path) -> Result<Vec<TermReport>> {
    let reports = run_gradcheck(seeds, fault)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let path = out_dir.join("gradcheck.csv");
    fs::write(&path, format_report(&reports)).map_err(|e| Error::io(&path, e))?;
    let failed: Vec<String> = reports
        .iter()
        .filter(|r| !r.passed)
        .map(|r| format!("{} (seed {}, rel error {:e})", r.term, r.seed, r.report.max_rel_error))
        .collect();
    if !failed.is_empty() {
        return Err(Error::GradientCheck(format!(
            "exceeded {TOLERANCE:e}: {}",
            failed.join(", ")
        )));
    }
    Ok(reports)
}
