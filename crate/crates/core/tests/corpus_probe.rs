mod common;

use std::collections::HashMap;

use metadg::text::{Record, SyntheticCorpus};

/// Bag-of-words logistic regression fitted by full-batch gradient descent.
struct Probe {
    index: HashMap<String, usize>,
    w: Vec<f64>,
    b: f64,
}

fn features(index: &HashMap<String, usize>, text: &str) -> Vec<(usize, f64)> {
    let mut counts: HashMap<usize, f64> = HashMap::new();
    for tok in text.split_whitespace() {
        if let Some(&i) = index.get(tok) {
            *counts.entry(i).or_default() += 1.0;
        }
    }
    let mut v: Vec<(usize, f64)> = counts.into_iter().collect();
    v.sort_unstable_by_key(|&(i, _)| i);
    v
}

impl Probe {
    fn fit(train: &[&Record]) -> Self {
        let mut index = HashMap::new();
        for r in train {
            for tok in r.text.split_whitespace() {
                let n = index.len();
                index.entry(tok.to_string()).or_insert(n);
            }
        }
        let xs: Vec<Vec<(usize, f64)>> = train.iter().map(|r| features(&index, &r.text)).collect();
        let mut w = vec![0.0; index.len()];
        let mut b = 0.0;
        let (lr, l2, n) = (0.5, 1e-3, train.len() as f64);
        for _ in 0..400 {
            let mut gw = vec![0.0; w.len()];
            let mut gb = 0.0;
            for (x, r) in xs.iter().zip(train) {
                let z = b + x.iter().map(|&(i, c)| w[i] * c).sum::<f64>();
                let err = 1.0 / (1.0 + (-z).exp()) - r.label as f64;
                gb += err;
                for &(i, c) in x {
                    gw[i] += err * c;
                }
            }
            for (wi, g) in w.iter_mut().zip(&gw) {
                *wi -= lr * (g / n + l2 * *wi);
            }
            b -= lr * gb / n;
        }
        Probe { index, w, b }
    }

    fn accuracy(&self, data: &[&Record]) -> f64 {
        let hits = data
            .iter()
            .filter(|r| {
                let z = self.b + features(&self.index, &r.text).iter().map(|&(i, c)| self.w[i] * c).sum::<f64>();
                usize::from(z > 0.0) == r.label
            })
            .count();
        hits as f64 / data.len() as f64
    }
}

/// In-domain accuracy (every fourth example of the source domains held
/// back) and held-out-domain accuracy for each fold.
fn folds(c: &SyntheticCorpus) -> Vec<(f64, f64)> {
    (0..c.domains.len())
        .map(|h| {
            let source: Vec<&Record> = (0..c.domains.len()).filter(|&d| d != h).flat_map(|d| &c.domains[d]).collect();
            let train: Vec<&Record> = source.iter().enumerate().filter(|(i, _)| i % 4 != 0).map(|(_, r)| *r).collect();
            let test: Vec<&Record> = source.iter().enumerate().filter(|(i, _)| i % 4 == 0).map(|(_, r)| *r).collect();
            let held: Vec<&Record> = c.domains[h].iter().collect();
            let probe = Probe::fit(&train);
            (probe.accuracy(&test), probe.accuracy(&held))
        })
        .collect()
}

#[test]
fn linear_probe_shows_a_domain_gap() {
    for seed in [0, 1] {
        let c = common::corpus(seed);
        for (fold, (in_domain, held_out)) in folds(&c).into_iter().enumerate() {
            assert!(in_domain >= 0.9, "seed {seed} fold {fold}: in-domain {in_domain}");
            assert!(held_out <= 0.8, "seed {seed} fold {fold}: held-out {held_out}");
        }
    }
}
