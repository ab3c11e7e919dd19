//! Independent oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use std::collections::BTreeSet;

use graphfuse::graph::{GraphConfig, WordGraph};
use graphfuse::model::{FusionModel, Vocab};
use graphfuse::rng::SeedStream;
use graphfuse::synthetic;
use graphfuse::train::{self, EpochRecord, TrainConfig};
use rand::Rng as _;

/// Random sentences of 1..=`max_len` tokens over `vocab` distinct words.
pub fn random_sequences(n: usize, max_len: usize, vocab: usize, seed: u64) -> Vec<Vec<String>> {
    let mut rng = SeedStream::new(seed).rng("oracle/sequences");
    (0..n)
        .map(|_| {
            let len = rng.random_range(1..=max_len);
            (0..len).map(|_| format!("w{}", rng.random_range(0..vocab))).collect()
        })
        .collect()
}

/// Every unordered pair of distinct words at distance below `window`,
/// found by comparing all positions.
pub fn edge_oracle(tokens: &[String], window: usize) -> BTreeSet<(String, String)> {
    let mut out = BTreeSet::new();
    for i in 0..tokens.len() {
        for j in 0..tokens.len() {
            let d = i.abs_diff(j);
            if d > 0 && d < window && tokens[i] != tokens[j] {
                let (a, b) = (tokens[i].clone(), tokens[j].clone());
                out.insert(if a < b { (a, b) } else { (b, a) });
            }
        }
    }
    out
}

/// Edges of a built graph, named by their words.
pub fn word_edges(g: &WordGraph) -> BTreeSet<(String, String)> {
    g.edges
        .iter()
        .map(|&(i, j)| {
            let (a, b) = (g.nodes[i].clone(), g.nodes[j].clone());
            if a < b {
                (a, b)
            } else {
                (b, a)
            }
        })
        .collect()
}

/// Scalar AdamW written from the unrolled moment sums
/// `m_t = (1 - b1) * sum_k b1^(t-k) g_k` rather than the running recurrence.
pub struct AdamOracle {
    pub lr: f64,
    pub wd: f64,
    pub b1: f64,
    pub b2: f64,
    pub eps: f64,
    grads: Vec<f64>,
}

impl AdamOracle {
    pub fn new(cfg: &TrainConfig) -> Self {
        AdamOracle {
            lr: cfg.learning_rate,
            wd: cfg.weight_decay,
            b1: cfg.betas.0,
            b2: cfg.betas.1,
            eps: cfg.epsilon,
            grads: Vec::new(),
        }
    }

    pub fn step(&mut self, theta: f64, g: f64) -> f64 {
        self.grads.push(g);
        let t = self.grads.len() as i32;
        let (mut m, mut v) = (0.0, 0.0);
        for (k, &gk) in self.grads.iter().enumerate() {
            let age = t - 1 - k as i32;
            m += (1.0 - self.b1) * self.b1.powi(age) * gk;
            v += (1.0 - self.b2) * self.b2.powi(age) * gk * gk;
        }
        let m_hat = m / (1.0 - self.b1.powi(t));
        let v_hat = v / (1.0 - self.b2.powi(t));
        theta - self.lr * self.wd * theta - self.lr * m_hat / (v_hat.sqrt() + self.eps)
    }
}

/// Multinomial logistic regression on standardized features, fitted by full
/// batch gradient descent; returns held-out accuracy.
pub fn linear_probe(x: &[Vec<f64>], y: &[usize], x_test: &[Vec<f64>], y_test: &[usize], classes: usize) -> f64 {
    let d = x[0].len();
    let n = x.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let sd: Vec<f64> = (0..d)
        .map(|j| {
            let var = x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
            var.sqrt().max(1e-8)
        })
        .collect();
    let standardize = |r: &Vec<f64>| -> Vec<f64> { (0..d).map(|j| (r[j] - mean[j]) / sd[j]).collect() };
    let xs: Vec<Vec<f64>> = x.iter().map(standardize).collect();
    let xt: Vec<Vec<f64>> = x_test.iter().map(standardize).collect();
    let logits = |w: &[Vec<f64>], r: &[f64]| -> Vec<f64> {
        w.iter()
            .map(|wk| wk[d] + wk[..d].iter().zip(r).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    };
    let mut w = vec![vec![0.0; d + 1]; classes];
    for _ in 0..2000 {
        let mut g = vec![vec![0.0; d + 1]; classes];
        for (r, &c) in xs.iter().zip(y) {
            let l = logits(&w, r);
            let mx = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = l.iter().map(|v| (v - mx).exp()).collect();
            let z: f64 = e.iter().sum();
            for k in 0..classes {
                let p = e[k] / z - f64::from(u8::from(k == c));
                for j in 0..d {
                    g[k][j] += p * r[j];
                }
                g[k][d] += p;
            }
        }
        for (wk, gk) in w.iter_mut().zip(&g) {
            for (a, b) in wk.iter_mut().zip(gk) {
                *a -= 0.5 * b / n;
            }
        }
    }
    let correct = xt
        .iter()
        .zip(y_test)
        .filter(|(r, &c)| {
            let l = logits(&w, r);
            let best = (0..classes).max_by(|&a, &b| l[a].total_cmp(&l[b])).unwrap();
            best == c
        })
        .count();
    correct as f64 / y_test.len() as f64
}

pub struct SeparableRun {
    pub history: Vec<EpochRecord>,
    pub train_acc: f64,
    pub test_acc: f64,
}

/// Toy model on the separable fixture (512 / 128), lr 1e-3.
pub fn separable_run(seed: u64, epochs: usize) -> SeparableRun {
    let set = synthetic::separable(512, 128, seed);
    let vocab = Vocab::build(&set.train);
    let mut model = FusionModel::<f32>::new(synthetic::toy_model_config(16), Some(vocab), seed).unwrap();
    let graph = GraphConfig::default();
    let tr = model.prepare_all(&set.train, &graph, None).unwrap();
    let te = model.prepare_all(&set.test, &graph, None).unwrap();
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        epochs,
        seed,
        ..Default::default()
    };
    let out = train::train(&mut model, &tr, &[], &cfg).unwrap();
    SeparableRun {
        history: out.history,
        train_acc: train::evaluate(&model, &tr).unwrap().overall_accuracy,
        test_acc: train::evaluate(&model, &te).unwrap().overall_accuracy,
    }
}

/// True when the task loss never rises over the first `k` epochs.
pub fn loss_non_increasing(history: &[EpochRecord], k: usize) -> bool {
    history[..k.min(history.len())]
        .windows(2)
        .all(|w| w[1].task_loss <= w[0].task_loss)
}
