//! Mini-batch training with AdamW, the optional adversarial dialect
//! objective, and evaluation reports.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParameterStore, Scalar, Tape, Tensor};
use crate::corpus::DialectTag;
use crate::error::{Error, Result};
use crate::model::{Example, FusionModel};
use crate::rng::SeedStream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub adversarial: bool,
    /// Gradient reversal strength between `z_f` and the dialect head.
    pub lambda_adv: f64,
    /// Weight of the dialect loss in the total objective.
    pub adv_loss_weight: f64,
    pub seed: u64,
    pub betas: (f64, f64),
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 2e-5,
            weight_decay: 0.01,
            epochs: 3,
            batch_size: 16,
            adversarial: false,
            lambda_adv: 1.0,
            adv_loss_weight: 1.0,
            seed: 0,
            betas: (0.9, 0.999),
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |name: &str, x: f64| {
            if x.is_finite() && x >= 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be a finite non-negative number, got {x}")))
            }
        };
        finite_nonneg("weight_decay", self.weight_decay)?;
        finite_nonneg("lambda_adv", self.lambda_adv)?;
        finite_nonneg("adv_loss_weight", self.adv_loss_weight)?;
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        let (b1, b2) = self.betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return Err(Error::Config(format!("betas must lie in [0, 1), got {:?}", self.betas)));
        }
        Ok(())
    }
}

/// First and second moments per parameter plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamWState<T> {
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    frozen: Vec<bool>,
    pub step: u64,
}

impl<T: Scalar> AdamWState<T> {
    pub fn new(store: &ParameterStore<T>) -> Self {
        let zeros = || store.iter().map(|(_, p)| Tensor::zeros(p.value().shape())).collect();
        AdamWState {
            m: zeros(),
            v: zeros(),
            frozen: vec![false; store.len()],
            step: 0,
        }
    }

    /// Excludes parameters from updates; they need no gradient.
    pub fn freeze(&mut self, ids: &[ParamId]) {
        for id in ids {
            self.frozen[id.index()] = true;
        }
    }

    pub fn first_moment(&self, id: ParamId) -> &Tensor<T> {
        &self.m[id.index()]
    }

    pub fn second_moment(&self, id: ParamId) -> &Tensor<T> {
        &self.v[id.index()]
    }
}

/// One AdamW update with decoupled weight decay. Gradients are left in place.
pub fn adamw_step<T: Scalar>(store: &mut ParameterStore<T>, state: &mut AdamWState<T>, cfg: &TrainConfig) -> Result<()> {
    if state.m.len() != store.len() {
        return Err(Error::InvalidArgument("optimizer state does not match parameter store".into()));
    }
    if let Some((_, p)) = store
        .iter()
        .find(|(id, p)| !state.frozen[id.index()] && p.grad.is_none())
    {
        return Err(Error::MissingGradient(p.name.clone()));
    }
    state.step += 1;
    let t = state.step as i32;
    let one = T::one();
    let (b1, b2) = (T::of(cfg.betas.0), T::of(cfg.betas.1));
    let lr = T::of(cfg.learning_rate);
    let wd = T::of(cfg.weight_decay);
    let eps = T::of(cfg.epsilon);
    let c1 = one - b1.powi(t);
    let c2 = one - b2.powi(t);
    for (i, p) in store.iter_mut().enumerate() {
        if state.frozen[i] {
            continue;
        }
        let grad = p.grad.take().expect("checked above");
        let (m, v) = (state.m[i].data_mut(), state.v[i].data_mut());
        for (((theta, &g), m), v) in p.value_mut().data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *theta -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * *theta);
        }
        p.grad = Some(grad);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean task cross-entropy over the epoch's samples.
    pub task_loss: f64,
    /// Accuracy of the predictions made during the epoch's forward passes.
    pub task_acc: f64,
    pub dialect_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

/// Parameter values from the epoch with the best validation accuracy.
#[derive(Debug, Clone)]
pub struct BestSnapshot<T> {
    pub epoch: usize,
    pub val_acc: f64,
    pub params: ParameterStore<T>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub history: Vec<EpochRecord>,
    pub steps: u64,
    pub best: Option<BestSnapshot<T>>,
    pub warnings: Vec<String>,
}

struct BatchStats {
    task_loss: f64,
    correct: usize,
    dialect_loss: Option<f64>,
}

fn batch_step<T: Scalar>(
    model: &mut FusionModel<T>,
    opt: &mut AdamWState<T>,
    batch: &[&Example],
    cfg: &TrainConfig,
) -> Result<BatchStats> {
    let stats = {
        let mut tape = Tape::new();
        let mut zs = Vec::with_capacity(batch.len());
        for ex in batch {
            zs.push(model.represent(&mut tape, ex)?.z_f);
        }
        let z = tape.concat_rows(&zs)?;
        let logits = model.task_logits(&mut tape, z)?;
        let labels: Vec<usize> = batch.iter().map(|e| usize::from(e.label)).collect();
        let task = tape.cross_entropy_with_logits(logits, &labels)?;
        let correct = tape
            .value(logits)
            .data()
            .chunks(2)
            .zip(&labels)
            .filter(|(l, &y)| usize::from(l[1] > l[0]) == y)
            .count();
        let mut stats = BatchStats {
            task_loss: tape.value(task).data()[0].as_f64(),
            correct,
            dialect_loss: None,
        };
        let total = if cfg.adversarial {
            let dl = model.dialect_logits(&mut tape, z, Some(T::of(cfg.lambda_adv)))?;
            let dialects: Vec<usize> = batch.iter().map(|e| e.dialect.index()).collect();
            let dce = tape.cross_entropy_with_logits(dl, &dialects)?;
            stats.dialect_loss = Some(tape.value(dce).data()[0].as_f64());
            let weighted = tape.scale(dce, T::of(cfg.adv_loss_weight));
            tape.add(task, weighted)?
        } else {
            task
        };
        if !tape.value(total).is_finite() {
            return Err(Error::NonFinite("training loss".into()));
        }
        model.params.zero_grad();
        tape.backward(total, &mut model.params)?;
        stats
    };
    adamw_step(&mut model.params, opt, cfg)?;
    Ok(stats)
}

/// Trains in place. Runs `epochs x ceil(n / batch_size)` optimizer steps,
/// keeping the last partial batch. With a non-empty validation set the
/// parameters of the best epoch are returned too (ties go to the earlier one).
pub fn train<T: Scalar>(
    model: &mut FusionModel<T>,
    train_set: &[Example],
    validation: &[Example],
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("empty training split".into()));
    }
    let mut warnings = Vec::new();
    if cfg.adversarial {
        if !model.has_dialect_head() {
            return Err(Error::Config("adversarial training needs a model with a dialect head".into()));
        }
        let dialects: BTreeSet<DialectTag> = train_set.iter().map(|e| e.dialect).collect();
        if dialects.len() < 2 {
            let msg = "training set has a single dialect; the dialect loss is degenerate".to_owned();
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }
    let mut opt = AdamWState::new(&model.params);
    if !cfg.adversarial {
        opt.freeze(&model.dialect_head_params());
    }
    let mut rng = SeedStream::new(cfg.seed).rng("shuffle");
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<BestSnapshot<T>> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut dialect_sum, mut correct) = (0.0, 0.0, 0);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train_set[i]).collect();
            let s = batch_step(model, &mut opt, &batch, cfg)?;
            let n = batch.len() as f64;
            loss_sum += s.task_loss * n;
            dialect_sum += s.dialect_loss.unwrap_or(0.0) * n;
            correct += s.correct;
        }
        let n = train_set.len() as f64;
        let val_acc = if validation.is_empty() {
            None
        } else {
            Some(evaluate(model, validation)?.overall_accuracy)
        };
        let record = EpochRecord {
            epoch,
            task_loss: loss_sum / n,
            task_acc: correct as f64 / n,
            dialect_loss: cfg.adversarial.then_some(dialect_sum / n),
            val_acc,
        };
        log::info!(
            "epoch {epoch}: task_loss {:.4} task_acc {:.4}{}",
            record.task_loss,
            record.task_acc,
            val_acc.map(|a| format!(" val_acc {a:.4}")).unwrap_or_default()
        );
        if let Some(acc) = val_acc {
            if best.as_ref().is_none_or(|b| acc > b.val_acc) {
                best = Some(BestSnapshot {
                    epoch,
                    val_acc: acc,
                    params: model.params.clone(),
                });
            }
        }
        history.push(record);
    }
    Ok(TrainOutcome {
        history,
        steps: opt.step,
        best,
        warnings,
    })
}

/// [`train`] with the adversarial dialect objective switched on.
pub fn train_adversarial<T: Scalar>(
    model: &mut FusionModel<T>,
    train_set: &[Example],
    validation: &[Example],
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    let cfg = TrainConfig {
        adversarial: true,
        ..*cfg
    };
    train(model, train_set, validation, &cfg)
}

/// Applies `f` to every example on all available cores, keeping order.
pub fn par_map<T, R, F>(model: &FusionModel<T>, examples: &[Example], f: F) -> Result<Vec<R>>
where
    T: Scalar,
    R: Send,
    F: Fn(&FusionModel<T>, &Example) -> Result<R> + Sync,
{
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let chunk = examples.len().div_ceil(threads).max(1);
    std::thread::scope(|s| {
        let handles: Vec<_> = examples
            .chunks(chunk)
            .map(|part| s.spawn(|| part.iter().map(|e| f(model, e)).collect::<Result<Vec<R>>>()))
            .collect();
        let mut out = Vec::with_capacity(examples.len());
        for h in handles {
            out.extend(h.join().expect("worker panicked")?);
        }
        Ok(out)
    })
}

/// 2x2 counts with label 1 as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn record(&mut self, label: u8, pred: u8) {
        match (label, pred) {
            (1, 1) => self.tp += 1,
            (0, 0) => self.tn += 1,
            (0, _) => self.fp += 1,
            _ => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / self.total() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall_accuracy: f64,
    pub n_samples: usize,
    pub per_dialect_accuracy: BTreeMap<DialectTag, f64>,
    pub confusion: Confusion,
    pub per_dialect_confusion: BTreeMap<DialectTag, Confusion>,
    /// Effective run configuration, when produced by a run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

impl EvalReport {
    /// Builds a report from `(dialect, label, prediction)` triples.
    pub fn from_predictions(rows: &[(DialectTag, u8, u8)]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidArgument("cannot evaluate an empty sample set".into()));
        }
        let mut confusion = Confusion::default();
        let mut per: BTreeMap<DialectTag, Confusion> = BTreeMap::new();
        for &(d, label, pred) in rows {
            confusion.record(label, pred);
            per.entry(d).or_default().record(label, pred);
        }
        Ok(EvalReport {
            overall_accuracy: confusion.accuracy(),
            n_samples: rows.len(),
            per_dialect_accuracy: per.iter().map(|(&d, c)| (d, c.accuracy())).collect(),
            confusion,
            per_dialect_confusion: per,
            config: None,
        })
    }
}

/// Argmax predictions for every example, in order.
pub fn predict_all<T: Scalar>(model: &FusionModel<T>, examples: &[Example]) -> Result<Vec<u8>> {
    par_map(model, examples, |m, e| m.predict(e))
}

pub fn evaluate<T: Scalar>(model: &FusionModel<T>, examples: &[Example]) -> Result<EvalReport> {
    if examples.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty sample set".into()));
    }
    let preds = predict_all(model, examples)?;
    let rows: Vec<_> = examples
        .iter()
        .zip(preds)
        .map(|(e, p)| (e.dialect, e.label, p))
        .collect();
    EvalReport::from_predictions(&rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

#[derive(Serialize)]
struct ReportRow<'a> {
    dialect: &'a str,
    accuracy: String,
    n: usize,
    tp: usize,
    tn: usize,
    fp: usize,
    #[serde(rename = "fn")]
    fn_: usize,
}

fn report_row<'a>(dialect: &'a str, c: &Confusion) -> ReportRow<'a> {
    ReportRow {
        dialect,
        accuracy: format!("{:.4}", c.accuracy()),
        n: c.total(),
        tp: c.tp,
        tn: c.tn,
        fp: c.fp,
        fn_: c.fn_,
    }
}

pub fn export_report(report: &EvalReport, path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    match format {
        ReportFormat::Json => {
            std::fs::write(path, serde_json::to_string_pretty(report)? + "\n")?;
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_path(path)?;
            for (d, c) in &report.per_dialect_confusion {
                w.serialize(report_row(d.code(), c))?;
            }
            w.serialize(report_row("overall", &report.confusion))?;
            w.flush()?;
        }
    }
    Ok(())
}

/// Writes `epoch,task_loss,task_acc,dialect_loss`. Losses are printed in
/// shortest round-trip form so reruns can be compared byte for byte.
pub fn write_history(history: &[EpochRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "task_loss", "task_acc", "dialect_loss"])?;
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            r.task_loss.to_string(),
            r.task_acc.to_string(),
            r.dialect_loss.map(|x| x.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
