use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{hybrid_loss, Adam, HybridLossConfig};
use crate::error::{Error, Result};
use crate::model::{forward_batch, parameter_breakdown, ModelConfig, ModelState};
use crate::radar::{augment, lopo_split, WindowSample};
use crate::seed;
use crate::tensor::Mode;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Epochs without validation improvement before the learning rate halves.
    pub lr_patience: usize,
    pub batch_size: usize,
    /// Minimum absolute drop in validation loss that counts as improvement.
    pub min_delta: f64,
    /// Noise augmentation of training batches (used with imbalanced data).
    pub augment: bool,
    pub augment_scale: f64,
    /// Stop as soon as an epoch's training accuracy reaches this value.
    pub target_train_accuracy: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 3e-3,
            max_epochs: 100,
            patience: 10,
            lr_patience: 10,
            batch_size: 32,
            min_delta: 1e-5,
            augment: false,
            augment_scale: 0.1,
            target_train_accuracy: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.patience == 0 || self.lr_patience == 0 || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("training needs lr > 0 and positive patience, batch size and epoch budget".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Fraction of correct predictions.
    pub accuracy: f64,
    /// Row-normalized percentages; rows of absent classes are zero.
    pub confusion: Vec<Vec<f64>>,
    /// Raw counts, `counts[true][predicted]`.
    pub counts: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub loss: HybridLossConfig,
    pub parameter_count: usize,
    pub parameter_breakdown: Vec<(String, usize)>,
    pub epochs: Vec<EpochLog>,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub held_out: Option<usize>,
    pub test: Option<Evaluation>,
}

impl TrainReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn check_finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("{what} is {v}")))
    }
}

/// Mean loss and accuracy over `samples` without touching `state`.
fn measure(state: &ModelState, samples: &[&WindowSample], batch: usize, loss: &HybridLossConfig) -> Result<(f64, f64)> {
    let mut total = 0.0;
    let mut correct = 0;
    let mut rng = seed::rng(0, &[]);
    for chunk in samples.chunks(batch) {
        let labels: Vec<usize> = chunk.iter().map(|s| s.label).collect();
        let mut fwd = forward_batch(state, chunk, Mode::Infer, &mut rng)?;
        let l = hybrid_loss(&mut fwd, &labels, loss)?;
        total += fwd.graph.value(l)[0] * chunk.len() as f64;
        correct += fwd.outputs().iter().zip(&labels).filter(|(o, &y)| o.predicted() == y).count();
    }
    let n = samples.len() as f64;
    Ok((check_finite(total / n, "validation loss")?, correct as f64 / n))
}

/// Mini-batch training with early stopping on validation loss. The returned
/// state is the best-validation one, rounded to single precision so that it
/// is exactly what a checkpoint stores.
pub fn train(
    train_set: &[WindowSample],
    validation: &[WindowSample],
    model: &ModelConfig,
    cfg: &TrainConfig,
    loss: &HybridLossConfig,
) -> Result<(ModelState, TrainReport)> {
    cfg.validate()?;
    loss.validate()?;
    if train_set.is_empty() || validation.is_empty() {
        return Err(Error::Config(format!(
            "training needs nonempty train and validation sets ({} / {})",
            train_set.len(),
            validation.len()
        )));
    }
    let mut state = ModelState::init(model.clone(), seed::derive(cfg.seed, &[1]))?;
    let mut adam = Adam::new(cfg.lr);
    let val_refs: Vec<&WindowSample> = validation.iter().collect();
    let mut best = (f64::INFINITY, state.clone(), 0);
    let mut since_best = 0;
    let mut since_lr = 0;
    let mut epochs = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        let mut rng = seed::rng(cfg.seed, &[2, epoch as u64]);
        order.shuffle(&mut rng);
        let lr = adam.lr;
        let (mut total, mut correct) = (0.0, 0);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let augmented: Vec<WindowSample>;
            let batch: Vec<&WindowSample> = if cfg.augment {
                augmented = chunk
                    .iter()
                    .map(|&i| augment(&train_set[i], cfg.augment_scale, seed::derive(cfg.seed, &[3, epoch as u64, i as u64])))
                    .collect();
                augmented.iter().collect()
            } else {
                chunk.iter().map(|&i| &train_set[i]).collect()
            };
            let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
            let mut dropout_rng = seed::rng(cfg.seed, &[4, epoch as u64, b as u64]);
            let mut fwd = forward_batch(&state, &batch, Mode::Train, &mut dropout_rng)?;
            let l = hybrid_loss(&mut fwd, &labels, loss)?;
            let value = check_finite(fwd.graph.value(l)[0], &format!("training loss at epoch {epoch}"))?;
            total += value * batch.len() as f64;
            correct += fwd.outputs().iter().zip(&labels).filter(|(o, &y)| o.predicted() == y).count();
            fwd.graph.backward(l)?;
            let grads: Vec<Vec<f64>> = fwd
                .params
                .iter()
                .zip(&state.params)
                .map(|(&v, p)| fwd.graph.grad(v).map_or_else(|| vec![0.0; p.tensor.numel()], <[f64]>::to_vec))
                .collect();
            adam.step(&mut state.params, &grads)?;
            state.bn = fwd.bn.take().expect("train mode returns statistics");
        }
        let (val_loss, val_accuracy) = measure(&state, &val_refs, cfg.batch_size, loss)?;
        let n = train_set.len() as f64;
        let train_accuracy = correct as f64 / n;
        epochs.push(EpochLog { epoch, lr, train_loss: total / n, train_accuracy, val_loss, val_accuracy });
        let reached = cfg.target_train_accuracy.is_some_and(|t| train_accuracy >= t);

        if val_loss < best.0 - cfg.min_delta {
            best = (val_loss, state.clone(), epoch);
            since_best = 0;
            since_lr = 0;
            if reached {
                break;
            }
        } else {
            since_best += 1;
            since_lr += 1;
            if since_best >= cfg.patience || reached {
                break;
            }
            if since_lr >= cfg.lr_patience {
                adam.lr *= 0.5;
                since_lr = 0;
            }
        }
    }

    let (best_val_loss, mut state, best_epoch) = best;
    state.round_to_f32();
    let report = TrainReport {
        seed: cfg.seed,
        model: model.clone(),
        train: cfg.clone(),
        loss: loss.clone(),
        parameter_count: state.parameter_count(),
        parameter_breakdown: parameter_breakdown(&state),
        epochs_run: epochs.len(),
        epochs,
        best_epoch,
        best_val_loss,
        held_out: None,
        test: None,
    };
    Ok((state, report))
}

impl Evaluation {
    /// Tallies `(true, predicted)` pairs.
    pub fn from_predictions(labels: &[usize], predicted: &[usize], classes: usize) -> Result<Self> {
        if labels.is_empty() || labels.len() != predicted.len() {
            return Err(Error::Config(format!("{} labels for {} predictions", labels.len(), predicted.len())));
        }
        let mut counts = vec![vec![0usize; classes]; classes];
        for (&y, &p) in labels.iter().zip(predicted) {
            if let Some(&label) = [y, p].iter().find(|&&c| c >= classes) {
                return Err(Error::Label { label, classes });
            }
            counts[y][p] += 1;
        }
        let correct: usize = (0..classes).map(|c| counts[c][c]).sum();
        let confusion = counts
            .iter()
            .map(|row| {
                let n: usize = row.iter().sum();
                row.iter().map(|&c| if n == 0 { 0.0 } else { 100.0 * c as f64 / n as f64 }).collect()
            })
            .collect();
        Ok(Evaluation { accuracy: correct as f64 / labels.len() as f64, confusion, counts })
    }
}

/// Infer-mode accuracy and confusion matrix.
pub fn evaluate(state: &ModelState, samples: &[WindowSample]) -> Result<Evaluation> {
    let mut predicted = Vec::with_capacity(samples.len());
    let mut rng = seed::rng(0, &[]);
    for chunk in samples.chunks(32) {
        let refs: Vec<&WindowSample> = chunk.iter().collect();
        predicted.extend(forward_batch(state, &refs, Mode::Infer, &mut rng)?.outputs().iter().map(|o| o.predicted()));
    }
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    Evaluation::from_predictions(&labels, &predicted, state.config.classes)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LopoSummary {
    pub reports: Vec<TrainReport>,
    pub max_accuracy: f64,
    pub mean_accuracy: f64,
}

impl LopoSummary {
    pub fn from_reports(reports: Vec<TrainReport>) -> Self {
        let acc: Vec<f64> = reports.iter().filter_map(|r| r.test.as_ref().map(|t| t.accuracy)).collect();
        let max_accuracy = acc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean_accuracy = acc.iter().sum::<f64>() / acc.len() as f64;
        LopoSummary { reports, max_accuracy, mean_accuracy }
    }
}

/// One train/evaluate cycle per held-out participant, in ascending order.
/// `on_fold` sees each finished fold (for progress output or checkpoints).
pub fn lopo_run(
    samples: &[WindowSample],
    model: &ModelConfig,
    cfg: &TrainConfig,
    loss: &HybridLossConfig,
    mut on_fold: impl FnMut(&ModelState, &TrainReport) -> Result<()>,
) -> Result<LopoSummary> {
    let mut participants: Vec<usize> = samples.iter().map(|s| s.participant).collect();
    participants.sort_unstable();
    participants.dedup();
    if participants.len() < 2 {
        return Err(Error::Split(format!("LOPO needs at least 2 participants, found {}", participants.len())));
    }
    let pick = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect::<Vec<_>>();
    let mut reports = Vec::with_capacity(participants.len());
    for &p in &participants {
        let split = lopo_split(samples, p, cfg.seed)?;
        let fold_cfg = TrainConfig { seed: seed::derive(cfg.seed, &[5, p as u64]), ..cfg.clone() };
        let (state, mut report) = train(&pick(&split.train), &pick(&split.validation), model, &fold_cfg, loss)?;
        report.held_out = Some(p);
        report.test = Some(evaluate(&state, &pick(&split.test))?);
        on_fold(&state, &report)?;
        reports.push(report);
    }
    Ok(LopoSummary::from_reports(reports))
}
