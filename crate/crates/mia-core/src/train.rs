//! Training: soft Dice and cross-entropy losses, Adam with per-step cosine
//! annealing of the learning rate, and a seeded, reproducible loop over
//! shuffled mini-batches.

use crate::autograd::Graph;
use crate::backbone::{Model, NamedParam};
use crate::data::{shuffled_indices, BatchTargets, Dataset};
use crate::error::{Error, Result};
use crate::metrics;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Smoothing constant of the soft Dice loss; keeps it defined on empty masks.
pub const DICE_EPSILON: f64 = 1.0;
/// Threshold used to binarize segmenter probabilities for metrics.
pub const MASK_THRESHOLD: f64 = 0.5;

/// Which objective the loop optimizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    CrossEntropy,
    /// Soft Dice between predicted probabilities and binary masks.
    Dice,
    /// Soft Dice between sigmoid-gated logits and one-hot labels, for
    /// running classification under a Dice objective.
    DiceOnehot,
}

impl LossKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            LossKind::CrossEntropy => "cross-entropy",
            LossKind::Dice => "dice",
            LossKind::DiceOnehot => "dice-onehot",
        }
    }
}

/// Loop hyperparameters. Defaults: lr 0.01, batch 16, 10 epochs, lr_min 0.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub lr_init: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_min: f64,
    pub loss: LossKind,
    pub seed: u64,
    /// Keep the attention gate biases (*.b1, *.b2) pinned at their zero
    /// init, recovering the bias-free formulation of the channel gate.
    pub freeze_gate_biases: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_init: 0.01,
            batch_size: 16,
            epochs: 10,
            lr_min: 0.0,
            loss: LossKind::CrossEntropy,
            seed: 0,
            freeze_gate_biases: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_init > self.lr_min && self.lr_min >= 0.0) {
            return Err(Error::InvalidConfig {
                detail: format!("need lr_init > lr_min >= 0, got {} and {}", self.lr_init, self.lr_min),
            });
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidConfig { detail: "batch_size must be >= 1".into() });
        }
        if self.epochs < 1 {
            return Err(Error::InvalidConfig { detail: "epochs must be >= 1".into() });
        }
        Ok(())
    }
}

/// Cosine-annealed learning rate at step `t` of `total`:
/// lr_min + 0.5 (lr_init - lr_min) (1 + cos(pi t / total)).
pub fn cosine_lr(t: usize, total: usize, lr_init: f64, lr_min: f64) -> f64 {
    assert!(total >= 1 && t <= total, "need 0 <= t <= total, total >= 1");
    lr_min + 0.5 * (lr_init - lr_min) * (1.0 + (std::f64::consts::PI * t as f64 / total as f64).cos())
}

/// Adam moment estimates, one pair per parameter, aligned with the
/// parameter list order.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &[NamedParam]) -> AdamState {
        AdamState {
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: params.iter().map(|p| Tensor::zeros_like(&p.tensor)).collect(),
            v: params.iter().map(|p| Tensor::zeros_like(&p.tensor)).collect(),
        }
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.v
    }
}

/// One bias-corrected Adam update across all parameters.
pub fn adam_step(
    params: &mut [NamedParam],
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::LengthMismatch { left: params.len(), right: grads.len() });
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        if p.tensor.dims() != g.dims() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                detail: format!("param '{}' is {}, grad is {}", p.name, p.tensor.shape(), g.shape()),
            });
        }
        let md = m.data_mut();
        let vd = v.data_mut();
        let pd = p.tensor.data_mut();
        for i in 0..pd.len() {
            let gi = g.data()[i];
            md[i] = state.beta1 * md[i] + (1.0 - state.beta1) * gi;
            vd[i] = state.beta2 * vd[i] + (1.0 - state.beta2) * gi * gi;
            let m_hat = md[i] / bc1;
            let v_hat = vd[i] / bc2;
            pd[i] -= lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

/// Soft Dice loss on plain tensors (no graph).
pub fn dice_loss(pred: &Tensor, target: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let p = g.constant(pred.clone());
    let t = g.constant(target.clone());
    let loss = g.dice_loss(p, t, DICE_EPSILON)?;
    Ok(g.value(loss).data()[0])
}

/// Cross-entropy loss on plain tensors (no graph).
pub fn cross_entropy_loss(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let mut g = Graph::new();
    let l = g.constant(logits.clone());
    let loss = g.softmax_ce(l, labels)?;
    Ok(g.value(loss).data()[0])
}

/// One epoch's summary, serializable as a log line.
#[derive(Clone, Debug)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Cumulative optimizer steps taken so far.
    pub step: usize,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    /// Mean loss over the epoch's batches.
    pub loss: f64,
    pub accuracy: Option<f64>,
    pub dice: Option<f64>,
}

impl EpochRecord {
    /// `epoch=<n> step=<n> lr=<f> loss=<f> [acc=<f>] [dice=<f>]`
    pub fn to_line(&self) -> String {
        let mut line = format!(
            "epoch={} step={} lr={} loss={}",
            self.epoch, self.step, self.lr, self.loss
        );
        if let Some(acc) = self.accuracy {
            line.push_str(&format!(" acc={acc}"));
        }
        if let Some(dice) = self.dice {
            line.push_str(&format!(" dice={dice}"));
        }
        line
    }
}

/// Row-wise argmax of (N,K) logits.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let k = logits.dims()[1];
    logits
        .data()
        .chunks_exact(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
                .map(|(i, _)| i)
                .expect("k >= 1")
        })
        .collect()
}

fn one_hot(labels: &[usize], classes: usize) -> Tensor {
    let mut data = vec![0.0; labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        data[i * classes + l] = 1.0;
    }
    Tensor::from_dims(&[labels.len(), classes], data).expect("one-hot shape")
}

/// Run `cfg.epochs` of shuffled mini-batch training with Adam and a
/// per-step cosine schedule over epochs x steps_per_epoch. Deterministic
/// for a fixed seed: identical config, data, and seed give bit-identical
/// parameters and logs.
pub fn train_loop(model: &mut Model, data: &Dataset, cfg: &TrainConfig) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    let n = data.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * steps_per_epoch;
    let mut rng = Rng::new(cfg.seed);
    let mut adam = AdamState::new(model.params());
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut global_step = 0usize;

    for epoch in 1..=cfg.epochs {
        let order = shuffled_indices(n, &mut rng);
        let mut loss_sum = 0.0;
        let mut lr_last = cfg.lr_init;
        // classification tallies
        let mut correct = 0usize;
        // segmentation tallies: 2|P n G|, |P| + |G|
        let mut inter2 = 0.0f64;
        let mut sizes = 0.0f64;

        for batch in order.chunks(cfg.batch_size) {
            let (x, targets) = data.gather(batch)?;
            let mut g = Graph::new();
            let pass = model.forward_on(&mut g, &x)?;
            let loss_id = match (&targets, cfg.loss) {
                (BatchTargets::Labels(labels), LossKind::CrossEntropy) => {
                    g.softmax_ce(pass.output, labels)?
                }
                (BatchTargets::Labels(labels), LossKind::DiceOnehot) => {
                    let classes = model.classes().ok_or(Error::InvalidConfig {
                        detail: "dice-onehot needs a classifier".into(),
                    })?;
                    let gated = g.sigmoid(pass.output)?;
                    let flat = g.reshape(gated, &[labels.len(), 1, 1, classes])?;
                    let target = g.constant(one_hot(labels, classes).reshaped(&[labels.len(), 1, 1, classes])?);
                    g.dice_loss(flat, target, DICE_EPSILON)?
                }
                (BatchTargets::Masks(masks), LossKind::Dice) => {
                    let t = g.constant(masks.clone());
                    g.dice_loss(pass.output, t, DICE_EPSILON)?
                }
                (BatchTargets::Masks(_), _) => {
                    return Err(Error::InvalidConfig {
                        detail: format!("loss '{}' does not apply to mask targets", cfg.loss.as_str()),
                    })
                }
                (BatchTargets::Labels(_), LossKind::Dice) => {
                    return Err(Error::InvalidConfig {
                        detail: "plain dice loss needs mask targets; use dice-onehot for labels".into(),
                    })
                }
            };
            let lr = cosine_lr(global_step, total_steps, cfg.lr_init, cfg.lr_min);
            let grads = g.backward(loss_id)?;
            let mut grad_vec: Vec<Tensor> = pass
                .param_ids
                .iter()
                .map(|&id| grads.wrt(id).expect("registered parameter").clone())
                .collect();
            if cfg.freeze_gate_biases {
                for (param, grad) in model.params().iter().zip(grad_vec.iter_mut()) {
                    if param.name.starts_with("mia")
                        && (param.name.ends_with(".b1") || param.name.ends_with(".b2"))
                    {
                        *grad = Tensor::zeros_like(grad);
                    }
                }
            }
            adam_step(model.params_mut(), &grad_vec, &mut adam, lr)?;

            loss_sum += g.value(loss_id).data()[0];
            lr_last = lr;
            global_step += 1;

            match &targets {
                BatchTargets::Labels(labels) => {
                    let pred = argmax_rows(g.value(pass.output));
                    correct += pred.iter().zip(labels).filter(|(p, t)| p == t).count();
                }
                BatchTargets::Masks(masks) => {
                    let bin = metrics::binarize_mask(g.value(pass.output), MASK_THRESHOLD);
                    for (&p, &t) in bin.data().iter().zip(masks.data()) {
                        inter2 += 2.0 * p * t;
                        sizes += p + t;
                    }
                }
            }
        }

        let (accuracy, dice) = if data.is_masks() {
            let d = if sizes > 0.0 { inter2 / sizes } else { 1.0 };
            (None, Some(d))
        } else {
            (Some(correct as f64 / n as f64), None)
        };
        records.push(EpochRecord {
            epoch,
            step: global_step,
            lr: lr_last,
            loss: loss_sum / steps_per_epoch as f64,
            accuracy,
            dice,
        });
    }
    Ok(records)
}

/// Evaluate a model on a dataset: macro/binary classification metrics for
/// label targets, pixelwise metrics plus Dice for mask targets.
pub fn evaluate(model: &Model, data: &Dataset) -> Result<metrics::MetricReport> {
    let n = data.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if data.is_masks() {
        let mut pred_all = Vec::with_capacity(n * data.sample_dims().1 * data.sample_dims().2);
        let mut truth_all = Vec::with_capacity(pred_all.capacity());
        for chunk in (0..n).collect::<Vec<_>>().chunks(32) {
            let (x, targets) = data.gather(chunk)?;
            let out = model.predict(&x)?;
            let bin = metrics::binarize_mask(&out, MASK_THRESHOLD);
            pred_all.extend_from_slice(bin.data());
            match targets {
                BatchTargets::Masks(m) => truth_all.extend_from_slice(m.data()),
                _ => unreachable!("mask dataset yields mask targets"),
            }
        }
        let pred = Tensor::from_dims(&[pred_all.len()], pred_all)?;
        let truth = Tensor::from_dims(&[truth_all.len()], truth_all)?;
        metrics::segmentation_report(&pred, &truth)
    } else {
        let classes = data.classes().expect("label dataset");
        let mut pred_all = Vec::with_capacity(n);
        let mut truth_all = Vec::with_capacity(n);
        for chunk in (0..n).collect::<Vec<_>>().chunks(64) {
            let (x, targets) = data.gather(chunk)?;
            let logits = model.predict(&x)?;
            pred_all.extend(argmax_rows(&logits));
            match targets {
                BatchTargets::Labels(l) => truth_all.extend(l),
                _ => unreachable!("label dataset yields label targets"),
            }
        }
        metrics::classification_report(&pred_all, &truth_all, classes)
    }
}
