//! Mini-batch training with decoupled weight decay.
//!
//! The loop is single-threaded and fully deterministic: per-epoch shuffle
//! order and per-batch dropout masks come from seeds derived off
//! [`TrainConfig::seed`], so a given (dataset, split, config) always produces
//! the same model.

use rand::seq::SliceRandom;

use super::tensor::{assemble_input, Scalar, Tensor};
use super::{ModuleGrads, TouchNetModel};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::grid::TactileImage;
use crate::probe_plan::PlanSplit;
use crate::rng::{derive_seed, rng_from};

/// Optimizer and schedule settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Run validation every this many epochs (the first and last epoch
    /// always validate); other epochs carry the previous value forward.
    pub val_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            weight_decay: 1e-4,
            batch_size: 64,
            epochs: 60,
            seed: 0,
            val_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.val_every == 0 {
            return Err(Error::InvalidArgument(
                "batch size, epochs, and validation cadence must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Per-epoch loss curves; both vectors have exactly `epochs` entries.
/// Validation entries repeat the most recent measurement on epochs where
/// validation was skipped, and are NaN when the split has no validation
/// points.
#[derive(Debug, Clone, PartialEq)]
pub struct LossHistory {
    pub train_mse: Vec<f64>,
    pub val_mse: Vec<f64>,
}

/// Epoch budget for a training fraction: 60 epochs at the reference
/// fraction of 80%, scaled inversely for smaller fractions so every run
/// sees the same number of gradient steps per training sample.
pub fn epochs_for_fraction(p: f64) -> Result<usize> {
    if !(p > 0.0 && p <= 0.8) {
        return Err(Error::InvalidArgument(format!(
            "training fraction must be in (0, 0.8], got {p}"
        )));
    }
    Ok((60.0 * (0.8 / p)).round() as usize)
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
struct ParamState {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl ParamState {
    fn sized(n: usize) -> Self {
        ParamState { m: vec![0.0; n], v: vec![0.0; n] }
    }
}

/// Adam with decoupled weight decay. Decay applies to convolution weights
/// only — never to biases or batch-norm scale/shift. Moments are kept in
/// f64; a step with zero gradients and zero decay leaves parameters
/// bit-identical.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    state: Vec<[ParamState; 4]>,
}

impl AdamW {
    pub fn new<T: Scalar>(model: &TouchNetModel<T>, learning_rate: f64, weight_decay: f64) -> Self {
        let state = model
            .modules
            .iter()
            .map(|m| {
                [
                    ParamState::sized(m.conv.w.len()),
                    ParamState::sized(m.conv.b.len()),
                    ParamState::sized(m.bn.gamma.len()),
                    ParamState::sized(m.bn.beta.len()),
                ]
            })
            .collect();
        AdamW {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            state,
        }
    }

    fn update<T: Scalar>(&self, p: &mut [T], g: &[f64], s: &mut ParamState, decay: bool) {
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let wd = if decay { self.weight_decay } else { 0.0 };
        for i in 0..p.len() {
            let gi = g[i];
            s.m[i] = self.beta1 * s.m[i] + (1.0 - self.beta1) * gi;
            s.v[i] = self.beta2 * s.v[i] + (1.0 - self.beta2) * gi * gi;
            let mhat = s.m[i] / bc1;
            let vhat = s.v[i] / bc2;
            let pi = p[i].to_f64();
            p[i] = T::from_f64(pi - self.learning_rate * (mhat / (vhat.sqrt() + self.eps) + wd * pi));
        }
    }

    pub fn step<T: Scalar>(&mut self, model: &mut TouchNetModel<T>, grads: &[ModuleGrads]) {
        assert_eq!(grads.len(), model.modules.len(), "gradient count");
        self.t += 1;
        // Split borrows: state is &mut self, parameters are &mut model.
        let mut state = std::mem::take(&mut self.state);
        for ((m, g), s) in model.modules.iter_mut().zip(grads).zip(&mut state) {
            self.update(&mut m.conv.w, &g.dw, &mut s[0], true);
            self.update(&mut m.conv.b, &g.db, &mut s[1], false);
            self.update(&mut m.bn.gamma, &g.dgamma, &mut s[2], false);
            self.update(&mut m.bn.beta, &g.dbeta, &mut s[3], false);
        }
        self.state = state;
    }
}

// ---------------------------------------------------------------------------
// Loss and batching
// ---------------------------------------------------------------------------

fn batch_tensors<T: Scalar>(dataset: &Dataset, idx: &[usize]) -> Result<(Tensor<T>, Tensor<T>)> {
    let images: Vec<&TactileImage> = idx.iter().map(|&i| &dataset.samples[i].image).collect();
    let x = assemble_input::<T>(&images)?;
    let mut y = Tensor::zeros(idx.len(), 2, x.h, x.w);
    for (n, &i) in idx.iter().enumerate() {
        let label = &dataset.samples[i].label;
        if label.rows != x.h || label.cols != x.w {
            return Err(Error::InvalidArgument(format!(
                "sample {i} label is {}x{}, image is {}x{}",
                label.rows, label.cols, x.h, x.w
            )));
        }
        for (dst, &v) in y.plane_mut(n, 0).iter_mut().zip(&label.gx) {
            *dst = T::from_f64(v);
        }
        for (dst, &v) in y.plane_mut(n, 1).iter_mut().zip(&label.gy) {
            *dst = T::from_f64(v);
        }
    }
    Ok((x, y))
}

/// Mean squared error over every element, and its gradient w.r.t. the
/// prediction.
fn mse_and_grad<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> (f64, Tensor<T>) {
    let count = pred.data.len() as f64;
    let mut grad = Tensor::zeros(pred.n, pred.c, pred.h, pred.w);
    let mut sum = 0.0f64;
    for i in 0..pred.data.len() {
        let d = pred.data[i].to_f64() - target.data[i].to_f64();
        sum += d * d;
        grad.data[i] = T::from_f64(2.0 * d / count);
    }
    (sum / count, grad)
}

fn plain_mse<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> (f64, usize) {
    let mut sum = 0.0f64;
    for (a, b) in pred.data.iter().zip(&target.data) {
        let d = a.to_f64() - b.to_f64();
        sum += d * d;
    }
    (sum, pred.data.len())
}

/// Mean squared error of eval-mode inference over the samples belonging to
/// the given probe-plan indices.
pub fn dataset_mse<T: Scalar>(
    model: &TouchNetModel<T>,
    dataset: &Dataset,
    plan_indices: &[usize],
    batch_size: usize,
) -> Result<f64> {
    let wanted: std::collections::BTreeSet<usize> = plan_indices.iter().copied().collect();
    let idx: Vec<usize> = dataset
        .samples
        .iter()
        .enumerate()
        .filter(|(_, s)| wanted.contains(&s.plan_index))
        .map(|(i, _)| i)
        .collect();
    if idx.is_empty() {
        return Err(Error::InvalidArgument(
            "no samples match the requested plan indices".into(),
        ));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, y) = batch_tensors::<T>(dataset, chunk)?;
        let pred = model.eval_forward(&x)?;
        let (s, n) = plain_mse(&pred, &y);
        sum += s;
        count += n;
    }
    Ok(sum / count as f64)
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

/// Trains the model on the samples whose probe points fall in
/// `split.train_indices`, validating on `split.val_indices`.
pub fn train(
    mut model: TouchNetModel<f32>,
    dataset: &Dataset,
    split: &PlanSplit,
    config: &TrainConfig,
) -> Result<(TouchNetModel<f32>, LossHistory)> {
    config.validate()?;
    model.config.validate()?;
    let member = |list: &[usize]| -> Vec<usize> {
        let wanted: std::collections::BTreeSet<usize> = list.iter().copied().collect();
        dataset
            .samples
            .iter()
            .enumerate()
            .filter(|(_, s)| wanted.contains(&s.plan_index))
            .map(|(i, _)| i)
            .collect()
    };
    let train_idx = member(&split.train_indices);
    let val_idx = member(&split.val_indices);
    if train_idx.is_empty() {
        return Err(Error::InvalidArgument(
            "split selects no training samples from the dataset".into(),
        ));
    }
    let mut opt = AdamW::new(&model, config.learning_rate, config.weight_decay);
    let mut history = LossHistory {
        train_mse: Vec::with_capacity(config.epochs),
        val_mse: Vec::with_capacity(config.epochs),
    };
    let mut last_val = f64::NAN;
    for epoch in 0..config.epochs {
        let mut order = train_idx.clone();
        order.shuffle(&mut rng_from(derive_seed(
            config.seed,
            "train/shuffle",
            &[epoch as u64],
        )));
        let mut loss_sum = 0.0;
        let mut weight_sum = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let (x, y) = batch_tensors::<f32>(dataset, chunk)?;
            let dropout_seed =
                derive_seed(config.seed, "train/dropout", &[epoch as u64, b as u64]);
            let (pred, caches, stats) =
                model.train_forward(&x, dropout_seed).map_err(|e| diverged(epoch, e))?;
            for (m, s) in model.modules.iter_mut().zip(&stats) {
                m.bn.fold_running(s);
            }
            let (loss, dpred) = mse_and_grad(&pred, &y);
            if !loss.is_finite() {
                return Err(diverged(epoch, Error::Numeric("loss is not finite".into())));
            }
            loss_sum += loss * chunk.len() as f64;
            weight_sum += chunk.len() as f64;
            let (grads, _) = model.backward(&caches, &dpred);
            opt.step(&mut model, &grads);
        }
        history.train_mse.push(loss_sum / weight_sum);
        let validate_now =
            epoch == 0 || (epoch + 1) % config.val_every == 0 || epoch + 1 == config.epochs;
        if validate_now && !val_idx.is_empty() {
            let mut sum = 0.0;
            let mut count = 0usize;
            for chunk in val_idx.chunks(config.batch_size) {
                let (x, y) = batch_tensors::<f32>(dataset, chunk)?;
                let pred = model.eval_forward(&x)?;
                let (s, n) = plain_mse(&pred, &y);
                sum += s;
                count += n;
            }
            last_val = sum / count as f64;
        }
        history.val_mse.push(last_val);
        log::debug!(
            "epoch {}/{}: train mse {:.3e}, val mse {:.3e}",
            epoch + 1,
            config.epochs,
            history.train_mse[epoch],
            last_val
        );
    }
    Ok((model, history))
}

fn diverged(epoch: usize, inner: Error) -> Error {
    Error::Numeric(format!("training diverged at epoch {}: {inner}", epoch + 1))
}
