//! Convolutional gradient-map regressor: definition, inference, from-scratch
//! training, and checkpointing.
//!
//! The network maps a 5-channel input — RGB scaled to [0, 1] plus the fixed
//! 2-channel coordinate embedding — through nine conv → batch-norm → ReLU →
//! spatial-dropout modules to a 2-channel surface gradient map. The final
//! module keeps only conv → batch-norm so outputs can be signed. All
//! differentiation is hand-written reverse mode; see [`layers`].

mod check;
mod layers;
mod tensor;
mod train;

pub use check::{composite_grad_check, grad_check_batchnorm, grad_check_conv, grad_check_relu};
pub use layers::{BatchNorm, BnCache, BnStats, Conv};
pub use tensor::{assemble_input, coordinate_embedding, Scalar, Tensor};
pub use train::{dataset_mse, epochs_for_fraction, train, AdamW, LossHistory, TrainConfig};

use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::{crc32, GradientMap, GridBlob, TactileImage, Units};
use crate::rng::{derive_seed, rng_from};

/// Number of input channels: three of color and two of position.
pub const INPUT_CHANNELS: usize = 5;

const CHECKPOINT_MAGIC: &[u8; 7] = b"3DCNET1";

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TouchNetConfig {
    /// Output width of each of the nine modules; the last must be 2.
    pub module_channels: Vec<usize>,
    /// Square odd kernel size used by every convolution.
    pub kernel_size: usize,
    /// Whole-channel dropout probability, active in train mode only.
    pub dropout_p: f64,
    /// Always [`INPUT_CHANNELS`]; kept explicit so checkpoints are
    /// self-describing.
    pub input_channels: usize,
}

impl Default for TouchNetConfig {
    fn default() -> Self {
        TouchNetConfig {
            module_channels: vec![32, 64, 128, 256, 256, 128, 64, 32, 2],
            kernel_size: 3,
            dropout_p: 0.1,
            input_channels: INPUT_CHANNELS,
        }
    }
}

impl TouchNetConfig {
    /// Like `Default`, but with every hidden width set to `width` — the
    /// shape of the network used by the fast test and demo paths.
    pub fn narrow(width: usize) -> Self {
        let mut channels = vec![width; 8];
        channels.push(2);
        TouchNetConfig { module_channels: channels, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.module_channels.len() != 9 {
            return Err(Error::InvalidArgument(format!(
                "network must have exactly 9 modules, got {}",
                self.module_channels.len()
            )));
        }
        if *self.module_channels.last().unwrap() != 2 {
            return Err(Error::InvalidArgument(format!(
                "last module must output 2 channels, got {}",
                self.module_channels.last().unwrap()
            )));
        }
        if let Some(&w) = self.module_channels.iter().find(|&&w| w == 0 || w > 256) {
            return Err(Error::InvalidArgument(format!(
                "module widths must be in 1..=256, got {w}"
            )));
        }
        if self.kernel_size == 0 || self.kernel_size % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "kernel size must be odd and positive, got {}",
                self.kernel_size
            )));
        }
        if !(self.dropout_p >= 0.0 && self.dropout_p < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "dropout probability must be in [0, 1), got {}",
                self.dropout_p
            )));
        }
        if self.input_channels != INPUT_CHANNELS {
            return Err(Error::InvalidArgument(format!(
                "input channels are fixed at {INPUT_CHANNELS}, got {}",
                self.input_channels
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

/// One conv → batch-norm module (ReLU and dropout carry no parameters).
#[derive(Debug, Clone, PartialEq)]
pub struct TouchModule<T> {
    pub conv: Conv<T>,
    pub bn: BatchNorm<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TouchNetModel<T> {
    pub config: TouchNetConfig,
    pub modules: Vec<TouchModule<T>>,
}

/// How a forward pass treats batch norm and dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    /// Batch statistics, dropout active. Does not mutate the model.
    Train,
    /// Running statistics, dropout off. Deterministic.
    Eval,
}

/// Per-module activations retained for the backward pass.
pub struct ModuleCache<T> {
    /// Input to the module's convolution.
    pub x_in: Tensor<T>,
    pub bn: BnCache<T>,
    /// `None` for the final module, which has no ReLU.
    pub relu_mask: Option<Vec<u8>>,
    /// `None` for the final module, which has no dropout.
    pub dropout: Option<Vec<T>>,
}

/// Parameter gradients for one module, accumulated in f64.
pub struct ModuleGrads {
    pub dw: Vec<f64>,
    pub db: Vec<f64>,
    pub dgamma: Vec<f64>,
    pub dbeta: Vec<f64>,
}

impl<T: Scalar> TouchNetModel<T> {
    /// Fresh model: conv weights drawn from a fan-in-scaled normal
    /// distribution, biases zero, batch-norm scale 1 / shift 0 with unit
    /// running variance.
    pub fn init(config: &TouchNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let k = config.kernel_size;
        let mut modules = Vec::with_capacity(9);
        let mut c_in = config.input_channels;
        for (i, &c_out) in config.module_channels.iter().enumerate() {
            let mut rng = rng_from(derive_seed(seed, "net/init", &[i as u64]));
            let fan_in = (c_in * k * k) as f64;
            let std = (2.0 / fan_in).sqrt();
            let w = (0..c_out * c_in * k * k)
                .map(|_| {
                    // Box–Muller; 1−u keeps the log argument in (0, 1].
                    let u1: f64 = 1.0 - rng.gen::<f64>();
                    let u2: f64 = rng.gen();
                    let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                    T::from_f64(z * std)
                })
                .collect();
            modules.push(TouchModule {
                conv: Conv { c_in, c_out, k, w, b: vec![T::zero(); c_out] },
                bn: BatchNorm::identity(c_out),
            });
            c_in = c_out;
        }
        Ok(TouchNetModel { config: config.clone(), modules })
    }

    /// Same parameters in a different element type (used to cross-check the
    /// f32 arithmetic against f64).
    pub fn cast<U: Scalar>(&self) -> TouchNetModel<U> {
        let modules = self
            .modules
            .iter()
            .map(|m| TouchModule {
                conv: Conv {
                    c_in: m.conv.c_in,
                    c_out: m.conv.c_out,
                    k: m.conv.k,
                    w: m.conv.w.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
                    b: m.conv.b.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
                },
                bn: BatchNorm {
                    c: m.bn.c,
                    gamma: m.bn.gamma.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
                    beta: m.bn.beta.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
                    running_mean: m.bn.running_mean.clone(),
                    running_var: m.bn.running_var.clone(),
                    eps: m.bn.eps,
                    momentum: m.bn.momentum,
                },
            })
            .collect();
        TouchNetModel { config: self.config.clone(), modules }
    }

    fn check_finite(&self, x: &Tensor<T>, module_index: usize) -> Result<()> {
        if x.all_finite() {
            Ok(())
        } else {
            Err(Error::Numeric(format!(
                "non-finite activation in module {}",
                module_index + 1
            )))
        }
    }

    /// Forward with batch statistics and dropout; retains what the backward
    /// pass needs. Mutates nothing — fold the returned [`BnStats`] into the
    /// running estimates separately if this pass is a training step.
    pub fn train_forward(
        &self,
        x: &Tensor<T>,
        seed: u64,
    ) -> Result<(Tensor<T>, Vec<ModuleCache<T>>, Vec<BnStats>)> {
        let mut caches = Vec::with_capacity(self.modules.len());
        let mut stats_out = Vec::with_capacity(self.modules.len());
        let mut cur = x.clone();
        let last = self.modules.len() - 1;
        for (i, m) in self.modules.iter().enumerate() {
            let x_in = cur;
            let z = m.conv.forward(&x_in);
            let (y, bn_cache, stats) = m.bn.batch_forward(&z);
            // Checked before the ReLU, which would otherwise clamp NaN to 0
            // and hide the corruption.
            self.check_finite(&y, i)?;
            stats_out.push(stats);
            let (out, relu_mask, dropout) = if i < last {
                let (a, mask) = layers::relu_forward(&y);
                let (d, scales) = layers::spatial_dropout_forward(
                    &a,
                    self.config.dropout_p,
                    derive_seed(seed, "net/dropout", &[i as u64]),
                );
                (d, Some(mask), Some(scales))
            } else {
                (y, None, None)
            };
            caches.push(ModuleCache { x_in, bn: bn_cache, relu_mask, dropout });
            cur = out;
        }
        Ok((cur, caches, stats_out))
    }

    /// Deterministic forward with running statistics and dropout off.
    pub fn eval_forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut cur = x.clone();
        let last = self.modules.len() - 1;
        for (i, m) in self.modules.iter().enumerate() {
            let z = m.conv.forward(&cur);
            let y = m.bn.forward_eval(&z);
            self.check_finite(&y, i)?;
            cur = if i < last { layers::relu_forward(&y).0 } else { y };
        }
        Ok(cur)
    }

    /// Reverse pass from the output gradient; returns per-module parameter
    /// gradients and the gradient w.r.t. the network input.
    pub fn backward(
        &self,
        caches: &[ModuleCache<T>],
        dy: &Tensor<T>,
    ) -> (Vec<ModuleGrads>, Tensor<T>) {
        let last = self.modules.len() - 1;
        let mut grads: Vec<Option<ModuleGrads>> = (0..self.modules.len()).map(|_| None).collect();
        let mut dcur = dy.clone();
        for i in (0..self.modules.len()).rev() {
            let m = &self.modules[i];
            let cache = &caches[i];
            if i < last {
                dcur = layers::spatial_dropout_backward(&dcur, cache.dropout.as_ref().unwrap());
                dcur = layers::relu_backward(&dcur, cache.relu_mask.as_ref().unwrap());
            }
            let (dz, dgamma, dbeta) = m.bn.backward(&cache.bn, &dcur);
            let (dw, db) = m.conv.backward_params(&cache.x_in, &dz);
            grads[i] = Some(ModuleGrads { dw, db, dgamma, dbeta });
            dcur = m.conv.backward_input(&cache.x_in, &dz);
        }
        (grads.into_iter().map(Option::unwrap).collect(), dcur)
    }
}

/// Runs one image through the network and splits the 2-channel output into
/// a gradient map (channel 0 = ∂z/∂x, channel 1 = ∂z/∂y).
///
/// `seed` drives the dropout masks and matters only in train mode. Neither
/// mode mutates the model.
pub fn forward<T: Scalar>(
    model: &TouchNetModel<T>,
    image: &TactileImage,
    mode: ForwardMode,
    seed: u64,
) -> Result<GradientMap> {
    let k = model.config.kernel_size;
    if image.rows < k || image.cols < k {
        return Err(Error::InvalidArgument(format!(
            "image {}x{} is smaller than the {k}x{k} kernel",
            image.rows, image.cols
        )));
    }
    let x = assemble_input::<T>(&[image])?;
    let out = match mode {
        ForwardMode::Train => model.train_forward(&x, seed)?.0,
        ForwardMode::Eval => model.eval_forward(&x)?,
    };
    let gx = out.plane(0, 0).iter().map(|v| v.to_f64()).collect();
    let gy = out.plane(0, 1).iter().map(|v| v.to_f64()).collect();
    GradientMap::new(image.rows, image.cols, gx, gy)
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

fn push_tensor(out: &mut Vec<u8>, name: &str, rows: usize, cols: usize, data: Vec<f32>) {
    let blob = GridBlob::new(rows, cols, 1, Units::Dimensionless, data)
        .expect("checkpoint tensor shape");
    let bytes = blob.to_bytes();
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&bytes);
}

impl<T: Scalar> TouchNetModel<T> {
    /// Serializes the model: magic, config block, then named parameter
    /// tensors in the shared grid format, with a whole-file CRC32 trailer.
    /// Parameters and running statistics are stored as f32, so
    /// save → load → save is byte-stable even though in-memory running
    /// statistics are kept in f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(self.config.module_channels.len() as u32).to_le_bytes());
        for &w in &self.config.module_channels {
            out.extend_from_slice(&(w as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.config.kernel_size as u32).to_le_bytes());
        out.extend_from_slice(&self.config.dropout_p.to_le_bytes());
        out.extend_from_slice(&(self.config.input_channels as u32).to_le_bytes());
        out.extend_from_slice(&((self.modules.len() * 6) as u32).to_le_bytes());
        let as_f32 = |v: &[T]| v.iter().map(|&x| x.to_f64() as f32).collect::<Vec<f32>>();
        let f64_as_f32 = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<f32>>();
        for (i, m) in self.modules.iter().enumerate() {
            let tag = i + 1;
            let c = m.conv.c_out;
            push_tensor(
                &mut out,
                &format!("m{tag}.conv.w"),
                c,
                m.conv.c_in * m.conv.k * m.conv.k,
                as_f32(&m.conv.w),
            );
            push_tensor(&mut out, &format!("m{tag}.conv.b"), 1, c, as_f32(&m.conv.b));
            push_tensor(&mut out, &format!("m{tag}.bn.gamma"), 1, c, as_f32(&m.bn.gamma));
            push_tensor(&mut out, &format!("m{tag}.bn.beta"), 1, c, as_f32(&m.bn.beta));
            push_tensor(
                &mut out,
                &format!("m{tag}.bn.running_mean"),
                1,
                c,
                f64_as_f32(&m.bn.running_mean),
            );
            push_tensor(
                &mut out,
                &format!("m{tag}.bn.running_var"),
                1,
                c,
                f64_as_f32(&m.bn.running_var),
            );
        }
        let crc = crc32(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

impl TouchNetModel<f32> {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < CHECKPOINT_MAGIC.len() + 4 || &bytes[..7] != CHECKPOINT_MAGIC {
            return Err(Error::Format(
                "not a model checkpoint (bad magic; expected \"3DCNET1\")".into(),
            ));
        }
        let body_end = bytes.len() - 4;
        let stored = u32::from_le_bytes(bytes[body_end..].try_into().unwrap());
        let actual = crc32(&bytes[..body_end]);
        if stored != actual {
            return Err(Error::Format(format!(
                "checkpoint checksum mismatch: stored {stored:#010x}, computed {actual:#010x}"
            )));
        }
        let mut at = 7usize;
        let mut need = |n: usize| -> Result<usize> {
            if at + n > body_end {
                return Err(Error::Format("checkpoint truncated".into()));
            }
            let start = at;
            at += n;
            Ok(start)
        };
        let rd_u32 = |bytes: &[u8], at: usize| {
            u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize
        };
        let start = need(4)?;
        let n_modules = rd_u32(bytes, start);
        if n_modules != 9 {
            return Err(Error::Format(format!(
                "checkpoint declares {n_modules} modules, expected 9"
            )));
        }
        let mut module_channels = Vec::with_capacity(n_modules);
        for _ in 0..n_modules {
            let start = need(4)?;
            module_channels.push(rd_u32(bytes, start));
        }
        let start = need(4)?;
        let kernel_size = rd_u32(bytes, start);
        let start = need(8)?;
        let dropout_p = f64::from_le_bytes(bytes[start..start + 8].try_into().unwrap());
        let start = need(4)?;
        let input_channels = rd_u32(bytes, start);
        let config = TouchNetConfig { module_channels, kernel_size, dropout_p, input_channels };
        config.validate().map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
        let start = need(4)?;
        let tensor_count = rd_u32(bytes, start);
        let mut tensors = std::collections::BTreeMap::new();
        for _ in 0..tensor_count {
            let start = need(2)?;
            let name_len = u16::from_le_bytes(bytes[start..start + 2].try_into().unwrap()) as usize;
            let start = need(name_len)?;
            let name = std::str::from_utf8(&bytes[start..start + name_len])
                .map_err(|_| Error::Format("checkpoint tensor name is not UTF-8".into()))?
                .to_string();
            let start = need(4)?;
            let blob_len = rd_u32(bytes, start);
            let start = need(blob_len)?;
            let blob = GridBlob::from_bytes(&bytes[start..start + blob_len])?;
            tensors.insert(name, blob);
        }
        if at != body_end {
            return Err(Error::Format(format!(
                "checkpoint has {} trailing bytes after the tensor section",
                body_end - at
            )));
        }
        let take = |name: &str, rows: usize, cols: usize| -> Result<Vec<f32>> {
            let blob = tensors
                .get(name)
                .ok_or_else(|| Error::Format(format!("checkpoint missing tensor \"{name}\"")))?;
            if blob.rows != rows || blob.cols != cols || blob.channels != 1 {
                return Err(Error::Format(format!(
                    "checkpoint tensor \"{name}\" has shape {}x{}x{}, expected {rows}x{cols}x1",
                    blob.rows, blob.cols, blob.channels
                )));
            }
            Ok(blob.data.clone())
        };
        let k = config.kernel_size;
        let mut modules = Vec::with_capacity(9);
        let mut c_in = config.input_channels;
        for (i, &c_out) in config.module_channels.iter().enumerate() {
            let tag = i + 1;
            let w = take(&format!("m{tag}.conv.w"), c_out, c_in * k * k)?;
            let b = take(&format!("m{tag}.conv.b"), 1, c_out)?;
            let gamma = take(&format!("m{tag}.bn.gamma"), 1, c_out)?;
            let beta = take(&format!("m{tag}.bn.beta"), 1, c_out)?;
            let rm = take(&format!("m{tag}.bn.running_mean"), 1, c_out)?;
            let rv = take(&format!("m{tag}.bn.running_var"), 1, c_out)?;
            if let Some(v) = rv.iter().find(|v| !(**v > 0.0)) {
                return Err(Error::Format(format!(
                    "checkpoint running variance must be positive, got {v} in module {tag}"
                )));
            }
            modules.push(TouchModule {
                conv: Conv { c_in, c_out, k, w, b },
                bn: BatchNorm {
                    c: c_out,
                    gamma,
                    beta,
                    running_mean: rm.iter().map(|&v| f64::from(v)).collect(),
                    running_var: rv.iter().map(|&v| f64::from(v)).collect(),
                    eps: 1e-5,
                    momentum: 0.1,
                },
            });
            c_in = c_out;
        }
        Ok(TouchNetModel { config, modules })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
