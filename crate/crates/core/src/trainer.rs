//! Plain gradient descent over trainable parameters with linear warmup and
//! cosine decay, plus the conventional `B = 0` adapter initialization used as
//! a baseline.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::adapter::AdapterPair;
use crate::error::{KoreError, Result};
use crate::linalg::Matrix;
use crate::model::{Loss, ToyModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub warmup_ratio: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub loss: Loss,
    pub weight_decay: f64,
    /// Reshuffle examples every epoch from `seed`; off by default.
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 2e-4,
            warmup_ratio: 0.03,
            epochs: 6,
            batch_size: 8,
            seed: 0,
            loss: Loss::Mse,
            weight_decay: 0.0,
            shuffle: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(KoreError::Contract(format!("base_lr must be > 0, got {}", self.base_lr)));
        }
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return Err(KoreError::Contract(format!(
                "warmup_ratio must be in [0, 1), got {}",
                self.warmup_ratio
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(KoreError::Contract("epochs and batch_size must be >= 1".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(KoreError::Contract("weight_decay must be >= 0".into()));
        }
        Ok(())
    }
}

/// `⌈warmup_ratio · total_steps⌉`.
pub fn warmup_steps(total_steps: usize, warmup_ratio: f64) -> usize {
    // The 1e-9 slack keeps products like 0.03 · 1000 from rounding up past 30.
    (warmup_ratio * total_steps as f64 - 1e-9).ceil().max(0.0) as usize
}

/// Learning rate at `step` of `total_steps`: linear ramp from 0 to `base_lr`
/// over the warmup, then `base_lr · ½(1 + cos πt)` with `t` running 0 → 1.
pub fn lr_at(step: usize, total_steps: usize, cfg: &TrainConfig) -> Result<f64> {
    if total_steps == 0 || step > total_steps {
        return Err(KoreError::Contract(format!(
            "step {step} outside 0..={total_steps} (total must be >= 1)"
        )));
    }
    let warm = warmup_steps(total_steps, cfg.warmup_ratio);
    if step < warm {
        return Ok(cfg.base_lr * step as f64 / warm as f64);
    }
    let t = if total_steps > warm {
        (step - warm) as f64 / (total_steps - warm) as f64
    } else {
        1.0
    };
    Ok(cfg.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub input: Vec<f64>,
    #[serde(default)]
    pub target: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

impl Example {
    pub fn new(input: Vec<f64>, target: Vec<f64>) -> Self {
        Example {
            input,
            target,
            category: None,
        }
    }
}

/// Stacks examples column-wise into `(inputs, targets)`.
pub fn batch_matrices(batch: &[&Example]) -> Result<(Matrix, Matrix)> {
    let inputs: Vec<&[f64]> = batch.iter().map(|e| e.input.as_slice()).collect();
    let targets: Vec<&[f64]> = batch.iter().map(|e| e.target.as_slice()).collect();
    Ok((Matrix::from_columns(&inputs)?, Matrix::from_columns(&targets)?))
}

pub fn read_examples(path: &Path) -> Result<Vec<Example>> {
    let file = fs::File::open(path).map_err(|e| KoreError::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| KoreError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: Example = serde_json::from_str(&line)
            .map_err(|e| KoreError::format(path, format!("line {}: {e}", n + 1)))?;
        out.push(ex);
    }
    Ok(out)
}

pub fn write_examples(path: &Path, examples: &[Example]) -> Result<()> {
    let mut buf = Vec::new();
    for ex in examples {
        serde_json::to_writer(&mut buf, ex)?;
        buf.push(b'\n');
    }
    fs::write(path, buf).map_err(|e| KoreError::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<StepRecord>,
    pub checkpoint: Option<PathBuf>,
}

impl TrainHistory {
    pub fn final_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.loss)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| KoreError::io(path, e))?;
        for r in &self.records {
            let line = serde_json::to_string(r)?;
            writeln!(f, "{line}").map_err(|e| KoreError::io(path, e))?;
        }
        Ok(())
    }
}

/// Mean loss of `model` over `data` evaluated as one batch.
pub fn evaluate_loss(model: &ToyModel, data: &[Example], loss: Loss) -> Result<f64> {
    let refs: Vec<&Example> = data.iter().collect();
    let (x, t) = batch_matrices(&refs)?;
    loss.value(&model.predict(&x)?, &t)
}

/// Trains the model's trainable parameters in place.
///
/// Adapter layers only update `B`; their `A`, `W₀'` and bias stay
/// bit-identical. Each step uses `lr_at(step, total)` where `step` counts
/// from 0, so the first update of a warmed-up schedule has rate 0.
pub fn train(model: &mut ToyModel, data: &[Example], cfg: &TrainConfig) -> Result<TrainHistory> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(KoreError::Contract("training set is empty".into()));
    }
    for (i, ex) in data.iter().enumerate() {
        if ex.input.len() != model.input_dim() || ex.target.len() != model.output_dim() {
            return Err(KoreError::shape(
                "train",
                format!(
                    "example {i} is {}→{}, model is {}→{}",
                    ex.input.len(),
                    ex.target.len(),
                    model.input_dim(),
                    model.output_dim()
                ),
            ));
        }
    }
    let per_epoch = data.len().div_ceil(cfg.batch_size);
    let total = cfg.epochs * per_epoch;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = TrainHistory::default();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        if cfg.shuffle {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64));
            order.sort_unstable();
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &data[i]).collect();
            let (x, t) = batch_matrices(&batch)?;
            let out = model.predict(&x)?;
            let (loss, upstream) = cfg.loss.value_and_grad(&out, &t)?;
            if !loss.is_finite() {
                return Err(KoreError::NonFiniteLoss { step });
            }
            let grads = model.backward(&x, &upstream)?.flatten();
            let lr = lr_at(step, total, cfg)?;
            let mut g = grads.iter();
            for buf in model.trainable_mut() {
                for p in buf.iter_mut() {
                    let gi = g.next().expect("gradient layout matches parameters");
                    *p -= lr * (gi + cfg.weight_decay * *p);
                }
            }
            history.records.push(StepRecord { step, lr, loss });
            step += 1;
        }
    }
    Ok(history)
}

/// `A ~ N(0, 1/d_in)` from a seeded generator, `B = 0`.
pub fn standard_lora_init(w0: &Matrix, r: usize, seed: u64) -> Result<AdapterPair> {
    if r == 0 {
        return Err(KoreError::Contract("adapter rank must be >= 1".into()));
    }
    let d_in = w0.cols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0 / (d_in.max(1) as f64).sqrt()).expect("positive std");
    let a = Matrix::from_fn(r, d_in, |_, _| normal.sample(&mut rng));
    AdapterPair::new(a, Matrix::zeros(w0.rows(), r))
}

/// Installs a [`standard_lora_init`] adapter on every layer, seeding layer `i`
/// with `seed + i`. Base weights are left unchanged.
pub fn attach_standard_adapters(model: &ToyModel, r: usize, seed: u64) -> Result<ToyModel> {
    let mut out = model.clone();
    for (i, layer) in out.layers_mut().iter_mut().enumerate() {
        let pair = standard_lora_init(layer.w(), r, seed.wrapping_add(i as u64))?;
        let w = layer.w().clone();
        layer.install_adapter(pair, w)?;
    }
    Ok(out)
}
