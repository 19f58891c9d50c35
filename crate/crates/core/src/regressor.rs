//! Latent-to-attribute regressor `R`: a 4-layer MLP with a sigmoid output.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::checkpoint::{self, write_atomic};
use crate::numerics::{adam_step, Activation, AdamConfig, AdamState, Init, Mlp, Param, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressorConfig {
    pub hidden: Vec<usize>,
    pub lr: f64,
    /// Full-batch optimizer steps.
    pub epochs: usize,
    pub val_fraction: f64,
    pub input_scaling: InputScaling,
    /// Coefficient of the summed squared parameters added to the loss.
    pub weight_decay: f64,
    pub seed: u64,
}

/// How latents are standardized before the network (statistics from the
/// train split).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputScaling {
    /// Each dimension to unit variance.
    PerDimension,
    /// One common scale, keeping the relative variance of dimensions.
    Global,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128, 64],
            lr: 1e-3,
            epochs: 1500,
            val_fraction: 0.2,
            input_scaling: InputScaling::Global,
            weight_decay: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RegressorMetrics {
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub train_mae: Vec<f64>,
    pub val_mae: Vec<f64>,
    pub loss_curve: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Regressor {
    pub config: RegressorConfig,
    pub attribute_names: Vec<String>,
    pub latent_dim: usize,
    /// Per-dimension standardization `(z - shift) * scale` applied first.
    pub input_shift: Vec<f64>,
    pub input_scale: Arc<Vec<f64>>,
    pub net: Mlp,
    pub store: ParamStore,
}

impl Regressor {
    fn build(config: &RegressorConfig, latent_dim: usize, n_attr: usize, rng: &mut ChaCha8Rng) -> (Mlp, ParamStore) {
        let mut store = ParamStore::new();
        let mut dims = vec![latent_dim];
        dims.extend(&config.hidden);
        dims.push(n_attr);
        let net = Mlp::new(&mut store, "regressor", &dims, true, Activation::Relu, Activation::Sigmoid, Init::Lecun, rng);
        (net, store)
    }

    /// `z: B x latent_dim` to `B x n_attributes`, with parameters bound by the caller.
    pub fn forward(&self, tape: &mut Tape, bound: &[Var], z: Var) -> Result<Var> {
        let shape = tape.value(z).shape().to_vec();
        if shape.len() != 2 || shape[1] != self.latent_dim {
            return Err(Error::shape("regressor input", &[shape.first().copied().unwrap_or(1), self.latent_dim], &shape));
        }
        let x = tape.affine(z, &self.input_shift, self.input_scale.clone());
        self.net.forward(tape, bound, x)
    }

    pub fn predict(&self, z: &[f64]) -> Result<Vec<f64>> {
        Ok(self.predict_batch(&[z.to_vec()])?.pop().expect("one row"))
    }

    pub fn predict_batch(&self, zs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if let Some(bad) = zs.iter().find(|z| z.len() != self.latent_dim) {
            return Err(Error::shape("latent", &[self.latent_dim], &[bad.len()]));
        }
        let mut tape = Tape::new();
        let bound = self.store.bind_frozen(&mut tape);
        let x = tape.constant(Tensor::matrix(zs.len(), self.latent_dim, zs.concat()));
        let y = self.forward(&mut tape, &bound, x)?;
        // saturated sigmoids round to 0 or 1 in f64; keep the open interval
        let out = tape.value(y).map(|v| v.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0));
        Ok((0..zs.len()).map(|r| out.row_slice(r).to_vec()).collect())
    }

    pub fn save(&self, stem: &Path, metrics: &RegressorMetrics) -> Result<()> {
        let mut tensors = self.store.params().to_vec();
        tensors.push(Param {
            name: "input.shift".into(),
            value: Tensor::row(&self.input_shift),
        });
        tensors.push(Param {
            name: "input.scale".into(),
            value: Tensor::row(&self.input_scale),
        });
        checkpoint::save(&stem.with_extension("ckpt"), &tensors)?;
        let side = Sidecar {
            version: 1,
            config: self.config.clone(),
            attribute_names: self.attribute_names.clone(),
            latent_dim: self.latent_dim,
            metrics: metrics.clone(),
        };
        write_atomic(&stem.with_extension("json"), (serde_json::to_string_pretty(&side)? + "\n").as_bytes())
    }

    pub fn load(stem: &Path) -> Result<(Self, RegressorMetrics)> {
        let side_path = stem.with_extension("json");
        let text = fs::read_to_string(&side_path).map_err(|e| Error::io(&side_path, e))?;
        let side: Sidecar = serde_json::from_str(&text)?;
        let mut tensors = checkpoint::load(&stem.with_extension("ckpt"))?;
        let scale = tensors.pop();
        let shift = tensors.pop();
        let (Some(shift), Some(scale)) = (shift, scale) else {
            return Err(Error::Checkpoint("regressor checkpoint too short".into()));
        };
        if shift.name != "input.shift" || scale.name != "input.scale" || shift.value.len() != side.latent_dim || scale.value.len() != side.latent_dim {
            return Err(Error::Checkpoint("regressor input standardization missing".into()));
        }
        let (net, mut store) = Self::build(&side.config, side.latent_dim, side.attribute_names.len(), &mut ChaCha8Rng::seed_from_u64(0));
        store.load_from(&tensors)?;
        Ok((
            Self {
                config: side.config,
                attribute_names: side.attribute_names,
                latent_dim: side.latent_dim,
                input_shift: shift.value.into_data(),
                input_scale: Arc::new(scale.value.into_data()),
                net,
                store,
            },
            side.metrics,
        ))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    version: u32,
    config: RegressorConfig,
    attribute_names: Vec<String>,
    latent_dim: usize,
    metrics: RegressorMetrics,
}

/// Per-dimension mean and standard deviation of a set of latents.
pub fn latent_stats(latents: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = latents.len() as f64;
    let d = latents.first().map_or(0, Vec::len);
    let mut mean = vec![0.0; d];
    for z in latents {
        for (m, v) in mean.iter_mut().zip(z) {
            *m += v / n;
        }
    }
    let mut std = vec![0.0; d];
    for z in latents {
        for ((s, v), m) in std.iter_mut().zip(z).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    (mean, std.into_iter().map(f64::sqrt).collect())
}

fn mae(r: &Regressor, zs: &[Vec<f64>], labels: &[Vec<f64>], n_attr: usize) -> Result<Vec<f64>> {
    if zs.is_empty() {
        return Ok(vec![0.0; n_attr]);
    }
    let pred = r.predict_batch(zs)?;
    let mut out = vec![0.0; n_attr];
    for (p, t) in pred.iter().zip(labels) {
        for k in 0..n_attr {
            out[k] += (p[k] - t[k]).abs() / zs.len() as f64;
        }
    }
    Ok(out)
}

/// Fit `R` by mean squared error on a seeded train split, reporting
/// per-attribute MAE on both splits.
pub fn train_regressor(
    ids: &[String],
    latents: &[Vec<f64>],
    labels: &[Vec<f64>],
    attribute_names: &[String],
    config: &RegressorConfig,
) -> Result<(Regressor, RegressorMetrics)> {
    let n = latents.len();
    if n < 4 {
        return Err(Error::InvalidArgument(format!("regressor needs at least 4 shapes, got {n}")));
    }
    if ids.len() != n || labels.len() != n {
        return Err(Error::InvalidArgument("ids, latents and labels must align".into()));
    }
    if !(0.0..1.0).contains(&config.val_fraction) {
        return Err(Error::InvalidArgument("validation fraction must be in [0, 1)".into()));
    }
    let n_attr = attribute_names.len();
    let d = latents[0].len();
    for (i, (z, y)) in latents.iter().zip(labels).enumerate() {
        if z.len() != d {
            return Err(Error::shape(format!("latent of {}", ids[i]), &[d], &[z.len()]));
        }
        if y.len() != n_attr {
            return Err(Error::shape(format!("labels of {}", ids[i]), &[n_attr], &[y.len()]));
        }
        if let Some((k, v)) = y.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(Error::OutOfRange {
                name: format!("{}.{}", ids[i], attribute_names[k]),
                value: *v,
                min: 0.0,
                max: 1.0,
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_val = ((n as f64 * config.val_fraction).round() as usize).min(n - 1);
    let (val_idx, train_idx) = order.split_at(n_val);
    let pick = |idx: &[usize], v: &[Vec<f64>]| idx.iter().map(|&i| v[i].clone()).collect::<Vec<_>>();
    let (ztr, ytr) = (pick(train_idx, latents), pick(train_idx, labels));
    let (zva, yva) = (pick(val_idx, latents), pick(val_idx, labels));

    let (mean, std) = latent_stats(&ztr);
    let inv = |s: f64| if s > 1e-12 { 1.0 / s } else { 1.0 };
    let scale = match config.input_scaling {
        InputScaling::PerDimension => std.iter().map(|s| inv(*s)).collect(),
        InputScaling::Global => vec![inv((std.iter().map(|s| s * s).sum::<f64>() / d as f64).sqrt()); d],
    };
    let (net, mut store) = Regressor::build(config, d, n_attr, &mut rng);

    let x = Tensor::matrix(ztr.len(), d, ztr.concat());
    let y = Tensor::matrix(ytr.len(), n_attr, ytr.concat());
    let mut r = Regressor {
        config: config.clone(),
        attribute_names: attribute_names.to_vec(),
        latent_dim: d,
        input_shift: mean,
        input_scale: Arc::new(scale),
        net,
        store: ParamStore::new(),
    };
    let mut state = AdamState::new(store.params());
    let cfg = AdamConfig::with_lr(config.lr);
    let mut curve = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let yv = tape.constant(y.clone());
        let pred = r.forward(&mut tape, &bound, xv)?;
        let mut loss = tape.mse(pred, yv);
        if config.weight_decay > 0.0 {
            for &w in &bound {
                let sq = tape.mul(w, w);
                let s = tape.sum(sq);
                let s = tape.scale(s, config.weight_decay);
                loss = tape.add(loss, s);
            }
        }
        let lv = tape.value(loss).item();
        if !lv.is_finite() {
            return Err(Error::Diverged {
                stage: "train-regressor",
                step: epoch,
                loss: lv,
            });
        }
        curve.push(lv);
        let mut grads = tape.backward(loss);
        let g: Vec<Tensor> = bound.iter().map(|&v| grads.take(v).expect("regressor gradient")).collect();
        adam_step(store.params_mut(), &g, &mut state, &cfg)?;
    }
    r.store = store;

    let metrics = RegressorMetrics {
        train_ids: train_idx.iter().map(|&i| ids[i].clone()).collect(),
        val_ids: val_idx.iter().map(|&i| ids[i].clone()).collect(),
        train_mae: mae(&r, &ztr, &ytr, n_attr)?,
        val_mae: mae(&r, &zva, &yva, n_attr)?,
        loss_curve: curve,
    };
    Ok((r, metrics))
}
