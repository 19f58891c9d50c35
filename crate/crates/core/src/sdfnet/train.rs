use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::decoder::{Decoder, DecoderConfig};
use super::encoding::position_features;
use crate::error::{Error, Result};
use crate::geometry::{marching_cubes, Mesh, ScalarGrid, SdfSampleSet, Vec3};
use crate::numerics::checkpoint::{self, write_atomic};
use crate::numerics::{adam_step, AdamConfig, AdamState, Param, Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdfTrainConfig {
    pub decoder: DecoderConfig,
    pub clamp_delta: f64,
    /// Weight of the mean squared latent norm in the loss.
    pub latent_prior: f64,
    pub latent_init_std: f64,
    pub lr_weights: f64,
    pub lr_latents: f64,
    pub epochs: usize,
    /// Samples drawn from each shape per epoch.
    pub points_per_shape: usize,
    /// Points per optimizer step.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SdfTrainConfig {
    fn default() -> Self {
        Self {
            decoder: DecoderConfig::default(),
            clamp_delta: 0.1,
            latent_prior: 1e-4,
            latent_init_std: 0.01,
            lr_weights: 5e-4,
            lr_latents: 1e-3,
            epochs: 1500,
            points_per_shape: 1024,
            batch_size: 2048,
            seed: 0,
        }
    }
}

impl SdfTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.decoder.validate()?;
        let bad = |m: &str| Err(Error::InvalidArgument(format!("sdf training: {m}")));
        if !(self.clamp_delta > 0.0) {
            return bad("clamp delta must be > 0");
        }
        if !(self.latent_prior >= 0.0 && self.latent_init_std >= 0.0) {
            return bad("latent prior and init std must be >= 0");
        }
        if !(self.lr_weights > 0.0 && self.lr_latents > 0.0) {
            return bad("learning rates must be > 0");
        }
        if self.points_per_shape == 0 || self.batch_size == 0 {
            return bad("points per shape and batch size must be >= 1");
        }
        Ok(())
    }
}

/// Trained decoder with its latent table.
#[derive(Clone, Debug, PartialEq)]
pub struct SdfModel {
    pub config: SdfTrainConfig,
    pub decoder: Decoder,
    /// `shapes x latent_dim`, row order matches `shape_ids`.
    pub latents: Tensor,
    pub shape_ids: Vec<String>,
    pub loss_curve: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    version: u32,
    config: SdfTrainConfig,
    shape_ids: Vec<String>,
    loss_curve: Vec<f64>,
}

const LATENTS: &str = "latents";

impl SdfModel {
    pub fn latent(&self, i: usize) -> &[f64] {
        self.latents.row_slice(i)
    }

    pub fn latent_by_id(&self, id: &str) -> Option<&[f64]> {
        self.shape_ids.iter().position(|s| s == id).map(|i| self.latent(i))
    }

    pub fn latent_rows(&self) -> Vec<Vec<f64>> {
        (0..self.shape_ids.len()).map(|i| self.latent(i).to_vec()).collect()
    }

    /// Writes `<stem>.ckpt` (decoder weights then the latent table) and the
    /// JSON sidecar `<stem>.json`.
    pub fn save(&self, stem: &Path) -> Result<()> {
        let mut tensors = self.decoder.store.params().to_vec();
        tensors.push(Param {
            name: LATENTS.into(),
            value: self.latents.clone(),
        });
        checkpoint::save(&stem.with_extension("ckpt"), &tensors)?;
        let side = Sidecar {
            version: 1,
            config: self.config.clone(),
            shape_ids: self.shape_ids.clone(),
            loss_curve: self.loss_curve.clone(),
        };
        let json = serde_json::to_string_pretty(&side)? + "\n";
        write_atomic(&stem.with_extension("json"), json.as_bytes())
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let side_path = stem.with_extension("json");
        let text = fs::read_to_string(&side_path).map_err(|e| Error::io(&side_path, e))?;
        let side: Sidecar = serde_json::from_str(&text)?;
        let mut tensors = checkpoint::load(&stem.with_extension("ckpt"))?;
        let latents = match tensors.pop() {
            Some(p) if p.name == LATENTS => p.value,
            _ => return Err(Error::Checkpoint("missing latent table".into())),
        };
        let mut decoder = Decoder::new(side.config.decoder.clone(), &mut ChaCha8Rng::seed_from_u64(0))?;
        decoder.store.load_from(&tensors)?;
        if latents.shape() != [side.shape_ids.len(), side.config.decoder.latent_dim] {
            return Err(Error::Checkpoint(format!("latent table shape {:?} does not match sidecar", latents.shape())));
        }
        Ok(Self {
            config: side.config,
            decoder,
            latents,
            shape_ids: side.shape_ids,
            loss_curve: side.loss_curve,
        })
    }
}

/// Jointly fit decoder weights and one latent per shape.
///
/// Each epoch draws `points_per_shape` samples (with replacement) from every
/// shape, shuffles the pooled points and takes one Adam step per
/// `batch_size` chunk. The recorded loss is the epoch mean of
/// `clamped_l1 + latent_prior * |z|^2`.
pub fn train_autodecoder(ids: &[String], samples: &[SdfSampleSet], config: &SdfTrainConfig) -> Result<SdfModel> {
    config.validate()?;
    if ids.len() != samples.len() || ids.is_empty() {
        return Err(Error::InvalidArgument(format!("{} ids for {} sample sets", ids.len(), samples.len())));
    }
    if let Some(i) = samples.iter().position(|s| s.is_empty()) {
        return Err(Error::InvalidArgument(format!("shape `{}` has no samples", ids[i])));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut decoder = Decoder::new(config.decoder.clone(), &mut rng)?;
    let d = config.decoder.latent_dim;
    let mut latents = vec![Param {
        name: LATENTS.into(),
        value: Tensor::randn(&[ids.len(), d], config.latent_init_std, &mut rng),
    }];
    let mut w_state = AdamState::new(decoder.store.params());
    let mut z_state = AdamState::new(&latents);
    let w_cfg = AdamConfig::with_lr(config.lr_weights);
    let z_cfg = AdamConfig::with_lr(config.lr_latents);
    let bands = config.decoder.feature_bands();

    let mut curve = Vec::with_capacity(config.epochs);
    let mut pool: Vec<(usize, usize)> = Vec::with_capacity(ids.len() * config.points_per_shape);
    for epoch in 0..config.epochs {
        pool.clear();
        for (s, set) in samples.iter().enumerate() {
            for _ in 0..config.points_per_shape {
                pool.push((s, rng.gen_range(0..set.len())));
            }
        }
        pool.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in pool.chunks(config.batch_size) {
            let shape_idx: Vec<usize> = batch.iter().map(|b| b.0).collect();
            let pts: Vec<Vec3> = batch.iter().map(|&(s, k)| samples[s].points[k]).collect();
            let gt: Vec<f64> = batch.iter().map(|&(s, k)| samples[s].distances[k]).collect();

            let mut tape = Tape::new();
            let bound = decoder.store.bind(&mut tape);
            let table = tape.param(latents[0].value.clone());
            let z = tape.gather_rows(table, &shape_idx);
            let pos = tape.constant(position_features(&pts, bands));
            let pred = decoder.forward(&mut tape, &bound, z, pos)?;
            let target = tape.constant(Tensor::matrix(gt.len(), 1, gt));
            let data = tape.clamped_l1(pred, target, config.clamp_delta);
            let sq = tape.sum_squares_rows(z);
            let reg = tape.mean(sq);
            let reg = tape.scale(reg, config.latent_prior);
            let loss = tape.add(data, reg);
            let lv = tape.value(loss).item();
            if !lv.is_finite() {
                return Err(Error::Diverged {
                    stage: "train-sdf",
                    step: epoch,
                    loss: lv,
                });
            }
            total += lv * batch.len() as f64;

            let mut grads = tape.backward(loss);
            let wg: Vec<Tensor> = bound.iter().map(|&v| grads.take(v).expect("decoder gradient")).collect();
            let zg = vec![grads.take(table).expect("latent gradient")];
            adam_step(decoder.store.params_mut(), &wg, &mut w_state, &w_cfg)?;
            adam_step(&mut latents, &zg, &mut z_state, &z_cfg)?;
        }
        let mean = total / pool.len() as f64;
        if epoch % 100 == 0 || epoch + 1 == config.epochs {
            log::info!("train-sdf epoch {epoch}: loss {mean:.6}");
        }
        curve.push(mean);
    }
    Ok(SdfModel {
        config: config.clone(),
        decoder,
        latents: latents.pop().expect("latent table").value,
        shape_ids: ids.to_vec(),
        loss_curve: curve,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferConfig {
    pub steps: usize,
    pub lr: f64,
    pub points_per_step: usize,
    pub init_std: f64,
    pub latent_prior: f64,
    pub clamp_delta: f64,
    pub seed: u64,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            steps: 800,
            lr: 5e-3,
            points_per_step: 2048,
            init_std: 0.01,
            latent_prior: 1e-4,
            clamp_delta: 0.1,
            seed: 0,
        }
    }
}

/// Fit a latent to `samples` with the decoder frozen.
pub fn infer_latent(decoder: &Decoder, samples: &SdfSampleSet, config: &InferConfig) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("cannot infer a latent from no samples".into()));
    }
    let d = decoder.config.latent_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut z = vec![Param {
        name: "z".into(),
        value: Tensor::randn(&[1, d], config.init_std, &mut rng),
    }];
    let mut state = AdamState::new(&z);
    let cfg = AdamConfig::with_lr(config.lr);
    let bands = decoder.config.feature_bands();
    let n = config.points_per_step.min(samples.len()).max(1);
    for step in 0..config.steps {
        let idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..samples.len())).collect();
        let pts: Vec<Vec3> = idx.iter().map(|&k| samples.points[k]).collect();
        let gt: Vec<f64> = idx.iter().map(|&k| samples.distances[k]).collect();
        let mut tape = Tape::new();
        let bound = decoder.store.bind_frozen(&mut tape);
        let zv = tape.param(z[0].value.clone());
        let zr = tape.gather_rows(zv, &vec![0; n]);
        let pos = tape.constant(position_features(&pts, bands));
        let pred = decoder.forward(&mut tape, &bound, zr, pos)?;
        let target = tape.constant(Tensor::matrix(n, 1, gt));
        let data = tape.clamped_l1(pred, target, config.clamp_delta);
        let sq = tape.sum_squares_rows(zv);
        let reg = tape.scale(sq, config.latent_prior);
        let reg = tape.sum(reg);
        let loss = tape.add(data, reg);
        let lv = tape.value(loss).item();
        if !lv.is_finite() {
            return Err(Error::Diverged {
                stage: "infer-latent",
                step,
                loss: lv,
            });
        }
        let mut grads = tape.backward(loss);
        let g = vec![grads.take(zv).expect("latent gradient")];
        adam_step(&mut z, &g, &mut state, &cfg)?;
    }
    Ok(z.pop().expect("latent").value.into_data())
}

/// Decoder field sampled on the `resolution`-cell grid over `[-1, 1]^3`.
pub fn decoder_grid(decoder: &Decoder, z: &[f64], resolution: usize) -> Result<ScalarGrid> {
    let pts = ScalarGrid::node_positions(resolution, -1.0, 1.0);
    let values = decoder.eval_points(z, &pts)?;
    Ok(ScalarGrid {
        resolution,
        lo: -1.0,
        hi: 1.0,
        values,
    })
}

/// Zero level set of the decoder for latent `z`.
pub fn reconstruct(decoder: &Decoder, z: &[f64], resolution: usize) -> Result<Mesh> {
    marching_cubes(&decoder_grid(decoder, z, resolution)?, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere_samples(r: f64, n: usize, seed: u64) -> SdfSampleSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = SdfSampleSet::default();
        for _ in 0..n {
            let p = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            set.distances.push(crate::geometry::v3::norm(p) - r);
            set.points.push(p);
        }
        set
    }

    fn small_config() -> SdfTrainConfig {
        SdfTrainConfig {
            decoder: DecoderConfig {
                latent_dim: 4,
                bands: 2,
                hidden_width: 16,
                num_layers: 4,
                skip_layer: Some(2),
                positional_encoding: true,
            },
            epochs: 30,
            points_per_shape: 128,
            batch_size: 128,
            lr_weights: 3e-3,
            lr_latents: 3e-3,
            ..Default::default()
        }
    }

    #[test]
    fn trains_and_is_deterministic() {
        let ids = vec!["a".to_string(), "b".to_string()];
        let sets = vec![sphere_samples(0.4, 500, 1), sphere_samples(0.6, 500, 2)];
        let cfg = small_config();
        let m1 = train_autodecoder(&ids, &sets, &cfg).unwrap();
        let m2 = train_autodecoder(&ids, &sets, &cfg).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(m1.latents.shape(), &[2, 4]);
        assert_eq!(m1.loss_curve.len(), 30);
        assert!(m1.loss_curve[29] < m1.loss_curve[0]);
    }

    #[test]
    fn empty_shape_rejected() {
        let ids = vec!["a".to_string()];
        assert!(train_autodecoder(&ids, &[SdfSampleSet::default()], &small_config()).is_err());
    }

    #[test]
    fn divergence_reports_epoch() {
        let ids = vec!["a".to_string()];
        let cfg = SdfTrainConfig {
            points_per_shape: 50,
            batch_size: 50,
            ..small_config()
        };
        let set = SdfSampleSet {
            points: vec![[0.1, 0.2, 0.3]; 50],
            distances: vec![f64::NAN; 50],
        };
        match train_autodecoder(&ids, &[set], &cfg) {
            Err(Error::Diverged { step, .. }) => assert_eq!(step, 0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zero_steps_returns_init_and_decoder_untouched() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dec = Decoder::new(small_config().decoder, &mut rng).unwrap();
        let before = dec.clone();
        let set = sphere_samples(0.5, 100, 4);
        let cfg = InferConfig {
            steps: 0,
            seed: 9,
            ..Default::default()
        };
        let z = infer_latent(&dec, &set, &cfg).unwrap();
        let init = Tensor::randn(&[1, 4], cfg.init_std, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(z, init.data());
        let cfg = InferConfig { steps: 20, ..cfg };
        let a = infer_latent(&dec, &set, &cfg).unwrap();
        assert_eq!(a, infer_latent(&dec, &set, &cfg).unwrap());
        assert_eq!(dec, before);
    }

    #[test]
    fn save_load_roundtrip() {
        let ids = vec!["a".to_string()];
        let cfg = SdfTrainConfig {
            epochs: 2,
            ..small_config()
        };
        let m = train_autodecoder(&ids, &[sphere_samples(0.5, 100, 1)], &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("sdf");
        m.save(&stem).unwrap();
        assert_eq!(SdfModel::load(&stem).unwrap(), m);
    }

    #[test]
    fn reconstruction_inside_grid_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dec = Decoder::new(small_config().decoder, &mut rng).unwrap();
        let z = [0.1, -0.2, 0.3, 0.0];
        let a = reconstruct(&dec, &z, 16).unwrap();
        assert_eq!(a, reconstruct(&dec, &z, 16).unwrap());
        assert!(a.vertices.iter().flatten().all(|v| v.abs() <= 1.0));
    }
}
