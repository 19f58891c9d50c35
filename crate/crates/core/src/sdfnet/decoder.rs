use rand::Rng;
use serde::{Deserialize, Serialize};

use super::encoding::position_features;
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::numerics::{Init, Linear, ParamStore, Tape, Tensor, Var};

/// Rows evaluated per tape when sampling a frozen decoder.
const EVAL_CHUNK: usize = 8192;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    pub latent_dim: usize,
    pub bands: usize,
    /// When false the raw coordinates are fed instead of the encoding.
    pub positional_encoding: bool,
    pub hidden_width: usize,
    pub num_layers: usize,
    /// Index of the layer whose input is concatenated with the network input.
    pub skip_layer: Option<usize>,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            latent_dim: 32,
            bands: 6,
            positional_encoding: true,
            hidden_width: 128,
            num_layers: 8,
            skip_layer: Some(4),
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("decoder: {m}")));
        if self.latent_dim == 0 || self.hidden_width == 0 || self.num_layers == 0 {
            return bad("dimensions must be >= 1");
        }
        if self.bands == 0 {
            return bad("band count must be >= 1");
        }
        if let Some(s) = self.skip_layer {
            if s == 0 || s >= self.num_layers {
                return bad("skip layer must be an interior layer");
            }
        }
        Ok(())
    }

    /// Bands actually fed to the network (0 means raw coordinates).
    pub fn feature_bands(&self) -> usize {
        if self.positional_encoding {
            self.bands
        } else {
            0
        }
    }

    pub fn position_dim(&self) -> usize {
        if self.positional_encoding {
            6 * self.bands
        } else {
            3
        }
    }

    pub fn input_dim(&self) -> usize {
        self.latent_dim + self.position_dim()
    }
}

/// `f(z, p)`: linear layers with ReLU, the network input concatenated back
/// in at the skip layer, and a tanh output.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoder {
    pub config: DecoderConfig,
    pub store: ParamStore,
    layers: Vec<Linear>,
}

impl Decoder {
    pub fn new<R: Rng>(config: DecoderConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let inp = config.input_dim();
        let w = config.hidden_width;
        let n = config.num_layers;
        let layers = (0..n)
            .map(|i| {
                let mut fan_in = if i == 0 { inp } else { w };
                if config.skip_layer == Some(i) {
                    fan_in += inp;
                }
                let out = if i + 1 == n { 1 } else { w };
                let init = if i + 1 == n { Init::Zeros } else { Init::He };
                Linear::new(&mut store, &format!("decoder.{i}"), fan_in, out, true, init, rng)
            })
            .collect();
        Ok(Self { config, store, layers })
    }

    /// `z: B x latent_dim`, `pos: B x position_dim` to `B x 1`.
    pub fn forward(&self, tape: &mut Tape, bound: &[Var], z: Var, pos: Var) -> Result<Var> {
        let zs = tape.value(z).shape().to_vec();
        let ps = tape.value(pos).shape().to_vec();
        let rows = zs.first().copied().unwrap_or(0);
        if zs.len() != 2 || zs[1] != self.config.latent_dim {
            return Err(Error::shape("decoder latent", &[rows, self.config.latent_dim], &zs));
        }
        if ps.len() != 2 || ps[0] != rows || ps[1] != self.config.position_dim() {
            return Err(Error::shape("decoder position", &[rows, self.config.position_dim()], &ps));
        }
        let input = tape.concat(&[z, pos]);
        let mut h = input;
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            if self.config.skip_layer == Some(i) {
                h = tape.concat(&[h, input]);
            }
            h = layer.forward(tape, bound, h);
            h = if i + 1 == n { tape.tanh(h) } else { tape.relu(h) };
        }
        Ok(h)
    }

    /// Decoder values for one latent at many points.
    pub fn eval_points(&self, z: &[f64], points: &[Vec3]) -> Result<Vec<f64>> {
        if z.len() != self.config.latent_dim {
            return Err(Error::shape("latent", &[self.config.latent_dim], &[z.len()]));
        }
        let mut out = Vec::with_capacity(points.len());
        for chunk in points.chunks(EVAL_CHUNK) {
            let mut tape = Tape::new();
            let bound = self.store.bind_frozen(&mut tape);
            let zt = Tensor::matrix(chunk.len(), z.len(), z.repeat(chunk.len()));
            let zv = tape.constant(zt);
            let pv = tape.constant(position_features(chunk, self.config.feature_bands()));
            let y = self.forward(&mut tape, &bound, zv, pv)?;
            out.extend_from_slice(tape.value(y).data());
        }
        Ok(out)
    }

    pub fn eval(&self, z: &[f64], p: Vec3) -> Result<f64> {
        Ok(self.eval_points(z, &[p])?[0])
    }
}

/// `|clamp(pred, ±delta) - clamp(gt, ±delta)|`.
pub fn clamped_l1(pred: f64, gt: f64, delta: f64) -> f64 {
    (pred.clamp(-delta, delta) - gt.clamp(-delta, delta)).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, GRAD_CHECK_STEP};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn tiny() -> DecoderConfig {
        DecoderConfig {
            latent_dim: 1,
            bands: 1,
            positional_encoding: true,
            hidden_width: 4,
            num_layers: 1,
            skip_layer: None,
        }
    }

    #[test]
    fn clamped_l1_cases() {
        assert_eq!(clamped_l1(0.3, 0.3, 0.1), 0.0);
        assert!((clamped_l1(0.05, 0.2, 0.1) - 0.05).abs() < 1e-15);
        assert!((clamped_l1(-0.5, 0.5, 0.1) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn zero_weights_give_zero() {
        let mut d = Decoder::new(DecoderConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for p in d.store.params_mut() {
            p.value = Tensor::zeros(p.value.shape());
        }
        let z = vec![0.3; 32];
        assert_eq!(d.eval_points(&z, &[[0.1, 0.2, 0.3], [-0.9, 0.0, 0.5]]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn hand_set_single_layer() {
        let mut d = Decoder::new(tiny(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        // input = [z, sin pi x, cos pi x, sin pi y, cos pi y, sin pi z, cos pi z]
        let w = [0.5, 1.0, -1.0, 0.25, 0.0, 2.0, 0.1];
        d.store.get_mut(0).data_mut().copy_from_slice(&w);
        d.store.get_mut(1).data_mut()[0] = -0.2;
        let z = 0.4;
        let p = [0.5, 0.25, 1.0 / 6.0];
        // by hand: 0.2 + (1 - 0) + 0.25 * sqrt(2)/2 + 0 + 2 * 0.5 + 0.1 * cos(pi/6) - 0.2
        let pre = 0.2 + 1.0 + 0.25 * 0.5f64.sqrt() + 1.0 + 0.1 * (PI / 6.0).cos() - 0.2;
        let got = d.eval(&[z], p).unwrap();
        assert!((got - pre.tanh()).abs() < 1e-14, "{got} vs {}", pre.tanh());
    }

    #[test]
    fn deterministic() {
        let d = Decoder::new(DecoderConfig::default(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let z: Vec<f64> = (0..32).map(|i| 0.01 * i as f64).collect();
        let pts = [[0.1, 0.2, 0.3], [0.4, -0.5, 0.6]];
        let a = d.eval_points(&z, &pts).unwrap();
        let b = d.eval_points(&z, &pts).unwrap();
        assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let d = Decoder::new(DecoderConfig::default(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert!(matches!(d.eval(&[0.0; 31], [0.0; 3]), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn bad_configs_rejected() {
        let c = DecoderConfig {
            bands: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = DecoderConfig {
            skip_layer: Some(8),
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn gradient_check_through_encoding() {
        let cfg = DecoderConfig {
            latent_dim: 3,
            bands: 2,
            hidden_width: 6,
            num_layers: 4,
            skip_layer: Some(2),
            positional_encoding: true,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = Decoder::new(cfg.clone(), &mut rng).unwrap();
        let pts: Vec<Vec3> = (0..5).map(|_| [rng.gen_range(-0.9..0.9), rng.gen_range(-0.9..0.9), rng.gen_range(-0.9..0.9)]).collect();
        let pos = position_features(&pts, 2);
        let z = Tensor::randn(&[5, 3], 0.5, &mut rng);
        let mut params = d.store.params().to_vec();
        params.push(crate::numerics::Param {
            name: "z".into(),
            value: z,
        });
        let err = grad_check(&mut params, GRAD_CHECK_STEP, |tape, vars| {
            let n = vars.len();
            let pv = tape.constant(pos.clone());
            let y = d.forward(tape, &vars[..n - 1], vars[n - 1], pv)?;
            let sq = tape.mul(y, y);
            Ok(tape.sum(sq))
        })
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
