use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::kan::{KanGridConfig, KanNet};
use crate::error::{Error, Result};
use crate::numerics::checkpoint::{self, write_atomic};
use crate::numerics::{Activation, Init, Mlp, Param, ParamStore, Tape, Tensor, Var};

/// Below this first-network norm an edit direction is undefined.
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Mlp,
    Kan,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(Variant::Mlp),
            "kan" => Ok(Variant::Kan),
            _ => Err(Error::InvalidArgument(format!("unknown editor variant `{s}` (expected mlp or kan)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EditorConfig {
    pub variant: Variant,
    pub mlp_hidden: usize,
    pub kan_hidden: usize,
    pub kan_grid: KanGridConfig,
    /// Length of the normalized direction `u`.
    pub lambda_dir: f64,
    /// Weight of the attribute (cross-entropy) term.
    pub lambda_reg: f64,
    /// Weight of the latent displacement term.
    pub lambda_content: f64,
    /// Exchange target and prediction inside the cross-entropy logs.
    pub swapped_bce: bool,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Probability that a training sample edits exactly one attribute.
    pub single_prob: f64,
    pub max_attributes: usize,
    pub seed: u64,
}

impl Default for EditorConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Mlp,
            mlp_hidden: 128,
            kan_hidden: 16,
            kan_grid: KanGridConfig::default(),
            lambda_dir: 1.0,
            lambda_reg: 1.0,
            lambda_content: 8.0,
            swapped_bce: false,
            steps: 5000,
            batch_size: 64,
            lr: 1e-3,
            single_prob: 0.7,
            max_attributes: 3,
            seed: 0,
        }
    }
}

impl EditorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [("lambda_dir", self.lambda_dir), ("lr", self.lr)];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
        }
        if !(self.lambda_reg >= 0.0 && self.lambda_content >= 0.0) {
            return Err(Error::InvalidArgument("loss weights must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.single_prob) {
            return Err(Error::InvalidArgument(format!("single_prob must be in [0, 1], got {}", self.single_prob)));
        }
        if self.batch_size == 0 || self.max_attributes == 0 || self.mlp_hidden == 0 || self.kan_hidden == 0 {
            return Err(Error::InvalidArgument("batch size, hidden widths and max_attributes must be positive".into()));
        }
        self.kan_grid.build().map(|_| ())
    }
}

/// A latent-to-latent network of either family.
#[derive(Clone, Debug, PartialEq)]
pub enum Net {
    Mlp(Mlp),
    Kan(KanNet),
}

impl Net {
    pub fn forward(&self, tape: &mut Tape, bound: &[Var], x: Var) -> Result<Var> {
        match self {
            Net::Mlp(m) => m.forward(tape, bound, x),
            Net::Kan(k) => k.forward(tape, bound, x),
        }
    }
}

/// One attribute's editing block: `v = net1(z)`, `u = lambda_dir * v / |v|`,
/// `delta = net2(eps * u)`.
///
/// `net1` sees standardized latents and `net2`'s output is rescaled per
/// dimension, so both work at unit scale whatever the latent spread.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectionModule {
    pub variant: Variant,
    pub net1: Net,
    pub net2: Net,
    pub lambda_dir: f64,
    pub input_shift: Vec<f64>,
    pub input_scale: Arc<Vec<f64>>,
    pub output_scale: Arc<Vec<f64>>,
}

impl DirectionModule {
    /// Module with identity standardization around hand-built networks.
    pub fn from_nets(variant: Variant, net1: Net, net2: Net, lambda_dir: f64, latent_dim: usize) -> Self {
        Self {
            variant,
            net1,
            net2,
            lambda_dir,
            input_shift: vec![0.0; latent_dim],
            input_scale: Arc::new(vec![1.0; latent_dim]),
            output_scale: Arc::new(vec![1.0; latent_dim]),
        }
    }

    fn build(store: &mut ParamStore, name: &str, cfg: &EditorConfig, mean: &[f64], std: &[f64], rng: &mut ChaCha8Rng) -> Result<Self> {
        let d = mean.len();
        let (net1, net2) = match cfg.variant {
            Variant::Mlp => {
                let h = cfg.mlp_hidden;
                let n1 = Mlp::new(store, &format!("{name}.net1"), &[d, h, d], true, Activation::Relu, Activation::Identity, Init::Lecun, rng);
                let n2 = Mlp::new(store, &format!("{name}.net2"), &[d, h, d], false, Activation::Relu, Activation::Identity, Init::Zeros, rng);
                (Net::Mlp(n1), Net::Mlp(n2))
            }
            Variant::Kan => {
                let grid = Arc::new(cfg.kan_grid.build()?);
                let h = cfg.kan_hidden;
                let n1 = KanNet::new(store, &format!("{name}.net1"), &[d, h, d], grid.clone(), false, false, rng);
                let n2 = KanNet::new(store, &format!("{name}.net2"), &[d, h, d], grid, true, true, rng);
                (Net::Kan(n1), Net::Kan(n2))
            }
        };
        Ok(Self {
            variant: cfg.variant,
            net1,
            net2,
            lambda_dir: cfg.lambda_dir,
            input_shift: mean.to_vec(),
            input_scale: Arc::new(std.iter().map(|s| if *s > 1e-12 { 1.0 / s } else { 1.0 }).collect()),
            output_scale: Arc::new(std.to_vec()),
        })
    }

    fn latent_dim(&self) -> usize {
        self.input_shift.len()
    }

    /// First-network output `v` for a batch of latents.
    fn raw_direction(&self, tape: &mut Tape, bound: &[Var], z: Var) -> Result<Var> {
        let x = tape.affine(z, &self.input_shift, self.input_scale.clone());
        self.net1.forward(tape, bound, x)
    }

    fn delta_from_v(&self, tape: &mut Tape, bound: &[Var], v: Var, eps: Var) -> Result<Var> {
        let u = tape.normalize_rows(v, self.lambda_dir);
        let e = tape.mul_col(u, eps);
        let h = self.net2.forward(tape, bound, e)?;
        Ok(tape.affine(h, &vec![0.0; self.latent_dim()], self.output_scale.clone()))
    }

    /// Batched delta: `z: B x d`, `eps: B x 1`. Rows with a zero-norm `v`
    /// get a zero direction instead of an error.
    pub fn delta(&self, tape: &mut Tape, bound: &[Var], z: Var, eps: Var) -> Result<Var> {
        let v = self.raw_direction(tape, bound, z)?;
        self.delta_from_v(tape, bound, v, eps)
    }
}

/// The full editor: one direction module per regressor attribute.
#[derive(Clone, Debug, PartialEq)]
pub struct EditorParams {
    pub config: EditorConfig,
    pub attribute_names: Vec<String>,
    pub latent_dim: usize,
    pub latent_mean: Vec<f64>,
    pub latent_std: Vec<f64>,
    pub modules: Vec<DirectionModule>,
    pub store: ParamStore,
    pub loss_curve: Vec<f64>,
}

impl EditorParams {
    /// Fresh editor. Every second network starts at zero, so it is the
    /// identity edit until trained.
    pub fn new(config: &EditorConfig, attribute_names: &[String], latent_mean: &[f64], latent_std: &[f64]) -> Result<Self> {
        config.validate()?;
        if latent_mean.len() != latent_std.len() || latent_mean.is_empty() {
            return Err(Error::shape("latent stats", &[latent_mean.len()], &[latent_std.len()]));
        }
        if attribute_names.is_empty() {
            return Err(Error::InvalidArgument("editor needs at least one attribute".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let modules = attribute_names
            .iter()
            .map(|a| DirectionModule::build(&mut store, &format!("dir.{a}"), config, latent_mean, latent_std, &mut rng))
            .collect::<Result<_>>()?;
        Ok(Self {
            config: config.clone(),
            attribute_names: attribute_names.to_vec(),
            latent_dim: latent_mean.len(),
            latent_mean: latent_mean.to_vec(),
            latent_std: latent_std.to_vec(),
            modules,
            store,
            loss_curve: Vec::new(),
        })
    }

    /// Editor around hand-built modules sharing `store`.
    pub fn from_modules(config: EditorConfig, attribute_names: Vec<String>, modules: Vec<DirectionModule>, store: ParamStore) -> Result<Self> {
        if modules.len() != attribute_names.len() || modules.is_empty() {
            return Err(Error::InvalidArgument(format!("{} modules for {} attributes", modules.len(), attribute_names.len())));
        }
        let d = modules[0].latent_dim();
        if modules.iter().any(|m| m.latent_dim() != d) {
            return Err(Error::InvalidArgument("modules disagree on latent dimension".into()));
        }
        Ok(Self {
            config,
            attribute_names,
            latent_dim: d,
            latent_mean: vec![0.0; d],
            latent_std: vec![1.0; d],
            modules,
            store,
            loss_curve: Vec::new(),
        })
    }

    pub fn attribute_index(&self, name: &str) -> Result<usize> {
        self.attribute_names
            .iter()
            .position(|a| a == name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown attribute `{name}` (known: {})", self.attribute_names.join(", "))))
    }

    fn check_latent(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.latent_dim {
            return Err(Error::shape("latent", &[self.latent_dim], &[z.len()]));
        }
        Ok(())
    }

    /// Normalized direction `u` for attribute `attr` at `z`.
    pub fn direction(&self, attr: usize, z: &[f64]) -> Result<Vec<f64>> {
        self.check_latent(z)?;
        let m = &self.modules[attr];
        let mut tape = Tape::new();
        let bound = self.store.bind_frozen(&mut tape);
        let zv = tape.constant(Tensor::row(z));
        let v = m.raw_direction(&mut tape, &bound, zv)?;
        self.check_degenerate(attr, tape.value(v))?;
        let u = tape.normalize_rows(v, m.lambda_dir);
        Ok(tape.value(u).data().to_vec())
    }

    fn check_degenerate(&self, attr: usize, v: &Tensor) -> Result<()> {
        let norm = v.norm();
        if !(norm >= DEGENERATE_NORM) {
            return Err(Error::DegenerateDirection(self.attribute_names[attr].clone()));
        }
        Ok(())
    }

    /// Latent displacement of one attribute edit of strength `eps`.
    pub fn apply_direction(&self, attr: usize, z: &[f64], eps: f64) -> Result<Vec<f64>> {
        self.check_latent(z)?;
        let name = &self.attribute_names[attr];
        if !(-1.0..=1.0).contains(&eps) {
            return Err(Error::OutOfRange {
                name: name.clone(),
                value: eps,
                min: -1.0,
                max: 1.0,
            });
        }
        let m = &self.modules[attr];
        let mut tape = Tape::new();
        let bound = self.store.bind_frozen(&mut tape);
        let zv = tape.constant(Tensor::row(z));
        let v = m.raw_direction(&mut tape, &bound, zv)?;
        self.check_degenerate(attr, tape.value(v))?;
        let e = tape.constant(Tensor::scalar(eps).reshape(&[1, 1])?);
        let delta = m.delta_from_v(&mut tape, &bound, v, e)?;
        Ok(tape.value(delta).data().to_vec())
    }

    /// `z + sum_i delta_i` over the attributes with nonzero `eps[i]`.
    pub fn edit(&self, z: &[f64], eps: &[f64]) -> Result<Vec<f64>> {
        self.check_latent(z)?;
        if eps.len() != self.modules.len() {
            return Err(Error::shape("edit strengths", &[self.modules.len()], &[eps.len()]));
        }
        let mut out = z.to_vec();
        for (i, &e) in eps.iter().enumerate() {
            if e == 0.0 {
                continue;
            }
            let d = self.apply_direction(i, z, e)?;
            out.iter_mut().zip(&d).for_each(|(o, d)| *o += d);
        }
        Ok(out)
    }

    /// Edit strengths from `(name, eps)` pairs; unnamed attributes stay at zero.
    pub fn eps_vector(&self, pairs: &[(String, f64)]) -> Result<Vec<f64>> {
        let mut eps = vec![0.0; self.modules.len()];
        for (name, v) in pairs {
            eps[self.attribute_index(name)?] = *v;
        }
        Ok(eps)
    }

    /// Sum of all module deltas on a batch (`eps: B x n_attr`).
    pub fn edit_tape(&self, tape: &mut Tape, bound: &[Var], z: Var, eps: &Tensor) -> Result<Var> {
        let b = tape.value(z).rows();
        if eps.shape() != [b, self.modules.len()] {
            return Err(Error::shape("edit strengths", &[b, self.modules.len()], eps.shape()));
        }
        let mut out = z;
        for (k, m) in self.modules.iter().enumerate() {
            let col: Vec<f64> = (0..b).map(|r| eps.get2(r, k)).collect();
            if col.iter().all(|v| *v == 0.0) {
                continue;
            }
            let e = tape.constant(Tensor::matrix(b, 1, col));
            let d = m.delta(tape, bound, z, e)?;
            out = tape.add(out, d);
        }
        Ok(out)
    }

    pub fn save(&self, stem: &Path) -> Result<()> {
        let mut tensors = self.store.params().to_vec();
        tensors.push(Param {
            name: STATS_MEAN.into(),
            value: Tensor::row(&self.latent_mean),
        });
        tensors.push(Param {
            name: STATS_STD.into(),
            value: Tensor::row(&self.latent_std),
        });
        checkpoint::save(&stem.with_extension("ckpt"), &tensors)?;
        let side = Sidecar {
            version: 1,
            variant: self.config.variant,
            lambda_dir: self.config.lambda_dir,
            lambda_reg: self.config.lambda_reg,
            lambda_content: self.config.lambda_content,
            attributes: self.attribute_names.iter().enumerate().map(|(i, a)| (i, a.clone())).collect(),
            latent_dim: self.latent_dim,
            config: self.config.clone(),
            loss_curve: self.loss_curve.clone(),
        };
        write_atomic(&stem.with_extension("json"), (serde_json::to_string_pretty(&side)? + "\n").as_bytes())
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let side_path = stem.with_extension("json");
        let text = fs::read_to_string(&side_path).map_err(|e| Error::io(&side_path, e))?;
        let side: Sidecar = serde_json::from_str(&text)?;
        if side.attributes.iter().enumerate().any(|(i, (j, _))| i != *j) {
            return Err(Error::Checkpoint("editor sidecar attribute indices out of order".into()));
        }
        let names: Vec<String> = side.attributes.into_iter().map(|(_, a)| a).collect();
        let mut tensors = checkpoint::load(&stem.with_extension("ckpt"))?;
        let std = tensors.pop();
        let mean = tensors.pop();
        let (Some(mean), Some(std)) = (mean, std) else {
            return Err(Error::Checkpoint("editor checkpoint too short".into()));
        };
        if mean.name != STATS_MEAN || std.name != STATS_STD || mean.value.len() != side.latent_dim || std.value.len() != side.latent_dim {
            return Err(Error::Checkpoint("editor latent statistics missing".into()));
        }
        let mut e = Self::new(&side.config, &names, mean.value.data(), std.value.data())?;
        e.store.load_from(&tensors)?;
        e.loss_curve = side.loss_curve;
        Ok(e)
    }
}

const STATS_MEAN: &str = "stats.mean";
const STATS_STD: &str = "stats.std";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    version: u32,
    variant: Variant,
    lambda_dir: f64,
    lambda_reg: f64,
    lambda_content: f64,
    /// Direction index to attribute name.
    attributes: Vec<(usize, String)>,
    latent_dim: usize,
    config: EditorConfig,
    loss_curve: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_d(store: &mut ParamStore, name: &str, w1: f64, w2: f64, lambda: f64) -> DirectionModule {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n1 = Mlp::new(store, &format!("{name}.1"), &[1, 1], true, Activation::Relu, Activation::Identity, Init::Zeros, &mut rng);
        let n2 = Mlp::new(store, &format!("{name}.2"), &[1, 1], false, Activation::Relu, Activation::Identity, Init::Zeros, &mut rng);
        store.get_mut(n1.layers[0].weight).data_mut()[0] = w1;
        store.get_mut(n2.layers[0].weight).data_mut()[0] = w2;
        DirectionModule::from_nets(Variant::Mlp, Net::Mlp(n1), Net::Mlp(n2), lambda, 1)
    }

    fn hand_editor() -> EditorParams {
        let mut store = ParamStore::new();
        let a = one_d(&mut store, "a", 1.0, 1.0, 2.0);
        let b = one_d(&mut store, "b", -1.0, 3.0, 1.0);
        EditorParams::from_modules(EditorConfig::default(), vec!["a".into(), "b".into()], vec![a, b], store).unwrap()
    }

    fn random_editor(variant: Variant, seed: u64) -> EditorParams {
        let cfg = EditorConfig {
            variant,
            mlp_hidden: 8,
            kan_hidden: 4,
            seed,
            ..Default::default()
        };
        let mut e = EditorParams::new(&cfg, &["x".into(), "y".into()], &[0.1, -0.2, 0.0], &[0.5, 0.2, 1.0]).unwrap();
        // move off the zero-initialized second networks
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        for p in e.store.params_mut() {
            p.value = Tensor::randn(p.value.shape(), 0.5, &mut rng);
        }
        e
    }

    #[test]
    fn hand_computed_one_d_edit() {
        let e = hand_editor();
        assert_eq!(e.direction(0, &[1.0]).unwrap(), vec![2.0]);
        assert_eq!(e.apply_direction(0, &[1.0], 0.5).unwrap(), vec![1.0]);
        assert_eq!(e.edit(&[1.0], &[0.5, 0.0]).unwrap(), vec![2.0]);
    }

    #[test]
    fn two_attribute_edit_sums_hand_deltas() {
        // b: v = -1, u = -1, eps = -0.25 -> input 0.25, relu-free last layer -> 0.75
        let e = hand_editor();
        assert_eq!(e.apply_direction(1, &[1.0], -0.25).unwrap(), vec![0.75]);
        assert_eq!(e.edit(&[1.0], &[0.5, -0.25]).unwrap(), vec![1.0 + 1.0 + 0.75]);
    }

    #[test]
    fn single_attribute_edit_is_apply_plus_add() {
        for variant in [Variant::Mlp, Variant::Kan] {
            let e = random_editor(variant, 1);
            let z = [0.3, 0.1, -0.4];
            let d = e.apply_direction(1, &z, 0.7).unwrap();
            let want: Vec<f64> = z.iter().zip(&d).map(|(a, b)| a + b).collect();
            assert_eq!(e.edit(&z, &[0.0, 0.7]).unwrap(), want);
        }
    }

    #[test]
    fn zero_eps_is_bit_exact_identity() {
        for variant in [Variant::Mlp, Variant::Kan] {
            let e = random_editor(variant, 2);
            let z = [0.123456789, -1e-300, 7.0];
            assert_eq!(e.edit(&z, &[0.0, 0.0]).unwrap(), z.to_vec());
            assert!(e.apply_direction(0, &z, 0.0).unwrap().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn fresh_editor_is_identity_for_any_eps() {
        for variant in [Variant::Mlp, Variant::Kan] {
            let cfg = EditorConfig {
                variant,
                mlp_hidden: 8,
                kan_hidden: 4,
                ..Default::default()
            };
            let e = EditorParams::new(&cfg, &["x".into()], &[0.0, 0.0], &[1.0, 1.0]).unwrap();
            assert_eq!(e.apply_direction(0, &[0.5, -0.5], 0.9).unwrap(), vec![0.0, 0.0]);
        }
    }

    #[test]
    fn degenerate_direction_names_attribute() {
        let mut store = ParamStore::new();
        let a = one_d(&mut store, "a", 0.0, 1.0, 1.0);
        let e = EditorParams::from_modules(EditorConfig::default(), vec!["roof".into()], vec![a], store).unwrap();
        match e.apply_direction(0, &[1.0], 0.5) {
            Err(Error::DegenerateDirection(name)) => assert_eq!(name, "roof"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn eps_outside_unit_interval_rejected() {
        let e = hand_editor();
        assert!(matches!(e.edit(&[1.0], &[1.5, 0.0]), Err(Error::OutOfRange { .. })));
        assert!(e.edit(&[1.0, 2.0], &[0.5, 0.0]).is_err());
        assert!(e.eps_vector(&[("nope".into(), 0.1)]).is_err());
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        for variant in [Variant::Mlp, Variant::Kan] {
            let mut e = random_editor(variant, 3);
            e.loss_curve = vec![1.0, 0.5];
            let stem = dir.path().join(format!("{variant:?}"));
            e.save(&stem).unwrap();
            assert_eq!(EditorParams::load(&stem).unwrap(), e);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn direction_has_length_lambda(
            z in proptest::collection::vec(-2.0f64..2.0, 3),
            seed in 0u64..50,
            kan in any::<bool>(),
        ) {
            let mut e = random_editor(if kan { Variant::Kan } else { Variant::Mlp }, seed);
            for m in &mut e.modules {
                m.lambda_dir = 0.5 + seed as f64 / 10.0;
            }
            let u = e.direction(0, &z).unwrap();
            let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((norm - e.modules[0].lambda_dir).abs() < 1e-12);
        }
    }
}
