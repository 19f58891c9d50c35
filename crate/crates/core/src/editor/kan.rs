//! Kolmogorov-Arnold layers: every input-output edge carries
//! `base_w * silu(x) + spline_w * spline(x)`.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{BSplineGrid, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KanGridConfig {
    pub intervals: usize,
    pub lo: f64,
    pub hi: f64,
    pub degree: usize,
}

impl Default for KanGridConfig {
    fn default() -> Self {
        Self {
            intervals: 8,
            lo: -1.5,
            hi: 1.5,
            degree: 3,
        }
    }
}

impl KanGridConfig {
    pub fn build(&self) -> Result<BSplineGrid> {
        if self.intervals == 0 {
            return Err(Error::InvalidArgument("kan grid needs at least one interval".into()));
        }
        BSplineGrid::uniform(self.intervals, self.lo, self.hi, self.degree)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KanLayer {
    /// `out x in x num_basis` spline coefficients.
    pub coef: usize,
    pub spline_w: usize,
    pub base_w: usize,
    pub in_dim: usize,
    pub out_dim: usize,
}

/// How a fresh layer's parameters are drawn.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KanInit {
    Random,
    /// Zero coefficients and base weights, unit spline weights: the layer
    /// outputs zero but still receives coefficient gradients.
    Zero,
}

impl KanLayer {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, grid: &BSplineGrid, init: KanInit, rng: &mut R) -> Self {
        let nb = grid.num_basis();
        let (coef, base) = match init {
            KanInit::Random => {
                let noise = Normal::new(0.0, 0.1 / (in_dim as f64).sqrt()).expect("positive std");
                let c: Vec<f64> = (0..out_dim * in_dim * nb).map(|_| noise.sample(rng)).collect();
                let bound = 1.0 / (in_dim as f64).sqrt();
                let b: Vec<f64> = (0..out_dim * in_dim).map(|_| rng.gen_range(-bound..bound)).collect();
                (c, b)
            }
            KanInit::Zero => (vec![0.0; out_dim * in_dim * nb], vec![0.0; out_dim * in_dim]),
        };
        let coef = store.push(format!("{name}.coef"), Tensor::new(vec![out_dim, in_dim, nb], coef).expect("sized"));
        let spline_w = store.push(format!("{name}.spline_w"), Tensor::full(&[out_dim, in_dim], 1.0));
        let base_w = store.push(format!("{name}.base_w"), Tensor::matrix(out_dim, in_dim, base));
        Self {
            coef,
            spline_w,
            base_w,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &[Var], x: Var, grid: &Arc<BSplineGrid>, anchored: bool) -> Var {
        tape.kan(x, bound[self.coef], bound[self.spline_w], bound[self.base_w], grid.clone(), anchored)
    }
}

/// Composition of KAN layers. With `anchored`, each spline is shifted by its
/// value at zero so the network maps zero to zero exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct KanNet {
    pub layers: Vec<KanLayer>,
    pub grid: Arc<BSplineGrid>,
    pub anchored: bool,
    pub in_dim: usize,
}

impl KanNet {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        dims: &[usize],
        grid: Arc<BSplineGrid>,
        anchored: bool,
        zero_last: bool,
        rng: &mut R,
    ) -> Self {
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let init = if zero_last && i + 1 == n { KanInit::Zero } else { KanInit::Random };
                KanLayer::new(store, &format!("{name}.{i}"), dims[i], dims[i + 1], &grid, init, rng)
            })
            .collect();
        Self {
            layers,
            grid,
            anchored,
            in_dim: dims[0],
        }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &[Var], x: Var) -> Result<Var> {
        let shape = tape.value(x).shape().to_vec();
        if shape.len() != 2 || shape[1] != self.in_dim {
            return Err(Error::shape("kan input", &[shape.first().copied().unwrap_or(1), self.in_dim], &shape));
        }
        let mut h = x;
        for l in &self.layers {
            h = l.forward(tape, bound, h, &self.grid, self.anchored);
        }
        Ok(h)
    }
}
