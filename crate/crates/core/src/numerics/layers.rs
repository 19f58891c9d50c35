use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
    Silu,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::Silu => tape.silu(x),
        }
    }
}

/// How a fresh weight matrix is drawn.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Normal with std `sqrt(2 / fan_in)`.
    He,
    /// Normal with std `sqrt(1 / fan_in)`.
    Lecun,
    Zeros,
}

/// Fully-connected layer whose weights live in a [`ParamStore`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: usize,
    pub bias: Option<usize>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let shape = [out_dim, in_dim];
        let w = match init {
            Init::He => Tensor::randn(&shape, (2.0 / in_dim as f64).sqrt(), rng),
            Init::Lecun => Tensor::randn(&shape, (1.0 / in_dim as f64).sqrt(), rng),
            Init::Zeros => Tensor::zeros(&shape),
        };
        let weight = store.push(format!("{name}.weight"), w);
        let bias = bias.then(|| store.push(format!("{name}.bias"), Tensor::zeros(&[1, out_dim])));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &[Var], x: Var) -> Var {
        tape.linear(x, bound[self.weight], self.bias.map(|b| bound[b]))
    }
}

/// Stack of [`Linear`] layers with a shared hidden activation.
///
/// An `Mlp` with no layers is the identity map on `in_dim` columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub hidden: Activation,
    pub output: Activation,
    pub in_dim: usize,
}

impl Mlp {
    /// `dims = [in, h1, ..., out]`; the last layer uses `init_last`.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        dims: &[usize],
        bias: bool,
        hidden: Activation,
        output: Activation,
        init_last: Init,
        rng: &mut R,
    ) -> Self {
        assert!(!dims.is_empty());
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let init = if i + 1 == n {
                    init_last
                } else if hidden == Activation::Relu {
                    Init::He
                } else {
                    Init::Lecun
                };
                Linear::new(store, &format!("{name}.{i}"), dims[i], dims[i + 1], bias, init, rng)
            })
            .collect();
        Self {
            layers,
            hidden,
            output,
            in_dim: dims[0],
        }
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(self.in_dim, |l| l.out_dim)
    }

    pub fn forward(&self, tape: &mut Tape, bound: &[Var], x: Var) -> Result<Var> {
        let shape = tape.value(x).shape().to_vec();
        let cols = tape.value(x).cols();
        if cols != self.in_dim {
            return Err(Error::shape("mlp input", &[shape.first().copied().unwrap_or(1), self.in_dim], &shape));
        }
        let mut h = x;
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, bound, h);
            let act = if i + 1 == n { self.output } else { self.hidden };
            h = act.apply(tape, h);
        }
        Ok(h)
    }

    /// Forward pass without keeping the tape.
    pub fn eval(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = store.bind_frozen(&mut tape);
        let xv = tape.constant(x.clone());
        let y = self.forward(&mut tape, &bound, xv)?;
        Ok(tape.value(y).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(0)
    }

    #[test]
    fn identity_graph() {
        let store = ParamStore::new();
        let net = Mlp::new(&mut ParamStore::new(), "id", &[3], true, Activation::Relu, Activation::Identity, Init::He, &mut rng());
        let y = net.eval(&store, &Tensor::row(&[1.0, 2.0, 3.0])).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn zero_linear_annihilates() {
        let mut store = ParamStore::new();
        let net = Mlp::new(&mut store, "z", &[4, 2], true, Activation::Relu, Activation::Identity, Init::Zeros, &mut rng());
        let y = net.eval(&store, &Tensor::row(&[1.0, -2.0, 3.5, 9.0])).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0]);
    }

    #[test]
    fn hand_set_two_layer_net() {
        // W1 = [[1, 2], [-1, 1]], b1 = [0, 0.5]; relu; W2 = [[2, -3]], b2 = [1]
        // x = [1, 2]: h = relu([5, 1.5]) = [5, 1.5]; y = 10 - 4.5 + 1 = 6.5
        let mut store = ParamStore::new();
        let net = Mlp::new(&mut store, "n", &[2, 2, 1], true, Activation::Relu, Activation::Identity, Init::Zeros, &mut rng());
        *store.get_mut(0) = Tensor::matrix(2, 2, vec![1.0, 2.0, -1.0, 1.0]);
        *store.get_mut(1) = Tensor::row(&[0.0, 0.5]);
        *store.get_mut(2) = Tensor::matrix(1, 2, vec![2.0, -3.0]);
        *store.get_mut(3) = Tensor::row(&[1.0]);
        let y = net.eval(&store, &Tensor::row(&[1.0, 2.0])).unwrap();
        assert_eq!(y.item(), 6.5);
        // x = [2, -1]: pre = [0, -2.5] → h = [0, 0]; y = 1
        let y = net.eval(&store, &Tensor::row(&[2.0, -1.0])).unwrap();
        assert_eq!(y.item(), 1.0);
    }

    #[test]
    fn shape_mismatch_reports_both_shapes() {
        let mut store = ParamStore::new();
        let net = Mlp::new(&mut store, "n", &[3, 2], true, Activation::Relu, Activation::Identity, Init::He, &mut rng());
        let err = net.eval(&store, &Tensor::row(&[1.0, 2.0])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[1, 3]") && msg.contains("[1, 2]"), "{msg}");
    }

    #[test]
    fn forward_is_deterministic() {
        let mut store = ParamStore::new();
        let net = Mlp::new(&mut store, "n", &[5, 16, 16, 1], true, Activation::Relu, Activation::Tanh, Init::He, &mut rng());
        let x = Tensor::randn(&[7, 5], 1.0, &mut rng());
        let a = net.eval(&store, &x).unwrap();
        let b = net.eval(&store, &x).unwrap();
        assert_eq!(
            a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}
