use super::params::Param;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Default central-difference step.
pub const GRAD_CHECK_STEP: f64 = 1e-5;
/// The wide stencil uses `h * WIDE_STEP_FACTOR`.
const WIDE_STEP_FACTOR: f64 = 100.0;
/// Denominator floor for the relative error.
pub const GRAD_CHECK_FLOOR: f64 = 1e-8;

/// Compare tape gradients of a scalar function against finite differences.
///
/// `f` builds the function on a tape from the bound parameter vars. Returns
/// the maximum over all parameter elements of
/// `|analytic - numeric| / max(|analytic|, |numeric|, floor)`, where each
/// element scores against the closer of a central difference at `h` and a
/// five-point difference at `100 h`.
pub fn grad_check<F>(params: &mut [Param], h: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("perturbation must be > 0, got {h}")));
    }
    let eval = |params: &[Param], with_grad: bool| -> Result<(f64, Option<Vec<Vec<f64>>>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params
            .iter()
            .map(|p| {
                if with_grad {
                    tape.param(p.value.clone())
                } else {
                    tape.constant(p.value.clone())
                }
            })
            .collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out);
        if v.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "grad_check needs a scalar output, got shape {:?}",
                v.shape()
            )));
        }
        let value = v.item();
        if !with_grad {
            return Ok((value, None));
        }
        let grads = tape.backward(out);
        let g = vars
            .iter()
            .zip(params)
            .map(|(&v, p)| {
                grads
                    .get(v)
                    .map(|t| t.data().to_vec())
                    .unwrap_or_else(|| vec![0.0; p.value.len()])
            })
            .collect();
        Ok((value, Some(g)))
    };

    let (_, analytic) = eval(params, true)?;
    let analytic = analytic.expect("requested gradients");
    let mut worst: f64 = 0.0;
    for pi in 0..params.len() {
        for ei in 0..params[pi].value.len() {
            let orig = params[pi].value.data()[ei];
            let mut at = |offset: f64| -> Result<f64> {
                params[pi].value.data_mut()[ei] = orig + offset;
                let (f, _) = eval(params, false)?;
                params[pi].value.data_mut()[ei] = orig;
                Ok(f)
            };
            let central = (at(h)? - at(-h)?) / (2.0 * h);
            // Fourth-order stencil at a wider step: far less round-off for
            // gradients many orders below the function value.
            let w = h * WIDE_STEP_FACTOR;
            let wide = (-at(2.0 * w)? + 8.0 * at(w)? - 8.0 * at(-w)? + at(-2.0 * w)?) / (12.0 * w);
            let a = analytic[pi][ei];
            let err = |numeric: f64| (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
            worst = worst.max(err(central).min(err(wide)));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::layers::{Activation, Init, Mlp};
    use crate::numerics::params::ParamStore;
    use crate::numerics::tensor::Tensor;
    use rand::SeedableRng;

    fn p(v: f64) -> Vec<Param> {
        vec![Param {
            name: "x".into(),
            value: Tensor::scalar(v),
        }]
    }

    #[test]
    fn square_at_three() {
        let mut params = p(3.0);
        let err = grad_check(&mut params, GRAD_CHECK_STEP, |t, v| Ok(t.mul(v[0], v[0]))).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn constant_function_uses_floor() {
        let mut params = p(3.0);
        let err = grad_check(&mut params, GRAD_CHECK_STEP, |t, _| Ok(t.constant(Tensor::scalar(4.0)))).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn rejects_non_scalar_output() {
        let mut params = p(3.0);
        let r = grad_check(&mut params, GRAD_CHECK_STEP, |t, _| Ok(t.constant(Tensor::row(&[1.0, 2.0]))));
        assert!(r.is_err());
    }

    #[test]
    fn rejects_non_positive_step() {
        let mut params = p(3.0);
        assert!(grad_check(&mut params, 0.0, |t, v| Ok(t.mul(v[0], v[0]))).is_err());
    }

    #[test]
    fn random_two_layer_net() {
        for seed in 0..10u64 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParamStore::new();
            let net = Mlp::new(&mut store, "n", &[4, 8, 1], true, Activation::Tanh, Activation::Identity, Init::Lecun, &mut rng);
            let x = Tensor::randn(&[3, 4], 1.0, &mut rng);
            let mut params = store.params().to_vec();
            let err = grad_check(&mut params, GRAD_CHECK_STEP, |t, v| {
                let xi = t.constant(x.clone());
                let y = net.forward(t, v, xi)?;
                Ok(t.mean(y))
            })
            .unwrap();
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }
}
