//! B-spline bases on an extended knot vector.
//!
//! A grid with `intervals` interior intervals on `[lo, hi]` and polynomial
//! degree `k` carries `intervals + 2k + 1` knots and `intervals + k` basis
//! functions. Degree 0 is the piecewise-constant basis.
//!
//! Outside `[lo, hi]` every basis value is zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BSplineGrid {
    knots: Vec<f64>,
    degree: usize,
}

impl BSplineGrid {
    /// Build from an explicit extended knot vector.
    pub fn new(knots: Vec<f64>, degree: usize) -> Result<Self> {
        if knots.len() < 2 * degree + 2 {
            return Err(Error::InvalidArgument(format!(
                "degree {degree} needs at least {} knots, got {}",
                2 * degree + 2,
                knots.len()
            )));
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) || knots.iter().any(|k| !k.is_finite()) {
            return Err(Error::InvalidArgument(
                "knots must be finite and strictly increasing".into(),
            ));
        }
        Ok(Self { knots, degree })
    }

    /// Uniform grid with `intervals` intervals on `[lo, hi]`, padded by
    /// `degree` knots on each side.
    pub fn uniform(intervals: usize, lo: f64, hi: f64, degree: usize) -> Result<Self> {
        if intervals == 0 || !(hi > lo) {
            return Err(Error::InvalidArgument(format!(
                "uniform grid needs intervals >= 1 and hi > lo (got {intervals}, [{lo}, {hi}])"
            )));
        }
        let h = (hi - lo) / intervals as f64;
        let knots = (0..=intervals + 2 * degree)
            .map(|j| lo + (j as f64 - degree as f64) * h)
            .collect();
        Self::new(knots, degree)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn intervals(&self) -> usize {
        self.knots.len() - 2 * self.degree - 1
    }

    /// Number of basis functions (= coefficients per edge).
    pub fn num_basis(&self) -> usize {
        self.intervals() + self.degree
    }

    /// The span `[lo, hi]` on which the bases form a partition of unity.
    pub fn span(&self) -> (f64, f64) {
        (
            self.knots[self.degree],
            self.knots[self.knots.len() - 1 - self.degree],
        )
    }

    /// Index `mu` with `t[mu] <= x < t[mu+1]` inside the span; the right end
    /// belongs to the last interval.
    fn locate(&self, x: f64) -> Option<usize> {
        let (lo, hi) = self.span();
        if !(x >= lo && x <= hi) {
            return None;
        }
        let first = self.degree;
        let last = self.knots.len() - 2 - self.degree;
        // knots[first..=last+1] bracket the span
        let slice = &self.knots[first..=last + 1];
        let pos = slice.partition_point(|&t| t <= x);
        Some((first + pos.saturating_sub(1)).min(last))
    }

    /// Nonzero bases of degree `deg` at `x` (`deg + 1` values) for interval
    /// `mu`; entry `r` belongs to basis `mu - deg + r`.
    fn local(&self, x: f64, mu: usize, deg: usize, out: &mut [f64]) {
        let t = &self.knots;
        let mut left = [0.0f64; 16];
        let mut right = [0.0f64; 16];
        assert!(deg < 16, "spline degree too large");
        out[0] = 1.0;
        for j in 1..=deg {
            left[j] = x - t[mu + 1 - j];
            right[j] = t[mu + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = out[r] / (right[r + 1] + left[j - r]);
                out[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            out[j] = saved;
        }
    }

    /// Dense basis vector at `x` (length [`num_basis`](Self::num_basis)).
    pub fn basis(&self, x: f64) -> Vec<f64> {
        let mut dense = vec![0.0; self.num_basis()];
        let mut vals = vec![0.0; self.degree + 1];
        if let Some(first) = self.eval_local(x, &mut vals, None) {
            dense[first..first + vals.len()].copy_from_slice(&vals);
        }
        dense
    }

    /// Values (and optionally derivatives) of the `degree + 1` bases that can
    /// be nonzero at `x`. Returns the index of the first one, or `None` when
    /// `x` lies outside the span.
    pub fn eval_local(&self, x: f64, vals: &mut [f64], derivs: Option<&mut [f64]>) -> Option<usize> {
        let k = self.degree;
        let mu = self.locate(x)?;
        self.local(x, mu, k, vals);
        if let Some(d) = derivs {
            d[..=k].iter_mut().for_each(|v| *v = 0.0);
            if k > 0 {
                // B'_{i,k} = k/(t[i+k]-t[i]) B_{i,k-1} - k/(t[i+k+1]-t[i+1]) B_{i+1,k-1}
                let mut lower = [0.0f64; 16];
                self.local(x, mu, k - 1, &mut lower);
                let t = &self.knots;
                let kf = k as f64;
                for r in 0..=k {
                    let i = mu - k + r;
                    // lower[s] is B_{mu-k+1+s, k-1}
                    let a = if r >= 1 { lower[r - 1] } else { 0.0 };
                    let b = if r < k { lower[r] } else { 0.0 };
                    d[r] = kf * a / (t[i + k] - t[i]) - kf * b / (t[i + k + 1] - t[i + 1]);
                }
            }
        }
        Some(mu - k)
    }
}

/// Textbook recursive Cox–de Boor evaluation of basis `i` of degree `k`.
/// Used as an independent check on [`BSplineGrid::basis`].
pub fn cox_de_boor(knots: &[f64], i: usize, k: usize, x: f64) -> f64 {
    if k == 0 {
        return if knots[i] <= x && x < knots[i + 1] { 1.0 } else { 0.0 };
    }
    let mut acc = 0.0;
    let d1 = knots[i + k] - knots[i];
    if d1 > 0.0 {
        acc += (x - knots[i]) / d1 * cox_de_boor(knots, i, k - 1, x);
    }
    let d2 = knots[i + k + 1] - knots[i + 1];
    if d2 > 0.0 {
        acc += (knots[i + k + 1] - x) / d2 * cox_de_boor(knots, i + 1, k - 1, x);
    }
    acc
}
