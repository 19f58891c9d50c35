//! Tape-based reverse-mode differentiation over [`Tensor`] matrices.
//!
//! Every operation appends a node holding its output value and whatever it
//! needs for the reverse pass. [`Tape::backward`] walks the nodes once, in
//! reverse order, accumulating gradients into the nodes that require them.

use std::sync::Arc;

use super::bspline::BSplineGrid;
use super::tensor::{gemm, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Probability clamp applied before taking logs in the cross-entropy.
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug)]
enum Op {
    Leaf,
    Linear { x: Var, w: Var, b: Option<Var> },
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Silu(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MulCol { x: Var, s: Var },
    Affine { x: Var, scale: Arc<Vec<f64>> },
    Concat(Vec<Var>),
    NormalizeRows { x: Var, scale: f64, norms: Vec<f64> },
    GatherRows { table: Var, idx: Vec<usize> },
    SumSquaresRows(Var),
    Sum(Var),
    Mean(Var),
    Bce { pred: Var, target: Var, swapped: bool },
    Mse { pred: Var, target: Var },
    ClampedL1 { pred: Var, target: Var, delta: f64 },
    Kan(Box<KanCache>),
}

#[derive(Debug)]
struct KanCache {
    x: Var,
    coef: Var,
    spline_w: Var,
    base_w: Var,
    grid: Arc<BSplineGrid>,
    /// Per input element: first active basis index (usize::MAX when outside
    /// the span), followed by `degree + 1` values and derivatives.
    first: Vec<usize>,
    vals: Vec<f64>,
    derivs: Vec<f64>,
    /// Spline sum per (row, out, in), needed for the spline-weight gradient.
    spline_terms: Vec<f64>,
    anchor: Option<(usize, Vec<f64>)>,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf whose gradient is reported by [`backward`](Self::backward).
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// `x W^T + b` with `x: B x in`, `W: out x in`, `b: 1 x out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        let (rows, inp) = (xv.rows(), xv.cols());
        let out = wv.rows();
        assert_eq!(wv.cols(), inp, "linear: input width {inp} vs weight {:?}", wv.shape());
        let mut y = vec![0.0; rows * out];
        gemm(rows, inp, out, xv.data(), false, wv.data(), true, &mut y, false);
        if let Some(b) = b {
            let bv = self.value(b).data();
            assert_eq!(bv.len(), out, "linear: bias length");
            for r in 0..rows {
                for (yv, bv) in y[r * out..(r + 1) * out].iter_mut().zip(bv) {
                    *yv += bv;
                }
            }
        }
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        self.push(Tensor::matrix(rows, out, y), Op::Linear { x, w, b }, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| if v > 0.0 { v } else { 0.0 });
        let rg = self.rg(x);
        self.push(y, Op::Relu(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let y = self.value(x).map(f64::tanh);
        let rg = self.rg(x);
        self.push(y, Op::Tanh(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.value(x).map(sigmoid);
        let rg = self.rg(x);
        self.push(y, Op::Sigmoid(x), rg)
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(silu);
        let rg = self.rg(x);
        self.push(y, Op::Silu(x), rg)
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(av.shape(), bv.shape(), "elementwise op on mismatched shapes");
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let y = Tensor::new(av.shape().to_vec(), data).expect("same length");
        let rg = self.rg(a) || self.rg(b);
        self.push(y, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let y = self.value(x).map(|v| v * c);
        let rg = self.rg(x);
        self.push(y, Op::Scale(x, c), rg)
    }

    /// Multiply row `r` of `x` by `s[r]` (`s: B x 1`).
    pub fn mul_col(&mut self, x: Var, s: Var) -> Var {
        let xv = self.value(x);
        let sv = self.value(s);
        assert_eq!(sv.len(), xv.rows(), "mul_col: one scale per row");
        let c = xv.cols();
        let mut data = xv.data().to_vec();
        for (r, &k) in sv.data().iter().enumerate() {
            data[r * c..(r + 1) * c].iter_mut().for_each(|v| *v *= k);
        }
        let y = Tensor::new(xv.shape().to_vec(), data).expect("same length");
        let rg = self.rg(x) || self.rg(s);
        self.push(y, Op::MulCol { x, s }, rg)
    }

    /// Per-column affine map `(x - shift) * scale` with constant coefficients.
    pub fn affine(&mut self, x: Var, shift: &[f64], scale: Arc<Vec<f64>>) -> Var {
        let xv = self.value(x);
        let c = xv.cols();
        assert_eq!(shift.len(), c, "affine: shift length");
        assert_eq!(scale.len(), c, "affine: scale length");
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(c) {
            for j in 0..c {
                row[j] = (row[j] - shift[j]) * scale[j];
            }
        }
        let y = Tensor::new(xv.shape().to_vec(), data).expect("same length");
        let rg = self.rg(x);
        self.push(y, Op::Affine { x, scale }, rg)
    }

    /// Column-wise concatenation of matrices with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; rows * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let pv = self.value(p);
            assert_eq!(pv.rows(), rows, "concat: row count mismatch");
            for r in 0..rows {
                data[r * total + off..r * total + off + w].copy_from_slice(pv.row_slice(r));
            }
            off += w;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Tensor::matrix(rows, total, data), Op::Concat(parts.to_vec()), rg)
    }

    /// `scale * x_r / ||x_r||` for every row. Zero rows map to zero.
    pub fn normalize_rows(&mut self, x: Var, scale: f64) -> Var {
        let xv = self.value(x);
        let c = xv.cols();
        let mut norms = Vec::with_capacity(xv.rows());
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(c.max(1)) {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            norms.push(n);
            if n > 0.0 {
                row.iter_mut().for_each(|v| *v = *v / n * scale);
            }
        }
        let y = Tensor::new(xv.shape().to_vec(), data).expect("same length");
        let rg = self.rg(x);
        self.push(y, Op::NormalizeRows { x, scale, norms }, rg)
    }

    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Var {
        let y = self.value(table).select_rows(idx);
        let rg = self.rg(table);
        self.push(
            y,
            Op::GatherRows {
                table,
                idx: idx.to_vec(),
            },
            rg,
        )
    }

    /// Row-wise squared norms, `B x 1`.
    pub fn sum_squares_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let rows = xv.rows();
        let data = (0..rows)
            .map(|r| xv.row_slice(r).iter().map(|v| v * v).sum())
            .collect();
        let rg = self.rg(x);
        self.push(Tensor::matrix(rows, 1, data), Op::SumSquaresRows(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let s = xv.data().iter().sum::<f64>() / xv.len() as f64;
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// Mean binary cross-entropy. With `swapped`, the roles of prediction and
    /// target inside the logs are exchanged.
    pub fn bce(&mut self, pred: Var, target: Var, swapped: bool) -> Var {
        let p = self.value(pred);
        let t = self.value(target);
        assert_eq!(p.shape(), t.shape(), "bce: shape mismatch");
        let clamp = |v: f64| v.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        let n = p.len() as f64;
        let total: f64 = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(&p, &t)| {
                let (a, b) = if swapped { (p, clamp(t)) } else { (t, clamp(p)) };
                -(a * b.ln() + (1.0 - a) * (1.0 - b).ln())
            })
            .sum();
        let rg = self.rg(pred) || self.rg(target);
        self.push(
            Tensor::scalar(total / n),
            Op::Bce {
                pred,
                target,
                swapped,
            },
            rg,
        )
    }

    /// Mean squared error.
    pub fn mse(&mut self, pred: Var, target: Var) -> Var {
        let p = self.value(pred);
        let t = self.value(target);
        assert_eq!(p.shape(), t.shape(), "mse: shape mismatch");
        let n = p.len() as f64;
        let total: f64 = p.data().iter().zip(t.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        let rg = self.rg(pred) || self.rg(target);
        self.push(Tensor::scalar(total / n), Op::Mse { pred, target }, rg)
    }

    /// Mean of `|clamp(pred, ±delta) - clamp(target, ±delta)|`.
    pub fn clamped_l1(&mut self, pred: Var, target: Var, delta: f64) -> Var {
        let p = self.value(pred);
        let t = self.value(target);
        assert_eq!(p.len(), t.len(), "clamped_l1: length mismatch");
        let n = p.len() as f64;
        let total: f64 = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(&a, &b)| (a.clamp(-delta, delta) - b.clamp(-delta, delta)).abs())
            .sum();
        let rg = self.rg(pred);
        self.push(
            Tensor::scalar(total / n),
            Op::ClampedL1 {
                pred,
                target,
                delta,
            },
            rg,
        )
    }

    /// One KAN layer: `y[b,o] = sum_i base_w[o,i] silu(x[b,i]) + spline_w[o,i] s_oi(x[b,i])`
    /// where `s_oi` is the B-spline with coefficients `coef[o,i,:]`.
    ///
    /// With `anchored`, every spline is shifted by its value at zero so the
    /// layer maps the zero vector to exactly zero.
    pub fn kan(
        &mut self,
        x: Var,
        coef: Var,
        spline_w: Var,
        base_w: Var,
        grid: Arc<BSplineGrid>,
        anchored: bool,
    ) -> Var {
        let xv = self.value(x);
        let (rows, inp) = (xv.rows(), xv.cols());
        let sw = self.value(spline_w);
        let out = sw.rows();
        assert_eq!(sw.cols(), inp, "kan: spline weight shape");
        assert_eq!(self.value(base_w).shape(), sw.shape(), "kan: base weight shape");
        let nb = grid.num_basis();
        let cv = self.value(coef);
        assert_eq!(cv.len(), out * inp * nb, "kan: coefficient count");
        let k1 = grid.degree() + 1;

        let mut first = vec![usize::MAX; rows * inp];
        let mut vals = vec![0.0; rows * inp * k1];
        let mut derivs = vec![0.0; rows * inp * k1];
        for (e, &xe) in xv.data().iter().enumerate() {
            let v = &mut vals[e * k1..(e + 1) * k1];
            let d = &mut derivs[e * k1..(e + 1) * k1];
            if let Some(f) = grid.eval_local(xe, v, Some(d)) {
                first[e] = f;
            }
        }
        let anchor = anchored.then(|| {
            let mut v0 = vec![0.0; k1];
            let f0 = grid.eval_local(0.0, &mut v0, None).unwrap_or(usize::MAX);
            (f0, v0)
        });

        let c = cv.data();
        let bw = self.value(base_w).data();
        let swd = sw.data();
        let mut y = vec![0.0; rows * out];
        let mut spline_terms = vec![0.0; rows * out * inp];
        for r in 0..rows {
            for i in 0..inp {
                let e = r * inp + i;
                let xe = xv.data()[e];
                let gate = silu(xe);
                let f = first[e];
                for o in 0..out {
                    let cbase = (o * inp + i) * nb;
                    let mut s = 0.0;
                    if f != usize::MAX {
                        for q in 0..k1 {
                            s += c[cbase + f + q] * vals[e * k1 + q];
                        }
                    }
                    if let Some((f0, v0)) = &anchor {
                        if *f0 != usize::MAX {
                            let mut s0 = 0.0;
                            for q in 0..k1 {
                                s0 += c[cbase + f0 + q] * v0[q];
                            }
                            s -= s0;
                        }
                    }
                    spline_terms[(r * out + o) * inp + i] = s;
                    y[r * out + o] += bw[o * inp + i] * gate + swd[o * inp + i] * s;
                }
            }
        }
        let rg = self.rg(x) || self.rg(coef) || self.rg(spline_w) || self.rg(base_w);
        let cache = KanCache {
            x,
            coef,
            spline_w,
            base_w,
            grid,
            first,
            vals,
            derivs,
            spline_terms,
            anchor,
        };
        self.push(Tensor::matrix(rows, out, y), Op::Kan(Box::new(cache)), rg)
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).len(), 1, "backward from a non-scalar node");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
                continue;
            }
            self.propagate(node, &g, &mut grads);
        }
        Gradients { grads }
    }

    fn accum(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let (rows, inp, out) = (xv.rows(), xv.cols(), wv.rows());
                if self.rg(*x) {
                    let mut dx = vec![0.0; rows * inp];
                    gemm(rows, out, inp, gd, false, wv.data(), false, &mut dx, false);
                    self.accum(grads, *x, Tensor::new(xv.shape().to_vec(), dx).unwrap());
                }
                if self.rg(*w) {
                    let mut dw = vec![0.0; out * inp];
                    gemm(out, rows, inp, gd, true, xv.data(), false, &mut dw, false);
                    self.accum(grads, *w, Tensor::new(wv.shape().to_vec(), dw).unwrap());
                }
                if let Some(b) = b {
                    if self.rg(*b) {
                        let mut db = vec![0.0; out];
                        for r in 0..rows {
                            for (d, gv) in db.iter_mut().zip(&gd[r * out..(r + 1) * out]) {
                                *d += gv;
                            }
                        }
                        let shape = self.value(*b).shape().to_vec();
                        self.accum(grads, *b, Tensor::new(shape, db).unwrap());
                    }
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let d = xv
                    .data()
                    .iter()
                    .zip(gd)
                    .map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 })
                    .collect();
                self.accum(grads, *x, Tensor::new(xv.shape().to_vec(), d).unwrap());
            }
            Op::Tanh(x) => {
                let y = node.value.data();
                let d = y.iter().zip(gd).map(|(&t, &gv)| gv * (1.0 - t * t)).collect();
                self.accum(grads, *x, Tensor::new(node.value.shape().to_vec(), d).unwrap());
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                let d = y.iter().zip(gd).map(|(&s, &gv)| gv * s * (1.0 - s)).collect();
                self.accum(grads, *x, Tensor::new(node.value.shape().to_vec(), d).unwrap());
            }
            Op::Silu(x) => {
                let xv = self.value(*x);
                let d = xv.data().iter().zip(gd).map(|(&v, &gv)| gv * silu_grad(v)).collect();
                self.accum(grads, *x, Tensor::new(xv.shape().to_vec(), d).unwrap());
            }
            Op::Add(a, b) => {
                self.accum(grads, *a, g.clone());
                self.accum(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accum(grads, *a, g.clone());
                self.accum(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let shape = g.shape().to_vec();
                if self.rg(*a) {
                    let d = gd.iter().zip(bv).map(|(g, b)| g * b).collect();
                    self.accum(grads, *a, Tensor::new(shape.clone(), d).unwrap());
                }
                if self.rg(*b) {
                    let d = gd.iter().zip(av).map(|(g, a)| g * a).collect();
                    self.accum(grads, *b, Tensor::new(shape, d).unwrap());
                }
            }
            Op::Scale(x, c) => self.accum(grads, *x, g.map(|v| v * c)),
            Op::MulCol { x, s } => {
                let xv = self.value(*x);
                let sv = self.value(*s);
                let c = xv.cols();
                if self.rg(*x) {
                    let mut d = gd.to_vec();
                    for (r, &k) in sv.data().iter().enumerate() {
                        d[r * c..(r + 1) * c].iter_mut().for_each(|v| *v *= k);
                    }
                    self.accum(grads, *x, Tensor::new(xv.shape().to_vec(), d).unwrap());
                }
                if self.rg(*s) {
                    let d = (0..xv.rows())
                        .map(|r| {
                            xv.row_slice(r)
                                .iter()
                                .zip(&gd[r * c..(r + 1) * c])
                                .map(|(a, b)| a * b)
                                .sum()
                        })
                        .collect();
                    self.accum(grads, *s, Tensor::new(sv.shape().to_vec(), d).unwrap());
                }
            }
            Op::Affine { x, scale } => {
                let c = scale.len();
                let mut d = gd.to_vec();
                for row in d.chunks_mut(c) {
                    for j in 0..c {
                        row[j] *= scale[j];
                    }
                }
                self.accum(grads, *x, Tensor::new(g.shape().to_vec(), d).unwrap());
            }
            Op::Concat(parts) => {
                let rows = g.rows();
                let total = g.cols();
                let mut off = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let w = pv.cols();
                    if self.rg(p) {
                        let mut d = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            d.extend_from_slice(&gd[r * total + off..r * total + off + w]);
                        }
                        self.accum(grads, p, Tensor::new(pv.shape().to_vec(), d).unwrap());
                    }
                    off += w;
                }
            }
            Op::NormalizeRows { x, scale, norms } => {
                let y = &node.value;
                let c = y.cols();
                let mut d = vec![0.0; y.len()];
                for (r, &n) in norms.iter().enumerate() {
                    if n == 0.0 {
                        continue;
                    }
                    let yr = y.row_slice(r);
                    let gr = &gd[r * c..(r + 1) * c];
                    // y = s * x/|x|; dy/dx = (s/|x|)(I - x̂ x̂^T), x̂ = y/s
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum::<f64>() / scale;
                    for j in 0..c {
                        d[r * c + j] = scale / n * (gr[j] - yr[j] / scale * dot);
                    }
                }
                self.accum(grads, *x, Tensor::new(y.shape().to_vec(), d).unwrap());
            }
            Op::GatherRows { table, idx } => {
                let tv = self.value(*table);
                let c = tv.cols();
                let mut d = Tensor::zeros(tv.shape());
                for (r, &i) in idx.iter().enumerate() {
                    let dst = d.row_slice_mut(i);
                    for (a, b) in dst.iter_mut().zip(&gd[r * c..(r + 1) * c]) {
                        *a += b;
                    }
                }
                self.accum(grads, *table, d);
            }
            Op::SumSquaresRows(x) => {
                let xv = self.value(*x);
                let c = xv.cols();
                let mut d = xv.data().to_vec();
                for (r, row) in d.chunks_mut(c.max(1)).enumerate() {
                    row.iter_mut().for_each(|v| *v *= 2.0 * gd[r]);
                }
                self.accum(grads, *x, Tensor::new(xv.shape().to_vec(), d).unwrap());
            }
            Op::Sum(x) => {
                let xv = self.value(*x);
                self.accum(grads, *x, Tensor::full(xv.shape(), gd[0]));
            }
            Op::Mean(x) => {
                let xv = self.value(*x);
                self.accum(grads, *x, Tensor::full(xv.shape(), gd[0] / xv.len() as f64));
            }
            Op::Bce {
                pred,
                target,
                swapped,
            } => {
                let p = self.value(*pred);
                let t = self.value(*target);
                let n = p.len() as f64;
                let scale = gd[0] / n;
                let inside = |v: f64| v > BCE_CLAMP && v < 1.0 - BCE_CLAMP;
                let clamp = |v: f64| v.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                let (dp, dt): (Vec<f64>, Vec<f64>) = p
                    .data()
                    .iter()
                    .zip(t.data())
                    .map(|(&pv, &tv)| {
                        if *swapped {
                            let tc = clamp(tv);
                            let pc = clamp(pv);
                            let dp = if inside(pv) { (1.0 - tc).ln() - tc.ln() } else { 0.0 };
                            let dt = if inside(tv) { -pc / tc + (1.0 - pc) / (1.0 - tc) } else { 0.0 };
                            (dp * scale, dt * scale)
                        } else {
                            let pc = clamp(pv);
                            let dp = if inside(pv) { -tv / pc + (1.0 - tv) / (1.0 - pc) } else { 0.0 };
                            let dt = (1.0 - pc).ln() - pc.ln();
                            (dp * scale, dt * scale)
                        }
                    })
                    .unzip();
                self.accum(grads, *pred, Tensor::new(p.shape().to_vec(), dp).unwrap());
                self.accum(grads, *target, Tensor::new(t.shape().to_vec(), dt).unwrap());
            }
            Op::Mse { pred, target } => {
                let p = self.value(*pred);
                let t = self.value(*target);
                let k = 2.0 * gd[0] / p.len() as f64;
                let dp: Vec<f64> = p.data().iter().zip(t.data()).map(|(a, b)| k * (a - b)).collect();
                let dt = dp.iter().map(|v| -v).collect();
                self.accum(grads, *pred, Tensor::new(p.shape().to_vec(), dp).unwrap());
                self.accum(grads, *target, Tensor::new(t.shape().to_vec(), dt).unwrap());
            }
            Op::ClampedL1 {
                pred,
                target,
                delta,
            } => {
                let p = self.value(*pred);
                let t = self.value(*target);
                let k = gd[0] / p.len() as f64;
                let dp = p
                    .data()
                    .iter()
                    .zip(t.data())
                    .map(|(&a, &b)| {
                        if a.abs() >= *delta {
                            return 0.0;
                        }
                        let diff = a - b.clamp(-delta, *delta);
                        if diff > 0.0 {
                            k
                        } else if diff < 0.0 {
                            -k
                        } else {
                            0.0
                        }
                    })
                    .collect();
                self.accum(grads, *pred, Tensor::new(p.shape().to_vec(), dp).unwrap());
            }
            Op::Kan(cache) => self.kan_backward(cache, g, grads),
        }
    }

    fn kan_backward(&self, kc: &KanCache, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let xv = self.value(kc.x);
        let (rows, inp) = (xv.rows(), xv.cols());
        let out = g.cols();
        let nb = kc.grid.num_basis();
        let k1 = kc.grid.degree() + 1;
        let c = self.value(kc.coef).data();
        let sw = self.value(kc.spline_w).data();
        let bw = self.value(kc.base_w).data();
        let gd = g.data();

        let want_x = self.rg(kc.x);
        let want_c = self.rg(kc.coef);
        let want_sw = self.rg(kc.spline_w);
        let want_bw = self.rg(kc.base_w);
        let mut dx = vec![0.0; if want_x { rows * inp } else { 0 }];
        let mut dc = vec![0.0; if want_c { c.len() } else { 0 }];
        let mut dsw = vec![0.0; if want_sw { out * inp } else { 0 }];
        let mut dbw = vec![0.0; if want_bw { out * inp } else { 0 }];

        for r in 0..rows {
            for i in 0..inp {
                let e = r * inp + i;
                let xe = xv.data()[e];
                let gate = silu(xe);
                let gate_d = silu_grad(xe);
                let f = kc.first[e];
                let vals = &kc.vals[e * k1..(e + 1) * k1];
                let ders = &kc.derivs[e * k1..(e + 1) * k1];
                for o in 0..out {
                    let go = gd[r * out + o];
                    if go == 0.0 {
                        continue;
                    }
                    let w = o * inp + i;
                    let cbase = w * nb;
                    if want_bw {
                        dbw[w] += go * gate;
                    }
                    if want_sw {
                        dsw[w] += go * kc.spline_terms[(r * out + o) * inp + i];
                    }
                    if f != usize::MAX {
                        if want_x {
                            let mut ds = 0.0;
                            for q in 0..k1 {
                                ds += c[cbase + f + q] * ders[q];
                            }
                            dx[e] += go * sw[w] * ds;
                        }
                        if want_c {
                            for q in 0..k1 {
                                dc[cbase + f + q] += go * sw[w] * vals[q];
                            }
                        }
                    }
                    if want_c {
                        if let Some((f0, v0)) = &kc.anchor {
                            if *f0 != usize::MAX {
                                for q in 0..k1 {
                                    dc[cbase + f0 + q] -= go * sw[w] * v0[q];
                                }
                            }
                        }
                    }
                    if want_x {
                        dx[e] += go * bw[w] * gate_d;
                    }
                }
            }
        }
        if want_x {
            self.accum(grads, kc.x, Tensor::new(xv.shape().to_vec(), dx).unwrap());
        }
        if want_c {
            let shape = self.value(kc.coef).shape().to_vec();
            self.accum(grads, kc.coef, Tensor::new(shape, dc).unwrap());
        }
        if want_sw {
            let shape = self.value(kc.spline_w).shape().to_vec();
            self.accum(grads, kc.spline_w, Tensor::new(shape, dsw).unwrap());
        }
        if want_bw {
            let shape = self.value(kc.base_w).shape().to_vec();
            self.accum(grads, kc.base_w, Tensor::new(shape, dbw).unwrap());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut t = Tape::new();
        let x = t.param(Tensor::scalar(3.0));
        let y = t.mul(x, x);
        let g = t.backward(y);
        assert_eq!(t.value(y).item(), 9.0);
        assert_eq!(g.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::row(&[1.0, 2.0]));
        let b = t.param(Tensor::row(&[3.0, 4.0]));
        let p = t.mul(a, b);
        let s = t.sum(p);
        let g = t.backward(s);
        assert!(g.get(a).is_none());
        assert_eq!(g.get(b).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn reused_node_accumulates() {
        // f = sum(x + x) → df/dx = 2
        let mut t = Tape::new();
        let x = t.param(Tensor::row(&[1.0, -1.0]));
        let y = t.add(x, x);
        let s = t.sum(y);
        let g = t.backward(s);
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn bce_half_is_ln2() {
        let mut t = Tape::new();
        let p = t.param(Tensor::row(&[0.5, 0.5]));
        let y = t.constant(Tensor::row(&[0.5, 0.5]));
        let l = t.bce(p, y, false);
        assert!((t.value(l).item() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn normalize_rows_has_requested_norm() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::matrix(2, 3, vec![1.0, 2.0, 2.0, 0.0, 0.0, 0.5]));
        let y = t.normalize_rows(x, 2.5);
        let v = t.value(y);
        for r in 0..2 {
            let n: f64 = v.row_slice(r).iter().map(|a| a * a).sum::<f64>().sqrt();
            assert!((n - 2.5).abs() < 1e-12);
        }
    }
}
