//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every operation as it is applied. Calling
//! [`Graph::backward`] on a scalar node walks the tape once in reverse and
//! returns the gradient of every registered parameter, after which the tape is
//! released and the graph refuses further use.

use super::{NnError, ParameterSet, Tensor};

/// Layer-norm variance stabilizer.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    LayerNorm {
        x: Var,
        gain: Var,
        offset: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Relu(Var),
    Tanh(Var),
    AffineCols {
        x: Var,
        scale: Vec<f64>,
    },
    ConcatCols(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Square(Var),
    Scale(Var, f64),
    Sum(Var),
    Mean(Var),
    Injected {
        x: Var,
        grad: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    param: Option<String>,
    needs_grad: bool,
}

/// Computation tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    consumed: bool,
}

/// `a·b` into a fresh buffer, with `a` logically `m×k` and `b` logically
/// `k×n`. A `*_t` flag means the slice stores the transpose in row-major
/// order. The kernel runs with `beta = 0` and never reads the destination,
/// so it is not zero-filled first.
pub(crate) fn gemm_new(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool) -> Vec<f64> {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    if m == 0 || n == 0 || k == 0 {
        return vec![0.0; m * n];
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let mut c: Vec<f64> = Vec::with_capacity(m * n);
    // SAFETY: the asserts bound every index the strides reach; every element of `c` is written
    // before `set_len` exposes it.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
        c.set_len(m * n);
    }
    c
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn live(&self) -> Result<(), NnError> {
        if self.consumed {
            Err(NnError::GraphConsumed)
        } else {
            Ok(())
        }
    }

    fn push(&mut self, value: Tensor, op: Op, name: &str) -> Result<Var, NnError> {
        value.check_finite(name)?;
        let needs_grad = match &op {
            Op::Leaf => false,
            Op::MatMul(a, b)
            | Op::AddRow(a, b)
            | Op::ConcatCols(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b) => self.needs(*a) || self.needs(*b),
            Op::LayerNorm { x, gain, offset, .. } => {
                self.needs(*x) || self.needs(*gain) || self.needs(*offset)
            }
            Op::Relu(x)
            | Op::Tanh(x)
            | Op::AffineCols { x, .. }
            | Op::Square(x)
            | Op::Scale(x, _)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::Injected { x, .. } => self.needs(*x),
        };
        self.nodes.push(Node {
            value,
            op,
            param: None,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Records a value that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var, NnError> {
        self.live()?;
        self.push(value, Op::Leaf, "constant")
    }

    /// Records a trainable leaf; its gradient is reported under `name`.
    pub fn param(&mut self, name: &str, value: &Tensor) -> Result<Var, NnError> {
        self.live()?;
        if self.nodes.iter().any(|n| n.param.as_deref() == Some(name)) {
            return Err(NnError::DuplicateParameter(name.to_string()));
        }
        let v = self.push(value.clone(), Op::Leaf, name)?;
        let node = &mut self.nodes[v.0];
        node.param = Some(name.to_string());
        node.needs_grad = true;
        Ok(v)
    }

    /// Matrix product of `rows × k` and `k × n` (a rank-1 right operand is `k × 1`).
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.live()?;
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = (av.rows(), av.cols());
        let (kb, n) = match bv.shape() {
            [k, n] => (*k, *n),
            [k] => (*k, 1),
            s => {
                return Err(NnError::ShapeMismatch(format!(
                    "matmul right operand must be 2-D, got {s:?}"
                )))
            }
        };
        if k != kb {
            return Err(NnError::ShapeMismatch(format!(
                "matmul: {:?} · {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let out = gemm_new(m, k, n, av.data(), false, bv.data(), false);
        let value = Tensor::from_parts(vec![m, n], out);
        self.push(value, Op::MatMul(a, b), "matmul")
    }

    /// Adds a length-`cols` vector to every row.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var, NnError> {
        self.live()?;
        let (xv, bv) = (self.value(x), self.value(bias));
        let c = xv.cols();
        if bv.len() != c {
            return Err(NnError::ShapeMismatch(format!(
                "add_row: {:?} + {:?}",
                xv.shape(),
                bv.shape()
            )));
        }
        let mut out = xv.data().to_vec();
        for row in out.chunks_mut(c) {
            for (o, b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let value = Tensor::from_parts(xv.shape().to_vec(), out);
        self.push(value, Op::AddRow(x, bias), "add_row")
    }

    /// Per-row normalization over the last dimension followed by `·gain + offset`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, offset: Var) -> Result<Var, NnError> {
        self.live()?;
        let (xv, gv, ov) = (self.value(x), self.value(gain), self.value(offset));
        let c = xv.cols();
        if c < 1 || xv.shape().is_empty() {
            return Err(NnError::InvalidArgument(
                "layer_norm needs a last dimension of at least 1".into(),
            ));
        }
        if gv.len() != c || ov.len() != c {
            return Err(NnError::ShapeMismatch(format!(
                "layer_norm: input {:?}, gain {:?}, offset {:?}",
                xv.shape(),
                gv.shape(),
                ov.shape()
            )));
        }
        let rows = xv.rows();
        let mut xhat = Vec::with_capacity(xv.len());
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(xv.len());
        for row in xv.data().chunks_exact(c) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(inv);
            let start = xhat.len();
            xhat.extend(row.iter().map(|v| (v - mean) * inv));
            out.extend(xhat[start..].iter().zip(gv.data().iter().zip(ov.data())).map(|(h, (g, o))| h * g + o));
        }
        let value = Tensor::from_parts(xv.shape().to_vec(), out);
        self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                offset,
                xhat,
                inv_std,
            },
            "layer_norm",
        )
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, NnError> {
        self.live()?;
        let xv = self.value(x);
        let out = xv.data().iter().map(|&v| v.max(0.0)).collect();
        let value = Tensor::from_parts(xv.shape().to_vec(), out);
        self.push(value, Op::Relu(x), "relu")
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, NnError> {
        self.live()?;
        let xv = self.value(x);
        let out = xv.data().iter().map(|v| v.tanh()).collect();
        let value = Tensor::from_parts(xv.shape().to_vec(), out);
        self.push(value, Op::Tanh(x), "tanh")
    }

    /// Column-wise `x·scale + shift`.
    pub fn affine_cols(&mut self, x: Var, scale: &[f64], shift: &[f64]) -> Result<Var, NnError> {
        self.live()?;
        let xv = self.value(x);
        let c = xv.cols();
        if scale.len() != c || shift.len() != c {
            return Err(NnError::ShapeMismatch(format!(
                "affine_cols: {} columns, scale {}, shift {}",
                c,
                scale.len(),
                shift.len()
            )));
        }
        let mut out = xv.data().to_vec();
        for row in out.chunks_mut(c) {
            for j in 0..c {
                row[j] = row[j] * scale[j] + shift[j];
            }
        }
        let value = Tensor::from_parts(xv.shape().to_vec(), out);
        self.push(
            value,
            Op::AffineCols {
                x,
                scale: scale.to_vec(),
            },
            "affine_cols",
        )
    }

    /// Joins two matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.live()?;
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() || av.shape().len() != 2 || bv.shape().len() != 2 {
            return Err(NnError::ShapeMismatch(format!(
                "concat_cols: {:?} | {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let (rows, ca, cb) = (av.rows(), av.cols(), bv.cols());
        let mut out = Vec::with_capacity(rows * (ca + cb));
        for r in 0..rows {
            out.extend_from_slice(av.row(r));
            out.extend_from_slice(bv.row(r));
        }
        let value = Tensor::from_parts(vec![rows, ca + cb], out);
        self.push(value, Op::ConcatCols(a, b), "concat_cols")
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<(), NnError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(NnError::ShapeMismatch(format!(
                "{op}: {:?} vs {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<Var, NnError> {
        self.live()?;
        self.same_shape(a, b, name)?;
        let (av, bv) = (self.value(a), self.value(b));
        let out = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::from_parts(av.shape().to_vec(), out);
        self.push(value, op, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.zip_with(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.zip_with(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.zip_with(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    pub fn square(&mut self, x: Var) -> Result<Var, NnError> {
        self.live()?;
        let xv = self.value(x);
        let out = xv.data().iter().map(|v| v * v).collect();
        let value = Tensor::from_parts(xv.shape().to_vec(), out);
        self.push(value, Op::Square(x), "square")
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var, NnError> {
        self.live()?;
        let xv = self.value(x);
        let out = xv.data().iter().map(|v| v * factor).collect();
        let value = Tensor::from_parts(xv.shape().to_vec(), out);
        self.push(value, Op::Scale(x, factor), "scale")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, NnError> {
        self.live()?;
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, NnError> {
        self.live()?;
        let xv = self.value(x);
        if xv.is_empty() {
            return Err(NnError::ShapeMismatch("mean of an empty tensor".into()));
        }
        let m = xv.data().iter().sum::<f64>() / xv.len() as f64;
        self.push(Tensor::scalar(m), Op::Mean(x), "mean")
    }

    /// A scalar whose value and derivative with respect to `x` are supplied by
    /// the caller, for objectives computed outside the tape.
    pub fn injected(&mut self, x: Var, value: f64, grad: Vec<f64>) -> Result<Var, NnError> {
        self.live()?;
        if grad.len() != self.value(x).len() {
            return Err(NnError::ShapeMismatch(format!(
                "injected gradient has {} entries for a tensor of {}",
                grad.len(),
                self.value(x).len()
            )));
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(NnError::NonFinite(format!("injected gradient element {i}")));
        }
        self.push(Tensor::scalar(value), Op::Injected { x, grad }, "injected")
    }

    /// Reverse sweep from the scalar `loss`. Consumes the tape.
    pub fn backward(&mut self, loss: Var) -> Result<ParameterSet, NnError> {
        self.live()?;
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(NnError::NotScalar(lv.shape().to_vec()));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k) = (av.rows(), av.cols());
                    let cols = bv.len() / k;
                    if self.needs(*a) {
                        let da = gemm_new(m, cols, k, &g, false, bv.data(), true);
                        accumulate(&mut grads, *a, da);
                    }
                    if self.needs(*b) {
                        let db = gemm_new(k, m, cols, av.data(), true, &g, false);
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::AddRow(x, bias) => {
                    let c = self.value(*x).cols();
                    if self.needs(*bias) {
                        let mut db = vec![0.0; c];
                        for row in g.chunks(c) {
                            for (d, v) in db.iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                        accumulate(&mut grads, *bias, db);
                    }
                    if self.needs(*x) {
                        accumulate(&mut grads, *x, g);
                    }
                }
                Op::LayerNorm {
                    x,
                    gain,
                    offset,
                    xhat,
                    inv_std,
                } => {
                    let c = self.value(*x).cols();
                    let gv = self.value(*gain).data();
                    if self.needs(*gain) {
                        let mut dg = vec![0.0; c];
                        for (grow, hrow) in g.chunks(c).zip(xhat.chunks(c)) {
                            for j in 0..c {
                                dg[j] += grow[j] * hrow[j];
                            }
                        }
                        accumulate(&mut grads, *gain, dg);
                    }
                    if self.needs(*offset) {
                        let mut db = vec![0.0; c];
                        for row in g.chunks(c) {
                            for (d, v) in db.iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                        accumulate(&mut grads, *offset, db);
                    }
                    if self.needs(*x) {
                        let mut dx = vec![0.0; g.len()];
                        let cf = c as f64;
                        for (r, (grow, hrow)) in g.chunks(c).zip(xhat.chunks(c)).enumerate() {
                            let mut sum_dh = 0.0;
                            let mut sum_dh_h = 0.0;
                            for j in 0..c {
                                let dh = grow[j] * gv[j];
                                sum_dh += dh;
                                sum_dh_h += dh * hrow[j];
                            }
                            let inv = inv_std[r];
                            for j in 0..c {
                                let dh = grow[j] * gv[j];
                                dx[r * c + j] = inv / cf * (cf * dh - sum_dh - hrow[j] * sum_dh_h);
                            }
                        }
                        accumulate(&mut grads, *x, dx);
                    }
                }
                Op::Relu(x) => {
                    let out = node.value.data();
                    let dx = g
                        .iter()
                        .zip(out)
                        .map(|(&d, &y)| if y > 0.0 { d } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *x, dx);
                }
                Op::Tanh(x) => {
                    let out = node.value.data();
                    let dx = g.iter().zip(out).map(|(&d, &y)| d * (1.0 - y * y)).collect();
                    accumulate(&mut grads, *x, dx);
                }
                Op::AffineCols { x, scale } => {
                    let c = scale.len();
                    let mut dx = g;
                    for row in dx.chunks_mut(c) {
                        for (d, s) in row.iter_mut().zip(scale) {
                            *d *= s;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::ConcatCols(a, b) => {
                    let (ca, cb) = (self.value(*a).cols(), self.value(*b).cols());
                    let rows = self.value(*a).rows();
                    let mut da = Vec::with_capacity(rows * ca);
                    let mut db = Vec::with_capacity(rows * cb);
                    for row in g.chunks(ca + cb) {
                        da.extend_from_slice(&row[..ca]);
                        db.extend_from_slice(&row[ca..]);
                    }
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, da);
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g.iter().map(|v| -v).collect());
                    }
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g.iter().zip(bv).map(|(d, y)| d * y).collect());
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g.iter().zip(av).map(|(d, x)| d * x).collect());
                    }
                }
                Op::Square(x) => {
                    let xv = self.value(*x).data();
                    let dx = g.iter().zip(xv).map(|(d, v)| 2.0 * v * d).collect();
                    accumulate(&mut grads, *x, dx);
                }
                Op::Scale(x, f) => {
                    let dx = g.iter().map(|d| d * f).collect();
                    accumulate(&mut grads, *x, dx);
                }
                Op::Sum(x) => {
                    let n = self.value(*x).len();
                    accumulate(&mut grads, *x, vec![g[0]; n]);
                }
                Op::Mean(x) => {
                    let n = self.value(*x).len();
                    accumulate(&mut grads, *x, vec![g[0] / n as f64; n]);
                }
                Op::Injected { x, grad } => {
                    let dx = grad.iter().map(|v| v * g[0]).collect();
                    accumulate(&mut grads, *x, dx);
                }
            }
        }

        let mut out = ParameterSet::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Some(name) = &node.param {
                let data = grads
                    .get_mut(i)
                    .and_then(Option::take)
                    .unwrap_or_else(|| vec![0.0; node.value.len()]);
                let t = Tensor::new(node.value.shape().to_vec(), data)
                    .map_err(|_| NnError::NonFinite(format!("gradient of `{name}`")))?;
                out.insert(name.clone(), t)?;
            }
        }
        self.nodes.clear();
        self.consumed = true;
        Ok(out)
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(&g) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn linear_sum_gradient_is_input() {
        let mut g = Graph::new();
        let w = g.param("w", &t(&[3], &[0.5, -1.0, 2.0])).unwrap();
        let x = g.constant(t(&[3], &[1.0, 2.0, 3.0])).unwrap();
        let wx = g.mul(w, x).unwrap();
        let loss = g.sum(wx).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get("w").unwrap().data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn quadratic_gradient_is_twice_weights() {
        let mut g = Graph::new();
        let w = g.param("w", &t(&[2, 2], &[1.0, -2.0, 0.25, 3.0])).unwrap();
        let sq = g.square(w).unwrap();
        let loss = g.sum(sq).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get("w").unwrap().data(), &[2.0, -4.0, 0.5, 6.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::new();
        let w = g.param("w", &t(&[2], &[1.0, 2.0])).unwrap();
        assert!(matches!(g.backward(w), Err(NnError::NotScalar(_))));
    }

    #[test]
    fn backward_twice_is_an_error() {
        let mut g = Graph::new();
        let w = g.param("w", &t(&[2], &[1.0, 2.0])).unwrap();
        let loss = g.sum(w).unwrap();
        g.backward(loss).unwrap();
        assert!(matches!(g.backward(loss), Err(NnError::GraphConsumed)));
        assert!(matches!(g.constant(Tensor::scalar(0.0)), Err(NnError::GraphConsumed)));
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let mut g = Graph::new();
        let w = g.param("w", &t(&[2], &[1.0, 2.0])).unwrap();
        g.param("unused", &t(&[3], &[1.0, 2.0, 3.0])).unwrap();
        let loss = g.sum(w).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get("unused").unwrap().data(), &[0.0; 3]);
    }

    #[test]
    fn non_finite_activation_is_reported() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1], &[1e200])).unwrap();
        assert!(matches!(g.square(x), Err(NnError::NonFinite(_))));
    }

    #[test]
    fn layer_norm_zero_variance_row() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 3], &[5.0, 5.0, 5.0])).unwrap();
        let gain = g.constant(t(&[3], &[1.0; 3])).unwrap();
        let off = g.constant(t(&[3], &[0.0; 3])).unwrap();
        let y = g.layer_norm(x, gain, off).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn layer_norm_unit_row_is_nearly_fixed() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 2], &[1.0, -1.0])).unwrap();
        let gain = g.constant(t(&[2], &[1.0; 2])).unwrap();
        let off = g.constant(t(&[2], &[0.0; 2])).unwrap();
        let y = g.layer_norm(x, gain, off).unwrap();
        // variance 1 → 1/sqrt(1 + 1e-5)
        let expect = 1.0 / (1.0f64 + 1e-5).sqrt();
        let out = g.value(y).data();
        assert!((out[0] - expect).abs() < 1e-15 && (out[1] + expect).abs() < 1e-15);
        assert!((out[0] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn gemm_transposes() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        // aᵀ·b = [[1,3],[2,4]]·b
        assert_eq!(gemm_new(2, 2, 2, &a, true, &b, false), [26.0, 30.0, 38.0, 44.0]);
        assert_eq!(gemm_new(2, 2, 2, &a, false, &b, true), [17.0, 23.0, 39.0, 53.0]);
        assert_eq!(gemm_new(2, 0, 3, &[], false, &[], false), [0.0; 6]);
    }
}
