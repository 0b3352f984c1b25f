use super::array::{gemm_acc, gemm_nt_acc, gemm_tn_acc, Array};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBias(Var, Var),
    Concat(Vec<Var>),
    SliceCols(Var, usize),
    Reshape(Var),
    Relu(Var),
    Tanh(Var),
    Cubic(Var),
    SquareNorm(Var),
    RowSquareNorm(Var),
    ScaleRows(Var, Var),
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        padding: usize,
        stride: usize,
    },
    Mse(Var, Var),
    Sum(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Array,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of array operations. Inputs always precede outputs,
/// so reverse index order is a valid reverse topological order.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::vjp`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Array>>,
}

impl Gradients {
    /// `None` when the node did not influence the output or is a constant.
    pub fn get(&self, v: Var) -> Option<&Array> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, zeros if it had no influence.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Array {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Array::zeros(tape.value(v).shape()))
    }
}

fn shape_err(op: &'static str, a: &Array, b: &Array) -> Error {
    Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn map(a: &Array, f: impl Fn(f64) -> f64) -> Array {
    Array::new(a.shape().to_vec(), a.data().iter().map(|&x| f(x)).collect())
        .expect("same shape")
}

fn zip_map(a: &Array, b: &Array, f: impl Fn(f64, f64) -> f64) -> Array {
    Array::new(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
    .expect("same shape")
}

/// Output length of a 1-D convolution.
pub fn conv1d_out_len(len: usize, filter: usize, padding: usize, stride: usize) -> Option<usize> {
    let padded = len + 2 * padding;
    if stride == 0 || filter == 0 || padded < filter {
        return None;
    }
    Some((padded - filter) / stride + 1)
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

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Array, op: Op, requires_grad: bool) -> Var {
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

    /// A differentiable input.
    pub fn var(&mut self, value: Array) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// An input that never receives a gradient.
    pub fn constant(&mut self, value: Array) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = av.dims2("matmul")?;
        let (k2, n) = bv.dims2("matmul")?;
        if k != k2 {
            return Err(shape_err("matmul", av, bv));
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(av.data(), bv.data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Array::matrix(m, n, out)?, Op::MatMul(a, b), rg))
    }

    fn elementwise(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(name, av, bv));
        }
        let out = zip_map(av, bv, f);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = map(self.value(a), |x| c * x);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, c), rg)
    }

    /// `x: [m, n]` plus `b: [n]` added to every row.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        let (m, n) = xv.dims2("add_bias")?;
        if bv.len() != n {
            return Err(shape_err("add_bias", xv, bv));
        }
        let mut out = xv.data().to_vec();
        for row in out.chunks_mut(n) {
            for (o, &bi) in row.iter_mut().zip(bv.data()) {
                *o += bi;
            }
        }
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(Array::matrix(m, n, out)?, Op::AddBias(x, b), rg))
    }

    /// Column-wise concatenation of 2-D arrays with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(Error::Shape {
            op: "concat",
            lhs: vec![],
            rhs: vec![],
        })?;
        let (m, _) = self.value(*first).dims2("concat")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2("concat")?;
            if r != m {
                return Err(shape_err("concat", self.value(*first), self.value(p)));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Array::matrix(m, total, out)?, Op::Concat(parts.to_vec()), rg))
    }

    /// Columns `start..end` of a 2-D array.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        let (m, n) = xv.dims2("slice_cols")?;
        if start >= end || end > n {
            return Err(Error::Shape {
                op: "slice_cols",
                lhs: xv.shape().to_vec(),
                rhs: vec![start, end],
            });
        }
        let w = end - start;
        let mut out = Vec::with_capacity(m * w);
        for row in xv.data().chunks(n) {
            out.extend_from_slice(&row[start..end]);
        }
        let rg = self.rg(x);
        Ok(self.push(Array::matrix(m, w, out)?, Op::SliceCols(x, start), rg))
    }

    /// Same data, new shape.
    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(x).clone().reshaped(shape)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = map(self.value(x), |v| v.max(0.0));
        let rg = self.rg(x);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = map(self.value(x), f64::tanh);
        let rg = self.rg(x);
        self.push(out, Op::Tanh(x), rg)
    }

    /// Elementwise `x^3`.
    pub fn cubic(&mut self, x: Var) -> Var {
        let out = map(self.value(x), |v| v * v * v);
        let rg = self.rg(x);
        self.push(out, Op::Cubic(x), rg)
    }

    /// Scalar `sum(x^2)`.
    pub fn square_norm(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().map(|v| v * v).sum();
        let rg = self.rg(x);
        self.push(Array::scalar(s), Op::SquareNorm(x), rg)
    }

    /// Per-row `sum(x^2)` of `[m, n]`, shaped `[m, 1]`.
    pub fn row_square_norm(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (m, n) = xv.dims2("row_square_norm")?;
        let out = xv
            .data()
            .chunks(n)
            .map(|r| r.iter().map(|v| v * v).sum())
            .collect();
        let rg = self.rg(x);
        Ok(self.push(Array::matrix(m, 1, out)?, Op::RowSquareNorm(x), rg))
    }

    /// Row `i` of `x: [m, n]` multiplied by `s[i]`, `s: [m, 1]`.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let (xv, sv) = (self.value(x), self.value(s));
        let (m, n) = xv.dims2("scale_rows")?;
        if sv.shape() != [m, 1] {
            return Err(shape_err("scale_rows", xv, sv));
        }
        let mut out = xv.data().to_vec();
        for (row, &si) in out.chunks_mut(n).zip(sv.data()) {
            row.iter_mut().for_each(|v| *v *= si);
        }
        let rg = self.rg(x) || self.rg(s);
        Ok(self.push(Array::matrix(m, n, out)?, Op::ScaleRows(x, s), rg))
    }

    /// Batched 1-D convolution (cross-correlation).
    ///
    /// `x: [batch, c_in, len]`, `w: [c_out, c_in, filter]`, `b: [c_out]`,
    /// output `[batch, c_out, floor((len + 2 padding - filter) / stride) + 1]`.
    /// Out-of-range taps read zero.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, padding: usize, stride: usize) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (&[nb, c_in, len], &[c_out, c_in_w, k]) = (xv.shape(), wv.shape()) else {
            return Err(shape_err("conv1d", xv, wv));
        };
        if c_in != c_in_w || bv.len() != c_out {
            return Err(shape_err("conv1d", xv, wv));
        }
        let l_out = conv1d_out_len(len, k, padding, stride).ok_or_else(|| shape_err("conv1d", xv, wv))?;
        let (xd, wd, bd) = (xv.data(), wv.data(), bv.data());
        let mut out = vec![0.0; nb * c_out * l_out];
        for bi in 0..nb {
            for o in 0..c_out {
                let y = &mut out[(bi * c_out + o) * l_out..(bi * c_out + o + 1) * l_out];
                y.iter_mut().for_each(|v| *v = bd[o]);
                for c in 0..c_in {
                    let xr = &xd[(bi * c_in + c) * len..(bi * c_in + c + 1) * len];
                    let wr = &wd[(o * c_in + c) * k..(o * c_in + c + 1) * k];
                    for (l, yl) in y.iter_mut().enumerate() {
                        for (t, &wt) in wr.iter().enumerate() {
                            let pos = (l * stride + t) as isize - padding as isize;
                            if pos >= 0 && (pos as usize) < len {
                                *yl += wt * xr[pos as usize];
                            }
                        }
                    }
                }
            }
        }
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        let value = Array::new(vec![nb, c_out, l_out], out)?;
        Ok(self.push(value, Op::Conv1d { x, w, b, padding, stride }, rg))
    }

    /// Mean squared error, a scalar.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (pv, tv) = (self.value(pred), self.value(target));
        if pv.shape() != tv.shape() {
            return Err(shape_err("mse", pv, tv));
        }
        let n = pv.len() as f64;
        let s: f64 = pv.data().iter().zip(tv.data()).map(|(p, t)| (p - t) * (p - t)).sum();
        let rg = self.rg(pred) || self.rg(target);
        Ok(self.push(Array::scalar(s / n), Op::Mse(pred, target), rg))
    }

    /// Scalar sum of all elements.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Array::scalar(s), Op::Sum(x), rg)
    }

    /// Affine layer `x @ w + b` with `w: [in, out]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let h = self.matmul(x, w)?;
        self.add_bias(h, b)
    }

    /// Gradient of a scalar output with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        self.vjp(loss, &Array::filled(lv.shape(), 1.0))
    }

    /// Vector-Jacobian product: pulls `cotangent` (shaped like `output`)
    /// back to every node that requires a gradient.
    pub fn vjp(&self, output: Var, cotangent: &Array) -> Result<Gradients> {
        let ov = self.value(output);
        if ov.shape() != cotangent.shape() {
            return Err(shape_err("vjp", ov, cotangent));
        }
        let mut grads: Vec<Option<Array>> = vec![None; output.0 + 1];
        grads[output.0] = Some(cotangent.clone());
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    /// Consumes the tape and hands back the values of `vars`.
    pub fn into_values(self, vars: &[Var]) -> Vec<Array> {
        let mut slots: Vec<Option<Array>> = self.nodes.into_iter().map(|n| Some(n.value)).collect();
        vars.iter()
            .map(|v| slots[v.0].take().expect("each var taken once"))
            .collect()
    }

    fn propagate(&self, node: &Node, g: &Array, grads: &mut [Option<Array>]) {
        let mut acc = |v: Var, delta: Array| {
            if !self.rg(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                if self.rg(*a) {
                    let da = grad_slot(grads, *a, av.shape());
                    gemm_nt_acc(g.data(), bv.data(), da, m, n, k);
                }
                if self.rg(*b) {
                    let db = grad_slot(grads, *b, bv.shape());
                    gemm_tn_acc(av.data(), g.data(), db, m, k, n);
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, map(g, |v| -v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, zip_map(g, bv, |gi, bi| gi * bi));
                acc(*b, zip_map(g, av, |gi, ai| gi * ai));
            }
            Op::Scale(a, c) => acc(*a, map(g, |v| c * v)),
            Op::AddBias(x, b) => {
                acc(*x, g.clone());
                let bv = self.value(*b);
                let n = bv.len();
                let mut db = vec![0.0; n];
                for row in g.data().chunks(n) {
                    for (d, &r) in db.iter_mut().zip(row) {
                        *d += r;
                    }
                }
                acc(*b, Array::new(bv.shape().to_vec(), db).expect("shape"));
            }
            Op::Concat(parts) => {
                let (m, total) = (g.shape()[0], g.shape()[1]);
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).shape()[1];
                    let mut d = Vec::with_capacity(m * w);
                    for row in g.data().chunks(total) {
                        d.extend_from_slice(&row[offset..offset + w]);
                    }
                    acc(p, Array::matrix(m, w, d).expect("shape"));
                    offset += w;
                }
            }
            Op::SliceCols(x, start) => {
                let xv = self.value(*x);
                let (m, n) = (xv.shape()[0], xv.shape()[1]);
                let w = g.shape()[1];
                let mut d = vec![0.0; m * n];
                for (drow, grow) in d.chunks_mut(n).zip(g.data().chunks(w)) {
                    drow[*start..*start + w].copy_from_slice(grow);
                }
                acc(*x, Array::matrix(m, n, d).expect("shape"));
            }
            Op::Reshape(x) => {
                let shape = self.value(*x).shape().to_vec();
                acc(*x, g.clone().reshaped(shape).expect("shape"));
            }
            Op::Relu(x) => acc(*x, zip_map(g, self.value(*x), |gi, xi| if xi > 0.0 { gi } else { 0.0 })),
            Op::Tanh(x) => acc(*x, zip_map(g, &node.value, |gi, yi| gi * (1.0 - yi * yi))),
            Op::Cubic(x) => acc(*x, zip_map(g, self.value(*x), |gi, xi| 3.0 * xi * xi * gi)),
            Op::SquareNorm(x) => {
                let gs = g.item();
                acc(*x, map(self.value(*x), |xi| 2.0 * xi * gs));
            }
            Op::RowSquareNorm(x) => {
                let xv = self.value(*x);
                let n = xv.shape()[1];
                let mut d = xv.data().to_vec();
                for (row, &gi) in d.chunks_mut(n).zip(g.data()) {
                    row.iter_mut().for_each(|v| *v *= 2.0 * gi);
                }
                acc(*x, Array::new(xv.shape().to_vec(), d).expect("shape"));
            }
            Op::ScaleRows(x, s) => {
                let (xv, sv) = (self.value(*x), self.value(*s));
                let n = xv.shape()[1];
                let mut dx = g.data().to_vec();
                for (row, &si) in dx.chunks_mut(n).zip(sv.data()) {
                    row.iter_mut().for_each(|v| *v *= si);
                }
                acc(*x, Array::new(xv.shape().to_vec(), dx).expect("shape"));
                let ds = g
                    .data()
                    .chunks(n)
                    .zip(xv.data().chunks(n))
                    .map(|(gr, xr)| gr.iter().zip(xr).map(|(a, b)| a * b).sum())
                    .collect();
                acc(*s, Array::new(sv.shape().to_vec(), ds).expect("shape"));
            }
            Op::Conv1d {
                x,
                w,
                b,
                padding,
                stride,
            } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (nb, c_in, len) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                let (c_out, k) = (wv.shape()[0], wv.shape()[2]);
                let l_out = g.shape()[2];
                let (xd, wd, gd) = (xv.data(), wv.data(), g.data());
                let mut dx = vec![0.0; xd.len()];
                let mut dw = vec![0.0; wd.len()];
                let mut db = vec![0.0; c_out];
                for bi in 0..nb {
                    for o in 0..c_out {
                        let gr = &gd[(bi * c_out + o) * l_out..(bi * c_out + o + 1) * l_out];
                        db[o] += gr.iter().sum::<f64>();
                        for c in 0..c_in {
                            let xoff = (bi * c_in + c) * len;
                            let woff = (o * c_in + c) * k;
                            for (l, &gl) in gr.iter().enumerate() {
                                for t in 0..k {
                                    let pos = (l * stride + t) as isize - *padding as isize;
                                    if pos >= 0 && (pos as usize) < len {
                                        let p = xoff + pos as usize;
                                        dx[p] += gl * wd[woff + t];
                                        dw[woff + t] += gl * xd[p];
                                    }
                                }
                            }
                        }
                    }
                }
                acc(*x, Array::new(xv.shape().to_vec(), dx).expect("shape"));
                acc(*w, Array::new(wv.shape().to_vec(), dw).expect("shape"));
                acc(*b, Array::new(self.value(*b).shape().to_vec(), db).expect("shape"));
            }
            Op::Mse(p, t) => {
                let (pv, tv) = (self.value(*p), self.value(*t));
                let c = 2.0 * g.item() / pv.len() as f64;
                let d = zip_map(pv, tv, |pi, ti| c * (pi - ti));
                acc(*t, map(&d, |v| -v));
                acc(*p, d);
            }
            Op::Sum(x) => {
                let gs = g.item();
                acc(*x, Array::filled(self.value(*x).shape(), gs));
            }
        }
    }
}

/// Gradient buffer for `v`, created as zeros on first use.
fn grad_slot<'a>(grads: &'a mut [Option<Array>], v: Var, shape: &[usize]) -> &'a mut [f64] {
    grads[v.0].get_or_insert_with(|| Array::zeros(shape)).data_mut()
}
