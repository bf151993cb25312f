use super::gemm::gemm;
use super::{shape_err, DiffError, Tensor};

type OpResult = Result<Var, DiffError>;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Padding convention for [`Graph::conv1d`]. Output length always equals
/// input length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvMode {
    /// Taps at `t, t-d, ..., t-(k-1)d`; zero padding on the left only.
    Causal,
    /// Taps symmetric around `t`; requires an odd kernel.
    Centered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bcast {
    Same,
    /// right operand is `(rows, 1)`, repeated along time
    Rows,
    /// right operand is `1 x 1`
    Scalar,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add { a: Var, b: Var, bc: Bcast },
    Sub { a: Var, b: Var, bc: Bcast },
    Mul { a: Var, b: Var, bc: Bcast },
    Affine { x: Var, scale: f64 },
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Sum(Var),
    SelectRows { x: Var, start: usize, step: usize },
    Interleave { a: Var, b: Var },
    Squeeze(Var),
    Unsqueeze(Var),
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        kernel: usize,
        dilation: usize,
        mode: ConvMode,
        cols: Option<Vec<f64>>,
    },
    SoftmaxXent { logits: Var, probs: Tensor, targets: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// An eagerly evaluated computation graph. Build one per evaluation and drop
/// it after [`Graph::backward`].
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar output with respect to the tracked leaves.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for `v`, or `None` when `v` does not influence the output.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`; exact zeros when `v` does not influence the output.
    pub fn wrt(&self, v: Var) -> Tensor {
        match self.get(v) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        match self.grads[v.0].take() {
            Some(g) => g,
            None => {
                let (r, c) = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }
}

fn broadcast_kind(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Bcast, DiffError> {
    if a.shape() == b.shape() {
        Ok(Bcast::Same)
    } else if b.cols() == 1 && b.rows() == a.rows() {
        Ok(Bcast::Rows)
    } else if b.is_scalar() {
        Ok(Bcast::Scalar)
    } else {
        Err(shape_err(op, format!("{:?} vs {:?}", a.shape(), b.shape())))
    }
}

fn binary(a: &Tensor, b: &Tensor, bc: Bcast, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let mut out = a.clone();
    match bc {
        Bcast::Same => {
            for (o, &y) in out.data_mut().iter_mut().zip(b.data()) {
                *o = f(*o, y);
            }
        }
        Bcast::Rows => {
            for r in 0..a.rows() {
                let y = b.data()[r];
                for o in out.row_slice_mut(r) {
                    *o = f(*o, y);
                }
            }
        }
        Bcast::Scalar => {
            let y = b.item();
            for o in out.data_mut() {
                *o = f(*o, y);
            }
        }
    }
    out
}

/// Sum a full-shape gradient down to the broadcast operand's shape.
fn reduce_to(g: Tensor, bc: Bcast) -> Tensor {
    match bc {
        Bcast::Same => g,
        Bcast::Rows => Tensor::column((0..g.rows()).map(|r| g.row_slice(r).iter().sum()).collect()),
        Bcast::Scalar => Tensor::scalar(g.sum()),
    }
}

fn tap_offset(k: usize, kernel: usize, dilation: usize, mode: ConvMode) -> isize {
    let k = k as isize;
    let d = dilation as isize;
    match mode {
        ConvMode::Causal => (k - (kernel as isize - 1)) * d,
        ConvMode::Centered => (k - (kernel as isize - 1) / 2) * d,
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// A leaf that receives a gradient.
    pub fn input(&mut self, t: Tensor) -> OpResult {
        if !t.is_finite() {
            return Err(DiffError::NonFiniteInput);
        }
        Ok(self.push(t, Op::Leaf, true))
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> OpResult {
        if !t.is_finite() {
            return Err(DiffError::NonFiniteInput);
        }
        Ok(self.push(t, Op::Leaf, false))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Elementwise sum. `b` may also be a `(rows, 1)` column or a scalar.
    pub fn add(&mut self, a: Var, b: Var) -> OpResult {
        let bc = broadcast_kind("add", self.value(a), self.value(b))?;
        let out = binary(self.value(a), self.value(b), bc, |x, y| x + y);
        let tr = self.tracked(a) || self.tracked(b);
        Ok(self.push(out, Op::Add { a, b, bc }, tr))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> OpResult {
        let bc = broadcast_kind("sub", self.value(a), self.value(b))?;
        let out = binary(self.value(a), self.value(b), bc, |x, y| x - y);
        let tr = self.tracked(a) || self.tracked(b);
        Ok(self.push(out, Op::Sub { a, b, bc }, tr))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> OpResult {
        let bc = broadcast_kind("mul", self.value(a), self.value(b))?;
        let out = binary(self.value(a), self.value(b), bc, |x, y| x * y);
        let tr = self.tracked(a) || self.tracked(b);
        Ok(self.push(out, Op::Mul { a, b, bc }, tr))
    }

    /// `scale * x + shift` with constant coefficients.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> OpResult {
        let out = self.value(x).map(|v| scale * v + shift);
        let tr = self.tracked(x);
        Ok(self.push(out, Op::Affine { x, scale }, tr))
    }

    pub fn neg(&mut self, x: Var) -> OpResult {
        self.affine(x, -1.0, 0.0)
    }

    pub fn exp(&mut self, x: Var) -> OpResult {
        let out = self.value(x).map(f64::exp);
        if let Some(bad) = out.data().iter().position(|v| !v.is_finite()) {
            return Err(DiffError::Domain {
                op: "exp",
                detail: format!("overflow at element {bad} (input {})", self.value(x).data()[bad]),
            });
        }
        let tr = self.tracked(x);
        Ok(self.push(out, Op::Exp(x), tr))
    }

    pub fn log(&mut self, x: Var) -> OpResult {
        if let Some(bad) = self.value(x).data().iter().position(|&v| v <= 0.0) {
            return Err(DiffError::Domain {
                op: "log",
                detail: format!("non-positive input {} at element {bad}", self.value(x).data()[bad]),
            });
        }
        let out = self.value(x).map(f64::ln);
        let tr = self.tracked(x);
        Ok(self.push(out, Op::Log(x), tr))
    }

    pub fn tanh(&mut self, x: Var) -> OpResult {
        let out = self.value(x).map(f64::tanh);
        let tr = self.tracked(x);
        Ok(self.push(out, Op::Tanh(x), tr))
    }

    pub fn sigmoid(&mut self, x: Var) -> OpResult {
        let out = self.value(x).map(|v| {
            if v >= 0.0 {
                1.0 / (1.0 + (-v).exp())
            } else {
                let e = v.exp();
                e / (1.0 + e)
            }
        });
        let tr = self.tracked(x);
        Ok(self.push(out, Op::Sigmoid(x), tr))
    }

    pub fn relu(&mut self, x: Var) -> OpResult {
        let out = self.value(x).map(|v| v.max(0.0));
        let tr = self.tracked(x);
        Ok(self.push(out, Op::Relu(x), tr))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> OpResult {
        let out = Tensor::scalar(self.value(x).sum());
        let tr = self.tracked(x);
        Ok(self.push(out, Op::Sum(x), tr))
    }

    /// Rows `start, start + step, ...`, `count` of them.
    pub fn select_rows(&mut self, x: Var, start: usize, step: usize, count: usize) -> OpResult {
        let src = self.value(x);
        if step == 0 || count == 0 || start + (count - 1) * step >= src.rows() {
            return Err(shape_err(
                "select_rows",
                format!("start {start} step {step} count {count} on {} rows", src.rows()),
            ));
        }
        let cols = src.cols();
        let mut data = Vec::with_capacity(count * cols);
        for i in 0..count {
            data.extend_from_slice(src.row_slice(start + i * step));
        }
        let out = Tensor::new(count, cols, data)?;
        let tr = self.tracked(x);
        Ok(self.push(out, Op::SelectRows { x, start, step }, tr))
    }

    /// Even channels of `x`.
    pub fn even_rows(&mut self, x: Var) -> OpResult {
        let r = self.value(x).rows();
        self.select_rows(x, 0, 2, r.div_ceil(2))
    }

    /// Odd channels of `x`.
    pub fn odd_rows(&mut self, x: Var) -> OpResult {
        let r = self.value(x).rows();
        self.select_rows(x, 1, 2, r / 2)
    }

    /// Merge two equally shaped tensors so `a` lands on even rows and `b` on
    /// odd rows. Inverse of `even_rows`/`odd_rows`.
    pub fn interleave_rows(&mut self, a: Var, b: Var) -> OpResult {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("interleave_rows", format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let (r, c) = ta.shape();
        let mut data = Vec::with_capacity(2 * r * c);
        for i in 0..r {
            data.extend_from_slice(ta.row_slice(i));
            data.extend_from_slice(tb.row_slice(i));
        }
        let out = Tensor::new(2 * r, c, data)?;
        let tr = self.tracked(a) || self.tracked(b);
        Ok(self.push(out, Op::Interleave { a, b }, tr))
    }

    /// Fold time into channels: `(C, T) -> (2C, T/2)` with
    /// `out[2c + j, t] = x[c, 2t + j]`.
    pub fn squeeze(&mut self, x: Var) -> OpResult {
        let out = squeeze_values(self.value(x))?;
        let tr = self.tracked(x);
        Ok(self.push(out, Op::Squeeze(x), tr))
    }

    /// [`Graph::squeeze`] on a plain tensor, outside any graph.
    pub fn squeeze_tensor(t: &Tensor) -> Result<Tensor, DiffError> {
        squeeze_values(t)
    }

    /// Inverse of [`Graph::squeeze`].
    pub fn unsqueeze(&mut self, x: Var) -> OpResult {
        let out = unsqueeze_values(self.value(x))?;
        let tr = self.tracked(x);
        Ok(self.push(out, Op::Unsqueeze(x), tr))
    }

    /// 1-D convolution with same-length output.
    ///
    /// `w` has shape `(c_out, c_in * kernel)` with taps contiguous per input
    /// channel; `b`, when given, has shape `(c_out, 1)`.
    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        kernel: usize,
        dilation: usize,
        mode: ConvMode,
    ) -> OpResult {
        let (xt, wt) = (self.value(x), self.value(w));
        let (c_in, len) = xt.shape();
        let c_out = wt.rows();
        if kernel == 0 || dilation == 0 || wt.cols() != c_in * kernel {
            return Err(shape_err(
                "conv1d",
                format!("weight {:?} for {c_in} input channels, kernel {kernel}", wt.shape()),
            ));
        }
        if mode == ConvMode::Centered && kernel % 2 == 0 {
            return Err(shape_err("conv1d", "centered mode needs an odd kernel"));
        }
        if let Some(b) = b {
            if self.value(b).shape() != (c_out, 1) {
                return Err(shape_err("conv1d", format!("bias {:?}, expected ({c_out}, 1)", self.value(b).shape())));
            }
        }
        let identity_taps = kernel == 1 && tap_offset(0, 1, dilation, mode) == 0;
        let cols = if identity_taps {
            None
        } else {
            let mut cols = vec![0.0; c_in * kernel * len];
            for ci in 0..c_in {
                let src = xt.row_slice(ci);
                for k in 0..kernel {
                    let off = tap_offset(k, kernel, dilation, mode);
                    let dst = &mut cols[(ci * kernel + k) * len..(ci * kernel + k + 1) * len];
                    let lo = (-off).max(0) as usize;
                    let hi = (len as isize - off).clamp(0, len as isize) as usize;
                    if lo < hi {
                        let s0 = (lo as isize + off) as usize;
                        dst[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                    }
                }
            }
            Some(cols)
        };
        let mut out = vec![0.0; c_out * len];
        let rhs = cols.as_deref().unwrap_or(xt.data());
        gemm(c_out, c_in * kernel, len, wt.data(), false, rhs, false, &mut out, false);
        if let Some(b) = b {
            let bias = self.value(b).data();
            for (row, &bv) in out.chunks_mut(len).zip(bias) {
                for o in row {
                    *o += bv;
                }
            }
        }
        let out = Tensor::new(c_out, len, out)?;
        let tr = self.tracked(x) || self.tracked(w) || b.is_some_and(|b| self.tracked(b));
        Ok(self.push(out, Op::Conv { x, w, b, kernel, dilation, mode, cols }, tr))
    }

    /// Summed categorical cross-entropy over time. `logits` is
    /// `(classes, T)`; each column is one step's unnormalized log-probabilities.
    pub fn softmax_xent(&mut self, logits: Var, targets: &[usize]) -> OpResult {
        let lt = self.value(logits);
        let (n_cls, len) = lt.shape();
        if targets.len() != len {
            return Err(shape_err("softmax_xent", format!("{} targets for {len} steps", targets.len())));
        }
        if let Some(&bad) = targets.iter().find(|&&c| c >= n_cls) {
            return Err(shape_err("softmax_xent", format!("target {bad} >= {n_cls} classes")));
        }
        let logp = log_softmax_columns(lt);
        let mut loss = 0.0;
        for (t, &c) in targets.iter().enumerate() {
            loss -= logp.get(c, t);
        }
        let probs = logp.map(f64::exp);
        let tr = self.tracked(logits);
        Ok(self.push(Tensor::scalar(loss), Op::SoftmaxXent { logits, probs, targets: targets.to_vec() }, tr))
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, out: Var) -> Result<Gradients, DiffError> {
        let ov = self.value(out);
        if !ov.is_scalar() {
            return Err(DiffError::NotScalar(ov.shape()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[out.0].tracked {
            grads[out.0] = Some(Tensor::scalar(1.0));
        }
        for i in (0..=out.0).rev() {
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            let g = match &node.op {
                Op::Leaf => continue,
                _ => match grads[i].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            self.propagate(&node.op, &node.value, g, &mut grads);
        }
        Ok(Gradients { grads, shapes: self.nodes.iter().map(|n| n.value.shape()).collect() })
    }

    fn propagate(&self, op: &Op, value: &Tensor, g: Tensor, grads: &mut [Option<Tensor>]) {
        match *op {
            Op::Leaf => {}
            Op::Add { a, b, bc } => {
                if self.tracked(b) {
                    accumulate(grads, b, reduce_to(g.clone(), bc));
                }
                if self.tracked(a) {
                    accumulate(grads, a, g);
                }
            }
            Op::Sub { a, b, bc } => {
                if self.tracked(b) {
                    accumulate(grads, b, reduce_to(g.map(|v| -v), bc));
                }
                if self.tracked(a) {
                    accumulate(grads, a, g);
                }
            }
            Op::Mul { a, b, bc } => {
                if self.tracked(b) {
                    let ga = binary(&g, self.value(a), Bcast::Same, |x, y| x * y);
                    accumulate(grads, b, reduce_to(ga, bc));
                }
                if self.tracked(a) {
                    accumulate(grads, a, binary(&g, self.value(b), bc, |x, y| x * y));
                }
            }
            Op::Affine { x, scale } => accumulate(grads, x, g.map(|v| v * scale)),
            Op::Exp(x) => accumulate(grads, x, binary(&g, value, Bcast::Same, |gv, y| gv * y)),
            Op::Log(x) => accumulate(grads, x, binary(&g, self.value(x), Bcast::Same, |gv, xv| gv / xv)),
            Op::Tanh(x) => accumulate(grads, x, binary(&g, value, Bcast::Same, |gv, y| gv * (1.0 - y * y))),
            Op::Sigmoid(x) => accumulate(grads, x, binary(&g, value, Bcast::Same, |gv, y| gv * y * (1.0 - y))),
            Op::Relu(x) => {
                accumulate(grads, x, binary(&g, self.value(x), Bcast::Same, |gv, xv| if xv > 0.0 { gv } else { 0.0 }))
            }
            Op::Sum(x) => {
                let (r, c) = self.shape(x);
                accumulate(grads, x, Tensor::filled(r, c, g.item()));
            }
            Op::SelectRows { x, start, step } => {
                let (r, c) = self.shape(x);
                let mut gx = Tensor::zeros(r, c);
                for i in 0..g.rows() {
                    gx.row_slice_mut(start + i * step).copy_from_slice(g.row_slice(i));
                }
                accumulate(grads, x, gx);
            }
            Op::Interleave { a, b } => {
                let (r, c) = self.shape(a);
                let mut ga = Vec::with_capacity(r * c);
                let mut gb = Vec::with_capacity(r * c);
                for i in 0..r {
                    ga.extend_from_slice(g.row_slice(2 * i));
                    gb.extend_from_slice(g.row_slice(2 * i + 1));
                }
                if self.tracked(a) {
                    accumulate(grads, a, Tensor::new(r, c, ga).expect("shape"));
                }
                if self.tracked(b) {
                    accumulate(grads, b, Tensor::new(r, c, gb).expect("shape"));
                }
            }
            Op::Squeeze(x) => accumulate(grads, x, unsqueeze_values(&g).expect("shape")),
            Op::Unsqueeze(x) => accumulate(grads, x, squeeze_values(&g).expect("shape")),
            Op::Conv { x, w, b, kernel, dilation, mode, ref cols } => {
                let xt = self.value(x);
                let wt = self.value(w);
                let (c_in, len) = xt.shape();
                let c_out = wt.rows();
                let ck = c_in * kernel;
                if let Some(b) = b.filter(|&b| self.tracked(b)) {
                    accumulate(grads, b, reduce_to(g.clone(), Bcast::Rows));
                }
                if self.tracked(w) {
                    let mut gw = vec![0.0; c_out * ck];
                    let rhs = cols.as_deref().unwrap_or(xt.data());
                    gemm(c_out, len, ck, g.data(), false, rhs, true, &mut gw, false);
                    accumulate(grads, w, Tensor::new(c_out, ck, gw).expect("shape"));
                }
                if self.tracked(x) {
                    let mut gcols = vec![0.0; ck * len];
                    gemm(ck, c_out, len, wt.data(), true, g.data(), false, &mut gcols, false);
                    if cols.is_none() {
                        accumulate(grads, x, Tensor::new(c_in, len, gcols).expect("shape"));
                    } else {
                        let mut gx = Tensor::zeros(c_in, len);
                        for ci in 0..c_in {
                            let dst = gx.row_slice_mut(ci);
                            for k in 0..kernel {
                                let off = tap_offset(k, kernel, dilation, mode);
                                let src = &gcols[(ci * kernel + k) * len..(ci * kernel + k + 1) * len];
                                let lo = (-off).max(0) as usize;
                                let hi = (len as isize - off).clamp(0, len as isize) as usize;
                                for t in lo..hi {
                                    dst[(t as isize + off) as usize] += src[t];
                                }
                            }
                        }
                        accumulate(grads, x, gx);
                    }
                }
            }
            Op::SoftmaxXent { logits, ref probs, ref targets } => {
                let scale = g.item();
                let mut gl = probs.map(|p| p * scale);
                let cols = gl.cols();
                for (t, &c) in targets.iter().enumerate() {
                    gl.data_mut()[c * cols + t] -= scale;
                }
                accumulate(grads, logits, gl);
            }
        }
    }
}

pub(crate) fn squeeze_values(x: &Tensor) -> Result<Tensor, DiffError> {
    let (c, t) = x.shape();
    if t % 2 != 0 {
        return Err(shape_err("squeeze", format!("odd time length {t}")));
    }
    let half = t / 2;
    let mut out = Tensor::zeros(2 * c, half);
    for ch in 0..c {
        let src = x.row_slice(ch);
        for j in 0..2 {
            let dst = out.row_slice_mut(2 * ch + j);
            for (tt, d) in dst.iter_mut().enumerate() {
                *d = src[2 * tt + j];
            }
        }
    }
    Ok(out)
}

pub(crate) fn unsqueeze_values(x: &Tensor) -> Result<Tensor, DiffError> {
    let (c2, half) = x.shape();
    if c2 % 2 != 0 {
        return Err(shape_err("unsqueeze", format!("odd channel count {c2}")));
    }
    let c = c2 / 2;
    let mut out = Tensor::zeros(c, 2 * half);
    for ch in 0..c {
        for j in 0..2 {
            let src = x.row_slice(2 * ch + j);
            let dst = out.row_slice_mut(ch);
            for (tt, &s) in src.iter().enumerate() {
                dst[2 * tt + j] = s;
            }
        }
    }
    Ok(out)
}

/// Column-wise log-softmax of a `(classes, T)` tensor.
pub fn log_softmax_columns(logits: &Tensor) -> Tensor {
    let (n, len) = logits.shape();
    let mut out = logits.clone();
    let mut maxes = vec![f64::NEG_INFINITY; len];
    for r in 0..n {
        for (m, &v) in maxes.iter_mut().zip(logits.row_slice(r)) {
            *m = m.max(v);
        }
    }
    let mut sums = vec![0.0; len];
    for r in 0..n {
        for ((s, &v), &m) in sums.iter_mut().zip(logits.row_slice(r)).zip(&maxes) {
            *s += (v - m).exp();
        }
    }
    let lse: Vec<f64> = sums.iter().zip(&maxes).map(|(s, m)| m + s.ln()).collect();
    for r in 0..n {
        for (o, l) in out.row_slice_mut(r).iter_mut().zip(&lse) {
            *o -= l;
        }
    }
    out
}
