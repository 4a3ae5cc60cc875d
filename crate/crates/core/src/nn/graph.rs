//! Tape-based reverse-mode differentiation over row-major matrices.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order and `backward` is a single reverse sweep. Every value is
//! a `rows × cols` matrix; 1-D parameters bind as a single row.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::{NnError, ParamSet};
use crate::math;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Linear,
    Tanh,
    LeakyRelu(f64),
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::Tanh => math::tanh(x),
            Activation::LeakyRelu(slope) => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::LeakyRelu(slope) => {
                if y > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
        }
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Dense { x: Var, w: Var, b: Var, act: Activation },
    LstmStep { x: Var, state: Option<Var>, w_ih: Var, w_hh: Var, b: Var, cache: Vec<f64> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Min(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Sigmoid(Var),
    LeakyRelu(Var, f64),
    Exp(Var),
    Ln(Var),
    Square(Var),
    Sqrt(Var),
    Clamp(Var, f64, f64),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    Reshape(Var),
    SoftmaxRows(Var),
    SumCols(Var),
    MeanRows(Var),
    SumAll(Var),
    MeanAll(Var),
}

struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// A recorded forward computation.
pub struct Graph {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Graph leaves created for every tensor of a [`ParamSet`].
#[derive(Debug, Clone, Default)]
pub struct Binding {
    vars: BTreeMap<String, Var>,
}

impl Binding {
    pub fn var(&self, name: &str) -> Result<Var, NnError> {
        self.vars.get(name).copied().ok_or_else(|| NnError::UnknownParam(name.into()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// Result of one backward sweep: d(loss)/d(node) for every leaf that
/// required a gradient.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Accumulates the gradient of every bound leaf into its tensor's grad
    /// slot. Parameters the loss does not depend on receive zeros.
    pub fn write(&self, binding: &Binding, params: &mut ParamSet) -> Result<(), NnError> {
        for (name, var) in binding.iter() {
            let tensor = params.get_mut(name).ok_or_else(|| NnError::UnknownParam(name.into()))?;
            match self.get(var) {
                Some(g) => tensor.accumulate_grad(g),
                None => {
                    let zeros = vec![0.0; tensor.len()];
                    tensor.accumulate_grad(&zeros);
                }
            }
        }
        Ok(())
    }
}

fn shape_err(op: &'static str, detail: String) -> NnError {
    NnError::ShapeMismatch { op, detail }
}

// out[n×m] += a[n×k] · b[k×m]
fn mm_acc(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

// out[k×m] += a[n×k]ᵀ · g[n×m]
fn mm_tn_acc(a: &[f64], g: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let grow = &g[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * m..(p + 1) * m];
            for (o, gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

// out[n×k] += g[n×m] · b[k×m]ᵀ
fn mm_nt_acc(g: &[f64], b: &[f64], out: &mut [f64], n: usize, m: usize, k: usize) {
    for i in 0..n {
        let grow = &g[i * m..(i + 1) * m];
        let orow = &mut out[i * k..(i + 1) * k];
        for (p, o) in orow.iter_mut().enumerate() {
            let brow = &b[p * m..(p + 1) * m];
            let mut s = 0.0;
            for (gv, bv) in grow.iter().zip(brow) {
                s += gv * bv;
            }
            *o += s;
        }
    }
}

fn col_sums_acc(g: &[f64], out: &mut [f64], n: usize, m: usize) {
    for i in 0..n {
        for (o, gv) in out.iter_mut().zip(&g[i * m..(i + 1) * m]) {
            *o += gv;
        }
    }
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), consumed: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node { rows, cols, value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let n = self.node(a);
        let (rows, cols, ng) = (n.rows, n.cols, n.needs_grad);
        let value = n.value.iter().map(|&x| f(x)).collect();
        self.push(rows, cols, value, op, ng)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize), NnError> {
        let (na, nb) = (self.node(a), self.node(b));
        if na.rows != nb.rows || na.cols != nb.cols {
            return Err(shape_err(op, format!("{}x{} vs {}x{}", na.rows, na.cols, nb.rows, nb.cols)));
        }
        Ok((na.rows, na.cols))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var, NnError> {
        let (rows, cols) = self.same_shape(name, a, b)?;
        let (na, nb) = (self.node(a), self.node(b));
        let value = na.value.iter().zip(&nb.value).map(|(&x, &y)| f(x, y)).collect();
        let ng = na.needs_grad || nb.needs_grad;
        Ok(self.push(rows, cols, value, op, ng))
    }

    // ---- leaves ----

    pub fn leaf(&mut self, rows: usize, cols: usize, data: Vec<f64>, requires_grad: bool) -> Result<Var, NnError> {
        if data.len() != rows * cols {
            return Err(shape_err("leaf", format!("{}x{} from {} values", rows, cols, data.len())));
        }
        Ok(self.push(rows, cols, data, Op::Leaf, requires_grad))
    }

    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Result<Var, NnError> {
        self.leaf(rows, cols, data, false)
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.push(rows, cols, vec![0.0; rows * cols], Op::Leaf, false)
    }

    /// Binds every tensor of `params` as a trainable leaf.
    pub fn bind(&mut self, params: &ParamSet) -> Binding {
        self.bind_with(params, true)
    }

    /// Binds every tensor of `params` as a constant.
    pub fn bind_frozen(&mut self, params: &ParamSet) -> Binding {
        self.bind_with(params, false)
    }

    fn bind_with(&mut self, params: &ParamSet, requires_grad: bool) -> Binding {
        let mut vars = BTreeMap::new();
        for (name, t) in params.iter() {
            let (r, c) = t.matrix_dims();
            let v = self.push(r, c, t.data().to_vec(), Op::Leaf, requires_grad);
            vars.insert(name.into(), v);
        }
        Binding { vars }
    }

    // ---- inspection ----

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        let n = self.node(v);
        (n.rows, n.cols)
    }

    pub fn scalar(&self, v: Var) -> Result<f64, NnError> {
        let n = self.node(v);
        if n.rows * n.cols != 1 {
            return Err(NnError::NotScalar { rows: n.rows, cols: n.cols });
        }
        Ok(n.value[0])
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (na, nb) = (self.node(a), self.node(b));
        if na.cols != nb.rows {
            return Err(shape_err("matmul", format!("{}x{} · {}x{}", na.rows, na.cols, nb.rows, nb.cols)));
        }
        let (n, k, m) = (na.rows, na.cols, nb.cols);
        let mut out = vec![0.0; n * m];
        mm_acc(&na.value, &nb.value, &mut out, n, k, m);
        let ng = na.needs_grad || nb.needs_grad;
        Ok(self.push(n, m, out, Op::MatMul(a, b), ng))
    }

    /// `act(x·w + b)` with `x: B×I`, `w: I×O`, `b: 1×O`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var, act: Activation) -> Result<Var, NnError> {
        let (nx, nw, nb) = (self.node(x), self.node(w), self.node(b));
        if nx.cols != nw.rows || nb.rows * nb.cols != nw.cols {
            return Err(shape_err(
                "dense",
                format!("x {}x{}, w {}x{}, b {}", nx.rows, nx.cols, nw.rows, nw.cols, nb.rows * nb.cols),
            ));
        }
        let (n, k, m) = (nx.rows, nx.cols, nw.cols);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            out[i * m..(i + 1) * m].copy_from_slice(&nb.value);
        }
        mm_acc(&nx.value, &nw.value, &mut out, n, k, m);
        out.iter_mut().for_each(|v| *v = act.apply(*v));
        let ng = nx.needs_grad || nw.needs_grad || nb.needs_grad;
        Ok(self.push(n, m, out, Op::Dense { x, w, b, act }, ng))
    }

    /// One LSTM cell step. `state` is the previous `[h | c]` (B×2H) or `None`
    /// for zero initial state; weights are packed in gate order
    /// input, forget, candidate, output. Returns the new `[h | c]`.
    pub fn lstm_step(&mut self, x: Var, state: Option<Var>, w_ih: Var, w_hh: Var, b: Var) -> Result<Var, NnError> {
        let (nx, nih, nhh, nb) = (self.node(x), self.node(w_ih), self.node(w_hh), self.node(b));
        let h = nhh.rows;
        let batch = nx.rows;
        let i_dim = nx.cols;
        if nih.rows != i_dim || nih.cols != 4 * h || nhh.cols != 4 * h || nb.rows * nb.cols != 4 * h {
            return Err(shape_err(
                "lstm",
                format!(
                    "x {}x{}, w_ih {}x{}, w_hh {}x{}, b {}",
                    nx.rows,
                    nx.cols,
                    nih.rows,
                    nih.cols,
                    nhh.rows,
                    nhh.cols,
                    nb.rows * nb.cols
                ),
            ));
        }
        let g4 = 4 * h;
        let mut z = vec![0.0; batch * g4];
        for r in 0..batch {
            z[r * g4..(r + 1) * g4].copy_from_slice(&nb.value);
        }
        mm_acc(&nx.value, &nih.value, &mut z, batch, i_dim, g4);
        let mut ng = nx.needs_grad || nih.needs_grad || nhh.needs_grad || nb.needs_grad;
        let prev: Option<&[f64]> = match state {
            Some(s) => {
                let ns = self.node(s);
                if ns.rows != batch || ns.cols != 2 * h {
                    return Err(shape_err("lstm", format!("state {}x{}, want {}x{}", ns.rows, ns.cols, batch, 2 * h)));
                }
                ng |= ns.needs_grad;
                Some(&ns.value)
            }
            None => None,
        };
        if let Some(sv) = prev {
            // z += h_prev · w_hh, reading h_prev as the first H columns of state
            for r in 0..batch {
                let zrow = &mut z[r * g4..(r + 1) * g4];
                for p in 0..h {
                    let hv = sv[r * 2 * h + p];
                    if hv == 0.0 {
                        continue;
                    }
                    let wrow = &nhh.value[p * g4..(p + 1) * g4];
                    for (zv, wv) in zrow.iter_mut().zip(wrow) {
                        *zv += hv * wv;
                    }
                }
            }
        }
        // cache: activated gates (B×4H) then tanh(c) (B×H)
        let mut cache = vec![0.0; batch * 5 * h];
        let mut out = vec![0.0; batch * 2 * h];
        for r in 0..batch {
            for j in 0..h {
                let zi = z[r * g4 + j];
                let zf = z[r * g4 + h + j];
                let zg = z[r * g4 + 2 * h + j];
                let zo = z[r * g4 + 3 * h + j];
                let (ig, fg, gg, og) = (math::sigmoid(zi), math::sigmoid(zf), math::tanh(zg), math::sigmoid(zo));
                let c_prev = prev.map_or(0.0, |sv| sv[r * 2 * h + h + j]);
                let c = fg * c_prev + ig * gg;
                let tc = math::tanh(c);
                let gates = &mut cache[r * g4..(r + 1) * g4];
                gates[j] = ig;
                gates[h + j] = fg;
                gates[2 * h + j] = gg;
                gates[3 * h + j] = og;
                cache[batch * g4 + r * h + j] = tc;
                out[r * 2 * h + j] = og * tc;
                out[r * 2 * h + h + j] = c;
            }
        }
        Ok(self.push(batch, 2 * h, out, Op::LstmStep { x, state, w_ih, w_hh, b, cache }, ng))
    }

    // ---- element-wise ----

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.binary("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.binary("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.binary("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Element-wise minimum; ties route the gradient to `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.binary("min", a, b, Op::Min(a, b), |x, y| if y < x { y } else { x })
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, Op::Scale(a, s), |x| s * x)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + s)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), math::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), math::sigmoid)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(a, Op::LeakyRelu(a, slope), |x| if x > 0.0 { x } else { slope * x })
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), math::exp)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, Op::Ln(a), math::ln)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sqrt(a), math::sqrt)
    }

    /// Clamps into `[lo, hi]`; the gradient passes only inside the range.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.max(lo).min(hi))
    }

    // ---- structural ----

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let Some(first) = parts.first() else {
            return Err(shape_err("concat", "no inputs".into()));
        };
        let rows = self.node(*first).rows;
        let mut cols = 0;
        let mut ng = false;
        for p in parts {
            let n = self.node(*p);
            if n.rows != rows {
                return Err(shape_err("concat", format!("row counts {} vs {}", rows, n.rows)));
            }
            cols += n.cols;
            ng |= n.needs_grad;
        }
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                let n = self.node(*p);
                out.extend_from_slice(&n.value[r * n.cols..(r + 1) * n.cols]);
            }
        }
        Ok(self.push(rows, cols, out, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, NnError> {
        let n = self.node(a);
        if start >= end || end > n.cols {
            return Err(shape_err("slice", format!("columns {}..{} of {}", start, end, n.cols)));
        }
        let w = end - start;
        let mut out = Vec::with_capacity(n.rows * w);
        for r in 0..n.rows {
            out.extend_from_slice(&n.value[r * n.cols + start..r * n.cols + end]);
        }
        let (rows, ng) = (n.rows, n.needs_grad);
        Ok(self.push(rows, w, out, Op::SliceCols(a, start, end), ng))
    }

    /// Reinterprets the row-major buffer with a new shape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var, NnError> {
        let n = self.node(a);
        if n.rows * n.cols != rows * cols {
            return Err(shape_err("reshape", format!("{}x{} to {}x{}", n.rows, n.cols, rows, cols)));
        }
        let (value, ng) = (n.value.clone(), n.needs_grad);
        Ok(self.push(rows, cols, value, Op::Reshape(a), ng))
    }

    /// Softmax along each row, computed after subtracting the row maximum.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let n = self.node(a);
        let (rows, cols, ng) = (n.rows, n.cols, n.needs_grad);
        let mut out = n.value.clone();
        for r in 0..rows {
            softmax_in_place(&mut out[r * cols..(r + 1) * cols]);
        }
        self.push(rows, cols, out, Op::SoftmaxRows(a), ng)
    }

    /// Per-row sums, `n×m → n×1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let n = self.node(a);
        let (rows, cols, ng) = (n.rows, n.cols, n.needs_grad);
        let out = (0..rows).map(|r| n.value[r * cols..(r + 1) * cols].iter().sum()).collect();
        self.push(rows, 1, out, Op::SumCols(a), ng)
    }

    /// Per-column means over rows, `n×m → 1×m`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let n = self.node(a);
        let (rows, cols, ng) = (n.rows, n.cols, n.needs_grad);
        let mut out = vec![0.0; cols];
        for r in 0..rows {
            for (o, v) in out.iter_mut().zip(&n.value[r * cols..(r + 1) * cols]) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= rows as f64);
        self.push(1, cols, out, Op::MeanRows(a), ng)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let n = self.node(a);
        let (s, ng): (f64, bool) = (n.value.iter().sum(), n.needs_grad);
        self.push(1, 1, vec![s], Op::SumAll(a), ng)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.node(a);
        let len = n.value.len() as f64;
        let (s, ng): (f64, bool) = (n.value.iter().sum::<f64>() / len, n.needs_grad);
        self.push(1, 1, vec![s], Op::MeanAll(a), ng)
    }

    // ---- reverse sweep ----

    /// Propagates d(loss)/d(node) back to every leaf that requires a gradient.
    /// The tape can be swept only once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, NnError> {
        if self.consumed {
            return Err(NnError::StaleGraph);
        }
        self.scalar(loss)?;
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) || !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
        }
        for (idx, node) in self.nodes.iter().enumerate() {
            if !(matches!(node.op, Op::Leaf) && node.needs_grad) {
                grads[idx] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let node = &nodes[idx];
        macro_rules! with_grad {
            ($v:expr, |$acc:ident| $body:block) => {
                if let Some($acc) = grad_slot(nodes, grads, $v) {
                    $body
                }
            };
        }
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (na, nb) = (&nodes[a.0], &nodes[b.0]);
                let (n, k, m) = (na.rows, na.cols, nb.cols);
                with_grad!(*a, |acc| {
                    mm_nt_acc(g, &nb.value, acc, n, m, k);
                });
                with_grad!(*b, |acc| {
                    mm_tn_acc(&na.value, g, acc, n, k, m);
                });
            }
            Op::Dense { x, w, b, act } => {
                let (nx, nw) = (&nodes[x.0], &nodes[w.0]);
                let (n, k, m) = (nx.rows, nx.cols, nw.cols);
                let dpre: Vec<f64> = g.iter().zip(y).map(|(gv, yv)| gv * act.derivative_from_output(*yv)).collect();
                with_grad!(*x, |acc| {
                    mm_nt_acc(&dpre, &nw.value, acc, n, m, k);
                });
                with_grad!(*w, |acc| {
                    mm_tn_acc(&nx.value, &dpre, acc, n, k, m);
                });
                with_grad!(*b, |acc| {
                    col_sums_acc(&dpre, acc, n, m);
                });
            }
            Op::LstmStep { x, state, w_ih, w_hh, b, cache } => {
                let (nx, nhh) = (&nodes[x.0], &nodes[w_hh.0]);
                let h = nhh.rows;
                let g4 = 4 * h;
                let batch = nx.rows;
                let i_dim = nx.cols;
                let prev = state.map(|s| &nodes[s.0].value);
                let mut dz = vec![0.0; batch * g4];
                let mut dc_prev = vec![0.0; batch * h];
                for r in 0..batch {
                    let gates = &cache[r * g4..(r + 1) * g4];
                    for j in 0..h {
                        let (ig, fg, gg, og) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
                        let tc = cache[batch * g4 + r * h + j];
                        let dh = g[r * 2 * h + j];
                        let dc = g[r * 2 * h + h + j] + dh * og * (1.0 - tc * tc);
                        let c_prev = prev.map_or(0.0, |sv| sv[r * 2 * h + h + j]);
                        let d = &mut dz[r * g4..(r + 1) * g4];
                        d[j] = dc * gg * ig * (1.0 - ig);
                        d[h + j] = dc * c_prev * fg * (1.0 - fg);
                        d[2 * h + j] = dc * ig * (1.0 - gg * gg);
                        d[3 * h + j] = dh * tc * og * (1.0 - og);
                        dc_prev[r * h + j] = dc * fg;
                    }
                }
                let nih = &nodes[w_ih.0];
                with_grad!(*x, |acc| {
                    mm_nt_acc(&dz, &nih.value, acc, batch, g4, i_dim);
                });
                with_grad!(*w_ih, |acc| {
                    mm_tn_acc(&nx.value, &dz, acc, batch, i_dim, g4);
                });
                with_grad!(*b, |acc| {
                    col_sums_acc(&dz, acc, batch, g4);
                });
                if let (Some(s), Some(sv)) = (state, prev) {
                    with_grad!(*w_hh, |acc| {
                        // h_prev is the first H columns of the state rows
                        for r in 0..batch {
                            let drow = &dz[r * g4..(r + 1) * g4];
                            for p in 0..h {
                                let hv = sv[r * 2 * h + p];
                                if hv == 0.0 {
                                    continue;
                                }
                                for (o, dv) in acc[p * g4..(p + 1) * g4].iter_mut().zip(drow) {
                                    *o += hv * dv;
                                }
                            }
                        }
                    });
                    with_grad!(*s, |acc| {
                        for r in 0..batch {
                            let drow = &dz[r * g4..(r + 1) * g4];
                            for p in 0..h {
                                let wrow = &nhh.value[p * g4..(p + 1) * g4];
                                let mut sdot = 0.0;
                                for (dv, wv) in drow.iter().zip(wrow) {
                                    sdot += dv * wv;
                                }
                                acc[r * 2 * h + p] += sdot;
                                acc[r * 2 * h + h + p] += dc_prev[r * h + p];
                            }
                        }
                    });
                }
            }
            Op::Add(a, b) => {
                with_grad!(*a, |acc| {
                    acc.iter_mut().zip(g).for_each(|(o, gv)| *o += gv);
                });
                with_grad!(*b, |acc| {
                    acc.iter_mut().zip(g).for_each(|(o, gv)| *o += gv);
                });
            }
            Op::Sub(a, b) => {
                with_grad!(*a, |acc| {
                    acc.iter_mut().zip(g).for_each(|(o, gv)| *o += gv);
                });
                with_grad!(*b, |acc| {
                    acc.iter_mut().zip(g).for_each(|(o, gv)| *o -= gv);
                });
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                with_grad!(*a, |acc| {
                    for i in 0..acc.len() {
                        acc[i] += g[i] * vb[i];
                    }
                });
                with_grad!(*b, |acc| {
                    for i in 0..acc.len() {
                        acc[i] += g[i] * va[i];
                    }
                });
            }
            Op::Min(a, b) => {
                let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                with_grad!(*a, |acc| {
                    for i in 0..acc.len() {
                        if !(vb[i] < va[i]) {
                            acc[i] += g[i];
                        }
                    }
                });
                with_grad!(*b, |acc| {
                    for i in 0..acc.len() {
                        if vb[i] < va[i] {
                            acc[i] += g[i];
                        }
                    }
                });
            }
            Op::Scale(a, s) => {
                with_grad!(*a, |acc| {
                    acc.iter_mut().zip(g).for_each(|(o, gv)| *o += s * gv);
                });
            }
            Op::AddScalar(a) | Op::Reshape(a) => {
                with_grad!(*a, |acc| {
                    acc.iter_mut().zip(g).for_each(|(o, gv)| *o += gv);
                });
            }
            Op::Tanh(a) => {
                with_grad!(*a, |acc| {
                    for i in 0..acc.len() {
                        acc[i] += g[i] * (1.0 - y[i] * y[i]);
                    }
                });
            }
            Op::Sigmoid(a) => {
                with_grad!(*a, |acc| {
                    for i in 0..acc.len() {
                        acc[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                });
            }
            Op::LeakyRelu(a, slope) => {
                let va = &nodes[a.0].value;
                with_grad!(*a, |acc| {
                    for i in 0..acc.len() {
                        acc[i] += if va[i] > 0.0 { g[i] } else { slope * g[i] };
                    }
                });
            }
            Op::Exp(a) => {
                with_grad!(*a, |acc| {
                    for i in 0..acc.len() {
                        acc[i] += g[i] * y[i];
                    }
                });
            }
            Op::Ln(a) => {
                let va = &nodes[a.0].value;
                with_grad!(*a, |acc| {
                    for i in 0..acc.len() {
                        acc[i] += g[i] / va[i];
                    }
                });
            }
            Op::Square(a) => {
                let va = &nodes[a.0].value;
                with_grad!(*a, |acc| {
                    for i in 0..acc.len() {
                        acc[i] += 2.0 * va[i] * g[i];
                    }
                });
            }
            Op::Sqrt(a) => {
                with_grad!(*a, |acc| {
                    for i in 0..acc.len() {
                        acc[i] += g[i] / (2.0 * y[i]);
                    }
                });
            }
            Op::Clamp(a, lo, hi) => {
                let va = &nodes[a.0].value;
                with_grad!(*a, |acc| {
                    for i in 0..acc.len() {
                        if va[i] >= *lo && va[i] <= *hi {
                            acc[i] += g[i];
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let rows = node.rows;
                let total = node.cols;
                let mut offset = 0;
                for p in parts {
                    let w = nodes[p.0].cols;
                    with_grad!(*p, |acc| {
                        for r in 0..rows {
                            for c in 0..w {
                                acc[r * w + c] += g[r * total + offset + c];
                            }
                        }
                    });
                    offset += w;
                }
            }
            Op::SliceCols(a, start, end) => {
                let src_cols = nodes[a.0].cols;
                let w = end - start;
                with_grad!(*a, |acc| {
                    for r in 0..node.rows {
                        for c in 0..w {
                            acc[r * src_cols + start + c] += g[r * w + c];
                        }
                    }
                });
            }
            Op::SoftmaxRows(a) => {
                let cols = node.cols;
                with_grad!(*a, |acc| {
                    for r in 0..node.rows {
                        let yr = &y[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for c in 0..cols {
                            acc[r * cols + c] += yr[c] * (gr[c] - dot);
                        }
                    }
                });
            }
            Op::SumCols(a) => {
                let cols = nodes[a.0].cols;
                with_grad!(*a, |acc| {
                    for (i, o) in acc.iter_mut().enumerate() {
                        *o += g[i / cols];
                    }
                });
            }
            Op::MeanRows(a) => {
                let (rows, cols) = (nodes[a.0].rows, nodes[a.0].cols);
                with_grad!(*a, |acc| {
                    for (i, o) in acc.iter_mut().enumerate() {
                        *o += g[i % cols] / rows as f64;
                    }
                });
            }
            Op::SumAll(a) => {
                with_grad!(*a, |acc| {
                    acc.iter_mut().for_each(|o| *o += g[0]);
                });
            }
            Op::MeanAll(a) => {
                let len = nodes[a.0].value.len() as f64;
                with_grad!(*a, |acc| {
                    acc.iter_mut().for_each(|o| *o += g[0] / len);
                });
            }
        }
    }
}

/// Accumulator for an input that needs a gradient, allocated on first use.
fn grad_slot<'g>(nodes: &[Node], grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
    let n = &nodes[v.0];
    if !n.needs_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; n.value.len()]))
}

/// Numerically stable softmax of one slice.
pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = math::exp(*x - max);
        sum += *x;
    }
    v.iter_mut().for_each(|x| *x /= sum);
}
