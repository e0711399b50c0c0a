//! Tape-based reverse-mode differentiation over small dense 2-D tensors.
//!
//! Every node holds a `rows × cols` row-major value. Batched inputs are
//! laid out one sample per row; all primitives except [`Tape::matmul`]'s
//! right operand, [`Tape::add_row`]'s bias and the full reductions act
//! row-locally, so per-row gradients of a summed loss do not depend on
//! the batch size.
//!
//! Supported primitives: matrix product, broadcast bias add, add/sub,
//! scalar scale, per-row scale, elementwise tanh, square and reciprocal
//! square root, row sums, full sum, squared L2 norm, column concatenation
//! and user-supplied row maps with an explicit vector-Jacobian product.

use std::sync::Arc;

use super::NumericsError;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A differentiable function applied independently to every row.
pub trait RowFunction: Send + Sync {
    fn name(&self) -> &'static str;

    fn output_dim(&self, input_dim: usize) -> usize;

    fn eval(&self, input: &[f64], output: &mut [f64]);

    /// Accumulates `Jᵀ·cotangent` into `grad`. Returns `false` when no
    /// vector-Jacobian product is available.
    fn vjp(&self, _input: &[f64], _cotangent: &[f64], _grad: &mut [f64]) -> bool {
        false
    }
}

#[derive(Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    ScaleRows(Var, Var),
    Tanh(Var),
    Square(Var),
    Rsqrt(Var),
    SumCols(Var),
    Sum(Var),
    SumSq(Var),
    Concat(Var, Var),
    RowMap(Var, Arc<dyn RowFunction>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::AddRow(..) => "add_row",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Scale(..) => "scale",
            Op::ScaleRows(..) => "scale_rows",
            Op::Tanh(..) => "tanh",
            Op::Square(..) => "square",
            Op::Rsqrt(..) => "rsqrt",
            Op::SumCols(..) => "sum_cols",
            Op::Sum(..) => "sum",
            Op::SumSq(..) => "sum_sq",
            Op::Concat(..) => "concat",
            Op::RowMap(_, f) => f.name(),
        }
    }
}

#[derive(Clone)]
struct Node {
    op: Op,
    rows: usize,
    cols: usize,
    value: Vec<f64>,
}

/// Recorded computation. Nodes only reference earlier nodes.
#[derive(Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    adjoints: Vec<Option<Vec<f64>>>,
    sizes: Vec<usize>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros when `v` does not influence the output.
    pub fn wrt(&self, v: Var) -> Vec<f64> {
        match &self.adjoints[v.0] {
            Some(a) => a.clone(),
            None => vec![0.0; self.sizes[v.0]],
        }
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

    fn push(&mut self, op: Op, rows: usize, cols: usize, value: Vec<f64>) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node { op, rows, cols, value });
        Var(self.nodes.len() - 1)
    }

    /// Input or parameter node.
    pub fn leaf(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> Var {
        assert_eq!(value.len(), rows * cols, "leaf shape mismatch");
        self.push(Op::Leaf, rows, cols, value)
    }

    /// Single-row leaf.
    pub fn row_leaf(&mut self, value: &[f64]) -> Var {
        self.leaf(1, value.len(), value.to_vec())
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        assert_eq!(self.shape(v), (1, 1), "not a scalar node");
        self.nodes[v.0].value[0]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (r, k) = self.shape(a);
        let (k2, c) = self.shape(b);
        assert_eq!(k, k2, "matmul inner dimension mismatch");
        let value = matmul_slices(self.value(a), self.value(b), r, k, c);
        self.push(Op::MatMul(a, b), r, c, value)
    }

    /// Adds a `1 × cols` bias to every row.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(bias), (1, c), "bias shape mismatch");
        let b = self.value(bias);
        let value = self
            .value(a)
            .chunks(c)
            .flat_map(|row| row.iter().zip(b).map(|(x, y)| x + y))
            .collect();
        self.push(Op::AddRow(a, bias), r, c, value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (r, c) = self.same_shape(a, b);
        let value = zip(self.value(a), self.value(b), |x, y| x + y);
        self.push(Op::Add(a, b), r, c, value)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (r, c) = self.same_shape(a, b);
        let value = zip(self.value(a), self.value(b), |x, y| x - y);
        self.push(Op::Sub(a, b), r, c, value)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let (r, c) = self.shape(a);
        let value = self.value(a).iter().map(|x| x * factor).collect();
        self.push(Op::Scale(a, factor), r, c, value)
    }

    /// Multiplies row `i` of `a` by entry `i` of the `rows × 1` node `s`.
    pub fn scale_rows(&mut self, a: Var, s: Var) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(s), (r, 1), "row scale shape mismatch");
        let sv = self.value(s);
        let value = self
            .value(a)
            .chunks(c)
            .zip(sv)
            .flat_map(|(row, &k)| row.iter().map(move |x| x * k))
            .collect();
        self.push(Op::ScaleRows(a, s), r, c, value)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    /// Elementwise `1/√x`.
    pub fn rsqrt(&mut self, a: Var) -> Var {
        self.unary(a, Op::Rsqrt(a), |x| 1.0 / x.sqrt())
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let (r, c) = self.shape(a);
        let value = self.value(a).iter().map(|&x| f(x)).collect();
        self.push(op, r, c, value)
    }

    /// Sum of each row, as a `rows × 1` node.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let value = self.value(a).chunks(c).map(|row| row.iter().sum()).collect();
        self.push(Op::SumCols(a), r, 1, value)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = vec![self.value(a).iter().sum()];
        self.push(Op::Sum(a), 1, 1, value)
    }

    /// Squared L2 norm of all entries.
    pub fn sum_sq(&mut self, a: Var) -> Var {
        let value = vec![self.value(a).iter().map(|x| x * x).sum()];
        self.push(Op::SumSq(a), 1, 1, value)
    }

    /// Joins columns: `[a | b]`.
    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let (r, ca) = self.shape(a);
        let (r2, cb) = self.shape(b);
        assert_eq!(r, r2, "concat row mismatch");
        let mut value = Vec::with_capacity(r * (ca + cb));
        for i in 0..r {
            value.extend_from_slice(&self.value(a)[i * ca..(i + 1) * ca]);
            value.extend_from_slice(&self.value(b)[i * cb..(i + 1) * cb]);
        }
        self.push(Op::Concat(a, b), r, ca + cb, value)
    }

    pub fn row_map(&mut self, a: Var, f: Arc<dyn RowFunction>) -> Var {
        let (r, c) = self.shape(a);
        let oc = f.output_dim(c);
        let mut value = vec![0.0; r * oc];
        for (inp, out) in self.value(a).chunks(c).zip(value.chunks_mut(oc)) {
            f.eval(inp, out);
        }
        self.push(Op::RowMap(a, f), r, oc, value)
    }

    fn same_shape(&self, a: Var, b: Var) -> (usize, usize) {
        let sa = self.shape(a);
        assert_eq!(sa, self.shape(b), "elementwise shape mismatch");
        sa
    }

    /// Recomputes every node from the recorded leaves.
    pub fn replay(&self) -> Vec<Vec<f64>> {
        let mut replayed = Tape::new();
        for node in &self.nodes {
            let v = match &node.op {
                Op::Leaf => replayed.leaf(node.rows, node.cols, node.value.clone()),
                Op::MatMul(a, b) => replayed.matmul(*a, *b),
                Op::AddRow(a, b) => replayed.add_row(*a, *b),
                Op::Add(a, b) => replayed.add(*a, *b),
                Op::Sub(a, b) => replayed.sub(*a, *b),
                Op::Scale(a, k) => replayed.scale(*a, *k),
                Op::ScaleRows(a, s) => replayed.scale_rows(*a, *s),
                Op::Tanh(a) => replayed.tanh(*a),
                Op::Square(a) => replayed.square(*a),
                Op::Rsqrt(a) => replayed.rsqrt(*a),
                Op::SumCols(a) => replayed.sum_cols(*a),
                Op::Sum(a) => replayed.sum(*a),
                Op::SumSq(a) => replayed.sum_sq(*a),
                Op::Concat(a, b) => replayed.concat(*a, *b),
                Op::RowMap(a, f) => replayed.row_map(*a, f.clone()),
            };
            debug_assert_eq!(v.0 + 1, replayed.len());
        }
        replayed.nodes.into_iter().map(|n| n.value).collect()
    }

    /// Reverse sweep from a `1 × 1` output node.
    pub fn backward(&self, out: Var) -> Result<Gradients, NumericsError> {
        if self.shape(out) != (1, 1) {
            return Err(NumericsError::NotScalar);
        }
        let n = out.0 + 1;
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adj[out.0] = Some(vec![1.0]);
        for idx in (0..n).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (r, k) = self.shape(*a);
                    let c = node.cols;
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let da = accum(&mut adj, self, *a);
                    for i in 0..r {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..c {
                                s += g[i * c + j] * bv[p * c + j];
                            }
                            da[i * k + p] += s;
                        }
                    }
                    let db = accum(&mut adj, self, *b);
                    for i in 0..r {
                        for p in 0..k {
                            let x = av[i * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            for j in 0..c {
                                db[p * c + j] += x * g[i * c + j];
                            }
                        }
                    }
                }
                Op::AddRow(a, bias) => {
                    add_into(accum(&mut adj, self, *a), &g);
                    let c = node.cols;
                    let db = accum(&mut adj, self, *bias);
                    for row in g.chunks(c) {
                        add_into(db, row);
                    }
                }
                Op::Add(a, b) => {
                    add_into(accum(&mut adj, self, *a), &g);
                    add_into(accum(&mut adj, self, *b), &g);
                }
                Op::Sub(a, b) => {
                    add_into(accum(&mut adj, self, *a), &g);
                    let db = accum(&mut adj, self, *b);
                    for (d, x) in db.iter_mut().zip(&g) {
                        *d -= x;
                    }
                }
                Op::Scale(a, k) => {
                    let da = accum(&mut adj, self, *a);
                    for (d, x) in da.iter_mut().zip(&g) {
                        *d += k * x;
                    }
                }
                Op::ScaleRows(a, s) => {
                    let c = node.cols;
                    let sv = self.value(*s).to_vec();
                    let av = self.value(*a).to_vec();
                    let da = accum(&mut adj, self, *a);
                    for (i, &k) in sv.iter().enumerate() {
                        for j in 0..c {
                            da[i * c + j] += k * g[i * c + j];
                        }
                    }
                    let ds = accum(&mut adj, self, *s);
                    for (i, d) in ds.iter_mut().enumerate() {
                        *d += (0..c).map(|j| g[i * c + j] * av[i * c + j]).sum::<f64>();
                    }
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    let da = accum(&mut adj, self, *a);
                    for ((d, x), y) in da.iter_mut().zip(&g).zip(y) {
                        *d += x * (1.0 - y * y);
                    }
                }
                Op::Square(a) => {
                    let av = self.value(*a).to_vec();
                    let da = accum(&mut adj, self, *a);
                    for ((d, x), v) in da.iter_mut().zip(&g).zip(&av) {
                        *d += 2.0 * v * x;
                    }
                }
                Op::Rsqrt(a) => {
                    let y = &node.value;
                    let da = accum(&mut adj, self, *a);
                    for ((d, x), y) in da.iter_mut().zip(&g).zip(y) {
                        *d += -0.5 * y * y * y * x;
                    }
                }
                Op::SumCols(a) => {
                    let c = self.shape(*a).1;
                    let da = accum(&mut adj, self, *a);
                    for (i, gi) in g.iter().enumerate() {
                        for d in &mut da[i * c..(i + 1) * c] {
                            *d += gi;
                        }
                    }
                }
                Op::Sum(a) => {
                    let da = accum(&mut adj, self, *a);
                    for d in da.iter_mut() {
                        *d += g[0];
                    }
                }
                Op::SumSq(a) => {
                    let av = self.value(*a).to_vec();
                    let da = accum(&mut adj, self, *a);
                    for (d, v) in da.iter_mut().zip(&av) {
                        *d += 2.0 * v * g[0];
                    }
                }
                Op::Concat(a, b) => {
                    let ca = self.shape(*a).1;
                    let cb = self.shape(*b).1;
                    let r = node.rows;
                    {
                        let da = accum(&mut adj, self, *a);
                        for i in 0..r {
                            add_into(&mut da[i * ca..(i + 1) * ca], &g[i * (ca + cb)..i * (ca + cb) + ca]);
                        }
                    }
                    let db = accum(&mut adj, self, *b);
                    for i in 0..r {
                        add_into(
                            &mut db[i * cb..(i + 1) * cb],
                            &g[i * (ca + cb) + ca..(i + 1) * (ca + cb)],
                        );
                    }
                }
                Op::RowMap(a, f) => {
                    let c = self.shape(*a).1;
                    let oc = node.cols;
                    let av = self.value(*a).to_vec();
                    let da = accum(&mut adj, self, *a);
                    for i in 0..node.rows {
                        let ok = f.vjp(
                            &av[i * c..(i + 1) * c],
                            &g[i * oc..(i + 1) * oc],
                            &mut da[i * c..(i + 1) * c],
                        );
                        if !ok {
                            return Err(NumericsError::UnsupportedPrimitive(node.op.name()));
                        }
                    }
                }
            }
            // Keep adjoints of leaves and of anything the caller asked for.
            adj[idx] = Some(g);
        }
        let sizes = self.nodes.iter().map(|n| n.value.len()).collect();
        Ok(Gradients { adjoints: adj, sizes })
    }
}

fn accum<'a>(adj: &'a mut [Option<Vec<f64>>], tape: &Tape, v: Var) -> &'a mut Vec<f64> {
    adj[v.0].get_or_insert_with(|| vec![0.0; tape.nodes[v.0].value.len()])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn zip(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn matmul_slices(a: &[f64], b: &[f64], r: usize, k: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let dst = &mut out[i * c..(i + 1) * c];
        for p in 0..k {
            let x = a[i * k + p];
            if x == 0.0 {
                continue;
            }
            for (d, &y) in dst.iter_mut().zip(&b[p * c..(p + 1) * c]) {
                *d += x * y;
            }
        }
    }
    out
}

/// Gradient of the scalar function recorded by `f` at `x`.
///
/// `f` receives a fresh tape and the `1 × len` input node and must return
/// a `1 × 1` node built only from tape primitives.
pub fn gradient<F>(f: F, x: &[f64]) -> Result<Vec<f64>, NumericsError>
where
    F: FnOnce(&mut Tape, Var) -> Var,
{
    let mut tape = Tape::new();
    let input = tape.row_leaf(x);
    let out = f(&mut tape, input);
    if tape.value(out).iter().any(|v| !v.is_finite()) {
        return Err(NumericsError::NonFiniteForward);
    }
    let grads = tape.backward(out)?;
    Ok(grads.wrt(input))
}
