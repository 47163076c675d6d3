use crate::{shape_err, KernelError, Result, Tensor};

/// Handle to a value recorded on a [`Tape`].
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
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    MatVec(Var, Var),
    Scale(Var, Var),
    MulConst(Var, f64),
    AddConst(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Expm1(Var),
    Ln(Var),
    Abs(Var),
    Powf(Var, f64),
    Clamp(Var, f64, f64),
    Sum(Var),
    Dot(Var, Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Row(Var, usize),
    Stack(Vec<Var>),
    Softmax(Var),
}

#[derive(Debug)]
struct Node {
    value: Vec<f64>,
    shape: Vec<usize>,
    op: Op,
    needs_grad: bool,
}

/// Append-only record of a computation.
///
/// A tape is single-owner: build it, call [`Tape::backward`], then drop or
/// [`Tape::clear`] it.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients from one backward sweep.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// `None` when the node did not participate in the output.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, zero-filled if it did not participate.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Vec<f64> {
        match self.get(v) {
            Some(g) => g.to_vec(),
            None => vec![0.0; tape.value(v).len()],
        }
    }
}

fn is_vector(shape: &[usize]) -> bool {
    shape.len() == 1
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(KernelError::NonFinite { op })
    }
}

/// Four-accumulator dot product; keeps the loop vectorizable.
#[inline]
fn dot_slice(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
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

    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// First element; intended for `[1]`-shaped results.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("tape values are finite")
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Vec<f64>, shape: Vec<usize>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            shape,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(
        &mut self,
        name: &'static str,
        value: Vec<f64>,
        shape: Vec<usize>,
        op: Op,
        needs_grad: bool,
    ) -> Result<Var> {
        check_finite(name, &value)?;
        Ok(self.push(value, shape, op, needs_grad))
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.push(t.data().to_vec(), t.shape().to_vec(), Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push(t.data().to_vec(), t.shape().to_vec(), Op::Leaf, false)
    }

    pub fn leaf(&mut self, t: &Tensor, trainable: bool) -> Var {
        if trainable {
            self.param(t)
        } else {
            self.constant(t)
        }
    }

    pub fn constant_vec(&mut self, data: Vec<f64>) -> Result<Var> {
        let n = data.len();
        self.push_checked("constant", data, vec![n], Op::Leaf, false)
    }

    pub fn constant_scalar(&mut self, x: f64) -> Result<Var> {
        self.push_checked("constant", vec![x], vec![1], Op::Leaf, false)
    }

    fn grad2(&self, a: Var, b: Var) -> bool {
        self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if sa != sb {
            return Err(shape_err(op, format!("{:?} vs {:?}", sa, sb)));
        }
        Ok(())
    }

    fn zip_with(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let value: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let g = self.grad2(a, b);
        self.push_checked(name, value, shape, op, g)
    }

    fn map(&mut self, name: &'static str, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let value: Vec<f64> = self.nodes[a.0].value.iter().map(|&x| f(x)).collect();
        let shape = self.nodes[a.0].shape.clone();
        let g = self.nodes[a.0].needs_grad;
        self.push_checked(name, value, shape, op, g)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Elementwise quotient.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("div", a, b, Op::Div(a, b), |x, y| x / y)
    }

    /// `[m, n] x [n] -> [m]`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let (ws, xs) = (&self.nodes[w.0].shape, &self.nodes[x.0].shape);
        if ws.len() != 2 || !is_vector(xs) || ws[1] != xs[0] {
            return Err(shape_err("matvec", format!("{:?} x {:?}", ws, xs)));
        }
        let (m, n) = (ws[0], ws[1]);
        let wv = &self.nodes[w.0].value;
        let xv = &self.nodes[x.0].value;
        let value: Vec<f64> = (0..m).map(|i| dot_slice(&wv[i * n..(i + 1) * n], xv)).collect();
        let g = self.grad2(w, x);
        self.push_checked("matvec", value, vec![m], Op::MatVec(w, x), g)
    }

    /// Vector times a `[1]`-shaped variable.
    pub fn scale(&mut self, v: Var, s: Var) -> Result<Var> {
        if self.nodes[s.0].value.len() != 1 {
            return Err(shape_err("scale", format!("scalar operand has shape {:?}", self.nodes[s.0].shape)));
        }
        let k = self.nodes[s.0].value[0];
        let value: Vec<f64> = self.nodes[v.0].value.iter().map(|x| x * k).collect();
        let shape = self.nodes[v.0].shape.clone();
        let g = self.grad2(v, s);
        self.push_checked("scale", value, shape, Op::Scale(v, s), g)
    }

    pub fn mul_const(&mut self, a: Var, k: f64) -> Result<Var> {
        self.map("mul_const", a, Op::MulConst(a, k), |x| x * k)
    }

    pub fn add_const(&mut self, a: Var, k: f64) -> Result<Var> {
        self.map("add_const", a, Op::AddConst(a), |x| x + k)
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Result<Var> {
        let neg = self.mul_const(a, -1.0)?;
        self.add_const(neg, 1.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map("sigmoid", a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map("tanh", a, Op::Tanh(a), f64::tanh)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map("relu", a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.map("exp", a, Op::Exp(a), f64::exp)
    }

    /// `exp(x) - 1` without cancellation near zero.
    pub fn expm1(&mut self, a: Var) -> Result<Var> {
        self.map("expm1", a, Op::Expm1(a), f64::exp_m1)
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        self.map("ln", a, Op::Ln(a), f64::ln)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.map("abs", a, Op::Abs(a), f64::abs)
    }

    pub fn powf(&mut self, a: Var, p: f64) -> Result<Var> {
        self.map("powf", a, Op::Powf(a, p), |x| x.powf(p))
    }

    /// Clamp into `[lo, hi]`; gradient is zero where clamping is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        if lo > hi {
            return Err(KernelError::Invalid(format!("clamp bounds {lo} > {hi}")));
        }
        self.map("clamp", a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: f64 = self.nodes[a.0].value.iter().sum();
        let g = self.nodes[a.0].needs_grad;
        self.push_checked("sum", vec![s], vec![1], Op::Sum(a), g)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("dot", a, b)?;
        let s = dot_slice(&self.nodes[a.0].value, &self.nodes[b.0].value);
        let g = self.grad2(a, b);
        self.push_checked("dot", vec![s], vec![1], Op::Dot(a, b), g)
    }

    /// Concatenate vectors (scalars count as length-1 vectors).
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(shape_err("concat", "no inputs"));
        }
        let mut value = Vec::new();
        let mut g = false;
        for p in parts {
            let node = &self.nodes[p.0];
            if !is_vector(&node.shape) {
                return Err(shape_err("concat", format!("non-vector input {:?}", node.shape)));
            }
            value.extend_from_slice(&node.value);
            g |= node.needs_grad;
        }
        let n = value.len();
        self.push_checked("concat", value, vec![n], Op::Concat(parts.to_vec()), g)
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let node = &self.nodes[a.0];
        if !is_vector(&node.shape) || start + len > node.value.len() || len == 0 {
            return Err(shape_err(
                "slice",
                format!("[{start}, {}) of {:?}", start + len, node.shape),
            ));
        }
        let value = node.value[start..start + len].to_vec();
        let g = node.needs_grad;
        self.push_checked("slice", value, vec![len], Op::Slice(a, start), g)
    }

    /// Row `i` of a matrix as a vector.
    pub fn row(&mut self, m: Var, i: usize) -> Result<Var> {
        let node = &self.nodes[m.0];
        if node.shape.len() != 2 || i >= node.shape[0] {
            return Err(shape_err("row", format!("row {i} of {:?}", node.shape)));
        }
        let c = node.shape[1];
        let value = node.value[i * c..(i + 1) * c].to_vec();
        let g = node.needs_grad;
        self.push_checked("row", value, vec![c], Op::Row(m, i), g)
    }

    /// Stack equal-length vectors as the rows of a matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var> {
        let Some(first) = rows.first() else {
            return Err(shape_err("stack", "no rows"));
        };
        let width = self.nodes[first.0].value.len();
        let mut value = Vec::with_capacity(width * rows.len());
        let mut g = false;
        for r in rows {
            let node = &self.nodes[r.0];
            if !is_vector(&node.shape) || node.value.len() != width {
                return Err(shape_err("stack", format!("row shape {:?}, expected [{width}]", node.shape)));
            }
            value.extend_from_slice(&node.value);
            g |= node.needs_grad;
        }
        self.push_checked("stack", value, vec![rows.len(), width], Op::Stack(rows.to_vec()), g)
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let v = &self.nodes[a.0].value;
        if !is_vector(&self.nodes[a.0].shape) {
            return Err(shape_err("softmax", "expects a vector"));
        }
        let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
        let z: f64 = e.iter().sum();
        let value: Vec<f64> = e.into_iter().map(|x| x / z).collect();
        let shape = self.nodes[a.0].shape.clone();
        let g = self.nodes[a.0].needs_grad;
        self.push_checked("softmax", value, shape, Op::Softmax(a), g)
    }

    /// Reverse sweep from a `[1]`-shaped output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.nodes[output.0].value.len() != 1 {
            return Err(shape_err(
                "backward",
                format!("output must be scalar, got {:?}", self.nodes[output.0].shape),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(vec![1.0]);

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.needs_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        for (i, g) in grads.iter_mut().enumerate() {
            if !self.nodes[i].needs_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| -> &[f64] { &self.nodes[v.0].value };
        let wants = |v: Var| self.nodes[v.0].needs_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if wants(*a) {
                    accumulate(grads, self, *a, |acc| axpy(1.0, g, acc));
                }
                if wants(*b) {
                    accumulate(grads, self, *b, |acc| axpy(1.0, g, acc));
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    accumulate(grads, self, *a, |acc| axpy(1.0, g, acc));
                }
                if wants(*b) {
                    accumulate(grads, self, *b, |acc| axpy(-1.0, g, acc));
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                if wants(*a) {
                    accumulate(grads, self, *a, |acc| {
                        for ((o, gi), y) in acc.iter_mut().zip(g).zip(vb) {
                            *o += gi * y;
                        }
                    });
                }
                if wants(*b) {
                    accumulate(grads, self, *b, |acc| {
                        for ((o, gi), x) in acc.iter_mut().zip(g).zip(va) {
                            *o += gi * x;
                        }
                    });
                }
            }
            Op::Div(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                if wants(*a) {
                    accumulate(grads, self, *a, |acc| {
                        for ((o, gi), y) in acc.iter_mut().zip(g).zip(vb) {
                            *o += gi / y;
                        }
                    });
                }
                if wants(*b) {
                    accumulate(grads, self, *b, |acc| {
                        for (((o, gi), x), y) in acc.iter_mut().zip(g).zip(va).zip(vb) {
                            *o -= gi * x / (y * y);
                        }
                    });
                }
            }
            Op::MatVec(w, x) => {
                let n = self.nodes[w.0].shape[1];
                let (wv, xv) = (val(*w), val(*x));
                if wants(*w) {
                    accumulate(grads, self, *w, |acc| {
                        for (i, gi) in g.iter().enumerate() {
                            if *gi != 0.0 {
                                axpy(*gi, xv, &mut acc[i * n..(i + 1) * n]);
                            }
                        }
                    });
                }
                if wants(*x) {
                    accumulate(grads, self, *x, |acc| {
                        for (i, gi) in g.iter().enumerate() {
                            if *gi != 0.0 {
                                axpy(*gi, &wv[i * n..(i + 1) * n], acc);
                            }
                        }
                    });
                }
            }
            Op::Scale(v, s) => {
                let k = val(*s)[0];
                if wants(*v) {
                    accumulate(grads, self, *v, |acc| axpy(k, g, acc));
                }
                if wants(*s) {
                    let d = dot_slice(g, val(*v));
                    accumulate(grads, self, *s, |acc| acc[0] += d);
                }
            }
            Op::MulConst(a, k) => accumulate(grads, self, *a, |acc| axpy(*k, g, acc)),
            Op::AddConst(a) => accumulate(grads, self, *a, |acc| axpy(1.0, g, acc)),
            Op::Sigmoid(a) => {
                let y = &node.value;
                accumulate(grads, self, *a, |acc| {
                    for ((o, gi), yi) in acc.iter_mut().zip(g).zip(y) {
                        *o += gi * yi * (1.0 - yi);
                    }
                })
            }
            Op::Tanh(a) => {
                let y = &node.value;
                accumulate(grads, self, *a, |acc| {
                    for ((o, gi), yi) in acc.iter_mut().zip(g).zip(y) {
                        *o += gi * (1.0 - yi * yi);
                    }
                })
            }
            Op::Relu(a) => {
                let x = val(*a);
                accumulate(grads, self, *a, |acc| {
                    for ((o, gi), xi) in acc.iter_mut().zip(g).zip(x) {
                        if *xi > 0.0 {
                            *o += gi;
                        }
                    }
                })
            }
            Op::Exp(a) => {
                let y = &node.value;
                accumulate(grads, self, *a, |acc| {
                    for ((o, gi), yi) in acc.iter_mut().zip(g).zip(y) {
                        *o += gi * yi;
                    }
                })
            }
            Op::Expm1(a) => {
                let y = &node.value;
                accumulate(grads, self, *a, |acc| {
                    for ((o, gi), yi) in acc.iter_mut().zip(g).zip(y) {
                        *o += gi * (yi + 1.0);
                    }
                })
            }
            Op::Ln(a) => {
                let x = val(*a);
                accumulate(grads, self, *a, |acc| {
                    for ((o, gi), xi) in acc.iter_mut().zip(g).zip(x) {
                        *o += gi / xi;
                    }
                })
            }
            Op::Abs(a) => {
                let x = val(*a);
                accumulate(grads, self, *a, |acc| {
                    for ((o, gi), xi) in acc.iter_mut().zip(g).zip(x) {
                        *o += gi * xi.signum() * f64::from(*xi != 0.0);
                    }
                })
            }
            Op::Powf(a, p) => {
                let x = val(*a);
                accumulate(grads, self, *a, |acc| {
                    for ((o, gi), xi) in acc.iter_mut().zip(g).zip(x) {
                        *o += gi * p * xi.powf(p - 1.0);
                    }
                })
            }
            Op::Clamp(a, lo, hi) => {
                let x = val(*a);
                accumulate(grads, self, *a, |acc| {
                    for ((o, gi), xi) in acc.iter_mut().zip(g).zip(x) {
                        if *xi >= *lo && *xi <= *hi {
                            *o += gi;
                        }
                    }
                })
            }
            Op::Sum(a) => {
                let g0 = g[0];
                accumulate(grads, self, *a, |acc| acc.iter_mut().for_each(|o| *o += g0))
            }
            Op::Dot(a, b) => {
                let g0 = g[0];
                let (va, vb) = (val(*a), val(*b));
                if wants(*a) {
                    accumulate(grads, self, *a, |acc| axpy(g0, vb, acc));
                }
                if wants(*b) {
                    accumulate(grads, self, *b, |acc| axpy(g0, va, acc));
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.nodes[p.0].value.len();
                    if wants(*p) {
                        accumulate(grads, self, *p, |acc| axpy(1.0, &g[offset..offset + len], acc));
                    }
                    offset += len;
                }
            }
            Op::Slice(a, start) => {
                let start = *start;
                accumulate(grads, self, *a, |acc| {
                    axpy(1.0, g, &mut acc[start..start + g.len()])
                })
            }
            Op::Row(m, i) => {
                let c = g.len();
                let i = *i;
                accumulate(grads, self, *m, |acc| axpy(1.0, g, &mut acc[i * c..(i + 1) * c]))
            }
            Op::Stack(rows) => {
                let width = node.shape[1];
                for (i, r) in rows.iter().enumerate() {
                    if wants(*r) {
                        accumulate(grads, self, *r, |acc| axpy(1.0, &g[i * width..(i + 1) * width], acc));
                    }
                }
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let gy = dot_slice(g, y);
                accumulate(grads, self, *a, |acc| {
                    for ((o, gi), yi) in acc.iter_mut().zip(g).zip(y) {
                        *o += yi * (gi - gy);
                    }
                })
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], tape: &Tape, v: Var, f: impl FnOnce(&mut [f64])) {
    if !tape.nodes[v.0].needs_grad {
        return;
    }
    let slot = &mut grads[v.0];
    let acc = slot.get_or_insert_with(|| vec![0.0; tape.nodes[v.0].value.len()]);
    f(acc);
}
