use super::kernels::{
    binary_broadcast, broadcast_shape, broadcast_strides, for_each_broadcast, gemm,
    reduce_to_shape, sigmoid, softmax_row, softplus, MatRef,
};
use super::tensor::Tensor;
use super::AutodiffError;

type Result<T> = std::result::Result<T, AutodiffError>;

/// Handle to a node of a [`Graph`].
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
    Neg(Var),
    Exp(Var),
    Ln(Var),
    Sigmoid(Var),
    Softplus(Var),
    Tanh(Var),
    Recip(Var),
    Square(Var),
    Scale(Var, f64),
    Shift(Var),
    Clamp(Var, f64, f64),
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    BatchMatMul { a: Var, b: Var, ta: bool, tb: bool },
    SumAll(Var),
    MeanAll(Var),
    SumLast(Var),
    SumGroups { a: Var, sizes: Vec<usize> },
    Softmax(Var),
    Softmin(Var),
    Cumsum(Var),
    Cumprod(Var),
    ProductLimit { w: Var, events: Vec<bool>, floor: f64 },
    Concat { parts: Vec<Var>, axis: usize },
    Slice { a: Var, axis: usize, start: usize },
    Reshape(Var),
    TransposeLast2(Var),
    BroadcastTo(Var),
    RepeatRows { a: Var, times: usize },
    GatherRows { a: Var, indices: Vec<usize> },
    SqDistPairs(Var, Var),
    SqNorm(Var),
    Normalize(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(_) => "neg",
            Op::Exp(_) => "exp",
            Op::Ln(_) => "ln",
            Op::Sigmoid(_) => "sigmoid",
            Op::Softplus(_) => "softplus",
            Op::Tanh(_) => "tanh",
            Op::Recip(_) => "recip",
            Op::Square(_) => "square",
            Op::Scale(..) => "scale",
            Op::Shift(..) => "shift",
            Op::Clamp(..) => "clamp",
            Op::MatMul { .. } => "matmul",
            Op::BatchMatMul { .. } => "batch_matmul",
            Op::SumAll(_) => "sum",
            Op::MeanAll(_) => "mean",
            Op::SumLast(_) => "sum_last",
            Op::SumGroups { .. } => "sum_groups",
            Op::Softmax(_) => "softmax",
            Op::Softmin(_) => "softmin",
            Op::Cumsum(_) => "cumsum",
            Op::Cumprod(_) => "cumprod",
            Op::ProductLimit { .. } => "product_limit",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Reshape(_) => "reshape",
            Op::TransposeLast2(_) => "transpose",
            Op::BroadcastTo(_) => "broadcast",
            Op::RepeatRows { .. } => "repeat_rows",
            Op::GatherRows { .. } => "gather_rows",
            Op::SqDistPairs(..) => "sq_dist_pairs",
            Op::SqNorm(_) => "sq_norm",
            Op::Normalize(_) => "normalize",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run computation graph. Rebuilt for every forward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros shaped like `like` when `v` did not influence the root.
    pub fn get_or_zeros(&self, v: Var, like: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(like))
    }
}

fn mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

/// `[outer, axis_len, inner]` decomposition of `shape` around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
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

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        if !value.all_finite() {
            return Err(AutodiffError::NonFinite { op: op.name() });
        }
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::SqDistPairs(a, b)
            | Op::MatMul { a, b, .. }
            | Op::BatchMatMul { a, b, .. } => self.requires_grad(*a) || self.requires_grad(*b),
            Op::Concat { parts, .. } => parts.iter().any(|p| self.requires_grad(*p)),
            Op::Neg(a)
            | Op::Exp(a)
            | Op::Ln(a)
            | Op::Sigmoid(a)
            | Op::Softplus(a)
            | Op::Tanh(a)
            | Op::Recip(a)
            | Op::Square(a)
            | Op::Scale(a, _)
            | Op::Shift(a)
            | Op::Clamp(a, ..)
            | Op::SumAll(a)
            | Op::MeanAll(a)
            | Op::SumLast(a)
            | Op::SumGroups { a, .. }
            | Op::Softmax(a)
            | Op::Softmin(a)
            | Op::Cumsum(a)
            | Op::Cumprod(a)
            | Op::ProductLimit { w: a, .. }
            | Op::Slice { a, .. }
            | Op::Reshape(a)
            | Op::TransposeLast2(a)
            | Op::BroadcastTo(a)
            | Op::RepeatRows { a, .. }
            | Op::GatherRows { a, .. }
            | Op::SqNorm(a)
            | Op::Normalize(a) => self.requires_grad(*a),
        };
        Ok(self.push_raw(value, op, requires_grad))
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let value = self.value(a).map(f);
        self.push(value, op)
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let name = op.name();
        let (sa, sb) = (self.shape(a), self.shape(b));
        let out = broadcast_shape(sa, sb).ok_or_else(|| mismatch(name, sa, sb))?;
        let value = binary_broadcast(self.value(a), self.value(b), &out, f);
        self.push(value, op)
    }

    // ---- elementwise -------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Div(a, b), |x, y| x / y)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Neg(a), |x| -x)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Ln(a), f64::ln)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Softplus(a), softplus)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn recip(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Recip(a), |x| 1.0 / x)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, Op::Scale(a, c), |x| c * x)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, Op::Shift(a), |x| x + c)
    }

    /// `c - a`.
    pub fn rsub_scalar(&mut self, c: f64, a: Var) -> Result<Var> {
        let n = self.neg(a)?;
        self.add_scalar(n, c)
    }

    /// Elementwise clamp into `[lo, hi]`; the gradient passes on the closed interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    // ---- linear algebra ----------------------------------------------

    /// Product of two matrices, either optionally transposed.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 {
            return Err(mismatch("matmul", &sa, &sb));
        }
        let ma = MatRef::new(self.value(a).data(), sa[0], sa[1], ta);
        let mb = MatRef::new(self.value(b).data(), sb[0], sb[1], tb);
        if ma.cols != mb.rows {
            return Err(mismatch("matmul", &sa, &sb));
        }
        let (m, n) = (ma.rows, mb.cols);
        let mut out = vec![0.0; m * n];
        gemm(1.0, ma, mb, 0.0, &mut out, n as isize, 1);
        self.push(
            Tensor::from_parts(vec![m, n], out),
            Op::MatMul { a, b, ta, tb },
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    /// Batched product of `[batch, .., ..]` tensors.
    pub fn batch_matmul(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(mismatch("batch_matmul", &sa, &sb));
        }
        let batch = sa[0];
        let (pa, pb) = (sa[1] * sa[2], sb[1] * sb[2]);
        let probe_a = MatRef::new(&[], sa[1], sa[2], ta);
        let probe_b = MatRef::new(&[], sb[1], sb[2], tb);
        if probe_a.cols != probe_b.rows {
            return Err(mismatch("batch_matmul", &sa, &sb));
        }
        let (m, n) = (probe_a.rows, probe_b.cols);
        let mut out = vec![0.0; batch * m * n];
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        for t in 0..batch {
            let ma = MatRef::new(&av[t * pa..(t + 1) * pa], sa[1], sa[2], ta);
            let mb = MatRef::new(&bv[t * pb..(t + 1) * pb], sb[1], sb[2], tb);
            gemm(1.0, ma, mb, 0.0, &mut out[t * m * n..], n as isize, 1);
        }
        self.push(
            Tensor::from_parts(vec![batch, m, n], out),
            Op::BatchMatMul { a, b, ta, tb },
        )
    }

    /// `out[i, j] = ||a_i - b_j||^2` for `a: [q, d]`, `b: [r, d]`.
    pub fn sq_dist_pairs(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(mismatch("sq_dist_pairs", &sa, &sb));
        }
        let (q, r, d) = (sa[0], sb[0], sa[1]);
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; q * r];
        if d <= 16 {
            for i in 0..q {
                let ai = &av[i * d..(i + 1) * d];
                let row = &mut out[i * r..(i + 1) * r];
                for (j, o) in row.iter_mut().enumerate() {
                    let bj = &bv[j * d..(j + 1) * d];
                    *o = ai.iter().zip(bj).map(|(x, y)| (x - y) * (x - y)).sum();
                }
            }
        } else {
            let na: Vec<f64> = av.chunks(d).map(|r| r.iter().map(|x| x * x).sum()).collect();
            let nb: Vec<f64> = bv.chunks(d).map(|r| r.iter().map(|x| x * x).sum()).collect();
            gemm(
                -2.0,
                MatRef::new(av, q, d, false),
                MatRef::new(bv, r, d, true),
                0.0,
                &mut out,
                r as isize,
                1,
            );
            for i in 0..q {
                for j in 0..r {
                    let v = &mut out[i * r + j];
                    *v = (*v + na[i] + nb[j]).max(0.0);
                }
            }
        }
        self.push(Tensor::from_parts(vec![q, r], out), Op::SqDistPairs(a, b))
    }

    /// Squared L2 norm along the last axis; the axis is dropped.
    pub fn sq_norm(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let out: Vec<f64> = t.rows().map(|r| r.iter().map(|x| x * x).sum()).collect();
        let shape = reduced_shape(t.shape());
        self.push(Tensor::from_parts(shape, out), Op::SqNorm(a))
    }

    // ---- reductions --------------------------------------------------

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::MeanAll(a))
    }

    /// Sum along the last axis; the axis is dropped.
    pub fn sum_last(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let out: Vec<f64> = t.rows().map(|r| r.iter().sum()).collect();
        let shape = reduced_shape(t.shape());
        self.push(Tensor::from_parts(shape, out), Op::SumLast(a))
    }

    /// Sums consecutive runs of the last axis; run `k` has length `sizes[k]`.
    pub fn sum_groups(&mut self, a: Var, sizes: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let c = t.last_dim();
        if sizes.is_empty() || sizes.contains(&0) || sizes.iter().sum::<usize>() != c {
            return Err(AutodiffError::InvalidArgument {
                op: "sum_groups",
                reason: format!("group sizes {sizes:?} do not partition {c} columns"),
            });
        }
        let mut out = Vec::with_capacity(t.outer_len() * sizes.len());
        for row in t.rows() {
            let mut start = 0;
            for &len in sizes {
                out.push(row[start..start + len].iter().sum());
                start += len;
            }
        }
        let mut shape = t.shape().to_vec();
        *shape.last_mut().expect("rank >= 1") = sizes.len();
        self.push(
            Tensor::from_parts(shape, out),
            Op::SumGroups {
                a,
                sizes: sizes.to_vec(),
            },
        )
    }

    // ---- normalisations ------------------------------------------------

    /// Softmax along the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let value = row_softmax(self.value(a), 1.0);
        self.push(value, Op::Softmax(a))
    }

    /// `softmax(-a)` along the last axis.
    pub fn softmin(&mut self, a: Var) -> Result<Var> {
        let value = row_softmax(self.value(a), -1.0);
        self.push(value, Op::Softmin(a))
    }

    /// Divides each last-axis row by its sum; rows summing to zero become uniform.
    pub fn normalize(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let c = t.last_dim();
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(c) {
            let s: f64 = row.iter().sum();
            if s > 0.0 {
                row.iter_mut().for_each(|v| *v /= s);
            } else {
                row.iter_mut().for_each(|v| *v = 1.0 / c as f64);
            }
        }
        let shape = t.shape().to_vec();
        self.push(Tensor::from_parts(shape, out), Op::Normalize(a))
    }

    /// Running sum along the last axis.
    pub fn cumsum(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(t.last_dim()) {
            let mut acc = 0.0;
            for v in row.iter_mut() {
                acc += *v;
                *v = acc;
            }
        }
        let shape = t.shape().to_vec();
        self.push(Tensor::from_parts(shape, out), Op::Cumsum(a))
    }

    /// Running product along the last axis.
    pub fn cumprod(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(t.last_dim()) {
            let mut acc = 1.0;
            for v in row.iter_mut() {
                acc *= *v;
                *v = acc;
            }
        }
        let shape = t.shape().to_vec();
        self.push(Tensor::from_parts(shape, out), Op::Cumprod(a))
    }

    /// Row-wise product-limit survival from event weights `w` (last axis in risk order):
    /// `S_j = prod_{k<=j} clamp(1 - e_k w_k / max(1 - sum_{l<k} w_l, floor), 0, 1)`.
    pub fn product_limit(&mut self, w: Var, events: &[bool], floor: f64) -> Result<Var> {
        let t = self.value(w);
        let c = t.last_dim();
        if events.len() != c {
            return Err(mismatch("product_limit", t.shape(), &[events.len()]));
        }
        let mut out = vec![0.0; t.len()];
        for (orow, wrow) in out.chunks_mut(c).zip(t.rows()) {
            let mut before: f64 = 0.0;
            let mut surv = 1.0;
            for j in 0..c {
                if events[j] {
                    let at_risk = (1.0 - before).max(floor);
                    surv *= (1.0 - wrow[j] / at_risk).clamp(0.0, 1.0);
                }
                orow[j] = surv;
                before += wrow[j];
            }
        }
        let shape = t.shape().to_vec();
        let op = Op::ProductLimit {
            w,
            events: events.to_vec(),
            floor,
        };
        self.push(Tensor::from_parts(shape, out), op)
    }

    // ---- structural ----------------------------------------------------

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(parts[0]).to_vec();
        if axis >= first.len() {
            return Err(mismatch("concat", &first, &[axis]));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(k, (x, y))| k == axis || x == y);
            if !compatible {
                return Err(mismatch("concat", &first, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&first, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let t = self.value(p);
                let block = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        self.push(
            Tensor::from_parts(shape, out),
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        )
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(mismatch("slice", &shape, &[axis, start, len]));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let data = self.value(a).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * n * inner + start * inner;
            out.extend_from_slice(&data[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        self.push(
            Tensor::from_parts(out_shape, out),
            Op::Slice { a, axis, start },
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self
            .value(a)
            .clone()
            .reshaped(shape.to_vec())
            .map_err(|_| mismatch("reshape", self.shape(a), shape))?;
        self.push(value, Op::Reshape(a))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.rank() < 2 {
            return Err(mismatch("transpose", t.shape(), &[]));
        }
        let value = transpose_last2(t);
        self.push(value, Op::TransposeLast2(a))
    }

    pub fn broadcast_to(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        match broadcast_shape(&sa, shape) {
            Some(out) if out == shape => {}
            _ => return Err(mismatch("broadcast", &sa, shape)),
        }
        let sa_strides = broadcast_strides(&sa, shape);
        let zero_strides = vec![0; shape.len()];
        let src = self.value(a).data();
        let mut out = vec![0.0; shape.iter().product()];
        for_each_broadcast(shape, &sa_strides, &zero_strides, |o, i, _| out[o] = src[i]);
        self.push(Tensor::from_parts(shape.to_vec(), out), Op::BroadcastTo(a))
    }

    /// Repeats every entry of axis 0 `times` times consecutively.
    pub fn repeat_rows(&mut self, a: Var, times: usize) -> Result<Var> {
        if times == 0 {
            return Err(AutodiffError::InvalidArgument {
                op: "repeat_rows",
                reason: "times must be positive".into(),
            });
        }
        let t = self.value(a);
        let rows = t.shape()[0];
        let block = t.len() / rows;
        let mut out = Vec::with_capacity(t.len() * times);
        for chunk in t.data().chunks(block) {
            for _ in 0..times {
                out.extend_from_slice(chunk);
            }
        }
        let mut shape = t.shape().to_vec();
        shape[0] *= times;
        self.push(Tensor::from_parts(shape, out), Op::RepeatRows { a, times })
    }

    /// Selects entries of axis 0, with repetition allowed.
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let rows = t.shape()[0];
        if indices.is_empty() || indices.iter().any(|&i| i >= rows) {
            return Err(AutodiffError::InvalidArgument {
                op: "gather_rows",
                reason: format!("indices out of range for {rows} rows"),
            });
        }
        let block = t.len() / rows;
        let mut out = Vec::with_capacity(indices.len() * block);
        for &i in indices {
            out.extend_from_slice(&t.data()[i * block..(i + 1) * block]);
        }
        let mut shape = t.shape().to_vec();
        shape[0] = indices.len();
        self.push(
            Tensor::from_parts(shape, out),
            Op::GatherRows {
                a,
                indices: indices.to_vec(),
            },
        )
    }

    // ---- backward -------------------------------------------------------

    /// Reverse sweep from a scalar root. Gradients start from zero on every call.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_shape = self.shape(root);
        if root_shape.iter().product::<usize>() != 1 {
            return Err(AutodiffError::NonScalarRoot {
                shape: root_shape.to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::ones(root_shape));
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.requires_grad(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, reduce_to_shape(g, self.shape(*a)));
                self.accumulate(grads, *b, reduce_to_shape(g, self.shape(*b)));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, reduce_to_shape(g, self.shape(*a)));
                let neg = g.map(|v| -v);
                self.accumulate(grads, *b, reduce_to_shape(&neg, self.shape(*b)));
            }
            Op::Mul(a, b) => {
                let (ga, gb) = self.binary_grads(*a, *b, g, |gv, x, y| (gv * y, gv * x));
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::Div(a, b) => {
                let (ga, gb) =
                    self.binary_grads(*a, *b, g, |gv, x, y| (gv / y, -gv * x / (y * y)));
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::Neg(a) => self.accumulate(grads, *a, g.map(|v| -v)),
            Op::Exp(a) => self.accumulate(grads, *a, g.zip_map(y, |gv, yv| gv * yv)),
            Op::Ln(a) => {
                let x = self.value(*a);
                self.accumulate(grads, *a, g.zip_map(x, |gv, xv| gv / xv));
            }
            Op::Sigmoid(a) => {
                self.accumulate(grads, *a, g.zip_map(y, |gv, yv| gv * yv * (1.0 - yv)))
            }
            Op::Softplus(a) => {
                let x = self.value(*a);
                self.accumulate(grads, *a, g.zip_map(x, |gv, xv| gv * sigmoid(xv)));
            }
            Op::Tanh(a) => {
                self.accumulate(grads, *a, g.zip_map(y, |gv, yv| gv * (1.0 - yv * yv)))
            }
            Op::Recip(a) => self.accumulate(grads, *a, g.zip_map(y, |gv, yv| -gv * yv * yv)),
            Op::Square(a) => {
                let x = self.value(*a);
                self.accumulate(grads, *a, g.zip_map(x, |gv, xv| 2.0 * gv * xv));
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g.map(|v| c * v)),
            Op::Shift(a) => self.accumulate(grads, *a, g.clone()),
            Op::Clamp(a, lo, hi) => {
                let x = self.value(*a);
                let ga = g.zip_map(x, |gv, xv| if xv >= *lo && xv <= *hi { gv } else { 0.0 });
                self.accumulate(grads, *a, ga);
            }
            Op::MatMul { a, b, ta, tb } => {
                let (ga, gb) = self.matmul_grads(*a, *b, *ta, *tb, g);
                if let Some(ga) = ga {
                    self.accumulate(grads, *a, ga);
                }
                if let Some(gb) = gb {
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::BatchMatMul { a, b, ta, tb } => {
                let (ga, gb) = self.batch_matmul_grads(*a, *b, *ta, *tb, g);
                if let Some(ga) = ga {
                    self.accumulate(grads, *a, ga);
                }
                if let Some(gb) = gb {
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::SumAll(a) => {
                let ga = Tensor::filled(self.shape(*a), g.item());
                self.accumulate(grads, *a, ga);
            }
            Op::MeanAll(a) => {
                let s = self.shape(*a);
                let n: usize = s.iter().product();
                self.accumulate(grads, *a, Tensor::filled(s, g.item() / n as f64));
            }
            Op::SumGroups { a, sizes } => {
                let x = self.value(*a);
                let mut out = Vec::with_capacity(x.len());
                for grow in g.data().chunks(sizes.len()) {
                    for (&gv, &len) in grow.iter().zip(sizes) {
                        out.extend(std::iter::repeat_n(gv, len));
                    }
                }
                self.accumulate(grads, *a, Tensor::from_parts(x.shape().to_vec(), out));
            }
            Op::SumLast(a) | Op::SqNorm(a) => {
                let x = self.value(*a);
                let c = x.last_dim();
                let square = matches!(node.op, Op::SqNorm(_));
                let mut out = vec![0.0; x.len()];
                for (r, (orow, xrow)) in out.chunks_mut(c).zip(x.rows()).enumerate() {
                    let gv = g.data()[r];
                    for (o, &xv) in orow.iter_mut().zip(xrow) {
                        *o = if square { 2.0 * gv * xv } else { gv };
                    }
                }
                self.accumulate(grads, *a, Tensor::from_parts(x.shape().to_vec(), out));
            }
            Op::Softmax(a) | Op::Softmin(a) => {
                let sign = if matches!(node.op, Op::Softmax(_)) { 1.0 } else { -1.0 };
                let c = y.last_dim();
                let mut out = vec![0.0; y.len()];
                for ((orow, yrow), grow) in out.chunks_mut(c).zip(y.rows()).zip(g.rows()) {
                    let dot: f64 = yrow.iter().zip(grow).map(|(p, q)| p * q).sum();
                    for ((o, &yv), &gv) in orow.iter_mut().zip(yrow).zip(grow) {
                        *o = sign * yv * (gv - dot);
                    }
                }
                self.accumulate(grads, *a, Tensor::from_parts(y.shape().to_vec(), out));
            }
            Op::Normalize(a) => {
                let x = self.value(*a);
                let c = x.last_dim();
                let mut out = vec![0.0; x.len()];
                for (((orow, xrow), yrow), grow) in
                    out.chunks_mut(c).zip(x.rows()).zip(y.rows()).zip(g.rows())
                {
                    let s: f64 = xrow.iter().sum();
                    if s > 0.0 {
                        let dot: f64 = yrow.iter().zip(grow).map(|(p, q)| p * q).sum();
                        for (o, &gv) in orow.iter_mut().zip(grow) {
                            *o = (gv - dot) / s;
                        }
                    }
                }
                self.accumulate(grads, *a, Tensor::from_parts(x.shape().to_vec(), out));
            }
            Op::Cumsum(a) => {
                let c = g.last_dim();
                let mut out = g.data().to_vec();
                for row in out.chunks_mut(c) {
                    let mut acc = 0.0;
                    for v in row.iter_mut().rev() {
                        acc += *v;
                        *v = acc;
                    }
                }
                self.accumulate(grads, *a, Tensor::from_parts(g.shape().to_vec(), out));
            }
            Op::Cumprod(a) => {
                // d/dx_i = y_{i-1} * R_i with R_i = g_i + x_{i+1} R_{i+1}; exact when some x_j = 0.
                let x = self.value(*a);
                let c = x.last_dim();
                let mut out = vec![0.0; x.len()];
                for (((orow, xrow), yrow), grow) in
                    out.chunks_mut(c).zip(x.rows()).zip(y.rows()).zip(g.rows())
                {
                    let mut r = 0.0;
                    for i in (0..c).rev() {
                        r = grow[i] + if i + 1 < c { xrow[i + 1] * r } else { 0.0 };
                        let prefix = if i == 0 { 1.0 } else { yrow[i - 1] };
                        orow[i] = prefix * r;
                    }
                }
                self.accumulate(grads, *a, Tensor::from_parts(x.shape().to_vec(), out));
            }
            Op::ProductLimit { w, events, floor } => {
                let x = self.value(*w);
                let c = x.last_dim();
                let mut out = vec![0.0; x.len()];
                let mut factor = vec![0.0; c];
                let mut at_risk = vec![0.0; c];
                for (((orow, wrow), yrow), grow) in
                    out.chunks_mut(c).zip(x.rows()).zip(y.rows()).zip(g.rows())
                {
                    let mut before: f64 = 0.0;
                    for j in 0..c {
                        at_risk[j] = 1.0 - before;
                        factor[j] = if events[j] { 1.0 - wrow[j] / at_risk[j].max(*floor) } else { 1.0 };
                        before += wrow[j];
                    }
                    // Cumprod adjoint as in `Cumprod`, then chain through hazard and at-risk terms.
                    let mut r = 0.0;
                    let mut tail = 0.0;
                    for j in (0..c).rev() {
                        let f_next = if j + 1 < c { factor[j + 1].clamp(0.0, 1.0) } else { 0.0 };
                        r = grow[j] + f_next * r;
                        orow[j] += tail;
                        if !events[j] || !(0.0..=1.0).contains(&factor[j]) {
                            continue;
                        }
                        let prefix = if j == 0 { 1.0 } else { yrow[j - 1] };
                        let g_hazard = -prefix * r;
                        if at_risk[j] >= *floor {
                            let a = at_risk[j];
                            orow[j] += g_hazard / a;
                            // at_risk = 1 - sum_{l<j} w_l feeds back into every earlier weight.
                            tail += g_hazard * wrow[j] / (a * a);
                        } else {
                            orow[j] += g_hazard / floor;
                        }
                    }
                }
                self.accumulate(grads, *w, Tensor::from_parts(x.shape().to_vec(), out));
            }
            Op::Concat { parts, axis } => {
                let shape = y.shape();
                let (outer, total, inner) = split_axis(shape, *axis);
                let mut offset = 0;
                for &p in parts {
                    let len = self.shape(p)[*axis];
                    if self.requires_grad(p) {
                        let mut out = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let base = o * total * inner + offset * inner;
                            out.extend_from_slice(&g.data()[base..base + len * inner]);
                        }
                        let gp = Tensor::from_parts(self.shape(p).to_vec(), out);
                        self.accumulate(grads, p, gp);
                    }
                    offset += len;
                }
            }
            Op::Slice { a, axis, start } => {
                let shape = self.shape(*a);
                let (outer, n, inner) = split_axis(shape, *axis);
                let len = y.shape()[*axis];
                let mut out = vec![0.0; shape.iter().product()];
                for o in 0..outer {
                    let base = o * n * inner + start * inner;
                    let src = o * len * inner;
                    out[base..base + len * inner]
                        .copy_from_slice(&g.data()[src..src + len * inner]);
                }
                self.accumulate(grads, *a, Tensor::from_parts(shape.to_vec(), out));
            }
            Op::Reshape(a) => {
                let ga = g.clone().reshaped(self.shape(*a).to_vec()).expect("same size");
                self.accumulate(grads, *a, ga);
            }
            Op::TransposeLast2(a) => self.accumulate(grads, *a, transpose_last2(g)),
            Op::BroadcastTo(a) => {
                self.accumulate(grads, *a, reduce_to_shape(g, self.shape(*a)));
            }
            Op::RepeatRows { a, times } => {
                let shape = self.shape(*a);
                let block = g.len() / (shape[0] * times);
                let mut out = vec![0.0; shape.iter().product()];
                for (k, chunk) in g.data().chunks(block).enumerate() {
                    let dst = &mut out[(k / times) * block..(k / times + 1) * block];
                    dst.iter_mut().zip(chunk).for_each(|(d, s)| *d += s);
                }
                self.accumulate(grads, *a, Tensor::from_parts(shape.to_vec(), out));
            }
            Op::GatherRows { a, indices } => {
                let shape = self.shape(*a);
                let block = g.len() / indices.len();
                let mut out = vec![0.0; shape.iter().product()];
                for (chunk, &i) in g.data().chunks(block).zip(indices) {
                    let dst = &mut out[i * block..(i + 1) * block];
                    dst.iter_mut().zip(chunk).for_each(|(d, s)| *d += s);
                }
                self.accumulate(grads, *a, Tensor::from_parts(shape.to_vec(), out));
            }
            Op::SqDistPairs(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (q, d) = (av.shape()[0], av.shape()[1]);
                let r = bv.shape()[0];
                let gd = g.data();
                if self.requires_grad(*a) {
                    // 2 (rowsum(G) a_i - G b)
                    let mut out = vec![0.0; q * d];
                    gemm(
                        -2.0,
                        MatRef::new(gd, q, r, false),
                        MatRef::new(bv.data(), r, d, false),
                        0.0,
                        &mut out,
                        d as isize,
                        1,
                    );
                    for i in 0..q {
                        let rs: f64 = gd[i * r..(i + 1) * r].iter().sum();
                        for k in 0..d {
                            out[i * d + k] += 2.0 * rs * av.data()[i * d + k];
                        }
                    }
                    self.accumulate(grads, *a, Tensor::from_parts(vec![q, d], out));
                }
                if self.requires_grad(*b) {
                    let mut out = vec![0.0; r * d];
                    gemm(
                        -2.0,
                        MatRef::new(gd, q, r, true),
                        MatRef::new(av.data(), q, d, false),
                        0.0,
                        &mut out,
                        d as isize,
                        1,
                    );
                    let mut colsum = vec![0.0; r];
                    for row in gd.chunks(r) {
                        colsum.iter_mut().zip(row).for_each(|(c, v)| *c += v);
                    }
                    for j in 0..r {
                        for k in 0..d {
                            out[j * d + k] += 2.0 * colsum[j] * bv.data()[j * d + k];
                        }
                    }
                    self.accumulate(grads, *b, Tensor::from_parts(vec![r, d], out));
                }
            }
        }
    }

    fn binary_grads(
        &self,
        a: Var,
        b: Var,
        g: &Tensor,
        f: impl Fn(f64, f64, f64) -> (f64, f64),
    ) -> (Tensor, Tensor) {
        let (at, bt) = (self.value(a), self.value(b));
        let (av, bv, gv) = (at.data(), bt.data(), g.data());
        let mut ga = vec![0.0; at.len()];
        let mut gb = vec![0.0; bt.len()];
        if at.shape() == bt.shape() {
            for i in 0..gv.len() {
                let (da, db) = f(gv[i], av[i], bv[i]);
                ga[i] = da;
                gb[i] = db;
            }
        } else {
            let out = g.shape();
            let sa = broadcast_strides(at.shape(), out);
            let sb = broadcast_strides(bt.shape(), out);
            for_each_broadcast(out, &sa, &sb, |o, ia, ib| {
                let (da, db) = f(gv[o], av[ia], bv[ib]);
                ga[ia] += da;
                gb[ib] += db;
            });
        }
        (
            Tensor::from_parts(at.shape().to_vec(), ga),
            Tensor::from_parts(bt.shape().to_vec(), gb),
        )
    }

    fn matmul_grads(
        &self,
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
        g: &Tensor,
    ) -> (Option<Tensor>, Option<Tensor>) {
        let (at, bt) = (self.value(a), self.value(b));
        let (sa, sb) = (at.shape(), bt.shape());
        let (ga, gb) = matmul_block_grads(
            at.data(),
            sa[0],
            sa[1],
            ta,
            bt.data(),
            sb[0],
            sb[1],
            tb,
            g.data(),
            self.requires_grad(a),
            self.requires_grad(b),
        );
        (
            ga.map(|v| Tensor::from_parts(sa.to_vec(), v)),
            gb.map(|v| Tensor::from_parts(sb.to_vec(), v)),
        )
    }

    fn batch_matmul_grads(
        &self,
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
        g: &Tensor,
    ) -> (Option<Tensor>, Option<Tensor>) {
        let (at, bt) = (self.value(a), self.value(b));
        let (sa, sb) = (at.shape(), bt.shape());
        let (need_a, need_b) = (self.requires_grad(a), self.requires_grad(b));
        let batch = sa[0];
        let (pa, pb, pg) = (sa[1] * sa[2], sb[1] * sb[2], g.len() / batch);
        let mut ga = need_a.then(|| Vec::with_capacity(at.len()));
        let mut gb = need_b.then(|| Vec::with_capacity(bt.len()));
        for t in 0..batch {
            let (da, db) = matmul_block_grads(
                &at.data()[t * pa..(t + 1) * pa],
                sa[1],
                sa[2],
                ta,
                &bt.data()[t * pb..(t + 1) * pb],
                sb[1],
                sb[2],
                tb,
                &g.data()[t * pg..(t + 1) * pg],
                need_a,
                need_b,
            );
            if let (Some(acc), Some(d)) = (ga.as_mut(), da) {
                acc.extend_from_slice(&d);
            }
            if let (Some(acc), Some(d)) = (gb.as_mut(), db) {
                acc.extend_from_slice(&d);
            }
        }
        (
            ga.map(|v| Tensor::from_parts(sa.to_vec(), v)),
            gb.map(|v| Tensor::from_parts(sb.to_vec(), v)),
        )
    }
}

#[allow(clippy::too_many_arguments)]
fn matmul_block_grads(
    a: &[f64],
    ra: usize,
    ca: usize,
    ta: bool,
    b: &[f64],
    rb: usize,
    cb: usize,
    tb: bool,
    g: &[f64],
    need_a: bool,
    need_b: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let opa = MatRef::new(a, ra, ca, ta);
    let opb = MatRef::new(b, rb, cb, tb);
    let (m, k, n) = (opa.rows, opa.cols, opb.cols);
    let gm = MatRef::new(g, m, n, false);
    let ga = need_a.then(|| {
        let mut out = vec![0.0; ra * ca];
        // d op(A) = G op(B)^T, stored transposed when A was used transposed.
        let (rs, cs) = if ta { (1, m as isize) } else { (k as isize, 1) };
        gemm(1.0, gm, opb.t(), 0.0, &mut out, rs, cs);
        out
    });
    let gb = need_b.then(|| {
        let mut out = vec![0.0; rb * cb];
        let (rs, cs) = if tb { (1, k as isize) } else { (n as isize, 1) };
        gemm(1.0, opa.t(), gm, 0.0, &mut out, rs, cs);
        out
    });
    (ga, gb)
}

fn reduced_shape(shape: &[usize]) -> Vec<usize> {
    if shape.len() <= 1 {
        vec![1]
    } else {
        shape[..shape.len() - 1].to_vec()
    }
}

fn row_softmax(t: &Tensor, sign: f64) -> Tensor {
    let c = t.last_dim();
    let mut out = vec![0.0; t.len()];
    for (orow, row) in out.chunks_mut(c).zip(t.rows()) {
        softmax_row(row, sign, orow);
    }
    Tensor::from_parts(t.shape().to_vec(), out)
}

fn transpose_last2(t: &Tensor) -> Tensor {
    let shape = t.shape();
    let rank = shape.len();
    let (r, c) = (shape[rank - 2], shape[rank - 1]);
    let batch = t.len() / (r * c);
    let mut out = vec![0.0; t.len()];
    let src = t.data();
    for b in 0..batch {
        let off = b * r * c;
        for i in 0..r {
            for j in 0..c {
                out[off + j * r + i] = src[off + i * c + j];
            }
        }
    }
    let mut new_shape = shape.to_vec();
    new_shape.swap(rank - 2, rank - 1);
    Tensor::from_parts(new_shape, out)
}
