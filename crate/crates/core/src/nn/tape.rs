//! Reverse-mode autodiff over [`Tensor`] values.
//!
//! A [`Tape`] is an append-only arena of nodes. Building an expression
//! records both the forward value and the operation, so a single backward
//! sweep from a scalar root yields gradients for every node. Constants and
//! parameters are both leaves; callers keep the [`Var`] handles of the
//! parameters they care about.

use super::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Add(usize, usize),
    AddRow(usize, usize),
    Sub(usize, usize),
    MulElem(usize, usize),
    MinElem(usize, usize),
    MatMul(usize, usize),
    Scale(usize, f64),
    Clamp(usize, f64, f64),
    Tanh(usize),
    Exp(usize),
    Transpose(usize),
    GatherRows(usize, Vec<usize>),
    PickPerRow(usize, Vec<usize>),
    LogSoftmaxRows(usize),
    SoftmaxRows(usize),
    MaxPoolRows(usize, Vec<usize>),
    MeanRows(usize),
    SumAll(usize),
    LayerNormRows(usize, f64),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Append-only computation graph.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.leaf(Tensor::scalar(value))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).add(self.value(b));
        self.push(value, Op::Add(a.0, b.0))
    }

    /// Matrix plus broadcast row vector.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let value = self.value(a).add_row(self.value(row));
        self.push(value, Op::AddRow(a.0, row.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).sub(self.value(b));
        self.push(value, Op::Sub(a.0, b.0))
    }

    pub fn mul_elem(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(value, Op::MulElem(a.0, b.0))
    }

    /// Elementwise minimum. Gradient follows the smaller operand; ties go
    /// to the first.
    pub fn min_elem(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), f64::min);
        self.push(value, Op::MinElem(a.0, b.0))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        self.push(value, Op::MatMul(a.0, b.0))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a).scale(k);
        self.push(value, Op::Scale(a.0, k))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(value, Op::Clamp(a.0, lo, hi))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        self.push(value, Op::Exp(a.0))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a.0))
    }

    /// Row gather (embedding lookup): output row i is `a` row `indices[i]`.
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Var {
        let value = self.value(a).gather_rows(indices);
        self.push(value, Op::GatherRows(a.0, indices.to_vec()))
    }

    /// From an `(m, n)` input pick one column per row, giving `(m, 1)`.
    pub fn pick_per_row(&mut self, a: Var, cols: &[usize]) -> Var {
        let t = self.value(a);
        assert_eq!(t.rows(), cols.len(), "one column index per row required");
        let mut out = Tensor::zeros(t.rows(), 1);
        for (i, &c) in cols.iter().enumerate() {
            assert!(c < t.cols(), "column index {c} out of range");
            *out.at_mut(i, 0) = t.at(i, c);
        }
        self.push(out, Op::PickPerRow(a.0, cols.to_vec()))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let value = self.value(a).log_softmax_rows();
        self.push(value, Op::LogSoftmaxRows(a.0))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = self.value(a).softmax_rows();
        self.push(value, Op::SoftmaxRows(a.0))
    }

    pub fn max_pool_rows(&mut self, a: Var) -> Var {
        let (value, argmax) = self.value(a).max_pool_rows();
        self.push(value, Op::MaxPoolRows(a.0, argmax))
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let value = self.value(a).mean_rows();
        self.push(value, Op::MeanRows(a.0))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(value, Op::SumAll(a.0))
    }

    /// Row-wise normalization to zero mean and unit variance (no affine).
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let value = self.value(a).layer_norm_rows(eps);
        self.push(value, Op::LayerNormRows(a.0, eps))
    }

    /// Fold a list of scalars into their sum.
    pub fn sum_scalars(&mut self, vars: &[Var]) -> Var {
        assert!(!vars.is_empty(), "sum_scalars requires at least one term");
        let mut acc = vars[0];
        for &v in &vars[1..] {
            acc = self.add(acc, v);
        }
        acc
    }

    /// Backward sweep from a scalar root. Returns one gradient tensor per
    /// node, shaped like the node's value.
    pub fn backward(&self, root: Var) -> Vec<Tensor> {
        assert_eq!(
            self.value(root).shape(),
            (1, 1),
            "backward root must be scalar"
        );
        let mut grads: Vec<Tensor> = self
            .nodes
            .iter()
            .map(|n| Tensor::zeros(n.value.rows(), n.value.cols()))
            .collect();
        *grads[root.0].at_mut(0, 0) = 1.0;

        for idx in (0..=root.0).rev() {
            if grads[idx].data().iter().all(|&g| g == 0.0) {
                continue;
            }
            let g = grads[idx].clone();
            match &self.nodes[idx].op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    grads[*a].add_assign(&g);
                    grads[*b].add_assign(&g);
                }
                Op::AddRow(a, row) => {
                    grads[*a].add_assign(&g);
                    let mut rsum = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for c in 0..g.cols() {
                            *rsum.at_mut(0, c) += g.at(r, c);
                        }
                    }
                    grads[*row].add_assign(&rsum);
                }
                Op::Sub(a, b) => {
                    grads[*a].add_assign(&g);
                    grads[*b].add_assign(&g.scale(-1.0));
                }
                Op::MulElem(a, b) => {
                    let da = g.zip_map(&self.nodes[*b].value, |gi, bi| gi * bi);
                    let db = g.zip_map(&self.nodes[*a].value, |gi, ai| gi * ai);
                    grads[*a].add_assign(&da);
                    grads[*b].add_assign(&db);
                }
                Op::MinElem(a, b) => {
                    let av = &self.nodes[*a].value;
                    let bv = &self.nodes[*b].value;
                    let mut da = Tensor::zeros(g.rows(), g.cols());
                    let mut db = Tensor::zeros(g.rows(), g.cols());
                    for i in 0..g.data().len() {
                        if av.data()[i] <= bv.data()[i] {
                            da.data_mut()[i] = g.data()[i];
                        } else {
                            db.data_mut()[i] = g.data()[i];
                        }
                    }
                    grads[*a].add_assign(&da);
                    grads[*b].add_assign(&db);
                }
                Op::MatMul(a, b) => {
                    let da = g.matmul_nt(&self.nodes[*b].value);
                    let db = self.nodes[*a].value.matmul_tn(&g);
                    grads[*a].add_assign(&da);
                    grads[*b].add_assign(&db);
                }
                Op::Scale(a, k) => {
                    grads[*a].add_assign(&g.scale(*k));
                }
                Op::Clamp(a, lo, hi) => {
                    let av = &self.nodes[*a].value;
                    let da = g.zip_map(av, |gi, x| if x >= *lo && x <= *hi { gi } else { 0.0 });
                    grads[*a].add_assign(&da);
                }
                Op::Tanh(a) => {
                    let y = &self.nodes[idx].value;
                    let da = g.zip_map(y, |gi, yi| gi * (1.0 - yi * yi));
                    grads[*a].add_assign(&da);
                }
                Op::Exp(a) => {
                    let y = &self.nodes[idx].value;
                    let da = g.zip_map(y, |gi, yi| gi * yi);
                    grads[*a].add_assign(&da);
                }
                Op::Transpose(a) => {
                    grads[*a].add_assign(&g.transpose());
                }
                Op::GatherRows(a, indices) => {
                    let da = &mut grads[*a];
                    for (i, &src) in indices.iter().enumerate() {
                        for c in 0..g.cols() {
                            *da.at_mut(src, c) += g.at(i, c);
                        }
                    }
                }
                Op::PickPerRow(a, cols) => {
                    let da = &mut grads[*a];
                    for (i, &c) in cols.iter().enumerate() {
                        *da.at_mut(i, c) += g.at(i, 0);
                    }
                }
                Op::LogSoftmaxRows(a) => {
                    // dx = dy - softmax(x) * rowsum(dy)
                    let y = &self.nodes[idx].value;
                    let mut da = g.clone();
                    for r in 0..g.rows() {
                        let gsum: f64 = g.row(r).iter().sum();
                        for c in 0..g.cols() {
                            *da.at_mut(r, c) -= y.at(r, c).exp() * gsum;
                        }
                    }
                    grads[*a].add_assign(&da);
                }
                Op::SoftmaxRows(a) => {
                    // dx = y .* (dy - rowsum(dy .* y))
                    let y = &self.nodes[idx].value;
                    let mut da = Tensor::zeros(g.rows(), g.cols());
                    for r in 0..g.rows() {
                        let dot: f64 = g
                            .row(r)
                            .iter()
                            .zip(y.row(r))
                            .map(|(&gi, &yi)| gi * yi)
                            .sum();
                        for c in 0..g.cols() {
                            *da.at_mut(r, c) = y.at(r, c) * (g.at(r, c) - dot);
                        }
                    }
                    grads[*a].add_assign(&da);
                }
                Op::MaxPoolRows(a, argmax) => {
                    let da = &mut grads[*a];
                    for (c, &r) in argmax.iter().enumerate() {
                        *da.at_mut(r, c) += g.at(0, c);
                    }
                }
                Op::MeanRows(a) => {
                    let m = self.nodes[*a].value.rows();
                    let inv = 1.0 / m as f64;
                    let da = &mut grads[*a];
                    for r in 0..m {
                        for c in 0..g.cols() {
                            *da.at_mut(r, c) += g.at(0, c) * inv;
                        }
                    }
                }
                Op::SumAll(a) => {
                    let gi = g.item();
                    let da = &mut grads[*a];
                    for x in da.data_mut() {
                        *x += gi;
                    }
                }
                Op::LayerNormRows(a, eps) => {
                    // y = (x - mu) / s; dx = (dy - mean(dy) - y * mean(dy .* y)) / s
                    let x = &self.nodes[*a].value;
                    let y = &self.nodes[idx].value;
                    let n = x.cols() as f64;
                    let mut da = Tensor::zeros(x.rows(), x.cols());
                    for r in 0..x.rows() {
                        let row = x.row(r);
                        let mean = row.iter().sum::<f64>() / n;
                        let var = row.iter().map(|&v| (v - mean).powi(2)).sum::<f64>() / n;
                        let s = (var + eps).sqrt();
                        let g_mean: f64 = g.row(r).iter().sum::<f64>() / n;
                        let gy_mean: f64 = g
                            .row(r)
                            .iter()
                            .zip(y.row(r))
                            .map(|(&gi, &yi)| gi * yi)
                            .sum::<f64>()
                            / n;
                        for c in 0..x.cols() {
                            *da.at_mut(r, c) = (g.at(r, c) - g_mean - y.at(r, c) * gy_mean) / s;
                        }
                    }
                    grads[*a].add_assign(&da);
                }
            }
        }
        grads
    }

    /// Gradients for a set of leaves only.
    pub fn gradients_for(&self, root: Var, leaves: &[Var]) -> Vec<Tensor> {
        let all = self.backward(root);
        leaves.iter().map(|v| all[v.0].clone()).collect()
    }
}
