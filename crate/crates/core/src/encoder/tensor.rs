//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records operations on 2-D values. Parameters live in a shared,
//! read-only [`ParamSet`]; the tape only stores their ids, so many tapes can
//! run concurrently against one parameter snapshot. Vectors are `1 × n`
//! matrices and scalars are `1 × 1`.

use std::collections::HashMap;

use ndarray::{s, Array2, Axis, Zip};
use serde::{Deserialize, Serialize};

pub type Matrix = Array2<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Matrix>,
}

impl ParamSet {
    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }
}

/// Per-parameter gradients; `None` means zero.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn new(num_params: usize) -> Self {
        Gradients {
            grads: vec![None; num_params],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient of one scalar coordinate (zero when absent).
    pub fn coordinate(&self, id: ParamId, row: usize, col: usize) -> f64 {
        self.get(id).map(|g| g[[row, col]]).unwrap_or(0.0)
    }

    fn slot(&mut self, id: ParamId, shape: (usize, usize)) -> &mut Matrix {
        if self.grads.len() <= id.0 {
            self.grads.resize(id.0 + 1, None);
        }
        self.grads[id.0].get_or_insert_with(|| Matrix::zeros(shape))
    }

    pub fn accumulate(&mut self, id: ParamId, g: &Matrix) {
        let dim = g.dim();
        *self.slot(id, dim) += g;
    }

    /// Adds `other` into `self`.
    pub fn merge(&mut self, other: &Gradients) {
        for (i, g) in other.grads.iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(ParamId(i), g);
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.mapv_inplace(|x| x * c);
        }
    }

    pub fn norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .map(|g| g.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Matrix)> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Matrix),
    Gelu(Var),
    Tanh(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Matrix,
        rstd: Vec<f64>,
    },
    GatherRows(Var, Vec<usize>),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<f64>,
        probs: Matrix,
    },
    BceWithLogits {
        logits: Var,
        targets: Matrix,
    },
    WeightedSum(Vec<(Var, f64)>),
}

struct Node {
    value: Option<Matrix>,
    op: Op,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Operation recorder bound to one parameter snapshot.
pub struct Tape<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

/// Result of a backward pass.
pub struct Backward {
    node_grads: Vec<Option<Matrix>>,
    pub params: Gradients,
}

impl Backward {
    /// Gradient with respect to a leaf (or any node), if it received one.
    pub fn grad(&self, v: Var) -> Option<&Matrix> {
        self.node_grads[v.0].as_ref()
    }
}

fn add_into(slot: &mut Option<Matrix>, g: Matrix) {
    match slot {
        Some(existing) => *existing += &g,
        None => *slot = Some(g),
    }
}

fn softmax_row_inplace(row: &mut ndarray::ArrayViewMut1<f64>) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    row.mapv_inplace(|x| (x - max).exp());
    let sum = row.sum();
    row.mapv_inplace(|x| x / sum);
}

/// Row-wise softmax of a plain matrix.
pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for mut row in out.rows_mut() {
        softmax_row_inplace(&mut row);
    }
    out
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Tape {
            params,
            nodes: Vec::with_capacity(256),
            param_vars: HashMap::new(),
        }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        match &self.nodes[v.0] {
            Node {
                op: Op::Param(id), ..
            } => self.params.get(*id),
            Node {
                value: Some(m), ..
            } => m,
            Node { value: None, .. } => unreachable!("non-param node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    /// Value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.dim(), (1, 1));
        m[[0, 0]]
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars.get(&id) {
            return *v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    pub fn input(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        self.push(v, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    /// Adds a `1 × n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.nrows(), 1, "add_row expects a 1 x n row");
        let v = self.value(a) + r;
        self.push(v, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.push(v, Op::Scale(a, c))
    }

    /// Elementwise product with a constant (e.g. a dropout mask).
    pub fn mul_const(&mut self, a: Var, mask: Matrix) -> Var {
        let v = self.value(a) * &mask;
        self.push(v, Op::MulConst(a, mask))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self
            .value(a)
            .mapv(|x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()));
        self.push(v, Op::Gelu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = softmax_rows(self.value(a));
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (n, d) = xv.dim();
        let mut xhat = Matrix::zeros((n, d));
        let mut rstd = Vec::with_capacity(n);
        for (i, row) in xv.rows().into_iter().enumerate() {
            let mean = row.sum() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let r = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd.push(r);
            Zip::from(xhat.row_mut(i))
                .and(&row)
                .for_each(|o, &v| *o = (v - mean) * r);
        }
        let out = &xhat * self.value(gamma) + self.value(beta);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
        )
    }

    pub fn gather_rows(&mut self, a: Var, rows: Vec<usize>) -> Var {
        let src = self.value(a);
        let mut out = Matrix::zeros((rows.len(), src.ncols()));
        for (i, &r) in rows.iter().enumerate() {
            out.row_mut(i).assign(&src.row(r));
        }
        self.push(out, Op::GatherRows(a, rows))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        self.gather_rows(a, (start..start + len).collect())
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(v, Op::SliceCols(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("row counts agree");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    /// Weighted mean cross-entropy over rows of `logits`:
    /// `Σ wᵢ·CEᵢ / Σ wᵢ`. Returns a `1 × 1` node.
    pub fn cross_entropy(&mut self, logits: Var, targets: Vec<usize>, weights: Option<Vec<f64>>) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.nrows(), targets.len());
        let weights = weights.unwrap_or_else(|| vec![1.0; targets.len()]);
        let probs = softmax_rows(lv);
        let total_w: f64 = weights.iter().sum();
        let mut loss = 0.0;
        if total_w > 0.0 {
            for (i, &t) in targets.iter().enumerate() {
                let row = lv.row(i);
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
                loss += weights[i] * (lse - row[t]);
            }
            loss /= total_w;
        }
        self.push(
            Matrix::from_elem((1, 1), loss),
            Op::CrossEntropy {
                logits,
                targets,
                weights,
                probs,
            },
        )
    }

    /// Mean binary cross-entropy with logits over all entries.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Matrix) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.dim(), targets.dim());
        let n = lv.len() as f64;
        let loss = Zip::from(lv)
            .and(&targets)
            .fold(0.0, |acc, &z, &t| acc + softplus(z) - t * z)
            / n;
        self.push(Matrix::from_elem((1, 1), loss), Op::BceWithLogits { logits, targets })
    }

    /// `Σ wᵢ·xᵢ` over `1 × 1` nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        let total: f64 = terms.iter().map(|(v, w)| w * self.scalar(*v)).sum();
        self.push(Matrix::from_elem((1, 1), total), Op::WeightedSum(terms.to_vec()))
    }

    pub fn constant_scalar(&mut self, x: f64) -> Var {
        self.input(Matrix::from_elem((1, 1), x))
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Back-propagates from a scalar.
    pub fn backward(&self, loss: Var) -> Backward {
        self.backward_from(vec![(loss, Matrix::from_elem((1, 1), 1.0))])
    }

    /// Back-propagates arbitrary upstream gradients.
    pub fn backward_from(&self, seeds: Vec<(Var, Matrix)>) -> Backward {
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut params = Gradients::new(self.params.len());
        let mut start = 0;
        for (v, g) in seeds {
            start = start.max(v.0);
            add_into(&mut grads[v.0], g);
        }
        for i in (0..=start).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Param(id) => {
                    params.accumulate(*id, &g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    add_into(&mut grads[a.0], ga);
                    add_into(&mut grads[b.0], gb);
                }
                Op::MatMulT(a, b) => {
                    let ga = g.dot(self.value(*b));
                    let gb = g.t().dot(self.value(*a));
                    add_into(&mut grads[a.0], ga);
                    add_into(&mut grads[b.0], gb);
                }
                Op::Transpose(a) => add_into(&mut grads[a.0], g.t().to_owned()),
                Op::Add(a, b) => {
                    add_into(&mut grads[b.0], g.clone());
                    add_into(&mut grads[a.0], g);
                }
                Op::AddRow(a, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    add_into(&mut grads[row.0], gr);
                    add_into(&mut grads[a.0], g);
                }
                Op::Scale(a, c) => add_into(&mut grads[a.0], g * *c),
                Op::MulConst(a, mask) => add_into(&mut grads[a.0], g * mask),
                Op::Gelu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(self.value(*a)).for_each(|gv, &x| {
                        let inner = GELU_C * (x + GELU_A * x * x * x);
                        let t = inner.tanh();
                        let d = 0.5 * (1.0 + t)
                            + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                        *gv *= d;
                    });
                    add_into(&mut grads[a.0], ga);
                }
                Op::Tanh(a) => {
                    let y = node.value.as_ref().unwrap();
                    let mut ga = g;
                    Zip::from(&mut ga).and(y).for_each(|gv, &t| *gv *= 1.0 - t * t);
                    add_into(&mut grads[a.0], ga);
                }
                Op::SoftmaxRows(a) => {
                    let y = node.value.as_ref().unwrap();
                    let mut ga = g;
                    for (mut grow, yrow) in ga.rows_mut().into_iter().zip(y.rows()) {
                        let dot: f64 = grow.iter().zip(yrow.iter()).map(|(a, b)| a * b).sum();
                        Zip::from(&mut grow).and(&yrow).for_each(|gv, &yv| *gv = yv * (*gv - dot));
                    }
                    add_into(&mut grads[a.0], ga);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    rstd,
                } => {
                    let gam = self.value(*gamma);
                    let gbeta = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    let ggamma = (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dxhat = &g * gam;
                    let d = xhat.ncols() as f64;
                    let mut gx = Matrix::zeros(xhat.dim());
                    for r in 0..xhat.nrows() {
                        let dh = dxhat.row(r);
                        let xh = xhat.row(r);
                        let mean_dh = dh.sum() / d;
                        let mean_dhx = dh.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>() / d;
                        Zip::from(gx.row_mut(r))
                            .and(&dh)
                            .and(&xh)
                            .for_each(|o, &a, &b| *o = rstd[r] * (a - mean_dh - b * mean_dhx));
                    }
                    add_into(&mut grads[gamma.0], ggamma);
                    add_into(&mut grads[beta.0], gbeta);
                    add_into(&mut grads[x.0], gx);
                }
                Op::GatherRows(a, rows) => {
                    if let Op::Param(id) = self.nodes[a.0].op {
                        // scatter straight into the parameter gradient
                        let shape = self.params.get(id).dim();
                        let dst = params.slot(id, shape);
                        for (i, &r) in rows.iter().enumerate() {
                            let mut dr = dst.row_mut(r);
                            dr += &g.row(i);
                        }
                    } else {
                        let mut ga = Matrix::zeros(self.shape(*a));
                        for (i, &r) in rows.iter().enumerate() {
                            let mut dr = ga.row_mut(r);
                            dr += &g.row(i);
                        }
                        add_into(&mut grads[a.0], ga);
                    }
                }
                Op::SliceCols(a, start) => {
                    let mut ga = Matrix::zeros(self.shape(*a));
                    ga.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    add_into(&mut grads[a.0], ga);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let w = self.shape(*p).1;
                        add_into(&mut grads[p.0], g.slice(s![.., offset..offset + w]).to_owned());
                        offset += w;
                    }
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    weights,
                    probs,
                } => {
                    let total_w: f64 = weights.iter().sum();
                    let mut gl = Matrix::zeros(probs.dim());
                    if total_w > 0.0 {
                        let up = g[[0, 0]] / total_w;
                        for (r, &t) in targets.iter().enumerate() {
                            let w = weights[r] * up;
                            let mut row = gl.row_mut(r);
                            row.assign(&probs.row(r));
                            row[t] -= 1.0;
                            row.mapv_inplace(|x| x * w);
                        }
                    }
                    add_into(&mut grads[logits.0], gl);
                }
                Op::BceWithLogits { logits, targets } => {
                    let up = g[[0, 0]] / targets.len() as f64;
                    let mut gl = self.value(*logits).mapv(sigmoid);
                    gl -= targets;
                    gl.mapv_inplace(|x| x * up);
                    add_into(&mut grads[logits.0], gl);
                }
                Op::WeightedSum(terms) => {
                    for (v, w) in terms {
                        add_into(&mut grads[v.0], &g * *w);
                    }
                }
            }
        }
        Backward {
            node_grads: grads,
            params,
        }
    }
}
