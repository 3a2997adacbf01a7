//! Reverse-mode differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters are
//! borrowed from a [`ParamStore`] and their gradients are returned by
//! [`Tape::backward`] as a [`ParamGrads`] indexed by [`ParamId`].

use std::borrow::Cow;
use std::collections::HashMap;
use std::ops::Range;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Learning-rate group of a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamGroup {
    /// Vision and language encoders.
    Encoder,
    /// Everything else: fusion, heads, scoring.
    Head,
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Array2<f64>,
    pub group: ParamGroup,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

/// Initialization scheme for new parameters.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    /// Normal with the given standard deviation.
    Normal(f64),
    /// Normal with standard deviation `1 / sqrt(rows)`.
    FanIn,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        shape: (usize, usize),
        init: Init,
        group: ParamGroup,
        rng: &mut ChaCha8Rng,
    ) -> ParamId {
        let value = match init {
            Init::Zeros => Array2::zeros(shape),
            Init::Ones => Array2::ones(shape),
            Init::Normal(std) => Array2::from_shape_simple_fn(shape, || std * standard_normal(rng)),
            Init::FanIn => {
                let std = 1.0 / (shape.0 as f64).sqrt();
                Array2::from_shape_simple_fn(shape, || std * standard_normal(rng))
            }
        };
        self.params.push(Param {
            name: name.into(),
            value,
            group,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Array2<f64> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.params[id.0].value
    }

    pub fn set_group(&mut self, id: ParamId, group: ParamGroup) {
        self.params[id.0].group = group;
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }
}

/// Box-Muller; keeps initialization independent of `rand_distr`.
pub(crate) fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Gradients for every parameter of a store; `None` for unused parameters.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    grads: Vec<Option<Array2<f64>>>,
}

impl ParamGrads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        ParamGrads {
            grads: vec![None; store.len()],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Array2<f64>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn get_mut(&mut self, id: ParamId) -> Option<&mut Array2<f64>> {
        self.grads.get_mut(id.0).and_then(|g| g.as_mut())
    }

    pub fn accumulate(&mut self, other: &ParamGrads) {
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            if let Some(t) = theirs {
                match mine {
                    Some(m) => *m += t,
                    None => *mine = Some(t.clone()),
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.mapv_inplace(|v| v * factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().flatten().all(|g| g.iter().all(|v| v.is_finite()))
    }
}

enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    MatMulBT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Softmax(Var),
    LayerNorm {
        input: Var,
        gain: Var,
        bias: Var,
        normalized: Array2<f64>,
        inv_std: Vec<f64>,
    },
    Gelu(Var),
    Sigmoid(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    SpanMean(Var, Vec<Range<usize>>),
    Gather(Var, Vec<usize>),
    /// Scalar loss with a gradient precomputed during the forward pass.
    Loss(Var, Array2<f64>),
}

struct Node<'a> {
    value: Cow<'a, Array2<f64>>,
    op: Op,
}

pub struct Tape<'a> {
    store: Option<&'a ParamStore>,
    nodes: Vec<Node<'a>>,
    param_vars: HashMap<ParamId, Var>,
}

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

impl<'a> Default for Tape<'a> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape {
            store: None,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn with_store(store: &'a ParamStore) -> Self {
        Tape {
            store: Some(store),
            nodes: Vec::with_capacity(512),
            param_vars: HashMap::new(),
        }
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    /// Constant input; receives no gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let store = self.store.expect("tape has no parameter store");
        self.nodes.push(Node {
            value: Cow::Borrowed(store.value(id)),
            op: Op::Param,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    /// `a * b^T`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(&self.value(b).t());
        self.push(out, Op::MatMulBT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) + self.value(b);
        self.push(out, Op::Add(a, b))
    }

    /// Adds a `1 x c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let out = self.value(a) + self.value(row);
        self.push(out, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a) * factor;
        self.push(out, Op::Scale(a, factor))
    }

    /// Row-wise softmax. Columns with `key_mask[j] == false` get zero weight.
    pub fn softmax_rows(&mut self, a: Var, key_mask: Option<&[bool]>) -> Var {
        let out = softmax_rows(self.value(a).view(), key_mask);
        self.push(out, Op::Softmax(a))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.dim();
        let mut normalized = Array2::zeros((rows, cols));
        let mut inv_std = Vec::with_capacity(rows);
        for (r, row) in xv.outer_iter().enumerate() {
            let mean = row.sum() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            for (c, v) in row.iter().enumerate() {
                normalized[[r, c]] = (v - mean) * is;
            }
        }
        let out = &normalized * self.value(gain) + self.value(bias);
        self.push(
            out,
            Op::LayerNorm {
                input: x,
                gain,
                bias,
                normalized,
                inv_std,
            },
        )
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self
            .value(a)
            .mapv(|x| 0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh()));
        self.push(out, Op::Gelu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = concatenate(Axis(0), &views).map_err(|e| shape_err("concat_rows", e.to_string()))?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = concatenate(Axis(1), &views).map_err(|e| shape_err("concat_cols", e.to_string()))?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, a: Var, range: Range<usize>) -> Var {
        let out = self.value(a).slice(s![range.clone(), ..]).to_owned();
        self.push(out, Op::SliceRows(a, range.start))
    }

    pub fn slice_cols(&mut self, a: Var, range: Range<usize>) -> Var {
        let out = self.value(a).slice(s![.., range.clone()]).to_owned();
        self.push(out, Op::SliceCols(a, range.start))
    }

    /// One output row per span: the mean of `a`'s rows in that span.
    pub fn span_mean(&mut self, a: Var, spans: &[Range<usize>]) -> Result<Var> {
        let av = self.value(a);
        let (rows, cols) = av.dim();
        let mut out = Array2::zeros((spans.len(), cols));
        for (i, span) in spans.iter().enumerate() {
            if span.is_empty() || span.end > rows {
                return Err(shape_err("span_mean", format!("span {span:?} invalid for {rows} rows")));
            }
            let mean = av
                .slice(s![span.clone(), ..])
                .mean_axis(Axis(0))
                .expect("non-empty span");
            out.row_mut(i).assign(&mean);
        }
        Ok(self.push(out, Op::SpanMean(a, spans.to_vec())))
    }

    /// Embedding lookup: rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let (rows, cols) = tv.dim();
        let mut out = Array2::zeros((ids.len(), cols));
        for (i, &id) in ids.iter().enumerate() {
            if id >= rows {
                return Err(shape_err("gather", format!("index {id} out of {rows} rows")));
            }
            out.row_mut(i).assign(&tv.row(id));
        }
        Ok(self.push(out, Op::Gather(table, ids.to_vec())))
    }

    /// Records a scalar loss whose gradient with respect to `input` has
    /// already been computed.
    pub fn loss(&mut self, input: Var, value: f64, grad: Array2<f64>) -> Result<Var> {
        if grad.dim() != self.shape(input) {
            return Err(shape_err(
                "loss",
                format!("gradient {:?} vs input {:?}", grad.dim(), self.shape(input)),
            ));
        }
        Ok(self.push(Array2::from_elem((1, 1), value), Op::Loss(input, grad)))
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    /// Backpropagates from the scalar `loss`; returns parameter gradients.
    pub fn backward(&self, loss: Var) -> Result<ParamGrads> {
        let (grads, _) = self.backward_full(loss)?;
        Ok(grads)
    }

    /// Like [`Tape::backward`] but also returns gradients of every node.
    pub fn backward_full(&self, loss: Var) -> Result<(ParamGrads, Vec<Option<Array2<f64>>>)> {
        if self.shape(loss) != (1, 1) {
            return Err(shape_err("backward", "loss must be 1x1"));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Array2<f64>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Array2::ones((1, 1)));
        for idx in (0..n).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf | Op::Param => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MatMulBT(a, b) => {
                    let ga = g.dot(self.value(*b));
                    let gb = g.t().dot(self.value(*a));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::AddRow(a, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *row, gr);
                    acc(&mut grads, *a, g);
                }
                Op::Scale(a, f) => acc(&mut grads, *a, g * *f),
                Op::Softmax(a) => {
                    let y = &node.value;
                    let mut ga = Array2::zeros(y.dim());
                    for ((mut out, yr), gr) in ga.outer_iter_mut().zip(y.outer_iter()).zip(g.outer_iter()) {
                        let dot: f64 = yr.iter().zip(gr.iter()).map(|(a, b)| a * b).sum();
                        for ((o, yv), gv) in out.iter_mut().zip(yr.iter()).zip(gr.iter()) {
                            *o = yv * (gv - dot);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::LayerNorm {
                    input,
                    gain,
                    bias,
                    normalized,
                    inv_std,
                } => {
                    let gain_v = self.value(*gain);
                    acc(&mut grads, *bias, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(
                        &mut grads,
                        *gain,
                        (&g * normalized).sum_axis(Axis(0)).insert_axis(Axis(0)),
                    );
                    let gx_hat = &g * gain_v;
                    let cols = normalized.ncols() as f64;
                    let mut gx = Array2::zeros(normalized.dim());
                    for r in 0..normalized.nrows() {
                        let gh = gx_hat.row(r);
                        let xh = normalized.row(r);
                        let mean_g = gh.sum() / cols;
                        let mean_gx: f64 = gh.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>() / cols;
                        for c in 0..normalized.ncols() {
                            gx[[r, c]] = inv_std[r] * (gh[c] - mean_g - xh[c] * mean_gx);
                        }
                    }
                    acc(&mut grads, *input, gx);
                }
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    let mut ga = g;
                    ga.zip_mut_with(x, |gv, &x| {
                        let inner = GELU_C * (x + 0.044715 * x * x * x);
                        let t = inner.tanh();
                        let d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
                        *gv *= d;
                    });
                    acc(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let mut ga = g;
                    ga.zip_mut_with(&node.value, |gv, &y| *gv *= y * (1.0 - y));
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let rows = self.shape(p).0;
                        acc(&mut grads, p, g.slice(s![start..start + rows, ..]).to_owned());
                        start += rows;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let cols = self.shape(p).1;
                        acc(&mut grads, p, g.slice(s![.., start..start + cols]).to_owned());
                        start += cols;
                    }
                }
                Op::SliceRows(a, start) => {
                    let mut ga = Array2::zeros(self.shape(*a));
                    ga.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::SliceCols(a, start) => {
                    let mut ga = Array2::zeros(self.shape(*a));
                    ga.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::SpanMean(a, spans) => {
                    let mut ga = Array2::zeros(self.shape(*a));
                    for (i, span) in spans.iter().enumerate() {
                        let w = 1.0 / span.len() as f64;
                        for r in span.clone() {
                            ga.row_mut(r).scaled_add(w, &g.row(i));
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Gather(table, ids) => {
                    let mut gt = Array2::zeros(self.shape(*table));
                    for (i, &id) in ids.iter().enumerate() {
                        gt.row_mut(id).scaled_add(1.0, &g.row(i));
                    }
                    acc(&mut grads, *table, gt);
                }
                Op::Loss(a, local) => {
                    let scale = g[[0, 0]];
                    acc(&mut grads, *a, local * scale);
                }
            }
        }
        let mut out = match self.store {
            Some(store) => ParamGrads::zeros_like(store),
            None => ParamGrads { grads: Vec::new() },
        };
        for (&id, &v) in &self.param_vars {
            if let Some(g) = &grads[v.0] {
                out.grads[id.0] = Some(g.clone());
            }
        }
        Ok((out, grads))
    }
}

fn acc(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable masked row softmax.
pub fn softmax_rows(a: ArrayView2<f64>, key_mask: Option<&[bool]>) -> Array2<f64> {
    let mut out = Array2::zeros(a.dim());
    for (mut o, row) in out.outer_iter_mut().zip(a.outer_iter()) {
        let keep = |j: usize| key_mask.is_none_or(|m| m[j]);
        let max = row
            .iter()
            .enumerate()
            .filter(|(j, _)| keep(*j))
            .map(|(_, v)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (j, (ov, v)) in o.iter_mut().zip(row.iter()).enumerate() {
            if keep(j) {
                *ov = (v - max).exp();
                sum += *ov;
            }
        }
        if sum > 0.0 {
            o.mapv_inplace(|v| v / sum);
        }
    }
    out
}

pub(crate) fn check_finite(value: f64, step: usize) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFiniteLoss { step, value })
    }
}
