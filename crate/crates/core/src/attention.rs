//! Scaled dot-product attention, multi-head wrappers, pre-norm self and
//! cross layers, and a finite-difference gradient checker.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{softmax_rows, Init, ParamGrads, ParamGroup, ParamId, ParamStore, Tape, Var};
use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureRole {
    ImagePatch,
    TextToken,
    Region,
}

/// Dense `rows x width` features tagged with what they describe.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureArray {
    pub values: Array2<f64>,
    pub role: FeatureRole,
}

impl FeatureArray {
    pub fn new(values: Array2<f64>, role: FeatureRole) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::Empty("feature array"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(shape_err("feature array", "non-finite entry"));
        }
        Ok(FeatureArray { values, role })
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn width(&self) -> usize {
        self.values.ncols()
    }
}

/// `softmax(Q K^T / sqrt(d_k)) V`.
pub fn attn(q: &FeatureArray, k: &FeatureArray, v: &FeatureArray) -> Result<FeatureArray> {
    if k.rows() != v.rows() {
        return Err(shape_err("attn", format!("{} keys vs {} values", k.rows(), v.rows())));
    }
    if q.width() != k.width() {
        return Err(shape_err(
            "attn",
            format!("query width {} vs key width {}", q.width(), k.width()),
        ));
    }
    let logits = q.values.dot(&k.values.t()) / (q.width() as f64).sqrt();
    let weights = softmax_rows(logits.view(), None);
    FeatureArray::new(weights.dot(&v.values), q.role)
}

/// Attention on the tape; `key_mask[j] == false` excludes key row `j`.
pub fn attn_on(tape: &mut Tape, q: Var, k: Var, v: Var, key_mask: Option<&[bool]>) -> Var {
    let dk = tape.shape(q).1 as f64;
    let logits = tape.matmul_bt(q, k);
    let scaled = tape.scale(logits, 1.0 / dk.sqrt());
    let weights = tape.softmax_rows(scaled, key_mask);
    tape.matmul(weights, v)
}

/// Parameters of one transformer layer: attention projections, two layer
/// norms and a GELU feed-forward block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerParams {
    pub width: usize,
    pub heads: usize,
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    pub norm1_gain: ParamId,
    pub norm1_bias: ParamId,
    pub norm2_gain: ParamId,
    pub norm2_bias: ParamId,
    pub ff1_w: ParamId,
    pub ff1_b: ParamId,
    pub ff2_w: ParamId,
    pub ff2_b: ParamId,
}

impl LayerParams {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        width: usize,
        heads: usize,
        ffn_width: usize,
        group: ParamGroup,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if heads == 0 || !width.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "width {width} is not divisible into {heads} heads"
            )));
        }
        let mut add = |name: &str, shape, init| store.add(format!("{prefix}.{name}"), shape, init, group, rng);
        Ok(LayerParams {
            width,
            heads,
            wq: add("wq", (width, width), Init::FanIn),
            bq: add("bq", (1, width), Init::Zeros),
            wk: add("wk", (width, width), Init::FanIn),
            bk: add("bk", (1, width), Init::Zeros),
            wv: add("wv", (width, width), Init::FanIn),
            bv: add("bv", (1, width), Init::Zeros),
            wo: add("wo", (width, width), Init::FanIn),
            bo: add("bo", (1, width), Init::Zeros),
            norm1_gain: add("norm1.gain", (1, width), Init::Ones),
            norm1_bias: add("norm1.bias", (1, width), Init::Zeros),
            norm2_gain: add("norm2.gain", (1, width), Init::Ones),
            norm2_bias: add("norm2.bias", (1, width), Init::Zeros),
            ff1_w: add("ff1.w", (width, ffn_width), Init::FanIn),
            ff1_b: add("ff1.b", (1, ffn_width), Init::Zeros),
            ff2_w: add("ff2.w", (ffn_width, width), Init::FanIn),
            ff2_b: add("ff2.b", (1, width), Init::Zeros),
        })
    }

    pub fn head_width(&self) -> usize {
        self.width / self.heads
    }

    pub fn attention_ids(&self) -> [ParamId; 8] {
        [self.wq, self.bq, self.wk, self.bk, self.wv, self.bv, self.wo, self.bo]
    }

    pub fn feed_forward_ids(&self) -> [ParamId; 4] {
        [self.ff1_w, self.ff1_b, self.ff2_w, self.ff2_b]
    }

    pub fn all_ids(&self) -> Vec<ParamId> {
        let mut ids = self.attention_ids().to_vec();
        ids.extend([self.norm1_gain, self.norm1_bias, self.norm2_gain, self.norm2_bias]);
        ids.extend(self.feed_forward_ids());
        ids
    }
}

fn linear(tape: &mut Tape, x: Var, w: ParamId, b: ParamId) -> Var {
    let wv = tape.param(w);
    let bv = tape.param(b);
    let y = tape.matmul(x, wv);
    tape.add_row(y, bv)
}

fn check_width(tape: &Tape, p: &LayerParams, v: Var, what: &'static str) -> Result<()> {
    let w = tape.shape(v).1;
    if w != p.width {
        return Err(shape_err(what, format!("input width {w}, layer width {}", p.width)));
    }
    Ok(())
}

pub fn multi_head_on(tape: &mut Tape, p: &LayerParams, x_q: Var, x_kv: Var, key_mask: Option<&[bool]>) -> Result<Var> {
    check_width(tape, p, x_q, "multi_head")?;
    check_width(tape, p, x_kv, "multi_head")?;
    if let Some(m) = key_mask {
        if m.len() != tape.shape(x_kv).0 {
            return Err(shape_err("multi_head", "key mask length differs from key rows"));
        }
        if !m.iter().any(|&k| k) {
            return Err(Error::Empty("attention keys (all masked)"));
        }
    }
    let q = linear(tape, x_q, p.wq, p.bq);
    let k = linear(tape, x_kv, p.wk, p.bk);
    let v = linear(tape, x_kv, p.wv, p.bv);
    let dk = p.head_width();
    let mut heads = Vec::with_capacity(p.heads);
    for h in 0..p.heads {
        let cols = h * dk..(h + 1) * dk;
        let (qh, kh, vh) = if p.heads == 1 {
            (q, k, v)
        } else {
            (
                tape.slice_cols(q, cols.clone()),
                tape.slice_cols(k, cols.clone()),
                tape.slice_cols(v, cols),
            )
        };
        heads.push(attn_on(tape, qh, kh, vh, key_mask));
    }
    let joined = if heads.len() == 1 {
        heads[0]
    } else {
        tape.concat_cols(&heads)?
    };
    Ok(linear(tape, joined, p.wo, p.bo))
}

fn feed_forward(tape: &mut Tape, p: &LayerParams, x: Var) -> Var {
    let n = layer_norm(tape, x, p.norm2_gain, p.norm2_bias);
    let hidden = linear(tape, n, p.ff1_w, p.ff1_b);
    let act = tape.gelu(hidden);
    let out = linear(tape, act, p.ff2_w, p.ff2_b);
    tape.add(x, out)
}

fn layer_norm(tape: &mut Tape, x: Var, gain: ParamId, bias: ParamId) -> Var {
    let g = tape.param(gain);
    let b = tape.param(bias);
    tape.layer_norm(x, g, b)
}

/// Pre-norm self-attention block followed by the feed-forward block.
pub fn self_layer_on(tape: &mut Tape, p: &LayerParams, x: Var, mask: Option<&[bool]>) -> Result<Var> {
    let n = layer_norm(tape, x, p.norm1_gain, p.norm1_bias);
    let a = multi_head_on(tape, p, n, n, mask)?;
    let h = tape.add(x, a);
    Ok(feed_forward(tape, p, h))
}

/// Pre-norm cross-attention block: `x` queries the normalized `ctx`, then the
/// feed-forward block. With `ctx == x` this is exactly [`self_layer_on`].
pub fn cross_layer_on(tape: &mut Tape, p: &LayerParams, x: Var, ctx: Var, ctx_mask: Option<&[bool]>) -> Result<Var> {
    let nx = layer_norm(tape, x, p.norm1_gain, p.norm1_bias);
    let nc = layer_norm(tape, ctx, p.norm1_gain, p.norm1_bias);
    let a = multi_head_on(tape, p, nx, nc, ctx_mask)?;
    let h = tape.add(x, a);
    Ok(feed_forward(tape, p, h))
}

pub fn multi_head(
    store: &ParamStore,
    p: &LayerParams,
    x_q: &FeatureArray,
    x_kv: &FeatureArray,
) -> Result<FeatureArray> {
    let mut tape = Tape::with_store(store);
    let q = tape.constant(x_q.values.clone());
    let kv = tape.constant(x_kv.values.clone());
    let out = multi_head_on(&mut tape, p, q, kv, None)?;
    FeatureArray::new(tape.value(out).clone(), x_q.role)
}

pub fn self_layer(store: &ParamStore, p: &LayerParams, x: &FeatureArray) -> Result<FeatureArray> {
    let mut tape = Tape::with_store(store);
    let xv = tape.constant(x.values.clone());
    let out = self_layer_on(&mut tape, p, xv, None)?;
    FeatureArray::new(tape.value(out).clone(), x.role)
}

pub fn cross_layer(store: &ParamStore, p: &LayerParams, x: &FeatureArray, ctx: &FeatureArray) -> Result<FeatureArray> {
    let mut tape = Tape::with_store(store);
    let xv = tape.constant(x.values.clone());
    let cv = tape.constant(ctx.values.clone());
    let out = cross_layer_on(&mut tape, p, xv, cv, None)?;
    FeatureArray::new(tape.value(out).clone(), x.role)
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    /// Denominator floor of the relative error, so near-zero gradients are
    /// compared absolutely.
    pub floor: f64,
    /// Check at most this many evenly strided entries per tensor.
    pub max_entries_per_param: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            epsilon: 1e-4,
            floor: 1e-5,
            max_entries_per_param: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Compares analytic gradients from `loss_fn` against central differences
/// of its loss, over every parameter entry in `params`.
///
/// The relative error of one entry is `|a - n| / max(|n|, floor)`.
pub fn grad_check<F>(loss_fn: F, params: &ParamStore, options: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore) -> Result<(f64, ParamGrads)>,
{
    if !(options.epsilon > 0.0) {
        return Err(Error::Config("grad_check epsilon must be positive".into()));
    }
    let (base, analytic) = loss_fn(params)?;
    crate::autograd::check_finite(base, 0)?;
    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let ids: Vec<ParamId> = params.ids().collect();
    for id in ids {
        let len = params.value(id).len();
        let stride = match options.max_entries_per_param {
            Some(m) if m > 0 && len > m => len.div_ceil(m),
            _ => 1,
        };
        for idx in (0..len).step_by(stride) {
            let original = params.value(id).as_slice().expect("standard layout")[idx];
            let mut eval = |x: f64| -> Result<f64> {
                work.value_mut(id).as_slice_mut().expect("standard layout")[idx] = x;
                let (l, _) = loss_fn(&work)?;
                crate::autograd::check_finite(l, 0)
            };
            let plus = eval(original + options.epsilon)?;
            let minus = eval(original - options.epsilon)?;
            work.value_mut(id).as_slice_mut().expect("standard layout")[idx] = original;
            let numeric = (plus - minus) / (2.0 * options.epsilon);
            let a = analytic
                .get(id)
                .map_or(0.0, |g| g.as_slice().expect("standard layout")[idx]);
            let err = (a - numeric).abs() / numeric.abs().max(options.floor);
            report.checked += 1;
            if err > report.max_relative_error || report.worst_param.is_empty() {
                report.max_relative_error = err;
                report.worst_param = params.get(id).name.clone();
                report.worst_index = idx;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::standard_normal;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Axis};
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random(rows: usize, cols: usize, seed: u64) -> FeatureArray {
        let mut r = rng(seed);
        FeatureArray::new(
            Array2::from_shape_simple_fn((rows, cols), || standard_normal(&mut r)),
            FeatureRole::TextToken,
        )
        .unwrap()
    }

    fn permute_rows(a: &Array2<f64>, perm: &[usize]) -> Array2<f64> {
        a.select(Axis(0), perm)
    }

    #[test]
    fn single_key_returns_its_value() {
        let q = random(3, 4, 1);
        let k = random(1, 4, 2);
        let v = random(1, 5, 3);
        let out = attn(&q, &k, &v).unwrap();
        for row in out.values.outer_iter() {
            assert_eq!(row, v.values.row(0));
        }
    }

    #[test]
    fn zero_queries_average_values() {
        let q = FeatureArray::new(Array2::zeros((2, 3)), FeatureRole::TextToken).unwrap();
        let k = random(4, 3, 5);
        let v = random(4, 2, 6);
        let out = attn(&q, &k, &v).unwrap();
        let mean = v.values.mean_axis(Axis(0)).unwrap();
        for row in out.values.outer_iter() {
            for (a, b) in row.iter().zip(mean.iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn two_by_two_hand_computed() {
        let q = FeatureArray::new(array![[1.0, 0.0], [0.0, 2.0]], FeatureRole::TextToken).unwrap();
        let k = FeatureArray::new(array![[1.0, 1.0], [0.0, -1.0]], FeatureRole::TextToken).unwrap();
        let v = FeatureArray::new(array![[1.0, 0.0], [0.0, 1.0]], FeatureRole::TextToken).unwrap();
        let out = attn(&q, &k, &v).unwrap();
        let s = 2f64.sqrt();
        // row 0 logits (1, 0) / sqrt 2, row 1 logits (2, -2) / sqrt 2
        let w0 = (1.0 / s).exp() / ((1.0 / s).exp() + 1.0);
        let w1 = (2.0 / s).exp() / ((2.0 / s).exp() + (-2.0 / s).exp());
        assert_abs_diff_eq!(out.values[[0, 0]], w0, epsilon = 1e-15);
        assert_abs_diff_eq!(out.values[[0, 1]], 1.0 - w0, epsilon = 1e-15);
        assert_abs_diff_eq!(out.values[[1, 0]], w1, epsilon = 1e-15);
        assert_abs_diff_eq!(out.values[[1, 1]], 1.0 - w1, epsilon = 1e-15);
    }

    #[test]
    fn attn_shape_errors() {
        assert!(attn(&random(2, 3, 1), &random(3, 3, 2), &random(2, 3, 3)).is_err());
        assert!(attn(&random(2, 4, 1), &random(3, 3, 2), &random(3, 3, 3)).is_err());
    }

    #[test]
    fn identity_single_head_reduces_to_attn() {
        let mut store = ParamStore::new();
        let p = LayerParams::new(&mut store, "l", 4, 1, 8, ParamGroup::Head, &mut rng(0)).unwrap();
        for id in [p.wq, p.wk, p.wv, p.wo] {
            *store.value_mut(id) = Array2::eye(4);
        }
        let xq = random(3, 4, 11);
        let xkv = random(5, 4, 12);
        let via_layer = multi_head(&store, &p, &xq, &xkv).unwrap();
        let direct = attn(&xq, &xkv, &xkv).unwrap();
        for (a, b) in via_layer.values.iter().zip(direct.values.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-13);
        }
    }

    #[test]
    fn indivisible_heads_rejected() {
        let mut store = ParamStore::new();
        assert!(matches!(
            LayerParams::new(&mut store, "l", 6, 4, 8, ParamGroup::Head, &mut rng(0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn self_layer_is_permutation_equivariant() {
        let mut store = ParamStore::new();
        let p = LayerParams::new(&mut store, "l", 8, 2, 16, ParamGroup::Head, &mut rng(4)).unwrap();
        let x = random(5, 8, 21);
        let perm = [3, 0, 4, 1, 2];
        let out = self_layer(&store, &p, &x).unwrap();
        let xp = FeatureArray::new(permute_rows(&x.values, &perm), x.role).unwrap();
        let outp = self_layer(&store, &p, &xp).unwrap();
        let expected = permute_rows(&out.values, &perm);
        for (a, b) in outp.values.iter().zip(expected.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn cross_layer_ctx_invariance_and_self_equivalence() {
        let mut store = ParamStore::new();
        let p = LayerParams::new(&mut store, "l", 8, 4, 16, ParamGroup::Head, &mut rng(5)).unwrap();
        let x = random(3, 8, 31);
        let ctx = random(6, 8, 32);
        let base = cross_layer(&store, &p, &x, &ctx).unwrap();
        let ctxp = FeatureArray::new(permute_rows(&ctx.values, &[5, 2, 0, 1, 4, 3]), ctx.role).unwrap();
        let permuted = cross_layer(&store, &p, &x, &ctxp).unwrap();
        for (a, b) in base.values.iter().zip(permuted.values.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        let as_cross = cross_layer(&store, &p, &x, &x).unwrap();
        let as_self = self_layer(&store, &p, &x).unwrap();
        assert_eq!(as_cross.values, as_self.values);
    }

    #[test]
    fn zero_feed_forward_leaves_residual_attention() {
        let mut store = ParamStore::new();
        let p = LayerParams::new(&mut store, "l", 4, 2, 8, ParamGroup::Head, &mut rng(6)).unwrap();
        for id in p.feed_forward_ids() {
            store.value_mut(id).fill(0.0);
        }
        let x = random(3, 4, 41);
        let out = self_layer(&store, &p, &x).unwrap();
        let mut tape = Tape::with_store(&store);
        let xv = tape.constant(x.values.clone());
        let n = layer_norm(&mut tape, xv, p.norm1_gain, p.norm1_bias);
        let a = multi_head_on(&mut tape, &p, n, n, None).unwrap();
        let expected = &x.values + tape.value(a);
        for (a, b) in out.values.iter().zip(expected.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn masked_keys_are_ignored() {
        let mut store = ParamStore::new();
        let p = LayerParams::new(&mut store, "l", 4, 2, 8, ParamGroup::Head, &mut rng(7)).unwrap();
        let x = random(4, 4, 51);
        let run = |values: Array2<f64>| {
            let mut tape = Tape::with_store(&store);
            let v = tape.constant(values);
            let out = self_layer_on(&mut tape, &p, v, Some(&[true, true, false, true])).unwrap();
            tape.value(out).clone()
        };
        let base = run(x.values.clone());
        let mut changed = x.values.clone();
        changed.row_mut(2).fill(7.5);
        let other = run(changed);
        for r in [0, 1, 3] {
            for (a, b) in base.row(r).iter().zip(other.row(r).iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-14);
            }
        }
    }

    fn quadratic_setup() -> (ParamStore, ParamId) {
        let mut store = ParamStore::new();
        let w = store.add("w", (3, 2), Init::Normal(1.0), ParamGroup::Head, &mut rng(8));
        (store, w)
    }

    fn quadratic_loss(store: &ParamStore, w: ParamId) -> Result<(f64, ParamGrads)> {
        let mut tape = Tape::with_store(store);
        let wv = tape.param(w);
        let x = tape.constant(array![[1.0, -2.0, 0.5]]);
        let y = tape.matmul(x, wv);
        let yv = tape.value(y).clone();
        let value = yv.iter().map(|v| v * v).sum::<f64>();
        let l = tape.loss(y, value, yv * 2.0)?;
        let grads = tape.backward(l)?;
        Ok((tape.scalar(l), grads))
    }

    #[test]
    fn grad_check_quadratic_is_tight() {
        let (store, w) = quadratic_setup();
        let report = grad_check(|s| quadratic_loss(s, w), &store, GradCheckOptions::default()).unwrap();
        assert_eq!(report.checked, 6);
        assert!(report.max_relative_error < 1e-8, "{report:?}");
    }

    #[test]
    fn grad_check_detects_planted_fault() {
        let (store, w) = quadratic_setup();
        let report = grad_check(
            |s| {
                let (l, mut g) = quadratic_loss(s, w)?;
                g.scale(2.0);
                Ok((l, g))
            },
            &store,
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!((report.max_relative_error - 1.0).abs() < 1e-6, "{report:?}");
    }

    #[test]
    fn grad_check_rejects_non_finite_loss() {
        let (store, _) = quadratic_setup();
        let res = grad_check(
            |s| Ok((f64::NAN, ParamGrads::zeros_like(s))),
            &store,
            GradCheckOptions::default(),
        );
        assert!(matches!(res, Err(Error::NonFiniteLoss { .. })));
    }

    #[test]
    fn attention_layers_pass_grad_check_under_box_loss() {
        use crate::geometry::{grounding_loss_with_grad, CenterBox};
        let mut store = ParamStore::new();
        let mut r = rng(12);
        let self_p = LayerParams::new(&mut store, "self", 8, 2, 16, ParamGroup::Head, &mut r).unwrap();
        let cross_p = LayerParams::new(&mut store, "cross", 8, 2, 16, ParamGroup::Head, &mut r).unwrap();
        let head = store.add("head", (8, 4), Init::FanIn, ParamGroup::Head, &mut r);
        let x = random(4, 8, 61).values;
        let ctx = random(3, 8, 62).values;
        let gt = CenterBox::new(0.4, 0.6, 0.3, 0.2);
        let loss = |s: &ParamStore| -> Result<(f64, ParamGrads)> {
            let mut tape = Tape::with_store(s);
            let xv = tape.constant(x.clone());
            let cv = tape.constant(ctx.clone());
            let h = self_layer_on(&mut tape, &self_p, xv, None)?;
            let h = cross_layer_on(&mut tape, &cross_p, h, cv, Some(&[true, false, true]))?;
            let first = tape.slice_rows(h, 0..1);
            let hw = tape.param(head);
            let raw = tape.matmul(first, hw);
            let b = tape.sigmoid(raw);
            let v = tape.value(b);
            let pred = CenterBox::new(v[[0, 0]], v[[0, 1]], v[[0, 2]], v[[0, 3]]);
            let (value, g) = grounding_loss_with_grad(pred, gt, 1.0)?;
            let grad = Array2::from_shape_vec((1, 4), g.to_vec()).unwrap();
            let l = tape.loss(b, value, grad)?;
            Ok((value, tape.backward(l)?))
        };
        let report = grad_check(loss, &store, GradCheckOptions::default()).unwrap();
        assert!(report.max_relative_error < 1e-3, "{report:?}");
    }
}
