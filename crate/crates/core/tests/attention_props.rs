use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use skvg::attention::{attn, cross_layer, self_layer, FeatureArray, FeatureRole, LayerParams};
use skvg::autograd::{softmax_rows, ParamGroup, ParamStore};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-3.0..3.0f64, rows * cols).prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

fn features(values: Array2<f64>) -> FeatureArray {
    FeatureArray::new(values, FeatureRole::TextToken).unwrap()
}

fn layer(seed: u64) -> (ParamStore, LayerParams) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = LayerParams::new(&mut store, "l", 8, 2, 16, ParamGroup::Head, &mut rng).unwrap();
    (store, p)
}

fn permute(a: &Array2<f64>, order: &[usize]) -> Array2<f64> {
    Array2::from_shape_fn(a.dim(), |(i, j)| a[[order[i], j]])
}

fn close(a: &Array2<f64>, b: &Array2<f64>, tol: f64) -> bool {
    a.dim() == b.dim() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < tol)
}

fn order(n: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..n).collect::<Vec<_>>()).prop_shuffle()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_sum_to_one(a in matrix(4, 7)) {
        let s = softmax_rows(a.view(), None);
        for row in s.rows() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn outputs_lie_in_the_hull_of_values(q in matrix(3, 4), k in matrix(5, 4), v in matrix(5, 4), w in prop::array::uniform4(-1.0..1.0f64)) {
        let out = attn(&features(q), &features(k), &features(v.clone())).unwrap();
        let proj = |m: &Array2<f64>| m.rows().into_iter().map(|r| r.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()).collect::<Vec<_>>();
        let pv = proj(&v);
        let (lo, hi) = pv.iter().fold((f64::MAX, f64::MIN), |(l, h), &x| (l.min(x), h.max(x)));
        for x in proj(&out.values) {
            prop_assert!(x >= lo - 1e-9 && x <= hi + 1e-9);
        }
    }

    #[test]
    fn softmax_ignores_row_shifts(a in matrix(3, 6), shift in prop::collection::vec(-20.0..20.0f64, 3)) {
        let shifted = Array2::from_shape_fn(a.dim(), |(i, j)| a[[i, j]] + shift[i]);
        prop_assert!(close(&softmax_rows(a.view(), None), &softmax_rows(shifted.view(), None), 1e-12));
    }

    #[test]
    fn self_layer_is_permutation_equivariant(x in matrix(5, 8), perm in order(5), seed in 0..4u64) {
        let (store, p) = layer(seed);
        let a = self_layer(&store, &p, &features(x.clone())).unwrap();
        let b = self_layer(&store, &p, &features(permute(&x, &perm))).unwrap();
        prop_assert!(close(&permute(&a.values, &perm), &b.values, 1e-10));
    }

    #[test]
    fn cross_layer_ignores_context_order(x in matrix(3, 8), ctx in matrix(6, 8), px in order(3), pc in order(6), seed in 0..4u64) {
        let (store, p) = layer(seed);
        let a = cross_layer(&store, &p, &features(x.clone()), &features(ctx.clone())).unwrap();
        let b = cross_layer(&store, &p, &features(x.clone()), &features(permute(&ctx, &pc))).unwrap();
        prop_assert!(close(&a.values, &b.values, 1e-10));
        let c = cross_layer(&store, &p, &features(permute(&x, &px)), &features(ctx)).unwrap();
        prop_assert!(close(&permute(&a.values, &px), &c.values, 1e-10));
    }
}
