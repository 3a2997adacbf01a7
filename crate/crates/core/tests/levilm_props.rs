use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use skvg::geometry::{iou, BBox};
use skvg::levilm::{build_prompt, build_target, matching_loss, select_prediction, Strategy as Pick};

fn boxes(n: usize) -> impl Strategy<Value = Vec<BBox>> {
    prop::collection::vec((0.0..50.0f64, 0.0..50.0f64, 1.0..30.0f64, 1.0..30.0f64), n).prop_map(|v| {
        v.into_iter()
            .map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h).unwrap())
            .collect()
    })
}

fn correct(regions: &[BBox], pick: Option<usize>, gt: &BBox) -> bool {
    pick.is_some_and(|i| iou(&regions[i], gt) >= 0.5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn upper_bound_dominates_per_sample(
        regions in boxes(12),
        probs in prop::collection::vec(0.0..1.0f64, 12),
        gt_index in 0..12usize,
        seed in any::<u64>(),
    ) {
        let gt = regions[gt_index];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = select_prediction(&regions, &probs, Pick::U, Some(&gt), &mut rng).unwrap();
        let h = select_prediction(&regions, &probs, Pick::H, Some(&gt), &mut rng).unwrap();
        let r = select_prediction(&regions, &probs, Pick::R, Some(&gt), &mut rng).unwrap();
        let cu = correct(&regions, u, &gt);
        prop_assert!(cu >= correct(&regions, h, &gt));
        prop_assert!(cu >= correct(&regions, r, &gt));
        for pick in [u, h, r].into_iter().flatten() {
            prop_assert!(probs[pick] > 0.5);
        }
    }

    #[test]
    fn random_choice_is_reproducible(probs in prop::collection::vec(0.0..1.0f64, 12), regions in boxes(12), seed in any::<u64>()) {
        let pick = |s| select_prediction(&regions, &probs, Pick::R, None, &mut ChaCha8Rng::seed_from_u64(s)).unwrap();
        prop_assert_eq!(pick(seed), pick(seed));
    }

    #[test]
    fn target_columns_are_identical(regions in boxes(10), gt_index in 0..10usize, mentions in 0..4usize) {
        let t = build_target(&regions, &regions[gt_index], mentions);
        prop_assert_eq!(t.ncols(), mentions + 1);
        for c in 1..t.ncols() {
            prop_assert_eq!(t.column(c), t.column(0));
        }
        prop_assert!(t.column(0).sum() >= 1.0);
    }

    #[test]
    fn matching_loss_is_non_negative(regions in boxes(6), logits in prop::collection::vec(-5.0..5.0f64, 12)) {
        let t = build_target(&regions, &regions[0], 1);
        let s = ndarray::Array2::from_shape_vec((6, 2), logits).unwrap();
        prop_assert!(matching_loss(&s, &t).unwrap() >= 0.0);
    }

    #[test]
    fn empty_knowledge_reproduces_query_prompt(q in "[a-z]{1,8}( [a-z]{1,8}){0,4}", blank in "[ ]{0,3}") {
        let plain = build_prompt(&q, None, 64).unwrap();
        prop_assert_eq!(&build_prompt(&q, Some(&blank), 64).unwrap(), &plain);
        let with = build_prompt(&q, Some("Mia is a doctor."), 64).unwrap();
        prop_assert!(with.len() > plain.len());
        prop_assert!(with.text.starts_with(&plain.text));
    }
}
