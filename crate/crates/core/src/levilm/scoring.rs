use std::ops::Range;

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::sigmoid;
use crate::error::{shape_err, Error, Result};
use crate::geometry::{iou, BBox};

/// Prediction selection over thresholded region scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    /// Highest score.
    H,
    /// Uniform draw among candidates.
    R,
    /// The candidate matching the ground truth, if any.
    U,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::H, Strategy::R, Strategy::U];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::H => "H",
            Strategy::R => "R",
            Strategy::U => "U",
        }
    }
}

/// Candidate threshold on the head-entity probability.
pub const CANDIDATE_PROB: f64 = 0.5;

/// Mean of each token span of `z_p`; row 0 is the head entity.
pub fn entity_features(z_p: &Array2<f64>, spans: &[Range<usize>]) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((spans.len(), z_p.ncols()));
    for (i, s) in spans.iter().enumerate() {
        if s.is_empty() {
            return Err(Error::Empty("entity span"));
        }
        if s.end > z_p.nrows() {
            return Err(shape_err(
                "entity_features",
                format!("span {s:?} beyond {} tokens", z_p.nrows()),
            ));
        }
        let mean = z_p
            .slice(ndarray::s![s.clone(), ..])
            .mean_axis(Axis(0))
            .expect("non-empty");
        out.row_mut(i).assign(&mean);
    }
    Ok(out)
}

/// `Z_I Z_E^T`, an `N x (E + 1)` logit matrix.
pub fn alignment_scores(z_i: &Array2<f64>, z_e: &Array2<f64>) -> Result<Array2<f64>> {
    if z_i.ncols() != z_e.ncols() {
        return Err(shape_err(
            "alignment_scores",
            format!("region width {} vs entity width {}", z_i.ncols(), z_e.ncols()),
        ));
    }
    Ok(z_i.dot(&z_e.t()))
}

/// Mean binary cross-entropy with logits and its gradient.
pub fn matching_loss_with_grad(scores: &Array2<f64>, targets: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    if scores.dim() != targets.dim() {
        return Err(shape_err(
            "matching_loss",
            format!("scores {:?} vs targets {:?}", scores.dim(), targets.dim()),
        ));
    }
    if scores.is_empty() {
        return Err(Error::Empty("score matrix"));
    }
    let n = scores.len() as f64;
    let mut loss = 0.0;
    let mut grad = Array2::zeros(scores.dim());
    ndarray::Zip::from(&mut grad)
        .and(scores)
        .and(targets)
        .for_each(|g, &x, &t| {
            loss += x.max(0.0) - x * t + (-x.abs()).exp().ln_1p();
            *g = (sigmoid(x) - t) / n;
        });
    Ok((loss / n, grad))
}

pub fn matching_loss(scores: &Array2<f64>, targets: &Array2<f64>) -> Result<f64> {
    matching_loss_with_grad(scores, targets).map(|(l, _)| l)
}

/// Index of the selected region, or `None` when no region's head-entity
/// probability exceeds [`CANDIDATE_PROB`] (or, for U, none matches `gt`).
pub fn select_prediction(
    regions: &[BBox],
    head_probs: &[f64],
    strategy: Strategy,
    gt: Option<&BBox>,
    rng: &mut ChaCha8Rng,
) -> Result<Option<usize>> {
    if regions.len() != head_probs.len() {
        return Err(shape_err(
            "select_prediction",
            format!("{} regions vs {} scores", regions.len(), head_probs.len()),
        ));
    }
    if strategy == Strategy::U && gt.is_none() {
        return Err(Error::MissingGroundTruth);
    }
    let candidates: Vec<usize> = (0..regions.len()).filter(|&i| head_probs[i] > CANDIDATE_PROB).collect();
    if candidates.is_empty() {
        return Ok(None);
    }
    Ok(match strategy {
        Strategy::H => {
            let mut best = candidates[0];
            for &i in &candidates[1..] {
                if head_probs[i] > head_probs[best] {
                    best = i;
                }
            }
            Some(best)
        }
        Strategy::R => Some(candidates[rng.gen_range(0..candidates.len())]),
        Strategy::U => {
            let gt = gt.expect("checked above");
            let mut best: Option<(usize, f64)> = None;
            for &i in &candidates {
                let v = iou(&regions[i], gt);
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((i, v));
                }
            }
            best.filter(|&(_, v)| v >= 0.5).map(|(i, _)| i)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::SeedableRng;

    #[test]
    fn entity_rows() {
        let z = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let e = entity_features(&z, &[1..2, 0..2, 0..2]).unwrap();
        assert_eq!(e.row(0).to_vec(), [3.0, 4.0]);
        assert_eq!(e.row(1), e.row(2));
        assert_eq!(e.row(1).to_vec(), [2.0, 3.0]);
        assert_eq!(entity_features(&z, &[0..1]).unwrap().nrows(), 1);
        assert!(entity_features(&z, &[1..1]).is_err());
        assert!(entity_features(&z, &[2..4]).is_err());
    }

    #[test]
    fn scores_are_dot_products() {
        let zi = array![[1.0, 2.0, 0.5], [-1.0, 0.0, 3.0], [0.0, 1.0, 1.0]];
        let ze = array![[0.0, 1.0, 0.0], [2.0, -1.0, 1.0]];
        let s = alignment_scores(&zi, &ze).unwrap();
        assert_eq!(s.dim(), (3, 2));
        assert_eq!(s.column(0).to_vec(), [2.0, 0.0, 1.0]);
        assert_eq!(s.column(1).to_vec(), [0.5, 1.0, 0.0]);
        let orth = alignment_scores(&array![[1.0, 0.0]], &array![[0.0, 1.0]]).unwrap();
        assert_eq!(sigmoid(orth[[0, 0]]), 0.5);
        assert!(alignment_scores(&zi, &array![[1.0, 0.0]]).is_err());
    }

    #[test]
    fn bce_values() {
        let zero = Array2::zeros((2, 3));
        let t = array![[1.0, 0.0, 1.0], [0.0, 0.0, 1.0]];
        assert_abs_diff_eq!(matching_loss(&zero, &t).unwrap(), 2f64.ln(), epsilon = 1e-15);
        let saturated = t.mapv(|v| if v > 0.5 { 20.0 } else { -20.0 });
        assert!(matching_loss(&saturated, &t).unwrap() < 1e-8);
        // hand arithmetic: -ln s(1) - ln(1 - s(-2)) - ln(1 - s(0.5)) - ln s(3), over 4
        let x = array![[1.0, -2.0], [0.5, 3.0]];
        let t = array![[1.0, 0.0], [0.0, 1.0]];
        let expected =
            (0.313_261_687_518_222_8 + 0.126_928_011_042_972_6 + 0.974_076_984_180_107_3 + 0.048_587_351_573_742_0)
                / 4.0;
        assert_abs_diff_eq!(matching_loss(&x, &t).unwrap(), expected, epsilon = 1e-12);
        assert!(matching_loss(&x, &zero).is_err());
    }

    #[test]
    fn bce_gradient_matches_differences() {
        let x = array![[0.3, -1.2], [2.0, 0.1]];
        let t = array![[1.0, 0.0], [1.0, 1.0]];
        let (_, g) = matching_loss_with_grad(&x, &t).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let mut p = x.clone();
                p[[i, j]] += 1e-6;
                let mut m = x.clone();
                m[[i, j]] -= 1e-6;
                let num = (matching_loss(&p, &t).unwrap() - matching_loss(&m, &t).unwrap()) / 2e-6;
                assert_abs_diff_eq!(g[[i, j]], num, epsilon = 1e-8);
            }
        }
    }

    fn boxes() -> Vec<BBox> {
        vec![
            BBox::new(0.0, 0.0, 10.0, 10.0).unwrap(),
            BBox::new(20.0, 0.0, 30.0, 10.0).unwrap(),
            BBox::new(40.0, 0.0, 50.0, 10.0).unwrap(),
        ]
    }

    #[test]
    fn strategies() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = boxes();
        let p = [0.9, 0.6, 0.3];
        assert_eq!(select_prediction(&r, &p, Strategy::H, None, &mut rng).unwrap(), Some(0));
        let mut seen = [0; 3];
        for _ in 0..200 {
            seen[select_prediction(&r, &p, Strategy::R, None, &mut rng).unwrap().unwrap()] += 1;
        }
        assert!(seen[0] > 60 && seen[1] > 60 && seen[2] == 0);
        assert!(select_prediction(&r, &p, Strategy::U, None, &mut rng).is_err());

        let gt = r[1];
        let p = [0.9, 0.55, 0.1];
        assert_eq!(
            select_prediction(&r, &p, Strategy::U, Some(&gt), &mut rng).unwrap(),
            Some(1)
        );
        assert_eq!(
            select_prediction(&r, &p, Strategy::H, Some(&gt), &mut rng).unwrap(),
            Some(0)
        );

        let low = [0.5, 0.2, 0.5];
        for s in Strategy::ALL {
            assert_eq!(select_prediction(&r, &low, s, Some(&gt), &mut rng).unwrap(), None);
        }
        let far = BBox::new(100.0, 100.0, 110.0, 110.0).unwrap();
        assert_eq!(
            select_prediction(&r, &[0.9; 3], Strategy::U, Some(&far), &mut rng).unwrap(),
            None
        );
    }
}
