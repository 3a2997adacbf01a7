use ndarray::Array2;

use crate::encoders::PatchGrid;
use crate::error::Result;
use crate::geometry::{iou, BBox, ImageSize};

/// Positive-matching IoU threshold for anchors.
pub const MATCH_IOU: f64 = 0.5;

/// One anchor per patch cell per scale, scale-major then row-major, each
/// centered on its cell and clipped to the image.
pub fn anchors(grid: PatchGrid, scales: &[f64]) -> Result<Vec<BBox>> {
    let size = grid.image_size as f64;
    let image = ImageSize {
        width: size as u32,
        height: size as u32,
    };
    let cell = grid.patch_size as f64;
    let mut out = Vec::with_capacity(scales.len() * grid.num_patches());
    for &s in scales {
        let half = s * cell / 2.0;
        for r in 0..grid.side() {
            for c in 0..grid.side() {
                let (cx, cy) = ((c as f64 + 0.5) * cell, (r as f64 + 0.5) * cell);
                out.push(BBox::new(cx - half, cy - half, cx + half, cy + half)?.clip(image)?);
            }
        }
    }
    Ok(out)
}

/// `N x (E + 1)` targets: a row is all ones when its anchor overlaps `gt`
/// with IoU of at least [`MATCH_IOU`]. If no anchor qualifies, the best one
/// (lowest index on ties) is forced positive.
pub fn build_target(anchors: &[BBox], gt: &BBox, mentions: usize) -> Array2<f64> {
    let ious: Vec<f64> = anchors.iter().map(|a| iou(a, gt)).collect();
    let mut target = Array2::zeros((anchors.len(), mentions + 1));
    let mut any = false;
    for (n, &v) in ious.iter().enumerate() {
        if v >= MATCH_IOU {
            target.row_mut(n).fill(1.0);
            any = true;
        }
    }
    if !any && !anchors.is_empty() {
        let mut best = 0;
        for (n, &v) in ious.iter().enumerate() {
            if v > ious[best] {
                best = n;
            }
        }
        target.row_mut(best).fill(1.0);
    }
    target
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ImageSize;

    #[test]
    fn grid_tiles_the_image() {
        let grid = PatchGrid::new(64, 16).unwrap();
        let a = anchors(grid, &[1.0]).unwrap();
        assert_eq!(a.len(), 16);
        let total: f64 = a.iter().map(BBox::area).sum();
        assert_eq!(total, 64.0 * 64.0);
        assert_eq!(a[5].to_array(), [16.0, 16.0, 32.0, 32.0]);
        let two = anchors(grid, &[1.0, 2.0]).unwrap();
        assert_eq!(two.len(), 32);
        let image = ImageSize { width: 64, height: 64 };
        assert!(two.iter().all(|b| b.within(image)));
        assert_eq!(two[16].to_array(), [0.0, 0.0, 24.0, 24.0]);
    }

    #[test]
    fn targets_follow_iou() {
        let anchors = vec![
            BBox::new(0.0, 0.0, 10.0, 10.0).unwrap(),
            BBox::new(0.0, 0.0, 10.0, 6.0).unwrap(),
            BBox::new(20.0, 20.0, 30.0, 30.0).unwrap(),
        ];
        let gt = BBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        let t = build_target(&anchors, &gt, 2);
        assert_eq!(t.dim(), (3, 3));
        assert_eq!(t.row(0).to_vec(), [1.0; 3]);
        assert_eq!(t.row(1).to_vec(), [1.0; 3]);
        assert_eq!(t.row(2).to_vec(), [0.0; 3]);
        let far = BBox::new(40.0, 40.0, 50.0, 50.0).unwrap();
        let forced = build_target(&anchors, &far, 0);
        assert_eq!(forced.column(0).to_vec(), [1.0, 0.0, 0.0]);
    }
}
