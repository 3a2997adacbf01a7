//! Axis-aligned boxes, overlap measures and the box regression loss.
//!
//! External boxes use the corner convention `(x1, y1, x2, y2)` in pixels.
//! Regression heads work on normalized center-size boxes, see [`CenterBox`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default transition point of the smooth L1 loss.
pub const SMOOTH_L1_BETA: f64 = 1.0;

/// Area below which an object is small (64 x 64 pixels).
pub const SMALL_AREA_LIMIT: f64 = 64.0 * 64.0;
/// Area below which an object is medium (128 x 128 pixels).
pub const MEDIUM_AREA_LIMIT: f64 = 128.0 * 128.0;

/// Corner-form box. Always has strictly positive, finite width and height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

/// Center-size form `(cx, cy, w, h)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CenterBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageSize {
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AreaBin {
    Small,
    Medium,
    Large,
}

impl AreaBin {
    pub const ALL: [AreaBin; 3] = [AreaBin::Small, AreaBin::Medium, AreaBin::Large];

    pub fn name(self) -> &'static str {
        match self {
            AreaBin::Small => "small",
            AreaBin::Medium => "medium",
            AreaBin::Large => "large",
        }
    }
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let finite = [x1, y1, x2, y2].iter().all(|v| v.is_finite());
        if !finite || x2 <= x1 || y2 <= y1 {
            return Err(Error::DegenerateBox { x1, y1, x2, y2 });
        }
        Ok(BBox { x1, y1, x2, y2 })
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }
    pub fn y1(&self) -> f64 {
        self.y1
    }
    pub fn x2(&self) -> f64 {
        self.x2
    }
    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn to_center(self) -> CenterBox {
        CenterBox {
            cx: (self.x1 + self.x2) / 2.0,
            cy: (self.y1 + self.y2) / 2.0,
            w: self.width(),
            h: self.height(),
        }
    }

    /// Scale into `[0, 1]` coordinates of `size`.
    pub fn normalize(self, size: ImageSize) -> Result<BBox> {
        let (w, h) = (size.width as f64, size.height as f64);
        BBox::new(self.x1 / w, self.y1 / h, self.x2 / w, self.y2 / h)
    }

    pub fn denormalize(self, size: ImageSize) -> Result<BBox> {
        let (w, h) = (size.width as f64, size.height as f64);
        BBox::new(self.x1 * w, self.y1 * h, self.x2 * w, self.y2 * h)
    }

    /// Intersect with the image rectangle.
    pub fn clip(self, size: ImageSize) -> Result<BBox> {
        let (w, h) = (size.width as f64, size.height as f64);
        BBox::new(
            self.x1.clamp(0.0, w),
            self.y1.clamp(0.0, h),
            self.x2.clamp(0.0, w),
            self.y2.clamp(0.0, h),
        )
    }

    pub fn within(&self, size: ImageSize) -> bool {
        self.x1 >= 0.0 && self.y1 >= 0.0 && self.x2 <= size.width as f64 && self.y2 <= size.height as f64
    }

    pub fn intersects(&self, other: &BBox) -> bool {
        self.x1 < other.x2 && other.x1 < self.x2 && self.y1 < other.y2 && other.y1 < self.y2
    }

    pub fn translate(self, dx: f64, dy: f64) -> Result<BBox> {
        BBox::new(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)
    }

    pub fn scale(self, factor: f64) -> Result<BBox> {
        BBox::new(self.x1 * factor, self.y1 * factor, self.x2 * factor, self.y2 * factor)
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.to_array()
    }
}

impl CenterBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        CenterBox { cx, cy, w, h }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }

    pub fn to_corner(self) -> Result<BBox> {
        let (hw, hh) = (self.w / 2.0, self.h / 2.0);
        BBox::new(self.cx - hw, self.cy - hh, self.cx + hw, self.cy + hh)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoxMode {
    Corner,
    CenterSize,
}

/// Reinterpret four coordinates given in `from` mode as the other mode.
pub fn convert_box(coords: [f64; 4], from: BoxMode) -> Result<[f64; 4]> {
    match from {
        BoxMode::Corner => Ok(BBox::try_from(coords)?.to_center().to_array()),
        BoxMode::CenterSize => {
            let [cx, cy, w, h] = coords;
            if !(w > 0.0 && h > 0.0) {
                return Err(Error::DegenerateBox {
                    x1: cx - w / 2.0,
                    y1: cy - h / 2.0,
                    x2: cx + w / 2.0,
                    y2: cy + h / 2.0,
                });
            }
            Ok(CenterBox::new(cx, cy, w, h).to_corner()?.to_array())
        }
    }
}

fn intersection(a: &BBox, b: &BBox) -> f64 {
    let w = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let h = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    w * h
}

fn enclosing_area(a: &BBox, b: &BBox) -> f64 {
    (a.x2.max(b.x2) - a.x1.min(b.x1)) * (a.y2.max(b.y2) - a.y1.min(b.y1))
}

/// Intersection over union. Both boxes are valid by construction.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = intersection(a, b);
    inter / (a.area() + b.area() - inter)
}

/// Generalized IoU: `iou - (C - U) / C` with `C` the enclosing box area.
pub fn giou(a: &BBox, b: &BBox) -> f64 {
    let inter = intersection(a, b);
    let union = a.area() + b.area() - inter;
    let enclosing = enclosing_area(a, b);
    inter / union - (enclosing - union) / enclosing
}

/// Mean smooth L1 over elements.
pub fn smooth_l1(pred: &[f64], target: &[f64], beta: f64) -> Result<f64> {
    Ok(smooth_l1_with_grad(pred, target, beta)?.0)
}

pub(crate) fn smooth_l1_with_grad(pred: &[f64], target: &[f64], beta: f64) -> Result<(f64, Vec<f64>)> {
    if pred.len() != target.len() {
        return Err(crate::error::shape_err(
            "smooth_l1",
            format!("{} predictions vs {} targets", pred.len(), target.len()),
        ));
    }
    if pred.is_empty() {
        return Err(Error::Empty("smooth_l1 input"));
    }
    if !(beta > 0.0) {
        return Err(Error::Config(format!("smooth_l1 beta must be positive, got {beta}")));
    }
    let n = pred.len() as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (p, t) in pred.iter().zip(target) {
        let d = p - t;
        if d.abs() < beta {
            total += 0.5 * d * d / beta;
            grad.push(d / beta / n);
        } else {
            total += d.abs() - 0.5 * beta;
            grad.push(d.signum() / n);
        }
    }
    Ok((total / n, grad))
}

/// Box regression loss: smooth L1 on the center-size 4-vector plus `1 - giou`,
/// weighted equally.
pub fn grounding_loss(pred: CenterBox, gt: CenterBox) -> Result<f64> {
    Ok(grounding_loss_with_grad(pred, gt, SMOOTH_L1_BETA)?.0)
}

/// Loss value and its gradient with respect to `pred` as `(cx, cy, w, h)`.
pub fn grounding_loss_with_grad(pred: CenterBox, gt: CenterBox, beta: f64) -> Result<(f64, [f64; 4])> {
    let p = pred.to_corner()?;
    let g = gt.to_corner()?;
    let (l1, l1_grad) = smooth_l1_with_grad(&pred.to_array(), &gt.to_array(), beta)?;

    let iw = p.x2.min(g.x2) - p.x1.max(g.x1);
    let ih = p.y2.min(g.y2) - p.y1.max(g.y1);
    let (iw_pos, ih_pos) = (iw.max(0.0), ih.max(0.0));
    let inter = iw_pos * ih_pos;
    let area_p = p.area();
    let union = area_p + g.area() - inter;
    let ew = p.x2.max(g.x2) - p.x1.min(g.x1);
    let eh = p.y2.max(g.y2) - p.y1.min(g.y1);
    let enclosing = ew * eh;
    let giou_value = inter / union - 1.0 + union / enclosing;

    // partials of giou with respect to I, A_p and C
    let d_inter = 1.0 / union + inter / (union * union) - 1.0 / enclosing;
    let d_area = -inter / (union * union) + 1.0 / enclosing;
    let d_encl = -union / (enclosing * enclosing);

    // corner order x1, y1, x2, y2
    let mut d_inter_corner = [0.0; 4];
    if iw > 0.0 && ih > 0.0 {
        if p.x1 > g.x1 {
            d_inter_corner[0] = -ih_pos;
        }
        if p.x2 < g.x2 {
            d_inter_corner[2] = ih_pos;
        }
        if p.y1 > g.y1 {
            d_inter_corner[1] = -iw_pos;
        }
        if p.y2 < g.y2 {
            d_inter_corner[3] = iw_pos;
        }
    }
    let (pw, ph) = (p.width(), p.height());
    let d_area_corner = [-ph, -pw, ph, pw];
    let mut d_encl_corner = [0.0; 4];
    if p.x1 < g.x1 {
        d_encl_corner[0] = -eh;
    }
    if p.x2 > g.x2 {
        d_encl_corner[2] = eh;
    }
    if p.y1 < g.y1 {
        d_encl_corner[1] = -ew;
    }
    if p.y2 > g.y2 {
        d_encl_corner[3] = ew;
    }
    let mut d_giou_corner = [0.0; 4];
    for i in 0..4 {
        d_giou_corner[i] = d_inter * d_inter_corner[i] + d_area * d_area_corner[i] + d_encl * d_encl_corner[i];
    }
    // loss uses (1 - giou); corners depend on center-size linearly
    let dx1 = -d_giou_corner[0];
    let dy1 = -d_giou_corner[1];
    let dx2 = -d_giou_corner[2];
    let dy2 = -d_giou_corner[3];
    let grad = [
        l1_grad[0] + dx1 + dx2,
        l1_grad[1] + dy1 + dy2,
        l1_grad[2] + 0.5 * (dx2 - dx1),
        l1_grad[3] + 0.5 * (dy2 - dy1),
    ];
    Ok((l1 + 1.0 - giou_value, grad))
}

/// Size class of a pixel-space box; intervals are closed on the left.
pub fn area_bin(b: &BBox) -> AreaBin {
    let area = b.area();
    if area < SMALL_AREA_LIMIT {
        AreaBin::Small
    } else if area < MEDIUM_AREA_LIMIT {
        AreaBin::Medium
    } else {
        AreaBin::Large
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn converts_between_modes() {
        assert_eq!(
            convert_box([0.0, 0.0, 10.0, 10.0], BoxMode::Corner).unwrap(),
            [5.0, 5.0, 10.0, 10.0]
        );
        assert_eq!(
            convert_box([5.0, 5.0, 10.0, 10.0], BoxMode::CenterSize).unwrap(),
            [0.0, 0.0, 10.0, 10.0]
        );
        assert_eq!(
            convert_box([2.0, 4.0, 6.0, 14.0], BoxMode::Corner).unwrap(),
            [4.0, 9.0, 4.0, 10.0]
        );
        assert!(convert_box([1.0, 1.0, 0.0, 2.0], BoxMode::CenterSize).is_err());
        assert!(convert_box([3.0, 0.0, 3.0, 2.0], BoxMode::Corner).is_err());
    }

    #[test]
    fn rejects_degenerate_and_non_finite() {
        assert!(BBox::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(BBox::new(0.0, 0.0, 1.0, f64::NAN).is_err());
        assert!(BBox::new(0.0, 0.0, f64::INFINITY, 1.0).is_err());
    }

    #[test]
    fn iou_examples() {
        assert_eq!(iou(&b(0., 0., 10., 10.), &b(0., 0., 10., 10.)), 1.0);
        assert_eq!(iou(&b(0., 0., 1., 1.), &b(5., 5., 6., 6.)), 0.0);
        assert_abs_diff_eq!(iou(&b(0., 0., 2., 2.), &b(1., 1., 3., 3.)), 1.0 / 7.0, epsilon = 1e-15);
    }

    #[test]
    fn giou_examples() {
        assert_eq!(giou(&b(0., 0., 4., 3.), &b(0., 0., 4., 3.)), 1.0);
        assert_abs_diff_eq!(
            giou(&b(0., 0., 1., 1.), &b(2., 2., 3., 3.)),
            -7.0 / 9.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            giou(&b(0., 0., 2., 2.), &b(1., 1., 3., 3.)),
            1.0 / 7.0 - 2.0 / 9.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn smooth_l1_examples() {
        assert_eq!(smooth_l1(&[1.0, 2.0], &[1.0, 2.0], 1.0).unwrap(), 0.0);
        assert_eq!(smooth_l1(&[0.5], &[0.0], 1.0).unwrap(), 0.125);
        assert_eq!(smooth_l1(&[2.0], &[0.0], 1.0).unwrap(), 1.5);
        assert!(smooth_l1(&[1.0], &[1.0, 2.0], 1.0).is_err());
        assert!(smooth_l1(&[1.0], &[1.0], 0.0).is_err());
    }

    #[test]
    fn grounding_loss_zero_iff_equal() {
        let g = CenterBox::new(0.4, 0.5, 0.2, 0.3);
        assert_eq!(grounding_loss(g, g).unwrap(), 0.0);
        assert!(grounding_loss(CenterBox::new(0.41, 0.5, 0.2, 0.3), g).unwrap() > 0.0);
    }

    #[test]
    fn grounding_loss_composes_components() {
        let pred = b(0., 0., 1., 1.).to_center();
        let gt = b(2., 2., 3., 3.).to_center();
        let l1 = smooth_l1(&pred.to_array(), &gt.to_array(), 1.0).unwrap();
        // centers differ by 2 in x and y, sizes equal: (1.5 + 1.5 + 0 + 0) / 4
        assert_eq!(l1, 0.75);
        let expected = l1 + 1.0 + 7.0 / 9.0;
        assert_abs_diff_eq!(grounding_loss(pred, gt).unwrap(), expected, epsilon = 1e-14);
    }

    #[test]
    fn grounding_loss_decreases_along_translation() {
        let gt = CenterBox::new(0.7, 0.6, 0.2, 0.25);
        let start = CenterBox::new(0.1, 0.15, 0.2, 0.25);
        let mut last = f64::INFINITY;
        for step in 0..=100 {
            let t = step as f64 / 100.0;
            let p = CenterBox::new(
                start.cx + t * (gt.cx - start.cx),
                start.cy + t * (gt.cy - start.cy),
                gt.w,
                gt.h,
            );
            let l = grounding_loss(p, gt).unwrap();
            assert!(l < last || (l == 0.0 && last == 0.0), "step {step}: {l} >= {last}");
            last = l;
        }
        assert_eq!(last, 0.0);
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let gt = CenterBox::new(0.5, 0.45, 0.3, 0.2);
        let cases = [
            CenterBox::new(0.52, 0.41, 0.25, 0.27),
            CenterBox::new(0.1, 0.9, 0.1, 0.05),
            CenterBox::new(0.47, 0.5, 0.5, 0.4),
        ];
        let eps = 1e-6;
        for pred in cases {
            let (_, grad) = grounding_loss_with_grad(pred, gt, 1.0).unwrap();
            for i in 0..4 {
                let mut plus = pred.to_array();
                let mut minus = pred.to_array();
                plus[i] += eps;
                minus[i] -= eps;
                let f = |v: [f64; 4]| grounding_loss(CenterBox::new(v[0], v[1], v[2], v[3]), gt).unwrap();
                let numeric = (f(plus) - f(minus)) / (2.0 * eps);
                assert_abs_diff_eq!(grad[i], numeric, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn area_bins() {
        assert_eq!(area_bin(&b(0., 0., 50., 50.)), AreaBin::Small);
        assert_eq!(area_bin(&b(0., 0., 100., 100.)), AreaBin::Medium);
        assert_eq!(area_bin(&b(0., 0., 200., 200.)), AreaBin::Large);
        assert_eq!(area_bin(&b(0., 0., 4095., 1.)), AreaBin::Small);
        assert_eq!(area_bin(&b(0., 0., 4096., 1.)), AreaBin::Medium);
        assert_eq!(area_bin(&b(0., 0., 16383., 1.)), AreaBin::Medium);
        assert_eq!(area_bin(&b(0., 0., 16384., 1.)), AreaBin::Large);
    }

    #[test]
    fn clip_and_normalize() {
        let size = ImageSize { width: 100, height: 50 };
        let c = b(-10., 10., 60., 80.).clip(size).unwrap();
        assert_eq!(c.to_array(), [0., 10., 60., 50.]);
        assert!(c.within(size));
        let n = c.normalize(size).unwrap();
        assert_eq!(n.to_array(), [0., 0.2, 0.6, 1.0]);
        assert_eq!(n.denormalize(size).unwrap(), c);
    }

    #[test]
    fn serde_rejects_degenerate() {
        let ok: BBox = serde_json::from_str("[1, 2, 3, 4]").unwrap();
        assert_eq!(ok.to_array(), [1., 2., 3., 4.]);
        assert!(serde_json::from_str::<BBox>("[1, 2, 1, 4]").is_err());
    }
}
