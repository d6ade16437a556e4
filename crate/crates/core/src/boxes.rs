//! Axis-aligned box geometry: IoU, the GIoU and CIoU regression losses (with the
//! analytic CIoU gradient), and greedy / score-weighted non-maximum suppression.
//!
//! Boxes are stored in center form `(x, y, w, h)`; corner form is derived.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        if !(w > 0.0 && h > 0.0) || ![x, y, w, h].iter().all(|v| v.is_finite()) {
            return Err(Error::invalid(format!(
                "box ({x}, {y}, {w}, {h}) must be finite with positive width and height"
            )));
        }
        Ok(BBox { x, y, w, h })
    }

    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        Self::new((x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0)
    }

    /// `[x_min, y_min, x_max, y_max]`
    pub fn corners(&self) -> [f64; 4] {
        let (hw, hh) = (self.w / 2.0, self.h / 2.0);
        [self.x - hw, self.y - hh, self.x + hw, self.y + hh]
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn params(&self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }

    pub fn from_params(p: &[f64]) -> Result<Self> {
        Self::new(p[0], p[1], p[2], p[3])
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        BBox { x: self.x + dx, y: self.y + dy, ..*self }
    }

    pub fn scaled(&self, s: f64) -> Self {
        BBox { x: self.x * s, y: self.y * s, w: self.w * s, h: self.h * s }
    }

    /// Mirror across the diagonal: `(x, y, w, h) -> (y, x, h, w)`.
    pub fn transposed(&self) -> Self {
        BBox { x: self.y, y: self.x, w: self.h, h: self.w }
    }
}

/// Area measured from corner form so that a box intersected with itself
/// reproduces its own area bit for bit.
fn corner_area(b: &BBox) -> f64 {
    let [x0, y0, x1, y1] = b.corners();
    (x1 - x0) * (y1 - y0)
}

fn intersection(a: &BBox, b: &BBox) -> f64 {
    let [ax0, ay0, ax1, ay1] = a.corners();
    let [bx0, by0, bx1, by1] = b.corners();
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    iw * ih
}

fn enclosing(a: &BBox, b: &BBox) -> (f64, f64) {
    let [ax0, ay0, ax1, ay1] = a.corners();
    let [bx0, by0, bx1, by1] = b.corners();
    (ax1.max(bx1) - ax0.min(bx0), ay1.max(by1) - ay0.min(by0))
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = intersection(a, b);
    let union = corner_area(a) + corner_area(b) - inter;
    (inter / union).clamp(0.0, 1.0)
}

pub fn giou_loss(pred: &BBox, gt: &BBox) -> f64 {
    let inter = intersection(pred, gt);
    let union = corner_area(pred) + corner_area(gt) - inter;
    let (cw, ch) = enclosing(pred, gt);
    let c_area = cw * ch;
    1.0 - inter / union + (c_area - union) / c_area
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CIoUBreakdown {
    pub iou: f64,
    pub rho2: f64,
    pub c2: f64,
    pub v: f64,
    pub alpha: f64,
    pub penalty: f64,
    pub loss: f64,
}

fn aspect_term(pred: &BBox, gt: &BBox) -> f64 {
    let d = (gt.w / gt.h).atan() - (pred.w / pred.h).atan();
    4.0 / (PI * PI) * d * d
}

fn trade_off(iou: f64, v: f64) -> f64 {
    let denom = (1.0 - iou) + v;
    if denom > 0.0 {
        v / denom
    } else {
        0.0
    }
}

pub fn ciou_terms(pred: &BBox, gt: &BBox) -> CIoUBreakdown {
    let iou = iou(pred, gt);
    let v = aspect_term(pred, gt);
    let alpha = trade_off(iou, v);
    terms_with_alpha(pred, gt, iou, v, alpha)
}

fn terms_with_alpha(pred: &BBox, gt: &BBox, iou: f64, v: f64, alpha: f64) -> CIoUBreakdown {
    let rho2 = (pred.x - gt.x).powi(2) + (pred.y - gt.y).powi(2);
    let (cw, ch) = enclosing(pred, gt);
    let c2 = cw * cw + ch * ch;
    let penalty = rho2 / c2 + alpha * v;
    CIoUBreakdown {
        iou,
        rho2,
        c2,
        v,
        alpha,
        penalty,
        loss: 1.0 - iou + penalty,
    }
}

pub fn ciou_loss(pred: &BBox, gt: &BBox) -> f64 {
    ciou_terms(pred, gt).loss
}

/// CIoU loss with the trade-off weight held at a caller-supplied value. The
/// gradient returned by [`ciou_grad`] is the exact derivative of this function
/// with `alpha` fixed at its value for `(pred, gt)`.
pub fn ciou_loss_with_alpha(pred: &BBox, gt: &BBox, alpha: f64) -> f64 {
    let iou = iou(pred, gt);
    let v = aspect_term(pred, gt);
    terms_with_alpha(pred, gt, iou, v, alpha).loss
}

/// Derivatives of one axis of a box pair with respect to the predicted center and extent.
struct AxisGrad {
    /// overlap length and its derivatives by (center, extent)
    overlap: f64,
    d_overlap: [f64; 2],
    /// enclosing length and its derivatives by (center, extent)
    span: f64,
    d_span: [f64; 2],
}

fn axis_grad(c: f64, e: f64, gc: f64, ge: f64) -> AxisGrad {
    let (lo, hi) = (c - e / 2.0, c + e / 2.0);
    let (glo, ghi) = (gc - ge / 2.0, gc + ge / 2.0);
    // d(lo)/d(c, e) = (1, -1/2), d(hi)/d(c, e) = (1, 1/2)
    let chain = |d_lo: f64, d_hi: f64| [d_lo + d_hi, 0.5 * (d_hi - d_lo)];

    let raw = hi.min(ghi) - lo.max(glo);
    let (overlap, d_overlap) = if raw > 0.0 {
        let d_lo = if lo > glo { -1.0 } else { 0.0 };
        let d_hi = if hi < ghi { 1.0 } else { 0.0 };
        (raw, chain(d_lo, d_hi))
    } else {
        (0.0, [0.0, 0.0])
    };

    let span = hi.max(ghi) - lo.min(glo);
    let d_lo = if lo < glo { -1.0 } else { 0.0 };
    let d_hi = if hi > ghi { 1.0 } else { 0.0 };
    AxisGrad {
        overlap,
        d_overlap,
        span,
        d_span: chain(d_lo, d_hi),
    }
}

/// Analytic gradient of the CIoU loss with respect to `pred = (x, y, w, h)`,
/// `gt` fixed and the trade-off weight `alpha` treated as a constant.
pub fn ciou_grad(pred: &BBox, gt: &BBox) -> [f64; 4] {
    let gx = axis_grad(pred.x, pred.w, gt.x, gt.w);
    let gy = axis_grad(pred.y, pred.h, gt.y, gt.h);

    // parameter order: x, y, w, h
    let inter = gx.overlap * gy.overlap;
    let d_inter = [
        gx.d_overlap[0] * gy.overlap,
        gy.d_overlap[0] * gx.overlap,
        gx.d_overlap[1] * gy.overlap,
        gy.d_overlap[1] * gx.overlap,
    ];
    let union = corner_area(pred) + corner_area(gt) - inter;
    let d_area = [0.0, 0.0, pred.h, pred.w];
    let iou = inter / union;
    let mut grad = [0.0; 4];
    for i in 0..4 {
        let d_union = d_area[i] - d_inter[i];
        let d_iou = (d_inter[i] * union - inter * d_union) / (union * union);
        grad[i] -= d_iou;
    }

    let rho2 = (pred.x - gt.x).powi(2) + (pred.y - gt.y).powi(2);
    let d_rho2 = [2.0 * (pred.x - gt.x), 2.0 * (pred.y - gt.y), 0.0, 0.0];
    let c2 = gx.span * gx.span + gy.span * gy.span;
    let d_c2 = [
        2.0 * gx.span * gx.d_span[0],
        2.0 * gy.span * gy.d_span[0],
        2.0 * gx.span * gx.d_span[1],
        2.0 * gy.span * gy.d_span[1],
    ];
    for i in 0..4 {
        grad[i] += (d_rho2[i] * c2 - rho2 * d_c2[i]) / (c2 * c2);
    }

    let v = aspect_term(pred, gt);
    let alpha = trade_off(iou.clamp(0.0, 1.0), v);
    let delta = (gt.w / gt.h).atan() - (pred.w / pred.h).atan();
    let k = 8.0 / (PI * PI) * delta / (pred.w * pred.w + pred.h * pred.h);
    grad[2] += alpha * (-k * pred.h);
    grad[3] += alpha * (k * pred.w);
    grad
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub class_id: u32,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NmsMode {
    Greedy,
    Weighted,
}

/// Per-class non-maximum suppression. A candidate is suppressed when its IoU
/// with a kept box of the same class exceeds `iou_threshold`. In weighted mode
/// each kept box takes the score-weighted mean of its own coordinates and those
/// of the boxes it suppressed; its score is unchanged. Kept detections are
/// returned in input order.
pub fn nms(dets: &[Detection], iou_threshold: f64, mode: NmsMode) -> Result<Vec<Detection>> {
    if !(iou_threshold > 0.0 && iou_threshold < 1.0) {
        return Err(Error::invalid(format!(
            "nms: iou_threshold must lie in (0, 1), got {iou_threshold}"
        )));
    }
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .total_cmp(&dets[a].score)
            .then(a.cmp(&b))
    });

    let mut suppressed = vec![false; dets.len()];
    let mut kept: Vec<(usize, Detection)> = Vec::new();
    for (rank, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        let anchor = &dets[i];
        let mut acc = anchor.bbox.params().map(|p| p * anchor.score);
        let mut weight = anchor.score;
        for &j in &order[rank + 1..] {
            let other = &dets[j];
            if suppressed[j] || other.class_id != anchor.class_id {
                continue;
            }
            if iou(&anchor.bbox, &other.bbox) > iou_threshold {
                suppressed[j] = true;
                for (a, p) in acc.iter_mut().zip(other.bbox.params()) {
                    *a += p * other.score;
                }
                weight += other.score;
            }
        }
        let mut out = *anchor;
        if mode == NmsMode::Weighted && weight > 0.0 {
            let p = acc.map(|a| a / weight);
            out.bbox = BBox::from_params(&p)?;
        }
        kept.push((i, out));
    }
    kept.sort_by_key(|(i, _)| *i);
    Ok(kept.into_iter().map(|(_, d)| d).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::finite_diff_grad;
    use proptest::prelude::*;

    fn corners(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::from_corners(x0, y0, x1, y1).unwrap()
    }

    /// Counts cells of an `n x n` grid over `[lo, hi]^2` whose centers fall in each region.
    fn raster_areas(a: &BBox, b: &BBox, lo: f64, hi: f64, n: usize) -> (f64, f64, f64) {
        let cell = (hi - lo) / n as f64;
        let inside = |bx: &BBox, px: f64, py: f64| {
            let [x0, y0, x1, y1] = bx.corners();
            px >= x0 && px < x1 && py >= y0 && py < y1
        };
        let (mut ia, mut ib, mut both) = (0u64, 0u64, 0u64);
        for r in 0..n {
            let py = lo + (r as f64 + 0.5) * cell;
            for c in 0..n {
                let px = lo + (c as f64 + 0.5) * cell;
                let (u, v) = (inside(a, px, py), inside(b, px, py));
                ia += u as u64;
                ib += v as u64;
                both += (u && v) as u64;
            }
        }
        let ca = cell * cell;
        (ia as f64 * ca, ib as f64 * ca, both as f64 * ca)
    }

    fn raster_iou(a: &BBox, b: &BBox, lo: f64, hi: f64) -> f64 {
        let (aa, ab, i) = raster_areas(a, b, lo, hi, 3000);
        i / (aa + ab - i)
    }

    #[test]
    fn iou_examples() {
        let a = corners(0.0, 0.0, 1.0, 1.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &corners(2.0, 2.0, 3.0, 3.0)), 0.0);
        let (p, q) = (corners(0.0, 0.0, 2.0, 2.0), corners(1.0, 1.0, 3.0, 3.0));
        let oracle = raster_iou(&p, &q, 0.0, 3.0);
        assert!((oracle - 1.0 / 7.0).abs() < 1e-3);
        assert!((iou(&p, &q) - oracle).abs() < 1e-3);
    }

    #[test]
    fn giou_examples() {
        let a = corners(0.0, 0.0, 1.0, 1.0);
        assert_eq!(giou_loss(&a, &a), 0.0);
        let b = corners(2.0, 2.0, 3.0, 3.0);
        // |C| = 9 and |union| = 2 from the raster oracle
        let (aa, ab, i) = raster_areas(&a, &b, 0.0, 3.0, 3000);
        let union = aa + ab - i;
        let oracle = 1.0 - i / union + (9.0 - union) / 9.0;
        assert!((oracle - 16.0 / 9.0).abs() < 1e-3);
        assert!((giou_loss(&a, &b) - 16.0 / 9.0).abs() < 1e-12);
        let inner = corners(1.0, 1.0, 2.0, 3.0);
        let outer = corners(0.0, 0.0, 4.0, 4.0);
        assert!((giou_loss(&inner, &outer) - (1.0 - iou(&inner, &outer))).abs() < 1e-15);
    }

    #[test]
    fn giou_cannot_rank_contained_boxes_by_position() {
        let outer = corners(0.0, 0.0, 10.0, 10.0);
        let centered = corners(4.0, 4.0, 6.0, 6.0);
        let corner = corners(0.0, 0.0, 2.0, 2.0);
        assert_eq!(giou_loss(&centered, &outer), giou_loss(&corner, &outer));
        assert!(ciou_loss(&centered, &outer) < ciou_loss(&corner, &outer));
    }

    #[test]
    fn ciou_identity() {
        let a = BBox::new(3.0, 4.0, 2.0, 5.0).unwrap();
        let t = ciou_terms(&a, &a);
        assert_eq!((t.loss, t.penalty, t.v, t.alpha), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn ciou_side_by_side_unit_boxes() {
        let p = BBox::new(0.5, 0.5, 1.0, 1.0).unwrap();
        let g = BBox::new(1.5, 0.5, 1.0, 1.0).unwrap();
        assert!(raster_iou(&p, &g, 0.0, 2.0) < 1e-3);
        let t = ciou_terms(&p, &g);
        assert!((t.rho2 - 1.0).abs() < 1e-12);
        assert!((t.c2 - 5.0).abs() < 1e-12);
        assert_eq!(t.v, 0.0);
        assert!((t.loss - 1.2).abs() < 1e-12);
    }

    #[test]
    fn ciou_concentric_aspect_mismatch() {
        let p = BBox::new(0.0, 0.0, 2.0, 1.0).unwrap();
        let g = BBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        let oracle_iou = raster_iou(&p, &g, -1.0, 1.0);
        let v = 4.0 / (PI * PI) * (1f64.atan() - 2f64.atan()).powi(2);
        let alpha = v / ((1.0 - oracle_iou) + v);
        let loss = 1.0 - oracle_iou + alpha * v;
        let t = ciou_terms(&p, &g);
        assert!((t.iou - oracle_iou).abs() < 1e-3);
        assert!((t.v - 0.04195).abs() < 1e-5);
        assert!((t.alpha - 0.0774).abs() < 1e-3);
        assert!((t.loss - loss).abs() < 1e-3 && (t.loss - 0.5032).abs() < 1e-3);
    }

    #[test]
    fn ciou_grad_on_disjoint_boxes_is_penalty_gradient() {
        let p = BBox::new(0.3, 0.2, 1.2, 0.7).unwrap();
        let g = BBox::new(4.0, 3.1, 1.0, 2.0).unwrap();
        let alpha = ciou_terms(&p, &g).alpha;
        let penalty = |q: &[f64]| {
            let b = BBox::from_params(q).unwrap();
            let t = ciou_terms(&b, &g);
            t.rho2 / t.c2 + alpha * t.v
        };
        let fd = finite_diff_grad(penalty, &p.params(), 1e-5).unwrap();
        let g_an = ciou_grad(&p, &g);
        for i in 0..4 {
            assert!((g_an[i] - fd[i]).abs() < 1e-6, "{i}: {} vs {}", g_an[i], fd[i]);
        }
    }

    #[test]
    fn ciou_grad_matches_frozen_alpha_finite_differences() {
        let p = BBox::new(2.1, 1.7, 3.0, 1.4).unwrap();
        let g = BBox::new(2.6, 2.2, 2.2, 2.9).unwrap();
        let alpha = ciou_terms(&p, &g).alpha;
        let f = |q: &[f64]| ciou_loss_with_alpha(&BBox::from_params(q).unwrap(), &g, alpha);
        let fd = finite_diff_grad(f, &p.params(), 1e-5).unwrap();
        let an = ciou_grad(&p, &g);
        for i in 0..4 {
            assert!((an[i] - fd[i]).abs() <= 1e-4f64.max(1e-3 * fd[i].abs()));
        }
    }

    fn det(x0: f64, y0: f64, x1: f64, y1: f64, class_id: u32, score: f64) -> Detection {
        Detection { bbox: corners(x0, y0, x1, y1), class_id, score }
    }

    #[test]
    fn nms_basic_cases() {
        assert!(nms(&[], 0.5, NmsMode::Greedy).unwrap().is_empty());
        let one = [det(0.0, 0.0, 1.0, 1.0, 0, 0.3)];
        assert_eq!(nms(&one, 0.5, NmsMode::Weighted).unwrap(), one.to_vec());
        let disjoint = [det(0.0, 0.0, 1.0, 1.0, 0, 0.3), det(5.0, 5.0, 6.0, 6.0, 0, 0.9)];
        assert_eq!(nms(&disjoint, 0.5, NmsMode::Greedy).unwrap().len(), 2);
        let cross_class = [det(0.0, 0.0, 1.0, 1.0, 0, 0.3), det(0.0, 0.0, 1.0, 1.0, 1, 0.9)];
        assert_eq!(nms(&cross_class, 0.5, NmsMode::Greedy).unwrap().len(), 2);
        assert!(nms(&one, 1.0, NmsMode::Greedy).is_err());
    }

    #[test]
    fn weighted_nms_coincident_boxes() {
        let dets = [det(1.0, 2.0, 4.0, 6.0, 3, 0.6), det(1.0, 2.0, 4.0, 6.0, 3, 0.9)];
        // brute-force pairwise check: the only pair overlaps fully
        assert_eq!(iou(&dets[0].bbox, &dets[1].bbox), 1.0);
        let out = nms(&dets, 0.5, NmsMode::Weighted).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].score, 0.9);
        let c = out[0].bbox.corners();
        for (a, b) in c.iter().zip([1.0, 2.0, 4.0, 6.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn weighted_nms_averages_by_score() {
        let dets = [det(0.0, 0.0, 10.0, 10.0, 0, 0.75), det(1.0, 0.0, 11.0, 10.0, 0, 0.25)];
        let out = nms(&dets, 0.5, NmsMode::Weighted).unwrap();
        assert_eq!(out.len(), 1);
        assert!((out[0].bbox.x - 5.25).abs() < 1e-12);
        let greedy = nms(&dets, 0.5, NmsMode::Greedy).unwrap();
        assert_eq!(greedy[0], dets[0]);
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (-20.0..20.0f64, -20.0..20.0f64, 0.1..15.0f64, 0.1..15.0f64)
            .prop_map(|(x, y, w, h)| BBox::new(x, y, w, h).unwrap())
    }

    proptest! {
        #[test]
        fn giou_penalty_non_negative(a in arb_box(), b in arb_box()) {
            let i = iou(&a, &b);
            prop_assert!((0.0..=1.0).contains(&i));
            let g = giou_loss(&a, &b);
            prop_assert!(g >= 1.0 - i - 1e-12);
            prop_assert!(g < 2.0);
        }

        #[test]
        fn ciou_lower_bound_and_zero_iff_equal(a in arb_box(), b in arb_box()) {
            let t = ciou_terms(&a, &b);
            prop_assert!(t.v >= 0.0 && t.rho2 >= 0.0 && t.c2 > 0.0 && t.penalty >= 0.0);
            prop_assert!(t.loss >= 1.0 - t.iou - 1e-12);
            prop_assert_eq!(t.loss == 0.0, a == b);
            prop_assert_eq!(ciou_loss(&a, &a), 0.0);
        }

        #[test]
        fn axis_swap_symmetry(a in arb_box(), b in arb_box()) {
            let (ta, tb) = (a.transposed(), b.transposed());
            prop_assert!((iou(&a, &b) - iou(&ta, &tb)).abs() < 1e-12);
            prop_assert!((giou_loss(&a, &b) - giou_loss(&ta, &tb)).abs() < 1e-12);
            prop_assert!((ciou_loss(&a, &b) - ciou_loss(&ta, &tb)).abs() < 1e-12);
        }

        #[test]
        fn scale_invariance(a in arb_box(), b in arb_box(), s in 0.01..100.0f64) {
            let base = ciou_terms(&a, &b);
            let sc = ciou_terms(&a.scaled(s), &b.scaled(s));
            let close = |x: f64, y: f64| (x - y).abs() <= 1e-9 * x.abs().max(y.abs()) + 1e-15;
            prop_assert!(close(base.loss, sc.loss));
            prop_assert!(close(base.iou, sc.iou));
            prop_assert!(close(base.v, sc.v) && close(base.alpha, sc.alpha));
            prop_assert!(close(base.rho2 / base.c2, sc.rho2 / sc.c2));
        }

        #[test]
        fn grad_translation_invariant(a in arb_box(), b in arb_box(), dx in -50.0..50.0f64, dy in -50.0..50.0f64) {
            let g0 = ciou_grad(&a, &b);
            let g1 = ciou_grad(&a.translated(dx, dy), &b.translated(dx, dy));
            for i in 0..4 {
                prop_assert!((g0[i] - g1[i]).abs() <= 1e-9 * (1.0 + g0[i].abs()));
            }
        }

        #[test]
        fn greedy_nms_survivors_respect_threshold(
            raw in prop::collection::vec((arb_box(), 0u32..3, 0.0..1.0f64), 0..40),
            thr in 0.05..0.95f64,
        ) {
            let dets: Vec<Detection> = raw.iter().map(|&(bbox, class_id, score)| Detection { bbox, class_id, score }).collect();
            let kept = nms(&dets, thr, NmsMode::Greedy).unwrap();
            // subsequence of the input
            let mut cursor = 0;
            for k in &kept {
                let pos = dets[cursor..].iter().position(|d| d == k);
                prop_assert!(pos.is_some());
                cursor += pos.unwrap() + 1;
            }
            for (i, a) in kept.iter().enumerate() {
                for b in &kept[i + 1..] {
                    if a.class_id == b.class_id {
                        prop_assert!(iou(&a.bbox, &b.bbox) <= thr);
                    }
                }
            }
        }
    }
}
