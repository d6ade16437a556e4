//! Augmentation operations over detection samples and the policy structure that
//! strings them together.
//!
//! Each operation carries a probability level `0..=9` (probability `level / 9`)
//! and a magnitude level `0..=10` mapped linearly onto the range returned by
//! [`OpKind::magnitude_range`]:
//!
//! | op | magnitude | unit |
//! |----|-----------|------|
//! | TranslateX / TranslateY | -0.25 ..= 0.25 | fraction of width / height |
//! | Shear | -0.3 ..= 0.3 | horizontal shear factor about the image center |
//! | Rotate | -30 ..= 30 | degrees about the image center |
//! | Zoom | 0.5 ..= 1.5 | scale about the image center |
//! | Brightness | -0.3 ..= 0.3 | additive offset |
//! | Contrast | 0.5 ..= 1.5 | gain about the global mean |
//! | ColorJitter | 0 ..= 0.3 | max per-channel gain deviation |
//! | Noise | 0 ..= 0.1 | Gaussian sigma |
//! | Blur | 0 ..= 2 | Gaussian sigma in pixels |
//! | Erasing | 0 ..= 0.3 | erased area fraction |
//! | CutMix | 0 ..= 0.5 | pasted area fraction |
//! | Mixup | 0 ..= 0.5 | partner blend weight |
//! | SnapMix | 0 ..= 0.5 | nominal source / target area fraction |
//! | Mosaic | 0.25 ..= 0.75 | split position as a fraction of each side |
//!
//! Pixels are clamped to `[0, 1]` after every op. Geometric ops map boxes by
//! their corner points and re-fit the axis-aligned hull, clipped to the image.
//! Mixing ops keep boxes from every source, each scaled by its source's mixing
//! weight, and mix `label_weights` so they sum to one.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::boxes::BBox;
use crate::error::{Error, Result};
use crate::tensor::{bilinear_resize, Shape, Tensor};

pub const OP_COUNT: usize = 15;
pub const PROB_LEVELS: u8 = 10;
pub const MAG_LEVELS: u8 = 11;
/// Boxes narrower or shorter than this after clipping are dropped.
pub const MIN_BOX_SIDE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OpKind {
    TranslateX,
    TranslateY,
    Shear,
    Rotate,
    Zoom,
    Brightness,
    Contrast,
    ColorJitter,
    Noise,
    Blur,
    Erasing,
    CutMix,
    Mixup,
    SnapMix,
    Mosaic,
}

impl OpKind {
    pub const ALL: [OpKind; OP_COUNT] = [
        OpKind::TranslateX,
        OpKind::TranslateY,
        OpKind::Shear,
        OpKind::Rotate,
        OpKind::Zoom,
        OpKind::Brightness,
        OpKind::Contrast,
        OpKind::ColorJitter,
        OpKind::Noise,
        OpKind::Blur,
        OpKind::Erasing,
        OpKind::CutMix,
        OpKind::Mixup,
        OpKind::SnapMix,
        OpKind::Mosaic,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<OpKind> {
        Self::ALL.get(i).copied()
    }

    pub fn magnitude_range(self) -> (f64, f64) {
        use OpKind::*;
        match self {
            TranslateX | TranslateY => (-0.25, 0.25),
            Shear => (-0.3, 0.3),
            Rotate => (-30.0, 30.0),
            Zoom => (0.5, 1.5),
            Brightness => (-0.3, 0.3),
            Contrast => (0.5, 1.5),
            ColorJitter => (0.0, 0.3),
            Noise => (0.0, 0.1),
            Blur => (0.0, 2.0),
            Erasing => (0.0, 0.3),
            CutMix | Mixup | SnapMix => (0.0, 0.5),
            Mosaic => (0.25, 0.75),
        }
    }

    /// Extra samples the op draws from the pool.
    pub fn pool_needed(self) -> usize {
        match self {
            OpKind::Mosaic => 3,
            OpKind::CutMix | OpKind::Mixup | OpKind::SnapMix => 1,
            _ => 0,
        }
    }

    pub fn is_geometric(self) -> bool {
        matches!(
            self,
            OpKind::TranslateX | OpKind::TranslateY | OpKind::Shear | OpKind::Rotate | OpKind::Zoom
        )
    }

    pub fn name(self) -> &'static str {
        use OpKind::*;
        match self {
            TranslateX => "TranslateX",
            TranslateY => "TranslateY",
            Shear => "Shear",
            Rotate => "Rotate",
            Zoom => "Zoom",
            Brightness => "Brightness",
            Contrast => "Contrast",
            ColorJitter => "ColorJitter",
            Noise => "Noise",
            Blur => "Blur",
            Erasing => "Erasing",
            CutMix => "CutMix",
            Mixup => "Mixup",
            SnapMix => "SnapMix",
            Mosaic => "Mosaic",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawOpSpec")]
pub struct AugOpSpec {
    pub kind: OpKind,
    pub prob_level: u8,
    pub mag_level: u8,
}

#[derive(Deserialize)]
struct RawOpSpec {
    kind: OpKind,
    prob_level: u8,
    mag_level: u8,
}

impl TryFrom<RawOpSpec> for AugOpSpec {
    type Error = Error;

    fn try_from(r: RawOpSpec) -> Result<Self> {
        AugOpSpec::new(r.kind, r.prob_level, r.mag_level)
    }
}

impl AugOpSpec {
    pub fn new(kind: OpKind, prob_level: u8, mag_level: u8) -> Result<Self> {
        if prob_level >= PROB_LEVELS || mag_level >= MAG_LEVELS {
            return Err(Error::invalid(format!(
                "{kind}: prob_level {prob_level} must be 0..=9 and mag_level {mag_level} 0..=10"
            )));
        }
        Ok(AugOpSpec { kind, prob_level, mag_level })
    }

    pub fn probability(&self) -> f64 {
        self.prob_level as f64 / (PROB_LEVELS - 1) as f64
    }

    pub fn magnitude(&self) -> f64 {
        let (lo, hi) = self.kind.magnitude_range();
        lo + (hi - lo) * (self.mag_level as f64 / (MAG_LEVELS - 1) as f64)
    }
}

/// Two operations applied in sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SubPolicy {
    pub ops: [AugOpSpec; 2],
}

/// Five sub-policies; one is picked uniformly per sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Policy {
    pub subs: [SubPolicy; 5],
}

impl Policy {
    /// Every slot set to `spec`.
    pub fn uniform(spec: AugOpSpec) -> Self {
        Policy {
            subs: [SubPolicy { ops: [spec; 2] }; 5],
        }
    }

    pub fn ops(&self) -> impl Iterator<Item = &AugOpSpec> {
        self.subs.iter().flat_map(|s| s.ops.iter())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("policy serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledBox {
    pub bbox: BBox,
    pub class_id: u32,
    /// Mixing weight of the source this box came from.
    pub weight: f64,
}

impl LabeledBox {
    pub fn new(bbox: BBox, class_id: u32) -> Self {
        LabeledBox { bbox, class_id, weight: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `(1, 3, H, W)` with values in `[0, 1]`.
    pub image: Tensor,
    pub boxes: Vec<LabeledBox>,
    pub label_weights: Option<BTreeMap<u32, f64>>,
}

impl Sample {
    pub fn new(image: Tensor, boxes: Vec<LabeledBox>) -> Result<Self> {
        let s = image.shape();
        if s.n != 1 || s.c != 3 {
            return Err(Error::invalid(format!("sample image must be (1, 3, H, W), got {s}")));
        }
        Ok(Sample { image, boxes, label_weights: None })
    }

    pub fn height(&self) -> usize {
        self.image.shape().h
    }

    pub fn width(&self) -> usize {
        self.image.shape().w
    }

    /// Explicit label weights, or uniform over the classes present in `boxes`.
    pub fn effective_label_weights(&self) -> BTreeMap<u32, f64> {
        if let Some(lw) = &self.label_weights {
            return lw.clone();
        }
        let mut out = BTreeMap::new();
        for b in &self.boxes {
            out.insert(b.class_id, 0.0);
        }
        let n = out.len() as f64;
        for v in out.values_mut() {
            *v = 1.0 / n;
        }
        out
    }
}

fn validate(s: &Sample) -> Result<()> {
    let sh = s.image.shape();
    if sh.n != 1 || sh.c != 3 || sh.h == 0 || sh.w == 0 {
        return Err(Error::invalid(format!("sample image must be (1, 3, H, W) with H, W >= 1, got {sh}")));
    }
    Ok(())
}

/// Weighted sum of label distributions, renormalized to one.
fn mix_labels(parts: &[(BTreeMap<u32, f64>, f64)]) -> Option<BTreeMap<u32, f64>> {
    let mut out = BTreeMap::new();
    for (labels, w) in parts {
        for (&c, &v) in labels {
            *out.entry(c).or_insert(0.0) += v * w;
        }
    }
    let total: f64 = out.values().sum();
    if total <= 0.0 {
        return None;
    }
    for v in out.values_mut() {
        *v /= total;
    }
    Some(out)
}

fn clamp_unit(t: Tensor) -> Tensor {
    t.map(|v| v.clamp(0.0, 1.0))
}

/// Clip a corner-form box to `[0, w] x [0, h]`; `None` if too little remains.
fn clip_box(x0: f64, y0: f64, x1: f64, y1: f64, w: f64, h: f64) -> Option<BBox> {
    let (x0, x1) = (x0.clamp(0.0, w), x1.clamp(0.0, w));
    let (y0, y1) = (y0.clamp(0.0, h), y1.clamp(0.0, h));
    if x1 - x0 < MIN_BOX_SIDE || y1 - y0 < MIN_BOX_SIDE {
        return None;
    }
    BBox::from_corners(x0, y0, x1, y1).ok()
}

/// Row-major 2x3 affine map in continuous pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub m: [[f64; 3]; 2],
}

impl Affine {
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.m;
        (
            m[0][0] * x + m[0][1] * y + m[0][2],
            m[1][0] * x + m[1][1] * y + m[1][2],
        )
    }

    pub fn inverse(&self) -> Option<Affine> {
        let [[a, b, c], [d, e, f]] = self.m;
        let det = a * e - b * d;
        if det.abs() < 1e-12 {
            return None;
        }
        let (ia, ib, id, ie) = (e / det, -b / det, -d / det, a / det);
        Some(Affine {
            m: [[ia, ib, -(ia * c + ib * f)], [id, ie, -(id * c + ie * f)]],
        })
    }

    /// Corner points mapped through the transform, hull re-fitted.
    pub fn map_box(&self, b: &BBox) -> [f64; 4] {
        let [x0, y0, x1, y1] = b.corners();
        let pts = [(x0, y0), (x1, y0), (x0, y1), (x1, y1)].map(|(x, y)| self.apply(x, y));
        let xs = pts.map(|p| p.0);
        let ys = pts.map(|p| p.1);
        let min = |v: [f64; 4]| v.iter().copied().fold(f64::INFINITY, f64::min);
        let max = |v: [f64; 4]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        [min(xs), min(ys), max(xs), max(ys)]
    }
}

/// Forward pixel transform of a geometric op at `magnitude` for an `h x w` image.
pub fn geometric_transform(kind: OpKind, magnitude: f64, h: usize, w: usize) -> Option<Affine> {
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let about_center = |a: f64, b: f64, d: f64, e: f64| Affine {
        m: [[a, b, cx - a * cx - b * cy], [d, e, cy - d * cx - e * cy]],
    };
    Some(match kind {
        OpKind::TranslateX => Affine { m: [[1.0, 0.0, magnitude * w as f64], [0.0, 1.0, 0.0]] },
        OpKind::TranslateY => Affine { m: [[1.0, 0.0, 0.0], [0.0, 1.0, magnitude * h as f64]] },
        OpKind::Shear => about_center(1.0, magnitude, 0.0, 1.0),
        OpKind::Rotate => {
            let (s, c) = magnitude.to_radians().sin_cos();
            about_center(c, -s, s, c)
        }
        OpKind::Zoom => about_center(magnitude, 0.0, 0.0, magnitude),
        _ => return None,
    })
}

/// Inverse-mapped bilinear warp; samples falling outside the source read 0.
pub fn warp_image(image: &Tensor, forward: &Affine) -> Result<Tensor> {
    let inv = forward
        .inverse()
        .ok_or_else(|| Error::invalid("degenerate geometric transform"))?;
    let s = image.shape();
    let fetch = |c: usize, y: isize, x: isize| -> f64 {
        if y < 0 || x < 0 || y >= s.h as isize || x >= s.w as isize {
            0.0
        } else {
            image.at(0, c, y as usize, x as usize) as f64
        }
    };
    Tensor::from_fn(s, |_, c, oy, ox| {
        let (sx, sy) = inv.apply(ox as f64 + 0.5, oy as f64 + 0.5);
        let (fx, fy) = (sx - 0.5, sy - 0.5);
        let (x0, y0) = (fx.floor(), fy.floor());
        let (ax, ay) = (fx - x0, fy - y0);
        let (x0, y0) = (x0 as isize, y0 as isize);
        let top = fetch(c, y0, x0) * (1.0 - ax) + fetch(c, y0, x0 + 1) * ax;
        let bot = fetch(c, y0 + 1, x0) * (1.0 - ax) + fetch(c, y0 + 1, x0 + 1) * ax;
        (top * (1.0 - ay) + bot * ay) as f32
    })
}

fn apply_geometric(s: &Sample, kind: OpKind, magnitude: f64) -> Result<Sample> {
    let (h, w) = (s.height(), s.width());
    let t = geometric_transform(kind, magnitude, h, w).expect("geometric kind");
    let image = clamp_unit(warp_image(&s.image, &t)?);
    let boxes = s
        .boxes
        .iter()
        .filter_map(|b| {
            let [x0, y0, x1, y1] = t.map_box(&b.bbox);
            clip_box(x0, y0, x1, y1, w as f64, h as f64).map(|bbox| LabeledBox { bbox, ..*b })
        })
        .collect();
    Ok(Sample { image, boxes, label_weights: s.label_weights.clone() })
}

fn gaussian_blur(image: &Tensor, sigma: f64) -> Result<Tensor> {
    if sigma < 1e-6 {
        return Ok(image.clone());
    }
    let r = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = taps.iter().sum();
    let taps: Vec<f64> = taps.iter().map(|t| t / norm).collect();
    let s = image.shape();
    let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let horiz = Tensor::from_fn(s, |n, c, y, x| {
        let mut acc = 0.0;
        for (k, t) in taps.iter().enumerate() {
            acc += t * image.at(n, c, y, clampi(x as isize + k as isize - r, s.w)) as f64;
        }
        acc as f32
    })?;
    Tensor::from_fn(s, |n, c, y, x| {
        let mut acc = 0.0;
        for (k, t) in taps.iter().enumerate() {
            acc += t * horiz.at(n, c, clampi(y as isize + k as isize - r, s.h), x) as f64;
        }
        acc as f32
    })
}

/// Integer rectangle `(y0, x0, h, w)` covering about `area_frac` of an `h x w`
/// image with a random aspect ratio in `[1/2, 2]` and a uniform position.
fn random_rect<R: Rng + ?Sized>(rng: &mut R, area_frac: f64, h: usize, w: usize) -> (usize, usize, usize, usize) {
    let aspect = (rng.random_range(-(2f64.ln())..2f64.ln())).exp();
    let area = area_frac.clamp(0.0, 1.0) * (h * w) as f64;
    let rh = ((area / aspect).sqrt().round() as usize).min(h);
    let rw = ((area * aspect).sqrt().round() as usize).min(w);
    let y0 = rng.random_range(0..=h - rh);
    let x0 = rng.random_range(0..=w - rw);
    (y0, x0, rh, rw)
}

/// Rescales image and boxes of `s` to `h x w`.
pub fn resize_sample(s: &Sample, h: usize, w: usize) -> Result<Sample> {
    if (s.height(), s.width()) == (h, w) {
        return Ok(s.clone());
    }
    let (sy, sx) = (h as f64 / s.height() as f64, w as f64 / s.width() as f64);
    let image = clamp_unit(bilinear_resize(&s.image, h, w)?);
    let boxes = s
        .boxes
        .iter()
        .filter_map(|b| {
            let [x0, y0, x1, y1] = b.bbox.corners();
            clip_box(x0 * sx, y0 * sy, x1 * sx, y1 * sy, w as f64, h as f64)
                .map(|bbox| LabeledBox { bbox, ..*b })
        })
        .collect();
    Ok(Sample { image, boxes, label_weights: s.label_weights.clone() })
}

/// Boxes scaled by a source weight; a source mixed in at weight zero
/// contributes no boxes.
fn reweighted(boxes: &[LabeledBox], w: f64) -> impl Iterator<Item = LabeledBox> + '_ {
    boxes
        .iter()
        .filter(move |_| w > 0.0)
        .map(move |b| LabeledBox { weight: b.weight * w, ..*b })
}

/// Copies `src` rectangle `(y0, x0, h, w)` over the same region of `dst`.
fn paste(dst: &mut [f32], src: &Tensor, rect: (usize, usize, usize, usize)) {
    let s = src.shape();
    let (y0, x0, rh, rw) = rect;
    for c in 0..s.c {
        for y in y0..y0 + rh {
            for x in x0..x0 + rw {
                dst[(c * s.h + y) * s.w + x] = src.at(0, c, y, x);
            }
        }
    }
}

fn pick<'a, R: Rng + ?Sized>(rng: &mut R, pool: &'a [Sample]) -> &'a Sample {
    &pool[rng.random_range(0..pool.len())]
}

fn boxes_in_rect(boxes: &[LabeledBox], rect: (usize, usize, usize, usize)) -> Vec<LabeledBox> {
    let (y0, x0, rh, rw) = rect;
    let (ry0, rx0, ry1, rx1) = (y0 as f64, x0 as f64, (y0 + rh) as f64, (x0 + rw) as f64);
    boxes
        .iter()
        .filter_map(|b| {
            let [bx0, by0, bx1, by1] = b.bbox.corners();
            let (cx0, cy0, cx1, cy1) = (bx0.max(rx0), by0.max(ry0), bx1.min(rx1), by1.min(ry1));
            if cx1 - cx0 < MIN_BOX_SIDE || cy1 - cy0 < MIN_BOX_SIDE {
                return None;
            }
            BBox::from_corners(cx0, cy0, cx1, cy1).ok().map(|bbox| LabeledBox { bbox, ..*b })
        })
        .collect()
}

fn cutmix<R: Rng + ?Sized>(s: &Sample, area: f64, rng: &mut R, pool: &[Sample]) -> Result<Sample> {
    let (h, w) = (s.height(), s.width());
    let partner = resize_sample(pick(rng, pool), h, w)?;
    let rect = random_rect(rng, area, h, w);
    let frac = (rect.2 * rect.3) as f64 / (h * w) as f64;
    let mut data = s.image.data().to_vec();
    paste(&mut data, &partner.image, rect);
    let mut boxes: Vec<_> = reweighted(&s.boxes, 1.0 - frac).collect();
    boxes.extend(reweighted(&boxes_in_rect(&partner.boxes, rect), frac));
    Ok(Sample {
        image: Tensor::new(s.image.shape(), data)?,
        boxes,
        label_weights: mix_labels(&[
            (s.effective_label_weights(), 1.0 - frac),
            (partner.effective_label_weights(), frac),
        ]),
    })
}

fn mixup<R: Rng + ?Sized>(s: &Sample, lambda: f64, rng: &mut R, pool: &[Sample]) -> Result<Sample> {
    let partner = resize_sample(pick(rng, pool), s.height(), s.width())?;
    let (a, b) = ((1.0 - lambda) as f32, lambda as f32);
    let data = s
        .image
        .data()
        .iter()
        .zip(partner.image.data())
        .map(|(&x, &y)| a * x + b * y)
        .collect();
    let mut boxes: Vec<_> = reweighted(&s.boxes, 1.0 - lambda).collect();
    boxes.extend(reweighted(&partner.boxes, lambda));
    Ok(Sample {
        image: clamp_unit(Tensor::new(s.image.shape(), data)?),
        boxes,
        label_weights: mix_labels(&[
            (s.effective_label_weights(), 1.0 - lambda),
            (partner.effective_label_weights(), lambda),
        ]),
    })
}

/// Area-proportional stand-in for semantically weighted SnapMix: a source patch
/// and a target patch of independently drawn sizes, source resized into target.
fn snapmix<R: Rng + ?Sized>(s: &Sample, nominal: f64, rng: &mut R, pool: &[Sample]) -> Result<Sample> {
    let (h, w) = (s.height(), s.width());
    let partner = pick(rng, pool);
    let (ph, pw) = (partner.height(), partner.width());
    let (src_area, dst_area) = (nominal * rng.random_range(0.5..1.5), nominal * rng.random_range(0.5..1.5));
    let src = random_rect(rng, src_area, ph, pw);
    let dst = random_rect(rng, dst_area, h, w);
    if src.2 == 0 || src.3 == 0 || dst.2 == 0 || dst.3 == 0 {
        return Ok(s.clone());
    }
    let src_frac = (src.2 * src.3) as f64 / (ph * pw) as f64;
    let dst_frac = (dst.2 * dst.3) as f64 / (h * w) as f64;

    let crop = Tensor::from_fn([1, 3, src.2, src.3], |_, c, y, x| partner.image.at(0, c, src.0 + y, src.1 + x))?;
    let patch = bilinear_resize(&crop, dst.2, dst.3)?;
    let mut data = s.image.data().to_vec();
    for c in 0..3 {
        for y in 0..dst.2 {
            for x in 0..dst.3 {
                data[(c * h + dst.0 + y) * w + dst.1 + x] = patch.at(0, c, y, x);
            }
        }
    }

    let (w_self, w_other) = {
        let (a, b) = (1.0 - dst_frac, src_frac);
        (a / (a + b), b / (a + b))
    };
    let (sx, sy) = (dst.3 as f64 / src.3 as f64, dst.2 as f64 / src.2 as f64);
    let moved = boxes_in_rect(&partner.boxes, src).into_iter().filter_map(|b| {
        let [x0, y0, x1, y1] = b.bbox.corners();
        let map_x = |x: f64| dst.1 as f64 + (x - src.1 as f64) * sx;
        let map_y = |y: f64| dst.0 as f64 + (y - src.0 as f64) * sy;
        clip_box(map_x(x0), map_y(y0), map_x(x1), map_y(y1), w as f64, h as f64)
            .map(|bbox| LabeledBox { bbox, weight: b.weight * w_other, ..b })
    });
    let mut boxes: Vec<_> = reweighted(&s.boxes, w_self).collect();
    boxes.extend(moved);
    Ok(Sample {
        image: clamp_unit(Tensor::new(s.image.shape(), data)?),
        boxes,
        label_weights: mix_labels(&[
            (s.effective_label_weights(), w_self),
            (partner.effective_label_weights(), w_other),
        ]),
    })
}

/// Four samples rescaled into the quadrants around a split point; the output
/// canvas keeps the size of `s`.
fn mosaic<R: Rng + ?Sized>(s: &Sample, split: f64, rng: &mut R, pool: &[Sample]) -> Result<Sample> {
    let (h, w) = (s.height(), s.width());
    if h < 2 || w < 2 {
        return Err(Error::invalid(format!("Mosaic needs at least a 2x2 image, got {h}x{w}")));
    }
    let sx = ((split * w as f64).round() as usize).clamp(1, w - 1);
    let sy = ((split * h as f64).round() as usize).clamp(1, h - 1);
    let picks = index::sample(rng, pool.len(), 3);
    let sources = [s, &pool[picks.index(0)], &pool[picks.index(1)], &pool[picks.index(2)]];
    // (y0, x0, h, w) per quadrant: top-left, top-right, bottom-left, bottom-right
    let regions = [(0, 0, sy, sx), (0, sx, sy, w - sx), (sy, 0, h - sy, sx), (sy, sx, h - sy, w - sx)];

    let mut data = vec![0f32; 3 * h * w];
    let mut boxes = Vec::new();
    let mut labels = Vec::new();
    for (src, &(y0, x0, rh, rw)) in sources.iter().zip(&regions) {
        let tile = resize_sample(src, rh, rw)?;
        for c in 0..3 {
            for y in 0..rh {
                let row = tile.image.plane(0, c);
                let dst = (c * h + y0 + y) * w + x0;
                data[dst..dst + rw].copy_from_slice(&row[y * rw..(y + 1) * rw]);
            }
        }
        let frac = (rh * rw) as f64 / (h * w) as f64;
        for b in &tile.boxes {
            let bbox = b.bbox.translated(x0 as f64, y0 as f64);
            boxes.push(LabeledBox { bbox, weight: b.weight * frac, ..*b });
        }
        labels.push((src.effective_label_weights(), frac));
    }
    Ok(Sample {
        image: Tensor::new(Shape::new(1, 3, h, w), data)?,
        boxes,
        label_weights: mix_labels(&labels),
    })
}

/// Applies `spec` with probability `prob_level / 9`, otherwise returns `s`
/// unchanged. Mixing ops draw partners from `pool`.
pub fn apply_op<R: Rng + ?Sized>(s: &Sample, spec: &AugOpSpec, rng: &mut R, pool: &[Sample]) -> Result<Sample> {
    validate(s)?;
    let needed = spec.kind.pool_needed();
    if pool.len() < needed {
        return Err(Error::PoolTooSmall { op: spec.kind.name(), needed, got: pool.len() });
    }
    let fire = rng.random::<f64>() < spec.probability();
    if !fire {
        return Ok(s.clone());
    }
    let m = spec.magnitude();
    let pixels = |f: &dyn Fn(f32) -> f32| Sample {
        image: clamp_unit(s.image.map(f)),
        ..s.clone()
    };
    Ok(match spec.kind {
        k if k.is_geometric() => apply_geometric(s, k, m)?,
        OpKind::Brightness => pixels(&|v| v + m as f32),
        OpKind::Contrast => {
            let mean = s.image.mean() as f32;
            pixels(&|v| (v - mean) * m as f32 + mean)
        }
        OpKind::ColorJitter => {
            let gains: Vec<f32> = (0..3).map(|_| (1.0 + m * rng.random_range(-1.0..=1.0)) as f32).collect();
            let sh = s.image.shape();
            let image = Tensor::from_fn(sh, |_, c, y, x| s.image.at(0, c, y, x) * gains[c])?;
            Sample { image: clamp_unit(image), ..s.clone() }
        }
        OpKind::Noise => {
            let normal = Normal::new(0.0, m).map_err(|e| Error::invalid(e.to_string()))?;
            let data = s.image.data().iter().map(|&v| v + normal.sample(rng) as f32).collect();
            Sample { image: clamp_unit(Tensor::new(s.image.shape(), data)?), ..s.clone() }
        }
        OpKind::Blur => Sample { image: clamp_unit(gaussian_blur(&s.image, m)?), ..s.clone() },
        OpKind::Erasing => {
            let rect = random_rect(rng, m, s.height(), s.width());
            let zeros = Tensor::zeros(s.image.shape())?;
            let mut data = s.image.data().to_vec();
            paste(&mut data, &zeros, rect);
            Sample { image: Tensor::new(s.image.shape(), data)?, ..s.clone() }
        }
        OpKind::CutMix => cutmix(s, m, rng, pool)?,
        OpKind::Mixup => mixup(s, m, rng, pool)?,
        OpKind::SnapMix => snapmix(s, m, rng, pool)?,
        OpKind::Mosaic => mosaic(s, m, rng, pool)?,
        _ => unreachable!("geometric kinds handled above"),
    })
}

pub fn apply_subpolicy<R: Rng + ?Sized>(s: &Sample, sub: &SubPolicy, rng: &mut R, pool: &[Sample]) -> Result<Sample> {
    let first = apply_op(s, &sub.ops[0], rng, pool)?;
    apply_op(&first, &sub.ops[1], rng, pool)
}

/// Picks one of the five sub-policies uniformly and applies it; also returns
/// the chosen index.
pub fn apply_policy_indexed<R: Rng + ?Sized>(
    s: &Sample,
    p: &Policy,
    rng: &mut R,
    pool: &[Sample],
) -> Result<(Sample, usize)> {
    let idx = rng.random_range(0..p.subs.len());
    Ok((apply_subpolicy(s, &p.subs[idx], rng, pool)?, idx))
}

pub fn apply_policy<R: Rng + ?Sized>(s: &Sample, p: &Policy, rng: &mut R, pool: &[Sample]) -> Result<Sample> {
    Ok(apply_policy_indexed(s, p, rng, pool)?.0)
}
