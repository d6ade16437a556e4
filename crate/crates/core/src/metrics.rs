//! Detection evaluation: greedy matching, all-point AP, mAP@0.5, size-bucketed
//! AP, log-average miss rate and throughput measurement.
//!
//! Metrics that are undefined for the data (a class or bucket without ground
//! truth) are `None` and serialize as `null`.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::boxes::{iou, BBox};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub image_id: u64,
    pub bbox: BBox,
    pub class_id: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageDetection {
    pub image_id: u64,
    pub bbox: BBox,
    pub class_id: u32,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchFlag {
    Tp,
    Fp,
    /// Matched only a ground truth outside the evaluated subset.
    Ignored,
}

/// Indices of `dets` by descending score, ties in input order.
fn score_order(dets: &[ImageDetection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    order
}

/// Greedy matching where ground truths flagged in `ignored` never produce a
/// TP; a detection that overlaps only such ground truths is
/// [`MatchFlag::Ignored`]. Flags are returned in input order.
pub fn match_with_ignored(
    dets: &[ImageDetection],
    gts: &[GroundTruth],
    ignored: &[bool],
    iou_thr: f64,
) -> Vec<MatchFlag> {
    let mut matched = vec![false; gts.len()];
    let mut flags = vec![MatchFlag::Fp; dets.len()];
    for i in score_order(dets) {
        let d = &dets[i];
        let mut best: Option<(usize, f64)> = None;
        let mut hits_ignored = false;
        for (j, g) in gts.iter().enumerate() {
            if g.image_id != d.image_id || g.class_id != d.class_id {
                continue;
            }
            let o = iou(&d.bbox, &g.bbox);
            if o < iou_thr {
                continue;
            }
            if ignored[j] {
                hits_ignored = true;
            } else if !matched[j] && best.is_none_or(|(_, b)| o > b) {
                best = Some((j, o));
            }
        }
        flags[i] = match best {
            Some((j, _)) => {
                matched[j] = true;
                MatchFlag::Tp
            }
            None if hits_ignored => MatchFlag::Ignored,
            None => MatchFlag::Fp,
        };
    }
    flags
}

/// Per image and class, each detection (by descending score) takes the
/// unmatched ground truth of highest IoU at or above `iou_thr`.
pub fn match_detections(dets: &[ImageDetection], gts: &[GroundTruth], iou_thr: f64) -> Vec<MatchFlag> {
    match_with_ignored(dets, gts, &vec![false; gts.len()], iou_thr)
}

/// Area under the monotone precision envelope. `tp` lists detections in
/// descending score order. Zero when `n_gt` is zero.
pub fn average_precision(tp: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut precision = Vec::with_capacity(tp.len());
    let mut recall = Vec::with_capacity(tp.len());
    let mut hits = 0usize;
    for (k, &t) in tp.iter().enumerate() {
        hits += t as usize;
        precision.push(hits as f64 / (k + 1) as f64);
        recall.push(hits as f64 / n_gt as f64);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let mut ap = 0.0;
    let mut prev = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        ap += (r - prev) * p;
        prev = *r;
    }
    ap
}

/// AP of one class over the ground truths not flagged in `ignored`; `None`
/// when that subset is empty.
fn class_ap(
    dets: &[ImageDetection],
    gts: &[GroundTruth],
    ignored: &[bool],
    class_id: u32,
    iou_thr: f64,
) -> Option<f64> {
    let n_gt = gts.iter().zip(ignored).filter(|(g, &ig)| g.class_id == class_id && !ig).count();
    if n_gt == 0 {
        return None;
    }
    let class_dets: Vec<ImageDetection> = dets.iter().filter(|d| d.class_id == class_id).copied().collect();
    let flags = match_with_ignored(&class_dets, gts, ignored, iou_thr);
    let tp: Vec<bool> = score_order(&class_dets)
        .into_iter()
        .filter(|&i| flags[i] != MatchFlag::Ignored)
        .map(|i| flags[i] == MatchFlag::Tp)
        .collect();
    Some(average_precision(&tp, n_gt))
}

fn classes_of(gts: &[GroundTruth]) -> BTreeSet<u32> {
    gts.iter().map(|g| g.class_id).collect()
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Per-class AP for every class that has ground truth.
pub fn per_class_ap(dets: &[ImageDetection], gts: &[GroundTruth], iou_thr: f64) -> BTreeMap<u32, f64> {
    let ignored = vec![false; gts.len()];
    classes_of(gts)
        .into_iter()
        .filter_map(|c| class_ap(dets, gts, &ignored, c, iou_thr).map(|ap| (c, ap)))
        .collect()
}

/// Mean of per-class AP over classes with at least one ground truth.
pub fn mean_average_precision(dets: &[ImageDetection], gts: &[GroundTruth], iou_thr: f64) -> Option<f64> {
    mean(per_class_ap(dets, gts, iou_thr).into_values())
}

/// Area thresholds `[t1, t2]`: small `< t1`, medium `[t1, t2)`, large `>= t2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeBuckets(pub [f64; 2]);

impl Default for SizeBuckets {
    fn default() -> Self {
        SizeBuckets([32.0 * 32.0, 96.0 * 96.0])
    }
}

impl SizeBuckets {
    pub fn validate(&self) -> Result<()> {
        let [a, b] = self.0;
        if !(a > 0.0 && a < b && b.is_finite()) {
            return Err(Error::invalid(format!("size buckets need 0 < t1 < t2, got [{a}, {b}]")));
        }
        Ok(())
    }

    /// 0 small, 1 medium, 2 large.
    pub fn bucket(&self, area: f64) -> usize {
        if area < self.0[0] {
            0
        } else if area < self.0[1] {
            1
        } else {
            2
        }
    }
}

/// `[small, medium, large]` mAP; within a bucket, detections matching only
/// out-of-bucket ground truths are ignored rather than counted as FP.
pub fn size_bucketed_ap(
    dets: &[ImageDetection],
    gts: &[GroundTruth],
    buckets: &SizeBuckets,
    iou_thr: f64,
) -> [Option<f64>; 3] {
    [0, 1, 2].map(|b| {
        let ignored: Vec<bool> = gts.iter().map(|g| buckets.bucket(g.bbox.area()) != b).collect();
        mean(classes_of(gts).into_iter().filter_map(|c| class_ap(dets, gts, &ignored, c, iou_thr)))
    })
}

/// Nine FPPI reference points log-spaced over `[1e-2, 1]`.
pub fn fppi_references() -> [f64; 9] {
    std::array::from_fn(|i| 10f64.powf(-2.0 + i as f64 / 4.0))
}

pub const MISS_RATE_FLOOR: f64 = 1e-10;

/// `(fppi, miss_rate)` after admitting every detection scoring at or above
/// each distinct score, highest threshold first.
pub fn miss_rate_curve(tp: &[(f64, bool)], n_gt: usize, n_images: usize) -> Vec<(f64, f64)> {
    let mut sorted = tp.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut out = Vec::new();
    let (mut hits, mut fps) = (0usize, 0usize);
    for (k, &(score, t)) in sorted.iter().enumerate() {
        if t {
            hits += 1;
        } else {
            fps += 1;
        }
        let last_of_score = sorted.get(k + 1).is_none_or(|next| next.0 != score);
        if last_of_score {
            out.push((fps as f64 / n_images as f64, 1.0 - hits as f64 / n_gt as f64));
        }
    }
    out
}

/// Log-average miss rate of one class; `None` without ground truth.
///
/// For each reference FPPI the miss rate is read at the largest curve FPPI not
/// exceeding it (the lowest threshold among ties), falling back to the
/// highest-threshold point. No detections at all gives miss rate 1.
pub fn lamr(dets: &[ImageDetection], gts: &[GroundTruth], class_id: u32, n_images: usize, iou_thr: f64) -> Result<Option<f64>> {
    if n_images == 0 {
        return Err(Error::invalid("lamr needs at least one image"));
    }
    let n_gt = gts.iter().filter(|g| g.class_id == class_id).count();
    if n_gt == 0 {
        return Ok(None);
    }
    let class_dets: Vec<ImageDetection> = dets.iter().filter(|d| d.class_id == class_id).copied().collect();
    let flags = match_detections(&class_dets, gts, iou_thr);
    let scored: Vec<(f64, bool)> = class_dets.iter().zip(&flags).map(|(d, f)| (d.score, *f == MatchFlag::Tp)).collect();
    let curve = miss_rate_curve(&scored, n_gt, n_images);
    Ok(Some(lamr_from_curve(&curve)))
}

pub fn lamr_from_curve(curve: &[(f64, f64)]) -> f64 {
    let refs = fppi_references();
    let logs = refs.map(|r| {
        let m = match curve.iter().rposition(|&(f, _)| f <= r) {
            Some(i) => curve[i].1,
            None => curve.first().map_or(1.0, |p| p.1),
        };
        m.max(MISS_RATE_FLOOR).ln()
    });
    (logs.iter().sum::<f64>() / logs.len() as f64).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpsReport {
    pub fps: f64,
    pub iters: usize,
    pub warmup: usize,
    pub elapsed_s: f64,
    pub p50_ms: f64,
    pub mean_ms: f64,
}

/// Calls `work` `warmup` times unmeasured, then `iters` times under a
/// monotonic clock.
pub fn fps_benchmark(mut work: impl FnMut(), warmup: usize, iters: usize) -> Result<FpsReport> {
    if iters == 0 {
        return Err(Error::invalid("fps_benchmark needs iters >= 1"));
    }
    for _ in 0..warmup {
        work();
    }
    let mut laps: Vec<Duration> = Vec::with_capacity(iters);
    let start = Instant::now();
    for _ in 0..iters {
        let t = Instant::now();
        work();
        laps.push(t.elapsed());
    }
    let elapsed = start.elapsed().as_secs_f64();
    if elapsed <= 0.0 {
        return Err(Error::invalid("measured elapsed time is not positive"));
    }
    laps.sort();
    let ms = |d: Duration| d.as_secs_f64() * 1e3;
    let p50 = if iters % 2 == 1 {
        ms(laps[iters / 2])
    } else {
        (ms(laps[iters / 2 - 1]) + ms(laps[iters / 2])) / 2.0
    };
    Ok(FpsReport {
        fps: iters as f64 / elapsed,
        iters,
        warmup,
        elapsed_s: elapsed,
        p50_ms: p50,
        mean_ms: elapsed * 1e3 / iters as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub buckets: SizeBuckets,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { iou_threshold: 0.5, buckets: SizeBuckets::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub ap: Option<f64>,
    pub lamr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_class: BTreeMap<String, ClassMetrics>,
    pub map50: Option<f64>,
    pub ap_s: Option<f64>,
    pub ap_m: Option<f64>,
    pub ap_l: Option<f64>,
    pub fps: Option<f64>,
    pub config_echo: serde_json::Value,
}

/// Full report; `class_names[i]` names class id `i`.
pub fn evaluate(
    dets: &[ImageDetection],
    gts: &[GroundTruth],
    class_names: &[String],
    n_images: usize,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    cfg.buckets.validate()?;
    if !(cfg.iou_threshold > 0.0 && cfg.iou_threshold <= 1.0) {
        return Err(Error::invalid(format!("iou_threshold {} must lie in (0, 1]", cfg.iou_threshold)));
    }
    let known = class_names.len() as u32;
    if let Some(c) = dets.iter().map(|d| d.class_id).chain(gts.iter().map(|g| g.class_id)).find(|&c| c >= known) {
        return Err(Error::invalid(format!("class id {c} has no name ({known} classes)")));
    }
    if dets.iter().any(|d| !d.score.is_finite()) {
        return Err(Error::NonFinite("detection scores"));
    }
    let aps = per_class_ap(dets, gts, cfg.iou_threshold);
    let mut per_class = BTreeMap::new();
    for (i, name) in class_names.iter().enumerate() {
        let c = i as u32;
        let metrics = ClassMetrics {
            ap: aps.get(&c).copied(),
            lamr: lamr(dets, gts, c, n_images, cfg.iou_threshold)?,
        };
        if per_class.insert(name.clone(), metrics).is_some() {
            return Err(Error::invalid(format!("duplicate class name `{name}`")));
        }
    }
    let [ap_s, ap_m, ap_l] = size_bucketed_ap(dets, gts, &cfg.buckets, cfg.iou_threshold);
    Ok(EvalReport {
        per_class,
        map50: mean(aps.values().copied()),
        ap_s,
        ap_m,
        ap_l,
        fps: None,
        config_echo: serde_json::to_value(cfg)?,
    })
}
