//! Randomized comparison of [`ciou_grad`] against central differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::boxes::{ciou_grad, ciou_loss_with_alpha, ciou_terms, BBox};
use crate::error::{Error, Result};
use crate::tensor::finite_diff_grad;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    pub trials: usize,
    pub seed: u64,
    pub eps: f64,
    /// Pass threshold on the max relative error.
    pub tolerance: f64,
    /// Relative errors divide by `max(|numeric|, floor)`.
    pub floor: f64,
    /// Minimum distance between any two box edges on the same axis; pairs
    /// closer to a min/max switch are redrawn.
    pub kink_margin: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { trials: 1000, seed: 0, eps: 1e-5, tolerance: 1e-3, floor: 1e-4, kink_margin: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstCase {
    pub pred: [f64; 4],
    pub gt: [f64; 4],
    pub analytic: [f64; 4],
    pub numeric: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub trials: usize,
    pub seed: u64,
    pub eps: f64,
    pub tolerance: f64,
    pub rejected_draws: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst: Option<WorstCase>,
    pub pass: bool,
}

fn edges_apart(a: &BBox, b: &BBox, margin: f64) -> bool {
    let [ax0, ay0, ax1, ay1] = a.corners();
    let [bx0, by0, bx1, by1] = b.corners();
    [[ax0, ax1, bx0, bx1], [ay0, ay1, by0, by1]].iter().all(|v| {
        (0..4).all(|i| (i + 1..4).all(|j| (v[i] - v[j]).abs() >= margin))
    })
}

/// A pair away from every non-differentiable configuration; about half the
/// draws overlap.
pub fn random_differentiable_pair<R: Rng + ?Sized>(rng: &mut R, margin: f64) -> (BBox, BBox, usize) {
    let mut rejected = 0;
    loop {
        let pred = BBox::new(
            rng.random_range(0.0..100.0),
            rng.random_range(0.0..100.0),
            rng.random_range(2.0..60.0),
            rng.random_range(2.0..60.0),
        )
        .expect("positive extents");
        let gt = if rng.random::<bool>() {
            BBox::new(
                pred.x + rng.random_range(-0.5..0.5) * pred.w,
                pred.y + rng.random_range(-0.5..0.5) * pred.h,
                pred.w * rng.random_range(0.5..2.0),
                pred.h * rng.random_range(0.5..2.0),
            )
        } else {
            BBox::new(
                rng.random_range(0.0..100.0),
                rng.random_range(0.0..100.0),
                rng.random_range(2.0..60.0),
                rng.random_range(2.0..60.0),
            )
        }
        .expect("positive extents");
        if edges_apart(&pred, &gt, margin) {
            return (pred, gt, rejected);
        }
        rejected += 1;
    }
}

/// Compares `ciou_grad` (optionally scaled elementwise by `mutation`, to
/// confirm the check detects a wrong gradient) with central differences of
/// the loss at frozen `alpha`.
pub fn ciou_grad_check(cfg: &GradCheckConfig, mutation: Option<[f64; 4]>) -> Result<GradCheckReport> {
    if cfg.trials == 0 || cfg.eps.is_nan() || cfg.eps <= 0.0 {
        return Err(Error::invalid("grad check needs trials >= 1 and eps > 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradCheckReport {
        trials: cfg.trials,
        seed: cfg.seed,
        eps: cfg.eps,
        tolerance: cfg.tolerance,
        rejected_draws: 0,
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: None,
        pass: false,
    };
    for _ in 0..cfg.trials {
        let (pred, gt, rejected) = random_differentiable_pair(&mut rng, cfg.kink_margin);
        report.rejected_draws += rejected;
        let alpha = ciou_terms(&pred, &gt).alpha;
        let f = |q: &[f64]| ciou_loss_with_alpha(&BBox { x: q[0], y: q[1], w: q[2], h: q[3] }, &gt, alpha);
        let numeric = finite_diff_grad(f, &pred.params(), cfg.eps)?;
        let mut analytic = ciou_grad(&pred, &gt);
        if let Some(m) = mutation {
            analytic.iter_mut().zip(m).for_each(|(a, s)| *a *= s);
        }
        let mut worst_here = 0.0f64;
        for i in 0..4 {
            let abs = (analytic[i] - numeric[i]).abs();
            report.max_abs_error = report.max_abs_error.max(abs);
            worst_here = worst_here.max(abs / numeric[i].abs().max(cfg.floor));
        }
        if !worst_here.is_finite() {
            return Err(Error::NonFinite("gradient check"));
        }
        if worst_here > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(worst_here);
            report.worst = Some(WorstCase {
                pred: pred.params(),
                gt: gt.params(),
                analytic,
                numeric: [numeric[0], numeric[1], numeric[2], numeric[3]],
            });
        }
    }
    report.pass = report.max_rel_error <= cfg.tolerance;
    Ok(report)
}
