//! Toy proxy reward: nearest-centroid classification of procedurally drawn
//! shapes. Training shapes sit at the image center; validation shapes are
//! shifted and rescaled in intensity, so policies that teach that variation
//! score higher.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::augment::{apply_policy, LabeledBox, Policy, Sample};
use crate::boxes::BBox;
use crate::error::Result;
use crate::search::RewardEvaluator;
use crate::tensor::Tensor;

const CLASSES: usize = 3;
const VALIDATION_SEED: u64 = 0x7a11_da7a;

#[derive(Debug, Clone, PartialEq)]
pub struct ProxyEvaluator {
    pub size: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    /// Augmented copies drawn per training image.
    pub copies: usize,
    train: Vec<Sample>,
    val: Vec<(Vec<f64>, usize)>,
}

impl Default for ProxyEvaluator {
    fn default() -> Self {
        Self::new(16, 4, 12, 3)
    }
}

/// Square, hollow square or plus sign of half-width `r` centered at `(cy, cx)`.
fn draw(class: usize, size: usize, cy: i64, cx: i64, r: i64, fg: f32) -> Sample {
    let inside = |y: i64, x: i64| {
        let (dy, dx) = ((y - cy).abs(), (x - cx).abs());
        match class {
            0 => dy <= r && dx <= r,
            1 => dy <= r && dx <= r && (dy >= r - 1 || dx >= r - 1),
            _ => (dy <= r && dx <= 1) || (dx <= r && dy <= 1),
        }
    };
    let image = Tensor::from_fn([1, 3, size, size], |_, _, y, x| if inside(y as i64, x as i64) { fg } else { 0.2 })
        .expect("valid shape");
    let lo = |c: i64| (c - r).max(0) as f64;
    let hi = |c: i64| ((c + r + 1) as f64).min(size as f64);
    let bbox = BBox::from_corners(lo(cx), lo(cy), hi(cx), hi(cy)).expect("shape is inside the canvas");
    Sample::new(image, vec![LabeledBox::new(bbox, class as u32)]).expect("rgb sample")
}

fn features(s: &Sample) -> Vec<f64> {
    let sh = s.image.shape();
    let mut f: Vec<f64> = (0..sh.h * sh.w)
        .map(|i| (0..3).map(|c| s.image.plane(0, c)[i] as f64).sum::<f64>() / 3.0)
        .collect();
    let mean = f.iter().sum::<f64>() / f.len() as f64;
    f.iter_mut().for_each(|v| *v -= mean);
    let norm = f.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    f.iter_mut().for_each(|v| *v /= norm);
    f
}

impl ProxyEvaluator {
    pub fn new(size: usize, train_per_class: usize, val_per_class: usize, copies: usize) -> Self {
        let size = size.max(12);
        let c = size as i64 / 2;
        let r = size as i64 / 5;
        let train = (0..CLASSES * train_per_class.max(1))
            .map(|i| draw(i % CLASSES, size, c, c, r, 0.9))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(VALIDATION_SEED);
        let shift = size as i64 / 4;
        let val = (0..CLASSES * val_per_class.max(1))
            .map(|i| {
                let class = i % CLASSES;
                let cy = c + rng.random_range(-shift..=shift);
                let cx = c + rng.random_range(-shift..=shift);
                let fg = rng.random_range(0.5..1.0);
                (features(&draw(class, size, cy, cx, r, fg)), class)
            })
            .collect();
        ProxyEvaluator { size, train_per_class, val_per_class, copies, train, val }
    }
}

impl RewardEvaluator for ProxyEvaluator {
    fn evaluate(&self, policy: &Policy, seed: u64) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = self.size * self.size;
        let mut sums = vec![vec![0.0; dim]; CLASSES];
        for (i, s) in self.train.iter().enumerate() {
            let class = s.boxes[0].class_id as usize;
            let pool: Vec<Sample> = self.train.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, t)| t.clone()).collect();
            let mut add = |f: Vec<f64>| sums[class].iter_mut().zip(f).for_each(|(a, b)| *a += b);
            add(features(s));
            for _ in 0..self.copies {
                add(features(&apply_policy(s, policy, &mut rng, &pool)?));
            }
        }
        let correct = self
            .val
            .iter()
            .filter(|(f, class)| {
                let dist = |c: &Vec<f64>| {
                    let n = c.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                    c.iter().zip(f).map(|(a, b)| (a / n - b).powi(2)).sum::<f64>()
                };
                let pred = (0..CLASSES)
                    .min_by(|&a, &b| dist(&sums[a]).total_cmp(&dist(&sums[b])))
                    .expect("classes");
                pred == *class
            })
            .count();
        Ok(correct as f64 / self.val.len() as f64)
    }
}
