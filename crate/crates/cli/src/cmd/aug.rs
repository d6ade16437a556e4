use std::path::Path;

use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use afpnkit_core::augment::{apply_policy, Policy, Sample};

use crate::dataset::{encode_png, load_samples, round_coord, AnnotationSet, GtRecord, ImageRecord};
use crate::output::{to_json, write_file};
use crate::Status;

/// Number of following samples (cyclically) offered to mixing ops.
pub const POOL_SIZE: usize = 3;

pub fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

pub fn load_policy(path: &Path) -> Result<Policy> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading policy {}", path.display()))?;
    Policy::from_json(&text).with_context(|| format!("parsing policy {}", path.display()))
}

/// Augments every sample. Sample `i` uses RNG stream `i` and draws mixing
/// partners from samples `i+1..=i+POOL_SIZE` (mod n).
pub fn augment_all(samples: &[Sample], policy: &Policy, seed: u64) -> Result<Vec<Sample>> {
    let n = samples.len();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let pool: Vec<Sample> = (1..=POOL_SIZE).map(|k| samples[(i + k) % n].clone()).collect();
            apply_policy(&samples[i], policy, &mut sample_rng(seed, i), &pool)
                .with_context(|| format!("augmenting sample {i}"))
        })
        .collect()
}

fn annotations_for(set: &AnnotationSet, outputs: &[Sample]) -> AnnotationSet {
    let mut images = Vec::with_capacity(outputs.len());
    let mut ground_truths = Vec::new();
    for (im, s) in set.images.iter().zip(outputs) {
        images.push(ImageRecord {
            image_id: im.image_id,
            path: im.path.clone(),
            width: s.width(),
            height: s.height(),
            label_weights: s.label_weights.as_ref().map(|lw| {
                lw.iter().map(|(&c, &w)| (set.categories[c as usize].clone(), round_coord(w))).collect()
            }),
        });
        for b in &s.boxes {
            ground_truths.push(GtRecord {
                image_id: im.image_id,
                bbox: b.bbox.corners().map(round_coord),
                class: set.categories[b.class_id as usize].clone(),
                weight: round_coord(b.weight),
            });
        }
    }
    AnnotationSet { categories: set.categories.clone(), images, ground_truths }
}

pub fn aug(annotations: &Path, policy: &Path, seed: u64, out: Option<&Path>) -> Result<Status> {
    let Some(out) = out else {
        bail!("aug needs --out DIR");
    };
    let policy = load_policy(policy)?;
    let set = AnnotationSet::load(annotations)?;
    let root = annotations.parent().unwrap_or(Path::new(""));
    let samples = load_samples(&set, root)?;
    let outputs = augment_all(&samples, &policy, seed)?;
    for (im, s) in set.images.iter().zip(&outputs) {
        write_file(&out.join(&im.path), &encode_png(&s.image)?)?;
    }
    let updated = annotations_for(&set, &outputs);
    write_file(&out.join("annotations.json"), &to_json(&updated)?)?;
    eprintln!("augmented {} image(s) into {}", outputs.len(), out.display());
    Ok(Status::Pass)
}
