use std::hint::black_box;
use std::path::{Path, PathBuf};

use anyhow::{ensure, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use afpnkit_core::augment::{apply_policy, Sample};
use afpnkit_core::boxes::{nms, BBox, Detection, NmsMode};
use afpnkit_core::metrics::{fps_benchmark, FpsReport};
use afpnkit_core::neck::check::synthetic_inputs;
use afpnkit_core::neck::{aam_forward, affpn_forward, fem_forward, init_weights, lateral, Init};
use afpnkit_core::search::uniform_policy;
use afpnkit_core::tensor::Tensor;
use afpnkit_core::weights::WeightStore;

use super::aug::load_policy;
use super::neck::load_weights;
use crate::config::RunConfig;
use crate::output::emit;
use crate::{Component, Status};

/// Detections fed to the NMS benchmark.
const NMS_CANDIDATES: usize = 2000;

pub struct BenchArgs {
    pub component: Component,
    pub weights: Option<PathBuf>,
    pub policy: Option<PathBuf>,
    pub input_size: usize,
    pub warmup: usize,
    pub iters: usize,
    pub seed: u64,
}

#[derive(Debug, Serialize)]
struct BenchReport {
    component: &'static str,
    input_size: usize,
    seed: u64,
    /// Shape of the measured call's main input.
    input_shape: [usize; 4],
    timing: FpsReport,
}

fn component_name(c: Component) -> &'static str {
    match c {
        Component::Neck => "neck",
        Component::Aam => "aam",
        Component::Fem => "fem",
        Component::Nms => "nms",
        Component::Policy => "policy",
    }
}

fn random_detections(rng: &mut ChaCha8Rng, extent: f64) -> Vec<Detection> {
    (0..NMS_CANDIDATES)
        .map(|_| {
            let w = rng.random_range(4.0..extent / 4.0);
            let h = rng.random_range(4.0..extent / 4.0);
            Detection {
                bbox: BBox::new(rng.random_range(0.0..extent), rng.random_range(0.0..extent), w, h)
                    .expect("positive extents"),
                class_id: rng.random_range(0..4),
                score: rng.random(),
            }
        })
        .collect()
}

fn random_sample(rng: &mut ChaCha8Rng, size: usize) -> Result<Sample> {
    let image = Tensor::from_fn([1, 3, size, size], |_, _, _, _| rng.random::<f32>())?;
    let s = size as f64;
    let boxes = (0..4)
        .map(|k| {
            let b = BBox::new(rng.random_range(0.2 * s..0.8 * s), rng.random_range(0.2 * s..0.8 * s), s / 8.0, s / 8.0)
                .expect("positive extents");
            afpnkit_core::augment::LabeledBox::new(b, k)
        })
        .collect();
    Ok(Sample::new(image, boxes)?)
}

pub fn bench(cfg: &RunConfig, args: &BenchArgs, out: Option<&Path>) -> Result<Status> {
    ensure!(args.input_size >= 32, "bench input size must be >= 32");
    let neck = &cfg.neck;
    let store = || -> Result<WeightStore> {
        match &args.weights {
            Some(p) => load_weights(neck, p),
            None => Ok(init_weights(neck, Init::Random { seed: args.seed })?),
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let (input_shape, timing) = match args.component {
        Component::Neck => {
            let w = store()?;
            let c = synthetic_inputs(neck, args.input_size, args.seed)?;
            let timing = fps_benchmark(
                || {
                    black_box(affpn_forward(&c[0], &c[1], &c[2], &c[3], neck, &w).expect("neck forward"));
                },
                args.warmup,
                args.iters,
            )?;
            (c[0].shape().dims(), timing)
        }
        Component::Aam => {
            let w = store()?;
            let c = synthetic_inputs(neck, args.input_size, args.seed)?;
            let root = w.view();
            let aam = root.scope("aam");
            let timing = fps_benchmark(
                || {
                    let m5 = lateral(&c[3], 5, neck, &root).expect("lateral");
                    black_box(aam_forward(&c[3], &m5, &neck.aam, &aam).expect("aam forward"));
                },
                args.warmup,
                args.iters,
            )?;
            (c[3].shape().dims(), timing)
        }
        Component::Fem => {
            let w = store()?;
            let s = afpnkit_core::neck::level_sizes(args.input_size)[0];
            let x = Tensor::from_fn([1, neck.width, s, s], |_, _, _, _| rng.random_range(-1.0..1.0))?;
            let view = w.view().scope("fem.l2");
            let timing = fps_benchmark(
                || {
                    black_box(fem_forward(&x, &neck.fem, &view).expect("fem forward"));
                },
                args.warmup,
                args.iters,
            )?;
            (x.shape().dims(), timing)
        }
        Component::Nms => {
            let dets = random_detections(&mut rng, args.input_size as f64);
            let timing = fps_benchmark(
                || {
                    black_box(nms(&dets, 0.5, NmsMode::Greedy).expect("nms"));
                },
                args.warmup,
                args.iters,
            )?;
            ([NMS_CANDIDATES, 1, 1, 4], timing)
        }
        Component::Policy => {
            let policy = match &args.policy {
                Some(p) => load_policy(p)?,
                None => uniform_policy(&mut rng),
            };
            let sample = random_sample(&mut rng, args.input_size)?;
            let pool = (0..3).map(|_| random_sample(&mut rng, args.input_size)).collect::<Result<Vec<_>>>()?;
            let mut draw = ChaCha8Rng::seed_from_u64(args.seed ^ 1);
            let timing = fps_benchmark(
                || {
                    black_box(apply_policy(&sample, &policy, &mut draw, &pool).expect("policy"));
                },
                args.warmup,
                args.iters,
            )?;
            (sample.image.shape().dims(), timing)
        }
    };
    let report = BenchReport {
        component: component_name(args.component),
        input_size: args.input_size,
        seed: args.seed,
        input_shape,
        timing,
    };
    emit(&report, out)?;
    Ok(Status::Pass)
}
