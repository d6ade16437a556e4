//! Second route through the neck, wired by hand from tensor primitives, plus the
//! self-check report built on it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{aam_forward_traced, fem_forward, level_sizes, AamTrace, FemConfig, FemMode, NeckConfig, PyramidOutputs};
use crate::error::Result;
use crate::tensor::{add, bilinear_upsample, conv2d, ConvSpec, Tensor};
use crate::weights::{WeightStore, WeightView};

fn conv1x1(x: &Tensor, view: &WeightView<'_>) -> Result<Tensor> {
    let kernel = view.get("kernel")?.clone();
    let bias = view.get("bias")?.data().to_vec();
    conv2d(x, &ConvSpec::new(kernel, bias, 1, 0, 1)?)
}

/// FEM rebuilt with explicit per-element loops for batch-norm, ReLU and the
/// branch mean.
pub fn fem_reference(x: &Tensor, cfg: &FemConfig, view: &WeightView<'_>) -> Result<Tensor> {
    let s = x.shape();
    let branches: Vec<usize> = match cfg.mode {
        FemMode::Train => (0..cfg.dilations.len()).collect(),
        FemMode::Infer => vec![cfg.infer_branch],
    };
    let mut outs = Vec::with_capacity(branches.len());
    for &j in &branches {
        let b = view.scope(&format!("branch{j}"));
        let d = cfg.dilations[j];
        let kernel = b.get("conv.kernel")?.clone();
        let bias = b.get("conv.bias")?.data().to_vec();
        let y = conv2d(x, &ConvSpec::new(kernel, bias, 1, d * (cfg.kernel - 1) / 2, d)?)?;
        let (g, be, m, v) = (
            b.get("bn.gamma")?.data(),
            b.get("bn.beta")?.data(),
            b.get("bn.mean")?.data(),
            b.get("bn.var")?.data(),
        );
        let out = Tensor::from_fn(s, |n, c, yy, xx| {
            let scale = g[c] / (v[c] + cfg.bn_eps).sqrt();
            ((y.at(n, c, yy, xx) - m[c]) * scale + be[c]).max(0.0)
        })?;
        outs.push(out);
    }
    let count = outs.len() as f64;
    Tensor::from_fn(s, |n, c, yy, xx| {
        let mut acc = 0f64;
        for o in &outs {
            acc += o.at(n, c, yy, xx) as f64;
        }
        (acc / count) as f32
    })
}

/// Largest deviation of `M6` from `M5 + sum_i attention_i * F_i`, recomputed
/// elementwise from the trace.
pub fn aam_residual(trace: &AamTrace, m5: &Tensor) -> f32 {
    let s = m5.shape();
    let mut worst = 0f32;
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..s.h {
                for x in 0..s.w {
                    let mut acc = m5.at(n, c, y, x);
                    for (i, f) in trace.contexts.iter().enumerate() {
                        acc += f.at(n, c, y, x) * trace.attention.at(n, i, y, x);
                    }
                    worst = worst.max((trace.m6.at(n, c, y, x) - acc).abs());
                }
            }
        }
    }
    worst
}

#[derive(Debug, Clone)]
pub struct Recomposed {
    pub outputs: PyramidOutputs,
    pub m5: Tensor,
    pub trace: AamTrace,
    /// Max |fem_forward - fem_reference| over the three fused levels.
    pub fem_residual: f32,
}

/// Recomputes the full top-down pass level by level.
pub fn recompose_forward(
    inputs: [&Tensor; 4],
    cfg: &NeckConfig,
    weights: &WeightStore,
) -> Result<Recomposed> {
    let root = weights.view();
    let [c2, c3, c4, c5] = inputs;

    let m5 = conv1x1(c5, &root.scope("lateral.l5"))?;
    let trace = aam_forward_traced(c5, &m5, &cfg.aam, &root.scope("aam"))?;
    let p5 = trace.m6.clone();

    let mut fem_residual = 0f32;
    let mut level = |c: &Tensor, above: &Tensor, l: usize| -> Result<Tensor> {
        let s = c.shape();
        let lat = conv1x1(c, &root.scope(&format!("lateral.l{l}")))?;
        let fused = add(&lat, &bilinear_upsample(above, s.h, s.w)?)?;
        let view = root.scope(&format!("fem.l{l}"));
        let reference = fem_reference(&fused, &cfg.fem, &view)?;
        let fast = fem_forward(&fused, &cfg.fem, &view)?;
        fem_residual = fem_residual.max(fast.max_abs_diff(&reference)?);
        Ok(reference)
    };
    let p4 = level(c4, &p5, 4)?;
    let p3 = level(c3, &p4, 3)?;
    let p2 = level(c2, &p3, 2)?;
    Ok(Recomposed {
        outputs: PyramidOutputs { p2, p3, p4, p5 },
        m5,
        trace,
        fem_residual,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeckCheckReport {
    pub input_size: usize,
    pub seed: u64,
    pub input_shapes: Vec<[usize; 4]>,
    pub output_shapes: Vec<[usize; 4]>,
    pub expected_sizes: [usize; 4],
    pub attention_min: f32,
    pub attention_max: f32,
    pub residual_aam: f32,
    pub residual_fem: f32,
    pub residual_neck: f32,
    pub tolerance: f32,
    pub finite: bool,
    pub pass: bool,
}

/// Seeded uniform `[-1, 1)` backbone maps for a square input of `input_size`.
pub fn synthetic_inputs(cfg: &NeckConfig, input_size: usize, seed: u64) -> Result<Vec<Tensor>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    level_sizes(input_size)
        .iter()
        .zip(&cfg.in_channels)
        .map(|(&s, &c)| Tensor::from_fn([1, c, s, s], |_, _, _, _| rng.random_range(-1.0..1.0)))
        .collect()
}

pub const RESIDUAL_TOLERANCE: f32 = 1e-6;

/// Runs the neck on seeded inputs and checks shapes, attention range, finiteness
/// and agreement with [`recompose_forward`].
pub fn run_neck_check(
    cfg: &NeckConfig,
    weights: &WeightStore,
    input_size: usize,
    seed: u64,
) -> Result<NeckCheckReport> {
    cfg.validate()?;
    let inputs = synthetic_inputs(cfg, input_size, seed)?;
    let (out, _trace) =
        super::affpn_forward_traced(&inputs[0], &inputs[1], &inputs[2], &inputs[3], cfg, weights)?;
    let re = recompose_forward([&inputs[0], &inputs[1], &inputs[2], &inputs[3]], cfg, weights)?;

    let mut residual_neck = 0f32;
    for (a, b) in out.levels().iter().zip(re.outputs.levels()) {
        residual_neck = residual_neck.max(a.max_abs_diff(b)?);
    }
    let (attention_min, attention_max) = re.trace.attention.min_max();
    let residual_aam = aam_residual(&re.trace, &re.m5);
    let expected_sizes = level_sizes(input_size);
    let output_shapes: Vec<[usize; 4]> = out.levels().iter().map(|t| t.shape().dims()).collect();
    let shapes_ok = output_shapes
        .iter()
        .zip(&expected_sizes)
        .all(|(s, &e)| *s == [1, cfg.width, e, e]);
    let finite = out.levels().iter().all(|t| t.is_finite());
    let pass = shapes_ok
        && finite
        && attention_min > 0.0
        && attention_max < 1.0
        && residual_aam <= RESIDUAL_TOLERANCE
        && re.fem_residual <= RESIDUAL_TOLERANCE
        && residual_neck <= RESIDUAL_TOLERANCE;
    Ok(NeckCheckReport {
        input_size,
        seed,
        input_shapes: inputs.iter().map(|t| t.shape().dims()).collect(),
        output_shapes,
        expected_sizes,
        attention_min,
        attention_max,
        residual_aam,
        residual_fem: re.fem_residual,
        residual_neck,
        tolerance: RESIDUAL_TOLERANCE,
        finite,
        pass,
    })
}
