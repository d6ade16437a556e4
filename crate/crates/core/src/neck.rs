//! Forward pass of the attention/enhancement feature pyramid neck.
//!
//! The top backbone map C5 is laterally projected to M5 and enriched by the
//! adaptive attention module (AAM) into M6, which serves as P5. The top-down
//! path then fuses each lower level with the upsampled level above and passes
//! the sum through the feature enhancement module (FEM): parallel dilated 3x3
//! branches (batch-norm, ReLU) averaged together.
//!
//! Parameter names used in the [`WeightStore`]:
//!
//! | name | shape |
//! |------|-------|
//! | `lateral.l{2,3,4,5}.kernel` / `.bias` | `(width, C_i, 1, 1)` / `(1, 1, 1, width)` |
//! | `aam.context{0,1,2}.conv.kernel` / `.bias` | `(mid, C5, 1, 1)` / `(1, 1, 1, mid)` |
//! | `aam.attn.conv1.kernel` / `.bias` | `(hidden, 3 * mid, 1, 1)` / `(1, 1, 1, hidden)` |
//! | `aam.attn.conv2.kernel` / `.bias` | `(3, hidden, 3, 3)` / `(1, 1, 1, 3)` |
//! | `fem.l{2,3,4}.branch{j}.conv.kernel` / `.bias` | `(width, width, k, k)` / `(1, 1, 1, width)` |
//! | `fem.l{2,3,4}.branch{j}.bn.{gamma,beta,mean,var}` | `(1, 1, 1, width)` |

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{
    add, adaptive_avg_pool, bilinear_upsample, concat_channels, conv2d, hadamard, mean_over,
    relu, sigmoid, slice_channels, ConvSpec, Shape, Tensor,
};
use crate::weights::{WeightStore, WeightView};

pub mod check;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AamConfig {
    /// Pooling ratios, each in `[0.1, 0.5]`, strictly increasing.
    pub betas: [f64; 3],
    pub mid_channels: usize,
    /// Width of the 1x1 conv inside the attention head.
    pub attn_hidden: usize,
}

impl Default for AamConfig {
    fn default() -> Self {
        AamConfig {
            betas: [0.1, 0.3, 0.5],
            mid_channels: 256,
            attn_hidden: 256,
        }
    }
}

impl AamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.betas.iter().any(|b| !(0.1..=0.5).contains(b)) {
            return Err(Error::invalid(format!("AAM betas {:?} must lie in [0.1, 0.5]", self.betas)));
        }
        if !self.betas.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::invalid(format!(
                "AAM betas {:?} must be strictly increasing",
                self.betas
            )));
        }
        if self.mid_channels == 0 || self.attn_hidden == 0 {
            return Err(Error::invalid("AAM channel widths must be >= 1"));
        }
        Ok(())
    }

    /// `round(beta * dim)`, at least 1 and at most `dim`.
    pub fn pooled_size(beta: f64, dim: usize) -> usize {
        ((beta * dim as f64).round() as usize).clamp(1, dim)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FemMode {
    /// Average all branches.
    Train,
    /// Run only `infer_branch`.
    Infer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FemConfig {
    pub kernel: usize,
    pub dilations: Vec<usize>,
    pub mode: FemMode,
    pub infer_branch: usize,
    pub bn_eps: f32,
}

impl Default for FemConfig {
    fn default() -> Self {
        FemConfig {
            kernel: 3,
            dilations: vec![1, 3, 5],
            mode: FemMode::Train,
            infer_branch: 1,
            bn_eps: 1e-5,
        }
    }
}

impl FemConfig {
    pub fn branch_count(&self) -> usize {
        self.dilations.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.kernel.is_multiple_of(2) {
            return Err(Error::invalid(format!("FEM kernel must be odd, got {}", self.kernel)));
        }
        if self.dilations.is_empty() || self.dilations.contains(&0) {
            return Err(Error::invalid("FEM dilations must be non-empty and positive"));
        }
        let mut sorted = self.dilations.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.dilations.len() {
            return Err(Error::invalid(format!("FEM dilations {:?} must be distinct", self.dilations)));
        }
        if self.infer_branch >= self.dilations.len() {
            return Err(Error::invalid(format!(
                "FEM infer branch {} out of range for {} branches",
                self.infer_branch,
                self.dilations.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeckConfig {
    /// Accepted for completeness; the pyramid consumes C2..C5 only.
    pub c1_channels: Option<usize>,
    /// Channel counts of C2, C3, C4, C5.
    pub in_channels: [usize; 4],
    /// Pyramid width shared by every output level.
    pub width: usize,
    pub aam: AamConfig,
    pub fem: FemConfig,
}

impl Default for NeckConfig {
    fn default() -> Self {
        NeckConfig {
            c1_channels: None,
            in_channels: [64, 128, 256, 512],
            width: 256,
            aam: AamConfig::default(),
            fem: FemConfig::default(),
        }
    }
}

impl NeckConfig {
    /// A config with every channel count scaled to `width`-proportional values,
    /// convenient for quick checks.
    pub fn compact(width: usize) -> Self {
        NeckConfig {
            in_channels: [width / 2, width, width * 2, width * 4].map(|c| c.max(1)),
            width,
            aam: AamConfig {
                mid_channels: width,
                attn_hidden: width,
                ..AamConfig::default()
            },
            ..NeckConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels.contains(&0) || self.width == 0 {
            return Err(Error::invalid("neck channel counts must be >= 1"));
        }
        if self.aam.mid_channels != self.width {
            return Err(Error::invalid(format!(
                "AAM context width {} must equal pyramid width {} so contexts add onto M5",
                self.aam.mid_channels, self.width
            )));
        }
        self.aam.validate()?;
        self.fem.validate()
    }

    /// Every parameter the forward pass reads, with its shape.
    pub fn parameter_shapes(&self) -> Vec<(String, Shape)> {
        let vec = |len: usize| Shape::new(1, 1, 1, len);
        let mut out = Vec::new();
        let mut conv = |prefix: String, o: usize, i: usize, k: usize| {
            out.push((format!("{prefix}.kernel"), Shape::new(o, i, k, k)));
            out.push((format!("{prefix}.bias"), vec(o)));
        };
        for (level, &c) in (2..=5).zip(&self.in_channels) {
            conv(format!("lateral.l{level}"), self.width, c, 1);
        }
        let mid = self.aam.mid_channels;
        for i in 0..3 {
            conv(format!("aam.context{i}.conv"), mid, self.in_channels[3], 1);
        }
        conv("aam.attn.conv1".into(), self.aam.attn_hidden, 3 * mid, 1);
        conv("aam.attn.conv2".into(), 3, self.aam.attn_hidden, 3);
        for level in 2..=4 {
            for j in 0..self.fem.branch_count() {
                conv(format!("fem.l{level}.branch{j}.conv"), self.width, self.width, self.fem.kernel);
            }
        }
        for level in 2..=4 {
            for j in 0..self.fem.branch_count() {
                for p in ["gamma", "beta", "mean", "var"] {
                    out.push((format!("fem.l{level}.branch{j}.bn.{p}"), vec(self.width)));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    /// Uniform conv weights in `±1/sqrt(fan_in)`, near-identity batch-norm.
    Random { seed: u64 },
}

/// Fresh weights covering every name in [`NeckConfig::parameter_shapes`].
pub fn init_weights(cfg: &NeckConfig, init: Init) -> Result<WeightStore> {
    let mut store = WeightStore::new();
    let mut rng = match init {
        Init::Random { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        Init::Zeros => None,
    };
    let shapes = cfg.parameter_shapes();
    let kernel_fan_in = |name: &str| -> Option<usize> {
        let kname = name.strip_suffix(".bias")?.to_string() + ".kernel";
        shapes
            .iter()
            .find(|(n, _)| *n == kname)
            .map(|(_, s)| s.c * s.h * s.w)
    };
    for (name, shape) in &shapes {
        let t = match rng.as_mut() {
            None => Tensor::zeros(*shape)?,
            Some(rng) => {
                let (lo, hi) = if name.ends_with(".kernel") {
                    let bound = 1.0 / ((shape.c * shape.h * shape.w) as f32).sqrt();
                    (-bound, bound)
                } else if let Some(fan_in) = kernel_fan_in(name) {
                    let bound = 1.0 / (fan_in as f32).sqrt();
                    (-bound, bound)
                } else if name.ends_with(".gamma") || name.ends_with(".var") {
                    (0.5, 1.5)
                } else {
                    (-0.1, 0.1)
                };
                Tensor::from_fn(*shape, |_, _, _, _| rng.random_range(lo..hi))?
            }
        };
        store.insert(name.clone(), t);
    }
    Ok(store)
}

fn conv_from(view: &WeightView<'_>, out_c: usize, in_c: usize, k: usize, dilation: usize) -> Result<ConvSpec> {
    let kernel = view.expect("kernel", [out_c, in_c, k, k])?.clone();
    let bias = view.vector("bias", out_c)?.to_vec();
    let pad = dilation * (k - 1) / 2;
    ConvSpec::new(kernel, bias, 1, pad, dilation)
}

fn expect_channels(op: &'static str, t: &Tensor, c: usize) -> Result<()> {
    let s = t.shape();
    if s.c != c {
        return Err(Error::DimensionMismatch {
            op,
            left: s,
            right: Shape::new(s.n, c, s.h, s.w),
        });
    }
    Ok(())
}

/// Intermediate values of one AAM pass.
#[derive(Debug, Clone)]
pub struct AamTrace {
    /// `(h, w)` of each pooled context before projection.
    pub pooled_sizes: Vec<(usize, usize)>,
    /// Projected contexts upsampled back to the size of C5.
    pub contexts: Vec<Tensor>,
    /// Sigmoid weight map with one channel per context.
    pub attention: Tensor,
    pub m6: Tensor,
}

pub fn aam_forward(c5: &Tensor, m5: &Tensor, cfg: &AamConfig, weights: &WeightView<'_>) -> Result<Tensor> {
    Ok(aam_forward_traced(c5, m5, cfg, weights)?.m6)
}

pub fn aam_forward_traced(
    c5: &Tensor,
    m5: &Tensor,
    cfg: &AamConfig,
    weights: &WeightView<'_>,
) -> Result<AamTrace> {
    cfg.validate()?;
    let s = c5.shape();
    let ms = m5.shape();
    if (ms.n, ms.h, ms.w) != (s.n, s.h, s.w) || ms.c != cfg.mid_channels {
        return Err(Error::DimensionMismatch {
            op: "aam_forward",
            left: s,
            right: ms,
        });
    }

    let mut pooled_sizes = Vec::with_capacity(3);
    let mut contexts = Vec::with_capacity(3);
    for (i, &beta) in cfg.betas.iter().enumerate() {
        let ph = AamConfig::pooled_size(beta, s.h);
        let pw = AamConfig::pooled_size(beta, s.w);
        pooled_sizes.push((ph, pw));
        let pooled = adaptive_avg_pool(c5, ph, pw)?;
        let proj = conv2d(
            &pooled,
            &conv_from(&weights.scope(&format!("context{i}.conv")), cfg.mid_channels, s.c, 1, 1)?,
        )?;
        contexts.push(bilinear_upsample(&proj, s.h, s.w)?);
    }

    let merged = concat_channels(&contexts.iter().collect::<Vec<_>>())?;
    let attn = weights.scope("attn");
    let hidden = relu(&conv2d(
        &merged,
        &conv_from(&attn.scope("conv1"), cfg.attn_hidden, 3 * cfg.mid_channels, 1, 1)?,
    )?);
    let attention = sigmoid(&conv2d(&hidden, &conv_from(&attn.scope("conv2"), 3, cfg.attn_hidden, 3, 1)?)?);

    let mut m6 = m5.clone();
    for (i, ctx) in contexts.iter().enumerate() {
        let w = slice_channels(&attention, i..i + 1)?;
        m6 = add(&m6, &hadamard(ctx, &w)?)?;
    }
    Ok(AamTrace {
        pooled_sizes,
        contexts,
        attention,
        m6,
    })
}

/// Per-channel `gamma * (x - mean) / sqrt(var + eps) + beta` with frozen statistics.
pub fn batch_norm(x: &Tensor, weights: &WeightView<'_>, eps: f32) -> Result<Tensor> {
    let s = x.shape();
    let gamma = weights.vector("gamma", s.c)?;
    let beta = weights.vector("beta", s.c)?;
    let mean = weights.vector("mean", s.c)?;
    let var = weights.vector("var", s.c)?;
    let scale: Vec<f32> = (0..s.c).map(|c| gamma[c] / (var[c] + eps).sqrt()).collect();
    let mut data = x.data().to_vec();
    for (idx, chunk) in data.chunks_mut(s.plane()).enumerate() {
        let c = idx % s.c;
        for v in chunk {
            *v = (*v - mean[c]) * scale[c] + beta[c];
        }
    }
    Tensor::new(s, data)
}

fn fem_branch(x: &Tensor, cfg: &FemConfig, weights: &WeightView<'_>, j: usize) -> Result<Tensor> {
    let c = x.shape().c;
    let branch = weights.scope(&format!("branch{j}"));
    let spec = conv_from(&branch.scope("conv"), c, c, cfg.kernel, cfg.dilations[j])?;
    let y = conv2d(x, &spec)?;
    Ok(relu(&batch_norm(&y, &branch.scope("bn"), cfg.bn_eps)?))
}

/// Feature enhancement: dilated branches averaged in train mode, or the single
/// configured branch in infer mode. `weights` is scoped to one level, e.g. `fem.l3`.
pub fn fem_forward(x: &Tensor, cfg: &FemConfig, weights: &WeightView<'_>) -> Result<Tensor> {
    cfg.validate()?;
    match cfg.mode {
        FemMode::Infer => fem_branch(x, cfg, weights, cfg.infer_branch),
        FemMode::Train => {
            let branches = (0..cfg.branch_count())
                .map(|j| fem_branch(x, cfg, weights, j))
                .collect::<Result<Vec<_>>>()?;
            mean_over(&branches.iter().collect::<Vec<_>>())
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PyramidOutputs {
    pub p2: Tensor,
    pub p3: Tensor,
    pub p4: Tensor,
    pub p5: Tensor,
}

impl PyramidOutputs {
    pub fn levels(&self) -> [&Tensor; 4] {
        [&self.p2, &self.p3, &self.p4, &self.p5]
    }
}

/// 1x1 lateral projection of backbone level `level` (2..=5) to the pyramid width.
pub fn lateral(c: &Tensor, level: usize, cfg: &NeckConfig, weights: &WeightView<'_>) -> Result<Tensor> {
    let in_c = cfg.in_channels[level - 2];
    expect_channels("lateral", c, in_c)?;
    conv2d(c, &conv_from(&weights.scope(&format!("lateral.l{level}")), cfg.width, in_c, 1, 1)?)
}

fn halves(op: &'static str, big: &Tensor, small: &Tensor) -> Result<()> {
    let (b, s) = (big.shape(), small.shape());
    let ok = |x: usize, y: usize| x == 2 * y || x + 1 == 2 * y;
    if b.n != s.n || !ok(b.h, s.h) || !ok(b.w, s.w) {
        return Err(Error::DimensionMismatch { op, left: b, right: s });
    }
    Ok(())
}

pub fn affpn_forward(
    c2: &Tensor,
    c3: &Tensor,
    c4: &Tensor,
    c5: &Tensor,
    cfg: &NeckConfig,
    weights: &WeightStore,
) -> Result<PyramidOutputs> {
    Ok(affpn_forward_traced(c2, c3, c4, c5, cfg, weights)?.0)
}

/// Full neck pass that also returns the AAM intermediates.
pub fn affpn_forward_traced(
    c2: &Tensor,
    c3: &Tensor,
    c4: &Tensor,
    c5: &Tensor,
    cfg: &NeckConfig,
    weights: &WeightStore,
) -> Result<(PyramidOutputs, AamTrace)> {
    cfg.validate()?;
    halves("affpn_forward: C2/C3 spatial chain", c2, c3)?;
    halves("affpn_forward: C3/C4 spatial chain", c3, c4)?;
    halves("affpn_forward: C4/C5 spatial chain", c4, c5)?;
    let root = weights.view();

    let m5 = lateral(c5, 5, cfg, &root)?;
    let trace = aam_forward_traced(c5, &m5, &cfg.aam, &root.scope("aam"))?;
    let p5 = trace.m6.clone();

    let mut above = p5.clone();
    let mut outs = Vec::with_capacity(3);
    for (level, c) in [(4, c4), (3, c3), (2, c2)] {
        let s = c.shape();
        let fused = add(&lateral(c, level, cfg, &root)?, &bilinear_upsample(&above, s.h, s.w)?)?;
        let p = fem_forward(&fused, &cfg.fem, &root.scope(&format!("fem.l{level}")))?;
        outs.push(p.clone());
        above = p;
    }
    let p2 = outs.pop().expect("three levels");
    let p3 = outs.pop().expect("three levels");
    let p4 = outs.pop().expect("three levels");
    Ok((PyramidOutputs { p2, p3, p4, p5 }, trace))
}

/// Receptive field of a dilated convolution: `d*(k-1)+1`, or `d*(k-1)+r_prev`
/// when stacked on a layer with receptive field `r_prev`.
pub fn effective_receptive_field(k: usize, d: usize, r_prev: Option<usize>) -> usize {
    d * (k - 1) + r_prev.unwrap_or(1)
}

/// Spatial sizes of C2..C5 for a square input (strides 4, 8, 16, 32, rounding up).
pub fn level_sizes(input: usize) -> [usize; 4] {
    [4, 8, 16, 32].map(|s| input.div_ceil(s))
}
