//! Dense rank-4 tensors in `(n, c, h, w)` row-major layout and the handful of
//! primitives the neck and augmentation code are built from.
//!
//! Every operation takes its inputs by reference and returns a fresh tensor.

use std::fmt;
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    fn validate(&self) -> Result<()> {
        if self.dims().contains(&0) {
            return Err(Error::InvalidShape(self.dims().to_vec()));
        }
        Ok(())
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

impl From<[usize; 4]> for Shape {
    fn from(d: [usize; 4]) -> Self {
        Shape::new(d[0], d[1], d[2], d[3])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: impl Into<Shape>, data: Vec<f32>) -> Result<Self> {
        let shape = shape.into();
        shape.validate()?;
        if data.len() != shape.numel() {
            return Err(Error::DataLength {
                shape,
                len: data.len(),
                expected: shape.numel(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn full(shape: impl Into<Shape>, value: f32) -> Result<Self> {
        let shape = shape.into();
        shape.validate()?;
        Ok(Tensor {
            shape,
            data: vec![value; shape.numel()],
        })
    }

    pub fn zeros(shape: impl Into<Shape>) -> Result<Self> {
        Self::full(shape, 0.0)
    }

    /// Builds a tensor by evaluating `f(n, c, y, x)` at every index.
    pub fn from_fn(
        shape: impl Into<Shape>,
        mut f: impl FnMut(usize, usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let shape = shape.into();
        shape.validate()?;
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        let s = self.shape;
        ((n * s.c + c) * s.h + y) * s.w + x
    }

    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.offset(n, c, y, x)]
    }

    /// Contiguous `h * w` plane for batch `n`, channel `c`.
    pub fn plane(&self, n: usize, c: usize) -> &[f32] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Largest absolute elementwise difference; errors if shapes differ.
    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f32> {
        self.same_shape("max_abs_diff", other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max))
    }

    fn same_shape(&self, op: &'static str, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::DimensionMismatch {
                op,
                left: self.shape,
                right: other.shape,
            });
        }
        Ok(())
    }
}

/// Convolution parameters. The kernel has shape `(out_c, in_c, kh, kw)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvSpec {
    pub kernel: Tensor,
    pub bias: Vec<f32>,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvSpec {
    pub fn new(
        kernel: Tensor,
        bias: Vec<f32>,
        stride: usize,
        padding: usize,
        dilation: usize,
    ) -> Result<Self> {
        if stride == 0 || dilation == 0 {
            return Err(Error::invalid(format!(
                "stride ({stride}) and dilation ({dilation}) must be >= 1"
            )));
        }
        if bias.len() != kernel.shape.n {
            return Err(Error::invalid(format!(
                "bias length {} does not match {} output channels",
                bias.len(),
                kernel.shape.n
            )));
        }
        Ok(ConvSpec {
            kernel,
            bias,
            stride,
            padding,
            dilation,
        })
    }

    /// Stride 1 with padding chosen to preserve spatial size for odd kernels.
    pub fn same(kernel: Tensor, bias: Vec<f32>, dilation: usize) -> Result<Self> {
        let pad = dilation * (kernel.shape.h - 1) / 2;
        Self::new(kernel, bias, 1, pad, dilation)
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape.n
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape.c
    }

    pub fn output_size(&self, in_h: usize, in_w: usize) -> Result<(usize, usize)> {
        let ks = self.kernel.shape;
        let one = |input: usize, k: usize| -> Option<usize> {
            let span = self.dilation * (k - 1) + 1;
            let padded = input + 2 * self.padding;
            (padded >= span).then(|| (padded - span) / self.stride + 1)
        };
        match (one(in_h, ks.h), one(in_w, ks.w)) {
            (Some(h), Some(w)) => Ok((h, w)),
            _ => Err(Error::invalid(format!(
                "convolution with kernel {}x{}, dilation {}, padding {} does not fit a {}x{} input",
                ks.h, ks.w, self.dilation, self.padding, in_h, in_w
            ))),
        }
    }
}

/// Upper bound on the im2col buffer of one band of output rows, in elements.
const IM2COL_BUDGET: usize = 1 << 22;

/// `c[m x n] += a[m x k] * b[k x n]`, all row-major with the given row strides.
#[allow(clippy::too_many_arguments)]
fn gemm_acc(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], rsb: usize, c: &mut [f32], rsc: usize) {
    assert!(a.len() >= m * k && (k == 0 || b.len() >= (k - 1) * rsb + n) && c.len() >= (m - 1) * rsc + n);
    // SAFETY: the assertion keeps every strided access of all three matrices in bounds.
    unsafe {
        matrixmultiply::sgemm(
            m, k, n, 1.0,
            a.as_ptr(), k as isize, 1,
            b.as_ptr(), rsb as isize, 1,
            1.0,
            c.as_mut_ptr(), rsc as isize, 1,
        );
    }
}

/// Cross-correlation with zero padding and dilation, bias added per output channel.
///
/// Lowered to a matrix product over bands of output rows (im2col).
pub fn conv2d(input: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    let is = input.shape;
    let ks = spec.kernel.shape;
    if is.c != ks.c {
        return Err(Error::DimensionMismatch {
            op: "conv2d",
            left: is,
            right: ks,
        });
    }
    let (oh, ow) = spec.output_size(is.h, is.w)?;
    let out_shape = Shape::new(is.n, ks.n, oh, ow);
    let plane = oh * ow;
    let mut out = vec![0f32; out_shape.numel()];
    for (oc, chunk) in out.chunks_mut(plane).enumerate() {
        chunk.fill(spec.bias[oc % ks.n]);
    }
    let kdim = ks.c * ks.h * ks.w;
    let weights = spec.kernel.data();
    let pointwise = ks.h == 1 && ks.w == 1 && spec.stride == 1 && spec.padding == 0;

    for (b, dst) in out.chunks_mut(ks.n * plane).enumerate() {
        let src = &input.data[b * is.plane() * is.c..(b + 1) * is.plane() * is.c];
        if pointwise {
            gemm_acc(ks.n, kdim, plane, weights, src, plane, dst, plane);
            continue;
        }
        let band = (IM2COL_BUDGET / (kdim * ow).max(1)).clamp(1, oh);
        let bands: Vec<(usize, Vec<f32>)> = (0..oh)
            .step_by(band)
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|y0| {
                let rows = band.min(oh - y0);
                let cols = im2col(src, is, spec, y0, rows, ow);
                let mut acc = vec![0f32; ks.n * rows * ow];
                gemm_acc(ks.n, kdim, rows * ow, weights, &cols, rows * ow, &mut acc, rows * ow);
                (y0, acc)
            })
            .collect();
        for (y0, acc) in bands {
            let n = acc.len() / ks.n;
            for (oc, part) in acc.chunks(n).enumerate() {
                let at = oc * plane + y0 * ow;
                for (d, s) in dst[at..at + n].iter_mut().zip(part) {
                    *d += s;
                }
            }
        }
    }
    Tensor::new(out_shape, out)
}

/// Rows `(ic, ky, kx)`, columns the output pixels of rows `y0..y0 + rows`.
fn im2col(src: &[f32], is: Shape, spec: &ConvSpec, y0: usize, rows: usize, ow: usize) -> Vec<f32> {
    let ks = spec.kernel.shape;
    let n = rows * ow;
    let mut cols = vec![0f32; ks.c * ks.h * ks.w * n];
    let (stride, dil, pad) = (spec.stride as isize, spec.dilation as isize, spec.padding as isize);
    let (ih, iw) = (is.h as isize, is.w as isize);
    let mut r = 0;
    for ic in 0..ks.c {
        let plane = &src[ic * is.plane()..(ic + 1) * is.plane()];
        for ky in 0..ks.h {
            for kx in 0..ks.w {
                let line = &mut cols[r * n..(r + 1) * n];
                r += 1;
                let off_x = kx as isize * dil - pad;
                // ox range with 0 <= ox*stride + off_x < iw
                let ox_lo = ceil_div((-off_x).max(0), stride).min(ow as isize);
                let ox_hi = if iw - 1 - off_x < 0 {
                    0
                } else {
                    ((iw - 1 - off_x) / stride + 1).min(ow as isize)
                };
                if ox_lo >= ox_hi {
                    continue;
                }
                for j in 0..rows {
                    let iy = (y0 + j) as isize * stride + ky as isize * dil - pad;
                    if iy < 0 || iy >= ih {
                        continue;
                    }
                    let row = &plane[iy as usize * is.w..(iy as usize + 1) * is.w];
                    let dst = &mut line[j * ow..(j + 1) * ow];
                    for ox in ox_lo..ox_hi {
                        dst[ox as usize] = row[(ox * stride + off_x) as usize];
                    }
                }
            }
        }
    }
    cols
}

fn ceil_div(a: isize, b: isize) -> isize {
    (a + b - 1) / b
}

/// Averages windows `[floor(i*h/oh), ceil((i+1)*h/oh))` in each spatial axis.
pub fn adaptive_avg_pool(input: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let s = input.shape;
    if out_h == 0 || out_w == 0 || out_h > s.h || out_w > s.w {
        return Err(Error::invalid(format!(
            "adaptive_avg_pool: output {out_h}x{out_w} must lie within 1x1..={}x{}",
            s.h, s.w
        )));
    }
    let win = |i: usize, inp: usize, out: usize| -> Range<usize> {
        let start = i * inp / out;
        let end = ((i + 1) * inp).div_ceil(out);
        start..end
    };
    let rows: Vec<_> = (0..out_h).map(|i| win(i, s.h, out_h)).collect();
    let cols: Vec<_> = (0..out_w).map(|j| win(j, s.w, out_w)).collect();
    Tensor::from_fn(Shape::new(s.n, s.c, out_h, out_w), |n, c, i, j| {
        let src = input.plane(n, c);
        let mut acc = 0f64;
        for y in rows[i].clone() {
            for x in cols[j].clone() {
                acc += src[y * s.w + x] as f64;
            }
        }
        (acc / (rows[i].len() * cols[j].len()) as f64) as f32
    })
}

/// Bilinear upsampling (align-corners false). Rejects any shrinking axis.
pub fn bilinear_upsample(input: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let s = input.shape;
    if out_h < s.h || out_w < s.w {
        return Err(Error::invalid(format!(
            "bilinear_upsample: cannot downsample {}x{} to {out_h}x{out_w}",
            s.h, s.w
        )));
    }
    bilinear_resize(input, out_h, out_w)
}

struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn taps(inp: usize, out: usize) -> Vec<Tap> {
    let scale = inp as f64 / out as f64;
    (0..out)
        .map(|d| {
            let src = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
            let lo = src.floor() as usize;
            Tap {
                lo,
                hi: (lo + 1).min(inp - 1),
                frac: src - lo as f64,
            }
        })
        .collect()
}

/// Bilinear resampling to any size with source coordinate `(dst + 0.5) * scale - 0.5`,
/// clamped to the valid range.
pub fn bilinear_resize(input: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let s = input.shape;
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidShape(vec![s.n, s.c, out_h, out_w]));
    }
    let ty = taps(s.h, out_h);
    let tx = taps(s.w, out_w);
    Tensor::from_fn(Shape::new(s.n, s.c, out_h, out_w), |n, c, y, x| {
        let src = input.plane(n, c);
        let (r, q) = (&ty[y], &tx[x]);
        let px = |yy: usize, xx: usize| src[yy * s.w + xx] as f64;
        let top = px(r.lo, q.lo) * (1.0 - q.frac) + px(r.lo, q.hi) * q.frac;
        let bot = px(r.hi, q.lo) * (1.0 - q.frac) + px(r.hi, q.hi) * q.frac;
        (top * (1.0 - r.frac) + bot * r.frac) as f32
    })
}

/// Stacks inputs along the channel axis, preserving order.
pub fn concat_channels(inputs: &[&Tensor]) -> Result<Tensor> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::invalid("concat_channels: empty input list"))?
        .shape;
    for t in &inputs[1..] {
        let ts = t.shape;
        if (ts.n, ts.h, ts.w) != (first.n, first.h, first.w) {
            return Err(Error::DimensionMismatch {
                op: "concat_channels",
                left: first,
                right: ts,
            });
        }
    }
    let total_c: usize = inputs.iter().map(|t| t.shape.c).sum();
    let mut data = Vec::with_capacity(first.n * total_c * first.plane());
    for n in 0..first.n {
        for t in inputs {
            let per = t.shape.c * first.plane();
            data.extend_from_slice(&t.data[n * per..(n + 1) * per]);
        }
    }
    Tensor::new(Shape::new(first.n, total_c, first.h, first.w), data)
}

/// Copies out the channels in `range`.
pub fn slice_channels(input: &Tensor, range: Range<usize>) -> Result<Tensor> {
    let s = input.shape;
    if range.start >= range.end || range.end > s.c {
        return Err(Error::invalid(format!(
            "slice_channels: range {range:?} outside 0..{}",
            s.c
        )));
    }
    let mut data = Vec::with_capacity(s.n * range.len() * s.plane());
    for n in 0..s.n {
        let a = input.offset(n, range.start, 0, 0);
        let b = a + range.len() * s.plane();
        data.extend_from_slice(&input.data[a..b]);
    }
    Tensor::new(Shape::new(s.n, range.len(), s.h, s.w), data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Hadamard,
    Relu,
    Sigmoid,
    Scale,
}

#[derive(Debug, Clone, Copy)]
pub enum Operand<'a> {
    None,
    Tensor(&'a Tensor),
    Scalar(f32),
}

pub fn sigmoid_scalar(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// Pointwise kernels. Binary kinds accept an operand of equal shape, or one with a
/// single channel that broadcasts across the channels of `a`.
pub fn elementwise(op: ElementwiseOp, a: &Tensor, b: Operand<'_>) -> Result<Tensor> {
    match (op, b) {
        (ElementwiseOp::Relu, Operand::None) => Ok(a.map(|v| v.max(0.0))),
        (ElementwiseOp::Sigmoid, Operand::None) => Ok(a.map(sigmoid_scalar)),
        (ElementwiseOp::Scale, Operand::Scalar(k)) => Ok(a.map(|v| v * k)),
        (ElementwiseOp::Add, Operand::Scalar(k)) => Ok(a.map(|v| v + k)),
        (ElementwiseOp::Add, Operand::Tensor(b)) => binary(a, b, |x, y| x + y),
        (ElementwiseOp::Hadamard, Operand::Tensor(b)) => binary(a, b, |x, y| x * y),
        (ElementwiseOp::Hadamard, Operand::Scalar(k)) => Ok(a.map(|v| v * k)),
        (op, b) => Err(Error::invalid(format!(
            "elementwise {op:?} does not accept operand {b:?}"
        ))),
    }
}

fn binary(a: &Tensor, b: &Tensor, f: impl Fn(f32, f32) -> f32) -> Result<Tensor> {
    let (sa, sb) = (a.shape, b.shape);
    if sa == sb {
        return Ok(Tensor {
            shape: sa,
            data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
        });
    }
    if sb.c == 1 && (sb.n, sb.h, sb.w) == (sa.n, sa.h, sa.w) {
        let p = sa.plane();
        let mut data = Vec::with_capacity(sa.numel());
        for n in 0..sa.n {
            let bp = b.plane(n, 0);
            for c in 0..sa.c {
                data.extend(a.plane(n, c).iter().zip(bp).map(|(&x, &y)| f(x, y)));
            }
        }
        debug_assert_eq!(data.len(), sa.n * sa.c * p);
        return Ok(Tensor { shape: sa, data });
    }
    Err(Error::DimensionMismatch {
        op: "elementwise",
        left: sa,
        right: sb,
    })
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    elementwise(ElementwiseOp::Add, a, Operand::Tensor(b))
}

pub fn hadamard(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    elementwise(ElementwiseOp::Hadamard, a, Operand::Tensor(b))
}

pub fn relu(a: &Tensor) -> Tensor {
    a.map(|v| v.max(0.0))
}

pub fn sigmoid(a: &Tensor) -> Tensor {
    a.map(sigmoid_scalar)
}

/// Elementwise mean of equally shaped tensors, accumulated in `f64`.
pub fn mean_over(inputs: &[&Tensor]) -> Result<Tensor> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::invalid("mean_over: empty input list"))?;
    for t in &inputs[1..] {
        first.same_shape("mean_over", t)?;
    }
    let count = inputs.len() as f64;
    let data = (0..first.data.len())
        .map(|i| (inputs.iter().map(|t| t.data[i] as f64).sum::<f64>() / count) as f32)
        .collect();
    Tensor::new(first.shape, data)
}

/// Central-difference gradient of a scalar function.
pub fn finite_diff_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], eps: f64) -> Result<Vec<f64>> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::invalid(format!("finite_diff_grad: eps must be > 0, got {eps}")));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let hi = f(&probe);
        probe[i] = x[i] - eps;
        let lo = f(&probe);
        probe[i] = x[i];
        if !hi.is_finite() || !lo.is_finite() {
            return Err(Error::NonFinite("finite_diff_grad"));
        }
        grad.push((hi - lo) / (2.0 * eps));
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: impl Into<Shape>, rng: &mut impl Rng) -> Tensor {
        Tensor::from_fn(shape, |_, _, _, _| rng.random_range(-1.0..1.0)).unwrap()
    }

    /// Kernel with `d - 1` zero rows/columns inserted between taps.
    fn zero_insert(k: &Tensor, d: usize) -> Tensor {
        let s = k.shape();
        let kh = d * (s.h - 1) + 1;
        let kw = d * (s.w - 1) + 1;
        Tensor::from_fn([s.n, s.c, kh, kw], |o, i, y, x| {
            if y % d == 0 && x % d == 0 {
                k.at(o, i, y / d, x / d)
            } else {
                0.0
            }
        })
        .unwrap()
    }

    #[test]
    fn conv_identity_1x1() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random([2, 3, 5, 4], &mut rng);
        let k = Tensor::from_fn([3, 3, 1, 1], |o, i, _, _| if o == i { 1.0 } else { 0.0 }).unwrap();
        let y = conv2d(&x, &ConvSpec::new(k, vec![0.0; 3], 1, 0, 1).unwrap()).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv_box_filter_on_constant() {
        let x = Tensor::full([1, 1, 6, 6], 0.7).unwrap();
        let k = Tensor::full([1, 1, 3, 3], 1.0 / 9.0).unwrap();
        let y = conv2d(&x, &ConvSpec::new(k, vec![0.0], 1, 0, 1).unwrap()).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 4, 4));
        for v in y.data() {
            assert!((v - 0.7).abs() < 1e-6);
        }
    }

    #[test]
    fn conv_dilation_two_matches_zero_inserted_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random([1, 1, 8, 8], &mut rng);
        let k = random([1, 1, 3, 3], &mut rng);
        let dilated = conv2d(&x, &ConvSpec::new(k.clone(), vec![0.0], 1, 0, 2).unwrap()).unwrap();
        let plain = conv2d(&x, &ConvSpec::new(zero_insert(&k, 2), vec![0.0], 1, 0, 1).unwrap()).unwrap();
        assert_eq!(dilated.shape(), Shape::new(1, 1, 4, 4));
        assert!(dilated.max_abs_diff(&plain).unwrap() <= 1e-6);
    }

    #[test]
    fn conv_matches_naive_loop_with_stride_and_padding() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random([2, 3, 7, 9], &mut rng);
        let k = random([4, 3, 3, 3], &mut rng);
        let bias: Vec<f32> = (0..4).map(|i| i as f32 * 0.1).collect();
        for (stride, pad, dil) in [(1, 1, 1), (2, 1, 1), (2, 2, 2), (3, 0, 1), (1, 3, 3)] {
            let spec = ConvSpec::new(k.clone(), bias.clone(), stride, pad, dil).unwrap();
            let y = conv2d(&x, &spec).unwrap();
            let ys = y.shape();
            for n in 0..ys.n {
                for o in 0..ys.c {
                    for oy in 0..ys.h {
                        for ox in 0..ys.w {
                            let mut acc = bias[o] as f64;
                            for i in 0..3 {
                                for ky in 0..3 {
                                    for kx in 0..3 {
                                        let iy = (oy * stride + ky * dil) as isize - pad as isize;
                                        let ix = (ox * stride + kx * dil) as isize - pad as isize;
                                        if iy >= 0 && ix >= 0 && iy < 7 && ix < 9 {
                                            acc += (k.at(o, i, ky, kx) * x.at(n, i, iy as usize, ix as usize)) as f64;
                                        }
                                    }
                                }
                            }
                            assert!((y.at(n, o, oy, ox) as f64 - acc).abs() < 1e-5);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn conv_channel_mismatch_names_both_shapes() {
        let x = Tensor::zeros([1, 2, 4, 4]).unwrap();
        let k = Tensor::zeros([1, 3, 1, 1]).unwrap();
        let err = conv2d(&x, &ConvSpec::new(k, vec![0.0], 1, 0, 1).unwrap()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(1, 2, 4, 4)") && msg.contains("(1, 3, 1, 1)"), "{msg}");
    }

    #[test]
    fn conv_rejects_kernel_larger_than_input() {
        let x = Tensor::zeros([1, 1, 2, 2]).unwrap();
        let k = Tensor::zeros([1, 1, 3, 3]).unwrap();
        assert!(conv2d(&x, &ConvSpec::new(k, vec![0.0], 1, 0, 1).unwrap()).is_err());
        assert!(ConvSpec::new(Tensor::zeros([1, 1, 1, 1]).unwrap(), vec![0.0], 0, 0, 1).is_err());
    }

    #[test]
    fn pool_ramp_4x4_to_2x2() {
        let x = Tensor::new([1, 1, 4, 4], (1..=16).map(|v| v as f32).collect()).unwrap();
        let y = adaptive_avg_pool(&x, 2, 2).unwrap();
        assert_eq!(y.data(), &[3.5, 5.5, 11.5, 13.5]);
    }

    #[test]
    fn pool_identity_and_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random([1, 2, 5, 7], &mut rng);
        assert_eq!(adaptive_avg_pool(&x, 5, 7).unwrap(), x);
        let c = Tensor::full([1, 2, 9, 5], 0.25).unwrap();
        for v in adaptive_avg_pool(&c, 4, 3).unwrap().data() {
            assert!((v - 0.25).abs() < 1e-7);
        }
        assert!(adaptive_avg_pool(&x, 6, 7).is_err());
    }

    #[test]
    fn pool_overlapping_windows_brute_force() {
        // 5 -> 3: windows [0,2), [1,4), [3,5)
        let x = Tensor::new([1, 1, 1, 5], vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let y = adaptive_avg_pool(&x, 1, 3).unwrap();
        assert_eq!(y.data(), &[1.5, 3.0, 4.5]);
    }

    #[test]
    fn upsample_ramp_matches_coordinate_formula() {
        let x = Tensor::new([1, 1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let y = bilinear_upsample(&x, 4, 4).unwrap();
        let coord = |d: usize| ((d as f64 + 0.5) * 0.5 - 0.5).clamp(0.0, 1.0);
        for i in 0..4 {
            for j in 0..4 {
                // f(r, c) = 2r + c is bilinear on the 2x2 grid
                let expect = 2.0 * coord(i) + coord(j);
                assert!((y.at(0, 0, i, j) as f64 - expect).abs() < 1e-6);
            }
        }
        assert_eq!(y.at(0, 0, 1, 1), 0.75);
    }

    #[test]
    fn upsample_constant_and_single_pixel() {
        let x = Tensor::full([1, 3, 1, 1], 4.5).unwrap();
        let y = bilinear_upsample(&x, 7, 3).unwrap();
        assert!(y.data().iter().all(|&v| v == 4.5));
        assert!(bilinear_upsample(&Tensor::zeros([1, 1, 4, 4]).unwrap(), 3, 4).is_err());
    }

    #[test]
    fn upsample_reproduces_linear_field_in_interior() {
        let (a, b, c) = (0.3, -0.7, 1.25);
        let x = Tensor::from_fn([1, 1, 5, 6], |_, _, y, x| (a * x as f64 + b * y as f64 + c) as f32).unwrap();
        let y = bilinear_upsample(&x, 15, 18).unwrap();
        for i in 0..15 {
            for j in 0..18 {
                let sy = (i as f64 + 0.5) / 3.0 - 0.5;
                let sx = (j as f64 + 0.5) / 3.0 - 0.5;
                if sy < 0.0 || sx < 0.0 || sy > 4.0 || sx > 5.0 {
                    continue;
                }
                let expect = a * sx + b * sy + c;
                assert!((y.at(0, 0, i, j) as f64 - expect).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn concat_ordering_and_split_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random([2, 3, 4, 4], &mut rng);
        let b = random([2, 5, 4, 4], &mut rng);
        assert_eq!(concat_channels(&[&a]).unwrap(), a);
        let ab = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(ab.shape().c, 8);
        assert_eq!(slice_channels(&ab, 0..3).unwrap(), a);
        assert_eq!(slice_channels(&ab, 3..8).unwrap(), b);
        let bad = Tensor::zeros([2, 1, 4, 5]).unwrap();
        assert!(concat_channels(&[&a, &bad]).is_err());
    }

    #[test]
    fn concat_two_256_channel_maps() {
        let a = Tensor::full([1, 256, 2, 2], 1.0).unwrap();
        let b = Tensor::full([1, 256, 2, 2], 2.0).unwrap();
        let ab = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(ab.shape().c, 512);
        assert!(ab.data()[..256 * 4].iter().all(|&v| v == 1.0));
    }

    #[test]
    fn elementwise_basics() {
        let z = Tensor::zeros([1, 2, 2, 2]).unwrap();
        assert!(sigmoid(&z).data().iter().all(|&v| v == 0.5));
        let x = Tensor::new([1, 1, 1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let ones = Tensor::full([1, 1, 1, 3], 1.0).unwrap();
        assert_eq!(hadamard(&x, &ones).unwrap(), x);
        assert_eq!(
            elementwise(ElementwiseOp::Scale, &x, Operand::Scalar(2.0)).unwrap().data(),
            &[-2.0, 0.0, 4.0]
        );
        assert!(elementwise(ElementwiseOp::Relu, &x, Operand::Scalar(1.0)).is_err());
    }

    #[test]
    fn hadamard_broadcasts_single_channel() {
        let a = Tensor::from_fn([1, 3, 2, 2], |_, c, y, x| (c * 4 + y * 2 + x) as f32).unwrap();
        let w = Tensor::from_fn([1, 1, 2, 2], |_, _, y, x| (y * 2 + x) as f32).unwrap();
        let out = hadamard(&a, &w).unwrap();
        for c in 0..3 {
            for y in 0..2 {
                for x in 0..2 {
                    assert_eq!(out.at(0, c, y, x), a.at(0, c, y, x) * w.at(0, 0, y, x));
                }
            }
        }
        assert!(hadamard(&a, &Tensor::zeros([1, 2, 2, 2]).unwrap()).is_err());
    }

    #[test]
    fn mean_over_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random([1, 2, 3, 3], &mut rng);
        assert!(mean_over(&[&x, &x, &x]).unwrap().max_abs_diff(&x).unwrap() < 1e-6);
        let neg = x.map(|v| -v);
        assert!(mean_over(&[&x, &neg]).unwrap().data().iter().all(|&v| v == 0.0));
        let (a, b, c) = (random([1, 2, 3, 3], &mut rng), random([1, 2, 3, 3], &mut rng), random([1, 2, 3, 3], &mut rng));
        let m = mean_over(&[&a, &b, &c]).unwrap();
        for i in 0..m.data().len() {
            let expect = (a.data()[i] as f64 + b.data()[i] as f64 + c.data()[i] as f64) / 3.0;
            assert!((m.data()[i] as f64 - expect).abs() < 1e-6);
        }
        assert!(mean_over(&[]).is_err());
    }

    #[test]
    fn finite_diff_examples() {
        let g = finite_diff_grad(|x| x[0] * x[0], &[3.0], 1e-4).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-6);
        let g = finite_diff_grad(|_| 2.5, &[1.0, -4.0], 1e-3).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
        let g = finite_diff_grad(|x| x.iter().map(|v| v.powi(3)).sum(), &[1.0, 2.0], 1e-4).unwrap();
        assert!((g[0] - 3.0).abs() < 1e-4 && (g[1] - 12.0).abs() < 1e-4);
        assert!(finite_diff_grad(|x| x[0].ln(), &[0.0], 1e-3).is_err());
        assert!(finite_diff_grad(|x| x[0], &[0.0], 0.0).is_err());
    }

    #[test]
    fn tensor_rejects_bad_shapes() {
        assert!(Tensor::zeros([0, 1, 1, 1]).is_err());
        assert!(Tensor::new([1, 1, 2, 2], vec![0.0; 3]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn dilated_conv_equals_zero_inserted(seed in any::<u64>(), k in prop::sample::select(vec![1usize, 3]), d in prop::sample::select(vec![1usize, 2, 3, 5])) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let span = d * (k - 1) + 1;
            let size = span + rng.random_range(0..6);
            let x = random([1, 2, size, size + 1], &mut rng);
            let kern = random([2, 2, k, k], &mut rng);
            let pad = rng.random_range(0..3);
            let a = conv2d(&x, &ConvSpec::new(kern.clone(), vec![0.1, -0.2], 1, pad, d).unwrap()).unwrap();
            let b = conv2d(&x, &ConvSpec::new(zero_insert(&kern, d), vec![0.1, -0.2], 1, pad, 1).unwrap()).unwrap();
            prop_assert!(a.max_abs_diff(&b).unwrap() <= 1e-6);
        }

        #[test]
        fn pooling_preserves_mean_on_even_division(seed in any::<u64>(), fh in 1usize..4, fw in 1usize..4, oh in 1usize..5, ow in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random([1, 2, oh * fh, ow * fw], &mut rng);
            let y = adaptive_avg_pool(&x, oh, ow).unwrap();
            prop_assert!((x.mean() - y.mean()).abs() < 1e-6);
        }

        #[test]
        fn ops_are_deterministic(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random([1, 3, 6, 6], &mut rng);
            let k = random([2, 3, 3, 3], &mut rng);
            let spec = ConvSpec::new(k, vec![0.0, 0.5], 1, 1, 2).unwrap();
            prop_assert_eq!(conv2d(&x, &spec).unwrap(), conv2d(&x, &spec).unwrap());
            prop_assert_eq!(bilinear_upsample(&x, 9, 11).unwrap(), bilinear_upsample(&x, 9, 11).unwrap());
            prop_assert_eq!(adaptive_avg_pool(&x, 4, 5).unwrap(), adaptive_avg_pool(&x, 4, 5).unwrap());
        }
    }
}
