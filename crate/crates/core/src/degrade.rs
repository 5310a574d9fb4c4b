//! Measurement operators `H` and the additive noise model.
//!
//! Every [`DegradationOp`] is linear and maps an image to one of the same
//! size. Spatial-domain operators use replicate padding unless the periodic
//! rule is requested explicitly.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::Image;

/// Cubic convolution parameter (Keys family, `a = -0.5`).
pub const BICUBIC_A: f64 = -0.5;

/// Odd-sized square correlation kernel with unit sum.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    size: usize,
    taps: Vec<f32>,
}

impl Kernel {
    pub fn new(size: usize, taps: Vec<f32>) -> Result<Self> {
        if size == 0 || size.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "kernel size must be odd and positive, got {size}"
            )));
        }
        if taps.len() != size * size {
            return Err(Error::InvalidArgument(format!(
                "{} taps for a {size}x{size} kernel",
                taps.len()
            )));
        }
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument("non-finite kernel tap".into()));
        }
        let sum: f64 = taps.iter().map(|&t| f64::from(t)).sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!(
                "kernel taps sum to {sum}, expected 1"
            )));
        }
        Ok(Self { size, taps })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn taps(&self) -> &[f32] {
        &self.taps
    }

    pub fn tap(&self, row: usize, col: usize) -> f32 {
        self.taps[row * self.size + col]
    }
}

/// Normalized isotropic Gaussian, `taps[i,j] ∝ exp(-((i-c)² + (j-c)²) / 2σ²)`.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Result<Kernel> {
    if size == 0 || size.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "Gaussian kernel size must be odd, got {size}"
        )));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "Gaussian sigma must be positive, got {sigma}"
        )));
    }
    let c = (size / 2) as f64;
    let raw: Vec<f64> = (0..size * size)
        .map(|k| {
            let (i, j) = ((k / size) as f64 - c, (k % size) as f64 - c);
            (-(i * i + j * j) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    Kernel::new(size, raw.into_iter().map(|v| (v / total) as f32).collect())
}

/// Support used by [`crate::diter::Prior::GaussianSmooth`]: `2⌈3σ⌉ + 1`.
pub fn gaussian_support(sigma: f64) -> usize {
    2 * (3.0 * sigma).ceil().max(0.0) as usize + 1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum Boundary {
    #[default]
    Replicate,
    Periodic,
}

impl Boundary {
    #[inline]
    fn index(self, i: isize, n: usize) -> usize {
        match self {
            Boundary::Replicate => i.clamp(0, n as isize - 1) as usize,
            Boundary::Periodic => i.rem_euclid(n as isize) as usize,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    Identity,
    Blur(Kernel),
    /// Bicubic ×2 downsample followed by bicubic ×2 upsample.
    Sr2xResample,
}

/// Same-size linear measurement operator.
#[derive(Clone, Debug, PartialEq)]
pub struct DegradationOp {
    pub kind: OpKind,
    pub boundary: Boundary,
}

impl DegradationOp {
    pub fn identity() -> Self {
        Self {
            kind: OpKind::Identity,
            boundary: Boundary::Replicate,
        }
    }

    pub fn blur(kernel: Kernel, boundary: Boundary) -> Self {
        Self {
            kind: OpKind::Blur(kernel),
            boundary,
        }
    }

    pub fn sr2x() -> Self {
        Self {
            kind: OpKind::Sr2xResample,
            boundary: Boundary::Replicate,
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self.kind, OpKind::Identity)
    }

    pub fn apply(&self, img: &Image) -> Result<Image> {
        apply_operator(self, img)
    }
}

pub fn apply_operator(op: &DegradationOp, img: &Image) -> Result<Image> {
    match &op.kind {
        OpKind::Identity => Ok(img.clone()),
        OpKind::Blur(k) => Ok(correlate(img, k, op.boundary)),
        OpKind::Sr2xResample => {
            let low = bicubic_resize(img, ResizeFactor::Half)?;
            bicubic_resize(&low, ResizeFactor::Double)
        }
    }
}

/// 2-D correlation `out(r,c) = Σ k(u,v) · img(r+u-h, c+v-h)`.
pub fn correlate(img: &Image, kernel: &Kernel, boundary: Boundary) -> Image {
    let (h, w) = img.dims();
    let half = (kernel.size / 2) as isize;
    let src = img.data();
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0f64;
            for u in 0..kernel.size {
                let rr = boundary.index(r as isize + u as isize - half, h);
                let row = &src[rr * w..(rr + 1) * w];
                for v in 0..kernel.size {
                    let cc = boundary.index(c as isize + v as isize - half, w);
                    acc += f64::from(kernel.tap(u, v)) * f64::from(row[cc]);
                }
            }
            out.push(acc as f32);
        }
    }
    Image::from_vec_unchecked(h, w, out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResizeFactor {
    Half,
    Double,
}

impl ResizeFactor {
    pub fn value(self) -> f64 {
        match self {
            ResizeFactor::Half => 0.5,
            ResizeFactor::Double => 2.0,
        }
    }
}

/// Keys cubic convolution kernel with `a = -0.5`.
pub fn cubic_weight(t: f64) -> f64 {
    let a = BICUBIC_A;
    let t = t.abs();
    if t <= 1.0 {
        ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a
    } else {
        0.0
    }
}

/// Per-output-sample source indices and weights along one axis.
/// Output `x` samples input coordinate `(x + 0.5) / factor - 0.5`.
fn axis_taps(n_in: usize, n_out: usize, factor: f64) -> Vec<([usize; 4], [f64; 4])> {
    (0..n_out)
        .map(|x| {
            let src = (x as f64 + 0.5) / factor - 0.5;
            let base = src.floor();
            let t = src - base;
            let i0 = base as isize;
            let idx = [-1isize, 0, 1, 2].map(|d| (i0 + d).clamp(0, n_in as isize - 1) as usize);
            let wts = [
                cubic_weight(1.0 + t),
                cubic_weight(t),
                cubic_weight(1.0 - t),
                cubic_weight(2.0 - t),
            ];
            (idx, wts)
        })
        .collect()
}

/// Separable bicubic resampling by ½ or 2 with replicate padding.
pub fn bicubic_resize(img: &Image, factor: ResizeFactor) -> Result<Image> {
    let (h, w) = img.dims();
    let (oh, ow) = match factor {
        ResizeFactor::Half => {
            if h % 2 != 0 || w % 2 != 0 {
                return Err(Error::InvalidArgument(format!(
                    "downsampling by 2 requires even dimensions, got {h}x{w}"
                )));
            }
            (h / 2, w / 2)
        }
        ResizeFactor::Double => (2 * h, 2 * w),
    };
    let f = factor.value();
    let col_taps = axis_taps(w, ow, f);
    let row_taps = axis_taps(h, oh, f);

    let src = img.data();
    let mut horiz = vec![0.0f64; h * ow];
    for r in 0..h {
        let row = &src[r * w..(r + 1) * w];
        for (x, (idx, wts)) in col_taps.iter().enumerate() {
            horiz[r * ow + x] = (0..4).map(|k| wts[k] * f64::from(row[idx[k]])).sum();
        }
    }
    let mut out = Vec::with_capacity(oh * ow);
    for (idx, wts) in &row_taps {
        for x in 0..ow {
            let v: f64 = (0..4).map(|k| wts[k] * horiz[idx[k] * ow + x]).sum();
            out.push(v as f32);
        }
    }
    Ok(Image::from_vec_unchecked(oh, ow, out))
}

/// Per-pixel noise standard deviation, in `[0, 1]` intensity units.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseLevelMap {
    sigma: Image,
}

impl NoiseLevelMap {
    pub fn constant(height: usize, width: usize, sigma: f32) -> Self {
        Self {
            sigma: Image::filled(height, width, sigma),
        }
    }

    pub fn from_image(sigma: Image) -> Result<Self> {
        if sigma.data().iter().any(|&s| s < 0.0) {
            return Err(Error::InvalidArgument("negative noise level".into()));
        }
        Ok(Self { sigma })
    }

    pub fn as_image(&self) -> &Image {
        &self.sigma
    }
}

/// Deterministic standard-normal stream.
///
/// ChaCha8 seeded through `seed_from_u64`; each `u64` word becomes a uniform
/// `u = (word >> 11) · 2⁻⁵³` in `[0, 1)`. Consecutive uniform pairs
/// `(u1, u2)` go through Box–Muller with `r = sqrt(-2 ln(1 - u1))`,
/// `θ = 2π u2`, yielding `r cos θ` then `r sin θ`.
pub struct GaussianStream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl GaussianStream {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    pub fn next_uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - self.next_uniform();
        let u2 = self.next_uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }
}

/// Adds i.i.d. `N(0, (σ/255)²)` noise. The output is not clamped.
pub fn add_awgn(img: &Image, sigma255: f64, seed: u64) -> Result<(Image, NoiseLevelMap)> {
    if !(sigma255 >= 0.0 && sigma255.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "noise level must be non-negative, got {sigma255}"
        )));
    }
    let sigma = sigma255 / 255.0;
    let mut stream = GaussianStream::new(seed);
    let data = img
        .data()
        .iter()
        .map(|&v| (f64::from(v) + sigma * stream.next_gaussian()) as f32)
        .collect();
    let (h, w) = img.dims();
    Ok((
        Image::from_vec_unchecked(h, w, data),
        NoiseLevelMap::constant(h, w, sigma as f32),
    ))
}
