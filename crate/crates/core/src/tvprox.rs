//! Anisotropic total-variation proximal operator.
//!
//! Computes `argmin_I ½‖I − v‖² + ξ·TV(I)` with
//! `TV(I) = Σ |I(r,c) − I(r−1,c)| + |I(r,c) − I(r,c−1)|`, where differences
//! that would reach outside the image are zero.
//!
//! The split `d ≈ ∇I` is handled by alternating
//!
//! 1. `d ← shrink(∇I + b, ξ/ρ)` (elementwise soft threshold),
//! 2. `I ← (1 + ρ∇ᵀ∇)⁻¹ (v + ρ∇ᵀ(d − b))`,
//! 3. `b ← b + ∇I − d` (scaled multiplier).
//!
//! With zero-border differences, `∇ᵀ∇` is the reflective-boundary Laplacian,
//! which the 2-D DCT-II diagonalises; step 2 is therefore exact and the
//! alternation minimises the zero-border objective itself. The same system
//! under periodic differences, diagonalised by the FFT, is exposed as
//! [`fft_quad_solve`].

use rustdct::{DctPlanner, TransformType2And3};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::image::Image;

pub const DEFAULT_INNER_ITERS: usize = 300;
pub const DEFAULT_TOL: f64 = 1e-6;

/// Forward differences with the out-of-range entries set to zero.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientField {
    /// `I(r,c) − I(r−1,c)`, zero on row 0.
    pub d1: Image,
    /// `I(r,c) − I(r,c−1)`, zero on column 0.
    pub d2: Image,
}

pub fn forward_diff(img: &Image) -> GradientField {
    let (h, w) = img.dims();
    let d1 = Image::from_fn(h, w, |r, c| {
        if r == 0 {
            0.0
        } else {
            img.get(r, c) - img.get(r - 1, c)
        }
    });
    let d2 = Image::from_fn(h, w, |r, c| {
        if c == 0 {
            0.0
        } else {
            img.get(r, c) - img.get(r, c - 1)
        }
    });
    GradientField { d1, d2 }
}

/// Soft threshold `sign(x)·max(|x| − t, 0)`.
pub fn shrink(x: f64, threshold: f64) -> Result<f64> {
    if !(threshold >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "shrink threshold must be non-negative, got {threshold}"
        )));
    }
    Ok(soft(x, threshold))
}

#[inline]
fn soft(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Anisotropic TV with zero-border differences, in `f64`.
pub fn anisotropic_tv(img: &Image) -> f64 {
    tv_f64(&to_f64(img), img.height(), img.width())
}

fn tv_f64(x: &[f64], h: usize, w: usize) -> f64 {
    let mut tv = 0.0;
    for r in 0..h {
        for c in 0..w {
            let v = x[r * w + c];
            if r > 0 {
                tv += (v - x[(r - 1) * w + c]).abs();
            }
            if c > 0 {
                tv += (v - x[r * w + c - 1]).abs();
            }
        }
    }
    tv
}

/// `½‖I − v‖² + ξ·TV(I)`.
pub fn tv_objective(img: &Image, v: &Image, tv_weight: f64) -> Result<f64> {
    img.ensure_same_dims(v)?;
    Ok(objective_f64(
        &to_f64(img),
        &to_f64(v),
        img.height(),
        img.width(),
        tv_weight,
    ))
}

fn objective_f64(x: &[f64], v: &[f64], h: usize, w: usize, xi: f64) -> f64 {
    let fid: f64 = x.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
    0.5 * fid + xi * tv_f64(x, h, w)
}

fn to_f64(img: &Image) -> Vec<f64> {
    img.data().iter().map(|&v| f64::from(v)).collect()
}

fn to_image(h: usize, w: usize, x: &[f64]) -> Image {
    Image::from_vec_unchecked(h, w, x.iter().map(|&v| v as f32).collect())
}

/// Reusable solver for `(1 + ρ∇ᵀ∇) x = rhs` with periodic forward differences.
pub struct QuadSolver {
    h: usize,
    w: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
    denom: Vec<f64>,
    buf: Vec<Complex<f64>>,
    tbuf: Vec<Complex<f64>>,
}

impl QuadSolver {
    pub fn new(h: usize, w: usize, rho: f64) -> Result<Self> {
        if !(rho >= 0.0 && rho.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "penalty must be non-negative and finite, got {rho}"
            )));
        }
        let mut planner = FftPlanner::new();
        // |1 − e^{−iθ}|² = 4 sin²(θ/2)
        let eig = |k: usize, n: usize| {
            let s = (std::f64::consts::PI * k as f64 / n as f64).sin();
            4.0 * s * s
        };
        let mut denom = Vec::with_capacity(h * w);
        for r in 0..h {
            for c in 0..w {
                denom.push(1.0 + rho * (eig(r, h) + eig(c, w)));
            }
        }
        Ok(Self {
            h,
            w,
            row_fwd: planner.plan_fft_forward(w),
            row_inv: planner.plan_fft_inverse(w),
            col_fwd: planner.plan_fft_forward(h),
            col_inv: planner.plan_fft_inverse(h),
            denom,
            buf: vec![Complex::default(); h * w],
            tbuf: vec![Complex::default(); h * w],
        })
    }

    fn transform(&mut self, inverse: bool) {
        let (h, w) = (self.h, self.w);
        let (rows, cols) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        rows.process(&mut self.buf);
        for r in 0..h {
            for c in 0..w {
                self.tbuf[c * h + r] = self.buf[r * w + c];
            }
        }
        cols.process(&mut self.tbuf);
        for c in 0..w {
            for r in 0..h {
                self.buf[r * w + c] = self.tbuf[c * h + r];
            }
        }
    }

    /// Solves into `out`, returning the largest imaginary magnitude left after
    /// the inverse transform.
    pub fn solve_into(&mut self, rhs: &[f64], out: &mut [f64]) -> f64 {
        assert_eq!(rhs.len(), self.h * self.w);
        assert_eq!(out.len(), rhs.len());
        for (b, &r) in self.buf.iter_mut().zip(rhs) {
            *b = Complex::new(r, 0.0);
        }
        self.transform(false);
        for (b, &d) in self.buf.iter_mut().zip(&self.denom) {
            *b /= d;
        }
        self.transform(true);
        let scale = 1.0 / (self.h * self.w) as f64;
        let mut max_imag = 0.0f64;
        for (o, b) in out.iter_mut().zip(&self.buf) {
            *o = b.re * scale;
            max_imag = max_imag.max((b.im * scale).abs());
        }
        max_imag
    }
}

/// Solves `(1 + ρ∇ᵀ∇) I = rhs` under periodic boundary via the FFT.
pub fn fft_quad_solve(rhs: &Image, rho: f64) -> Result<Image> {
    Ok(fft_quad_solve_with_residue(rhs, rho)?.0)
}

/// As [`fft_quad_solve`], also returning the discarded imaginary residue.
pub fn fft_quad_solve_with_residue(rhs: &Image, rho: f64) -> Result<(Image, f64)> {
    let (h, w) = rhs.dims();
    if rho == 0.0 {
        return Ok((rhs.clone(), 0.0));
    }
    let mut solver = QuadSolver::new(h, w, rho)?;
    let mut out = vec![0.0; h * w];
    let residue = solver.solve_into(&to_f64(rhs), &mut out);
    Ok((to_image(h, w, &out), residue))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TvParams {
    /// ξ
    pub tv_weight: f64,
    /// ρ
    pub penalty: f64,
    pub inner_iters: usize,
    /// Stop once `‖I_t − I_{t−1}‖ / ‖I_{t−1}‖` drops below this.
    pub tol: f64,
}

impl TvParams {
    pub fn new(tv_weight: f64, penalty: f64) -> Self {
        Self {
            tv_weight,
            penalty,
            inner_iters: DEFAULT_INNER_ITERS,
            tol: DEFAULT_TOL,
        }
    }

    /// ρ = ξ = δ.
    pub fn single_knob(delta: f64) -> Self {
        Self::new(delta, delta)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tv_weight >= 0.0 && self.tv_weight.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "TV weight must be non-negative, got {}",
                self.tv_weight
            )));
        }
        if self.tv_weight > 0.0 && !(self.penalty > 0.0 && self.penalty.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "TV penalty must be positive, got {}",
                self.penalty
            )));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "negative tolerance {}",
                self.tol
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TvProxOutput {
    pub image: Image,
    /// Alternations performed.
    pub iterations: usize,
    /// False when `inner_iters` ran out before the tolerance was met.
    pub converged: bool,
    /// Objective of the returned iterate after each alternation, starting with
    /// the objective of `v` itself.
    pub objectives: Vec<f64>,
}

/// Solver for `(1 + ρDᵀD) x = rhs` where `D` takes zero-border differences.
///
/// `DᵀD` is then the reflective-boundary Laplacian, diagonalised by the 2-D
/// DCT-II with eigenvalues `4sin²(πk/2h) + 4sin²(πl/2w)`. This is the periodic
/// FFT solve of the even extension, computed without building it.
struct NeumannSolver {
    h: usize,
    w: usize,
    rows: Arc<dyn TransformType2And3<f64>>,
    cols: Arc<dyn TransformType2And3<f64>>,
    denom: Vec<f64>,
    col: Vec<f64>,
    scratch: Vec<f64>,
}

impl NeumannSolver {
    fn new(h: usize, w: usize, rho: f64) -> Self {
        let mut planner = DctPlanner::new();
        let eig = |k: usize, n: usize| {
            let s = (std::f64::consts::PI * k as f64 / (2 * n) as f64).sin();
            4.0 * s * s
        };
        let mut denom = Vec::with_capacity(h * w);
        for r in 0..h {
            for c in 0..w {
                denom.push(1.0 + rho * (eig(r, h) + eig(c, w)));
            }
        }
        let (rows, cols) = (planner.plan_dct2(w), planner.plan_dct2(h));
        let scratch = rows.get_scratch_len().max(cols.get_scratch_len());
        Self {
            h,
            w,
            rows,
            cols,
            denom,
            col: vec![0.0; h],
            scratch: vec![0.0; scratch],
        }
    }

    fn pass(&mut self, x: &mut [f64], inverse: bool) {
        let (h, w) = (self.h, self.w);
        for row in x.chunks_exact_mut(w) {
            if inverse {
                self.rows.process_dct3_with_scratch(row, &mut self.scratch);
            } else {
                self.rows.process_dct2_with_scratch(row, &mut self.scratch);
            }
        }
        for c in 0..w {
            for r in 0..h {
                self.col[r] = x[r * w + c];
            }
            if inverse {
                self.cols
                    .process_dct3_with_scratch(&mut self.col, &mut self.scratch);
            } else {
                self.cols
                    .process_dct2_with_scratch(&mut self.col, &mut self.scratch);
            }
            for r in 0..h {
                x[r * w + c] = self.col[r];
            }
        }
    }

    /// Solves in place.
    fn solve(&mut self, x: &mut [f64]) {
        self.pass(x, false);
        // DCT-III ∘ DCT-II = (n/2)·id per axis
        let scale = 4.0 / (self.h * self.w) as f64;
        for (v, d) in x.iter_mut().zip(&self.denom) {
            *v *= scale / d;
        }
        self.pass(x, true);
    }
}

/// Zero-border forward differences.
fn grad(x: &[f64], h: usize, w: usize, g1: &mut [f64], g2: &mut [f64]) {
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            g1[i] = if r > 0 { x[i] - x[i - w] } else { 0.0 };
            g2[i] = if c > 0 { x[i] - x[i - 1] } else { 0.0 };
        }
    }
}

/// `out += scale · Dᵀp` for the zero-border differences of [`grad`].
fn grad_adjoint_acc(p1: &[f64], p2: &[f64], h: usize, w: usize, scale: f64, out: &mut [f64]) {
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            let mut acc = 0.0;
            if r > 0 {
                acc += p1[i];
            }
            if r + 1 < h {
                acc -= p1[i + w];
            }
            if c > 0 {
                acc += p2[i];
            }
            if c + 1 < w {
                acc -= p2[i + 1];
            }
            out[i] += scale * acc;
        }
    }
}

/// Approximate TV proximal map of `v`.
///
/// The returned image is the best iterate seen, so `objectives` is
/// non-increasing and its last entry never exceeds the objective of `v`.
pub fn tv_prox(v: &Image, params: &TvParams) -> Result<TvProxOutput> {
    params.validate()?;
    let (h, w) = v.dims();
    let vf = to_f64(v);
    let xi = params.tv_weight;
    let start = objective_f64(&vf, &vf, h, w, xi);
    if xi == 0.0 {
        return Ok(TvProxOutput {
            image: v.clone(),
            iterations: 0,
            converged: true,
            objectives: vec![start],
        });
    }

    let rho = params.penalty;
    let thresh = xi / rho;
    let n = h * w;
    let mut solver = NeumannSolver::new(h, w, rho);

    let mut x = vf.clone();
    let mut x_next = vec![0.0; n];
    let (mut g1, mut g2) = (vec![0.0; n], vec![0.0; n]);
    let (mut d1, mut d2) = (vec![0.0; n], vec![0.0; n]);
    let (mut b1, mut b2) = (vec![0.0; n], vec![0.0; n]);
    let (mut t1, mut t2) = (vec![0.0; n], vec![0.0; n]);

    let mut best = vf.clone();
    let mut best_obj = start;
    let mut objectives = vec![start];
    let mut converged = false;
    let mut iterations = 0;

    grad(&x, h, w, &mut g1, &mut g2);
    for _ in 0..params.inner_iters {
        iterations += 1;
        for i in 0..n {
            d1[i] = soft(g1[i] + b1[i], thresh);
            d2[i] = soft(g2[i] + b2[i], thresh);
            t1[i] = d1[i] - b1[i];
            t2[i] = d2[i] - b2[i];
        }
        x_next.copy_from_slice(&vf);
        grad_adjoint_acc(&t1, &t2, h, w, rho, &mut x_next);
        solver.solve(&mut x_next);

        grad(&x_next, h, w, &mut g1, &mut g2);
        for i in 0..n {
            b1[i] += g1[i] - d1[i];
            b2[i] += g2[i] - d2[i];
        }

        let (mut diff, mut norm) = (0.0f64, 0.0f64);
        for i in 0..n {
            diff += (x_next[i] - x[i]).powi(2);
            norm += x[i] * x[i];
        }
        std::mem::swap(&mut x, &mut x_next);

        let obj = objective_f64(&x, &vf, h, w, xi);
        if obj < best_obj {
            best_obj = obj;
            best.copy_from_slice(&x);
        }
        objectives.push(best_obj);

        let rel = if norm > 0.0 {
            (diff / norm).sqrt()
        } else {
            diff.sqrt()
        };
        if rel < params.tol {
            converged = true;
            break;
        }
    }

    Ok(TvProxOutput {
        image: to_image(h, w, &best),
        iterations,
        converged,
        objectives,
    })
}
