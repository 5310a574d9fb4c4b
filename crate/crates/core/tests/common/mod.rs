//! Independent reference implementations shared by the integration and
//! acceptance suites. Nothing here calls into the code it checks.

#![allow(dead_code)]

use diamond_core::degrade::GaussianStream;
use diamond_core::nnexec::{Tensor, Weights4};
use diamond_core::Image;
use nalgebra::{DMatrix, DVector};

pub fn uniform_image(h: usize, w: usize, seed: u64) -> Image {
    let mut s = GaussianStream::new(seed);
    Image::from_fn(h, w, |_, _| s.next_uniform() as f32)
}

pub fn uniform_vec(n: usize, lo: f64, hi: f64, stream: &mut GaussianStream) -> Vec<f32> {
    (0..n)
        .map(|_| (lo + (hi - lo) * stream.next_uniform()) as f32)
        .collect()
}

/// Background 0.2 with a bright rectangle, a mid-grey disc and a dark bar.
pub fn phantom(h: usize, w: usize) -> Image {
    Image::from_fn(h, w, |r, c| {
        let (y, x) = (r as f64 / h as f64, c as f64 / w as f64);
        let disc = (y - 0.62).powi(2) + (x - 0.35).powi(2) < 0.2f64.powi(2);
        if (0.12..0.40).contains(&y) && (0.50..0.88).contains(&x) {
            0.8
        } else if disc {
            0.5
        } else if (0.70..0.90).contains(&x) && (0.55..0.92).contains(&y) {
            0.05
        } else {
            0.2
        }
    })
}

// --- TV ---------------------------------------------------------------------

fn idx(w: usize, r: usize, c: usize) -> usize {
    r * w + c
}

/// `½‖x − v‖² + ξ Σ |x(r,c) − x(r−1,c)| + |x(r,c) − x(r,c−1)|`, interior pairs only.
pub fn tv_objective(x: &[f64], v: &[f64], h: usize, w: usize, xi: f64) -> f64 {
    let mut fid = 0.0;
    for i in 0..h * w {
        fid += 0.5 * (x[i] - v[i]).powi(2);
    }
    let mut tv = 0.0;
    for r in 0..h {
        for c in 0..w {
            if r > 0 {
                tv += (x[idx(w, r, c)] - x[idx(w, r - 1, c)]).abs();
            }
            if c > 0 {
                tv += (x[idx(w, r, c)] - x[idx(w, r, c - 1)]).abs();
            }
        }
    }
    fid + xi * tv
}

/// Projected subgradient descent, box `[min v, max v]` (the minimiser lies
/// inside it). Step `1/(t+1)` suits the unit strong convexity. Returns the
/// best objective seen.
pub fn tv_subgradient_best(v: &[f64], h: usize, w: usize, xi: f64, steps: usize) -> f64 {
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut x = v.to_vec();
    let mut best = tv_objective(&x, v, h, w, xi);
    let mut g = vec![0.0; h * w];
    for t in 0..steps {
        for i in 0..h * w {
            g[i] = x[i] - v[i];
        }
        for r in 0..h {
            for c in 0..w {
                let here = idx(w, r, c);
                if r > 0 {
                    let s = xi * sign(x[here] - x[idx(w, r - 1, c)]);
                    g[here] += s;
                    g[idx(w, r - 1, c)] -= s;
                }
                if c > 0 {
                    let s = xi * sign(x[here] - x[idx(w, r, c - 1)]);
                    g[here] += s;
                    g[idx(w, r, c - 1)] -= s;
                }
            }
        }
        let alpha = 1.0 / (t as f64 + 1.0);
        for i in 0..h * w {
            x[i] = (x[i] - alpha * g[i]).clamp(lo, hi);
        }
        best = best.min(tv_objective(&x, v, h, w, xi));
    }
    best
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Dual projected gradient on `min_{|p|∞ ≤ ξ} ½‖v − Dᵀp‖²`; returns the primal
/// objective of `v − Dᵀp` after `steps` iterations.
pub fn tv_dual_value(v: &[f64], h: usize, w: usize, xi: f64, steps: usize) -> f64 {
    // one dual variable per interior pair
    let mut p1 = vec![0.0; h * w]; // (r,c)-(r-1,c), r ≥ 1
    let mut p2 = vec![0.0; h * w]; // (r,c)-(r,c-1), c ≥ 1
    let primal = |p1: &[f64], p2: &[f64]| {
        let mut x = v.to_vec();
        for r in 0..h {
            for c in 0..w {
                let i = idx(w, r, c);
                if r > 0 {
                    x[i] -= p1[i];
                    x[idx(w, r - 1, c)] += p1[i];
                }
                if c > 0 {
                    x[i] -= p2[i];
                    x[idx(w, r, c - 1)] += p2[i];
                }
            }
        }
        x
    };
    let tau = 1.0 / 8.0;
    for _ in 0..steps {
        let x = primal(&p1, &p2);
        for r in 0..h {
            for c in 0..w {
                let i = idx(w, r, c);
                if r > 0 {
                    p1[i] = (p1[i] + tau * (x[i] - x[idx(w, r - 1, c)])).clamp(-xi, xi);
                }
                if c > 0 {
                    p2[i] = (p2[i] + tau * (x[i] - x[idx(w, r, c - 1)])).clamp(-xi, xi);
                }
            }
        }
    }
    tv_objective(&primal(&p1, &p2), v, h, w, xi)
}

// --- quadratic solve --------------------------------------------------------

/// Solves `(I + ρ DᵀD) x = rhs` densely, `D` the periodic forward differences.
pub fn dense_periodic_solve(rhs: &[f64], h: usize, w: usize, rho: f64) -> Vec<f64> {
    let n = h * w;
    let mut d = DMatrix::<f64>::zeros(2 * n, n);
    for r in 0..h {
        for c in 0..w {
            let i = idx(w, r, c);
            d[(i, i)] += 1.0;
            d[(i, idx(w, (r + h - 1) % h, c))] -= 1.0;
            d[(n + i, i)] += 1.0;
            d[(n + i, idx(w, r, (c + w - 1) % w))] -= 1.0;
        }
    }
    let a = DMatrix::<f64>::identity(n, n) + d.transpose() * &d * rho;
    let b = DVector::from_column_slice(rhs);
    let x = a.lu().solve(&b).expect("system is positive definite");
    x.iter().copied().collect()
}

// --- convolution ------------------------------------------------------------

/// Direct cross-correlation, zero padding `k/2`.
pub fn conv_oracle(x: &Tensor, w: &Weights4, bias: &[f32], stride: usize) -> Vec<f64> {
    let [oc, ic, kh, kw] = w.shape();
    let (_, ih, iw) = x.shape();
    let (ph, pw) = ((kh / 2) as isize, (kw / 2) as isize);
    let oh = (ih + 2 * (kh / 2) - kh) / stride + 1;
    let ow = (iw + 2 * (kw / 2) - kw) / stride + 1;
    let mut out = vec![0.0f64; oc * oh * ow];
    for o in 0..oc {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = f64::from(bias[o]);
                for i in 0..ic {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * stride + ky) as isize - ph;
                            let ix = (ox * stride + kx) as isize - pw;
                            if iy >= 0 && ix >= 0 && (iy as usize) < ih && (ix as usize) < iw {
                                acc += f64::from(w.at(o, i, ky, kx))
                                    * f64::from(x.get(i, iy as usize, ix as usize));
                            }
                        }
                    }
                }
                out[(o * oh + oy) * ow + ox] = acc;
            }
        }
    }
    out
}

/// Transposed convolution in gather form: output `(oy, ox)` collects every
/// input `(iy, ix)` with `iy·s + ky − k/2 = oy`.
pub fn conv_transpose_oracle(x: &Tensor, w: &Weights4, bias: &[f32], stride: usize) -> Vec<f64> {
    let [oc, ic, kh, kw] = w.shape();
    let (_, ih, iw) = x.shape();
    let (oh, ow) = (ih * stride, iw * stride);
    let (ph, pw) = ((kh / 2) as isize, (kw / 2) as isize);
    let s = stride as isize;
    let mut out = vec![0.0f64; oc * oh * ow];
    for o in 0..oc {
        for oy in 0..oh as isize {
            for ox in 0..ow as isize {
                let mut acc = f64::from(bias[o]);
                for i in 0..ic {
                    for ky in 0..kh as isize {
                        for kx in 0..kw as isize {
                            let (ny, nx) = (oy + ph - ky, ox + pw - kx);
                            if ny % s != 0 || nx % s != 0 || ny < 0 || nx < 0 {
                                continue;
                            }
                            let (iy, ix) = ((ny / s) as usize, (nx / s) as usize);
                            if iy < ih && ix < iw {
                                acc += f64::from(w.at(o, i, ky as usize, kx as usize))
                                    * f64::from(x.get(i, iy, ix));
                            }
                        }
                    }
                }
                out[((o * oh) + oy as usize) * ow + ox as usize] = acc;
            }
        }
    }
    out
}

/// Random conv case: `(input, weights, bias, stride, transposed)`.
pub fn random_conv_case(case: u64) -> (Tensor, Weights4, Vec<f32>, usize, bool) {
    let mut s = GaussianStream::new(0xC0_4E00 + case);
    let mut pick = |lo: usize, hi: usize| lo + (s.next_uniform() * (hi - lo + 1) as f64) as usize;
    let ic = pick(1, 3);
    let oc = pick(1, 4);
    let k = [1, 3, 5][pick(0, 2)];
    let stride = pick(1, 2);
    let transposed = pick(0, 1) == 1;
    let h = 2 * pick(2, 5);
    let w = 2 * pick(2, 6);
    let mut s = GaussianStream::new(0xC0_4E00 + case + 1_000);
    let x = Tensor::new(ic, h, w, uniform_vec(ic * h * w, -1.0, 1.0, &mut s)).unwrap();
    let wt = Weights4::new(
        oc,
        ic,
        k,
        k,
        uniform_vec(oc * ic * k * k, -1.0, 1.0, &mut s),
    )
    .unwrap();
    let bias = uniform_vec(oc, -0.5, 0.5, &mut s);
    (x, wt, bias, stride, transposed)
}

pub fn max_abs_diff(a: &[f32], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (f64::from(x) - y).abs())
        .fold(0.0, f64::max)
}
