//! Picture-quality indices on the 0–255 scale.
//!
//! Images are held in `[0, 1]`; every metric rescales by 255 so reported
//! magnitudes are comparable with 8-bit conventions.

use std::fmt;

use crate::error::{Error, Result};
use crate::image::Image;

pub const PEAK: f64 = 255.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Peak signal-to-noise ratio. Identical inputs have no finite PSNR.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub enum Psnr {
    Finite(f64),
    Infinite,
}

impl Psnr {
    pub fn finite(self) -> Option<f64> {
        match self {
            Psnr::Finite(v) => Some(v),
            Psnr::Infinite => None,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Psnr::Infinite)
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Finite(v) => match f.precision() {
                Some(p) => write!(f, "{v:.p$}"),
                None => write!(f, "{v}"),
            },
            Psnr::Infinite => f.write_str("inf"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub rmse: f64,
    pub psnr: Psnr,
    pub ssim: f64,
}

impl MetricReport {
    /// `rmse,psnr,ssim` with six decimals each.
    pub fn csv_fields(&self) -> String {
        format!("{:.6},{:.6},{:.6}", self.rmse, self.psnr, self.ssim)
    }
}

pub fn rmse(a: &Image, b: &Image) -> Result<f64> {
    a.ensure_same_dims(b)?;
    let sse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum();
    Ok(PEAK * (sse / a.len() as f64).sqrt())
}

/// `20·log10(255 / rmse)`.
pub fn psnr_from_rmse(rmse: f64) -> Psnr {
    if rmse > 0.0 {
        Psnr::Finite(20.0 * (PEAK / rmse).log10())
    } else {
        Psnr::Infinite
    }
}

pub fn psnr(a: &Image, b: &Image) -> Result<Psnr> {
    Ok(psnr_from_rmse(rmse(a, b)?))
}

fn gaussian_window_1d() -> [f64; SSIM_WINDOW] {
    let c = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, wi) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *wi = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Separable "valid" filtering: output is `(h - 10) × (w - 10)`.
fn filter_valid(src: &[f64], h: usize, w: usize, win: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut tmp = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            tmp[r * ow + c] = (0..SSIM_WINDOW).map(|k| win[k] * src[r * w + c + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..SSIM_WINDOW)
                .map(|k| win[k] * tmp[(r + k) * ow + c])
                .sum();
        }
    }
    out
}

/// Mean SSIM over all fully-contained 11×11 Gaussian windows (σ = 1.5),
/// with `K1 = 0.01`, `K2 = 0.03`, `L = 255`.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.ensure_same_dims(b)?;
    let (h, w) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    let c1 = (SSIM_K1 * PEAK).powi(2);
    let c2 = (SSIM_K2 * PEAK).powi(2);
    let win = gaussian_window_1d();

    let x: Vec<f64> = a.data().iter().map(|&v| f64::from(v) * PEAK).collect();
    let y: Vec<f64> = b.data().iter().map(|&v| f64::from(v) * PEAK).collect();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();

    let mu_x = filter_valid(&x, h, w, &win);
    let mu_y = filter_valid(&y, h, w, &win);
    let s_xx = filter_valid(&xx, h, w, &win);
    let s_yy = filter_valid(&yy, h, w, &win);
    let s_xy = filter_valid(&xy, h, w, &win);

    let n = mu_x.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let var_x = s_xx[i] - mx * mx;
            let var_y = s_yy[i] - my * my;
            let cov = s_xy[i] - mx * my;
            ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (var_x + var_y + c2))
        })
        .sum();
    Ok(total / n as f64)
}

pub fn evaluate(estimate: &Image, reference: &Image) -> Result<MetricReport> {
    let rmse = rmse(estimate, reference)?;
    Ok(MetricReport {
        rmse,
        psnr: psnr_from_rmse(rmse),
        ssim: ssim(estimate, reference)?,
    })
}
