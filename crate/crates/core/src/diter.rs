//! The deep-iteration loop: y/g/I alternation around a pluggable prior.
//!
//! Starting from `I⁰ = ψ(I_L)` and `g⁰ = I_L`, each outer iteration computes
//!
//! ```text
//! y    = (I_L − H Iᵏ + υ H gᵏ) / (1 + υ)
//! g    = υ ψ(y) / (υ + μ)
//! I_tv = prox_{ε·TV}(Iᵏ + g)          (penalty ρ = δ, or ε when δ = 0)
//! Iᵏ⁺¹ = Iᵏ + s (I_tv − Iᵏ)
//! ```
//!
//! and appends one [`IterRecord`] to the trace.

use std::fmt::Write as _;
use std::sync::Arc;

use crate::degrade::{gaussian_kernel, gaussian_support, Boundary, DegradationOp};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::{self, MetricReport};
use crate::nnexec::{generator_forward, ModelGraph};
use crate::tvprox::{self, TvParams};

/// Image-to-image restorer ψ.
///
/// Implementations must be deterministic and dimension preserving; runs on
/// different images may call the same prior from several threads.
pub trait PriorOperator: Send + Sync {
    fn evaluate(&self, img: &Image) -> Result<Image>;

    fn name(&self) -> String;
}

#[derive(Clone, Debug)]
pub enum Prior {
    Identity,
    /// Replicate-padded Gaussian blur with support `2⌈3σ⌉ + 1`.
    GaussianSmooth {
        sigma: f64,
    },
    Network(Arc<ModelGraph>),
}

impl PriorOperator for Prior {
    fn evaluate(&self, img: &Image) -> Result<Image> {
        match self {
            Prior::Identity => Ok(img.clone()),
            Prior::GaussianSmooth { sigma } => {
                let k = gaussian_kernel(gaussian_support(*sigma), *sigma)?;
                DegradationOp::blur(k, Boundary::Replicate).apply(img)
            }
            Prior::Network(g) => generator_forward(g, img),
        }
    }

    fn name(&self) -> String {
        match self {
            Prior::Identity => "identity".into(),
            Prior::GaussianSmooth { sigma } => format!("gaussian_smooth({sigma})"),
            Prior::Network(g) => format!("network({})", g.meta.variant.name()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiterParams {
    /// μ
    pub mu: f64,
    /// υ
    pub upsilon: f64,
    /// δ, the TV penalty ρ. Zero means "use ε".
    pub delta: f64,
    /// ε, the TV weight ξ.
    pub epsilon_tv: f64,
    /// s, relaxation factor on the I-update.
    pub step: f64,
    /// K
    pub outer_iters: usize,
    /// Early stop once the relative change falls below this.
    pub tol: f64,
    pub tv_inner_iters: usize,
    pub tv_tol: f64,
}

impl Default for DiterParams {
    fn default() -> Self {
        Self {
            mu: 1.0,
            upsilon: 1.0,
            delta: 0.0,
            epsilon_tv: 9e-4,
            step: 5e-4,
            outer_iters: 30,
            tol: 0.0,
            tv_inner_iters: tvprox::DEFAULT_INNER_ITERS,
            tv_tol: tvprox::DEFAULT_TOL,
        }
    }
}

impl DiterParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::InvalidArgument(what));
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return bad(format!("mu must be positive, got {}", self.mu));
        }
        if !(self.upsilon > 0.0 && self.upsilon.is_finite()) {
            return bad(format!("upsilon must be positive, got {}", self.upsilon));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return bad(format!("delta must be non-negative, got {}", self.delta));
        }
        if !(self.epsilon_tv >= 0.0 && self.epsilon_tv.is_finite()) {
            return bad(format!(
                "epsilon must be non-negative, got {}",
                self.epsilon_tv
            ));
        }
        if !(self.step > 0.0 && self.step <= 1.0) {
            return bad(format!("step must lie in (0, 1], got {}", self.step));
        }
        if self.outer_iters == 0 {
            return bad("outer_iters must be at least 1".into());
        }
        if !(self.tol >= 0.0) || !(self.tv_tol >= 0.0) {
            return bad("tolerances must be non-negative".into());
        }
        Ok(())
    }

    /// TV settings for the I-subproblem: ξ = ε, ρ = δ (or ε when δ = 0).
    pub fn tv_params(&self) -> TvParams {
        let penalty = if self.delta > 0.0 {
            self.delta
        } else {
            self.epsilon_tv
        };
        TvParams {
            tv_weight: self.epsilon_tv,
            penalty,
            inner_iters: self.tv_inner_iters,
            tol: self.tv_tol,
        }
    }
}

/// `y = (I_L − H Iᵏ + υ H gᵏ) / (1 + υ)`.
pub fn y_update(
    il: &Image,
    ik: &Image,
    gk: &Image,
    h: &DegradationOp,
    upsilon: f64,
) -> Result<Image> {
    il.ensure_same_dims(ik)?;
    il.ensure_same_dims(gk)?;
    let h_ik = h.apply(ik)?;
    let h_gk = h.apply(gk)?;
    let denom = 1.0 + upsilon;
    let data = il
        .data()
        .iter()
        .zip(h_ik.data())
        .zip(h_gk.data())
        .map(|((&l, &a), &b)| {
            ((f64::from(l) - f64::from(a) + upsilon * f64::from(b)) / denom) as f32
        })
        .collect();
    Ok(Image::from_vec_unchecked(il.height(), il.width(), data))
}

/// `g = υ ψ(y) / (υ + μ)`.
pub fn g_update(psi_y: &Image, upsilon: f64, mu: f64) -> Result<Image> {
    let denom = upsilon + mu;
    if !(denom > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "upsilon + mu must be positive, got {denom}"
        )));
    }
    Ok(psi_y.map(|p| ((upsilon * f64::from(p)) / denom) as f32))
}

/// Iterate and auxiliary variable carried between outer iterations.
#[derive(Clone, Debug, PartialEq)]
pub struct DiamondState {
    pub image: Image,
    pub g: Image,
}

impl DiamondState {
    /// `I⁰ = ψ(I_L)`, `g⁰ = I_L`.
    pub fn initial(il: &Image, prior: &dyn PriorOperator) -> Result<Self> {
        let image = prior
            .evaluate(il)
            .map_err(|e| Error::Prior(format!("initialisation: {e}")))?;
        il.ensure_same_dims(&image)?;
        if !image.is_finite() {
            return Err(Error::NonFinite {
                stage: "prior",
                iteration: 0,
            });
        }
        Ok(Self {
            image,
            g: il.clone(),
        })
    }
}

#[derive(Clone, Debug)]
pub struct StepOutput {
    pub state: DiamondState,
    /// `‖Iᵏ⁺¹ − Iᵏ‖ / ‖Iᵏ‖`
    pub rel_change: f64,
    pub tv_converged: bool,
}

fn finite(img: &Image, stage: &'static str, iteration: usize) -> Result<()> {
    if img.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { stage, iteration })
    }
}

/// One outer iteration. `iteration` (1-based) only labels diagnostics.
pub fn outer_step(
    il: &Image,
    h: &DegradationOp,
    prior: &dyn PriorOperator,
    params: &DiterParams,
    state: &DiamondState,
    iteration: usize,
) -> Result<StepOutput> {
    let ik = &state.image;
    let y = y_update(il, ik, &state.g, h, params.upsilon)?;
    finite(&y, "y-update", iteration)?;
    let psi_y = prior
        .evaluate(&y)
        .map_err(|e| Error::Prior(format!("iteration {iteration}: {e}")))?;
    il.ensure_same_dims(&psi_y)?;
    finite(&psi_y, "prior", iteration)?;
    let g = g_update(&psi_y, params.upsilon, params.mu)?;
    finite(&g, "g-update", iteration)?;

    let s = params.step;
    let (image, tv_converged) = if params.epsilon_tv == 0.0 {
        // prox is the identity, so I_tv − Iᵏ is g itself
        (
            ik.zip_map(&g, |i, gv| (f64::from(i) + s * f64::from(gv)) as f32)?,
            true,
        )
    } else {
        let v = ik.zip_map(&g, |i, gv| i + gv)?;
        let tv = tvprox::tv_prox(&v, &params.tv_params())?;
        finite(&tv.image, "tv-prox", iteration)?;
        let next = ik.zip_map(&tv.image, |i, t| {
            (f64::from(i) + s * (f64::from(t) - f64::from(i))) as f32
        })?;
        (next, tv.converged)
    };
    finite(&image, "relaxation", iteration)?;

    let mut diff = 0.0f64;
    for (a, b) in image.data().iter().zip(ik.data()) {
        diff += (f64::from(*a) - f64::from(*b)).powi(2);
    }
    let norm = ik.norm();
    let rel_change = if norm > 0.0 {
        diff.sqrt() / norm
    } else {
        diff.sqrt()
    };
    Ok(StepOutput {
        state: DiamondState { image, g },
        rel_change,
        tv_converged,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterRecord {
    /// 1-based iteration index.
    pub k: usize,
    pub rel_change: f64,
    /// `‖I_L − H Iᵏ‖_F`
    pub data_fidelity: f64,
    /// Present when a reference image was supplied.
    pub metrics: Option<MetricReport>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConvergenceTrace {
    pub records: Vec<IterRecord>,
    /// `‖H g⁰ − I_L‖ / ‖I_L‖`
    pub initial_residual: f64,
    /// Set when the initial condition `H g⁰ = I_L` misses by more than 1e-3.
    pub initial_condition_flagged: bool,
    pub stopped_early: bool,
    /// Outer iterations whose TV solve hit its iteration cap.
    pub tv_unconverged: usize,
}

pub const TRACE_HEADER: &str = "iter,rel_change,data_fidelity,rmse,psnr,ssim";

impl ConvergenceTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&IterRecord> {
        self.records.last()
    }

    /// `iter,rel_change,data_fidelity,rmse,psnr,ssim`, metric fields empty when
    /// no reference was supplied.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRACE_HEADER);
        out.push('\n');
        for r in &self.records {
            let metrics = r
                .metrics
                .as_ref()
                .map(MetricReport::csv_fields)
                .unwrap_or_else(|| ",,".into());
            writeln!(
                out,
                "{},{:.9e},{:.9e},{metrics}",
                r.k, r.rel_change, r.data_fidelity
            )
            .unwrap();
        }
        out
    }
}

fn fidelity(il: &Image, h: &DegradationOp, img: &Image) -> Result<f64> {
    let hi = h.apply(img)?;
    Ok(il
        .data()
        .iter()
        .zip(hi.data())
        .map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2))
        .sum::<f64>()
        .sqrt())
}

/// Runs up to `outer_iters` iterations and returns the final iterate.
pub fn run_diamond(
    il: &Image,
    h: &DegradationOp,
    prior: &dyn PriorOperator,
    params: &DiterParams,
    reference: Option<&Image>,
) -> Result<(Image, ConvergenceTrace)> {
    params.validate()?;
    params.tv_params().validate()?;
    if let Some(r) = reference {
        il.ensure_same_dims(r)?;
    }
    if !il.is_finite() {
        return Err(Error::NonFinite {
            stage: "input",
            iteration: 0,
        });
    }

    let mut state = DiamondState::initial(il, prior)?;
    let mut trace = ConvergenceTrace::default();
    let il_norm = il.norm();
    let init_res = fidelity(il, h, &state.g)?;
    trace.initial_residual = if il_norm > 0.0 {
        init_res / il_norm
    } else {
        init_res
    };
    trace.initial_condition_flagged = trace.initial_residual > 1e-3;

    for k in 1..=params.outer_iters {
        let step = outer_step(il, h, prior, params, &state, k)?;
        state = step.state;
        if !step.tv_converged {
            trace.tv_unconverged += 1;
        }
        let data_fidelity = fidelity(il, h, &state.image)?;
        if !data_fidelity.is_finite() {
            return Err(Error::NonFinite {
                stage: "data fidelity",
                iteration: k,
            });
        }
        let metrics = reference
            .map(|r| metrics::evaluate(&state.image, r))
            .transpose()?;
        trace.records.push(IterRecord {
            k,
            rel_change: step.rel_change,
            data_fidelity,
            metrics,
        });
        if step.rel_change < params.tol {
            trace.stopped_early = k < params.outer_iters;
            break;
        }
    }
    Ok((state.image, trace))
}
