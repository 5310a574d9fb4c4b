//! Experiment configuration.
//!
//! Files are flat TOML: a handful of top-level keys plus the `[degradation]`,
//! `[prior]`, `[iteration]` and `[sweep]` sections. Anything omitted is filled
//! from the per-task defaults, and the resolved [`Config`] serialises back to a
//! file that parses to the same value.

use std::fmt;
use std::path::{Path, PathBuf};

use diamond_core::degrade::{gaussian_kernel, gaussian_support};
use diamond_core::{Boundary, DegradationOp, DiterParams, ImageFormat};
use serde::{Deserialize, Serialize};

pub const MAX_SWEEP: usize = 64;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("missing required key `{0}`")]
    Missing(&'static str),
    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: &'static str, reason: String },
    #[error("{what} {path} does not exist")]
    NoSuchPath { what: &'static str, path: PathBuf },
    #[error("sweep has {0} combinations, the limit is {MAX_SWEEP}")]
    SweepTooLarge(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Denoise,
    Sr2x,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Denoise => "denoise",
            Task::Sr2x => "sr2x",
        })
    }
}

/// Which column of the parameter table the defaults come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dataset {
    Abdominal,
    Oral,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OperatorKind {
    Identity,
    Blur,
    Sr2x,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    Identity,
    GaussianSmooth,
    Network,
}

impl fmt::Display for PriorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PriorKind::Identity => "identity",
            PriorKind::GaussianSmooth => "gaussian_smooth",
            PriorKind::Network => "network",
        })
    }
}

// --- file layout (everything optional) ----------------------------------------

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub task: Option<Task>,
    pub dataset: Option<Dataset>,
    pub input: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,
    pub format: Option<String>,
    #[serde(default)]
    pub degradation: RawDegradation,
    #[serde(default)]
    pub prior: RawPrior,
    #[serde(default)]
    pub iteration: RawIteration,
    #[serde(default)]
    pub sweep: RawSweep,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawDegradation {
    pub operator: Option<OperatorKind>,
    pub blur_sigma: Option<f64>,
    pub periodic: Option<bool>,
    pub noise_sigma: Option<f64>,
    /// Treat `input` as clean and synthesise the degraded image from it.
    pub synthesize: Option<bool>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawPrior {
    pub kind: Option<PriorKind>,
    pub sigma: Option<f64>,
    pub bundle: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawIteration {
    pub mu: Option<f64>,
    pub upsilon: Option<f64>,
    pub delta: Option<f64>,
    pub epsilon: Option<f64>,
    pub step: Option<f64>,
    pub outer_iters: Option<usize>,
    pub tol: Option<f64>,
    pub tv_inner_iters: Option<usize>,
    pub tv_tol: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSweep {
    pub step: Option<Vec<f64>>,
    pub delta: Option<Vec<f64>>,
    pub epsilon: Option<Vec<f64>>,
}

impl RawConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn read(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, path)
    }

    /// Fields set in `other` replace ours.
    pub fn overlay(&mut self, other: RawConfig) {
        fn put<T>(dst: &mut Option<T>, src: Option<T>) {
            if src.is_some() {
                *dst = src;
            }
        }
        put(&mut self.task, other.task);
        put(&mut self.dataset, other.dataset);
        put(&mut self.input, other.input);
        put(&mut self.reference, other.reference);
        put(&mut self.output, other.output);
        put(&mut self.seed, other.seed);
        put(&mut self.format, other.format);

        let (d, o) = (&mut self.degradation, other.degradation);
        put(&mut d.operator, o.operator);
        put(&mut d.blur_sigma, o.blur_sigma);
        put(&mut d.periodic, o.periodic);
        put(&mut d.noise_sigma, o.noise_sigma);
        put(&mut d.synthesize, o.synthesize);

        let (p, o) = (&mut self.prior, other.prior);
        put(&mut p.kind, o.kind);
        put(&mut p.sigma, o.sigma);
        put(&mut p.bundle, o.bundle);

        let (it, o) = (&mut self.iteration, other.iteration);
        put(&mut it.mu, o.mu);
        put(&mut it.upsilon, o.upsilon);
        put(&mut it.delta, o.delta);
        put(&mut it.epsilon, o.epsilon);
        put(&mut it.step, o.step);
        put(&mut it.outer_iters, o.outer_iters);
        put(&mut it.tol, o.tol);
        put(&mut it.tv_inner_iters, o.tv_inner_iters);
        put(&mut it.tv_tol, o.tv_tol);

        let (s, o) = (&mut self.sweep, other.sweep);
        put(&mut s.step, o.step);
        put(&mut s.delta, o.delta);
        put(&mut s.epsilon, o.epsilon);
    }
}

// --- resolved ----------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct Degradation {
    pub operator: OperatorKind,
    pub blur_sigma: f64,
    pub periodic: bool,
    pub noise_sigma: f64,
    pub synthesize: bool,
}

impl Degradation {
    pub fn op(&self) -> diamond_core::Result<DegradationOp> {
        Ok(match self.operator {
            OperatorKind::Identity => DegradationOp::identity(),
            OperatorKind::Sr2x => DegradationOp::sr2x(),
            OperatorKind::Blur => {
                let k = gaussian_kernel(gaussian_support(self.blur_sigma), self.blur_sigma)?;
                let boundary = if self.periodic {
                    Boundary::Periodic
                } else {
                    Boundary::Replicate
                };
                DegradationOp::blur(k, boundary)
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PriorSpec {
    pub kind: PriorKind,
    pub sigma: f64,
    pub bundle: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Sweep {
    pub step: Vec<f64>,
    pub delta: Vec<f64>,
    pub epsilon: Vec<f64>,
}

impl Sweep {
    pub fn is_empty(&self) -> bool {
        self.step.is_empty() && self.delta.is_empty() && self.epsilon.is_empty()
    }

    pub fn combinations(&self) -> usize {
        [&self.step, &self.delta, &self.epsilon]
            .iter()
            .map(|v| v.len().max(1))
            .product()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub task: Task,
    pub dataset: Dataset,
    pub input: PathBuf,
    pub reference: Option<PathBuf>,
    pub output: PathBuf,
    pub seed: u64,
    pub format: ImageFormat,
    pub degradation: Degradation,
    pub prior: PriorSpec,
    pub iteration: DiterParams,
    pub sweep: Sweep,
}

/// `(s, δ, ε)` from the parameter table.
pub fn table_defaults(task: Task, dataset: Dataset) -> (f64, f64, f64) {
    match (task, dataset) {
        (Task::Denoise, Dataset::Abdominal) => (5e-4, 0.0, 9e-4),
        (Task::Denoise, Dataset::Oral) => (1e-4, 0.0, 9e-4),
        (Task::Sr2x, Dataset::Abdominal) => (0.05, 0.01, 5e-5),
        (Task::Sr2x, Dataset::Oral) => (0.01, 1.0, 2.5e-4),
    }
}

fn invalid(key: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key,
        reason: reason.into(),
    }
}

impl Config {
    /// Fills defaults and checks values. Paths are not touched; see
    /// [`Config::check_paths`].
    pub fn resolve(raw: RawConfig) -> Result<Self, ConfigError> {
        let task = raw.task.ok_or(ConfigError::Missing("task"))?;
        let dataset = raw.dataset.unwrap_or(Dataset::Abdominal);
        let input = raw.input.ok_or(ConfigError::Missing("input"))?;
        let format = match raw.format {
            Some(name) => {
                ImageFormat::parse(&name).map_err(|e| invalid("format", e.to_string()))?
            }
            None => ImageFormat::RawF32,
        };

        let d = raw.degradation;
        let degradation = Degradation {
            operator: d.operator.unwrap_or(match task {
                Task::Denoise => OperatorKind::Identity,
                Task::Sr2x => OperatorKind::Sr2x,
            }),
            blur_sigma: d.blur_sigma.unwrap_or(1.0),
            periodic: d.periodic.unwrap_or(false),
            noise_sigma: d.noise_sigma.unwrap_or(match task {
                Task::Denoise => 15.0,
                Task::Sr2x => 0.0,
            }),
            synthesize: d.synthesize.unwrap_or(false),
        };
        if !(degradation.blur_sigma > 0.0 && degradation.blur_sigma.is_finite()) {
            return Err(invalid("degradation.blur_sigma", "must be positive"));
        }
        if !(degradation.noise_sigma >= 0.0 && degradation.noise_sigma.is_finite()) {
            return Err(invalid("degradation.noise_sigma", "must be non-negative"));
        }

        let p = raw.prior;
        let prior = PriorSpec {
            kind: p.kind.unwrap_or(PriorKind::GaussianSmooth),
            sigma: p.sigma.unwrap_or(1.0),
            bundle: p.bundle,
        };
        if !(prior.sigma > 0.0 && prior.sigma.is_finite()) {
            return Err(invalid("prior.sigma", "must be positive"));
        }
        if prior.kind == PriorKind::Network && prior.bundle.is_none() {
            return Err(ConfigError::Missing("prior.bundle"));
        }

        let (s, delta, eps) = table_defaults(task, dataset);
        let it = raw.iteration;
        let base = DiterParams::default();
        let iteration = DiterParams {
            mu: it.mu.unwrap_or(base.mu),
            upsilon: it.upsilon.unwrap_or(base.upsilon),
            delta: it.delta.unwrap_or(delta),
            epsilon_tv: it.epsilon.unwrap_or(eps),
            step: it.step.unwrap_or(s),
            outer_iters: it.outer_iters.unwrap_or(base.outer_iters),
            tol: it.tol.unwrap_or(base.tol),
            tv_inner_iters: it.tv_inner_iters.unwrap_or(base.tv_inner_iters),
            tv_tol: it.tv_tol.unwrap_or(base.tv_tol),
        };
        iteration
            .validate()
            .map_err(|e| invalid("iteration", e.to_string()))?;

        let sw = raw.sweep;
        let sweep = Sweep {
            step: sw.step.unwrap_or_default(),
            delta: sw.delta.unwrap_or_default(),
            epsilon: sw.epsilon.unwrap_or_default(),
        };
        let n = sweep.combinations();
        if n > MAX_SWEEP {
            return Err(ConfigError::SweepTooLarge(n));
        }
        for combo in combinations(&iteration, &sweep) {
            combo
                .validate()
                .map_err(|e| invalid("sweep", e.to_string()))?;
        }

        let output = raw.output.unwrap_or_else(|| PathBuf::from("out"));
        Ok(Config {
            task,
            dataset,
            input,
            reference: raw.reference,
            output,
            seed: raw.seed.unwrap_or(0),
            format,
            degradation,
            prior,
            iteration,
            sweep,
        })
    }

    /// Every input must exist and the output directory's parent must exist.
    pub fn check_paths(&self) -> Result<(), ConfigError> {
        let must_exist = |what: &'static str, path: &Path| {
            if path.is_file() {
                Ok(())
            } else {
                Err(ConfigError::NoSuchPath {
                    what,
                    path: path.to_path_buf(),
                })
            }
        };
        must_exist("input", &self.input)?;
        if let Some(r) = &self.reference {
            must_exist("reference", r)?;
        }
        if let Some(b) = &self.prior.bundle {
            must_exist("prior bundle", b)?;
        }
        let parent = self
            .output
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        if !parent.is_dir() {
            return Err(ConfigError::NoSuchPath {
                what: "output parent directory",
                path: parent.to_path_buf(),
            });
        }
        Ok(())
    }

    /// Parameter sets to run, in a fixed order (ε fastest).
    pub fn runs(&self) -> Vec<DiterParams> {
        combinations(&self.iteration, &self.sweep)
    }

    pub fn to_raw(&self) -> RawConfig {
        let it = &self.iteration;
        let opt_list = |v: &Vec<f64>| (!v.is_empty()).then(|| v.clone());
        RawConfig {
            task: Some(self.task),
            dataset: Some(self.dataset),
            input: Some(self.input.clone()),
            reference: self.reference.clone(),
            output: Some(self.output.clone()),
            seed: Some(self.seed),
            format: Some(self.format.name().to_string()),
            degradation: RawDegradation {
                operator: Some(self.degradation.operator),
                blur_sigma: Some(self.degradation.blur_sigma),
                periodic: Some(self.degradation.periodic),
                noise_sigma: Some(self.degradation.noise_sigma),
                synthesize: Some(self.degradation.synthesize),
            },
            prior: RawPrior {
                kind: Some(self.prior.kind),
                sigma: Some(self.prior.sigma),
                bundle: self.prior.bundle.clone(),
            },
            iteration: RawIteration {
                mu: Some(it.mu),
                upsilon: Some(it.upsilon),
                delta: Some(it.delta),
                epsilon: Some(it.epsilon_tv),
                step: Some(it.step),
                outer_iters: Some(it.outer_iters),
                tol: Some(it.tol),
                tv_inner_iters: Some(it.tv_inner_iters),
                tv_tol: Some(it.tv_tol),
            },
            sweep: RawSweep {
                step: opt_list(&self.sweep.step),
                delta: opt_list(&self.sweep.delta),
                epsilon: opt_list(&self.sweep.epsilon),
            },
        }
    }

    /// The fully resolved configuration as TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_raw()).expect("config serialises")
    }
}

fn combinations(base: &DiterParams, sweep: &Sweep) -> Vec<DiterParams> {
    let or_base = |v: &Vec<f64>, b: f64| if v.is_empty() { vec![b] } else { v.clone() };
    let mut out = Vec::new();
    for s in or_base(&sweep.step, base.step) {
        for d in or_base(&sweep.delta, base.delta) {
            for e in or_base(&sweep.epsilon, base.epsilon_tv) {
                out.push(DiterParams {
                    step: s,
                    delta: d,
                    epsilon_tv: e,
                    ..*base
                });
            }
        }
    }
    out
}

pub fn parse_config(path: &Path) -> Result<Config, ConfigError> {
    Config::resolve(RawConfig::read(path)?)
}
