//! Runs a resolved [`Config`] and writes its artifacts.
//!
//! Every file is first written under a hidden temporary name in the output
//! directory and renamed into place only after the whole run succeeded, so a
//! failed run leaves nothing behind but whatever was there before.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use diamond_core::degrade::add_awgn;
use diamond_core::diter::Prior;
use diamond_core::metrics::MetricReport;
use diamond_core::{load_bundle, metrics, run_diamond, DiterParams, Image, ImageFormat};
use log::{debug, info};
use rayon::prelude::*;

use crate::config::{Config, ConfigError, PriorKind};

pub const SUMMARY_HEADER: &str = "task,prior,K_used,rmse,psnr,ssim";
pub const THREADS_ENV: &str = "DIAMOND_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: diamond_core::Error,
    },
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{THREADS_ENV}: {0}")]
    Threads(String),
}

fn stage(name: impl Into<String>) -> impl FnOnce(diamond_core::Error) -> ExperimentError {
    let stage = name.into();
    move |source| ExperimentError::Stage { stage, source }
}

/// Where the artifacts of a finished run ended up.
#[derive(Clone, Debug, Default)]
pub struct Artifacts {
    pub restored: Vec<PathBuf>,
    pub traces: Vec<PathBuf>,
    pub degraded: Option<PathBuf>,
    pub summary: PathBuf,
    pub log: PathBuf,
}

/// Temp-file bookkeeping; uncommitted files are removed on drop.
#[derive(Default)]
struct Staging {
    files: Mutex<Vec<(PathBuf, PathBuf)>>,
    committed: bool,
}

impl Staging {
    fn temp_for(final_path: &Path) -> PathBuf {
        let name = final_path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        final_path.with_file_name(format!(".{name}.tmp"))
    }

    /// Registers `final_path` and returns the temporary path to write.
    fn stage(&self, final_path: PathBuf) -> PathBuf {
        let tmp = Self::temp_for(&final_path);
        self.files.lock().unwrap().push((tmp.clone(), final_path));
        tmp
    }

    fn write(&self, final_path: PathBuf, bytes: &[u8]) -> Result<(), ExperimentError> {
        let tmp = self.stage(final_path);
        fs::write(&tmp, bytes).map_err(|source| ExperimentError::Io { path: tmp, source })
    }

    fn save_image(
        &self,
        final_path: PathBuf,
        img: &Image,
        format: ImageFormat,
    ) -> Result<(), ExperimentError> {
        let tmp = self.stage(final_path.clone());
        img.save(&tmp, format)
            .map_err(stage(format!("save {}", final_path.display())))
    }

    fn commit(mut self) -> Result<(), ExperimentError> {
        let files = std::mem::take(&mut *self.files.lock().unwrap());
        for (i, (tmp, dst)) in files.iter().enumerate() {
            if let Err(source) = fs::rename(tmp, dst) {
                // put the rest back so drop cleans them up
                *self.files.lock().unwrap() = files[i..].to_vec();
                return Err(ExperimentError::Io {
                    path: dst.clone(),
                    source,
                });
            }
        }
        self.committed = true;
        Ok(())
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for (tmp, _) in self.files.lock().unwrap().iter() {
            let _ = fs::remove_file(tmp);
        }
    }
}

pub fn extension(format: ImageFormat) -> &'static str {
    match format {
        ImageFormat::Png8 | ImageFormat::Png16 => "png",
        ImageFormat::RawF32 => "dimg",
    }
}

/// Thread pool bounded by `DIAMOND_THREADS` (all cores when unset).
pub fn thread_pool() -> Result<rayon::ThreadPool, ExperimentError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
            ExperimentError::Threads(format!("expected a positive integer, got {v:?}"))
        })?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| ExperimentError::Threads(e.to_string()))
}

/// `s=0.5_delta=0_eps=0.01`
pub fn combo_tag(p: &DiterParams) -> String {
    format!("s={}_delta={}_eps={}", p.step, p.delta, p.epsilon_tv)
}

fn build_prior(cfg: &Config) -> Result<Prior, ExperimentError> {
    Ok(match cfg.prior.kind {
        PriorKind::Identity => Prior::Identity,
        PriorKind::GaussianSmooth => Prior::GaussianSmooth {
            sigma: cfg.prior.sigma,
        },
        PriorKind::Network => {
            let path = cfg
                .prior
                .bundle
                .as_ref()
                .ok_or(ConfigError::Missing("prior.bundle"))?;
            Prior::Network(Arc::new(
                load_bundle(path).map_err(stage("load prior bundle"))?,
            ))
        }
    })
}

fn prior_label(cfg: &Config) -> String {
    match cfg.prior.kind {
        PriorKind::GaussianSmooth => format!("gaussian_smooth({})", cfg.prior.sigma),
        kind => kind.to_string(),
    }
}

struct RunResult {
    params: DiterParams,
    k_used: usize,
    report: Option<MetricReport>,
    log_line: String,
}

/// Loads, optionally degrades, restores once per parameter combination and
/// writes every artifact atomically.
pub fn run_experiment(cfg: &Config) -> Result<Artifacts, ExperimentError> {
    cfg.check_paths()?;
    let pool = thread_pool()?;

    let input = Image::load(&cfg.input).map_err(stage("load input"))?;
    let mut reference = cfg
        .reference
        .as_ref()
        .map(|p| Image::load(p).map_err(stage("load reference")))
        .transpose()?;
    let op = cfg.degradation.op().map_err(stage("build operator"))?;

    let il = if cfg.degradation.synthesize {
        let degraded = op.apply(&input).map_err(stage("degrade"))?;
        let (noisy, _) = add_awgn(&degraded, cfg.degradation.noise_sigma, cfg.seed)
            .map_err(stage("add noise"))?;
        reference.get_or_insert(input);
        noisy
    } else {
        input
    };
    let prior = build_prior(cfg)?;
    let label = prior_label(cfg);

    fs::create_dir_all(&cfg.output).map_err(|source| ExperimentError::Io {
        path: cfg.output.clone(),
        source,
    })?;
    let staging = Staging::default();
    let mut artifacts = Artifacts::default();
    let ext = extension(cfg.format);
    let sweeping = !cfg.sweep.is_empty();
    let runs = cfg.runs();
    info!("{} run(s), task {}, prior {label}", runs.len(), cfg.task);

    if cfg.degradation.synthesize {
        let path = cfg.output.join(format!("degraded.{ext}"));
        staging.save_image(path.clone(), &il, cfg.format)?;
        artifacts.degraded = Some(path);
    }

    let names: Vec<(PathBuf, PathBuf)> = runs
        .iter()
        .map(|p| {
            let suffix = if sweeping {
                format!("_{}", combo_tag(p))
            } else {
                String::new()
            };
            (
                cfg.output.join(format!("restored{suffix}.{ext}")),
                cfg.output.join(format!("trace{suffix}.csv")),
            )
        })
        .collect();

    let results: Vec<RunResult> = pool.install(|| {
        runs.par_iter()
            .zip(&names)
            .map(|(params, (img_path, trace_path))| {
                let tag = combo_tag(params);
                debug!("start {tag}");
                let (restored, trace) = run_diamond(&il, &op, &prior, params, reference.as_ref())
                    .map_err(stage(format!("restore [{tag}]")))?;
                staging.save_image(img_path.clone(), &restored, cfg.format)?;
                staging.write(trace_path.clone(), trace.to_csv().as_bytes())?;
                let report = reference
                    .as_ref()
                    .map(|r| metrics::evaluate(&restored, r))
                    .transpose()
                    .map_err(stage(format!("metrics [{tag}]")))?;
                let tv = params.tv_params();
                let log_line = format!(
                    "run {tag}: mu={} upsilon={} xi={} rho={} K={} K_used={} stopped_early={} \
                     tv_unconverged={} initial_residual={:.6e} initial_condition_flagged={}",
                    params.mu,
                    params.upsilon,
                    tv.tv_weight,
                    tv.penalty,
                    params.outer_iters,
                    trace.len(),
                    trace.stopped_early,
                    trace.tv_unconverged,
                    trace.initial_residual,
                    trace.initial_condition_flagged,
                );
                debug!("done {tag}");
                Ok(RunResult {
                    params: *params,
                    k_used: trace.len(),
                    report,
                    log_line,
                })
            })
            .collect::<Result<Vec<_>, ExperimentError>>()
    })?;

    let mut summary = String::from(SUMMARY_HEADER);
    summary.push('\n');
    let mut log_text = String::from("# effective configuration\n");
    log_text.push_str(&cfg.to_toml());
    log_text.push_str("\n# runs\n");
    for r in &results {
        let metrics = r
            .report
            .as_ref()
            .map(MetricReport::csv_fields)
            .unwrap_or_else(|| ",,".into());
        writeln!(summary, "{},{label},{},{metrics}", cfg.task, r.k_used).unwrap();
        writeln!(log_text, "{}", r.log_line).unwrap();
        info!("{} -> K_used {}, {metrics}", combo_tag(&r.params), r.k_used);
    }

    artifacts.summary = cfg.output.join("summary.csv");
    artifacts.log = cfg.output.join("run.log");
    staging.write(artifacts.summary.clone(), summary.as_bytes())?;
    staging.write(artifacts.log.clone(), log_text.as_bytes())?;
    staging.commit()?;

    for (img, trace) in names {
        artifacts.restored.push(img);
        artifacts.traces.push(trace);
    }
    Ok(artifacts)
}
