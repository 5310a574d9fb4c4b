use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use diamond_cli::config::{Dataset, OperatorKind, PriorKind, RawConfig, Task};
use diamond_cli::experiment::run_experiment;
use diamond_cli::{tools, Config};
use diamond_core::ImageFormat;
use log::info;

/// Plug-and-play restoration of degraded medical images.
#[derive(Parser, Debug)]
#[command(name = "diamond", version, about)]
struct Cli {
    /// More log output (-v info, -vv debug)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Restore one image with a single parameter set.
    Restore(ConfigArgs),
    /// Restore once per combination of the swept parameters.
    Sweep(ConfigArgs),
    /// Apply a degradation operator and noise to a clean image.
    Degrade(DegradeArgs),
    /// Print rmse,psnr,ssim for estimate/reference pairs.
    Metrics(MetricsArgs),
    /// Run a generator bundle on one image.
    Infer(InferArgs),
}

/// Every flag overrides the matching key of `--config`.
#[derive(Args, Debug)]
struct ConfigArgs {
    /// TOML configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    task: Option<TaskArg>,
    #[arg(long, value_enum)]
    dataset: Option<DatasetArg>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// png8, png16 or rawf32
    #[arg(long)]
    format: Option<String>,

    #[arg(long, value_enum)]
    operator: Option<OperatorArg>,
    #[arg(long)]
    blur_sigma: Option<f64>,
    #[arg(long)]
    periodic: Option<bool>,
    /// Noise level on the 0-255 scale
    #[arg(long)]
    noise_sigma: Option<f64>,
    /// Treat the input as clean and synthesise the degraded image
    #[arg(long)]
    synthesize: Option<bool>,

    #[arg(long, value_enum)]
    prior: Option<PriorArg>,
    #[arg(long)]
    prior_sigma: Option<f64>,
    #[arg(long)]
    bundle: Option<PathBuf>,

    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    upsilon: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    step: Option<f64>,
    /// Outer iterations K
    #[arg(long)]
    outer_iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    tv_inner_iters: Option<usize>,
    #[arg(long)]
    tv_tol: Option<f64>,

    /// Comma-separated step values to sweep
    #[arg(long, value_delimiter = ',')]
    sweep_step: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    sweep_delta: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    sweep_epsilon: Option<Vec<f64>>,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum TaskArg {
    Denoise,
    Sr2x,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum DatasetArg {
    Abdominal,
    Oral,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum OperatorArg {
    Identity,
    Blur,
    Sr2x,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum PriorArg {
    Identity,
    GaussianSmooth,
    Network,
}

impl From<OperatorArg> for OperatorKind {
    fn from(a: OperatorArg) -> Self {
        match a {
            OperatorArg::Identity => OperatorKind::Identity,
            OperatorArg::Blur => OperatorKind::Blur,
            OperatorArg::Sr2x => OperatorKind::Sr2x,
        }
    }
}

impl ConfigArgs {
    fn resolve(self) -> Result<Config> {
        let mut raw = match &self.config {
            Some(path) => RawConfig::read(path)?,
            None => RawConfig::default(),
        };
        let mut flags = RawConfig {
            task: self.task.map(|t| match t {
                TaskArg::Denoise => Task::Denoise,
                TaskArg::Sr2x => Task::Sr2x,
            }),
            dataset: self.dataset.map(|d| match d {
                DatasetArg::Abdominal => Dataset::Abdominal,
                DatasetArg::Oral => Dataset::Oral,
            }),
            input: self.input,
            reference: self.reference,
            output: self.output,
            seed: self.seed,
            format: self.format,
            ..RawConfig::default()
        };
        let d = &mut flags.degradation;
        d.operator = self.operator.map(Into::into);
        d.blur_sigma = self.blur_sigma;
        d.periodic = self.periodic;
        d.noise_sigma = self.noise_sigma;
        d.synthesize = self.synthesize;
        let p = &mut flags.prior;
        p.kind = self.prior.map(|k| match k {
            PriorArg::Identity => PriorKind::Identity,
            PriorArg::GaussianSmooth => PriorKind::GaussianSmooth,
            PriorArg::Network => PriorKind::Network,
        });
        p.sigma = self.prior_sigma;
        p.bundle = self.bundle;
        let it = &mut flags.iteration;
        it.mu = self.mu;
        it.upsilon = self.upsilon;
        it.delta = self.delta;
        it.epsilon = self.epsilon;
        it.step = self.step;
        it.outer_iters = self.outer_iters;
        it.tol = self.tol;
        it.tv_inner_iters = self.tv_inner_iters;
        it.tv_tol = self.tv_tol;
        let s = &mut flags.sweep;
        s.step = self.sweep_step;
        s.delta = self.sweep_delta;
        s.epsilon = self.sweep_epsilon;

        raw.overlay(flags);
        Ok(Config::resolve(raw)?)
    }
}

#[derive(Args, Debug)]
struct DegradeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, value_enum, default_value = "identity")]
    operator: OperatorArg,
    #[arg(long, default_value_t = 1.0)]
    blur_sigma: f64,
    #[arg(long)]
    periodic: bool,
    /// Noise level on the 0-255 scale
    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the per-pixel noise level (rawf32)
    #[arg(long)]
    noise_map: Option<PathBuf>,
    /// Defaults to the format implied by the output extension
    #[arg(long)]
    format: Option<String>,
}

#[derive(Args, Debug)]
struct MetricsArgs {
    /// estimate reference [estimate reference ...]
    #[arg(required = true, num_args = 2..)]
    images: Vec<PathBuf>,
}

#[derive(Args, Debug)]
struct InferArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    format: Option<String>,
}

fn output_format(name: Option<&str>, path: &std::path::Path) -> Result<ImageFormat> {
    Ok(match name {
        Some(n) => ImageFormat::parse(n)?,
        None => ImageFormat::from_path(path)?,
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Restore(args) => {
            let cfg = args.resolve()?;
            if !cfg.sweep.is_empty() {
                bail!("the configuration defines a sweep; run `diamond sweep` instead");
            }
            let art = run_experiment(&cfg)?;
            info!("wrote {}", art.summary.display());
        }
        Command::Sweep(args) => {
            let cfg = args.resolve()?;
            if cfg.sweep.is_empty() {
                bail!("no sweep lists given (set [sweep] or --sweep-step/--sweep-delta/--sweep-epsilon)");
            }
            let art = run_experiment(&cfg)?;
            info!("wrote {} traces", art.traces.len());
        }
        Command::Degrade(a) => {
            let format = output_format(a.format.as_deref(), &a.output)?;
            let cfg = diamond_cli::config::Degradation {
                operator: a.operator.into(),
                blur_sigma: a.blur_sigma,
                periodic: a.periodic,
                noise_sigma: a.noise_sigma,
                synthesize: true,
            };
            let op = cfg.op()?;
            tools::degrade_file(
                &a.input,
                &a.output,
                format,
                &op,
                a.noise_sigma,
                a.seed,
                a.noise_map.as_deref(),
            )
            .with_context(|| format!("degrading {}", a.input.display()))?;
        }
        Command::Metrics(a) => {
            if a.images.len() % 2 != 0 {
                bail!(
                    "metrics takes estimate/reference pairs, got {} paths",
                    a.images.len()
                );
            }
            let pairs: Vec<_> = a
                .images
                .chunks(2)
                .map(|p| (p[0].as_path(), p[1].as_path()))
                .collect();
            print!("{}", tools::metrics_csv(&pairs)?);
        }
        Command::Infer(a) => {
            let format = output_format(a.format.as_deref(), &a.output)?;
            tools::infer_file(&a.bundle, &a.input, &a.output, format)
                .with_context(|| format!("running {}", a.bundle.display()))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
