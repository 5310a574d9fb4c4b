//! The single-shot subcommands: degrade, infer, metrics.

use std::fmt::Write as _;
use std::path::Path;

use diamond_core::degrade::add_awgn;
use diamond_core::{generator_forward, load_bundle, metrics, DegradationOp, Image, ImageFormat};

/// `H(clean)` plus AWGN at `sigma255`; also writes the noise-level map when
/// asked.
pub fn degrade_file(
    input: &Path,
    output: &Path,
    format: ImageFormat,
    op: &DegradationOp,
    sigma255: f64,
    seed: u64,
    noise_map: Option<&Path>,
) -> diamond_core::Result<Image> {
    let clean = Image::load(input)?;
    let (noisy, map) = add_awgn(&op.apply(&clean)?, sigma255, seed)?;
    noisy.save(output, format)?;
    if let Some(path) = noise_map {
        map.as_image().save(path, ImageFormat::RawF32)?;
    }
    Ok(noisy)
}

pub fn infer_file(
    bundle: &Path,
    input: &Path,
    output: &Path,
    format: ImageFormat,
) -> diamond_core::Result<Image> {
    let model = load_bundle(bundle)?;
    let img = Image::load(input)?;
    let out = generator_forward(&model, &img)?;
    out.save(output, format)?;
    Ok(out)
}

/// Header plus one `rmse,psnr,ssim` line per `(estimate, reference)` pair.
pub fn metrics_csv(pairs: &[(&Path, &Path)]) -> diamond_core::Result<String> {
    let mut out = String::from("rmse,psnr,ssim\n");
    for (est, reference) in pairs {
        let report = metrics::evaluate(&Image::load(est)?, &Image::load(reference)?)?;
        writeln!(out, "{}", report.csv_fields()).unwrap();
    }
    Ok(out)
}
