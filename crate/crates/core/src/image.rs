//! Single-channel `f32` raster, file I/O and patch extraction.
//!
//! Pixel values are nominally in `[0, 1]`. Integer PNG samples with bit depth
//! `B` load as `s / (2^B - 1)`; saving clamps to `[0, 1]` and quantizes to the
//! nearest level, with exact ties going to the lower level.
//!
//! The `rawf32` container is a 16-byte little-endian header followed by the
//! row-major samples:
//!
//! ```text
//! offset  size  field
//!      0     4  magic "DIMG"
//!      4     4  u32 height (J1)
//!      8     4  u32 width  (J2)
//!     12     4  u32 reserved, written as 0
//!     16  4·J1·J2  f32 samples, row-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const RAW_MAGIC: [u8; 4] = *b"DIMG";
pub const RAW_HEADER_LEN: usize = 16;
pub const DEFAULT_PATCH_SIZE: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    /// Builds an image from row-major samples, rejecting empty shapes,
    /// length mismatches and non-finite values.
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidImage(format!("empty shape {height}x{width}")));
        }
        if data.len() != height * width {
            return Err(Error::InvalidImage(format!(
                "{} samples for a {height}x{width} image",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidImage(format!(
                "non-finite sample at row {}, col {}",
                i / width,
                i % width
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub(crate) fn from_vec_unchecked(height: usize, width: usize, data: Vec<f32>) -> Self {
        debug_assert!(height > 0 && width > 0 && data.len() == height * width);
        Self {
            height,
            width,
            data,
        }
    }

    /// # Panics
    /// Panics on a zero dimension or a non-finite fill value.
    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        assert!(height > 0 && width > 0, "empty image shape");
        assert!(value.is_finite(), "non-finite fill value");
        Self::from_vec_unchecked(height, width, vec![value; height * width])
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    /// # Panics
    /// Panics on a zero dimension or if `f` returns a non-finite value.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        assert!(height > 0 && width > 0, "empty image shape");
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                let v = f(r, c);
                assert!(v.is_finite(), "non-finite sample at ({r}, {c})");
                data.push(v);
            }
        }
        Self::from_vec_unchecked(height, width, data)
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    /// `(height, width)`.
    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.data[row * self.width..(row + 1) * self.width]
    }

    pub fn ensure_same_dims(&self, other: &Image) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                actual: other.dims(),
            });
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Image {
        Image::from_vec_unchecked(
            self.height,
            self.width,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn zip_map(&self, other: &Image, f: impl Fn(f32, f32) -> f32) -> Result<Image> {
        self.ensure_same_dims(other)?;
        Ok(Image::from_vec_unchecked(
            self.height,
            self.width,
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Frobenius norm accumulated in `f64`.
    pub fn norm(&self) -> f64 {
        self.data
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| f64::from(v)).sum::<f64>() / self.data.len() as f64
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        load(path, ImageFormat::from_path(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>, format: ImageFormat) -> Result<()> {
        save(self, path, format)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ImageFormat {
    Png8,
    Png16,
    RawF32,
}

impl ImageFormat {
    /// Guesses the format from the extension. `.png` maps to [`ImageFormat::Png8`];
    /// when loading, the stored bit depth wins over the guess.
    pub fn from_path(path: &Path) -> Result<Self> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref()
        {
            Some("png") => Ok(ImageFormat::Png8),
            Some("dimg") | Some("raw") | Some("f32") => Ok(ImageFormat::RawF32),
            other => Err(Error::UnsupportedFormat(format!(
                "cannot infer image format from extension {other:?} of {}",
                path.display()
            ))),
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "png8" => Ok(ImageFormat::Png8),
            "png16" => Ok(ImageFormat::Png16),
            "rawf32" => Ok(ImageFormat::RawF32),
            other => Err(Error::UnsupportedFormat(other.to_string())),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ImageFormat::Png8 => "png8",
            ImageFormat::Png16 => "png16",
            ImageFormat::RawF32 => "rawf32",
        }
    }
}

/// Clamps to `[0, 1]` and maps to the nearest of `max_level + 1` levels.
/// Exact ties resolve to the lower level.
fn quantize(v: f32, max_level: u32) -> u32 {
    let scaled = f64::from(v.clamp(0.0, 1.0)) * f64::from(max_level);
    (scaled - 0.5).ceil().max(0.0) as u32
}

pub fn load(path: impl AsRef<Path>, format: ImageFormat) -> Result<Image> {
    let path = path.as_ref();
    match format {
        ImageFormat::Png8 | ImageFormat::Png16 => load_png(path),
        ImageFormat::RawF32 => load_raw(path),
    }
}

pub fn save(img: &Image, path: impl AsRef<Path>, format: ImageFormat) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    match format {
        ImageFormat::Png8 | ImageFormat::Png16 => write_png(img, &mut out, format, path)?,
        ImageFormat::RawF32 => out
            .write_all(&encode_raw(img))
            .map_err(|e| Error::io(path, e))?,
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Serializes to the `rawf32` container.
pub fn encode_raw(img: &Image) -> Vec<u8> {
    let mut buf = Vec::with_capacity(RAW_HEADER_LEN + 4 * img.len());
    buf.extend_from_slice(&RAW_MAGIC);
    buf.extend_from_slice(&(img.height as u32).to_le_bytes());
    buf.extend_from_slice(&(img.width as u32).to_le_bytes());
    buf.extend_from_slice(&0u32.to_le_bytes());
    for v in &img.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode_raw(bytes: &[u8], path: &Path) -> Result<Image> {
    if bytes.len() < RAW_HEADER_LEN {
        return Err(Error::malformed(path, "truncated rawf32 header"));
    }
    if bytes[..4] != RAW_MAGIC {
        return Err(Error::UnsupportedFormat(format!(
            "{}: missing DIMG magic",
            path.display()
        )));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (height, width) = (word(4), word(8));
    let expected = height
        .checked_mul(width)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::malformed(path, "header dimensions overflow"))?;
    let payload = &bytes[RAW_HEADER_LEN..];
    if payload.len() != expected {
        return Err(Error::malformed(
            path,
            format!(
                "header declares {height}x{width} ({expected} bytes) but payload has {} bytes",
                payload.len()
            ),
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Image::new(height, width, data)
}

fn load_raw(path: &Path) -> Result<Image> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_raw(&bytes, path)
}

fn load_png(path: &Path) -> Result<Image> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::malformed(path, e.to_string()))?;
    let mut buf = vec![
        0u8;
        reader
            .output_buffer_size()
            .ok_or_else(|| Error::malformed(path, "image too large"))?
    ];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::malformed(path, e.to_string()))?;
    if info.color_type != png::ColorType::Grayscale {
        return Err(Error::UnsupportedFormat(format!(
            "{}: only single-channel grayscale PNG is supported, found {:?}",
            path.display(),
            info.color_type
        )));
    }
    let (height, width) = (info.height as usize, info.width as usize);
    let data: Vec<f32> = match info.bit_depth {
        png::BitDepth::Eight => (0..height)
            .flat_map(|r| {
                let row = &buf[r * info.line_size..r * info.line_size + width];
                row.iter().map(|&s| f32::from(s) / 255.0)
            })
            .collect(),
        png::BitDepth::Sixteen => (0..height)
            .flat_map(|r| {
                let row = &buf[r * info.line_size..r * info.line_size + 2 * width];
                row.chunks_exact(2)
                    .map(|c| f32::from(u16::from_be_bytes([c[0], c[1]])) / 65535.0)
            })
            .collect(),
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: unsupported PNG bit depth {other:?}",
                path.display()
            )))
        }
    };
    Image::new(height, width, data)
}

fn write_png(img: &Image, out: &mut impl Write, format: ImageFormat, path: &Path) -> Result<()> {
    let mut encoder = png::Encoder::new(out, img.width as u32, img.height as u32);
    encoder.set_color(png::ColorType::Grayscale);
    let samples: Vec<u8> = match format {
        ImageFormat::Png8 => {
            encoder.set_depth(png::BitDepth::Eight);
            img.data.iter().map(|&v| quantize(v, 255) as u8).collect()
        }
        _ => {
            encoder.set_depth(png::BitDepth::Sixteen);
            img.data
                .iter()
                .flat_map(|&v| (quantize(v, 65535) as u16).to_be_bytes())
                .collect()
        }
    };
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::malformed(path, e.to_string()))?;
    writer
        .write_image_data(&samples)
        .map_err(|e| Error::malformed(path, e.to_string()))?;
    writer
        .finish()
        .map_err(|e| Error::malformed(path, e.to_string()))
}

/// Square patches cut from a larger image, with their top-left offsets.
#[derive(Clone, Debug)]
pub struct PatchSet {
    pub size: usize,
    pub patches: Vec<Image>,
    pub offsets: Vec<(usize, usize)>,
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }
}

/// Enumerates `size × size` patches in row-major scan order of their
/// top-left corners, stepping by `stride` in both directions.
pub fn extract_patches(img: &Image, size: usize, stride: usize) -> Result<PatchSet> {
    if size == 0 || stride == 0 {
        return Err(Error::InvalidArgument(
            "patch size and stride must be at least 1".into(),
        ));
    }
    if size > img.height.min(img.width) {
        return Err(Error::InvalidArgument(format!(
            "patch size {size} exceeds image {}x{}",
            img.height, img.width
        )));
    }
    let rows = (img.height - size) / stride + 1;
    let cols = (img.width - size) / stride + 1;
    let mut patches = Vec::with_capacity(rows * cols);
    let mut offsets = Vec::with_capacity(rows * cols);
    for pr in 0..rows {
        for pc in 0..cols {
            let (r0, c0) = (pr * stride, pc * stride);
            let mut data = Vec::with_capacity(size * size);
            for r in r0..r0 + size {
                data.extend_from_slice(&img.row(r)[c0..c0 + size]);
            }
            patches.push(Image::from_vec_unchecked(size, size, data));
            offsets.push((r0, c0));
        }
    }
    Ok(PatchSet {
        size,
        patches,
        offsets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_bad_shapes_and_values() {
        assert!(Image::new(0, 3, vec![]).is_err());
        assert!(Image::new(2, 2, vec![0.0; 3]).is_err());
        assert!(Image::new(1, 2, vec![0.0, f32::NAN]).is_err());
        assert!(Image::new(1, 2, vec![0.0, f32::INFINITY]).is_err());
    }

    #[test]
    fn png8_half_grey_quantizes_to_127() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("half.png");
        Image::filled(4, 4, 0.5)
            .save(&p, ImageFormat::Png8)
            .unwrap();
        let back = Image::load(&p).unwrap();
        assert_eq!(back.dims(), (4, 4));
        assert!(back.data().iter().all(|&v| v == 127.0 / 255.0));
    }

    #[test]
    fn png16_round_trip_is_within_half_a_level() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ramp.png");
        let img = Image::from_fn(8, 9, |r, c| (r * 9 + c) as f32 / 71.0);
        img.save(&p, ImageFormat::Png16).unwrap();
        let back = Image::load(&p).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-7);
        }
    }

    #[test]
    fn png_save_clamps_out_of_range() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("clamp.png");
        Image::new(1, 2, vec![-0.3, 1.7])
            .unwrap()
            .save(&p, ImageFormat::Png8)
            .unwrap();
        assert_eq!(Image::load(&p).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn load_256_square_raster() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("slice.png");
        Image::from_fn(256, 256, |r, c| ((r + c) % 256) as f32 / 255.0)
            .save(&p, ImageFormat::Png8)
            .unwrap();
        let img = Image::load(&p).unwrap();
        assert_eq!((img.height(), img.width()), (256, 256));
    }

    #[test]
    fn raw_header_layout() {
        let img = Image::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let bytes = encode_raw(&img);
        assert_eq!(&bytes[..4], b"DIMG");
        assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &3u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &[0, 0, 0, 0]);
        assert_eq!(&bytes[16..20], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 16 + 24);
    }

    #[test]
    fn raw_rejects_length_mismatch_and_bad_magic() {
        let img = Image::zeros(3, 3);
        let mut bytes = encode_raw(&img);
        bytes.pop();
        assert!(matches!(
            decode_raw(&bytes, Path::new("x")),
            Err(Error::Malformed { .. })
        ));
        let mut bytes = encode_raw(&img);
        bytes[0] = b'X';
        assert!(matches!(
            decode_raw(&bytes, Path::new("x")),
            Err(Error::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn missing_file_is_an_io_error() {
        assert!(matches!(
            load("/nonexistent/dir/x.dimg", ImageFormat::RawF32),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn unknown_extension_is_unsupported() {
        assert!(ImageFormat::from_path(Path::new("a.bmp")).is_err());
        assert!(ImageFormat::parse("tiff").is_err());
    }

    #[test]
    fn patch_count_and_identity_case() {
        let img = Image::from_fn(256, 256, |r, c| (r * c % 7) as f32);
        assert_eq!(extract_patches(&img, 64, 64).unwrap().len(), 16);

        let small = Image::from_fn(64, 64, |r, c| (r + 2 * c) as f32);
        let set = extract_patches(&small, 64, 1).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.patches[0], small);
        assert_eq!(set.offsets, vec![(0, 0)]);
    }

    #[test]
    fn patches_match_direct_indexing() {
        let img = Image::from_fn(5, 5, |r, c| (10 * r + c) as f32);
        let set = extract_patches(&img, 3, 2).unwrap();
        assert_eq!(set.offsets, vec![(0, 0), (0, 2), (2, 0), (2, 2)]);
        for (patch, &(r0, c0)) in set.patches.iter().zip(&set.offsets) {
            for i in 0..3 {
                for j in 0..3 {
                    assert_eq!(patch.get(i, j), (10 * (r0 + i) + (c0 + j)) as f32);
                }
            }
        }
    }

    #[test]
    fn patch_larger_than_image_is_rejected() {
        assert!(extract_patches(&Image::zeros(8, 16), 9, 1).is_err());
        assert!(extract_patches(&Image::zeros(8, 8), 4, 0).is_err());
    }
}
