//! Portable weight bundle.
//!
//! ```text
//! offset     size  field
//!      0        4  magic "DWB1"
//!      4        4  u32 LE manifest length M
//!      8        M  UTF-8 manifest (see below)
//!    8+M        P  payload: f32 LE tensors concatenated in manifest order,
//!                  P given by the manifest's `payload_bytes` line
//!  8+M+P        4  u32 LE CRC-32 (IEEE) of the payload
//! ```
//!
//! The manifest is line oriented, `key value...`, in this order:
//!
//! ```text
//! diamond-weights 1
//! variant sr2x
//! depth 4
//! res_counts 4 4 6 2
//! widths 64 128 256 512
//! in_channels 1
//! residual_output 1
//! payload_bytes 123456
//! layer conv out=64 in=1 k=3x3 stride=1
//! layer batchnorm ch=64
//! layer activation relu | leaky_relu slope=0.2 | none
//! layer residual_add source=7
//! layer input_skip
//! layer conv_transpose out=64 in=128 k=3x3 stride=2
//! tensor 0.weight 64,1,3,3 crc=1a2b3c4d
//! tensor 0.bias 64 crc=...
//! ```
//!
//! Convolution weights are `[out_ch, in_ch, kh, kw]` for both convolution
//! kinds. Tensors appear in layer order: `weight`, `bias` for convolutions and
//! `gamma`, `beta`, `mean`, `var` for batch norm. The per-tensor CRC lets a
//! payload checksum failure name the damaged tensor and its byte offset.

use std::fmt::Write as _;
use std::path::Path;

use super::graph::{GraphMeta, ModelGraph, Variant};
use super::layers::{Activation, LayerSpec, Weights4};
use crate::error::{Error, Result};

pub const BUNDLE_MAGIC: [u8; 4] = *b"DWB1";
const FORMAT_LINE: &str = "diamond-weights 1";

struct TensorRef<'a> {
    name: String,
    shape: Vec<usize>,
    data: &'a [f32],
}

fn tensors_of(graph: &ModelGraph) -> Vec<TensorRef<'_>> {
    let mut out = Vec::new();
    for (i, layer) in graph.layers.iter().enumerate() {
        match layer {
            LayerSpec::Conv { weight, bias, .. }
            | LayerSpec::ConvTranspose { weight, bias, .. } => {
                out.push(TensorRef {
                    name: format!("{i}.weight"),
                    shape: weight.shape().to_vec(),
                    data: &weight.data,
                });
                out.push(TensorRef {
                    name: format!("{i}.bias"),
                    shape: vec![bias.len()],
                    data: bias,
                });
            }
            LayerSpec::BatchNorm {
                gamma,
                beta,
                mean,
                var,
            } => {
                for (suffix, t) in [
                    ("gamma", gamma),
                    ("beta", beta),
                    ("mean", mean),
                    ("var", var),
                ] {
                    out.push(TensorRef {
                        name: format!("{i}.{suffix}"),
                        shape: vec![t.len()],
                        data: t,
                    });
                }
            }
            _ => {}
        }
    }
    out
}

fn payload_bytes(data: &[f32]) -> Vec<u8> {
    data.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn join<T: ToString>(xs: &[T], sep: &str) -> String {
    xs.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(sep)
}

/// Serializes a graph and its weights.
pub fn encode_bundle(graph: &ModelGraph) -> Result<Vec<u8>> {
    graph.validate()?;
    let meta = &graph.meta;
    let tensors = tensors_of(graph);
    let mut payload = Vec::new();
    let mut tensor_lines = String::new();
    for t in &tensors {
        let bytes = payload_bytes(t.data);
        let crc = crc32fast::hash(&bytes);
        writeln!(
            tensor_lines,
            "tensor {} {} crc={crc:08x}",
            t.name,
            join(&t.shape, ",")
        )
        .unwrap();
        payload.extend_from_slice(&bytes);
    }

    let mut m = String::new();
    writeln!(m, "{FORMAT_LINE}").unwrap();
    writeln!(m, "variant {}", meta.variant.name()).unwrap();
    writeln!(m, "depth {}", meta.depth).unwrap();
    writeln!(m, "res_counts {}", join(&meta.res_counts, " ")).unwrap();
    writeln!(m, "widths {}", join(&meta.widths, " ")).unwrap();
    writeln!(m, "in_channels {}", meta.in_channels).unwrap();
    writeln!(m, "residual_output {}", u8::from(meta.residual_output)).unwrap();
    writeln!(m, "payload_bytes {}", payload.len()).unwrap();
    for layer in &graph.layers {
        let line = match layer {
            LayerSpec::Conv { weight, stride, .. }
            | LayerSpec::ConvTranspose { weight, stride, .. } => format!(
                "{} out={} in={} k={}x{} stride={stride}",
                layer.kind_name(),
                weight.out_ch,
                weight.in_ch,
                weight.kh,
                weight.kw
            ),
            LayerSpec::BatchNorm { gamma, .. } => format!("batchnorm ch={}", gamma.len()),
            LayerSpec::Activation(Activation::Relu) => "activation relu".into(),
            LayerSpec::Activation(Activation::LeakyRelu(s)) => {
                format!("activation leaky_relu slope={s}")
            }
            LayerSpec::Activation(Activation::None) => "activation none".into(),
            LayerSpec::ResidualAdd { source } => format!("residual_add source={source}"),
            LayerSpec::InputSkip => "input_skip".into(),
        };
        writeln!(m, "layer {line}").unwrap();
    }
    m.push_str(&tensor_lines);

    let mut out = Vec::with_capacity(12 + m.len() + payload.len());
    out.extend_from_slice(&BUNDLE_MAGIC);
    out.extend_from_slice(&(m.len() as u32).to_le_bytes());
    out.extend_from_slice(m.as_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    Ok(out)
}

pub fn save_bundle(graph: &ModelGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_bundle(graph)?).map_err(|e| Error::io(path, e))
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<ModelGraph> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_bundle(&bytes, path)
}

/// Layer skeleton parsed from the manifest, before weights are attached.
enum Skeleton {
    Conv {
        transpose: bool,
        shape: [usize; 4],
        stride: usize,
    },
    BatchNorm(usize),
    Activation(Activation),
    ResidualAdd(usize),
    InputSkip,
}

struct Fields<'a> {
    path: &'a Path,
    line: usize,
    items: Vec<(&'a str, &'a str)>,
}

impl<'a> Fields<'a> {
    fn parse(path: &'a Path, line: usize, tokens: &[&'a str]) -> Result<Self> {
        let items = tokens
            .iter()
            .map(|t| {
                t.split_once('=').ok_or_else(|| {
                    Error::malformed(
                        path,
                        format!("manifest line {line}: expected key=value, got `{t}`"),
                    )
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { path, line, items })
    }

    fn get(&self, key: &str) -> Result<&'a str> {
        self.items
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| {
                Error::malformed(
                    self.path,
                    format!("manifest line {}: missing `{key}`", self.line),
                )
            })
    }

    fn usize(&self, key: &str) -> Result<usize> {
        let v = self.get(key)?;
        v.parse().map_err(|_| {
            Error::malformed(
                self.path,
                format!("manifest line {}: `{key}={v}` is not an integer", self.line),
            )
        })
    }
}

fn parse_usizes(path: &Path, line: usize, tokens: &[&str]) -> Result<Vec<usize>> {
    tokens
        .iter()
        .map(|t| {
            t.parse().map_err(|_| {
                Error::malformed(
                    path,
                    format!("manifest line {line}: `{t}` is not an integer"),
                )
            })
        })
        .collect()
}

fn parse_layer(path: &Path, line: usize, tokens: &[&str]) -> Result<Skeleton> {
    let kind = *tokens
        .first()
        .ok_or_else(|| Error::malformed(path, format!("manifest line {line}: empty layer")))?;
    let rest = &tokens[1..];
    match kind {
        "conv" | "conv_transpose" => {
            let f = Fields::parse(path, line, rest)?;
            let k = f.get("k")?;
            let (kh, kw) = k
                .split_once('x')
                .and_then(|(a, b)| Some((a.parse().ok()?, b.parse().ok()?)))
                .ok_or_else(|| {
                    Error::malformed(path, format!("manifest line {line}: bad kernel `{k}`"))
                })?;
            Ok(Skeleton::Conv {
                transpose: kind == "conv_transpose",
                shape: [f.usize("out")?, f.usize("in")?, kh, kw],
                stride: f.usize("stride")?,
            })
        }
        "batchnorm" => Ok(Skeleton::BatchNorm(
            Fields::parse(path, line, rest)?.usize("ch")?,
        )),
        "activation" => {
            let act = match rest.first().copied() {
                Some("relu") => Activation::Relu,
                Some("none") => Activation::None,
                Some("leaky_relu") => {
                    let f = Fields::parse(path, line, &rest[1..])?;
                    let s = f.get("slope")?;
                    Activation::LeakyRelu(s.parse().map_err(|_| {
                        Error::malformed(path, format!("manifest line {line}: bad slope `{s}`"))
                    })?)
                }
                other => {
                    return Err(Error::UnknownLayer(format!(
                        "activation {}",
                        other.unwrap_or("<missing>")
                    )))
                }
            };
            Ok(Skeleton::Activation(act))
        }
        "residual_add" => Ok(Skeleton::ResidualAdd(
            Fields::parse(path, line, rest)?.usize("source")?,
        )),
        "input_skip" => Ok(Skeleton::InputSkip),
        other => Err(Error::UnknownLayer(other.to_string())),
    }
}

/// Parses and verifies a bundle. `path` only labels errors.
pub fn decode_bundle(bytes: &[u8], path: &Path) -> Result<ModelGraph> {
    if bytes.len() < 12 || bytes[..4] != BUNDLE_MAGIC {
        return Err(Error::UnsupportedFormat(format!(
            "{}: not a weight bundle",
            path.display()
        )));
    }
    let mlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let manifest_end = 8usize
        .checked_add(mlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::malformed(path, "manifest length exceeds file"))?;
    let manifest = std::str::from_utf8(&bytes[8..manifest_end])
        .map_err(|_| Error::malformed(path, "manifest is not UTF-8"))?;

    let mut variant = None;
    let mut depth = None;
    let mut res_counts = None;
    let mut widths = None;
    let mut in_channels = None;
    let mut residual_output = None;
    let mut payload_len = None;
    let mut skeletons = Vec::new();
    let mut tensor_decls: Vec<(String, Vec<usize>, u32)> = Vec::new();

    for (n, raw) in manifest.lines().enumerate() {
        let line = n + 1;
        let tokens: Vec<&str> = raw.split_whitespace().collect();
        let Some((&key, rest)) = tokens.split_first() else {
            continue;
        };
        if line == 1 {
            if raw.trim() != FORMAT_LINE {
                return Err(Error::UnsupportedFormat(format!(
                    "{}: unknown manifest header `{raw}`",
                    path.display()
                )));
            }
            continue;
        }
        let single = |what: &str| -> Result<usize> {
            match parse_usizes(path, line, rest)?.as_slice() {
                [v] => Ok(*v),
                _ => Err(Error::malformed(
                    path,
                    format!("manifest line {line}: `{what}` takes one value"),
                )),
            }
        };
        match key {
            "variant" => {
                variant = Some(Variant::parse(rest.first().copied().unwrap_or(""))?);
            }
            "depth" => depth = Some(single("depth")?),
            "res_counts" => res_counts = Some(parse_usizes(path, line, rest)?),
            "widths" => widths = Some(parse_usizes(path, line, rest)?),
            "in_channels" => in_channels = Some(single("in_channels")?),
            "residual_output" => residual_output = Some(single("residual_output")? != 0),
            "payload_bytes" => payload_len = Some(single("payload_bytes")?),
            "layer" => skeletons.push(parse_layer(path, line, rest)?),
            "tensor" => {
                let [name, shape, crc] = rest else {
                    return Err(Error::malformed(
                        path,
                        format!("manifest line {line}: tensor needs name, shape, crc"),
                    ));
                };
                let dims = parse_usizes(path, line, &shape.split(',').collect::<Vec<_>>())?;
                let crc = crc
                    .strip_prefix("crc=")
                    .and_then(|h| u32::from_str_radix(h, 16).ok())
                    .ok_or_else(|| {
                        Error::malformed(path, format!("manifest line {line}: bad crc `{crc}`"))
                    })?;
                tensor_decls.push((name.to_string(), dims, crc));
            }
            other => {
                return Err(Error::malformed(
                    path,
                    format!("manifest line {line}: unknown key `{other}`"),
                ))
            }
        }
    }
    let missing = |k: &str| Error::malformed(path, format!("manifest lacks `{k}`"));
    let meta = GraphMeta {
        variant: variant.ok_or_else(|| missing("variant"))?,
        depth: depth.ok_or_else(|| missing("depth"))?,
        res_counts: res_counts.ok_or_else(|| missing("res_counts"))?,
        widths: widths.ok_or_else(|| missing("widths"))?,
        in_channels: in_channels.ok_or_else(|| missing("in_channels"))?,
        residual_output: residual_output.ok_or_else(|| missing("residual_output"))?,
    };
    let payload_len = payload_len.ok_or_else(|| missing("payload_bytes"))?;

    let expected_file = manifest_end + payload_len + 4;
    if bytes.len() != expected_file {
        return Err(Error::malformed(
            path,
            format!(
                "manifest declares {payload_len} payload bytes; file length {} (expected {expected_file})",
                bytes.len()
            ),
        ));
    }
    let payload = &bytes[manifest_end..manifest_end + payload_len];
    let stored_crc = u32::from_le_bytes(bytes[expected_file - 4..].try_into().unwrap());

    // Per-tensor spans, checked against the manifest before anything else so
    // a checksum failure can point at the damaged tensor.
    let mut spans = Vec::with_capacity(tensor_decls.len());
    let mut offset = 0usize;
    for (name, dims, crc) in &tensor_decls {
        let len = dims.iter().product::<usize>() * 4;
        if offset + len > payload.len() {
            return Err(Error::malformed(
                path,
                format!("tensor `{name}` runs past the payload"),
            ));
        }
        spans.push((name.as_str(), dims.as_slice(), *crc, offset, len));
        offset += len;
    }
    if offset != payload.len() {
        return Err(Error::malformed(
            path,
            format!(
                "tensors cover {offset} bytes but payload has {}",
                payload.len()
            ),
        ));
    }

    let actual_crc = crc32fast::hash(payload);
    if actual_crc != stored_crc {
        let damaged = spans
            .iter()
            .find(|(_, _, crc, off, len)| crc32fast::hash(&payload[*off..*off + *len]) != *crc);
        let (tensor, offset) = match damaged {
            Some((name, _, _, off, _)) => (name.to_string(), (manifest_end + off) as u64),
            None => ("<payload>".to_string(), manifest_end as u64),
        };
        return Err(Error::Checksum {
            offset,
            tensor,
            expected: stored_crc,
            actual: actual_crc,
        });
    }

    let mut next = spans.into_iter();
    let mut take = |expect_name: String, expect_shape: &[usize]| -> Result<Vec<f32>> {
        let (name, dims, crc, off, len) = next
            .next()
            .ok_or_else(|| Error::malformed(path, format!("missing tensor `{expect_name}`")))?;
        if name != expect_name || dims != expect_shape {
            return Err(Error::malformed(
                path,
                format!(
                    "expected tensor `{expect_name}` {expect_shape:?}, found `{name}` {dims:?}"
                ),
            ));
        }
        let bytes = &payload[off..off + len];
        if crc32fast::hash(bytes) != crc {
            return Err(Error::Checksum {
                offset: (manifest_end + off) as u64,
                tensor: name.to_string(),
                expected: crc,
                actual: crc32fast::hash(bytes),
            });
        }
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::malformed(
                path,
                format!("tensor `{name}` holds non-finite values"),
            ));
        }
        Ok(data)
    };

    let mut layers = Vec::with_capacity(skeletons.len());
    for (i, sk) in skeletons.into_iter().enumerate() {
        layers.push(match sk {
            Skeleton::Conv {
                transpose,
                shape,
                stride,
            } => {
                let w = take(format!("{i}.weight"), &shape)?;
                let bias = take(format!("{i}.bias"), &[shape[0]])?;
                let weight = Weights4::new(shape[0], shape[1], shape[2], shape[3], w)?;
                if transpose {
                    LayerSpec::ConvTranspose {
                        weight,
                        bias,
                        stride,
                    }
                } else {
                    LayerSpec::Conv {
                        weight,
                        bias,
                        stride,
                    }
                }
            }
            Skeleton::BatchNorm(ch) => LayerSpec::BatchNorm {
                gamma: take(format!("{i}.gamma"), &[ch])?,
                beta: take(format!("{i}.beta"), &[ch])?,
                mean: take(format!("{i}.mean"), &[ch])?,
                var: take(format!("{i}.var"), &[ch])?,
            },
            Skeleton::Activation(a) => LayerSpec::Activation(a),
            Skeleton::ResidualAdd(source) => LayerSpec::ResidualAdd { source },
            Skeleton::InputSkip => LayerSpec::InputSkip,
        });
    }
    if next.next().is_some() {
        return Err(Error::malformed(
            path,
            "manifest lists tensors no layer uses",
        ));
    }

    let graph = ModelGraph { meta, layers };
    graph.validate()?;
    Ok(graph)
}
