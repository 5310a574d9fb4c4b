use std::collections::HashMap;

use super::layers::{layer_forward, Activation, LayerSpec, Source, Weights4};
use super::Tensor;
use crate::degrade::GaussianStream;
use crate::error::{Error, Result};
use crate::image::Image;

/// Which block type fills each encoder level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Residual blocks (conv-BN-ReLU-conv-BN + skip).
    Sr2x,
    /// Each residual block replaced by two conv-BN-ReLU sets.
    Denoise,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Sr2x => "sr2x",
            Variant::Denoise => "denoise",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sr2x" => Ok(Variant::Sr2x),
            "denoise" => Ok(Variant::Denoise),
            other => Err(Error::InvalidArgument(format!("unknown variant `{other}`"))),
        }
    }
}

/// Architecture description carried alongside the layer list.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphMeta {
    pub variant: Variant,
    pub depth: usize,
    pub res_counts: Vec<usize>,
    pub widths: Vec<usize>,
    pub in_channels: usize,
    /// Output is `input + net(input)`.
    pub residual_output: bool,
}

/// Generator hyperparameters. Defaults: depth 4, blocks `[4, 4, 6, 2]`,
/// widths `[64, 128, 256, 512]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    pub variant: Variant,
    pub depth: usize,
    pub res_counts: Vec<usize>,
    pub widths: Vec<usize>,
    pub in_channels: usize,
    pub kernel: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Sr2x,
            depth: 4,
            res_counts: vec![4, 4, 6, 2],
            widths: vec![64, 128, 256, 512],
            in_channels: 1,
            kernel: 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum WeightInit {
    /// Every tensor zero, including batch-norm scale and statistics.
    Zeros,
    /// He-scaled Gaussian convolutions, identity batch norm.
    Random { seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelGraph {
    pub meta: GraphMeta,
    pub layers: Vec<LayerSpec>,
}

struct Init {
    kind: WeightInit,
    stream: GaussianStream,
}

impl Init {
    fn new(kind: WeightInit) -> Self {
        let seed = match kind {
            WeightInit::Zeros => 0,
            WeightInit::Random { seed } => seed,
        };
        Self {
            kind,
            stream: GaussianStream::new(seed),
        }
    }

    fn conv(&mut self, out_ch: usize, in_ch: usize, k: usize) -> (Weights4, Vec<f32>) {
        let mut w = Weights4::zeros(out_ch, in_ch, k, k);
        if let WeightInit::Random { .. } = self.kind {
            let std = (2.0 / (in_ch * k * k) as f64).sqrt();
            w.data
                .iter_mut()
                .for_each(|v| *v = (std * self.stream.next_gaussian()) as f32);
        }
        (w, vec![0.0; out_ch])
    }

    fn batchnorm(&mut self, ch: usize) -> LayerSpec {
        let one = match self.kind {
            WeightInit::Zeros => 0.0,
            WeightInit::Random { .. } => 1.0,
        };
        LayerSpec::BatchNorm {
            gamma: vec![one; ch],
            beta: vec![0.0; ch],
            mean: vec![0.0; ch],
            var: vec![one; ch],
        }
    }
}

/// Builds the residual U-Net generator.
///
/// Layout: head conv-BN-ReLU to `widths[0]`; per level a stride-2 conv-BN-ReLU
/// followed by that level's blocks; per level on the way up a stride-2
/// transposed conv-BN-ReLU summed with the matching encoder output; a final
/// conv back to `in_channels`; the input is added to the result.
pub fn build_generator(cfg: &GeneratorConfig, init: WeightInit) -> Result<ModelGraph> {
    if cfg.depth == 0 || cfg.depth > 6 {
        return Err(Error::InvalidArgument(format!(
            "depth must be in 1..=6, got {}",
            cfg.depth
        )));
    }
    if cfg.res_counts.len() != cfg.depth || cfg.widths.len() != cfg.depth {
        return Err(Error::InvalidArgument(format!(
            "depth {} needs {} block counts and widths, got {} and {}",
            cfg.depth,
            cfg.depth,
            cfg.res_counts.len(),
            cfg.widths.len()
        )));
    }
    if cfg.kernel.is_multiple_of(2) || cfg.in_channels == 0 || cfg.widths.contains(&0) {
        return Err(Error::InvalidArgument(
            "invalid kernel or channel width".into(),
        ));
    }
    let k = cfg.kernel;
    let mut init = Init::new(init);
    let mut layers: Vec<LayerSpec> = Vec::new();

    let conv_bn_relu = |layers: &mut Vec<LayerSpec>,
                        init: &mut Init,
                        cin: usize,
                        cout: usize,
                        stride: usize,
                        transpose: bool| {
        let (weight, bias) = init.conv(cout, cin, k);
        layers.push(if transpose {
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
        });
        layers.push(init.batchnorm(cout));
        layers.push(LayerSpec::Activation(Activation::Relu));
    };

    let head = cfg.widths[0];
    conv_bn_relu(&mut layers, &mut init, cfg.in_channels, head, 1, false);
    let mut level_out = vec![layers.len() - 1];

    let mut width = head;
    for level in 0..cfg.depth {
        let next = cfg.widths[level];
        conv_bn_relu(&mut layers, &mut init, width, next, 2, false);
        width = next;
        for _ in 0..cfg.res_counts[level] {
            match cfg.variant {
                Variant::Sr2x => {
                    let block_in = layers.len() - 1;
                    conv_bn_relu(&mut layers, &mut init, width, width, 1, false);
                    let (weight, bias) = init.conv(width, width, k);
                    layers.push(LayerSpec::Conv {
                        weight,
                        bias,
                        stride: 1,
                    });
                    layers.push(init.batchnorm(width));
                    layers.push(LayerSpec::ResidualAdd { source: block_in });
                }
                Variant::Denoise => {
                    conv_bn_relu(&mut layers, &mut init, width, width, 1, false);
                    conv_bn_relu(&mut layers, &mut init, width, width, 1, false);
                }
            }
        }
        level_out.push(layers.len() - 1);
    }

    for level in (0..cfg.depth).rev() {
        let target = if level == 0 {
            head
        } else {
            cfg.widths[level - 1]
        };
        conv_bn_relu(&mut layers, &mut init, width, target, 2, true);
        layers.push(LayerSpec::ResidualAdd {
            source: level_out[level],
        });
        width = target;
    }

    let (weight, bias) = init.conv(cfg.in_channels, width, k);
    layers.push(LayerSpec::Conv {
        weight,
        bias,
        stride: 1,
    });

    let graph = ModelGraph {
        meta: GraphMeta {
            variant: cfg.variant,
            depth: cfg.depth,
            res_counts: cfg.res_counts.clone(),
            widths: cfg.widths.clone(),
            in_channels: cfg.in_channels,
            residual_output: true,
        },
        layers,
    };
    graph.validate()?;
    Ok(graph)
}

impl ModelGraph {
    /// Static checks: skips point backwards, channel counts chain, the number
    /// of stride-2 down/up steps equals `depth`, and (for the residual
    /// variant) block counts per level agree with `res_counts`.
    pub fn validate(&self) -> Result<()> {
        let meta = &self.meta;
        if meta.res_counts.len() != meta.depth || meta.widths.len() != meta.depth {
            return Err(Error::InvalidArgument(format!(
                "depth {} disagrees with {} block counts / {} widths",
                meta.depth,
                meta.res_counts.len(),
                meta.widths.len()
            )));
        }
        if self.layers.is_empty() {
            return Err(Error::InvalidArgument("graph has no layers".into()));
        }
        // Channels and downsampling level after each layer.
        let mut ch: Vec<usize> = Vec::with_capacity(self.layers.len());
        let mut lvl: Vec<isize> = Vec::with_capacity(self.layers.len());
        let (mut c, mut l) = (meta.in_channels, 0isize);
        let (mut downs, mut ups) = (0usize, 0usize);
        for (i, layer) in self.layers.iter().enumerate() {
            let err = |reason: String| Error::Shape { layer: i, reason };
            match layer {
                LayerSpec::Conv {
                    weight,
                    bias,
                    stride,
                }
                | LayerSpec::ConvTranspose {
                    weight,
                    bias,
                    stride,
                } => {
                    if weight.in_ch != c {
                        return Err(err(format!(
                            "expects {} input channels, previous layer yields {c}",
                            weight.in_ch
                        )));
                    }
                    if bias.len() != weight.out_ch {
                        return Err(err(format!(
                            "{} biases for {} channels",
                            bias.len(),
                            weight.out_ch
                        )));
                    }
                    if weight.kh % 2 == 0 || weight.kw % 2 == 0 {
                        return Err(err("kernel sides must be odd".into()));
                    }
                    if *stride != 1 && *stride != 2 {
                        return Err(err(format!("unsupported stride {stride}")));
                    }
                    c = weight.out_ch;
                    if *stride == 2 {
                        if matches!(layer, LayerSpec::Conv { .. }) {
                            downs += 1;
                            l += 1;
                        } else {
                            ups += 1;
                            l -= 1;
                        }
                    }
                }
                LayerSpec::BatchNorm {
                    gamma,
                    beta,
                    mean,
                    var,
                } => {
                    if [gamma.len(), beta.len(), mean.len(), var.len()] != [c; 4] {
                        return Err(err(format!(
                            "batchnorm parameters do not cover {c} channels"
                        )));
                    }
                }
                LayerSpec::Activation(_) => {}
                LayerSpec::ResidualAdd { source } => {
                    if *source >= i {
                        return Err(err(format!("skip source {source} is not an earlier layer")));
                    }
                    if ch[*source] != c || lvl[*source] != l {
                        return Err(err(format!(
                            "skip from layer {source} ({} channels, level {}) does not match ({c}, level {l})",
                            ch[*source], lvl[*source]
                        )));
                    }
                }
                LayerSpec::InputSkip => {
                    if c != meta.in_channels || l != 0 {
                        return Err(err("input skip needs input-shaped features".into()));
                    }
                }
            }
            ch.push(c);
            lvl.push(l);
        }
        if downs != meta.depth || ups != meta.depth {
            return Err(Error::InvalidArgument(format!(
                "declared depth {} but graph has {downs} down-steps and {ups} up-steps",
                meta.depth
            )));
        }
        if c != meta.in_channels || l != 0 {
            return Err(Error::InvalidArgument(format!(
                "graph ends with {c} channels at level {l}, expected {} at level 0",
                meta.in_channels
            )));
        }
        if meta.variant == Variant::Sr2x {
            let counts = self.encoder_block_counts();
            if counts != meta.res_counts {
                return Err(Error::InvalidArgument(format!(
                    "declared block counts {:?} but graph has {counts:?}",
                    meta.res_counts
                )));
            }
        }
        Ok(())
    }

    /// Residual blocks found at each encoder level (levels 1..=depth), i.e.
    /// skips whose source sits at the same level, before the first up-step.
    pub fn encoder_block_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.meta.depth];
        let mut level = 0usize;
        for layer in &self.layers {
            match layer {
                LayerSpec::Conv { stride: 2, .. } => level += 1,
                LayerSpec::ConvTranspose { stride: 2, .. } => break,
                LayerSpec::ResidualAdd { .. } if level >= 1 && level <= counts.len() => {
                    counts[level - 1] += 1
                }
                _ => {}
            }
        }
        counts
    }

    pub fn down_steps(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::Conv { stride: 2, .. }))
            .count()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                LayerSpec::Conv { weight, bias, .. }
                | LayerSpec::ConvTranspose { weight, bias, .. } => weight.data.len() + bias.len(),
                LayerSpec::BatchNorm { gamma, .. } => 4 * gamma.len(),
                _ => 0,
            })
            .sum()
    }

    /// Runs every layer, returning the final tensor (before the residual
    /// output connection). Intermediate outputs are kept only while a later
    /// skip still needs them.
    pub fn forward_tensor(&self, input: &Tensor) -> Result<Tensor> {
        let mut last_use: HashMap<usize, usize> = HashMap::new();
        for (i, layer) in self.layers.iter().enumerate() {
            if let Some(Source::Layer(s)) = layer.skip_source() {
                last_use.insert(s, i);
            }
        }
        let mut saved: HashMap<usize, Tensor> = HashMap::new();
        let mut current = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let next = match layer.skip_source() {
                None => layer_forward(i, layer, &[&current])?,
                Some(Source::Input) => layer_forward(i, layer, &[&current, input])?,
                Some(Source::Layer(s)) => {
                    let skip = saved.get(&s).ok_or_else(|| Error::Shape {
                        layer: i,
                        reason: format!("skip source {s} unavailable"),
                    })?;
                    let out = layer_forward(i, layer, &[&current, skip])?;
                    if last_use.get(&s) == Some(&i) {
                        saved.remove(&s);
                    }
                    out
                }
            };
            if last_use.contains_key(&i) {
                saved.insert(i, next.clone());
            }
            current = next;
        }
        Ok(current)
    }
}

/// Restores `img` with the generator; dimensions must be divisible by
/// `2^depth`.
pub fn generator_forward(model: &ModelGraph, img: &Image) -> Result<Image> {
    let step = 1usize << model.meta.depth;
    let (h, w) = img.dims();
    if h % step != 0 || w % step != 0 {
        return Err(Error::InvalidArgument(format!(
            "image {h}x{w} is not divisible by {step} (depth {})",
            model.meta.depth
        )));
    }
    if model.meta.in_channels != 1 {
        return Err(Error::InvalidArgument(format!(
            "generator expects {} channels, images have 1",
            model.meta.in_channels
        )));
    }
    let input = Tensor::from_image(img);
    let out = model.forward_tensor(&input)?;
    if out.shape() != input.shape() {
        return Err(Error::Shape {
            layer: model.layers.len() - 1,
            reason: format!(
                "output {:?} does not match input {:?}",
                out.shape(),
                input.shape()
            ),
        });
    }
    let data: Vec<f32> = if model.meta.residual_output {
        img.data()
            .iter()
            .zip(out.data())
            .map(|(a, b)| a + b)
            .collect()
    } else {
        out.data().to_vec()
    };
    Image::new(h, w, data).map_err(|e| Error::Prior(format!("generator output: {e}")))
}
