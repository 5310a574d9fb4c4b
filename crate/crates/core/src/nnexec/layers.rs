use rayon::prelude::*;

use super::Tensor;
use crate::error::{Error, Result};

pub const BN_EPS: f32 = 1e-5;
pub const LEAKY_SLOPE: f32 = 0.2;

/// Convolution weights in `[out_ch, in_ch, kh, kw]` order.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights4 {
    pub out_ch: usize,
    pub in_ch: usize,
    pub kh: usize,
    pub kw: usize,
    pub data: Vec<f32>,
}

impl Weights4 {
    pub fn new(out_ch: usize, in_ch: usize, kh: usize, kw: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != out_ch * in_ch * kh * kw {
            return Err(Error::InvalidArgument(format!(
                "{} weights for shape [{out_ch}, {in_ch}, {kh}, {kw}]",
                data.len()
            )));
        }
        Ok(Self {
            out_ch,
            in_ch,
            kh,
            kw,
            data,
        })
    }

    pub fn zeros(out_ch: usize, in_ch: usize, kh: usize, kw: usize) -> Self {
        Self {
            out_ch,
            in_ch,
            kh,
            kw,
            data: vec![0.0; out_ch * in_ch * kh * kw],
        }
    }

    #[inline]
    pub fn at(&self, o: usize, i: usize, ky: usize, kx: usize) -> f32 {
        self.data[((o * self.in_ch + i) * self.kh + ky) * self.kw + kx]
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.out_ch, self.in_ch, self.kh, self.kw]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f32),
    None,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f32) -> f32 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu(slope) => {
                if x >= 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Activation::None => x,
        }
    }
}

/// Where an additive skip reads from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Input,
    Layer(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    /// Cross-correlation, zero padding `⌊k/2⌋`.
    Conv {
        weight: Weights4,
        bias: Vec<f32>,
        stride: usize,
    },
    /// Transposed convolution producing exactly `stride ×` the input size.
    ConvTranspose {
        weight: Weights4,
        bias: Vec<f32>,
        stride: usize,
    },
    /// Inference-mode batch norm with stored statistics.
    BatchNorm {
        gamma: Vec<f32>,
        beta: Vec<f32>,
        mean: Vec<f32>,
        var: Vec<f32>,
    },
    Activation(Activation),
    /// Adds the output of an earlier layer.
    ResidualAdd {
        source: usize,
    },
    /// Adds the graph input.
    InputSkip,
}

impl LayerSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::ConvTranspose { .. } => "conv_transpose",
            LayerSpec::BatchNorm { .. } => "batchnorm",
            LayerSpec::Activation(_) => "activation",
            LayerSpec::ResidualAdd { .. } => "residual_add",
            LayerSpec::InputSkip => "input_skip",
        }
    }

    /// Number of tensor inputs `layer_forward` expects.
    pub fn arity(&self) -> usize {
        match self {
            LayerSpec::ResidualAdd { .. } | LayerSpec::InputSkip => 2,
            _ => 1,
        }
    }

    pub fn skip_source(&self) -> Option<Source> {
        match self {
            LayerSpec::ResidualAdd { source } => Some(Source::Layer(*source)),
            LayerSpec::InputSkip => Some(Source::Input),
            _ => None,
        }
    }
}

fn shape_err(index: usize, reason: impl Into<String>) -> Error {
    Error::Shape {
        layer: index,
        reason: reason.into(),
    }
}

/// Runs one layer. `inputs[0]` is the main path; additive layers take the
/// skip tensor as `inputs[1]`. `index` only labels errors.
pub fn layer_forward(index: usize, layer: &LayerSpec, inputs: &[&Tensor]) -> Result<Tensor> {
    if inputs.len() != layer.arity() {
        return Err(shape_err(
            index,
            format!(
                "{} expects {} input(s), got {}",
                layer.kind_name(),
                layer.arity(),
                inputs.len()
            ),
        ));
    }
    let x = inputs[0];
    match layer {
        LayerSpec::Conv {
            weight,
            bias,
            stride,
        } => conv2d(index, x, weight, bias, *stride),
        LayerSpec::ConvTranspose {
            weight,
            bias,
            stride,
        } => conv_transpose2d(index, x, weight, bias, *stride),
        LayerSpec::BatchNorm {
            gamma,
            beta,
            mean,
            var,
        } => {
            let c = x.channels;
            if [gamma.len(), beta.len(), mean.len(), var.len()] != [c; 4] {
                return Err(shape_err(index, format!("batchnorm over {c} channels")));
            }
            let plane = x.height * x.width;
            let mut data = x.data.clone();
            for (ch, chunk) in data.chunks_mut(plane.max(1)).enumerate().take(c) {
                let scale = gamma[ch] / (var[ch] + BN_EPS).sqrt();
                let shift = beta[ch] - scale * mean[ch];
                chunk.iter_mut().for_each(|v| *v = scale * *v + shift);
            }
            Ok(Tensor { data, ..x.clone() })
        }
        LayerSpec::Activation(act) => Ok(Tensor {
            data: x.data.iter().map(|&v| act.apply(v)).collect(),
            ..x.clone()
        }),
        LayerSpec::ResidualAdd { .. } | LayerSpec::InputSkip => {
            let y = inputs[1];
            if x.shape() != y.shape() {
                return Err(shape_err(
                    index,
                    format!("cannot add {:?} and {:?}", x.shape(), y.shape()),
                ));
            }
            Ok(Tensor {
                data: x.data.iter().zip(&y.data).map(|(a, b)| a + b).collect(),
                ..x.clone()
            })
        }
    }
}

fn check_conv(index: usize, x: &Tensor, w: &Weights4, bias: &[f32], stride: usize) -> Result<()> {
    if w.in_ch != x.channels {
        return Err(shape_err(
            index,
            format!(
                "kernel expects {} input channels, got {}",
                w.in_ch, x.channels
            ),
        ));
    }
    if bias.len() != w.out_ch {
        return Err(shape_err(
            index,
            format!("{} biases for {} output channels", bias.len(), w.out_ch),
        ));
    }
    if w.kh.is_multiple_of(2) || w.kw.is_multiple_of(2) {
        return Err(shape_err(index, "kernel sides must be odd"));
    }
    if stride != 1 && stride != 2 {
        return Err(shape_err(index, format!("unsupported stride {stride}")));
    }
    Ok(())
}

fn conv2d(index: usize, x: &Tensor, w: &Weights4, bias: &[f32], stride: usize) -> Result<Tensor> {
    check_conv(index, x, w, bias, stride)?;
    let (ih, iw) = (x.height, x.width);
    if stride == 2 && (ih % 2 != 0 || iw % 2 != 0) {
        return Err(shape_err(
            index,
            format!("stride-2 convolution needs even input, got {ih}x{iw}"),
        ));
    }
    let (ph, pw) = (w.kh / 2, w.kw / 2);
    let (oh, ow) = (
        (ih + 2 * ph - w.kh) / stride + 1,
        (iw + 2 * pw - w.kw) / stride + 1,
    );
    let plane = oh * ow;
    let mut data = vec![0.0f32; w.out_ch * plane];
    data.par_chunks_mut(plane).enumerate().for_each(|(o, out)| {
        out.iter_mut().for_each(|v| *v = bias[o]);
        for i in 0..w.in_ch {
            let src = x.channel(i);
            for ky in 0..w.kh {
                for kx in 0..w.kw {
                    let wv = w.at(o, i, ky, kx);
                    if wv == 0.0 {
                        continue;
                    }
                    for oy in 0..oh {
                        let iy = (oy * stride + ky) as isize - ph as isize;
                        if iy < 0 || iy >= ih as isize {
                            continue;
                        }
                        let row = &src[iy as usize * iw..(iy as usize + 1) * iw];
                        let dst = &mut out[oy * ow..(oy + 1) * ow];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * stride + kx) as isize - pw as isize;
                            if ix >= 0 && ix < iw as isize {
                                *d += wv * row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    });
    Ok(Tensor {
        channels: w.out_ch,
        height: oh,
        width: ow,
        data,
    })
}

fn conv_transpose2d(
    index: usize,
    x: &Tensor,
    w: &Weights4,
    bias: &[f32],
    stride: usize,
) -> Result<Tensor> {
    check_conv(index, x, w, bias, stride)?;
    let (ih, iw) = (x.height, x.width);
    let (ph, pw) = (w.kh / 2, w.kw / 2);
    let (oh, ow) = (ih * stride, iw * stride);
    let plane = oh * ow;
    let mut data = vec![0.0f32; w.out_ch * plane];
    data.par_chunks_mut(plane).enumerate().for_each(|(o, out)| {
        out.iter_mut().for_each(|v| *v = bias[o]);
        for i in 0..w.in_ch {
            let src = x.channel(i);
            for ky in 0..w.kh {
                for kx in 0..w.kw {
                    let wv = w.at(o, i, ky, kx);
                    if wv == 0.0 {
                        continue;
                    }
                    for iy in 0..ih {
                        let oy = (iy * stride + ky) as isize - ph as isize;
                        if oy < 0 || oy >= oh as isize {
                            continue;
                        }
                        let row = &src[iy * iw..(iy + 1) * iw];
                        let dst = &mut out[oy as usize * ow..(oy as usize + 1) * ow];
                        for (ix, &s) in row.iter().enumerate() {
                            let ox = (ix * stride + kx) as isize - pw as isize;
                            if ox >= 0 && ox < ow as isize {
                                dst[ox as usize] += wv * s;
                            }
                        }
                    }
                }
            }
        }
    });
    Ok(Tensor {
        channels: w.out_ch,
        height: oh,
        width: ow,
        data,
    })
}
