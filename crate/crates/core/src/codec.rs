//! Semantic encoder/decoder, power normalization and the private/common split.
//!
//! Layer convention: the private part occupies feature layers `0..P` and the
//! common part layers `P..E`. Zero-padding a part back to `E` layers places it
//! at those indices, so the two padded parts have disjoint support.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::ResourcePlan;
use crate::error::{Error, Result};
use crate::nn::{join, Act, Conv2d, ConvLayer, ConvTranspose2d, Param, Parameterized, ResidualBlock, SeqCache, Sequential, Stage, Tensor};

/// Colour image `[3, H, W]` with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor(Tensor);

impl ImageTensor {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != 3 * height * width {
            return Err(Error::ShapeMismatch(format!("{} pixels for a 3×{height}×{width} image", pixels.len())));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidConfig(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self(Tensor::from_vec(1, 3, height, width, pixels)))
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self(Tensor::full(1, 3, height, width, value.clamp(0.0, 1.0)))
    }

    /// Sample `i` of a batch, clamped onto `[0, 1]`.
    pub fn from_batch(batch: &Tensor, i: usize) -> Self {
        let mut t = batch.samples(i..i + 1);
        t.data_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        Self(t)
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn pixels(&self) -> &[f32] {
        self.0.data()
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    /// Interleaved 8-bit RGB, rounding to nearest.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let plane = self.height() * self.width();
        let p = self.pixels();
        (0..plane).flat_map(|i| (0..3).map(move |c| (p[c * plane + i] * 255.0).round() as u8)).collect()
    }

    pub fn from_rgb8(height: usize, width: usize, rgb: &[u8]) -> Result<Self> {
        let plane = height * width;
        if rgb.len() != 3 * plane {
            return Err(Error::ShapeMismatch(format!("{} bytes for a {height}×{width} RGB image", rgb.len())));
        }
        let mut pixels = vec![0.0; 3 * plane];
        for i in 0..plane {
            for c in 0..3 {
                pixels[c * plane + i] = rgb[3 * i + c] as f32 / 255.0;
            }
        }
        Self::new(height, width, pixels)
    }
}

/// Encoder output `[E, H/4, W/4]` for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    values: Tensor,
    normalized: bool,
}

impl FeatureMap {
    pub fn new(values: Tensor, normalized: bool) -> Self {
        assert_eq!(values.batch(), 1, "a feature map holds one sample");
        Self { values, normalized }
    }

    pub fn layers(&self) -> usize {
        self.values.channels()
    }

    pub fn tensor(&self) -> &Tensor {
        &self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn mean_square(&self) -> f64 {
        self.values.mean_square()
    }
}

/// Private layers `0..P` and common layers `P..E` of one feature map.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitFeatures {
    pub private: Tensor,
    pub common: Tensor,
}

/// A part to be zero-padded back to the full layer count.
#[derive(Clone, Copy, Debug)]
pub enum Part<'a> {
    Private(&'a Tensor),
    Common(&'a Tensor),
}

/// Channel widths of the two hidden stages of the codec.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodecArch {
    pub feature_layers: usize,
    pub widths: [usize; 2],
}

impl CodecArch {
    pub fn new(feature_layers: usize) -> Self {
        Self { feature_layers, widths: [64, 128] }
    }
}

fn conv(i: usize, o: usize, k: usize, s: usize, p: usize, rng: &mut impl Rng) -> ConvLayer {
    ConvLayer::Conv(Conv2d::new(i, o, k, s, p, 1.0, rng))
}

fn tconv(i: usize, o: usize, k: usize, s: usize, p: usize, rng: &mut impl Rng) -> ConvLayer {
    ConvLayer::Transposed(ConvTranspose2d::new(i, o, k, s, p, 1.0, rng))
}

fn down_block(i: usize, o: usize, stride: usize, out: Act, rng: &mut impl Rng) -> Stage {
    let skip = (i != o || stride != 1).then(|| conv(i, o, 1, stride, 0, rng));
    Stage::Residual(ResidualBlock { conv1: conv(i, o, 3, stride, 1, rng), conv2: conv(o, o, 3, 1, 1, rng), skip, mid: Act::Relu, out })
}

fn up_block(i: usize, o: usize, stride: usize, out: Act, rng: &mut impl Rng) -> Stage {
    let (conv1, skip) = if stride == 2 {
        (tconv(i, o, 4, 2, 1, rng), Some(tconv(i, o, 2, 2, 0, rng)))
    } else {
        (tconv(i, o, 3, 1, 1, rng), (i != o).then(|| tconv(i, o, 1, 1, 0, rng)))
    };
    Stage::Residual(ResidualBlock { conv1, conv2: tconv(o, o, 3, 1, 1, rng), skip, mid: Act::Relu, out })
}

/// Encoder `E_φ` and decoder `D_θ`, shared by all users.
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticCodec {
    pub arch: CodecArch,
    pub encoder: Sequential,
    pub decoder: Sequential,
}

impl SemanticCodec {
    pub fn new<R: Rng>(arch: CodecArch, rng: &mut R) -> Self {
        let [w1, w2] = arch.widths;
        let e = arch.feature_layers;
        let encoder = Sequential::new(vec![
            down_block(3, w1, 1, Act::Relu, rng),
            down_block(w1, w2, 2, Act::Relu, rng),
            down_block(w2, e, 2, Act::Identity, rng),
        ]);
        let decoder = Sequential::new(vec![
            up_block(e, w2, 2, Act::Relu, rng),
            up_block(w2, w1, 2, Act::Relu, rng),
            up_block(w1, 3, 1, Act::Sigmoid, rng),
        ]);
        Self { arch, encoder, decoder }
    }

    /// Raw (unnormalized) features for a batch of images.
    pub fn encode_batch(&self, images: &Tensor) -> Result<Tensor> {
        check_image_dims(images.height(), images.width())?;
        Ok(self.encoder.infer(images))
    }

    pub fn encode_train(&self, images: Tensor) -> Result<SeqCache> {
        check_image_dims(images.height(), images.width())?;
        Ok(self.encoder.forward_train(images))
    }

    /// Reconstruction in `[0, 1]` from merged features.
    pub fn decode_batch(&self, features: &Tensor) -> Result<Tensor> {
        self.check_features(features)?;
        Ok(clamp_unit(self.decoder.infer(features)))
    }

    pub fn decode_train(&self, features: Tensor) -> Result<SeqCache> {
        self.check_features(&features)?;
        Ok(self.decoder.forward_train(features))
    }

    fn check_features(&self, features: &Tensor) -> Result<()> {
        if features.channels() != self.arch.feature_layers {
            return Err(Error::ShapeMismatch(format!(
                "decoder expects {} feature layers, got {}",
                self.arch.feature_layers,
                features.channels()
            )));
        }
        Ok(())
    }
}

impl Parameterized for SemanticCodec {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.decoder.visit(&join(prefix, "decoder"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        self.decoder.visit_mut(&join(prefix, "decoder"), f);
    }
}

fn clamp_unit(mut t: Tensor) -> Tensor {
    t.data_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    t
}

fn check_image_dims(h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 || h % 4 != 0 || w % 4 != 0 {
        return Err(Error::ShapeMismatch(format!("image {h}×{w} is not divisible by 4")));
    }
    Ok(())
}

/// `s → x = E_φ(s)`, before power normalization.
pub fn encode(image: &ImageTensor, codec: &SemanticCodec) -> Result<FeatureMap> {
    Ok(FeatureMap::new(codec.encode_batch(image.tensor())?, false))
}

/// Scales the map to unit mean square.
pub fn power_normalize(features: &FeatureMap) -> Result<FeatureMap> {
    let (values, _) = normalize_batch(features.tensor())?;
    Ok(FeatureMap::new(values, true))
}

/// Per-sample unit-power normalization; also returns each sample's rms.
pub fn normalize_batch(x: &Tensor) -> Result<(Tensor, Vec<f32>)> {
    let mut out = x.clone();
    let mut scales = Vec::with_capacity(x.batch());
    for i in 0..x.batch() {
        let s = out.sample_mut(i);
        let ms = s.iter().map(|&v| v as f64 * v as f64).sum::<f64>() / s.len() as f64;
        if !(ms > 0.0) || !ms.is_finite() {
            return Err(Error::DegenerateZeroPower);
        }
        let rms = ms.sqrt();
        s.iter_mut().for_each(|v| *v = (*v as f64 / rms) as f32);
        scales.push(rms as f32);
    }
    Ok((out, scales))
}

/// Gradient through [`normalize_batch`]: `(g − y·mean(g⊙y)) / rms`.
pub fn normalize_backward(normalized: &Tensor, scales: &[f32], grad: &Tensor) -> Tensor {
    let mut out = grad.clone();
    for (i, &rms) in scales.iter().enumerate() {
        let y = normalized.sample(i);
        let g = out.sample_mut(i);
        let dot = g.iter().zip(y).map(|(a, b)| *a as f64 * *b as f64).sum::<f64>() / g.len() as f64;
        g.iter_mut().zip(y).for_each(|(gv, &yv)| *gv = ((*gv as f64 - yv as f64 * dot) / rms as f64) as f32);
    }
    out
}

/// Private layers `[0, P)` and common layers `[P, E)`.
pub fn split_features(features: &FeatureMap, private: usize) -> Result<SplitFeatures> {
    let layers = features.layers();
    if private > layers {
        return Err(Error::InvalidSplit { private, layers });
    }
    Ok(SplitFeatures {
        private: features.tensor().channel_range(0, private),
        common: features.tensor().channel_range(private, layers),
    })
}

/// Batched split of `[N, E, h, w]` features.
pub fn split_batch(features: &Tensor, plan: &ResourcePlan) -> Result<(Tensor, Tensor)> {
    if features.channels() != plan.layers || features.height() != plan.h_feat || features.width() != plan.w_feat {
        return Err(Error::ShapeMismatch(format!("features {:?} do not match plan {plan:?}", features.shape())));
    }
    Ok((features.channel_range(0, plan.private), features.channel_range(plan.private, plan.layers)))
}

/// Places a part at its layer indices inside an all-zero `[N, E, h, w]` map.
pub fn pad_embed(part: Part<'_>, plan: &ResourcePlan) -> Result<Tensor> {
    let (t, offset, expected) = match part {
        Part::Private(t) => (t, 0, plan.private),
        Part::Common(t) => (t, plan.private, plan.common),
    };
    if t.channels() != expected || t.height() != plan.h_feat || t.width() != plan.w_feat {
        return Err(Error::ShapeMismatch(format!(
            "part {:?} does not fit [{expected}, {}, {}]",
            t.shape(),
            plan.h_feat,
            plan.w_feat
        )));
    }
    let mut out = Tensor::zeros(t.batch(), plan.layers, plan.h_feat, plan.w_feat);
    out.add_channels_at(t, offset);
    Ok(out)
}

/// `pad(common) + pad(private)` for a batch.
pub fn merge(common: &Tensor, private: &Tensor, plan: &ResourcePlan) -> Result<Tensor> {
    let mut merged = pad_embed(Part::Common(common), plan)?;
    merged.add_assign(&pad_embed(Part::Private(private), plan)?);
    Ok(merged)
}

/// `s̃ = D_θ(pad(x̃_c) + pad(y_p))`, clamped onto `[0, 1]`.
pub fn merge_and_decode(common_hat: &Tensor, own_private_rx: &Tensor, plan: &ResourcePlan, codec: &SemanticCodec) -> Result<ImageTensor> {
    let img = codec.decode_batch(&merge(common_hat, own_private_rx, plan)?)?;
    if img.batch() != 1 {
        return Err(Error::ShapeMismatch(format!("expected one sample, got {}", img.batch())));
    }
    Ok(ImageTensor(img))
}
