//! Adversarial separator: receiver-side input assembly, the generator that
//! predicts every user's common part, the discriminator, and their losses.
//!
//! Batched tensors keep user `k`'s predicted common part in channels
//! `k·C..(k+1)·C`, so `[B, K·C, h, w]` reinterprets as `[B·K, C, h, w]`
//! without copying.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::ResourcePlan;
use crate::codec::{pad_embed, Part};
use crate::error::{Error, Result};
use crate::nn::{join, sigmoid, Act, Conv2d, ConvLayer, Param, Parameterized, ResidualBlock, SeqCache, Sequential, Stage, Tensor};

/// Concatenated receiver input `[K·E, h, w]` (one sample or a batch).
#[derive(Clone, Debug, PartialEq)]
pub struct AssembledInput(pub Tensor);

/// Predicted common parts of all `K` users for one receiver.
#[derive(Clone, Debug, PartialEq)]
pub struct SeparatorOutput {
    pub commons: Vec<Tensor>,
}

impl SeparatorOutput {
    /// The prediction receiver `k` feeds to its decoder.
    pub fn for_user(&self, k: usize) -> &Tensor {
        &self.commons[k]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for GanWeights {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 0.01 }
    }
}

impl GanWeights {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0) || !(beta >= 0.0) || !alpha.is_finite() || !beta.is_finite() {
            return Err(Error::InvalidConfig(format!("GAN weights need alpha > 0 and beta >= 0, got {alpha}, {beta}")));
        }
        Ok(Self { alpha, beta })
    }
}

/// Builds `Concat(pad(y_c) + pad(y_p,1), pad(y_p,2), …, pad(y_p,K))` for a batch.
///
/// `received_common` is `[B, C, h, w]`; `prompts[j]` is `[B, P, h, w]` as seen
/// by this receiver in orthogonal block `j`.
pub fn assemble_input(received_common: &Tensor, prompts: &[Tensor], plan: &ResourcePlan) -> Result<AssembledInput> {
    if prompts.len() != plan.users {
        return Err(Error::ShapeMismatch(format!("{} prompt blocks for {} users", prompts.len(), plan.users)));
    }
    let b = received_common.batch();
    if let Some(p) = prompts.iter().find(|p| p.batch() != b) {
        return Err(Error::ShapeMismatch(format!("prompt batch {} differs from common batch {b}", p.batch())));
    }
    let e = plan.layers;
    let mut out = Tensor::zeros(b, plan.users * e, plan.h_feat, plan.w_feat);
    let mut first = pad_embed(Part::Common(received_common), plan)?;
    first.add_assign(&pad_embed(Part::Private(&prompts[0]), plan)?);
    out.add_channels_at(&first, 0);
    for (j, prompt) in prompts.iter().enumerate().skip(1) {
        out.add_channels_at(&pad_embed(Part::Private(prompt), plan)?, j * e);
    }
    Ok(AssembledInput(out))
}

/// Network widths for the separator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeparatorArch {
    pub generator_width: usize,
    pub generator_blocks: usize,
    pub discriminator_width: usize,
}

impl Default for SeparatorArch {
    fn default() -> Self {
        Self { generator_width: 128, generator_blocks: 4, discriminator_width: 64 }
    }
}

/// Resolution-preserving generator `G_γ`.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub users: usize,
    pub layers: usize,
    pub common: usize,
    pub net: Sequential,
}

impl Generator {
    pub fn new<R: Rng>(plan: &ResourcePlan, arch: &SeparatorArch, rng: &mut R) -> Result<Self> {
        if plan.common == 0 {
            return Err(Error::EmptyCommon);
        }
        let w = arch.generator_width;
        let mut stages = vec![Stage::Plain(ConvLayer::Conv(Conv2d::new(plan.users * plan.layers, w, 3, 1, 1, 1.0, rng)), Act::Relu)];
        for _ in 0..arch.generator_blocks {
            stages.push(Stage::Residual(ResidualBlock {
                conv1: ConvLayer::Conv(Conv2d::new(w, w, 3, 1, 1, 1.0, rng)),
                conv2: ConvLayer::Conv(Conv2d::new(w, w, 3, 1, 1, 0.5, rng)),
                skip: None,
                mid: Act::Relu,
                out: Act::Relu,
            }));
        }
        stages.push(Stage::Plain(ConvLayer::Conv(Conv2d::new(w, plan.users * plan.common, 3, 1, 1, 0.5, rng)), Act::Identity));
        Ok(Self { users: plan.users, layers: plan.layers, common: plan.common, net: Sequential::new(stages) })
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if x.channels() != self.users * self.layers {
            return Err(Error::ShapeMismatch(format!("generator expects {} channels, got {}", self.users * self.layers, x.channels())));
        }
        Ok(())
    }

    /// `[B, K·E, h, w] → [B, K·C, h, w]`.
    pub fn infer(&self, assembled: &AssembledInput) -> Result<Tensor> {
        self.check(&assembled.0)?;
        Ok(self.net.infer(&assembled.0))
    }

    pub fn forward_train(&self, assembled: AssembledInput) -> Result<SeqCache> {
        self.check(&assembled.0)?;
        Ok(self.net.forward_train(assembled.0))
    }

    pub fn backward(&mut self, cache: &SeqCache, grad: Tensor, param_grads: bool) -> Tensor {
        self.net.backward(cache, grad, param_grads)
    }
}

impl Parameterized for Generator {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.net.visit(prefix, f)
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.net.visit_mut(prefix, f)
    }
}

/// `K` tensors `[B, C, h, w]` from a `[B, K·C, h, w]` prediction.
pub fn split_users(pred: &Tensor, users: usize) -> Vec<Tensor> {
    let c = pred.channels() / users;
    (0..users).map(|k| pred.channel_range(k * c, (k + 1) * c)).collect()
}

/// Inverse of [`split_users`].
pub fn join_users(parts: &[Tensor]) -> Tensor {
    let first = &parts[0];
    let c = first.channels();
    let mut out = Tensor::zeros(first.batch(), c * parts.len(), first.height(), first.width());
    for (k, p) in parts.iter().enumerate() {
        out.add_channels_at(p, k * c);
    }
    out
}

/// Runs the generator on one receiver's assembled input.
pub fn generate(assembled: &AssembledInput, generator: &Generator) -> Result<SeparatorOutput> {
    if generator.common == 0 {
        return Err(Error::EmptyCommon);
    }
    let pred = generator.infer(assembled)?;
    Ok(SeparatorOutput { commons: split_users(&pred, generator.users) })
}

/// Three stride-2 convolutions and global mean pooling to one logit per candidate.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub common: usize,
    pub net: Sequential,
}

/// Retained activations of a discriminator pass.
pub struct DiscCache {
    seq: SeqCache,
    pub logits: Vec<f32>,
}

impl Discriminator {
    pub fn new<R: Rng>(common: usize, arch: &SeparatorArch, rng: &mut R) -> Result<Self> {
        if common == 0 {
            return Err(Error::EmptyCommon);
        }
        let w = arch.discriminator_width;
        let leaky = Act::LeakyRelu(0.2);
        let net = Sequential::new(vec![
            Stage::Plain(ConvLayer::Conv(Conv2d::new(common, w, 3, 2, 1, 1.0, rng)), leaky),
            Stage::Plain(ConvLayer::Conv(Conv2d::new(w, 2 * w, 3, 2, 1, 1.0, rng)), leaky),
            Stage::Plain(ConvLayer::Conv(Conv2d::new(2 * w, 1, 3, 2, 1, 1.0, rng)), Act::Identity),
        ]);
        Ok(Self { common, net })
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if x.channels() != self.common {
            return Err(Error::ShapeMismatch(format!("discriminator expects {} channels, got {}", self.common, x.channels())));
        }
        if !x.is_finite() {
            return Err(Error::ShapeMismatch("non-finite discriminator input".into()));
        }
        Ok(())
    }

    fn pool(map: &Tensor) -> Vec<f32> {
        (0..map.batch()).map(|i| map.sample(i).iter().sum::<f32>() / map.sample_len() as f32).collect()
    }

    pub fn logits(&self, x: &Tensor) -> Result<Vec<f32>> {
        self.check(x)?;
        Ok(Self::pool(&self.net.infer(x)))
    }

    pub fn forward_train(&self, x: Tensor) -> Result<DiscCache> {
        self.check(&x)?;
        let seq = self.net.forward_train(x);
        let logits = Self::pool(seq.output());
        Ok(DiscCache { seq, logits })
    }

    /// Backpropagates per-sample logit gradients to the candidate input.
    pub fn backward(&mut self, cache: &DiscCache, logit_grads: &[f32], param_grads: bool) -> Tensor {
        let out = cache.seq.output();
        let per = out.sample_len();
        let mut g = Tensor::zeros(out.batch(), out.channels(), out.height(), out.width());
        for (i, &lg) in logit_grads.iter().enumerate() {
            g.sample_mut(i).iter_mut().for_each(|v| *v = lg / per as f32);
        }
        self.net.backward(&cache.seq, g, param_grads)
    }
}

impl Parameterized for Discriminator {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.net.visit(&join(prefix, "net"), f)
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.net.visit_mut(&join(prefix, "net"), f)
    }
}

/// Scores `D_μ(x) ∈ (0, 1)` for a batch of `[B, C, h, w]` candidates.
pub fn discriminate(candidate: &Tensor, disc: &Discriminator) -> Result<Vec<f64>> {
    Ok(disc.logits(candidate)?.into_iter().map(|z| sigmoid(z) as f64).collect())
}

fn check_scores(scores: &[f64]) -> Result<()> {
    match scores.iter().find(|s| !(**s > 0.0 && **s < 1.0)) {
        Some(&s) => Err(Error::InvalidScore(s)),
        None => Ok(()),
    }
}

/// `mean[ln D(x) + ln(1 − D(x̃))]` over users and batch.
pub fn loss_discriminator(real_scores: &[f64], fake_scores: &[f64]) -> Result<f64> {
    if real_scores.len() != fake_scores.len() || real_scores.is_empty() {
        return Err(Error::ShapeMismatch(format!("{} real vs {} fake scores", real_scores.len(), fake_scores.len())));
    }
    check_scores(real_scores)?;
    check_scores(fake_scores)?;
    let n = real_scores.len() as f64;
    Ok(real_scores.iter().zip(fake_scores).map(|(r, f)| r.ln() + (1.0 - f).ln()).sum::<f64>() / n)
}

/// Gradients of [`loss_discriminator`] with respect to the real and fake scores.
pub fn loss_discriminator_grad(real_scores: &[f64], fake_scores: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = real_scores.len() as f64;
    (real_scores.iter().map(|r| 1.0 / (n * r)).collect(), fake_scores.iter().map(|f| -1.0 / (n * (1.0 - f))).collect())
}

/// `L_D` evaluated on logits, stable for saturated scores.
pub fn loss_discriminator_logits(real: &[f32], fake: &[f32]) -> f64 {
    let n = real.len() as f64;
    real.iter().zip(fake).map(|(&r, &f)| log_sigmoid(r as f64) + log_sigmoid(-f as f64)).sum::<f64>() / n
}

/// Gradient of `−L_D` (the discriminator's minimization target) w.r.t. logits.
pub fn discriminator_logit_grads(real: &[f32], fake: &[f32]) -> (Vec<f32>, Vec<f32>) {
    let n = real.len() as f32;
    (real.iter().map(|&z| -(1.0 - sigmoid(z)) / n).collect(), fake.iter().map(|&z| sigmoid(z) / n).collect())
}

fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

fn check_same(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn mse(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum::<f64>() / a.len().max(1) as f64
}

/// `(1/K) Σ_k MSE(x_c,k, x̃_c,k)`.
pub fn loss_generator(predicted: &SeparatorOutput, truth: &[Tensor]) -> Result<f64> {
    if predicted.commons.len() != truth.len() || truth.is_empty() {
        return Err(Error::ShapeMismatch(format!("{} predictions for {} users", predicted.commons.len(), truth.len())));
    }
    let mut total = 0.0;
    for (p, t) in predicted.commons.iter().zip(truth) {
        check_same(p, t)?;
        total += mse(p, t);
    }
    Ok(total / truth.len() as f64)
}

/// Gradient of [`loss_generator`] with respect to each prediction.
pub fn loss_generator_grad(predicted: &SeparatorOutput, truth: &[Tensor]) -> Vec<Tensor> {
    let k = truth.len() as f32;
    predicted
        .commons
        .iter()
        .zip(truth)
        .map(|(p, t)| {
            let scale = 2.0 / (k * p.len().max(1) as f32);
            let data = p.data().iter().zip(t.data()).map(|(a, b)| scale * (a - b)).collect();
            Tensor::from_vec(p.batch(), p.channels(), p.height(), p.width(), data)
        })
        .collect()
}

/// `α·L_G − β·mean ln D(x̃)`.
pub fn adversarial_objective(gen_loss: f64, fake_scores: &[f64], weights: &GanWeights) -> Result<f64> {
    GanWeights::new(weights.alpha, weights.beta)?;
    if fake_scores.is_empty() {
        return Err(Error::ShapeMismatch("no fake scores".into()));
    }
    check_scores(fake_scores)?;
    let adv = fake_scores.iter().map(|s| s.ln()).sum::<f64>() / fake_scores.len() as f64;
    Ok(weights.alpha * gen_loss - weights.beta * adv)
}

/// Gradient of the adversarial term `−β·mean ln σ(z)` w.r.t. fake logits.
pub fn generator_logit_grads(fake: &[f32], beta: f64) -> Vec<f32> {
    let n = fake.len() as f32;
    fake.iter().map(|&z| -(beta as f32) * (1.0 - sigmoid(z)) / n).collect()
}
