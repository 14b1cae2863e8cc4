//! Three-phase training: interference-free autoencoder, adversarial
//! separator with the codec frozen, then alternating end-to-end refinement.

mod checkpoint;
mod link;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelMatrix, NoiseSpec, ResourcePlan};
use crate::codec::{normalize_backward, normalize_batch, CodecArch, SemanticCodec};
use crate::error::{Error, Result};
use crate::harness::psnr_from_mse;
use crate::nn::{Adam, Parameterized, Tensor};
use crate::separator::{
    discriminator_logit_grads, generator_logit_grads, join_users, loss_discriminator_logits, AssembledInput, Discriminator, GanWeights, Generator,
    SeparatorArch,
};

pub use checkpoint::{load_checkpoint, save_checkpoint, write_training_log};
pub use link::SeparatorMode;
use link::{assemble_receivers, gather, own_common, receive, transmit, transmit_backward, unstack, Received};

/// Cross-gain schedule while training.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InterferencePolicy {
    Fixed { h: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl InterferencePolicy {
    fn draw(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            InterferencePolicy::Fixed { h } => h,
            InterferencePolicy::Uniform { lo, hi } if hi > lo => rng.gen_range(lo..hi),
            InterferencePolicy::Uniform { lo, .. } => lo,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            InterferencePolicy::Fixed { h } => h.is_finite() && h >= 0.0,
            InterferencePolicy::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo >= 0.0 && hi >= lo,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("interference policy {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseConfig {
    pub phase: u8,
    /// Epochs of the phase; in phase 3, epochs of each half-step.
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_codec: f32,
    pub lr_generator: f32,
    pub lr_discriminator: f32,
    pub snr_db: f64,
    pub interference: InterferencePolicy,
    pub seed: u64,
    /// Phase-3 stopping rule: relative validation improvement below `tol`
    /// against `patience` alternations earlier.
    pub tol: f64,
    pub patience: usize,
    pub max_alternations: usize,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        Self {
            phase: 1,
            epochs: 20,
            batch_size: 32,
            lr_codec: 1e-4,
            lr_generator: 1e-4,
            lr_discriminator: 2e-4,
            snr_db: 15.0,
            interference: InterferencePolicy::Fixed { h: 1.0 },
            seed: 0,
            tol: 1e-3,
            patience: 3,
            max_alternations: 10,
        }
    }
}

impl PhaseConfig {
    pub fn for_phase(phase: u8) -> Self {
        Self { phase, ..Self::default() }
    }

    pub fn validate(&self, phase: u8) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.phase != phase {
            return bad(format!("config for phase {} used for phase {phase}", self.phase));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch size must be positive".into());
        }
        for lr in [self.lr_codec, self.lr_generator, self.lr_discriminator] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return bad(format!("learning rate {lr}"));
            }
        }
        if !(self.tol >= 0.0) || self.patience == 0 || self.max_alternations == 0 {
            return bad("phase-3 stopping rule needs tol >= 0, patience >= 1, max_alternations >= 1".into());
        }
        self.interference.validate()?;
        NoiseSpec::from_snr_db(self.snr_db).map(|_| ())
    }

    fn noise(&self) -> Result<NoiseSpec> {
        NoiseSpec::from_snr_db(self.snr_db)
    }
}

/// Architecture and split of a model; fixed at phase 1 except for the split,
/// which may be re-chosen before phase 2.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub plan: ResourcePlan,
    pub codec: CodecArch,
    pub separator: SeparatorArch,
    pub weights: GanWeights,
    pub init_seed: u64,
}

/// Train and validation images `[N, 3, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub train: Tensor,
    pub val: Tensor,
}

impl Corpus {
    pub fn new(train: Tensor, val: Tensor) -> Result<Self> {
        if train.batch() == 0 || val.batch() == 0 {
            return Err(Error::EmptyDataset);
        }
        if train.shape()[1..] != val.shape()[1..] || train.channels() != 3 {
            return Err(Error::ShapeMismatch(format!("train {:?} vs val {:?}", train.shape(), val.shape())));
        }
        Ok(Self { train, val })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub phase: u8,
    pub step: usize,
    pub name: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub spec: ModelSpec,
    pub codec: SemanticCodec,
    pub generator: Option<Generator>,
    pub discriminator: Option<Discriminator>,
    pub history: Vec<LossRecord>,
    completed: Vec<u8>,
    alternations: usize,
}

impl TrainState {
    pub fn completed(&self) -> &[u8] {
        &self.completed
    }

    pub fn is_complete(&self, phase: u8) -> bool {
        self.completed.contains(&phase)
    }

    pub fn plan(&self) -> &ResourcePlan {
        &self.spec.plan
    }

    /// Alternation counter `t` of phase 3.
    pub fn alternations(&self) -> usize {
        self.alternations
    }

    /// Copy of a phase-1 state with a different private/common split.
    pub fn with_private_layers(&self, private: usize) -> Result<Self> {
        if self.completed != [1] {
            return Err(Error::PhaseOrderViolation("the split can only change between phases 1 and 2".into()));
        }
        let p = &self.spec.plan;
        let plan = ResourcePlan::new(p.users, p.layers, private, p.h_feat, p.w_feat)?;
        Ok(Self { spec: ModelSpec { plan, ..self.spec }, ..self.clone() })
    }

    fn record(&mut self, phase: u8, step: usize, name: &str, value: f64) {
        self.history.push(LossRecord { phase, step, name: name.to_string(), value });
    }

    /// Records of one phase and name, in order.
    pub fn trace(&self, phase: u8, name: &str) -> Vec<f64> {
        self.history.iter().filter(|r| r.phase == phase && r.name == name).map(|r| r.value).collect()
    }

    pub(crate) fn from_parts(spec: ModelSpec, codec: SemanticCodec, generator: Option<Generator>, discriminator: Option<Discriminator>, completed: Vec<u8>, alternations: usize) -> Self {
        Self { spec, codec, generator, discriminator, history: Vec::new(), completed, alternations }
    }
}

fn phase_rng(seed: u64, phase: u8) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(phase as u64);
    rng
}

/// Per-scenario noise seed for evaluation passes.
pub fn scenario_seed(seed: u64, index: usize) -> u64 {
    let mut z = seed ^ (index as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn check_images(plan: &ResourcePlan, images: &Tensor) -> Result<()> {
    if images.channels() != 3 || images.height() != 4 * plan.h_feat || images.width() != 4 * plan.w_feat {
        return Err(Error::PlanInconsistent(format!(
            "images {:?} do not match a {}×{} feature plan",
            images.shape(),
            plan.h_feat,
            plan.w_feat
        )));
    }
    Ok(())
}

fn diverged(phase: u8, step: usize, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::TrainingDiverged { phase, step })
    }
}

fn mse_grad(out: &Tensor, target: &Tensor, weight: f32) -> (f64, Tensor) {
    let n = out.len() as f64;
    let loss = out.data().iter().zip(target.data()).map(|(a, b)| (*a as f64 - *b as f64).powi(2)).sum::<f64>() / n;
    let k = 2.0 * weight / n as f32;
    let [b, c, h, w] = out.shape();
    let g = out.data().iter().zip(target.data()).map(|(a, t)| k * (a - t)).collect();
    (loss, Tensor::from_vec(b, c, h, w, g))
}

/// Normalized features of every image, computed in chunks.
fn feature_cache(codec: &SemanticCodec, images: &Tensor) -> Result<Tensor> {
    let mut parts = Vec::new();
    for start in (0..images.batch()).step_by(64) {
        let end = (start + 64).min(images.batch());
        parts.push(normalize_batch(&codec.encode_batch(&images.samples(start..end))?)?.0);
    }
    Ok(Tensor::concat_batch(&parts.iter().collect::<Vec<_>>()))
}

fn ae_step(codec: &mut SemanticCodec, x: &Tensor) -> Result<f64> {
    let enc = codec.encode_train(x.clone())?;
    let (z, scales) = normalize_batch(enc.output())?;
    let dec = codec.decode_train(z.clone())?;
    let (loss, g) = mse_grad(dec.output(), x, 1.0);
    let gz = codec.decoder.backward(&dec, g, true);
    let graw = normalize_backward(&z, &scales, &gz);
    codec.encoder.backward(&enc, graw, true);
    Ok(loss)
}

/// Interference-free reconstruction MSE `E‖s − D(E(s))‖²` per pixel.
pub fn autoencoder_mse(codec: &SemanticCodec, images: &Tensor) -> Result<f64> {
    let mut total = 0.0;
    for start in (0..images.batch()).step_by(64) {
        let x = images.samples(start..(start + 64).min(images.batch()));
        let (z, _) = normalize_batch(&codec.encode_batch(&x)?)?;
        let y = codec.decode_batch(&z)?;
        total += y.data().iter().zip(x.data()).map(|(a, b)| (*a as f64 - *b as f64).powi(2)).sum::<f64>();
    }
    Ok(total / images.len() as f64)
}

/// Phase 1: trains encoder and decoder on the noiseless, interference-free path.
pub fn train_autoencoder_phase(cfg: &PhaseConfig, corpus: &Corpus, spec: &ModelSpec) -> Result<TrainState> {
    cfg.validate(1)?;
    check_images(&spec.plan, &corpus.train)?;
    if spec.codec.feature_layers != spec.plan.layers {
        return Err(Error::PlanInconsistent(format!("codec emits {} layers, plan has E={}", spec.codec.feature_layers, spec.plan.layers)));
    }
    let mut init = phase_rng(spec.init_seed, 1);
    let codec = SemanticCodec::new(spec.codec, &mut init);
    let mut state = TrainState::from_parts(*spec, codec, None, None, Vec::new(), 0);
    let mut rng = phase_rng(cfg.seed, 1);
    let mut opt = Adam::new(cfg.lr_codec);
    let v0 = autoencoder_mse(&state.codec, &corpus.val)?;
    state.record(1, 0, "val_mse", v0);
    let mut order: Vec<usize> = (0..corpus.train.batch()).collect();
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let loss = ae_step(&mut state.codec, &gather(&corpus.train, chunk))?;
            step += 1;
            diverged(1, step, loss)?;
            opt.step(&mut state.codec);
            state.record(1, step, "train_mse", loss);
            sum += loss * chunk.len() as f64;
        }
        state.record(1, epoch, "train_epoch_mse", sum / order.len() as f64);
        let v = autoencoder_mse(&state.codec, &corpus.val)?;
        diverged(1, step, v)?;
        state.record(1, epoch, "val_mse", v);
    }
    state.completed.push(1);
    Ok(state)
}

struct SeparatorOpt {
    generator: Adam,
    discriminator: Adam,
}

/// `[N, K·C, h, w]` viewed as `[N·K, C, h, w]`.
fn per_user(t: Tensor, users: usize) -> Tensor {
    let [n, kc, h, w] = t.shape();
    Tensor::from_vec(n * users, kc / users, h, w, t.into_vec())
}

fn per_scenario(t: Tensor, users: usize) -> Tensor {
    let [n, c, h, w] = t.shape();
    Tensor::from_vec(n / users, c * users, h, w, t.into_vec())
}

/// Draws the other users' images and the per-scenario channels and seeds.
fn draw_scenarios(first: &[usize], pool: usize, users: usize, policy: &InterferencePolicy, rng: &mut ChaCha8Rng) -> Result<(Vec<Vec<usize>>, Vec<ChannelMatrix>, Vec<u64>)> {
    let mut idx = vec![first.to_vec()];
    for _ in 1..users {
        idx.push((0..first.len()).map(|_| rng.gen_range(0..pool)).collect());
    }
    let channels = (0..first.len()).map(|_| ChannelMatrix::symmetric(users, policy.draw(rng))).collect::<Result<Vec<_>>>()?;
    let seeds = (0..first.len()).map(|_| rng.gen()).collect();
    Ok((idx, channels, seeds))
}

fn separator_epochs(cfg: &PhaseConfig, state: &mut TrainState, feats: &Tensor, phase: u8, rng: &mut ChaCha8Rng, opt: &mut SeparatorOpt, step: &mut usize) -> Result<()> {
    let plan = state.spec.plan;
    let k = plan.users;
    let noise = cfg.noise()?;
    let weights = state.spec.weights;
    let receivers: Vec<usize> = (0..k).collect();
    let mut order: Vec<usize> = (0..feats.batch()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            let (idx, channels, seeds) = draw_scenarios(chunk, feats.batch(), k, &cfg.interference, rng)?;
            let user_feats: Vec<Tensor> = idx.iter().map(|i| gather(feats, i)).collect();
            let rx = transmit(&user_feats, &plan, &channels, &noise, &seeds)?;
            let input = assemble_receivers(&rx, &receivers, &plan)?;
            let truth = join_users(&user_feats.iter().map(|f| f.channel_range(plan.private, plan.layers)).collect::<Vec<_>>());
            let target = Tensor::concat_batch(&vec![&truth; k]);

            let gen = state.generator.as_mut().expect("separator initialized");
            let disc = state.discriminator.as_mut().expect("separator initialized");
            let gcache = gen.forward_train(AssembledInput(input))?;
            let pred = gcache.output().clone();
            let real = per_user(target.clone(), k);
            let fake = per_user(pred.clone(), k);

            let cr = disc.forward_train(real)?;
            let cf = disc.forward_train(fake.clone())?;
            let ld = loss_discriminator_logits(&cr.logits, &cf.logits);
            let (gr, gf) = discriminator_logit_grads(&cr.logits, &cf.logits);
            disc.zero_grad();
            disc.backward(&cr, &gr, true);
            disc.backward(&cf, &gf, true);
            opt.discriminator.step(disc);

            let (lg, mut g_pred) = mse_grad(&pred, &target, weights.alpha as f32);
            let mut objective = weights.alpha * lg;
            if weights.beta > 0.0 {
                let cf = disc.forward_train(fake)?;
                let adv = generator_logit_grads(&cf.logits, weights.beta);
                let g_fake = disc.backward(&cf, &adv, false);
                g_pred.add_assign(&per_scenario(g_fake, k));
                let mean_log = cf.logits.iter().map(|&z| log_sigmoid(z as f64)).sum::<f64>() / cf.logits.len() as f64;
                objective -= weights.beta * mean_log;
            }
            gen.backward(&gcache, g_pred, true);
            opt.generator.step(gen);

            *step += 1;
            diverged(phase, *step, objective + ld)?;
            state.record(phase, *step, "L_D", ld);
            state.record(phase, *step, "L_G", lg);
            state.record(phase, *step, "G_objective", objective);
        }
    }
    Ok(())
}

fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

fn init_separator(state: &mut TrainState) -> Result<()> {
    let mut init = phase_rng(state.spec.init_seed, 2);
    state.generator = Some(Generator::new(&state.spec.plan, &state.spec.separator, &mut init)?);
    state.discriminator = Some(Discriminator::new(state.spec.plan.common, &state.spec.separator, &mut init)?);
    Ok(())
}

/// Phase 2: adversarial separator training with the codec frozen.
pub fn train_separator_phase(cfg: &PhaseConfig, corpus: &Corpus, mut state: TrainState) -> Result<TrainState> {
    cfg.validate(2)?;
    if !state.is_complete(1) || state.is_complete(2) {
        return Err(Error::PhaseOrderViolation(format!("phase 2 needs exactly phase 1 complete, have {:?}", state.completed)));
    }
    check_images(&state.spec.plan, &corpus.train)?;
    if state.spec.plan.common > 0 {
        init_separator(&mut state)?;
        let feats = feature_cache(&state.codec, &corpus.train)?;
        let mut rng = phase_rng(cfg.seed, 2);
        let mut opt = SeparatorOpt { generator: Adam::new(cfg.lr_generator), discriminator: Adam::new(cfg.lr_discriminator) };
        let mut step = 0;
        separator_epochs(cfg, &mut state, &feats, 2, &mut rng, &mut opt, &mut step)?;
    }
    state.completed.push(2);
    Ok(state)
}

/// One end-to-end codec update through channel and frozen separator, all receivers.
fn end_to_end_step(state: &mut TrainState, images: &[Tensor], channels: &[ChannelMatrix], noise: &NoiseSpec, seeds: &[u64]) -> Result<f64> {
    let plan = state.spec.plan;
    let k = plan.users;
    let (p, c, e) = (plan.private, plan.common, plan.layers);
    let stacked = Tensor::concat_batch(&images.iter().collect::<Vec<_>>());
    let enc = state.codec.encode_train(stacked.clone())?;
    let (z, scales) = normalize_batch(enc.output())?;
    let feats = unstack(&z, k);
    let rx = transmit(&feats, &plan, channels, noise, seeds)?;
    let receivers: Vec<usize> = (0..k).collect();

    let gen_cache = match (&state.generator, c) {
        (Some(g), c) if c > 0 => Some(g.forward_train(AssembledInput(assemble_receivers(&rx, &receivers, &plan)?))?),
        _ => None,
    };
    let b = images[0].batch();
    let mut merged = Vec::with_capacity(k);
    for r in 0..k {
        let common_hat = match &gen_cache {
            Some(cache) => own_common(&cache.output().samples(r * b..(r + 1) * b), r, c),
            None => Tensor::zeros(b, 0, plan.h_feat, plan.w_feat),
        };
        merged.push(crate::codec::merge(&common_hat, &rx.prompts[r][r], &plan)?);
    }
    let dec = state.codec.decode_train(Tensor::concat_batch(&merged.iter().collect::<Vec<_>>()))?;
    let (loss, g) = mse_grad(dec.output(), &stacked, 1.0);
    let g_merged = state.codec.decoder.backward(&dec, g, true);

    let mut g_rx = Received {
        common: (0..k).map(|_| Tensor::zeros(b, c, plan.h_feat, plan.w_feat)).collect(),
        prompts: (0..k).map(|_| (0..k).map(|_| Tensor::zeros(b, p, plan.h_feat, plan.w_feat)).collect()).collect(),
    };
    let mut g_pred = Tensor::zeros(k * b, k * c, plan.h_feat, plan.w_feat);
    for r in 0..k {
        let gm = g_merged.samples(r * b..(r + 1) * b);
        g_rx.prompts[r][r].add_assign(&gm.channel_range(0, p));
        if c > 0 {
            let mut slot = Tensor::zeros(b, k * c, plan.h_feat, plan.w_feat);
            slot.add_channels_at(&gm.channel_range(p, e), r * c);
            let plane = slot.sample_len();
            g_pred.data_mut()[r * b * plane..(r + 1) * b * plane].copy_from_slice(slot.data());
        }
    }
    if let Some(cache) = &gen_cache {
        let gen = state.generator.as_mut().expect("generator present");
        let g_in = gen.backward(cache, g_pred, false);
        for r in 0..k {
            let gi = g_in.samples(r * b..(r + 1) * b);
            g_rx.common[r].add_assign(&gi.channel_range(p, e));
            for j in 0..k {
                g_rx.prompts[r][j].add_assign(&gi.channel_range(j * e, j * e + p));
            }
        }
    }
    let g_feats = transmit_backward(&g_rx, &plan, channels);
    let g_z = Tensor::concat_batch(&g_feats.iter().collect::<Vec<_>>());
    let g_raw = normalize_backward(&z, &scales, &g_z);
    state.codec.encoder.backward(&enc, g_raw, true);
    Ok(loss)
}

/// Reconstruction MSE per image for receiver 1 over `images`.
fn receiver_one_mse(state: &TrainState, images: &Tensor, channel: &dyn Fn(usize) -> ChannelMatrix, noise: &NoiseSpec, seed: u64, mode: SeparatorMode) -> Result<Vec<f64>> {
    let plan = state.spec.plan;
    let k = plan.users;
    let n = images.batch();
    let stride = (n / k).max(1);
    let mut out = Vec::with_capacity(n);
    for start in (0..n).step_by(32) {
        let end = (start + 32).min(n);
        let first: Vec<usize> = (start..end).collect();
        let users: Vec<Vec<usize>> = (0..k).map(|u| first.iter().map(|&i| (i + u * stride) % n).collect()).collect();
        let imgs: Vec<Tensor> = users.iter().map(|idx| gather(images, idx)).collect();
        let feats: Vec<Tensor> = imgs.iter().map(|x| Ok(normalize_batch(&state.codec.encode_batch(x)?)?.0)).collect::<Result<_>>()?;
        let channels: Vec<ChannelMatrix> = first.iter().map(|&i| channel(i)).collect();
        let seeds: Vec<u64> = first.iter().map(|&i| scenario_seed(seed, i)).collect();
        let rx = transmit(&feats, &plan, &channels, noise, &seeds)?;
        let recon = receive(&state.codec, state.generator.as_ref(), &plan, &rx, &feats, 0, mode)?;
        for i in 0..recon.batch() {
            let (a, b) = (recon.sample(i), imgs[0].sample(i));
            out.push(a.iter().zip(b).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum::<f64>() / a.len() as f64);
        }
    }
    Ok(out)
}

fn policy_channels(policy: InterferencePolicy, users: usize, seed: u64, n: usize) -> Result<Vec<ChannelMatrix>> {
    let mut rng = phase_rng(seed, 77);
    (0..n).map(|_| ChannelMatrix::symmetric(users, policy.draw(&mut rng))).collect()
}

fn end_to_end_val(state: &TrainState, corpus: &Corpus, cfg: &PhaseConfig) -> Result<f64> {
    let channels = policy_channels(cfg.interference, state.spec.plan.users, cfg.seed, corpus.val.batch())?;
    let mse = receiver_one_mse(state, &corpus.val, &|i| channels[i].clone(), &cfg.noise()?, cfg.seed ^ 0x5EED, SeparatorMode::Generator)?;
    Ok(mse.iter().sum::<f64>() / mse.len() as f64)
}

/// Phase 3: alternates codec updates through the frozen separator with
/// separator fine-tuning until the end-to-end validation loss settles.
///
/// The parameters with the lowest validation loss seen, including the
/// phase-2 state, are kept.
pub fn alternate_phase(cfg: &PhaseConfig, corpus: &Corpus, mut state: TrainState) -> Result<TrainState> {
    cfg.validate(3)?;
    if !state.is_complete(1) || !state.is_complete(2) || state.is_complete(3) {
        return Err(Error::PhaseOrderViolation(format!("phase 3 needs phases 1 and 2 complete, have {:?}", state.completed)));
    }
    check_images(&state.spec.plan, &corpus.train)?;
    let plan = state.spec.plan;
    let k = plan.users;
    let noise = cfg.noise()?;
    let mut rng = phase_rng(cfg.seed, 3);
    let mut opt_codec = Adam::new(cfg.lr_codec);
    let mut opt_sep = SeparatorOpt { generator: Adam::new(cfg.lr_generator), discriminator: Adam::new(cfg.lr_discriminator) };
    let mut val = vec![end_to_end_val(&state, corpus, cfg)?];
    state.record(3, 0, "val_e2e_mse", val[0]);
    let mut best = (val[0], state.codec.clone(), state.generator.clone(), state.discriminator.clone(), 0usize);
    let mut codec_step = 0;
    let mut sep_step = 0;
    let mut order: Vec<usize> = (0..corpus.train.batch()).collect();
    loop {
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(cfg.batch_size) {
                let (idx, channels, seeds) = draw_scenarios(chunk, corpus.train.batch(), k, &cfg.interference, &mut rng)?;
                let images: Vec<Tensor> = idx.iter().map(|i| gather(&corpus.train, i)).collect();
                let loss = end_to_end_step(&mut state, &images, &channels, &noise, &seeds)?;
                codec_step += 1;
                diverged(3, codec_step, loss)?;
                opt_codec.step(&mut state.codec);
                state.record(3, codec_step, "e2e_mse", loss);
            }
        }
        if plan.common > 0 {
            let feats = feature_cache(&state.codec, &corpus.train)?;
            separator_epochs(cfg, &mut state, &feats, 3, &mut rng, &mut opt_sep, &mut sep_step)?;
        }
        state.alternations += 1;
        let t = state.alternations;
        let v = end_to_end_val(&state, corpus, cfg)?;
        diverged(3, codec_step, v)?;
        state.record(3, t, "val_e2e_mse", v);
        val.push(v);
        if v < best.0 {
            best = (v, state.codec.clone(), state.generator.clone(), state.discriminator.clone(), t);
        }
        let reference = val[val.len() - 1 - cfg.patience.min(val.len() - 1)];
        let improvement = (reference - v) / reference;
        if !(improvement >= cfg.tol) || t >= cfg.max_alternations {
            break;
        }
    }
    let (_, codec, generator, discriminator, kept) = best;
    state.codec = codec;
    state.generator = generator;
    state.discriminator = discriminator;
    state.record(3, state.alternations, "kept_alternation", kept as f64);
    state.completed.push(3);
    Ok(state)
}

/// Mean PSNR (dB) of receiver 1 over `images` under a fixed channel.
pub fn evaluate_psnr_pass(state: &TrainState, images: &Tensor, h: &ChannelMatrix, noise: &NoiseSpec, seed: u64, mode: SeparatorMode) -> Result<f64> {
    let plan = state.spec.plan;
    check_images(&plan, images)?;
    if h.users() != plan.users {
        return Err(Error::PlanInconsistent(format!("{}-user channel for a {}-user plan", h.users(), plan.users)));
    }
    if !state.is_complete(1) {
        return Err(Error::PhaseOrderViolation("evaluation needs a trained autoencoder".into()));
    }
    if mode == SeparatorMode::Generator && plan.common > 0 && state.generator.is_none() {
        return Err(Error::PhaseOrderViolation("generator evaluation needs phase 2".into()));
    }
    if images.batch() == 0 {
        return Err(Error::EmptyDataset);
    }
    let mse = receiver_one_mse(state, images, &|_| h.clone(), noise, seed, mode)?;
    Ok(mse.iter().map(|&m| psnr_from_mse(m)).sum::<f64>() / mse.len() as f64)
}
