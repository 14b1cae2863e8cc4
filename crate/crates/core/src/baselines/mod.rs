//! Classical separate source/channel coding chains over the same
//! interference channel: JPEG, rate-1/3 turbo code, Gray 16QAM and the
//! orthogonal, treat-interference-as-noise and successive-cancellation
//! receivers.

mod jpeg;
mod qam;
mod turbo;

pub use jpeg::{bits_to_bytes, bytes_to_bits, decode_payload, jpeg_decode, jpeg_encode, jpeg_fit_to_budget, jpeg_payload, MAX_QUALITY};
pub use qam::{qam16_hard_demap, qam16_map, qam16_point, qam16_soft_demod, qam16_soft_demod_scaled, DemodMetric};
pub use turbo::{coded_len, tail_bits, turbo_decode, turbo_encode, Interleaver, TurboConfig, TurboMetric};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{apply_awgn_ic_complex, ob_stream, ChannelMatrix, NoiseSpec, ResourcePlan, ST_STREAM};
use crate::codec::ImageTensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BitRole {
    Info,
    Coded,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitStream {
    pub bits: Vec<u8>,
    pub role: BitRole,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SymbolStream {
    pub symbols: Vec<Complex64>,
}

impl SymbolStream {
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn mean_energy(&self) -> f64 {
        self.symbols.iter().map(|s| s.norm_sqr()).sum::<f64>() / self.symbols.len().max(1) as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Time division: each user owns `T/K` interference-free uses.
    Orthogonal,
    /// All users share `T` uses; interference enters the demapper as noise.
    Tin,
    /// All users share `T` uses; the interferer is decoded and subtracted first.
    Sic,
}

/// Lower bound on the demapper variance so noiseless links stay finite.
const VARIANCE_FLOOR: f64 = 1e-4;

/// Complex channel-use accounting shared with the learned scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkBudget {
    pub users: usize,
    /// Time horizon in complex channel uses.
    pub total_uses: usize,
}

impl LinkBudget {
    pub fn new(users: usize, total_uses: usize) -> Result<Self> {
        if users < 2 {
            return Err(Error::InvalidUserCount(users));
        }
        if total_uses < users {
            return Err(Error::InvalidConfig(format!("{total_uses} channel uses for {users} users")));
        }
        Ok(Self { users, total_uses })
    }

    /// Two real dimensions per complex use over the plan's whole resource `S`.
    pub fn from_plan(plan: &ResourcePlan) -> Result<Self> {
        let real = plan.total();
        if real % 2 != 0 {
            return Err(Error::PlanInconsistent(format!("{real} real resources do not pair into complex uses")));
        }
        Self::new(plan.users, real / 2)
    }

    pub fn uses_per_user(&self, scheme: Scheme) -> usize {
        match scheme {
            Scheme::Orthogonal => self.total_uses / self.users,
            Scheme::Tin | Scheme::Sic => self.total_uses,
        }
    }

    pub fn coded_bits(&self, scheme: Scheme) -> usize {
        4 * self.uses_per_user(scheme)
    }

    /// Largest `k` with `3k + tail ≤ coded_bits`.
    pub fn info_bits(&self, scheme: Scheme, turbo: &TurboConfig) -> Result<usize> {
        let coded = self.coded_bits(scheme);
        let tail = tail_bits(turbo)?;
        match coded.checked_sub(tail).map(|r| r / 3) {
            Some(k) if k > 0 => Ok(k),
            _ => Err(Error::BudgetInfeasible { needed: tail + 3, budget: coded }),
        }
    }
}

/// Code and demapper settings shared by every user.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassicalConfig {
    pub turbo: TurboConfig,
    pub demod: DemodMetric,
}

/// Pads `info` to `k` bits, encodes, and maps onto exactly `uses` symbols.
pub fn build_frame(info: &[u8], k: usize, uses: usize, cfg: &ClassicalConfig) -> Result<SymbolStream> {
    if info.len() > k {
        return Err(Error::BudgetInfeasible { needed: info.len(), budget: k });
    }
    let mut bits = info.to_vec();
    bits.resize(k, 0);
    let mut coded = turbo_encode(&BitStream { bits, role: BitRole::Info }, &cfg.turbo)?;
    if coded.bits.len() > 4 * uses {
        return Err(Error::BudgetInfeasible { needed: coded.bits.len(), budget: 4 * uses });
    }
    coded.bits.resize(4 * uses, 0);
    qam16_map(&coded)
}

fn decode_frame(llrs: &[f64], k: usize, cfg: &ClassicalConfig) -> Result<BitStream> {
    let n = coded_len(k, &cfg.turbo)?;
    let llrs = llrs.get(..n).ok_or_else(|| Error::ShapeMismatch(format!("{} LLRs for a {n}-bit codeword", llrs.len())))?;
    turbo_decode(llrs, k, &cfg.turbo)
}

fn demod(y: &SymbolStream, gain: f64, var: f64, cfg: &ClassicalConfig) -> Result<Vec<f64>> {
    qam16_soft_demod_scaled(y, gain, var.max(VARIANCE_FLOOR), cfg.demod)
}

/// Interference-free slot: demap at `σ²` and decode `k` info bits.
pub fn receive_orthogonal(y: &SymbolStream, k: usize, noise: &NoiseSpec, cfg: &ClassicalConfig) -> Result<BitStream> {
    decode_frame(&demod(y, 1.0, noise.sigma2(), cfg)?, k, cfg)
}

/// Effective demapper variance with unit-power interferers at the given gains.
pub fn tin_noise_variance(sigma2: f64, cross: &[f64]) -> f64 {
    sigma2 + cross.iter().map(|h| h * h).sum::<f64>()
}

pub fn receive_tin(y: &SymbolStream, cross: &[f64], k: usize, noise: &NoiseSpec, cfg: &ClassicalConfig) -> Result<BitStream> {
    decode_frame(&demod(y, 1.0, tin_noise_variance(noise.sigma2(), cross), cfg)?, k, cfg)
}

/// What the receiver knows about the interferer's transmission.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InterfererCode {
    pub info_bits: usize,
}

/// Decodes the interferer against own signal plus noise, cancels its
/// re-encoded symbols and decodes the own frame at `σ²`. Interferer decoding
/// errors propagate into the subtraction undetected.
pub fn receive_sic(y: &SymbolStream, h: f64, k: usize, interferer: InterfererCode, noise: &NoiseSpec, cfg: &ClassicalConfig) -> Result<BitStream> {
    let sigma2 = noise.sigma2();
    let mut clean = y.clone();
    if h != 0.0 {
        let guess = decode_frame(&demod(y, h, sigma2 + 1.0, cfg)?, interferer.info_bits, cfg)?;
        let remod = build_frame(&guess.bits, interferer.info_bits, y.len(), cfg)?;
        for (c, s) in clean.symbols.iter_mut().zip(&remod.symbols) {
            *c -= s * h;
        }
    }
    decode_frame(&demod(&clean, 1.0, sigma2, cfg)?, k, cfg)
}

/// Reconstruction at one receiver plus what was sent.
#[derive(Clone, Debug)]
pub struct LinkOutcome {
    pub image: ImageTensor,
    pub quality: u8,
    /// False when the received payload did not decode and mid-gray was used.
    pub decoded: bool,
}

/// JPEG → turbo → 16QAM → channel → receiver → JPEG decode for receiver
/// `rx`. `images[u]` is user `u`'s source; interferers send their own images.
#[allow(clippy::too_many_arguments)]
pub fn run_classical_link(
    images: &[ImageTensor],
    rx: usize,
    scheme: Scheme,
    budget: &LinkBudget,
    h: &ChannelMatrix,
    noise: &NoiseSpec,
    seed: u64,
    cfg: &ClassicalConfig,
) -> Result<LinkOutcome> {
    let k_users = budget.users;
    if images.len() != k_users || h.users() != k_users || rx >= k_users {
        return Err(Error::ShapeMismatch(format!("{} images and a {}-user channel for a {k_users}-user budget", images.len(), h.users())));
    }
    if h.gain(rx, rx) != 1.0 {
        return Err(Error::InvalidConfig("classical receivers assume unit direct gain".into()));
    }
    let uses = budget.uses_per_user(scheme);
    let k = budget.info_bits(scheme, &cfg.turbo)?;
    let (w, ht) = (images[rx].width(), images[rx].height());
    let mut quality = 0;
    let mut frame = |u: usize| -> Result<SymbolStream> {
        let (payload, q) = jpeg_fit_to_budget(&images[u], k)?;
        if u == rx {
            quality = q;
        }
        build_frame(&bytes_to_bits(&payload), k, uses, cfg)
    };
    let silent = vec![Complex64::new(0.0, 0.0); uses];
    let (streams, stream_id) = match scheme {
        Scheme::Orthogonal => {
            let own = frame(rx)?;
            let tx: Vec<Vec<Complex64>> = (0..k_users).map(|u| if u == rx { own.symbols.clone() } else { silent.clone() }).collect();
            (tx, ob_stream(rx))
        }
        Scheme::Tin | Scheme::Sic => ((0..k_users).map(|u| frame(u).map(|f| f.symbols)).collect::<Result<Vec<_>>>()?, ST_STREAM),
    };
    let y = SymbolStream { symbols: apply_awgn_ic_complex(h, &streams, noise, seed, stream_id)?.swap_remove(rx) };
    let cross: Vec<f64> = (0..k_users).filter(|&u| u != rx).map(|u| h.gain(rx, u)).collect();
    let bits = match scheme {
        Scheme::Orthogonal => receive_orthogonal(&y, k, noise, cfg)?,
        Scheme::Tin => receive_tin(&y, &cross, k, noise, cfg)?,
        Scheme::Sic => {
            if k_users != 2 {
                return Err(Error::InvalidConfig("cancellation receiver supports two users".into()));
            }
            receive_sic(&y, cross[0], k, InterfererCode { info_bits: k }, noise, cfg)?
        }
    };
    Ok(match decode_payload(&bits_to_bytes(&bits.bits), w, ht) {
        Ok(image) => LinkOutcome { image, quality, decoded: true },
        Err(_) => LinkOutcome { image: ImageTensor::filled(ht, w, 0.5), quality, decoded: false },
    })
}
