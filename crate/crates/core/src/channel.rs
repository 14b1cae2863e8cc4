//! K-user Gaussian interference channel and two-stage resource accounting.
//!
//! Learned-path signals are real: each real value has unit average power and
//! receives Gaussian noise of variance `σ² = 10^(−SNR/10)`, so the SNR per
//! real dimension equals the transmit SNR. Complex symbol streams (used by
//! the classical baselines) receive circular noise with `σ²/2` per component.
//!
//! All randomness is drawn from ChaCha streams keyed by `(seed, stream)`, so
//! the common stage and each orthogonal block see independent noise that is
//! reproducible from one master seed.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stream index for the simultaneous-transmission stage.
pub const ST_STREAM: u64 = 1;

/// Stream index of orthogonal block `j` (zero-based).
pub fn ob_stream(block: usize) -> u64 {
    2 + block as u64
}

/// Real nonnegative gains `h[i][j]` from transmitter `j` to receiver `i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelMatrix {
    users: usize,
    gains: Vec<f64>,
}

impl ChannelMatrix {
    /// `gains` is row-major `K×K`.
    pub fn new(users: usize, gains: Vec<f64>) -> Result<Self> {
        if users == 0 || gains.len() != users * users {
            return Err(Error::ShapeMismatch(format!("{} gains for a {users}-user channel", gains.len())));
        }
        if let Some(g) = gains.iter().find(|g| !g.is_finite() || **g < 0.0) {
            return Err(Error::InvalidConfig(format!("channel gain {g} must be finite and nonnegative")));
        }
        if (0..users).any(|i| gains[i * users + i] <= 0.0) {
            return Err(Error::InvalidConfig("direct gains must be positive".into()));
        }
        Ok(Self { users, gains })
    }

    pub fn identity(users: usize) -> Self {
        let mut gains = vec![0.0; users * users];
        (0..users).for_each(|i| gains[i * users + i] = 1.0);
        Self { users, gains }
    }

    /// Unit direct gains and a common cross gain `h` on every interfering link.
    pub fn symmetric(users: usize, cross: f64) -> Result<Self> {
        let gains = (0..users * users).map(|idx| if idx / users == idx % users { 1.0 } else { cross }).collect();
        Self::new(users, gains)
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn gain(&self, rx: usize, tx: usize) -> f64 {
        self.gains[rx * self.users + tx]
    }
}

/// Noise level derived from the transmit SNR at unit transmit power.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    snr_db: f64,
    sigma2: f64,
    noiseless: bool,
}

impl NoiseSpec {
    pub fn from_snr_db(snr_db: f64) -> Result<Self> {
        let sigma2 = 10f64.powf(-snr_db / 10.0);
        if !sigma2.is_finite() || sigma2 <= 0.0 {
            return Err(Error::InvalidNoise(format!("SNR {snr_db} dB gives noise power {sigma2}")));
        }
        Ok(Self { snr_db, sigma2, noiseless: false })
    }

    /// No noise at all; `sigma2` reads as zero.
    pub fn noiseless() -> Self {
        Self { snr_db: f64::INFINITY, sigma2: 0.0, noiseless: true }
    }

    pub fn snr_db(&self) -> f64 {
        self.snr_db
    }

    /// Noise power per complex channel use; also the variance per real learned-path value.
    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn is_noiseless(&self) -> bool {
        self.noiseless
    }

    pub fn validate(&self) -> Result<()> {
        if self.noiseless {
            return Ok(());
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::InvalidNoise(format!("noise power {} must be positive", self.sigma2)));
        }
        let expected = 10f64.powf(-self.snr_db / 10.0);
        if ((self.sigma2 - expected) / expected).abs() > 1e-12 {
            return Err(Error::InvalidNoise(format!("noise power {} inconsistent with {} dB", self.sigma2, self.snr_db)));
        }
        Ok(())
    }
}

/// Which transmission stage a block belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StageTag {
    Full,
    Common,
    /// Orthogonal block in which only transmitter `j` (zero-based) is active.
    Private(usize),
}

/// `K` stacked real signal rows of equal length.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalBlock {
    rows: usize,
    len: usize,
    values: Vec<f32>,
    pub stage: StageTag,
}

impl SignalBlock {
    pub fn new(rows: usize, len: usize, values: Vec<f32>, stage: StageTag) -> Result<Self> {
        if values.len() != rows * len {
            return Err(Error::ShapeMismatch(format!("{} values for a {rows}×{len} block", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("signal block contains non-finite values".into()));
        }
        Ok(Self { rows, len, values, stage })
    }

    pub fn zeros(rows: usize, len: usize, stage: StageTag) -> Self {
        Self { rows, len, values: vec![0.0; rows * len], stage }
    }

    pub fn from_rows(rows: &[Vec<f32>], stage: StageTag) -> Result<Self> {
        let len = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != len) {
            return Err(Error::ShapeMismatch("signal rows differ in length".into()));
        }
        Self::new(rows.len(), len, rows.concat(), stage)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.len..(i + 1) * self.len]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.values[i * self.len..(i + 1) * self.len]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }
}

fn noise_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn pass_real(h: &ChannelMatrix, x: &SignalBlock, noise: &NoiseSpec, seed: u64, stream: u64, stage: StageTag) -> Result<SignalBlock> {
    if x.rows != h.users() {
        return Err(Error::ShapeMismatch(format!("{} signal rows for a {}-user channel", x.rows, h.users())));
    }
    noise.validate()?;
    let mut rng = noise_rng(seed, stream);
    let std = noise.sigma2().sqrt();
    let k = h.users();
    let mut out = SignalBlock::zeros(k, x.len, stage);
    // Row-major draw order: receiver 0 first, then receiver 1, …
    for rx in 0..k {
        let row = out.row_mut(rx);
        for (t, y) in row.iter_mut().enumerate() {
            let mut acc = 0.0f64;
            for tx in 0..k {
                let g = h.gain(rx, tx);
                if g != 0.0 {
                    acc += g * x.values[tx * x.len + t] as f64;
                }
            }
            if !noise.is_noiseless() {
                let z: f64 = StandardNormal.sample(&mut rng);
                acc += std * z;
            }
            *y = acc as f32;
        }
    }
    Ok(out)
}

/// `Y = H·X + N` over real dimensions on the default stream.
pub fn apply_awgn_ic(h: &ChannelMatrix, x: &SignalBlock, noise: &NoiseSpec, seed: u64) -> Result<SignalBlock> {
    pass_real(h, x, noise, seed, 0, x.stage)
}

/// Simultaneous transmission of all users' common parts in one resource block.
pub fn st_stage(h: &ChannelMatrix, commons: &SignalBlock, noise: &NoiseSpec, seed: u64) -> Result<SignalBlock> {
    pass_real(h, commons, noise, seed, ST_STREAM, StageTag::Common)
}

/// Orthogonal broadcast: block `j` carries only transmitter `j`'s private part.
///
/// Returns one block per transmitter; row `k` of block `j` is what receiver
/// `k` hears while transmitter `j` is active.
pub fn ob_stage(h: &ChannelMatrix, privates: &[Vec<f32>], noise: &NoiseSpec, seed: u64) -> Result<Vec<SignalBlock>> {
    let k = h.users();
    if privates.len() != k {
        return Err(Error::ShapeMismatch(format!("{} private vectors for {k} users", privates.len())));
    }
    let len = privates[0].len();
    if privates.iter().any(|p| p.len() != len) {
        return Err(Error::ShapeMismatch("private vectors differ in length".into()));
    }
    privates
        .iter()
        .enumerate()
        .map(|(j, p)| {
            let mut x = SignalBlock::zeros(k, len, StageTag::Private(j));
            x.row_mut(j).copy_from_slice(p);
            pass_real(h, &x, noise, seed, ob_stream(j), StageTag::Private(j))
        })
        .collect()
}

/// Complex-symbol variant: `y_i = Σ_j h_ij·x_j + n_i` with `n_i ~ CN(0, σ²)`.
pub fn apply_awgn_ic_complex(h: &ChannelMatrix, x: &[Vec<Complex64>], noise: &NoiseSpec, seed: u64, stream: u64) -> Result<Vec<Vec<Complex64>>> {
    let k = h.users();
    if x.len() != k {
        return Err(Error::ShapeMismatch(format!("{} symbol streams for {k} users", x.len())));
    }
    let len = x[0].len();
    if x.iter().any(|r| r.len() != len) {
        return Err(Error::ShapeMismatch("symbol streams differ in length".into()));
    }
    noise.validate()?;
    let mut rng = noise_rng(seed, stream);
    let std = (noise.sigma2() / 2.0).sqrt();
    let mut out = vec![vec![Complex64::new(0.0, 0.0); len]; k];
    for (rx, row) in out.iter_mut().enumerate() {
        for (t, y) in row.iter_mut().enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            for (tx, xs) in x.iter().enumerate() {
                acc += xs[t] * h.gain(rx, tx);
            }
            if !noise.is_noiseless() {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                acc += Complex64::new(std * re, std * im);
            }
            *y = acc;
        }
    }
    Ok(out)
}

/// `V = (S − M)/(K − 1)` in layer units.
pub fn private_length(total: usize, encoding: usize, users: usize) -> Result<usize> {
    if users < 2 {
        return Err(Error::InvalidUserCount(users));
    }
    if total < encoding {
        return Err(Error::InfeasibleBudget { total, encoding });
    }
    let surplus = total - encoding;
    let divisor = users - 1;
    if surplus % divisor != 0 {
        return Err(Error::NonIntegralSplit { surplus, divisor });
    }
    Ok(surplus / divisor)
}

/// Layer-level split of the encoder output and the resources it consumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourcePlan {
    pub users: usize,
    /// Encoder feature layers `E`.
    pub layers: usize,
    /// Private layers `P`.
    pub private: usize,
    /// Common layers `C`.
    pub common: usize,
    pub h_feat: usize,
    pub w_feat: usize,
}

/// Derived quantities of a valid plan, in real-value units unless noted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub plan: ResourcePlan,
    pub encoding_len: usize,
    pub common_len: usize,
    pub private_len: usize,
    pub total: usize,
    pub total_layers: usize,
}

impl ResourcePlan {
    /// Plan with `C = E − P`.
    pub fn new(users: usize, layers: usize, private: usize, h_feat: usize, w_feat: usize) -> Result<Self> {
        if private > layers {
            return Err(Error::InvalidSplit { private, layers });
        }
        let plan = Self { users, layers, private, common: layers - private, h_feat, w_feat };
        validate_plan(&plan)?;
        Ok(plan)
    }

    /// Plan whose private size is forced by a total layer budget.
    pub fn from_budget(users: usize, layers: usize, total_layers: usize, h_feat: usize, w_feat: usize) -> Result<Self> {
        let private = private_length(total_layers, layers, users)?;
        Self::new(users, layers, private, h_feat, w_feat)
    }

    pub fn plane(&self) -> usize {
        self.h_feat * self.w_feat
    }

    /// `M = E·h·w`.
    pub fn encoding_len(&self) -> usize {
        self.layers * self.plane()
    }

    /// `U = C·h·w`.
    pub fn common_len(&self) -> usize {
        self.common * self.plane()
    }

    /// `V = P·h·w`.
    pub fn private_len(&self) -> usize {
        self.private * self.plane()
    }

    /// `S = U + K·V`.
    pub fn total(&self) -> usize {
        self.common_len() + self.users * self.private_len()
    }

    /// `C + K·P`.
    pub fn total_layers(&self) -> usize {
        self.common + self.users * self.private
    }
}

/// Checks every plan identity in layer units.
pub fn validate_plan(plan: &ResourcePlan) -> Result<PlanSummary> {
    let fail = |what: String| Err(Error::PlanInconsistent(what));
    if plan.users < 2 {
        return Err(Error::InvalidUserCount(plan.users));
    }
    if plan.layers == 0 || plan.h_feat == 0 || plan.w_feat == 0 {
        return fail(format!("empty feature map E={} h={} w={}", plan.layers, plan.h_feat, plan.w_feat));
    }
    if plan.private > plan.layers || plan.common != plan.layers - plan.private {
        return fail(format!("C = E - P violated: C={} E={} P={}", plan.common, plan.layers, plan.private));
    }
    let total_layers = plan.common + plan.users * plan.private;
    match private_length(total_layers, plan.layers, plan.users) {
        Ok(v) if v == plan.private => {}
        _ => return fail(format!("V = (S - M)/(K - 1) violated for S={total_layers} M={} K={}", plan.layers, plan.users)),
    }
    let summary = PlanSummary {
        plan: *plan,
        encoding_len: plan.encoding_len(),
        common_len: plan.common_len(),
        private_len: plan.private_len(),
        total: plan.total(),
        total_layers,
    };
    if summary.common_len + plan.users * summary.private_len != summary.total {
        return fail("S = U + K·V violated".into());
    }
    Ok(summary)
}
