//! Gray-mapped square 16QAM and its soft demapper.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{BitRole, BitStream, SymbolStream};
use crate::error::{Error, Result};

/// Per-axis Gray levels indexed by the two axis bits `b0b1`.
const LEVELS: [f64; 4] = [-3.0, -1.0, 3.0, 1.0];

fn scale() -> f64 {
    1.0 / 10f64.sqrt()
}

/// Constellation point for the 4-bit label `b0b1b2b3` (b0 is the MSB).
pub fn qam16_point(label: u8) -> Complex64 {
    let i = LEVELS[(label >> 2) as usize & 3];
    let q = LEVELS[label as usize & 3];
    Complex64::new(i, q) * scale()
}

pub fn qam16_map(bits: &BitStream) -> Result<SymbolStream> {
    if bits.bits.len() % 4 != 0 {
        return Err(Error::PaddingRequired(bits.bits.len()));
    }
    let symbols = bits
        .bits
        .chunks_exact(4)
        .map(|b| qam16_point(b[0] << 3 | b[1] << 2 | b[2] << 1 | b[3]))
        .collect();
    Ok(SymbolStream { symbols })
}

/// Nearest-point hard decisions.
pub fn qam16_hard_demap(symbols: &SymbolStream) -> BitStream {
    let mut bits = Vec::with_capacity(symbols.symbols.len() * 4);
    for y in &symbols.symbols {
        let best = (0u8..16).min_by(|&a, &b| (y - qam16_point(a)).norm_sqr().total_cmp(&(y - qam16_point(b)).norm_sqr())).expect("16 labels");
        bits.extend((0..4).rev().map(|i| (best >> i) & 1));
    }
    BitStream { bits, role: BitRole::Coded }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemodMetric {
    Exact,
    #[default]
    MaxLog,
}

/// Per-bit LLRs `ln P(b=0)/P(b=1)` for `y = gain·s + n`, `n ~ CN(0, noise_var)`.
pub fn qam16_soft_demod_scaled(received: &SymbolStream, gain: f64, noise_var: f64, metric: DemodMetric) -> Result<Vec<f64>> {
    if !(noise_var > 0.0) || !noise_var.is_finite() {
        return Err(Error::InvalidNoise(format!("effective noise variance {noise_var}")));
    }
    let points: Vec<Complex64> = (0..16u8).map(|l| qam16_point(l) * gain).collect();
    let mut llrs = Vec::with_capacity(received.symbols.len() * 4);
    let mut m = [0.0f64; 16];
    for y in &received.symbols {
        for (mi, p) in m.iter_mut().zip(&points) {
            *mi = -(y - p).norm_sqr() / noise_var;
        }
        for bit in (0..4).rev() {
            let (mut zero, mut one) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for (label, &v) in m.iter().enumerate() {
                let slot = if (label >> bit) & 1 == 0 { &mut zero } else { &mut one };
                *slot = match metric {
                    DemodMetric::MaxLog => slot.max(v),
                    DemodMetric::Exact => log_add(*slot, v),
                };
            }
            llrs.push(zero - one);
        }
    }
    Ok(llrs)
}

pub fn qam16_soft_demod(received: &SymbolStream, effective_noise_var: f64, metric: DemodMetric) -> Result<Vec<f64>> {
    qam16_soft_demod_scaled(received, 1.0, effective_noise_var, metric)
}

pub(crate) fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + (-(a - b).abs()).exp().ln_1p()
}
