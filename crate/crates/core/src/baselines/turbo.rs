//! Rate-1/3 parallel-concatenated convolutional code with iterative
//! BCJR decoding.
//!
//! Coded layout: `[systematic k | parity1 k | parity2 k | tail1 | tail2]`,
//! each tail holding `memory` (input, parity) pairs that drive its encoder
//! back to the zero state. LLRs are `ln P(0)/P(1)`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::qam::log_add;
use super::{BitRole, BitStream};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurboMetric {
    LogMap,
    MaxLogMap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TurboConfig {
    /// Feedback generator, octal digits.
    pub feedback: String,
    /// Feedforward (parity) generator, octal digits.
    pub feedforward: String,
    pub interleaver_seed: u64,
    pub iterations: usize,
    pub metric: TurboMetric,
}

impl Default for TurboConfig {
    fn default() -> Self {
        Self { feedback: "13".into(), feedforward: "15".into(), interleaver_seed: 0, iterations: 8, metric: TurboMetric::MaxLogMap }
    }
}

/// State-transition tables of one recursive systematic encoder.
#[derive(Clone, Debug)]
struct Trellis {
    memory: usize,
    next: Vec<[usize; 2]>,
    parity: Vec<[u8; 2]>,
    /// Input that zeroes the feedback from each state.
    flush: Vec<u8>,
}

fn parse_octal(s: &str) -> Result<u32> {
    u32::from_str_radix(s, 8).map_err(|_| Error::InvalidConfig(format!("generator {s:?} is not octal")))
}

impl Trellis {
    fn new(cfg: &TurboConfig) -> Result<Self> {
        let fb = parse_octal(&cfg.feedback)?;
        let ff = parse_octal(&cfg.feedforward)?;
        let degree = |g: u32| 31 - g.leading_zeros();
        if fb == 0 || ff == 0 {
            return Err(Error::InvalidConfig("zero generator polynomial".into()));
        }
        let memory = degree(fb).max(degree(ff)) as usize;
        if memory == 0 || memory > 8 {
            return Err(Error::InvalidConfig(format!("unsupported memory {memory}")));
        }
        // Coefficient of D^j is bit (memory − j) of the octal value.
        let coef = |g: u32, j: usize| ((g >> (memory - j)) & 1) as u8;
        if coef(fb, 0) != 1 {
            return Err(Error::InvalidConfig(format!("feedback {} lacks the D^0 term", cfg.feedback)));
        }
        let states = 1 << memory;
        let mut next = vec![[0; 2]; states];
        let mut parity = vec![[0; 2]; states];
        let mut flush = vec![0; states];
        for s in 0..states {
            // Bit j−1 of the state holds s_j (s_1 most recent).
            let reg = |j: usize| ((s >> (j - 1)) & 1) as u8;
            let fbsum = (1..=memory).fold(0, |acc, j| acc ^ (coef(fb, j) & reg(j)));
            flush[s] = fbsum;
            for u in 0..2u8 {
                let a = u ^ fbsum;
                let p = (1..=memory).fold(coef(ff, 0) & a, |acc, j| acc ^ (coef(ff, j) & reg(j)));
                next[s][u as usize] = ((s << 1) | a as usize) & (states - 1);
                parity[s][u as usize] = p;
            }
        }
        Ok(Self { memory, next, parity, flush })
    }

    fn states(&self) -> usize {
        self.next.len()
    }

    /// Parity stream plus `memory` (input, parity) tail pairs.
    fn encode(&self, bits: &[u8]) -> (Vec<u8>, Vec<(u8, u8)>) {
        let mut s = 0;
        let mut par = Vec::with_capacity(bits.len());
        for &u in bits {
            par.push(self.parity[s][u as usize]);
            s = self.next[s][u as usize];
        }
        let mut tail = Vec::with_capacity(self.memory);
        for _ in 0..self.memory {
            let u = self.flush[s];
            tail.push((u, self.parity[s][u as usize]));
            s = self.next[s][u as usize];
        }
        debug_assert_eq!(s, 0);
        (par, tail)
    }

    /// One soft-in soft-out pass. `sys`, `par` cover `k + memory` steps,
    /// `apriori` the first `k`. Returns a-posteriori LLRs for the first `k`.
    fn bcjr(&self, sys: &[f64], par: &[f64], apriori: &[f64], metric: TurboMetric) -> Vec<f64> {
        let n = sys.len();
        let k = apriori.len();
        let ns = self.states();
        let combine = |a: f64, b: f64| match metric {
            TurboMetric::MaxLogMap => a.max(b),
            TurboMetric::LogMap => log_add(a, b),
        };
        let gamma = |t: usize, s: usize, u: usize| {
            let lu = sys[t] + if t < k { apriori[t] } else { 0.0 };
            let su = if u == 0 { 0.5 } else { -0.5 };
            let sp = if self.parity[s][u] == 0 { 0.5 } else { -0.5 };
            su * lu + sp * par[t]
        };
        let neg = f64::NEG_INFINITY;
        let mut alpha = vec![neg; (n + 1) * ns];
        alpha[0] = 0.0;
        for t in 0..n {
            for s in 0..ns {
                let a = alpha[t * ns + s];
                if a == neg {
                    continue;
                }
                for u in 0..2 {
                    let d = (t + 1) * ns + self.next[s][u];
                    alpha[d] = combine(alpha[d], a + gamma(t, s, u));
                }
            }
            normalize(&mut alpha[(t + 1) * ns..(t + 2) * ns]);
        }
        let mut beta = vec![neg; (n + 1) * ns];
        beta[n * ns] = 0.0;
        for t in (0..n).rev() {
            for s in 0..ns {
                let mut acc = neg;
                for u in 0..2 {
                    let b = beta[(t + 1) * ns + self.next[s][u]];
                    if b != neg {
                        acc = combine(acc, gamma(t, s, u) + b);
                    }
                }
                beta[t * ns + s] = acc;
            }
            normalize(&mut beta[t * ns..(t + 1) * ns]);
        }
        (0..k)
            .map(|t| {
                let (mut l0, mut l1) = (neg, neg);
                for s in 0..ns {
                    let a = alpha[t * ns + s];
                    if a == neg {
                        continue;
                    }
                    for u in 0..2 {
                        let v = a + gamma(t, s, u) + beta[(t + 1) * ns + self.next[s][u]];
                        if u == 0 {
                            l0 = combine(l0, v);
                        } else {
                            l1 = combine(l1, v);
                        }
                    }
                }
                (l0 - l1).clamp(-1e6, 1e6)
            })
            .collect()
    }
}

fn normalize(v: &mut [f64]) {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m.is_finite() {
        v.iter_mut().for_each(|x| *x -= m);
    }
}

/// Seeded pseudo-random permutation; `out[i] = in[perm[i]]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Interleaver {
    perm: Vec<usize>,
}

impl Interleaver {
    pub fn new(len: usize, seed: u64) -> Self {
        let mut perm: Vec<usize> = (0..len).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Self { perm }
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn interleave<T: Copy>(&self, x: &[T]) -> Vec<T> {
        self.perm.iter().map(|&i| x[i]).collect()
    }

    pub fn deinterleave<T: Copy + Default>(&self, x: &[T]) -> Vec<T> {
        let mut out = vec![T::default(); x.len()];
        for (j, &i) in self.perm.iter().enumerate() {
            out[i] = x[j];
        }
        out
    }
}

/// Termination overhead in coded bits.
pub fn tail_bits(cfg: &TurboConfig) -> Result<usize> {
    Ok(4 * Trellis::new(cfg)?.memory)
}

/// Coded length for `k` info bits.
pub fn coded_len(k: usize, cfg: &TurboConfig) -> Result<usize> {
    Ok(3 * k + tail_bits(cfg)?)
}

pub fn turbo_encode(info: &BitStream, cfg: &TurboConfig) -> Result<BitStream> {
    let trellis = Trellis::new(cfg)?;
    let k = info.bits.len();
    if k == 0 {
        return Err(Error::InvalidConfig("turbo encoder needs at least one info bit".into()));
    }
    let pi = Interleaver::new(k, cfg.interleaver_seed);
    let (p1, t1) = trellis.encode(&info.bits);
    let (p2, t2) = trellis.encode(&pi.interleave(&info.bits));
    let mut bits = Vec::with_capacity(3 * k + 4 * trellis.memory);
    bits.extend_from_slice(&info.bits);
    bits.extend(p1);
    bits.extend(p2);
    for (u, p) in t1.into_iter().chain(t2) {
        bits.push(u);
        bits.push(p);
    }
    Ok(BitStream { bits, role: BitRole::Coded })
}

/// Iterative decoding for `k` info bits from `3k + tail` coded LLRs.
pub fn turbo_decode(llrs: &[f64], k: usize, cfg: &TurboConfig) -> Result<BitStream> {
    let trellis = Trellis::new(cfg)?;
    let m = trellis.memory;
    if llrs.len() != 3 * k + 4 * m {
        return Err(Error::ShapeMismatch(format!("{} LLRs for {k} info bits (expected {})", llrs.len(), 3 * k + 4 * m)));
    }
    if cfg.iterations == 0 {
        return Err(Error::InvalidConfig("at least one decoding iteration".into()));
    }
    let pi = Interleaver::new(k, cfg.interleaver_seed);
    let (ls, rest) = llrs.split_at(k);
    let (lp1, rest) = rest.split_at(k);
    let (lp2, tails) = rest.split_at(k);
    let (tail1, tail2) = tails.split_at(2 * m);
    let extend = |head: Vec<f64>, tail: &[f64], offset: usize| -> Vec<f64> { head.into_iter().chain(tail.iter().skip(offset).step_by(2).copied()).collect() };
    let sys1 = extend(ls.to_vec(), tail1, 0);
    let par1 = extend(lp1.to_vec(), tail1, 1);
    let sys2 = extend(pi.interleave(ls), tail2, 0);
    let par2 = extend(lp2.to_vec(), tail2, 1);
    let mut apriori1 = vec![0.0; k];
    let mut app = Vec::new();
    for _ in 0..cfg.iterations {
        let app1 = trellis.bcjr(&sys1, &par1, &apriori1, cfg.metric);
        let ext1: Vec<f64> = (0..k).map(|i| app1[i] - ls[i] - apriori1[i]).collect();
        let apriori2 = pi.interleave(&ext1);
        let app2 = trellis.bcjr(&sys2, &par2, &apriori2, cfg.metric);
        let ext2: Vec<f64> = (0..k).map(|i| app2[i] - sys2[i] - apriori2[i]).collect();
        apriori1 = pi.deinterleave(&ext2);
        app = pi.deinterleave(&app2);
    }
    Ok(BitStream { bits: app.iter().map(|&l| (l < 0.0) as u8).collect(), role: BitRole::Info })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn info(bits: Vec<u8>) -> BitStream {
        BitStream { bits, role: BitRole::Info }
    }

    fn random_bits(n: usize, seed: u64) -> Vec<u8> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(0..2)).collect()
    }

    /// BPSK (0 → +1) over AWGN at `ebn0_db` for a rate-`rate` code.
    fn bpsk_llrs(bits: &[u8], ebn0_db: f64, rate: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sigma2 = 1.0 / (2.0 * rate * 10f64.powf(ebn0_db / 10.0));
        bits.iter()
            .map(|&b| {
                let x = if b == 0 { 1.0 } else { -1.0 };
                let n: f64 = rng.sample(StandardNormal);
                2.0 * (x + sigma2.sqrt() * n) / sigma2
            })
            .collect()
    }

    #[test]
    fn trellis_terminates_and_matches_hand_encoding() {
        let t = Trellis::new(&TurboConfig::default()).unwrap();
        assert_eq!(t.memory, 3);
        // Impulse response of 1 + D + D^3 over 1 + D^2 + D^3.
        let (p, tail) = t.encode(&[1, 0, 0, 0, 0, 0, 0]);
        assert_eq!(p, vec![1, 1, 1, 1, 0, 0, 1]);
        assert_eq!(tail.len(), 3);
    }

    #[test]
    fn rate_identity_and_zero_input() {
        let cfg = TurboConfig::default();
        for k in [1, 7, 40, 513] {
            let c = turbo_encode(&info(random_bits(k, k as u64)), &cfg).unwrap();
            assert_eq!(c.bits.len(), 3 * k + 12);
            assert_eq!(coded_len(k, &cfg).unwrap(), 3 * k + 12);
        }
        let z = turbo_encode(&info(vec![0; 64]), &cfg).unwrap();
        assert!(z.bits.iter().all(|b| *b == 0));
        let bad = TurboConfig { feedback: "19".into(), ..TurboConfig::default() };
        assert!(matches!(turbo_encode(&info(vec![0; 4]), &bad), Err(Error::InvalidConfig(_))));
        let even = TurboConfig { feedback: "6".into(), ..TurboConfig::default() };
        assert!(matches!(turbo_encode(&info(vec![0; 4]), &even), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn interleaver_is_a_bijection() {
        for len in [1, 2, 17, 1000] {
            let pi = Interleaver::new(len, 3);
            let x: Vec<usize> = (0..len).collect();
            let mut y = pi.interleave(&x);
            assert_eq!(pi.deinterleave(&y), x);
            y.sort();
            assert_eq!(y, x);
        }
    }

    #[test]
    fn noiseless_round_trip() {
        for metric in [TurboMetric::MaxLogMap, TurboMetric::LogMap] {
            let cfg = TurboConfig { metric, interleaver_seed: 11, ..TurboConfig::default() };
            let b = random_bits(700, 5);
            let c = turbo_encode(&info(b.clone()), &cfg).unwrap();
            let llrs: Vec<f64> = c.bits.iter().map(|&x| if x == 0 { 50.0 } else { -50.0 }).collect();
            assert_eq!(turbo_decode(&llrs, 700, &cfg).unwrap().bits, b);
        }
        assert!(matches!(turbo_decode(&[0.0; 10], 700, &TurboConfig::default()), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn more_iterations_do_not_hurt() {
        let k = 2000;
        let b = random_bits(k, 6);
        let one = TurboConfig { iterations: 1, ..TurboConfig::default() };
        let eight = TurboConfig::default();
        let c = turbo_encode(&info(b.clone()), &eight).unwrap();
        let llrs = bpsk_llrs(&c.bits, 0.5, 1.0 / 3.0, 9);
        let errs = |cfg: &TurboConfig| turbo_decode(&llrs, k, cfg).unwrap().bits.iter().zip(&b).filter(|(x, y)| x != y).count();
        assert!(errs(&eight) <= errs(&one));
    }

    #[test]
    fn log_map_agrees_with_max_log_on_clean_input() {
        let k = 300;
        let b = random_bits(k, 8);
        let cfg = TurboConfig::default();
        let c = turbo_encode(&info(b.clone()), &cfg).unwrap();
        let llrs = bpsk_llrs(&c.bits, 3.0, 1.0 / 3.0, 10);
        let exact = TurboConfig { metric: TurboMetric::LogMap, ..cfg.clone() };
        assert_eq!(turbo_decode(&llrs, k, &exact).unwrap().bits, b);
        assert_eq!(turbo_decode(&llrs, k, &cfg).unwrap().bits, b);
    }
}
