use pasic::baselines::{turbo_decode, turbo_encode, BitRole, BitStream, TurboConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn ber_at(ebn0_db: f64, info: &[u8], noise: &[f64], cfg: &TurboConfig) -> f64 {
    let coded = turbo_encode(&BitStream { bits: info.to_vec(), role: BitRole::Info }, cfg).unwrap();
    let rate = info.len() as f64 / coded.bits.len() as f64;
    let sigma = (1.0 / (2.0 * rate * 10f64.powf(ebn0_db / 10.0))).sqrt();
    let llrs: Vec<f64> = coded.bits.iter().zip(noise).map(|(&b, n)| 2.0 * ((1.0 - 2.0 * b as f64) + sigma * n) / (sigma * sigma)).collect();
    let out = turbo_decode(&llrs, info.len(), cfg).unwrap();
    out.bits.iter().zip(info).filter(|(a, b)| a != b).count() as f64 / info.len() as f64
}

#[test]
fn ber_does_not_rise_with_snr() {
    let k = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let info: Vec<u8> = (0..k).map(|_| rng.gen_range(0..2)).collect();
    let noise: Vec<f64> = (0..3 * k + 12).map(|_| rng.sample(StandardNormal)).collect();
    let cfg = TurboConfig::default();
    let bers: Vec<f64> = [1.0, 2.0, 3.0, 4.0].iter().map(|&db| ber_at(db, &info, &noise, &cfg)).collect();
    for w in bers.windows(2) {
        // Three binomial standard deviations of slack at the higher BER.
        let margin = 3.0 * (w[0] * (1.0 - w[0]) / k as f64).sqrt();
        assert!(w[1] <= w[0] + margin, "{bers:?}");
    }
    assert!(bers[3] < 1e-3, "{bers:?}");
}
