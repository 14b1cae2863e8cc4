use pasic::channel::{apply_awgn_ic, ob_stage, ChannelMatrix, NoiseSpec, SignalBlock, StageTag};

fn ramp(rows: usize, len: usize) -> SignalBlock {
    let values = (0..rows * len).map(|i| ((i * 37 % 101) as f32 / 50.0) - 1.0).collect();
    SignalBlock::new(rows, len, values, StageTag::Common).unwrap()
}

fn clean(h: &ChannelMatrix, x: &SignalBlock) -> SignalBlock {
    apply_awgn_ic(h, x, &NoiseSpec::noiseless(), 0).unwrap()
}

#[test]
fn injected_noise_matches_snr() {
    let h = ChannelMatrix::symmetric(2, 0.7).unwrap();
    let x = ramp(2, 500_000);
    let noise = NoiseSpec::from_snr_db(15.0).unwrap();
    let y = apply_awgn_ic(&h, &x, &noise, 42).unwrap();
    let hx = clean(&h, &x);
    let d: Vec<f64> = y.values().iter().zip(hx.values()).map(|(a, b)| *a as f64 - *b as f64).collect();
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (d.len() - 1) as f64;
    assert!((0.0313..=0.0320).contains(&var), "variance {var}");
    assert!((var / 10f64.powf(-1.5) - 1.0).abs() < 0.02);
}

#[test]
fn noiseless_pass_is_exact_superposition() {
    let h = ChannelMatrix::symmetric(2, 1.3).unwrap();
    let x = ramp(2, 1000);
    let y = clean(&h, &x);
    for rx in 0..2 {
        for t in 0..1000 {
            let expect = x.row(rx)[t] as f64 + 1.3 * x.row(1 - rx)[t] as f64;
            let got = y.row(rx)[t] as f64;
            assert!((got - expect).abs() <= 1e-6 * expect.abs().max(1.0), "{got} vs {expect}");
        }
    }
}

#[test]
fn orthogonal_blocks_draw_independent_noise() {
    let h = ChannelMatrix::symmetric(2, 1.0).unwrap();
    let zeros = vec![vec![0.0f32; 100_000]; 2];
    let blocks = ob_stage(&h, &zeros, &NoiseSpec::from_snr_db(15.0).unwrap(), 5).unwrap();
    let (a, b) = (blocks[0].row(0), blocks[1].row(0));
    let n = a.len() as f64;
    let ma = a.iter().map(|v| *v as f64).sum::<f64>() / n;
    let mb = b.iter().map(|v| *v as f64).sum::<f64>() / n;
    let cov = a.iter().zip(b).map(|(x, y)| (*x as f64 - ma) * (*y as f64 - mb)).sum::<f64>() / n;
    let sa = (a.iter().map(|x| (*x as f64 - ma).powi(2)).sum::<f64>() / n).sqrt();
    let sb = (b.iter().map(|x| (*x as f64 - mb).powi(2)).sum::<f64>() / n).sqrt();
    assert!((cov / (sa * sb)).abs() < 0.01);
}
