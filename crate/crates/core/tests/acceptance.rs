//! Acceptance criteria. Prints one PASS/FAIL line per criterion.
//!
//! Trained toy models are cached under the target directory, keyed by the
//! training profile, so reruns only evaluate. Set `ACCEPTANCE_STRICT=1` to
//! turn any FAIL into a nonzero exit status.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use pasic::baselines::{
    bytes_to_bits, decode_payload, jpeg_fit_to_budget, qam16_map, run_classical_link, turbo_decode, turbo_encode, BitRole, BitStream, ClassicalConfig, LinkBudget, Scheme, TurboConfig,
};
use pasic::channel::{apply_awgn_ic, validate_plan, ChannelMatrix, NoiseSpec, ResourcePlan, SignalBlock, StageTag};
use pasic::codec::ImageTensor;
use pasic::harness::{compute_psnr, generate_corpus, load_corpus, run_sweep, ExperimentConfig, RunRecord, SchemeName};
use pasic::separator::{adversarial_objective, loss_discriminator, loss_discriminator_grad, loss_generator, loss_generator_grad, GanWeights, SeparatorArch, SeparatorOutput};
use pasic::trainer::{alternate_phase, load_checkpoint, save_checkpoint, scenario_seed, train_autoencoder_phase, train_separator_phase, Corpus, InterferencePolicy, PhaseConfig, TrainState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

type Check = Result<(bool, String), String>;

const H_SWEEP: [f64; 5] = [0.0, 0.5, 1.0, 1.5, 2.0];
const EVAL_SEEDS: [u64; 3] = [0, 1, 2];

fn main() -> ExitCode {
    let mut fails = 0;
    let mut report = |id: u8, name: &str, check: Check, started: Instant| {
        let secs = started.elapsed().as_secs_f64();
        match check {
            Ok((true, detail)) => println!("PASS {id} {name}: {detail} [{secs:.1}s]"),
            Ok((false, detail)) => {
                fails += 1;
                println!("FAIL {id} {name}: {detail} [{secs:.1}s]");
            }
            Err(e) => {
                fails += 1;
                println!("FAIL {id} {name}: error: {e} [{secs:.1}s]");
            }
        }
    };
    let t = Instant::now();
    report(1, "resource accounting", resource_accounting(), t);
    let t = Instant::now();
    report(2, "channel calibration", channel_calibration(), t);

    let t = Instant::now();
    let models = Toy::prepare();
    if let Err(e) = &models {
        eprintln!("toy training failed: {e}");
    }
    eprintln!("toy models ready after {:.0}s", t.elapsed().as_secs_f64());
    let sweeps = models.as_ref().map_err(|e| e.clone()).and_then(|m| m.sweeps());
    let t = Instant::now();
    report(3, "separation gain", sweeps.clone().and_then(|s| separation_gain(&s)), t);
    let t = Instant::now();
    report(4, "learned trend over |h|", sweeps.clone().and_then(|s| learned_trend(&s)), t);
    let t = Instant::now();
    report(5, "baseline trends", models.as_ref().map_err(|e| e.clone()).and_then(baseline_trends), t);
    let t = Instant::now();
    report(6, "prompt size trend", sweeps.and_then(|s| prompt_trend(&s)), t);
    let t = Instant::now();
    report(7, "classical loopback", classical_loopback(), t);
    let t = Instant::now();
    report(8, "loss formula oracles", loss_oracles(), t);
    let t = Instant::now();
    report(9, "eval determinism", models.as_ref().map_err(|e| e.clone()).and_then(eval_determinism), t);

    println!("{} of 9 criteria failed", fails);
    if fails > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn resource_accounting() -> Check {
    let mut got = Vec::new();
    for e in [10, 14, 16, 18] {
        let plan = ResourcePlan::from_budget(2, e, 20, 16, 16).map_err(e2s)?;
        let s = validate_plan(&plan).map_err(e2s)?;
        if s.total != s.common_len + 2 * s.private_len || s.total_layers != 20 || plan.common + plan.private != e {
            return Ok((false, format!("identity broken at E={e}: {s:?}")));
        }
        got.push(plan.private);
    }
    let anchor = ResourcePlan::from_budget(2, 16, 20, 16, 16).map_err(e2s)?;
    let ok = got == [10, 6, 4, 2] && anchor.common == 12 && anchor.private == 4;
    Ok((ok, format!("P = {got:?}, E=16 gives C={} P={}", anchor.common, anchor.private)))
}

fn channel_calibration() -> Check {
    let len = 500_000;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let values: Vec<f32> = (0..2 * len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let x = SignalBlock::new(2, len, values, StageTag::Common).map_err(e2s)?;
    let h = ChannelMatrix::symmetric(2, 1.0).map_err(e2s)?;
    let y = apply_awgn_ic(&h, &x, &NoiseSpec::from_snr_db(15.0).map_err(e2s)?, 3).map_err(e2s)?;
    let hx = apply_awgn_ic(&h, &x, &NoiseSpec::noiseless(), 3).map_err(e2s)?;
    let n: Vec<f64> = y.values().iter().zip(hx.values()).map(|(a, b)| *a as f64 - *b as f64).collect();
    let mean = n.iter().sum::<f64>() / n.len() as f64;
    let var = n.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n.len() - 1) as f64;
    let target = 10f64.powf(-1.5);
    let mut worst = 0.0f64;
    for rx in 0..2 {
        for t in 0..len {
            let expect = x.row(rx)[t] as f64 + x.row(1 - rx)[t] as f64;
            let rel = (hx.row(rx)[t] as f64 - expect).abs() / expect.abs().max(1e-3);
            worst = worst.max(rel);
        }
    }
    let ok = (var / target - 1.0).abs() <= 0.02 && worst <= 1e-6;
    Ok((ok, format!("variance {var:.5} vs {target:.5} over {} samples; noiseless rel err {worst:.1e}", n.len())))
}

/// Trained toy models shared by the learning criteria.
struct Toy {
    dir: PathBuf,
    cfg: ExperimentConfig,
    corpus: Corpus,
    p4: TrainState,
    p1: TrainState,
}

fn profile() -> ExperimentConfig {
    let uniform = InterferencePolicy::Uniform { lo: 0.0, hi: 2.0 };
    ExperimentConfig {
        feature_layers: 16,
        private_layers: Some(4),
        total_layers: Some(20),
        n_val: 200,
        split_seed: 1,
        codec_widths: [16, 32],
        separator: SeparatorArch { generator_width: 64, generator_blocks: 4, discriminator_width: 32 },
        weights: GanWeights::default(),
        phase1: PhaseConfig { epochs: 10, lr_codec: 1e-3, ..PhaseConfig::for_phase(1) },
        phase2: PhaseConfig { epochs: 5, lr_generator: 1e-3, lr_discriminator: 2e-3, interference: uniform, ..PhaseConfig::for_phase(2) },
        phase3: PhaseConfig {
            epochs: 1,
            lr_codec: 1e-4,
            lr_generator: 2e-4,
            lr_discriminator: 4e-4,
            interference: uniform,
            patience: 1,
            max_alternations: 2,
            ..PhaseConfig::for_phase(3)
        },
        schemes: vec![SchemeName::Deeppasic, SchemeName::NoSeparator],
        h_values: H_SWEEP.to_vec(),
        seeds: EVAL_SEEDS.to_vec(),
        ..ExperimentConfig::default()
    }
}

const CORPUS: (usize, u32, u32, u64) = (2200, 80, 72, 7);

impl Toy {
    fn prepare() -> Result<Toy, String> {
        let mut cfg = profile();
        let key = format!("{:?}{:?}", cfg.to_toml_string().map_err(e2s)?, CORPUS);
        let digest = Sha256::digest(key.as_bytes());
        let tag: String = digest[..6].iter().map(|b| format!("{b:02x}")).collect();
        let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(tag);
        fs::create_dir_all(&dir).map_err(e2s)?;
        cfg.corpus = dir.join("corpus");
        cfg.checkpoint = dir.join("p4.ckpt");
        cfg.output_dir = dir.join("results");
        if !dir.join("corpus.complete").exists() {
            eprintln!("generating toy corpus in {}", cfg.corpus.display());
            generate_corpus(&cfg.corpus, CORPUS.0, CORPUS.1, CORPUS.2, CORPUS.3).map_err(e2s)?;
            fs::write(dir.join("corpus.complete"), b"").map_err(e2s)?;
        }
        let corpus = load_corpus(&cfg).map_err(e2s)?;
        let cached = |name: &str| load_checkpoint(&dir.join(name), None).ok();
        let (p4, p1) = match (cached("p4.ckpt"), cached("p1.ckpt")) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                let spec = cfg.model_spec().map_err(e2s)?;
                let t = Instant::now();
                let base = match cached("phase1.ckpt") {
                    Some(s) => s,
                    None => {
                        let s = train_autoencoder_phase(&cfg.phase1, &corpus, &spec).map_err(e2s)?;
                        save_checkpoint(&s, &dir.join("phase1.ckpt")).map_err(e2s)?;
                        s
                    }
                };
                eprintln!("phase 1 done after {:.0}s", t.elapsed().as_secs_f64());
                let mut out = Vec::new();
                for p in [4, 1] {
                    let s = base.with_private_layers(p).map_err(e2s)?;
                    let s = train_separator_phase(&cfg.phase2, &corpus, s).map_err(e2s)?;
                    eprintln!("P={p} phase 2 done after {:.0}s", t.elapsed().as_secs_f64());
                    let s = alternate_phase(&cfg.phase3, &corpus, s).map_err(e2s)?;
                    eprintln!("P={p} phase 3 done after {:.0}s ({} alternations)", t.elapsed().as_secs_f64(), s.alternations());
                    save_checkpoint(&s, &dir.join(format!("p{p}.ckpt"))).map_err(e2s)?;
                    out.push(s);
                }
                let p1 = out.pop().expect("two models");
                (out.pop().expect("two models"), p1)
            }
        };
        Ok(Toy { dir, cfg, corpus, p4, p1 })
    }

    fn sweeps(&self) -> Result<Sweeps, String> {
        let p4 = run_sweep(&self.cfg, Some(&self.p4), &self.corpus.val, &mut |_| Ok(())).map_err(e2s)?;
        let cfg1 = ExperimentConfig { private_layers: Some(1), total_layers: None, checkpoint: self.dir.join("p1.ckpt"), ..self.cfg.clone() };
        let p1 = run_sweep(&cfg1, Some(&self.p1), &self.corpus.val, &mut |_| Ok(())).map_err(e2s)?;
        Ok(Sweeps { p4, p1 })
    }
}

#[derive(Clone)]
struct Sweeps {
    p4: Vec<RunRecord>,
    p1: Vec<RunRecord>,
}

fn cell(records: &[RunRecord], scheme: SchemeName, h: f64, seed: u64) -> f64 {
    records.iter().find(|r| r.scheme == scheme && r.h == h && r.seed == seed).map(|r| r.psnr_db).expect("cell evaluated")
}

fn seed_mean(records: &[RunRecord], scheme: SchemeName, h: f64) -> f64 {
    EVAL_SEEDS.iter().map(|&s| cell(records, scheme, h, s)).sum::<f64>() / EVAL_SEEDS.len() as f64
}

fn separation_gain(s: &Sweeps) -> Check {
    let gains: Vec<f64> = EVAL_SEEDS.iter().map(|&seed| cell(&s.p4, SchemeName::Deeppasic, 1.0, seed) - cell(&s.p4, SchemeName::NoSeparator, 1.0, seed)).collect();
    let ok = gains.iter().all(|g| *g >= 3.0);
    Ok((
        ok,
        format!(
            "|h|=1: separator {:.2} dB vs none {:.2} dB; per-seed gains {}",
            seed_mean(&s.p4, SchemeName::Deeppasic, 1.0),
            seed_mean(&s.p4, SchemeName::NoSeparator, 1.0),
            gains.iter().map(|g| format!("{g:.2}")).collect::<Vec<_>>().join("/")
        ),
    ))
}

fn learned_trend(s: &Sweeps) -> Check {
    let curve: Vec<f64> = H_SWEEP.iter().map(|&h| seed_mean(&s.p4, SchemeName::Deeppasic, h)).collect();
    let ok = curve.windows(2).all(|w| w[1] <= w[0] + 0.5);
    Ok((ok, format!("PSNR over |h| {:?}: {}", H_SWEEP, curve.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>().join(", "))))
}

fn prompt_trend(s: &Sweeps) -> Check {
    let a = seed_mean(&s.p4, SchemeName::Deeppasic, 1.0);
    let b = seed_mean(&s.p1, SchemeName::Deeppasic, 1.0);
    Ok((a - b >= 1.0, format!("|h|=1: P=4 {a:.2} dB, P=1 {b:.2} dB, gap {:.2} dB", a - b)))
}

fn baseline_trends(toy: &Toy) -> Check {
    let n = 100.min(toy.corpus.val.batch());
    let images: Vec<ImageTensor> = (0..n).map(|i| ImageTensor::from_batch(&toy.corpus.val, i)).collect();
    let plan = toy.cfg.plan().map_err(e2s)?;
    let budget = LinkBudget::from_plan(&plan).map_err(e2s)?;
    let noise = NoiseSpec::from_snr_db(15.0).map_err(e2s)?;
    let cfg = ClassicalConfig::default();
    let psnr = |scheme: Scheme, h: f64| -> Result<f64, String> {
        let channel = ChannelMatrix::symmetric(2, h).map_err(e2s)?;
        let mut total = 0.0;
        for i in 0..n {
            let srcs = [images[i].clone(), images[(i + n / 2) % n].clone()];
            // Matched seeds: every scheme and gain sees the same per-image seed.
            let out = run_classical_link(&srcs, 0, scheme, &budget, &channel, &noise, scenario_seed(5, i), &cfg).map_err(e2s)?;
            total += compute_psnr(&out.image, &srcs[0]).map_err(e2s)?;
        }
        Ok(total / n as f64)
    };
    let gains = [0.0, 0.1, 0.5, 1.0, 1.5, 2.0];
    let orth = gains.iter().map(|&h| psnr(Scheme::Orthogonal, h)).collect::<Result<Vec<_>, _>>()?;
    let spread = orth.iter().cloned().fold(f64::MIN, f64::max) - orth.iter().cloned().fold(f64::MAX, f64::min);
    let (tin_weak, tin_unit, tin_strong) = (psnr(Scheme::Tin, 0.1)?, psnr(Scheme::Tin, 1.0)?, psnr(Scheme::Tin, 2.0)?);
    let (sic_weak, sic_strong) = (psnr(Scheme::Sic, 0.1)?, psnr(Scheme::Sic, 2.0)?);
    let a = spread < 0.2;
    let b = tin_weak - tin_unit >= 5.0;
    let c1 = sic_strong > tin_strong;
    let c2 = tin_weak > sic_weak;
    let verdict = |v: bool| if v { "ok" } else { "FAIL" };
    Ok((
        a && b && c1 && c2,
        format!(
            "{n} images; (a) orthogonal spread {spread:.3} dB [{}]; (b) TIN {tin_weak:.2} -> {tin_unit:.2} dB [{}]; (c) |h|=2 SIC {sic_strong:.2} vs TIN {tin_strong:.2} [{}], |h|=0.1 TIN {tin_weak:.2} vs SIC {sic_weak:.2} [{}]",
            verdict(a),
            verdict(b),
            verdict(c1),
            verdict(c2)
        ),
    ))
}

fn classical_loopback() -> Check {
    let budget = LinkBudget::from_plan(&ResourcePlan::new(2, 16, 4, 16, 16).map_err(e2s)?).map_err(e2s)?;
    let cfg = ClassicalConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let imgs: Vec<ImageTensor> = (0..2)
        .map(|_| {
            let im = pasic::harness::synth_image(&mut rng, 64, 64);
            ImageTensor::from_rgb8(64, 64, im.as_raw()).map_err(e2s)
        })
        .collect::<Result<_, _>>()?;
    let mut loop_ok = true;
    for scheme in [Scheme::Orthogonal, Scheme::Tin, Scheme::Sic] {
        let h = ChannelMatrix::symmetric(2, if scheme == Scheme::Sic { 2.0 } else { 0.0 }).map_err(e2s)?;
        let out = run_classical_link(&imgs, 0, scheme, &budget, &h, &NoiseSpec::noiseless(), 1, &cfg).map_err(e2s)?;
        let k = budget.info_bits(scheme, &cfg.turbo).map_err(e2s)?;
        let (payload, _) = jpeg_fit_to_budget(&imgs[0], k).map_err(e2s)?;
        let reference = decode_payload(&payload, 64, 64).map_err(e2s)?;
        loop_ok &= out.image.pixels() == reference.pixels();
        loop_ok &= bytes_to_bits(&payload).len() <= k;
    }

    let turbo = TurboConfig::default();
    let info: Vec<u8> = (0..5000).map(|_| rng.gen_range(0..2)).collect();
    let coded = turbo_encode(&BitStream { bits: info.clone(), role: BitRole::Info }, &turbo).map_err(e2s)?;
    let clean: Vec<f64> = coded.bits.iter().map(|&b| if b == 0 { 40.0 } else { -40.0 }).collect();
    let turbo_ok = turbo_decode(&clean, info.len(), &turbo).map_err(e2s)?.bits == info;

    let bits: Vec<u8> = (0..100_000).map(|_| rng.gen_range(0..2)).collect();
    let energy = qam16_map(&BitStream { bits, role: BitRole::Coded }).map_err(e2s)?.mean_energy();
    let energy_ok = (energy - 1.0).abs() <= 0.01;

    // BPSK at Eb/N0 = 3 dB, same noise draws for coded and uncoded.
    let k = 100_000;
    let info: Vec<u8> = (0..k).map(|_| rng.gen_range(0..2)).collect();
    let coded = turbo_encode(&BitStream { bits: info.clone(), role: BitRole::Info }, &turbo).map_err(e2s)?;
    let ebn0 = 10f64.powf(0.3);
    let noise: Vec<f64> = (0..coded.bits.len()).map(|_| rng.sample(StandardNormal)).collect();
    let rate = k as f64 / coded.bits.len() as f64;
    let s_coded = (1.0 / (2.0 * rate * ebn0)).sqrt();
    let s_unc = (1.0 / (2.0 * ebn0)).sqrt();
    let llrs: Vec<f64> = coded.bits.iter().zip(&noise).map(|(&b, n)| 2.0 * ((1.0 - 2.0 * b as f64) + s_coded * n) / (s_coded * s_coded)).collect();
    let dec = turbo_decode(&llrs, k, &turbo).map_err(e2s)?;
    let coded_ber = dec.bits.iter().zip(&info).filter(|(a, b)| a != b).count() as f64 / k as f64;
    let unc_ber = info.iter().zip(&noise).filter(|(&b, n)| ((1.0 - 2.0 * b as f64) + s_unc * **n < 0.0) != (b == 1)).count() as f64 / k as f64;
    let ber_ok = coded_ber < unc_ber;
    Ok((
        loop_ok && turbo_ok && energy_ok && ber_ok,
        format!("noiseless chains bit-exact {loop_ok}; turbo round trip {turbo_ok}; 16QAM energy {energy:.4}; BER coded {coded_ber:.2e} vs uncoded {unc_ber:.2e}"),
    ))
}

fn loss_oracles() -> Check {
    let a = loss_discriminator(&[0.5], &[0.5]).map_err(e2s)?;
    let b = loss_discriminator(&[0.9], &[0.2]).map_err(e2s)?;
    let hand = (a + 1.3863).abs() <= 1e-4 && (b + 0.3285).abs() <= 1e-4;

    let t = pasic::nn::Tensor::from_vec(1, 2, 2, 2, vec![0.5, -0.25, 0.125, 1.0, 0.0, 0.75, -1.0, 0.25]);
    let same = SeparatorOutput { commons: vec![t.clone(), t.clone()] };
    let offset = SeparatorOutput { commons: vec![t.map(|v| v + 0.25), t.map(|v| v - 0.25)] };
    let zero = loss_generator(&same, &[t.clone(), t.clone()]).map_err(e2s)?;
    let off = loss_generator(&offset, &[t.clone(), t.clone()]).map_err(e2s)?;
    let exact = zero == 0.0 && off == 0.0625;

    let mut worst = 0.0f64;
    let real = [0.3, 0.8, 0.55, 0.12];
    let fake = [0.1, 0.7, 0.4, 0.93];
    let (gr, gf) = loss_discriminator_grad(&real, &fake);
    let step = 1e-6;
    let rel = |fd: f64, an: f64| (fd - an).abs() / fd.abs().max(1e-12);
    for i in 0..real.len() {
        let (mut rp, mut rm, mut fp, mut fm) = (real, real, fake, fake);
        rp[i] += step;
        rm[i] -= step;
        fp[i] += step;
        fm[i] -= step;
        let fd_r = (loss_discriminator(&rp, &fake).map_err(e2s)? - loss_discriminator(&rm, &fake).map_err(e2s)?) / (2.0 * step);
        let fd_f = (loss_discriminator(&real, &fp).map_err(e2s)? - loss_discriminator(&real, &fm).map_err(e2s)?) / (2.0 * step);
        worst = worst.max(rel(fd_r, gr[i])).max(rel(fd_f, gf[i]));
        let w = GanWeights::default();
        let obj = |f: &[f64]| adversarial_objective(0.3, f, &w);
        let fd_adv = (obj(&fp).map_err(e2s)? - obj(&fm).map_err(e2s)?) / (2.0 * step);
        let an_adv = -w.beta / (fake.len() as f64 * fake[i]);
        worst = worst.max(rel(fd_adv, an_adv));
    }
    let truth = vec![t.clone(), t.map(|v| 0.5 * v)];
    let g = loss_generator_grad(&offset, &truth);
    let h = 1.0 / 64.0;
    for k in 0..2 {
        for i in 0..t.len() {
            let mut up = offset.clone();
            up.commons[k].data_mut()[i] += h;
            let mut dn = offset.clone();
            dn.commons[k].data_mut()[i] -= h;
            let fd = (loss_generator(&up, &truth).map_err(e2s)? - loss_generator(&dn, &truth).map_err(e2s)?) / (2.0 * h as f64);
            if fd != 0.0 {
                worst = worst.max(rel(fd, g[k].data()[i] as f64));
            }
        }
    }
    let grads = worst <= 1e-4;
    Ok((hand && exact && grads, format!("L_D(0.5,0.5) {a:.4}, L_D(0.9,0.2) {b:.4}; L_G zero {zero}, offset {off}; worst gradient rel err {worst:.1e}")))
}

fn eval_determinism(toy: &Toy) -> Check {
    let config = toy.dir.join("determinism.toml");
    let text = format!(
        "corpus = {:?}\ncheckpoint = {:?}\nprivate_layers = 4\nn_val = 200\nsplit_seed = 1\neval_images = 24\nh_values = [0.0, 1.0]\nseeds = [0]\nschemes = [\"deeppasic\", \"no_separator\", \"sic\"]\n",
        toy.cfg.corpus, toy.cfg.checkpoint
    );
    fs::write(&config, text).map_err(e2s)?;
    let mut outputs = Vec::new();
    for run in ["run_a", "run_b"] {
        let out = toy.dir.join(run);
        let _ = fs::remove_dir_all(&out);
        let o = Command::new(env!("CARGO_BIN_EXE_pasic")).args(["eval", "--config"]).arg(&config).arg("--out").arg(&out).output().map_err(e2s)?;
        if !o.status.success() {
            return Err(String::from_utf8_lossy(&o.stderr).into_owned());
        }
        outputs.push(fs::read(out.join("results.csv")).map_err(e2s)?);
    }
    let rows = String::from_utf8_lossy(&outputs[0]).lines().count() - 1;
    Ok((outputs[0] == outputs[1], format!("two eval runs, {rows} rows, identical bytes: {}", outputs[0] == outputs[1])))
}
