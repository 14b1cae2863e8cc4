//! Training pipeline and evaluation sweeps over (scheme, |h|, seed) cells.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, SchemeName};
use super::data::ingest_dataset;
use super::metrics::compute_psnr;
use crate::baselines::{run_classical_link, LinkBudget};
use crate::channel::ChannelMatrix;
use crate::codec::ImageTensor;
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::trainer::{alternate_phase, evaluate_psnr_pass, load_checkpoint, scenario_seed, train_autoencoder_phase, train_separator_phase, Corpus, SeparatorMode, TrainState};

/// One evaluated cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub scheme: SchemeName,
    pub h: f64,
    #[serde(rename = "E")]
    pub e: usize,
    #[serde(rename = "P")]
    pub p: usize,
    pub seed: u64,
    pub psnr_db: f64,
    pub n_images: usize,
    pub wall_s: f64,
}

/// Seed of one cell; distinct cells get unrelated streams.
pub fn cell_seed(master: u64, scheme: SchemeName, h: f64, seed: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(scheme.as_str().as_bytes());
    hasher.update(h.to_bits().to_le_bytes());
    hasher.update(seed.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Ingests the configured corpus with its split.
pub fn load_corpus(cfg: &ExperimentConfig) -> Result<Corpus> {
    let ingested = ingest_dataset(&cfg.corpus, cfg.image_size as u32, cfg.split_seed, cfg.n_val)?;
    for path in &ingested.skipped {
        eprintln!("warning: skipped {}", path.display());
    }
    Ok(ingested.corpus)
}

/// All three training phases in order.
pub fn train_pipeline(cfg: &ExperimentConfig, corpus: &Corpus) -> Result<TrainState> {
    let spec = cfg.model_spec()?;
    let state = train_autoencoder_phase(&cfg.phase1, corpus, &spec)?;
    if spec.plan.common == 0 {
        return Ok(state);
    }
    let state = train_separator_phase(&cfg.phase2, corpus, state)?;
    alternate_phase(&cfg.phase3, corpus, state)
}

/// Loads the configured checkpoint when a learned scheme is requested.
pub fn load_for_sweep(cfg: &ExperimentConfig) -> Result<Option<TrainState>> {
    if !cfg.schemes.iter().any(|s| s.is_learned()) {
        return Ok(None);
    }
    if !cfg.checkpoint.exists() {
        let cell = cfg.schemes.iter().find(|s| s.is_learned()).expect("learned scheme present");
        return Err(Error::MissingArtifact { cell: format!("{cell} checkpoint"), path: cfg.checkpoint.clone() });
    }
    load_checkpoint(&cfg.checkpoint, Some(&cfg.plan()?)).map(Some)
}

fn evaluation_set(cfg: &ExperimentConfig, val: &Tensor) -> Tensor {
    match cfg.eval_images {
        Some(n) if n < val.batch() => val.samples(0..n),
        _ => val.clone(),
    }
}

fn classical_psnr(cfg: &ExperimentConfig, scheme: SchemeName, images: &Tensor, h: &ChannelMatrix, seed: u64) -> Result<f64> {
    let plan = cfg.plan()?;
    let budget = LinkBudget::from_plan(&plan)?;
    let scheme = scheme.classical().expect("classical scheme");
    let noise = cfg.noise()?;
    let n = images.batch();
    let stride = (n / plan.users).max(1);
    let mut total = 0.0;
    for i in 0..n {
        let srcs: Vec<ImageTensor> = (0..plan.users).map(|u| ImageTensor::from_batch(images, (i + u * stride) % n)).collect();
        let out = run_classical_link(&srcs, 0, scheme, &budget, h, &noise, scenario_seed(seed, i), &cfg.classical)?;
        total += compute_psnr(&out.image, &srcs[0])?;
    }
    Ok(total / n as f64)
}

/// Evaluates every (scheme, |h|, seed) cell for receiver 1, handing each
/// record to `sink` as soon as it exists.
pub fn run_sweep(cfg: &ExperimentConfig, state: Option<&TrainState>, val: &Tensor, sink: &mut dyn FnMut(&RunRecord) -> Result<()>) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    let plan = cfg.plan()?;
    let images = evaluation_set(cfg, val);
    if images.batch() == 0 {
        return Err(Error::EmptyDataset);
    }
    let noise = cfg.noise()?;
    if let Some(s) = state {
        if s.spec.plan != plan {
            return Err(Error::PlanInconsistent(format!("checkpoint plan {:?} differs from config plan {plan:?}", s.spec.plan)));
        }
    }
    let mut records = Vec::new();
    for &scheme in &cfg.schemes {
        for &h in &cfg.h_values {
            let channel = ChannelMatrix::symmetric(plan.users, h)?;
            for &seed in &cfg.seeds {
                let cs = cell_seed(cfg.master_seed, scheme, h, seed);
                let start = Instant::now();
                let psnr = if scheme.is_learned() {
                    let st = state.ok_or_else(|| Error::MissingArtifact { cell: format!("{scheme} h={h} seed={seed}"), path: cfg.checkpoint.clone() })?;
                    let mode = if scheme == SchemeName::Deeppasic { SeparatorMode::Generator } else { SeparatorMode::Passthrough };
                    evaluate_psnr_pass(st, &images, &channel, &noise, cs, mode)?
                } else {
                    classical_psnr(cfg, scheme, &images, &channel, cs)?
                };
                let wall_s = if cfg.record_wall_time { start.elapsed().as_secs_f64() } else { 0.0 };
                let record = RunRecord { scheme, h, e: plan.layers, p: plan.private, seed, psnr_db: psnr, n_images: images.batch(), wall_s };
                sink(&record)?;
                records.push(record);
            }
        }
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_seeds_are_stable_and_distinct() {
        let a = cell_seed(0, SchemeName::Tin, 1.0, 0);
        assert_eq!(a, cell_seed(0, SchemeName::Tin, 1.0, 0));
        assert_ne!(a, cell_seed(0, SchemeName::Sic, 1.0, 0));
        assert_ne!(a, cell_seed(0, SchemeName::Tin, 1.5, 0));
        assert_ne!(a, cell_seed(0, SchemeName::Tin, 1.0, 1));
        assert_ne!(a, cell_seed(1, SchemeName::Tin, 1.0, 0));
    }

    #[test]
    fn learned_cells_without_checkpoint_fail_naming_the_cell() {
        let cfg = ExperimentConfig { schemes: vec![SchemeName::Orthogonal, SchemeName::Deeppasic], h_values: vec![0.5], seeds: vec![7], ..ExperimentConfig::default() };
        let val = Tensor::zeros(2, 3, 64, 64);
        let cfg = ExperimentConfig { eval_images: Some(1), ..cfg };
        let mut sunk = 0;
        let err = run_sweep(&cfg, None, &val, &mut |_| {
            sunk += 1;
            Ok(())
        })
        .unwrap_err();
        match err {
            Error::MissingArtifact { cell, .. } => assert_eq!(cell, "deeppasic h=0.5 seed=7"),
            e => panic!("unexpected {e}"),
        }
        assert_eq!(sunk, 1);
    }
}
