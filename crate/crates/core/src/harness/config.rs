//! Experiment description loaded from TOML.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{ClassicalConfig, Scheme};
use crate::channel::{validate_plan, NoiseSpec, ResourcePlan};
use crate::codec::CodecArch;
use crate::error::{Error, Result};
use crate::separator::{GanWeights, SeparatorArch};
use crate::trainer::{InterferencePolicy, ModelSpec, PhaseConfig};

/// Encoder downsampling factor from image to feature plane.
pub const FEATURE_STRIDE: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    Deeppasic,
    NoSeparator,
    Orthogonal,
    Tin,
    Sic,
}

impl SchemeName {
    pub const ALL: [SchemeName; 5] = [SchemeName::Deeppasic, SchemeName::NoSeparator, SchemeName::Orthogonal, SchemeName::Tin, SchemeName::Sic];

    pub fn as_str(self) -> &'static str {
        match self {
            SchemeName::Deeppasic => "deeppasic",
            SchemeName::NoSeparator => "no_separator",
            SchemeName::Orthogonal => "orthogonal",
            SchemeName::Tin => "tin",
            SchemeName::Sic => "sic",
        }
    }

    /// Whether the scheme needs a trained checkpoint.
    pub fn is_learned(self) -> bool {
        matches!(self, SchemeName::Deeppasic | SchemeName::NoSeparator)
    }

    pub fn classical(self) -> Option<Scheme> {
        match self {
            SchemeName::Orthogonal => Some(Scheme::Orthogonal),
            SchemeName::Tin => Some(Scheme::Tin),
            SchemeName::Sic => Some(Scheme::Sic),
            _ => None,
        }
    }
}

impl fmt::Display for SchemeName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SchemeName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SchemeName::ALL
            .into_iter()
            .find(|n| n.as_str() == s.trim())
            .ok_or_else(|| Error::InvalidConfig(format!("unknown scheme {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub users: usize,
    pub feature_layers: usize,
    /// Either the private split or the total layer budget fixes the plan;
    /// when both are given they must agree.
    pub private_layers: Option<usize>,
    pub total_layers: Option<usize>,
    pub image_size: usize,
    pub corpus: PathBuf,
    pub n_val: usize,
    pub split_seed: u64,
    /// Evaluate on the first `n` validation images only.
    pub eval_images: Option<usize>,
    pub snr_db: f64,
    pub h_values: Vec<f64>,
    pub schemes: Vec<SchemeName>,
    pub seeds: Vec<u64>,
    pub master_seed: u64,
    pub checkpoint: PathBuf,
    pub output_dir: PathBuf,
    pub record_wall_time: bool,
    pub codec_widths: [usize; 2],
    pub separator: SeparatorArch,
    pub weights: GanWeights,
    pub phase1: PhaseConfig,
    pub phase2: PhaseConfig,
    pub phase3: PhaseConfig,
    pub classical: ClassicalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            users: 2,
            feature_layers: 16,
            private_layers: None,
            total_layers: Some(20),
            image_size: 64,
            corpus: PathBuf::from("data/toy"),
            n_val: 200,
            split_seed: 0,
            eval_images: None,
            snr_db: 15.0,
            h_values: vec![0.0, 0.5, 1.0, 1.5, 2.0],
            schemes: SchemeName::ALL.to_vec(),
            seeds: vec![0, 1, 2],
            master_seed: 0,
            checkpoint: PathBuf::from("runs/model.ckpt"),
            output_dir: PathBuf::from("runs/results"),
            record_wall_time: false,
            codec_widths: CodecArch::new(16).widths,
            separator: SeparatorArch::default(),
            weights: GanWeights::default(),
            phase1: PhaseConfig::for_phase(1),
            phase2: PhaseConfig { interference: InterferencePolicy::Uniform { lo: 0.0, hi: 2.0 }, ..PhaseConfig::for_phase(2) },
            phase3: PhaseConfig { interference: InterferencePolicy::Uniform { lo: 0.0, hi: 2.0 }, ..PhaseConfig::for_phase(3) },
            classical: ClassicalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.corpus, &mut cfg.checkpoint, &mut cfg.output_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn plan(&self) -> Result<ResourcePlan> {
        if self.image_size == 0 || self.image_size % FEATURE_STRIDE != 0 {
            return Err(Error::InvalidConfig(format!("image size {} is not a multiple of {FEATURE_STRIDE}", self.image_size)));
        }
        let side = self.image_size / FEATURE_STRIDE;
        let plan = match (self.private_layers, self.total_layers) {
            (Some(p), None) => ResourcePlan::new(self.users, self.feature_layers, p, side, side)?,
            (None, Some(s)) => ResourcePlan::from_budget(self.users, self.feature_layers, s, side, side)?,
            (Some(p), Some(s)) => {
                let plan = ResourcePlan::new(self.users, self.feature_layers, p, side, side)?;
                if plan.total_layers() != s {
                    return Err(Error::PlanInconsistent(format!("P = {p} implies {} total layers, config states {s}", plan.total_layers())));
                }
                plan
            }
            (None, None) => return Err(Error::InvalidConfig("set private_layers or total_layers".into())),
        };
        validate_plan(&plan)?;
        Ok(plan)
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        Ok(ModelSpec {
            plan: self.plan()?,
            codec: CodecArch { feature_layers: self.feature_layers, widths: self.codec_widths },
            separator: self.separator,
            weights: self.weights,
            init_seed: self.master_seed,
        })
    }

    pub fn noise(&self) -> Result<NoiseSpec> {
        NoiseSpec::from_snr_db(self.snr_db)
    }

    pub fn validate(&self) -> Result<()> {
        self.plan()?;
        self.noise()?;
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("at least one seed".into()));
        }
        if self.schemes.is_empty() {
            return Err(Error::InvalidConfig("at least one scheme".into()));
        }
        if let Some(h) = self.h_values.iter().find(|h| !(h.is_finite() && **h >= 0.0)) {
            return Err(Error::InvalidConfig(format!("interference gain {h}")));
        }
        if self.h_values.is_empty() {
            return Err(Error::InvalidConfig("at least one interference gain".into()));
        }
        if self.eval_images == Some(0) {
            return Err(Error::InvalidConfig("eval_images must be positive".into()));
        }
        self.phase1.validate(1)?;
        self.phase2.validate(2)?;
        self.phase3.validate(3)
    }
}

/// Comma-separated list parsing for command-line overrides.
pub fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse::<T>().map_err(|_| Error::InvalidConfig(format!("cannot parse list item {t:?}"))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
        let plan = cfg.plan().unwrap();
        assert_eq!((plan.private, plan.common, plan.h_feat), (4, 12, 16));
    }

    #[test]
    fn partial_file_and_errors() {
        let cfg = ExperimentConfig::from_toml_str("feature_layers = 18\nschemes = [\"tin\", \"no_separator\"]\nh_values = [0.1]\n").unwrap();
        assert_eq!(cfg.plan().unwrap().private, 2);
        assert_eq!(cfg.schemes, vec![SchemeName::Tin, SchemeName::NoSeparator]);
        assert!(ExperimentConfig::from_toml_str("seeds = []").is_err());
        assert!(ExperimentConfig::from_toml_str("h_values = [-1.0]").is_err());
        assert!(ExperimentConfig::from_toml_str("bogus = 1").is_err());
        assert!(matches!(ExperimentConfig::from_toml_str("private_layers = 3"), Err(Error::PlanInconsistent(_))));
        assert_eq!(parse_list::<SchemeName>("tin, sic").unwrap(), vec![SchemeName::Tin, SchemeName::Sic]);
        assert!(parse_list::<SchemeName>("qpsk").is_err());
    }
}
