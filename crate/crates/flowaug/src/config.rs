//! TOML run configuration. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use flowaug_core::augment::{BalanceStrategy, SynthConfig};
use flowaug_core::classifier::CrnnConfig;
use flowaug_core::density::Bandwidth;
use flowaug_core::flows::DEFAULT_IDLE_TIMEOUT;
use flowaug_core::seqgen::{GeneratorHyper, DEFAULT_WINDOW_VOCAB_CAP};
use flowaug_core::Variant;
use serde::{Deserialize, Serialize};

use crate::corpus::CorpusConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub output: OutputConfig,
    pub split: SplitConfig,
    pub augment: AugmentConfig,
    pub generator: GeneratorHyper,
    pub kde: KdeConfig,
    pub crnn: CrnnConfig,
    pub experiment: ExperimentConfig,
    pub corpus: CorpusConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Packet CSV to ingest.
    pub packets: Option<PathBuf>,
    /// Flow dataset JSON (written by `ingest`, read by the other commands).
    pub flows: Option<PathBuf>,
    pub idle_timeout: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Classes to raise; empty means every class below the median count.
    pub classes: Vec<String>,
    pub strategy: BalanceStrategy,
    pub min_flows: usize,
    pub window_vocab_cap: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KdeConfig {
    /// `"silverman"` or a fixed positive bandwidth.
    pub bandwidth: BandwidthSetting,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BandwidthSetting {
    Rule(BandwidthRule),
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandwidthRule {
    Silverman,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub variants: Vec<Variant>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            data: DataConfig::default(),
            output: OutputConfig::default(),
            split: SplitConfig::default(),
            augment: AugmentConfig::default(),
            generator: GeneratorHyper::default(),
            kde: KdeConfig::default(),
            crnn: CrnnConfig::default(),
            experiment: ExperimentConfig::default(),
            corpus: CorpusConfig::default(),
        }
    }
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            packets: None,
            flows: None,
            idle_timeout: DEFAULT_IDLE_TIMEOUT,
        }
    }
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: "out".into() }
    }
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train_fraction: 0.85,
        }
    }
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            classes: Vec::new(),
            strategy: BalanceStrategy::Median,
            min_flows: 50,
            window_vocab_cap: DEFAULT_WINDOW_VOCAB_CAP,
        }
    }
}

impl Default for KdeConfig {
    fn default() -> Self {
        KdeConfig {
            bandwidth: BandwidthSetting::Rule(BandwidthRule::Silverman),
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            variants: Variant::ALL.to_vec(),
        }
    }
}

impl KdeConfig {
    pub fn bandwidth(&self) -> Bandwidth {
        match self.bandwidth {
            BandwidthSetting::Rule(BandwidthRule::Silverman) => Bandwidth::Silverman,
            BandwidthSetting::Fixed(h) => Bandwidth::Fixed(h),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.split.train_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::Config(format!(
                "split.train_fraction must be in (0, 1), got {f}"
            )));
        }
        if !(self.data.idle_timeout > 0.0) {
            return Err(Error::Config("data.idle_timeout must be positive".into()));
        }
        if let BandwidthSetting::Fixed(h) = self.kde.bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::Config(format!(
                    "kde.bandwidth must be positive, got {h}"
                )));
            }
        }
        if self.experiment.variants.is_empty() {
            return Err(Error::Config("experiment.variants is empty".into()));
        }
        let mut v = self.experiment.variants.clone();
        v.sort();
        v.dedup();
        if v.len() != self.experiment.variants.len() {
            return Err(Error::Config(
                "experiment.variants lists a variant twice".into(),
            ));
        }
        if self.generator.hidden == 0 || self.generator.batch_size == 0 {
            return Err(Error::Config(
                "generator.hidden and generator.batch_size must be positive".into(),
            ));
        }
        if !(self.generator.temperature > 0.0) {
            return Err(Error::Config(
                "generator.temperature must be positive".into(),
            ));
        }
        if self.augment.window_vocab_cap < 2 {
            return Err(Error::Config(
                "augment.window_vocab_cap must be at least 2".into(),
            ));
        }
        Ok(())
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            min_flows: self.augment.min_flows,
            window_vocab_cap: self.augment.window_vocab_cap,
            generator: self.generator,
            bandwidth: self.kde.bandwidth(),
            seed: self.seed,
        }
    }
}
