//! Scenario configuration. One TOML file per scenario; presets for the
//! paper-scale and desk-scale (toy) profiles are built in and mirrored under
//! `configs/` in the repository.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::{PreprocessParams, VignetteParams};
use crate::unet::{TrainConfig, UNetConfig};

/// The four pipeline variants compared in the ablation table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scenario {
    /// Baseline network, threshold only.
    A,
    /// Pre- and post-processing.
    B,
    /// B plus an LBP input channel.
    C,
    /// B plus three wavelet approximation channels.
    D,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::A, Scenario::B, Scenario::C, Scenario::D];

    pub fn preprocess(self) -> bool {
        self != Scenario::A
    }

    pub fn postprocess(self) -> bool {
        self != Scenario::A
    }

    pub fn lbp(self) -> bool {
        self == Scenario::C
    }

    pub fn wavelet_levels(self) -> usize {
        if self == Scenario::D {
            3
        } else {
            0
        }
    }

    pub fn input_channels(self) -> usize {
        1 + self.lbp() as usize + self.wavelet_levels()
    }

    pub fn description(self) -> &'static str {
        match self {
            Scenario::A => "baseline U-Net",
            Scenario::B => "U-Net + pre/post-processing",
            Scenario::C => "U-Net + pre/post-processing + LBP",
            Scenario::D => "U-Net + pre/post-processing + wavelets",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Scenario::A => "A",
            Scenario::B => "B",
            Scenario::C => "C",
            Scenario::D => "D",
        };
        f.write_str(s)
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(Scenario::A),
            "B" => Ok(Scenario::B),
            "C" => Ok(Scenario::C),
            "D" => Ok(Scenario::D),
            other => Err(Error::Config(format!("unknown scenario `{other}` (expected A, B, C or D)"))),
        }
    }
}

/// Preset scale.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Profile {
    /// 216 px images, 3 levels, 64 base filters, 20 epochs.
    Paper,
    /// 48 px images with an 8 px border, 2 levels, 8 base filters, 10 epochs.
    Toy,
}

impl Profile {
    pub const ENV: &'static str = "LESIONPIPE_PROFILE";

    /// Reads `LESIONPIPE_PROFILE`, defaulting to the toy profile.
    pub fn from_env() -> Result<Self> {
        match std::env::var(Self::ENV) {
            Ok(v) => v.parse(),
            Err(_) => Ok(Profile::Toy),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Profile::Paper => "paper",
            Profile::Toy => "toy",
        }
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "paper" => Ok(Profile::Paper),
            "toy" => Ok(Profile::Toy),
            other => Err(Error::Config(format!("unknown profile `{other}` (expected paper or toy)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub levels: usize,
    pub base_filters: usize,
    pub conv_size: usize,
    pub pool_size: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub batch_size: usize,
    pub batches: usize,
    /// Lesion-probability threshold.
    pub tau: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    /// Side of the resized image before the border is added.
    pub image_size: usize,
    pub border: usize,
    /// Master seed; weight initialisation, batch sampling and evaluation
    /// sampling all derive from it.
    pub seed: u64,
    pub network: NetworkConfig,
    pub training: TrainConfig,
    pub evaluation: EvalConfig,
    #[serde(default)]
    pub preprocess: PreprocessParams,
    #[serde(default)]
    pub paths: PathsConfig,
}

impl ScenarioConfig {
    pub fn preset(profile: Profile, scenario: Scenario) -> Self {
        let base = match profile {
            Profile::Paper => ScenarioConfig {
                scenario,
                image_size: 216,
                border: 20,
                seed: 2017,
                network: NetworkConfig {
                    levels: 3,
                    base_filters: 64,
                    conv_size: 3,
                    pool_size: 2,
                },
                training: TrainConfig {
                    epochs: 20,
                    ..TrainConfig::default()
                },
                evaluation: EvalConfig {
                    batch_size: 16,
                    batches: 72,
                    tau: 0.5,
                },
                preprocess: PreprocessParams::default(),
                paths: PathsConfig::default(),
            },
            Profile::Toy => ScenarioConfig {
                scenario,
                image_size: 48,
                border: 8,
                seed: 7,
                network: NetworkConfig {
                    levels: 2,
                    base_filters: 8,
                    conv_size: 3,
                    pool_size: 2,
                },
                training: TrainConfig {
                    learning_rate: 1e-3,
                    epochs: 10,
                    ..TrainConfig::default()
                },
                evaluation: EvalConfig {
                    batch_size: 16,
                    batches: 8,
                    tau: 0.5,
                },
                // Vignette circles scaled to the smaller image.
                preprocess: PreprocessParams {
                    vignette: VignetteParams {
                        base_margin: 4.0,
                        step: 1.0,
                        ..VignetteParams::default()
                    },
                    ..PreprocessParams::default()
                },
                paths: PathsConfig::default(),
            },
        };
        let seed = base.seed;
        base.with_seed(seed)
    }

    /// Replaces the master seed and the training seed derived from it.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.training.rng_seed = seed;
        self
    }

    /// Same configuration with a different scenario tag.
    pub fn for_scenario(&self, scenario: Scenario) -> Self {
        ScenarioConfig {
            scenario,
            ..self.clone()
        }
    }

    pub fn input_size(&self) -> usize {
        self.image_size + 2 * self.border
    }

    pub fn preprocess_enabled(&self) -> bool {
        self.scenario.preprocess()
    }

    pub fn postprocess_enabled(&self) -> bool {
        self.scenario.postprocess()
    }

    pub fn lbp_enabled(&self) -> bool {
        self.scenario.lbp()
    }

    pub fn wavelet_levels(&self) -> usize {
        self.scenario.wavelet_levels()
    }

    pub fn unet_config(&self) -> UNetConfig {
        UNetConfig {
            levels: self.network.levels,
            base_filters: self.network.base_filters,
            conv_size: self.network.conv_size,
            pool_size: self.network.pool_size,
            in_channels: self.scenario.input_channels(),
            out_classes: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 {
            return Err(Error::Config("image_size must be positive".into()));
        }
        if self.border > self.image_size {
            return Err(Error::Config("border may not exceed image_size".into()));
        }
        self.unet_config().validate_for(self.input_size())?;
        self.training.validate()?;
        self.preprocess.validate()?;
        if self.evaluation.batch_size == 0 || self.evaluation.batches == 0 {
            return Err(Error::Config("evaluation batch_size and batches must be positive".into()));
        }
        if !(self.evaluation.tau > 0.0 && self.evaluation.tau < 1.0) {
            return Err(Error::Config("evaluation tau must lie in (0, 1)".into()));
        }
        if self.scenario == Scenario::D && self.image_size < (1 << self.wavelet_levels()) {
            return Err(Error::Config("image_size too small for the wavelet pyramid".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        let seed = cfg.seed;
        let cfg = cfg.with_seed(seed);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}
