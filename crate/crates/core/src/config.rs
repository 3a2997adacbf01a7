//! TOML run configuration shared by every command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataio::{GeneratorConfig, Split};
use crate::error::{Error, Result};
use crate::kevili::KeviliConfig;
use crate::levilm::{LevilmConfig, Regime, Strategy, TextVariant};

/// Overrides `out_dir` when set.
pub const OUT_DIR_ENV: &str = "SKVG_OUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Worker threads; all cores when absent.
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub generator: GeneratorConfig,
    /// `toy` or `paper`; fills `levilm` and `kevili` when they are absent.
    #[serde(default = "default_preset")]
    pub preset: String,
    #[serde(default)]
    pub levilm: Option<LevilmConfig>,
    #[serde(default)]
    pub kevili: Option<KeviliConfig>,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub matrix: MatrixSection,
    #[serde(default)]
    pub gradcheck: GradcheckSection,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_preset() -> String {
    "toy".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Existing corpus to read; generated under `out_dir/data` when absent.
    pub dir: Option<PathBuf>,
    pub samples: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            dir: None,
            samples: 2000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Levilm,
    Kevili,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub model: ModelKind,
    pub text: TextVariant,
    pub regime: Regime,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            model: ModelKind::Levilm,
            text: TextVariant::QKS,
            regime: Regime::FT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub split: Split,
    pub strategies: Vec<Strategy>,
    /// Seeded draws averaged for R.
    pub r_draws: usize,
    /// Checkpoint to evaluate; the `train` output when absent.
    pub checkpoint: Option<PathBuf>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            split: Split::Test,
            strategies: Strategy::ALL.to_vec(),
            r_draws: 1,
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixCell {
    pub regime: Regime,
    pub text: TextVariant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatrixSection {
    /// KeViLI text variants (criteria `-`).
    pub kevili: Vec<TextVariant>,
    /// LeViLM (regime, text) runs, each evaluated under every strategy.
    pub levilm: Vec<MatrixCell>,
    pub strategies: Vec<Strategy>,
}

impl Default for MatrixSection {
    fn default() -> Self {
        use Regime::*;
        use TextVariant::*;
        let cell = |regime, text| MatrixCell { regime, text };
        MatrixSection {
            kevili: vec![Q, QK],
            levilm: vec![
                cell(ZS, Q),
                cell(ZS, QK),
                cell(LP, Q),
                cell(LP, QK),
                cell(LP, QKS),
                cell(FT, Q),
                cell(FT, QK),
                cell(FT, QKS),
            ],
            strategies: Strategy::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckSection {
    pub epsilon: f64,
    pub tolerance: f64,
    /// Strided subsample per tensor; every entry when absent.
    pub max_entries_per_param: Option<usize>,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        GradcheckSection {
            epsilon: 1e-4,
            tolerance: 1e-3,
            max_entries_per_param: Some(6),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Applies the preset and the output-directory override, propagates the
    /// seed into the generator and validates everything.
    pub fn resolve(mut self) -> Result<Self> {
        if let Ok(dir) = std::env::var(OUT_DIR_ENV) {
            if !dir.is_empty() {
                self.out_dir = PathBuf::from(dir);
            }
        }
        if self.levilm.is_none() {
            self.levilm = Some(LevilmConfig::preset(&self.preset)?);
        }
        if self.kevili.is_none() {
            self.kevili = Some(KeviliConfig::preset(&self.preset)?);
        }
        self.generator.seed = self.seed;
        self.generator.validate()?;
        self.levilm().validate()?;
        self.kevili().validate()?;
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be positive".into()));
        }
        if self.eval.r_draws == 0 {
            return Err(Error::Config("eval.r_draws must be positive".into()));
        }
        if !(self.gradcheck.epsilon > 0.0) {
            return Err(Error::Config("gradcheck.epsilon must be positive".into()));
        }
        Ok(self)
    }

    pub fn levilm(&self) -> &LevilmConfig {
        self.levilm.as_ref().expect("resolved config")
    }

    pub fn kevili(&self) -> &KeviliConfig {
        self.kevili.as_ref().expect("resolved config")
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}
