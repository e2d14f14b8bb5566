//! Run configuration: the TOML file schema and its resolution against
//! command-line flags.
//!
//! Flags take precedence over the file; the file over built-in defaults.
//! Unknown keys anywhere in the file are rejected so typos fail loudly.

use std::fs;
use std::path::PathBuf;
use std::str::FromStr;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use deepinfer::causal::NuisanceEstimates;
use deepinfer::data::{ColumnRoles, CovariateSelection};
use deepinfer::losses::LossKind;
use deepinfer::network::ArchitectureSpec;
use deepinfer::simulation::{
    DgpSpec, NormalConvention, OutcomeDesign, PropensityDesign,
};
use deepinfer::training::{Optimizer, TrainConfig};

use crate::{CliError, CommonArgs};

/// Top-level TOML document. Every section is optional; each command
/// demands the sections it needs and ignores the rest.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub randomized_treatment: Option<bool>,
    pub clip_eps: Option<f64>,
    pub margin: Option<f64>,
    pub cost: Option<f64>,
    pub level: Option<f64>,
    pub data: Option<DataSection>,
    pub loss: Option<LossSection>,
    pub architecture: Option<ArchSection>,
    pub train: Option<TrainSection>,
    pub nuisance: Option<NuisanceSection>,
    pub policy: Option<PolicySection>,
    pub dgp: Option<DgpSection>,
    pub simulate: Option<SimulateSection>,
    pub placebo: Option<PlaceboSection>,
}

/// Where the dataset lives and which columns play which role.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub path: PathBuf,
    #[serde(default = "default_outcome_column")]
    pub outcome: String,
    #[serde(default = "default_treatment_column")]
    pub treatment: String,
    /// Explicit covariate columns; omitted means every other column.
    pub covariates: Option<Vec<String>>,
}

fn default_outcome_column() -> String {
    "y".into()
}

fn default_treatment_column() -> String {
    "t".into()
}

/// Loss family for supervised fits, by tag (`leastsquares`, `logistic`,
/// `poisson`, `gamma`, `multinomial:K`).
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSection {
    pub kind: String,
}

/// Network shape shared by every in-run fit.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSection {
    pub hidden: Vec<usize>,
    /// Per-hidden-layer dropout rates (omitted means none).
    pub dropout: Option<Vec<f64>>,
    /// Output clamp bound (omitted means unclamped).
    pub clamp: Option<f64>,
}

/// Optimizer settings; every field falls back to the library default.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    /// What the `train` command fits: `joint` (default), `per-arm`,
    /// `propensity`, or `outcome` (plain regression with `[loss]`).
    pub target: Option<String>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    /// `adam` (default) or `sgd`.
    pub optimizer: Option<String>,
    pub validation_fraction: Option<f64>,
    pub shuffle: Option<bool>,
}

/// Where estimation commands get their nuisance functions: model files
/// trained earlier, or an in-run fit.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NuisanceSection {
    /// Two-head outcome model file (takes precedence over per-arm files).
    pub joint_model: Option<PathBuf>,
    pub mu0_model: Option<PathBuf>,
    pub mu1_model: Option<PathBuf>,
    /// Logistic propensity model file.
    pub propensity_model: Option<PathBuf>,
    /// Known assignment rate (randomized designs).
    pub propensity_rate: Option<f64>,
    /// In-run outcome fit when no model files are given: `joint` (default)
    /// or `per-arm`.
    pub fit: Option<String>,
    /// Fit the propensity in-run when no other source is configured.
    pub fit_propensity: Option<bool>,
}

/// Threshold policies over one covariate.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySection {
    /// 0-based index into the selected covariates.
    pub covariate: usize,
    /// Single cutoff for the `profit` command.
    pub threshold: Option<f64>,
    /// Inclusive grid for the `policy` command.
    pub grid_start: Option<f64>,
    pub grid_stop: Option<f64>,
    pub grid_step: Option<f64>,
    /// Baseline assignment the candidates are compared against:
    /// `none` (default) or `all`.
    pub baseline: Option<String>,
}

/// Synthetic design for `simulate` and `placebo`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpSection {
    pub d: usize,
    pub n: usize,
    /// `constant` (default) or `logistic`.
    pub propensity: Option<String>,
    /// Assignment rate for the constant design (default 0.5).
    pub rate: Option<f64>,
    /// `linear` (default) or `nonlinear`.
    pub outcome: Option<String>,
    pub coef_seed: Option<u64>,
    /// `variance` (default) or `std-dev`.
    pub normal_convention: Option<String>,
    pub noise_sd: Option<f64>,
}

/// Replication study settings.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub reps: Option<usize>,
    /// Outcome nuisances per rep: `oracle`, `joint` (default), `per-arm`.
    pub nuisance: Option<String>,
    /// Propensity per rep: `oracle`, `frequency`, `trained`; the default
    /// follows the design (known rate when constant, trained when
    /// logistic).
    pub propensity: Option<String>,
}

/// Placebo study settings.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlaceboSection {
    /// Probability a control row is labeled placebo-treated (default 0.5).
    pub fraction: Option<f64>,
    pub reps: Option<usize>,
    /// Outcome nuisances: `oracle`, `joint` (default), `per-arm`.
    pub nuisance: Option<String>,
}

/// Fully resolved settings for one run.
#[derive(Debug, Clone)]
pub struct Settings {
    pub command: &'static str,
    pub file: FileConfig,
    pub config_path: Option<PathBuf>,
    pub config_sha256: Option<String>,
    pub seed: u64,
    pub out: PathBuf,
    /// `--reps` override; section defaults apply when absent.
    pub reps_flag: Option<usize>,
    pub randomized: bool,
    pub clip: f64,
    pub margin: f64,
    pub cost: f64,
    pub level: f64,
}

impl Settings {
    /// Loads the config file named by the flags (if any) and applies the
    /// precedence flag > file > default.
    pub fn resolve(command: &'static str, args: &CommonArgs) -> Result<Settings, CliError> {
        let (file, config_path, config_sha256) = match &args.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| {
                    CliError::Config(format!("cannot read {}: {}", path.display(), e))
                })?;
                let parsed: FileConfig = toml::from_str(&text).map_err(|e| {
                    CliError::Config(format!("{}: {}", path.display(), e))
                })?;
                let digest = format!("{:x}", Sha256::digest(text.as_bytes()));
                (parsed, Some(path.clone()), Some(digest))
            }
            None => (FileConfig::default(), None, None),
        };
        Ok(Settings {
            command,
            seed: args.seed.or(file.seed).unwrap_or(0),
            out: args
                .out
                .clone()
                .or_else(|| file.out.clone())
                .unwrap_or_else(|| PathBuf::from("deepinfer-out")),
            reps_flag: args.reps,
            randomized: args.randomized || file.randomized_treatment.unwrap_or(false),
            clip: args.clip_eps.or(file.clip_eps).unwrap_or(NuisanceEstimates::DEFAULT_CLIP),
            margin: args.margin.or(file.margin).unwrap_or(1.0),
            cost: args.cost.or(file.cost).unwrap_or(0.0),
            level: file.level.unwrap_or(0.95),
            file,
            config_path,
            config_sha256,
        })
    }

    pub fn data_section(&self) -> Result<&DataSection, CliError> {
        self.file.data.as_ref().ok_or_else(|| {
            CliError::Config(format!(
                "the {} command needs a [data] section with a csv path",
                self.command
            ))
        })
    }

    pub fn column_roles(section: &DataSection) -> ColumnRoles {
        ColumnRoles {
            outcome: section.outcome.clone(),
            treatment: section.treatment.clone(),
            covariates: match &section.covariates {
                Some(names) => CovariateSelection::Named(names.clone()),
                None => CovariateSelection::AllOthers,
            },
        }
    }

    /// Loss family from `[loss]`, defaulting to least squares.
    pub fn loss_kind(&self) -> Result<LossKind, CliError> {
        match &self.file.loss {
            Some(section) => Ok(LossKind::from_str(&section.kind)?),
            None => Ok(LossKind::LeastSquares),
        }
    }

    /// Hidden widths from `[architecture]`, required for any in-run fit.
    pub fn hidden_widths(&self) -> Result<Vec<usize>, CliError> {
        self.file
            .architecture
            .as_ref()
            .map(|a| a.hidden.clone())
            .ok_or_else(|| {
                CliError::Config(
                    "this run fits a network and needs an [architecture] section \
                     with hidden = [...]"
                        .into(),
                )
            })
    }

    /// Full architecture from `[architecture]` for the given endpoints.
    pub fn architecture(
        &self,
        input_dim: usize,
        output_dim: usize,
    ) -> Result<ArchitectureSpec, CliError> {
        let hidden = self.hidden_widths()?;
        let section = self.file.architecture.as_ref().expect("hidden_widths checked the section");
        let mut spec = ArchitectureSpec::new(input_dim, hidden, output_dim)?;
        if let Some(rates) = &section.dropout {
            spec = spec.with_dropout(rates.clone())?;
        }
        if let Some(bound) = section.clamp {
            spec = spec.with_clamp(bound)?;
        }
        Ok(spec)
    }

    /// Optimizer settings from `[train]` with the given seed.
    pub fn train_config(&self, seed: u64) -> Result<TrainConfig, CliError> {
        let section = self.file.train.clone().unwrap_or_default();
        let mut cfg = TrainConfig { seed, ..TrainConfig::default() };
        if let Some(v) = section.learning_rate {
            cfg.learning_rate = v;
        }
        if let Some(v) = section.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = section.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = section.validation_fraction {
            cfg.validation_fraction = v;
        }
        if let Some(v) = section.shuffle {
            cfg.shuffle = v;
        }
        cfg.optimizer = match section.optimizer.as_deref() {
            None | Some("adam") => Optimizer::default(),
            Some("sgd") => Optimizer::Sgd,
            Some(other) => {
                return Err(CliError::Config(format!(
                    "unknown optimizer '{}', expected adam or sgd",
                    other
                )))
            }
        };
        Ok(cfg)
    }

    /// Synthetic design from `[dgp]`.
    pub fn dgp(&self) -> Result<DgpSpec, CliError> {
        let section = self.file.dgp.as_ref().ok_or_else(|| {
            CliError::Config(format!(
                "the {} command needs a [dgp] section (d, n, ...)",
                self.command
            ))
        })?;
        let propensity = match section.propensity.as_deref() {
            None | Some("constant") => {
                PropensityDesign::Constant(section.rate.unwrap_or(0.5))
            }
            Some("logistic") => PropensityDesign::Logistic,
            Some(other) => {
                return Err(CliError::Config(format!(
                    "unknown propensity design '{}', expected constant or logistic",
                    other
                )))
            }
        };
        let outcome = match section.outcome.as_deref() {
            None | Some("linear") => OutcomeDesign::Linear,
            Some("nonlinear") => OutcomeDesign::Nonlinear,
            Some(other) => {
                return Err(CliError::Config(format!(
                    "unknown outcome design '{}', expected linear or nonlinear",
                    other
                )))
            }
        };
        let normal_convention = match section.normal_convention.as_deref() {
            None | Some("variance") => NormalConvention::Variance,
            Some("std-dev") => NormalConvention::StdDev,
            Some(other) => {
                return Err(CliError::Config(format!(
                    "unknown normal convention '{}', expected variance or std-dev",
                    other
                )))
            }
        };
        Ok(DgpSpec {
            d: section.d,
            n: section.n,
            propensity,
            outcome,
            coef_seed: section.coef_seed.unwrap_or(0),
            normal_convention,
            noise_sd: section.noise_sd.unwrap_or(1.0),
        })
    }
}
