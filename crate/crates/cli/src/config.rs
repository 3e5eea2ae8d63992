//! Experiment configuration: a flat TOML file plus `--set key=value`
//! overrides, resolved into the core configs per sweep value and trial.

use anyhow::{anyhow, bail, Context, Result};
use ltce_core::nuisance::{Activation, LogisticConfig, TrainConfig};
use ltce_core::balance::BalanceConfig;
use ltce_core::{DgpConfig, DgpStyle, EstimatorConfig, Method, MissingMechanism, RegressorSpec};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    Gamma,
    C,
    Lambda,
    Stages,
}

impl SweepAxis {
    pub fn tag(&self) -> &'static str {
        match self {
            SweepAxis::Gamma => "gamma",
            SweepAxis::C => "c",
            SweepAxis::Lambda => "lambda",
            SweepAxis::Stages => "stages",
        }
    }
}

impl FromStr for SweepAxis {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gamma" => Ok(SweepAxis::Gamma),
            "c" => Ok(SweepAxis::C),
            "lambda" => Ok(SweepAxis::Lambda),
            "stages" => Ok(SweepAxis::Stages),
            other => bail!("unknown sweep axis `{other}`"),
        }
    }
}

/// Where covariates (and optionally treatments) come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum CovariateSource {
    Synthetic,
    /// Covariate CSV; a column named `a`, when present, supplies the
    /// treatment and the remaining columns are features.
    Csv(String),
}

fn default_style() -> String {
    "continuous".into()
}
fn default_n() -> usize {
    1000
}
fn default_p() -> usize {
    10
}
fn default_stages() -> usize {
    3
}
fn default_c1() -> f64 {
    5.0
}
fn default_c2() -> f64 {
    2.0
}
fn default_gamma() -> f64 {
    0.15
}
fn default_missing() -> String {
    "score-rank".into()
}
fn default_strength() -> f64 {
    1.0
}
fn default_coef_scale() -> f64 {
    0.5
}
fn default_treatment_intercept() -> f64 {
    0.0
}
fn default_cate_draws() -> usize {
    2000
}
fn default_covariates() -> String {
    "synthetic".into()
}
fn default_methods() -> Vec<String> {
    Method::ALL.iter().map(|m| m.tag().to_string()).collect()
}
fn default_trials() -> usize {
    20
}
fn default_sweep_axis() -> String {
    "gamma".into()
}
fn default_sweep_values() -> Vec<f64> {
    vec![default_gamma()]
}
fn default_regressor() -> String {
    "net".into()
}
fn default_nuisances() -> String {
    "estimated".into()
}
fn default_lr() -> f64 {
    0.005
}
fn default_max_epochs() -> usize {
    500
}
fn default_patience() -> usize {
    10
}
fn default_val_fraction() -> f64 {
    0.2
}
fn default_eps_clip() -> f64 {
    0.01
}
fn default_hidden() -> Vec<usize> {
    vec![50, 25]
}
fn default_activation() -> String {
    "relu".into()
}
fn default_lambda() -> f64 {
    1.0
}
fn default_d_rep() -> usize {
    32
}
fn default_head_hidden() -> usize {
    25
}

/// Flat on-disk experiment description. Field defaults follow the
/// benchmark protocol; anything can be overridden per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_style")]
    pub style: String,
    #[serde(default = "default_covariates")]
    pub covariates: String,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_p")]
    pub p: usize,
    #[serde(default = "default_stages")]
    pub stages: usize,
    #[serde(default = "default_c1")]
    pub c1: f64,
    #[serde(default = "default_c2")]
    pub c2: f64,
    #[serde(default)]
    pub mu0: Option<f64>,
    #[serde(default)]
    pub mu1: Option<f64>,
    #[serde(default)]
    pub sigma0: Option<f64>,
    #[serde(default)]
    pub sigma1: Option<f64>,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_missing")]
    pub missing: String,
    #[serde(default = "default_strength")]
    pub sequential_strength: f64,
    #[serde(default = "default_coef_scale")]
    pub treatment_coef_scale: f64,
    #[serde(default = "default_treatment_intercept")]
    pub treatment_intercept: f64,
    #[serde(default = "default_cate_draws")]
    pub cate_draws: usize,
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_sweep_axis")]
    pub sweep_axis: String,
    #[serde(default = "default_sweep_values")]
    pub sweep_values: Vec<f64>,
    #[serde(default = "default_regressor")]
    pub regressor: String,
    /// `estimated` fits nuisances per trial; `oracle` injects the true
    /// scores (requires the sequential missing mechanism).
    #[serde(default = "default_nuisances")]
    pub nuisances: String,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    #[serde(default = "default_eps_clip")]
    pub eps_clip: f64,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: String,
    #[serde(default = "default_lambda")]
    pub lambda1: f64,
    #[serde(default = "default_lambda")]
    pub lambda2: f64,
    #[serde(default = "default_d_rep")]
    pub d_rep: usize,
    #[serde(default = "default_head_hidden")]
    pub head_hidden: usize,
    #[serde(default)]
    pub seqmsm_observed_feed: bool,
    #[serde(default)]
    pub jobs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        toml::from_str("").expect("all fields have defaults")
    }
}

impl ExperimentConfig {
    /// Loads the TOML file, applies `key=value` overrides, then the
    /// `LTCE_SEED` environment variable (when set) on top.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text, overrides)
    }

    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().context("parsing config TOML")?;
        for ov in overrides {
            let (key, value) = ov
                .split_once('=')
                .ok_or_else(|| anyhow!("override `{ov}` is not key=value"))?;
            // Bare scalars are not TOML documents; wrap, parse, unwrap.
            let wrapped: toml::Table = format!("v = {value}")
                .parse()
                .or_else(|_: toml::de::Error| format!("v = \"{value}\"").parse())
                .with_context(|| format!("parsing override value `{value}`"))?;
            table.insert(key.trim().to_string(), wrapped["v"].clone());
        }
        let mut cfg: ExperimentConfig = table.try_into().context("resolving config fields")?;
        if let Ok(seed) = std::env::var("LTCE_SEED") {
            cfg.master_seed = seed
                .parse()
                .context("LTCE_SEED must be an unsigned integer")?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials < 1 {
            bail!("trials must be >= 1");
        }
        if self.sweep_values.is_empty() {
            bail!("sweep_values must be non-empty");
        }
        self.style()?;
        self.sweep_axis()?;
        self.covariate_source()?;
        self.method_list()?;
        self.regressor_spec()?;
        if self.sweep_axis()? == SweepAxis::Stages {
            for v in &self.sweep_values {
                if v.fract() != 0.0 || *v < 2.0 {
                    bail!("stage sweep values must be integers >= 2, got {v}");
                }
            }
        }
        if self.sweep_axis()? == SweepAxis::Gamma {
            for v in &self.sweep_values {
                if !(0.0..1.0).contains(v) {
                    bail!("gamma sweep values must lie in [0,1), got {v}");
                }
            }
        }
        match self.nuisances.as_str() {
            "estimated" => {}
            "oracle" => {
                if self.missing_mechanism()? == MissingMechanism::ScoreRank {
                    bail!("oracle nuisances require missing = \"sequential\"");
                }
            }
            other => bail!("nuisances must be `estimated` or `oracle`, got `{other}`"),
        }
        Ok(())
    }

    pub fn style(&self) -> Result<DgpStyle> {
        match self.style.as_str() {
            "continuous" => Ok(DgpStyle::Continuous),
            "binary-mix" => Ok(DgpStyle::BinaryMix),
            other => bail!("unknown style `{other}`"),
        }
    }

    pub fn sweep_axis(&self) -> Result<SweepAxis> {
        self.sweep_axis.parse()
    }

    pub fn missing_mechanism(&self) -> Result<MissingMechanism> {
        match self.missing.as_str() {
            "score-rank" => Ok(MissingMechanism::ScoreRank),
            "sequential" => Ok(MissingMechanism::SequentialLogistic {
                strength: self.sequential_strength,
            }),
            other => bail!("unknown missing mechanism `{other}`"),
        }
    }

    pub fn covariate_source(&self) -> Result<CovariateSource> {
        if self.covariates == "synthetic" {
            Ok(CovariateSource::Synthetic)
        } else if let Some(path) = self.covariates.strip_prefix("csv:") {
            Ok(CovariateSource::Csv(path.to_string()))
        } else {
            bail!("covariates must be `synthetic` or `csv:<path>`");
        }
    }

    pub fn method_list(&self) -> Result<Vec<Method>> {
        self.methods
            .iter()
            .map(|m| m.parse::<Method>().map_err(|e| anyhow!("{e}")))
            .collect()
    }

    pub fn regressor_spec(&self) -> Result<RegressorSpec> {
        match self.regressor.as_str() {
            "net" => Ok(RegressorSpec::Net),
            "linear" => Ok(RegressorSpec::Linear),
            "mean-only" => Ok(RegressorSpec::MeanOnly),
            other => bail!("unknown regressor `{other}`"),
        }
    }

    fn activation(&self) -> Result<Activation> {
        match self.activation.as_str() {
            "relu" => Ok(Activation::Relu),
            "elu" => Ok(Activation::Elu),
            other => bail!("unknown activation `{other}`"),
        }
    }

    pub fn use_oracle_nuisances(&self) -> bool {
        self.nuisances == "oracle"
    }

    /// Data-generator config for one sweep value and trial seed.
    pub fn dgp_config(&self, axis: SweepAxis, value: f64, seed: u64) -> Result<DgpConfig> {
        let style = self.style()?;
        let mut cfg = match style {
            DgpStyle::Continuous => DgpConfig::continuous(self.n, self.p, self.stages, seed),
            DgpStyle::BinaryMix => DgpConfig::binary_mix(self.n, self.p, self.stages, seed),
        };
        cfg.c1 = self.c1;
        cfg.c2 = self.c2;
        if let Some(v) = self.mu0 {
            cfg.mu0 = v;
        }
        if let Some(v) = self.mu1 {
            cfg.mu1 = v;
        }
        if let Some(v) = self.sigma0 {
            cfg.sigma0 = v;
        }
        if let Some(v) = self.sigma1 {
            cfg.sigma1 = v;
        }
        cfg.gamma = self.gamma;
        cfg.missing = self.missing_mechanism()?;
        cfg.treatment_coef_scale = self.treatment_coef_scale;
        cfg.treatment_intercept = self.treatment_intercept;
        cfg.cate_draws = self.cate_draws;
        match axis {
            SweepAxis::Gamma => cfg.gamma = value,
            SweepAxis::C => match style {
                DgpStyle::Continuous => cfg.c1 = value,
                DgpStyle::BinaryMix => cfg.c2 = value,
            },
            SweepAxis::Lambda => {}
            SweepAxis::Stages => cfg.stages = value as usize,
        }
        Ok(cfg)
    }

    /// Estimator config for one sweep value and trial seed.
    pub fn estimator_config(&self, axis: SweepAxis, value: f64, seed: u64) -> Result<EstimatorConfig> {
        let train = TrainConfig {
            learning_rate: self.learning_rate,
            max_epochs: self.max_epochs,
            patience: self.patience,
            val_fraction: self.val_fraction,
            eps_clip: self.eps_clip,
            hidden: self.hidden.clone(),
            activation: self.activation()?,
            ..TrainConfig::default()
        };
        let (lambda1, lambda2) = if axis == SweepAxis::Lambda {
            (value, value)
        } else {
            (self.lambda1, self.lambda2)
        };
        let balance = BalanceConfig {
            lambda1,
            lambda2,
            d_rep: self.d_rep,
            head_hidden: self.head_hidden,
            train: TrainConfig {
                activation: Activation::Elu,
                ..train.clone()
            },
        };
        Ok(EstimatorConfig {
            regressor: self.regressor_spec()?,
            train,
            balance,
            seqmsm_observed_feed: self.seqmsm_observed_feed,
            seed,
        })
    }

    pub fn logistic_config(&self) -> LogisticConfig {
        LogisticConfig {
            eps_clip: self.eps_clip,
            ..LogisticConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_and_validate() {
        let cfg = ExperimentConfig::from_toml("", &[]).unwrap();
        assert_eq!(cfg.trials, 20);
        assert_eq!(cfg.method_list().unwrap().len(), 7);
    }

    #[test]
    fn overrides_replace_values() {
        let cfg = ExperimentConfig::from_toml(
            "n = 100\ntrials = 2\n",
            &["n=500".into(), "style=binary-mix".into()],
        )
        .unwrap();
        assert_eq!(cfg.n, 500);
        assert_eq!(cfg.style().unwrap(), DgpStyle::BinaryMix);
        assert_eq!(cfg.trials, 2);
    }

    #[test]
    fn lambda_axis_sets_both_penalties() {
        let cfg = ExperimentConfig::from_toml("sweep_axis = \"lambda\"\nsweep_values = [0.2]\n", &[])
            .unwrap();
        let est = cfg
            .estimator_config(SweepAxis::Lambda, 5.0, 1)
            .unwrap();
        assert_eq!(est.balance.lambda1, 5.0);
        assert_eq!(est.balance.lambda2, 5.0);
    }

    #[test]
    fn oracle_requires_sequential_missing() {
        let err = ExperimentConfig::from_toml("nuisances = \"oracle\"\n", &[]).unwrap_err();
        assert!(err.to_string().contains("sequential"));
        assert!(ExperimentConfig::from_toml(
            "nuisances = \"oracle\"\nmissing = \"sequential\"\n",
            &[]
        )
        .is_ok());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml("no_such_knob = 1\n", &[]).is_err());
    }
}
