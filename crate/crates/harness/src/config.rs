//! Experiment configuration, read from TOML.

use std::fmt;

use mces_core::mcesip::Prediction;
use mces_core::mcesmp::Acceptance;
use mces_core::pruning::{Estimator, PruneOrder};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum DomainChoice {
    TigerCompetitive,
    TigerCooperative {
        #[serde(default = "three")]
        horizon: usize,
    },
    Auav,
    MoneyLaundering,
    Firefighting {
        agents: usize,
        houses: usize,
        #[serde(default = "three")]
        levels: usize,
    },
    Cropfield {
        #[serde(default = "three")]
        obs_count: usize,
        #[serde(default = "seasons")]
        seasons: u64,
        /// Workload heuristic `m`; off when absent.
        #[serde(default)]
        workload: Option<f64>,
    },
}

fn three() -> usize {
    3
}

fn seasons() -> u64 {
    200
}

impl DomainChoice {
    pub fn label(&self) -> String {
        match self {
            DomainChoice::TigerCompetitive => "tiger-competitive".into(),
            DomainChoice::TigerCooperative { horizon } => format!("tiger-cooperative-T{horizon}"),
            DomainChoice::Auav => "auav".into(),
            DomainChoice::MoneyLaundering => "money-laundering".into(),
            DomainChoice::Firefighting { agents, houses, levels } => {
                format!("firefighting-Z{agents}-H{houses}-F{levels}")
            }
            DomainChoice::Cropfield { obs_count, workload, .. } => match workload {
                Some(m) => format!("cropfield-O{obs_count}-m{m}"),
                None => format!("cropfield-O{obs_count}"),
            },
        }
    }

    fn is_team(&self) -> bool {
        matches!(self, DomainChoice::TigerCooperative { .. } | DomainChoice::Firefighting { .. })
    }

    fn is_crop(&self) -> bool {
        matches!(self, DomainChoice::Cropfield { .. })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Mcesp,
    Mcesip,
    Mcesmp,
    QBaseline,
    Addf,
}

/// How the opponent of a subject search is chosen per trial.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OpponentChoice {
    /// Trial `t` faces policy `t mod |Π_j|` of the domain's opponent set.
    #[default]
    Cycle,
    /// Every trial faces the uniform mixture over the set.
    Uniform,
    /// Trial `t` faces an equal mixture of policies `t` and `t + 1`.
    Pair,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneChoice {
    pub phi: f64,
    #[serde(default)]
    pub order: PruneOrder,
    #[serde(default)]
    pub estimator: Estimator,
    #[serde(default)]
    pub warmup: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub domain: DomainChoice,
    pub algorithm: Algorithm,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub pruning: Option<PruneChoice>,
    #[serde(default)]
    pub delta_e: f64,
    #[serde(default)]
    pub prediction: Prediction,
    /// Model-binned search: require agreement across opponent-sequence bins.
    #[serde(default)]
    pub strict_bins: bool,
    #[serde(default)]
    pub acceptance: Acceptance,
    #[serde(default)]
    pub opponent: OpponentChoice,
    #[serde(default = "default_trials")]
    pub trials: u64,
    #[serde(default)]
    pub seed: u64,
    /// Ceiling on `k_m`; voids the PAC certificate when it binds.
    #[serde(default)]
    pub k_cap: Option<u64>,
    #[serde(default)]
    pub max_stages: Option<u64>,
    /// Sample bound of the crop-field search layer.
    #[serde(default = "default_crop_k")]
    pub crop_k: u64,
    /// Step size of the crop-field Q baseline; sample average when absent.
    #[serde(default)]
    pub crop_alpha: Option<f64>,
    /// Work-pool width; rayon's default when absent.
    #[serde(default)]
    pub threads: Option<usize>,
}

fn default_epsilon() -> f64 {
    0.2
}

fn default_delta() -> f64 {
    0.1
}

fn default_trials() -> u64 {
    1
}

fn default_crop_k() -> u64 {
    500
}

/// One rejected field and why.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FieldError {
    pub field: &'static str,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigError(pub Vec<FieldError>);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "invalid configuration:")?;
        for e in &self.0 {
            writeln!(f, "  {}: {}", e.field, e.message)?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

impl ExperimentConfig {
    pub fn new(domain: DomainChoice, algorithm: Algorithm) -> Self {
        Self {
            domain,
            algorithm,
            epsilon: default_epsilon(),
            delta: default_delta(),
            pruning: None,
            delta_e: 0.0,
            prediction: Prediction::default(),
            strict_bins: false,
            acceptance: Acceptance::default(),
            opponent: OpponentChoice::default(),
            trials: 1,
            seed: 0,
            k_cap: None,
            max_stages: None,
            crop_k: default_crop_k(),
            crop_alpha: None,
            threads: None,
        }
    }

    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errs = Vec::new();
        let mut bad = |field, message: &str| errs.push(FieldError { field, message: message.into() });
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            bad("epsilon", "must be positive");
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            bad("delta", "must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.delta_e) {
            bad("delta_e", "must lie in [0, 1]");
        }
        if self.trials == 0 {
            bad("trials", "must be at least 1");
        }
        if self.k_cap == Some(0) {
            bad("k_cap", "must be positive");
        }
        if self.threads == Some(0) {
            bad("threads", "must be positive");
        }
        if let Some(p) = &self.pruning {
            if !(p.phi >= 0.0 && p.phi <= 1.0) {
                bad("pruning.phi", "must lie in [0, 1]");
            }
        }
        let fits = match self.algorithm {
            Algorithm::Mcesp | Algorithm::Mcesip => !self.domain.is_team() && !self.domain.is_crop(),
            Algorithm::Mcesmp => self.domain.is_team(),
            Algorithm::QBaseline | Algorithm::Addf => self.domain.is_crop(),
        };
        if !fits {
            bad("algorithm", &format!("{:?} does not run on {}", self.algorithm, self.domain.label()));
        }
        match &self.domain {
            DomainChoice::TigerCooperative { horizon } if !(1..=6).contains(horizon) => {
                bad("domain.horizon", "must lie in 1..=6");
            }
            DomainChoice::Firefighting { agents, houses, levels } => {
                if *agents < 2 || *houses < 2 || *levels < 2 {
                    bad("domain", "firefighting needs at least 2 agents, 2 houses and 2 fire levels");
                }
            }
            DomainChoice::Cropfield { obs_count, seasons, workload } => {
                if *obs_count != 3 && *obs_count != 5 {
                    bad("domain.obs_count", "must be 3 or 5");
                }
                if *seasons == 0 {
                    bad("domain.seasons", "must be at least 1");
                }
                if workload.is_some_and(|m| !(m > 0.0)) {
                    bad("domain.workload", "must be positive");
                }
                if self.crop_alpha.is_some_and(|a| !(a > 0.0 && a <= 1.0)) {
                    bad("crop_alpha", "must lie in (0, 1]");
                }
                if self.crop_k == 0 {
                    bad("crop_k", "must be positive");
                }
            }
            _ => {}
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ConfigError(errs))
        }
    }

    /// The cap binds somewhere, so the PAC guarantee does not hold.
    pub fn certificate_void(&self) -> bool {
        self.k_cap.is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_roundtrip() {
        let mut c = ExperimentConfig::new(DomainChoice::TigerCompetitive, Algorithm::Mcesip);
        c.pruning = Some(PruneChoice { phi: 0.15, order: PruneOrder::Greedy, estimator: Estimator::Visit, warmup: None });
        c.k_cap = Some(100);
        let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn minimal_file() {
        let c = ExperimentConfig::from_toml("algorithm = \"mcesmp\"\n[domain]\nname = \"tiger-cooperative\"\n")
            .unwrap();
        assert_eq!(c.domain, DomainChoice::TigerCooperative { horizon: 3 });
        assert_eq!(c.epsilon, 0.2);
    }

    #[test]
    fn diagnostics_name_fields() {
        let mut c = ExperimentConfig::new(DomainChoice::Auav, Algorithm::Mcesmp);
        c.delta = 1.5;
        c.trials = 0;
        let e = c.validate().unwrap_err();
        let fields: Vec<_> = e.0.iter().map(|f| f.field).collect();
        assert_eq!(fields, vec!["delta", "trials", "algorithm"]);
        assert!(e.to_string().contains("delta: must lie in (0, 1)"));
    }
}
