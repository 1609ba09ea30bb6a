//! Named configurations for the benchmark domains.

use mces_core::pruning::{Estimator, PruneOrder};

use crate::config::{Algorithm, DomainChoice, ExperimentConfig, OpponentChoice, PruneChoice};

pub struct Preset {
    pub name: &'static str,
    pub about: &'static str,
    pub build: fn() -> ExperimentConfig,
}

fn prune(phi: f64) -> Option<PruneChoice> {
    Some(PruneChoice { phi, order: PruneOrder::Greedy, estimator: Estimator::Trajectory, warmup: None })
}

fn subject(domain: DomainChoice, algorithm: Algorithm, epsilon: f64, delta: f64, phi: f64) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(domain, algorithm);
    c.epsilon = epsilon;
    c.delta = delta;
    c.pruning = prune(phi);
    c.opponent = OpponentChoice::Cycle;
    c
}

fn team(domain: DomainChoice, epsilon: f64, delta: f64, k_cap: Option<u64>) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(domain, Algorithm::Mcesmp);
    c.epsilon = epsilon;
    c.delta = delta;
    c.k_cap = k_cap;
    c
}

fn crop(algorithm: Algorithm, obs_count: usize, workload: Option<f64>) -> ExperimentConfig {
    ExperimentConfig::new(DomainChoice::Cropfield { obs_count, seasons: 200, workload }, algorithm)
}

pub const PRESETS: &[Preset] = &[
    Preset {
        name: "tiger-competitive",
        about: "subject search on competitive Tiger, eps 0.05, delta 0.1, phi 0.15, T 3",
        build: || subject(DomainChoice::TigerCompetitive, Algorithm::Mcesp, 0.05, 0.1, 0.15),
    },
    Preset {
        name: "tiger-competitive-ip",
        about: "model-binned search on competitive Tiger, same parameters",
        build: || subject(DomainChoice::TigerCompetitive, Algorithm::Mcesip, 0.05, 0.1, 0.15),
    },
    Preset {
        name: "auav",
        about: "subject search on the 3x2 AUAV grid, eps 0.1, delta 0.1, phi 0.2",
        build: || subject(DomainChoice::Auav, Algorithm::Mcesp, 0.1, 0.1, 0.2),
    },
    Preset {
        name: "auav-ip",
        about: "model-binned search on the 3x2 AUAV grid",
        build: || subject(DomainChoice::Auav, Algorithm::Mcesip, 0.1, 0.1, 0.2),
    },
    Preset {
        name: "money-laundering",
        about: "subject search on money laundering, eps 0.1, delta 0.15, phi 0.2",
        build: || subject(DomainChoice::MoneyLaundering, Algorithm::Mcesp, 0.1, 0.15, 0.2),
    },
    Preset {
        name: "money-laundering-ip",
        about: "model-binned search on money laundering",
        build: || subject(DomainChoice::MoneyLaundering, Algorithm::Mcesip, 0.1, 0.15, 0.2),
    },
    Preset {
        name: "tiger-cooperative-T3",
        about: "team search on cooperative Tiger T 3, eps 0.2, k capped at 5000",
        build: || team(DomainChoice::TigerCooperative { horizon: 3 }, 0.2, 0.1, Some(5000)),
    },
    Preset {
        name: "tiger-cooperative-T4",
        about: "team search on cooperative Tiger T 4, eps 0.1, delta 0.15, k capped at 5000",
        build: || team(DomainChoice::TigerCooperative { horizon: 4 }, 0.1, 0.15, Some(5000)),
    },
    Preset {
        name: "firefighting-Z3",
        about: "team search, 3 agents, 4 houses, eps 0.1, delta 0.15, k capped at 2000",
        build: || team(DomainChoice::Firefighting { agents: 3, houses: 4, levels: 3 }, 0.1, 0.15, Some(2000)),
    },
    Preset {
        name: "firefighting-Z4",
        about: "team search, 4 agents, 5 houses, eps 0.15, delta 0.15, k capped at 2000",
        build: || team(DomainChoice::Firefighting { agents: 4, houses: 5, levels: 3 }, 0.15, 0.15, Some(2000)),
    },
    Preset {
        name: "cropfield",
        about: "crop field with the greedy Q baseline, 3 symbols, 200 seasons",
        build: || crop(Algorithm::QBaseline, 3, None),
    },
    Preset {
        name: "cropfield-addf",
        about: "crop field with exploring-starts search, k 500, 3 symbols",
        build: || crop(Algorithm::Addf, 3, None),
    },
    Preset {
        name: "cropfield-heuristic",
        about: "crop field Q baseline with the workload heuristic m 5",
        build: || crop(Algorithm::QBaseline, 3, Some(5.0)),
    },
    Preset {
        name: "cropfield-addf-heuristic",
        about: "crop field exploring-starts search with the workload heuristic m 5",
        build: || crop(Algorithm::Addf, 3, Some(5.0)),
    },
];

pub fn find(name: &str) -> Option<ExperimentConfig> {
    PRESETS.iter().find(|p| p.name == name).map(|p| (p.build)())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_validates() {
        for p in PRESETS {
            (p.build)().validate().unwrap_or_else(|e| panic!("{}: {e}", p.name));
        }
        let t = find("tiger-competitive").unwrap();
        assert_eq!((t.epsilon, t.delta, t.pruning.unwrap().phi), (0.05, 0.1, 0.15));
        assert!(find("nope").is_none());
    }
}
