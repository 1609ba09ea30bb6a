//! Trial execution and per-trial records.

use std::collections::BTreeMap;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use mces_core::cropfield::{CropConfig, CropTeam, LearnerKind};
use mces_core::domains::{
    auav_prey_policies, laundering_red_policies, make_auav, make_firefighting, make_money_laundering,
    make_tiger_competitive, make_tiger_cooperative, tiger_opponent_policies,
};
use mces_core::mcesip::{IpConfig, McesipLearner, ModelSet};
use mces_core::mcesmp::{JointRunResult, McesmpLearner, TeamConfig};
use mces_core::mcesp::{Event, McespLearner, PruningSettings, RunResult, SearchConfig};
use mces_core::oracle::{epsilon_local_check, exact_joint_values, exact_policy_value, joint_epsilon_local_check};
use mces_core::pruning::PrunedEntry;
use mces_core::{DomainSpec, OpponentExecutor, PolicyView, ReactivePolicy, Simulator};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Algorithm, DomainChoice, ExperimentConfig, OpponentChoice};

/// One row of `trials.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRow {
    pub trial: u64,
    pub stage: u64,
    /// History id; joint histories are written as `h0+h1+…`.
    pub seq_id: String,
    pub action: String,
    pub samples: u64,
    pub k_m: u64,
    pub q_candidate: Option<f64>,
    pub q_incumbent: Option<f64>,
    /// Exact value of the policy in force after the stage, when enumerable.
    pub oracle_value: Option<f64>,
    pub event: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrunedRecord {
    pub trial: u64,
    pub agent: usize,
    pub entries: Vec<PrunedEntry>,
}

#[derive(Clone, Debug)]
pub struct TrialOutput {
    pub trial: u64,
    pub rows: Vec<StageRow>,
    pub metrics: BTreeMap<String, f64>,
    pub pruned: Vec<PrunedRecord>,
    /// Final policy tables, one string per agent.
    pub policies: Vec<String>,
    pub termination: String,
    pub wall_secs: f64,
}

/// Independent stream per trial: the master seed picks the key, the trial
/// index the stream.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

pub fn build_domain(choice: &DomainChoice) -> Option<DomainSpec> {
    Some(match choice {
        DomainChoice::TigerCompetitive => make_tiger_competitive(),
        DomainChoice::TigerCooperative { horizon } => make_tiger_cooperative(*horizon),
        DomainChoice::Auav => make_auav(),
        DomainChoice::MoneyLaundering => make_money_laundering(),
        DomainChoice::Firefighting { agents, houses, levels } => make_firefighting(*agents, *houses, *levels),
        DomainChoice::Cropfield { .. } => return None,
    })
}

pub fn opponent_set(choice: &DomainChoice) -> Vec<ReactivePolicy> {
    match choice {
        DomainChoice::TigerCompetitive => tiger_opponent_policies(),
        DomainChoice::Auav => auav_prey_policies(),
        DomainChoice::MoneyLaundering => laundering_red_policies(),
        _ => Vec::new(),
    }
}

pub fn opponent_for(cfg: &ExperimentConfig, trial: u64) -> Result<OpponentExecutor> {
    let set = opponent_set(&cfg.domain);
    if set.is_empty() {
        bail!("{} has no opponent set", cfg.domain.label());
    }
    let n = set.len() as u64;
    Ok(match cfg.opponent {
        OpponentChoice::Cycle => OpponentExecutor::fixed(set[(trial % n) as usize].clone()),
        OpponentChoice::Uniform => OpponentExecutor::uniform(set)?,
        OpponentChoice::Pair => {
            let a = set[(trial % n) as usize].clone();
            let b = set[((trial + 1) % n) as usize].clone();
            OpponentExecutor::mixture(vec![a, b], vec![0.5, 0.5])?
        }
    })
}

pub fn search_config(cfg: &ExperimentConfig) -> SearchConfig {
    let mut s = SearchConfig::new(cfg.epsilon, cfg.delta);
    s.k_cap = cfg.k_cap;
    if let Some(m) = cfg.max_stages {
        s.max_stages = m;
    }
    s.pruning = pruning_settings(cfg);
    s
}

fn pruning_settings(cfg: &ExperimentConfig) -> Option<PruningSettings> {
    cfg.pruning.as_ref().map(|p| {
        let mut s = PruningSettings::new(p.phi);
        s.order = p.order;
        s.estimator = p.estimator;
        s.warmup = p.warmup;
        s
    })
}

pub fn team_config(cfg: &ExperimentConfig) -> TeamConfig {
    let mut t = TeamConfig::new(cfg.epsilon, cfg.delta);
    t.k_cap = cfg.k_cap;
    t.acceptance = cfg.acceptance;
    if let Some(m) = cfg.max_stages {
        t.max_stages = m;
    }
    t.pruning = pruning_settings(cfg);
    t
}

fn table_string(p: &ReactivePolicy) -> String {
    p.table().iter().map(|a| a.to_string()).collect::<Vec<_>>().join("")
}

fn event_name(e: Event) -> String {
    serde_json::to_value(e).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

/// Per-step normalized value `(V − T·R_min)/(R_max − R_min)`.
pub fn normalized_value(domain: &DomainSpec, agent: usize, raw: f64) -> f64 {
    let (lo, hi) = domain.reward_bounds[agent];
    (raw - domain.horizon as f64 * lo) / (hi - lo)
}

pub fn run_trial(cfg: &ExperimentConfig, trial: u64) -> Result<TrialOutput> {
    let start = Instant::now();
    let mut rng = trial_rng(cfg.seed, trial);
    let mut out = match cfg.algorithm {
        Algorithm::Mcesp | Algorithm::Mcesip => subject_trial(cfg, trial, &mut rng)?,
        Algorithm::Mcesmp => team_trial(cfg, trial, &mut rng)?,
        Algorithm::QBaseline | Algorithm::Addf => crop_trial(cfg, trial, &mut rng)?,
    };
    out.wall_secs = start.elapsed().as_secs_f64();
    Ok(out)
}

fn subject_trial(cfg: &ExperimentConfig, trial: u64, rng: &mut ChaCha8Rng) -> Result<TrialOutput> {
    let domain = build_domain(&cfg.domain).context("subject search needs a simulated domain")?;
    let sim = Simulator::new(&domain)?;
    let opponent = opponent_for(cfg, trial)?;
    let initial = ReactivePolicy::random(*sim.tree(0), domain.action_count(0) as u16, rng);
    let search = search_config(cfg);
    let result = if cfg.algorithm == Algorithm::Mcesip {
        let models = ModelSet::new(&domain, opponent_set(&cfg.domain))?;
        let mut ip = IpConfig::new(cfg.epsilon, cfg.delta);
        ip.search = search;
        ip.delta_e = cfg.delta_e;
        ip.prediction = cfg.prediction;
        ip.strict = cfg.strict_bins;
        McesipLearner::new(&sim, &opponent, models, initial, ip)?.run(rng)?
    } else {
        McespLearner::new(&sim, &opponent, initial, search)?.run(rng)?
    };
    subject_output(cfg, trial, &domain, &opponent, &result)
}

/// Stage rows and metrics of a subject run; values come from enumeration.
pub fn subject_output(
    cfg: &ExperimentConfig,
    trial: u64,
    domain: &DomainSpec,
    opponent: &OpponentExecutor,
    result: &RunResult,
) -> Result<TrialOutput> {
    let enumerable = domain.enumerable;
    let value = |p: &ReactivePolicy| -> Result<Option<f64>> {
        Ok(if enumerable { Some(exact_policy_value(domain, p.view(), opponent)?.value) } else { None })
    };
    let mut policy = result.initial_policy.clone();
    let initial_value = value(&policy)?;
    let mut prev = initial_value;
    let mut up = 0u64;
    let mut rows = Vec::with_capacity(result.records.len());
    for r in &result.records {
        if r.event == Event::Transform {
            policy.set(r.seq_id, r.action);
            let v = value(&policy)?;
            if let (Some(a), Some(b)) = (prev, v) {
                if b > a {
                    up += 1;
                }
            }
            prev = v;
        }
        rows.push(StageRow {
            trial,
            stage: r.stage,
            seq_id: r.seq_id.to_string(),
            action: r.action.to_string(),
            samples: r.samples,
            k_m: r.k_m,
            q_candidate: finite(r.q_candidate),
            q_incumbent: finite(r.q_incumbent),
            oracle_value: prev,
            event: event_name(r.event),
        });
    }
    let tree = result.policy.tree();
    let unpruned = tree.len() - result.pruned.len();
    let mut m = BTreeMap::new();
    m.insert("transforms".into(), result.transforms as f64);
    m.insert("samples".into(), result.total_samples as f64);
    m.insert("trajectories".into(), result.total_trajectories as f64);
    m.insert("samples_per_transform".into(), result.samples_per_transform());
    m.insert("converged".into(), (result.event == Event::Converged) as u8 as f64);
    m.insert("k_capped".into(), result.k_capped as u8 as f64);
    m.insert("unpruned_histories".into(), unpruned as f64);
    m.insert(
        "pruned_neighborhood".into(),
        (domain.action_count(0) * unpruned) as f64 - 1.0,
    );
    if let (Some(v0), Some(v1)) = (initial_value, prev) {
        m.insert("initial_value".into(), v0);
        m.insert("final_value".into(), v1);
        m.insert("initial_value_normalized".into(), normalized_value(domain, 0, v0));
        m.insert("final_value_normalized".into(), normalized_value(domain, 0, v1));
        m.insert("improving_transforms".into(), up as f64);
        let (lo, hi) = domain.reward_bounds[0];
        let eps_raw = if search_config(cfg).normalize_rewards { cfg.epsilon * (hi - lo) } else { cfg.epsilon };
        let check = epsilon_local_check(domain, &result.policy, opponent, eps_raw)?;
        m.insert("epsilon_local".into(), check.holds as u8 as f64);
    }
    Ok(TrialOutput {
        trial,
        rows,
        metrics: m,
        pruned: vec![PrunedRecord { trial, agent: 0, entries: result.pruned.clone() }],
        policies: vec![table_string(&result.policy)],
        termination: event_name(result.event),
        wall_secs: 0.0,
    })
}

fn team_trial(cfg: &ExperimentConfig, trial: u64, rng: &mut ChaCha8Rng) -> Result<TrialOutput> {
    let domain = build_domain(&cfg.domain).context("team search needs a simulated domain")?;
    let sim = Simulator::new(&domain)?;
    let initial: Vec<ReactivePolicy> = (0..domain.agent_count())
        .map(|i| ReactivePolicy::random(*sim.tree(i), domain.action_count(i) as u16, rng))
        .collect();
    let result = McesmpLearner::new(&sim, initial, team_config(cfg))?.run(rng)?;
    team_output(cfg, trial, &domain, &result)
}

pub fn team_output(
    cfg: &ExperimentConfig,
    trial: u64,
    domain: &DomainSpec,
    result: &JointRunResult,
) -> Result<TrialOutput> {
    let enumerable = domain.enumerable;
    let value = |ps: &[ReactivePolicy]| -> Result<Option<Vec<f64>>> {
        if !enumerable {
            return Ok(None);
        }
        let views: Vec<PolicyView<'_>> = ps.iter().map(|p| p.view()).collect();
        Ok(Some(exact_joint_values(domain, &views)?))
    };
    let mut policies = result.initial_policies.clone();
    let initial_value = value(&policies)?;
    let mut prev = initial_value.clone();
    let mut both_up = 0u64;
    let join = |xs: &[u32]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("+");
    let mut rows = Vec::new();
    for r in &result.records {
        if r.event == Event::Transform {
            for (i, p) in policies.iter_mut().enumerate() {
                p.set(r.histories[i], r.actions[i]);
            }
            let v = value(&policies)?;
            if let (Some(a), Some(b)) = (&prev, &v) {
                if a.iter().zip(b).all(|(x, y)| y > x) {
                    both_up += 1;
                }
            }
            prev = v;
        }
        rows.push(StageRow {
            trial,
            stage: r.stage,
            seq_id: join(&r.histories),
            action: join(&r.actions.iter().map(|&a| a as u32).collect::<Vec<_>>()),
            samples: r.samples,
            k_m: r.k_m,
            q_candidate: r.q_candidate.first().copied().and_then(finite),
            q_incumbent: r.q_incumbent.first().copied().and_then(finite),
            oracle_value: prev.as_ref().map(|v| v[0]),
            event: event_name(r.event),
        });
    }
    let mut m = BTreeMap::new();
    m.insert("transforms".into(), result.transforms as f64);
    m.insert("samples".into(), result.total_samples as f64);
    m.insert("trajectories".into(), result.total_trajectories as f64);
    m.insert("samples_per_transform".into(), result.samples_per_transform());
    m.insert("converged".into(), (result.event == Event::Converged) as u8 as f64);
    m.insert("k_capped".into(), result.k_capped as u8 as f64);
    if let (Some(v0), Some(v1)) = (initial_value, prev) {
        m.insert("initial_value".into(), v0[0]);
        m.insert("final_value".into(), v1[0]);
        m.insert("initial_value_normalized".into(), normalized_value(domain, 0, v0[0]));
        m.insert("final_value_normalized".into(), normalized_value(domain, 0, v1[0]));
        m.insert("transforms_improving_all".into(), both_up as f64);
        let (lo, hi) = domain.reward_bounds[0];
        let eps_raw = if team_config(cfg).normalize_rewards { cfg.epsilon * (hi - lo) } else { cfg.epsilon };
        let (holds, _) = joint_epsilon_local_check(domain, &result.policies, eps_raw)?;
        m.insert("epsilon_local".into(), holds as u8 as f64);
    }
    Ok(TrialOutput {
        trial,
        rows,
        metrics: m,
        pruned: result
            .pruned
            .iter()
            .enumerate()
            .map(|(agent, e)| PrunedRecord { trial, agent, entries: e.clone() })
            .collect(),
        policies: result.policies.iter().map(table_string).collect(),
        termination: event_name(result.event),
        wall_secs: 0.0,
    })
}

pub fn crop_config(cfg: &ExperimentConfig) -> Result<(CropConfig, u64)> {
    let DomainChoice::Cropfield { obs_count, seasons, workload } = cfg.domain else {
        bail!("crop learners run only on the crop field");
    };
    let learner = match cfg.algorithm {
        Algorithm::QBaseline => LearnerKind::QBaseline { alpha: cfg.crop_alpha },
        Algorithm::Addf => LearnerKind::Addf { k: cfg.crop_k, epsilon: cfg.epsilon, delta: cfg.delta },
        other => bail!("{other:?} is not a crop learner"),
    };
    let mut c = CropConfig::new(obs_count, learner);
    c.workload = workload;
    Ok((c, seasons))
}

fn crop_trial(cfg: &ExperimentConfig, trial: u64, rng: &mut ChaCha8Rng) -> Result<TrialOutput> {
    let (c, seasons) = crop_config(cfg)?;
    let mut team = CropTeam::new(c, rng)?;
    let r = team.run(seasons, rng)?;
    let mut all = r.fast.clone();
    all.merge(&r.slow);
    let mut m = BTreeMap::new();
    m.insert("fast_accuracy".into(), 100.0 * r.fast.accuracy());
    if r.slow.total() > 0 {
        m.insert("slow_accuracy".into(), 100.0 * r.slow.accuracy());
    }
    m.insert("overall_accuracy".into(), 100.0 * all.accuracy());
    m.insert("active_days".into(), r.mean_active_days());
    m.insert("calls_per_season".into(), r.calls_per_season());
    m.insert("forwarded_rejections".into(), r.forwarded_rejections as f64);
    let row = StageRow {
        trial,
        stage: r.seasons,
        seq_id: String::new(),
        action: String::new(),
        samples: r.fast.total() + r.slow.total(),
        k_m: cfg.crop_k,
        q_candidate: None,
        q_incumbent: None,
        oracle_value: None,
        event: "seasons-complete".into(),
    };
    Ok(TrialOutput {
        trial,
        rows: vec![row],
        metrics: m,
        pruned: Vec::new(),
        policies: Vec::new(),
        termination: "seasons-complete".into(),
        wall_secs: 0.0,
    })
}
