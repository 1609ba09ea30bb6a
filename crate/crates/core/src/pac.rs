//! Closed-form PAC quantities: stage error budgets, Λ ranges, sample bounds
//! `k_m` and the comparison thresholds `ε(m, p, q, k)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PacConfig<S> {
    pub epsilon: S,
    pub delta: S,
    pub horizon: usize,
    pub agent_count: usize,
    pub neighborhood: u64,
    pub reward_min: S,
    pub reward_max: S,
}

impl<S: Scalar> PacConfig<S> {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > S::zero()) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if !(self.delta > S::zero() && self.delta < S::one()) {
            return Err(Error::Config("delta must lie in (0, 1)".into()));
        }
        if self.horizon == 0 || self.agent_count == 0 || self.neighborhood == 0 {
            return Err(Error::Config("horizon, agent count and neighborhood must be positive".into()));
        }
        if !(self.reward_max >= self.reward_min) {
            return Err(Error::Config("reward_max below reward_min".into()));
        }
        Ok(())
    }

    pub fn reward_range(&self) -> S {
        self.reward_max - self.reward_min
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LambdaKind {
    PolicyPair,
    PerActionSequence,
    Complement,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaBound<S> {
    pub value: S,
    pub kind: LambdaKind,
}

/// Comparison threshold; `Unbounded` is the `+∞` branch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Threshold<S> {
    Finite(S),
    Unbounded,
}

impl<S: Scalar> Threshold<S> {
    pub fn is_finite(&self) -> bool {
        matches!(self, Threshold::Finite(_))
    }

    pub fn value(&self) -> Option<S> {
        match *self {
            Threshold::Finite(v) => Some(v),
            Threshold::Unbounded => None,
        }
    }

    /// Finite stand-in for `+∞`: `2Λ` exceeds any attainable Q difference.
    pub fn or_sentinel(&self, lambda: S) -> S {
        self.value().unwrap_or(lambda + lambda)
    }

    /// Strict transform test `diff > ε(·)`.
    pub fn exceeded_by(&self, diff: S) -> bool {
        match *self {
            Threshold::Finite(t) => diff > t,
            Threshold::Unbounded => false,
        }
    }

    /// Early-termination test `diff < ε − ε(·)`.
    pub fn certifies(&self, diff: S, epsilon: S) -> bool {
        match *self {
            Threshold::Finite(t) => diff < epsilon - t,
            Threshold::Unbounded => false,
        }
    }
}

/// `6δ / (π² m²)`; sums to `δ` over all stages.
pub fn delta_m<S: Scalar>(delta: S, stage: u64) -> Result<S> {
    if stage == 0 {
        return Err(Error::ZeroStage);
    }
    let m = S::of_u64(stage);
    Ok(S::of(6.0) * delta / (S::PI() * S::PI() * m * m))
}

/// `2T(R_max − R_min)`.
pub fn lambda_mcesp<S: Scalar>(cfg: &PacConfig<S>) -> LambdaBound<S> {
    let two = S::of(2.0);
    LambdaBound {
        value: two * S::of_u64(cfg.horizon as u64) * cfg.reward_range(),
        kind: LambdaKind::PolicyPair,
    }
}

fn ceil_count<S: Scalar>(x: S) -> u64 {
    let c = x.ceil();
    if !(c >= S::one()) {
        1
    } else {
        c.to_u64().unwrap_or(u64::MAX)
    }
}

/// `⌈2(Λ/ε)² ln(2N/δ_m)⌉`, with `Λ = 0` giving 1.
pub fn k_m_mcesp<S: Scalar>(lambda: &LambdaBound<S>, cfg: &PacConfig<S>, delta_m: S) -> u64 {
    if lambda.value <= S::zero() {
        return 1;
    }
    let two = S::of(2.0);
    let ratio = lambda.value / cfg.epsilon;
    let n = S::of_u64(cfg.neighborhood);
    ceil_count(two * ratio * ratio * (two * n / delta_m).ln())
}

/// Three-branch threshold for a single learner.
pub fn epsilon_mcesp<S: Scalar>(
    p: u64,
    q: u64,
    k_m: u64,
    lambda_pair: S,
    delta_m: S,
    neighborhood: u64,
    epsilon: S,
) -> Threshold<S> {
    single_threshold(p, q, k_m, lambda_pair, delta_m, neighborhood, epsilon, false)
}

#[allow(clippy::too_many_arguments)]
fn single_threshold<S: Scalar>(
    p: u64,
    q: u64,
    k: u64,
    lambda_pair: S,
    delta_m: S,
    neighborhood: u64,
    epsilon: S,
    at_least: bool,
) -> Threshold<S> {
    if p != q {
        return Threshold::Unbounded;
    }
    if p == k || (at_least && p > k) {
        return Threshold::Finite(epsilon / S::of(2.0));
    }
    if p > k || p == 0 {
        return Threshold::Unbounded;
    }
    let two = S::of(2.0);
    let log = (two * S::of_u64(k - 1) * S::of_u64(neighborhood) / delta_m).ln();
    let inner = log / (two * S::of_u64(p));
    Threshold::Finite(lambda_pair * inner.max(S::zero()).sqrt())
}

/// The team radical has two printed forms; `Printed` keeps `1/√(2p)` as in the
/// team theorem statement, `Hoeffding` uses the `1/(2p)` of the single-agent
/// bound.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RadicalForm {
    #[default]
    Printed,
    Hoeffding,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundFamily {
    Single,
    Team { agents: usize, form: RadicalForm },
    PerBin,
}

/// Stage bounds plus the threshold function they induce.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds<S> {
    pub family: BoundFamily,
    pub lambda: LambdaBound<S>,
    pub delta_m: S,
    pub epsilon: S,
    pub neighborhood: u64,
    /// Uncapped sample bound.
    pub k_m: u64,
    /// Sample count actually used for the `ε/2` branch; below `k_m` when capped.
    pub k: u64,
}

impl<S: Scalar> Bounds<S> {
    pub fn with_cap(mut self, cap: Option<u64>) -> Self {
        if let Some(c) = cap {
            self.k = self.k_m.min(c.max(1));
        }
        self
    }

    pub fn capped(&self) -> bool {
        self.k < self.k_m
    }

    /// `ε(m, p, q, k)` for a neighbor pair whose range bound is `lambda_pair`.
    pub fn threshold(&self, p: u64, q: u64, lambda_pair: S) -> Threshold<S> {
        match self.family {
            BoundFamily::Single => single_threshold(
                p, q, self.k, lambda_pair, self.delta_m, self.neighborhood, self.epsilon, false,
            ),
            BoundFamily::PerBin => single_threshold(
                p, q, self.k, lambda_pair, self.delta_m, self.neighborhood, self.epsilon, true,
            ),
            BoundFamily::Team { agents, form } => {
                if p != q {
                    return Threshold::Unbounded;
                }
                if p == self.k {
                    return Threshold::Finite(self.epsilon / S::of(2.0));
                }
                if p > self.k || p == 0 {
                    return Threshold::Unbounded;
                }
                let z2 = S::of_u64(2 * agents as u64);
                let c = S::of_u64(4 * agents as u64 - 2);
                let log = (c * S::of_u64(self.k - 1)).ln() / z2 + S::of_u64(self.neighborhood).ln()
                    - self.delta_m.ln() / z2;
                let two_p = S::of(2.0) * S::of_u64(p);
                let scale = match form {
                    RadicalForm::Printed => S::one() / two_p.sqrt(),
                    RadicalForm::Hoeffding => S::one() / two_p,
                };
                Threshold::Finite(lambda_pair * (scale * log).max(S::zero()).sqrt())
            }
        }
    }
}

pub fn mcesp_bounds<S: Scalar>(cfg: &PacConfig<S>, lambda: LambdaBound<S>, delta_m: S) -> Bounds<S> {
    let k_m = k_m_mcesp(&lambda, cfg, delta_m);
    Bounds {
        family: BoundFamily::Single,
        lambda,
        delta_m,
        epsilon: cfg.epsilon,
        neighborhood: cfg.neighborhood,
        k_m,
        k: k_m,
    }
}

/// Team bounds; fewer than two agents falls back to [`mcesp_bounds`].
pub fn mcesmp_bounds<S: Scalar>(
    cfg: &PacConfig<S>,
    lambda: LambdaBound<S>,
    delta_m: S,
    form: RadicalForm,
) -> Bounds<S> {
    let z = cfg.agent_count;
    if z < 2 {
        return mcesp_bounds(cfg, lambda, delta_m);
    }
    let k_m = if lambda.value <= S::zero() {
        1
    } else {
        let z2 = S::of_u64(2 * z as u64);
        let c = S::of_u64(4 * z as u64 - 2);
        let ratio = lambda.value / cfg.epsilon;
        let log = c.ln() / z2 + S::of_u64(cfg.neighborhood).ln() - delta_m.ln() / z2;
        ceil_count(S::of(2.0) * ratio * ratio * log)
    };
    Bounds {
        family: BoundFamily::Team { agents: z, form },
        lambda,
        delta_m,
        epsilon: cfg.epsilon,
        neighborhood: cfg.neighborhood,
        k_m,
        k: k_m,
    }
}

/// Printed joint bound `|A|^Z((|Ω|^Z − 1)/(|Ω| − 1) − 1)`.
pub fn joint_neighborhood_bound(action_count: u64, obs_count: u64, agents: u32) -> u64 {
    let series = if obs_count <= 1 {
        agents as u64
    } else {
        (obs_count.pow(agents) - 1) / (obs_count - 1)
    };
    action_count.pow(agents) * series.saturating_sub(1)
}

/// Constructive size of the joint target space: every joint action at every
/// common-length joint history, `Π|A_i| · Σ_l Π|Ω_i|^l`.
pub fn joint_target_count(action_counts: &[u64], obs_counts: &[u64], horizon: u32) -> u64 {
    if action_counts.iter().any(|&a| a <= 1) {
        return 0;
    }
    let actions: u64 = action_counts.iter().product();
    let per_step: u64 = obs_counts.iter().product();
    let histories: u64 = (0..horizon).map(|l| per_step.pow(l)).sum();
    actions * histories
}

/// `Σ_t 2(R_max^{a_j^t} − R_min^{a_j^t})`.
pub fn lambda_aj<S: Scalar>(per_step_ranges: &[(S, S)]) -> LambdaBound<S> {
    let two = S::of(2.0);
    let value = per_step_ranges
        .iter()
        .fold(S::zero(), |acc, &(hi, lo)| acc + two * (hi - lo));
    LambdaBound { value, kind: LambdaKind::PerActionSequence }
}

/// Bounds for one opponent action-sequence bin.
pub fn mcesip_bounds<S: Scalar>(lambda_aj: LambdaBound<S>, cfg: &PacConfig<S>, delta_m: S) -> Bounds<S> {
    let mut b = mcesp_bounds(cfg, lambda_aj, delta_m);
    b.family = BoundFamily::PerBin;
    b
}

/// `√((1 − δ_e)Λ² + δ_e Λ̄²)`.
pub fn lambda_effective<S: Scalar>(lambda: S, lambda_bar: S, delta_e: S) -> S {
    ((S::one() - delta_e) * lambda * lambda + delta_e * lambda_bar * lambda_bar).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImperfectBounds<S> {
    pub bounds: Bounds<S>,
    pub delta_e: S,
}

impl<S: Scalar> ImperfectBounds<S> {
    /// `(1 − δ_e)ζ + δ_e ζ̄ > (1 − δ_e)ε + δ_e ε̄`.
    pub fn transform_test(&self, zeta: S, zeta_bar: S, eps: S, eps_bar: S) -> bool {
        let keep = S::one() - self.delta_e;
        keep * zeta + self.delta_e * zeta_bar > keep * eps + self.delta_e * eps_bar
    }
}

pub fn imperfect_monitoring_bounds<S: Scalar>(
    lambda_aj: LambdaBound<S>,
    lambda_bar: LambdaBound<S>,
    delta_e: S,
    cfg: &PacConfig<S>,
    delta_m: S,
) -> Result<ImperfectBounds<S>> {
    if !(delta_e >= S::zero() && delta_e <= S::one()) {
        return Err(Error::Config("delta_e must lie in [0, 1]".into()));
    }
    let eff = LambdaBound {
        value: lambda_effective(lambda_aj.value, lambda_bar.value, delta_e),
        kind: LambdaKind::PerActionSequence,
    };
    Ok(ImperfectBounds { bounds: mcesip_bounds(eff, cfg, delta_m), delta_e })
}

/// Cached per-stage quantities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PacSchedule<S> {
    pub stage: u64,
    pub delta_m: S,
    pub k_m: u64,
    pub lambda: LambdaBound<S>,
}

impl<S: Scalar> PacSchedule<S> {
    pub fn mcesp(cfg: &PacConfig<S>, stage: u64) -> Result<Self> {
        let delta_m = delta_m(cfg.delta, stage)?;
        let lambda = lambda_mcesp(cfg);
        Ok(Self { stage, delta_m, k_m: k_m_mcesp(&lambda, cfg, delta_m), lambda })
    }
}
