use super::{AgentSpec, DomainSpec, EnvObservation, Outcome, RewardKind};
use crate::policy::Alphabet;

const HORIZON: usize = 3;
const SPREAD: f64 = 0.8;
const GROWTH: f64 = 0.4;
const CONTESTED_REDUCTION: f64 = 0.6;

fn fire_probability(level: usize) -> f64 {
    match level {
        0 => 0.2,
        1 => 0.5,
        _ => 0.8,
    }
}

fn levels(mut s: usize, houses: usize, n_f: usize) -> Vec<usize> {
    let mut out = vec![0; houses];
    for slot in out.iter_mut() {
        *slot = s % n_f;
        s /= n_f;
    }
    out
}

fn encode(levels: &[usize], n_f: usize) -> usize {
    levels.iter().rev().fold(0, |acc, &f| acc * n_f + f)
}

/// Next-level distribution of one house as `(level, prob)` pairs.
fn house_step(f: usize, agents: usize, neighbor_burning: bool, n_f: usize) -> Vec<(usize, f64)> {
    let top = n_f - 1;
    match agents {
        0 => {
            let p = if neighbor_burning {
                SPREAD
            } else if f > 0 {
                GROWTH
            } else {
                0.0
            };
            let up = (f + 1).min(top);
            if p == 0.0 || up == f {
                vec![(f, 1.0)]
            } else {
                vec![(up, p), (f, 1.0 - p)]
            }
        }
        1 => {
            let down = f.saturating_sub(1);
            if neighbor_burning && down != f {
                vec![(down, CONTESTED_REDUCTION), (f, 1.0 - CONTESTED_REDUCTION)]
            } else {
                vec![(down, 1.0)]
            }
        }
        _ => vec![(0, 1.0)],
    }
}

/// `Z` firefighters and a row of `n_h` houses with fire levels `0..n_f`.
///
/// The state is the vector of fire levels; each step every agent picks a
/// house to stand at. Each agent sees only a noisy fire/no-fire reading of the
/// house it chose, taken after the step. The team reward is minus the sum of
/// the resulting fire levels. Initial levels are uniform.
pub fn make_firefighting(agents: usize, houses: usize, n_f: usize) -> DomainSpec {
    assert!(agents >= 1 && houses >= 1 && n_f >= 2, "degenerate firefighting instance");
    let n = n_f.pow(houses as u32);
    let ja_count = houses.pow(agents as u32);
    let joint = |mut ja: usize| {
        let mut out = vec![0usize; agents];
        for slot in out.iter_mut().rev() {
            *slot = ja % houses;
            ja /= houses;
        }
        out
    };
    let mut transitions = Vec::with_capacity(n * ja_count);
    for s in 0..n {
        let f = levels(s, houses, n_f);
        for ja in 0..ja_count {
            let mut present = vec![0usize; houses];
            for h in joint(ja) {
                present[h] += 1;
            }
            let mut dist: Vec<(Vec<usize>, f64)> = vec![(Vec::with_capacity(houses), 1.0)];
            for h in 0..houses {
                let burning = (h > 0 && f[h - 1] > 0) || (h + 1 < houses && f[h + 1] > 0);
                let step = house_step(f[h], present[h], burning, n_f);
                dist = dist
                    .into_iter()
                    .flat_map(|(lv, p)| {
                        step.iter().map(move |&(x, q)| {
                            let mut lv = lv.clone();
                            lv.push(x);
                            (lv, p * q)
                        })
                    })
                    .collect();
            }
            transitions.push(
                dist.into_iter()
                    .map(|(lv, p)| {
                        let r = -(lv.iter().sum::<usize>() as f64);
                        Outcome { next: encode(&lv, n_f) as u32, prob: p, rewards: vec![r; agents] }
                    })
                    .collect(),
            );
        }
    }
    let tables: Vec<Vec<Vec<f64>>> = (0..agents)
        .map(|i| {
            let mut t = Vec::with_capacity(n * ja_count);
            for s in 0..n {
                let f = levels(s, houses, n_f);
                for ja in 0..ja_count {
                    let p = fire_probability(f[joint(ja)[i]]);
                    t.push(vec![1.0 - p, p]);
                }
            }
            t
        })
        .collect();
    let worst = -(((n_f - 1) * houses) as f64);
    DomainSpec {
        name: format!("firefighting-Z{agents}-H{houses}-F{n_f}"),
        horizon: HORIZON,
        states: (0..n)
            .map(|s| levels(s, houses, n_f).iter().map(|f| f.to_string()).collect::<Vec<_>>().join(""))
            .collect(),
        agents: (0..agents)
            .map(|i| AgentSpec {
                name: format!("firefighter-{i}"),
                actions: (0..houses).map(|h| format!("house-{h}")).collect(),
                alphabet: Alphabet::public_only(2),
            })
            .collect(),
        initial: vec![1.0 / n as f64; n],
        transitions,
        env_observation: EnvObservation::PerAgent(tables),
        private_observation: vec![None; agents],
        reward_kind: RewardKind::Team,
        reward_bounds: vec![(worst, 0.0); agents],
        enumerable: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn house_rules() {
        assert_eq!(house_step(2, 2, true, 3), vec![(0, 1.0)]);
        assert_eq!(house_step(1, 0, false, 3), vec![(2, 0.4), (1, 0.6)]);
        assert_eq!(house_step(0, 0, false, 3), vec![(0, 1.0)]);
        let spread = house_step(0, 0, true, 3);
        assert_eq!((spread[0], spread[1].0), ((1, 0.8), 0));
        assert!((spread[1].1 - 0.2).abs() < 1e-12);
        assert_eq!(house_step(2, 1, false, 3), vec![(1, 1.0)]);
        let contested = house_step(2, 1, true, 3);
        assert_eq!((contested[0], contested[1].0), ((1, 0.6), 2));
        assert!((contested[1].1 - 0.4).abs() < 1e-12);
    }

    #[test]
    fn sizes_and_zero_reward() {
        let d = make_firefighting(3, 4, 3);
        assert_eq!(d.state_count(), 81);
        assert_eq!(d.joint_action_count(), 64);
        // all houses cold, nobody spreads
        let row = &d.transitions[0];
        assert_eq!(row.len(), 1);
        assert_eq!(row[0].rewards[0], 0.0);
    }
}
