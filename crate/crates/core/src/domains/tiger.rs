use super::{noisy_signal, AgentSpec, DomainSpec, EnvObservation, Outcome, RewardKind};
use crate::policy::{ActionId, Alphabet, ObsSequence, ReactivePolicy, SequenceTree};

const LISTEN: usize = 0;
const OPEN_LEFT: usize = 1;
const OPEN_RIGHT: usize = 2;
const TIGER_LEFT: usize = 0;
const GROWL_LEFT: u16 = 0;
const GROWL_RIGHT: u16 = 1;

const LISTEN_ACCURACY: f64 = 0.85;
const SIGNAL_ACCURACY: f64 = 0.6;
const HORIZON: usize = 3;

fn actions() -> Vec<String> {
    ["listen", "open-left", "open-right"].iter().map(|s| s.to_string()).collect()
}

fn states() -> Vec<String> {
    vec!["tiger-left".into(), "tiger-right".into()]
}

/// Single-agent payoff: listen −1, gold +10, tiger −100.
fn base(state: usize, action: usize) -> f64 {
    match action {
        LISTEN => -1.0,
        OPEN_LEFT if state == TIGER_LEFT => -100.0,
        OPEN_RIGHT if state != TIGER_LEFT => -100.0,
        _ => 10.0,
    }
}

fn growl_row(state: usize, all_listen: bool) -> Vec<f64> {
    if all_listen {
        noisy_signal(2, state, LISTEN_ACCURACY)
    } else {
        vec![0.5, 0.5]
    }
}

fn next_states(state: usize, all_listen: bool) -> Vec<(u32, f64)> {
    if all_listen {
        vec![(state as u32, 1.0)]
    } else {
        vec![(0, 0.5), (1, 0.5)]
    }
}

/// Two-agent zero-sum-ish Tiger: each agent loses half of what the other
/// gains, the growl is public and the subject (agent 0) also receives a noisy
/// signal of the opponent's last action. Any door opening relocates the tiger
/// uniformly.
pub fn make_tiger_competitive() -> DomainSpec {
    let mut transitions = Vec::new();
    let mut env = Vec::new();
    for s in 0..2 {
        for ai in 0..3 {
            for aj in 0..3 {
                let listen = ai == LISTEN && aj == LISTEN;
                let ri = base(s, ai) - 0.5 * base(s, aj);
                let rj = base(s, aj) - 0.5 * base(s, ai);
                transitions.push(
                    next_states(s, listen)
                        .into_iter()
                        .map(|(next, prob)| Outcome { next, prob, rewards: vec![ri, rj] })
                        .collect(),
                );
            }
        }
    }
    for s in 0..2 {
        for ja in 0..9 {
            env.push(growl_row(s, ja == 0));
        }
    }
    let signal = (0..9).map(|ja| noisy_signal(3, ja % 3, SIGNAL_ACCURACY)).collect();
    DomainSpec {
        name: "tiger-competitive".into(),
        horizon: HORIZON,
        states: states(),
        agents: vec![
            AgentSpec { name: "subject".into(), actions: actions(), alphabet: Alphabet::with_private(2, 3) },
            AgentSpec { name: "opponent".into(), actions: actions(), alphabet: Alphabet::public_only(2) },
        ],
        initial: vec![0.5, 0.5],
        transitions,
        env_observation: EnvObservation::Shared(env),
        private_observation: vec![Some(signal), None],
        reward_kind: RewardKind::PerAgent,
        reward_bounds: vec![(-105.0, 60.0), (-105.0, 60.0)],
        enumerable: true,
    }
}

fn team_reward(state: usize, a: usize, b: usize) -> f64 {
    let correct = |x: usize| x != LISTEN && base(state, x) > 0.0;
    match (a == LISTEN, b == LISTEN) {
        (true, true) => -2.0,
        (true, false) => {
            if correct(b) {
                9.0
            } else {
                -101.0
            }
        }
        (false, true) => {
            if correct(a) {
                9.0
            } else {
                -101.0
            }
        }
        (false, false) => {
            if a == b && correct(a) {
                20.0
            } else {
                -100.0
            }
        }
    }
}

/// Cooperative two-agent Tiger with a shared team reward; each agent hears
/// its own independent growl and nothing about its partner.
pub fn make_tiger_cooperative(horizon: usize) -> DomainSpec {
    let mut transitions = Vec::new();
    for s in 0..2 {
        for a in 0..3 {
            for b in 0..3 {
                let listen = a == LISTEN && b == LISTEN;
                let r = team_reward(s, a, b);
                transitions.push(
                    next_states(s, listen)
                        .into_iter()
                        .map(|(next, prob)| Outcome { next, prob, rewards: vec![r, r] })
                        .collect(),
                );
            }
        }
    }
    let table: Vec<Vec<f64>> = (0..2)
        .flat_map(|s| (0..9).map(move |ja| growl_row(s, ja == 0)))
        .collect();
    DomainSpec {
        name: format!("tiger-cooperative-T{horizon}"),
        horizon,
        states: states(),
        agents: (0..2)
            .map(|i| AgentSpec { name: format!("agent-{i}"), actions: actions(), alphabet: Alphabet::public_only(2) })
            .collect(),
        initial: vec![0.5, 0.5],
        transitions,
        env_observation: EnvObservation::PerAgent(vec![table.clone(), table]),
        private_observation: vec![None, None],
        reward_kind: RewardKind::Team,
        reward_bounds: vec![(-101.0, 20.0), (-101.0, 20.0)],
        enumerable: true,
    }
}

fn away(growl: u16) -> ActionId {
    if growl == GROWL_LEFT {
        OPEN_RIGHT as ActionId
    } else {
        OPEN_LEFT as ActionId
    }
}

fn toward(growl: u16) -> ActionId {
    if growl == GROWL_LEFT {
        OPEN_LEFT as ActionId
    } else {
        OPEN_RIGHT as ActionId
    }
}

/// The fourteen fixed opponent policies over public growl histories.
pub fn tiger_opponent_policies() -> Vec<ReactivePolicy> {
    let tree = SequenceTree::new(2, HORIZON).expect("small tree");
    let l = LISTEN as ActionId;
    let rules: Vec<Box<dyn Fn(&[u16]) -> ActionId>> = vec![
        Box::new(move |_| l),
        Box::new(move |h| if h.len() == 2 { away(h[1]) } else { l }),
        Box::new(move |h| if h.len() == 1 { away(h[0]) } else { l }),
        Box::new(move |h| if h.len() == 2 && h[0] == h[1] { away(h[1]) } else { l }),
        Box::new(move |h| if h.is_empty() { OPEN_LEFT as ActionId } else { l }),
        Box::new(move |h| if h.is_empty() { OPEN_RIGHT as ActionId } else { l }),
        Box::new(move |_| OPEN_LEFT as ActionId),
        Box::new(move |_| OPEN_RIGHT as ActionId),
        Box::new(move |h| if h.len() == 1 { toward(h[0]) } else { l }),
        Box::new(move |h| if h.len() == 2 { toward(h[1]) } else { l }),
        Box::new(move |h| if h.is_empty() { l } else { away(h[h.len() - 1]) }),
        Box::new(move |h| if h.len() == 2 { OPEN_LEFT as ActionId } else { l }),
        Box::new(move |h| if !h.is_empty() && h[h.len() - 1] == GROWL_RIGHT { OPEN_LEFT as ActionId } else { l }),
        Box::new(move |h| if h.len() == 2 { away(h[0]) } else { l }),
    ];
    rules
        .iter()
        .map(|f| ReactivePolicy::from_fn(tree, 3, |s: &ObsSequence| f(s.symbols())).expect("valid actions"))
        .collect()
}
