use super::{noisy_signal, AgentSpec, DomainSpec, EnvObservation, Outcome, RewardKind};
use crate::policy::{ActionId, Alphabet, ObsSequence, ReactivePolicy};

const HORIZON: usize = 3;
const RELATION_ACCURACY: f64 = 0.85;
const SIGNAL_ACCURACY: f64 = 0.6;

const NODES: [&str; 8] = [
    "initial", "bank", "insurance", "offshore", "shell", "casino", "real-estate", "clean-pot",
];
const INITIAL: usize = 0;
const CLEAN: usize = 7;
/// Sensor sites are nodes 1..=6.
const SITES: usize = 6;
const CONFISCATE: usize = SITES;
const SENSOR_START: usize = 3;

const HOLD: usize = 0;
const ADVANCE_FIRST: usize = 1;
const ADVANCE_SECOND: usize = 2;
const LATERAL: usize = 3;
const RETREAT: usize = 4;

const SAME_LOCATION: u16 = 0;
const SAME_STAGE: u16 = 1;
const NEITHER: u16 = 2;

fn stage(node: usize) -> usize {
    match node {
        0 => 0,
        1 | 2 => 1,
        3 | 4 => 2,
        5 | 6 => 3,
        _ => 4,
    }
}

fn successors(node: usize) -> (usize, usize) {
    match stage(node) {
        0 => (1, 2),
        1 => (3, 4),
        2 => (5, 6),
        _ => (CLEAN, CLEAN),
    }
}

fn red_move(node: usize, action: usize) -> usize {
    match action {
        ADVANCE_FIRST => successors(node).0,
        ADVANCE_SECOND => successors(node).1,
        LATERAL if (1..=6).contains(&node) => {
            if node % 2 == 1 {
                node + 1
            } else {
                node - 1
            }
        }
        RETREAT => match stage(node) {
            0 => INITIAL,
            1 => INITIAL,
            s => 2 * s - 3,
        },
        _ => node,
    }
}

/// Red action reported by blue's private signal: hold, advance, or sideways/back.
fn signal_class(action: usize) -> usize {
    match action {
        HOLD => 0,
        ADVANCE_FIRST | ADVANCE_SECOND => 1,
        _ => 2,
    }
}

fn relation(money: usize, sensor: usize) -> u16 {
    if money == sensor {
        SAME_LOCATION
    } else if stage(money) == stage(sensor) {
        SAME_STAGE
    } else {
        NEITHER
    }
}

fn state(money: usize, sensor: usize) -> usize {
    money * SITES + (sensor - 1)
}

/// Blue team (subject) places sensors at one of six laundering sites or
/// confiscates at the sensed site; red moves funds through
/// placement → layering → integration → clean pot. Catching the funds pays
/// +10; a wrong confiscation or funds reaching the clean pot costs −100, and
/// either terminal event resets funds to a placement site and the sensor to
/// the offshore site.
pub fn make_money_laundering() -> DomainSpec {
    let money_nodes = 7; // clean pot is never a resting state
    let n = money_nodes * SITES;
    let ja_count = 7 * 5;
    let reset = |r: f64| -> Vec<Outcome> {
        [1usize, 2]
            .iter()
            .map(|&m| Outcome { next: state(m, SENSOR_START) as u32, prob: 0.5, rewards: vec![r, -r] })
            .collect()
    };
    let mut transitions = Vec::with_capacity(n * ja_count);
    for s in 0..n {
        let money = s / SITES;
        let sensor = s % SITES + 1;
        for blue in 0..7 {
            for red in 0..5 {
                let row = if blue == CONFISCATE && money == sensor {
                    reset(10.0)
                } else {
                    let m2 = red_move(money, red);
                    let sensor2 = if blue == CONFISCATE { sensor } else { blue + 1 };
                    if m2 == CLEAN || blue == CONFISCATE {
                        reset(-100.0)
                    } else {
                        vec![Outcome { next: state(m2, sensor2) as u32, prob: 1.0, rewards: vec![0.0, 0.0] }]
                    }
                };
                transitions.push(row);
            }
        }
    }
    let mut env = Vec::with_capacity(n * ja_count);
    for s in 0..n {
        let rel = relation(s / SITES, s % SITES + 1);
        for _ in 0..ja_count {
            env.push(noisy_signal(3, rel as usize, RELATION_ACCURACY));
        }
    }
    let signal = (0..ja_count).map(|ja| noisy_signal(3, signal_class(ja % 5), SIGNAL_ACCURACY)).collect();
    let mut initial = vec![0.0; n];
    initial[state(1, SENSOR_START)] = 0.5;
    initial[state(2, SENSOR_START)] = 0.5;
    let mut blue_actions: Vec<String> = NODES[1..=6].iter().map(|s| format!("sensor-{s}")).collect();
    blue_actions.push("confiscate".into());
    DomainSpec {
        name: "money-laundering".into(),
        horizon: HORIZON,
        states: (0..n).map(|s| format!("{}|sensor-{}", NODES[s / SITES], NODES[s % SITES + 1])).collect(),
        agents: vec![
            AgentSpec { name: "blue".into(), actions: blue_actions, alphabet: Alphabet::with_private(3, 3) },
            AgentSpec {
                name: "red".into(),
                actions: ["hold", "advance-first", "advance-second", "lateral", "retreat"]
                    .iter()
                    .map(|s| s.to_string())
                    .collect(),
                alphabet: Alphabet::public_only(3),
            },
        ],
        initial,
        transitions,
        env_observation: EnvObservation::Shared(env),
        private_observation: vec![Some(signal), None],
        reward_kind: RewardKind::PerAgent,
        reward_bounds: vec![(-100.0, 10.0), (-10.0, 100.0)],
        enumerable: true,
    }
}

/// Eight fixed red-team policies over relation histories.
pub fn laundering_red_policies() -> Vec<ReactivePolicy> {
    let tree = make_money_laundering().tree(1).expect("small tree");
    let a = |x: usize| x as ActionId;
    let rules: Vec<Box<dyn Fn(&[u16]) -> ActionId>> = vec![
        Box::new(move |_| a(ADVANCE_FIRST)),
        Box::new(move |_| a(ADVANCE_SECOND)),
        Box::new(move |h| if h.is_empty() { a(HOLD) } else { a(ADVANCE_FIRST) }),
        Box::new(move |h| match h.last() {
            Some(&SAME_LOCATION) | Some(&SAME_STAGE) => a(LATERAL),
            _ => a(ADVANCE_SECOND),
        }),
        Box::new(move |h| match h.last() {
            Some(&SAME_LOCATION) => a(RETREAT),
            _ => a(ADVANCE_FIRST),
        }),
        Box::new(move |h| if h.len() % 2 == 0 { a(ADVANCE_FIRST) } else { a(ADVANCE_SECOND) }),
        Box::new(move |h| if h.len() == 1 { a(HOLD) } else { a(ADVANCE_SECOND) }),
        Box::new(move |h| match h.last() {
            Some(&NEITHER) => a(HOLD),
            _ => a(ADVANCE_FIRST),
        }),
    ];
    rules
        .iter()
        .map(|f| ReactivePolicy::from_fn(tree, 5, |s: &ObsSequence| f(s.symbols())).expect("valid actions"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn graph_shape() {
        assert_eq!(successors(INITIAL), (1, 2));
        assert_eq!(successors(1), (3, 4));
        assert_eq!(successors(4), (5, 6));
        assert_eq!(successors(6), (CLEAN, CLEAN));
        assert_eq!(red_move(3, LATERAL), 4);
        assert_eq!(red_move(6, RETREAT), 3);
    }

    #[test]
    fn catch_and_clean_pot() {
        let d = make_money_laundering();
        let ja = |b: usize, r: usize| b * 5 + r;
        let s = state(3, 3);
        assert_eq!(d.transitions[s * 35 + ja(CONFISCATE, HOLD)][0].rewards[0], 10.0);
        let s = state(5, 3);
        assert_eq!(d.transitions[s * 35 + ja(CONFISCATE, HOLD)][0].rewards[0], -100.0);
        assert_eq!(d.transitions[s * 35 + ja(0, ADVANCE_FIRST)][0].rewards[0], -100.0);
        assert_eq!(d.agents[0].action_count(), 7);
        assert_eq!(d.agents[0].alphabet.size(), 9);
        assert_eq!(laundering_red_policies().len(), 8);
    }
}
