use super::{noisy_signal, AgentSpec, DomainSpec, EnvObservation, Outcome, RewardKind};
use crate::policy::{ActionId, Alphabet, ObsSequence, ReactivePolicy};

const COLS: usize = 3;
const ROWS: usize = 2;
const CELLS: usize = COLS * ROWS;
const HORIZON: usize = 3;

const RELATION_ACCURACY: f64 = 0.85;
const SIGNAL_ACCURACY: f64 = 0.6;

// predator moves
#[cfg(test)]
const UP: usize = 0;
// prey moves
const DOWN: usize = 0;
// shared
const LEFT: usize = 1;
const RIGHT: usize = 2;

// public relations
const SAME_ROW: u16 = 0;
const SAME_COLUMN: u16 = 1;
const SAME_SECTOR: u16 = 2;
const NONE: u16 = 3;

fn cell(col: usize, row: usize) -> usize {
    row * COLS + col
}

fn col_row(c: usize) -> (usize, usize) {
    (c % COLS, c / COLS)
}

fn step(c: usize, mv: usize, vertical_up: bool) -> usize {
    let (col, row) = col_row(c);
    match mv {
        LEFT => cell(col.saturating_sub(1), row),
        RIGHT => cell((col + 1).min(COLS - 1), row),
        _ if vertical_up => cell(col, (row + 1).min(ROWS - 1)),
        _ => cell(col, row.saturating_sub(1)),
    }
}

fn relation(pred: usize, prey: usize) -> u16 {
    let (pc, pr) = col_row(pred);
    let (qc, qr) = col_row(prey);
    match (pc == qc, pr == qr) {
        (true, true) => SAME_SECTOR,
        (false, true) => SAME_ROW,
        (true, false) => SAME_COLUMN,
        (false, false) => NONE,
    }
}

fn start() -> usize {
    state(cell(0, 0), cell(COLS - 1, ROWS - 1))
}

fn state(pred: usize, prey: usize) -> usize {
    pred * CELLS + prey
}

/// Predator (subject) and prey on a 3×2 grid. The predator starts bottom-left
/// and moves up/left/right; the prey starts top-right and moves
/// down/left/right. Reaching the left column is an escape (−100); sharing a
/// sector outside the left column is a catch (+100). Either resets both to
/// their starts. The public signal is the pair's relation (same row, column,
/// sector, or none); the predator also gets a noisy report of the prey's move.
pub fn make_auav() -> DomainSpec {
    let n = CELLS * CELLS;
    let mut transitions = Vec::with_capacity(n * 9);
    let mut env = vec![Vec::new(); n * 9];
    for s in 0..n {
        let (pred, prey) = (s / CELLS, s % CELLS);
        for ai in 0..3 {
            for aj in 0..3 {
                let p2 = step(pred, ai, true);
                let q2 = step(prey, aj, false);
                let (next, r) = if col_row(q2).0 == 0 {
                    (start(), -100.0)
                } else if p2 == q2 {
                    (start(), 100.0)
                } else {
                    (state(p2, q2), 0.0)
                };
                transitions.push(vec![Outcome { next: next as u32, prob: 1.0, rewards: vec![r, -r] }]);
            }
        }
    }
    for s in 0..n {
        let rel = relation(s / CELLS, s % CELLS);
        for ja in 0..9 {
            env[s * 9 + ja] = noisy_signal(4, rel as usize, RELATION_ACCURACY);
        }
    }
    let signal = (0..9).map(|ja| noisy_signal(3, ja % 3, SIGNAL_ACCURACY)).collect();
    let mut initial = vec![0.0; n];
    initial[start()] = 1.0;
    let names = |v: [&str; 3]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    DomainSpec {
        name: "auav".into(),
        horizon: HORIZON,
        states: (0..n).map(|s| format!("pred{}-prey{}", s / CELLS, s % CELLS)).collect(),
        agents: vec![
            AgentSpec { name: "predator".into(), actions: names(["up", "left", "right"]), alphabet: Alphabet::with_private(4, 3) },
            AgentSpec { name: "prey".into(), actions: names(["down", "left", "right"]), alphabet: Alphabet::public_only(4) },
        ],
        initial,
        transitions,
        env_observation: EnvObservation::Shared(env),
        private_observation: vec![Some(signal), None],
        reward_kind: RewardKind::PerAgent,
        reward_bounds: vec![(-100.0, 100.0), (-100.0, 100.0)],
        enumerable: true,
    }
}

/// Four fixed prey policies over relation histories.
pub fn auav_prey_policies() -> Vec<ReactivePolicy> {
    let tree = make_auav().tree(1).expect("small tree");
    let d = DOWN as ActionId;
    let l = LEFT as ActionId;
    let r = RIGHT as ActionId;
    let rules: Vec<Box<dyn Fn(&[u16]) -> ActionId>> = vec![
        Box::new(move |_| l),
        Box::new(move |h| if h.is_empty() { d } else { l }),
        Box::new(move |h| match h.last() {
            Some(&SAME_ROW) => d,
            Some(&SAME_COLUMN) => r,
            _ => l,
        }),
        Box::new(move |h| if h.len() < 2 { d } else { l }),
    ];
    rules
        .iter()
        .map(|f| ReactivePolicy::from_fn(tree, 3, |s: &ObsSequence| f(s.symbols())).expect("valid actions"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catch_and_escape() {
        let d = make_auav();
        // predator one step below the prey's cell at column 1, prey moves down onto it
        let s = state(cell(1, 0), cell(1, 1));
        let o = &d.transitions[s * 9 + LEFT * 3 + DOWN][0];
        assert_eq!(o.rewards[0], 0.0); // predator left to column 0, prey down to (1,0)
        let o = &d.transitions[s * 9 + UP * 3 + DOWN][0];
        // predator up to (1,1), prey down to (1,0): no catch
        assert_eq!(o.rewards[0], 0.0);
        let s = state(cell(1, 1), cell(2, 1));
        let o = &d.transitions[s * 9 + RIGHT * 3 + RIGHT][0];
        assert_eq!((o.rewards[0], o.next as usize), (100.0, start()));
        let s = state(cell(2, 0), cell(1, 1));
        let o = &d.transitions[s * 9 + UP * 3 + LEFT][0];
        assert_eq!((o.rewards[0], o.next as usize), (-100.0, start()));
    }

    #[test]
    fn alphabet_sizes() {
        let d = make_auav();
        assert_eq!(d.agents[0].alphabet.size(), 12);
        assert_eq!(d.agents[1].alphabet.size(), 4);
        assert_eq!(auav_prey_policies().len(), 4);
    }
}
