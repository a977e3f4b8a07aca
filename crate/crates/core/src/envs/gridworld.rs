//! Deterministic four-action gridworlds over the open cells of a grid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::{OfflineDataset, TransitionRecord};
use crate::error::{Result, ZolError};
use crate::mdporacle::TabularMDP;

pub const TABULAR_TAG: &str = "tabular";

/// Action order: up, down, left, right.
pub const GRID_ACTIONS: usize = 4;

/// Builds the MDP whose states are the open cells (row-major order).
/// Moves into a wall or off the grid leave the state unchanged; `rho0` is
/// uniform over open cells. `walls` may be empty for an open grid.
pub fn build_gridworld(width: usize, height: usize, gamma: f64, walls: &[bool]) -> Result<TabularMDP> {
    if width == 0 || height == 0 || width * height > 64 {
        return Err(ZolError::Config(format!(
            "grid must have between 1 and 64 cells, got {width}x{height}"
        )));
    }
    let cells = width * height;
    let walls: Vec<bool> = if walls.is_empty() {
        vec![false; cells]
    } else if walls.len() == cells {
        walls.to_vec()
    } else {
        return Err(ZolError::Config("wall mask size does not match the grid".into()));
    };
    let open: Vec<usize> = (0..cells).filter(|&c| !walls[c]).collect();
    if open.is_empty() {
        return Err(ZolError::Config("every cell is a wall".into()));
    }
    let mut index = vec![usize::MAX; cells];
    for (i, &c) in open.iter().enumerate() {
        index[c] = i;
    }
    let n = open.len();
    let mut transitions = vec![0.0; n * GRID_ACTIONS * n];
    for (i, &c) in open.iter().enumerate() {
        let (row, col) = (c / width, c % width);
        for a in 0..GRID_ACTIONS {
            let target = match a {
                0 if row > 0 => Some(c - width),
                1 if row + 1 < height => Some(c + width),
                2 if col > 0 => Some(c - 1),
                3 if col + 1 < width => Some(c + 1),
                _ => None,
            };
            let j = match target {
                Some(t) if !walls[t] => index[t],
                _ => i,
            };
            transitions[(i * GRID_ACTIONS + a) * n + j] = 1.0;
        }
    }
    TabularMDP::new(n, GRID_ACTIONS, transitions, gamma, vec![1.0 / n as f64; n])
}

pub fn one_hot(i: usize, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

/// Transitions with `(s, a)` drawn uniformly, `s' ~ P(.|s,a)`. States are
/// one-hot vectors and the action is stored as its index.
pub fn collect_tabular(mdp: &TabularMDP, n_records: usize, seed: u64) -> OfflineDataset {
    let ns = mdp.n_states();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ds = OfflineDataset::new(TABULAR_TAG, seed, ns, 1);
    for _ in 0..n_records {
        let s = rng.random_range(0..ns);
        let a = rng.random_range(0..mdp.n_actions());
        let u: f64 = rng.random();
        let dist = mdp.next_state_dist(s, a);
        let mut acc = 0.0;
        let mut s_next = ns - 1;
        for (j, p) in dist.iter().enumerate() {
            acc += p;
            if u < acc {
                s_next = j;
                break;
            }
        }
        ds.records.push(TransitionRecord {
            s: one_hot(s, ns),
            a: vec![a as f64],
            s_next: one_hot(s_next, ns),
            s_plus: Vec::new(),
            r: None,
        });
    }
    ds.shuffle_positives(&mut rng);
    ds
}

/// Index of the hot coordinate.
pub fn state_index(s: &[f64]) -> usize {
    s.iter().position(|&v| v == 1.0).unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdporacle::{successor_measure_exact, TabularPolicy};

    #[test]
    fn one_by_two_reproduces_chain() {
        let mdp = build_gridworld(2, 1, 0.5, &[]).unwrap();
        // Always move right.
        let pi = TabularPolicy::deterministic(4, &[3, 3]).unwrap();
        let m = successor_measure_exact(&mdp, &pi).unwrap();
        let (p0, p1) = (3, 4 + 3);
        assert!((m.get(p0, p0) - 1.0).abs() < 1e-12);
        assert!((m.get(p0, p1) - 1.0).abs() < 1e-12);
        assert!((m.get(p1, p1) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn walls_and_boundaries_self_loop() {
        let walls = [false, true, false, false, false, false, false, false, false];
        let mdp = build_gridworld(3, 3, 0.9, &walls).unwrap();
        assert_eq!(mdp.n_states(), 8);
        // Cell 0 moving up (boundary) or right (wall) stays put.
        assert_eq!(mdp.transition(0, 0, 0), 1.0);
        assert_eq!(mdp.transition(0, 3, 0), 1.0);
        // Cell 0 moving down reaches cell 3, which is open index 2.
        assert_eq!(mdp.transition(0, 1, 2), 1.0);
        for s in 0..8 {
            for a in 0..4 {
                let total: f64 = mdp.next_state_dist(s, a).iter().sum();
                assert_eq!(total, 1.0);
            }
        }
        assert!(build_gridworld(2, 1, 0.5, &[true, true]).is_err());
        assert!(build_gridworld(9, 9, 0.5, &[]).is_err());
    }

    #[test]
    fn tabular_dataset_is_consistent() {
        let mdp = build_gridworld(3, 3, 0.5, &[]).unwrap();
        let ds = collect_tabular(&mdp, 500, 4);
        for r in &ds.records {
            let (s, a, s2) = (state_index(&r.s), r.a[0] as usize, state_index(&r.s_next));
            assert_eq!(mdp.transition(s, a, s2), 1.0);
        }
    }
}
