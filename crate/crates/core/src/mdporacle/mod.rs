//! Exact tabular ground truth: successor measures, discounted occupancies
//! and stationary density ratios of finite MDPs, computed by dense linear
//! solves.
//!
//! State-action pairs are flattened as `s * n_actions + a`. Initial
//! distributions over states are extended to pairs through the policy
//! being evaluated, `rho0(s, a) = rho0(s) * pi(a | s)`.

mod linalg;
pub mod suite;

use std::collections::VecDeque;

use rand::Rng;

use crate::diffcore::Matrix;
use crate::error::{Result, ZolError};

pub use linalg::lu_solve;

const ROW_TOL: f64 = 1e-12;

/// Finite discounted MDP with an explicit transition tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularMDP {
    n_states: usize,
    n_actions: usize,
    /// `P[s][a][s']`, flattened.
    transitions: Vec<f64>,
    gamma: f64,
    rho0: Vec<f64>,
}

/// Stochastic policy `pi[s][a]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularPolicy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

/// Reward table `r[s][a]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularReward {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
}

/// Two sides of an exact identity and their absolute gap.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IdentityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
}

impl IdentityCheck {
    fn new(lhs: f64, rhs: f64) -> Self {
        Self {
            lhs,
            rhs,
            gap: (lhs - rhs).abs(),
        }
    }
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(ZolError::Config(format!("{what} has negative or non-finite entries")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > ROW_TOL {
        return Err(ZolError::Config(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

fn random_simplex(rng: &mut impl Rng, n: usize, floor: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| floor + rng.random::<f64>()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

impl TabularMDP {
    pub fn new(n_states: usize, n_actions: usize, transitions: Vec<f64>, gamma: f64, rho0: Vec<f64>) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(ZolError::Config("MDP needs at least one state and one action".into()));
        }
        if transitions.len() != n_states * n_actions * n_states {
            return Err(ZolError::Shape(format!(
                "transition tensor has {} entries, expected {}",
                transitions.len(),
                n_states * n_actions * n_states
            )));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(ZolError::Config(format!("gamma must lie in [0, 1), got {gamma}")));
        }
        if rho0.len() != n_states {
            return Err(ZolError::Shape("rho0 length must equal the state count".into()));
        }
        for (i, row) in transitions.chunks_exact(n_states).enumerate() {
            check_distribution(row, &format!("P(.|s={}, a={})", i / n_actions, i % n_actions))?;
        }
        check_distribution(&rho0, "rho0")?;
        Ok(Self {
            n_states,
            n_actions,
            transitions,
            gamma,
            rho0,
        })
    }

    /// Dense random MDP with full-support `rho0`.
    pub fn random(n_states: usize, n_actions: usize, gamma: f64, rng: &mut impl Rng) -> Result<Self> {
        let mut transitions = Vec::with_capacity(n_states * n_actions * n_states);
        for _ in 0..n_states * n_actions {
            // Squared uniforms give visibly uneven rows.
            let raw: Vec<f64> = (0..n_states).map(|_| rng.random::<f64>().powi(2)).collect();
            let s: f64 = raw.iter().sum::<f64>().max(1e-300);
            transitions.extend(raw.into_iter().map(|v| v / s));
        }
        let rho0 = random_simplex(rng, n_states, 0.05);
        Self::new(n_states, n_actions, transitions, gamma, rho0)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_pairs(&self) -> usize {
        self.n_states * self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn rho0(&self) -> &[f64] {
        &self.rho0
    }

    pub fn transition(&self, s: usize, a: usize, s_next: usize) -> f64 {
        self.transitions[(s * self.n_actions + a) * self.n_states + s_next]
    }

    /// `P(. | s, a)`.
    pub fn next_state_dist(&self, s: usize, a: usize) -> &[f64] {
        let i = (s * self.n_actions + a) * self.n_states;
        &self.transitions[i..i + self.n_states]
    }

    /// Same dynamics under a different discount.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::new(
            self.n_states,
            self.n_actions,
            self.transitions.clone(),
            gamma,
            self.rho0.clone(),
        )
    }

    fn check_policy(&self, pi: &TabularPolicy) -> Result<()> {
        if pi.n_states != self.n_states || pi.n_actions != self.n_actions {
            return Err(ZolError::Shape("policy shape does not match the MDP".into()));
        }
        Ok(())
    }

    /// `P^pi[(s,a),(s',a')] = P(s'|s,a) * pi(a'|s')`.
    pub fn pair_transition_matrix(&self, pi: &TabularPolicy) -> Matrix {
        let (ns, na) = (self.n_states, self.n_actions);
        let mut p = Matrix::zeros(ns * na, ns * na);
        for s in 0..ns {
            for a in 0..na {
                let row = s * na + a;
                for s2 in 0..ns {
                    let t = self.transition(s, a, s2);
                    if t == 0.0 {
                        continue;
                    }
                    for a2 in 0..na {
                        p.set(row, s2 * na + a2, t * pi.prob(s2, a2));
                    }
                }
            }
        }
        p
    }

    /// `rho0(s) * pi(a|s)` over pairs.
    pub fn initial_pair_dist(&self, pi: &TabularPolicy) -> Vec<f64> {
        let na = self.n_actions;
        (0..self.n_pairs())
            .map(|i| self.rho0[i / na] * pi.prob(i / na, i % na))
            .collect()
    }

    /// Pairs with `d^beta > 0`: states reachable from `rho0` under `beta`,
    /// paired with actions `beta` takes there.
    pub fn support(&self, beta: &TabularPolicy) -> Vec<bool> {
        let (ns, na) = (self.n_states, self.n_actions);
        let mut reached = vec![false; ns];
        let mut queue: VecDeque<usize> = VecDeque::new();
        for s in 0..ns {
            if self.rho0[s] > 0.0 {
                reached[s] = true;
                queue.push_back(s);
            }
        }
        while let Some(s) = queue.pop_front() {
            for a in 0..na {
                if beta.prob(s, a) <= 0.0 {
                    continue;
                }
                for s2 in 0..ns {
                    if self.transition(s, a, s2) > 0.0 && !reached[s2] {
                        reached[s2] = true;
                        queue.push_back(s2);
                    }
                }
            }
        }
        (0..ns * na)
            .map(|i| reached[i / na] && beta.prob(i / na, i % na) > 0.0)
            .collect()
    }
}

impl TabularPolicy {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_states * n_actions {
            return Err(ZolError::Shape("policy table has the wrong size".into()));
        }
        for (s, row) in probs.chunks_exact(n_actions).enumerate() {
            check_distribution(row, &format!("pi(.|s={s})"))?;
        }
        Ok(Self {
            n_states,
            n_actions,
            probs,
        })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    /// One action per state with probability one.
    pub fn deterministic(n_actions: usize, choice: &[usize]) -> Result<Self> {
        let mut probs = vec![0.0; choice.len() * n_actions];
        for (s, &a) in choice.iter().enumerate() {
            if a >= n_actions {
                return Err(ZolError::Config(format!("action {a} out of range at state {s}")));
            }
            probs[s * n_actions + a] = 1.0;
        }
        Self::new(choice.len(), n_actions, probs)
    }

    /// Random policy whose every action has probability bounded away from 0.
    pub fn random_full_support(n_states: usize, n_actions: usize, rng: &mut impl Rng) -> Self {
        let mut probs = Vec::with_capacity(n_states * n_actions);
        for _ in 0..n_states {
            probs.extend(random_simplex(rng, n_actions, 0.1));
        }
        Self {
            n_states,
            n_actions,
            probs,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

impl TabularReward {
    pub fn new(n_states: usize, n_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_states * n_actions {
            return Err(ZolError::Shape("reward table has the wrong size".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ZolError::Config("reward table has non-finite entries".into()));
        }
        Ok(Self {
            n_states,
            n_actions,
            values,
        })
    }

    pub fn constant(n_states: usize, n_actions: usize, c: f64) -> Self {
        Self {
            n_states,
            n_actions,
            values: vec![c; n_states * n_actions],
        }
    }

    /// Reward depending on the state only.
    pub fn from_state_values(n_actions: usize, per_state: &[f64]) -> Result<Self> {
        let values = per_state
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, n_actions))
            .collect();
        Self::new(per_state.len(), n_actions, values)
    }

    pub fn random(n_states: usize, n_actions: usize, rng: &mut impl Rng) -> Self {
        Self {
            n_states,
            n_actions,
            values: (0..n_states * n_actions).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    pub fn value(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// `M = (I - gamma * P^pi)^{-1}` over state-action pairs.
pub fn successor_measure_exact(mdp: &TabularMDP, pi: &TabularPolicy) -> Result<Matrix> {
    mdp.check_policy(pi)?;
    let n = mdp.n_pairs();
    let p = mdp.pair_transition_matrix(pi);
    let mut a = Matrix::identity(n);
    a.data_mut()
        .iter_mut()
        .zip(p.data())
        .for_each(|(x, p)| *x -= mdp.gamma * p);
    lu_solve(&a, &Matrix::identity(n))
}

/// `d(s,a) = (1 - gamma) * sum_{s0,a0} rho0(s0) pi(a0|s0) M[(s0,a0),(s,a)]`.
pub fn occupancy_exact(mdp: &TabularMDP, pi: &TabularPolicy) -> Result<Vec<f64>> {
    let m = successor_measure_exact(mdp, pi)?;
    Ok(occupancy_from_successor(mdp, pi, &m))
}

fn occupancy_from_successor(mdp: &TabularMDP, pi: &TabularPolicy, m: &Matrix) -> Vec<f64> {
    let rho = mdp.initial_pair_dist(pi);
    let n = mdp.n_pairs();
    let mut d = vec![0.0; n];
    for (i, &p) in rho.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        for (dj, mij) in d.iter_mut().zip(m.row_slice(i)) {
            *dj += p * mij;
        }
    }
    d.iter_mut().for_each(|v| *v *= 1.0 - mdp.gamma);
    d
}

/// Occupancy from the Bellman flow equations
/// `d = (1 - gamma) rho0 pi + gamma (P^pi)^T d`, without forming `M`.
pub fn occupancy_flow(mdp: &TabularMDP, pi: &TabularPolicy) -> Result<Vec<f64>> {
    mdp.check_policy(pi)?;
    let n = mdp.n_pairs();
    let pt = mdp.pair_transition_matrix(pi).transpose();
    let mut a = Matrix::identity(n);
    a.data_mut()
        .iter_mut()
        .zip(pt.data())
        .for_each(|(x, p)| *x -= mdp.gamma * p);
    let rhs: Vec<f64> = mdp
        .initial_pair_dist(pi)
        .into_iter()
        .map(|v| (1.0 - mdp.gamma) * v)
        .collect();
    Ok(lu_solve(&a, &Matrix::column(&rhs))?.into_vec())
}

/// `w = d^pi / d^beta`, zero outside the support of `d^beta`.
pub fn density_ratio_exact(mdp: &TabularMDP, pi: &TabularPolicy, beta: &TabularPolicy) -> Result<Vec<f64>> {
    let d_pi = occupancy_exact(mdp, pi)?;
    let d_beta = occupancy_exact(mdp, beta)?;
    let support = mdp.support(beta);
    Ok(ratio_on_support(&d_pi, &d_beta, &support))
}

fn ratio_on_support(d_pi: &[f64], d_beta: &[f64], support: &[bool]) -> Vec<f64> {
    d_pi.iter()
        .zip(d_beta)
        .zip(support)
        .map(|((p, b), &on)| if on && *b > 0.0 { p / b } else { 0.0 })
        .collect()
}

fn require_full_support(mdp: &TabularMDP, beta: &TabularPolicy) -> Result<()> {
    mdp.check_policy(beta)?;
    if let Some(i) = mdp.support(beta).iter().position(|on| !on) {
        return Err(ZolError::Precondition(format!(
            "d^beta vanishes at pair (s={}, a={})",
            i / mdp.n_actions,
            i % mdp.n_actions
        )));
    }
    Ok(())
}

/// Largest gap between the flow-equation ratio `d^pi / d^beta` and the
/// successor-density form `(1 - gamma) E_{rho0}[m^pi]`, where
/// `m^pi = M^pi / d^beta` columnwise.
pub fn verify_ratio_identity(mdp: &TabularMDP, pi: &TabularPolicy, beta: &TabularPolicy) -> Result<f64> {
    require_full_support(mdp, beta)?;
    let d_beta = occupancy_flow(mdp, beta)?;
    let d_pi = occupancy_flow(mdp, pi)?;
    let m = successor_measure_exact(mdp, pi)?;
    let rho = mdp.initial_pair_dist(pi);
    let n = mdp.n_pairs();

    let mut err = 0.0f64;
    for j in 0..n {
        let w_exact = d_pi[j] / d_beta[j];
        let expected_density: f64 = (0..n).map(|i| rho[i] * m.get(i, j) / d_beta[j]).sum();
        err = err.max((w_exact - (1.0 - mdp.gamma) * expected_density).abs());
    }
    Ok(err)
}

/// Centered importance-weighted return against the target return:
/// `E_{d^beta}[w (r - rbar)]` versus `E_{d^pi}[r] - rbar`.
pub fn check_centered_reweighting(
    mdp: &TabularMDP,
    pi: &TabularPolicy,
    beta: &TabularPolicy,
    reward: &TabularReward,
) -> Result<IdentityCheck> {
    require_full_support(mdp, beta)?;
    let d_pi = occupancy_exact(mdp, pi)?;
    let d_beta = occupancy_exact(mdp, beta)?;
    let w = ratio_on_support(&d_pi, &d_beta, &mdp.support(beta));
    let r = reward.values();
    let r_bar: f64 = d_beta.iter().zip(r).map(|(d, r)| d * r).sum();
    let lhs: f64 = d_beta
        .iter()
        .zip(&w)
        .zip(r)
        .map(|((d, w), r)| d * w * (r - r_bar))
        .sum();
    let rhs = d_pi.iter().zip(r).map(|(d, r)| d * r).sum::<f64>() - r_bar;
    Ok(IdentityCheck::new(lhs, rhs))
}

/// `E_{d^beta}[(w - 1)^2]` versus `sum (d^pi - d^beta)^2 / d^beta`.
pub fn check_chi2_identity(mdp: &TabularMDP, pi: &TabularPolicy, beta: &TabularPolicy) -> Result<IdentityCheck> {
    require_full_support(mdp, beta)?;
    let d_pi = occupancy_exact(mdp, pi)?;
    let d_beta = occupancy_exact(mdp, beta)?;
    let w = ratio_on_support(&d_pi, &d_beta, &mdp.support(beta));
    let lhs: f64 = d_beta.iter().zip(&w).map(|(d, w)| d * (w - 1.0).powi(2)).sum();
    let rhs: f64 = d_pi.iter().zip(&d_beta).map(|(p, b)| (p - b).powi(2) / b).sum();
    Ok(IdentityCheck::new(lhs, rhs))
}

/// `Q(s0,a0) = sum_{s,a} M[(s0,a0),(s,a)] r(s,a)`, returned as `n_states x n_actions`.
pub fn q_from_successor(mdp: &TabularMDP, pi: &TabularPolicy, reward: &TabularReward) -> Result<Matrix> {
    let m = successor_measure_exact(mdp, pi)?;
    let q = m.matmul(&Matrix::column(reward.values()));
    Ok(Matrix::from_vec(mdp.n_states, mdp.n_actions, q.into_vec()))
}

/// Reweights `beta` by the positive part of `w_logits`, renormalizing per
/// state. States whose reweighted row is all zero keep `beta`.
pub fn behavior_supported_policy(mdp: &TabularMDP, beta: &TabularPolicy, w_logits: &[f64]) -> Result<TabularPolicy> {
    mdp.check_policy(beta)?;
    if w_logits.len() != mdp.n_pairs() {
        return Err(ZolError::Shape("w_logits must cover every state-action pair".into()));
    }
    if w_logits.iter().any(|v| !v.is_finite()) {
        return Err(ZolError::Numeric("non-finite w_logits".into()));
    }
    let na = mdp.n_actions;
    let mut probs = Vec::with_capacity(mdp.n_pairs());
    for s in 0..mdp.n_states {
        let row: Vec<f64> = (0..na)
            .map(|a| w_logits[s * na + a].max(0.0) * beta.prob(s, a))
            .collect();
        let z: f64 = row.iter().sum();
        if z > 0.0 {
            probs.extend(row.iter().map(|v| v / z));
        } else {
            probs.extend((0..na).map(|a| beta.prob(s, a)));
        }
    }
    // Renormalized rows may miss 1 by an ulp; accept them as-is.
    Ok(TabularPolicy {
        n_states: mdp.n_states,
        n_actions: na,
        probs,
    })
}
