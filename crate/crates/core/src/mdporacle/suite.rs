//! Randomized sweep over every exact identity the oracle can check.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    check_centered_reweighting, check_chi2_identity, density_ratio_exact, occupancy_exact, occupancy_flow,
    q_from_successor, verify_ratio_identity, TabularMDP, TabularPolicy, TabularReward,
};
use crate::error::Result;

pub const CHECK_NAMES: [&str; 5] = [
    "ratio_identity",
    "centered_return",
    "chi2_identity",
    "on_policy_flat",
    "q_two_route",
];

#[derive(Clone, Debug)]
pub struct SuiteConfig {
    pub instances: usize,
    pub seed: u64,
    pub max_states: usize,
    pub max_actions: usize,
    /// Fixed discount for every instance; drawn per instance when `None`.
    pub gamma: Option<f64>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            instances: 50,
            seed: 0,
            max_states: 20,
            max_actions: 4,
            gamma: None,
        }
    }
}

/// A random full-support problem instance.
#[derive(Clone, Debug)]
pub struct Instance {
    pub seed: u64,
    pub mdp: TabularMDP,
    pub pi: TabularPolicy,
    pub beta: TabularPolicy,
    pub reward: TabularReward,
}

impl Instance {
    pub fn generate(seed: u64, max_states: usize, max_actions: usize, gamma: Option<f64>) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ns = rng.random_range(2..=max_states.max(2));
        let na = rng.random_range(1..=max_actions.max(1));
        let gamma = gamma.unwrap_or_else(|| rng.random_range(0.0..0.99));
        let mdp = TabularMDP::random(ns, na, gamma, &mut rng)?;
        let pi = TabularPolicy::random_full_support(ns, na, &mut rng);
        let beta = TabularPolicy::random_full_support(ns, na, &mut rng);
        let reward = TabularReward::random(ns, na, &mut rng);
        Ok(Self {
            seed,
            mdp,
            pi,
            beta,
            reward,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckSummary {
    pub name: &'static str,
    pub max_error: f64,
    pub worst_seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerificationReport {
    pub instances: usize,
    pub checks: Vec<CheckSummary>,
}

impl VerificationReport {
    pub fn max_error(&self, name: &str) -> Option<f64> {
        self.checks.iter().find(|c| c.name == name).map(|c| c.max_error)
    }

    /// First check whose max error is not below `tol`.
    pub fn first_failure(&self, tol: f64) -> Option<&CheckSummary> {
        self.checks.iter().find(|c| c.max_error.is_nan() || c.max_error >= tol)
    }

    pub fn render(&self, title: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{title} ({} instances)", self.instances);
        for c in &self.checks {
            let _ = writeln!(
                out,
                "  {:<16} max_error={:.3e} worst_seed={}",
                c.name, c.max_error, c.worst_seed
            );
        }
        out
    }
}

/// Per-check errors of one instance, in [`CHECK_NAMES`] order.
pub fn instance_errors(inst: &Instance) -> Result<[f64; 5]> {
    let Instance {
        mdp, pi, beta, reward, ..
    } = inst;
    let ratio = verify_ratio_identity(mdp, pi, beta)?;
    let centered = check_centered_reweighting(mdp, pi, beta, reward)?.gap;
    let chi2 = check_chi2_identity(mdp, pi, beta)?.gap;

    let w_on = density_ratio_exact(mdp, beta, beta)?;
    let flat_w = w_on.iter().map(|w| (w - 1.0).abs()).fold(0.0, f64::max);
    let flat_j = check_centered_reweighting(mdp, beta, beta, reward)?.lhs.abs();

    let q = q_from_successor(mdp, pi, reward)?;
    let rho = mdp.initial_pair_dist(pi);
    let via_q = (1.0 - mdp.gamma()) * rho.iter().zip(q.data()).map(|(p, q)| p * q).sum::<f64>();
    let d_flow = occupancy_flow(mdp, pi)?;
    let via_flow: f64 = d_flow.iter().zip(reward.values()).map(|(d, r)| d * r).sum();
    // Keep the M-based occupancy in the loop as a third route.
    let via_m: f64 = occupancy_exact(mdp, pi)?
        .iter()
        .zip(reward.values())
        .map(|(d, r)| d * r)
        .sum();
    let q_route = (via_q - via_flow).abs().max((via_m - via_flow).abs());

    Ok([ratio, centered, chi2, flat_w.max(flat_j), q_route])
}

pub fn run_suite(cfg: &SuiteConfig) -> Result<VerificationReport> {
    let mut checks: Vec<CheckSummary> = CHECK_NAMES
        .iter()
        .map(|&name| CheckSummary {
            name,
            max_error: 0.0,
            worst_seed: cfg.seed,
        })
        .collect();
    for k in 0..cfg.instances {
        let seed = cfg.seed.wrapping_add(k as u64);
        let inst = Instance::generate(seed, cfg.max_states, cfg.max_actions, cfg.gamma)?;
        let errs = instance_errors(&inst)?;
        for (c, e) in checks.iter_mut().zip(errs) {
            if e > c.max_error || e.is_nan() {
                c.max_error = e;
                c.worst_seed = seed;
            }
        }
    }
    Ok(VerificationReport {
        instances: cfg.instances,
        checks,
    })
}
