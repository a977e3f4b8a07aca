//! Planar annulus world with an inner-biased offline support.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::{OfflineDataset, TransitionRecord};
use crate::diffcore::Matrix;
use crate::error::{Result, ZolError};

pub const DONUT_TAG: &str = "donut";
pub const WALK_LENGTH: usize = 10;
const MAX_PROPOSALS: usize = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DonutWorld {
    pub rad_min: f64,
    pub rad_max: f64,
    pub action_clip: f64,
    /// Width of the radial Gaussian that shapes the data support.
    pub support_sigma: f64,
}

impl Default for DonutWorld {
    fn default() -> Self {
        Self::new(0.6)
    }
}

impl DonutWorld {
    pub fn new(support_sigma: f64) -> Self {
        Self {
            rad_min: 0.25,
            rad_max: 1.5,
            action_clip: 0.1,
            support_sigma,
        }
    }

    pub fn contains(&self, s: &[f64]) -> bool {
        let r = s[0].hypot(s[1]);
        self.rad_min <= r && r <= self.rad_max
    }

    /// Radial clamp onto the annulus.
    pub fn project(&self, s: [f64; 2]) -> [f64; 2] {
        let r = s[0].hypot(s[1]);
        if r == 0.0 {
            return [self.rad_min, 0.0];
        }
        let target = r.clamp(self.rad_min, self.rad_max);
        if target == r {
            return s;
        }
        let mut k = target / r;
        // Rounding can land a hair outside the boundary.
        loop {
            let p = [s[0] * k, s[1] * k];
            let rp = p[0].hypot(p[1]);
            if rp > self.rad_max {
                k *= 1.0 - f64::EPSILON;
            } else if rp < self.rad_min {
                k *= 1.0 + f64::EPSILON;
            } else {
                return p;
            }
        }
    }

    pub fn step(&self, s: [f64; 2], a: [f64; 2]) -> [f64; 2] {
        let c = self.action_clip;
        self.project([s[0] + a[0].clamp(-c, c), s[1] + a[1].clamp(-c, c)])
    }

    /// Draws from `exp(-|s|^2 / (2 sigma^2))` restricted to the annulus by
    /// rejection from the bounding square.
    pub fn sample_start(&self, rng: &mut impl Rng) -> Result<[f64; 2]> {
        let two_var = 2.0 * self.support_sigma * self.support_sigma;
        for _ in 0..MAX_PROPOSALS {
            let s = [
                rng.random_range(-self.rad_max..self.rad_max),
                rng.random_range(-self.rad_max..self.rad_max),
            ];
            if !self.contains(&s) {
                continue;
            }
            let accept = (-(s[0] * s[0] + s[1] * s[1]) / two_var).exp();
            if rng.random::<f64>() < accept {
                return Ok(s);
            }
        }
        Err(ZolError::Config(format!(
            "support sampling exceeded {MAX_PROPOSALS} proposals (sigma = {} too small)",
            self.support_sigma
        )))
    }

    /// `n` start states stacked as rows.
    pub fn sample_starts(&self, n: usize, rng: &mut impl Rng) -> Result<Matrix> {
        let mut data = Vec::with_capacity(2 * n);
        for _ in 0..n {
            data.extend_from_slice(&self.sample_start(rng)?);
        }
        Ok(Matrix::from_vec(n, 2, data))
    }
}

/// The nine discrete moves: stay, then eight compass steps of length
/// `step`, counter-clockwise from east.
pub fn compass_actions(step: f64) -> [[f64; 2]; 9] {
    let mut out = [[0.0; 2]; 9];
    for (k, a) in out.iter_mut().enumerate().skip(1) {
        let angle = (k - 1) as f64 * std::f64::consts::FRAC_PI_4;
        *a = [step * angle.cos(), step * angle.sin()];
    }
    out
}

/// Index of the nearest compass action; ties go to the lower index.
pub fn quantize_action(a: &[f64], step: f64) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, c) in compass_actions(step).iter().enumerate() {
        let d = (a[0] - c[0]).powi(2) + (a[1] - c[1]).powi(2);
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    best
}

/// Reward-free random-walk data. Segments of [`WALK_LENGTH`] steps start
/// from the support sampler and take uniform actions in the clip box.
pub fn collect_donut(n_records: usize, sigma: f64, seed: u64) -> Result<OfflineDataset> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(ZolError::Config(format!("sigma must be positive, got {sigma}")));
    }
    let world = DonutWorld::new(sigma);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ds = OfflineDataset::new(DONUT_TAG, seed, 2, 2);
    ds.records.reserve(n_records);
    let c = world.action_clip;
    while ds.records.len() < n_records {
        let mut s = world.sample_start(&mut rng)?;
        for _ in 0..WALK_LENGTH {
            if ds.records.len() == n_records {
                break;
            }
            let a = [rng.random_range(-c..=c), rng.random_range(-c..=c)];
            let s_next = world.step(s, a);
            ds.records.push(TransitionRecord {
                s: s.to_vec(),
                a: a.to_vec(),
                s_next: s_next.to_vec(),
                s_plus: Vec::new(),
                r: None,
            });
            s = s_next;
        }
    }
    ds.shuffle_positives(&mut rng);
    Ok(ds)
}

/// Mean `|s|` and the fraction of states with `|s|` in `[lo, hi]`.
pub fn support_stats(ds: &OfflineDataset) -> (f64, f64) {
    if ds.is_empty() {
        return (0.0, 0.0);
    }
    let norms: Vec<f64> = ds.records.iter().map(|r| r.s[0].hypot(r.s[1])).collect();
    let mean = norms.iter().sum::<f64>() / norms.len() as f64;
    let world = DonutWorld::default();
    let inside = ds.records.iter().filter(|r| world.contains(&r.s)).count();
    (mean, inside as f64 / ds.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn states_stay_in_annulus() {
        let ds = collect_donut(5_000, 0.6, 1).unwrap();
        let w = DonutWorld::default();
        for r in &ds.records {
            assert!(w.contains(&r.s) && w.contains(&r.s_next) && w.contains(&r.s_plus));
            assert!(r.a.iter().all(|v| v.abs() <= 0.1));
        }
        assert_eq!(ds.len(), 5_000);
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = collect_donut(1_000, 0.6, 9).unwrap().to_bytes().unwrap();
        let b = collect_donut(1_000, 0.6, 9).unwrap().to_bytes().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn positives_are_a_permutation_of_states() {
        let ds = collect_donut(200, 0.6, 3).unwrap();
        let mut s: Vec<Vec<u64>> = ds
            .records
            .iter()
            .map(|r| r.s.iter().map(|v| v.to_bits()).collect())
            .collect();
        let mut p: Vec<Vec<u64>> = ds
            .records
            .iter()
            .map(|r| r.s_plus.iter().map(|v| v.to_bits()).collect())
            .collect();
        s.sort();
        p.sort();
        assert_eq!(s, p);
    }

    #[test]
    fn tiny_sigma_is_config_error() {
        assert!(matches!(collect_donut(1, 1e-4, 0), Err(ZolError::Config(_))));
        assert!(matches!(collect_donut(1, 0.0, 0), Err(ZolError::Config(_))));
    }

    #[test]
    fn projection_and_actions() {
        let w = DonutWorld::default();
        assert_eq!(w.project([0.1, 0.0]), [0.25, 0.0]);
        let p = w.project([3.0, 4.0]);
        assert!((p[0].hypot(p[1]) - 1.5).abs() < 1e-12);
        let acts = compass_actions(0.1);
        assert_eq!(acts[0], [0.0, 0.0]);
        for a in &acts[1..] {
            assert!((a[0].hypot(a[1]) - 0.1).abs() < 1e-12);
        }
        assert_eq!(quantize_action(&[0.1, 0.0], 0.1), 1);
        assert_eq!(quantize_action(&[0.0, 0.1], 0.1), 3);
        assert_eq!(quantize_action(&[0.01, -0.01], 0.1), 0);
    }
}
