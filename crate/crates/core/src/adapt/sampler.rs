use rand::Rng;

use crate::diffcore::Matrix;
use crate::envs::{one_hot, DonutWorld};
use crate::error::{Result, ZolError};
use crate::mdporacle::TabularMDP;

/// Source of reset (initial) states, one per row.
pub trait ResetSampler {
    fn sample(&self, n: usize, rng: &mut dyn rand::RngCore) -> Result<Matrix>;
}

impl ResetSampler for DonutWorld {
    fn sample(&self, n: usize, mut rng: &mut dyn rand::RngCore) -> Result<Matrix> {
        self.sample_starts(n, &mut rng)
    }
}

/// One-hot states drawn from a tabular initial distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularStarts {
    pub rho0: Vec<f64>,
}

impl TabularStarts {
    pub fn from_mdp(mdp: &TabularMDP) -> Self {
        Self {
            rho0: mdp.rho0().to_vec(),
        }
    }
}

impl ResetSampler for TabularStarts {
    fn sample(&self, n: usize, rng: &mut dyn rand::RngCore) -> Result<Matrix> {
        let ns = self.rho0.len();
        if ns == 0 {
            return Err(ZolError::Config("empty initial distribution".into()));
        }
        let mut data = Vec::with_capacity(n * ns);
        for _ in 0..n {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = ns - 1;
            for (i, p) in self.rho0.iter().enumerate() {
                acc += p;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            data.extend(one_hot(pick, ns));
        }
        Ok(Matrix::from_vec(n, ns, data))
    }
}
