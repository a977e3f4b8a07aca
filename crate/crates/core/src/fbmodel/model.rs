use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::diffcore::{Activation, Matrix, Mlp, OutputActivation};
use crate::envs::{compass_actions, quantize_action, OfflineDataset, TransitionRecord, DONUT_TAG};
use crate::error::{Result, ZolError};

/// Finite action set seen by the forward network.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ActionSpace {
    /// Stay plus eight compass moves of length `step`; continuous dataset
    /// actions are mapped to the nearest move.
    Compass { step: f64 },
    /// Actions stored as their integer index.
    Discrete(usize),
}

impl ActionSpace {
    pub fn count(&self) -> usize {
        match self {
            ActionSpace::Compass { .. } => 9,
            ActionSpace::Discrete(n) => *n,
        }
    }

    pub fn index_of(&self, a: &[f64]) -> usize {
        match self {
            ActionSpace::Compass { step } => quantize_action(a, *step),
            ActionSpace::Discrete(n) => (a[0].max(0.0) as usize).min(n - 1),
        }
    }

    /// Action space matching a dataset's environment tag.
    pub fn for_dataset(ds: &OfflineDataset, discrete_actions: usize) -> Self {
        if ds.env_tag == DONUT_TAG {
            ActionSpace::Compass { step: 0.1 }
        } else {
            ActionSpace::Discrete(discrete_actions)
        }
    }

    /// Displacement vectors of the compass moves, when applicable.
    pub fn vectors(&self) -> Option<[[f64; 2]; 9]> {
        match self {
            ActionSpace::Compass { step } => Some(compass_actions(*step)),
            ActionSpace::Discrete(_) => None,
        }
    }
}

/// Architecture of an [`FbModel`].
#[derive(Clone, Debug, PartialEq)]
pub struct FbArch {
    pub d: usize,
    pub gamma: f64,
    pub f_hidden: Vec<usize>,
    pub b_hidden: Vec<usize>,
    pub hidden_activation: Activation,
    pub b_output: OutputActivation,
    /// Backward embedding over state-action pairs instead of states.
    pub b_uses_action: bool,
}

impl Default for FbArch {
    fn default() -> Self {
        Self {
            d: 32,
            gamma: 0.98,
            f_hidden: vec![128, 128],
            b_hidden: vec![128],
            hidden_activation: Activation::Relu,
            b_output: OutputActivation::Identity,
            b_uses_action: false,
        }
    }
}

/// Forward network `F(s, a, z)`, backward network `B(s)` (or `B(s, a)`),
/// and their Polyak-averaged targets.
#[derive(Clone, Debug, PartialEq)]
pub struct FbModel {
    pub forward: Mlp,
    pub backward: Mlp,
    pub forward_target: Mlp,
    pub backward_target: Mlp,
    pub d: usize,
    pub gamma: f64,
    pub actions: ActionSpace,
    pub state_dim: usize,
    pub b_uses_action: bool,
}

/// `z * sqrt(d) / |z|`.
pub fn project_z(z: &[f64]) -> Result<Vec<f64>> {
    let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(ZolError::Numeric("cannot project a zero or non-finite latent".into()));
    }
    let s = (z.len() as f64).sqrt() / norm;
    Ok(z.iter().map(|v| v * s).collect())
}

/// Uniform draw from the sphere of radius `sqrt(d)`.
pub fn sphere_latent(d: usize, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        if let Ok(z) = project_z(&g) {
            return z;
        }
    }
}

/// Index of the largest score; ties resolve to the lowest index.
pub fn argmax_lowest(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in scores.iter().enumerate().skip(1) {
        if v > scores[best] {
            best = i;
        }
    }
    best
}

impl FbModel {
    pub fn new(arch: &FbArch, state_dim: usize, actions: ActionSpace, seed: u64) -> Result<Self> {
        if arch.d < 2 {
            return Err(ZolError::Config(format!(
                "latent dimension must be >= 2, got {}",
                arch.d
            )));
        }
        if !(0.0..1.0).contains(&arch.gamma) {
            return Err(ZolError::Config(format!(
                "gamma must lie in [0, 1), got {}",
                arch.gamma
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_act = actions.count();
        let mut f_widths = vec![state_dim + n_act + arch.d];
        f_widths.extend_from_slice(&arch.f_hidden);
        f_widths.push(arch.d);
        let b_in = state_dim + if arch.b_uses_action { n_act } else { 0 };
        let mut b_widths = vec![b_in];
        b_widths.extend_from_slice(&arch.b_hidden);
        b_widths.push(arch.d);

        let forward = Mlp::new(&f_widths, arch.hidden_activation, OutputActivation::Identity, &mut rng)?;
        let backward = Mlp::new(&b_widths, arch.hidden_activation, arch.b_output, &mut rng)?;
        Ok(Self {
            forward_target: forward.clone(),
            backward_target: backward.clone(),
            forward,
            backward,
            d: arch.d,
            gamma: arch.gamma,
            actions,
            state_dim,
            b_uses_action: arch.b_uses_action,
        })
    }

    pub fn n_actions(&self) -> usize {
        self.actions.count()
    }

    /// Rows `[s | one_hot(a) | z]`.
    pub fn f_input(&self, states: &Matrix, actions: &[usize], zs: &Matrix) -> Matrix {
        let n = states.rows();
        debug_assert_eq!(actions.len(), n);
        debug_assert_eq!(zs.rows(), n);
        let na = self.n_actions();
        let width = self.state_dim + na + self.d;
        let mut data = Vec::with_capacity(n * width);
        for i in 0..n {
            data.extend_from_slice(states.row_slice(i));
            let start = data.len();
            data.resize(start + na, 0.0);
            data[start + actions[i]] = 1.0;
            data.extend_from_slice(zs.row_slice(i));
        }
        Matrix::from_vec(n, width, data)
    }

    /// Backward-network inputs: states, with one-hot actions appended in
    /// the state-action variant.
    pub fn b_input(&self, states: &Matrix, actions: Option<&[usize]>) -> Matrix {
        if !self.b_uses_action {
            return states.clone();
        }
        let acts = actions.expect("state-action backward embedding needs actions");
        let na = self.n_actions();
        let mut data = Vec::with_capacity(states.rows() * (self.state_dim + na));
        for i in 0..states.rows() {
            data.extend_from_slice(states.row_slice(i));
            let start = data.len();
            data.resize(start + na, 0.0);
            data[start + acts[i]] = 1.0;
        }
        Matrix::from_vec(states.rows(), self.state_dim + na, data)
    }

    pub fn record_action(&self, r: &TransitionRecord) -> usize {
        self.actions.index_of(&r.a)
    }

    /// `F(s, a, z)` under the online network.
    pub fn forward_embed(&self, states: &Matrix, actions: &[usize], zs: &Matrix) -> Matrix {
        self.forward.forward(&self.f_input(states, actions, zs))
    }

    pub fn backward_embed(&self, b_inputs: &Matrix) -> Matrix {
        self.backward.forward(b_inputs)
    }

    /// `F(s, a, z)^T z` for every action, `n x |A|`, under `net`.
    pub fn action_scores_with(&self, net: &Mlp, states: &Matrix, zs: &Matrix) -> Matrix {
        let n = states.rows();
        let na = self.n_actions();
        let mut rows = Vec::with_capacity(n * na);
        let mut acts = Vec::with_capacity(n * na);
        let mut z_rows = Vec::with_capacity(n * na);
        for i in 0..n {
            for a in 0..na {
                rows.push(i);
                acts.push(a);
                z_rows.push(i);
            }
        }
        let s_rep = states.select_rows(&rows);
        let z_rep = zs.select_rows(&z_rows);
        let f = net.forward(&self.f_input(&s_rep, &acts, &z_rep));
        let mut scores = Matrix::zeros(n, na);
        for k in 0..n * na {
            let z = z_rep.row_slice(k);
            let v: f64 = f.row_slice(k).iter().zip(z).map(|(x, y)| x * y).sum();
            scores.set(k / na, k % na, v);
        }
        scores
    }

    pub fn action_scores(&self, states: &Matrix, zs: &Matrix) -> Matrix {
        self.action_scores_with(&self.forward, states, zs)
    }

    /// Greedy action per row under the online forward network.
    pub fn greedy_actions(&self, states: &Matrix, zs: &Matrix) -> Vec<usize> {
        let scores = self.action_scores(states, zs);
        (0..scores.rows()).map(|i| argmax_lowest(scores.row_slice(i))).collect()
    }

    pub fn act_greedy(&self, s: &[f64], z: &[f64]) -> usize {
        self.greedy_actions(&Matrix::row(s), &Matrix::row(z))[0]
    }

    /// `B(s)^T z` per state.
    pub fn reconstruct_reward(&self, states: &Matrix, z: &[f64]) -> Vec<f64> {
        let b = self.backward_embed(&self.b_input(states, None));
        (0..b.rows())
            .map(|i| b.row_slice(i).iter().zip(z).map(|(x, y)| x * y).sum())
            .collect()
    }

    /// A training latent: with probability `latent_mix` uniform on the
    /// sphere, otherwise the projected backward embedding of a random record.
    pub fn sample_latent(&self, dataset: &OfflineDataset, latent_mix: f64, rng: &mut impl Rng) -> Result<Vec<f64>> {
        if dataset.is_empty() {
            return Err(ZolError::Precondition("sample_latent needs a nonempty dataset".into()));
        }
        if rng.random::<f64>() < latent_mix {
            return Ok(sphere_latent(self.d, rng));
        }
        let rec = &dataset.records[rng.random_range(0..dataset.len())];
        let s = Matrix::row(&rec.s);
        let a = [self.record_action(rec)];
        let b = self.backward_embed(&self.b_input(&s, Some(&a)));
        project_z(b.data()).or_else(|_| Ok(sphere_latent(self.d, rng)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::collect_donut;

    fn small_arch() -> FbArch {
        FbArch {
            d: 4,
            f_hidden: vec![16],
            b_hidden: vec![8],
            ..FbArch::default()
        }
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project_z(&[2.0, 0.0, 0.0, 0.0]).unwrap(), vec![2.0, 0.0, 0.0, 0.0]);
        let z = project_z(&[0.3, -1.2, 4.0]).unwrap();
        let norm: f64 = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 3f64.sqrt()).abs() < 1e-12);
        let zz = project_z(&z).unwrap();
        for (a, b) in z.iter().zip(&zz) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(matches!(project_z(&[0.0, 0.0]), Err(ZolError::Numeric(_))));
    }

    #[test]
    fn argmax_ties_break_low() {
        assert_eq!(argmax_lowest(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax_lowest(&[5.0]), 0);
    }

    #[test]
    fn greedy_is_deterministic_and_single_action_trivial() {
        let m = FbModel::new(&small_arch(), 2, ActionSpace::Compass { step: 0.1 }, 3).unwrap();
        let z = sphere_latent(4, &mut ChaCha8Rng::seed_from_u64(1));
        let a1 = m.act_greedy(&[0.5, 0.2], &z);
        let a2 = m.act_greedy(&[0.5, 0.2], &z);
        assert_eq!(a1, a2);
        let single = FbModel::new(&small_arch(), 2, ActionSpace::Discrete(1), 3).unwrap();
        assert_eq!(single.act_greedy(&[0.5, 0.2], &z), 0);
    }

    #[test]
    fn greedy_invariant_to_constant_score_shift() {
        // Shifting every action's score by one constant (here through the
        // output bias along z) never changes the argmax.
        let mut m = FbModel::new(&small_arch(), 2, ActionSpace::Compass { step: 0.1 }, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let states = Matrix::from_vec(3, 2, vec![0.5, 0.1, -0.7, 0.3, 0.0, 1.2]);
        let z = sphere_latent(4, &mut rng);
        let zs = Matrix::repeat_row(&z, 3);
        let before = m.greedy_actions(&states, &zs);
        let mut flat = m.forward.flat_params();
        let n = flat.len();
        for (k, zk) in z.iter().enumerate() {
            flat[n - 4 + k] += 3.7 * zk;
        }
        m.forward.set_flat_params(&flat).unwrap();
        assert_eq!(m.greedy_actions(&states, &zs), before);
    }

    #[test]
    fn latents_live_on_the_sphere() {
        let m = FbModel::new(&small_arch(), 2, ActionSpace::Compass { step: 0.1 }, 3).unwrap();
        let ds = collect_donut(50, 0.6, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for mix in [0.0, 0.5, 1.0] {
            for _ in 0..20 {
                let z = m.sample_latent(&ds, mix, &mut rng).unwrap();
                let n: f64 = z.iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!((n - 2.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn sphere_latents_average_out() {
        let m = FbModel::new(&small_arch(), 2, ActionSpace::Compass { step: 0.1 }, 3).unwrap();
        let ds = collect_donut(10, 0.6, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut mean = [0.0; 4];
        let n = 10_000;
        for _ in 0..n {
            let z = m.sample_latent(&ds, 1.0, &mut rng).unwrap();
            for k in 0..4 {
                mean[k] += z[k] / n as f64;
            }
        }
        let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 0.1 * 2.0, "mean norm {norm}");
    }

    #[test]
    fn data_anchored_latent_is_deterministic_for_single_state() {
        let m = FbModel::new(&small_arch(), 2, ActionSpace::Compass { step: 0.1 }, 3).unwrap();
        let ds = collect_donut(1, 0.6, 0).unwrap();
        let expected = project_z(&m.backward_embed(&Matrix::row(&ds.records[0].s)).into_vec()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            assert_eq!(m.sample_latent(&ds, 0.0, &mut rng).unwrap(), expected);
        }
    }

    #[test]
    fn reconstruction_is_linear_in_z() {
        let m = FbModel::new(&small_arch(), 2, ActionSpace::Compass { step: 0.1 }, 3).unwrap();
        let states = Matrix::from_vec(2, 2, vec![0.4, 0.4, -1.0, 0.2]);
        let z = [0.5, -1.0, 2.0, 0.1];
        let z2: Vec<f64> = z.iter().map(|v| 2.0 * v).collect();
        let r1 = m.reconstruct_reward(&states, &z);
        let r2 = m.reconstruct_reward(&states, &z2);
        for (a, b) in r1.iter().zip(&r2) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
        assert!(m.reconstruct_reward(&states, &[0.0; 4]).iter().all(|&v| v == 0.0));
    }
}
