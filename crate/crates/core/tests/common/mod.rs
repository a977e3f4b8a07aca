#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use zol::diffcore::{Graph, Matrix, NodeId};
use zol::envs::{build_gridworld, collect_tabular, state_index, OfflineDataset};
use zol::fbmodel::{project_z, train_fb, ActionSpace, FbArch, FbModel, FbTrainConfig};
use zol::mdporacle::{q_from_successor, successor_measure_exact, TabularMDP, TabularPolicy, TabularReward};
use zol::Result;

/// Random smooth expression over a `rows x cols` leaf, one op code per layer.
#[derive(Clone, Debug)]
pub struct Composite {
    pub rows: usize,
    pub cols: usize,
    pub ops: Vec<u8>,
    pub mix: Matrix,
    pub weights: Matrix,
    pub coefs: Vec<f64>,
}

pub const COMPOSITE_OPS: u8 = 9;

impl Composite {
    pub fn random(rng: &mut impl Rng) -> Self {
        let rows = rng.random_range(1..5);
        let cols = rng.random_range(1..5);
        let depth = rng.random_range(1..6);
        let rand_mat = |rng: &mut dyn rand::RngCore, r: usize, c: usize| {
            Matrix::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect())
        };
        Self {
            rows,
            cols,
            ops: (0..depth).map(|_| rng.random_range(0..COMPOSITE_OPS)).collect(),
            mix: rand_mat(rng, rows, cols),
            weights: rand_mat(rng, cols, cols),
            coefs: (0..depth).map(|_| rng.random_range(-1.5..1.5)).collect(),
        }
    }

    pub fn build(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let mut h = x;
        for (op, &c) in self.ops.iter().zip(&self.coefs) {
            h = match op {
                0 => g.tanh(h)?,
                1 => g.softplus(h)?,
                2 => g.mul(h, x)?,
                3 => {
                    let s = g.scale(x, c)?;
                    g.add(h, s)?
                }
                4 => {
                    let sp = g.softplus(x)?;
                    let den = g.add_const(sp, 0.5)?;
                    g.div(h, den)?
                }
                5 => {
                    let w = g.constant(self.weights.clone())?;
                    g.matmul(h, w)?
                }
                6 => {
                    let sq = g.square(h)?;
                    g.scale(sq, 0.5)?
                }
                7 => {
                    let m = g.mean_rows(h)?;
                    let t = g.tanh(m)?;
                    g.add(h, t)?
                }
                _ => {
                    let t = g.transpose(h)?;
                    let tt = g.transpose(t)?;
                    g.sub(tt, x)?
                }
            };
        }
        let mix = g.constant(self.mix.clone())?;
        let weighted = g.mul(h, mix)?;
        let s = g.sum(weighted)?;
        let hx = g.row_dot(h, x)?;
        let hx_mean = g.mean(hx)?;
        let shifted = g.add_const(h, 0.3)?;
        let norm = g.l2_norm(shifted)?;
        let partial = g.add(s, hx_mean)?;
        g.add(partial, norm)
    }

    pub fn value(&self, x: &Matrix) -> Result<f64> {
        let mut g = Graph::new();
        let leaf = g.param(x.clone())?;
        let out = self.build(&mut g, leaf)?;
        g.scalar_value(out)
    }

    pub fn gradient(&self, x: &Matrix) -> Result<Matrix> {
        let mut g = Graph::new();
        let leaf = g.param(x.clone())?;
        let out = self.build(&mut g, leaf)?;
        Ok(g.backward(out)?.wrt(leaf))
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Central difference of `f` along coordinate `i` of `x`.
pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut p = x.to_vec();
    p[i] = x[i] + h;
    let up = f(&p);
    p[i] = x[i] - h;
    let down = f(&p);
    (up - down) / (2.0 * h)
}

/// Worst relative finite-difference error of a composite at `x`.
pub fn composite_fd_error(c: &Composite, x: &Matrix) -> f64 {
    let grad = c.gradient(x).unwrap();
    let mut f = |v: &[f64]| c.value(&Matrix::from_vec(c.rows, c.cols, v.to_vec())).unwrap();
    (0..x.len())
        .map(|i| rel_err(grad.data()[i], central_diff(&mut f, x.data(), i, 1e-5), 1e-3))
        .fold(0.0, f64::max)
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect(),
    )
}

/// Fit quality of a state-action FB model on an open gridworld.
#[derive(Clone, Debug)]
pub struct TabularFit {
    /// Mean absolute error of `F^T B` against `M / d_data`, one per latent.
    pub mae: Vec<f64>,
    /// Largest `|F^T z_r - Q|` under the model's greedy policy for a goal reward.
    pub q_error: f64,
}

pub const TABULAR_GAMMA: f64 = 0.5;

pub fn tabular_arch(n_pairs: usize, hidden: usize) -> FbArch {
    FbArch {
        d: n_pairs,
        gamma: TABULAR_GAMMA,
        f_hidden: vec![hidden, hidden],
        b_hidden: vec![hidden],
        b_uses_action: true,
        ..FbArch::default()
    }
}

pub fn tabular_train_config() -> FbTrainConfig {
    FbTrainConfig {
        batch_size: 128,
        train_steps: 20_000,
        lr: 1e-3,
        lr_final_ratio: 0.05,
        latent_mix: 0.0,
        ..FbTrainConfig::default()
    }
}

fn pair_frequencies(ds: &OfflineDataset, n_pairs: usize, n_actions: usize) -> Vec<f64> {
    let mut freq = vec![0.0; n_pairs];
    for r in &ds.records {
        freq[state_index(&r.s) * n_actions + r.a[0] as usize] += 1.0 / ds.len() as f64;
    }
    freq
}

pub fn fit_gridworld(width: usize, height: usize, hidden: usize, latents: usize) -> (TabularMDP, FbModel, TabularFit) {
    let mdp = build_gridworld(width, height, TABULAR_GAMMA, &[]).unwrap();
    let (ns, na, np) = (mdp.n_states(), mdp.n_actions(), mdp.n_pairs());
    let ds = collect_tabular(&mdp, 20_000, 1);
    let (model, _) = train_fb(
        &ds,
        &tabular_arch(np, hidden),
        ActionSpace::Discrete(na),
        &tabular_train_config(),
    )
    .unwrap();
    let freq = pair_frequencies(&ds, np, na);

    let states = Matrix::identity(ns);
    let pair_state: Vec<usize> = (0..np).map(|p| p / na).collect();
    let pair_action: Vec<usize> = (0..np).map(|p| p % na).collect();
    let ps = states.select_rows(&pair_state);
    let b = model.backward_embed(&model.b_input(&ps, Some(&pair_action)));

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut mae = Vec::new();
    for _ in 0..latents {
        let z = model.sample_latent(&ds, 0.0, &mut rng).unwrap();
        let greedy = model.greedy_actions(&states, &Matrix::repeat_row(&z, ns));
        let pi = TabularPolicy::deterministic(na, &greedy).unwrap();
        let m = successor_measure_exact(&mdp, &pi).unwrap();
        let f = model.forward_embed(&ps, &pair_action, &Matrix::repeat_row(&z, np));
        let fit = f.matmul(&b.transpose());
        let mut total = 0.0;
        for x in 0..np {
            for y in 0..np {
                total += (fit.get(x, y) - m.get(x, y) / freq[y]).abs();
            }
        }
        mae.push(total / (np * np) as f64);
    }

    let goal = (ns - 1) * na;
    let rv: Vec<f64> = (0..np).map(|p| f64::from(u8::from(p == goal))).collect();
    let reward = TabularReward::new(ns, na, rv.clone()).unwrap();
    let mut z_r = vec![0.0; np];
    for r in &ds.records {
        let p = state_index(&r.s) * na + r.a[0] as usize;
        if rv[p] == 0.0 {
            continue;
        }
        let bb = model.backward_embed(&model.b_input(&Matrix::row(&r.s), Some(&[r.a[0] as usize])));
        for (k, v) in z_r.iter_mut().enumerate() {
            *v += bb.get(0, k) * rv[p] / ds.len() as f64;
        }
    }
    let zp = project_z(&z_r).unwrap();
    let greedy = model.greedy_actions(&states, &Matrix::repeat_row(&zp, ns));
    let pi = TabularPolicy::deterministic(na, &greedy).unwrap();
    let q = q_from_successor(&mdp, &pi, &reward).unwrap();
    let f = model.forward_embed(&ps, &pair_action, &Matrix::repeat_row(&zp, np));
    let q_error = (0..np)
        .map(|p| {
            let qh: f64 = f.row_slice(p).iter().zip(&z_r).map(|(a, b)| a * b).sum();
            (qh - q.get(p / na, p % na)).abs()
        })
        .fold(0.0, f64::max);
    (mdp, model, TabularFit { mae, q_error })
}
