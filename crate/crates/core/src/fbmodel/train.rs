use log::debug;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::{project_z, sphere_latent, ActionSpace, FbArch, FbModel};
use crate::diffcore::{adam_step, AdamState, Graph, Matrix, MlpNodes, NodeId};
use crate::envs::{OfflineDataset, TransitionRecord};
use crate::error::{Result, ZolError};

#[derive(Clone, Debug, PartialEq)]
pub struct FbTrainConfig {
    pub batch_size: usize,
    pub train_steps: usize,
    pub lr: f64,
    pub polyak_tau: f64,
    pub ortho_coef: f64,
    /// Probability of a sphere latent rather than a data-anchored one.
    pub latent_mix: f64,
    /// Learning rate at the last step as a fraction of `lr`; the rate
    /// follows a cosine from `lr` down to `lr * lr_final_ratio`.
    pub lr_final_ratio: f64,
    pub seed: u64,
}

impl Default for FbTrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            train_steps: 6000,
            lr: 1e-3,
            polyak_tau: 0.01,
            ortho_coef: 1.0,
            latent_mix: 0.5,
            lr_final_ratio: 0.1,
            seed: 0,
        }
    }
}

impl FbTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(ZolError::Config("batch size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(ZolError::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if !(0.0..=1.0).contains(&self.polyak_tau) {
            return Err(ZolError::Config(format!(
                "polyak tau must lie in [0, 1], got {}",
                self.polyak_tau
            )));
        }
        if !(self.ortho_coef >= 0.0 && self.ortho_coef.is_finite()) {
            return Err(ZolError::Config(format!(
                "ortho coefficient must be >= 0, got {}",
                self.ortho_coef
            )));
        }
        if !(0.0..=1.0).contains(&self.latent_mix) {
            return Err(ZolError::Config(format!(
                "latent mix must lie in [0, 1], got {}",
                self.latent_mix
            )));
        }
        if !(self.lr_final_ratio > 0.0 && self.lr_final_ratio <= 1.0) {
            return Err(ZolError::Config(format!(
                "final learning-rate ratio must lie in (0, 1], got {}",
                self.lr_final_ratio
            )));
        }
        Ok(())
    }

    /// Learning rate used at `step`.
    pub fn lr_at(&self, step: usize) -> f64 {
        if self.train_steps <= 1 || self.lr_final_ratio == 1.0 {
            return self.lr;
        }
        let progress = step as f64 / (self.train_steps - 1) as f64;
        let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        self.lr * (self.lr_final_ratio + (1.0 - self.lr_final_ratio) * cosine)
    }
}

/// One minibatch in network-ready form.
#[derive(Clone, Debug)]
pub struct FbBatch {
    pub states: Matrix,
    pub actions: Vec<usize>,
    pub next_states: Matrix,
    /// Backward-network inputs of the positive samples.
    pub positives: Matrix,
    /// Backward-network inputs of the current pairs (state-action variant).
    pub current: Option<Matrix>,
}

impl FbBatch {
    pub fn len(&self) -> usize {
        self.states.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Dataset columns stacked once for fast minibatch gathers.
#[derive(Clone, Debug)]
pub struct PreparedData {
    states: Matrix,
    actions: Vec<usize>,
    next_states: Matrix,
    plus_states: Matrix,
    /// `[s | one_hot(a)]` rows when the backward network sees actions.
    pairs: Option<Matrix>,
}

impl PreparedData {
    pub fn new(model: &FbModel, dataset: &OfflineDataset) -> Result<Self> {
        if dataset.state_dim != model.state_dim {
            return Err(ZolError::Shape(format!(
                "dataset state dim {} does not match model state dim {}",
                dataset.state_dim, model.state_dim
            )));
        }
        let stack = |field: fn(&TransitionRecord) -> &[f64]| {
            let mut data = Vec::with_capacity(dataset.len() * model.state_dim);
            for r in &dataset.records {
                data.extend_from_slice(field(r));
            }
            Matrix::from_vec(dataset.len(), model.state_dim, data)
        };
        let states = stack(|r| &r.s);
        let next_states = stack(|r| &r.s_next);
        let plus_states = stack(|r| &r.s_plus);
        let actions: Vec<usize> = dataset.records.iter().map(|r| model.record_action(r)).collect();
        let pairs = model.b_uses_action.then(|| model.b_input(&states, Some(&actions)));
        Ok(Self {
            states,
            actions,
            next_states,
            plus_states,
            pairs,
        })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Backward-network inputs for every record.
    pub fn b_inputs(&self) -> &Matrix {
        self.pairs.as_ref().unwrap_or(&self.states)
    }

    /// Batch at `idx`. State positives come from each record's `s_plus`;
    /// pair positives are the records at `pos_idx`.
    pub fn batch(&self, idx: &[usize], pos_idx: &[usize]) -> FbBatch {
        let states = self.states.select_rows(idx);
        let actions = idx.iter().map(|&i| self.actions[i]).collect();
        let next_states = self.next_states.select_rows(idx);
        let (positives, current) = match &self.pairs {
            Some(p) => (p.select_rows(pos_idx), Some(p.select_rows(idx))),
            None => (self.plus_states.select_rows(idx), None),
        };
        FbBatch {
            states,
            actions,
            next_states,
            positives,
            current,
        }
    }

    pub fn sample_batch(&self, n: usize, rng: &mut impl Rng) -> FbBatch {
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..self.len())).collect();
        let pos: Vec<usize> = (0..n).map(|_| rng.random_range(0..self.len())).collect();
        self.batch(&idx, &pos)
    }

    /// Training latents: sphere draws with probability `mix`, otherwise the
    /// projected backward embedding of a random record.
    pub fn sample_latents(&self, model: &FbModel, n: usize, mix: f64, rng: &mut impl Rng) -> Matrix {
        let mut out = Matrix::zeros(n, model.d);
        let anchors: Vec<usize> = (0..n).map(|_| rng.random_range(0..self.len())).collect();
        let b = model.backward_embed(&self.b_inputs().select_rows(&anchors));
        for i in 0..n {
            let z = if rng.random::<f64>() < mix {
                sphere_latent(model.d, rng)
            } else {
                project_z(b.row_slice(i)).unwrap_or_else(|_| sphere_latent(model.d, rng))
            };
            out.row_slice_mut(i).copy_from_slice(&z);
        }
        out
    }
}

/// Taped loss with handles to the online parameters.
pub struct FbLoss {
    pub graph: Graph,
    pub loss: NodeId,
    pub forward_nodes: MlpNodes,
    pub backward_nodes: MlpNodes,
}

impl FbLoss {
    pub fn value(&self) -> f64 {
        self.graph.value(self.loss).get(0, 0)
    }

    /// Flat gradients for the forward and backward networks.
    pub fn gradients(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let grads = self.graph.backward(self.loss)?;
        Ok((
            self.forward_nodes.flat_grads(&grads),
            self.backward_nodes.flat_grads(&grads),
        ))
    }
}

/// All-pairs TD loss: every row's `F(s, a, z)` is scored against every
/// positive in the batch, plus the orthonormality penalty on `B(s+)`.
pub fn fb_td_loss(model: &FbModel, batch: &FbBatch, zs: &Matrix, ortho_coef: f64) -> Result<FbLoss> {
    let n = batch.len();
    if n == 0 {
        return Err(ZolError::Shape("empty batch".into()));
    }
    if zs.shape() != (n, model.d) {
        return Err(ZolError::Shape(format!(
            "latent batch is {:?}, expected ({n}, {})",
            zs.shape(),
            model.d
        )));
    }
    let b_width = model.backward.input_dim();
    let rows_ok = batch.actions.len() == n
        && batch.states.shape() == (n, model.state_dim)
        && batch.next_states.shape() == (n, model.state_dim)
        && batch.positives.shape() == (n, b_width)
        && batch.current.as_ref().is_none_or(|c| c.shape() == (n, b_width));
    if !rows_ok {
        return Err(ZolError::Shape("batch columns disagree in length or width".into()));
    }
    if model.b_uses_action && batch.current.is_none() {
        return Err(ZolError::Shape("state-action model needs current pairs".into()));
    }
    if batch.actions.iter().any(|&a| a >= model.n_actions()) {
        return Err(ZolError::Shape("action index out of range".into()));
    }

    let next_actions = model.greedy_actions(&batch.next_states, zs);
    let f_next = model
        .forward_target
        .forward(&model.f_input(&batch.next_states, &next_actions, zs));
    let b_pos_target = model.backward_target.forward(&batch.positives);
    let bootstrap = f_next.matmul(&b_pos_target.transpose()).map(|v| model.gamma * v);

    let mut g = Graph::new();
    let forward_nodes = model.forward.register(&mut g)?;
    let backward_nodes = model.backward.register(&mut g)?;

    let x_f = g.constant(model.f_input(&batch.states, &batch.actions, zs))?;
    let f = forward_nodes.forward(&mut g, &model.forward, x_f)?;
    let x_pos = g.constant(batch.positives.clone())?;
    let b_pos = backward_nodes.forward(&mut g, &model.backward, x_pos)?;

    let b_pos_t = g.transpose(b_pos)?;
    let m_online = g.matmul(f, b_pos_t)?;
    let target = g.constant(bootstrap)?;
    let delta = g.sub(m_online, target)?;
    let sq = g.square(delta)?;
    let td = g.mean(sq)?;

    let x_cur = g.constant(batch.current.clone().unwrap_or_else(|| batch.next_states.clone()))?;
    let b_cur = backward_nodes.forward(&mut g, &model.backward, x_cur)?;
    let diag = g.row_dot(f, b_cur)?;
    let diag_mean = g.mean(diag)?;
    let linear = g.scale(diag_mean, -2.0)?;

    let gram = g.matmul(b_pos_t, b_pos)?;
    let gram = g.scale(gram, 1.0 / n as f64)?;
    let eye = g.constant(Matrix::identity(model.d))?;
    let off = g.sub(gram, eye)?;
    let off_sq = g.square(off)?;
    let ortho = g.sum(off_sq)?;
    let ortho = g.scale(ortho, ortho_coef)?;

    let partial = g.add(td, linear)?;
    let loss = g.add(partial, ortho)?;
    Ok(FbLoss {
        graph: g,
        loss,
        forward_nodes,
        backward_nodes,
    })
}

/// Fresh model trained on `dataset`; returns the model and per-step losses.
pub fn train_fb(
    dataset: &OfflineDataset,
    arch: &FbArch,
    actions: ActionSpace,
    cfg: &FbTrainConfig,
) -> Result<(FbModel, Vec<f64>)> {
    let mut model = FbModel::new(arch, dataset.state_dim, actions, cfg.seed)?;
    let trace = continue_training(&mut model, dataset, cfg)?;
    Ok((model, trace))
}

/// Runs `cfg.train_steps` updates on an existing model.
pub fn continue_training(model: &mut FbModel, dataset: &OfflineDataset, cfg: &FbTrainConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if dataset.len() < cfg.batch_size {
        return Err(ZolError::Precondition(format!(
            "dataset has {} records, fewer than batch size {}",
            dataset.len(),
            cfg.batch_size
        )));
    }
    if cfg.train_steps == 0 {
        return Ok(Vec::new());
    }
    let data = PreparedData::new(model, dataset)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed_f00d));
    let mut f_adam = AdamState::new(model.forward.num_params());
    let mut b_adam = AdamState::new(model.backward.num_params());
    let mut trace = Vec::with_capacity(cfg.train_steps);

    for step in 0..cfg.train_steps {
        let batch = data.sample_batch(cfg.batch_size, &mut rng);
        let zs = data.sample_latents(model, cfg.batch_size, cfg.latent_mix, &mut rng);
        let diverged = |e: ZolError| ZolError::Diverged {
            step,
            msg: e.to_string(),
        };
        let loss = fb_td_loss(model, &batch, &zs, cfg.ortho_coef).map_err(diverged)?;
        let value = loss.value();
        if !value.is_finite() {
            return Err(ZolError::Diverged {
                step,
                msg: format!("loss is {value}"),
            });
        }
        let (f_grad, b_grad) = loss.gradients().map_err(diverged)?;

        let lr = cfg.lr_at(step);
        let mut f_params = model.forward.flat_params();
        adam_step(&mut f_params, &f_grad, &mut f_adam, lr).map_err(diverged)?;
        model.forward.set_flat_params(&f_params)?;
        let mut b_params = model.backward.flat_params();
        adam_step(&mut b_params, &b_grad, &mut b_adam, lr).map_err(diverged)?;
        model.backward.set_flat_params(&b_params)?;

        model.forward_target.polyak_update(&model.forward, cfg.polyak_tau);
        model.backward_target.polyak_update(&model.backward, cfg.polyak_tau);

        if step % 500 == 0 {
            debug!("fb step {step}: loss {value:.5}");
        }
        trace.push(value);
    }
    Ok(trace)
}

/// Means over consecutive windows of `window` losses; a short tail forms
/// its own window.
pub fn window_means(trace: &[f64], window: usize) -> Vec<f64> {
    trace
        .chunks(window.max(1))
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect()
}
