//! Test-time latent adaptation: zero-shot task inference, the low-rank
//! density-ratio weights, and the regularized latent optimization loop.

mod sampler;

pub use sampler::{ResetSampler, TabularStarts};

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{adam_step, clip_grad_norm, softplus, AdamState, Graph, Matrix, NodeId};
use crate::envs::{OfflineDataset, TransitionRecord};
use crate::error::{Result, ZolError};
use crate::fbmodel::{project_z, sphere_latent, FbModel};

#[derive(Clone, Debug, PartialEq)]
pub struct ZolParams {
    pub lr: f64,
    pub steps: usize,
    pub lambda_chi: f64,
    pub lambda_trust: f64,
    pub weight_clip: f64,
    pub reset_samples: usize,
    pub batch_size: usize,
    pub norm_eps: f64,
    pub grad_clip: f64,
    pub seed: u64,
    /// Center rewards by the mean over all labeled dataset records instead
    /// of the batch mean.
    pub global_centering: bool,
}

impl Default for ZolParams {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            steps: 200,
            lambda_chi: 0.001,
            lambda_trust: 0.02,
            weight_clip: 100.0,
            reset_samples: 256,
            batch_size: 1024,
            norm_eps: 1e-6,
            grad_clip: 10.0,
            seed: 0,
            global_centering: false,
        }
    }
}

impl ZolParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr", self.lr),
            ("weight_clip", self.weight_clip),
            ("norm_eps", self.norm_eps),
            ("grad_clip", self.grad_clip),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ZolError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("lambda_chi", self.lambda_chi), ("lambda_trust", self.lambda_trust)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ZolError::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        if self.reset_samples == 0 || self.batch_size == 0 {
            return Err(ZolError::Config("reset_samples and batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Inferred task latent; `fallback` marks a zero task embedding replaced
/// by a seeded sphere latent.
#[derive(Clone, Debug, PartialEq)]
pub struct InferredLatent {
    pub z: Vec<f64>,
    pub fallback: bool,
}

/// `project_z(mean_i B(x_i) r_i)` over backward-network inputs `b_inputs`.
pub fn infer_task_latent(model: &FbModel, b_inputs: &Matrix, rewards: &[f64], seed: u64) -> Result<InferredLatent> {
    if b_inputs.rows() == 0 || b_inputs.rows() != rewards.len() {
        return Err(ZolError::Shape(format!(
            "need matching nonempty inputs and rewards, got {} and {}",
            b_inputs.rows(),
            rewards.len()
        )));
    }
    let b = model.backward_embed(b_inputs);
    let n = rewards.len() as f64;
    let mut c = vec![0.0; model.d];
    for (i, &r) in rewards.iter().enumerate() {
        for (ck, bk) in c.iter_mut().zip(b.row_slice(i)) {
            *ck += bk * r / n;
        }
    }
    match project_z(&c) {
        Ok(z) => Ok(InferredLatent { z, fallback: false }),
        Err(_) => {
            warn!("task embedding is zero; falling back to a random latent");
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok(InferredLatent {
                z: sphere_latent(model.d, &mut rng),
                fallback: true,
            })
        }
    }
}

/// Mean forward embedding over cached reset states at their greedy actions.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardExpectation {
    pub mu: Vec<f64>,
    pub reset_states: Matrix,
    pub actions: Vec<usize>,
}

pub fn estimate_forward_expectation(model: &FbModel, reset_states: &Matrix, z: &[f64]) -> Result<ForwardExpectation> {
    let n = reset_states.rows();
    if n == 0 {
        return Err(ZolError::Precondition("need at least one reset state".into()));
    }
    let zs = Matrix::repeat_row(z, n);
    let actions = model.greedy_actions(reset_states, &zs);
    let f = model.forward_embed(reset_states, &actions, &zs);
    let mut mu = vec![0.0; model.d];
    for i in 0..n {
        for (m, v) in mu.iter_mut().zip(f.row_slice(i)) {
            *m += v / n as f64;
        }
    }
    if mu.iter().any(|v| !v.is_finite()) {
        return Err(ZolError::Numeric("forward expectation is not finite".into()));
    }
    Ok(ForwardExpectation {
        mu,
        reset_states: reset_states.clone(),
        actions,
    })
}

/// Shaped ratio weights for the rows of `b_inputs` and their logits.
pub fn ratio_weights(
    model: &FbModel,
    mu: &[f64],
    b_inputs: &Matrix,
    params: &ZolParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if b_inputs.rows() == 0 {
        return Err(ZolError::Precondition("empty batch".into()));
    }
    let b = model.backward_embed(b_inputs);
    Ok(shape_weights(&b, mu, model.gamma, params))
}

/// Weights from precomputed backward embeddings.
pub fn shape_weights(b: &Matrix, mu: &[f64], gamma: f64, params: &ZolParams) -> (Vec<f64>, Vec<f64>) {
    let logits: Vec<f64> = (0..b.rows())
        .map(|i| (1.0 - gamma) * b.row_slice(i).iter().zip(mu).map(|(x, y)| x * y).sum::<f64>())
        .collect();
    let raw: Vec<f64> = logits.iter().map(|&l| softplus(l)).collect();
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    let weights = raw
        .iter()
        .map(|w| (w / (mean + params.norm_eps)).min(params.weight_clip))
        .collect();
    (weights, logits)
}

/// Scalar diagnostics of one objective evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ObjectiveStats {
    pub j_ret: f64,
    pub chi2: f64,
    pub trust: f64,
    pub total: f64,
    pub w_min: f64,
    pub w_mean: f64,
    pub w_max: f64,
}

/// Taped objective with the latent leaf.
pub struct ZolObjective {
    pub graph: Graph,
    pub loss: NodeId,
    pub z: NodeId,
    pub stats: ObjectiveStats,
}

/// Per-step inputs of [`zol_objective`].
pub struct ObjectiveBatch<'a> {
    /// Backward-network inputs of the batch records.
    pub b_inputs: &'a Matrix,
    pub rewards: &'a [f64],
    /// Mean subtracted from the rewards; the batch mean when `None`.
    pub baseline: Option<f64>,
}

/// `-J + lambda_chi * chi2 + lambda_trust * |P(z) - P(z_init)|^2` with the
/// greedy reset actions held fixed.
pub fn zol_objective(
    model: &FbModel,
    z: &[f64],
    z_init: &[f64],
    batch: &ObjectiveBatch,
    reset_states: &Matrix,
    params: &ZolParams,
) -> Result<ZolObjective> {
    let n = batch.rewards.len();
    if n == 0 || batch.b_inputs.rows() != n {
        return Err(ZolError::Shape(format!(
            "batch has {} inputs and {} rewards",
            batch.b_inputs.rows(),
            n
        )));
    }
    if z.len() != model.d || z_init.len() != model.d {
        return Err(ZolError::Shape("latent dimension mismatch".into()));
    }
    let n_reset = reset_states.rows();
    if n_reset == 0 {
        return Err(ZolError::Precondition("need at least one reset state".into()));
    }
    let zs = Matrix::repeat_row(z, n_reset);
    let actions = model.greedy_actions(reset_states, &zs);
    let sa = model.f_input(reset_states, &actions, &Matrix::zeros(n_reset, model.d));
    let sa_width = sa.cols() - model.d;
    let sa_only = Matrix::from_vec(
        n_reset,
        sa_width,
        (0..n_reset)
            .flat_map(|i| sa.row_slice(i)[..sa_width].to_vec())
            .collect(),
    );
    let b_batch = model.backward_embed(batch.b_inputs);
    let baseline = batch
        .baseline
        .unwrap_or_else(|| batch.rewards.iter().sum::<f64>() / n as f64);
    let centered: Vec<f64> = batch.rewards.iter().map(|r| r - baseline).collect();

    let mut g = Graph::new();
    let z_node = g.param(Matrix::row(z))?;
    let f_nodes = model.forward.register_frozen(&mut g)?;
    let sa_node = g.constant(sa_only)?;
    let zeros = g.constant(Matrix::zeros(n_reset, model.d))?;
    let z_rows = g.add(zeros, z_node)?;
    let x = g.concat_cols(&[sa_node, z_rows])?;
    let f = f_nodes.forward(&mut g, &model.forward, x)?;
    let mu = g.mean_rows(f)?;

    let b_node = g.constant(b_batch)?;
    let mu_t = g.transpose(mu)?;
    let dots = g.matmul(b_node, mu_t)?;
    let logits = g.scale(dots, 1.0 - model.gamma)?;
    let raw = g.softplus(logits)?;
    let raw_mean = g.mean(raw)?;
    let denom = g.add_const(raw_mean, params.norm_eps)?;
    let normalized = g.div(raw, denom)?;
    let w = g.min_const(normalized, params.weight_clip)?;

    let r_node = g.constant(Matrix::column(&centered))?;
    let wr = g.mul(w, r_node)?;
    let j = g.mean(wr)?;
    let dev = g.add_const(w, -1.0)?;
    let dev_sq = g.square(dev)?;
    let chi2 = g.mean(dev_sq)?;

    let norm = g.l2_norm(z_node)?;
    let unit = g.div(z_node, norm)?;
    let pz = g.scale(unit, (model.d as f64).sqrt())?;
    let anchor = g.constant(Matrix::row(&project_z(z_init)?))?;
    let gap = g.sub(pz, anchor)?;
    let gap_sq = g.square(gap)?;
    let trust = g.sum(gap_sq)?;

    let neg_j = g.scale(j, -1.0)?;
    let chi_term = g.scale(chi2, params.lambda_chi)?;
    let trust_term = g.scale(trust, params.lambda_trust)?;
    let partial = g.add(neg_j, chi_term)?;
    let loss = g.add(partial, trust_term)?;

    let wv = g.value(w).data();
    let stats = ObjectiveStats {
        j_ret: g.value(j).get(0, 0),
        chi2: g.value(chi2).get(0, 0),
        trust: g.value(trust).get(0, 0),
        total: g.value(loss).get(0, 0),
        w_min: wv.iter().cloned().fold(f64::INFINITY, f64::min),
        w_mean: wv.iter().sum::<f64>() / wv.len() as f64,
        w_max: wv.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    };
    Ok(ZolObjective {
        graph: g,
        loss,
        z: z_node,
        stats,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptResult {
    pub z_init: Vec<f64>,
    pub z_final: Vec<f64>,
    pub trace: Vec<ObjectiveStats>,
    pub steps_run: usize,
    pub fallback: bool,
}

impl AdaptResult {
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("step,j_ret,chi2,trust,total,w_min,w_mean,w_max\n");
        for (t, s) in self.trace.iter().enumerate() {
            out.push_str(&format!(
                "{t},{},{},{},{},{},{},{}\n",
                s.j_ret, s.chi2, s.trust, s.total, s.w_min, s.w_mean, s.w_max
            ));
        }
        out
    }
}

/// One value per line under a `z` header.
pub fn vector_csv(z: &[f64]) -> String {
    let mut out = String::from("z\n");
    for v in z {
        out.push_str(&format!("{v}\n"));
    }
    out
}

/// Reward-labeled dataset rows used for task inference.
#[derive(Clone, Debug)]
pub struct LabeledSamples {
    pub b_inputs: Matrix,
    pub rewards: Vec<f64>,
}

/// Backward-network inputs of the given records.
pub fn record_inputs(model: &FbModel, records: &[&TransitionRecord]) -> Matrix {
    let mut data = Vec::with_capacity(records.len() * model.state_dim);
    for r in records {
        data.extend_from_slice(&r.s);
    }
    let states = Matrix::from_vec(records.len(), model.state_dim, data);
    let actions: Vec<usize> = records.iter().map(|r| model.record_action(r)).collect();
    model.b_input(&states, Some(&actions))
}

/// `n` records drawn with replacement under `seed`, labeled by `reward`.
pub fn label_samples(
    model: &FbModel,
    dataset: &OfflineDataset,
    reward: &dyn Fn(&TransitionRecord) -> f64,
    n: usize,
    seed: u64,
) -> Result<LabeledSamples> {
    if dataset.is_empty() || n == 0 {
        return Err(ZolError::Precondition("need a nonempty dataset and n >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<&TransitionRecord> = (0..n)
        .map(|_| &dataset.records[rng.random_range(0..dataset.len())])
        .collect();
    Ok(LabeledSamples {
        b_inputs: record_inputs(model, &picks),
        rewards: picks.iter().map(|r| reward(r)).collect(),
    })
}

/// Number of labeled samples used for task inference.
pub const INFERENCE_SAMPLES: usize = 4096;

/// Infers `z0` from [`INFERENCE_SAMPLES`] labeled records, caches the reset
/// states, then runs `params.steps` clipped Adam steps on the latent.
pub fn zol_adapt(
    model: &FbModel,
    dataset: &OfflineDataset,
    reward: &dyn Fn(&TransitionRecord) -> f64,
    starts: &dyn ResetSampler,
    params: &ZolParams,
) -> Result<AdaptResult> {
    params.validate()?;
    let labeled = label_samples(model, dataset, reward, INFERENCE_SAMPLES, params.seed)?;
    let inferred = infer_task_latent(model, &labeled.b_inputs, &labeled.rewards, params.seed)?;
    adapt_from(model, dataset, reward, starts, params, inferred)
}

/// The optimization loop from a given initial latent.
pub fn adapt_from(
    model: &FbModel,
    dataset: &OfflineDataset,
    reward: &dyn Fn(&TransitionRecord) -> f64,
    starts: &dyn ResetSampler,
    params: &ZolParams,
    init: InferredLatent,
) -> Result<AdaptResult> {
    params.validate()?;
    if dataset.is_empty() {
        return Err(ZolError::Precondition("adaptation needs a nonempty dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed.wrapping_add(0xada9));
    let reset_states = starts.sample(params.reset_samples, &mut rng)?;
    let baseline = if params.global_centering {
        Some(dataset.records.iter().map(reward).sum::<f64>() / dataset.len() as f64)
    } else {
        None
    };
    let z_init = init.z.clone();
    let mut z = init.z;
    let mut adam = AdamState::new(model.d);
    let mut trace = Vec::with_capacity(params.steps);
    for step in 0..params.steps {
        let picks: Vec<&TransitionRecord> = (0..params.batch_size)
            .map(|_| &dataset.records[rng.random_range(0..dataset.len())])
            .collect();
        let b_inputs = record_inputs(model, &picks);
        let rewards: Vec<f64> = picks.iter().map(|r| reward(r)).collect();
        let batch = ObjectiveBatch {
            b_inputs: &b_inputs,
            rewards: &rewards,
            baseline,
        };
        let last = trace.last().copied().unwrap_or_default();
        let diverged = |msg: String| ZolError::Diverged {
            step,
            msg: format!("{msg}; last diagnostics {last:?}"),
        };
        let obj =
            zol_objective(model, &z, &z_init, &batch, &reset_states, params).map_err(|e| diverged(e.to_string()))?;
        if !obj.stats.total.is_finite() {
            return Err(diverged(format!("objective is {}", obj.stats.total)));
        }
        let grads = obj.graph.backward(obj.loss)?;
        let grad = clip_grad_norm(grads.wrt(obj.z).data(), params.grad_clip);
        adam_step(&mut z, &grad, &mut adam, params.lr).map_err(|e| diverged(e.to_string()))?;
        if z.iter().any(|v| !v.is_finite()) {
            return Err(diverged("latent is not finite".into()));
        }
        trace.push(obj.stats);
    }
    Ok(AdaptResult {
        z_final: project_z(&z)?,
        z_init,
        steps_run: trace.len(),
        trace,
        fallback: init.fallback,
    })
}
