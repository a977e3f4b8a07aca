//! Line-oriented run configuration: `key = value`, `#` starts a comment.

use std::path::{Path, PathBuf};

use crate::adapt::ZolParams;
use crate::diffcore::{Activation, OutputActivation};
use crate::error::{Result, ZolError};
use crate::fbmodel::{FbArch, FbTrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnvKind {
    Donut,
    Gridworld,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub env: EnvKind,
    pub grid_width: usize,
    pub grid_height: usize,
    pub n_records: usize,
    pub sigma: f64,
    pub seed: u64,
    pub arch: FbArch,
    pub train: FbTrainConfig,
    pub zol: ZolParams,
    pub task: Option<String>,
    pub seeds: Vec<u64>,
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub instances: usize,
    pub max_states: usize,
    pub max_actions: usize,
    pub tolerance: f64,
}

pub const DEFAULT_N_RECORDS: usize = 50_000;
pub const DEFAULT_SIGMA: f64 = 0.6;

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: EnvKind::Donut,
            grid_width: 3,
            grid_height: 3,
            n_records: DEFAULT_N_RECORDS,
            sigma: DEFAULT_SIGMA,
            seed: 0,
            arch: FbArch::default(),
            train: FbTrainConfig::default(),
            zol: ZolParams::default(),
            task: None,
            seeds: vec![0, 1, 2, 3, 4],
            dataset: None,
            checkpoint: None,
            instances: 50,
            max_states: 20,
            max_actions: 4,
            tolerance: 1e-8,
        }
    }
}

/// Every key [`RunConfig::parse`] accepts.
pub const KNOWN_KEYS: [&str; 38] = [
    "env",
    "grid_width",
    "grid_height",
    "n_records",
    "sigma",
    "seed",
    "d",
    "gamma",
    "f_hidden",
    "b_hidden",
    "activation",
    "b_output",
    "b_uses_action",
    "fb_steps",
    "fb_batch_size",
    "fb_lr",
    "polyak_tau",
    "ortho_coef",
    "latent_mix",
    "lr_final_ratio",
    "eta",
    "steps",
    "lambda_chi",
    "lambda_trust",
    "weight_clip",
    "reset_samples",
    "batch_size",
    "norm_eps",
    "grad_clip",
    "global_centering",
    "task",
    "seeds",
    "dataset",
    "checkpoint",
    "instances",
    "max_states",
    "max_actions",
    "tolerance",
];

fn bad(line: usize, key: &str, msg: impl std::fmt::Display) -> ZolError {
    ZolError::Config(format!("line {line}: `{key}`: {msg}"))
}

fn num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse()
        .map_err(|e| bad(line, key, format!("cannot parse `{v}`: {e}")))
}

fn list<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|p| num(line, key, p.trim())).collect()
}

fn flag(line: usize, key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(bad(line, key, format!("expected a boolean, got `{v}`"))),
    }
}

fn in_range(line: usize, key: &str, v: f64, lo: f64, hi: f64, hi_open: bool) -> Result<f64> {
    let ok = v.is_finite() && v >= lo && if hi_open { v < hi } else { v <= hi };
    if ok {
        Ok(v)
    } else {
        let close = if hi_open { ')' } else { ']' };
        Err(bad(line, key, format!("{v} outside [{lo}, {hi}{close}")))
    }
}

fn positive(line: usize, key: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(bad(line, key, format!("must be positive, got {v}")))
    }
}

fn at_least_one(line: usize, key: &str, v: usize) -> Result<usize> {
    if v >= 1 {
        Ok(v)
    } else {
        Err(bad(line, key, "must be >= 1"))
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body
                .split_once('=')
                .ok_or_else(|| ZolError::Config(format!("line {line}: expected `key = value`")))?;
            cfg.set(line, key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ZolError::io(path, e))?;
        Self::parse(&text)
    }

    fn set(&mut self, line: usize, key: &str, v: &str) -> Result<()> {
        match key {
            "env" => {
                self.env = match v {
                    "donut" => EnvKind::Donut,
                    "gridworld" => EnvKind::Gridworld,
                    _ => return Err(bad(line, key, format!("unknown env `{v}`; valid: donut, gridworld"))),
                }
            }
            "grid_width" => self.grid_width = at_least_one(line, key, num(line, key, v)?)?,
            "grid_height" => self.grid_height = at_least_one(line, key, num(line, key, v)?)?,
            "n_records" => self.n_records = num(line, key, v)?,
            "sigma" => self.sigma = positive(line, key, num(line, key, v)?)?,
            "seed" => self.seed = num(line, key, v)?,
            "d" => self.arch.d = at_least_one(line, key, num(line, key, v)?)?,
            "gamma" => self.arch.gamma = in_range(line, key, num(line, key, v)?, 0.0, 1.0, true)?,
            "f_hidden" => self.arch.f_hidden = list(line, key, v)?,
            "b_hidden" => self.arch.b_hidden = list(line, key, v)?,
            "activation" => {
                self.arch.hidden_activation = match v {
                    "relu" => Activation::Relu,
                    "tanh" => Activation::Tanh,
                    _ => return Err(bad(line, key, format!("unknown activation `{v}`; valid: relu, tanh"))),
                }
            }
            "b_output" => {
                self.arch.b_output = match v {
                    "identity" => OutputActivation::Identity,
                    "l2" => OutputActivation::L2Normalize,
                    _ => return Err(bad(line, key, format!("unknown output `{v}`; valid: identity, l2"))),
                }
            }
            "b_uses_action" => self.arch.b_uses_action = flag(line, key, v)?,
            "fb_steps" => self.train.train_steps = num(line, key, v)?,
            "fb_batch_size" => self.train.batch_size = at_least_one(line, key, num(line, key, v)?)?,
            "fb_lr" => self.train.lr = positive(line, key, num(line, key, v)?)?,
            "polyak_tau" => self.train.polyak_tau = in_range(line, key, num(line, key, v)?, 0.0, 1.0, false)?,
            "ortho_coef" => self.train.ortho_coef = in_range(line, key, num(line, key, v)?, 0.0, f64::MAX, false)?,
            "latent_mix" => self.train.latent_mix = in_range(line, key, num(line, key, v)?, 0.0, 1.0, false)?,
            "lr_final_ratio" => self.train.lr_final_ratio = in_range(line, key, num(line, key, v)?, 0.0, 1.0, false)?,
            "eta" => self.zol.lr = positive(line, key, num(line, key, v)?)?,
            "steps" => self.zol.steps = num(line, key, v)?,
            "lambda_chi" => self.zol.lambda_chi = in_range(line, key, num(line, key, v)?, 0.0, f64::MAX, false)?,
            "lambda_trust" => self.zol.lambda_trust = in_range(line, key, num(line, key, v)?, 0.0, f64::MAX, false)?,
            "weight_clip" => self.zol.weight_clip = positive(line, key, num(line, key, v)?)?,
            "reset_samples" => self.zol.reset_samples = at_least_one(line, key, num(line, key, v)?)?,
            "batch_size" => self.zol.batch_size = at_least_one(line, key, num(line, key, v)?)?,
            "norm_eps" => self.zol.norm_eps = positive(line, key, num(line, key, v)?)?,
            "grad_clip" => self.zol.grad_clip = positive(line, key, num(line, key, v)?)?,
            "global_centering" => self.zol.global_centering = flag(line, key, v)?,
            "task" => self.task = Some(v.to_string()),
            "seeds" => {
                self.seeds = list(line, key, v)?;
                if self.seeds.is_empty() {
                    return Err(bad(line, key, "needs at least one seed"));
                }
            }
            "dataset" => self.dataset = Some(PathBuf::from(v)),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(v)),
            "instances" => self.instances = at_least_one(line, key, num(line, key, v)?)?,
            "max_states" => self.max_states = in_range(line, key, num(line, key, v)?, 2.0, 200.0, false)? as usize,
            "max_actions" => self.max_actions = in_range(line, key, num(line, key, v)?, 1.0, 20.0, false)? as usize,
            "tolerance" => self.tolerance = positive(line, key, num(line, key, v)?)?,
            _ => return Err(bad(line, key, "unknown key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.zol.validate()?;
        if self.arch.f_hidden.contains(&0) || self.arch.b_hidden.contains(&0) {
            return Err(ZolError::Config("hidden widths must be >= 1".into()));
        }
        Ok(())
    }

    /// Trainer settings with the run seed applied.
    pub fn train_config(&self) -> FbTrainConfig {
        FbTrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_and_comments() {
        let cfg = RunConfig::parse(
            "# run\n sigma = 0.4  # inline\n\nseeds = 3, 4\nf_hidden = 16,8\nactivation = tanh\ntask = cross\n",
        )
        .unwrap();
        assert_eq!(cfg.sigma, 0.4);
        assert_eq!(cfg.seeds, vec![3, 4]);
        assert_eq!(cfg.arch.f_hidden, vec![16, 8]);
        assert_eq!(cfg.arch.hidden_activation, Activation::Tanh);
        assert_eq!(cfg.task.as_deref(), Some("cross"));
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_key_reports_line() {
        let err = RunConfig::parse("seed = 1\n\nlearning_rate = 3\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3") && msg.contains("learning_rate"), "{msg}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn ranges_are_enforced() {
        for text in [
            "gamma = 1.0",
            "sigma = 0",
            "eta = -1",
            "lambda_chi = -0.1",
            "reset_samples = 0",
            "seed = -3",
            "latent_mix = 2",
            "seeds =",
            "nonsense",
            "b_output = softmax",
            "f_hidden = 4,0",
        ] {
            assert!(matches!(RunConfig::parse(text), Err(ZolError::Config(_))), "{text}");
        }
    }

    #[test]
    fn every_known_key_is_accepted() {
        let sample = |k: &str| match k {
            "env" => "donut",
            "activation" => "relu",
            "b_output" => "l2",
            "b_uses_action" | "global_centering" => "false",
            "task" | "dataset" | "checkpoint" => "x",
            "f_hidden" | "b_hidden" | "seeds" => "4",
            "gamma" | "latent_mix" | "polyak_tau" | "lr_final_ratio" => "0.5",
            _ => "4",
        };
        for k in KNOWN_KEYS {
            RunConfig::parse(&format!("{k} = {}", sample(k))).unwrap();
        }
    }
}
