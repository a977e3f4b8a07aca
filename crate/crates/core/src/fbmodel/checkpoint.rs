//! Binary model checkpoints.
//!
//! Layout (little-endian): magic `ZOLM`, version `u32`, `d`, state dim and
//! action count as `u32`, `gamma` as `f64`, action-space kind `u8` with the
//! compass step `f64`, a `u8` flag for state-action backward inputs, then
//! the forward, backward, forward-target and backward-target networks. Each
//! network stores its layer count `u32`, hidden and output activation codes,
//! and per layer `rows u32, cols u32`, the row-major weights and the bias.

use std::fs;
use std::path::Path;

use super::model::{ActionSpace, FbModel};
use crate::diffcore::{Activation, Matrix, Mlp, OutputActivation};
use crate::envs::ByteReader;
use crate::error::{Result, ZolError};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ZOLM";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_mlp(out: &mut Vec<u8>, mlp: &Mlp) {
    put_u32(out, mlp.weights().len());
    out.push(mlp.hidden_activation().code());
    out.push(mlp.output_activation().code());
    for (w, b) in mlp.weights().iter().zip(mlp.biases()) {
        put_u32(out, w.rows());
        put_u32(out, w.cols());
        for v in w.data().iter().chain(b.data()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

fn read_mlp(rd: &mut ByteReader) -> Result<Mlp> {
    let at = rd.pos as u64;
    let layers = rd.u32()? as usize;
    if layers == 0 || layers > 64 {
        return Err(ZolError::format(at, format!("implausible layer count {layers}")));
    }
    let at = rd.pos as u64;
    let hidden = Activation::from_code(rd.u8()?).ok_or_else(|| ZolError::format(at, "unknown hidden activation"))?;
    let output =
        OutputActivation::from_code(rd.u8()?).ok_or_else(|| ZolError::format(at + 1, "unknown output activation"))?;
    let mut weights = Vec::with_capacity(layers);
    let mut biases = Vec::with_capacity(layers);
    for _ in 0..layers {
        let at = rd.pos as u64;
        let rows = rd.u32()? as usize;
        let cols = rd.u32()? as usize;
        if rows == 0 || cols == 0 || rows.saturating_mul(cols) > rd.remaining() / 8 {
            return Err(ZolError::format(at, format!("bad layer shape {rows}x{cols}")));
        }
        weights.push(Matrix::from_vec(rows, cols, rd.f64s(rows * cols)?));
        biases.push(Matrix::from_vec(1, cols, rd.f64s(cols)?));
    }
    Mlp::from_layers(weights, biases, hidden, output).map_err(|e| ZolError::format(at, e.to_string()))
}

impl FbModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        put_u32(&mut out, self.d);
        put_u32(&mut out, self.state_dim);
        put_u32(&mut out, self.n_actions());
        out.extend_from_slice(&self.gamma.to_le_bytes());
        match self.actions {
            ActionSpace::Compass { step } => {
                out.push(0);
                out.extend_from_slice(&step.to_le_bytes());
            }
            ActionSpace::Discrete(_) => {
                out.push(1);
                out.extend_from_slice(&0f64.to_le_bytes());
            }
        }
        out.push(u8::from(self.b_uses_action));
        for net in [
            &self.forward,
            &self.backward,
            &self.forward_target,
            &self.backward_target,
        ] {
            put_mlp(&mut out, net);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut rd = ByteReader::new(bytes);
        if rd.take(4)? != CHECKPOINT_MAGIC {
            return Err(ZolError::format(0, "bad magic, expected ZOLM"));
        }
        let version = rd.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(ZolError::format(4, format!("unsupported checkpoint version {version}")));
        }
        let d = rd.u32()? as usize;
        let state_dim = rd.u32()? as usize;
        let n_actions = rd.u32()? as usize;
        let at = rd.pos as u64;
        let gamma = rd.f64()?;
        if !(0.0..1.0).contains(&gamma) {
            return Err(ZolError::format(at, format!("gamma {gamma} outside [0, 1)")));
        }
        let at = rd.pos as u64;
        let kind = rd.u8()?;
        let step = rd.f64()?;
        let actions = match (kind, n_actions) {
            (0, 9) => ActionSpace::Compass { step },
            (1, n) if n > 0 => ActionSpace::Discrete(n),
            _ => return Err(ZolError::format(at, "inconsistent action space")),
        };
        let b_uses_action = rd.u8()? != 0;
        let at = rd.pos as u64;
        let forward = read_mlp(&mut rd)?;
        let backward = read_mlp(&mut rd)?;
        let forward_target = read_mlp(&mut rd)?;
        let backward_target = read_mlp(&mut rd)?;
        if rd.remaining() != 0 {
            return Err(ZolError::format(rd.pos as u64, "trailing bytes"));
        }
        let b_in = state_dim + if b_uses_action { n_actions } else { 0 };
        let consistent = forward.input_dim() == state_dim + n_actions + d
            && forward.output_dim() == d
            && backward.input_dim() == b_in
            && backward.output_dim() == d
            && forward_target.widths() == forward.widths()
            && backward_target.widths() == backward.widths();
        if !consistent {
            return Err(ZolError::format(at, "network shapes disagree with the header"));
        }
        Ok(Self {
            forward,
            backward,
            forward_target,
            backward_target,
            d,
            gamma,
            actions,
            state_dim,
            b_uses_action,
        })
    }
}

pub fn save_model(model: &FbModel, path: &Path) -> Result<()> {
    fs::write(path, model.to_bytes()).map_err(|e| ZolError::io(path, e))
}

pub fn load_model(path: &Path) -> Result<FbModel> {
    let bytes = fs::read(path).map_err(|e| ZolError::io(path, e))?;
    FbModel::from_bytes(&bytes)
}
