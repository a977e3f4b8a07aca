//! Multilayer perceptrons with a fast inference path and a taped path.

use rand::Rng;

use super::graph::{Gradients, Graph, NodeId};
use super::matrix::Matrix;
use crate::error::{Result, ZolError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputActivation {
    Identity,
    /// Rescales each output row to Euclidean norm `sqrt(width)`.
    L2Normalize,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Relu => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Tanh),
            1 => Some(Activation::Relu),
            _ => None,
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "tanh" => Some(Activation::Tanh),
            "relu" => Some(Activation::Relu),
            _ => None,
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }
}

impl OutputActivation {
    pub fn code(self) -> u8 {
        match self {
            OutputActivation::Identity => 0,
            OutputActivation::L2Normalize => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(OutputActivation::Identity),
            1 => Some(OutputActivation::L2Normalize),
            _ => None,
        }
    }
}

/// Fully connected network. Weights are stored `fan_in x fan_out` so a
/// batch `x` (one sample per row) maps to `x * W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    widths: Vec<usize>,
    weights: Vec<Matrix>,
    biases: Vec<Matrix>,
    hidden: Activation,
    output: OutputActivation,
}

/// Parameter nodes of one [`Mlp`] registered on a [`Graph`].
#[derive(Clone, Debug)]
pub struct MlpNodes {
    weights: Vec<NodeId>,
    biases: Vec<NodeId>,
}

impl Mlp {
    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn new(widths: &[usize], hidden: Activation, output: OutputActivation, rng: &mut impl Rng) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(ZolError::Config(format!(
                "mlp widths must list at least two positive sizes, got {widths:?}"
            )));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)).collect();
            weights.push(Matrix::from_vec(fan_in, fan_out, data));
            biases.push(Matrix::zeros(1, fan_out));
        }
        Ok(Self {
            widths: widths.to_vec(),
            weights,
            biases,
            hidden,
            output,
        })
    }

    /// Rebuilds a network from explicit layers, validating shapes.
    pub fn from_layers(
        weights: Vec<Matrix>,
        biases: Vec<Matrix>,
        hidden: Activation,
        output: OutputActivation,
    ) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(ZolError::Shape("layer count mismatch".into()));
        }
        let mut widths = vec![weights[0].rows()];
        for (w, b) in weights.iter().zip(&biases) {
            if w.rows() != *widths.last().unwrap() || b.shape() != (1, w.cols()) {
                return Err(ZolError::Shape("inconsistent layer shapes".into()));
            }
            if !w.is_finite() || !b.is_finite() {
                return Err(ZolError::Numeric("non-finite layer parameters".into()));
            }
            widths.push(w.cols());
        }
        Ok(Self {
            widths,
            weights,
            biases,
            hidden,
            output,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Matrix] {
        &self.biases
    }

    pub fn num_params(&self) -> usize {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.len() + b.len())
            .sum()
    }

    /// Untaped forward pass over a batch.
    pub fn forward(&self, x: &Matrix) -> Matrix {
        assert_eq!(x.cols(), self.input_dim(), "mlp input width mismatch");
        let last = self.weights.len() - 1;
        let mut h = x.clone();
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut next = h.matmul(w);
            next.add_row_in_place(b.data());
            if i < last {
                let act = self.hidden;
                next.data_mut().iter_mut().for_each(|v| *v = act.apply(*v));
            }
            h = next;
        }
        if self.output == OutputActivation::L2Normalize {
            let scale = (self.output_dim() as f64).sqrt();
            for r in 0..h.rows() {
                let row = h.row_slice_mut(r);
                let n = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                row.iter_mut().for_each(|v| *v *= scale / n);
            }
        }
        h
    }

    pub fn register(&self, g: &mut Graph) -> Result<MlpNodes> {
        let mut weights = Vec::with_capacity(self.weights.len());
        let mut biases = Vec::with_capacity(self.biases.len());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            weights.push(g.param(w.clone())?);
            biases.push(g.param(b.clone())?);
        }
        Ok(MlpNodes { weights, biases })
    }

    /// Registers the parameters as constants (no gradient flows into them).
    pub fn register_frozen(&self, g: &mut Graph) -> Result<MlpNodes> {
        let mut weights = Vec::with_capacity(self.weights.len());
        let mut biases = Vec::with_capacity(self.biases.len());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            weights.push(g.constant(w.clone())?);
            biases.push(g.constant(b.clone())?);
        }
        Ok(MlpNodes { weights, biases })
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b.data());
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(ZolError::Shape(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut off = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let n = w.len();
            w.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
            let n = b.len();
            b.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// `self <- (1 - tau) * self + tau * online`.
    pub fn polyak_update(&mut self, online: &Mlp, tau: f64) {
        if tau == 0.0 {
            return;
        }
        let pairs = self
            .weights
            .iter_mut()
            .zip(&online.weights)
            .chain(self.biases.iter_mut().zip(&online.biases));
        for (t, o) in pairs {
            t.data_mut()
                .iter_mut()
                .zip(o.data())
                .for_each(|(t, o)| *t = (1.0 - tau) * *t + tau * o);
        }
    }
}

impl MlpNodes {
    /// Taped forward pass through the registered parameters.
    pub fn forward(&self, g: &mut Graph, mlp: &Mlp, x: NodeId) -> Result<NodeId> {
        let last = self.weights.len() - 1;
        let mut h = x;
        for (i, (&w, &b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let lin = g.matmul(h, w)?;
            h = g.add(lin, b)?;
            if i < last {
                h = match mlp.hidden {
                    Activation::Tanh => g.tanh(h)?,
                    Activation::Relu => g.relu(h)?,
                };
            }
        }
        if mlp.output == OutputActivation::L2Normalize {
            let norms = g.row_l2_norm(h)?;
            let unit = g.div(h, norms)?;
            h = g.scale(unit, (mlp.output_dim() as f64).sqrt())?;
        }
        Ok(h)
    }

    /// Gradients flattened in [`Mlp::flat_params`] order.
    pub fn flat_grads(&self, grads: &Gradients) -> Vec<f64> {
        let mut out = Vec::new();
        for (&w, &b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(grads.wrt(w).data());
            out.extend_from_slice(grads.wrt(b).data());
        }
        out
    }

    /// Every parameter node, weights and biases interleaved per layer.
    pub fn nodes(&self) -> Vec<NodeId> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(&w, &b)| [w, b])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net(output: OutputActivation) -> Mlp {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        Mlp::new(&[3, 5, 4], Activation::Tanh, output, &mut rng).unwrap()
    }

    #[test]
    fn taped_and_fast_paths_agree() {
        for output in [OutputActivation::Identity, OutputActivation::L2Normalize] {
            let mlp = net(output);
            let x = Matrix::from_vec(2, 3, vec![0.1, -0.4, 0.9, 1.2, 0.3, -0.7]);
            let mut g = Graph::new();
            let nodes = mlp.register(&mut g).unwrap();
            let xi = g.constant(x.clone()).unwrap();
            let y = nodes.forward(&mut g, &mlp, xi).unwrap();
            let fast = mlp.forward(&x);
            for (a, b) in g.value(y).data().iter().zip(fast.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn init_within_glorot_bounds() {
        let mlp = net(OutputActivation::Identity);
        let limit = (6.0f64 / 8.0).sqrt();
        assert!(mlp.weights()[0].data().iter().all(|w| w.abs() <= limit));
        assert!(mlp.biases().iter().all(|b| b.data().iter().all(|&v| v == 0.0)));
        assert_eq!(mlp.num_params(), 3 * 5 + 5 + 5 * 4 + 4);
    }

    #[test]
    fn l2_normalized_rows_have_sqrt_width_norm() {
        let mlp = net(OutputActivation::L2Normalize);
        let x = Matrix::from_vec(1, 3, vec![0.3, 0.2, -0.5]);
        let y = mlp.forward(&x);
        assert!((y.frobenius_norm() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn flat_params_round_trip_and_polyak() {
        let mut a = net(OutputActivation::Identity);
        let flat = a.flat_params();
        a.set_flat_params(&flat).unwrap();
        assert_eq!(a.flat_params(), flat);
        assert!(a.set_flat_params(&flat[1..]).is_err());

        let mut target = a.clone();
        let online = Mlp::new(
            &[3, 5, 4],
            Activation::Tanh,
            OutputActivation::Identity,
            &mut ChaCha8Rng::seed_from_u64(99),
        )
        .unwrap();
        target.polyak_update(&online, 0.0);
        assert_eq!(target, a);
        target.polyak_update(&online, 1.0);
        assert_eq!(target.flat_params(), online.flat_params());
    }

    #[test]
    fn rejects_degenerate_widths() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(Mlp::new(&[3], Activation::Relu, OutputActivation::Identity, &mut rng).is_err());
        assert!(Mlp::new(&[3, 0, 1], Activation::Relu, OutputActivation::Identity, &mut rng).is_err());
    }
}
