//! Fully-connected networks: affine layers, optional batch normalization,
//! ReLU/tanh hidden activations, and output activations that keep decisions
//! inside the problem's feasible set by construction.

use crate::autodiff::{bias_init, xavier_init, AdError, BatchNorm, NodeId, Tape, Tensor};
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum MlpError {
    #[error("node {node} out of range for {count} nodes")]
    NodeOutOfRange { node: usize, count: usize },
    #[error("partition dims sum to {sum} but tensor has {width} columns")]
    PartitionMismatch { sum: usize, width: usize },
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("checkpoint tensor {name}: expected shape {expected:?}, found {found:?}")]
    TensorShape { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("checkpoint missing tensor {name}")]
    MissingTensor { name: String },
    #[error(transparent)]
    Ad(#[from] AdError),
}

pub type MlpResult<T> = Result<T, MlpError>;

/// Forward-pass mode. `Train` normalizes by batch statistics and updates
/// running averages; both eval modes replay stored statistics and never
/// mutate. The eval split controls whether downstream binarization samples
/// or takes signs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
    EvalStochastic,
}

impl Mode {
    pub fn is_train(self) -> bool {
        matches!(self, Mode::Train)
    }

    pub fn stochastic_binarize(self) -> bool {
        matches!(self, Mode::Train | Mode::EvalStochastic)
    }
}

/// Decision sets the output activation must respect.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FeasibleSet {
    /// `x >= 0`.
    NonNeg,
    /// `lo <= x <= hi`.
    Box { lo: f64, hi: f64 },
}

impl FeasibleSet {
    /// Euclidean projection (exact, plain clamping).
    pub fn project(&self, x: f64) -> f64 {
        match *self {
            FeasibleSet::NonNeg => x.max(0.0),
            FeasibleSet::Box { lo, hi } => x.clamp(lo, hi),
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        match *self {
            FeasibleSet::NonNeg => x >= 0.0,
            FeasibleSet::Box { lo, hi } => (lo..=hi).contains(&x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Linear,
    /// Feasibility-enforcing output map. Nonnegative sets use ReLU; boxes
    /// use a scaled sigmoid `lo + (hi - lo) * sigmoid(z)`, which keeps
    /// gradients alive everywhere instead of dying at a clamped boundary.
    Project(FeasibleSet),
}

#[derive(Debug, Clone)]
pub struct LayerSpec {
    pub out_dim: usize,
    pub activation: Activation,
    pub batch_norm: bool,
}

impl LayerSpec {
    pub fn hidden(out_dim: usize) -> Self {
        LayerSpec { out_dim, activation: Activation::Relu, batch_norm: true }
    }

    pub fn output(out_dim: usize, activation: Activation) -> Self {
        LayerSpec { out_dim, activation, batch_norm: false }
    }
}

#[derive(Clone)]
struct Layer {
    w: Tensor,
    b: Tensor,
    bn: Option<BatchNorm>,
    activation: Activation,
}

#[derive(Clone)]
pub struct Mlp {
    input_dim: usize,
    layers: Vec<Layer>,
}

impl Mlp {
    /// Builds the network with Xavier weights (Gaussian, variance
    /// `1/fan_in`) and constant `0.01` biases.
    pub fn new(input_dim: usize, specs: &[LayerSpec], rng: &mut ChaCha8Rng) -> Self {
        let mut layers = Vec::with_capacity(specs.len());
        let mut fan_in = input_dim;
        for spec in specs {
            layers.push(Layer {
                w: xavier_init(fan_in, spec.out_dim, rng),
                b: bias_init(spec.out_dim),
                bn: spec.batch_norm.then(|| BatchNorm::new(spec.out_dim)),
                activation: spec.activation,
            });
            fan_in = spec.out_dim;
        }
        Mlp { input_dim, layers }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.w.cols()).unwrap_or(self.input_dim)
    }

    pub fn hidden_layer_count(&self) -> usize {
        self.layers.len().saturating_sub(1)
    }

    /// Widths of every layer output, input first.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim];
        dims.extend(self.layers.iter().map(|l| l.w.cols()));
        dims
    }

    /// Training-mode forward. Returns the output node and the parameter
    /// leaves in the same order as [`Mlp::params_mut`].
    pub fn forward_train(&mut self, tape: &mut Tape, x: NodeId) -> MlpResult<(NodeId, Vec<NodeId>)> {
        let mut param_ids = Vec::new();
        let mut h = x;
        for layer in &mut self.layers {
            let w = tape.param(&layer.w);
            let b = tape.param(&layer.b);
            param_ids.push(w);
            param_ids.push(b);
            let z = tape.matmul(h, w)?;
            let mut z = tape.add(z, b)?;
            if let Some(bn) = layer.bn.as_mut() {
                let gamma = tape.param(&bn.gamma);
                let beta = tape.param(&bn.beta);
                param_ids.push(gamma);
                param_ids.push(beta);
                z = bn.forward_train(tape, z, gamma, beta)?;
            }
            h = apply_activation(tape, z, layer.activation)?;
        }
        Ok((h, param_ids))
    }

    /// Evaluation-mode forward: running statistics, constant parameters,
    /// no mutation.
    pub fn forward_eval(&self, tape: &mut Tape, x: NodeId) -> MlpResult<NodeId> {
        let mut h = x;
        for layer in &self.layers {
            let w = tape.leaf(&layer.w);
            let b = tape.leaf(&layer.b);
            let z = tape.matmul(h, w)?;
            let mut z = tape.add(z, b)?;
            if let Some(bn) = layer.bn.as_ref() {
                let gamma = tape.leaf(&bn.gamma);
                let beta = tape.leaf(&bn.beta);
                z = bn.forward_eval(tape, z, gamma, beta)?;
            }
            h = apply_activation(tape, z, layer.activation)?;
        }
        Ok(h)
    }

    /// Convenience plain-tensor evaluation.
    pub fn eval(&self, x: &Tensor) -> MlpResult<Tensor> {
        let mut tape = Tape::new();
        let xid = tape.leaf(x);
        let out = self.forward_eval(&mut tape, xid)?;
        Ok(tape.value(out).clone())
    }

    /// Trainable tensors: per layer `w`, `b`, then `gamma`, `beta` when the
    /// layer is normalized. Running statistics are state, not parameters.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            out.push(&mut layer.w);
            out.push(&mut layer.b);
            if let Some(bn) = layer.bn.as_mut() {
                out.push(&mut bn.gamma);
                out.push(&mut bn.beta);
            }
        }
        out
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            out.push(format!("layer{i}.w"));
            out.push(format!("layer{i}.b"));
            if layer.bn.is_some() {
                out.push(format!("layer{i}.gamma"));
                out.push(format!("layer{i}.beta"));
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.w.len() + l.b.len() + l.bn.as_ref().map(|bn| bn.gamma.len() + bn.beta.len()).unwrap_or(0))
            .sum()
    }

    /// All tensors that define the network state, including running
    /// statistics, in checkpoint order.
    fn state_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            out.push((format!("layer{i}.w"), &layer.w));
            out.push((format!("layer{i}.b"), &layer.b));
            if let Some(bn) = layer.bn.as_ref() {
                out.push((format!("layer{i}.gamma"), &bn.gamma));
                out.push((format!("layer{i}.beta"), &bn.beta));
                out.push((format!("layer{i}.running_mean"), &bn.running_mean));
                out.push((format!("layer{i}.running_var"), &bn.running_var));
            }
        }
        out
    }

    /// Writes the checkpoint text format (see [`save_tensors`]).
    pub fn save(&self, path: &Path) -> MlpResult<()> {
        save_tensors(path, &self.state_tensors())
    }

    /// Loads a checkpoint previously written by [`Mlp::save`] into a
    /// network of identical architecture.
    pub fn load(&mut self, path: &Path) -> MlpResult<()> {
        let loaded = load_tensors(path)?;
        let assign = |name: &str, dst: &mut Tensor| -> MlpResult<()> {
            let src = loaded
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| MlpError::MissingTensor { name: name.to_string() })?;
            if src.1.shape() != dst.shape() {
                return Err(MlpError::TensorShape {
                    name: name.to_string(),
                    expected: dst.shape().to_vec(),
                    found: src.1.shape().to_vec(),
                });
            }
            *dst = src.1.clone();
            Ok(())
        };
        for i in 0..self.layers.len() {
            let names: Vec<String> = ["w", "b"].iter().map(|s| format!("layer{i}.{s}")).collect();
            assign(&names[0], &mut self.layers[i].w)?;
            assign(&names[1], &mut self.layers[i].b)?;
            if self.layers[i].bn.is_some() {
                let bn_names: Vec<String> = ["gamma", "beta", "running_mean", "running_var"]
                    .iter()
                    .map(|s| format!("layer{i}.{s}"))
                    .collect();
                let bn = self.layers[i].bn.as_mut().unwrap();
                assign(&bn_names[0], &mut bn.gamma)?;
                assign(&bn_names[1], &mut bn.beta)?;
                assign(&bn_names[2], &mut bn.running_mean)?;
                assign(&bn_names[3], &mut bn.running_var)?;
            }
        }
        Ok(())
    }
}

fn apply_activation(tape: &mut Tape, z: NodeId, act: Activation) -> MlpResult<NodeId> {
    let out = match act {
        Activation::Relu => tape.relu(z)?,
        Activation::Tanh => tape.tanh(z)?,
        Activation::Sigmoid => tape.sigmoid(z)?,
        Activation::Linear => z,
        Activation::Project(FeasibleSet::NonNeg) => tape.relu(z)?,
        Activation::Project(FeasibleSet::Box { lo, hi }) => {
            let s = tape.sigmoid(z)?;
            let scaled = tape.scale(s, hi - lo)?;
            if lo == 0.0 {
                scaled
            } else {
                tape.add_scalar(scaled, lo)?
            }
        }
    };
    Ok(out)
}

// ── node output masking ─────────────────────────────────────────────────

/// Column range `(start, len)` of node `i` in a tensor whose columns are
/// the concatenation of per-node blocks of widths `dims`.
pub fn node_slice(dims: &[usize], node: usize) -> MlpResult<(usize, usize)> {
    if node >= dims.len() {
        return Err(MlpError::NodeOutOfRange { node, count: dims.len() });
    }
    let start = dims[..node].iter().sum();
    Ok((start, dims[node]))
}

/// Restricts a stacked per-node tensor to node `i`'s block on the tape.
pub fn mask_node_output(tape: &mut Tape, x: NodeId, dims: &[usize], node: usize) -> MlpResult<NodeId> {
    let width = tape.value(x).cols();
    let sum: usize = dims.iter().sum();
    if sum != width {
        return Err(MlpError::PartitionMismatch { sum, width });
    }
    let (start, len) = node_slice(dims, node)?;
    Ok(tape.slice_cols(x, start, len)?)
}

/// Plain-tensor version of [`mask_node_output`].
pub fn mask_node_columns(x: &Tensor, dims: &[usize], node: usize) -> MlpResult<Tensor> {
    let sum: usize = dims.iter().sum();
    if sum != x.cols() {
        return Err(MlpError::PartitionMismatch { sum, width: x.cols() });
    }
    let (start, len) = node_slice(dims, node)?;
    Ok(x.slice_cols(start, len))
}

// ── checkpoint text format ──────────────────────────────────────────────
//
//   pdnet-checkpoint v1
//   tensor <name> <rows> <cols>
//   <rows*cols row-major values, space separated, shortest round-trip>
//
// Float formatting uses Rust's shortest representation, which round-trips
// f64 exactly, so save/load/save is byte-identical.

const CHECKPOINT_HEADER: &str = "pdnet-checkpoint v1";

pub fn save_tensors(path: &Path, tensors: &[(String, &Tensor)]) -> MlpResult<()> {
    let mut out = String::new();
    out.push_str(CHECKPOINT_HEADER);
    out.push('\n');
    for (name, t) in tensors {
        writeln!(out, "tensor {} {} {}", name, t.rows(), t.cols()).expect("string write");
        let mut first = true;
        for v in t.data() {
            if !first {
                out.push(' ');
            }
            write!(out, "{v}").expect("string write");
            first = false;
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_tensors(path: &Path) -> MlpResult<Vec<(String, Tensor)>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l == CHECKPOINT_HEADER => {}
        other => {
            return Err(MlpError::Parse {
                line: 1,
                reason: format!("expected header {CHECKPOINT_HEADER:?}, found {:?}", other.map(|o| o.1)),
            })
        }
    }
    let mut out = Vec::new();
    while let Some((ln, header)) = lines.next() {
        if header.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 4 || parts[0] != "tensor" {
            return Err(MlpError::Parse { line: ln + 1, reason: format!("bad tensor header {header:?}") });
        }
        let name = parts[1].to_string();
        let rows: usize = parts[2]
            .parse()
            .map_err(|_| MlpError::Parse { line: ln + 1, reason: "bad row count".into() })?;
        let cols: usize = parts[3]
            .parse()
            .map_err(|_| MlpError::Parse { line: ln + 1, reason: "bad column count".into() })?;
        let (dln, data_line) = lines
            .next()
            .ok_or_else(|| MlpError::Parse { line: ln + 2, reason: "missing data line".into() })?;
        let data: Result<Vec<f64>, _> = data_line.split_whitespace().map(str::parse).collect();
        let data = data.map_err(|e| MlpError::Parse { line: dln + 1, reason: format!("bad float: {e}") })?;
        if data.len() != rows * cols {
            return Err(MlpError::Parse {
                line: dln + 1,
                reason: format!("expected {} values, found {}", rows * cols, data.len()),
            });
        }
        out.push((name, Tensor::from_vec(rows, cols, data)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_batch(rows: usize, cols: usize, seed: u64) -> Tensor {
        use rand::Rng;
        let mut r = rng(seed);
        Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| r.gen_range(-3.0..3.0)).collect())
    }

    #[test]
    fn zero_weight_relu_net_outputs_bias() {
        let mut net = Mlp::new(3, &[LayerSpec::output(2, Activation::Project(FeasibleSet::NonNeg))], &mut rng(1));
        for p in net.params_mut() {
            if p.rows() > 1 {
                *p = Tensor::zeros(p.rows(), p.cols());
            }
        }
        let y = net.eval(&random_batch(5, 3, 2)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.01), "{y:?}");
    }

    #[test]
    fn nonneg_output_is_always_feasible() {
        let mut r = rng(3);
        let mut net = Mlp::new(
            4,
            &[
                LayerSpec::hidden(16),
                LayerSpec::hidden(16),
                LayerSpec::output(2, Activation::Project(FeasibleSet::NonNeg)),
            ],
            &mut r,
        );
        // Exercise both batch-stat and running-stat paths.
        let mut tape = Tape::new();
        let x = tape.leaf(&random_batch(1000, 4, 4));
        let (train_out, _) = net.forward_train(&mut tape, x).unwrap();
        assert!(tape.value(train_out).data().iter().all(|&v| v >= 0.0));
        for chunk in 0..100 {
            let y = net.eval(&random_batch(1000, 4, 100 + chunk)).unwrap();
            assert!(y.data().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn box_output_stays_strictly_inside() {
        let mut r = rng(5);
        let hi = 10.0;
        let mut net = Mlp::new(
            4,
            &[LayerSpec::hidden(8), LayerSpec::output(1, Activation::Project(FeasibleSet::Box { lo: 0.0, hi }))],
            &mut r,
        );
        let mut tape = Tape::new();
        let x = tape.leaf(&random_batch(500, 4, 6));
        let (out, _) = net.forward_train(&mut tape, x).unwrap();
        assert!(tape.value(out).data().iter().all(|&v| v > 0.0 && v < hi));
    }

    #[test]
    fn projection_is_exact_clamp() {
        let b = FeasibleSet::Box { lo: 0.0, hi: 2.0 };
        assert_eq!(b.project(-1.0), 0.0);
        assert_eq!(b.project(0.7), 0.7);
        assert_eq!(b.project(3.0), 2.0);
        // Idempotent.
        assert_eq!(b.project(b.project(5.0)), 2.0);
        assert_eq!(FeasibleSet::NonNeg.project(-0.3), 0.0);
    }

    #[test]
    fn box_gradient_alive_away_from_saturation() {
        // Moderate pre-activations must leave a usable gradient; a hard
        // clamp would zero it outside the box.
        let mut net = Mlp::new(1, &[LayerSpec::output(1, Activation::Project(FeasibleSet::Box { lo: 0.0, hi: 5.0 }))], &mut rng(7));
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::from_vec(2, 1, vec![1.0, -1.0]));
        let (out, params) = net.forward_train(&mut tape, x).unwrap();
        let loss = tape.sum(out, None).unwrap();
        let grads = tape.backward(loss).unwrap();
        let gw = grads.get(params[0]).unwrap();
        assert!(gw.data().iter().any(|&g| g.abs() > 1e-4), "dead gradient {gw:?}");
    }

    #[test]
    fn node_masking_selects_contiguous_block() {
        let dims = [1usize, 1, 1];
        let x = Tensor::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let third = mask_node_columns(&x, &dims, 2).unwrap();
        assert_eq!(third.data(), &[3.0, 6.0]);

        let wide = Tensor::from_vec(1, 5, vec![10.0, 20.0, 30.0, 40.0, 50.0]);
        let mid = mask_node_columns(&wide, &[2, 2, 1], 1).unwrap();
        assert_eq!(mid.data(), &[30.0, 40.0]);
    }

    #[test]
    fn node_masking_rejects_bad_partition() {
        let x = Tensor::from_vec(1, 3, vec![0.0; 3]);
        let err = mask_node_columns(&x, &[2, 2], 0).unwrap_err();
        assert!(matches!(err, MlpError::PartitionMismatch { sum: 4, width: 3 }));
        let err = mask_node_columns(&x, &[1, 1, 1], 5).unwrap_err();
        assert!(matches!(err, MlpError::NodeOutOfRange { node: 5, count: 3 }));
    }

    #[test]
    fn blocks_reassemble_to_original() {
        let dims = [2usize, 3, 1];
        let x = random_batch(4, 6, 8);
        let parts: Vec<Tensor> = (0..3).map(|i| mask_node_columns(&x, &dims, i).unwrap()).collect();
        let refs: Vec<&Tensor> = parts.iter().collect();
        assert_eq!(Tensor::concat_cols(&refs), x);
    }

    #[test]
    fn checkpoint_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let specs = [LayerSpec::hidden(6), LayerSpec::output(2, Activation::Project(FeasibleSet::NonNeg))];
        let mut net = Mlp::new(3, &specs, &mut rng(9));
        // Give the running stats non-default values.
        let mut tape = Tape::new();
        let x = tape.leaf(&random_batch(50, 3, 10));
        net.forward_train(&mut tape, x).unwrap();
        net.save(&path).unwrap();

        let mut restored = Mlp::new(3, &specs, &mut rng(999));
        restored.load(&path).unwrap();
        let probe = random_batch(20, 3, 11);
        assert_eq!(net.eval(&probe).unwrap(), restored.eval(&probe).unwrap());

        // Save of the restored network is byte-identical.
        let path2 = dir.path().join("net2.ckpt");
        restored.save(&path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn checkpoint_shape_mismatch_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let net = Mlp::new(3, &[LayerSpec::output(2, Activation::Linear)], &mut rng(12));
        net.save(&path).unwrap();
        let mut other = Mlp::new(4, &[LayerSpec::output(2, Activation::Linear)], &mut rng(13));
        let err = other.load(&path).unwrap_err();
        assert!(matches!(err, MlpError::TensorShape { .. }), "{err}");
    }
}
