//! Distributed architecture: per-node quantizer/optimizer network pairs
//! exchanging bipolar messages over capacity-limited links.
//!
//! Node `i` observes only its own block `a_i` of the global observation.
//! Its quantizer maps `a_i` to a tanh-bounded vector of length
//! `L_i = sum_{j != i} B_ij` which is binarized and split into one segment
//! per destination, ordered by ascending destination index (skipping `i`;
//! the convention is arbitrary but fixed, training adapts to it). Each
//! optimizer then consumes `c_i = [a_i || v_1i || ... || v_Ni]` with
//! senders in ascending order and produces the node's transmit power.
//! Training runs the same primal-dual loop as the centralized policy over
//! the union of all 2N parameter sets; binarization is stochastic with
//! pass-through gradients during training and sign-based at evaluation.

use crate::autodiff::{NodeId, Tape, Tensor};
use crate::binarize::{binarize_eval, binarize_forward, tape_binarize};
use crate::mlp::{Activation, LayerSpec, Mlp, MlpError, MlpResult, Mode};
use crate::problems::{ProblemKind, ProblemSpec};
use crate::trainer::{derive_seed, train, Policy, PolicyForward, TrainConfig, TrainError, TrainReport};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum DistError {
    #[error("missing message from node {from} to node {to}")]
    MissingMessage { from: usize, to: usize },
    #[error("bit matrix must be {n}x{n} with a zero diagonal")]
    BadBitMatrix { n: usize },
    #[error("observation has {got} columns, topology expects {want}")]
    ObsWidth { got: usize, want: usize },
    #[error(transparent)]
    Mlp(#[from] MlpError),
    #[error(transparent)]
    Ad(#[from] crate::autodiff::AdError),
}

pub type DistResult<T> = Result<T, DistError>;

// ── topology ────────────────────────────────────────────────────────────

/// Link capacities `B_ij` (bits per channel use) for every ordered pair of
/// nodes. The diagonal is unused and kept at zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    n: usize,
    bits: Vec<usize>,
}

impl Topology {
    /// Same capacity on every link. Fractional capacities are floored.
    pub fn uniform(n: usize, b: f64) -> Self {
        let whole = b.max(0.0).floor() as usize;
        let mut bits = vec![whole; n * n];
        for i in 0..n {
            bits[i * n + i] = 0;
        }
        Topology { n, bits }
    }

    /// Explicit capacity matrix, row-major `bits[from * n + to]`.
    pub fn from_matrix(n: usize, bits: Vec<usize>) -> DistResult<Self> {
        if bits.len() != n * n || (0..n).any(|i| bits[i * n + i] != 0) {
            return Err(DistError::BadBitMatrix { n });
        }
        Ok(Topology { n, bits })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bits(&self, from: usize, to: usize) -> usize {
        self.bits[from * self.n + to]
    }

    /// Total outgoing message length of node `i`.
    pub fn outgoing_len(&self, i: usize) -> usize {
        (0..self.n).filter(|&j| j != i).map(|j| self.bits(i, j)).sum()
    }

    /// Total incoming message length of node `i`.
    pub fn incoming_len(&self, i: usize) -> usize {
        (0..self.n).filter(|&j| j != i).map(|j| self.bits(j, i)).sum()
    }

    /// Column offset of the segment destined to `to` inside the outgoing
    /// vector of `from` (destinations ascending, self skipped).
    pub fn segment_offset(&self, from: usize, to: usize) -> usize {
        (0..to).filter(|&j| j != from).map(|j| self.bits(from, j)).sum()
    }
}

// ── networks ────────────────────────────────────────────────────────────

/// One node's pair of networks. Nodes with no outgoing capacity carry no
/// quantizer.
pub struct NodeNet {
    pub quantizer: Option<Mlp>,
    pub optimizer: Mlp,
}

/// Hidden-layer counts and widths for the per-node networks:
/// `(optimizer hidden, optimizer width, quantizer hidden, quantizer width)`.
pub fn default_distributed_arch(problem: &ProblemSpec) -> (usize, usize, usize, usize) {
    match problem.kind {
        ProblemKind::IfcMinRate => (4, 20 * problem.n, 1, 20 * problem.n),
        _ => (3, 10 * problem.n, 1, 10 * problem.n),
    }
}

/// Binarized message segments, one per ordered pair with `B_ij > 0`.
pub struct MessageSet {
    n: usize,
    segs: Vec<Option<Tensor>>,
}

impl MessageSet {
    fn empty(n: usize) -> Self {
        MessageSet { n, segs: (0..n * n).map(|_| None).collect() }
    }

    fn insert(&mut self, from: usize, to: usize, seg: Tensor) {
        self.segs[from * self.n + to] = Some(seg);
    }

    pub fn get(&self, from: usize, to: usize) -> DistResult<&Tensor> {
        self.segs[from * self.n + to].as_ref().ok_or(DistError::MissingMessage { from, to })
    }

    /// Drops one segment; used to exercise the missing-message error path.
    pub fn remove(&mut self, from: usize, to: usize) {
        self.segs[from * self.n + to] = None;
    }
}

// ── policy ──────────────────────────────────────────────────────────────

/// The full set of node networks plus wiring, trainable through the
/// generic primal-dual loop. Parameter order is all quantizers in node
/// order, then all optimizers in node order, matching the forward pass.
pub struct DistributedPolicy {
    pub topology: Topology,
    pub nodes: Vec<NodeNet>,
    partition: Vec<usize>,
    offsets: Vec<usize>,
    binarize_rng: ChaCha8Rng,
}

impl DistributedPolicy {
    pub fn new(problem: &ProblemSpec, topology: Topology, init_rng: &mut ChaCha8Rng, binarize_seed: u64) -> Self {
        assert_eq!(topology.n(), problem.n, "topology size must match node count");
        let (opt_hidden, opt_width, quant_hidden, quant_width) = default_distributed_arch(problem);
        let partition = problem.obs_partition();
        let mut offsets = Vec::with_capacity(partition.len());
        let mut acc = 0;
        for &w in &partition {
            offsets.push(acc);
            acc += w;
        }
        let nodes = (0..problem.n)
            .map(|i| {
                let l_i = topology.outgoing_len(i);
                let quantizer = (l_i > 0).then(|| {
                    let mut specs: Vec<LayerSpec> =
                        (0..quant_hidden).map(|_| LayerSpec::hidden(quant_width)).collect();
                    specs.push(LayerSpec::output(l_i, Activation::Tanh));
                    Mlp::new(partition[i], &specs, init_rng)
                });
                let mut specs: Vec<LayerSpec> = (0..opt_hidden).map(|_| LayerSpec::hidden(opt_width)).collect();
                specs.push(LayerSpec::output(1, Activation::Project(problem.feasible_set())));
                let optimizer = Mlp::new(partition[i] + topology.incoming_len(i), &specs, init_rng);
                NodeNet { quantizer, optimizer }
            })
            .collect();
        DistributedPolicy {
            topology,
            nodes,
            partition,
            offsets,
            binarize_rng: ChaCha8Rng::seed_from_u64(binarize_seed),
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.partition.iter().sum()
    }

    fn check_obs(&self, cols: usize) -> DistResult<()> {
        let want = self.obs_dim();
        if cols != want {
            return Err(DistError::ObsWidth { got: cols, want });
        }
        Ok(())
    }

    /// Runs every quantizer on its observation block and binarizes the
    /// result: stochastic draws in train mode, sign in eval mode.
    pub fn quantize_all(&mut self, obs: &Tensor, mode: Mode) -> DistResult<MessageSet> {
        self.check_obs(obs.cols())?;
        let n = self.topology.n();
        let mut set = MessageSet::empty(n);
        for i in 0..n {
            let Some(q) = &self.nodes[i].quantizer else { continue };
            let a_i = obs.slice_cols(self.offsets[i], self.partition[i]);
            let v_hat = q.eval(&a_i)?;
            let stochastic = mode.is_train() || mode.stochastic_binarize();
            let v = if stochastic {
                binarize_forward(&v_hat, &mut self.binarize_rng)?.v
            } else {
                binarize_eval(&v_hat)?
            };
            for j in 0..n {
                let b = self.topology.bits(i, j);
                if j != i && b > 0 {
                    set.insert(i, j, v.slice_cols(self.topology.segment_offset(i, j), b));
                }
            }
        }
        Ok(set)
    }

    /// Builds every optimizer input `c_i` from observation blocks and
    /// received messages (senders ascending, self skipped).
    pub fn assemble_inputs(&self, obs: &Tensor, messages: &MessageSet) -> DistResult<Vec<Tensor>> {
        self.check_obs(obs.cols())?;
        let n = self.topology.n();
        let mut inputs = Vec::with_capacity(n);
        for i in 0..n {
            let mut parts = vec![obs.slice_cols(self.offsets[i], self.partition[i])];
            for j in 0..n {
                if j != i && self.topology.bits(j, i) > 0 {
                    parts.push(messages.get(j, i)?.clone());
                }
            }
            let refs: Vec<&Tensor> = parts.iter().collect();
            inputs.push(Tensor::concat_cols(&refs));
        }
        Ok(inputs)
    }

    /// One-shot protocol: quantize, exchange, optimize, concatenate. Each
    /// node's output reads only its own block and incoming messages.
    pub fn distributed_forward(&mut self, obs: &Tensor, mode: Mode) -> DistResult<Tensor> {
        let messages = self.quantize_all(obs, mode)?;
        let inputs = self.assemble_inputs(obs, &messages)?;
        let mut outs = Vec::with_capacity(self.nodes.len());
        for (node, c_i) in self.nodes.iter().zip(&inputs) {
            outs.push(node.optimizer.eval(c_i)?);
        }
        let refs: Vec<&Tensor> = outs.iter().collect();
        Ok(Tensor::concat_cols(&refs))
    }

    /// Writes one checkpoint file per network so a single node can be
    /// restored in isolation: `node{i}.quant.ckpt` and `node{i}.opt.ckpt`.
    pub fn save_dir(&self, dir: &Path) -> MlpResult<()> {
        std::fs::create_dir_all(dir).map_err(MlpError::Io)?;
        for (i, node) in self.nodes.iter().enumerate() {
            if let Some(q) = &node.quantizer {
                q.save(&dir.join(format!("node{i}.quant.ckpt")))?;
            }
            node.optimizer.save(&dir.join(format!("node{i}.opt.ckpt")))?;
        }
        Ok(())
    }

    pub fn load_dir(&mut self, dir: &Path) -> MlpResult<()> {
        for (i, node) in self.nodes.iter_mut().enumerate() {
            if let Some(q) = &mut node.quantizer {
                q.load(&dir.join(format!("node{i}.quant.ckpt")))?;
            }
            node.optimizer.load(&dir.join(format!("node{i}.opt.ckpt")))?;
        }
        Ok(())
    }
}

impl Policy for DistributedPolicy {
    fn forward(&mut self, tape: &mut Tape, obs: NodeId, mode: Mode) -> MlpResult<PolicyForward> {
        let n = self.topology.n();
        let mut params = Vec::new();

        // All quantizers first, binarized according to mode.
        let mut v_nodes: Vec<Option<NodeId>> = Vec::with_capacity(n);
        for i in 0..n {
            let a_i = tape.slice_cols(obs, self.offsets[i], self.partition[i])?;
            match &mut self.nodes[i].quantizer {
                Some(q) => {
                    let v_hat = if mode.is_train() {
                        let (out, p) = q.forward_train(tape, a_i)?;
                        params.extend(p);
                        out
                    } else {
                        q.forward_eval(tape, a_i)?
                    };
                    let stochastic = mode.is_train() || mode.stochastic_binarize();
                    let v = tape_binarize(tape, v_hat, stochastic, &mut self.binarize_rng)?;
                    v_nodes.push(Some(v));
                }
                None => v_nodes.push(None),
            }
        }

        // Message exchange and per-node optimization.
        let mut outs = Vec::with_capacity(n);
        for i in 0..n {
            let mut parts = vec![tape.slice_cols(obs, self.offsets[i], self.partition[i])?];
            for j in 0..n {
                let b = self.topology.bits(j, i);
                if j != i && b > 0 {
                    let v_j = v_nodes[j].expect("sender with positive bits has a quantizer");
                    parts.push(tape.slice_cols(v_j, self.topology.segment_offset(j, i), b)?);
                }
            }
            let c_i = tape.concat_cols(&parts)?;
            let out = if mode.is_train() {
                let (out, p) = self.nodes[i].optimizer.forward_train(tape, c_i)?;
                params.extend(p);
                out
            } else {
                self.nodes[i].optimizer.forward_eval(tape, c_i)?
            };
            outs.push(out);
        }
        let x = tape.concat_cols(&outs)?;
        Ok(PolicyForward { x, params })
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut quant = Vec::new();
        let mut opt = Vec::new();
        for node in &mut self.nodes {
            if let Some(q) = &mut node.quantizer {
                quant.extend(q.params_mut());
            }
            opt.extend(node.optimizer.params_mut());
        }
        quant.extend(opt);
        quant
    }

    fn param_names(&self) -> Vec<String> {
        let mut quant = Vec::new();
        let mut opt = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Some(q) = &node.quantizer {
                quant.extend(q.param_names().into_iter().map(|p| format!("node{i}.quant.{p}")));
            }
            opt.extend(node.optimizer.param_names().into_iter().map(|p| format!("node{i}.opt.{p}")));
        }
        quant.extend(opt);
        quant
    }

    fn reseed_stochastic(&mut self, seed: u64) {
        self.binarize_rng = ChaCha8Rng::seed_from_u64(seed);
    }
}

/// Builds a policy for the topology (network init from the `"init"`
/// stream, message sampling from the `"binarize"` stream of the config
/// seed) and trains it with the shared primal-dual loop.
pub fn train_distributed(
    problem: &ProblemSpec,
    topology: Topology,
    cfg: &TrainConfig,
) -> Result<(DistributedPolicy, TrainReport), TrainError> {
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "init"));
    let mut policy = DistributedPolicy::new(problem, topology, &mut init_rng, derive_seed(cfg.seed, "binarize"));
    let report = train(&mut policy, problem, cfg)?;
    Ok((policy, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::{evaluate, forward_decisions, EvalConfig};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn policy(problem: &ProblemSpec, b: f64, seed: u64) -> DistributedPolicy {
        let topo = Topology::uniform(problem.n, b);
        DistributedPolicy::new(problem, topo, &mut rng(seed), seed ^ 0xbeef)
    }

    #[test]
    fn topology_arithmetic() {
        let t = Topology::uniform(3, 2.0);
        for i in 0..3 {
            assert_eq!(t.outgoing_len(i), 4);
            assert_eq!(t.incoming_len(i), 4);
        }
        // Fractional capacities floor.
        assert_eq!(Topology::uniform(2, 2.7).bits(0, 1), 2);
        assert_eq!(Topology::uniform(2, 0.9).bits(0, 1), 0);
        // Node 0's segments: destination 1 at offset 0, destination 2 next.
        assert_eq!(t.segment_offset(0, 1), 0);
        assert_eq!(t.segment_offset(0, 2), 2);
        // Node 1 skips itself: destination 0 first, then 2.
        assert_eq!(t.segment_offset(1, 0), 0);
        assert_eq!(t.segment_offset(1, 2), 2);
    }

    #[test]
    fn bad_bit_matrix_is_rejected() {
        assert!(matches!(
            Topology::from_matrix(2, vec![1, 1, 1, 0]),
            Err(DistError::BadBitMatrix { n: 2 })
        ));
        assert!(Topology::from_matrix(2, vec![0, 3, 1, 0]).is_ok());
    }

    #[test]
    fn zero_capacity_drops_quantizers_and_messages() {
        let problem = ProblemSpec::cmac(2, 1.0, 1.0);
        let mut p = policy(&problem, 0.0, 1);
        assert!(p.nodes.iter().all(|n| n.quantizer.is_none()));
        let obs = problem.sample_obs(5, &mut rng(2));
        let msgs = p.quantize_all(&obs, Mode::Eval).unwrap();
        let inputs = p.assemble_inputs(&obs, &msgs).unwrap();
        for (i, c) in inputs.iter().enumerate() {
            assert_eq!(c.cols(), 2);
            for r in 0..5 {
                assert_eq!(c.get(r, 0), obs.get(r, 2 * i));
                assert_eq!(c.get(r, 1), obs.get(r, 2 * i + 1));
            }
        }
    }

    #[test]
    fn message_segments_are_bit_exact_and_bipolar() {
        let problem = ProblemSpec::ifc_sum(3, 1.0, 1.0);
        let mut p = policy(&problem, 2.0, 3);
        let obs = problem.sample_obs(7, &mut rng(4));
        let msgs = p.quantize_all(&obs, Mode::Eval).unwrap();
        for from in 0..3 {
            for to in 0..3 {
                if from == to {
                    continue;
                }
                let seg = msgs.get(from, to).unwrap();
                assert_eq!(seg.shape(), [7, 2]);
                assert!(seg.data().iter().all(|&v| v == 1.0 || v == -1.0));
            }
        }
    }

    #[test]
    fn missing_message_is_an_error() {
        let problem = ProblemSpec::cmac(2, 1.0, 1.0);
        let mut p = policy(&problem, 1.0, 5);
        let obs = problem.sample_obs(3, &mut rng(6));
        let mut msgs = p.quantize_all(&obs, Mode::Eval).unwrap();
        msgs.remove(1, 0);
        assert!(matches!(
            p.assemble_inputs(&obs, &msgs),
            Err(DistError::MissingMessage { from: 1, to: 0 })
        ));
    }

    #[test]
    fn assembly_is_deterministic() {
        let problem = ProblemSpec::ifc_sum(3, 1.0, 1.0);
        let mut p = policy(&problem, 1.0, 7);
        let obs = problem.sample_obs(4, &mut rng(8));
        let a = p.distributed_forward(&obs, Mode::Eval).unwrap();
        let b = p.distributed_forward(&obs, Mode::Eval).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn tape_eval_route_matches_plain_route() {
        let problem = ProblemSpec::cmac(2, 1.0, 1.0);
        let mut p = policy(&problem, 2.0, 9);
        let obs = problem.sample_obs(6, &mut rng(10));
        let plain = p.distributed_forward(&obs, Mode::Eval).unwrap();
        let taped = forward_decisions(&mut p, &obs, Mode::Eval).unwrap();
        assert_eq!(plain.data(), taped.data());
    }

    #[test]
    fn locality_limits_distinct_outputs() {
        // With a_0 pinned, x_0 can see the rest of the world only through
        // its M_0 = 1 incoming bits, so it takes at most 2 distinct values
        // over any number of perturbations of a_1.
        let problem = ProblemSpec::cmac(2, 1.0, 1.0);
        let mut p = policy(&problem, 1.0, 11);
        let mut sampler = rng(12);
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..300 {
            let mut obs = problem.sample_obs(1, &mut sampler);
            obs.set(0, 0, 0.7);
            obs.set(0, 1, 1.3);
            let x = p.distributed_forward(&obs, Mode::Eval).unwrap();
            seen.insert(x.get(0, 0).to_bits());
        }
        assert!(seen.len() <= 2, "x_0 took {} distinct values", seen.len());

        // Without incoming bits the output is pinned entirely by a_0.
        let mut p0 = policy(&problem, 0.0, 13);
        let mut seen0 = std::collections::BTreeSet::new();
        for _ in 0..50 {
            let mut obs = problem.sample_obs(1, &mut sampler);
            obs.set(0, 0, 0.7);
            obs.set(0, 1, 1.3);
            let x = p0.distributed_forward(&obs, Mode::Eval).unwrap();
            seen0.insert(x.get(0, 0).to_bits());
        }
        assert_eq!(seen0.len(), 1);
    }

    #[test]
    fn zero_weight_optimizers_ignore_messages() {
        let problem = ProblemSpec::ifc_sum(2, 1.0, 1.0);
        let mut p = policy(&problem, 2.0, 14);
        for node in &mut p.nodes {
            for t in node.optimizer.params_mut() {
                *t = Tensor::zeros(t.rows(), t.cols());
            }
        }
        let mut sampler = rng(15);
        let a = p.distributed_forward(&problem.sample_obs(4, &mut sampler), Mode::Eval).unwrap();
        let b = p.distributed_forward(&problem.sample_obs(4, &mut sampler), Mode::Eval).unwrap();
        assert_eq!(a.data(), b.data());
        // Every node collapses to the same projected constant.
        assert!(a.data().iter().all(|&v| v == a.get(0, 0)));
    }

    #[test]
    fn quantizer_gradients_flow_during_training() {
        let problem = ProblemSpec::cmac(2, 1.0, 1.0);
        let mut p = policy(&problem, 2.0, 16);
        let obs = problem.sample_obs(64, &mut rng(17));
        let mut tape = Tape::new();
        let obs_id = tape.leaf(&obs);
        let pf = p.forward(&mut tape, obs_id, Mode::Train).unwrap();
        let cost = problem.build_cost_mean(&mut tape, obs_id, pf.x).unwrap();
        let grads = tape.backward(cost).unwrap();
        let names = p.param_names();
        let mut quant_norm = 0.0;
        for (id, name) in pf.params.iter().zip(&names) {
            if name.contains("quant") {
                if let Some(g) = grads.get(*id) {
                    quant_norm += g.squared_norm();
                }
            }
        }
        assert!(quant_norm > 0.0, "no gradient reached the quantizers");
    }

    #[test]
    fn architecture_conforms_to_problem_family() {
        let p4 = ProblemSpec::ifc_sum(3, 1.0, 1.0);
        let p = policy(&p4, 2.0, 18);
        for node in &p.nodes {
            let q = node.quantizer.as_ref().unwrap();
            assert_eq!(q.layer_dims(), vec![3, 30, 4]);
            assert_eq!(node.optimizer.layer_dims(), vec![3 + 4, 30, 30, 30, 1]);
        }

        let p5 = ProblemSpec::ifc_min(3, 1.0, 1.0);
        let p = policy(&p5, 1.0, 19);
        for node in &p.nodes {
            let q = node.quantizer.as_ref().unwrap();
            assert_eq!(q.layer_dims(), vec![3, 60, 2]);
            assert_eq!(node.optimizer.layer_dims(), vec![3 + 2, 60, 60, 60, 60, 1]);
        }
    }

    #[test]
    fn per_node_checkpoints_roundtrip() {
        let problem = ProblemSpec::cmac(2, 1.0, 1.0);
        let mut p = policy(&problem, 1.0, 20);
        let obs = problem.sample_obs(5, &mut rng(21));
        let before = p.distributed_forward(&obs, Mode::Eval).unwrap();
        let dir = tempfile::tempdir().unwrap();
        p.save_dir(dir.path()).unwrap();

        let mut other = policy(&problem, 1.0, 22);
        let different = other.distributed_forward(&obs, Mode::Eval).unwrap();
        assert_ne!(before.data(), different.data());
        other.load_dir(dir.path()).unwrap();
        let restored = other.distributed_forward(&obs, Mode::Eval).unwrap();
        assert_eq!(before.data(), restored.data());
    }

    #[test]
    fn short_training_run_completes() {
        let problem = ProblemSpec::cmac(2, 1.0, 1.0);
        let cfg = TrainConfig {
            iters: 60,
            batch: 32,
            lr: 1e-3,
            lr_dual: 1e-3,
            checkpoint_every: 30,
            checkpoint_val_size: 64,
            seed: 23,
            grad_skip_norm: 1e6,
        };
        let (mut trained, report) = train_distributed(&problem, Topology::uniform(2, 1.0), &cfg).unwrap();
        assert_eq!(report.lambda.len(), 3);
        assert_eq!(report.log.rows.len(), 2);
        let eval = evaluate(&mut trained, &problem, &EvalConfig::new(500, 42)).unwrap();
        assert!(eval.metric_mean.is_finite());

        // Stochastic evaluation is reproducible through reseeding.
        let mut cfg_eval = EvalConfig::new(500, 42);
        cfg_eval.stochastic = true;
        let r1 = evaluate(&mut trained, &problem, &cfg_eval).unwrap();
        let r2 = evaluate(&mut trained, &problem, &cfg_eval).unwrap();
        assert_eq!(
            r1.metric_mean_stochastic.unwrap().to_bits(),
            r2.metric_mean_stochastic.unwrap().to_bits()
        );
    }

    #[test]
    fn quantize_all_rejects_wrong_width() {
        let problem = ProblemSpec::cmac(2, 1.0, 1.0);
        let mut p = policy(&problem, 1.0, 24);
        let obs = Tensor::zeros(3, 5);
        assert!(matches!(p.quantize_all(&obs, Mode::Eval), Err(DistError::ObsWidth { got: 5, want: 4 })));
    }
}
