//! Primal-dual training of power-control policies.
//!
//! Each iteration draws a fresh minibatch, builds the Lagrangian
//!
//! `L = mean(cost) + sum_k lambda_k * (mean(g_k) - G_k)`
//!
//! on the tape, takes one Adam step on the network parameters along
//! `dL/dtheta` (the constant bounds `G_k` contribute nothing to it), and
//! one projected subgradient ascent step on the multipliers,
//! `lambda_k <- max(0, lambda_k + lr_dual * (mean(g_k) - G_k))`, using the
//! same minibatch estimates evaluated at the pre-update parameters. The
//! multipliers start at zero and stay nonnegative; they are deliberately
//! not run through Adam.

use crate::autodiff::{AdError, AdResult, AdamHyper, AdamState, NodeId, Tape, Tensor};
use crate::mlp::{Activation, LayerSpec, Mlp, MlpError, MlpResult, Mode};
use crate::problems::{ProblemKind, ProblemSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum TrainError {
    #[error("iteration {iter}: {source}; lambda = {lambda:?}, last cost = {last_cost}")]
    Numeric {
        iter: usize,
        lambda: Vec<f64>,
        last_cost: f64,
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error(transparent)]
    Policy(#[from] MlpError),
}

/// Iteration-local failure, wrapped into [`TrainError::Numeric`] with the
/// iteration context by the loop.
#[derive(Error, Debug)]
enum IterError {
    #[error(transparent)]
    Ad(#[from] AdError),
    #[error(transparent)]
    Mlp(#[from] MlpError),
}

impl IterError {
    fn boxed(self) -> Box<dyn std::error::Error + Send + Sync> {
        match self {
            IterError::Ad(e) => Box::new(e),
            IterError::Mlp(e) => Box::new(e),
        }
    }
}

/// Anything the trainer can optimize against: observation sampler, cost
/// and constraint graphs, plus closed-form per-sample evaluators for
/// reporting.
pub trait TrainingProblem {
    fn obs_dim(&self) -> usize;
    fn sample_obs(&self, count: usize, rng: &mut ChaCha8Rng) -> Tensor;
    fn build_cost_mean(&self, tape: &mut Tape, obs: NodeId, x: NodeId) -> AdResult<NodeId>;
    fn build_constraint_samples(&self, tape: &mut Tape, obs: NodeId, x: NodeId) -> AdResult<Vec<NodeId>>;
    fn constraint_bounds(&self) -> Vec<f64>;
    /// Per-sample maximized metric (the negative of the trained cost).
    fn metric_rows(&self, obs: &Tensor, x: &Tensor) -> Vec<f64>;
    fn constraint_rows(&self, obs: &Tensor, x: &Tensor) -> Vec<Vec<f64>>;
}

impl TrainingProblem for ProblemSpec {
    fn obs_dim(&self) -> usize {
        ProblemSpec::obs_dim(self)
    }

    fn sample_obs(&self, count: usize, rng: &mut ChaCha8Rng) -> Tensor {
        ProblemSpec::sample_obs(self, count, rng)
    }

    fn build_cost_mean(&self, tape: &mut Tape, obs: NodeId, x: NodeId) -> AdResult<NodeId> {
        ProblemSpec::build_cost_mean(self, tape, obs, x)
    }

    fn build_constraint_samples(&self, tape: &mut Tape, obs: NodeId, x: NodeId) -> AdResult<Vec<NodeId>> {
        ProblemSpec::build_constraint_samples(self, tape, obs, x)
    }

    fn constraint_bounds(&self) -> Vec<f64> {
        ProblemSpec::constraint_bounds(self)
    }

    fn metric_rows(&self, obs: &Tensor, x: &Tensor) -> Vec<f64> {
        ProblemSpec::metric_rows(self, obs, x)
    }

    fn constraint_rows(&self, obs: &Tensor, x: &Tensor) -> Vec<Vec<f64>> {
        ProblemSpec::constraint_rows(self, obs, x)
    }
}

/// A trainable policy: forward pass on the tape plus parameter access.
/// `forward` must insert parameter leaves in the order of `params_mut`.
pub trait Policy {
    fn forward(&mut self, tape: &mut Tape, obs: NodeId, mode: Mode) -> MlpResult<PolicyForward>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;
    fn param_names(&self) -> Vec<String>;
    /// Reseeds any internal sampling stream (stochastic-evaluation runs
    /// need a reproducible stream). Policies without one ignore it.
    fn reseed_stochastic(&mut self, _seed: u64) {}
}

pub struct PolicyForward {
    pub x: NodeId,
    pub params: Vec<NodeId>,
}

/// The centralized architecture: one network mapping the full observation
/// to all transmit powers. Interference min-rate uses a deeper, wider
/// stack than the other problems.
pub struct CentralizedPolicy {
    pub net: Mlp,
}

impl CentralizedPolicy {
    pub fn new(problem: &ProblemSpec, rng: &mut ChaCha8Rng) -> Self {
        let (hidden, width) = default_centralized_arch(problem);
        Self::with_arch(problem, hidden, width, rng)
    }

    pub fn with_arch(problem: &ProblemSpec, hidden_layers: usize, width: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut specs: Vec<LayerSpec> = (0..hidden_layers).map(|_| LayerSpec::hidden(width)).collect();
        specs.push(LayerSpec::output(problem.decision_dim(), Activation::Project(problem.feasible_set())));
        CentralizedPolicy { net: Mlp::new(problem.obs_dim(), &specs, rng) }
    }

    pub fn save(&self, path: &Path) -> MlpResult<()> {
        self.net.save(path)
    }

    pub fn load(&mut self, path: &Path) -> MlpResult<()> {
        self.net.load(path)
    }
}

/// Hidden-layer count and width for the single-network architecture.
pub fn default_centralized_arch(problem: &ProblemSpec) -> (usize, usize) {
    match problem.kind {
        ProblemKind::IfcMinRate => (5, 20 * problem.n),
        _ => (4, 10 * problem.n),
    }
}

impl Policy for CentralizedPolicy {
    fn forward(&mut self, tape: &mut Tape, obs: NodeId, mode: Mode) -> MlpResult<PolicyForward> {
        if mode.is_train() {
            let (x, params) = self.net.forward_train(tape, obs)?;
            Ok(PolicyForward { x, params })
        } else {
            let x = self.net.forward_eval(tape, obs)?;
            Ok(PolicyForward { x, params: Vec::new() })
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.net.params_mut()
    }

    fn param_names(&self) -> Vec<String> {
        self.net.param_names()
    }
}

// ── configuration ───────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub iters: usize,
    pub batch: usize,
    pub lr: f64,
    pub lr_dual: f64,
    pub checkpoint_every: usize,
    /// Validation subset size used for the checkpoint metric column.
    pub checkpoint_val_size: usize,
    pub seed: u64,
    /// Steps whose gradient norm exceeds this are skipped and counted.
    pub grad_skip_norm: f64,
}

impl TrainConfig {
    /// Published-scale settings: half a million iterations of batch 5000
    /// at learning rate 5e-5 (both primal and dual), million-sample
    /// validation.
    pub fn paper() -> Self {
        TrainConfig {
            iters: 500_000,
            batch: 5000,
            lr: 5e-5,
            lr_dual: 5e-5,
            checkpoint_every: 500,
            checkpoint_val_size: 1_000_000,
            seed: 1,
            grad_skip_norm: 1e6,
        }
    }

    /// Desk-scale settings: batch 1000 for 50k iterations reaches the
    /// reference oracle gaps in minutes per run; larger learning rates
    /// compensate for the shorter schedule.
    pub fn desk() -> Self {
        TrainConfig {
            iters: 50_000,
            batch: 1000,
            lr: 1e-3,
            lr_dual: 2e-3,
            checkpoint_every: 500,
            checkpoint_val_size: 100_000,
            seed: 1,
            grad_skip_norm: 1e6,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// FNV-1a over the base seed and a purpose tag: independent, reproducible
/// streams for batching, validation, initialization and binarization.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in seed.to_le_bytes().into_iter().chain(tag.bytes()) {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

// ── logging ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct ConvergenceRow {
    pub iteration: usize,
    pub lagrangian: f64,
    pub cost: f64,
    pub slack: Vec<f64>,
    pub lambda: Vec<f64>,
    pub val_metric: f64,
}

#[derive(Debug, Clone)]
pub struct ConvergenceLog {
    pub rows: Vec<ConvergenceRow>,
    constraints: usize,
}

impl ConvergenceLog {
    pub fn new(constraints: usize) -> Self {
        ConvergenceLog { rows: Vec::new(), constraints }
    }

    pub fn header(&self) -> String {
        let mut cols = vec!["iteration".to_string(), "lagrangian".to_string(), "cost".to_string()];
        cols.extend((0..self.constraints).map(|k| format!("slack_{k}")));
        cols.extend((0..self.constraints).map(|k| format!("lambda_{k}")));
        cols.push("val_metric".to_string());
        cols.join(",")
    }

    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut out = self.header();
        out.push('\n');
        for row in &self.rows {
            let mut fields = vec![row.iteration.to_string(), row.lagrangian.to_string(), row.cost.to_string()];
            fields.extend(row.slack.iter().map(f64::to_string));
            fields.extend(row.lambda.iter().map(f64::to_string));
            fields.push(row.val_metric.to_string());
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        std::fs::write(path, out)
    }
}

#[derive(Debug)]
pub struct TrainReport {
    pub log: ConvergenceLog,
    pub lambda: Vec<f64>,
    pub iterations_run: usize,
    pub skipped_steps: usize,
    /// Present when a divergent validation metric forced a rollback to the
    /// last good checkpoint.
    pub aborted: Option<String>,
}

// ── core steps ──────────────────────────────────────────────────────────

/// Lagrangian value from already-averaged pieces.
pub fn lagrangian_value(cost_mean: f64, slacks: &[f64], lambda: &[f64]) -> f64 {
    cost_mean + slacks.iter().zip(lambda).map(|(s, l)| s * l).sum::<f64>()
}

/// Projected subgradient ascent on the multipliers.
pub fn dual_step(lambda: &mut [f64], slacks: &[f64], lr_dual: f64) {
    for (l, &s) in lambda.iter_mut().zip(slacks) {
        *l = (*l + lr_dual * s).max(0.0);
        debug_assert!(*l >= 0.0, "multiplier went negative: {l}");
    }
}

/// Runs the primal-dual loop. On a divergent validation metric the last
/// good checkpoint is restored and reported; numeric failures inside an
/// iteration surface as [`TrainError::Numeric`] with context.
pub fn train<P, T>(policy: &mut P, problem: &T, cfg: &TrainConfig) -> Result<TrainReport, TrainError>
where
    P: Policy + ?Sized,
    T: TrainingProblem + ?Sized,
{
    let bounds = problem.constraint_bounds();
    let k = bounds.len();
    let mut lambda = vec![0.0; k];
    let mut batch_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "batch"));
    let mut val_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "val"));
    let val_obs = problem.sample_obs(cfg.checkpoint_val_size, &mut val_rng);

    let shapes: Vec<[usize; 2]> = policy.params_mut().iter().map(|p| p.shape()).collect();
    let mut adam = AdamState::new(&shapes, AdamHyper::with_lr(cfg.lr));
    let mut log = ConvergenceLog::new(k);
    let mut snapshot: Option<(Vec<Tensor>, Vec<f64>)> = None;
    let mut skipped = 0usize;
    let mut last_cost = f64::NAN;
    let mut aborted = None;
    let mut iterations_run = 0;

    for t in 1..=cfg.iters {
        iterations_run = t;
        let obs = problem.sample_obs(cfg.batch, &mut batch_rng);
        let (cost_value, slacks, lagr_value, did_skip) = run_iteration(
            policy, problem, &obs, &bounds, &lambda, &shapes, &mut adam, cfg.grad_skip_norm,
        )
        .map_err(|source| TrainError::Numeric {
            iter: t,
            lambda: lambda.clone(),
            last_cost,
            source: source.boxed(),
        })?;
        if did_skip {
            skipped += 1;
        }
        last_cost = cost_value;
        dual_step(&mut lambda, &slacks, cfg.lr_dual);

        if t % cfg.checkpoint_every == 0 || t == cfg.iters {
            let val_metric = validation_metric(policy, problem, &val_obs).map_err(|source| {
                TrainError::Numeric { iter: t, lambda: lambda.clone(), last_cost, source: source.boxed() }
            })?;
            if val_metric.is_finite() {
                let params: Vec<Tensor> = policy.params_mut().into_iter().map(|p| p.clone()).collect();
                snapshot = Some((params, lambda.clone()));
                log.rows.push(ConvergenceRow {
                    iteration: t,
                    lagrangian: lagr_value,
                    cost: cost_value,
                    slack: slacks,
                    lambda: lambda.clone(),
                    val_metric,
                });
            } else {
                if let Some((params, saved_lambda)) = snapshot.take() {
                    for (dst, src) in policy.params_mut().into_iter().zip(&params) {
                        *dst = src.clone();
                    }
                    lambda = saved_lambda;
                }
                aborted = Some(format!("validation metric diverged at iteration {t}; restored last checkpoint"));
                break;
            }
        }
    }

    Ok(TrainReport { log, lambda, iterations_run, skipped_steps: skipped, aborted })
}

#[allow(clippy::too_many_arguments)]
fn run_iteration<P, T>(
    policy: &mut P,
    problem: &T,
    obs: &Tensor,
    bounds: &[f64],
    lambda: &[f64],
    shapes: &[[usize; 2]],
    adam: &mut AdamState,
    grad_skip_norm: f64,
) -> Result<(f64, Vec<f64>, f64, bool), IterError>
where
    P: Policy + ?Sized,
    T: TrainingProblem + ?Sized,
{
    let mut tape = Tape::new();
    let obs_id = tape.leaf(obs);
    let pf = policy.forward(&mut tape, obs_id, Mode::Train)?;
    let cost = problem.build_cost_mean(&mut tape, obs_id, pf.x)?;
    let cost_value = tape.value(cost).item();
    let cons = problem.build_constraint_samples(&mut tape, obs_id, pf.x)?;
    let mut slacks = Vec::with_capacity(bounds.len());
    let mut lagr = cost;
    for (kk, &c) in cons.iter().enumerate() {
        let mean = tape.mean(c, None)?;
        let slack = tape.add_scalar(mean, -bounds[kk])?;
        slacks.push(tape.value(slack).item());
        if lambda[kk] != 0.0 {
            let term = tape.scale(slack, lambda[kk])?;
            lagr = tape.add(lagr, term)?;
        }
    }
    let lagr_value = lagrangian_value(cost_value, &slacks, lambda);
    let grads = tape.backward(lagr)?;
    let grad_tensors: Vec<Tensor> = pf
        .params
        .iter()
        .zip(shapes)
        .map(|(&id, &shape)| grads.get_or_zeros(id, shape))
        .collect();
    let norm = grad_tensors.iter().map(Tensor::squared_norm).sum::<f64>().sqrt();
    if norm > grad_skip_norm {
        return Ok((cost_value, slacks, lagr_value, true));
    }
    adam.step(&mut policy.params_mut(), &grad_tensors)?;
    Ok((cost_value, slacks, lagr_value, false))
}

/// Mean maximized metric of the policy on a fixed validation batch.
fn validation_metric<P, T>(policy: &mut P, problem: &T, val_obs: &Tensor) -> Result<f64, IterError>
where
    P: Policy + ?Sized,
    T: TrainingProblem + ?Sized,
{
    let mut tape = Tape::new();
    let obs_id = tape.leaf(val_obs);
    let pf = policy.forward(&mut tape, obs_id, Mode::Eval)?;
    let x = tape.value(pf.x).clone();
    let rows = problem.metric_rows(val_obs, &x);
    Ok(rows.iter().sum::<f64>() / rows.len() as f64)
}

// ── reference toy ───────────────────────────────────────────────────────

/// Quadratic tracking toy with one linear expectation constraint and a
/// hand-derived saddle point, used to gate the primal-dual loop. The cost
/// is `(x - a1)^2` over observations `a = (a1, a2)` of i.i.d. Gaussians,
/// and the constraint `E[x] >= 1` enters as `E[-x] <= -1`. For an affine
/// policy `x = w.a + b` the optimum is `w = (1, 0)`, `b = 1`; stationarity
/// in `b` reads `2b - lambda = 0`, so the multiplier settles at 2.
pub struct QuadraticTrackingToy {
    pub sigma: f64,
    pub constrained: bool,
}

impl TrainingProblem for QuadraticTrackingToy {
    fn obs_dim(&self) -> usize {
        2
    }

    fn sample_obs(&self, count: usize, rng: &mut ChaCha8Rng) -> Tensor {
        use rand::Rng;
        let data = (0..count * 2)
            .map(|_| self.sigma * rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        Tensor::from_vec(count, 2, data)
    }

    fn build_cost_mean(&self, tape: &mut Tape, obs: NodeId, x: NodeId) -> AdResult<NodeId> {
        let a1 = tape.slice_cols(obs, 0, 1)?;
        let diff = tape.sub(x, a1)?;
        let sq = tape.mul(diff, diff)?;
        tape.mean(sq, None)
    }

    fn build_constraint_samples(&self, tape: &mut Tape, _obs: NodeId, x: NodeId) -> AdResult<Vec<NodeId>> {
        if self.constrained {
            Ok(vec![tape.neg(x)?])
        } else {
            Ok(vec![])
        }
    }

    fn constraint_bounds(&self) -> Vec<f64> {
        if self.constrained {
            vec![-1.0]
        } else {
            vec![]
        }
    }

    fn metric_rows(&self, obs: &Tensor, x: &Tensor) -> Vec<f64> {
        (0..obs.rows()).map(|r| -(x.get(r, 0) - obs.get(r, 0)).powi(2)).collect()
    }

    fn constraint_rows(&self, obs: &Tensor, x: &Tensor) -> Vec<Vec<f64>> {
        (0..obs.rows())
            .map(|r| if self.constrained { vec![-x.get(r, 0)] } else { vec![] })
            .collect()
    }
}

/// Toy instance plus settings under which it reaches the saddle point to
/// tight tolerance inside 20k iterations.
pub fn toy_kkt_setup() -> (QuadraticTrackingToy, TrainConfig) {
    let problem = QuadraticTrackingToy { sigma: 0.25, constrained: true };
    let cfg = TrainConfig {
        iters: 20_000,
        batch: 1024,
        lr: 5e-4,
        lr_dual: 2e-3,
        checkpoint_every: 1000,
        checkpoint_val_size: 1024,
        seed: 5,
        grad_skip_norm: 1e6,
    };
    (problem, cfg)
}

/// Single affine unit, the policy class for the toy.
pub fn affine_toy_policy(seed: u64) -> CentralizedPolicy {
    let spec = [LayerSpec::output(1, Activation::Linear)];
    CentralizedPolicy { net: Mlp::new(2, &spec, &mut ChaCha8Rng::seed_from_u64(seed)) }
}

// ── evaluation ──────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy)]
pub struct EvalConfig {
    pub size: usize,
    pub seed: u64,
    /// Constraint means may exceed bounds by this relative tolerance and
    /// still count as feasible.
    pub feas_tol: f64,
    /// Also evaluate with stochastic binarization (reported separately).
    pub stochastic: bool,
}

impl EvalConfig {
    pub fn new(size: usize, seed: u64) -> Self {
        EvalConfig { size, seed, feas_tol: 0.02, stochastic: false }
    }
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub metric_mean: f64,
    pub metric_ci95: f64,
    pub samples: usize,
    pub constraint_means: Vec<f64>,
    pub bounds: Vec<f64>,
    pub feasible: bool,
    pub max_rel_violation: f64,
    pub metric_mean_stochastic: Option<f64>,
    /// Hash of the evaluated observation stream; identical seeds and sizes
    /// hash identically, which pins paired comparisons.
    pub obs_hash: u64,
}

/// Streaming accumulator shared by policy and baseline evaluation.
pub struct EvalAccumulator {
    n: usize,
    metric_sum: f64,
    metric_sq: f64,
    cons_sums: Vec<f64>,
}

impl EvalAccumulator {
    pub fn new(constraints: usize) -> Self {
        EvalAccumulator { n: 0, metric_sum: 0.0, metric_sq: 0.0, cons_sums: vec![0.0; constraints] }
    }

    pub fn push(&mut self, metric_rows: &[f64], cons_rows: &[Vec<f64>]) {
        for (&m, c) in metric_rows.iter().zip(cons_rows) {
            self.n += 1;
            self.metric_sum += m;
            self.metric_sq += m * m;
            for (acc, &v) in self.cons_sums.iter_mut().zip(c) {
                *acc += v;
            }
        }
    }

    pub fn finalize(&self, bounds: &[f64], feas_tol: f64) -> (f64, f64, Vec<f64>, bool, f64) {
        let n = self.n as f64;
        let mean = self.metric_sum / n;
        let var = (self.metric_sq / n - mean * mean).max(0.0);
        let ci95 = 1.96 * (var / n).sqrt();
        let cons_means: Vec<f64> = self.cons_sums.iter().map(|s| s / n).collect();
        let mut max_rel = f64::NEG_INFINITY;
        for (&m, &b) in cons_means.iter().zip(bounds) {
            max_rel = max_rel.max((m - b) / b.abs().max(1e-12));
        }
        let feasible = max_rel <= feas_tol;
        (mean, ci95, cons_means, feasible, max_rel)
    }
}

/// Hash of raw f64 bits, little-endian, FNV-1a. Used to certify that two
/// evaluations saw the same test set.
pub fn hash_tensor(seed_hash: u64, t: &Tensor) -> u64 {
    let mut h = if seed_hash == 0 { 0xcbf29ce484222325 } else { seed_hash };
    for v in t.data() {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}

const EVAL_CHUNK: usize = 10_000;

/// Evaluates an arbitrary decision rule on a freshly seeded test stream,
/// in chunks. This is the single evaluation path: learned policies and
/// classical baselines both go through it, so their test sets and
/// statistics are computed identically.
pub fn evaluate_with<T, F>(problem: &T, cfg: &EvalConfig, mut decide: F) -> Result<EvalReport, TrainError>
where
    T: TrainingProblem + ?Sized,
    F: FnMut(&Tensor) -> Result<Tensor, TrainError>,
{
    let bounds = problem.constraint_bounds();
    let mut acc = EvalAccumulator::new(bounds.len());
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "test"));
    let mut remaining = cfg.size;
    let mut obs_hash = 0u64;
    while remaining > 0 {
        let take = remaining.min(EVAL_CHUNK);
        remaining -= take;
        let obs = problem.sample_obs(take, &mut rng);
        obs_hash = hash_tensor(obs_hash, &obs);
        let x = decide(&obs)?;
        acc.push(&problem.metric_rows(&obs, &x), &problem.constraint_rows(&obs, &x));
    }
    let (mean, ci95, cons, feasible, max_rel) = acc.finalize(&bounds, cfg.feas_tol);
    Ok(EvalReport {
        metric_mean: mean,
        metric_ci95: ci95,
        samples: cfg.size,
        constraint_means: cons,
        bounds,
        feasible,
        max_rel_violation: max_rel,
        metric_mean_stochastic: None,
        obs_hash,
    })
}

/// Evaluates a trained policy with deterministic sign binarization;
/// optionally repeats the pass with stochastic binarization on a
/// dedicated reseeded stream. Both passes see the same test set.
pub fn evaluate<P, T>(policy: &mut P, problem: &T, cfg: &EvalConfig) -> Result<EvalReport, TrainError>
where
    P: Policy + ?Sized,
    T: TrainingProblem + ?Sized,
{
    let mut report = evaluate_with(problem, cfg, |obs| forward_decisions(policy, obs, Mode::Eval))?;
    if cfg.stochastic {
        policy.reseed_stochastic(derive_seed(cfg.seed, "eval-stochastic"));
        let stoch = evaluate_with(problem, cfg, |obs| forward_decisions(policy, obs, Mode::EvalStochastic))?;
        debug_assert_eq!(report.obs_hash, stoch.obs_hash);
        report.metric_mean_stochastic = Some(stoch.metric_mean);
    }
    Ok(report)
}

/// One deterministic forward pass; exposed so baseline comparisons can
/// obtain raw decisions from any policy.
pub fn forward_decisions<P: Policy + ?Sized>(policy: &mut P, obs: &Tensor, mode: Mode) -> Result<Tensor, TrainError> {
    let mut tape = Tape::new();
    let obs_id = tape.leaf(obs);
    let pf = policy.forward(&mut tape, obs_id, mode)?;
    Ok(tape.value(pf.x).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Axis;
    use rand::Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    use super::{affine_toy_policy as affine_policy, QuadraticTrackingToy as ToyProblem};

    #[test]
    fn lagrangian_value_arithmetic() {
        assert_eq!(lagrangian_value(1.0, &[0.4], &[0.5]), 1.2);
        // Zero multipliers reduce it to the cost.
        assert_eq!(lagrangian_value(0.7, &[3.0, -2.0], &[0.0, 0.0]), 0.7);
        // A batch exactly at the bound adds nothing either.
        assert_eq!(lagrangian_value(0.7, &[0.0], &[5.0]), 0.7);
    }

    #[test]
    fn dual_step_examples() {
        let mut lambda = [0.5];
        dual_step(&mut lambda, &[-0.2], 0.1);
        assert!((lambda[0] - 0.48).abs() < 1e-15);

        // Projection at zero.
        let mut lambda = [0.05];
        dual_step(&mut lambda, &[-1.0], 0.1);
        assert_eq!(lambda[0], 0.0);

        let mut lambda = [0.5];
        dual_step(&mut lambda, &[0.2], 0.1);
        assert!((lambda[0] - 0.52).abs() < 1e-15);
    }

    #[test]
    fn strictly_feasible_run_keeps_multiplier_at_zero() {
        // Constraint E[-x] <= -1 is replaced by a slack bound the policy
        // satisfies from the start; lambda must decay to (and stay at) 0.
        struct Slack;
        impl TrainingProblem for Slack {
            fn obs_dim(&self) -> usize {
                1
            }
            fn sample_obs(&self, count: usize, rng: &mut ChaCha8Rng) -> Tensor {
                Tensor::from_vec(count, 1, (0..count).map(|_| rng.gen_range(0.0..1.0)).collect())
            }
            fn build_cost_mean(&self, tape: &mut Tape, _obs: NodeId, x: NodeId) -> AdResult<NodeId> {
                let sq = tape.mul(x, x)?;
                tape.mean(sq, None)
            }
            fn build_constraint_samples(&self, tape: &mut Tape, _obs: NodeId, x: NodeId) -> AdResult<Vec<NodeId>> {
                Ok(vec![tape.sum(x, Some(Axis::Cols))?])
            }
            fn constraint_bounds(&self) -> Vec<f64> {
                vec![10.0]
            }
            fn metric_rows(&self, obs: &Tensor, x: &Tensor) -> Vec<f64> {
                (0..obs.rows()).map(|r| -x.get(r, 0) * x.get(r, 0)).collect()
            }
            fn constraint_rows(&self, obs: &Tensor, x: &Tensor) -> Vec<Vec<f64>> {
                (0..obs.rows()).map(|r| vec![x.get(r, 0)]).collect()
            }
        }
        let spec = [LayerSpec::output(1, Activation::Linear)];
        let mut policy = CentralizedPolicy { net: Mlp::new(1, &spec, &mut rng(3)) };
        let cfg = TrainConfig {
            iters: 500,
            batch: 64,
            lr: 1e-2,
            lr_dual: 1e-2,
            checkpoint_every: 100,
            checkpoint_val_size: 64,
            seed: 7,
            grad_skip_norm: 1e6,
        };
        let report = train(&mut policy, &Slack, &cfg).unwrap();
        assert!(report.lambda.iter().all(|&l| l == 0.0), "{:?}", report.lambda);
    }

    #[test]
    fn toy_kkt_point_is_recovered() {
        let (problem, cfg) = toy_kkt_setup();
        let mut policy = affine_policy(11);
        let report = train(&mut policy, &problem, &cfg).unwrap();
        let params = policy.params_mut();
        let w = params[0].data().to_vec();
        let b = params[1].item();
        assert!((w[0] - 1.0).abs() < 1e-3, "w1 = {}", w[0]);
        assert!(w[1].abs() < 1e-3, "w2 = {}", w[1]);
        assert!((b - 1.0).abs() < 1e-3, "b = {b}");
        assert!((report.lambda[0] - 2.0).abs() < 1e-2, "lambda = {}", report.lambda[0]);
    }

    #[test]
    fn multipliers_start_at_zero_and_stay_nonnegative() {
        let problem = ToyProblem { sigma: 0.3, constrained: true };
        let mut policy = affine_policy(13);
        let cfg = TrainConfig {
            iters: 300,
            batch: 64,
            lr: 1e-3,
            lr_dual: 1e-2,
            checkpoint_every: 50,
            checkpoint_val_size: 64,
            seed: 2,
            grad_skip_norm: 1e6,
        };
        let report = train(&mut policy, &problem, &cfg).unwrap();
        for row in &report.log.rows {
            assert!(row.lambda.iter().all(|&l| l >= 0.0));
        }
        // First checkpoint is early enough that lambda is still small but
        // the trajectory started from exactly zero by construction.
        assert!(report.log.rows[0].lambda[0] < 1.0);
    }

    #[test]
    fn unconstrained_training_equals_plain_loop() {
        // With no constraints the trainer is plain Adam on the mean cost.
        // Replicate its exact sampling stream and update order by hand and
        // demand bit-identical parameters.
        let problem = ToyProblem { sigma: 0.4, constrained: false };
        let cfg = TrainConfig {
            iters: 200,
            batch: 32,
            lr: 1e-3,
            lr_dual: 1e-3,
            checkpoint_every: 1000,
            checkpoint_val_size: 16,
            seed: 9,
            grad_skip_norm: 1e6,
        };
        let mut trained = affine_policy(21);
        train(&mut trained, &problem, &cfg).unwrap();

        let mut manual = affine_policy(21);
        let mut batch_rng = rng(derive_seed(cfg.seed, "batch"));
        let shapes: Vec<[usize; 2]> = manual.net.params_mut().iter().map(|p| p.shape()).collect();
        let mut adam = AdamState::new(&shapes, AdamHyper::with_lr(cfg.lr));
        for _ in 0..cfg.iters {
            let obs = problem.sample_obs(cfg.batch, &mut batch_rng);
            let mut tape = Tape::new();
            let obs_id = tape.leaf(&obs);
            let (x, params) = manual.net.forward_train(&mut tape, obs_id).unwrap();
            let cost = problem.build_cost_mean(&mut tape, obs_id, x).unwrap();
            let grads = tape.backward(cost).unwrap();
            let gt: Vec<Tensor> = params
                .iter()
                .zip(&shapes)
                .map(|(&id, &s)| grads.get_or_zeros(id, s))
                .collect();
            adam.step(&mut manual.net.params_mut(), &gt).unwrap();
        }

        let a: Vec<Tensor> = trained.params_mut().into_iter().map(|p| p.clone()).collect();
        let b: Vec<Tensor> = manual.params_mut().into_iter().map(|p| p.clone()).collect();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.data(), y.data(), "parameter trajectories diverged");
        }
    }

    #[test]
    fn identical_seeds_give_identical_trajectories() {
        let problem = ToyProblem { sigma: 0.4, constrained: true };
        let cfg = TrainConfig {
            iters: 150,
            batch: 32,
            lr: 1e-3,
            lr_dual: 1e-3,
            checkpoint_every: 50,
            checkpoint_val_size: 32,
            seed: 4,
            grad_skip_norm: 1e6,
        };
        let mut p1 = affine_policy(33);
        let mut p2 = affine_policy(33);
        let r1 = train(&mut p1, &problem, &cfg).unwrap();
        let r2 = train(&mut p2, &problem, &cfg).unwrap();
        assert_eq!(r1.lambda, r2.lambda);
        for (a, b) in p1.params_mut().iter().zip(p2.params_mut().iter()) {
            assert_eq!(a.data(), b.data());
        }
        for (ra, rb) in r1.log.rows.iter().zip(&r2.log.rows) {
            assert_eq!(ra.lagrangian, rb.lagrangian);
            assert_eq!(ra.val_metric, rb.val_metric);
        }
    }

    #[test]
    fn paper_scale_constants() {
        let cfg = TrainConfig::paper();
        assert_eq!(cfg.iters, 500_000);
        assert_eq!(cfg.batch, 5000);
        assert_eq!(cfg.lr, 5e-5);
        assert_eq!(cfg.checkpoint_every, 500);
    }

    #[test]
    fn convergence_log_csv_layout() {
        let mut log = ConvergenceLog::new(2);
        log.rows.push(ConvergenceRow {
            iteration: 500,
            lagrangian: -1.25,
            cost: -1.5,
            slack: vec![0.1, -0.2],
            lambda: vec![0.3, 0.0],
            val_metric: 1.45,
        });
        assert_eq!(log.header(), "iteration,lagrangian,cost,slack_0,slack_1,lambda_0,lambda_1,val_metric");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        log.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.lines().nth(1).unwrap().starts_with("500,-1.25,-1.5,0.1,-0.2,0.3,0,1.45"));
    }

    /// Always-transmit-at-peak policy for any problem, used to pin the
    /// evaluator against a closed form.
    struct PeakPolicy {
        n: usize,
        level: f64,
    }

    impl Policy for PeakPolicy {
        fn forward(&mut self, tape: &mut Tape, obs: NodeId, _mode: Mode) -> MlpResult<PolicyForward> {
            let rows = tape.value(obs).rows();
            let x = tape.leaf(&Tensor::filled(rows, self.n, self.level));
            Ok(PolicyForward { x, params: Vec::new() })
        }
        fn params_mut(&mut self) -> Vec<&mut Tensor> {
            Vec::new()
        }
        fn param_names(&self) -> Vec<String> {
            Vec::new()
        }
    }

    #[test]
    fn evaluate_matches_exponential_integral_closed_form() {
        // A single link at unit peak power has mean rate
        // E[ln(1 + h)] with h ~ Exp(1), which equals e * E1(1) = 0.596347.
        let problem = ProblemSpec::ifc_sum(1, 1.0, 1.0);
        let mut policy = PeakPolicy { n: 1, level: 1.0 };
        let report = evaluate(&mut policy, &problem, &EvalConfig::new(200_000, 3)).unwrap();
        assert!((report.metric_mean - 0.596_347_4).abs() < 0.01, "mean = {}", report.metric_mean);
        assert!(report.metric_ci95 < 0.01);
        // At peak = average bound the policy is exactly at the limit, so it
        // passes the 2% tolerance.
        assert!(report.feasible);
    }

    #[test]
    fn evaluation_is_deterministic_and_hashes_test_set() {
        let problem = ToyProblem { sigma: 0.4, constrained: true };
        let mut policy = affine_policy(8);
        let cfg = EvalConfig::new(5000, 77);
        let r1 = evaluate(&mut policy, &problem, &cfg).unwrap();
        let r2 = evaluate(&mut policy, &problem, &cfg).unwrap();
        assert_eq!(r1.metric_mean.to_bits(), r2.metric_mean.to_bits());
        assert_eq!(r1.obs_hash, r2.obs_hash);
        let other = evaluate(&mut policy, &problem, &EvalConfig::new(5000, 78)).unwrap();
        assert_ne!(r1.obs_hash, other.obs_hash);
    }
}
