//! Finite-difference verification of tape gradients.
//!
//! Every differentiable primitive gets randomized checks of its backward
//! pass against central differences, plus one composed check of a full
//! 4-hidden-layer batch-normalized network. The numeric side never calls
//! `backward`, so the two paths are independent.

use super::norm::BatchNorm;
use super::tape::{Axis, NodeId, Tape};
use super::tensor::Tensor;
use super::AdResult;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Central differences step. Truncation error is O(step^2) and f64 rounding
/// error O(eps/step); 1e-6 balances both far below the 1e-5 gate.
pub const FD_STEP: f64 = 1e-6;

/// Mixed absolute/relative error gate.
pub const GRAD_TOL: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct CaseReport {
    pub name: String,
    pub max_err: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub cases: Vec<CaseReport>,
}

impl SuiteReport {
    pub fn pass(&self) -> bool {
        self.cases.iter().all(|c| c.pass)
    }

    pub fn worst(&self) -> f64 {
        self.cases.iter().map(|c| c.max_err).fold(0.0, f64::max)
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }
}

/// Central-difference gradient of `f` at `x0`.
pub fn finite_diff(mut f: impl FnMut(&[f64]) -> f64, x0: &[f64], step: f64) -> Vec<f64> {
    let mut x = x0.to_vec();
    let mut g = vec![0.0; x0.len()];
    for i in 0..x0.len() {
        let saved = x[i];
        x[i] = saved + step;
        let up = f(&x);
        x[i] = saved - step;
        let down = f(&x);
        x[i] = saved;
        g[i] = (up - down) / (2.0 * step);
    }
    g
}

/// One case: differentiable leaf tensors plus a loss builder over their
/// parameter ids. Constants live inside the closure.
struct Case {
    name: String,
    inputs: Vec<Tensor>,
    build: Box<dyn Fn(&mut Tape, &[NodeId]) -> AdResult<NodeId>>,
}

/// Compares tape gradients of a case against central differences and
/// returns the worst mixed absolute/relative error.
pub fn check_tape_gradients(
    name: &str,
    inputs: &[Tensor],
    build: impl Fn(&mut Tape, &[NodeId]) -> AdResult<NodeId>,
) -> CaseReport {
    // Analytic side.
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| tape.param(t)).collect();
    let loss = build(&mut tape, &ids).expect("gradcheck case failed to build");
    let grads = tape.backward(loss).expect("gradcheck backward failed");
    let analytic: Vec<f64> = ids
        .iter()
        .zip(inputs)
        .flat_map(|(&id, t)| grads.get_or_zeros(id, t.shape()).data().to_vec())
        .collect();

    // Numeric side: flatten all inputs into one vector and re-evaluate.
    let x0: Vec<f64> = inputs.iter().flat_map(|t| t.data().to_vec()).collect();
    let shapes: Vec<[usize; 2]> = inputs.iter().map(|t| t.shape()).collect();
    let eval = |xs: &[f64]| -> f64 {
        let mut tape = Tape::new();
        let mut at = 0;
        let mut ids = Vec::with_capacity(shapes.len());
        for s in &shapes {
            let n = s[0] * s[1];
            ids.push(tape.param(&Tensor::from_vec(s[0], s[1], xs[at..at + n].to_vec())));
            at += n;
        }
        let loss = build(&mut tape, &ids).expect("gradcheck case failed to rebuild");
        tape.value(loss).item()
    };
    let numeric = finite_diff(eval, &x0, FD_STEP);

    let mut max_err = 0.0f64;
    for (a, n) in analytic.iter().zip(&numeric) {
        let scale = a.abs().max(n.abs()).max(1.0);
        max_err = max_err.max((a - n).abs() / scale);
    }
    CaseReport { name: name.to_string(), max_err, pass: max_err <= GRAD_TOL }
}

fn rand_shape(rng: &mut ChaCha8Rng) -> (usize, usize) {
    (rng.gen_range(1..=5), rng.gen_range(1..=5))
}

fn rand_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect())
}

/// Uniform values bounded away from zero (for ReLU kinks, divisors).
fn rand_tensor_away_from_zero(rng: &mut ChaCha8Rng, rows: usize, cols: usize, min_abs: f64, hi: f64) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| {
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            sign * rng.gen_range(min_abs..hi)
        })
        .collect();
    Tensor::from_vec(rows, cols, data)
}

/// Random row values with pairwise gaps, so argmin is stable under the FD
/// perturbation.
fn rand_tensor_distinct(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let mut out = Tensor::zeros(rows, cols);
    for r in 0..rows {
        loop {
            for c in 0..cols {
                out.set(r, c, rng.gen_range(-2.0..2.0));
            }
            let mut vals: Vec<f64> = out.row(r).to_vec();
            vals.sort_by(f64::total_cmp);
            let ok = vals.windows(2).all(|w| w[1] - w[0] > 1e-2);
            if ok || cols == 1 {
                break;
            }
        }
    }
    out
}

/// Weighted-sum loss so every output entry receives a distinct adjoint.
fn weighted_sum(tape: &mut Tape, x: NodeId, weights: &Tensor) -> AdResult<NodeId> {
    let w = tape.leaf(weights);
    let prod = tape.mul(x, w)?;
    tape.sum(prod, None)
}

fn unary_cases(rng: &mut ChaCha8Rng, per_op: usize) -> Vec<Case> {
    type UnaryBuilder = fn(&mut Tape, NodeId) -> AdResult<NodeId>;
    let ops: Vec<(&str, UnaryBuilder, fn(&mut ChaCha8Rng, usize, usize) -> Tensor)> = vec![
        ("neg", |t, x| t.neg(x), |r, m, n| rand_tensor(r, m, n, -2.0, 2.0)),
        ("log1p", |t, x| t.log1p(x), |r, m, n| rand_tensor(r, m, n, -0.8, 2.0)),
        ("exp", |t, x| t.exp(x), |r, m, n| rand_tensor(r, m, n, -2.0, 2.0)),
        ("relu", |t, x| t.relu(x), |r, m, n| rand_tensor_away_from_zero(r, m, n, 1e-3, 2.0)),
        ("tanh", |t, x| t.tanh(x), |r, m, n| rand_tensor(r, m, n, -2.0, 2.0)),
        ("sigmoid", |t, x| t.sigmoid(x), |r, m, n| rand_tensor(r, m, n, -2.0, 2.0)),
        ("sqrt", |t, x| t.sqrt(x), |r, m, n| rand_tensor(r, m, n, 0.1, 2.0)),
        ("scale", |t, x| t.scale(x, -1.7), |r, m, n| rand_tensor(r, m, n, -2.0, 2.0)),
        ("add_scalar", |t, x| t.add_scalar(x, 0.31), |r, m, n| rand_tensor(r, m, n, -2.0, 2.0)),
    ];
    let mut cases = Vec::new();
    for (name, op, sampler) in ops {
        for k in 0..per_op {
            let (m, n) = rand_shape(rng);
            let x = sampler(rng, m, n);
            let w = rand_tensor(rng, m, n, -1.0, 1.0);
            cases.push(Case {
                name: format!("{name}#{k}"),
                inputs: vec![x],
                build: Box::new(move |tape, ids| {
                    let y = op(tape, ids[0])?;
                    weighted_sum(tape, y, &w)
                }),
            });
        }
    }
    cases
}

fn binary_cases(rng: &mut ChaCha8Rng, per_op: usize) -> Vec<Case> {
    type BinaryBuilder = fn(&mut Tape, NodeId, NodeId) -> AdResult<NodeId>;
    let ops: Vec<(&str, BinaryBuilder)> = vec![
        ("add", |t, a, b| t.add(a, b)),
        ("sub", |t, a, b| t.sub(a, b)),
        ("mul", |t, a, b| t.mul(a, b)),
        ("div", |t, a, b| t.div(a, b)),
    ];
    let mut cases = Vec::new();
    for (name, op) in ops {
        for k in 0..per_op {
            let (m, n) = rand_shape(rng);
            // Rotate through broadcast layouts of the second operand.
            let (br, bc) = match k % 4 {
                0 => (m, n),
                1 => (1, n),
                2 => (m, 1),
                _ => (1, 1),
            };
            let a = rand_tensor(rng, m, n, -2.0, 2.0);
            let b = if name == "div" {
                rand_tensor_away_from_zero(rng, br, bc, 0.3, 2.0)
            } else {
                rand_tensor(rng, br, bc, -2.0, 2.0)
            };
            let w = rand_tensor(rng, m, n, -1.0, 1.0);
            cases.push(Case {
                name: format!("{name}#{k}"),
                inputs: vec![a, b],
                build: Box::new(move |tape, ids| {
                    let y = op(tape, ids[0], ids[1])?;
                    weighted_sum(tape, y, &w)
                }),
            });
        }
    }
    cases
}

fn matmul_cases(rng: &mut ChaCha8Rng, count: usize) -> Vec<Case> {
    (0..count)
        .map(|k| {
            let (m, kk) = rand_shape(rng);
            let n = rng.gen_range(1..=5);
            let a = rand_tensor(rng, m, kk, -2.0, 2.0);
            let b = rand_tensor(rng, kk, n, -2.0, 2.0);
            let w = rand_tensor(rng, m, n, -1.0, 1.0);
            Case {
                name: format!("matmul#{k}"),
                inputs: vec![a, b],
                build: Box::new(move |tape, ids| {
                    let y = tape.matmul(ids[0], ids[1])?;
                    weighted_sum(tape, y, &w)
                }),
            }
        })
        .collect()
}

fn reduce_cases(rng: &mut ChaCha8Rng, per_op: usize) -> Vec<Case> {
    let axes = [None, Some(Axis::Rows), Some(Axis::Cols)];
    let mut cases = Vec::new();
    for &axis in &axes {
        for k in 0..per_op {
            let (m, n) = (rng.gen_range(2..=5), rng.gen_range(2..=5));
            let axis_name = match axis {
                None => "all",
                Some(Axis::Rows) => "rows",
                Some(Axis::Cols) => "cols",
            };
            for red in ["sum", "mean", "min"] {
                let x = if red == "min" {
                    rand_tensor_distinct(rng, m, n)
                } else {
                    rand_tensor(rng, m, n, -2.0, 2.0)
                };
                let out_shape = match axis {
                    None => (1, 1),
                    Some(Axis::Rows) => (1, n),
                    Some(Axis::Cols) => (m, 1),
                };
                let w = rand_tensor(rng, out_shape.0, out_shape.1, -1.0, 1.0);
                cases.push(Case {
                    name: format!("{red}_{axis_name}#{k}"),
                    inputs: vec![x],
                    build: Box::new(move |tape, ids| {
                        let y = match red {
                            "sum" => tape.sum(ids[0], axis)?,
                            "mean" => tape.mean(ids[0], axis)?,
                            _ => tape.min(ids[0], axis)?,
                        };
                        weighted_sum(tape, y, &w)
                    }),
                });
            }
        }
    }
    cases
}

fn structural_cases(rng: &mut ChaCha8Rng, count: usize) -> Vec<Case> {
    let mut cases = Vec::new();
    for k in 0..count {
        let m = rng.gen_range(1..=4);
        let (c1, c2, c3) = (rng.gen_range(1..=3), rng.gen_range(1..=3), rng.gen_range(1..=3));
        let a = rand_tensor(rng, m, c1, -2.0, 2.0);
        let b = rand_tensor(rng, m, c2, -2.0, 2.0);
        let c = rand_tensor(rng, m, c3, -2.0, 2.0);
        let w = rand_tensor(rng, m, c1 + c2 + c3, -1.0, 1.0);
        cases.push(Case {
            name: format!("concat_cols#{k}"),
            inputs: vec![a, b, c],
            build: Box::new(move |tape, ids| {
                let y = tape.concat_cols(ids)?;
                weighted_sum(tape, y, &w)
            }),
        });

        let cols = rng.gen_range(2..=6);
        let start = rng.gen_range(0..cols - 1);
        let len = rng.gen_range(1..=cols - start);
        let x = rand_tensor(rng, m, cols, -2.0, 2.0);
        let w = rand_tensor(rng, m, len, -1.0, 1.0);
        cases.push(Case {
            name: format!("slice_cols#{k}"),
            inputs: vec![x],
            build: Box::new(move |tape, ids| {
                let y = tape.slice_cols(ids[0], start, len)?;
                weighted_sum(tape, y, &w)
            }),
        });
    }
    cases
}

fn batchnorm_cases(rng: &mut ChaCha8Rng, count: usize) -> Vec<Case> {
    (0..count)
        .map(|k| {
            let (m, n) = (rng.gen_range(3..=6), rng.gen_range(1..=4));
            let x = rand_tensor(rng, m, n, -2.0, 2.0);
            let gamma = rand_tensor(rng, 1, n, 0.5, 1.5);
            let beta = rand_tensor(rng, 1, n, -0.5, 0.5);
            let w = rand_tensor(rng, m, n, -1.0, 1.0);
            Case {
                name: format!("batch_norm#{k}"),
                inputs: vec![x, gamma, beta],
                build: Box::new(move |tape, ids| {
                    // Fresh state per evaluation; training-mode output
                    // depends only on the batch, not the running stats.
                    let mut bn = BatchNorm::new(w.cols());
                    let y = bn.forward_train(tape, ids[0], ids[1], ids[2])?;
                    weighted_sum(tape, y, &w)
                }),
            }
        })
        .collect()
}

/// A 4-hidden-layer ReLU network with batch normalization on every hidden
/// layer, checked end to end through all of its parameters.
fn full_network_case(rng: &mut ChaCha8Rng) -> Case {
    let (batch, din, width, dout) = (6, 5, 8, 2);
    let x = rand_tensor(rng, batch, din, -2.0, 2.0);
    let wout = rand_tensor(rng, batch, dout, -1.0, 1.0);
    let mut inputs = Vec::new();
    let mut dims = vec![din];
    dims.extend([width; 4]);
    dims.push(dout);
    for i in 0..5 {
        inputs.push(rand_tensor(rng, dims[i], dims[i + 1], -0.7, 0.7));
        inputs.push(rand_tensor(rng, 1, dims[i + 1], -0.1, 0.1));
        if i < 4 {
            inputs.push(rand_tensor(rng, 1, dims[i + 1], 0.5, 1.5)); // gamma
            inputs.push(rand_tensor(rng, 1, dims[i + 1], -0.3, 0.3)); // beta
        }
    }
    Case {
        name: "full_network".to_string(),
        inputs,
        build: Box::new(move |tape, ids| {
            let mut h = tape.leaf(&x);
            let mut at = 0;
            for layer in 0..5 {
                let z = tape.matmul(h, ids[at])?;
                let z = tape.add(z, ids[at + 1])?;
                if layer < 4 {
                    let mut bn = BatchNorm::new(tape.value(z).cols());
                    let z = bn.forward_train(tape, z, ids[at + 2], ids[at + 3])?;
                    h = tape.relu(z)?;
                    at += 4;
                } else {
                    h = z;
                    at += 2;
                }
            }
            weighted_sum(tape, h, &wout)
        }),
    }
}

/// Runs the whole randomized suite. `per_op` controls the number of random
/// instances per primitive; 8 yields well over 100 cases.
pub fn run_full_suite(seed: u64, per_op: usize) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::new();
    cases.extend(unary_cases(&mut rng, per_op));
    cases.extend(binary_cases(&mut rng, per_op));
    cases.extend(matmul_cases(&mut rng, per_op));
    cases.extend(reduce_cases(&mut rng, (per_op / 2).max(1)));
    cases.extend(structural_cases(&mut rng, per_op / 2 + 1));
    cases.extend(batchnorm_cases(&mut rng, per_op));
    cases.push(full_network_case(&mut rng));

    let reports = cases
        .iter()
        .map(|c| check_tape_gradients(&c.name, &c.inputs, |tape, ids| (c.build)(tape, ids)))
        .collect();
    SuiteReport { cases: reports }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finite_diff_on_quadratic() {
        let g = finite_diff(|x| x[0] * x[0] + 3.0 * x[1], &[2.0, 5.0], 1e-6);
        assert!((g[0] - 4.0).abs() < 1e-8);
        assert!((g[1] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn small_suite_passes() {
        let report = run_full_suite(7, 2);
        for c in &report.cases {
            assert!(c.pass, "case {} failed with error {}", c.name, c.max_err);
        }
    }
}
