//! Batch normalization over the row (sample) axis, composed from tape
//! primitives so its backward pass comes from the same reverse sweep as
//! everything else.

use super::tape::{Axis, NodeId, Tape};
use super::tensor::Tensor;
use super::{AdError, AdResult};

/// Per-feature affine normalization state. Training mode normalizes by the
/// statistics of the current batch and folds them into exponential running
/// averages; evaluation mode replays the stored averages.
#[derive(Clone)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(dim: usize) -> Self {
        BatchNorm {
            gamma: Tensor::filled(1, dim, 1.0),
            beta: Tensor::zeros(1, dim),
            running_mean: Tensor::zeros(1, dim),
            running_var: Tensor::filled(1, dim, 1.0),
            momentum: 0.99,
            eps: 1e-5,
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.cols()
    }

    /// Training-mode forward. `gamma_id`/`beta_id` are the parameter leaves
    /// for this layer's scale and shift. Updates the running statistics as a
    /// side effect; the normalization itself uses the batch statistics, so
    /// the returned node's value does not depend on the running state.
    pub fn forward_train(&mut self, tape: &mut Tape, x: NodeId, gamma_id: NodeId, beta_id: NodeId) -> AdResult<NodeId> {
        let rows = tape.value(x).rows();
        if rows < 2 {
            return Err(AdError::BatchTooSmall { rows });
        }
        let mu = tape.mean(x, Some(Axis::Rows))?;
        let xc = tape.sub(x, mu)?;
        let sq = tape.mul(xc, xc)?;
        let var = tape.mean(sq, Some(Axis::Rows))?;
        let var_eps = tape.add_scalar(var, self.eps)?;
        let std = tape.sqrt(var_eps)?;
        let xn = tape.div(xc, std)?;
        let scaled = tape.mul(xn, gamma_id)?;
        let out = tape.add(scaled, beta_id)?;

        let (mu_v, var_v) = (tape.value(mu).clone(), tape.value(var).clone());
        let m = self.momentum;
        for i in 0..self.dim() {
            let rm = self.running_mean.data_mut();
            rm[i] = m * rm[i] + (1.0 - m) * mu_v.data()[i];
            let rv = self.running_var.data_mut();
            rv[i] = m * rv[i] + (1.0 - m) * var_v.data()[i];
        }
        Ok(out)
    }

    /// Evaluation-mode forward using the stored running statistics. Pure:
    /// no state is modified.
    pub fn forward_eval(&self, tape: &mut Tape, x: NodeId, gamma_id: NodeId, beta_id: NodeId) -> AdResult<NodeId> {
        let mu = tape.leaf(&self.running_mean);
        let var_eps = {
            let v = self.running_var.map(|v| v + self.eps);
            tape.leaf(&v)
        };
        let xc = tape.sub(x, mu)?;
        let std = tape.sqrt(var_eps)?;
        let xn = tape.div(xc, std)?;
        let scaled = tape.mul(xn, gamma_id)?;
        tape.add(scaled, beta_id)
    }
}
