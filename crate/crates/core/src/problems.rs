//! The three power-control problems and their channel models.
//!
//! All channel power gains are i.i.d. unit-mean exponential (Rayleigh
//! fading amplitudes), noise power is one, and rates are in nats. The
//! decision for every problem is one transmit power per node.
//!
//! * Sum capacity of a multiple-access channel (`CmacSumCapacity`):
//!   maximize `E[log(1 + sum_i h_i p_i)]` subject to per-user average
//!   power bounds, an average interference-temperature bound
//!   `E[sum_i g_i p_i] <= gamma`, and `p_i >= 0`.
//! * Interference-channel sum rate (`IfcSumRate`): maximize
//!   `E[sum_i log(1 + h_ii p_i / (1 + sum_{j!=i} h_ji p_j))]` subject to
//!   average powers `E[p_i] <= p_avg` and peak powers `0 <= p_i <= p_peak`.
//! * Interference-channel min rate (`IfcMinRate`): same constraints,
//!   maximize the expected minimum of the per-user rates.
//!
//! Observation layout (one row per sample): the concatenation of per-node
//! blocks. Node `i` of the multiple-access problem sees `(h_i, g_i)`; node
//! `i` of the interference problems sees the gains into its receiver,
//! `(h_{1->i}, ..., h_{N->i})`.

use crate::autodiff::{AdResult, Axis, NodeId, Tape, Tensor};
use crate::mlp::FeasibleSet;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    CmacSumCapacity,
    IfcSumRate,
    IfcMinRate,
}

/// One channel realization.
#[derive(Debug, Clone, PartialEq)]
pub enum ChannelSample {
    Cmac {
        h: Vec<f64>,
        g: Vec<f64>,
    },
    /// `gains[tx * n + rx]` is the power gain from transmitter `tx` to
    /// receiver `rx`.
    Ifc {
        n: usize,
        gains: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub n: usize,
    /// Average transmit power bound per node (equals the linear SNR, since
    /// noise power is one).
    pub p_avg: f64,
    /// Peak power bound per node (interference-channel problems only).
    pub p_peak: f64,
    /// Interference-temperature bound (multiple-access problem only).
    pub gamma: f64,
}

pub fn snr_db_to_linear(snr_db: f64) -> f64 {
    10f64.powf(snr_db / 10.0)
}

impl ProblemSpec {
    pub fn cmac(n: usize, p_avg: f64, gamma: f64) -> Self {
        ProblemSpec { kind: ProblemKind::CmacSumCapacity, n, p_avg, p_peak: f64::INFINITY, gamma }
    }

    pub fn ifc_sum(n: usize, p_avg: f64, p_peak: f64) -> Self {
        ProblemSpec { kind: ProblemKind::IfcSumRate, n, p_avg, p_peak, gamma: f64::NAN }
    }

    pub fn ifc_min(n: usize, p_avg: f64, p_peak: f64) -> Self {
        ProblemSpec { kind: ProblemKind::IfcMinRate, n, p_avg, p_peak, gamma: f64::NAN }
    }

    /// Standard sweep construction: the average power bound is the linear
    /// SNR; interference problems additionally get `p_peak = ratio * p_avg`.
    pub fn from_snr_db(kind: ProblemKind, n: usize, snr_db: f64, gamma: f64, peak_ratio: f64) -> Self {
        let p = snr_db_to_linear(snr_db);
        match kind {
            ProblemKind::CmacSumCapacity => Self::cmac(n, p, gamma),
            ProblemKind::IfcSumRate => Self::ifc_sum(n, p, peak_ratio * p),
            ProblemKind::IfcMinRate => Self::ifc_min(n, p, peak_ratio * p),
        }
    }

    pub fn is_cmac(&self) -> bool {
        self.kind == ProblemKind::CmacSumCapacity
    }

    pub fn metric_name(&self) -> &'static str {
        match self.kind {
            ProblemKind::CmacSumCapacity => "sum_capacity",
            ProblemKind::IfcSumRate => "sum_rate",
            ProblemKind::IfcMinRate => "min_rate",
        }
    }

    /// Per-node observation widths; their concatenation is the global
    /// observation.
    pub fn obs_partition(&self) -> Vec<usize> {
        match self.kind {
            ProblemKind::CmacSumCapacity => vec![2; self.n],
            _ => vec![self.n; self.n],
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_partition().iter().sum()
    }

    /// Per-node decision widths (one power each).
    pub fn decision_dims(&self) -> Vec<usize> {
        vec![1; self.n]
    }

    pub fn decision_dim(&self) -> usize {
        self.n
    }

    pub fn feasible_set(&self) -> FeasibleSet {
        match self.kind {
            ProblemKind::CmacSumCapacity => FeasibleSet::NonNeg,
            _ => FeasibleSet::Box { lo: 0.0, hi: self.p_peak },
        }
    }

    /// Bounds of the averaged constraints, in logging order: per-user
    /// average powers, then (multiple-access only) the interference
    /// temperature.
    pub fn constraint_bounds(&self) -> Vec<f64> {
        let mut bounds = vec![self.p_avg; self.n];
        if self.is_cmac() {
            bounds.push(self.gamma);
        }
        bounds
    }

    pub fn constraint_count(&self) -> usize {
        self.constraint_bounds().len()
    }

    // ── sampling ────────────────────────────────────────────────────────

    /// A batch of observations, one sample per row, all entries i.i.d.
    /// unit-mean exponential.
    pub fn sample_obs(&self, count: usize, rng: &mut ChaCha8Rng) -> Tensor {
        let dim = self.obs_dim();
        let data = (0..count * dim)
            .map(|_| {
                let x: f64 = rng.sample(Exp1);
                x.max(f64::MIN_POSITIVE)
            })
            .collect();
        Tensor::from_vec(count, dim, data)
    }

    pub fn sample_channels(&self, count: usize, rng: &mut ChaCha8Rng) -> Vec<ChannelSample> {
        let obs = self.sample_obs(count, rng);
        (0..count).map(|r| self.channel_from_obs_row(obs.row(r))).collect()
    }

    pub fn channel_from_obs_row(&self, row: &[f64]) -> ChannelSample {
        match self.kind {
            ProblemKind::CmacSumCapacity => {
                let h = (0..self.n).map(|i| row[2 * i]).collect();
                let g = (0..self.n).map(|i| row[2 * i + 1]).collect();
                ChannelSample::Cmac { h, g }
            }
            _ => {
                let n = self.n;
                let mut gains = vec![0.0; n * n];
                for rx in 0..n {
                    for tx in 0..n {
                        gains[tx * n + rx] = row[rx * n + tx];
                    }
                }
                ChannelSample::Ifc { n, gains }
            }
        }
    }

    pub fn obs_row_from_channel(&self, sample: &ChannelSample) -> Vec<f64> {
        match (self.kind, sample) {
            (ProblemKind::CmacSumCapacity, ChannelSample::Cmac { h, g }) => {
                let mut row = Vec::with_capacity(2 * self.n);
                for i in 0..self.n {
                    row.push(h[i]);
                    row.push(g[i]);
                }
                row
            }
            (_, ChannelSample::Ifc { n, gains }) => {
                let n = *n;
                let mut row = vec![0.0; n * n];
                for rx in 0..n {
                    for tx in 0..n {
                        row[rx * n + tx] = gains[tx * n + rx];
                    }
                }
                row
            }
            _ => panic!("channel sample kind does not match problem kind"),
        }
    }

    // ── per-sample closed forms ─────────────────────────────────────────

    /// The maximized objective for one realization.
    pub fn metric(&self, sample: &ChannelSample, p: &[f64]) -> f64 {
        match (self.kind, sample) {
            (ProblemKind::CmacSumCapacity, ChannelSample::Cmac { h, .. }) => cmac_capacity(h, p),
            (ProblemKind::IfcSumRate, ChannelSample::Ifc { n, gains }) => ifc_rates(*n, gains, p).iter().sum(),
            (ProblemKind::IfcMinRate, ChannelSample::Ifc { n, gains }) => {
                ifc_rates(*n, gains, p).iter().cloned().fold(f64::INFINITY, f64::min)
            }
            _ => panic!("channel sample kind does not match problem kind"),
        }
    }

    /// Values of the averaged-constraint integrands for one realization.
    pub fn constraint_values(&self, sample: &ChannelSample, p: &[f64]) -> Vec<f64> {
        let mut values = p.to_vec();
        if let (ProblemKind::CmacSumCapacity, ChannelSample::Cmac { g, .. }) = (self.kind, sample) {
            values.push(g.iter().zip(p).map(|(a, b)| a * b).sum());
        }
        values
    }

    /// Per-sample metrics for a whole batch (plain route, no tape).
    pub fn metric_rows(&self, obs: &Tensor, x: &Tensor) -> Vec<f64> {
        (0..obs.rows())
            .map(|r| self.metric(&self.channel_from_obs_row(obs.row(r)), x.row(r)))
            .collect()
    }

    /// Per-sample constraint integrands for a whole batch.
    pub fn constraint_rows(&self, obs: &Tensor, x: &Tensor) -> Vec<Vec<f64>> {
        (0..obs.rows())
            .map(|r| self.constraint_values(&self.channel_from_obs_row(obs.row(r)), x.row(r)))
            .collect()
    }

    // ── tape graphs for training ────────────────────────────────────────

    /// Mean minimized cost (negative metric) over the batch.
    pub fn build_cost_mean(&self, tape: &mut Tape, obs: NodeId, x: NodeId) -> AdResult<NodeId> {
        let per_sample = self.build_metric_samples(tape, obs, x)?;
        let neg = tape.neg(per_sample)?;
        tape.mean(neg, None)
    }

    /// Per-sample maximized metric, shape `[S x 1]`.
    pub fn build_metric_samples(&self, tape: &mut Tape, obs: NodeId, x: NodeId) -> AdResult<NodeId> {
        match self.kind {
            ProblemKind::CmacSumCapacity => {
                let h = self.select_cmac(tape, obs, 0)?;
                let hp = tape.mul(h, x)?;
                let y = tape.sum(hp, Some(Axis::Cols))?;
                tape.log1p(y)
            }
            ProblemKind::IfcSumRate => {
                let rates = self.build_ifc_rates(tape, obs, x)?;
                tape.sum(rates, Some(Axis::Cols))
            }
            ProblemKind::IfcMinRate => {
                let rates = self.build_ifc_rates(tape, obs, x)?;
                tape.min(rates, Some(Axis::Cols))
            }
        }
    }

    /// Per-sample constraint integrands, one `[S x 1]` node per constraint
    /// in the order of [`ProblemSpec::constraint_bounds`].
    pub fn build_constraint_samples(&self, tape: &mut Tape, obs: NodeId, x: NodeId) -> AdResult<Vec<NodeId>> {
        let mut out = Vec::with_capacity(self.constraint_count());
        for i in 0..self.n {
            out.push(tape.slice_cols(x, i, 1)?);
        }
        if self.is_cmac() {
            let g = self.select_cmac(tape, obs, 1)?;
            let gp = tape.mul(g, x)?;
            out.push(tape.sum(gp, Some(Axis::Cols))?);
        }
        Ok(out)
    }

    /// Per-user rates of the interference channel as an `[S x N]` node.
    ///
    /// With observation column `i*N + j` holding `h_{j->i}`, a constant
    /// expansion matrix turns the powers into a matching `[S x N^2]` layout
    /// so that received powers per receiver are a masked column sum.
    pub fn build_ifc_rates(&self, tape: &mut Tape, obs: NodeId, x: NodeId) -> AdResult<NodeId> {
        let n = self.n;
        let mut expand = Tensor::zeros(n, n * n);
        let mut fold = Tensor::zeros(n * n, n);
        let mut diag_mask = Tensor::zeros(1, n * n);
        for i in 0..n {
            for j in 0..n {
                expand.set(j, i * n + j, 1.0);
                fold.set(i * n + j, i, 1.0);
            }
            diag_mask.set(0, i * n + i, 1.0);
        }
        let expand = tape.leaf(&expand);
        let fold = tape.leaf(&fold);
        let diag_mask = tape.leaf(&diag_mask);

        let p_wide = tape.matmul(x, expand)?;
        let t = tape.mul(obs, p_wide)?;
        let received = tape.matmul(t, fold)?;
        let diag_only = tape.mul(t, diag_mask)?;
        let signal = tape.matmul(diag_only, fold)?;
        let interference = tape.sub(received, signal)?;
        let denom = tape.add_scalar(interference, 1.0)?;
        let ratio = tape.div(signal, denom)?;
        tape.log1p(ratio)
    }

    /// Selector matmul extracting per-user `h` (`offset` 0) or `g`
    /// (`offset` 1) columns from the interleaved observation layout.
    fn select_cmac(&self, tape: &mut Tape, obs: NodeId, offset: usize) -> AdResult<NodeId> {
        let mut sel = Tensor::zeros(2 * self.n, self.n);
        for i in 0..self.n {
            sel.set(2 * i + offset, i, 1.0);
        }
        let sel = tape.leaf(&sel);
        tape.matmul(obs, sel)
    }
}

// ── closed-form per-realization functions ───────────────────────────────

/// `log(1 + sum_i h_i p_i)`.
pub fn cmac_capacity(h: &[f64], p: &[f64]) -> f64 {
    let y: f64 = h.iter().zip(p).map(|(a, b)| a * b).sum();
    y.ln_1p()
}

/// Per-user rates `log(1 + h_ii p_i / (1 + sum_{j!=i} h_ji p_j))` with
/// `gains[tx * n + rx]`.
pub fn ifc_rates(n: usize, gains: &[f64], p: &[f64]) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let signal = gains[i * n + i] * p[i];
            let interference: f64 = (0..n).filter(|&j| j != i).map(|j| gains[j * n + i] * p[j]).sum();
            (signal / (1.0 + interference)).ln_1p()
        })
        .collect()
}

pub fn ifc_sum_rate(n: usize, gains: &[f64], p: &[f64]) -> f64 {
    ifc_rates(n, gains, p).iter().sum()
}

pub fn ifc_min_rate(n: usize, gains: &[f64], p: &[f64]) -> f64 {
    ifc_rates(n, gains, p).iter().cloned().fold(f64::INFINITY, f64::min)
}
