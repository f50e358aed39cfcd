//! Stochastic binarization of bounded message values.
//!
//! A quantizer network ends in `tanh`, so its output `v_hat` lies in
//! `[-1, 1]`. Each entry is mapped to `+1` with probability
//! `(1 + v_hat) / 2` and `-1` otherwise, which makes the transmitted symbol
//! an unbiased estimate of `v_hat`: the injected noise `q = v - v_hat` has
//! zero mean conditioned on `v_hat`. Training backpropagates through the
//! sampling as if it were the identity (pass-through); evaluation replaces
//! sampling with the deterministic sign, `sign(0) = +1`.

use crate::autodiff::{AdError, AdResult, NodeId, Tape, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Tolerance for values that drift past the bound by rounding; anything
/// worse is a caller bug.
const RANGE_SLACK: f64 = 1e-12;

/// Sampled symbols together with the quantizer output and realized noise.
#[derive(Debug)]
pub struct BinarizerOutput {
    pub v: Tensor,
    pub v_hat: Tensor,
    pub q: Tensor,
}

fn validate(v_hat: &Tensor) -> AdResult<()> {
    for (i, &x) in v_hat.data().iter().enumerate() {
        if !(x >= -1.0 - RANGE_SLACK && x <= 1.0 + RANGE_SLACK) {
            return Err(AdError::OutOfRange { value: x, index: i });
        }
    }
    Ok(())
}

/// Samples bipolar symbols from quantizer outputs.
pub fn binarize_forward(v_hat: &Tensor, rng: &mut ChaCha8Rng) -> AdResult<BinarizerOutput> {
    validate(v_hat)?;
    let mut v = Tensor::zeros(v_hat.rows(), v_hat.cols());
    for (out, &x) in v.data_mut().iter_mut().zip(v_hat.data()) {
        let p_plus = (1.0 + x.clamp(-1.0, 1.0)) / 2.0;
        *out = if rng.gen::<f64>() < p_plus { 1.0 } else { -1.0 };
    }
    let q = Tensor::from_vec(
        v.rows(),
        v.cols(),
        v.data().iter().zip(v_hat.data()).map(|(a, b)| a - b).collect(),
    );
    Ok(BinarizerOutput { v, v_hat: v_hat.clone(), q })
}

/// Deterministic evaluation rule: the sign, with ties to `+1`.
pub fn binarize_eval(v_hat: &Tensor) -> AdResult<Tensor> {
    validate(v_hat)?;
    Ok(v_hat.map(|x| if x >= 0.0 { 1.0 } else { -1.0 }))
}

/// Binarization on the tape: the node's forward value is the sampled (or
/// sign) symbol vector, its adjoint is the identity, so gradients reach the
/// quantizer as if the symbols were `v_hat` itself.
pub fn tape_binarize(tape: &mut Tape, v_hat: NodeId, stochastic: bool, rng: &mut ChaCha8Rng) -> AdResult<NodeId> {
    let value = if stochastic {
        binarize_forward(tape.value(v_hat), rng)?.v
    } else {
        binarize_eval(tape.value(v_hat))?
    };
    tape.straight_through(v_hat, value)
}
