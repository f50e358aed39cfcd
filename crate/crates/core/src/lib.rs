//! Primal-dual constrained training of small fully-connected power-control
//! networks for wireless resource allocation, in a centralized architecture
//! and in a distributed one where nodes exchange stochastically binarized
//! messages over finite-rate links.
//!
//! The crate is organized bottom-up:
//!
//! * [`autodiff`]: dense-tensor reverse-mode differentiation, Adam, batch
//!   normalization, Xavier initialization, finite-difference checking.
//! * [`mlp`]: fully-connected networks with feasibility-enforcing output
//!   activations and checkpointing.
//! * [`binarize`]: the stochastic sign quantizer with a pass-through
//!   gradient.
//! * [`problems`]: channel models, costs, and expectation constraints for
//!   the three power-control problems (multiple-access sum capacity,
//!   interference-channel sum rate, interference-channel min rate).
//! * [`trainer`]: the primal-dual training loop (Adam on network weights,
//!   projected subgradient ascent on multipliers) and policy evaluation.
//! * [`distributed`]: per-node quantizer/optimizer networks wired through
//!   binarized messages, trained centrally and executed distributedly.
//! * [`baselines`]: classical references (dual-decomposition oracle,
//!   fractional-knapsack short-term allocator, WMMSE, exhaustive grid,
//!   simple heuristics, zero-padded single-network evaluation).
//! * [`harness`]: experiment configs, sweeps, result tables, CSV and plot
//!   spec emission.

pub mod autodiff;
pub mod baselines;
pub mod binarize;
pub mod distributed;
pub mod harness;
pub mod mlp;
pub mod problems;
pub mod trainer;
