//! Control invariant set synthesis for dynamics given as ReLU networks, and
//! model predictive control that stays inside the synthesized set.
//!
//! The state space is quantized into a grid ([`boxes`]). Interval
//! reachability ([`reach`]) and mixed-integer encodings ([`encode`]) solved
//! by the built-in branch-and-bound engine ([`mip`]) decide which grid boxes
//! can be steered back into a target set. Iterating that test to a fixed
//! point ([`synth`]) yields the invariant set together with one admissible
//! control per box. [`mpc`] runs a receding-horizon controller constrained
//! to that set.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod boxes;
pub mod encode;
pub mod io;
pub mod mip;
pub mod mpc;
pub mod network;
pub mod reach;
pub mod synth;
