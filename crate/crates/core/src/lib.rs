//! Remote state estimation over packet-dropping channels under a hijacked
//! sensor: steady-state Kalman analysis, stationary holding-time chains,
//! occupation-measure LPs for stealthy transmission policies, and the
//! Stackelberg search for the defender's reference policy.
//!
//! The crate is organized around the pipeline stages:
//!
//! * [`sysmodel`] — plant/sensor model, steady covariance, the open-loop
//!   covariance map `f(X) = A X Aᵀ + Q` and trace bounds on its iterates.
//! * [`chain`] — stationary analysis of the sensor-belief holding-time
//!   chain before an intrusion: distributions, cost indices, secrecy
//!   thresholds.
//! * [`linprog`] — a dense, deterministic revised-simplex solver with warm
//!   restarts; every optimization in the crate goes through it.
//! * [`mdp`] — the adversary's truncated MDP, occupation-measure LP with the
//!   l1 stealth constraint, policy extraction and diagnostics.
//! * [`stackelberg`] — the defender's bilevel search: leader objective,
//!   optimistic lower bounds, depth-first branch-and-bound and exhaustive
//!   enumeration.
//! * [`sim`] — seeded Monte Carlo of the full loop with counter-based RNG
//!   streams, empirical cost estimates and the window-distribution detector.

pub mod chain;
pub mod linprog;
pub mod mdp;
pub mod sim;
pub mod stackelberg;
pub mod sysmodel;






pub use sysmodel::{SteadyCovariance, SystemModel};
