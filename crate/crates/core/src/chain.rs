//! Stationary analysis of the holding-time Markov chains before an
//! intrusion: the sensor-belief chain, its cost index `J_u`, boundedness
//! tests, secrecy thresholds, and the joint `(eta, eta^s)` chain.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sysmodel::{RiccatiError, RiccatiTraces, SteadyCovariance, SystemModel};

#[derive(Debug, Error)]
pub enum ChainError {
    #[error("probability `{name}` = {value} is outside [0, 1]")]
    InvalidProbability { name: &'static str, value: f64 },
    #[error("transmission probability tau_{0} = {1} is outside [0, 1]")]
    InvalidTau(usize, f64),
    #[error("degenerate policy: the chain has no return path to state 0 (tau_i * lambda * lambda_a = 0 everywhere)")]
    DegeneratePolicy,
    #[error("J_u is unbounded: the all-transmit tail violates lambda*lambda_a > 1 - 1/rho(A)^2")]
    Unbounded,
    #[error("truncation {trunc} is smaller than the policy horizon {n_r}")]
    TruncationTooShort { trunc: usize, n_r: usize },
    #[error("power iteration did not converge within {0} sweeps")]
    NonConvergence(usize),
    #[error("the system is not unstable: |lambda_max(A)| = {0} <= 1")]
    NotUnstable(f64),
    #[error("no finite secrecy threshold exists for these channel parameters")]
    NoFiniteThreshold,
    #[error(transparent)]
    Riccati(#[from] RiccatiError),
}

/// Reception probabilities of the data, ACK, and eavesdrop channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub lambda: f64,
    pub lambda_a: f64,
    pub lambda_e: f64,
}

impl ChannelParams {
    pub fn new(lambda: f64, lambda_a: f64, lambda_e: f64) -> Result<Self, ChainError> {
        for (name, value) in [("lambda", lambda), ("lambda_a", lambda_a), ("lambda_e", lambda_e)] {
            if !(0.0..=1.0).contains(&value) || !value.is_finite() {
                return Err(ChainError::InvalidProbability { name, value });
            }
        }
        Ok(Self { lambda, lambda_a, lambda_e })
    }

    /// Probability that one transmission resets the sensor belief
    /// (reception and ACK both succeed).
    pub fn belief_reset(&self) -> f64 {
        self.lambda * self.lambda_a
    }
}

/// The sensor's randomized transmission rule: probability `tau_i` of
/// transmitting at believed holding time `i`, with an all-transmit tail
/// (`tau_i = 1` for `i >= N_r`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferencePolicy {
    taus: Vec<f64>,
}

impl ReferencePolicy {
    pub fn new(taus: Vec<f64>) -> Result<Self, ChainError> {
        for (i, &t) in taus.iter().enumerate() {
            if !(0.0..=1.0).contains(&t) || !t.is_finite() {
                return Err(ChainError::InvalidTau(i, t));
            }
        }
        Ok(Self { taus })
    }

    /// Threshold policy: stay silent while the believed holding time is
    /// below `t`, transmit from `t` on. `threshold(0)` transmits always.
    pub fn threshold(t: usize) -> Self {
        Self { taus: vec![0.0; t] }
    }

    pub fn always_transmit() -> Self {
        Self { taus: Vec::new() }
    }

    pub fn n_r(&self) -> usize {
        self.taus.len()
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    /// `tau_i` with the all-transmit tail applied.
    pub fn tau(&self, i: usize) -> f64 {
        self.taus.get(i).copied().unwrap_or(1.0)
    }
}

/// Distribution over a truncated holding-time support with the analytic
/// remainder of the geometric tail collected in `tail_mass`.
#[derive(Debug, Clone)]
pub struct StationaryDistribution {
    pub probs: Vec<f64>,
    pub tail_mass: f64,
}

impl StationaryDistribution {
    pub fn total_mass(&self) -> f64 {
        self.probs.iter().sum::<f64>() + self.tail_mass
    }
}

/// Stationary distribution `pi^s` of the believed holding time under a
/// reference policy, evaluated on `{0..=trunc}` with the geometric remainder.
///
/// Unnormalized weights follow `u_0 = 1`, `u_{i+1} = u_i (1 - tau_i p)` with
/// `p = lambda * lambda_a`; beyond the policy horizon the chain is exactly
/// geometric, which closes the normalization in closed form.
pub fn stationary_sensor_belief(
    policy: &ReferencePolicy,
    chan: &ChannelParams,
    trunc: usize,
) -> Result<StationaryDistribution, ChainError> {
    if trunc < policy.n_r() {
        return Err(ChainError::TruncationTooShort { trunc, n_r: policy.n_r() });
    }
    let p = chan.belief_reset();
    if p == 0.0 {
        return Err(ChainError::DegeneratePolicy);
    }
    let mut weights = Vec::with_capacity(trunc + 1);
    let mut u = 1.0;
    for i in 0..=trunc {
        weights.push(u);
        u *= 1.0 - policy.tau(i) * p;
    }
    // Sum of weights past the truncation point: u_{trunc+1} * sum_k (1-p)^k.
    let tail_weight = u / p;
    let total: f64 = weights.iter().sum::<f64>() + tail_weight;
    Ok(StationaryDistribution {
        probs: weights.into_iter().map(|w| w / total).collect(),
        tail_mass: tail_weight / total,
    })
}

/// Upper bound `J_u = sum_j pi^s_j tr f^j(P̄)` on the estimator's averaged
/// expected error covariance, truncated once the certified remainder is
/// below `tail_tol`.
pub fn j_upper(
    policy: &ReferencePolicy,
    chan: &ChannelParams,
    steady: &SteadyCovariance,
    model: &SystemModel,
    tail_tol: f64,
) -> Result<f64, ChainError> {
    let mut traces = RiccatiTraces::new(model, &steady.p_bar);
    j_upper_with_traces(policy, chan, &mut traces, tail_tol)
}

/// As [`j_upper`] but reusing a caller-owned trace table.
pub fn j_upper_with_traces(
    policy: &ReferencePolicy,
    chan: &ChannelParams,
    traces: &mut RiccatiTraces,
    tail_tol: f64,
) -> Result<f64, ChainError> {
    let rho = traces.model().spectral_radius();
    let p = chan.belief_reset();
    if rho > 1.0 && p <= 1.0 - 1.0 / (rho * rho) {
        return Err(ChainError::Unbounded);
    }
    let n_r = policy.n_r();
    let dist = stationary_sensor_belief(policy, chan, n_r)?;
    // Exact terms over the policy prefix, certified geometric tail beyond.
    let mut sum = 0.0;
    for (j, &pi) in dist.probs.iter().enumerate().take(n_r) {
        sum += pi * traces.trace(j);
    }
    let pi_nr = dist.probs[n_r];
    sum += traces.weighted_tail_sum(n_r, pi_nr, 1.0 - p, tail_tol)?;
    Ok(sum)
}

/// Outcome of the boundedness test for `J_u`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundednessVerdict {
    /// The sufficient condition holds for the policy tail.
    Sufficient,
    /// The necessary condition fails: the tail can never deliver a packet.
    NecessaryViolated,
    /// Neither test is decisive.
    Inconclusive,
}

/// Checks the sufficient condition `tau_i > (1/(lambda lambda_a))(1 - 1/rho^2)`
/// on the all-transmit tail, and the necessary condition that the product
/// `prod (1 - tau_i lambda)` decays, which for this policy family reduces to
/// `lambda > 0` in the tail.
pub fn check_boundedness(
    _policy: &ReferencePolicy,
    chan: &ChannelParams,
    model: &SystemModel,
) -> BoundednessVerdict {
    let rho = model.spectral_radius();
    if rho < 1.0 {
        return BoundednessVerdict::Sufficient;
    }
    if chan.lambda == 0.0 {
        return BoundednessVerdict::NecessaryViolated;
    }
    let p = chan.belief_reset();
    if p > 0.0 && 1.0 > (1.0 - 1.0 / (rho * rho)) / p {
        return BoundednessVerdict::Sufficient;
    }
    BoundednessVerdict::Inconclusive
}

/// Which secrecy-threshold inequality to scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdMode {
    /// `1 / rho^{2(t+1)} < lambda (1 - lambda_e)`.
    Plain,
    /// `lambda_e < 1 - 1/(lambda lambda_a rho^{2(t+1)})`, the ACK-aware variant.
    WithAck,
}

/// Smallest threshold `t` for which the chosen secrecy inequality holds.
pub fn min_secrecy_threshold(
    chan: &ChannelParams,
    model: &SystemModel,
    mode: ThresholdMode,
) -> Result<usize, ChainError> {
    let rho = model.spectral_radius();
    if rho <= 1.0 {
        return Err(ChainError::NotUnstable(rho));
    }
    let feasible = match mode {
        ThresholdMode::Plain => chan.lambda * (1.0 - chan.lambda_e) > 0.0,
        ThresholdMode::WithAck => chan.belief_reset() > 0.0 && chan.lambda_e < 1.0,
    };
    if !feasible {
        return Err(ChainError::NoFiniteThreshold);
    }
    let mut pow = rho * rho; // rho^{2(t+1)} at t = 0
    for t in 0..=1_000_000usize {
        let holds = match mode {
            ThresholdMode::Plain => 1.0 / pow < chan.lambda * (1.0 - chan.lambda_e),
            ThresholdMode::WithAck => chan.lambda_e < 1.0 - 1.0 / (chan.belief_reset() * pow),
        };
        if holds {
            return Ok(t);
        }
        pow *= rho * rho;
    }
    Err(ChainError::NoFiniteThreshold)
}

/// Stationary distribution of the joint `(eta, eta^s)` chain on the
/// triangular support `0 <= i <= j <= trunc`.
#[derive(Debug, Clone)]
pub struct JointStationary {
    trunc: usize,
    probs: Vec<f64>, // row-major (i, j), exactly zero above the diagonal i > j
}

impl JointStationary {
    pub fn trunc(&self) -> usize {
        self.trunc
    }

    pub fn prob(&self, i: usize, j: usize) -> f64 {
        self.probs[i * (self.trunc + 1) + j]
    }

    /// Marginal over the estimator holding time `eta`.
    pub fn eta_marginal(&self) -> Vec<f64> {
        let n = self.trunc + 1;
        (0..n).map(|i| (0..n).map(|j| self.prob(i, j)).sum()).collect()
    }

    /// Marginal over the sensor belief `eta^s`.
    pub fn belief_marginal(&self) -> Vec<f64> {
        let n = self.trunc + 1;
        (0..n).map(|j| (0..n).map(|i| self.prob(i, j)).sum()).collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.probs.iter().sum()
    }
}

const JOINT_TOL: f64 = 1e-12;
const JOINT_MAX_SWEEPS: usize = 1_000_000;

/// Joint stationary distribution of `(eta, eta^s)` under a reference policy
/// by power iteration on the transition kernel, truncated at `trunc`.
///
/// From `(i, j)` the chain moves to `(0, 0)` with probability
/// `tau_j lambda lambda_a`, to `(0, j+1)` with `tau_j lambda (1 - lambda_a)`,
/// and to `(i+1, j+1)` otherwise; indices cap at `trunc`. Capping is exact
/// because the policy is constant beyond its horizon.
pub fn joint_stationary(
    policy: &ReferencePolicy,
    chan: &ChannelParams,
    trunc: usize,
) -> Result<JointStationary, ChainError> {
    if trunc < policy.n_r() {
        return Err(ChainError::TruncationTooShort { trunc, n_r: policy.n_r() });
    }
    if chan.belief_reset() == 0.0 {
        return Err(ChainError::DegeneratePolicy);
    }
    let n = trunc + 1;
    let idx = |i: usize, j: usize| i * n + j;
    let mut cur = vec![0.0; n * n];
    cur[idx(0, 0)] = 1.0;
    let mut next = vec![0.0; n * n];
    for sweep in 0..JOINT_MAX_SWEEPS {
        next.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..n {
            let tau = policy.tau(j);
            let to_origin = tau * chan.lambda * chan.lambda_a;
            let to_lost_ack = tau * chan.lambda * (1.0 - chan.lambda_a);
            let to_climb = 1.0 - tau * chan.lambda;
            let jn = (j + 1).min(trunc);
            for i in 0..=j {
                let mass = cur[idx(i, j)];
                if mass == 0.0 {
                    continue;
                }
                next[idx(0, 0)] += mass * to_origin;
                next[idx(0, jn)] += mass * to_lost_ack;
                next[idx((i + 1).min(trunc), jn)] += mass * to_climb;
            }
        }
        let delta = cur
            .iter()
            .zip(next.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        std::mem::swap(&mut cur, &mut next);
        if delta < JOINT_TOL {
            return Ok(JointStationary { trunc, probs: cur });
        }
        // Light damping every so often breaks near-periodic orbits.
        if sweep % 64 == 63 {
            for (c, p) in cur.iter_mut().zip(next.iter()) {
                *c = 0.5 * *c + 0.5 * p;
            }
        }
    }
    Err(ChainError::NonConvergence(JOINT_MAX_SWEEPS))
}
