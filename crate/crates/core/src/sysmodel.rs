//! Linear-system core: steady-state Kalman covariance, the open-loop
//! covariance map `f(X) = A X Aᵀ + Q`, its iterates, and trace bounds.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Default fixed-point tolerance for the steady-covariance iteration.
pub const STEADY_TOL: f64 = 1e-12;
/// Default iteration cap for the steady-covariance iteration.
pub const STEADY_MAX_ITER: usize = 1_000_000;
/// Symmetry / definiteness tolerance used when validating model matrices.
const PSD_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("matrix `{name}` must be {rows}x{cols}, got {got_rows}x{got_cols}")]
    DimensionMismatch {
        name: &'static str,
        rows: usize,
        cols: usize,
        got_rows: usize,
        got_cols: usize,
    },
    #[error("matrix `{0}` is not symmetric within 1e-10")]
    NotSymmetric(&'static str),
    #[error("matrix `{0}` is not positive semidefinite (min eigenvalue {1:.3e})")]
    NotPsd(&'static str, f64),
    #[error("measurement noise covariance R is not positive definite (min eigenvalue {0:.3e})")]
    RNotPd(f64),
    #[error("observability rank test failed: rank {rank} < state dimension {n}")]
    NotObservable { rank: usize, n: usize },
    #[error("controllability rank test failed for (A, Q^1/2): rank {rank} < state dimension {n}")]
    NotControllable { rank: usize, n: usize },
    #[error("matrix contains a non-finite entry")]
    NonFinite,
}

#[derive(Debug, Error)]
pub enum RiccatiError {
    #[error("steady covariance iteration did not converge within {max_iter} iterations (residual {residual:.3e})")]
    NonConvergence { max_iter: usize, residual: f64 },
    #[error("operand is {got_rows}x{got_cols}, expected {n}x{n}")]
    DimensionMismatch {
        n: usize,
        got_rows: usize,
        got_cols: usize,
    },
    #[error("weighted trace series diverges: q * rho(A)^2 = {0:.6} >= 1")]
    DivergentTail(f64),
    #[error("trace table exhausted its horizon cap of {0} entries before the tail certificate held")]
    HorizonExhausted(usize),
}

/// LTI plant and sensor matrices together with noise covariances.
///
/// Construction validates symmetry and definiteness of `Q`/`R`, observability
/// of `(C, A)` and controllability of `(A, Q^1/2)`; all downstream analysis
/// assumes those properties.
#[derive(Debug, Clone)]
pub struct SystemModel {
    a: DMatrix<f64>,
    c: DMatrix<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    spectral_radius: f64,
}

impl SystemModel {
    pub fn new(
        a: DMatrix<f64>,
        c: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
    ) -> Result<Self, ModelError> {
        let n = a.nrows();
        let ny = c.nrows();
        check_dims("A", &a, n, n)?;
        check_dims("C", &c, ny, n)?;
        check_dims("Q", &q, n, n)?;
        check_dims("R", &r, ny, ny)?;
        for m in [&a, &c, &q, &r] {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NonFinite);
            }
        }
        check_symmetric("Q", &q)?;
        check_symmetric("R", &r)?;
        let q_eigs = symmetric_eigenvalues(&q);
        if q_eigs.iter().any(|&e| e < -PSD_TOL) {
            return Err(ModelError::NotPsd("Q", q_eigs.iter().cloned().fold(f64::INFINITY, f64::min)));
        }
        let r_eigs = symmetric_eigenvalues(&r);
        let r_min = r_eigs.iter().cloned().fold(f64::INFINITY, f64::min);
        if r_min <= PSD_TOL {
            return Err(ModelError::RNotPd(r_min));
        }

        // Observability of (C, A): rank of the stacked observability matrix.
        let mut obs = DMatrix::zeros(ny * n, n);
        let mut block = c.clone();
        for k in 0..n {
            obs.view_mut((k * ny, 0), (ny, n)).copy_from(&block);
            block = &block * &a;
        }
        let rank = numeric_rank(&obs);
        if rank < n {
            return Err(ModelError::NotObservable { rank, n });
        }

        // Controllability of (A, Q^1/2) via the symmetric square root of Q.
        let q_sqrt = symmetric_sqrt(&q);
        let mut ctrl = DMatrix::zeros(n, n * n);
        let mut col_block = q_sqrt;
        for k in 0..n {
            ctrl.view_mut((0, k * n), (n, n)).copy_from(&col_block);
            col_block = &a * &col_block;
        }
        let rank = numeric_rank(&ctrl);
        if rank < n {
            return Err(ModelError::NotControllable { rank, n });
        }

        let spectral_radius = a
            .clone()
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);

        Ok(Self { a, c, q, r, spectral_radius })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    /// `|lambda_max(A)|`, the spectral radius of the state transition matrix.
    pub fn spectral_radius(&self) -> f64 {
        self.spectral_radius
    }
}

/// Steady posterior error covariance of the sensor's local Kalman filter.
#[derive(Debug, Clone)]
pub struct SteadyCovariance {
    pub p_bar: DMatrix<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Iterates the measurement-updated Riccati recursion from `Q` until
/// successive posterior covariances differ by less than `tol` in
/// max-absolute-entry norm.
pub fn solve_steady_covariance(
    model: &SystemModel,
    tol: f64,
    max_iter: usize,
) -> Result<SteadyCovariance, RiccatiError> {
    assert!(tol > 0.0, "tolerance must be positive");
    let mut p = model.q.clone();
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        let next = posterior_update(&p, model);
        residual = max_abs_diff(&next, &p);
        p = next;
        if residual < tol {
            return Ok(SteadyCovariance { p_bar: p, iterations: it, residual });
        }
    }
    Err(RiccatiError::NonConvergence { max_iter, residual })
}

/// One measurement-updated step: predict with `f`, then condition on the
/// observation.
fn posterior_update(p: &DMatrix<f64>, model: &SystemModel) -> DMatrix<f64> {
    let prior = riccati_map(p, model).expect("dimensions fixed by caller");
    let s = model.c() * &prior * model.c().transpose() + model.r();
    let s_inv = s.try_inverse().expect("innovation covariance is PD since R is PD");
    let gain = &prior * model.c().transpose() * s_inv;
    symmetrize(&(&prior - gain * model.c() * &prior))
}

/// The open-loop covariance map `f(X) = A X Aᵀ + Q`.
///
/// Output is symmetrized to suppress floating-point drift.
pub fn riccati_map(x: &DMatrix<f64>, model: &SystemModel) -> Result<DMatrix<f64>, RiccatiError> {
    let n = model.state_dim();
    if x.nrows() != n || x.ncols() != n {
        return Err(RiccatiError::DimensionMismatch {
            n,
            got_rows: x.nrows(),
            got_cols: x.ncols(),
        });
    }
    Ok(symmetrize(&(model.a() * x * model.a().transpose() + model.q())))
}

/// `f^n(P)` by repeated application, with `f^0(P) = P`.
pub fn iterate_riccati(
    p_bar: &DMatrix<f64>,
    n: usize,
    model: &SystemModel,
) -> Result<DMatrix<f64>, RiccatiError> {
    let mut x = p_bar.clone();
    for _ in 0..n {
        x = riccati_map(&x, model)?;
    }
    Ok(x)
}

/// Closed form `f^n(P) = A^n P (Aᵀ)^n + sum_{i<n} A^i Q (Aᵀ)^i`.
pub fn iterate_riccati_closed_form(
    p_bar: &DMatrix<f64>,
    n: usize,
    model: &SystemModel,
) -> Result<DMatrix<f64>, RiccatiError> {
    let dim = model.state_dim();
    if p_bar.nrows() != dim || p_bar.ncols() != dim {
        return Err(RiccatiError::DimensionMismatch {
            n: dim,
            got_rows: p_bar.nrows(),
            got_cols: p_bar.ncols(),
        });
    }
    let mut a_pow = DMatrix::identity(dim, dim);
    let mut q_sum = DMatrix::zeros(dim, dim);
    for _ in 0..n {
        q_sum += &a_pow * model.q() * a_pow.transpose();
        a_pow = model.a() * a_pow;
    }
    Ok(symmetrize(&(&a_pow * p_bar * a_pow.transpose() + q_sum)))
}

/// Lower and upper bounds on `tr f^n(P)` in terms of singular values and
/// eigenvalues of powers of `A`:
///
/// `B_u = n_s sigma_max(P) sigma_max^2(A^n) + n_s sigma_max(Q) sum_{i<n} sigma_max^2(A^i)`
/// `B_l = lambda_min(P) lambda_max((Aᵀ)^n A^n) + lambda_min(Q) sum_{i<n} lambda_max((Aᵀ)^i A^i)`
pub fn trace_bounds(p_bar: &DMatrix<f64>, n: usize, model: &SystemModel) -> (f64, f64) {
    assert!(n >= 1, "trace bounds are stated for n >= 1");
    let ns = model.state_dim() as f64;
    let sigma_p = sigma_max(p_bar);
    let lambda_min_p = symmetric_eigenvalues(p_bar)
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let sigma_q = sigma_max(model.q());
    let lambda_min_q = symmetric_eigenvalues(model.q())
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);

    let mut a_pow = DMatrix::identity(model.state_dim(), model.state_dim());
    let mut sum_sq = 0.0; // sum_{i=0}^{n-1} sigma_max^2(A^i)
    for _ in 0..n {
        let s = sigma_max(&a_pow);
        sum_sq += s * s;
        a_pow = model.a() * a_pow;
    }
    let sigma_an = sigma_max(&a_pow);
    // lambda_max((Aᵀ)^k A^k) equals sigma_max^2(A^k).
    let upper = ns * sigma_p * sigma_an * sigma_an + ns * sigma_q * sum_sq;
    let lower = lambda_min_p * sigma_an * sigma_an + lambda_min_q * sum_sq;
    (lower, upper)
}

/// Default horizon up to which traces are precomputed eagerly.
pub const TRACE_HORIZON: usize = 512;
/// Hard cap on the trace table length; beyond it tail certification gives up.
const TRACE_HORIZON_CAP: usize = 50_000;

/// Cached iterates `f^n(P̄)` and their traces for one `(model, P̄)` pair,
/// extended on demand.
///
/// The table also certifies truncation of weighted series
/// `sum_k q^k tr f^{m+k}(P̄)` with a geometric remainder bound built from
/// submultiplicativity of `sigma_max(A^k)`.
#[derive(Debug, Clone)]
pub struct RiccatiTraces {
    model: SystemModel,
    iterates: Vec<DMatrix<f64>>,
    traces: Vec<f64>,
}

impl RiccatiTraces {
    pub fn new(model: &SystemModel, p_bar: &DMatrix<f64>) -> Self {
        let mut t = Self {
            model: model.clone(),
            traces: vec![p_bar.trace()],
            iterates: vec![p_bar.clone()],
        };
        t.extend_to(TRACE_HORIZON.min(TRACE_HORIZON_CAP));
        t
    }

    pub fn model(&self) -> &SystemModel {
        &self.model
    }

    fn extend_to(&mut self, n: usize) {
        while self.traces.len() <= n {
            let next = riccati_map(self.iterates.last().unwrap(), &self.model).expect("dims fixed");
            self.traces.push(next.trace());
            self.iterates.push(next);
        }
    }

    /// `tr f^n(P̄)`, extending the table as needed.
    pub fn trace(&mut self, n: usize) -> f64 {
        self.extend_to(n);
        self.traces[n]
    }

    /// `sigma_max(f^n(P̄))`; the iterate is PSD so this is its top eigenvalue.
    fn sigma_at(&mut self, n: usize) -> f64 {
        self.extend_to(n);
        sigma_max(&self.iterates[n])
    }

    /// Certified evaluation of `sum_{k>=0} w0 q^k tr f^{start+k}(P̄)` to
    /// absolute accuracy `tail_tol`.
    ///
    /// Terms are accumulated exactly; once the geometric remainder bound
    /// drops below `tail_tol` the series is cut. Fails with `DivergentTail`
    /// when `q * rho(A)^2 >= 1`.
    pub fn weighted_tail_sum(
        &mut self,
        start: usize,
        w0: f64,
        q: f64,
        tail_tol: f64,
    ) -> Result<f64, RiccatiError> {
        assert!((0.0..1.0).contains(&q) || q == 0.0, "weight ratio must be in [0,1)");
        assert!(tail_tol > 0.0);
        if w0 == 0.0 {
            return Ok(0.0);
        }
        if q == 0.0 {
            return Ok(w0 * self.trace(start));
        }
        let growth = self.growth_factor(q)?;
        let sigma_q = sigma_max(self.model.q());
        let ns = self.model.state_dim() as f64;
        let mut sum = 0.0;
        let mut w = w0;
        let mut n = start;
        loop {
            let t = self.trace(n);
            if !t.is_finite() {
                return Err(RiccatiError::HorizonExhausted(n));
            }
            sum += w * t;
            // Remainder after n: w q sum_{k>=1} q^{k-1} tr f^{n+k}
            //   <= w n_s [ sigma_max(f^n) G(q) + sigma_max(Q) q (1 + G(q)) / (1-q) ]
            // with G(q) = sum_{k>=1} q^k sigma_max^2(A^k).
            if n >= start {
                let sigma_p = self.sigma_at(n);
                let remainder =
                    w * ns * (sigma_p * growth + sigma_q * q * (1.0 + growth) / (1.0 - q));
                if remainder < tail_tol {
                    return Ok(sum);
                }
            }
            if n + 1 >= TRACE_HORIZON_CAP {
                return Err(RiccatiError::HorizonExhausted(TRACE_HORIZON_CAP));
            }
            w *= q;
            n += 1;
        }
    }

    /// Finite bound on `G(q) = sum_{k>=1} q^k sigma_max^2(A^k)`.
    ///
    /// Splits the series into blocks of length `m` and uses
    /// `sigma_max(A^{am+r}) <= sigma_max(A^m)^a sigma_max(A^r)`, giving
    /// `G <= (sum_{r=1..m} q^r s_r) / (1 - q^m s_m)` once `q^m s_m < 1`.
    fn growth_factor(&self, q: f64) -> Result<f64, RiccatiError> {
        let rho = self.model.spectral_radius();
        if q * rho * rho >= 1.0 {
            return Err(RiccatiError::DivergentTail(q * rho * rho));
        }
        let dim = self.model.state_dim();
        let mut a_pow = DMatrix::identity(dim, dim);
        let mut partial = 0.0;
        let mut qk = 1.0;
        for m in 1..=512usize {
            a_pow = self.model.a() * a_pow;
            qk *= q;
            let s = sigma_max(&a_pow);
            let beta = qk * s * s;
            partial += beta;
            if beta < 0.9 && m >= 4 {
                return Ok(partial / (1.0 - beta));
            }
        }
        // Gelfand guarantees q^m sigma^2(A^m) -> (q rho^2)^m < 1 eventually;
        // hitting this cap means the margin was too thin to certify.
        Err(RiccatiError::DivergentTail(q * rho * rho))
    }
}

pub(crate) fn symmetrize(x: &DMatrix<f64>) -> DMatrix<f64> {
    (x + x.transpose()) * 0.5
}

pub(crate) fn sigma_max(m: &DMatrix<f64>) -> f64 {
    m.clone().singular_values().iter().cloned().fold(0.0, f64::max)
}

pub(crate) fn symmetric_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    symmetrize(m).symmetric_eigenvalues()
}

fn symmetric_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = symmetrize(m).symmetric_eigen();
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

fn numeric_rank(m: &DMatrix<f64>) -> usize {
    let svals = m.clone().singular_values();
    let scale = svals.iter().cloned().fold(0.0, f64::max);
    let tol = scale * 1e-10 * (m.nrows().max(m.ncols()) as f64);
    svals.iter().filter(|&&s| s > tol).count()
}

fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn check_dims(
    name: &'static str,
    m: &DMatrix<f64>,
    rows: usize,
    cols: usize,
) -> Result<(), ModelError> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(ModelError::DimensionMismatch {
            name,
            rows,
            cols,
            got_rows: m.nrows(),
            got_cols: m.ncols(),
        });
    }
    Ok(())
}

fn check_symmetric(name: &'static str, m: &DMatrix<f64>) -> Result<(), ModelError> {
    let scale = m.iter().map(|v| v.abs()).fold(1.0, f64::max);
    if max_abs_diff(m, &m.transpose()) > PSD_TOL * scale {
        return Err(ModelError::NotSymmetric(name));
    }
    Ok(())
}

/// The two-state unstable benchmark model used throughout the test suite:
/// `A = [[1.3, 1], [0, 1]]`, `C = [1, 0]`, `Q = 0.01 I`, `R = 0.01`.
pub fn benchmark_model() -> SystemModel {
    SystemModel::new(
        DMatrix::from_row_slice(2, 2, &[1.3, 1.0, 0.0, 1.0]),
        DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        DMatrix::from_diagonal_element(2, 2, 0.01),
        DMatrix::from_element(1, 1, 0.01),
    )
    .expect("benchmark model is valid")
}
