//! Dense revised-simplex linear programming with bounded variables.
//!
//! Deterministic by construction: entering choices break ties by smallest
//! index, a Bland mode engages on degenerate stalls, and no randomness is
//! involved anywhere. Instances keep their basis factorization alive so the
//! search layers can re-solve after right-hand-side or bound changes at a
//! fraction of a cold solve.

use thiserror::Error;

/// Feasibility tolerance on constraint residuals and variable bounds.
pub const FEAS_TOL: f64 = 1e-7;
/// Optimality tolerance on reduced costs.
pub const OPT_TOL: f64 = 1e-9;
/// Pivot elements below this magnitude are considered numerically unusable.
pub const PIVOT_TOL: f64 = 1e-11;
/// Preferred minimum pivot magnitude in ratio tests; candidates below it are
/// only used when nothing stronger exists.
const RATIO_PIVOT_TOL: f64 = 1e-9;
/// Relative width of the ratio-test tie band; wider bands admit stronger
/// pivots at the price of transient bound violations within `FEAS_TOL`.
const TIE_BAND: f64 = 1e-7;
/// Pivot candidates smaller than this fraction of the column's largest
/// entry are treated as numerical noise.
const REL_PIVOT_FLOOR: f64 = 1e-6;
/// Iterations between cheap residual audits of the factorization.
const AUDIT_EVERY: u64 = 32;
/// Residual level (relative to the rhs scale) that triggers a rebuild.
const AUDIT_TOL: f64 = 1e-9;
/// Hard cap on pivots between refactorizations.
const REFRESH_EVERY: u64 = 64;

#[derive(Debug, Error)]
pub enum LpError {
    #[error("inconsistent dimensions: {0}")]
    Dimension(String),
    #[error("coefficient at {0} is not finite")]
    NonFinite(String),
    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),
}

/// Sparse row: list of `(column, coefficient)` pairs.
pub type SparseRow = Vec<(usize, f64)>;

/// A linear program `min c x` subject to `A_eq x = b_eq`, `A_ub x <= b_ub`
/// and per-variable bounds `lo <= x <= hi` (`hi` may be infinite).
#[derive(Debug, Clone, Default)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub a_eq: Vec<SparseRow>,
    pub b_eq: Vec<f64>,
    pub a_ub: Vec<SparseRow>,
    pub b_ub: Vec<f64>,
    pub bounds: Vec<(f64, f64)>,
}

impl LinearProgram {
    /// Convenience constructor from dense rows, mainly for tests.
    pub fn from_dense(
        objective: Vec<f64>,
        a_eq: Vec<Vec<f64>>,
        b_eq: Vec<f64>,
        a_ub: Vec<Vec<f64>>,
        b_ub: Vec<f64>,
        bounds: Vec<(f64, f64)>,
    ) -> Self {
        let sparsify = |rows: Vec<Vec<f64>>| {
            rows.into_iter()
                .map(|r| {
                    r.into_iter()
                        .enumerate()
                        .filter(|(_, v)| *v != 0.0)
                        .collect::<SparseRow>()
                })
                .collect::<Vec<_>>()
        };
        Self {
            objective,
            a_eq: sparsify(a_eq),
            b_eq,
            a_ub: sparsify(a_ub),
            b_ub,
            bounds,
        }
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    fn validate(&self) -> Result<(), LpError> {
        let n = self.n_vars();
        if self.bounds.len() != n {
            return Err(LpError::Dimension(format!(
                "{} bounds for {} variables",
                self.bounds.len(),
                n
            )));
        }
        if self.a_eq.len() != self.b_eq.len() || self.a_ub.len() != self.b_ub.len() {
            return Err(LpError::Dimension("row/rhs count mismatch".into()));
        }
        for (name, rows) in [("eq", &self.a_eq), ("ub", &self.a_ub)] {
            for (r, row) in rows.iter().enumerate() {
                for &(j, v) in row {
                    if j >= n {
                        return Err(LpError::Dimension(format!(
                            "{name} row {r} references column {j} of {n}"
                        )));
                    }
                    if !v.is_finite() {
                        return Err(LpError::NonFinite(format!("{name} row {r}, column {j}")));
                    }
                }
            }
        }
        for (j, &(lo, hi)) in self.bounds.iter().enumerate() {
            if !lo.is_finite() || lo > hi {
                return Err(LpError::Dimension(format!(
                    "variable {j} has invalid bounds [{lo}, {hi}]"
                )));
            }
        }
        if self.objective.iter().any(|v| !v.is_finite())
            || self.b_eq.iter().any(|v| !v.is_finite())
            || self.b_ub.iter().any(|v| !v.is_finite())
        {
            return Err(LpError::NonFinite("objective or rhs".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// Solver output. `duals_eq`/`duals_ub` hold the row multipliers of an
/// optimal basis; `farkas` carries an infeasibility certificate when the
/// status is `Infeasible`.
#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective_value: f64,
    pub duals_eq: Vec<f64>,
    pub duals_ub: Vec<f64>,
    pub farkas: Option<Vec<f64>>,
}

/// Solves a linear program from scratch.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution, LpError> {
    SimplexInstance::new(lp)?.solve()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VarState {
    Basic,
    AtLower,
    AtUpper,
}

enum PrimalOutcome {
    Optimal,
    Unbounded,
}

enum DualOutcome {
    Optimal,
    PrimalInfeasible(Option<Vec<f64>>),
    CapReached,
}

/// A prepared simplex working set that can be re-solved after bound or
/// right-hand-side edits, keeping the current basis warm.
#[derive(Debug, Clone)]
pub struct SimplexInstance {
    m: usize,
    n_real: usize, // structural + slack columns
    n_struct: usize,
    m_eq: usize,
    cols: Vec<SparseRow>, // column-major; length n_real + m (artificials)
    col_norm: Vec<f64>,
    cost: Vec<f64>,       // phase-2 costs, zero on slacks/artificials
    lo: Vec<f64>,
    hi: Vec<f64>,
    rhs: Vec<f64>,
    basis: Vec<usize>,
    state: Vec<VarState>,
    binv: Vec<f64>, // m x m row-major
    x_basic: Vec<f64>,
    has_basis: bool,
    iterations: u64,
    pivots_since_refresh: u64,
    saved_bounds: Option<(Vec<f64>, Vec<f64>)>,
    perturb_salt: u64,
    stat_refreshes: u64,
    stat_bland: u64,
    stat_degenerate: u64,
}

impl SimplexInstance {
    pub fn new(lp: &LinearProgram) -> Result<Self, LpError> {
        lp.validate()?;
        let n_struct = lp.n_vars();
        let m_eq = lp.a_eq.len();
        let m_ub = lp.a_ub.len();
        let m = m_eq + m_ub;
        let n_real = n_struct + m_ub;
        let mut cols: Vec<SparseRow> = vec![Vec::new(); n_real + m];
        for (r, row) in lp.a_eq.iter().chain(lp.a_ub.iter()).enumerate() {
            for &(j, v) in row {
                cols[j].push((r, v));
            }
        }
        for s in 0..m_ub {
            cols[n_struct + s].push((m_eq + s, 1.0));
        }
        // Artificial columns get their orientation at each cold start.
        for r in 0..m {
            cols[n_real + r].push((r, 1.0));
        }
        let mut cost = lp.objective.clone();
        cost.resize(n_real + m, 0.0);
        let mut lo: Vec<f64> = lp.bounds.iter().map(|b| b.0).collect();
        let mut hi: Vec<f64> = lp.bounds.iter().map(|b| b.1).collect();
        lo.resize(n_real + m, 0.0);
        hi.resize(n_real, f64::INFINITY);
        hi.resize(n_real + m, 0.0);
        let rhs = lp.b_eq.iter().chain(lp.b_ub.iter()).copied().collect();
        let col_norm = cols
            .iter()
            .map(|c| c.iter().fold(0.0f64, |a, &(_, v)| a.max(v.abs())))
            .collect();
        Ok(Self {
            m,
            n_real,
            n_struct,
            m_eq,
            cols,
            col_norm,
            cost,
            lo,
            hi,
            rhs,
            basis: Vec::new(),
            state: vec![VarState::AtLower; n_real + m],
            binv: Vec::new(),
            x_basic: Vec::new(),
            has_basis: false,
            iterations: 0,
            pivots_since_refresh: 0,
            saved_bounds: None,
            perturb_salt: 0,
            stat_refreshes: 0,
            stat_bland: 0,
            stat_degenerate: 0,
        })
    }

    /// Total simplex pivots performed over the instance lifetime.
    pub fn iterations(&self) -> u64 {
        self.iterations
    }

    #[doc(hidden)]
    pub fn debug_stats(&self) -> (u64, u64, u64, u64) {
        (self.iterations, self.stat_refreshes, self.stat_bland, self.stat_degenerate)
    }

    pub fn set_rhs_eq(&mut self, row: usize, value: f64) {
        assert!(row < self.m_eq);
        self.rhs[row] = value;
    }

    pub fn set_rhs_ub(&mut self, row: usize, value: f64) {
        assert!(self.m_eq + row < self.m);
        self.rhs[self.m_eq + row] = value;
    }

    /// Changes the bounds of a structural variable.
    pub fn set_bounds(&mut self, var: usize, lo: f64, hi: f64) {
        assert!(var < self.n_struct && lo.is_finite() && lo <= hi);
        self.lo[var] = lo;
        self.hi[var] = hi;
        if self.state[var] == VarState::AtUpper && !hi.is_finite() {
            self.state[var] = VarState::AtLower;
        }
    }

    fn nonbasic_value(&self, j: usize) -> f64 {
        match self.state[j] {
            VarState::AtUpper => self.hi[j],
            _ => self.lo[j],
        }
    }

    /// Solves from scratch: fresh artificial basis, phase 1, then phase 2.
    ///
    /// A numerical breakdown triggers up to three clean restarts with
    /// different anti-degeneracy perturbation patterns before giving up.
    pub fn solve(&mut self) -> Result<LpSolution, LpError> {
        for attempt in 0..4u64 {
            self.perturb_salt = attempt;
            let result = self.cold_start().and_then(|_| self.finish_from_phase1());
            match result {
                Err(LpError::NumericalBreakdown(_)) if attempt < 3 => {
                    self.restore_bounds();
                    self.has_basis = false;
                }
                other => return other,
            }
        }
        unreachable!("loop returns on the final attempt")
    }

    /// Re-solves after RHS/bound edits, reusing the current basis when one
    /// exists; falls back to a cold solve when neither simplex variant can
    /// start from it.
    pub fn resolve(&mut self) -> Result<LpSolution, LpError> {
        if !self.has_basis {
            return self.solve();
        }
        self.recompute_x_basic();
        if self.primal_feasible() {
            return match self.primal_simplex()? {
                PrimalOutcome::Optimal => Ok(self.extract_solution()),
                PrimalOutcome::Unbounded => Ok(self.unbounded_solution()),
            };
        }
        if self.dual_feasible() {
            return match self.dual_simplex()? {
                DualOutcome::Optimal => Ok(self.extract_solution()),
                DualOutcome::PrimalInfeasible(ray) => Ok(self.infeasible_solution(ray)),
                DualOutcome::CapReached => unreachable!("uncapped dual solve"),
            };
        }
        self.solve()
    }

    fn cold_start(&mut self) -> Result<(), LpError> {
        self.restore_bounds();
        let m = self.m;
        for j in 0..self.n_real {
            if self.hi[j] < self.lo[j] {
                return Err(LpError::Dimension(format!("variable {j} has empty bound box")));
            }
            self.state[j] = VarState::AtLower;
        }
        let mut resid = self.rhs.clone();
        for j in 0..self.n_real {
            let xv = self.lo[j];
            if xv != 0.0 {
                for &(r, v) in &self.cols[j] {
                    resid[r] -= v * xv;
                }
            }
        }
        self.basis = (0..m).map(|r| self.n_real + r).collect();
        self.binv = identity(m);
        self.x_basic = vec![0.0; m];
        for r in 0..m {
            let a = self.n_real + r;
            let sign = if resid[r] < 0.0 { -1.0 } else { 1.0 };
            self.cols[a] = vec![(r, sign)];
            self.binv[r * m + r] = sign; // B = diag(sign), so B^{-1} = B
            self.lo[a] = 0.0;
            self.hi[a] = f64::INFINITY;
            self.state[a] = VarState::Basic;
            self.x_basic[r] = resid[r].abs();
        }
        self.has_basis = true;

        // These programs are degenerate by construction (mostly zero rhs), so
        // the anti-degeneracy perturbation goes on up front and comes off at
        // phase-2 optimality.
        self.perturb_bounds();
        let phase1_cost: Vec<f64> = (0..self.cols.len())
            .map(|j| if j >= self.n_real { 1.0 } else { 0.0 })
            .collect();
        if matches!(self.primal_core(&phase1_cost)?, PrimalOutcome::Unbounded) {
            return Err(LpError::NumericalBreakdown(
                "phase 1 reported unbounded, which cannot happen".into(),
            ));
        }
        Ok(())
    }

    fn finish_from_phase1(&mut self) -> Result<LpSolution, LpError> {
        let phase1_cost: Vec<f64> = (0..self.cols.len())
            .map(|j| if j >= self.n_real { 1.0 } else { 0.0 })
            .collect();
        // The perturbation only relaxes bounds, so a positive artificial
        // minimum here certifies infeasibility of the original program.
        let infeas = self.artificial_mass();
        let scale = 1.0 + self.rhs.iter().map(|v| v.abs()).sum::<f64>();
        if infeas > FEAS_TOL * scale {
            let y = self.duals(&phase1_cost);
            self.restore_bounds();
            return Ok(self.infeasible_solution(Some(y)));
        }
        // Pin artificials at zero so phase 2 cannot move them.
        for r in 0..self.m {
            let a = self.n_real + r;
            self.hi[a] = 0.0;
            if self.state[a] != VarState::Basic {
                self.state[a] = VarState::AtLower;
            }
        }
        match self.primal_simplex()? {
            PrimalOutcome::Optimal => Ok(self.extract_solution()),
            PrimalOutcome::Unbounded => Ok(self.unbounded_solution()),
        }
    }

    fn unbounded_solution(&self) -> LpSolution {
        LpSolution {
            status: LpStatus::Unbounded,
            x: Vec::new(),
            objective_value: f64::NEG_INFINITY,
            duals_eq: Vec::new(),
            duals_ub: Vec::new(),
            farkas: None,
        }
    }

    fn infeasible_solution(&self, ray: Option<Vec<f64>>) -> LpSolution {
        LpSolution {
            status: LpStatus::Infeasible,
            x: Vec::new(),
            objective_value: f64::INFINITY,
            duals_eq: Vec::new(),
            duals_ub: Vec::new(),
            farkas: ray,
        }
    }

    fn extract_solution(&self) -> LpSolution {
        let mut x = vec![0.0; self.n_real];
        for j in 0..self.n_real {
            if self.state[j] != VarState::Basic {
                x[j] = self.nonbasic_value(j);
            }
        }
        for (r, &b) in self.basis.iter().enumerate() {
            if b < self.n_real {
                x[b] = self.x_basic[r];
            }
        }
        let objective_value: f64 = (0..self.n_struct).map(|j| self.cost[j] * x[j]).sum();
        let y = self.duals(&self.cost);
        LpSolution {
            status: LpStatus::Optimal,
            x: x[..self.n_struct].to_vec(),
            objective_value,
            duals_eq: y[..self.m_eq].to_vec(),
            duals_ub: y[self.m_eq..].to_vec(),
            farkas: None,
        }
    }

    /// Row multipliers `y = c_B B^{-1}` for the given cost vector.
    fn duals(&self, cost: &[f64]) -> Vec<f64> {
        let m = self.m;
        let mut y = vec![0.0; m];
        for (r, &b) in self.basis.iter().enumerate() {
            let cb = cost[b];
            if cb != 0.0 {
                let row = &self.binv[r * m..(r + 1) * m];
                for (yk, &v) in y.iter_mut().zip(row.iter()) {
                    *yk += cb * v;
                }
            }
        }
        y
    }

    fn recompute_x_basic(&mut self) {
        let m = self.m;
        let mut resid = self.rhs.clone();
        for (j, col) in self.cols.iter().enumerate() {
            if self.state[j] == VarState::Basic {
                continue;
            }
            let xv = self.nonbasic_value(j);
            if xv != 0.0 {
                for &(r, v) in col {
                    resid[r] -= v * xv;
                }
            }
        }
        let mut xb = vec![0.0; m];
        for (r, x) in xb.iter_mut().enumerate() {
            let row = &self.binv[r * m..(r + 1) * m];
            *x = row.iter().zip(resid.iter()).map(|(a, b)| a * b).sum();
        }
        self.x_basic = xb;
    }

    fn primal_feasible(&self) -> bool {
        self.primal_feasible_within(FEAS_TOL)
    }

    fn primal_feasible_within(&self, tol: f64) -> bool {
        self.basis
            .iter()
            .zip(self.x_basic.iter())
            .all(|(&b, &v)| v >= self.lo[b] - tol && v <= self.hi[b] + tol)
    }

    fn dual_feasible(&self) -> bool {
        let y = self.duals(&self.cost);
        (0..self.cols.len()).all(|j| {
            if self.state[j] == VarState::Basic || self.lo[j] == self.hi[j] {
                return true;
            }
            let d = self.reduced_cost(j, &y, &self.cost);
            match self.state[j] {
                VarState::AtLower => d >= -OPT_TOL,
                VarState::AtUpper => d <= OPT_TOL,
                VarState::Basic => true,
            }
        })
    }

    fn reduced_cost(&self, j: usize, y: &[f64], cost: &[f64]) -> f64 {
        let mut d = cost[j];
        for &(r, v) in &self.cols[j] {
            d -= y[r] * v;
        }
        d
    }

    /// `w = B^{-1} a_j`.
    fn ftran(&self, j: usize) -> Vec<f64> {
        let m = self.m;
        let mut w = vec![0.0; m];
        for &(r, v) in &self.cols[j] {
            if v != 0.0 {
                for (i, wi) in w.iter_mut().enumerate() {
                    *wi += self.binv[i * m + r] * v;
                }
            }
        }
        w
    }

    /// Replaces basis row `r` with column `j` and updates `B^{-1}`.
    fn pivot(&mut self, r: usize, j: usize, w: &[f64]) {
        self.pivots_since_refresh += 1;
        let m = self.m;
        let inv = 1.0 / w[r];
        for k in 0..m {
            self.binv[r * m + k] *= inv;
        }
        for i in 0..m {
            if i == r {
                continue;
            }
            let factor = w[i];
            if factor != 0.0 {
                for k in 0..m {
                    self.binv[i * m + k] -= factor * self.binv[r * m + k];
                }
            }
        }
        self.basis[r] = j;
        self.state[j] = VarState::Basic;
    }

    fn primal_simplex(&mut self) -> Result<PrimalOutcome, LpError> {
        let cost = self.cost.clone();
        self.primal_core(&cost)
    }

    fn primal_core(&mut self, cost: &[f64]) -> Result<PrimalOutcome, LpError> {
        let m = self.m;
        let max_iter = 20_000 + 60 * (m + self.n_real) as u64;
        let mut bland = false;
        let mut stall = 0u32;
        let mut iter = 0u64;
        // `fresh` marks that the factorization was rebuilt since the last
        // pivot; optimality is only declared on a fresh basis.
        let mut fresh = false;
        // Columns whose transformed direction degenerates to numerical noise
        // are benched until the next refactorization.
        let mut banned: Vec<usize> = Vec::new();
        loop {
            iter += 1;
            self.iterations += 1;
            if iter > max_iter {
                return Err(LpError::NumericalBreakdown(format!(
                    "primal simplex exceeded {max_iter} iterations"
                )));
            }
            let y = self.duals(cost);
            let mut enter: Option<(usize, f64, bool)> = None; // (col, |d|, from_upper)
            for j in 0..self.cols.len() {
                if self.state[j] == VarState::Basic
                    || self.lo[j] == self.hi[j]
                    || banned.contains(&j)
                {
                    continue;
                }
                let d = self.reduced_cost(j, &y, cost);
                let (eligible, from_upper) = match self.state[j] {
                    VarState::AtLower => (d < -OPT_TOL, false),
                    VarState::AtUpper => (d > OPT_TOL, true),
                    VarState::Basic => (false, false),
                };
                if !eligible {
                    continue;
                }
                if bland {
                    enter = Some((j, d.abs(), from_upper));
                    break;
                }
                if enter.map(|(_, best, _)| d.abs() > best).unwrap_or(true) {
                    enter = Some((j, d.abs(), from_upper));
                }
            }
            let Some((j, _, from_upper)) = enter else {
                if self.saved_bounds.is_some() {
                    // Optimal for the perturbed bounds: restore and repair to
                    // tight tolerance so the reported vertex is exact.
                    self.restore_bounds();
                    self.refresh_factorization()?;
                    fresh = true;
                    if !self.primal_feasible_within(1e-9) {
                        // Tight repair recovers the exact vertex; if it drags
                        // on, settle for standard-tolerance feasibility.
                        let cap = 4 * (m as u64) + 256;
                        match self.dual_core(cost, 1e-9, cap)? {
                            DualOutcome::Optimal | DualOutcome::CapReached => {}
                            DualOutcome::PrimalInfeasible(_) => {}
                        }
                        if !self.primal_feasible() {
                            return Err(LpError::NumericalBreakdown(
                                "infeasible after removing the anti-degeneracy perturbation"
                                    .into(),
                            ));
                        }
                    }
                    continue;
                }
                if fresh {
                    if self.primal_feasible() {
                        return Ok(PrimalOutcome::Optimal);
                    }
                    // Drift pushed a basic variable out of bounds; the basis
                    // is dual feasible here, so dual steps repair it.
                    match self.dual_core(cost, FEAS_TOL, u64::MAX)? {
                        DualOutcome::Optimal => {
                            fresh = false;
                            continue;
                        }
                        DualOutcome::PrimalInfeasible(_) | DualOutcome::CapReached => {
                            return Err(LpError::NumericalBreakdown(
                                "lost primal feasibility during a primal solve".into(),
                            ));
                        }
                    }
                }
                self.refresh_factorization()?;
                fresh = true;
                continue;
            };
            let w = self.ftran(j);
            let sig = if from_upper { -1.0 } else { 1.0 };
            let winf = w.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if winf < 1e-7 * self.col_norm[j] {
                // Numerically dependent on the current basis; bench it.
                banned.push(j);
                continue;
            }

            // Two-pass ratio test: find the tightest step, then among rows
            // whose ratio ties it (within a small band) prefer the largest
            // pivot magnitude; Bland mode picks the smallest variable index.
            // The relative floor keeps factorization noise from posing as a
            // pivot on a degenerate row.
            let flip_t = self.hi[j] - self.lo[j];
            let ratio_for = |r: usize, floor: f64, x_basic: &[f64]| -> Option<f64> {
                let dir = -sig * w[r];
                if dir.abs() <= floor {
                    return None;
                }
                let b = self.basis[r];
                let t = if dir < 0.0 {
                    (x_basic[r] - self.lo[b]) / -dir
                } else {
                    if self.hi[b].is_infinite() {
                        return None;
                    }
                    (self.hi[b] - x_basic[r]) / dir
                };
                Some(t.max(0.0))
            };
            // Entries below the floor are factorization noise; pivoting on
            // them destroys the basis, so they never block. A column whose
            // only blockers are noise is treated as unbounded in that
            // direction (bounded programs cannot reach this spuriously).
            let floor = RATIO_PIVOT_TOL.max(REL_PIVOT_FLOOR * winf);
            let mut tmin = flip_t;
            for r in 0..m {
                if let Some(t) = ratio_for(r, floor, &self.x_basic) {
                    tmin = tmin.min(t);
                }
            }
            if tmin.is_infinite() {
                return Ok(PrimalOutcome::Unbounded);
            }
            // Bland mode demands the exact minimum ratio with smallest
            // variable index so the anti-cycling guarantee holds. While the
            // perturbation is active the band must stay below its per-bound
            // separations or ties would re-merge; otherwise a wider band lets
            // the strongest pivot win.
            let band = if bland {
                0.0
            } else if self.saved_bounds.is_some() {
                1e-11 * (1.0 + tmin.abs())
            } else {
                TIE_BAND * (1.0 + tmin.abs())
            };
            let mut leave: Option<usize> = None;
            let mut leave_t = tmin;
            let mut best_piv = 0.0;
            for r in 0..m {
                let Some(t) = ratio_for(r, floor, &self.x_basic) else { continue };
                if t > tmin + band {
                    continue;
                }
                let piv = w[r].abs();
                let better = if bland {
                    leave.map(|lr| self.basis[r] < self.basis[lr]).unwrap_or(true)
                } else {
                    piv > best_piv
                        || (piv == best_piv
                            && leave.map(|lr| self.basis[r] < self.basis[lr]).unwrap_or(true))
                };
                if better {
                    leave = Some(r);
                    leave_t = t;
                    best_piv = piv;
                }
            }
            // A bound flip wins when it is at least as tight as every row.
            let use_flip = flip_t <= tmin + band && (leave.is_none() || flip_t <= leave_t);
            let t = if use_flip { flip_t } else { leave_t };
            if bland {
                self.stat_bland += 1;
            }
            if t <= 1e-12 {
                self.stat_degenerate += 1;
                stall += 1;
                if stall > 32 {
                    if self.saved_bounds.is_none() {
                        self.perturb_bounds();
                        stall = 0;
                    } else {
                        bland = true;
                    }
                }
            } else {
                stall = 0;
                bland = false;
            }
            for r in 0..m {
                self.x_basic[r] -= sig * w[r] * t;
            }
            if use_flip {
                self.state[j] = if from_upper { VarState::AtLower } else { VarState::AtUpper };
            } else {
                let r = leave.expect("row chosen");
                if w[r].abs() < PIVOT_TOL {
                    return Err(LpError::NumericalBreakdown(format!(
                        "pivot magnitude {} below {PIVOT_TOL}",
                        w[r].abs()
                    )));
                }
                let dir = -sig * w[r];
                let old = self.basis[r];
                self.state[old] = if dir > 0.0 { VarState::AtUpper } else { VarState::AtLower };
                let enter_value = if from_upper { self.hi[j] - t } else { self.lo[j] + t };
                self.pivot(r, j, &w);
                self.x_basic[r] = enter_value;
            }
            fresh = false;
            if std::env::var_os("RESTEAL_LP_VERIFY").is_some() {
                let e = self.debug_inverse_error();
                if e > 1e-6 {
                    eprintln!(
                        "primal iter {iter}: inverse error {e:.3e}, entering {j}, flip={use_flip}, t={t:.3e}"
                    );
                }
            }
            if self.pivots_since_refresh >= REFRESH_EVERY
                || (iter % AUDIT_EVERY == 0 && self.residual_excessive())
            {
                self.refresh_factorization()?;
                banned.clear();
            }
        }
    }

    fn dual_simplex(&mut self) -> Result<DualOutcome, LpError> {
        let cost = self.cost.clone();
        self.dual_core(&cost, FEAS_TOL, u64::MAX)
    }

    fn dual_core(
        &mut self,
        cost: &[f64],
        feas_tol: f64,
        cap: u64,
    ) -> Result<DualOutcome, LpError> {
        let m = self.m;
        let max_iter = (20_000 + 60 * (m + self.n_real) as u64).min(cap);
        let mut iter = 0u64;
        let mut fresh = false;
        let mut bland = false;
        let mut stall = 0u32;
        let mut last_total_viol = f64::INFINITY;
        loop {
            iter += 1;
            self.iterations += 1;
            if iter > max_iter {
                if cap < u64::MAX {
                    return Ok(DualOutcome::CapReached);
                }
                return Err(LpError::NumericalBreakdown(format!(
                    "dual simplex exceeded {max_iter} iterations"
                )));
            }
            let mut leave: Option<(usize, f64, bool)> = None; // (row, violation, below)
            let mut total_viol = 0.0;
            for r in 0..m {
                let b = self.basis[r];
                let v = self.x_basic[r];
                let (viol, below) = if v < self.lo[b] - feas_tol {
                    (self.lo[b] - v, true)
                } else if v > self.hi[b] + feas_tol {
                    (v - self.hi[b], false)
                } else {
                    continue;
                };
                total_viol += viol;
                let better = if bland {
                    leave
                        .map(|(lr, _, _)| self.basis[r] < self.basis[lr])
                        .unwrap_or(true)
                } else {
                    leave.map(|(_, best, _)| viol > best).unwrap_or(true)
                };
                if better {
                    leave = Some((r, viol, below));
                }
            }
            if total_viol < last_total_viol - 1e-12 {
                stall = 0;
                bland = false;
            } else {
                stall += 1;
                if stall > 64 {
                    bland = true;
                }
            }
            last_total_viol = total_viol;
            let Some((r, _, below)) = leave else {
                if fresh {
                    return Ok(DualOutcome::Optimal);
                }
                self.refresh_factorization()?;
                fresh = true;
                continue;
            };
            let sigma: Vec<f64> = self.binv[r * m..(r + 1) * m].to_vec();
            let y = self.duals(cost);
            // Collect candidate columns once: alpha = sigma . a_j.
            let mut cand: Vec<(usize, f64, f64)> = Vec::new(); // (col, alpha, d)
            let mut amax = 0.0f64;
            for j in 0..self.cols.len() {
                if self.state[j] == VarState::Basic || self.lo[j] == self.hi[j] {
                    continue;
                }
                let mut alpha = 0.0;
                for &(rr, v) in &self.cols[j] {
                    alpha += sigma[rr] * v;
                }
                // The noise floor must see every alpha: restricted to the
                // eligible ones it would let pure noise pose as a pivot.
                amax = amax.max(alpha.abs());
                let eligible = match (below, self.state[j]) {
                    (true, VarState::AtLower) => alpha < 0.0,
                    (true, VarState::AtUpper) => alpha > 0.0,
                    (false, VarState::AtLower) => alpha > 0.0,
                    (false, VarState::AtUpper) => alpha < 0.0,
                    _ => false,
                };
                if !eligible {
                    continue;
                }
                let d = self.reduced_cost(j, &y, cost);
                cand.push((j, alpha, d));
            }
            let floor = RATIO_PIVOT_TOL.max(REL_PIVOT_FLOOR * amax);
            let mut rmin = f64::INFINITY;
            for &(_, alpha, d) in &cand {
                if alpha.abs() >= floor {
                    rmin = rmin.min((d / alpha).abs());
                }
            }
            if rmin.is_infinite() {
                // Dual unbounded: primal infeasible, certificate from the row.
                let ray: Vec<f64> = sigma.iter().map(|&v| if below { v } else { -v }).collect();
                return Ok(DualOutcome::PrimalInfeasible(Some(ray)));
            }
            let band = if bland { 0.0 } else { TIE_BAND * (1.0 + rmin.abs()) };
            let mut benched: Vec<usize> = Vec::new();
            let (j, w) = loop {
                let mut enter: Option<usize> = None;
                let mut best_piv = 0.0;
                for &(j, alpha, d) in &cand {
                    if alpha.abs() < floor
                        || (d / alpha).abs() > rmin + band
                        || benched.contains(&j)
                    {
                        continue;
                    }
                    let piv = alpha.abs();
                    let better = if bland {
                        enter.map(|bj| j < bj).unwrap_or(true)
                    } else {
                        piv > best_piv
                            || (piv == best_piv && enter.map(|bj| j < bj).unwrap_or(true))
                    };
                    if better {
                        enter = Some(j);
                        best_piv = piv;
                    }
                }
                let Some(j) = enter else {
                    // Every in-band candidate was numerically dependent.
                    let ray: Vec<f64> =
                        sigma.iter().map(|&v| if below { v } else { -v }).collect();
                    return Ok(DualOutcome::PrimalInfeasible(Some(ray)));
                };
                let w = self.ftran(j);
                let winf = w.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                if winf < 1e-7 * self.col_norm[j] || w[r].abs() < PIVOT_TOL {
                    benched.push(j);
                    continue;
                }
                break (j, w);
            };
            let b_old = self.basis[r];
            let target = if below { self.lo[b_old] } else { self.hi[b_old] };
            // Signed step on the entering variable that lands xB_r on `target`.
            let dx = (self.x_basic[r] - target) / w[r];
            let from_value = self.nonbasic_value(j);
            for i in 0..m {
                self.x_basic[i] -= w[i] * dx;
            }
            self.state[b_old] = if below { VarState::AtLower } else { VarState::AtUpper };
            self.pivot(r, j, &w);
            self.x_basic[r] = from_value + dx;
            fresh = false;
            if iter % AUDIT_EVERY == 0
                && (self.residual_excessive() || iter % REFRESH_EVERY == 0)
            {
                self.refresh_factorization()?;
            }
        }
    }

    /// Diagnostic: true basis inverse vs the eta-updated one (slow; debug only).
    #[doc(hidden)]
    pub fn debug_inverse_error(&self) -> f64 {
        let m = self.m;
        let mut dense = vec![0.0; m * m];
        for (pos, &b) in self.basis.iter().enumerate() {
            for &(r, v) in &self.cols[b] {
                dense[r * m + pos] = v;
            }
        }
        // B * binv should be the identity (note binv maps resid -> x in
        // basis-position order: rows of binv are positions).
        let mut worst: f64 = 0.0;
        for i in 0..m {
            for k in 0..m {
                let mut acc = 0.0;
                for l in 0..m {
                    acc += dense[i * m + l] * self.binv[l * m + k];
                }
                let want = if i == k { 1.0 } else { 0.0 };
                worst = worst.max((acc - want).abs());
            }
        }
        worst
    }

    /// Mass left on artificial variables after phase 1.
    fn artificial_mass(&self) -> f64 {
        self.basis
            .iter()
            .zip(self.x_basic.iter())
            .filter(|(&b, _)| b >= self.n_real)
            .map(|(_, &v)| v.abs())
            .sum()
    }

    /// Deterministic anti-degeneracy perturbation: every free bound moves
    /// outward by a distinct tiny amount, making ratio ties vanish.
    fn perturb_bounds(&mut self) {
        if self.saved_bounds.is_some() {
            return;
        }
        self.saved_bounds = Some((self.lo.clone(), self.hi.clone()));
        let salt = self.perturb_salt.wrapping_mul(0xA076_1D64_78BD_642F).wrapping_add(1);
        for j in 0..self.n_real {
            if self.lo[j] == self.hi[j] {
                continue;
            }
            let key = (j as u64).wrapping_add(salt);
            let phi = (key.wrapping_mul(0x9E37_79B9_7F4A_7C15) >> 32) as f64
                / (1u64 << 32) as f64;
            let delta = 1e-8 * (1.0 + phi) * (1.0 + self.lo[j].abs());
            self.lo[j] -= delta;
            if self.hi[j].is_finite() {
                let phi2 = (key.wrapping_mul(0xD1B5_4A32_D192_ED03) >> 32) as f64
                    / (1u64 << 32) as f64;
                self.hi[j] += 1e-8 * (1.0 + phi2) * (1.0 + self.hi[j].abs());
            }
        }
        self.recompute_x_basic();
    }

    /// Undoes [`Self::perturb_bounds`].
    fn restore_bounds(&mut self) {
        if let Some((lo, hi)) = self.saved_bounds.take() {
            self.lo = lo;
            self.hi = hi;
            self.recompute_x_basic();
        }
    }

    /// Cheap audit: does `B x_basic + N x_N` still reproduce the rhs?
    fn residual_excessive(&self) -> bool {
        let mut resid = self.rhs.clone();
        for (j, col) in self.cols.iter().enumerate() {
            let xv = match self.state[j] {
                VarState::Basic => continue,
                _ => self.nonbasic_value(j),
            };
            if xv != 0.0 {
                for &(r, v) in col {
                    resid[r] -= v * xv;
                }
            }
        }
        for (pos, &b) in self.basis.iter().enumerate() {
            let xv = self.x_basic[pos];
            if xv != 0.0 {
                for &(r, v) in &self.cols[b] {
                    resid[r] -= v * xv;
                }
            }
        }
        let scale = 1.0 + self.rhs.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        resid.iter().any(|v| v.abs() > AUDIT_TOL * scale)
    }

    /// Recomputes `B^{-1}` from the basis columns via sparse LU with
    /// partial pivoting, then refreshes the basic values.
    ///
    /// Basis matrices here are chain-structured and nearly triangular; LU
    /// keeps fill-in tiny, and the dense inverse is recovered with one
    /// sparse triangular solve per unit vector.
    fn refresh_factorization(&mut self) -> Result<(), LpError> {
        self.stat_refreshes += 1;
        let m = self.m;
        {
            let mut seen = self.basis.clone();
            seen.sort_unstable();
            seen.dedup();
            if seen.len() != m {
                return Err(LpError::NumericalBreakdown("duplicate column in basis".into()));
            }
        }
        // Rows of B over basis positions, sorted by position.
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
        for (pos, &b) in self.basis.iter().enumerate() {
            for &(r, v) in &self.cols[b] {
                rows[r].push((pos, v));
            }
        }
        for row in rows.iter_mut() {
            row.sort_unstable_by_key(|&(p, _)| p);
        }
        // Structural occupancy: which active rows hold each position.
        let mut col_rows: Vec<Vec<usize>> = vec![Vec::new(); m];
        let mut col_count = vec![0usize; m];
        for (r, row) in rows.iter().enumerate() {
            for &(p, _) in row {
                col_rows[p].push(r);
                col_count[p] += 1;
            }
        }
        let mut row_active = vec![true; m];
        let mut col_active = vec![true; m];
        // Elimination record: per step the pivot row, position, value, the
        // eta operations applied, and the frozen U row.
        let mut pivot_row = vec![0usize; m];
        let mut pivot_pos = vec![0usize; m];
        let mut pivot_val = vec![0.0f64; m];
        let mut etas: Vec<Vec<(usize, f64)>> = Vec::with_capacity(m);
        let mut u_rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];

        let value_at = |rows: &Vec<Vec<(usize, f64)>>, r: usize, p: usize| -> f64 {
            rows[r]
                .binary_search_by_key(&p, |&(pp, _)| pp)
                .map(|k| rows[r][k].1)
                .unwrap_or(0.0)
        };

        for step in 0..m {
            // Markowitz-lite: sparsest remaining column, strongest entry.
            let mut best_pos = usize::MAX;
            let mut best_cnt = usize::MAX;
            for p in 0..m {
                if col_active[p] && col_count[p] < best_cnt {
                    best_cnt = col_count[p];
                    best_pos = p;
                }
            }
            if best_pos == usize::MAX {
                return Err(LpError::NumericalBreakdown(
                    "singular basis during refactorization".into(),
                ));
            }
            let p = best_pos;
            let mut pr = usize::MAX;
            let mut pv = 0.0f64;
            for &r in &col_rows[p] {
                if !row_active[r] {
                    continue;
                }
                let v = value_at(&rows, r, p).abs();
                if v > pv {
                    pv = v;
                    pr = r;
                }
            }
            if pv < PIVOT_TOL {
                if std::env::var_os("RESTEAL_LP_TRACE").is_some() {
                    eprintln!("singular position {p} of {m}: iters={}", self.iterations);
                }
                return Err(LpError::NumericalBreakdown(
                    "singular basis during refactorization".into(),
                ));
            }
            let piv = value_at(&rows, pr, p);
            row_active[pr] = false;
            col_active[p] = false;
            pivot_row[step] = pr;
            pivot_pos[step] = p;
            pivot_val[step] = piv;
            // Freeze the pivot row and update column counts it leaves.
            for &(pp, _) in &rows[pr] {
                if col_active[pp] {
                    col_count[pp] = col_count[pp].saturating_sub(1);
                }
            }
            let pivot_entries = rows[pr].clone();
            let holders = std::mem::take(&mut col_rows[p]);
            let mut eta = Vec::new();
            let mut seen = Vec::with_capacity(holders.len());
            for &i in &holders {
                if !row_active[i] || seen.contains(&i) {
                    continue;
                }
                seen.push(i);
                let vi = value_at(&rows, i, p);
                if vi == 0.0 {
                    continue; // structurally registered but cancelled
                }
                let f = vi / piv;
                eta.push((i, f));
                // row_i -= f * pivot_row, sparse merge.
                let mut merged = Vec::with_capacity(rows[i].len() + pivot_entries.len());
                let (mut a, mut b) = (0usize, 0usize);
                let own = &rows[i];
                while a < own.len() || b < pivot_entries.len() {
                    match (own.get(a).copied(), pivot_entries.get(b).copied()) {
                        (Some((pa, va)), Some((pb, vb))) if pa == pb => {
                            if pa != p {
                                merged.push((pa, va - f * vb));
                            }
                            a += 1;
                            b += 1;
                        }
                        (Some((pa, va)), Some((pb, _))) if pa < pb => {
                            merged.push((pa, va));
                            a += 1;
                        }
                        (Some(_), Some((pb, vb))) => {
                            if pb != p {
                                // structural fill, register occupancy
                                merged.push((pb, -f * vb));
                                col_rows[pb].push(i);
                                if col_active[pb] {
                                    col_count[pb] += 1;
                                }
                            }
                            b += 1;
                        }
                        (Some((pa, va)), None) => {
                            merged.push((pa, va));
                            a += 1;
                        }
                        (None, Some((pb, vb))) => {
                            if pb != p {
                                merged.push((pb, -f * vb));
                                col_rows[pb].push(i);
                                if col_active[pb] {
                                    col_count[pb] += 1;
                                }
                            }
                            b += 1;
                        }
                        (None, None) => break,
                    }
                }
                rows[i] = merged;
            }
            etas.push(eta);
            u_rows[step] = pivot_entries;
        }

        // Dense inverse, one sparse solve per unit vector.
        let mut binv = vec![0.0f64; m * m];
        let mut v = vec![0.0f64; m];
        let mut x = vec![0.0f64; m];
        for k in 0..m {
            v.iter_mut().for_each(|t| *t = 0.0);
            v[k] = 1.0;
            for (s, eta) in etas.iter().enumerate() {
                let vp = v[pivot_row[s]];
                if vp != 0.0 {
                    for &(i, f) in eta {
                        v[i] -= f * vp;
                    }
                }
            }
            x.iter_mut().for_each(|t| *t = 0.0);
            for s in (0..m).rev() {
                let mut acc = v[pivot_row[s]];
                for &(pp, vv) in &u_rows[s] {
                    if pp != pivot_pos[s] {
                        acc -= vv * x[pp];
                    }
                }
                x[pivot_pos[s]] = acc / pivot_val[s];
            }
            for pos in 0..m {
                binv[pos * m + k] = x[pos];
            }
        }
        self.binv = binv;
        self.pivots_since_refresh = 0;
        self.recompute_x_basic();
        if std::env::var_os("RESTEAL_LP_VERIFY").is_some() {
            let e = self.debug_inverse_error();
            if e > 1e-9 {
                eprintln!("refresh produced inverse error {e:.3e} (iters={})", self.iterations);
            }
        }
        Ok(())
    }
}

fn identity(m: usize) -> Vec<f64> {
    let mut v = vec![0.0; m * m];
    for i in 0..m {
        v[i * m + i] = 1.0;
    }
    v
}

/// Serializes the program in fixed MPS format for cross-checking against
/// external solvers.
pub fn to_mps(lp: &LinearProgram, name: &str) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    let _ = writeln!(out, "NAME          {name}");
    let _ = writeln!(out, "ROWS");
    let _ = writeln!(out, " N  COST");
    for r in 0..lp.a_eq.len() {
        let _ = writeln!(out, " E  EQ{r}");
    }
    for r in 0..lp.a_ub.len() {
        let _ = writeln!(out, " L  UB{r}");
    }
    // Column-major entries, gathered per variable.
    let mut per_col: Vec<Vec<(String, f64)>> = vec![Vec::new(); lp.n_vars()];
    for (j, &c) in lp.objective.iter().enumerate() {
        if c != 0.0 {
            per_col[j].push(("COST".to_string(), c));
        }
    }
    for (r, row) in lp.a_eq.iter().enumerate() {
        for &(j, v) in row {
            per_col[j].push((format!("EQ{r}"), v));
        }
    }
    for (r, row) in lp.a_ub.iter().enumerate() {
        for &(j, v) in row {
            per_col[j].push((format!("UB{r}"), v));
        }
    }
    let _ = writeln!(out, "COLUMNS");
    for (j, entries) in per_col.iter().enumerate() {
        for (row, v) in entries {
            let _ = writeln!(out, "    X{j}  {row}  {v:.12e}");
        }
    }
    let _ = writeln!(out, "RHS");
    for (r, v) in lp.b_eq.iter().enumerate() {
        if *v != 0.0 {
            let _ = writeln!(out, "    RHS  EQ{r}  {v:.12e}");
        }
    }
    for (r, v) in lp.b_ub.iter().enumerate() {
        if *v != 0.0 {
            let _ = writeln!(out, "    RHS  UB{r}  {v:.12e}");
        }
    }
    let _ = writeln!(out, "BOUNDS");
    for (j, &(lo, hi)) in lp.bounds.iter().enumerate() {
        if lo != 0.0 {
            let _ = writeln!(out, " LO BND  X{j}  {lo:.12e}");
        }
        if hi.is_finite() {
            let _ = writeln!(out, " UP BND  X{j}  {hi:.12e}");
        }
    }
    let _ = writeln!(out, "ENDATA");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn residual_inf_norm(lp: &LinearProgram, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (row, &b) in lp.a_eq.iter().zip(lp.b_eq.iter()) {
            let lhs: f64 = row.iter().map(|&(j, v)| v * x[j]).sum();
            worst = worst.max((lhs - b).abs());
        }
        for (row, &b) in lp.a_ub.iter().zip(lp.b_ub.iter()) {
            let lhs: f64 = row.iter().map(|&(j, v)| v * x[j]).sum();
            worst = worst.max((lhs - b).max(0.0));
        }
        worst
    }

    /// Dual objective under the bounded-variable convention, for gap checks.
    fn dual_objective(lp: &LinearProgram, sol: &LpSolution) -> f64 {
        let mut val: f64 = lp
            .b_eq
            .iter()
            .zip(sol.duals_eq.iter())
            .map(|(b, y)| b * y)
            .sum::<f64>()
            + lp.b_ub.iter().zip(sol.duals_ub.iter()).map(|(b, y)| b * y).sum::<f64>();
        for j in 0..lp.n_vars() {
            let mut d = lp.objective[j];
            for (r, row) in lp.a_eq.iter().enumerate() {
                if let Some(&(_, v)) = row.iter().find(|(c, _)| *c == j) {
                    d -= sol.duals_eq[r] * v;
                }
            }
            for (r, row) in lp.a_ub.iter().enumerate() {
                if let Some(&(_, v)) = row.iter().find(|(c, _)| *c == j) {
                    d -= sol.duals_ub[r] * v;
                }
            }
            let (lo, hi) = lp.bounds[j];
            if d > 1e-9 {
                val += d * lo;
            } else if d < -1e-9 {
                assert!(hi.is_finite(), "negative reduced cost on an unbounded variable");
                val += d * hi;
            }
        }
        val
    }

    #[test]
    fn one_variable_upper_bound() {
        // min -x s.t. x <= 1, x >= 0.
        let lp = LinearProgram::from_dense(
            vec![-1.0],
            vec![],
            vec![],
            vec![vec![1.0]],
            vec![1.0],
            vec![(0.0, f64::INFINITY)],
        );
        let sol = solve_lp(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.x[0] - 1.0).abs() < 1e-9);
        assert!((sol.objective_value + 1.0).abs() < 1e-9);
    }

    #[test]
    fn equality_forces_objective() {
        // min x + y s.t. x + y = 1, x, y >= 0.
        let lp = LinearProgram::from_dense(
            vec![1.0, 1.0],
            vec![vec![1.0, 1.0]],
            vec![1.0],
            vec![],
            vec![],
            vec![(0.0, f64::INFINITY); 2],
        );
        let sol = solve_lp(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective_value - 1.0).abs() < 1e-9);
    }

    #[test]
    fn detects_unbounded() {
        let lp = LinearProgram::from_dense(
            vec![-1.0, 0.0],
            vec![],
            vec![],
            vec![vec![0.0, 1.0]],
            vec![1.0],
            vec![(0.0, f64::INFINITY); 2],
        );
        let sol = solve_lp(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Unbounded);
    }

    #[test]
    fn detects_infeasible_with_certificate() {
        // x + y = 2 with x, y <= 0.5 is infeasible.
        let lp = LinearProgram::from_dense(
            vec![1.0, 1.0],
            vec![vec![1.0, 1.0]],
            vec![2.0],
            vec![],
            vec![],
            vec![(0.0, 0.5); 2],
        );
        let sol = solve_lp(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Infeasible);
        let y = sol.farkas.expect("certificate");
        // y separates: y b exceeds what any x inside the bounds can reach.
        let coeff = y[0];
        let reach: f64 = (0..2)
            .map(|_| if coeff > 0.0 { coeff * 0.5 } else { 0.0 })
            .sum();
        assert!(y[0] * 2.0 - reach > 1e-9, "farkas does not separate");
    }

    #[test]
    fn degenerate_lp_terminates() {
        let lp = LinearProgram::from_dense(
            vec![-1.0, -1.0],
            vec![],
            vec![],
            vec![
                vec![1.0, 1.0],
                vec![1.0, 1.0],
                vec![1.0, 0.0],
                vec![0.0, 1.0],
            ],
            vec![1.0, 1.0, 1.0, 1.0],
            vec![(0.0, f64::INFINITY); 2],
        );
        let sol = solve_lp(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective_value + 1.0).abs() < 1e-9);
    }

    /// Brute-force vertex enumeration over basis subsets and nonbasic bound
    /// patterns; independent of the simplex path.
    fn brute_force_min(lp: &LinearProgram) -> Option<f64> {
        use nalgebra::{DMatrix, DVector};
        let n = lp.n_vars();
        let m_ub = lp.a_ub.len();
        let n_tot = n + m_ub;
        let m = lp.a_eq.len() + m_ub;
        let mut a = DMatrix::zeros(m, n_tot);
        let mut b = DVector::zeros(m);
        for (r, row) in lp.a_eq.iter().enumerate() {
            for &(j, v) in row {
                a[(r, j)] = v;
            }
            b[r] = lp.b_eq[r];
        }
        for (r, row) in lp.a_ub.iter().enumerate() {
            for &(j, v) in row {
                a[(lp.a_eq.len() + r, j)] = v;
            }
            a[(lp.a_eq.len() + r, n + r)] = 1.0;
            b[lp.a_eq.len() + r] = lp.b_ub[r];
        }
        let lo: Vec<f64> = (0..n_tot).map(|j| if j < n { lp.bounds[j].0 } else { 0.0 }).collect();
        let hi: Vec<f64> = (0..n_tot)
            .map(|j| if j < n { lp.bounds[j].1 } else { f64::INFINITY })
            .collect();

        let mut best: Option<f64> = None;
        let mut basis = vec![0usize; m];
        enumerate_bases(0, 0, &mut basis, n_tot, m, &mut |basis| {
            let nb: Vec<usize> = (0..n_tot).filter(|j| !basis.contains(j)).collect();
            for pat in 0..(1usize << nb.len()) {
                let mut rhs = b.clone();
                let mut ok = true;
                let mut xfix = vec![0.0; n_tot];
                for (k, &j) in nb.iter().enumerate() {
                    let at_hi = pat & (1 << k) != 0;
                    let v = if at_hi { hi[j] } else { lo[j] };
                    if !v.is_finite() {
                        ok = false;
                        break;
                    }
                    xfix[j] = v;
                    for r in 0..m {
                        rhs[r] -= a[(r, j)] * v;
                    }
                }
                if !ok {
                    continue;
                }
                let bmat = DMatrix::from_fn(m, m, |r, k| a[(r, basis[k])]);
                let Some(sol) = bmat.lu().solve(&rhs) else {
                    continue;
                };
                let mut feasible = true;
                for (k, &j) in basis.iter().enumerate() {
                    if sol[k] < lo[j] - 1e-8 || sol[k] > hi[j] + 1e-8 {
                        feasible = false;
                        break;
                    }
                    xfix[j] = sol[k];
                }
                if !feasible {
                    continue;
                }
                // LU can "solve" singular systems approximately; verify.
                let mut resid: f64 = 0.0;
                for r in 0..m {
                    let lhs: f64 = (0..n_tot).map(|j| a[(r, j)] * xfix[j]).sum();
                    resid = resid.max((lhs - b[r]).abs());
                }
                if resid > 1e-7 {
                    continue;
                }
                let val: f64 = (0..n).map(|j| lp.objective[j] * xfix[j]).sum();
                best = Some(best.map_or(val, |cur: f64| cur.min(val)));
            }
        });
        best
    }

    fn enumerate_bases(
        start: usize,
        depth: usize,
        basis: &mut Vec<usize>,
        n: usize,
        m: usize,
        f: &mut impl FnMut(&Vec<usize>),
    ) {
        if depth == m {
            f(basis);
            return;
        }
        for j in start..n {
            basis[depth] = j;
            enumerate_bases(j + 1, depth + 1, basis, n, m, f);
        }
    }

    #[test]
    fn random_lps_match_vertex_enumeration() {
        let mut seed = 0x1234_5678_9abc_def0u64;
        let mut next = move || {
            seed ^= seed << 13;
            seed ^= seed >> 7;
            seed ^= seed << 17;
            (seed >> 11) as f64 / (1u64 << 53) as f64
        };
        let mut solved = 0;
        let mut attempts = 0;
        while solved < 50 && attempts < 500 {
            attempts += 1;
            let n = 2 + (next() * 5.0) as usize; // 2..=6
            let m_eq = (next() * 2.0) as usize; // 0..=1
            let m_ub = 1 + (next() * 3.0) as usize; // 1..=3
            if m_eq + m_ub > n {
                continue;
            }
            let x0: Vec<f64> = (0..n).map(|_| next() * 2.0).collect();
            let c: Vec<f64> = (0..n).map(|_| next() * 4.0 - 2.0).collect();
            let a_eq: Vec<Vec<f64>> = (0..m_eq)
                .map(|_| {
                    (0..n)
                        .map(|_| (next() * 4.0 - 2.0) * ((next() > 0.3) as u8 as f64))
                        .collect()
                })
                .collect();
            let b_eq: Vec<f64> = a_eq
                .iter()
                .map(|row| row.iter().zip(x0.iter()).map(|(a, x)| a * x).sum())
                .collect();
            let a_ub: Vec<Vec<f64>> = (0..m_ub)
                .map(|_| {
                    (0..n)
                        .map(|_| (next() * 4.0 - 2.0) * ((next() > 0.3) as u8 as f64))
                        .collect()
                })
                .collect();
            let b_ub: Vec<f64> = a_ub
                .iter()
                .map(|row| {
                    let lhs: f64 = row.iter().zip(x0.iter()).map(|(a, x)| a * x).sum();
                    lhs + next()
                })
                .collect();
            let bounds: Vec<(f64, f64)> = (0..n).map(|_| (0.0, 2.0 + next() * 3.0)).collect();
            let lp = LinearProgram::from_dense(c, a_eq, b_eq, a_ub, b_ub, bounds);
            let sol = solve_lp(&lp).unwrap();
            assert_eq!(sol.status, LpStatus::Optimal, "constructed feasible bounded LP");
            let oracle = brute_force_min(&lp).expect("oracle found a vertex");
            assert!(
                (sol.objective_value - oracle).abs() < 1e-7 * (1.0 + oracle.abs()),
                "lp {attempts}: simplex {} vs oracle {}",
                sol.objective_value,
                oracle
            );
            assert!(residual_inf_norm(&lp, &sol.x) < FEAS_TOL);
            for (j, &(lo, hi)) in lp.bounds.iter().enumerate() {
                assert!(sol.x[j] >= lo - 1e-9 && sol.x[j] <= hi + 1e-9);
            }
            let dual = dual_objective(&lp, &sol);
            assert!(
                (dual - sol.objective_value).abs() < 1e-6 * (1.0 + sol.objective_value.abs()),
                "duality gap: primal {} dual {}",
                sol.objective_value,
                dual
            );
            solved += 1;
        }
        assert_eq!(solved, 50, "enough random instances exercised");
    }

    #[test]
    fn deterministic_bit_for_bit() {
        let lp = LinearProgram::from_dense(
            vec![-1.0, 2.0, 0.5, -0.25],
            vec![vec![1.0, 1.0, 1.0, 1.0]],
            vec![2.0],
            vec![vec![1.0, -1.0, 0.0, 2.0], vec![0.5, 0.0, 1.0, 0.0]],
            vec![1.0, 1.5],
            vec![(0.0, 3.0); 4],
        );
        let a = solve_lp(&lp).unwrap();
        let b = solve_lp(&lp).unwrap();
        assert_eq!(a.objective_value.to_bits(), b.objective_value.to_bits());
        for (xa, xb) in a.x.iter().zip(b.x.iter()) {
            assert_eq!(xa.to_bits(), xb.to_bits());
        }
    }

    #[test]
    fn warm_restart_after_rhs_change_matches_cold() {
        let lp = LinearProgram::from_dense(
            vec![1.0, 2.0, -1.0],
            vec![vec![1.0, 1.0, 1.0]],
            vec![1.0],
            vec![vec![1.0, 0.0, 2.0]],
            vec![1.2],
            vec![(0.0, 1.0); 3],
        );
        let mut inst = SimplexInstance::new(&lp).unwrap();
        let first = inst.solve().unwrap();
        assert_eq!(first.status, LpStatus::Optimal);
        for step in 1..=10 {
            let b = 1.0 + 0.03 * step as f64;
            inst.set_rhs_eq(0, b);
            let warm = inst.resolve().unwrap();
            let mut cold_lp = lp.clone();
            cold_lp.b_eq[0] = b;
            let cold = solve_lp(&cold_lp).unwrap();
            assert_eq!(warm.status, cold.status);
            assert!(
                (warm.objective_value - cold.objective_value).abs() < 1e-8,
                "step {step}: warm {} cold {}",
                warm.objective_value,
                cold.objective_value
            );
        }
    }

    #[test]
    fn warm_restart_after_bound_fixing_matches_cold() {
        let lp = LinearProgram::from_dense(
            vec![-1.0, -0.5, -0.25, 0.1],
            vec![vec![1.0, 1.0, 1.0, 1.0]],
            vec![2.0],
            vec![],
            vec![],
            vec![(0.0, 1.0); 4],
        );
        let mut inst = SimplexInstance::new(&lp).unwrap();
        inst.solve().unwrap();
        inst.set_bounds(0, 0.0, 0.0);
        let warm = inst.resolve().unwrap();
        let mut fixed = lp.clone();
        fixed.bounds[0] = (0.0, 0.0);
        let cold = solve_lp(&fixed).unwrap();
        assert!((warm.objective_value - cold.objective_value).abs() < 1e-8);

        inst.set_bounds(0, 0.0, 1.0);
        let warm = inst.resolve().unwrap();
        let cold = solve_lp(&lp).unwrap();
        assert!((warm.objective_value - cold.objective_value).abs() < 1e-8);
    }

    #[test]
    fn warm_infeasible_then_feasible_roundtrip() {
        // Tightening bounds makes the program infeasible; relaxing recovers.
        let lp = LinearProgram::from_dense(
            vec![1.0, 1.0],
            vec![vec![1.0, 1.0]],
            vec![2.0],
            vec![],
            vec![],
            vec![(0.0, 3.0); 2],
        );
        let mut inst = SimplexInstance::new(&lp).unwrap();
        assert_eq!(inst.solve().unwrap().status, LpStatus::Optimal);
        inst.set_bounds(0, 0.0, 0.5);
        inst.set_bounds(1, 0.0, 0.5);
        assert_eq!(inst.resolve().unwrap().status, LpStatus::Infeasible);
        inst.set_bounds(0, 0.0, 3.0);
        inst.set_bounds(1, 0.0, 3.0);
        let back = inst.resolve().unwrap();
        assert_eq!(back.status, LpStatus::Optimal);
        assert!((back.objective_value - 2.0).abs() < 1e-9);
    }

    #[test]
    fn mps_dump_has_all_sections() {
        let lp = LinearProgram::from_dense(
            vec![1.0, -1.0],
            vec![vec![1.0, 1.0]],
            vec![1.0],
            vec![vec![1.0, 0.0]],
            vec![0.7],
            vec![(0.0, 1.0), (0.1, f64::INFINITY)],
        );
        let mps = to_mps(&lp, "TEST");
        for section in ["NAME", "ROWS", "COLUMNS", "RHS", "BOUNDS", "ENDATA"] {
            assert!(mps.contains(section), "missing {section}");
        }
        assert!(mps.contains("EQ0") && mps.contains("UB0"));
    }
}
