//! Dense linear programming on desk-scale problems.
//!
//! A two-phase revised primal simplex with an explicitly maintained basis
//! inverse, sparse constraint columns and bounded variables. Deterministic:
//! Dantzig pricing with a Bland fallback on degenerate stretches, fixed
//! tolerances (feasibility 1e-8, optimality 1e-9) so that golden iteration
//! tables stay stable. Solver instances are single-use; independent solves
//! may run on separate threads.
//!
//! The second half of the module is a dichotomic solver for bi-objective
//! LPs: it computes the complete vertex list of the Pareto frontier of
//! `min (f1, f2)` by probing weighted sums normal to chords.

use std::fmt::Write as _;

use thiserror::Error;

/// Primal feasibility tolerance.
pub const FEAS_TOL: f64 = 1e-8;
/// Dual feasibility (optimality) tolerance.
pub const OPT_TOL: f64 = 1e-9;
/// Smallest acceptable pivot magnitude.
const PIVOT_TOL: f64 = 1e-9;
/// Entries of an eta vector below this are treated as structural zeros.
const DROP_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum LpError {
    #[error("objective has {objective} coefficients but row has {row}")]
    WidthMismatch { objective: usize, row: usize },
    #[error("non-finite data in {0}")]
    NonFinite(&'static str),
    #[error("variable {0} has empty bound interval")]
    EmptyBounds(usize),
    #[error("iteration limit reached after {0} pivots")]
    IterationLimit(usize),
    #[error("numeric breakdown: {0}")]
    NumericBreakdown(&'static str),
    #[error("frontier is unbounded in every scalarization")]
    DegenerateFrontier,
}

/// Constraint relation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone)]
struct Row {
    entries: Vec<(u32, f64)>,
    relation: Relation,
    rhs: f64,
}

/// A linear program `min c'x + offset` subject to sparse rows and per-variable
/// bounds. Default bounds are `[0, +inf)`.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    n: usize,
    objective: Vec<f64>,
    offset: f64,
    rows: Vec<Row>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl LinearProgram {
    pub fn new(n_vars: usize) -> Self {
        LinearProgram {
            n: n_vars,
            objective: vec![0.0; n_vars],
            offset: 0.0,
            rows: Vec::new(),
            lower: vec![0.0; n_vars],
            upper: vec![f64::INFINITY; n_vars],
        }
    }

    pub fn n_vars(&self) -> usize {
        self.n
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn set_objective(&mut self, coeffs: &[f64]) -> Result<(), LpError> {
        if coeffs.len() != self.n {
            return Err(LpError::WidthMismatch {
                objective: self.n,
                row: coeffs.len(),
            });
        }
        self.objective.copy_from_slice(coeffs);
        Ok(())
    }

    pub fn set_objective_coeff(&mut self, var: usize, coeff: f64) {
        self.objective[var] = coeff;
    }

    pub fn set_offset(&mut self, offset: f64) {
        self.offset = offset;
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// Set `lower <= x_var <= upper`; use infinities for unbounded sides.
    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) -> Result<(), LpError> {
        if lower > upper {
            return Err(LpError::EmptyBounds(var));
        }
        self.lower[var] = lower;
        self.upper[var] = upper;
        Ok(())
    }

    /// Mark a variable as free (unbounded both sides).
    pub fn set_free(&mut self, var: usize) {
        self.lower[var] = f64::NEG_INFINITY;
        self.upper[var] = f64::INFINITY;
    }

    pub fn bounds(&self, var: usize) -> (f64, f64) {
        (self.lower[var], self.upper[var])
    }

    /// Add a dense constraint row.
    pub fn add_row(&mut self, coeffs: &[f64], relation: Relation, rhs: f64) -> Result<(), LpError> {
        if coeffs.len() != self.n {
            return Err(LpError::WidthMismatch {
                objective: self.n,
                row: coeffs.len(),
            });
        }
        let entries: Vec<(u32, f64)> = coeffs
            .iter()
            .enumerate()
            .filter(|(_, &c)| c != 0.0)
            .map(|(j, &c)| (j as u32, c))
            .collect();
        self.push_row(entries, relation, rhs)
    }

    /// Add a sparse constraint row given as `(var, coeff)` pairs.
    pub fn add_row_sparse(
        &mut self,
        entries: &[(usize, f64)],
        relation: Relation,
        rhs: f64,
    ) -> Result<(), LpError> {
        let mut packed = Vec::with_capacity(entries.len());
        for &(j, c) in entries {
            if j >= self.n {
                return Err(LpError::WidthMismatch {
                    objective: self.n,
                    row: j + 1,
                });
            }
            if c != 0.0 {
                packed.push((j as u32, c));
            }
        }
        self.push_row(packed, relation, rhs)
    }

    fn push_row(
        &mut self,
        entries: Vec<(u32, f64)>,
        relation: Relation,
        rhs: f64,
    ) -> Result<(), LpError> {
        if !rhs.is_finite() {
            return Err(LpError::NonFinite("rhs"));
        }
        if entries.iter().any(|(_, c)| !c.is_finite()) {
            return Err(LpError::NonFinite("row coefficient"));
        }
        self.rows.push(Row {
            entries,
            relation,
            rhs,
        });
        Ok(())
    }

    /// Objective value of a point, offset included.
    pub fn eval_objective(&self, point: &[f64]) -> f64 {
        self.offset
            + self
                .objective
                .iter()
                .zip(point)
                .map(|(c, x)| c * x)
                .sum::<f64>()
    }

    /// Worst violation of rows and bounds at a point.
    pub fn primal_residual(&self, point: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for row in &self.rows {
            let ax: f64 = row.entries.iter().map(|&(j, c)| c * point[j as usize]).sum();
            let gap = match row.relation {
                Relation::Le => ax - row.rhs,
                Relation::Ge => row.rhs - ax,
                Relation::Eq => (ax - row.rhs).abs(),
            };
            worst = worst.max(gap);
        }
        for j in 0..self.n {
            worst = worst.max(self.lower[j] - point[j]);
            worst = worst.max(point[j] - self.upper[j]);
        }
        worst
    }

    /// Human-readable dump in the conventional LP text format.
    pub fn to_lp_format(&self) -> String {
        let mut out = String::new();
        out.push_str("Minimize\n obj:");
        let mut first = true;
        for (j, &c) in self.objective.iter().enumerate() {
            if c != 0.0 {
                let _ = write!(out, " {}{} x{}", if c < 0.0 { "- " } else if first { "" } else { "+ " }, c.abs(), j + 1);
                first = false;
            }
        }
        if self.offset != 0.0 {
            let _ = write!(out, " + {}", self.offset);
        }
        out.push_str("\nSubject To\n");
        for (i, row) in self.rows.iter().enumerate() {
            let _ = write!(out, " c{}:", i + 1);
            let mut first = true;
            for &(j, c) in &row.entries {
                let _ = write!(out, " {}{} x{}", if c < 0.0 { "- " } else if first { "" } else { "+ " }, c.abs(), j + 1);
                first = false;
            }
            let rel = match row.relation {
                Relation::Le => "<=",
                Relation::Eq => "=",
                Relation::Ge => ">=",
            };
            let _ = writeln!(out, " {} {}", rel, row.rhs);
        }
        out.push_str("Bounds\n");
        for j in 0..self.n {
            let (l, u) = (self.lower[j], self.upper[j]);
            if l == f64::NEG_INFINITY && u == f64::INFINITY {
                let _ = writeln!(out, " x{} free", j + 1);
            } else if u == f64::INFINITY {
                if l != 0.0 {
                    let _ = writeln!(out, " x{} >= {}", j + 1, l);
                }
            } else {
                let _ = writeln!(out, " {} <= x{} <= {}", l, j + 1, u);
            }
        }
        out.push_str("End\n");
        out
    }
}

/// Solve outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// Result of a solve. On `Optimal`, `point` is primal-feasible within 1e-8
/// and `dual_point` holds one multiplier per constraint row.
#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub value: f64,
    pub point: Vec<f64>,
    pub dual_point: Vec<f64>,
    /// On `Unbounded`: a feasible ray along which the objective decreases.
    pub ray: Option<Vec<f64>>,
}

/// Dual objective value matching this solver's conventions, for duality
/// checks: `y'b` plus reduced-cost terms for variables at finite bounds.
pub fn dual_objective(lp: &LinearProgram, sol: &LpSolution) -> f64 {
    let y = &sol.dual_point;
    let mut val: f64 = lp.rows.iter().zip(y).map(|(r, yi)| r.rhs * yi).sum();
    // reduced costs
    let mut d = lp.objective.clone();
    for (row, &yi) in lp.rows.iter().zip(y) {
        if yi != 0.0 {
            for &(j, c) in &row.entries {
                d[j as usize] -= yi * c;
            }
        }
    }
    for j in 0..lp.n {
        let dj = d[j];
        if dj.abs() <= OPT_TOL {
            continue;
        }
        let x = sol.point[j];
        let (l, u) = (lp.lower[j], lp.upper[j]);
        // attribute the reduced cost to the bound the variable actually sits at
        if dj > 0.0 && l.is_finite() && (x - l).abs() <= 1e-6 * (1.0 + l.abs()) {
            val += dj * l;
        } else if dj < 0.0 && u.is_finite() && (x - u).abs() <= 1e-6 * (1.0 + u.abs()) {
            val += dj * u;
        }
    }
    val + lp.offset
}

/// Complementary slackness residual: row duals times row slacks plus reduced
/// costs times distance of variables from their nearest bound.
pub fn complementary_slackness(lp: &LinearProgram, sol: &LpSolution) -> f64 {
    let mut worst: f64 = 0.0;
    for (row, &yi) in lp.rows.iter().zip(&sol.dual_point) {
        if row.relation == Relation::Eq {
            continue;
        }
        let ax: f64 = row
            .entries
            .iter()
            .map(|&(j, c)| c * sol.point[j as usize])
            .sum();
        worst = worst.max((yi * (ax - row.rhs)).abs());
    }
    let mut d = lp.objective.clone();
    for (row, &yi) in lp.rows.iter().zip(&sol.dual_point) {
        if yi != 0.0 {
            for &(j, c) in &row.entries {
                d[j as usize] -= yi * c;
            }
        }
    }
    for j in 0..lp.n {
        if d[j].abs() <= OPT_TOL {
            continue;
        }
        let x = sol.point[j];
        let (l, u) = (lp.lower[j], lp.upper[j]);
        let gap = if d[j] > 0.0 {
            if l.is_finite() {
                x - l
            } else {
                f64::INFINITY
            }
        } else if u.is_finite() {
            u - x
        } else {
            f64::INFINITY
        };
        if gap.is_finite() {
            worst = worst.max((d[j] * gap).abs());
        }
    }
    worst
}

// ---------------------------------------------------------------------------
// solver internals
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
enum NbState {
    AtLower,
    AtUpper,
    AtZero, // free variable parked at zero
    Basic,
}

struct Solver {
    m: usize,
    n_real: usize, // structural + slack columns
    cols: Vec<Vec<(u32, f64)>>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    cost: Vec<f64>,   // current phase costs for real columns
    b: Vec<f64>,
    // artificial bookkeeping: artificial of row i has implicit column sign[i]*e_i
    art_sign: Vec<f64>,
    // state
    basis: Vec<i64>, // row -> real var index, or -(row+1) for the row's artificial
    state: Vec<NbState>,
    x_nb: Vec<f64>, // value of each nonbasic real var
    x_b: Vec<f64>,
    inv_b: Vec<f64>, // column-major m*m
    d: Vec<f64>,     // reduced costs of real columns (valid for nonbasic ones)
    art_cost: f64,   // cost of artificial columns in the current phase (1 or 0)
    pivots: usize,
    degenerate_streak: usize,
    bland: bool,
}

const REFRESH_EVERY: usize = 256;

impl Solver {
    /// alpha = B^{-1} * column(var)
    fn ftran(&self, var: i64, alpha: &mut [f64], nz: &mut Vec<u32>) {
        alpha.iter_mut().for_each(|a| *a = 0.0);
        nz.clear();
        let m = self.m;
        if var < 0 {
            let row = (-var - 1) as usize;
            let sign = self.art_sign[row];
            let col = &self.inv_b[row * m..(row + 1) * m];
            for (i, &v) in col.iter().enumerate() {
                if v != 0.0 {
                    alpha[i] = sign * v;
                }
            }
        } else {
            for &(r, c) in &self.cols[var as usize] {
                let col = &self.inv_b[(r as usize) * m..(r as usize + 1) * m];
                for (i, &v) in col.iter().enumerate() {
                    alpha[i] += c * v;
                }
            }
        }
        for (i, &v) in alpha.iter().enumerate() {
            if v.abs() > DROP_TOL {
                nz.push(i as u32);
            }
        }
    }

    fn column_cost(&self, var: i64) -> f64 {
        if var < 0 {
            self.art_cost
        } else {
            self.cost[var as usize]
        }
    }

    /// Recompute y = c_B' B^{-1}, then reduced costs of all real columns.
    /// `inv_b[c*m + r]` holds `B^{-1}[r][c]`, so `y[c] = sum_r c_B[r] inv_b[c*m+r]`.
    fn refresh_duals(&mut self, y: &mut Vec<f64>) {
        let m = self.m;
        let cb: Vec<f64> = (0..m).map(|r| self.column_cost(self.basis[r])).collect();
        y.clear();
        y.resize(m, 0.0);
        for c in 0..m {
            let col = &self.inv_b[c * m..(c + 1) * m];
            let mut acc = 0.0;
            for (r, &v) in col.iter().enumerate() {
                if v != 0.0 && cb[r] != 0.0 {
                    acc += cb[r] * v;
                }
            }
            y[c] = acc;
        }
        for j in 0..self.n_real {
            if self.state[j] == NbState::Basic {
                self.d[j] = 0.0;
            } else {
                let mut acc = self.cost[j];
                for &(r, c) in &self.cols[j] {
                    acc -= y[r as usize] * c;
                }
                self.d[j] = acc;
            }
        }
    }

    /// Recompute basic values from scratch.
    fn refresh_x_b(&mut self) {
        let m = self.m;
        let mut rhs = self.b.clone();
        for j in 0..self.n_real {
            if self.state[j] != NbState::Basic && self.x_nb[j] != 0.0 {
                for &(r, c) in &self.cols[j] {
                    rhs[r as usize] -= c * self.x_nb[j];
                }
            }
        }
        // artificial nonbasic vars sit at zero, no contribution
        for i in 0..m {
            self.x_b[i] = 0.0;
        }
        for c in 0..m {
            if rhs[c] != 0.0 {
                let col = &self.inv_b[c * m..(c + 1) * m];
                for (i, &v) in col.iter().enumerate() {
                    if v != 0.0 {
                        self.x_b[i] += v * rhs[c];
                    }
                }
            }
        }
    }

    fn bounds_of(&self, var: i64) -> (f64, f64) {
        if var < 0 {
            // artificials are clamped to zero outside phase 1
            if self.art_cost > 0.0 {
                (0.0, f64::INFINITY)
            } else {
                (0.0, 0.0)
            }
        } else {
            (self.lower[var as usize], self.upper[var as usize])
        }
    }

    /// One simplex phase: iterate until optimal/unbounded/limit.
    fn iterate(&mut self, max_pivots: usize) -> Result<PhaseEnd, LpError> {
        let m = self.m;
        let mut alpha = vec![0.0; m];
        let mut nz: Vec<u32> = Vec::with_capacity(m);
        let mut y = vec![0.0; m];
        let mut rho = vec![0.0; m];
        let mut verify_rounds = 0usize;

        loop {
            if self.pivots > max_pivots {
                return Err(LpError::IterationLimit(self.pivots));
            }

            // pricing over real columns
            let mut best: Option<(usize, f64, i8)> = None; // (var, score, direction)
            for j in 0..self.n_real {
                let (dir, viol) = match self.state[j] {
                    NbState::Basic => continue,
                    NbState::AtLower => (1i8, -self.d[j]),
                    NbState::AtUpper => (-1i8, self.d[j]),
                    NbState::AtZero => {
                        if self.d[j] < 0.0 {
                            (1i8, -self.d[j])
                        } else {
                            (-1i8, self.d[j])
                        }
                    }
                };
                if viol > OPT_TOL {
                    if self.bland {
                        best = Some((j, viol, dir));
                        break;
                    }
                    match best {
                        Some((_, s, _)) if s >= viol => {}
                        _ => best = Some((j, viol, dir)),
                    }
                }
            }

            let (q, _score, dir) = match best {
                Some(t) => t,
                None => {
                    // claimed optimal: refresh duals and re-verify once or twice
                    if verify_rounds < 2 {
                        verify_rounds += 1;
                        self.refresh_duals(&mut y);
                        self.refresh_x_b();
                        let violated = (0..self.n_real).any(|j| match self.state[j] {
                            NbState::Basic => false,
                            NbState::AtLower => self.d[j] < -OPT_TOL * 10.0,
                            NbState::AtUpper => self.d[j] > OPT_TOL * 10.0,
                            NbState::AtZero => self.d[j].abs() > OPT_TOL * 10.0,
                        });
                        if violated {
                            continue;
                        }
                    }
                    return Ok(PhaseEnd::Optimal);
                }
            };
            verify_rounds = 0;

            self.ftran(q as i64, &mut alpha, &mut nz);
            let sigma = dir as f64;

            // ratio test
            let (lq, uq) = self.bounds_of(q as i64);
            let own_limit = if sigma > 0.0 { uq - self.x_nb[q] } else { self.x_nb[q] - lq };
            let mut step = own_limit.max(0.0);
            let mut leave: Option<usize> = None; // basis row
            let mut leave_at_upper = false;
            let mut best_pivot = 0.0f64;
            for &ri in &nz {
                let i = ri as usize;
                let a = alpha[i];
                let rate = -sigma * a; // movement rate of basic i per unit entering step
                let (lb, ub) = self.bounds_of(self.basis[i]);
                let (limit, hits_upper) = if rate < -PIVOT_TOL {
                    if lb == f64::NEG_INFINITY {
                        continue;
                    }
                    ((self.x_b[i] - lb) / -rate, false)
                } else if rate > PIVOT_TOL {
                    if ub == f64::INFINITY {
                        continue;
                    }
                    ((ub - self.x_b[i]) / rate, true)
                } else {
                    continue;
                };
                let limit = limit.max(0.0);
                let replace = if limit < step - 1e-10 {
                    true
                } else if limit <= step + 1e-10 {
                    // tie: prefer the larger pivot for stability; in Bland
                    // mode prefer the lowest variable index
                    if self.bland {
                        match leave {
                            Some(r) => {
                                let cur = self.basis[r];
                                let cand = self.basis[i];
                                bland_key(cand) < bland_key(cur)
                            }
                            None => true,
                        }
                    } else {
                        a.abs() > best_pivot
                    }
                } else {
                    false
                };
                if replace {
                    step = limit.min(step);
                    leave = Some(i);
                    leave_at_upper = hits_upper;
                    best_pivot = a.abs();
                }
            }

            match leave {
                None => {
                    if step.is_infinite() {
                        // unbounded in phase 2: build ray certificate
                        return Ok(PhaseEnd::Unbounded {
                            entering: q,
                            direction: sigma,
                            alpha: alpha.clone(),
                        });
                    }
                    // bound flip of the entering variable
                    let delta = step;
                    for &ri in &nz {
                        let i = ri as usize;
                        self.x_b[i] -= sigma * delta * alpha[i];
                    }
                    self.x_nb[q] += sigma * delta;
                    self.state[q] = if sigma > 0.0 {
                        NbState::AtUpper
                    } else {
                        NbState::AtLower
                    };
                    self.pivots += 1;
                    continue;
                }
                Some(r) => {
                    let delta = step;
                    if delta <= 1e-12 {
                        self.degenerate_streak += 1;
                        if self.degenerate_streak > 40 + 2 * m {
                            self.bland = true;
                        }
                    } else {
                        self.degenerate_streak = 0;
                        self.bland = false;
                    }

                    let a_r = alpha[r];
                    if a_r.abs() < PIVOT_TOL {
                        return Err(LpError::NumericBreakdown("pivot too small"));
                    }

                    // update basic values
                    let entering_value = self.x_nb[q] + sigma * delta;
                    for &ri in &nz {
                        let i = ri as usize;
                        if i != r {
                            self.x_b[i] -= sigma * delta * alpha[i];
                        }
                    }
                    let leaving = self.basis[r];
                    let (lb, ub) = self.bounds_of(leaving);
                    if leaving >= 0 {
                        let lv = leaving as usize;
                        self.state[lv] = if leave_at_upper {
                            NbState::AtUpper
                        } else if lb == f64::NEG_INFINITY && ub == f64::INFINITY {
                            NbState::AtZero
                        } else {
                            NbState::AtLower
                        };
                        self.x_nb[lv] = if leave_at_upper { ub } else if self.state[lv] == NbState::AtZero { 0.0 } else { lb };
                    }
                    self.basis[r] = q as i64;
                    self.state[q] = NbState::Basic;
                    self.x_b[r] = entering_value;

                    // update B^{-1} (column-major), using the sparsity of alpha
                    let inv = &mut self.inv_b;
                    for c in 0..m {
                        let base = c * m;
                        let t = inv[base + r];
                        if t == 0.0 {
                            continue;
                        }
                        let t = t / a_r;
                        for &ri in &nz {
                            let i = ri as usize;
                            if i != r {
                                inv[base + i] -= alpha[i] * t;
                            }
                        }
                        inv[base + r] = t;
                    }

                    // rho = new row r of B^{-1}
                    for c in 0..m {
                        rho[c] = self.inv_b[c * m + r];
                    }
                    // incremental reduced-cost update: d_j -= d_q * rho' a_j
                    let d_q = self.d[q];
                    if d_q != 0.0 {
                        for j in 0..self.n_real {
                            if self.state[j] == NbState::Basic {
                                continue;
                            }
                            let mut w = 0.0;
                            for &(ri, c) in &self.cols[j] {
                                let rv = rho[ri as usize];
                                if rv != 0.0 {
                                    w += rv * c;
                                }
                            }
                            if w != 0.0 {
                                self.d[j] -= d_q * w;
                            }
                        }
                    }
                    self.d[q] = 0.0;
                    if leaving >= 0 {
                        // freshly nonbasic leaving variable
                        let lv = leaving as usize;
                        let mut w = 0.0;
                        for &(ri, c) in &self.cols[lv] {
                            let rv = rho[ri as usize];
                            if rv != 0.0 {
                                w += rv * c;
                            }
                        }
                        self.d[lv] = -d_q * w;
                    }

                    self.pivots += 1;
                    if self.pivots % REFRESH_EVERY == 0 {
                        self.refresh_duals(&mut y);
                        self.refresh_x_b();
                    }
                }
            }
        }
    }
}

fn bland_key(var: i64) -> i64 {
    if var < 0 {
        i64::MAX + var // artificials last
    } else {
        var
    }
}

enum PhaseEnd {
    Optimal,
    Unbounded {
        entering: usize,
        direction: f64,
        alpha: Vec<f64>,
    },
}

/// Solve a linear program.
///
/// Numeric trouble surfaces as an explicit `Err`, never as NaN in a result.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution, LpError> {
    if lp.objective.iter().any(|c| !c.is_finite()) {
        return Err(LpError::NonFinite("objective"));
    }
    for j in 0..lp.n {
        if lp.lower[j] > lp.upper[j] {
            return Err(LpError::EmptyBounds(j));
        }
    }
    let m = lp.rows.len();
    let n = lp.n;

    // computational columns: structural then one slack per inequality row
    let mut cols: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n];
    for (i, row) in lp.rows.iter().enumerate() {
        for &(j, c) in &row.entries {
            cols[j as usize].push((i as u32, c));
        }
    }
    let mut lower = lp.lower.clone();
    let mut upper = lp.upper.clone();
    let mut cost = lp.objective.clone();
    let mut slack_of_row: Vec<Option<usize>> = vec![None; m];
    for (i, row) in lp.rows.iter().enumerate() {
        let sgn = match row.relation {
            Relation::Le => 1.0,
            Relation::Ge => -1.0,
            Relation::Eq => continue,
        };
        let j = cols.len();
        cols.push(vec![(i as u32, sgn)]);
        lower.push(0.0);
        upper.push(f64::INFINITY);
        cost.push(0.0);
        slack_of_row[i] = Some(j);
    }
    let n_real = cols.len();
    let b: Vec<f64> = lp.rows.iter().map(|r| r.rhs).collect();

    // initial nonbasic values
    let mut x_nb = vec![0.0; n_real];
    let mut state = vec![NbState::AtLower; n_real];
    for j in 0..n_real {
        if lower[j].is_finite() {
            x_nb[j] = lower[j];
            state[j] = NbState::AtLower;
        } else if upper[j].is_finite() {
            x_nb[j] = upper[j];
            state[j] = NbState::AtUpper;
        } else {
            x_nb[j] = 0.0;
            state[j] = NbState::AtZero;
        }
    }

    // residuals with all real columns nonbasic
    let mut resid = b.clone();
    for j in 0..n_real {
        if x_nb[j] != 0.0 {
            for &(r, c) in &cols[j] {
                resid[r as usize] -= c * x_nb[j];
            }
        }
    }

    // initial basis: slack when it can absorb the residual, artificial otherwise
    let mut basis: Vec<i64> = vec![0; m];
    let mut art_sign = vec![1.0; m];
    let mut x_b = vec![0.0; m];
    let mut any_artificial_positive = false;
    for i in 0..m {
        let use_slack = match slack_of_row[i] {
            Some(j) => {
                let sgn = cols[j][0].1;
                let val = resid[i] / sgn;
                if val >= 0.0 {
                    basis[i] = j as i64;
                    state[j] = NbState::Basic;
                    x_b[i] = val;
                    true
                } else {
                    false
                }
            }
            None => false,
        };
        if !use_slack {
            art_sign[i] = if resid[i] >= 0.0 { 1.0 } else { -1.0 };
            basis[i] = -(i as i64) - 1;
            x_b[i] = resid[i].abs();
            if x_b[i] > FEAS_TOL {
                any_artificial_positive = true;
            }
        }
    }

    let mut inv_b = vec![0.0; m * m];
    for i in 0..m {
        // basis columns are +-unit vectors at this point
        let diag = match basis[i] {
            v if v < 0 => art_sign[i],
            v => cols[v as usize][0].1,
        };
        inv_b[i * m + i] = 1.0 / diag;
    }

    let max_pivots = 50_000 + 200 * m;
    let mut solver = Solver {
        m,
        n_real,
        cols,
        lower,
        upper,
        cost: vec![0.0; n_real],
        b,
        art_sign,
        basis,
        state,
        x_nb,
        x_b,
        inv_b,
        d: vec![0.0; n_real],
        art_cost: 1.0,
        pivots: 0,
        degenerate_streak: 0,
        bland: false,
    };

    // phase 1: minimize the sum of artificials, skipped when already feasible
    if any_artificial_positive {
        let mut y = Vec::new();
        solver.refresh_duals(&mut y);
        match solver.iterate(max_pivots)? {
            PhaseEnd::Optimal => {}
            PhaseEnd::Unbounded { .. } => {
                return Err(LpError::NumericBreakdown("phase 1 reported unbounded"));
            }
        }
        let infeas: f64 = (0..m)
            .filter(|&i| solver.basis[i] < 0)
            .map(|i| solver.x_b[i].max(0.0))
            .sum();
        if infeas > FEAS_TOL {
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                value: f64::INFINITY,
                point: vec![0.0; n],
                dual_point: vec![0.0; m],
                ray: None,
            });
        }
    }

    // phase 2
    solver.art_cost = 0.0; // artificials clamp to [0,0] via bounds_of
    solver.cost.copy_from_slice(&cost);
    solver.degenerate_streak = 0;
    solver.bland = false;
    {
        let mut y = Vec::new();
        solver.refresh_duals(&mut y);
        solver.refresh_x_b();
    }
    let end = solver.iterate(max_pivots)?;

    // extract primal point
    let mut point = vec![0.0; n];
    for j in 0..n {
        if solver.state[j] != NbState::Basic {
            point[j] = solver.x_nb[j];
        }
    }
    for i in 0..m {
        let v = solver.basis[i];
        if v >= 0 && (v as usize) < n {
            point[v as usize] = solver.x_b[i];
        }
    }

    match end {
        PhaseEnd::Unbounded {
            entering,
            direction,
            alpha,
        } => {
            let mut ray = vec![0.0; n];
            if entering < n {
                ray[entering] = direction;
            }
            for i in 0..m {
                let v = solver.basis[i];
                if v >= 0 && (v as usize) < n {
                    ray[v as usize] = -direction * alpha[i];
                }
            }
            Ok(LpSolution {
                status: LpStatus::Unbounded,
                value: f64::NEG_INFINITY,
                point,
                dual_point: vec![0.0; m],
                ray: Some(ray),
            })
        }
        PhaseEnd::Optimal => {
            // final polish of duals
            let mut y = vec![0.0; m];
            solver.refresh_duals(&mut y);
            let value = lp.eval_objective(&point);
            Ok(LpSolution {
                status: LpStatus::Optimal,
                value,
                point,
                dual_point: y,
                ray: None,
            })
        }
    }
}

// ---------------------------------------------------------------------------
// bi-objective LP
// ---------------------------------------------------------------------------

/// `min (f1'x + off1, f2'x + off2)` over the rows and bounds of `base`.
#[derive(Debug, Clone)]
pub struct BiObjectiveLp {
    pub base: LinearProgram,
    pub objective1: Vec<f64>,
    pub offset1: f64,
    pub objective2: Vec<f64>,
    pub offset2: f64,
}

impl BiObjectiveLp {
    pub fn new(base: LinearProgram, objective1: Vec<f64>, objective2: Vec<f64>) -> Result<Self, LpError> {
        if objective1.len() != base.n_vars() || objective2.len() != base.n_vars() {
            return Err(LpError::WidthMismatch {
                objective: base.n_vars(),
                row: objective1.len().max(objective2.len()),
            });
        }
        Ok(BiObjectiveLp {
            base,
            objective1,
            offset1: 0.0,
            objective2,
            offset2: 0.0,
        })
    }

    fn eval(&self, x: &[f64]) -> (f64, f64) {
        let f1 = self.offset1
            + self
                .objective1
                .iter()
                .zip(x)
                .map(|(c, v)| c * v)
                .sum::<f64>();
        let f2 = self.offset2
            + self
                .objective2
                .iter()
                .zip(x)
                .map(|(c, v)| c * v)
                .sum::<f64>();
        (f1, f2)
    }

    fn weighted(&self, w1: f64, w2: f64) -> LinearProgram {
        let mut lp = self.base.clone();
        let coeffs: Vec<f64> = self
            .objective1
            .iter()
            .zip(&self.objective2)
            .map(|(&a, &b)| w1 * a + w2 * b)
            .collect();
        lp.set_objective(&coeffs).expect("same width");
        lp.set_offset(w1 * self.offset1 + w2 * self.offset2);
        lp
    }
}

/// Vertices of the Pareto frontier of a bi-objective LP, in minimize-space
/// `(f1, f2)`, sorted with `f1` strictly decreasing and `f2` strictly
/// increasing. `ray`, when present, is an unbounded efficient direction.
#[derive(Debug, Clone)]
pub struct ParetoFrontier {
    pub vertices: Vec<(f64, f64)>,
    pub points: Vec<Vec<f64>>,
    pub ray: Option<(f64, f64)>,
}

const CHORD_TOL: f64 = 1e-9;

/// Dichotomic scheme: solve the two lexicographic extremes, then recursively
/// solve the weighted sum normal to each chord; a chord is a facet when the
/// probe improves on it by less than 1e-9.
pub fn solve_biobjective(blp: &BiObjectiveLp) -> Result<ParetoFrontier, LpError> {
    // lexicographic extreme in f2, then f1
    let lex = |primary: (&[f64], f64), secondary: (&[f64], f64)| -> Result<Option<Vec<f64>>, LpError> {
        let mut lp = blp.base.clone();
        lp.set_objective(primary.0)?;
        lp.set_offset(primary.1);
        let s1 = solve_lp(&lp)?;
        match s1.status {
            LpStatus::Infeasible => Err(LpError::NumericBreakdown("biobjective base infeasible")),
            LpStatus::Unbounded => Ok(None),
            LpStatus::Optimal => {
                let mut lp2 = blp.base.clone();
                lp2.set_objective(secondary.0)?;
                lp2.set_offset(secondary.1);
                let cap = s1.value - primary.1; // row works on coefficients only
                lp2.add_row(primary.0, Relation::Le, cap + 1e-9 * (1.0 + cap.abs()))?;
                let s2 = solve_lp(&lp2)?;
                match s2.status {
                    LpStatus::Optimal => Ok(Some(s2.point)),
                    _ => Err(LpError::NumericBreakdown("lexicographic refinement failed")),
                }
            }
        }
    };

    let o1 = (blp.objective1.as_slice(), blp.offset1);
    let o2 = (blp.objective2.as_slice(), blp.offset2);
    let point_a = lex(o1, o2)?; // best f1
    let point_b = lex(o2, o1)?; // best f2

    let mut ray: Option<(f64, f64)> = None;
    let mut verts: Vec<(Vec<f64>, (f64, f64))> = Vec::new();

    match (point_a, point_b) {
        (Some(a), Some(b)) => {
            let fa = blp.eval(&a);
            let fb = blp.eval(&b);
            verts.push((a.clone(), fa));
            if (fa.0 - fb.0).abs() > CHORD_TOL || (fa.1 - fb.1).abs() > CHORD_TOL {
                verts.push((b.clone(), fb));
                dichotomic(blp, fa, fb, &mut verts, &mut ray, 0)?;
            }
        }
        (None, Some(b)) => {
            // f1 unbounded: efficient ray on the f1 side
            let fb = blp.eval(&b);
            verts.push((b.clone(), fb));
            let dir = recession_direction(blp)?;
            expand_toward_ray(blp, fb, dir, &mut verts, &mut ray)?;
            ray = ray.or(Some(dir));
        }
        (Some(a), None) => {
            // f2 unbounded below: every efficient point has arbitrarily small
            // f2; treat symmetrically
            let fa = blp.eval(&a);
            verts.push((a.clone(), fa));
            let dir = recession_direction_f2(blp)?;
            ray = Some(dir);
        }
        (None, None) => return Err(LpError::DegenerateFrontier),
    }

    // sort by f2 ascending, dedup
    verts.sort_by(|x, y| x.1 .1.partial_cmp(&y.1 .1).unwrap());
    let mut vertices: Vec<(f64, f64)> = Vec::new();
    let mut points: Vec<Vec<f64>> = Vec::new();
    for (p, f) in verts {
        if let Some(&last) = vertices.last() {
            let close = (last.0 - f.0).abs() <= CHORD_TOL * (1.0 + f.0.abs())
                && (last.1 - f.1).abs() <= CHORD_TOL * (1.0 + f.1.abs());
            if close {
                continue;
            }
            // drop dominated duplicates arising from tolerance noise
            if f.0 >= last.0 - CHORD_TOL && f.1 >= last.1 - CHORD_TOL {
                continue;
            }
        }
        vertices.push(f);
        points.push(p);
    }
    Ok(ParetoFrontier {
        vertices,
        points,
        ray,
    })
}

fn dichotomic(
    blp: &BiObjectiveLp,
    fa: (f64, f64),
    fb: (f64, f64),
    verts: &mut Vec<(Vec<f64>, (f64, f64))>,
    ray: &mut Option<(f64, f64)>,
    depth: usize,
) -> Result<(), LpError> {
    if depth > 64 {
        return Ok(());
    }
    // chord normal, positive in both components
    let w1 = fa.1 - fb.1;
    let w2 = fb.0 - fa.0;
    if w1 <= CHORD_TOL || w2 <= CHORD_TOL {
        return Ok(());
    }
    let scale = w1.max(w2);
    let (w1, w2) = (w1 / scale, w2 / scale);
    let lp = blp.weighted(w1, w2);
    let sol = solve_lp(&lp)?;
    match sol.status {
        LpStatus::Infeasible => Err(LpError::NumericBreakdown("scalarization infeasible")),
        LpStatus::Unbounded => {
            if ray.is_none() {
                if let Some(z) = &sol.ray {
                    let d1: f64 = blp.objective1.iter().zip(z).map(|(c, v)| c * v).sum();
                    let d2: f64 = blp.objective2.iter().zip(z).map(|(c, v)| c * v).sum();
                    *ray = Some((d1, d2));
                }
            }
            Ok(())
        }
        LpStatus::Optimal => {
            let chord = w1 * fa.0 + w2 * fa.1;
            if sol.value < chord - CHORD_TOL * (1.0 + chord.abs()) {
                let fc = blp.eval(&sol.point);
                verts.push((sol.point.clone(), fc));
                dichotomic(blp, fa, fc, verts, ray, depth + 1)?;
                dichotomic(blp, fc, fb, verts, ray, depth + 1)?;
            }
            Ok(())
        }
    }
}

/// Efficient recession direction when `min f1` is unbounded: minimize the
/// f2-rate along feasible rays that improve f1 at unit rate.
fn recession_direction(blp: &BiObjectiveLp) -> Result<(f64, f64), LpError> {
    let lp = homogenized(&blp.base, &blp.objective1, -1.0);
    let mut lp2 = lp;
    lp2.set_objective(&blp.objective2)?;
    let sol = solve_lp(&lp2)?;
    match sol.status {
        LpStatus::Optimal => {
            let d1: f64 = blp.objective1.iter().zip(&sol.point).map(|(c, v)| c * v).sum();
            let d2: f64 = blp.objective2.iter().zip(&sol.point).map(|(c, v)| c * v).sum();
            Ok((d1, d2))
        }
        _ => Err(LpError::NumericBreakdown("recession direction solve failed")),
    }
}

fn recession_direction_f2(blp: &BiObjectiveLp) -> Result<(f64, f64), LpError> {
    let lp = homogenized(&blp.base, &blp.objective2, -1.0);
    let mut lp2 = lp;
    lp2.set_objective(&blp.objective1)?;
    let sol = solve_lp(&lp2)?;
    match sol.status {
        LpStatus::Optimal => {
            let d1: f64 = blp.objective1.iter().zip(&sol.point).map(|(c, v)| c * v).sum();
            let d2: f64 = blp.objective2.iter().zip(&sol.point).map(|(c, v)| c * v).sum();
            Ok((d1, d2))
        }
        _ => Err(LpError::NumericBreakdown("recession direction solve failed")),
    }
}

/// Recession cone of a feasible set with one normalization row `nrm'z = rhs`.
fn homogenized(base: &LinearProgram, normal: &[f64], rhs: f64) -> LinearProgram {
    let n = base.n_vars();
    let mut lp = LinearProgram::new(n);
    for j in 0..n {
        let (l, u) = base.bounds(j);
        if l.is_finite() && u.is_finite() {
            lp.set_bounds(j, 0.0, 0.0).unwrap();
        } else if l.is_finite() {
            lp.set_bounds(j, 0.0, f64::INFINITY).unwrap();
        } else if u.is_finite() {
            lp.set_bounds(j, f64::NEG_INFINITY, 0.0).unwrap();
        } else {
            lp.set_free(j);
        }
    }
    for row in &base.rows {
        let entries: Vec<(usize, f64)> = row.entries.iter().map(|&(j, c)| (j as usize, c)).collect();
        lp.add_row_sparse(&entries, row.relation, 0.0).unwrap();
    }
    lp.add_row(normal, Relation::Eq, rhs).unwrap();
    lp
}

/// Grow the vertex list from the bounded end toward an unbounded efficient
/// ray, chording against the ray direction.
fn expand_toward_ray(
    blp: &BiObjectiveLp,
    mut anchor: (f64, f64),
    dir: (f64, f64),
    verts: &mut Vec<(Vec<f64>, (f64, f64))>,
    ray: &mut Option<(f64, f64)>,
) -> Result<(), LpError> {
    // scalarization normal to the ray direction; dir.0 < 0 <= dir.1
    for _ in 0..64 {
        let w1 = dir.1.abs().max(CHORD_TOL);
        let w2 = dir.0.abs().max(CHORD_TOL);
        let scale = w1.max(w2);
        let lp = blp.weighted(w1 / scale, w2 / scale);
        let sol = solve_lp(&lp)?;
        match sol.status {
            LpStatus::Optimal => {
                let level = (w1 * anchor.0 + w2 * anchor.1) / scale;
                if sol.value < level - CHORD_TOL * (1.0 + level.abs()) {
                    let fc = blp.eval(&sol.point);
                    verts.push((sol.point.clone(), fc));
                    dichotomic(blp, fc, anchor, verts, ray, 0)?;
                    anchor = fc;
                } else {
                    break;
                }
            }
            _ => break,
        }
    }
    Ok(())
}
