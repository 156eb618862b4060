//! Bounded-variable two-phase dense-tableau simplex.
//!
//! Model variables are transformed to internal columns y >= 0 with optional
//! finite uppers: finite-lower variables are shifted, upper-bounded-only
//! variables are mirrored, free variables are split, and fixed variables
//! (lower == upper, the branch-and-bound case) become constants and never
//! reach the tableau. Rows become equalities with slacks; rows whose slack
//! cannot start basic get a phase-1 artificial.
//!
//! Pivoting uses Dantzig pricing with lowest-index tie breaks and switches to
//! Bland's rule after `stall_threshold` pivots without objective progress,
//! which restores the finite-termination guarantee under degeneracy; Dantzig
//! resumes once the objective moves again. Nonbasic variables sit at either
//! bound, and the ratio test covers basic-hits-lower, basic-hits-upper, and
//! the entering variable's own bound flip.
//!
//! The tableau is recomputed from the original columns (refactorized) if the
//! recovered point fails a feasibility audit at claimed optimality, bounding
//! accumulated pivot roundoff.

use super::{MipError, MipModel, MipStatus, Sense, SolverOptions};
use nalgebra::DMatrix;

/// Pivot eligibility floor: entries smaller than this never pivot.
const PIVOT_TOL: f64 = 1e-9;
/// Ratio-test tie window.
const RATIO_TIE: f64 = 1e-12;
/// Objective improvement below this (relative) counts as a stall.
const STALL_EPS: f64 = 1e-11;
const MAX_REFACTOR: u32 = 3;

pub(crate) struct LpOutcome {
    pub status: MipStatus,
    pub objective: f64,
    pub values: Vec<f64>,
    pub iterations: u64,
}

/// How a model variable maps back from internal columns.
#[derive(Clone, Copy)]
enum Recovery {
    Fixed(f64),
    /// x = lower + y[col]
    Shifted { col: usize, lower: f64 },
    /// x = upper - y[col]
    Mirrored { col: usize, upper: f64 },
    /// x = y[pos] - y[neg]
    Split { pos: usize, neg: usize },
}

#[derive(Clone, Copy, PartialEq)]
enum Position {
    Basic(usize),
    AtLower,
    AtUpper,
}

struct Canonical {
    /// Sparse original columns: per column, (row, coef) pairs.
    cols: Vec<Vec<(usize, f64)>>,
    /// Equality right-hand side after transforms and sign normalization.
    b: Vec<f64>,
    /// Per-column upper bound (every lower is 0).
    upper: Vec<f64>,
    /// Phase-2 cost per column.
    cost: Vec<f64>,
    recovery: Vec<Recovery>,
    artificials: Vec<usize>,
    /// Initial basis: one column per row.
    basis0: Vec<usize>,
}

fn canonicalize(model: &MipModel, lower: &[f64], upper: &[f64]) -> Canonical {
    let nv = model.vars.len();
    let mut recovery = Vec::with_capacity(nv);
    let mut col_upper: Vec<f64> = Vec::new();
    let mut cost: Vec<f64> = Vec::new();

    for v in 0..nv {
        let (lo, hi) = (lower[v], upper[v]);
        let c = model.vars[v].obj;
        if lo == hi {
            recovery.push(Recovery::Fixed(lo));
        } else if lo.is_finite() {
            let col = col_upper.len();
            col_upper.push(if hi.is_finite() { hi - lo } else { f64::INFINITY });
            cost.push(c);
            recovery.push(Recovery::Shifted { col, lower: lo });
        } else if hi.is_finite() {
            let col = col_upper.len();
            col_upper.push(f64::INFINITY);
            cost.push(-c);
            recovery.push(Recovery::Mirrored { col, upper: hi });
        } else {
            let pos = col_upper.len();
            col_upper.extend([f64::INFINITY, f64::INFINITY]);
            cost.extend([c, -c]);
            recovery.push(Recovery::Split { pos, neg: pos + 1 });
        }
    }

    // Rows: substitute the transforms, fold Ge into Le, attach slacks,
    // normalize rhs signs, then pick the initial basis.
    let m = model.constraints.len();
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(m);
    let mut b = Vec::with_capacity(m);
    let mut slack_of_row: Vec<Option<usize>> = vec![None; m];

    for con in &model.constraints {
        let sign = if con.sense == Sense::Ge { -1.0 } else { 1.0 };
        let mut rhs = sign * con.rhs;
        let mut terms: Vec<(usize, f64)> = Vec::with_capacity(con.terms.len());
        for &(v, coef) in &con.terms {
            let coef = sign * coef;
            match recovery[v] {
                Recovery::Fixed(val) => rhs -= coef * val,
                Recovery::Shifted { col, lower } => {
                    rhs -= coef * lower;
                    terms.push((col, coef));
                }
                Recovery::Mirrored { col, upper } => {
                    rhs -= coef * upper;
                    terms.push((col, -coef));
                }
                Recovery::Split { pos, neg } => {
                    terms.push((pos, coef));
                    terms.push((neg, -coef));
                }
            }
        }
        rows.push(terms);
        b.push(rhs);
    }

    for (r, con) in model.constraints.iter().enumerate() {
        if con.sense != Sense::Eq {
            let col = col_upper.len();
            col_upper.push(f64::INFINITY);
            cost.push(0.0);
            rows[r].push((col, 1.0));
            slack_of_row[r] = Some(col);
        }
    }
    // Normalize rhs >= 0. A negated inequality's slack flips to -1 and cannot
    // start basic, so that row gets an artificial, as does every equality.
    let mut artificials = Vec::new();
    let mut basis0 = Vec::with_capacity(m);
    for r in 0..m {
        if b[r] < 0.0 {
            b[r] = -b[r];
            for t in rows[r].iter_mut() {
                t.1 = -t.1;
            }
        }
        let slack_basic = slack_of_row[r]
            .map(|s| rows[r].iter().any(|&(c, coef)| c == s && coef == 1.0))
            .unwrap_or(false);
        if slack_basic {
            basis0.push(slack_of_row[r].unwrap());
        } else {
            let col = col_upper.len();
            col_upper.push(f64::INFINITY);
            cost.push(0.0);
            rows[r].push((col, 1.0));
            artificials.push(col);
            basis0.push(col);
        }
    }

    // Column-major copy for tableau assembly and refactorization.
    let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); col_upper.len()];
    for (r, row) in rows.iter().enumerate() {
        for &(c, coef) in row {
            if coef != 0.0 {
                cols[c].push((r, coef));
            }
        }
    }

    Canonical { cols, b, upper: col_upper, cost, recovery, artificials, basis0 }
}

struct Tableau<'a> {
    canon: &'a Canonical,
    m: usize,
    n: usize,
    /// Row-major m x n working matrix, B^-1 A for the current basis.
    t: Vec<f64>,
    /// Current value of the basic variable in each row.
    value: Vec<f64>,
    basis: Vec<usize>,
    position: Vec<Position>,
    /// Working upper bounds; artificials are pinned to 0 after phase 1.
    upper: Vec<f64>,
    /// Reduced costs for the active phase.
    d: Vec<f64>,
    /// Active-phase objective at the current point (stall detection only).
    obj: f64,
    phase_cost: Vec<f64>,
    iterations: u64,
    stall: u64,
    bland: bool,
    /// Columns barred from entering (artificials in phase 2).
    barred: Vec<bool>,
}

enum RunEnd {
    Optimal,
    Unbounded,
    Cap,
}

enum StepResult {
    Optimal,
    Unbounded,
    Stepped,
}

impl<'a> Tableau<'a> {
    fn new(canon: &'a Canonical) -> Self {
        let m = canon.b.len();
        let n = canon.upper.len();
        let mut t = Tableau {
            canon,
            m,
            n,
            t: vec![0.0; m * n],
            value: canon.b.clone(),
            basis: canon.basis0.clone(),
            position: vec![Position::AtLower; n],
            upper: canon.upper.clone(),
            d: vec![0.0; n],
            obj: 0.0,
            phase_cost: vec![0.0; n],
            iterations: 0,
            stall: 0,
            bland: false,
            barred: vec![false; n],
        };
        for (c, col) in canon.cols.iter().enumerate() {
            for &(r, coef) in col {
                t.t[r * n + c] = coef;
            }
        }
        for (r, &bcol) in t.basis.iter().enumerate() {
            t.position[bcol] = Position::Basic(r);
        }
        t
    }

    /// Installs `cost` as the active objective and recomputes reduced costs
    /// and the phase objective from the current tableau.
    fn load_costs(&mut self, cost: &[f64]) {
        self.phase_cost.copy_from_slice(cost);
        self.d.copy_from_slice(cost);
        for r in 0..self.m {
            let cb = cost[self.basis[r]];
            if cb != 0.0 {
                let row = &self.t[r * self.n..(r + 1) * self.n];
                for (dj, tj) in self.d.iter_mut().zip(row) {
                    *dj -= cb * tj;
                }
            }
        }
        self.obj = self.point_cost();
        self.stall = 0;
        self.bland = false;
    }

    /// Active-phase objective at the current point, from scratch.
    fn point_cost(&self) -> f64 {
        let mut obj = 0.0;
        for r in 0..self.m {
            obj += self.phase_cost[self.basis[r]] * self.value[r];
        }
        for c in 0..self.n {
            if self.position[c] == Position::AtUpper {
                obj += self.phase_cost[c] * self.upper[c];
            }
        }
        obj
    }

    fn col_value(&self, c: usize) -> f64 {
        match self.position[c] {
            Position::Basic(r) => self.value[r],
            Position::AtLower => 0.0,
            Position::AtUpper => self.upper[c],
        }
    }

    /// Chooses the entering column and its movement direction, or None at
    /// phase optimality. Dantzig: best effective reduced cost, lowest index
    /// on ties. Bland: lowest eligible index.
    fn pick_entering(&self, opt_tol: f64) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64, f64)> = None;
        for c in 0..self.n {
            if self.barred[c] {
                continue;
            }
            let (dir, score) = match self.position[c] {
                Position::Basic(_) => continue,
                Position::AtLower => (1.0, -self.d[c]),
                Position::AtUpper => (-1.0, self.d[c]),
            };
            if score <= opt_tol {
                continue;
            }
            if self.bland {
                return Some((c, dir));
            }
            match best {
                Some((_, _, s)) if s >= score => {}
                _ => best = Some((c, dir, score)),
            }
        }
        best.map(|(c, dir, _)| (c, dir))
    }

    /// One simplex step: a pivot or a bound flip.
    fn step(&mut self, opt_tol: f64) -> StepResult {
        let Some((j, dir)) = self.pick_entering(opt_tol) else {
            return StepResult::Optimal;
        };
        // Ratio test; t_best starts at the entering variable's own span.
        let t_own = self.upper[j];
        let mut t_best = t_own;
        let mut leave: Option<(usize, bool)> = None; // (row, leaves at upper)
        let mut leave_piv = 0.0f64;
        for r in 0..self.m {
            let a = self.t[r * self.n + j];
            if a.abs() <= PIVOT_TOL {
                continue;
            }
            // Basic-variable velocity as the entering variable moves by +t
            // along `dir`.
            let delta = -dir * a;
            let (ratio, at_upper) = if delta < 0.0 {
                ((self.value[r] / -delta).max(0.0), false)
            } else {
                let ub = self.upper[self.basis[r]];
                if !ub.is_finite() {
                    continue;
                }
                (((ub - self.value[r]) / delta).max(0.0), true)
            };
            let better = match leave {
                None => ratio < t_best - RATIO_TIE || t_best.is_infinite(),
                Some((lr, _)) => {
                    ratio < t_best - RATIO_TIE
                        || (ratio <= t_best + RATIO_TIE
                            && if self.bland {
                                self.basis[r] < self.basis[lr]
                            } else {
                                a.abs() > leave_piv.abs()
                            })
                }
            };
            if better {
                t_best = ratio.min(t_best);
                leave = Some((r, at_upper));
                leave_piv = a;
            }
        }

        let Some((r, leaves_at_upper)) = leave else {
            if !t_own.is_finite() {
                return StepResult::Unbounded;
            }
            // Bound flip: j crosses its whole span, basis unchanged.
            let span = t_own;
            for i in 0..self.m {
                let a = self.t[i * self.n + j];
                if a != 0.0 {
                    self.value[i] -= dir * span * a;
                }
            }
            self.position[j] = if dir > 0.0 { Position::AtUpper } else { Position::AtLower };
            let improve = -(self.d[j] * dir * span);
            self.obj -= improve;
            self.note_progress(improve);
            self.iterations += 1;
            return StepResult::Stepped;
        };

        let t_step = t_best;
        for i in 0..self.m {
            if i != r {
                let a = self.t[i * self.n + j];
                if a != 0.0 {
                    self.value[i] -= dir * t_step * a;
                }
            }
        }
        let entering_value = if dir > 0.0 { t_step } else { self.upper[j] - t_step };
        let old_basic = self.basis[r];
        self.position[old_basic] =
            if leaves_at_upper { Position::AtUpper } else { Position::AtLower };
        self.basis[r] = j;
        self.position[j] = Position::Basic(r);
        self.value[r] = entering_value;
        let drop = self.d[j];
        self.pivot_rows(r, j);
        let improve = -(drop * dir * t_step);
        self.obj -= improve;
        self.note_progress(improve);
        self.iterations += 1;
        StepResult::Stepped
    }

    /// Gauss-Jordan elimination on column `j` about row `r`, applied to the
    /// working matrix and the reduced-cost row.
    fn pivot_rows(&mut self, r: usize, j: usize) {
        let n = self.n;
        let (head, tail) = self.t.split_at_mut(r * n);
        let (prow, rest) = tail.split_at_mut(n);
        let inv = 1.0 / prow[j];
        for x in prow.iter_mut() {
            *x *= inv;
        }
        for chunk in head.chunks_exact_mut(n).chain(rest.chunks_exact_mut(n)) {
            let f = chunk[j];
            if f != 0.0 {
                for (x, p) in chunk.iter_mut().zip(prow.iter()) {
                    *x -= f * p;
                }
            }
        }
        let f = self.d[j];
        if f != 0.0 {
            for (x, p) in self.d.iter_mut().zip(prow.iter()) {
                *x -= f * p;
            }
        }
    }

    fn note_progress(&mut self, improve: f64) {
        if improve > STALL_EPS * (1.0 + self.obj.abs()) {
            self.stall = 0;
            self.bland = false;
        } else {
            self.stall += 1;
        }
    }

    /// Runs the active phase to optimality, unboundedness, or the pivot cap.
    fn run(&mut self, opts: &SolverOptions) -> RunEnd {
        loop {
            if self.iterations >= opts.max_iterations {
                return RunEnd::Cap;
            }
            if !self.bland && self.stall > opts.stall_threshold {
                self.bland = true;
            }
            match self.step(opts.opt_tol) {
                StepResult::Stepped => continue,
                StepResult::Optimal => return RunEnd::Optimal,
                StepResult::Unbounded => return RunEnd::Unbounded,
            }
        }
    }

    /// Rebuilds the working matrix, basic values, and reduced costs from the
    /// original columns for the current basis. False if the basis matrix is
    /// numerically singular, in which case the tableau is left untouched.
    fn refactorize(&mut self) -> bool {
        let m = self.m;
        if m == 0 {
            return true;
        }
        let mut bmat = DMatrix::<f64>::zeros(m, m);
        for (r_out, &bcol) in self.basis.iter().enumerate() {
            for &(r, coef) in &self.canon.cols[bcol] {
                bmat[(r, r_out)] = coef;
            }
        }
        let Some(inv) = bmat.lu().try_inverse() else {
            return false;
        };
        self.t.iter_mut().for_each(|x| *x = 0.0);
        for c in 0..self.n {
            for &(r, coef) in &self.canon.cols[c] {
                for i in 0..m {
                    let v = inv[(i, r)] * coef;
                    if v != 0.0 {
                        self.t[i * self.n + c] += v;
                    }
                }
            }
        }
        // Basic values: B^-1 (b - contributions of at-upper columns).
        let mut rhs = self.canon.b.clone();
        for c in 0..self.n {
            if self.position[c] == Position::AtUpper {
                let u = self.upper[c];
                if u != 0.0 {
                    for &(r, coef) in &self.canon.cols[c] {
                        rhs[r] -= coef * u;
                    }
                }
            }
        }
        for i in 0..m {
            let mut acc = 0.0;
            for r in 0..m {
                acc += inv[(i, r)] * rhs[r];
            }
            self.value[i] = acc;
        }
        let cost = self.phase_cost.clone();
        self.load_costs(&cost);
        true
    }

    /// Model-space point for the current tableau state.
    fn recover(&self, model: &MipModel) -> Vec<f64> {
        (0..model.vars.len())
            .map(|v| match self.canon.recovery[v] {
                Recovery::Fixed(val) => val,
                Recovery::Shifted { col, lower } => lower + self.col_value(col),
                Recovery::Mirrored { col, upper } => upper - self.col_value(col),
                Recovery::Split { pos, neg } => self.col_value(pos) - self.col_value(neg),
            })
            .collect()
    }
}

/// Solves the continuous relaxation of `model` under overriding bounds,
/// which branch-and-bound uses to fix or tighten binaries per node.
pub(crate) fn solve_with_bounds(
    model: &MipModel,
    lower: &[f64],
    upper: &[f64],
    opts: &SolverOptions,
) -> Result<LpOutcome, MipError> {
    for (&lo, &hi) in lower.iter().zip(upper) {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(MipError::BadBounds { lower: lo, upper: hi });
        }
    }
    let canon = canonicalize(model, lower, upper);
    let mut tab = Tableau::new(&canon);
    let b_inf = canon.b.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let feas = opts.feas_tol * (1.0 + b_inf);
    let capped = |tab: &Tableau| LpOutcome {
        status: MipStatus::IterationLimit,
        objective: f64::NAN,
        values: Vec::new(),
        iterations: tab.iterations,
    };

    // Phase 1: drive the artificials to zero.
    if !canon.artificials.is_empty() {
        let mut phase1 = vec![0.0; canon.upper.len()];
        for &a in &canon.artificials {
            phase1[a] = 1.0;
        }
        tab.load_costs(&phase1);
        match tab.run(opts) {
            RunEnd::Cap => return Ok(capped(&tab)),
            RunEnd::Unbounded => unreachable!("phase 1 objective is bounded below by 0"),
            RunEnd::Optimal => {}
        }
        if tab.point_cost() > feas {
            return Ok(LpOutcome {
                status: MipStatus::Infeasible,
                objective: f64::INFINITY,
                values: Vec::new(),
                iterations: tab.iterations,
            });
        }
        // Lock the artificials out of phase 2: barred from entering, bounds
        // pinned to 0, and basic ones pivoted out where the row allows it.
        for &a in &canon.artificials {
            tab.barred[a] = true;
            tab.upper[a] = 0.0;
        }
        for r in 0..tab.m {
            let bcol = tab.basis[r];
            if !canon.artificials.contains(&bcol) {
                continue;
            }
            let row = r * tab.n;
            let target = (0..tab.n).find(|&c| {
                !tab.barred[c]
                    && !matches!(tab.position[c], Position::Basic(_))
                    && tab.t[row + c].abs() > 1e-7
            });
            if let Some(j) = target {
                // The artificial sits at ~0, so this pivot is degenerate: the
                // point does not move and j becomes basic at its own value.
                let jval = tab.col_value(j);
                tab.pivot_rows(r, j);
                tab.position[bcol] = Position::AtLower;
                tab.basis[r] = j;
                tab.position[j] = Position::Basic(r);
                tab.value[r] = jval;
            }
            // Rows whose usable entries are all ~0 are redundant; their
            // artificial stays basic at 0, held there by the zeroed bounds.
        }
    }

    // Phase 2 on the real costs, with a feasibility audit at optimality and
    // up to MAX_REFACTOR rebuilds if roundoff crept in.
    tab.load_costs(&canon.cost);
    let mut refactors = 0;
    loop {
        match tab.run(opts) {
            RunEnd::Cap => return Ok(capped(&tab)),
            RunEnd::Unbounded => {
                return Ok(LpOutcome {
                    status: MipStatus::Unbounded,
                    objective: f64::NEG_INFINITY,
                    values: Vec::new(),
                    iterations: tab.iterations,
                });
            }
            RunEnd::Optimal => {
                let values = tab.recover(model);
                let viol = max_violation_with_bounds(model, lower, upper, &values);
                if viol <= feas || refactors >= MAX_REFACTOR || !tab.refactorize() {
                    return Ok(LpOutcome {
                        status: MipStatus::Optimal,
                        objective: model.objective_value(&values),
                        values,
                        iterations: tab.iterations,
                    });
                }
                refactors += 1;
            }
        }
    }
}

/// Worst bound or row violation of `x` under the overriding bounds.
fn max_violation_with_bounds(model: &MipModel, lower: &[f64], upper: &[f64], x: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for v in 0..x.len() {
        worst = worst.max(lower[v] - x[v]).max(x[v] - upper[v]);
    }
    for (r, c) in model.constraints.iter().enumerate() {
        let a = model.row_activity(r, x);
        let gap = match c.sense {
            Sense::Le => a - c.rhs,
            Sense::Ge => c.rhs - a,
            Sense::Eq => (a - c.rhs).abs(),
        };
        worst = worst.max(gap);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mip::VarKind;

    fn solve(model: &MipModel) -> LpOutcome {
        let lower: Vec<f64> = model.vars.iter().map(|v| v.lower).collect();
        let upper: Vec<f64> = model.vars.iter().map(|v| v.upper).collect();
        solve_with_bounds(model, &lower, &upper, &SolverOptions::default()).unwrap()
    }

    #[test]
    fn single_variable_sits_on_its_lower_bound() {
        let mut m = MipModel::new();
        let x = m.add_var("x", 3.0, f64::INFINITY, VarKind::Continuous).unwrap();
        m.set_obj_coeff(x, 1.0).unwrap();
        let out = solve(&m);
        assert_eq!(out.status, MipStatus::Optimal);
        assert!((out.objective - 3.0).abs() < 1e-9);
        assert!((out.values[x] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn facet_optimum_found() {
        // min x + y with x + y >= -1 on [-5, 5] boxes: every point of the
        // facet scores -1.
        let mut m = MipModel::new();
        let x = m.add_var("x", -5.0, 5.0, VarKind::Continuous).unwrap();
        let y = m.add_var("y", -5.0, 5.0, VarKind::Continuous).unwrap();
        m.set_obj_coeff(x, 1.0).unwrap();
        m.set_obj_coeff(y, 1.0).unwrap();
        m.add_constraint("facet", &[(x, 1.0), (y, 1.0)], Sense::Ge, -1.0).unwrap();
        let out = solve(&m);
        assert_eq!(out.status, MipStatus::Optimal);
        assert!((out.objective - (-1.0)).abs() < 1e-9, "objective {}", out.objective);
    }

    #[test]
    fn infeasible_box_detected() {
        let mut m = MipModel::new();
        let x = m.add_var("x", 0.0, 1.0, VarKind::Continuous).unwrap();
        m.add_constraint("too_high", &[(x, 1.0)], Sense::Ge, 2.0).unwrap();
        let out = solve(&m);
        assert_eq!(out.status, MipStatus::Infeasible);
    }

    #[test]
    fn unbounded_direction_detected() {
        let mut m = MipModel::new();
        let x = m.add_var("x", 0.0, f64::INFINITY, VarKind::Continuous).unwrap();
        m.set_obj_coeff(x, -1.0).unwrap();
        let out = solve(&m);
        assert_eq!(out.status, MipStatus::Unbounded);
    }

    #[test]
    fn free_variable_split_recovers_negative_optimum() {
        let mut m = MipModel::new();
        let x = m
            .add_var("x", f64::NEG_INFINITY, f64::INFINITY, VarKind::Continuous)
            .unwrap();
        m.set_obj_coeff(x, 1.0).unwrap();
        m.add_constraint("floor", &[(x, 1.0)], Sense::Ge, -7.5).unwrap();
        let out = solve(&m);
        assert_eq!(out.status, MipStatus::Optimal);
        assert!((out.values[x] - (-7.5)).abs() < 1e-9);
    }

    #[test]
    fn mirrored_variable_recovers() {
        let mut m = MipModel::new();
        let x = m.add_var("x", f64::NEG_INFINITY, 4.0, VarKind::Continuous).unwrap();
        m.set_obj_coeff(x, -1.0).unwrap();
        let out = solve(&m);
        assert_eq!(out.status, MipStatus::Optimal);
        assert!((out.values[x] - 4.0).abs() < 1e-9);
    }

    #[test]
    fn equality_row_with_negative_rhs() {
        // min 2x + y with x + y = -3 on [-10, 10] boxes: x parks on its lower
        // bound and y covers the balance.
        let mut m = MipModel::new();
        let x = m.add_var("x", -10.0, 10.0, VarKind::Continuous).unwrap();
        let y = m.add_var("y", -10.0, 10.0, VarKind::Continuous).unwrap();
        m.set_obj_coeff(x, 2.0).unwrap();
        m.set_obj_coeff(y, 1.0).unwrap();
        m.add_constraint("eq", &[(x, 1.0), (y, 1.0)], Sense::Eq, -3.0).unwrap();
        let out = solve(&m);
        assert_eq!(out.status, MipStatus::Optimal);
        assert!((out.values[x] - (-10.0)).abs() < 1e-8);
        assert!((out.values[y] - 7.0).abs() < 1e-8);
    }

    #[test]
    fn bound_flip_path_reaches_optimum() {
        // Maximizing a boxed variable whose rows never bind exercises the
        // bound-flip branch: no leaving row exists, the span is finite.
        let mut m = MipModel::new();
        let x = m.add_var("x", 0.0, 2.5, VarKind::Continuous).unwrap();
        m.set_obj_coeff(x, -1.0).unwrap();
        m.add_constraint("loose", &[(x, 1.0)], Sense::Le, 100.0).unwrap();
        let out = solve(&m);
        assert_eq!(out.status, MipStatus::Optimal);
        assert!((out.values[x] - 2.5).abs() < 1e-9);
        assert!((out.objective - (-2.5)).abs() < 1e-9);
    }

    #[test]
    fn fixed_variables_fold_into_rows_and_objective() {
        let mut m = MipModel::new();
        let x = m.add_var("x", 0.0, 10.0, VarKind::Continuous).unwrap();
        let z = m.add_var("z", 0.0, 1.0, VarKind::Binary).unwrap();
        m.set_obj_coeff(x, 1.0).unwrap();
        m.set_obj_coeff(z, 5.0).unwrap();
        // x >= 4 - 3z; with z fixed at 1 the floor drops to 1.
        m.add_constraint("floor", &[(x, 1.0), (z, 3.0)], Sense::Ge, 4.0).unwrap();
        let lower = [0.0, 1.0];
        let upper = [10.0, 1.0];
        let out = solve_with_bounds(&m, &lower, &upper, &SolverOptions::default()).unwrap();
        assert_eq!(out.status, MipStatus::Optimal);
        assert!((out.values[x] - 1.0).abs() < 1e-9);
        assert!((out.values[z] - 1.0).abs() < 1e-12);
        assert!((out.objective - 6.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_rows_do_not_cycle() {
        // Several identical binding rows create degenerate pivots; the Bland
        // fallback must still reach the optimum.
        let mut m = MipModel::new();
        let x = m.add_var("x", 0.0, f64::INFINITY, VarKind::Continuous).unwrap();
        let y = m.add_var("y", 0.0, f64::INFINITY, VarKind::Continuous).unwrap();
        m.set_obj_coeff(x, -2.0).unwrap();
        m.set_obj_coeff(y, -3.0).unwrap();
        for r in 0..6 {
            m.add_constraint(format!("cap{r}"), &[(x, 1.0), (y, 1.0)], Sense::Le, 4.0)
                .unwrap();
        }
        m.add_constraint("tilt", &[(x, 1.0), (y, 2.0)], Sense::Le, 6.0).unwrap();
        let out = solve(&m);
        assert_eq!(out.status, MipStatus::Optimal);
        assert!((out.objective - (-10.0)).abs() < 1e-8, "objective {}", out.objective);
        assert!((out.values[x] - 2.0).abs() < 1e-8);
        assert!((out.values[y] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn redundant_equalities_keep_artificial_pinned() {
        // Duplicate equality rows leave one artificial basic at zero; the
        // solve must still finish at the optimum with feasible values.
        let mut m = MipModel::new();
        let x = m.add_var("x", 0.0, 10.0, VarKind::Continuous).unwrap();
        let y = m.add_var("y", 0.0, 10.0, VarKind::Continuous).unwrap();
        m.set_obj_coeff(x, 1.0).unwrap();
        m.set_obj_coeff(y, 3.0).unwrap();
        m.add_constraint("sum", &[(x, 1.0), (y, 1.0)], Sense::Eq, 5.0).unwrap();
        m.add_constraint("sum_again", &[(x, 1.0), (y, 1.0)], Sense::Eq, 5.0).unwrap();
        let out = solve(&m);
        assert_eq!(out.status, MipStatus::Optimal);
        assert!((out.values[x] - 5.0).abs() < 1e-8);
        assert!(out.values[y].abs() < 1e-8);
        assert!((out.objective - 5.0).abs() < 1e-8);
    }

    #[test]
    fn iteration_cap_reports_limit_status() {
        let mut m = MipModel::new();
        let x = m.add_var("x", 0.0, 10.0, VarKind::Continuous).unwrap();
        let y = m.add_var("y", 0.0, 10.0, VarKind::Continuous).unwrap();
        m.set_obj_coeff(x, -1.0).unwrap();
        m.set_obj_coeff(y, -1.0).unwrap();
        m.add_constraint("cap", &[(x, 1.0), (y, 1.0)], Sense::Le, 5.0).unwrap();
        let opts = SolverOptions { max_iterations: 0, ..Default::default() };
        let out = solve_with_bounds(&m, &[0.0, 0.0], &[10.0, 10.0], &opts).unwrap();
        assert_eq!(out.status, MipStatus::IterationLimit);
    }
}
