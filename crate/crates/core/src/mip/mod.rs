//! Embedded LP/MILP solver.
//!
//! [`MipModel`] is a minimize-only linear model: variables with finite or
//! infinite bounds, sparse constraint rows, an optional objective constant,
//! and binary variables restricted to bounds inside [0, 1]. [`solve_lp`]
//! relaxes binaries to their boxes and runs a bounded-variable two-phase
//! tableau simplex ([`simplex`]); [`solve_milp`] wraps it in best-bound
//! branch-and-bound ([`branch`]).
//!
//! Convex quadratic costs enter the objective through [`linearize`] (uniform
//! chords between breakpoints, an over-approximation with per-segment gap
//! c2 * width^2 / 4) and [`add_piecewise_objective`] (epigraph variable plus
//! one row per chord; no binaries needed because the curves are convex and
//! minimized).

mod branch;
mod simplex;

use crate::netcase::CostCurve;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MipError {
    #[error("variable index {0} out of range")]
    BadVar(usize),
    #[error("variable bounds [{lower}, {upper}] are inverted or not real")]
    BadBounds { lower: f64, upper: f64 },
    #[error("binary variable bounds [{lower}, {upper}] must sit inside [0, 1]")]
    BadBinaryBounds { lower: f64, upper: f64 },
    #[error("piecewise curve is invalid: {0}")]
    BadCurve(String),
    #[error("piecewise curve covers [{curve_lo}, {curve_hi}] but the variable spans [{var_lo}, {var_hi}]")]
    CurveCoverage { curve_lo: f64, curve_hi: f64, var_lo: f64, var_hi: f64 },
    #[error("nonconvex quadratic (c2 = {0}) cannot be under-approximated by chords")]
    NonConvex(f64),
    #[error("simplex iteration limit {0} exceeded")]
    IterationLimit(u64),
    #[error("branch-and-bound node limit {0} exceeded")]
    NodeLimit(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub kind: VarKind,
    pub obj: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub name: String,
    /// Sparse (variable, coefficient) terms; one entry per variable.
    pub terms: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MipModel {
    pub vars: Vec<Variable>,
    pub constraints: Vec<Constraint>,
    pub obj_constant: f64,
}

impl MipModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(
        &mut self,
        name: impl Into<String>,
        lower: f64,
        upper: f64,
        kind: VarKind,
    ) -> Result<usize, MipError> {
        if lower.is_nan() || upper.is_nan() || lower > upper {
            return Err(MipError::BadBounds { lower, upper });
        }
        if kind == VarKind::Binary
            && (!(0.0..=1.0).contains(&lower) || !(0.0..=1.0).contains(&upper))
        {
            return Err(MipError::BadBinaryBounds { lower, upper });
        }
        self.vars.push(Variable { name: name.into(), lower, upper, kind, obj: 0.0 });
        Ok(self.vars.len() - 1)
    }

    pub fn set_obj_coeff(&mut self, var: usize, c: f64) -> Result<(), MipError> {
        self.vars.get_mut(var).ok_or(MipError::BadVar(var))?.obj = c;
        Ok(())
    }

    pub fn add_obj_coeff(&mut self, var: usize, c: f64) -> Result<(), MipError> {
        self.vars.get_mut(var).ok_or(MipError::BadVar(var))?.obj += c;
        Ok(())
    }

    /// Adds a row; duplicate variable references are merged by summation.
    pub fn add_constraint(
        &mut self,
        name: impl Into<String>,
        terms: &[(usize, f64)],
        sense: Sense,
        rhs: f64,
    ) -> Result<usize, MipError> {
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(terms.len());
        for &(v, c) in terms {
            if v >= self.vars.len() {
                return Err(MipError::BadVar(v));
            }
            match merged.iter_mut().find(|(mv, _)| *mv == v) {
                Some((_, mc)) => *mc += c,
                None => merged.push((v, c)),
            }
        }
        self.constraints.push(Constraint { name: name.into(), terms: merged, sense, rhs });
        Ok(self.constraints.len() - 1)
    }

    pub fn n_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn n_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn binaries(&self) -> Vec<usize> {
        self.vars
            .iter()
            .enumerate()
            .filter(|(_, v)| v.kind == VarKind::Binary)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn row_activity(&self, row: usize, x: &[f64]) -> f64 {
        self.constraints[row].terms.iter().map(|&(v, c)| c * x[v]).sum()
    }

    /// Worst constraint or bound violation of `x` (0 when feasible).
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for (v, var) in self.vars.iter().enumerate() {
            worst = worst.max(var.lower - x[v]).max(x[v] - var.upper);
        }
        for (r, c) in self.constraints.iter().enumerate() {
            let a = self.row_activity(r, x);
            let gap = match c.sense {
                Sense::Le => a - c.rhs,
                Sense::Ge => c.rhs - a,
                Sense::Eq => (a - c.rhs).abs(),
            };
            worst = worst.max(gap);
        }
        worst
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.obj_constant + self.vars.iter().zip(x).map(|(v, xv)| v.obj * xv).sum::<f64>()
    }

    /// Writes the model in LP text format (CPLEX dialect) for inspection.
    pub fn write_lp<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        let clean = |s: &str| -> String {
            s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' }).collect()
        };
        writeln!(out, "Minimize")?;
        write!(out, " obj:")?;
        for (i, v) in self.vars.iter().enumerate() {
            if v.obj != 0.0 {
                write!(out, " {} {}", fmt_signed(v.obj), clean(&v.name))?;
                let _ = i;
            }
        }
        if self.obj_constant != 0.0 {
            write!(out, " {}", fmt_signed(self.obj_constant))?;
        }
        writeln!(out)?;
        writeln!(out, "Subject To")?;
        for (r, c) in self.constraints.iter().enumerate() {
            write!(out, " r{}_{}:", r, clean(&c.name))?;
            for &(v, coef) in &c.terms {
                write!(out, " {} {}", fmt_signed(coef), clean(&self.vars[v].name))?;
            }
            let op = match c.sense {
                Sense::Le => "<=",
                Sense::Ge => ">=",
                Sense::Eq => "=",
            };
            writeln!(out, " {} {}", op, c.rhs)?;
        }
        writeln!(out, "Bounds")?;
        for v in &self.vars {
            let name = clean(&v.name);
            match (v.lower.is_finite(), v.upper.is_finite()) {
                (true, true) => writeln!(out, " {} <= {} <= {}", v.lower, name, v.upper)?,
                (true, false) => writeln!(out, " {} >= {}", name, v.lower)?,
                (false, true) => writeln!(out, " {} <= {}", name, v.upper)?,
                (false, false) => writeln!(out, " {} free", name)?,
            }
        }
        let bins = self.binaries();
        if !bins.is_empty() {
            writeln!(out, "Binaries")?;
            write!(out, " ")?;
            for b in bins {
                write!(out, "{} ", clean(&self.vars[b].name))?;
            }
            writeln!(out)?;
        }
        writeln!(out, "End")
    }
}

fn fmt_signed(v: f64) -> String {
    if v < 0.0 {
        format!("- {}", -v)
    } else {
        format!("+ {v}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MipStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MipSolution {
    pub status: MipStatus,
    /// Model objective at `values` (meaningful for `Optimal`).
    pub objective: f64,
    pub values: Vec<f64>,
    /// Branch-and-bound nodes solved (0 for pure LP solves).
    pub node_count: u64,
    /// Simplex pivots across all LP solves.
    pub lp_iterations: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Absolute row/bound violation tolerance, scaled by rhs magnitude.
    pub feas_tol: f64,
    /// Reduced-cost optimality tolerance.
    pub opt_tol: f64,
    /// Simplex pivot cap across a single LP solve.
    pub max_iterations: u64,
    /// Pivots without objective progress before Bland's rule engages.
    pub stall_threshold: u64,
    /// Distance from an integer at which a binary counts as integral.
    pub int_tol: f64,
    pub gap_abs: f64,
    pub gap_rel: f64,
    pub max_nodes: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            feas_tol: 1e-7,
            opt_tol: 1e-9,
            max_iterations: 200_000,
            stall_threshold: 200,
            int_tol: 1e-6,
            gap_abs: 1e-6,
            gap_rel: 1e-6,
            max_nodes: 1_000_000,
        }
    }
}

/// Solves the LP relaxation (binaries as continuous within their boxes).
pub fn solve_lp(model: &MipModel, opts: &SolverOptions) -> Result<MipSolution, MipError> {
    let lower: Vec<f64> = model.vars.iter().map(|v| v.lower).collect();
    let upper: Vec<f64> = model.vars.iter().map(|v| v.upper).collect();
    let out = simplex::solve_with_bounds(model, &lower, &upper, opts)?;
    Ok(MipSolution {
        status: out.status,
        objective: out.objective,
        values: out.values,
        node_count: 0,
        lp_iterations: out.iterations,
    })
}

/// Solves the MILP by best-bound branch-and-bound on the binary variables.
pub fn solve_milp(model: &MipModel, opts: &SolverOptions) -> Result<MipSolution, MipError> {
    branch::solve(model, opts)
}

/// Piecewise-linear over-approximation of a convex function: breakpoints and
/// exact function values at them; chords connect consecutive points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseCurve {
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
}

impl PiecewiseCurve {
    pub fn n_segments(&self) -> usize {
        self.breakpoints.len().saturating_sub(1)
    }

    pub fn slope(&self, seg: usize) -> f64 {
        (self.values[seg + 1] - self.values[seg])
            / (self.breakpoints[seg + 1] - self.breakpoints[seg])
    }

    /// Upper envelope of all chords at `x` (what the epigraph variable takes).
    pub fn envelope(&self, x: f64) -> f64 {
        (0..self.n_segments())
            .map(|s| {
                let b = self.breakpoints[s];
                self.values[s] + self.slope(s) * (x - b)
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn check(&self) -> Result<(), MipError> {
        if self.breakpoints.len() < 2 || self.breakpoints.len() != self.values.len() {
            return Err(MipError::BadCurve(format!(
                "{} breakpoints vs {} values",
                self.breakpoints.len(),
                self.values.len()
            )));
        }
        for w in self.breakpoints.windows(2) {
            if !(w[1] > w[0]) {
                return Err(MipError::BadCurve(format!(
                    "breakpoints not strictly increasing at {} -> {}",
                    w[0], w[1]
                )));
            }
        }
        if self.breakpoints.iter().chain(&self.values).any(|v| !v.is_finite()) {
            return Err(MipError::BadCurve("non-finite entry".into()));
        }
        let scale = self.values.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        for s in 1..self.n_segments() {
            if self.slope(s) < self.slope(s - 1) - 1e-9 * scale {
                return Err(MipError::BadCurve(format!(
                    "slopes decrease at segment {s}: {} -> {}",
                    self.slope(s - 1),
                    self.slope(s)
                )));
            }
        }
        Ok(())
    }
}

/// Uniform-breakpoint chord approximation of `cost` over [`lo`, `hi`].
///
/// The chords over-approximate: the worst gap on a segment of width w is
/// c2 * w^2 / 4, attained at the segment midpoint, so doubling `segments`
/// quarters the error.
pub fn linearize(
    cost: &CostCurve,
    lo: f64,
    hi: f64,
    segments: usize,
) -> Result<PiecewiseCurve, MipError> {
    if cost.c2 < 0.0 {
        return Err(MipError::NonConvex(cost.c2));
    }
    if !(lo.is_finite() && hi.is_finite()) || lo > hi {
        return Err(MipError::BadCurve(format!("bad range [{lo}, {hi}]")));
    }
    if segments == 0 {
        return Err(MipError::BadCurve("zero segments".into()));
    }
    if hi - lo < 1e-12 {
        // Degenerate span: a flat two-point curve at the fixed value.
        return Ok(PiecewiseCurve {
            breakpoints: vec![lo, lo + 1.0],
            values: vec![cost.eval(lo); 2],
        });
    }
    let mut breakpoints = Vec::with_capacity(segments + 1);
    for i in 0..=segments {
        let x = if i == segments { hi } else { lo + (hi - lo) * i as f64 / segments as f64 };
        breakpoints.push(x);
    }
    let values = breakpoints.iter().map(|&x| cost.eval(x)).collect();
    let curve = PiecewiseCurve { breakpoints, values };
    curve.check()?;
    Ok(curve)
}

/// Adds epigraph variable `t >= chord_i(var)` for every chord of `curve` and
/// puts `t` in the objective with coefficient 1. Returns the index of `t`.
///
/// Valid only for minimization of convex curves, which both the generator
/// cost and the reserve-variance term are; the solver then settles `t` on the
/// active chord with no integer machinery.
pub fn add_piecewise_objective(
    model: &mut MipModel,
    var: usize,
    curve: &PiecewiseCurve,
) -> Result<usize, MipError> {
    curve.check()?;
    let v = model.vars.get(var).ok_or(MipError::BadVar(var))?;
    let (var_lo, var_hi) = (v.lower, v.upper);
    let (curve_lo, curve_hi) = (curve.breakpoints[0], *curve.breakpoints.last().unwrap());
    // A fixed variable only needs coverage of its single point.
    let degenerate = var_hi - var_lo < 1e-12;
    if curve_lo > var_lo + 1e-9 || (!degenerate && curve_hi < var_hi - 1e-9) {
        return Err(MipError::CurveCoverage { curve_lo, curve_hi, var_lo, var_hi });
    }
    let t_lower = curve.values.iter().fold(f64::INFINITY, |a, &v| a.min(v));
    let base = model.vars[var].name.clone();
    let t = model.add_var(format!("{base}_pwl"), t_lower, f64::INFINITY, VarKind::Continuous)?;
    model.add_obj_coeff(t, 1.0)?;
    for s in 0..curve.n_segments() {
        let slope = curve.slope(s);
        let rhs = curve.values[s] - slope * curve.breakpoints[s];
        model.add_constraint(
            format!("{base}_pwl{s}"),
            &[(t, 1.0), (var, -slope)],
            Sense::Ge,
            rhs,
        )?;
    }
    Ok(t)
}
