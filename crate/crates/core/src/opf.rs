//! Dispatch models for the DC network under uncertainty.
//!
//! Three model families over generator setpoints `p` and balancing
//! participation factors `beta`, all sharing the same cost structure:
//!
//! * [`build_det`]: deterministic dispatch at mean demand and wind. Baseline
//!   cost reference and the source of the auto-selected monitored line set.
//! * [`build_saa`]: scenario model. Generator `g` moves to
//!   `p_g + beta_g * omega_s` in scenario `s`, monitored line flows must stay
//!   within rating in all but a budgeted number of scenarios (big-M indicator
//!   per scenario), and generator limits hold in every scenario with no
//!   exemption, so the balancing response is always deliverable.
//! * [`build_surrogate`]: same skeleton with the per-line flow rows replaced
//!   by trained half-space rules over the adjusted setpoints.
//!
//! Quadratic generation cost and the variance-weighted balancing cost enter
//! through convex piecewise chords, so every model is an LP once the
//! exemption indicators are fixed.

use serde::{Deserialize, Serialize};

use crate::learn::{Ensemble, LearnError, Plane};
use crate::mip::{
    add_piecewise_objective, linearize, solve_milp, MipError, MipModel, MipSolution, MipStatus,
    Sense, SolverOptions, VarKind,
};
use crate::netcase::{CostCurve, Network};
use crate::ptdf::{flows, Ptdf, PtdfError};
use crate::scenarios::{ScenarioError, ScenarioSet, UncertaintySpec};

/// Relative slack granted before a flow counts as a violation ex post.
const FLOW_TOL_REL: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum OpfError {
    #[error("network has no generators")]
    NoGenerators,
    #[error("scenario set is empty")]
    NoScenarios,
    #[error("violation fraction {0} outside [0, 1]")]
    BadAlpha(f64),
    #[error("big-M scale {0} must be positive")]
    BadScale(f64),
    #[error("monitored line {line}: {reason}")]
    BadMonitoredLine { line: usize, reason: String },
    #[error("deterministic presolve for line selection ended {0:?}")]
    Presolve(MipStatus),
    #[error("classifier expects {expected} features, network has {got} generators")]
    FeatureMismatch { expected: usize, got: usize },
    #[error("generator references unknown bus {bus}")]
    UnknownGenBus { bus: u32 },
    #[error("{what} has length {got}, expected {expected}")]
    BadLength { what: &'static str, expected: usize, got: usize },
    #[error(transparent)]
    Ptdf(#[from] PtdfError),
    #[error(transparent)]
    Mip(#[from] MipError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Learn(#[from] LearnError),
}

/// How per-scenario generator limits are written.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenLimitMode {
    /// Two rows per generator built from the extreme sampled imbalances.
    /// Exact for beta in [0, 1]: the adjusted setpoint is monotone in omega.
    #[default]
    Envelope,
    /// Two rows per generator per scenario. Same feasible set as
    /// [`GenLimitMode::Envelope`], kept as a cross-check.
    PerScenario,
}

/// How a trained ensemble is written into the surrogate model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedMode {
    /// Every plane must accept the adjusted setpoints in every non-exempt
    /// scenario: one row per scenario and plane.
    #[default]
    Conjunctive,
    /// One row per scenario from the weight-averaged plane.
    MeanAffine,
}

/// Which line limits the scenario model enforces.
#[derive(Debug, Clone, PartialEq)]
pub enum MonitorPolicy {
    /// Lines at or above `threshold` utilization in the deterministic
    /// dispatch at mean conditions; the single most loaded line if none
    /// reach it.
    Auto { threshold: f64 },
    /// Every in-service line with a finite rating.
    All,
    /// Explicit branch indices; deduplicated and sorted.
    Lines(Vec<usize>),
}

impl Default for MonitorPolicy {
    fn default() -> Self {
        MonitorPolicy::Auto { threshold: 0.7 }
    }
}

#[derive(Debug, Clone)]
pub struct SaaOptions {
    /// Fraction of scenarios the solver may exempt from line limits.
    pub alpha: f64,
    /// Chord count per piecewise cost curve.
    pub segments: usize,
    pub gen_limits: GenLimitMode,
    pub monitor: MonitorPolicy,
    /// Multiplier on the derived big-M constants. 1.0 is already valid;
    /// values below 1 can cut off legitimate dispatches.
    pub big_m_scale: f64,
    pub solver: SolverOptions,
}

impl Default for SaaOptions {
    fn default() -> Self {
        SaaOptions {
            alpha: 0.05,
            segments: 8,
            gen_limits: GenLimitMode::default(),
            monitor: MonitorPolicy::default(),
            big_m_scale: 1.0,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SurrogateOptions {
    /// Fraction of scenarios the solver may exempt from the learned rules.
    pub alpha: f64,
    pub segments: usize,
    pub gen_limits: GenLimitMode,
    pub embed: EmbedMode,
    /// Multiplier on the computed classifier big-M, for validity probes.
    pub big_m_scale: f64,
    pub solver: SolverOptions,
}

impl Default for SurrogateOptions {
    fn default() -> Self {
        SurrogateOptions {
            alpha: 0.05,
            segments: 8,
            gen_limits: GenLimitMode::default(),
            embed: EmbedMode::default(),
            big_m_scale: 1.0,
            solver: SolverOptions::default(),
        }
    }
}

/// A built model plus the bookkeeping needed to read solutions back.
#[derive(Debug, Clone)]
pub struct DispatchModel {
    pub model: MipModel,
    /// Variable index of `p_g` per generator.
    pub p: Vec<usize>,
    /// Variable index of `beta_g` per generator; empty in deterministic
    /// models.
    pub beta: Vec<usize>,
    /// Variable index of the exemption indicator per scenario; empty when
    /// the budget is zero or nothing needs exempting.
    pub z: Vec<usize>,
    pub n_scenarios: usize,
    /// floor(alpha * n_scenarios): scenarios the solver may exempt.
    pub budget: usize,
    /// Monitored branch indices. Empty for surrogate models.
    pub monitored: Vec<usize>,
    /// Big-M per monitored branch after scaling; for surrogate models a
    /// single entry covering the classifier rows.
    pub big_m: Vec<f64>,
    /// Aggregate imbalance variance behind the balancing cost term.
    pub var_omega: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchSolution {
    pub status: MipStatus,
    pub p: Vec<f64>,
    pub beta: Vec<f64>,
    /// Exemption indicator per scenario, all zeros when none were modeled.
    pub z: Vec<f64>,
    /// Exact quadratic cost of (p, beta), balancing term included.
    pub cost: f64,
    /// Piecewise model objective; over-approximates `cost` at the same
    /// point. NaN when the model did not solve to optimality.
    pub model_objective: f64,
    pub node_count: u64,
    pub lp_iterations: u64,
}

impl DispatchSolution {
    pub fn exempted(&self) -> usize {
        self.z.iter().filter(|&&v| v > 0.5).count()
    }
}

/// Ex-post scenario check of a fixed (p, beta) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub n_scenarios: usize,
    /// True where at least one checked line exceeded its rating.
    pub scenario_violated: Vec<bool>,
    pub n_violated: usize,
    pub empirical_rate: f64,
    /// Largest relative overload |flow| / limit - 1 seen anywhere; 0 when
    /// every checked flow stayed within rating.
    pub worst_overload: f64,
}

fn gen_bus_positions(net: &Network) -> Result<Vec<usize>, OpfError> {
    let index = net.bus_index();
    net.generators
        .iter()
        .map(|g| index.get(&g.bus).copied().ok_or(OpfError::UnknownGenBus { bus: g.bus }))
        .collect()
}

fn wind_mean_by_bus(net: &Network, spec: &UncertaintySpec) -> Vec<f64> {
    let index = net.bus_index();
    let mut w = vec![0.0; net.buses.len()];
    for (k, &bus) in spec.wind_buses.iter().enumerate() {
        if let Some(&i) = index.get(&bus) {
            w[i] += spec.mu_w[k];
        }
    }
    w
}

fn finite_live_lines(net: &Network) -> Vec<usize> {
    net.live_branches().filter(|&l| net.branches[l].limit_mw().is_finite()).collect()
}

fn check_lines(net: &Network, lines: &[usize]) -> Result<(), OpfError> {
    for &l in lines {
        if l >= net.branches.len() {
            return Err(OpfError::BadMonitoredLine { line: l, reason: "out of range".into() });
        }
        if !net.branches[l].status {
            return Err(OpfError::BadMonitoredLine { line: l, reason: "out of service".into() });
        }
        if !net.branches[l].limit_mw().is_finite() {
            return Err(OpfError::BadMonitoredLine { line: l, reason: "no finite rating".into() });
        }
    }
    Ok(())
}

/// Exact quadratic cost of a dispatch: generation cost at `p` plus the
/// variance-weighted balancing cost of `beta`. An empty `beta` means no
/// balancing duty.
pub fn dispatch_cost(net: &Network, var_omega: f64, p: &[f64], beta: &[f64]) -> f64 {
    let mut total = 0.0;
    for (g, gen) in net.generators.iter().enumerate() {
        total += gen.cost.eval(p[g]);
        if let Some(&b) = beta.get(g) {
            total += var_omega * gen.cost.c2 * b * b;
        }
    }
    total
}

struct BaseVars {
    p: Vec<usize>,
    beta: Vec<usize>,
}

/// Setpoint and participation variables with their piecewise costs, the
/// balance row, and (with `with_beta`) the full-coverage row sum(beta) = 1.
fn add_dispatch_core(
    model: &mut MipModel,
    net: &Network,
    spec: &UncertaintySpec,
    var_omega: f64,
    segments: usize,
    with_beta: bool,
) -> Result<BaseVars, OpfError> {
    let mut p = Vec::with_capacity(net.generators.len());
    for (g, gen) in net.generators.iter().enumerate() {
        let v = model.add_var(format!("p{g}"), gen.p_min, gen.p_max, VarKind::Continuous)?;
        let curve = linearize(&gen.cost, gen.p_min, gen.p_max, segments)?;
        add_piecewise_objective(model, v, &curve)?;
        p.push(v);
    }
    let mut beta = Vec::new();
    if with_beta {
        for (g, gen) in net.generators.iter().enumerate() {
            let v = model.add_var(format!("beta{g}"), 0.0, 1.0, VarKind::Continuous)?;
            let quad = var_omega * gen.cost.c2;
            if quad > 0.0 {
                let curve =
                    linearize(&CostCurve { c2: quad, c1: 0.0, c0: 0.0 }, 0.0, 1.0, segments)?;
                add_piecewise_objective(model, v, &curve)?;
            }
            beta.push(v);
        }
        let terms: Vec<(usize, f64)> = beta.iter().map(|&v| (v, 1.0)).collect();
        model.add_constraint("beta_sum", &terms, Sense::Eq, 1.0)?;
    }
    let terms: Vec<(usize, f64)> = p.iter().map(|&v| (v, 1.0)).collect();
    let rhs = net.total_demand() - spec.mu_w.iter().sum::<f64>();
    model.add_constraint("balance", &terms, Sense::Eq, rhs)?;
    Ok(BaseVars { p, beta })
}

fn add_gen_limits(
    model: &mut MipModel,
    net: &Network,
    vars: &BaseVars,
    scen: &ScenarioSet,
    mode: GenLimitMode,
) -> Result<(), OpfError> {
    match mode {
        GenLimitMode::Envelope => {
            let (lo, hi) = (scen.omega_min(), scen.omega_max());
            for (g, gen) in net.generators.iter().enumerate() {
                model.add_constraint(
                    format!("cap_hi_g{g}"),
                    &[(vars.p[g], 1.0), (vars.beta[g], hi)],
                    Sense::Le,
                    gen.p_max,
                )?;
                model.add_constraint(
                    format!("cap_lo_g{g}"),
                    &[(vars.p[g], 1.0), (vars.beta[g], lo)],
                    Sense::Ge,
                    gen.p_min,
                )?;
            }
        }
        GenLimitMode::PerScenario => {
            for (s, sc) in scen.scenarios.iter().enumerate() {
                for (g, gen) in net.generators.iter().enumerate() {
                    model.add_constraint(
                        format!("cap_hi_g{g}_s{s}"),
                        &[(vars.p[g], 1.0), (vars.beta[g], sc.omega)],
                        Sense::Le,
                        gen.p_max,
                    )?;
                    model.add_constraint(
                        format!("cap_lo_g{g}_s{s}"),
                        &[(vars.p[g], 1.0), (vars.beta[g], sc.omega)],
                        Sense::Ge,
                        gen.p_min,
                    )?;
                }
            }
        }
    }
    Ok(())
}

fn exemption_budget(alpha: f64, n: usize) -> Result<usize, OpfError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(OpfError::BadAlpha(alpha));
    }
    // The epsilon absorbs float slop in alpha * n, e.g. 6 * (1/3).
    Ok(((alpha * n as f64 + 1e-9).floor() as usize).min(n))
}

fn add_exemptions(model: &mut MipModel, n: usize, budget: usize) -> Result<Vec<usize>, OpfError> {
    if budget == 0 {
        return Ok(Vec::new());
    }
    let mut z = Vec::with_capacity(n);
    for s in 0..n {
        z.push(model.add_var(format!("z{s}"), 0.0, 1.0, VarKind::Binary)?);
    }
    let terms: Vec<(usize, f64)> = z.iter().map(|&v| (v, 1.0)).collect();
    model.add_constraint("exempt_budget", &terms, Sense::Le, budget as f64)?;
    Ok(z)
}

/// Big-M for one monitored line: the worst |flow| any in-bounds dispatch and
/// any sampled scenario can put on it, plus the rating. Generator terms use
/// max(|p_min|, |p_max|) per bus, which covers the adjusted setpoint because
/// the per-scenario generator limits are never exempted.
pub fn compute_big_m(
    net: &Network,
    ptdf: &Ptdf,
    scen: &ScenarioSet,
    line: usize,
) -> Result<f64, OpfError> {
    check_lines(net, &[line])?;
    let gen_pos = gen_bus_positions(net)?;
    let nb = net.buses.len();
    let mut cap = vec![0.0; nb];
    for (g, gen) in net.generators.iter().enumerate() {
        cap[gen_pos[g]] += gen.p_min.abs().max(gen.p_max.abs());
    }
    let mut dev = vec![0.0f64; nb];
    for sc in &scen.scenarios {
        for n in 0..nb {
            dev[n] = dev[n].max((sc.wind[n] - sc.demand[n]).abs());
        }
    }
    let row = ptdf.row(line);
    let mut m = net.branches[line].limit_mw();
    for n in 0..nb {
        m += row[n].abs() * (cap[n] + dev[n]);
    }
    Ok(m)
}

/// Big-M for the classifier rows: a bound on |w . x + b| over every plane
/// and every in-bounds adjusted setpoint vector, plus one.
pub fn svm_big_m(net: &Network, ensemble: &Ensemble) -> f64 {
    let caps: Vec<f64> =
        net.generators.iter().map(|g| g.p_min.abs().max(g.p_max.abs())).collect();
    let mut worst: f64 = 0.0;
    for plane in &ensemble.planes {
        let mut v = plane.b.abs();
        for (g, &wg) in plane.w.iter().enumerate() {
            v += wg.abs() * caps[g];
        }
        worst = worst.max(v);
    }
    worst + 1.0
}

/// Deterministic dispatch at mean demand and wind: piecewise costs, the
/// balance row, and both flow bounds on every in-service line with a finite
/// rating.
pub fn build_det(
    net: &Network,
    ptdf: &Ptdf,
    spec: &UncertaintySpec,
    segments: usize,
) -> Result<DispatchModel, OpfError> {
    if net.generators.is_empty() {
        return Err(OpfError::NoGenerators);
    }
    spec.check(net)?;
    let mut model = MipModel::new();
    let vars = add_dispatch_core(&mut model, net, spec, 0.0, segments, false)?;
    let gen_pos = gen_bus_positions(net)?;
    let wind = wind_mean_by_bus(net, spec);
    let lines = finite_live_lines(net);
    for &l in &lines {
        let row = ptdf.row(l);
        let limit = net.branches[l].limit_mw();
        let mut k = 0.0;
        for (n, bus) in net.buses.iter().enumerate() {
            k += row[n] * (wind[n] - bus.pd_mean);
        }
        let mut terms: Vec<(usize, f64)> = Vec::with_capacity(net.generators.len());
        for (g, &pos) in gen_pos.iter().enumerate() {
            let a = row[pos];
            if a != 0.0 {
                terms.push((vars.p[g], a));
            }
        }
        model.add_constraint(format!("flow_hi_l{l}"), &terms, Sense::Le, limit - k)?;
        model.add_constraint(format!("flow_lo_l{l}"), &terms, Sense::Ge, -limit - k)?;
    }
    Ok(DispatchModel {
        model,
        p: vars.p,
        beta: Vec::new(),
        z: Vec::new(),
        n_scenarios: 0,
        budget: 0,
        monitored: lines,
        big_m: Vec::new(),
        var_omega: spec.var_omega(),
    })
}

/// Resolves a [`MonitorPolicy`] to concrete branch indices, solving the
/// deterministic model when the policy asks for utilization-based selection.
pub fn monitored_lines(
    net: &Network,
    ptdf: &Ptdf,
    spec: &UncertaintySpec,
    policy: &MonitorPolicy,
    segments: usize,
    solver: &SolverOptions,
) -> Result<Vec<usize>, OpfError> {
    let finite = finite_live_lines(net);
    match policy {
        MonitorPolicy::All => Ok(finite),
        MonitorPolicy::Lines(ls) => {
            check_lines(net, ls)?;
            let mut out = ls.clone();
            out.sort_unstable();
            out.dedup();
            Ok(out)
        }
        MonitorPolicy::Auto { threshold } => {
            if finite.is_empty() {
                return Ok(Vec::new());
            }
            let (_, sol) = solve_det(net, ptdf, spec, segments, solver)?;
            if sol.status != MipStatus::Optimal {
                return Err(OpfError::Presolve(sol.status));
            }
            let f = nominal_flows(net, ptdf, spec, &sol.p)?;
            let picked: Vec<usize> = finite
                .iter()
                .copied()
                .filter(|&l| f[l].abs() >= threshold * net.branches[l].limit_mw())
                .collect();
            if !picked.is_empty() {
                return Ok(picked);
            }
            // Nothing crosses the threshold: keep the most loaded line so
            // the scenario model still watches the likeliest bottleneck.
            let mut best = finite[0];
            let mut best_u = f64::NEG_INFINITY;
            for &l in &finite {
                let u = f[l].abs() / net.branches[l].limit_mw();
                if u > best_u {
                    best = l;
                    best_u = u;
                }
            }
            Ok(vec![best])
        }
    }
}

fn nominal_flows(
    net: &Network,
    ptdf: &Ptdf,
    spec: &UncertaintySpec,
    p: &[f64],
) -> Result<Vec<f64>, OpfError> {
    let gen_pos = gen_bus_positions(net)?;
    let wind = wind_mean_by_bus(net, spec);
    let mut inj: Vec<f64> =
        net.buses.iter().enumerate().map(|(n, bus)| wind[n] - bus.pd_mean).collect();
    for (g, &pos) in gen_pos.iter().enumerate() {
        inj[pos] += p[g];
    }
    Ok(flows(ptdf, &inj)?)
}

/// Scenario model with per-line flow rows and a violation budget.
pub fn build_saa(
    net: &Network,
    ptdf: &Ptdf,
    scen: &ScenarioSet,
    opts: &SaaOptions,
) -> Result<DispatchModel, OpfError> {
    if net.generators.is_empty() {
        return Err(OpfError::NoGenerators);
    }
    let n = scen.n();
    if n == 0 {
        return Err(OpfError::NoScenarios);
    }
    if !(opts.big_m_scale > 0.0) {
        return Err(OpfError::BadScale(opts.big_m_scale));
    }
    scen.spec.check(net)?;
    let monitored = monitored_lines(net, ptdf, &scen.spec, &opts.monitor, opts.segments, &opts.solver)?;
    let budget = if monitored.is_empty() { 0 } else { exemption_budget(opts.alpha, n)? };
    let var_omega = scen.spec.var_omega();

    let mut model = MipModel::new();
    let vars = add_dispatch_core(&mut model, net, &scen.spec, var_omega, opts.segments, true)?;
    add_gen_limits(&mut model, net, &vars, scen, opts.gen_limits)?;
    let z = add_exemptions(&mut model, n, budget)?;

    let gen_pos = gen_bus_positions(net)?;
    let mut big_m = Vec::with_capacity(monitored.len());
    for &l in &monitored {
        let m = compute_big_m(net, ptdf, scen, l)? * opts.big_m_scale;
        big_m.push(m);
        let row = ptdf.row(l);
        let limit = net.branches[l].limit_mw();
        for (s, sc) in scen.scenarios.iter().enumerate() {
            let mut k = 0.0;
            for n in 0..net.buses.len() {
                k += row[n] * (sc.wind[n] - sc.demand[n]);
            }
            let mut terms: Vec<(usize, f64)> = Vec::with_capacity(2 * gen_pos.len() + 1);
            for (g, &pos) in gen_pos.iter().enumerate() {
                let a = row[pos];
                if a != 0.0 {
                    terms.push((vars.p[g], a));
                    if sc.omega != 0.0 {
                        terms.push((vars.beta[g], a * sc.omega));
                    }
                }
            }
            let mut hi = terms.clone();
            if !z.is_empty() {
                hi.push((z[s], -m));
            }
            model.add_constraint(format!("flow_hi_l{l}_s{s}"), &hi, Sense::Le, limit - k)?;
            let mut lo = terms;
            if !z.is_empty() {
                lo.push((z[s], m));
            }
            model.add_constraint(format!("flow_lo_l{l}_s{s}"), &lo, Sense::Ge, -limit - k)?;
        }
    }
    Ok(DispatchModel {
        model,
        p: vars.p,
        beta: vars.beta,
        z,
        n_scenarios: n,
        budget,
        monitored,
        big_m,
        var_omega,
    })
}

/// Scenario model with the flow rows replaced by a trained ensemble over the
/// adjusted setpoints.
pub fn build_surrogate(
    net: &Network,
    ensemble: &Ensemble,
    scen: &ScenarioSet,
    opts: &SurrogateOptions,
) -> Result<DispatchModel, OpfError> {
    if net.generators.is_empty() {
        return Err(OpfError::NoGenerators);
    }
    let n = scen.n();
    if n == 0 {
        return Err(OpfError::NoScenarios);
    }
    ensemble.check()?;
    if ensemble.n_features() != net.generators.len() {
        return Err(OpfError::FeatureMismatch {
            expected: ensemble.n_features(),
            got: net.generators.len(),
        });
    }
    scen.spec.check(net)?;
    let budget = exemption_budget(opts.alpha, n)?;
    let var_omega = scen.spec.var_omega();

    let mut model = MipModel::new();
    let vars = add_dispatch_core(&mut model, net, &scen.spec, var_omega, opts.segments, true)?;
    add_gen_limits(&mut model, net, &vars, scen, opts.gen_limits)?;
    let z = add_exemptions(&mut model, n, budget)?;

    let m = svm_big_m(net, ensemble) * opts.big_m_scale;
    let mean;
    let planes: &[Plane] = match opts.embed {
        EmbedMode::Conjunctive => &ensemble.planes,
        EmbedMode::MeanAffine => {
            mean = [ensemble.mean_plane()];
            &mean
        }
    };
    for (s, sc) in scen.scenarios.iter().enumerate() {
        for (j, plane) in planes.iter().enumerate() {
            let mut terms: Vec<(usize, f64)> = Vec::with_capacity(2 * plane.w.len() + 1);
            for (g, &wg) in plane.w.iter().enumerate() {
                if wg != 0.0 {
                    terms.push((vars.p[g], wg));
                    if sc.omega != 0.0 {
                        terms.push((vars.beta[g], wg * sc.omega));
                    }
                }
            }
            if !z.is_empty() {
                terms.push((z[s], m));
            }
            model.add_constraint(format!("accept_s{s}_m{j}"), &terms, Sense::Ge, -plane.b)?;
        }
    }
    Ok(DispatchModel {
        model,
        p: vars.p,
        beta: vars.beta,
        z,
        n_scenarios: n,
        budget,
        monitored: Vec::new(),
        big_m: vec![m],
        var_omega,
    })
}

fn extract(net: &Network, dm: &DispatchModel, sol: &MipSolution) -> DispatchSolution {
    if sol.status != MipStatus::Optimal {
        return DispatchSolution {
            status: sol.status,
            p: Vec::new(),
            beta: Vec::new(),
            z: Vec::new(),
            cost: f64::NAN,
            model_objective: f64::NAN,
            node_count: sol.node_count,
            lp_iterations: sol.lp_iterations,
        };
    }
    let p: Vec<f64> = dm.p.iter().map(|&i| sol.values[i]).collect();
    let beta: Vec<f64> = dm.beta.iter().map(|&i| sol.values[i]).collect();
    let z: Vec<f64> = if dm.z.is_empty() {
        vec![0.0; dm.n_scenarios]
    } else {
        dm.z.iter().map(|&i| sol.values[i].round()).collect()
    };
    let cost = dispatch_cost(net, dm.var_omega, &p, &beta);
    DispatchSolution {
        status: sol.status,
        p,
        beta,
        z,
        cost,
        model_objective: sol.objective,
        node_count: sol.node_count,
        lp_iterations: sol.lp_iterations,
    }
}

/// Solves a built model and reads the dispatch back out.
pub fn solve_dispatch(
    net: &Network,
    dm: &DispatchModel,
    solver: &SolverOptions,
) -> Result<DispatchSolution, OpfError> {
    let sol = solve_milp(&dm.model, solver)?;
    Ok(extract(net, dm, &sol))
}

pub fn solve_det(
    net: &Network,
    ptdf: &Ptdf,
    spec: &UncertaintySpec,
    segments: usize,
    solver: &SolverOptions,
) -> Result<(DispatchModel, DispatchSolution), OpfError> {
    let dm = build_det(net, ptdf, spec, segments)?;
    let sol = solve_dispatch(net, &dm, solver)?;
    Ok((dm, sol))
}

pub fn solve_saa(
    net: &Network,
    ptdf: &Ptdf,
    scen: &ScenarioSet,
    opts: &SaaOptions,
) -> Result<(DispatchModel, DispatchSolution), OpfError> {
    let dm = build_saa(net, ptdf, scen, opts)?;
    let sol = solve_dispatch(net, &dm, &opts.solver)?;
    Ok((dm, sol))
}

pub fn solve_surrogate(
    net: &Network,
    ensemble: &Ensemble,
    scen: &ScenarioSet,
    opts: &SurrogateOptions,
) -> Result<(DispatchModel, DispatchSolution), OpfError> {
    let dm = build_surrogate(net, ensemble, scen, opts)?;
    let sol = solve_dispatch(net, &dm, &opts.solver)?;
    Ok((dm, sol))
}

/// Checks a fixed dispatch against every in-service line with a finite
/// rating, across all scenarios in `scen`.
pub fn expost_validate(
    net: &Network,
    ptdf: &Ptdf,
    scen: &ScenarioSet,
    p: &[f64],
    beta: &[f64],
) -> Result<ViolationReport, OpfError> {
    let lines = finite_live_lines(net);
    expost_validate_on(net, ptdf, scen, p, beta, &lines)
}

/// Like [`expost_validate`] but over an explicit line subset, e.g. the
/// monitored set of the model that produced the dispatch. An empty `beta`
/// leaves the imbalance to the slack bus, which is how a deterministic
/// dispatch behaves with no balancing scheme.
pub fn expost_validate_on(
    net: &Network,
    ptdf: &Ptdf,
    scen: &ScenarioSet,
    p: &[f64],
    beta: &[f64],
    lines: &[usize],
) -> Result<ViolationReport, OpfError> {
    let ng = net.generators.len();
    if p.len() != ng {
        return Err(OpfError::BadLength { what: "p", expected: ng, got: p.len() });
    }
    if !beta.is_empty() && beta.len() != ng {
        return Err(OpfError::BadLength { what: "beta", expected: ng, got: beta.len() });
    }
    check_lines(net, lines)?;
    let gen_pos = gen_bus_positions(net)?;
    let nb = net.buses.len();
    let mut scenario_violated = Vec::with_capacity(scen.n());
    let mut worst: f64 = 0.0;
    for sc in &scen.scenarios {
        let mut inj = vec![0.0; nb];
        for n in 0..nb {
            inj[n] = sc.wind[n] - sc.demand[n];
        }
        for (g, &pos) in gen_pos.iter().enumerate() {
            let duty = beta.get(g).map_or(0.0, |&b| b * sc.omega);
            inj[pos] += p[g] + duty;
        }
        let f = flows(ptdf, &inj)?;
        let mut hit = false;
        for &l in lines {
            let limit = net.branches[l].limit_mw();
            let ratio = f[l].abs() / limit;
            worst = worst.max(ratio - 1.0);
            if f[l].abs() > limit * (1.0 + FLOW_TOL_REL) + 1e-9 {
                hit = true;
            }
        }
        scenario_violated.push(hit);
    }
    let n_violated = scenario_violated.iter().filter(|&&v| v).count();
    let n = scen.n();
    Ok(ViolationReport {
        n_scenarios: n,
        scenario_violated,
        n_violated,
        empirical_rate: if n == 0 { 0.0 } else { n_violated as f64 / n as f64 },
        worst_overload: worst.max(0.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::{Ensemble, Plane, TrainingMeta, ENSEMBLE_VERSION};
    use crate::netcase::parse_case;
    use crate::ptdf::build_ptdf;
    use crate::scenarios::sample;
    use approx::assert_relative_eq;

    const CASE3: &str = include_str!("../cases/case3.m");

    fn case3() -> (Network, Ptdf) {
        let net = parse_case(CASE3).unwrap();
        let ptdf = build_ptdf(&net).unwrap();
        (net, ptdf)
    }

    fn fixed_spec(net: &Network, sigma_factor: f64, seed: u64) -> UncertaintySpec {
        UncertaintySpec::demand_only(net, sigma_factor, seed)
    }

    fn plain_ensemble(planes: Vec<Plane>) -> Ensemble {
        let weights = vec![1.0; planes.len()];
        Ensemble {
            version: ENSEMBLE_VERSION,
            feature_order: (0..planes[0].w.len()).map(|g| format!("p{g}")).collect(),
            planes,
            weights,
            training_meta: TrainingMeta {
                seed: 0,
                cost: 1.0,
                tol: 1e-4,
                max_epochs: 1,
                n_samples: 0,
            },
        }
    }

    #[test]
    fn deterministic_dispatch_matches_hand_solution() {
        // Cheap unit alone would put 50 MW on the 48 MW line 1-3, so the
        // dear unit must carry exactly 6 MW.
        let (net, ptdf) = case3();
        let spec = fixed_spec(&net, 0.0, 1);
        let (_, sol) = solve_det(&net, &ptdf, &spec, 8, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, MipStatus::Optimal);
        assert_relative_eq!(sol.p[0], 84.0, epsilon = 1e-6);
        assert_relative_eq!(sol.p[1], 6.0, epsilon = 1e-6);
        assert_relative_eq!(sol.cost, 2002.92, epsilon = 1e-6);
        // Chords over-approximate; the gap is bounded by the worst chord
        // sag of both curves combined.
        assert!(sol.model_objective >= sol.cost - 1e-9);
        assert!(sol.model_objective <= sol.cost + 3.1);
    }

    #[test]
    fn zero_alpha_builds_a_pure_lp_and_clears_every_scenario() {
        let (net, ptdf) = case3();
        let spec = fixed_spec(&net, 0.02, 5);
        let scen = sample(&spec, &net, 12, 0).unwrap();
        let opts = SaaOptions { alpha: 0.0, monitor: MonitorPolicy::All, ..Default::default() };
        let (dm, sol) = solve_saa(&net, &ptdf, &scen, &opts).unwrap();
        assert!(dm.z.is_empty());
        assert!(dm.model.binaries().is_empty());
        assert_eq!(dm.budget, 0);
        assert_eq!(sol.status, MipStatus::Optimal);
        assert_eq!(sol.z, vec![0.0; 12]);
        let report = expost_validate(&net, &ptdf, &scen, &sol.p, &sol.beta).unwrap();
        assert_eq!(report.n_violated, 0);
        assert_eq!(report.empirical_rate, 0.0);
    }

    #[test]
    fn exemption_budget_floors_the_scenario_count() {
        assert_eq!(exemption_budget(1.0 / 3.0, 6).unwrap(), 2);
        assert_eq!(exemption_budget(0.1, 9).unwrap(), 0);
        assert_eq!(exemption_budget(0.05, 100).unwrap(), 5);
        assert_eq!(exemption_budget(0.0, 50).unwrap(), 0);
        assert_eq!(exemption_budget(1.0, 4).unwrap(), 4);
        assert!(matches!(exemption_budget(-0.1, 5), Err(OpfError::BadAlpha(_))));
        assert!(matches!(exemption_budget(1.5, 5), Err(OpfError::BadAlpha(_))));
    }

    #[test]
    fn envelope_and_per_scenario_generator_limits_agree() {
        let (net, ptdf) = case3();
        let spec = fixed_spec(&net, 0.05, 3);
        let scen = sample(&spec, &net, 8, 0).unwrap();
        let base = SaaOptions { alpha: 0.25, monitor: MonitorPolicy::All, ..Default::default() };
        let env = SaaOptions { gen_limits: GenLimitMode::Envelope, ..base.clone() };
        let per = SaaOptions { gen_limits: GenLimitMode::PerScenario, ..base };
        let (_, a) = solve_saa(&net, &ptdf, &scen, &env).unwrap();
        let (_, b) = solve_saa(&net, &ptdf, &scen, &per).unwrap();
        assert_eq!(a.status, MipStatus::Optimal);
        assert_eq!(b.status, MipStatus::Optimal);
        assert_relative_eq!(a.model_objective, b.model_objective, epsilon = 1e-7);
    }

    #[test]
    fn big_m_formula_matches_hand_arithmetic() {
        // One degenerate scenario at the means: deviation term is just the
        // mean demand. Line 1-3 has |row| = [0, 1/3, 2/3], rating 48,
        // capacities 150 at bus 1 (row weight 0) and 80 at bus 2.
        let (net, ptdf) = case3();
        let spec = fixed_spec(&net, 0.0, 1);
        let scen = sample(&spec, &net, 1, 0).unwrap();
        let m = compute_big_m(&net, &ptdf, &scen, 1).unwrap();
        let expect = (80.0 + 30.0) / 3.0 + 60.0 * 2.0 / 3.0 + 48.0;
        assert_relative_eq!(m, expect, epsilon = 1e-9);
    }

    #[test]
    fn scaling_big_m_up_leaves_the_solution_alone() {
        let (net, ptdf) = case3();
        let spec = fixed_spec(&net, 0.08, 11);
        let scen = sample(&spec, &net, 8, 0).unwrap();
        let base = SaaOptions { alpha: 0.25, monitor: MonitorPolicy::All, ..Default::default() };
        let mut solutions = Vec::new();
        for scale in [1.0, 2.0, 10.0] {
            let opts = SaaOptions { big_m_scale: scale, ..base.clone() };
            let (_, sol) = solve_saa(&net, &ptdf, &scen, &opts).unwrap();
            assert_eq!(sol.status, MipStatus::Optimal);
            solutions.push(sol);
        }
        assert_relative_eq!(
            solutions[0].model_objective,
            solutions[1].model_objective,
            epsilon = 1e-7
        );
        assert_relative_eq!(
            solutions[0].model_objective,
            solutions[2].model_objective,
            epsilon = 1e-7
        );
        assert_eq!(solutions[0].exempted(), solutions[2].exempted());
    }

    #[test]
    fn monitor_policies_resolve_as_documented() {
        // Deterministic flows are [36, 48, 12] against [45, 48, 30]:
        // utilizations 0.8, 1.0, 0.4.
        let (net, ptdf) = case3();
        let spec = fixed_spec(&net, 0.0, 1);
        let solver = SolverOptions::default();
        let auto = monitored_lines(
            &net,
            &ptdf,
            &spec,
            &MonitorPolicy::Auto { threshold: 0.7 },
            8,
            &solver,
        )
        .unwrap();
        assert_eq!(auto, vec![0, 1]);
        let strict = monitored_lines(
            &net,
            &ptdf,
            &spec,
            &MonitorPolicy::Auto { threshold: 1.01 },
            8,
            &solver,
        )
        .unwrap();
        assert_eq!(strict, vec![1]);
        let all = monitored_lines(&net, &ptdf, &spec, &MonitorPolicy::All, 8, &solver).unwrap();
        assert_eq!(all, vec![0, 1, 2]);
        let picked = monitored_lines(
            &net,
            &ptdf,
            &spec,
            &MonitorPolicy::Lines(vec![2, 0, 2]),
            8,
            &solver,
        )
        .unwrap();
        assert_eq!(picked, vec![0, 2]);
        let err =
            monitored_lines(&net, &ptdf, &spec, &MonitorPolicy::Lines(vec![7]), 8, &solver);
        assert!(matches!(err, Err(OpfError::BadMonitoredLine { line: 7, .. })));
    }

    #[test]
    fn surrogate_row_counts_follow_the_embed_mode() {
        let (net, _) = case3();
        let spec = fixed_spec(&net, 0.02, 9);
        let scen = sample(&spec, &net, 4, 0).unwrap();
        let ens = plain_ensemble(vec![
            Plane { w: vec![-1.0, 0.2], b: 70.0 },
            Plane { w: vec![0.3, -1.0], b: 90.0 },
        ]);
        let conj = SurrogateOptions { alpha: 0.5, ..Default::default() };
        let dm = build_surrogate(&net, &ens, &scen, &conj).unwrap();
        let n_accept =
            dm.model.constraints.iter().filter(|c| c.name.starts_with("accept_")).count();
        assert_eq!(n_accept, 8);
        assert_eq!(dm.z.len(), 4);
        assert_eq!(dm.budget, 2);
        let mean = SurrogateOptions { alpha: 0.5, embed: EmbedMode::MeanAffine, ..Default::default() };
        let dm = build_surrogate(&net, &ens, &scen, &mean).unwrap();
        let n_accept =
            dm.model.constraints.iter().filter(|c| c.name.starts_with("accept_")).count();
        assert_eq!(n_accept, 4);
    }

    #[test]
    fn single_plane_embed_modes_coincide() {
        let (net, _) = case3();
        let spec = fixed_spec(&net, 0.03, 13);
        let scen = sample(&spec, &net, 6, 0).unwrap();
        let ens = plain_ensemble(vec![Plane { w: vec![-1.0, 0.5], b: 40.0 }]);
        let conj = SurrogateOptions { alpha: 0.0, ..Default::default() };
        let mean = SurrogateOptions { alpha: 0.0, embed: EmbedMode::MeanAffine, ..Default::default() };
        let (_, a) = solve_surrogate(&net, &ens, &scen, &conj).unwrap();
        let (_, b) = solve_surrogate(&net, &ens, &scen, &mean).unwrap();
        assert_eq!(a.status, MipStatus::Optimal);
        assert_relative_eq!(a.model_objective, b.model_objective, epsilon = 1e-9);
        assert_relative_eq!(a.p[0], b.p[0], epsilon = 1e-7);
    }

    #[test]
    fn all_accepting_ensemble_reduces_to_the_unmonitored_model() {
        let (net, ptdf) = case3();
        let spec = fixed_spec(&net, 0.04, 21);
        let scen = sample(&spec, &net, 6, 0).unwrap();
        let ens = plain_ensemble(vec![
            Plane { w: vec![0.0, 0.0], b: 1e6 },
            Plane { w: vec![0.0, 0.0], b: 1e6 },
        ]);
        let sopts = SurrogateOptions { alpha: 0.25, ..Default::default() };
        let (_, a) = solve_surrogate(&net, &ens, &scen, &sopts).unwrap();
        let free = SaaOptions {
            alpha: 0.25,
            monitor: MonitorPolicy::Lines(Vec::new()),
            ..Default::default()
        };
        let (dm, b) = solve_saa(&net, &ptdf, &scen, &free).unwrap();
        assert!(dm.monitored.is_empty());
        assert!(dm.z.is_empty());
        assert_relative_eq!(a.model_objective, b.model_objective, epsilon = 1e-8);
    }

    #[test]
    fn mismatched_feature_width_is_rejected() {
        let (net, _) = case3();
        let spec = fixed_spec(&net, 0.02, 1);
        let scen = sample(&spec, &net, 3, 0).unwrap();
        let ens = plain_ensemble(vec![Plane { w: vec![1.0, 1.0, 1.0], b: 0.0 }]);
        let err = build_surrogate(&net, &ens, &scen, &SurrogateOptions::default());
        assert!(matches!(err, Err(OpfError::FeatureMismatch { expected: 3, got: 2 })));
    }

    #[test]
    fn expost_counts_overloads_and_tolerates_exact_ratings() {
        let (net, ptdf) = case3();
        let spec = fixed_spec(&net, 0.0, 1);
        let scen = sample(&spec, &net, 3, 0).unwrap();
        // 90 MW from the cheap unit puts 50 MW on the 48 MW line in every
        // scenario.
        let bad = expost_validate(&net, &ptdf, &scen, &[90.0, 0.0], &[]).unwrap();
        assert_eq!(bad.n_violated, 3);
        assert_eq!(bad.empirical_rate, 1.0);
        assert_relative_eq!(bad.worst_overload, 50.0 / 48.0 - 1.0, epsilon = 1e-9);
        // The hand optimum loads that line to exactly its rating, which the
        // tolerance must not flag.
        let ok = expost_validate(&net, &ptdf, &scen, &[84.0, 6.0], &[0.5, 0.5]).unwrap();
        assert_eq!(ok.n_violated, 0);
        assert_eq!(ok.worst_overload, 0.0);
    }

    #[test]
    fn dispatch_cost_matches_hand_arithmetic() {
        let (net, _) = case3();
        let var_omega = 9.0;
        let p = [40.0, 10.0];
        let beta = [0.25, 0.75];
        let by_hand = (0.02 * 1600.0 + 20.0 * 40.0)
            + (0.05 * 100.0 + 30.0 * 10.0)
            + 9.0 * (0.02 * 0.0625 + 0.05 * 0.5625);
        assert_relative_eq!(dispatch_cost(&net, var_omega, &p, &beta), by_hand, epsilon = 1e-12);
        // Deterministic solutions carry no balancing duty.
        assert_relative_eq!(
            dispatch_cost(&net, var_omega, &p, &[]),
            by_hand - 9.0 * (0.02 * 0.0625 + 0.05 * 0.5625),
            epsilon = 1e-12
        );
    }

    #[test]
    fn infeasible_model_reports_status_without_a_point() {
        // Demand beyond total capacity cannot balance.
        let (mut net, _) = case3();
        net.buses[2].pd_mean = 400.0;
        let ptdf = build_ptdf(&net).unwrap();
        let spec = fixed_spec(&net, 0.0, 1);
        let scen = sample(&spec, &net, 2, 0).unwrap();
        let opts = SaaOptions { alpha: 0.0, monitor: MonitorPolicy::All, ..Default::default() };
        let (_, sol) = solve_saa(&net, &ptdf, &scen, &opts).unwrap();
        assert_eq!(sol.status, MipStatus::Infeasible);
        assert!(sol.p.is_empty());
        assert!(sol.cost.is_nan());
    }
}
