//! Network model and matrix-block case files.
//!
//! A case file is the MATPOWER-style text layout: `mpc.baseMVA = <n>;` plus
//! `mpc.bus`, `mpc.gen`, `mpc.branch`, and `mpc.gencost` matrix blocks wrapped
//! in `[` ... `];`, with `%` comments. Only the columns the DC model needs are
//! interpreted; the rest are carried as zeros by the writer. Demands, limits,
//! and ratings are plain MW (DC approximation treats MVA ratings as MW);
//! reactances stay in per-unit on `base_mva`.
//!
//! [`parse_case`] enforces structural well-formedness (syntax, a REF bus,
//! resolvable endpoints, a connected live graph, aligned polynomial costs).
//! Value-level rules (bound ordering, sign conventions, duplicate REF) are
//! [`validate`]'s job so that test fixtures can carry deliberate defects.
//! Out-of-service generators and their cost rows are dropped at parse;
//! out-of-service branches are kept (status false) and skipped by the PTDF
//! builder.

mod parse;

pub use parse::{parse_case, parse_case_file, CaseError};

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;

/// Positive bus identifier as written in the case file.
pub type BusId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BusKind {
    Pq,
    Pv,
    Ref,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: BusId,
    pub kind: BusKind,
    /// Mean active demand, MW.
    pub pd_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from: BusId,
    pub to: BusId,
    /// Series reactance, per-unit on the system base.
    pub reactance_pu: f64,
    /// Thermal rating in MW; `None` means unlimited (rating 0 in the file).
    pub flow_limit: Option<f64>,
    /// In service. Out-of-service branches stay in the model but carry no flow.
    pub status: bool,
}

impl Branch {
    /// Rating as a float, unlimited mapped to +inf.
    pub fn limit_mw(&self) -> f64 {
        self.flow_limit.unwrap_or(f64::INFINITY)
    }
}

/// Polynomial production cost c2*p^2 + c1*p + c0 in $/h with p in MW.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostCurve {
    pub c2: f64,
    pub c1: f64,
    pub c0: f64,
}

impl CostCurve {
    pub fn eval(&self, p: f64) -> f64 {
        self.c2 * p * p + self.c1 * p + self.c0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub bus: BusId,
    /// MW.
    pub p_min: f64,
    /// MW.
    pub p_max: f64,
    pub cost: CostCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
}

impl Network {
    /// First REF bus, if any. Well-formed networks have exactly one.
    pub fn ref_bus(&self) -> Option<BusId> {
        self.buses
            .iter()
            .find(|b| b.kind == BusKind::Ref)
            .map(|b| b.id)
    }

    /// Bus id -> position in `buses`.
    pub fn bus_index(&self) -> HashMap<BusId, usize> {
        self.buses
            .iter()
            .enumerate()
            .map(|(i, b)| (b.id, i))
            .collect()
    }

    pub fn total_demand(&self) -> f64 {
        self.buses.iter().map(|b| b.pd_mean).sum()
    }

    pub fn total_p_max(&self) -> f64 {
        self.generators.iter().map(|g| g.p_max).sum()
    }

    pub fn total_p_min(&self) -> f64 {
        self.generators.iter().map(|g| g.p_min).sum()
    }

    /// Indices of in-service branches.
    pub fn live_branches(&self) -> impl Iterator<Item = usize> + '_ {
        self.branches
            .iter()
            .enumerate()
            .filter(|(_, b)| b.status)
            .map(|(i, _)| i)
    }

    /// Generator indices attached to `bus`.
    pub fn generators_at(&self, bus: BusId) -> impl Iterator<Item = usize> + '_ {
        self.generators
            .iter()
            .enumerate()
            .filter(move |(_, g)| g.bus == bus)
            .map(|(i, _)| i)
    }
}

/// A value-level defect found by [`validate`]. Structural defects (syntax,
/// missing blocks, disconnection) are parse errors instead.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "code", rename_all = "snake_case")]
pub enum Issue {
    DuplicateBusId { id: BusId },
    MissingRef,
    DuplicateRef { ids: Vec<BusId> },
    DanglingBranch { branch: usize, end: BusId },
    /// Violates 0 <= p_min <= p_max.
    GenBounds { gen: usize },
    GenBusUnknown { gen: usize, bus: BusId },
    /// Reactance must be > 0 on an in-service branch.
    BranchReactance { branch: usize },
    /// A finite rating must be > 0.
    BranchLimit { branch: usize },
    NegativeDemand { bus: BusId },
    /// Quadratic coefficient < 0 breaks convexity of the dispatch objective.
    NonConvexCost { gen: usize },
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Issue::DuplicateBusId { id } => write!(f, "duplicate bus id {id}"),
            Issue::MissingRef => write!(f, "no REF bus"),
            Issue::DuplicateRef { ids } => write!(f, "multiple REF buses {ids:?}"),
            Issue::DanglingBranch { branch, end } => {
                write!(f, "branch {branch} references unknown bus {end}")
            }
            Issue::GenBounds { gen } => {
                write!(f, "generator {gen} violates 0 <= p_min <= p_max")
            }
            Issue::GenBusUnknown { gen, bus } => {
                write!(f, "generator {gen} references unknown bus {bus}")
            }
            Issue::BranchReactance { branch } => {
                write!(f, "in-service branch {branch} has reactance <= 0")
            }
            Issue::BranchLimit { branch } => write!(f, "branch {branch} has rating <= 0"),
            Issue::NegativeDemand { bus } => write!(f, "bus {bus} has negative demand"),
            Issue::NonConvexCost { gen } => write!(f, "generator {gen} has c2 < 0"),
        }
    }
}

/// Checks every value-level invariant and returns all defects found.
/// An empty result means the network is fit for PTDF and dispatch builds.
pub fn validate(net: &Network) -> Vec<Issue> {
    let mut issues = Vec::new();
    let mut seen = HashMap::new();
    for b in &net.buses {
        if seen.insert(b.id, ()).is_some() {
            issues.push(Issue::DuplicateBusId { id: b.id });
        }
    }
    let refs: Vec<BusId> = net
        .buses
        .iter()
        .filter(|b| b.kind == BusKind::Ref)
        .map(|b| b.id)
        .collect();
    match refs.len() {
        0 => issues.push(Issue::MissingRef),
        1 => {}
        _ => issues.push(Issue::DuplicateRef { ids: refs }),
    }
    for b in &net.buses {
        if b.pd_mean < 0.0 {
            issues.push(Issue::NegativeDemand { bus: b.id });
        }
    }
    for (i, br) in net.branches.iter().enumerate() {
        for end in [br.from, br.to] {
            if !seen.contains_key(&end) {
                issues.push(Issue::DanglingBranch { branch: i, end });
            }
        }
        if br.status && br.reactance_pu <= 0.0 {
            issues.push(Issue::BranchReactance { branch: i });
        }
        if let Some(lim) = br.flow_limit {
            if lim <= 0.0 {
                issues.push(Issue::BranchLimit { branch: i });
            }
        }
    }
    for (i, g) in net.generators.iter().enumerate() {
        if !(0.0 <= g.p_min && g.p_min <= g.p_max) {
            issues.push(Issue::GenBounds { gen: i });
        }
        if !seen.contains_key(&g.bus) {
            issues.push(Issue::GenBusUnknown { gen: i, bus: g.bus });
        }
        if g.cost.c2 < 0.0 {
            issues.push(Issue::NonConvexCost { gen: i });
        }
    }
    issues
}

/// Renders the canonical case text for `net`. `parse_case` inverts this
/// exactly: floats are printed in shortest round-trip form and only the
/// interpreted columns carry information.
pub fn write_case(net: &Network) -> String {
    use std::fmt::Write as _;
    let mut s = String::new();
    s.push_str("function mpc = case\n");
    s.push_str("mpc.version = '2';\n");
    let _ = writeln!(s, "mpc.baseMVA = {};", net.base_mva);
    s.push_str("mpc.bus = [\n");
    for b in &net.buses {
        let kind = match b.kind {
            BusKind::Pq => 1,
            BusKind::Pv => 2,
            BusKind::Ref => 3,
        };
        let _ = writeln!(s, "\t{}\t{}\t{}\t0\t0\t0\t1\t1\t0\t0\t1\t1.1\t0.9;", b.id, kind, b.pd_mean);
    }
    s.push_str("];\n");
    s.push_str("mpc.gen = [\n");
    for g in &net.generators {
        let _ = writeln!(s, "\t{}\t0\t0\t0\t0\t1\t{}\t1\t{}\t{};", g.bus, net.base_mva, g.p_max, g.p_min);
    }
    s.push_str("];\n");
    s.push_str("mpc.branch = [\n");
    for br in &net.branches {
        let rate = br.flow_limit.unwrap_or(0.0);
        let status = i32::from(br.status);
        let _ = writeln!(
            s,
            "\t{}\t{}\t0\t{}\t0\t{}\t0\t0\t0\t0\t{}\t-360\t360;",
            br.from, br.to, br.reactance_pu, rate, status
        );
    }
    s.push_str("];\n");
    s.push_str("mpc.gencost = [\n");
    for g in &net.generators {
        let _ = writeln!(s, "\t2\t0\t0\t3\t{}\t{}\t{};", g.cost.c2, g.cost.c1, g.cost.c0);
    }
    s.push_str("];\n");
    s
}
