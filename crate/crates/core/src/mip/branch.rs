//! Best-bound branch-and-bound over the binary variables.
//!
//! Nodes carry per-variable bound vectors; fixing a binary narrows its box to
//! a point, which the simplex folds out of the tableau entirely, so deep
//! nodes solve strictly smaller LPs. The frontier is a heap ordered by parent
//! relaxation bound (ties by node id), node LPs are solved lazily at pop
//! time, and branching picks the most fractional binary with lowest-index tie
//! breaks: children fix it to 0 and then to 1.
//!
//! A node whose relaxation lands on integral binaries is snapped to exact
//! 0/1, re-solved with those values fixed, and admitted as the incumbent only
//! if the re-solve stays feasible. One rounding probe at the root seeds the
//! incumbent early so the bound test can prune from the first pop.

use super::simplex::{self, LpOutcome};
use super::{MipError, MipModel, MipSolution, MipStatus, SolverOptions};
use std::collections::BinaryHeap;

struct Node {
    /// Parent relaxation objective; the best-bound key.
    bound: f64,
    id: u64,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // BinaryHeap is a max-heap; "greatest" here means lowest bound, then
    // lowest id, so pops follow best-bound order deterministically.
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.id.cmp(&self.id))
    }
}

struct Search<'a> {
    model: &'a MipModel,
    opts: &'a SolverOptions,
    bins: Vec<usize>,
    incumbent: Option<Vec<f64>>,
    incumbent_obj: f64,
    nodes_solved: u64,
    lp_iterations: u64,
}

impl<'a> Search<'a> {
    fn lp(&mut self, lower: &[f64], upper: &[f64]) -> Result<LpOutcome, MipError> {
        let out = simplex::solve_with_bounds(self.model, lower, upper, self.opts)?;
        self.lp_iterations += out.iterations;
        if out.status == MipStatus::IterationLimit {
            return Err(MipError::IterationLimit(self.opts.max_iterations));
        }
        Ok(out)
    }

    /// Bound threshold for pruning: nodes at or above it cannot beat the
    /// incumbent by more than the optimality gap.
    fn cutoff(&self) -> f64 {
        if self.incumbent.is_none() {
            return f64::INFINITY;
        }
        let gap = self.opts.gap_abs.max(self.opts.gap_rel * self.incumbent_obj.abs());
        self.incumbent_obj - gap
    }

    /// Offers a candidate integral point; keeps it if feasible and better.
    fn offer(&mut self, values: Vec<f64>, objective: f64) {
        if objective < self.incumbent_obj
            && self.model.max_violation(&values) <= self.opts.feas_tol * 10.0
        {
            self.incumbent_obj = objective;
            self.incumbent = Some(values);
        }
    }

    /// The branching variable: most fractional binary under the node bounds,
    /// lowest index on ties. None when every binary is integral within tol.
    fn pick_branch(&self, values: &[f64], lower: &[f64], upper: &[f64]) -> Option<usize> {
        let mut pick: Option<(usize, f64)> = None;
        for &b in &self.bins {
            if lower[b] == upper[b] {
                continue;
            }
            let v = values[b];
            let frac = v.min(1.0 - v);
            if frac > self.opts.int_tol && pick.map_or(true, |(_, f)| frac > f) {
                pick = Some((b, frac));
            }
        }
        pick.map(|(b, _)| b)
    }

    /// Snaps near-integral binaries to exact 0/1 and re-solves with them
    /// fixed, so the incumbent carries exact integers. Skips the extra LP
    /// when the relaxation already produced exact values.
    fn snap_and_offer(
        &mut self,
        out: &LpOutcome,
        lower: &[f64],
        upper: &[f64],
    ) -> Result<(), MipError> {
        let mut lo = lower.to_vec();
        let mut hi = upper.to_vec();
        let mut exact = true;
        for &b in &self.bins {
            let snapped = if out.values[b] >= 0.5 { 1.0 } else { 0.0 };
            exact &= out.values[b] == snapped;
            lo[b] = snapped;
            hi[b] = snapped;
        }
        if exact {
            self.offer(out.values.clone(), out.objective);
            return Ok(());
        }
        let fixed = self.lp(&lo, &hi)?;
        if fixed.status == MipStatus::Optimal {
            self.offer(fixed.values, fixed.objective);
        }
        Ok(())
    }
}

pub(crate) fn solve(model: &MipModel, opts: &SolverOptions) -> Result<MipSolution, MipError> {
    let lower: Vec<f64> = model.vars.iter().map(|v| v.lower).collect();
    let upper: Vec<f64> = model.vars.iter().map(|v| v.upper).collect();
    let bins = model.binaries();

    let mut search = Search {
        model,
        opts,
        bins,
        incumbent: None,
        incumbent_obj: f64::INFINITY,
        nodes_solved: 0,
        lp_iterations: 0,
    };

    // Root relaxation.
    search.nodes_solved = 1;
    let root = search.lp(&lower, &upper)?;
    match root.status {
        MipStatus::Infeasible | MipStatus::Unbounded => {
            return Ok(MipSolution {
                status: root.status,
                objective: root.objective,
                values: root.values,
                node_count: 1,
                lp_iterations: search.lp_iterations,
            });
        }
        MipStatus::Optimal => {}
        MipStatus::IterationLimit => unreachable!("lp() maps the cap to an error"),
    }
    if search.bins.is_empty() {
        return Ok(MipSolution {
            status: MipStatus::Optimal,
            objective: root.objective,
            values: root.values,
            node_count: 1,
            lp_iterations: search.lp_iterations,
        });
    }

    match search.pick_branch(&root.values, &lower, &upper) {
        None => {
            search.snap_and_offer(&root, &lower, &upper)?;
            // Falls back to the raw relaxation point only if snapping broke
            // feasibility, which near-integral relaxations do not do.
            let (objective, values) = match search.incumbent.take() {
                Some(v) => (search.incumbent_obj, v),
                None => (root.objective, root.values),
            };
            return Ok(MipSolution {
                status: MipStatus::Optimal,
                objective,
                values,
                node_count: 1,
                lp_iterations: search.lp_iterations,
            });
        }
        Some(branch_var) => {
            // Rounding probe: fix every binary to its nearest integer once;
            // a feasible result seeds the incumbent before any branching.
            let mut lo = lower.clone();
            let mut hi = upper.clone();
            for &b in &search.bins {
                let snapped = if root.values[b] >= 0.5 { 1.0 } else { 0.0 };
                lo[b] = snapped;
                hi[b] = snapped;
            }
            let probe = search.lp(&lo, &hi)?;
            if probe.status == MipStatus::Optimal {
                search.offer(probe.values, probe.objective);
            }

            let mut heap = BinaryHeap::new();
            let mut next_id = 0u64;
            for fix in [0.0, 1.0] {
                let mut lo = lower.clone();
                let mut hi = upper.clone();
                lo[branch_var] = fix;
                hi[branch_var] = fix;
                heap.push(Node { bound: root.objective, id: next_id, lower: lo, upper: hi });
                next_id += 1;
            }

            while let Some(node) = heap.pop() {
                if node.bound >= search.cutoff() {
                    // Best-bound order: every remaining node is at least as
                    // weak, so the tree is exhausted to within the gap.
                    break;
                }
                search.nodes_solved += 1;
                if search.nodes_solved > opts.max_nodes {
                    return Err(MipError::NodeLimit(opts.max_nodes));
                }
                let out = search.lp(&node.lower, &node.upper)?;
                match out.status {
                    MipStatus::Infeasible => continue,
                    MipStatus::Unbounded => {
                        return Ok(MipSolution {
                            status: MipStatus::Unbounded,
                            objective: f64::NEG_INFINITY,
                            values: Vec::new(),
                            node_count: search.nodes_solved,
                            lp_iterations: search.lp_iterations,
                        });
                    }
                    MipStatus::Optimal => {}
                    MipStatus::IterationLimit => unreachable!("lp() maps the cap to an error"),
                }
                if out.objective >= search.cutoff() {
                    continue;
                }
                match search.pick_branch(&out.values, &node.lower, &node.upper) {
                    None => search.snap_and_offer(&out, &node.lower, &node.upper)?,
                    Some(b) => {
                        for fix in [0.0, 1.0] {
                            let mut lo = node.lower.clone();
                            let mut hi = node.upper.clone();
                            lo[b] = fix;
                            hi[b] = fix;
                            heap.push(Node {
                                bound: out.objective,
                                id: next_id,
                                lower: lo,
                                upper: hi,
                            });
                            next_id += 1;
                        }
                    }
                }
            }
        }
    }

    Ok(match search.incumbent {
        Some(values) => MipSolution {
            status: MipStatus::Optimal,
            objective: search.incumbent_obj,
            values,
            node_count: search.nodes_solved,
            lp_iterations: search.lp_iterations,
        },
        None => MipSolution {
            status: MipStatus::Infeasible,
            objective: f64::INFINITY,
            values: Vec::new(),
            node_count: search.nodes_solved,
            lp_iterations: search.lp_iterations,
        },
    })
}

#[cfg(test)]
mod tests {
    use crate::mip::{solve_milp, MipError, MipModel, MipStatus, Sense, SolverOptions, VarKind};

    #[test]
    fn binary_free_model_matches_lp() {
        let mut m = MipModel::new();
        let x = m.add_var("x", 0.0, 4.0, VarKind::Continuous).unwrap();
        m.set_obj_coeff(x, -1.5).unwrap();
        let sol = solve_milp(&m, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, MipStatus::Optimal);
        assert_eq!(sol.node_count, 1);
        assert!((sol.objective - (-6.0)).abs() < 1e-9);
    }

    #[test]
    fn three_item_knapsack() {
        // Values 5, 4, 3 and weights 2, 3, 4 under capacity 5: items 1 and 2
        // fit exactly and dominate.
        let mut m = MipModel::new();
        let x: Vec<usize> = (0..3)
            .map(|i| m.add_var(format!("x{i}"), 0.0, 1.0, VarKind::Binary).unwrap())
            .collect();
        for (i, v) in [5.0, 4.0, 3.0].into_iter().enumerate() {
            m.set_obj_coeff(x[i], -v).unwrap();
        }
        m.add_constraint(
            "weight",
            &[(x[0], 2.0), (x[1], 3.0), (x[2], 4.0)],
            Sense::Le,
            5.0,
        )
        .unwrap();
        let sol = solve_milp(&m, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, MipStatus::Optimal);
        assert!((sol.objective - (-9.0)).abs() < 1e-8, "objective {}", sol.objective);
        assert!((sol.values[x[0]] - 1.0).abs() < 1e-9);
        assert!((sol.values[x[1]] - 1.0).abs() < 1e-9);
        assert!(sol.values[x[2]].abs() < 1e-9);
    }

    #[test]
    fn fractional_equality_has_no_integral_point() {
        // x1 + x2 = 1.5 is LP-feasible but never integral.
        let mut m = MipModel::new();
        let a = m.add_var("a", 0.0, 1.0, VarKind::Binary).unwrap();
        let b = m.add_var("b", 0.0, 1.0, VarKind::Binary).unwrap();
        m.add_constraint("half", &[(a, 1.0), (b, 1.0)], Sense::Eq, 1.5).unwrap();
        let sol = solve_milp(&m, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, MipStatus::Infeasible);
    }

    #[test]
    fn symmetric_fractional_root_forces_branching() {
        // max x1 + x2 with 2 x1 + 2 x2 <= 3: the relaxation sits at
        // (0.75, 0.75) and the integer optimum picks exactly one variable.
        let mut m = MipModel::new();
        let a = m.add_var("a", 0.0, 1.0, VarKind::Binary).unwrap();
        let b = m.add_var("b", 0.0, 1.0, VarKind::Binary).unwrap();
        m.set_obj_coeff(a, -1.0).unwrap();
        m.set_obj_coeff(b, -1.0).unwrap();
        m.add_constraint("cap", &[(a, 2.0), (b, 2.0)], Sense::Le, 3.0).unwrap();
        let sol = solve_milp(&m, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, MipStatus::Optimal);
        assert!((sol.objective - (-1.0)).abs() < 1e-8);
        let sum = sol.values[a] + sol.values[b];
        assert!((sum - 1.0).abs() < 1e-8);
        assert!(sol.node_count >= 2, "branching expected, saw {} nodes", sol.node_count);
    }

    #[test]
    fn node_limit_surfaces_as_error() {
        let mut m = MipModel::new();
        let vars: Vec<usize> = (0..6)
            .map(|i| m.add_var(format!("z{i}"), 0.0, 1.0, VarKind::Binary).unwrap())
            .collect();
        for (i, &v) in vars.iter().enumerate() {
            m.set_obj_coeff(v, -(1.0 + i as f64 * 0.1)).unwrap();
        }
        let terms: Vec<(usize, f64)> = vars.iter().map(|&v| (v, 2.0)).collect();
        m.add_constraint("odd_cap", &terms, Sense::Le, 7.0).unwrap();
        let opts = SolverOptions { max_nodes: 2, ..Default::default() };
        match solve_milp(&m, &opts) {
            Err(MipError::NodeLimit(2)) => {}
            other => panic!("expected node-limit error, got {other:?}"),
        }
    }

    #[test]
    fn loose_gap_still_returns_integral_feasible_point() {
        let mut m = MipModel::new();
        let vars: Vec<usize> = (0..5)
            .map(|i| m.add_var(format!("z{i}"), 0.0, 1.0, VarKind::Binary).unwrap())
            .collect();
        for (i, &v) in vars.iter().enumerate() {
            m.set_obj_coeff(v, -(3.0 + i as f64)).unwrap();
        }
        let terms: Vec<(usize, f64)> = vars.iter().map(|&v| (v, 2.0)).collect();
        m.add_constraint("cap", &terms, Sense::Le, 5.0).unwrap();
        let opts = SolverOptions { gap_abs: 1e9, ..Default::default() };
        let sol = solve_milp(&m, &opts).unwrap();
        assert_eq!(sol.status, MipStatus::Optimal);
        assert!(m.max_violation(&sol.values) <= 1e-6);
        for &v in &vars {
            let x = sol.values[v];
            assert!((x - x.round()).abs() <= 1e-9, "binary {x} not integral");
        }
    }
}
