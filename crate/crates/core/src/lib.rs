//! Joint chance-constrained DC optimal power flow with a learned surrogate.
//!
//! The crate covers the full experiment loop:
//!
//! * [`netcase`] parses matrix-block case files into a validated [`netcase::Network`].
//! * [`ptdf`] builds the dense PTDF sensitivity matrix and evaluates line flows.
//! * [`scenarios`] samples correlated demand/wind scenarios with reproducible
//!   substreams and tracks the aggregate imbalance each scenario induces.
//! * [`mip`] is an embedded LP/MILP solver: bounded-variable two-phase simplex
//!   plus best-bound branch-and-bound, with piecewise-linear objective support.
//! * [`opf`] assembles the scenario-based chance-constrained dispatch model
//!   (big-M scenario relaxation), its surrogate-constrained variant, and the
//!   Monte Carlo ex-post feasibility check.
//! * [`learn`] trains soft-margin linear SVMs by dual coordinate descent and
//!   aggregates them into a bagged voting ensemble.
//! * [`pipeline`] wires everything into labeled-dataset generation, ensemble
//!   training, cost comparisons, and ensemble-size sweeps.
//!
//! Data-parallel loops (scenario evaluation, per-run solves, bagged training)
//! go through [`exec`], which uses rayon when the `parallel` feature (default)
//! is enabled and plain iterators otherwise. Results are always collected in
//! input order, so the feature never changes numeric output.

pub mod exec;
pub mod learn;
pub mod mip;
pub mod netcase;
pub mod opf;
pub mod pipeline;
pub mod ptdf;
pub mod scenarios;

/// Crate version, for output manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
