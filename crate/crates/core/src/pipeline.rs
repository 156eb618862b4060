//! Experiment orchestration: labeled dataset generation from repeated
//! scenario solves, class rebalancing, stratified splitting, ensemble
//! training, and the cost comparison between the scenario model and its
//! learned surrogate.
//!
//! Everything downstream of one master seed is deterministic. Each run owns
//! a block of counter-mode RNG streams derived from that seed, so runs can
//! execute in parallel, in any order, or be regenerated individually from a
//! stored [`RunRecord`] without changing a single draw.

use std::io;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::learn::{
    evaluate, train_bagging, BaggingParams, Ensemble, LearnError, Metrics,
};
use crate::netcase::Network;
use crate::opf::{
    expost_validate, expost_validate_on, solve_saa, solve_surrogate, DispatchSolution, EmbedMode,
    GenLimitMode, MonitorPolicy, OpfError, SaaOptions, SurrogateOptions,
};
use crate::ptdf::{build_ptdf, Ptdf, PtdfError};
use crate::scenarios::{
    perturb_wind_stats, sample, substream, OmegaComposition, PerturbRanges, ScenarioError,
    UncertaintySpec,
};

/// RNG streams per run: wind-stat perturbation, training scenarios, and the
/// validation Monte Carlo set, with one spare.
const STREAMS_PER_RUN: u64 = 4;
/// Pipeline-level streams live far above any run block.
const PIPELINE_BASE: u64 = 1 << 61;
const STREAM_REBALANCE: u64 = PIPELINE_BASE;
const STREAM_SPLIT: u64 = PIPELINE_BASE + 1;
const STREAM_ENSEMBLE: u64 = PIPELINE_BASE + 2;

pub fn perturb_stream(run: usize) -> u64 {
    run as u64 * STREAMS_PER_RUN
}

pub fn scenario_stream(run: usize) -> u64 {
    run as u64 * STREAMS_PER_RUN + 1
}

pub fn mc_stream(run: usize) -> u64 {
    run as u64 * STREAMS_PER_RUN + 2
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("config parse: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("rebalance needs both classes, got {pos} positive and {neg} negative rows")]
    SingleClass { pos: usize, neg: usize },
    #[error("split needs at least 2 rows per class, got {pos} positive and {neg} negative")]
    TinyClass { pos: usize, neg: usize },
    #[error(transparent)]
    Opf(#[from] OpfError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Ptdf(#[from] PtdfError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub case: CaseSection,
    #[serde(default)]
    pub uncertainty: UncertaintySection,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub perturb: PerturbSection,
    #[serde(default)]
    pub rebalance: RebalanceSection,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub ensemble: EnsembleSection,
    #[serde(default)]
    pub saa: SaaSection,
    #[serde(default)]
    pub compare: CompareSection,
    #[serde(default)]
    pub seeds: SeedsSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseSection {
    /// Path of the MATPOWER-format case file, relative to the config.
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UncertaintySection {
    /// Demand sigma as a fraction of each bus's mean demand.
    pub sigma_d_factor: f64,
    pub wind_buses: Vec<u32>,
    pub mu_w: Vec<f64>,
    pub sigma_w: Vec<f64>,
    pub omega: OmegaComposition,
}

impl Default for UncertaintySection {
    fn default() -> Self {
        UncertaintySection {
            sigma_d_factor: 0.03,
            wind_buses: Vec::new(),
            mu_w: Vec::new(),
            sigma_w: Vec::new(),
            omega: OmegaComposition::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub n_runs: usize,
    pub n_scenarios: usize,
    /// Violation fractions solved per run; each solve emits one labeled row.
    pub alphas: Vec<f64>,
    /// Size of the independent Monte Carlo set behind each label.
    pub mc_validation: usize,
    /// Append participation factors to the feature vector (ablation knob;
    /// off by default so features are the setpoints alone).
    pub include_beta: bool,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            n_runs: 40,
            n_scenarios: 100,
            alphas: vec![0.0, 0.05],
            mc_validation: 1000,
            include_beta: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbSection {
    pub mu_range: (f64, f64),
    pub sigma_range: (f64, f64),
}

impl Default for PerturbSection {
    fn default() -> Self {
        let r = PerturbRanges::default();
        PerturbSection { mu_range: r.mu, sigma_range: r.sigma }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RebalanceSection {
    /// Target minority:majority ratio; 1.0 oversamples to parity.
    pub target_ratio: f64,
}

impl Default for RebalanceSection {
    fn default() -> Self {
        RebalanceSection { target_ratio: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub train_fraction: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection { train_fraction: 0.75 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleSection {
    pub n_planes: usize,
    pub cost: f64,
    pub tol: f64,
    pub max_epochs: usize,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        EnsembleSection { n_planes: 8, cost: 1.0, tol: 1e-4, max_epochs: 1000 }
    }
}

/// Monitored-line policy in config form: `"auto"`, `"all"`, or an explicit
/// index list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MonitorChoice {
    Named(String),
    Explicit(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SaaSection {
    pub segments: usize,
    pub gen_limits: GenLimitMode,
    pub monitor: MonitorChoice,
    pub monitor_threshold: f64,
    pub big_m_scale: f64,
}

impl Default for SaaSection {
    fn default() -> Self {
        SaaSection {
            segments: 8,
            gen_limits: GenLimitMode::default(),
            monitor: MonitorChoice::Named("auto".into()),
            monitor_threshold: 0.7,
            big_m_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareSection {
    /// Violation fraction both models are solved at in the comparison.
    pub alpha: f64,
    pub n_test_samples: usize,
    pub embed: EmbedMode,
}

impl Default for CompareSection {
    fn default() -> Self {
        CompareSection { alpha: 0.05, n_test_samples: 15, embed: EmbedMode::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedsSection {
    pub master: u64,
}

impl Default for SeedsSection {
    fn default() -> Self {
        SeedsSection { master: 42 }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |msg: String| Err(PipelineError::Config(msg));
        if !(self.split.train_fraction > 0.0 && self.split.train_fraction < 1.0) {
            return bad(format!("train_fraction {} outside (0, 1)", self.split.train_fraction));
        }
        for &a in &self.dataset.alphas {
            if !(0.0..1.0).contains(&a) {
                return bad(format!("alpha {a} outside [0, 1)"));
            }
        }
        if self.dataset.alphas.is_empty() {
            return bad("alphas must not be empty".into());
        }
        if !(0.0..1.0).contains(&self.compare.alpha) {
            return bad(format!("compare alpha {} outside [0, 1)", self.compare.alpha));
        }
        if self.dataset.n_scenarios == 0 {
            return bad("n_scenarios must be at least 1".into());
        }
        if self.dataset.mc_validation == 0 {
            return bad("mc_validation must be at least 1".into());
        }
        if self.ensemble.n_planes == 0 {
            return bad("n_planes must be at least 1".into());
        }
        if !(self.ensemble.cost > 0.0) || !(self.ensemble.tol > 0.0) {
            return bad("ensemble cost and tol must be positive".into());
        }
        if self.ensemble.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        if !(self.rebalance.target_ratio > 0.0) {
            return bad(format!("target_ratio {} must be positive", self.rebalance.target_ratio));
        }
        for (name, (lo, hi)) in
            [("mu_range", self.perturb.mu_range), ("sigma_range", self.perturb.sigma_range)]
        {
            if !(lo > 0.0 && hi >= lo) {
                return bad(format!("{name} ({lo}, {hi}) must satisfy 0 < lo <= hi"));
            }
        }
        if self.uncertainty.wind_buses.len() != self.uncertainty.mu_w.len()
            || self.uncertainty.wind_buses.len() != self.uncertainty.sigma_w.len()
        {
            return bad(format!(
                "wind_buses/mu_w/sigma_w lengths differ: {}/{}/{}",
                self.uncertainty.wind_buses.len(),
                self.uncertainty.mu_w.len(),
                self.uncertainty.sigma_w.len()
            ));
        }
        if self.saa.segments == 0 {
            return bad("segments must be at least 1".into());
        }
        if !(self.saa.monitor_threshold > 0.0) {
            return bad("monitor_threshold must be positive".into());
        }
        if !(self.saa.big_m_scale > 0.0) {
            return bad("big_m_scale must be positive".into());
        }
        if self.compare.n_test_samples == 0 {
            return bad("n_test_samples must be at least 1".into());
        }
        self.monitor_policy()?;
        Ok(())
    }

    pub fn monitor_policy(&self) -> Result<MonitorPolicy, PipelineError> {
        match &self.saa.monitor {
            MonitorChoice::Named(name) => match name.as_str() {
                "auto" => Ok(MonitorPolicy::Auto { threshold: self.saa.monitor_threshold }),
                "all" => Ok(MonitorPolicy::All),
                other => Err(PipelineError::Config(format!(
                    "monitor \"{other}\" is not \"auto\", \"all\", or an index list"
                ))),
            },
            MonitorChoice::Explicit(lines) => Ok(MonitorPolicy::Lines(lines.clone())),
        }
    }

    /// The unperturbed uncertainty description this config stands for.
    pub fn base_spec(&self, net: &Network) -> Result<UncertaintySpec, PipelineError> {
        let spec = UncertaintySpec {
            sigma_d: net
                .buses
                .iter()
                .map(|b| self.uncertainty.sigma_d_factor * b.pd_mean)
                .collect(),
            wind_buses: self.uncertainty.wind_buses.clone(),
            mu_w: self.uncertainty.mu_w.clone(),
            sigma_w: self.uncertainty.sigma_w.clone(),
            omega_composition: self.uncertainty.omega,
            seed: self.seeds.master,
        };
        spec.check(net)?;
        Ok(spec)
    }

    pub fn perturb_ranges(&self) -> PerturbRanges {
        PerturbRanges { mu: self.perturb.mu_range, sigma: self.perturb.sigma_range }
    }

    pub fn saa_options(&self, alpha: f64) -> Result<SaaOptions, PipelineError> {
        Ok(SaaOptions {
            alpha,
            segments: self.saa.segments,
            gen_limits: self.saa.gen_limits,
            monitor: self.monitor_policy()?,
            big_m_scale: self.saa.big_m_scale,
            solver: Default::default(),
        })
    }

    pub fn surrogate_options(&self) -> SurrogateOptions {
        SurrogateOptions {
            alpha: self.compare.alpha,
            segments: self.saa.segments,
            gen_limits: self.saa.gen_limits,
            embed: self.compare.embed,
            big_m_scale: self.saa.big_m_scale,
            solver: Default::default(),
        }
    }

    pub fn bagging_params(&self, n_planes: usize) -> BaggingParams {
        // A derived seed keeps the per-plane bootstrap streams disjoint from
        // the per-run scenario streams of the master seed.
        let seed = substream(self.seeds.master, STREAM_ENSEMBLE).gen::<u64>();
        BaggingParams {
            n_planes,
            cost: self.ensemble.cost,
            tol: self.ensemble.tol,
            max_epochs: self.ensemble.max_epochs,
            seed,
        }
    }
}

// ---------------------------------------------------------------------------
// Dataset generation

/// One labeled feature row; `x` follows the dataset's `feature_order`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataRow {
    pub run: usize,
    pub alpha: f64,
    pub x: Vec<f64>,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dataset {
    pub feature_order: Vec<String>,
    pub rows: Vec<DataRow>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.rows.len()
    }

    /// (positive, negative) row counts.
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.rows.iter().filter(|r| r.y > 0.0).count();
        (pos, self.rows.len() - pos)
    }

    pub fn xy(&self) -> (Vec<Vec<f64>>, Vec<f64>) {
        (
            self.rows.iter().map(|r| r.x.clone()).collect(),
            self.rows.iter().map(|r| r.y).collect(),
        )
    }
}

/// Full provenance of one labeled row: enough to regenerate its scenarios
/// and Monte Carlo set from the master seed's stream layout and re-check
/// the label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub alpha: f64,
    /// Wind statistics after this run's perturbation.
    pub spec: UncertaintySpec,
    pub solution: DispatchSolution,
    /// Scenarios of the validation Monte Carlo set with at least one line
    /// over rating.
    pub violations: usize,
    /// +1 when `violations` is zero, else -1.
    pub label: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetBundle {
    pub dataset: Dataset,
    pub records: Vec<RunRecord>,
    /// Solves that ended without an optimum; their rows are absent.
    pub skipped_solves: usize,
}

pub fn feature_names(net: &Network, include_beta: bool) -> Vec<String> {
    let mut names: Vec<String> = (0..net.generators.len()).map(|g| format!("p{g}")).collect();
    if include_beta {
        names.extend((0..net.generators.len()).map(|g| format!("beta{g}")));
    }
    names
}

fn feature_row(solution: &DispatchSolution, include_beta: bool) -> Vec<f64> {
    let mut x = solution.p.clone();
    if include_beta {
        x.extend_from_slice(&solution.beta);
    }
    x
}

/// Labels dispatches by repeated scenario solves. Per run: perturb the wind
/// statistics, draw the training scenarios, solve once per alpha, then count
/// line violations of each solution on an independent Monte Carlo set.
/// Solves without an optimum are counted and skipped. Deterministic given
/// the config; runs execute in parallel without affecting output order.
pub fn generate_dataset(
    net: &Network,
    cfg: &ExperimentConfig,
) -> Result<DatasetBundle, PipelineError> {
    cfg.validate()?;
    let ptdf = build_ptdf(net)?;
    generate_dataset_with(net, &ptdf, cfg)
}

fn generate_dataset_with(
    net: &Network,
    ptdf: &Ptdf,
    cfg: &ExperimentConfig,
) -> Result<DatasetBundle, PipelineError> {
    let base = cfg.base_spec(net)?;
    let ranges = cfg.perturb_ranges();
    let results = crate::exec::ordered_map_indexed(cfg.dataset.n_runs, |run| {
        label_one_run(net, ptdf, cfg, &base, &ranges, run)
    });
    let mut records = Vec::new();
    let mut skipped_solves = 0;
    for r in results {
        let (mut recs, skipped) = r?;
        records.append(&mut recs);
        skipped_solves += skipped;
    }
    let rows = records
        .iter()
        .map(|rec| DataRow {
            run: rec.run,
            alpha: rec.alpha,
            x: feature_row(&rec.solution, cfg.dataset.include_beta),
            y: rec.label,
        })
        .collect();
    Ok(DatasetBundle {
        dataset: Dataset { feature_order: feature_names(net, cfg.dataset.include_beta), rows },
        records,
        skipped_solves,
    })
}

fn label_one_run(
    net: &Network,
    ptdf: &Ptdf,
    cfg: &ExperimentConfig,
    base: &UncertaintySpec,
    ranges: &PerturbRanges,
    run: usize,
) -> Result<(Vec<RunRecord>, usize), PipelineError> {
    let mut rng = substream(cfg.seeds.master, perturb_stream(run));
    let spec = perturb_wind_stats(base, &mut rng, ranges);
    let train = sample(&spec, net, cfg.dataset.n_scenarios, scenario_stream(run))?;
    let mc = sample(&spec, net, cfg.dataset.mc_validation, mc_stream(run))?;
    let mut records = Vec::new();
    let mut skipped = 0;
    for &alpha in &cfg.dataset.alphas {
        let opts = cfg.saa_options(alpha)?;
        let (_, sol) = solve_saa(net, ptdf, &train, &opts)?;
        if sol.status != crate::mip::MipStatus::Optimal {
            log::warn!("run {run} alpha {alpha}: solve ended {:?}, row skipped", sol.status);
            skipped += 1;
            continue;
        }
        let check = expost_validate(net, ptdf, &mc, &sol.p, &sol.beta)?;
        let label = if check.n_violated == 0 { 1.0 } else { -1.0 };
        records.push(RunRecord {
            run,
            alpha,
            spec: spec.clone(),
            solution: sol,
            violations: check.n_violated,
            label,
        });
    }
    Ok((records, skipped))
}

// ---------------------------------------------------------------------------
// Rebalance and split

/// Oversamples the minority class with replacement until its size reaches
/// `target_ratio` times the majority size (within one sample, never
/// shrinking a class). Appended rows are exact copies of minority rows.
pub fn rebalance(
    data: &Dataset,
    target_ratio: f64,
    rng: &mut impl Rng,
) -> Result<Dataset, PipelineError> {
    let (pos, neg) = data.class_counts();
    if pos == 0 || neg == 0 {
        return Err(PipelineError::SingleClass { pos, neg });
    }
    let minority_label = if pos <= neg { 1.0 } else { -1.0 };
    let (minority, majority) = if pos <= neg { (pos, neg) } else { (neg, pos) };
    let want = (majority as f64 * target_ratio).round() as usize;
    let mut out = data.clone();
    if want <= minority {
        return Ok(out);
    }
    let pool: Vec<usize> = data
        .rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.y == minority_label)
        .map(|(i, _)| i)
        .collect();
    for _ in 0..(want - minority) {
        let pick = pool[rng.gen_range(0..pool.len())];
        out.rows.push(data.rows[pick].clone());
    }
    Ok(out)
}

/// Train allocation per class for a stratified split: floors with the
/// leftovers handed to the largest fractional remainders, then clamped so
/// both sides of the split keep at least one row of each class.
fn class_allocation(n_pos: usize, n_neg: usize, fraction: f64) -> (usize, usize) {
    let total = ((n_pos + n_neg) as f64 * fraction).floor() as usize;
    let f_pos = n_pos as f64 * fraction;
    let f_neg = n_neg as f64 * fraction;
    let mut t_pos = f_pos.floor() as usize;
    let mut t_neg = f_neg.floor() as usize;
    let r_pos = f_pos - t_pos as f64;
    let r_neg = f_neg - t_neg as f64;
    let mut left = total.saturating_sub(t_pos + t_neg);
    while left > 0 {
        // Positive class wins ties so the order is fixed.
        if (r_pos >= r_neg && t_pos < n_pos) || t_neg >= n_neg {
            t_pos += 1;
        } else {
            t_neg += 1;
        }
        left -= 1;
    }
    t_pos = t_pos.clamp(1, n_pos - 1);
    t_neg = t_neg.clamp(1, n_neg - 1);
    // Re-flow anything a clamp displaced into whichever class has room, so
    // the train size keeps its floor whenever that is possible.
    while t_pos + t_neg < total && (t_pos < n_pos - 1 || t_neg < n_neg - 1) {
        if t_pos < n_pos - 1 && (r_pos >= r_neg || t_neg >= n_neg - 1) {
            t_pos += 1;
        } else {
            t_neg += 1;
        }
    }
    while t_pos + t_neg > total && (t_pos > 1 || t_neg > 1) {
        if t_pos > 1 && (r_pos <= r_neg || t_neg <= 1) {
            t_pos -= 1;
        } else {
            t_neg -= 1;
        }
    }
    (t_pos, t_neg)
}

/// Stratified shuffle split. Output row order is the positive block then the
/// negative block, each in shuffled order; the union is the input multiset
/// and the two parts are disjoint by input index.
pub fn split(
    data: &Dataset,
    fraction: f64,
    rng: &mut impl Rng,
) -> Result<(Dataset, Dataset), PipelineError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(PipelineError::Config(format!("split fraction {fraction} outside (0, 1)")));
    }
    let (pos, neg) = data.class_counts();
    if pos < 2 || neg < 2 {
        return Err(PipelineError::TinyClass { pos, neg });
    }
    let (t_pos, t_neg) = class_allocation(pos, neg, fraction);
    let mut train = Dataset { feature_order: data.feature_order.clone(), rows: Vec::new() };
    let mut test = Dataset { feature_order: data.feature_order.clone(), rows: Vec::new() };
    for (label, take) in [(1.0, t_pos), (-1.0, t_neg)] {
        let mut idx: Vec<usize> = data
            .rows
            .iter()
            .enumerate()
            .filter(|(_, r)| r.y == label)
            .map(|(i, _)| i)
            .collect();
        idx.shuffle(rng);
        for (k, &i) in idx.iter().enumerate() {
            let target = if k < take { &mut train } else { &mut test };
            target.rows.push(data.rows[i].clone());
        }
    }
    Ok((train, test))
}

// ---------------------------------------------------------------------------
// Comparison

/// One Table-style comparison row. Cost fields are absent when either solve
/// failed to reach an optimum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    /// 1-based position in the report.
    pub sample: usize,
    /// Originating run id.
    pub run: usize,
    pub ok: bool,
    pub cost_saa: Option<f64>,
    pub cost_surrogate: Option<f64>,
    pub delta: Option<f64>,
    pub delta_pct: Option<f64>,
    /// In-sample violations of the surrogate dispatch over the scenario
    /// model's monitored lines.
    pub violations_surrogate: Option<usize>,
    /// floor(alpha * n_scenarios) for the comparison alpha.
    pub budget: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
    pub mean_delta_pct: Option<f64>,
    pub std_delta_pct: Option<f64>,
    /// Ensemble confusion counts on the held-out test rows.
    pub metrics: Metrics,
    pub n_train: usize,
    pub n_test: usize,
    pub skipped_solves: usize,
}

#[derive(Debug, Clone)]
pub struct ComparisonOutput {
    pub report: ExperimentReport,
    pub ensemble: Ensemble,
    pub bundle: DatasetBundle,
    pub train: Dataset,
    pub test: Dataset,
}

/// Distinct run ids present in `test`, ascending, truncated to `k`.
pub fn select_test_runs(test: &Dataset, k: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = test.rows.iter().map(|r| r.run).collect();
    ids.sort_unstable();
    ids.dedup();
    ids.truncate(k);
    ids
}

/// Solves the scenario model and the surrogate on identical scenario sets
/// for each listed run and compares true quadratic costs. The surrogate
/// dispatch is also violation-checked on the scenario model's monitored
/// lines, which is the set its budget refers to.
pub fn compare_with_ensemble(
    net: &Network,
    ptdf: &Ptdf,
    cfg: &ExperimentConfig,
    records: &[RunRecord],
    ensemble: &Ensemble,
    runs: &[usize],
) -> Result<Vec<ReportRow>, PipelineError> {
    let results = crate::exec::ordered_map(runs, |&run| {
        compare_one_run(net, ptdf, cfg, records, ensemble, run)
    });
    let mut rows = Vec::with_capacity(results.len());
    for (i, r) in results.into_iter().enumerate() {
        let mut row = r?;
        row.sample = i + 1;
        rows.push(row);
    }
    Ok(rows)
}

fn compare_one_run(
    net: &Network,
    ptdf: &Ptdf,
    cfg: &ExperimentConfig,
    records: &[RunRecord],
    ensemble: &Ensemble,
    run: usize,
) -> Result<ReportRow, PipelineError> {
    let spec = &records
        .iter()
        .find(|rec| rec.run == run)
        .ok_or_else(|| PipelineError::Config(format!("run {run} has no stored record")))?
        .spec;
    let train = sample(spec, net, cfg.dataset.n_scenarios, scenario_stream(run))?;
    let saa_opts = cfg.saa_options(cfg.compare.alpha)?;
    let (dm_saa, sol_saa) = solve_saa(net, ptdf, &train, &saa_opts)?;
    let sur_opts = cfg.surrogate_options();
    let (dm_sur, sol_sur) = solve_surrogate(net, ensemble, &train, &sur_opts)?;
    let budget = dm_sur.budget;
    let optimal = crate::mip::MipStatus::Optimal;
    if sol_saa.status != optimal || sol_sur.status != optimal {
        log::warn!(
            "run {run}: comparison solve failed (saa {:?}, surrogate {:?})",
            sol_saa.status,
            sol_sur.status
        );
        return Ok(ReportRow {
            sample: 0,
            run,
            ok: false,
            cost_saa: None,
            cost_surrogate: None,
            delta: None,
            delta_pct: None,
            violations_surrogate: None,
            budget,
        });
    }
    let check =
        expost_validate_on(net, ptdf, &train, &sol_sur.p, &sol_sur.beta, &dm_saa.monitored)?;
    let delta = sol_sur.cost - sol_saa.cost;
    Ok(ReportRow {
        sample: 0,
        run,
        ok: true,
        cost_saa: Some(sol_saa.cost),
        cost_surrogate: Some(sol_sur.cost),
        delta: Some(delta),
        delta_pct: Some(100.0 * delta / sol_saa.cost),
        violations_surrogate: Some(check.n_violated),
        budget,
    })
}

fn delta_stats(rows: &[ReportRow]) -> (Option<f64>, Option<f64>) {
    let deltas: Vec<f64> = rows.iter().filter_map(|r| r.delta_pct).collect();
    if deltas.is_empty() {
        return (None, None);
    }
    let n = deltas.len() as f64;
    let mean = deltas.iter().sum::<f64>() / n;
    let std = if deltas.len() < 2 {
        0.0
    } else {
        (deltas.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    (Some(mean), Some(std))
}

fn prepare_sets(
    net: &Network,
    ptdf: &Ptdf,
    cfg: &ExperimentConfig,
) -> Result<(DatasetBundle, Dataset, Dataset), PipelineError> {
    let bundle = generate_dataset_with(net, ptdf, cfg)?;
    let mut rng = substream(cfg.seeds.master, STREAM_REBALANCE);
    let balanced = rebalance(&bundle.dataset, cfg.rebalance.target_ratio, &mut rng)?;
    let mut rng = substream(cfg.seeds.master, STREAM_SPLIT);
    let (train, test) = split(&balanced, cfg.split.train_fraction, &mut rng)?;
    Ok((bundle, train, test))
}

/// Dataset generation, rebalancing, and the stratified split, on the
/// streams [`run_comparison`] uses. The pieces every training workflow
/// shares.
pub fn prepare_training_sets(
    net: &Network,
    cfg: &ExperimentConfig,
) -> Result<(DatasetBundle, Dataset, Dataset), PipelineError> {
    cfg.validate()?;
    let ptdf = build_ptdf(net)?;
    prepare_sets(net, &ptdf, cfg)
}

/// The full experiment: dataset, rebalance, split, ensemble training, and
/// the per-sample cost comparison on held-out runs.
pub fn run_comparison(
    net: &Network,
    cfg: &ExperimentConfig,
) -> Result<ComparisonOutput, PipelineError> {
    cfg.validate()?;
    let ptdf = build_ptdf(net)?;
    let (bundle, train, test) = prepare_sets(net, &ptdf, cfg)?;
    let (xs, ys) = train.xy();
    let params = cfg.bagging_params(cfg.ensemble.n_planes);
    let ensemble = train_bagging(&xs, &ys, train.feature_order.clone(), &params)?;
    let (txs, tys) = test.xy();
    let metrics = evaluate(&ensemble, &txs, &tys);
    let runs = select_test_runs(&test, cfg.compare.n_test_samples);
    let rows = compare_with_ensemble(net, &ptdf, cfg, &bundle.records, &ensemble, &runs)?;
    let (mean_delta_pct, std_delta_pct) = delta_stats(&rows);
    let report = ExperimentReport {
        rows,
        mean_delta_pct,
        std_delta_pct,
        metrics,
        n_train: train.n(),
        n_test: test.n(),
        skipped_solves: bundle.skipped_solves,
    };
    Ok(ComparisonOutput { report, ensemble, bundle, train, test })
}

// ---------------------------------------------------------------------------
// Ensemble-size sweep

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub m: usize,
    pub metrics: Metrics,
}

/// Trains one ensemble per requested size on a fixed train split and scores
/// each on the fixed test split. The shared derived seed nests the
/// bootstraps: size M and M+1 use identical first-M planes, so the sweep
/// isolates the effect of adding planes.
pub fn sweep_ensemble_size(
    net: &Network,
    cfg: &ExperimentConfig,
    sizes: &[usize],
) -> Result<Vec<SweepPoint>, PipelineError> {
    if sizes.is_empty() {
        return Err(PipelineError::Config("sweep sizes must not be empty".into()));
    }
    cfg.validate()?;
    let ptdf = build_ptdf(net)?;
    let (_, train, test) = prepare_sets(net, &ptdf, cfg)?;
    let (xs, ys) = train.xy();
    let (txs, tys) = test.xy();
    let mut points = Vec::with_capacity(sizes.len());
    for &m in sizes {
        if m == 0 {
            return Err(PipelineError::Config("sweep size 0 is meaningless".into()));
        }
        let params = cfg.bagging_params(m);
        let ensemble = train_bagging(&xs, &ys, train.feature_order.clone(), &params)?;
        points.push(SweepPoint { m, metrics: evaluate(&ensemble, &txs, &tys) });
    }
    Ok(points)
}

// ---------------------------------------------------------------------------
// Writers

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

/// Labeled rows with their provenance columns. One line per solve:
/// run, alpha, label, Monte Carlo violation count, true cost, features.
pub fn write_dataset_csv<W: io::Write>(
    bundle: &DatasetBundle,
    out: W,
) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![
        "run".to_string(),
        "alpha".to_string(),
        "label".to_string(),
        "violations".to_string(),
        "cost".to_string(),
    ];
    header.extend(bundle.dataset.feature_order.iter().cloned());
    w.write_record(&header)?;
    for (row, rec) in bundle.dataset.rows.iter().zip(&bundle.records) {
        let mut line = vec![
            row.run.to_string(),
            fmt(row.alpha),
            fmt(row.y),
            rec.violations.to_string(),
            fmt(rec.solution.cost),
        ];
        line.extend(row.x.iter().map(|&v| fmt(v)));
        w.write_record(&line)?;
    }
    w.flush()?;
    Ok(())
}

/// Comparison table, one row per test sample.
pub fn write_report_csv<W: io::Write>(
    report: &ExperimentReport,
    out: W,
) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "sample",
        "run",
        "cost_saa",
        "cost_surrogate",
        "delta",
        "delta_pct",
        "violations_surrogate",
        "budget",
        "ok",
    ])?;
    for r in &report.rows {
        w.write_record(&[
            r.sample.to_string(),
            r.run.to_string(),
            fmt_opt(r.cost_saa),
            fmt_opt(r.cost_surrogate),
            fmt_opt(r.delta),
            fmt_opt(r.delta_pct),
            r.violations_surrogate.map(|v| v.to_string()).unwrap_or_default(),
            r.budget.to_string(),
            r.ok.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-sample relative cost increase, for the cost-gap distribution plot.
pub fn write_delta_plot_csv<W: io::Write>(
    report: &ExperimentReport,
    out: W,
) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sample", "delta_pct"])?;
    for r in report.rows.iter().filter(|r| r.ok) {
        w.write_record(&[r.sample.to_string(), fmt_opt(r.delta_pct)])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-sample in-sample violations against the budget cap, for the budget
/// plot.
pub fn write_violation_plot_csv<W: io::Write>(
    report: &ExperimentReport,
    out: W,
) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sample", "violations", "budget"])?;
    for r in report.rows.iter().filter(|r| r.ok) {
        w.write_record(&[
            r.sample.to_string(),
            r.violations_surrogate.map(|v| v.to_string()).unwrap_or_default(),
            r.budget.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Accuracy and confusion counts per ensemble size, for the size-sweep plot.
pub fn write_sweep_csv<W: io::Write>(points: &[SweepPoint], out: W) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "m",
        "accuracy",
        "true_positive",
        "true_negative",
        "false_positive",
        "false_negative",
    ])?;
    for p in points {
        w.write_record(&[
            p.m.to_string(),
            fmt(p.metrics.accuracy()),
            p.metrics.true_positive.to_string(),
            p.metrics.true_negative.to_string(),
            p.metrics.false_positive.to_string(),
            p.metrics.false_negative.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
