//! Demand/wind scenario sampling with reproducible substreams.
//!
//! Randomness is pinned to ChaCha12 (`rand_chacha`), a counter-based stream
//! cipher generator: a 64-bit seed plus a 64-bit stream id select an
//! independent, platform-stable sequence. Every consumer of randomness in the
//! experiment pipeline owns a `(seed, stream)` pair, so adding runs or
//! reordering work never shifts anyone else's draws.
//!
//! A scenario draws every bus demand as `pd_mean + sigma_d * xi` and every
//! wind infeed as `max(0, mu_w + sigma_w * xi)` with independent standard
//! normals, in bus order then wind-bus order. The scenario's aggregate
//! imbalance `omega` is the quantity the affine reserve policy responds to;
//! its composition is a modeling switch:
//!
//! * `load_only`: omega = sum of demand deviations.
//! * `net` (default): omega = demand deviations minus wind deviations, which
//!   makes `sum(p_g + beta_g * omega) + wind = demand` hold exactly per
//!   scenario when `sum(beta) = 1`.

use crate::netcase::{BusId, Network};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("sigma_d has {got} entries, network has {expected} buses")]
    SigmaLength { expected: usize, got: usize },
    #[error("wind stats have lengths mu={mu}, sigma={sigma} for {buses} wind buses")]
    WindLength { buses: usize, mu: usize, sigma: usize },
    #[error("wind bus {bus} is not in the network")]
    UnknownWindBus { bus: BusId },
    #[error("negative standard deviation {value}")]
    NegativeSigma { value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OmegaComposition {
    LoadOnly,
    #[default]
    Net,
}

/// Distributional description of uncertain demand and wind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintySpec {
    /// Per-bus demand standard deviation, MW, aligned with [`Network::buses`].
    pub sigma_d: Vec<f64>,
    pub wind_buses: Vec<BusId>,
    /// Mean infeed per wind bus, MW.
    pub mu_w: Vec<f64>,
    /// Standard deviation per wind bus, MW.
    pub sigma_w: Vec<f64>,
    pub omega_composition: OmegaComposition,
    pub seed: u64,
}

impl UncertaintySpec {
    /// Demand-only spec with the conventional sigma_d = factor * pd_mean.
    pub fn demand_only(net: &Network, sigma_factor: f64, seed: u64) -> Self {
        UncertaintySpec {
            sigma_d: net.buses.iter().map(|b| sigma_factor * b.pd_mean).collect(),
            wind_buses: Vec::new(),
            mu_w: Vec::new(),
            sigma_w: Vec::new(),
            omega_composition: OmegaComposition::Net,
            seed,
        }
    }

    pub fn check(&self, net: &Network) -> Result<(), ScenarioError> {
        if self.sigma_d.len() != net.buses.len() {
            return Err(ScenarioError::SigmaLength {
                expected: net.buses.len(),
                got: self.sigma_d.len(),
            });
        }
        if self.mu_w.len() != self.wind_buses.len() || self.sigma_w.len() != self.wind_buses.len() {
            return Err(ScenarioError::WindLength {
                buses: self.wind_buses.len(),
                mu: self.mu_w.len(),
                sigma: self.sigma_w.len(),
            });
        }
        let index = net.bus_index();
        for &b in &self.wind_buses {
            if !index.contains_key(&b) {
                return Err(ScenarioError::UnknownWindBus { bus: b });
            }
        }
        for &s in self.sigma_d.iter().chain(&self.sigma_w) {
            if s < 0.0 {
                return Err(ScenarioError::NegativeSigma { value: s });
            }
        }
        Ok(())
    }

    /// Analytic variance of omega for the untruncated distributions.
    /// Demand and wind are independent, so variances add under either
    /// composition. Wind truncation at zero is ignored here; keep mu_w a few
    /// sigmas above zero for the analytic value to track the empirical one.
    pub fn var_omega(&self) -> f64 {
        let load: f64 = self.sigma_d.iter().map(|s| s * s).sum();
        match self.omega_composition {
            OmegaComposition::LoadOnly => load,
            OmegaComposition::Net => load + self.sigma_w.iter().map(|s| s * s).sum::<f64>(),
        }
    }
}

/// One joint realization of demand and wind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    /// Per-bus demand, MW.
    pub demand: Vec<f64>,
    /// Per-bus wind infeed, MW (zero off wind buses).
    pub wind: Vec<f64>,
    /// Aggregate imbalance this scenario induces, MW.
    pub omega: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSet {
    pub spec: UncertaintySpec,
    pub scenarios: Vec<Scenario>,
}

impl ScenarioSet {
    pub fn n(&self) -> usize {
        self.scenarios.len()
    }

    pub fn omega_min(&self) -> f64 {
        self.scenarios.iter().map(|s| s.omega).fold(f64::INFINITY, f64::min)
    }

    pub fn omega_max(&self) -> f64 {
        self.scenarios.iter().map(|s| s.omega).fold(f64::NEG_INFINITY, f64::max)
    }

    /// CSV export: scenario index, omega, demand per bus, wind per wind bus.
    pub fn to_csv<W: std::io::Write>(&self, net: &Network, out: W) -> csv::Result<()> {
        let index = net.bus_index();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["scenario".to_string(), "omega".to_string()];
        header.extend(net.buses.iter().map(|b| format!("d_{}", b.id)));
        header.extend(self.spec.wind_buses.iter().map(|b| format!("w_{b}")));
        w.write_record(&header)?;
        for (i, sc) in self.scenarios.iter().enumerate() {
            let mut rec = vec![format!("{i}"), format!("{}", sc.omega)];
            rec.extend(sc.demand.iter().map(|v| format!("{v}")));
            rec.extend(self.spec.wind_buses.iter().map(|b| format!("{}", sc.wind[index[b]])));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// The pinned generator for `(seed, stream)`.
pub fn substream(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws `n` scenarios from `spec` on substream `stream` of `spec.seed`.
pub fn sample(
    spec: &UncertaintySpec,
    net: &Network,
    n: usize,
    stream: u64,
) -> Result<ScenarioSet, ScenarioError> {
    spec.check(net)?;
    let index = net.bus_index();
    let wind_pos: Vec<usize> = spec.wind_buses.iter().map(|b| index[b]).collect();
    let mut rng = substream(spec.seed, stream);
    let mut scenarios = Vec::with_capacity(n);
    for _ in 0..n {
        let mut demand = Vec::with_capacity(net.buses.len());
        let mut dev_d = 0.0;
        for (bus, sigma) in net.buses.iter().zip(&spec.sigma_d) {
            let xi: f64 = StandardNormal.sample(&mut rng);
            let d = bus.pd_mean + sigma * xi;
            dev_d += d - bus.pd_mean;
            demand.push(d);
        }
        let mut wind = vec![0.0; net.buses.len()];
        let mut dev_w = 0.0;
        for ((pos, mu), sigma) in wind_pos.iter().zip(&spec.mu_w).zip(&spec.sigma_w) {
            let xi: f64 = StandardNormal.sample(&mut rng);
            let w = (mu + sigma * xi).max(0.0);
            dev_w += w - mu;
            wind[*pos] = w;
        }
        let omega = match spec.omega_composition {
            OmegaComposition::LoadOnly => dev_d,
            OmegaComposition::Net => dev_d - dev_w,
        };
        scenarios.push(Scenario { demand, wind, omega });
    }
    Ok(ScenarioSet { spec: spec.clone(), scenarios })
}

/// Uniform factor ranges for [`perturb_wind_stats`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbRanges {
    pub mu: (f64, f64),
    pub sigma: (f64, f64),
}

impl Default for PerturbRanges {
    fn default() -> Self {
        PerturbRanges { mu: (0.8, 1.2), sigma: (0.8, 1.2) }
    }
}

/// Independently rescales each wind bus's mu and sigma by uniform factors
/// drawn from `ranges`. Demand stats, composition, and seed are untouched.
pub fn perturb_wind_stats(
    spec: &UncertaintySpec,
    rng: &mut impl Rng,
    ranges: &PerturbRanges,
) -> UncertaintySpec {
    let mut out = spec.clone();
    for mu in &mut out.mu_w {
        *mu *= rng.gen_range(ranges.mu.0..=ranges.mu.1);
    }
    for sigma in &mut out.sigma_w {
        *sigma *= rng.gen_range(ranges.sigma.0..=ranges.sigma.1);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcase::parse_case;

    const CASE3: &str = include_str!("../cases/case3.m");

    fn net3() -> Network {
        parse_case(CASE3).unwrap()
    }

    fn wind_spec(seed: u64) -> UncertaintySpec {
        let net = net3();
        UncertaintySpec {
            sigma_d: net.buses.iter().map(|b| 0.03 * b.pd_mean).collect(),
            wind_buses: vec![2],
            mu_w: vec![30.0],
            sigma_w: vec![5.0],
            omega_composition: OmegaComposition::Net,
            seed,
        }
    }

    #[test]
    fn degenerate_sigmas_reproduce_means() {
        let net = net3();
        let spec = UncertaintySpec {
            sigma_d: vec![0.0; 3],
            wind_buses: vec![2],
            mu_w: vec![30.0],
            sigma_w: vec![0.0],
            omega_composition: OmegaComposition::Net,
            seed: 7,
        };
        let set = sample(&spec, &net, 10, 0).unwrap();
        for sc in &set.scenarios {
            for (d, b) in sc.demand.iter().zip(&net.buses) {
                assert_eq!(*d, b.pd_mean);
            }
            assert_eq!(sc.wind[1], 30.0);
            assert_eq!(sc.omega, 0.0);
        }
    }

    #[test]
    fn identical_seed_and_stream_bitwise_equal() {
        let net = net3();
        let spec = wind_spec(13);
        let a = sample(&spec, &net, 50, 4).unwrap();
        let b = sample(&spec, &net, 50, 4).unwrap();
        assert_eq!(a, b);
        let c = sample(&spec, &net, 50, 5).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sample_std_tracks_sigma() {
        let net = net3();
        let mut spec = wind_spec(99);
        spec.sigma_d = vec![0.0, 0.0, 3.0];
        spec.wind_buses.clear();
        spec.mu_w.clear();
        spec.sigma_w.clear();
        let set = sample(&spec, &net, 50_000, 0).unwrap();
        let mean_d = net.buses[2].pd_mean;
        let var: f64 = set
            .scenarios
            .iter()
            .map(|s| (s.demand[2] - mean_d).powi(2))
            .sum::<f64>()
            / (set.n() as f64 - 1.0);
        let std = var.sqrt();
        assert!((2.94..=3.06).contains(&std), "sample std {std} outside [2.94, 3.06]");
    }

    #[test]
    fn wind_truncated_at_zero() {
        let net = net3();
        let mut spec = wind_spec(3);
        spec.mu_w = vec![0.0];
        spec.sigma_w = vec![10.0];
        let set = sample(&spec, &net, 2000, 0).unwrap();
        assert!(set.scenarios.iter().all(|s| s.wind[1] >= 0.0));
        assert!(set.scenarios.iter().any(|s| s.wind[1] == 0.0));
    }

    #[test]
    fn omega_recomputes_from_stored_fields() {
        let net = net3();
        let set = sample(&wind_spec(21), &net, 500, 2).unwrap();
        for sc in &set.scenarios {
            let dev_d: f64 = sc
                .demand
                .iter()
                .zip(&net.buses)
                .map(|(d, b)| d - b.pd_mean)
                .sum();
            let dev_w: f64 = sc.wind[1] - set.spec.mu_w[0];
            assert!((sc.omega - (dev_d - dev_w)).abs() <= 1e-9);
        }
    }

    #[test]
    fn var_omega_compositions() {
        let net = net3();
        let mut spec = wind_spec(0);
        spec.sigma_d = vec![0.0, 3.0, 4.0];
        spec.sigma_w = vec![5.0];
        spec.omega_composition = OmegaComposition::LoadOnly;
        assert_eq!(spec.var_omega(), 25.0);
        spec.omega_composition = OmegaComposition::Net;
        assert_eq!(spec.var_omega(), 50.0);
        spec.sigma_d = vec![0.0; 3];
        spec.sigma_w = vec![0.0];
        assert_eq!(spec.var_omega(), 0.0);
        let _ = net;
    }

    #[test]
    fn empirical_omega_variance_matches_analytic() {
        let net = net3();
        // mu_w = 6 sigma_w keeps truncation negligible.
        let mut spec = wind_spec(17);
        spec.mu_w = vec![30.0];
        spec.sigma_w = vec![5.0];
        let set = sample(&spec, &net, 50_000, 1).unwrap();
        let mean: f64 = set.scenarios.iter().map(|s| s.omega).sum::<f64>() / set.n() as f64;
        let var: f64 = set
            .scenarios
            .iter()
            .map(|s| (s.omega - mean).powi(2))
            .sum::<f64>()
            / (set.n() as f64 - 1.0);
        let analytic = spec.var_omega();
        assert!(
            (var - analytic).abs() <= 0.05 * analytic,
            "empirical {var} vs analytic {analytic}"
        );
    }

    #[test]
    fn perturb_identity_ranges_is_identity() {
        let spec = wind_spec(5);
        let mut rng = substream(5, 77);
        let ranges = PerturbRanges { mu: (1.0, 1.0), sigma: (1.0, 1.0) };
        let out = perturb_wind_stats(&spec, &mut rng, &ranges);
        assert_eq!(out, spec);
    }

    #[test]
    fn perturb_factors_stay_in_range() {
        let spec = wind_spec(5);
        let ranges = PerturbRanges::default();
        let mut rng = substream(5, 78);
        for _ in 0..200 {
            let out = perturb_wind_stats(&spec, &mut rng, &ranges);
            let f_mu = out.mu_w[0] / spec.mu_w[0];
            let f_sig = out.sigma_w[0] / spec.sigma_w[0];
            assert!((0.8..=1.2).contains(&f_mu));
            assert!((0.8..=1.2).contains(&f_sig));
        }
    }

    #[test]
    fn perturb_mean_factor_near_one() {
        let spec = wind_spec(5);
        let ranges = PerturbRanges::default();
        let mut rng = substream(5, 79);
        let n = 10_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let out = perturb_wind_stats(&spec, &mut rng, &ranges);
            acc += out.mu_w[0] / spec.mu_w[0];
        }
        let mean = acc / n as f64;
        assert!((0.99..=1.01).contains(&mean), "mean factor {mean}");
    }

    #[test]
    fn unknown_wind_bus_rejected() {
        let net = net3();
        let mut spec = wind_spec(1);
        spec.wind_buses = vec![9];
        assert!(matches!(
            sample(&spec, &net, 1, 0),
            Err(ScenarioError::UnknownWindBus { bus: 9 })
        ));
    }
}
