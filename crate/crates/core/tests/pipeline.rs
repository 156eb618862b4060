//! End-to-end checks of the dataset and comparison pipeline on the 3-bus
//! fixture, anchored by an oracle that relabels every stored record through
//! the angle formulation with its own Gaussian elimination.

use jcc_core::learn::{Ensemble, Plane, TrainingMeta, ENSEMBLE_VERSION};
use jcc_core::netcase::{parse_case, Network};
use jcc_core::pipeline::{
    compare_with_ensemble, feature_names, generate_dataset, mc_stream, run_comparison,
    select_test_runs, write_dataset_csv, write_report_csv, ExperimentConfig, PipelineError,
};
use jcc_core::ptdf::build_ptdf;
use jcc_core::scenarios::sample;

const CASE3: &str = include_str!("../cases/case3.m");

fn base_cfg() -> ExperimentConfig {
    ExperimentConfig::from_toml("[case]\npath = \"cases/case3.m\"\n").unwrap()
}

/// 3-bus config with wind at bus 3 and test-sized run counts.
fn wind_cfg(n_runs: usize, n_scenarios: usize, mc: usize, alphas: &[f64]) -> ExperimentConfig {
    let mut cfg = base_cfg();
    cfg.dataset.n_runs = n_runs;
    cfg.dataset.n_scenarios = n_scenarios;
    cfg.dataset.mc_validation = mc;
    cfg.dataset.alphas = alphas.to_vec();
    cfg.uncertainty.wind_buses = vec![3];
    cfg.uncertainty.mu_w = vec![20.0];
    cfg.uncertainty.sigma_w = vec![5.0];
    cfg
}

/// DC branch flows from bus angles: strike the slack row and column of the
/// susceptance matrix, solve by Gauss-Jordan with partial pivoting, and read
/// each flow off its angle difference. Shares nothing with the library's
/// injection-shift path beyond the network struct.
fn angle_flows(net: &Network, inj: &[f64]) -> Vec<f64> {
    let nb = net.buses.len();
    let index = net.bus_index();
    let slack = index[&net.ref_bus().unwrap()];
    let mut a = vec![vec![0.0f64; nb]; nb];
    for br in net.branches.iter().filter(|b| b.status) {
        let i = index[&br.from];
        let j = index[&br.to];
        let b = 1.0 / br.reactance_pu;
        a[i][i] += b;
        a[j][j] += b;
        a[i][j] -= b;
        a[j][i] -= b;
    }
    let keep: Vec<usize> = (0..nb).filter(|&n| n != slack).collect();
    let m = keep.len();
    let mut aug = vec![vec![0.0f64; m + 1]; m];
    for (r, &i) in keep.iter().enumerate() {
        for (c, &j) in keep.iter().enumerate() {
            aug[r][c] = a[i][j];
        }
        aug[r][m] = inj[i];
    }
    for col in 0..m {
        let piv = (col..m)
            .max_by(|&x, &y| aug[x][col].abs().total_cmp(&aug[y][col].abs()))
            .unwrap();
        aug.swap(col, piv);
        let d = aug[col][col];
        assert!(d.abs() > 1e-12, "reduced susceptance matrix is singular");
        for r in 0..m {
            if r != col {
                let f = aug[r][col] / d;
                for c in col..=m {
                    aug[r][c] -= f * aug[col][c];
                }
            }
        }
    }
    let mut theta = vec![0.0f64; nb];
    for (r, &i) in keep.iter().enumerate() {
        theta[i] = aug[r][m] / aug[r][r];
    }
    net.branches
        .iter()
        .map(|br| {
            if !br.status {
                return 0.0;
            }
            (theta[index[&br.from]] - theta[index[&br.to]]) / br.reactance_pu
        })
        .collect()
}

#[test]
fn zero_runs_yield_an_empty_dataset() {
    let net = parse_case(CASE3).unwrap();
    let mut cfg = wind_cfg(0, 8, 20, &[0.0]);
    cfg.dataset.n_runs = 0;
    let bundle = generate_dataset(&net, &cfg).unwrap();
    assert!(bundle.dataset.rows.is_empty());
    assert!(bundle.records.is_empty());
    assert_eq!(bundle.skipped_solves, 0);
    let mut csv = Vec::new();
    write_dataset_csv(&bundle, &mut csv).unwrap();
    assert_eq!(
        String::from_utf8(csv).unwrap(),
        "run,alpha,label,violations,cost,p0,p1\n"
    );
    // Downstream stages refuse the empty set rather than limping on.
    assert!(matches!(
        run_comparison(&net, &cfg),
        Err(PipelineError::SingleClass { pos: 0, neg: 0 })
    ));
}

#[test]
fn unlimited_lines_label_every_run_positive() {
    let unlimited = CASE3
        .replace("0.1\t0\t45\t", "0.1\t0\t0\t")
        .replace("0.1\t0\t48\t", "0.1\t0\t0\t")
        .replace("0.1\t0\t30\t", "0.1\t0\t0\t");
    let net = parse_case(&unlimited).unwrap();
    assert!(net.branches.iter().all(|b| b.flow_limit.is_none()), "fixture edit missed a rating");
    let cfg = wind_cfg(3, 8, 30, &[0.0, 0.2]);
    let bundle = generate_dataset(&net, &cfg).unwrap();
    assert_eq!(bundle.records.len(), 6);
    assert_eq!(bundle.skipped_solves, 0);
    for rec in &bundle.records {
        assert_eq!(rec.violations, 0);
        assert_eq!(rec.label, 1.0);
    }
}

#[test]
fn stored_labels_match_an_independent_flow_check() {
    let net = parse_case(CASE3).unwrap();
    let index = net.bus_index();
    let cfg = wind_cfg(20, 6, 150, &[0.0, 1.0 / 3.0]);
    let bundle = generate_dataset(&net, &cfg).unwrap();
    assert_eq!(bundle.records.len(), 40 - bundle.skipped_solves);
    let mut flagged = 0;
    for rec in &bundle.records {
        let mc = sample(&rec.spec, &net, cfg.dataset.mc_validation, mc_stream(rec.run)).unwrap();
        let mut violated = 0usize;
        for sc in &mc.scenarios {
            let mut inj: Vec<f64> =
                (0..net.buses.len()).map(|n| sc.wind[n] - sc.demand[n]).collect();
            for (g, gen) in net.generators.iter().enumerate() {
                inj[index[&gen.bus]] += rec.solution.p[g] + rec.solution.beta[g] * sc.omega;
            }
            let f = angle_flows(&net, &inj);
            let hit = net.branches.iter().enumerate().any(|(l, br)| {
                let lim = br.limit_mw();
                br.status && lim.is_finite() && f[l].abs() > lim * (1.0 + 1e-6) + 1e-9
            });
            if hit {
                violated += 1;
            }
        }
        assert_eq!(
            violated, rec.violations,
            "run {} alpha {}: stored count disagrees with the angle oracle",
            rec.run, rec.alpha
        );
        assert_eq!(rec.label, if violated == 0 { 1.0 } else { -1.0 });
        if violated > 0 {
            flagged += 1;
        }
    }
    // A third of the training scenarios may be bought out at the high alpha,
    // so some dispatches must fail the Monte Carlo check.
    assert!(flagged > 0, "no record was ever violated; the fixture lost its bite");
}

#[test]
fn dataset_generation_repeats_bitwise() {
    let net = parse_case(CASE3).unwrap();
    let cfg = wind_cfg(4, 8, 40, &[0.0, 0.25]);
    let a = generate_dataset(&net, &cfg).unwrap();
    let b = generate_dataset(&net, &cfg).unwrap();
    assert_eq!(a, b);
    let mut csv_a = Vec::new();
    let mut csv_b = Vec::new();
    write_dataset_csv(&a, &mut csv_a).unwrap();
    write_dataset_csv(&b, &mut csv_b).unwrap();
    assert_eq!(csv_a, csv_b);
    let text = String::from_utf8(csv_a).unwrap();
    assert_eq!(text.lines().count(), 1 + a.records.len());
    assert!(text.starts_with("run,alpha,label,violations,cost,p0,p1\n"));
}

#[test]
fn rows_carry_their_records_features() {
    let net = parse_case(CASE3).unwrap();
    for include_beta in [false, true] {
        let mut cfg = wind_cfg(2, 6, 20, &[0.0]);
        cfg.dataset.include_beta = include_beta;
        let bundle = generate_dataset(&net, &cfg).unwrap();
        assert_eq!(bundle.dataset.feature_order, feature_names(&net, include_beta));
        assert_eq!(bundle.dataset.rows.len(), bundle.records.len());
        for (row, rec) in bundle.dataset.rows.iter().zip(&bundle.records) {
            assert_eq!((row.run, row.alpha), (rec.run, rec.alpha));
            let mut want = rec.solution.p.clone();
            if include_beta {
                want.extend_from_slice(&rec.solution.beta);
            }
            assert_eq!(row.x, want);
            assert_eq!(row.y, rec.label);
        }
    }
}

#[test]
fn comparison_report_repeats_bitwise_and_adds_up() {
    let net = parse_case(CASE3).unwrap();
    let mut cfg = wind_cfg(12, 24, 200, &[0.0, 0.25]);
    cfg.ensemble.n_planes = 3;
    cfg.compare.alpha = 0.25;
    cfg.compare.n_test_samples = 3;
    let a = run_comparison(&net, &cfg).unwrap();
    let b = run_comparison(&net, &cfg).unwrap();
    assert_eq!(a.report, b.report);
    assert_eq!(a.ensemble, b.ensemble);
    let mut csv_a = Vec::new();
    let mut csv_b = Vec::new();
    write_report_csv(&a.report, &mut csv_a).unwrap();
    write_report_csv(&b.report, &mut csv_b).unwrap();
    assert_eq!(csv_a, csv_b);

    let report = &a.report;
    assert!(!report.rows.is_empty() && report.rows.len() <= 3);
    assert_eq!(report.metrics.total(), report.n_test);
    assert_eq!(report.n_train + report.n_test, {
        let (pos, neg) = {
            let mut all = a.train.clone();
            all.rows.extend(a.test.rows.iter().cloned());
            all.class_counts()
        };
        pos + neg
    });
    for (i, row) in report.rows.iter().enumerate() {
        assert_eq!(row.sample, i + 1);
        assert_eq!(row.budget, 6, "floor(0.25 * 24)");
        if row.ok {
            let (Some(saa), Some(sur), Some(delta), Some(pct)) =
                (row.cost_saa, row.cost_surrogate, row.delta, row.delta_pct)
            else {
                panic!("ok row {} missing cost fields", row.sample);
            };
            assert!((delta - (sur - saa)).abs() < 1e-9);
            assert!((pct - 100.0 * delta / saa).abs() < 1e-9);
            assert!(row.violations_surrogate.is_some());
        }
    }
    // The test runs really are held-out distinct runs.
    let runs = select_test_runs(&a.test, cfg.compare.n_test_samples);
    assert_eq!(report.rows.iter().map(|r| r.run).collect::<Vec<_>>(), runs);
}

#[test]
fn surrogate_stays_inside_the_exemption_budget() {
    let net = parse_case(CASE3).unwrap();
    let mut cfg = wind_cfg(12, 24, 200, &[0.0, 0.25]);
    cfg.ensemble.n_planes = 3;
    cfg.compare.alpha = 0.25;
    cfg.compare.n_test_samples = 3;
    let out = run_comparison(&net, &cfg).unwrap();
    let ok_rows: Vec<_> = out.report.rows.iter().filter(|r| r.ok).collect();
    assert!(!ok_rows.is_empty());
    for row in ok_rows {
        assert!(
            row.violations_surrogate.unwrap() <= row.budget,
            "sample {}: {} in-sample violations exceed the budget {}",
            row.sample,
            row.violations_surrogate.unwrap(),
            row.budget
        );
    }
}

#[test]
fn vacuous_ensemble_never_raises_the_cost() {
    let net = parse_case(CASE3).unwrap();
    let ptdf = build_ptdf(&net).unwrap();
    let mut cfg = wind_cfg(4, 10, 30, &[0.0]);
    cfg.compare.alpha = 0.0;
    let bundle = generate_dataset(&net, &cfg).unwrap();
    // Every plane votes yes everywhere, so the embedded rows cannot bind and
    // the surrogate can only relax the flow-constrained model.
    let ens = Ensemble {
        version: ENSEMBLE_VERSION,
        feature_order: feature_names(&net, false),
        planes: vec![Plane { w: vec![0.0, 0.0], b: 1.0 }; 2],
        weights: vec![0.5, 0.5],
        training_meta: TrainingMeta { seed: 0, cost: 1.0, tol: 1e-4, max_epochs: 1, n_samples: 0 },
    };
    let rows = compare_with_ensemble(&net, &ptdf, &cfg, &bundle.records, &ens, &[0, 1, 2]).unwrap();
    assert_eq!(rows.len(), 3);
    for row in rows {
        assert!(row.ok, "run {} failed to solve", row.run);
        assert!(row.cost_surrogate.unwrap() <= row.cost_saa.unwrap() + 1e-9);
    }
}
