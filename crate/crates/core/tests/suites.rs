//! The sensitivity, ablation, and overfitting suites on miniature configs.

use attentive_gp::harness::{
    run_ablation_suite, run_experiment, run_overfitting_suite, run_sensitivity_suite,
    read_curves_csv, summarize, EnvSpec, ExperimentConfig, Strategy,
};

fn mini_config(out: &str) -> ExperimentConfig {
    ExperimentConfig {
        env: EnvSpec::SynthRaster(7),
        kernel: "ak".into(),
        strategy: Strategy::Random,
        m: 5,
        hidden_dim: 5,
        n_init: 30,
        n_max: 40,
        seeds: vec![0, 1],
        test_grid: 10,
        out_dir: std::env::temp_dir().join("akgp_suites").join(out),
        ..Default::default()
    }
}

#[test]
fn sensitivity_suite_sweeps_every_setting() {
    let base = mini_config("sensitivity");
    let cells = run_sensitivity_suite(&base).unwrap();
    // 5 values of M, 4 of H, 4 of l_min, 4 of l_max
    assert_eq!(cells.len(), 17);
    for cell in &cells {
        assert!(cell.error.is_none(), "{} failed: {:?}", cell.label, cell.error);
        assert!(cell.summary.is_some(), "{} has no summary", cell.label);
        // per-cell curves CSV: one row per (seed, epoch)
        let rows = read_curves_csv(&base.out_dir.join(format!("{}.csv", cell.label))).unwrap();
        let epochs_per_seed = base.n_max - base.n_init + 1;
        assert_eq!(rows.len(), base.seeds.len() * epochs_per_seed);
    }
    assert!(base.out_dir.join("sensitivity_summary.csv").exists());

    // the cell matching the base config is the experiment itself
    let direct = summarize("direct", &run_experiment(&base).unwrap()).unwrap();
    let matching = cells.iter().find(|c| c.label == "sens_m_5").unwrap();
    let cell_summary = matching.summary.as_ref().unwrap();
    assert_eq!(cell_summary.mean.msll, direct.mean.msll);
    assert_eq!(cell_summary.mean.smse, direct.mean.smse);
}

#[test]
fn ablation_suite_covers_the_four_variants() {
    let mut base = mini_config("ablation");
    // the suite forces random sampling regardless of the base strategy
    base.strategy = Strategy::Myopic;
    let cells = run_ablation_suite(&base).unwrap();
    let labels: Vec<&str> = cells.iter().map(|c| c.label.as_str()).collect();
    assert_eq!(labels, ["ablation_ak", "ablation_ak-weight", "ablation_ak-mask", "ablation_ak-nnx2"]);
    for cell in &cells {
        assert!(cell.error.is_none(), "{} failed: {:?}", cell.label, cell.error);
        let rows = read_curves_csv(&base.out_dir.join(format!("{}.csv", cell.label))).unwrap();
        // random sampling adds one point per epoch for every variant
        assert_eq!(rows.len(), base.seeds.len() * (base.n_max - base.n_init + 1));
    }
    assert!(base.out_dir.join("ablation_summary.csv").exists());
}

#[test]
fn overfitting_suite_traces_follow_the_expected_shapes() {
    let config = ExperimentConfig {
        env: EnvSpec::SynthRaster(7),
        kernel: "ak".into(),
        strategy: Strategy::Random,
        n_max: 150,
        seeds: vec![0],
        test_grid: 30,
        out_dir: std::env::temp_dir().join("akgp_suites").join("overfitting"),
        ..Default::default()
    };
    let iters = 1000;
    let traces = run_overfitting_suite(&config, iters).unwrap();
    assert_eq!(traces.len(), 4);

    let smoothed = |xs: &[f64]| -> Vec<f64> {
        let w = 25usize;
        (0..xs.len())
            .map(|i| {
                let lo = i.saturating_sub(w);
                let hi = (i + w + 1).min(xs.len());
                xs[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
            })
            .collect()
    };
    let trend_up_down = |xs: &[f64]| -> (f64, f64) {
        let s = smoothed(xs);
        let up = s.windows(2).map(|w| (w[1] - w[0]).max(0.0)).sum();
        let down = s.windows(2).map(|w| (w[0] - w[1]).max(0.0)).sum();
        (up, down)
    };
    let late_rise = |xs: &[f64]| -> f64 {
        let min = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        xs.last().unwrap() - min
    };

    let mut rises = std::collections::HashMap::new();
    for trace in &traces {
        assert_eq!(trace.train_msll.len(), iters, "{} trace truncated", trace.kernel);
        assert_eq!(trace.test_msll.len(), iters);
        assert!(config.out_dir.join(format!("overfit_{}.csv", trace.kernel)).exists());
        rises.insert(trace.kernel.clone(), late_rise(&trace.test_msll));

        // kernels that start underfit descend in smoothed trend; the attentive
        // kernel starts near-interpolating and only calibrates, so its train
        // trace is exempt from the monotone check
        if trace.kernel != "ak" {
            let (up, down) = trend_up_down(&trace.train_msll);
            assert!(
                up <= 0.05 * down + 0.05,
                "{}: smoothed train MSLL rose {up:.3} against {down:.3} of descent",
                trace.kernel
            );
        }
    }

    // the stationary baseline keeps a flat test trace while at least one
    // nonstationary kernel shows a late-stage rise
    let rbf_rise = rises["rbf"];
    let max_nonstat_rise = ["ak", "gibbs", "dkl"]
        .iter()
        .map(|k| rises[*k])
        .fold(f64::NEG_INFINITY, f64::max);
    assert!(rbf_rise < 0.05, "rbf test MSLL rose {rbf_rise:.3} from its minimum");
    assert!(
        max_nonstat_rise > rbf_rise + 0.05,
        "no nonstationary late-stage rise: max {max_nonstat_rise:.3} vs rbf {rbf_rise:.3}"
    );
}
