//! One-factor-at-a-time sensitivity sweeps, the kernel ablation, and the
//! long-run overfitting analysis.

use std::io::Write as _;

use super::{
    fit_fixed_dataset, run_experiment, summarize, train_test_msll, write_curves_csv,
    write_summary_csv, ExperimentConfig, HarnessError, Strategy, SummaryRow,
};

/// Outcome of one sweep setting. Failed cells keep their diagnostic so the
/// rest of the suite can finish.
#[derive(Debug, Clone)]
pub struct SweepCell {
    pub label: String,
    pub summary: Option<SummaryRow>,
    pub error: Option<String>,
}

fn run_cell(config: &ExperimentConfig, label: &str) -> SweepCell {
    match run_experiment(config) {
        Ok(outcomes) => {
            let csv = config.out_dir.join(format!("{label}.csv"));
            if let Err(e) = std::fs::create_dir_all(&config.out_dir)
                .map_err(HarnessError::from)
                .and_then(|_| write_curves_csv(&csv, &outcomes))
            {
                return SweepCell { label: label.to_string(), summary: None, error: Some(e.to_string()) };
            }
            let failed: Vec<String> = outcomes
                .iter()
                .filter_map(|o| o.error.as_ref().map(|e| format!("seed {}: {e}", o.seed)))
                .collect();
            SweepCell {
                label: label.to_string(),
                summary: summarize(label, &outcomes),
                error: if failed.is_empty() { None } else { Some(failed.join("; ")) },
            }
        }
        Err(e) => SweepCell { label: label.to_string(), summary: None, error: Some(e.to_string()) },
    }
}

/// Sweeps M, H, l_min, and l_max one at a time from the base config and
/// writes per-setting metric curves plus `sensitivity_summary.csv`.
pub fn run_sensitivity_suite(base: &ExperimentConfig) -> Result<Vec<SweepCell>, HarnessError> {
    base.validate()?;
    let mut cells = Vec::new();

    let m_values = [2usize, 3, 5, 10, 20];
    let h_values = [2usize, 5, 10, 20];
    let l_min_values = [0.005, 0.01, 0.05, 0.1];
    let l_max_values = [0.1, 0.3, 0.5, 1.0];

    for m in m_values {
        let mut c = base.clone();
        c.m = m;
        cells.push(run_cell(&c, &format!("sens_m_{m}")));
    }
    for h in h_values {
        let mut c = base.clone();
        c.hidden_dim = h;
        cells.push(run_cell(&c, &format!("sens_h_{h}")));
    }
    for l_min in l_min_values {
        let mut c = base.clone();
        c.l_min = l_min;
        cells.push(run_cell(&c, &format!("sens_lmin_{l_min}")));
    }
    for l_max in l_max_values {
        let mut c = base.clone();
        c.l_max = l_max;
        cells.push(run_cell(&c, &format!("sens_lmax_{l_max}")));
    }

    let rows: Vec<SummaryRow> = cells.iter().filter_map(|c| c.summary.clone()).collect();
    write_summary_csv(&base.out_dir.join("sensitivity_summary.csv"), &rows)?;
    Ok(cells)
}

/// Runs the four attentive-kernel variants under random sampling and writes
/// per-variant curves plus `ablation_summary.csv`.
pub fn run_ablation_suite(base: &ExperimentConfig) -> Result<Vec<SweepCell>, HarnessError> {
    base.validate()?;
    let mut cells = Vec::new();
    for kernel in ["ak", "ak-weight", "ak-mask", "ak-nnx2"] {
        let mut c = base.clone();
        c.kernel = kernel.into();
        c.strategy = Strategy::Random;
        cells.push(run_cell(&c, &format!("ablation_{kernel}")));
    }
    let rows: Vec<SummaryRow> = cells.iter().filter_map(|c| c.summary.clone()).collect();
    write_summary_csv(&base.out_dir.join("ablation_summary.csv"), &rows)?;
    Ok(cells)
}

/// Per-iteration train/test MSLL for one kernel under long optimization.
#[derive(Debug, Clone)]
pub struct OverfitTrace {
    pub kernel: String,
    pub train_msll: Vec<f64>,
    pub test_msll: Vec<f64>,
}

/// Fits each kernel once on a fixed uniformly sampled dataset of `n_max`
/// points and optimizes for `iters` iterations, logging train and test MSLL
/// at every iteration into `overfit_<kernel>.csv`.
pub fn run_overfitting_suite(
    base: &ExperimentConfig,
    iters: usize,
) -> Result<Vec<OverfitTrace>, HarnessError> {
    base.validate()?;
    std::fs::create_dir_all(&base.out_dir)?;
    let seed = base.seeds[0];
    let mut traces = Vec::new();

    for kernel in ["rbf", "ak", "gibbs", "dkl"] {
        let mut config = base.clone();
        config.kernel = kernel.into();

        let mut train_msll = Vec::with_capacity(iters);
        let mut test_msll = Vec::with_capacity(iters);
        // assemble the fixed dataset first, then optimize with tracing
        let fit = fit_fixed_dataset(&config, seed, config.n_max, 0, |_, _| {})?;
        let mut model = fit.model;
        let normalizer = fit.normalizer;
        let x_test_norm = fit.x_test_norm;
        let y_test = fit.y_test;
        let mut adam = crate::gpr::AdamState::new(model.opt_params().len());
        model.optimize_with(&mut adam, iters, config.lr_hyper, config.lr_net, |_, m| {
            if let Ok((train, test)) = train_test_msll(m, &normalizer, &x_test_norm, &y_test) {
                train_msll.push(train);
                test_msll.push(test);
            }
        })?;

        let mut out = String::from("iter,train_msll,test_msll\n");
        for (i, (train, test)) in train_msll.iter().zip(&test_msll).enumerate() {
            out.push_str(&format!("{i},{train},{test}\n"));
        }
        let mut file = std::fs::File::create(base.out_dir.join(format!("overfit_{kernel}.csv")))?;
        file.write_all(out.as_bytes())?;

        traces.push(OverfitTrace { kernel: kernel.to_string(), train_msll, test_msll });
    }
    Ok(traces)
}
