//! Experiment orchestration: seeded end-to-end runs of the
//! sample-plan-train loop, appendix-style sweeps, and result emission.
//!
//! Every run is fully determined by `(config, seed)`: one ChaCha stream per
//! seed drives the initial samples, the network initialization, the candidate
//! draws, and the observation noise, in that fixed order. Seeds execute as
//! independent parallel jobs.

mod checkpoint;
mod config;
mod export;
mod normalize;
mod suites;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{EnvSpec, ExperimentConfig, Strategy, KERNEL_NAMES};
pub use export::{
    curve_average, plot_metric_svg, read_curves_csv, summarize, write_curves_csv,
    write_summary_csv, CurveAverage, CurveRow, SummaryRow, CURVES_HEADER, SUMMARY_HEADER,
};
pub use normalize::Normalizer;
pub use suites::{
    run_ablation_suite, run_overfitting_suite, run_sensitivity_suite, OverfitTrace, SweepCell,
};

use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::environments::{load_raster, make_synthetic_raster, Env, EnvError, Synth1DEnv, SynthRasterSpec};
use crate::gpr::{GprError, GprModel};
use crate::kernels::{
    AkParams, AkVariant, DklParams, GibbsParams, Kernel, KernelError, LengthscaleGrid, RbfParams,
};
use crate::metrics::{mae, msll, nlpd, rmse, smse, MetricsError, MetricsRecord};
use crate::nn::{l2_normalize_rows, mlp_forward, softmax_rows};
use crate::planning::{
    active_waypoint, informative_waypoint, random_waypoint, track_and_sample, PlanError,
    RobotState, VarianceField,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Gpr(#[from] GprError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

/// Bookkeeping for one decision epoch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpochInfo {
    pub added: usize,
    pub opt_iters: usize,
}

/// Everything one seed produced. A failed seed carries its diagnostic and no
/// records; other seeds are unaffected.
#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub seed: u64,
    pub records: Vec<MetricsRecord>,
    pub epochs: Vec<EpochInfo>,
    pub error: Option<String>,
}

impl ExperimentConfig {
    /// Instantiates the configured environment, applying the noise override.
    pub fn build_env(&self) -> Result<Env, HarnessError> {
        // default sensor noise: 1.0 elevation unit for rasters, 0.1 for the
        // small-amplitude 1-D functions
        let env = match &self.env {
            EnvSpec::RasterFile(path) => {
                let noise = if self.obs_noise_std >= 0.0 { self.obs_noise_std } else { 1.0 };
                Env::Raster(Box::new(load_raster(path, noise)?))
            }
            EnvSpec::SynthRaster(seed) => {
                let noise = if self.obs_noise_std >= 0.0 { self.obs_noise_std } else { 1.0 };
                let spec = SynthRasterSpec { seed: *seed, obs_noise_std: noise, ..Default::default() };
                Env::Raster(Box::new(make_synthetic_raster(&spec)?))
            }
            EnvSpec::OneD(f) => {
                let noise = if self.obs_noise_std >= 0.0 { self.obs_noise_std } else { 0.1 };
                Env::OneD(Synth1DEnv { function: *f, obs_noise_std: noise })
            }
        };
        Ok(env)
    }

    /// Builds the configured kernel for `in_dim`-dimensional inputs, drawing
    /// network initializations from `rng`.
    pub fn build_kernel(&self, in_dim: usize, rng: &mut ChaCha12Rng) -> Result<Kernel, HarnessError> {
        let mid_lengthscale = 0.5 * (self.l_min + self.l_max);
        let kernel = match self.kernel.as_str() {
            "rbf" => Kernel::Rbf(RbfParams::new(self.init_amplitude, mid_lengthscale)?),
            "gibbs" => Kernel::Gibbs(GibbsParams::new_seeded(
                self.init_amplitude,
                in_dim,
                self.hidden_dim,
                self.l_min,
                self.l_max,
                rng,
            )?),
            "dkl" => {
                let feature_dim = if self.feature_dim == 0 { in_dim } else { self.feature_dim };
                Kernel::Dkl(DklParams::new_seeded(
                    self.init_amplitude,
                    in_dim,
                    self.hidden_dim,
                    feature_dim,
                    mid_lengthscale,
                    rng,
                )?)
            }
            name => {
                let variant = match name {
                    "ak" => AkVariant::Full,
                    "ak-weight" => AkVariant::WeightOnly,
                    "ak-mask" => AkVariant::MaskOnly,
                    "ak-nnx2" => AkVariant::TwoNets,
                    _ => return Err(HarnessError::Config(format!("unknown kernel {name:?}"))),
                };
                let grid = LengthscaleGrid::new(self.l_min, self.l_max, self.m)?;
                Kernel::Ak(AkParams::new_seeded(
                    self.init_amplitude,
                    grid,
                    in_dim,
                    self.hidden_dim,
                    variant,
                    rng,
                )?)
            }
        };
        Ok(kernel)
    }
}

/// Fixed uniform evaluation grid over the workspace, with noise-free truth
/// targets. 2-D grids have `res` points per axis, 1-D grids `res` points total
/// (`res = 0` picks the defaults: 100 per axis / 500 points).
pub fn test_grid(env: &Env, res: usize) -> (DMatrix<f64>, DVector<f64>) {
    let bounds = env.bounds();
    let x = match env.dim() {
        1 => {
            let n = if res == 0 { 500 } else { res };
            let (lo, hi) = bounds[0];
            DMatrix::from_fn(n, 1, |i, _| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        }
        _ => {
            let g = if res == 0 { 100 } else { res };
            let (x_lo, x_hi) = bounds[0];
            let (y_lo, y_hi) = bounds[1];
            DMatrix::from_fn(g * g, 2, |i, d| {
                let (row, col) = (i / g, i % g);
                if d == 0 {
                    x_lo + (x_hi - x_lo) * col as f64 / (g - 1) as f64
                } else {
                    y_lo + (y_hi - y_lo) * row as f64 / (g - 1) as f64
                }
            })
        }
    };
    let y = DVector::from_fn(x.nrows(), |i, _| {
        let row: Vec<f64> = x.row(i).iter().cloned().collect();
        env.truth(&row)
    });
    (x, y)
}

/// Scores the model on the (already normalized) test inputs. SMSE and MSLL
/// are computed on standardized quantities, NLPD/RMSE/MAE in original units.
pub fn evaluate_model(
    model: &GprModel,
    normalizer: &Normalizer,
    x_test_norm: &DMatrix<f64>,
    y_test_raw: &DVector<f64>,
    wall_time_s: f64,
) -> Result<MetricsRecord, HarnessError> {
    let pred = model.predict(x_test_norm)?;
    // clamped-to-zero variances become a tiny floor so log losses stay defined
    let variance = pred.variance.map(|v| v.max(1e-12));

    let y_std = normalizer.standardize_targets(y_test_raw);
    let y_train = model.y_train();
    let train_mean = y_train.sum() / y_train.len() as f64;
    let train_var =
        y_train.iter().map(|v| (v - train_mean).powi(2)).sum::<f64>() / y_train.len() as f64;

    let mu_raw = normalizer.destandardize_mean(&pred.mean);
    let var_raw = normalizer.destandardize_variance(&variance);

    Ok(MetricsRecord {
        num_samples: model.n_train(),
        smse: smse(&y_std, &pred.mean)?,
        msll: msll(&y_std, &pred.mean, &variance, train_mean, train_var)?,
        nlpd: nlpd(y_test_raw, &mu_raw, &var_raw)?,
        rmse: rmse(y_test_raw, &mu_raw)?,
        mae: mae(y_test_raw, &mu_raw)?,
        wall_time_s,
    })
}

/// Adapter exposing the GP posterior (over normalized inputs) as a variance
/// surface over workspace locations.
struct PosteriorField<'a> {
    model: &'a GprModel,
    normalizer: &'a Normalizer,
}

impl VarianceField for PosteriorField<'_> {
    fn variances(&self, locations: &DMatrix<f64>) -> Result<DVector<f64>, PlanError> {
        let x = self.normalizer.normalize_inputs(locations);
        // a clamped-to-zero variance still needs a defined entropy; the tiny
        // floor keeps such candidates ranked last instead of erroring out
        self.model
            .predict(&x)
            .map(|p| p.variance.map(|v| v.max(1e-300)))
            .map_err(|e| PlanError::Prediction(e.to_string()))
    }
}

/// Runs every configured seed (in parallel) through the full
/// collect-plan-train loop and returns per-seed metric curves.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<SeedOutcome>, HarnessError> {
    config.validate()?;
    let outcomes: Vec<SeedOutcome> =
        config.seeds.par_iter().map(|seed| run_seed(config, *seed)).collect();
    Ok(outcomes)
}

fn run_seed(config: &ExperimentConfig, seed: u64) -> SeedOutcome {
    match run_seed_inner(config, seed) {
        Ok((records, epochs)) => SeedOutcome { seed, records, epochs, error: None },
        Err(e) => {
            eprintln!("seed {seed} failed: {e}");
            SeedOutcome { seed, records: Vec::new(), epochs: Vec::new(), error: Some(e.to_string()) }
        }
    }
}

fn run_seed_inner(
    config: &ExperimentConfig,
    seed: u64,
) -> Result<(Vec<MetricsRecord>, Vec<EpochInfo>), HarnessError> {
    let started = Instant::now();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let env = config.build_env()?;
    let bounds = env.bounds();
    let dim = env.dim();
    if config.strategy == Strategy::Myopic && dim != 2 {
        return Err(HarnessError::Config("the myopic planner needs a 2-D workspace".into()));
    }

    let (x_test, y_test) = test_grid(&env, config.test_grid);

    // rng order: initial samples, then network init, then the epoch loop
    let x_init = crate::planning::draw_candidates(&bounds, config.n_init, &mut rng);
    let y_init = env.observe(&x_init, &mut rng);
    let normalizer = Normalizer::from_bounds_and_targets(&bounds, &y_init)?;
    let x_test_norm = normalizer.normalize_inputs(&x_test);

    let kernel = config.build_kernel(dim, &mut rng)?;
    let mut model = GprModel::new(kernel, dim, config.init_noise)?;

    let mut records = Vec::new();
    let mut epochs = Vec::new();

    model.add_data(&normalizer.normalize_inputs(&x_init), &normalizer.standardize_targets(&y_init))?;
    // training rule: as many optimizer iterations as samples just collected
    model.optimize(config.n_init, config.lr_hyper, config.lr_net)?;
    epochs.push(EpochInfo { added: config.n_init, opt_iters: config.n_init });
    records.push(evaluate_model(&model, &normalizer, &x_test_norm, &y_test, started.elapsed().as_secs_f64())?);

    // workspace-unit robot scales derived from the normalized-unit config
    let mean_scale = normalizer.scale.iter().sum::<f64>() / normalizer.scale.len() as f64;
    let mut robot = if config.strategy == Strategy::Myopic {
        let center = [normalizer.shift[0], normalizer.shift[1]];
        Some(RobotState::new(
            center,
            config.step_len * mean_scale,
            config.sample_spacing * mean_scale,
        )?)
    } else {
        None
    };

    while model.n_train() < config.n_max {
        let (x_t, y_t) = match config.strategy {
            Strategy::Random => {
                let wp = random_waypoint(&bounds, &mut rng);
                let x = DMatrix::from_fn(1, dim, |_, j| wp[j]);
                let y = env.observe(&x, &mut rng);
                (x, y)
            }
            Strategy::Active => {
                let field = PosteriorField { model: &model, normalizer: &normalizer };
                let wp = active_waypoint(&field, &bounds, &mut rng)?;
                let x = DMatrix::from_fn(1, dim, |_, j| wp[j]);
                let y = env.observe(&x, &mut rng);
                (x, y)
            }
            Strategy::Myopic => {
                let robot = robot.as_mut().expect("myopic strategy has a robot");
                let wp = {
                    let field = PosteriorField { model: &model, normalizer: &normalizer };
                    informative_waypoint(&field, robot, &bounds, &mut rng)?.0
                };
                track_and_sample(robot, wp, &env, &mut rng)
            }
        };
        let n_t = x_t.nrows();
        model.add_data(&normalizer.normalize_inputs(&x_t), &normalizer.standardize_targets(&y_t))?;
        model.optimize(n_t, config.lr_hyper, config.lr_net)?;
        epochs.push(EpochInfo { added: n_t, opt_iters: n_t });
        records.push(evaluate_model(&model, &normalizer, &x_test_norm, &y_test, started.elapsed().as_secs_f64())?);
    }

    if config.dump_grid {
        std::fs::create_dir_all(&config.out_dir)?;
        let path = config.out_dir.join(format!("grid_{}_seed{}.csv", config.run_tag(), seed));
        dump_grid(&path, &model, &normalizer, &x_test, &x_test_norm, &y_test)?;
    }

    Ok((records, epochs))
}

/// Per-grid-point prediction, uncertainty, and error maps, plus the attentive
/// kernel's weight (and, for the two-network variant, membership) rows.
fn dump_grid(
    path: &Path,
    model: &GprModel,
    normalizer: &Normalizer,
    x_test: &DMatrix<f64>,
    x_test_norm: &DMatrix<f64>,
    y_test: &DVector<f64>,
) -> Result<(), HarnessError> {
    use std::io::Write as _;

    let pred = model.predict(x_test_norm)?;
    let mean = normalizer.destandardize_mean(&pred.mean);
    let std = normalizer
        .destandardize_variance(&pred.variance.map(|v| v.max(0.0)))
        .map(f64::sqrt);

    let attention = match model.kernel() {
        Kernel::Ak(p) => {
            let attn = |net| -> Result<DMatrix<f64>, HarnessError> {
                Ok(l2_normalize_rows(&softmax_rows(&mlp_forward(net, x_test_norm).map_err(KernelError::from)?))
                    .map_err(KernelError::from)?)
            };
            let w = attn(&p.net)?;
            let z = match &p.second_net {
                Some(second) => Some(attn(second)?),
                None => None,
            };
            Some((w, z))
        }
        _ => None,
    };

    let dim = x_test.ncols();
    let mut out = String::new();
    let mut header: Vec<String> = if dim == 2 {
        vec!["x".into(), "y".into()]
    } else {
        vec!["x".into()]
    };
    header.extend(["truth".into(), "mean".into(), "std".into(), "error".into()]);
    if let Some((w, z)) = &attention {
        for k in 0..w.ncols() {
            header.push(format!("w{}", k + 1));
        }
        if let Some(z) = z {
            for k in 0..z.ncols() {
                header.push(format!("z{}", k + 1));
            }
        }
    }
    out.push_str(&header.join(","));
    out.push('\n');

    for i in 0..x_test.nrows() {
        let mut fields: Vec<String> = (0..dim).map(|j| format!("{}", x_test[(i, j)])).collect();
        fields.push(format!("{}", y_test[i]));
        fields.push(format!("{}", mean[i]));
        fields.push(format!("{}", std[i]));
        fields.push(format!("{}", (y_test[i] - mean[i]).abs()));
        if let Some((w, z)) = &attention {
            for k in 0..w.ncols() {
                fields.push(format!("{}", w[(i, k)]));
            }
            if let Some(z) = z {
                for k in 0..z.ncols() {
                    fields.push(format!("{}", z[(i, k)]));
                }
            }
        }
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

/// Fit on a fixed uniformly sampled dataset (no sequential collection):
/// `n_samples` observations, one optimizer run of `iters` iterations. Used by
/// the overfitting analysis and the 1-D comparisons.
pub struct FixedFit {
    pub model: GprModel,
    pub normalizer: Normalizer,
    pub x_test_norm: DMatrix<f64>,
    pub y_test: DVector<f64>,
    pub lml_trace: Vec<f64>,
}

pub fn fit_fixed_dataset(
    config: &ExperimentConfig,
    seed: u64,
    n_samples: usize,
    iters: usize,
    mut on_iter: impl FnMut(usize, &mut GprModel),
) -> Result<FixedFit, HarnessError> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let env = config.build_env()?;
    let bounds = env.bounds();
    let dim = env.dim();

    let (x_test, y_test) = test_grid(&env, config.test_grid);
    let x_init = crate::planning::draw_candidates(&bounds, n_samples, &mut rng);
    let y_init = env.observe(&x_init, &mut rng);
    let normalizer = Normalizer::from_bounds_and_targets(&bounds, &y_init)?;
    let x_test_norm = normalizer.normalize_inputs(&x_test);

    let kernel = config.build_kernel(dim, &mut rng)?;
    let mut model = GprModel::new(kernel, dim, config.init_noise)?;
    model.add_data(&normalizer.normalize_inputs(&x_init), &normalizer.standardize_targets(&y_init))?;

    let mut adam = crate::gpr::AdamState::new(model.opt_params().len());
    let lml_trace =
        model.optimize_with(&mut adam, iters, config.lr_hyper, config.lr_net, &mut on_iter)?;

    Ok(FixedFit { model, normalizer, x_test_norm, y_test, lml_trace })
}

/// Standardized-space train/test MSLL of the current model state; used for
/// per-iteration overfitting traces.
pub fn train_test_msll(
    model: &GprModel,
    normalizer: &Normalizer,
    x_test_norm: &DMatrix<f64>,
    y_test_raw: &DVector<f64>,
) -> Result<(f64, f64), HarnessError> {
    let y_train = model.y_train();
    let train_mean = y_train.sum() / y_train.len() as f64;
    let train_var =
        y_train.iter().map(|v| (v - train_mean).powi(2)).sum::<f64>() / y_train.len() as f64;

    let train_pred = model.predict(model.x_train())?;
    let train_var_pred = train_pred.variance.map(|v| v.max(1e-12));
    let train = msll(y_train, &train_pred.mean, &train_var_pred, train_mean, train_var)?;

    let test_pred = model.predict(x_test_norm)?;
    let test_var_pred = test_pred.variance.map(|v| v.max(1e-12));
    let y_test_std = normalizer.standardize_targets(y_test_raw);
    let test = msll(&y_test_std, &test_pred.mean, &test_var_pred, train_mean, train_var)?;
    Ok((train, test))
}
