//! Experiment configuration: a `key = value` text file plus CLI overrides.

use std::path::{Path, PathBuf};

use crate::environments::Synthetic1D;

use super::HarnessError;

/// Which world to run against.
#[derive(Debug, Clone, PartialEq)]
pub enum EnvSpec {
    /// A raster file in the plain-text grid format.
    RasterFile(PathBuf),
    /// The built-in synthetic raster generator with this seed.
    SynthRaster(u64),
    /// One of the 1-D demonstration functions.
    OneD(Synthetic1D),
}

impl EnvSpec {
    pub fn parse(s: &str) -> Result<Self, HarnessError> {
        if let Some(path) = s.strip_prefix("raster:") {
            return Ok(EnvSpec::RasterFile(PathBuf::from(path)));
        }
        if let Some(seed) = s.strip_prefix("synthraster:") {
            let seed = seed
                .parse()
                .map_err(|_| HarnessError::Config(format!("bad synthraster seed {seed:?}")))?;
            return Ok(EnvSpec::SynthRaster(seed));
        }
        if let Some(f) = Synthetic1D::parse(s) {
            return Ok(EnvSpec::OneD(f));
        }
        Err(HarnessError::Config(format!(
            "unknown env {s:?}; expected raster:<path>, synthraster:<seed>, fivepart, or xsin"
        )))
    }

    /// Short tag used in output file names.
    pub fn tag(&self) -> String {
        match self {
            EnvSpec::RasterFile(p) => p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "raster".into()),
            EnvSpec::SynthRaster(seed) => format!("synthraster{seed}"),
            EnvSpec::OneD(f) => f.name().to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Random,
    Active,
    Myopic,
}

impl Strategy {
    pub fn parse(s: &str) -> Result<Self, HarnessError> {
        match s {
            "random" => Ok(Strategy::Random),
            "active" => Ok(Strategy::Active),
            "myopic" => Ok(Strategy::Myopic),
            _ => Err(HarnessError::Config(format!(
                "unknown strategy {s:?}; expected random, active, or myopic"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Active => "active",
            Strategy::Myopic => "myopic",
        }
    }
}

pub const KERNEL_NAMES: [&str; 7] = ["rbf", "ak", "ak-weight", "ak-mask", "ak-nnx2", "gibbs", "dkl"];

/// Every tunable of an experiment run; see `ExperimentConfig::default` for
/// the stock settings.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub env: EnvSpec,
    pub kernel: String,
    pub strategy: Strategy,
    /// Number of base-kernel lengthscales.
    pub m: usize,
    /// Hidden width of every network.
    pub hidden_dim: usize,
    pub l_min: f64,
    pub l_max: f64,
    /// Feature dimension of the deep-kernel warp; 0 means "input dimension".
    pub feature_dim: usize,
    pub n_init: usize,
    pub n_max: usize,
    /// Overrides the environment's observation noise when non-negative.
    pub obs_noise_std: f64,
    pub init_amplitude: f64,
    pub init_noise: f64,
    pub lr_hyper: f64,
    pub lr_net: f64,
    pub seeds: Vec<u64>,
    /// Test-grid resolution: points per axis in 2-D, total points in 1-D.
    /// 0 picks the defaults (100 per axis / 500 points).
    pub test_grid: usize,
    /// Robot motion per control tick, in normalized units.
    pub step_len: f64,
    /// Distance between consecutive path samples, in normalized units.
    pub sample_spacing: f64,
    pub out_dir: PathBuf,
    /// Export prediction/uncertainty/error and attention maps after the run.
    pub dump_grid: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: EnvSpec::SynthRaster(0),
            kernel: "ak".into(),
            strategy: Strategy::Random,
            m: 10,
            hidden_dim: 10,
            l_min: 0.01,
            l_max: 0.5,
            feature_dim: 0,
            n_init: 50,
            n_max: 600,
            obs_noise_std: -1.0,
            init_amplitude: 1.0,
            init_noise: 0.1,
            lr_hyper: 1e-2,
            lr_net: 1e-3,
            seeds: (0..10).collect(),
            test_grid: 0,
            step_len: 0.1,
            sample_spacing: 0.05,
            out_dir: PathBuf::from("results"),
            dump_grid: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if !KERNEL_NAMES.contains(&self.kernel.as_str()) {
            return Err(HarnessError::Config(format!(
                "unknown kernel {:?}; expected one of {:?}",
                self.kernel, KERNEL_NAMES
            )));
        }
        if self.m < 2 {
            return Err(HarnessError::Config(format!("m must be at least 2, got {}", self.m)));
        }
        if self.hidden_dim == 0 {
            return Err(HarnessError::Config("hidden_dim must be positive".into()));
        }
        if !(self.l_min > 0.0 && self.l_max > self.l_min) {
            return Err(HarnessError::Config(format!(
                "lengthscale bounds must satisfy 0 < l_min < l_max, got [{}, {}]",
                self.l_min, self.l_max
            )));
        }
        if self.n_init == 0 || self.n_init > self.n_max {
            return Err(HarnessError::Config(format!(
                "need 0 < n_init <= n_max, got n_init={} n_max={}",
                self.n_init, self.n_max
            )));
        }
        if self.seeds.is_empty() {
            return Err(HarnessError::Config("seeds must not be empty".into()));
        }
        if !(self.init_amplitude > 0.0 && self.init_noise > 0.0) {
            return Err(HarnessError::Config("initial amplitude and noise must be positive".into()));
        }
        if !(self.lr_hyper > 0.0 && self.lr_net > 0.0) {
            return Err(HarnessError::Config("learning rates must be positive".into()));
        }
        if self.test_grid == 1 {
            return Err(HarnessError::Config("test_grid must be 0 (auto) or at least 2".into()));
        }
        if !(self.step_len > 0.0 && self.sample_spacing > 0.0) {
            return Err(HarnessError::Config("step_len and sample_spacing must be positive".into()));
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_str_content(&text)
    }

    pub fn from_str_content(text: &str) -> Result<Self, HarnessError> {
        let mut config = Self::default();
        for (idx, raw_line) in text.lines().enumerate() {
            let line = raw_line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                HarnessError::Config(format!("line {}: expected `key = value`, got {raw_line:?}", idx + 1))
            })?;
            config.set(key.trim(), value.trim()).map_err(|e| {
                HarnessError::Config(format!("line {}: {e}", idx + 1))
            })?;
        }
        config.validate()?;
        Ok(config)
    }

    /// Applies one `key = value` assignment (also used by CLI overrides).
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, HarnessError> {
            value
                .parse()
                .map_err(|_| HarnessError::Config(format!("bad value {value:?} for key {key:?}")))
        }
        match key {
            "env" => self.env = EnvSpec::parse(value)?,
            "kernel" => self.kernel = value.to_string(),
            "strategy" => self.strategy = Strategy::parse(value)?,
            "m" => self.m = parse(key, value)?,
            "h" | "hidden_dim" => self.hidden_dim = parse(key, value)?,
            "l_min" => self.l_min = parse(key, value)?,
            "l_max" => self.l_max = parse(key, value)?,
            "feature_dim" => self.feature_dim = parse(key, value)?,
            "n_init" => self.n_init = parse(key, value)?,
            "n_max" => self.n_max = parse(key, value)?,
            "obs_noise_std" => self.obs_noise_std = parse(key, value)?,
            "init_amplitude" => self.init_amplitude = parse(key, value)?,
            "init_noise" => self.init_noise = parse(key, value)?,
            "lr_hyper" => self.lr_hyper = parse(key, value)?,
            "lr_net" => self.lr_net = parse(key, value)?,
            "seeds" => {
                let seeds: Result<Vec<u64>, _> =
                    value.split(',').map(|s| s.trim().parse::<u64>()).collect();
                self.seeds = seeds
                    .map_err(|_| HarnessError::Config(format!("bad seeds list {value:?}")))?;
            }
            "test_grid" => self.test_grid = parse(key, value)?,
            "step_len" => self.step_len = parse(key, value)?,
            "sample_spacing" => self.sample_spacing = parse(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "dump_grid" => self.dump_grid = parse(key, value)?,
            _ => return Err(HarnessError::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// File-name stem for this run's outputs.
    pub fn run_tag(&self) -> String {
        format!("{}_{}_{}", self.env.tag(), self.kernel, self.strategy.name())
    }
}
