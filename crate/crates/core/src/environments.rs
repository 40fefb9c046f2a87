//! Ground-truth worlds: raster elevation grids with bilinear lookup and noisy
//! point sampling, plus two fixed 1-D demonstration functions.
//!
//! Raster file format (plain text):
//! line 1 is `rows cols x_min x_max y_min y_max`, followed by `rows` lines of
//! `cols` float64 values each, row-major and north-up (row 0 sits at `y_max`).
//! Floats are printed with Rust's shortest round-trip representation, so a
//! save/load cycle is bit-exact.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("raster parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("input {x} outside the function domain [{lo}, {hi}]")]
    OutOfDomain { x: f64, lo: f64, hi: f64 },
    #[error("invalid environment: {0}")]
    Invalid(String),
}

/// Rectangular workspace bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extent {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Extent {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self, EnvError> {
        let e = Self { x_min, x_max, y_min, y_max };
        if !(x_min < x_max && y_min < y_max)
            || ![x_min, x_max, y_min, y_max].iter().all(|v| v.is_finite())
        {
            return Err(EnvError::Invalid(format!("degenerate extent {e:?}")));
        }
        Ok(e)
    }

    pub fn clamp(&self, x: f64, y: f64) -> (f64, f64) {
        (x.clamp(self.x_min, self.x_max), y.clamp(self.y_min, self.y_max))
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }
}

/// Gridded elevation world over a rectangular extent.
#[derive(Debug, Clone)]
pub struct RasterEnv {
    values: DMatrix<f64>,
    extent: Extent,
    pub obs_noise_std: f64,
}

impl RasterEnv {
    pub fn new(values: DMatrix<f64>, extent: Extent, obs_noise_std: f64) -> Result<Self, EnvError> {
        if values.nrows() < 2 || values.ncols() < 2 {
            return Err(EnvError::Invalid(format!(
                "raster needs at least 2x2 values, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EnvError::Invalid("raster contains non-finite values".into()));
        }
        if !(obs_noise_std >= 0.0) {
            return Err(EnvError::Invalid(format!("negative noise std {obs_noise_std}")));
        }
        Ok(Self { values, extent, obs_noise_std })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn extent(&self) -> Extent {
        self.extent
    }

    /// Bilinear interpolation of the four grid values enclosing `(x, y)`.
    /// Out-of-extent queries are clamped to the boundary with a warning.
    pub fn query_truth(&self, x: f64, y: f64) -> f64 {
        if !self.extent.contains(x, y) {
            eprintln!("warning: query ({x}, {y}) outside extent, clamping to boundary");
        }
        let (x, y) = self.extent.clamp(x, y);
        let (rows, cols) = self.values.shape();
        let u = (x - self.extent.x_min) / (self.extent.x_max - self.extent.x_min)
            * (cols - 1) as f64;
        // north-up: row 0 sits at y_max
        let v = (self.extent.y_max - y) / (self.extent.y_max - self.extent.y_min)
            * (rows - 1) as f64;
        let j0 = (u.floor() as usize).min(cols - 2);
        let i0 = (v.floor() as usize).min(rows - 2);
        let fu = u - j0 as f64;
        let fv = v - i0 as f64;
        (1.0 - fv) * (1.0 - fu) * self.values[(i0, j0)]
            + (1.0 - fv) * fu * self.values[(i0, j0 + 1)]
            + fv * (1.0 - fu) * self.values[(i0 + 1, j0)]
            + fv * fu * self.values[(i0 + 1, j0 + 1)]
    }

    pub fn save(&self, path: &Path) -> Result<(), EnvError> {
        let mut out = String::new();
        let e = self.extent;
        writeln!(
            out,
            "{} {} {} {} {} {}",
            self.values.nrows(),
            self.values.ncols(),
            e.x_min,
            e.x_max,
            e.y_min,
            e.y_max
        )
        .expect("writing to string cannot fail");
        for i in 0..self.values.nrows() {
            let row: Vec<String> = (0..self.values.ncols())
                .map(|j| format!("{}", self.values[(i, j)]))
                .collect();
            writeln!(out, "{}", row.join(" ")).expect("writing to string cannot fail");
        }
        let mut file = std::fs::File::create(path)?;
        file.write_all(out.as_bytes())?;
        Ok(())
    }
}

/// Parses the plain-text raster format described in the module docs.
pub fn load_raster(path: &Path, obs_noise_std: f64) -> Result<RasterEnv, EnvError> {
    let file = std::fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or(EnvError::Parse { line: 1, msg: "missing header".into() })??;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 6 {
        return Err(EnvError::Parse {
            line: 1,
            msg: format!("header needs 6 fields `rows cols x_min x_max y_min y_max`, got {}", fields.len()),
        });
    }
    let rows: usize = fields[0]
        .parse()
        .map_err(|_| EnvError::Parse { line: 1, msg: format!("bad row count {:?}", fields[0]) })?;
    let cols: usize = fields[1]
        .parse()
        .map_err(|_| EnvError::Parse { line: 1, msg: format!("bad column count {:?}", fields[1]) })?;
    let mut bounds = [0.0; 4];
    for (i, f) in fields[2..].iter().enumerate() {
        bounds[i] = f
            .parse()
            .map_err(|_| EnvError::Parse { line: 1, msg: format!("bad extent value {f:?}") })?;
    }
    let extent = Extent::new(bounds[0], bounds[1], bounds[2], bounds[3])?;

    let mut values = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        let line_no = i + 2;
        let line = lines
            .next()
            .ok_or(EnvError::Parse { line: line_no, msg: format!("missing data row {i}") })??;
        let entries: Vec<&str> = line.split_whitespace().collect();
        if entries.len() != cols {
            return Err(EnvError::Parse {
                line: line_no,
                msg: format!("data row {i} has {} values, expected {cols}", entries.len()),
            });
        }
        for (j, entry) in entries.iter().enumerate() {
            let v: f64 = entry.parse().map_err(|_| EnvError::Parse {
                line: line_no,
                msg: format!("bad value {entry:?} in row {i}"),
            })?;
            if !v.is_finite() {
                return Err(EnvError::Parse {
                    line: line_no,
                    msg: format!("non-finite value in row {i}"),
                });
            }
            values[(i, j)] = v;
        }
    }
    RasterEnv::new(values, extent, obs_noise_std)
}

/// The two 1-D demonstration functions, both defined on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Synthetic1D {
    /// Five partitions with sharp jumps at the boundaries; partition 3 is
    /// high-frequency, the rest vary slowly:
    ///
    /// - `[0.0, 0.2)`: `2.0 + 0.6 sin(2 pi x)`
    /// - `[0.2, 0.4)`: `-1.5 + 0.8 cos(3 pi x)`
    /// - `[0.4, 0.6)`: `1.0 + 0.6 sin(50 pi x)`
    /// - `[0.6, 0.8)`: `3.0 - 2.0 x`
    /// - `[0.8, 1.0]`: `-2.0 + 0.5 cos(2 pi x)`
    FivePartition,
    /// `f(x) = x sin(40 x^4)`: frequency grows smoothly with `x`.
    XSin40X4,
}

impl Synthetic1D {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "fivepart" => Some(Synthetic1D::FivePartition),
            "xsin" => Some(Synthetic1D::XSin40X4),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Synthetic1D::FivePartition => "fivepart",
            Synthetic1D::XSin40X4 => "xsin",
        }
    }

    /// Deterministic ground truth; inputs outside `[0, 1]` are rejected.
    pub fn eval(&self, x: f64) -> Result<f64, EnvError> {
        if !(0.0..=1.0).contains(&x) {
            return Err(EnvError::OutOfDomain { x, lo: 0.0, hi: 1.0 });
        }
        use std::f64::consts::PI;
        Ok(match self {
            Synthetic1D::XSin40X4 => x * (40.0 * x.powi(4)).sin(),
            Synthetic1D::FivePartition => {
                if x < 0.2 {
                    2.0 + 0.6 * (2.0 * PI * x).sin()
                } else if x < 0.4 {
                    -1.5 + 0.8 * (3.0 * PI * x).cos()
                } else if x < 0.6 {
                    1.0 + 0.6 * (50.0 * PI * x).sin()
                } else if x < 0.8 {
                    3.0 - 2.0 * x
                } else {
                    -2.0 + 0.5 * (2.0 * PI * x).cos()
                }
            }
        })
    }
}

/// Generator spec for [`make_synthetic_raster`].
#[derive(Debug, Clone, Copy)]
pub struct SynthRasterSpec {
    pub rows: usize,
    pub cols: usize,
    pub extent: Extent,
    pub seed: u64,
    pub obs_noise_std: f64,
}

impl Default for SynthRasterSpec {
    fn default() -> Self {
        Self {
            rows: 64,
            cols: 64,
            extent: Extent { x_min: 0.0, x_max: 10.0, y_min: 0.0, y_max: 10.0 },
            seed: 0,
            obs_noise_std: 1.0,
        }
    }
}

/// Deterministic piecewise-smooth field: the left half of the workspace is a
/// gentle low-frequency surface, the right half a rough high-frequency one
/// with an elevation offset, so the transition at mid-extent is sharp. Phases
/// are drawn from the seed; the same spec always yields the same raster.
pub fn make_synthetic_raster(spec: &SynthRasterSpec) -> Result<RasterEnv, EnvError> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(spec.seed);
    let phases: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
    let e = spec.extent;
    let split = 0.5 * (e.x_min + e.x_max);
    // horizontal scale of 1 workspace unit assumed ~1/10 of the extent
    let sx = 10.0 / (e.x_max - e.x_min);
    let sy = 10.0 / (e.y_max - e.y_min);

    let smooth = |x: f64, y: f64| {
        1.2 * (0.35 * sx * x + phases[0]).sin() + 1.0 * (0.30 * sy * y + phases[1]).cos()
    };
    let rough = |x: f64, y: f64| {
        4.0 + 3.0 * (2.4 * sx * x + phases[2]).sin() * (2.8 * sy * y + phases[3]).cos()
            + 1.2 * (5.0 * sx * x + phases[4]).sin()
            + 1.0 * (1.6 * sx * (x + y) + phases[5]).sin()
    };

    let values = DMatrix::from_fn(spec.rows, spec.cols, |i, j| {
        let x = e.x_min + (e.x_max - e.x_min) * j as f64 / (spec.cols - 1) as f64;
        // north-up: row 0 at y_max
        let y = e.y_max - (e.y_max - e.y_min) * i as f64 / (spec.rows - 1) as f64;
        if x < split {
            smooth(x, y)
        } else {
            rough(x, y)
        }
    });
    RasterEnv::new(values, e, spec.obs_noise_std)
}

/// A 1-D world wrapping one of the demonstration functions.
#[derive(Debug, Clone)]
pub struct Synth1DEnv {
    pub function: Synthetic1D,
    pub obs_noise_std: f64,
}

/// Either world the harness can run against.
#[derive(Debug, Clone)]
pub enum Env {
    Raster(Box<RasterEnv>),
    OneD(Synth1DEnv),
}

impl Env {
    pub fn dim(&self) -> usize {
        match self {
            Env::Raster(_) => 2,
            Env::OneD(_) => 1,
        }
    }

    /// Per-dimension `(low, high)` workspace bounds.
    pub fn bounds(&self) -> Vec<(f64, f64)> {
        match self {
            Env::Raster(r) => {
                let e = r.extent();
                vec![(e.x_min, e.x_max), (e.y_min, e.y_max)]
            }
            Env::OneD(_) => vec![(0.0, 1.0)],
        }
    }

    pub fn obs_noise_std(&self) -> f64 {
        match self {
            Env::Raster(r) => r.obs_noise_std,
            Env::OneD(s) => s.obs_noise_std,
        }
    }

    /// Noise-free ground truth at a workspace location (clamped into bounds).
    pub fn truth(&self, x: &[f64]) -> f64 {
        match self {
            Env::Raster(r) => r.query_truth(x[0], x[1]),
            Env::OneD(s) => s.function.eval(x[0].clamp(0.0, 1.0)).expect("clamped input is in domain"),
        }
    }

    /// `truth + N(0, obs_noise_std^2)` per row, i.i.d. from the caller's rng.
    pub fn observe(&self, xs: &DMatrix<f64>, rng: &mut impl Rng) -> DVector<f64> {
        let noise = Normal::new(0.0, self.obs_noise_std().max(f64::MIN_POSITIVE))
            .expect("validated noise std");
        DVector::from_fn(xs.nrows(), |i, _| {
            let row: Vec<f64> = xs.row(i).iter().cloned().collect();
            let eps = if self.obs_noise_std() == 0.0 { 0.0 } else { noise.sample(rng) };
            self.truth(&row) + eps
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn tiny_raster() -> RasterEnv {
        let values = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let extent = Extent::new(0.0, 1.0, 0.0, 1.0).unwrap();
        RasterEnv::new(values, extent, 0.0).unwrap()
    }

    #[test]
    fn parse_two_by_two_example() {
        let dir = std::env::temp_dir().join("akgp_env_tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("tiny.rast");
        std::fs::write(&path, "2 2 0 1 0 1\n1 2\n3 4\n").unwrap();
        let env = load_raster(&path, 0.0).unwrap();
        assert_eq!(env.values()[(0, 0)], 1.0);
        assert_eq!(env.values()[(1, 1)], 4.0);
    }

    #[test]
    fn truncated_row_names_the_line() {
        let dir = std::env::temp_dir().join("akgp_env_tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.rast");
        std::fs::write(&path, "2 2 0 1 0 1\n1 2\n3\n").unwrap();
        match load_raster(&path, 0.0) {
            Err(EnvError::Parse { line, msg }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("row 1"), "message was {msg:?}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        let spec = SynthRasterSpec { rows: 9, cols: 7, seed: 3, ..Default::default() };
        let env = make_synthetic_raster(&spec).unwrap();
        let dir = std::env::temp_dir().join("akgp_env_tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.rast");
        env.save(&path).unwrap();
        let loaded = load_raster(&path, env.obs_noise_std).unwrap();
        assert_eq!(env.values(), loaded.values());
        assert_eq!(env.extent(), loaded.extent());
    }

    #[test]
    fn grid_nodes_are_exact() {
        let env = tiny_raster();
        // north-up: row 0 is y_max
        assert_eq!(env.query_truth(0.0, 1.0), 1.0);
        assert_eq!(env.query_truth(1.0, 1.0), 2.0);
        assert_eq!(env.query_truth(0.0, 0.0), 3.0);
        assert_eq!(env.query_truth(1.0, 0.0), 4.0);
    }

    #[test]
    fn cell_center_is_corner_mean() {
        let env = tiny_raster();
        assert_relative_eq!(env.query_truth(0.5, 0.5), 2.5, epsilon = 1e-15);
    }

    #[test]
    fn interpolation_stays_within_corner_range() {
        let spec = SynthRasterSpec { rows: 12, cols: 12, seed: 5, ..Default::default() };
        let env = make_synthetic_raster(&spec).unwrap();
        let lo = env.values().min();
        let hi = env.values().max();
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        for _ in 0..200 {
            let x = rng.random_range(0.0..10.0);
            let y = rng.random_range(0.0..10.0);
            let v = env.query_truth(x, y);
            assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }

    #[test]
    fn bilinear_is_locally_lipschitz() {
        let spec = SynthRasterSpec { rows: 16, cols: 16, seed: 7, ..Default::default() };
        let env = make_synthetic_raster(&spec).unwrap();
        // steepest possible slope: largest adjacent-node difference over one
        // cell span, along both axes
        let v = env.values();
        let cell = 10.0 / 15.0;
        let mut max_grad: f64 = 0.0;
        for i in 0..16 {
            for j in 0..15 {
                max_grad = max_grad.max((v[(i, j + 1)] - v[(i, j)]).abs() / cell);
                max_grad = max_grad.max((v[(j + 1, i)] - v[(j, i)]).abs() / cell);
            }
        }
        let lipschitz = 2.0 * max_grad; // both axes can contribute
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let delta = 1e-4;
        for _ in 0..200 {
            let x = rng.random_range(0.1..9.9);
            let y = rng.random_range(0.1..9.9);
            let base = env.query_truth(x, y);
            let moved = env.query_truth(x + delta, y + delta);
            assert!((moved - base).abs() <= lipschitz * 2.0 * delta + 1e-12);
        }
    }

    #[test]
    fn observe_without_noise_equals_truth() {
        let env = Env::Raster(Box::new(tiny_raster()));
        let xs = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.5, 0.5]);
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let y = env.observe(&xs, &mut rng);
        assert_eq!(y[0], 1.0);
        assert_eq!(y[1], 2.5);
    }

    #[test]
    fn observe_is_reproducible_given_the_seed() {
        let mut raster = tiny_raster();
        raster.obs_noise_std = 0.5;
        let env = Env::Raster(Box::new(raster));
        let xs = DMatrix::from_row_slice(3, 2, &[0.1, 0.2, 0.7, 0.9, 0.4, 0.4]);
        let a = env.observe(&xs, &mut ChaCha12Rng::seed_from_u64(10));
        let b = env.observe(&xs, &mut ChaCha12Rng::seed_from_u64(10));
        assert_eq!(a, b);
    }

    #[test]
    fn observation_mean_converges_to_truth() {
        let mut raster = tiny_raster();
        raster.obs_noise_std = 1.0;
        let env = Env::Raster(Box::new(raster));
        let n = 100_000;
        let xs = DMatrix::from_fn(n, 2, |_, _| 0.5);
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let y = env.observe(&xs, &mut rng);
        let mean = y.sum() / n as f64;
        let tol = 3.0 / (n as f64).sqrt();
        assert!((mean - 2.5).abs() < tol, "mean {mean} vs truth 2.5 (tol {tol})");
    }

    #[test]
    fn xsin_closed_forms() {
        let f = Synthetic1D::XSin40X4;
        assert_eq!(f.eval(0.0).unwrap(), 0.0);
        let peak = (std::f64::consts::PI / 80.0).powf(0.25);
        assert_relative_eq!(f.eval(peak).unwrap(), peak, epsilon = 1e-12);
        assert!(f.eval(1.2).is_err());
        assert!(f.eval(-0.1).is_err());
    }

    #[test]
    fn five_partition_boundary_values_match_committed_expressions() {
        use std::f64::consts::PI;
        let f = Synthetic1D::FivePartition;
        // half-open segments: the boundary abscissa belongs to the right segment
        assert_relative_eq!(f.eval(0.2).unwrap(), -1.5 + 0.8 * (0.6 * PI).cos(), epsilon = 1e-14);
        assert_relative_eq!(f.eval(0.4).unwrap(), 1.0 + 0.6 * (20.0 * PI).sin(), epsilon = 1e-12);
        assert_relative_eq!(f.eval(0.6).unwrap(), 3.0 - 1.2, epsilon = 1e-14);
        assert_relative_eq!(f.eval(0.8).unwrap(), -2.0 + 0.5 * (1.6 * PI).cos(), epsilon = 1e-14);
        assert_relative_eq!(f.eval(1.0).unwrap(), -2.0 + 0.5 * (2.0 * PI).cos(), epsilon = 1e-14);
        // the jumps at the boundaries are genuinely discontinuous
        for b in [0.2, 0.4, 0.6, 0.8] {
            let left = f.eval(b - 1e-9).unwrap();
            let right = f.eval(b).unwrap();
            assert!((left - right).abs() > 0.5, "jump at {b} is only {}", (left - right).abs());
        }
    }

    #[test]
    fn synthetic_raster_is_deterministic() {
        let spec = SynthRasterSpec { seed: 42, ..Default::default() };
        let a = make_synthetic_raster(&spec).unwrap();
        let b = make_synthetic_raster(&spec).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn rough_half_varies_more_than_smooth_half() {
        let spec = SynthRasterSpec { seed: 1, ..Default::default() };
        let env = make_synthetic_raster(&spec).unwrap();
        let v = env.values();
        let cols = v.ncols();
        let var = |side: std::ops::Range<usize>| {
            let vals: Vec<f64> =
                (0..v.nrows()).flat_map(|i| side.clone().map(move |j| (i, j))).map(|(i, j)| v[(i, j)]).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / vals.len() as f64
        };
        let smooth_var = var(0..cols / 2);
        let rough_var = var(cols / 2..cols);
        assert!(
            rough_var > smooth_var,
            "rough variance {rough_var} should exceed smooth variance {smooth_var}"
        );
    }
}
