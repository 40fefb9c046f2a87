//! Sampling strategies and a point-robot simulator for information gathering.
//!
//! All three strategies score a fresh batch of 1000 uniformly drawn candidate
//! locations per decision epoch: `random` ignores the model, `active` takes
//! the entropy argmax, and the myopic planner trades normalized entropy
//! against normalized travel distance. The robot tracks waypoints in straight
//! lines and samples at even intervals along the path.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use thiserror::Error;

use crate::environments::Env;

/// Candidate locations drawn per decision epoch.
pub const NUM_CANDIDATES: usize = 1000;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("entropy is undefined for non-positive variance {0}")]
    NonPositiveVariance(f64),
    #[error("prediction failed: {0}")]
    Prediction(String),
    #[error("invalid robot state: {0}")]
    InvalidRobot(String),
}

/// Anything that can report predictive variances at workspace locations.
/// The experiment harness implements this by normalizing candidate locations
/// and querying the GP posterior.
pub trait VarianceField {
    fn variances(&self, locations: &DMatrix<f64>) -> Result<DVector<f64>, PlanError>;
}

/// Holonomic point robot tracking waypoints in straight lines.
#[derive(Debug, Clone)]
pub struct RobotState {
    pub position: [f64; 2],
    pub step_len: f64,
    pub sample_spacing: f64,
}

impl RobotState {
    pub fn new(position: [f64; 2], step_len: f64, sample_spacing: f64) -> Result<Self, PlanError> {
        if !(step_len > 0.0) {
            return Err(PlanError::InvalidRobot(format!("step_len must be positive, got {step_len}")));
        }
        if !(sample_spacing > 0.0) {
            return Err(PlanError::InvalidRobot(format!(
                "sample_spacing must be positive, got {sample_spacing}"
            )));
        }
        Ok(Self { position, step_len, sample_spacing })
    }
}

/// Scored candidates for one myopic decision.
#[derive(Debug, Clone)]
pub struct CandidateSet {
    pub locations: DMatrix<f64>,
    pub entropies: Vec<f64>,
    pub distances: Vec<f64>,
    pub scores: Vec<f64>,
}

/// Differential entropy of a Gaussian with variance `v`: `0.5 ln(2 pi e v)`.
pub fn gaussian_entropy(variance: f64) -> Result<f64, PlanError> {
    if !(variance > 0.0) {
        return Err(PlanError::NonPositiveVariance(variance));
    }
    Ok(0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * variance).ln())
}

/// One uniform draw per dimension; degenerate bounds collapse to the bound.
pub fn random_waypoint(bounds: &[(f64, f64)], rng: &mut impl Rng) -> Vec<f64> {
    bounds
        .iter()
        .map(|(lo, hi)| if lo < hi { rng.random_range(*lo..=*hi) } else { *lo })
        .collect()
}

/// A fresh batch of uniform candidate locations.
pub fn draw_candidates(bounds: &[(f64, f64)], n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, bounds.len());
    for i in 0..n {
        for (d, (lo, hi)) in bounds.iter().enumerate() {
            m[(i, d)] = if lo < hi { rng.random_range(*lo..=*hi) } else { *lo };
        }
    }
    m
}

fn argmax_lowest_index(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Highest-entropy candidate among [`NUM_CANDIDATES`] uniform draws; ties go
/// to the lowest candidate index.
pub fn active_waypoint(
    field: &dyn VarianceField,
    bounds: &[(f64, f64)],
    rng: &mut impl Rng,
) -> Result<Vec<f64>, PlanError> {
    let candidates = draw_candidates(bounds, NUM_CANDIDATES, rng);
    let variances = field.variances(&candidates)?;
    let entropies: Vec<f64> =
        variances.iter().map(|v| gaussian_entropy(*v)).collect::<Result<_, _>>()?;
    let best = argmax_lowest_index(&entropies);
    Ok(candidates.row(best).iter().cloned().collect())
}

/// Min-max normalization into `[0, 1]`; a zero-range input maps to all zeros.
fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if range == 0.0 {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - lo) / range).collect()
}

/// Myopic informativeness: normalized entropy minus normalized distance.
pub fn myopic_scores(entropies: &[f64], distances: &[f64]) -> Vec<f64> {
    let ne = min_max_normalize(entropies);
    let nd = min_max_normalize(distances);
    ne.iter().zip(&nd).map(|(e, d)| e - d).collect()
}

/// Best candidate under the myopic score, together with the full scored set.
pub fn informative_waypoint(
    field: &dyn VarianceField,
    robot: &RobotState,
    bounds: &[(f64, f64)],
    rng: &mut impl Rng,
) -> Result<([f64; 2], CandidateSet), PlanError> {
    let candidates = draw_candidates(bounds, NUM_CANDIDATES, rng);
    let variances = field.variances(&candidates)?;
    let entropies: Vec<f64> =
        variances.iter().map(|v| gaussian_entropy(*v)).collect::<Result<_, _>>()?;
    let distances: Vec<f64> = (0..candidates.nrows())
        .map(|i| {
            let dx = candidates[(i, 0)] - robot.position[0];
            let dy = candidates[(i, 1)] - robot.position[1];
            (dx * dx + dy * dy).sqrt()
        })
        .collect();
    let scores = myopic_scores(&entropies, &distances);
    let best = argmax_lowest_index(&scores);
    let waypoint = [candidates[(best, 0)], candidates[(best, 1)]];
    Ok((waypoint, CandidateSet { locations: candidates, entropies, distances, scores }))
}

/// Drives the robot to the waypoint in `step_len` increments and samples the
/// environment at `N_t = max(1, floor(len / spacing) + 1)` points spread
/// evenly along the path, endpoint included, start excluded.
pub fn track_and_sample(
    robot: &mut RobotState,
    waypoint: [f64; 2],
    env: &Env,
    rng: &mut impl Rng,
) -> (DMatrix<f64>, DVector<f64>) {
    let start = robot.position;
    let dx = waypoint[0] - start[0];
    let dy = waypoint[1] - start[1];
    let length = (dx * dx + dy * dy).sqrt();

    let n_samples = ((length / robot.sample_spacing).floor() as usize + 1).max(1);
    let xs = DMatrix::from_fn(n_samples, 2, |k, d| {
        let frac = (k + 1) as f64 / n_samples as f64;
        if d == 0 {
            start[0] + frac * dx
        } else {
            start[1] + frac * dy
        }
    });

    // tracking: constant-length control ticks, final partial step exact
    let mut traveled = 0.0;
    while traveled + robot.step_len < length {
        traveled += robot.step_len;
        let f = traveled / length;
        robot.position = [start[0] + f * dx, start[1] + f * dy];
    }
    robot.position = waypoint;

    let ys = env.observe(&xs, rng);
    (xs, ys)
}
