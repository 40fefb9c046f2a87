//! Gaussian process regression with attention-based nonstationary kernels,
//! plus the simulation and experiment machinery for active elevation mapping.
//!
//! The crate is organized around the pipeline of an information-gathering
//! run: [`environments`] supplies a ground-truth world, [`planning`] picks
//! waypoints and collects noisy samples, [`gpr`] maintains an exact GP
//! posterior over one of the [`kernels`], and [`metrics`] scores predictions
//! on a held-out grid. [`harness`] wires these into reproducible, seeded
//! experiments with CSV output.

pub mod environments;
pub mod gpr;
pub mod harness;
pub mod kernels;
pub mod metrics;
pub mod nn;
pub mod planning;
