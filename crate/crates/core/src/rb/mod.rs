//! Reduced basis: affine operators, greedy offline stage and online solves.

mod affine;
mod model;

pub use affine::{AffineSystem, AffineTerm, ThetaMap, Thetas};
pub use model::{
    error_decay, error_decay_csv, greedy_build, greedy_build_on, relative_error, GreedyConfig, GreedyIndicator, GreedyStep,
    ReducedModel, ReducedSolution, VelocityMode,
};
