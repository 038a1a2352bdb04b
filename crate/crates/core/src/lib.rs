//! Curvature quantities of elliptic operators in random environments.

mod banded;
pub mod envelope;
pub mod environment;
pub mod error;
pub mod grid;
pub mod homogenize;
pub mod linalg;
pub mod mu;
pub mod operators;
pub mod rng;
pub mod solver;
pub mod stats;

pub use envelope::{convex_envelope, subdiff_measure, EnvelopeResult, Region};
pub use environment::{field_of, sample_realization, Realization, TileEnsemble, Window};
pub use error::{Error, Result};
pub use homogenize::{balance_constant, effective_from_cell, error_rate_experiment, expected_mu_curve, variance_decay_experiment, BalanceEstimate, CellConfig, CellEstimate, EffectiveEstimate, MomentCurve, RunConfig};
pub use grid::{cube_of, GridFunction, Square, TriadicCube};
pub use linalg::SymMatrix;
pub use mu::{mu_constant_coeff, mu_estimate, mu_star_estimate, MuConfig, MuEstimate};
pub use operators::{BellmanMode, LinearOp, LocalOperator, OperatorField, PucciSign};
pub use solver::{apply_operator, solve_cell, solve_dirichlet, BoundaryData, SolveReport};
