use std::io;

use thiserror::Error;

use crate::solver::SolveReport;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("point ({x}, {y}) lies outside the realization window")]
    OutOfWindow { x: f64, y: f64 },

    #[error("operator at cell ({cell_x}, {cell_y}) is not representable on the monotone stencil: {reason}")]
    Stencil {
        cell_x: i64,
        cell_y: i64,
        reason: String,
    },

    #[error("policy iteration did not converge after {} iterations (residual {:.3e})", .report.iterations, .report.residual)]
    NonConvergence { report: Box<SolveReport> },

    #[error("ensemble invalid ({field}): {reason}")]
    Ensemble { field: &'static str, reason: String },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("truncated file: {0}")]
    Length(String),

    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("grid misaligned: {0}")]
    Misaligned(String),

    #[error("slope box too small: facet gradient ({0}, {1}) lies outside")]
    SlopeBox(f64, f64),

    #[error("no sign change of the balance gap on [{lo}, {hi}]: g(lo) = {g_lo:.3e}, g(hi) = {g_hi:.3e}")]
    Bracketing {
        lo: f64,
        hi: f64,
        g_lo: f64,
        g_hi: f64,
    },

    #[error("{failed} of {total} realizations failed (first: {first})")]
    TooManyFailures {
        failed: usize,
        total: usize,
        first: String,
    },

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
