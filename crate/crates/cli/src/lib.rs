//! Experiment runner behind the `homoglab` binary.

pub mod config;
pub mod output;
pub mod run;
pub mod selftest;

use std::fmt;
use std::path::Path;

use homoglab::envelope::{mc_subdiff_measure, slope_box_for};
use homoglab::{convex_envelope, Error, GridFunction, Region};

pub use config::{ConfigError, ExperimentConfig, Kind};
pub use output::RunRecord;

pub const EXIT_OK: i32 = 0;
/// Unreadable files, locked directories.
pub const EXIT_IO: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
/// More than 10% of realizations failed.
pub const EXIT_PARTIAL: i32 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        CliError { code, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::new(EXIT_VALIDATION, e.to_string())
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::InvalidInput(_) | Error::Ensemble { .. } | Error::OutOfWindow { .. } | Error::Misaligned(_) => {
                EXIT_VALIDATION
            }
            Error::Format(_) | Error::Length(_) | Error::Checksum { .. } | Error::Io(_) => EXIT_IO,
            Error::TooManyFailures { .. } => EXIT_PARTIAL,
            Error::Stencil { .. } | Error::NonConvergence { .. } | Error::SlopeBox(..) | Error::Bracketing { .. } => {
                EXIT_NUMERICAL
            }
        };
        CliError::new(code, e.to_string())
    }
}

/// Reads and validates a config file, applying a seed override.
pub fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::new(EXIT_IO, format!("{}: {e}", path.display())))?;
    let mut cfg = ExperimentConfig::parse(&text)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// Result of `envelope-check`.
#[derive(Clone, Debug)]
pub struct EnvelopeCheck {
    pub measure: f64,
    pub mc_value: f64,
    pub mc_std_error: f64,
    /// `(name, passed, detail)`.
    pub invariants: Vec<(&'static str, bool, String)>,
}

impl EnvelopeCheck {
    pub fn passed(&self) -> bool {
        self.invariants.iter().all(|i| i.1)
    }
}

/// Envelope measure of `u` over `region`, the Monte Carlo oracle, and the
/// basic envelope invariants.
pub fn envelope_check(u: &GridFunction, region: &Region, samples: usize, seed: u64) -> Result<EnvelopeCheck, Error> {
    let env = convex_envelope(u);
    let measure = env.measure(region);
    let mc = mc_subdiff_measure(u, region, samples, slope_box_for(u, 0.05), seed)?;
    let scale = 1.0 + u.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-10 * scale;
    let below = u.values().iter().zip(env.envelope.values()).fold(f64::NEG_INFINITY, |m, (a, b)| m.max(b - a));
    // second differences of Γ along the stencil directions
    let n = u.n();
    let g = &env.envelope;
    let mut worst_conv: f64 = 0.0;
    for j in 0..n {
        for i in 0..n {
            for (di, dj) in [(1i64, 0i64), (0, 1), (1, 1), (1, -1)] {
                let (ia, ja, ib, jb) = (i as i64 - di, j as i64 - dj, i as i64 + di, j as i64 + dj);
                if ia < 0 || ja < 0 || ib >= n as i64 || jb >= n as i64 || ja >= n as i64 || jb < 0 {
                    continue;
                }
                let d2 = g.get(ia as usize, ja as usize) + g.get(ib as usize, jb as usize) - 2.0 * g.get(i, j);
                worst_conv = worst_conv.max(-d2);
            }
        }
    }
    let dev = (measure - mc.value).abs();
    let invariants = vec![
        ("envelope_below_u", below <= tol, format!("max(Γ - u) = {below:.3e}")),
        ("envelope_convex", worst_conv <= tol, format!("worst negative second difference {worst_conv:.3e}")),
        ("measure_nonnegative", measure >= 0.0, format!("{measure:.6e}")),
        (
            "mc_agreement_3sigma",
            dev <= 3.0 * mc.std_error + 1e-12,
            format!("|hull - MC| = {dev:.3e}, 3σ = {:.3e}", 3.0 * mc.std_error),
        ),
    ];
    Ok(EnvelopeCheck { measure, mc_value: mc.value, mc_std_error: mc.std_error, invariants })
}

#[cfg(test)]
mod tests {
    use super::*;
    use homoglab::TriadicCube;

    #[test]
    fn envelope_check_of_a_smooth_function() {
        let u = GridFunction::on_cube(&TriadicCube::origin(0), 17, |x| x[0] * x[0] + (2.0 * x[1]).cosh());
        let c = envelope_check(&u, &Region::interior_of(u.square()), 20_000, 4).unwrap();
        assert!(c.passed(), "{:?}", c.invariants);
    }

    #[test]
    fn error_codes() {
        assert_eq!(CliError::from(Error::InvalidInput("x".into())).code, EXIT_VALIDATION);
        assert_eq!(CliError::from(Error::TooManyFailures { failed: 3, total: 10, first: "x".into() }).code, EXIT_PARTIAL);
        assert_eq!(CliError::from(Error::SlopeBox(0.0, 0.0)).code, EXIT_NUMERICAL);
    }
}
