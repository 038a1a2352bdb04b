//! Fixtures shared by the benchmarks.

use std::sync::Arc;

use homoglab::homogenize::window_for;
use homoglab::{field_of, sample_realization, GridFunction, OperatorField, TileEnsemble, TriadicCube};

pub const N: usize = 82;

/// A nonconvex smooth grid function on `Q_0` with `n` points per side.
pub fn wavy(n: usize) -> GridFunction {
    GridFunction::on_cube(&TriadicCube::origin(0), n, |x| {
        (3.0 * x[0]).sin() * (2.0 * x[1]).cos() + x[0] * x[0] + 0.5 * x[1] * x[1]
    })
}

/// Forcing checkerboard realization covering `Q_m`.
pub fn checkerboard_field(m: i32, index: u64) -> OperatorField {
    let ens = Arc::new(TileEnsemble::forcing_checkerboard());
    field_of(&sample_realization(&ens, window_for(m), 1, index).expect("window is valid"))
}
