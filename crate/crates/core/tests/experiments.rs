use std::sync::Arc;

use homoglab::homogenize::{error_rate_experiment, expected_mu_curve, RunConfig};
use homoglab::{BoundaryData, LocalOperator, MuConfig, SymMatrix, TileEnsemble, TriadicCube};

fn quick() -> RunConfig {
    RunConfig { mu: MuConfig { n: 28, optimize: false, budget: 0, tol: 1e-8 }, workers: 0 }
}

#[test]
fn harmonic_mean_beats_arithmetic_mean() {
    // the scalar checkerboard homogenizes to the harmonic mean 8/5, not 5/2
    let ens = Arc::new(TileEnsemble::checkerboard());
    let eps = [1.0 / 27.0];
    let gap = |s: f64| {
        let op = LocalOperator::scalar(2, s, 0.0);
        let r = error_rate_experiment(&ens, TriadicCube::origin(0), 1.0, &BoundaryData::Zero, &op, &eps, 3, 10, 3, &quick())
            .unwrap();
        r.rows[0].median_gap
    };
    let (harmonic, arithmetic) = (gap(1.6), gap(2.5));
    assert!(harmonic < arithmetic, "{harmonic} vs {arithmetic}");
}

#[test]
fn curve_is_monotone_in_the_shift() {
    let ens = Arc::new(TileEnsemble::forcing_checkerboard());
    let ss = [-0.5, 0.0, 0.5, 1.0];
    let c = expected_mu_curve(&ens, &SymMatrix::zeros(2), &[0, 1], &ss, 12, 9, &quick()).unwrap();
    for mi in 0..2 {
        for si in 0..3 {
            let (a, b) = (c.point(mi, si), c.point(mi, si + 1));
            assert!(b.mean_mu + 2.0 * b.se_mu >= a.mean_mu);
            assert!(b.mean_mustar <= a.mean_mustar + 2.0 * a.se_mustar);
        }
    }
    for p in c.points() {
        assert!(p.m2_mu + 1e-15 >= p.mean_mu * p.mean_mu);
        assert!(p.n == 12);
    }
    let csv = c.to_csv();
    assert_eq!(csv.lines().count(), 1 + 2 * ss.len());
    assert!(csv.starts_with("m,s,N,mean_mu,mean_mustar,m2_mu,m2_mustar"));
}

#[test]
fn worker_count_does_not_change_results() {
    let ens = Arc::new(TileEnsemble::forcing_checkerboard());
    let run = |w| {
        let rc = RunConfig { workers: w, ..quick() };
        expected_mu_curve(&ens, &SymMatrix::identity(2), &[0, 1], &[-2.0], 6, 4, &rc).unwrap().to_csv()
    };
    assert_eq!(run(1), run(3));
}
