//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Runs without the libtest harness so the lines are never
//! captured.

use std::fs;
use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use homoglab::envelope::{mc_subdiff_measure, slope_box_for, support_violation, KinkExample};
use homoglab::homogenize::{
    balance_constant, effective_from_cell, effective_linear, error_rate_experiment, expected_mu_curve,
    variance_decay_experiment, window_for, CellConfig, RunConfig,
};
use homoglab::mu::{abp_sides, curvature_bounds, f0_range, mu_constant_coeff};
use homoglab::rng::SplitMix64;
use homoglab::{
    field_of, mu_estimate, sample_realization, subdiff_measure, BoundaryData, GridFunction, LocalOperator, MuConfig,
    OperatorField, Region, SymMatrix, TileEnsemble, TriadicCube,
};
use homoglab_cli::{run, ExperimentConfig};

const SEED: u64 = 20_240_601;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn say(line: &str) {
    let mut e = std::io::stderr();
    let _ = writeln!(e, "{line}");
    let _ = e.flush();
}

fn q0(n: usize, f: impl Fn([f64; 2]) -> f64) -> GridFunction {
    GridFunction::on_cube(&TriadicCube::origin(0), n, f)
}

fn mu_cfg(n: usize, optimize: bool, budget: usize) -> MuConfig {
    MuConfig { n, optimize, budget, tol: 1e-8 }
}

fn c1_envelope_oracle() -> Outcome {
    let mut rng = SplitMix64::new(SEED);
    let mut worst_z: f64 = 0.0;
    let mut fails = 0;
    for _ in 0..10 {
        let c: Vec<f64> = (0..8).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let k = [rng.uniform(1.0, 4.0), rng.uniform(1.0, 4.0)];
        let u = q0(17, |x| {
            c[0] * (k[0] * x[0] + c[1]).sin()
                + c[2] * (k[1] * x[1] + c[3]).cos()
                + c[4] * x[0] * x[1]
                + (1.0 + c[5].abs()) * x[0] * x[0]
                + c[6] * x[1] * x[1] * x[1]
                + c[7] * (x[0] + x[1]).powi(4)
        });
        let region = Region::interior_of(u.square());
        let hull = subdiff_measure(&u, &region);
        match mc_subdiff_measure(&u, &region, 40_000, slope_box_for(&u, 0.05), rng.next_u64()) {
            Ok(mc) => {
                let z = if mc.std_error > 0.0 { (hull - mc.value).abs() / mc.std_error } else if hull == mc.value { 0.0 } else { f64::INFINITY };
                worst_z = worst_z.max(z);
                if z > 3.0 {
                    fails += 1;
                }
            }
            Err(_) => fails += 1,
        }
    }
    outcome(fails == 0, format!("10 functions, worst |hull - MC|/σ = {worst_z:.2}, {fails} outside 3σ"))
}

fn c2_kink_example() -> Outcome {
    let h = 1.0 / 32.0;
    let ex = KinkExample::new(2.0, h);
    let env = ex.envelope();
    let n = ex.u.n();
    let mut worst: f64 = 0.0;
    for j in 0..n {
        for i in 0..n {
            if ex.mask[j * n + i] {
                worst = worst.max((env.envelope.get(i, j) - KinkExample::w_at(ex.u.node(i, j))).abs());
            }
        }
    }
    let (i0, j0) = ex.node_at([0.0, 0.0]);
    let (i1, j1) = ex.node_at([1.0, 0.0]);
    // exact nodewise inequalities u(y) >= w(x) + p·(y - x) on U, with w(0) = w(e1) = 0
    let v0 = support_violation(&ex.u, Some(&ex.mask), ex.u.node(i0, j0), KinkExample::w_at([0.0, 0.0]), [0.0, 0.0]);
    let v1 = support_violation(&ex.u, Some(&ex.mask), ex.u.node(i1, j1), KinkExample::w_at([1.0, 0.0]), [2.0, 0.0]);
    outcome(
        worst <= h * h && v0 <= 0.0 && v1 <= 0.0,
        format!("max |Γ - w| = {worst:.2e} (h² = {:.2e}); certificate violations {v0:.1e}, {v1:.1e}", h * h),
    )
}

fn c3_sharpness() -> Outcome {
    let mut ratios = Vec::new();
    for r in [1.0, 0.5, 0.25] {
        let u = q0(82, |x| 0.5 * r * x[0] * x[0] + 0.5 / r * x[1] * x[1]);
        ratios.push(subdiff_measure(&u, &Region::interior_of(u.square())));
    }
    let ok = ratios.iter().all(|v| (0.95..=1.05).contains(v));
    outcome(ok, format!("measure/|Q0| = {:.4}, {:.4}, {:.4} for r = 1, 1/2, 1/4", ratios[0], ratios[1], ratios[2]))
}

fn c4_constant_mu() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for a in [SymMatrix::identity(2), SymMatrix::diag(&[1.0, 4.0])] {
        let op = LocalOperator::linear(a.clone(), 2.0);
        let closed = mu_constant_coeff(&op).value;
        let est = mu_estimate(&OperatorField::constant(op), TriadicCube::origin(0), mu_cfg(82, false, 0));
        match est {
            Ok(e) => {
                let rel = (e.value - closed).abs() / closed;
                ok &= rel <= 0.05;
                parts.push(format!("{:.5} vs {closed:.5} ({:.2}%)", e.value, 100.0 * rel));
            }
            Err(e) => {
                ok = false;
                parts.push(e.to_string());
            }
        }
    }
    outcome(ok, format!("a = I: {}; a = diag(1,4): {}", parts[0], parts[1]))
}

/// Criteria 5 and 6 share the same 100 realizations.
fn c5_c6_abp_and_bounds() -> (Outcome, Outcome) {
    let ens = Arc::new(TileEnsemble::forcing_checkerboard());
    let cfg = mu_cfg(82, true, 40);
    let mut abp_fail = 0;
    let mut bound_fail = 0;
    let mut errors = 0;
    let mut worst_abp: f64 = 0.0;
    let (mut worst_lo, mut worst_hi) = (f64::INFINITY, 0.0f64);
    for i in 0..100 {
        let r = match sample_realization(&ens, window_for(1), SEED, i) {
            Ok(r) => r,
            Err(_) => {
                errors += 1;
                continue;
            }
        };
        let field = field_of(&r);
        for m in [0, 1] {
            let cube = TriadicCube::origin(m);
            let (e, range) = match (mu_estimate(&field, cube, cfg), f0_range(&field, cube, cfg.n)) {
                (Ok(e), Ok(r)) => (e, r),
                _ => {
                    errors += 1;
                    continue;
                }
            };
            let (lhs, rhs) = abp_sides(&e);
            let h = e.u.h();
            worst_abp = worst_abp.max(lhs / (rhs + h));
            if lhs > rhs + h {
                abp_fail += 1;
            }
            let (lo, hi) = curvature_bounds(range.0, range.1, ens.lambda());
            worst_lo = worst_lo.min(e.value / lo);
            worst_hi = worst_hi.max(e.value / hi);
            if e.value < 0.9 * lo || e.value > 1.1 * hi {
                bound_fail += 1;
            }
        }
    }
    (
        outcome(
            abp_fail == 0 && errors == 0,
            format!("200 estimates (Q0, Q1), {abp_fail} violations, {errors} errors; max lhs/(rhs + h) = {worst_abp:.3}"),
        ),
        outcome(
            bound_fail == 0 && errors == 0,
            format!("{bound_fail} violations; min value/lower = {worst_lo:.2}, max value/upper = {worst_hi:.3}"),
        ),
    )
}

fn c7_subadditivity() -> Outcome {
    let ens = Arc::new(TileEnsemble::forcing_checkerboard());
    let parent_cfg = mu_cfg(82, true, 40);
    let child_cfg = mu_cfg(82, false, 0);
    let mut fails = 0;
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        let r = sample_realization(&ens, window_for(1), SEED + 7, i).unwrap();
        let field = field_of(&r);
        let parent = TriadicCube::origin(1);
        let p = match mu_estimate(&field, parent, parent_cfg) {
            Ok(e) => e.value,
            Err(_) => {
                fails += 1;
                continue;
            }
        };
        let mut sum = 0.0;
        for c in parent.subcubes(1) {
            sum += mu_estimate(&field, c, child_cfg).map(|e| e.value).unwrap_or(f64::NAN);
        }
        let mean = sum / 9.0;
        worst = worst.max(p / mean);
        if !(p <= 1.03 * mean) {
            fails += 1;
        }
    }
    outcome(fails == 0, format!("50 realizations, {fails} violations; max parent/mean(children) = {worst:.4}"))
}

fn c8_moment_monotonicity() -> Outcome {
    let ens = Arc::new(TileEnsemble::forcing_checkerboard());
    let rc = RunConfig { mu: mu_cfg(82, false, 0), workers: 0 };
    let curve = match expected_mu_curve(&ens, &SymMatrix::zeros(2), &[0, 1, 2], &[0.0], 200, SEED + 8, &rc) {
        Ok(c) => c,
        Err(e) => return outcome(false, e.to_string()),
    };
    let mut worst_z = f64::NEG_INFINITY;
    let mut ok = true;
    for mi in 0..2 {
        for star in [false, true] {
            for power in [1, 2] {
                let (d, se) = curve.step_change(mi, 0, power, star);
                let z = if se > 0.0 { d / se } else if d > 0.0 { f64::INFINITY } else { 0.0 };
                worst_z = worst_z.max(z);
                ok &= z <= 2.0;
            }
        }
    }
    let means: Vec<String> = (0..3).map(|mi| format!("{:.4}", curve.point(mi, 0).mean_mu)).collect();
    outcome(
        ok,
        format!("N = {}, E[μ] by m = [{}], worst increase = {worst_z:.2} SE", curve.samples.len(), means.join(", ")),
    )
}

fn c9_variance_decay(s_hat: f64) -> Outcome {
    let ens = Arc::new(TileEnsemble::checkerboard());
    let rc = RunConfig { mu: mu_cfg(82, false, 0), workers: 0 };
    match variance_decay_experiment(&ens, &SymMatrix::identity(2), &[0, 1, 2, 3], s_hat, 200, SEED + 9, &rc) {
        Ok(d) => {
            let worst = d.monotonicity_z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let tau = d.tau_hat.unwrap_or(f64::NAN);
            let totals: Vec<String> = d.totals.iter().map(|t| format!("{t:.3e}")).collect();
            outcome(
                tau < 1.0 && worst <= 2.0,
                format!("ŝ = {s_hat:.4}, τ̂ = {tau:.4}, E[μ²]+E[μ_*²] = [{}], worst increase = {worst:.2} SE", totals.join(", ")),
            )
        }
        Err(e) => outcome(false, e.to_string()),
    }
}

fn c10_cross_validation() -> (Outcome, f64) {
    let ens = Arc::new(TileEnsemble::checkerboard());
    let a = SymMatrix::identity(2);
    let rc = RunConfig { mu: mu_cfg(82, false, 0), workers: 0 };
    let b0 = balance_constant(&ens, &a, 0, 60, 1e-2, SEED + 10, &rc);
    let b = balance_constant(&ens, &a, 1, 60, 1e-2, SEED + 10, &rc);
    let cell = effective_from_cell(&ens, &a, &[0.04, 0.02, 0.01], &CellConfig { side: 9, k: 4, tol: 1e-8 }, 60, SEED + 10, 0);
    match (b, cell) {
        (Ok(b), Ok(c)) => {
            let half = 1.96 * (b.se * b.se + c.se * c.se).sqrt();
            let diff = (b.s_hat - c.cell_hat).abs();
            let ok = (b.s_hat + 3.2).abs() <= 0.32 && (c.cell_hat + 3.2).abs() <= 0.32 && diff <= half;
            let drift = b0.map(|b0| format!("{:+.4}", b.s_hat - b0.s_hat)).unwrap_or_else(|e| e.to_string());
            (
                outcome(
                    ok,
                    format!(
                        "ŝ(m=1) = {:.4} ± {:.4}, cell = {:.4} ± {:.4}, |diff| = {diff:.4} vs joint 95% half-width {half:.4}; drift ŝ(1) - ŝ(0) = {drift}",
                        b.s_hat, b.se, c.cell_hat, c.se
                    ),
                ),
                b.s_hat,
            )
        }
        (Err(e), _) | (_, Err(e)) => (outcome(false, e.to_string()), -3.2),
    }
}

fn c11_deterministic() -> Outcome {
    let tile = LocalOperator::linear(SymMatrix::new2(3.0, 0.5, 2.0), 0.7);
    let ens = Arc::new(TileEnsemble::constant(tile.clone()).unwrap());
    let a = SymMatrix::new2(0.4, -0.2, 0.1);
    let rc = RunConfig { mu: mu_cfg(28, false, 0), workers: 0 };
    let exact = tile.eval(&a);
    let b = balance_constant(&ens, &a, 0, 2, 1e-6, SEED, &rc);
    let c = effective_from_cell(&ens, &a, &[0.04, 0.02, 0.01], &CellConfig { side: 3, k: 3, tol: 1e-10 }, 2, SEED, 0);
    let curve = expected_mu_curve(&ens, &a, &[0, 1], &[-0.5, 0.0, 0.5], 3, SEED, &rc);
    let err = error_rate_experiment(
        &ens,
        TriadicCube::origin(0),
        1.0,
        &BoundaryData::Zero,
        &tile,
        &[1.0 / 3.0, 1.0 / 9.0, 1.0 / 27.0],
        3,
        2,
        SEED,
        &rc,
    );
    match (b, c, curve, err) {
        (Ok(b), Ok(c), Ok(curve), Ok(err)) => {
            let db = (b.s_hat - exact).abs();
            let dc = (c.cell_hat - exact).abs();
            let max_var = curve.points().iter().map(|p| p.var_mu.max(p.var_mustar)).fold(0.0, f64::max);
            let max_gap = err.rows.iter().flat_map(|r| r.gaps.iter().cloned()).fold(0.0, f64::max);
            outcome(
                db <= 1e-6 && dc <= 1e-6 && max_var == 0.0 && c.se == 0.0 && max_gap <= 1e-6,
                format!("|ŝ - F(A)| = {db:.1e}, |cell - F(A)| = {dc:.1e}, max variance {max_var}, max gap {max_gap:.1e}"),
            )
        }
        _ => outcome(false, "an estimator returned an error"),
    }
}

fn c12_error_rate() -> Outcome {
    let ens = Arc::new(TileEnsemble::checkerboard());
    let lin = match effective_linear(&ens, &[0.04, 0.02, 0.01], &CellConfig { side: 9, k: 4, tol: 1e-8 }, 20, SEED + 12, 0) {
        Ok(l) => l,
        Err(e) => return outcome(false, e.to_string()),
    };
    let rc = RunConfig { mu: mu_cfg(82, false, 0), workers: 0 };
    let r = error_rate_experiment(
        &ens,
        TriadicCube::origin(0),
        1.0,
        &BoundaryData::Zero,
        &LocalOperator::Linear(lin.clone()),
        &[1.0 / 3.0, 1.0 / 9.0, 1.0 / 27.0],
        3,
        20,
        SEED + 12,
        &rc,
    );
    match r {
        Ok(r) => {
            let med: Vec<f64> = r.rows.iter().map(|x| x.median_gap).collect();
            let decreasing = med.windows(2).all(|w| w[1] < w[0]);
            let alpha = r.alpha_hat.unwrap_or(f64::NAN);
            outcome(
                decreasing && alpha > 0.0,
                format!(
                    "ā = [{:.3} {:.3}; {:.3}], median gaps {:.3e}, {:.3e}, {:.3e}; α̂ = {alpha:.3}",
                    lin.a.get(0, 0),
                    lin.a.get(0, 1),
                    lin.a.get(1, 1),
                    med[0],
                    med[1],
                    med[2]
                ),
            )
        }
        Err(e) => outcome(false, e.to_string()),
    }
}

fn c13_determinism() -> Outcome {
    let configs = [
        "[run]\nkind = mu-decay\nseed = 5\nrealizations = 6\n[ensemble]\npreset = checkerboard\n[mu]\nn = 28\noptimize = false\n[decay]\na = 1 0 1\nm = 0..2\n",
        "[run]\nkind = mu\nseed = 6\nrealizations = 3\n[ensemble]\npreset = forcing-checkerboard\n[mu]\nn = 28\nbudget = 10\n[curve]\nm = 0,1\ns = -0.2, 0.3\n",
        "[run]\nkind = error-rate\nseed = 7\nrealizations = 3\n[ensemble]\npreset = checkerboard\n[cell]\nside = 3\nk = 3\n[error]\neps = 1/3, 1/9\n",
    ];
    let mut compared = 0;
    for text in configs {
        let cfg = ExperimentConfig::parse(text).unwrap();
        let mut dirs = Vec::new();
        for workers in [1, 2] {
            let dir = tempfile::tempdir().unwrap();
            let mut c = cfg.clone();
            c.workers = workers;
            if let Err(e) = run::run(&c, dir.path(), false) {
                return outcome(false, format!("{}: {e}", cfg.kind.as_str()));
            }
            dirs.push(dir);
        }
        for entry in fs::read_dir(dirs[0].path()).unwrap() {
            let name = entry.unwrap().file_name();
            if !name.to_string_lossy().ends_with(".csv") {
                continue;
            }
            let a = fs::read(dirs[0].path().join(&name)).unwrap();
            let b = fs::read(dirs[1].path().join(&name)).unwrap();
            if a != b {
                return outcome(false, format!("{} differs between reruns", name.to_string_lossy()));
            }
            compared += 1;
        }
    }
    outcome(compared > 0, format!("{compared} CSV files byte-identical across reruns (1 vs 2 workers)"))
}

fn main() {
    // `cargo test` passes harness flags such as `--nocapture`; a filter that
    // does not name this suite skips it.
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return;
    }
    let mut results: Vec<(u32, Outcome, f64)> = Vec::new();
    let timed = |k: u32, f: &mut dyn FnMut() -> Outcome, results: &mut Vec<(u32, Outcome, f64)>| {
        let t = Instant::now();
        let o = f();
        let secs = t.elapsed().as_secs_f64();
        say(&format!("criterion {k:>2}: {} — {} [{secs:.1}s]", if o.pass { "PASS" } else { "FAIL" }, o.detail));
        results.push((k, o, secs));
    };
    timed(1, &mut c1_envelope_oracle, &mut results);
    timed(2, &mut c2_kink_example, &mut results);
    timed(3, &mut c3_sharpness, &mut results);
    timed(4, &mut c4_constant_mu, &mut results);
    let t = Instant::now();
    let (o5, o6) = c5_c6_abp_and_bounds();
    let secs = t.elapsed().as_secs_f64();
    for (k, o) in [(5, o5), (6, o6)] {
        say(&format!("criterion {k:>2}: {} — {} [{secs:.1}s shared]", if o.pass { "PASS" } else { "FAIL" }, o.detail));
        results.push((k, o, secs));
    }
    timed(7, &mut c7_subadditivity, &mut results);
    timed(8, &mut c8_moment_monotonicity, &mut results);
    let t = Instant::now();
    let (o10, s_hat) = c10_cross_validation();
    let secs10 = t.elapsed().as_secs_f64();
    timed(9, &mut || c9_variance_decay(s_hat), &mut results);
    say(&format!("criterion 10: {} — {} [{secs10:.1}s]", if o10.pass { "PASS" } else { "FAIL" }, o10.detail));
    results.push((10, o10, secs10));
    timed(11, &mut c11_deterministic, &mut results);
    timed(12, &mut c12_error_rate, &mut results);
    timed(13, &mut c13_determinism, &mut results);
    let failed: Vec<u32> = results.iter().filter(|r| !r.1.pass).map(|r| r.0).collect();
    say(&format!(
        "acceptance: {}/{} criteria passed{}",
        results.len() - failed.len(),
        results.len(),
        if failed.is_empty() { String::new() } else { format!("; failed: {failed:?}") }
    ));
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
