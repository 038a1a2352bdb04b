//! Fast invariant suite behind `homoglab selftest`.

use std::collections::BTreeMap;
use std::fmt;

use homoglab::envelope::{mc_subdiff_measure, slope_box_for, support_violation, KinkExample};
use homoglab::operators::pucci;
use homoglab::rng::SplitMix64;
use homoglab::{
    convex_envelope, mu_constant_coeff, mu_estimate, solve_dirichlet, subdiff_measure, BellmanMode, BoundaryData,
    GridFunction, LinearOp, LocalOperator, MuConfig, OperatorField, PucciSign, Region, SymMatrix, TriadicCube,
};

/// Deliberate corruptions, to check that the suite notices them.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Envelope comparisons run with a negative tolerance.
    EnvelopeTolerance,
    /// Solver exactness compared against a wrong quadratic.
    SolverData,
}

impl Fault {
    pub fn parse(s: &str) -> Option<Fault> {
        match s {
            "envelope-tolerance" => Some(Fault::EnvelopeTolerance),
            "solver-data" => Some(Fault::SolverData),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Check {
    pub module: &'static str,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    fn push(&mut self, module: &'static str, name: &'static str, passed: bool, detail: String) {
        self.checks.push(Check { module, name, passed, detail });
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    /// `(passed, total)` per module.
    pub fn counts(&self) -> BTreeMap<&'static str, (usize, usize)> {
        let mut m = BTreeMap::new();
        for c in &self.checks {
            let e = m.entry(c.module).or_insert((0, 0));
            e.0 += c.passed as usize;
            e.1 += 1;
        }
        m
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{} {}::{} — {}", if c.passed { "PASS" } else { "FAIL" }, c.module, c.name, c.detail)?;
        }
        for (m, (p, t)) in self.counts() {
            writeln!(f, "{m}: {p}/{t} passed")?;
        }
        Ok(())
    }
}

pub fn run(fault: Option<Fault>) -> Report {
    let mut r = Report::default();
    envelope_checks(&mut r, fault);
    operator_checks(&mut r);
    solver_checks(&mut r, fault);
    mu_checks(&mut r);
    r
}

fn q0(n: usize, f: impl Fn([f64; 2]) -> f64) -> GridFunction {
    GridFunction::on_cube(&TriadicCube::origin(0), n, f)
}

fn envelope_checks(r: &mut Report, fault: Option<Fault>) {
    let tol = if fault == Some(Fault::EnvelopeTolerance) { -1e-3 } else { 1e-12 };
    let u = q0(17, |x| (3.0 * x[0]).sin() + x[1] * x[1] - 0.5 * (2.0 * x[1]).cos() * x[0]);
    let env = convex_envelope(&u);
    let worst = u
        .values()
        .iter()
        .zip(env.envelope.values())
        .fold(f64::NEG_INFINITY, |m, (a, b)| m.max(b - a));
    r.push("envelope", "below_u", worst <= tol, format!("max(Γ - u) = {worst:.2e}"));

    let n = 33;
    let u = q0(n, |x| 0.5 * (x[0] * x[0] + x[1] * x[1]));
    let region = Region::interior_of(u.square());
    let m = subdiff_measure(&u, &region);
    let h = u.h();
    let expect = (1.0 - h) * (1.0 - h);
    r.push("envelope", "quadratic_measure", (m - expect).abs() <= tol.max(0.0) + 1e-12, format!("{m:.12} vs {expect:.12}"));

    let u = q0(17, |x| (x[0] + 0.3).powi(4) + x[1] * x[1] * (1.0 + x[0] * x[0]) - 0.2 * x[0] * x[1]);
    let region = Region::interior_of(u.square());
    let hull = subdiff_measure(&u, &region);
    match mc_subdiff_measure(&u, &region, 20_000, slope_box_for(&u, 0.05), 9) {
        Ok(mc) => {
            let dev = (hull - mc.value).abs();
            r.push(
                "envelope",
                "mc_oracle",
                dev <= 3.0 * mc.std_error + tol,
                format!("hull {hull:.5}, MC {:.5} ± {:.5}", mc.value, mc.std_error),
            );
        }
        Err(e) => r.push("envelope", "mc_oracle", false, e.to_string()),
    }

    let ex = KinkExample::new(2.0, 1.0 / 8.0);
    let (i0, j0) = ex.node_at([0.0, 0.0]);
    let (i1, j1) = ex.node_at([1.0, 0.0]);
    let v0 = support_violation(&ex.u, Some(&ex.mask), ex.u.node(i0, j0), 0.0, [0.0, 0.0]);
    let v1 = support_violation(&ex.u, Some(&ex.mask), ex.u.node(i1, j1), 0.0, [2.0, 0.0]);
    r.push(
        "envelope",
        "kink_certificates",
        v0 <= tol.max(0.0) && v1 <= tol.max(0.0) && tol >= 0.0,
        format!("violations {v0:.1e}, {v1:.1e}"),
    );
}

fn operator_checks(r: &mut Report) {
    let mut rng = SplitMix64::new(3);
    let lambda = 4.0;
    let mut ok = true;
    let mut star_ok = true;
    for _ in 0..200 {
        let m = SymMatrix::new2(rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0));
        // random coefficient with spectrum in [1, Λ]
        let th = rng.uniform(0.0, std::f64::consts::PI);
        let (c, s) = (th.cos(), th.sin());
        let (l1, l2) = (rng.uniform(1.0, lambda), rng.uniform(1.0, lambda));
        let a = SymMatrix::new2(l1 * c * c + l2 * s * s, (l1 - l2) * c * s, l1 * s * s + l2 * c * c);
        let lin = LinearOp::new(a, 0.0).eval(&m);
        let hi = pucci(PucciSign::Plus, &m, lambda).unwrap();
        let lo = pucci(PucciSign::Minus, &m, lambda).unwrap();
        ok &= lo - 1e-12 <= lin && lin <= hi + 1e-12;
        let neg = m.scale(-1.0);
        star_ok &= (-pucci(PucciSign::Plus, &neg, lambda).unwrap() - lo).abs() < 1e-12;
    }
    r.push("operators", "pucci_bounds_linear", ok, "P-(M) <= -tr(aM) <= P+(M) on 200 samples".into());
    r.push("operators", "pucci_star", star_ok, "-P+(-M) = P-(M)".into());
    let b = LocalOperator::bellman(
        vec![LinearOp::new(SymMatrix::identity(2), 0.0), LinearOp::new(SymMatrix::scalar(2, 4.0), 1.0)],
        BellmanMode::Min,
    )
    .unwrap();
    let m = SymMatrix::new2(1.0, 0.0, -2.0);
    let v = b.eval(&m);
    r.push("operators", "bellman_min", v == (1.0f64).min(5.0), format!("{v}"));
}

fn solver_checks(r: &mut Report, fault: Option<Fault>) {
    let a = SymMatrix::new2(2.0, 0.5, 1.0);
    let q = SymMatrix::new2(1.0, -0.3, 2.0);
    let op = LinearOp::new(a, 0.5);
    let field = OperatorField::constant(LocalOperator::Linear(op.clone()));
    let sq = TriadicCube::origin(0).square();
    let n = 21;
    let f = GridFunction::from_fn(sq, n, |_| op.eval(&q));
    let exact = |x: [f64; 2]| 0.5 * q.quad(&x) + 0.1 * x[0];
    let g = BoundaryData::Quadratic { a: q.clone(), p: [0.1, 0.0], c: 0.0 };
    match solve_dirichlet(&field, &f, &g, 1e-11) {
        Ok((u, _)) => {
            let shift = if fault == Some(Fault::SolverData) { 1e-3 } else { 0.0 };
            let want = GridFunction::from_fn(sq, n, |x| exact(x) + shift);
            let err = u.max_abs_diff(&want);
            r.push("solver", "quadratic_exactness", err < 1e-9, format!("max error {err:.2e}"));
        }
        Err(e) => r.push("solver", "quadratic_exactness", false, e.to_string()),
    }
    let b = LocalOperator::bellman(
        vec![LinearOp::new(SymMatrix::identity(2), 0.0), LinearOp::new(SymMatrix::scalar(2, 3.0), 0.0)],
        BellmanMode::Max,
    )
    .unwrap();
    let field = OperatorField::constant(b.clone());
    let q = SymMatrix::identity(2);
    let f = GridFunction::from_fn(sq, n, |_| b.eval(&q));
    match solve_dirichlet(&field, &f, &BoundaryData::quadratic(q.clone()), 1e-11) {
        Ok((u, rep)) => {
            let want = GridFunction::from_fn(sq, n, |x| 0.5 * q.quad(&x));
            let err = u.max_abs_diff(&want);
            r.push("solver", "bellman_exactness", err < 1e-9, format!("max error {err:.2e}, {} iterations", rep.iterations));
        }
        Err(e) => r.push("solver", "bellman_exactness", false, e.to_string()),
    }
}

fn mu_checks(r: &mut Report) {
    let a = SymMatrix::diag(&[1.0, 4.0]);
    let op = LocalOperator::linear(a.clone(), 2.0);
    let closed = mu_constant_coeff(&op).value;
    let cfg = MuConfig { n: 34, optimize: false, budget: 0, tol: 1e-9 };
    match mu_estimate(&OperatorField::constant(op), TriadicCube::origin(0), cfg) {
        Ok(e) => {
            let rel = (e.value - closed).abs() / closed;
            r.push("mu", "constant_coefficient", rel < 0.08, format!("{:.5} vs closed form {closed:.5}", e.value));
        }
        Err(e) => r.push("mu", "constant_coefficient", false, e.to_string()),
    }
    let zero = OperatorField::constant(LocalOperator::linear(a, 0.0));
    match mu_estimate(&zero, TriadicCube::origin(0), cfg) {
        Ok(e) => r.push("mu", "homogeneous_zero", e.value == 0.0, format!("{}", e.value)),
        Err(e) => r.push("mu", "homogeneous_zero", false, e.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_suite_passes() {
        let r = run(None);
        assert!(r.passed(), "{r}");
        assert_eq!(r.counts().len(), 4);
    }

    #[test]
    fn injected_faults_are_named() {
        let r = run(Some(Fault::EnvelopeTolerance));
        assert!(!r.passed());
        assert!(r.failures().iter().all(|c| c.module == "envelope"));
        let r = run(Some(Fault::SolverData));
        let names: Vec<_> = r.failures().iter().map(|c| c.name).collect();
        assert_eq!(names, vec!["quadratic_exactness"]);
    }
}
