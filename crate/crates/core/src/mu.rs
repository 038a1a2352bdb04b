//! The curvature quantity `μ(U, F) = |U|⁻¹ sup{ |∂Γ_u(U)| : F(D²u, x) >= 0 in U }`.
//!
//! Estimates are certified lower bounds: every reported value is the envelope
//! measure of an explicit grid function that passes `apply_operator >= -tol`
//! at all interior nodes. Candidates are exact solutions of `F = 0` (a
//! maximizer may be taken to solve the equation) under a low-dimensional
//! family of boundary data, seeded by constant-coefficient quadratics.

use std::f64::consts::PI;

use crate::envelope::{subdiff_measure, Region};
use crate::error::{Error, Result};
use crate::grid::{GridFunction, Square, TriadicCube};
use crate::linalg::SymMatrix;
use crate::operators::{BellmanMode, LocalOperator, OperatorField};
use crate::rng::SplitMix64;
use crate::solver::{apply_operator, BoundaryData, DirichletProblem, Stencil, DIRECTIONS};

/// Nodewise tolerance for supersolution certificates.
pub const CERT_TOL: f64 = 1e-8;

/// `sup{det A : A ⪰ 0, F(A) >= 0}` for an x-independent operator.
#[derive(Clone, Debug)]
pub struct ConstCoeffMu {
    pub value: f64,
    /// `None` when the value is 0.
    pub maximizer: Option<SymMatrix>,
}

/// Closed form for a single linear control, a shape search otherwise.
pub fn mu_constant_coeff(op: &LocalOperator) -> ConstCoeffMu {
    let d = op.dim().unwrap_or(2);
    if let LocalOperator::Linear(l) = op {
        // Lagrange: A* = (c/d) a⁻¹
        if l.c <= 0.0 {
            return ConstCoeffMu { value: 0.0, maximizer: None };
        }
        let a = l.a.inverse().expect("positive definite").scale(l.c / d as f64);
        return ConstCoeffMu { value: (l.c / d as f64).powi(d as i32) / l.a.det(), maximizer: Some(a) };
    }
    mu_constant_coeff_fn(d, |m| op.eval(m))
}

/// Largest `t` with `F(tS) >= 0` (F nonincreasing along `tS`, `S ⪰ 0`).
fn max_scale(f: &impl Fn(&SymMatrix) -> f64, s: &SymMatrix) -> f64 {
    if f(&s.scale(0.0)) <= 0.0 {
        return 0.0;
    }
    let mut hi = 1.0;
    let mut k = 0;
    while f(&s.scale(hi)) >= 0.0 {
        hi *= 2.0;
        k += 1;
        if k > 200 {
            return f64::INFINITY;
        }
    }
    let mut lo = if k == 0 { 0.0 } else { hi / 2.0 };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(&s.scale(mid)) >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Shape matrix `exp(K)` (determinant one) from traceless parameters.
fn shape(d: usize, theta: &[f64]) -> SymMatrix {
    let mut k = SymMatrix::zeros(d);
    let mut it = theta.iter();
    let mut tr = 0.0;
    for i in 0..d - 1 {
        let v = *it.next().unwrap();
        k.set(i, i, v);
        tr += v;
    }
    k.set(d - 1, d - 1, -tr);
    for i in 0..d {
        for j in (i + 1)..d {
            k.set(i, j, *it.next().unwrap());
        }
    }
    k.map_spectrum(f64::exp)
}

/// Maximizes `det A` over `{A ⪰ 0, F(A) >= 0}` for any nonincreasing `F`:
/// writing `A = t S` with `det S = 1`, `t(S)` is found by bisection and the
/// shape is optimized by a multi-start pattern search over `log S`.
pub fn mu_constant_coeff_fn(d: usize, f: impl Fn(&SymMatrix) -> f64) -> ConstCoeffMu {
    shape_search(d, f, 4, 1e-11)
}

fn shape_search(d: usize, f: impl Fn(&SymMatrix) -> f64, extra_starts: usize, step_tol: f64) -> ConstCoeffMu {
    if f(&SymMatrix::zeros(d)) <= 0.0 {
        return ConstCoeffMu { value: 0.0, maximizer: None };
    }
    let p = d * (d + 1) / 2 - 1;
    let obj = |th: &[f64]| max_scale(&f, &shape(d, th));
    let mut rng = SplitMix64::new(0x5eed_c0c0);
    let mut starts = vec![vec![0.0; p]];
    for _ in 0..extra_starts {
        starts.push((0..p).map(|_| rng.uniform(-1.5, 1.5)).collect());
    }
    let mut best_th = starts[0].clone();
    let mut best_t = obj(&best_th);
    for start in starts {
        let mut th = start;
        let mut t = obj(&th);
        let mut step = 0.5;
        while step > step_tol {
            let mut moved = false;
            let mut dirs: Vec<Vec<f64>> = Vec::new();
            for k in 0..p {
                let mut e = vec![0.0; p];
                e[k] = 1.0;
                dirs.push(e);
            }
            for _ in 0..(2 * p + 2) {
                let v: Vec<f64> = (0..p).map(|_| rng.normal()).collect();
                let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
                dirs.push(v.iter().map(|x| x / nv).collect());
            }
            for dir in &dirs {
                for sgn in [1.0, -1.0] {
                    let cand: Vec<f64> = th.iter().zip(dir).map(|(a, b)| a + sgn * step * b).collect();
                    let ct = obj(&cand);
                    if ct > t * (1.0 + 1e-15) {
                        th = cand;
                        t = ct;
                        moved = true;
                    }
                }
            }
            if !moved {
                step *= 0.5;
            }
        }
        if t > best_t {
            best_t = t;
            best_th = th;
        }
    }
    if !best_t.is_finite() || best_t <= 0.0 {
        return ConstCoeffMu { value: if best_t.is_finite() { 0.0 } else { f64::INFINITY }, maximizer: None };
    }
    let a = shape(d, &best_th).scale(best_t);
    ConstCoeffMu { value: a.det(), maximizer: Some(a) }
}

#[derive(Clone, Copy, Debug)]
pub struct MuConfig {
    /// Grid points per side.
    pub n: usize,
    /// Run the boundary-data search after the initial candidates.
    pub optimize: bool,
    /// Maximum number of Dirichlet solves.
    pub budget: usize,
    /// Solver residual tolerance.
    pub tol: f64,
}

impl Default for MuConfig {
    fn default() -> Self {
        MuConfig { n: 82, optimize: true, budget: 200, tol: 1e-8 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MuMethod {
    /// The seeding quadratic itself.
    Quadratic,
    /// Exact solve with quadratic (or zero) boundary data.
    Solve,
    /// Exact solve with searched boundary data.
    Search,
}

impl MuMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            MuMethod::Quadratic => "quadratic",
            MuMethod::Solve => "solve",
            MuMethod::Search => "search",
        }
    }
}

#[derive(Clone, Debug)]
pub struct MuEstimate {
    /// `|∂Γ_u(U)| / |U|` of the certified candidate.
    pub value: f64,
    pub method: MuMethod,
    /// Description of the candidate's boundary data.
    pub boundary: String,
    /// Dirichlet solves spent.
    pub solves: usize,
    /// Smallest interior value of `F_h(D²_h u, x)` (>= -CERT_TOL).
    pub cert_residual: f64,
    pub n: usize,
    pub cube: TriadicCube,
    pub u: GridFunction,
}

struct Candidate {
    value: f64,
    resid: f64,
    u: GridFunction,
}

/// Reusable μ estimator for one base field on one cube; shifts, stars and
/// translations of that field reuse factored matrices.
pub struct MuProblem {
    cube: TriadicCube,
    config: MuConfig,
    problem: DirichletProblem,
    /// tile ids at interior nodes with node counts
    tiles: Vec<(usize, usize)>,
}

impl MuProblem {
    pub fn new(field: &OperatorField, cube: TriadicCube, config: MuConfig) -> Result<Self> {
        if config.n < 3 {
            return Err(Error::InvalidInput(format!("mu needs n >= 3, got {}", config.n)));
        }
        let square = cube.square();
        let problem = DirichletProblem::new(field, square, config.n)?;
        let h = problem.h();
        let mut counts = vec![0usize; field.base_tiles().len()];
        for j in 1..config.n - 1 {
            for i in 1..config.n - 1 {
                let x = [square.lo[0] + i as f64 * h, square.lo[1] + j as f64 * h];
                counts[field.tile_id(x)?] += 1;
            }
        }
        let tiles = counts.iter().enumerate().filter(|(_, &c)| c > 0).map(|(k, &c)| (k, c)).collect();
        Ok(MuProblem { cube, config, problem, tiles })
    }

    pub fn cube(&self) -> TriadicCube {
        self.cube
    }

    fn certify(&self, field: &OperatorField, u: GridFunction) -> Result<Option<Candidate>> {
        let r = apply_operator(field, &u)?;
        let n = u.n();
        let mut resid = f64::INFINITY;
        for j in 1..n - 1 {
            for i in 1..n - 1 {
                resid = resid.min(r.get(i, j));
            }
        }
        if !(resid >= -CERT_TOL) {
            return Ok(None);
        }
        let sq = u.square();
        let value = subdiff_measure(&u, &Region::interior_of(sq)) / sq.area();
        Ok(Some(Candidate { value, resid, u }))
    }

    fn solve(&mut self, field: &OperatorField, g: &BoundaryData) -> Result<Option<Candidate>> {
        let f = GridFunction::zeros(self.cube.square(), self.config.n);
        let (u, _) = self.problem.solve(&f, g, self.config.tol)?;
        self.certify(field, u)
    }

    /// Estimates `μ(cube, field)`; `field` must be a transform of the field
    /// this problem was built with.
    pub fn estimate(&mut self, field: &OperatorField) -> Result<MuEstimate> {
        self.problem.set_field(field)?;
        let sq = self.cube.square();
        let xc = sq.center();
        let n = self.config.n;
        let ops: Vec<(crate::operators::TransformedOp<'_>, f64)> =
            self.tiles.iter().map(|&(k, c)| (field.tile_op(k), c as f64)).collect();
        let total: f64 = ops.iter().map(|(_, c)| c).sum();
        let zero = SymMatrix::zeros(2);
        let f0_sup = ops.iter().map(|(o, _)| o.eval(&zero)).fold(f64::NEG_INFINITY, f64::max);
        // a quadratic that is a supersolution for every tile, and the
        // constant-coefficient optimum of the node-averaged operator
        let a_min = shape_search(2, |m| ops.iter().map(|(o, _)| o.eval(m)).fold(f64::INFINITY, f64::min), 0, 1e-7).maximizer;
        let a_avg = shape_search(2, |m| ops.iter().map(|(o, c)| c * o.eval(m)).sum::<f64>() / total, 0, 1e-7).maximizer;
        drop(ops);

        let centered = |a: &SymMatrix| {
            let ax = a.apply(&xc);
            BoundaryData::Quadratic { a: a.clone(), p: [-ax[0], -ax[1]], c: 0.5 * a.quad(&xc) }
        };
        let describe = |a: &SymMatrix| format!("quadratic({:.6e},{:.6e},{:.6e})", a.get(0, 0), a.get(0, 1), a.get(1, 1));

        let mut best: Option<(Candidate, MuMethod, String, BoundaryData)> = None;
        let mut solves = 0usize;
        let consider = |c: Option<Candidate>, m: MuMethod, desc: String, g: BoundaryData, best: &mut Option<(Candidate, MuMethod, String, BoundaryData)>| {
            if let Some(c) = c {
                if best.as_ref().map_or(true, |b| c.value > b.0.value) {
                    *best = Some((c, m, desc, g));
                }
            }
        };
        if let Some(a) = &a_min {
            let g = centered(a);
            let q = GridFunction::from_fn(sq, n, |x| {
                let d = [x[0] - xc[0], x[1] - xc[1]];
                0.5 * a.quad(&d)
            });
            let c = self.certify(field, q)?;
            consider(c, MuMethod::Quadratic, describe(a), g.clone(), &mut best);
            let c = self.solve(field, &g)?;
            solves += 1;
            consider(c, MuMethod::Solve, describe(a), g, &mut best);
        }
        if let Some(a) = &a_avg {
            let differs = a_min.as_ref().map_or(true, |b| (a - b).max_abs_entry() > 1e-12 * (1.0 + a.max_abs_entry()));
            if differs {
                let g = centered(a);
                let c = self.solve(field, &g)?;
                solves += 1;
                consider(c, MuMethod::Solve, describe(a), g, &mut best);
            }
        }
        if best.is_none() {
            let c = self.solve(field, &BoundaryData::Zero)?;
            solves += 1;
            consider(c, MuMethod::Solve, "zero".into(), BoundaryData::Zero, &mut best);
        }
        let (mut cand, mut method, mut desc, base) = best.ok_or_else(|| {
            Error::InvalidInput("no candidate passed the supersolution certificate".into())
        })?;

        // with a single tile the constant-coefficient quadratic is already optimal
        let single_tile = self.tiles.len() == 1 && a_min.is_some();
        if self.config.optimize && !single_tile && f0_sup > 0.0 && solves < self.config.budget {
            let base_fn = boundary_function(&base, sq, n);
            let scale_a = a_min.as_ref().or(a_avg.as_ref()).map_or(0.0, |a| a.max_abs_entry());
            let scale = sq.side * sq.side * scale_a.max(f0_sup / (2.0 * field.lambda())).max(1e-6);
            let mut theta = [0.0f64; 8];
            let mut step = 0.1 * scale;
            let step_min = 1e-3 * step;
            'search: while step > step_min {
                let mut improved = false;
                for k in 0..8 {
                    for sgn in [1.0, -1.0] {
                        if solves >= self.config.budget {
                            break 'search;
                        }
                        let mut th = theta;
                        th[k] += sgn * step;
                        let g = BoundaryData::Samples(perturbed(&base_fn, &th));
                        let c = self.solve(field, &g)?;
                        solves += 1;
                        if let Some(c) = c {
                            if c.value > cand.value * (1.0 + 1e-12) {
                                cand = c;
                                theta = th;
                                method = MuMethod::Search;
                                improved = true;
                                break;
                            }
                        }
                    }
                }
                if !improved {
                    step *= 0.5;
                }
            }
            if method == MuMethod::Search {
                desc = format!(
                    "{desc}+edges[{}]",
                    theta.iter().map(|t| format!("{t:.6e}")).collect::<Vec<_>>().join(",")
                );
            }
        }
        Ok(MuEstimate {
            value: cand.value,
            method,
            boundary: desc,
            solves,
            cert_residual: cand.resid,
            n,
            cube: self.cube,
            u: cand.u,
        })
    }
}

fn boundary_function(g: &BoundaryData, sq: Square, n: usize) -> GridFunction {
    match g {
        BoundaryData::Zero => GridFunction::zeros(sq, n),
        BoundaryData::Affine { p, c } => GridFunction::from_fn(sq, n, |x| p[0] * x[0] + p[1] * x[1] + c),
        BoundaryData::Quadratic { a, p, c } => {
            GridFunction::from_fn(sq, n, |x| 0.5 * a.quad(&x) + p[0] * x[0] + p[1] * x[1] + c)
        }
        BoundaryData::Samples(s) => s.clone(),
    }
}

/// Adds the edge-wise quadratic interpolant of 4 corner values
/// `(c00, c10, c11, c01)` and 4 midpoint values `(bottom, right, top, left)`
/// to the boundary of `base`.
fn perturbed(base: &GridFunction, th: &[f64; 8]) -> GridFunction {
    let n = base.n();
    let mut g = base.clone();
    let q = |a: f64, m: f64, b: f64, t: f64| {
        a * (1.0 - t) * (1.0 - 2.0 * t) + 4.0 * m * t * (1.0 - t) + b * t * (2.0 * t - 1.0)
    };
    let [c00, c10, c11, c01, mb, mr, mt, ml] = *th;
    let last = (n - 1) as f64;
    for k in 0..n {
        let t = k as f64 / last;
        let v = g.get(k, 0) + q(c00, mb, c10, t);
        g.set(k, 0, v);
        let v = g.get(k, n - 1) + q(c01, mt, c11, t);
        g.set(k, n - 1, v);
        if k > 0 && k < n - 1 {
            let v = g.get(0, k) + q(c00, ml, c01, t);
            g.set(0, k, v);
            let v = g.get(n - 1, k) + q(c10, mr, c11, t);
            g.set(n - 1, k, v);
        }
    }
    g
}

pub fn mu_estimate(field: &OperatorField, cube: TriadicCube, config: MuConfig) -> Result<MuEstimate> {
    MuProblem::new(field, cube, config)?.estimate(field)
}

/// `μ_*(cube, F) = μ(cube, F_*)`.
pub fn mu_star_estimate(field: &OperatorField, cube: TriadicCube, config: MuConfig) -> Result<MuEstimate> {
    mu_estimate(&field.star(), cube, config)
}

/// Per-node monotone data for the upward relaxation.
struct NodeControls {
    controls: Vec<([f64; 4], f64)>,
    mode: BellmanMode,
}

/// Random-search lower bound for the discrete supremum on a tiny grid:
/// random candidates are pushed up to the smallest discrete supersolution
/// above them (nodewise Gauss–Seidel, each node raised to the root of its
/// monotone residual), then locally perturbed; returns the best certified
/// envelope measure per unit area.
pub fn mu_bruteforce_tiny(field: &OperatorField, cube: TriadicCube, n: usize, samples: usize, seed: u64) -> Result<f64> {
    if !(3..=9).contains(&n) {
        return Err(Error::InvalidInput(format!("brute force is limited to 3 <= n <= 9, got {n}")));
    }
    let sq = cube.square();
    let h = sq.side / (n - 1) as f64;
    let inv_h2 = 1.0 / (h * h);
    let mut nodes = Vec::new();
    let mut f0_sup = f64::NEG_INFINITY;
    for j in 1..n - 1 {
        for i in 1..n - 1 {
            let x = [sq.lo[0] + i as f64 * h, sq.lo[1] + j as f64 * h];
            let op = field.local(x)?;
            f0_sup = f0_sup.max(op.eval(&SymMatrix::zeros(2)));
            let cell = field.cell(x);
            let (ctl, mode) = op.controls().ok_or(Error::Stencil {
                cell_x: cell[0],
                cell_y: cell[1],
                reason: "Pucci operators have no fixed-stencil discretization".into(),
            })?;
            let controls = ctl
                .iter()
                .map(|l| {
                    Stencil::decompose(&l.a)
                        .map(|s| (s.alpha, l.c))
                        .map_err(|reason| Error::Stencil { cell_x: cell[0], cell_y: cell[1], reason })
                })
                .collect::<Result<Vec<_>>>()?;
            nodes.push(NodeControls { controls, mode });
        }
    }
    let project = |u: &mut GridFunction| {
        let vals = u.values_mut();
        for _sweep in 0..100_000 {
            let mut moved: f64 = 0.0;
            for j in 1..n - 1 {
                for i in 1..n - 1 {
                    let p = j * n + i;
                    let nc = &nodes[(j - 1) * (n - 2) + (i - 1)];
                    let mut root = match nc.mode {
                        BellmanMode::Min => f64::NEG_INFINITY,
                        BellmanMode::Max => f64::INFINITY,
                    };
                    for (alpha, c) in &nc.controls {
                        let mut sum_a = 0.0;
                        let mut s = 0.0;
                        for (k, v) in DIRECTIONS.iter().enumerate() {
                            let q = (v[1] * n as i64 + v[0]) as isize;
                            let up = vals[(p as isize + q) as usize];
                            let dn = vals[(p as isize - q) as usize];
                            s += alpha[k] * (up + dn);
                            sum_a += alpha[k];
                        }
                        // control value = (2Σα u_p - Σα(u+ + u-)) / h² + c
                        let r = (s * inv_h2 - c) / (2.0 * sum_a * inv_h2);
                        root = match nc.mode {
                            BellmanMode::Min => root.max(r),
                            BellmanMode::Max => root.min(r),
                        };
                    }
                    if root > vals[p] {
                        moved = moved.max(root - vals[p]);
                        vals[p] = root;
                    }
                }
            }
            if moved <= 1e-15 * (1.0 + h * h) {
                break;
            }
        }
    };
    let measure_of = |u: &GridFunction| -> Result<Option<f64>> {
        let r = apply_operator(field, u)?;
        for j in 1..n - 1 {
            for i in 1..n - 1 {
                if !(r.get(i, j) >= -1e-9) {
                    return Ok(None);
                }
            }
        }
        Ok(Some(subdiff_measure(u, &Region::interior_of(sq)) / sq.area()))
    };
    // quadratics ½ t B(k, φ) scaled to be feasible at every node
    let node_min = |m: &SymMatrix| {
        nodes
            .iter()
            .map(|nc| {
                let vals = nc.controls.iter().map(|(alpha, c)| {
                    let mut s = 0.0;
                    for (k, v) in DIRECTIONS.iter().enumerate() {
                        s += alpha[k] * m.quad(&[v[0] as f64, v[1] as f64]);
                    }
                    c - s
                });
                match nc.mode {
                    BellmanMode::Min => vals.fold(f64::INFINITY, f64::min),
                    BellmanMode::Max => vals.fold(f64::NEG_INFINITY, f64::max),
                }
            })
            .fold(f64::INFINITY, f64::min)
    };
    let shape_of = |k: f64, phi: f64| {
        let (c, sn) = (phi.cos(), phi.sin());
        let (l1, l2) = (k.exp(), (-k).exp());
        SymMatrix::new2(l1 * c * c + l2 * sn * sn, (l1 - l2) * c * sn, l1 * sn * sn + l2 * c * c)
    };
    let mut rng = SplitMix64::new(seed);
    let xc = sq.center();
    let scale = f0_sup.max(0.0);
    let mut best = 0.0f64;
    let mut best_par = (0.0, 0.0);
    let fresh = samples / 4 + 1;
    for s in 0..samples.max(1) {
        let (k, phi, amp) = if s < fresh {
            (rng.uniform(-1.5, 1.5), rng.uniform(0.0, PI), rng.uniform(0.0, 0.25))
        } else {
            let w = 0.3 * (1.0 - (s - fresh) as f64 / (samples - fresh).max(1) as f64) + 1e-3;
            (best_par.0 + w * rng.normal(), best_par.1 + w * rng.normal(), w * rng.uniform(0.0, 0.25))
        };
        let b = shape_of(k, phi);
        let t = max_scale(&node_min, &b);
        let t = if t.is_finite() { t * rng.uniform(0.9, 1.0) } else { 0.0 };
        let mut u = GridFunction::from_fn(sq, n, |x| {
            let d = [x[0] - xc[0], x[1] - xc[1]];
            0.5 * t * b.quad(&d)
        });
        let amp = amp * scale * h * h;
        for v in u.values_mut() {
            *v += amp * rng.uniform(-1.0, 1.0);
        }
        project(&mut u);
        if let Some(m) = measure_of(&u)? {
            if m > best {
                best = m;
                best_par = (k, phi);
            }
        }
    }
    Ok(best)
}

/// `|B₁|^{-1/2} · 2^{1/2}`, the constant of the discrete ABP bound in d = 2.
pub fn abp_constant() -> f64 {
    (2.0 / PI).sqrt()
}

/// Both sides of the ABP-type inequality
/// `inf_∂Q u - inf_Q u <= C 3^{2m} μ^{1/2}` for a certified candidate.
pub fn abp_sides(est: &MuEstimate) -> (f64, f64) {
    let lhs = est.u.boundary_min() - est.u.min();
    let rhs = abp_constant() * crate::grid::pow3(2 * est.cube.m) * est.value.max(0.0).sqrt();
    (lhs, rhs)
}

/// Bounds `(λ₀/(dΛ))^d <= μ <= 2^d σ₀^d` with `λ₀ = (inf F(0,x))₊` and
/// `σ₀ = (sup F(0,x))₊`, in d = 2.
pub fn curvature_bounds(f0_inf: f64, f0_sup: f64, lambda: f64) -> (f64, f64) {
    let lo = (f0_inf.max(0.0) / (2.0 * lambda)).powi(2);
    let hi = 4.0 * f0_sup.max(0.0).powi(2);
    (lo, hi)
}

/// `(inf, sup)` of `F(0, x)` over the tiles met by interior nodes of `cube`
/// on an `n`-point grid.
pub fn f0_range(field: &OperatorField, cube: TriadicCube, n: usize) -> Result<(f64, f64)> {
    let sq = cube.square();
    let h = sq.side / (n - 1) as f64;
    let zero = SymMatrix::zeros(2);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for j in 1..n - 1 {
        for i in 1..n - 1 {
            let v = field.eval(&zero, [sq.lo[0] + i as f64 * h, sq.lo[1] + j as f64 * h])?;
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    Ok((lo, hi))
}
