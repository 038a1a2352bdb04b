//! Monotone finite differences for `F(D^2 u, x) = f` (Dirichlet) and for the
//! approximate cell problem `δ w + F(A + D^2 w, y) = 0` on a torus.
//!
//! Each linear control `-tr(a M) + c` is discretized as
//! `-Σ_v α_v Δ_v u + c` over the directions `e1, e2, e1+e2, e1-e2`, with
//! `a = Σ α_v v vᵀ` and `α_v >= 0`. Bellman operators are solved by Howard
//! policy iteration, one exact banded solve per policy.

use std::time::{Duration, Instant};

use crate::banded::BandMatrix;
use crate::error::{Error, Result};
use crate::grid::{GridFunction, Square};
use crate::linalg::SymMatrix;
use crate::operators::{BellmanMode, OperatorField};

pub const DIRECTIONS: [[i64; 2]; 4] = [[1, 0], [0, 1], [1, 1], [1, -1]];

const MAX_POLICY_ITERATIONS: usize = 200;

/// Per-direction weights of a diffusion matrix on the 4-direction stencil.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stencil {
    pub alpha: [f64; 4],
}

impl Stencil {
    /// Nonnegative weights with `a = Σ α_v v vᵀ`; possible iff
    /// `|a12| <= min(a11, a22)`.
    pub fn decompose(a: &SymMatrix) -> std::result::Result<Stencil, String> {
        if a.dim() != 2 {
            return Err(format!("stencil is two-dimensional, got d = {}", a.dim()));
        }
        let (a11, a12, a22) = (a.get(0, 0), a.get(0, 1), a.get(1, 1));
        let slack = 1e-14 * (a11.abs() + a22.abs());
        let w1 = a11 - a12.abs();
        let w2 = a22 - a12.abs();
        if w1 < -slack || w2 < -slack {
            return Err(format!(
                "|a12| = {} exceeds min(a11, a22) = {}",
                a12.abs(),
                a11.min(a22)
            ));
        }
        Ok(Stencil {
            alpha: [w1.max(0.0), w2.max(0.0), a12.max(0.0), (-a12).max(0.0)],
        })
    }

    pub fn reconstruct(&self) -> SymMatrix {
        let mut m = SymMatrix::zeros(2);
        for (w, v) in self.alpha.iter().zip(DIRECTIONS) {
            let v = [v[0] as f64, v[1] as f64];
            m = &m + &SymMatrix::outer(&v).scale(*w);
        }
        m
    }
}

/// Dirichlet data on the boundary nodes.
#[derive(Clone, Debug)]
pub enum BoundaryData {
    Zero,
    /// `p·x + c`
    Affine { p: [f64; 2], c: f64 },
    /// `½ xᵀ A x + p·x + c`
    Quadratic { a: SymMatrix, p: [f64; 2], c: f64 },
    /// Boundary values of a grid function on the same grid (interior ignored).
    Samples(GridFunction),
}

impl BoundaryData {
    pub fn quadratic(a: SymMatrix) -> Self {
        BoundaryData::Quadratic { a, p: [0.0, 0.0], c: 0.0 }
    }

    fn value(&self, x: [f64; 2], i: usize, j: usize) -> f64 {
        match self {
            BoundaryData::Zero => 0.0,
            BoundaryData::Affine { p, c } => p[0] * x[0] + p[1] * x[1] + c,
            BoundaryData::Quadratic { a, p, c } => {
                0.5 * a.quad(&x) + p[0] * x[0] + p[1] * x[1] + c
            }
            BoundaryData::Samples(g) => g.get(i, j),
        }
    }

    /// Whether the closed form extends inside (used as an initial guess).
    fn has_closed_form(&self) -> bool {
        !matches!(self, BoundaryData::Samples(_))
    }
}

#[derive(Clone, Debug, Default)]
pub struct SolveReport {
    pub iterations: usize,
    pub residual: f64,
    pub policy_switches: usize,
    pub wall_time: Duration,
    pub residual_history: Vec<f64>,
}

#[derive(Clone, Debug)]
struct Control {
    alpha: [f64; 4],
    c: f64,
}

#[derive(Clone, Debug)]
struct TilePlan {
    controls: Vec<Control>,
    mode: BellmanMode,
}

impl TilePlan {
    fn same_stencils(&self, other: &TilePlan) -> bool {
        self.controls.len() == other.controls.len()
            && self
                .controls
                .iter()
                .zip(&other.controls)
                .all(|(a, b)| a.alpha == b.alpha)
    }
}

fn plan_tiles(field: &OperatorField, used: &[bool], cell_of_tile: &[[i64; 2]]) -> Result<Vec<Option<TilePlan>>> {
    let n_tiles = field.base_tiles().len();
    let mut plans = Vec::with_capacity(n_tiles);
    for id in 0..n_tiles {
        if !used[id] {
            plans.push(None);
            continue;
        }
        let cell = cell_of_tile[id];
        let stencil_err = |reason: String| Error::Stencil {
            cell_x: cell[0],
            cell_y: cell[1],
            reason,
        };
        let (controls, mode) = field.tile_op(id).controls().ok_or_else(|| {
            stencil_err("Pucci operators have no fixed-stencil discretization".into())
        })?;
        let controls = controls
            .iter()
            .map(|l| {
                Stencil::decompose(&l.a)
                    .map(|s| Control { alpha: s.alpha, c: l.c })
                    .map_err(&stencil_err)
            })
            .collect::<Result<Vec<_>>>()?;
        if controls.len() > u8::MAX as usize {
            return Err(Error::InvalidInput("too many Bellman controls".into()));
        }
        plans.push(Some(TilePlan { controls, mode }));
    }
    Ok(plans)
}

/// Second differences `(u(x+hv) - 2u(x) + u(x-hv))` (not yet divided by h²)
/// along the four stencil directions, given the neighbour values.
#[inline]
fn control_value(ctl: &Control, d2: &[f64; 4], inv_h2: f64) -> f64 {
    let mut s = 0.0;
    for k in 0..4 {
        s += ctl.alpha[k] * d2[k];
    }
    -s * inv_h2 + ctl.c
}

/// Picks the optimal control, keeping `current` unless another is strictly
/// better beyond rounding.
#[inline]
fn best_control(plan: &TilePlan, d2: &[f64; 4], inv_h2: f64, current: u8) -> (u8, f64) {
    let mut best = current as usize;
    let mut best_v = control_value(&plan.controls[best], d2, inv_h2);
    for (k, ctl) in plan.controls.iter().enumerate() {
        if k == current as usize {
            continue;
        }
        let v = control_value(ctl, d2, inv_h2);
        let margin = 1e-12 * (1.0 + v.abs().max(best_v.abs()));
        let better = match plan.mode {
            BellmanMode::Min => v < best_v - margin,
            BellmanMode::Max => v > best_v + margin,
        };
        if better {
            best = k;
            best_v = v;
        }
    }
    (best as u8, best_v)
}

struct CachedFactor {
    policy: Vec<u8>,
    key: f64,
    matrix: BandMatrix,
}

/// Small cache of factored policy matrices; matrices depend only on the
/// stencil weights of the active controls (and δ), never on constants.
#[derive(Default)]
struct FactorCache {
    entries: Vec<CachedFactor>,
}

impl FactorCache {
    const CAPACITY: usize = 2;

    fn find(&self, policy: &[u8], key: f64) -> Option<usize> {
        self.entries
            .iter()
            .position(|e| e.key == key && e.policy == policy)
    }

    fn insert(&mut self, policy: Vec<u8>, key: f64, matrix: BandMatrix) -> usize {
        if self.entries.len() == Self::CAPACITY {
            self.entries.remove(0);
        }
        self.entries.push(CachedFactor { policy, key, matrix });
        self.entries.len() - 1
    }
}

/// A Dirichlet problem on a fixed grid and tile layout. Solving repeatedly
/// (other data, other shifts/stars of the same base field) reuses factored
/// matrices.
pub struct DirichletProblem {
    square: Square,
    n: usize,
    /// tile id per interior node, row-major over the (n-2)² interior
    node_tile: Vec<u32>,
    plans: Vec<Option<TilePlan>>,
    cache: FactorCache,
}

impl DirichletProblem {
    pub fn new(field: &OperatorField, square: Square, n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidInput(format!("need n >= 3 grid points per side, got {n}")));
        }
        let h = square.side / (n - 1) as f64;
        let m = n - 2;
        let n_tiles = field.base_tiles().len();
        let mut used = vec![false; n_tiles];
        let mut where_used = vec![[0i64; 2]; n_tiles];
        let mut node_tile = Vec::with_capacity(m * m);
        for j in 1..n - 1 {
            for i in 1..n - 1 {
                let x = [square.lo[0] + i as f64 * h, square.lo[1] + j as f64 * h];
                let id = field.tile_id(x)?;
                if !used[id] {
                    used[id] = true;
                    where_used[id] = field.cell(x);
                }
                node_tile.push(id as u32);
            }
        }
        let plans = plan_tiles(field, &used, &where_used)?;
        Ok(DirichletProblem {
            square,
            n,
            node_tile,
            plans,
            cache: FactorCache::default(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn square(&self) -> Square {
        self.square
    }

    pub fn h(&self) -> f64 {
        self.square.side / (self.n - 1) as f64
    }

    /// Switches to another transform of the same base field (shift, star,
    /// translate). Factored matrices are kept when the stencils agree.
    pub fn set_field(&mut self, field: &OperatorField) -> Result<()> {
        let used: Vec<bool> = self.plans.iter().map(|p| p.is_some()).collect();
        if field.base_tiles().len() != used.len() {
            return Err(Error::InvalidInput("field has a different tile set".into()));
        }
        let cells = vec![[0i64; 2]; used.len()];
        let plans = plan_tiles(field, &used, &cells)?;
        let same = plans.iter().zip(&self.plans).all(|(a, b)| match (a, b) {
            (Some(a), Some(b)) => a.same_stencils(b),
            (None, None) => true,
            _ => false,
        });
        if !same {
            self.cache = FactorCache::default();
        }
        self.plans = plans;
        Ok(())
    }

    #[inline]
    fn plan(&self, r: usize) -> &TilePlan {
        self.plans[self.node_tile[r] as usize].as_ref().unwrap()
    }

    #[inline]
    fn diffs(u: &[f64], p: usize, n: usize) -> [f64; 4] {
        let c = 2.0 * u[p];
        [
            u[p + 1] + u[p - 1] - c,
            u[p + n] + u[p - n] - c,
            u[p + n + 1] + u[p - n - 1] - c,
            u[p - n + 1] + u[p + n - 1] - c,
        ]
    }

    fn assemble(&self, policy: &[u8]) -> BandMatrix {
        let n = self.n;
        let m = n - 2;
        let inv_h2 = 1.0 / (self.h() * self.h());
        let mut a = BandMatrix::zeros(m * m, m + 1);
        for jj in 0..m {
            for ii in 0..m {
                let r = jj * m + ii;
                let ctl = &self.plan(r).controls[policy[r] as usize];
                let mut diag = 0.0;
                for (k, v) in DIRECTIONS.iter().enumerate() {
                    let w = ctl.alpha[k] * inv_h2;
                    if w == 0.0 {
                        continue;
                    }
                    diag += 2.0 * w;
                    for sgn in [1i64, -1] {
                        let ni = ii as i64 + sgn * v[0];
                        let nj = jj as i64 + sgn * v[1];
                        if ni >= 0 && nj >= 0 && (ni as usize) < m && (nj as usize) < m {
                            a.add(r, nj as usize * m + ni as usize, -w);
                        }
                    }
                }
                a.add(r, r, diag);
            }
        }
        a
    }

    fn factor_for(&mut self, policy: &[u8]) -> Result<usize> {
        if let Some(k) = self.cache.find(policy, 0.0) {
            return Ok(k);
        }
        let mut a = self.assemble(policy);
        if !a.factor() {
            return Err(Error::InvalidInput("singular policy matrix".into()));
        }
        Ok(self.cache.insert(policy.to_vec(), 0.0, a))
    }

    /// Solves `F_h(D²u, x) = f` in the interior with `u = g` on the boundary.
    pub fn solve(
        &mut self,
        f: &GridFunction,
        g: &BoundaryData,
        tol: f64,
    ) -> Result<(GridFunction, SolveReport)> {
        let t0 = Instant::now();
        let n = self.n;
        if f.n() != n {
            return Err(Error::InvalidInput(format!(
                "right-hand side has n = {}, problem has n = {n}",
                f.n()
            )));
        }
        if !(tol > 0.0) {
            return Err(Error::InvalidInput("tolerance must be positive".into()));
        }
        if let BoundaryData::Samples(s) = g {
            if s.n() != n {
                return Err(Error::InvalidInput("boundary samples on a different grid".into()));
            }
        }
        let m = n - 2;
        let h = self.h();
        let inv_h2 = 1.0 / (h * h);
        let node = |i: usize, j: usize| {
            [self.square.lo[0] + i as f64 * h, self.square.lo[1] + j as f64 * h]
        };
        let mut u = vec![0.0; n * n];
        for j in 0..n {
            for i in 0..n {
                let boundary = i == 0 || j == 0 || i == n - 1 || j == n - 1;
                if boundary || g.has_closed_form() {
                    u[j * n + i] = g.value(node(i, j), i, j);
                }
            }
        }
        let mut policy = vec![0u8; m * m];
        let mut report = SolveReport::default();
        // initial policy: best control at the initial guess
        for jj in 0..m {
            for ii in 0..m {
                let r = jj * m + ii;
                let plan = self.plan(r);
                if plan.controls.len() > 1 {
                    let d2 = Self::diffs(&u, (jj + 1) * n + ii + 1, n);
                    policy[r] = best_control(plan, &d2, inv_h2, 0).0;
                }
            }
        }
        loop {
            report.iterations += 1;
            // right-hand side: f - c + boundary couplings
            let mut b = vec![0.0; m * m];
            for jj in 0..m {
                for ii in 0..m {
                    let r = jj * m + ii;
                    let ctl = &self.plan(r).controls[policy[r] as usize];
                    let mut rhs = f.get(ii + 1, jj + 1) - ctl.c;
                    for (k, v) in DIRECTIONS.iter().enumerate() {
                        let w = ctl.alpha[k] * inv_h2;
                        if w == 0.0 {
                            continue;
                        }
                        for sgn in [1i64, -1] {
                            let ni = ii as i64 + 1 + sgn * v[0];
                            let nj = jj as i64 + 1 + sgn * v[1];
                            let (ni, nj) = (ni as usize, nj as usize);
                            if ni == 0 || nj == 0 || ni == n - 1 || nj == n - 1 {
                                rhs += w * u[nj * n + ni];
                            }
                        }
                    }
                    b[r] = rhs;
                }
            }
            let k = self.factor_for(&policy)?;
            self.cache.entries[k].matrix.solve(&mut b);
            for jj in 0..m {
                u[(jj + 1) * n + 1..(jj + 1) * n + 1 + m].copy_from_slice(&b[jj * m..(jj + 1) * m]);
            }
            // policy improvement and residual
            let mut switches = 0;
            let mut residual: f64 = 0.0;
            for jj in 0..m {
                for ii in 0..m {
                    let r = jj * m + ii;
                    let plan = self.plan(r);
                    let d2 = Self::diffs(&u, (jj + 1) * n + ii + 1, n);
                    let (k, v) = best_control(plan, &d2, inv_h2, policy[r]);
                    if k != policy[r] {
                        policy[r] = k;
                        switches += 1;
                    }
                    residual = residual.max((v - f.get(ii + 1, jj + 1)).abs());
                }
            }
            report.policy_switches += switches;
            report.residual = residual;
            report.residual_history.push(residual);
            if switches == 0 {
                break;
            }
            if report.iterations >= MAX_POLICY_ITERATIONS {
                report.wall_time = t0.elapsed();
                return Err(Error::NonConvergence { report: Box::new(report) });
            }
        }
        report.wall_time = t0.elapsed();
        if !(report.residual <= tol) {
            return Err(Error::NonConvergence { report: Box::new(report) });
        }
        let out = GridFunction::new(self.square, n, u)?;
        Ok((out, report))
    }
}

/// Solves `F_h(D²u, x) = f` on the grid of `f` with Dirichlet data `g`.
pub fn solve_dirichlet(
    field: &OperatorField,
    f: &GridFunction,
    g: &BoundaryData,
    tol: f64,
) -> Result<(GridFunction, SolveReport)> {
    DirichletProblem::new(field, f.square(), f.n())?.solve(f, g, tol)
}

/// Nodewise `F_h(D²_h u, x)` at interior nodes; boundary nodes are set to 0.
///
/// Linear and Bellman tiles use the monotone stencil (the same discrete
/// operator the solver inverts); Pucci tiles are evaluated on the discrete
/// Hessian `(Δ_e1, Δ_e2, (Δ_{e1+e2} - Δ_{e1-e2})/4)`.
pub fn apply_operator(field: &OperatorField, u: &GridFunction) -> Result<GridFunction> {
    let n = u.n();
    if n < 3 {
        return Err(Error::InvalidInput("grid too small for a full stencil".into()));
    }
    let inv_h2 = 1.0 / (u.h() * u.h());
    let vals = u.values();
    let mut out = GridFunction::zeros(u.square(), n);
    let n_tiles = field.base_tiles().len();
    let mut plans: Vec<Option<Option<TilePlan>>> = vec![None; n_tiles];
    for j in 1..n - 1 {
        for i in 1..n - 1 {
            let x = u.node(i, j);
            let id = field.tile_id(x)?;
            if plans[id].is_none() {
                let op = field.tile_op(id);
                let plan = match op.controls() {
                    None => None,
                    Some((controls, mode)) => {
                        let cell = field.cell(x);
                        let controls = controls
                            .iter()
                            .map(|l| {
                                Stencil::decompose(&l.a)
                                    .map(|s| Control { alpha: s.alpha, c: l.c })
                                    .map_err(|reason| Error::Stencil {
                                        cell_x: cell[0],
                                        cell_y: cell[1],
                                        reason,
                                    })
                            })
                            .collect::<Result<Vec<_>>>()?;
                        Some(TilePlan { controls, mode })
                    }
                };
                plans[id] = Some(plan);
            }
            let d2 = DirichletProblem::diffs(vals, j * n + i, n);
            let v = match plans[id].as_ref().unwrap() {
                Some(plan) => best_control(plan, &d2, inv_h2, 0).1,
                None => {
                    let hess = SymMatrix::new2(
                        d2[0] * inv_h2,
                        (d2[2] - d2[3]) * inv_h2 / 4.0,
                        d2[1] * inv_h2,
                    );
                    field.tile_op(id).eval(&hess)
                }
            };
            out.set(i, j, v);
        }
    }
    Ok(out)
}

/// Position of axis index `p` in the interleaved order `0, N-1, 1, N-2, ...`,
/// which keeps periodic neighbours within distance 2.
#[inline]
fn interleave(p: usize, len: usize) -> usize {
    if 2 * p < len {
        2 * p
    } else {
        2 * (len - 1 - p) + 1
    }
}

/// Solution of the approximate cell problem.
#[derive(Clone, Debug)]
pub struct CellSolution {
    /// `w^δ` on the torus nodes `(i h, j h)`, `0 <= i, j < L k`.
    pub w: GridFunction,
    /// `δ w^δ(0)`.
    pub value: f64,
    pub report: SolveReport,
}

/// The cell problem `δ w + F(A + D²w, y) = 0` on the torus `[-1/2, L-1/2)^2`
/// (lattice cells `0..L`), discretized with `k` nodes per unit length.
pub struct CellProblem {
    side: usize,
    k: usize,
    node_tile: Vec<u32>,
    plans: Vec<Option<TilePlan>>,
    cache: FactorCache,
    perm: Vec<usize>,
}

impl CellProblem {
    /// `field` should be the translated field `F_A`; cells of the field are
    /// wrapped modulo `side`.
    pub fn new(field: &OperatorField, side: usize, k: usize) -> Result<Self> {
        if side == 0 || k == 0 {
            return Err(Error::InvalidInput("torus side and resolution must be positive".into()));
        }
        let len = side * k;
        if len < 3 {
            return Err(Error::InvalidInput("torus needs at least 3 nodes per side".into()));
        }
        let h = 1.0 / k as f64;
        let n_tiles = field.base_tiles().len();
        let mut used = vec![false; n_tiles];
        let mut where_used = vec![[0i64; 2]; n_tiles];
        let mut node_tile = Vec::with_capacity(len * len);
        let l = side as i64;
        for j in 0..len {
            for i in 0..len {
                let y = [i as f64 * h, j as f64 * h];
                let c = field.cell(y);
                let c = [c[0].rem_euclid(l), c[1].rem_euclid(l)];
                let id = field.tile_id_at_cell(c).ok_or(Error::OutOfWindow {
                    x: c[0] as f64,
                    y: c[1] as f64,
                })?;
                if !used[id] {
                    used[id] = true;
                    where_used[id] = c;
                }
                node_tile.push(id as u32);
            }
        }
        let plans = plan_tiles(field, &used, &where_used)?;
        let mut perm = vec![0; len * len];
        for j in 0..len {
            for i in 0..len {
                perm[j * len + i] = interleave(j, len) * len + interleave(i, len);
            }
        }
        Ok(CellProblem {
            side,
            k,
            node_tile,
            plans,
            cache: FactorCache::default(),
            perm,
        })
    }

    pub fn set_field(&mut self, field: &OperatorField) -> Result<()> {
        let used: Vec<bool> = self.plans.iter().map(|p| p.is_some()).collect();
        let cells = vec![[0i64; 2]; used.len()];
        let plans = plan_tiles(field, &used, &cells)?;
        let same = plans.iter().zip(&self.plans).all(|(a, b)| match (a, b) {
            (Some(a), Some(b)) => a.same_stencils(b),
            (None, None) => true,
            _ => false,
        });
        if !same {
            self.cache = FactorCache::default();
        }
        self.plans = plans;
        Ok(())
    }

    fn len(&self) -> usize {
        self.side * self.k
    }

    #[inline]
    fn plan(&self, r: usize) -> &TilePlan {
        self.plans[self.node_tile[r] as usize].as_ref().unwrap()
    }

    #[inline]
    fn nb(&self, i: usize, j: usize, v: [i64; 2], sgn: i64) -> usize {
        let len = self.len() as i64;
        let ni = (i as i64 + sgn * v[0]).rem_euclid(len) as usize;
        let nj = (j as i64 + sgn * v[1]).rem_euclid(len) as usize;
        nj * self.len() + ni
    }

    fn diffs(&self, w: &[f64], i: usize, j: usize) -> [f64; 4] {
        let p = j * self.len() + i;
        let c = 2.0 * w[p];
        let mut d = [0.0; 4];
        for (k, v) in DIRECTIONS.iter().enumerate() {
            d[k] = w[self.nb(i, j, *v, 1)] + w[self.nb(i, j, *v, -1)] - c;
        }
        d
    }

    fn factor_for(&mut self, policy: &[u8], delta: f64) -> Result<usize> {
        if let Some(k) = self.cache.find(policy, delta) {
            return Ok(k);
        }
        let len = self.len();
        let inv_h2 = (self.k * self.k) as f64;
        let mut a = BandMatrix::zeros(len * len, 2 * len + 2);
        for j in 0..len {
            for i in 0..len {
                let p = j * len + i;
                let r = self.perm[p];
                let ctl = &self.plan(p).controls[policy[p] as usize];
                let mut diag = delta;
                for (k, v) in DIRECTIONS.iter().enumerate() {
                    let wgt = ctl.alpha[k] * inv_h2;
                    if wgt == 0.0 {
                        continue;
                    }
                    diag += 2.0 * wgt;
                    for sgn in [1i64, -1] {
                        a.add(r, self.perm[self.nb(i, j, *v, sgn)], -wgt);
                    }
                }
                a.add(r, r, diag);
            }
        }
        if !a.factor() {
            return Err(Error::InvalidInput("singular cell-problem matrix".into()));
        }
        Ok(self.cache.insert(policy.to_vec(), delta, a))
    }

    /// Solves for one `δ`; `warm` (a previous solution) seeds the policy.
    pub fn solve(&mut self, delta: f64, tol: f64, warm: Option<&GridFunction>) -> Result<CellSolution> {
        if !(delta > 0.0) {
            return Err(Error::InvalidInput("delta must be positive".into()));
        }
        let t0 = Instant::now();
        let len = self.len();
        let inv_h2 = (self.k * self.k) as f64;
        let mut w = match warm {
            Some(g) if g.n() == len => g.values().to_vec(),
            _ => vec![0.0; len * len],
        };
        let mut policy = vec![0u8; len * len];
        for j in 0..len {
            for i in 0..len {
                let p = j * len + i;
                if self.plan(p).controls.len() > 1 {
                    let d2 = self.diffs(&w, i, j);
                    policy[p] = best_control(self.plan(p), &d2, inv_h2, 0).0;
                }
            }
        }
        let mut report = SolveReport::default();
        loop {
            report.iterations += 1;
            let mut b = vec![0.0; len * len];
            for p in 0..len * len {
                b[self.perm[p]] = -self.plan(p).controls[policy[p] as usize].c;
            }
            let k = self.factor_for(&policy, delta)?;
            self.cache.entries[k].matrix.solve(&mut b);
            for p in 0..len * len {
                w[p] = b[self.perm[p]];
            }
            let mut switches = 0;
            let mut residual: f64 = 0.0;
            for j in 0..len {
                for i in 0..len {
                    let p = j * len + i;
                    let d2 = self.diffs(&w, i, j);
                    let (k, v) = best_control(self.plan(p), &d2, inv_h2, policy[p]);
                    if k != policy[p] {
                        policy[p] = k;
                        switches += 1;
                    }
                    residual = residual.max((delta * w[p] + v).abs());
                }
            }
            report.policy_switches += switches;
            report.residual = residual;
            report.residual_history.push(residual);
            if switches == 0 {
                break;
            }
            if report.iterations >= MAX_POLICY_ITERATIONS {
                report.wall_time = t0.elapsed();
                return Err(Error::NonConvergence { report: Box::new(report) });
            }
        }
        report.wall_time = t0.elapsed();
        if !(report.residual <= tol) {
            return Err(Error::NonConvergence { report: Box::new(report) });
        }
        let value = delta * w[0];
        let side = (len - 1) as f64 / self.k as f64;
        let w = GridFunction::new(Square::new([0.0, 0.0], side), len, w)?;
        Ok(CellSolution { w, value, report })
    }
}

/// `δ w + F(A + D²w, y) = 0` on the torus of `side` cells (cells `0..side`
/// of the field, wrapped periodically) with `k` nodes per unit length.
pub fn solve_cell(
    field: &OperatorField,
    a: &SymMatrix,
    delta: f64,
    side: usize,
    k: usize,
    tol: f64,
) -> Result<CellSolution> {
    CellProblem::new(&field.translate(a), side, k)?.solve(delta, tol, None)
}
