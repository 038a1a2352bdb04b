//! Monte Carlo experiments across triadic scales: moments of μ, the balancing
//! constant `s(ℙ_A) = F̄(A)`, the cell-problem estimator, variance decay and
//! homogenization error.
//!
//! Realization `i` of a run with master seed `seed` is always
//! `sample_realization(ensemble, window, seed, i)`, so every scale and shift
//! sees the same environments (common random numbers). Work is spread over a
//! rayon pool; results are collected in realization order, so outputs do not
//! depend on the worker count.

use std::sync::Arc;

use rayon::prelude::*;

use crate::environment::{field_of, sample_realization, TileEnsemble, Window};
use crate::error::{Error, Result};
use crate::grid::{GridFunction, TriadicCube};
use crate::linalg::SymMatrix;
use crate::mu::{MuConfig, MuProblem};
use crate::operators::{LinearOp, LocalOperator, OperatorField};
use crate::solver::{BoundaryData, CellProblem, DirichletProblem};
use crate::stats::{linear_fit, mean, median, neville, std_error, variance};

/// Fraction of realizations that may fail before a run is abandoned.
pub const MAX_FAILURE_FRACTION: f64 = 0.1;

#[derive(Clone, Copy, Debug)]
pub struct RunConfig {
    pub mu: MuConfig,
    /// Worker threads (0: rayon default).
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { mu: MuConfig::default(), workers: 0 }
    }
}

fn run_indexed<T: Send>(workers: usize, n: usize, f: impl Fn(u64) -> Result<T> + Sync + Send) -> Result<Vec<Result<T>>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    Ok(pool.install(|| (0..n as u64).into_par_iter().map(&f).collect()))
}

/// Splits per-realization results, enforcing the failure threshold.
fn tolerate<T>(results: Vec<Result<T>>) -> Result<(Vec<(u64, T)>, Vec<(u64, String)>)> {
    let total = results.len();
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => ok.push((i as u64, v)),
            Err(e) => failed.push((i as u64, e.to_string())),
        }
    }
    if failed.len() as f64 > MAX_FAILURE_FRACTION * total as f64 {
        return Err(Error::TooManyFailures {
            failed: failed.len(),
            total,
            first: failed[0].1.clone(),
        });
    }
    Ok((ok, failed))
}

/// Runs `f` on realizations `0..n` over `workers` threads (0: default) and
/// splits the outcomes in index order; fails if more than 10% fail.
#[allow(clippy::type_complexity)]
pub fn par_realizations<T: Send>(
    workers: usize,
    n: usize,
    f: impl Fn(u64) -> Result<T> + Sync + Send,
) -> Result<(Vec<(u64, T)>, Vec<(u64, String)>)> {
    tolerate(run_indexed(workers, n, f)?)
}

/// Window covering every cube `Q_m(0)` for `m <= m_max`.
pub fn window_for(m_max: i32) -> Window {
    let sq = TriadicCube::origin(m_max).square();
    Window::covering(sq.lo, sq.hi())
}

/// Values of one realization over all `(m, s)` pairs.
#[derive(Clone, Debug)]
pub struct RealizationSample {
    pub index: u64,
    /// `mu[mi][si] = μ(Q_m, F_A + s)`
    pub mu: Vec<Vec<f64>>,
    /// `mustar[mi][si] = μ(Q_m, (F_A + s)_*)`
    pub mustar: Vec<Vec<f64>>,
}

/// Summary statistics at one `(m, s)`.
#[derive(Clone, Debug)]
pub struct CurvePoint {
    pub m: i32,
    pub s: f64,
    pub n: usize,
    pub mean_mu: f64,
    pub mean_mustar: f64,
    pub m2_mu: f64,
    pub m2_mustar: f64,
    pub var_mu: f64,
    pub var_mustar: f64,
    pub se_mu: f64,
    pub se_mustar: f64,
    pub se_m2_mu: f64,
    pub se_m2_mustar: f64,
}

/// Monte Carlo moments of `μ(Q_m, F_A + s)` and `μ(Q_m, (F_A + s)_*)`.
#[derive(Clone, Debug)]
pub struct MomentCurve {
    pub a: SymMatrix,
    pub ms: Vec<i32>,
    pub ss: Vec<f64>,
    pub seed: u64,
    pub requested: usize,
    pub samples: Vec<RealizationSample>,
    pub failures: Vec<(u64, String)>,
}

impl MomentCurve {
    fn column(&self, mi: usize, si: usize, star: bool) -> Vec<f64> {
        self.samples
            .iter()
            .map(|r| if star { r.mustar[mi][si] } else { r.mu[mi][si] })
            .collect()
    }

    pub fn point(&self, mi: usize, si: usize) -> CurvePoint {
        let mu = self.column(mi, si, false);
        let ms = self.column(mi, si, true);
        let sq = |v: &[f64]| v.iter().map(|x| x * x).collect::<Vec<f64>>();
        let (mu2, ms2) = (sq(&mu), sq(&ms));
        CurvePoint {
            m: self.ms[mi],
            s: self.ss[si],
            n: mu.len(),
            mean_mu: mean(&mu),
            mean_mustar: mean(&ms),
            m2_mu: mean(&mu2),
            m2_mustar: mean(&ms2),
            var_mu: variance(&mu),
            var_mustar: variance(&ms),
            se_mu: std_error(&mu),
            se_mustar: std_error(&ms),
            se_m2_mu: std_error(&mu2),
            se_m2_mustar: std_error(&ms2),
        }
    }

    pub fn points(&self) -> Vec<CurvePoint> {
        let mut out = Vec::new();
        for mi in 0..self.ms.len() {
            for si in 0..self.ss.len() {
                out.push(self.point(mi, si));
            }
        }
        out
    }

    /// Paired difference `E[μ^p](m_{i+1}) - E[μ^p](m_i)` and its standard
    /// error; `star` selects μ_*.
    pub fn step_change(&self, mi: usize, si: usize, power: i32, star: bool) -> (f64, f64) {
        let d: Vec<f64> = self
            .samples
            .iter()
            .map(|r| {
                let (a, b) = if star {
                    (r.mustar[mi][si], r.mustar[mi + 1][si])
                } else {
                    (r.mu[mi][si], r.mu[mi + 1][si])
                };
                b.powi(power) - a.powi(power)
            })
            .collect();
        (mean(&d), std_error(&d))
    }

    /// Paired change of `E[μ²] + E[μ_*²]` between consecutive scales.
    pub fn step_change_total_m2(&self, mi: usize, si: usize) -> (f64, f64) {
        let d: Vec<f64> = self
            .samples
            .iter()
            .map(|r| {
                let a = r.mu[mi][si].powi(2) + r.mustar[mi][si].powi(2);
                let b = r.mu[mi + 1][si].powi(2) + r.mustar[mi + 1][si].powi(2);
                b - a
            })
            .collect();
        (mean(&d), std_error(&d))
    }

    /// CSV with header
    /// `m,s,N,mean_mu,mean_mustar,m2_mu,m2_mustar,var_mu,var_mustar,se_mu,se_mustar,se_m2_mu,se_m2_mustar`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "m,s,N,mean_mu,mean_mustar,m2_mu,m2_mustar,var_mu,var_mustar,se_mu,se_mustar,se_m2_mu,se_m2_mustar\n",
        );
        for p in self.points() {
            out.push_str(&format!(
                "{},{:e},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}\n",
                p.m, p.s, p.n, p.mean_mu, p.mean_mustar, p.m2_mu, p.m2_mustar, p.var_mu, p.var_mustar, p.se_mu,
                p.se_mustar, p.se_m2_mu, p.se_m2_mustar
            ));
        }
        out
    }
}

/// μ and μ_* of `F_A + s` for every `(m, s)` on one realization.
fn realization_sample(
    ensemble: &Arc<TileEnsemble>,
    a: &SymMatrix,
    ms: &[i32],
    ss: &[f64],
    seed: u64,
    index: u64,
    cfg: &MuConfig,
) -> Result<RealizationSample> {
    let m_max = *ms.iter().max().unwrap();
    let r = sample_realization(ensemble, window_for(m_max), seed, index)?;
    let fa = field_of(&r).translate(a);
    let mut mu = Vec::with_capacity(ms.len());
    let mut mustar = Vec::with_capacity(ms.len());
    for &m in ms {
        let mut problem = MuProblem::new(&fa, TriadicCube::origin(m), *cfg)?;
        let mut row = Vec::with_capacity(ss.len());
        let mut row_star = Vec::with_capacity(ss.len());
        for &s in ss {
            let f = fa.shift(s);
            row.push(problem.estimate(&f)?.value);
            row_star.push(problem.estimate(&f.star())?.value);
        }
        mu.push(row);
        mustar.push(row_star);
    }
    Ok(RealizationSample { index, mu, mustar })
}

/// Moments of `μ(Q_m, F_A + s)` and `μ(Q_m, (F_A + s)_*)` over `n_real`
/// realizations, for every `m` in `ms` and `s` in `ss`.
pub fn expected_mu_curve(
    ensemble: &Arc<TileEnsemble>,
    a: &SymMatrix,
    ms: &[i32],
    ss: &[f64],
    n_real: usize,
    seed: u64,
    cfg: &RunConfig,
) -> Result<MomentCurve> {
    if n_real < 2 {
        return Err(Error::InvalidInput("need at least 2 realizations".into()));
    }
    if ms.is_empty() || ss.is_empty() {
        return Err(Error::InvalidInput("empty scale or shift list".into()));
    }
    if ms.iter().any(|&m| m < 0) {
        return Err(Error::InvalidInput("scales m must be nonnegative".into()));
    }
    let results = run_indexed(cfg.workers, n_real, |i| realization_sample(ensemble, a, ms, ss, seed, i, &cfg.mu))?;
    let (ok, failures) = tolerate(results)?;
    Ok(MomentCurve {
        a: a.clone(),
        ms: ms.to_vec(),
        ss: ss.to_vec(),
        seed,
        requested: n_real,
        samples: ok.into_iter().map(|(_, s)| s).collect(),
        failures,
    })
}

/// Balance gap `g(s) = Ê[μ(Q_m, F_A - s)] - Ê[μ(Q_m, (F_A)_* + s)]` with the
/// per-realization differences.
fn balance_gap(
    ensemble: &Arc<TileEnsemble>,
    a: &SymMatrix,
    m: i32,
    s: f64,
    n_real: usize,
    seed: u64,
    cfg: &RunConfig,
) -> Result<(f64, Vec<f64>)> {
    let results = run_indexed(cfg.workers, n_real, |i| {
        let r = realization_sample(ensemble, a, &[m], &[-s], seed, i, &cfg.mu)?;
        Ok(r.mu[0][0] - r.mustar[0][0])
    })?;
    let (ok, _) = tolerate(results)?;
    let d: Vec<f64> = ok.into_iter().map(|(_, v)| v).collect();
    Ok((mean(&d), d))
}

#[derive(Clone, Debug)]
pub struct BalanceEstimate {
    pub a: SymMatrix,
    pub m: i32,
    pub s_hat: f64,
    /// Delta-method standard error of `s_hat`.
    pub se: f64,
    pub ci95: (f64, f64),
    /// Final bracket `[lo, hi]` with `g(lo) > 0 > g(hi)` (or `g = 0` inside).
    pub bracket: (f64, f64),
    pub bracket_history: Vec<(f64, f64)>,
    /// Every evaluated `(s, g(s))`.
    pub evaluations: Vec<(f64, f64)>,
    pub n: usize,
}

/// Bisection for the crossing of the balance gap on `[-K, K]`,
/// `K = K₀ + dΛ|A| + 1`, to bracket width `tol`. A plateau `g = 0` is resolved by
/// locating both of its ends.
pub fn balance_constant(
    ensemble: &Arc<TileEnsemble>,
    a: &SymMatrix,
    m: i32,
    n_real: usize,
    tol: f64,
    seed: u64,
    cfg: &RunConfig,
) -> Result<BalanceEstimate> {
    if !(tol > 0.0) || n_real < 2 {
        return Err(Error::InvalidInput("balance needs tol > 0 and at least 2 realizations".into()));
    }
    let norm_a = a.min_eigenvalue().abs().max(a.max_eigenvalue().abs());
    // padded by 1 so the bracket is nondegenerate when K₀ = 0 and A = 0
    let k = ensemble.k0() + 2.0 * ensemble.lambda() * norm_a + 1.0;
    let mut evaluations = Vec::new();
    let g = |s: f64, ev: &mut Vec<(f64, f64)>| -> Result<(f64, Vec<f64>)> {
        let r = balance_gap(ensemble, a, m, s, n_real, seed, cfg)?;
        ev.push((s, r.0));
        Ok(r)
    };
    let (mut lo, mut hi) = (-k, k);
    let mut g_lo = g(lo, &mut evaluations)?.0;
    let mut g_hi = g(hi, &mut evaluations)?.0;
    if !(g_lo >= 0.0 && g_hi <= 0.0) || (g_lo == 0.0 && g_hi == 0.0) {
        return Err(Error::Bracketing { lo, hi, g_lo, g_hi });
    }
    let mut history = vec![(lo, hi)];
    let mut zero_at = None;
    if g_lo == 0.0 {
        zero_at = Some(lo);
    } else if g_hi == 0.0 {
        zero_at = Some(hi);
    }
    while zero_at.is_none() && hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let gm = g(mid, &mut evaluations)?.0;
        if gm > 0.0 {
            lo = mid;
            g_lo = gm;
        } else if gm < 0.0 {
            hi = mid;
            g_hi = gm;
        } else {
            zero_at = Some(mid);
        }
        history.push((lo, hi));
    }
    let s_hat = if let Some(z) = zero_at {
        // ends of the plateau {g = 0}
        let (mut a0, mut b0) = (lo, z);
        while b0 - a0 > tol {
            let mid = 0.5 * (a0 + b0);
            if g(mid, &mut evaluations)?.0 > 0.0 {
                a0 = mid;
            } else {
                b0 = mid;
            }
        }
        let (mut a1, mut b1) = (z, hi);
        while b1 - a1 > tol {
            let mid = 0.5 * (a1 + b1);
            if g(mid, &mut evaluations)?.0 < 0.0 {
                b1 = mid;
            } else {
                a1 = mid;
            }
        }
        lo = a0;
        hi = b1;
        history.push((lo, hi));
        0.5 * (b0 + a1)
    } else {
        lo + g_lo / (g_lo - g_hi) * (hi - lo)
    };
    // delta method: SE(ŝ) = SE(g(ŝ)) / |g'(ŝ)|
    let (_, d) = g(s_hat, &mut evaluations)?;
    let w = (hi - lo).max(0.01 * (1.0 + s_hat.abs()));
    let gp = g(s_hat + w, &mut evaluations)?.0;
    let gm = g(s_hat - w, &mut evaluations)?.0;
    let slope = (gp - gm) / (2.0 * w);
    let se = if slope < 0.0 { std_error(&d) / slope.abs() } else { f64::INFINITY };
    let half = 1.96 * se;
    Ok(BalanceEstimate {
        a: a.clone(),
        m,
        s_hat,
        se,
        ci95: (s_hat - half, s_hat + half),
        bracket: (lo, hi),
        bracket_history: history,
        evaluations,
        n: d.len(),
    })
}

#[derive(Clone, Copy, Debug)]
pub struct CellConfig {
    /// Torus side in unit cells.
    pub side: usize,
    /// Nodes per unit length.
    pub k: usize,
    pub tol: f64,
}

impl Default for CellConfig {
    fn default() -> Self {
        CellConfig { side: 9, k: 4, tol: 1e-7 }
    }
}

#[derive(Clone, Debug)]
pub struct CellEstimate {
    pub a: SymMatrix,
    /// Mean of `-lim δw^δ(0)` over realizations.
    pub cell_hat: f64,
    pub se: f64,
    pub ci95: (f64, f64),
    pub deltas: Vec<f64>,
    /// Mean of `-δw^δ(0)` per schedule value.
    pub schedule_means: Vec<f64>,
    pub per_realization: Vec<f64>,
    pub failures: Vec<(u64, String)>,
}

/// `-δw^δ(0)` along the schedule for one realization, and its extrapolation
/// to `δ = 0` (polynomial through the last three values).
fn cell_values(
    ensemble: &Arc<TileEnsemble>,
    a: &SymMatrix,
    deltas: &[f64],
    cfg: &CellConfig,
    seed: u64,
    index: u64,
) -> Result<(f64, Vec<f64>)> {
    let w = Window::new([0, 0], [cfg.side, cfg.side]);
    let r = sample_realization(ensemble, w, seed, index)?;
    let field = field_of(&r).translate(a);
    let mut problem = CellProblem::new(&field, cfg.side, cfg.k)?;
    let mut vals = Vec::with_capacity(deltas.len());
    let mut warm: Option<GridFunction> = None;
    for &d in deltas {
        let sol = problem.solve(d, cfg.tol, warm.as_ref())?;
        vals.push(-sol.value);
        warm = Some(sol.w);
    }
    let k = deltas.len().min(3);
    let x = &deltas[deltas.len() - k..];
    let y = &vals[vals.len() - k..];
    Ok((neville(x, y, 0.0), vals))
}

/// Cell-problem estimate of `F̄(A)`: `-δw^δ(0)` extrapolated to `δ = 0`,
/// averaged over realizations of the `side`-periodic torus.
pub fn effective_from_cell(
    ensemble: &Arc<TileEnsemble>,
    a: &SymMatrix,
    deltas: &[f64],
    cell: &CellConfig,
    n_real: usize,
    seed: u64,
    workers: usize,
) -> Result<CellEstimate> {
    if deltas.is_empty() || deltas.iter().any(|&d| !(d > 0.0)) || deltas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidInput("delta schedule must be positive and decreasing".into()));
    }
    if n_real == 0 {
        return Err(Error::InvalidInput("need at least one realization".into()));
    }
    let results = run_indexed(workers, n_real, |i| cell_values(ensemble, a, deltas, cell, seed, i))?;
    let (ok, failures) = tolerate(results)?;
    let per: Vec<f64> = ok.iter().map(|(_, v)| v.0).collect();
    let schedule_means = (0..deltas.len())
        .map(|k| mean(&ok.iter().map(|(_, v)| v.1[k]).collect::<Vec<_>>()))
        .collect();
    let cell_hat = mean(&per);
    let se = if per.len() > 1 { std_error(&per) } else { 0.0 };
    Ok(CellEstimate {
        a: a.clone(),
        cell_hat,
        se,
        ci95: (cell_hat - 1.96 * se, cell_hat + 1.96 * se),
        deltas: deltas.to_vec(),
        schedule_means,
        per_realization: per,
        failures,
    })
}

/// Both estimates of `F̄(A)`.
#[derive(Clone, Debug)]
pub struct EffectiveEstimate {
    pub a: SymMatrix,
    pub balance: Option<BalanceEstimate>,
    pub cell: Option<CellEstimate>,
}

impl EffectiveEstimate {
    /// `|ŝ - cell_hat|` against the joint 95% half-width
    /// `1.96 √(se_s² + se_cell²)`; None unless both estimates are present.
    pub fn agreement(&self) -> Option<(f64, f64)> {
        let (b, c) = (self.balance.as_ref()?, self.cell.as_ref()?);
        Some(((b.s_hat - c.cell_hat).abs(), 1.96 * (b.se * b.se + c.se * c.se).sqrt()))
    }
}

/// `F̄` of a linear ensemble, assembled from cell estimates at `0`, `E11`,
/// `E22` and `E12 + E21` (the effective operator is again linear).
pub fn effective_linear(
    ensemble: &Arc<TileEnsemble>,
    deltas: &[f64],
    cell: &CellConfig,
    n_real: usize,
    seed: u64,
    workers: usize,
) -> Result<LinearOp> {
    if !ensemble.is_linear() {
        return Err(Error::InvalidInput("effective_linear needs an ensemble of linear tiles".into()));
    }
    let est = |m: SymMatrix| effective_from_cell(ensemble, &m, deltas, cell, n_real, seed, workers).map(|e| e.cell_hat);
    let c = est(SymMatrix::zeros(2))?;
    let f11 = est(SymMatrix::new2(1.0, 0.0, 0.0))?;
    let f22 = est(SymMatrix::new2(0.0, 0.0, 1.0))?;
    let f12 = est(SymMatrix::new2(0.0, 1.0, 0.0))?;
    // F̄(M) = -tr(ā M) + c̄
    let abar = SymMatrix::new2(c - f11, 0.5 * (c - f12), c - f22);
    Ok(LinearOp::new(abar, c))
}

/// Variance decay: `E[μ(Q_m, F_A - ŝ)²]` and `E[μ(Q_m, (F_A)_* + ŝ)²]` per
/// scale with `ŝ` frozen, and the geometric rate of their sum.
#[derive(Clone, Debug)]
pub struct DecayReport {
    pub s_hat: f64,
    pub curve: MomentCurve,
    /// `E[μ²] + E[μ_*²]` per scale.
    pub totals: Vec<f64>,
    /// `exp` of the slope of `log(total)` against `m` (None if fewer than
    /// two positive totals).
    pub tau_hat: Option<f64>,
    pub fit_residuals: Vec<f64>,
    /// Increase of the total second moment between consecutive scales, in
    /// paired standard errors (positive = violation of monotonicity).
    pub monotonicity_z: Vec<f64>,
}

pub fn variance_decay_experiment(
    ensemble: &Arc<TileEnsemble>,
    a: &SymMatrix,
    ms: &[i32],
    s_hat: f64,
    n_real: usize,
    seed: u64,
    cfg: &RunConfig,
) -> Result<DecayReport> {
    // μ(F_A + t) with t = -ŝ, and μ((F_A + t)_*) = μ((F_A)_* + ŝ)
    let curve = expected_mu_curve(ensemble, a, ms, &[-s_hat], n_real, seed, cfg)?;
    let totals: Vec<f64> = (0..ms.len())
        .map(|mi| {
            let p = curve.point(mi, 0);
            p.m2_mu + p.m2_mustar
        })
        .collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = ms
        .iter()
        .zip(&totals)
        .filter(|(_, &t)| t > 0.0)
        .map(|(&m, &t)| (m as f64, t.ln()))
        .unzip();
    let fit = linear_fit(&xs, &ys);
    let monotonicity_z = (0..ms.len().saturating_sub(1))
        .map(|mi| {
            let (d, se) = curve.step_change_total_m2(mi, 0);
            if se > 0.0 {
                d / se
            } else if d > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        })
        .collect();
    Ok(DecayReport {
        s_hat,
        totals,
        tau_hat: fit.as_ref().map(|f| f.slope.exp()),
        fit_residuals: fit.map(|f| f.residuals).unwrap_or_default(),
        monotonicity_z,
        curve,
    })
}

#[derive(Clone, Debug)]
pub struct ErrorRow {
    pub eps: f64,
    pub n_grid: usize,
    pub gaps: Vec<f64>,
    pub median_gap: f64,
    pub mean_gap: f64,
}

#[derive(Clone, Debug)]
pub struct ErrorReport {
    pub rows: Vec<ErrorRow>,
    /// Slope of `log(median gap)` against `log ε`.
    pub alpha_hat: Option<f64>,
    pub fit_residuals: Vec<f64>,
    pub failures: Vec<(u64, String)>,
}

/// Sup-norm gap between the heterogeneous solution of
/// `F(D²u, x/ε) = f` in `cube`, `u = g` on the boundary, and the solution
/// with the effective operator, on the same grid (`per_cell` nodes per ε-cell
/// side), for each `ε`.
#[allow(clippy::too_many_arguments)]
pub fn error_rate_experiment(
    ensemble: &Arc<TileEnsemble>,
    cube: TriadicCube,
    f: f64,
    g: &BoundaryData,
    effective: &LocalOperator,
    eps_list: &[f64],
    per_cell: usize,
    n_real: usize,
    seed: u64,
    cfg: &RunConfig,
) -> Result<ErrorReport> {
    if per_cell * per_cell < 9 {
        return Err(Error::InvalidInput(format!(
            "resolution/ε mismatch: {} grid points per ε-cell, need at least 9",
            per_cell * per_cell
        )));
    }
    let sq = cube.square();
    let mut layouts = Vec::new();
    for &eps in eps_list {
        let cells = sq.side / eps;
        if !(eps > 0.0) || (cells - cells.round()).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("ε = {eps} does not tile the domain")));
        }
        layouts.push((eps, cells.round() as usize * per_cell + 1));
    }
    let eff = OperatorField::constant(effective.clone());
    let mut homogenized = Vec::new();
    for &(_, n) in &layouts {
        let fg = GridFunction::from_fn(sq, n, |_| f);
        let (u, _) = DirichletProblem::new(&eff, sq, n)?.solve(&fg, g, cfg.mu.tol)?;
        homogenized.push(u);
    }
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (k, &(eps, n)) in layouts.iter().enumerate() {
        let ubar = &homogenized[k];
        let results = run_indexed(cfg.workers, n_real, |i| {
            let lo = [sq.lo[0] / eps, sq.lo[1] / eps];
            let hi = [sq.hi()[0] / eps, sq.hi()[1] / eps];
            let r = sample_realization(ensemble, Window::covering(lo, hi), seed, i)?;
            let field = field_of(&r).rescaled(eps);
            let fg = GridFunction::from_fn(sq, n, |_| f);
            let (u, _) = DirichletProblem::new(&field, sq, n)?.solve(&fg, g, cfg.mu.tol)?;
            Ok(u.max_abs_diff(ubar))
        })?;
        let (ok, failed) = tolerate(results)?;
        failures.extend(failed.into_iter().map(|(i, e)| (i, format!("eps={eps}: {e}"))));
        let gaps: Vec<f64> = ok.into_iter().map(|(_, v)| v).collect();
        rows.push(ErrorRow { eps, n_grid: n, median_gap: median(&gaps), mean_gap: mean(&gaps), gaps });
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.median_gap > 0.0)
        .map(|r| (r.eps.ln(), r.median_gap.ln()))
        .unzip();
    let fit = linear_fit(&xs, &ys);
    Ok(ErrorReport {
        alpha_hat: fit.as_ref().map(|f| f.slope),
        fit_residuals: fit.map(|f| f.residuals).unwrap_or_default(),
        rows,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> RunConfig {
        RunConfig { mu: MuConfig { n: 28, optimize: false, budget: 10, tol: 1e-8 }, workers: 1 }
    }

    #[test]
    fn deterministic_curve_has_zero_variance() {
        let ens = Arc::new(TileEnsemble::constant(LocalOperator::linear(SymMatrix::diag(&[1.0, 2.0]), 1.0)).unwrap());
        let c = expected_mu_curve(&ens, &SymMatrix::zeros(2), &[0, 1], &[-0.5, 0.0, 0.5], 3, 1, &quick()).unwrap();
        for p in c.points() {
            assert_eq!(p.var_mu, 0.0);
            assert_eq!(p.var_mustar, 0.0);
            assert!(p.m2_mu >= p.mean_mu * p.mean_mu);
        }
        // nondecreasing in s, μ_* nonincreasing
        for mi in 0..2 {
            for si in 0..2 {
                assert!(c.point(mi, si + 1).mean_mu >= c.point(mi, si).mean_mu);
                assert!(c.point(mi, si + 1).mean_mustar <= c.point(mi, si).mean_mustar);
            }
        }
    }

    #[test]
    fn balance_of_constant_tile_is_the_tile() {
        let tile = LocalOperator::linear(SymMatrix::new2(3.0, 0.5, 2.0), 0.7);
        let ens = Arc::new(TileEnsemble::constant(tile.clone()).unwrap());
        let a = SymMatrix::new2(0.3, -0.1, 0.5);
        let b = balance_constant(&ens, &a, 0, 2, 1e-4, 3, &quick()).unwrap();
        let exact = tile.eval(&a);
        assert!((b.s_hat - exact).abs() < 2e-4, "{} vs {exact}", b.s_hat);
        assert!(b.bracket.0 <= b.s_hat && b.s_hat <= b.bracket.1);
    }

    #[test]
    fn homogeneous_linear_balances_at_zero() {
        let ens = Arc::new(TileEnsemble::checkerboard());
        let b = balance_constant(&ens, &SymMatrix::zeros(2), 0, 4, 1e-3, 5, &quick()).unwrap();
        assert!(b.s_hat.abs() < 1e-3, "{}", b.s_hat);
    }

    #[test]
    fn cell_estimate_of_constant_tile() {
        let tile = LocalOperator::linear(SymMatrix::new2(3.0, 0.5, 2.0), 0.7);
        let ens = Arc::new(TileEnsemble::constant(tile.clone()).unwrap());
        let a = SymMatrix::identity(2);
        let c = effective_from_cell(&ens, &a, &[1e-3, 5e-4, 2.5e-4], &CellConfig { side: 2, k: 3, tol: 1e-7 }, 2, 1, 1).unwrap();
        assert!((c.cell_hat - tile.eval(&a)).abs() < 1e-9);
        assert_eq!(c.se, 0.0);
        let lin = effective_linear(&ens, &[1e-3, 5e-4, 2.5e-4], &CellConfig { side: 2, k: 3, tol: 1e-7 }, 1, 1, 1).unwrap();
        assert!((&lin.a - &SymMatrix::new2(3.0, 0.5, 2.0)).max_abs_entry() < 1e-8);
        assert!((lin.c - 0.7).abs() < 1e-9);
    }

    #[test]
    fn error_rate_deterministic_is_exact() {
        let tile = LocalOperator::linear(SymMatrix::diag(&[1.0, 3.0]), 0.0);
        let ens = Arc::new(TileEnsemble::constant(tile.clone()).unwrap());
        let r = error_rate_experiment(&ens, TriadicCube::origin(0), 1.0, &BoundaryData::Zero, &tile, &[1.0 / 3.0, 1.0 / 9.0], 3, 2, 1, &quick()).unwrap();
        for row in &r.rows {
            assert!(row.median_gap <= 1e-10);
        }
        assert!(error_rate_experiment(&ens, TriadicCube::origin(0), 1.0, &BoundaryData::Zero, &tile, &[1.0 / 3.0], 2, 2, 1, &quick()).is_err());
    }

    #[test]
    fn checkerboard_balance_matches_harmonic_mean() {
        let ens = Arc::new(TileEnsemble::checkerboard());
        let b = balance_constant(&ens, &SymMatrix::identity(2), 0, 8, 1e-3, 11, &quick()).unwrap();
        assert!((b.s_hat + 3.2).abs() < 0.32, "{}", b.s_hat);
        assert!(b.bracket.0 <= b.s_hat && b.s_hat <= b.bracket.1);
    }

    #[test]
    fn checkerboard_cell_matches_harmonic_mean() {
        let ens = Arc::new(TileEnsemble::checkerboard());
        let cfg = CellConfig { side: 6, k: 3, tol: 1e-8 };
        let c = effective_from_cell(&ens, &SymMatrix::identity(2), &[0.04, 0.02, 0.01], &cfg, 6, 2, 1).unwrap();
        assert!((c.cell_hat + 3.2).abs() < 0.32, "{} ± {}", c.cell_hat, c.se);
    }

    #[test]
    fn bellman_min_cell_is_below_frozen_controls() {
        // freezing the min tile to either control gives a pointwise larger
        // operator, hence a larger effective value on the same environments
        let ens = Arc::new(TileEnsemble::bellman_checkerboard());
        let a = SymMatrix::new2(1.0, 0.2, -0.5);
        let cfg = CellConfig { side: 6, k: 3, tol: 1e-8 };
        let deltas = [0.04, 0.02, 0.01];
        let c = effective_from_cell(&ens, &a, &deltas, &cfg, 4, 2, 1).unwrap();
        let frozen = [
            Arc::new(TileEnsemble::constant(LocalOperator::scalar(2, 1.0, 0.0)).unwrap()),
            Arc::new(TileEnsemble::checkerboard()),
        ];
        for f in &frozen {
            let cf = effective_from_cell(f, &a, &deltas, &cfg, 4, 2, 1).unwrap();
            for (x, y) in c.per_realization.iter().zip(&cf.per_realization) {
                assert!(x <= &(y + 1e-6), "{x} vs {y}");
            }
        }
        let tile_min = ens.tiles().iter().map(|t| t.eval(&a)).fold(f64::INFINITY, f64::min);
        assert!(c.cell_hat >= tile_min - 1e-6);
    }

    #[test]
    fn failures_above_threshold_abort() {
        let res: Vec<Result<u32>> = (0..10).map(|i| if i < 2 { Err(Error::InvalidInput("x".into())) } else { Ok(i) }).collect();
        assert!(matches!(tolerate(res), Err(Error::TooManyFailures { failed: 2, total: 10, .. })));
        let res: Vec<Result<u32>> = (0..10).map(|i| if i < 1 { Err(Error::InvalidInput("x".into())) } else { Ok(i) }).collect();
        let (ok, failed) = tolerate(res).unwrap();
        assert_eq!((ok.len(), failed.len()), (9, 1));
    }
}
