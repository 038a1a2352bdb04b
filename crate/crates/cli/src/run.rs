//! Executing configured experiments into a run directory.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use homoglab::homogenize::{
    balance_constant, effective_from_cell, effective_linear, error_rate_experiment, par_realizations,
    variance_decay_experiment, window_for, CellConfig, EffectiveEstimate, RunConfig,
};
use homoglab::mu::MuProblem;
use homoglab::{field_of, sample_realization, BoundaryData, Error, LocalOperator, TriadicCube};

use crate::config::{CellSettings, EffectiveMethod, Experiment, ExperimentConfig, Homogenized};
use crate::output::{self, DirLock, RunRecord};
use crate::{CliError, EXIT_IO, EXIT_VALIDATION};

/// Output files of one run, in writing order.
pub struct Outputs {
    pub files: Vec<(String, String)>,
    pub failures: Vec<(u64, String)>,
    /// Realizations attempted per stage (for the status table).
    pub realizations: usize,
    /// Human-readable summary lines.
    pub summary: Vec<String>,
}

impl Outputs {
    fn new(n: usize) -> Self {
        Outputs { files: Vec::new(), failures: Vec::new(), realizations: n, summary: Vec::new() }
    }

    fn add(&mut self, name: &str, contents: String) {
        self.files.push((name.to_string(), contents));
    }

    /// Merges failures from another stage, keeping the first message per index.
    fn fail(&mut self, prefix: &str, f: Vec<(u64, String)>) {
        for (i, m) in f {
            if !self.failures.iter().any(|(j, _)| *j == i) {
                self.failures.push((i, format!("{prefix}: {m}")));
            }
        }
        self.failures.sort_by_key(|(i, _)| *i);
    }
}

fn run_config(cfg: &ExperimentConfig) -> RunConfig {
    RunConfig { mu: cfg.mu, workers: cfg.workers }
}

fn cell_config(c: &CellSettings) -> CellConfig {
    CellConfig { side: c.side, k: c.k, tol: c.tol }
}

fn sci(x: f64) -> String {
    format!("{x:e}")
}

/// Computes all outputs of an experiment without touching the filesystem.
pub fn compute(cfg: &ExperimentConfig) -> Result<Outputs, Error> {
    let rc = run_config(cfg);
    let ens = &cfg.ensemble;
    let n = cfg.realizations;
    let mut out = Outputs::new(n);
    match &cfg.experiment {
        Experiment::Mu { a, ms, ss } => {
            let m_max = *ms.iter().max().unwrap();
            let (ok, failed) = par_realizations(cfg.workers, n, |i| {
                let r = sample_realization(ens, window_for(m_max), cfg.seed, i)?;
                let fa = field_of(&r).translate(a);
                let mut rows = Vec::new();
                for &m in ms {
                    let cube = TriadicCube::origin(m);
                    let mut p = MuProblem::new(&fa, cube, cfg.mu)?;
                    for &s in ss {
                        let f = fa.shift(s);
                        for (twin, field) in [("mu", f.clone()), ("mustar", f.star())] {
                            let e = p.estimate(&field)?;
                            rows.push(format!(
                                "{m},{};{},{},{},{},{},{},{i},{twin}\n",
                                cube.k[0],
                                cube.k[1],
                                sci(s),
                                sci(e.value),
                                sci(e.cert_residual),
                                e.method.as_str(),
                                cfg.seed
                            ));
                        }
                    }
                }
                Ok(rows)
            })?;
            let mut csv = String::from("cube_m,cube_k,s,value,cert_resid,method,seed,realization,twin\n");
            for (_, rows) in &ok {
                rows.iter().for_each(|r| csv.push_str(r));
            }
            out.add("mu.csv", csv);
            out.fail("mu", failed);
            out.summary.push(format!("{} realizations × {} scales × {} shifts", ok.len(), ms.len(), ss.len()));
        }
        Experiment::MuDecay { a, ms, s_hat, balance_m, balance_realizations, balance_tol } => {
            let s_hat = match s_hat {
                Some(s) => *s,
                None => {
                    let b = balance_constant(ens, a, *balance_m, *balance_realizations, *balance_tol, cfg.seed, &rc)?;
                    let mut csv = String::from("step,s,g\n");
                    for (k, (s, g)) in b.evaluations.iter().enumerate() {
                        writeln!(csv, "{k},{},{}", sci(*s), sci(*g)).unwrap();
                    }
                    out.add("balance.csv", csv);
                    out.summary.push(format!("ŝ = {:.6} ± {:.2e} (m = {balance_m})", b.s_hat, b.se));
                    b.s_hat
                }
            };
            let d = variance_decay_experiment(ens, a, ms, s_hat, n, cfg.seed, &rc)?;
            out.add("curve.csv", d.curve.to_csv());
            let mut fit = String::from("name,m,value\n");
            writeln!(fit, "s_hat,,{}", sci(s_hat)).unwrap();
            writeln!(fit, "tau_hat,,{}", d.tau_hat.map(sci).unwrap_or_else(|| "nan".into())).unwrap();
            for (m, t) in ms.iter().zip(&d.totals) {
                writeln!(fit, "total_m2,{m},{}", sci(*t)).unwrap();
            }
            let positive: Vec<i32> = ms.iter().zip(&d.totals).filter(|(_, t)| **t > 0.0).map(|(m, _)| *m).collect();
            for (m, r) in positive.iter().zip(&d.fit_residuals) {
                writeln!(fit, "residual,{m},{}", sci(*r)).unwrap();
            }
            for (m, z) in ms.iter().skip(1).zip(&d.monotonicity_z) {
                writeln!(fit, "monotonicity_z,{m},{}", sci(*z)).unwrap();
            }
            out.add("fit.csv", fit);
            let pts: Vec<(f64, f64)> = ms.iter().zip(&d.totals).map(|(m, t)| (*m as f64, *t)).collect();
            out.add("plot.svg", output::log_plot_svg("second-moment decay", "m", "E[mu^2] + E[mu_*^2]", &pts, false));
            out.fail("decay", d.curve.failures.clone());
            out.summary.push(match d.tau_hat {
                Some(t) => format!("τ̂ = {t:.4}"),
                None => "τ̂ undefined (fewer than two positive moments)".into(),
            });
        }
        Experiment::Effective { a, method, m, tol, cell } => {
            let balance = match method {
                EffectiveMethod::Balance | EffectiveMethod::Both => {
                    Some(balance_constant(ens, a, *m, n, *tol, cfg.seed, &rc)?)
                }
                EffectiveMethod::Cell => None,
            };
            let cellest = match method {
                EffectiveMethod::Cell | EffectiveMethod::Both => Some(effective_from_cell(
                    ens,
                    a,
                    &cell.deltas,
                    &cell_config(cell),
                    n,
                    cfg.seed,
                    cfg.workers,
                )?),
                EffectiveMethod::Balance => None,
            };
            let est = EffectiveEstimate { a: a.clone(), balance, cell: cellest };
            let mut csv = String::from("estimator,a11,a12,a22,value,se,ci_lo,ci_hi,N\n");
            let (a11, a12, a22) = (a.get(0, 0), a.get(0, 1), a.get(1, 1));
            if let Some(b) = &est.balance {
                writeln!(
                    csv,
                    "balance,{a11},{a12},{a22},{},{},{},{},{}",
                    sci(b.s_hat),
                    sci(b.se),
                    sci(b.ci95.0),
                    sci(b.ci95.1),
                    b.n
                )
                .unwrap();
                let mut c = String::from("step,s,g\n");
                for (k, (s, g)) in b.evaluations.iter().enumerate() {
                    writeln!(c, "{k},{},{}", sci(*s), sci(*g)).unwrap();
                }
                out.add("curve.csv", c);
                let mut br = String::from("step,lo,hi\n");
                for (k, (lo, hi)) in b.bracket_history.iter().enumerate() {
                    writeln!(br, "{k},{},{}", sci(*lo), sci(*hi)).unwrap();
                }
                out.add("bracket.csv", br);
                out.summary.push(format!("ŝ = {:.6} (95% CI [{:.6}, {:.6}])", b.s_hat, b.ci95.0, b.ci95.1));
            }
            if let Some(c) = &est.cell {
                writeln!(
                    csv,
                    "cell,{a11},{a12},{a22},{},{},{},{},{}",
                    sci(c.cell_hat),
                    sci(c.se),
                    sci(c.ci95.0),
                    sci(c.ci95.1),
                    c.per_realization.len()
                )
                .unwrap();
                let mut sc = String::from("delta,mean_value\n");
                for (d, v) in c.deltas.iter().zip(&c.schedule_means) {
                    writeln!(sc, "{},{}", sci(*d), sci(*v)).unwrap();
                }
                out.add("cell.csv", sc);
                out.fail("cell", c.failures.clone());
                out.summary.push(format!("cell_hat = {:.6} (95% CI [{:.6}, {:.6}])", c.cell_hat, c.ci95.0, c.ci95.1));
            }
            out.add("estimates.csv", csv);
            if let Some((diff, half)) = est.agreement() {
                out.add(
                    "fit.csv",
                    format!("name,value\nabs_difference,{}\njoint_ci_halfwidth,{}\nagree,{}\n", sci(diff), sci(half), diff <= half),
                );
                out.summary.push(format!("|ŝ - cell_hat| = {diff:.4} vs joint half-width {half:.4}"));
            }
        }
        Experiment::ErrorRate { m, f, eps, per_cell, effective, cell } => {
            let lin = match effective {
                Homogenized::Given(l) => l.clone(),
                Homogenized::Cell => effective_linear(ens, &cell.deltas, &cell_config(cell), n, cfg.seed, cfg.workers)?,
            };
            let op = LocalOperator::Linear(lin.clone());
            let r = error_rate_experiment(ens, TriadicCube::origin(*m), *f, &BoundaryData::Zero, &op, eps, *per_cell, n, cfg.seed, &rc)?;
            let mut curve = String::from("eps,n_grid,N,median_gap,mean_gap\n");
            let mut gaps = String::from("eps,sample,gap\n");
            for row in &r.rows {
                writeln!(curve, "{},{},{},{},{}", sci(row.eps), row.n_grid, row.gaps.len(), sci(row.median_gap), sci(row.mean_gap)).unwrap();
                for (k, g) in row.gaps.iter().enumerate() {
                    writeln!(gaps, "{},{k},{}", sci(row.eps), sci(*g)).unwrap();
                }
            }
            out.add("curve.csv", curve);
            out.add("gaps.csv", gaps);
            let mut fit = String::from("name,index,value\n");
            writeln!(fit, "alpha_hat,,{}", r.alpha_hat.map(sci).unwrap_or_else(|| "nan".into())).unwrap();
            for (k, res) in r.fit_residuals.iter().enumerate() {
                writeln!(fit, "residual,{k},{}", sci(*res)).unwrap();
            }
            writeln!(fit, "effective_a11,,{}", sci(lin.a.get(0, 0))).unwrap();
            writeln!(fit, "effective_a12,,{}", sci(lin.a.get(0, 1))).unwrap();
            writeln!(fit, "effective_a22,,{}", sci(lin.a.get(1, 1))).unwrap();
            writeln!(fit, "effective_c,,{}", sci(lin.c)).unwrap();
            out.add("fit.csv", fit);
            let pts: Vec<(f64, f64)> = r.rows.iter().map(|row| (row.eps, row.median_gap)).collect();
            out.add("plot.svg", output::log_plot_svg("homogenization error", "eps", "median sup gap", &pts, true));
            out.fail("error-rate", r.failures.clone());
            out.summary.push(match r.alpha_hat {
                Some(a) => format!("α̂ = {a:.4}"),
                None => "α̂ undefined".into(),
            });
        }
    }
    Ok(out)
}

/// The manifest: every parameter needed to recompute the outputs.
pub fn manifest(cfg: &ExperimentConfig, id: &str) -> String {
    let mut s = String::new();
    writeln!(s, "homoglab {}", env!("CARGO_PKG_VERSION")).unwrap();
    writeln!(s, "run_id = {id}").unwrap();
    writeln!(s, "kind = {}", cfg.kind.as_str()).unwrap();
    writeln!(s, "seed = {}", cfg.seed).unwrap();
    writeln!(s, "realizations = {}", cfg.realizations).unwrap();
    writeln!(s, "lambda = {}", cfg.ensemble.lambda()).unwrap();
    writeln!(s, "k0 = {}", cfg.ensemble.k0()).unwrap();
    writeln!(s, "mu = n {} optimize {} budget {} tol {:e}", cfg.mu.n, cfg.mu.optimize, cfg.mu.budget, cfg.mu.tol).unwrap();
    s.push_str("--- config ---\n");
    s.push_str(&cfg.text);
    if !cfg.text.ends_with('\n') {
        s.push('\n');
    }
    s
}

/// Runs the experiment into `dir`: takes the directory lock, refuses a
/// recorded run id unless `force`, writes every output atomically and appends
/// the run record.
pub fn run(cfg: &ExperimentConfig, dir: &Path, force: bool) -> Result<RunRecord, CliError> {
    let io = |e: std::io::Error| CliError::new(EXIT_IO, format!("{}: {e}", dir.display()));
    fs::create_dir_all(dir).map_err(io)?;
    let _lock = DirLock::acquire(dir).map_err(io)?;
    let id = output::run_id(&cfg.text, cfg.seed);
    if !force && output::is_recorded(dir, &id).map_err(io)? {
        return Err(CliError::new(
            EXIT_VALIDATION,
            format!("run {id} is already recorded in {}; pass --force to rerun", dir.display()),
        ));
    }
    let started = output::unix_time();
    let outputs = compute(cfg).map_err(CliError::from)?;
    let statuses = output::statuses(outputs.realizations, &outputs.failures);
    let mut files = vec!["manifest.txt".to_string()];
    output::write_atomic(dir, "manifest.txt", manifest(cfg, &id).as_bytes()).map_err(io)?;
    for (name, contents) in &outputs.files {
        output::write_atomic(dir, name, contents.as_bytes()).map_err(io)?;
        files.push(name.clone());
    }
    output::write_atomic(dir, "realizations.csv", output::status_csv(&statuses).as_bytes()).map_err(io)?;
    files.push("realizations.csv".into());
    let rec = RunRecord {
        id,
        kind: cfg.kind.as_str().into(),
        started,
        finished: output::unix_time(),
        realizations: statuses,
        files,
    };
    output::append_record(dir, &rec).map_err(io)?;
    for line in &outputs.summary {
        println!("{line}");
    }
    if rec.failed() > 0 {
        println!("partial failure: {} of {} realizations failed (see realizations.csv)", rec.failed(), rec.realizations.len());
    }
    Ok(rec)
}
