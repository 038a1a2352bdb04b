//! Experiment configuration: `[section]` headers and `key = value` lines.
//!
//! `#` starts a comment. Every key is checked against the schema of the
//! experiment kind; unknown sections or keys are hard errors, so a misspelled
//! tolerance can never fall back to a default.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use homoglab::{BellmanMode, LinearOp, LocalOperator, MuConfig, SymMatrix, TileEnsemble};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    /// `section.key`, or the section alone.
    pub field: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config field `{}`: {}", self.field, self.message)
    }
}

impl std::error::Error for ConfigError {}

fn err(field: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError { field: field.into(), message: message.into() }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Mu,
    MuDecay,
    Effective,
    ErrorRate,
}

impl Kind {
    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Mu => "mu",
            Kind::MuDecay => "mu-decay",
            Kind::Effective => "effective",
            Kind::ErrorRate => "error-rate",
        }
    }

    fn parse(s: &str) -> Option<Kind> {
        Some(match s {
            "mu" => Kind::Mu,
            "mu-decay" => Kind::MuDecay,
            "effective" => Kind::Effective,
            "error-rate" => Kind::ErrorRate,
            _ => return None,
        })
    }

    /// The experiment-specific section.
    fn section(self) -> &'static str {
        match self {
            Kind::Mu => "curve",
            Kind::MuDecay => "decay",
            Kind::Effective => "effective",
            Kind::ErrorRate => "error",
        }
    }
}

const RUN_KEYS: &[&str] = &["kind", "seed", "workers", "realizations"];
const ENSEMBLE_KEYS: &[&str] = &["preset", "tiles", "probs", "lambda", "k0"];
const MU_KEYS: &[&str] = &["n", "optimize", "budget", "tol"];
const CELL_KEYS: &[&str] = &["deltas", "side", "k", "tol"];
const CURVE_KEYS: &[&str] = &["a", "m", "s"];
const DECAY_KEYS: &[&str] = &["a", "m", "s_hat", "balance_m", "balance_realizations", "balance_tol"];
const EFFECTIVE_KEYS: &[&str] = &["a", "method", "m", "tol"];
const ERROR_KEYS: &[&str] = &["m", "f", "eps", "per_cell", "effective", "effective_a", "effective_c"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EffectiveMethod {
    Balance,
    Cell,
    Both,
}

#[derive(Clone, Debug)]
pub enum Homogenized {
    /// Estimated from cell problems (linear ensembles).
    Cell,
    Given(LinearOp),
}

#[derive(Clone, Debug)]
pub struct CellSettings {
    pub deltas: Vec<f64>,
    pub side: usize,
    pub k: usize,
    pub tol: f64,
}

#[derive(Clone, Debug)]
pub enum Experiment {
    Mu { a: SymMatrix, ms: Vec<i32>, ss: Vec<f64> },
    MuDecay {
        a: SymMatrix,
        ms: Vec<i32>,
        s_hat: Option<f64>,
        balance_m: i32,
        balance_realizations: usize,
        balance_tol: f64,
    },
    Effective { a: SymMatrix, method: EffectiveMethod, m: i32, tol: f64, cell: CellSettings },
    ErrorRate { m: i32, f: f64, eps: Vec<f64>, per_cell: usize, effective: Homogenized, cell: CellSettings },
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    /// The file as given, echoed into the manifest.
    pub text: String,
    pub kind: Kind,
    pub seed: u64,
    pub workers: usize,
    pub realizations: usize,
    pub ensemble: Arc<TileEnsemble>,
    pub mu: MuConfig,
    pub experiment: Experiment,
}

type Sections = BTreeMap<String, BTreeMap<String, String>>;

fn parse_sections(text: &str) -> Result<Sections, ConfigError> {
    let mut out: Sections = BTreeMap::new();
    let mut current: Option<String> = None;
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| err(format!("line {}", ln + 1), "unterminated section header"))?
                .trim()
                .to_string();
            if out.contains_key(&name) {
                return Err(err(name, "section given twice"));
            }
            out.insert(name.clone(), BTreeMap::new());
            current = Some(name);
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| err(format!("line {}", ln + 1), "expected `key = value`"))?;
        let sec = current
            .as_ref()
            .ok_or_else(|| err(format!("line {}", ln + 1), "key outside of any [section]"))?;
        let key = k.trim().to_string();
        if out.get_mut(sec).unwrap().insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(err(format!("{sec}.{key}"), "key given twice"));
        }
    }
    Ok(out)
}

/// Typed access to one section.
struct Section<'a> {
    name: &'a str,
    map: Option<&'a BTreeMap<String, String>>,
}

impl<'a> Section<'a> {
    fn field(&self, key: &str) -> String {
        format!("{}.{}", self.name, key)
    }

    fn raw(&self, key: &str) -> Option<&'a str> {
        self.map.and_then(|m| m.get(key)).map(String::as_str)
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, what: &str) -> Result<Option<T>, ConfigError> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| err(self.field(key), format!("expected {what}, got {v:?}"))),
        }
    }

    fn f64(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => parse_number(v).map(Some).map_err(|m| err(self.field(key), m)),
        }
    }

    fn f64_list(&self, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|x| parse_number(x.trim()))
                .collect::<Result<Vec<_>, _>>()
                .map(Some)
                .map_err(|m| err(self.field(key), m)),
        }
    }

    /// `0,1,2` or the inclusive range `0..3`.
    fn scale_list(&self, key: &str) -> Result<Option<Vec<i32>>, ConfigError> {
        let Some(v) = self.raw(key) else { return Ok(None) };
        let bad = || err(self.field(key), format!("expected a list `0,1,2` or a range `0..3`, got {v:?}"));
        let ms: Vec<i32> = if let Some((a, b)) = v.split_once("..") {
            let (a, b): (i32, i32) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
            if b < a {
                return Err(bad());
            }
            (a..=b).collect()
        } else {
            v.split(',').map(|x| x.trim().parse()).collect::<Result<_, _>>().map_err(|_| bad())?
        };
        if ms.iter().any(|&m| !(0..=6).contains(&m)) {
            return Err(err(self.field(key), "scales must lie in 0..=6"));
        }
        if ms.windows(2).any(|w| w[1] <= w[0]) {
            return Err(err(self.field(key), "scales must be strictly increasing"));
        }
        Ok(Some(ms))
    }

    /// `a11 a12 a22`.
    fn matrix(&self, key: &str) -> Result<Option<SymMatrix>, ConfigError> {
        let Some(v) = self.raw(key) else { return Ok(None) };
        let xs = v
            .split_whitespace()
            .map(parse_number)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|m| err(self.field(key), m))?;
        if xs.len() != 3 {
            return Err(err(self.field(key), "expected a symmetric 2×2 matrix `a11 a12 a22`"));
        }
        Ok(Some(SymMatrix::new2(xs[0], xs[1], xs[2])))
    }
}

/// A float, or a fraction `p/q`.
fn parse_number(s: &str) -> Result<f64, String> {
    let v = if let Some((p, q)) = s.split_once('/') {
        let p: f64 = p.trim().parse().map_err(|_| format!("bad number {s:?}"))?;
        let q: f64 = q.trim().parse().map_err(|_| format!("bad number {s:?}"))?;
        p / q
    } else {
        s.parse().map_err(|_| format!("bad number {s:?}"))?
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("non-finite number {s:?}"))
    }
}

/// One tile: `scalar s c`, `linear a11 a12 a22 c`, or
/// `bellman-min|bellman-max a11 a12 a22 c | a11 a12 a22 c | ...`.
fn parse_tile(s: &str) -> Result<LocalOperator, String> {
    let s = s.trim();
    let (head, rest) = s.split_once(char::is_whitespace).unwrap_or((s, ""));
    let nums = |t: &str| t.split_whitespace().map(parse_number).collect::<Result<Vec<_>, _>>();
    let linear = |t: &str| -> Result<LinearOp, String> {
        match nums(t)?.as_slice() {
            [a11, a12, a22, c] => Ok(LinearOp::new(SymMatrix::new2(*a11, *a12, *a22), *c)),
            _ => Err(format!("expected `a11 a12 a22 c`, got {t:?}")),
        }
    };
    match head {
        "scalar" => match nums(rest)?.as_slice() {
            [a, c] => Ok(LocalOperator::scalar(2, *a, *c)),
            _ => Err(format!("expected `scalar s c`, got {s:?}")),
        },
        "linear" => Ok(LocalOperator::Linear(linear(rest)?)),
        "bellman-min" | "bellman-max" => {
            let mode = if head == "bellman-min" { BellmanMode::Min } else { BellmanMode::Max };
            let children = rest.split('|').map(linear).collect::<Result<Vec<_>, _>>()?;
            LocalOperator::bellman(children, mode).map_err(|e| e.to_string())
        }
        "pucci+" | "pucci-" => Err("Pucci tiles cannot be used in an environment".into()),
        _ => Err(format!("unknown tile kind {head:?}")),
    }
}

fn parse_ensemble(sec: &Section) -> Result<TileEnsemble, ConfigError> {
    let ens_err = |e: homoglab::Error| match e {
        homoglab::Error::Ensemble { field, reason } => err(sec.field(field), reason),
        other => err(sec.name, other.to_string()),
    };
    if let Some(p) = sec.raw("preset") {
        if sec.raw("tiles").is_some() || sec.raw("probs").is_some() {
            return Err(err(sec.field("preset"), "give either a preset or tiles/probs, not both"));
        }
        return match p {
            "checkerboard" => Ok(TileEnsemble::checkerboard()),
            "forcing-checkerboard" => Ok(TileEnsemble::forcing_checkerboard()),
            "bellman-checkerboard" => Ok(TileEnsemble::bellman_checkerboard()),
            _ => Err(err(sec.field("preset"), format!("unknown preset {p:?}"))),
        };
    }
    let tiles = sec
        .raw("tiles")
        .ok_or_else(|| err(sec.field("tiles"), "required (or give a preset)"))?
        .split(';')
        .map(parse_tile)
        .collect::<Result<Vec<_>, _>>()
        .map_err(|m| err(sec.field("tiles"), m))?;
    let probs = match sec.f64_list("probs")? {
        Some(p) => p,
        None if tiles.len() == 1 => vec![1.0],
        None => return Err(err(sec.field("probs"), "required with more than one tile")),
    };
    match (sec.f64("lambda")?, sec.f64("k0")?) {
        (None, None) => TileEnsemble::with_natural_constants(tiles, probs),
        (l, k) => {
            let natural = TileEnsemble::with_natural_constants(tiles.clone(), probs.clone()).map_err(ens_err)?;
            TileEnsemble::new(tiles, probs, l.unwrap_or(natural.lambda()), k.unwrap_or(natural.k0()))
        }
    }
    .map_err(ens_err)
}

fn parse_cell(sec: &Section) -> Result<CellSettings, ConfigError> {
    let deltas = sec.f64_list("deltas")?.unwrap_or_else(|| vec![0.04, 0.02, 0.01]);
    if deltas.is_empty() || deltas.iter().any(|&d| d <= 0.0) || deltas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(err(sec.field("deltas"), "must be positive and strictly decreasing"));
    }
    let side = sec.parse("side", "an integer")?.unwrap_or(9);
    let k = sec.parse("k", "an integer")?.unwrap_or(4);
    if side < 1 {
        return Err(err(sec.field("side"), "must be at least 1"));
    }
    if k < 1 || side * k < 3 {
        return Err(err(sec.field("k"), "need k >= 1 and at least 3 nodes per torus side"));
    }
    let tol = sec.f64("tol")?.unwrap_or(1e-8);
    if tol <= 0.0 {
        return Err(err(sec.field("tol"), "must be positive"));
    }
    Ok(CellSettings { deltas, side, k, tol })
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<ExperimentConfig, ConfigError> {
        let sections = parse_sections(text)?;
        let kind_str = sections
            .get("run")
            .and_then(|m| m.get("kind"))
            .ok_or_else(|| err("run.kind", "required (mu, mu-decay, effective, error-rate)"))?;
        let kind = Kind::parse(kind_str).ok_or_else(|| err("run.kind", format!("unknown experiment kind {kind_str:?}")))?;
        let needs_cell = matches!(kind, Kind::Effective | Kind::ErrorRate);
        let mut schema: Vec<(&str, &[&str])> = vec![("run", RUN_KEYS), ("ensemble", ENSEMBLE_KEYS), ("mu", MU_KEYS)];
        if needs_cell {
            schema.push(("cell", CELL_KEYS));
        }
        schema.push((
            kind.section(),
            match kind {
                Kind::Mu => CURVE_KEYS,
                Kind::MuDecay => DECAY_KEYS,
                Kind::Effective => EFFECTIVE_KEYS,
                Kind::ErrorRate => ERROR_KEYS,
            },
        ));
        for (name, keys) in &sections {
            let allowed = schema
                .iter()
                .find(|(s, _)| s == name)
                .ok_or_else(|| err(name.clone(), format!("unknown section for kind {}", kind.as_str())))?
                .1;
            for key in keys.keys() {
                if !allowed.contains(&key.as_str()) {
                    return Err(err(format!("{name}.{key}"), "unknown key"));
                }
            }
        }
        let sec = |name: &'static str| Section { name, map: sections.get(name) };

        let run = sec("run");
        let seed = run.parse("seed", "an unsigned integer")?.unwrap_or(1);
        let workers = run.parse("workers", "an unsigned integer")?.unwrap_or(0);
        let realizations: usize = run.parse("realizations", "an unsigned integer")?.unwrap_or(20);
        if realizations < 2 {
            return Err(err("run.realizations", "need at least 2 realizations"));
        }

        let ensemble = Arc::new(parse_ensemble(&sec("ensemble"))?);

        let mus = sec("mu");
        let mut mu = MuConfig::default();
        if let Some(n) = mus.parse::<usize>("n", "an integer")? {
            if n < 4 {
                return Err(err("mu.n", "need at least 4 grid points per side"));
            }
            mu.n = n;
        }
        if let Some(o) = mus.parse("optimize", "true or false")? {
            mu.optimize = o;
        }
        if let Some(b) = mus.parse("budget", "an integer")? {
            mu.budget = b;
        }
        if let Some(t) = mus.f64("tol")? {
            if t <= 0.0 {
                return Err(err("mu.tol", "must be positive"));
            }
            mu.tol = t;
        }

        let x = sec(kind.section());
        let zero = SymMatrix::zeros(2);
        let experiment = match kind {
            Kind::Mu => Experiment::Mu {
                a: x.matrix("a")?.unwrap_or(zero),
                ms: x.scale_list("m")?.unwrap_or_else(|| vec![0]),
                ss: x.f64_list("s")?.unwrap_or_else(|| vec![0.0]),
            },
            Kind::MuDecay => {
                let ms = x.scale_list("m")?.ok_or_else(|| err("decay.m", "required"))?;
                if ms.len() < 2 {
                    return Err(err("decay.m", "need at least two scales"));
                }
                let balance_tol = x.f64("balance_tol")?.unwrap_or(1e-3);
                if balance_tol <= 0.0 {
                    return Err(err("decay.balance_tol", "must be positive"));
                }
                let balance_realizations = x.parse("balance_realizations", "an integer")?.unwrap_or(realizations);
                if balance_realizations < 2 {
                    return Err(err("decay.balance_realizations", "need at least 2"));
                }
                Experiment::MuDecay {
                    a: x.matrix("a")?.unwrap_or(zero),
                    s_hat: x.f64("s_hat")?,
                    balance_m: x.parse("balance_m", "an integer")?.unwrap_or(0),
                    balance_realizations,
                    balance_tol,
                    ms,
                }
            }
            Kind::Effective => {
                let method = match x.raw("method").unwrap_or("both") {
                    "balance" => EffectiveMethod::Balance,
                    "cell" => EffectiveMethod::Cell,
                    "both" => EffectiveMethod::Both,
                    other => return Err(err("effective.method", format!("expected balance, cell or both, got {other:?}"))),
                };
                let tol = x.f64("tol")?.unwrap_or(1e-3);
                if tol <= 0.0 {
                    return Err(err("effective.tol", "must be positive"));
                }
                let m = x.parse("m", "an integer")?.unwrap_or(0);
                if !(0..=6).contains(&m) {
                    return Err(err("effective.m", "must lie in 0..=6"));
                }
                Experiment::Effective {
                    a: x.matrix("a")?.unwrap_or_else(|| SymMatrix::identity(2)),
                    method,
                    m,
                    tol,
                    cell: parse_cell(&sec("cell"))?,
                }
            }
            Kind::ErrorRate => {
                let m = x.parse("m", "an integer")?.unwrap_or(0);
                if !(0..=3).contains(&m) {
                    return Err(err("error.m", "must lie in 0..=3"));
                }
                let eps = x.f64_list("eps")?.unwrap_or_else(|| vec![1.0 / 3.0, 1.0 / 9.0, 1.0 / 27.0]);
                let side = homoglab::TriadicCube::origin(m).side();
                for &e in &eps {
                    let cells = side / e;
                    if e <= 0.0 || (cells - cells.round()).abs() > 1e-9 {
                        return Err(err("error.eps", format!("ε = {e} does not tile a cube of side {side}")));
                    }
                }
                let per_cell = x.parse("per_cell", "an integer")?.unwrap_or(3);
                if per_cell * per_cell < 9 {
                    return Err(err(
                        "error.per_cell",
                        format!("resolution/ε mismatch: {} grid points per ε-cell, need at least 9", per_cell * per_cell),
                    ));
                }
                let effective = match x.raw("effective").unwrap_or("cell") {
                    "cell" => {
                        if !ensemble.is_linear() {
                            return Err(err("error.effective", "cell estimation needs a linear ensemble; give `effective = given`"));
                        }
                        Homogenized::Cell
                    }
                    "given" => {
                        let a = x.matrix("effective_a")?.ok_or_else(|| err("error.effective_a", "required when effective = given"))?;
                        Homogenized::Given(LinearOp::new(a, x.f64("effective_c")?.unwrap_or(0.0)))
                    }
                    other => return Err(err("error.effective", format!("expected cell or given, got {other:?}"))),
                };
                Experiment::ErrorRate {
                    m,
                    f: x.f64("f")?.unwrap_or(1.0),
                    eps,
                    per_cell,
                    effective,
                    cell: parse_cell(&sec("cell"))?,
                }
            }
        };
        Ok(ExperimentConfig { text: text.to_string(), kind, seed, workers, realizations, ensemble, mu, experiment })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DECAY: &str = "
[run]
kind = mu-decay
seed = 7
realizations = 4

[ensemble]
tiles = scalar 1 0; scalar 4 0
probs = 0.5, 0.5

[mu]
n = 28

[decay]
a = 1 0 1
m = 0..2
s_hat = -3.2
";

    #[test]
    fn parses_a_decay_config() {
        let c = ExperimentConfig::parse(DECAY).unwrap();
        assert_eq!(c.kind, Kind::MuDecay);
        assert_eq!(c.seed, 7);
        assert_eq!(c.mu.n, 28);
        match c.experiment {
            Experiment::MuDecay { ms, s_hat, .. } => {
                assert_eq!(ms, vec![0, 1, 2]);
                assert_eq!(s_hat, Some(-3.2));
            }
            _ => panic!(),
        }
    }

    #[test]
    fn bad_probs_name_the_field() {
        let text = DECAY.replace("probs = 0.5, 0.5", "probs = 0.5, 0.6");
        let e = ExperimentConfig::parse(&text).unwrap_err();
        assert_eq!(e.field, "ensemble.probs");
        assert!(e.to_string().contains("probs"));
    }

    #[test]
    fn unknown_keys_and_sections_are_errors() {
        let e = ExperimentConfig::parse(&DECAY.replace("n = 28", "nn = 28")).unwrap_err();
        assert_eq!(e.field, "mu.nn");
        let e = ExperimentConfig::parse(&format!("{DECAY}\n[effective]\nm = 1\n")).unwrap_err();
        assert_eq!(e.field, "effective");
        let e = ExperimentConfig::parse(&DECAY.replace("mu-decay", "mu-decy")).unwrap_err();
        assert_eq!(e.field, "run.kind");
    }

    #[test]
    fn tiles_and_numbers() {
        assert_eq!(parse_number("1/3").unwrap(), 1.0 / 3.0);
        assert!(parse_number("1/0").is_err());
        let t = parse_tile("bellman-min 1 0 1 0 | 4 0 4 0").unwrap();
        assert_eq!(t.eval(&SymMatrix::identity(2)), -8.0);
        assert!(parse_tile("pucci+ 2 0").is_err());
        assert!(parse_tile("linear 1 0 1").is_err());
    }

    #[test]
    fn error_rate_resolution_is_checked() {
        let text = "[run]\nkind = error-rate\n[ensemble]\npreset = checkerboard\n[error]\nper_cell = 2\n";
        let e = ExperimentConfig::parse(text).unwrap_err();
        assert_eq!(e.field, "error.per_cell");
        let text = "[run]\nkind = error-rate\n[ensemble]\npreset = checkerboard\n[error]\neps = 2/5\n";
        assert_eq!(ExperimentConfig::parse(text).unwrap_err().field, "error.eps");
    }
}
