//! Run directories: atomic writes, the per-directory lock, the append-only
//! run log, and plots.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use sha2::{Digest, Sha256};

pub const LOCK_FILE: &str = ".homoglab.lock";
pub const RUN_LOG: &str = "runs.log";

/// Writes `contents` to `dir/name` through a temporary file and a rename, so
/// a partially written file is never visible under its final name.
pub fn write_atomic(dir: &Path, name: &str, contents: &[u8]) -> io::Result<()> {
    let tmp = dir.join(format!(".{name}.tmp"));
    {
        let mut f = File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, dir.join(name))
}

/// Exclusive lock on an output directory, released on drop.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> io::Result<DirLock> {
        let path = dir.join(LOCK_FILE);
        let mut f = OpenOptions::new().write(true).create_new(true).open(&path).map_err(|e| {
            if e.kind() == io::ErrorKind::AlreadyExists {
                io::Error::new(
                    e.kind(),
                    format!("{} exists: another run is using this directory", path.display()),
                )
            } else {
                e
            }
        })?;
        writeln!(f, "{}", std::process::id())?;
        Ok(DirLock { path })
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Hash of the config text and the effective seed.
pub fn run_id(config_text: &str, seed: u64) -> String {
    let mut h = Sha256::new();
    h.update(config_text.as_bytes());
    h.update(b"\0seed=");
    h.update(seed.to_le_bytes());
    hex::encode(&h.finalize()[..8])
}

pub fn unix_time() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RealizationStatus {
    Ok,
    Failed(String),
}

#[derive(Clone, Debug)]
pub struct RunRecord {
    pub id: String,
    pub kind: String,
    pub started: u64,
    pub finished: u64,
    /// Indexed by realization.
    pub realizations: Vec<RealizationStatus>,
    pub files: Vec<String>,
}

impl RunRecord {
    pub fn failed(&self) -> usize {
        self.realizations.iter().filter(|s| matches!(s, RealizationStatus::Failed(_))).count()
    }

    fn log_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\tok={}\tfailed={}\t{}\n",
            self.id,
            self.kind,
            self.started,
            self.finished,
            self.realizations.len() - self.failed(),
            self.failed(),
            self.files.join(",")
        )
    }
}

/// Whether `id` is already recorded in the directory's run log.
pub fn is_recorded(dir: &Path, id: &str) -> io::Result<bool> {
    match fs::read_to_string(dir.join(RUN_LOG)) {
        Ok(s) => Ok(s.lines().any(|l| l.split('\t').next() == Some(id))),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(false),
        Err(e) => Err(e),
    }
}

pub fn append_record(dir: &Path, rec: &RunRecord) -> io::Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(dir.join(RUN_LOG))?;
    f.write_all(rec.log_line().as_bytes())?;
    f.sync_all()
}

/// `index,status,message` for every realization.
pub fn status_csv(statuses: &[RealizationStatus]) -> String {
    let mut s = String::from("realization,status,message\n");
    for (i, st) in statuses.iter().enumerate() {
        match st {
            RealizationStatus::Ok => s.push_str(&format!("{i},ok,\n")),
            RealizationStatus::Failed(m) => {
                s.push_str(&format!("{i},failed,\"{}\"\n", m.replace('"', "'")))
            }
        }
    }
    s
}

/// Statuses from the failure list of a run over `n` realizations.
pub fn statuses(n: usize, failures: &[(u64, String)]) -> Vec<RealizationStatus> {
    let mut out = vec![RealizationStatus::Ok; n];
    for (i, m) in failures {
        out[*i as usize] = RealizationStatus::Failed(m.clone());
    }
    out
}

/// Polyline plot with a logarithmic y axis (and optionally x axis).
/// Nonpositive values are dropped.
pub fn log_plot_svg(title: &str, xlabel: &str, ylabel: &str, points: &[(f64, f64)], log_x: bool) -> String {
    let (w, h, pad) = (480.0, 320.0, 56.0);
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *y > 0.0 && (!log_x || *x > 0.0))
        .map(|&(x, y)| (if log_x { x.log10() } else { x }, y.log10()))
        .collect();
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        w / 2.0,
        escape(title)
    );
    if pts.is_empty() {
        s.push_str("<text x=\"240\" y=\"160\" text-anchor=\"middle\">no positive data</text>\n</svg>\n");
        return s;
    }
    let span = |v: &mut dyn Iterator<Item = f64>| {
        let (lo, hi) = v.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
        if hi - lo < 1e-12 {
            (lo - 0.5, hi + 0.5)
        } else {
            (lo, hi)
        }
    };
    let (x0, x1) = span(&mut pts.iter().map(|p| p.0));
    let (y0, y1) = span(&mut pts.iter().map(|p| p.1));
    let (y0, y1) = (y0.floor(), y1.ceil().max(y0.floor() + 1.0));
    let px = |x: f64| pad + (x - x0) / (x1 - x0) * (w - 2.0 * pad);
    let py = |y: f64| h - pad - (y - y0) / (y1 - y0) * (h - 2.0 * pad);
    s.push_str(&format!(
        "<line x1=\"{pad}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{}\" stroke=\"black\"/>\n",
        h - pad,
        w - pad,
        h - pad,
        h - pad
    ));
    let mut e = y0 as i64;
    while e as f64 <= y1 {
        let y = py(e as f64);
        s.push_str(&format!(
            "<line x1=\"{}\" y1=\"{y:.2}\" x2=\"{pad}\" y2=\"{y:.2}\" stroke=\"black\"/>\
             <text x=\"{}\" y=\"{:.2}\" text-anchor=\"end\" font-size=\"10\">1e{e}</text>\n",
            pad - 4.0,
            pad - 6.0,
            y + 3.0
        ));
        e += 1;
    }
    for &(x, _) in &pts {
        let label = if log_x { format!("{:.3}", 10f64.powf(x)) } else { format!("{x}") };
        s.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{}\" text-anchor=\"middle\" font-size=\"10\">{label}</text>\n",
            px(x),
            h - pad + 14.0
        ));
    }
    let poly: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
    s.push_str(&format!("<polyline points=\"{}\" fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\"/>\n", poly.join(" ")));
    for &(x, y) in &pts {
        s.push_str(&format!("<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"steelblue\"/>\n", px(x), py(y)));
    }
    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\">{}</text>\n\
         <text x=\"14\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 14 {})\">{}</text>\n</svg>\n",
        w / 2.0,
        h - 12.0,
        escape(xlabel),
        h / 2.0,
        h / 2.0,
        escape(ylabel)
    ));
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_and_lock() {
        let d = tempfile::tempdir().unwrap();
        write_atomic(d.path(), "a.csv", b"x\n").unwrap();
        assert_eq!(fs::read(d.path().join("a.csv")).unwrap(), b"x\n");
        assert!(!d.path().join(".a.csv.tmp").exists());
        let l = DirLock::acquire(d.path()).unwrap();
        assert!(DirLock::acquire(d.path()).is_err());
        drop(l);
        assert!(DirLock::acquire(d.path()).is_ok());
    }

    #[test]
    fn run_ids_depend_on_config_and_seed() {
        assert_eq!(run_id("a", 1), run_id("a", 1));
        assert_ne!(run_id("a", 1), run_id("a", 2));
        assert_ne!(run_id("a", 1), run_id("b", 1));
        assert_eq!(run_id("a", 1).len(), 16);
    }

    #[test]
    fn records_are_appended() {
        let d = tempfile::tempdir().unwrap();
        let rec = RunRecord {
            id: "abc".into(),
            kind: "mu".into(),
            started: 1,
            finished: 2,
            realizations: statuses(3, &[(1, "boom".into())]),
            files: vec!["mu.csv".into()],
        };
        assert!(!is_recorded(d.path(), "abc").unwrap());
        append_record(d.path(), &rec).unwrap();
        append_record(d.path(), &RunRecord { id: "def".into(), ..rec.clone() }).unwrap();
        assert!(is_recorded(d.path(), "abc").unwrap());
        assert_eq!(fs::read_to_string(d.path().join(RUN_LOG)).unwrap().lines().count(), 2);
        assert_eq!(rec.failed(), 1);
        assert!(status_csv(&rec.realizations).contains("1,failed,\"boom\""));
    }

    #[test]
    fn svg_is_well_formed() {
        let s = log_plot_svg("t", "m", "E", &[(0.0, 1.0), (1.0, 0.1), (2.0, 0.0)], false);
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert_eq!(s.matches("<circle").count(), 2);
    }
}
