//! Random environments: i.i.d. operator tiles on the integer lattice.
//!
//! Cell `z` carries the tile drawn from a generator keyed by
//! `(seed, index, z)`, so any window of a realization can be rebuilt on its
//! own. Distinct cells use independent keys, which gives range of dependence
//! zero at lattice distance one, and the law is invariant under integer shifts.

use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::SymMatrix;
use crate::operators::{BellmanMode, LinearOp, LocalOperator, OperatorField, TileLookup};
use crate::rng;
use crate::solver::Stencil;

const MAGIC: &str = "HOMOGLAB-REAL v1";

#[derive(Clone, Debug)]
pub struct TileEnsemble {
    tiles: Vec<LocalOperator>,
    probs: Vec<f64>,
    cumulative: Vec<f64>,
    lambda: f64,
    k0: f64,
}

impl TileEnsemble {
    /// Validates and builds an ensemble. Every tile must be elliptic with
    /// constant `lambda`, satisfy `|F(0)| <= k0`, and decompose on the
    /// monotone stencil.
    pub fn new(tiles: Vec<LocalOperator>, probs: Vec<f64>, lambda: f64, k0: f64) -> Result<Self> {
        if tiles.is_empty() {
            return Err(Error::Ensemble {
                field: "tiles",
                reason: "at least one tile required".into(),
            });
        }
        if probs.len() != tiles.len() {
            return Err(Error::Ensemble {
                field: "probs",
                reason: format!("{} probabilities for {} tiles", probs.len(), tiles.len()),
            });
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Ensemble {
                field: "probs",
                reason: "probabilities must be finite and nonnegative".into(),
            });
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Ensemble {
                field: "probs",
                reason: format!("probabilities sum to {total}, not 1"),
            });
        }
        if !(lambda.is_finite() && lambda >= 1.0) {
            return Err(Error::Ensemble {
                field: "lambda",
                reason: format!("ellipticity must be >= 1, got {lambda}"),
            });
        }
        if !(k0.is_finite() && k0 >= 0.0) {
            return Err(Error::Ensemble {
                field: "k0",
                reason: format!("bound must be finite and >= 0, got {k0}"),
            });
        }
        for (i, t) in tiles.iter().enumerate() {
            if matches!(t, LocalOperator::Pucci { .. }) {
                return Err(Error::Ensemble {
                    field: "tiles",
                    reason: format!("tile {i}: Pucci tiles have no fixed-stencil discretization"),
                });
            }
            if t.dim() != Some(2) {
                return Err(Error::Ensemble {
                    field: "tiles",
                    reason: format!("tile {i}: environments are two-dimensional"),
                });
            }
            t.check_ellipticity(lambda).map_err(|e| Error::Ensemble {
                field: "tiles",
                reason: format!("tile {i}: {e}"),
            })?;
            let f0 = t.eval(&SymMatrix::zeros(2));
            if f0.abs() > k0 * (1.0 + 1e-12) {
                return Err(Error::Ensemble {
                    field: "k0",
                    reason: format!("tile {i}: |F(0)| = {} exceeds K0 = {k0}", f0.abs()),
                });
            }
            for l in t.linear_parts() {
                if let Err(reason) = Stencil::decompose(&l.a) {
                    return Err(Error::Ensemble {
                        field: "tiles",
                        reason: format!("tile {i}: {reason}"),
                    });
                }
            }
        }
        let mut acc = 0.0;
        let cumulative = probs
            .iter()
            .map(|p| {
                acc += p / total;
                acc
            })
            .collect();
        Ok(TileEnsemble {
            tiles,
            probs,
            cumulative,
            lambda,
            k0,
        })
    }

    /// Like [`TileEnsemble::new`] with the smallest admissible Λ and K₀.
    pub fn with_natural_constants(tiles: Vec<LocalOperator>, probs: Vec<f64>) -> Result<Self> {
        let mut lambda: f64 = 1.0;
        let mut k0: f64 = 0.0;
        for (i, t) in tiles.iter().enumerate() {
            match t.natural_ellipticity() {
                Some(l) => lambda = lambda.max(l),
                None => {
                    return Err(Error::Ensemble {
                        field: "tiles",
                        reason: format!("tile {i}: a linear control has an eigenvalue below 1"),
                    })
                }
            }
            if let Some(d) = t.dim() {
                k0 = k0.max(t.eval(&SymMatrix::zeros(d)).abs());
            }
        }
        Self::new(tiles, probs, lambda, k0)
    }

    /// A deterministic environment: one tile everywhere.
    pub fn constant(tile: LocalOperator) -> Result<Self> {
        Self::with_natural_constants(vec![tile], vec![1.0])
    }

    /// `{-tr(A), -4 tr(A)}` with a fair coin.
    pub fn checkerboard() -> Self {
        Self::two_scalars(0.0)
    }

    /// `{-tr(A) + 1, -4 tr(A) + 1}` with a fair coin.
    pub fn forcing_checkerboard() -> Self {
        Self::two_scalars(1.0)
    }

    fn two_scalars(c: f64) -> Self {
        Self::with_natural_constants(
            vec![LocalOperator::scalar(2, 1.0, c), LocalOperator::scalar(2, 4.0, c)],
            vec![0.5, 0.5],
        )
        .expect("built-in ensemble is valid")
    }

    /// `{-tr(A), min(-tr(A), -4 tr(A))}` with a fair coin.
    pub fn bellman_checkerboard() -> Self {
        let lin = |s: f64| LinearOp::new(SymMatrix::scalar(2, s), 0.0);
        let bell = LocalOperator::bellman(vec![lin(1.0), lin(4.0)], BellmanMode::Min).unwrap();
        Self::with_natural_constants(vec![LocalOperator::Linear(lin(1.0)), bell], vec![0.5, 0.5])
            .expect("built-in ensemble is valid")
    }

    pub fn tiles(&self) -> &[LocalOperator] {
        &self.tiles
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn k0(&self) -> f64 {
        self.k0
    }

    pub fn is_deterministic(&self) -> bool {
        self.probs.iter().filter(|p| **p > 0.0).count() <= 1
    }

    /// Every tile is a single linear control.
    pub fn is_linear(&self) -> bool {
        self.tiles.iter().all(|t| matches!(t, LocalOperator::Linear(_)))
    }

    /// Tile drawn for lattice cell `cell` of realization `(seed, index)`.
    pub fn draw(&self, seed: u64, index: u64, cell: [i64; 2]) -> usize {
        let u = rng::to_unit(rng::keyed(&[seed, index, cell[0] as u64, cell[1] as u64]));
        self.cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.tiles.len() - 1)
    }
}

/// An integer box of lattice cells.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub lo: [i64; 2],
    pub size: [usize; 2],
}

impl Window {
    pub fn new(lo: [i64; 2], size: [usize; 2]) -> Self {
        Window { lo, size }
    }

    /// Cells `-r..=r` in each axis.
    pub fn centered(r: usize) -> Self {
        Window {
            lo: [-(r as i64), -(r as i64)],
            size: [2 * r + 1, 2 * r + 1],
        }
    }

    pub fn len(&self) -> usize {
        self.size[0] * self.size[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, c: [i64; 2]) -> bool {
        (0..2).all(|a| c[a] >= self.lo[a] && c[a] < self.lo[a] + self.size[a] as i64)
    }

    /// Smallest window whose cells cover the closed box `[lo, hi]` (in
    /// microscopic coordinates), with one cell of margin.
    pub fn covering(lo: [f64; 2], hi: [f64; 2]) -> Self {
        let a = [(lo[0] + 0.5).floor() as i64 - 1, (lo[1] + 0.5).floor() as i64 - 1];
        let b = [(hi[0] + 0.5).floor() as i64 + 1, (hi[1] + 0.5).floor() as i64 + 1];
        Window {
            lo: a,
            size: [(b[0] - a[0] + 1) as usize, (b[1] - a[1] + 1) as usize],
        }
    }
}

#[derive(Clone, Debug)]
pub struct Realization {
    ensemble: Arc<TileEnsemble>,
    window: Window,
    cells: Vec<u32>,
    seed: u64,
    index: u64,
}

pub fn sample_realization(
    ensemble: &Arc<TileEnsemble>,
    window: Window,
    seed: u64,
    index: u64,
) -> Result<Realization> {
    if window.is_empty() {
        return Err(Error::InvalidInput("empty realization window".into()));
    }
    let mut cells = Vec::with_capacity(window.len());
    for j in 0..window.size[1] {
        for i in 0..window.size[0] {
            let c = [window.lo[0] + i as i64, window.lo[1] + j as i64];
            cells.push(ensemble.draw(seed, index, c) as u32);
        }
    }
    Ok(Realization {
        ensemble: ensemble.clone(),
        window,
        cells,
        seed,
        index,
    })
}

impl Realization {
    pub fn ensemble(&self) -> &Arc<TileEnsemble> {
        &self.ensemble
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    /// Row-major tile indices (x fastest).
    pub fn cells(&self) -> &[u32] {
        &self.cells
    }

    pub fn tile_at(&self, c: [i64; 2]) -> Option<usize> {
        if !self.window.contains(c) {
            return None;
        }
        let i = (c[0] - self.window.lo[0]) as usize;
        let j = (c[1] - self.window.lo[1]) as usize;
        Some(self.cells[j * self.window.size[0] + i] as usize)
    }

    /// The environment seen from `z`: cell `c` of the result holds cell
    /// `c + z` of `self`.
    pub fn translated(&self, z: [i64; 2]) -> Realization {
        Realization {
            window: Window {
                lo: [self.window.lo[0] - z[0], self.window.lo[1] - z[1]],
                size: self.window.size,
            },
            ..self.clone()
        }
    }

    /// Builds a realization from explicit cells (e.g. a hand-made pattern).
    pub fn from_cells(
        ensemble: &Arc<TileEnsemble>,
        window: Window,
        cells: Vec<u32>,
    ) -> Result<Realization> {
        if cells.len() != window.len() {
            return Err(Error::InvalidInput(format!(
                "{} cells for a window of {}",
                cells.len(),
                window.len()
            )));
        }
        if let Some(bad) = cells.iter().find(|&&c| c as usize >= ensemble.tiles.len()) {
            return Err(Error::InvalidInput(format!("tile index {bad} out of range")));
        }
        Ok(Realization {
            ensemble: ensemble.clone(),
            window,
            cells,
            seed: 0,
            index: 0,
        })
    }

    /// Tiles within `w`, or an error if `w` leaves the window.
    pub fn restricted(&self, w: Window) -> Result<Realization> {
        let mut cells = Vec::with_capacity(w.len());
        for j in 0..w.size[1] {
            for i in 0..w.size[0] {
                let c = [w.lo[0] + i as i64, w.lo[1] + j as i64];
                let t = self.tile_at(c).ok_or(Error::OutOfWindow {
                    x: c[0] as f64,
                    y: c[1] as f64,
                })?;
                cells.push(t as u32);
            }
        }
        Ok(Realization {
            window: w,
            cells,
            ..self.clone()
        })
    }
}

impl TileLookup for Realization {
    fn tile_index(&self, cell: [i64; 2]) -> Option<usize> {
        self.tile_at(cell)
    }

    fn tiles(&self) -> &[LocalOperator] {
        &self.ensemble.tiles
    }

    fn lambda(&self) -> f64 {
        self.ensemble.lambda
    }

    fn cell_window(&self) -> Option<([i64; 2], [usize; 2])> {
        Some((self.window.lo, self.window.size))
    }
}

/// The piecewise-constant field of a realization.
pub fn field_of(realization: &Realization) -> OperatorField {
    OperatorField::tiled(Arc::new(realization.clone()))
}

pub fn save_realization(r: &Realization, path: &Path) -> Result<()> {
    let mut body = String::new();
    body.push_str(MAGIC);
    body.push('\n');
    body.push_str(&format!(
        "2 {} {} {} {} {} {}\n",
        r.seed, r.index, r.window.lo[0], r.window.lo[1], r.window.size[0], r.window.size[1]
    ));
    for row in r.cells.chunks(r.window.size[0]) {
        let line: Vec<String> = row.iter().map(|c| c.to_string()).collect();
        body.push_str(&line.join(" "));
        body.push('\n');
    }
    let crc = crc32fast::hash(body.as_bytes());
    body.push_str(&format!("CRC32 {crc:08x}\n"));
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(body.as_bytes())?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)?;
    Ok(())
}

pub fn load_realization(path: &Path, ensemble: &Arc<TileEnsemble>) -> Result<Realization> {
    let text = fs::read_to_string(path)?;
    parse_realization(&text, ensemble)
}

fn parse_realization(text: &str, ensemble: &Arc<TileEnsemble>) -> Result<Realization> {
    let all: Vec<&str> = text.split_inclusive('\n').collect();
    let mut pos = 0usize;
    let mut consumed = 0usize;
    let mut next = |what: &str| -> Result<(&str, usize)> {
        let l = *all
            .get(pos)
            .ok_or_else(|| Error::Length(format!("missing {what}")))?;
        pos += 1;
        consumed += l.len();
        Ok((l, consumed))
    };
    let (magic, _) = next("magic line")?;
    if magic.trim_end() != MAGIC {
        return Err(Error::Format(format!("bad magic line {:?}", magic.trim_end())));
    }
    let header: Vec<&str> = next("header")?.0.split_whitespace().collect();
    if header.len() != 7 {
        return Err(Error::Format("header needs `d seed index x0 y0 nx ny`".into()));
    }
    let bad = |f: &str| Error::Format(format!("header field `{f}` is not an integer"));
    if header[0] != "2" {
        return Err(Error::Format(format!("unsupported dimension {}", header[0])));
    }
    let seed: u64 = header[1].parse().map_err(|_| bad("seed"))?;
    let index: u64 = header[2].parse().map_err(|_| bad("index"))?;
    let x0: i64 = header[3].parse().map_err(|_| bad("x0"))?;
    let y0: i64 = header[4].parse().map_err(|_| bad("y0"))?;
    let nx: usize = header[5].parse().map_err(|_| bad("nx"))?;
    let ny: usize = header[6].parse().map_err(|_| bad("ny"))?;
    let mut cells = Vec::with_capacity(nx * ny);
    let mut covered = 0;
    for row in 0..ny {
        let (line, upto) = next(&format!("row {row}"))?;
        covered = upto;
        if line.starts_with("CRC32") {
            return Err(Error::Length(format!("only {row} of {ny} rows present")));
        }
        let before = cells.len();
        for tok in line.split_whitespace() {
            let t: u32 = tok
                .parse()
                .map_err(|_| Error::Format(format!("bad tile index {tok:?}")))?;
            if t as usize >= ensemble.tiles.len() {
                return Err(Error::Format(format!("tile index {t} out of range")));
            }
            cells.push(t);
        }
        if cells.len() - before != nx {
            return Err(Error::Length(format!(
                "row {row} has {} entries, expected {nx}",
                cells.len() - before
            )));
        }
    }
    if ny == 0 {
        return Err(Error::Format("empty window".into()));
    }
    let (crc_line, _) = next("checksum line")?;
    let stored = crc_line
        .trim_end()
        .strip_prefix("CRC32 ")
        .and_then(|h| u32::from_str_radix(h.trim(), 16).ok())
        .ok_or_else(|| Error::Format("bad checksum line".into()))?;
    let computed = crc32fast::hash(&text.as_bytes()[..covered]);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    Ok(Realization {
        ensemble: ensemble.clone(),
        window: Window::new([x0, y0], [nx, ny]),
        cells,
        seed,
        index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn board() -> Arc<TileEnsemble> {
        Arc::new(TileEnsemble::checkerboard())
    }

    #[test]
    fn sampling_is_deterministic() {
        let e = board();
        let w = Window::centered(6);
        let a = sample_realization(&e, w, 42, 3).unwrap();
        let b = sample_realization(&e, w, 42, 3).unwrap();
        assert_eq!(a.cells(), b.cells());
        let c = sample_realization(&e, w, 42, 4).unwrap();
        assert_ne!(a.cells(), c.cells());
    }

    #[test]
    fn sub_windows_agree_with_the_full_window() {
        let e = board();
        let big = sample_realization(&e, Window::centered(8), 9, 0).unwrap();
        let small = sample_realization(&e, Window::new([2, -3], [4, 5]), 9, 0).unwrap();
        for j in -3..2 {
            for i in 2..6 {
                assert_eq!(big.tile_at([i, j]), small.tile_at([i, j]));
            }
        }
    }

    #[test]
    fn frequencies_within_binomial_band() {
        let e = Arc::new(
            TileEnsemble::with_natural_constants(
                vec![LocalOperator::scalar(2, 1.0, 0.0), LocalOperator::scalar(2, 2.0, 0.0)],
                vec![0.3, 0.7],
            )
            .unwrap(),
        );
        let r = sample_realization(&e, Window::new([0, 0], [100, 100]), 1, 0).unwrap();
        let n = r.cells().len() as f64;
        let k = r.cells().iter().filter(|&&c| c == 0).count() as f64;
        let sd = (0.3 * 0.7 / n).sqrt();
        assert!((k / n - 0.3).abs() < 3.0 * sd, "{}", k / n);
    }

    #[test]
    fn distant_cells_uncorrelated() {
        let e = board();
        let n = 1000;
        let (mut sa, mut sb, mut sab) = (0.0, 0.0, 0.0);
        for idx in 0..n {
            let a = (e.draw(5, idx, [0, 0]) == 0) as u8 as f64;
            let b = (e.draw(5, idx, [5, 5]) == 0) as u8 as f64;
            sa += a;
            sb += b;
            sab += a * b;
        }
        let n = n as f64;
        let cov = sab / n - sa * sb / (n * n);
        let va = sa / n * (1.0 - sa / n);
        let vb = sb / n * (1.0 - sb / n);
        let rho = cov / (va * vb).sqrt();
        assert!(rho.abs() < 0.1, "{rho}");
    }

    #[test]
    fn field_values_and_translation() {
        let e = board();
        let r = sample_realization(&e, Window::centered(5), 7, 0).unwrap();
        let f = field_of(&r);
        let i = SymMatrix::identity(2);
        let mut seen = [false; 2];
        for j in -4..=4 {
            for k in -4..=4 {
                let v = f.eval(&i, [k as f64 + 0.2, j as f64 - 0.1]).unwrap();
                assert!(v == -2.0 || v == -8.0);
                seen[(v == -8.0) as usize] = true;
            }
        }
        assert!(seen[0] && seen[1]);
        let z = [2, -1];
        let g = field_of(&r.translated(z));
        for x in [[0.3, 0.1], [-1.2, 2.4], [1.0, 1.0]] {
            let shifted = [x[0] + z[0] as f64, x[1] + z[1] as f64];
            assert_eq!(g.eval(&i, x).unwrap(), f.eval(&i, shifted).unwrap());
        }
        assert!(matches!(f.eval(&i, [9.0, 0.0]), Err(Error::OutOfWindow { .. })));
    }

    #[test]
    fn single_tile_field_is_constant() {
        let e = Arc::new(TileEnsemble::constant(LocalOperator::scalar(2, 2.0, 1.5)).unwrap());
        let r = sample_realization(&e, Window::centered(3), 1, 1).unwrap();
        let f = field_of(&r);
        let a = SymMatrix::new2(0.3, 0.1, -0.4);
        for x in [[0.0, 0.0], [2.9, -2.9], [-1.5, 1.49]] {
            assert_eq!(f.eval(&a, x).unwrap(), -2.0 * a.trace() + 1.5);
        }
    }

    #[test]
    fn validation_names_the_field() {
        let t = vec![LocalOperator::scalar(2, 1.0, 0.0), LocalOperator::scalar(2, 4.0, 0.0)];
        match TileEnsemble::with_natural_constants(t.clone(), vec![0.5, 0.6]) {
            Err(Error::Ensemble { field, .. }) => assert_eq!(field, "probs"),
            other => panic!("{other:?}"),
        }
        let skew = LocalOperator::linear(SymMatrix::new2(1.0, 0.9, 3.0), 0.0);
        assert!(matches!(
            TileEnsemble::with_natural_constants(vec![skew], vec![1.0]),
            Err(Error::Ensemble { field: "tiles", .. })
        ));
        assert!(matches!(
            TileEnsemble::new(t, vec![0.5, 0.5], 2.0, 0.0),
            Err(Error::Ensemble { field: "tiles", .. })
        ));
    }

    #[test]
    fn file_round_trip_and_corruption() {
        let e = board();
        let r = sample_realization(&e, Window::new([-2, 1], [5, 3]), 77, 2).unwrap();
        let dir = std::env::temp_dir().join(format!("homoglab-real-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let p = dir.join("r.txt");
        save_realization(&r, &p).unwrap();
        let back = load_realization(&p, &e).unwrap();
        assert_eq!(back.cells(), r.cells());
        assert_eq!(back.window(), r.window());
        assert_eq!((back.seed(), back.index()), (77, 2));

        let text = fs::read_to_string(&p).unwrap();
        let wrong = text.replacen("HOMOGLAB-REAL", "HOMOGLAB-GRID", 1);
        assert!(matches!(parse_realization(&wrong, &e), Err(Error::Format(_))));

        let cut: String = text.lines().take(3).map(|l| format!("{l}\n")).collect();
        assert!(matches!(parse_realization(&cut, &e), Err(Error::Length(_))));

        let mut lines: Vec<&str> = text.lines().collect();
        let flipped = if lines[2].starts_with('0') {
            lines[2].replacen('0', "1", 1)
        } else {
            lines[2].replacen('1', "0", 1)
        };
        lines[2] = &flipped;
        let tampered = lines.join("\n") + "\n";
        assert!(matches!(parse_realization(&tampered, &e), Err(Error::Checksum { .. })));
        fs::remove_dir_all(dir).ok();
    }
}
