//! Triadic cubes and grid functions on squares.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &str = "HOMOGLAB-GRID v1";

#[inline]
pub fn pow3(m: i32) -> f64 {
    3f64.powi(m)
}

/// The cube `3^m k + (-3^m/2, 3^m/2)^2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TriadicCube {
    pub m: i32,
    pub k: [i64; 2],
}

impl TriadicCube {
    pub fn new(m: i32, k: [i64; 2]) -> Self {
        TriadicCube { m, k }
    }

    /// `Q_m` centered at the origin.
    pub fn origin(m: i32) -> Self {
        TriadicCube { m, k: [0, 0] }
    }

    pub fn side(&self) -> f64 {
        pow3(self.m)
    }

    pub fn volume(&self) -> f64 {
        self.side() * self.side()
    }

    pub fn center(&self) -> [f64; 2] {
        let s = self.side();
        [s * self.k[0] as f64, s * self.k[1] as f64]
    }

    pub fn square(&self) -> Square {
        let c = self.center();
        let s = self.side();
        Square::new([c[0] - s / 2.0, c[1] - s / 2.0], s)
    }

    /// Half-open membership `[lo, hi)` per axis.
    pub fn contains(&self, x: [f64; 2]) -> bool {
        cube_of(self.m, x) == *self
    }

    /// The `9^n` level-`(m - n)` cubes tiling this one, row-major.
    pub fn subcubes(&self, n: u32) -> Vec<TriadicCube> {
        let f = 3i64.pow(n);
        let r = (f - 1) / 2;
        let mut out = Vec::with_capacity((f * f) as usize);
        for j in -r..=r {
            for i in -r..=r {
                out.push(TriadicCube {
                    m: self.m - n as i32,
                    k: [f * self.k[0] + i, f * self.k[1] + j],
                });
            }
        }
        out
    }

    pub fn parent(&self) -> TriadicCube {
        let k = [
            (self.k[0] as f64 / 3.0 + 0.5).floor() as i64,
            (self.k[1] as f64 / 3.0 + 0.5).floor() as i64,
        ];
        TriadicCube { m: self.m + 1, k }
    }
}

/// The level-`m` triadic cube containing `x`: `3^m ⌊3^{-m} x + 1/2⌋ + Q_m`.
pub fn cube_of(m: i32, x: [f64; 2]) -> TriadicCube {
    let s = pow3(-m);
    TriadicCube {
        m,
        k: [(s * x[0] + 0.5).floor() as i64, (s * x[1] + 0.5).floor() as i64],
    }
}

/// An axis-aligned closed square `[x0, x0 + side] × [y0, y0 + side]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Square {
    pub lo: [f64; 2],
    pub side: f64,
}

impl Square {
    pub fn new(lo: [f64; 2], side: f64) -> Self {
        Square { lo, side }
    }

    pub fn hi(&self) -> [f64; 2] {
        [self.lo[0] + self.side, self.lo[1] + self.side]
    }

    pub fn area(&self) -> f64 {
        self.side * self.side
    }

    pub fn center(&self) -> [f64; 2] {
        [self.lo[0] + self.side / 2.0, self.lo[1] + self.side / 2.0]
    }
}

/// Values on the `n × n` grid of a square, `h = side / (n - 1)`, stored
/// row-major with `x` fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    square: Square,
    n: usize,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(square: Square, n: usize, values: Vec<f64>) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidInput(format!("grid needs n >= 2, got {n}")));
        }
        if values.len() != n * n {
            return Err(Error::InvalidInput(format!(
                "{} values for an {n}x{n} grid",
                values.len()
            )));
        }
        if !(square.side > 0.0 && square.side.is_finite()) {
            return Err(Error::InvalidInput("square side must be positive".into()));
        }
        Ok(GridFunction { square, n, values })
    }

    pub fn zeros(square: Square, n: usize) -> Self {
        Self::from_fn(square, n, |_| 0.0)
    }

    pub fn from_fn(square: Square, n: usize, f: impl Fn([f64; 2]) -> f64) -> Self {
        assert!(n >= 2, "grid needs n >= 2");
        let h = square.side / (n - 1) as f64;
        let mut values = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                values.push(f([square.lo[0] + i as f64 * h, square.lo[1] + j as f64 * h]));
            }
        }
        GridFunction { square, n, values }
    }

    pub fn on_cube(cube: &TriadicCube, n: usize, f: impl Fn([f64; 2]) -> f64) -> Self {
        Self::from_fn(cube.square(), n, f)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.square.side / (self.n - 1) as f64
    }

    pub fn square(&self) -> Square {
        self.square
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.n + i
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.n + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let n = self.n;
        self.values[j * n + i] = v;
    }

    #[inline]
    pub fn node(&self, i: usize, j: usize) -> [f64; 2] {
        let h = self.h();
        [self.square.lo[0] + i as f64 * h, self.square.lo[1] + j as f64 * h]
    }

    #[inline]
    pub fn is_boundary(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i + 1 == self.n || j + 1 == self.n
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn([f64; 2], f64) -> f64) -> GridFunction {
        let mut out = self.clone();
        for j in 0..self.n {
            for i in 0..self.n {
                let k = self.idx(i, j);
                out.values[k] = f(self.node(i, j), self.values[k]);
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &GridFunction) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn boundary_min(&self) -> f64 {
        let mut m = f64::INFINITY;
        for j in 0..self.n {
            for i in 0..self.n {
                if self.is_boundary(i, j) {
                    m = m.min(self.get(i, j));
                }
            }
        }
        m
    }

    /// Grid offset of `x` in units of `h`, if `x` is (numerically) a node.
    fn aligned_offset(&self, x: f64, axis: usize) -> Option<usize> {
        let t = (x - self.square.lo[axis]) / self.h();
        let r = t.round();
        ((t - r).abs() < 1e-7 && r >= 0.0 && (r as usize) < self.n).then_some(r as usize)
    }

    /// Copy of the values on a sub-square whose corners are grid nodes.
    pub fn restrict_to(&self, sq: Square) -> Result<GridFunction> {
        let mis = || {
            Error::Misaligned(format!(
                "square at ({}, {}) of side {} is not on the grid of spacing {}",
                sq.lo[0],
                sq.lo[1],
                sq.side,
                self.h()
            ))
        };
        let i0 = self.aligned_offset(sq.lo[0], 0).ok_or_else(mis)?;
        let j0 = self.aligned_offset(sq.lo[1], 1).ok_or_else(mis)?;
        let i1 = self.aligned_offset(sq.lo[0] + sq.side, 0).ok_or_else(mis)?;
        let j1 = self.aligned_offset(sq.lo[1] + sq.side, 1).ok_or_else(mis)?;
        if i1 <= i0 || i1 - i0 != j1 - j0 {
            return Err(mis());
        }
        let m = i1 - i0 + 1;
        let mut values = Vec::with_capacity(m * m);
        for j in 0..m {
            for i in 0..m {
                values.push(self.get(i0 + i, j0 + j));
            }
        }
        GridFunction::new(sq, m, values)
    }

    /// Restriction to a child triadic cube; needs `n - 1` divisible by the
    /// refinement factor.
    pub fn restrict(&self, child: &TriadicCube) -> Result<GridFunction> {
        let ratio = self.square.side / child.side();
        let r = ratio.round();
        if (ratio - r).abs() > 1e-9 || r < 1.0 || (self.n - 1) % (r as usize) != 0 {
            return Err(Error::Misaligned(format!(
                "n - 1 = {} is not divisible by the refinement factor {}",
                self.n - 1,
                ratio
            )));
        }
        self.restrict_to(child.square())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = String::with_capacity(self.values.len() * 24 + 64);
        s.push_str(MAGIC);
        s.push('\n');
        s.push_str(&format!(
            "2 {} {} {} {}\n",
            self.n, self.square.lo[0], self.square.lo[1], self.square.side
        ));
        for v in &self.values {
            s.push_str(&format!("{v}\n"));
        }
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(s.as_bytes())?;
            f.sync_all()?;
        }
        fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<GridFunction> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<GridFunction> {
        let mut lines = text.lines();
        match lines.next() {
            Some(l) if l.trim_end() == MAGIC => {}
            Some(l) => return Err(Error::Format(format!("bad magic line {l:?}"))),
            None => return Err(Error::Length("empty grid file".into())),
        }
        let header: Vec<&str> = lines
            .next()
            .ok_or_else(|| Error::Length("missing header".into()))?
            .split_whitespace()
            .collect();
        if header.len() != 5 || header[0] != "2" {
            return Err(Error::Format("header must be `2 n x0 y0 side`".into()));
        }
        let n: usize = header[1]
            .parse()
            .map_err(|_| Error::Format("bad n".into()))?;
        let num = |s: &str, f: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Format(format!("bad {f}")))
        };
        let x0 = num(header[2], "x0")?;
        let y0 = num(header[3], "y0")?;
        let side = num(header[4], "side")?;
        let mut values = Vec::with_capacity(n * n);
        for l in lines {
            let l = l.trim();
            if l.is_empty() {
                continue;
            }
            values.push(num(l, "value")?);
        }
        if values.len() != n * n {
            return Err(Error::Length(format!(
                "{} values, expected {}",
                values.len(),
                n * n
            )));
        }
        GridFunction::new(Square::new([x0, y0], side), n, values)
    }
}
