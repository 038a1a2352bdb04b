//! Small dense symmetric matrices.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

/// Tolerance used by the cyclic Jacobi eigen-solver.
pub const JACOBI_TOL: f64 = 1e-12;

/// A real symmetric `d x d` matrix stored as its upper triangle (row major).
#[derive(Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    upper: Vec<f64>,
}

/// Eigen-decomposition `A = V diag(values) V^T`; `vectors[k]` is the k-th eigenvector.
#[derive(Clone, Debug)]
pub struct Eigen {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
}

#[inline]
fn tri_index(dim: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    // rows 0..i contribute dim + (dim-1) + ... entries
    i * dim - i * (i + 1) / 2 + j
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "matrix dimension must be positive");
        SymMatrix {
            dim,
            upper: vec![0.0; dim * (dim + 1) / 2],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::scalar(dim, 1.0)
    }

    pub fn scalar(dim: usize, s: f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.set(i, i, s);
        }
        m
    }

    pub fn diag(entries: &[f64]) -> Self {
        let mut m = Self::zeros(entries.len());
        for (i, &e) in entries.iter().enumerate() {
            m.set(i, i, e);
        }
        m
    }

    /// 2x2 matrix `[[a11, a12], [a12, a22]]`.
    pub fn new2(a11: f64, a12: f64, a22: f64) -> Self {
        SymMatrix {
            dim: 2,
            upper: vec![a11, a12, a22],
        }
    }

    /// Builds from full rows; returns `None` when the rows are not square or not symmetric.
    pub fn from_rows(rows: &[Vec<f64>]) -> Option<Self> {
        let dim = rows.len();
        if dim == 0 || rows.iter().any(|r| r.len() != dim) {
            return None;
        }
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                if rows[i][j] != rows[j][i] {
                    return None;
                }
                m.set(i, j, rows[i][j]);
            }
        }
        Some(m)
    }

    /// `v v^T`
    pub fn outer(v: &[f64]) -> Self {
        let mut m = Self::zeros(v.len());
        for i in 0..v.len() {
            for j in i..v.len() {
                m.set(i, j, v[i] * v[j]);
            }
        }
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.upper[tri_index(self.dim, i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = tri_index(self.dim, i, j);
        self.upper[k] = v;
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn is_finite(&self) -> bool {
        self.upper.iter().all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.upper.iter().all(|&v| v == 0.0)
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    /// Frobenius inner product `tr(A B)`.
    pub fn dot(&self, other: &SymMatrix) -> f64 {
        assert_eq!(self.dim, other.dim);
        let mut s = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                s += self.get(i, j) * other.get(j, i);
            }
        }
        s
    }

    pub fn scale(&self, s: f64) -> SymMatrix {
        SymMatrix {
            dim: self.dim,
            upper: self.upper.iter().map(|v| v * s).collect(),
        }
    }

    /// Matrix-vector product.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.get(i, j) * v[j]).sum())
            .collect()
    }

    /// Quadratic form `v^T A v`.
    pub fn quad(&self, v: &[f64]) -> f64 {
        self.apply(v).iter().zip(v).map(|(a, b)| a * b).sum()
    }

    pub fn max_abs_entry(&self) -> f64 {
        self.upper.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Eigen-decomposition: closed form for d = 2, cyclic Jacobi otherwise.
    pub fn eigen(&self) -> Eigen {
        match self.dim {
            1 => Eigen {
                values: vec![self.get(0, 0)],
                vectors: vec![vec![1.0]],
            },
            2 => self.eigen2(),
            _ => self.jacobi(),
        }
    }

    fn eigen2(&self) -> Eigen {
        let (a, b, c) = (self.get(0, 0), self.get(0, 1), self.get(1, 1));
        if b == 0.0 {
            return Eigen {
                values: vec![a, c],
                vectors: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            };
        }
        let mean = 0.5 * (a + c);
        let half_diff = 0.5 * (a - c);
        let r = half_diff.hypot(b);
        let det = a * c - b * b;
        // the smaller-magnitude eigenvalue comes from det / (larger) to avoid cancellation
        let (l1, l2) = if mean >= 0.0 {
            let l1 = mean + r;
            (l1, det / l1)
        } else {
            let l2 = mean - r;
            (det / l2, l2)
        };
        // eigenvector for l1: (b, l1 - a) or (l1 - c, b), pick the better conditioned
        let v = if (l1 - a).abs() > (l1 - c).abs() {
            [b, l1 - a]
        } else {
            [l1 - c, b]
        };
        let n = v[0].hypot(v[1]);
        let v1 = vec![v[0] / n, v[1] / n];
        let v2 = vec![-v1[1], v1[0]];
        Eigen {
            values: vec![l1, l2],
            vectors: vec![v1, v2],
        }
    }

    fn jacobi(&self) -> Eigen {
        let n = self.dim;
        let mut a: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| self.get(i, j)).collect())
            .collect();
        let mut v: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        let scale = self.max_abs_entry().max(f64::MIN_POSITIVE);
        for _sweep in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| a[i][j] * a[i][j])
                .sum::<f64>()
                .sqrt();
            if off <= JACOBI_TOL * scale {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    if a[p][q] == 0.0 {
                        continue;
                    }
                    let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[k][p];
                        let akq = a[k][q];
                        a[k][p] = c * akp - s * akq;
                        a[k][q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[p][k];
                        let aqk = a[q][k];
                        a[p][k] = c * apk - s * aqk;
                        a[q][k] = s * apk + c * aqk;
                    }
                    for row in v.iter_mut() {
                        let vkp = row[p];
                        let vkq = row[q];
                        row[p] = c * vkp - s * vkq;
                        row[q] = s * vkp + c * vkq;
                    }
                }
            }
        }
        Eigen {
            values: (0..n).map(|i| a[i][i]).collect(),
            vectors: (0..n).map(|k| (0..n).map(|i| v[i][k]).collect()).collect(),
        }
    }

    /// The unique split `A = A_+ - A_-` with `A_+ A_- = 0` and `A_± ⪰ 0`.
    pub fn pos_neg_parts(&self) -> (SymMatrix, SymMatrix) {
        let e = self.eigen();
        let mut pos = SymMatrix::zeros(self.dim);
        let mut neg = SymMatrix::zeros(self.dim);
        for (lam, vec) in e.values.iter().zip(&e.vectors) {
            if *lam > 0.0 {
                pos = &pos + &SymMatrix::outer(vec).scale(*lam);
            } else if *lam < 0.0 {
                neg = &neg + &SymMatrix::outer(vec).scale(-*lam);
            }
        }
        (pos, neg)
    }

    /// `(tr A_+, tr A_-)`, i.e. sums of positive and (negated) negative eigenvalues.
    pub fn trace_parts(&self) -> (f64, f64) {
        let e = self.eigen();
        e.values.iter().fold((0.0, 0.0), |(p, n), &l| {
            if l > 0.0 {
                (p + l, n)
            } else {
                (p, n - l)
            }
        })
    }

    /// Spectral norm `|A|`: square root of the largest eigenvalue of `A^2`.
    pub fn norm(&self) -> f64 {
        self.eigen().values.iter().fold(0.0, |m, l| m.max(l.abs()))
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigen().values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigen().values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn det(&self) -> f64 {
        match self.dim {
            1 => self.get(0, 0),
            2 => self.get(0, 0) * self.get(1, 1) - self.get(0, 1) * self.get(0, 1),
            _ => self.eigen().values.iter().product(),
        }
    }

    /// `f(A) = V diag(f(λ)) V^T`.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let e = self.eigen();
        let mut out = SymMatrix::zeros(self.dim);
        for (lam, vec) in e.values.iter().zip(&e.vectors) {
            out = &out + &SymMatrix::outer(vec).scale(f(*lam));
        }
        out
    }

    /// Inverse of a positive definite (or otherwise invertible) matrix.
    pub fn inverse(&self) -> Option<SymMatrix> {
        if self.dim == 2 {
            let det = self.det();
            if det == 0.0 || !det.is_finite() {
                return None;
            }
            return Some(SymMatrix::new2(
                self.get(1, 1) / det,
                -self.get(0, 1) / det,
                self.get(0, 0) / det,
            ));
        }
        let e = self.eigen();
        if e.values.iter().any(|&l| l == 0.0) {
            return None;
        }
        Some(self.map_spectrum(|l| 1.0 / l))
    }
}

impl fmt::Debug for SymMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for i in 0..self.dim {
            if i > 0 {
                write!(f, "; ")?;
            }
            for j in 0..self.dim {
                if j > 0 {
                    write!(f, " ")?;
                }
                write!(f, "{}", self.get(i, j))?;
            }
        }
        write!(f, "]")
    }
}

impl Add for &SymMatrix {
    type Output = SymMatrix;
    fn add(self, rhs: &SymMatrix) -> SymMatrix {
        assert_eq!(self.dim, rhs.dim);
        SymMatrix {
            dim: self.dim,
            upper: self.upper.iter().zip(&rhs.upper).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &SymMatrix {
    type Output = SymMatrix;
    fn sub(self, rhs: &SymMatrix) -> SymMatrix {
        assert_eq!(self.dim, rhs.dim);
        SymMatrix {
            dim: self.dim,
            upper: self.upper.iter().zip(&rhs.upper).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Neg for &SymMatrix {
    type Output = SymMatrix;
    fn neg(self) -> SymMatrix {
        self.scale(-1.0)
    }
}

impl Mul<f64> for &SymMatrix {
    type Output = SymMatrix;
    fn mul(self, rhs: f64) -> SymMatrix {
        self.scale(rhs)
    }
}
