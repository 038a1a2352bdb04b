//! Banded LU without pivoting.
//!
//! Every system the solver builds is an M-matrix (positive diagonal,
//! nonpositive off-diagonals, weakly chained diagonal dominance), for which
//! Gaussian elimination without pivoting is stable and keeps fill inside the
//! band.

pub(crate) struct BandMatrix {
    n: usize,
    bw: usize,
    stride: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, bw: usize) -> Self {
        let stride = 2 * bw + 1;
        BandMatrix {
            n,
            bw,
            stride,
            data: vec![0.0; n * stride],
        }
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.bw >= i && j <= i + self.bw, "({i}, {j}) outside band");
        i * self.stride + (j + self.bw - i)
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.at(i, j);
        self.data[k] += v;
    }

    /// In-place LU; returns `false` on a zero pivot.
    pub fn factor(&mut self) -> bool {
        let (n, bw, stride) = (self.n, self.bw, self.stride);
        for k in 0..n {
            let pivot = self.data[k * stride + bw];
            if pivot == 0.0 || !pivot.is_finite() {
                return false;
            }
            let last = (k + bw).min(n - 1);
            let width = last - k; // columns k+1..=last
            let (head, tail) = self.data.split_at_mut((k + 1) * stride);
            let prow = &head[k * stride + bw + 1..k * stride + bw + 1 + width];
            for i in (k + 1)..=last {
                let off = (i - k - 1) * stride;
                // entry (i, k) sits at column offset k + bw - i
                let lk = off + (k + bw - i);
                let l = tail[lk] / pivot;
                if l == 0.0 {
                    continue;
                }
                tail[lk] = l;
                // entries (i, k+1..=last)
                let start = off + (k + 1 + bw - i);
                let row = &mut tail[start..start + width];
                for (r, p) in row.iter_mut().zip(prow) {
                    *r -= l * p;
                }
            }
        }
        true
    }

    /// Solves with the factors from [`BandMatrix::factor`].
    pub fn solve(&self, b: &mut [f64]) {
        let (n, bw, stride) = (self.n, self.bw, self.stride);
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let row = &self.data[i * stride..];
            let mut s = b[i];
            for (j, bj) in b.iter().enumerate().take(i).skip(lo) {
                s -= row[j + bw - i] * bj;
            }
            b[i] = s;
        }
        for i in (0..n).rev() {
            let hi = (i + bw).min(n - 1);
            let row = &self.data[i * stride..];
            let mut s = b[i];
            for j in (i + 1)..=hi {
                s -= row[j + bw - i] * b[j];
            }
            b[i] = s / row[bw];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tridiagonal_poisson() {
        let n = 50;
        let mut m = BandMatrix::zeros(n, 1);
        for i in 0..n {
            m.add(i, i, 2.0);
            if i > 0 {
                m.add(i, i - 1, -1.0);
            }
            if i + 1 < n {
                m.add(i, i + 1, -1.0);
            }
        }
        // solution x_i = i(n+1-i) gives rhs 2 everywhere
        let mut b = vec![2.0; n];
        assert!(m.factor());
        m.solve(&mut b);
        for (i, x) in b.iter().enumerate() {
            let k = (i + 1) as f64;
            assert!((x - k * (n as f64 + 1.0 - k)).abs() < 1e-9);
        }
    }

    #[test]
    fn wide_band_against_dense() {
        let n = 30;
        let bw = 4;
        let mut m = BandMatrix::zeros(n, bw);
        let mut dense = vec![vec![0.0; n]; n];
        for i in 0..n {
            let mut off = 0.0;
            for j in i.saturating_sub(bw)..(i + bw + 1).min(n) {
                if j != i {
                    let v = -(((i * 7 + j * 3) % 5) as f64) / 5.0;
                    m.add(i, j, v);
                    dense[i][j] = v;
                    off -= v;
                }
            }
            m.add(i, i, off + 1.0);
            dense[i][i] = off + 1.0;
        }
        let x: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut b: Vec<f64> = (0..n).map(|i| (0..n).map(|j| dense[i][j] * x[j]).sum()).collect();
        assert!(m.factor());
        m.solve(&mut b);
        for i in 0..n {
            assert!((b[i] - x[i]).abs() < 1e-10);
        }
    }
}
