//! Small direct solvers for the banded systems that show up in spline
//! construction and the radial constraint solve.

use crate::error::{Error, Result};

/// Solve a tridiagonal system with sub-diagonal `a` (a[0] unused),
/// diagonal `b`, super-diagonal `c` (c[n-1] unused).
pub fn solve_tridiagonal(a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> Result<Vec<f64>> {
    let n = b.len();
    if a.len() != n || c.len() != n || d.len() != n {
        return Err(Error::InvalidInput("tridiagonal system has inconsistent lengths".into()));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    let mut beta = b[0];
    if beta == 0.0 {
        return Err(Error::Singular("zero pivot in tridiagonal solve".into()));
    }
    cp[0] = c[0] / beta;
    dp[0] = d[0] / beta;
    for i in 1..n {
        beta = b[i] - a[i] * cp[i - 1];
        if beta == 0.0 || !beta.is_finite() {
            return Err(Error::Singular(format!("zero pivot in tridiagonal solve at row {i}")));
        }
        cp[i] = c[i] / beta;
        dp[i] = (d[i] - a[i] * dp[i - 1]) / beta;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = dp[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = dp[i] - cp[i] * x[i + 1];
    }
    Ok(x)
}

/// Banded matrix with `kl` sub- and `ku` super-diagonals, stored row-wise
/// with room for fill-in from partial pivoting.
#[derive(Debug, Clone)]
pub struct BandedMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandedMatrix {
    pub fn new(n: usize, kl: usize, ku: usize) -> Self {
        let width = kl + ku + kl + 1;
        Self {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn idx(&self, i: usize, j: usize) -> Option<usize> {
        // Column j of row i lives at offset j + kl - i (fill-in extends ku by kl).
        let off = j as isize - i as isize + self.kl as isize;
        if off < 0 || off as usize >= self.width {
            None
        } else {
            Some(i * self.width + off as usize)
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.idx(i, j).map(|k| self.data[k]).unwrap_or(0.0)
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let inside = j + self.kl >= i && j <= i + self.ku;
        assert!(inside, "entry ({i},{j}) outside the declared band");
        let k = self.idx(i, j).expect("entry inside band storage");
        self.data[k] += v;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.kl);
                let hi = (i + self.ku + self.kl).min(self.n - 1);
                (lo..=hi).map(|j| self.get(i, j) * x[j]).sum()
            })
            .collect()
    }

    /// Gaussian elimination with partial pivoting restricted to the band.
    pub fn solve(mut self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        if rhs.len() != n {
            return Err(Error::InvalidInput("right-hand side length mismatch".into()));
        }
        let mut b = rhs.to_vec();
        let span = self.ku + self.kl;
        for k in 0..n {
            let last = (k + self.kl).min(n - 1);
            let mut p = k;
            let mut best = self.get(k, k).abs();
            for i in k + 1..=last {
                let v = self.get(i, k).abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(Error::Singular(format!("singular banded matrix at column {k}")));
            }
            let jmax = (k + span).min(n - 1);
            if p != k {
                for j in k..=jmax {
                    let a = self.get(k, j);
                    let c = self.get(p, j);
                    if let Some(ix) = self.idx(k, j) {
                        self.data[ix] = c;
                    }
                    if let Some(ix) = self.idx(p, j) {
                        self.data[ix] = a;
                    }
                }
                b.swap(k, p);
            }
            let pivot = self.get(k, k);
            for i in k + 1..=last {
                let f = self.get(i, k) / pivot;
                if f == 0.0 {
                    continue;
                }
                for j in k..=jmax {
                    let v = self.get(k, j);
                    if v != 0.0 {
                        if let Some(ix) = self.idx(i, j) {
                            self.data[ix] -= f * v;
                        }
                    }
                }
                b[i] -= f * b[k];
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let jmax = (i + span).min(n - 1);
            let mut s = b[i];
            for j in i + 1..=jmax {
                s -= self.get(i, j) * x[j];
            }
            x[i] = s / self.get(i, i);
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tridiagonal_matches_known_solution() {
        let n = 6;
        let a = vec![-1.0; n];
        let b = vec![4.0; n];
        let c = vec![-1.0; n];
        let x_true: Vec<f64> = (0..n).map(|i| i as f64 * 0.5 - 1.0).collect();
        let mut d = vec![0.0; n];
        for i in 0..n {
            d[i] = b[i] * x_true[i];
            if i > 0 {
                d[i] += a[i] * x_true[i - 1];
            }
            if i + 1 < n {
                d[i] += c[i] * x_true[i + 1];
            }
        }
        let x = solve_tridiagonal(&a, &b, &c, &d).unwrap();
        for (u, v) in x.iter().zip(&x_true) {
            assert!((u - v).abs() < 1e-14);
        }
    }

    #[test]
    fn banded_solve_with_pivoting() {
        let n = 9;
        let mut m = BandedMatrix::new(n, 2, 2);
        for i in 0..n {
            for j in i.saturating_sub(2)..=(i + 2).min(n - 1) {
                let v = if i == j { 0.01 } else { 1.0 + (i * 3 + j) as f64 * 0.1 };
                m.add(i, j, v);
            }
        }
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
        let rhs = m.mul_vec(&x_true);
        let x = m.clone().solve(&rhs).unwrap();
        for (u, v) in x.iter().zip(&x_true) {
            assert!((u - v).abs() < 1e-11, "{u} vs {v}");
        }
    }
}
