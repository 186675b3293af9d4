//! Least-squares fits, power laws, Richardson extrapolation and
//! convergence-order estimates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Solve min ‖Xβ − y‖ with X given column-wise, via modified Gram–Schmidt.
pub fn least_squares(columns: &[Vec<f64>], y: &[f64]) -> Result<Vec<f64>> {
    let p = columns.len();
    let n = y.len();
    if p == 0 || n < p || columns.iter().any(|c| c.len() != n) {
        return Err(Error::Fit(format!("least squares needs n ≥ p (n={n}, p={p})")));
    }
    let mut q: Vec<Vec<f64>> = columns.to_vec();
    let mut r = vec![vec![0.0; p]; p];
    for j in 0..p {
        for k in 0..j {
            let d: f64 = q[k].iter().zip(&q[j]).map(|(a, b)| a * b).sum();
            r[k][j] = d;
            let qk = q[k].clone();
            for (x, a) in q[j].iter_mut().zip(&qk) {
                *x -= d * a;
            }
        }
        let norm = q[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::Fit("rank-deficient design matrix".into()));
        }
        r[j][j] = norm;
        for x in q[j].iter_mut() {
            *x /= norm;
        }
    }
    let qty: Vec<f64> = (0..p).map(|k| q[k].iter().zip(y).map(|(a, b)| a * b).sum()).collect();
    let mut beta = vec![0.0; p];
    for i in (0..p).rev() {
        let mut s = qty[i];
        for k in i + 1..p {
            s -= r[i][k] * beta[k];
        }
        beta[i] = s / r[i][i];
    }
    Ok(beta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub rms_residual: f64,
}

pub fn fit_line(x: &[f64], y: &[f64]) -> Result<LineFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return Err(Error::Fit(format!("line fit needs ≥2 matching samples (got {n})")));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("degenerate abscissae".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let dof = (n as f64 - 2.0).max(1.0);
    Ok(LineFit {
        slope,
        intercept,
        slope_stderr: (ss / dof / sxx).sqrt(),
        rms_residual: (ss / n as f64).sqrt(),
    })
}

/// Fit y ≈ C·x^p through log-log regression; non-positive samples are rejected.
pub fn fit_power_law(x: &[f64], y: &[f64]) -> Result<LineFit> {
    if x.iter().chain(y).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::Fit("power-law fit needs strictly positive finite samples".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    fit_line(&lx, &ly)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Richardson {
    pub value: f64,
    pub error_estimate: f64,
    pub table: Vec<Vec<f64>>,
}

/// Richardson extrapolation in h for samples f(h_k) with h_{k+1} = h_k/2 and
/// error expansion c₁h + c₂h² + …; `depth` eliminations are performed.
pub fn richardson_halving(samples: &[f64], depth: usize) -> Result<Richardson> {
    if samples.len() < depth + 1 {
        return Err(Error::Fit(format!(
            "Richardson depth {depth} needs at least {} samples",
            depth + 1
        )));
    }
    let mut table = vec![samples.to_vec()];
    for d in 1..=depth {
        let prev = &table[d - 1];
        let f = 2f64.powi(d as i32);
        let next: Vec<f64> = prev.windows(2).map(|w| (f * w[1] - w[0]) / (f - 1.0)).collect();
        table.push(next);
    }
    let last = table[depth].last().copied().unwrap_or(f64::NAN);
    let err = if table[depth].len() >= 2 {
        let n = table[depth].len();
        (table[depth][n - 1] - table[depth][n - 2]).abs()
    } else {
        let below = table[depth - 1].last().copied().unwrap_or(last);
        (last - below).abs()
    };
    Ok(Richardson {
        value: last,
        error_estimate: err,
        table,
    })
}

/// Observed order of convergence from errors at successively halved spacing.
pub fn observed_order(coarse_err: f64, fine_err: f64) -> f64 {
    (coarse_err.abs() / fine_err.abs()).log2()
}

/// Self-convergence order from three solutions at spacing h, h/2, h/4.
pub fn self_convergence_order(u_h: f64, u_h2: f64, u_h4: f64) -> f64 {
    ((u_h - u_h2).abs() / (u_h2 - u_h4).abs()).log2()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn least_squares_recovers_coefficients() {
        let x: Vec<f64> = (0..20).map(|i| 1.0 + i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 3.0 / v + 0.5 / (v * v)).collect();
        let cols = vec![vec![1.0; 20], x.iter().map(|v| 1.0 / v).collect(), x.iter().map(|v| 1.0 / (v * v)).collect()];
        let b = least_squares(&cols, &y).unwrap();
        assert!((b[0] - 2.0).abs() < 1e-12 && (b[1] + 3.0).abs() < 1e-11 && (b[2] - 0.5).abs() < 1e-11);
    }

    #[test]
    fn power_law_slope() {
        let x: Vec<f64> = (1..10).map(|i| i as f64 * 10.0).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v.powf(-1.5)).collect();
        let f = fit_power_law(&x, &y).unwrap();
        assert!((f.slope + 1.5).abs() < 1e-12);
        assert!((f.intercept - 3f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn richardson_removes_leading_terms() {
        let samples: Vec<f64> = [50.0, 100.0, 200.0, 400.0]
            .iter()
            .map(|r| 0.7 + 2.0 / r + 5.0 / (r * r) + 1.0 / (r * r * r))
            .collect();
        let r = richardson_halving(&samples, 2).unwrap();
        assert!((r.value - 0.7).abs() < 1e-6, "{}", r.value);
    }

    #[test]
    fn orders() {
        assert!((observed_order(1e-2, 2.5e-3) - 2.0).abs() < 1e-12);
        assert!((self_convergence_order(1.0 + 1.0, 1.0 + 0.25, 1.0 + 1.0 / 16.0) - 2.0).abs() < 1e-12);
    }
}
