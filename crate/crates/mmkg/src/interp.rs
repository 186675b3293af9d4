//! Interpolants: clamped cubic splines, tensor-product bicubic splines on
//! uniform grids, Chebyshev series, and local Lagrange stencils.

use crate::error::{Error, Result};
use crate::linalg::solve_tridiagonal;

/// Derivative of the cubic through four points, evaluated at `x`.
fn cubic_slope(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let mut s = 0.0;
    for i in 0..4 {
        let mut li_prime = 0.0;
        for k in 0..4 {
            if k == i {
                continue;
            }
            let mut term = 1.0 / (xs[i] - xs[k]);
            for m in 0..4 {
                if m != i && m != k {
                    term *= (x - xs[m]) / (xs[i] - xs[m]);
                }
            }
            li_prime += term;
        }
        s += ys[i] * li_prime;
    }
    s
}

/// Cubic spline with end slopes taken from the cubic through the four
/// nearest nodes (third-order accurate, so the interpolant stays fourth order).
#[derive(Debug, Clone, PartialEq)]
pub struct CubicSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
    uniform: Option<(f64, f64)>,
}

impl CubicSpline {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let n = x.len();
        if n != y.len() || n < 2 {
            return Err(Error::InvalidInput(format!(
                "spline needs matching abscissae/ordinates with at least 2 nodes (got {} and {})",
                n,
                y.len()
            )));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput("spline abscissae must be strictly increasing".into()));
        }
        let h0 = x[1] - x[0];
        let uniform = if x
            .windows(2)
            .all(|w| ((w[1] - w[0]) - h0).abs() <= 1e-12 * h0.abs().max(x[n - 1].abs()))
        {
            Some((x[0], h0))
        } else {
            None
        };
        if n < 4 {
            return Ok(Self {
                m: vec![0.0; n],
                x,
                y,
                uniform,
            });
        }
        let s0 = cubic_slope(&x[..4], &y[..4], x[0]);
        let sn = cubic_slope(&x[n - 4..], &y[n - 4..], x[n - 1]);
        let mut a = vec![0.0; n];
        let mut b = vec![0.0; n];
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        let h = |i: usize| x[i + 1] - x[i];
        b[0] = 2.0 * h(0);
        c[0] = h(0);
        d[0] = 6.0 * ((y[1] - y[0]) / h(0) - s0);
        for i in 1..n - 1 {
            a[i] = h(i - 1);
            b[i] = 2.0 * (h(i - 1) + h(i));
            c[i] = h(i);
            d[i] = 6.0 * ((y[i + 1] - y[i]) / h(i) - (y[i] - y[i - 1]) / h(i - 1));
        }
        a[n - 1] = h(n - 2);
        b[n - 1] = 2.0 * h(n - 2);
        d[n - 1] = 6.0 * (sn - (y[n - 1] - y[n - 2]) / h(n - 2));
        let m = solve_tridiagonal(&a, &b, &c, &d)?;
        Ok(Self { x, y, m, uniform })
    }

    pub fn from_fn(x: Vec<f64>, f: impl Fn(f64) -> f64) -> Result<Self> {
        let y = x.iter().map(|&v| f(v)).collect();
        Self::new(x, y)
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.x[0], self.x[self.x.len() - 1])
    }

    fn cell(&self, x: f64) -> usize {
        let n = self.x.len();
        let i = match self.uniform {
            Some((x0, h)) => {
                let k = ((x - x0) / h).floor();
                if k < 0.0 {
                    0
                } else {
                    k as usize
                }
            }
            None => self.x.partition_point(|&v| v <= x).saturating_sub(1),
        };
        i.min(n - 2)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.eval_derivs(x).0
    }

    /// Value, first and second derivative; outside the nodes the end cell's
    /// cubic is continued.
    pub fn eval_derivs(&self, x: f64) -> (f64, f64, f64) {
        let i = self.cell(x);
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - x) / h;
        let b = 1.0 - a;
        let (y0, y1, m0, m1) = (self.y[i], self.y[i + 1], self.m[i], self.m[i + 1]);
        let v = a * y0 + b * y1 + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0;
        let d1 = (y1 - y0) / h - (3.0 * a * a - 1.0) / 6.0 * h * m0 + (3.0 * b * b - 1.0) / 6.0 * h * m1;
        let d2 = a * m0 + b * m1;
        (v, d1, d2)
    }

    /// Node slopes of the spline.
    pub fn node_slopes(&self) -> Vec<f64> {
        let n = self.x.len();
        (0..n)
            .map(|i| {
                if i + 1 < n {
                    let h = self.x[i + 1] - self.x[i];
                    (self.y[i + 1] - self.y[i]) / h - h * (2.0 * self.m[i] + self.m[i + 1]) / 6.0
                } else {
                    let h = self.x[i] - self.x[i - 1];
                    (self.y[i] - self.y[i - 1]) / h + h * (self.m[i - 1] + 2.0 * self.m[i]) / 6.0
                }
            })
            .collect()
    }
}

/// Tensor-product cubic spline on a uniform rectangular grid with exact
/// derivatives up to second order.
#[derive(Debug, Clone)]
pub struct Bicubic {
    x0: f64,
    hx: f64,
    nx: usize,
    y0: f64,
    hy: f64,
    ny: usize,
    // Per node: f, f_x, f_y, f_xy.
    f: Vec<[f64; 4]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Derivs2 {
    pub f: f64,
    pub fx: f64,
    pub fy: f64,
    pub fxx: f64,
    pub fxy: f64,
    pub fyy: f64,
}

impl Bicubic {
    /// `values[i * ny + j]` is f(x0 + i·hx, y0 + j·hy).
    pub fn new(x0: f64, hx: f64, nx: usize, y0: f64, hy: f64, ny: usize, values: &[f64]) -> Result<Self> {
        if nx < 4 || ny < 4 || values.len() != nx * ny || !(hx > 0.0 && hy > 0.0) {
            return Err(Error::InvalidInput("bicubic grid needs ≥4×4 nodes and positive spacing".into()));
        }
        let xs: Vec<f64> = (0..nx).map(|i| x0 + hx * i as f64).collect();
        let ys: Vec<f64> = (0..ny).map(|j| y0 + hy * j as f64).collect();
        let mut fx = vec![0.0; nx * ny];
        let mut fy = vec![0.0; nx * ny];
        let mut fxy = vec![0.0; nx * ny];
        for j in 0..ny {
            let col: Vec<f64> = (0..nx).map(|i| values[i * ny + j]).collect();
            let s = CubicSpline::new(xs.clone(), col)?.node_slopes();
            for i in 0..nx {
                fx[i * ny + j] = s[i];
            }
        }
        for i in 0..nx {
            let row = values[i * ny..(i + 1) * ny].to_vec();
            let s = CubicSpline::new(ys.clone(), row)?.node_slopes();
            fy[i * ny..(i + 1) * ny].copy_from_slice(&s);
            let rowx = fx[i * ny..(i + 1) * ny].to_vec();
            let s = CubicSpline::new(ys.clone(), rowx)?.node_slopes();
            fxy[i * ny..(i + 1) * ny].copy_from_slice(&s);
        }
        let f = (0..nx * ny).map(|k| [values[k], fx[k], fy[k], fxy[k]]).collect();
        Ok(Self {
            x0,
            hx,
            nx,
            y0,
            hy,
            ny,
            f,
        })
    }

    pub fn x_range(&self) -> (f64, f64) {
        (self.x0, self.x0 + self.hx * (self.nx - 1) as f64)
    }

    pub fn y_range(&self) -> (f64, f64) {
        (self.y0, self.y0 + self.hy * (self.ny - 1) as f64)
    }

    /// Evaluate with derivatives; arguments are clamped to the grid.
    pub fn eval(&self, x: f64, y: f64) -> Derivs2 {
        let (xa, xb) = self.x_range();
        let (ya, yb) = self.y_range();
        let xc = x.clamp(xa, xb);
        let yc = y.clamp(ya, yb);
        let sx = (xc - self.x0) / self.hx;
        let sy = (yc - self.y0) / self.hy;
        let i = (sx.floor() as usize).min(self.nx - 2);
        let j = (sy.floor() as usize).min(self.ny - 2);
        let u = sx - i as f64;
        let v = sy - j as f64;
        let hu = hermite(u);
        let hv = hermite(v);
        let mut out = Derivs2::default();
        for (a, ii) in [(0usize, i), (1, i + 1)] {
            for (b, jj) in [(0usize, j), (1, j + 1)] {
                let n = self.f[ii * self.ny + jj];
                // Basis in u: value weight and slope weight for corner a.
                let (pu, du, ddu) = (hu.0[a], hu.1[a], hu.2[a]);
                let (qu, dqu, ddqu) = (hu.0[a + 2], hu.1[a + 2], hu.2[a + 2]);
                let (pv, dv, ddv) = (hv.0[b], hv.1[b], hv.2[b]);
                let (qv, dqv, ddqv) = (hv.0[b + 2], hv.1[b + 2], hv.2[b + 2]);
                let fx = n[1] * self.hx;
                let fy = n[2] * self.hy;
                let fxy = n[3] * self.hx * self.hy;
                let terms = |bu: f64, bv: f64, cu: f64, cv: f64| n[0] * bu * bv + fx * cu * bv + fy * bu * cv + fxy * cu * cv;
                out.f += terms(pu, pv, qu, qv);
                out.fx += terms(du, pv, dqu, qv);
                out.fy += terms(pu, dv, qu, dqv);
                out.fxx += terms(ddu, pv, ddqu, qv);
                out.fxy += terms(du, dv, dqu, dqv);
                out.fyy += terms(pu, ddv, qu, ddqv);
            }
        }
        out.fx /= self.hx;
        out.fy /= self.hy;
        out.fxx /= self.hx * self.hx;
        out.fxy /= self.hx * self.hy;
        out.fyy /= self.hy * self.hy;
        if xc != x {
            out.fx = 0.0;
            out.fxx = 0.0;
            out.fxy = 0.0;
        }
        if yc != y {
            out.fy = 0.0;
            out.fyy = 0.0;
            out.fxy = 0.0;
        }
        out
    }
}

/// Cubic Hermite basis on [0,1]: (values, first, second derivatives) for
/// [h00, h01, h10, h11] = [value@0, value@1, slope@0, slope@1].
fn hermite(u: f64) -> ([f64; 4], [f64; 4], [f64; 4]) {
    let u2 = u * u;
    let u3 = u2 * u;
    (
        [2.0 * u3 - 3.0 * u2 + 1.0, -2.0 * u3 + 3.0 * u2, u3 - 2.0 * u2 + u, u3 - u2],
        [6.0 * u2 - 6.0 * u, -6.0 * u2 + 6.0 * u, 3.0 * u2 - 4.0 * u + 1.0, 3.0 * u2 - 2.0 * u],
        [12.0 * u - 6.0, -12.0 * u + 6.0, 6.0 * u - 4.0, 6.0 * u - 2.0],
    )
}

/// Chebyshev series on [a, b] built from values at the Chebyshev–Gauss nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Chebyshev {
    a: f64,
    b: f64,
    coeffs: Vec<f64>,
}

impl Chebyshev {
    pub fn nodes(a: f64, b: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|k| {
                let x = (std::f64::consts::PI * (k as f64 + 0.5) / n as f64).cos();
                0.5 * (a + b) + 0.5 * (b - a) * x
            })
            .collect()
    }

    pub fn from_node_values(a: f64, b: f64, values: &[f64]) -> Self {
        let n = values.len();
        let coeffs = (0..n)
            .map(|j| {
                let s: f64 = values
                    .iter()
                    .enumerate()
                    .map(|(k, v)| v * (std::f64::consts::PI * j as f64 * (k as f64 + 0.5) / n as f64).cos())
                    .sum();
                let c = 2.0 * s / n as f64;
                if j == 0 {
                    0.5 * c
                } else {
                    c
                }
            })
            .collect();
        Self { a, b, coeffs }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Basis values T_j and their first two derivatives with respect to the
    /// physical variable, for reuse across many series on the same nodes.
    pub fn basis(a: f64, b: f64, n: usize, x: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let s = 2.0 / (b - a);
        let z = (2.0 * x - a - b) / (b - a);
        let mut t = vec![0.0; n];
        let mut d = vec![0.0; n];
        let mut dd = vec![0.0; n];
        if n > 0 {
            t[0] = 1.0;
        }
        if n > 1 {
            t[1] = z;
            d[1] = 1.0;
        }
        for j in 2..n {
            t[j] = 2.0 * z * t[j - 1] - t[j - 2];
            d[j] = 2.0 * t[j - 1] + 2.0 * z * d[j - 1] - d[j - 2];
            dd[j] = 4.0 * d[j - 1] + 2.0 * z * dd[j - 1] - dd[j - 2];
        }
        for j in 0..n {
            d[j] *= s;
            dd[j] *= s * s;
        }
        (t, d, dd)
    }

    pub fn eval_derivs(&self, x: f64) -> (f64, f64, f64) {
        let (t, d, dd) = Self::basis(self.a, self.b, self.coeffs.len(), x);
        let dot = |w: &[f64]| self.coeffs.iter().zip(w).map(|(c, v)| c * v).sum::<f64>();
        (dot(&t), dot(&d), dot(&dd))
    }
}

/// Four-point Lagrange interpolation on a uniform grid (fourth order).
/// Returns value and first derivative.
pub fn lagrange4(values: &[f64], x0: f64, h: f64, x: f64) -> (f64, f64) {
    let n = values.len();
    assert!(n >= 4, "lagrange4 needs at least four samples");
    let s = (x - x0) / h;
    let j = (s.floor() as isize - 1).clamp(0, n as isize - 4) as usize;
    let u = s - j as f64;
    let mut v = 0.0;
    let mut d = 0.0;
    for i in 0..4 {
        let mut li = 1.0;
        let mut dli = 0.0;
        for k in 0..4 {
            if k == i {
                continue;
            }
            let denom = i as f64 - k as f64;
            let mut term = 1.0 / denom;
            for m in 0..4 {
                if m != i && m != k {
                    term *= (u - m as f64) / (i as f64 - m as f64);
                }
            }
            dli += term;
            li *= (u - k as f64) / denom;
        }
        v += values[j + i] * li;
        d += values[j + i] * dli;
    }
    (v, d / h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spline_fourth_order() {
        let err = |n: usize| {
            let x: Vec<f64> = (0..n).map(|i| 3.0 * i as f64 / (n - 1) as f64).collect();
            let s = CubicSpline::from_fn(x, |v| v.sin()).unwrap();
            (0..300)
                .map(|k| {
                    let v = 3.0 * k as f64 / 299.0;
                    (s.eval(v) - v.sin()).abs()
                })
                .fold(0.0, f64::max)
        };
        let e1 = err(21);
        let e2 = err(41);
        assert!(e1 / e2 > 12.0, "ratio {}", e1 / e2);
        assert!(e2 < 1e-6);
    }

    #[test]
    fn spline_derivatives() {
        let x: Vec<f64> = (0..201).map(|i| i as f64 * 0.02).collect();
        let s = CubicSpline::from_fn(x, |v| (1.3 * v).cos()).unwrap();
        let (v, d1, d2) = s.eval_derivs(1.234);
        assert!((v - (1.3 * 1.234f64).cos()).abs() < 1e-8);
        assert!((d1 + 1.3 * (1.3 * 1.234f64).sin()).abs() < 1e-6);
        assert!((d2 + 1.69 * (1.3 * 1.234f64).cos()).abs() < 1e-3);
        let nonuniform: Vec<f64> = (0..50).map(|i| (i as f64 * 0.05).powi(2)).collect();
        let s = CubicSpline::from_fn(nonuniform, |v| v.exp()).unwrap();
        assert!((s.eval(3.0) - 3f64.exp()).abs() < 1e-4);
    }

    #[test]
    fn bicubic_reproduces_smooth_function() {
        let f = |x: f64, y: f64| (x * 0.7).sin() * (0.5 * y).exp();
        let (nx, ny) = (41, 31);
        let (hx, hy) = (0.05, 0.1);
        let mut vals = vec![0.0; nx * ny];
        for i in 0..nx {
            for j in 0..ny {
                vals[i * ny + j] = f(i as f64 * hx, j as f64 * hy);
            }
        }
        let b = Bicubic::new(0.0, hx, nx, 0.0, hy, ny, &vals).unwrap();
        let (x, y) = (1.234, 2.345);
        let d = b.eval(x, y);
        assert!((d.f - f(x, y)).abs() < 1e-6);
        assert!((d.fx - 0.7 * (0.7 * x).cos() * (0.5 * y).exp()).abs() < 1e-4);
        assert!((d.fy - 0.5 * f(x, y)).abs() < 1e-4);
        assert!((d.fxy - 0.35 * (0.7 * x).cos() * (0.5 * y).exp()).abs() < 1e-3);
        assert!((d.fyy - 0.25 * f(x, y)).abs() < 1e-2);
        assert!((d.fxx + 0.49 * f(x, y)).abs() < 1e-2);
    }

    #[test]
    fn chebyshev_derivatives() {
        let nodes = Chebyshev::nodes(0.0, 2.0, 20);
        let vals: Vec<f64> = nodes.iter().map(|x| (x * 1.5).exp()).collect();
        let c = Chebyshev::from_node_values(0.0, 2.0, &vals);
        let (v, d, dd) = c.eval_derivs(0.3);
        let e = (0.45f64).exp();
        assert!((v - e).abs() < 1e-12);
        assert!((d - 1.5 * e).abs() < 1e-10);
        assert!((dd - 2.25 * e).abs() < 1e-8);
        let (v0, _, _) = c.eval_derivs(0.0);
        assert!((v0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lagrange_is_exact_for_cubics() {
        let vals: Vec<f64> = (0..10).map(|i| (i as f64 * 0.5).powi(3) - 2.0 * i as f64).collect();
        let x = 1.7;
        let (v, d) = lagrange4(&vals, 0.0, 0.5, x);
        assert!((v - (x * x * x - 4.0 * x)).abs() < 1e-12);
        assert!((d - (3.0 * x * x - 4.0)).abs() < 1e-11);
    }
}
