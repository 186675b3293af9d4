//! Second-order forward-mode derivatives in the two variables (t, r).
//!
//! Residuals of the approximate solution involve second derivatives of
//! composed closed-form expressions; carrying exact derivatives avoids the
//! finite-difference truncation that would otherwise dominate at large r.

use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Jet {
    pub v: f64,
    pub t: f64,
    pub r: f64,
    pub tt: f64,
    pub tr: f64,
    pub rr: f64,
}

impl Jet {
    pub const ZERO: Jet = Jet {
        v: 0.0,
        t: 0.0,
        r: 0.0,
        tt: 0.0,
        tr: 0.0,
        rr: 0.0,
    };

    pub fn constant(v: f64) -> Self {
        Jet { v, ..Jet::ZERO }
    }

    pub fn var_t(t: f64) -> Self {
        Jet { v: t, t: 1.0, ..Jet::ZERO }
    }

    pub fn var_r(r: f64) -> Self {
        Jet { v: r, r: 1.0, ..Jet::ZERO }
    }

    /// Chain rule for h = f(u) given f(u), f'(u), f''(u).
    pub fn compose(self, f0: f64, f1: f64, f2: f64) -> Jet {
        Jet {
            v: f0,
            t: f1 * self.t,
            r: f1 * self.r,
            tt: f2 * self.t * self.t + f1 * self.tt,
            tr: f2 * self.t * self.r + f1 * self.tr,
            rr: f2 * self.r * self.r + f1 * self.rr,
        }
    }

    /// Chain rule for h = f(a, b) given the partials up to second order.
    #[allow(clippy::too_many_arguments)]
    pub fn compose2(a: Jet, b: Jet, f0: f64, fa: f64, fb: f64, faa: f64, fab: f64, fbb: f64) -> Jet {
        Jet {
            v: f0,
            t: fa * a.t + fb * b.t,
            r: fa * a.r + fb * b.r,
            tt: faa * a.t * a.t + 2.0 * fab * a.t * b.t + fbb * b.t * b.t + fa * a.tt + fb * b.tt,
            tr: faa * a.t * a.r + fab * (a.t * b.r + a.r * b.t) + fbb * b.t * b.r + fa * a.tr + fb * b.tr,
            rr: faa * a.r * a.r + 2.0 * fab * a.r * b.r + fbb * b.r * b.r + fa * a.rr + fb * b.rr,
        }
    }

    pub fn sqrt(self) -> Jet {
        let s = self.v.sqrt();
        self.compose(s, 0.5 / s, -0.25 / (s * self.v))
    }

    pub fn exp(self) -> Jet {
        let e = self.v.exp();
        self.compose(e, e, e)
    }

    pub fn ln(self) -> Jet {
        let x = self.v;
        self.compose(x.ln(), 1.0 / x, -1.0 / (x * x))
    }

    pub fn sin(self) -> Jet {
        let (s, c) = self.v.sin_cos();
        self.compose(s, c, -s)
    }

    pub fn cos(self) -> Jet {
        let (s, c) = self.v.sin_cos();
        self.compose(c, -s, -c)
    }

    pub fn powf(self, p: f64) -> Jet {
        let x = self.v;
        if x == 0.0 {
            return if p == 0.0 { Jet::constant(1.0) } else { Jet::ZERO };
        }
        let f0 = x.powf(p);
        self.compose(f0, p * f0 / x, p * (p - 1.0) * f0 / (x * x))
    }

    pub fn recip(self) -> Jet {
        let x = self.v;
        self.compose(1.0 / x, -1.0 / (x * x), 2.0 / (x * x * x))
    }

    pub fn atanh(self) -> Jet {
        let x = self.v;
        let d = 1.0 / ((1.0 - x) * (1.0 + x));
        self.compose(x.atanh(), d, 2.0 * x * d * d)
    }

    /// Spherical wave operator −∂_t² + ∂_r² + (2/r)∂_r − ℓ(ℓ+1)/r² applied at radius r.
    pub fn box_ell(&self, r: f64, ell: u32) -> f64 {
        let l = ell as f64;
        -self.tt + self.rr + 2.0 * self.r / r - l * (l + 1.0) * self.v / (r * r)
    }

    pub fn is_finite(&self) -> bool {
        self.v.is_finite()
            && self.t.is_finite()
            && self.r.is_finite()
            && self.tt.is_finite()
            && self.tr.is_finite()
            && self.rr.is_finite()
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(self, o: Jet) -> Jet {
        Jet {
            v: self.v + o.v,
            t: self.t + o.t,
            r: self.r + o.r,
            tt: self.tt + o.tt,
            tr: self.tr + o.tr,
            rr: self.rr + o.rr,
        }
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, o: Jet) -> Jet {
        self + (-o)
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self * -1.0
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, o: Jet) -> Jet {
        Jet {
            v: self.v * o.v,
            t: self.t * o.v + self.v * o.t,
            r: self.r * o.v + self.v * o.r,
            tt: self.tt * o.v + 2.0 * self.t * o.t + self.v * o.tt,
            tr: self.tr * o.v + self.t * o.r + self.r * o.t + self.v * o.tr,
            rr: self.rr * o.v + 2.0 * self.r * o.r + self.v * o.rr,
        }
    }
}

impl Div for Jet {
    type Output = Jet;
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, o: Jet) -> Jet {
        self * o.recip()
    }
}

impl Mul<f64> for Jet {
    type Output = Jet;
    fn mul(self, c: f64) -> Jet {
        Jet {
            v: self.v * c,
            t: self.t * c,
            r: self.r * c,
            tt: self.tt * c,
            tr: self.tr * c,
            rr: self.rr * c,
        }
    }
}

impl Mul<Jet> for f64 {
    type Output = Jet;
    fn mul(self, j: Jet) -> Jet {
        j * self
    }
}

impl Add<f64> for Jet {
    type Output = Jet;
    fn add(self, c: f64) -> Jet {
        Jet { v: self.v + c, ..self }
    }
}

impl Sub<f64> for Jet {
    type Output = Jet;
    fn sub(self, c: f64) -> Jet {
        Jet { v: self.v - c, ..self }
    }
}

impl Sub<Jet> for f64 {
    type Output = Jet;
    fn sub(self, j: Jet) -> Jet {
        -j + self
    }
}

impl Add<Jet> for f64 {
    type Output = Jet;
    fn add(self, j: Jet) -> Jet {
        j + self
    }
}

impl Div<f64> for Jet {
    type Output = Jet;
    fn div(self, c: f64) -> Jet {
        self * (1.0 / c)
    }
}

/// Complex-valued jet stored as real and imaginary parts.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CJet {
    pub re: Jet,
    pub im: Jet,
}

impl CJet {
    pub const ZERO: CJet = CJet {
        re: Jet::ZERO,
        im: Jet::ZERO,
    };

    pub fn new(re: Jet, im: Jet) -> Self {
        Self { re, im }
    }

    /// e^{iθ}.
    pub fn expi(theta: Jet) -> Self {
        Self {
            re: theta.cos(),
            im: theta.sin(),
        }
    }

    pub fn conj(self) -> Self {
        Self {
            re: self.re,
            im: -self.im,
        }
    }

    pub fn scale(self, j: Jet) -> Self {
        Self {
            re: self.re * j,
            im: self.im * j,
        }
    }

    pub fn scale_c(self, re: f64, im: f64) -> Self {
        Self {
            re: self.re * re - self.im * im,
            im: self.re * im + self.im * re,
        }
    }
}

impl Add for CJet {
    type Output = CJet;
    fn add(self, o: CJet) -> CJet {
        CJet {
            re: self.re + o.re,
            im: self.im + o.im,
        }
    }
}

impl Sub for CJet {
    type Output = CJet;
    fn sub(self, o: CJet) -> CJet {
        CJet {
            re: self.re - o.re,
            im: self.im - o.im,
        }
    }
}

impl Mul for CJet {
    type Output = CJet;
    fn mul(self, o: CJet) -> CJet {
        CJet {
            re: self.re * o.re - self.im * o.im,
            im: self.re * o.im + self.im * o.re,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check(j: Jet, f: impl Fn(f64, f64) -> f64, t: f64, r: f64) {
        let h = 1e-4;
        let ft = (f(t + h, r) - f(t - h, r)) / (2.0 * h);
        let fr = (f(t, r + h) - f(t, r - h)) / (2.0 * h);
        let ftt = (f(t + h, r) - 2.0 * f(t, r) + f(t - h, r)) / (h * h);
        let frr = (f(t, r + h) - 2.0 * f(t, r) + f(t, r - h)) / (h * h);
        let ftr = (f(t + h, r + h) - f(t + h, r - h) - f(t - h, r + h) + f(t - h, r - h)) / (4.0 * h * h);
        let tol = 1e-5;
        assert!((j.v - f(t, r)).abs() < 1e-12);
        assert!((j.t - ft).abs() < tol * (1.0 + ft.abs()), "t {} {}", j.t, ft);
        assert!((j.r - fr).abs() < tol * (1.0 + fr.abs()), "r {} {}", j.r, fr);
        assert!((j.tt - ftt).abs() < 1e-4 * (1.0 + ftt.abs()), "tt {} {}", j.tt, ftt);
        assert!((j.tr - ftr).abs() < 1e-4 * (1.0 + ftr.abs()), "tr {} {}", j.tr, ftr);
        assert!((j.rr - frr).abs() < 1e-4 * (1.0 + frr.abs()), "rr {} {}", j.rr, frr);
    }

    #[test]
    fn composite_expression_matches_differences() {
        let (t, r) = (3.0, 1.7);
        let jt = Jet::var_t(t);
        let jr = Jet::var_r(r);
        let tau = (jt * jt - jr * jr).sqrt();
        let e = (tau.sin() * (jr / jt).atanh().exp()) / (1.0 + jr * jr).powf(1.5) + tau.ln();
        check(
            e,
            |t, r| {
                let tau = (t * t - r * r).sqrt();
                tau.sin() * (r / t).atanh().exp() / (1.0 + r * r).powf(1.5) + tau.ln()
            },
            t,
            r,
        );
    }

    #[test]
    fn wave_operator_annihilates_spherical_waves() {
        let (t, r) = (2.0, 5.0);
        let jt = Jet::var_t(t);
        let jr = Jet::var_r(r);
        let u = ((jr - jt) * 0.7).sin() / jr;
        assert!(u.box_ell(r, 0).abs() < 1e-14);
    }

    #[test]
    fn complex_product_rule() {
        let jt = Jet::var_t(1.3);
        let jr = Jet::var_r(0.4);
        let z = CJet::expi(jt * jr);
        let w = z * z.conj();
        assert!((w.re.v - 1.0).abs() < 1e-15);
        assert!(w.re.tt.abs() < 1e-14 && w.im.rr.abs() < 1e-14);
    }
}
