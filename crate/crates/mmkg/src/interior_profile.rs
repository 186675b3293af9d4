//! The interior gauge potential A^M sourced by the Klein–Gordon charge
//! density: direct evaluation of the retarded integral, the equivalent
//! elliptic problem on the unit hyperboloid, radiation limits and the
//! change-of-variables identity relating the two.
//!
//! The source is −□A^M_μ = (x_μ/τ)τ⁻³G(y) with G = |a+|² − |a−|² and zero
//! data at t = 2.  With P = G/(1−ρ²)² this reads −□A^M₀ = −t⁻³P and
//! −□A^M_i = x_i t⁻⁴P.

use std::cell::RefCell;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{least_squares, richardson_halving};
use crate::geometry::h1_integrate;
use crate::interp::{Chebyshev, CubicSpline};
use crate::jet::Jet;
use crate::par::Exec;
use crate::quad::{integrate_n, integrate_pieces_n, FixedRule, QuadOptions};
use crate::scattering_data::{Component, KleinGordonAmplitudes, QProfile};

/// G(ρ) = |a+|² − |a−|² tabulated in the hyperbolic radius s = atanh ρ,
/// with P = G/(1−ρ²)² = G·cosh⁴s derived on demand.
#[derive(Debug, Clone)]
pub struct SourceProfile {
    rho: Vec<f64>,
    g: Vec<f64>,
    spline: CubicSpline,
    s_last: f64,
}

impl SourceProfile {
    pub fn new(rho: Vec<f64>, g: Vec<f64>) -> Result<Self> {
        if rho.len() != g.len() || rho.len() < 4 || rho[0] != 0.0 {
            return Err(Error::InvalidInput("source profile needs ≥4 nodes starting at ρ = 0".into()));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("source profile contains non-finite values".into()));
        }
        let s: Vec<f64> = rho.iter().map(|r| r.atanh()).collect();
        let s_last = s[s.len() - 1];
        let spline = CubicSpline::new(s, g.clone())?;
        Ok(Self { rho, g, spline, s_last })
    }

    pub fn from_amplitudes(a: &KleinGordonAmplitudes) -> Result<Self> {
        Self::new(a.rho().to_vec(), a.g_nodes())
    }

    pub fn from_fn(rho: Vec<f64>, g: impl Fn(f64) -> f64) -> Result<Self> {
        let values = rho.iter().map(|&r| g(r)).collect();
        Self::new(rho, values)
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn g_nodes(&self) -> &[f64] {
        &self.g
    }

    pub fn s_max(&self) -> f64 {
        self.s_last
    }

    pub fn is_zero(&self) -> bool {
        self.g.iter().all(|v| *v == 0.0)
    }

    pub fn g_s(&self, s: f64) -> f64 {
        if s > self.s_last {
            0.0
        } else {
            self.spline.eval(s.abs())
        }
    }

    pub fn p_s(&self, s: f64) -> f64 {
        if s > self.s_last {
            0.0
        } else {
            self.g_s(s) * s.cosh().powi(4)
        }
    }

    pub fn p(&self, rho: f64) -> f64 {
        if rho >= 1.0 {
            0.0
        } else {
            self.p_s(rho.abs().atanh())
        }
    }

    pub fn p_nodes(&self) -> Vec<f64> {
        self.rho
            .iter()
            .zip(&self.g)
            .map(|(r, g)| g / ((1.0 - r) * (1.0 + r)).powi(2))
            .collect()
    }

    /// F = (1−ρ²)²P at the nodes; reproduces G up to rounding.
    pub fn f_nodes(&self) -> Vec<f64> {
        self.rho
            .iter()
            .zip(self.p_nodes())
            .map(|(r, p)| ((1.0 - r) * (1.0 + r)).powi(2) * p)
            .collect()
    }

    fn p_scale(&self) -> f64 {
        self.p_nodes().iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmValue {
    pub a0: f64,
    pub ar: f64,
    pub error: f64,
    pub evaluations: usize,
}

impl AmValue {
    pub fn a_l(&self) -> f64 {
        self.a0 + self.ar
    }

    pub fn get(&self, c: Component) -> f64 {
        match c {
            Component::Time => self.a0,
            Component::Radial => self.ar,
        }
    }
}

/// Nested adaptive quadrature whose inner integral may fail; the first
/// inner failure is reported instead of a meaningless outer value.
struct InnerErrors(RefCell<(Option<Error>, f64)>);

impl InnerErrors {
    fn new() -> Self {
        Self(RefCell::new((None, 0.0)))
    }

    fn record<const N: usize>(&self, r: Result<crate::quad::QuadResultN<N>>, weight: f64) -> [f64; N] {
        match r {
            Ok(v) => {
                self.0.borrow_mut().1 += v.error * weight.abs();
                v.value
            }
            Err(e) => {
                let mut s = self.0.borrow_mut();
                if s.0.is_none() {
                    s.0 = Some(e);
                }
                [0.0; N]
            }
        }
    }

    fn finish(self) -> Result<f64> {
        let (e, acc) = self.0.into_inner();
        match e {
            Some(e) => Err(e),
            None => Ok(acc),
        }
    }
}

/// A^M at (t, r) from the retarded integral, written with s = λt and the
/// sphere parametrised by μ = ⟨η, ω⟩:
///
/// A₀ = ½t⁻¹∫∫(1−λ)λ⁻³(−P(ρ)) dμ dλ,
/// A_r = ½t⁻¹∫∫(1−λ)λ⁻⁴(ρ_x + (1−λ)μ)P(ρ) dμ dλ,
///
/// with ρ_x = r/t and ρ² = (ρ_x² + (1−λ)² + 2ρ_x(1−λ)μ)/λ².  The integrand
/// vanishes for ρ ≥ 1, i.e. μ > μ_max(λ), and for λ < (1−ρ_x)/2.
pub fn compute_am(t: f64, r: f64, src: &SourceProfile, tol: f64) -> Result<AmValue> {
    if !(t.is_finite() && r.is_finite()) || r < 0.0 {
        return Err(Error::InvalidInput(format!("bad evaluation point (t={t}, r={r})")));
    }
    let zero = AmValue {
        a0: 0.0,
        ar: 0.0,
        error: 0.0,
        evaluations: 0,
    };
    if t <= 2.0 || r >= t || src.is_zero() {
        return Ok(zero);
    }
    let rx = r / t;
    let lam_lo = (2.0 / t).max(0.5 * (1.0 - rx));
    if lam_lo >= 1.0 {
        return Ok(zero);
    }
    let lam_c = 0.5 * (1.0 + rx);
    let scale = src.p_scale();
    let inner_opts = QuadOptions {
        abs_tol: 1e-3 * tol * scale,
        rel_tol: 0.1 * tol,
        max_panels: 400,
    };
    let errors = InnerErrors::new();
    let evals = RefCell::new(0usize);
    let inner = |lam: f64| -> [f64; 2] {
        let w = (1.0 - lam) / (lam * lam * lam);
        if rx < 1e-14 {
            let rho = (1.0 - lam) / lam;
            return [-2.0 * w * src.p(rho), 0.0];
        }
        let mu_max = (2.0 * lam - 1.0 - rx * rx) / (2.0 * rx * (1.0 - lam));
        if mu_max <= -1.0 {
            return [0.0, 0.0];
        }
        let f = |mu: f64| -> [f64; 2] {
            let z2 = rx * rx + (1.0 - lam) * (1.0 - lam) + 2.0 * rx * (1.0 - lam) * mu;
            let rho = z2.max(0.0).sqrt() / lam;
            let p = src.p(rho);
            [-p, (rx + (1.0 - lam) * mu) / lam * p]
        };
        let r = if mu_max < 1.0 {
            let span = mu_max + 1.0;
            integrate_n(
                |u: f64| {
                    let v = f(mu_max - span * u * u);
                    let j = 2.0 * span * u;
                    [v[0] * j, v[1] * j]
                },
                0.0,
                1.0,
                inner_opts,
            )
        } else {
            integrate_n(f, -1.0, 1.0, inner_opts)
        };
        if let Ok(v) = &r {
            *evals.borrow_mut() += v.evaluations;
        }
        let v = errors.record(r, w);
        [w * v[0], w * v[1]]
    };
    let top = lam_c.min(1.0).max(lam_lo);
    let mut breaks = vec![lam_lo];
    for k in (1..=12).rev() {
        let b = lam_lo + (top - lam_lo) * 0.5f64.powi(k);
        if b > *breaks.last().unwrap() {
            breaks.push(b);
        }
    }
    if top > *breaks.last().unwrap() {
        breaks.push(top);
    }
    if 1.0 > *breaks.last().unwrap() {
        breaks.push(1.0);
    }
    let outer_opts = QuadOptions {
        abs_tol: 1e-2 * tol * scale,
        rel_tol: tol,
        max_panels: 2000,
    };
    let res = integrate_pieces_n(inner, &breaks, outer_opts)?;
    let inner_err = errors.finish()?;
    let k = 0.5 / t;
    let inner_evals = evals.into_inner();
    Ok(AmValue {
        a0: k * res.value[0],
        ar: k * res.value[1],
        error: k * (res.error + inner_err),
        evaluations: res.evaluations + inner_evals,
    })
}

/// Coefficients (a, b, c) of the radial reduction a·U'' + b·U' + c·U of △_y
/// acting on U(s)·Y_ℓ, frozen after being fitted from the composed
/// vector-field operator (see `fit_radial_operator`).
pub fn radial_operator_coefficients(ell: u32, s: f64) -> [f64; 3] {
    let l = ell as f64;
    [1.0, 2.0 / s.tanh(), -l * (l + 1.0) / s.sinh().powi(2)]
}

/// (Σ_i Ω_{0i}², Σ_{i<j} Ω_{ij}²) applied to `f` at the hyperboloid point
/// p = (t, x₁, x₂, x₃), by fourth-order second differences along the exact
/// boost and rotation flows (which preserve t² − |x|²).
pub fn composed_vector_field_squares(f: &dyn Fn([f64; 4]) -> f64, p: [f64; 4], h: f64) -> (f64, f64) {
    let second = |flow: &dyn Fn(f64) -> [f64; 4]| {
        let v = |th: f64| f(flow(th));
        (-v(2.0 * h) + 16.0 * v(h) - 30.0 * v(0.0) + 16.0 * v(-h) - v(-2.0 * h)) / (12.0 * h * h)
    };
    let mut boosts = 0.0;
    for i in 1..4 {
        boosts += second(&|th: f64| {
            let (c, s) = (th.cosh(), th.sinh());
            let mut q = p;
            q[0] = p[0] * c + p[i] * s;
            q[i] = p[i] * c + p[0] * s;
            q
        });
    }
    let mut rotations = 0.0;
    for (i, j) in [(1, 2), (1, 3), (2, 3)] {
        rotations += second(&|th: f64| {
            let (c, s) = (th.cos(), th.sin());
            let mut q = p;
            q[i] = p[i] * c - p[j] * s;
            q[j] = p[i] * s + p[j] * c;
            q
        });
    }
    (boosts, rotations)
}

/// Laplace–Beltrami operator of the unit hyperboloid composed from the
/// Lorentz vector fields: Σ Ω_{0i}² − Σ Ω_{ij}².  The rotation part enters
/// with a minus sign; with a plus sign the ℓ-sector picks up an extra
/// −2ℓ(ℓ+1), which the retarded-integral cross-check rules out.
pub fn composed_hyperboloid_laplacian(f: &dyn Fn([f64; 4]) -> f64, p: [f64; 4], h: f64) -> f64 {
    let (b, r) = composed_vector_field_squares(f, p, h);
    b - r
}

/// Hyperbolic radius and direction of a point on the unit hyperboloid.
pub fn hyperboloid_polar(p: [f64; 4]) -> (f64, [f64; 3]) {
    let x = (p[1] * p[1] + p[2] * p[2] + p[3] * p[3]).sqrt();
    let s = x.asinh();
    if x == 0.0 {
        (0.0, [0.0, 0.0, 0.0])
    } else {
        (s, [p[1] / x, p[2] / x, p[3] / x])
    }
}

/// Point at hyperbolic radius s in direction ω on the unit hyperboloid.
pub fn hyperboloid_point(s: f64, omega: [f64; 3]) -> [f64; 4] {
    let n = (omega[0] * omega[0] + omega[1] * omega[1] + omega[2] * omega[2]).sqrt();
    let sh = s.sinh();
    [s.cosh(), sh * omega[0] / n, sh * omega[1] / n, sh * omega[2] / n]
}

/// Recover (a, b, c) in △_y(U·Y) = (aU'' + bU' + cU)·Y at hyperbolic radius s
/// by applying the composed operator to U ∈ {1, s, s², s³} times the
/// degree-ℓ harmonic Y (ℓ ∈ {0, 1}; Y = ω₁ for ℓ = 1) and least-squares
/// solving for the three coefficients.
pub fn fit_radial_operator(ell: u32, s: f64, h: f64) -> Result<[f64; 3]> {
    if ell > 1 {
        return Err(Error::InvalidInput(format!("operator fit implemented for ℓ ≤ 1, got {ell}")));
    }
    let omega = [0.6, 0.48, 0.64];
    let p = hyperboloid_point(s, omega);
    let y = if ell == 0 { 1.0 } else { p[1] / (p[1] * p[1] + p[2] * p[2] + p[3] * p[3]).sqrt() };
    let mut cols = vec![Vec::new(), Vec::new(), Vec::new()];
    let mut rhs = Vec::new();
    for k in 0..4 {
        let kf = k as f64;
        let u = |x: f64| x.powi(k);
        let f = |q: [f64; 4]| {
            let (sq, w) = hyperboloid_polar(q);
            let yq = if ell == 0 { 1.0 } else { w[0] };
            u(sq) * yq
        };
        let lap = composed_hyperboloid_laplacian(&f, p, h) / y;
        let d2 = if k >= 2 { kf * (kf - 1.0) * s.powi(k - 2) } else { 0.0 };
        let d1 = if k >= 1 { kf * s.powi(k - 1) } else { 0.0 };
        cols[0].push(d2);
        cols[1].push(d1);
        cols[2].push(u(s));
        rhs.push(lap);
    }
    let beta = least_squares(&cols, &rhs)?;
    Ok([beta[0], beta[1], beta[2]])
}

/// Decaying solution of △_yU + U = Q in the ℓ-sector (ℓ ∈ {0, 1}).
///
/// With g = U·sinh s the radial operator becomes g'' − ℓ(ℓ+1)g/sinh²s, whose
/// homogeneous solutions are g₂ (regular at the origin) and g₁ (bounded at
/// infinity), normalised to unit Wronskian g₁g₂' − g₁'g₂ = 1:
/// ℓ = 0: g₂ = s, g₁ = 1;  ℓ = 1: g₂ = s·coth s − 1, g₁ = coth s.
/// Then g = −g₁∫₀^s g₂h − g₂∫_s^∞ g₁h with h = Q·sinh s, and V = U·cosh s
/// tends to −∫₀^∞ g₂h at the boundary.
#[derive(Debug, Clone)]
pub struct ModeSolution {
    ell: u32,
    ds: f64,
    n: usize,
    h: CubicSpline,
    i1: Vec<f64>,
    i2: Vec<f64>,
    origin: [f64; 2],
}

fn g_pair(ell: u32, s: f64) -> ([f64; 2], [f64; 2]) {
    if ell == 0 {
        return ([1.0, 0.0], [s, 1.0]);
    }
    let (g2, g2p) = if s < 0.1 {
        let s2 = s * s;
        (
            s2 * (1.0 / 3.0 - s2 * (1.0 / 45.0 - s2 * (2.0 / 945.0 - s2 / 4725.0))),
            s * (2.0 / 3.0 - s2 * (4.0 / 45.0 - s2 * (12.0 / 945.0 - s2 * 8.0 / 4725.0))),
        )
    } else {
        let c = 1.0 / s.tanh();
        (s * c - 1.0, c - s / s.sinh().powi(2))
    };
    ([1.0 / s.tanh(), -1.0 / s.sinh().powi(2)], [g2, g2p])
}

const MODE_RULE: usize = 8;
const SMALL_S: f64 = 1e-3;

impl ModeSolution {
    pub fn solve(ell: u32, q: impl Fn(f64) -> f64, s_max: f64, ds: f64) -> Result<Self> {
        if ell > 1 {
            return Err(Error::InvalidInput(format!("mode solver implemented for ℓ ≤ 1, got {ell}")));
        }
        if !(ds > 0.0 && s_max > 4.0 * ds) {
            return Err(Error::InvalidInput(format!("bad mode grid (s_max={s_max}, ds={ds})")));
        }
        let n = (s_max / ds).round() as usize;
        let s: Vec<f64> = (0..=n).map(|k| k as f64 * ds).collect();
        let hv: Vec<f64> = s.iter().map(|&x| q(x) * x.sinh()).collect();
        if hv.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular("mode source is not finite on the grid".into()));
        }
        let h = CubicSpline::new(s.clone(), hv)?;
        let rule = FixedRule::new(MODE_RULE);
        let mut i1 = vec![0.0; n + 1];
        let mut c1 = vec![0.0; n];
        for k in 0..n {
            let (a, b) = (s[k], s[k + 1]);
            i1[k + 1] = i1[k] + rule.integrate(|x| g_pair(ell, x).1[0] * h.eval(x), a, b);
            c1[k] = rule.integrate(|x| g_pair(ell, x).0[0] * h.eval(x), a, b);
        }
        let mut i2 = vec![0.0; n + 1];
        for k in (0..n).rev() {
            i2[k] = i2[k + 1] + c1[k];
        }
        if i1.iter().chain(&i2).any(|v| !v.is_finite()) {
            return Err(Error::Singular("mode integrals diverged".into()));
        }
        let d = 1e-3;
        let origin = if ell == 0 {
            [q(0.0), 0.0]
        } else {
            [(8.0 * q(d) - q(2.0 * d)) / (6.0 * d), 0.0]
        };
        Ok(Self {
            ell,
            ds,
            n,
            h,
            i1,
            i2,
            origin,
        })
    }

    pub fn ell(&self) -> u32 {
        self.ell
    }

    pub fn s_max(&self) -> f64 {
        self.n as f64 * self.ds
    }

    /// −∫₀^∞ g₂h: the limit of U·cosh s as s → ∞.
    pub fn boundary_limit(&self) -> f64 {
        -self.i1[self.n]
    }

    fn integrals(&self, s: f64) -> (f64, f64, f64) {
        if s >= self.s_max() {
            return (self.i1[self.n], 0.0, 0.0);
        }
        let k = ((s / self.ds).floor() as usize).min(self.n - 1);
        let a = k as f64 * self.ds;
        let rule = FixedRule::new(MODE_RULE);
        let (mut p1, mut p2) = (0.0, 0.0);
        if s > a {
            for (x, w) in rule.mapped(a, s) {
                let (g1, g2) = g_pair(self.ell, x);
                let hx = self.h.eval(x);
                p1 += w * g2[0] * hx;
                p2 += w * g1[0] * hx;
            }
        }
        (self.i1[k] + p1, self.i2[k] - p2, self.h.eval(s))
    }

    /// V = U·cosh s and its first two s-derivatives.
    /// Negative s is the smooth continuation through the origin: even for
    /// ℓ = 0, odd for ℓ = 1.
    pub fn v(&self, s: f64) -> (f64, f64, f64) {
        let a = s.abs();
        let (v, d1, d2) = if a < SMALL_S { self.v_series(a) } else { self.v_full(a) };
        match (s < 0.0, self.ell) {
            (false, _) => (v, d1, d2),
            (true, 0) => (v, -d1, d2),
            (true, _) => (-v, d1, -d2),
        }
    }

    fn v_series(&self, s: f64) -> (f64, f64, f64) {
        let u0 = -self.i2[0];
        if self.ell == 0 {
            let u2 = (self.origin[0] - u0) / 3.0;
            let v2 = u2 + u0;
            return (u0 + 0.5 * v2 * s * s, v2 * s, v2);
        }
        let c = u0 / 3.0;
        let d = (self.origin[0] - 7.0 * c / 3.0) / 10.0;
        let e = d + 0.5 * c;
        (c * s + e * s * s * s, c + 3.0 * e * s * s, 6.0 * e * s)
    }

    fn v_full(&self, s: f64) -> (f64, f64, f64) {
        let (i1, i2, h) = self.integrals(s);
        let (g1, g2) = g_pair(self.ell, s);
        let g = -(g1[0] * i1 + g2[0] * i2);
        let gp = -(g1[1] * i1 + g2[1] * i2);
        let sh = s.sinh();
        let l = self.ell as f64;
        let gpp = l * (l + 1.0) * g / (sh * sh) + h;
        let cth = 1.0 / s.tanh();
        let v = g * cth;
        let vp = gp * cth - g / (sh * sh);
        let vpp = gpp * cth - 2.0 * gp / (sh * sh) + 2.0 * g * cth / (sh * sh);
        (v, vp, vpp)
    }

    pub fn u(&self, s: f64) -> f64 {
        self.v(s).0 / s.cosh()
    }
}

/// U₀ (ℓ = 0) and U_r (ℓ = 1) with A^M_μ = U_μ(y)/τ = V_μ(s)/t for t − r ≥ 4.
#[derive(Debug, Clone)]
pub struct InteriorProfile {
    pub u0: ModeSolution,
    pub ur: ModeSolution,
}

pub const MODE_DS: f64 = 0.0125;

/// Solve △_yU + U = Q with Q₀ = G·cosh s and Q_r = −G·sinh s, the radial
/// parts of −(x_μ/τ)G.
pub fn compute_u_elliptic(src: &SourceProfile) -> Result<InteriorProfile> {
    let s_max = src.s_max().max(8.0 * MODE_DS);
    let u0 = ModeSolution::solve(0, |s| src.g_s(s) * s.cosh(), s_max, MODE_DS)?;
    let ur = ModeSolution::solve(1, |s| -src.g_s(s) * s.sinh(), s_max, MODE_DS)?;
    Ok(InteriorProfile { u0, ur })
}

impl InteriorProfile {
    pub fn mode(&self, c: Component) -> &ModeSolution {
        match c {
            Component::Time => &self.u0,
            Component::Radial => &self.ur,
        }
    }

    pub fn v(&self, c: Component, s: f64) -> (f64, f64, f64) {
        self.mode(c).v(s)
    }

    pub fn u(&self, c: Component, rho: f64) -> f64 {
        self.mode(c).u(rho.atanh())
    }

    /// Limits of (1−ρ²)^{−1/2}U_μ as ρ → 1 for μ = 0, r.
    pub fn boundary_limit(&self) -> (f64, f64) {
        (self.u0.boundary_limit(), self.ur.boundary_limit())
    }

    pub fn boundary_limit_l(&self) -> f64 {
        let (a, b) = self.boundary_limit();
        a + b
    }

    /// (A₀, A_r) = (V₀, V_r)(s)/t inside the cone.
    pub fn am(&self, t: f64, r: f64) -> (f64, f64) {
        let s = (r / t).atanh();
        (self.u0.v(s).0 / t, self.ur.v(s).0 / t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FmSample {
    pub q: f64,
    pub f0: f64,
    pub fr: f64,
    pub error_estimate: f64,
}

impl FmSample {
    pub fn fl(&self) -> f64 {
        self.f0 + self.fr
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiationLimit {
    pub samples: Vec<FmSample>,
    pub extrapolation_order: usize,
    pub ladder: Vec<f64>,
}

pub const DEFAULT_R_LADDER: [f64; 4] = [50.0, 100.0, 200.0, 400.0];

/// lim r·A^M_μ at fixed q by Richardson extrapolation in 1/r over a doubling
/// r-ladder.
pub fn radiation_limit_fm(q: f64, src: &SourceProfile, ladder: &[f64], depth: usize, tol: f64) -> Result<FmSample> {
    if ladder.len() < depth + 1 || ladder.windows(2).any(|w| (w[1] - 2.0 * w[0]).abs() > 1e-9 * w[1]) {
        return Err(Error::InvalidInput("r-ladder must double at each rung and have depth+1 entries".into()));
    }
    let mut s0 = Vec::new();
    let mut sr = Vec::new();
    let mut qerr = 0.0f64;
    for &r in ladder {
        let v = compute_am(r - q, r, src, tol)?;
        s0.push(r * v.a0);
        sr.push(r * v.ar);
        qerr = qerr.max(r * v.error);
    }
    for (name, s) in [("A0", &s0), ("Ar", &sr)] {
        let d: Vec<f64> = s.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
        let floor = 1e-9 * s.iter().fold(0.0f64, |m, v| m.max(v.abs())) + 10.0 * qerr + 1e-300;
        if d.windows(2).any(|w| w[1] > w[0] && w[1] > floor) {
            return Err(Error::Fit(format!(
                "r-ladder for r·{name} at q={q} is not in the asymptotic regime (differences {d:?}, floor {floor:e})"
            )));
        }
    }
    let e0 = richardson_halving(&s0, depth)?;
    let er = richardson_halving(&sr, depth)?;
    Ok(FmSample {
        q,
        f0: e0.value,
        fr: er.value,
        error_estimate: e0.error_estimate + er.error_estimate + qerr,
    })
}

pub fn radiation_limit_table(qs: &[f64], src: &SourceProfile, ladder: &[f64], depth: usize, tol: f64, exec: Exec) -> Result<RadiationLimit> {
    let samples: Vec<Result<FmSample>> = exec.map(qs, |&q| radiation_limit_fm(q, src, ladder, depth, tol));
    Ok(RadiationLimit {
        samples: samples.into_iter().collect::<Result<_>>()?,
        extrapolation_order: depth,
        ladder: ladder.to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JacobianCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub lhs_error: f64,
    pub rhs_error: f64,
}

impl JacobianCheck {
    pub fn relative_defect(&self) -> f64 {
        (self.lhs - self.rhs).abs() / self.lhs.abs().max(1e-300)
    }
}

/// Both sides of ∫_{H₁}F dH₁ = ∫_{S²}∫₀^{R(η)} P(y(R,η))·R²(t − r⟨η,ω⟩)/(t−R)⁴ dR dσ(η),
/// where F = (1−ρ²)²P, y = (x − Rη)/(t − R) and R(η) = (t²−r²)/(2(t−r⟨η,ω⟩)).
pub fn check_jacobian_lemma(t: f64, r: f64, p: &dyn Fn(f64) -> f64, tol: f64) -> Result<JacobianCheck> {
    if !(t > r && r >= 0.0 && t.is_finite()) {
        return Err(Error::OutsideCone { t, r });
    }
    let lhs = h1_integrate(|rho| ((1.0 - rho) * (1.0 + rho)).powi(2) * p(rho), tol)?;
    let opts = QuadOptions {
        abs_tol: 1e-3 * tol * lhs.abs().max(1e-12),
        rel_tol: 0.1 * tol,
        max_panels: 1000,
    };
    let errors = InnerErrors::new();
    let outer = |mu: f64| -> [f64; 1] {
        let big_r = (t * t - r * r) / (2.0 * (t - r * mu));
        let f = |u: f64| -> [f64; 1] {
            let rr = big_r * (1.0 - u * u);
            let num = (r * r - 2.0 * r * rr * mu + rr * rr).max(0.0);
            let rho = (num.sqrt() / (t - rr)).min(1.0);
            let jac = 2.0 * big_r * u;
            [p(rho) * rr * rr * (t - r * mu) / (t - rr).powi(4) * jac]
        };
        errors.record(integrate_n(f, 0.0, 1.0, opts), 1.0)
    };
    let res = integrate_n(
        outer,
        -1.0,
        1.0,
        QuadOptions {
            abs_tol: 1e-2 * tol * lhs.abs().max(1e-12),
            rel_tol: tol,
            max_panels: 1000,
        },
    )?;
    let inner_err = errors.finish()?;
    let two_pi = 2.0 * std::f64::consts::PI;
    Ok(JacobianCheck {
        lhs,
        rhs: two_pi * res.value[0],
        lhs_error: tol * lhs.abs(),
        rhs_error: two_pi * (res.error + inner_err),
    })
}

/// Tabulated A^M for fast evaluation with exact derivatives of the
/// interpolant.  Deep inside the cone (q ≤ −4) A^M = V(s)/t is exact; on the
/// strip −4 < q ≤ 0 the product W = (t+r)·A^M is tabulated as a cubic
/// spline in q times a Chebyshev series in ξ = 1/(t+r) ∈ [0, ξ_max];
/// A^M vanishes for q > 0.
#[derive(Debug, Clone)]
pub struct AmTable {
    profile: InteriorProfile,
    xi_max: f64,
    q_lo: f64,
    coeffs: [Vec<CubicSpline>; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmTableSpec {
    pub dq: f64,
    pub n_xi: usize,
    pub xi_max: f64,
    pub tol: f64,
}

impl Default for AmTableSpec {
    fn default() -> Self {
        Self {
            dq: 0.05,
            n_xi: 14,
            xi_max: 0.25,
            tol: 1e-7,
        }
    }
}

const STRIP_EDGE: f64 = -4.0;

impl AmTable {
    pub fn build(src: &SourceProfile, spec: AmTableSpec, exec: Exec) -> Result<Self> {
        let profile = compute_u_elliptic(src)?;
        let q_lo = STRIP_EDGE - 6.0 * spec.dq;
        let nq_neg = ((0.0 - q_lo) / spec.dq).round() as usize;
        let nq = nq_neg + 1 + 6;
        let qs: Vec<f64> = (0..nq).map(|i| q_lo + spec.dq * i as f64).collect();
        let xis = Chebyshev::nodes(0.0, spec.xi_max, spec.n_xi);
        let points: Vec<(f64, f64)> = qs.iter().flat_map(|&q| xis.iter().map(move |&x| (q, x))).collect();
        let vals: Vec<Result<[f64; 2]>> = exec.map(&points, |&(q, xi)| {
            if q > 0.0 {
                return Ok([0.0, 0.0]);
            }
            let t = 0.5 * (1.0 / xi - q);
            let r = 0.5 * (1.0 / xi + q);
            if q <= STRIP_EDGE {
                let (a0, ar) = profile.am(t, r);
                return Ok([a0 / xi, ar / xi]);
            }
            let v = compute_am(t, r, src, spec.tol)?;
            Ok([v.a0 / xi, v.ar / xi])
        });
        let vals: Vec<[f64; 2]> = vals.into_iter().collect::<Result<_>>()?;
        let nx = spec.n_xi;
        let mut coeffs: [Vec<CubicSpline>; 2] = [Vec::new(), Vec::new()];
        for (c, out) in coeffs.iter_mut().enumerate() {
            let per_q: Vec<Vec<f64>> = (0..nq)
                .map(|i| {
                    let row: Vec<f64> = (0..nx).map(|j| vals[i * nx + j][c]).collect();
                    Chebyshev::from_node_values(0.0, spec.xi_max, &row).coeffs().to_vec()
                })
                .collect();
            for j in 0..nx {
                let y: Vec<f64> = per_q.iter().map(|cs| cs[j]).collect();
                out.push(CubicSpline::new(qs.clone(), y)?);
            }
        }
        Ok(Self {
            profile,
            xi_max: spec.xi_max,
            q_lo,
            coeffs,
        })
    }

    pub fn profile(&self) -> &InteriorProfile {
        &self.profile
    }

    fn index(c: Component) -> usize {
        match c {
            Component::Time => 0,
            Component::Radial => 1,
        }
    }

    /// W(q, ξ) and its partials (W, W_q, W_ξ, W_qq, W_qξ, W_ξξ).
    fn w(&self, c: Component, q: f64, xi: f64) -> [f64; 6] {
        let n = self.coeffs[0].len();
        let (tb, db, ddb) = Chebyshev::basis(0.0, self.xi_max, n, xi);
        let mut out = [0.0; 6];
        for (j, sp) in self.coeffs[Self::index(c)].iter().enumerate() {
            let (c0, c1, c2) = sp.eval_derivs(q);
            out[0] += c0 * tb[j];
            out[1] += c1 * tb[j];
            out[2] += c0 * db[j];
            out[3] += c2 * tb[j];
            out[4] += c1 * db[j];
            out[5] += c0 * ddb[j];
        }
        out
    }

    /// F^M_μ(q) = lim r·A^M_μ = W(q, 0)/2.
    pub fn fm(&self, c: Component, q: f64) -> f64 {
        if q > 0.0 {
            return 0.0;
        }
        if q <= STRIP_EDGE {
            let (a, b) = self.profile.boundary_limit();
            return match c {
                Component::Time => a,
                Component::Radial => b,
            };
        }
        0.5 * self.w(c, q, 0.0)[0]
    }

    pub fn fm_profile(&self, c: Component, grid: &QProfile) -> QProfile {
        QProfile {
            q0: grid.q0,
            dq: grid.dq,
            values: grid.q_nodes().iter().map(|&q| self.fm(c, q)).collect(),
        }
    }

    /// A^M_μ as a jet in (t, r).
    pub fn eval_jet(&self, c: Component, t: Jet, r: Jet) -> Jet {
        let q = r - t;
        if q.v > 0.0 || t.v <= 2.0 {
            return Jet::ZERO;
        }
        if q.v <= STRIP_EDGE {
            let s = (r / t).atanh();
            let (v, d1, d2) = self.profile.v(c, s.v);
            return s.compose(v, d1, d2) / t;
        }
        let sum = t + r;
        let xi = sum.recip();
        if xi.v > self.xi_max || q.v < self.q_lo {
            return Jet::ZERO;
        }
        let w = self.w(c, q.v, xi.v);
        Jet::compose2(q, xi, w[0], w[1], w[2], w[3], w[4], w[5]) * xi
    }

    pub fn eval(&self, c: Component, t: f64, r: f64) -> f64 {
        self.eval_jet(c, Jet::var_t(t), Jet::var_r(r)).v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scattering_data::{default_rho_grid, AmplitudeFamily};
    use std::f64::consts::PI;

    fn a_minus_source() -> SourceProfile {
        SourceProfile::from_fn(default_rho_grid(), |r| -((1.0 - r * r).powf(3.5))).unwrap()
    }

    #[test]
    fn f_equals_weighted_p() {
        let src = a_minus_source();
        for (f, g) in src.f_nodes().iter().zip(src.g_nodes()) {
            assert!((f - g).abs() <= 1e-12 * g.abs().max(1e-300) + 1e-300);
        }
    }

    #[test]
    fn zero_source_and_initial_slice() {
        let zero = SourceProfile::from_fn(default_rho_grid(), |_| 0.0).unwrap();
        let v = compute_am(20.0, 5.0, &zero, 1e-8).unwrap();
        assert_eq!((v.a0, v.ar), (0.0, 0.0));
        let v = compute_am(2.0, 0.5, &a_minus_source(), 1e-8).unwrap();
        assert_eq!((v.a0, v.ar), (0.0, 0.0));
        let prof = compute_u_elliptic(&zero).unwrap();
        assert_eq!(prof.boundary_limit(), (0.0, 0.0));
        assert_eq!(prof.u(Component::Time, 0.3), 0.0);
    }

    #[test]
    fn quadrature_matches_elliptic_profile() {
        let src = a_minus_source();
        let prof = compute_u_elliptic(&src).unwrap();
        let (t, r) = (20.0, 5.0);
        let v = compute_am(t, r, &src, 1e-9).unwrap();
        let tau = (t * t - r * r).sqrt();
        let u0 = prof.u(Component::Time, 0.25);
        let ur = prof.u(Component::Radial, 0.25);
        assert!((v.a0 * tau - u0).abs() <= 1e-4 * u0.abs(), "{} vs {}", v.a0 * tau, u0);
        assert!((v.ar * tau - ur).abs() <= 1e-4 * ur.abs(), "{} vs {}", v.ar * tau, ur);
    }

    #[test]
    fn boundary_limit_is_charge_at_infinity() {
        let prof = compute_u_elliptic(&a_minus_source()).unwrap();
        let q = prof.boundary_limit_l();
        assert!((q - PI / 32.0).abs() <= 1e-6 * PI / 32.0, "{q}");
    }

    #[test]
    fn composed_operator_fits_frozen_coefficients() {
        for ell in [0, 1] {
            for s in [0.4, 1.0, 2.0, 3.5] {
                let fit = fit_radial_operator(ell, s, 1e-2).unwrap();
                let frozen = radial_operator_coefficients(ell, s);
                for k in 0..3 {
                    assert!((fit[k] - frozen[k]).abs() < 1e-5 * (1.0 + frozen[k].abs()), "ℓ={ell} s={s} {fit:?} {frozen:?}");
                }
            }
        }
    }

    #[test]
    fn manufactured_profile_is_recovered() {
        let u = |s: f64| s.cosh().powi(-3);
        let omega = [0.36, 0.48, 0.8];
        let q = |s: f64| {
            let f = |p: [f64; 4]| u(hyperboloid_polar(p).0);
            composed_hyperboloid_laplacian(&f, hyperboloid_point(s, omega), 1e-2) + u(s)
        };
        let sol = ModeSolution::solve(0, q, 14.0, MODE_DS).unwrap();
        for k in 0..=60 {
            let s = 0.1 * k as f64;
            assert!((sol.u(s) - u(s)).abs() <= 1e-6, "s={s}: {} vs {}", sol.u(s), u(s));
        }
        let ur = |s: f64| s.sinh() * s.cosh().powi(-4);
        let q1 = |s: f64| {
            let f = |p: [f64; 4]| {
                let (sp, w) = hyperboloid_polar(p);
                ur(sp) * w[0]
            };
            let p = hyperboloid_point(s.max(1e-6), omega);
            composed_hyperboloid_laplacian(&f, p, 1e-2) / (omega[0]) + ur(s)
        };
        let sol = ModeSolution::solve(1, q1, 14.0, MODE_DS).unwrap();
        for k in 1..=60 {
            let s = 0.1 * k as f64;
            assert!((sol.u(s) - ur(s)).abs() <= 1e-6, "s={s}: {} vs {}", sol.u(s), ur(s));
        }
    }

    #[test]
    fn origin_series_matches_full_evaluation() {
        let prof = compute_u_elliptic(&a_minus_source()).unwrap();
        for c in [Component::Time, Component::Radial] {
            let m = prof.mode(c);
            for s in [0.5 * SMALL_S, SMALL_S, 3.0 * SMALL_S] {
                let a = m.v_series(s);
                let b = m.v_full(s);
                assert!((a.0 - b.0).abs() < 1e-10, "{c:?} {a:?} {b:?}");
                assert!((a.1 - b.1).abs() < 1e-7, "{c:?} {a:?} {b:?}");
                assert!((a.2 - b.2).abs() < 1e-4, "{c:?} {a:?} {b:?}");
            }
        }
    }

    #[test]
    fn plus_sign_composition_shifts_the_dipole_sector() {
        let s = 1.3;
        let p = hyperboloid_point(s, [0.6, 0.48, 0.64]);
        let f = |q: [f64; 4]| {
            let (sq, w) = hyperboloid_polar(q);
            sq * sq * w[0]
        };
        let (b, r) = composed_vector_field_squares(&f, p, 1e-2);
        let y = 0.6;
        assert!(((r / (s * s * y)) + 2.0).abs() < 1e-6);
        assert!((((b + r) - (b - r)) / (s * s * y) + 4.0).abs() < 1e-6);
    }

    #[test]
    fn derivatives_of_v_are_consistent() {
        let prof = compute_u_elliptic(&a_minus_source()).unwrap();
        let h = 1e-4;
        for c in [Component::Time, Component::Radial] {
            for s in [0.05, 0.7, 2.3, 5.0] {
                let (v, d1, d2) = prof.v(c, s);
                let (vp, _, _) = prof.v(c, s + h);
                let (vm, _, _) = prof.v(c, s - h);
                assert!(((vp - vm) / (2.0 * h) - d1).abs() < 1e-7 * (1.0 + d1.abs()));
                assert!(((vp - 2.0 * v + vm) / (h * h) - d2).abs() < 1e-4 * (1.0 + d2.abs()));
            }
        }
    }

    #[test]
    fn jacobian_examples() {
        let one = |_: f64| 1.0;
        let r = check_jacobian_lemma(10.0, 3.0, &one, 1e-9).unwrap();
        assert!((r.lhs - 4.0 * PI / 3.0).abs() < 1e-6 * 4.0 * PI / 3.0);
        assert!((r.rhs - 4.0 * PI / 3.0).abs() < 1e-6 * 4.0 * PI / 3.0, "{}", r.rhs);
        let zero = |_: f64| 0.0;
        let r = check_jacobian_lemma(10.0, 3.0, &zero, 1e-9).unwrap();
        assert_eq!((r.lhs, r.rhs), (0.0, 0.0));
        let p = |rho: f64| (1.0 - rho * rho).max(0.0).powf(1.5);
        let r = check_jacobian_lemma(10.0, 3.0, &p, 1e-9).unwrap();
        assert!(r.relative_defect() < 1e-6, "{r:?}");
    }

    #[test]
    fn support_of_am() {
        let src = a_minus_source();
        let v = compute_am(30.0, 31.0, &src, 1e-8).unwrap();
        assert_eq!((v.a0, v.ar), (0.0, 0.0));
        let f = radiation_limit_fm(1.0, &src, &DEFAULT_R_LADDER, 2, 1e-8).unwrap();
        assert_eq!((f.f0, f.fr), (0.0, 0.0));
    }

    #[test]
    fn amplitude_families_give_same_source() {
        let a = KleinGordonAmplitudes::from_families(
            &AmplitudeFamily::Zero,
            &AmplitudeFamily::Power { re: 1.0, im: 0.0, exponent: 1.75 },
            1.75,
            1.0,
            default_rho_grid(),
        )
        .unwrap();
        let s1 = SourceProfile::from_amplitudes(&a).unwrap();
        let s2 = a_minus_source();
        for (x, y) in s1.g_nodes().iter().zip(s2.g_nodes()) {
            assert!((x - y).abs() < 1e-14);
        }
    }
}
