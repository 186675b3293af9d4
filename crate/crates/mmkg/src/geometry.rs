//! Coordinates, null-frame contractions, smooth cutoffs and the
//! hyperboloid measure.
//!
//! Conventions: signature (−,+,+,+), q = r − t, L = ∂_t + ∂_r,
//! L̄ = ∂_t − ∂_r.  Fields are given by their lower components A₀, A_r.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::{integrate, QuadOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpacetimePoint {
    pub t: f64,
    pub r: f64,
}

impl SpacetimePoint {
    pub fn new(t: f64, r: f64) -> Result<Self> {
        if !(t.is_finite() && r.is_finite()) || r < 0.0 {
            return Err(Error::InvalidInput(format!("bad spacetime point (t={t}, r={r})")));
        }
        Ok(Self { t, r })
    }

    pub fn q(&self) -> f64 {
        self.r - self.t
    }

    pub fn is_interior(&self) -> bool {
        self.t > self.r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperCoords {
    pub tau: f64,
    pub rho: f64,
}

impl HyperCoords {
    pub fn new(tau: f64, rho: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) || !(0.0..1.0).contains(&rho) {
            return Err(Error::InvalidInput(format!("bad hyperboloidal point (tau={tau}, rho={rho})")));
        }
        Ok(Self { tau, rho })
    }

    /// Inverse map: t = τ/√(1−ρ²), r = ρ·t.
    pub fn to_spacetime(&self) -> SpacetimePoint {
        let t = self.tau / ((1.0 - self.rho) * (1.0 + self.rho)).sqrt();
        SpacetimePoint { t, r: self.rho * t }
    }

    /// Hyperbolic radius s with ρ = tanh s.
    pub fn s(&self) -> f64 {
        self.rho.atanh()
    }
}

pub fn to_hyperboloidal(p: SpacetimePoint) -> Result<HyperCoords> {
    if !p.is_interior() || p.r < 0.0 {
        return Err(Error::OutsideCone { t: p.t, r: p.r });
    }
    let tau = ((p.t - p.r) * (p.t + p.r)).sqrt();
    Ok(HyperCoords { tau, rho: p.r / p.t })
}

/// Quintic smootherstep on [0,1] with its first two derivatives.
pub fn smootherstep(x: f64) -> (f64, f64, f64) {
    if x <= 0.0 {
        (0.0, 0.0, 0.0)
    } else if x >= 1.0 {
        (1.0, 0.0, 0.0)
    } else {
        let v = x * x * x * (10.0 + x * (-15.0 + 6.0 * x));
        let d1 = 30.0 * x * x * (1.0 - x) * (1.0 - x);
        let d2 = 60.0 * x * (1.0 - x) * (1.0 - 2.0 * x);
        (v, d1, d2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutoffKind {
    /// 1 for s ≤ 1/2, 0 for s ≥ 3/4; used as χ(⟨q⟩/r).
    ChiInterior,
    /// Initial-slice exterior cutoff: 0 for s ≤ −1, 1 for s ≥ −1/2.
    ChiExInit,
    /// Far-field exterior cutoff: 0 for q ≤ 1, 1 for q ≥ 2.
    ChiExFar,
    /// Light-cone cutoff: 1 for q ≤ −1, 0 for q ≥ −1/2.
    ChiLc,
    /// Backward time cutoff: 1 for s ≤ 1/4, 0 for s ≥ 1/2.
    ChiTilde,
}

impl CutoffKind {
    pub fn default_knots(self) -> (f64, f64) {
        match self {
            CutoffKind::ChiInterior => (0.5, 0.75),
            CutoffKind::ChiExInit => (-1.0, -0.5),
            CutoffKind::ChiExFar => (1.0, 2.0),
            CutoffKind::ChiLc => (-1.0, -0.5),
            CutoffKind::ChiTilde => (0.25, 0.5),
        }
    }

    /// Whether the cutoff rises from 0 to 1 across its knots.
    pub fn rising(self) -> bool {
        matches!(self, CutoffKind::ChiExInit | CutoffKind::ChiExFar)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffSpec {
    pub kind: CutoffKind,
    pub knots: (f64, f64),
}

impl CutoffSpec {
    pub fn new(kind: CutoffKind, lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidInput(format!("cutoff knots must satisfy lo < hi, got ({lo}, {hi})")));
        }
        Ok(Self { kind, knots: (lo, hi) })
    }

    pub fn standard(kind: CutoffKind) -> Self {
        Self {
            kind,
            knots: kind.default_knots(),
        }
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.eval_derivs(s).0
    }

    /// Value, first and second derivative with respect to s.
    pub fn eval_derivs(&self, s: f64) -> (f64, f64, f64) {
        let (lo, hi) = self.knots;
        let w = hi - lo;
        let (v, d1, d2) = smootherstep((s - lo) / w);
        if self.kind.rising() {
            (v, d1 / w, d2 / (w * w))
        } else {
            (1.0 - v, -d1 / w, -d2 / (w * w))
        }
    }
}

pub fn cutoff_eval(spec: &CutoffSpec, s: f64) -> f64 {
    spec.eval(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameComponents {
    pub a_tau: f64,
    pub a_l: f64,
    pub a_lbar: f64,
}

/// A_L = A(L) and A_L̄ = A(L̄) for lower components; valid everywhere.
pub fn null_components(a0: f64, ar: f64) -> (f64, f64) {
    (a0 + ar, a0 - ar)
}

/// Coefficient of ∂_τ in A^μ∂_μ at an interior point.
///
/// With A^t = −A₀, A^r = A_r and ∂_t = (t/τ)∂_τ + …, ∂_r = −(r/τ)∂_τ + …,
/// the ∂_τ coefficient is −(t·A₀ + r·A_r)/τ.
pub fn a_tau(a0: f64, ar: f64, t: f64, r: f64) -> f64 {
    let tau = ((t - r) * (t + r)).sqrt();
    -(t * a0 + r * ar) / tau
}

pub fn frame_components(a0: f64, ar: f64, p: SpacetimePoint) -> Result<FrameComponents> {
    let h = to_hyperboloidal(p)?;
    let (a_l, a_lbar) = null_components(a0, ar);
    Ok(FrameComponents {
        a_tau: -(p.t * a0 + p.r * ar) / h.tau,
        a_l,
        a_lbar,
    })
}

/// Tangential coefficient: the factor multiplying ∂_ρφ (at fixed τ) in
/// A^μ∂_μφ, i.e. A^μ∂_μρ with ρ = r/t.
pub fn a_rho(a0: f64, ar: f64, t: f64, r: f64) -> f64 {
    a0 * r / (t * t) + ar / t
}

/// Upper bound of the hyperbolic radius used for dH₁ integrals; tanh(20) is 1
/// to double precision, so integrands must already vanish there.
const SIGMA_MAX: f64 = 20.0;

/// 4π∫₀¹ f(ρ)(1−ρ²)⁻²ρ² dρ, computed in the variable ρ = tanh σ where the
/// integrand becomes f(tanh σ)·sinh²σ.
pub fn h1_integrate<F: Fn(f64) -> f64>(f: F, tol: f64) -> Result<f64> {
    let g = |sigma: f64| {
        let sh = sigma.sinh();
        let v = f(sigma.tanh()) * sh * sh;
        if v.is_finite() {
            v
        } else {
            f64::NAN
        }
    };
    // Endpoint validation: the weighted integrand must have decayed well
    // before the precision horizon of tanh.
    let peak = (0..=16).map(|k| g(k as f64).abs()).fold(0.0f64, f64::max);
    let tails: Vec<f64> = [12.0, 14.0, 16.0].iter().map(|&s| g(s).abs()).collect();
    if tails.iter().any(|v| !v.is_finite()) || !peak.is_finite() || tails[2] > 1e-6 * peak {
        return Err(Error::NonIntegrable {
            endpoint: "rho = 1",
            detail: format!(
                "weighted integrand f(rho)(1-rho^2)^-2 rho^2 does not decay: |g| at sigma=12,14,16 is {:e}, {:e}, {:e}",
                tails[0], tails[1], tails[2]
            ),
        });
    }
    let r = integrate(g, 0.0, SIGMA_MAX, QuadOptions::new(tol * 1e-3, tol))?;
    Ok(4.0 * std::f64::consts::PI * r.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn hyperboloidal_examples() {
        let h = to_hyperboloidal(SpacetimePoint::new(2.0, 0.0).unwrap()).unwrap();
        assert_eq!((h.tau, h.rho), (2.0, 0.0));
        let h = to_hyperboloidal(SpacetimePoint::new(5.0, 3.0).unwrap()).unwrap();
        assert_relative_eq!(h.tau, 4.0, max_relative = 1e-15);
        assert_relative_eq!(h.rho, 0.6, max_relative = 1e-15);
        assert!(matches!(
            to_hyperboloidal(SpacetimePoint::new(2.0, 2.0).unwrap()),
            Err(Error::OutsideCone { .. })
        ));
    }

    #[test]
    fn cutoff_examples() {
        let chi = CutoffSpec::standard(CutoffKind::ChiInterior);
        assert_eq!(chi.eval(0.5), 1.0);
        assert_eq!(chi.eval(0.75), 0.0);
        let far = CutoffSpec::standard(CutoffKind::ChiExFar);
        assert_eq!(far.eval(1.5), 0.5);
        assert_eq!(far.eval(1.0), 0.0);
        assert_eq!(far.eval(2.0), 1.0);
        let lc = CutoffSpec::standard(CutoffKind::ChiLc);
        assert_eq!(lc.eval(-1.0), 1.0);
        assert_eq!(lc.eval(-0.5), 0.0);
        let init = CutoffSpec::standard(CutoffKind::ChiExInit);
        assert_eq!(init.eval(-1.0), 0.0);
        assert_eq!(init.eval(-0.5), 1.0);
        let tilde = CutoffSpec::standard(CutoffKind::ChiTilde);
        assert_eq!(tilde.eval(0.25), 1.0);
        assert_eq!(tilde.eval(0.5), 0.0);
    }

    #[test]
    fn cutoff_derivatives_match_finite_differences() {
        for kind in [
            CutoffKind::ChiInterior,
            CutoffKind::ChiExInit,
            CutoffKind::ChiExFar,
            CutoffKind::ChiLc,
            CutoffKind::ChiTilde,
        ] {
            let c = CutoffSpec::standard(kind);
            let (lo, hi) = c.knots;
            let h = 1e-5;
            for k in 1..20 {
                let s = lo + (hi - lo) * k as f64 / 20.0;
                let (_, d1, d2) = c.eval_derivs(s);
                let fd1 = (c.eval(s + h) - c.eval(s - h)) / (2.0 * h);
                let fd2 = (c.eval(s + h) - 2.0 * c.eval(s) + c.eval(s - h)) / (h * h);
                assert!((d1 - fd1).abs() < 1e-6, "{kind:?} d1 at {s}");
                assert!((d2 - fd2).abs() < 1e-3 * (1.0 + d2.abs()), "{kind:?} d2 at {s}");
            }
        }
    }

    #[test]
    fn frame_examples() {
        let p = SpacetimePoint::new(5.0, 3.0).unwrap();
        let f = frame_components(1.0, 0.0, p).unwrap();
        assert_relative_eq!(f.a_tau, -1.25, max_relative = 1e-15);
        let z = frame_components(0.0, 0.0, p).unwrap();
        assert_eq!((z.a_tau, z.a_l, z.a_lbar), (0.0, 0.0, 0.0));
        let c = 0.3;
        let r = 7.0;
        let (al, _) = null_components(c / r, 0.0);
        assert_relative_eq!(r * al, c, max_relative = 1e-15);
        assert!(frame_components(1.0, 0.0, SpacetimePoint::new(1.0, 1.0).unwrap()).is_err());
    }

    #[test]
    fn h1_examples() {
        assert_eq!(h1_integrate(|_| 0.0, 1e-10).unwrap(), 0.0);
        let v = h1_integrate(|r| (1.0 - r * r).powi(2), 1e-12).unwrap();
        assert_relative_eq!(v, 4.0 * PI / 3.0, max_relative = 1e-10);
        let v = h1_integrate(|r| (1.0 - r * r).powf(3.5), 1e-12).unwrap();
        assert_relative_eq!(v, 4.0 * PI * PI / 32.0, max_relative = 1e-10);
    }

    #[test]
    fn h1_rejects_non_integrable_profiles() {
        assert!(matches!(h1_integrate(|_| 1.0, 1e-8), Err(Error::NonIntegrable { .. })));
        assert!(matches!(
            h1_integrate(|r| (1.0 - r * r).powf(0.9), 1e-8),
            Err(Error::NonIntegrable { .. })
        ));
    }
}
