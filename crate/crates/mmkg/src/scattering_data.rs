//! Scattering data: Klein–Gordon amplitudes a±(ρ) on the unit hyperboloid
//! and radiation-field modes F_{μ,ℓ}(q), with the derived charge q∞, the
//! second-order correction F⁽¹⁾ and the admissibility constraint.

use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{h1_integrate, CutoffKind, CutoffSpec};
use crate::interp::CubicSpline;
use crate::jet::Jet;

/// Upper end of the default hyperbolic-radius grid; profiles decaying like
/// (1−ρ²)^{7/4} are below 1e−9 there.
pub const DEFAULT_S_MAX: f64 = 7.0;
pub const DEFAULT_DS: f64 = 0.025;

/// ρ-grid nodes ρ_k = tanh(k·ds), uniform in the hyperbolic radius.
pub fn default_rho_grid() -> Vec<f64> {
    rho_grid(DEFAULT_S_MAX, DEFAULT_DS)
}

pub fn rho_grid(s_max: f64, ds: f64) -> Vec<f64> {
    let n = (s_max / ds).round() as usize;
    (0..=n).map(|k| (k as f64 * ds).tanh()).collect()
}

/// Closed-form amplitude families, all with a (1−ρ²)^α envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum AmplitudeFamily {
    Zero,
    /// c·(1−ρ²)^exponent.
    Power { re: f64, im: f64, exponent: f64 },
    /// c·(1−ρ²)^exponent·e^{−(s/width)²} with ρ = tanh s.
    PowerGaussian { re: f64, im: f64, exponent: f64, width: f64 },
}

impl AmplitudeFamily {
    pub fn eval(&self, rho: f64) -> Complex64 {
        match *self {
            AmplitudeFamily::Zero => Complex64::new(0.0, 0.0),
            AmplitudeFamily::Power { re, im, exponent } => {
                Complex64::new(re, im) * ((1.0 - rho) * (1.0 + rho)).max(0.0).powf(exponent)
            }
            AmplitudeFamily::PowerGaussian { re, im, exponent, width } => {
                let s = rho.atanh();
                Complex64::new(re, im) * ((1.0 - rho) * (1.0 + rho)).max(0.0).powf(exponent) * (-(s / width).powi(2)).exp()
            }
        }
    }
}

/// Complex radial profile on a ρ-grid, interpolated in s = atanh ρ and
/// extended by zero beyond the last node.
#[derive(Debug, Clone)]
pub struct ComplexProfile {
    rho: Vec<f64>,
    values: Vec<Complex64>,
    re: CubicSpline,
    im: CubicSpline,
    s_last: f64,
}

impl ComplexProfile {
    pub fn new(rho: Vec<f64>, values: Vec<Complex64>) -> Result<Self> {
        if rho.len() != values.len() || rho.len() < 4 {
            return Err(Error::InvalidInput("amplitude profile needs ≥4 nodes with matching values".into()));
        }
        if rho[0] != 0.0 || rho.iter().any(|r| !(0.0..1.0).contains(r)) {
            return Err(Error::InvalidInput("ρ-grid must start at 0 and stay inside [0,1)".into()));
        }
        let s: Vec<f64> = rho.iter().map(|r| r.atanh()).collect();
        let re = CubicSpline::new(s.clone(), values.iter().map(|v| v.re).collect())?;
        let im = CubicSpline::new(s.clone(), values.iter().map(|v| v.im).collect())?;
        let s_last = s[s.len() - 1];
        Ok(Self {
            rho,
            values,
            re,
            im,
            s_last,
        })
    }

    pub fn from_fn(rho: Vec<f64>, f: impl Fn(f64) -> Complex64) -> Result<Self> {
        let values = rho.iter().map(|&r| f(r)).collect();
        Self::new(rho, values)
    }

    pub fn zeros(rho: Vec<f64>) -> Result<Self> {
        let n = rho.len();
        Self::new(rho, vec![Complex64::new(0.0, 0.0); n])
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn s_max(&self) -> f64 {
        self.s_last
    }

    pub fn eval_s(&self, s: f64) -> Complex64 {
        if s > self.s_last {
            return Complex64::new(0.0, 0.0);
        }
        let s = s.abs();
        Complex64::new(self.re.eval(s), self.im.eval(s))
    }

    pub fn eval(&self, rho: f64) -> Complex64 {
        if rho >= 1.0 {
            return Complex64::new(0.0, 0.0);
        }
        self.eval_s(rho.abs().atanh())
    }

    /// Real and imaginary parts as jets, given s as a jet.
    pub fn eval_jet(&self, s: Jet) -> (Jet, Jet) {
        if s.v > self.s_last {
            return (Jet::ZERO, Jet::ZERO);
        }
        let (a, b, c) = self.re.eval_derivs(s.v);
        let (d, e, f) = self.im.eval_derivs(s.v);
        (s.compose(a, b, c), s.compose(d, e, f))
    }
}

#[derive(Debug, Clone)]
pub struct KleinGordonAmplitudes {
    pub a_plus: ComplexProfile,
    pub a_minus: ComplexProfile,
    pub alpha: f64,
    pub amplitude: f64,
}

impl KleinGordonAmplitudes {
    pub fn new(a_plus: ComplexProfile, a_minus: ComplexProfile, alpha: f64, amplitude: f64) -> Result<Self> {
        if a_plus.rho() != a_minus.rho() {
            return Err(Error::InvalidInput("a+ and a- must share one ρ-grid".into()));
        }
        if alpha < 1.75 {
            return Err(Error::InvalidInput(format!("decay exponent α must be ≥ 7/4, got {alpha}")));
        }
        Ok(Self {
            a_plus,
            a_minus,
            alpha,
            amplitude,
        })
    }

    pub fn from_families(plus: &AmplitudeFamily, minus: &AmplitudeFamily, alpha: f64, amplitude: f64, rho: Vec<f64>) -> Result<Self> {
        let ap = ComplexProfile::from_fn(rho.clone(), |r| plus.eval(r) * amplitude)?;
        let am = ComplexProfile::from_fn(rho, |r| minus.eval(r) * amplitude)?;
        Self::new(ap, am, alpha, amplitude)
    }

    pub fn zero(rho: Vec<f64>) -> Result<Self> {
        Self::new(ComplexProfile::zeros(rho.clone())?, ComplexProfile::zeros(rho)?, 1.75, 0.0)
    }

    pub fn rho(&self) -> &[f64] {
        self.a_plus.rho()
    }

    /// G(ρ) = |a+|² − |a−|² at the grid nodes.
    pub fn g_nodes(&self) -> Vec<f64> {
        self.a_plus
            .values()
            .iter()
            .zip(self.a_minus.values())
            .map(|(p, m)| p.norm_sqr() - m.norm_sqr())
            .collect()
    }
}

pub fn compute_qinfty(a: &KleinGordonAmplitudes) -> Result<f64> {
    let f = |rho: f64| a.a_minus.eval(rho).norm_sqr() - a.a_plus.eval(rho).norm_sqr();
    Ok(h1_integrate(f, 1e-11)? / (4.0 * std::f64::consts::PI))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    /// The time component A₀.
    Time,
    /// The radial-vector component A_r (A_i = ω_i A_r).
    Radial,
}

impl Component {
    pub fn label(self) -> &'static str {
        match self {
            Component::Time => "0",
            Component::Radial => "r",
        }
    }
}

/// A profile on a uniform q-grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QProfile {
    pub q0: f64,
    pub dq: f64,
    pub values: Vec<f64>,
}

impl QProfile {
    pub fn from_fn(q0: f64, dq: f64, n: usize, f: impl Fn(f64) -> f64) -> Self {
        Self {
            q0,
            dq,
            values: (0..n).map(|i| f(q0 + dq * i as f64)).collect(),
        }
    }

    pub fn default_grid(f: impl Fn(f64) -> f64) -> Self {
        Self::from_fn(-40.0, 0.05, 1601, f)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn q(&self, i: usize) -> f64 {
        self.q0 + self.dq * i as f64
    }

    pub fn q_nodes(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.q(i)).collect()
    }

    pub fn q_max(&self) -> f64 {
        self.q(self.len() - 1)
    }

    pub fn spline(&self) -> Result<CubicSpline> {
        CubicSpline::new(self.q_nodes(), self.values.clone())
    }

    pub fn same_grid(&self, other: &QProfile) -> bool {
        self.q0 == other.q0 && self.dq == other.dq && self.len() == other.len()
    }
}

/// Radiation-field family for the free (L̄) part of the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum RadiationFamily {
    Zero,
    /// c·e^{−(q/w)²}.
    Gaussian { c: f64, width: f64 },
    /// c·⟨q⟩^{−1+γ}·bump(q/cut) with a smooth compactly supported bump.
    PowerBump { c: f64, gamma: f64, cut: f64 },
    /// c·⟨q⟩^{exponent} without cutoff (used for decay-check controls).
    Power { c: f64, exponent: f64 },
}

impl RadiationFamily {
    pub fn eval(&self, q: f64) -> f64 {
        match *self {
            RadiationFamily::Zero => 0.0,
            RadiationFamily::Gaussian { c, width } => c * (-(q / width).powi(2)).exp(),
            RadiationFamily::PowerBump { c, gamma, cut } => {
                let x = (q / cut).abs();
                let bump = if x >= 1.0 { 0.0 } else { (1.0 - 1.0 / (1.0 - x * x)).exp() };
                c * (1.0 + q * q).powf(0.5 * (gamma - 1.0)) * bump
            }
            RadiationFamily::Power { c, exponent } => c * (1.0 + q * q).powf(0.5 * exponent),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiationMode {
    pub component: Component,
    pub ell: u32,
    pub f: QProfile,
    pub f1: QProfile,
}

impl RadiationMode {
    pub fn new(component: Component, ell: u32, f: QProfile) -> Result<Self> {
        let f1 = second_order_radiation(&f, ell)?;
        Ok(Self { component, ell, f, f1 })
    }

    pub fn column_name(&self) -> String {
        format!("F{}_l{}", self.component.label(), self.ell)
    }

    pub fn f1_column_name(&self) -> String {
        format!("F1{}_l{}", self.component.label(), self.ell)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiationModes {
    pub gamma: f64,
    pub modes: Vec<RadiationMode>,
}

impl RadiationModes {
    pub fn get(&self, component: Component, ell: u32) -> Option<&RadiationMode> {
        self.modes.iter().find(|m| m.component == component && m.ell == ell)
    }
}

/// F1_ℓ(q) = (ℓ(ℓ+1)/2)∫_q^∞ F_ℓ, normalised by F1(+∞) = 0.
///
/// Cell integrals use the exact integral of the cubic spline, so the result is
/// fourth-order accurate; the tail beyond the grid is estimated from the
/// fitted decay of the last samples.
pub fn second_order_radiation(f: &QProfile, ell: u32) -> Result<QProfile> {
    let n = f.len();
    let coef = 0.5 * (ell as f64) * (ell as f64 + 1.0);
    if ell == 0 || f.values.iter().all(|v| *v == 0.0) {
        return Ok(QProfile {
            q0: f.q0,
            dq: f.dq,
            values: vec![0.0; n],
        });
    }
    if n < 4 {
        return Err(Error::InvalidInput("q-profile needs at least 4 nodes".into()));
    }
    let tail = tail_integral(f)?;
    let spline = f.spline()?;
    let h = f.dq;
    let mut out = vec![0.0; n];
    let mut acc = tail;
    out[n - 1] = coef * acc;
    for i in (0..n - 1).rev() {
        let (y0, _, m0) = spline.eval_derivs(f.q(i));
        let (y1, _, m1) = spline.eval_derivs(f.q(i + 1));
        acc += 0.5 * h * (y0 + y1) - h * h * h * (m0 + m1) / 24.0;
        out[i] = coef * acc;
    }
    Ok(QProfile {
        q0: f.q0,
        dq: f.dq,
        values: out,
    })
}

fn tail_integral(f: &QProfile) -> Result<f64> {
    let n = f.len();
    let last = f.values[n - 1];
    let scale = f.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if last.abs() <= 1e-14 * scale.max(1e-300) {
        return Ok(0.0);
    }
    let q1 = f.q(n - 1);
    let q0 = f.q(n / 2);
    let v0 = f.values[n / 2];
    if q0 <= 0.0 || v0 == 0.0 || v0.signum() != last.signum() {
        return Err(Error::InvalidInput("F does not decay monotonically towards q → +∞".into()));
    }
    let p = (last.abs() / v0.abs()).ln() / (q1 / q0).ln();
    if p >= -1.0 {
        return Err(Error::InvalidInput(format!(
            "tail integral ∫^∞ F diverges: fitted decay exponent {p:.3} ≥ −1"
        )));
    }
    Ok(last * q1 / (-p - 1.0))
}

/// F_L = q∞ − q∞χ_ex(q) − F^M_L, after checking F^M_L's plateau structure.
pub fn build_admissible_fl(fm_l: &QProfile, q_inf: f64, tol: f64) -> Result<QProfile> {
    let chi = CutoffSpec::standard(CutoffKind::ChiExFar);
    let mut worst: f64 = 0.0;
    for (i, v) in fm_l.values.iter().enumerate() {
        let q = fm_l.q(i);
        if q <= -4.0 {
            worst = worst.max((v - q_inf).abs());
        } else if q >= 0.0 {
            worst = worst.max(v.abs());
        }
    }
    let floor = tol * q_inf.abs().max(1e-12);
    if worst > floor {
        return Err(Error::Precondition {
            what: "F^M_L must equal q∞ for q ≤ −4 and vanish for q ≥ 0".into(),
            defect: worst,
        });
    }
    Ok(QProfile {
        q0: fm_l.q0,
        dq: fm_l.dq,
        values: fm_l
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| q_inf - q_inf * chi.eval(fm_l.q(i)) - v)
            .collect(),
    })
}

#[derive(Debug, Clone)]
pub struct ScatteringDataSet {
    pub amplitudes: KleinGordonAmplitudes,
    pub radiation: RadiationModes,
    pub q_infinity: f64,
}

impl ScatteringDataSet {
    pub fn new(amplitudes: KleinGordonAmplitudes, radiation: RadiationModes) -> Result<Self> {
        let q_infinity = compute_qinfty(&amplitudes)?;
        Ok(Self {
            amplitudes,
            radiation,
            q_infinity,
        })
    }

    /// Spherically symmetric sector: F₀ (ℓ=0) and F_r (ℓ=1 radial vector).
    pub fn f0(&self) -> Option<&RadiationMode> {
        self.radiation.get(Component::Time, 0)
    }

    pub fn fr(&self) -> Option<&RadiationMode> {
        self.radiation.get(Component::Radial, 1)
    }

    /// The null combinations F_L = F₀ + F_r and F_L̄ = F₀ − F_r of the
    /// spherically symmetric sector.
    pub fn null_profiles(&self) -> Option<(QProfile, QProfile)> {
        let f0 = self.f0()?;
        let fr = self.fr()?;
        if !f0.f.same_grid(&fr.f) {
            return None;
        }
        let mk = |sign: f64| QProfile {
            q0: f0.f.q0,
            dq: f0.f.dq,
            values: f0.f.values.iter().zip(&fr.f.values).map(|(a, b)| a + sign * b).collect(),
        };
        Some((mk(1.0), mk(-1.0)))
    }
}

/// Split (F_L, F_L̄) into the spherically symmetric modes F₀ (ℓ=0) and F_r (ℓ=1).
pub fn modes_from_null(f_l: &QProfile, f_lbar: &QProfile, gamma: f64) -> Result<RadiationModes> {
    if !f_l.same_grid(f_lbar) {
        return Err(Error::InvalidInput("F_L and F_Lbar must share a q-grid".into()));
    }
    let mk = |sign: f64| QProfile {
        q0: f_l.q0,
        dq: f_l.dq,
        values: f_l.values.iter().zip(&f_lbar.values).map(|(a, b)| 0.5 * (a + sign * b)).collect(),
    };
    Ok(RadiationModes {
        gamma,
        modes: vec![
            RadiationMode::new(Component::Time, 0, mk(1.0))?,
            RadiationMode::new(Component::Radial, 1, mk(-1.0))?,
        ],
    })
}

/// Which analytic regime a declared γ relies on.
pub fn gamma_regime(gamma: f64) -> Result<&'static str> {
    if !(0.0..0.5).contains(&gamma) {
        Err(Error::InvalidInput(format!("γ must lie in [0, 1/2), got {gamma}")))
    } else if gamma < 1.0 / 6.0 {
        Ok("gamma<1/6: backward energy estimate regime")
    } else {
        Ok("1/6<=gamma<1/2: outside the backward energy estimate regime (no separate linear solution is constructed)")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayCheck {
    pub name: String,
    pub constant: f64,
    pub worst_node: f64,
    pub limit: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub checks: Vec<DecayCheck>,
    pub passed: bool,
}

/// Measured constants of the weighted derivative bounds.
///
/// Amplitudes: |∂_s^k a±| ≤ C(1−ρ²)^α, since (1−|y|²)∂_|y| = ∂_s.
/// Radiation modes: |(⟨q⟩∂_q)^k F| ≤ C⟨q⟩^{−1+γ}, plus a fitted tail
/// exponent that must not exceed −1+γ.
pub fn validate_decay(data: &ScatteringDataSet, limit_multiple: f64) -> DecayReport {
    let eps = data.amplitudes.amplitude.abs().max(1e-300);
    let limit = limit_multiple * eps;
    let mut checks = Vec::new();
    let alpha = data.amplitudes.alpha;
    for (label, prof) in [("a_plus", &data.amplitudes.a_plus), ("a_minus", &data.amplitudes.a_minus)] {
        let s: Vec<f64> = prof.rho().iter().map(|r| r.atanh()).collect();
        let v = prof.values();
        let n = v.len();
        for k in 0..=2usize {
            let mut worst = 0.0f64;
            let mut at = 0.0;
            for i in 1..n - 1 {
                let val = match k {
                    0 => v[i].norm(),
                    1 => ((v[i + 1] - v[i - 1]) / (s[i + 1] - s[i - 1])).norm(),
                    _ => {
                        let h = 0.5 * (s[i + 1] - s[i - 1]);
                        ((v[i + 1] - 2.0 * v[i] + v[i - 1]) / (h * h)).norm()
                    }
                };
                let w = (1.0 / s[i].cosh().powi(2)).powf(alpha);
                if w < 1e-12 {
                    continue;
                }
                let c = val / w;
                if c > worst {
                    worst = c;
                    at = prof.rho()[i];
                }
            }
            checks.push(DecayCheck {
                name: format!("{label}_weighted_derivative_order_{k}"),
                constant: worst,
                worst_node: at,
                limit,
                passed: worst <= limit,
            });
        }
    }
    let gamma = data.radiation.gamma;
    for m in &data.radiation.modes {
        let f = &m.f;
        let n = f.len();
        for k in 0..=2usize {
            let mut worst = 0.0f64;
            let mut at = 0.0;
            for i in 2..n - 2 {
                let q = f.q(i);
                let jq = (1.0 + q * q).sqrt();
                let d1 = |j: usize| (f.values[j + 1] - f.values[j - 1]) / (2.0 * f.dq);
                let val = match k {
                    0 => f.values[i].abs(),
                    1 => (jq * d1(i)).abs(),
                    _ => {
                        // (⟨q⟩∂_q)² F = ⟨q⟩(⟨q⟩' F' + ⟨q⟩F'').
                        let d2 = (f.values[i + 1] - 2.0 * f.values[i] + f.values[i - 1]) / (f.dq * f.dq);
                        (jq * ((q / jq) * d1(i) + jq * d2)).abs()
                    }
                };
                let c = val / jq.powf(-1.0 + gamma);
                if c > worst {
                    worst = c;
                    at = q;
                }
            }
            checks.push(DecayCheck {
                name: format!("{}_weighted_derivative_order_{k}", m.column_name()),
                constant: worst,
                worst_node: at,
                limit,
                passed: worst <= limit,
            });
        }
        if let Some(p) = tail_exponent(f) {
            let allowed = -1.0 + gamma + 0.05;
            checks.push(DecayCheck {
                name: format!("{}_tail_exponent", m.column_name()),
                constant: p,
                worst_node: f.q_max(),
                limit: allowed,
                passed: p <= allowed,
            });
        }
    }
    let passed = checks.iter().all(|c| c.passed);
    DecayReport { checks, passed }
}

/// Fitted log-log decay exponent of |F| over 10 ≤ |q| ≤ q_max on whichever
/// side is larger; None when both tails are negligible.
fn tail_exponent(f: &QProfile) -> Option<f64> {
    let scale = f.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return None;
    }
    let mut best: Option<f64> = None;
    for side in [1.0, -1.0] {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (i, v) in f.values.iter().enumerate() {
            let q = f.q(i) * side;
            if q >= 10.0 && v.abs() > 1e-10 * scale {
                x.push((1.0 + q * q).sqrt());
                y.push(v.abs());
            }
        }
        if x.len() >= 8 && x[x.len() - 1].max(x[0]) / x[0].min(x[x.len() - 1]) > 2.0 {
            if let Ok(fit) = crate::fit::fit_power_law(&x, &y) {
                best = Some(best.map_or(fit.slope, |b: f64| b.max(fit.slope)));
            }
        }
    }
    best
}

/// Maximum of |2∂_qF1 + ℓ(ℓ+1)F| over interior nodes (centered differences).
pub fn f1_identity_residual(mode: &RadiationMode) -> f64 {
    let l = mode.ell as f64;
    let f = &mode.f;
    let g = &mode.f1;
    (1..f.len() - 1)
        .map(|i| {
            let d = (g.values[i + 1] - g.values[i - 1]) / (2.0 * f.dq);
            (2.0 * d + l * (l + 1.0) * f.values[i]).abs()
        })
        .fold(0.0, f64::max)
}

/// Format with 17 significant digits; parses back to the identical f64.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatteringManifest {
    pub format_version: u32,
    pub alpha: f64,
    pub amplitude: f64,
    pub gamma: f64,
    pub q_infinity: f64,
    pub rho_nodes: usize,
    pub q0: f64,
    pub dq: f64,
    pub q_nodes: usize,
    pub radiation_columns: Vec<String>,
    pub provenance: serde_json::Value,
}

pub const AMPLITUDES_FILE: &str = "amplitudes.csv";
pub const RADIATION_FILE: &str = "radiation.csv";
pub const MANIFEST_FILE: &str = "scattering.json";

pub fn write_scattering_data(dir: &Path, data: &ScatteringDataSet, provenance: serde_json::Value) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let amps = &data.amplitudes;
    let mut s = String::from("rho,re_a_plus,im_a_plus,re_a_minus,im_a_minus\n");
    for (i, r) in amps.rho().iter().enumerate() {
        let p = amps.a_plus.values()[i];
        let m = amps.a_minus.values()[i];
        let _ = writeln!(s, "{},{},{},{},{}", fmt_f64(*r), fmt_f64(p.re), fmt_f64(p.im), fmt_f64(m.re), fmt_f64(m.im));
    }
    std::fs::write(dir.join(AMPLITUDES_FILE), s)?;

    let modes = &data.radiation.modes;
    let grid = modes.first().map(|m| (m.f.q0, m.f.dq, m.f.len())).unwrap_or((0.0, 1.0, 0));
    if modes.iter().any(|m| (m.f.q0, m.f.dq, m.f.len()) != grid) {
        return Err(Error::DataFile("all radiation modes must share one q-grid".into()));
    }
    let mut cols = Vec::new();
    for m in modes {
        cols.push(m.column_name());
        cols.push(m.f1_column_name());
    }
    let mut s = String::from("q");
    for c in &cols {
        s.push(',');
        s.push_str(c);
    }
    s.push('\n');
    for i in 0..grid.2 {
        s.push_str(&fmt_f64(grid.0 + grid.1 * i as f64));
        for m in modes {
            s.push(',');
            s.push_str(&fmt_f64(m.f.values[i]));
            s.push(',');
            s.push_str(&fmt_f64(m.f1.values[i]));
        }
        s.push('\n');
    }
    std::fs::write(dir.join(RADIATION_FILE), s)?;

    let manifest = ScatteringManifest {
        format_version: 1,
        alpha: amps.alpha,
        amplitude: amps.amplitude,
        gamma: data.radiation.gamma,
        q_infinity: data.q_infinity,
        rho_nodes: amps.rho().len(),
        q0: grid.0,
        dq: grid.1,
        q_nodes: grid.2,
        radiation_columns: cols,
        provenance,
    };
    std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

fn parse_csv(text: &str, expected_header: Option<&[String]>) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::DataFile("empty CSV".into()))?
        .split(',')
        .map(|h| h.trim().to_string())
        .collect();
    if let Some(exp) = expected_header {
        if header != exp {
            return Err(Error::DataFile(format!("unexpected CSV header {header:?}, expected {exp:?}")));
        }
    }
    let mut rows = Vec::new();
    for (ln, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> = line.split(',').map(|v| v.trim().parse::<f64>()).collect();
        let row = row.map_err(|e| Error::DataFile(format!("line {}: {e}", ln + 2)))?;
        if row.len() != header.len() {
            return Err(Error::DataFile(format!("line {}: expected {} columns", ln + 2, header.len())));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

pub fn read_scattering_data(dir: &Path) -> Result<ScatteringDataSet> {
    let manifest: ScatteringManifest = serde_json::from_str(&std::fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    let amp_header: Vec<String> = ["rho", "re_a_plus", "im_a_plus", "re_a_minus", "im_a_minus"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let (_, rows) = parse_csv(&std::fs::read_to_string(dir.join(AMPLITUDES_FILE))?, Some(&amp_header))?;
    if rows.len() != manifest.rho_nodes {
        return Err(Error::DataFile("amplitude row count disagrees with manifest".into()));
    }
    let rho: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let ap = rows.iter().map(|r| Complex64::new(r[1], r[2])).collect();
    let am = rows.iter().map(|r| Complex64::new(r[3], r[4])).collect();
    let amplitudes = KleinGordonAmplitudes::new(
        ComplexProfile::new(rho.clone(), ap)?,
        ComplexProfile::new(rho, am)?,
        manifest.alpha,
        manifest.amplitude,
    )?;
    let mut rad_header = vec!["q".to_string()];
    rad_header.extend(manifest.radiation_columns.iter().cloned());
    let (_, rows) = parse_csv(&std::fs::read_to_string(dir.join(RADIATION_FILE))?, Some(&rad_header))?;
    if rows.len() != manifest.q_nodes {
        return Err(Error::DataFile("radiation row count disagrees with manifest".into()));
    }
    let mut modes = Vec::new();
    for (k, pair) in manifest.radiation_columns.chunks(2).enumerate() {
        let name = &pair[0];
        let (component, ell) = parse_mode_name(name)?;
        let col = |c: usize| QProfile {
            q0: manifest.q0,
            dq: manifest.dq,
            values: rows.iter().map(|r| r[c]).collect(),
        };
        modes.push(RadiationMode {
            component,
            ell,
            f: col(1 + 2 * k),
            f1: col(2 + 2 * k),
        });
    }
    let data = ScatteringDataSet::new(
        amplitudes,
        RadiationModes {
            gamma: manifest.gamma,
            modes,
        },
    )?;
    let tol = 1e-9 * data.q_infinity.abs().max(1e-12);
    if (data.q_infinity - manifest.q_infinity).abs() > tol {
        return Err(Error::DataFile(format!(
            "cached q_infinity {} disagrees with recomputed {}",
            manifest.q_infinity, data.q_infinity
        )));
    }
    Ok(data)
}

fn parse_mode_name(name: &str) -> Result<(Component, u32)> {
    let bad = || Error::DataFile(format!("bad radiation column name {name}"));
    let rest = name.strip_prefix('F').ok_or_else(bad)?;
    let (comp, ell) = rest.split_once("_l").ok_or_else(bad)?;
    let component = match comp {
        "0" => Component::Time,
        "r" => Component::Radial,
        _ => return Err(bad()),
    };
    Ok((component, ell.parse().map_err(|_| bad())?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn power_amplitudes(plus: f64, minus: f64) -> KleinGordonAmplitudes {
        KleinGordonAmplitudes::from_families(
            &AmplitudeFamily::Power { re: plus, im: 0.0, exponent: 1.75 },
            &AmplitudeFamily::Power { re: minus, im: 0.0, exponent: 1.75 },
            1.75,
            1.0,
            default_rho_grid(),
        )
        .unwrap()
    }

    #[test]
    fn qinfty_examples() {
        assert!(compute_qinfty(&power_amplitudes(1.0, 1.0)).unwrap().abs() < 1e-14);
        let q = compute_qinfty(&power_amplitudes(0.0, 1.0)).unwrap();
        assert!((q - PI / 32.0).abs() < 1e-7 * PI / 32.0, "{q}");
        let q = compute_qinfty(&power_amplitudes(1.0, 0.0)).unwrap();
        assert!((q + PI / 32.0).abs() < 1e-7 * PI / 32.0);
    }

    #[test]
    fn qinfty_scales_quadratically() {
        let base = compute_qinfty(&power_amplitudes(0.0, 1.0)).unwrap();
        for c in [0.0, 1.0, 2.0] {
            let q = compute_qinfty(&power_amplitudes(0.0, c)).unwrap();
            assert!((q - c * c * base).abs() <= 1e-12 * base.abs().max(1.0));
        }
    }

    #[test]
    fn second_order_radiation_examples() {
        let f = QProfile::default_grid(|q| (-q * q).exp());
        let zero = second_order_radiation(&f, 0).unwrap();
        assert!(zero.values.iter().all(|v| *v == 0.0));
        let f1 = second_order_radiation(&f, 1).unwrap();
        let i0 = 800;
        assert_eq!(f.q(i0), 0.0);
        assert!((f1.values[i0] - PI.sqrt() / 2.0).abs() < 1e-9, "{}", f1.values[i0]);
        let z = second_order_radiation(&QProfile::default_grid(|_| 0.0), 1).unwrap();
        assert!(z.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn divergent_tail_is_rejected() {
        let f = QProfile::default_grid(|q| (1.0 + q * q).powf(-0.25));
        assert!(second_order_radiation(&f, 1).is_err());
    }

    #[test]
    fn f1_identity_converges_at_second_order() {
        let res = |dq: f64| {
            let n = (80.0 / dq).round() as usize + 1;
            let f = QProfile::from_fn(-40.0, dq, n, |q| (-(q - 0.3) * (q - 0.3)).exp() * (1.0 + 0.5 * q));
            let m = RadiationMode::new(Component::Radial, 2, f).unwrap();
            f1_identity_residual(&m)
        };
        let ratio = res(0.1) / res(0.05);
        assert!(ratio > 3.5, "ratio {ratio}");
    }

    #[test]
    fn admissible_fl_examples() {
        let qi = 0.1;
        let fm = QProfile::default_grid(|q| if q <= -4.0 { qi } else if q >= 0.0 { 0.0 } else { qi * (-q / 4.0) });
        let fl = build_admissible_fl(&fm, qi, 1e-10).unwrap();
        let chi = CutoffSpec::standard(CutoffKind::ChiExFar);
        for (i, v) in fl.values.iter().enumerate() {
            let q = fl.q(i);
            assert!((v + fm.values[i] + qi * chi.eval(q) - qi).abs() < 1e-10);
            if !(-4.0..=2.0).contains(&q) {
                assert!(v.abs() < 1e-15);
            }
        }
        let i = fl.q_nodes().iter().position(|q| (*q - 1.5).abs() < 1e-9).unwrap();
        assert!((fl.values[i] - 0.5 * qi).abs() < 1e-15);
        let bad = QProfile::default_grid(|q| if q <= -4.0 { 0.5 * qi } else { 0.0 });
        assert!(matches!(build_admissible_fl(&bad, qi, 1e-6), Err(Error::Precondition { .. })));
    }

    #[test]
    fn decay_validation_examples() {
        let zero = ScatteringDataSet::new(
            KleinGordonAmplitudes::zero(default_rho_grid()).unwrap(),
            RadiationModes { gamma: 0.1, modes: vec![] },
        )
        .unwrap();
        let rep = validate_decay(&zero, 100.0);
        assert!(rep.passed && rep.checks.iter().all(|c| c.constant == 0.0));

        let good = ScatteringDataSet::new(power_amplitudes(0.0, 1.0), RadiationModes { gamma: 0.1, modes: vec![] }).unwrap();
        let rep = validate_decay(&good, 100.0);
        assert!(rep.passed, "{rep:?}");
        assert!(rep.checks.iter().all(|c| c.constant.is_finite()));

        let slow = RadiationMode::new(Component::Time, 0, QProfile::default_grid(|q| (1.0 + q * q).powf(-0.1))).unwrap();
        let bad = ScatteringDataSet::new(power_amplitudes(0.0, 1.0), RadiationModes { gamma: 0.3, modes: vec![slow] }).unwrap();
        let rep = validate_decay(&bad, 100.0);
        assert!(!rep.passed);
        let tail = rep.checks.iter().find(|c| c.name.ends_with("tail_exponent")).unwrap();
        assert!((tail.constant + 0.2).abs() < 0.02 && !tail.passed);
    }

    #[test]
    fn gamma_regimes() {
        assert!(gamma_regime(0.1).unwrap().starts_with("gamma<1/6"));
        assert!(gamma_regime(0.3).unwrap().starts_with("1/6"));
        assert!(gamma_regime(0.6).is_err());
    }

    #[test]
    fn file_round_trip_is_bit_exact() {
        let amps = KleinGordonAmplitudes::from_families(
            &AmplitudeFamily::PowerGaussian { re: 0.3, im: -0.1, exponent: 2.0, width: 1.5 },
            &AmplitudeFamily::Power { re: 0.7, im: 0.2, exponent: 1.75 },
            1.75,
            0.5,
            default_rho_grid(),
        )
        .unwrap();
        let fl = QProfile::default_grid(|q| 0.01 * (-(q + 1.0).powi(2)).exp());
        let flb = QProfile::default_grid(|q| RadiationFamily::Gaussian { c: 0.02, width: 2.0 }.eval(q));
        let modes = modes_from_null(&fl, &flb, 0.1).unwrap();
        let data = ScatteringDataSet::new(amps, modes).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_scattering_data(dir.path(), &data, serde_json::json!({"source": "test"})).unwrap();
        let back = read_scattering_data(dir.path()).unwrap();
        assert_eq!(back.amplitudes.rho(), data.amplitudes.rho());
        assert_eq!(back.amplitudes.a_plus.values(), data.amplitudes.a_plus.values());
        assert_eq!(back.amplitudes.a_minus.values(), data.amplitudes.a_minus.values());
        assert_eq!(back.radiation, data.radiation);
        assert_eq!(back.q_infinity.to_bits(), data.q_infinity.to_bits());
    }
}
