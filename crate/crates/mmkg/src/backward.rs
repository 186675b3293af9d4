//! Backward problem: the approximate solution (A⁽⁰⁾, φ⁽⁰⁾) assembled from
//! scattering data, its remainders, the cut-off equations for the
//! corrections (v, w) integrated backward from t = T, and diagnostics of the
//! T → ∞ limit.

use std::sync::{Arc, RwLock};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolve::{
    current, evolve_to, field_energies, gauge_residual, kg_nonlinearity, weighted_l2, EvolutionState, Local, RadialGrid,
    ReducedMkg, Scheme, Sources, A0, AR, NFIELDS, PHI_IM, PHI_RE,
};
use crate::fit::{fit_power_law, LineFit};
use crate::forward::{
    extract_all, extract_radiation, run_forward, AmplitudeEstimate, ExtractOptions, ForwardPlan, InitialDataSet,
    RadiationFit, RayRecord,
};
use crate::geometry::{a_tau, CutoffKind, CutoffSpec};
use crate::interior_profile::AmTable;
use crate::interp::{Bicubic, CubicSpline};
use crate::jet::{CJet, Jet};
use crate::par::Exec;
use crate::quad::FixedRule;
use crate::scattering_data::{
    build_admissible_fl, modes_from_null, second_order_radiation, Component, ComplexProfile, KleinGordonAmplitudes,
    QProfile, ScatteringDataSet,
};

/// A q-profile evaluated as a jet; constant continuation outside the grid.
#[derive(Debug, Clone)]
struct QSpline {
    spline: CubicSpline,
    lo: f64,
    hi: f64,
    left: f64,
    right: f64,
}

impl QSpline {
    fn new(p: &QProfile) -> Result<Self> {
        let n = p.len();
        if n < 4 {
            return Err(Error::InvalidInput("radiation profile needs ≥4 nodes".into()));
        }
        Ok(Self {
            spline: CubicSpline::new(p.q_nodes(), p.values.clone())?,
            lo: p.q0,
            hi: p.q_max(),
            left: p.values[0],
            right: p.values[n - 1],
        })
    }

    fn jet(&self, q: Jet) -> Jet {
        if q.v <= self.lo {
            Jet::constant(self.left)
        } else if q.v >= self.hi {
            Jet::constant(self.right)
        } else {
            let (a, b, c) = self.spline.eval_derivs(q.v);
            q.compose(a, b, c)
        }
    }

    /// Largest q at which the profile is not identically zero.
    fn support_edge(p: &QProfile) -> f64 {
        (0..p.len())
            .rev()
            .find(|&i| p.values[i] != 0.0)
            .map(|i| p.q(i + 1))
            .unwrap_or(p.q0)
    }
}

#[derive(Debug, Clone)]
struct RadiationTerm {
    f: QSpline,
    f1: QSpline,
}

impl RadiationTerm {
    fn new(f: &QProfile, f1: &QProfile) -> Result<Self> {
        Ok(Self {
            f: QSpline::new(f)?,
            f1: QSpline::new(f1)?,
        })
    }

    /// χ(⟨q⟩/r)·(F(q)/r + F⁽¹⁾(q)/r²).
    fn jet(&self, t: Jet, r: Jet, include_f1: bool) -> Jet {
        if r.v <= 0.0 {
            return Jet::ZERO;
        }
        let q = r - t;
        let x = (q * q + 1.0).sqrt() / r;
        let chi = CutoffSpec::standard(CutoffKind::ChiInterior);
        if x.v >= chi.knots.1 {
            return Jet::ZERO;
        }
        let (c0, c1, c2) = chi.eval_derivs(x.v);
        let mut u = self.f.jet(q) / r;
        if include_f1 {
            u = u + self.f1.jet(q) / (r * r);
        }
        x.compose(c0, c1, c2) * u
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSpec {
    pub tau_min: f64,
    pub tau_max: f64,
    /// Spacing in ln τ.
    pub dx: f64,
    pub ds: f64,
    pub s_max: f64,
}

impl Default for PhaseSpec {
    fn default() -> Self {
        Self {
            tau_min: 0.05,
            tau_max: 400.0,
            dx: 0.025,
            ds: 0.025,
            s_max: 7.0,
        }
    }
}

/// Θ(τ, s) = ∫_{τ₀}^{τ} g(τ′cosh s, τ′sinh s) dτ′ tabulated as a bicubic in
/// (ln τ, s).
#[derive(Debug, Clone)]
pub struct PhaseTable {
    table: Bicubic,
    tau0: f64,
}

impl PhaseTable {
    pub fn build(integrand: impl Fn(f64, f64) -> f64 + Sync, tau0: f64, spec: &PhaseSpec, exec: Exec) -> Result<Self> {
        if !(spec.tau_min > 0.0 && spec.tau_min < tau0 && tau0 < spec.tau_max && spec.dx > 0.0 && spec.ds > 0.0 && spec.s_max > 0.0) {
            return Err(Error::InvalidInput(format!(
                "phase table needs 0 < τ_min < τ₀ < τ_max and positive spacings, got {spec:?} with τ₀ = {tau0}"
            )));
        }
        let x0 = tau0.ln();
        let below = ((x0 - spec.tau_min.ln()) / spec.dx).ceil() as usize;
        let above = ((spec.tau_max.ln() - x0) / spec.dx).ceil() as usize;
        let x_lo = x0 - spec.dx * below as f64;
        let nx = below + above + 1;
        let ns = (spec.s_max / spec.ds).round() as usize + 1;
        let rule = FixedRule::new(4);
        let columns: Vec<Vec<f64>> = exec.map_range(ns, |j| {
            let s = spec.ds * j as f64;
            let (ch, sh) = (s.cosh(), s.sinh());
            let g = |x: f64| {
                let tau = x.exp();
                integrand(tau * ch, tau * sh) * tau
            };
            let mut acc = vec![0.0; nx];
            for i in 1..nx {
                let a = x_lo + spec.dx * (i - 1) as f64;
                acc[i] = acc[i - 1] + rule.integrate(g, a, a + spec.dx);
            }
            let zero = acc[below];
            acc.iter().map(|v| v - zero).collect()
        });
        let mut values = vec![0.0; nx * ns];
        for (j, col) in columns.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                values[i * ns + j] = *v;
            }
        }
        Ok(Self {
            table: Bicubic::new(x_lo, spec.dx, nx, 0.0, spec.ds, ns, &values)?,
            tau0,
        })
    }

    pub fn tau0(&self) -> f64 {
        self.tau0
    }

    pub fn theta(&self, tau: f64, s: f64) -> f64 {
        self.table.eval(tau.ln(), s).f
    }

    pub fn eval_jet(&self, tau: Jet, s: Jet) -> Jet {
        let x = tau.ln();
        let d = self.table.eval(x.v, s.v);
        Jet::compose2(x, s, d.f, d.fx, d.fy, d.fxx, d.fxy, d.fyy)
    }
}

/// φ = τ^{−3/2}e^{iΘ}(e^{iτ}a₊(s) + e^{−iτ}a₋(s)) inside the cone, zero
/// outside it and beyond the last amplitude node.
pub fn phi_ansatz(t: Jet, r: Jet, plus: &ComplexProfile, minus: &ComplexProfile, theta: impl Fn(Jet, Jet) -> Jet) -> CJet {
    if r.v >= t.v || t.v <= 0.0 {
        return CJet::ZERO;
    }
    let s = (r / t).atanh();
    if s.v > plus.s_max().max(minus.s_max()) {
        return CJet::ZERO;
    }
    let tau = (t * t - r * r).sqrt();
    let th = theta(tau, s);
    let (pr, pi) = plus.eval_jet(s);
    let (mr, mi) = minus.eval_jet(s);
    let p = CJet::expi(th + tau) * CJet::new(pr, pi);
    let m = CJet::expi(th - tau) * CJet::new(mr, mi);
    (p + m).scale(tau.powf(-1.5))
}

/// □_ℓ of a jet, with the regular-origin limits at r = 0.
fn box_at(j: &Jet, r: f64, ell: u32) -> f64 {
    if r == 0.0 {
        if ell == 0 {
            -j.tt + 3.0 * j.rr
        } else {
            0.0
        }
    } else {
        j.box_ell(r, ell)
    }
}

/// Values and derivatives of (A⁽⁰⁾, φ⁽⁰⁾) at one point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Background {
    pub a: [f64; 2],
    pub a_t: [f64; 2],
    pub a_r: [f64; 2],
    /// □A⁽⁰⁾_μ with the ℓ = 0 (time) and ℓ = 1 (radial) operators.
    pub box_a: [f64; 2],
    pub phi: Complex64,
    pub phi_t: Complex64,
    pub phi_r: Complex64,
    /// (−□ + 1)φ⁽⁰⁾.
    pub kg: Complex64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Remainders {
    /// −□A⁽⁰⁾_μ − J_μ(A⁽⁰⁾, φ⁽⁰⁾).
    pub maxwell: [f64; 2],
    /// (−□ + 1)φ⁽⁰⁾ − 2iA⁽⁰⁾^μ∂_μφ⁽⁰⁾ + A⁽⁰⁾^μA⁽⁰⁾_μφ⁽⁰⁾.
    pub kg: Complex64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApproxOptions {
    pub include_f1: bool,
    /// Relative tolerance on F_L = q∞ − q∞χ_ex − F^M_L.
    pub admissibility_tol: f64,
    pub check_admissible: bool,
    /// Multiply the phase integrand by χ_LC(q).
    pub light_cone_cutoff: bool,
    pub tau0: f64,
    pub phase: PhaseSpec,
}

impl Default for ApproxOptions {
    fn default() -> Self {
        Self {
            include_f1: true,
            admissibility_tol: 1e-6,
            check_admissible: true,
            light_cone_cutoff: true,
            tau0: 2.0,
            phase: PhaseSpec::default(),
        }
    }
}

/// The approximate solution A⁽⁰⁾ = A^M + χ(⟨q⟩/r)(F/r + F⁽¹⁾/r²) +
/// q∞χ_ex(q)δ_{0μ}/r and φ⁽⁰⁾ with the phase Θ = ∫χ_LC(A⁽⁰⁾)^τ dτ.
#[derive(Debug, Clone)]
pub struct ApproximateSolution {
    am: AmTable,
    q_inf: f64,
    rad: [RadiationTerm; 2],
    a_plus: ComplexProfile,
    a_minus: ComplexProfile,
    phase: Option<PhaseTable>,
    include_f1: bool,
    q_edge: f64,
    admissibility_defect: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct PotentialParts {
    pub am: [Jet; 2],
    pub radiation: [Jet; 2],
    pub tail: [Jet; 2],
}

impl PotentialParts {
    pub fn total(&self) -> [Jet; 2] {
        [0, 1].map(|k| self.am[k] + self.radiation[k] + self.tail[k])
    }
}

/// Build the scattering data for the backward problem: F_L is fixed by the
/// admissibility condition (or, for the negative control, by
/// q∞(1 − χ_ex) without the −F^M_L term) and F_L̄ is free.
pub fn backward_scattering_data(
    amplitudes: KleinGordonAmplitudes,
    f_lbar: &QProfile,
    gamma: f64,
    am: &AmTable,
    admissible: bool,
) -> Result<ScatteringDataSet> {
    let q_inf = crate::scattering_data::compute_qinfty(&amplitudes)?;
    let f_l = if admissible {
        build_admissible_fl(&fm_l_profile(am, f_lbar), q_inf, 1e-4)?
    } else {
        let chi = CutoffSpec::standard(CutoffKind::ChiExFar);
        QProfile::from_fn(f_lbar.q0, f_lbar.dq, f_lbar.len(), |q| q_inf - q_inf * chi.eval(q))
    };
    ScatteringDataSet::new(amplitudes, modes_from_null(&f_l, f_lbar, gamma)?)
}

fn fm_l_profile(am: &AmTable, grid: &QProfile) -> QProfile {
    let t = am.fm_profile(Component::Time, grid);
    let r = am.fm_profile(Component::Radial, grid);
    QProfile {
        q0: grid.q0,
        dq: grid.dq,
        values: t.values.iter().zip(&r.values).map(|(a, b)| a + b).collect(),
    }
}

/// max_q |F_L − (q∞ − q∞χ_ex − F^M_L)| / |q∞|.
pub fn admissibility_defect(data: &ScatteringDataSet, am: &AmTable) -> Result<f64> {
    let (f_l, _) = data
        .null_profiles()
        .ok_or_else(|| Error::InvalidInput("scattering data lack the ℓ=0 / ℓ=1 radiation modes".into()))?;
    let fm = fm_l_profile(am, &f_l);
    let chi = CutoffSpec::standard(CutoffKind::ChiExFar);
    let q_inf = data.q_infinity;
    let worst = (0..f_l.len()).fold(0.0f64, |m, i| {
        let q = f_l.q(i);
        m.max((f_l.values[i] - (q_inf - q_inf * chi.eval(q) - fm.values[i])).abs())
    });
    Ok(worst / q_inf.abs().max(1e-300))
}

pub fn assemble_approximate(data: &ScatteringDataSet, am: AmTable, opts: &ApproxOptions, exec: Exec) -> Result<ApproximateSolution> {
    let defect = admissibility_defect(data, &am)?;
    if opts.check_admissible && defect > opts.admissibility_tol {
        return Err(Error::Precondition {
            what: "F_L must equal q∞ − q∞χ_ex − F^M_L".into(),
            defect,
        });
    }
    let f0 = data.f0().ok_or_else(|| Error::InvalidInput("missing F₀ (ℓ=0) mode".into()))?;
    let fr = data.fr().ok_or_else(|| Error::InvalidInput("missing F_r (ℓ=1) mode".into()))?;
    let q_edge = [&f0.f, &f0.f1, &fr.f, &fr.f1]
        .iter()
        .map(|p| QSpline::support_edge(p))
        .fold(2.0f64, f64::max);
    let mut approx = ApproximateSolution {
        am,
        q_inf: data.q_infinity,
        rad: [RadiationTerm::new(&f0.f, &f0.f1)?, RadiationTerm::new(&fr.f, &fr.f1)?],
        a_plus: data.amplitudes.a_plus.clone(),
        a_minus: data.amplitudes.a_minus.clone(),
        phase: None,
        include_f1: opts.include_f1,
        q_edge,
        admissibility_defect: defect,
    };
    let chi_lc = CutoffSpec::standard(CutoffKind::ChiLc);
    let phase = PhaseTable::build(
        |t, r| {
            let [a0, ar] = approx.potential_values(t, r);
            let cut = if opts.light_cone_cutoff { chi_lc.eval(r - t) } else { 1.0 };
            cut * a_tau(a0, ar, t, r)
        },
        opts.tau0,
        &opts.phase,
        exec,
    )?;
    approx.phase = Some(phase);
    Ok(approx)
}

impl ApproximateSolution {
    pub fn q_infinity(&self) -> f64 {
        self.q_inf
    }

    pub fn admissibility_defect(&self) -> f64 {
        self.admissibility_defect
    }

    pub fn include_f1(&self) -> bool {
        self.include_f1
    }

    /// Largest q at which the radiation ansatz can be nonzero.
    pub fn q_edge(&self) -> f64 {
        self.q_edge
    }

    pub fn amplitudes_at(&self, s: f64) -> (Complex64, Complex64) {
        (self.a_plus.eval_s(s), self.a_minus.eval_s(s))
    }

    pub fn phase_table(&self) -> Option<&PhaseTable> {
        self.phase.as_ref()
    }

    /// The three constituents of A⁽⁰⁾ evaluated separately.
    pub fn parts(&self, t: Jet, r: Jet) -> PotentialParts {
        let q = r - t;
        let am = [self.am.eval_jet(Component::Time, t, r), self.am.eval_jet(Component::Radial, t, r)];
        let radiation = [self.rad[0].jet(t, r, self.include_f1), self.rad[1].jet(t, r, self.include_f1)];
        let mut tail = [Jet::ZERO; 2];
        if r.v > 0.0 && q.v > 1.0 {
            let (e0, e1, e2) = CutoffSpec::standard(CutoffKind::ChiExFar).eval_derivs(q.v);
            tail[0] = q.compose(e0, e1, e2) * self.q_inf / r;
        }
        PotentialParts { am, radiation, tail }
    }

    pub fn potentials(&self, t: Jet, r: Jet) -> [Jet; 2] {
        let q = r - t;
        if r.v > 0.0 && q.v >= self.q_edge {
            return [r.recip() * self.q_inf, Jet::ZERO];
        }
        self.parts(t, r).total()
    }

    pub fn potential_values(&self, t: f64, r: f64) -> [f64; 2] {
        let [a0, ar] = self.potentials(Jet::var_t(t), Jet::var_r(r));
        [a0.v, ar.v]
    }

    pub fn phi(&self, t: Jet, r: Jet) -> CJet {
        match &self.phase {
            Some(ph) => phi_ansatz(t, r, &self.a_plus, &self.a_minus, |tau, s| ph.eval_jet(tau, s)),
            None => CJet::ZERO,
        }
    }

    pub fn point(&self, t: f64, r: f64) -> Background {
        let (tj, rj) = (Jet::var_t(t), Jet::var_r(r));
        let a = self.potentials(tj, rj);
        let p = self.phi(tj, rj);
        let kg = Complex64::new(p.re.v - box_at(&p.re, r, 0), p.im.v - box_at(&p.im, r, 0));
        Background {
            a: [a[0].v, a[1].v],
            a_t: [a[0].t, a[1].t],
            a_r: [a[0].r, a[1].r],
            box_a: [box_at(&a[0], r, 0), box_at(&a[1], r, 1)],
            phi: Complex64::new(p.re.v, p.im.v),
            phi_t: Complex64::new(p.re.t, p.im.t),
            phi_r: Complex64::new(p.re.r, p.im.r),
            kg,
        }
    }

    /// ∂^μA⁽⁰⁾_μ = −∂_tA₀ + ∂_rA_r + 2A_r/r.
    pub fn gauge(&self, t: f64, r: f64) -> f64 {
        let [a0, ar] = self.potentials(Jet::var_t(t), Jet::var_r(r));
        if r == 0.0 {
            -a0.t + 3.0 * ar.r
        } else {
            -a0.t + ar.r + 2.0 * ar.v / r
        }
    }

    pub fn remainders(&self, t: f64, r: f64) -> Remainders {
        let b = self.point(t, r);
        Remainders {
            maxwell: [
                -b.box_a[0] - current(b.a[0], b.phi, b.phi_t),
                -b.box_a[1] - current(b.a[1], b.phi, b.phi_r),
            ],
            kg: b.kg - kg_nonlinearity(b.a[0], b.a[1], b.phi, b.phi_t, b.phi_r),
        }
    }
}

/// Sources of the correction equations
/// −□v_μ = χ̃(t/T)[J_μ(A⁽⁰⁾+v, φ⁽⁰⁾+w) + □A⁽⁰⁾_μ],
/// (−□+1)w = χ̃(t/T)[N(A⁽⁰⁾+v, φ⁽⁰⁾+w) − (−□+1)φ⁽⁰⁾],
/// so that the sum solves the reduced system wherever χ̃ = 1.
pub struct BackwardSources<'a> {
    approx: &'a ApproximateSolution,
    t_cut: f64,
    cutoff: CutoffSpec,
    cache: RwLock<Vec<(u64, Arc<Vec<Background>>)>>,
}

const CACHE_SLOTS: usize = 4;

impl<'a> BackwardSources<'a> {
    pub fn new(approx: &'a ApproximateSolution, t_cut: f64) -> Self {
        Self {
            approx,
            t_cut,
            cutoff: CutoffSpec::standard(CutoffKind::ChiTilde),
            cache: RwLock::new(Vec::new()),
        }
    }

    pub fn chi(&self, t: f64) -> f64 {
        self.cutoff.eval(t / self.t_cut)
    }

    fn lookup(&self, t: f64) -> Option<Arc<Vec<Background>>> {
        let key = t.to_bits();
        let cache = self.cache.read().unwrap_or_else(|e| e.into_inner());
        cache.iter().find(|(k, _)| *k == key).map(|(_, v)| Arc::clone(v))
    }
}

impl Sources for BackwardSources<'_> {
    fn prepare(&self, t: f64, grid: &RadialGrid, exec: Exec) {
        if self.chi(t) == 0.0 || self.lookup(t).is_some() {
            return;
        }
        let rows = Arc::new(exec.map_range(grid.n, |j| self.approx.point(t, grid.r(j))));
        let mut cache = self.cache.write().unwrap_or_else(|e| e.into_inner());
        if cache.len() >= CACHE_SLOTS {
            cache.remove(0);
        }
        cache.push((t.to_bits(), rows));
    }

    fn eval(&self, l: &Local) -> [f64; NFIELDS] {
        let c = self.chi(l.t);
        if c == 0.0 {
            return [0.0; NFIELDS];
        }
        let b = match self.lookup(l.t) {
            Some(rows) if l.j < rows.len() => rows[l.j],
            _ => self.approx.point(l.t, l.r),
        };
        let a0 = b.a[0] + l.a0;
        let ar = b.a[1] + l.ar;
        let phi = b.phi + l.phi;
        let phi_t = b.phi_t + l.phi_t;
        let phi_r = b.phi_r + l.phi_r;
        let n = kg_nonlinearity(a0, ar, phi, phi_t, phi_r) - b.kg;
        [
            c * (current(a0, phi, phi_t) + b.box_a[0]),
            c * (current(ar, phi, phi_r) + b.box_a[1]),
            c * n.re,
            c * n.im,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackwardMonitor {
    pub t: f64,
    pub energy_v: f64,
    pub energy_w: f64,
    /// L² norm of ∂^μ(A⁽⁰⁾ + v)_μ on the slice.
    pub lambda_l2: f64,
}

#[derive(Debug, Clone)]
pub struct BackwardSolution {
    pub t_cut: f64,
    /// (v, w) and their time derivatives at t_min.
    pub state: EvolutionState,
    pub history: Vec<BackwardMonitor>,
}

/// Lorenz residual of A⁽⁰⁾ + v at every node of the slice.
pub fn total_gauge(approx: &ApproximateSolution, v: &EvolutionState, exec: Exec) -> Vec<f64> {
    let lv = gauge_residual(v).lambda;
    let g = v.grid;
    let l0 = exec.map_range(g.n, |j| approx.gauge(v.t, g.r(j)));
    lv.iter().zip(&l0).map(|(a, b)| a + b).collect()
}

fn backward_monitor(approx: &ApproximateSolution, v: &EvolutionState, exec: Exec) -> BackwardMonitor {
    let e = field_energies(v);
    BackwardMonitor {
        t: v.t,
        energy_v: e[0] + e[1],
        energy_w: e[2],
        lambda_l2: weighted_l2(&total_gauge(approx, v, exec), v.grid.dr),
    }
}

/// Integrate the correction equations from zero data at t = T/2 (where χ̃
/// switches off, so (v, w) vanish on [T/2, T]) down to t_min, recording at
/// t_min + k·record_dt.
pub fn solve_backward_t(
    approx: &ApproximateSolution,
    t_cut: f64,
    grid: RadialGrid,
    t_min: f64,
    record_dt: f64,
    scheme: &Scheme,
    exec: Exec,
) -> Result<BackwardSolution> {
    let cutoff = CutoffSpec::standard(CutoffKind::ChiTilde);
    let start = cutoff.knots.1 * t_cut;
    if !(start > t_min) || !(record_dt > 0.0) {
        return Err(Error::InvalidInput(format!(
            "T/2 = {start} must exceed t_min = {t_min} and record_dt must be positive"
        )));
    }
    let sources = BackwardSources::new(approx, t_cut);
    let mut state = EvolutionState::zeros(grid, start);
    let mut history = vec![backward_monitor(approx, &state, exec)];
    let below = ((start - t_min) / record_dt - 1e-9).floor().max(0.0) as usize;
    for k in (0..=below).rev() {
        let t_next = t_min + record_dt * k as f64;
        state = evolve_to(state, t_next, &sources, scheme, exec, |_| Ok(()))?;
        state.t = t_next;
        history.push(backward_monitor(approx, &state, exec));
    }
    Ok(BackwardSolution { t_cut, state, history })
}

/// (A⁽⁰⁾ + v, φ⁽⁰⁾ + w) at the slice of `v` on `grid`, which must share the
/// spacing of `v`; corrections are continued by zero beyond their grid.
pub fn total_state(approx: &ApproximateSolution, v: &EvolutionState, grid: RadialGrid, exec: Exec) -> Result<EvolutionState> {
    if (grid.dr - v.grid.dr).abs() > 1e-12 * grid.dr {
        return Err(Error::InvalidInput("total_state needs the correction grid spacing".into()));
    }
    let t = v.t;
    let bg = exec.map_range(grid.n, |j| approx.point(t, grid.r(j)));
    let mut s = EvolutionState::zeros(grid, t);
    for (j, b) in bg.iter().enumerate() {
        let c = |f: usize, u: bool| {
            if j >= v.grid.n {
                0.0
            } else if u {
                v.u[f][j]
            } else {
                v.p[f][j]
            }
        };
        s.u[A0][j] = b.a[0] + c(A0, true);
        s.p[A0][j] = b.a_t[0] + c(A0, false);
        s.u[AR][j] = b.a[1] + c(AR, true);
        s.p[AR][j] = b.a_t[1] + c(AR, false);
        s.u[PHI_RE][j] = b.phi.re + c(PHI_RE, true);
        s.u[PHI_IM][j] = b.phi.im + c(PHI_IM, true);
        s.p[PHI_RE][j] = b.phi_t.re + c(PHI_RE, false);
        s.p[PHI_IM][j] = b.phi_t.im + c(PHI_IM, false);
    }
    Ok(s)
}

/// Energy norm (Σ ½∫(|∂_tΔ|² + |∂_rΔ|² + m²|Δ_φ|²)r²dr)^{1/2} of the
/// difference of two slices on their common nodes.
pub fn energy_distance(a: &EvolutionState, b: &EvolutionState) -> Result<f64> {
    if (a.grid.dr - b.grid.dr).abs() > 1e-12 * a.grid.dr {
        return Err(Error::InvalidInput("slices must share a grid spacing".into()));
    }
    let n = a.grid.n.min(b.grid.n);
    let grid = RadialGrid { n, ..a.grid };
    let mut d = EvolutionState::zeros(grid, a.t);
    for f in 0..NFIELDS {
        for j in 0..n {
            d.u[f][j] = a.u[f][j] - b.u[f][j];
            d.p[f][j] = a.p[f][j] - b.p[f][j];
        }
    }
    Ok(field_energies(&d).iter().sum::<f64>().sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CauchyReport {
    pub t_cuts: Vec<f64>,
    /// Distance between consecutive solutions, labelled by the smaller T.
    pub differences: Vec<f64>,
    pub strictly_decreasing: bool,
    pub exponent: Option<f64>,
}

pub fn cauchy_limit(solutions: &[BackwardSolution]) -> Result<CauchyReport> {
    if solutions.len() < 2 {
        return Err(Error::InvalidInput("the Cauchy check needs at least two values of T".into()));
    }
    let mut sorted: Vec<&BackwardSolution> = solutions.iter().collect();
    sorted.sort_by(|a, b| a.t_cut.total_cmp(&b.t_cut));
    let differences: Vec<f64> = sorted
        .windows(2)
        .map(|w| energy_distance(&w[0].state, &w[1].state))
        .collect::<Result<_>>()?;
    let t_cuts: Vec<f64> = sorted.iter().map(|s| s.t_cut).collect();
    let x = &t_cuts[..differences.len()];
    let exponent = fit_power_law(x, &differences).ok().map(|f| f.slope);
    Ok(CauchyReport {
        strictly_decreasing: differences.windows(2).all(|w| w[1] < w[0]),
        t_cuts,
        differences,
        exponent,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaugeDecay {
    pub shells: Vec<f64>,
    pub sup: Vec<f64>,
    pub fit: LineFit,
}

/// sup |∂^μA⁽⁰⁾_μ| on the null shells t + r = S (t ≥ t_min, r ≥ 1,
/// |q| > q_gap) and its power-law fit in S.
pub fn gauge_decay(approx: &ApproximateSolution, shells: &[f64], t_min: f64, q_gap: f64, dq: f64, exec: Exec) -> Result<GaugeDecay> {
    let sup: Vec<f64> = exec.map(shells, |&s| {
        let lo = 2.0 - s;
        let hi = (s - 2.0 * t_min).min(approx.q_edge + 4.0);
        let n = ((hi - lo) / dq).floor().max(0.0) as usize;
        (0..=n)
            .map(|k| lo + dq * k as f64)
            .filter(|q| q.abs() > q_gap)
            .map(|q| approx.gauge(0.5 * (s - q), 0.5 * (s + q)).abs())
            .fold(0.0f64, f64::max)
    });
    let fit = fit_power_law(shells, &sup)?;
    Ok(GaugeDecay {
        shells: shells.to_vec(),
        sup,
        fit,
    })
}

impl BackwardSolution {
    pub fn monitor_at(&self, t: f64) -> Option<&BackwardMonitor> {
        self.history.iter().find(|m| (m.t - t).abs() <= 1e-9 * t.abs().max(1.0))
    }
}

/// Power-law fit of ‖λ_T‖ on the slice t = t_cmp against T.
pub fn lambda_t_slope(solutions: &[BackwardSolution], t_cmp: f64) -> Result<LineFit> {
    let t: Vec<f64> = solutions.iter().map(|s| s.t_cut).collect();
    let l: Vec<f64> = solutions
        .iter()
        .map(|s| {
            s.monitor_at(t_cmp)
                .map(|m| m.lambda_l2)
                .ok_or_else(|| Error::InvalidInput(format!("no record of the T={} solution at t={t_cmp}", s.t_cut)))
        })
        .collect::<Result<_>>()?;
    fit_power_law(&t, &l)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemainderDecay {
    pub rho: f64,
    pub tau: Vec<f64>,
    pub maxwell: Vec<f64>,
    pub kg: Vec<f64>,
    pub maxwell_fit: Option<LineFit>,
    pub kg_fit: Option<LineFit>,
}

/// Remainders along the ray r = ρt, each sample the maximum over one
/// oscillation period in τ.
pub fn remainder_decay(approx: &ApproximateSolution, rho: f64, tau_lo: f64, tau_hi: f64, n: usize, exec: Exec) -> Result<RemainderDecay> {
    if !(0.0..1.0).contains(&rho) || !(tau_lo > 0.0 && tau_hi > tau_lo) || n < 2 {
        return Err(Error::InvalidInput("remainder decay needs 0 ≤ ρ < 1, 0 < τ_lo < τ_hi and n ≥ 2".into()));
    }
    let s = rho.atanh();
    let (ch, sh) = (s.cosh(), s.sinh());
    let tau: Vec<f64> = (0..n)
        .map(|k| tau_lo * (tau_hi / tau_lo).powf(k as f64 / (n - 1) as f64))
        .collect();
    let rows: Vec<(f64, f64)> = exec.map(&tau, |&t0| {
        (0..16).fold((0.0f64, 0.0f64), |(m, k), i| {
            let tau = t0 + 2.0 * std::f64::consts::PI * i as f64 / 16.0;
            let e = approx.remainders(tau * ch, tau * sh);
            (m.max(e.maxwell[0].abs()).max(e.maxwell[1].abs()), k.max(e.kg.norm()))
        })
    });
    let maxwell: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let kg: Vec<f64> = rows.iter().map(|r| r.1).collect();
    Ok(RemainderDecay {
        rho,
        maxwell_fit: fit_power_law(&tau, &maxwell).ok(),
        kg_fit: fit_power_law(&tau, &kg).ok(),
        tau,
        maxwell,
        kg,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnsatzResidual {
    pub ell: u32,
    pub with_f1: bool,
    pub q: f64,
    pub r: Vec<f64>,
    pub residual: Vec<f64>,
    pub fit: Option<LineFit>,
}

/// |□_ℓ(χ(⟨q⟩/r)(F/r + F⁽¹⁾/r²))| along the outgoing characteristic q.
pub fn ansatz_residual(f: &QProfile, ell: u32, with_f1: bool, q: f64, r_lo: f64, r_hi: f64, n: usize) -> Result<AnsatzResidual> {
    if !(r_lo > 0.0 && r_hi > r_lo) || n < 2 {
        return Err(Error::InvalidInput("ansatz residual needs 0 < r_lo < r_hi and n ≥ 2".into()));
    }
    let term = RadiationTerm::new(f, &second_order_radiation(f, ell)?)?;
    let r: Vec<f64> = (0..n).map(|k| r_lo * (r_hi / r_lo).powf(k as f64 / (n - 1) as f64)).collect();
    let residual: Vec<f64> = r
        .iter()
        .map(|&r| term.jet(Jet::var_t(r - q), Jet::var_r(r), with_f1).box_ell(r, ell).abs())
        .collect();
    Ok(AnsatzResidual {
        ell,
        with_f1,
        q,
        fit: fit_power_law(&r, &residual).ok(),
        r,
        residual,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTrip {
    pub t_cut: f64,
    pub estimates: Vec<AmplitudeEstimate>,
    /// Relative ℓ² defect of (a₊, a₋) over the rays.
    pub defect: f64,
    pub radiation: Vec<RadiationFit>,
    pub q0: f64,
    pub q_infinity: f64,
    /// Rays of the forward run, phases shifted to the table convention.
    pub rays: Vec<RayRecord>,
}

pub fn amplitude_defect(approx: &ApproximateSolution, estimates: &[AmplitudeEstimate]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for e in estimates {
        let (p, m) = approx.amplitudes_at(e.s);
        num += (e.a_plus - p).norm_sqr() + (e.a_minus - m).norm_sqr();
        den += p.norm_sqr() + m.norm_sqr();
    }
    (num / den.max(1e-300)).sqrt()
}

/// Take the constructed solution at t_min as Cauchy data, evolve it forward
/// with the reduced system and extract a± and the radiation fields again.
pub fn roundtrip_check(
    approx: &ApproximateSolution,
    sol: &BackwardSolution,
    plan: &ForwardPlan,
    scheme: &Scheme,
    extract: &ExtractOptions,
    exec: Exec,
) -> Result<RoundTrip> {
    let q_hi = plan.radiation_q.iter().fold(0.0f64, |m, q| m.max(*q));
    let grid = RadialGrid::new(sol.state.grid.dr, plan.t_max + q_hi + 12.0)?;
    let state = total_state(approx, &sol.state, grid, exec)?;
    let data = InitialDataSet::from_state(&state);
    let mut traj = run_forward(&data, plan, &ReducedMkg, scheme, exec)?;
    if let Some(ph) = approx.phase_table() {
        for ray in traj.rays.iter_mut() {
            if !ray.is_empty() && ray.tau[0] > plan.tau0 {
                ray.shift_phase(ph.theta(ray.tau[0], ray.s));
            }
        }
    }
    let estimates = extract_all(&traj.rays, extract, exec)?;
    let radiation = traj
        .radiation
        .iter()
        .map(|rec| extract_radiation(rec, data.q0))
        .collect::<Result<Vec<_>>>()?;
    Ok(RoundTrip {
        t_cut: sol.t_cut,
        defect: amplitude_defect(approx, &estimates),
        estimates,
        radiation,
        q0: data.q0,
        q_infinity: approx.q_inf,
        rays: traj.rays,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interior_profile::{AmTableSpec, SourceProfile};
    use crate::scattering_data::{default_rho_grid, AmplitudeFamily, RadiationFamily};

    fn coarse_table(a: &KleinGordonAmplitudes) -> AmTable {
        let spec = AmTableSpec {
            dq: 0.1,
            n_xi: 10,
            tol: 1e-6,
            ..AmTableSpec::default()
        };
        AmTable::build(&SourceProfile::from_amplitudes(a).unwrap(), spec, Exec::default()).unwrap()
    }

    fn approx_for(plus: AmplitudeFamily, minus: AmplitudeFamily, c: f64) -> ApproximateSolution {
        let amps = KleinGordonAmplitudes::from_families(&plus, &minus, 1.75, 1.0, default_rho_grid()).unwrap();
        let am = coarse_table(&amps);
        let lbar = QProfile::default_grid(|q| RadiationFamily::PowerBump { c, gamma: 0.1, cut: 20.0 }.eval(q));
        let data = backward_scattering_data(amps, &lbar, 0.1, &am, true).unwrap();
        let opts = ApproxOptions {
            phase: PhaseSpec {
                tau_max: 60.0,
                s_max: 4.0,
                ..PhaseSpec::default()
            },
            ..ApproxOptions::default()
        };
        assemble_approximate(&data, am, &opts, Exec::default()).unwrap()
    }

    fn profile(f: impl Fn(f64) -> f64) -> ComplexProfile {
        ComplexProfile::from_fn(default_rho_grid(), |r| Complex64::new(f(r), 0.0)).unwrap()
    }

    #[test]
    fn phase_table_integrates_log() {
        let spec = PhaseSpec {
            tau_max: 100.0,
            s_max: 3.0,
            ..PhaseSpec::default()
        };
        let t = PhaseTable::build(|t, r| 0.3 / (t * t - r * r).sqrt(), 2.0, &spec, Exec::Sequential).unwrap();
        for &(tau, s) in &[(2.0, 0.0), (5.0, 0.7), (37.0, 2.2), (0.5, 1.1)] {
            let want = 0.3 * (tau / 2.0f64).ln();
            assert!((t.theta(tau, s) - want).abs() < 1e-9, "{tau} {s}");
        }
        let (tt, rr) = (40.0, 17.0);
        let tau = Jet::var_t(tt) * Jet::var_t(tt) - Jet::var_r(rr) * Jet::var_r(rr);
        let tau = tau.sqrt();
        let s = (Jet::var_r(rr) / Jet::var_t(tt)).atanh();
        let j = t.eval_jet(tau, s);
        let want = (tau / 2.0).ln() * 0.3;
        assert!((j.t - want.t).abs() < 1e-8 && (j.rr - want.rr).abs() < 1e-7);
    }

    #[test]
    fn phi_ansatz_free_remainder() {
        let fam = AmplitudeFamily::PowerGaussian {
            re: 1.0,
            im: 0.0,
            exponent: 1.75,
            width: 1.5,
        };
        let a = |rho: f64| fam.eval(rho).re;
        let plus = profile(a);
        let zero = profile(|_| 0.0);
        let a_s = |s: f64| a(s.tanh());
        for &(t, r) in &[(30.0, 6.0), (50.0, 20.0), (80.0, 0.5)] {
            let p = phi_ansatz(Jet::var_t(t), Jet::var_r(r), &plus, &zero, |_, _| Jet::ZERO);
            let got = Complex64::new(p.re.v - p.re.box_ell(r, 0), p.im.v - p.im.box_ell(r, 0));
            let tau = (t * t - r * r).sqrt();
            let s = (r / t).atanh();
            let h = 1e-3;
            let d1 = (a_s(s + h) - a_s(s - h)) / (2.0 * h);
            let d2 = (a_s(s + h) - 2.0 * a_s(s) + a_s(s - h)) / (h * h);
            let lap = d2 + 2.0 * d1 / s.tanh();
            let want = -Complex64::from_polar(tau.powf(-3.5), tau) * (lap + 0.75 * a_s(s));
            assert!((got - want).norm() < 1e-3 * want.norm() + 1e-12, "{t} {r}: {got} vs {want}");
        }
    }

    #[test]
    fn spherical_wave_ansatz_is_exact_for_l0() {
        let f = QProfile::default_grid(|q| (-(q / 2.0).powi(2)).exp());
        let res = ansatz_residual(&f, 0, true, 0.7, 20.0, 400.0, 12).unwrap();
        assert!(res.residual.iter().all(|v| *v < 1e-14));
    }

    #[test]
    fn ansatz_residual_exponents() {
        let f = QProfile::default_grid(|q| (-(q / 2.0).powi(2)).exp());
        let without = ansatz_residual(&f, 1, false, 0.7, 20.0, 400.0, 12).unwrap();
        assert!((without.fit.unwrap().slope + 3.0).abs() < 0.05);
        let l2 = ansatz_residual(&f, 2, true, 0.7, 20.0, 400.0, 12).unwrap();
        assert!((l2.fit.unwrap().slope + 4.0).abs() < 0.05);
        let l1 = ansatz_residual(&f, 1, true, 0.7, 20.0, 400.0, 12).unwrap();
        let ratio = l1.residual[11] / without.residual[11];
        assert!(ratio < 1e-5, "{ratio}");
    }

    #[test]
    fn energy_distance_of_identical_slices_is_zero() {
        let g = RadialGrid::new(0.1, 10.0).unwrap();
        let mut a = EvolutionState::zeros(g, 4.0);
        for j in 0..g.n {
            a.u[PHI_RE][j] = (-(g.r(j) - 3.0).powi(2)).exp();
        }
        assert_eq!(energy_distance(&a, &a).unwrap(), 0.0);
        let b = EvolutionState::zeros(g, 4.0);
        let d = energy_distance(&a, &b).unwrap();
        let e = field_energies(&a)[2].sqrt();
        assert!((d - e).abs() < 1e-14);
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let a = approx_for(AmplitudeFamily::Zero, AmplitudeFamily::Zero, 0.0);
        assert_eq!(a.q_infinity(), 0.0);
        for &(t, r) in &[(5.0, 1.0), (30.0, 29.5), (20.0, 26.0), (50.0, 10.0)] {
            let b = a.point(t, r);
            assert_eq!(b.a, [0.0, 0.0]);
            assert_eq!(b.phi, Complex64::new(0.0, 0.0));
            let rem = a.remainders(t, r);
            assert_eq!(rem.maxwell, [0.0, 0.0]);
            assert_eq!(rem.kg, Complex64::new(0.0, 0.0));
        }
    }

    #[test]
    fn parts_add_up_and_plateaus_reach_q_infinity() {
        let minus = AmplitudeFamily::Power {
            re: 1.0,
            im: 0.0,
            exponent: 1.75,
        };
        let plus = AmplitudeFamily::Power {
            re: 0.0,
            im: 0.4,
            exponent: 1.75,
        };
        let a = approx_for(plus, minus, 0.02);
        let want = 0.84 * std::f64::consts::PI / 32.0;
        assert!((a.q_infinity() - want).abs() < 1e-6 * want);
        for &(t, r) in &[(6.0, 2.0), (30.0, 29.0), (40.0, 45.0), (40.0, 100.0), (300.0, 250.0)] {
            let (tj, rj) = (Jet::var_t(t), Jet::var_r(r));
            let parts = a.parts(tj, rj);
            let total = a.potentials(tj, rj);
            let sum = parts.total();
            for k in 0..2 {
                for (x, y) in [(sum[k].v, total[k].v), (sum[k].t, total[k].t), (sum[k].rr, total[k].rr)] {
                    assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()), "{t} {r}");
                }
            }
        }
        for q in [-20.0, -6.0, 6.0, 20.0] {
            let r = 4000.0;
            let [a0, ar] = a.potential_values(r - q, r);
            let f = r * (a0 + ar);
            assert!((f - want).abs() < 5e-3 * want, "q={q}: {f} vs {want}");
        }
        for tau in [10.0, 25.0, 40.0] {
            let p = a.phi(Jet::var_t(tau), Jet::var_r(0.0));
            let (ap, am) = a.amplitudes_at(0.0);
            let env = tau.powf(-1.5) * (ap + Complex64::from_polar(1.0, -2.0 * tau) * am).norm();
            assert!((Complex64::new(p.re.v, p.im.v).norm() - env).abs() < 1e-12 * env);
        }
    }

    #[test]
    fn radiation_term_is_linear_in_the_profiles() {
        let f = QProfile::default_grid(|q| (-(q / 3.0).powi(2)).exp());
        let g = QProfile::default_grid(|q| q / (1.0 + q * q));
        let fg = QProfile::default_grid(|q| (-(q / 3.0).powi(2)).exp() + q / (1.0 + q * q));
        let (tf, tg, tfg) = (
            RadiationTerm::new(&f, &g).unwrap(),
            RadiationTerm::new(&g, &f).unwrap(),
            RadiationTerm::new(&fg, &fg).unwrap(),
        );
        for &(t, r) in &[(20.0, 18.0), (50.0, 53.0), (100.0, 96.5)] {
            let (tj, rj) = (Jet::var_t(t), Jet::var_r(r));
            let sum = tf.jet(tj, rj, true) + tg.jet(tj, rj, true);
            let both = tfg.jet(tj, rj, true);
            assert!((sum.v - both.v).abs() < 1e-12 && (sum.tr - both.tr).abs() < 1e-12);
        }
    }

    #[test]
    fn light_cone_cutoff_only_changes_the_phase_near_the_cone() {
        let amps = KleinGordonAmplitudes::from_families(
            &AmplitudeFamily::Zero,
            &AmplitudeFamily::Power {
                re: 1.0,
                im: 0.0,
                exponent: 1.75,
            },
            1.75,
            1.0,
            default_rho_grid(),
        )
        .unwrap();
        let am = coarse_table(&amps);
        let lbar = QProfile::default_grid(|_| 0.0);
        let data = backward_scattering_data(amps, &lbar, 0.1, &am, true).unwrap();
        let spec = PhaseSpec {
            tau_max: 60.0,
            s_max: 4.0,
            ..PhaseSpec::default()
        };
        let build = |cut: bool| {
            let opts = ApproxOptions {
                light_cone_cutoff: cut,
                phase: spec,
                ..ApproxOptions::default()
            };
            assemble_approximate(&data, am.clone(), &opts, Exec::default()).unwrap()
        };
        let (on, off) = (build(true), build(false));
        let (p_on, p_off) = (on.phase_table().unwrap(), off.phase_table().unwrap());
        assert!((p_on.theta(40.0, 0.5) - p_off.theta(40.0, 0.5)).abs() < 1e-12);
        assert!((p_on.theta(40.0, 3.5) - p_off.theta(40.0, 3.5)).abs() > 1e-6);
    }
}
