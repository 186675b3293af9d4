//! Forward problem: Lorenz-gauge initial data, evolution with ray and
//! characteristic recording, and extraction of a±, radiation fields and the
//! interior profile U_μ.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolve::{
    current, evolve_to, gauge_residual, radial_derivative, slice_charge, EvolutionState, RadialGrid, Scheme, Sources, A0,
    AR, PARITY, PHI_IM, PHI_RE,
};
use crate::fit::{fit_power_law, least_squares, LineFit};
use crate::geometry::{a_tau, CutoffKind, CutoffSpec};
use crate::interior_profile::{compute_u_elliptic, SourceProfile};
use crate::interp::lagrange4;
use crate::linalg::BandedMatrix;
use crate::par::Exec;
use crate::scattering_data::{compute_qinfty, Component, ComplexProfile, KleinGordonAmplitudes};

pub const INITIAL_TIME: f64 = 2.0;

/// Closed-form initial data: φ₀ = ε·e^{−(r/w)²}, φ̇₀ = −iωφ₀ and
/// a_r = c·r·e^{−(r/w)²}, ȧ_r = 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianPulse {
    pub epsilon: f64,
    #[serde(default = "one")]
    pub width: f64,
    #[serde(default = "one")]
    pub frequency: f64,
    #[serde(default)]
    pub ar_amplitude: f64,
}

fn one() -> f64 {
    1.0
}

impl GaussianPulse {
    pub fn new(epsilon: f64) -> Self {
        Self {
            epsilon,
            width: 1.0,
            frequency: 1.0,
            ar_amplitude: 0.0,
        }
    }

    pub fn profiles(&self, grid: &RadialGrid) -> (Vec<f64>, Vec<f64>, Vec<Complex64>, Vec<Complex64>) {
        let r = grid.nodes();
        let e: Vec<f64> = r.iter().map(|r| (-(r / self.width).powi(2)).exp()).collect();
        let a_r = r.iter().zip(&e).map(|(r, e)| self.ar_amplitude * r * e).collect();
        let phi: Vec<Complex64> = e.iter().map(|e| Complex64::new(self.epsilon * e, 0.0)).collect();
        let phid = phi.iter().map(|p| Complex64::new(0.0, -self.frequency) * p).collect();
        (a_r, vec![0.0; grid.n], phi, phid)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialDataSet {
    pub t0: f64,
    pub grid: RadialGrid,
    pub a_r: Vec<f64>,
    pub a_r_dot: Vec<f64>,
    pub phi0: Vec<Complex64>,
    pub phi_dot0: Vec<Complex64>,
    pub a0: Vec<f64>,
    pub a0_dot: Vec<f64>,
    /// Slice charge ∫J₀r²dr.
    pub q0: f64,
    /// Charge read off the Coulomb tail r·A₀ at the outer boundary.
    pub q0_tail: f64,
    pub constraint_residual: f64,
}

impl InitialDataSet {
    /// Wrap an arbitrary Cauchy slice; the constraint residual is the L²
    /// norm of the Lorenz residual on the slice.
    pub fn from_state(state: &EvolutionState) -> Self {
        let n = state.grid.n;
        let phi0: Vec<Complex64> = (0..n).map(|j| state.phi(j)).collect();
        let phi_dot0: Vec<Complex64> = (0..n).map(|j| state.phi_t(j)).collect();
        Self {
            t0: state.t,
            grid: state.grid,
            a_r: state.u[AR].clone(),
            a_r_dot: state.p[AR].clone(),
            phi0,
            phi_dot0,
            a0: state.u[A0].clone(),
            a0_dot: state.p[A0].clone(),
            q0: slice_charge(state).q,
            q0_tail: state.grid.r_max() * state.u[A0][n - 1],
            constraint_residual: gauge_residual(state).lambda_l2,
        }
    }

    pub fn state(&self) -> EvolutionState {
        let mut s = EvolutionState::zeros(self.grid, self.t0);
        s.u[A0] = self.a0.clone();
        s.p[A0] = self.a0_dot.clone();
        s.u[AR] = self.a_r.clone();
        s.p[AR] = self.a_r_dot.clone();
        s.u[PHI_RE] = self.phi0.iter().map(|z| z.re).collect();
        s.u[PHI_IM] = self.phi0.iter().map(|z| z.im).collect();
        s.p[PHI_RE] = self.phi_dot0.iter().map(|z| z.re).collect();
        s.p[PHI_IM] = self.phi_dot0.iter().map(|z| z.im).collect();
        s
    }
}

fn divergence(ar: &[f64], dr: f64) -> Vec<f64> {
    let d = radial_derivative(ar, -1.0, dr);
    (0..ar.len())
        .map(|j| if j == 0 { 3.0 * d[0] } else { d[j] + 2.0 * ar[j] / (j as f64 * dr) })
        .collect()
}

/// Matrix of −△₀ + V with parity folding at the origin and the Robin
/// condition (r·A₀)′ = 0 on the last two nodes.
fn constraint_operator(grid: &RadialGrid, potential: &[f64]) -> BandedMatrix {
    let n = grid.n;
    let dr = grid.dr;
    let mut m = BandedMatrix::new(n, 4, 2);
    let c2 = [-1.0, 16.0, -30.0, 16.0, -1.0];
    let c1 = [1.0, -8.0, 0.0, 8.0, -1.0];
    for j in 0..n - 2 {
        let r = grid.r(j);
        for (k, o) in (-2isize..=2).enumerate() {
            let col = (j as isize + o).unsigned_abs();
            let w = if j == 0 {
                3.0 * c2[k] / (12.0 * dr * dr)
            } else {
                c2[k] / (12.0 * dr * dr) + 2.0 * c1[k] / (12.0 * dr * r)
            };
            m.add(j, col, -w);
        }
        m.add(j, j, potential[j]);
    }
    let rows: [(usize, [f64; 5], usize); 2] = [
        (n - 2, [-1.0, 6.0, -18.0, 10.0, 3.0], n - 5),
        (n - 1, [3.0, -16.0, 36.0, -48.0, 25.0], n - 5),
    ];
    for (j, coef, first) in rows {
        for (k, c) in coef.iter().enumerate() {
            m.add(j, first + k, c / (12.0 * dr));
        }
        m.add(j, j, 1.0 / grid.r(j));
    }
    m
}

/// Solve (−△ + |φ₀|²)A₀ = Im(φ₀·conj φ̇₀) − (∂_r + 2/r)ȧ_r with
/// (r·A₀)′ = 0 at r_max, then set ∂_tA₀ from the Lorenz condition.
pub fn build_initial_data(
    grid: RadialGrid,
    a_r: Vec<f64>,
    a_r_dot: Vec<f64>,
    phi0: Vec<Complex64>,
    phi_dot0: Vec<Complex64>,
) -> Result<InitialDataSet> {
    let n = grid.n;
    if [a_r.len(), a_r_dot.len(), phi0.len(), phi_dot0.len()].iter().any(|&l| l != n) {
        return Err(Error::InvalidInput("initial profiles must match the grid".into()));
    }
    if a_r.iter().chain(&a_r_dot).any(|v| !v.is_finite()) || phi0.iter().chain(&phi_dot0).any(|z| !z.is_finite()) {
        return Err(Error::InvalidInput("initial profiles contain non-finite values".into()));
    }
    let potential: Vec<f64> = phi0.iter().map(|z| z.norm_sqr()).collect();
    let div_dot = divergence(&a_r_dot, grid.dr);
    let mut rhs: Vec<f64> = (0..n).map(|j| current(0.0, phi0[j], phi_dot0[j]) - div_dot[j]).collect();
    rhs[n - 2] = 0.0;
    rhs[n - 1] = 0.0;
    let op = constraint_operator(&grid, &potential);
    let a0 = op.clone().solve(&rhs)?;
    let resid = op.mul_vec(&a0).iter().zip(&rhs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let scale = rhs.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    if !(resid <= 1e-8 * scale) && resid > 1e-300 {
        return Err(Error::Precondition {
            what: "constraint solve did not converge".into(),
            defect: resid,
        });
    }
    let a0_dot = divergence(&a_r, grid.dr);
    let mut data = InitialDataSet {
        t0: INITIAL_TIME,
        grid,
        a_r,
        a_r_dot,
        phi0,
        phi_dot0,
        a0,
        a0_dot,
        q0: 0.0,
        q0_tail: 0.0,
        constraint_residual: resid,
    };
    let sc = slice_charge(&data.state());
    data.q0 = sc.q;
    data.q0_tail = grid.r_max() * data.a0[n - 1];
    let mismatch = (data.q0 - data.q0_tail).abs();
    if mismatch > 1e-3 * data.q0.abs() + 1e-12 + sc.tail {
        return Err(Error::Precondition {
            what: format!("Coulomb tail charge {} disagrees with slice charge {}", data.q0_tail, data.q0),
            defect: mismatch,
        });
    }
    Ok(data)
}

/// Samples along the ray of fixed hyperbolic radius s (ρ = tanh s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RayRecord {
    pub s: f64,
    pub rho: f64,
    pub tau: Vec<f64>,
    pub phi: Vec<Complex64>,
    pub dphi_tau: Vec<Complex64>,
    pub a0: Vec<f64>,
    pub ar: Vec<f64>,
    pub a_tau: Vec<f64>,
    /// ∫_{τ₀}^{τ} χ_LC(q)A^τ dτ by the trapezoid rule.
    pub phase: Vec<f64>,
}

impl RayRecord {
    pub fn new(s: f64) -> Self {
        Self {
            s,
            rho: s.tanh(),
            tau: Vec::new(),
            phi: Vec::new(),
            dphi_tau: Vec::new(),
            a0: Vec::new(),
            ar: Vec::new(),
            a_tau: Vec::new(),
            phase: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau.is_empty()
    }

    /// The record restricted to t ≤ t_max, i.e. extraction from an earlier
    /// final hyperboloid.
    pub fn truncated(&self, t_max: f64) -> Self {
        let ch = self.s.cosh();
        let n = self.tau.partition_point(|&tau| tau * ch <= t_max * (1.0 + 1e-12));
        Self {
            s: self.s,
            rho: self.rho,
            tau: self.tau[..n].to_vec(),
            phi: self.phi[..n].to_vec(),
            dphi_tau: self.dphi_tau[..n].to_vec(),
            a0: self.a0[..n].to_vec(),
            ar: self.ar[..n].to_vec(),
            a_tau: self.a_tau[..n].to_vec(),
            phase: self.phase[..n.min(self.phase.len())].to_vec(),
        }
    }

    /// The light-cone-cut integrand χ_LC(q)A^τ at each sample.
    pub fn phase_integrand(&self) -> Vec<f64> {
        let chi = CutoffSpec::standard(CutoffKind::ChiLc);
        let e = (-self.s).exp();
        self.tau.iter().zip(&self.a_tau).map(|(tau, a)| chi.eval(-tau * e) * a).collect()
    }

    pub fn shift_phase(&mut self, offset: f64) {
        for p in self.phase.iter_mut() {
            *p += offset;
        }
    }

    /// Recompute the phase accumulator with lower limit τ₀.
    pub fn accumulate_phase(&mut self, tau0: f64) {
        let w = self.phase_integrand();
        let n = self.tau.len();
        let mut acc = vec![0.0; n];
        for k in 1..n {
            acc[k] = acc[k - 1] + 0.5 * (self.tau[k] - self.tau[k - 1]) * (w[k] + w[k - 1]);
        }
        let offset = if n == 0 || tau0 <= self.tau[0] {
            0.0
        } else {
            let k = self.tau.partition_point(|&t| t <= tau0).clamp(1, n - 1);
            let f = (tau0 - self.tau[k - 1]) / (self.tau[k] - self.tau[k - 1]);
            acc[k - 1] + f * (acc[k] - acc[k - 1])
        };
        self.phase = acc.iter().map(|a| a - offset).collect();
    }
}

/// Samples along the outgoing characteristic q = r − t.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiationRecord {
    pub q: f64,
    pub r: Vec<f64>,
    pub ra0: Vec<f64>,
    pub rar: Vec<f64>,
}

impl RadiationRecord {
    pub fn new(q: f64) -> Self {
        Self {
            q,
            r: Vec::new(),
            ra0: Vec::new(),
            rar: Vec::new(),
        }
    }

    pub fn truncated(&self, t_max: f64) -> Self {
        let n = self.r.partition_point(|&r| r - self.q <= t_max * (1.0 + 1e-12));
        Self {
            q: self.q,
            r: self.r[..n].to_vec(),
            ra0: self.ra0[..n].to_vec(),
            rar: self.rar[..n].to_vec(),
        }
    }

    pub fn ra_l(&self) -> Vec<f64> {
        self.ra0.iter().zip(&self.rar).map(|(a, b)| a + b).collect()
    }

    pub fn ra_lbar(&self) -> Vec<f64> {
        self.ra0.iter().zip(&self.rar).map(|(a, b)| a - b).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorSample {
    pub t: f64,
    pub charge: f64,
    pub charge_tail: f64,
    pub lambda_l2: f64,
    pub lambda_max: f64,
    pub energy: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForwardPlan {
    pub t_max: f64,
    pub record_dt: f64,
    pub ray_s: Vec<f64>,
    pub radiation_q: Vec<f64>,
    pub slice_times: Vec<f64>,
    /// Lower limit of the phase integral.
    pub tau0: f64,
}

impl Default for ForwardPlan {
    fn default() -> Self {
        Self {
            t_max: 300.0,
            record_dt: 0.4,
            ray_s: (0..=24).map(|k| 0.1 * k as f64).collect(),
            radiation_q: vec![-8.0, -4.0, -2.0, 0.0, 2.0],
            slice_times: vec![INITIAL_TIME, 100.0, 200.0, 300.0],
            tau0: INITIAL_TIME,
        }
    }
}

impl ForwardPlan {
    pub fn validate(&self, grid: &RadialGrid) -> Result<()> {
        if !(self.t_max > INITIAL_TIME) || !(self.record_dt > 0.0) {
            return Err(Error::InvalidInput("t_max must exceed the initial time and record_dt must be positive".into()));
        }
        if grid.r_max() < self.t_max + self.radiation_q.iter().fold(0.0f64, |m, q| m.max(*q)) + 10.0 {
            return Err(Error::InvalidInput(format!(
                "r_max = {} does not accommodate t_max = {} plus a margin of 10",
                grid.r_max(),
                self.t_max
            )));
        }
        if self.ray_s.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::InvalidInput("ray hyperbolic radii must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub rays: Vec<RayRecord>,
    pub radiation: Vec<RadiationRecord>,
    pub monitors: Vec<MonitorSample>,
    pub slices: Vec<EvolutionState>,
    pub final_state: EvolutionState,
}

struct Snapshot {
    ext: Vec<Vec<f64>>,
    x0: f64,
    dr: f64,
}

impl Snapshot {
    /// Ghost-extended arrays: u[0..4], p[0..4], ∂_rφ (re, im).
    fn new(state: &EvolutionState) -> Self {
        let dr = state.grid.dr;
        let ext_of = |a: &[f64], parity: f64| {
            let mut e: Vec<f64> = (1..=3).rev().map(|m| parity * a[m]).collect();
            e.extend_from_slice(a);
            e
        };
        let mut ext = Vec::with_capacity(10);
        for f in 0..4 {
            ext.push(ext_of(&state.u[f], PARITY[f]));
        }
        for f in 0..4 {
            ext.push(ext_of(&state.p[f], PARITY[f]));
        }
        for f in [PHI_RE, PHI_IM] {
            ext.push(ext_of(&radial_derivative(&state.u[f], 1.0, dr), -1.0));
        }
        Self { ext, x0: -3.0 * dr, dr }
    }

    fn at(&self, k: usize, r: f64) -> f64 {
        lagrange4(&self.ext[k], self.x0, self.dr, r).0
    }
}

fn record(state: &EvolutionState, rays: &mut [RayRecord], radiation: &mut [RadiationRecord]) {
    let snap = Snapshot::new(state);
    let t = state.t;
    let r_edge = state.grid.r_max() - 5.0 * state.grid.dr;
    for ray in rays.iter_mut() {
        let (ch, sh) = (ray.s.cosh(), ray.s.sinh());
        let tau = t / ch;
        let r = t * ray.rho;
        if r > r_edge {
            continue;
        }
        let phi = Complex64::new(snap.at(PHI_RE, r), snap.at(PHI_IM, r));
        let phi_t = Complex64::new(snap.at(4 + PHI_RE, r), snap.at(4 + PHI_IM, r));
        let phi_r = Complex64::new(snap.at(8, r), snap.at(9, r));
        let a0 = snap.at(A0, r);
        let ar = snap.at(AR, r);
        ray.tau.push(tau);
        ray.phi.push(phi);
        ray.dphi_tau.push(ch * phi_t + sh * phi_r);
        ray.a0.push(a0);
        ray.ar.push(ar);
        ray.a_tau.push(a_tau(a0, ar, t, r));
    }
    for rec in radiation.iter_mut() {
        let r = t + rec.q;
        if r < 1.0 || r > r_edge {
            continue;
        }
        rec.r.push(r);
        rec.ra0.push(r * snap.at(A0, r));
        rec.rar.push(r * snap.at(AR, r));
    }
}

fn monitor(state: &EvolutionState) -> MonitorSample {
    let g = gauge_residual(state);
    let c = slice_charge(state);
    MonitorSample {
        t: state.t,
        charge: c.q,
        charge_tail: c.tail,
        lambda_l2: g.lambda_l2,
        lambda_max: g.lambda_max,
        energy: g.energy,
    }
}

/// Evolve from the initial slice to t_max, recording rays, characteristics,
/// monitors and slices at multiples of `record_dt`.
pub fn run_forward(data: &InitialDataSet, plan: &ForwardPlan, sources: &dyn Sources, scheme: &Scheme, exec: Exec) -> Result<Trajectory> {
    plan.validate(&data.grid)?;
    let mut state = data.state();
    let mut rays: Vec<RayRecord> = plan.ray_s.iter().map(|&s| RayRecord::new(s)).collect();
    let mut radiation: Vec<RadiationRecord> = plan.radiation_q.iter().map(|&q| RadiationRecord::new(q)).collect();
    let mut monitors = vec![monitor(&state)];
    let mut slices = Vec::new();
    let n_records = ((plan.t_max - data.t0) / plan.record_dt).round() as usize;
    let slice_index: Vec<usize> = plan
        .slice_times
        .iter()
        .map(|t| (((t - data.t0) / plan.record_dt).round().max(0.0) as usize).min(n_records))
        .collect();
    record(&state, &mut rays, &mut radiation);
    if slice_index.contains(&0) {
        slices.push(state.clone());
    }
    for k in 1..=n_records {
        let t_next = data.t0 + plan.record_dt * k as f64;
        state = evolve_to(state, t_next, sources, scheme, exec, |_| Ok(()))?;
        state.t = t_next;
        record(&state, &mut rays, &mut radiation);
        monitors.push(monitor(&state));
        if slice_index.contains(&k) {
            slices.push(state.clone());
        }
    }
    for ray in rays.iter_mut() {
        ray.accumulate_phase(plan.tau0);
    }
    Ok(Trajectory {
        rays,
        radiation,
        monitors,
        slices,
        final_state: state,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractOptions {
    /// The fit window is [window_start·τ_max, τ_max].
    pub window_start: f64,
    pub tau_fit_min: f64,
    /// Non-settling threshold relative to |b±|.
    pub drift_threshold: f64,
    /// Absolute drift tolerated regardless of |b±|.
    pub abs_floor: f64,
    pub use_phase: bool,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self {
            window_start: 0.6,
            tau_fit_min: 40.0,
            drift_threshold: 0.25,
            abs_floor: 1e-12,
            use_phase: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeEstimate {
    pub s: f64,
    pub rho: f64,
    pub a_plus: Complex64,
    pub a_minus: Complex64,
    pub drift_plus: f64,
    pub drift_minus: f64,
    pub tau_window: (f64, f64),
}

fn window_mean(tau: &[f64], v: &[Complex64]) -> Complex64 {
    if tau.len() == 1 {
        return v[0];
    }
    let mut acc = Complex64::new(0.0, 0.0);
    for k in 1..tau.len() {
        acc += 0.5 * (tau[k] - tau[k - 1]) * (v[k] + v[k - 1]);
    }
    acc / (tau[tau.len() - 1] - tau[0])
}

/// Window averages of e^{−iθ}Φ± with Φ = τ^{3/2}φ, returning
/// (a₊, a₋, drift₊, drift₋) where a± = ∓(i/2)b±; drifts are the differences
/// between the two window halves, scaled like a±.
fn estimate(ray: &RayRecord, opts: &ExtractOptions) -> Result<AmplitudeEstimate> {
    let n = ray.len();
    if n < 4 {
        return Err(Error::Fit(format!("ray s={} has only {n} samples", ray.s)));
    }
    let tau_max = ray.tau[n - 1];
    if tau_max < opts.tau_fit_min {
        return Err(Error::Fit(format!(
            "ray s={} reaches only τ={tau_max:.3} < τ_fit_min={}",
            ray.s, opts.tau_fit_min
        )));
    }
    let lo = opts.window_start * tau_max;
    let start = ray.tau.partition_point(|&t| t < lo);
    let i = Complex64::new(0.0, 1.0);
    let mut bp = Vec::with_capacity(n - start);
    let mut bm = Vec::with_capacity(n - start);
    for k in start..n {
        let tau = ray.tau[k];
        let w = tau.powf(1.5);
        let big = w * ray.phi[k];
        let dbig = w * (ray.dphi_tau[k] + 1.5 * ray.phi[k] / tau);
        let theta = if opts.use_phase { ray.phase[k] } else { 0.0 };
        let plus = (-i * tau).exp() * (dbig + i * big);
        let minus = (i * tau).exp() * (dbig - i * big);
        // Both branches carry the same gauge phase e^{iθ}: ∂_τΦ± = iA^τΦ± + oscillating terms.
        let unwind = (-i * theta).exp();
        bp.push(unwind * plus);
        bm.push(unwind * minus);
    }
    let taus = &ray.tau[start..];
    if taus.len() < 4 {
        return Err(Error::Fit(format!("ray s={} has fewer than 4 samples in the fit window", ray.s)));
    }
    let half = taus.len() / 2;
    let drift = |b: &[Complex64]| (window_mean(&taus[..=half], &b[..=half]) - window_mean(&taus[half..], &b[half..])).norm() * 0.5;
    Ok(AmplitudeEstimate {
        s: ray.s,
        rho: ray.rho,
        a_plus: -0.5 * i * window_mean(taus, &bp),
        a_minus: 0.5 * i * window_mean(taus, &bm),
        drift_plus: drift(&bp),
        drift_minus: drift(&bm),
        tau_window: (taus[0], tau_max),
    })
}

/// a± on one ray, with the estimator drift over the window as error bar.
pub fn extract_a_pm(ray: &RayRecord, opts: &ExtractOptions) -> Result<AmplitudeEstimate> {
    let e = estimate(ray, opts)?;
    let scale = e.a_plus.norm().max(e.a_minus.norm());
    for d in [e.drift_plus, e.drift_minus] {
        let threshold = opts.drift_threshold * scale + opts.abs_floor;
        if d > threshold {
            return Err(Error::NonSettling { drift: d, threshold });
        }
    }
    Ok(e)
}

/// a± on every ray; the absolute drift floor is set relative to the
/// largest amplitude found on any ray, so nearly empty outer rays do not
/// fail the extraction.
pub fn extract_all(rays: &[RayRecord], opts: &ExtractOptions, exec: Exec) -> Result<Vec<AmplitudeEstimate>> {
    let first: Vec<Result<AmplitudeEstimate>> = exec.map(rays, |r| estimate(r, opts));
    let first: Vec<AmplitudeEstimate> = first.into_iter().collect::<Result<_>>()?;
    let peak = first.iter().fold(0.0f64, |m, e| m.max(e.a_plus.norm()).max(e.a_minus.norm()));
    let o = ExtractOptions {
        abs_floor: opts.abs_floor.max(1e-2 * opts.drift_threshold * peak),
        ..*opts
    };
    rays.iter().map(|r| extract_a_pm(r, &o)).collect()
}

/// Assemble extracted estimates (rays at s ≥ 0 including s = 0) into
/// amplitude profiles on their ρ-grid.
pub fn amplitudes_from_estimates(est: &[AmplitudeEstimate]) -> Result<KleinGordonAmplitudes> {
    let rho: Vec<f64> = est.iter().map(|e| e.rho).collect();
    let plus = ComplexProfile::new(rho.clone(), est.iter().map(|e| e.a_plus).collect())?;
    let minus = ComplexProfile::new(rho, est.iter().map(|e| e.a_minus).collect())?;
    KleinGordonAmplitudes::new(plus, minus, 1.75, 1.0)
}

/// |q∞(a±) − q₀| / max(|q₀|, floor).
pub fn verify_charge_identity(a: &KleinGordonAmplitudes, q0: f64, floor: f64) -> Result<f64> {
    let qi = compute_qinfty(a)?;
    Ok((qi - q0).abs() / q0.abs().max(floor))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiationFit {
    pub q: f64,
    pub f0: f64,
    pub fr: f64,
    pub fl: f64,
    pub fl_error: f64,
    /// Fitted exponent of |rA_L − q₀| against r; None when the defect vanishes.
    pub decay: Option<LineFit>,
    pub r_range: (f64, f64),
}

const DEFECT_FLOOR: f64 = 1e-6;

fn extrapolate(r: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    let cols = |p: usize| -> Vec<Vec<f64>> { (0..p).map(|k| r.iter().map(|x| x.powi(-(k as i32))).collect()).collect() };
    let b2 = least_squares(&cols(2), y)?;
    let b3 = least_squares(&cols(3), y)?;
    let resid = r
        .iter()
        .zip(y)
        .map(|(x, v)| (v - b3[0] - b3[1] / x - b3[2] / (x * x)).powi(2))
        .sum::<f64>()
        / r.len() as f64;
    Ok((b3[0], (b3[0] - b2[0]).abs() + resid.sqrt()))
}

/// Limits F_μ(q) = lim r·A_μ by a fit in 1/r over the last three quarters
/// of the record, and the decay of |rA_L − q₀| over the last decade.
pub fn extract_radiation(rec: &RadiationRecord, q0: f64) -> Result<RadiationFit> {
    let n = rec.r.len();
    if n < 8 || rec.r[n - 1] < 10.0 * rec.r[0] {
        return Err(Error::Fit(format!("radiation record at q={} spans less than a decade in r", rec.q)));
    }
    let r_last = rec.r[n - 1];
    let start = rec.r.partition_point(|&x| x < 0.25 * r_last);
    let r = &rec.r[start..];
    let (f0, e0) = extrapolate(r, &rec.ra0[start..])?;
    let (fr, er) = extrapolate(r, &rec.rar[start..])?;
    let ral = rec.ra_l();
    let (fl, el) = extrapolate(r, &ral[start..])?;
    let dstart = rec.r.partition_point(|&x| x < 0.1 * r_last);
    let defect: Vec<f64> = ral[dstart..].iter().map(|v| (v - q0).abs()).collect();
    let scale = q0.abs().max(ral.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    // Characteristics outside the support of the current see a pure Coulomb
    // field; their defect sits at the roundoff floor and has no decay rate.
    let decay = if defect.iter().all(|d| *d <= DEFECT_FLOOR * scale.max(1e-300)) {
        None
    } else {
        let rr = &rec.r[dstart..];
        let quarters: Vec<f64> = (0..4)
            .map(|k| {
                let a = k * defect.len() / 4;
                let b = (k + 1) * defect.len() / 4;
                defect[a..b].iter().fold(0.0f64, |m, v| m.max(*v))
            })
            .collect();
        if quarters.windows(2).any(|w| w[1] > 1.05 * w[0]) {
            return Err(Error::Fit(format!(
                "non-monotone tail of |rA_L − q₀| at q={}: quarter maxima {:?}",
                rec.q, quarters
            )));
        }
        let keep: Vec<(f64, f64)> = rr.iter().zip(&defect).filter(|(_, d)| **d > 0.0).map(|(a, b)| (*a, *b)).collect();
        let (x, y): (Vec<f64>, Vec<f64>) = keep.into_iter().unzip();
        Some(fit_power_law(&x, &y)?)
    };
    Ok(RadiationFit {
        q: rec.q,
        f0,
        fr,
        fl,
        fl_error: el.max(e0 + er),
        decay,
        r_range: (rec.r[0], r_last),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteriorFit {
    pub rho: Vec<f64>,
    pub u0: Vec<f64>,
    pub ur: Vec<f64>,
    pub rms_residual: f64,
}

/// Fit τ·A_μ = U_μ + c/τ along each ray over [window_start·τ_max, τ_max].
pub fn fit_interior_u(rays: &[RayRecord], window_start: f64, threshold: f64) -> Result<InteriorFit> {
    let mut out = InteriorFit {
        rho: Vec::new(),
        u0: Vec::new(),
        ur: Vec::new(),
        rms_residual: 0.0,
    };
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for ray in rays {
        let n = ray.len();
        if n < 4 {
            return Err(Error::Fit(format!("ray s={} is too short for the U fit", ray.s)));
        }
        let start = ray.tau.partition_point(|&t| t < window_start * ray.tau[n - 1]);
        let tau = &ray.tau[start..];
        let cols = vec![vec![1.0; tau.len()], tau.iter().map(|t| 1.0 / t).collect()];
        let mut fit = |a: &[f64]| -> Result<f64> {
            let y: Vec<f64> = tau.iter().zip(&a[start..]).map(|(t, v)| t * v).collect();
            let b = least_squares(&cols, &y)?;
            let r = y.iter().zip(tau).map(|(v, t)| (v - b[0] - b[1] / t).powi(2)).sum::<f64>() / y.len() as f64;
            worst = worst.max(r.sqrt());
            scale = scale.max(b[0].abs());
            Ok(b[0])
        };
        let u0 = fit(&ray.a0)?;
        let ur = fit(&ray.ar)?;
        out.rho.push(ray.rho);
        out.u0.push(u0);
        out.ur.push(ur);
    }
    out.rms_residual = worst;
    if worst > threshold * scale.max(1e-300) && worst > 1e-300 {
        return Err(Error::Fit(format!("poor interior fit: rms residual {worst:e} against |U| ≤ {scale:e}")));
    }
    Ok(out)
}

/// Relative L² difference between the fitted U_μ and the elliptic profile
/// generated by the given amplitudes.
pub fn compare_interior(fit: &InteriorFit, a: &KleinGordonAmplitudes) -> Result<f64> {
    let src = SourceProfile::from_amplitudes(a)?;
    let prof = compute_u_elliptic(&src)?;
    let mut num = 0.0;
    let mut den = 0.0;
    for k in 0..fit.rho.len() {
        let e0 = prof.u(Component::Time, fit.rho[k]);
        let er = prof.u(Component::Radial, fit.rho[k]);
        num += (fit.u0[k] - e0).powi(2) + (fit.ur[k] - er).powi(2);
        den += e0 * e0 + er * er;
    }
    if den == 0.0 {
        return Ok(num.sqrt());
    }
    Ok((num / den).sqrt())
}
