//! Method-of-lines evolution of the reduced system in spherical symmetry.
//!
//! Unknowns are A₀ (ℓ = 0, even), A_r (ℓ = 1, odd: A_i = ω_i A_r) and the
//! complex scalar φ (ℓ = 0, even), each with its time derivative.  Every
//! field obeys ∂_t²u = △_ℓu − m²u + S with the radial operator
//! △_ℓ = ∂_r² + (2/r)∂_r − ℓ(ℓ+1)/r², where m = 1 for φ and m = 0 for A.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::Exec;

pub const A0: usize = 0;
pub const AR: usize = 1;
pub const PHI_RE: usize = 2;
pub const PHI_IM: usize = 3;
pub const NFIELDS: usize = 4;

const GHOSTS: usize = 3;

/// Parity under r → −r and angular mode of each field.
pub const PARITY: [f64; NFIELDS] = [1.0, -1.0, 1.0, 1.0];
pub const ELL: [u32; NFIELDS] = [0, 1, 0, 0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialGrid {
    pub dr: f64,
    pub n: usize,
}

impl RadialGrid {
    pub fn new(dr: f64, r_max: f64) -> Result<Self> {
        if !(dr > 0.0 && dr.is_finite()) || !(r_max > 8.0 * dr) {
            return Err(Error::InvalidInput(format!("grid needs dr > 0 and r_max > 8 dr (dr={dr}, r_max={r_max})")));
        }
        Ok(Self {
            dr,
            n: (r_max / dr).round() as usize + 1,
        })
    }

    pub fn r(&self, j: usize) -> f64 {
        j as f64 * self.dr
    }

    pub fn r_max(&self) -> f64 {
        self.r(self.n - 1)
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.r(j)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn of(dt: f64) -> Self {
        if dt < 0.0 {
            Direction::Backward
        } else {
            Direction::Forward
        }
    }

    fn sign(self) -> f64 {
        match self {
            Direction::Forward => 1.0,
            Direction::Backward => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scheme {
    pub cfl: f64,
    pub ko_sigma: f64,
    /// Klein–Gordon mass; 0 turns φ into a pair of free waves (test mode).
    pub mass: f64,
}

impl Default for Scheme {
    fn default() -> Self {
        Self {
            cfl: 0.4,
            ko_sigma: 0.01,
            mass: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionState {
    pub t: f64,
    pub grid: RadialGrid,
    pub u: [Vec<f64>; NFIELDS],
    pub p: [Vec<f64>; NFIELDS],
}

impl EvolutionState {
    pub fn zeros(grid: RadialGrid, t: f64) -> Self {
        let z = vec![0.0; grid.n];
        Self {
            t,
            grid,
            u: [z.clone(), z.clone(), z.clone(), z.clone()],
            p: [z.clone(), z.clone(), z.clone(), z],
        }
    }

    pub fn phi(&self, j: usize) -> Complex64 {
        Complex64::new(self.u[PHI_RE][j], self.u[PHI_IM][j])
    }

    pub fn phi_t(&self, j: usize) -> Complex64 {
        Complex64::new(self.p[PHI_RE][j], self.p[PHI_IM][j])
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(&self.p).all(|a| a.iter().all(|v| v.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.u
            .iter()
            .chain(&self.p)
            .flat_map(|a| a.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// |u(0)| for the odd fields; exactly zero for states produced here.
    pub fn parity_defect(&self) -> f64 {
        (0..NFIELDS)
            .filter(|&f| PARITY[f] < 0.0)
            .map(|f| self.u[f][0].abs().max(self.p[f][0].abs()))
            .fold(0.0, f64::max)
    }

    fn axpy(&self, a: f64, k: &Rates) -> Self {
        let mut out = self.clone();
        for f in 0..NFIELDS {
            for j in 0..self.grid.n {
                out.u[f][j] += a * k.du[f][j];
                out.p[f][j] += a * k.dp[f][j];
            }
        }
        out.t += a;
        out
    }
}

/// Field values and first derivatives at one node, handed to source terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Local {
    pub j: usize,
    pub t: f64,
    pub r: f64,
    pub a0: f64,
    pub ar: f64,
    pub phi: Complex64,
    pub a0_t: f64,
    pub ar_t: f64,
    pub phi_t: Complex64,
    pub a0_r: f64,
    pub ar_r: f64,
    pub phi_r: Complex64,
}

/// Source terms S for (A₀, A_r, Re φ, Im φ).
pub trait Sources: Sync {
    /// Called once per right-hand-side evaluation before any `eval` at time t.
    fn prepare(&self, _t: f64, _grid: &RadialGrid, _exec: Exec) {}
    fn eval(&self, l: &Local) -> [f64; NFIELDS];
}

pub struct NoSources;

impl Sources for NoSources {
    fn eval(&self, _: &Local) -> [f64; NFIELDS] {
        [0.0; NFIELDS]
    }
}

/// Current J_μ = Im(φ·conj(D_μφ)) = Im(φ·conj(∂_μφ)) − A_μ|φ|².
pub fn current(a: f64, phi: Complex64, dphi: Complex64) -> f64 {
    (phi * dphi.conj()).im - a * phi.norm_sqr()
}

/// 2iA^μ∂_μφ − A^μA_μφ with A^μ∂_μ = −A₀∂_t + A_r∂_r, A^μA_μ = −A₀² + A_r².
pub fn kg_nonlinearity(a0: f64, ar: f64, phi: Complex64, phi_t: Complex64, phi_r: Complex64) -> Complex64 {
    let i = Complex64::new(0.0, 1.0);
    2.0 * i * (-a0 * phi_t + ar * phi_r) - (-a0 * a0 + ar * ar) * phi
}

/// The reduced Maxwell–Klein–Gordon system in Lorenz gauge.
pub struct ReducedMkg;

impl Sources for ReducedMkg {
    fn eval(&self, l: &Local) -> [f64; NFIELDS] {
        let n = kg_nonlinearity(l.a0, l.ar, l.phi, l.phi_t, l.phi_r);
        [current(l.a0, l.phi, l.phi_t), current(l.ar, l.phi, l.phi_r), n.re, n.im]
    }
}

/// Time derivatives of (u, p).
#[derive(Debug, Clone)]
pub struct Rates {
    pub du: [Vec<f64>; NFIELDS],
    pub dp: [Vec<f64>; NFIELDS],
}

fn extend(u: &[f64], parity: f64) -> Vec<f64> {
    let mut e = Vec::with_capacity(u.len() + GHOSTS);
    for m in (1..=GHOSTS).rev() {
        e.push(parity * u[m]);
    }
    e.extend_from_slice(u);
    e
}

/// Fourth-order first derivative; one-sided at the outer end.
fn d1(e: &[f64], j: usize, n: usize, dr: f64) -> f64 {
    let k = j + GHOSTS;
    if j + 2 < n {
        (e[k - 2] - 8.0 * e[k - 1] + 8.0 * e[k + 1] - e[k + 2]) / (12.0 * dr)
    } else if j + 1 < n {
        (3.0 * e[k + 1] + 10.0 * e[k] - 18.0 * e[k - 1] + 6.0 * e[k - 2] - e[k - 3]) / (12.0 * dr)
    } else {
        (25.0 * e[k] - 48.0 * e[k - 1] + 36.0 * e[k - 2] - 16.0 * e[k - 3] + 3.0 * e[k - 4]) / (12.0 * dr)
    }
}

fn d2(e: &[f64], j: usize, dr: f64) -> f64 {
    let k = j + GHOSTS;
    (-e[k - 2] + 16.0 * e[k - 1] - 30.0 * e[k] + 16.0 * e[k + 1] - e[k + 2]) / (12.0 * dr * dr)
}

fn ko(e: &[f64], j: usize, dr: f64) -> f64 {
    let k = j + GHOSTS;
    (e[k - 3] - 6.0 * e[k - 2] + 15.0 * e[k - 1] - 20.0 * e[k] + 15.0 * e[k + 1] - 6.0 * e[k + 2] + e[k + 3]) / (64.0 * dr)
}

/// △_ℓ at interior node j (needs j + 2 < n), with the regular origin limits
/// 3u''(0) for ℓ = 0 and 0 for ℓ = 1.
fn lap(e: &[f64], j: usize, n: usize, dr: f64, ell: u32) -> f64 {
    if j == 0 {
        return if ell == 0 { 3.0 * d2(e, 0, dr) } else { 0.0 };
    }
    let r = j as f64 * dr;
    let l = ell as f64;
    d2(e, j, dr) + 2.0 * d1(e, j, n, dr) / r - l * (l + 1.0) * e[j + GHOSTS] / (r * r)
}

/// Radial derivative of a field with the given parity, fourth order.
pub fn radial_derivative(u: &[f64], parity: f64, dr: f64) -> Vec<f64> {
    let e = extend(u, parity);
    (0..u.len()).map(|j| d1(&e, j, u.len(), dr)).collect()
}

/// △_ℓu at every node except the last two (left at zero).
pub fn radial_laplacian(u: &[f64], ell: u32, dr: f64) -> Vec<f64> {
    let parity = if ell.is_multiple_of(2) { 1.0 } else { -1.0 };
    let e = extend(u, parity);
    let n = u.len();
    (0..n).map(|j| if j + 2 < n { lap(&e, j, n, dr, ell) } else { 0.0 }).collect()
}

pub fn rates(state: &EvolutionState, sources: &dyn Sources, scheme: &Scheme, dir: Direction, exec: Exec) -> Rates {
    let n = state.grid.n;
    let dr = state.grid.dr;
    let eu: Vec<Vec<f64>> = (0..NFIELDS).map(|f| extend(&state.u[f], PARITY[f])).collect();
    let ep: Vec<Vec<f64>> = (0..NFIELDS).map(|f| extend(&state.p[f], PARITY[f])).collect();
    let sigma = dir.sign() * scheme.ko_sigma;
    let m2 = scheme.mass * scheme.mass;
    let t = state.t;
    sources.prepare(t, &state.grid, exec);
    let node = |j: usize| -> [f64; 2 * NFIELDS] {
        let mut out = [0.0; 2 * NFIELDS];
        let r = j as f64 * dr;
        if j + 2 >= n {
            // Sommerfeld: (∂_t ± ∂_r)(r·u) = 0, outgoing in the direction of integration.
            for f in 0..NFIELDS {
                let pf = ep[f][j + GHOSTS];
                out[f] = pf;
                out[NFIELDS + f] = -dir.sign() * (d1(&ep[f], j, n, dr) + pf / r);
            }
            return out;
        }
        let ur: [f64; NFIELDS] = std::array::from_fn(|f| if j == 0 && PARITY[f] > 0.0 { 0.0 } else { d1(&eu[f], j, n, dr) });
        let l = Local {
            j,
            t,
            r,
            a0: state.u[A0][j],
            ar: state.u[AR][j],
            phi: state.phi(j),
            a0_t: state.p[A0][j],
            ar_t: state.p[AR][j],
            phi_t: state.phi_t(j),
            a0_r: ur[A0],
            ar_r: ur[AR],
            phi_r: Complex64::new(ur[PHI_RE], ur[PHI_IM]),
        };
        let s = sources.eval(&l);
        for f in 0..NFIELDS {
            if j == 0 && PARITY[f] < 0.0 {
                continue;
            }
            let mass = if f >= PHI_RE { m2 } else { 0.0 };
            out[f] = state.p[f][j];
            out[NFIELDS + f] = lap(&eu[f], j, n, dr, ELL[f]) - mass * state.u[f][j] + s[f];
            if j + GHOSTS < n && sigma != 0.0 {
                out[f] += sigma * ko(&eu[f], j, dr);
                out[NFIELDS + f] += sigma * ko(&ep[f], j, dr);
            }
        }
        out
    };
    let rows = exec.map_range(n, node);
    let mut du: [Vec<f64>; NFIELDS] = std::array::from_fn(|_| vec![0.0; n]);
    let mut dp: [Vec<f64>; NFIELDS] = std::array::from_fn(|_| vec![0.0; n]);
    for (j, row) in rows.iter().enumerate() {
        for f in 0..NFIELDS {
            du[f][j] = row[f];
            dp[f][j] = row[NFIELDS + f];
        }
    }
    Rates { du, dp }
}

const BLOWUP: f64 = 1e8;

/// One classical RK4 step; negative dt integrates backward in time.
pub fn step(state: &EvolutionState, dt: f64, sources: &dyn Sources, scheme: &Scheme, exec: Exec) -> Result<EvolutionState> {
    let limit = scheme.cfl * state.grid.dr;
    if !(dt.abs() <= limit * (1.0 + 1e-12)) || dt == 0.0 {
        return Err(Error::Cfl { dt: dt.abs(), limit });
    }
    let dir = Direction::of(dt);
    let k1 = rates(state, sources, scheme, dir, exec);
    let s2 = state.axpy(0.5 * dt, &k1);
    let k2 = rates(&s2, sources, scheme, dir, exec);
    let s3 = state.axpy(0.5 * dt, &k2);
    let k3 = rates(&s3, sources, scheme, dir, exec);
    let s4 = state.axpy(dt, &k3);
    let k4 = rates(&s4, sources, scheme, dir, exec);
    let mut out = state.clone();
    let w = dt / 6.0;
    for f in 0..NFIELDS {
        for j in 0..state.grid.n {
            out.u[f][j] += w * (k1.du[f][j] + 2.0 * k2.du[f][j] + 2.0 * k3.du[f][j] + k4.du[f][j]);
            out.p[f][j] += w * (k1.dp[f][j] + 2.0 * k2.dp[f][j] + 2.0 * k3.dp[f][j] + k4.dp[f][j]);
        }
    }
    out.t = state.t + dt;
    if !out.is_finite() || out.max_abs() > BLOWUP {
        return Err(Error::Unstable {
            t: out.t,
            detail: format!("field norm {:e} after step from t={}", out.max_abs(), state.t),
        });
    }
    Ok(out)
}

/// Number of equal steps of size ≤ cfl·dr needed to cover |t_end − t|.
pub fn step_count(t: f64, t_end: f64, scheme: &Scheme, grid: &RadialGrid) -> usize {
    ((t_end - t).abs() / (scheme.cfl * grid.dr) - 1e-9).ceil().max(1.0) as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualMonitor {
    pub t: f64,
    pub lambda: Vec<f64>,
    pub lambda_l2: f64,
    pub lambda_max: f64,
    pub charge: f64,
    pub energy: [f64; 3],
}

/// λ = −∂_tA₀ + ∂_rA_r + 2A_r/r (3∂_rA_r at the origin).
pub fn gauge_residual(state: &EvolutionState) -> ResidualMonitor {
    let dr = state.grid.dr;
    let n = state.grid.n;
    let dar = radial_derivative(&state.u[AR], -1.0, dr);
    let lambda: Vec<f64> = (0..n)
        .map(|j| {
            let div = if j == 0 { 3.0 * dar[0] } else { dar[j] + 2.0 * state.u[AR][j] / state.grid.r(j) };
            -state.p[A0][j] + div
        })
        .collect();
    let lambda_l2 = weighted_l2(&lambda, dr);
    let lambda_max = lambda.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    ResidualMonitor {
        t: state.t,
        lambda_l2,
        lambda_max,
        charge: slice_charge(state).q,
        energy: field_energies(state),
        lambda,
    }
}

/// (∫ f² r² dr)^{1/2} by the trapezoid rule.
pub fn weighted_l2(f: &[f64], dr: f64) -> f64 {
    let n = f.len();
    let mut acc = 0.0;
    for (j, v) in f.iter().enumerate() {
        let r = j as f64 * dr;
        let w = if j + 1 == n { 0.5 } else { 1.0 };
        acc += w * v * v * r * r;
    }
    (acc * dr).sqrt()
}

/// ½∫(|∂_tu|² + |∂_ru|² + m²|u|²) r² dr for A₀, A_r and φ.
pub fn field_energies(state: &EvolutionState) -> [f64; 3] {
    let dr = state.grid.dr;
    let n = state.grid.n;
    let mut e = [0.0; 3];
    let groups: [(&[usize], usize, f64); 3] = [(&[A0], 0, 0.0), (&[AR], 1, 0.0), (&[PHI_RE, PHI_IM], 2, 1.0)];
    for (fields, slot, m2) in groups {
        for &f in fields {
            let d = radial_derivative(&state.u[f], PARITY[f], dr);
            for j in 0..n {
                let r = state.grid.r(j);
                let w = if j + 1 == n { 0.5 } else { 1.0 };
                e[slot] += 0.5 * w * (state.p[f][j].powi(2) + d[j].powi(2) + m2 * state.u[f][j].powi(2)) * r * r * dr;
            }
        }
    }
    e
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceCharge {
    pub q: f64,
    /// Contribution of the outermost 5% of the grid, a bound on truncation.
    pub tail: f64,
}

/// q = ∫₀^{r_max} Im(φ·conj(D₀φ)) r² dr, trapezoid rule (exact for the even
/// extension up to the boundary tail).
pub fn slice_charge(state: &EvolutionState) -> SliceCharge {
    let n = state.grid.n;
    let dr = state.grid.dr;
    let cut = n - (n / 20).max(1);
    let mut q = 0.0;
    let mut tail = 0.0;
    for j in 0..n {
        let r = state.grid.r(j);
        let w = if j + 1 == n { 0.5 } else { 1.0 };
        let v = w * current(state.u[A0][j], state.phi(j), state.phi_t(j)) * r * r * dr;
        q += v;
        if j >= cut {
            tail += v.abs();
        }
    }
    SliceCharge { q, tail }
}

/// Evolve with equal steps until t_end, calling `observe` after every step.
pub fn evolve_to(
    mut state: EvolutionState,
    t_end: f64,
    sources: &dyn Sources,
    scheme: &Scheme,
    exec: Exec,
    mut observe: impl FnMut(&EvolutionState) -> Result<()>,
) -> Result<EvolutionState> {
    let steps = step_count(state.t, t_end, scheme, &state.grid);
    let dt = (t_end - state.t) / steps as f64;
    let t0 = state.t;
    for k in 1..=steps {
        let mut next = step(&state, dt, sources, scheme, exec)?;
        next.t = t0 + dt * k as f64;
        state = next;
        observe(&state)?;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn zero_state_stays_zero() {
        let g = RadialGrid::new(0.2, 20.0).unwrap();
        let s = EvolutionState::zeros(g, 2.0);
        let next = step(&s, 0.08, &ReducedMkg, &Scheme::default(), Exec::Sequential).unwrap();
        assert_eq!(next.max_abs(), 0.0);
    }

    #[test]
    fn source_examples() {
        let base = Local {
            j: 5,
            t: 2.0,
            r: 1.0,
            a0: 0.0,
            ar: 0.0,
            phi: Complex64::new(0.0, 0.0),
            a0_t: 0.0,
            ar_t: 0.0,
            phi_t: Complex64::new(0.0, 0.0),
            a0_r: 0.0,
            ar_r: 0.0,
            phi_r: Complex64::new(0.0, 0.0),
        };
        assert_eq!(ReducedMkg.eval(&base), [0.0; 4]);
        let g = (-1.0f64).exp();
        let real = Local {
            phi: Complex64::new(g, 0.0),
            phi_r: Complex64::new(-2.0 * g, 0.0),
            ..base
        };
        let s = ReducedMkg.eval(&real);
        assert_eq!((s[0], s[1]), (0.0, 0.0));
        let rot = Local {
            phi: Complex64::new(g, 0.0),
            phi_t: Complex64::new(0.0, g),
            ..base
        };
        assert!((ReducedMkg.eval(&rot)[0] + g * g).abs() < 1e-15);
    }

    #[test]
    fn cfl_violation_is_rejected() {
        let g = RadialGrid::new(0.2, 20.0).unwrap();
        let s = EvolutionState::zeros(g, 2.0);
        assert!(matches!(step(&s, 0.1, &NoSources, &Scheme::default(), Exec::Sequential), Err(Error::Cfl { .. })));
    }

    #[test]
    fn massless_pulse_moves_at_unit_speed() {
        let g = RadialGrid::new(0.05, 60.0).unwrap();
        let mut s = EvolutionState::zeros(g, 0.0);
        // Outgoing spherical wave r·u = f(r − t) with f a Gaussian centred at 15.
        for j in 1..g.n {
            let r = g.r(j);
            let f = (-(r - 15.0f64).powi(2)).exp();
            s.u[PHI_RE][j] = f / r;
            s.p[PHI_RE][j] = 2.0 * (r - 15.0) * f / r;
        }
        let scheme = Scheme { mass: 0.0, ..Scheme::default() };
        let out = evolve_to(s, 10.0, &NoSources, &scheme, Exec::Sequential, |_| Ok(())).unwrap();
        let (jmax, _) = (1..g.n)
            .map(|j| (j, g.r(j) * out.u[PHI_RE][j]))
            .fold((0, f64::MIN), |a, b| if b.1 > a.1 { b } else { a });
        assert!((g.r(jmax) - 25.0).abs() <= g.dr);
        let r = 25.0;
        let j = (r / g.dr).round() as usize;
        assert!((r * out.u[PHI_RE][j] - 1.0).abs() < 1e-4, "{}", r * out.u[PHI_RE][j]);
    }

    #[test]
    fn forward_then_backward_returns() {
        let g = RadialGrid::new(0.2, 30.0).unwrap();
        let mut s = EvolutionState::zeros(g, 2.0);
        for j in 0..g.n {
            let r = g.r(j);
            let e = 0.5 * (-r * r).exp();
            s.u[PHI_RE][j] = e;
            s.p[PHI_IM][j] = -e;
            s.u[AR][j] = 0.1 * r * (-r * r).exp();
        }
        let scheme = Scheme { ko_sigma: 0.0, ..Scheme::default() };
        let dt = 0.04;
        let f = step(&s, dt, &ReducedMkg, &scheme, Exec::Sequential).unwrap();
        let b = step(&f, -dt, &ReducedMkg, &scheme, Exec::Sequential).unwrap();
        let err = (0..NFIELDS)
            .flat_map(|k| (0..g.n).map(move |j| (k, j)))
            .map(|(k, j)| (b.u[k][j] - s.u[k][j]).abs().max((b.p[k][j] - s.p[k][j]).abs()))
            .fold(0.0, f64::max);
        assert!(err < 1e-6, "{err}");
        assert_eq!(b.parity_defect(), 0.0);
    }

    #[test]
    fn gauge_residual_examples() {
        let g = RadialGrid::new(0.1, 20.0).unwrap();
        let mut s = EvolutionState::zeros(g, 2.0);
        assert_eq!(gauge_residual(&s).lambda_max, 0.0);
        for j in 0..g.n {
            s.u[A0][j] = 0.7;
            s.p[A0][j] = 0.3;
        }
        let m = gauge_residual(&s);
        assert!(m.lambda.iter().all(|l| (l + 0.3).abs() < 1e-14));
    }

    #[test]
    fn gaussian_charge() {
        let g = RadialGrid::new(0.05, 12.0).unwrap();
        let mut s = EvolutionState::zeros(g, 2.0);
        assert_eq!(slice_charge(&s).q, 0.0);
        for j in 0..g.n {
            let r = g.r(j);
            let e = (-r * r).exp();
            s.u[PHI_RE][j] = e;
            s.p[PHI_IM][j] = -e;
        }
        let q = slice_charge(&s).q;
        assert!((q - (2.0 * PI).sqrt() / 16.0).abs() < 1e-12, "{q}");
    }

    #[test]
    fn executors_agree_bitwise() {
        let g = RadialGrid::new(0.2, 30.0).unwrap();
        let mut s = EvolutionState::zeros(g, 2.0);
        for j in 0..g.n {
            let r = g.r(j);
            s.u[PHI_RE][j] = 0.5 * (-r * r).exp();
            s.p[PHI_IM][j] = -0.5 * (-r * r).exp();
        }
        let a = step(&s, 0.08, &ReducedMkg, &Scheme::default(), Exec::Sequential).unwrap();
        let b = step(&s, 0.08, &ReducedMkg, &Scheme::default(), Exec::Parallel).unwrap();
        assert_eq!(a, b);
    }
}
