use std::collections::HashSet;
use std::f64::consts::PI;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::artifacts::{write_run, RunArtifacts, RunManifest, Table, ARTIFACT_VERSION};
use super::{Bound, DataConfig, ExperimentKind, RunConfig, Verdict};
use crate::backward::{
    assemble_approximate, backward_scattering_data, cauchy_limit, gauge_decay, lambda_t_slope, remainder_decay,
    roundtrip_check, total_state, ansatz_residual, ApproxOptions, ApproximateSolution, BackwardSolution, RoundTrip,
};
use crate::error::{Error, Result};
use crate::evolve::{EvolutionState, RadialGrid, ReducedMkg, A0, AR, PHI_IM, PHI_RE};
use crate::fit::{fit_power_law, observed_order, richardson_halving};
use crate::forward::{
    amplitudes_from_estimates, build_initial_data, compare_interior, extract_all, extract_radiation, fit_interior_u,
    run_forward, verify_charge_identity, AmplitudeEstimate, ExtractOptions, ForwardPlan, InitialDataSet, RayRecord,
    Trajectory,
};
use crate::interior_profile::{
    check_jacobian_lemma, compute_am, compute_u_elliptic, radiation_limit_fm, AmTable, AmTableSpec, SourceProfile,
    DEFAULT_R_LADDER,
};
use crate::par::Exec;
use crate::scattering_data::{
    compute_qinfty, default_rho_grid, gamma_regime, Component, KleinGordonAmplitudes, QProfile,
};

#[derive(Debug, Clone, Default)]
pub struct RunOutcome {
    pub verdicts: Vec<Verdict>,
    pub artifacts: RunArtifacts,
    pub notes: Vec<String>,
}

struct Ctx {
    scale: f64,
    exec: Exec,
    out: RunOutcome,
}

impl Ctx {
    fn check(&mut self, name: &str, bound: Bound, measured: f64, target: f64, tol: f64, detail: String) {
        let v = Verdict::new(name, bound, measured, target, tol, self.scale).with_detail(detail);
        self.out.verdicts.push(v);
    }

    fn flag(&mut self, name: &str, pass: bool, measured: f64, detail: String) {
        self.out.verdicts.push(Verdict::flag(name, pass, measured).with_detail(detail));
    }

    fn table(&mut self, name: &str, t: Table) {
        self.out.artifacts.tables.push((name.to_string(), t));
    }
}

/// Values below this are treated as identically zero when fitting decay
/// exponents.
const ZERO_FLOOR: f64 = 1e-300;

fn amplitudes(d: &DataConfig) -> Result<KleinGordonAmplitudes> {
    KleinGordonAmplitudes::from_families(&d.a_plus, &d.a_minus, d.alpha, d.amplitude, default_rho_grid())
}

/// Some(slope) of a power-law fit, None when the data vanish identically;
/// a failed fit on nonzero data gives NaN so the verdict fails.
fn decay_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if y.iter().all(|v| v.abs() <= ZERO_FLOOR) {
        return None;
    }
    Some(fit_power_law(x, y).map(|f| f.slope).unwrap_or(f64::NAN))
}

fn slope_check(ctx: &mut Ctx, name: &str, slope: Option<f64>, bound: Bound, target: f64, tol: f64, detail: String) {
    match slope {
        Some(s) => ctx.check(name, bound, s, target, tol, detail),
        None => ctx.flag(name, true, 0.0, format!("identically zero; {detail}")),
    }
}

pub fn run_experiment(cfg: &RunConfig, exec: Exec) -> Result<RunOutcome> {
    cfg.validate()?;
    let mut ctx = Ctx {
        scale: cfg.tolerances.scale,
        exec,
        out: RunOutcome::default(),
    };
    match cfg.experiment {
        ExperimentKind::JacobianCheck => jacobian(cfg, &mut ctx)?,
        ExperimentKind::RadiationLimit => radiation_limit(cfg, &mut ctx)?,
        ExperimentKind::HuygensCheck => huygens(cfg, &mut ctx)?,
        ExperimentKind::ChargeCheck => charge(cfg, &mut ctx)?,
        ExperimentKind::Forward => forward(cfg, &mut ctx)?,
        ExperimentKind::Backward => backward(cfg, &mut ctx)?,
        ExperimentKind::Sweep => sweep(cfg, &mut ctx)?,
    }
    let mut seen = HashSet::new();
    for v in &ctx.out.verdicts {
        if !seen.insert(v.name.clone()) {
            return Err(Error::InvalidInput(format!("check {} reported twice", v.name)));
        }
    }
    Ok(ctx.out)
}

/// Validate, run and write the run directory; nothing is written when the
/// configuration is rejected or the experiment fails.
pub fn execute(cfg: &RunConfig, dir: &Path, exec: Exec) -> Result<RunManifest> {
    cfg.validate()?;
    let start = Instant::now();
    let outcome = run_experiment(cfg, exec)?;
    let manifest = RunManifest {
        artifact_version: ARTIFACT_VERSION.to_string(),
        experiment: cfg.experiment.name().to_string(),
        config_hash: cfg.hash(),
        config: cfg.clone(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        notes: outcome.notes,
        verdicts: outcome.verdicts,
        files: Vec::new(),
    };
    write_run(dir, &outcome.artifacts, &manifest)
}

fn jacobian(cfg: &RunConfig, ctx: &mut Ctx) -> Result<()> {
    let tol = cfg.quadrature.tol;
    let exact = 4.0 * PI / 3.0;
    let unit = check_jacobian_lemma(10.0, 3.0, &|_| 1.0, tol)?;
    let d = (unit.lhs - exact).abs().max((unit.rhs - exact).abs()) / exact;
    ctx.check(
        "jacobian_unit_density",
        Bound::Upper,
        d,
        0.0,
        1e-6,
        format!("lhs {:.15e}, rhs {:.15e}, 4π/3 = {exact:.15e}", unit.lhs, unit.rhs),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let samples: Vec<[f64; 5]> = (0..cfg.quadrature.jacobian_samples)
        .map(|_| {
            let t = rng.gen_range(5.0..50.0);
            let r = rng.gen_range(0.0..0.9) * t;
            [t, r, rng.gen_range(0.0..1.0), rng.gen_range(0.5..2.0), rng.gen_range(0.5..3.0)]
        })
        .collect();
    let results = ctx.exec.map(&samples, |s| {
        let p = |rho: f64| s[2] + s[3] * ((1.0 - rho) * (1.0 + rho)).max(0.0).powf(s[4]);
        check_jacobian_lemma(s[0], s[1], &p, tol)
    });
    let mut table = Table::new(&["t", "r", "c0", "c1", "k", "lhs", "rhs", "relative_defect"]);
    let mut worst: f64 = 0.0;
    for (s, r) in samples.iter().zip(results) {
        let r = r?;
        worst = worst.max(r.relative_defect());
        table.push(vec![s[0], s[1], s[2], s[3], s[4], r.lhs, r.rhs, r.relative_defect()]);
    }
    ctx.check(
        "jacobian_random_samples",
        Bound::Upper,
        worst,
        0.0,
        1e-6,
        format!("{} samples of P = c0 + c1(1−ρ²)^k, seed {}", samples.len(), cfg.seed),
    );
    ctx.table("jacobian", table);
    Ok(())
}

fn radiation_limit(cfg: &RunConfig, ctx: &mut Ctx) -> Result<()> {
    let q = &cfg.quadrature;
    let q_tol = q.tol;
    let amps = amplitudes(&cfg.data)?;
    let src = SourceProfile::from_amplitudes(&amps)?;
    let q_inf = compute_qinfty(&amps)?;
    let values = ctx.exec.map(&q.null_limit_times, |&t| -> Result<f64> {
        let v = compute_am(t, t + q.null_limit_q, &src, q.tol)?;
        Ok(t * v.a_l())
    });
    let values: Vec<f64> = values.into_iter().collect::<Result<_>>()?;
    let defects: Vec<f64> = values.iter().map(|v| (v - q_inf).abs() / q_inf.abs().max(ZERO_FLOOR)).collect();
    let mut table = Table::new(&["t", "r", "t_times_am_l", "relative_defect"]);
    for ((t, v), d) in q.null_limit_times.iter().zip(&values).zip(&defects) {
        table.push(vec![*t, t + q.null_limit_q, *v, *d]);
    }
    let doubling = q.null_limit_times.windows(2).all(|w| (w[1] - 2.0 * w[0]).abs() <= 1e-12 * w[1]);
    let extrapolated = if doubling && values.len() >= 3 {
        richardson_halving(&values, 2).map(|r| format!(", Richardson limit {:.10e}", r.value)).unwrap_or_default()
    } else {
        String::new()
    };
    let last = *defects.last().unwrap_or(&f64::NAN);
    ctx.check(
        "null_limit_defect_at_latest_time",
        Bound::Upper,
        last,
        0.0,
        0.01,
        format!("t·A^M_L at q = {} against q∞ = {q_inf:.12e}{extrapolated}", q.null_limit_q),
    );
    let monotone = defects.windows(2).all(|w| w[1] <= w[0]);
    let worst_ratio = defects
        .windows(2)
        .map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 0.0 })
        .fold(0.0, f64::max);
    ctx.flag(
        "null_limit_monotone_decrease",
        monotone,
        worst_ratio,
        "largest ratio of consecutive defects".into(),
    );
    let profile = compute_u_elliptic(&src)?;
    let boundary = profile.boundary_limit_l();
    ctx.check(
        "qinfty_profile_boundary_limit",
        Bound::Upper,
        (boundary - q_inf).abs() / q_inf.abs().max(ZERO_FLOOR),
        0.0,
        1e-6,
        format!("elliptic profile boundary value {boundary:.12e}"),
    );
    ctx.table("null_limit", table);
    let qs = [-8.0, -6.0, -5.0, -4.0, -3.0, -2.0, -1.0, -0.5];
    let fm = ctx.exec.map(&qs, |&q| radiation_limit_fm(q, &src, &DEFAULT_R_LADDER, 2, q_tol));
    let mut t = Table::new(&["q", "fm_0", "fm_r", "fm_l", "error_estimate"]);
    for (q, s) in qs.iter().zip(fm) {
        match s {
            Ok(s) => t.push(vec![s.q, s.f0, s.fr, s.fl(), s.error_estimate]),
            Err(e) => ctx.out.notes.push(format!("F^M at q = {q} not tabulated: {e}")),
        }
    }
    ctx.table("fm_limit", t);
    Ok(())
}

fn fd4(f: impl Fn(f64) -> Result<f64>, x: f64, h: f64) -> Result<f64> {
    Ok((-f(x + 2.0 * h)? + 8.0 * f(x + h)? - 8.0 * f(x - h)? + f(x - 2.0 * h)?) / (12.0 * h))
}

fn huygens(cfg: &RunConfig, ctx: &mut Ctx) -> Result<()> {
    let q = &cfg.quadrature;
    let amps = amplitudes(&cfg.data)?;
    let src = SourceProfile::from_amplitudes(&amps)?;
    let profile = compute_u_elliptic(&src)?;
    let points: Vec<(f64, f64)> = q
        .huygens_times
        .iter()
        .flat_map(|&t| q.huygens_rho.iter().map(move |&rho| (t, rho * t)))
        .filter(|(t, r)| t - r > 4.0)
        .collect();
    let rows = ctx.exec.map(&points, |&(t, r)| -> Result<[f64; 6]> {
        let v = compute_am(t, r, &src, q.tol)?;
        let tau = (t * t - r * r).sqrt();
        let rho = r / t;
        Ok([t, r, tau * v.a0, tau * v.ar, profile.u(Component::Time, rho), profile.u(Component::Radial, rho)])
    });
    let rows: Vec<[f64; 6]> = rows.into_iter().collect::<Result<_>>()?;
    let scale = rows.iter().fold(0.0f64, |m, w| m.max(w[4].abs()).max(w[5].abs())).max(ZERO_FLOOR);
    let mut table = Table::new(&["t", "r", "tau_a0", "tau_ar", "u0", "ur"]);
    let mut worst: f64 = 0.0;
    for w in &rows {
        worst = worst.max((w[2] - w[4]).abs().max((w[3] - w[5]).abs()) / scale);
        table.push(w.to_vec());
    }
    ctx.check(
        "huygens_interior_profile",
        Bound::Upper,
        worst,
        0.0,
        1e-4,
        format!("{} samples with t − r > 4, relative to max|U| = {scale:.6e}", rows.len()),
    );
    ctx.table("huygens", table);

    let h = q.gauge_step;
    let gauge = ctx.exec.map(&q.gauge_points, |&[t, r]| -> Result<[f64; 5]> {
        let am = |t: f64, r: f64| compute_am(t, r, &src, q.tol).map(|v| (v.a0, v.ar));
        let lambda = |h: f64| -> Result<f64> {
            let dt = fd4(|tt| am(tt, r).map(|v| v.0), t, h)?;
            let dr = fd4(|rr| am(t, rr).map(|v| v.1), r, h)?;
            let (_, ar) = am(t, r)?;
            Ok(-dt + dr + 2.0 * ar / r)
        };
        let l1 = lambda(h)?;
        let l2 = lambda(2.0 * h)?;
        let (a0, ar) = am(t, r)?;
        let noise = q.tol * (a0.abs() + ar.abs()) * 3.0 / h + 2.0 * q.tol * ar.abs() / r;
        let floor = noise + (l2 - l1).abs() / 15.0;
        Ok([t, r, l1, floor, l1.abs() / floor.max(ZERO_FLOOR)])
    });
    let gauge: Vec<[f64; 5]> = gauge.into_iter().collect::<Result<_>>()?;
    let mut table = Table::new(&["t", "r", "lorenz_residual", "floor", "ratio"]);
    let mut worst: f64 = 0.0;
    for g in &gauge {
        worst = worst.max(g[4]);
        table.push(g.to_vec());
    }
    ctx.check(
        "huygens_lorenz_gauge",
        Bound::Upper,
        worst,
        0.0,
        10.0,
        format!("largest |∂^μA^M_μ| / floor over {} points, h = {h}", gauge.len()),
    );
    ctx.table("huygens_gauge", table);
    Ok(())
}

fn charge(cfg: &RunConfig, ctx: &mut Ctx) -> Result<()> {
    let oracle = amplitudes(&DataConfig::charge_oracle())?;
    let d = verify_charge_identity(&oracle, PI / 32.0, 1e-12)?;
    ctx.check(
        "charge_identity_oracle",
        Bound::Upper,
        d,
        0.0,
        1e-6,
        "a₋ = (1−ρ²)^{7/4}, a₊ = 0 against π/32".into(),
    );
    let amps = amplitudes(&cfg.data)?;
    let q_inf = compute_qinfty(&amps)?;
    let boundary = compute_u_elliptic(&SourceProfile::from_amplitudes(&amps)?)?.boundary_limit_l();
    ctx.check(
        "qinfty_profile_boundary_limit",
        Bound::Upper,
        (boundary - q_inf).abs() / q_inf.abs().max(ZERO_FLOOR),
        0.0,
        1e-6,
        format!("q∞ {q_inf:.12e}, boundary value {boundary:.12e}"),
    );
    let data = initial_data(cfg, cfg.grid.dr)?;
    ctx.check(
        "slice_charge_vs_coulomb_tail",
        Bound::Upper,
        (data.q0 - data.q0_tail).abs() / data.q0.abs().max(ZERO_FLOOR),
        0.0,
        1e-3,
        format!("slice {:.12e}, tail {:.12e}", data.q0, data.q0_tail),
    );
    let mut t = Table::new(&["q0_slice", "q0_tail", "qinfty_data", "qinfty_profile"]);
    t.push(vec![data.q0, data.q0_tail, q_inf, boundary]);
    ctx.table("charges", t);
    Ok(())
}

fn forward_plan(cfg: &RunConfig) -> ForwardPlan {
    let base = ForwardPlan::default();
    ForwardPlan {
        t_max: cfg.grid.t_max,
        record_dt: cfg.grid.record_dt,
        slice_times: base.slice_times.iter().copied().filter(|t| *t <= cfg.grid.t_max).collect(),
        ..base
    }
}

fn initial_data(cfg: &RunConfig, dr: f64) -> Result<InitialDataSet> {
    let plan = forward_plan(cfg);
    let q_hi = plan.radiation_q.iter().fold(0.0f64, |m, q| m.max(*q));
    let grid = RadialGrid::new(dr, cfg.grid.t_max + q_hi + 20.0)?;
    let (a, ad, p, pd) = cfg.initial.profiles(&grid);
    build_initial_data(grid, a, ad, p, pd)
}

struct ForwardRun {
    dr: f64,
    data: InitialDataSet,
    traj: Trajectory,
    charge_drift: f64,
    lambda_max: f64,
}

fn forward_run(cfg: &RunConfig, dr: f64, exec: Exec) -> Result<ForwardRun> {
    let data = initial_data(cfg, dr)?;
    let traj = run_forward(&data, &forward_plan(cfg), &ReducedMkg, &cfg.grid.scheme(), exec)?;
    let charge_drift = traj.monitors.iter().map(|m| (m.charge - data.q0).abs()).fold(0.0, f64::max);
    let lambda_max = traj.monitors.iter().map(|m| m.lambda_l2).fold(0.0, f64::max);
    Ok(ForwardRun {
        dr,
        data,
        traj,
        charge_drift,
        lambda_max,
    })
}

fn charge_defect(rays: &[RayRecord], q0: f64, exec: Exec) -> Result<(f64, Vec<AmplitudeEstimate>)> {
    charge_defect_with(rays, q0, &ExtractOptions::default(), exec)
}

fn charge_defect_with(rays: &[RayRecord], q0: f64, opts: &ExtractOptions, exec: Exec) -> Result<(f64, Vec<AmplitudeEstimate>)> {
    let est = extract_all(rays, opts, exec)?;
    let amps = amplitudes_from_estimates(&est)?;
    Ok((verify_charge_identity(&amps, q0, 1e-12)?, est))
}

fn slice_table(s: &EvolutionState) -> Table {
    let mut t = Table::new(&["r", "a0", "ar", "a0_t", "ar_t", "phi_re", "phi_im", "phi_t_re", "phi_t_im"]);
    for j in 0..s.grid.n {
        t.push(vec![
            s.grid.r(j),
            s.u[A0][j],
            s.u[AR][j],
            s.p[A0][j],
            s.p[AR][j],
            s.u[PHI_RE][j],
            s.u[PHI_IM][j],
            s.p[PHI_RE][j],
            s.p[PHI_IM][j],
        ]);
    }
    t
}

fn ray_table(r: &RayRecord) -> Table {
    let mut t = Table::new(&["tau", "phi_re", "phi_im", "dphi_tau_re", "dphi_tau_im", "a0", "ar", "a_tau", "phase"]);
    for k in 0..r.len() {
        t.push(vec![
            r.tau[k],
            r.phi[k].re,
            r.phi[k].im,
            r.dphi_tau[k].re,
            r.dphi_tau[k].im,
            r.a0[k],
            r.ar[k],
            r.a_tau[k],
            r.phase[k],
        ]);
    }
    t
}

fn amplitude_table(est: &[AmplitudeEstimate]) -> Table {
    let mut t = Table::new(&[
        "s",
        "rho",
        "a_plus_re",
        "a_plus_im",
        "a_minus_re",
        "a_minus_im",
        "drift_plus",
        "drift_minus",
    ]);
    for e in est {
        t.push(vec![
            e.s,
            e.rho,
            e.a_plus.re,
            e.a_plus.im,
            e.a_minus.re,
            e.a_minus.im,
            e.drift_plus,
            e.drift_minus,
        ]);
    }
    t
}

fn forward(cfg: &RunConfig, ctx: &mut Ctx) -> Result<()> {
    let exec = ctx.exec;
    let coarse = forward_run(cfg, cfg.grid.dr, exec)?;
    let fine = forward_run(cfg, 0.5 * cfg.grid.dr, exec)?;
    let q0 = coarse.data.q0;

    let order = observed_order(coarse.charge_drift, fine.charge_drift);
    let floor = 1e-13 * q0.abs().max(1e-12);
    if coarse.charge_drift <= floor {
        ctx.flag(
            "charge_conservation_order",
            true,
            coarse.charge_drift,
            "slice charge drift at roundoff level".into(),
        );
    } else {
        ctx.check(
            "charge_conservation_order",
            Bound::Lower,
            order,
            2.0,
            0.2,
            format!("max |q(t) − q₀|: {:.3e} (dr {}), {:.3e} (dr {})", coarse.charge_drift, coarse.dr, fine.charge_drift, fine.dr),
        );
    }

    let (dc, est) = charge_defect(&coarse.traj.rays, q0, exec)?;
    let (df, est_fine) = charge_defect(&fine.traj.rays, fine.data.q0, exec)?;
    let fraction = 2.0 / 3.0;
    let t_early = fraction * cfg.grid.t_max;
    let early: Vec<RayRecord> = coarse.traj.rays.iter().map(|r| r.truncated(t_early)).collect();
    let base = ExtractOptions::default();
    let early_opts = ExtractOptions {
        tau_fit_min: fraction * base.tau_fit_min,
        ..base
    };
    let de = charge_defect_with(&early, q0, &early_opts, exec).map(|r| r.0).unwrap_or(f64::NAN);
    ctx.check(
        "charge_identity",
        Bound::Upper,
        dc,
        0.0,
        0.05,
        format!("q₀ = {q0:.12e} against the a± integral"),
    );
    ctx.flag(
        "charge_identity_refinement",
        df <= dc,
        df,
        format!("defect {dc:.4e} at dr {} and {df:.4e} at dr {}", coarse.dr, fine.dr),
    );
    ctx.flag(
        "charge_identity_later_hyperboloid",
        dc <= de || de.is_nan() && dc == 0.0,
        de,
        format!("defect {de:.4e} extracting by t = {t_early:.1}, {dc:.4e} by t = {}", cfg.grid.t_max),
    );

    let amps = amplitudes_from_estimates(&est)?;
    let uc = fit_interior_u(&coarse.traj.rays, 0.6, 0.1).and_then(|f| Ok((compare_interior(&f, &amps)?, f)));
    let (ud, ufit) = match uc {
        Ok((d, f)) => (d, Some(f)),
        Err(e) => {
            ctx.out.notes.push(format!("interior profile fit failed: {e}"));
            (f64::NAN, None)
        }
    };
    ctx.check(
        "interior_profile_defect",
        Bound::Upper,
        ud,
        0.0,
        0.10,
        "fitted τ·A_μ against the elliptic profile of the extracted a±".into(),
    );
    let ud_fine = amplitudes_from_estimates(&est_fine)
        .and_then(|a| compare_interior(&fit_interior_u(&fine.traj.rays, 0.6, 0.1)?, &a))
        .unwrap_or(f64::NAN);
    ctx.flag(
        "interior_profile_refinement",
        ud_fine <= ud,
        ud_fine,
        format!("defect {ud:.4e} at dr {} and {ud_fine:.4e} at dr {}", coarse.dr, fine.dr),
    );

    let fits: Vec<_> = coarse.traj.radiation.iter().map(|rec| extract_radiation(rec, q0)).collect();
    let mut rad = Table::new(&["q", "f0", "fr", "fl", "fl_error", "decay_slope"]);
    let mut matches = 0usize;
    let mut listed = Vec::new();
    let mut slope_q2 = None;
    for (rec, fit) in coarse.traj.radiation.iter().zip(&fits) {
        match fit {
            Ok(f) => {
                let tol = f.fl_error * ctx.scale + 1e-12 * q0.abs().max(1e-12);
                if (f.fl - q0).abs() <= tol {
                    matches += 1;
                }
                listed.push(format!("q={}: |F_L − q₀| = {:.2e} (fit error {:.2e})", f.q, (f.fl - q0).abs(), f.fl_error));
                let slope = f.decay.as_ref().map(|d| d.slope);
                if (f.q + 2.0).abs() < 1e-9 {
                    slope_q2 = Some(slope);
                }
                rad.push(vec![f.q, f.f0, f.fr, f.fl, f.fl_error, slope.unwrap_or(f64::NAN)]);
            }
            Err(e) => listed.push(format!("q={}: {e}", rec.q)),
        }
    }
    ctx.check(
        "radiation_fl_equals_q0",
        Bound::Lower,
        matches as f64,
        3.0,
        0.0,
        listed.join("; "),
    );
    match slope_q2 {
        Some(Some(s)) => ctx.check(
            "radiation_decay_slope",
            Bound::Window,
            s,
            -1.0,
            0.3,
            "|rA_L − q₀| against r at q = −2".into(),
        ),
        Some(None) => ctx.flag("radiation_decay_slope", true, 0.0, "defect below floor at q = −2".into()),
        None => ctx.flag("radiation_decay_slope", false, f64::NAN, "no radiation record at q = −2".into()),
    }

    let lfloor = 1e-14;
    if coarse.lambda_max <= lfloor {
        ctx.flag("gauge_convergence_order", true, coarse.lambda_max, "Lorenz residual identically small".into());
    } else {
        ctx.check(
            "gauge_convergence_order",
            Bound::Lower,
            observed_order(coarse.lambda_max, fine.lambda_max),
            4.0,
            1.0,
            format!("max ‖λ(t)‖: {:.3e} (dr {}), {:.3e} (dr {})", coarse.lambda_max, coarse.dr, fine.lambda_max, fine.dr),
        );
    }

    let plain = extract_all(&coarse.traj.rays, &ExtractOptions { use_phase: false, ..ExtractOptions::default() }, exec);
    let drift = |e: &[AmplitudeEstimate]| e.iter().map(|x| x.drift_plus.max(x.drift_minus)).fold(0.0, f64::max);
    let corrected = drift(&est);
    match plain {
        Ok(p) => {
            let raw = drift(&p);
            ctx.flag(
                "phase_correction_bounds_drift",
                corrected <= raw,
                corrected,
                format!("estimator drift {corrected:.3e} with the phase, {raw:.3e} without"),
            );
        }
        Err(e) => ctx.flag(
            "phase_correction_bounds_drift",
            true,
            corrected,
            format!("uncorrected estimator does not settle ({e})"),
        ),
    }

    for s in &coarse.traj.slices {
        ctx.out.artifacts.slices.push((format!("t{:07.2}", s.t), slice_table(s)));
    }
    for r in &coarse.traj.rays {
        ctx.out.artifacts.rays.push((format!("s{:.2}", r.s), ray_table(r)));
    }
    for rec in &coarse.traj.radiation {
        let mut t = Table::new(&["r", "ra0", "rar"]);
        for k in 0..rec.r.len() {
            t.push(vec![rec.r[k], rec.ra0[k], rec.rar[k]]);
        }
        ctx.out.artifacts.rays.push((format!("q{:+.1}", rec.q), t));
    }
    let mut summary = Table::new(&["dr", "q0", "q0_tail", "charge_drift", "lambda_max", "charge_defect"]);
    for (run, d) in [(&coarse, dc), (&fine, df)] {
        summary.push(vec![run.dr, run.data.q0, run.data.q0_tail, run.charge_drift, run.lambda_max, d]);
        let mut m = Table::new(&["t", "charge", "charge_tail", "lambda_l2", "lambda_max", "energy_a0", "energy_ar", "energy_phi"]);
        for s in &run.traj.monitors {
            m.push(vec![s.t, s.charge, s.charge_tail, s.lambda_l2, s.lambda_max, s.energy[0], s.energy[1], s.energy[2]]);
        }
        ctx.table(&format!("monitors_dr{}", run.dr), m);
    }
    ctx.table("summary", summary);
    ctx.table("amplitudes", amplitude_table(&est));
    ctx.table("radiation_fits", rad);
    if let Some(f) = ufit {
        let src = SourceProfile::from_amplitudes(&amps)?;
        let prof = compute_u_elliptic(&src)?;
        let mut t = Table::new(&["rho", "u0_fit", "ur_fit", "u0_elliptic", "ur_elliptic"]);
        for k in 0..f.rho.len() {
            t.push(vec![
                f.rho[k],
                f.u0[k],
                f.ur[k],
                prof.u(Component::Time, f.rho[k]),
                prof.u(Component::Radial, f.rho[k]),
            ]);
        }
        ctx.table("interior_profile", t);
    }
    Ok(())
}

struct Ladder {
    solutions: Vec<BackwardSolution>,
}

fn backward_ladder(cfg: &RunConfig, approx: &ApproximateSolution, t_cuts: &[f64], exec: Exec) -> Result<Ladder> {
    let b = &cfg.backward;
    let span = b.t_compare - b.t_min;
    let record_dt = if span > 0.0 { span / (span / 2.0).ceil() } else { 2.0 };
    let scheme = cfg.grid.scheme();
    let solutions = exec.map(t_cuts, |&t_cut| {
        let grid = RadialGrid::new(cfg.grid.dr, t_cut + approx.q_edge() + 10.0)?;
        crate::backward::solve_backward_t(approx, t_cut, grid, b.t_min, record_dt, &scheme, exec)
    });
    Ok(Ladder {
        solutions: solutions.into_iter().collect::<Result<_>>()?,
    })
}

fn cauchy_checks(ctx: &mut Ctx, prefix: &str, ladder: &Ladder) -> Result<()> {
    let report = cauchy_limit(&ladder.solutions)?;
    let mut t = Table::new(&["t_cut", "t_cut_next", "energy_difference"]);
    for (k, d) in report.differences.iter().enumerate() {
        t.push(vec![report.t_cuts[k], report.t_cuts[k + 1], *d]);
    }
    ctx.table(&format!("{prefix}cauchy"), t);
    let listed = report.differences.iter().map(|d| format!("{d:.4e}")).collect::<Vec<_>>().join(", ");
    if report.differences.iter().all(|d| *d <= ZERO_FLOOR) {
        ctx.flag(&format!("{prefix}cauchy_strictly_decreasing"), true, 0.0, "all differences vanish".into());
        ctx.flag(&format!("{prefix}cauchy_exponent"), true, 0.0, "all differences vanish".into());
        return Ok(());
    }
    ctx.flag(
        &format!("{prefix}cauchy_strictly_decreasing"),
        report.strictly_decreasing,
        *report.differences.last().unwrap_or(&f64::NAN),
        format!("differences over T = {:?}: {listed}", report.t_cuts),
    );
    ctx.check(
        &format!("{prefix}cauchy_exponent"),
        Bound::Upper,
        report.exponent.unwrap_or(f64::NAN),
        -0.3,
        0.1,
        "power-law fit of the differences in T".into(),
    );
    Ok(())
}

fn roundtrip_table(approx: &ApproximateSolution, rt: &RoundTrip) -> Table {
    let mut t = Table::new(&[
        "s",
        "rho",
        "input_plus_re",
        "input_plus_im",
        "input_minus_re",
        "input_minus_im",
        "output_plus_re",
        "output_plus_im",
        "output_minus_re",
        "output_minus_im",
    ]);
    for e in &rt.estimates {
        let (p, m) = approx.amplitudes_at(e.s);
        t.push(vec![e.s, e.rho, p.re, p.im, m.re, m.im, e.a_plus.re, e.a_plus.im, e.a_minus.re, e.a_minus.im]);
    }
    t
}

fn backward(cfg: &RunConfig, ctx: &mut Ctx) -> Result<()> {
    let exec = ctx.exec;
    let b = &cfg.backward;
    let regime = gamma_regime(cfg.data.gamma)?;
    if cfg.data.gamma >= 1.0 / 6.0 {
        ctx.out.notes.push(format!("warning: γ = {}: {regime}", cfg.data.gamma));
    } else {
        ctx.out.notes.push(format!("γ = {}: {regime}", cfg.data.gamma));
    }
    let amps = amplitudes(&cfg.data)?;
    let src = SourceProfile::from_amplitudes(&amps)?;
    let am = AmTable::build(&src, AmTableSpec::default(), exec)?;
    let lbar = QProfile::default_grid(|q| cfg.data.f_lbar.eval(q));
    let data = backward_scattering_data(amps.clone(), &lbar, cfg.data.gamma, &am, true)?;
    let opts = ApproxOptions {
        include_f1: b.include_f1,
        light_cone_cutoff: b.light_cone_cutoff,
        ..ApproxOptions::default()
    };
    ctx.out.notes.push(format!(
        "phase ∫χ_LC(A⁽⁰⁾)^τdτ anchored at τ₀ = {}; light-cone cutoff {}",
        opts.tau0,
        if opts.light_cone_cutoff { "on" } else { "off" }
    ));
    let approx = assemble_approximate(&data, am.clone(), &opts, exec)?;
    let q_inf = approx.q_infinity();
    ctx.check(
        "admissibility",
        Bound::Upper,
        approx.admissibility_defect(),
        0.0,
        opts.admissibility_tol,
        format!("q∞ = {q_inf:.12e}"),
    );

    let control_data = backward_scattering_data(amps, &lbar, cfg.data.gamma, &am, false)?;
    let control = assemble_approximate(
        &control_data,
        am,
        &ApproxOptions {
            check_admissible: false,
            ..opts
        },
        exec,
    )?;
    let g_adm = gauge_decay(&approx, &b.gauge_shells, b.t_min, 0.1, 0.05, exec);
    let g_ctl = gauge_decay(&control, &b.gauge_shells, b.t_min, 0.1, 0.05, exec);
    let sup = |g: &Result<crate::backward::GaugeDecay>, k: usize| g.as_ref().map(|g| g.sup[k]).unwrap_or(0.0);
    let mut gt = Table::new(&["shell", "sup_admissible", "sup_control"]);
    for (k, s) in b.gauge_shells.iter().enumerate() {
        gt.push(vec![*s, sup(&g_adm, k), sup(&g_ctl, k)]);
    }
    let sups = |g: &Result<crate::backward::GaugeDecay>| -> Vec<f64> { (0..b.gauge_shells.len()).map(|k| sup(g, k)).collect() };
    let s_adm = decay_slope(&b.gauge_shells, &sups(&g_adm));
    let s_ctl = decay_slope(&b.gauge_shells, &sups(&g_ctl));
    ctx.table("gauge_decay", gt);
    slope_check(
        ctx,
        "gauge_decay_admissible",
        s_adm,
        Bound::Upper,
        -2.0,
        0.2,
        "sup |∂^μA⁽⁰⁾_μ| on null shells against t + r".into(),
    );
    if q_inf == 0.0 {
        ctx.flag("gauge_decay_negative_control", true, 0.0, "vacuous without charge".into());
    } else {
        let (a, c) = (s_adm.unwrap_or(f64::NAN), s_ctl.unwrap_or(f64::NAN));
        ctx.check(
            "gauge_decay_negative_control",
            Bound::Lower,
            c - a,
            0.9,
            0.6,
            format!("exponent {c:.3} without the −F^M_L term against {a:.3}"),
        );
    }

    let rem = remainder_decay(&approx, b.remainder_rho, b.remainder_tau[0], b.remainder_tau[1], 12, exec)?;
    let mut rt = Table::new(&["tau", "maxwell", "kg"]);
    for k in 0..rem.tau.len() {
        rt.push(vec![rem.tau[k], rem.maxwell[k], rem.kg[k]]);
    }
    ctx.table("remainders", rt);
    let maxwell = decay_slope(&rem.tau, &rem.maxwell);
    slope_check(
        ctx,
        "remainder_kg_decay",
        decay_slope(&rem.tau, &rem.kg),
        Bound::Upper,
        -3.5,
        0.3,
        format!("along ρ = {}; Maxwell remainder exponent {:?}", b.remainder_rho, maxwell),
    );

    let ansatz = |ell: u32, with_f1: bool| ansatz_residual(&lbar, ell, with_f1, b.ansatz_q, b.ansatz_r[0], b.ansatz_r[1], 12);
    let (l1_without, l1_with, l2_with) = (ansatz(1, false)?, ansatz(1, true)?, ansatz(2, true)?);
    let mut at = Table::new(&["r", "l1_without_f1", "l1_with_f1", "l2_with_f1"]);
    for k in 0..l1_without.r.len() {
        at.push(vec![l1_without.r[k], l1_without.residual[k], l1_with.residual[k], l2_with.residual[k]]);
    }
    ctx.table("ansatz_residual", at);
    let detail = |a: &crate::backward::AnsatzResidual| {
        format!("q = {}, residual at r = {:.0}: {:.3e}", a.q, a.r[a.r.len() - 1], a.residual[a.residual.len() - 1])
    };
    slope_check(ctx, "ansatz_l1_without_f1", decay_slope(&l1_without.r, &l1_without.residual), Bound::Window, -3.0, 0.3, detail(&l1_without));
    slope_check(ctx, "ansatz_l1_with_f1", decay_slope(&l1_with.r, &l1_with.residual), Bound::Window, -4.0, 0.3, detail(&l1_with));
    slope_check(ctx, "ansatz_l2_with_f1", decay_slope(&l2_with.r, &l2_with.residual), Bound::Window, -4.0, 0.3, detail(&l2_with));

    let ladder = backward_ladder(cfg, &approx, &b.t_cuts, exec)?;
    cauchy_checks(ctx, "", &ladder)?;
    let lam: Vec<f64> = ladder
        .solutions
        .iter()
        .map(|s| s.monitor_at(b.t_compare).map(|m| m.lambda_l2).unwrap_or(f64::NAN))
        .collect();
    if lam.iter().all(|l| l.abs() <= ZERO_FLOOR) {
        ctx.flag("lambda_t_slope", true, 0.0, "λ_T vanishes".into());
    } else {
        let slope = lambda_t_slope(&ladder.solutions, b.t_compare).map(|f| f.slope).unwrap_or(f64::NAN);
        ctx.check(
            "lambda_t_slope",
            Bound::Upper,
            slope,
            -0.5,
            0.1,
            format!("‖λ_T‖ at t = {}: {:?}", b.t_compare, lam),
        );
    }

    let mut support: f64 = 0.0;
    for s in &ladder.solutions {
        let edge = s.t_cut + approx.q_edge() - b.t_min + 5.0;
        let g = s.state.grid;
        let mut inside: f64 = 0.0;
        let mut outside: f64 = 0.0;
        for f in 0..4 {
            for j in 0..g.n {
                let v = s.state.u[f][j].abs().max(s.state.p[f][j].abs());
                if g.r(j) > edge {
                    outside = outside.max(v);
                } else {
                    inside = inside.max(v);
                }
            }
        }
        if inside > 0.0 {
            support = support.max(outside / inside);
        }
        let mut mt = Table::new(&["t", "energy_v", "energy_w", "lambda_l2"]);
        for m in &s.history {
            mt.push(vec![m.t, m.energy_v, m.energy_w, m.lambda_l2]);
        }
        ctx.table(&format!("monitors_T{:.0}", s.t_cut), mt);
        let total = total_state(&approx, &s.state, g, exec)?;
        ctx.out.artifacts.slices.push((format!("total_T{:.0}", s.t_cut), slice_table(&total)));
    }
    ctx.check(
        "correction_support",
        Bound::Upper,
        support,
        0.0,
        1e-6,
        "max |(v, w)| beyond the domain of influence of the sources, relative to the max inside".into(),
    );

    let plan = ForwardPlan {
        t_max: b.roundtrip_t_max,
        record_dt: cfg.grid.record_dt,
        radiation_q: vec![-6.0, 6.0],
        slice_times: Vec::new(),
        ..ForwardPlan::default()
    };
    let extract = ExtractOptions {
        tau_fit_min: 20.0,
        ..ExtractOptions::default()
    };
    let i = b.t_cuts.iter().position(|&t| t == b.roundtrip_t_cut).unwrap_or(0);
    let pair = [&ladder.solutions[i], &ladder.solutions[i + 1]];
    let trips = exec.map(&pair, |s| roundtrip_check(&approx, s, &plan, &cfg.grid.scheme(), &extract, exec));
    let trips: Vec<RoundTrip> = trips.into_iter().collect::<Result<_>>()?;
    let (base, refined) = (&trips[0], &trips[1]);
    ctx.check(
        "roundtrip_defect",
        Bound::Upper,
        base.defect,
        0.0,
        0.10,
        format!("relative ℓ² defect of a± at T = {}", base.t_cut),
    );
    ctx.flag(
        "roundtrip_refinement",
        refined.defect <= base.defect,
        refined.defect,
        format!("defect {:.4e} at T = {}, {:.4e} at T = {}", base.defect, base.t_cut, refined.defect, refined.t_cut),
    );
    let plateau = base
        .radiation
        .iter()
        .map(|f| (f.fl - q_inf).abs() / f.fl_error.max(1e-12 * q_inf.abs()).max(ZERO_FLOOR))
        .fold(0.0, f64::max);
    let listed = base
        .radiation
        .iter()
        .map(|f| format!("q={}: F_L {:.8e} ± {:.2e}", f.q, f.fl, f.fl_error))
        .collect::<Vec<_>>()
        .join("; ");
    ctx.check(
        "roundtrip_radiation_plateau",
        Bound::Upper,
        plateau,
        0.0,
        1.0,
        format!("|F_L − q∞| in units of the fit error; {listed}"),
    );
    for trip in &trips {
        ctx.table(&format!("roundtrip_T{:.0}", trip.t_cut), roundtrip_table(&approx, trip));
    }
    for r in &base.rays {
        ctx.out.artifacts.rays.push((format!("T{:.0}_s{:.2}", base.t_cut, r.s), ray_table(r)));
    }
    let mut st = Table::new(&["q", "f_l", "f_lbar"]);
    if let Some((fl, flb)) = data.null_profiles() {
        for k in 0..fl.len() {
            st.push(vec![fl.q(k), fl.values[k], flb.values[k]]);
        }
    }
    ctx.table("scattering_radiation", st);
    let mut sa = Table::new(&["rho", "a_plus_re", "a_plus_im", "a_minus_re", "a_minus_im"]);
    for (k, rho) in data.amplitudes.rho().iter().enumerate() {
        let (p, m) = (data.amplitudes.a_plus.values()[k], data.amplitudes.a_minus.values()[k]);
        sa.push(vec![*rho, p.re, p.im, m.re, m.im]);
    }
    ctx.table("scattering_amplitudes", sa);
    Ok(())
}

fn sweep(cfg: &RunConfig, ctx: &mut Ctx) -> Result<()> {
    let exec = ctx.exec;
    if !cfg.sweep.dr.is_empty() {
        let mut drs = cfg.sweep.dr.clone();
        drs.sort_by(|a, b| b.total_cmp(a));
        let runs = exec.map(&drs, |&dr| -> Result<(f64, f64, f64, f64)> {
            let run = forward_run(cfg, dr, exec)?;
            let defect = charge_defect(&run.traj.rays, run.data.q0, exec).map(|r| r.0).unwrap_or(f64::NAN);
            Ok((dr, run.charge_drift, run.lambda_max, defect))
        });
        let runs: Vec<(f64, f64, f64, f64)> = runs.into_iter().collect::<Result<_>>()?;
        let mut t = Table::new(&["dr", "charge_drift", "lambda_max", "charge_defect"]);
        for r in &runs {
            t.push(vec![r.0, r.1, r.2, r.3]);
        }
        ctx.table("sweep_resolution", t);
        let lam: Vec<f64> = runs.iter().map(|r| r.2).collect();
        let orders: Vec<f64> = lam.windows(2).map(|w| observed_order(w[0], w[1])).collect();
        let min_order = orders.iter().copied().fold(f64::INFINITY, f64::min);
        let vanishing = lam.iter().all(|l| *l <= 1e-14);
        ctx.flag(
            "sweep_lambda_converges",
            vanishing || lam.windows(2).all(|w| w[1] < w[0]),
            if vanishing { 0.0 } else { min_order },
            format!("max ‖λ‖ per dr: {lam:?}; observed orders {orders:?}"),
        );
        let defects: Vec<f64> = runs.iter().map(|r| r.3).filter(|d| d.is_finite()).collect();
        ctx.flag(
            "sweep_charge_identity_converges",
            defects.len() >= 2 && defects.windows(2).all(|w| w[1] <= w[0]),
            *defects.last().unwrap_or(&f64::NAN),
            format!(
                "charge-identity defect per dr (non-settling rungs skipped): {:?}",
                runs.iter().map(|r| r.3).collect::<Vec<_>>()
            ),
        );
    }
    if !cfg.sweep.t_cuts.is_empty() {
        let amps = amplitudes(&cfg.data)?;
        let src = SourceProfile::from_amplitudes(&amps)?;
        let am = AmTable::build(&src, AmTableSpec::default(), exec)?;
        let lbar = QProfile::default_grid(|q| cfg.data.f_lbar.eval(q));
        let data = backward_scattering_data(amps, &lbar, cfg.data.gamma, &am, true)?;
        let opts = ApproxOptions {
            include_f1: cfg.backward.include_f1,
            light_cone_cutoff: cfg.backward.light_cone_cutoff,
            ..ApproxOptions::default()
        };
        let approx = assemble_approximate(&data, am, &opts, exec)?;
        let ladder = backward_ladder(cfg, &approx, &cfg.sweep.t_cuts, exec)?;
        cauchy_checks(ctx, "sweep_", &ladder)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobian_experiment_passes() {
        let mut cfg = RunConfig::baseline(ExperimentKind::JacobianCheck);
        cfg.quadrature.jacobian_samples = 3;
        let out = run_experiment(&cfg, Exec::default()).unwrap();
        assert_eq!(out.verdicts.len(), 2);
        assert!(out.verdicts.iter().all(|v| v.pass), "{:?}", out.verdicts);
    }

    #[test]
    fn charge_experiment_passes() {
        let mut cfg = RunConfig::baseline(ExperimentKind::ChargeCheck);
        cfg.grid.t_max = 20.0;
        let out = run_experiment(&cfg, Exec::default()).unwrap();
        assert!(out.verdicts.iter().all(|v| v.pass), "{:?}", out.verdicts);
    }

    #[test]
    fn zero_data_forward_passes() {
        let mut cfg = RunConfig::baseline(ExperimentKind::Forward);
        cfg.initial.epsilon = 0.0;
        cfg.grid.t_max = 230.0;
        cfg.grid.dr = 0.2;
        let out = run_experiment(&cfg, Exec::default()).unwrap();
        for v in &out.verdicts {
            assert!(v.pass, "{}", v.summary());
        }
    }
}
