//! Run configuration, verdicts, run directories and the experiment drivers.

mod artifacts;
mod experiments;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evolve::Scheme;
use crate::forward::GaussianPulse;
use crate::scattering_data::{gamma_regime, AmplitudeFamily, RadiationFamily};

pub use artifacts::{read_manifest, write_run, FileEntry, RunArtifacts, RunManifest, Table, ARTIFACT_VERSION};
pub use experiments::{execute, run_experiment, RunOutcome};

/// Environment variable that overrides the output root (never the run
/// directory itself).
pub const OUTPUT_ROOT_ENV: &str = "MMKG_OUTPUT_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Forward,
    Backward,
    ChargeCheck,
    JacobianCheck,
    RadiationLimit,
    HuygensCheck,
    Sweep,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::Forward,
        ExperimentKind::Backward,
        ExperimentKind::ChargeCheck,
        ExperimentKind::JacobianCheck,
        ExperimentKind::RadiationLimit,
        ExperimentKind::HuygensCheck,
        ExperimentKind::Sweep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Forward => "forward",
            ExperimentKind::Backward => "backward",
            ExperimentKind::ChargeCheck => "charge-check",
            ExperimentKind::JacobianCheck => "jacobian-check",
            ExperimentKind::RadiationLimit => "radiation-limit",
            ExperimentKind::HuygensCheck => "huygens-check",
            ExperimentKind::Sweep => "sweep",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub dr: f64,
    pub t_max: f64,
    pub record_dt: f64,
    pub cfl: f64,
    pub ko_sigma: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            dr: 0.1,
            t_max: 300.0,
            record_dt: 0.4,
            cfl: 0.4,
            ko_sigma: 0.01,
        }
    }
}

impl GridConfig {
    pub fn scheme(&self) -> Scheme {
        Scheme {
            cfl: self.cfl,
            ko_sigma: self.ko_sigma,
            ..Scheme::default()
        }
    }
}

/// Closed-form scattering data: a± families with their common decay
/// exponent α and overall amplitude, and the free radiation profile F_L̄.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub a_plus: AmplitudeFamily,
    pub a_minus: AmplitudeFamily,
    pub alpha: f64,
    pub amplitude: f64,
    pub f_lbar: RadiationFamily,
    pub gamma: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            a_plus: AmplitudeFamily::PowerGaussian {
                re: 0.0,
                im: 0.4,
                exponent: 1.75,
                width: 1.5,
            },
            a_minus: AmplitudeFamily::PowerGaussian {
                re: 1.0,
                im: 0.0,
                exponent: 1.75,
                width: 1.5,
            },
            alpha: 1.75,
            amplitude: 0.5,
            f_lbar: RadiationFamily::PowerBump {
                c: 0.02,
                gamma: 0.1,
                cut: 20.0,
            },
            gamma: 0.1,
        }
    }
}

impl DataConfig {
    /// a₋ = (1−ρ²)^{7/4}, a₊ = 0, no free radiation.
    pub fn charge_oracle() -> Self {
        Self {
            a_plus: AmplitudeFamily::Zero,
            a_minus: AmplitudeFamily::Power {
                re: 1.0,
                im: 0.0,
                exponent: 1.75,
            },
            alpha: 1.75,
            amplitude: 1.0,
            f_lbar: RadiationFamily::Zero,
            gamma: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadratureConfig {
    pub tol: f64,
    pub null_limit_q: f64,
    pub null_limit_times: Vec<f64>,
    pub jacobian_samples: usize,
    pub huygens_times: Vec<f64>,
    pub huygens_rho: Vec<f64>,
    pub gauge_points: Vec<[f64; 2]>,
    pub gauge_step: f64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            null_limit_q: -5.0,
            null_limit_times: vec![50.0, 100.0, 200.0, 400.0],
            jacobian_samples: 10,
            huygens_times: vec![10.0, 20.0, 40.0, 80.0],
            huygens_rho: vec![0.0, 0.25, 0.5, 0.75, 0.9],
            gauge_points: vec![[12.0, 4.0], [20.0, 10.0], [40.0, 30.0], [60.0, 20.0], [80.0, 70.0]],
            gauge_step: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackwardConfig {
    pub t_cuts: Vec<f64>,
    pub t_min: f64,
    /// Slice on which λ_T is compared across the ladder.
    pub t_compare: f64,
    /// T of the baseline round trip; the next larger T is its refinement.
    pub roundtrip_t_cut: f64,
    pub roundtrip_t_max: f64,
    pub include_f1: bool,
    pub light_cone_cutoff: bool,
    pub gauge_shells: Vec<f64>,
    pub remainder_rho: f64,
    pub remainder_tau: [f64; 2],
    pub ansatz_q: f64,
    pub ansatz_r: [f64; 2],
}

impl Default for BackwardConfig {
    fn default() -> Self {
        Self {
            t_cuts: vec![40.0, 80.0, 160.0, 320.0],
            t_min: 4.0,
            t_compare: 10.0,
            roundtrip_t_cut: 160.0,
            roundtrip_t_max: 300.0,
            include_f1: true,
            light_cone_cutoff: true,
            gauge_shells: vec![20.0, 40.0, 80.0, 160.0, 320.0, 640.0],
            remainder_rho: 0.3,
            remainder_tau: [10.0, 200.0],
            ansatz_q: 0.7,
            ansatz_r: [20.0, 400.0],
        }
    }
}

/// Resolution ladder (forward runs at each dr) and/or T-ladder (backward
/// Cauchy differences only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub dr: Vec<f64>,
    pub t_cuts: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            dr: vec![0.2, 0.1, 0.05],
            t_cuts: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Multiplies every tolerance; values below 1 are rejected.
    pub scale: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { scale: 1.0 }
    }
}

fn default_pulse() -> GaussianPulse {
    GaussianPulse::new(0.5)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub grid: GridConfig,
    /// Cauchy data of the forward runs.
    #[serde(default = "default_pulse")]
    pub initial: GaussianPulse,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
    #[serde(default)]
    pub backward: BackwardConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_root: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    /// The baseline configuration of each experiment.
    pub fn baseline(experiment: ExperimentKind) -> Self {
        let data = match experiment {
            ExperimentKind::RadiationLimit | ExperimentKind::HuygensCheck => DataConfig::charge_oracle(),
            _ => DataConfig::default(),
        };
        let sweep = match experiment {
            ExperimentKind::Sweep => SweepConfig {
                dr: vec![0.2, 0.1, 0.05],
                t_cuts: Vec::new(),
            },
            _ => SweepConfig::default(),
        };
        Self {
            experiment,
            grid: GridConfig::default(),
            initial: default_pulse(),
            data,
            quadrature: QuadratureConfig::default(),
            backward: BackwardConfig::default(),
            sweep,
            tolerances: Tolerances::default(),
            output_root: None,
            seed: 0,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serializes")
    }

    /// SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("configuration serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Schema(msg));
        let positive = |name: &str, v: f64| -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Schema(format!("{name} must be positive and finite, got {v}")))
            }
        };
        let g = &self.grid;
        positive("grid.dr", g.dr)?;
        positive("grid.record_dt", g.record_dt)?;
        positive("grid.cfl", g.cfl)?;
        if !(g.t_max > 2.0 && g.t_max.is_finite()) {
            return bad(format!("grid.t_max must exceed the initial time 2, got {}", g.t_max));
        }
        if !(g.ko_sigma >= 0.0 && g.ko_sigma.is_finite()) {
            return bad(format!("grid.ko_sigma must be non-negative, got {}", g.ko_sigma));
        }
        let p = &self.initial;
        if ![p.epsilon, p.width, p.frequency, p.ar_amplitude].iter().all(|v| v.is_finite()) || !(p.width > 0.0) {
            return bad("initial pulse parameters must be finite with a positive width".into());
        }
        let d = &self.data;
        if !(d.alpha >= 1.75 && d.alpha.is_finite()) {
            return bad(format!("data.alpha must be at least 7/4, got {}", d.alpha));
        }
        if !d.amplitude.is_finite() {
            return bad("data.amplitude must be finite".into());
        }
        gamma_regime(d.gamma).map_err(|e| Error::Schema(e.to_string()))?;
        let q = &self.quadrature;
        positive("quadrature.tol", q.tol)?;
        positive("quadrature.gauge_step", q.gauge_step)?;
        if q.null_limit_times.len() < 2 || !increasing(&q.null_limit_times) || q.null_limit_times[0] + q.null_limit_q <= 0.0 {
            return bad("quadrature.null_limit_times must increase, have two entries and keep r = t + q positive".into());
        }
        if q.huygens_rho.iter().any(|r| !(0.0..1.0).contains(r)) || q.huygens_times.iter().any(|t| !(*t > 0.0)) {
            return bad("quadrature.huygens_rho must lie in [0, 1) and huygens_times be positive".into());
        }
        if q.gauge_points.iter().any(|[t, r]| !(*r > 2.0 * q.gauge_step && t - r > 4.0)) {
            return bad("quadrature.gauge_points need r > 2h and t − r > 4".into());
        }
        let b = &self.backward;
        if b.t_cuts.len() < 3 || !increasing(&b.t_cuts) {
            return bad("backward.t_cuts must hold at least three increasing values".into());
        }
        positive("backward.t_min", b.t_min)?;
        if 0.5 * b.t_cuts[0] <= b.t_min || b.t_compare < b.t_min || b.t_compare > 0.25 * b.t_cuts[0] {
            return bad("backward ladder needs t_min < t_compare ≤ T_min/4 and T_min/2 > t_min".into());
        }
        let rt = b.t_cuts.iter().position(|&t| t == b.roundtrip_t_cut);
        if rt.is_none_or(|i| i + 1 >= b.t_cuts.len()) {
            return bad("backward.roundtrip_t_cut must be a ladder entry below the largest T".into());
        }
        if !(b.roundtrip_t_max > 2.0 * b.t_min) {
            return bad("backward.roundtrip_t_max is too small".into());
        }
        if b.gauge_shells.len() < 2 || !increasing(&b.gauge_shells) || b.gauge_shells[0] <= 2.0 * b.t_min {
            return bad("backward.gauge_shells must increase and exceed 2·t_min".into());
        }
        if !(0.0..1.0).contains(&b.remainder_rho) || !(b.remainder_tau[0] > 0.0 && b.remainder_tau[1] > b.remainder_tau[0]) {
            return bad("backward remainder ray needs 0 ≤ ρ < 1 and an increasing τ range".into());
        }
        if !(b.ansatz_r[0] > 0.0 && b.ansatz_r[1] > b.ansatz_r[0]) {
            return bad("backward.ansatz_r must be an increasing positive range".into());
        }
        let s = &self.sweep;
        if self.experiment == ExperimentKind::Sweep && s.dr.is_empty() && s.t_cuts.is_empty() {
            return bad("sweep needs a dr ladder or a T ladder".into());
        }
        for dr in &s.dr {
            positive("sweep.dr", *dr)?;
        }
        if !s.t_cuts.is_empty() && (s.t_cuts.len() < 3 || !increasing(&s.t_cuts) || 0.5 * s.t_cuts[0] <= b.t_min) {
            return bad("sweep.t_cuts must hold at least three increasing values above 2·t_min".into());
        }
        if !(self.tolerances.scale >= 1.0 && self.tolerances.scale.is_finite()) {
            return bad(format!("tolerances.scale must be at least 1, got {}", self.tolerances.scale));
        }
        Ok(())
    }

    /// Run directory: `<root>/<experiment>-<hash prefix>`, where the root
    /// comes from the environment override, then the configuration, then
    /// `runs`.
    pub fn run_dir(&self, env_root: Option<PathBuf>) -> PathBuf {
        let root = env_root
            .or_else(|| self.output_root.clone())
            .unwrap_or_else(|| PathBuf::from("runs"));
        root.join(format!("{}-{}", self.experiment.name(), &self.hash()[..12]))
    }
}

fn increasing(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite()) && v.windows(2).all(|w| w[1] > w[0])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    /// measured ≤ target + tolerance.
    Upper,
    /// measured ≥ target − tolerance.
    Lower,
    /// |measured − target| ≤ tolerance.
    Window,
    /// A yes/no property; `measured` is informational.
    Flag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub pass: bool,
    pub measured: f64,
    pub target: f64,
    /// Tolerance after scaling.
    pub tolerance: f64,
    pub bound: Bound,
    pub detail: String,
}

impl Verdict {
    pub fn new(name: &str, bound: Bound, measured: f64, target: f64, tolerance: f64, scale: f64) -> Self {
        let tol = tolerance * scale;
        let pass = match bound {
            Bound::Upper => measured <= target + tol,
            Bound::Lower => measured >= target - tol,
            Bound::Window => (measured - target).abs() <= tol,
            Bound::Flag => false,
        };
        Self {
            name: name.to_string(),
            pass,
            measured,
            target,
            tolerance: tol,
            bound,
            detail: String::new(),
        }
    }

    pub fn flag(name: &str, pass: bool, measured: f64) -> Self {
        Self {
            name: name.to_string(),
            pass,
            measured,
            target: 0.0,
            tolerance: 0.0,
            bound: Bound::Flag,
            detail: String::new(),
        }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }

    pub fn summary(&self) -> String {
        let rel = match self.bound {
            Bound::Upper => format!("<= {:.4e}", self.target + self.tolerance),
            Bound::Lower => format!(">= {:.4e}", self.target - self.tolerance),
            Bound::Window => format!("in {:.4e} ± {:.4e}", self.target, self.tolerance),
            Bound::Flag => "holds".to_string(),
        };
        format!(
            "{} {}: measured {:.6e} (required {rel}){}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            if self.detail.is_empty() { String::new() } else { format!(" [{}]", self.detail) }
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn baselines_validate_and_round_trip() {
        for kind in ExperimentKind::ALL {
            let cfg = RunConfig::baseline(kind);
            cfg.validate().unwrap();
            assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        }
    }

    #[test]
    fn negative_dr_is_a_schema_error() {
        let text = r#"{"experiment": "forward", "grid": {"dr": -0.1}}"#;
        assert!(matches!(RunConfig::from_json(text), Err(Error::Schema(_))));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = r#"{"experiment": "forward", "gird": {}}"#;
        assert!(matches!(RunConfig::from_json(text), Err(Error::Schema(_))));
        let text = r#"{"experiment": "warp"}"#;
        assert!(matches!(RunConfig::from_json(text), Err(Error::Schema(_))));
    }

    #[test]
    fn tolerance_scale_only_loosens() {
        let mut cfg = RunConfig::baseline(ExperimentKind::JacobianCheck);
        cfg.tolerances.scale = 0.5;
        assert!(matches!(cfg.validate(), Err(Error::Schema(_))));
        let v = Verdict::new("x", Bound::Upper, 1.5e-6, 0.0, 1e-6, 1.0);
        assert!(!v.pass);
        let v = Verdict::new("x", Bound::Upper, 1.5e-6, 0.0, 1e-6, 2.0);
        assert!(v.pass);
        assert!(!Verdict::new("x", Bound::Window, f64::NAN, 0.0, 1.0, 1.0).pass);
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::baseline(ExperimentKind::Forward);
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 7;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn run_dir_prefers_the_environment_root() {
        let mut cfg = RunConfig::baseline(ExperimentKind::Forward);
        cfg.output_root = Some(PathBuf::from("from-config"));
        let d = cfg.run_dir(Some(PathBuf::from("from-env")));
        assert!(d.starts_with("from-env"));
        assert!(cfg.run_dir(None).starts_with("from-config"));
    }
}
