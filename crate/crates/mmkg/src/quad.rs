//! One-dimensional quadrature: adaptive Gauss–Kronrod (7/15) and fixed
//! Gauss–Legendre rules.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];

const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_panels: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-12,
            rel_tol: 1e-10,
            max_panels: 2000,
        }
    }
}

impl QuadOptions {
    pub fn new(abs_tol: f64, rel_tol: f64) -> Self {
        Self {
            abs_tol,
            rel_tol,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

/// Apply the 15-point Kronrod rule on [a, b]; returns (integral, error estimate).
pub fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let (v, e) = gk15_n(&mut |x| [f(x)], a, b);
    (v[0], e)
}

fn gk15_n<const N: usize, F: FnMut(f64) -> [f64; N]>(f: &mut F, a: f64, b: f64) -> ([f64; N], f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc.map(|v| v * WGK[7]);
    let mut gauss = fc.map(|v| v * WG[3]);
    for j in 0..7 {
        let dx = h * XGK[j];
        let f1 = f(c - dx);
        let f2 = f(c + dx);
        for k in 0..N {
            kron[k] += WGK[j] * (f1[k] + f2[k]);
            if j % 2 == 1 {
                gauss[k] += WG[j / 2] * (f1[k] + f2[k]);
            }
        }
    }
    let mut total_err = 0.0;
    for k in 0..N {
        kron[k] *= h;
        let err = (kron[k] - gauss[k] * h).abs();
        // QUADPACK-style scaling of the raw difference; tends to be pessimistic
        // for smooth integrands, which is what we want from an error bar.
        total_err += if err > 0.0 {
            let scaled = (200.0 * err / kron[k].abs().max(f64::MIN_POSITIVE)).powf(1.5) * kron[k].abs();
            scaled.min(err).max(err * 1e-3)
        } else {
            0.0
        };
    }
    (kron, total_err)
}

#[derive(Debug, Clone, Copy)]
struct Panel<const N: usize> {
    a: f64,
    b: f64,
    value: [f64; N],
    error: f64,
}

impl<const N: usize> PartialEq for Panel<N> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl<const N: usize> Eq for Panel<N> {}
impl<const N: usize> PartialOrd for Panel<N> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<const N: usize> Ord for Panel<N> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error
            .total_cmp(&other.error)
            .then_with(|| other.a.total_cmp(&self.a))
    }
}

/// Globally adaptive Gauss–Kronrod integration of `f` over [a, b].
///
/// Bisects the panel with the largest error estimate until the summed
/// estimate falls below `max(abs_tol, rel_tol·|I|)`.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, opts: QuadOptions) -> Result<QuadResult> {
    let r = integrate_n(|x| [f(x)], a, b, opts)?;
    Ok(QuadResult {
        value: r.value[0],
        error: r.error,
        evaluations: r.evaluations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResultN<const N: usize> {
    pub value: [f64; N],
    pub error: f64,
    pub evaluations: usize,
}

/// Vector-valued variant of [`integrate`]: all components share one panel
/// tree, the error is the sum over components and the relative tolerance
/// refers to the largest component.
pub fn integrate_n<const N: usize, F: FnMut(f64) -> [f64; N]>(mut f: F, a: f64, b: f64, opts: QuadOptions) -> Result<QuadResultN<N>> {
    if a == b {
        return Ok(QuadResultN {
            value: [0.0; N],
            error: 0.0,
            evaluations: 0,
        });
    }
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::InvalidInput(format!("integration limits must be finite, got [{a}, {b}]")));
    }
    let mut heap = BinaryHeap::new();
    let (v, e) = gk15_n(&mut f, a, b);
    let mut evaluations = 15;
    heap.push(Panel { a, b, value: v, error: e });
    let mut total = v;
    let mut total_err = e;
    loop {
        let scale = total.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tol = opts.abs_tol.max(opts.rel_tol * scale);
        if total_err <= tol {
            break;
        }
        if heap.len() >= opts.max_panels {
            return Err(Error::Quadrature {
                achieved: total_err,
                requested: tol,
            });
        }
        let worst = heap.pop().expect("non-empty panel heap");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            return Err(Error::Quadrature {
                achieved: total_err,
                requested: tol,
            });
        }
        let (v1, e1) = gk15_n(&mut f, worst.a, mid);
        let (v2, e2) = gk15_n(&mut f, mid, worst.b);
        evaluations += 30;
        if v1.iter().chain(&v2).any(|v| !v.is_finite()) {
            return Err(Error::NonIntegrable {
                endpoint: "interior",
                detail: format!("non-finite integrand on [{}, {}]", worst.a, worst.b),
            });
        }
        for k in 0..N {
            total[k] += v1[k] + v2[k] - worst.value[k];
        }
        total_err += e1 + e2 - worst.error;
        heap.push(Panel { a: worst.a, b: mid, value: v1, error: e1 });
        heap.push(Panel { a: mid, b: worst.b, value: v2, error: e2 });
    }
    // Re-sum in a fixed order so the result does not depend on heap history.
    let mut panels = heap.into_vec();
    panels.sort_by(|x, y| x.a.total_cmp(&y.a));
    let mut value = [0.0; N];
    for p in &panels {
        for k in 0..N {
            value[k] += p.value[k];
        }
    }
    let error = panels.iter().map(|p| p.error).sum();
    Ok(QuadResultN {
        value,
        error,
        evaluations,
    })
}

/// Vector-valued integration over consecutive breakpoints.
pub fn integrate_pieces_n<const N: usize, F: FnMut(f64) -> [f64; N]>(mut f: F, breaks: &[f64], opts: QuadOptions) -> Result<QuadResultN<N>> {
    let mut out = QuadResultN {
        value: [0.0; N],
        error: 0.0,
        evaluations: 0,
    };
    let n = breaks.len().saturating_sub(1).max(1) as f64;
    let piece = QuadOptions {
        abs_tol: opts.abs_tol / n,
        ..opts
    };
    for w in breaks.windows(2) {
        let r = integrate_n(&mut f, w[0], w[1], piece)?;
        for k in 0..N {
            out.value[k] += r.value[k];
        }
        out.error += r.error;
        out.evaluations += r.evaluations;
    }
    Ok(out)
}

/// Integrate over consecutive breakpoints, sharing the tolerance budget.
pub fn integrate_pieces<F: FnMut(f64) -> f64>(mut f: F, breaks: &[f64], opts: QuadOptions) -> Result<QuadResult> {
    let mut out = QuadResult {
        value: 0.0,
        error: 0.0,
        evaluations: 0,
    };
    let n = breaks.len().saturating_sub(1).max(1) as f64;
    let piece = QuadOptions {
        abs_tol: opts.abs_tol / n,
        ..opts
    };
    for w in breaks.windows(2) {
        let r = integrate(&mut f, w[0], w[1], piece)?;
        out.value += r.value;
        out.error += r.error;
        out.evaluations += r.evaluations;
    }
    Ok(out)
}

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = 0.0;
            for k in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * k + 1) as f64 * z * p1 - k as f64 * p2) / (k + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// A fixed Gauss–Legendre rule mapped onto arbitrary intervals.
#[derive(Debug, Clone)]
pub struct FixedRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl FixedRule {
    pub fn new(n: usize) -> Self {
        let (nodes, weights) = gauss_legendre(n);
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes and weights mapped to [a, b].
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(x, w)| (c + h * x, h * w))
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F, a: f64, b: f64) -> f64 {
        self.mapped(a, b).map(|(x, w)| w * f(x)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn polynomial_exact() {
        let r = integrate(|x| 3.0 * x * x, 0.0, 2.0, QuadOptions::default()).unwrap();
        assert_relative_eq!(r.value, 8.0, max_relative = 1e-14);
    }

    #[test]
    fn endpoint_singularity_adapts() {
        let r = integrate(|x: f64| x.sqrt(), 0.0, 1.0, QuadOptions::new(1e-12, 1e-12)).unwrap();
        assert_relative_eq!(r.value, 2.0 / 3.0, max_relative = 1e-11);
    }

    #[test]
    fn oscillatory_integrand() {
        let r = integrate(|x: f64| (20.0 * x).cos(), 0.0, 3.0, QuadOptions::default()).unwrap();
        assert_relative_eq!(r.value, (60.0f64).sin() / 20.0, epsilon = 1e-12);
    }

    #[test]
    fn non_convergence_is_an_error() {
        let opts = QuadOptions {
            abs_tol: 1e-14,
            rel_tol: 1e-14,
            max_panels: 4,
        };
        assert!(matches!(
            integrate(|x: f64| 1.0 / x.sqrt(), 0.0, 1.0, opts),
            Err(Error::Quadrature { .. })
        ));
    }

    #[test]
    fn gauss_legendre_weights_sum_to_two() {
        for n in [1, 2, 5, 16, 33] {
            let (x, w) = gauss_legendre(n);
            assert_relative_eq!(w.iter().sum::<f64>(), 2.0, max_relative = 1e-13);
            let m4: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(4)).sum();
            if n >= 3 {
                assert_relative_eq!(m4, 0.4, max_relative = 1e-13);
            }
        }
    }

    #[test]
    fn fixed_rule_maps_intervals() {
        let rule = FixedRule::new(8);
        assert_relative_eq!(rule.integrate(|x| x.exp(), 1.0, 2.0), 2f64.exp() - 1f64.exp(), max_relative = 1e-14);
    }
}
