//! Analytic drift providers.
//!
//! These stand in for a learned score or energy surrogate: every provider
//! exposes an energy value and its exact gradient, with known Lipschitz
//! bounds where they exist, so that the error-budget diagnostics work with
//! exactly known constants. [`PerturbedDrift`] injects a bounded drift
//! error on top of a base provider to emulate model error.

use std::sync::Arc;

use crate::{Error, Result};

/// An energy surface with an exact gradient.
pub trait DriftProvider: Send + Sync {
    /// Number of coordinates.
    fn dim(&self) -> usize;

    /// Potential energy at `x`.
    fn value(&self, x: &[f64]) -> f64;

    /// Gradient of the potential, written into `out`.
    fn gradient(&self, x: &[f64], out: &mut [f64]);

    /// Short identifier used in registries and output metadata.
    fn label(&self) -> &str;

    /// Global Lipschitz bound of the gradient, when one exists.
    fn lipschitz_bound(&self) -> Option<f64> {
        None
    }

    fn gradient_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.gradient(x, &mut out);
        out
    }
}

/// Isotropic quadratic well `V(x) = κ‖x − c‖²/2`. Under overdamped Langevin
/// dynamics its stationary law is Gaussian with variance `D/κ` per
/// coordinate, which makes it the standard exactness oracle.
#[derive(Debug, Clone)]
pub struct Quadratic {
    kappa: f64,
    center: Vec<f64>,
}

pub fn make_quadratic(kappa: f64, center: Vec<f64>) -> Result<Quadratic> {
    if !(kappa > 0.0) {
        return Err(Error::domain(format!(
            "curvature must be positive, got {kappa}"
        )));
    }
    if center.is_empty() {
        return Err(Error::domain("center must be nonempty"));
    }
    Ok(Quadratic { kappa, center })
}

impl Quadratic {
    pub fn kappa(&self) -> f64 {
        self.kappa
    }
}

impl DriftProvider for Quadratic {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        0.5 * self.kappa
            * x.iter()
                .zip(&self.center)
                .map(|(a, c)| (a - c) * (a - c))
                .sum::<f64>()
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        for ((o, a), c) in out.iter_mut().zip(x).zip(&self.center) {
            *o = self.kappa * (a - c);
        }
    }

    fn label(&self) -> &str {
        "quadratic"
    }

    fn lipschitz_bound(&self) -> Option<f64> {
        Some(self.kappa)
    }
}

/// Separable double well `V(x) = Σ_i a (x_i² − b²)²` with wells at `±b`
/// and barrier height `a·b⁴` per coordinate.
#[derive(Debug, Clone)]
pub struct DoubleWell {
    barrier: f64,
    width: f64,
    dim: usize,
}

pub fn make_double_well(a: f64, b: f64) -> Result<DoubleWell> {
    make_double_well_nd(a, b, 1)
}

pub fn make_double_well_nd(a: f64, b: f64, dim: usize) -> Result<DoubleWell> {
    if !(a > 0.0) || !(b > 0.0) {
        return Err(Error::domain(format!(
            "double-well parameters must be positive, got a={a}, b={b}"
        )));
    }
    if dim == 0 {
        return Err(Error::domain("dimension must be at least 1"));
    }
    Ok(DoubleWell {
        barrier: a,
        width: b,
        dim,
    })
}

impl DriftProvider for DoubleWell {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        let b2 = self.width * self.width;
        x.iter()
            .map(|&xi| {
                let s = xi * xi - b2;
                self.barrier * s * s
            })
            .sum()
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let b2 = self.width * self.width;
        for (o, &xi) in out.iter_mut().zip(x) {
            *o = 4.0 * self.barrier * xi * (xi * xi - b2);
        }
    }

    fn label(&self) -> &str {
        "double-well"
    }
}

/// Three-well torsional potential on the circle,
/// `V(θ) = Σ_{j=1..3} h_j cos(jθ)`.
///
/// With zero phase offsets and a dominant third harmonic the minima sit
/// near −60°, 60°, and 180°, mimicking the gauche/trans wells of a small
/// alkane torsion.
#[derive(Debug, Clone)]
pub struct TorsionRing {
    heights: [f64; 3],
}

pub fn make_torsion_ring(heights: [f64; 3]) -> Result<TorsionRing> {
    if heights.iter().any(|h| !h.is_finite()) {
        return Err(Error::domain("torsion heights must be finite"));
    }
    Ok(TorsionRing { heights })
}

impl TorsionRing {
    /// Angle-domain minima, located by scanning plus Newton refinement.
    pub fn minima(&self) -> Vec<f64> {
        let n = 14400;
        let mut out = Vec::new();
        let v = |t: f64| self.value(&[t]);
        for i in 0..n {
            let a = -std::f64::consts::PI + 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            let step = 2.0 * std::f64::consts::PI / n as f64;
            let (vm, v0, vp) = (v(a - step), v(a), v(a + step));
            if v0 < vm && v0 < vp {
                out.push(self.refine_minimum(a));
            }
        }
        out
    }

    fn refine_minimum(&self, mut t: f64) -> f64 {
        for _ in 0..60 {
            let g = self.dv(t);
            let h = self.d2v(t);
            if h.abs() < 1e-14 {
                break;
            }
            let step = g / h;
            t -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        wrap_angle(t)
    }

    fn dv(&self, t: f64) -> f64 {
        -(self.heights[0] * t.sin()
            + 2.0 * self.heights[1] * (2.0 * t).sin()
            + 3.0 * self.heights[2] * (3.0 * t).sin())
    }

    fn d2v(&self, t: f64) -> f64 {
        -(self.heights[0] * t.cos()
            + 4.0 * self.heights[1] * (2.0 * t).cos()
            + 9.0 * self.heights[2] * (3.0 * t).cos())
    }
}

/// Wrap an angle to `[-π, π)`.
pub fn wrap_angle(t: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut w = (t + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI;
    if w >= std::f64::consts::PI {
        w -= two_pi;
    }
    w
}

impl DriftProvider for TorsionRing {
    fn dim(&self) -> usize {
        1
    }

    fn value(&self, x: &[f64]) -> f64 {
        let t = x[0];
        self.heights[0] * t.cos()
            + self.heights[1] * (2.0 * t).cos()
            + self.heights[2] * (3.0 * t).cos()
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        out[0] = self.dv(x[0]);
    }

    fn label(&self) -> &str {
        "torsion-ring"
    }

    fn lipschitz_bound(&self) -> Option<f64> {
        Some(self.heights[0].abs() + 4.0 * self.heights[1].abs() + 9.0 * self.heights[2].abs())
    }
}

/// How the drift error is injected.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PerturbationMode {
    /// A constant vector of norm exactly `eps_bar`.
    ConstantShift,
    /// A smooth bounded field: component `i` is
    /// `eps_bar/√d · sin(ω·x + φ_i)`, so the sup-norm is at most `eps_bar`.
    SmoothRandom { frequency: f64, phase_seed: u64 },
}

/// A base provider plus a perturbation with a declared sup-norm bound,
/// emulating the model error `g = ∇V + ε`.
pub struct PerturbedDrift {
    base: Arc<dyn DriftProvider>,
    eps_bar: f64,
    mode: PerturbationMode,
    label: String,
}

pub fn perturb(
    base: Arc<dyn DriftProvider>,
    eps_bar: f64,
    mode: PerturbationMode,
) -> Result<PerturbedDrift> {
    if !(eps_bar >= 0.0) {
        return Err(Error::domain(format!(
            "eps_bar must be nonnegative, got {eps_bar}"
        )));
    }
    let label = format!("{}+eps", base.label());
    Ok(PerturbedDrift {
        base,
        eps_bar,
        mode,
        label,
    })
}

impl PerturbedDrift {
    pub fn eps_bar(&self) -> f64 {
        self.eps_bar
    }

    /// The injected perturbation alone.
    pub fn perturbation(&self, x: &[f64], out: &mut [f64]) {
        let d = x.len();
        match self.mode {
            PerturbationMode::ConstantShift => {
                let per_coord = self.eps_bar / (d as f64).sqrt();
                for o in out.iter_mut() {
                    *o = per_coord;
                }
            }
            PerturbationMode::SmoothRandom {
                frequency,
                phase_seed,
            } => {
                let amp = self.eps_bar / (d as f64).sqrt();
                let dot: f64 = x.iter().sum::<f64>() * frequency;
                for (i, o) in out.iter_mut().enumerate() {
                    // Deterministic per-component phase from the seed.
                    let phase = ((phase_seed
                        .wrapping_mul(0x9E3779B97F4A7C15)
                        .wrapping_add(i as u64)
                        % 62831853) as f64)
                        * 1e-7;
                    *o = amp * (dot + phase).sin();
                }
            }
        }
    }
}

impl DriftProvider for PerturbedDrift {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        // The perturbation is applied to the drift, not the energy; the
        // value is reported from the base surface.
        self.base.value(x)
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        self.base.gradient(x, out);
        let mut eps = vec![0.0; x.len()];
        self.perturbation(x, &mut eps);
        for (o, e) in out.iter_mut().zip(&eps) {
            *o += e;
        }
    }

    fn label(&self) -> &str {
        &self.label
    }

    fn lipschitz_bound(&self) -> Option<f64> {
        match self.mode {
            PerturbationMode::ConstantShift => self.base.lipschitz_bound(),
            PerturbationMode::SmoothRandom { frequency, .. } => self
                .base
                .lipschitz_bound()
                .map(|l| l + self.eps_bar * frequency),
        }
    }
}

/// Central finite-difference gradient, the module's own oracle.
pub fn fd_gradient(p: &dyn DriftProvider, x: &[f64], out: &mut [f64]) {
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let h = crate::tol::FD_STEP_SCALE * x[i].abs().max(1.0);
        probe[i] = x[i] + h;
        let vp = p.value(&probe);
        probe[i] = x[i] - h;
        let vm = p.value(&probe);
        probe[i] = x[i];
        out[i] = (vp - vm) / (2.0 * h);
    }
}

/// Quadrature of `w(θ)·e^{−βV(θ)}` over `[-π, π)` by Simpson's rule.
pub fn circle_quadrature(
    p: &dyn DriftProvider,
    beta: f64,
    n: usize,
    w: impl Fn(f64) -> f64,
) -> f64 {
    let n = if n.is_multiple_of(2) { n } else { n + 1 };
    let a = -std::f64::consts::PI;
    let h = 2.0 * std::f64::consts::PI / n as f64;
    let f = |t: f64| w(t) * (-beta * p.value(&[t])).exp();
    let mut acc = f(a) + f(a + 2.0 * std::f64::consts::PI);
    for i in 1..n {
        let t = a + h * i as f64;
        acc += if i % 2 == 1 { 4.0 * f(t) } else { 2.0 * f(t) };
    }
    acc * h / 3.0
}

/// Quadrature of `w(x)·e^{−βV(x)}` over `[lo, hi]` by Simpson's rule, for
/// one-dimensional providers on the line.
pub fn line_quadrature(
    p: &dyn DriftProvider,
    beta: f64,
    lo: f64,
    hi: f64,
    n: usize,
    w: impl Fn(f64) -> f64,
) -> f64 {
    let n = if n.is_multiple_of(2) { n } else { n + 1 };
    let h = (hi - lo) / n as f64;
    let f = |x: f64| w(x) * (-beta * p.value(&[x])).exp();
    let mut acc = f(lo) + f(hi);
    for i in 1..n {
        let x = lo + h * i as f64;
        acc += if i % 2 == 1 { 4.0 * f(x) } else { 2.0 * f(x) };
    }
    acc * h / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tol;
    use rand::{Rng, SeedableRng};

    fn fd_check(p: &dyn DriftProvider, probes: usize, seed: u64) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let d = p.dim();
        let mut exact = vec![0.0; d];
        let mut approx = vec![0.0; d];
        for _ in 0..probes {
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            p.gradient(&x, &mut exact);
            fd_gradient(p, &x, &mut approx);
            for i in 0..d {
                let scale = exact[i].abs().max(1.0);
                assert!(
                    (exact[i] - approx[i]).abs() <= tol::FD_GRADIENT_REL * scale,
                    "{}: fd mismatch at {x:?}: {} vs {}",
                    p.label(),
                    exact[i],
                    approx[i]
                );
            }
        }
    }

    #[test]
    fn all_providers_pass_fd_oracle() {
        fd_check(&make_quadratic(1.3, vec![0.2, -0.4, 1.0]).unwrap(), 100, 1);
        fd_check(&make_double_well(1.0, 1.0).unwrap(), 100, 2);
        fd_check(&make_torsion_ring([0.4, 0.2, 1.0]).unwrap(), 100, 3);
        let base: Arc<dyn DriftProvider> = Arc::new(make_quadratic(1.0, vec![0.0; 2]).unwrap());
        fd_check(
            &perturb(base, 0.0, PerturbationMode::ConstantShift).unwrap(),
            50,
            4,
        );
    }

    #[test]
    fn quadratic_examples() {
        let q = make_quadratic(1.0, vec![0.0]).unwrap();
        assert_eq!(q.value(&[0.0]), 0.0);
        assert_eq!(q.gradient_vec(&[0.0]), vec![0.0]);
        assert_eq!(q.value(&[2.0]), 2.0);
        assert_eq!(q.gradient_vec(&[2.0]), vec![2.0]);
        assert!(make_quadratic(0.0, vec![0.0]).is_err());
    }

    #[test]
    fn double_well_examples() {
        let w = make_double_well(2.0, 1.5).unwrap();
        assert_eq!(w.value(&[1.5]), 0.0);
        assert_eq!(w.value(&[-1.5]), 0.0);
        assert_eq!(w.gradient_vec(&[1.5]), vec![0.0]);
        assert_eq!(w.value(&[0.0]), 2.0 * 1.5f64.powi(4));
        assert_eq!(w.gradient_vec(&[0.0]), vec![0.0]);
        assert!(make_double_well(-1.0, 1.0).is_err());
    }

    #[test]
    fn torsion_ring_is_periodic_with_three_wells() {
        let r = make_torsion_ring([0.4, 0.2, 1.0]).unwrap();
        for i in 0..64 {
            let t = -3.0 + 6.0 * i as f64 / 63.0;
            let two_pi = 2.0 * std::f64::consts::PI;
            assert!((r.value(&[t]) - r.value(&[t + two_pi])).abs() <= tol::PERIODIC_ABS);
        }
        let minima = r.minima();
        assert_eq!(minima.len(), 3, "minima: {minima:?}");
        // Wells near ±60° and 180°.
        let deg: Vec<f64> = minima.iter().map(|t| t.to_degrees()).collect();
        assert!(deg.iter().any(|d| (d + 60.0).abs() < 25.0), "{deg:?}");
        assert!(deg.iter().any(|d| (d - 60.0).abs() < 25.0), "{deg:?}");
        assert!(deg.iter().any(|d| d.abs() > 155.0), "{deg:?}");
        let mut g = [0.0];
        for t in &minima {
            r.gradient(&[*t], &mut g);
            assert!(g[0].abs() < 1e-10, "gradient {g:?} at minimum {t}");
        }
    }

    #[test]
    fn flat_ring_is_uniform() {
        let r = make_torsion_ring([0.0, 0.0, 0.0]).unwrap();
        let z = circle_quadrature(&r, 1.0, 4096, |_| 1.0);
        assert!((z - 2.0 * std::f64::consts::PI).abs() < 1e-10);
    }

    #[test]
    fn perturbation_examples() {
        let base: Arc<dyn DriftProvider> = Arc::new(make_quadratic(1.0, vec![0.0]).unwrap());
        let p0 = perturb(base.clone(), 0.0, PerturbationMode::ConstantShift).unwrap();
        for x in [-1.0, 0.0, 2.5] {
            assert_eq!(p0.gradient_vec(&[x]), base.gradient_vec(&[x]));
        }
        let p = perturb(base.clone(), 0.1, PerturbationMode::ConstantShift).unwrap();
        for x in [-1.0, 0.0, 2.5] {
            let diff = p.gradient_vec(&[x])[0] - base.gradient_vec(&[x])[0];
            assert!((diff - 0.1).abs() < 1e-15);
        }
    }

    #[test]
    fn perturbation_supnorm_bounded() {
        let base: Arc<dyn DriftProvider> =
            Arc::new(make_quadratic(1.0, vec![0.0, 0.0, 0.0]).unwrap());
        let p = perturb(
            base,
            0.25,
            PerturbationMode::SmoothRandom {
                frequency: 2.0,
                phase_seed: 11,
            },
        )
        .unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut eps = vec![0.0; 3];
        let mut sup: f64 = 0.0;
        for _ in 0..2000 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            p.perturbation(&x, &mut eps);
            sup = sup.max(eps.iter().map(|e| e * e).sum::<f64>().sqrt());
        }
        assert!(sup <= 0.25 * (1.0 + tol::PERTURBATION_SLACK), "sup {sup}");
    }

    #[test]
    fn double_well_occupancies_symmetric() {
        let w = make_double_well(1.0, 1.0).unwrap();
        let left = line_quadrature(&w, 1.0, -6.0, 0.0, 20000, |_| 1.0);
        let right = line_quadrature(&w, 1.0, 0.0, 6.0, 20000, |_| 1.0);
        assert!(((left / (left + right)) - 0.5).abs() < 1e-12);
    }
}
