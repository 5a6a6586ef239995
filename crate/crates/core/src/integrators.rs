//! Stepping kernels.
//!
//! Drift-scale conventions: kernels that mirror the physical Langevin form
//! take the *force* gradient `∇V` (drift `−∇V·Δt`), while the harmonic
//! kernel and the Heun adapter take a *score-scale* proxy `g ≈ β∇V`
//! (drift `−D·Δt·g`). In friction units `β·D = 1` the two scales coincide
//! exactly when `D = 1`.
//!
//! RNG stage budget per application: Euler–Maruyama, harmonic, tempered,
//! underdamped, and Heun consume one stage each (Heun reuses the same
//! Gaussian in predictor and corrector); the Strang composition consumes
//! three.

use std::sync::Arc;

use crate::potentials::DriftProvider;
use crate::rng::RngStream;
use crate::units::{stiffness_for_step, Units};
use crate::{Error, Result};

/// A drift evaluation: writes the drift vector at `x` into `out`.
pub trait Drift: Sync {
    fn eval(&self, x: &[f64], out: &mut [f64]);
}

impl<F: Fn(&[f64], &mut [f64]) + Sync> Drift for F {
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        self(x, out)
    }
}

/// Force-scale drift of a provider (`∇V`).
pub struct ForceOf<'a>(pub &'a dyn DriftProvider);

impl Drift for ForceOf<'_> {
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        self.0.gradient(x, out);
    }
}

/// Score-scale drift of a provider (`β·∇V`).
pub struct ScoreOf<'a>(pub &'a dyn DriftProvider, pub Units);

impl Drift for ScoreOf<'_> {
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        self.0.gradient(x, out);
        let beta = self.1.beta();
        for o in out.iter_mut() {
            *o *= beta;
        }
    }
}

fn check_finite(drift: &[f64], stream: RngStream) -> Result<()> {
    if drift.iter().all(|d| d.is_finite()) {
        Ok(())
    } else {
        let site = stream.site();
        Err(Error::NonFiniteDrift {
            slice: site.slice,
            replica: site.replica,
            stage: site.stage,
        })
    }
}

/// Deterministic part of [`em_step`] with the noise vector supplied.
pub fn em_step_with_noise(
    x: &[f64],
    dt: f64,
    force: &dyn Drift,
    units: Units,
    xi: &[f64],
) -> Vec<f64> {
    let sigma = (2.0 * units.diffusion() * dt).sqrt();
    let mut g = vec![0.0; x.len()];
    force.eval(x, &mut g);
    x.iter()
        .zip(&g)
        .zip(xi)
        .map(|((&xi_, &gi), &n)| xi_ - dt * gi + sigma * n)
        .collect()
}

/// One overdamped Euler–Maruyama step:
/// `x' = x − ∇V(x)·Δt + √(2DΔt)·ξ`. Consumes one RNG stage.
pub fn em_step(
    x: &[f64],
    dt: f64,
    force: &dyn Drift,
    units: Units,
    stream: RngStream,
) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(Error::domain(format!(
            "step size must be positive, got {dt}"
        )));
    }
    let mut g = vec![0.0; x.len()];
    force.eval(x, &mut g);
    check_finite(&g, stream)?;
    let sigma = (2.0 * units.diffusion() * dt).sqrt();
    let xi = stream.gaussian(x.len());
    Ok(x.iter()
        .zip(&g)
        .zip(&xi)
        .map(|((&xi_, &gi), &n)| xi_ - dt * gi + sigma * n)
        .collect())
}

/// Mean of the harmonic (quadratic-glue) kernel: `m = x − D·Δt·g(x)` for a
/// score-scale proxy `g`.
pub fn harmonic_mean(x: &[f64], dt: f64, score: &dyn Drift, units: Units) -> Vec<f64> {
    let ddt = units.diffusion() * dt;
    let mut g = vec![0.0; x.len()];
    score.eval(x, &mut g);
    x.iter().zip(&g).map(|(&xi, &gi)| xi - ddt * gi).collect()
}

/// One step of the harmonic-kernel form: a draw from `N(m, 2DΔt·I)` with
/// `m = x − D·Δt·g(x)`. With `g = β∇V` this is exactly the EM kernel;
/// at `D = 1` the two are bit-identical given the same RNG site.
pub fn harmonic_kernel_step(
    x: &[f64],
    dt: f64,
    score: &dyn Drift,
    units: Units,
    stream: RngStream,
) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(Error::domain(format!(
            "step size must be positive, got {dt}"
        )));
    }
    let mut g = vec![0.0; x.len()];
    score.eval(x, &mut g);
    check_finite(&g, stream)?;
    let ddt = units.diffusion() * dt;
    let sigma = (2.0 * units.diffusion() * dt).sqrt();
    let xi = stream.gaussian(x.len());
    Ok(x.iter()
        .zip(&g)
        .zip(&xi)
        .map(|((&xi_, &gi), &n)| xi_ - ddt * gi + sigma * n)
        .collect())
}

/// Stochastic Heun (predictor/trapezoid-corrector) step with the split
/// glued drift `Ψ(a, b) = g(b) + k·(b − a)` entering as `−D·Δt·Ψ`, where
/// `g` is the score-scale proxy (`≈ β∇V`), `k = 1/(2DΔt)`, and the same
/// Gaussian is reused in both stages.
///
/// The spring extension is measured against the previous slice and held
/// fixed during the step, so along a self-consistent chain
/// (`x_prev = x`, the `X_{-1} = X_0` convention) the scheme reduces to
/// the classical stochastic Heun method for the bare drift, which is
/// weak order 2 for additive noise. Letting the corrector re-measure the
/// spring at the predicted point would inject an O(√Δt) noise term into
/// the drift and destroy both the trapezoid limit and the 2DΔt one-step
/// covariance.
pub fn heun_step(
    x_prev: &[f64],
    x: &[f64],
    dt: f64,
    score: &dyn Drift,
    units: Units,
    stream: RngStream,
) -> Result<Vec<f64>> {
    let xi = stream.gaussian(x.len());
    heun_step_with_noise(x_prev, x, dt, score, units, &xi, stream)
}

/// Deterministic core of [`heun_step`] with the noise supplied.
pub fn heun_step_with_noise(
    x_prev: &[f64],
    x: &[f64],
    dt: f64,
    score: &dyn Drift,
    units: Units,
    xi: &[f64],
    stream: RngStream,
) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(Error::domain(format!(
            "step size must be positive, got {dt}"
        )));
    }
    if x_prev.len() != x.len() {
        return Err(Error::Shape("x_prev and x differ in length".into()));
    }
    let d = units.diffusion();
    let ddt = d * dt;
    let sigma = (2.0 * d * dt).sqrt();
    let k = stiffness_for_step(dt, units)?;

    let mut s1 = vec![0.0; x.len()];
    score.eval(x, &mut s1);
    check_finite(&s1, stream)?;
    let glue: Vec<f64> = x.iter().zip(x_prev).map(|(&b, &a)| k * (b - a)).collect();
    let psi1: Vec<f64> = s1.iter().zip(&glue).map(|(&s, &g)| s + g).collect();

    // Predictor (Euler).
    let pred: Vec<f64> = x
        .iter()
        .zip(&psi1)
        .zip(xi)
        .map(|((&xi_, &p), &n)| xi_ - ddt * p + sigma * n)
        .collect();

    // Corrector (trapezoid), same Gaussian.
    let mut s2 = vec![0.0; x.len()];
    score.eval(&pred, &mut s2);
    check_finite(&s2, stream)?;
    Ok(x.iter()
        .enumerate()
        .map(|(i, &xi_)| {
            let psi2 = s2[i] + glue[i];
            xi_ - 0.5 * ddt * (psi1[i] + psi2) + sigma * xi[i]
        })
        .collect())
}

/// Position/velocity pair for underdamped dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct UnderdampedState {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub gamma: f64,
}

impl UnderdampedState {
    pub fn new(x: Vec<f64>, v: Vec<f64>, gamma: f64) -> Result<Self> {
        if x.len() != v.len() {
            return Err(Error::Shape(
                "position and velocity differ in length".into(),
            ));
        }
        if !(gamma > 0.0) {
            return Err(Error::domain(format!(
                "friction must be positive, got {gamma}"
            )));
        }
        Ok(UnderdampedState { x, v, gamma })
    }
}

/// Deterministic part of [`underdamped_em_step`] with the noise supplied.
pub fn underdamped_em_step_with_noise(
    s: &UnderdampedState,
    dt: f64,
    force: &dyn Drift,
    units: Units,
    xi: &[f64],
) -> UnderdampedState {
    let mut g = vec![0.0; s.x.len()];
    force.eval(&s.x, &mut g);
    let sigma = (2.0 * s.gamma * units.diffusion() * dt).sqrt();
    let x: Vec<f64> = s.x.iter().zip(&s.v).map(|(&x, &v)| x + v * dt).collect();
    let v: Vec<f64> =
        s.v.iter()
            .zip(&g)
            .zip(xi)
            .map(|((&v, &gi), &n)| v - s.gamma * v * dt - gi * dt + sigma * n)
            .collect();
    UnderdampedState {
        x,
        v,
        gamma: s.gamma,
    }
}

/// One underdamped Euler–Maruyama step:
/// `x' = x + v·Δt`, `v' = v − γv·Δt − ∇V(x)·Δt + √(2γDΔt)·ξ`.
/// Consumes one RNG stage.
pub fn underdamped_em_step(
    s: &UnderdampedState,
    dt: f64,
    force: &dyn Drift,
    units: Units,
    stream: RngStream,
) -> Result<UnderdampedState> {
    if !(dt > 0.0) {
        return Err(Error::domain(format!(
            "step size must be positive, got {dt}"
        )));
    }
    let mut g = vec![0.0; s.x.len()];
    force.eval(&s.x, &mut g);
    check_finite(&g, stream)?;
    let xi = stream.gaussian(s.x.len());
    Ok(underdamped_em_step_with_noise(s, dt, force, units, &xi))
}

/// Integrator used inside each Strang substep.
///
/// Plain Euler–Maruyama substeps leave an O(Δt²) one-step defect in the
/// drift composition (each EM substep only tracks its sub-flow to first
/// order), which caps the composed scheme at weak order 1. Heun substeps
/// restore the O(Δt³) local accuracy the symmetric composition needs, so
/// `Heun` is the default; `Em` is kept because its substep transition
/// densities are Gaussian in closed form, which the Metropolis wrapper
/// needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubstepScheme {
    Em,
    Heun,
}

/// One substep with the noise supplied; used by both the stream-driven
/// substep and the coupled-noise diagnostic harness.
pub fn substep_with_noise(
    y: &[f64],
    tau: f64,
    force: &dyn Drift,
    units: Units,
    scheme: SubstepScheme,
    xi: &[f64],
) -> Vec<f64> {
    if tau == 0.0 {
        return y.to_vec();
    }
    match scheme {
        SubstepScheme::Em => em_step_with_noise(y, tau, force, units, xi),
        SubstepScheme::Heun => {
            // Bare stochastic Heun for the substep drift: predictor plus
            // trapezoid corrector sharing one Gaussian.
            let sigma = (2.0 * units.diffusion() * tau).sqrt();
            let mut f1 = vec![0.0; y.len()];
            force.eval(y, &mut f1);
            let pred: Vec<f64> = y
                .iter()
                .zip(&f1)
                .zip(xi)
                .map(|((&yi, &fi), &n)| yi - tau * fi + sigma * n)
                .collect();
            let mut f2 = vec![0.0; y.len()];
            force.eval(&pred, &mut f2);
            y.iter()
                .enumerate()
                .map(|(i, &yi)| yi - 0.5 * tau * (f1[i] + f2[i]) + sigma * xi[i])
                .collect()
        }
    }
}

fn substep(
    y: &[f64],
    tau: f64,
    force: &dyn Drift,
    units: Units,
    scheme: SubstepScheme,
    stream: RngStream,
) -> Result<Vec<f64>> {
    if tau == 0.0 {
        return Ok(y.to_vec());
    }
    let mut probe = vec![0.0; y.len()];
    force.eval(y, &mut probe);
    check_finite(&probe, stream)?;
    let xi = stream.gaussian(y.len());
    Ok(substep_with_noise(y, tau, force, units, scheme, &xi))
}

/// [`strang_step`] with the three substep noises supplied.
#[allow(clippy::too_many_arguments)]
pub fn strang_step_with_noise(
    x: &[f64],
    dt: f64,
    split: (f64, f64),
    vertical: &dyn Drift,
    horizontal: &dyn Drift,
    units: Units,
    noises: [&[f64]; 3],
    scheme: SubstepScheme,
) -> Vec<f64> {
    let (av, ah) = split;
    let tau_h = 0.5 * ah * dt;
    let tau_v = av * dt;
    let y = substep_with_noise(x, tau_h, horizontal, units, scheme, noises[0]);
    let y = substep_with_noise(&y, tau_v, vertical, units, scheme, noises[1]);
    substep_with_noise(&y, tau_h, horizontal, units, scheme, noises[2])
}

/// Two-direction Strang macro-step: horizontal half, vertical full,
/// horizontal half, with independent Gaussians at the three substeps.
///
/// Durations are `α_h·Δt/2`, `α_v·Δt`, `α_h·Δt/2`, so the pure-noise
/// covariance fuses to exactly `2DΔt·I`. The composition integrates the
/// weighted-sum SDE with drift `α_v·f_v + α_h·f_h`. Both drifts are
/// force-scale. Consumes three RNG stages.
#[allow(clippy::too_many_arguments)]
pub fn strang_step(
    x: &[f64],
    dt: f64,
    split: (f64, f64),
    vertical: &dyn Drift,
    horizontal: &dyn Drift,
    units: Units,
    streams: [RngStream; 3],
    scheme: SubstepScheme,
) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(Error::domain(format!(
            "step size must be positive, got {dt}"
        )));
    }
    let (av, ah) = split;
    if !(av >= 0.0 && ah >= 0.0) || (av + ah - 1.0).abs() > crate::tol::EXACT_REL {
        return Err(Error::domain(format!(
            "split fractions must be nonnegative and sum to 1, got ({av}, {ah})"
        )));
    }
    let tau_h = 0.5 * ah * dt;
    let tau_v = av * dt;
    let y = substep(x, tau_h, horizontal, units, scheme, streams[0])?;
    let y = substep(&y, tau_v, vertical, units, scheme, streams[1])?;
    substep(&y, tau_h, horizontal, units, scheme, streams[2])
}

/// Kernel kinds understood by the batch and lattice drivers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    EmOverdamped,
    Harmonic,
    Heun,
    StrangComposed,
}

/// A configured position-space stepping kernel: kind, drift provider, and
/// units, plus the split and substep scheme for composed kinds.
#[derive(Clone)]
pub struct StepKernel {
    pub kind: KernelKind,
    pub drift: Arc<dyn DriftProvider>,
    pub units: Units,
    /// Second drift for the Strang composition; `None` means pure noise in
    /// the horizontal direction.
    pub horizontal: Option<Arc<dyn DriftProvider>>,
    pub split: (f64, f64),
    pub substep: SubstepScheme,
}

impl StepKernel {
    pub fn new(kind: KernelKind, drift: Arc<dyn DriftProvider>, units: Units) -> Self {
        StepKernel {
            kind,
            drift,
            units,
            horizontal: None,
            split: (0.5, 0.5),
            substep: SubstepScheme::Heun,
        }
    }

    pub fn with_horizontal(
        mut self,
        horizontal: Arc<dyn DriftProvider>,
        split: (f64, f64),
    ) -> Self {
        self.horizontal = Some(horizontal);
        self.split = split;
        self
    }

    pub fn with_substep(mut self, scheme: SubstepScheme) -> Self {
        self.substep = scheme;
        self
    }

    /// RNG stages one application consumes.
    pub fn stages(&self) -> u64 {
        match self.kind {
            KernelKind::StrangComposed => 3,
            _ => 1,
        }
    }

    /// Apply the kernel. `x_prev` feeds the Heun spring; pass `x` itself
    /// for a plain sequential chain.
    pub fn apply(&self, x_prev: &[f64], x: &[f64], dt: f64, stream: RngStream) -> Result<Vec<f64>> {
        let p = self.drift.as_ref();
        match self.kind {
            KernelKind::EmOverdamped => em_step(x, dt, &ForceOf(p), self.units, stream),
            KernelKind::Harmonic => {
                harmonic_kernel_step(x, dt, &ScoreOf(p, self.units), self.units, stream)
            }
            KernelKind::Heun => {
                heun_step(x_prev, x, dt, &ScoreOf(p, self.units), self.units, stream)
            }
            KernelKind::StrangComposed => {
                let streams = [
                    stream,
                    stream.with_stage_offset(1),
                    stream.with_stage_offset(2),
                ];
                let zero = |_: &[f64], out: &mut [f64]| out.fill(0.0);
                match &self.horizontal {
                    Some(h) => strang_step(
                        x,
                        dt,
                        self.split,
                        &ForceOf(p),
                        &ForceOf(h.as_ref()),
                        self.units,
                        streams,
                        self.substep,
                    ),
                    None => strang_step(
                        x,
                        dt,
                        self.split,
                        &ForceOf(p),
                        &zero,
                        self.units,
                        streams,
                        self.substep,
                    ),
                }
            }
        }
    }
}

impl RngStream {
    fn with_stage_offset(self, offset: u64) -> RngStream {
        RngStream::new(self.master_seed(), self.site().stage_offset(offset))
    }
}
