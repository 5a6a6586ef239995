//! Harmonic couplings between trajectory slices.
//!
//! Three variants: the adjacent-batch spring (stiffness tied to the step
//! size), the Gibbs-anchored spring (auxiliary anchor resampled each step),
//! and the radial `r_min` adapter that couples a whole stack of frames
//! through preferred inter-frame distances. Variance tempering rescales
//! the per-step diffusion while leaving the drift untouched.

use crate::integrators::Drift;
use crate::observables;
use crate::rng::RngStream;
use crate::units::{stiffness_for_step, Units};
use crate::{Error, Result};

/// How the radial adapter turns a frame stack into scalar distances.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceMode {
    /// One scalar per frame: the RMS distance between a frame and its
    /// successor, `d_t = rmsd(X̂_t, X̂_{t+1}) + eps`. The accumulated stack
    /// follows the per-frame force recipe and is antisymmetric by
    /// construction, but it is not the exact gradient of the pairwise
    /// energy.
    PerFrame,
    /// One scalar per coupled pair, `d_{t,s} = rmsd(X̂_t, X̂_{t+s}) + eps`;
    /// the returned stack is exactly `−∇U` of [`radial_glue_energy`].
    Pairwise,
}

/// Which glue variant a configured coupling uses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GlueKind {
    /// Spring toward the adjacent slice with `k = k(Δt)` unless overridden.
    Adjacent { k_override: Option<f64> },
    /// Gibbs anchor with user spring `k_a`.
    Anchored { k_a: f64 },
    /// Radial preferred-distance adapter.
    RadialRmin,
}

/// Full glue configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct GlueSpec {
    pub kind: GlueKind,
    /// Stiffness for the radial adapter.
    pub k: f64,
    /// Preferred distance (radial only).
    pub r_min: f64,
    /// Number of forward temporal neighbors coupled to each frame.
    pub neighbors: usize,
    /// Geometric decay of the neighbor weights, `α_s = ρ^(s−1)`.
    pub rho: f64,
    /// Numerical stabilizer added to each distance.
    pub eps: f64,
    pub align: bool,
    pub distance_mode: DistanceMode,
}

impl GlueSpec {
    pub fn radial(k: f64, r_min: f64, neighbors: usize, rho: f64) -> Result<Self> {
        let spec = GlueSpec {
            kind: GlueKind::RadialRmin,
            k,
            r_min,
            neighbors,
            rho,
            eps: crate::tol::RADIAL_GLUE_EPS,
            align: true,
            distance_mode: DistanceMode::PerFrame,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if let GlueKind::RadialRmin = self.kind {
            if !(self.r_min > 0.0) {
                return Err(Error::domain(format!(
                    "r_min must be positive, got {}",
                    self.r_min
                )));
            }
            if !(self.eps > 0.0) {
                return Err(Error::domain(format!(
                    "eps must be positive, got {}",
                    self.eps
                )));
            }
        }
        if !(self.k > 0.0) {
            return Err(Error::domain(format!(
                "glue stiffness must be positive, got {}",
                self.k
            )));
        }
        if self.neighbors == 0 {
            return Err(Error::domain("neighbor count must be at least 1"));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::domain(format!(
                "decay rho must lie in (0,1), got {}",
                self.rho
            )));
        }
        Ok(())
    }
}

/// Adjacent-batch glue step:
/// `x' = x − (g(x) + k(Δt)·(x − x_prev))·Δt + √(2DΔt)·ξ`,
/// with the convention `x_prev = x` at the first slice. The spring drift
/// pulls toward the neighbor with strength `k(Δt)·Δt = 1/(2D)`.
/// `g` is force-scale. Consumes one RNG stage.
pub fn adjacent_glue_step(
    x_prev: &[f64],
    x: &[f64],
    dt: f64,
    g: &dyn Drift,
    units: Units,
    stream: RngStream,
) -> Result<Vec<f64>> {
    let xi = stream.gaussian(x.len());
    adjacent_glue_step_with_noise(x_prev, x, dt, g, units, &xi)
}

/// Deterministic core of [`adjacent_glue_step`] with the noise supplied.
pub fn adjacent_glue_step_with_noise(
    x_prev: &[f64],
    x: &[f64],
    dt: f64,
    g: &dyn Drift,
    units: Units,
    xi: &[f64],
) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(Error::domain(format!(
            "step size must be positive, got {dt}"
        )));
    }
    if x_prev.len() != x.len() {
        return Err(Error::Shape("x_prev and x differ in length".into()));
    }
    let k = stiffness_for_step(dt, units)?;
    let sigma = (2.0 * units.diffusion() * dt).sqrt();
    let mut drift = vec![0.0; x.len()];
    g.eval(x, &mut drift);
    Ok(x.iter()
        .enumerate()
        .map(|(i, &xi_)| xi_ - (drift[i] + k * (xi_ - x_prev[i])) * dt + sigma * xi[i])
        .collect())
}

/// Gibbs-anchored glue step: draws the anchor `A ~ N(x, (β·k_a)⁻¹·I)` and
/// then `x' = x − (g(x) + k_a·(x − A))·Δt + √(2DΔt)·ξ`.
/// Consumes two RNG stages (anchor, then step noise).
pub fn anchored_glue_step(
    x: &[f64],
    dt: f64,
    g: &dyn Drift,
    k_a: f64,
    units: Units,
    anchor_stream: RngStream,
    noise_stream: RngStream,
) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(Error::domain(format!(
            "step size must be positive, got {dt}"
        )));
    }
    if !(k_a > 0.0) {
        return Err(Error::domain(format!(
            "anchor spring must be positive, got {k_a}"
        )));
    }
    let anchor_sd = (1.0 / (units.beta() * k_a)).sqrt();
    let a: Vec<f64> = x
        .iter()
        .zip(anchor_stream.gaussian(x.len()))
        .map(|(&xi_, n)| xi_ + anchor_sd * n)
        .collect();
    let sigma = (2.0 * units.diffusion() * dt).sqrt();
    let mut drift = vec![0.0; x.len()];
    g.eval(x, &mut drift);
    let xi = noise_stream.gaussian(x.len());
    Ok(x.iter()
        .enumerate()
        .map(|(i, &xi_)| xi_ - (drift[i] + k_a * (xi_ - a[i])) * dt + sigma * xi[i])
        .collect())
}

/// The glued score `g(x) + k·(x − a)`: the exact gradient of
/// `V(x) + (k/2)·‖x − a‖²` with `∇V` replaced by the proxy.
pub fn glued_score(x: &[f64], a: &[f64], k: f64, g: &dyn Drift) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    g.eval(x, &mut out);
    for (i, o) in out.iter_mut().enumerate() {
        *o += k * (x[i] - a[i]);
    }
    out
}

/// Variance-tempered kernel step: the mean is the harmonic-kernel mean
/// `m = x − D·Δt·g(x)` (score-scale `g`, unchanged by tempering) and the
/// covariance is `2DΔt·υ·I`, i.e. effective stiffness `k(Δt)/υ`.
/// At `υ = 1` this is bit-identical to the harmonic kernel step.
pub fn tempered_kernel_step(
    x: &[f64],
    dt: f64,
    upsilon: f64,
    g: &dyn Drift,
    units: Units,
    stream: RngStream,
) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(Error::domain(format!(
            "step size must be positive, got {dt}"
        )));
    }
    if !(upsilon > 0.0) {
        return Err(Error::domain(format!(
            "tempering multiplier must be positive, got {upsilon}"
        )));
    }
    let mut gv = vec![0.0; x.len()];
    g.eval(x, &mut gv);
    if !gv.iter().all(|v| v.is_finite()) {
        let site = stream.site();
        return Err(Error::NonFiniteDrift {
            slice: site.slice,
            replica: site.replica,
            stage: site.stage,
        });
    }
    let ddt = units.diffusion() * dt;
    let sigma = (2.0 * units.diffusion() * dt * upsilon).sqrt();
    let xi = stream.gaussian(x.len());
    Ok(x.iter()
        .zip(&gv)
        .zip(&xi)
        .map(|((&xi_, &gi), &n)| xi_ - ddt * gi + sigma * n)
        .collect())
}

/// Effective temperature of a tempered step: `T_n = υ_n · T`.
pub fn effective_temperature(units: Units, upsilon: f64) -> f64 {
    upsilon * units.temperature()
}

/// A time-ordered stack of frames, `frames[t]` holding `n_atoms` points.
pub type FrameStack = Vec<Vec<[f64; 3]>>;

fn centered_and_aligned(stack: &FrameStack, align: bool) -> FrameStack {
    let centered: FrameStack = stack.iter().map(|f| observables::center_frame(f)).collect();
    if !align {
        return centered;
    }
    let reference = centered[0].clone();
    centered
        .iter()
        .enumerate()
        .map(|(t, f)| {
            if t == 0 {
                f.clone()
            } else {
                observables::kabsch_align(&reference, f)
                    .map(|a| a.aligned)
                    .unwrap_or_else(|_| f.clone())
            }
        })
        .collect()
}

fn frame_rmsd(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    let n = a.len() as f64;
    let ss: f64 = a
        .iter()
        .zip(b)
        .map(|(p, q)| (0..3).map(|k| (p[k] - q[k]) * (p[k] - q[k])).sum::<f64>())
        .sum();
    (ss / n).sqrt()
}

/// Radial glue energy
/// `U(X) = (k/2)·Σ_t Σ_s ρ^(s−1)·(d_{t,s} − r_min)²`
/// over the centered (optionally Kabsch-aligned) stack, with
/// `d_{t,s} = rmsd(X̂_t, X̂_{t+s}) + eps`.
pub fn radial_glue_energy(stack: &FrameStack, spec: &GlueSpec, align: bool) -> Result<f64> {
    check_stack(stack, spec)?;
    let frames = centered_and_aligned(stack, align);
    let t_len = frames.len();
    let mut acc = 0.0;
    for t in 0..t_len {
        for s in 1..=spec.neighbors.min(t_len - 1) {
            if t + s >= t_len {
                break;
            }
            let d = frame_rmsd(&frames[t], &frames[t + s]) + spec.eps;
            let w = spec.rho.powi(s as i32 - 1);
            acc += 0.5 * spec.k * w * (d - spec.r_min) * (d - spec.r_min);
        }
    }
    Ok(acc)
}

fn check_stack(stack: &FrameStack, spec: &GlueSpec) -> Result<()> {
    spec.validate()?;
    if stack.len() < 2 {
        return Err(Error::domain("need at least two frames"));
    }
    let n = stack[0].len();
    if n == 0 || stack.iter().any(|f| f.len() != n) {
        return Err(Error::Shape(
            "frames must be nonempty with equal atom counts".into(),
        ));
    }
    Ok(())
}

/// Radial glue forces over a frame stack.
///
/// Per-frame scalars `d_t` produce force scalars `f_t = −k·(d_t − r_min)`;
/// all frames are centered and (optionally) Kabsch-aligned to frame 0; the
/// bidirectional contributions `ρ^(s−1)·f·(X̂_t − X̂_{t+s})/N` are added to
/// slice `t` and subtracted from slice `t+s`, so the whole stack sums to
/// zero. Forces are returned in the aligned coordinates. In
/// [`DistanceMode::Pairwise`] the per-pair direction carries the extra
/// `1/(d−eps)` factor that makes the stack exactly `−∇` of
/// [`radial_glue_energy`].
pub fn radial_glue_forces(stack: &FrameStack, spec: &GlueSpec, align: bool) -> Result<FrameStack> {
    check_stack(stack, spec)?;
    let frames = centered_and_aligned(stack, align);
    let t_len = frames.len();
    let n_atoms = frames[0].len();
    let inv_n = 1.0 / n_atoms as f64;

    // Per-frame scalar distances (successor convention; the final frame
    // reuses the last pair, and its value never feeds a contribution).
    let per_frame_d: Vec<f64> = (0..t_len)
        .map(|t| {
            let pair = if t + 1 < t_len {
                (t, t + 1)
            } else {
                (t - 1, t)
            };
            frame_rmsd(&frames[pair.0], &frames[pair.1]) + spec.eps
        })
        .collect();

    let mut grad: FrameStack = vec![vec![[0.0; 3]; n_atoms]; t_len];
    for s in 1..=spec.neighbors {
        if s >= t_len {
            break;
        }
        let w = spec.rho.powi(s as i32 - 1);
        for t in 0..(t_len - s) {
            let (f_scalar, dir_scale) = match spec.distance_mode {
                DistanceMode::PerFrame => (-spec.k * (per_frame_d[t] - spec.r_min), 1.0),
                DistanceMode::Pairwise => {
                    let d = frame_rmsd(&frames[t], &frames[t + s]) + spec.eps;
                    (-spec.k * (d - spec.r_min), 1.0 / (d - spec.eps))
                }
            };
            let c = w * f_scalar * inv_n * dir_scale;
            for a in 0..n_atoms {
                for k in 0..3 {
                    let diff = frames[t][a][k] - frames[t + s][a][k];
                    grad[t][a][k] += c * diff;
                    grad[t + s][a][k] -= c * diff;
                }
            }
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::{make_quadratic, DriftProvider};
    use crate::rng::SiteId;

    fn stream(stage: u64) -> RngStream {
        RngStream::new(31, SiteId::new(0, 0, stage))
    }

    fn zero(_: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    #[test]
    fn adjacent_reduces_to_em_at_zero_mismatch() {
        let q = make_quadratic(1.0, vec![0.0]).unwrap();
        let u = Units::reduced();
        let g = crate::integrators::ForceOf(&q);
        let a = adjacent_glue_step_with_noise(&[1.0], &[1.0], 0.1, &g, u, &[0.3]).unwrap();
        let b = crate::integrators::em_step_with_noise(&[1.0], 0.1, &g, u, &[0.3]);
        assert_eq!(a, b);
    }

    #[test]
    fn adjacent_pull_strength() {
        // g = 0, D = 1: pull toward the neighbor with strength 1/(2D).
        let u = Units::reduced();
        for dt in [0.01, 0.1, 1.0] {
            let out = adjacent_glue_step_with_noise(&[0.0], &[1.0], dt, &zero, u, &[0.0]).unwrap();
            assert!((out[0] - 0.5).abs() < 1e-15, "dt={dt}: {out:?}");
        }
        let u2 = Units::from_diffusion(2.0).unwrap();
        let out = adjacent_glue_step_with_noise(&[0.0], &[1.0], 0.3, &zero, u2, &[0.0]).unwrap();
        assert!((out[0] - 0.75).abs() < 1e-15, "{out:?}");
    }

    #[test]
    fn glued_score_matches_quadratic_energy_gradient() {
        let q = make_quadratic(0.7, vec![0.0, 0.0]).unwrap();
        let g = crate::integrators::ForceOf(&q);
        let x = [0.4, -0.9];
        let a = [0.1, 0.2];
        let k = 2.0;
        let got = glued_score(&x, &a, k, &g);
        // Finite differences of V(x) + k/2 |x-a|^2.
        let f = |y: &[f64]| {
            q.value(y)
                + 0.5
                    * k
                    * y.iter()
                        .zip(&a)
                        .map(|(p, q)| (p - q) * (p - q))
                        .sum::<f64>()
        };
        for i in 0..2 {
            let h = 1e-6;
            let mut yp = x.to_vec();
            let mut ym = x.to_vec();
            yp[i] += h;
            ym[i] -= h;
            let fd = (f(&yp) - f(&ym)) / (2.0 * h);
            assert!((got[i] - fd).abs() < 1e-8, "{} vs {}", got[i], fd);
        }
        // Trivial cases.
        assert_eq!(glued_score(&x, &x, 5.0, &g), q.gradient_vec(&x));
        let pure = glued_score(
            &[1.0, 0.0],
            &[0.0, 0.0],
            2.0,
            &(zero as fn(&[f64], &mut [f64])),
        );
        assert_eq!(pure, vec![2.0, 0.0]);
    }

    #[test]
    fn anchor_marginal_variance() {
        // beta = 1, k_a = 4 -> anchor variance 1/4 per coordinate.
        let u = Units::reduced();
        let k_a = 4.0;
        let n = 100_000;
        let mut acc = 0.0;
        for i in 0..n {
            let anchor_sd = (1.0 / (u.beta() * k_a)).sqrt();
            let a = stream(i).gaussian(1)[0] * anchor_sd;
            acc += a * a;
        }
        let var = acc / n as f64;
        assert!((var - 0.25).abs() < 0.01 * 0.25 * 4.0, "var {var}");
    }

    #[test]
    fn anchored_near_zero_spring_matches_em() {
        let q = make_quadratic(1.0, vec![0.0]).unwrap();
        let u = Units::reduced();
        let g = crate::integrators::ForceOf(&q);
        let n = 20_000;
        let (mut m1, mut m2, mut v1, mut v2) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            let a =
                anchored_glue_step(&[1.0], 0.05, &g, 1e-12, u, stream(2 * i), stream(2 * i + 1))
                    .unwrap()[0];
            let b = crate::integrators::em_step(&[1.0], 0.05, &g, u, stream(2 * i + 1)).unwrap()[0];
            m1 += a;
            m2 += b;
            v1 += a * a;
            v2 += b * b;
        }
        let n = n as f64;
        let (m1, m2) = (m1 / n, m2 / n);
        let (v1, v2) = (v1 / n - m1 * m1, v2 / n - m2 * m2);
        // Two-sample z-test on means at 4 sigma, and variance ratio close to 1.
        let se = (v1 / n + v2 / n).sqrt();
        assert!((m1 - m2).abs() < 4.0 * se, "means {m1} vs {m2}");
        assert!((v1 / v2 - 1.0).abs() < 0.05, "vars {v1} vs {v2}");
    }

    #[test]
    fn anchored_drift_variance_matches_convolution_oracle() {
        // Marginalizing the anchor adds k_a^2 dt^2 / (beta k_a) variance per
        // coordinate to the one-step displacement.
        let u = Units::reduced();
        let k_a = 2.0;
        let dt = 0.2;
        let n = 200_000;
        let mut acc = 0.0;
        let mut mean = 0.0;
        for i in 0..n {
            let out =
                anchored_glue_step(&[0.0], dt, &zero, k_a, u, stream(2 * i), stream(2 * i + 1))
                    .unwrap()[0];
            mean += out;
            acc += out * out;
        }
        let mean = mean / n as f64;
        let var = acc / n as f64 - mean * mean;
        let expect = 2.0 * u.diffusion() * dt + k_a * k_a * dt * dt / (u.beta() * k_a);
        let se = expect * (2.0 / n as f64).sqrt();
        assert!((var - expect).abs() < 3.0 * se, "var {var} expect {expect}");
    }

    #[test]
    fn tempered_matches_harmonic_at_unit_upsilon() {
        let q = make_quadratic(1.3, vec![0.0, 0.5]).unwrap();
        let u = Units::reduced();
        let s = crate::integrators::ScoreOf(&q, u);
        for i in 0..50 {
            let x = stream(500 + i).gaussian(2);
            let a = tempered_kernel_step(&x, 0.07, 1.0, &s, u, stream(i)).unwrap();
            let b = crate::integrators::harmonic_kernel_step(&x, 0.07, &s, u, stream(i)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn tempered_variance_scales() {
        let u = Units::reduced();
        let dt = 0.1;
        let ups = 3.0;
        let n = 200_000;
        let mut acc = 0.0;
        for i in 0..n {
            let out = tempered_kernel_step(&[0.0], dt, ups, &zero, u, stream(i)).unwrap();
            acc += out[0] * out[0];
        }
        let var = acc / n as f64;
        let expect = 2.0 * dt * ups;
        let se = expect * (2.0 / n as f64).sqrt();
        assert!((var - expect).abs() < 3.0 * se, "var {var} expect {expect}");
    }

    #[test]
    fn effective_temperature_map() {
        let u = Units::from_temperature(300.0, 1.0).unwrap();
        assert_eq!(effective_temperature(u, 2.0), 600.0);
        assert_eq!(effective_temperature(u, 1.0), 300.0);
    }

    fn random_stack(t: usize, n: usize, seed: u64) -> FrameStack {
        (0..t)
            .map(|i| {
                let g = RngStream::new(seed, SiteId::new(i as u64, 0, 0)).gaussian(3 * n);
                (0..n)
                    .map(|a| [g[3 * a], g[3 * a + 1], g[3 * a + 2]])
                    .collect()
            })
            .collect()
    }

    #[test]
    fn radial_forces_sum_to_zero() {
        let stack = random_stack(5, 4, 9);
        for mode in [DistanceMode::PerFrame, DistanceMode::Pairwise] {
            let mut spec = GlueSpec::radial(0.5, 1.0, 3, 0.6).unwrap();
            spec.distance_mode = mode;
            let g = radial_glue_forces(&stack, &spec, true).unwrap();
            for k in 0..3 {
                let total: f64 = g.iter().flat_map(|f| f.iter().map(|a| a[k])).sum();
                assert!(
                    total.abs() < crate::tol::EXACT_ABS,
                    "{mode:?} axis {k}: {total}"
                );
            }
        }
    }

    #[test]
    fn radial_forces_vanish_at_rmin() {
        // Scaled copies of one shape: consecutive RMSD chosen to hit r_min
        // exactly after the eps shift; alignment rotation is the identity.
        let base: Vec<[f64; 3]> = vec![
            [1.0, 0.0, 0.0],
            [-1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, -1.0, 0.0],
        ];
        let norm = (base.iter().map(|p| p[0] * p[0] + p[1] * p[1]).sum::<f64>() / 4.0).sqrt();
        let mut spec = GlueSpec::radial(2.0, 0.5, 1, 0.6).unwrap();
        let step = (spec.r_min - spec.eps) / norm;
        let stack: FrameStack = (0..4)
            .map(|t| {
                base.iter()
                    .map(|p| {
                        [
                            p[0] * (1.0 + step * t as f64),
                            p[1] * (1.0 + step * t as f64),
                            p[2],
                        ]
                    })
                    .collect()
            })
            .collect();
        for mode in [DistanceMode::PerFrame, DistanceMode::Pairwise] {
            spec.distance_mode = mode;
            spec.neighbors = 1;
            let g = radial_glue_forces(&stack, &spec, true).unwrap();
            let max = g
                .iter()
                .flat_map(|f| f.iter().flat_map(|a| a.iter().map(|v| v.abs())))
                .fold(0.0, f64::max);
            assert!(max < 1e-10, "{mode:?}: max force {max}");
        }
    }

    #[test]
    fn radial_pairwise_matches_fd_of_energy() {
        let stack = random_stack(3, 4, 23);
        let mut spec = GlueSpec::radial(0.8, 1.2, 2, 0.6).unwrap();
        spec.distance_mode = DistanceMode::Pairwise;
        let force = radial_glue_forces(&stack, &spec, false).unwrap();
        // Central differences of the energy with respect to the raw
        // coordinates; centering commutes with the gradient because the
        // energy is translation invariant.
        let h = 1e-6;
        for t in 0..3 {
            for a in 0..4 {
                for k in 0..3 {
                    let mut plus = stack.clone();
                    let mut minus = stack.clone();
                    plus[t][a][k] += h;
                    minus[t][a][k] -= h;
                    let fd = (radial_glue_energy(&plus, &spec, false).unwrap()
                        - radial_glue_energy(&minus, &spec, false).unwrap())
                        / (2.0 * h);
                    let got = -force[t][a][k];
                    let scale = fd.abs().max(1e-3);
                    assert!(
                        (got - fd).abs() <= crate::tol::FD_GLUE_REL * scale,
                        "t={t} a={a} k={k}: force {got} vs fd {fd}"
                    );
                }
            }
        }
    }

    #[test]
    fn radial_translation_invariance() {
        let stack = random_stack(4, 5, 31);
        let spec = GlueSpec::radial(0.5, 1.0, 2, 0.7).unwrap();
        let g0 = radial_glue_forces(&stack, &spec, false).unwrap();
        let shifted: FrameStack = stack
            .iter()
            .map(|f| {
                f.iter()
                    .map(|p| [p[0] + 10.0, p[1] - 4.0, p[2] + 0.5])
                    .collect()
            })
            .collect();
        let g1 = radial_glue_forces(&shifted, &spec, false).unwrap();
        for (a, b) in g0.iter().flatten().zip(g1.iter().flatten()) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn radial_rotation_invariance_with_alignment() {
        let stack = random_stack(4, 5, 37);
        let spec = GlueSpec::radial(0.5, 1.0, 2, 0.7).unwrap();
        let g0 = radial_glue_forces(&stack, &spec, true).unwrap();
        let angle = 0.8f64;
        let (s, c) = angle.sin_cos();
        let rotated: FrameStack = stack
            .iter()
            .map(|f| {
                f.iter()
                    .map(|p| [c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]])
                    .collect()
            })
            .collect();
        let g1 = radial_glue_forces(&rotated, &spec, true).unwrap();
        // Gradients rotate covariantly; norms are unchanged.
        for (a, b) in g0.iter().flatten().zip(g1.iter().flatten()) {
            let na = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
            let nb = (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt();
            assert!((na - nb).abs() < crate::tol::ROTATION_ABS, "{na} vs {nb}");
        }
    }

    #[test]
    fn radial_rejects_short_stacks() {
        let spec = GlueSpec::radial(0.5, 1.0, 2, 0.7).unwrap();
        let stack = random_stack(1, 4, 3);
        assert!(radial_glue_forces(&stack, &spec, true).is_err());
    }
}
