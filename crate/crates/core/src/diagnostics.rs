//! Empirical verification of the error theory: pathwise KL estimation,
//! refinement decay, weak-order and stationary-bias regression, acceptance
//! asymptotics, mismatch scaling, and the step budget formula.

// Sweep harnesses take the full experiment description as arguments.
#![allow(clippy::too_many_arguments, clippy::type_complexity)]

use rayon::prelude::*;

use crate::exactness::{mh_wrapped_trajectory, WrapProposal, WrappedRun};
use crate::glue::adjacent_glue_step_with_noise;
use crate::integrators::{
    em_step_with_noise, heun_step_with_noise, strang_step_with_noise, Drift, SubstepScheme,
};
use crate::lattice::TrajectoryBatch;
use crate::rng::{RngStream, SiteId};
use crate::units::Units;
use crate::{Error, Result};

/// Least-squares fit of `ln y` against `ln x`.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub slope: f64,
    pub stderr: f64,
    pub intercept: f64,
    /// The included (x, y) points.
    pub points: Vec<(f64, f64)>,
    /// Points dropped because the signal fell below the noise floor.
    pub excluded: Vec<(f64, f64)>,
}

/// Fit `ln y = intercept + slope · ln x`. Requires at least three points.
pub fn fit_loglog(points: &[(f64, f64)]) -> Result<FitResult> {
    if points.len() < 3 {
        return Err(Error::Degenerate(format!(
            "need at least 3 points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|&(x, y)| !(x > 0.0) || !(y > 0.0)) {
        return Err(Error::Degenerate(
            "log-log fit needs positive coordinates".into(),
        ));
    }
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let dof = (points.len() - 2).max(1) as f64;
    let stderr = (ss_res / dof / sxx).sqrt();
    Ok(FitResult {
        slope,
        stderr,
        intercept,
        points: points.to_vec(),
        excluded: Vec::new(),
    })
}

/// Pathwise KL estimate from a recorded batch: the Girsanov sum
/// `(1/(4·D_n)) · Σ_n ‖g_used(x_n) − g_true(x_n)‖² · Δt` averaged over
/// replicas, with `D_n = υ_n·D` when a tempering profile is given.
pub fn path_kl_estimate(
    traj: &TrajectoryBatch,
    true_drift: &dyn Drift,
    used_drift: &dyn Drift,
    units: Units,
    tempering: Option<&[f64]>,
) -> Result<f64> {
    if traj.trajectories.is_empty() {
        return Err(Error::Degenerate("empty batch".into()));
    }
    let dt = traj.dt;
    let mut acc = 0.0;
    for replica in &traj.trajectories {
        let mut a = vec![0.0; replica[0].len()];
        let mut b = vec![0.0; replica[0].len()];
        // Drift is frozen at the left endpoint of each interval.
        for (n, x) in replica[..replica.len() - 1].iter().enumerate() {
            true_drift.eval(x, &mut a);
            used_drift.eval(x, &mut b);
            let gap: f64 = a.iter().zip(&b).map(|(p, q)| (p - q) * (p - q)).sum();
            let d_n = units.diffusion() * tempering.map(|t| t[n.min(t.len() - 1)]).unwrap_or(1.0);
            acc += gap * dt / (4.0 * d_n);
        }
    }
    Ok(acc / traj.trajectories.len() as f64)
}

/// Schedule-term KL estimator: simulates the piecewise-frozen-drift
/// interpolation of the coarse chain on a fine sub-grid and accumulates
/// the Girsanov integrand `(1/4D)·‖f(X̃_t) − f(X̃_{t_n})‖²·dt_fine`.
/// Decays as `O(1/N)` on uniform grids.
pub fn schedule_kl_estimate(
    force: &dyn Drift,
    dim: usize,
    x0: &[f64],
    n_coarse: usize,
    total_t: f64,
    fine_per_step: usize,
    n_paths: usize,
    units: Units,
    seed: u64,
) -> Result<f64> {
    if n_coarse == 0 || fine_per_step == 0 || n_paths == 0 {
        return Err(Error::domain("grid sizes must be positive"));
    }
    let dt = total_t / n_coarse as f64;
    let dtf = dt / fine_per_step as f64;
    let sigma_f = (2.0 * units.diffusion() * dtf).sqrt();
    let inv4d = 1.0 / (4.0 * units.diffusion());
    let total: f64 = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let noises = RngStream::new(seed, SiteId::new(p as u64, 0, 0))
                .gaussian(n_coarse * fine_per_step * dim);
            let mut x = x0.to_vec();
            let mut frozen = vec![0.0; dim];
            let mut cur = vec![0.0; dim];
            let mut acc = 0.0;
            let mut idx = 0;
            for _ in 0..n_coarse {
                force.eval(&x, &mut frozen);
                for j in 0..fine_per_step {
                    if j > 0 {
                        force.eval(&x, &mut cur);
                        let gap: f64 = cur
                            .iter()
                            .zip(&frozen)
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum();
                        acc += inv4d * gap * dtf;
                    }
                    for i in 0..dim {
                        x[i] += -frozen[i] * dtf + sigma_f * noises[idx];
                        idx += 1;
                    }
                }
            }
            acc
        })
        .sum();
    Ok(total / n_paths as f64)
}

/// One row of a refinement table.
#[derive(Debug, Clone)]
pub struct RefinementRow {
    pub n: usize,
    pub eps_bar: f64,
    pub schedule_kl: f64,
    pub model_kl: f64,
    pub total_kl: f64,
}

/// Refinement experiment: empirical KL versus the grid size `N`, with the
/// drift error `ε̄(N)` supplied per grid. The schedule term is measured by
/// [`schedule_kl_estimate`]; the model term is the exact constant-gap
/// Girsanov value `T·ε̄²/(4D)`.
pub fn refinement_sweep(
    force: &dyn Drift,
    dim: usize,
    x0: &[f64],
    grids: &[usize],
    total_t: f64,
    eps_of_n: &dyn Fn(usize) -> f64,
    n_paths: usize,
    units: Units,
    seed: u64,
) -> Result<Vec<RefinementRow>> {
    let mut rows = Vec::with_capacity(grids.len());
    for (gi, &n) in grids.iter().enumerate() {
        let eps = eps_of_n(n);
        let schedule_kl = schedule_kl_estimate(
            force,
            dim,
            x0,
            n,
            total_t,
            64,
            n_paths,
            units,
            seed.wrapping_add(gi as u64),
        )?;
        let model_kl = total_t * eps * eps / (4.0 * units.diffusion());
        rows.push(RefinementRow {
            n,
            eps_bar: eps,
            schedule_kl,
            model_kl,
            total_kl: schedule_kl + model_kl,
        });
    }
    Ok(rows)
}

/// Kernel family for the weak-order harness. The coarse chain uses the
/// drifts carried here; the fine-grid reference uses the effective drift
/// passed separately (for `Em`/`Heun` they coincide; for `Strang` the
/// reference drift is the split-weighted sum).
pub enum WeakKernel<'a> {
    Em {
        force: &'a dyn Drift,
    },
    Heun {
        force: &'a dyn Drift,
    },
    Strang {
        vertical: &'a dyn Drift,
        horizontal: &'a dyn Drift,
        split: (f64, f64),
        scheme: SubstepScheme,
    },
}

/// Integrator used for the fine-grid reference chain.
///
/// The reference must be at least as accurate as the kernel under test:
/// a first-order reference leaves an O(dt_ref) bias floor that swamps the
/// O(dt²) signal of second-order kernels, so those are measured against a
/// fine-grid Heun reference instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefScheme {
    Em,
    Heun,
}

/// Weak-order measurement: `|E[f(X_T^{Δt})] − E[f(X_T^{ref})]|` against a
/// fine-grid reference at `dt_ref = min(dts)/64` driven by the same
/// Brownian increments (coupled paths). Points whose signal is below
/// twice the Monte Carlo standard error are excluded with a warning entry
/// in `excluded`.
pub fn weak_order_fit(
    kernel: &WeakKernel,
    reference_force: &dyn Drift,
    reference: RefScheme,
    observable: &(dyn Fn(&[f64]) -> f64 + Sync),
    dts: &[f64],
    total_t: f64,
    x0: &[f64],
    n_paths: usize,
    units: Units,
    seed: u64,
) -> Result<FitResult> {
    if dts.len() < 4 {
        return Err(Error::Degenerate("need at least 4 step sizes".into()));
    }
    let dt_min = dts.iter().cloned().fold(f64::INFINITY, f64::min);
    let dt_max = dts.iter().cloned().fold(0.0, f64::max);
    if dt_max / dt_min < 7.99 {
        return Err(Error::Degenerate(
            "step sizes must span at least a factor of 8".into(),
        ));
    }
    let dt_ref = dt_min / 64.0;
    let m_total = (total_t / dt_ref).round() as usize;
    let dim = x0.len();
    let sigma_ref = (2.0 * units.diffusion() * dt_ref).sqrt();

    // Per-dt fine-step counts; every dt must be an integer multiple of the
    // reference step and divide the horizon exactly, so all chains
    // integrate to the same terminal time.
    let mut per_coarse = Vec::with_capacity(dts.len());
    for &dt in dts {
        let m = dt / dt_ref;
        if (m - m.round()).abs() > 1e-9 {
            return Err(Error::domain(format!(
                "dt {dt} is not a multiple of dt_ref {dt_ref}"
            )));
        }
        let m = m.round() as usize;
        if !m_total.is_multiple_of(m) {
            return Err(Error::domain(format!(
                "dt {dt} does not divide the horizon {total_t}"
            )));
        }
        per_coarse.push(m);
    }

    // Accumulate per-dt signed differences path by path.
    let acc: Vec<(f64, f64)> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let noises = RngStream::new(seed, SiteId::new(p as u64, 0, 0)).gaussian(m_total * dim);
            // Reference chain.
            let mut xr = x0.to_vec();
            let mut f = vec![0.0; dim];
            match reference {
                RefScheme::Em => {
                    for j in 0..m_total {
                        reference_force.eval(&xr, &mut f);
                        for i in 0..dim {
                            xr[i] += -f[i] * dt_ref + sigma_ref * noises[j * dim + i];
                        }
                    }
                }
                RefScheme::Heun => {
                    let mut f2 = vec![0.0; dim];
                    let mut pred = vec![0.0; dim];
                    for j in 0..m_total {
                        reference_force.eval(&xr, &mut f);
                        for i in 0..dim {
                            pred[i] = xr[i] - f[i] * dt_ref + sigma_ref * noises[j * dim + i];
                        }
                        reference_force.eval(&pred, &mut f2);
                        for i in 0..dim {
                            xr[i] +=
                                -0.5 * dt_ref * (f[i] + f2[i]) + sigma_ref * noises[j * dim + i];
                        }
                    }
                }
            }
            let f_ref = observable(&xr);

            // Coarse chains, one per dt, sharing the increments.
            let mut diffs = Vec::with_capacity(dts.len());
            for (&dt, &m) in dts.iter().zip(&per_coarse) {
                let n_steps = m_total / m;
                let mut x = x0.to_vec();
                for s in 0..n_steps {
                    match kernel {
                        WeakKernel::Em { force } => {
                            let agg = aggregate_noise(&noises, dim, s * m, m);
                            x = em_step_with_noise(&x, dt, *force, units, &agg);
                        }
                        WeakKernel::Heun { force } => {
                            let agg = aggregate_noise(&noises, dim, s * m, m);
                            let score = RescaledScore {
                                force: *force,
                                beta: units.beta(),
                            };
                            x = heun_step_with_noise(
                                &x,
                                &x,
                                dt,
                                &score,
                                units,
                                &agg,
                                RngStream::new(0, SiteId::new(0, 0, 0)),
                            )
                            .expect("heun");
                        }
                        WeakKernel::Strang {
                            vertical,
                            horizontal,
                            split,
                            scheme,
                        } => {
                            let (_, ah) = *split;
                            let mh = ((m as f64) * ah / 2.0).round() as usize;
                            let mv = m - 2 * mh;
                            let n0 = aggregate_noise(&noises, dim, s * m, mh);
                            let nv = aggregate_noise(&noises, dim, s * m + mh, mv);
                            let n2 = aggregate_noise(&noises, dim, s * m + mh + mv, mh);
                            x = strang_step_with_noise(
                                &x,
                                dt,
                                *split,
                                *vertical,
                                *horizontal,
                                units,
                                [&n0, &nv, &n2],
                                *scheme,
                            );
                        }
                    }
                }
                diffs.push(observable(&x) - f_ref);
            }
            diffs
        })
        .fold(
            || vec![(0.0, 0.0); dts.len()],
            |mut acc, diffs| {
                for (a, d) in acc.iter_mut().zip(&diffs) {
                    a.0 += d;
                    a.1 += d * d;
                }
                acc
            },
        )
        .reduce(
            || vec![(0.0, 0.0); dts.len()],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(&b) {
                    x.0 += y.0;
                    x.1 += y.1;
                }
                a
            },
        );

    let mut included = Vec::new();
    let mut excluded = Vec::new();
    let n = n_paths as f64;
    for (i, &dt) in dts.iter().enumerate() {
        let mean = acc[i].0 / n;
        let var = (acc[i].1 / n - mean * mean).max(0.0);
        let se = (var / n).sqrt();
        if mean.abs() < 2.0 * se {
            excluded.push((dt, mean.abs()));
        } else {
            included.push((dt, mean.abs()));
        }
    }
    let mut fit = fit_loglog(&included)?;
    fit.excluded = excluded;
    Ok(fit)
}

struct RescaledScore<'a> {
    force: &'a dyn Drift,
    beta: f64,
}

impl Drift for RescaledScore<'_> {
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        self.force.eval(x, out);
        for o in out.iter_mut() {
            *o *= self.beta;
        }
    }
}

/// Brownian-consistent aggregation: the normalized sum of `count` fine
/// standard normals starting at fine step `start`.
fn aggregate_noise(noises: &[f64], dim: usize, start: usize, count: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    if count == 0 {
        return out;
    }
    for j in 0..count {
        for i in 0..dim {
            out[i] += noises[(start + j) * dim + i];
        }
    }
    let norm = 1.0 / (count as f64).sqrt();
    for o in out.iter_mut() {
        *o *= norm;
    }
    out
}

/// One stationary-average measurement.
#[derive(Debug, Clone)]
pub struct BiasPoint {
    pub dt: f64,
    pub average: f64,
    pub bias: f64,
    pub sigma: f64,
}

/// Long-run average of an observable under a kernel, against an exact
/// stationary reference. `sigma` is the IAT-corrected standard error.
pub fn stationary_average(
    step: &(dyn Fn(&[f64], f64, u64) -> Vec<f64> + Sync),
    observable: &dyn Fn(&[f64]) -> f64,
    dt: f64,
    x0: &[f64],
    n_steps: usize,
    burn_in: usize,
) -> Result<(f64, f64)> {
    let mut x = x0.to_vec();
    let mut vals = Vec::with_capacity(n_steps);
    for n in 0..(burn_in + n_steps) {
        x = step(&x, dt, n as u64);
        if n >= burn_in {
            vals.push(observable(&x));
        }
    }
    let series = crate::observables::ObservableSeries::new(vals, dt, "stationary")?;
    let mean = series.mean();
    let est = crate::observables::integrated_autocorrelation(&series)?;
    let var = series
        .values
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / series.len() as f64;
    let sigma = (var * 2.0 * est.tau_int / series.len() as f64).sqrt();
    Ok((mean, sigma))
}

/// Stationary-bias regression: long-run averages of `observable` under a
/// kernel at each step size, compared to the exact stationary value, with
/// the usual log-log slope fit. Points whose bias is below twice the
/// IAT-corrected standard error are excluded with a warning entry.
pub fn stationary_bias_fit(
    step: &(dyn Fn(&[f64], f64, u64) -> Vec<f64> + Sync),
    observable: &(dyn Fn(&[f64]) -> f64 + Sync),
    exact: f64,
    dts: &[f64],
    x0: &[f64],
    n_steps: usize,
    burn_in: usize,
) -> Result<(FitResult, Vec<BiasPoint>)> {
    let measured: Result<Vec<BiasPoint>> = dts
        .par_iter()
        .map(|&dt| {
            let (average, sigma) = stationary_average(step, observable, dt, x0, n_steps, burn_in)?;
            Ok(BiasPoint {
                dt,
                average,
                bias: average - exact,
                sigma,
            })
        })
        .collect();
    let measured = measured?;
    let mut included = Vec::new();
    let mut excluded = Vec::new();
    for p in &measured {
        if p.bias.abs() < 2.0 * p.sigma {
            excluded.push((p.dt, p.bias.abs()));
        } else {
            included.push((p.dt, p.bias.abs()));
        }
    }
    let mut fit = fit_loglog(&included)?;
    fit.excluded = excluded;
    Ok((fit, measured))
}

/// Error-budget summary for one grid: the measured schedule term, the
/// analytic constant-gap model term, and their sum as the empirical
/// pathwise KL.
#[derive(Debug, Clone)]
pub struct KlBudgetReport {
    pub model_term: f64,
    pub schedule_term: f64,
    pub empirical_kl: f64,
    pub grid: (usize, Vec<f64>),
    pub eps_bar: f64,
}

/// Assemble the KL budget for a uniform grid of `n` steps over `total_t`
/// with drift error `eps_bar`. The empirical KL is nonnegative by
/// construction (both terms are sums of squares).
pub fn kl_budget_report(
    force: &dyn Drift,
    dim: usize,
    x0: &[f64],
    n: usize,
    total_t: f64,
    eps_bar: f64,
    n_paths: usize,
    units: Units,
    seed: u64,
) -> Result<KlBudgetReport> {
    let schedule_term = schedule_kl_estimate(force, dim, x0, n, total_t, 64, n_paths, units, seed)?;
    let model_term = total_t * eps_bar * eps_bar / (4.0 * units.diffusion());
    Ok(KlBudgetReport {
        model_term,
        schedule_term,
        empirical_kl: schedule_term + model_term,
        grid: (n, vec![total_t / n as f64; n]),
        eps_bar,
    })
}

/// Steps needed for a target KL accuracy `ε²`:
/// `N ≥ β·L_tot²·T² / (2·(ε² − β·T·ε̄²))`, requiring `ε² > β·T·ε̄²`.
pub fn steps_for_accuracy(
    eps: f64,
    eps_bar: f64,
    l_tot: f64,
    total_t: f64,
    units: Units,
) -> Result<u64> {
    let beta = units.beta();
    let floor = beta * total_t * eps_bar * eps_bar;
    if !(eps * eps > floor) {
        return Err(Error::domain(format!(
            "target eps^2 = {:.3e} is not above the model-error floor beta*T*eps_bar^2 = {:.3e}",
            eps * eps,
            floor
        )));
    }
    let n = beta * l_tot * l_tot * total_t * total_t / (2.0 * (eps * eps - floor));
    Ok(n.ceil() as u64)
}

/// Rejection-rate sweep for the MH wrapper: returns `(dt, 1 − acceptance)`
/// per step size.
pub fn mh_rejection_sweep(
    proposal_kind: &(dyn Fn(f64) -> WrapProposal<'static> + Sync),
    target_force: &dyn Drift,
    target_logdensity: &(dyn Fn(&[f64]) -> f64 + Sync),
    dts: &[f64],
    n_steps: usize,
    x0: &[f64],
    units: Units,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    let runs: Result<Vec<(f64, f64)>> = dts
        .par_iter()
        .enumerate()
        .map(|(i, &dt)| {
            let p = proposal_kind(dt);
            let run: WrappedRun = mh_wrapped_trajectory(
                &p,
                target_force,
                &|x| target_logdensity(x),
                x0,
                dt,
                n_steps,
                units,
                seed.wrapping_add(i as u64),
                0,
            )?;
            Ok((dt, 1.0 - run.acceptance_rate()))
        })
        .collect();
    runs
}

/// Mismatch and spring-energy scaling of the adjacent-glue chain: per step
/// size, the RMS of the bare-drift mismatch
/// `x_{n+1} − x_n + g(x_n)·Δt` and the mean unit-stiffness spring energy
/// `½‖mismatch‖²`.
pub fn mismatch_spring_sweep(
    force: &dyn Drift,
    dts: &[f64],
    n_steps: usize,
    x0: &[f64],
    units: Units,
    seed: u64,
) -> Result<(Vec<(f64, f64)>, Vec<(f64, f64)>)> {
    let dim = x0.len();
    let mut rms_points = Vec::with_capacity(dts.len());
    let mut energy_points = Vec::with_capacity(dts.len());
    for (i, &dt) in dts.iter().enumerate() {
        let mut x_prev = x0.to_vec();
        let mut x = x0.to_vec();
        let mut g = vec![0.0; dim];
        let mut acc_sq = 0.0;
        for n in 0..n_steps {
            let stream = RngStream::new(seed.wrapping_add(i as u64), SiteId::new(n as u64, 0, 0));
            let xi = stream.gaussian(dim);
            let next = adjacent_glue_step_with_noise(&x_prev, &x, dt, force, units, &xi)?;
            force.eval(&x, &mut g);
            let mm: f64 = (0..dim)
                .map(|k| {
                    let m = next[k] - x[k] + g[k] * dt;
                    m * m
                })
                .sum();
            acc_sq += mm;
            x_prev = x;
            x = next;
        }
        let mean_sq = acc_sq / n_steps as f64;
        rms_points.push((dt, mean_sq.sqrt()));
        energy_points.push((dt, 0.5 * mean_sq));
    }
    Ok((rms_points, energy_points))
}

/// Pure-noise covariance of the Strang composition per split: returns
/// `(α_v, α_h, measured per-coordinate variance)`.
pub fn noise_fusion_measurements(
    splits: &[(f64, f64)],
    dt: f64,
    samples: usize,
    units: Units,
    seed: u64,
) -> Result<Vec<(f64, f64, f64)>> {
    let zero = |_: &[f64], out: &mut [f64]| out.fill(0.0);
    let mut out = Vec::with_capacity(splits.len());
    for (si, &split) in splits.iter().enumerate() {
        let var: f64 = (0..samples)
            .into_par_iter()
            .map(|i| {
                let base = SiteId::new(i as u64, si as u64, 0);
                let streams = [
                    RngStream::new(seed, base),
                    RngStream::new(seed, base.stage_offset(1)),
                    RngStream::new(seed, base.stage_offset(2)),
                ];
                let y = crate::integrators::strang_step(
                    &[0.0],
                    dt,
                    split,
                    &zero,
                    &zero,
                    units,
                    streams,
                    SubstepScheme::Heun,
                )
                .expect("strang");
                y[0] * y[0]
            })
            .sum::<f64>()
            / samples as f64;
        out.push((split.0, split.1, var));
    }
    Ok(out)
}

/// Exact stationary covariance of the discretized underdamped chain on a
/// quadratic potential, by fixed-point iteration of the discrete Lyapunov
/// equation. Returns `(position variance, velocity variance)`.
pub fn underdamped_stationary_cov(kappa: f64, gamma: f64, dt: f64, units: Units) -> (f64, f64) {
    // (x, v) update: x' = x + v dt; v' = -kappa dt x + (1 - gamma dt) v + noise.
    let a = [[1.0, dt], [-kappa * dt, 1.0 - gamma * dt]];
    let q = 2.0 * gamma * units.diffusion() * dt;
    let mut s = [[units.diffusion() / kappa, 0.0], [0.0, units.diffusion()]];
    for _ in 0..2_000_000 {
        let mut next = [[0.0f64; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                let mut acc = 0.0;
                for k in 0..2 {
                    for l in 0..2 {
                        acc += a[i][k] * s[k][l] * a[j][l];
                    }
                }
                next[i][j] = acc;
            }
        }
        next[1][1] += q;
        let delta = (0..2)
            .flat_map(|i| (0..2).map(move |j| (i, j)))
            .map(|(i, j)| (next[i][j] - s[i][j]).abs())
            .fold(0.0, f64::max);
        s = next;
        if delta < 1e-15 {
            break;
        }
    }
    (s[0][0], s[1][1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrators::ForceOf;
    use crate::lattice::{parallel_batch_sample, BatchInit};
    use crate::potentials::{make_quadratic, DriftProvider};
    use std::sync::Arc;

    #[test]
    fn fit_recovers_power_law() {
        let pts: Vec<(f64, f64)> = (1..8)
            .map(|i| {
                let x = 0.1 * i as f64;
                (x, 3.0 * x * x)
            })
            .collect();
        let fit = fit_loglog(&pts).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-9);
        assert!(fit.stderr < 1e-9);
    }

    #[test]
    fn kl_zero_gap_is_zero() {
        let q = make_quadratic(1.0, vec![0.0]).unwrap();
        let kernel = crate::integrators::StepKernel::new(
            crate::integrators::KernelKind::EmOverdamped,
            Arc::new(q.clone()) as Arc<dyn DriftProvider>,
            Units::reduced(),
        );
        let batch =
            parallel_batch_sample(4, 1, &kernel, 0.1, 50, 3, BatchInit::StandardNormal, 2).unwrap();
        let kl =
            path_kl_estimate(&batch, &ForceOf(&q), &ForceOf(&q), Units::reduced(), None).unwrap();
        assert_eq!(kl, 0.0);
    }

    #[test]
    fn kl_constant_gap_analytic() {
        // Constant drift gap eps over horizon T: KL = T eps^2 / (4D).
        let q = make_quadratic(1.0, vec![0.0]).unwrap();
        let kernel = crate::integrators::StepKernel::new(
            crate::integrators::KernelKind::EmOverdamped,
            Arc::new(q.clone()) as Arc<dyn DriftProvider>,
            Units::reduced(),
        );
        let n = 100;
        let dt = 0.01;
        let batch =
            parallel_batch_sample(8, 1, &kernel, dt, n, 3, BatchInit::StandardNormal, 2).unwrap();
        let shifted = |x: &[f64], out: &mut [f64]| {
            ForceOf(&q).eval(x, out);
            out[0] += 0.1;
        };
        let kl = path_kl_estimate(&batch, &ForceOf(&q), &shifted, Units::reduced(), None).unwrap();
        let expect = 1.0 * 0.1 * 0.1 / 4.0;
        assert!((kl - expect).abs() < 1e-12, "kl {kl} expect {expect}");
    }

    #[test]
    fn kl_constant_gap_invariant_under_time_reversal() {
        // The estimate is a sum of per-step nonnegative terms; with a
        // constant gap it is exactly invariant under reversing the
        // recorded sequence.
        let q = make_quadratic(1.0, vec![0.0]).unwrap();
        let kernel = crate::integrators::StepKernel::new(
            crate::integrators::KernelKind::EmOverdamped,
            Arc::new(q.clone()) as Arc<dyn DriftProvider>,
            Units::reduced(),
        );
        let batch = parallel_batch_sample(4, 1, &kernel, 0.02, 64, 5, BatchInit::StandardNormal, 2)
            .unwrap();
        let mut reversed = batch.clone();
        for t in reversed.trajectories.iter_mut() {
            t.reverse();
        }
        let shifted = |x: &[f64], out: &mut [f64]| {
            ForceOf(&q).eval(x, out);
            out[0] += 0.3;
        };
        let a = path_kl_estimate(&batch, &ForceOf(&q), &shifted, Units::reduced(), None).unwrap();
        let b =
            path_kl_estimate(&reversed, &ForceOf(&q), &shifted, Units::reduced(), None).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn kl_tempered_halves_model_term() {
        let q = make_quadratic(1.0, vec![0.0]).unwrap();
        let kernel = crate::integrators::StepKernel::new(
            crate::integrators::KernelKind::EmOverdamped,
            Arc::new(q.clone()) as Arc<dyn DriftProvider>,
            Units::reduced(),
        );
        let batch =
            parallel_batch_sample(4, 1, &kernel, 0.01, 100, 3, BatchInit::StandardNormal, 2)
                .unwrap();
        let shifted = |x: &[f64], out: &mut [f64]| {
            ForceOf(&q).eval(x, out);
            out[0] += 0.1;
        };
        let base =
            path_kl_estimate(&batch, &ForceOf(&q), &shifted, Units::reduced(), None).unwrap();
        let tempered = path_kl_estimate(
            &batch,
            &ForceOf(&q),
            &shifted,
            Units::reduced(),
            Some(&vec![2.0; 100]),
        )
        .unwrap();
        assert!((tempered - base / 2.0).abs() < 1e-12);
    }

    #[test]
    fn steps_for_accuracy_examples() {
        let u = Units::reduced();
        assert_eq!(steps_for_accuracy(0.1, 0.0, 1.0, 1.0, u).unwrap(), 50);
        assert!(steps_for_accuracy(0.1, 0.1, 1.0, 1.0, u).is_err());
        let n1 = steps_for_accuracy(0.1, 0.0, 1.0, 1.0, u).unwrap();
        let n2 = steps_for_accuracy(0.1, 0.0, 2.0, 1.0, u).unwrap();
        assert_eq!(n2, 4 * n1);
    }

    #[test]
    fn underdamped_lyapunov_high_friction_limit() {
        // Position variance bias against D/kappa shrinks as friction grows
        // with the step resolved against the friction scale.
        let u = Units::reduced();
        let b2 = (underdamped_stationary_cov(1.0, 2.0, 0.01 / 2.0, u).0 - 1.0).abs();
        let b8 = (underdamped_stationary_cov(1.0, 8.0, 0.01 / 8.0, u).0 - 1.0).abs();
        assert!(
            b8 < b2,
            "bias at gamma=8 ({b8}) should be below gamma=2 ({b2})"
        );
    }
}
