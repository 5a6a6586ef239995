//! The `diagnose` subcommand: named check suites over canonical setups,
//! with machine-readable reports.

use std::process::ExitCode;

use anyhow::{bail, Context, Result};

use gluesim_core::diagnostics::{
    fit_loglog, mh_rejection_sweep, noise_fusion_measurements, path_kl_estimate, refinement_sweep,
    stationary_bias_fit, weak_order_fit, RefScheme, WeakKernel,
};
use gluesim_core::exactness::WrapProposal;
use gluesim_core::integrators::{em_step, heun_step, ForceOf, SubstepScheme};
use gluesim_core::lattice::{parallel_batch_sample, BatchInit};
use gluesim_core::potentials::make_quadratic;
use gluesim_core::rng::{RngStream, SiteId};
use gluesim_core::units::Units;

use crate::Ctx;

struct Check {
    name: String,
    measured: f64,
    lo: f64,
    hi: f64,
}

impl Check {
    fn pass(&self) -> bool {
        self.measured >= self.lo && self.measured <= self.hi
    }
}

fn check(name: &str, measured: f64, lo: f64, hi: f64) -> Check {
    Check {
        name: name.into(),
        measured,
        lo,
        hi,
    }
}

pub fn cmd_diagnose(ctx: &Ctx, suite: &str) -> Result<ExitCode> {
    let seed = ctx.seed;
    let checks = match suite {
        "noise-fusion" => noise_fusion(seed)?,
        "weak-order" => weak_order(seed)?,
        "stationary-bias" => stationary_bias(seed)?,
        "mh-acceptance" => mh_acceptance(seed)?,
        "kl-budget" => kl_budget(seed)?,
        "refinement" => refinement(seed)?,
        other => bail!("usage error: unknown suite {other:?} (expected kl-budget, weak-order, stationary-bias, mh-acceptance, noise-fusion, refinement)"),
    };

    std::fs::create_dir_all(&ctx.out_dir)
        .with_context(|| format!("creating {}", ctx.out_dir.display()))?;
    let path = ctx.out_dir.join(format!("diagnose_{suite}.csv"));
    let mut report = String::from("check,measured,lo,hi,verdict\n");
    let mut all_pass = true;
    for c in &checks {
        let verdict = if c.pass() { "PASS" } else { "FAIL" };
        all_pass &= c.pass();
        println!(
            "{:<40} measured {:>12.6e} band [{:.6e}, {:.6e}] {}",
            c.name, c.measured, c.lo, c.hi, verdict
        );
        report.push_str(&format!(
            "{},{:.12e},{:.12e},{:.12e},{}\n",
            c.name, c.measured, c.lo, c.hi, verdict
        ));
    }
    std::fs::write(&path, report).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(if all_pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn ou_force(kappa: f64) -> impl Fn(&[f64], &mut [f64]) + Sync + Copy {
    move |x: &[f64], out: &mut [f64]| {
        for (o, &xi) in out.iter_mut().zip(x) {
            *o = kappa * xi;
        }
    }
}

fn noise_fusion(seed: u64) -> Result<Vec<Check>> {
    let u = Units::reduced();
    let dt = 1.0;
    let expect = 2.0 * u.diffusion() * dt;
    let rows = noise_fusion_measurements(
        &[(1.0, 0.0), (0.5, 0.5), (0.25, 0.75)],
        dt,
        100_000,
        u,
        seed.wrapping_add(1),
    )?;
    Ok(rows
        .into_iter()
        .map(|(av, ah, var)| {
            check(
                &format!("noise-fusion split ({av},{ah})"),
                var,
                0.98 * expect,
                1.02 * expect,
            )
        })
        .collect())
}

fn weak_order(seed: u64) -> Result<Vec<Check>> {
    let u = Units::reduced();
    let force = ou_force(1.0);
    let obs = |x: &[f64]| x[0] * x[0];
    let x0 = [1.5];
    let mut out = Vec::new();

    let fit = weak_order_fit(
        &WeakKernel::Em { force: &force },
        &force,
        RefScheme::Em,
        &obs,
        &[0.125, 0.0625, 0.03125, 0.015625],
        1.0,
        &x0,
        150_000,
        u,
        seed.wrapping_add(2),
    )?;
    out.push(check("weak-order em (slope)", fit.slope, 0.85, 1.15));

    let fit = weak_order_fit(
        &WeakKernel::Heun { force: &force },
        &force,
        RefScheme::Heun,
        &obs,
        &[0.5, 0.25, 0.125, 0.0625],
        1.0,
        &x0,
        400_000,
        u,
        seed.wrapping_add(3),
    )?;
    out.push(check("weak-order heun (slope)", fit.slope, 1.75, 2.25));

    let fv = ou_force(3.0);
    let fh = ou_force(0.5);
    let feff = ou_force(0.5 * 3.0 + 0.5 * 0.5);
    let fit = weak_order_fit(
        &WeakKernel::Strang {
            vertical: &fv,
            horizontal: &fh,
            split: (0.5, 0.5),
            scheme: SubstepScheme::Heun,
        },
        &feff,
        RefScheme::Heun,
        &obs,
        &[0.5, 0.25, 0.125, 0.0625],
        1.0,
        &x0,
        400_000,
        u,
        seed.wrapping_add(4),
    )?;
    out.push(check("weak-order strang (slope)", fit.slope, 1.75, 2.25));
    Ok(out)
}

fn stationary_bias(seed: u64) -> Result<Vec<Check>> {
    let u = Units::reduced();
    let force = ou_force(1.0);
    let obs = |x: &[f64]| x[0] * x[0];
    let exact = 1.0; // D/kappa
    let mut out = Vec::new();

    // EM: bias against the exact EM-on-OU closed form must vanish, and the
    // bias against the continuum law scales linearly.
    let em_seed = seed.wrapping_add(10);
    let em_kernel = move |x: &[f64], dt: f64, n: u64| {
        // Fold the step size into the stream so different dts decorrelate.
        let tag = (dt * 1e6) as u64;
        em_step(
            x,
            dt,
            &force,
            u,
            RngStream::new(em_seed.wrapping_add(tag), SiteId::new(n, 0, 0)),
        )
        .expect("em")
    };
    let (fit, points) =
        stationary_bias_fit(&em_kernel, &obs, exact, &[0.4, 0.2, 0.1, 0.05], &[0.0], 1_500_000, 2_000)?;
    for p in &points {
        let closed_form = u.diffusion() / (1.0 - p.dt / 2.0);
        out.push(check(
            &format!("stationary em dt={} vs closed form (|z|)", p.dt),
            (p.average - closed_form).abs() / p.sigma,
            0.0,
            3.0,
        ));
    }
    out.push(check("stationary-bias em (slope)", fit.slope, 0.7, 1.3));

    let heun_seed = seed.wrapping_add(20);
    let heun_kernel = move |x: &[f64], dt: f64, n: u64| {
        let tag = (dt * 1e6) as u64;
        heun_step(
            x,
            x,
            dt,
            &force,
            u,
            RngStream::new(heun_seed.wrapping_add(tag), SiteId::new(n, 0, 0)),
        )
        .expect("heun")
    };
    let (fit, _) =
        stationary_bias_fit(&heun_kernel, &obs, exact, &[0.5, 0.4, 0.3, 0.2], &[0.0], 3_000_000, 2_000)?;
    out.push(check("stationary-bias heun (slope)", fit.slope, 1.7, 2.3));

    // MH-wrapped EM: bias indistinguishable from zero.
    let q = make_quadratic(1.0, vec![0.0])?;
    for (i, &dt) in [0.2, 0.05].iter().enumerate() {
        let beta = u.beta();
        let qc = q.clone();
        let run = gluesim_core::exactness::mh_wrapped_trajectory(
            &WrapProposal::Em,
            &ForceOf(&q),
            &move |x: &[f64]| -beta * gluesim_core::potentials::DriftProvider::value(&qc, x),
            &[0.0],
            dt,
            1_500_000,
            u,
            seed.wrapping_add(30 + i as u64),
            0,
        )?;
        let vals: Vec<f64> = run.states.iter().skip(2_000).map(|x| x[0] * x[0]).collect();
        let series = gluesim_core::observables::ObservableSeries::new(vals, dt, "x2")?;
        let est = gluesim_core::observables::integrated_autocorrelation(&series)?;
        let mean = series.mean();
        let var = series
            .values
            .iter()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / series.len() as f64;
        let sigma = (var * 2.0 * est.tau_int / series.len() as f64).sqrt();
        out.push(check(
            &format!("stationary mh-wrapped em dt={dt} (|z| vs D/kappa)"),
            (mean - exact).abs() / sigma,
            0.0,
            3.0,
        ));
    }
    Ok(out)
}

fn mh_acceptance(seed: u64) -> Result<Vec<Check>> {
    let u = Units::reduced();
    let force = ou_force(1.0);
    let beta = u.beta();
    let target = move |x: &[f64]| -beta * 0.5 * x[0] * x[0];
    let dts = [0.2, 0.1, 0.05, 0.025];
    let mut out = Vec::new();

    let pts = mh_rejection_sweep(
        &|_dt| WrapProposal::Em,
        &force,
        &target,
        &dts,
        300_000,
        &[0.0],
        u,
        seed.wrapping_add(40),
    )?;
    let fit = fit_loglog(&pts)?;
    out.push(check(
        "mh-acceptance em (rejection slope)",
        fit.slope,
        0.7,
        1.3,
    ));

    let kh = 0.8;
    let fh: &'static dyn gluesim_core::integrators::Drift = Box::leak(Box::new(ou_force(kh)));
    let target_sum = move |x: &[f64]| -beta * 0.5 * (1.0 + kh) * x[0] * x[0];
    let pts = mh_rejection_sweep(
        &|_dt| WrapProposal::StrangEm {
            horizontal: fh,
            split: (0.5, 0.5),
        },
        &force,
        &target_sum,
        &dts,
        300_000,
        &[0.0],
        u,
        seed.wrapping_add(41),
    )?;
    let fit = fit_loglog(&pts)?;
    out.push(check(
        "mh-acceptance strang (rejection slope)",
        fit.slope,
        1.7,
        2.3,
    ));
    Ok(out)
}

fn kl_budget(seed: u64) -> Result<Vec<Check>> {
    let u = Units::reduced();
    let q = make_quadratic(1.0, vec![0.0])?;
    let kernel = gluesim_core::integrators::StepKernel::new(
        gluesim_core::integrators::KernelKind::EmOverdamped,
        std::sync::Arc::new(q.clone()),
        u,
    );
    let n = 100;
    let dt = 0.01; // horizon T = 1
    let batch = parallel_batch_sample(
        64,
        1,
        &kernel,
        dt,
        n,
        seed.wrapping_add(50),
        BatchInit::StandardNormal,
        0,
    )?;
    let truef = ForceOf(&q);
    let mut out = Vec::new();

    let zero_gap = path_kl_estimate(&batch, &truef, &truef, u, None)?;
    out.push(check("kl-budget zero gap", zero_gap, 0.0, 0.0));

    let eps = 0.1;
    let shifted = move |x: &[f64], o: &mut [f64]| {
        ou_force(1.0)(x, o);
        o[0] += eps;
    };
    let kl1 = path_kl_estimate(&batch, &truef, &shifted, u, None)?;
    let expect = 1.0 * eps * eps / (4.0 * u.diffusion());
    out.push(check(
        "kl-budget constant gap vs T*eps^2/(4D)",
        kl1,
        expect - 1e-12,
        expect + 1e-12,
    ));

    let half = move |x: &[f64], o: &mut [f64]| {
        ou_force(1.0)(x, o);
        o[0] += eps / 2.0;
    };
    let kl2 = path_kl_estimate(&batch, &truef, &half, u, None)?;
    out.push(check(
        "kl-budget halving eps quarters",
        kl2 / kl1,
        0.25 - 1e-12,
        0.25 + 1e-12,
    ));

    let tempered = path_kl_estimate(&batch, &truef, &shifted, u, Some(&vec![2.0; n]))?;
    out.push(check(
        "kl-budget upsilon=2 halves model term",
        tempered / kl1,
        0.5 - 1e-12,
        0.5 + 1e-12,
    ));
    Ok(out)
}

fn refinement(seed: u64) -> Result<Vec<Check>> {
    let u = Units::reduced();
    let force = ou_force(1.0);
    let mut out = Vec::new();

    let rows = refinement_sweep(
        &force,
        1,
        &[1.0],
        &[16, 32, 64, 128],
        1.0,
        &|_| 0.0,
        10_000,
        u,
        seed.wrapping_add(60),
    )?;
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.n as f64, r.schedule_kl)).collect();
    let fit = fit_loglog(&pts)?;
    out.push(check(
        "refinement schedule term slope vs N",
        fit.slope,
        -1.2,
        -0.8,
    ));

    // Model term versus eps at fixed N: exact quadratic dependence.
    let model = |e: f64| 1.0 * e * e / (4.0 * u.diffusion());
    let pts: Vec<(f64, f64)> = [0.2, 0.1, 0.05].iter().map(|&e| (e, model(e))).collect();
    let fit = fit_loglog(&pts)?;
    out.push(check(
        "refinement model term slope vs eps",
        fit.slope,
        1.95,
        2.05,
    ));

    // Refining both knobs lies below each single-knob curve.
    let sched_16 = rows_schedule(&force, 16, u, seed.wrapping_add(61))?;
    let sched_128 = rows_schedule(&force, 128, u, seed.wrapping_add(62))?;
    let both = sched_128 + model(0.05);
    let only_grid = sched_128 + model(0.2);
    let only_model = sched_16 + model(0.05);
    out.push(check(
        "refinement combined below single-knob",
        if both <= only_grid && both <= only_model {
            1.0
        } else {
            0.0
        },
        1.0,
        1.0,
    ));
    Ok(out)
}

fn rows_schedule(
    force: &(dyn gluesim_core::integrators::Drift + Sync),
    n: usize,
    u: Units,
    seed: u64,
) -> Result<f64> {
    Ok(gluesim_core::diagnostics::schedule_kl_estimate(
        force,
        1,
        &[1.0],
        n,
        1.0,
        64,
        10_000,
        u,
        seed,
    )?)
}
