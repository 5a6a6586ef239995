//! The `run` subcommand: batch sampling, lattice refinement, the radial
//! stack sampler, and the underdamped velocity driver.

use std::process::ExitCode;

use anyhow::{bail, Context, Result};

use gluesim_core::exactness::{mh_wrapped_trajectory, WrapProposal};
use gluesim_core::glue::{radial_glue_energy, radial_glue_forces, FrameStack, GlueKind};
use gluesim_core::integrators::{underdamped_em_step, ForceOf, UnderdampedState};
use gluesim_core::lattice::{
    macro_iteration, parallel_batch_sample, BatchInit, HorizontalCoupling, TrajectoryLattice,
};
use gluesim_core::rng::{RngStream, SiteId};

use crate::config::{HorizontalKind, MhTarget, RunConfig, SamplerKind, SubstepKind};
use crate::report::{Manifest, TrajectoryWriter};
use crate::Ctx;

pub fn cmd_run(ctx: &Ctx) -> Result<ExitCode> {
    let cfg = crate::load_config(ctx)?;
    std::fs::create_dir_all(&ctx.out_dir)
        .with_context(|| format!("creating {}", ctx.out_dir.display()))?;
    let mut manifest = Manifest::new(&cfg, ctx.seed)?;
    let units = cfg.units()?;
    let dt = cfg.dt()?;
    manifest.record("dt", dt);
    manifest.record("beta", units.beta());
    manifest.record("diffusion", units.diffusion());

    let traj_path = ctx.out_dir.join(format!("{}_traj.csv", cfg.output.prefix));
    let summary_path = ctx
        .out_dir
        .join(format!("{}_summary.txt", cfg.output.prefix));
    let manifest_path = ctx
        .out_dir
        .join(format!("{}_manifest.toml", cfg.output.prefix));

    let mut summary = String::new();

    let radial_stack_mode = matches!(
        cfg.glue.as_ref().map(|g| g.kind),
        Some(crate::config::GlueSectionKind::RadialRmin)
    ) && cfg.sampler.kind == SamplerKind::Em
        && cfg.exactness.mh_target == MhTarget::Glued;

    if radial_stack_mode {
        // Radial stack mode: the state is a whole stack of frames and the
        // drift is the radial glue force alone; with MH enabled the chain
        // targets the glued Boltzmann law exactly.
        run_radial_stack(ctx, &cfg, &mut manifest, &traj_path, &mut summary)?;
    } else if let Some(lat_cfg) = &cfg.lattice {
        // Lattice mode: macro-iterations over the (slice, replica) grid.
        let kernel = cfg.kernel()?;
        let dim = kernel.drift.dim();
        let schedule = cfg.schedule()?;
        let mut lat = TrajectoryLattice::gaussian_init(
            lat_cfg.slices,
            lat_cfg.replicas,
            dim,
            schedule,
            ctx.seed,
        )?;
        let lambdas: Vec<f64> = (0..lat_cfg.replicas)
            .map(|b| b as f64 / (lat_cfg.replicas.max(2) - 1) as f64)
            .collect();
        let coupling = match (lat_cfg.horizontal, cfg.exactness.arex_enabled) {
            (HorizontalKind::PureNoise, _) => HorizontalCoupling::PureNoise,
            (HorizontalKind::AdjacentGlue, _) => HorizontalCoupling::AdjacentGlue {
                k_override: cfg.glue.as_ref().and_then(|g| g.k),
            },
            (HorizontalKind::Potential, false) => HorizontalCoupling::Potential(cfg.potential()?),
            (HorizontalKind::Potential, true) => HorizontalCoupling::Sheet {
                potential: cfg.potential()?,
                lambdas: lambdas.clone(),
            },
        };
        // Sheet for the swap acceptance: the auxiliary potential is the
        // configured one scaled by lambda (a strength-ladder exchange).
        // The horizontal pass applies the sheet drift for alpha_h of each
        // macro step, so the stationary sheet energy carries the same
        // weight; using the unweighted potential here would bias the
        // swap rates against the law the dynamics actually sample.
        let sheet = if cfg.exactness.arex_enabled {
            let aux = cfg.potential()?;
            let alpha_h = cfg.schedule.split_horizontal;
            Some(gluesim_core::exactness::SheetSpec::with_lambdas(
                lambdas,
                units.beta(),
                move |x: &[f64], l: f64| alpha_h * l * aux.value(x),
            )?)
        } else {
            None
        };
        let workers = if ctx.workers != 0 {
            ctx.workers
        } else {
            lat_cfg.workers
        };
        let mut swaps_attempted = 0u64;
        let mut swaps_accepted = 0u64;
        for iteration in 0..lat_cfg.iterations {
            lat = macro_iteration(&lat, &kernel, &coupling, workers)?;
            if let Some(sheet) = &sheet {
                // Even/odd pair alternation across passes.
                let outcome =
                    gluesim_core::lattice::arex_pass(&lat, sheet, iteration % 2, workers)?;
                swaps_attempted += outcome.attempted;
                swaps_accepted += outcome.swapped;
                lat = outcome.lattice;
            }
        }
        manifest.record("mode", "lattice");
        manifest.record("generations", lat.generation);
        if swaps_attempted > 0 {
            let rate = swaps_accepted as f64 / swaps_attempted as f64;
            summary.push_str(&format!(
                "arex swaps: {swaps_accepted}/{swaps_attempted} accepted (rate {rate:.4})\n"
            ));
            manifest.record("arex_swap_rate", format!("{rate:.4}"));
        }
        let mut w = TrajectoryWriter::create(&traj_path, &manifest.header_comment(), dim, false)?;
        for n in 0..lat.n_slices() {
            for b in 0..lat.n_replicas() {
                w.row(n, b, n as f64 * dt, &lat.site(n, b).positions, None)?;
            }
        }
        w.finish()?;
        summary.push_str(&format!(
            "mode lattice: {} slices x {} replicas, {} macro-iterations, fingerprint {:016x}\n",
            lat.n_slices(),
            lat.n_replicas(),
            lat.generation,
            lat.fingerprint()
        ));
    } else if cfg.sampler.kind == SamplerKind::Underdamped {
        run_underdamped(ctx, &cfg, &mut manifest, &traj_path, &mut summary)?;
    } else {
        run_batch(ctx, &cfg, &mut manifest, &traj_path, &mut summary)?;
    }

    std::fs::write(&summary_path, &summary)
        .with_context(|| format!("writing {}", summary_path.display()))?;
    manifest.write(&manifest_path)?;
    println!("wrote {}", traj_path.display());
    println!("wrote {}", summary_path.display());
    println!("wrote {}", manifest_path.display());
    Ok(ExitCode::SUCCESS)
}

fn run_batch(
    ctx: &Ctx,
    cfg: &RunConfig,
    manifest: &mut Manifest,
    traj_path: &std::path::Path,
    summary: &mut String,
) -> Result<()> {
    let units = cfg.units()?;
    let dt = cfg.dt()?;
    let kernel = cfg.kernel()?;
    let dim = kernel.drift.dim();
    let b_count = cfg.sampler.batch;
    let n_steps = cfg.schedule.n_steps;
    manifest.record("mode", "batch");
    manifest.record("batch", b_count);
    manifest.record("n_steps", n_steps);

    let mut w = TrajectoryWriter::create(traj_path, &manifest.header_comment(), dim, false)?;
    let mut acc_rates = Vec::new();
    let mut terminals: Vec<Vec<f64>> = Vec::with_capacity(b_count);

    if cfg.exactness.mh_enabled {
        let drift = cfg.potential()?;
        let beta = units.beta();
        let potential = drift.clone();
        let target = move |x: &[f64]| -beta * potential.value(x);
        let proposal = match cfg.sampler.kind {
            SamplerKind::Em | SamplerKind::Harmonic => WrapProposal::Em,
            SamplerKind::Strang => {
                if cfg.sampler.substep != SubstepKind::Em {
                    bail!("config error: strang with mh_enabled requires substep = \"em\"");
                }
                static ZERO: fn(&[f64], &mut [f64]) = |_x, out| out.fill(0.0);
                WrapProposal::StrangEm {
                    horizontal: &ZERO,
                    split: (cfg.schedule.split_vertical, cfg.schedule.split_horizontal),
                }
            }
            _ => bail!("config error: mh_enabled requires em, harmonic, or strang sampler"),
        };
        for b in 0..b_count {
            let x0 = RngStream::new(ctx.seed, SiteId::new(u64::MAX, b as u64, 0)).gaussian(dim);
            let run = mh_wrapped_trajectory(
                &proposal,
                &ForceOf(drift.as_ref()),
                &target,
                &x0,
                dt,
                n_steps,
                units,
                ctx.seed,
                b as u64,
            )?;
            for (n, x) in run.states.iter().enumerate().skip(1) {
                w.row(n, b, n as f64 * dt, x, None)?;
            }
            acc_rates.push(run.acceptance_rate());
            terminals.push(run.states.last().unwrap().clone());
        }
    } else {
        let batch = parallel_batch_sample(
            b_count,
            dim,
            &kernel,
            dt,
            n_steps,
            ctx.seed,
            BatchInit::StandardNormal,
            ctx.workers,
        )?;
        for (b, traj) in batch.trajectories.iter().enumerate() {
            for (n, x) in traj.iter().enumerate().skip(1) {
                w.row(n, b, n as f64 * dt, x, None)?;
            }
            terminals.push(traj.last().unwrap().clone());
        }
    }
    w.finish()?;

    for k in 0..dim {
        let vals: Vec<f64> = terminals.iter().map(|t| t[k]).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (vals.len().max(2) - 1) as f64;
        summary.push_str(&format!(
            "terminal coord_{k}: mean {mean:.6e} var {var:.6e}\n"
        ));
    }
    if !acc_rates.is_empty() {
        let mean = acc_rates.iter().sum::<f64>() / acc_rates.len() as f64;
        summary.push_str(&format!("mh acceptance rate: {mean:.6}\n"));
        manifest.record("mh_acceptance", format!("{mean:.6}"));
    }
    Ok(())
}

fn run_underdamped(
    ctx: &Ctx,
    cfg: &RunConfig,
    manifest: &mut Manifest,
    traj_path: &std::path::Path,
    summary: &mut String,
) -> Result<()> {
    let units = cfg.units()?;
    let dt = cfg.dt()?;
    let drift = cfg.potential()?;
    let dim = drift.dim();
    let gamma = cfg.sampler.gamma.expect("validated");
    let b_count = cfg.sampler.batch;
    let n_steps = cfg.schedule.n_steps;
    manifest.record("mode", "underdamped");
    manifest.record("gamma", gamma);

    let mut w = TrajectoryWriter::create(traj_path, &manifest.header_comment(), dim, true)?;
    let mut terminal_speed2 = Vec::new();
    for b in 0..b_count {
        let x0 = RngStream::new(ctx.seed, SiteId::new(u64::MAX, b as u64, 0)).gaussian(dim);
        let v0 = RngStream::new(ctx.seed, SiteId::new(u64::MAX, b as u64, 1)).gaussian(dim);
        let mut s = UnderdampedState::new(x0, v0, gamma)?;
        for n in 0..n_steps {
            let stream = RngStream::new(ctx.seed, SiteId::new(n as u64, b as u64, 0));
            s = underdamped_em_step(&s, dt, &ForceOf(drift.as_ref()), units, stream)?;
            w.row(n + 1, b, (n + 1) as f64 * dt, &s.x, Some(&s.v))?;
        }
        terminal_speed2.push(s.v.iter().map(|v| v * v).sum::<f64>());
    }
    w.finish()?;
    let mean_v2 = terminal_speed2.iter().sum::<f64>() / terminal_speed2.len() as f64;
    summary.push_str(&format!("terminal mean squared speed: {mean_v2:.6e}\n"));
    Ok(())
}

fn run_radial_stack(
    ctx: &Ctx,
    cfg: &RunConfig,
    manifest: &mut Manifest,
    traj_path: &std::path::Path,
    summary: &mut String,
) -> Result<()> {
    let units = cfg.units()?;
    let dt = cfg.dt()?;
    let spec = cfg.glue_spec()?.expect("validated radial glue");
    if !matches!(spec.kind, GlueKind::RadialRmin) {
        bail!("config error: radial stack mode requires [glue] kind = \"radial-rmin\"");
    }
    let drift_dim = cfg.potential()?.dim();
    if drift_dim % 3 != 0 {
        bail!("config error: radial stack mode needs a potential dimension divisible by 3 (N atoms x 3)");
    }
    let atoms = drift_dim / 3;
    let frames = cfg.lattice.as_ref().map(|l| l.slices).unwrap_or(4).max(2);
    let n_steps = cfg.schedule.n_steps;
    manifest.record("mode", "radial-stack");
    manifest.record("frames", frames);
    manifest.record("atoms", atoms);

    // Stack state, flattened per frame for output.
    let mut stack: FrameStack = (0..frames)
        .map(|t| {
            let g =
                RngStream::new(ctx.seed, SiteId::new(u64::MAX, t as u64, 0)).gaussian(3 * atoms);
            (0..atoms)
                .map(|a| [g[3 * a], g[3 * a + 1], g[3 * a + 2]])
                .collect()
        })
        .collect();

    let beta = units.beta();
    let sigma = (2.0 * units.diffusion() * dt).sqrt();
    let mut accepted = 0u64;
    let mh = cfg.exactness.mh_enabled;
    let mut energy = radial_glue_energy(&stack, &spec, spec.align)?;
    for n in 0..n_steps {
        let force = radial_glue_forces(&stack, &spec, spec.align)?;
        let noise =
            RngStream::new(ctx.seed, SiteId::new(n as u64, 0, 0)).gaussian(frames * atoms * 3);
        let mut proposal: FrameStack = stack.clone();
        let mut idx = 0;
        for t in 0..frames {
            for a in 0..atoms {
                for k in 0..3 {
                    proposal[t][a][k] = stack[t][a][k] + dt * force[t][a][k] + sigma * noise[idx];
                    idx += 1;
                }
            }
        }
        if mh {
            // MALA on the glue energy with the exact forward/reverse
            // Gaussian stage densities.
            let e_new = radial_glue_energy(&proposal, &spec, spec.align)?;
            let force_new = radial_glue_forces(&proposal, &spec, spec.align)?;
            let var = 2.0 * units.diffusion() * dt;
            let mut fwd = 0.0;
            let mut rev = 0.0;
            for t in 0..frames {
                for a in 0..atoms {
                    for k in 0..3 {
                        let mf = stack[t][a][k] + dt * force[t][a][k];
                        let mr = proposal[t][a][k] + dt * force_new[t][a][k];
                        fwd -= (proposal[t][a][k] - mf) * (proposal[t][a][k] - mf) / (2.0 * var);
                        rev -= (stack[t][a][k] - mr) * (stack[t][a][k] - mr) / (2.0 * var);
                    }
                }
            }
            let log_alpha = -beta * (e_new - energy) + rev - fwd;
            let u = RngStream::new(ctx.seed, SiteId::new(n as u64, 0, 1)).uniform();
            if log_alpha >= 0.0 || u < log_alpha.exp() {
                stack = proposal;
                energy = e_new;
                accepted += 1;
            }
        } else {
            stack = proposal;
            energy = radial_glue_energy(&stack, &spec, spec.align)?;
        }
    }

    let mut w = TrajectoryWriter::create(traj_path, &manifest.header_comment(), 3 * atoms, false)?;
    for (t, frame) in stack.iter().enumerate() {
        let flat: Vec<f64> = frame.iter().flat_map(|p| p.iter().copied()).collect();
        w.row(t, 0, t as f64 * dt, &flat, None)?;
    }
    w.finish()?;
    summary.push_str(&format!("radial stack: final glue energy {energy:.6e}\n"));
    if mh {
        let rate = accepted as f64 / n_steps.max(1) as f64;
        summary.push_str(&format!("mh acceptance rate: {rate:.6}\n"));
    }
    Ok(())
}
