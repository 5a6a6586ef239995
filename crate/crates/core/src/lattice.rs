//! Time-parallel execution over the (slice, replica) lattice.
//!
//! A macro-iteration runs three passes: a horizontal step on the
//! even-parity sites, a vertical (drift) step on every site, and a
//! horizontal step on the odd-parity sites. Parity coloring guarantees
//! that no two concurrently updated sites are horizontal neighbors, and
//! counter-based RNG keying makes the result bit-identical to sequential
//! in-order execution for any worker count.

use std::sync::Arc;

use rayon::prelude::*;

use crate::integrators::{em_step, ForceOf, StepKernel};
use crate::potentials::DriftProvider;
use crate::rng::{RngStream, SiteId};
use crate::state::{ConfigurationState, Schedule};
use crate::units::{stiffness_for_step, Units};
use crate::{Error, Result};

/// Checkerboard color of a site: the parity of `n + b`.
pub fn color_of(n: usize, b: usize) -> u8 {
    ((n + b) % 2) as u8
}

/// Horizontal coupling applied during the two half-passes.
pub enum HorizontalCoupling {
    /// Pure diffusion: no drift in the horizontal direction.
    PureNoise,
    /// Spring toward the previous replica's state at the same slice, with
    /// the convention that replica 0 couples to itself (zero pull).
    /// The stiffness defaults to `k(Δt)` of the macro step.
    AdjacentGlue { k_override: Option<f64> },
    /// An explicit per-replica auxiliary potential, identical across
    /// replicas.
    Potential(Arc<dyn DriftProvider>),
    /// An interpolation sheet: replica `b` feels the auxiliary drift
    /// scaled by `λ_b`, so the ladder morphs from the bare chain at
    /// `λ = 0` to the full auxiliary potential at `λ = 1`. Pairs well
    /// with [`arex_pass`] swaps, whose acceptance involves only the
    /// sheet potential.
    Sheet {
        potential: Arc<dyn DriftProvider>,
        lambdas: Vec<f64>,
    },
}

/// The (slice, replica) grid of states.
pub struct TrajectoryLattice {
    states: Vec<ConfigurationState>,
    n_slices: usize,
    n_replicas: usize,
    pub schedule: Schedule,
    pub generation: u64,
    master_seed: u64,
}

impl TrajectoryLattice {
    /// Lattice initialized with standard normal draws per site, matching
    /// the batch sampler's initialization.
    pub fn gaussian_init(
        n_slices: usize,
        n_replicas: usize,
        dim: usize,
        schedule: Schedule,
        master_seed: u64,
    ) -> Result<Self> {
        if n_slices == 0 || n_replicas == 0 || dim == 0 {
            return Err(Error::domain("lattice extents must be positive"));
        }
        let mut states = Vec::with_capacity(n_slices * n_replicas);
        for n in 0..n_slices {
            for b in 0..n_replicas {
                let stream =
                    RngStream::new(master_seed, SiteId::new(n as u64, b as u64, INIT_STAGE));
                states.push(ConfigurationState::new(stream.gaussian(dim), n, b)?);
            }
        }
        Ok(TrajectoryLattice {
            states,
            n_slices,
            n_replicas,
            schedule,
            generation: 0,
            master_seed,
        })
    }

    pub fn n_slices(&self) -> usize {
        self.n_slices
    }

    pub fn n_replicas(&self) -> usize {
        self.n_replicas
    }

    pub fn site(&self, n: usize, b: usize) -> &ConfigurationState {
        &self.states[n * self.n_replicas + b]
    }

    pub fn sites(&self) -> &[ConfigurationState] {
        &self.states
    }

    /// Byte-level fingerprint of the lattice content, for bit-identity
    /// comparisons.
    pub fn fingerprint(&self) -> u64 {
        let mut h = 0xcbf29ce484222325u64;
        let mut eat = |bits: u64| {
            h ^= bits;
            h = h.wrapping_mul(0x100000001b3);
        };
        for s in &self.states {
            for &v in &s.positions {
                eat(v.to_bits());
            }
        }
        h
    }
}

const INIT_STAGE: u64 = u64::MAX;

/// Stage layout within one macro-iteration: horizontal pass on color 0,
/// vertical pass, horizontal pass on color 1. Strang-composed vertical
/// kernels consume three sub-stages, so generations are spaced far apart.
const STAGES_PER_GENERATION: u64 = 8;
const STAGE_H0: u64 = 0;
const STAGE_V: u64 = 1;
const STAGE_H1: u64 = 5;

fn horizontal_drift_target(
    coupling: &HorizontalCoupling,
    lat: &TrajectoryLattice,
    n: usize,
    b: usize,
    k_default: f64,
) -> Option<(Vec<f64>, f64)> {
    match coupling {
        HorizontalCoupling::PureNoise => None,
        HorizontalCoupling::AdjacentGlue { k_override } => {
            let prev = if b == 0 {
                lat.site(n, 0)
            } else {
                lat.site(n, b - 1)
            };
            Some((prev.positions.clone(), k_override.unwrap_or(k_default)))
        }
        HorizontalCoupling::Potential(_) | HorizontalCoupling::Sheet { .. } => None,
    }
}

/// One macro-iteration over the lattice. Per site and iteration the
/// diffusion budget is exactly `2DΔt`: the horizontal step carries
/// `α_h·Δt` and the vertical step `α_v·Δt`.
///
/// `workers == 0` runs on the shared global pool; an explicit count gets
/// a scoped pool of that size. The result is bit-identical either way.
pub fn macro_iteration(
    lat: &TrajectoryLattice,
    vertical: &StepKernel,
    horizontal: &HorizontalCoupling,
    workers: usize,
) -> Result<TrajectoryLattice> {
    if workers == 0 {
        return macro_iteration_inner(lat, vertical, horizontal);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::domain(format!("worker pool: {e}")))?;
    pool.install(|| macro_iteration_inner(lat, vertical, horizontal))
}

fn macro_iteration_inner(
    lat: &TrajectoryLattice,
    vertical: &StepKernel,
    horizontal: &HorizontalCoupling,
) -> Result<TrajectoryLattice> {
    if let HorizontalCoupling::Sheet { lambdas, .. } = horizontal {
        if lambdas.len() != lat.n_replicas {
            return Err(Error::Shape(format!(
                "sheet ladder has {} entries, lattice has {} replicas",
                lambdas.len(),
                lat.n_replicas
            )));
        }
    }
    let dt = lat
        .schedule
        .step((lat.generation as usize) % lat.schedule.len());
    let (alpha_v, alpha_h) = lat.schedule.split();
    let tau_v = alpha_v * dt;
    let tau_h = alpha_h * dt;
    let units = vertical.units;
    let gen_base = lat.generation * STAGES_PER_GENERATION;
    let k_default = stiffness_for_step(dt, units)?;

    // Pass 1: horizontal, color 0.
    let after_h0 = horizontal_pass(
        lat,
        horizontal,
        0,
        tau_h,
        units,
        gen_base + STAGE_H0,
        k_default,
    )?;
    let mid = TrajectoryLattice {
        states: after_h0,
        ..clone_shell(lat)
    };

    // Pass 2: vertical, all sites.
    let after_v: Result<Vec<ConfigurationState>> = mid
        .states
        .par_iter()
        .map(|s| {
            if tau_v == 0.0 {
                return Ok(s.clone());
            }
            let stream = RngStream::new(
                mid.master_seed,
                SiteId::new(
                    s.slice_index as u64,
                    s.replica_index as u64,
                    gen_base + STAGE_V,
                ),
            );
            let out = vertical.apply(&s.positions, &s.positions, tau_v, stream)?;
            ConfigurationState::new(out, s.slice_index, s.replica_index)
        })
        .collect();
    let mid = TrajectoryLattice {
        states: after_v?,
        ..clone_shell(lat)
    };

    // Pass 3: horizontal, color 1.
    let after_h1 = horizontal_pass(
        &mid,
        horizontal,
        1,
        tau_h,
        units,
        gen_base + STAGE_H1,
        k_default,
    )?;

    Ok(TrajectoryLattice {
        states: after_h1,
        n_slices: lat.n_slices,
        n_replicas: lat.n_replicas,
        schedule: lat.schedule.clone(),
        generation: lat.generation + 1,
        master_seed: lat.master_seed,
    })
}

fn clone_shell(lat: &TrajectoryLattice) -> TrajectoryLattice {
    TrajectoryLattice {
        states: Vec::new(),
        n_slices: lat.n_slices,
        n_replicas: lat.n_replicas,
        schedule: lat.schedule.clone(),
        generation: lat.generation,
        master_seed: lat.master_seed,
    }
}

fn horizontal_pass(
    lat: &TrajectoryLattice,
    coupling: &HorizontalCoupling,
    color: u8,
    tau_h: f64,
    units: Units,
    stage: u64,
    k_default: f64,
) -> Result<Vec<ConfigurationState>> {
    lat.states
        .par_iter()
        .map(|s| {
            let (n, b) = (s.slice_index, s.replica_index);
            if color_of(n, b) != color || tau_h == 0.0 {
                return Ok(s.clone());
            }
            let stream = RngStream::new(lat.master_seed, SiteId::new(n as u64, b as u64, stage));
            let out = match coupling {
                HorizontalCoupling::PureNoise => {
                    let zero = |_: &[f64], out: &mut [f64]| out.fill(0.0);
                    em_step(&s.positions, tau_h, &zero, units, stream)?
                }
                HorizontalCoupling::AdjacentGlue { .. } => {
                    let (anchor, k) = horizontal_drift_target(coupling, lat, n, b, k_default)
                        .expect("glue target");
                    let drift = move |x: &[f64], out: &mut [f64]| {
                        for i in 0..x.len() {
                            out[i] = k * (x[i] - anchor[i]);
                        }
                    };
                    em_step(&s.positions, tau_h, &drift, units, stream)?
                }
                HorizontalCoupling::Potential(p) => {
                    em_step(&s.positions, tau_h, &ForceOf(p.as_ref()), units, stream)?
                }
                HorizontalCoupling::Sheet { potential, lambdas } => {
                    let lambda = lambdas[b];
                    let p = potential.as_ref();
                    let drift = move |x: &[f64], out: &mut [f64]| {
                        p.gradient(x, out);
                        for o in out.iter_mut() {
                            *o *= lambda;
                        }
                    };
                    em_step(&s.positions, tau_h, &drift, units, stream)?
                }
            };
            ConfigurationState::new(out, n, b)
        })
        .collect()
}

/// Result of a replica-exchange pass.
pub struct ArexOutcome {
    pub lattice: TrajectoryLattice,
    pub attempted: u64,
    pub swapped: u64,
}

/// Even/odd replica-exchange pass at every slice: attempts swaps on the
/// disjoint pairs `(b, b+1)` with `b ≡ parity (mod 2)`, using the sheet
/// acceptance. Deterministic per `(generation, slice, pair)`.
pub fn arex_pass(
    lat: &TrajectoryLattice,
    sheet: &crate::exactness::SheetSpec,
    parity: usize,
    workers: usize,
) -> Result<ArexOutcome> {
    if sheet.replica_count() != lat.n_replicas {
        return Err(Error::Shape(format!(
            "sheet has {} replicas, lattice has {}",
            sheet.replica_count(),
            lat.n_replicas
        )));
    }
    let gen_base = lat.generation * STAGES_PER_GENERATION;
    let run = || {
        (0..lat.n_slices)
            .into_par_iter()
            .flat_map_iter(|n| {
                (parity..lat.n_replicas.saturating_sub(1))
                    .step_by(2)
                    .map(move |b| (n, b))
            })
            .map(|(n, b)| {
                let stream = RngStream::new(
                    lat.master_seed,
                    SiteId::new(n as u64, b as u64, gen_base + 7),
                );
                let d = crate::exactness::arex_swap(
                    &lat.site(n, b).positions,
                    &lat.site(n, b + 1).positions,
                    sheet,
                    b,
                    stream,
                )?;
                Ok((
                    n * lat.n_replicas + b,
                    d == crate::exactness::SwapDecision::Swapped,
                ))
            })
            .collect()
    };
    let swaps: Result<Vec<(usize, bool)>> = if workers == 0 {
        run()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::domain(format!("worker pool: {e}")))?;
        pool.install(run)
    };
    let mut states = lat.states.clone();
    let swaps = swaps?;
    let attempted = swaps.len() as u64;
    let mut accepted = 0u64;
    for (idx, swapped) in swaps {
        if swapped {
            accepted += 1;
            let (n, b) = (idx / lat.n_replicas, idx % lat.n_replicas);
            let pa = states[idx].positions.clone();
            let pb = states[idx + 1].positions.clone();
            states[idx] = ConfigurationState::new(pb, n, b)?;
            states[idx + 1] = ConfigurationState::new(pa, n, b + 1)?;
        }
    }
    Ok(ArexOutcome {
        lattice: TrajectoryLattice {
            states,
            ..clone_shell(lat)
        },
        attempted,
        swapped: accepted,
    })
}

/// A batch of independent trajectories, `trajectories[replica][step]`
/// holding the coordinate vector after that many steps (step 0 is the
/// initial state).
#[derive(Debug, Clone)]
pub struct TrajectoryBatch {
    pub trajectories: Vec<Vec<Vec<f64>>>,
    pub dt: f64,
}

impl TrajectoryBatch {
    pub fn terminal_states(&self) -> Vec<&[f64]> {
        self.trajectories
            .iter()
            .map(|t| t.last().unwrap().as_slice())
            .collect()
    }
}

/// How the batch sampler seeds its replicas.
pub enum BatchInit {
    /// Standard normal draws per replica.
    StandardNormal,
    /// A fixed common starting point.
    Fixed(Vec<f64>),
}

/// Batch sampler: `b_count` replicas advance independently for `steps`
/// steps of the kernel; all randomness is keyed by (step, replica, stage),
/// so replicas and steps may be computed in any order.
#[allow(clippy::too_many_arguments)]
pub fn parallel_batch_sample(
    b_count: usize,
    dim: usize,
    kernel: &StepKernel,
    dt: f64,
    steps: usize,
    master_seed: u64,
    init: BatchInit,
    workers: usize,
) -> Result<TrajectoryBatch> {
    if b_count == 0 || dim == 0 {
        return Err(Error::domain("batch extents must be positive"));
    }
    if !(dt > 0.0) {
        return Err(Error::domain(format!(
            "step size must be positive, got {dt}"
        )));
    }
    let run = || {
        (0..b_count)
            .into_par_iter()
            .map(|b| {
                let x0 = match &init {
                    BatchInit::StandardNormal => {
                        RngStream::new(master_seed, SiteId::new(INIT_STAGE, b as u64, 0))
                            .gaussian(dim)
                    }
                    BatchInit::Fixed(x) => {
                        if x.len() != dim {
                            return Err(Error::Shape("initial state has wrong dimension".into()));
                        }
                        x.clone()
                    }
                };
                let mut traj = Vec::with_capacity(steps + 1);
                traj.push(x0);
                for n in 0..steps {
                    let stream = RngStream::new(master_seed, SiteId::new(n as u64, b as u64, 0));
                    // Sequential chains are self-consistent: the Heun
                    // spring anchor coincides with the current point.
                    let x = traj.last().expect("nonempty");
                    let out = kernel.apply(x, x, dt, stream)?;
                    traj.push(out);
                }
                Ok(traj)
            })
            .collect()
    };
    let trajectories: Result<Vec<Vec<Vec<f64>>>> = if workers == 0 {
        run()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::domain(format!("worker pool: {e}")))?;
        pool.install(run)
    };
    Ok(TrajectoryBatch {
        trajectories: trajectories?,
        dt,
    })
}
