//! Metropolis–Hastings exactness correction and replica-exchange swaps.
//!
//! The MH wrapper makes a chain exactly stationary for a Boltzmann target:
//! proposals come from the closed-form Gaussian step kernels (single EM
//! stage, or a stagewise-recorded Strang composition whose reverse path
//! uses the same palindromic stage sequence), and rejected moves retain
//! the state bitwise. Replica exchange swaps neighboring λ-sheets; shared
//! energy terms cancel in the acceptance ratio, so only the auxiliary
//! sheet potential enters.

use crate::integrators::Drift;
use crate::rng::{RngStream, SiteId};
use crate::units::Units;
use crate::{Error, Result};

/// Everything the MH decision needs, in log space.
#[derive(Debug, Clone)]
pub struct MhProposalRecord {
    pub x_from: Vec<f64>,
    pub x_to: Vec<f64>,
    pub forward_logdensity: f64,
    pub reverse_logdensity: f64,
    pub target_logdensity_from: f64,
    pub target_logdensity_to: f64,
}

/// Outcome of one accept/reject decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MhDecision {
    Accepted,
    Rejected {
        /// Set when the record contained a non-finite log-density and the
        /// move was refused outright.
        non_finite: bool,
    },
}

/// Log of the MH ratio: `Δlog target + (reverse − forward) log proposal`.
pub fn acceptance_log_ratio(rec: &MhProposalRecord) -> f64 {
    (rec.target_logdensity_to - rec.target_logdensity_from)
        + (rec.reverse_logdensity - rec.forward_logdensity)
}

/// `α = min(1, exp(log ratio))`, zero when any log-density is non-finite.
pub fn acceptance_probability(rec: &MhProposalRecord) -> f64 {
    let finite = rec.forward_logdensity.is_finite()
        && rec.reverse_logdensity.is_finite()
        && rec.target_logdensity_from.is_finite()
        && rec.target_logdensity_to.is_finite();
    if !finite {
        return 0.0;
    }
    acceptance_log_ratio(rec).min(0.0).exp()
}

/// The accept/reject decision. Consumes one RNG stage.
pub fn mh_accept(rec: &MhProposalRecord, stream: RngStream) -> MhDecision {
    let finite = rec.forward_logdensity.is_finite()
        && rec.reverse_logdensity.is_finite()
        && rec.target_logdensity_from.is_finite()
        && rec.target_logdensity_to.is_finite();
    if !finite {
        return MhDecision::Rejected { non_finite: true };
    }
    let log_alpha = acceptance_log_ratio(rec);
    if log_alpha >= 0.0 || stream.uniform() < log_alpha.exp() {
        MhDecision::Accepted
    } else {
        MhDecision::Rejected { non_finite: false }
    }
}

/// Log-density of one Gaussian EM stage `to ~ N(from − τ·f(from), 2Dτ·I)`.
pub fn em_stage_logdensity(
    from: &[f64],
    to: &[f64],
    tau: f64,
    force: &dyn Drift,
    units: Units,
) -> f64 {
    let d = from.len();
    let var = 2.0 * units.diffusion() * tau;
    let mut drift = vec![0.0; d];
    force.eval(from, &mut drift);
    let mut ss = 0.0;
    for i in 0..d {
        let m = from[i] - tau * drift[i];
        ss += (to[i] - m) * (to[i] - m);
    }
    -ss / (2.0 * var) - 0.5 * d as f64 * (2.0 * std::f64::consts::PI * var).ln()
}

/// Auxiliary sheet potential `U(x; λ)`.
pub type AuxPotential = dyn Fn(&[f64], f64) -> f64 + Sync + Send;

/// Replica sheet: interpolation parameters `λ_b` and the auxiliary
/// potential `U(x; λ)` they index.
pub struct SheetSpec {
    lambdas: Vec<f64>,
    u: Box<AuxPotential>,
    pub beta: f64,
}

impl SheetSpec {
    /// Uniform ladder `λ_b = b/B` for `b = 0..=B`.
    pub fn uniform(
        b_count: usize,
        beta: f64,
        u: impl Fn(&[f64], f64) -> f64 + Sync + Send + 'static,
    ) -> Result<Self> {
        if b_count == 0 {
            return Err(Error::domain("need at least one interval, B >= 1"));
        }
        let lambdas = (0..=b_count).map(|b| b as f64 / b_count as f64).collect();
        Ok(SheetSpec {
            lambdas,
            u: Box::new(u),
            beta,
        })
    }

    /// Explicit ladder; must start at 0, end at 1, strictly increase.
    pub fn with_lambdas(
        lambdas: Vec<f64>,
        beta: f64,
        u: impl Fn(&[f64], f64) -> f64 + Sync + Send + 'static,
    ) -> Result<Self> {
        if lambdas.len() < 2 || lambdas[0] != 0.0 || *lambdas.last().unwrap() != 1.0 {
            return Err(Error::domain("lambda ladder must run from 0 to 1"));
        }
        if lambdas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::domain("lambda ladder must strictly increase"));
        }
        Ok(SheetSpec {
            lambdas,
            u: Box::new(u),
            beta,
        })
    }

    pub fn replica_count(&self) -> usize {
        self.lambdas.len()
    }

    pub fn lambda(&self, b: usize) -> f64 {
        self.lambdas[b]
    }

    pub fn aux_potential(&self, x: &[f64], lambda: f64) -> f64 {
        (self.u)(x, lambda)
    }
}

/// Outcome of one swap attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwapDecision {
    Swapped,
    Kept,
}

/// Core swap exponent for two interpolation parameters:
/// `−β·[U(y; λ_a) + U(x; λ_b) − U(x; λ_a) − U(y; λ_b)]`. Symmetric under
/// exchanging the pair labels with the states swapped.
pub fn arex_exponent(
    x: &[f64],
    y: &[f64],
    lambda_a: f64,
    lambda_b: f64,
    beta: f64,
    u: &dyn Fn(&[f64], f64) -> f64,
) -> f64 {
    -beta * (u(y, lambda_a) + u(x, lambda_b) - u(x, lambda_a) - u(y, lambda_b))
}

/// Log acceptance exponent for swapping replicas `b` and `b+1`:
/// `−β·[U(x_{b+1}; λ_b) + U(x_b; λ_{b+1}) − U(x_b; λ_b) − U(x_{b+1}; λ_{b+1})]`.
/// Any energy shared across the sheet cancels and never enters.
pub fn arex_log_acceptance(x_b: &[f64], x_b1: &[f64], sheet: &SheetSpec, b: usize) -> Result<f64> {
    if b + 1 >= sheet.replica_count() {
        return Err(Error::domain(format!("swap index {b} out of range")));
    }
    let (la, lb) = (sheet.lambda(b), sheet.lambda(b + 1));
    Ok(arex_exponent(x_b, x_b1, la, lb, sheet.beta, &|x, l| {
        sheet.aux_potential(x, l)
    }))
}

/// Replica-exchange swap attempt between `b` and `b+1`.
/// Consumes one RNG stage.
pub fn arex_swap(
    x_b: &[f64],
    x_b1: &[f64],
    sheet: &SheetSpec,
    b: usize,
    stream: RngStream,
) -> Result<SwapDecision> {
    let log_alpha = arex_log_acceptance(x_b, x_b1, sheet, b)?;
    if log_alpha >= 0.0 || stream.uniform() < log_alpha.exp() {
        Ok(SwapDecision::Swapped)
    } else {
        Ok(SwapDecision::Kept)
    }
}

/// Proposal family for the MH wrapper. Stage densities are Gaussian in
/// closed form, so the composite forward/reverse densities are stagewise
/// products over the realized path.
pub enum WrapProposal<'a> {
    /// Single EM stage with the force-scale drift of the target.
    Em,
    /// Strang composition with EM substeps: horizontal half, vertical
    /// full, horizontal half. The vertical drift is the target's; the
    /// horizontal drift is supplied.
    StrangEm {
        horizontal: &'a dyn Drift,
        split: (f64, f64),
    },
}

/// Statistics of an MH-wrapped run.
#[derive(Debug, Clone)]
pub struct WrappedRun {
    /// Chain including the initial state, one row per step.
    pub states: Vec<Vec<f64>>,
    pub accepted: u64,
    pub attempted: u64,
}

impl WrappedRun {
    pub fn acceptance_rate(&self) -> f64 {
        self.accepted as f64 / self.attempted.max(1) as f64
    }
}

/// Run an MH-corrected chain with the given proposal and target
/// log-density. The chain is reversible with respect to
/// `exp(target_logdensity)`; rejected moves retain the state bitwise.
///
/// RNG stages per step: the proposal's noise stages followed by one
/// accept/reject stage.
#[allow(clippy::too_many_arguments)]
pub fn mh_wrapped_trajectory(
    proposal: &WrapProposal,
    target_force: &dyn Drift,
    target_logdensity: &dyn Fn(&[f64]) -> f64,
    x0: &[f64],
    dt: f64,
    n_steps: usize,
    units: Units,
    master_seed: u64,
    replica: u64,
) -> Result<WrappedRun> {
    if !(dt > 0.0) {
        return Err(Error::domain(format!(
            "step size must be positive, got {dt}"
        )));
    }
    let mut states = Vec::with_capacity(n_steps + 1);
    let mut x = x0.to_vec();
    states.push(x.clone());
    let mut accepted = 0u64;

    for n in 0..n_steps {
        let base = SiteId::new(n as u64, replica, 0);
        let stream0 = RngStream::new(master_seed, base);
        let (y, logq_fwd, logq_rev, accept_stage) = match proposal {
            WrapProposal::Em => {
                let y = crate::integrators::em_step(&x, dt, target_force, units, stream0)?;
                let fwd = em_stage_logdensity(&x, &y, dt, target_force, units);
                let rev = em_stage_logdensity(&y, &x, dt, target_force, units);
                (y, fwd, rev, 1)
            }
            WrapProposal::StrangEm { horizontal, split } => {
                let (av, ah) = *split;
                let tau_h = 0.5 * ah * dt;
                let tau_v = av * dt;
                let s1 = stream0;
                let s2 = RngStream::new(master_seed, base.stage_offset(1));
                let s3 = RngStream::new(master_seed, base.stage_offset(2));
                let y1 = stage_or_copy(&x, tau_h, *horizontal, units, s1)?;
                let y2 = stage_or_copy(&y1, tau_v, target_force, units, s2)?;
                let y3 = stage_or_copy(&y2, tau_h, *horizontal, units, s3)?;
                let fwd = stage_logdensity_or_zero(&x, &y1, tau_h, *horizontal, units)
                    + stage_logdensity_or_zero(&y1, &y2, tau_v, target_force, units)
                    + stage_logdensity_or_zero(&y2, &y3, tau_h, *horizontal, units);
                // Reverse path through the same intermediates, reversed
                // stage order (the palindrome maps onto itself).
                let rev = stage_logdensity_or_zero(&y3, &y2, tau_h, *horizontal, units)
                    + stage_logdensity_or_zero(&y2, &y1, tau_v, target_force, units)
                    + stage_logdensity_or_zero(&y1, &x, tau_h, *horizontal, units);
                (y3, fwd, rev, 3)
            }
        };
        let rec = MhProposalRecord {
            x_from: x.clone(),
            x_to: y.clone(),
            forward_logdensity: logq_fwd,
            reverse_logdensity: logq_rev,
            target_logdensity_from: target_logdensity(&x),
            target_logdensity_to: target_logdensity(&y),
        };
        let accept_stream = RngStream::new(master_seed, base.stage_offset(accept_stage));
        if mh_accept(&rec, accept_stream) == MhDecision::Accepted {
            accepted += 1;
            x = y;
        }
        states.push(x.clone());
    }
    Ok(WrappedRun {
        states,
        accepted,
        attempted: n_steps as u64,
    })
}

fn stage_or_copy(
    x: &[f64],
    tau: f64,
    force: &dyn Drift,
    units: Units,
    stream: RngStream,
) -> Result<Vec<f64>> {
    if tau == 0.0 {
        Ok(x.to_vec())
    } else {
        crate::integrators::em_step(x, tau, force, units, stream)
    }
}

fn stage_logdensity_or_zero(
    from: &[f64],
    to: &[f64],
    tau: f64,
    force: &dyn Drift,
    units: Units,
) -> f64 {
    if tau == 0.0 {
        0.0
    } else {
        em_stage_logdensity(from, to, tau, force, units)
    }
}
