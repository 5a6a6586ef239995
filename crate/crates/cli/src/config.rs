//! Run configuration: a TOML file with typed sections. Unknown keys are a
//! hard error, as are keys that do not apply to the selected kind.

use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use gluesim_core::glue::{DistanceMode, GlueKind, GlueSpec};
use gluesim_core::integrators::{KernelKind, StepKernel, SubstepScheme};
use gluesim_core::potentials::{self, DriftProvider, PerturbationMode};
use gluesim_core::state::{Schedule, Tempering};
use gluesim_core::units::{step_for_stiffness, Units};

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub units: UnitsSection,
    pub schedule: ScheduleSection,
    pub potential: PotentialSection,
    pub sampler: SamplerSection,
    #[serde(default)]
    pub exactness: ExactnessSection,
    #[serde(default)]
    pub glue: Option<GlueSection>,
    #[serde(default)]
    pub lattice: Option<LatticeSection>,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct UnitsSection {
    pub temperature: Option<f64>,
    #[serde(default = "one")]
    pub k_b: f64,
    pub diffusion: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub n_steps: usize,
    pub dt: Option<f64>,
    pub stiffness: Option<f64>,
    #[serde(default)]
    pub tempering: TemperingKind,
    pub upsilon: Option<f64>,
    #[serde(default = "half")]
    pub split_vertical: f64,
    #[serde(default = "half")]
    pub split_horizontal: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemperingKind {
    #[default]
    None,
    Constant,
    Geometric,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSection {
    pub kind: PotentialKind,
    pub kappa: Option<f64>,
    pub center: Option<Vec<f64>>,
    pub barrier: Option<f64>,
    pub width: Option<f64>,
    pub dim: Option<usize>,
    pub heights: Option<[f64; 3]>,
    #[serde(default)]
    pub eps_bar: f64,
    #[serde(default)]
    pub perturbation: PerturbationKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PotentialKind {
    Quadratic,
    DoubleWell,
    TorsionRing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbationKind {
    #[default]
    ConstantShift,
    SmoothRandom,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    pub kind: SamplerKind,
    #[serde(default = "one_usize")]
    pub batch: usize,
    pub gamma: Option<f64>,
    #[serde(default)]
    pub substep: SubstepKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    Em,
    Harmonic,
    Heun,
    Underdamped,
    Strang,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SubstepKind {
    #[default]
    Heun,
    Em,
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExactnessSection {
    #[serde(default)]
    pub mh_enabled: bool,
    #[serde(default)]
    pub mh_target: MhTarget,
    #[serde(default)]
    pub arex_enabled: bool,
    pub lambda_intervals: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MhTarget {
    #[default]
    Bare,
    Glued,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GlueSection {
    pub kind: GlueSectionKind,
    pub k: Option<f64>,
    pub k_a: Option<f64>,
    pub r_min: Option<f64>,
    #[serde(default = "one_usize")]
    pub neighbors: usize,
    #[serde(default = "default_rho")]
    pub rho: f64,
    pub eps: Option<f64>,
    #[serde(default = "yes")]
    pub align: bool,
    #[serde(default)]
    pub distance_mode: DistanceModeKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GlueSectionKind {
    Adjacent,
    Anchored,
    RadialRmin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceModeKind {
    #[default]
    PerFrame,
    Pairwise,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSection {
    pub slices: usize,
    pub replicas: usize,
    pub iterations: usize,
    #[serde(default)]
    pub horizontal: HorizontalKind,
    #[serde(default)]
    pub workers: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum HorizontalKind {
    #[default]
    PureNoise,
    AdjacentGlue,
    Potential,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub dir: String,
    #[serde(default = "default_prefix")]
    pub prefix: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: default_dir(),
            prefix: default_prefix(),
        }
    }
}

fn one() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}
fn one_usize() -> usize {
    1
}
fn yes() -> bool {
    true
}
fn default_rho() -> f64 {
    0.6
}
fn default_dir() -> String {
    "out".into()
}
fn default_prefix() -> String {
    "run".into()
}

impl RunConfig {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| anyhow!("config error: {e}"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match (self.units.temperature, self.units.diffusion) {
            (Some(_), Some(_)) => {
                bail!("config error: [units] accepts temperature or diffusion, not both")
            }
            (None, None) => bail!("config error: [units] requires temperature or diffusion"),
            _ => {}
        }
        match (self.schedule.dt, self.schedule.stiffness) {
            (Some(_), Some(_)) => {
                bail!("config error: [schedule] accepts dt or stiffness, not both")
            }
            (None, None) => bail!("config error: [schedule] requires dt or stiffness"),
            _ => {}
        }
        if self.schedule.tempering != TemperingKind::None && self.schedule.upsilon.is_none() {
            bail!("config error: [schedule] tempering requires upsilon");
        }
        let p = &self.potential;
        match p.kind {
            PotentialKind::Quadratic => {
                require(p.kappa.is_some(), "[potential] quadratic requires kappa")?;
                require(p.center.is_some(), "[potential] quadratic requires center")?;
                forbid(
                    p.barrier.is_none() && p.width.is_none(),
                    "[potential] barrier/width do not apply to quadratic",
                )?;
                forbid(
                    p.heights.is_none(),
                    "[potential] heights do not apply to quadratic",
                )?;
            }
            PotentialKind::DoubleWell => {
                require(
                    p.barrier.is_some(),
                    "[potential] double-well requires barrier",
                )?;
                require(p.width.is_some(), "[potential] double-well requires width")?;
                forbid(
                    p.kappa.is_none() && p.center.is_none(),
                    "[potential] kappa/center do not apply to double-well",
                )?;
                forbid(
                    p.heights.is_none(),
                    "[potential] heights do not apply to double-well",
                )?;
            }
            PotentialKind::TorsionRing => {
                require(
                    p.heights.is_some(),
                    "[potential] torsion-ring requires heights",
                )?;
                forbid(
                    p.kappa.is_none() && p.center.is_none(),
                    "[potential] kappa/center do not apply to torsion-ring",
                )?;
                forbid(
                    p.barrier.is_none() && p.width.is_none(),
                    "[potential] barrier/width do not apply to torsion-ring",
                )?;
            }
        }
        if self.sampler.kind == SamplerKind::Underdamped && self.sampler.gamma.is_none() {
            bail!("config error: [sampler] underdamped requires gamma");
        }
        if self.exactness.mh_enabled && self.sampler.kind == SamplerKind::Heun {
            bail!("config error: mh_enabled requires a proposal with closed-form density (em, harmonic, or strang with em substeps)");
        }
        if self.exactness.mh_target == MhTarget::Glued {
            let radial = matches!(
                self.glue.as_ref().map(|g| g.kind),
                Some(GlueSectionKind::RadialRmin)
            );
            if !radial || self.sampler.kind != SamplerKind::Em {
                bail!("config error: mh_target = \"glued\" requires [glue] kind = \"radial-rmin\" with the em sampler");
            }
        }
        if self.exactness.arex_enabled {
            let Some(lat) = &self.lattice else {
                bail!("config error: arex_enabled requires a [lattice] section");
            };
            if lat.replicas < 2 {
                bail!("config error: arex_enabled requires at least 2 replicas");
            }
            if lat.horizontal != HorizontalKind::Potential {
                bail!("config error: arex_enabled requires [lattice] horizontal = \"potential\" (the sheet scales the configured potential)");
            }
            if let Some(iv) = self.exactness.lambda_intervals {
                if iv != lat.replicas - 1 {
                    bail!(
                        "config error: lambda_intervals ({iv}) must equal replicas - 1 ({})",
                        lat.replicas - 1
                    );
                }
            }
        }
        if let Some(g) = &self.glue {
            if g.kind == GlueSectionKind::RadialRmin && g.r_min.is_none() {
                bail!("config error: [glue] radial-rmin requires r_min");
            }
            if g.kind == GlueSectionKind::Anchored && g.k_a.is_none() {
                bail!("config error: [glue] anchored requires k_a");
            }
        }
        Ok(())
    }

    pub fn units(&self) -> Result<Units> {
        let u = match (self.units.temperature, self.units.diffusion) {
            (Some(t), None) => Units::from_temperature(t, self.units.k_b)?,
            (None, Some(d)) => Units::from_diffusion(d)?,
            _ => unreachable!("validated"),
        };
        Ok(u)
    }

    pub fn dt(&self) -> Result<f64> {
        let units = self.units()?;
        Ok(match (self.schedule.dt, self.schedule.stiffness) {
            (Some(dt), None) => dt,
            (None, Some(k)) => step_for_stiffness(k, units)?,
            _ => unreachable!("validated"),
        })
    }

    pub fn schedule(&self) -> Result<Schedule> {
        let dt = self.dt()?;
        let tempering = match self.schedule.tempering {
            TemperingKind::None => Tempering::None,
            TemperingKind::Constant => Tempering::Constant(self.schedule.upsilon.unwrap()),
            TemperingKind::Geometric => Tempering::Geometric {
                upsilon_max: self.schedule.upsilon.unwrap(),
            },
        };
        Ok(Schedule::build(
            self.schedule.n_steps,
            dt,
            tempering,
            (self.schedule.split_vertical, self.schedule.split_horizontal),
        )?)
    }

    /// The configured drift provider, via the kind registry.
    pub fn potential(&self) -> Result<Arc<dyn DriftProvider>> {
        let p = &self.potential;
        let base: Arc<dyn DriftProvider> = match p.kind {
            PotentialKind::Quadratic => Arc::new(potentials::make_quadratic(
                p.kappa.unwrap(),
                p.center.clone().unwrap(),
            )?),
            PotentialKind::DoubleWell => Arc::new(potentials::make_double_well_nd(
                p.barrier.unwrap(),
                p.width.unwrap(),
                p.dim.unwrap_or(1),
            )?),
            PotentialKind::TorsionRing => {
                Arc::new(potentials::make_torsion_ring(p.heights.unwrap())?)
            }
        };
        if p.eps_bar > 0.0 {
            let mode = match p.perturbation {
                PerturbationKind::ConstantShift => PerturbationMode::ConstantShift,
                PerturbationKind::SmoothRandom => PerturbationMode::SmoothRandom {
                    frequency: 1.0,
                    phase_seed: 1,
                },
            };
            Ok(Arc::new(potentials::perturb(base, p.eps_bar, mode)?))
        } else {
            Ok(base)
        }
    }

    pub fn kernel(&self) -> Result<StepKernel> {
        let units = self.units()?;
        let drift = self.potential()?;
        let kind = match self.sampler.kind {
            SamplerKind::Em => KernelKind::EmOverdamped,
            SamplerKind::Harmonic => KernelKind::Harmonic,
            SamplerKind::Heun => KernelKind::Heun,
            SamplerKind::Strang => KernelKind::StrangComposed,
            SamplerKind::Underdamped => {
                bail!("underdamped runs use the dedicated velocity driver, not StepKernel")
            }
        };
        let scheme = match self.sampler.substep {
            SubstepKind::Heun => SubstepScheme::Heun,
            SubstepKind::Em => SubstepScheme::Em,
        };
        let mut k = StepKernel::new(kind, drift, units).with_substep(scheme);
        k.split = (self.schedule.split_vertical, self.schedule.split_horizontal);
        Ok(k)
    }

    pub fn glue_spec(&self) -> Result<Option<GlueSpec>> {
        let Some(g) = &self.glue else { return Ok(None) };
        let dt = self.dt()?;
        let units = self.units()?;
        let kind = match g.kind {
            GlueSectionKind::Adjacent => GlueKind::Adjacent { k_override: g.k },
            GlueSectionKind::Anchored => GlueKind::Anchored {
                k_a: g.k_a.unwrap(),
            },
            GlueSectionKind::RadialRmin => GlueKind::RadialRmin,
        };
        let spec = GlueSpec {
            kind,
            k: g.k
                .unwrap_or(gluesim_core::units::stiffness_for_step(dt, units)?),
            r_min: g.r_min.unwrap_or(1.0),
            neighbors: g.neighbors,
            rho: g.rho,
            eps: g.eps.unwrap_or(gluesim_core::tol::RADIAL_GLUE_EPS),
            align: g.align,
            distance_mode: match g.distance_mode {
                DistanceModeKind::PerFrame => DistanceMode::PerFrame,
                DistanceModeKind::Pairwise => DistanceMode::Pairwise,
            },
        };
        spec.validate()?;
        Ok(Some(spec))
    }
}

fn require(ok: bool, msg: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        bail!("config error: {msg}")
    }
}

fn forbid(ok: bool, msg: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        bail!("config error: {msg}")
    }
}
