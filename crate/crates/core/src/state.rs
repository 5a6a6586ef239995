//! Configuration states and step schedules.

use crate::{Error, Result};

/// One lattice site's content: a point in R^(N*d), optionally carrying a
/// velocity of the same length when the dynamics are underdamped.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigurationState {
    pub positions: Vec<f64>,
    pub velocities: Option<Vec<f64>>,
    pub slice_index: usize,
    pub replica_index: usize,
}

impl ConfigurationState {
    pub fn new(positions: Vec<f64>, slice_index: usize, replica_index: usize) -> Result<Self> {
        let s = ConfigurationState {
            positions,
            velocities: None,
            slice_index,
            replica_index,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_velocities(
        positions: Vec<f64>,
        velocities: Vec<f64>,
        slice_index: usize,
        replica_index: usize,
    ) -> Result<Self> {
        if velocities.len() != positions.len() {
            return Err(Error::Shape(format!(
                "velocities ({}) and positions ({}) differ in length",
                velocities.len(),
                positions.len()
            )));
        }
        let s = ConfigurationState {
            positions,
            velocities: Some(velocities),
            slice_index,
            replica_index,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.positions.len()
    }

    fn validate(&self) -> Result<()> {
        let finite = self.positions.iter().all(|x| x.is_finite())
            && self
                .velocities
                .as_ref()
                .map(|v| v.iter().all(|x| x.is_finite()))
                .unwrap_or(true);
        if !finite {
            return Err(Error::domain(
                "state coordinates must be finite".to_string(),
            ));
        }
        Ok(())
    }
}

/// Tempering profile for [`Schedule::build`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tempering {
    /// All multipliers one.
    None,
    /// Constant multiplier.
    Constant(f64),
    /// Early hot, late cold: geometric decay from `upsilon_max` at step 0
    /// down to exactly one at the final step.
    Geometric { upsilon_max: f64 },
}

/// Fully specified step schedule: per-step sizes, per-step variance
/// multipliers, and the vertical/horizontal split used by composed kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    steps: Vec<f64>,
    tempering: Vec<f64>,
    split: (f64, f64),
    horizon: f64,
}

impl Schedule {
    /// Uniform schedule of `n` steps of size `dt`, no tempering, even split.
    pub fn uniform(n: usize, dt: f64) -> Result<Self> {
        Schedule::new(vec![dt; n], vec![1.0; n], (0.5, 0.5))
    }

    pub fn new(steps: Vec<f64>, tempering: Vec<f64>, split: (f64, f64)) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::domain("schedule must contain at least one step"));
        }
        if steps.len() != tempering.len() {
            return Err(Error::Shape(format!(
                "steps ({}) and tempering ({}) differ in length",
                steps.len(),
                tempering.len()
            )));
        }
        if let Some(bad) = steps.iter().find(|&&dt| !(dt > 0.0) || !dt.is_finite()) {
            return Err(Error::domain(format!(
                "every step must be positive, got {bad}"
            )));
        }
        if let Some(bad) = tempering.iter().find(|&&u| !(u > 0.0) || !u.is_finite()) {
            return Err(Error::domain(format!(
                "every tempering multiplier must be positive, got {bad}"
            )));
        }
        let (av, ah) = split;
        if !(av >= 0.0 && ah >= 0.0) || (av + ah - 1.0).abs() > crate::tol::EXACT_REL {
            return Err(Error::domain(format!(
                "split fractions must be nonnegative and sum to 1, got ({av}, {ah})"
            )));
        }
        let horizon = steps.iter().sum();
        Ok(Schedule {
            steps,
            tempering,
            split,
            horizon,
        })
    }

    /// Uniform steps with a tempering profile.
    pub fn build(n: usize, dt: f64, tempering: Tempering, split: (f64, f64)) -> Result<Self> {
        let profile = match tempering {
            Tempering::None => vec![1.0; n],
            Tempering::Constant(u) => vec![u; n],
            Tempering::Geometric { upsilon_max } => {
                if !(upsilon_max > 0.0) {
                    return Err(Error::domain(format!(
                        "upsilon_max must be positive, got {upsilon_max}"
                    )));
                }
                (0..n)
                    .map(|i| {
                        if n == 1 {
                            1.0
                        } else {
                            // upsilon_max at i = 0, exactly 1.0 at i = n-1
                            let frac = (n - 1 - i) as f64 / (n - 1) as f64;
                            upsilon_max.powf(frac)
                        }
                    })
                    .collect()
            }
        };
        Schedule::new(vec![dt; n], profile, split)
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn step(&self, n: usize) -> f64 {
        self.steps[n]
    }

    pub fn upsilon(&self, n: usize) -> f64 {
        self.tempering[n]
    }

    pub fn steps(&self) -> &[f64] {
        &self.steps
    }

    pub fn tempering(&self) -> &[f64] {
        &self.tempering
    }

    pub fn split(&self) -> (f64, f64) {
        self.split
    }

    /// Total horizon, accumulated exactly as the sum of the steps.
    pub fn horizon(&self) -> f64 {
        self.horizon
    }
}
