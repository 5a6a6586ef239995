//! Friction units and the stiffness/step-size map.
//!
//! The engine works in friction units: the friction coefficient is fixed at
//! one, so the diffusion coefficient is `D = k_B T` and `β D = 1`. Keeping
//! this explicit prevents hidden factors of the friction or of `k_B` from
//! reappearing in the kernels.

use crate::{Error, Result};

/// Unit system with `γ = 1` and `β·D = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Units {
    beta: f64,
    diffusion: f64,
}

impl Units {
    /// Units from a temperature and Boltzmann constant: `D = k_B T`,
    /// `β = 1/(k_B T)`.
    pub fn from_temperature(temperature: f64, k_b: f64) -> Result<Self> {
        if !(temperature > 0.0) || !(k_b > 0.0) {
            return Err(Error::domain(format!(
                "temperature and k_B must be positive, got T={temperature}, k_B={k_b}"
            )));
        }
        let diffusion = k_b * temperature;
        Ok(Units {
            beta: 1.0 / diffusion,
            diffusion,
        })
    }

    /// Units from the diffusion coefficient directly.
    pub fn from_diffusion(diffusion: f64) -> Result<Self> {
        if !(diffusion > 0.0) {
            return Err(Error::domain(format!(
                "diffusion must be positive, got {diffusion}"
            )));
        }
        Ok(Units {
            beta: 1.0 / diffusion,
            diffusion,
        })
    }

    /// Reduced units: `β = D = 1`.
    pub fn reduced() -> Self {
        Units {
            beta: 1.0,
            diffusion: 1.0,
        }
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn diffusion(&self) -> f64 {
        self.diffusion
    }

    /// Friction coefficient; fixed at one in this unit system.
    pub fn gamma(&self) -> f64 {
        1.0
    }

    /// Temperature implied by `D = k_B T` with `k_B = 1`.
    pub fn temperature(&self) -> f64 {
        self.diffusion
    }
}

impl Default for Units {
    fn default() -> Self {
        Units::reduced()
    }
}

/// Spring stiffness implied by a step size: `k(Δt) = 1/(2 D Δt)`, which
/// equals `β/(2 Δt)` in friction units.
pub fn stiffness_for_step(dt: f64, units: Units) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(Error::domain(format!(
            "step size must be positive, got {dt}"
        )));
    }
    Ok(1.0 / (2.0 * units.diffusion() * dt))
}

/// Step size implied by a spring stiffness: `Δt = β/(2k)`.
pub fn step_for_stiffness(k: f64, units: Units) -> Result<f64> {
    if !(k > 0.0) {
        return Err(Error::domain(format!(
            "stiffness must be positive, got {k}"
        )));
    }
    Ok(units.beta() / (2.0 * k))
}

/// Coefficient of the squared mismatch in the Boltzmann form of the
/// one-step kernel, `β/(4 D Δt)`.
pub fn kernel_exponent_coefficient(dt: f64, units: Units) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(Error::domain(format!(
            "step size must be positive, got {dt}"
        )));
    }
    Ok(units.beta() / (4.0 * units.diffusion() * dt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tol;

    #[test]
    fn beta_d_is_one() {
        for t in [0.1, 1.0, 300.0, 1e4] {
            let u = Units::from_temperature(t, 1.0).unwrap();
            assert!((u.beta() * u.diffusion() - 1.0).abs() <= tol::EXACT_REL);
            assert_eq!(u.gamma(), 1.0);
        }
        let u = Units::from_temperature(300.0, 0.0019872).unwrap();
        assert!((u.beta() * u.diffusion() - 1.0).abs() <= tol::EXACT_REL);
    }

    #[test]
    fn stiffness_examples() {
        let d1 = Units::from_diffusion(1.0).unwrap();
        assert_eq!(stiffness_for_step(0.5, d1).unwrap(), 1.0);
        let dhalf = Units::from_diffusion(0.5).unwrap();
        assert_eq!(stiffness_for_step(1.0, dhalf).unwrap(), 1.0);
        assert_eq!(stiffness_for_step(0.01, d1).unwrap(), 50.0);
    }

    #[test]
    fn step_examples() {
        let b1 = Units::reduced();
        assert_eq!(step_for_stiffness(0.5, b1).unwrap(), 1.0);
        assert_eq!(step_for_stiffness(1.0, b1).unwrap(), 0.5);
        let b2 = Units::from_diffusion(0.5).unwrap(); // beta = 2
        assert!((step_for_stiffness(50.0, b2).unwrap() - 0.02).abs() < tol::EXACT_REL);
    }

    #[test]
    fn round_trip_over_log_range() {
        let u = Units::from_diffusion(0.7).unwrap();
        for i in 0..1000 {
            let k = 10f64.powf(-6.0 + 12.0 * (i as f64) / 999.0);
            let dt = step_for_stiffness(k, u).unwrap();
            let k2 = stiffness_for_step(dt, u).unwrap();
            assert!((k2 - k).abs() <= tol::EXACT_REL * k, "k={k} k2={k2}");
        }
    }

    #[test]
    fn exponent_coefficient_example() {
        let u = Units::reduced();
        assert_eq!(kernel_exponent_coefficient(0.5, u).unwrap(), 0.5);
    }

    #[test]
    fn rejects_nonpositive() {
        let u = Units::reduced();
        assert!(stiffness_for_step(0.0, u).is_err());
        assert!(stiffness_for_step(-1.0, u).is_err());
        assert!(step_for_stiffness(0.0, u).is_err());
        assert!(Units::from_temperature(-1.0, 1.0).is_err());
    }
}
