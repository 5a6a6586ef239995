//! Property tests for structural invariants.

use proptest::prelude::*;

use gluesim_core::observables::{circular_acf, kabsch_align, AngleSeries};
use gluesim_core::rng::{gaussian_draw, RngStream, SiteId};
use gluesim_core::units::{step_for_stiffness, stiffness_for_step, Units};

proptest! {
    /// Permuting the order in which sites are drawn never changes any
    /// individual draw.
    #[test]
    fn rng_draws_are_order_independent(
        seed in any::<u64>(),
        sites in proptest::collection::vec((0u64..64, 0u64..64, 0u64..8), 2..20),
        swap in (0usize..19, 0usize..19),
    ) {
        let ids: Vec<SiteId> =
            sites.iter().map(|&(n, b, s)| SiteId::new(n, b, s)).collect();
        let forward: Vec<Vec<f64>> =
            ids.iter().map(|&s| gaussian_draw(RngStream::new(seed, s), 4)).collect();
        let mut shuffled = ids.clone();
        let (i, j) = (swap.0 % ids.len(), swap.1 % ids.len());
        shuffled.swap(i, j);
        let back: Vec<Vec<f64>> =
            shuffled.iter().map(|&s| gaussian_draw(RngStream::new(seed, s), 4)).collect();
        for (k, &site) in shuffled.iter().enumerate() {
            let orig = ids.iter().position(|&s| s == site).unwrap();
            prop_assert_eq!(&back[k], &forward[orig]);
        }
    }

    /// k -> dt -> k round trips within 1e-12 relative error across the
    /// full stiffness range and diffusion coefficients.
    #[test]
    fn stiffness_round_trip(
        log_k in -6.0f64..6.0,
        diffusion in 0.01f64..100.0,
    ) {
        let k = 10f64.powf(log_k);
        let u = Units::from_diffusion(diffusion).unwrap();
        let dt = step_for_stiffness(k, u).unwrap();
        let k2 = stiffness_for_step(dt, u).unwrap();
        prop_assert!((k2 - k).abs() <= 1e-12 * k);
    }

    /// The circular autocorrelation is invariant under adding multiples of
    /// 2 pi to individual entries and a common shift to all entries.
    #[test]
    fn circular_acf_wrap_invariant(
        raw in proptest::collection::vec(-10.0f64..10.0, 16..64),
        shift in -3.0f64..3.0,
        wraps in proptest::collection::vec(-2i32..3, 16..64),
    ) {
        let a = circular_acf(&AngleSeries::new(raw.clone()), 5).unwrap();
        let twisted: Vec<f64> = raw
            .iter()
            .zip(wraps.iter().cycle())
            .map(|(t, &w)| t + shift + 2.0 * std::f64::consts::PI * w as f64)
            .collect();
        let b = circular_acf(&AngleSeries::new(twisted), 5).unwrap();
        for lag in 0..=5 {
            prop_assert!((a[lag] - b[lag]).abs() < 1e-9, "lag {}: {} vs {}", lag, a[lag], b[lag]);
            prop_assert!(a[lag] <= 1.0 + 1e-12 && a[lag] >= -1.0 - 1e-12);
        }
    }

    /// Kabsch alignment always returns a proper rotation, even for
    /// degenerate point sets.
    #[test]
    fn kabsch_is_always_proper(
        coords in proptest::collection::vec(-5.0f64..5.0, 9..30),
        collapse in proptest::bool::ANY,
    ) {
        let n = coords.len() / 3;
        let reference: Vec<[f64; 3]> =
            (0..n).map(|i| [coords[3 * i], coords[3 * i + 1], coords[3 * i + 2]]).collect();
        let moving: Vec<[f64; 3]> = if collapse {
            // Collinear copy: worst case for the rotation problem.
            (0..n).map(|i| [i as f64, 0.0, 0.0]).collect()
        } else {
            reference.iter().map(|p| [-p[0], p[1], p[2]]).collect()
        };
        let a = kabsch_align(&reference, &moving).unwrap();
        prop_assert!((a.rotation.determinant() - 1.0).abs() < 1e-9);
        // Orthogonality.
        let rtr = a.rotation.transpose() * a.rotation;
        prop_assert!((rtr - nalgebra::Matrix3::identity()).norm() < 1e-9);
    }
}
