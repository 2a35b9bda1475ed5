//! Randomized property tests for the numeric kernels.

use proptest::prelude::*;

use avatar_core::geometry::closest_point_on_triangle;
use avatar_core::img::{srgb_decode, srgb_encode};
use avatar_core::math::vec3;
use avatar_core::render::composite;

proptest! {
    /// Compositing is a convex combination: weights lie in [0, 1], sum with
    /// the residual transmittance to exactly 1, and the output color stays
    /// inside the hull of the sample colors and background.
    #[test]
    fn composite_is_convex_combination(
        samples in prop::collection::vec((0.0f64..60.0, 1e-4f64..0.3, 0.0f64..1.0), 1..24),
        bg in 0.0f64..1.0,
    ) {
        let sigmas: Vec<f64> = samples.iter().map(|s| s.0).collect();
        let dts: Vec<f64> = samples.iter().map(|s| s.1).collect();
        let colors: Vec<[f64; 3]> = samples.iter().map(|s| [s.2; 3]).collect();
        let (rgb, alpha, weights) = composite(&sigmas, &colors, &dts, [bg; 3]);

        let t_n: f64 = sigmas.iter().zip(&dts).map(|(&s, &dt)| (-s * dt).exp()).product();
        prop_assert!((weights.iter().sum::<f64>() + t_n - 1.0).abs() < 1e-12);
        prop_assert!(weights.iter().all(|&w| (0.0..=1.0).contains(&w)));
        prop_assert!((0.0..=1.0 + 1e-12).contains(&alpha));

        let lo = samples.iter().map(|s| s.2).fold(bg, f64::min) - 1e-12;
        let hi = samples.iter().map(|s| s.2).fold(bg, f64::max) + 1e-12;
        prop_assert!(rgb.iter().all(|&c| (lo..=hi).contains(&c)));
    }

    /// The sRGB transfer curve round-trips on the unit interval.
    #[test]
    fn srgb_round_trips(x in 0.0f64..=1.0) {
        prop_assert!((srgb_decode(srgb_encode(x)) - x).abs() < 1e-12);
        prop_assert!((srgb_encode(srgb_decode(x)) - x).abs() < 1e-12);
    }

    /// The closest point on a triangle is no farther than any vertex and
    /// its barycentric coordinates are a valid convex combination.
    #[test]
    fn closest_point_dominates_vertices(
        p in prop::array::uniform3(-2.0f64..2.0),
        a in prop::array::uniform3(-1.0f64..1.0),
        b in prop::array::uniform3(-1.0f64..1.0),
        c in prop::array::uniform3(-1.0f64..1.0),
    ) {
        let (p, a, b, c) = (
            vec3(p[0], p[1], p[2]),
            vec3(a[0], a[1], a[2]),
            vec3(b[0], b[1], b[2]),
            vec3(c[0], c[1], c[2]),
        );
        let (q, bary) = closest_point_on_triangle(p, a, b, c);
        let d = (p - q).norm();
        for v in [a, b, c] {
            prop_assert!(d <= (p - v).norm() + 1e-12);
        }
        prop_assert!(bary.iter().all(|&w| (-1e-12..=1.0 + 1e-12).contains(&w)));
        prop_assert!((bary.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let recon = a * bary[0] + b * bary[1] + c * bary[2];
        prop_assert!((recon - q).norm() < 1e-9);
    }
}
