//! Convex surrogates tangent at a linearization point.

/// Concave lower bound on `ln(1 + z)` that is tight at `z = z_i`:
/// `ln(1+z_i) + z_i/(z_i+1) − (z_i²/(z_i+1))/z`.
pub fn log_surrogate_lhs(z: f64, z_i: f64) -> f64 {
    (1.0 + z_i).ln() + z_i / (z_i + 1.0) - (z_i * z_i / (z_i + 1.0)) / z
}

/// Convex upper bound on `a·b` for positive `a`, `b`, tight at `(a_i, b_i)`.
pub fn bilinear_upper(a: f64, b: f64, a_i: f64, b_i: f64) -> f64 {
    0.5 * (b_i / a_i) * a * a + 0.5 * (a_i / b_i) * b * b
}

/// First-order lower bound on `s²` around `s_i`.
pub fn square_lower(s: f64, s_i: f64) -> f64 {
    s_i * s_i + 2.0 * s_i * (s - s_i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn pinned_values() {
        assert_relative_eq!(log_surrogate_lhs(3.0, 1.0), 1.0264805138932787, max_relative = 1e-15);
        assert_relative_eq!(log_surrogate_lhs(2.5, 2.5), 3.5f64.ln(), max_relative = 1e-14);
        assert_eq!(bilinear_upper(2.0, 1.0, 1.0, 1.0), 2.5);
        assert_relative_eq!(bilinear_upper(0.3, 7.0, 0.3, 7.0), 2.1, max_relative = 1e-14);
        assert_eq!(square_lower(3.0, 1.0), 5.0);
        assert_eq!(square_lower(-2.0, -2.0), 4.0);
    }

    proptest! {
        #[test]
        fn log_surrogate_is_lower(z in 1e-4f64..1e4, z_i in 1e-4f64..1e4) {
            prop_assert!(log_surrogate_lhs(z, z_i) <= (1.0 + z).ln() + 1e-12 * (1.0 + z).ln().max(1.0));
        }

        #[test]
        fn bilinear_is_upper(a in 1e-4f64..1e4, b in 1e-4f64..1e4, a_i in 1e-4f64..1e4, b_i in 1e-4f64..1e4) {
            prop_assert!(bilinear_upper(a, b, a_i, b_i) >= a * b * (1.0 - 1e-12));
        }

        #[test]
        fn square_is_lower(s in -1e3f64..1e3, s_i in -1e3f64..1e3) {
            prop_assert!(square_lower(s, s_i) <= s * s + 1e-9);
        }
    }
}
