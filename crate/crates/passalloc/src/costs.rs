//! Convex local cost functions with hand-derived gradients and Hessians.
//!
//! Every cost here is strongly convex on the operating interval, which is
//! what the gradient-gain bound of the controller needs. Finite differences
//! are used only as test oracles (see [`crate::oracle::fd_gradient_check`]);
//! the simulator itself is fully analytic and therefore deterministic.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CostError {
    #[error("curvature scan needs lo < hi, got [{lo}, {hi}]")]
    BadInterval { lo: f64, hi: f64 },
    #[error("curvature scan needs at least 2 samples, got {samples}")]
    TooFewSamples { samples: usize },
    #[error("non-finite Hessian value {value} at y = {y}")]
    NonFiniteHessian { y: f64, value: f64 },
    #[error("cost is not strongly convex on the scanned interval (min Hessian {h_min})")]
    NotStronglyConvex { h_min: f64 },
}

/// A scalar convex cost `f(y)` with analytic first and second derivatives.
///
/// `Quadratic` covers the storage-cost and average-consensus setups; the four
/// `Nmp*` costs are the heterogeneous objectives of the non-minimum-phase
/// experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CostFunction {
    /// `f(y) = a·y² + b·y + c` with `a > 0`.
    Quadratic { a: f64, b: f64, c: f64 },
    /// `f(y) = (y + 3)²`.
    Nmp1,
    /// `f(y) = y²·ln(1 + y²) + (y + 1)²`.
    Nmp2,
    /// `f(y) = ln(e^{-0.1y} + e^{0.3y}) + y²`.
    Nmp3,
    /// `f(y) = y² / (25·√(y² + 1)) + (y − 3)²`.
    Nmp4,
}

impl CostFunction {
    pub fn eval(&self, y: f64) -> f64 {
        match *self {
            CostFunction::Quadratic { a, b, c } => a * y * y + b * y + c,
            CostFunction::Nmp1 => (y + 3.0) * (y + 3.0),
            CostFunction::Nmp2 => y * y * (1.0 + y * y).ln() + (y + 1.0) * (y + 1.0),
            CostFunction::Nmp3 => log_sum_exp(-0.1 * y, 0.3 * y) + y * y,
            CostFunction::Nmp4 => {
                y * y / (25.0 * (y * y + 1.0).sqrt()) + (y - 3.0) * (y - 3.0)
            }
        }
    }

    pub fn gradient(&self, y: f64) -> f64 {
        match *self {
            CostFunction::Quadratic { a, b, .. } => 2.0 * a * y + b,
            CostFunction::Nmp1 => 2.0 * (y + 3.0),
            CostFunction::Nmp2 => {
                let s = 1.0 + y * y;
                2.0 * y * s.ln() + 2.0 * y * y * y / s + 2.0 * (y + 1.0)
            }
            CostFunction::Nmp3 => {
                // d/dy ln(e^{-0.1y} + e^{0.3y}) = -0.1 + 0.4·σ(0.4y)
                -0.1 + 0.4 * sigmoid(0.4 * y) + 2.0 * y
            }
            CostFunction::Nmp4 => {
                let s = y * y + 1.0;
                y * (y * y + 2.0) / (25.0 * s.powf(1.5)) + 2.0 * (y - 3.0)
            }
        }
    }

    pub fn hessian(&self, y: f64) -> f64 {
        match *self {
            CostFunction::Quadratic { a, .. } => 2.0 * a,
            CostFunction::Nmp1 => 2.0,
            CostFunction::Nmp2 => {
                let s = 1.0 + y * y;
                let y2 = y * y;
                2.0 * s.ln() + 4.0 * y2 / s + (6.0 * y2 + 2.0 * y2 * y2) / (s * s) + 2.0
            }
            CostFunction::Nmp3 => {
                let sig = sigmoid(0.4 * y);
                0.16 * sig * (1.0 - sig) + 2.0
            }
            CostFunction::Nmp4 => {
                let s = y * y + 1.0;
                (2.0 - y * y) / (25.0 * s.powf(2.5)) + 2.0
            }
        }
    }

    /// Min/max of the Hessian over a uniform grid on `[lo, hi]`.
    ///
    /// The lower value feeds the gradient-gain bound; both are recorded in
    /// run metadata so the gain selection stays auditable.
    pub fn curvature_bounds(
        &self,
        lo: f64,
        hi: f64,
        samples: usize,
    ) -> Result<(f64, f64), CostError> {
        if !(lo < hi) {
            return Err(CostError::BadInterval { lo, hi });
        }
        if samples < 2 {
            return Err(CostError::TooFewSamples { samples });
        }
        let mut h_min = f64::INFINITY;
        let mut h_max = f64::NEG_INFINITY;
        for k in 0..samples {
            let y = lo + (hi - lo) * (k as f64) / ((samples - 1) as f64);
            let h = self.hessian(y);
            if !h.is_finite() {
                return Err(CostError::NonFiniteHessian { y, value: h });
            }
            h_min = h_min.min(h);
            h_max = h_max.max(h);
        }
        Ok((h_min, h_max))
    }

    /// Lower curvature bound on the default operating interval.
    pub fn lower_curvature(&self) -> Result<f64, CostError> {
        let (lo, hi) = crate::OPERATING_INTERVAL;
        let (h_min, _) = self.curvature_bounds(lo, hi, crate::OPERATING_SAMPLES)?;
        if h_min <= 0.0 {
            return Err(CostError::NotStronglyConvex { h_min });
        }
        Ok(h_min)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(e^a + e^b)` without overflow.
fn log_sum_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    fn library() -> Vec<CostFunction> {
        vec![
            CostFunction::Quadratic {
                a: 0.1,
                b: -0.05,
                c: 1.0,
            },
            CostFunction::Nmp1,
            CostFunction::Nmp2,
            CostFunction::Nmp3,
            CostFunction::Nmp4,
        ]
    }

    fn centered_difference(f: &CostFunction, y: f64) -> f64 {
        let h = 1e-6;
        (f.eval(y + h) - f.eval(y - h)) / (2.0 * h)
    }

    #[test]
    fn quadratic_gradient_at_origin() {
        let f = CostFunction::Quadratic {
            a: 0.1,
            b: -0.05,
            c: 1.0,
        };
        assert_eq!(f.gradient(0.0), -0.05);
    }

    #[test]
    fn nmp1_minimizer() {
        assert_eq!(CostFunction::Nmp1.gradient(-3.0), 0.0);
    }

    #[test]
    fn nmp2_gradient_matches_finite_difference_at_half() {
        let f = CostFunction::Nmp2;
        let fd = centered_difference(&f, 0.5);
        let g = f.gradient(0.5);
        assert!((g - fd).abs() / (1.0 + g.abs()) < 1e-6);
    }

    #[test]
    fn nmp2_gradient_at_origin_is_two() {
        assert_abs_diff_eq!(CostFunction::Nmp2.gradient(0.0), 2.0, epsilon = 1e-15);
    }

    #[test]
    fn curvature_of_constant_hessian_costs() {
        let q = CostFunction::Quadratic {
            a: 1.0,
            b: 0.0,
            c: 0.0,
        };
        assert_eq!(q.curvature_bounds(-5.0, 5.0, 101).unwrap(), (2.0, 2.0));
        assert_eq!(
            CostFunction::Nmp1.curvature_bounds(-5.0, 5.0, 101).unwrap(),
            (2.0, 2.0)
        );
    }

    #[test]
    fn nmp3_lower_curvature_at_least_two() {
        let (h_min, _) = CostFunction::Nmp3.curvature_bounds(-5.0, 5.0, 1001).unwrap();
        assert!(h_min >= 2.0, "h_min = {h_min}");
    }

    #[test]
    fn all_library_costs_strongly_convex_on_operating_interval() {
        for f in library() {
            let h = f.lower_curvature().unwrap();
            assert!(h > 0.0, "{f:?} has h_min = {h}");
        }
    }

    #[test]
    fn curvature_scan_rejects_bad_arguments() {
        let f = CostFunction::Nmp1;
        assert!(matches!(
            f.curvature_bounds(1.0, 1.0, 10),
            Err(CostError::BadInterval { .. })
        ));
        assert!(matches!(
            f.curvature_bounds(-1.0, 1.0, 1),
            Err(CostError::TooFewSamples { .. })
        ));
    }

    #[test]
    fn first_order_convexity_inequality_on_random_pairs() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for f in library() {
            for _ in 0..1000 {
                let a = rng.gen_range(-10.0..10.0);
                let b = rng.gen_range(-10.0..10.0);
                let lhs = f.eval(a) - f.eval(b);
                let rhs = f.gradient(b) * (a - b);
                assert!(
                    lhs >= rhs - 1e-9,
                    "{f:?} violates convexity at a={a}, b={b}: {lhs} < {rhs}"
                );
            }
        }
    }

    #[test]
    fn gradient_matches_finite_difference_on_random_points() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for f in library() {
            for _ in 0..100 {
                let y = rng.gen_range(-10.0..10.0);
                let fd = centered_difference(&f, y);
                let g = f.gradient(y);
                assert!(
                    (g - fd).abs() / (1.0 + g.abs()) < 1e-6,
                    "{f:?} at y={y}: analytic {g}, fd {fd}"
                );
            }
        }
    }

    #[test]
    fn strong_monotonicity_of_gradients_on_random_pairs() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        for f in library() {
            let h_min = f.lower_curvature().unwrap();
            for _ in 0..500 {
                let a = rng.gen_range(-10.0..10.0);
                let b = rng.gen_range(-10.0..10.0);
                let lhs = (f.gradient(a) - f.gradient(b)) * (a - b);
                let rhs = h_min * (a - b) * (a - b);
                assert!(lhs >= rhs - 1e-8, "{f:?}: {lhs} < {rhs}");
            }
        }
    }

    #[test]
    fn curvature_bounds_bracket_fresh_samples() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for f in library() {
            let (lo, hi) = f.curvature_bounds(-10.0, 10.0, 4001).unwrap();
            for _ in 0..100 {
                let y = rng.gen_range(-10.0..10.0);
                let h = f.hessian(y);
                // Grid extrema can miss between-node extrema by O(Δ²).
                assert!(h >= lo - 1e-4 && h <= hi + 1e-4, "{f:?} at y={y}");
            }
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn any_cost() -> impl Strategy<Value = CostFunction> {
            prop_oneof![
                (0.05..3.0_f64, -2.0..2.0_f64, -5.0..5.0_f64)
                    .prop_map(|(a, b, c)| CostFunction::Quadratic { a, b, c }),
                Just(CostFunction::Nmp1),
                Just(CostFunction::Nmp2),
                Just(CostFunction::Nmp3),
                Just(CostFunction::Nmp4),
            ]
        }

        proptest! {
            #[test]
            fn first_order_convexity(f in any_cost(), a in -10.0..10.0_f64, b in -10.0..10.0_f64) {
                prop_assert!(f.eval(a) - f.eval(b) >= f.gradient(b) * (a - b) - 1e-9);
            }

            #[test]
            fn gradient_is_monotone(f in any_cost(), a in -10.0..10.0_f64, b in -10.0..10.0_f64) {
                prop_assert!((f.gradient(a) - f.gradient(b)) * (a - b) >= -1e-12);
            }
        }
    }

    #[test]
    fn hessian_matches_gradient_finite_difference() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(19);
        let h = 1e-5;
        for f in library() {
            for _ in 0..100 {
                let y = rng.gen_range(-8.0..8.0);
                let fd = (f.gradient(y + h) - f.gradient(y - h)) / (2.0 * h);
                assert!(
                    (f.hessian(y) - fd).abs() / (1.0 + fd.abs()) < 1e-5,
                    "{f:?} at y={y}"
                );
            }
        }
    }
}
