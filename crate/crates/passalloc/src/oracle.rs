//! Independent ground truth for the distributed algorithm.
//!
//! [`solve_allocation`] solves the coupled problem centrally from the
//! optimality conditions alone — bisection on the common multiplier, with a
//! safeguarded Newton inner solve per agent — and never touches the
//! controller or simulator code paths, so simulation results can be checked
//! against it. [`exp_rate_fit`] quantifies convergence speed from an error
//! series, and [`fd_gradient_check`] is the finite-difference oracle for the
//! analytic cost derivatives.

use thiserror::Error;

use crate::costs::CostFunction;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("costs ({costs}) and data ({data}) lengths differ")]
    LengthMismatch { costs: usize, data: usize },
    #[error("no agents given")]
    Empty,
    #[error("multiplier bracket exhausted at |lambda| = {limit:e}; problem looks unbounded")]
    Unbounded { limit: f64 },
    #[error("inner gradient solve failed for agent {agent} at lambda0 = {lambda0}")]
    InnerSolveFailed { agent: usize, lambda0: f64 },
    #[error("fit window has {got} samples, need at least {need}")]
    InsufficientData { got: usize, need: usize },
}

/// Centralized optimum of `min Σ fᵢ(yᵢ)` s.t. `Σ yᵢ = Σ dᵢ⁰`.
#[derive(Debug, Clone)]
pub struct AllocationSolution {
    pub y_star: Vec<f64>,
    /// Common multiplier: `∇fᵢ(yᵢ*) + λ₀ = 0` for every `i`.
    pub lambda0: f64,
    pub objective: f64,
}

/// Log-linear fit of an error series.
#[derive(Debug, Clone, Copy)]
pub struct RateFit {
    /// Decay rate (negated slope of `ln e` vs `t`); positive means decay.
    pub rate: f64,
    pub r_squared: f64,
}

const LAMBDA_LIMIT: f64 = 1e6;
const BALANCE_TOL: f64 = 1e-10;
const MAX_OUTER_ITERS: usize = 200;

/// Solves the allocation problem by scalar bisection on the multiplier.
///
/// For each trial `λ₀`, every agent's response `yᵢ(λ₀)` solves the strictly
/// monotone equation `∇fᵢ(y) = −λ₀` (safeguarded Newton with a bisection
/// fallback); the aggregate `Σ yᵢ(λ₀)` is strictly decreasing in `λ₀`, so the
/// balance equation has a unique root, found by bisection to `1e-10`.
pub fn solve_allocation(
    costs: &[CostFunction],
    d0: &[f64],
) -> Result<AllocationSolution, OracleError> {
    if costs.is_empty() {
        return Err(OracleError::Empty);
    }
    if costs.len() != d0.len() {
        return Err(OracleError::LengthMismatch {
            costs: costs.len(),
            data: d0.len(),
        });
    }
    let target: f64 = d0.iter().sum();

    let total_response = |lambda0: f64| -> Result<f64, OracleError> {
        let mut sum = 0.0;
        for (agent, cost) in costs.iter().enumerate() {
            sum += gradient_inverse(cost, -lambda0).ok_or(OracleError::InnerSolveFailed {
                agent,
                lambda0,
            })?;
        }
        Ok(sum)
    };

    // Bracket the root: Σy(λ) decreases in λ, so grow the interval until the
    // target is straddled.
    let mut lo = -1.0;
    let mut hi = 1.0;
    while total_response(lo)? < target {
        lo *= 2.0;
        if lo.abs() > LAMBDA_LIMIT {
            return Err(OracleError::Unbounded { limit: LAMBDA_LIMIT });
        }
    }
    while total_response(hi)? > target {
        hi *= 2.0;
        if hi > LAMBDA_LIMIT {
            return Err(OracleError::Unbounded { limit: LAMBDA_LIMIT });
        }
    }

    let mut lambda0 = 0.5 * (lo + hi);
    for _ in 0..MAX_OUTER_ITERS {
        lambda0 = 0.5 * (lo + hi);
        let balance = total_response(lambda0)? - target;
        if balance.abs() < BALANCE_TOL {
            break;
        }
        if balance > 0.0 {
            lo = lambda0;
        } else {
            hi = lambda0;
        }
    }

    let mut y_star = Vec::with_capacity(costs.len());
    for (agent, cost) in costs.iter().enumerate() {
        y_star.push(gradient_inverse(cost, -lambda0).ok_or(OracleError::InnerSolveFailed {
            agent,
            lambda0,
        })?);
    }
    let objective = y_star.iter().zip(costs).map(|(&y, f)| f.eval(y)).sum();
    Ok(AllocationSolution {
        y_star,
        lambda0,
        objective,
    })
}

/// Solves `∇f(y) = g` for the unique root of a strongly convex cost.
/// Newton from 0 with a shrinking bisection bracket as safeguard.
fn gradient_inverse(cost: &CostFunction, g: f64) -> Option<f64> {
    let mut lo = -LAMBDA_LIMIT;
    let mut hi = LAMBDA_LIMIT;
    if cost.gradient(lo) > g || cost.gradient(hi) < g {
        return None;
    }
    let mut y = 0.0;
    for _ in 0..200 {
        let r = cost.gradient(y) - g;
        if r.abs() < 1e-13 {
            return Some(y);
        }
        if r > 0.0 {
            hi = y;
        } else {
            lo = y;
        }
        let h = cost.hessian(y);
        let newton = y - r / h;
        // Keep the iterate inside the bracket; fall back to bisection.
        y = if h > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    let r = cost.gradient(y) - g;
    (r.abs() < 1e-9).then_some(y)
}

/// Log-linear decay fit over the default window
/// `error ∈ [1e-8, 0.5·error[0]]`.
pub fn exp_rate_fit(times: &[f64], errors: &[f64]) -> Result<RateFit, OracleError> {
    exp_rate_fit_in_window(times, errors, 1e-8, 0.5)
}

/// Log-linear decay fit over `error ∈ [floor, init_frac·error[0]]`.
///
/// The window starts at the first sample at or below `init_frac·error[0]`
/// (skipping the mixed-mode transient) and ends at the last sample at or
/// above `floor` (before numerical noise dominates). Needs 10 samples.
pub fn exp_rate_fit_in_window(
    times: &[f64],
    errors: &[f64],
    floor: f64,
    init_frac: f64,
) -> Result<RateFit, OracleError> {
    let n = times.len().min(errors.len());
    if n == 0 {
        return Err(OracleError::InsufficientData { got: 0, need: 10 });
    }
    let hi = init_frac * errors[0];
    let start = (0..n).find(|&i| errors[i] <= hi);
    let end = (0..n).rev().find(|&i| errors[i] >= floor);
    let (start, end) = match (start, end) {
        (Some(s), Some(e)) if s < e => (s, e),
        _ => return Err(OracleError::InsufficientData { got: 0, need: 10 }),
    };
    let points: Vec<(f64, f64)> = (start..=end)
        .filter(|&i| errors[i] >= floor)
        .map(|i| (times[i], errors[i].ln()))
        .collect();
    if points.len() < 10 {
        return Err(OracleError::InsufficientData {
            got: points.len(),
            need: 10,
        });
    }

    let m = points.len() as f64;
    let mean_t = points.iter().map(|p| p.0).sum::<f64>() / m;
    let mean_l = points.iter().map(|p| p.1).sum::<f64>() / m;
    let mut stt = 0.0;
    let mut stl = 0.0;
    let mut sll = 0.0;
    for &(t, l) in &points {
        stt += (t - mean_t) * (t - mean_t);
        stl += (t - mean_t) * (l - mean_l);
        sll += (l - mean_l) * (l - mean_l);
    }
    let slope = stl / stt;
    let r_squared = if sll > 0.0 { stl * stl / (stt * sll) } else { 1.0 };
    Ok(RateFit {
        rate: -slope,
        r_squared,
    })
}

/// Max relative disagreement between the analytic gradient and a centered
/// finite difference (`h = 1e-6`) over the given points.
pub fn fd_gradient_check(cost: &CostFunction, points: &[f64]) -> f64 {
    let h = 1e-6;
    points
        .iter()
        .map(|&y| {
            let fd = (cost.eval(y + h) - cost.eval(y - h)) / (2.0 * h);
            let g = cost.gradient(y);
            (g - fd).abs() / (1.0 + g.abs())
        })
        .fold(0.0_f64, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    fn inventory_costs() -> Vec<CostFunction> {
        (1..=4)
            .map(|i| CostFunction::Quadratic {
                a: 0.1 * i as f64,
                b: -0.05 * i as f64,
                c: i as f64,
            })
            .collect()
    }

    #[test]
    fn inventory_allocation_matches_closed_form() {
        let sol = solve_allocation(&inventory_costs(), &[1.0, 2.0, 3.0, 4.0]).unwrap();
        // Closed form for quadratics: yᵢ = (−λ₀ − bᵢ)/(2aᵢ), Σyᵢ = 10
        // gives λ₀ = −0.864 and y* = (4.57, 2.41, 1.69, 1.33).
        assert_abs_diff_eq!(sol.lambda0, -0.864, epsilon = 1e-9);
        for (got, want) in sol.y_star.iter().zip(&[4.57, 2.41, 1.69, 1.33]) {
            assert_abs_diff_eq!(got, want, epsilon = 0.005);
        }
    }

    #[test]
    fn equal_quadratics_average_the_data() {
        let costs = vec![
            CostFunction::Quadratic {
                a: 0.5,
                b: 0.0,
                c: 0.0,
            };
            4
        ];
        let sol = solve_allocation(&costs, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        for y in &sol.y_star {
            assert_abs_diff_eq!(y, &2.5, epsilon = 1e-9);
        }
        assert_abs_diff_eq!(sol.lambda0, -2.5, epsilon = 1e-9);
    }

    #[test]
    fn kkt_conditions_hold_to_tight_tolerance() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let nmp = [
            CostFunction::Nmp1,
            CostFunction::Nmp2,
            CostFunction::Nmp3,
            CostFunction::Nmp4,
        ];
        for trial in 0..20 {
            let (costs, d0): (Vec<CostFunction>, Vec<f64>) = if trial % 2 == 0 {
                (
                    (0..4)
                        .map(|_| CostFunction::Quadratic {
                            a: rng.gen_range(0.1..2.0),
                            b: rng.gen_range(-1.0..1.0),
                            c: 0.0,
                        })
                        .collect(),
                    (0..4).map(|_| rng.gen_range(-5.0..5.0)).collect(),
                )
            } else {
                (nmp.to_vec(), (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect())
            };
            let sol = solve_allocation(&costs, &d0).unwrap();
            for (y, f) in sol.y_star.iter().zip(&costs) {
                assert!(
                    (f.gradient(*y) + sol.lambda0).abs() < 1e-9,
                    "stationarity violated on trial {trial}"
                );
            }
            let balance = (sol.y_star.iter().sum::<f64>() - d0.iter().sum::<f64>()).abs();
            assert!(balance < 1e-9, "balance {balance} on trial {trial}");
        }
    }

    #[test]
    fn heterogeneous_cost_fixture() {
        let costs = [
            CostFunction::Nmp1,
            CostFunction::Nmp2,
            CostFunction::Nmp3,
            CostFunction::Nmp4,
        ];
        let sol = solve_allocation(&costs, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        for (y, f) in sol.y_star.iter().zip(&costs) {
            assert!((f.gradient(*y) + sol.lambda0).abs() < 1e-9);
        }
        assert_abs_diff_eq!(sol.y_star.iter().sum::<f64>(), 10.0, epsilon = 1e-9);
    }

    #[test]
    fn exact_exponential_fit() {
        let times: Vec<f64> = (0..2000).map(|i| 0.01 * i as f64).collect();
        let errors: Vec<f64> = times.iter().map(|t| (-2.0 * t).exp()).collect();
        let fit = exp_rate_fit(&times, &errors).unwrap();
        assert_abs_diff_eq!(fit.rate, 2.0, epsilon = 1e-6);
        assert!(fit.r_squared > 0.999999);
    }

    #[test]
    fn algebraic_decay_fits_poorly() {
        let times: Vec<f64> = (0..200_000).map(|i| 0.01 * i as f64).collect();
        let errors: Vec<f64> = times.iter().map(|t| 1.0 / (1.0 + t)).collect();
        let fit = exp_rate_fit_in_window(&times, &errors, 1e-3, 0.5).unwrap();
        assert!(fit.r_squared < 0.99, "r² = {}", fit.r_squared);
    }

    #[test]
    fn short_window_is_an_error() {
        let times = [0.0, 1.0, 2.0];
        let errors = [1.0, 0.4, 0.2];
        assert!(matches!(
            exp_rate_fit(&times, &errors),
            Err(OracleError::InsufficientData { .. })
        ));
    }

    #[test]
    fn finite_difference_checks() {
        let q = CostFunction::Quadratic {
            a: 1.0,
            b: 2.0,
            c: 3.0,
        };
        assert!(fd_gradient_check(&q, &[-1.0, 0.0, 1.0]) < 1e-9);

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(37);
        let pts: Vec<f64> = (0..100).map(|_| rng.gen_range(-5.0..5.0)).collect();
        assert!(fd_gradient_check(&CostFunction::Nmp4, &pts) < 1e-6);
        assert!(fd_gradient_check(&CostFunction::Nmp2, &[0.0]) < 1e-9);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn allocation_satisfies_kkt(
                params in proptest::collection::vec(
                    (0.05..3.0_f64, -2.0..2.0_f64, -5.0..5.0_f64),
                    1..6,
                ),
            ) {
                let costs: Vec<CostFunction> = params
                    .iter()
                    .map(|&(a, b, _)| CostFunction::Quadratic { a, b, c: 0.0 })
                    .collect();
                let d0: Vec<f64> = params.iter().map(|&(_, _, d)| d).collect();
                let sol = solve_allocation(&costs, &d0).unwrap();
                for (y, f) in sol.y_star.iter().zip(&costs) {
                    prop_assert!((f.gradient(*y) + sol.lambda0).abs() < 1e-9);
                }
                let balance = (sol.y_star.iter().sum::<f64>() - d0.iter().sum::<f64>()).abs();
                prop_assert!(balance < 1e-9);
            }
        }
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let costs = inventory_costs();
        assert!(matches!(
            solve_allocation(&costs, &[1.0]),
            Err(OracleError::LengthMismatch { .. })
        ));
        assert!(matches!(
            solve_allocation(&[], &[]),
            Err(OracleError::Empty)
        ));
    }
}
