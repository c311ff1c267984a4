//! Agent dynamics: nonlinear plants with regulator maps and storage functions.
//!
//! Each plant knows, for every constant output level `r`, the unique steady
//! state `reg_state(r)` and steady input `reg_input(r)` that hold the output
//! at `r`. The storage functions certify passivity with respect to those
//! forced equilibria, `V̇ ≤ (y − y*)(u − u*)`, which is the structural
//! property the network-level convergence argument rests on. The audits in
//! the test suite check the inequality numerically along random samples and
//! along actual closed-loop trajectories.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlantError {
    #[error("plant has no storage function, passivity audit unsupported")]
    StorageUnavailable,
    #[error("finite-difference step must be positive, got {h}")]
    BadStep { h: f64 },
    #[error("state has {got} coordinates, plant expects {expected}")]
    StateDimension { got: usize, expected: usize },
}

/// A single-input single-output nonlinear agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Plant {
    /// `ẋ = u`, `y = x`.
    SingleIntegrator,
    /// Perishable-inventory node `İ = −θ·I + P − D` with production input
    /// `P` and constant demand `D`; `y = I`.
    Inventory { theta: f64, demand: f64 },
    /// Chua circuit with the piecewise-linear element cancelled by an inner
    /// feedback loop `F = u + f(x₁)`, exposing input `u` and output `y = x₁`.
    Chua {
        alpha: f64,
        beta: f64,
        a: f64,
        b: f64,
        c: f64,
    },
    /// Non-minimum-phase agent: `ż₁ = ε₁·z₂³`, `ż₂ = −ε₂·z₁ + ε₃·x`,
    /// `ẋ = −ε₄·z₂³ − ε₅·x + u`, `y = x`. Its zero dynamics are a cubic
    /// oscillator, so the plant is non-minimum-phase, yet it is passive with
    /// respect to its forced equilibria.
    NonMinimumPhase { eps: [f64; 5] },
}

impl Plant {
    pub fn state_dim(&self) -> usize {
        match self {
            Plant::SingleIntegrator => 1,
            Plant::Inventory { .. } => 1,
            Plant::Chua { .. } => 3,
            Plant::NonMinimumPhase { .. } => 3,
        }
    }

    /// State derivative `ẋ = g(x, u)`.
    pub fn dynamics(&self, x: &[f64], u: f64) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.state_dim());
        match *self {
            Plant::SingleIntegrator => vec![u],
            Plant::Inventory { theta, demand } => vec![-theta * x[0] + u - demand],
            Plant::Chua {
                alpha,
                beta,
                a,
                b,
                c,
            } => {
                let f_nl = chua_nonlinearity(x[0], a, b, c);
                let f_in = u + f_nl;
                vec![
                    alpha * (x[1] - x[0] - f_nl + f_in),
                    x[0] - x[1] + x[2],
                    -beta * x[1],
                ]
            }
            Plant::NonMinimumPhase { eps } => {
                let z2c = x[1] * x[1] * x[1];
                vec![
                    eps[0] * z2c,
                    -eps[1] * x[0] + eps[2] * x[2],
                    -eps[3] * z2c - eps[4] * x[2] + u,
                ]
            }
        }
    }

    /// Output map `y = h(x)`.
    pub fn output(&self, x: &[f64]) -> f64 {
        match self {
            Plant::SingleIntegrator | Plant::Inventory { .. } => x[0],
            Plant::Chua { .. } => x[0],
            Plant::NonMinimumPhase { .. } => x[2],
        }
    }

    /// Steady state holding the output at `r`.
    pub fn reg_state(&self, r: f64) -> Vec<f64> {
        match *self {
            Plant::SingleIntegrator | Plant::Inventory { .. } => vec![r],
            Plant::Chua { .. } => vec![r, 0.0, -r],
            Plant::NonMinimumPhase { eps } => vec![eps[2] / eps[1] * r, 0.0, r],
        }
    }

    /// Steady input holding the output at `r`.
    pub fn reg_input(&self, r: f64) -> f64 {
        match *self {
            Plant::SingleIntegrator => 0.0,
            Plant::Inventory { theta, demand } => theta * r + demand,
            Plant::Chua { .. } => r,
            Plant::NonMinimumPhase { eps } => eps[4] * r,
        }
    }

    /// Lipschitz constant of `reg_input` (enters the gradient-gain bound).
    pub fn lipschitz_m(&self) -> f64 {
        match *self {
            Plant::SingleIntegrator => 0.0,
            Plant::Inventory { theta, .. } => theta,
            Plant::Chua { .. } => 1.0,
            Plant::NonMinimumPhase { eps } => eps[4],
        }
    }

    /// Storage value `V(x, x*)`, when the plant ships one.
    pub fn storage(&self, x: &[f64], x_star: &[f64]) -> Option<f64> {
        match *self {
            Plant::SingleIntegrator | Plant::Inventory { .. } => {
                let e = x[0] - x_star[0];
                Some(0.5 * e * e)
            }
            Plant::Chua { alpha, beta, .. } => {
                let e1 = x[0] - x_star[0];
                let e2 = x[1] - x_star[1];
                let e3 = x[2] - x_star[2];
                Some(0.5 * (e1 * e1 / alpha + e2 * e2 + e3 * e3 / beta))
            }
            Plant::NonMinimumPhase { eps } => {
                let e1 = x[0] - x_star[0];
                let e2 = x[1] - x_star[1];
                let e3 = x[2] - x_star[2];
                Some(
                    0.5 * e1 * e1
                        + eps[0] / (4.0 * eps[2]) * e2 * e2 * e2 * e2
                        + eps[0] * eps[2] / (2.0 * eps[1] * eps[3]) * e3 * e3,
                )
            }
        }
    }

    /// Residual norms of the two regulator equations at output level `r`:
    /// `‖g(reg_state(r), reg_input(r))‖` and `|h(reg_state(r)) − r|`.
    pub fn regulator_residual(&self, r: f64) -> (f64, f64) {
        let xs = self.reg_state(r);
        let us = self.reg_input(r);
        let dx = self.dynamics(&xs, us);
        let dyn_residual = dx.iter().map(|v| v * v).sum::<f64>().sqrt();
        let out_residual = (self.output(&xs) - r).abs();
        (dyn_residual, out_residual)
    }

    /// Forward-difference estimate of `V̇` along the flow:
    /// `(V(x + h·ẋ, x*) − V(x, x*)) / h` with `x* = reg_state(r_star)`.
    pub fn storage_rate(&self, x: &[f64], u: f64, r_star: f64, h: f64) -> Result<f64, PlantError> {
        if h <= 0.0 {
            return Err(PlantError::BadStep { h });
        }
        if x.len() != self.state_dim() {
            return Err(PlantError::StateDimension {
                got: x.len(),
                expected: self.state_dim(),
            });
        }
        let x_star = self.reg_state(r_star);
        let v0 = self
            .storage(x, &x_star)
            .ok_or(PlantError::StorageUnavailable)?;
        let dx = self.dynamics(x, u);
        let x_next: Vec<f64> = x.iter().zip(&dx).map(|(xi, di)| xi + h * di).collect();
        let v1 = self
            .storage(&x_next, &x_star)
            .ok_or(PlantError::StorageUnavailable)?;
        Ok((v1 - v0) / h)
    }

    /// Rough dominant time constant, used only to warn about coarse steps.
    pub fn time_constant(&self) -> Option<f64> {
        match *self {
            Plant::SingleIntegrator => None,
            Plant::Inventory { theta, .. } => Some(1.0 / theta),
            Plant::Chua { alpha, beta, .. } => Some(1.0 / alpha.abs().max(beta.abs())),
            Plant::NonMinimumPhase { eps } => Some(1.0 / eps[4]),
        }
    }
}

/// Chua diode characteristic `f(x₁) = b·x₁ + ½(a−b)(|x₁+c| − |x₁−c|)`.
///
/// Piecewise linear; the fixed-step integrator treats it as a Lipschitz
/// right-hand side and steps across the kinks.
fn chua_nonlinearity(x1: f64, a: f64, b: f64, c: f64) -> f64 {
    b * x1 + 0.5 * (a - b) * ((x1 + c).abs() - (x1 - c).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    fn chua_typical() -> Plant {
        Plant::Chua {
            alpha: 9.0,
            beta: 100.0 / 7.0,
            a: -8.0 / 7.0,
            b: -5.0 / 7.0,
            c: 1.0,
        }
    }

    fn nmp_unit() -> Plant {
        Plant::NonMinimumPhase { eps: [1.0; 5] }
    }

    fn library() -> Vec<Plant> {
        vec![
            Plant::SingleIntegrator,
            Plant::Inventory {
                theta: 1.0,
                demand: 1.0,
            },
            chua_typical(),
            nmp_unit(),
        ]
    }

    #[test]
    fn inventory_regulator_residual_at_optimum_level() {
        let p = Plant::Inventory {
            theta: 1.0,
            demand: 1.0,
        };
        let (d, o) = p.regulator_residual(4.57);
        assert_eq!((d, o), (0.0, 0.0));
        assert_abs_diff_eq!(p.reg_input(4.57), 5.57, epsilon = 1e-12);
    }

    #[test]
    fn chua_regulator_residual_at_origin() {
        let (d, o) = chua_typical().regulator_residual(0.0);
        assert_eq!((d, o), (0.0, 0.0));
    }

    #[test]
    fn nmp_regulator_maps_at_two() {
        let p = nmp_unit();
        assert_eq!(p.reg_state(2.0), vec![2.0, 0.0, 2.0]);
        assert_eq!(p.reg_input(2.0), 2.0);
        let (d, o) = p.regulator_residual(2.0);
        assert!(d < 1e-9 && o < 1e-9);
    }

    #[test]
    fn regulator_residuals_vanish_on_grid() {
        for p in library() {
            for k in 0..=40 {
                let r = -10.0 + 0.5 * k as f64;
                let (d, o) = p.regulator_residual(r);
                assert!(d < 1e-9 && o < 1e-9, "{p:?} at r={r}: ({d}, {o})");
            }
        }
    }

    #[test]
    fn integrator_storage_rate() {
        let p = Plant::SingleIntegrator;
        let rate = p.storage_rate(&[3.0], -1.0, 0.0, 1e-6).unwrap();
        assert_abs_diff_eq!(rate, -3.0, epsilon = 1e-5);
    }

    #[test]
    fn inventory_storage_rate_vanishes_at_equilibrium() {
        let p = Plant::Inventory {
            theta: 1.0,
            demand: 1.0,
        };
        let i_star = 4.57;
        let rate = p
            .storage_rate(&[i_star], p.reg_input(i_star), i_star, 1e-6)
            .unwrap();
        assert_abs_diff_eq!(rate, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn storage_rate_rejects_bad_arguments() {
        let p = Plant::SingleIntegrator;
        assert!(matches!(
            p.storage_rate(&[0.0], 0.0, 0.0, 0.0),
            Err(PlantError::BadStep { .. })
        ));
        assert!(matches!(
            p.storage_rate(&[0.0, 0.0], 0.0, 0.0, 1e-6),
            Err(PlantError::StateDimension { .. })
        ));
    }

    #[test]
    fn storage_positive_definite_on_samples() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for p in library() {
            let n = p.state_dim();
            for _ in 0..200 {
                let r_star = rng.gen_range(-2.0..2.0);
                let x_star = p.reg_state(r_star);
                let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let v = p.storage(&x, &x_star).unwrap();
                let same = x
                    .iter()
                    .zip(&x_star)
                    .all(|(a, b)| (a - b).abs() < 1e-12);
                if same {
                    assert_abs_diff_eq!(v, 0.0, epsilon = 1e-15);
                } else {
                    assert!(v > 0.0);
                }
                let v_eq = p.storage(&x_star, &x_star).unwrap();
                assert_eq!(v_eq, 0.0);
            }
        }
    }

    #[test]
    fn passivity_audit_on_random_triples() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for p in library() {
            let n = p.state_dim();
            for _ in 0..10_000 {
                let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let u = rng.gen_range(-2.0..2.0);
                let r_star = rng.gen_range(-2.0..2.0);
                let rate = p.storage_rate(&x, u, r_star, 1e-7).unwrap();
                let dy = p.output(&x) - r_star;
                let du = u - p.reg_input(r_star);
                let tol = 1e-4 * (1.0 + (dy * du).abs());
                assert!(
                    rate <= dy * du + tol,
                    "{p:?}: V̇ = {rate} > {} at x={x:?}, u={u}, r*={r_star}",
                    dy * du
                );
            }
        }
    }

    #[test]
    fn exponential_passivity_of_first_order_plants() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for (p, theta) in [
            (Plant::SingleIntegrator, 0.0),
            (
                Plant::Inventory {
                    theta: 2.0,
                    demand: 1.0,
                },
                2.0,
            ),
        ] {
            for _ in 0..2000 {
                let x = [rng.gen_range(-5.0..5.0)];
                let u = rng.gen_range(-5.0..5.0);
                let r_star = rng.gen_range(-5.0..5.0);
                let rate = p.storage_rate(&x, u, r_star, 1e-7).unwrap();
                let dy = p.output(&x) - r_star;
                let du = u - p.reg_input(r_star);
                let bound = -theta * dy * dy + dy * du;
                assert!(rate <= bound + 1e-4 * (1.0 + bound.abs()), "{p:?}");
            }
        }
    }

    #[test]
    fn nmp_storage_rate_bounded_by_supply_on_samples() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let p = nmp_unit();
        for _ in 0..2000 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let u = rng.gen_range(-2.0..2.0);
            let rate = p.storage_rate(&x, u, 0.0, 1e-7).unwrap();
            let dy = p.output(&x);
            let du = u - p.reg_input(0.0);
            assert!(rate <= dy * du + 1e-4);
        }
    }
}
