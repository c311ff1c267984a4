//! The distributed primal-dual control law.
//!
//! Agent `i` applies
//!
//! ```text
//! uᵢ = −γ·∇fᵢ(yᵢ) + λᵢ + reg_input(yᵢ)
//! λ̇ᵢ = −λᵢᵛ − zᵢᵛ + dᵢ − yᵢ − D_ε·ηᵢ
//! η̇ᵢ = (S − L·D)·ηᵢ + L·dᵢ
//! żᵢ = λᵢᵛ
//! ```
//!
//! with the weighted neighbor differences `λᵢᵛ = Σⱼ aᵢⱼ(λᵢ − λⱼ)` and
//! `zᵢᵛ = Σⱼ aᵢⱼ(zᵢ − zⱼ)`. The gradient term steers the output downhill,
//! the `λ`/`z` consensus dynamics negotiate the coupling constraint with the
//! neighbors, the feedforward `reg_input(yᵢ)` holds the plant at whatever
//! output the negotiation demands, and the observer compensation `D_ε·ηᵢ`
//! strips the sinusoidal pollution from the observation.
//!
//! At any network equilibrium the multipliers agree, `λ̃ᵢ = γ·∇fᵢ(ỹᵢ)` for
//! all `i`, and the outputs satisfy the allocation optimality conditions
//! `∇fᵢ(ỹᵢ) + λ₀ = 0`, `Σᵢ ỹᵢ = Σᵢ dᵢ⁰` with `λ₀ = −λ̃/γ`.
//! [`equilibrium_residual`] measures exactly those conditions.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costs::{CostError, CostFunction};
use crate::observer::{Exosystem, ObserverGain};
use crate::plants::Plant;

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error("agent {agent}: non-finite control input (y = {y}, lambda = {lambda})")]
    NonFiniteInput { agent: usize, y: f64, lambda: f64 },
    #[error("agent {agent}: observer state has {got} entries, exosystem dimension is {expected}")]
    EtaDimension {
        agent: usize,
        got: usize,
        expected: usize,
    },
    #[error("agent {agent}: neighbor lists and weights have mismatched lengths")]
    NeighborMismatch { agent: usize },
    #[error("cost {index} is not strongly convex: {source}")]
    NotStronglyConvex { index: usize, source: CostError },
    #[error("costs and plants lists have different lengths ({costs} vs {plants})")]
    LengthMismatch { costs: usize, plants: usize },
}

/// Per-agent controller state.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub lambda: f64,
    pub z: f64,
    pub eta: DVector<f64>,
}

/// Which control law variant runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerMode {
    /// Gradient correction, consensus, feedforward, observer compensation.
    Full,
    /// No observer compensation ever; suits clean constant observations,
    /// where exponentially passive plants tolerate any positive gain.
    NoDisturbance,
    /// Quadratic costs `½y²` hard-coded (`∇f(y) = y`), yielding output
    /// average consensus on the private data.
    AverageConsensus,
}

/// Gradient gain and mode. `gamma_override` permits gains below the
/// theoretical bound of [`gamma_lower_bound`]; convergence then relies on
/// stronger plant properties (exponential passivity), not the generic
/// argument.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerParams {
    pub gamma: f64,
    pub mode: ControllerMode,
    #[serde(default)]
    pub gamma_override: bool,
}

/// Time derivatives of one agent's controller state.
#[derive(Debug, Clone)]
pub struct ControllerDerivatives {
    pub lambda_dot: f64,
    pub eta_dot: DVector<f64>,
    pub z_dot: f64,
}

/// How close `(y, λ)` is to certifying allocation optimality.
#[derive(Debug, Clone)]
pub struct EquilibriumReport {
    /// Common multiplier recovered as `−mean(λᵢ)/γ`.
    pub lambda0: f64,
    /// `maxᵢ |∇fᵢ(yᵢ) + λ₀|`.
    pub kkt_residual: f64,
    /// `|Σᵢ yᵢ − Σᵢ dᵢ⁰|`.
    pub balance_residual: f64,
    /// `maxᵢ |λᵢ − mean(λ)|`: multiplier consensus check.
    pub lambda_spread: f64,
}

/// Control input `u = −γ·∇f(y) + λ + reg_input(y)`.
///
/// `agent` only tags errors. In [`ControllerMode::AverageConsensus`] the
/// gradient is `y` itself regardless of `cost`.
pub fn control_input(
    agent: usize,
    y: f64,
    state: &ControllerState,
    cost: &CostFunction,
    plant: &Plant,
    params: &ControllerParams,
) -> Result<f64, ControllerError> {
    let grad = match params.mode {
        ControllerMode::AverageConsensus => y,
        _ => cost.gradient(y),
    };
    let u = -params.gamma * grad + state.lambda + plant.reg_input(y);
    if !u.is_finite() {
        return Err(ControllerError::NonFiniteInput {
            agent,
            y,
            lambda: state.lambda,
        });
    }
    Ok(u)
}

/// Derivatives of `(λ, η, z)` for one agent given a snapshot of its
/// neighbors' dual variables.
#[allow(clippy::too_many_arguments)]
pub fn controller_derivatives(
    agent: usize,
    y: f64,
    d_obs: f64,
    state: &ControllerState,
    neighbor_lambdas: &[f64],
    neighbor_zs: &[f64],
    weights: &[f64],
    exo: &Exosystem,
    gain: &ObserverGain,
    d_eps_active: bool,
) -> Result<ControllerDerivatives, ControllerError> {
    if neighbor_lambdas.len() != weights.len() || neighbor_zs.len() != weights.len() {
        return Err(ControllerError::NeighborMismatch { agent });
    }
    if state.eta.len() != exo.dim() {
        return Err(ControllerError::EtaDimension {
            agent,
            got: state.eta.len(),
            expected: exo.dim(),
        });
    }
    let mut lambda_v = 0.0;
    let mut z_v = 0.0;
    for ((&lj, &zj), &w) in neighbor_lambdas.iter().zip(neighbor_zs).zip(weights) {
        lambda_v += w * (state.lambda - lj);
        z_v += w * (state.z - zj);
    }
    let compensation = if d_eps_active {
        (exo.d_eps_row() * &state.eta)[0]
    } else {
        0.0
    };
    let lambda_dot = -lambda_v - z_v + d_obs - y - compensation;
    let eta_dot = gain.closed_loop() * &state.eta + gain.l() * d_obs;
    Ok(ControllerDerivatives {
        lambda_dot,
        eta_dot,
        z_dot: lambda_v,
    })
}

/// Theoretical gradient-gain bound `maxᵢ (1 + Mᵢ)/h̲ᵢ`, with each `h̲ᵢ`
/// measured on the default operating interval.
pub fn gamma_lower_bound(costs: &[CostFunction], plants: &[Plant]) -> Result<f64, ControllerError> {
    let (lo, hi) = crate::OPERATING_INTERVAL;
    gamma_lower_bound_on(costs, plants, lo, hi, crate::OPERATING_SAMPLES)
}

/// As [`gamma_lower_bound`], with an explicit curvature-scan interval.
pub fn gamma_lower_bound_on(
    costs: &[CostFunction],
    plants: &[Plant],
    lo: f64,
    hi: f64,
    samples: usize,
) -> Result<f64, ControllerError> {
    if costs.len() != plants.len() {
        return Err(ControllerError::LengthMismatch {
            costs: costs.len(),
            plants: plants.len(),
        });
    }
    let mut bound: f64 = 0.0;
    for (i, (cost, plant)) in costs.iter().zip(plants).enumerate() {
        let (h_min, _) = cost
            .curvature_bounds(lo, hi, samples)
            .map_err(|source| ControllerError::NotStronglyConvex { index: i, source })?;
        if h_min <= 0.0 {
            return Err(ControllerError::NotStronglyConvex {
                index: i,
                source: CostError::NotStronglyConvex { h_min },
            });
        }
        bound = bound.max((1.0 + plant.lipschitz_m()) / h_min);
    }
    Ok(bound)
}

/// Optimality residuals of an `(y, λ)` snapshot against the private data
/// `d0`. Small residuals certify the network sits at the allocation optimum.
pub fn equilibrium_residual(
    y: &[f64],
    lambdas: &[f64],
    d0: &[f64],
    costs: &[CostFunction],
    gamma: f64,
) -> EquilibriumReport {
    let n = y.len() as f64;
    let lambda_mean = lambdas.iter().sum::<f64>() / n;
    let lambda0 = -lambda_mean / gamma;
    let kkt_residual = y
        .iter()
        .zip(costs)
        .map(|(&yi, f)| (f.gradient(yi) + lambda0).abs())
        .fold(0.0_f64, f64::max);
    let balance_residual = (y.iter().sum::<f64>() - d0.iter().sum::<f64>()).abs();
    let lambda_spread = lambdas
        .iter()
        .map(|&l| (l - lambda_mean).abs())
        .fold(0.0_f64, f64::max);
    EquilibriumReport {
        lambda0,
        kkt_residual,
        balance_residual,
        lambda_spread,
    }
}
