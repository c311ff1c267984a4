//! Built-in experiment parameterizations and their pass/fail checks.
//!
//! Three case studies ship with the tool, all on the same 4-node topology
//! (edges 1-2, 2-3, 2-4, 3-4):
//!
//! - `inventory`: four perishable-inventory nodes with quadratic storage
//!   costs allocate a total stock level of 10. Clean observations, gain
//!   `γ = 1` (the plants are exponentially passive, so any positive gain
//!   converges — the bound override is set). Known optimum
//!   `(4.57, 2.41, 1.69, 1.33)`.
//! - `chua_average`: four passivated Chua circuits reach output average
//!   consensus on their initial outputs; sinusoidal observation disturbances
//!   (ω = 3, 2, 1 on agents 1-3) kick in at t = 30 s and the observer
//!   compensation is switched on at t = 45 s.
//! - `nonminphase`: four non-minimum-phase agents with heterogeneous convex
//!   costs and data `dᵢ⁰ = i`; disturbances start at t = 75 s, rejection at
//!   t = 95 s, `γ = 2` with published observer gain columns.
//!
//! `baseline_ablation` re-runs the inventory case with the steady-state
//! feedforward removed, which parks the network at a non-optimal point — a
//! negative control for the feedforward term. Reference final levels for
//! that ablation, `(5.53, 2.37, 1.32, 0.79)`, are printed for comparison but
//! not asserted (they depend on the initial conditions).
//!
//! Agent 4 carries no sinusoid in the disturbed presets: its nominal
//! frequency slot would be `ω = 0`, which is indistinguishable from the
//! constant datum (and breaks internal-model observability), so its
//! disturbance model is constant-only and its observer is the scalar one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{
    AgentSpec, ControllerSpec, DisturbanceSpec, EventSpec, ExperimentSpec, GraphSpec, ObserverSpec,
    ResolvedExperiment,
};
use crate::controller::{equilibrium_residual, ControllerMode};
use crate::costs::CostFunction;
use crate::plants::Plant;
use crate::sim::{EventAction, Trajectory};

pub const PRESET_NAMES: [&str; 4] = [
    "inventory",
    "chua_average",
    "nonminphase",
    "baseline_ablation",
];

/// Published optimum of the inventory case.
pub const INVENTORY_OPTIMUM: [f64; 4] = [4.57, 2.41, 1.69, 1.33];

/// Reference endpoint of the no-feedforward ablation (not asserted).
pub const ABLATION_REFERENCE: [f64; 4] = [5.53, 2.37, 1.32, 0.79];

/// The 4-node demo topology shared by all presets.
pub fn demo_graph_spec() -> GraphSpec {
    GraphSpec {
        edges: vec![[1, 2], [2, 3], [2, 4], [3, 4]],
        weights: None,
    }
}

/// Builds the named preset, or `None` for an unknown name.
pub fn preset(name: &str, seed: u64) -> Option<ExperimentSpec> {
    match name {
        "inventory" => Some(inventory(seed)),
        "chua_average" => Some(chua_average(seed)),
        "nonminphase" => Some(nonminphase(seed)),
        "baseline_ablation" => {
            let mut spec = inventory(seed);
            spec.name = "baseline_ablation".to_string();
            spec.feedforward = false;
            Some(spec)
        }
        _ => None,
    }
}

fn inventory(seed: u64) -> ExperimentSpec {
    let agents = (1..=4)
        .map(|i| {
            let fi = i as f64;
            AgentSpec {
                plant: Plant::Inventory {
                    theta: fi,
                    demand: fi,
                },
                cost: CostFunction::Quadratic {
                    a: 0.1 * fi,
                    b: -0.05 * fi,
                    c: fi,
                },
                disturbance: DisturbanceSpec {
                    d0: fi,
                    freqs: Vec::new(),
                    amplitudes: None,
                    phases: None,
                    onset: 0.0,
                },
                observer: None,
                init_range: Some([0.0, 6.0]),
                initial_state: None,
            }
        })
        .collect();
    ExperimentSpec {
        name: "inventory".to_string(),
        seed,
        dt: 0.01,
        horizon: 50.0,
        record_every: 1,
        feedforward: true,
        graph: demo_graph_spec(),
        controller: ControllerSpec {
            gamma: Some(1.0),
            mode: ControllerMode::NoDisturbance,
            // Exponentially passive plants converge for any positive gain,
            // so γ = 1 is fine below the generic bound.
            override_gamma: true,
            d_eps_initial: false,
        },
        agents,
        events: Vec::new(),
    }
}

fn chua_average(seed: u64) -> ExperimentSpec {
    // Average consensus runs on the private data d0 = y(0), so the initial
    // states are drawn here (same stream the simulator would use) and the
    // data are tied to them.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let initial_states: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..3).map(|_| rng.gen_range(-5.0..=5.0)).collect())
        .collect();
    let agents = (1..=4_usize)
        .map(|i| {
            let freqs = if i < 4 { vec![(4 - i) as f64] } else { Vec::new() };
            AgentSpec {
                plant: Plant::Chua {
                    alpha: 9.0,
                    beta: 100.0 / 7.0,
                    a: -8.0 / 7.0,
                    b: -5.0 / 7.0,
                    c: 1.0,
                },
                cost: CostFunction::Quadratic {
                    a: 0.5,
                    b: 0.0,
                    c: 0.0,
                },
                disturbance: DisturbanceSpec {
                    d0: initial_states[i - 1][0],
                    freqs,
                    amplitudes: None,
                    phases: None,
                    onset: 30.0,
                },
                observer: None,
                init_range: None,
                initial_state: Some(initial_states[i - 1].clone()),
            }
        })
        .collect();
    ExperimentSpec {
        name: "chua_average".to_string(),
        seed,
        dt: 0.001,
        horizon: 60.0,
        record_every: 10,
        feedforward: true,
        graph: demo_graph_spec(),
        controller: ControllerSpec {
            gamma: None,
            mode: ControllerMode::AverageConsensus,
            override_gamma: false,
            d_eps_initial: false,
        },
        agents,
        events: vec![EventSpec {
            time: 45.0,
            action: EventAction::EnableDEps,
        }],
    }
}

fn nonminphase(seed: u64) -> ExperimentSpec {
    let costs = [
        CostFunction::Nmp1,
        CostFunction::Nmp2,
        CostFunction::Nmp3,
        CostFunction::Nmp4,
    ];
    // Gain columns for the ω = 3, 2, 1 observers; agent 4 gets the scalar
    // design (its disturbance model is constant-only).
    let gains: [Vec<f64>; 4] = [
        vec![5.00, 6.72, 2.19],
        vec![5.00, 6.51, 2.75],
        vec![5.00, 6.07, 3.69],
        vec![5.0],
    ];
    let agents = (1..=4_usize)
        .map(|i| {
            let freqs = if i < 4 { vec![(4 - i) as f64] } else { Vec::new() };
            AgentSpec {
                plant: Plant::NonMinimumPhase { eps: [1.0; 5] },
                cost: costs[i - 1].clone(),
                disturbance: DisturbanceSpec {
                    d0: i as f64,
                    freqs,
                    amplitudes: None,
                    phases: None,
                    onset: 75.0,
                },
                observer: Some(ObserverSpec {
                    poles: None,
                    l: Some(gains[i - 1].clone()),
                }),
                init_range: Some([-5.0, 5.0]),
                initial_state: None,
            }
        })
        .collect();
    // The cubic zero dynamics shed energy only through the output coupling,
    // so with initial states in [-5, 5] the internal oscillation outlives the
    // output transient by an order of magnitude; the horizon is sized for the
    // optimality residuals to settle below 1e-3.
    ExperimentSpec {
        name: "nonminphase".to_string(),
        seed,
        dt: 0.01,
        horizon: 2400.0,
        record_every: 40,
        feedforward: true,
        graph: demo_graph_spec(),
        controller: ControllerSpec {
            gamma: Some(2.0),
            mode: ControllerMode::Full,
            override_gamma: false,
            d_eps_initial: false,
        },
        agents,
        events: vec![EventSpec {
            time: 95.0,
            action: EventAction::EnableDEps,
        }],
    }
}

/// One pass/fail line of a run summary.
#[derive(Debug, Clone)]
pub struct CheckLine {
    pub label: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckLine {
    fn new(label: &str, passed: bool, detail: String) -> Self {
        Self {
            label: label.to_string(),
            passed,
            detail,
        }
    }
}

/// Evaluates the preset's acceptance thresholds on a finished run.
///
/// Unknown/custom names get the generic check (final outputs within 1e-2 of
/// the oracle optimum); `baseline_ablation` is informational only.
pub fn check_run(resolved: &ResolvedExperiment, tr: &Trajectory) -> Vec<CheckLine> {
    match resolved.spec.name.as_str() {
        "inventory" => check_inventory(tr),
        "chua_average" => check_chua(resolved, tr),
        "nonminphase" => check_nonminphase(resolved, tr),
        "baseline_ablation" => vec![CheckLine::new(
            "ablation-run",
            true,
            format!(
                "final outputs {:?} vs optimal {:?} (reference non-optimal endpoint {:?}; \
                 informational only)",
                rounded(tr.final_outputs()),
                rounded(&tr.y_star),
                ABLATION_REFERENCE,
            ),
        )],
        _ => {
            let worst = tr
                .final_outputs()
                .iter()
                .zip(&tr.y_star)
                .map(|(y, ys)| (y - ys).abs())
                .fold(0.0_f64, f64::max);
            vec![CheckLine::new(
                "final-vs-oracle",
                worst <= 1e-2,
                format!("max |y - y*| = {worst:.3e} (tolerance 1e-2)"),
            )]
        }
    }
}

fn check_inventory(tr: &Trajectory) -> Vec<CheckLine> {
    let mut lines = Vec::new();
    let worst = tr
        .final_outputs()
        .iter()
        .zip(&INVENTORY_OPTIMUM)
        .map(|(y, ys)| (y - ys).abs())
        .fold(0.0_f64, f64::max);
    lines.push(CheckLine::new(
        "final-levels",
        worst <= 0.01,
        format!(
            "final {:?}, expected {:?}, max deviation {worst:.3e} (tolerance 0.01)",
            rounded(tr.final_outputs()),
            INVENTORY_OPTIMUM
        ),
    ));
    let oracle_worst = tr
        .y_star
        .iter()
        .zip(&INVENTORY_OPTIMUM)
        .map(|(y, ys)| (y - ys).abs())
        .fold(0.0_f64, f64::max);
    lines.push(CheckLine::new(
        "oracle-vs-published",
        oracle_worst <= 0.005,
        format!("oracle optimum {:?} within 0.005", rounded(&tr.y_star)),
    ));
    lines
}

fn check_chua(resolved: &ResolvedExperiment, tr: &Trajectory) -> Vec<CheckLine> {
    let onset = 30.0;
    let rejection = 45.0;
    let mut lines = Vec::new();

    let pre = last_error_before(tr, onset);
    lines.push(CheckLine::new(
        "consensus-before-onset",
        pre < 1e-2,
        format!("output consensus error {pre:.3e} just before t = {onset} (tolerance 1e-2)"),
    ));
    let disturbed = max_error_between(tr, onset, rejection);
    lines.push(CheckLine::new(
        "disturbance-visible",
        disturbed > 5e-2,
        format!("peak error {disturbed:.3e} in ({onset}, {rejection}) (must exceed 5e-2)"),
    ));
    let final_err = *tr.err_opt.last().unwrap();
    lines.push(CheckLine::new(
        "consensus-recovered",
        final_err < 1e-2,
        format!(
            "error {final_err:.3e} at horizon {} after rejection enabled at {rejection}",
            resolved.spec.horizon
        ),
    ));
    lines
}

fn check_nonminphase(resolved: &ResolvedExperiment, tr: &Trajectory) -> Vec<CheckLine> {
    let costs: Vec<CostFunction> = resolved.sim.agents.iter().map(|a| a.cost.clone()).collect();
    let d0: Vec<f64> = resolved.sim.agents.iter().map(|a| a.schedule.d0).collect();
    let report = equilibrium_residual(
        tr.final_outputs(),
        tr.final_lambdas(),
        &d0,
        &costs,
        resolved.sim.params.gamma,
    );
    vec![
        CheckLine::new(
            "kkt-residual",
            report.kkt_residual < 1e-3,
            format!(
                "max |∇f(y) + λ₀| = {:.3e} at horizon (tolerance 1e-3)",
                report.kkt_residual
            ),
        ),
        CheckLine::new(
            "balance-residual",
            report.balance_residual < 1e-3,
            format!(
                "|Σy - Σd⁰| = {:.3e} against Σd⁰ = {} (tolerance 1e-3)",
                report.balance_residual,
                d0.iter().sum::<f64>()
            ),
        ),
    ]
}

/// Output error at the last sample strictly before `t`.
pub fn last_error_before(tr: &Trajectory, t: f64) -> f64 {
    tr.times
        .iter()
        .zip(&tr.err_opt)
        .filter(|(&time, _)| time < t)
        .map(|(_, &e)| e)
        .last()
        .unwrap_or(f64::INFINITY)
}

/// Peak output error over samples with `a < t < b`.
pub fn max_error_between(tr: &Trajectory, a: f64, b: f64) -> f64 {
    tr.times
        .iter()
        .zip(&tr.err_opt)
        .filter(|(&time, _)| time > a && time < b)
        .map(|(_, &e)| e)
        .fold(0.0_f64, f64::max)
}

fn rounded(values: &[f64]) -> Vec<f64> {
    values.iter().map(|v| (v * 1000.0).round() / 1000.0).collect()
}
