//! Fixed-step RK4 integration of the closed-loop network.
//!
//! The stacked state is `[x₁, λ₁, z₁, η₁, …, x_N, λ_N, z_N, η_N]`. Every
//! Runge-Kutta stage re-evaluates all controller quantities from the stage
//! state, so the coupled agent-controller-observer dynamics are integrated
//! consistently. Events (enabling or disabling the observer compensation)
//! snap to the nearest grid point, which keeps runs bit-reproducible for a
//! given config.
//!
//! The integrator is deliberately fixed-step: the experiments need exact
//! event timing and byte-identical reruns more than adaptive accuracy, and a
//! step-halving check is part of the test suite.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{
    control_input, controller_derivatives, gamma_lower_bound, ControllerError, ControllerMode,
    ControllerParams, ControllerState,
};
use crate::costs::CostFunction;
use crate::graph::Graph;
use crate::observer::{Exosystem, ObserverGain};
use crate::oracle::{self, OracleError};
use crate::plants::Plant;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("time step must be positive, got {dt}")]
    BadTimeStep { dt: f64 },
    #[error("horizon must be positive, got {horizon}")]
    BadHorizon { horizon: f64 },
    #[error("record_every must be at least 1")]
    BadRecordEvery,
    #[error("no agents configured")]
    NoAgents,
    #[error("graph has {graph_n} nodes but {agents} agents are configured")]
    GraphSizeMismatch { graph_n: usize, agents: usize },
    #[error("communication graph is not connected")]
    Disconnected,
    #[error("agent {agent}: amplitudes/phases/freqs must have equal lengths")]
    ScheduleShape { agent: usize },
    #[error("agent {agent}: negative amplitude {value}")]
    NegativeAmplitude { agent: usize, value: f64 },
    #[error("agent {agent}: schedule onset {value} must be nonnegative and finite")]
    BadOnset { agent: usize, value: f64 },
    #[error("agent {agent}: observer gain dimension {gain} != exosystem dimension {exo}")]
    GainDimension { agent: usize, gain: usize, exo: usize },
    #[error("agent {agent}: initial state has {got} coordinates, plant needs {expected}")]
    InitialStateDimension {
        agent: usize,
        got: usize,
        expected: usize,
    },
    #[error("gradient gain must be positive, got {gamma}")]
    GammaNotPositive { gamma: f64 },
    #[error(
        "gamma = {gamma} is below the convergence bound {bound:.6}; set the override flag only \
         for exponentially passive plants"
    )]
    GammaBelowBound { gamma: f64, bound: f64 },
    #[error("state diverged at t = {t} (agent {agent})")]
    Diverged { t: f64, agent: usize },
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("window fraction must be in (0, 1], got {window}")]
    BadWindow { window: f64 },
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// Constant-plus-sinusoids observation schedule for one agent.
///
/// Before `onset` the observation is the clean constant `d0`; from `onset`
/// on, the sinusoids are added.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceSchedule {
    pub d0: f64,
    pub amplitudes: Vec<f64>,
    pub phases: Vec<f64>,
    pub freqs: Vec<f64>,
    pub onset: f64,
}

impl DisturbanceSchedule {
    /// A clean constant observation (no sinusoids).
    pub fn constant(d0: f64) -> Self {
        Self {
            d0,
            amplitudes: Vec::new(),
            phases: Vec::new(),
            freqs: Vec::new(),
            onset: 0.0,
        }
    }

    pub fn sinusoid_count(&self) -> usize {
        self.freqs.len()
    }

    /// Observation value `d(t)`.
    pub fn value(&self, t: f64) -> f64 {
        if t < self.onset {
            return self.d0;
        }
        let mut d = self.d0;
        for ((&a, &w), &p) in self.amplitudes.iter().zip(&self.freqs).zip(&self.phases) {
            d += a * (w * t + p).sin();
        }
        d
    }

    /// Ground-truth exosystem state generating `d(t)`:
    /// `[d0, A₁sin(ω₁t+φ₁), A₁cos(ω₁t+φ₁), …]` (zeros before onset).
    pub fn exo_state(&self, t: f64) -> DVector<f64> {
        let mut xi = DVector::zeros(2 * self.freqs.len() + 1);
        xi[0] = self.d0;
        if t >= self.onset {
            for (j, ((&a, &w), &p)) in self
                .amplitudes
                .iter()
                .zip(&self.freqs)
                .zip(&self.phases)
                .enumerate()
            {
                let (s, c) = (w * t + p).sin_cos();
                xi[1 + 2 * j] = a * s;
                xi[2 + 2 * j] = a * c;
            }
        }
        xi
    }
}

/// How an agent's plant state starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitialState {
    /// Fixed initial coordinates.
    Explicit(Vec<f64>),
    /// Each coordinate drawn uniformly from `[lo, hi]` using the run seed.
    Uniform { lo: f64, hi: f64 },
}

/// Everything one agent brings to the simulation.
#[derive(Debug, Clone)]
pub struct AgentSetup {
    pub plant: Plant,
    pub cost: CostFunction,
    pub schedule: DisturbanceSchedule,
    pub exo: Exosystem,
    pub gain: ObserverGain,
    pub initial_state: InitialState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventAction {
    EnableDEps,
    DisableDEps,
}

/// Full experiment protocol.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub graph: Graph,
    pub agents: Vec<AgentSetup>,
    pub params: ControllerParams,
    pub dt: f64,
    pub horizon: f64,
    pub record_every: usize,
    pub events: Vec<(f64, EventAction)>,
    /// Observer compensation active from t = 0 (events can toggle it later).
    pub d_eps_initial: bool,
    /// Ablation switch: drop the steady-state feedforward term from the
    /// control input when false.
    pub feedforward: bool,
    pub seed: u64,
}

/// Recorded closed-loop run. All series share the same sample index; the
/// first index is the sample, the second (where present) the agent.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub outputs: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
    pub lambdas: Vec<Vec<f64>>,
    pub zs: Vec<Vec<f64>>,
    pub states: Vec<Vec<Vec<f64>>>,
    pub etas: Vec<Vec<Vec<f64>>>,
    pub disturbances: Vec<Vec<f64>>,
    /// `‖y(t) − y*‖₂` against the oracle optimum.
    pub err_opt: Vec<f64>,
    /// `maxᵢ |λᵢ(t) − mean λ(t)|`.
    pub err_consensus: Vec<f64>,
    /// Euclidean norm of the stacked plant and dual-state derivatives
    /// `(ẋ, λ̇, ż)` at the sample. Observer states are excluded: their
    /// derivative legitimately keeps rotating while tracking a sinusoid, so
    /// including them would mask whether the allocation itself has settled.
    pub deriv_norm: Vec<f64>,
    /// Oracle optimum the run is measured against.
    pub y_star: Vec<f64>,
    /// Oracle multiplier.
    pub lambda0_star: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_outputs(&self) -> &[f64] {
        self.outputs.last().expect("trajectory is never empty")
    }

    pub fn final_lambdas(&self) -> &[f64] {
        self.lambdas.last().expect("trajectory is never empty")
    }

    /// CSV export: `t, y1..yN, u1..uN, lambda1..lambdaN, z1..zN, err_opt,
    /// err_consensus` with 15 significant digits.
    pub fn to_csv(&self) -> String {
        let n = self.y_star.len();
        let mut out = String::new();
        out.push('t');
        for prefix in ["y", "u", "lambda", "z"] {
            for i in 1..=n {
                out.push_str(&format!(",{prefix}{i}"));
            }
        }
        out.push_str(",err_opt,err_consensus\n");
        for s in 0..self.len() {
            out.push_str(&format!("{:.14e}", self.times[s]));
            for series in [&self.outputs, &self.inputs, &self.lambdas, &self.zs] {
                for v in &series[s] {
                    out.push_str(&format!(",{v:.14e}"));
                }
            }
            out.push_str(&format!(
                ",{:.14e},{:.14e}\n",
                self.err_opt[s], self.err_consensus[s]
            ));
        }
        out
    }
}

struct AgentLayout {
    x: usize,
    lambda: usize,
    z: usize,
    eta: usize,
    eta_dim: usize,
    state_dim: usize,
}

fn layout(agents: &[AgentSetup]) -> (Vec<AgentLayout>, usize) {
    let mut offsets = Vec::with_capacity(agents.len());
    let mut cursor = 0;
    for a in agents {
        let n = a.plant.state_dim();
        let m = a.exo.dim();
        offsets.push(AgentLayout {
            x: cursor,
            lambda: cursor + n,
            z: cursor + n + 1,
            eta: cursor + n + 2,
            eta_dim: m,
            state_dim: n,
        });
        cursor += n + 2 + m;
    }
    (offsets, cursor)
}

struct StageEval {
    deriv: Vec<f64>,
    outputs: Vec<f64>,
    inputs: Vec<f64>,
    disturbances: Vec<f64>,
}

impl SimConfig {
    /// Validates the configuration; returns human-readable warnings (e.g. a
    /// step size coarse relative to the fastest time constant).
    pub fn validate(&self) -> Result<Vec<String>, SimError> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(SimError::BadTimeStep { dt: self.dt });
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(SimError::BadHorizon {
                horizon: self.horizon,
            });
        }
        if self.record_every == 0 {
            return Err(SimError::BadRecordEvery);
        }
        if self.agents.is_empty() {
            return Err(SimError::NoAgents);
        }
        if self.graph.n() != self.agents.len() {
            return Err(SimError::GraphSizeMismatch {
                graph_n: self.graph.n(),
                agents: self.agents.len(),
            });
        }
        if self.agents.len() > 1 && !self.graph.is_connected() {
            return Err(SimError::Disconnected);
        }
        for (i, a) in self.agents.iter().enumerate() {
            let s = &a.schedule;
            if s.amplitudes.len() != s.freqs.len() || s.phases.len() != s.freqs.len() {
                return Err(SimError::ScheduleShape { agent: i });
            }
            if let Some(&bad) = s.amplitudes.iter().find(|&&a| a < 0.0) {
                return Err(SimError::NegativeAmplitude {
                    agent: i,
                    value: bad,
                });
            }
            if !(s.onset >= 0.0) || !s.onset.is_finite() {
                return Err(SimError::BadOnset {
                    agent: i,
                    value: s.onset,
                });
            }
            if a.gain.l().len() != a.exo.dim() {
                return Err(SimError::GainDimension {
                    agent: i,
                    gain: a.gain.l().len(),
                    exo: a.exo.dim(),
                });
            }
            if let InitialState::Explicit(x0) = &a.initial_state {
                if x0.len() != a.plant.state_dim() {
                    return Err(SimError::InitialStateDimension {
                        agent: i,
                        got: x0.len(),
                        expected: a.plant.state_dim(),
                    });
                }
            }
        }
        if !(self.params.gamma > 0.0) {
            return Err(SimError::GammaNotPositive {
                gamma: self.params.gamma,
            });
        }
        let bound = self.gamma_bound()?;
        if !self.params.gamma_override && self.params.gamma < bound {
            return Err(SimError::GammaBelowBound {
                gamma: self.params.gamma,
                bound,
            });
        }

        let mut warnings = Vec::new();
        let mut tau = f64::INFINITY;
        for a in &self.agents {
            if let Some(t) = a.plant.time_constant() {
                tau = tau.min(t);
            }
            let sa = a.gain.spectral_abscissa();
            if sa < 0.0 {
                tau = tau.min(-1.0 / sa);
            }
        }
        if self.dt > tau / 10.0 {
            warnings.push(format!(
                "dt = {} is coarse relative to the fastest time constant {:.4}; \
                 consider dt <= {:.4}",
                self.dt,
                tau,
                tau / 10.0
            ));
        }
        Ok(warnings)
    }

    /// Gradient-gain bound for this setup. In average-consensus mode the
    /// effective cost is `½y²` (unit curvature) regardless of the configured
    /// costs.
    pub fn gamma_bound(&self) -> Result<f64, SimError> {
        if self.params.mode == ControllerMode::AverageConsensus {
            let m = self
                .agents
                .iter()
                .map(|a| a.plant.lipschitz_m())
                .fold(0.0_f64, f64::max);
            return Ok(1.0 + m);
        }
        let costs: Vec<CostFunction> = self.agents.iter().map(|a| a.cost.clone()).collect();
        let plants: Vec<Plant> = self.agents.iter().map(|a| a.plant.clone()).collect();
        Ok(gamma_lower_bound(&costs, &plants)?)
    }

    /// Draws the initial plant states this config's seed produces. Explicit
    /// states pass through; uniform ranges are sampled agent-major,
    /// coordinate-minor from a stream seeded with `seed`.
    pub fn resolve_initial_states(&self) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        self.agents
            .iter()
            .map(|a| match &a.initial_state {
                InitialState::Explicit(x0) => x0.clone(),
                InitialState::Uniform { lo, hi } => (0..a.plant.state_dim())
                    .map(|_| rng.gen_range(*lo..=*hi))
                    .collect(),
            })
            .collect()
    }
}

/// Integrates the closed loop over `[0, horizon]`.
///
/// Records every `record_every`-th grid point plus the final one. The oracle
/// optimum is solved up front and the output-error series is measured
/// against it.
pub fn integrate(cfg: &SimConfig) -> Result<Trajectory, SimError> {
    cfg.validate()?;
    let n_agents = cfg.agents.len();
    let (offsets, dim) = layout(&cfg.agents);

    let costs: Vec<CostFunction> = cfg.agents.iter().map(|a| a.cost.clone()).collect();
    let d0: Vec<f64> = cfg.agents.iter().map(|a| a.schedule.d0).collect();
    let solution = oracle::solve_allocation(&costs, &d0)?;

    let neighbors: Vec<Vec<(usize, f64)>> =
        (0..n_agents).map(|i| cfg.graph.neighbors(i)).collect();

    // Pack initial state; controller states start at zero (the scheme is
    // initialization-free).
    let mut state = vec![0.0; dim];
    for (off, x0) in offsets.iter().zip(cfg.resolve_initial_states()) {
        state[off.x..off.x + off.state_dim].copy_from_slice(&x0);
    }

    let steps = (cfg.horizon / cfg.dt).round().max(1.0) as usize;
    let mut event_steps: Vec<(usize, EventAction)> = cfg
        .events
        .iter()
        .map(|&(t, action)| (((t / cfg.dt).round().max(0.0) as usize).min(steps), action))
        .collect();
    event_steps.sort_by_key(|e| e.0);

    let eval = |t: f64, state: &[f64], active: bool| -> Result<StageEval, SimError> {
        let mut deriv = vec![0.0; dim];
        let mut outputs = vec![0.0; n_agents];
        let mut inputs = vec![0.0; n_agents];
        let mut disturbances = vec![0.0; n_agents];
        for (i, (agent, off)) in cfg.agents.iter().zip(&offsets).enumerate() {
            let slot = &state[off.x..off.eta + off.eta_dim];
            if slot.iter().any(|v| !v.is_finite()) {
                return Err(SimError::Diverged { t, agent: i });
            }
            let x = &state[off.x..off.x + off.state_dim];
            let y = agent.plant.output(x);
            let cs = ControllerState {
                lambda: state[off.lambda],
                z: state[off.z],
                eta: DVector::from_row_slice(&state[off.eta..off.eta + off.eta_dim]),
            };
            let mut u = control_input(i, y, &cs, &agent.cost, &agent.plant, &cfg.params)?;
            if !cfg.feedforward {
                u -= agent.plant.reg_input(y);
            }
            let dx = agent.plant.dynamics(x, u);
            let d_obs = agent.schedule.value(t);

            let (nl, nz, nw): (Vec<f64>, Vec<f64>, Vec<f64>) = {
                let mut nl = Vec::with_capacity(neighbors[i].len());
                let mut nz = Vec::with_capacity(neighbors[i].len());
                let mut nw = Vec::with_capacity(neighbors[i].len());
                for &(j, w) in &neighbors[i] {
                    nl.push(state[offsets[j].lambda]);
                    nz.push(state[offsets[j].z]);
                    nw.push(w);
                }
                (nl, nz, nw)
            };
            let compensation_on = active && cfg.params.mode != ControllerMode::NoDisturbance;
            let cd = controller_derivatives(
                i,
                y,
                d_obs,
                &cs,
                &nl,
                &nz,
                &nw,
                &agent.exo,
                &agent.gain,
                compensation_on,
            )?;

            deriv[off.x..off.x + off.state_dim].copy_from_slice(&dx);
            deriv[off.lambda] = cd.lambda_dot;
            deriv[off.z] = cd.z_dot;
            deriv[off.eta..off.eta + off.eta_dim].copy_from_slice(cd.eta_dot.as_slice());
            outputs[i] = y;
            inputs[i] = u;
            disturbances[i] = d_obs;
        }
        Ok(StageEval {
            deriv,
            outputs,
            inputs,
            disturbances,
        })
    };

    let mut tr = Trajectory {
        times: Vec::new(),
        outputs: Vec::new(),
        inputs: Vec::new(),
        lambdas: Vec::new(),
        zs: Vec::new(),
        states: Vec::new(),
        etas: Vec::new(),
        disturbances: Vec::new(),
        err_opt: Vec::new(),
        err_consensus: Vec::new(),
        deriv_norm: Vec::new(),
        y_star: solution.y_star.clone(),
        lambda0_star: solution.lambda0,
    };

    let mut active = cfg.d_eps_initial;
    let mut event_cursor = 0;
    for k in 0..=steps {
        let t = k as f64 * cfg.dt;
        while event_cursor < event_steps.len() && event_steps[event_cursor].0 == k {
            active = match event_steps[event_cursor].1 {
                EventAction::EnableDEps => true,
                EventAction::DisableDEps => false,
            };
            event_cursor += 1;
        }

        let e1 = eval(t, &state, active)?;
        if k % cfg.record_every == 0 || k == steps {
            record_sample(&mut tr, cfg, &offsets, t, &state, &e1, &solution.y_star);
        }
        if k == steps {
            break;
        }

        // Classic RK4 with stage-consistent controller evaluations.
        let half = 0.5 * cfg.dt;
        let s2: Vec<f64> = state
            .iter()
            .zip(&e1.deriv)
            .map(|(x, d)| x + half * d)
            .collect();
        let e2 = eval(t + half, &s2, active)?;
        let s3: Vec<f64> = state
            .iter()
            .zip(&e2.deriv)
            .map(|(x, d)| x + half * d)
            .collect();
        let e3 = eval(t + half, &s3, active)?;
        let s4: Vec<f64> = state
            .iter()
            .zip(&e3.deriv)
            .map(|(x, d)| x + cfg.dt * d)
            .collect();
        let e4 = eval(t + cfg.dt, &s4, active)?;
        let sixth = cfg.dt / 6.0;
        for idx in 0..dim {
            state[idx] += sixth
                * (e1.deriv[idx] + 2.0 * e2.deriv[idx] + 2.0 * e3.deriv[idx] + e4.deriv[idx]);
        }
    }

    Ok(tr)
}

fn record_sample(
    tr: &mut Trajectory,
    cfg: &SimConfig,
    offsets: &[AgentLayout],
    t: f64,
    state: &[f64],
    e: &StageEval,
    y_star: &[f64],
) {
    let n = cfg.agents.len();
    let lambdas: Vec<f64> = offsets.iter().map(|o| state[o.lambda]).collect();
    let zs: Vec<f64> = offsets.iter().map(|o| state[o.z]).collect();
    let states: Vec<Vec<f64>> = offsets
        .iter()
        .map(|o| state[o.x..o.x + o.state_dim].to_vec())
        .collect();
    let etas: Vec<Vec<f64>> = offsets
        .iter()
        .map(|o| state[o.eta..o.eta + o.eta_dim].to_vec())
        .collect();
    let err_opt = e
        .outputs
        .iter()
        .zip(y_star)
        .map(|(y, ys)| (y - ys) * (y - ys))
        .sum::<f64>()
        .sqrt();
    let mean_lambda = lambdas.iter().sum::<f64>() / n as f64;
    let err_consensus = lambdas
        .iter()
        .map(|l| (l - mean_lambda).abs())
        .fold(0.0_f64, f64::max);
    let deriv_norm = offsets
        .iter()
        .map(|o| {
            e.deriv[o.x..o.x + o.state_dim]
                .iter()
                .map(|d| d * d)
                .sum::<f64>()
                + e.deriv[o.lambda] * e.deriv[o.lambda]
                + e.deriv[o.z] * e.deriv[o.z]
        })
        .sum::<f64>()
        .sqrt();

    tr.times.push(t);
    tr.outputs.push(e.outputs.clone());
    tr.inputs.push(e.inputs.clone());
    tr.lambdas.push(lambdas);
    tr.zs.push(zs);
    tr.states.push(states);
    tr.etas.push(etas);
    tr.disturbances.push(e.disturbances.clone());
    tr.err_opt.push(err_opt);
    tr.err_consensus.push(err_consensus);
    tr.deriv_norm.push(deriv_norm);
}

/// Mean output over the trailing `window` fraction of samples, plus the max
/// derivative norm over the same window.
pub fn steady_state_metrics(tr: &Trajectory, window: f64) -> Result<(Vec<f64>, f64), SimError> {
    if tr.is_empty() {
        return Err(SimError::EmptyTrajectory);
    }
    if !(window > 0.0 && window <= 1.0) {
        return Err(SimError::BadWindow { window });
    }
    let len = tr.len();
    let m = ((window * len as f64).ceil() as usize).clamp(1, len);
    let start = len - m;
    let n = tr.y_star.len();
    let mut mean = vec![0.0; n];
    for row in &tr.outputs[start..] {
        for (acc, v) in mean.iter_mut().zip(row) {
            *acc += v;
        }
    }
    for acc in &mut mean {
        *acc /= m as f64;
    }
    let max_deriv = tr.deriv_norm[start..]
        .iter()
        .fold(0.0_f64, |a, &b| a.max(b));
    Ok((mean, max_deriv))
}
