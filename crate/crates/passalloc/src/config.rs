//! TOML experiment files and their resolution into a runnable [`SimConfig`].
//!
//! A config file names the topology, the per-agent plant/cost/disturbance/
//! observer setup, the controller parameters, and the integration protocol.
//! An annotated example ships in the repository (`example-experiment.toml`).
//! Resolution fills in everything the file may leave open — observer gains
//! from pole placement, the gradient gain from its bound, disturbance phases
//! and initial states from the seed — so the resolved spec that lands in the
//! run's metadata sidecar is fully concrete and reproduces the run exactly.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{ControllerMode, ControllerParams};
use crate::costs::CostFunction;
use crate::graph::{Graph, GraphError};
use crate::observer::{self, Exosystem, ObserverError, ObserverGain};
use crate::oracle::{self, OracleError};
use crate::plants::Plant;
use crate::sim::{AgentSetup, DisturbanceSchedule, EventAction, InitialState, SimConfig, SimError};

/// Stream salt so phase draws do not consume the initial-condition stream.
const PHASE_STREAM_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    ReadFailed {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    WriteFailed {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config serialize error: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("config needs at least one [[agent]] section")]
    NoAgents,
    #[error("edge {index} uses node {node}, but nodes are 1-based up to {n}")]
    EdgeIndex { index: usize, node: usize, n: usize },
    #[error("{edges} edges but {weights} weights")]
    WeightsCount { edges: usize, weights: usize },
    #[error("agent {agent}: amplitudes list has {got} entries for {freqs} frequencies")]
    AmplitudesCount {
        agent: usize,
        got: usize,
        freqs: usize,
    },
    #[error("agent {agent}: phases list has {got} entries for {freqs} frequencies")]
    PhasesCount {
        agent: usize,
        got: usize,
        freqs: usize,
    },
    #[error("agent {agent}: give either observer poles or an explicit L, not both")]
    ObserverOverSpecified { agent: usize },
    #[error("agent {agent}: explicit observer gain is not Hurwitz (spectral abscissa {abscissa})")]
    GainNotHurwitz { agent: usize, abscissa: f64 },
    #[error("agent {agent}: init_range lo {lo} must not exceed hi {hi}")]
    BadInitRange { agent: usize, lo: f64, hi: f64 },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("agent {agent}: {source}")]
    Observer {
        agent: usize,
        #[source]
        source: ObserverError,
    },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

fn default_name() -> String {
    "custom".to_string()
}
fn default_dt() -> f64 {
    0.01
}
fn default_horizon() -> f64 {
    50.0
}
fn default_record_every() -> usize {
    1
}
fn default_true() -> bool {
    true
}

/// Top-level experiment file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    /// Ablation switch: drop the steady-state feedforward when false.
    #[serde(default = "default_true")]
    pub feedforward: bool,
    pub graph: GraphSpec,
    #[serde(default)]
    pub controller: ControllerSpec,
    #[serde(rename = "agent")]
    pub agents: Vec<AgentSpec>,
    #[serde(rename = "event", default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<EventSpec>,
}

/// Topology as a 1-based edge list with optional weights (default 1.0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub edges: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSpec {
    /// Gradient gain; when absent, 1.1x the theoretical bound is used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default = "ControllerSpec::default_mode")]
    pub mode: ControllerMode,
    /// Allow gamma below the bound (exponentially passive plants).
    #[serde(default)]
    pub override_gamma: bool,
    /// Observer compensation active from t = 0.
    #[serde(default = "default_true")]
    pub d_eps_initial: bool,
}

impl ControllerSpec {
    fn default_mode() -> ControllerMode {
        ControllerMode::Full
    }
}

impl Default for ControllerSpec {
    fn default() -> Self {
        Self {
            gamma: None,
            mode: ControllerMode::Full,
            override_gamma: false,
            d_eps_initial: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub plant: Plant,
    pub cost: CostFunction,
    pub disturbance: DisturbanceSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observer: Option<ObserverSpec>,
    /// Uniform range for the initial plant state (per coordinate).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_range: Option<[f64; 2]>,
    /// Explicit initial plant state; wins over `init_range`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceSpec {
    pub d0: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub freqs: Vec<f64>,
    /// Defaults to 1.0 per sinusoid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitudes: Option<Vec<f64>>,
    /// Defaults to seed-drawn values in [0, 2pi).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phases: Option<Vec<f64>>,
    #[serde(default)]
    pub onset: f64,
}

/// Observer gain selection: explicit column `L`, requested `poles`, or
/// neither (default pole set).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserverSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poles: Option<Vec<f64>>,
    #[serde(rename = "L", default, skip_serializing_if = "Option::is_none")]
    pub l: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSpec {
    pub time: f64,
    pub action: EventAction,
}

/// A spec with every open choice made, plus the runnable translation.
#[derive(Debug, Clone)]
pub struct ResolvedExperiment {
    /// Fully concrete spec; serializing and re-resolving it reproduces the
    /// run exactly.
    pub spec: ExperimentSpec,
    pub sim: SimConfig,
    pub warnings: Vec<String>,
}

pub fn load_spec(path: &Path) -> Result<ExperimentSpec, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::ReadFailed {
        path: path.display().to_string(),
        source,
    })?;
    parse_spec(&text)
}

pub fn parse_spec(text: &str) -> Result<ExperimentSpec, ConfigError> {
    Ok(toml::from_str(text)?)
}

pub fn spec_to_toml(spec: &ExperimentSpec) -> Result<String, ConfigError> {
    Ok(toml::to_string(spec)?)
}

/// Fills every open choice in `spec` deterministically from its seed and
/// builds the runnable configuration.
pub fn resolve(spec: &ExperimentSpec) -> Result<ResolvedExperiment, ConfigError> {
    if spec.agents.is_empty() {
        return Err(ConfigError::NoAgents);
    }
    let mut resolved = spec.clone();
    let n = resolved.agents.len();

    // Graph from the 1-based edge list.
    let weights = match &resolved.graph.weights {
        Some(w) if w.len() != resolved.graph.edges.len() => {
            return Err(ConfigError::WeightsCount {
                edges: resolved.graph.edges.len(),
                weights: w.len(),
            })
        }
        Some(w) => w.clone(),
        None => vec![1.0; resolved.graph.edges.len()],
    };
    let mut edges = Vec::with_capacity(resolved.graph.edges.len());
    for (index, ([i, j], w)) in resolved.graph.edges.iter().zip(&weights).enumerate() {
        for &node in &[*i, *j] {
            if node == 0 || node > n {
                return Err(ConfigError::EdgeIndex { index, node, n });
            }
        }
        edges.push((i - 1, j - 1, *w));
    }
    let graph = Graph::from_weighted_edges(n, &edges)?;

    // Disturbance phases and amplitudes.
    let mut phase_rng = ChaCha8Rng::seed_from_u64(resolved.seed ^ PHASE_STREAM_SALT);
    for (idx, agent) in resolved.agents.iter_mut().enumerate() {
        let k = agent.disturbance.freqs.len();
        match &agent.disturbance.amplitudes {
            Some(a) if a.len() != k => {
                return Err(ConfigError::AmplitudesCount {
                    agent: idx + 1,
                    got: a.len(),
                    freqs: k,
                })
            }
            Some(_) => {}
            None => agent.disturbance.amplitudes = Some(vec![1.0; k]),
        }
        match &agent.disturbance.phases {
            Some(p) if p.len() != k => {
                return Err(ConfigError::PhasesCount {
                    agent: idx + 1,
                    got: p.len(),
                    freqs: k,
                })
            }
            Some(_) => {}
            None => {
                let phases = (0..k)
                    .map(|_| phase_rng.gen_range(0.0..std::f64::consts::TAU))
                    .collect();
                agent.disturbance.phases = Some(phases);
            }
        }
    }

    // Exosystems and observer gains.
    let mut setups = Vec::with_capacity(n);
    for (idx, agent) in resolved.agents.iter_mut().enumerate() {
        let wrap = |source| ConfigError::Observer {
            agent: idx + 1,
            source,
        };
        let exo = Exosystem::new(&agent.disturbance.freqs).map_err(wrap)?;
        let gain = match &agent.observer {
            Some(ObserverSpec {
                poles: Some(_),
                l: Some(_),
            }) => return Err(ConfigError::ObserverOverSpecified { agent: idx + 1 }),
            Some(ObserverSpec { l: Some(l), .. }) => {
                let gain = ObserverGain::from_column(&exo, l).map_err(wrap)?;
                if gain.spectral_abscissa() >= 0.0 {
                    return Err(ConfigError::GainNotHurwitz {
                        agent: idx + 1,
                        abscissa: gain.spectral_abscissa(),
                    });
                }
                gain
            }
            Some(ObserverSpec {
                poles: Some(poles), ..
            }) => {
                let complex: Vec<_> = poles
                    .iter()
                    .map(|&p| nalgebra::Complex::new(p, 0.0))
                    .collect();
                observer::design_gain(&exo, &complex).map_err(wrap)?
            }
            _ => observer::design_gain(&exo, &observer::default_poles(exo.dim())).map_err(wrap)?,
        };
        // Record the gain actually used (only the column, so re-resolving
        // the recorded spec is idempotent).
        agent.observer = Some(ObserverSpec {
            poles: None,
            l: Some(gain.l().iter().copied().collect()),
        });

        let initial_state = match (&agent.initial_state, &agent.init_range) {
            (Some(x0), _) => InitialState::Explicit(x0.clone()),
            (None, Some([lo, hi])) => {
                if lo > hi {
                    return Err(ConfigError::BadInitRange {
                        agent: idx + 1,
                        lo: *lo,
                        hi: *hi,
                    });
                }
                InitialState::Uniform { lo: *lo, hi: *hi }
            }
            (None, None) => InitialState::Explicit(vec![0.0; agent.plant.state_dim()]),
        };
        setups.push(AgentSetup {
            plant: agent.plant.clone(),
            cost: agent.cost.clone(),
            schedule: DisturbanceSchedule {
                d0: agent.disturbance.d0,
                amplitudes: agent.disturbance.amplitudes.clone().unwrap_or_default(),
                phases: agent.disturbance.phases.clone().unwrap_or_default(),
                freqs: agent.disturbance.freqs.clone(),
                onset: agent.disturbance.onset,
            },
            exo,
            gain,
            initial_state,
        });
    }

    let mut sim = SimConfig {
        graph,
        agents: setups,
        params: ControllerParams {
            gamma: resolved.controller.gamma.unwrap_or(1.0),
            mode: resolved.controller.mode,
            gamma_override: resolved.controller.override_gamma,
        },
        dt: resolved.dt,
        horizon: resolved.horizon,
        record_every: resolved.record_every,
        events: resolved
            .events
            .iter()
            .map(|e| (e.time, e.action))
            .collect(),
        d_eps_initial: resolved.controller.d_eps_initial,
        feedforward: resolved.feedforward,
        seed: resolved.seed,
    };
    if resolved.controller.gamma.is_none() {
        sim.params.gamma = 1.1 * sim.gamma_bound()?;
        resolved.controller.gamma = Some(sim.params.gamma);
    }

    // Pin the initial states that the seed produces, so the recorded spec
    // reproduces the run even if initial ranges were given.
    let drawn = sim.resolve_initial_states();
    for ((agent, setup), x0) in resolved.agents.iter_mut().zip(&mut sim.agents).zip(drawn) {
        agent.initial_state = Some(x0.clone());
        setup.initial_state = InitialState::Explicit(x0);
    }

    let warnings = sim.validate()?;
    Ok(ResolvedExperiment {
        spec: resolved,
        sim,
        warnings,
    })
}

/// Sidecar metadata written next to each run's CSV: run facts, the oracle
/// solution, and the fully resolved config.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMetadata {
    pub run: RunInfo,
    pub oracle: OracleInfo,
    pub config: ExperimentSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunInfo {
    pub name: String,
    pub seed: u64,
    pub gamma: f64,
    pub gamma_bound: f64,
    pub dt: f64,
    pub horizon: f64,
    pub record_every: usize,
    pub tool_version: String,
    #[serde(default)]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleInfo {
    pub y_star: Vec<f64>,
    pub lambda0: f64,
    pub objective: f64,
    pub kkt_residual: f64,
    pub balance_residual: f64,
}

impl RunMetadata {
    /// Builds the sidecar content for a resolved experiment by solving the
    /// allocation problem centrally.
    pub fn for_experiment(resolved: &ResolvedExperiment) -> Result<Self, ConfigError> {
        let costs: Vec<CostFunction> =
            resolved.sim.agents.iter().map(|a| a.cost.clone()).collect();
        let d0: Vec<f64> = resolved.sim.agents.iter().map(|a| a.schedule.d0).collect();
        let solution = oracle::solve_allocation(&costs, &d0)?;
        let kkt_residual = solution
            .y_star
            .iter()
            .zip(&costs)
            .map(|(&y, f)| (f.gradient(y) + solution.lambda0).abs())
            .fold(0.0_f64, f64::max);
        let balance_residual =
            (solution.y_star.iter().sum::<f64>() - d0.iter().sum::<f64>()).abs();
        Ok(Self {
            run: RunInfo {
                name: resolved.spec.name.clone(),
                seed: resolved.spec.seed,
                gamma: resolved.sim.params.gamma,
                gamma_bound: resolved.sim.gamma_bound()?,
                dt: resolved.spec.dt,
                horizon: resolved.spec.horizon,
                record_every: resolved.spec.record_every,
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                warnings: resolved.warnings.clone(),
            },
            oracle: OracleInfo {
                y_star: solution.y_star,
                lambda0: solution.lambda0,
                objective: solution.objective,
                kkt_residual,
                balance_residual,
            },
            config: resolved.spec.clone(),
        })
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }
}
