//! Distributed resource allocation over networks of passive nonlinear agents.
//!
//! `passalloc` simulates a network of dynamic agents whose outputs are driven,
//! by a distributed primal-dual controller, to the optimal solution of
//!
//! ```text
//! minimize   Σᵢ fᵢ(yᵢ)
//! subject to Σᵢ yᵢ = Σᵢ dᵢ⁰
//! ```
//!
//! where agent `i` only knows its own convex cost `fᵢ`, a (possibly
//! disturbance-polluted) observation `dᵢ(t)` of its private datum `dᵢ⁰`, and
//! the dual variables of its graph neighbors. Each agent is a nonlinear plant
//! `ẋᵢ = gᵢ(xᵢ, uᵢ)`, `yᵢ = hᵢ(xᵢ)` that is (incrementally) passive with
//! respect to its forced equilibria; the controller combines a gradient
//! correction, consensus dynamics on the multipliers, a steady-state
//! feedforward, and a Luenberger observer with a sinusoidal internal model
//! that rejects the observation disturbances.
//!
//! Module map:
//!
//! - [`graph`]: communication topology, Laplacian, spectral quantities.
//! - [`costs`]: the convex cost library with analytic gradients/Hessians.
//! - [`plants`]: agent dynamics, regulator maps, storage functions.
//! - [`observer`]: disturbance internal model, PBH observability, gain design.
//! - [`controller`]: the distributed control law, gain bound, KKT residuals.
//! - [`sim`]: fixed-step RK4 integration of the closed-loop network.
//! - [`oracle`]: independent ground truth (centralized KKT solver, rate fits).
//! - [`config`]: TOML experiment files and resolution to a runnable setup.
//! - [`presets`]: the built-in experiment parameterizations.
//! - [`report`]: CSV ingestion and per-phase error summaries.

pub mod config;
pub mod controller;
pub mod costs;
pub mod graph;
pub mod observer;
pub mod oracle;
pub mod plants;
pub mod presets;
pub mod report;
pub mod sim;

pub use controller::{ControllerMode, ControllerParams, ControllerState, EquilibriumReport};
pub use costs::CostFunction;
pub use graph::{ConsensusBasis, Graph, LaplacianInfo};
pub use observer::{Exosystem, ObserverGain};
pub use oracle::AllocationSolution;
pub use plants::Plant;
pub use sim::{DisturbanceSchedule, SimConfig, Trajectory};

/// Default operating interval for curvature and Lipschitz estimates.
///
/// Trajectories of all shipped experiments stay well inside this box; gain
/// bounds computed from it are recorded in each run's metadata.
pub const OPERATING_INTERVAL: (f64, f64) = (-10.0, 10.0);

/// Default grid resolution used when scanning the operating interval.
pub const OPERATING_SAMPLES: usize = 2001;
