//! Cross-module behavior checks that need the full closed loop.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use passalloc::config::resolve;
use passalloc::controller::{equilibrium_residual, ControllerMode, ControllerParams};
use passalloc::costs::CostFunction;
use passalloc::graph::Graph;
use nalgebra::Complex;
use passalloc::observer::{default_poles, design_gain, Exosystem};
use passalloc::oracle::exp_rate_fit_in_window;
use passalloc::plants::Plant;
use passalloc::presets::preset;
use passalloc::sim::{
    integrate, steady_state_metrics, AgentSetup, DisturbanceSchedule, InitialState, SimConfig,
};

/// The observer error must decay at (essentially) the rate its pole
/// placement promises while tracking a live constant-plus-sinusoids signal.
#[test]
fn observer_error_decays_at_designed_rate() {
    let schedule = DisturbanceSchedule {
        d0: 1.5,
        amplitudes: vec![0.8, 0.5],
        phases: vec![0.3, 1.1],
        freqs: vec![2.0, 0.7],
        onset: 0.0,
    };
    let exo = Exosystem::new(&schedule.freqs).unwrap();
    // An isolated dominant pole keeps the tail free of the polynomial
    // modulation a clustered spectrum would add, so the log-linear fit can
    // actually see the designed rate.
    let poles = [
        Complex::new(-4.0, 0.0),
        Complex::new(-5.0, 1.0),
        Complex::new(-5.0, -1.0),
        Complex::new(-6.0, 2.0),
        Complex::new(-6.0, -2.0),
    ];
    let gain = design_gain(&exo, &poles).unwrap();
    let abscissa = gain.spectral_abscissa();
    assert!(abscissa < 0.0);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut eta = DVector::from_iterator(exo.dim(), (0..exo.dim()).map(|_| rng.gen_range(-2.0..2.0)));
    let dt = 1e-3;
    let steps = 10_000;
    let mut times = Vec::with_capacity(steps + 1);
    let mut errors = Vec::with_capacity(steps + 1);
    let rhs = |t: f64, eta: &DVector<f64>| gain.closed_loop() * eta + gain.l() * schedule.value(t);
    for k in 0..=steps {
        let t = k as f64 * dt;
        times.push(t);
        errors.push((&eta - schedule.exo_state(t)).norm());
        if k == steps {
            break;
        }
        let k1 = rhs(t, &eta);
        let k2 = rhs(t + 0.5 * dt, &(&eta + 0.5 * dt * &k1));
        let k3 = rhs(t + 0.5 * dt, &(&eta + 0.5 * dt * &k2));
        let k4 = rhs(t + dt, &(&eta + dt * &k3));
        eta += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    // Fit past the non-normal transient hump (the large single-output gain
    // makes the error grow before the exponential tail takes over), well
    // above the integrator's tracking floor.
    let fit = exp_rate_fit_in_window(&times, &errors, 1e-6, 1e-2).unwrap();
    assert!(
        fit.rate >= 0.9 * abscissa.abs(),
        "fitted rate {} vs designed {}",
        fit.rate,
        abscissa.abs()
    );
    assert!(fit.r_squared > 0.99);
}

fn integrator_network(mode: ControllerMode) -> SimConfig {
    let graph = Graph::from_edges(4, &[(0, 1), (1, 2), (1, 3), (2, 3)]).unwrap();
    let agents = [1.0, 2.0, 3.0, 4.0]
        .iter()
        .map(|&d| {
            let exo = Exosystem::new(&[]).unwrap();
            let gain = design_gain(&exo, &default_poles(1)).unwrap();
            AgentSetup {
                plant: Plant::SingleIntegrator,
                cost: CostFunction::Quadratic {
                    a: 0.5,
                    b: 0.0,
                    c: 0.0,
                },
                schedule: DisturbanceSchedule::constant(d),
                exo,
                gain,
                initial_state: InitialState::Uniform { lo: -1.0, hi: 1.0 },
            }
        })
        .collect();
    SimConfig {
        graph,
        agents,
        params: ControllerParams {
            gamma: 1.5,
            mode,
            gamma_override: false,
        },
        dt: 0.01,
        horizon: 30.0,
        record_every: 1,
        events: Vec::new(),
        d_eps_initial: true,
        feedforward: true,
        seed: 3,
    }
}

/// Average-consensus mode is exactly the full controller with `½y²` costs.
#[test]
fn average_consensus_mode_is_half_quadratic_full_mode() {
    let full = integrate(&integrator_network(ControllerMode::Full)).unwrap();
    let ac = integrate(&integrator_network(ControllerMode::AverageConsensus)).unwrap();
    assert_eq!(full, ac);
    assert_eq!(full.to_csv(), ac.to_csv());
    // And it actually averages the private data.
    for y in full.final_outputs() {
        assert!((y - 2.5).abs() < 1e-6);
    }
}

/// Once the derivatives have died out, the network state certifies the
/// allocation optimality conditions.
#[test]
fn settled_run_passes_the_optimality_certificate() {
    let mut spec = preset("inventory", 7).unwrap();
    spec.horizon = 200.0;
    let resolved = resolve(&spec).unwrap();
    let tr = integrate(&resolved.sim).unwrap();
    let (_, max_deriv) = steady_state_metrics(&tr, 0.02).unwrap();
    assert!(max_deriv < 1e-6, "not settled: derivative norm {max_deriv}");

    let costs: Vec<CostFunction> = resolved.sim.agents.iter().map(|a| a.cost.clone()).collect();
    let d0: Vec<f64> = resolved.sim.agents.iter().map(|a| a.schedule.d0).collect();
    let report = equilibrium_residual(
        tr.final_outputs(),
        tr.final_lambdas(),
        &d0,
        &costs,
        resolved.sim.params.gamma,
    );
    assert!(report.kkt_residual < 1e-4, "kkt {}", report.kkt_residual);
    assert!(
        report.balance_residual < 1e-4,
        "balance {}",
        report.balance_residual
    );
    assert!(report.lambda_spread < 1e-4);
}
