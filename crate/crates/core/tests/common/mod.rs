#![allow(dead_code)]

use cryoloop::bifurcation::critical_detuning;
use cryoloop::ensemble::trajectory_rng;
use cryoloop::oracle::{drive_ramp_schedule, isolated};
use cryoloop::params::ParamConfig;
use cryoloop::trajectory::{run_trajectory, TrajectoryOptions};
use cryoloop::SystemParams;

/// Isolated Kerr resonator with the given rates (MHz), Kerr detuning and
/// nonlinearity (MHz).
pub fn kerr_only(kappa_a: f64, kappa_d: f64, delta_a0: f64, kerr: f64) -> SystemParams {
    let cfg = ParamConfig {
        K_MHz: kerr,
        kappa_a_MHz: kappa_a,
        kappa_d_MHz: kappa_d,
        delta_a0_MHz: Some(delta_a0),
        ..ParamConfig::default()
    };
    isolated(&SystemParams::from_config(&cfg).unwrap())
}

/// Drive-ramp scenario: kappa_a = kappa_d = 0.5 MHz, detuning 1.75 times
/// critical and K = -0.012 delta.
pub fn ramp_scenario() -> SystemParams {
    let delta = 1.75 * critical_detuning(0.5, 0.5);
    kerr_only(0.5, 0.5, delta, -0.012 * delta)
}

pub fn noise_free() -> TrajectoryOptions {
    TrajectoryOptions {
        noise: false,
        qubit_decay: false,
        fixed_sz: Some(-1.0),
        ..TrajectoryOptions::default()
    }
}

/// Final photon number after ramping the drive to `plateau` (units of
/// sqrt(kappa_d)) and holding it, without noise.
pub fn noise_free_final_photons(p: &SystemParams, plateau: f64, ramp: f64, hold: f64) -> f64 {
    let schedule = drive_ramp_schedule(p, plateau, ramp, hold);
    let mut rng = trajectory_rng(0, 0);
    run_trajectory(&schedule, p, false, &noise_free(), &mut rng)
        .unwrap()
        .field
        .n_a()
}

/// Two-sided binomial standard error.
pub fn binomial_sigma(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}
