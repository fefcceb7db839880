//! Take-off and landing of a gravity-compensated vertical double
//! integrator under an explicit law learned from closed-loop data.

use serde::{Deserialize, Serialize};

use super::{
    collect_closed_loop, derive_seed, noise_std_for_snr, simulate_closed_loop, Fallback, LtiSystem, MeasurementNoise,
    NoiseConfig, SetpointSchedule, Stabilizer, Trajectory,
};
use crate::data::build_predictor_data;
use crate::error::{invalid, Result};
use crate::explicit::{build_explicit_law, BuildOptions};
use crate::mpqp::{assemble, MpcSpec};
use crate::numkit::{mat, vec, SymMatrix, Vector};

pub const SAMPLE_RATE_HZ: f64 = 40.0;
pub const GRAVITY: f64 = 9.81;
/// Upper bound on the compensated input `u = u_z/m − g`.
pub const U_MAX: f64 = 9.564;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Takeoff,
    Landing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AltitudeConfig {
    pub direction: Direction,
    /// Cruise altitude: target of a take-off, start of a landing.
    pub altitude: f64,
    /// Test length in seconds.
    pub duration: f64,
    /// Data length in samples (20 s at 40 Hz by default).
    pub samples: usize,
    /// SNR of the recorded data; the test measurements use the same noise
    /// level when `noisy_test` is set.
    pub snr_db: Option<f64>,
    pub noisy_test: bool,
    pub seed: u64,
}

impl AltitudeConfig {
    pub fn new(direction: Direction, altitude: f64, seed: u64) -> Self {
        AltitudeConfig {
            direction,
            altitude,
            duration: 10.0,
            samples: 800,
            snr_db: Some(30.0),
            noisy_test: true,
            seed,
        }
    }

    /// `(set point z̄, initial altitude)`
    pub fn endpoints(&self) -> (f64, f64) {
        match self.direction {
            Direction::Takeoff => (self.altitude, 0.0),
            Direction::Landing => (0.0, self.altitude),
        }
    }
}

/// Regulation problem around set point `z̄`: state `(z − z̄, v_z)`,
/// `x₁ ≥ −z̄` and `−g ≤ u ≤ U_MAX`.
pub fn altitude_spec(z_bar: f64) -> MpcSpec {
    let qp = SymMatrix::from_diagonal(&[1.0, 0.1]);
    MpcSpec {
        horizon: 5,
        q: qp.clone(),
        r: SymMatrix::from_diagonal(&[1e-5]),
        p: qp,
        c_x: mat(3, 2, &[-1.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
        c_u: mat(3, 1, &[0.0, 1.0, -1.0]),
        d: vec(&[z_bar, U_MAX, GRAVITY]),
        gamma: 1.0,
    }
}

/// Hand-tuned PD loop used while recording data: `u = −4 (z − r) − 3 v_z`
/// plus dither in `[−1, 1]`, with a random set point in `[0, 4]` m held
/// for 2 s.
pub fn altitude_stabilizer() -> Stabilizer {
    Stabilizer {
        gain: mat(1, 2, &[-4.0, -3.0]),
        dither: (-1.0, 1.0),
        setpoint: Some(SetpointSchedule { channel: 0, lo: 0.0, hi: 4.0, hold: (2.0 * SAMPLE_RATE_HZ) as usize }),
    }
}

#[derive(Debug, Clone)]
pub struct AltitudeRun {
    pub config: AltitudeConfig,
    pub z_bar: f64,
    pub regions: usize,
    pub skipped_degenerate: usize,
    /// Trajectory in the shifted coordinates `(z − z̄, v_z)`.
    pub trajectory: Trajectory,
}

impl AltitudeRun {
    /// True altitude `z(t)`.
    pub fn altitude(&self) -> Vec<f64> {
        self.trajectory.states.row(0).iter().map(|v| v + self.z_bar).collect()
    }
}

pub fn altitude_demo(cfg: &AltitudeConfig) -> Result<AltitudeRun> {
    if !(0.0..=4.0).contains(&cfg.altitude) {
        return Err(invalid("altitude must lie in [0, 4] m"));
    }
    if !(cfg.duration > 0.0) {
        return Err(invalid("duration must be positive"));
    }
    let sys = LtiSystem::double_integrator(1.0 / SAMPLE_RATE_HZ);
    let noise = NoiseConfig { target_snr_db: cfg.snr_db, seed: derive_seed(cfg.seed, 0) };
    let data = collect_closed_loop(&sys, &altitude_stabilizer(), cfg.samples, &noise)?;
    let (z_bar, z0) = cfg.endpoints();
    let spec = altitude_spec(z_bar);
    let pd = build_predictor_data(&data, spec.horizon)?;
    let q = assemble(&pd, &spec)?;
    let law = build_explicit_law(&q, &BuildOptions::default())?;

    let test_noise = match (cfg.noisy_test, cfg.snr_db, &data.w) {
        (true, Some(db), Some(_)) => {
            let clean = data.x.clone() - data.w.as_ref().expect("noise recorded");
            let std = noise_std_for_snr(&clean, db);
            Some(MeasurementNoise { std: std.iter().copied().collect(), seed: derive_seed(cfg.seed, 1) })
        }
        _ => None,
    };
    let steps = (cfg.duration * SAMPLE_RATE_HZ).round() as usize;
    let x0 = Vector::from_vec(vec![z0 - z_bar, 0.0]);
    let trajectory = simulate_closed_loop(&sys, &law, Some(&q), &x0, steps, test_noise.as_ref(), Fallback::Implicit)?;
    Ok(AltitudeRun {
        config: cfg.clone(),
        z_bar,
        regions: law.n_regions(),
        skipped_degenerate: law.skipped_degenerate,
        trajectory,
    })
}
