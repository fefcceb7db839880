//! Built-in plants, data collection, closed-loop simulation and the
//! Monte-Carlo studies.

mod altitude;
mod sweep;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{fmt17, Dataset};
use crate::error::{invalid, Error, Result};
use crate::explicit::ExplicitLaw;
use crate::mpqp::{MpQp, MpcSpec};
use crate::numkit::{self, Matrix, SymMatrix, Vector};

pub use altitude::{
    altitude_demo, altitude_spec, altitude_stabilizer, AltitudeConfig, AltitudeRun, Direction, GRAVITY, SAMPLE_RATE_HZ,
    U_MAX,
};
pub use sweep::{gamma_sweep, log_grid, median, SweepConfig, SweepRow, SweepTable};

/// Discrete-time LTI plant `x(t+1) = A x(t) + B u(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LtiSystem {
    pub name: String,
    #[serde(with = "numkit::rows")]
    pub a: Matrix,
    #[serde(with = "numkit::rows")]
    pub b: Matrix,
}

impl LtiSystem {
    pub fn new(name: &str, a: Matrix, b: Matrix) -> Result<Self> {
        if !a.is_square() || b.nrows() != a.nrows() || b.ncols() == 0 {
            return Err(invalid(format!("plant: A is {:?}, B is {:?}", a.shape(), b.shape())));
        }
        numkit::check_finite(&a, "A")?;
        numkit::check_finite(&b, "B")?;
        Ok(LtiSystem { name: name.to_string(), a, b })
    }

    /// Open-loop stable second-order benchmark.
    pub fn benchmark() -> Self {
        LtiSystem {
            name: "benchmark".into(),
            a: numkit::mat(2, 2, &[0.7326, -0.0861, 0.1722, 0.9909]),
            b: numkit::mat(2, 1, &[0.0609, 0.0064]),
        }
    }

    /// Vertical double integrator `ż = v, v̇ = u` sampled with a
    /// zero-order hold; `u` is the gravity-compensated acceleration.
    pub fn double_integrator(dt: f64) -> Self {
        LtiSystem {
            name: "altitude".into(),
            a: numkit::mat(2, 2, &[1.0, dt, 0.0, 1.0]),
            b: numkit::mat(2, 1, &[0.5 * dt * dt, dt]),
        }
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn step(&self, x: &Vector, u: &Vector) -> Vector {
        &self.a * x + &self.b * u
    }
}

/// Benchmark regulation problem: `L = 2`, `Q = P = I`, `R = 0.01`,
/// `|u| ≤ 2`. Sweeps replace `P` with the data-based Lyapunov weight.
pub fn benchmark_spec(gamma: f64) -> MpcSpec {
    MpcSpec {
        horizon: 2,
        q: SymMatrix::identity(2),
        r: SymMatrix::from_diagonal(&[0.01]),
        p: SymMatrix::identity(2),
        c_x: Matrix::zeros(2, 2),
        c_u: numkit::mat(2, 1, &[1.0, -1.0]),
        d: numkit::vec(&[2.0, 2.0]),
        gamma,
    }
}

/// Measurement noise for data collection: white Gaussian noise scaled to a
/// target average SNR, drawn from a seeded stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub target_snr_db: Option<f64>,
    pub seed: u64,
}

impl NoiseConfig {
    pub fn noiseless(seed: u64) -> Self {
        NoiseConfig { target_snr_db: None, seed }
    }

    pub fn snr(db: f64, seed: u64) -> Self {
        NoiseConfig { target_snr_db: Some(db), seed }
    }
}

/// Independent 64-bit seed for stream `index` of a master seed
/// (SplitMix64 finalizer).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-channel standard deviations giving `snr_db` on each channel of the
/// noiseless signal `x`.
pub fn noise_std_for_snr(x: &Matrix, snr_db: f64) -> Vector {
    let t = x.ncols().max(1) as f64;
    let ratio = 10f64.powf(snr_db / 10.0);
    Vector::from_iterator(x.nrows(), x.row_iter().map(|r| (r.norm_squared() / t / ratio).sqrt()))
}

fn gaussian(rng: &mut ChaCha8Rng, std: &Vector, cols: usize) -> Matrix {
    let mut w = Matrix::zeros(std.len(), cols);
    for i in 0..std.len() {
        if std[i] > 0.0 {
            let dist = Normal::new(0.0, std[i]).expect("finite positive std");
            for t in 0..cols {
                w[(i, t)] = dist.sample(rng);
            }
        }
    }
    w
}

fn uniform_inputs(rng: &mut ChaCha8Rng, m: usize, ts: usize, lo: f64, hi: f64) -> Matrix {
    Matrix::from_fn(m, ts, |_, _| rng.random_range(lo..=hi))
}

fn propagate(sys: &LtiSystem, u: &Matrix) -> Matrix {
    let ts = u.ncols();
    let mut x = Matrix::zeros(sys.n(), ts);
    for t in 1..ts {
        let next = &sys.a * x.column(t - 1) + &sys.b * u.column(t - 1);
        x.set_column(t, &next);
    }
    x
}

fn with_noise(u: Matrix, x: Matrix, noise: &NoiseConfig, stream: u64) -> Result<Dataset> {
    match noise.target_snr_db {
        None => Dataset::new(u, x, None),
        Some(db) => {
            if !db.is_finite() {
                return Err(invalid("target SNR must be finite"));
            }
            let std = noise_std_for_snr(&x, db);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(noise.seed, stream));
            let mut w = gaussian(&mut rng, &std, x.ncols());
            normalize_power(&mut w, &std);
            Dataset::new(u, &x + &w, Some(w))
        }
    }
}

/// Rescales each noise channel to the mean power `σ_i²`, so the recorded
/// SNR hits its target exactly instead of only in expectation.
fn normalize_power(w: &mut Matrix, std: &Vector) {
    let t = w.ncols() as f64;
    for (i, mut row) in w.row_iter_mut().enumerate() {
        let power = row.norm_squared() / t;
        if power > 0.0 {
            row *= std[i] / power.sqrt();
        }
    }
}

fn check_samples(ts: usize, lo: f64, hi: f64) -> Result<()> {
    if ts == 0 {
        return Err(invalid("at least one sample is required"));
    }
    if !(lo <= hi && lo.is_finite() && hi.is_finite()) {
        return Err(invalid("input range must be finite with lo ≤ hi"));
    }
    Ok(())
}

/// Open-loop experiment from `x(0) = 0` with i.i.d. uniform inputs.
pub fn collect_open_loop(sys: &LtiSystem, ts: usize, range: (f64, f64), noise: &NoiseConfig) -> Result<Dataset> {
    Ok(collect_repeated(sys, ts, range, noise, 1)?.remove(0))
}

/// `count` experiments driven by one input sequence, each with its own
/// noise realization.
pub fn collect_repeated(
    sys: &LtiSystem,
    ts: usize,
    (lo, hi): (f64, f64),
    noise: &NoiseConfig,
    count: usize,
) -> Result<Vec<Dataset>> {
    check_samples(ts, lo, hi)?;
    if count == 0 {
        return Err(invalid("at least one experiment is required"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let u = uniform_inputs(&mut rng, sys.m(), ts, lo, hi);
    let x = propagate(sys, &u);
    (0..count).map(|k| with_noise(u.clone(), x.clone(), noise, k as u64)).collect()
}

/// Piecewise-constant random set point on one state channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetpointSchedule {
    pub channel: usize,
    pub lo: f64,
    pub hi: f64,
    /// Samples between set-point changes.
    pub hold: usize,
}

/// Pre-existing stabilizing controller `u = K (x − r) + dither`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stabilizer {
    #[serde(with = "numkit::rows")]
    pub gain: Matrix,
    pub dither: (f64, f64),
    pub setpoint: Option<SetpointSchedule>,
}

/// Closed-loop experiment from `x(0) = 0`. The controller acts on the true
/// state; noise is added to the recorded states only.
pub fn collect_closed_loop(sys: &LtiSystem, stab: &Stabilizer, ts: usize, noise: &NoiseConfig) -> Result<Dataset> {
    let (lo, hi) = stab.dither;
    check_samples(ts, lo, hi)?;
    if stab.gain.shape() != (sys.m(), sys.n()) {
        return Err(invalid("stabilizer gain must be m×n"));
    }
    let rho = numkit::spectral_radius(&(&sys.a + &sys.b * &stab.gain))?;
    if rho >= 1.0 {
        return Err(Error::Unstable { spectral_radius: rho });
    }
    if let Some(s) = &stab.setpoint {
        if s.channel >= sys.n() || s.hold == 0 || !(s.lo <= s.hi) {
            return Err(invalid("set-point schedule is malformed"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let mut u = Matrix::zeros(sys.m(), ts);
    let mut x = Matrix::zeros(sys.n(), ts);
    let mut r = Vector::zeros(sys.n());
    for t in 0..ts {
        if let Some(s) = &stab.setpoint {
            if t % s.hold == 0 {
                r[s.channel] = rng.random_range(s.lo..=s.hi);
            }
        }
        let dither = Vector::from_fn(sys.m(), |_, _| rng.random_range(lo..=hi));
        let ut = &stab.gain * (x.column(t) - &r) + dither;
        u.set_column(t, &ut);
        if t + 1 < ts {
            let next = &sys.a * x.column(t) + &sys.b * &ut;
            x.set_column(t + 1, &next);
        }
    }
    with_noise(u, x, noise, 0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepFlag {
    RegionHit,
    FallbackImplicit,
    FallbackZero,
}

impl std::fmt::Display for StepFlag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StepFlag::RegionHit => "region",
            StepFlag::FallbackImplicit => "implicit",
            StepFlag::FallbackZero => "zero",
        })
    }
}

/// What to do when the measured state lies in no region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fallback {
    /// Solve the QP at the state; zero input if that fails.
    #[default]
    Implicit,
    Zero,
}

/// Closed-loop run: `states` holds `x(0) … x(T)`, `inputs` and `flags` hold
/// `u(0) … u(T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Matrix,
    pub measured: Matrix,
    pub inputs: Matrix,
    pub flags: Vec<StepFlag>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.states.ncols() == 0
    }

    pub fn count(&self, flag: StepFlag) -> usize {
        self.flags.iter().filter(|&&f| f == flag).count()
    }

    pub fn to_csv(&self) -> String {
        let (n, m) = (self.states.nrows(), self.inputs.nrows());
        let mut head = vec!["t".to_string()];
        head.extend((1..=n).map(|i| format!("x_{i}")));
        head.extend((1..=m).map(|i| format!("u_{i}")));
        head.push("flag".into());
        let mut out = head.join(",");
        out.push('\n');
        for t in 0..self.len() {
            let mut row = vec![t.to_string()];
            row.extend(self.states.column(t).iter().map(|&v| fmt17(v)));
            row.extend(self.inputs.column(t).iter().map(|&v| fmt17(v)));
            row.push(self.flags[t].to_string());
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Additive Gaussian measurement noise in closed-loop tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementNoise {
    pub std: Vec<f64>,
    pub seed: u64,
}

/// Runs the explicit law on the plant for `steps` transitions.
///
/// The law sees the measured state; the plant advances on the true state.
pub fn simulate_closed_loop(
    sys: &LtiSystem,
    law: &ExplicitLaw,
    q: Option<&MpQp>,
    x0: &Vector,
    steps: usize,
    noise: Option<&MeasurementNoise>,
    fallback: Fallback,
) -> Result<Trajectory> {
    let (n, m) = (sys.n(), sys.m());
    if law.dims.n != n || law.dims.m != m || x0.len() != n {
        return Err(invalid("law, plant and initial state dimensions differ"));
    }
    if let Some(q) = q {
        if q.dims.n != n || q.dims.m != m {
            return Err(invalid("mp-QP dimensions differ from the plant"));
        }
    }
    let mut rng = noise.map(|w| ChaCha8Rng::seed_from_u64(w.seed));
    let std = match noise {
        Some(w) if w.std.len() != n => return Err(invalid("noise std must have one entry per state")),
        Some(w) => Vector::from_vec(w.std.clone()),
        None => Vector::zeros(n),
    };
    let mut states = Matrix::zeros(n, steps + 1);
    let mut measured = Matrix::zeros(n, steps + 1);
    let mut inputs = Matrix::zeros(m, steps + 1);
    let mut flags = Vec::with_capacity(steps + 1);
    let mut x = x0.clone();
    for t in 0..=steps {
        let y = match rng.as_mut() {
            Some(r) => &x + gaussian(r, &std, 1).column(0),
            None => x.clone(),
        };
        let (u, flag) = match law.evaluate(&y) {
            Some(e) => (e.u0, StepFlag::RegionHit),
            None => match (fallback, q) {
                (Fallback::Implicit, Some(q)) => match q.implicit_solve_reduced(&y) {
                    Ok(s) => (s.u0, StepFlag::FallbackImplicit),
                    Err(_) => (Vector::zeros(m), StepFlag::FallbackZero),
                },
                _ => (Vector::zeros(m), StepFlag::FallbackZero),
            },
        };
        states.set_column(t, &x);
        measured.set_column(t, &y);
        inputs.set_column(t, &u);
        flags.push(flag);
        x = sys.step(&x, &u);
    }
    Ok(Trajectory { states, measured, inputs, flags })
}

/// `Σ_t ‖x(t)‖²_Q + ‖u(t)‖²_R` over every stored sample.
pub fn performance_index(traj: &Trajectory, q: &SymMatrix, r: &SymMatrix) -> f64 {
    (0..traj.len())
        .map(|t| q.quad(&traj.states.column(t).into_owned()) + r.quad(&traj.inputs.column(t).into_owned()))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::snr_db;
    use crate::explicit::{LawDims, Provenance};
    use crate::numkit::vec;

    #[test]
    fn noiseless_collection_is_exact() {
        let sys = LtiSystem::benchmark();
        let d = collect_open_loop(&sys, 50, (-5.0, 5.0), &NoiseConfig::noiseless(1)).unwrap();
        assert!(d.w.is_none());
        for t in 0..49 {
            let next = sys.step(&d.x.column(t).into_owned(), &d.u.column(t).into_owned());
            assert!((next - d.x.column(t + 1)).amax() < 1e-14);
        }
        assert!(d.u.iter().all(|&v| (-5.0..=5.0).contains(&v)));
    }

    #[test]
    fn snr_calibration() {
        let sys = LtiSystem::benchmark();
        for seed in 0..5 {
            let d = collect_open_loop(&sys, 100, (-5.0, 5.0), &NoiseConfig::snr(20.0, seed)).unwrap();
            let s = snr_db(&d.x, d.w.as_ref().unwrap()).unwrap();
            assert!((s - 20.0).abs() <= 0.5, "seed {seed}: {s}");
        }
    }

    #[test]
    fn same_seed_same_data() {
        let sys = LtiSystem::benchmark();
        let a = collect_open_loop(&sys, 30, (-1.0, 1.0), &NoiseConfig::snr(10.0, 9)).unwrap();
        let b = collect_open_loop(&sys, 30, (-1.0, 1.0), &NoiseConfig::snr(10.0, 9)).unwrap();
        assert_eq!(a, b);
        let c = collect_open_loop(&sys, 30, (-1.0, 1.0), &NoiseConfig::snr(10.0, 10)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn repeated_share_inputs() {
        let sys = LtiSystem::benchmark();
        let runs = collect_repeated(&sys, 30, (-5.0, 5.0), &NoiseConfig::snr(20.0, 4), 3).unwrap();
        assert_eq!(runs[0].u, runs[2].u);
        assert_ne!(runs[0].x, runs[1].x);
    }

    #[test]
    fn closed_loop_without_dither_stays_at_rest() {
        let sys = LtiSystem::benchmark();
        let stab = Stabilizer { gain: numkit::mat(1, 2, &[-0.5, -0.5]), dither: (0.0, 0.0), setpoint: None };
        let d = collect_closed_loop(&sys, &stab, 40, &NoiseConfig::noiseless(0)).unwrap();
        assert!(d.x.amax() == 0.0 && d.u.amax() == 0.0);
    }

    #[test]
    fn destabilizing_gain_rejected() {
        let sys = LtiSystem::benchmark();
        let stab = Stabilizer { gain: numkit::mat(1, 2, &[0.0, 100.0]), dither: (-1.0, 1.0), setpoint: None };
        assert!(matches!(
            collect_closed_loop(&sys, &stab, 40, &NoiseConfig::noiseless(0)),
            Err(Error::Unstable { .. })
        ));
    }

    fn linear_law(k: f64) -> ExplicitLaw {
        ExplicitLaw {
            dims: LawDims { n: 2, m: 1, horizon: 1 },
            gamma: 1.0,
            provenance: Provenance::default(),
            skipped_degenerate: 0,
            regions: vec![crate::explicit::CriticalRegion {
                active_set: vec![],
                region: crate::optkit::Polyhedron::universe(2),
                gain_u: numkit::mat(1, 2, &[k, k]),
                offset_u: vec(&[0.0]),
                gain_lambda: Matrix::zeros(2, 2),
                offset_lambda: Vector::zeros(2),
                cl_gain: Matrix::identity(2, 2),
                cl_offset: Vector::zeros(2),
                chebyshev_radius: 1e3,
            }],
        }
    }

    #[test]
    fn rest_stays_at_rest() {
        let sys = LtiSystem::benchmark();
        let tr = simulate_closed_loop(&sys, &linear_law(-1.0), None, &Vector::zeros(2), 20, None, Fallback::Zero)
            .unwrap();
        assert_eq!(tr.states.amax(), 0.0);
        assert_eq!(tr.count(StepFlag::RegionHit), 21);
        assert_eq!(performance_index(&tr, &SymMatrix::identity(2), &SymMatrix::identity(1)), 0.0);
    }

    #[test]
    fn index_scales_quadratically() {
        let sys = LtiSystem::benchmark();
        let law = linear_law(-1.0);
        let a = simulate_closed_loop(&sys, &law, None, &vec(&[1.0, 1.0]), 10, None, Fallback::Zero).unwrap();
        let b = simulate_closed_loop(&sys, &law, None, &vec(&[2.0, 2.0]), 10, None, Fallback::Zero).unwrap();
        let q = SymMatrix::identity(2);
        let r = SymMatrix::zeros(1);
        let ja = performance_index(&a, &q, &r);
        assert!((performance_index(&b, &q, &r) - 4.0 * ja).abs() < 1e-9 * ja);
    }

    #[test]
    fn trajectory_csv_layout() {
        let sys = LtiSystem::benchmark();
        let tr = simulate_closed_loop(&sys, &linear_law(0.0), None, &vec(&[1.0, 0.0]), 2, None, Fallback::Zero)
            .unwrap();
        let csv = tr.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t,x_1,x_2,u_1,flag");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].ends_with(",region"));
    }

    #[test]
    fn seeds_are_distinct() {
        let s: std::collections::HashSet<u64> = (0..1000).map(|i| derive_seed(7, i)).collect();
        assert_eq!(s.len(), 1000);
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
    }
}
