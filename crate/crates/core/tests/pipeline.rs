use eddpc::data::{build_predictor_data, Dataset};
use eddpc::explicit::{build_explicit_law, read_law, write_law, BuildOptions, ExplicitLaw, Provenance};
use eddpc::mpqp::assemble;
use eddpc::numkit::Vector;
use eddpc::sim::{
    altitude_demo, benchmark_spec, collect_open_loop, gamma_sweep, log_grid, AltitudeConfig, Direction, LtiSystem,
    NoiseConfig, SweepConfig, GRAVITY, U_MAX,
};

fn small_sweep(seed: u64) -> SweepConfig {
    let mut cfg = SweepConfig::benchmark(benchmark_spec(1.0), seed);
    cfg.gammas = log_grid(-2.0, 2.0, 3);
    cfg.runs = 3;
    cfg
}

#[test]
fn noiseless_altitude_maneuvers_settle() {
    for dir in [Direction::Takeoff, Direction::Landing] {
        let mut cfg = AltitudeConfig::new(dir, 2.0, 7);
        cfg.snr_db = None;
        cfg.noisy_test = false;
        let run = altitude_demo(&cfg).unwrap();
        let z = run.altitude();
        assert!(z.iter().all(|&v| v >= -1e-9), "{dir:?} went below ground");
        assert!(run.trajectory.inputs.iter().all(|&u| (-GRAVITY - 1e-7..=U_MAX + 1e-7).contains(&u)));
        assert!((z[z.len() - 1] - run.z_bar).abs() <= 0.05, "{dir:?} final altitude {}", z[z.len() - 1]);
    }
}

#[test]
fn law_file_round_trip() {
    let d = collect_open_loop(&LtiSystem::benchmark(), 100, (-5.0, 5.0), &NoiseConfig::snr(20.0, 3)).unwrap();
    let spec = benchmark_spec(10.0);
    let q = assemble(&build_predictor_data(&d, spec.horizon).unwrap(), &spec).unwrap();
    let law = build_explicit_law(&q, &BuildOptions::default())
        .unwrap()
        .with_provenance(Provenance { dataset: d.digest(), spec: spec.digest() });
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("law.json");
    write_law(&law, &path).unwrap();
    let back = read_law(&path).unwrap();
    assert_eq!(back, law);
    for x in [[0.0, 0.0], [1.0, 1.0], [-4.0, 3.0]] {
        let x = Vector::from_row_slice(&x);
        assert_eq!(back.evaluate(&x), law.evaluate(&x));
    }
}

#[test]
fn law_file_rejects_other_versions() {
    let d = collect_open_loop(&LtiSystem::benchmark(), 60, (-5.0, 5.0), &NoiseConfig::noiseless(1)).unwrap();
    let spec = benchmark_spec(1.0);
    let q = assemble(&build_predictor_data(&d, spec.horizon).unwrap(), &spec).unwrap();
    let text = build_explicit_law(&q, &BuildOptions::default()).unwrap().to_json();
    let bumped = text.replacen("\"schema_version\": 1", "\"schema_version\": 2", 1);
    let err = ExplicitLaw::from_json(&bumped).unwrap_err();
    assert_eq!(err.code(), "E_SCHEMA_VERSION");
}

#[test]
fn dataset_csv_round_trip() {
    let d = collect_open_loop(&LtiSystem::benchmark(), 50, (-5.0, 5.0), &NoiseConfig::snr(20.0, 9)).unwrap();
    let back = Dataset::from_csv(&d.to_csv()).unwrap();
    assert_eq!(back.to_csv(), d.to_csv());
    assert_eq!(back.digest(), d.digest());
}

#[test]
fn sweep_is_reproducible() {
    let a = gamma_sweep(&small_sweep(42)).unwrap().to_csv();
    let b = gamma_sweep(&small_sweep(42)).unwrap().to_csv();
    let c = gamma_sweep(&small_sweep(43)).unwrap().to_csv();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(a.starts_with("gamma,run,J,regions,certificate,flags\n"));
    assert_eq!(a.lines().count(), 1 + 3 * 3);
}
