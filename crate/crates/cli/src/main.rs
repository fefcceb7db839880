//! `eddpc`: collect data, synthesize explicit laws, certify, evaluate and
//! simulate them, and run the reference studies.
//!
//! Every run prints its resolved configuration to stderr as one
//! `config: {...}` line; `--save-config` writes the same JSON to a file and
//! `--config` re-runs it. Failures print one `error: <CODE>: <message>`
//! line and exit with status 1.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use eddpc::sim::{AltitudeConfig, Direction, SweepConfig};
use eddpc::{Error, Result};

use config::*;

#[derive(Parser)]
#[command(name = "eddpc", version, about = "Explicit data-driven predictive control")]
struct Cli {
    /// Run a saved configuration instead of a subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Write the resolved configuration to this file.
    #[arg(long, global = true)]
    save_config: Option<PathBuf>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Record an input/state dataset from a built-in plant.
    Collect {
        #[arg(long, value_enum, default_value = "benchmark")]
        preset: Preset,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        /// Target SNR in dB; omit for noiseless data.
        #[arg(long)]
        snr: Option<f64>,
        /// Open-loop input range `lo,hi` (default: benchmark [-5, 5],
        /// altitude closed-loop with its stabilizer).
        #[arg(long, value_delimiter = ',', num_args = 2, allow_hyphen_values = true)]
        input_range: Option<Vec<f64>>,
        #[arg(long, default_value_t = 1)]
        experiments: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the explicit law from a dataset and a spec.
    Synth {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long)]
        no_merge: bool,
        /// Largest active-set size enumerated.
        #[arg(long)]
        cap: Option<usize>,
        #[arg(long, value_enum, default_value = "auto")]
        certificate: CertMode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Search a Lyapunov certificate for a law.
    Check {
        #[arg(long)]
        law: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "auto")]
        mode: CertMode,
        /// Write the certificate as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a law at one state.
    Eval {
        #[arg(long)]
        law: PathBuf,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        x: Vec<f64>,
    },
    /// Closed-loop simulation of a law on a built-in plant.
    Simulate {
        #[arg(long)]
        law: PathBuf,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "1,1")]
        x0: Vec<f64>,
        #[arg(long, default_value_t = 50)]
        steps: usize,
        /// Dataset the law was built from; enables the implicit fallback
        /// (the spec flags must match the synthesis run).
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte-Carlo γ study on the benchmark plant.
    Sweep {
        /// `lo:hi:count` in decades or a comma-separated list.
        #[arg(long, default_value = "-6:4:21", allow_hyphen_values = true)]
        gammas: String,
        #[arg(long, default_value_t = 30)]
        runs: usize,
        /// Noise level of the recorded data; `none` for noiseless.
        #[arg(long, default_value = "20")]
        snr: String,
        /// Experiments averaged per dataset.
        #[arg(long, default_value_t = 1)]
        experiments: usize,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "1,1")]
        x0: Vec<f64>,
        #[arg(long, default_value_t = 50)]
        steps: usize,
        #[arg(long)]
        no_certify: bool,
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Take-off or landing of the altitude loop.
    DemoAltitude {
        #[arg(long, value_enum, default_value = "takeoff")]
        direction: DirectionArg,
        #[arg(long, default_value_t = 2.0)]
        altitude: f64,
        #[arg(long, default_value_t = 10.0)]
        duration: f64,
        #[arg(long, default_value_t = 800)]
        samples: usize,
        /// Data SNR in dB; `none` for noiseless.
        #[arg(long, default_value = "30")]
        snr: String,
        /// Use exact state measurements in the test.
        #[arg(long)]
        clean_test: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum DirectionArg {
    Takeoff,
    Landing,
}

fn parse_snr(text: &str) -> Result<Option<f64>> {
    if text.eq_ignore_ascii_case("none") {
        return Ok(None);
    }
    text.parse().map(Some).map_err(|_| Error::InvalidInput(format!("cannot parse SNR {text:?}")))
}

fn resolve(cmd: Command) -> Result<RunConfig> {
    Ok(match cmd {
        Command::Collect { preset, samples, snr, input_range, experiments, seed, out } => {
            let range = input_range.map(|v| (v[0], v[1]));
            RunConfig::Collect(CollectConfig {
                system: preset.system(),
                excitation: default_excitation(preset, range),
                samples,
                snr_db: snr,
                experiments,
                seed,
                out,
            })
        }
        Command::Synth { data, spec, no_merge, cap, certificate, out } => {
            let (spec, terminal) = spec.resolve()?;
            RunConfig::Synth(SynthConfig { data, spec, terminal, merge: !no_merge, cap, certificate, out })
        }
        Command::Check { law, data, mode, out } => RunConfig::Check(CheckConfig { law, data, mode, out }),
        Command::Eval { law, x } => RunConfig::Eval(EvalConfig { law, x }),
        Command::Simulate { law, x0, steps, data, spec: args, out } => {
            let (spec, terminal) = args.resolve()?;
            RunConfig::Simulate(SimulateConfig { law, system: args.preset.system(), spec, terminal, data, x0, steps, out })
        }
        Command::Sweep { gammas, runs, snr, experiments, samples, x0, steps, no_certify, spec: args, seed, out } => {
            let (spec, terminal) = args.resolve()?;
            let mut sweep = SweepConfig::benchmark(spec, seed);
            sweep.system = args.preset.system();
            sweep.gammas = parse_grid(&gammas)?;
            sweep.runs = runs;
            sweep.snr_db = parse_snr(&snr)?;
            sweep.experiments = experiments;
            sweep.samples = samples;
            sweep.x0 = x0;
            sweep.steps = steps;
            sweep.certify = !no_certify;
            sweep.data_terminal = terminal == Terminal::Data;
            RunConfig::Sweep(SweepRunConfig { sweep, out })
        }
        Command::DemoAltitude { direction, altitude, duration, samples, snr, clean_test, seed, out } => {
            let dir = match direction {
                DirectionArg::Takeoff => Direction::Takeoff,
                DirectionArg::Landing => Direction::Landing,
            };
            let mut demo = AltitudeConfig::new(dir, altitude, seed);
            demo.duration = duration;
            demo.samples = samples;
            demo.snr_db = parse_snr(&snr)?;
            demo.noisy_test = !clean_test;
            RunConfig::DemoAltitude(DemoConfig { demo, out })
        }
    })
}

fn run(cli: Cli) -> Result<String> {
    let cfg = match (cli.config, cli.command) {
        (Some(path), None) => RunConfig::from_json(&std::fs::read_to_string(path)?)?,
        (None, Some(cmd)) => resolve(cmd)?,
        (Some(_), Some(_)) => return Err(Error::InvalidInput("give either --config or a subcommand".into())),
        (None, None) => return Err(Error::InvalidInput("no subcommand given (see --help)".into())),
    };
    let json = cfg.to_json();
    eprintln!("config: {json}");
    if let Some(path) = cli.save_config {
        std::fs::write(path, &json)?;
    }
    commands::execute(&cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error: E_USAGE: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(report) => {
            print!("{report}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {}: {msg}", e.code());
            ExitCode::FAILURE
        }
    }
}
