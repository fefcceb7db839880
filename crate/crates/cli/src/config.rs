//! Resolved run configurations. Every subcommand turns its flags into one of
//! these before doing any work; the JSON form re-runs to identical outputs.

use std::path::PathBuf;

use eddpc::mpqp::MpcSpec;
use eddpc::numkit::{Matrix, SymMatrix, Vector};
use eddpc::sim::{altitude_spec, altitude_stabilizer, benchmark_spec, AltitudeConfig, LtiSystem, Stabilizer, SweepConfig};
use eddpc::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    #[default]
    Benchmark,
    Altitude,
}

impl Preset {
    pub fn system(self) -> LtiSystem {
        match self {
            Preset::Benchmark => LtiSystem::benchmark(),
            Preset::Altitude => LtiSystem::double_integrator(1.0 / eddpc::sim::SAMPLE_RATE_HZ),
        }
    }

    /// Default regulation problem. The altitude preset regulates to 2 m.
    pub fn spec(self) -> MpcSpec {
        match self {
            Preset::Benchmark => benchmark_spec(10.0),
            Preset::Altitude => altitude_spec(2.0),
        }
    }

    pub fn terminal(self) -> Terminal {
        match self {
            Preset::Benchmark => Terminal::Data,
            Preset::Altitude => Terminal::Spec,
        }
    }
}

/// Source of the terminal weight `P`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Terminal {
    /// Use `P` as given.
    Spec,
    /// Lyapunov weight of the one-step data model.
    Data,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum CertMode {
    /// Common quadratic Lyapunov function, then piecewise if none is found.
    Auto,
    Common,
    Piecewise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Excitation {
    /// Inputs i.i.d. uniform on `[lo, hi]`.
    OpenLoop { lo: f64, hi: f64 },
    ClosedLoop { stabilizer: Stabilizer },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectConfig {
    pub system: LtiSystem,
    pub excitation: Excitation,
    pub samples: usize,
    pub snr_db: Option<f64>,
    /// Experiments averaged into the dataset.
    pub experiments: usize,
    pub seed: u64,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub data: PathBuf,
    pub spec: MpcSpec,
    pub terminal: Terminal,
    pub merge: bool,
    pub cap: Option<usize>,
    pub certificate: CertMode,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckConfig {
    pub law: PathBuf,
    pub data: PathBuf,
    pub mode: CertMode,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub law: PathBuf,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateConfig {
    pub law: PathBuf,
    pub system: LtiSystem,
    /// Weights of the reported cost; with `data` also the problem rebuilt
    /// for the implicit fallback.
    pub spec: MpcSpec,
    pub terminal: Terminal,
    /// Dataset the law was synthesized from.
    pub data: Option<PathBuf>,
    pub x0: Vec<f64>,
    pub steps: usize,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRunConfig {
    pub sweep: SweepConfig,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoConfig {
    pub demo: AltitudeConfig,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum RunConfig {
    Collect(CollectConfig),
    Synth(SynthConfig),
    Check(CheckConfig),
    Eval(EvalConfig),
    Simulate(SimulateConfig),
    Sweep(SweepRunConfig),
    DemoAltitude(DemoConfig),
}

impl RunConfig {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse { line: e.line(), msg: e.to_string() })
    }
}

pub fn default_excitation(preset: Preset, range: Option<(f64, f64)>) -> Excitation {
    match (preset, range) {
        (_, Some((lo, hi))) => Excitation::OpenLoop { lo, hi },
        (Preset::Benchmark, None) => Excitation::OpenLoop { lo: -5.0, hi: 5.0 },
        (Preset::Altitude, None) => Excitation::ClosedLoop { stabilizer: altitude_stabilizer() },
    }
}

/// Inline spec overrides; matrices are dense row-major lists.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct SpecArgs {
    /// Built-in plant and specification.
    #[arg(long, value_enum, default_value = "benchmark")]
    pub preset: Preset,
    /// JSON spec file; replaces the preset spec before inline overrides.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub q: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub r: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub p: Option<Vec<f64>>,
    /// State constraint matrix, one row per entry of `--d`.
    #[arg(long = "cx", value_delimiter = ',', allow_hyphen_values = true)]
    pub c_x: Option<Vec<f64>>,
    #[arg(long = "cu", value_delimiter = ',', allow_hyphen_values = true)]
    pub c_u: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub d: Option<Vec<f64>>,
    #[arg(long, allow_hyphen_values = true)]
    pub gamma: Option<f64>,
    /// Terminal weight source (preset default: data for benchmark, spec for altitude).
    #[arg(long, value_enum)]
    pub terminal: Option<Terminal>,
}

fn square(name: &str, v: &[f64]) -> Result<SymMatrix> {
    let n = (v.len() as f64).sqrt().round() as usize;
    if n * n != v.len() || n == 0 {
        return Err(Error::InvalidInput(format!("--{name} needs a square number of entries, got {}", v.len())));
    }
    SymMatrix::new(Matrix::from_row_slice(n, n, v))
}

fn rows_of(name: &str, v: &[f64], rows: usize) -> Result<Matrix> {
    if rows == 0 || !v.len().is_multiple_of(rows) {
        return Err(Error::InvalidInput(format!("--{name} must have a multiple of {rows} entries")));
    }
    Ok(Matrix::from_row_slice(rows, v.len() / rows, v))
}

impl SpecArgs {
    pub fn resolve(&self) -> Result<(MpcSpec, Terminal)> {
        let mut s = match &self.spec {
            Some(path) => {
                let text = std::fs::read_to_string(path)?;
                serde_json::from_str(&text).map_err(|e| Error::Parse { line: e.line(), msg: e.to_string() })?
            }
            None => self.preset.spec(),
        };
        if let Some(h) = self.horizon {
            s.horizon = h;
        }
        if let Some(q) = &self.q {
            s.q = square("q", q)?;
        }
        if let Some(r) = &self.r {
            s.r = square("r", r)?;
        }
        if let Some(p) = &self.p {
            s.p = square("p", p)?;
        }
        if let Some(d) = &self.d {
            s.d = Vector::from_row_slice(d);
            if self.c_x.is_none() {
                s.c_x = Matrix::zeros(d.len(), s.q.dim());
            }
            if self.c_u.is_none() {
                s.c_u = Matrix::zeros(d.len(), s.r.dim());
            }
        }
        if let Some(c) = &self.c_x {
            s.c_x = rows_of("cx", c, s.d.len())?;
        }
        if let Some(c) = &self.c_u {
            s.c_u = rows_of("cu", c, s.d.len())?;
        }
        if let Some(g) = self.gamma {
            s.gamma = g;
        }
        let terminal = self.terminal.unwrap_or(if self.p.is_some() { Terminal::Spec } else { self.preset.terminal() });
        Ok((s, terminal))
    }
}

/// `lo:hi:count` in decades, or a comma-separated list of values.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let bad = || Error::InvalidInput(format!("cannot parse γ grid {text:?}"));
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() == 3 {
        let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
        let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
        let count: usize = parts[2].trim().parse().map_err(|_| bad())?;
        return Ok(eddpc::sim::log_grid(lo, hi, count));
    }
    text.split(',').map(|v| v.trim().parse::<f64>().map_err(|_| bad())).collect()
}
