use std::fmt::Write as _;
use std::path::Path;

use eddpc::data::{average_datasets, build_predictor_data, Dataset};
use eddpc::explicit::{build_explicit_law, read_law, write_law, BuildOptions, ExplicitLaw, Provenance};
use eddpc::mpqp::{assemble, MpQp, MpcSpec};
use eddpc::numkit::Vector;
use eddpc::optkit::{CertificateKind, LmiMode, LmiOptions, StabilityCertificate};
use eddpc::sim::{
    altitude_demo, collect_closed_loop, collect_repeated, derive_seed, gamma_sweep, performance_index,
    simulate_closed_loop, Fallback, NoiseConfig, StepFlag,
};
use eddpc::stability::{certify, terminal_weight, ClosedLoopModel};
use eddpc::{Error, Result};

use crate::config::*;

/// Executes a resolved configuration and returns the stdout report.
pub fn execute(cfg: &RunConfig) -> Result<String> {
    match cfg {
        RunConfig::Collect(c) => collect(c),
        RunConfig::Synth(c) => synth(c),
        RunConfig::Check(c) => check(c),
        RunConfig::Eval(c) => eval(c),
        RunConfig::Simulate(c) => simulate(c),
        RunConfig::Sweep(c) => sweep(c),
        RunConfig::DemoAltitude(c) => demo(c),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

fn collect(c: &CollectConfig) -> Result<String> {
    if c.experiments == 0 {
        return Err(Error::InvalidInput("experiments must be at least 1".into()));
    }
    let noise = NoiseConfig { target_snr_db: c.snr_db, seed: c.seed };
    let sets = match &c.excitation {
        Excitation::OpenLoop { lo, hi } => collect_repeated(&c.system, c.samples, (*lo, *hi), &noise, c.experiments)?,
        Excitation::ClosedLoop { stabilizer } => (0..c.experiments)
            .map(|k| {
                let noise = NoiseConfig { seed: derive_seed(c.seed, k as u64), ..noise.clone() };
                collect_closed_loop(&c.system, stabilizer, c.samples, &noise)
            })
            .collect::<Result<_>>()?,
    };
    let data = average_datasets(&sets)?;
    data.write(&c.out)?;
    Ok(format!("samples: {}\ndigest: {}\n", data.len(), data.digest()))
}

/// Dataset, mp-QP and the spec actually used (terminal weight resolved).
fn problem(data: &Dataset, spec: &MpcSpec, terminal: Terminal) -> Result<(MpQp, MpcSpec)> {
    let spec = match terminal {
        Terminal::Spec => spec.clone(),
        Terminal::Data => spec.with_terminal(terminal_weight(&build_predictor_data(data, 1)?, &spec.q)?),
    };
    spec.validate(data.n(), data.m())?;
    let pd = build_predictor_data(data, spec.horizon)?;
    Ok((assemble(&pd, &spec)?, spec))
}

fn closed_loop_model(law: &ExplicitLaw) -> ClosedLoopModel {
    ClosedLoopModel {
        a_cl: law.regions.iter().map(|r| r.cl_gain.clone()).collect(),
        f_cl: law.regions.iter().map(|r| r.cl_offset.clone()).collect(),
    }
}

fn certificate(law: &ExplicitLaw, mode: CertMode) -> Result<StabilityCertificate> {
    let clm = closed_loop_model(law);
    let opts = LmiOptions::default();
    match mode {
        CertMode::Common => certify(&clm, LmiMode::Common, &opts),
        CertMode::Piecewise => certify(&clm, LmiMode::Piecewise, &opts),
        CertMode::Auto => {
            let c = certify(&clm, LmiMode::Common, &opts)?;
            if c.kind == CertificateKind::NotFound {
                certify(&clm, LmiMode::Piecewise, &opts)
            } else {
                Ok(c)
            }
        }
    }
}

fn certificate_lines(cert: &StabilityCertificate) -> String {
    let mut out = format!("certificate: {}\n", cert.kind);
    if cert.kind == CertificateKind::NotFound {
        out.push_str("warning: no Lyapunov certificate found; closed-loop stability is not guaranteed\n");
    }
    out
}

fn synth(c: &SynthConfig) -> Result<String> {
    let data = Dataset::read(&c.data)?;
    let (q, spec) = problem(&data, &c.spec, c.terminal)?;
    let opts = BuildOptions { cap: c.cap, merge: c.merge, ..BuildOptions::default() };
    let law = build_explicit_law(&q, &opts)?.with_provenance(Provenance { dataset: data.digest(), spec: spec.digest() });
    write_law(&law, &c.out)?;
    let cert = certificate(&law, c.certificate)?;
    let mut out = format!("regions: {}\nskipped degenerate: {}\n", law.n_regions(), law.skipped_degenerate);
    out.push_str(&certificate_lines(&cert));
    Ok(out)
}

fn check(c: &CheckConfig) -> Result<String> {
    let law = read_law(&c.law)?;
    let data = Dataset::read(&c.data)?;
    if (data.n(), data.m()) != (law.dims.n, law.dims.m) {
        return Err(Error::InvalidLaw("law and dataset dimensions differ".into()));
    }
    let cert = certificate(&law, c.mode)?;
    if let Some(path) = &c.out {
        let json = serde_json::to_string_pretty(&cert).expect("certificate serializes");
        write_text(path, &json)?;
    }
    let mut out = String::new();
    if law.provenance.dataset != data.digest() {
        out.push_str("warning: dataset differs from the one the law was built from\n");
    }
    out.push_str(&certificate_lines(&cert));
    let _ = writeln!(out, "delta: {:e}\neps: {:e}", cert.delta_achieved, cert.eps_achieved);
    Ok(out)
}

fn join(v: &Vector) -> String {
    v.iter().map(|x| format!("{}", x + 0.0)).collect::<Vec<_>>().join(",")
}

fn eval(c: &EvalConfig) -> Result<String> {
    let law = read_law(&c.law)?;
    if c.x.len() != law.dims.n {
        return Err(Error::InvalidInput(format!("state must have {} entries", law.dims.n)));
    }
    match law.evaluate(&Vector::from_row_slice(&c.x)) {
        Some(e) => Ok(format!("u: {}\nsequence: {}\nregion: {}\n", join(&e.u0), join(&e.u_seq), e.region)),
        None => Err(Error::InfeasibleState),
    }
}

fn simulate(c: &SimulateConfig) -> Result<String> {
    let law = read_law(&c.law)?;
    let (q, fallback) = match &c.data {
        Some(path) => {
            let (q, _) = problem(&Dataset::read(path)?, &c.spec, c.terminal)?;
            (Some(q), Fallback::Implicit)
        }
        None => (None, Fallback::Zero),
    };
    let x0 = Vector::from_row_slice(&c.x0);
    let traj = simulate_closed_loop(&c.system, &law, q.as_ref(), &x0, c.steps, None, fallback)?;
    write_text(&c.out, &traj.to_csv())?;
    let mut out = format!("steps: {}\n", c.steps);
    let _ = writeln!(out, "final state: {}", join(&traj.states.column(traj.len() - 1).into_owned()));
    let _ = writeln!(out, "J: {}", performance_index(&traj, &c.spec.q, &c.spec.r));
    for f in [StepFlag::FallbackImplicit, StepFlag::FallbackZero] {
        let k = traj.count(f);
        if k > 0 {
            let _ = writeln!(out, "fallback {f}: {k} steps");
        }
    }
    Ok(out)
}

fn sweep(c: &SweepRunConfig) -> Result<String> {
    let table = gamma_sweep(&c.sweep)?;
    write_text(&c.out, &table.to_csv())?;
    let mut out = format!("rows: {}\n", table.rows.len());
    if let Some((g, j)) = table.best_gamma() {
        let _ = writeln!(out, "best gamma: {g:e} (median J {j:.4})");
    }
    Ok(out)
}

fn demo(c: &DemoConfig) -> Result<String> {
    let run = altitude_demo(&c.demo)?;
    write_text(&c.out, &run.trajectory.to_csv())?;
    let z = run.altitude();
    let zmin = z.iter().copied().fold(f64::INFINITY, f64::min);
    let mut out = format!("regions: {}\nskipped degenerate: {}\n", run.regions, run.skipped_degenerate);
    let _ = writeln!(out, "set point: {} m", run.z_bar);
    let _ = writeln!(out, "final altitude: {:.4} m", z[z.len() - 1]);
    let _ = writeln!(out, "min altitude: {zmin:.4} m");
    for f in [StepFlag::FallbackImplicit, StepFlag::FallbackZero] {
        let k = run.trajectory.count(f);
        if k > 0 {
            let _ = writeln!(out, "fallback {f}: {k} steps");
        }
    }
    Ok(out)
}
