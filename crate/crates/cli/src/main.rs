//! `kramers`: simulations and probes driven by a run configuration file.
//!
//! Exit codes: 0 pass, 1 tolerance or validation failure, 2 usage or parse
//! error, 3 blow-up.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde_json::json;

use kramers::config::RunConfig;
use kramers::dynamics::{
    simulate, simulate_convolution, simulate_langevin, simulate_shifted, PhaseState, Trajectory, TrajectoryRow,
};
use kramers::functionals::FunctionalContext;
use kramers::noise::NoiseStream;
use kramers::probes::{self, gaussian_state, EnsembleConfig, ProbeReport};
use kramers::Error;

const PROBES: [&str; 12] = [
    "moments",
    "contraction",
    "irreducibility",
    "small-ball",
    "asf",
    "mass-gap",
    "invariant-gap",
    "observable-gap",
    "invariant-sample",
    "tangent-check",
    "generator-check",
    "linear-check",
];

#[derive(Parser)]
#[command(name = "kramers", version, about = "Stochastic damped wave equation: simulation and small-mass diagnostics")]
struct Cli {
    /// Run configuration (alternative to the positional file).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding `out` in [sim].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Only machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every validator and print a JSON report.
    ValidateConfig { file: Option<PathBuf> },
    /// Full nonlinear system.
    Simulate { file: Option<PathBuf> },
    /// Linear stochastic convolution (reaction dropped).
    Convolution { file: Option<PathBuf> },
    /// Langevin velocity process.
    Langevin { file: Option<PathBuf> },
    /// Shifted system with its driving convolution.
    Shifted { file: Option<PathBuf> },
    /// Monte Carlo probe; writes a JSON report and plot CSVs.
    Probe { name: String, file: Option<PathBuf> },
    /// Merge probe reports of one configuration; mismatched hashes are refused.
    Report { files: Vec<PathBuf> },
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::BlowUp { .. } => 3,
            Error::Parse { .. } | Error::UnknownProbe(_) | Error::InvalidArgument(_) | Error::Io(_) => 2,
            _ => 1,
        };
        let message = match &e {
            Error::BlowUp { step, time, .. } => format!("blow-up: last step index {step} (t = {time})"),
            _ => e.to_string(),
        };
        Failure { code, message }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure { code: 1, message: e.to_string() }
    }
}

type Outcome = Result<bool, Failure>;

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: 2, message: message.into() }
}

struct Ctx {
    json: bool,
}

impl Ctx {
    fn say(&self, s: impl AsRef<str>) {
        if !self.json {
            eprintln!("{}", s.as_ref());
        }
    }
}

fn load(cli: &Cli, file: &Option<PathBuf>) -> Result<RunConfig, Failure> {
    let path = file
        .as_ref()
        .or(cli.config.as_ref())
        .ok_or_else(|| usage("no configuration file given (positional or --config)"))?;
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg = RunConfig::parse(&text)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    Ok(cfg)
}

fn validate(cfg: &RunConfig, ctx: &Ctx) -> Outcome {
    let report = cfg.validate();
    println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
    for f in report.failures() {
        ctx.say(format!("validation failed: {}: {}", f.name, f.detail));
    }
    Ok(report.passed)
}

fn write_trajectory(path: &Path, hash: &str, tr: &Trajectory, fc: &FunctionalContext) -> std::io::Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    writeln!(f, "# config_hash={hash}")?;
    tr.write_csv(fc, &mut f)?;
    f.flush()
}

fn run_sim(kind: &str, cfg: &RunConfig, ctx: &Ctx) -> Outcome {
    let (sim, _) = cfg.build()?;
    let start = Instant::now();
    let trs = match kind {
        "simulate" => vec![(kind.to_string(), simulate(&sim)?)],
        "convolution" => vec![(kind.to_string(), simulate_convolution(&sim)?)],
        "langevin" => vec![(kind.to_string(), simulate_langevin(&sim)?)],
        _ => {
            let (shifted, gamma) = simulate_shifted(&sim, None)?;
            vec![("shifted".to_string(), shifted), ("shifted_gamma".to_string(), gamma)]
        }
    };
    let wall = start.elapsed().as_secs_f64();
    let hash = cfg.hash();
    std::fs::create_dir_all(&cfg.out)?;
    let fc = FunctionalContext::new(&sim.basis, sim.mass, &sim.phi)?;
    let mut files = Vec::new();
    let mut finals = serde_json::Map::new();
    for (name, tr) in &trs {
        let p = cfg.out.join(format!("{name}.csv"));
        write_trajectory(&p, &hash, tr, &fc)?;
        let row = TrajectoryRow::new(*tr.times.last().expect("initial row"), tr.final_state(), &fc);
        finals.insert(name.clone(), serde_json::to_value(row).expect("serializable"));
        files.push(p.display().to_string());
    }
    let summary = json!({
        "config_hash": hash,
        "steps": sim.steps()?,
        "recorded": trs[0].1.times.len(),
        "final": finals,
        "wall_time_s": wall,
        "files": files,
    });
    println!("{}", serde_json::to_string_pretty(&summary).expect("serializable"));
    ctx.say(format!("wrote {}", files.join(", ")));
    Ok(true)
}

fn fit_window(cfg: &RunConfig) -> (f64, f64) {
    (cfg.probe.fit_start, cfg.probe.fit_end.unwrap_or(cfg.horizon))
}

fn unit_mode(ens: &EnsembleConfig, mode: usize, scale: f64) -> Result<PhaseState, Failure> {
    let b = ens.basis();
    if mode == 0 || mode > b.len() {
        return Err(usage(format!("mode {mode} outside 1..={}", b.len())));
    }
    let mut s = PhaseState::zeros(b);
    s.u.coeffs_mut()[mode - 1] = scale;
    Ok(s)
}

fn run_probe(name: &str, cfg: &RunConfig, ctx: &Ctx) -> Outcome {
    if !PROBES.contains(&name) {
        return Err(Error::UnknownProbe(format!("{name} (known: {})", PROBES.join(", "))).into());
    }
    let (_, ens) = cfg.build()?;
    let p = &cfg.probe;
    let masses = ens.masses.clone();
    let gap_t = p.gap_horizon.unwrap_or(cfg.horizon);
    let mut samples = Vec::new();
    let report: ProbeReport = match name {
        "moments" => {
            let mut large = PhaseState::zeros(ens.basis());
            for k in 0..ens.basis().len().min(4) {
                large.u.coeffs_mut()[k] = p.large_scale / (k + 1) as f64;
            }
            probes::moment_bound_report(&ens, p.functional, &large)?
        }
        "contraction" => {
            let modes = ens.basis().len().min(4);
            let pairs: Vec<_> = (0..p.pairs)
                .map(|j| {
                    let mut rng = NoiseStream::lane(cfg.seed, j as u64, 31);
                    let a = gaussian_state(ens.basis(), modes, p.pair_scale, &mut rng);
                    let b = gaussian_state(ens.basis(), modes, p.pair_scale, &mut rng);
                    (a, b)
                })
                .collect();
            probes::contraction_estimate(&ens, &pairs, fit_window(cfg))?
        }
        "irreducibility" => probes::irreducibility_probe(&ens, p.big_r, p.small_r, p.hit_time)?,
        "small-ball" => probes::small_ball_probe(&ens, &p.radii, &p.windows)?,
        "asf" => {
            let xi = unit_mode(&ens, p.xi_mode, p.xi_scale)?;
            probes::asf_decay(&ens, &xi, fit_window(cfg))?
        }
        "mass-gap" => probes::small_mass_gap(&ens, &masses, gap_t)?,
        "invariant-gap" => probes::invariant_gap(&ens, &masses, p.samples)?,
        "observable-gap" => probes::observable_gap(&ens, &masses, gap_t)?,
        "invariant-sample" => {
            let (rep, s) = probes::invariant_sample_report(&ens, p.samples)?;
            samples = s;
            rep
        }
        "tangent-check" => probes::tangent_check(&ens, p.directions, p.epsilon)?,
        "generator-check" => probes::generator_check(&ens, p.states, p.paths, p.generator_step)?,
        _ => probes::langevin_check(&ens, p.t_over_m)?,
    };
    let mut files = report.write(&cfg.out)?;
    for s in &samples {
        let path = cfg.out.join(format!("invariant_sample_m{}.csv", s.mass));
        let mut f = BufWriter::new(File::create(&path)?);
        s.measure.write_csv(&mut f)?;
        writeln!(f, "# config_hash={}", report.config_hash)?;
        f.flush()?;
        files.push(path);
    }
    let mut shown = report.clone();
    shown.series.clear();
    println!("{}", serde_json::to_string_pretty(&shown).expect("serializable"));
    for c in &report.checks {
        ctx.say(format!("{} {}: {}", if c.passed { "pass" } else { "FAIL" }, c.name, c.detail));
    }
    ctx.say(format!(
        "wrote {}",
        files.iter().map(|f| f.display().to_string()).collect::<Vec<_>>().join(", ")
    ));
    Ok(report.passed())
}

fn merge(files: &[PathBuf], ctx: &Ctx) -> Outcome {
    if files.is_empty() {
        return Err(usage("report needs at least one JSON file"));
    }
    let reports = files
        .iter()
        .map(|f| {
            let text = std::fs::read_to_string(f).map_err(|e| usage(format!("cannot read {}: {e}", f.display())))?;
            serde_json::from_str::<ProbeReport>(&text).map_err(|e| usage(format!("{}: {e}", f.display())))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let merged = ProbeReport::merge(&reports)?;
    println!("{}", serde_json::to_string_pretty(&merged).expect("serializable"));
    for c in merged.failures() {
        ctx.say(format!("FAIL {}: {}", c.name, c.detail));
    }
    Ok(merged.passed())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let ctx = Ctx { json: cli.json };
    let result = match &cli.command {
        Command::ValidateConfig { file } => load(&cli, file).and_then(|c| validate(&c, &ctx)),
        Command::Simulate { file } => load(&cli, file).and_then(|c| run_sim("simulate", &c, &ctx)),
        Command::Convolution { file } => load(&cli, file).and_then(|c| run_sim("convolution", &c, &ctx)),
        Command::Langevin { file } => load(&cli, file).and_then(|c| run_sim("langevin", &c, &ctx)),
        Command::Shifted { file } => load(&cli, file).and_then(|c| run_sim("shifted", &c, &ctx)),
        Command::Probe { name, file } => {
            if PROBES.contains(&name.as_str()) {
                load(&cli, file).and_then(|c| run_probe(name, &c, &ctx))
            } else {
                Err(Error::UnknownProbe(name.clone()).into())
            }
        }
        Command::Report { files } => merge(files, &ctx),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
