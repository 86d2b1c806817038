use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use zk_core::functionals::WeightSpec;
use zk_core::modulation::Soliton;
use zk_experiments::error::{io_err, ExperimentError, Result};
use zk_experiments::manifest::{RunManifest, MANIFEST_FILE};
use zk_experiments::recipes::{self, Recipe, RECIPES};
use zk_experiments::spec::{ExperimentSpec, GroundStateConfig};
use zk_experiments::studies::{self, CoercivitySpec, EigenSpec, InteractionSpec};
use zk_experiments::{run_evolution, run_sweep, Lab};

/// Zakharov–Kuznetsov solitary-wave laboratory.
#[derive(Parser)]
#[command(name = "zklab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for the ground state and write its bundle.
    Groundstate {
        #[command(flatten)]
        gs: GsArgs,
        /// Spatial dimension (3 uses the radial solver with n points on [0, l]).
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, default_value = "runs/ground-state")]
        out: PathBuf,
    },
    /// Spectrum of the linearized operator, or two-soliton coercivity sampling.
    Eigen {
        /// TOML config (eigen or coercivity fields); defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Sample the two-soliton form instead of the single-wave operator.
        #[arg(long)]
        two_soliton: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one evolution.
    Evolve {
        #[command(flatten)]
        source: SpecSource,
        /// Output directory (defaults to the spec's `output`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a parameter sweep.
    Sweep {
        #[command(flatten)]
        source: SpecSource,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the worker count.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Fit one or two waves to a stored snapshot; prints JSON.
    Decompose {
        snapshot: PathBuf,
        #[arg(long, default_value_t = 2)]
        waves: usize,
        /// Initial guess `z,omega,c`, once per wave (peaks are used otherwise).
        #[arg(long, value_parser = parse_wave, allow_hyphen_values = true)]
        guess: Vec<Soliton>,
        #[command(flatten)]
        gs: GsArgs,
    },
    /// Weighted functionals of a snapshot, or the interaction-integral study.
    Functionals {
        #[command(subcommand)]
        what: FunctionalsCommand,
    },
    /// Verify run manifests and print their summaries.
    Report {
        /// Output directories (or manifest files).
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
    /// List recipes, or print one as TOML.
    Recipe { name: Option<String> },
}

#[derive(Subcommand)]
enum FunctionalsCommand {
    /// Mass, energy and weighted masses of a snapshot; prints JSON.
    Snapshot {
        snapshot: PathBuf,
        #[arg(long, value_enum, default_value_t = Weight::PsiGamma)]
        weight: Weight,
        /// `γ` for psi-gamma, `c̲` for phi.
        #[arg(long, default_value_t = 1.15)]
        scale: f64,
        /// Weight centers.
        #[arg(long, value_delimiter = ',', default_value = "0", allow_hyphen_values = true)]
        shifts: Vec<f64>,
    },
    /// Overlap integrals of two waves over a range of separations.
    Interactions {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Weight {
    Psi,
    PsiGamma,
    Phi,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct SpecSource {
    /// Experiment spec (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in recipe name.
    #[arg(long)]
    recipe: Option<String>,
}

#[derive(Args)]
struct GsArgs {
    /// Ground-state grid points per side.
    #[arg(long = "gs-n", default_value_t = 512)]
    n: usize,
    /// Ground-state box side.
    #[arg(long = "gs-l", default_value_t = 60.0)]
    l: f64,
    #[arg(long = "gs-tol", default_value_t = 1e-12)]
    tol: f64,
}

impl GsArgs {
    fn config(&self) -> GroundStateConfig {
        GroundStateConfig {
            n: self.n,
            l: self.l,
            tol: self.tol,
            ..GroundStateConfig::default()
        }
    }
}

fn parse_wave(s: &str) -> std::result::Result<Soliton, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match v.as_slice() {
        &[z, omega, c] => Ok(Soliton { z, omega, c }),
        _ => Err(format!("expected z,omega,c, got {s:?}")),
    }
}

fn load_spec(src: &SpecSource) -> Result<ExperimentSpec> {
    match (&src.config, &src.recipe) {
        (Some(path), _) => ExperimentSpec::load(path),
        (None, Some(name)) => {
            recipes::spec(name).ok_or_else(|| ExperimentError::Config(format!("no evolution recipe {name:?}")))
        }
        (None, None) => Err(ExperimentError::Config("need --config or --recipe".into())),
    }
}

fn load_toml<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => Ok(toml::from_str(&std::fs::read_to_string(p).map_err(io_err(p))?)?),
        None => Ok(T::default()),
    }
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn report(runs: &[PathBuf]) -> Result<()> {
    let mut bad = 0;
    for run in runs {
        let (dir, path) = if run.is_dir() {
            (run.clone(), run.join(MANIFEST_FILE))
        } else {
            (run.parent().unwrap_or(Path::new(".")).to_path_buf(), run.clone())
        };
        let m = RunManifest::load(&path)?;
        let check = m.verify(&dir);
        println!(
            "{} [{}] {} files, {:.1} s, manifest {}{}",
            m.name,
            m.kind,
            m.files.len(),
            m.wall_clock_s,
            if check.is_ok() { "ok" } else { "INVALID" },
            m.failure.as_deref().map(|f| format!(", failed: {f}")).unwrap_or_default()
        );
        if let Err(e) = check {
            println!("  {e}");
            bad += 1;
        }
        if let serde_json::Value::Object(map) = &m.summary {
            for (k, v) in map {
                if !v.is_null() && !v.is_array() {
                    println!("  {k}: {v}");
                }
            }
        }
    }
    if bad > 0 {
        return Err(ExperimentError::Config(format!("{bad} manifest(s) failed verification")));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Groundstate { gs, dim, out } => {
            let (s, _) = studies::cmd_groundstate(&gs.config(), dim, &out)?;
            print_json(&s)
        }
        Command::Eigen {
            config,
            two_soliton,
            out,
        } => {
            if two_soliton {
                let spec: CoercivitySpec = load_toml(config.as_deref())?;
                let lab = Lab::new(&spec.ground_state)?;
                let out = out.unwrap_or_else(|| spec.output.clone());
                let (s, _) = studies::cmd_coercivity(&lab, &spec, &out)?;
                println!("floor {:.10} trial min {:.6} over {} trials", s.floor, s.trial_min, s.trials.len());
            } else {
                let spec: EigenSpec = load_toml(config.as_deref())?;
                let lab = Lab::new(&spec.ground_state)?;
                let out = out.unwrap_or_else(|| PathBuf::from("runs/eigen"));
                let (s, _) = studies::cmd_eigen(&lab, &spec, &out)?;
                println!("eigenvalues {:?}", s.eigenvalues);
                println!("floor {:.10} trial min {:.6}", s.constrained_floor, s.trial_min);
            }
            Ok(())
        }
        Command::Evolve { source, out } => {
            let spec = load_spec(&source)?;
            if spec.sweep.is_some() {
                return Err(ExperimentError::Config("spec has sweep axes; use `zklab sweep`".into()));
            }
            let lab = Lab::new(&spec.ground_state)?;
            let out = out.unwrap_or_else(|| spec.output.clone());
            let r = run_evolution(&lab, &spec, &out)?;
            print_json(&r.summary)?;
            r.into_result().map(|_| ())
        }
        Command::Sweep { source, out, workers } => {
            let mut spec = load_spec(&source)?;
            if let (Some(w), Some(axes)) = (workers, spec.sweep.as_mut()) {
                axes.workers = w;
            }
            let lab = Lab::new(&spec.ground_state)?;
            let out = out.unwrap_or_else(|| spec.output.clone());
            let (rep, m) = run_sweep(&lab, &spec, &out)?;
            print!("{}", rep.to_csv());
            match m.failure {
                Some(f) => Err(ExperimentError::numerical(f)),
                None => Ok(()),
            }
        }
        Command::Decompose {
            snapshot,
            waves,
            guess,
            gs,
        } => {
            let lab = Lab::new(&gs.config())?;
            let g = (!guess.is_empty()).then_some(guess.as_slice());
            print_json(&studies::decompose_snapshot(&lab, &snapshot, waves, g)?)
        }
        Command::Functionals { what } => match what {
            FunctionalsCommand::Snapshot {
                snapshot,
                weight,
                scale,
                shifts,
            } => {
                let w = match weight {
                    Weight::Psi => WeightSpec::Psi,
                    Weight::PsiGamma => WeightSpec::PsiGamma { gamma: scale },
                    Weight::Phi => WeightSpec::Phi { c_lower: scale },
                };
                print_json(&studies::snapshot_functionals(&snapshot, w, &shifts)?)
            }
            FunctionalsCommand::Interactions { config, out } => {
                let spec: InteractionSpec = load_toml(config.as_deref())?;
                let lab = Lab::new(&spec.ground_state)?;
                let out = out.unwrap_or_else(|| spec.output.clone());
                let (s, _) = studies::cmd_interactions(&lab, &spec, &out)?;
                print_json(&s.fits)
            }
        },
        Command::Report { runs } => report(&runs),
        Command::Recipe { name: None } => {
            for n in RECIPES {
                println!("{n}");
            }
            Ok(())
        }
        Command::Recipe { name: Some(name) } => {
            match recipes::recipe(&name).ok_or_else(|| ExperimentError::Config(format!("no recipe {name:?}")))? {
                Recipe::Evolve(s) | Recipe::Sweep(s) => print!("{}", s.to_toml()),
                Recipe::GroundState(c) => print!("{}", toml::to_string_pretty(&c).expect("toml")),
                Recipe::Coercivity(c) => print!("{}", toml::to_string_pretty(&c).expect("toml")),
                Recipe::Interactions(c) => print!("{}", toml::to_string_pretty(&c).expect("toml")),
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("zklab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
