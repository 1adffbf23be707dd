use clap::{Parser, Subcommand, ValueEnum};
use rbflow::config::PipelineConfig;
use rbflow::online::{solve, OnlineOptions, SolverKind};
use rbflow::pipeline::{self, StageStatus};
use rbflow::reduction::ReducedModel;
use rbflow::{store, ParameterPoint};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

mod report;
mod verify;

#[derive(Parser)]
#[command(name = "rbflow", version, about = "Reduced-basis flow around a parametrized airfoil")]
struct Cli {
    /// pipeline configuration (TOML); desk defaults when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// more logging (-v info, -vv debug)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Solver {
    Coupled,
    CoupledUnstab,
    Block,
    Combined,
}

impl From<Solver> for SolverKind {
    fn from(s: Solver) -> Self {
        match s {
            Solver::Coupled => SolverKind::Coupled,
            Solver::CoupledUnstab => SolverKind::CoupledUnstab,
            Solver::Block => SolverKind::Block,
            Solver::Combined => SolverKind::Combined,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Study {
    Spectra,
    Divs,
    Lbb,
    Angles,
    Perf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build the O-mesh and write it in text form
    Mesh {
        #[arg(long, default_value = "mesh.txt")]
        out: PathBuf,
    },
    /// Run (or resume) the offline stage into a store directory
    Offline {
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve one parameter point with a reduced model; prints a CSV row
    Solve {
        model: PathBuf,
        /// angle of attack in degrees
        #[arg(long, allow_hyphen_values = true)]
        phi: f64,
        #[arg(long)]
        uinf: f64,
        #[arg(long, value_enum, default_value = "coupled")]
        solver: Solver,
        /// also solve the high-fidelity problem and report errors
        #[arg(long)]
        reference: bool,
        /// write the lifted fields to this archive
        #[arg(long)]
        export: Option<PathBuf>,
    },
    /// Solve a uniform parameter grid with several solvers; CSV to stdout or --out
    Sweep {
        model: PathBuf,
        #[arg(long, default_value_t = 5)]
        grid: usize,
        /// comma-separated solvers; all applicable ones when omitted
        #[arg(long, value_enum, value_delimiter = ',')]
        solvers: Vec<Solver>,
        #[arg(long)]
        reference: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a diagnostics CSV
    Report {
        #[arg(value_enum)]
        study: Study,
        /// offline directory (spectra) or model files
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "reports")]
        out: PathBuf,
        /// parameter sample size per direction (lbb, perf)
        #[arg(long, default_value_t = 5)]
        grid: usize,
    },
    /// Check the affine decomposition and geometric invariants
    Verify,
}

pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<rbflow::Error> for CliError {
    fn from(e: rbflow::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn load_config(path: &Option<PathBuf>) -> CliResult<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p).map_err(|e| match e {
            rbflow::Error::InvalidInput(m) => CliError::Usage(m),
            other => CliError::Runtime(other.to_string()),
        }),
        None => Ok(PipelineConfig::default()),
    }
}

pub fn load_model(path: &Path) -> CliResult<ReducedModel> {
    store::load_model(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.cmd {
        Cmd::Mesh { out } => {
            let cfg = load_config(&cli.config)?;
            let mesh = pipeline::build_mesh(&cfg)?;
            std::fs::write(&out, mesh.to_text())?;
            println!("n_circ,n_rad,nodes,elements,file");
            println!("{},{},{},{},{}", mesh.n_circ(), mesh.n_rad(), mesh.nodes.len(), mesh.n_elements(), out.display());
            Ok(())
        }
        Cmd::Offline { out } => {
            let cfg = load_config(&cli.config)?;
            let summary = pipeline::run_offline(&cfg, &out)?;
            for w in &summary.warnings {
                eprintln!("warning: {w}");
            }
            println!("stage,status");
            for (stage, st) in &summary.stages {
                println!("{stage},{}", if *st == StageStatus::Ran { "ran" } else { "skipped" });
            }
            for f in &summary.model_files {
                eprintln!("model {}", f.display());
            }
            Ok(())
        }
        Cmd::Solve { model, phi, uinf, solver, reference, export } => {
            let rm = load_model(&model)?;
            let kind: SolverKind = solver.into();
            kind.supports(&rm).map_err(CliError::Usage)?;
            let mu = ParameterPoint::from_degrees(phi, uinf);
            if !rm.param_box.contains(mu) {
                eprintln!("warning: phi = {phi}, uinf = {uinf} lies outside the trained parameter box");
            }
            let sol = solve(&rm, mu, kind, &OnlineOptions::default())?;
            let mut header = vec!["phi", "uinf", "solver", "M", "iters", "converged", "t_assembly_s", "t_solve_s", "t_recovery_s"];
            let mut row = vec![
                phi.to_string(),
                uinf.to_string(),
                kind.name().to_string(),
                rm.mv.to_string(),
                sol.newton_iters.to_string(),
                sol.converged.to_string(),
                format!("{:e}", sol.times.assembly),
                format!("{:e}", sol.times.solve),
                format!("{:e}", sol.times.recovery),
            ];
            if reference {
                let hp = match &cli.config {
                    Some(_) => {
                        let cfg = load_config(&cli.config)?;
                        pipeline::problem_on_mesh(&rm, &pipeline::build_mesh(&cfg)?)?
                    }
                    None => pipeline::problem_for_model(&rm)?,
                };
                let r = hp.solve(mu)?;
                if !r.converged {
                    return Err(CliError::Runtime("high-fidelity reference did not converge".into()));
                }
                let (eu, ep) = rbflow::diagnostics::relative_errors(&hp, &rm, &sol, &r);
                header.extend(["vel_err", "p_err"]);
                row.extend([format!("{eu:e}"), format!("{ep:e}")]);
            }
            println!("{}", header.join(","));
            println!("{}", row.join(","));
            if let Some(path) = export {
                let (u, p) = rbflow::online::lift_solution(&rm, &sol);
                let mut ar = store::Archive::new(serde_json::json!({
                    "type": "solution",
                    "mu": mu,
                    "solver": kind.name(),
                    "kind": rm.kind,
                    "mode": rm.mode,
                    "provenance": rm.provenance,
                }));
                ar.put_vec("u", &u);
                ar.put_vec("p", &p);
                ar.write(&path)?;
            }
            if !sol.converged {
                return Err(CliError::Runtime(format!("reduced Newton did not converge in {} iterations", sol.newton_iters)));
            }
            Ok(())
        }
        Cmd::Sweep { model, grid, solvers, reference, out } => report::sweep(&cli.config, &model, grid, solvers.into_iter().map(Into::into).collect(), reference, out),
        Cmd::Report { study, inputs, out, grid } => report::report(study, &inputs, &out, grid),
        Cmd::Verify => {
            let cfg = load_config(&cli.config)?;
            verify::verify(&cfg)
        }
    }
}
