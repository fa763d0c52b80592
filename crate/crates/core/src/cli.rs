//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 on run-time errors, 2 on usage errors.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::battery::{OcpTable, Scenario};
use crate::certify::{certify_necessary_optimality, Certificate};
use crate::error::{Error, Result};
use crate::hybridsim::hybrid_simulate;
use crate::integrate::{simulate, ConstantPolicy, SampledPolicy, SimOptions};
use crate::oracle::{self, Arc, PiecewiseControl, SearchOptions};
use crate::problems::{self, Loaded};
use crate::trajectory::{write_atomic, Trajectory};

#[derive(Debug, Parser)]
#[command(name = "bangride", version, about = "Bang-ride hybrid simulation and optimality certification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PolicyArg {
    Hybrid,
    Max,
    Min,
    File,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Case {
    Example1a,
    Example1b,
    Spm,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a problem under a policy and write the trajectory CSV.
    Simulate {
        #[arg(long)]
        problem: String,
        #[arg(long, value_enum, default_value = "hybrid")]
        policy: PolicyArg,
        /// Trajectory CSV replayed by `--policy file`.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Certify a stored trajectory and write the certificate JSON.
    Certify {
        #[arg(long)]
        problem: String,
        #[arg(long)]
        traj: PathBuf,
        /// Terminal-constraint multipliers, comma separated.
        #[arg(long, value_delimiter = ',')]
        alpha: Option<Vec<f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Direct search over piecewise-constant inputs.
    Oracle {
        #[arg(long)]
        problem: String,
        #[arg(long, default_value_t = 40)]
        segments: usize,
        #[arg(long, default_value_t = 100_000)]
        budget: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Hybrid simulation of a battery charging scenario.
    Battery {
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Open-circuit potential table.
        #[arg(long)]
        ocp: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Hybrid simulation, certificate and oracle for one case, as a table.
    Repro {
        #[arg(long = "case", value_enum)]
        case: Case,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 40)]
        segments: usize,
        #[arg(long, default_value_t = 100_000)]
        budget: usize,
    },
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("BANGRIDE_LOG", "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let mut stdout = std::io::stdout().lock();
    match dispatch(cli.command, &mut stdout) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("usage: bangride <simulate|certify|oracle|battery|repro> [options]; see --help");
            2
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn load(problem: &str) -> std::result::Result<Loaded, Failure> {
    if problems::builtin(problem).is_none() && !Path::new(problem).is_file() {
        return Err(Failure::Usage(format!(
            "unknown problem `{problem}` (expected one of {} or a problem file)",
            problems::BUILTIN.join(", ")
        )));
    }
    Ok(problems::resolve(problem)?)
}

fn emit(out: &Option<PathBuf>, text: &str, stdout: &mut dyn Write) -> Result<()> {
    match out {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => Ok(stdout.write_all(text.as_bytes())?),
    }
}

fn dispatch(cmd: Command, stdout: &mut dyn Write) -> std::result::Result<(), Failure> {
    match cmd {
        Command::Simulate {
            problem,
            policy,
            input,
            dt,
            out,
        } => {
            let l = load(&problem)?;
            let p = &l.problem;
            let opts = SimOptions::with_dt(dt.unwrap_or(l.dt), p.t_f);
            let traj = match policy {
                PolicyArg::Hybrid => hybrid_simulate(p, &opts)?,
                PolicyArg::Max => simulate(p, &ConstantPolicy(p.u_max), &opts)?,
                PolicyArg::Min => simulate(p, &ConstantPolicy(p.u_min), &opts)?,
                PolicyArg::File => {
                    let path = input.ok_or_else(|| Failure::Usage("--policy file requires --input".into()))?;
                    let stored = Trajectory::read_csv(path)?;
                    simulate(p, &SampledPolicy::from_trajectory(&stored), &opts)?
                }
            };
            emit(&out, &traj.to_csv(p), stdout)?;
            log::info!("objective {}", traj.objective(p));
        }
        Command::Certify {
            problem,
            traj,
            alpha,
            out,
        } => {
            let l = load(&problem)?;
            let t = Trajectory::read_csv(traj)?;
            let cert = certify_necessary_optimality(&l.problem, &t, alpha.as_deref())?;
            emit(&out, &(cert.to_json() + "\n"), stdout)?;
            if out.is_some() {
                writeln!(stdout, "{}", verdict_name(&cert)).map_err(Error::from)?;
            }
        }
        Command::Oracle {
            problem,
            segments,
            budget,
            seed,
            dt,
            out,
        } => {
            if segments == 0 || budget == 0 {
                return Err(Failure::Usage("--segments and --budget must be at least 1".into()));
            }
            let l = load(&problem)?;
            let p = &l.problem;
            let sim = SimOptions::with_dt(dt.unwrap_or(l.oracle_dt), p.t_f);
            let r = oracle::direct_search(p, segments, budget, seed, &SearchOptions::new(sim))?;
            let traj = oracle::candidate_trajectory(p, &r.best, &sim)?;
            if let Some(path) = &out {
                write_atomic(path, traj.to_csv(p).as_bytes())?;
            }
            let summary = serde_json::json!({
                "objective": r.objective,
                "evaluations": r.evaluations,
                "seed": seed,
            });
            writeln!(stdout, "{summary}").map_err(Error::from)?;
        }
        Command::Battery { scenario, ocp, out } => {
            let s = match scenario {
                Some(path) => Scenario::load(path)?,
                None => Scenario::default_charging(),
            };
            let table = match ocp {
                Some(path) => OcpTable::load(path)?,
                None => OcpTable::lionsimba(),
            };
            let p = s.problem(&table)?;
            let opts = SimOptions::with_dt(s.dt.unwrap_or(1e-3 * s.t_f), p.t_f);
            let traj = hybrid_simulate(&p, &opts)?;
            emit(&out, &traj.to_csv(&p), stdout)?;
            if out.is_some() {
                writeln!(stdout, "final SOC {:.6}", -traj.objective(&p)).map_err(Error::from)?;
            }
        }
        Command::Repro {
            case,
            seed,
            segments,
            budget,
        } => {
            if segments == 0 || budget == 0 {
                return Err(Failure::Usage("--segments and --budget must be at least 1".into()));
            }
            let name = match case {
                Case::Example1a => "example1a",
                Case::Example1b => "example1b",
                Case::Spm => "spm",
            };
            let table = repro(name, seed, segments, budget)?;
            stdout.write_all(table.as_bytes()).map_err(Error::from)?;
        }
    }
    Ok(())
}

fn verdict_name(cert: &Certificate) -> String {
    serde_json::to_value(cert.verdict)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn route_name(cert: &Certificate) -> String {
    serde_json::to_value(cert.route)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

/// Runs the pipeline for a built-in problem and formats the comparison table.
pub fn repro(name: &str, seed: u64, segments: usize, budget: usize) -> Result<String> {
    let l = problems::resolve(name)?;
    let p = &l.problem;
    let traj = hybrid_simulate(p, &SimOptions::with_dt(l.dt, p.t_f))?;
    let hybrid = traj.objective(p);
    let cert = certify_necessary_optimality(p, &traj, None)?;
    let sim = SimOptions::with_dt(l.oracle_dt, p.t_f);
    let reference = oracle::evaluate_candidate(p, &PiecewiseControl::constant(1, p.u_max), &sim)?.objective;
    let search = oracle::direct_search(p, segments, budget, seed, &SearchOptions::new(sim))?;

    let mut rows: Vec<(String, String)> = vec![
        ("case".into(), name.into()),
        ("hybrid objective".into(), format!("{hybrid:.6}")),
        ("hybrid objective (oracle grid)".into(), format!("{reference:.6}")),
        ("oracle objective".into(), format!("{:.6}", search.objective)),
        ("oracle improvement".into(), format!("{:.3e}", reference - search.objective)),
        ("oracle evaluations".into(), search.evaluations.to_string()),
        ("verdict".into(), verdict_name(&cert)),
        ("route".into(), route_name(&cert)),
        ("min sigma".into(), format!("{:.6e}", cert.min_sigma)),
        ("bang-ride coverage".into(), format!("{:.4}", cert.coverage)),
    ];
    if name == "example1b" {
        let st = oracle::switch_time_search(p, &[Arc::Min, Arc::Max], (0.0, p.t_f), &sim)?;
        rows.push(("switch time [min, selector]".into(), format!("{:.4}", st.switch_times[0])));
        rows.push(("switch-time objective".into(), format!("{:.6}", st.objective)));
    }
    let failed: Vec<&str> = cert
        .checks
        .iter()
        .filter(|c| !c.holds())
        .map(|c| c.name.as_str())
        .collect();
    if !failed.is_empty() {
        rows.push(("failed checks".into(), failed.join(", ")));
    }
    let width = rows.iter().map(|(k, _)| k.chars().count()).max().unwrap_or(0);
    let mut s = String::new();
    for (k, v) in rows {
        s.push_str(&format!("{k:<width$}  {v}\n"));
    }
    Ok(s)
}
