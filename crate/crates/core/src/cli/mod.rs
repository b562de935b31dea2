//! Command-line harness: load a problem, run the solver, write the report
//! table and the per-iteration trace.

pub mod config;
pub mod plugin;
pub mod report;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Parser;
use nalgebra::DVector;

use crate::diagnostics::diagnose;
use crate::error::{Error, Result};
use crate::model::GnepProblem;
use crate::outer::{self, Status, TerminationReport};
use crate::problems;

pub use config::{RunConfig, X0Spec};
pub use plugin::{load_plugin, load_problem_plugin, parse_plugin, Plugin, Polynomial};

/// Exit status for usage and configuration errors.
pub const EXIT_USAGE: i32 = 1;

/// Tolerance used for constraint-qualification checks in the report.
pub const DIAGNOSTICS_TOL: f64 = 1e-8;

pub fn exit_code(status: Status) -> i32 {
    match status {
        Status::SolvedKKT => 0,
        Status::InfeasibleStationary => 2,
        Status::SubsolverFailure => 3,
        Status::MaxOuterIterations => 4,
    }
}

#[derive(Debug, Parser)]
#[command(name = "gnep", about = "Augmented Lagrangian solver for generalized Nash equilibrium problems")]
pub struct Args {
    /// Config file of `key = value` lines; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Catalog name or problem file.
    #[arg(long)]
    pub problem: Option<String>,
    /// Preset label, scalar fill value, or comma-separated vector.
    #[arg(long, allow_hyphen_values = true)]
    pub x0: Option<String>,
    /// general | variational
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub umax: Option<String>,
    #[arg(long)]
    pub rho0: Option<String>,
    #[arg(long)]
    pub tau: Option<String>,
    #[arg(long)]
    pub gamma: Option<String>,
    #[arg(long)]
    pub eps: Option<String>,
    /// Fixed value or `geometric:start,factor,floor`.
    #[arg(long)]
    pub eps_inner: Option<String>,
    #[arg(long)]
    pub max_outer: Option<String>,
    #[arg(long)]
    pub eps_feas: Option<String>,
    #[arg(long)]
    pub rho_limit: Option<String>,
    #[arg(long)]
    pub stagnation_window: Option<String>,
    #[arg(long)]
    pub stagnation_decrease: Option<String>,
    #[arg(long)]
    pub inner_slack: Option<String>,
    /// Report file; printed to stdout when absent.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// JSON-lines trace file.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Run every `*.cfg` file in this directory concurrently.
    #[arg(long)]
    pub batch: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<String>,
}

impl Args {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let pairs = [
            ("problem", self.problem.clone()),
            ("x0", self.x0.clone()),
            ("mode", self.mode.clone()),
            ("umax", self.umax.clone()),
            ("rho0", self.rho0.clone()),
            ("tau", self.tau.clone()),
            ("gamma", self.gamma.clone()),
            ("eps", self.eps.clone()),
            ("eps-inner", self.eps_inner.clone()),
            ("max-outer", self.max_outer.clone()),
            ("eps-feas", self.eps_feas.clone()),
            ("rho-limit", self.rho_limit.clone()),
            ("stagnation-window", self.stagnation_window.clone()),
            ("stagnation-decrease", self.stagnation_decrease.clone()),
            ("inner-slack", self.inner_slack.clone()),
            ("report", self.report.as_ref().map(|p| p.display().to_string())),
            ("trace", self.trace.as_ref().map(|p| p.display().to_string())),
            ("seed", self.seed.clone()),
        ];
        pairs
            .into_iter()
            .filter_map(|(k, v)| v.map(|v| (k, v)))
            .collect()
    }

    /// Builds the config of a single run: file first, then flags.
    pub fn run_config(&self, file: Option<&Path>) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = file {
            cfg.apply_file(path)?;
        }
        for (k, v) in self.overrides() {
            cfg.set(k, &v)?;
        }
        Ok(cfg)
    }
}

/// A loaded problem with any starting-point presets from its file.
pub struct Loaded {
    pub problem: GnepProblem,
    pub presets: Vec<(String, Vec<f64>)>,
}

pub fn load_problem(name: &str, seed: u64) -> Result<Loaded> {
    let problem = match name {
        "quad3" => Some(problems::quad3_with_seed(seed)),
        _ => problems::by_name(name),
    };
    if let Some(problem) = problem {
        return Ok(Loaded {
            problem,
            presets: Vec::new(),
        });
    }
    let path = Path::new(name);
    if !path.exists() {
        return Err(Error::Config(format!(
            "`{name}` is neither a catalog problem nor an existing file"
        )));
    }
    let plugin = load_plugin(path)?;
    Ok(Loaded {
        problem: plugin.problem,
        presets: plugin.presets,
    })
}

pub fn resolve_x0(spec: &X0Spec, loaded: &Loaded) -> Result<DVector<f64>> {
    let n = loaded.problem.dim();
    let values = match spec {
        X0Spec::Fill(c) => vec![*c; n],
        X0Spec::Vector(v) => v.clone(),
        X0Spec::Label(l) => loaded
            .presets
            .iter()
            .find(|(name, _)| name == l)
            .map(|(_, v)| v.clone())
            .ok_or_else(|| Error::Config(format!("unknown x0 preset `{l}`")))?,
    };
    if values.len() != n {
        return Err(Error::Config(format!(
            "x0 has {} entries but the problem has n = {n}",
            values.len()
        )));
    }
    Ok(DVector::from_vec(values))
}

/// Outcome of a successful [`run`].
pub struct RunOutcome {
    pub result: TerminationReport,
    pub report: String,
    pub trace: String,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        exit_code(self.result.status)
    }
}

/// Runs one configuration and writes the report and trace files it names.
///
/// Nothing is written if the configuration or problem is invalid.
pub fn run(config: &RunConfig) -> Result<RunOutcome> {
    let name = config
        .problem
        .as_deref()
        .ok_or_else(|| Error::Config("no problem given".into()))?;
    let loaded = load_problem(name, config.seed)?;
    let x0 = resolve_x0(&config.x0, &loaded)?;
    let problem = &loaded.problem;
    let result = outer::solve_with(
        problem,
        &x0,
        &config.outer,
        &crate::subsolver::LmSubsolver::default(),
    )?;
    let diagnostics = diagnose(
        problem,
        &result.x,
        &result.multipliers,
        config.outer.eps,
        config.outer.eps_feas,
        DIAGNOSTICS_TOL,
    )
    .ok();
    let report = report::render(problem, &config.x0_label, &result, diagnostics.as_ref());
    let trace = report::trace_lines(&result.trace);
    if let Some(path) = &config.report {
        std::fs::write(path, &report)?;
    }
    if let Some(path) = &config.trace {
        std::fs::write(path, &trace)?;
    }
    Ok(RunOutcome { result, report, trace })
}

fn batch_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "cfg"))
        .collect();
    files.sort();
    Ok(files)
}

/// Runs every `*.cfg` in `dir` on its own thread. Runs without explicit
/// output paths write `<stem>.report` and `<stem>.trace.jsonl` next to
/// their config. Returns one `(file, exit code, message)` per config.
pub fn run_batch(args: &Args, dir: &Path) -> Result<Vec<(PathBuf, i32, String)>> {
    let files = batch_files(dir)?;
    let results = std::thread::scope(|scope| {
        let handles: Vec<_> = files
            .iter()
            .map(|file| {
                scope.spawn(move || {
                    let cfg = args.run_config(Some(file)).map(|mut cfg| {
                        if cfg.report.is_none() {
                            cfg.report = Some(file.with_extension("report"));
                        }
                        if cfg.trace.is_none() {
                            cfg.trace = Some(file.with_extension("trace.jsonl"));
                        }
                        cfg
                    });
                    match cfg.and_then(|cfg| run(&cfg)) {
                        Ok(out) => (out.exit_code(), format!("{:?}", out.result.status)),
                        Err(e) => (EXIT_USAGE, e.to_string()),
                    }
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or((EXIT_USAGE, "run panicked".into())))
            .collect::<Vec<_>>()
    });
    Ok(files
        .into_iter()
        .zip(results)
        .map(|(f, (code, msg))| (f, code, msg))
        .collect())
}

/// Entry point shared by the binary and tests; returns the exit status.
pub fn main_with<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(stderr, "{e}");
                return EXIT_USAGE;
            }
            let _ = write!(stdout, "{e}");
            return 0;
        }
    };
    if let Some(dir) = &args.batch {
        return match run_batch(&args, dir) {
            Ok(results) => {
                for (file, code, msg) in &results {
                    let _ = writeln!(stdout, "{} {code} {msg}", file.display());
                }
                results.iter().map(|r| r.1).max().unwrap_or(0)
            }
            Err(e) => {
                let _ = writeln!(stderr, "error: {e}");
                EXIT_USAGE
            }
        };
    }
    let outcome = args
        .run_config(args.config.as_deref())
        .and_then(|cfg| run(&cfg).map(|out| (cfg, out)));
    match outcome {
        Ok((cfg, out)) => {
            if cfg.report.is_none() {
                let _ = write!(stdout, "{}", out.report);
            }
            out.exit_code()
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            EXIT_USAGE
        }
    }
}
