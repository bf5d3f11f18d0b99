//! Command line front end.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::{load_model, ExperimentConfig, ExperimentKind};
use super::experiments::{run_chaos, run_contraction, run_coupled, run_moments, run_simulation, ExperimentRecord, HarnessError};
use crate::constants::{derive_constants, Diagnostic, MetricConstants};
use crate::coupling::COUPLED_CSV_HEADER;
use crate::dynamics::csv_header;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_DIAGNOSTICS: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "kinlang", about = "Kinetic Langevin contraction and propagation of chaos experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Derive the metric constants of a model.
    Constants(CommonArgs),
    /// Simulate an ensemble and dump trajectories.
    Simulate(CommonArgs),
    /// Simulate coupled pairs and dump pair observables.
    Couple(CommonArgs),
    /// Run a contraction experiment.
    Contract(CommonArgs),
    /// Run a propagation of chaos sweep.
    Chaos(CommonArgs),
    /// Track second moments and the Lyapunov function.
    Moments(CommonArgs),
    /// Run an unconfined contraction or chaos experiment.
    Unconfined(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON configuration file.
    #[arg(short, long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, or a `.json` file for `constants`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub replicas: Option<usize>,
    #[arg(long)]
    pub step: Option<f64>,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Config(#[from] super::config::ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("cannot serialize output: {0}")]
    Json(#[from] serde_json::Error),
}

/// Files of one run, written together once the run has succeeded.
struct Artifacts {
    files: Vec<(String, String)>,
}

impl Artifacts {
    fn new() -> Self {
        Artifacts { files: Vec::new() }
    }

    fn add(&mut self, name: &str, body: String) {
        self.files.push((name.to_string(), body));
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.add(name, s);
        Ok(())
    }

    /// Writes into `root/dir_name` through a staging directory and a rename.
    fn commit(self, root: &Path, dir_name: &str) -> Result<PathBuf, CliError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| CliError::Write { path, source }
        };
        fs::create_dir_all(root).map_err(io(root))?;
        let stage = root.join(format!(".{dir_name}.partial"));
        if stage.exists() {
            fs::remove_dir_all(&stage).map_err(io(&stage))?;
        }
        fs::create_dir(&stage).map_err(io(&stage))?;
        for (name, body) in &self.files {
            let p = stage.join(name);
            fs::write(&p, body).map_err(io(&p))?;
        }
        let fin = root.join(dir_name);
        if fin.exists() {
            fs::remove_dir_all(&fin).map_err(io(&fin))?;
        }
        fs::rename(&stage, &fin).map_err(io(&fin))?;
        Ok(fin)
    }
}

#[derive(Serialize)]
struct ConstantsDoc<'a> {
    constants: &'a MetricConstants,
    diagnostics: &'a [Diagnostic],
}

#[derive(Serialize)]
struct RunMeta<'a> {
    command: &'a str,
    config_hash: String,
    seed: u64,
    step: f64,
    horizon: f64,
    replicas: usize,
    diagnostics: &'a [Diagnostic],
}

fn load_config(args: &CommonArgs) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.integrator.seed = s;
    }
    if let Some(r) = args.replicas {
        cfg.replicas = r;
    }
    if let Some(h) = args.step {
        cfg.integrator.step = Some(h);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_root(args: &CommonArgs, cfg: Option<&ExperimentConfig>) -> PathBuf {
    args.out.clone().or_else(|| cfg.and_then(|c| c.output_dir.clone())).unwrap_or_else(|| PathBuf::from("runs"))
}

fn run_dir_name(command: &str, hash: &str) -> String {
    format!("{command}-{}", &hash[..16])
}

fn status(diagnostics: &[Diagnostic]) -> i32 {
    if diagnostics.is_empty() {
        EXIT_OK
    } else {
        EXIT_DIAGNOSTICS
    }
}

fn constants_command(args: &CommonArgs) -> Result<i32, CliError> {
    let model = load_model(&args.config)?;
    let der = derive_constants(&model).map_err(HarnessError::from)?;
    let doc = ConstantsDoc { constants: &der.constants, diagnostics: &der.diagnostics };
    let out = out_root(args, None);
    if out.extension().is_some_and(|e| e == "json") {
        if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|source| CliError::Write { path: parent.to_path_buf(), source })?;
        }
        let mut s = serde_json::to_string_pretty(&doc)?;
        s.push('\n');
        fs::write(&out, s).map_err(|source| CliError::Write { path: out.clone(), source })?;
        eprintln!("wrote {}", out.display());
    } else {
        let hash = hex::encode(Sha256::digest(serde_json::to_string(&model)?.as_bytes()));
        let mut a = Artifacts::new();
        a.json("constants.json", &doc)?;
        let dir = a.commit(&out, &run_dir_name("constants", &hash))?;
        eprintln!("wrote {}", dir.display());
    }
    Ok(status(&der.diagnostics))
}

fn record_artifacts(rec: &ExperimentRecord, cfg: &ExperimentConfig) -> Result<Artifacts, CliError> {
    let mut a = Artifacts::new();
    a.json("config.json", cfg)?;
    a.json("record.json", rec)?;
    a.json("constants.json", &ConstantsDoc { constants: &rec.constants, diagnostics: &rec.diagnostics })?;
    if !rec.series.is_empty() {
        a.add("series.csv", rec.series_csv());
    }
    if !rec.moments.is_empty() {
        a.add("moments.csv", rec.moments_csv());
    }
    if !rec.chaos.is_empty() {
        a.add("chaos.csv", rec.chaos_csv());
    }
    Ok(a)
}

fn experiment_command(name: &str, args: &CommonArgs, allowed: &[ExperimentKind]) -> Result<i32, CliError> {
    let cfg = load_config(args)?;
    if !allowed.contains(&cfg.experiment) {
        return Err(CliError::Usage(format!("`{name}` cannot run experiment {:?}; expected one of {allowed:?}", cfg.experiment)));
    }
    let rec = match cfg.experiment {
        ExperimentKind::Chaos | ExperimentKind::UnconfinedChaos => run_chaos(&cfg)?,
        ExperimentKind::Moments => run_moments(&cfg)?,
        _ => run_contraction(&cfg)?,
    };
    let dir = record_artifacts(&rec, &cfg)?.commit(&out_root(args, Some(&cfg)), &run_dir_name(name, &rec.config_hash))?;
    eprintln!("wrote {}", dir.display());
    Ok(status(&rec.diagnostics))
}

fn simulate_command(args: &CommonArgs) -> Result<i32, CliError> {
    let cfg = load_config(args)?;
    let der = derive_constants(&cfg.model).map_err(HarnessError::from)?;
    let snaps = run_simulation(&cfg)?;
    let ic = cfg.integrator_config();
    let hash = cfg.hash();
    let mut csv = Vec::new();
    csv.extend_from_slice(csv_header(cfg.model.dimension).as_bytes());
    csv.push(b'\n');
    for s in &snaps {
        s.write_csv_rows(&mut csv).expect("writing to memory");
    }
    let mut a = Artifacts::new();
    a.json("config.json", &cfg)?;
    a.json(
        "run.json",
        &RunMeta { command: "simulate", config_hash: hash.clone(), seed: ic.seed, step: ic.step, horizon: ic.horizon, replicas: cfg.replicas, diagnostics: &der.diagnostics },
    )?;
    a.add("trajectory.csv", String::from_utf8(csv).expect("ascii csv"));
    let dir = a.commit(&out_root(args, Some(&cfg)), &run_dir_name("simulate", &hash))?;
    eprintln!("wrote {}", dir.display());
    Ok(status(&der.diagnostics))
}

fn couple_command(args: &CommonArgs) -> Result<i32, CliError> {
    let cfg = load_config(args)?;
    let (der, rows) = run_coupled(&cfg)?;
    let ic = cfg.integrator_config();
    let hash = cfg.hash();
    let mut csv = String::from(COUPLED_CSV_HEADER);
    csv.push('\n');
    for r in &rows {
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    let mut a = Artifacts::new();
    a.json("config.json", &cfg)?;
    a.json(
        "run.json",
        &RunMeta { command: "couple", config_hash: hash.clone(), seed: ic.seed, step: ic.step, horizon: ic.horizon, replicas: cfg.replicas, diagnostics: &der.diagnostics },
    )?;
    a.json("constants.json", &ConstantsDoc { constants: &der.constants, diagnostics: &der.diagnostics })?;
    a.add("coupled.csv", csv);
    let dir = a.commit(&out_root(args, Some(&cfg)), &run_dir_name("couple", &hash))?;
    eprintln!("wrote {}", dir.display());
    Ok(status(&der.diagnostics))
}

fn dispatch(cli: &Cli) -> Result<i32, CliError> {
    use ExperimentKind::*;
    match &cli.command {
        Command::Constants(a) => constants_command(a),
        Command::Simulate(a) => simulate_command(a),
        Command::Couple(a) => couple_command(a),
        Command::Contract(a) => experiment_command("contract", a, &[ContractStrong, ContractClassical, ContractNonlinear]),
        Command::Chaos(a) => experiment_command("chaos", a, &[Chaos]),
        Command::Moments(a) => experiment_command("moments", a, &[Moments]),
        Command::Unconfined(a) => experiment_command("unconfined", a, &[UnconfinedContract, UnconfinedChaos]),
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit status.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}
