//! Command-line driver: every workflow of `oneway-core` as a subcommand
//! with JSON/CSV outputs and a run manifest.
//!
//! Exit codes: 0 success, 1 usage or validation error, 2 capacity limit,
//! 3 a checked claim does not hold.

pub mod commands;
pub mod criteria;
pub mod manifest;
pub mod table;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use oneway_core::rabi::RabiConfig;
use oneway_core::resources::DeviceModel;
use oneway_core::Error;
use serde::Serialize;

use crate::commands::Report;
use crate::criteria::Tolerances;
use crate::manifest::{OutputSink, RunManifest};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_CAPACITY: i32 = 2;
pub const EXIT_CLAIM: i32 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "oneway",
    version,
    about = "One-way quantum computing simulator and resource estimator"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Device model JSON; missing fields take their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub device: Option<PathBuf>,
    /// Override one device field, e.g. `--set f_cz=0.99`.
    #[arg(long = "set", global = true, value_name = "FIELD=VALUE")]
    pub device_overrides: Vec<String>,
    /// Directory for output files and manifest.json.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Format of what is printed to stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// Override a tolerance, e.g. `--tolerance mpmc=1e-8`.
    #[arg(long = "tolerance", global = true, value_name = "NAME=VALUE")]
    pub tolerances: Vec<String>,
    /// Include wall-clock columns (outputs are then not reproducible).
    #[arg(long, global = true)]
    pub timings: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
    Text,
}

#[derive(Subcommand, Debug, Clone, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Build the h x l cluster schedule, estimate it, optionally verify it.
    Cluster(ClusterArgs),
    /// Run a C-NOT protocol over its measurement branches.
    Cnot(CnotArgs),
    /// Structure and connectedness of the C_N family.
    Mpmc(MpmcArgs),
    /// Minimum measurements to full separability, with witnesses.
    Persistence(PersistenceArgs),
    /// Fidelity and timing estimates for all protocols.
    Estimate(EstimateArgs),
    /// Driven two-site Rabi chain against the RWA gate.
    Rabi(RabiArgs),
    /// Run every acceptance criterion.
    Selftest,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Cluster(_) => "cluster",
            Command::Cnot(_) => "cnot",
            Command::Mpmc(_) => "mpmc",
            Command::Persistence(_) => "persistence",
            Command::Estimate(_) => "estimate",
            Command::Rabi(_) => "rabi",
            Command::Selftest => "selftest",
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ClusterArgs {
    #[arg(long, default_value_t = 4)]
    pub h: usize,
    #[arg(long, default_value_t = 4)]
    pub l: usize,
    /// Compare against the graph-state oracle (h*l <= 20).
    #[arg(long)]
    pub verify: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Standard,
    Efficient,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InputSet {
    /// {0,1} x {0,1}
    Computational,
    /// {0,1,+,-} x {0,1,+,-}
    All,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct CnotArgs {
    #[arg(long, value_enum, default_value_t = Variant::Standard)]
    pub variant: Variant,
    /// Enumerate every outcome string instead of sampling one per input.
    #[arg(long)]
    pub all_branches: bool,
    #[arg(long, value_enum, default_value_t = InputSet::Computational)]
    pub inputs: InputSet,
    /// Also reconstruct the Choi matrix and compare with the ideal C-NOT.
    #[arg(long)]
    pub tomography: bool,
    /// Track corrections in a Pauli frame instead of applying them.
    #[arg(long)]
    pub frame_tracking: bool,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct MpmcArgs {
    #[arg(long, default_value_t = 10)]
    pub n_max: usize,
    /// Largest n for the all-pairs connectedness check.
    #[arg(long, default_value_t = 8)]
    pub connectedness_max: usize,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Chains N = 3..8 and layered C_N for N = 3..6.
    Summary,
    Chain,
    Layered,
    Recursive,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Construction {
    Layered,
    Recursive,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct PersistenceArgs {
    #[arg(long, value_enum, default_value_t = Family::Summary)]
    pub family: Family,
    #[arg(long)]
    pub n: Option<usize>,
    /// Random general bases tried per qubit subset after the Pauli search
    /// (0 = Pauli only).
    #[arg(long, default_value_t = 0)]
    pub general_samples: usize,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct EstimateArgs {
    #[arg(long, default_value_t = 4)]
    pub h: usize,
    #[arg(long, default_value_t = 4)]
    pub l: usize,
    /// Array sizes for the capacity planner.
    #[arg(long, value_delimiter = ',', default_value = "16,20")]
    pub capacity: Vec<usize>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct RabiArgs {
    /// Rabi configuration JSON; missing fields take their defaults.
    #[arg(long, value_name = "PATH")]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Sweep points as xi/|Delta|, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub xi_over_delta: Vec<f64>,
    #[arg(long)]
    pub steps_per_period: Option<usize>,
    /// Drop the diagonal drive terms from the integrated Hamiltonian.
    #[arg(long)]
    pub no_diagonal: bool,
    /// Add diagnostic columns to the sweep table.
    #[arg(long)]
    pub extended: bool,
}

#[derive(Debug)]
enum Failure {
    Core(Error),
    Io(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Core(Error::Capacity { .. }) => EXIT_CAPACITY,
            _ => EXIT_INVALID,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Core(e) => write!(f, "{e}"),
            Failure::Io(e) => f.write_str(e),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

fn load_device(common: &Common) -> Result<DeviceModel, Failure> {
    let mut d = match &common.device {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            serde_json::from_str(&text)
                .map_err(|e| Failure::Core(Error::Validation(format!("{}: {e}", p.display()))))?
        }
        None => DeviceModel::default(),
    };
    for spec in &common.device_overrides {
        let (k, v) = spec
            .split_once('=')
            .ok_or_else(|| Error::Argument(format!("--set {spec:?} is not FIELD=VALUE")))?;
        d.set_field(k, v)?;
    }
    d.validate()?;
    Ok(d)
}

fn load_rabi(args: &RabiArgs) -> Result<RabiConfig, Failure> {
    let mut cfg = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            serde_json::from_str(&text)
                .map_err(|e| Failure::Core(Error::Validation(format!("{}: {e}", p.display()))))?
        }
        None => RabiConfig::default(),
    };
    if !args.xi_over_delta.is_empty() {
        cfg.xi_over_delta = args.xi_over_delta.clone();
    }
    if let Some(s) = args.steps_per_period {
        cfg.integration.steps_per_period = s;
    }
    if args.no_diagonal {
        cfg.integration.include_diagonal = false;
    }
    Ok(cfg)
}

#[derive(Serialize)]
struct ResolvedConfig<'a> {
    command: &'a Command,
    seed: u64,
    device: DeviceModel,
    tolerances: Tolerances,
    timings: bool,
    rabi: Option<&'a RabiConfig>,
}

fn execute(cli: &Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32, Failure> {
    let common = &cli.common;
    let device = load_device(common)?;
    let mut tol = Tolerances::default();
    for t in &common.tolerances {
        tol.set(t)?;
    }
    let rabi_cfg = match &cli.command {
        Command::Rabi(a) => Some(load_rabi(a)?),
        _ => None,
    };
    let resolved = ResolvedConfig {
        command: &cli.command,
        seed: common.seed,
        device,
        tolerances: tol,
        timings: common.timings,
        rabi: rabi_cfg.as_ref(),
    };
    let name = cli.command.name();
    let manifest = RunManifest::new(name, &resolved, common.seed);

    let report: Report = match &cli.command {
        Command::Cluster(a) => commands::cluster(a, &device, &tol)?,
        Command::Cnot(a) => commands::cnot(a, common.seed, &device, &tol)?,
        Command::Mpmc(a) => commands::mpmc(a, &tol)?,
        Command::Persistence(a) => commands::persistence(a, common.seed)?,
        Command::Estimate(a) => commands::estimate_cmd(a, &device)?,
        Command::Rabi(a) => commands::rabi(
            a,
            rabi_cfg.as_ref().expect("loaded above"),
            &tol,
            common.timings,
        )?,
        Command::Selftest => commands::selftest(&tol, &device, common.seed),
    };

    let mut json = serde_json::to_string_pretty(&report.json).expect("report serializes");
    json.push('\n');
    let csv = report
        .table
        .to_csv()
        .map_err(|e| Failure::Io(format!("csv: {e}")))?;
    let mut text = report.table.to_text();
    for n in &report.notes {
        text.push_str(n);
        text.push('\n');
    }

    let mut sink = OutputSink::new(common.out.clone(), manifest)
        .map_err(|e| io_err(common.out.as_deref().unwrap_or(Path::new(".")), e))?;
    let out_dir = sink.dir().map(Path::to_path_buf);
    let werr = |e| io_err(out_dir.as_deref().unwrap_or(Path::new(".")), e);
    sink.write(&format!("{name}.json"), json.as_bytes())
        .map_err(werr)?;
    sink.write(&format!("{name}.csv"), csv.as_bytes())
        .map_err(werr)?;
    sink.write(&format!("{name}.txt"), text.as_bytes())
        .map_err(werr)?;
    for (f, bytes) in &report.extra_files {
        sink.write(f, bytes).map_err(werr)?;
    }
    let manifest_json = sink.finish().map_err(werr)?;

    let printed = match common.format {
        Format::Json => &json,
        Format::Csv => &csv,
        Format::Text => &text,
    };
    let _ = stdout.write_all(printed.as_bytes());
    match &out_dir {
        Some(d) => {
            let _ = writeln!(stderr, "manifest: {}", d.join("manifest.json").display());
        }
        None => {
            let _ = stderr.write_all(manifest_json.as_bytes());
        }
    }
    Ok(if report.claim_failed {
        EXIT_CLAIM
    } else {
        EXIT_OK
    })
}

/// Parse `argv` and run; returns the process exit code.
pub fn run_with<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(stderr, "{}", e.render());
                return EXIT_INVALID;
            }
            let _ = write!(stdout, "{}", e.render());
            return EXIT_OK;
        }
    };
    match execute(&cli, stdout, stderr) {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(stderr, "error: {f}");
            f.code()
        }
    }
}

pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(argv, &mut std::io::stdout(), &mut std::io::stderr())
}
