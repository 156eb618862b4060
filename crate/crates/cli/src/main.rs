//! `jcc`: command-line front end for the chance-constrained dispatch
//! experiment pipeline.
//!
//! Every command reads one TOML experiment config (`--config`), writes its
//! data files into `--out`, and drops a `manifest.json` beside them with the
//! config hash, effective seed, and produced file list. No output carries a
//! timestamp, so rerunning a command with the same config and seed
//! reproduces every file byte for byte.
//!
//! Exit codes: 0 success, 1 usage, 2 data or config error, 3 infeasible
//! model, 4 internal error. Diagnostics go to standard error; set `JCC_LOG`
//! (e.g. `JCC_LOG=warn`) to surface pipeline warnings such as skipped rows.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use jcc_core::learn::{evaluate, train_bagging, Ensemble};
use jcc_core::mip::MipStatus;
use jcc_core::netcase::{parse_case, validate, Network};
use jcc_core::opf::{
    solve_det, solve_saa, solve_surrogate, DispatchModel, DispatchSolution, EmbedMode, OpfError,
};
use jcc_core::pipeline::{
    generate_dataset, scenario_stream, sweep_ensemble_size, write_dataset_csv,
    write_delta_plot_csv, write_report_csv, write_sweep_csv, write_violation_plot_csv,
    ExperimentConfig, PipelineError,
};
use jcc_core::ptdf::{build_ptdf, Ptdf};
use jcc_core::scenarios::{sample, substream, UncertaintySpec};

#[derive(Parser)]
#[command(
    name = "jcc",
    version,
    about = "Chance-constrained dispatch experiments: scenario models, learned surrogates, comparisons"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config file (TOML). Required by every command.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Directory for data files and the manifest.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,

    /// Override the master seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Data file format where both are supported.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,

    /// Worker threads; 0 keeps the default. Changes speed, never results.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    /// Override the surrogate embedding from the config.
    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse the case file and dump the validated network as JSON.
    ParseCase,
    /// Report value-level defects of the case file; exit 2 if any exist.
    Validate,
    /// Build the injection-to-flow sensitivity matrix.
    Ptdf,
    /// Draw a scenario set from the config's uncertainty description.
    Sample {
        /// Number of scenarios; defaults to the config's n_scenarios.
        #[arg(long)]
        n: Option<usize>,
        /// Substream index of the draw.
        #[arg(long, default_value_t = 0)]
        stream: u64,
    },
    /// Solve the mean-value dispatch.
    SolveDet,
    /// Solve the scenario model with an exemption budget.
    SolveSaa {
        /// Violation fraction; defaults to the config's compare alpha.
        #[arg(long)]
        alpha: Option<f64>,
        /// Reproduce this dataset run's perturbed statistics and scenario
        /// draw; omitted, the base statistics are used.
        #[arg(long)]
        run: Option<usize>,
    },
    /// Solve the dispatch constrained by a trained ensemble.
    SolveSurrogate {
        /// Ensemble JSON file, e.g. from train-ensemble or compare.
        #[arg(long)]
        ensemble: PathBuf,
        /// Reproduce this dataset run's perturbed statistics and scenario
        /// draw; omitted, the base statistics are used.
        #[arg(long)]
        run: Option<usize>,
    },
    /// Generate the labeled dispatch dataset.
    GenDataset,
    /// Generate the dataset, rebalance, split, and train the ensemble.
    TrainEnsemble,
    /// Full experiment: train, then compare scenario model and surrogate on
    /// held-out runs.
    Compare,
    /// Test accuracy as a function of ensemble size.
    Sweep {
        /// Comma-separated ensemble sizes.
        #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 4, 8, 16])]
        sizes: Vec<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
enum Mode {
    MeanAffine,
    Conjunctive,
}

enum CliError {
    Usage(String),
    Data(String),
    Infeasible(String),
    Internal(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Infeasible(_) => 3,
            CliError::Internal(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m)
            | CliError::Data(m)
            | CliError::Infeasible(m)
            | CliError::Internal(m) => m,
        }
    }
}

fn map_opf(e: OpfError) -> CliError {
    match e {
        OpfError::Presolve(MipStatus::Infeasible) => {
            CliError::Infeasible("infeasible: deterministic presolve".into())
        }
        other => CliError::Data(other.to_string()),
    }
}

fn map_pipeline(e: PipelineError) -> CliError {
    match e {
        PipelineError::Opf(o) => map_opf(o),
        PipelineError::Csv(e) => CliError::Internal(e.to_string()),
        PipelineError::Json(e) => CliError::Internal(e.to_string()),
        PipelineError::Io(e) => CliError::Internal(e.to_string()),
        other => CliError::Data(other.to_string()),
    }
}

/// Status gate for the single-solve commands.
fn require_optimal(what: &str, sol: &DispatchSolution) -> Result<(), CliError> {
    match sol.status {
        MipStatus::Optimal => Ok(()),
        MipStatus::Infeasible => Err(CliError::Infeasible(format!("infeasible: {what} model"))),
        other => Err(CliError::Internal(format!("{what} solve stopped: {other:?}"))),
    }
}

/// Everything loaded once per invocation.
struct Ctx {
    cfg: ExperimentConfig,
    net: Network,
    config_path: String,
    config_sha256: String,
    case_path: PathBuf,
}

impl Ctx {
    fn load(cli: &Cli) -> Result<Self, CliError> {
        let path = cli
            .config
            .as_ref()
            .ok_or_else(|| CliError::Usage("--config <FILE> is required".into()))?;
        let bytes = fs::read(path)
            .map_err(|e| CliError::Data(format!("cannot read config {}: {e}", path.display())))?;
        let config_sha256 = format!("{:x}", Sha256::digest(&bytes));
        let text = String::from_utf8(bytes)
            .map_err(|_| CliError::Data(format!("config {} is not UTF-8", path.display())))?;
        let mut cfg = ExperimentConfig::from_toml(&text).map_err(map_pipeline)?;
        if let Some(seed) = cli.seed {
            cfg.seeds.master = seed;
        }
        if let Some(mode) = cli.mode {
            cfg.compare.embed = match mode {
                Mode::MeanAffine => EmbedMode::MeanAffine,
                Mode::Conjunctive => EmbedMode::Conjunctive,
            };
        }
        // The case path is resolved against the config file's directory, so
        // a config works regardless of the invocation directory.
        let case_path = path.parent().unwrap_or(Path::new(".")).join(&cfg.case.path);
        let case_text = fs::read_to_string(&case_path).map_err(|e| {
            CliError::Data(format!("cannot read case {}: {e}", case_path.display()))
        })?;
        let net = parse_case(&case_text)
            .map_err(|e| CliError::Data(format!("{}: {e}", case_path.display())))?;
        Ok(Ctx { cfg, net, config_path: path.display().to_string(), config_sha256, case_path })
    }

    fn ptdf(&self) -> Result<Ptdf, CliError> {
        build_ptdf(&self.net).map_err(|e| CliError::Data(e.to_string()))
    }

    /// Statistics and scenario stream for a solve command: a stored run's
    /// perturbation, or the base statistics on the first stream.
    fn solve_spec(&self, run: Option<usize>) -> Result<(UncertaintySpec, u64), CliError> {
        let base = self.cfg.base_spec(&self.net).map_err(map_pipeline)?;
        match run {
            None => Ok((base, scenario_stream(0))),
            Some(r) => {
                let mut rng = substream(self.cfg.seeds.master, jcc_core::pipeline::perturb_stream(r));
                let spec = jcc_core::scenarios::perturb_wind_stats(
                    &base,
                    &mut rng,
                    &self.cfg.perturb_ranges(),
                );
                Ok((spec, scenario_stream(r)))
            }
        }
    }
}

/// Output directory with a record of every file written, for the manifest.
struct OutDir {
    dir: PathBuf,
    written: Vec<String>,
}

impl OutDir {
    fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Internal(format!("cannot create {}: {e}", dir.display())))?;
        Ok(OutDir { dir: dir.to_path_buf(), written: Vec::new() })
    }

    fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes)
            .map_err(|e| CliError::Internal(format!("cannot write {}: {e}", path.display())))?;
        self.written.push(name.to_string());
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| CliError::Internal(e.to_string()))?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    fn write_with<F>(&mut self, name: &str, f: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut Vec<u8>) -> Result<(), PipelineError>,
    {
        let mut buf = Vec::new();
        f(&mut buf).map_err(map_pipeline)?;
        self.write_bytes(name, &buf)
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    tool_version: &'static str,
    core_version: &'static str,
    command: String,
    config_path: &'a str,
    config_sha256: &'a str,
    case_path: String,
    seed: u64,
    format: &'static str,
    jobs: usize,
    embed_mode: &'static str,
    outputs: Vec<String>,
}

fn command_name(cmd: &Command) -> String {
    match cmd {
        Command::ParseCase => "parse-case",
        Command::Validate => "validate",
        Command::Ptdf => "ptdf",
        Command::Sample { .. } => "sample",
        Command::SolveDet => "solve-det",
        Command::SolveSaa { .. } => "solve-saa",
        Command::SolveSurrogate { .. } => "solve-surrogate",
        Command::GenDataset => "gen-dataset",
        Command::TrainEnsemble => "train-ensemble",
        Command::Compare => "compare",
        Command::Sweep { .. } => "sweep",
    }
    .to_string()
}

fn write_manifest(cli: &Cli, ctx: &Ctx, out: &mut OutDir) -> Result<(), CliError> {
    let manifest = Manifest {
        tool: "jcc",
        tool_version: env!("CARGO_PKG_VERSION"),
        core_version: jcc_core::VERSION,
        command: command_name(&cli.command),
        config_path: &ctx.config_path,
        config_sha256: &ctx.config_sha256,
        case_path: ctx.case_path.display().to_string(),
        seed: ctx.cfg.seeds.master,
        format: match cli.format {
            Format::Csv => "csv",
            Format::Json => "json",
        },
        jobs: cli.jobs,
        embed_mode: match ctx.cfg.compare.embed {
            EmbedMode::Conjunctive => "conjunctive",
            EmbedMode::MeanAffine => "mean_affine",
        },
        outputs: out.written.clone(),
    };
    out.write_json("manifest.json", &manifest)?;
    Ok(())
}

fn solution_csv(dm: &DispatchModel, sol: &DispatchSolution) -> Vec<u8> {
    let mut buf = Vec::new();
    let _ = writeln!(buf, "field,value");
    let _ = writeln!(buf, "status,{:?}", sol.status);
    let _ = writeln!(buf, "cost,{}", sol.cost);
    let _ = writeln!(buf, "model_objective,{}", sol.model_objective);
    let _ = writeln!(buf, "budget,{}", dm.budget);
    let _ = writeln!(buf, "exempted,{}", sol.exempted());
    let _ = writeln!(buf, "node_count,{}", sol.node_count);
    let _ = writeln!(buf, "lp_iterations,{}", sol.lp_iterations);
    for (g, v) in sol.p.iter().enumerate() {
        let _ = writeln!(buf, "p{g},{v}");
    }
    for (g, v) in sol.beta.iter().enumerate() {
        let _ = writeln!(buf, "beta{g},{v}");
    }
    for (s, v) in sol.z.iter().enumerate() {
        let _ = writeln!(buf, "z{s},{v}");
    }
    buf
}

#[derive(Serialize)]
struct SolutionDump<'a> {
    budget: usize,
    monitored: &'a [usize],
    #[serde(flatten)]
    solution: &'a DispatchSolution,
}

fn write_solution(
    out: &mut OutDir,
    format: Format,
    dm: &DispatchModel,
    sol: &DispatchSolution,
) -> Result<(), CliError> {
    match format {
        Format::Csv => out.write_bytes("solution.csv", &solution_csv(dm, sol)),
        Format::Json => out.write_json(
            "solution.json",
            &SolutionDump { budget: dm.budget, monitored: &dm.monitored, solution: sol },
        ),
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let ctx = Ctx::load(cli)?;
    let mut out = OutDir::create(&cli.out)?;
    let mut defects = 0usize;

    match &cli.command {
        Command::ParseCase => {
            out.write_json("network.json", &ctx.net)?;
        }
        Command::Validate => {
            let issues = validate(&ctx.net);
            defects = issues.len();
            out.write_json("validation.json", &issues)?;
        }
        Command::Ptdf => {
            let ptdf = ctx.ptdf()?;
            match cli.format {
                Format::Csv => out.write_with("ptdf.csv", |buf| {
                    ptdf.to_csv(&ctx.net, buf).map_err(PipelineError::from)
                })?,
                Format::Json => out.write_json("ptdf.json", &ptdf)?,
            }
        }
        Command::Sample { n, stream } => {
            let spec = ctx.cfg.base_spec(&ctx.net).map_err(map_pipeline)?;
            let n = n.unwrap_or(ctx.cfg.dataset.n_scenarios);
            let scen = sample(&spec, &ctx.net, n, *stream)
                .map_err(|e| CliError::Data(e.to_string()))?;
            match cli.format {
                Format::Csv => out.write_with("scenarios.csv", |buf| {
                    scen.to_csv(&ctx.net, buf).map_err(PipelineError::from)
                })?,
                Format::Json => out.write_json("scenarios.json", &scen)?,
            }
        }
        Command::SolveDet => {
            let ptdf = ctx.ptdf()?;
            let spec = ctx.cfg.base_spec(&ctx.net).map_err(map_pipeline)?;
            let (dm, sol) = solve_det(
                &ctx.net,
                &ptdf,
                &spec,
                ctx.cfg.saa.segments,
                &Default::default(),
            )
            .map_err(map_opf)?;
            require_optimal("deterministic", &sol)?;
            write_solution(&mut out, cli.format, &dm, &sol)?;
        }
        Command::SolveSaa { alpha, run } => {
            let ptdf = ctx.ptdf()?;
            let (spec, stream) = ctx.solve_spec(*run)?;
            let scen = sample(&spec, &ctx.net, ctx.cfg.dataset.n_scenarios, stream)
                .map_err(|e| CliError::Data(e.to_string()))?;
            let opts = ctx
                .cfg
                .saa_options(alpha.unwrap_or(ctx.cfg.compare.alpha))
                .map_err(map_pipeline)?;
            let (dm, sol) = solve_saa(&ctx.net, &ptdf, &scen, &opts).map_err(map_opf)?;
            require_optimal("scenario", &sol)?;
            write_solution(&mut out, cli.format, &dm, &sol)?;
        }
        Command::SolveSurrogate { ensemble, run } => {
            let text = fs::read_to_string(ensemble).map_err(|e| {
                CliError::Data(format!("cannot read ensemble {}: {e}", ensemble.display()))
            })?;
            let ens = Ensemble::from_json(&text)
                .map_err(|e| CliError::Data(format!("{}: {e}", ensemble.display())))?;
            let (spec, stream) = ctx.solve_spec(*run)?;
            let scen = sample(&spec, &ctx.net, ctx.cfg.dataset.n_scenarios, stream)
                .map_err(|e| CliError::Data(e.to_string()))?;
            let opts = ctx.cfg.surrogate_options();
            let (dm, sol) = solve_surrogate(&ctx.net, &ens, &scen, &opts).map_err(map_opf)?;
            require_optimal("surrogate", &sol)?;
            write_solution(&mut out, cli.format, &dm, &sol)?;
        }
        Command::GenDataset => {
            let bundle = generate_dataset(&ctx.net, &ctx.cfg).map_err(map_pipeline)?;
            out.write_with("dataset.csv", |buf| write_dataset_csv(&bundle, buf))?;
            if cli.format == Format::Json {
                out.write_json("bundle.json", &bundle)?;
            }
        }
        Command::TrainEnsemble => {
            let (_, train, test) =
                jcc_core::pipeline::prepare_training_sets(&ctx.net, &ctx.cfg)
                    .map_err(map_pipeline)?;
            let (xs, ys) = train.xy();
            let params = ctx.cfg.bagging_params(ctx.cfg.ensemble.n_planes);
            let ens = train_bagging(&xs, &ys, train.feature_order.clone(), &params)
                .map_err(|e| CliError::Data(e.to_string()))?;
            let (txs, tys) = test.xy();
            let metrics = evaluate(&ens, &txs, &tys);
            out.write_json("ensemble.json", &ens)?;
            out.write_json("metrics.json", &metrics)?;
        }
        Command::Compare => {
            let result = jcc_core::pipeline::run_comparison(&ctx.net, &ctx.cfg)
                .map_err(map_pipeline)?;
            out.write_with("report.csv", |buf| write_report_csv(&result.report, buf))?;
            out.write_json("report.json", &result.report)?;
            out.write_json("ensemble.json", &result.ensemble)?;
            out.write_with("dataset.csv", |buf| write_dataset_csv(&result.bundle, buf))?;
            out.write_with("plot_delta.csv", |buf| write_delta_plot_csv(&result.report, buf))?;
            out.write_with("plot_violations.csv", |buf| {
                write_violation_plot_csv(&result.report, buf)
            })?;
        }
        Command::Sweep { sizes } => {
            let points =
                sweep_ensemble_size(&ctx.net, &ctx.cfg, sizes).map_err(map_pipeline)?;
            out.write_with("sweep.csv", |buf| write_sweep_csv(&points, buf))?;
            if cli.format == Format::Json {
                out.write_json("sweep.json", &points)?;
            }
        }
    }

    write_manifest(cli, &ctx, &mut out)?;
    if defects > 0 {
        return Err(CliError::Data(format!(
            "{defects} validation issue(s); see validation.json"
        )));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::new().filter("JCC_LOG")).init();
    if cli.jobs > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build_global() {
            eprintln!("error: cannot size the thread pool: {e}");
            return ExitCode::from(4);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
