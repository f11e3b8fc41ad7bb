//! `relmrf`: validate schemes, run inference backends, compare them over a
//! parameter grid, and fit or scan the likelihood of a data set.
//!
//! Exit status is 0 on success, 1 when the inputs are well formed but the
//! request cannot be honoured (invalid scheme, state space too large,
//! non-finite values, empty data), and 2 when a file cannot be read or
//! parsed or a flag is malformed.

mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use relmrf::bp::write_trace_csv;
use relmrf::compare::{write_compare_csv, write_marginals_csv, GROUND_EDGE_LIMIT};
use relmrf::exact::DEFAULT_STATE_CAP;
use relmrf::learning::{write_landscape_csv, write_optimizer_trace_csv, Termination};
use relmrf::scheme::ModelDocument;
use relmrf::{
    BackendChoice, BindingMode, BpConfig, CompareConfig, DataFile, EntityInstantiation, ExactOracle,
    FitConfig, GibbsConfig, GridAxis, InferenceSettings, Model, Objective, Optimizer, Scan, Schedule,
    TemplateFactorGraph, Universe, ValidScheme,
};

use manifest::{write_with_manifest, RunManifest};

#[derive(Debug)]
enum Failure {
    /// Well-formed input the tool cannot act on.
    Domain(String),
    /// Unreadable or unparsable input, or a malformed flag.
    Usage(String),
}

impl From<relmrf::Error> for Failure {
    fn from(e: relmrf::Error) -> Self {
        if e.is_io() {
            Failure::Usage(e.to_string())
        } else {
            Failure::Domain(e.to_string())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

type CliResult<T> = Result<T, Failure>;

#[derive(Parser)]
#[command(name = "relmrf", version, about = "Relational Markov random fields: inference and learning")]
struct Cli {
    /// Worker threads for parallel work; 1 gives the reference output.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scheme and an entity instantiation.
    Validate {
        #[arg(long)]
        scheme: PathBuf,
        #[arg(long)]
        instance: PathBuf,
    },
    /// Marginals and log-partition from one backend.
    Infer(InferArgs),
    /// Marginals of several backends over a parameter grid.
    Compare(CompareArgs),
    /// Fit the weights to a data set by maximum likelihood.
    Learn(LearnArgs),
    /// Log-likelihood and gradient over a parameter grid.
    Landscape(LandscapeArgs),
}

#[derive(Args, Serialize)]
struct ModelArgs {
    /// Scheme JSON, optionally with `theta`.
    #[arg(long)]
    scheme: PathBuf,
    /// Entity instantiation JSON.
    #[arg(long)]
    instance: PathBuf,
    /// Override one weight, as `name=value`. Repeatable.
    #[arg(long = "theta", value_parser = parse_assignment)]
    theta: Vec<(String, f64)>,
    #[arg(long, default_value = "all", value_parser = parse_mode)]
    mode: BindingMode,
}

#[derive(Args, Serialize)]
struct BpArgs {
    /// BP convergence threshold on the largest log-message change.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 1000)]
    max_iter: usize,
    /// Weight of the previous message, in [0, 1).
    #[arg(long, default_value_t = 0.0)]
    damping: f64,
}

impl BpArgs {
    fn config(&self) -> BpConfig {
        BpConfig {
            schedule: Schedule::Sync,
            tol: self.tol,
            max_iter: self.max_iter,
            damping: self.damping,
            record_trace: false,
        }
    }
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ScanArg {
    Systematic,
    Random,
}

#[derive(Args, Serialize)]
struct GibbsArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    burn_in: usize,
    #[arg(long, default_value_t = 1)]
    thinning: usize,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long, value_enum, default_value = "systematic")]
    scan: ScanArg,
}

impl GibbsArgs {
    fn config(&self) -> GibbsConfig {
        GibbsConfig {
            burn_in: self.burn_in,
            thinning: self.thinning,
            n_samples: self.samples,
            seed: self.seed,
            scan: match self.scan {
                ScanArg::Systematic => Scan::Systematic,
                ScanArg::Random => Scan::Random,
            },
            keep_samples: false,
        }
    }
}

#[derive(Args, Serialize)]
struct InferArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_parser = parse_backend)]
    backend: BackendChoice,
    #[command(flatten)]
    bp: BpArgs,
    #[command(flatten)]
    gibbs: GibbsArgs,
    /// Marginals CSV; stdout when absent.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Gibbs only: write the retained samples as a data file.
    #[arg(long)]
    samples_out: Option<PathBuf>,
    /// BP backends only: per-iteration message CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct CompareArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Grid axis `name:min:max:step`. Repeatable; first axis varies slowest.
    #[arg(long = "grid", value_parser = parse_grid)]
    grid: Vec<GridSpec>,
    /// Backends to run; all when absent. Repeatable.
    #[arg(long = "backend", value_parser = parse_backend)]
    backends: Vec<BackendChoice>,
    #[command(flatten)]
    bp: BpArgs,
    #[command(flatten)]
    gibbs: GibbsArgs,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[value(rename_all = "snake_case")]
#[serde(rename_all = "snake_case")]
enum LearnBackend {
    Exact,
    TemplateBp,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum OptimizerArg {
    Cg,
    Ga,
}

#[derive(Args, Serialize)]
struct LearnArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Data file with one assignment per instance.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "exact")]
    backend: LearnBackend,
    #[command(flatten)]
    bp: BpArgs,
    #[arg(long, value_enum, default_value = "cg")]
    optimizer: OptimizerArg,
    /// Stop once the gradient norm is below this.
    #[arg(long, default_value_t = 1e-4)]
    grad_tol: f64,
    #[arg(long, default_value_t = 500)]
    opt_iter: usize,
    /// Start each BP evaluation from the previous messages.
    #[arg(long)]
    warm_start: bool,
    /// Optimizer trace CSV; stdout when absent.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Write the scheme with the fitted weights.
    #[arg(long)]
    model_out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct LandscapeArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "exact")]
    backend: LearnBackend,
    #[command(flatten)]
    bp: BpArgs,
    #[arg(long = "grid", value_parser = parse_grid)]
    grid: Vec<GridSpec>,
    /// Chain BP messages from cell to cell (sequential).
    #[arg(long)]
    warm_start: bool,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
struct GridSpec {
    feature: String,
    min: f64,
    max: f64,
    step: f64,
}

fn parse_assignment(s: &str) -> Result<(String, f64), String> {
    let (name, value) = s.split_once('=').ok_or("expected name=value")?;
    let value: f64 = value.trim().parse().map_err(|e| format!("{e}"))?;
    Ok((name.trim().to_string(), value))
}

fn parse_mode(s: &str) -> Result<BindingMode, String> {
    s.parse().map_err(|e: relmrf::Error| e.to_string())
}

fn parse_backend(s: &str) -> Result<BackendChoice, String> {
    s.parse().map_err(|e: relmrf::Error| e.to_string())
}

fn parse_grid(s: &str) -> Result<GridSpec, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [feature, min, max, step] = parts[..] else {
        return Err("expected name:min:max:step".into());
    };
    let num = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("`{x}`: {e}"));
    Ok(GridSpec {
        feature: feature.trim().to_string(),
        min: num(min)?,
        max: num(max)?,
        step: num(step)?,
    })
}

/// Inputs read once, with their bytes kept for the manifest.
struct Loaded {
    model: Model,
    universe: Universe,
    manifest: RunManifest,
}

fn read_input(path: &Path, manifest: &mut RunManifest, role: &str) -> CliResult<String> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    manifest.add_input(role, path, text.as_bytes());
    Ok(text)
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path, text: &str) -> CliResult<T> {
    serde_json::from_str(text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn feature_index(scheme: &ValidScheme, name: &str) -> CliResult<usize> {
    scheme
        .feature_index(name)
        .ok_or_else(|| Failure::Usage(format!("unknown feature `{name}`")))
}

fn load(command: &str, args: &ModelArgs, config: serde_json::Value) -> CliResult<Loaded> {
    let mut manifest = RunManifest::new(command, config);
    let doc: ModelDocument = parse_json(&args.scheme, &read_input(&args.scheme, &mut manifest, "scheme")?)?;
    let inst: EntityInstantiation =
        parse_json(&args.instance, &read_input(&args.instance, &mut manifest, "instance")?)?;
    let mut model = Model::from_document(doc)?;
    for (name, value) in &args.theta {
        let f = feature_index(&model.scheme, name)?;
        model.theta[f] = *value;
    }
    let model = model.with_theta(model.theta.clone())?;
    let universe = Universe::new(&model.scheme, &inst)?;
    Ok(Loaded {
        model,
        universe,
        manifest,
    })
}

fn grid_axes(scheme: &ValidScheme, specs: &[GridSpec]) -> CliResult<Vec<GridAxis>> {
    specs
        .iter()
        .map(|g| {
            Ok(GridAxis {
                feature: feature_index(scheme, &g.feature)?,
                min: g.min,
                max: g.max,
                step: g.step,
            })
        })
        .collect()
}

fn emit(path: Option<&Path>, contents: &[u8], manifest: &RunManifest) -> CliResult<()> {
    match path {
        Some(p) => write_with_manifest(p, contents, manifest)
            .map_err(|e| Failure::Usage(format!("{}: {e}", p.display()))),
        None => {
            use std::io::Write;
            std::io::stdout().write_all(contents)?;
            Ok(())
        }
    }
}

fn config_json<T: Serialize>(value: &T) -> serde_json::Value {
    serde_json::to_value(value).expect("flags serialize")
}

fn cmd_validate(scheme: &Path, instance: &Path) -> CliResult<()> {
    let read = |p: &Path| fs::read_to_string(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())));
    let doc: ModelDocument = parse_json(scheme, &read(scheme)?)?;
    let inst: EntityInstantiation = parse_json(instance, &read(instance)?)?;
    let report = relmrf::validate_scheme(&doc.scheme);
    if !report.is_ok() {
        println!("{report}");
        return Err(Failure::Domain(format!("{} violation(s) in the scheme", report.violations.len())));
    }
    let valid = ValidScheme::new(doc.scheme)?;
    let report = inst.check(&valid);
    if !report.is_ok() {
        println!("{report}");
        return Err(Failure::Domain(format!(
            "{} violation(s) in the instantiation",
            report.violations.len()
        )));
    }
    if !doc.theta.is_empty() && doc.theta.len() != valid.features().len() {
        return Err(Failure::Domain(format!(
            "theta has {} entries but the scheme has {} features",
            doc.theta.len(),
            valid.features().len()
        )));
    }
    let universe = Universe::new(&valid, &inst)?;
    println!(
        "ok: {} types, {} attributes, {} features, {} ground variables",
        valid.types().len(),
        valid.attributes().len(),
        valid.features().len(),
        universe.num_variables()
    );
    Ok(())
}

fn cmd_infer(args: &InferArgs) -> CliResult<()> {
    if args.trace.is_some() && !args.backend.is_bp() {
        return Err(Failure::Usage("--trace needs a BP backend".into()));
    }
    if args.samples_out.is_some() && args.backend != BackendChoice::Gibbs {
        return Err(Failure::Usage("--samples-out needs the gibbs backend".into()));
    }
    let Loaded {
        model,
        universe,
        mut manifest,
    } = load("infer", &args.model, config_json(args))?;
    manifest.config["theta"] = config_json(&model.theta);
    let settings = InferenceSettings {
        mode: args.model.mode,
        bp: BpConfig {
            record_trace: args.trace.is_some(),
            ..args.bp.config()
        },
        gibbs: GibbsConfig {
            keep_samples: args.samples_out.is_some(),
            ..args.gibbs.config()
        },
        state_cap: DEFAULT_STATE_CAP,
    };
    let out = relmrf::run_inference(&model, &universe, args.backend, &settings, None)?;
    if let Some(c) = out.convergence {
        if !c.converged {
            eprintln!(
                "warning: BP did not converge in {} iterations (residual {:e})",
                c.iterations, c.residual
            );
        }
    }
    let mut csv = Vec::new();
    write_marginals_csv(&universe, &out, &mut csv)?;
    emit(args.output.as_deref(), &csv, &manifest)?;
    if let (Some(path), Some(rows)) = (&args.trace, &out.trace) {
        let mut buf = Vec::new();
        write_trace_csv(rows, &mut buf)?;
        emit(Some(path), &buf, &manifest)?;
    }
    if let Some(path) = &args.samples_out {
        let data = universe.write_data(&out.samples);
        let mut json = serde_json::to_string_pretty(&data).expect("data serializes");
        json.push('\n');
        emit(Some(path), json.as_bytes(), &manifest)?;
    }
    Ok(())
}

fn cmd_compare(args: &CompareArgs) -> CliResult<()> {
    let Loaded {
        model,
        universe,
        mut manifest,
    } = load("compare", &args.model, config_json(args))?;
    manifest.config["theta"] = config_json(&model.theta);
    let config = CompareConfig {
        axes: grid_axes(&model.scheme, &args.grid)?,
        backends: if args.backends.is_empty() {
            BackendChoice::ALL.to_vec()
        } else {
            args.backends.clone()
        },
        settings: InferenceSettings {
            mode: args.model.mode,
            bp: args.bp.config(),
            gibbs: args.gibbs.config(),
            state_cap: DEFAULT_STATE_CAP,
        },
        ground_edge_limit: GROUND_EDGE_LIMIT,
    };
    let table = relmrf::compare(&model, &universe, &config)?;
    for (b, why) in &table.skipped {
        eprintln!("skipping {b}: {why}");
    }
    for cell in &table.cells {
        for (b, err) in table.backends.iter().zip(&cell.errors) {
            if let Some(err) = err {
                eprintln!("cell {:?}, {b}: {err}", cell.theta);
            }
        }
    }
    let mut csv = Vec::new();
    write_compare_csv(&table, &mut csv)?;
    emit(args.output.as_deref(), &csv, &manifest)
}

fn objective(
    loaded: &mut Loaded,
    data_path: &Path,
    backend: LearnBackend,
    mode: BindingMode,
    bp: &BpArgs,
) -> CliResult<Objective> {
    let text = read_input(data_path, &mut loaded.manifest, "data")?;
    let data: DataFile = parse_json(data_path, &text)?;
    let data = loaded.universe.read_data(&data)?;
    let backend = match backend {
        LearnBackend::Exact => relmrf::Backend::Exact(Arc::new(ExactOracle::new(&loaded.universe, mode)?)),
        LearnBackend::TemplateBp => relmrf::Backend::TemplateBp {
            graph: TemplateFactorGraph::build(&loaded.model, loaded.universe.instantiation(), mode)?,
            config: bp.config(),
        },
    };
    Ok(Objective::from_data(backend, &loaded.universe, &data, mode)?)
}

fn cmd_learn(args: &LearnArgs) -> CliResult<()> {
    let mut loaded = load("learn", &args.model, config_json(args))?;
    loaded.manifest.config["theta"] = config_json(&loaded.model.theta);
    let objective = objective(&mut loaded, &args.data, args.backend, args.model.mode, &args.bp)?;
    let config = FitConfig {
        optimizer: match args.optimizer {
            OptimizerArg::Cg => Optimizer::ConjugateGradient,
            OptimizerArg::Ga => Optimizer::GradientAscent,
        },
        tol: args.grad_tol,
        max_iter: args.opt_iter,
        warm_start: args.warm_start,
    };
    let result = relmrf::fit(&objective, &loaded.model.theta, &config)?;
    let names = loaded.model.scheme.feature_names();
    let fitted: Vec<String> = names
        .iter()
        .zip(&result.theta)
        .map(|(n, t)| format!("{n}={t}"))
        .collect();
    let reason = match result.trace.termination {
        Termination::Converged => "converged",
        Termination::MaxIterations => "iteration limit reached",
        Termination::LineSearchFailed => "line search failed",
    };
    eprintln!(
        "{reason} after {} iterations: {} (loglik {})",
        result.trace.entries.len().saturating_sub(1),
        fitted.join(" "),
        result.report.log_likelihood
    );
    let mut csv = Vec::new();
    write_optimizer_trace_csv(&names, &result.trace, &mut csv)?;
    emit(args.output.as_deref(), &csv, &loaded.manifest)?;
    if let Some(path) = &args.model_out {
        let fitted = loaded.model.with_theta(result.theta.clone())?;
        let mut json = serde_json::to_string_pretty(&fitted.to_document()).expect("model serializes");
        json.push('\n');
        emit(Some(path), json.as_bytes(), &loaded.manifest)?;
    }
    Ok(())
}

fn cmd_landscape(args: &LandscapeArgs) -> CliResult<()> {
    let mut loaded = load("landscape", &args.model, config_json(args))?;
    loaded.manifest.config["theta"] = config_json(&loaded.model.theta);
    let objective = objective(&mut loaded, &args.data, args.backend, args.model.mode, &args.bp)?;
    let axes = grid_axes(&loaded.model.scheme, &args.grid)?;
    let rows = relmrf::landscape_scan(&objective, &loaded.model.theta, &axes, args.warm_start)?;
    for row in &rows {
        if let Err(e) = &row.outcome {
            eprintln!("cell {:?}: {e}", row.theta);
        }
    }
    let mut csv = Vec::new();
    write_landscape_csv(&loaded.model.scheme.feature_names(), &rows, &mut csv)?;
    emit(args.output.as_deref(), &csv, &loaded.manifest)
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    match &cli.command {
        Command::Validate { scheme, instance } => cmd_validate(scheme, instance),
        Command::Infer(a) => cmd_infer(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Learn(a) => cmd_learn(a),
        Command::Landscape(a) => cmd_landscape(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Domain(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
