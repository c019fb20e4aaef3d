//! `gee` command-line front end.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error,
//! 4 non-convergence (the partial report is still printed).

pub mod report;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use gee_core::data::{derive_threshold, load_csv, CategoryOrder, ClusteredDataset, ResponseReference, TermCoding};
use gee_core::gee::{CorrelationKind, GeeFit, GeeOptions};
use gee_core::glm::Family;
use gee_core::inference::{cluster_size_distribution, concordance_summary, crosstab_panels, parameter_table, qic};
use gee_core::select::{run_selection, SelectionMode};
use gee_core::simulate::{build_paper_marginals, generate, SimProfile};
use gee_core::{Error, Matrix, ModelSpec};

use report::{render_selection, CrosstabReport, FitReport, SummaryReport};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NO_CONVERGENCE: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "gee", version, about = "Generalized estimating equations for clustered outcomes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one marginal model and print its parameter table.
    Fit(FitArgs),
    /// Choose the working correlation by QIC and the covariates by QICu.
    Select(SelectArgs),
    /// 2x2 tables, odds and odds ratios under every reference choice.
    Crosstab(CrosstabArgs),
    /// Write a simulated clustered dataset as CSV.
    Simulate(SimulateArgs),
    /// Cluster-size distribution and outcome agreement within clusters.
    Summarize(SummarizeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RefCategory {
    First,
    Last,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Exhaustive,
    Stepwise,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Input CSV file.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Use the built-in 305-row dataset with the reference AREA1 x LOOSENING counts.
    #[arg(long)]
    pub paper_marginals: bool,
    /// Cluster (subject) column.
    #[arg(long)]
    pub cluster: Option<String>,
    /// Response column.
    #[arg(long)]
    pub response: Option<String>,
    /// Within-subject position column.
    #[arg(long)]
    pub within: Option<String>,
    /// Derived 0/1 column, `NEW=SRC>VALUE` or `NEW=SRC>=VALUE`; repeatable.
    #[arg(long)]
    pub derive: Vec<String>,
    /// Seed for the arrangement of --paper-marginals.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Factor terms as `NAME:asc` or `NAME:desc`; the level sorting last is the reference.
    #[arg(long, value_delimiter = ',')]
    pub factors: Vec<String>,
    /// Covariate terms, entered as raw values.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Vec<String>,
    /// Response reference level: `first` models the higher value, `last` the lower.
    #[arg(long, value_enum, default_value_t = RefCategory::First)]
    pub ref_category: RefCategory,
    /// binomial, normal or poisson (canonical links).
    #[arg(long, default_value = "binomial")]
    pub family: String,
    /// Confidence level for Wald intervals.
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// independent, exchangeable, ar1, unstructured, mdep[:M] or fixed:PATH.
    #[arg(long, default_value = "independent")]
    pub corr: String,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 60)]
    pub max_iter: usize,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum, default_value_t = Mode::Exhaustive)]
    pub mode: Mode,
    /// Largest covariate subset considered (default: all terms).
    #[arg(long)]
    pub max_size: Option<usize>,
    /// Structures to compare (default: independent, mdep:2, exchangeable, ar1, unstructured).
    #[arg(long, value_delimiter = ',')]
    pub structures: Vec<String>,
}

#[derive(Debug, Args)]
pub struct CrosstabArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Binary exposure column.
    #[arg(long)]
    pub exposure: String,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 135)]
    pub clusters: usize,
    /// Target within-cluster correlation of the binary responses.
    #[arg(long, default_value_t = 0.3)]
    pub alpha: f64,
    /// Write the deterministic reference-count dataset instead.
    #[arg(long)]
    pub paper_marginals: bool,
}

/// A failure carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Failure { code: EXIT_CONFIG, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::MissingColumn(_)
            | Error::UnknownVariable(_)
            | Error::UnsupportedFamily(_)
            | Error::InvalidLevel(_)
            | Error::InvalidProfile(_)
            | Error::InvalidAlpha(_)
            | Error::InfeasibleCorrelation { .. }
            | Error::SizeExceedsTemplate { .. } => EXIT_CONFIG,
            Error::NoConvergence { .. } => EXIT_NO_CONVERGENCE,
            _ => EXIT_DATA,
        };
        Failure { code, message: e.to_string() }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Parses `args` (including the program name) and runs the command.
/// Reports go to `out`, diagnostics to `err`; returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    0
                }
                _ => {
                    let _ = write!(err, "{e}");
                    EXIT_CONFIG
                }
            };
        }
    };
    let result = match &cli.command {
        Command::Fit(a) => cmd_fit(a, out),
        Command::Select(a) => cmd_select(a, out),
        Command::Crosstab(a) => cmd_crosstab(a, out),
        Command::Simulate(a) => cmd_simulate(a, out),
        Command::Summarize(a) => cmd_summarize(a, out),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

struct Loaded {
    ds: ClusteredDataset,
    response: String,
}

fn load(a: &DataArgs) -> CliResult<Loaded> {
    let (mut ds, response) = match (&a.data, a.paper_marginals) {
        (Some(_), true) => return Err(Failure::config("--data and --paper-marginals are mutually exclusive")),
        (None, true) => (build_paper_marginals(a.seed), "LOOSENING".to_string()),
        (None, false) => return Err(Failure::config("--data (or --paper-marginals) is required")),
        (Some(path), false) => {
            let cluster = a.cluster.as_deref().ok_or_else(|| Failure::config("--cluster is required"))?;
            let response = a.response.as_deref().ok_or_else(|| Failure::config("--response is required"))?;
            (load_csv(path, cluster, response, a.within.as_deref())?, response.to_string())
        }
    };
    for spec in &a.derive {
        let (name, source, threshold, strict) = parse_derive(spec)?;
        ds = derive_threshold(&ds, &source, threshold, &name, strict)?;
    }
    Ok(Loaded { ds, response })
}

/// `NEW=SRC>VALUE` (strictly above) or `NEW=SRC>=VALUE`.
pub fn parse_derive(spec: &str) -> CliResult<(String, String, f64, bool)> {
    let bad = || Failure::config(format!("bad --derive `{spec}`; expected NEW=SRC>VALUE or NEW=SRC>=VALUE"));
    let (name, rule) = spec.split_once('=').ok_or_else(bad)?;
    let (source, value, strict) = if let Some((s, v)) = rule.split_once(">=") {
        (s, v, false)
    } else if let Some((s, v)) = rule.split_once('>') {
        (s, v, true)
    } else {
        return Err(bad());
    };
    let threshold: f64 = value.trim().parse().map_err(|_| bad())?;
    let (name, source) = (name.trim(), source.trim());
    if name.is_empty() || source.is_empty() {
        return Err(bad());
    }
    Ok((name.to_string(), source.to_string(), threshold, strict))
}

fn parse_terms(m: &ModelArgs) -> CliResult<Vec<TermCoding>> {
    let mut terms = Vec::new();
    for f in &m.factors {
        let (name, order) = match f.split_once(':') {
            Some((n, o)) => (n, o),
            None => (f.as_str(), "asc"),
        };
        let order = match order.to_ascii_lowercase().as_str() {
            "asc" | "ascending" => CategoryOrder::Ascending,
            "desc" | "descending" => CategoryOrder::Descending,
            _ => return Err(Failure::config(format!("bad factor order in `{f}`; use NAME:asc or NAME:desc"))),
        };
        terms.push(TermCoding::factor(name, order));
    }
    terms.extend(m.covariates.iter().map(|c| TermCoding::covariate(c)));
    let mut names: Vec<&str> = terms.iter().map(|t| t.name.as_str()).collect();
    names.sort_unstable();
    if names.windows(2).any(|w| w[0] == w[1]) {
        return Err(Failure::config("a term is listed twice"));
    }
    Ok(terms)
}

fn parse_family(s: &str) -> CliResult<Family> {
    s.parse::<Family>().map_err(Failure::from)
}

fn reference(r: RefCategory) -> ResponseReference {
    match r {
        RefCategory::First => ResponseReference::First,
        RefCategory::Last => ResponseReference::Last,
    }
}

/// Reads a headerless CSV of numbers as a square correlation template.
fn load_fixed(path: &Path) -> CliResult<CorrelationKind> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').map(|v| v.trim().parse::<f64>()).collect::<std::result::Result<Vec<_>, _>>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    let m = Matrix::from_rows(&rows).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    CorrelationKind::fixed(m).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

fn parse_corr(s: &str) -> CliResult<CorrelationKind> {
    match s.split_once(':') {
        Some((head, path)) if head.eq_ignore_ascii_case("fixed") => load_fixed(Path::new(path)),
        _ => s.parse::<CorrelationKind>().map_err(Failure::config),
    }
}

fn fit_report(
    spec: &ModelSpec,
    prepared: &gee_core::PreparedModel,
    fit: &GeeFit,
    response: &str,
    level: f64,
) -> CliResult<FitReport> {
    let coding = prepared.data.response_coding();
    Ok(FitReport {
        family: spec.family.to_string(),
        correlation: spec.correlation.to_string(),
        response: response.to_string(),
        event: coding.map(|c| c.event),
        reference: coding.map(|c| c.reference),
        n_clusters: fit.n_clusters,
        n_obs: fit.n_obs,
        dropped: prepared.dropped,
        iterations: fit.iterations,
        converged: fit.converged,
        level,
        parameters: parameter_table(fit, level)?,
        phi: fit.phi,
        structure: fit.structure.clone(),
        qic: qic(fit, &prepared.design, &prepared.data, spec.family).ok(),
        qic_u: gee_core::inference::qic_u(fit, fit.n_params()),
        warnings: fit.warnings.clone(),
    })
}

fn emit_json<T: serde::Serialize>(out: &mut dyn Write, value: &T) -> CliResult<()> {
    let s = serde_json::to_string_pretty(value).map_err(|e| Failure { code: EXIT_DATA, message: e.to_string() })?;
    writeln!(out, "{s}").map_err(io_failure)
}

fn emit_csv<T: serde::Serialize>(out: &mut dyn Write, rows: impl IntoIterator<Item = T>) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Failure { code: EXIT_DATA, message: e.to_string() })?;
    }
    w.flush().map_err(io_failure)
}

fn io_failure(e: std::io::Error) -> Failure {
    Failure { code: EXIT_DATA, message: e.to_string() }
}

pub fn cmd_fit(a: &FitArgs, out: &mut dyn Write) -> CliResult<i32> {
    let spec = ModelSpec {
        family: parse_family(&a.model.family)?,
        response_reference: reference(a.model.ref_category),
        terms: parse_terms(&a.model)?,
        correlation: parse_corr(&a.corr)?,
    };
    if !(a.model.level > 0.0 && a.model.level < 1.0) {
        return Err(Failure::from(Error::InvalidLevel(a.model.level)));
    }
    let loaded = load(&a.data)?;
    let opts = GeeOptions { tol: a.tol, max_iter: a.max_iter, ..GeeOptions::default() };
    let prepared = spec.prepare(&loaded.ds)?;
    let (fit, code) = match gee_core::fit_gee(&prepared.design, &prepared.data, spec.family, &spec.correlation, &opts) {
        Ok(f) => (f, 0),
        Err(Error::NoConvergence { partial: Some(f), iterations }) => {
            log::warn!("no convergence after {iterations} iterations; reporting the last iterate");
            (*f, EXIT_NO_CONVERGENCE)
        }
        Err(e) => return Err(e.into()),
    };
    let report = fit_report(&spec, &prepared, &fit, &loaded.response, a.model.level)?;
    match a.model.format {
        Format::Text => write!(out, "{}", report.render_text()).map_err(io_failure)?,
        Format::Json => emit_json(out, &report)?,
        Format::Csv => emit_csv(out, &report.parameters)?,
    }
    Ok(code)
}

#[derive(serde::Serialize)]
struct CandidateCsv<'a> {
    structure: String,
    covariates: String,
    p: usize,
    qic: Option<f64>,
    qic_u: Option<f64>,
    converged: bool,
    error: Option<&'a str>,
}

pub fn cmd_select(a: &SelectArgs, out: &mut dyn Write) -> CliResult<i32> {
    let family = parse_family(&a.model.family)?;
    let terms = parse_terms(&a.model)?;
    if terms.is_empty() {
        return Err(Failure::config("select needs at least one --factors or --covariates term"));
    }
    let structures = if a.structures.is_empty() {
        CorrelationKind::defaults()
    } else {
        a.structures.iter().map(|s| parse_corr(s)).collect::<CliResult<Vec<_>>>()?
    };
    let max_size = a.max_size.unwrap_or(terms.len());
    if max_size == 0 || max_size > terms.len() {
        return Err(Failure::config(format!("--max-size must be between 1 and {}", terms.len())));
    }
    let loaded = load(&a.data)?;
    let spec = ModelSpec {
        family,
        response_reference: reference(a.model.ref_category),
        terms: terms.clone(),
        correlation: CorrelationKind::Independent,
    };
    let ds = spec.code_response(&loaded.ds)?;
    let mode = match a.mode {
        Mode::Exhaustive => SelectionMode::Exhaustive,
        Mode::Stepwise => SelectionMode::Stepwise,
    };
    let report = run_selection(&ds, family, &terms, &structures, mode, max_size, &GeeOptions::default())?;
    match a.model.format {
        Format::Text => write!(out, "{}", render_selection(&report)).map_err(io_failure)?,
        Format::Json => emit_json(out, &report)?,
        Format::Csv => emit_csv(
            out,
            report.candidates.iter().map(|c| CandidateCsv {
                structure: c.structure.to_string(),
                covariates: c.covariates.join(" "),
                p: c.p,
                qic: c.qic,
                qic_u: c.qic_u,
                converged: c.converged,
                error: c.error.as_deref(),
            }),
        )?,
    }
    Ok(0)
}

pub fn cmd_crosstab(a: &CrosstabArgs, out: &mut dyn Write) -> CliResult<i32> {
    let loaded = load(&a.data)?;
    let report = CrosstabReport {
        response: loaded.response.clone(),
        exposure: a.exposure.clone(),
        panels: crosstab_panels(&loaded.ds, &a.exposure)?,
    };
    match a.format {
        Format::Text => write!(out, "{}", report.render_text()).map_err(io_failure)?,
        Format::Json => emit_json(out, &report)?,
        Format::Csv => emit_csv(
            out,
            report.panels.iter().map(|p| {
                (
                    format!("{:?}", p.response_reference).to_lowercase(),
                    format!("{:?}", p.factor_order).to_lowercase(),
                    p.table.a,
                    p.table.b,
                    p.table.c,
                    p.table.d,
                    p.odds_ratio,
                )
            }),
        )?,
    }
    Ok(0)
}

pub fn cmd_summarize(a: &SummarizeArgs, out: &mut dyn Write) -> CliResult<i32> {
    let loaded = load(&a.data)?;
    let ds = &loaded.ds;
    let concordance = match concordance_summary(ds, &loaded.response) {
        Ok(c) => Some(c),
        Err(Error::NonBinaryResponse(_)) => {
            log::info!("response is not coded 0/1; skipping the agreement summary");
            None
        }
        Err(e) => return Err(e.into()),
    };
    let report = SummaryReport {
        n_clusters: ds.n_clusters(),
        n_obs: ds.n_total(),
        sizes: cluster_size_distribution(ds),
        concordance,
    };
    match a.format {
        Format::Text => write!(out, "{}", report.render_text()).map_err(io_failure)?,
        Format::Json => emit_json(out, &report)?,
        Format::Csv => emit_csv(out, &report.sizes)?,
    }
    Ok(0)
}

pub fn cmd_simulate(a: &SimulateArgs, out: &mut dyn Write) -> CliResult<i32> {
    let ds = if a.paper_marginals {
        build_paper_marginals(a.seed)
    } else {
        generate(&SimProfile::miniscrew(a.clusters, a.alpha, a.seed))?
    };
    ds.write_csv_path(&a.out)?;
    writeln!(
        out,
        "wrote {} rows in {} clusters to {} (seed {})",
        ds.n_total(),
        ds.n_clusters(),
        a.out.display(),
        a.seed
    )
    .map_err(io_failure)?;
    Ok(0)
}
