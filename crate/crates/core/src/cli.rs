//! Commands behind the `exirt` binary.
//!
//! Every command resolves a [`RunConfig`] (flags over config file over
//! defaults), writes its artifacts into the output directory and finishes
//! with `summary.json` indexing what it wrote. Exit codes: 0 success, 1 domain
//! failure, 2 I/O or usage failure.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::ingest::{self, LogFormat, ParsedLog, StudentExerciseSummary, ValidationReport};
use crate::irt::{self, FitConfig, FitResult, IrtError, ItemParameters, ThetaGrid};
use crate::matrix::{build_matrices, Grouping, MatrixError, DEFAULT_THRESHOLD};
use crate::metrics::{self, ExerciseMetrics, MetricsTable, RatioPooling};
use crate::quality::{self, ClassifierConfig, QualityReport};
use crate::schema::{self, SCHEMA_VERSION};
use crate::sim::{self, Scenario, SimItem, SimulationOutput};

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "EXIRT_OUT";
const FALLBACK_OUT: &str = "exirt-out";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CliError {
    /// Exit code 1.
    Domain(String),
    /// Exit code 2.
    Io(String),
    /// Exit code 2.
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Domain(_) => 1,
            CliError::Io(_) | CliError::Usage(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Domain(m) | CliError::Io(m) | CliError::Usage(m) => m,
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

/// Ability grid for curve tables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurveGrid {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl Default for CurveGrid {
    fn default() -> Self {
        CurveGrid { min: -4.0, max: 4.0, step: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub inputs: Vec<PathBuf>,
    /// Unset means `$EXIRT_OUT`, then `exirt-out`.
    pub out: Option<PathBuf>,
    pub threshold: f64,
    /// JSON file holding a [`Grouping`]; unset groups by module id.
    pub grouping: Option<PathBuf>,
    pub fit: FitConfig,
    pub table2_compat: bool,
    /// When set, overrides the scenario seed and `fit.seed`.
    pub seed: Option<u64>,
    pub format: OutputFormat,
    pub pooling: RatioPooling,
    /// Metrics file joined into the quality report by `classify`.
    pub metrics: Option<PathBuf>,
    pub curves: CurveGrid,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            inputs: Vec::new(),
            out: None,
            threshold: DEFAULT_THRESHOLD,
            grouping: None,
            fit: FitConfig::default(),
            table2_compat: false,
            seed: None,
            format: OutputFormat::Csv,
            pooling: RatioPooling::Pooled,
            metrics: None,
            curves: CurveGrid::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::Usage(format!("config schema_version {}, expected {SCHEMA_VERSION}", self.schema_version)));
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(CliError::Usage(format!("threshold must lie in (0, 1], got {}", self.threshold)));
        }
        if self.inputs.iter().any(|p| p.as_os_str().is_empty()) {
            return Err(CliError::Usage("empty input path".into()));
        }
        if self.out.as_ref().is_some_and(|p| p.as_os_str().is_empty()) {
            return Err(CliError::Usage("empty output path".into()));
        }
        let c = self.curves;
        if !(c.step > 0.0 && c.min < c.max && c.min.is_finite() && c.max.is_finite()) {
            return Err(CliError::Usage("curve grid needs min < max and step > 0".into()));
        }
        self.fit.validate().map_err(|e| CliError::Usage(e.to_string()))
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out
            .clone()
            .or_else(|| std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(FALLBACK_OUT))
    }

    fn classifier(&self) -> ClassifierConfig {
        ClassifierConfig { table2_compat: self.table2_compat }
    }

    fn grid(&self) -> Vec<f64> {
        ThetaGrid::with_step(self.curves.min, self.curves.max, self.curves.step).values()
    }
}

#[derive(Parser, Debug)]
#[command(name = "exirt", version, about = "Exercise difficulty metrics and 2PL calibration from interaction logs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Flags {
    /// Input file; repeat for several.
    #[arg(long, global = true)]
    pub input: Vec<PathBuf>,
    /// Output directory [env: EXIRT_OUT]
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Dichotomization threshold on the correct-attempt ratio.
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
    /// JSON grouping of exercises into calibration groups.
    #[arg(long, global = true)]
    pub grouping: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Treat b < 0 as Easy instead of b < -1.
    #[arg(long = "table2-compat", global = true)]
    pub table2_compat: bool,
    #[arg(long, global = true, value_enum)]
    pub format: Option<OutputFormat>,
    /// Metrics file to join into the quality report (classify).
    #[arg(long, global = true)]
    pub metrics: Option<PathBuf>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Check an event log and write validation.json.
    Validate,
    /// Per-exercise dl, hr, ir and band.
    Metrics,
    /// Calibrate the 2PL model per group.
    Fit,
    /// Label parameter files and write the quality report.
    Classify,
    /// Generate a synthetic log and truth files from a scenario.
    Simulate,
    /// validate, metrics, fit, classify (and recovery for scenarios).
    Pipeline,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Metrics => "metrics",
            Command::Fit => "fit",
            Command::Classify => "classify",
            Command::Simulate => "simulate",
            Command::Pipeline => "pipeline",
        }
    }
}

/// Flags over config file over defaults.
pub fn resolve_config(flags: &Flags) -> Result<RunConfig, CliError> {
    let mut cfg = match &flags.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    if !flags.input.is_empty() {
        cfg.inputs = flags.input.clone();
    }
    if flags.out.is_some() {
        cfg.out = flags.out.clone();
    }
    if let Some(t) = flags.threshold {
        cfg.threshold = t;
    }
    if flags.grouping.is_some() {
        cfg.grouping = flags.grouping.clone();
    }
    if flags.seed.is_some() {
        cfg.seed = flags.seed;
    }
    if flags.table2_compat {
        cfg.table2_compat = true;
    }
    if let Some(f) = flags.format {
        cfg.format = f;
    }
    if flags.metrics.is_some() {
        cfg.metrics = flags.metrics.clone();
    }
    if let Some(seed) = cfg.seed {
        cfg.fit.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Files written by one command, relative to the output directory.
pub struct Outputs {
    dir: PathBuf,
    written: BTreeSet<String>,
}

impl Outputs {
    pub fn create(dir: PathBuf) -> Result<Self, CliError> {
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        Ok(Outputs { dir, written: BTreeSet::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
        self.written.insert(name.to_string());
        Ok(())
    }

    fn write_with(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    ) -> Result<(), CliError> {
        let mut buf = Vec::new();
        f(&mut buf).map_err(|e| io_err(&self.dir.join(name), e))?;
        self.write(name, &buf)
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    fn index(&self) -> Vec<String> {
        self.written.iter().cloned().collect()
    }
}

/// Parses arguments and runs the command, returning the process exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("exirt {}: {}", cli.command.name(), e.message());
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = resolve_config(&cli.flags)?;
    let mut out = Outputs::create(cfg.out_dir())?;
    // the tree is the output directory itself, so the echo does not name it
    let echo = RunConfig { out: Some(PathBuf::from(".")), ..cfg.clone() };
    out.write_json("effective_config.json", &echo)?;
    let mut summary = BTreeMap::new();
    let result = match cli.command {
        Command::Validate => cmd_validate(&cfg, &mut out, &mut summary),
        Command::Metrics => cmd_metrics(&cfg, &mut out, &mut summary),
        Command::Fit => cmd_fit(&cfg, &mut out, &mut summary),
        Command::Classify => cmd_classify(&cfg, &mut out, &mut summary),
        Command::Simulate => cmd_simulate(&cfg, &mut out, &mut summary),
        Command::Pipeline => cmd_pipeline(&cfg, &mut out, &mut summary),
    };
    summary.insert("schema_version".into(), json!(SCHEMA_VERSION));
    summary.insert("command".into(), json!(cli.command.name()));
    summary.insert("exit_code".into(), json!(result.as_ref().err().map_or(0, CliError::exit_code)));
    if let Err(e) = &result {
        summary.insert("error".into(), json!(e.message()));
    }
    let mut files = out.index();
    files.push("summary.json".into());
    summary.insert("outputs".into(), json!(files));
    // an I/O failure may have left the directory unusable; keep the first error
    let written = out.write_json("summary.json", &summary);
    result.and(written)
}

type Summary = BTreeMap<String, Value>;

fn single_input(cfg: &RunConfig) -> Result<&Path, CliError> {
    match cfg.inputs.as_slice() {
        [one] => Ok(one),
        [] => Err(CliError::Usage("--input is required".into())),
        _ => Err(CliError::Usage("expected exactly one --input".into())),
    }
}

pub fn load_log(path: &Path) -> Result<ParsedLog, CliError> {
    let format = LogFormat::from_path(path)
        .ok_or_else(|| CliError::Usage(format!("{}: expected a .csv or .jsonl log", path.display())))?;
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    ingest::parse_event_log(std::io::BufReader::new(file), format).map_err(|e| io_err(path, e))
}

fn stage_validate(parsed: &ParsedLog, out: &mut Outputs, summary: &mut Summary) -> Result<ValidationReport, CliError> {
    let report = ingest::validate_log(&parsed.events).with_row_errors(&parsed.errors);
    out.write_json("validation.json", &report)?;
    println!(
        "validate: {} events, {} students, {} exercises, {} violations",
        report.events,
        report.distinct_students,
        report.distinct_exercises,
        report.violations.len()
    );
    summary.insert(
        "validation".into(),
        json!({ "events": report.events, "violations": report.violations.len(), "warnings": report.warnings.len() }),
    );
    if report.is_clean() {
        Ok(report)
    } else {
        Err(CliError::Domain(format!("{} violations; see validation.json", report.violations.len())))
    }
}

/// Loads a log and refuses to continue unless it validates cleanly.
fn valid_summaries(cfg: &RunConfig, out: &mut Outputs, summary: &mut Summary) -> Result<Vec<StudentExerciseSummary>, CliError> {
    let parsed = load_log(single_input(cfg)?)?;
    stage_validate(&parsed, out, summary)?;
    if parsed.events.is_empty() {
        return Err(CliError::Domain("log contains no events".into()));
    }
    Ok(ingest::aggregate(&parsed.events))
}

fn cmd_validate(cfg: &RunConfig, out: &mut Outputs, summary: &mut Summary) -> Result<(), CliError> {
    let parsed = load_log(single_input(cfg)?)?;
    stage_validate(&parsed, out, summary).map(|_| ())
}

fn stage_metrics(
    summaries: &[StudentExerciseSummary],
    cfg: &RunConfig,
    out: &mut Outputs,
    summary: &mut Summary,
) -> Result<MetricsTable, CliError> {
    if summaries.is_empty() {
        return Err(CliError::Domain("log contains no events".into()));
    }
    let table = metrics::compute_metrics(summaries, cfg.pooling);
    match cfg.format {
        OutputFormat::Csv => out.write_with("metrics.csv", |w| metrics::write_metrics_csv(w, &table))?,
        OutputFormat::Json => out.write_json("metrics.json", &table)?,
    }
    if !table.warnings.is_empty() {
        eprintln!("metrics: {} warnings; see summary.json", table.warnings.len());
    }
    println!("metrics: {} exercises", table.rows.len());
    summary.insert("metrics".into(), json!({ "exercises": table.rows.len(), "warnings": table.warnings }));
    Ok(table)
}

fn cmd_metrics(cfg: &RunConfig, out: &mut Outputs, summary: &mut Summary) -> Result<(), CliError> {
    let summaries = valid_summaries(cfg, out, summary)?;
    stage_metrics(&summaries, cfg, out, summary).map(|_| ())
}

fn load_grouping(cfg: &RunConfig) -> Result<Grouping, CliError> {
    match &cfg.grouping {
        None => Ok(Grouping::by_module()),
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
        }
    }
}

pub struct GroupFit {
    pub group_id: String,
    pub fit: FitResult,
}

fn stage_fit(
    summaries: &[StudentExerciseSummary],
    cfg: &RunConfig,
    out: &mut Outputs,
    summary: &mut Summary,
) -> Result<Vec<GroupFit>, CliError> {
    let grouping = load_grouping(cfg)?;
    let set = build_matrices(summaries, &grouping, cfg.threshold).map_err(|e| match e {
        MatrixError::UnmappedExercises(ids) => CliError::Domain(format!("exercises not mapped to any group: {}", ids.join(", "))),
        other => CliError::Domain(other.to_string()),
    })?;
    let grid = cfg.grid();
    let mut fits = Vec::new();
    let mut skipped = BTreeMap::new();
    for matrix in &set.matrices {
        let fit = match irt::fit_2pl(matrix, &cfg.fit) {
            Ok(fit) => fit,
            Err(IrtError::DegenerateMatrix(why)) => {
                skipped.insert(matrix.group_id.clone(), why);
                continue;
            }
            Err(e) => return Err(CliError::Domain(e.to_string())),
        };
        let stem = schema::file_stem(&matrix.group_id);
        let notes = vec![format!("group={}", matrix.group_id), format!("threshold={}", cfg.threshold)];
        match cfg.format {
            OutputFormat::Csv => {
                out.write_with(&format!("params_{stem}.csv"), |w| irt::write_params_csv(w, &fit.items, &notes))?
            }
            OutputFormat::Json => out.write_json(
                &format!("params_{stem}.json"),
                &json!({
                    "schema_version": SCHEMA_VERSION,
                    "group_id": matrix.group_id,
                    "notes": notes,
                    "items": fit.items,
                }),
            )?,
        }
        let curves = irt::sample_curves(&fit.items, &grid).map_err(|e| CliError::Domain(e.to_string()))?;
        out.write_with(&format!("curves_{stem}.csv"), |w| irt::write_curves_csv(w, &curves))?;
        out.write_with(&format!("abilities_{stem}.csv"), |w| irt::write_abilities_csv(w, &fit.abilities))?;
        out.write_json(
            &format!("diagnostics_{stem}.json"),
            &json!({ "schema_version": SCHEMA_VERSION, "fit_config": cfg.fit, "diagnostics": fit.diagnostics }),
        )?;
        let d = &fit.diagnostics;
        println!(
            "fit {}: {} items, {} students, {} iterations, converged={}, loglik={:.6}",
            d.group_id, d.n_items_used, d.n_students_used, d.n_iterations, d.converged, d.log_likelihood
        );
        fits.push(GroupFit { group_id: matrix.group_id.clone(), fit });
    }
    let groups: Vec<Value> = fits
        .iter()
        .map(|g| {
            let d = &g.fit.diagnostics;
            json!({
                "group_id": g.group_id,
                "converged": d.converged,
                "n_iterations": d.n_iterations,
                "log_likelihood": d.log_likelihood,
                "degenerate_items": d.degenerate_items,
            })
        })
        .collect();
    summary.insert(
        "fit".into(),
        json!({ "groups": groups, "skipped_groups": skipped, "empty_groups": set.empty_groups }),
    );
    for (g, why) in &skipped {
        eprintln!("warning: group {g} not fitted: {why}");
    }
    if fits.is_empty() {
        let listed: Vec<String> = skipped.iter().map(|(g, why)| format!("{g} ({why})")).collect();
        return Err(CliError::Domain(format!("no fittable group: {}", listed.join("; "))));
    }
    Ok(fits)
}

fn cmd_fit(cfg: &RunConfig, out: &mut Outputs, summary: &mut Summary) -> Result<(), CliError> {
    let summaries = valid_summaries(cfg, out, summary)?;
    stage_fit(&summaries, cfg, out, summary).map(|_| ())
}

fn stage_classify(
    params: &[ItemParameters],
    metrics_rows: &[ExerciseMetrics],
    cfg: &RunConfig,
    out: &mut Outputs,
    summary: &mut Summary,
) -> Result<QualityReport, CliError> {
    if params.is_empty() {
        return Err(CliError::Domain("no item parameters to classify".into()));
    }
    let classifier = cfg.classifier();
    let verdicts: Vec<_> = params.iter().map(|p| quality::classify_quality(p, classifier)).collect();
    let report = quality::quality_report(&verdicts, metrics_rows, params, classifier)
        .map_err(|e| CliError::Domain(e.to_string()))?;
    match cfg.format {
        OutputFormat::Csv => out.write_with("quality_report.csv", |w| quality::write_report_csv(w, &report))?,
        OutputFormat::Json => out.write_json("quality_report.json", &report)?,
    }
    println!("classify: {} items, {} poor", report.summary.n_items, report.summary.n_poor);
    summary.insert("classify".into(), serde_json::to_value(&report.summary).expect("summary serializes"));
    Ok(report)
}

fn check_version(found: Option<u64>, path: &Path) -> Result<(), CliError> {
    match found {
        Some(v) if v != u64::from(SCHEMA_VERSION) => Err(CliError::Domain(format!(
            "{}: schema_version {v}, expected {SCHEMA_VERSION}",
            path.display()
        ))),
        _ => Ok(()),
    }
}

fn is_json(path: &Path) -> bool {
    path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

pub fn read_params_file(path: &Path) -> Result<Vec<ItemParameters>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let parsed = if is_json(path) {
        let value: Value = serde_json::from_str(&text).map_err(|e| CliError::Domain(format!("{}: {e}", path.display())))?;
        check_version(value.get("schema_version").and_then(Value::as_u64), path)?;
        irt::read_params_json(text.as_bytes())
    } else {
        check_version(schema::csv_schema_version(&text).map(u64::from), path)?;
        irt::read_params_csv(text.as_bytes())
    };
    parsed.map_err(|e| CliError::Domain(format!("{}: {e}", path.display())))
}

pub fn read_metrics_file(path: &Path) -> Result<Vec<ExerciseMetrics>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let domain = |e: &dyn std::fmt::Display| CliError::Domain(format!("{}: {e}", path.display()));
    if is_json(path) {
        let table: MetricsTable = serde_json::from_str(&text).map_err(|e| domain(&e))?;
        check_version(Some(u64::from(table.schema_version)), path)?;
        Ok(table.rows)
    } else {
        check_version(schema::csv_schema_version(&text).map(u64::from), path)?;
        metrics::read_metrics_csv(text.as_bytes()).map_err(|e| domain(&e))
    }
}

fn cmd_classify(cfg: &RunConfig, out: &mut Outputs, summary: &mut Summary) -> Result<(), CliError> {
    if cfg.inputs.is_empty() {
        return Err(CliError::Usage("--input parameter file(s) required".into()));
    }
    let mut params = Vec::new();
    for path in &cfg.inputs {
        params.extend(read_params_file(path)?);
    }
    let metrics_rows = match &cfg.metrics {
        Some(path) => read_metrics_file(path)?,
        None => Vec::new(),
    };
    stage_classify(&params, &metrics_rows, cfg, out, summary).map(|_| ())
}

fn load_scenario(path: &Path, cfg: &RunConfig) -> Result<Scenario, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut scenario: Scenario =
        serde_json::from_str(&text).map_err(|e| CliError::Domain(format!("{}: invalid scenario: {e}", path.display())))?;
    if let Some(seed) = cfg.seed {
        scenario.seed = seed;
    }
    Ok(scenario)
}

const TRUTH_ITEMS_HEADER: [&str; 4] = ["item_id", "module_id", "a", "b"];

fn write_truth_items(mut w: &mut Vec<u8>, items: &[SimItem], seed: u64) -> std::io::Result<()> {
    schema::write_csv_preamble(&mut w, "truth_items", &[format!("seed={seed}")])?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(TRUTH_ITEMS_HEADER)?;
    for i in items {
        csv.write_record([i.item_id.clone(), i.module_id.clone(), i.a.to_string(), i.b.to_string()])?;
    }
    csv.flush()
}

fn write_truth_abilities(mut w: &mut Vec<u8>, sim: &SimulationOutput, seed: u64) -> std::io::Result<()> {
    schema::write_csv_preamble(&mut w, "truth_abilities", &[format!("seed={seed}")])?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["student_id", "theta"])?;
    for s in &sim.cohort {
        csv.write_record([s.student_id.clone(), s.theta.to_string()])?;
    }
    csv.flush()
}

fn stage_simulate(scenario: &Scenario, out: &mut Outputs, summary: &mut Summary) -> Result<SimulationOutput, CliError> {
    let sim = scenario.run().map_err(|e| CliError::Domain(e.to_string()))?;
    out.write_with("events.csv", |w| ingest::write_event_log(w, &sim.log.events, LogFormat::Csv))?;
    out.write_with("truth_items.csv", |w| write_truth_items(w, &sim.items, scenario.seed))?;
    out.write_with("truth_abilities.csv", |w| write_truth_abilities(w, &sim, scenario.seed))?;
    let hints = sim.log.events.iter().filter(|e| e.kind == ingest::EventKind::Hint).count();
    println!(
        "simulate: seed {}, {} students, {} items, {} events ({} hints)",
        scenario.seed,
        sim.cohort.len(),
        sim.items.len(),
        sim.log.events.len(),
        hints
    );
    summary.insert(
        "simulation".into(),
        json!({
            "seed": scenario.seed,
            "n_students": sim.cohort.len(),
            "n_items": sim.items.len(),
            "n_events": sim.log.events.len(),
            "n_hints": hints,
        }),
    );
    Ok(sim)
}

fn cmd_simulate(cfg: &RunConfig, out: &mut Outputs, summary: &mut Summary) -> Result<(), CliError> {
    let scenario = load_scenario(single_input(cfg)?, cfg)?;
    stage_simulate(&scenario, out, summary).map(|_| ())
}

fn stage_recovery(truth: &[SimItem], fits: &[GroupFit], out: &mut Outputs, summary: &mut Summary) -> Result<(), CliError> {
    let fitted: BTreeMap<&str, &ItemParameters> = fits
        .iter()
        .flat_map(|g| &g.fit.items)
        .filter(|p| !p.degenerate)
        .map(|p| (p.item_id.as_str(), p))
        .collect();
    let (mut t, mut f) = (Vec::new(), Vec::new());
    for item in truth {
        if let Some(p) = fitted.get(item.item_id.as_str()) {
            t.push(item.params());
            f.push((*p).clone());
        }
    }
    let excluded = truth.len() - t.len();
    let stats = sim::recovery_report(&t, &f).map_err(|e| CliError::Domain(e.to_string()))?;
    out.write_json(
        "recovery.json",
        &json!({ "schema_version": SCHEMA_VERSION, "excluded_items": excluded, "stats": stats }),
    )?;
    println!(
        "recovery: {} items, rmse(a)={:.4} rmse(b)={:.4}",
        stats.n_items, stats.a.rmse, stats.b.rmse
    );
    summary.insert("recovery".into(), json!({ "excluded_items": excluded, "stats": stats }));
    Ok(())
}

fn cmd_pipeline(cfg: &RunConfig, out: &mut Outputs, summary: &mut Summary) -> Result<(), CliError> {
    let input = single_input(cfg)?;
    let (parsed, truth) = if is_json(input) {
        let scenario = load_scenario(input, cfg)?;
        let sim = stage_simulate(&scenario, out, summary)?;
        (ParsedLog { events: sim.log.events, errors: Vec::new() }, Some(sim.items))
    } else {
        (load_log(input)?, None)
    };
    stage_validate(&parsed, out, summary)?;
    let summaries = ingest::aggregate(&parsed.events);
    let table = stage_metrics(&summaries, cfg, out, summary)?;
    let fits = stage_fit(&summaries, cfg, out, summary)?;
    let params: Vec<ItemParameters> = fits.iter().flat_map(|g| g.fit.items.iter().cloned()).collect();
    stage_classify(&params, &table.rows, cfg, out, summary)?;
    if let Some(truth) = truth {
        stage_recovery(&truth, &fits, out, summary)?;
    }
    Ok(())
}
