//! Argument parsing and subcommand dispatch.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use qsbrown_core::analysis::{self, ConsistencyOptions, StateVar, TestFunction, TestReport};
use qsbrown_core::catalog::{ExpectedSpacing, Preset, PRESETS};
use qsbrown_core::linalg::{self, NuVector};
use qsbrown_core::measure::{self, MeasureSet};
use qsbrown_core::model::{self, ModelSpec, ValidationReport};
use qsbrown_core::rng;
use qsbrown_core::sde::{self, InitialCondition, PathFailure, SimConfig, StepStats};
use qsbrown_core::stats::{self, Moments};
use serde::Serialize;

use crate::error::CliError;
use crate::io;
use crate::report::Envelope;

pub const DEFAULT_SEED: u64 = 42;
const DEFAULT_PARTICLES: usize = 10;

#[derive(Debug, Parser)]
#[command(
    name = "qsbrown",
    version,
    about = "Simulate and check quasi-stationary hierarchical Brownian particle systems"
)]
struct Cli {
    /// Worker threads, 0 for one per core.
    #[arg(long, global = true, env = "QSBROWN_THREADS", default_value_t = 0)]
    threads: usize,
    /// Leave the timestamp out of reports.
    #[arg(long, global = true)]
    no_timestamp: bool,
    /// Report format on standard output.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check the covariance/interaction compatibility conditions.
    Validate(ValidateArgs),
    /// Solve for the boundary drift constants ν.
    Nu(NuArgs),
    /// Tabulate the spacing measures.
    Measure(MeasureArgs),
    /// Draw spacings from one spacing measure.
    Sample(SampleArgs),
    /// Run the particle system and summarize the ensemble.
    Simulate(SimulateArgs),
    /// Quasi-stationarity test from the product spacing law.
    TestQs(TestQsArgs),
    /// Compare a projected K-particle run with a direct J-particle run.
    TestConsistency(ConsistencyArgs),
    /// Check the generator on a test function.
    GeneratorCheck(GeneratorArgs),
    /// Built-in presets.
    Catalog {
        #[command(subcommand)]
        action: CatalogAction,
    },
}

#[derive(Debug, Clone, Args)]
struct ModelArgs {
    /// Preset name (see `catalog list`).
    #[arg(long)]
    preset: Option<String>,
    /// Model JSON file.
    #[arg(long, value_name = "FILE")]
    model: Option<PathBuf>,
    /// Model JSON given inline.
    #[arg(long, value_name = "JSON")]
    model_json: Option<String>,
    /// Number of particles; overrides the model file.
    #[arg(long = "K", value_name = "K")]
    particles: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    mu: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    beta: Option<f64>,
}

struct Model {
    spec: ModelSpec,
    preset: Option<Preset>,
    hash: String,
}

impl ModelArgs {
    fn resolve(&self) -> Result<Model, CliError> {
        let sources = [
            self.preset.is_some(),
            self.model.is_some(),
            self.model_json.is_some(),
        ];
        match sources.iter().filter(|&&s| s).count() {
            1 => {}
            0 => {
                return Err(CliError::Usage(
                    "a model is required: --preset, --model or --model-json".into(),
                ))
            }
            _ => {
                return Err(CliError::Usage(
                    "give exactly one of --preset, --model, --model-json".into(),
                ))
            }
        }
        let (spec, preset) = if let Some(name) = &self.preset {
            let mut params = Vec::new();
            params.extend(self.mu.map(|v| ("mu", v)));
            params.extend(self.beta.map(|v| ("beta", v)));
            let preset = Preset::from_name(name, &params)?;
            let known = PRESETS
                .iter()
                .find(|p| p.name == preset.name())
                .map_or(&[][..], |p| p.parameters);
            if let Some((key, _)) = params
                .iter()
                .find(|(k, _)| !known.iter().any(|(n, _)| n == k))
            {
                return Err(CliError::Usage(format!(
                    "preset {} takes no parameter --{key}",
                    preset.name()
                )));
            }
            let spec = preset.build(self.particles.unwrap_or(DEFAULT_PARTICLES))?;
            (spec, Some(preset))
        } else {
            if self.mu.is_some() || self.beta.is_some() {
                return Err(CliError::Usage(
                    "--mu and --beta only apply to presets".into(),
                ));
            }
            let spec = match (&self.model, &self.model_json) {
                (Some(path), _) => io::read_model(path)?,
                (_, Some(text)) => io::parse_model(text)?,
                _ => unreachable!(),
            };
            let spec = match self.particles {
                Some(0) => return Err(CliError::Usage("K must be positive".into())),
                Some(k) => spec.with_particles(k),
                None => spec,
            };
            (spec, None)
        };
        let hash = io::spec_hash(&spec);
        Ok(Model { spec, preset, hash })
    }
}

#[derive(Debug, Clone, Args)]
struct SimArgs {
    /// Simulation config JSON; flags override its fields.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
    /// Comma-separated record times, snapped to the nearest grid point.
    #[arg(long, value_delimiter = ',', value_name = "T1,T2,...")]
    record: Option<Vec<f64>>,
    #[arg(long)]
    floor_eps: Option<f64>,
    #[arg(long)]
    max_halvings: Option<u32>,
}

impl SimArgs {
    fn resolve(&self, default_paths: usize) -> Result<SimConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => io::read_sim_config(path)?,
            None => SimConfig::new(1e-3, 1.0, default_paths, DEFAULT_SEED),
        };
        let from_file = self.config.is_some();
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.paths {
            cfg.paths = v;
        }
        if let Some(v) = self.dt {
            cfg.dt = v;
        }
        if let Some(v) = self.horizon {
            cfg.horizon = v;
            if !from_file {
                cfg.record_times = vec![0.0, v];
            }
        }
        if let Some(v) = &self.record {
            let mut times = v.clone();
            times.sort_by(f64::total_cmp);
            cfg.record_times = times;
        }
        if let Some(v) = self.floor_eps {
            cfg.floor_eps = v;
        }
        if let Some(v) = self.max_halvings {
            cfg.max_halvings = v;
        }
        cfg.check()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = model::DEFAULT_TOLERANCE)]
    tol: f64,
    /// Also check normalizability, second moment and Fisher information of
    /// every spacing measure.
    #[arg(long)]
    measures: bool,
}

#[derive(Debug, Args)]
struct NuArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Number of constants; defaults to K + d − 1.
    #[arg(long = "M", value_name = "M")]
    count: Option<usize>,
    /// Write the system matrix 2Ã − R̃ as CSV to this file.
    #[arg(long, value_name = "FILE")]
    matrix: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct MeasureArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Number of spacing measures; defaults to K − 1.
    #[arg(long = "M", value_name = "M")]
    count: Option<usize>,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Spacing index.
    #[arg(long, default_value_t = 1)]
    k: usize,
    /// Number of draws.
    #[arg(long, default_value_t = 100_000)]
    n: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Write the draws, one per line, to this file.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    sim: SimArgs,
    /// `qs`, `fixed:x1,x2,...` or `file:PATH` (one path per line).
    #[arg(long, default_value = "qs")]
    init: String,
    /// Constant added to every initial position.
    #[arg(long, allow_negative_numbers = true)]
    shift: Option<f64>,
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    /// Also write every recorded position to paths.csv in the output
    /// directory.
    #[arg(long, requires = "out_dir")]
    paths_csv: bool,
}

#[derive(Debug, Args)]
struct TestQsArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    sim: SimArgs,
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ConsistencyArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    sim: SimArgs,
    /// Number of leading particles compared.
    #[arg(long = "J", value_name = "J")]
    leading: usize,
    /// Drop the ν boundary terms from the direct run.
    #[arg(long)]
    zero_boundary: bool,
    /// Exchange the seeds of the two ensembles.
    #[arg(long)]
    swap_seeds: bool,
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GeneratorArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    sim: SimArgs,
    /// `x_1`, `y_k`, `x_1^2` or a product such as `x_1*y_2`.
    #[arg(long, default_value = "x_1")]
    f: String,
    /// State `(x_1, y_1, ..., y_{K−1})`; defaults to x_1 = 0 and spacing
    /// means.
    #[arg(long, value_name = "S1,S2,...", allow_negative_numbers = true)]
    point: Option<String>,
    /// Run the martingale residual test from the quasi-stationary start
    /// instead of a one-step check at `--point` with step `--dt`.
    #[arg(long)]
    martingale: bool,
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum CatalogAction {
    /// Preset names and parameters.
    List,
    /// A preset's model, ν and closed-form spacing statistics.
    Show {
        name: String,
        #[arg(long = "K", value_name = "K", default_value_t = DEFAULT_PARTICLES)]
        particles: usize,
        #[arg(long, allow_negative_numbers = true)]
        mu: Option<f64>,
        #[arg(long, allow_negative_numbers = true)]
        beta: Option<f64>,
    },
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
    {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: cannot start worker threads: {e}");
            return 2;
        }
    };
    match pool.install(|| dispatch(&cli, &mut std::io::stdout().lock())) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

struct Ctx<'a> {
    timestamp: bool,
    format: Format,
    out: &'a mut dyn Write,
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<i32, CliError> {
    let mut ctx = Ctx {
        timestamp: !cli.no_timestamp,
        format: cli.format,
        out,
    };
    match &cli.command {
        Command::Validate(a) => validate(&mut ctx, a),
        Command::Nu(a) => nu(&mut ctx, a),
        Command::Measure(a) => measures(&mut ctx, a),
        Command::Sample(a) => sample(&mut ctx, a),
        Command::Simulate(a) => simulate(&mut ctx, a),
        Command::TestQs(a) => test_qs(&mut ctx, a),
        Command::TestConsistency(a) => test_consistency(&mut ctx, a),
        Command::GeneratorCheck(a) => generator_check(&mut ctx, a),
        Command::Catalog { action } => catalog_cmd(&mut ctx, action),
    }
}

impl Ctx<'_> {
    fn json_only(&self, command: &str) -> Result<(), CliError> {
        match self.format {
            Format::Json => Ok(()),
            Format::Csv => Err(CliError::Usage(format!(
                "{command} has no CSV report; use --format json"
            ))),
        }
    }

    fn emit<T: Serialize>(
        &mut self,
        envelope: Envelope<T>,
        file: Option<&Path>,
    ) -> Result<(), CliError> {
        let json = envelope.stamped(self.timestamp).to_json();
        if let Some(path) = file {
            fs::write(path, &json)?;
        }
        if self.format == Format::Json {
            self.out.write_all(json.as_bytes())?;
        }
        Ok(())
    }

    fn emit_csv(&mut self, csv: &str) -> Result<(), CliError> {
        if self.format == Format::Csv {
            self.out.write_all(csv.as_bytes())?;
        }
        Ok(())
    }

    /// Writes a test report and maps its verdict onto the exit code.
    fn test_report(
        &mut self,
        command: &'static str,
        model: &Model,
        seed: u64,
        report: TestReport,
        out_dir: Option<&Path>,
    ) -> Result<i32, CliError> {
        for e in report.failures() {
            eprintln!(
                "FAIL {}: observed {} expected {} tolerance {}",
                e.name, e.observed, e.expected, e.tolerance
            );
        }
        let csv = report_csv(&report);
        let pass = report.pass;
        let file = out_dir.map(|d| d.join("report.json"));
        self.emit(
            Envelope::new(command, report)
                .spec_hash(model.hash.clone())
                .seed(seed),
            file.as_deref(),
        )?;
        self.emit_csv(&csv)?;
        Ok(if pass { 0 } else { 1 })
    }
}

fn report_csv(report: &TestReport) -> String {
    let mut s = String::from("name,observed,expected,tolerance,pass\n");
    for e in &report.entries {
        let _ = writeln!(
            s,
            "{},{:.16e},{:.16e},{:.16e},{}",
            e.name, e.observed, e.expected, e.tolerance, e.pass
        );
    }
    s
}

fn prepare_out_dir(dir: Option<&Path>) -> Result<(), CliError> {
    dir.map_or(Ok(()), io::ensure_writable_dir)
}

fn solve_nu(spec: &ModelSpec) -> Result<NuVector, CliError> {
    Ok(linalg::solve_nu(spec, spec.window() - 1)?)
}

#[derive(Serialize)]
struct ValidateResult {
    pass: bool,
    skew_symmetry: ValidationReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    measures: Option<ValidationReport>,
}

fn validate(ctx: &mut Ctx, a: &ValidateArgs) -> Result<i32, CliError> {
    let model = a.model.resolve()?;
    let skew = model::validate_skew_symmetry(&model.spec, a.tol)?;
    let measures = if a.measures && skew.pass {
        let nu = solve_nu(&model.spec)?;
        Some(model::validate_measure_conditions(&model.spec, &nu)?)
    } else {
        None
    };
    let pass = skew.pass && measures.as_ref().is_none_or(|m| m.pass);
    let mut csv = String::from("condition,k,l,lhs,rhs,abs_error,pass\n");
    for e in skew
        .entries
        .iter()
        .chain(measures.iter().flat_map(|m| &m.entries))
    {
        if !e.pass {
            eprintln!(
                "FAIL {} ({}, {}): {} vs {} (error {})",
                e.condition, e.k, e.l, e.lhs, e.rhs, e.abs_error
            );
        }
        let _ = writeln!(
            csv,
            "{},{},{},{:.16e},{:.16e},{:.16e},{}",
            e.condition, e.k, e.l, e.lhs, e.rhs, e.abs_error, e.pass
        );
    }
    let result = ValidateResult {
        pass,
        skew_symmetry: skew,
        measures,
    };
    ctx.emit(
        Envelope::new("validate", result).spec_hash(model.hash),
        None,
    )?;
    ctx.emit_csv(&csv)?;
    Ok(if pass { 0 } else { 1 })
}

#[derive(Serialize)]
struct NuResult {
    count: usize,
    nu: Vec<f64>,
    residual: f64,
}

fn nu(ctx: &mut Ctx, a: &NuArgs) -> Result<i32, CliError> {
    let model = a.model.resolve()?;
    let spec = &model.spec;
    let count = a.count.unwrap_or(spec.window() - 1);
    let nu = linalg::solve_nu(spec, count)?;
    if let Some(path) = &a.matrix {
        let mut csv = String::new();
        for k in 1..=count {
            let row = (1..=count)
                .map(|l| linalg::nu_system_entry(spec, k, l).map(|v| format!("{v:.16e}")))
                .collect::<Result<Vec<_>, _>>()?;
            csv.push_str(&row.join(","));
            csv.push('\n');
        }
        fs::write(path, csv)?;
    }
    let mut csv = String::from("k,nu\n");
    for (k, v) in nu.values.iter().enumerate() {
        let _ = writeln!(csv, "{},{v:.16e}", k + 1);
    }
    let result = NuResult {
        count,
        residual: nu.residual(spec)?,
        nu: nu.values,
    };
    ctx.emit(Envelope::new("nu", result).spec_hash(model.hash), None)?;
    ctx.emit_csv(&csv)?;
    Ok(0)
}

#[derive(Serialize)]
struct MeasureRecord {
    k: usize,
    nu: f64,
    #[serde(rename = "Z")]
    partition: f64,
    mean: f64,
    variance: f64,
    fisher: f64,
    support_window: (f64, f64),
    table_nodes: usize,
    normalization_error: f64,
    interpolation_error: f64,
}

#[derive(Serialize)]
struct MeasureResult {
    measures: Vec<MeasureRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    closed_form: Option<ExpectedSpacing>,
}

fn measures(ctx: &mut Ctx, a: &MeasureArgs) -> Result<i32, CliError> {
    let model = a.model.resolve()?;
    let spec = &model.spec;
    let count = a.count.unwrap_or(spec.particles.saturating_sub(1));
    let nu = linalg::solve_nu(spec, count.max(spec.window() - 1))?;
    let set = MeasureSet::build(&spec.potential, &nu, count)?;
    let records: Vec<MeasureRecord> = set
        .iter()
        .map(|m| MeasureRecord {
            k: m.index,
            nu: m.nu,
            partition: m.partition,
            mean: m.mean,
            variance: m.variance,
            fisher: m.fisher,
            support_window: m.window,
            table_nodes: m.table().len(),
            normalization_error: m.normalization_error,
            interpolation_error: m.interpolation_error,
        })
        .collect();
    let mut csv = String::from("k,nu,Z,mean,variance,fisher,window_lo,window_hi\n");
    for r in &records {
        let _ = writeln!(
            csv,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.k,
            r.nu,
            r.partition,
            r.mean,
            r.variance,
            r.fisher,
            r.support_window.0,
            r.support_window.1
        );
    }
    // Closed forms hold for ν = 0, which is what the presets produce.
    let closed_form = model.preset.and_then(|p| p.expected_spacing());
    let result = MeasureResult {
        measures: records,
        closed_form,
    };
    ctx.emit(Envelope::new("measure", result).spec_hash(model.hash), None)?;
    ctx.emit_csv(&csv)?;
    Ok(0)
}

#[derive(Serialize)]
struct SampleResult {
    k: usize,
    n: usize,
    mean: f64,
    variance: f64,
    expected_mean: f64,
    expected_variance: f64,
    ks_statistic: f64,
    ks_critical: f64,
}

fn sample(ctx: &mut Ctx, a: &SampleArgs) -> Result<i32, CliError> {
    ctx.json_only("sample")?;
    let model = a.model.resolve()?;
    let spec = &model.spec;
    if a.k == 0 || a.n == 0 {
        return Err(CliError::Usage("--k and --n must be positive".into()));
    }
    let nu = linalg::solve_nu(spec, a.k.max(spec.window() - 1))?;
    let m = measure::build_measure(&spec.potential, nu.get(a.k))?;
    let mut rng = rng::path_rng(a.seed, 0);
    let draws: Vec<f64> = (0..a.n).map(|_| m.sample(&mut rng)).collect();
    if let Some(path) = &a.out {
        let mut w = BufWriter::new(fs::File::create(path)?);
        for v in &draws {
            writeln!(w, "{v:.16e}")?;
        }
        w.flush()?;
    }
    let mom = Moments::of(&draws);
    let sorted = stats::sorted(&draws);
    let cdf = m.quadrature_cdf_sorted(&sorted);
    let result = SampleResult {
        k: a.k,
        n: a.n,
        mean: mom.mean,
        variance: mom.variance,
        expected_mean: m.mean,
        expected_variance: m.variance,
        ks_statistic: stats::ks_statistic_sorted(&cdf),
        ks_critical: stats::ks_critical_one_sample(a.n),
    };
    ctx.emit(
        Envelope::new("sample", result)
            .spec_hash(model.hash)
            .seed(a.seed),
        None,
    )?;
    Ok(0)
}

fn initial_condition(
    spec: &str,
    shift: Option<f64>,
    particles: usize,
) -> Result<InitialCondition, CliError> {
    let init = if spec == "qs" {
        InitialCondition::QuasiStationary
    } else if let Some(list) = spec.strip_prefix("fixed:") {
        InitialCondition::Fixed(io::parse_list(list).map_err(CliError::Usage)?)
    } else if let Some(path) = spec.strip_prefix("file:") {
        InitialCondition::PerPath(io::read_positions(Path::new(path), particles)?)
    } else {
        return Err(CliError::Usage(format!(
            "unknown --init {spec:?}; use qs, fixed:x1,x2,... or file:PATH"
        )));
    };
    Ok(match shift {
        Some(c) => InitialCondition::Shifted(Box::new(init), c),
        None => init,
    })
}

#[derive(Serialize)]
struct CoordinateSummary {
    name: String,
    mean: f64,
    variance: f64,
    min: f64,
    max: f64,
}

impl CoordinateSummary {
    fn of(name: String, xs: &[f64]) -> Self {
        let m = Moments::of(xs);
        Self {
            name,
            mean: m.mean,
            variance: m.variance,
            min: xs.iter().copied().fold(f64::INFINITY, f64::min),
            max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Serialize)]
struct RecordSummary {
    time: f64,
    coordinates: Vec<CoordinateSummary>,
}

#[derive(Serialize)]
struct SimulationSummary {
    particles: usize,
    paths: usize,
    failed_paths: Vec<PathFailure>,
    step_stats: StepStats,
    config: SimConfig,
    records: Vec<RecordSummary>,
}

fn simulate(ctx: &mut Ctx, a: &SimulateArgs) -> Result<i32, CliError> {
    ctx.json_only("simulate")?;
    prepare_out_dir(a.out_dir.as_deref())?;
    let model = a.model.resolve()?;
    let spec = &model.spec;
    let cfg = a.sim.resolve(10_000)?;
    let init = initial_condition(&a.init, a.shift, spec.particles)?;
    let nu = solve_nu(spec)?;
    let ensemble = sde::simulate(spec, &nu, &init, &cfg)?;

    let k = ensemble.particles;
    let records = ensemble
        .times
        .iter()
        .enumerate()
        .map(|(r, &time)| {
            let mut coordinates: Vec<CoordinateSummary> = (1..=k)
                .map(|i| CoordinateSummary::of(format!("x_{i}"), &ensemble.coordinate(r, i)))
                .collect();
            coordinates.extend(
                (1..k).map(|i| CoordinateSummary::of(format!("y_{i}"), &ensemble.spacing(r, i))),
            );
            RecordSummary { time, coordinates }
        })
        .collect();
    if a.paths_csv {
        let dir = a.out_dir.as_deref().expect("clap requires --out-dir");
        write_paths_csv(&dir.join("paths.csv"), &ensemble)?;
    }
    let summary = SimulationSummary {
        particles: k,
        paths: ensemble.len(),
        failed_paths: ensemble.failures.clone(),
        step_stats: ensemble.stats,
        config: cfg.clone(),
        records,
    };
    let file = a.out_dir.as_ref().map(|d| d.join("summary.json"));
    ctx.emit(
        Envelope::new("simulate", summary)
            .spec_hash(model.hash)
            .seed(cfg.seed),
        file.as_deref(),
    )?;
    Ok(0)
}

fn write_paths_csv(path: &Path, ensemble: &sde::PathEnsemble) -> Result<(), CliError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write!(w, "path,time")?;
    for k in 1..=ensemble.particles {
        write!(w, ",x_{k}")?;
    }
    writeln!(w)?;
    for (row, &p) in ensemble.paths.iter().enumerate() {
        for (r, &t) in ensemble.times.iter().enumerate() {
            write!(w, "{p},{t:.16e}")?;
            for v in ensemble.state(r, row) {
                write!(w, ",{v:.16e}")?;
            }
            writeln!(w)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn test_qs(ctx: &mut Ctx, a: &TestQsArgs) -> Result<i32, CliError> {
    prepare_out_dir(a.out_dir.as_deref())?;
    let model = a.model.resolve()?;
    let cfg = a.sim.resolve(10_000)?;
    let nu = solve_nu(&model.spec)?;
    let ensemble = sde::simulate(&model.spec, &nu, &InitialCondition::QuasiStationary, &cfg)?;
    let report = analysis::test_quasi_stationarity(&ensemble, &model.spec, &nu)?;
    ctx.test_report("test-qs", &model, cfg.seed, report, a.out_dir.as_deref())
}

fn test_consistency(ctx: &mut Ctx, a: &ConsistencyArgs) -> Result<i32, CliError> {
    prepare_out_dir(a.out_dir.as_deref())?;
    let model = a.model.resolve()?;
    let cfg = a.sim.resolve(10_000)?;
    let nu = solve_nu(&model.spec)?;
    let options = ConsistencyOptions {
        zero_boundary: a.zero_boundary,
        swap_seeds: a.swap_seeds,
    };
    let report = analysis::test_consistency(&model.spec, &nu, a.leading, &cfg, options)?;
    ctx.test_report(
        "test-consistency",
        &model,
        cfg.seed,
        report,
        a.out_dir.as_deref(),
    )
}

/// Parses `x_1`, `y_k`, `x_1^2` and products `a*b`.
pub fn parse_test_function(s: &str) -> Result<TestFunction, CliError> {
    fn var(s: &str) -> Result<StateVar, CliError> {
        let s = s.trim();
        if s == "x_1" || s == "x1" {
            return Ok(StateVar::X1);
        }
        s.strip_prefix("y_")
            .or_else(|| s.strip_prefix('y'))
            .and_then(|k| k.parse::<usize>().ok())
            .filter(|&k| k > 0)
            .map(StateVar::Y)
            .ok_or_else(|| CliError::Usage(format!("unknown state variable {s:?}; use x_1 or y_k")))
    }
    if let Some(base) = s.strip_suffix("^2") {
        let v = var(base)?;
        return Ok(TestFunction::Quadratic { a: v, b: v });
    }
    if let Some((l, r)) = s.split_once('*') {
        return Ok(TestFunction::Quadratic {
            a: var(l)?,
            b: var(r)?,
        });
    }
    Ok(TestFunction::Coordinate { var: var(s)? })
}

fn generator_check(ctx: &mut Ctx, a: &GeneratorArgs) -> Result<i32, CliError> {
    prepare_out_dir(a.out_dir.as_deref())?;
    let model = a.model.resolve()?;
    let spec = &model.spec;
    let f = parse_test_function(&a.f)?;
    if f.max_slot() >= spec.particles {
        return Err(CliError::Usage(format!(
            "{} is not a coordinate of a {}-particle state",
            f.label(),
            spec.particles
        )));
    }
    let nu = solve_nu(spec)?;
    let (report, seed) = if a.martingale {
        let cfg = a.sim.resolve(100_000)?;
        let report = analysis::test_martingale_residual(
            spec,
            &nu,
            &f,
            &cfg,
            &InitialCondition::QuasiStationary,
        )?;
        (report, cfg.seed)
    } else {
        let cfg = a.sim.resolve(100_000)?;
        let point = match &a.point {
            Some(p) => io::parse_list(p).map_err(CliError::Usage)?,
            None => {
                let set = MeasureSet::for_spec(spec, &nu)?;
                std::iter::once(0.0)
                    .chain(set.iter().map(|m| m.mean))
                    .collect()
            }
        };
        if point.len() != spec.particles {
            return Err(CliError::Usage(format!(
                "--point has {} entries, expected K = {}",
                point.len(),
                spec.particles
            )));
        }
        let report =
            analysis::test_generator_one_step(spec, &nu, &f, &point, cfg.dt, cfg.paths, cfg.seed)?;
        (report, cfg.seed)
    };
    ctx.test_report(
        "generator-check",
        &model,
        seed,
        report,
        a.out_dir.as_deref(),
    )
}

#[derive(Serialize)]
struct PresetListing {
    name: &'static str,
    summary: &'static str,
    parameters: serde_json::Map<String, serde_json::Value>,
}

#[derive(Serialize)]
struct PresetDetail {
    preset: Preset,
    model: ModelSpec,
    nu: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    closed_form: Option<ExpectedSpacing>,
}

fn catalog_cmd(ctx: &mut Ctx, action: &CatalogAction) -> Result<i32, CliError> {
    match action {
        CatalogAction::List => {
            let listing: Vec<PresetListing> = PRESETS
                .iter()
                .map(|p| PresetListing {
                    name: p.name,
                    summary: p.summary,
                    parameters: p
                        .parameters
                        .iter()
                        .map(|(k, v)| ((*k).to_string(), serde_json::json!(v)))
                        .collect(),
                })
                .collect();
            let mut csv = String::from("name,summary\n");
            for p in &listing {
                let _ = writeln!(csv, "{},\"{}\"", p.name, p.summary);
            }
            ctx.emit(Envelope::new("catalog list", listing), None)?;
            ctx.emit_csv(&csv)?;
            Ok(0)
        }
        CatalogAction::Show {
            name,
            particles,
            mu,
            beta,
        } => {
            ctx.json_only("catalog show")?;
            let model = ModelArgs {
                preset: Some(name.clone()),
                model: None,
                model_json: None,
                particles: Some(*particles),
                mu: *mu,
                beta: *beta,
            }
            .resolve()?;
            let preset = model.preset.expect("resolved from a preset");
            let nu = solve_nu(&model.spec)?;
            let detail = PresetDetail {
                preset,
                closed_form: preset.expected_spacing(),
                nu: nu.values,
                model: model.spec,
            };
            ctx.emit(
                Envelope::new("catalog show", detail).spec_hash(model.hash),
                None,
            )?;
            Ok(0)
        }
    }
}
