use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use survatt::aalen::{slope_test, SlopeWeight};
use survatt::att::{bootstrap_band, estimate_att, AttConfig, AttEstimator, BootstrapConfig};
use survatt::counterfactual::{build_manipulated_panel, impute_counterfactual, CounterfactualConfig, TreatmentTiming};
use survatt::cox::fit_cox;
use survatt::curve::CumulativeCurve;
use survatt::design::{Formula, TREATMENT};
use survatt::panel::{fmt_num, load_panel, locf_expand, read_headers, write_panel, Panel, Schema};
use survatt::plot::{panels_svg, step_plot_svg, PlotPanel};
use survatt::simulate::{build_full_counterfactual, generate_cohort, GeneratorParams, Regime, RegimeConfig};
use survatt::study::{replicate_study, Analysis, StudyConfig};
use survatt::weights::{fit_weights, msm_additive, Truncation, WeightConfig};
use survatt::Error;

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  2  usage error (bad flags, missing seed, clashing paths)
  3  configuration error
  4  i/o error
  5  invalid input data
  6  estimation failure
  7  no treated person-time
  8  too many failed replicates

Failures print one line to stderr: error: kind=<kind> message=\"...\"";

#[derive(Parser)]
#[command(name = "survatt", version, about = "Treatment effects on the treated for survival outcomes", after_help = EXIT_CODES)]
struct Cli {
    /// Worker threads for parallel stages (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// TOML file whose keys override the corresponding flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a cohort under one uptake regime.
    Simulate(SimulateArgs),
    /// Impute untreated covariate trajectories for treated subjects.
    Impute(ImputeArgs),
    /// Estimate the cumulative effect of treatment on the treated.
    Att(AttArgs),
    /// Weighted marginal structural additive model.
    Msm(MsmArgs),
    /// Cox regression of the event on treatment and covariates.
    Cox(CoxArgs),
    /// Replicated simulation study over the three uptake regimes.
    Benchmark(BenchmarkArgs),
    /// Side-by-side figure of effect-on-the-treated and marginal curves.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
enum Timing {
    Lagged,
    Concurrent,
}

impl From<Timing> for TreatmentTiming {
    fn from(t: Timing) -> Self {
        match t {
            Timing::Lagged => TreatmentTiming::Lagged,
            Timing::Concurrent => TreatmentTiming::Concurrent,
        }
    }
}

#[derive(Clone, Copy, ValueEnum, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
enum FormulaChoice {
    /// Treatment indicator only.
    Treatment,
    /// Treatment, baselines and time-varying covariates.
    Full,
}

#[derive(Clone, Copy, ValueEnum, PartialEq, Eq)]
enum EstimatorChoice {
    Direct,
    Shortcut,
}

#[derive(Args)]
struct InputArgs {
    /// Long-format panel CSV.
    #[arg(long)]
    input: PathBuf,
    /// TOML column-role schema; inferred from the header when absent.
    #[arg(long)]
    schema: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value = "1")]
    regime: Regime,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// TOML file with generator parameters.
    #[arg(long)]
    generator: Option<PathBuf>,
    /// Observed panel.
    #[arg(long)]
    out: PathBuf,
    /// Same subjects with treatment never offered.
    #[arg(long)]
    untreated: Option<PathBuf>,
    /// Observed panel plus untreated copies of treated subjects.
    #[arg(long)]
    full_counterfactual: Option<PathBuf>,
    /// Oracle cumulative effect on the treated.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct ImputeArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, value_enum, default_value_t = Timing::Lagged)]
    timing: Timing,
    /// Observed and imputed trajectories, long format.
    #[arg(long)]
    out: PathBuf,
    /// Increment-model coefficients per interval.
    #[arg(long)]
    coefficients: Option<PathBuf>,
    /// Panel with treated person-time carrying imputed covariates.
    #[arg(long)]
    manipulated: Option<PathBuf>,
}

#[derive(Args)]
struct AttArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = Timing::Lagged)]
    timing: Timing,
    /// Inverse probability of censoring weights in the outcome model.
    #[arg(long)]
    ipcw: bool,
    /// Number of bootstrap replicates (0 disables).
    #[arg(long, default_value_t = 0)]
    bootstrap: usize,
    #[arg(long, value_enum, default_value_t = EstimatorChoice::Shortcut)]
    estimator: EstimatorChoice,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Required with --bootstrap.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct WeightArgs {
    /// Truncation percentiles, e.g. 0.01,0.99.
    #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [0.01, 0.99])]
    truncate: Vec<f64>,
    #[arg(long)]
    no_truncation: bool,
    /// Skip the censoring model even if subjects are lost to follow-up.
    #[arg(long)]
    no_censoring_weights: bool,
}

#[derive(Args)]
struct MsmArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    weights: WeightArgs,
}

#[derive(Args)]
struct CoxArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, value_enum, default_value_t = FormulaChoice::Full)]
    formula: FormulaChoice,
    /// Fit the marginal model with stabilized weights instead.
    #[arg(long)]
    weighted: bool,
    #[command(flatten)]
    weights: WeightArgs,
    /// Coefficient table CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[arg(long, default_value_t = 250)]
    reps: usize,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    generator: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Timing::Lagged)]
    timing: Timing,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Output directory of `benchmark`.
    #[arg(long, conflicts_with_all = ["att", "msm"])]
    benchmark: Option<PathBuf>,
    /// Curve CSV of an effect-on-the-treated estimate.
    #[arg(long, requires = "msm")]
    att: Option<PathBuf>,
    /// Curve CSV of a marginal structural model estimate.
    #[arg(long, requires = "att")]
    msm: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

/// Keys that override command-line flags.
#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    reps: Option<usize>,
    n: Option<usize>,
    regime: Option<Regime>,
    timing: Option<Timing>,
    ipcw: Option<bool>,
    formula: Option<FormulaChoice>,
    bootstrap: Option<usize>,
    level: Option<f64>,
    /// `[lower, upper]`; an empty list disables truncation.
    truncation: Option<Vec<f64>>,
    censoring_weights: Option<bool>,
    generator: Option<GeneratorParams>,
    schema: Option<Schema>,
    #[serde(skip)]
    source: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Run(Error::Io(e))
    }
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidConfig(_) => 3,
        Error::Io(_) => 4,
        Error::Csv(_)
        | Error::MissingColumn(_)
        | Error::InvalidValue { .. }
        | Error::NonMonotoneTreatment { .. }
        | Error::DuplicateRow { .. }
        | Error::PostExitRow { .. }
        | Error::NoBaselineRow { .. }
        | Error::GappedPanel { .. }
        | Error::UnknownVariable(_)
        | Error::UnknownCoefficient(_)
        | Error::InvalidWeights(_)
        | Error::GridMismatch { .. } => 5,
        Error::NonEstimableGap { .. }
        | Error::InsufficientUntreatedData { .. }
        | Error::NoEvents
        | Error::NonConvergence { .. }
        | Error::PerfectPrediction(_)
        | Error::MonotoneLikelihood { .. }
        | Error::TimeVaryingInMsm(_) => 6,
        Error::NoTreatedPersonTime => 7,
        Error::TooManyFailures { .. } => 8,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (kind, message, code) = match &f {
                Failure::Usage(m) => ("usage", m.clone(), 2),
                Failure::Run(e) => (e.kind(), e.to_string(), exit_code(e)),
            };
            eprintln!(
                "error: kind={kind} message=\"{}\"",
                message.replace('\\', "\\\\").replace('"', "\\\"")
            );
            ExitCode::from(code)
        }
    }
}

fn run(cli: Cli) -> Outcome {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(format!("--threads: {e}")))?;
    }
    let file = match &cli.config {
        Some(p) => FileConfig {
            source: Some(p.clone()),
            ..toml::from_str(&read_text(p)?).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        },
        None => FileConfig::default(),
    };
    match cli.command {
        Command::Simulate(a) => simulate(a, file),
        Command::Impute(a) => impute(a, file),
        Command::Att(a) => att(a, file),
        Command::Msm(a) => msm(a, file),
        Command::Cox(a) => cox(a, file),
        Command::Benchmark(a) => benchmark(a, file),
        Command::Report(a) => report(a),
    }
}

fn read_text(p: &Path) -> Outcome<String> {
    fs::read_to_string(p).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", p.display()))).into())
}

fn create(p: &Path) -> Outcome<BufWriter<File>> {
    if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    File::create(p)
        .map(BufWriter::new)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", p.display()))).into())
}

fn write_with(p: &Path, f: impl FnOnce(&mut BufWriter<File>) -> survatt::Result<()>) -> Outcome {
    let mut w = create(p)?;
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

fn write_text(p: &Path, text: &str) -> Outcome {
    let mut w = create(p)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

/// Rejects runs that would read and write, or write twice, the same file.
fn distinct_paths(file: &FileConfig, inputs: &[&Path], outputs: &[&Path]) -> Outcome {
    let norm = |p: &Path| std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf());
    let mut seen: BTreeMap<PathBuf, &Path> = BTreeMap::new();
    for p in file.source.as_deref().iter().chain(inputs).chain(outputs) {
        if let Some(prev) = seen.insert(norm(p), p) {
            return Err(Failure::Usage(format!(
                "path {} is used more than once (also as {})",
                p.display(),
                prev.display()
            )));
        }
    }
    Ok(())
}

fn require_seed(seed: Option<u64>, what: &str) -> Outcome<u64> {
    seed.ok_or_else(|| {
        Failure::Usage(format!(
            "{what} is stochastic; pass --seed or set `seed` in the config file"
        ))
    })
}

fn generator(path: Option<&PathBuf>, file: &mut FileConfig) -> Outcome<GeneratorParams> {
    let params = match (file.generator.take(), path) {
        (Some(p), _) => p,
        (None, Some(p)) => {
            toml::from_str(&read_text(p)?).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        (None, None) => GeneratorParams::default(),
    };
    params.validate()?;
    Ok(params)
}

/// Loads, validates and (if needed) expands a panel to contiguous rows.
fn load(input: &InputArgs, file: &mut FileConfig) -> Outcome<Panel> {
    let schema = match (file.schema.take(), &input.schema) {
        (Some(s), _) => s,
        (None, Some(p)) => Schema::from_toml(&read_text(p)?)?,
        (None, None) => Schema::infer(&read_headers(open(&input.input)?)?),
    };
    let panel = load_panel(open(&input.input)?, &schema)?;
    let complete = panel.is_contiguous() && panel.subjects().iter().all(|s| s.rows.iter().all(|r| r.all_observed()));
    if complete {
        Ok(panel)
    } else {
        Ok(locf_expand(&panel)?)
    }
}

fn open(p: &Path) -> Outcome<BufReader<File>> {
    File::open(p)
        .map(BufReader::new)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", p.display()))).into())
}

fn weight_config(args: &WeightArgs, file: &FileConfig) -> Outcome<WeightConfig> {
    let bounds = match &file.truncation {
        Some(v) if v.is_empty() => None,
        Some(v) if v.len() == 2 => Some((v[0], v[1])),
        Some(_) => return Err(Error::Config("`truncation` must be [] or [lower, upper]".into()).into()),
        None if args.no_truncation => None,
        None => Some((args.truncate[0], args.truncate[1])),
    };
    let truncation = match bounds {
        Some((lower, upper)) if 0.0 <= lower && lower < upper && upper <= 1.0 => Some(Truncation { lower, upper }),
        Some((l, u)) => {
            return Err(Error::InvalidConfig(format!(
                "truncation bounds {l},{u} must satisfy 0 <= lower < upper <= 1"
            ))
            .into())
        }
        None => None,
    };
    Ok(WeightConfig {
        truncation,
        censoring: file.censoring_weights.unwrap_or(!args.no_censoring_weights),
        ..WeightConfig::default()
    })
}

fn simulate(a: SimulateArgs, mut file: FileConfig) -> Outcome {
    let seed = require_seed(file.seed.or(a.seed), "simulate")?;
    let outputs: Vec<&Path> = [
        Some(&a.out),
        a.untreated.as_ref(),
        a.full_counterfactual.as_ref(),
        a.truth.as_ref(),
    ]
    .into_iter()
    .flatten()
    .map(PathBuf::as_path)
    .collect();
    let inputs: Vec<&Path> = a.generator.iter().map(PathBuf::as_path).collect();
    distinct_paths(&file, &inputs, &outputs)?;
    let params = generator(a.generator.as_ref(), &mut file)?;
    let cohort = generate_cohort(&RegimeConfig {
        regime: file.regime.unwrap_or(a.regime),
        n: file.n.unwrap_or(a.n),
        seed,
        params,
    })?;
    write_with(&a.out, |w| write_panel(&cohort.observed, w))?;
    if let Some(p) = &a.untreated {
        write_with(p, |w| write_panel(&cohort.counterfactual_untreated, w))?;
    }
    if let Some(p) = &a.full_counterfactual {
        write_with(p, |w| write_panel(&build_full_counterfactual(&cohort), w))?;
    }
    if let Some(p) = &a.truth {
        write_with(p, |w| cohort.truth.write_csv(w))?;
    }
    println!(
        "regime={} subjects={} treated_share={} event_share={} clamp_rate={}",
        cohort.regime.label(),
        cohort.observed.len(),
        fmt_num(cohort.treated_share()),
        fmt_num(cohort.event_share()),
        fmt_num(cohort.clamp_rate()),
    );
    Ok(())
}

fn impute(a: ImputeArgs, mut file: FileConfig) -> Outcome {
    let outputs: Vec<&Path> = [Some(&a.out), a.coefficients.as_ref(), a.manipulated.as_ref()]
        .into_iter()
        .flatten()
        .map(PathBuf::as_path)
        .collect();
    distinct_paths(&file, &input_paths(&a.input), &outputs)?;
    let panel = load(&a.input, &mut file)?;
    if !panel.has_treated_person_time() {
        return Err(Error::NoTreatedPersonTime.into());
    }
    let config = CounterfactualConfig {
        timing: file.timing.unwrap_or(a.timing).into(),
        ..CounterfactualConfig::for_panel(&panel)
    };
    let cf = impute_counterfactual(&panel, &config)?;
    write_with(&a.out, |w| cf.write_csv(w))?;
    if let Some(p) = &a.coefficients {
        write_with(p, |w| cf.flim.write_csv(w))?;
    }
    if let Some(p) = &a.manipulated {
        write_with(p, |w| write_panel(&build_manipulated_panel(&cf), w))?;
    }
    let gaps = cf.flim.non_estimable();
    println!("treated_subjects={} non_estimable_intervals={:?}", cf.n_treated(), gaps);
    Ok(())
}

fn input_paths(input: &InputArgs) -> Vec<&Path> {
    std::iter::once(input.input.as_path())
        .chain(input.schema.as_deref())
        .collect()
}

fn att(a: AttArgs, mut file: FileConfig) -> Outcome {
    let replicates = file.bootstrap.unwrap_or(a.bootstrap);
    let estimator = a.estimator;
    let est_label = match estimator {
        EstimatorChoice::Direct => "direct",
        EstimatorChoice::Shortcut => "shortcut",
    };
    let names = [
        "att_direct.csv",
        "att_shortcut.csv",
        "mediation_direct.csv",
        "mediation_indirect.csv",
        "additive_fit.csv",
        "counterfactual.csv",
        "att.svg",
        "mediation.svg",
    ];
    let mut outputs: Vec<PathBuf> = names.iter().map(|n| a.out_dir.join(n)).collect();
    let boot_path = a.out_dir.join(format!("att_{est_label}_bootstrap.csv"));
    if replicates > 0 {
        outputs.push(boot_path.clone());
    }
    let outs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    distinct_paths(&file, &input_paths(&a.input), &outs)?;
    let seed = if replicates > 0 {
        Some(require_seed(file.seed.or(a.seed), "bootstrap")?)
    } else {
        None
    };
    let panel = load(&a.input, &mut file)?;
    let mut config = AttConfig::for_panel(&panel);
    config.counterfactual.timing = file.timing.unwrap_or(a.timing).into();
    config.ipcw = file.ipcw.unwrap_or(a.ipcw);
    let est = estimate_att(&panel, &config)?;

    let dir = &a.out_dir;
    write_with(&dir.join("att_direct.csv"), |w| est.direct.write_csv(w))?;
    write_with(&dir.join("att_shortcut.csv"), |w| est.shortcut.write_csv(w))?;
    write_with(&dir.join("mediation_direct.csv"), |w| est.mediation_direct.write_csv(w))?;
    write_with(&dir.join("mediation_indirect.csv"), |w| {
        est.mediation_indirect.write_csv(w)
    })?;
    write_with(&dir.join("additive_fit.csv"), |w| est.fit.write_csv(w))?;
    write_with(&dir.join("counterfactual.csv"), |w| est.counterfactual.write_csv(w))?;

    let mut direct = est.direct.clone();
    let mut shortcut = est.shortcut.clone();
    if let Some(seed) = seed {
        let which = match estimator {
            EstimatorChoice::Direct => AttEstimator::Direct,
            EstimatorChoice::Shortcut => AttEstimator::Shortcut,
        };
        let boot = bootstrap_band(
            which,
            &panel,
            &config,
            &BootstrapConfig {
                replicates,
                level: file.level.unwrap_or(a.level),
                seed,
            },
        )?;
        write_with(&boot_path, |w| boot.curve.write_csv(w))?;
        println!(
            "bootstrap successes={} failures={}",
            boot.successes,
            boot.failures.len()
        );
        match estimator {
            EstimatorChoice::Direct => direct = boot.curve,
            EstimatorChoice::Shortcut => shortcut = boot.curve,
        }
    }
    let direct = direct.with_label("plug-in");
    let shortcut = shortcut.with_label("shortcut");
    write_text(
        &dir.join("att.svg"),
        &step_plot_svg(
            "Effect of treatment on the treated",
            &[&direct, &shortcut],
            "cumulative hazard difference",
        ),
    )?;
    let total = est.direct.clone().with_label("total");
    write_text(
        &dir.join("mediation.svg"),
        &step_plot_svg(
            "Direct and indirect effect",
            &[&total, &est.mediation_direct, &est.mediation_indirect],
            "cumulative hazard difference",
        ),
    )?;

    let slope = slope_test(&est.fit, TREATMENT, SlopeWeight::default())?;
    let t = panel.t_max();
    println!(
        "t_max={t} att_direct={} att_shortcut={} mediation_direct={} mediation_indirect={}",
        fmt_num(est.direct.at(t)),
        fmt_num(est.shortcut.at(t)),
        fmt_num(est.mediation_direct.at(t)),
        fmt_num(est.mediation_indirect.at(t)),
    );
    println!(
        "slope_test coefficient={} statistic={} p_value={}",
        slope.coefficient,
        fmt_num(slope.statistic),
        fmt_num(slope.p_value)
    );
    Ok(())
}

fn msm(a: MsmArgs, mut file: FileConfig) -> Outcome {
    let names = ["weights.csv", "msm.csv", "msm_fit.csv", "msm.svg"];
    let outputs: Vec<PathBuf> = names.iter().map(|n| a.out_dir.join(n)).collect();
    let outs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    distinct_paths(&file, &input_paths(&a.input), &outs)?;
    let config = weight_config(&a.weights, &file)?;
    let panel = load(&a.input, &mut file)?;
    if !panel.has_treated_person_time() {
        return Err(Error::NoTreatedPersonTime.into());
    }
    let (models, weights) = fit_weights(&panel, &config)?;
    for w in models.warnings() {
        eprintln!("warning: {w}");
    }
    let fit = msm_additive(&panel, &weights, &Formula::marginal(&panel))?;
    let curve = fit
        .coefficient_curve(TREATMENT)?
        .with_label("marginal structural model");
    write_with(&outputs[0], |w| weights.write_csv(w))?;
    write_with(&outputs[1], |w| curve.write_csv(w))?;
    write_with(&outputs[2], |w| fit.write_csv(w))?;
    write_text(
        &outputs[3],
        &step_plot_svg("Average treatment effect", &[&curve], "cumulative hazard difference"),
    )?;
    let s = weights.summary();
    println!(
        "mean_treat_weight={} max_treat_weight={} mean_cens_weight={} max_combined_weight={} truncated={}",
        fmt_num(s.mean_treat),
        fmt_num(s.max_treat),
        fmt_num(s.mean_cens),
        fmt_num(s.max_combined),
        s.truncated
    );
    println!("t_max={} msm={}", panel.t_max(), fmt_num(curve.at(panel.t_max())));
    Ok(())
}

fn cox(a: CoxArgs, mut file: FileConfig) -> Outcome {
    let outs: Vec<&Path> = a.out.iter().map(PathBuf::as_path).collect();
    distinct_paths(&file, &input_paths(&a.input), &outs)?;
    let wconfig = weight_config(&a.weights, &file)?;
    let panel = load(&a.input, &mut file)?;
    let (formula, weights) = if a.weighted {
        let (models, ws) = fit_weights(&panel, &wconfig)?;
        for w in models.warnings() {
            eprintln!("warning: {w}");
        }
        (Formula::marginal(&panel), Some(ws.combined()))
    } else {
        let f = match file.formula.unwrap_or(a.formula) {
            FormulaChoice::Treatment => Formula::treatment_only(),
            FormulaChoice::Full => Formula::full(&panel),
        };
        (f, None)
    };
    let fit = fit_cox(&panel, &formula, weights.as_ref())?;
    let mut table = String::from("term,coefficient,hazard_ratio,se\n");
    for j in 0..fit.names.len() {
        table += &format!(
            "{},{},{},{}\n",
            fit.names[j],
            fmt_num(fit.coefficients[j]),
            fmt_num(fit.hazard_ratios[j]),
            fmt_num(fit.se[j])
        );
    }
    print!("{table}");
    println!(
        "events={} log_partial_likelihood={} iterations={}",
        fit.n_events,
        fmt_num(fit.log_partial_likelihood),
        fit.iterations
    );
    if let Some(p) = &a.out {
        write_text(p, &table)?;
    }
    Ok(())
}

fn benchmark(a: BenchmarkArgs, mut file: FileConfig) -> Outcome {
    let seed = require_seed(file.seed.or(a.seed), "benchmark")?;
    let dir = &a.out_dir;
    let mut outputs = vec![dir.join("table.csv"), dir.join("curves.svg")];
    outputs.extend(
        Regime::CONFOUNDED
            .iter()
            .map(|r| dir.join(format!("curves_regime_{}.csv", r.label()))),
    );
    let outs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    let inputs: Vec<&Path> = a.generator.iter().map(PathBuf::as_path).collect();
    distinct_paths(&file, &inputs, &outs)?;
    let params = generator(a.generator.as_ref(), &mut file)?;
    let mut config = StudyConfig::new(file.reps.unwrap_or(a.reps), file.n.unwrap_or(a.n), seed);
    config.params = params;
    config.timing = file.timing.unwrap_or(a.timing).into();
    let result = replicate_study(&config)?;

    write_with(&dir.join("table.csv"), |w| result.write_table_csv(w))?;
    let mut panels_curves = Vec::new();
    for r in &result.regimes {
        let g = r.regime.label();
        write_with(&dir.join(format!("curves_regime_{g}.csv")), |w| {
            result.write_curves_csv(r.regime, w)
        })?;
        let mut curves: Vec<CumulativeCurve> = Analysis::CURVES.iter().filter_map(|x| r.mean_curve(*x)).collect();
        curves.extend(r.mean_truth());
        panels_curves.push((format!("Regime {g}"), curves));
    }
    let panels: Vec<PlotPanel<'_>> = panels_curves
        .iter()
        .map(|(title, curves)| PlotPanel {
            title: title.clone(),
            curves: curves.iter().collect(),
        })
        .collect();
    write_text(
        &dir.join("curves.svg"),
        &panels_svg(
            "Mean cumulative treatment effect",
            &panels,
            "cumulative hazard difference",
        ),
    )?;

    print!("{:<28}", "analysis");
    for r in &result.regimes {
        print!(" {:>9}", format!("regime {}", r.regime.label()));
    }
    println!();
    for x in Analysis::TABLE {
        print!("{:<28}", x.label());
        for r in &result.regimes {
            print!(" {:>9.4}", r.mean_hazard_ratio(x).unwrap_or(f64::NAN));
        }
        println!();
    }
    let min_ok = (0.9 * config.reps as f64).ceil() as usize;
    for r in &result.regimes {
        if r.successes().count() < min_ok {
            return Err(Error::TooManyFailures {
                failed: r.n_failed(),
                total: config.reps,
            }
            .into());
        }
    }
    Ok(())
}

/// Columns of a wide CSV as `name -> values`.
fn read_columns(p: &Path) -> Outcome<BTreeMap<String, Vec<f64>>> {
    let mut rdr = csv::Reader::from_reader(open(p)?);
    let headers: Vec<String> = rdr.headers().map_err(Error::from)?.iter().map(str::to_string).collect();
    let mut cols: BTreeMap<String, Vec<f64>> = headers.iter().map(|h| (h.clone(), Vec::new())).collect();
    for rec in rdr.records() {
        let rec = rec.map_err(Error::from)?;
        for (h, v) in headers.iter().zip(rec.iter()) {
            let x = v.parse::<f64>().map_err(|_| Error::InvalidValue {
                id: p.display().to_string(),
                column: h.clone(),
                value: v.into(),
            })?;
            cols.get_mut(h).expect("header registered").push(x);
        }
    }
    Ok(cols)
}

fn column_curve(cols: &BTreeMap<String, Vec<f64>>, name: &str, label: &str) -> Outcome<CumulativeCurve> {
    let values = cols.get(name).ok_or_else(|| Error::MissingColumn(name.into()))?;
    if values.is_empty() {
        return Err(Error::MissingColumn(name.into()).into());
    }
    let mut c = CumulativeCurve::zeros(label, values.len() as u32 - 1);
    c.values = values.clone();
    Ok(c)
}

fn report(a: ReportArgs) -> Outcome {
    let (left, right) = match (&a.benchmark, &a.att, &a.msm) {
        (Some(dir), _, _) => {
            let mut att = Vec::new();
            let mut msm = Vec::new();
            let mut randomized = None;
            for r in Regime::CONFOUNDED {
                let p = dir.join(format!("curves_regime_{}.csv", r.label()));
                distinct_paths(&FileConfig::default(), &[&p], &[&a.out])?;
                let cols = read_columns(&p)?;
                let label = format!("regime {}", r.label());
                att.push(column_curve(&cols, Analysis::Shortcut.label(), &label)?);
                msm.push(column_curve(&cols, Analysis::Msm.label(), &label)?);
                if randomized.is_none() {
                    randomized = Some(column_curve(&cols, Analysis::Randomized.label(), "randomized")?);
                }
            }
            let randomized = randomized.expect("three regimes read");
            att.push(randomized.clone());
            msm.push(randomized);
            (att, msm)
        }
        (None, Some(att), Some(msm)) => {
            distinct_paths(&FileConfig::default(), &[att, msm], &[&a.out])?;
            let level = 0.95;
            (
                vec![CumulativeCurve::read_csv("estimate", open(att)?, level)?],
                vec![CumulativeCurve::read_csv("estimate", open(msm)?, level)?],
            )
        }
        _ => return Err(Failure::Usage("pass --benchmark DIR, or both --att and --msm".into())),
    };
    let panels = [
        PlotPanel {
            title: "Effect on the treated".into(),
            curves: left.iter().collect(),
        },
        PlotPanel {
            title: "Marginal structural model".into(),
            curves: right.iter().collect(),
        },
    ];
    write_text(
        &a.out,
        &panels_svg(
            "Treatment effect on the treated vs average treatment effect",
            &panels,
            "cumulative hazard difference",
        ),
    )
}
