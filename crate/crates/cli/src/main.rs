// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dictseg::bench::{run_benchmark, BenchmarkSpec};
use dictseg::config::{DictionaryKind, RunConfig};
use dictseg::dictionary::Dictionary;
use dictseg::gibbs::run_gibbs;
use dictseg::io;
use dictseg::pipeline::select_model;
use dictseg::posterior::{Mode, PosteriorContext};
use dictseg::sim::{functional_metrics, particular_series, segmentation_metrics, simulate_series};
use dictseg::{Context, Error, Result, Series};

#[derive(Parser)]
#[command(
    name = "dictseg",
    version,
    about = "Bayesian segmentation with a dictionary-expanded functional part"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a series and write it with its truth.
    Simulate(SimulateArgs),
    /// Fit a series (model search, then estimation).
    Fit(FitArgs),
    /// Score a fit against a simulation truth.
    Metrics(MetricsArgs),
    /// Replicated simulate-fit-score comparison of both modes.
    Bench(BenchArgs),
    /// Write the evaluated design matrix of a dictionary.
    Dict(DictArgs),
    /// Print a configuration preset as TOML.
    Config {
        /// simulation, application or run1..run21
        #[arg(default_value = "simulation")]
        preset: String,
    },
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Use the fixed series (change-points 7, 18, 36) instead of a random one.
    #[arg(long)]
    particular: bool,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Stage {
    Full,
    Mh,
    Gibbs,
}

/// Flags that override the configuration file.
#[derive(Args)]
struct Overrides {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named preset used when no file is given.
    #[arg(long, default_value = "simulation")]
    preset: String,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long, value_parser = parse_dictionary)]
    dictionary: Option<DictionaryKind>,
    #[arg(long)]
    dictionary_file: Option<PathBuf>,
    #[arg(long)]
    events: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long, value_enum, default_value = "full")]
    stage: Stage,
    /// Selection file written by `--stage mh`, read by `--stage gibbs`.
    #[arg(long)]
    selection: Option<PathBuf>,
    /// Also write the sampler trace.
    #[arg(long)]
    trace: bool,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    truth: PathBuf,
    /// Directory holding summary.json and reconstruction.csv.
    #[arg(long)]
    results: PathBuf,
    #[arg(long, default_value_t = 0)]
    tolerance: usize,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "simulation")]
    preset: String,
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.5, 1.0, 1.5])]
    levels: Vec<f64>,
    #[arg(long, default_value_t = 100)]
    replicates: usize,
    #[arg(long, value_delimiter = ',', value_parser = parse_mode, default_values = ["sp", "p"])]
    methods: Vec<Mode>,
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    tolerance: usize,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct DictArgs {
    #[arg(long, value_parser = parse_dictionary, default_value = "point100")]
    dictionary: DictionaryKind,
    /// Grid length when no input series is given.
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, default_value_t = 56.0)]
    period_floor: f64,
    #[arg(long, short)]
    out: PathBuf,
}

fn parse_mode(s: &str) -> std::result::Result<Mode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_dictionary(s: &str) -> std::result::Result<DictionaryKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.category() {
        "input" => 3,
        "dimension" => 4,
        "numeric" => 5,
        "sampler" => 6,
        "parse" => 7,
        "config" => 8,
        "io" => 9,
        _ => 10,
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Metrics(a) => metrics(a),
        Command::Bench(a) => bench(a),
        Command::Dict(a) => dict(a),
        Command::Config { preset } => {
            print!("{}", RunConfig::preset(&preset)?.to_toml_string()?);
            Ok(())
        }
    }
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let (series, truth) = if a.particular {
        if a.n != 100 {
            return Err(Error::InvalidInput("the fixed series has n = 100".into()));
        }
        particular_series(a.sigma, &mut rng)?
    } else {
        simulate_series(a.n, a.sigma, &mut rng)?
    };
    io::write_series(&a.out.join("series.csv"), &series)?;
    io::write_truth(&a.out.join("truth.json"), &truth)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn load_config(path: Option<&Path>, preset: &str) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => RunConfig::preset(preset),
    }
}

fn resolve_config(o: Overrides) -> Result<RunConfig> {
    let mut c = load_config(o.config.as_deref(), &o.preset)?;
    if let Some(v) = o.input {
        c.input = Some(v);
    }
    if let Some(v) = o.mode {
        c.mode = v;
    }
    if let Some(v) = o.seed {
        c.seed = v;
    }
    if let Some(v) = o.iterations {
        c.iterations = v;
    }
    if let Some(v) = o.burn_in {
        c.burn_in = v;
    }
    if let Some(v) = o.dictionary {
        c.dictionary = v;
    }
    if let Some(v) = o.dictionary_file {
        c.dictionary_file = Some(v);
    }
    if let Some(v) = o.events {
        c.events = Some(v);
    }
    c.validate()?;
    Ok(c)
}

fn dictionary_for(c: &RunConfig, series: &Series) -> Result<Dictionary> {
    match (&c.dictionary, &c.dictionary_file) {
        (DictionaryKind::Custom, Some(p)) => io::load_dictionary(p, series.len()),
        _ => c.preset_dictionary(series),
    }
}

fn prepare(c: &RunConfig) -> Result<(Series, Option<Dictionary>, Context)> {
    let input = c
        .input
        .as_deref()
        .ok_or_else(|| Error::Config("no input series (set `input` or pass --input)".into()))?;
    let series = io::load_series(input)?;
    let n = series.len();
    let dictionary = match c.mode {
        Mode::SemiParametric => Some(dictionary_for(c, &series)?),
        Mode::Parametric => None,
    };
    let mut hyper = c.hyperparameters(n, dictionary.as_ref().map_or(1, Dictionary::len));
    if let Some(events) = &c.events {
        hyper = io::apply_event_priors(&hyper, &io::load_event_priors(events)?, &series)?;
    }
    let ctx = match &dictionary {
        Some(d) => {
            let design = d.evaluate(series.covariate())?;
            PosteriorContext::semi_parametric(series.clone(), design, hyper)?
        }
        None => PosteriorContext::parametric(series.clone(), hyper)?,
    };
    c.mh_config().validate_for(&ctx)?;
    Ok((series, dictionary, ctx))
}

fn fit(a: FitArgs) -> Result<()> {
    let c = resolve_config(a.overrides)?;
    let out =
        a.out.clone().or_else(|| c.output.clone()).ok_or_else(|| {
            Error::Config("no output directory (set `output` or pass --out)".into())
        })?;
    let (series, dictionary, ctx) = prepare(&c)?;
    let selection_path = a
        .selection
        .clone()
        .unwrap_or_else(|| out.join(io::SELECTION_FILE));

    let (model, inclusion, acceptance) = match a.stage {
        Stage::Gibbs => {
            let saved = io::read_selection(&selection_path)?;
            if saved.mode != c.mode || saved.n != ctx.n() || saved.num_atoms != ctx.num_atoms() {
                return Err(Error::DimensionMismatch(
                    "selection file does not match the configured model".into(),
                ));
            }
            (saved.state()?, saved.inclusion, saved.acceptance)
        }
        Stage::Full | Stage::Mh => {
            let sel = select_model(&ctx, &c.mh_config(), c.threshold)?;
            if a.trace {
                io::write_trace(&out.join(io::TRACE_FILE), &sel.trace)?;
            }
            let file = io::SelectionFile::new(
                c.mode,
                c.threshold,
                &sel.model,
                &sel.inclusion,
                &sel.acceptance,
            );
            io::write_selection(&selection_path, &file)?;
            (sel.model, sel.inclusion, sel.acceptance)
        }
    };
    if let Stage::Mh = a.stage {
        println!("wrote {}", selection_path.display());
        return Ok(());
    }
    let mut result = run_gibbs(&ctx, &model, &c.gibbs_config())?;
    result.inclusion = Some(inclusion);
    let paths = io::write_results(
        &out,
        &result,
        &series,
        dictionary.as_ref(),
        Some(&acceptance),
    )?;
    println!("change-points: {:?}", result.segmentation_hat.change_points);
    if c.mode.has_functional() {
        println!("atoms: {:?}", result.atoms);
    }
    println!("wrote {}", paths.summary.display());
    Ok(())
}

fn metrics(a: MetricsArgs) -> Result<()> {
    let truth = io::read_truth(&a.truth)?.to_truth()?;
    let summary = io::read_summary(&a.results.join(io::SUMMARY_FILE))?;
    let f_hat = io::read_f_hat(&a.results.join(io::RECONSTRUCTION_FILE))?;
    let n = truth.f_true.len();
    if summary.n != n {
        return Err(Error::DimensionMismatch(format!(
            "fit has n = {}, truth has n = {n}",
            summary.n
        )));
    }
    let seg = segmentation_metrics(
        &summary.segmentation()?,
        &truth.segmentation,
        n,
        a.tolerance,
    );
    let atoms: BTreeSet<usize> = summary.atom_indices().into_iter().collect();
    let func = functional_metrics(&f_hat, &atoms, &truth)?;
    let report = serde_json::json!({
        "k_hat": summary.k_hat,
        "rmse_mu": seg.rmse_mu,
        "fdr_bp": seg.fdr_bp,
        "fnr_bp": seg.fnr_bp,
        "rmse_f": func.rmse_f,
        "fdr_f": func.fdr_f,
        "fnr_f": func.fnr_f,
    });
    println!(
        "{}",
        serde_json::to_string_pretty(&report).map_err(|e| Error::Serialization(e.to_string()))?
    );
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    let spec = BenchmarkSpec {
        levels: a.levels,
        replicates: a.replicates,
        methods: a.methods,
        n: a.n,
        config: load_config(a.config.as_deref(), &a.preset)?,
        master_seed: a.seed,
        tolerance: a.tolerance,
    };
    let report = run_benchmark(&spec, a.workers)?;
    report.write(&a.out.join("replicates.csv"), &a.out.join("averages.json"))?;
    for avg in &report.averages {
        println!(
            "sigma={} {}: K={:.2} FDRbp={:.3} FNRbp={:.3} FDRf={:.3} FNRf={:.3} failed={}",
            avg.sigma,
            avg.method.name(),
            avg.k_hat,
            avg.fdr_bp,
            avg.fnr_bp,
            avg.fdr_f,
            avg.fnr_f,
            avg.failed
        );
    }
    Ok(())
}

fn dict(a: DictArgs) -> Result<()> {
    let series = match &a.input {
        Some(p) => io::load_series(p)?,
        None => Series::new(vec![0.0; a.n])?,
    };
    let c = RunConfig {
        dictionary: a.dictionary,
        period_floor: a.period_floor,
        ..RunConfig::simulation()
    };
    let d = c.preset_dictionary(&series)?;
    io::write_design(&a.out, &d, series.covariate())?;
    println!("{} atoms, wrote {}", d.len(), a.out.display());
    Ok(())
}
