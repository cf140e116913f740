use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use save_core::adapt::SynthesisConfig;
use save_core::bench::{bench_ladder, DEFAULT_LADDER};
use save_core::experiments::{format_list, rq1_to_csv, run_rq1, run_rq2, Rq1Config, Rq2Config};
use save_core::learn::EstimatorConfig;
use save_core::property::{load_properties, properties_to_json};
use save_core::runtime::{format_log_table, log_to_jsonl, run as run_trace, trace_from_jsonl, trace_to_jsonl, KnowledgeBase};
use save_core::sim::{generate_scenario, maritime_properties, simulate, ScenarioConfig};
use save_core::{prism, rank_situations, AugmentedScg, Error, Result};

#[derive(Debug, Parser)]
#[command(name = "save", version, about = "Safety verification and runtime adaptation for situation models")]
struct Cli {
    /// Overrides the seed of any config
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory, depending on the command
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Maximum situations a synthesised controller may avoid
    #[arg(long, global = true, default_value_t = 4)]
    max_removals: usize,
    #[arg(long, global = true, value_enum)]
    estimator: Option<Estimator>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
    Table,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Estimator {
    Frequentist,
    Bayesian,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check every property from every situation of an SCG
    Check {
        #[arg(long)]
        scg: PathBuf,
        #[arg(long)]
        properties: PathBuf,
        /// Only decide compliance for this situation
        #[arg(long)]
        situation: Option<String>,
    },
    /// Drift a batch of maritime variants and repair them offline
    ExperimentRq1 {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Closed-loop run of a fixed and an adaptive controller under drift
    ExperimentRq2 {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Time criticality ranking on dense random SCGs of growing size
    Bench {
        /// Situation counts
        #[arg(long, value_delimiter = ',')]
        n: Option<Vec<usize>>,
        /// Step bound of the timed properties
        #[arg(long, default_value_t = 50)]
        k: u32,
        #[arg(long, default_value_t = 1.0)]
        density: f64,
    },
    /// Write a PRISM model and properties file for one situation
    ExportPrism {
        #[arg(long)]
        scg: PathBuf,
        #[arg(long)]
        situation: String,
        #[arg(long)]
        properties: PathBuf,
    },
    /// Generate a maritime scenario and a sampled trace
    Scenario {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Timesteps of the sampled trace
        #[arg(long, default_value_t = 500)]
        steps: u64,
    },
    /// Feed a trace through the adaptation loop
    Run {
        #[arg(long)]
        scg: PathBuf,
        #[arg(long)]
        properties: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        /// Resume from a knowledge-base snapshot instead of the SCG
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Write the knowledge base here after the trace
        #[arg(long)]
        snapshot: Option<PathBuf>,
        /// Analyse only; never synthesise
        #[arg(long)]
        baseline: bool,
    },
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn load_config<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => save_core::error::from_json_str(&read(p)?),
        None => Ok(T::default()),
    }
}

impl Cli {
    fn estimator(&self, base: EstimatorConfig) -> EstimatorConfig {
        match self.estimator {
            Some(Estimator::Frequentist) => EstimatorConfig::frequentist(base.smoothing_alpha),
            Some(Estimator::Bayesian) => EstimatorConfig::bayesian(base.prior_strength_kappa),
            None => base,
        }
    }

    fn synthesis(&self) -> SynthesisConfig {
        SynthesisConfig {
            max_removals: self.max_removals,
            rng_seed: self.seed.unwrap_or(0),
            out_of_odd_horizon: None,
        }
    }

    fn out_dir(&self) -> Option<&Path> {
        self.out.as_deref()
    }
}

fn check(cli: &Cli, scg: &Path, properties: &Path, situation: Option<&str>) -> Result<ExitCode> {
    let scg = AugmentedScg::from_json(&read(scg)?)?;
    let props = load_properties(&read(properties)?)?;
    if let Some(id) = situation {
        scg.situation(id).ok_or_else(|| Error::NotFound(id.to_string()))?;
    }
    let report = rank_situations(&scg, &props)?;
    let json = serde_json::to_string_pretty(&report)?;
    if let Some(out) = cli.out_dir() {
        write(out, &json)?;
    }
    if cli.format == Some(Format::Json) {
        println!("{json}");
    } else {
        print!("{:<8} {:<20}", "id", "situation");
        for p in &props {
            print!(" {:>12} {:>12}", p.name, "score");
        }
        println!();
        for id in scg.active_situation_ids() {
            let Some(s) = report.situations.get(id) else { continue };
            print!("{id:<8} {:<20}", scg.describe(id).unwrap_or_default());
            for v in &s.verdicts {
                let mark = if v.compliant { ' ' } else { '!' };
                print!(" {:>12.9} {:>11.6}{mark}", v.value, v.score);
            }
            println!();
        }
        if let Some(worst) = &report.worst_situation {
            println!("worst situation: {worst} (score {:.6})", report.situations[worst].worst_score);
        }
        let violated = report.violated_properties();
        if !violated.is_empty() {
            println!("violated: {}", format_list(&violated));
        }
    }
    let compliant = match situation {
        Some(id) => report.situations.get(id).is_none_or(|s| s.compliant()),
        None => report.all_compliant(),
    };
    Ok(if compliant { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn experiment_rq1(cli: &Cli, config: Option<&Path>) -> Result<ExitCode> {
    let mut cfg: Rq1Config = load_config(config)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.max_removals = cli.max_removals;
    cfg.estimator = cli.estimator(cfg.estimator);
    let report = run_rq1(&cfg)?;
    let csv = rq1_to_csv(&report.records)?;
    let json = serde_json::to_string_pretty(&report)?;
    if let Some(dir) = cli.out_dir() {
        write(&dir.join("rq1.csv"), &csv)?;
        write(&dir.join("rq1.json"), &json)?;
    }
    match cli.format {
        Some(Format::Json) => println!("{json}"),
        _ => print!("{csv}"),
    }
    println!("{}", report.summary());
    let rechecked = report.records.iter().all(|r| r.recheck_passed != Some(false));
    Ok(if rechecked { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn experiment_rq2(cli: &Cli, config: Option<&Path>) -> Result<ExitCode> {
    let mut cfg: Rq2Config = load_config(config)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.scenario.seed = seed;
    }
    cfg.max_removals = cli.max_removals;
    cfg.estimator = cli.estimator(cfg.estimator);
    let report = run_rq2(&cfg)?;
    let timeline = serde_json::to_string_pretty(&report.timeline)?;
    if let Some(dir) = cli.out_dir() {
        write(&dir.join("baseline.jsonl"), &log_to_jsonl(&report.baseline))?;
        write(&dir.join("save.jsonl"), &log_to_jsonl(&report.save))?;
        write(&dir.join("timeline.json"), &timeline)?;
    }
    if cli.format == Some(Format::Json) {
        println!("{timeline}");
        return Ok(ExitCode::SUCCESS);
    }
    let t = &report.timeline;
    let show = |v: Option<u64>| v.map_or("-".to_string(), |t| t.to_string());
    println!("drift injected at        {}", show(t.drift_time));
    println!("controller adapted at    {}", show(t.adapted_at));
    if let Some(d) = &t.adaptation {
        println!("adaptation               {}", serde_json::to_string(d)?);
    }
    match &t.baseline_failure {
        Some((at, f)) => println!("fixed controller: {f} at {at}"),
        None => println!("fixed controller: no failure in the adaptation episode"),
    }
    match t.save_failure_after_adaptation {
        Some(at) => println!("adaptive controller: failure at {at}"),
        None => println!("adaptive controller: no failure after adapting"),
    }
    println!("failures overall: fixed {}, adaptive {}", t.baseline_failures, t.save_failures);
    Ok(ExitCode::SUCCESS)
}

fn bench(cli: &Cli, n: Option<&[usize]>, k: u32, density: f64) -> Result<ExitCode> {
    let ladder = n.unwrap_or(&DEFAULT_LADDER);
    let records = bench_ladder(ladder, k, density, cli.seed.unwrap_or(0))?;
    let text = match cli.format {
        Some(Format::Json) => serde_json::to_string_pretty(&records)?,
        _ => save_core::bench::to_csv(&records)?,
    };
    match cli.out_dir() {
        Some(out) => write(out, &text)?,
        None => print!("{text}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn export_prism(cli: &Cli, scg: &Path, situation: &str, properties: &Path) -> Result<ExitCode> {
    let scg = AugmentedScg::from_json(&read(scg)?)?;
    let props = load_properties(&read(properties)?)?;
    let model = prism::export_model(&scg, situation)?;
    let queries = prism::export_properties(&props);
    match cli.out_dir() {
        Some(dir) => {
            write(&dir.join("model.pm"), &model)?;
            write(&dir.join("properties.props"), &queries)?;
        }
        None => print!("{model}\n{queries}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn scenario(cli: &Cli, config: Option<&Path>, steps: u64) -> Result<ExitCode> {
    let mut cfg: ScenarioConfig = load_config(config)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let scenario = generate_scenario(&cfg)?;
    let trace = simulate(&scenario.truth, steps, cfg.seed.wrapping_add(2))?;
    let dir = cli.out_dir().unwrap_or(Path::new("."));
    write(&dir.join("truth.json"), &serde_json::to_string_pretty(&scenario.truth)?)?;
    write(&dir.join("belief.json"), &scenario.belief.to_json()?)?;
    write(&dir.join("properties.json"), &properties_to_json(&maritime_properties()))?;
    write(&dir.join("trace.jsonl"), &trace_to_jsonl(&trace))?;
    println!("wrote scenario with {} events to {}", trace.len(), dir.display());
    Ok(ExitCode::SUCCESS)
}

struct RunArgs<'a> {
    scg: &'a Path,
    properties: &'a Path,
    trace: &'a Path,
    resume: Option<&'a Path>,
    snapshot: Option<&'a Path>,
    baseline: bool,
}

fn run(cli: &Cli, args: RunArgs<'_>) -> Result<ExitCode> {
    let mut kb = match args.resume {
        Some(path) => KnowledgeBase::load(&read(path)?)?,
        None => {
            let scg = AugmentedScg::from_json(&read(args.scg)?)?;
            let props = load_properties(&read(args.properties)?)?;
            KnowledgeBase::new(scg, props, cli.estimator(EstimatorConfig::default()), cli.synthesis())?
        }
    };
    kb.baseline |= args.baseline;
    let trace = trace_from_jsonl(&read(args.trace)?)?;
    let log = run_trace(&mut kb, &trace)?;
    if let Some(path) = args.snapshot {
        write(path, &kb.snapshot()?)?;
    }
    let jsonl = log_to_jsonl(&log);
    if let Some(out) = cli.out_dir() {
        write(out, &jsonl)?;
    }
    match cli.format {
        Some(Format::Json) => print!("{jsonl}"),
        _ => print!("{}", format_log_table(&log)),
    }
    Ok(ExitCode::SUCCESS)
}

fn dispatch(cli: &Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Check {
            scg,
            properties,
            situation,
        } => check(cli, scg, properties, situation.as_deref()),
        Command::ExperimentRq1 { config } => experiment_rq1(cli, config.as_deref()),
        Command::ExperimentRq2 { config } => experiment_rq2(cli, config.as_deref()),
        Command::Bench { n, k, density } => bench(cli, n.as_deref(), *k, *density),
        Command::ExportPrism {
            scg,
            situation,
            properties,
        } => export_prism(cli, scg, situation, properties),
        Command::Scenario { config, steps } => scenario(cli, config.as_deref(), *steps),
        Command::Run {
            scg,
            properties,
            trace,
            resume,
            snapshot,
            baseline,
        } => run(
            cli,
            RunArgs {
                scg,
                properties,
                trace,
                resume: resume.as_deref(),
                snapshot: snapshot.as_deref(),
                baseline: *baseline,
            },
        ),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
