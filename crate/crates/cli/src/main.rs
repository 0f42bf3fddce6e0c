use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use avex_core::corpus::{generate_corpus, load_dataset, save_dataset, GenConfig, Split};
use avex_core::evaluation::{case_study, evaluate, run_cells, ABLATION_GRID};
use avex_core::gradcheck;
use avex_core::matching::{Pooling, Variant};
use avex_core::training::{load_checkpoint, log_csv, save_checkpoint, train, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "avex", version, about = "Attribute value extraction experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory
    Gen(GenArgs),
    /// Train a model and write a checkpoint plus per-epoch log
    Train(TrainArgs),
    /// Score a checkpoint on one split
    Eval(EvalArgs),
    /// Train and score ablation cells, by default the six pooling-by-variant grid
    Ablate(AblateArgs),
    /// Compare two checkpoints label by label on one attribute
    CaseStudy(CaseStudyArgs),
    /// Check analytic gradients against finite differences
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Table,
}

#[derive(Debug, Args)]
struct GenArgs {
    /// Output dataset directory
    #[arg(long)]
    out: PathBuf,
    /// TOML or JSON generator config; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    attributes: Option<usize>,
    #[arg(long)]
    values_per_attribute: Option<usize>,
    #[arg(long)]
    total_values: Option<usize>,
    #[arg(long)]
    train: Option<usize>,
    #[arg(long)]
    val: Option<usize>,
    #[arg(long)]
    test: Option<usize>,
    #[arg(long)]
    confusability: Option<f64>,
    #[arg(long)]
    distractor_rate: Option<f64>,
    #[arg(long)]
    label_skew: Option<f64>,
    #[arg(long)]
    noise_tokens: Option<usize>,
}

/// Flags shared by every command that trains.
#[derive(Debug, Args)]
struct TrainOverrides {
    /// TOML or JSON training config; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Loss weight F
    #[arg(long = "f")]
    f_weight: Option<f64>,
    /// Move F linearly from `--f` to this value over the epochs
    #[arg(long)]
    f_final: Option<f64>,
    #[arg(long)]
    dim: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint path
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch CSV log; defaults to the checkpoint path with `.log.csv`
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    common: TrainOverrides,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    pooling: Option<Pooling>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Defaults to the checkpoint's training threshold
    #[arg(long)]
    threshold: Option<f64>,
    /// Directory for metrics files; defaults to the checkpoint's directory
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    common: TrainOverrides,
    /// Number of seeds, starting at `--seed`
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    /// Cells as `variant/pooling`, comma separated; defaults to the six-cell grid
    #[arg(long, value_delimiter = ',', value_parser = parse_cell)]
    cells: Vec<(Variant, Pooling)>,
    /// Directory for the ablation CSV files
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
}

#[derive(Debug, Args)]
struct CaseStudyArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    ckpt_a: PathBuf,
    #[arg(long)]
    ckpt_b: PathBuf,
    #[arg(long)]
    attr: usize,
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// CSV output path
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random cases per kernel op
    #[arg(long, default_value_t = 100)]
    cases: usize,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
}

fn print_resolved(kind: &str, body: &str, seed: u64) {
    eprintln!("# resolved {kind} config");
    eprint!("{body}");
    if !body.ends_with('\n') {
        eprintln!();
    }
    eprintln!("# seed = {seed}");
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn gen_config(args: &GenArgs) -> Result<GenConfig> {
    let mut cfg = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            if p.extension().is_some_and(|e| e == "json") {
                serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
            } else {
                toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
            }
        }
        None => GenConfig::default(),
    };
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {$(
            if let Some(v) = args.$flag { cfg.$field = v; }
        )*};
    }
    set!(attributes => n_attributes, values_per_attribute => values_per_attribute,
         train => n_train, val => n_val, test => n_test, confusability => confusability,
         distractor_rate => distractor_rate, label_skew => label_skew,
         noise_tokens => noise_token_count);
    if args.total_values.is_some() {
        cfg.total_values = args.total_values;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train_config(o: &TrainOverrides) -> Result<TrainConfig> {
    let mut cfg = match &o.config {
        Some(p) => TrainConfig::from_file(p)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = o.seed {
        cfg.seed = v;
    }
    if let Some(v) = o.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = o.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = o.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = o.f_weight {
        cfg.f_weight = v;
    }
    if let Some(v) = o.f_final {
        cfg.f_final = Some(v);
    }
    if let Some(v) = o.dim {
        cfg.d_h = v;
        cfg.d_l = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_gen(args: GenArgs) -> Result<()> {
    let cfg = gen_config(&args)?;
    let seed = args.seed.unwrap_or(0);
    print_resolved("gen", &toml::to_string(&cfg)?, seed);
    let ds = generate_corpus(&cfg, seed)?;
    save_dataset(&ds, &args.out)?;
    println!(
        "wrote {}: {} attributes, {} labels, {}/{}/{} products",
        args.out.display(),
        ds.schema.attributes().len(),
        ds.n_labels(),
        ds.train.len(),
        ds.val.len(),
        ds.test.len()
    );
    Ok(())
}

fn run_train(args: TrainArgs) -> Result<()> {
    let mut cfg = train_config(&args.common)?;
    if let Some(v) = args.variant {
        cfg.variant = v;
    }
    if let Some(p) = args.pooling {
        cfg.pooling = p;
    }
    print_resolved("train", &cfg.to_toml(), cfg.seed);
    let ds = load_dataset(&args.data)?;
    let outcome = train(&ds, &cfg)?;
    save_checkpoint(&outcome.checkpoint, &args.out)?;
    let log_path = args.log.unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".log.csv");
        PathBuf::from(p)
    });
    write(&log_path, &log_csv(&outcome.log))?;
    let best = &outcome.log[outcome.best_epoch];
    println!(
        "wrote {} (best epoch {}, val MiF1 {}) and {}",
        args.out.display(),
        outcome.best_epoch,
        best.val.as_ref().map_or("n/a".into(), |v| format!("{:.2}", v.micro_f1)),
        log_path.display()
    );
    Ok(())
}

fn run_eval(args: EvalArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.ckpt)?;
    let threshold = args.threshold.unwrap_or(ckpt.config.threshold);
    if !(threshold > 0.0 && threshold < 1.0) {
        bail!("--threshold must lie in (0, 1), got {threshold}");
    }
    print_resolved("train (from checkpoint)", &ckpt.config.to_toml(), ckpt.config.seed);
    eprintln!("# split = {}, threshold = {threshold}", args.split);
    let ds = load_dataset(&args.data)?;
    let report = evaluate(&ckpt, &ds, args.split, threshold)?;
    let out = args.out.unwrap_or_else(|| {
        args.ckpt
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default()
    });
    let split = args.split.name();
    write(
        &out.join(format!("metrics_{split}.csv")),
        &format!("{}\n{}\n", avex_core::evaluation::MetricsReport::csv_header(), report.csv_row()),
    )?;
    write(&out.join(format!("per_label_{split}.csv")), &report.per_label_csv(&ds.schema))?;
    write(
        &out.join(format!("metrics_{split}.json")),
        &serde_json::to_string_pretty(&report)?,
    )?;
    match args.format {
        Format::Csv => println!("{}\n{}", avex_core::evaluation::MetricsReport::csv_header(), report.csv_row()),
        Format::Table => println!("{report}"),
    }
    info!("metrics written to {}", out.display());
    Ok(())
}

fn parse_cell(s: &str) -> Result<(Variant, Pooling), String> {
    let (v, p) = s.split_once('/').ok_or_else(|| format!("expected variant/pooling, got `{s}`"))?;
    Ok((v.parse().map_err(|e| format!("{e}"))?, p.parse().map_err(|e| format!("{e}"))?))
}

fn run_ablate(args: AblateArgs) -> Result<()> {
    let cfg = train_config(&args.common)?;
    if args.seeds == 0 {
        bail!("--seeds must be at least 1");
    }
    print_resolved("train", &cfg.to_toml(), cfg.seed);
    let seeds: Vec<u64> = (0..args.seeds).map(|i| cfg.seed + i).collect();
    eprintln!("# seeds = {seeds:?}");
    let ds = load_dataset(&args.data)?;
    let cells = if args.cells.is_empty() {
        ABLATION_GRID.to_vec()
    } else {
        args.cells
    };
    let report = run_cells(&ds, &cfg, &cells, &seeds)?;
    if let Some(dir) = &args.out {
        write(&dir.join("ablation.csv"), &report.to_csv())?;
        write(&dir.join("ablation_deltas.csv"), &report.deltas_csv())?;
        write(&dir.join("ablation.json"), &serde_json::to_string_pretty(&report)?)?;
    }
    match args.format {
        Format::Csv => print!("{}", report.to_csv()),
        Format::Table => print!("{}", report.to_table()),
    }
    Ok(())
}

fn run_case_study(args: CaseStudyArgs) -> Result<()> {
    let a = load_checkpoint(&args.ckpt_a)?;
    let b = load_checkpoint(&args.ckpt_b)?;
    print_resolved("train (checkpoint a)", &a.config.to_toml(), a.config.seed);
    print_resolved("train (checkpoint b)", &b.config.to_toml(), b.config.seed);
    eprintln!("# split = {}, attr = {}, threshold = {}", args.split, args.attr, args.threshold);
    let ds = load_dataset(&args.data)?;
    let study = case_study(&a, &b, &ds, args.split, args.attr, args.threshold)?;
    if let Some(path) = &args.out {
        write(path, &study.to_csv())?;
    }
    match args.format {
        Format::Csv => print!("{}", study.to_csv()),
        Format::Table => print!("{}", study.to_table()),
    }
    Ok(())
}

fn run_gradcheck(args: GradcheckArgs) -> Result<()> {
    if args.cases == 0 {
        bail!("--cases must be at least 1");
    }
    print_resolved(
        "gradcheck",
        &format!(
            "cases = {}\nstep = {:e}\ntolerance = {:e}\n",
            args.cases,
            avex_core::diffcore::fd::STEP,
            gradcheck::TOLERANCE
        ),
        args.seed,
    );
    let checks = gradcheck::full_suite(args.seed, args.cases)?;
    match args.format {
        Format::Csv => {
            println!("op,cases,max_rel_err,passed");
            for c in &checks {
                println!("{},{},{:e},{}", c.name, c.cases, c.max_rel_err, c.passed());
            }
        }
        Format::Table => {
            for c in &checks {
                println!(
                    "{:<28} {:>5} cases  max rel err {:.3e}  {}",
                    c.name,
                    c.cases,
                    c.max_rel_err,
                    if c.passed() { "PASS" } else { "FAIL" }
                );
            }
        }
    }
    let failed = checks.iter().filter(|c| !c.passed()).count();
    if failed > 0 {
        bail!("{failed} gradient checks exceeded the tolerance");
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("AVEX_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Gen(a) => run_gen(a),
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Ablate(a) => run_ablate(a),
        Command::CaseStudy(a) => run_case_study(a),
        Command::Gradcheck(a) => run_gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
