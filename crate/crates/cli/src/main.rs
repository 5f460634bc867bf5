use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nexception::arch::{build, ArchConfig, ArchSpec, Variant};
use nexception::data::{load_cifar, synthetic_dataset, write_json, CifarVariant, Dataset, SyntheticSpec};
use nexception::nas::{
    incumbent_index, lpi_importance, read_history, search, write_history, Budget, Objective, PlantedObjective,
    SearchOptions, SearchSpace, Strategy, TrainingObjective,
};
use nexception::train::{train_epochs, TrainConfig, TrainOptions};
use nexception::{Error, Tensor};
use serde::Serialize;

mod settings;

use settings::{apply_arch, apply_train, arch_to_text, is_arch_key, parse_pair, read_pairs};

/// Exit status classes: 2 for operator error, 3 for numerical divergence.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Diverged(String),
    Runtime(String),
}

impl Failure {
    pub fn usage(e: impl std::fmt::Display) -> Self {
        Failure::Usage(e.to_string())
    }

    fn runtime(e: Error) -> Self {
        match e {
            Error::Divergence { .. } | Error::NonFiniteGradient(_) => Failure::Diverged(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }

    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Diverged(_) => 3,
            Failure::Runtime(_) => 1,
        }
    }
}

/// NEXcepTion networks: cost summaries, training, architecture search,
/// hyperparameter importance and CPU throughput.
#[derive(Parser, Debug)]
#[command(name = "nexception", version)]
struct Cli {
    /// Worker threads for kernels and data loading (1 keeps runs bit-reproducible)
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Per-layer output shapes, parameters and FLOPs, with totals
    Summarize(SummarizeArgs),
    /// Train a model and write metrics.csv, summary.json and best.ckpt
    Train(TrainArgs),
    /// Budgeted architecture search over the reduced network
    Search(SearchArgs),
    /// Local hyperparameter importance from a search history
    Importance(ImportanceArgs),
    /// Inference throughput (images/s) on the CPU
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct SummarizeArgs {
    /// Model name (nexception_t, nexception_s, nexception_tp, xception, reduced_nas)
    model: String,
    /// Square input side in pixels [default: the model's own]
    #[arg(long)]
    input: Option<usize>,
    /// Number of output classes [default: the model's own]
    #[arg(long)]
    classes: Option<usize>,
    /// Emit JSON instead of the aligned table
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DatasetKind {
    Cifar100,
    Cifar10,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Use the seeded synthetic 10-class dataset
    #[arg(long, conflicts_with = "data")]
    synthetic: bool,
    /// CIFAR binary file or directory holding the distributor's files
    #[arg(long)]
    data: Option<PathBuf>,
    /// Record layout of --data
    #[arg(long, value_enum, default_value = "cifar100")]
    dataset: DatasetKind,
    /// Keep only classes 0..K
    #[arg(long)]
    classes: Option<usize>,
    /// Keep only the first N training records
    #[arg(long)]
    limit: Option<usize>,
    /// Fraction held out for validation when no test split is available
    #[arg(long, default_value_t = 0.2)]
    holdout: f64,
    /// Images per class in the synthetic dataset
    #[arg(long, default_value_t = 64)]
    per_class: usize,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Model name
    #[arg(long, default_value = "reduced_nas")]
    model: String,
    #[command(flatten)]
    data: DataArgs,
    /// Epochs; warmup is capped at epochs − 1 unless set explicitly
    #[arg(long)]
    epochs: Option<usize>,
    /// Peak learning rate
    #[arg(long)]
    lr: Option<f64>,
    /// Mini-batch size
    #[arg(long)]
    batch_size: Option<usize>,
    /// Seed for initialization, shuffling and augmentation
    #[arg(long)]
    seed: Option<u64>,
    /// Flat key = value file with training and architecture keys
    #[arg(long)]
    config: Option<PathBuf>,
    /// Architecture keys file, e.g. the incumbent written by `search`
    #[arg(long)]
    arch_config: Option<PathBuf>,
    /// Override one key (repeatable), e.g. --set mixup_alpha=0
    #[arg(long = "set", value_parser = parse_pair)]
    overrides: Vec<(String, String)>,
    /// Output directory
    #[arg(long, default_value = "runs/train")]
    out: PathBuf,
    /// Record epoch wall time in the metrics (files then differ run to run)
    #[arg(long)]
    record_time: bool,
    /// Print one line per epoch
    #[arg(long)]
    verbose: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Oracle {
    /// Train each configuration on the dataset
    Train,
    /// Deterministic objective rewarding bottleneck = on and kernel_middle = 5
    Planted,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum StrategyArg {
    Random,
    Smbo,
}

#[derive(Args, Debug)]
struct SearchArgs {
    /// Maximum number of trials
    #[arg(long)]
    trials: Option<usize>,
    /// Wall-clock budget in seconds
    #[arg(long)]
    budget_seconds: Option<f64>,
    /// Search strategy
    #[arg(long, value_enum, default_value = "smbo")]
    strategy: StrategyArg,
    /// How each configuration is scored
    #[arg(long, value_enum, default_value = "train")]
    oracle: Oracle,
    #[command(flatten)]
    data: DataArgs,
    /// Training epochs per trial
    #[arg(long, default_value_t = 2)]
    epochs: usize,
    /// Search seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Limit a dimension's values (repeatable), e.g. --restrict pool=max_pool,blur_pool
    #[arg(long = "restrict", value_parser = parse_pair)]
    restrict: Vec<(String, String)>,
    /// Random configurations before the surrogate is used
    #[arg(long, default_value_t = 16)]
    initial_design: usize,
    /// Candidates scored by expected improvement per proposal
    #[arg(long, default_value_t = 500)]
    candidates: usize,
    /// Flat key = value file with training keys for each trial
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one training key (repeatable)
    #[arg(long = "set", value_parser = parse_pair)]
    overrides: Vec<(String, String)>,
    /// Output directory for history.jsonl and incumbent.cfg
    #[arg(long, default_value = "runs/search")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ImportanceArgs {
    /// JSON-lines history written by `search`
    history: PathBuf,
    /// Emit a JSON object mapping dimension name to importance
    #[arg(long)]
    json: bool,
    /// Surrogate seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Model name
    model: String,
    /// Images per forward pass
    #[arg(long, default_value_t = 8)]
    batch: usize,
    /// Timed repetitions after 3 warmup passes
    #[arg(long, default_value_t = 10)]
    reps: usize,
    /// Square input side [default: the model's own]
    #[arg(long)]
    input: Option<usize>,
    /// Emit JSON
    #[arg(long)]
    json: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let msg = match &f {
                Failure::Usage(m) => format!("error: {m}"),
                Failure::Diverged(m) => format!("diverged: {m}"),
                Failure::Runtime(m) => format!("error: {m}"),
            };
            eprintln!("{msg}");
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if cli.threads == 0 {
        return Err(Failure::usage("--threads must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(Failure::usage)?;
    match cli.command {
        Command::Summarize(a) => summarize(a),
        Command::Train(a) => train(a),
        Command::Search(a) => run_search(a),
        Command::Importance(a) => importance(a),
        Command::Bench(a) => bench(a, cli.threads),
    }
}

fn variant(name: &str) -> Result<Variant, Failure> {
    Variant::parse(name).map_err(|_| {
        let names: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
        Failure::usage(format!("unknown model {name:?}; known models: {}", names.join(", ")))
    })
}

fn spec_for(name: &str, input: Option<usize>, classes: Option<usize>) -> Result<ArchSpec, Failure> {
    let mut spec = ArchSpec::named(variant(name)?);
    if let Some(s) = input {
        spec = spec.with_input(s);
    }
    if let Some(c) = classes {
        spec = spec.with_classes(c);
    }
    spec.validate().map_err(Failure::usage)?;
    Ok(spec)
}

fn summarize(a: SummarizeArgs) -> Result<(), Failure> {
    let spec = spec_for(&a.model, a.input, a.classes)?;
    let model = build::<f32>(&spec, 0).map_err(Failure::usage)?;
    let report = model.cost_report(spec.input_size).map_err(Failure::usage)?;
    if a.json {
        println!("{}", report.to_json());
    } else {
        print!("{}", report.to_table());
    }
    Ok(())
}

/// Train and validation splits. A CIFAR directory supplies its own test
/// split; a single file or the synthetic set is split by `holdout`.
fn load_data(a: &DataArgs, seed: u64) -> Result<(Dataset, Dataset), Failure> {
    if !(a.holdout > 0.0 && a.holdout < 1.0) {
        return Err(Failure::usage(format!("--holdout {} must lie in (0, 1)", a.holdout)));
    }
    let (mut train, mut val) = match (&a.data, a.synthetic) {
        (None, false) => return Err(Failure::usage("a dataset is required: pass --synthetic or --data <path>")),
        (None, true) => {
            let d = synthetic_dataset(&SyntheticSpec {
                per_class: a.per_class,
                seed,
                ..Default::default()
            })
            .map_err(Failure::usage)?;
            d.split(a.holdout, seed)
        }
        (Some(p), _) => {
            if !p.exists() {
                return Err(Failure::usage(format!("dataset path {} does not exist", p.display())));
            }
            let v = match a.dataset {
                DatasetKind::Cifar100 => CifarVariant::Cifar100,
                DatasetKind::Cifar10 => CifarVariant::Cifar10,
            };
            if p.is_dir() {
                (
                    load_cifar(p, v, "train").map_err(Failure::usage)?,
                    load_cifar(p, v, "test").map_err(Failure::usage)?,
                )
            } else {
                load_cifar(p, v, "train").map_err(Failure::usage)?.split(a.holdout, seed)
            }
        }
    };
    if let Some(k) = a.classes {
        if k == 0 || k > train.num_classes {
            return Err(Failure::usage(format!("--classes {k} must lie in 1..={}", train.num_classes)));
        }
        train = train.first_classes(k);
        val = val.first_classes(k);
    }
    if let Some(n) = a.limit {
        train = train.take(n);
    }
    if train.is_empty() || val.is_empty() {
        return Err(Failure::usage("the train or validation split is empty"));
    }
    Ok((train, val))
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    model: &'a str,
    architecture: &'a ArchSpec,
    config: &'a TrainConfig,
    train_records: usize,
    val_records: usize,
    steps: usize,
    best_top1: f64,
    best_epoch: usize,
    final_top1: f64,
    final_top5: f64,
    final_val_loss: f64,
}

fn train(a: TrainArgs) -> Result<(), Failure> {
    let v = variant(&a.model)?;
    let mut file_pairs = match &a.config {
        Some(p) => read_pairs(p)?,
        None => Vec::new(),
    };
    let mut arch_pairs: Vec<(String, String)> = file_pairs.iter().filter(|(k, _)| is_arch_key(k)).cloned().collect();
    file_pairs.retain(|(k, _)| !is_arch_key(k));
    if let Some(p) = &a.arch_config {
        let pairs = read_pairs(p)?;
        if let Some((k, _)) = pairs.iter().find(|(k, _)| !is_arch_key(k)) {
            return Err(Failure::usage(format!("{}: {k:?} is not an architecture key", p.display())));
        }
        arch_pairs.extend(pairs);
    }
    let (flag_arch, flag_train): (Vec<_>, Vec<_>) = a.overrides.iter().cloned().partition(|(k, _)| is_arch_key(k));
    arch_pairs.extend(flag_arch);
    let mut flags = flag_train;
    for (k, val) in [
        ("epochs", a.epochs.map(|x| x.to_string())),
        ("learning_rate", a.lr.map(|x| x.to_string())),
        ("batch_size", a.batch_size.map(|x| x.to_string())),
        ("seed", a.seed.map(|x| x.to_string())),
    ] {
        if let Some(val) = val {
            flags.push((k.to_string(), val));
        }
    }
    let mut train_pairs = file_pairs;
    train_pairs.extend(flags);

    let mut cfg = TrainConfig::for_variant(v);
    if !train_pairs.iter().any(|(k, _)| k == "warmup_epochs") {
        if let Some((_, e)) = train_pairs.iter().rev().find(|(k, _)| k == "epochs") {
            let e: usize = e.parse().map_err(|_| Failure::usage(format!("epochs: expected an integer, got {e:?}")))?;
            cfg.warmup_epochs = cfg.warmup_epochs.min(e.saturating_sub(1));
        }
    }
    apply_train(&mut cfg, &train_pairs)?;

    let mut spec = ArchSpec::named(v);
    if !arch_pairs.is_empty() {
        if v != Variant::ReducedNas {
            return Err(Failure::usage("architecture keys only apply to --model reduced_nas"));
        }
        let mut arch = ArchConfig::default();
        apply_arch(&mut arch, &arch_pairs)?;
        spec.config = arch;
    }
    let (train_set, val_set) = load_data(&a.data, cfg.seed)?;
    spec = spec.with_classes(train_set.num_classes);
    spec.validate().map_err(Failure::usage)?;
    let mut model = build::<f32>(&spec, cfg.seed).map_err(Failure::usage)?;

    std::fs::create_dir_all(&a.out).map_err(|e| Failure::Runtime(format!("{}: {e}", a.out.display())))?;
    let opts = TrainOptions {
        record_time: a.record_time,
        metrics_csv: Some(a.out.join("metrics.csv")),
        checkpoint: Some(a.out.join("best.ckpt")),
        eval_train: false,
        verbose: a.verbose,
    };
    let report = train_epochs(&mut model, &train_set, &val_set, &cfg, &opts).map_err(Failure::runtime)?;
    let last = report.history.last();
    let summary = TrainSummary {
        model: v.name(),
        architecture: &spec,
        config: &cfg,
        train_records: train_set.len(),
        val_records: val_set.len(),
        steps: report.steps,
        best_top1: report.best_top1,
        best_epoch: report.best_epoch,
        final_top1: last.map_or(0.0, |h| h.val_top1),
        final_top5: last.map_or(0.0, |h| h.val_top5),
        final_val_loss: last.map_or(f64::NAN, |h| h.val_loss),
    };
    write_json(&a.out.join("summary.json"), &summary).map_err(Failure::runtime)?;
    println!(
        "{}: {} epochs, {} steps, best top-1 {:.4} (epoch {}), outputs in {}",
        v.name(),
        report.history.len(),
        report.steps,
        report.best_top1,
        report.best_epoch,
        a.out.display()
    );
    Ok(())
}

fn search_train_config(a: &SearchArgs) -> Result<TrainConfig, Failure> {
    let mut cfg = TrainConfig {
        learning_rate: 5e-3,
        batch_size: 64,
        epochs: a.epochs,
        warmup_epochs: 0,
        ..TrainConfig::default().plain()
    };
    let mut pairs = match &a.config {
        Some(p) => read_pairs(p)?,
        None => Vec::new(),
    };
    pairs.extend(a.overrides.iter().cloned());
    apply_train(&mut cfg, &pairs)?;
    if cfg.epochs == 0 {
        return Err(Failure::usage("--epochs must be at least 1"));
    }
    Ok(cfg)
}

fn run_search(a: SearchArgs) -> Result<(), Failure> {
    let budget = Budget {
        max_trials: a.trials,
        wall_seconds: a.budget_seconds,
    };
    budget.validate().map_err(Failure::usage)?;
    let mut space = SearchSpace::full();
    for (dim, values) in &a.restrict {
        let labels: Vec<&str> = values.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
        space = space.restrict(dim, &labels).map_err(Failure::usage)?;
    }
    let mut objective: Box<dyn Objective> = match a.oracle {
        Oracle::Planted => Box::new(PlantedObjective::default()),
        Oracle::Train => {
            let cfg = search_train_config(&a)?;
            let (train_set, val_set) = load_data(&a.data, a.seed)?;
            Box::new(TrainingObjective {
                train: train_set,
                val: val_set,
                cfg,
            })
        }
    };
    let opts = SearchOptions {
        strategy: match a.strategy {
            StrategyArg::Random => Strategy::Random,
            StrategyArg::Smbo => Strategy::Smbo,
        },
        budget,
        seed: a.seed,
        initial_design: a.initial_design,
        candidates: a.candidates,
        ..Default::default()
    };
    std::fs::create_dir_all(&a.out).map_err(|e| Failure::Runtime(format!("{}: {e}", a.out.display())))?;
    let out = search(&space, objective.as_mut(), &opts).map_err(|e| match e {
        Error::Search(_) => Failure::usage(e),
        other => Failure::runtime(other),
    })?;
    write_history(&a.out.join("history.jsonl"), &out.history).map_err(Failure::runtime)?;
    std::fs::write(a.out.join("incumbent.cfg"), arch_to_text(&out.incumbent.config))
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    println!(
        "{} trials, incumbent accuracy {:.4} ({} diverged)",
        out.history.len(),
        out.incumbent.val_accuracy,
        out.history.iter().filter(|t| t.diverged).count()
    );
    print!("{}", arch_to_text(&out.incumbent.config));
    Ok(())
}

fn importance(a: ImportanceArgs) -> Result<(), Failure> {
    if !a.history.exists() {
        return Err(Failure::usage(format!("history file {} does not exist", a.history.display())));
    }
    let history = read_history(&a.history).map_err(Failure::usage)?;
    let inc = incumbent_index(&history).ok_or_else(|| Failure::usage("the history is empty"))?;
    let report =
        lpi_importance(&history, &history[inc].config, &SearchSpace::full(), a.seed).map_err(Failure::usage)?;
    if a.json {
        println!("{}", report.to_json());
    } else {
        print!("{}", report.to_table());
    }
    Ok(())
}

#[derive(Serialize)]
struct BenchReport {
    model: String,
    input: usize,
    batch: usize,
    reps: usize,
    warmups: usize,
    threads: usize,
    mean_images_per_second: f64,
    std_images_per_second: f64,
}

const WARMUPS: usize = 3;

fn bench(a: BenchArgs, threads: usize) -> Result<(), Failure> {
    if a.batch == 0 || a.reps == 0 {
        return Err(Failure::usage("--batch and --reps must be positive"));
    }
    let spec = spec_for(&a.model, a.input, None)?;
    let mut model = build::<f32>(&spec, 0).map_err(Failure::usage)?;
    let s = spec.input_size;
    let x = Tensor::<f32>::from_fn(&[a.batch, 3, s, s], |i| ((i % 255) as f32 / 255.0) - 0.5);
    let mut rates = Vec::with_capacity(a.reps);
    for r in 0..WARMUPS + a.reps {
        let t = Instant::now();
        model.infer(&x).map_err(Failure::runtime)?;
        if r >= WARMUPS {
            rates.push(a.batch as f64 / t.elapsed().as_secs_f64());
        }
    }
    let (mean, std) = mean_std(&rates);
    let report = BenchReport {
        model: spec.variant.name().to_string(),
        input: s,
        batch: a.batch,
        reps: a.reps,
        warmups: WARMUPS,
        threads,
        mean_images_per_second: mean,
        std_images_per_second: std,
    };
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report).map_err(Failure::usage)?);
    } else {
        println!(
            "{} @ {}px, batch {}, {} reps after {} warmups, {} thread(s): {:.2} ± {:.2} images/s",
            report.model, s, a.batch, a.reps, WARMUPS, threads, mean, std
        );
    }
    Ok(())
}

/// Sample standard deviation; 0 for a single value.
fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}


#[cfg(test)]
mod tests {
    use clap::CommandFactory;

    use super::*;

    #[test]
    fn every_flag_is_documented_in_help() {
        let mut root = Cli::command();
        root.build();
        for sub in root.get_subcommands() {
            let mut sub = sub.clone();
            let help = sub.render_long_help().to_string();
            for arg in sub.get_arguments() {
                if arg.get_id() == "help" || arg.get_id() == "version" {
                    continue;
                }
                let doc = arg.get_help().map(|h| h.to_string()).unwrap_or_default();
                assert!(!doc.trim().is_empty(), "{} {}: undocumented", sub.get_name(), arg.get_id());
                let shown = match arg.get_long() {
                    Some(l) => format!("--{l}"),
                    None => format!("<{}>", arg.get_id().as_str().to_uppercase()),
                };
                assert!(help.contains(&shown), "{}: {shown} missing from help", sub.get_name());
                assert!(help.contains(doc.trim()), "{}: help text of {shown} missing", sub.get_name());
            }
        }
    }

    #[test]
    fn sample_std_is_zero_for_one_value() {
        assert_eq!(mean_std(&[5.0]), (5.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }
}
