mod manifest;

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ooskge::evaluation::{baseline_oov, baseline_popularity};
use ooskge::graph::{load_triples, VocabPolicy};
use ooskge::split::DEFAULT_OOS_FRACTION;
use ooskge::training::train_with_observer;
use ooskge::{
    build_split, evaluate, read_split, write_split, Aggregator, AggregatorKind, EmbeddingModel,
    KnowledgeGraph, OutOfSampleSplit, RankingReport, TrainConfig,
};

use manifest::{checksums, RunManifest, SPLIT_FILES};

const SEED_ENV: &str = "OOSKGE_SEED";

#[derive(Parser)]
#[command(name = "ooskge", version, about = "Out-of-sample entity embeddings for knowledge graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Merge triple files and build an out-of-sample split.
    BuildDataset(BuildArgs),
    /// Train a model on a split's training graph.
    Train(TrainArgs),
    /// Rank held-out triples with a trained model or a baseline.
    Evaluate(EvalArgs),
    /// Train and evaluate one model per ψ value.
    SweepPsi(SweepArgs),
}

#[derive(Args)]
struct BuildArgs {
    /// Triple files to merge (typically train, valid and test).
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_OOS_FRACTION, value_parser = parse_fraction)]
    oos_fraction: f64,
    /// Falls back to $OOSKGE_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

/// Hyperparameter flags; each overrides the config file.
#[derive(Args, Default)]
struct Overrides {
    /// key=value file; `#` starts a comment.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    neg_ratio: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_aggregator)]
    aggregator: Option<AggregatorKind>,
    #[arg(long)]
    agg_lambda: Option<f64>,
    #[arg(long)]
    eval_every: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory written by `build-dataset`.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    psi: Option<f64>,
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Baseline {
    Popularity,
    Oov,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Part {
    Valid,
    Test,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    split: PathBuf,
    /// Required except with `--baseline popularity`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Defaults to the training run's aggregator, else eravg.
    #[arg(long, value_parser = parse_aggregator)]
    aggregator: Option<AggregatorKind>,
    #[arg(long)]
    agg_lambda: Option<f64>,
    #[arg(long, value_enum)]
    baseline: Option<Baseline>,
    #[arg(long, value_enum, default_value = "test")]
    part: Part,
    /// Seed for the popularity tie-break.
    #[arg(long)]
    seed: Option<u64>,
    /// Evaluate even if the split differs from the one the model was trained on.
    #[arg(long)]
    force: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Comma-separated ψ values.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    psi: Vec<f64>,
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long)]
    out: PathBuf,
}

/// Exit 2 for bad invocations or configuration, 1 for everything else.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<ooskge::Error> for Failure {
    fn from(e: ooskge::Error) -> Self {
        match e {
            ooskge::Error::InvalidConfig(_) => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn parse_fraction(s: &str) -> Result<f64, String> {
    let f: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if f > 0.0 && f < 1.0 {
        Ok(f)
    } else {
        Err(format!("{f} is outside (0, 1)"))
    }
}

fn parse_aggregator(s: &str) -> Result<AggregatorKind, String> {
    s.parse().map_err(|e: ooskge::Error| e.to_string())
}

fn env_seed() -> Result<Option<u64>, Failure> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::Usage(format!("{SEED_ENV}=`{v}` is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CmdResult {
    fs::write(path, contents).map_err(|e| io_failure(path, e))
}

fn create_dir(path: &Path) -> CmdResult {
    fs::create_dir_all(path).map_err(|e| io_failure(path, e))
}

/// Defaults, then $OOSKGE_SEED, then the config file, then flags.
fn resolve_config(o: &Overrides, psi: Option<f64>) -> Result<TrainConfig, Failure> {
    let mut cfg = TrainConfig::default();
    if let Some(seed) = env_seed()? {
        cfg.seed = seed;
    }
    if let Some(path) = &o.config {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
        cfg.apply_kv(&text)
            .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    }
    macro_rules! take {
        ($($flag:ident => $field:ident),*) => {
            $(if let Some(v) = o.$flag { cfg.$field = v; })*
        };
    }
    take!(lr => lr, lambda => lambda_reg, neg_ratio => neg_ratio, dim => dim,
          epochs => epochs, batch_size => batch_size, seed => seed,
          aggregator => aggregator, eval_every => eval_every);
    if let Some(v) = o.agg_lambda {
        cfg.agg_lambda = Some(v);
    }
    if let Some(v) = psi {
        cfg.psi = v;
    }
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

fn merge_inputs(inputs: &[PathBuf]) -> Result<KnowledgeGraph, Failure> {
    for path in inputs {
        if !path.is_file() {
            return Err(Failure::Usage(format!("{}: no such file", path.display())));
        }
    }
    let mut merged = KnowledgeGraph::empty();
    for path in inputs {
        let part = load_triples(path, Some((&merged, VocabPolicy::Extend)))
            .map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
        let seen: HashSet<_> = merged.triples().iter().copied().collect();
        let mut triples = merged.triples().to_vec();
        let before = triples.len() + part.len();
        triples.extend(part.triples().iter().filter(|t| !seen.contains(t)));
        if triples.len() < before {
            eprintln!(
                "{}: skipped {} triples already present in earlier inputs",
                path.display(),
                before - triples.len()
            );
        }
        merged = KnowledgeGraph::from_parts(part.entities().clone(), part.relations().clone(), triples)?;
    }
    Ok(merged)
}

fn cmd_build_dataset(args: BuildArgs) -> CmdResult {
    let seed = match args.seed {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    };
    let all = merge_inputs(&args.inputs)?;
    let split = build_split(&all, args.oos_fraction, seed)?;
    create_dir(&args.out)?;
    write_split(&split, &args.out)?;
    let s = split.stats;
    println!(
        "{} triples merged; train: {} triples, {} entities, {} relations; out-of-sample: {} valid ({} queries), {} test ({} queries)",
        all.len(),
        s.train_triples,
        s.in_sample_entities,
        s.relations,
        s.oos_valid,
        s.valid_queries,
        s.oos_test,
        s.test_queries
    );
    Ok(())
}

struct TrainedRun {
    outcome: ooskge::training::TrainOutcome,
    seconds: f64,
}

fn run_training(split: &OutOfSampleSplit, cfg: &TrainConfig, verbose: bool) -> Result<TrainedRun, Failure> {
    let start = Instant::now();
    let valid = (!split.valid.is_empty()).then_some(&split.valid[..]);
    let outcome = train_with_observer(&split.train, cfg, valid, |e| {
        if verbose {
            if let Some(mrr) = e.valid_mrr {
                eprintln!("epoch {}: loss {:.4}, valid MRR {:.4}", e.epoch, e.loss, mrr);
            }
        }
    })?;
    Ok(TrainedRun {
        outcome,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn cmd_train(args: TrainArgs) -> CmdResult {
    let cfg = resolve_config(&args.overrides, args.psi)?;
    let split = read_split(&args.dataset)?;
    let sums = checksums(&args.dataset)?;
    let run = run_training(&split, &cfg, true)?;

    create_dir(&args.out)?;
    let checkpoint = args.out.join("checkpoint.bin");
    run.outcome.model.save(&checkpoint)?;
    write_file(&args.out.join("run_log.tsv"), run.outcome.log_tsv())?;
    write_file(&args.out.join("config.txt"), cfg.to_kv())?;
    let manifest = RunManifest::new(&cfg, &args.dataset, sums)
        .artifact("checkpoint", "checkpoint.bin")
        .artifact("run_log", "run_log.tsv")
        .artifact("config", "config.txt")
        .with_training(&run.outcome, run.seconds);
    manifest.save(&args.out.join(manifest::FILE_NAME))?;
    println!(
        "best epoch {} (valid MRR {}), checkpoint {}",
        run.outcome.best_epoch,
        run.outcome
            .best_valid_mrr
            .map_or("n/a".to_string(), |m| format!("{m:.4}")),
        checkpoint.display()
    );
    Ok(())
}

/// Compares the split against the checksums recorded when the checkpoint was
/// trained, if a manifest sits next to it.
fn check_dataset(checkpoint: &Path, split_dir: &Path, force: bool) -> Result<Option<RunManifest>, Failure> {
    let dir = checkpoint.parent().unwrap_or(Path::new("."));
    let Some(manifest) = RunManifest::load_if_present(&dir.join(manifest::FILE_NAME))? else {
        return Ok(None);
    };
    let current = checksums(split_dir)?;
    let changed: Vec<&str> = SPLIT_FILES
        .iter()
        .copied()
        .filter(|f| manifest.dataset.checksums.get(*f) != current.get(*f))
        .collect();
    if !changed.is_empty() {
        let msg = format!(
            "split files differ from the ones the model was trained on: {}",
            changed.join(", ")
        );
        if !force {
            return Err(Failure::Runtime(format!("{msg} (use --force to evaluate anyway)")));
        }
        eprintln!("warning: {msg}");
    }
    Ok(Some(manifest))
}

fn write_report(report: &RankingReport, out: &Path) -> CmdResult {
    create_dir(out)?;
    let mut tsv = Vec::new();
    report.write_tsv(&mut tsv).map_err(|e| io_failure(out, e))?;
    write_file(&out.join("report.tsv"), tsv)?;
    let mut bins = Vec::new();
    report.write_bins_tsv(&mut bins).map_err(|e| io_failure(out, e))?;
    write_file(&out.join("bins.tsv"), bins)?;
    let table = report.to_string();
    write_file(&out.join("report.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn cmd_evaluate(args: EvalArgs) -> CmdResult {
    let split = read_split(&args.split)?;
    let groups = match args.part {
        Part::Valid => &split.valid,
        Part::Test => &split.test,
    };
    if args.baseline == Some(Baseline::Popularity) {
        let seed = match args.seed {
            Some(s) => s,
            None => env_seed()?.unwrap_or(0),
        };
        let report = baseline_popularity(&split.train, groups, seed)?;
        return write_report(&report, &args.out);
    }
    let checkpoint = args
        .checkpoint
        .as_deref()
        .ok_or_else(|| Failure::Usage("--checkpoint is required unless --baseline popularity".into()))?;
    let trained = check_dataset(checkpoint, &args.split, args.force)?;
    let model = EmbeddingModel::load(checkpoint)?;
    if !model.is_bound_to(&split.train) {
        return Err(Failure::Runtime(format!(
            "{}: vocabulary does not match {}",
            checkpoint.display(),
            args.split.join("train.txt").display()
        )));
    }
    let report = if args.baseline == Some(Baseline::Oov) {
        baseline_oov(&model, groups)?
    } else {
        let recorded = trained.as_ref().map(|m| &m.config);
        let kind = match (args.aggregator, recorded) {
            (Some(k), _) => k,
            (None, Some(c)) => c.aggregator.parse()?,
            (None, None) => AggregatorKind::ErAvg,
        };
        let lambda = args
            .agg_lambda
            .or(recorded.map(|c| c.agg_lambda))
            .unwrap_or(TrainConfig::default().lambda_reg);
        let agg = Aggregator::new(kind, lambda).map_err(|e| Failure::Usage(e.to_string()))?;
        evaluate(groups, &model, &agg)?
    };
    write_report(&report, &args.out)
}

fn cmd_sweep_psi(args: SweepArgs) -> CmdResult {
    if args.psi.is_empty() {
        return Err(Failure::Usage("--psi needs at least one value".into()));
    }
    let mut psis = args.psi.clone();
    psis.sort_by(f64::total_cmp);
    psis.dedup();
    let configs = psis
        .iter()
        .map(|&p| resolve_config(&args.overrides, Some(p)))
        .collect::<Result<Vec<_>, _>>()?;
    let split = read_split(&args.dataset)?;
    create_dir(&args.out)?;
    let mut tsv = String::from("psi\tmrr\tvalid_mrr\tbest_epoch\n");
    for cfg in &configs {
        let run = run_training(&split, cfg, false)?;
        let report = evaluate(&split.test, &run.outcome.model, &cfg.aggregator()?)?;
        let valid = run
            .outcome
            .best_valid_mrr
            .map(|m| format!("{m:.6}"))
            .unwrap_or_default();
        eprintln!("psi {}: test MRR {:.4}", cfg.psi, report.mrr);
        tsv.push_str(&format!(
            "{}\t{:.6}\t{valid}\t{}\n",
            cfg.psi, report.mrr, run.outcome.best_epoch
        ));
    }
    write_file(&args.out.join("psi_sweep.tsv"), &tsv)?;
    print!("{tsv}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::BuildDataset(a) => cmd_build_dataset(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::SweepPsi(a) => cmd_sweep_psi(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
