//! `drnet`: binarize tabular data, train a rules network, and read it back
//! as an IF/THEN rule set.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 training divergence.

use std::fmt::Write as _;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use drnet::experiments::{self, ExperimentData, DEFAULT_LAMBDA1_GRID};
use drnet::feature_codec::{fit_binarizer, infer_schema};
use drnet::model_io::TrainedModel;
use drnet::network::BinaryRows;
use drnet::trainer::train_with;
use drnet::{BinarizedDataset, RawTable, RuleSet, Schema, TrainConfig};
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "drnet", version, about = "Learn DNF rule sets with a two-layer rules network")]
struct Cli {
    /// Output style for results on stdout.
    #[arg(long, value_enum, default_value_t = Format::Text, global = true)]
    format: Format,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Structured,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit quantile/one-hot binarization on a CSV and write a dataset container.
    Binarize {
        #[command(flatten)]
        input: CsvInput,
        /// Dataset container to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a network and write the model file.
    Train {
        #[command(flatten)]
        input: CsvInput,
        #[command(flatten)]
        hyper: Hyper,
        /// Model file to write.
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch training log (CSV).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Print the rule set of a trained model.
    Extract {
        /// Model file written by `train`.
        #[arg(long)]
        model: PathBuf,
        /// Also write the rule set as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict labels for a dataset container or CSV.
    Predict {
        #[command(flatten)]
        source: Predictor,
        /// CSV or dataset container.
        #[arg(long)]
        data: PathBuf,
        /// Write predictions here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Accuracy and confusion counts on labelled data.
    Evaluate {
        #[command(flatten)]
        source: Predictor,
        /// Labelled CSV or dataset container.
        #[arg(long)]
        data: PathBuf,
    },
    /// Cross-validated accuracy and complexity over a grid of λ1 values.
    Sweep {
        #[command(flatten)]
        input: CsvInput,
        #[command(flatten)]
        hyper: Hyper,
        /// Outer folds.
        #[arg(long, default_value_t = 5)]
        folds: usize,
        /// Comma-separated λ1 values [default: 1e-4,3e-4,1e-3,3e-3,1e-2].
        #[arg(long, value_delimiter = ',')]
        grid: Vec<f64>,
        /// Parallel training runs; results do not depend on this.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Select λ1 per outer fold by inner cross-validation instead of
        /// reporting every grid value.
        #[arg(long)]
        nested: bool,
        /// Directory for the fold and point CSVs.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct CsvInput {
    /// CSV with a header row, or a dataset container from `binarize`.
    #[arg(long)]
    data: PathBuf,
    /// Column schema (JSON). Without one, kinds are inferred and the last
    /// column is the target.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Quantile thresholds per numerical column.
    #[arg(long, default_value_t = drnet::feature_codec::DEFAULT_THRESHOLDS)]
    thresholds: usize,
}

#[derive(Args, Debug)]
struct Hyper {
    /// Regularization weight in the Rules phase.
    #[arg(long, default_value_t = 1e-3)]
    lambda1: f64,
    /// Regularization weight in the OR phase.
    #[arg(long, default_value_t = 1e-5)]
    lambda2: f64,
    /// Rules Layer width.
    #[arg(long, default_value_t = 50)]
    neurons: usize,
    #[arg(long, default_value_t = 10_000)]
    epochs: usize,
    /// Epochs per phase before switching layers.
    #[arg(long, default_value_t = 1_000)]
    phase_length: usize,
    #[arg(long, default_value_t = 2_000)]
    batch_size: usize,
    /// Adam learning rate.
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false)]
struct Predictor {
    /// Model file written by `train`.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Rule-set JSON written by `extract --out`.
    #[arg(long)]
    rules: Option<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Core(drnet::Error),
}

impl From<drnet::Error> for CliError {
    fn from(e: drnet::Error) -> Self {
        CliError::Core(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_divergence() { 3 } else { 2 })
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let format = cli.format;
    match cli.command {
        Command::Binarize { input, out } => binarize(&input, &out, format),
        Command::Train { input, hyper, out, log } => train(&input, &hyper, &out, log.as_deref(), format),
        Command::Extract { model, out } => extract(&model, out.as_deref(), format),
        Command::Predict { source, data, out } => predict(&source, &data, out.as_deref()),
        Command::Evaluate { source, data } => evaluate(&source, &data, format),
        Command::Sweep { input, hyper, folds, grid, jobs, nested, out } => {
            sweep(&input, &hyper, folds, &grid, jobs, nested, out.as_deref(), format)
        }
    }
}

fn banner(seed: Option<u64>, config_hash: Option<&str>) {
    eprintln!(
        "drnet {} seed={} config={}",
        env!("CARGO_PKG_VERSION"),
        seed.map_or("-".to_owned(), |s| s.to_string()),
        config_hash.unwrap_or("-")
    );
}

impl Hyper {
    fn config(&self, thresholds: usize) -> CliResult<TrainConfig> {
        let config = TrainConfig {
            neurons: self.neurons,
            lr: self.lr,
            epochs: self.epochs,
            phase_length: self.phase_length,
            batch_size: self.batch_size,
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            seed: self.seed,
            thresholds,
            ..TrainConfig::default()
        };
        config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(config)
    }
}

/// Refuses to write over any of the command's inputs.
fn check_output(out: &Path, inputs: &[&Path]) -> CliResult<()> {
    let canon = |p: &Path| std::fs::canonicalize(p).ok();
    let target = canon(out);
    for input in inputs {
        if target.is_some() && target == canon(input) {
            return Err(CliError::Usage(format!("output {} would overwrite an input file", out.display())));
        }
    }
    Ok(())
}

fn is_container(path: &Path) -> CliResult<bool> {
    let mut prefix = [0u8; 8];
    let mut file = std::fs::File::open(path).map_err(|e| drnet::Error::io(path, e))?;
    let mut read = 0;
    while read < prefix.len() {
        match file.read(&mut prefix[read..]).map_err(|e| drnet::Error::io(path, e))? {
            0 => break,
            n => read += n,
        }
    }
    Ok(BinarizedDataset::has_magic(&prefix[..read]))
}

fn load_schema(input: &CsvInput, table: &RawTable) -> CliResult<Schema> {
    match &input.schema {
        Some(path) => Ok(Schema::from_path(path)?),
        None => {
            let target = table.headers.last().ok_or(drnet::Error::EmptyTable)?;
            Ok(infer_schema(table, target)?)
        }
    }
}

/// Fits the binarizer on the whole CSV, or loads a container as is.
fn load_training_data(input: &CsvInput) -> CliResult<(BinarizedDataset, usize)> {
    if is_container(&input.data)? {
        if input.schema.is_some() {
            return Err(CliError::Usage("--schema applies to CSV input, not to a dataset container".into()));
        }
        return Ok((BinarizedDataset::load(&input.data)?, 0));
    }
    let table = RawTable::from_path(&input.data)?;
    let schema = load_schema(input, &table)?;
    let map = fit_binarizer(&table, &schema, input.thresholds)?;
    let encoded = BinarizedDataset::encode_table(&table, &map)?;
    Ok((encoded.dataset, encoded.rejected))
}

fn binarize(input: &CsvInput, out: &Path, format: Format) -> CliResult<()> {
    check_output(out, &[&input.data])?;
    if is_container(&input.data)? {
        return Err(CliError::Usage(format!("{} is already a dataset container", input.data.display())));
    }
    banner(None, None);
    let (ds, rejected) = load_training_data(input)?;
    ds.save(out)?;
    let positives = ds.labels().iter().filter(|&&y| y == 1).count();
    match format {
        Format::Text => {
            println!("{} rows ({} positive), {} binary features, {} rows skipped for missing values", ds.n(), positives, ds.d(), rejected);
            print!("{}", ds.map.listing());
        }
        Format::Structured => println!(
            "{}",
            json!({ "rows": ds.n(), "positives": positives, "features": ds.d(), "skipped": rejected, "map": ds.map })
        ),
    }
    Ok(())
}

fn train(input: &CsvInput, hyper: &Hyper, out: &Path, log: Option<&Path>, format: Format) -> CliResult<()> {
    check_output(out, &[&input.data])?;
    if let Some(log) = log {
        check_output(log, &[&input.data])?;
    }
    let config = hyper.config(input.thresholds)?;
    banner(Some(config.seed), Some(&config.hash()));
    let (ds, rejected) = load_training_data(input)?;
    if rejected > 0 {
        eprintln!("skipped {rejected} rows with missing values");
    }
    let report_every = (config.epochs / 20).max(1);
    let outcome = train_with(&ds, &config, |r| {
        if r.epoch % report_every == 0 || r.epoch + 1 == config.epochs {
            eprintln!(
                "epoch {:>6} {:<5} bce {:.5} reg {:.4} total {:.5} acc {:.4}",
                r.epoch,
                r.phase.name(),
                r.bce,
                r.reg,
                r.total,
                r.train_acc
            );
        }
    })?;
    let model = TrainedModel::new(config, ds.map.clone(), outcome.net)?;
    model.save(out)?;
    if let Some(log) = log {
        std::fs::write(log, outcome.log.to_csv()).map_err(|e| drnet::Error::io(log, e))?;
    }
    let extraction = model.extract()?;
    for w in &extraction.warnings {
        eprintln!("warning: {w}");
    }
    let preds = model.net.predict(&BinaryRows::from_dataset(&ds))?;
    let acc = accuracy(&preds, ds.labels());
    let cx = extraction.rules.complexity();
    match format {
        Format::Text => println!(
            "train accuracy {acc:.4}; {} rules, {} predicates, model complexity {}",
            cx.num_rules, cx.total_predicates, cx.model_complexity
        ),
        Format::Structured => println!("{}", json!({ "train_accuracy": acc, "complexity": cx, "model": out })),
    }
    Ok(())
}

fn extract(model_path: &Path, out: Option<&Path>, format: Format) -> CliResult<()> {
    if let Some(out) = out {
        check_output(out, &[model_path])?;
    }
    let model = TrainedModel::load(model_path)?;
    banner(Some(model.config.seed), Some(&model.config.hash()));
    let extraction = model.extract()?;
    for w in &extraction.warnings {
        eprintln!("warning: {w}");
    }
    let rules = extraction.rules;
    if let Some(out) = out {
        std::fs::write(out, rules.to_json()).map_err(|e| drnet::Error::io(out, e))?;
    }
    let cx = rules.complexity();
    match format {
        Format::Text => {
            print!("{}", rules.render()?);
            eprintln!(
                "{} rules, {} predicates, model complexity {}, rule complexity {:.2}",
                cx.num_rules, cx.total_predicates, cx.model_complexity, cx.rule_complexity
            );
        }
        Format::Structured => println!("{}", rules.to_json()),
    }
    Ok(())
}

/// Either a trained network or a rule set; both predict through the same
/// feature map.
enum Loaded {
    Model(Box<TrainedModel>),
    Rules(RuleSet),
}

impl Loaded {
    fn open(source: &Predictor) -> CliResult<Loaded> {
        match (&source.model, &source.rules) {
            (Some(m), None) => {
                let model = TrainedModel::load(m)?;
                banner(Some(model.config.seed), Some(&model.config.hash()));
                Ok(Loaded::Model(Box::new(model)))
            }
            (None, Some(r)) => {
                let text = std::fs::read_to_string(r).map_err(|e| drnet::Error::io(r, e))?;
                banner(None, None);
                Ok(Loaded::Rules(RuleSet::from_json(&text).map_err(|e| e.context(r.display().to_string()))?))
            }
            _ => Err(CliError::Usage("give exactly one of --model or --rules".into())),
        }
    }

    fn map(&self) -> &drnet::BinFeatureMap {
        match self {
            Loaded::Model(m) => &m.features,
            Loaded::Rules(r) => &r.map,
        }
    }

    fn predict_rows(&self, rows: &[Vec<u8>]) -> CliResult<Vec<u8>> {
        match self {
            Loaded::Model(m) => {
                let ev = m.net.evaluator();
                Ok(rows.iter().map(|x| ev.predict(x)).collect::<drnet::Result<_>>()?)
            }
            Loaded::Rules(r) => Ok(rows.iter().map(|x| r.eval(x)).collect::<drnet::Result<_>>()?),
        }
    }

    fn check_width(&self, ds: &BinarizedDataset) -> CliResult<()> {
        if ds.d() != self.map().len() {
            return Err(drnet::Error::Dimension { what: "dataset features", expected: self.map().len(), got: ds.d() }.into());
        }
        Ok(())
    }
}

fn predict(source: &Predictor, data: &Path, out: Option<&Path>) -> CliResult<()> {
    let inputs: Vec<&Path> = [Some(data), source.model.as_deref(), source.rules.as_deref()].into_iter().flatten().collect();
    if let Some(out) = out {
        check_output(out, &inputs)?;
    }
    let loaded = Loaded::open(source)?;
    // One entry per input row; `None` where a cell is missing.
    let encoded: Vec<Option<Vec<u8>>> = if is_container(data)? {
        let ds = BinarizedDataset::load(data)?;
        loaded.check_width(&ds)?;
        ds.rows().map(|r| Some(r.to_vec())).collect()
    } else {
        let table = RawTable::from_path(data)?;
        let encoder = loaded.map().encoder(&table.headers)?;
        table
            .rows
            .iter()
            .enumerate()
            .map(|(i, row)| match encoder.encode(row, i) {
                Ok(bits) => Ok(Some(bits)),
                Err(drnet::Error::MissingValue { .. }) => Ok(None),
                Err(e) => Err(e),
            })
            .collect::<drnet::Result<_>>()?
    };
    let present: Vec<Vec<u8>> = encoded.iter().flatten().cloned().collect();
    let mut preds = loaded.predict_rows(&present)?.into_iter();
    let mut text = String::from("prediction\n");
    let mut missing = 0;
    for row in &encoded {
        match row {
            Some(_) => {
                let _ = writeln!(text, "{}", preds.next().expect("one prediction per encoded row"));
            }
            None => {
                missing += 1;
                text.push_str("NA\n");
            }
        }
    }
    if missing > 0 {
        eprintln!("{missing} rows have missing values; predicted NA");
    }
    match out {
        Some(out) => std::fs::write(out, text).map_err(|e| drnet::Error::io(out, e))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn accuracy(preds: &[u8], labels: &[u8]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    preds.iter().zip(labels).filter(|(p, y)| p == y).count() as f64 / labels.len() as f64
}

fn evaluate(source: &Predictor, data: &Path, format: Format) -> CliResult<()> {
    let loaded = Loaded::open(source)?;
    let (ds, skipped) = if is_container(data)? {
        (BinarizedDataset::load(data)?, 0)
    } else {
        let encoded = BinarizedDataset::encode_table(&RawTable::from_path(data)?, loaded.map())?;
        (encoded.dataset, encoded.rejected)
    };
    loaded.check_width(&ds)?;
    let rows: Vec<Vec<u8>> = ds.rows().map(<[u8]>::to_vec).collect();
    let preds = loaded.predict_rows(&rows)?;
    let mut confusion = [[0usize; 2]; 2];
    for (&p, &y) in preds.iter().zip(ds.labels()) {
        confusion[y as usize][p as usize] += 1;
    }
    let acc = accuracy(&preds, ds.labels());
    let complexity = match &loaded {
        Loaded::Model(m) => m.extract()?.rules.complexity(),
        Loaded::Rules(r) => r.complexity(),
    };
    match format {
        Format::Text => {
            println!("rows {} (skipped {skipped} with missing values)", ds.n());
            println!("accuracy {acc:.4}");
            println!("tp {} fp {} tn {} fn {}", confusion[1][1], confusion[0][1], confusion[0][0], confusion[1][0]);
            println!(
                "rules {} predicates {} model complexity {} rule complexity {:.2}",
                complexity.num_rules, complexity.total_predicates, complexity.model_complexity, complexity.rule_complexity
            );
        }
        Format::Structured => println!(
            "{}",
            json!({
                "rows": ds.n(),
                "skipped": skipped,
                "accuracy": acc,
                "tp": confusion[1][1],
                "fp": confusion[0][1],
                "tn": confusion[0][0],
                "fn": confusion[1][0],
                "complexity": complexity,
            })
        ),
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn sweep(
    input: &CsvInput,
    hyper: &Hyper,
    folds: usize,
    grid: &[f64],
    jobs: usize,
    nested: bool,
    out: Option<&Path>,
    format: Format,
) -> CliResult<()> {
    if is_container(&input.data)? {
        return Err(CliError::Usage("sweep needs the raw CSV: every fold refits its own binarization".into()));
    }
    if folds < 2 {
        return Err(CliError::Usage(format!("--folds must be at least 2, got {folds}")));
    }
    if jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let grid: Vec<f64> = if grid.is_empty() { DEFAULT_LAMBDA1_GRID.to_vec() } else { grid.to_vec() };
    if let Some(bad) = grid.iter().find(|l| !(**l >= 0.0)) {
        return Err(CliError::Usage(format!("λ1 values must be non-negative, got {bad}")));
    }
    let config = hyper.config(input.thresholds)?;
    banner(Some(config.seed), Some(&config.hash()));
    let table = RawTable::from_path(&input.data)?;
    let schema = load_schema(input, &table)?;
    let name = input.data.file_stem().map_or("data".to_owned(), |s| s.to_string_lossy().into_owned());
    let data = ExperimentData::new(&name, table, schema)?;
    if data.rejected > 0 {
        eprintln!("skipped {} rows with missing values", data.rejected);
    }

    let (points, fold_results, selections) = if nested {
        let (selections, fold_results) = experiments::nested_cv(&data, &grid, folds, &config, jobs)?;
        let mut points = Vec::new();
        let mut chosen: Vec<f64> = selections.iter().map(|s| s.lambda1).collect();
        chosen.sort_by(f64::total_cmp);
        chosen.dedup();
        for l in chosen {
            let runs: Vec<_> = fold_results.iter().filter(|f| f.lambda1 == l).cloned().collect();
            points.push(experiments::SweepPoint::from_folds(l, &runs));
        }
        (points, fold_results, Some(selections))
    } else {
        let result = experiments::sweep(&data, &grid, folds, &config, jobs)?;
        (result.points, result.folds, None)
    };

    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| drnet::Error::io(dir, e))?;
        let write = |file: &str, text: String| {
            let path = dir.join(file);
            check_output(&path, &[&input.data])?;
            std::fs::write(&path, text).map_err(|e| CliError::Core(drnet::Error::io(&path, e)))
        };
        write("folds.csv", experiments::folds_csv(&name, &fold_results))?;
        write("points.csv", experiments::points_csv(&name, &points))?;
        if let Some(sel) = &selections {
            write("selection.json", serde_json::to_string_pretty(sel).expect("selection serializes"))?;
        }
    }

    let accs: Vec<f64> = fold_results.iter().map(|f| f.test_acc).collect();
    let (mean, stderr) = experiments::mean_stderr(&accs);
    match format {
        Format::Text => {
            println!("{:>10} {:>9} {:>8} {:>10} {:>8} {:>7}", "lambda1", "accuracy", "stderr", "complexity", "per_rule", "rules");
            for p in &points {
                println!(
                    "{:>10} {:>9.4} {:>8.4} {:>10.1} {:>8.2} {:>7.1}",
                    p.lambda1, p.mean_acc, p.stderr_acc, p.mean_model_complexity, p.mean_rule_complexity, p.mean_num_rules
                );
            }
            if let Some(sel) = &selections {
                let chosen: Vec<String> = sel.iter().map(|s| format!("{}", s.lambda1)).collect();
                println!("nested CV: accuracy {mean:.4} ± {stderr:.4}; λ1 per fold [{}]", chosen.join(", "));
            }
        }
        Format::Structured => println!(
            "{}",
            json!({
                "points": points,
                "frontier": experiments::pareto_frontier(&points),
                "folds": fold_results,
                "selections": selections,
                "mean_accuracy": mean,
                "stderr_accuracy": stderr,
            })
        ),
    }
    Ok(())
}
