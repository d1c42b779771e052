//! Trains on the first of five stratified folds of a CSV dataset and reports
//! held-out accuracy and rule-set complexity.
//!
//!     cargo run --release -p drnet --example one_fold -- data/magic.csv data/magic.schema.json [epochs] [lambda1]

use drnet::experiments::{kfold, ExperimentData};
use drnet::ruleset::extract;
use drnet::trainer::train_with;
use drnet::{RawTable, Schema, TrainConfig};

fn main() -> drnet::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    if args.len() < 3 {
        eprintln!("usage: one_fold <data.csv> <schema.json> [epochs] [lambda1]");
        std::process::exit(1);
    }
    let epochs: usize = args.get(3).map_or(2000, |s| s.parse().unwrap());
    let lambda1: f64 = args.get(4).map_or(1e-4, |s| s.parse().unwrap());
    let data = ExperimentData::new(&args[1], RawTable::from_path(&args[1])?, Schema::from_path(&args[2])?)?;
    let config = TrainConfig { epochs, lambda1, ..TrainConfig::default() };
    let plan = kfold(data.labels(), 5, config.seed)?;
    let (train, test) = plan.split(0);
    let start = std::time::Instant::now();
    let (train_ds, test_ds) = data.binarize_split(&train, &test, config.thresholds)?;
    eprintln!("{} training rows, {} features", train_ds.n(), train_ds.d());
    let outcome = train_with(&train_ds, &config, |r| {
        if r.epoch % 100 == 0 {
            eprintln!("{:>5} {} bce {:.4} acc {:.4} cx {:.1}", r.epoch, r.phase.name(), r.bce, r.train_acc, r.expected_complexity)
        }
    })?;
    let rules = extract(&outcome.net, &train_ds.map)?.rules;
    let correct = test_ds.rows().zip(test_ds.labels()).filter(|(x, &y)| rules.eval(x).unwrap() == y).count();
    let acc = correct as f64 / test_ds.n() as f64;
    println!("accuracy {acc:.4}  {:?}  ({:.0}s)", rules.complexity(), start.elapsed().as_secs_f64());
    Ok(())
}
