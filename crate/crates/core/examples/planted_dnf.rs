//! Trains on data labelled by (x1 AND NOT x2) OR (x3 AND x4 AND NOT x5) and
//! prints the recovered rules.
//!
//!     cargo run --release -p drnet --example planted_dnf -- [epochs] [lambda1] [seed]

use drnet::feature_codec::BinFeatureMap;
use drnet::network::BinaryRows;
use drnet::ruleset::extract;
use drnet::trainer::TrainConfig;
use drnet::BinarizedDataset;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn planted(x: &[u8]) -> u8 {
    ((x[0] == 1 && x[1] == 0) || (x[2] == 1 && x[3] == 1 && x[4] == 0)) as u8
}

fn main() -> drnet::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).map_or(2000, |s| s.parse().unwrap());
    let lambda1: f64 = args.get(2).map_or(1e-4, |s| s.parse().unwrap());
    let seed: u64 = args.get(3).map_or(0, |s| s.parse().unwrap());

    let d = 10;
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    let rows: Vec<Vec<u8>> = (0..5000).map(|_| (0..d).map(|_| rng.random_range(0..2u8)).collect()).collect();
    let labels: Vec<u8> = rows.iter().map(|r| planted(r)).collect();
    let names: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
    let map = BinFeatureMap::identity(&names);
    let ds = BinarizedDataset::new(rows.concat(), labels, map.clone())?;
    let train_ds = ds.subset(&(0..4000).collect::<Vec<_>>());
    let test_ds = ds.subset(&(4000..5000).collect::<Vec<_>>());

    let config = TrainConfig { epochs, lambda1, seed, ..TrainConfig::default() };
    let start = std::time::Instant::now();
    let outcome = drnet::trainer::train_with(&train_ds, &config, |r| {
        if r.epoch % 100 == 0 {
            eprintln!("{:>5} {} bce {:.4} reg {:.3} acc {:.4}", r.epoch, r.phase.name(), r.bce, r.reg, r.train_acc)
        }
    })?;
    let last = outcome.log.epochs.last().unwrap();
    eprintln!("trained in {:.1}s; last epoch {:?}", start.elapsed().as_secs_f64(), last);

    let rules = extract(&outcome.net, &map)?.rules;
    print!("{}", rules.render()?);
    let preds = outcome.net.predict(&BinaryRows::from_dataset(&test_ds))?;
    let acc = preds.iter().zip(test_ds.labels()).filter(|(p, y)| p == y).count() as f64 / test_ds.n() as f64;
    println!("test accuracy {acc:.4}, complexity {:?}", rules.complexity());
    Ok(())
}
