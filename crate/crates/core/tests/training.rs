use drnet::feature_codec::BinFeatureMap;
use drnet::gates::HardConcrete;
use drnet::network::DrNet;
use drnet::trainer::{bce_loss, reg_loss, total_loss, train, TrainConfig};
use drnet::BinarizedDataset;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noisy_dataset(n: usize, d: usize, seed: u64) -> BinarizedDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity(n * d);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<u8> = (0..d).map(|_| rng.random_range(0..2)).collect();
        let clean = (row[0] == 1 && row[1] == 0) || row[2] == 1;
        y.push((clean ^ rng.random_bool(0.1)) as u8);
        x.extend(row);
    }
    let names: Vec<String> = (0..d).map(|i| format!("f{i}")).collect();
    BinarizedDataset::new(x, y, BinFeatureMap::identity(&names)).unwrap()
}

fn quick(epochs: usize, phase_length: usize) -> TrainConfig {
    TrainConfig { neurons: 8, epochs, phase_length, batch_size: 64, seed: 11, ..TrainConfig::default() }
}

fn initial_net(config: &TrainConfig, d: usize) -> DrNet {
    // Training seeds one generator and initializes the network from it first.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    DrNet::init(config.neurons, d, config.epsilon, HardConcrete::default(), &mut rng)
}

#[test]
fn rules_phase_leaves_or_layer_bitwise_unchanged() {
    let ds = noisy_dataset(300, 6, 1);
    let config = quick(10, 10);
    let before = initial_net(&config, ds.d());
    let after = train(&ds, &config).unwrap().net;
    assert_ne!(after.rule_weights, before.rule_weights);
    assert_ne!(after.rule_gates.log_alpha, before.rule_gates.log_alpha);
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&after.or_gates.log_alpha), bits(&before.or_gates.log_alpha));
}

#[test]
fn or_phase_leaves_rules_layer_bitwise_unchanged() {
    let ds = noisy_dataset(300, 6, 2);
    let first = train(&ds, &quick(10, 10)).unwrap().net;
    let both = train(&ds, &TrainConfig { epochs: 20, ..quick(10, 10) }).unwrap().net;
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&both.rule_weights), bits(&first.rule_weights));
    assert_eq!(bits(&both.rule_gates.log_alpha), bits(&first.rule_gates.log_alpha));
    assert_ne!(bits(&both.or_gates.log_alpha), bits(&first.or_gates.log_alpha));
}

#[test]
fn same_seed_same_parameters() {
    let ds = noisy_dataset(400, 7, 3);
    let config = quick(20, 5);
    let a = train(&ds, &config).unwrap();
    let b = train(&ds, &config).unwrap();
    assert_eq!(a.net, b.net);
    assert_eq!(a.log, b.log);
    let c = train(&ds, &TrainConfig { seed: 12, ..config }).unwrap();
    assert_ne!(a.net.rule_weights, c.net.rule_weights);
}

#[test]
fn logged_total_is_bce_plus_weighted_reg() {
    let ds = noisy_dataset(500, 6, 4);
    let config = TrainConfig { lambda1: 0.05, lambda2: 0.02, ..quick(20, 5) };
    let log = train(&ds, &config).unwrap().log;
    assert_eq!(log.epochs.len(), 20);
    for r in &log.epochs {
        let lambda = if (r.epoch / 5) % 2 == 0 { config.lambda1 } else { config.lambda2 };
        let expected = total_loss(r.bce, r.reg, lambda);
        assert!(((r.total - expected) / expected).abs() < 1e-12, "epoch {}: {} vs {expected}", r.epoch, r.total);
        assert!(r.reg >= 0.0);
        assert!((0.0..=1.0).contains(&r.train_acc));
    }
    let csv = log.to_csv();
    assert_eq!(csv.lines().count(), 21);
    assert!(csv.lines().nth(6).unwrap().starts_with("5,or,"));
}

#[test]
fn loss_helpers_agree_with_hand_values() {
    assert_eq!(total_loss(0.5, 2.0, 0.1), 0.5 + 2.0 * 0.1);
    assert_eq!(total_loss(0.25, 7.0, 0.0), 0.25);
    assert!((bce_loss(&[0.5], &[1]).unwrap() - 0.474_076_984_7).abs() < 1e-9);
    assert_eq!(reg_loss(&[0.0, 0.0, 0.0], &[1.0]).unwrap(), 1.0);
}

#[test]
fn final_regularizer_is_non_negative() {
    let ds = noisy_dataset(200, 5, 5);
    let net = train(&ds, &quick(10, 5)).unwrap().net;
    let (reg, _, _) = drnet::trainer::reg_loss_with_grad(&net);
    assert!(reg >= 0.0);
}

#[test]
fn mismatched_labels_are_rejected() {
    let ds = noisy_dataset(50, 4, 6);
    let rows = drnet::network::BinaryRows::from_dataset(&ds);
    let err = drnet::trainer::train_rows(&rows, &ds.labels()[..10], &quick(5, 5), |_| {}).unwrap_err();
    assert!(matches!(err, drnet::Error::Dimension { .. }));
}
