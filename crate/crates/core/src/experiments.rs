//! Cross-validation, nested λ1 selection, λ1 sweeps and Pareto frontiers.
//!
//! Every fold refits the binarizer on its own training rows. Each training
//! run gets a seed derived from the base seed and the run's coordinates, so
//! results do not depend on how many runs execute in parallel.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::feature_codec::{fit_binarizer, BinarizedDataset, ColumnKind, RawTable, Schema};
use crate::network::BinaryRows;
use crate::ruleset::{self, ComplexityReport};
use crate::trainer::{train_rows, TrainConfig};

/// λ1 values tried when none are given.
pub const DEFAULT_LAMBDA1_GRID: [f64; 5] = [1e-4, 3e-4, 1e-3, 3e-3, 1e-2];

/// A raw table with its schema, restricted to rows with no missing cells in
/// any schema column.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub name: String,
    pub table: RawTable,
    pub schema: Schema,
    labels: Vec<u8>,
    /// Rows dropped for missing values.
    pub rejected: usize,
}

impl ExperimentData {
    pub fn new(name: impl Into<String>, table: RawTable, schema: Schema) -> Result<Self> {
        let target = schema.resolve_target(&table)?;
        let cols = schema.columns.iter().map(|c| table.column_index(&c.name)).collect::<Result<Vec<_>>>()?;
        let target_idx = table.column_index(&target.column)?;
        let keep: Vec<usize> = (0..table.len())
            .filter(|&r| cols.iter().all(|&c| !schema.missing.iter().any(|m| *m == table.rows[r][c])))
            .collect();
        let rejected = table.len() - keep.len();
        let table = table.select_rows(&keep);
        let labels = table.column(target_idx).map(|c| (c == target.positive) as u8).collect();
        Ok(ExperimentData { name: name.into(), table, schema, labels, rejected })
    }

    /// Data that is already binary: every feature column becomes an identity
    /// feature.
    pub fn from_binary(name: impl Into<String>, features: &[String], rows: &[Vec<u8>], labels: &[u8]) -> Result<Self> {
        let mut headers = features.to_vec();
        headers.push("label".to_owned());
        let rows = rows
            .iter()
            .zip(labels)
            .map(|(r, y)| r.iter().chain(std::iter::once(y)).map(|b| b.to_string()).collect())
            .collect();
        let mut columns: Vec<_> = features
            .iter()
            .map(|f| crate::feature_codec::ColumnSpec { name: f.clone(), kind: ColumnKind::Binary })
            .collect();
        columns.push(crate::feature_codec::ColumnSpec { name: "label".into(), kind: ColumnKind::Target });
        let schema = Schema {
            version: 1,
            target: "label".into(),
            positive_label: Some("1".into()),
            missing: vec![String::new()],
            columns,
        };
        ExperimentData::new(name, RawTable { headers, rows }, schema)
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Fits the binarizer on `train` and encodes both sides.
    pub fn binarize_split(
        &self,
        train: &[usize],
        test: &[usize],
        thresholds: usize,
    ) -> Result<(BinarizedDataset, BinarizedDataset)> {
        let train_table = self.table.select_rows(train);
        let map = fit_binarizer(&train_table, &self.schema, thresholds)?;
        let train_ds = BinarizedDataset::encode_table(&train_table, &map)?.dataset;
        let test_ds = BinarizedDataset::encode_table(&self.table.select_rows(test), &map)?.dataset;
        Ok((train_ds, test_ds))
    }
}

/// A stratified partition of row indices into `k` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<Vec<usize>>,
}

impl FoldPlan {
    /// Training indices (all other folds) and test indices for fold `f`.
    pub fn split(&self, f: usize) -> (Vec<usize>, Vec<usize>) {
        let mut train: Vec<usize> =
            self.folds.iter().enumerate().filter(|(g, _)| *g != f).flat_map(|(_, idx)| idx.iter().copied()).collect();
        train.sort_unstable();
        (train, self.folds[f].clone())
    }
}

/// Stratified k-fold: each class is shuffled and dealt round-robin, so fold
/// sizes differ by at most one and class counts per fold by at most one.
pub fn kfold(labels: &[u8], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Invalid(format!("need at least 2 folds, got {k}")));
    }
    if labels.len() < k {
        return Err(Error::Invalid(format!("{} rows cannot fill {k} folds", labels.len())));
    }
    let mut pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
    let mut neg: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != 1).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Invalid("stratified folds need both classes present".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut folds = vec![Vec::new(); k];
    for (slot, idx) in pos.into_iter().chain(neg).enumerate() {
        folds[slot % k].push(idx);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(FoldPlan { k, seed, folds })
}

/// Seed for one run, derived from the base seed and the run's coordinates.
pub fn derive_seed(base: u64, coords: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    for c in coords {
        h.update(c.to_le_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Outcome of one train/test run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub lambda1: f64,
    pub fold: usize,
    pub test_acc: f64,
    pub complexity: ComplexityReport,
    pub wall_seconds: f64,
}

/// Fits the binarizer on `train`, trains, extracts rules and scores them on
/// `test`.
pub fn run_split(
    data: &ExperimentData,
    train: &[usize],
    test: &[usize],
    config: &TrainConfig,
) -> Result<(f64, ComplexityReport)> {
    debug_assert!(disjoint(train, test));
    let (train_ds, test_ds) = data.binarize_split(train, test, config.thresholds)?;
    let outcome = train_rows(&BinaryRows::from_dataset(&train_ds), train_ds.labels(), config, |_| {})?;
    let rules = ruleset::extract(&outcome.net, &train_ds.map)?.rules;
    let correct = test_ds
        .rows()
        .zip(test_ds.labels())
        .map(|(x, &y)| rules.eval(x).map(|p| (p == y) as usize))
        .sum::<Result<usize>>()?;
    let acc = if test_ds.n() == 0 { 0.0 } else { correct as f64 / test_ds.n() as f64 };
    Ok((acc, rules.complexity()))
}

fn disjoint(a: &[usize], b: &[usize]) -> bool {
    let set: std::collections::HashSet<_> = a.iter().collect();
    b.iter().all(|i| !set.contains(i))
}

fn run_pool<T: Send>(jobs: usize, tasks: Vec<Box<dyn FnOnce() -> T + Send + '_>>) -> Vec<T> {
    if jobs <= 1 {
        return tasks.into_iter().map(|t| t()).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build().expect("thread pool");
    pool.install(|| tasks.into_par_iter().map(|t| t()).collect())
}

/// Mean and standard error (sample standard deviation over `√n`).
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// One λ1 setting aggregated over folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub lambda1: f64,
    pub mean_acc: f64,
    pub stderr_acc: f64,
    pub mean_model_complexity: f64,
    pub mean_rule_complexity: f64,
    pub mean_num_rules: f64,
}

impl SweepPoint {
    pub fn from_folds(lambda1: f64, folds: &[FoldResult]) -> Self {
        let accs: Vec<f64> = folds.iter().map(|f| f.test_acc).collect();
        let (mean_acc, stderr_acc) = mean_stderr(&accs);
        let avg = |f: &dyn Fn(&FoldResult) -> f64| mean_stderr(&folds.iter().map(f).collect::<Vec<_>>()).0;
        SweepPoint {
            lambda1,
            mean_acc,
            stderr_acc,
            mean_model_complexity: avg(&|f| f.complexity.model_complexity as f64),
            mean_rule_complexity: avg(&|f| f.complexity.rule_complexity),
            mean_num_rules: avg(&|f| f.complexity.num_rules as f64),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    pub folds: Vec<FoldResult>,
}

/// k-fold train/test for each λ1; one aggregated point per value.
pub fn sweep(
    data: &ExperimentData,
    lambdas: &[f64],
    k: usize,
    config: &TrainConfig,
    jobs: usize,
) -> Result<SweepResult> {
    if lambdas.is_empty() {
        return Err(Error::Invalid("λ1 list is empty".into()));
    }
    let plan = kfold(data.labels(), k, config.seed)?;
    let plan = &plan;
    let mut tasks: Vec<Box<dyn FnOnce() -> Result<FoldResult> + Send + '_>> = Vec::new();
    for &lambda1 in lambdas {
        for fold in 0..k {
            tasks.push(Box::new(move || {
                let start = Instant::now();
                let (train, test) = plan.split(fold);
                let cfg = TrainConfig {
                    lambda1,
                    seed: derive_seed(config.seed, &[fold as u64, lambda1.to_bits()]),
                    ..config.clone()
                };
                let (test_acc, complexity) = run_split(data, &train, &test, &cfg)
                    .map_err(|e| e.context(format!("{}: λ1 = {lambda1}, fold {fold}", data.name)))?;
                Ok(FoldResult { lambda1, fold, test_acc, complexity, wall_seconds: start.elapsed().as_secs_f64() })
            }));
        }
    }
    let folds = run_pool(jobs, tasks).into_iter().collect::<Result<Vec<_>>>()?;
    let points = lambdas.iter().zip(folds.chunks(k)).map(|(&l, chunk)| SweepPoint::from_folds(l, chunk)).collect();
    Ok(SweepResult { points, folds })
}

/// λ1 chosen for one outer fold, with the inner mean accuracy of each grid value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub outer_fold: usize,
    pub lambda1: f64,
    pub inner_accuracy: Vec<(f64, f64)>,
}

/// Highest mean accuracy wins; ties go to the larger λ1.
pub fn choose_lambda(scores: &[(f64, f64)]) -> Option<f64> {
    scores
        .iter()
        .copied()
        .max_by(|a, b| a.1.total_cmp(&b.1).then(a.0.total_cmp(&b.0)))
        .map(|(lambda, _)| lambda)
}

/// For each outer fold, runs an inner `(k−1)`-fold CV over the outer training
/// rows for every grid value and keeps the best by mean validation accuracy.
pub fn nested_select(
    data: &ExperimentData,
    grid: &[f64],
    k: usize,
    config: &TrainConfig,
    jobs: usize,
) -> Result<Vec<Selection>> {
    if grid.is_empty() {
        return Err(Error::Invalid("λ1 grid is empty".into()));
    }
    let outer = kfold(data.labels(), k, config.seed)?;
    let mut selections = Vec::with_capacity(k);
    for f in 0..k {
        let (train, _) = outer.split(f);
        if grid.len() == 1 {
            selections.push(Selection { outer_fold: f, lambda1: grid[0], inner_accuracy: vec![] });
            continue;
        }
        let train_labels: Vec<u8> = train.iter().map(|&i| data.labels()[i]).collect();
        let inner_k = (k - 1).max(2);
        let inner = kfold(&train_labels, inner_k, derive_seed(config.seed, &[f as u64]))?;
        let (inner_ref, train_ref) = (&inner, &train);
        let mut tasks: Vec<Box<dyn FnOnce() -> Result<f64> + Send + '_>> = Vec::new();
        for &lambda1 in grid {
            for g in 0..inner_k {
                tasks.push(Box::new(move || {
                    let (itrain, ival) = inner_ref.split(g);
                    let itrain: Vec<usize> = itrain.iter().map(|&i| train_ref[i]).collect();
                    let ival: Vec<usize> = ival.iter().map(|&i| train_ref[i]).collect();
                    let cfg = TrainConfig {
                        lambda1,
                        seed: derive_seed(config.seed, &[f as u64, g as u64, lambda1.to_bits()]),
                        ..config.clone()
                    };
                    run_split(data, &itrain, &ival, &cfg)
                        .map(|(acc, _)| acc)
                        .map_err(|e| e.context(format!("{}: outer fold {f}, inner fold {g}, λ1 = {lambda1}", data.name)))
                }));
            }
        }
        let accs = run_pool(jobs, tasks).into_iter().collect::<Result<Vec<_>>>()?;
        let scores: Vec<(f64, f64)> =
            grid.iter().zip(accs.chunks(inner_k)).map(|(&l, c)| (l, mean_stderr(c).0)).collect();
        let lambda1 = choose_lambda(&scores).expect("grid is non-empty");
        selections.push(Selection { outer_fold: f, lambda1, inner_accuracy: scores });
    }
    Ok(selections)
}

/// Nested CV: selects λ1 per outer fold, then trains on the full outer
/// training rows and tests on the held-out fold.
pub fn nested_cv(
    data: &ExperimentData,
    grid: &[f64],
    k: usize,
    config: &TrainConfig,
    jobs: usize,
) -> Result<(Vec<Selection>, Vec<FoldResult>)> {
    let selections = nested_select(data, grid, k, config, jobs)?;
    let outer = kfold(data.labels(), k, config.seed)?;
    let outer = &outer;
    let tasks: Vec<Box<dyn FnOnce() -> Result<FoldResult> + Send + '_>> = selections
        .iter()
        .map(|sel| {
            let (fold, lambda1) = (sel.outer_fold, sel.lambda1);
            Box::new(move || {
                let start = Instant::now();
                let (train, test) = outer.split(fold);
                let cfg = TrainConfig {
                    lambda1,
                    seed: derive_seed(config.seed, &[fold as u64, lambda1.to_bits()]),
                    ..config.clone()
                };
                let (test_acc, complexity) = run_split(data, &train, &test, &cfg)
                    .map_err(|e| e.context(format!("{}: outer fold {fold}", data.name)))?;
                Ok(FoldResult { lambda1, fold, test_acc, complexity, wall_seconds: start.elapsed().as_secs_f64() })
            }) as Box<dyn FnOnce() -> Result<FoldResult> + Send + '_>
        })
        .collect();
    let folds = run_pool(jobs, tasks).into_iter().collect::<Result<Vec<_>>>()?;
    Ok((selections, folds))
}

/// Indices of points not dominated in (higher accuracy, lower complexity),
/// sorted by complexity. Exact duplicates keep their first occurrence.
pub fn pareto_indices(points: &[(f64, f64)]) -> Vec<usize> {
    let dominates = |a: (f64, f64), b: (f64, f64)| a.0 >= b.0 && a.1 <= b.1 && (a.0 > b.0 || a.1 < b.1);
    let mut keep: Vec<usize> = (0..points.len())
        .filter(|&i| {
            let p = points[i];
            !points.iter().any(|&q| dominates(q, p)) && !points[..i].iter().any(|&q| q == p)
        })
        .collect();
    keep.sort_by(|&a, &b| points[a].1.total_cmp(&points[b].1).then(a.cmp(&b)));
    keep
}

/// Pareto-efficient sweep points by mean accuracy and mean model complexity.
pub fn pareto_frontier(points: &[SweepPoint]) -> Vec<SweepPoint> {
    let pairs: Vec<(f64, f64)> = points.iter().map(|p| (p.mean_acc, p.mean_model_complexity)).collect();
    pareto_indices(&pairs).into_iter().map(|i| points[i].clone()).collect()
}

pub fn folds_csv(dataset: &str, folds: &[FoldResult]) -> String {
    let mut out = String::from(
        "dataset,lambda1,fold,test_acc,num_rules,total_predicates,model_complexity,rule_complexity,wall_seconds\n",
    );
    for f in folds {
        let c = &f.complexity;
        let _ = writeln!(
            out,
            "{dataset},{},{},{},{},{},{},{},{:.3}",
            f.lambda1, f.fold, f.test_acc, c.num_rules, c.total_predicates, c.model_complexity, c.rule_complexity, f.wall_seconds
        );
    }
    out
}

/// All sweep points with a Pareto flag; plot-ready.
pub fn points_csv(dataset: &str, points: &[SweepPoint]) -> String {
    let frontier = pareto_frontier(points);
    let mut out = String::from(
        "dataset,lambda1,mean_test_acc,stderr_test_acc,mean_model_complexity,mean_rule_complexity,mean_num_rules,pareto\n",
    );
    for p in points {
        let on = frontier.iter().any(|q| q == p);
        let _ = writeln!(
            out,
            "{dataset},{},{},{},{},{},{},{}",
            p.lambda1, p.mean_acc, p.stderr_acc, p.mean_model_complexity, p.mean_rule_complexity, p.mean_num_rules, on as u8
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(acc: f64, cx: f64) -> SweepPoint {
        SweepPoint {
            lambda1: cx,
            mean_acc: acc,
            stderr_acc: 0.0,
            mean_model_complexity: cx,
            mean_rule_complexity: 0.0,
            mean_num_rules: 0.0,
        }
    }

    #[test]
    fn kfold_examples() {
        let labels = [1, 0, 1, 0, 1, 0, 1, 0, 1, 0];
        let plan = kfold(&labels, 5, 3).unwrap();
        assert!(plan.folds.iter().all(|f| f.len() == 2));
        assert_eq!(plan, kfold(&labels, 5, 3).unwrap());
        let mut all: Vec<usize> = plan.folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert!(kfold(&[1, 1, 1, 1, 1], 2, 0).is_err());
        assert!(kfold(&[1, 0], 5, 0).is_err());
    }

    #[test]
    fn kfold_is_stratified() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut labels: Vec<u8> = (0..1000).map(|i| (i % 2) as u8).collect();
        labels.shuffle(&mut rng);
        let plan = kfold(&labels, 5, 1).unwrap();
        for f in &plan.folds {
            let rate = f.iter().filter(|&&i| labels[i] == 1).count() as f64 / f.len() as f64;
            assert!((rate - 0.5).abs() <= 0.02, "{rate}");
        }
        for g in 0..5 {
            let (train, test) = plan.split(g);
            assert!(disjoint(&train, &test));
            assert_eq!(train.len() + test.len(), 1000);
        }
    }

    #[test]
    fn lambda_choice() {
        assert_eq!(choose_lambda(&[(1e-3, 0.7)]), Some(1e-3));
        assert_eq!(choose_lambda(&[(1e-4, 0.8), (1e-2, 0.75)]), Some(1e-4));
        assert_eq!(choose_lambda(&[(1e-4, 0.8), (1e-2, 0.8), (1e-3, 0.8)]), Some(1e-2));
        assert_eq!(choose_lambda(&[]), None);
    }

    #[test]
    fn stderr_of_identical_values_is_zero() {
        assert_eq!(mean_stderr(&[0.8; 5]), (0.8, 0.0));
        let (m, s) = mean_stderr(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(m, 3.0);
        assert!((s - (2.5f64 / 5.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn pareto_examples() {
        let pts = [point(0.84, 100.0), point(0.83, 50.0), point(0.82, 120.0)];
        let front = pareto_frontier(&pts);
        assert_eq!(front, vec![point(0.83, 50.0), point(0.84, 100.0)]);
        assert_eq!(pareto_frontier(&[point(0.9, 3.0)]), vec![point(0.9, 3.0)]);
        assert_eq!(pareto_frontier(&vec![point(0.9, 3.0); 4]).len(), 1);
        assert!(pareto_frontier(&[]).is_empty());
    }

    #[test]
    fn seeds_differ_by_coordinate() {
        assert_eq!(derive_seed(7, &[1, 2]), derive_seed(7, &[1, 2]));
        assert_ne!(derive_seed(7, &[1, 2]), derive_seed(7, &[2, 1]));
        assert_ne!(derive_seed(7, &[1]), derive_seed(8, &[1]));
    }

    #[test]
    fn missing_rows_are_dropped_up_front() {
        let table = RawTable::from_reader("a,b,y\n1,x,1\n?,y,0\n3,,1\n4,y,0\n".as_bytes()).unwrap();
        let schema = crate::feature_codec::infer_schema(&table, "y").unwrap();
        let data = ExperimentData::new("t", table, schema).unwrap();
        assert_eq!((data.len(), data.rejected), (2, 2));
        assert_eq!(data.labels(), [1, 0]);
    }
}
