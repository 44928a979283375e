//! Stratified k-fold cross-validation.

use serde::{Deserialize, Serialize};

use super::metrics::MetricReport;
use super::trainer::{evaluate, train, EpochLog, PipelineCounters, TrainError};
use super::RunConfig;
use crate::graph::GraphBundle;
use crate::rng::Rng;

/// Test node sets of each fold.
///
/// Members of each class are shuffled, then dealt to folds round-robin; the
/// dealing position carries over from one class to the next so fold sizes
/// stay within one of each other. Classes with fewer members than folds are
/// dealt after all others and a warning is logged.
pub fn stratified_folds(labels: &[usize], folds: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (v, &l) in labels.iter().enumerate() {
        members[l].push(v);
    }
    for m in &mut members {
        rng.shuffle(m);
    }
    let (regular, small): (Vec<_>, Vec<_>) = members
        .into_iter()
        .enumerate()
        .filter(|(_, m)| !m.is_empty())
        .partition(|(_, m)| m.len() >= folds);
    for (c, m) in &small {
        log::warn!(
            "class {c} has {} members for {folds} folds; it is not stratified",
            m.len()
        );
    }
    let mut out = vec![Vec::new(); folds];
    let mut next = 0usize;
    for (_, m) in regular.iter().chain(small.iter()) {
        for &v in m {
            out[next % folds].push(v);
            next += 1;
        }
    }
    for f in &mut out {
        f.sort_unstable();
    }
    out
}

/// Split fold-train nodes into `(train, validation)`; the validation set
/// holds `round(fraction · n)` nodes, at least one when `fraction > 0` and
/// `n ≥ 2`.
pub fn holdout(nodes: &[usize], fraction: f64, rng: &mut Rng) -> (Vec<usize>, Vec<usize>) {
    let mut shuffled = nodes.to_vec();
    rng.shuffle(&mut shuffled);
    let mut k = (fraction * nodes.len() as f64).round() as usize;
    if fraction > 0.0 && k == 0 && nodes.len() >= 2 {
        k = 1;
    }
    let mut val = shuffled.split_off(nodes.len() - k);
    shuffled.sort_unstable();
    val.sort_unstable();
    (shuffled, val)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
    pub report: MetricReport,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub counters: PipelineCounters,
    pub log: Vec<EpochLog>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<FoldResult>,
    /// Mean of the per-fold F1 (per `f1_average`).
    pub f1_mean: f64,
    /// Sample standard deviation of the per-fold F1.
    pub f1_std: f64,
    pub precision_mean: f64,
    pub recall_mean: f64,
    pub accuracy_mean: f64,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn run_fold(bundle: &GraphBundle, cfg: &RunConfig, fold: usize, test: &[usize], root: &Rng) -> Result<FoldResult, TrainError> {
    let rest: Vec<usize> = {
        let mut is_test = vec![false; bundle.num_nodes()];
        for &v in test {
            is_test[v] = true;
        }
        (0..bundle.num_nodes()).filter(|&v| !is_test[v]).collect()
    };
    let fr = root.split(fold as u64);
    let (train_nodes, val_nodes) = holdout(&rest, cfg.val_fraction, &mut fr.split_named("holdout"));
    let fold_cfg = RunConfig {
        seed: fr.split_named("train").seed(),
        ..cfg.clone()
    };
    let outcome = train(bundle, &train_nodes, &val_nodes, &fold_cfg)?;
    let report = evaluate(&outcome.params, bundle, test, cfg)?;
    Ok(FoldResult {
        fold,
        train_size: train_nodes.len(),
        val_size: val_nodes.len(),
        test_size: test.len(),
        report,
        best_epoch: outcome.best_epoch,
        epochs_run: outcome.log.len(),
        stopped_early: outcome.stopped_early,
        counters: outcome.counters,
        log: outcome.log,
    })
}

/// Cross-validate with `cfg.folds` stratified folds. Folds run on up to
/// `cfg.threads` threads; results do not depend on the thread count.
pub fn cross_validate(bundle: &GraphBundle, cfg: &RunConfig) -> Result<CvReport, TrainError> {
    cfg.validate()?;
    if cfg.folds > bundle.num_nodes() {
        return Err(TrainError::Dimension(format!(
            "{} folds for {} nodes",
            cfg.folds,
            bundle.num_nodes()
        )));
    }
    let root = Rng::new(cfg.seed);
    let tests = stratified_folds(bundle.labels(), cfg.folds, &mut root.split_named("folds"));
    let job = |(k, test): (usize, &Vec<usize>)| run_fold(bundle, cfg, k, test, &root);
    let results: Vec<Result<FoldResult, TrainError>> = if cfg.threads > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .map_err(|e| TrainError::Dimension(format!("thread pool: {e}")))?;
        pool.install(|| tests.par_iter().enumerate().map(job).collect())
    } else {
        // Single-threaded mode also keeps inner rayon work on this thread.
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .map_err(|e| TrainError::Dimension(format!("thread pool: {e}")))?;
        pool.install(|| tests.iter().enumerate().map(job).collect())
    };
    let folds = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(summarise(folds, cfg))
}

fn summarise(folds: Vec<FoldResult>, cfg: &RunConfig) -> CvReport {
    let f1s: Vec<f64> = folds.iter().map(|f| f.report.f1(cfg.f1_average)).collect();
    let (f1_mean, f1_std) = mean_std(&f1s);
    let avg = |g: fn(&MetricReport) -> f64| mean_std(&folds.iter().map(|f| g(&f.report)).collect::<Vec<_>>()).0;
    CvReport {
        f1_mean,
        f1_std,
        precision_mean: avg(|r| r.macro_precision),
        recall_mean: avg(|r| r.macro_recall),
        accuracy_mean: avg(|r| r.accuracy),
        folds,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_folds_four_nodes_balanced() {
        let folds = stratified_folds(&[0, 0, 1, 1], 2, &mut Rng::new(3));
        for f in &folds {
            let classes: Vec<usize> = f.iter().map(|&v| [0, 0, 1, 1][v]).collect();
            assert_eq!(classes.len(), 2);
            assert!(classes.contains(&0) && classes.contains(&1));
        }
    }

    #[test]
    fn folds_partition_nodes() {
        let labels: Vec<usize> = (0..103).map(|i| (i * 7) % 4).collect();
        let folds = stratified_folds(&labels, 5, &mut Rng::new(1));
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..103).collect::<Vec<_>>());
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn holdout_sizes() {
        let nodes: Vec<usize> = (0..40).collect();
        let (t, v) = holdout(&nodes, 0.1, &mut Rng::new(0));
        assert_eq!((t.len(), v.len()), (36, 4));
        let (t, v) = holdout(&nodes[..3], 0.1, &mut Rng::new(0));
        assert_eq!((t.len(), v.len()), (2, 1));
        let (t, v) = holdout(&nodes, 0.0, &mut Rng::new(0));
        assert_eq!((t.len(), v.len()), (40, 0));
    }

    #[test]
    fn mean_std_sample() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert_eq!(s, 1.0);
    }
}
