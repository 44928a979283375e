//! Ablation, sensitivity and domain-shift protocols built on the trainer.

use serde::{Deserialize, Serialize};

use super::cv::{cross_validate, holdout, CvReport};
use super::metrics::MetricReport;
use super::trainer::{evaluate, train, TrainError, TrainOutcome};
use super::{Ablation, RunConfig};
use crate::graph::GraphBundle;
use crate::rng::Rng;

/// The edge drop rate every sweep is normalised against.
pub const BASELINE_TAU: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub tau: f64,
    pub f1_mean: f64,
    pub f1_std: f64,
    /// `f1_mean − f1_mean(τ = 0.1)`, as a fraction (0.05 is five points).
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub baseline_f1: f64,
    pub reports: Vec<CvReport>,
}

impl SweepReport {
    /// Largest `|Δ|` over the rows.
    pub fn max_abs_delta(&self) -> f64 {
        self.rows.iter().map(|r| r.delta.abs()).fold(0.0, f64::max)
    }
}

/// Cross-validate once per `τ`. The `τ = 0.1` baseline is run as well when
/// it is not among `taus`.
pub fn sensitivity_sweep(bundle: &GraphBundle, cfg: &RunConfig, taus: &[f64]) -> Result<SweepReport, TrainError> {
    let run = |tau: f64| -> Result<CvReport, TrainError> {
        let mut c = cfg.clone();
        c.perturb.mask_drop_rate = tau;
        cross_validate(bundle, &c)
    };
    let mut reports = Vec::with_capacity(taus.len());
    for &tau in taus {
        reports.push(run(tau)?);
    }
    let baseline_f1 = match taus.iter().position(|&t| t == BASELINE_TAU) {
        Some(i) => reports[i].f1_mean,
        None => run(BASELINE_TAU)?.f1_mean,
    };
    let rows = taus
        .iter()
        .zip(&reports)
        .map(|(&tau, r)| SweepRow {
            tau,
            f1_mean: r.f1_mean,
            f1_std: r.f1_std,
            delta: r.f1_mean - baseline_f1,
        })
        .collect();
    Ok(SweepReport {
        rows,
        baseline_f1,
        reports,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub variant: String,
    pub ablation: Ablation,
    pub cv: CvReport,
}

/// Cross-validate the full model (if `include_full`) and each variant.
pub fn run_ablations(
    bundle: &GraphBundle,
    cfg: &RunConfig,
    variants: &[Ablation],
    include_full: bool,
) -> Result<Vec<VariantReport>, TrainError> {
    let mut list: Vec<Ablation> = Vec::new();
    if include_full {
        list.push(Ablation::NONE);
    }
    list.extend(variants.iter().copied().filter(|v| !(include_full && v.is_none())));
    list.into_iter()
        .map(|ablation| {
            let c = RunConfig {
                ablation,
                ..cfg.clone()
            };
            Ok(VariantReport {
                variant: ablation.variant_name(),
                ablation,
                cv: cross_validate(bundle, &c)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainResult {
    pub domain: String,
    pub report: MetricReport,
}

#[derive(Debug, Clone)]
pub struct ShiftReport {
    pub domains: Vec<DomainResult>,
    pub training: TrainOutcome,
}

/// Train once on `train_bundle` (holding out `val_fraction` of its nodes for
/// early stopping) and evaluate the frozen parameters on every node of each
/// test bundle.
pub fn domain_shift_eval(
    train_bundle: &GraphBundle,
    tests: &[(String, &GraphBundle)],
    cfg: &RunConfig,
) -> Result<ShiftReport, TrainError> {
    for (name, b) in tests {
        if b.feature_dim() != train_bundle.feature_dim() || b.class_count() != train_bundle.class_count() {
            return Err(TrainError::Dimension(format!(
                "domain `{name}`: feature_dim {} / classes {} differ from training bundle ({} / {})",
                b.feature_dim(),
                b.class_count(),
                train_bundle.feature_dim(),
                train_bundle.class_count()
            )));
        }
    }
    let all: Vec<usize> = (0..train_bundle.num_nodes()).collect();
    let root = Rng::new(cfg.seed);
    let (train_nodes, val_nodes) = holdout(&all, cfg.val_fraction, &mut root.split_named("holdout"));
    let training = train(train_bundle, &train_nodes, &val_nodes, cfg)?;
    let domains = tests
        .iter()
        .map(|(name, b)| {
            let nodes: Vec<usize> = (0..b.num_nodes()).collect();
            Ok(DomainResult {
                domain: name.clone(),
                report: evaluate(&training.params, b, &nodes, cfg)?,
            })
        })
        .collect::<Result<Vec<_>, TrainError>>()?;
    Ok(ShiftReport { domains, training })
}
