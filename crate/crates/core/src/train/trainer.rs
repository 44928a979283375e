//! The training loop.
//!
//! Each epoch:
//!
//! 1. sample counterfactual neighbours and build the counterfactual graph,
//! 2. score edges of the training graph with the current parameters,
//! 3. (groups are detected once before the first epoch),
//! 4. drop inter-group pairs, mask the least important edges, add weight
//!    noise,
//! 5. add noise to the input features,
//! 6. run the model on the perturbed graph and on the counterfactual graph,
//! 7. permute context rows for the intervened object/context pairing,
//! 8. take one Adam step on the combined loss,
//! 9. evaluate on the validation nodes for early stopping.
//!
//! Every stochastic step draws from its own named stream derived from
//! `(seed, epoch)`, so disabling one component does not shift the random
//! numbers seen by the others.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::metrics::{classification_report, MetricReport};
use super::{ConfigError, RunConfig, StopMetric};
use crate::graph::{neighbour_index, GraphBundle, GraphError};
use crate::intervention::{
    build_counterfactual_graph, detect_groups, drop_random_edges, mask_budget, mask_by_importance,
    noise_edge_weights, perturb_group_aware, CandidatePools, GroupAssignment, InterventionError, Retained,
};
use crate::model::{
    counterfactual_on_tape, estimate_edge_importance, forward, losses_on_tape, perturb_features, predict,
    EdgeScores, GraphArrays, LossInputs, LossReport, ModelError, ModelParams,
};
use crate::rng::Rng;
use crate::tensor::{adam_step, AdamState, Matrix, Tape, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("graph: {0}")]
    Graph(#[from] GraphError),
    #[error("intervention: {0}")]
    Intervention(#[from] InterventionError),
    #[error("model: {0}")]
    Model(ModelError),
    #[error("epoch {epoch}: non-finite {term} loss")]
    NonFinite { epoch: usize, term: &'static str },
    #[error("{0} node set is empty")]
    EmptyMask(&'static str),
    #[error("{0}")]
    Dimension(String),
}

impl From<ModelError> for TrainError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::NonFiniteLoss { term } => Self::NonFinite { epoch: 0, term },
            other => Self::Model(other),
        }
    }
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        Self::Model(ModelError::Tensor(e))
    }
}

impl TrainError {
    /// Whether the failure is numeric (as opposed to bad input).
    pub fn is_numeric(&self) -> bool {
        matches!(self, Self::NonFinite { .. })
    }
}

/// How often each pipeline stage ran.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineCounters {
    pub cng_samples: usize,
    pub counterfactual_forwards: usize,
    pub eim_scorings: usize,
    pub group_detections: usize,
    pub group_perturbations: usize,
    pub importance_masks: usize,
    pub random_drops: usize,
    pub edge_noise: usize,
    pub feature_noise: usize,
    pub feature_interventions: usize,
    pub adam_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub losses: LossReport,
    /// Validation F1 (per `f1_average`) after this epoch's update.
    pub val_f1: Option<f64>,
    pub val_loss: Option<f64>,
    /// Edges in the training graph after group-aware perturbation.
    pub perturbed_edges: usize,
    /// Edges removed by importance masking or its random stand-in.
    pub masked_edges: usize,
    /// Edges in the graph the main forward pass used.
    pub training_edges: usize,
    pub counterfactual_edges: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the best validation epoch (the last epoch without
    /// validation nodes).
    pub params: ModelParams,
    pub log: Vec<EpochLog>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val: Option<f64>,
    pub stopped_early: bool,
    pub counters: PipelineCounters,
    pub groups: Option<GroupAssignment>,
}

/// Eval-mode metrics on the unperturbed graph.
pub fn evaluate(
    params: &ModelParams,
    bundle: &GraphBundle,
    nodes: &[usize],
    cfg: &RunConfig,
) -> Result<MetricReport, TrainError> {
    if nodes.is_empty() {
        return Err(TrainError::EmptyMask("evaluation"));
    }
    let out = predict(params, bundle, &cfg.forward_options(false))?;
    let pred = out.logits.argmax_rows();
    Ok(classification_report(bundle.labels(), &pred, nodes, bundle.class_count()))
}

fn mean_cross_entropy(logits: &Matrix, labels: &[usize], nodes: &[usize]) -> f64 {
    let mut total = 0.0;
    for &v in nodes {
        let row = logits.row(v);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        total += lse - row[labels[v]];
    }
    total / nodes.len() as f64
}

fn check_nodes(bundle: &GraphBundle, nodes: &[usize], what: &'static str) -> Result<(), TrainError> {
    if let Some(&v) = nodes.iter().find(|&&v| v >= bundle.num_nodes()) {
        return Err(TrainError::Dimension(format!(
            "{what} node {v} out of range for {} nodes",
            bundle.num_nodes()
        )));
    }
    Ok(())
}

/// Train on `train_nodes`, early-stopping on `val_nodes` (may be empty).
pub fn train(
    bundle: &GraphBundle,
    train_nodes: &[usize],
    val_nodes: &[usize],
    cfg: &RunConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train_nodes.is_empty() {
        return Err(TrainError::EmptyMask("training"));
    }
    check_nodes(bundle, train_nodes, "training")?;
    check_nodes(bundle, val_nodes, "validation")?;
    let root = Rng::new(cfg.seed);
    let mut init_rng = root.split_named("init");
    let mut params = ModelParams::init(bundle.feature_dim(), cfg.hidden, bundle.class_count(), &mut init_rng);
    let mut adam = AdamState::new(&params.tensors().into_iter().cloned().collect::<Vec<_>>());
    let adam_cfg = cfg.adam();
    let ab = cfg.ablation;
    let mut counters = PipelineCounters::default();

    let index = neighbour_index(bundle);
    let pools = (!ab.cng).then(|| CandidatePools::build(bundle, &index, &cfg.cng));
    let groups = (!ab.group).then(|| {
        counters.group_detections += 1;
        detect_groups(bundle, cfg.group_count_hint.resolve(bundle.class_count()))
    });
    let train_picks: Arc<[usize]> = train_nodes.into();
    let labels = bundle.labels().to_vec();

    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut since_best = 0usize;
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs {
        let er = root.split(epoch as u64);

        // Counterfactual graph.
        let cf_graph = match &pools {
            Some(p) => {
                counters.cng_samples += 1;
                let map = p.sample(&index, cfg.cng.k, &er.split_named("cng"));
                Some(build_counterfactual_graph(bundle, &map)?)
            }
            None => None,
        };

        // Perturbed training graph.
        let scores = if ab.eim {
            None
        } else {
            counters.eim_scorings += 1;
            Some(estimate_edge_importance(bundle, bundle.features(), &params, cfg.eim_variant)?)
        };
        let perturbed = match &groups {
            Some(g) => {
                counters.group_perturbations += 1;
                perturb_group_aware(
                    bundle,
                    g,
                    cfg.perturb.inter_group_drop_prob,
                    &mut er.split_named("group"),
                )?
            }
            None => Retained {
                graph: bundle.clone(),
                kept: (0..bundle.num_edges()).collect(),
            },
        };
        let perturbed_edges = perturbed.graph.num_edges();
        let masked = match &scores {
            Some(s) => {
                counters.importance_masks += 1;
                mask_by_importance(&perturbed.graph, &s.select(&perturbed.kept), cfg.perturb.mask_drop_rate)?
            }
            None => {
                counters.random_drops += 1;
                let budget = mask_budget(perturbed_edges, cfg.perturb.mask_drop_rate);
                drop_random_edges(&perturbed.graph, budget, &mut er.split_named("mask"))
            }
        };
        let masked_edges = perturbed_edges - masked.graph.num_edges();
        counters.edge_noise += 1;
        let train_graph = noise_edge_weights(
            &masked.graph,
            cfg.perturb.edge_noise_sigma,
            &mut er.split_named("edge_noise"),
        )?;

        // Perturbed features.
        counters.feature_noise += 1;
        let x_tilde = perturb_features(
            bundle.features(),
            cfg.feature_noise_sigma,
            &mut er.split_named("feature_noise"),
        )?;

        // Forward passes, losses, update.
        let mut tape = Tape::new();
        let pv = params.register(&mut tape);
        let xv = tape.constant(x_tilde);
        let opts = cfg.forward_options(true);
        let main = forward(
            &mut tape,
            &pv,
            &GraphArrays::new(&train_graph),
            xv,
            &opts,
            &mut er.split_named("dropout_main"),
        )?;
        let partner = match &cf_graph {
            Some(g) => {
                counters.counterfactual_forwards += 1;
                Some(forward(
                    &mut tape,
                    &pv,
                    &GraphArrays::new(g),
                    xv,
                    &opts,
                    &mut er.split_named("dropout_cf"),
                )?)
            }
            None => None,
        };
        counters.feature_interventions += 1;
        let (_, object_cf, _) = counterfactual_on_tape(
            &mut tape,
            main.x_c_branch,
            main.x_o_branch,
            &mut er.split_named("intervention"),
        )?;
        let inputs = LossInputs::from_forward(&main, partner.as_ref(), object_cf);
        let lv = losses_on_tape(&mut tape, &inputs, &labels, &train_picks, cfg.loss_weights)?;
        let losses = lv.report(&tape, cfg.loss_weights).map_err(|e| match e {
            ModelError::NonFiniteLoss { term } => TrainError::NonFinite { epoch, term },
            other => TrainError::Model(other),
        })?;
        tape.backward(lv.total)?;
        let grads: Vec<Matrix> = pv
            .vars()
            .into_iter()
            .map(|v| tape.grad(v).cloned().unwrap_or_else(|| Matrix::zeros(tape.shape(v).0, tape.shape(v).1)))
            .collect();
        let mut tensors = params.into_tensors();
        adam_step(&mut tensors, &grads, &mut adam, &adam_cfg)?;
        params = ModelParams::from_tensors(tensors)?;
        counters.adam_steps += 1;
        if !params.all_finite() {
            return Err(TrainError::NonFinite { epoch, term: "parameter" });
        }

        // Validation.
        let (val_f1, val_loss) = if val_nodes.is_empty() {
            (None, None)
        } else {
            let out = predict(&params, bundle, &cfg.forward_options(false))?;
            let pred = out.logits.argmax_rows();
            let report = classification_report(bundle.labels(), &pred, val_nodes, bundle.class_count());
            (
                Some(report.f1(cfg.f1_average)),
                Some(mean_cross_entropy(&out.logits, bundle.labels(), val_nodes)),
            )
        };
        log::debug!(
            "epoch {epoch}: total {:.5} cls {:.5} ctr {:.5} orth {:.5} mi {:.5} val_f1 {:?}",
            losses.total,
            losses.classification,
            losses.contrastive,
            losses.orthogonality,
            losses.mutual_info,
            val_f1
        );
        log.push(EpochLog {
            epoch,
            losses,
            val_f1,
            val_loss,
            perturbed_edges,
            masked_edges,
            training_edges: train_graph.num_edges(),
            counterfactual_edges: cf_graph.as_ref().map(GraphBundle::num_edges),
        });

        // Early stopping. Scores are oriented so that higher is better; ties
        // keep the later epoch.
        let score = match cfg.early_stop_metric {
            StopMetric::F1 => val_f1,
            StopMetric::Loss => val_loss.map(|l| -l),
        };
        if let Some(s) = score {
            if best.as_ref().is_none_or(|(b, _, _)| s >= *b) {
                if best.as_ref().is_some_and(|(b, _, _)| s > *b) || best.is_none() {
                    since_best = 0;
                } else {
                    since_best += 1;
                }
                best = Some((s, epoch, params.clone()));
            } else {
                since_best += 1;
            }
            if cfg.early_stop_patience > 0 && since_best >= cfg.early_stop_patience && epoch < cfg.epochs {
                stopped_early = true;
                break;
            }
        }
    }

    let (params, best_epoch, best_val) = match best {
        Some((s, e, p)) => {
            let shown = match cfg.early_stop_metric {
                StopMetric::F1 => s,
                StopMetric::Loss => -s,
            };
            (p, e, Some(shown))
        }
        None => (params, log.len(), None),
    };
    Ok(TrainOutcome {
        params,
        log,
        best_epoch,
        best_val,
        stopped_early,
        counters,
        groups,
    })
}

/// Convenience for callers holding only scores of the clean graph.
pub fn score_edges(params: &ModelParams, bundle: &GraphBundle, cfg: &RunConfig) -> Result<EdgeScores, TrainError> {
    Ok(estimate_edge_importance(bundle, bundle.features(), params, cfg.eim_variant)?)
}
