//! Training objective.
//!
//! * classification: mean cross-entropy over the training nodes
//! * contrastive: mean squared difference between the class distributions
//!   predicted on the training graph and on the counterfactual graph
//! * orthogonality: mean squared cosine between context and object branch
//!   outputs
//! * mutual information proxy: `‖Zcᵀ·Zo / n‖²_F / h²` for column-standardised
//!   context features `Zc` and intervened object features `Zo`

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{ForwardOutputs, ForwardVars, ModelError};
use crate::tensor::{Matrix, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub contrastive: f64,
    pub orthogonality: f64,
    pub mutual_info: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            contrastive: 0.5,
            orthogonality: 0.1,
            mutual_info: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub classification: Var,
    pub contrastive: Var,
    pub orthogonality: Var,
    pub mutual_info: Var,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub classification: f64,
    pub contrastive: f64,
    pub orthogonality: f64,
    pub mutual_info: f64,
    pub weights: LossWeights,
}

impl LossVars {
    pub fn report(&self, tape: &Tape, weights: LossWeights) -> Result<LossReport, ModelError> {
        let r = LossReport {
            total: tape.value(self.total).item(),
            classification: tape.value(self.classification).item(),
            contrastive: tape.value(self.contrastive).item(),
            orthogonality: tape.value(self.orthogonality).item(),
            mutual_info: tape.value(self.mutual_info).item(),
            weights,
        };
        for (term, v) in [
            ("total", r.total),
            ("classification", r.classification),
            ("contrastive", r.contrastive),
            ("orthogonality", r.orthogonality),
            ("mutual_info", r.mutual_info),
        ] {
            if !v.is_finite() {
                return Err(ModelError::NonFiniteLoss { term });
            }
        }
        Ok(r)
    }
}

/// The loss inputs drawn from the forward passes.
#[derive(Debug, Clone, Copy)]
pub struct LossInputs {
    pub logits: Var,
    /// Logits on the counterfactual graph; `None` makes the contrastive
    /// term exactly 0.
    pub partner_logits: Option<Var>,
    pub context: Var,
    pub object: Var,
    /// Object features after the counterfactual feature intervention.
    pub object_cf: Var,
}

impl LossInputs {
    pub fn from_forward(main: &ForwardVars, partner: Option<&ForwardVars>, object_cf: Var) -> Self {
        Self {
            logits: main.logits,
            partner_logits: partner.map(|p| p.logits),
            context: main.x_c_branch,
            object: main.x_o_branch,
            object_cf,
        }
    }
}

pub fn losses_on_tape(
    tape: &mut Tape,
    inputs: &LossInputs,
    labels: &[usize],
    train_nodes: &[usize],
    weights: LossWeights,
) -> Result<LossVars, ModelError> {
    if train_nodes.is_empty() {
        return Err(ModelError::EmptyMask);
    }
    let (n, classes) = tape.shape(inputs.logits);
    if labels.len() != n {
        return Err(ModelError::Shape(format!("{} labels for {n} nodes", labels.len())));
    }
    let picks: Vec<(usize, usize)> = train_nodes
        .iter()
        .map(|&v| {
            if v >= n || labels[v] >= classes {
                Err(ModelError::Shape(format!(
                    "train node {v} (label {:?}) outside logits {n}x{classes}",
                    labels.get(v)
                )))
            } else {
                Ok((v, labels[v]))
            }
        })
        .collect::<Result<_, _>>()?;

    let logp = tape.log_softmax_rows(inputs.logits);
    let picked = tape.pick(logp, Arc::from(picks))?;
    let mean_lp = tape.reduce_mean(picked);
    let classification = tape.scale(mean_lp, -1.0);

    let contrastive = match inputs.partner_logits {
        Some(p) => {
            let a = tape.softmax_rows(inputs.logits);
            let b = tape.softmax_rows(p);
            let d = tape.sub(a, b)?;
            let sq = tape.square(d);
            tape.reduce_mean(sq)
        }
        None => tape.constant(Matrix::scalar(0.0)),
    };

    let cos = tape.row_cos_sq(inputs.context, inputs.object)?;
    let orthogonality = tape.reduce_mean(cos);

    let (rows, h) = tape.shape(inputs.context);
    if tape.shape(inputs.object_cf) != (rows, h) {
        return Err(ModelError::Shape(format!(
            "context {:?} vs intervened object {:?}",
            (rows, h),
            tape.shape(inputs.object_cf)
        )));
    }
    let zc = tape.standardize_cols(inputs.context);
    let zo = tape.standardize_cols(inputs.object_cf);
    let zct = tape.transpose(zc);
    let cross = tape.matmul(zct, zo)?;
    let cross = tape.scale(cross, 1.0 / rows as f64);
    let sq = tape.square(cross);
    let fro = tape.reduce_sum(sq);
    let mutual_info = tape.scale(fro, 1.0 / (h * h) as f64);

    let mut total = classification;
    for (term, w) in [
        (contrastive, weights.contrastive),
        (orthogonality, weights.orthogonality),
        (mutual_info, weights.mutual_info),
    ] {
        let scaled = tape.scale(term, w);
        total = tape.add(total, scaled)?;
    }
    Ok(LossVars {
        total,
        classification,
        contrastive,
        orthogonality,
        mutual_info,
    })
}

/// Loss values from finished forward passes. The object features are used
/// as their own intervened counterpart, since the intervention leaves them
/// unchanged.
pub fn compute_losses(
    outputs: &ForwardOutputs,
    partner: Option<&ForwardOutputs>,
    labels: &[usize],
    train_nodes: &[usize],
    weights: LossWeights,
) -> Result<LossReport, ModelError> {
    let mut tape = Tape::new();
    let logits = tape.constant(outputs.logits.clone());
    let partner_logits = partner.map(|p| tape.constant(p.logits.clone()));
    let context = tape.constant(outputs.x_c_branch.clone());
    let object = tape.constant(outputs.x_o_branch.clone());
    let inputs = LossInputs {
        logits,
        partner_logits,
        context,
        object,
        object_cf: object,
    };
    let vars = losses_on_tape(&mut tape, &inputs, labels, train_nodes, weights)?;
    vars.report(&tape, weights)
}
