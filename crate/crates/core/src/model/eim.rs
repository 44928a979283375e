//! Edge importance scoring.
//!
//! Node features are projected, `h = X·W_e`, and each directed edge
//! `i → j` gets a raw logit from the attention vector `a`:
//!
//! * [`EimVariant::InnerProduct`] (default): `LeakyReLU(⟨a, h_i⟩ + ⟨a, h_j⟩)`
//! * [`EimVariant::Elementwise`]: `Σ_k LeakyReLU(a_k·h_ik + a_k·h_jk)`
//!
//! Raw logits are softmax-normalised over the edges sharing a target `j`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{GraphArrays, ModelError, ModelParams, LEAKY_SLOPE};
use crate::graph::GraphBundle;
use crate::tensor::{Matrix, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EimVariant {
    #[default]
    InnerProduct,
    Elementwise,
}

impl fmt::Display for EimVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::InnerProduct => "inner_product",
            Self::Elementwise => "elementwise",
        })
    }
}

impl FromStr for EimVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "inner_product" => Ok(Self::InnerProduct),
            "elementwise" => Ok(Self::Elementwise),
            other => Err(format!("unknown eim variant `{other}`")),
        }
    }
}

/// Per-edge raw logits and per-target normalised importances, index-aligned
/// with the scored graph's edge list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeScores {
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
}

impl EdgeScores {
    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    /// Zero logits, `1/in-degree` importances.
    pub fn uniform_for(bundle: &GraphBundle) -> Self {
        let mut indeg = vec![0usize; bundle.num_nodes()];
        for &(_, d) in bundle.edges() {
            indeg[d] += 1;
        }
        Self {
            raw: vec![0.0; bundle.num_edges()],
            normalized: bundle.edges().iter().map(|&(_, d)| 1.0 / indeg[d] as f64).collect(),
        }
    }

    /// Scores for a subset of edges, by index into this score list.
    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            raw: idx.iter().map(|&i| self.raw[i]).collect(),
            normalized: idx.iter().map(|&i| self.normalized[i]).collect(),
        }
    }
}

/// Record the scorer on `tape`; returns `(raw [E×1], normalized [E×1])`.
pub fn edge_importance_on_tape(
    tape: &mut Tape,
    proj: Var,
    attn: Var,
    features: Var,
    arrays: &GraphArrays,
    variant: EimVariant,
) -> Result<(Var, Var), ModelError> {
    let h = tape.matmul(features, proj)?;
    let raw = match variant {
        EimVariant::InnerProduct => {
            let ha = tape.matmul(h, attn)?;
            let hs = tape.row_select(ha, arrays.src.clone())?;
            let hd = tape.row_select(ha, arrays.dst.clone())?;
            let sum = tape.add(hs, hd)?;
            tape.leaky_relu(sum, LEAKY_SLOPE)
        }
        EimVariant::Elementwise => {
            let hs = tape.row_select(h, arrays.src.clone())?;
            let hd = tape.row_select(h, arrays.dst.clone())?;
            let sum = tape.add(hs, hd)?;
            let a_row = tape.transpose(attn);
            let weighted = tape.hadamard(sum, a_row)?;
            let act = tape.leaky_relu(weighted, LEAKY_SLOPE);
            tape.row_sum(act)
        }
    };
    let normalized = tape.segment_softmax(raw, arrays.dst.clone(), arrays.num_nodes)?;
    Ok((raw, normalized))
}

/// Score every edge of `bundle` from `features` (normally the bundle's own).
pub fn estimate_edge_importance(
    bundle: &GraphBundle,
    features: &Matrix,
    params: &ModelParams,
    variant: EimVariant,
) -> Result<EdgeScores, ModelError> {
    if features.rows() != bundle.num_nodes() || features.cols() != params.eim_proj.rows() {
        return Err(ModelError::Shape(format!(
            "features {:?} vs {} nodes and projection {:?}",
            features.shape(),
            bundle.num_nodes(),
            params.eim_proj.shape()
        )));
    }
    let arrays = GraphArrays::new(bundle);
    let mut tape = Tape::new();
    let proj = tape.constant(params.eim_proj.clone());
    let attn = tape.constant(params.eim_attn.clone());
    let x = tape.constant(features.clone());
    let (raw, norm) = edge_importance_on_tape(&mut tape, proj, attn, x, &arrays, variant)?;
    Ok(EdgeScores {
        raw: tape.value(raw).as_slice().to_vec(),
        normalized: tape.value(norm).as_slice().to_vec(),
    })
}
