//! Forward pass: attention encoder, feature gate, context/object branches,
//! gated fusion and classifier.
//!
//! The encoder is two shared-weight GATv2 layers. For an edge `j → i`
//! (self-loops included) the attention logit is
//! `aᵀ·LeakyReLU(W h_i + W h_j)`, softmax-normalised over the edges into
//! `i`, and the message `W h_j` is scaled by that coefficient and the edge
//! weight. ELU sits between the layers; layer 2 has no activation.

use std::sync::Arc;

use super::{edge_importance_on_tape, EdgeScores, EimVariant, ModelError, ModelParams, ParamVars, LEAKY_SLOPE};
use crate::graph::GraphBundle;
use crate::rng::Rng;
use crate::tensor::{Matrix, Tape, Var};

/// Edge arrays in the layouts the forward pass consumes.
#[derive(Debug, Clone)]
pub struct GraphArrays {
    pub num_nodes: usize,
    pub src: Arc<[usize]>,
    pub dst: Arc<[usize]>,
    pub weights: Vec<f64>,
    /// Edges followed by one self-loop per node (weight 1).
    pub loop_src: Arc<[usize]>,
    pub loop_dst: Arc<[usize]>,
    pub loop_weights: Vec<f64>,
}

impl GraphArrays {
    pub fn new(bundle: &GraphBundle) -> Self {
        let n = bundle.num_nodes();
        let src: Vec<usize> = bundle.edges().iter().map(|e| e.0).collect();
        let dst: Vec<usize> = bundle.edges().iter().map(|e| e.1).collect();
        let weights = bundle.weights_or_ones();
        let mut loop_src = src.clone();
        let mut loop_dst = dst.clone();
        let mut loop_weights = weights.clone();
        loop_src.extend(0..n);
        loop_dst.extend(0..n);
        loop_weights.extend(std::iter::repeat_n(1.0, n));
        Self {
            num_nodes: n,
            src: src.into(),
            dst: dst.into(),
            weights,
            loop_src: loop_src.into(),
            loop_dst: loop_dst.into(),
            loop_weights,
        }
    }

    fn unweighted(&self) -> bool {
        self.weights.iter().all(|&w| w == 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardOptions {
    /// Enables feature dropout.
    pub train: bool,
    pub dropout: f64,
    /// Weight context-branch aggregation by learned edge importance.
    pub use_eim: bool,
    pub eim_variant: EimVariant,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        Self {
            train: false,
            dropout: 0.1,
            use_eim: true,
            eim_variant: EimVariant::InnerProduct,
        }
    }
}

impl ForwardOptions {
    pub fn eval(self) -> Self {
        Self { train: false, ..self }
    }
}

/// Tape handles for every intermediate the losses or callers need.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    pub x: Var,
    pub x_c: Var,
    pub x_o: Var,
    pub x_c_branch: Var,
    pub x_o_branch: Var,
    pub x_f: Var,
    pub alpha: Var,
    pub logits: Var,
    pub eim: Option<(Var, Var)>,
}

/// Plain values of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutputs {
    pub x: Matrix,
    pub x_c: Matrix,
    pub x_o: Matrix,
    pub x_c_branch: Matrix,
    pub x_o_branch: Matrix,
    pub x_f: Matrix,
    pub logits: Matrix,
    pub edge_scores: Option<EdgeScores>,
    pub alpha: Vec<f64>,
}

impl ForwardVars {
    pub fn outputs(&self, tape: &Tape) -> ForwardOutputs {
        ForwardOutputs {
            x: tape.value(self.x).clone(),
            x_c: tape.value(self.x_c).clone(),
            x_o: tape.value(self.x_o).clone(),
            x_c_branch: tape.value(self.x_c_branch).clone(),
            x_o_branch: tape.value(self.x_o_branch).clone(),
            x_f: tape.value(self.x_f).clone(),
            logits: tape.value(self.logits).clone(),
            edge_scores: self.eim.map(|(raw, norm)| EdgeScores {
                raw: tape.value(raw).as_slice().to_vec(),
                normalized: tape.value(norm).as_slice().to_vec(),
            }),
            alpha: tape.value(self.alpha).as_slice().to_vec(),
        }
    }
}

fn gat_layer(tape: &mut Tape, h: Var, w: Var, attn: Var, g: &GraphArrays) -> Result<Var, ModelError> {
    let z = tape.matmul(h, w)?;
    let e = tape.edge_attention(z, attn, g.loop_src.clone(), g.loop_dst.clone(), LEAKY_SLOPE)?;
    let mut coef = tape.segment_softmax(e, g.loop_dst.clone(), g.num_nodes)?;
    if !g.unweighted() {
        let w = tape.constant(Matrix::column(&g.loop_weights));
        coef = tape.hadamard(coef, w)?;
    }
    Ok(tape.gather_scatter(z, coef, g.loop_src.clone(), g.loop_dst.clone(), g.num_nodes)?)
}

/// Two-layer attention encoder. Dropout applies to each layer's input when
/// `opts.train` is set.
pub fn encode_on_tape(
    tape: &mut Tape,
    pv: &ParamVars,
    features: Var,
    g: &GraphArrays,
    opts: &ForwardOptions,
    rng: &mut Rng,
) -> Result<Var, ModelError> {
    let p = if opts.train { opts.dropout } else { 0.0 };
    let h0 = tape.dropout(features, p, rng)?;
    let h1 = gat_layer(tape, h0, pv.enc1_w, pv.enc1_attn, g)?;
    let h1 = tape.elu(h1);
    let h1 = tape.dropout(h1, p, rng)?;
    gat_layer(tape, h1, pv.enc2_w, pv.enc2_attn, g)
}

/// `g = σ(x·W_g + b)`, `x_c = g ⊙ x`, `x_o = x − x_c`.
pub fn split_on_tape(tape: &mut Tape, pv: &ParamVars, x: Var) -> Result<(Var, Var), ModelError> {
    let lin = tape.matmul(x, pv.gate_w)?;
    let lin = tape.add(lin, pv.gate_b)?;
    let gate = tape.sigmoid(lin);
    let x_c = tape.hadamard(gate, x)?;
    let x_o = tape.sub(x, x_c)?;
    Ok((x_c, x_o))
}

/// Weighted mean over `{v} ∪ in-neighbours(v)` with per-edge coefficients
/// `coef` (`[E×1]`) and weight 1 for `v` itself, then `ELU(· W)`.
fn mean_aggregate(
    tape: &mut Tape,
    x: Var,
    coef: Var,
    w: Var,
    g: &GraphArrays,
) -> Result<Var, ModelError> {
    let nbr = tape.gather_scatter(x, coef, g.src.clone(), g.dst.clone(), g.num_nodes)?;
    let num = tape.add(x, nbr)?;
    let mass = tape.scatter_sum(coef, g.dst.clone(), g.num_nodes)?;
    let den = tape.add_scalar(mass, 1.0);
    let inv = tape.recip(den);
    let agg = tape.hadamard(num, inv)?;
    let lin = tape.matmul(agg, w)?;
    Ok(tape.elu(lin))
}

pub struct BranchVars {
    pub x_c_branch: Var,
    pub x_o_branch: Var,
    pub x_f: Var,
    pub alpha: Var,
}

/// Context and object branches followed by `x_f = α·x_c′ + (1−α)·x_o′`,
/// with a per-node `α = σ([x_c′ ∥ x_o′]·W_α + b)`. When `importance` is
/// given, context aggregation weights edges by it.
pub fn branch_and_fuse_on_tape(
    tape: &mut Tape,
    pv: &ParamVars,
    x_c: Var,
    x_o: Var,
    g: &GraphArrays,
    importance: Option<Var>,
) -> Result<BranchVars, ModelError> {
    let w = tape.constant(Matrix::column(&g.weights));
    let ctx_coef = match importance {
        Some(s) => tape.hadamard(s, w)?,
        None => w,
    };
    let x_c_branch = mean_aggregate(tape, x_c, ctx_coef, pv.ctx_w, g)?;
    let x_o_branch = mean_aggregate(tape, x_o, w, pv.obj_w, g)?;
    let both = tape.concat_cols(x_c_branch, x_o_branch)?;
    let lin = tape.matmul(both, pv.fuse_w)?;
    let lin = tape.add(lin, pv.fuse_b)?;
    let alpha = tape.sigmoid(lin);
    let one_minus = tape.one_minus(alpha);
    let a = tape.hadamard(x_c_branch, alpha)?;
    let b = tape.hadamard(x_o_branch, one_minus)?;
    let x_f = tape.add(a, b)?;
    Ok(BranchVars {
        x_c_branch,
        x_o_branch,
        x_f,
        alpha,
    })
}

/// Full forward pass on `graph` with node features `features` (already
/// perturbed by the caller if desired).
pub fn forward(
    tape: &mut Tape,
    pv: &ParamVars,
    graph: &GraphArrays,
    features: Var,
    opts: &ForwardOptions,
    rng: &mut Rng,
) -> Result<ForwardVars, ModelError> {
    let (n, d) = tape.shape(features);
    if n != graph.num_nodes || d != tape.shape(pv.enc1_w).0 {
        return Err(ModelError::Shape(format!(
            "features {:?} for {} nodes, encoder expects {} columns",
            (n, d),
            graph.num_nodes,
            tape.shape(pv.enc1_w).0
        )));
    }
    let eim = if opts.use_eim {
        Some(edge_importance_on_tape(
            tape,
            pv.eim_proj,
            pv.eim_attn,
            features,
            graph,
            opts.eim_variant,
        )?)
    } else {
        None
    };
    let x = encode_on_tape(tape, pv, features, graph, opts, rng)?;
    let (x_c, x_o) = split_on_tape(tape, pv, x)?;
    let br = branch_and_fuse_on_tape(tape, pv, x_c, x_o, graph, eim.map(|e| e.1))?;
    let logits = tape.matmul(br.x_f, pv.cls_w)?;
    let logits = tape.add(logits, pv.cls_b)?;
    Ok(ForwardVars {
        x,
        x_c,
        x_o,
        x_c_branch: br.x_c_branch,
        x_o_branch: br.x_o_branch,
        x_f: br.x_f,
        alpha: br.alpha,
        logits,
        eim,
    })
}

/// Eval-mode forward on constant parameters.
pub fn predict(
    params: &ModelParams,
    bundle: &GraphBundle,
    opts: &ForwardOptions,
) -> Result<ForwardOutputs, ModelError> {
    let mut tape = Tape::new();
    let pv = params.register_constants(&mut tape);
    let x = tape.constant(bundle.features().clone());
    let arrays = GraphArrays::new(bundle);
    // Eval mode draws no randomness; the stream is a placeholder.
    let mut rng = Rng::new(0);
    let vars = forward(&mut tape, &pv, &arrays, x, &opts.eval(), &mut rng)?;
    Ok(vars.outputs(&tape))
}

/// Encoder output alone.
pub fn encode(
    bundle: &GraphBundle,
    features: &Matrix,
    params: &ModelParams,
    opts: &ForwardOptions,
    rng: &mut Rng,
) -> Result<Matrix, ModelError> {
    let mut tape = Tape::new();
    let pv = params.register_constants(&mut tape);
    let x = tape.constant(features.clone());
    let arrays = GraphArrays::new(bundle);
    let out = encode_on_tape(&mut tape, &pv, x, &arrays, opts, rng)?;
    Ok(tape.value(out).clone())
}

pub fn split_features(x: &Matrix, params: &ModelParams) -> Result<(Matrix, Matrix), ModelError> {
    let mut tape = Tape::new();
    let pv = params.register_constants(&mut tape);
    let xv = tape.constant(x.clone());
    let (c, o) = split_on_tape(&mut tape, &pv, xv)?;
    Ok((tape.value(c).clone(), tape.value(o).clone()))
}

/// Branches and fusion without importance weighting; returns
/// `(x_c′, x_o′, x_f, α)`.
pub fn branch_and_fuse(
    x_c: &Matrix,
    x_o: &Matrix,
    bundle: &GraphBundle,
    params: &ModelParams,
) -> Result<(Matrix, Matrix, Matrix, Vec<f64>), ModelError> {
    let mut tape = Tape::new();
    let pv = params.register_constants(&mut tape);
    let c = tape.constant(x_c.clone());
    let o = tape.constant(x_o.clone());
    let arrays = GraphArrays::new(bundle);
    let br = branch_and_fuse_on_tape(&mut tape, &pv, c, o, &arrays, None)?;
    Ok((
        tape.value(br.x_c_branch).clone(),
        tape.value(br.x_o_branch).clone(),
        tape.value(br.x_f).clone(),
        tape.value(br.alpha).as_slice().to_vec(),
    ))
}

/// Additive `N(0, σ²)` noise on every entry.
pub fn perturb_features(features: &Matrix, sigma: f64, rng: &mut Rng) -> Result<Matrix, ModelError> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(ModelError::Shape(format!("feature noise sigma {sigma} must be >= 0")));
    }
    if sigma == 0.0 {
        return Ok(features.clone());
    }
    Ok(features.map(|x| x + sigma * rng.normal()))
}

/// Context intervention: `x̃_c` is `x_c` with rows permuted by a uniform
/// random permutation, `x̃_o = x_o`. Returns the permutation used.
pub fn counterfactual_on_tape(
    tape: &mut Tape,
    x_c: Var,
    x_o: Var,
    rng: &mut Rng,
) -> Result<(Var, Var, Vec<usize>), ModelError> {
    let (nc, _) = tape.shape(x_c);
    let (no, _) = tape.shape(x_o);
    if nc != no {
        return Err(ModelError::Shape(format!("x_c has {nc} rows, x_o has {no}")));
    }
    let perm = rng.permutation(nc);
    let permuted = tape.row_select(x_c, Arc::from(perm.clone()))?;
    Ok((permuted, x_o, perm))
}

pub fn generate_counterfactual_features(
    x_c: &Matrix,
    x_o: &Matrix,
    rng: &mut Rng,
) -> Result<(Matrix, Matrix), ModelError> {
    let mut tape = Tape::new();
    let c = tape.constant(x_c.clone());
    let o = tape.constant(x_o.clone());
    let (pc, po, _) = counterfactual_on_tape(&mut tape, c, o, rng)?;
    Ok((tape.value(pc).clone(), tape.value(po).clone()))
}

impl ModelParams {
    /// Register parameters as constants (no gradients).
    pub fn register_constants(&self, tape: &mut Tape) -> ParamVars {
        let vars: Vec<Var> = self.tensors().into_iter().map(|m| tape.constant(m.clone())).collect();
        ParamVars::from_vars(&vars)
    }
}
