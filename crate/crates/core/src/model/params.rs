use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use super::ModelError;
use crate::rng::Rng;
use crate::tensor::{checkpoint, Matrix, Tape, Var};

macro_rules! model_params {
    ($($field:ident),* $(,)?) => {
        /// Every trainable array of the model.
        #[derive(Debug, Clone, PartialEq)]
        pub struct ModelParams {
            $(pub $field: Matrix,)*
        }

        /// The same parameters registered as trainable leaves on a tape.
        #[derive(Debug, Clone, Copy)]
        pub struct ParamVars {
            $(pub $field: Var,)*
        }

        impl ModelParams {
            pub const NAMES: &'static [&'static str] = &[$(stringify!($field)),*];

            pub fn tensors(&self) -> Vec<&Matrix> {
                vec![$(&self.$field),*]
            }

            pub fn into_tensors(self) -> Vec<Matrix> {
                vec![$(self.$field),*]
            }

            /// Inverse of [`into_tensors`](Self::into_tensors).
            pub fn from_tensors(tensors: Vec<Matrix>) -> Result<Self, ModelError> {
                if tensors.len() != Self::NAMES.len() {
                    return Err(ModelError::Checkpoint(format!(
                        "expected {} tensors, got {}",
                        Self::NAMES.len(),
                        tensors.len()
                    )));
                }
                let mut it = tensors.into_iter();
                Ok(Self { $($field: it.next().expect("length checked"),)* })
            }

            pub fn register(&self, tape: &mut Tape) -> ParamVars {
                ParamVars { $($field: tape.param(self.$field.clone()),)* }
            }
        }

        impl ParamVars {
            pub fn vars(&self) -> Vec<Var> {
                vec![$(self.$field),*]
            }

            /// Inverse of [`vars`](Self::vars); `vars` must come in
            /// [`ModelParams::NAMES`] order.
            pub fn from_vars(vars: &[Var]) -> Self {
                assert_eq!(vars.len(), ModelParams::NAMES.len(), "parameter count");
                let mut it = vars.iter().copied();
                Self { $($field: it.next().expect("length checked"),)* }
            }
        }
    };
}

model_params!(
    eim_proj, eim_attn, enc1_w, enc1_attn, enc2_w, enc2_attn, gate_w, gate_b, ctx_w, obj_w, fuse_w,
    fuse_b, cls_w, cls_b,
);

fn glorot(rows: usize, cols: usize, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Matrix {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| (2.0 * rng.uniform() - 1.0) * limit)
        .collect();
    Matrix::from_vec(rows, cols, data)
}

impl ModelParams {
    /// Glorot-uniform weights and attention vectors, zero biases.
    pub fn init(feature_dim: usize, hidden: usize, classes: usize, rng: &mut Rng) -> Self {
        let (d, h, c) = (feature_dim, hidden, classes);
        Self {
            eim_proj: glorot(d, h, d, h, rng),
            eim_attn: glorot(h, 1, h, 1, rng),
            enc1_w: glorot(d, h, d, h, rng),
            enc1_attn: glorot(h, 1, h, 1, rng),
            enc2_w: glorot(h, h, h, h, rng),
            enc2_attn: glorot(h, 1, h, 1, rng),
            gate_w: glorot(h, h, h, h, rng),
            gate_b: Matrix::zeros(1, h),
            ctx_w: glorot(h, h, h, h, rng),
            obj_w: glorot(h, h, h, h, rng),
            fuse_w: glorot(2 * h, 1, 2 * h, 1, rng),
            fuse_b: Matrix::zeros(1, 1),
            cls_w: glorot(h, c, h, c, rng),
            cls_b: Matrix::zeros(1, c),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.enc1_w.rows()
    }

    pub fn hidden(&self) -> usize {
        self.enc1_w.cols()
    }

    pub fn classes(&self) -> usize {
        self.cls_w.cols()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|m| m.all_finite())
    }

    pub fn named(&self) -> Vec<(String, Matrix)> {
        Self::NAMES
            .iter()
            .zip(self.tensors())
            .map(|(n, m)| ((*n).to_string(), m.clone()))
            .collect()
    }

    /// Rebuild from named tensors in any order; shapes are checked against
    /// the dimensions implied by `enc1_w` and `cls_w`.
    pub fn from_named(named: Vec<(String, Matrix)>) -> Result<Self, ModelError> {
        let mut slots: Vec<Option<Matrix>> = vec![None; Self::NAMES.len()];
        for (name, m) in named {
            let i = Self::NAMES
                .iter()
                .position(|n| *n == name)
                .ok_or_else(|| ModelError::Checkpoint(format!("unknown tensor `{name}`")))?;
            slots[i] = Some(m);
        }
        let tensors = slots
            .into_iter()
            .zip(Self::NAMES)
            .map(|(m, n)| m.ok_or_else(|| ModelError::Checkpoint(format!("missing tensor `{n}`"))))
            .collect::<Result<Vec<_>, _>>()?;
        let p = Self::from_tensors(tensors)?;
        let (d, h, c) = (p.feature_dim(), p.hidden(), p.classes());
        let expected = [
            (d, h),
            (h, 1),
            (d, h),
            (h, 1),
            (h, h),
            (h, 1),
            (h, h),
            (1, h),
            (h, h),
            (h, h),
            (2 * h, 1),
            (1, 1),
            (h, c),
            (1, c),
        ];
        for ((name, m), shape) in Self::NAMES.iter().zip(p.tensors()).zip(expected) {
            if m.shape() != shape {
                return Err(ModelError::Checkpoint(format!(
                    "tensor `{name}` has shape {:?}, expected {shape:?}",
                    m.shape()
                )));
            }
        }
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let f = File::create(path).map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))?;
        checkpoint::write_tensors(BufWriter::new(f), &self.named())
            .map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let f = File::open(path).map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))?;
        let named = checkpoint::read_tensors(BufReader::new(f))
            .map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_named(named)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_shapes_and_zero_biases() {
        let p = ModelParams::init(7, 4, 3, &mut Rng::new(0));
        assert_eq!(p.eim_proj.shape(), (7, 4));
        assert_eq!(p.fuse_w.shape(), (8, 1));
        assert_eq!(p.cls_b.as_slice(), &[0.0; 3]);
        let limit = (6.0f64 / 11.0).sqrt();
        assert!(p.enc1_w.as_slice().iter().all(|x| x.abs() <= limit));
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = ModelParams::init(5, 3, 2, &mut Rng::new(4));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.cnl");
        p.save(&path).unwrap();
        assert_eq!(ModelParams::load(&path).unwrap(), p);
    }

    #[test]
    fn from_named_rejects_bad_shapes() {
        let p = ModelParams::init(5, 3, 2, &mut Rng::new(4));
        let mut named = p.named();
        named[1].1 = Matrix::zeros(2, 1);
        assert!(ModelParams::from_named(named).is_err());
        let mut missing = p.named();
        missing.pop();
        assert!(ModelParams::from_named(missing).is_err());
    }
}
