use serde::{Deserialize, Serialize};

use super::{Matrix, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
}

impl AdamState {
    pub fn new(params: &[Matrix]) -> Self {
        Self {
            step: 0,
            m: params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect(),
            v: params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect(),
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(
    params: &mut [Matrix],
    grads: &[Matrix],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<(), TensorError> {
    if !(cfg.lr > 0.0) {
        return Err(TensorError::InvalidArgument(format!(
            "learning rate must be > 0, got {}",
            cfg.lr
        )));
    }
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(TensorError::InvalidArgument(format!(
            "adam: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(TensorError::Shape {
                op: "adam_step",
                lhs: p.shape(),
                rhs: g.shape(),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let it = p
            .as_mut_slice()
            .iter_mut()
            .zip(g.as_slice())
            .zip(m.as_mut_slice().iter_mut().zip(v.as_mut_slice().iter_mut()));
        for ((pv, &gv), (mv, vv)) in it {
            *mv = cfg.beta1 * *mv + (1.0 - cfg.beta1) * gv;
            *vv = cfg.beta2 * *vv + (1.0 - cfg.beta2) * gv * gv;
            let m_hat = *mv / bc1;
            let v_hat = *vv / bc2;
            *pv -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_from_zero_state_leaves_params() {
        let mut p = vec![Matrix::from_vec(1, 2, vec![0.3, -0.7])];
        let g = vec![Matrix::zeros(1, 2)];
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &g, &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(p[0].as_slice(), &[0.3, -0.7]);
        assert_eq!(st.m[0].as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn zero_gradient_decays_moments() {
        let cfg = AdamConfig::default();
        let mut p = vec![Matrix::scalar(1.0)];
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &[Matrix::scalar(2.0)], &mut st, &cfg).unwrap();
        let (m1, v1) = (st.m[0].item(), st.v[0].item());
        adam_step(&mut p, &[Matrix::scalar(0.0)], &mut st, &cfg).unwrap();
        assert_eq!(st.m[0].item(), 0.9 * m1);
        assert_eq!(st.v[0].item(), 0.999 * v1);
    }

    #[test]
    fn first_scalar_step_matches_hand_computation() {
        // m1 = 0.1 g, v1 = 0.001 g²; bias correction gives m̂ = g, v̂ = g²,
        // so the step is lr · g / (|g| + eps).
        let cfg = AdamConfig::default();
        for &g in &[0.5, -3.0, 1e-3] {
            let mut p = vec![Matrix::scalar(0.0)];
            let mut st = AdamState::new(&p);
            adam_step(&mut p, &[Matrix::scalar(g)], &mut st, &cfg).unwrap();
            let expected = -cfg.lr * g / (g.abs() + cfg.eps);
            assert!((p[0].item() - expected).abs() < 1e-15, "g={g}");
        }
    }

    #[test]
    fn two_steps_differ_from_one_double_step() {
        let g = [Matrix::scalar(0.4)];
        let mut a = vec![Matrix::scalar(0.0)];
        let mut sa = AdamState::new(&a);
        let cfg = AdamConfig::default();
        adam_step(&mut a, &g, &mut sa, &cfg).unwrap();
        adam_step(&mut a, &[Matrix::scalar(-0.4)], &mut sa, &cfg).unwrap();
        let mut b = vec![Matrix::scalar(0.0)];
        let mut sb = AdamState::new(&b);
        let double = AdamConfig { lr: 2e-3, ..cfg };
        adam_step(&mut b, &g, &mut sb, &double).unwrap();
        assert!((a[0].item() - b[0].item()).abs() > 1e-4);
    }

    #[test]
    fn rejects_non_positive_lr() {
        let mut p = vec![Matrix::scalar(0.0)];
        let mut st = AdamState::new(&p);
        let cfg = AdamConfig { lr: 0.0, ..Default::default() };
        assert!(adam_step(&mut p, &[Matrix::scalar(1.0)], &mut st, &cfg).is_err());
    }
}
