#![allow(dead_code)]

use cnl_core::graph::{build_bundle, GraphBundle};
use cnl_core::tensor::Matrix;
use cnl_core::Rng;

/// Finite-difference step and tolerance used by every gradient check.
pub const FD_STEP: f64 = 1e-4;
pub const FD_TOL: f64 = 1e-3;
/// Magnitude below which gradient entries are compared absolutely.
pub const FD_FLOOR: f64 = 1e-4;

pub fn random_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect())
}

/// Relative error with a floor on the denominator.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

fn central_difference(probe: &mut [Matrix], which: usize, i: usize, step: f64, f: &dyn Fn(&[Matrix]) -> f64) -> f64 {
    let orig = probe[which].as_slice()[i];
    probe[which].as_mut_slice()[i] = orig + step;
    let up = f(probe);
    probe[which].as_mut_slice()[i] = orig - step;
    let down = f(probe);
    probe[which].as_mut_slice()[i] = orig;
    (up - down) / (2.0 * step)
}

/// Like [`fd_max_error`], but an entry failing at [`FD_STEP`] is re-checked
/// with steps 1e-5 and 1e-6 and counts as the worse of those two. A failure
/// that vanishes at smaller steps means the `FD_STEP` probe crossed a
/// LeakyReLU kink, where the loss is not differentiable.
pub fn fd_max_error_smooth(inputs: &[Matrix], which: usize, analytic: &Matrix, f: &dyn Fn(&[Matrix]) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    let mut probe = inputs.to_vec();
    for i in 0..inputs[which].len() {
        let a = analytic.as_slice()[i];
        let mut err = rel_err(a, central_difference(&mut probe, which, i, FD_STEP, f));
        if err >= FD_TOL {
            err = [1e-5, 1e-6]
                .iter()
                .map(|&h| rel_err(a, central_difference(&mut probe, which, i, h, f)))
                .fold(0.0, f64::max);
        }
        worst = worst.max(err);
    }
    worst
}

/// Largest relative error between `analytic` and central differences of
/// `f` with respect to every entry of `inputs[which]`.
pub fn fd_max_error(inputs: &[Matrix], which: usize, analytic: &Matrix, f: &dyn Fn(&[Matrix]) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    let mut probe = inputs.to_vec();
    for i in 0..inputs[which].len() {
        let numeric = central_difference(&mut probe, which, i, FD_STEP, f);
        worst = worst.max(rel_err(analytic.as_slice()[i], numeric));
    }
    worst
}

/// Random symmetric graph on `n` nodes with roughly `avg_degree` neighbours
/// per node, `d` Gaussian features and labels in `0..classes`.
pub fn random_graph(n: usize, avg_degree: f64, d: usize, classes: usize, rng: &mut Rng) -> GraphBundle {
    let p = (avg_degree / (n.max(2) - 1) as f64).min(1.0);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.bernoulli(p) {
                edges.push((u, v));
                edges.push((v, u));
            }
        }
    }
    let features = random_matrix(n, d, rng);
    let mut labels: Vec<usize> = (0..n).map(|v| v % classes).collect();
    rng.shuffle(&mut labels);
    build_bundle(&edges, features, labels, None).expect("valid random graph").0
}
