//! Shared helpers for the integration tests.
#![allow(dead_code)]

use asllm_core::autodiff::{Graph, Tensor, Var};
use asllm_core::model::ModelConfig;
use asllm_core::training::TrainConfig;

/// Worst relative error between reverse-mode and central-difference
/// gradients over every coordinate of every tensor of `params`.
///
/// `loss` builds the scalar loss in a fresh graph and returns it together
/// with the variables bound for `tensors_mut(params)`, in the same order.
pub fn param_grad_check<P: Clone>(
    params: &P,
    tensors_mut: impl Fn(&mut P) -> Vec<&mut Tensor>,
    loss: impl Fn(&P, &mut Graph, bool) -> (Var, Vec<Var>),
    eps: f64,
) -> f64 {
    let mut g = Graph::new();
    let (root, vars) = loss(params, &mut g, true);
    g.backward(root).unwrap();
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| g.grad(v).to_vec()).collect();
    let eval = |q: &P| {
        let mut g = Graph::new();
        let (root, _) = loss(q, &mut g, false);
        g.scalar(root)
    };
    let mut q = params.clone();
    let sizes: Vec<usize> = tensors_mut(&mut q).iter().map(|t| t.numel()).collect();
    assert_eq!(sizes.len(), analytic.len(), "variable count");
    let mut worst: f64 = 0.0;
    for (ti, &n) in sizes.iter().enumerate() {
        for j in 0..n {
            let orig = tensors_mut(&mut q)[ti].values[j];
            tensors_mut(&mut q)[ti].values[j] = orig + eps;
            let plus = eval(&q);
            tensors_mut(&mut q)[ti].values[j] = orig - eps;
            let minus = eval(&q);
            tensors_mut(&mut q)[ti].values[j] = orig;
            let fd = (plus - minus) / (2.0 * eps);
            let ad = analytic[ti][j];
            let e = (ad - fd).abs() / (ad.abs() + fd.abs()).max(1e-8);
            worst = worst.max(e);
        }
    }
    worst
}

/// Compact model used by the planted end-to-end experiments.
pub fn small_model() -> ModelConfig {
    ModelConfig {
        embed_dim: 16,
        lstm_hidden: 16,
        feature_dim: 32,
        top_k: 8,
        repr_dim: 16,
        problem_hidden: vec![32],
        algorithm_hidden: vec![32],
        score_hidden: vec![16],
        ..Default::default()
    }
}

pub fn small_train(seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: 3e-3,
        epochs_stage1: 20,
        epochs_stage2: 20,
        batch_size: 32,
        seed,
        ..Default::default()
    }
}

/// Tiny model for gradient and serialization checks.
pub fn tiny_model() -> ModelConfig {
    ModelConfig {
        embed_dim: 3,
        lstm_hidden: 3,
        feature_dim: 5,
        top_k: 2,
        repr_dim: 3,
        problem_hidden: vec![4],
        algorithm_hidden: vec![4],
        score_hidden: vec![3],
        ..Default::default()
    }
}
