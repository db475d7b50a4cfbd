//! Norm-based upper bound on the inductive Rademacher complexity of the
//! table-free, cosine-free model viewed as one MLP over
//! `x = concat(algorithm input, problem input)`.

use std::f64::consts::LN_2;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::embedding_store::EmbeddingCatalog;
use crate::model::{AlgorithmInput, ModelError, ModelParams};
use crate::nn::{Activation, DenseLayer};

#[derive(Debug, Error)]
pub enum BoundError {
    #[error("variant mismatch: {0}")]
    VariantMismatch(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid bound inputs: {0}")]
    InvalidInputs(String),
    #[error("no embedding for algorithm {0}")]
    MissingEmbedding(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

type Result<T> = std::result::Result<T, BoundError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub l: usize,
    pub layer_norms: Vec<f64>,
    pub gamma_s: f64,
    pub n_problems: usize,
    pub n_algorithms: usize,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(BoundError::InvalidInputs(m));
        if self.l != self.layer_norms.len() {
            return bad(format!("l = {} but {} layer norms", self.l, self.layer_norms.len()));
        }
        if self.layer_norms.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
            return bad("layer norms must be positive and finite".into());
        }
        if !(self.gamma_s > 0.0 && self.gamma_s.is_finite()) {
            return bad("gamma_s must be positive and finite".into());
        }
        if self.n_problems == 0 || self.n_algorithms == 0 {
            return bad("need at least one problem and one algorithm".into());
        }
        Ok(())
    }
}

pub fn frobenius_norm(w: &Tensor) -> f64 {
    w.values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Product of the per-layer norms.
pub fn gamma_f(layer_norms: &[f64]) -> f64 {
    layer_norms.iter().product()
}

/// Largest squared Euclidean norm over the inputs.
pub fn gamma_s(inputs: &[Vec<f64>]) -> Result<f64> {
    if inputs.is_empty() {
        return Err(BoundError::EmptyDataset);
    }
    Ok(inputs
        .iter()
        .map(|x| x.iter().map(|v| v * v).sum::<f64>())
        .fold(0.0, f64::max))
}

/// `sqrt(2 l ln2 Gf GS + 2 sqrt(P A) Gf^2 GS^1.5) / sqrt(P A)`.
pub fn rademacher_bound(b: &BoundInputs) -> f64 {
    let gf = gamma_f(&b.layer_norms);
    let gs = b.gamma_s;
    let n = (b.n_problems * b.n_algorithms) as f64;
    let inner = 2.0 * b.l as f64 * LN_2 * gf * gs + 2.0 * n.sqrt() * gf * gf * gs.powf(1.5);
    inner.sqrt() / n.sqrt()
}

/// `[[a, 0], [0, b]]`.
pub fn block_diagonal(a: &Tensor, b: &Tensor) -> Tensor {
    let (ra, ca, rb, cb) = (a.rows(), a.cols(), b.rows(), b.cols());
    let mut out = Tensor::zeros(&[ra + rb, ca + cb]);
    for i in 0..ra {
        out.values[i * (ca + cb)..i * (ca + cb) + ca].copy_from_slice(a.row(i));
    }
    for i in 0..rb {
        let start = (ra + i) * (ca + cb) + ca;
        out.values[start..start + cb].copy_from_slice(b.row(i));
    }
    out
}

/// A plain feed-forward network; layer `i` maps with `weights[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnifiedNetwork {
    pub layers: Vec<DenseLayer>,
}

impl UnifiedNetwork {
    /// Tower layers merged block-diagonally, followed by the head layers.
    pub fn from_params(params: &ModelParams) -> Result<Self> {
        let c = &params.config;
        if c.use_cosine || c.use_embedding_table || params.table.is_some() {
            return Err(BoundError::VariantMismatch(
                "bound applies only without cosine head and embedding table".into(),
            ));
        }
        let mlp_a = params
            .mlp_a
            .as_ref()
            .ok_or_else(|| BoundError::VariantMismatch("model has no algorithm tower".into()))?;
        if mlp_a.depth() != params.mlp_p.depth() {
            return Err(BoundError::VariantMismatch(format!(
                "algorithm tower depth {} differs from problem tower depth {}",
                mlp_a.depth(),
                params.mlp_p.depth()
            )));
        }
        let mut layers = Vec::new();
        for (la, lp) in mlp_a.layers.iter().zip(&params.mlp_p.layers) {
            if la.activation != lp.activation {
                return Err(BoundError::VariantMismatch("tower activations differ".into()));
            }
            let bias = match (&la.bias, &lp.bias) {
                (None, None) => None,
                (ba, bp) => {
                    let mut v = ba.as_ref().map_or(vec![0.0; la.output_dim()], |b| b.values.clone());
                    v.extend(bp.as_ref().map_or(vec![0.0; lp.output_dim()], |b| b.values.clone()));
                    Some(Tensor::vector(v))
                }
            };
            layers.push(DenseLayer {
                weight: block_diagonal(&la.weight, &lp.weight),
                bias,
                activation: la.activation,
            });
        }
        layers.extend(params.mlp_s.layers.iter().cloned());
        Ok(Self { layers })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn layer_norms(&self) -> Vec<f64> {
        self.layers.iter().map(|l| frobenius_norm(&l.weight)).collect()
    }

    pub fn forward(&self, x: &[f64]) -> f64 {
        let mut h = x.to_vec();
        for l in &self.layers {
            let w = &l.weight;
            let mut out: Vec<f64> = (0..w.rows())
                .map(|i| w.row(i).iter().zip(&h).map(|(a, b)| a * b).sum())
                .collect();
            if let Some(b) = &l.bias {
                out.iter_mut().zip(&b.values).for_each(|(o, b)| *o += b);
            }
            for o in &mut out {
                *o = match l.activation {
                    Activation::Relu => o.max(0.0),
                    Activation::Tanh => o.tanh(),
                    Activation::Identity => *o,
                };
            }
            h = out;
        }
        h[0]
    }

    /// Hypotheses of the bound: bias-free, positively homogeneous 1-Lipschitz layers.
    pub fn hypothesis_warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.layers.iter().any(|l| l.bias.is_some()) {
            w.push("layers carry biases".to_string());
        }
        if self.layers.iter().any(|l| !l.activation.is_homogeneous()) {
            w.push("non-homogeneous activation (tanh)".to_string());
        }
        w
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub l: usize,
    pub layer_norms: Vec<f64>,
    pub gamma_f: f64,
    pub gamma_s: f64,
    pub n_problems: usize,
    pub n_algorithms: usize,
    pub bound: f64,
    pub hypotheses_satisfied: bool,
    pub warnings: Vec<String>,
}

impl BoundReport {
    pub fn from_inputs(b: &BoundInputs, warnings: Vec<String>) -> Self {
        Self {
            l: b.l,
            layer_norms: b.layer_norms.clone(),
            gamma_f: gamma_f(&b.layer_norms),
            gamma_s: b.gamma_s,
            n_problems: b.n_problems,
            n_algorithms: b.n_algorithms,
            bound: rademacher_bound(b),
            hypotheses_satisfied: warnings.is_empty(),
            warnings,
        }
    }

    pub fn inputs(&self) -> BoundInputs {
        BoundInputs {
            l: self.l,
            layer_norms: self.layer_norms.clone(),
            gamma_s: self.gamma_s,
            n_problems: self.n_problems,
            n_algorithms: self.n_algorithms,
        }
    }
}

/// Unified inputs `concat(a, p)` for every (training problem, training
/// algorithm) pair.
pub fn unified_inputs(
    params: &ModelParams,
    catalog: &EmbeddingCatalog,
    problems: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    let mut seqs = Vec::with_capacity(params.algorithm_ids.len());
    for id in &params.algorithm_ids {
        seqs.push(catalog.get(id).map_err(|_| BoundError::MissingEmbedding(id.clone()))?);
    }
    let cands: Vec<AlgorithmInput<'_>> = seqs
        .iter()
        .map(|s| AlgorithmInput {
            seq: Some(*s),
            row: None,
        })
        .collect();
    let algos = params.algorithm_inputs(&cands)?;
    let mut out = Vec::with_capacity(algos.len() * problems.len());
    for p in problems {
        for a in &algos {
            let mut x = a.clone();
            x.extend_from_slice(p);
            out.push(x);
        }
    }
    Ok(out)
}

/// Measures the bound components from a trained model and its normalised
/// training problems.
pub fn bound_from_params(
    params: &ModelParams,
    catalog: &EmbeddingCatalog,
    train_problems: &[Vec<f64>],
) -> Result<BoundReport> {
    let net = UnifiedNetwork::from_params(params)?;
    let inputs = unified_inputs(params, catalog, train_problems)?;
    let b = BoundInputs {
        l: net.depth(),
        layer_norms: net.layer_norms(),
        gamma_s: gamma_s(&inputs)?,
        n_problems: train_problems.len(),
        n_algorithms: params.algorithm_ids.len(),
    };
    Ok(BoundReport::from_inputs(&b, net.hypothesis_warnings()))
}

/// Monte-Carlo lower estimate of the empirical Rademacher complexity.
///
/// For each sign vector the best of `n_weights` random bias-free networks
/// with the architecture of `net` (each layer rescaled to the Frobenius
/// norm in `norms`) is taken; the result is the mean over `n_sigma` sign
/// vectors. Every sampled network belongs to the bounded class, so the
/// estimate cannot exceed the true supremum.
pub fn sampled_rademacher(
    net: &UnifiedNetwork,
    norms: &[f64],
    inputs: &[Vec<f64>],
    n_sigma: usize,
    n_weights: usize,
    rng: &mut impl Rng,
) -> f64 {
    let n = inputs.len();
    let outputs: Vec<Vec<f64>> = (0..n_weights)
        .map(|_| {
            let layers = net
                .layers
                .iter()
                .zip(norms)
                .map(|(l, &r)| {
                    let mut w = Tensor::zeros(&[l.weight.rows(), l.weight.cols()]);
                    w.values.iter_mut().for_each(|v| *v = StandardNormal.sample(rng));
                    let f = frobenius_norm(&w);
                    w.values.iter_mut().for_each(|v| *v *= r / f);
                    DenseLayer {
                        weight: w,
                        bias: None,
                        activation: l.activation,
                    }
                })
                .collect();
            let sample = UnifiedNetwork { layers };
            inputs.iter().map(|x| sample.forward(x)).collect()
        })
        .collect();
    let mut total = 0.0;
    for _ in 0..n_sigma {
        let sigma: Vec<f64> = (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
        let best = outputs
            .iter()
            .map(|f| {
                let c: f64 = f.iter().zip(&sigma).map(|(a, s)| a * s).sum::<f64>() / n as f64;
                // the class is closed under negating the last layer
                c.abs()
            })
            .fold(0.0, f64::max);
        total += best;
    }
    total / n_sigma as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs(l: usize, gf: f64, gs: f64, np: usize, na: usize) -> BoundInputs {
        let mut norms = vec![1.0; l];
        norms[0] = gf;
        BoundInputs {
            l,
            layer_norms: norms,
            gamma_s: gs,
            n_problems: np,
            n_algorithms: na,
        }
    }

    #[test]
    fn frobenius_examples() {
        let id = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(frobenius_norm(&id), 2f64.sqrt());
        assert_eq!(frobenius_norm(&Tensor::zeros(&[3, 2])), 0.0);
        assert_eq!(frobenius_norm(&Tensor::new(vec![1, 2], vec![3.0, 4.0]).unwrap()), 5.0);
    }

    #[test]
    fn gamma_examples() {
        assert_eq!(gamma_f(&[2.0, 3.0]), 6.0);
        assert_eq!(gamma_s(&[vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap(), 4.0);
        assert_eq!(gamma_s(&[vec![0.0, 0.0]]).unwrap(), 0.0);
        assert!(matches!(gamma_s(&[]), Err(BoundError::EmptyDataset)));
        assert_eq!(rademacher_bound(&inputs(1, 1.0, 0.0, 3, 3)), 0.0);
    }

    #[test]
    fn substitution_examples() {
        assert!((rademacher_bound(&inputs(1, 1.0, 1.0, 1, 1)) - 1.840_188).abs() < 1e-6);
        assert!((rademacher_bound(&inputs(1, 1.0, 1.0, 4, 4)) - 0.765_926).abs() < 1e-6);
    }

    #[test]
    fn doubling_norms_increases() {
        let a = BoundInputs {
            l: 2,
            layer_norms: vec![1.5, 0.7],
            gamma_s: 2.0,
            n_problems: 10,
            n_algorithms: 3,
        };
        let b = BoundInputs {
            layer_norms: vec![3.0, 1.4],
            ..a.clone()
        };
        assert!(rademacher_bound(&b) > rademacher_bound(&a));
    }

    #[test]
    fn block_diagonal_norm() {
        let a = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(vec![2, 1], vec![3.0, -1.0]).unwrap();
        let d = block_diagonal(&a, &b);
        assert_eq!(d.shape, vec![3, 3]);
        assert_eq!(d.values, vec![1.0, 2.0, 0.0, 0.0, 0.0, 3.0, 0.0, 0.0, -1.0]);
        let expect = (frobenius_norm(&a).powi(2) + frobenius_norm(&b).powi(2)).sqrt();
        assert!((frobenius_norm(&d) - expect).abs() < 1e-15);
    }

    #[test]
    fn validation() {
        assert!(inputs(1, 1.0, 1.0, 1, 1).validate().is_ok());
        let mut b = inputs(2, 1.0, 1.0, 1, 1);
        b.l = 3;
        assert!(b.validate().is_err());
        assert!(inputs(1, 1.0, 0.0, 1, 1).validate().is_err());
        assert!(inputs(1, 1.0, 1.0, 0, 1).validate().is_err());
    }
}
