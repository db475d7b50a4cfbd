//! Seeded scenario and catalog generators with known structure.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::aslib_io::{ProblemInstance, RunRecord, RunStatus, Scenario, ScenarioMeta};
use crate::embedding_store::{EmbeddingCatalog, TokenEmbeddingSequence};

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * normal(rng)).collect()
}

fn record(runtime: f64, cutoff: f64) -> RunRecord {
    if runtime <= cutoff {
        RunRecord {
            runtime,
            status: RunStatus::Ok,
        }
    } else {
        RunRecord {
            runtime: cutoff,
            status: RunStatus::Timeout,
        }
    }
}

fn build(id: &str, cutoff: f64, features: Vec<Vec<f64>>, algorithms: Vec<String>, runs: Vec<RunRecord>) -> Scenario {
    let nf = features.first().map_or(0, Vec::len);
    let meta = ScenarioMeta {
        scenario_id: id.to_string(),
        cutoff_time: cutoff,
        maximize: false,
        performance_measure: "runtime".to_string(),
        feature_names: (0..nf).map(|j| format!("f{j}")).collect(),
        algorithms: algorithms.clone(),
    };
    let instances = features
        .into_iter()
        .enumerate()
        .map(|(i, f)| ProblemInstance {
            instance_id: format!("inst_{i:04}"),
            features: f.into_iter().map(Some).collect(),
        })
        .collect();
    Scenario::new(meta, algorithms, instances, runs).expect("generator output is consistent")
}

/// Best algorithm is the one whose centroid is nearest to the instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CentroidScenario {
    pub n_instances: usize,
    pub n_algorithms: usize,
    pub n_features: usize,
    pub embed_dim: usize,
    pub tokens: usize,
    pub cutoff: f64,
    /// Spread of the centroids.
    pub centroid_scale: f64,
    /// Spread of instances around their generating centroid.
    pub instance_noise: f64,
    /// Runtime growth per unit of extra distance.
    pub slope: f64,
    pub base_runtime: f64,
    pub token_noise: f64,
    pub seed: u64,
}

impl Default for CentroidScenario {
    fn default() -> Self {
        Self {
            n_instances: 200,
            n_algorithms: 6,
            n_features: 10,
            embed_dim: 16,
            tokens: 4,
            cutoff: 1000.0,
            centroid_scale: 2.0,
            instance_noise: 1.0,
            slope: 1.5,
            base_runtime: 5.0,
            token_noise: 0.1,
            seed: 0,
        }
    }
}

/// A planted scenario plus matching algorithm embeddings.
#[derive(Debug, Clone)]
pub struct Planted {
    pub scenario: Scenario,
    pub catalog: EmbeddingCatalog,
    /// Coordinates of the algorithm features that drive performance.
    pub signal_dims: Vec<usize>,
}

impl CentroidScenario {
    /// Runtime `base * exp(slope * (d_a - d_min))`, where `d_a` is the
    /// distance to algorithm `a`'s centroid. Each token is a fixed linear
    /// image of the centroid plus noise, so embeddings identify behaviour.
    pub fn generate(&self) -> Planted {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let (na, nf) = (self.n_algorithms, self.n_features);
        let centroids: Vec<Vec<f64>> = (0..na).map(|_| normal_vec(&mut rng, nf, self.centroid_scale)).collect();
        let features: Vec<Vec<f64>> = (0..self.n_instances)
            .map(|_| {
                let c = &centroids[rng.random_range(0..na)];
                c.iter().map(|v| v + self.instance_noise * normal(&mut rng)).collect()
            })
            .collect();
        let mut runs = Vec::with_capacity(self.n_instances * na);
        for x in &features {
            let d: Vec<f64> = centroids
                .iter()
                .map(|c| c.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
                .collect();
            let dmin = d.iter().cloned().fold(f64::INFINITY, f64::min);
            for da in &d {
                runs.push(record(
                    self.base_runtime * (self.slope * (da - dmin)).exp(),
                    self.cutoff,
                ));
            }
        }
        let projection: Vec<Vec<f64>> = (0..self.embed_dim)
            .map(|_| normal_vec(&mut rng, nf, 1.0 / (nf as f64).sqrt()))
            .collect();
        let algorithms: Vec<String> = (0..na).map(|a| format!("algo_{a}")).collect();
        let mut catalog = EmbeddingCatalog::new(self.embed_dim);
        for (id, c) in algorithms.iter().zip(&centroids) {
            let base: Vec<f64> = projection
                .iter()
                .map(|row| row.iter().zip(c).map(|(p, v)| p * v).sum())
                .collect();
            let tokens = (0..self.tokens)
                .map(|_| base.iter().map(|b| b + self.token_noise * normal(&mut rng)).collect())
                .collect();
            catalog
                .insert(TokenEmbeddingSequence::new(id.as_str(), tokens).expect("finite tokens"))
                .expect("unique ids");
        }
        Planted {
            scenario: build("planted-centroid", self.cutoff, features, algorithms, runs),
            catalog,
            signal_dims: Vec::new(),
        }
    }
}

/// Performance depends on a few coordinates of the algorithm embedding and
/// nothing else.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalScenario {
    pub n_instances: usize,
    pub n_algorithms: usize,
    /// Embedding width; also the encoder output width under mean pooling.
    pub dim: usize,
    pub n_signal: usize,
    pub cutoff: f64,
    pub base_runtime: f64,
    pub slope: f64,
    pub seed: u64,
}

impl Default for SignalScenario {
    fn default() -> Self {
        Self {
            n_instances: 200,
            n_algorithms: 24,
            dim: 32,
            n_signal: 5,
            cutoff: 1000.0,
            base_runtime: 20.0,
            slope: 1.0,
            seed: 0,
        }
    }
}

impl SignalScenario {
    /// Algorithm `a` has one token `z_a`; instance `p` has features `x_p`
    /// of width `n_signal`; runtime is `base * exp(-slope * <x_p, z_a[S]>)`
    /// over a hidden, seed-dependent coordinate set `S`.
    pub fn generate(&self) -> Planted {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut signal_dims = sample(&mut rng, self.dim, self.n_signal).into_vec();
        signal_dims.sort_unstable();
        let embeddings: Vec<Vec<f64>> = (0..self.n_algorithms)
            .map(|_| normal_vec(&mut rng, self.dim, 1.0))
            .collect();
        let features: Vec<Vec<f64>> = (0..self.n_instances)
            .map(|_| normal_vec(&mut rng, self.n_signal, 1.0))
            .collect();
        let scale = 1.0 / (self.n_signal as f64).sqrt();
        let mut runs = Vec::with_capacity(self.n_instances * self.n_algorithms);
        for x in &features {
            for z in &embeddings {
                let u: f64 = signal_dims.iter().zip(x).map(|(&d, xv)| z[d] * xv).sum::<f64>() * scale;
                runs.push(record(self.base_runtime * (-self.slope * u).exp(), self.cutoff));
            }
        }
        let algorithms: Vec<String> = (0..self.n_algorithms).map(|a| format!("algo_{a:02}")).collect();
        let mut catalog = EmbeddingCatalog::new(self.dim);
        for (id, z) in algorithms.iter().zip(embeddings) {
            catalog
                .insert(TokenEmbeddingSequence::new(id.as_str(), vec![z]).expect("finite tokens"))
                .expect("unique ids");
        }
        Planted {
            scenario: build("planted-signal", self.cutoff, features, algorithms, runs),
            catalog,
            signal_dims,
        }
    }
}

/// Arbitrary small scenario with mixed statuses, for property tests.
pub fn random_scenario(rng: &mut impl Rng, n_instances: usize, n_algorithms: usize, n_features: usize) -> Scenario {
    let cutoff = rng.random_range(1.0..2000.0f64).round();
    let features = (0..n_instances)
        .map(|_| (0..n_features).map(|_| rng.random_range(-5.0..5.0)).collect())
        .collect();
    let algorithms: Vec<String> = (0..n_algorithms).map(|a| format!("a{a}")).collect();
    let runs = (0..n_instances * n_algorithms)
        .map(|_| {
            let runtime = match rng.random_range(0..10) {
                0 => cutoff,
                1 => cutoff * rng.random_range(1.0..3.0),
                _ => rng.random_range(0.0..cutoff),
            };
            let status = match rng.random_range(0..12) {
                0 => RunStatus::Timeout,
                1 => RunStatus::Crash,
                2 => RunStatus::Memout,
                _ => RunStatus::Ok,
            };
            RunRecord { runtime, status }
        })
        .collect();
    build("random", cutoff, features, algorithms, runs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::{par10_matrix, sbs, vbs};

    #[test]
    fn centroid_best_is_nearest_and_sbs_far_from_vbs() {
        let p = CentroidScenario::default().generate();
        let s = &p.scenario;
        assert_eq!(s.num_instances(), 200);
        assert_eq!(s.num_algorithms(), 6);
        assert_eq!(s.meta.num_features(), 10);
        let all: Vec<usize> = (0..200).collect();
        let v = vbs(s, &all).unwrap();
        let b = sbs(s, &all, &all).unwrap();
        assert!(b.par10 > 20.0 * v, "sbs {} vbs {}", b.par10, v);
        let m = par10_matrix(s);
        assert!(m.iter().all(|row| row.contains(&5.0)));
    }

    #[test]
    fn generators_are_deterministic() {
        let a = CentroidScenario::default().generate();
        let b = CentroidScenario::default().generate();
        assert_eq!(a.scenario, b.scenario);
        assert_eq!(a.catalog, b.catalog);
        let c = SignalScenario {
            seed: 3,
            ..Default::default()
        };
        let (x, y) = (c.generate(), c.generate());
        assert_eq!(x.scenario, y.scenario);
        assert_eq!(x.signal_dims, y.signal_dims);
        assert_eq!(x.signal_dims.len(), 5);
    }

    #[test]
    fn signal_dims_vary_with_seed() {
        let dims: Vec<Vec<usize>> = (0..5)
            .map(|s| {
                SignalScenario {
                    seed: s,
                    ..Default::default()
                }
                .generate()
                .signal_dims
            })
            .collect();
        assert!(dims.windows(2).any(|w| w[0] != w[1]));
    }
}
