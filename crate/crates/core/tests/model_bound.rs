mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use asllm_core::aslib_io::split_instances;
use asllm_core::bound::{bound_from_params, rademacher_bound, unified_inputs, BoundError, UnifiedNetwork};
use asllm_core::embedding_store::{synth_catalog, TokenEmbeddingSequence};
use asllm_core::model::{AlgorithmInput, ModelConfig, ModelError, ModelParams};
use asllm_core::synthetic::CentroidScenario;
use asllm_core::training::{train_model, Dataset};

use common::{small_model, small_train, tiny_model};

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|a| format!("algo_{a}")).collect()
}

fn jitter(params: &mut ModelParams, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in params.tensors_mut() {
        t.values.iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
    }
}

fn bound_config() -> ModelConfig {
    ModelConfig {
        mlp_bias: false,
        use_feature_selection: false,
        ..tiny_model().generalizing()
    }
}

#[test]
fn table_rows_separate_identical_sequences() {
    let config = small_model();
    let ids = ids(4);
    let cat = synth_catalog(&ids, config.embed_dim, 3, 1);
    let shared = cat.get("algo_0").unwrap().clone();
    for seed in 0..5 {
        let mut params = ModelParams::init_stage1(&config, 4, &ids, seed).unwrap();
        jitter(&mut params, seed);
        let p = [0.3, -1.0, 0.5, 2.0];
        let a = params.score_pair(&p, Some(&shared), Some(0)).unwrap();
        let b = params.score_pair(&p, Some(&shared), Some(1)).unwrap();
        assert!(a.is_finite() && b.is_finite());
        assert_ne!(a, b, "seed {seed}");
    }
}

#[test]
fn generalizing_model_scores_unseen_algorithms() {
    let config = small_model().generalizing();
    let mut params = ModelParams::init_stage2(&config, 4, &ids(3), vec![1, 4, 7], 2).unwrap();
    jitter(&mut params, 2);
    let unseen = synth_catalog(&["new"], config.embed_dim, 5, 9);
    let s = params
        .score_g(&[1.0, 0.0, -1.0, 0.5], unseen.get("new").unwrap())
        .unwrap();
    assert!(s.is_finite());
    let full = ModelParams::init_stage2(&small_model(), 4, &ids(3), vec![1], 2).unwrap();
    assert!(matches!(
        full.score_g(&[0.0; 4], unseen.get("new").unwrap()),
        Err(ModelError::VariantMismatch(_))
    ));
}

#[test]
fn unified_network_reproduces_the_score() {
    for config in [bound_config(), tiny_model().generalizing()] {
        let ids = ids(3);
        let cat = synth_catalog(&ids, config.embed_dim, 4, 5);
        let mut params = ModelParams::init_stage2(&config, 3, &ids, vec![0, 2], 5).unwrap();
        jitter(&mut params, 5);
        let net = UnifiedNetwork::from_params(&params).unwrap();
        assert_eq!(net.depth(), params.mlp_p.depth() + params.mlp_s.depth());
        let cands: Vec<AlgorithmInput<'_>> = ids
            .iter()
            .map(|id| AlgorithmInput {
                seq: Some(cat.get(id).unwrap()),
                row: None,
            })
            .collect();
        let inputs = params.algorithm_inputs(&cands).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..10 {
            let p: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            for (a, id) in ids.iter().enumerate() {
                let mut x = inputs[a].clone();
                x.extend(&p);
                let direct = params.score_g(&p, cat.get(id).unwrap()).unwrap();
                assert!((net.forward(&x) - direct).abs() <= 1e-12);
            }
        }
        assert_eq!(net.hypothesis_warnings().is_empty(), !config.mlp_bias);
    }
}

#[test]
fn bound_rejects_non_generalizing_models() {
    let ids = ids(2);
    let full = ModelParams::init_stage2(&tiny_model(), 3, &ids, vec![0], 1).unwrap();
    assert!(matches!(
        UnifiedNetwork::from_params(&full),
        Err(BoundError::VariantMismatch(_))
    ));
    let uneven = ModelConfig {
        problem_hidden: vec![4, 4],
        ..bound_config()
    };
    let params = ModelParams::init_stage2(&uneven, 3, &ids, vec![0], 1).unwrap();
    assert!(matches!(
        UnifiedNetwork::from_params(&params),
        Err(BoundError::VariantMismatch(_))
    ));
}

#[test]
fn trained_model_bound_matches_the_formula() {
    let planted = CentroidScenario {
        n_instances: 40,
        embed_dim: 3,
        seed: 3,
        ..Default::default()
    }
    .generate();
    let split = split_instances(40, 0.75, 3).unwrap();
    let data = Dataset::new(&planted.scenario, &planted.catalog, split, None).unwrap();
    let config = ModelConfig {
        feature_dim: 5,
        ..bound_config()
    };
    let trained = train_model(&data, &config, &small_train(3)).unwrap();
    let train_problems: Vec<Vec<f64>> = data.split.train.iter().map(|&p| data.problems[p].clone()).collect();
    let report = bound_from_params(&trained.params, &planted.catalog, &train_problems).unwrap();
    assert_eq!(report.l, 4);
    assert_eq!(report.n_problems, 30);
    assert_eq!(report.n_algorithms, 6);
    assert!(report.hypotheses_satisfied);
    assert_eq!(report.bound, rademacher_bound(&report.inputs()));
    let inputs = unified_inputs(&trained.params, &planted.catalog, &train_problems).unwrap();
    assert_eq!(inputs.len(), 180);
    let max_sq = inputs
        .iter()
        .map(|x| x.iter().map(|v| v * v).sum::<f64>())
        .fold(0.0, f64::max);
    assert_eq!(report.gamma_s, max_sq);
}

#[test]
fn stage2_ignores_unselected_token_directions() {
    // mean-pooled features make the encoder output the token itself
    let config = ModelConfig {
        encoder: asllm_core::model::EncoderKind::MeanPool,
        feature_dim: 6,
        embed_dim: 6,
        top_k: 2,
        ..small_model()
    };
    let ids = ids(2);
    let mut params = ModelParams::init_stage2(&config, 3, &ids, vec![1, 4], 8).unwrap();
    jitter(&mut params, 8);
    let a = TokenEmbeddingSequence::new("algo_0", vec![vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]]).unwrap();
    let b = TokenEmbeddingSequence::new("algo_0", vec![vec![9.0, 0.2, -3.0, 7.0, 0.5, 1e3]]).unwrap();
    let p = [0.5, -0.5, 1.0];
    assert_eq!(
        params.score_pair(&p, Some(&a), Some(0)).unwrap(),
        params.score_pair(&p, Some(&b), Some(0)).unwrap()
    );
}
