mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use asllm_core::aslib_io::split_instances;
use asllm_core::evaluation::{
    par10_matrix, predict_choices, predict_scores, score_choices, vbs, vbs_choices, EvaluationReport,
};
use asllm_core::model::{LossMode, ModelConfig, ModelParams};
use asllm_core::synthetic::{CentroidScenario, Planted};
use asllm_core::training::{train_model, Dataset, TrainConfig};

use common::{small_model, small_train};

fn planted() -> Planted {
    CentroidScenario {
        n_instances: 80,
        seed: 11,
        ..Default::default()
    }
    .generate()
}

fn constant_head(config: &ModelConfig, ids: &[String]) -> ModelParams {
    let mut params = ModelParams::init_stage2(config, 10, ids, vec![0, 5, 9], 3).unwrap();
    let last = params.mlp_s.layers.last_mut().unwrap();
    last.weight.values.iter_mut().for_each(|w| *w = 0.0);
    last.bias.as_mut().unwrap().values[0] = 0.25;
    params
}

#[test]
fn constant_model_picks_the_first_algorithm() {
    let p = planted();
    let split = split_instances(80, 0.8, 0).unwrap();
    let data = Dataset::new(&p.scenario, &p.catalog, split, None).unwrap();
    for loss_mode in [LossMode::Regression, LossMode::Classification] {
        let config = ModelConfig {
            loss_mode,
            ..small_model()
        };
        let params = constant_head(&config, &data.algorithm_ids());
        let scores = predict_scores(&params, &p.scenario, &p.catalog, &data.problems).unwrap();
        assert!(scores.iter().flatten().all(|&s| s == 0.25));
        let choices = predict_choices(&data, &params, &data.split.test).unwrap();
        assert!(choices.iter().all(|&c| c == 0));
    }
}

#[test]
fn oracle_choices_score_the_vbs() {
    let p = planted();
    let split = split_instances(80, 0.8, 1).unwrap();
    let mut report = EvaluationReport::new(&p.scenario, &split).unwrap();
    let oracle = vbs_choices(&p.scenario, &split.test);
    let r = report
        .add_choices(&p.scenario, &split, "oracle", None, &oracle)
        .unwrap();
    assert_eq!(r.par10, vbs(&p.scenario, &split.test).unwrap());
    assert_eq!(r.gap_closed, Some(1.0));
    assert!(report.best_selector.is_none());
    let sbs = vec![report.sbs.algorithm_index; split.test.len()];
    let r = report.add_choices(&p.scenario, &split, "single", None, &sbs).unwrap();
    assert_eq!(r.gap_closed, Some(0.0));
}

#[test]
fn random_selectors_stay_within_bounds() {
    let p = planted();
    let split = split_instances(80, 0.8, 2).unwrap();
    let ten_c = 10.0 * p.scenario.cutoff();
    let best = vbs(&p.scenario, &split.test).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let choices: Vec<usize> = split.test.iter().map(|_| rng.random_range(0..6)).collect();
        let s = score_choices(&p.scenario, &split.test, &choices).unwrap();
        assert!(best <= s && s <= ten_c);
    }
    let m = par10_matrix(&p.scenario);
    assert!(m.iter().flatten().all(|&x| (0.0..=ten_c).contains(&x)));
}

#[test]
fn trained_model_report_is_consistent_and_deterministic() {
    let p = planted();
    let split = split_instances(80, 0.8, 3).unwrap();
    let data = Dataset::new(&p.scenario, &p.catalog, split.clone(), None).unwrap();
    let train = TrainConfig {
        epochs_stage1: 6,
        epochs_stage2: 6,
        ..small_train(3)
    };
    let build = || {
        let mut report = EvaluationReport::new(&p.scenario, &split).unwrap();
        for loss_mode in [LossMode::Regression, LossMode::Classification] {
            let config = ModelConfig {
                loss_mode,
                ..small_model()
            };
            let trained = train_model(&data, &config, &train).unwrap();
            let name = format!("{loss_mode:?}").to_lowercase();
            report.add_model(&data, &name, &trained.params).unwrap();
        }
        report
    };
    let report = build();
    for s in &report.selectors {
        assert!(report.vbs_par10 <= s.par10 && s.par10 <= 10.0 * report.cutoff);
        assert_eq!(s.choices.len(), split.test.len());
        assert_eq!(
            s.provenance,
            ["algorithm_features", "feature_selection", "embedding_table", "cosine"]
        );
    }
    let best = report.best_selector.clone().unwrap();
    let min = report.selectors.iter().map(|s| s.par10).fold(f64::INFINITY, f64::min);
    assert_eq!(report.selector(&best).unwrap().par10, min);
    assert_eq!(build().to_json(), report.to_json());
    let table = report.to_table();
    assert!(table.lines().next().unwrap().starts_with("Scenario"));
    assert!(table.contains("regression") && table.contains("classification"));
    assert_eq!(report.to_csv().lines().count(), 5);
}
