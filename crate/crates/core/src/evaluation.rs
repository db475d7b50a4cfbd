//! PAR10 scoring, the VBS and SBS references, model-driven selection and
//! the ablation battery.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aslib_io::{RunRecord, RunStatus, Scenario, SplitIndex};
use crate::embedding_store::EmbeddingCatalog;
use crate::model::{make_ablation, Ablation, AlgorithmInput, LossMode, ModelConfig, ModelError, ModelParams};
use crate::training::{train_model, Dataset, TrainConfig, TrainingError};

#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error("empty instance subset")]
    EmptySubset,
    #[error("no embedding for algorithm {0}")]
    MissingEmbedding(String),
    #[error("model expects {expected} problem features, scenario has {found}")]
    FeatureMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Training(#[from] TrainingError),
}

type Result<T> = std::result::Result<T, EvaluationError>;

/// Runtime when solved within the cutoff (inclusive), `10 C` otherwise.
pub fn par10(runtime: f64, status: RunStatus, cutoff: f64) -> f64 {
    if status == RunStatus::Ok && runtime <= cutoff {
        runtime
    } else {
        10.0 * cutoff
    }
}

pub fn par10_record(r: &RunRecord, cutoff: f64) -> f64 {
    par10(r.runtime, r.status, cutoff)
}

/// `par10[instance][algorithm]` for the whole scenario.
pub fn par10_matrix(s: &Scenario) -> Vec<Vec<f64>> {
    let c = s.cutoff();
    (0..s.num_instances())
        .map(|p| (0..s.num_algorithms()).map(|a| par10_record(s.run(p, a), c)).collect())
        .collect()
}

/// Mean over `subset` of the per-instance best PAR10.
pub fn vbs(s: &Scenario, subset: &[usize]) -> Result<f64> {
    if subset.is_empty() {
        return Err(EvaluationError::EmptySubset);
    }
    let c = s.cutoff();
    let total: f64 = subset
        .iter()
        .map(|&p| {
            (0..s.num_algorithms())
                .map(|a| par10_record(s.run(p, a), c))
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    Ok(total / subset.len() as f64)
}

/// Per-instance best algorithm, ties to the lower index.
pub fn vbs_choices(s: &Scenario, subset: &[usize]) -> Vec<usize> {
    let c = s.cutoff();
    subset
        .iter()
        .map(|&p| {
            let scores: Vec<f64> = (0..s.num_algorithms()).map(|a| par10_record(s.run(p, a), c)).collect();
            argmin(&scores)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleBest {
    pub algorithm_index: usize,
    pub algorithm_id: String,
    pub par10: f64,
}

/// Lowest mean PAR10 on `train` (ties to the lower index), scored on `eval`.
pub fn sbs(s: &Scenario, train: &[usize], eval: &[usize]) -> Result<SingleBest> {
    if train.is_empty() || eval.is_empty() {
        return Err(EvaluationError::EmptySubset);
    }
    let means: Vec<f64> = (0..s.num_algorithms()).map(|a| mean_par10(s, train, a)).collect();
    let best = argmin(&means);
    Ok(SingleBest {
        algorithm_index: best,
        algorithm_id: s.algorithms[best].clone(),
        par10: mean_par10(s, eval, best),
    })
}

fn mean_par10(s: &Scenario, subset: &[usize], a: usize) -> f64 {
    let c = s.cutoff();
    subset.iter().map(|&p| par10_record(s.run(p, a), c)).sum::<f64>() / subset.len() as f64
}

/// Mean PAR10 of picking `choices[i]` on `subset[i]`.
pub fn score_choices(s: &Scenario, subset: &[usize], choices: &[usize]) -> Result<f64> {
    if subset.is_empty() {
        return Err(EvaluationError::EmptySubset);
    }
    let c = s.cutoff();
    let total: f64 = subset
        .iter()
        .zip(choices)
        .map(|(&p, &a)| par10_record(s.run(p, a), c))
        .sum();
    Ok(total / subset.len() as f64)
}

pub fn argmin(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x < xs[best] {
            best = i;
        }
    }
    best
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Index picked from candidate scores under the loss mode's direction.
pub fn select_from_scores(scores: &[f64], mode: LossMode) -> usize {
    match mode {
        LossMode::Regression => argmin(scores),
        LossMode::Classification => argmax(scores),
    }
}

/// `(sbs - selector) / (sbs - vbs)`, undefined when the references coincide.
pub fn gap_closed(sbs: f64, vbs: f64, selector: f64) -> Option<f64> {
    let denom = sbs - vbs;
    (denom != 0.0).then(|| (sbs - selector) / denom)
}

/// Scores every scenario algorithm for the given instances with a trained
/// model: `out[i][a]`.
pub fn predict_scores(
    params: &ModelParams,
    scenario: &Scenario,
    catalog: &EmbeddingCatalog,
    problems: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    if let Some(p) = problems.first() {
        if p.len() != params.num_problem_features {
            return Err(EvaluationError::FeatureMismatch {
                expected: params.num_problem_features,
                found: p.len(),
            });
        }
    }
    let needs_seq = params.config.use_algorithm_features;
    let mut seqs = Vec::with_capacity(scenario.num_algorithms());
    for id in &scenario.algorithms {
        seqs.push(if needs_seq {
            Some(
                catalog
                    .get(id)
                    .map_err(|_| EvaluationError::MissingEmbedding(id.clone()))?,
            )
        } else {
            None
        });
    }
    let candidates: Vec<AlgorithmInput<'_>> = scenario
        .algorithms
        .iter()
        .zip(&seqs)
        .map(|(id, seq)| AlgorithmInput {
            seq: *seq,
            row: params.row_of(id),
        })
        .collect();
    Ok(params.score_matrix(problems, &candidates)?)
}

/// Chosen algorithm index for each of `instances`.
pub fn predict_choices(data: &Dataset<'_>, params: &ModelParams, instances: &[usize]) -> Result<Vec<usize>> {
    let problems: Vec<Vec<f64>> = instances.iter().map(|&p| data.problems[p].clone()).collect();
    let scores = predict_scores(params, data.scenario, data.catalog, &problems)?;
    Ok(scores
        .iter()
        .map(|row| select_from_scores(row, params.config.loss_mode))
        .collect())
}

/// Chosen algorithm id for one instance.
pub fn select(data: &Dataset<'_>, params: &ModelParams, instance: usize) -> Result<String> {
    let a = predict_choices(data, params, &[instance])?[0];
    Ok(data.scenario.algorithms[a].clone())
}

/// Model components a selector used.
pub fn provenance(config: &ModelConfig) -> Vec<String> {
    let mut flags = Vec::new();
    if config.use_algorithm_features {
        flags.push("algorithm_features".to_string());
        if config.use_feature_selection {
            flags.push("feature_selection".to_string());
        }
        if config.use_embedding_table {
            flags.push("embedding_table".to_string());
        }
        if config.use_cosine {
            flags.push("cosine".to_string());
        }
    }
    flags
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorResult {
    pub name: String,
    pub loss_mode: Option<LossMode>,
    pub provenance: Vec<String>,
    pub par10: f64,
    pub gap_closed: Option<f64>,
    /// Chosen algorithm id per test instance, in `test_instances` order.
    pub choices: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub scenario_id: String,
    pub cutoff: f64,
    pub split_seed: u64,
    pub test_instances: Vec<String>,
    pub vbs_par10: f64,
    pub sbs: SingleBest,
    pub selectors: Vec<SelectorResult>,
    /// Name of the model selector with the lowest PAR10.
    pub best_selector: Option<String>,
}

impl EvaluationReport {
    pub fn new(scenario: &Scenario, split: &SplitIndex) -> Result<Self> {
        if split.test.is_empty() {
            return Err(EvaluationError::EmptySubset);
        }
        Ok(Self {
            scenario_id: scenario.meta.scenario_id.clone(),
            cutoff: scenario.cutoff(),
            split_seed: split.seed,
            test_instances: split
                .test
                .iter()
                .map(|&p| scenario.instances[p].instance_id.clone())
                .collect(),
            vbs_par10: vbs(scenario, &split.test)?,
            sbs: sbs(scenario, &split.train, &split.test)?,
            selectors: Vec::new(),
            best_selector: None,
        })
    }

    /// Adds a selector given its per-test-instance choices.
    pub fn add_choices(
        &mut self,
        scenario: &Scenario,
        split: &SplitIndex,
        name: &str,
        config: Option<&ModelConfig>,
        choices: &[usize],
    ) -> Result<&SelectorResult> {
        let par10 = score_choices(scenario, &split.test, choices)?;
        self.selectors.push(SelectorResult {
            name: name.to_string(),
            loss_mode: config.map(|c| c.loss_mode),
            provenance: config.map(provenance).unwrap_or_default(),
            par10,
            gap_closed: gap_closed(self.sbs.par10, self.vbs_par10, par10),
            choices: choices.iter().map(|&a| scenario.algorithms[a].clone()).collect(),
        });
        self.best_selector = self
            .selectors
            .iter()
            .filter(|s| s.loss_mode.is_some())
            .min_by(|a, b| a.par10.total_cmp(&b.par10))
            .map(|s| s.name.clone());
        Ok(self.selectors.last().expect("just pushed"))
    }

    pub fn add_model(&mut self, data: &Dataset<'_>, name: &str, params: &ModelParams) -> Result<&SelectorResult> {
        let choices = predict_choices(data, params, &data.split.test)?;
        self.add_choices(data.scenario, &data.split, name, Some(&params.config), &choices)
    }

    pub fn selector(&self, name: &str) -> Option<&SelectorResult> {
        self.selectors.iter().find(|s| s.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// One row in the column layout `Scenario | VBS | SBS | selectors...`;
    /// the best model selector is starred.
    pub fn to_table(&self) -> String {
        let mut header = vec!["Scenario".to_string(), "VBS".to_string(), "SBS".to_string()];
        let mut row = vec![
            self.scenario_id.clone(),
            format!("{:.2}", self.vbs_par10),
            format!("{:.2}", self.sbs.par10),
        ];
        for s in &self.selectors {
            let star = if self.best_selector.as_deref() == Some(s.name.as_str()) {
                "*"
            } else {
                ""
            };
            header.push(format!("{}{star}", s.name));
            row.push(format!("{:.2}", s.par10));
        }
        aligned(&[header, row])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("selector,par10,gap_closed\n");
        writeln!(out, "VBS,{},1", self.vbs_par10).unwrap();
        writeln!(out, "SBS,{},0", self.sbs.par10).unwrap();
        for s in &self.selectors {
            let gap = s.gap_closed.map(|g| g.to_string()).unwrap_or_default();
            writeln!(out, "{},{},{}", s.name, s.par10, gap).unwrap();
        }
        out
    }
}

/// Right-aligns every column except the first.
fn aligned(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in rows {
        let cells: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(c, s)| {
                if c == 0 {
                    format!("{:<w$}", s, w = widths[c])
                } else {
                    format!("{:>w$}", s, w = widths[c])
                }
            })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}

pub const VARIANTS: [&str; 4] = ["full", "AF", "FS", "CS"];

pub fn variant_config(base: &ModelConfig, variant: &str) -> Option<ModelConfig> {
    Some(match variant {
        "full" => base.clone(),
        "AF" => make_ablation(base, Ablation::AlgorithmFeatures),
        "FS" => make_ablation(base, Ablation::FeatureSelection),
        "CS" => make_ablation(base, Ablation::CosineSimilarity),
        _ => return None,
    })
}

/// Reports of the full model and its three ablations on one shared split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub variants: BTreeMap<String, EvaluationReport>,
}

impl AblationReport {
    /// Variant rows with PAR10 and gap closed, references first.
    pub fn to_table(&self) -> String {
        let mut rows = vec![vec![
            "Variant".to_string(),
            "PAR10".to_string(),
            "Gap closed".to_string(),
        ]];
        if let Some(r) = self.variants.values().next() {
            rows.push(vec!["VBS".into(), format!("{:.2}", r.vbs_par10), "1.000".into()]);
            rows.push(vec!["SBS".into(), format!("{:.2}", r.sbs.par10), "0.000".into()]);
        }
        for v in VARIANTS {
            let Some(sel) = self.variants.get(v).and_then(|r| r.selectors.first()) else {
                continue;
            };
            rows.push(vec![
                v.to_string(),
                format!("{:.2}", sel.par10),
                sel.gap_closed.map_or("null".into(), |g| format!("{g:.3}")),
            ]);
        }
        aligned(&rows)
    }
}

/// Trains and evaluates the full model and each ablation with identical
/// seeds and split.
pub fn run_ablations(data: &Dataset<'_>, base: &ModelConfig, train: &TrainConfig) -> Result<AblationReport> {
    let mut variants = BTreeMap::new();
    for v in VARIANTS {
        let config = variant_config(base, v).expect("known variant");
        let trained = train_model(data, &config, train)?;
        let mut report = EvaluationReport::new(data.scenario, &data.split)?;
        report.add_model(data, v, &trained.params)?;
        variants.insert(v.to_string(), report);
    }
    Ok(AblationReport { variants })
}
