//! ASlib scenario directories: parsing, writing, splitting and feature
//! normalisation.
//!
//! A scenario directory holds `description.txt`, `feature_values.arff` and
//! `algorithm_runs.arff`. See `docs/formats.md` for the attribute layout.

pub mod arff;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use arff::{parse_arff, write_arff, ArffData, ArffValue, Attribute, AttributeKind};

pub const DESCRIPTION_FILE: &str = "description.txt";
pub const FEATURES_FILE: &str = "feature_values.arff";
pub const RUNS_FILE: &str = "algorithm_runs.arff";

#[derive(Debug, Error)]
pub enum AslibError {
    #[error("missing key {0}")]
    MissingKey(String),
    #[error("malformed value {value:?} for {key}{}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    MalformedValue {
        key: String,
        value: String,
        line: Option<usize>,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: data row before @data")]
    DataBeforeHeader { line: usize },
    #[error("line {line}: expected {expected} fields, found {found}")]
    ArityMismatch { line: usize, expected: usize, found: usize },
    #[error("missing file {0}")]
    MissingFile(String),
    #[error("{file}: {source}")]
    InFile {
        file: String,
        #[source]
        source: Box<AslibError>,
    },
    #[error("inconsistent ids: {0}")]
    InconsistentIds(String),
    #[error("no run for instance {instance} and algorithm {algorithm}")]
    MissingRun { instance: String, algorithm: String },
    #[error("degenerate split: {0}")]
    DegenerateSplit(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

type Result<T> = std::result::Result<T, AslibError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMeta {
    pub scenario_id: String,
    /// Cutoff `C` in seconds.
    pub cutoff_time: f64,
    pub maximize: bool,
    pub performance_measure: String,
    pub feature_names: Vec<String>,
    /// Algorithms declared in the description, possibly empty.
    pub algorithms: Vec<String>,
}

impl ScenarioMeta {
    pub fn num_features(&self) -> usize {
        self.feature_names.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    pub instance_id: String,
    /// `None` marks a missing value.
    pub features: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Timeout,
    Memout,
    Crash,
    Other,
}

impl RunStatus {
    pub fn parse(s: &str) -> Self {
        match s.to_ascii_lowercase().as_str() {
            "ok" => RunStatus::Ok,
            "timeout" => RunStatus::Timeout,
            "memout" => RunStatus::Memout,
            "crash" => RunStatus::Crash,
            _ => RunStatus::Other,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Ok => "ok",
            RunStatus::Timeout => "timeout",
            RunStatus::Memout => "memout",
            RunStatus::Crash => "crash",
            RunStatus::Other => "other",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunRecord {
    pub runtime: f64,
    pub status: RunStatus,
}

/// Immutable scenario with a dense instance-by-algorithm run matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub meta: ScenarioMeta,
    pub algorithms: Vec<String>,
    pub instances: Vec<ProblemInstance>,
    runs: Vec<RunRecord>,
}

impl Scenario {
    /// `runs` is row-major, one row per instance.
    pub fn new(
        meta: ScenarioMeta,
        algorithms: Vec<String>,
        instances: Vec<ProblemInstance>,
        runs: Vec<RunRecord>,
    ) -> Result<Self> {
        if !(meta.cutoff_time > 0.0) {
            return Err(AslibError::MalformedValue {
                key: "algorithm_cutoff_time".into(),
                value: meta.cutoff_time.to_string(),
                line: None,
            });
        }
        if meta.feature_names.is_empty() {
            return Err(AslibError::MissingKey("features_deterministic".into()));
        }
        check_unique(algorithms.iter().map(String::as_str), "algorithm")?;
        check_unique(instances.iter().map(|i| i.instance_id.as_str()), "instance")?;
        if runs.len() != algorithms.len() * instances.len() {
            return Err(AslibError::InconsistentIds(format!(
                "{} run cells for {} instances x {} algorithms",
                runs.len(),
                instances.len(),
                algorithms.len()
            )));
        }
        if let Some(p) = instances.iter().find(|p| p.features.len() != meta.num_features()) {
            return Err(AslibError::InconsistentIds(format!(
                "instance {} has {} features, expected {}",
                p.instance_id,
                p.features.len(),
                meta.num_features()
            )));
        }
        if let Some(r) = runs.iter().find(|r| !(r.runtime >= 0.0)) {
            return Err(AslibError::MalformedValue {
                key: "runtime".into(),
                value: r.runtime.to_string(),
                line: None,
            });
        }
        Ok(Self {
            meta,
            algorithms,
            instances,
            runs,
        })
    }

    pub fn num_instances(&self) -> usize {
        self.instances.len()
    }

    pub fn num_algorithms(&self) -> usize {
        self.algorithms.len()
    }

    pub fn cutoff(&self) -> f64 {
        self.meta.cutoff_time
    }

    pub fn run(&self, instance: usize, algorithm: usize) -> &RunRecord {
        &self.runs[instance * self.algorithms.len() + algorithm]
    }

    pub fn runs(&self) -> &[RunRecord] {
        &self.runs
    }

    pub fn algorithm_index(&self, id: &str) -> Option<usize> {
        self.algorithms.iter().position(|a| a == id)
    }

    pub fn summary(&self) -> String {
        format!(
            "{} instances, {} algorithms, {} features, cutoff {}",
            self.num_instances(),
            self.num_algorithms(),
            self.meta.num_features(),
            self.cutoff()
        )
    }
}

fn check_unique<'a>(ids: impl Iterator<Item = &'a str>, what: &str) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(AslibError::InconsistentIds(format!("duplicate {what} id {id}")));
        }
    }
    Ok(())
}

fn strip_yaml_scalar(s: &str) -> String {
    let s = s.split(" #").next().unwrap_or("").trim();
    let s = if s.len() >= 2 && ((s.starts_with('\'') && s.ends_with('\'')) || (s.starts_with('"') && s.ends_with('"')))
    {
        &s[1..s.len() - 1]
    } else {
        s
    };
    s.to_string()
}

#[derive(Default)]
struct DescEntry {
    value: String,
    items: Vec<String>,
    children: Vec<String>,
    line: usize,
}

/// Reads the `key: value` / `- item` subset of YAML that ASlib descriptions use.
fn parse_description_entries(text: &str) -> HashMap<String, DescEntry> {
    let mut entries: HashMap<String, DescEntry> = HashMap::new();
    let mut current: Option<String> = None;
    let mut child_indent: Option<usize> = None;
    for (i, raw) in text.lines().enumerate() {
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let indent = raw.len() - raw.trim_start().len();
        if indent == 0 && !trimmed.starts_with('-') {
            let (key, value) = match trimmed.split_once(':') {
                Some((k, v)) => (k.trim().to_string(), v.trim()),
                None => (trimmed.to_string(), ""),
            };
            let mut entry = DescEntry {
                line: i + 1,
                ..Default::default()
            };
            if value.starts_with('[') && value.ends_with(']') {
                entry.items = value[1..value.len() - 1]
                    .split(',')
                    .map(strip_yaml_scalar)
                    .filter(|s| !s.is_empty())
                    .collect();
            } else {
                entry.value = strip_yaml_scalar(value);
            }
            entries.insert(key.clone(), entry);
            current = Some(key);
            child_indent = None;
            continue;
        }
        let Some(key) = &current else { continue };
        let entry = entries.get_mut(key).expect("current key exists");
        let ci = *child_indent.get_or_insert(indent);
        if let Some(item) = trimmed.strip_prefix('-') {
            if indent == ci || indent == 0 {
                let item = strip_yaml_scalar(item);
                if !item.is_empty() {
                    entry.items.push(item);
                }
            }
        } else if indent == ci {
            if let Some((k, _)) = trimmed.split_once(':') {
                entry.children.push(strip_yaml_scalar(k));
            }
        }
    }
    entries
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "true" | "yes" => Some(true),
        "false" | "no" => Some(false),
        _ => None,
    }
}

pub fn parse_description(text: &str) -> Result<ScenarioMeta> {
    let entries = parse_description_entries(text);
    let first = |key: &str| -> Option<(String, usize)> {
        entries.get(key).and_then(|e| {
            if !e.value.is_empty() {
                Some((e.value.clone(), e.line))
            } else {
                e.items.first().map(|v| (v.clone(), e.line))
            }
        })
    };
    let (cutoff_raw, cutoff_line) =
        first("algorithm_cutoff_time").ok_or_else(|| AslibError::MissingKey("algorithm_cutoff_time".into()))?;
    let cutoff_time: f64 = cutoff_raw
        .parse()
        .ok()
        .filter(|c: &f64| c.is_finite() && *c > 0.0)
        .ok_or_else(|| AslibError::MalformedValue {
            key: "algorithm_cutoff_time".into(),
            value: cutoff_raw.clone(),
            line: Some(cutoff_line),
        })?;
    let maximize = match first("maximize") {
        Some((v, line)) => parse_bool(&v).ok_or(AslibError::MalformedValue {
            key: "maximize".into(),
            value: v,
            line: Some(line),
        })?,
        None => false,
    };
    let list = |key: &str| entries.get(key).map(|e| e.items.clone()).unwrap_or_default();
    let mut feature_names = list("features_deterministic");
    feature_names.extend(list("features_stochastic"));
    if feature_names.is_empty() {
        return Err(AslibError::MissingKey("features_deterministic".into()));
    }
    let mut algorithms = list("algorithms_deterministic");
    algorithms.extend(list("algorithms_stochastic"));
    if algorithms.is_empty() {
        if let Some(e) = entries.get("metainfo_algorithms") {
            algorithms = e.children.clone();
        }
    }
    Ok(ScenarioMeta {
        scenario_id: first("scenario_id").map(|v| v.0).unwrap_or_default(),
        cutoff_time,
        maximize,
        performance_measure: first("performance_measures")
            .map(|v| v.0)
            .unwrap_or_else(|| "runtime".into()),
        feature_names,
        algorithms,
    })
}

fn read_file(dir: &Path, name: &str) -> Result<String> {
    let path = dir.join(name);
    if !path.is_file() {
        return Err(AslibError::MissingFile(path.display().to_string()));
    }
    Ok(fs::read_to_string(path)?)
}

fn in_file<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| AslibError::InFile {
        file: name.to_string(),
        source: Box::new(e),
    })
}

fn text_column(data: &ArffData, name: &str, file: &str) -> Result<usize> {
    data.column(name).ok_or_else(|| AslibError::InFile {
        file: file.into(),
        source: Box::new(AslibError::MissingKey(name.into())),
    })
}

fn cell_text(v: &ArffValue) -> String {
    match v {
        ArffValue::Text(s) => s.clone(),
        ArffValue::Number(x) => format!("{x}"),
        ArffValue::Missing => "?".into(),
    }
}

pub fn load_scenario(dir: &Path) -> Result<Scenario> {
    let desc = read_file(dir, DESCRIPTION_FILE)?;
    let feats = read_file(dir, FEATURES_FILE)?;
    let runs = read_file(dir, RUNS_FILE)?;
    let meta = in_file(DESCRIPTION_FILE, parse_description(&desc))?;
    let feats = in_file(FEATURES_FILE, parse_arff(&feats))?;
    let runs = in_file(RUNS_FILE, parse_arff(&runs))?;
    assemble(meta, &feats, &runs)
}

fn assemble(meta: ScenarioMeta, feats: &ArffData, runs: &ArffData) -> Result<Scenario> {
    let id_col = text_column(feats, "instance_id", FEATURES_FILE)?;
    let feature_cols = meta
        .feature_names
        .iter()
        .map(|f| text_column(feats, f, FEATURES_FILE))
        .collect::<Result<Vec<_>>>()?;

    let mut instances = Vec::new();
    let mut instance_index = HashMap::new();
    for row in &feats.rows {
        let id = cell_text(&row[id_col]);
        if instance_index.contains_key(&id) {
            continue;
        }
        instance_index.insert(id.clone(), instances.len());
        instances.push(ProblemInstance {
            instance_id: id,
            features: feature_cols.iter().map(|&c| row[c].as_number()).collect(),
        });
    }

    let r_inst = text_column(runs, "instance_id", RUNS_FILE)?;
    let r_algo = text_column(runs, "algorithm", RUNS_FILE)?;
    let r_time = text_column(runs, &meta.performance_measure, RUNS_FILE)?;
    let r_status = text_column(runs, "runstatus", RUNS_FILE)?;

    let declared = !meta.algorithms.is_empty();
    let mut algorithms = meta.algorithms.clone();
    let mut algo_index: HashMap<String, usize> = algorithms.iter().enumerate().map(|(i, a)| (a.clone(), i)).collect();
    let mut cells: HashMap<(usize, usize), RunRecord> = HashMap::new();
    for row in &runs.rows {
        let inst = cell_text(&row[r_inst]);
        let algo = cell_text(&row[r_algo]);
        let p = *instance_index
            .get(&inst)
            .ok_or_else(|| AslibError::InconsistentIds(format!("runs reference unknown instance {inst}")))?;
        let a = match algo_index.get(&algo) {
            Some(&a) => a,
            None if !declared => {
                algo_index.insert(algo.clone(), algorithms.len());
                algorithms.push(algo.clone());
                algorithms.len() - 1
            }
            None => {
                return Err(AslibError::InconsistentIds(format!(
                    "runs reference unknown algorithm {algo}"
                )))
            }
        };
        let status = RunStatus::parse(&cell_text(&row[r_status]));
        let runtime = match (row[r_time].as_number(), status) {
            (Some(t), _) => t,
            (None, RunStatus::Ok) => {
                return Err(AslibError::MalformedValue {
                    key: meta.performance_measure.clone(),
                    value: "?".into(),
                    line: None,
                })
            }
            (None, _) => meta.cutoff_time,
        };
        cells.entry((p, a)).or_insert(RunRecord { runtime, status });
    }

    let mut dense = Vec::with_capacity(instances.len() * algorithms.len());
    for (p, inst) in instances.iter().enumerate() {
        for (a, algo) in algorithms.iter().enumerate() {
            let rec = cells.get(&(p, a)).ok_or_else(|| AslibError::MissingRun {
                instance: inst.instance_id.clone(),
                algorithm: algo.clone(),
            })?;
            dense.push(*rec);
        }
    }
    let meta = ScenarioMeta {
        algorithms: algorithms.clone(),
        ..meta
    };
    Scenario::new(meta, algorithms, instances, dense)
}

/// Writes the three scenario files so that [`load_scenario`] reproduces `s`.
pub fn write_scenario(s: &Scenario, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let yaml_item = |v: &str| {
        if v.is_empty() || v.contains([':', '#', '\'', '"', ',', '[', ']']) || v.trim() != v {
            format!("'{}'", v.replace('\'', "''"))
        } else {
            v.to_string()
        }
    };
    let mut desc = String::new();
    writeln!(desc, "scenario_id: {}", yaml_item(&s.meta.scenario_id)).unwrap();
    writeln!(
        desc,
        "performance_measures:\n  - {}",
        yaml_item(&s.meta.performance_measure)
    )
    .unwrap();
    writeln!(desc, "maximize:\n  - {}", s.meta.maximize).unwrap();
    writeln!(desc, "performance_type:\n  - runtime").unwrap();
    writeln!(desc, "algorithm_cutoff_time: {}", s.meta.cutoff_time).unwrap();
    desc.push_str("features_deterministic:\n");
    for f in &s.meta.feature_names {
        writeln!(desc, "  - {}", yaml_item(f)).unwrap();
    }
    desc.push_str("algorithms_deterministic:\n");
    for a in &s.algorithms {
        writeln!(desc, "  - {}", yaml_item(a)).unwrap();
    }
    fs::write(dir.join(DESCRIPTION_FILE), desc)?;

    let mut attributes = vec![
        Attribute {
            name: "instance_id".into(),
            kind: AttributeKind::Text,
        },
        Attribute {
            name: "repetition".into(),
            kind: AttributeKind::Numeric,
        },
    ];
    attributes.extend(s.meta.feature_names.iter().map(|f| Attribute {
        name: f.clone(),
        kind: AttributeKind::Numeric,
    }));
    let rows = s
        .instances
        .iter()
        .map(|p| {
            let mut row = vec![ArffValue::Text(p.instance_id.clone()), ArffValue::Number(1.0)];
            row.extend(
                p.features
                    .iter()
                    .map(|v| v.map_or(ArffValue::Missing, ArffValue::Number)),
            );
            row
        })
        .collect();
    let feats = ArffData {
        relation: format!("FEATURE_VALUES_{}", s.meta.scenario_id),
        attributes,
        rows,
    };
    fs::write(dir.join(FEATURES_FILE), write_arff(&feats))?;

    let attr = |name: &str, kind| Attribute {
        name: name.into(),
        kind,
    };
    let statuses = ["ok", "timeout", "memout", "crash", "other"].map(String::from).to_vec();
    let mut rows = Vec::new();
    for (p, inst) in s.instances.iter().enumerate() {
        for (a, algo) in s.algorithms.iter().enumerate() {
            let r = s.run(p, a);
            rows.push(vec![
                ArffValue::Text(inst.instance_id.clone()),
                ArffValue::Number(1.0),
                ArffValue::Text(algo.clone()),
                ArffValue::Number(r.runtime),
                ArffValue::Text(r.status.as_str().into()),
            ]);
        }
    }
    let runs = ArffData {
        relation: format!("ALGORITHM_RUNS_{}", s.meta.scenario_id),
        attributes: vec![
            attr("instance_id", AttributeKind::Text),
            attr("repetition", AttributeKind::Numeric),
            attr("algorithm", AttributeKind::Text),
            attr(&s.meta.performance_measure, AttributeKind::Numeric),
            attr("runstatus", AttributeKind::Nominal(statuses)),
        ],
        rows,
    };
    fs::write(dir.join(RUNS_FILE), write_arff(&runs))?;
    Ok(())
}

/// Disjoint train/test partition of instance indices, both sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndex {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Uniform seeded split with `round(train_fraction * n)` training instances.
pub fn split_instances(num_instances: usize, train_fraction: f64, seed: u64) -> Result<SplitIndex> {
    if num_instances < 2 {
        return Err(AslibError::DegenerateSplit(format!("{num_instances} instances")));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(AslibError::DegenerateSplit(format!("train fraction {train_fraction}")));
    }
    let n_train = (train_fraction * num_instances as f64).round() as usize;
    if n_train == 0 || n_train >= num_instances {
        return Err(AslibError::DegenerateSplit(format!(
            "{n_train} of {num_instances} instances in train"
        )));
    }
    let mut order: Vec<usize> = (0..num_instances).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train = order[..n_train].to_vec();
    let mut test = order[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndex { train, test, seed })
}

/// Per-feature mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    /// Fits on the given instances, skipping missing entries.
    pub fn fit(scenario: &Scenario, instances: &[usize]) -> Self {
        let d = scenario.meta.num_features();
        let mut mean = vec![0.0; d];
        let mut std = vec![0.0; d];
        for j in 0..d {
            let vals: Vec<f64> = instances
                .iter()
                .filter_map(|&p| scenario.instances[p].features[j])
                .collect();
            if vals.is_empty() {
                continue;
            }
            let n = vals.len() as f64;
            let m = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            mean[j] = m;
            std[j] = var.sqrt();
        }
        Self { mean, std }
    }

    /// `(x - mean) / std`; missing entries become 0 and so do zero-variance
    /// columns.
    pub fn apply(&self, features: &[Option<f64>]) -> Vec<f64> {
        features
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| match x {
                Some(v) if *s > 1e-12 => (v - m) / s,
                _ => 0.0,
            })
            .collect()
    }
}
