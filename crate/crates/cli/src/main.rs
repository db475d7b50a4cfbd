mod config;
mod error;
mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use asllm_core::aslib_io::{load_scenario, split_instances, write_scenario, Scenario};
use asllm_core::bound::bound_from_params;
use asllm_core::checkpoint::Checkpoint;
use asllm_core::embedding_store::{load_catalog, synth_catalog, EmbeddingCatalog};
use asllm_core::evaluation::{run_ablations, EvaluationReport};
use asllm_core::model::LossMode;
use asllm_core::synthetic::{CentroidScenario, SignalScenario};
use asllm_core::training::{train_model, write_log, Dataset};

use config::RunConfig;
use error::{CliError, Result};
use manifest::{hash_path, prepare_out, write_file, RunManifest};

#[derive(Parser)]
#[command(
    name = "asllm",
    version,
    about = "Algorithm selection from problem features and algorithm code embeddings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load an ASlib scenario and print its summary.
    Ingest {
        #[arg(long)]
        scenario: PathBuf,
        /// Also write summary.json and manifest.json here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model and write its checkpoint and epoch log.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Write wall_time_s as 0 so the log is byte-reproducible.
        #[arg(long)]
        no_wall_time: bool,
    },
    /// Score one or more checkpoints on their held-out split.
    Evaluate {
        /// Repeat to compare several models; each is named by its file stem.
        #[arg(long, required = true)]
        checkpoint: Vec<PathBuf>,
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the full model and its three ablations on one split.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Compute the Rademacher complexity bound of a generalizing checkpoint.
    Bound {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a deterministic synthetic embedding catalog.
    EmbedSynth {
        /// Comma-separated algorithm ids.
        #[arg(long, value_delimiter = ',', conflicts_with = "scenario")]
        ids: Vec<String>,
        /// Take the ids from this scenario instead.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 4)]
        tokens: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a planted scenario and a matching catalog.jsonl.
    SynthScenario {
        #[arg(long, value_enum, default_value_t = SynthKind::Centroid)]
        kind: SynthKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        instances: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Training seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    split_seed: Option<u64>,
    #[arg(long)]
    train_fraction: Option<f64>,
    #[arg(long, value_enum)]
    loss_mode: Option<LossArg>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs_stage1: Option<usize>,
    #[arg(long)]
    epochs_stage2: Option<usize>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long, default_value = "runs/latest")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Regression,
    Classification,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Format {
    Json,
    Table,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    Centroid,
    Signal,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(p) = &self.scenario {
            c.scenario = Some(p.clone());
        }
        if let Some(p) = &self.catalog {
            c.catalog = Some(p.clone());
        }
        if let Some(s) = self.seed {
            c.train.seed = s;
        }
        if let Some(s) = self.split_seed {
            c.split.seed = s;
        }
        if let Some(f) = self.train_fraction {
            c.split.train_fraction = f;
        }
        if let Some(m) = self.loss_mode {
            c.model.loss_mode = match m {
                LossArg::Regression => LossMode::Regression,
                LossArg::Classification => LossMode::Classification,
            };
        }
        if let Some(lr) = self.lr {
            c.train.learning_rate = lr;
        }
        if let Some(e) = self.epochs_stage1 {
            c.train.epochs_stage1 = e;
        }
        if let Some(e) = self.epochs_stage2 {
            c.train.epochs_stage2 = e;
        }
        if let Some(k) = self.top_k {
            c.model.top_k = k;
        }
        c.validate()?;
        Ok(c)
    }

    fn manifest(&self, command: &str, c: &RunConfig, outputs: &[&str]) -> Result<RunManifest> {
        Ok(RunManifest {
            command: command.to_string(),
            config_path: self.config.as_ref().map(|p| p.display().to_string()),
            config: serde_json::to_value(c).expect("config serialises"),
            seed: Some(c.train.seed),
            inputs: vec![hash_path(c.scenario()?)?, hash_path(c.catalog()?)?],
            out_dir: self.out.display().to_string(),
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
        })
    }
}

fn load_inputs(scenario: &Path, catalog: &Path) -> Result<(Scenario, EmbeddingCatalog)> {
    Ok((load_scenario(scenario)?, load_catalog(catalog)?))
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report serialises")
}

fn ingest(scenario: &Path, out: Option<&Path>) -> Result<()> {
    let s = load_scenario(scenario)?;
    println!("{}", s.summary());
    if let Some(out) = out {
        prepare_out(out)?;
        #[derive(Serialize)]
        struct Summary<'a> {
            scenario_id: &'a str,
            instances: usize,
            algorithms: &'a [String],
            features: &'a [String],
            cutoff: f64,
        }
        let summary = Summary {
            scenario_id: &s.meta.scenario_id,
            instances: s.num_instances(),
            algorithms: &s.algorithms,
            features: &s.meta.feature_names,
            cutoff: s.cutoff(),
        };
        write_file(out, "summary.json", &to_json(&summary))?;
        RunManifest {
            command: "ingest".into(),
            config_path: None,
            config: serde_json::Value::Null,
            seed: None,
            inputs: vec![hash_path(scenario)?],
            out_dir: out.display().to_string(),
            outputs: vec!["summary.json".into()],
        }
        .write(out)?;
    }
    Ok(())
}

fn train(run: &RunArgs, no_wall_time: bool) -> Result<()> {
    let c = run.resolve()?;
    let (scenario, catalog) = load_inputs(c.scenario()?, c.catalog()?)?;
    let split = split_instances(scenario.num_instances(), c.split.train_fraction, c.split.seed)?;
    let data = Dataset::new(&scenario, &catalog, split, None)?;
    let mut trained = train_model(&data, &c.model, &c.train)?;
    if no_wall_time {
        trained.log.iter_mut().for_each(|r| r.wall_time_s = 0.0);
    }
    prepare_out(&run.out)?;
    let ckpt = Checkpoint::new(
        &scenario.meta.scenario_id,
        data.split.clone(),
        c.split.train_fraction,
        data.stats.clone(),
        trained.stage1_probabilities.clone(),
        trained.params,
    );
    write_file(&run.out, "checkpoint.json", &ckpt.to_json())?;
    let mut log = Vec::new();
    write_log(&trained.log, &mut log).expect("in-memory write");
    write_file(
        &run.out,
        "train_log.jsonl",
        &String::from_utf8(log).expect("json is utf-8"),
    )?;
    run.manifest("train", &c, &["checkpoint.json", "train_log.jsonl"])?
        .write(&run.out)?;
    if let Some(last) = trained.log.last() {
        println!(
            "{} epochs, final {} loss {:.6}",
            trained.log.len(),
            last.stage,
            last.mean_loss
        );
    }
    println!("wrote {}", run.out.join("checkpoint.json").display());
    Ok(())
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn evaluate(
    checkpoints: &[PathBuf],
    scenario: &Path,
    catalog: &Path,
    format: Format,
    out: Option<&Path>,
) -> Result<()> {
    let (s, cat) = load_inputs(scenario, catalog)?;
    let ckpts = checkpoints
        .iter()
        .map(|p| Checkpoint::load(p).map_err(CliError::from))
        .collect::<Result<Vec<_>>>()?;
    let split = ckpts[0].split.clone();
    for (path, c) in checkpoints.iter().zip(&ckpts) {
        if c.scenario_id != s.meta.scenario_id {
            return Err(CliError::config(format!(
                "{} was trained on scenario {}, not {}",
                path.display(),
                c.scenario_id,
                s.meta.scenario_id
            )));
        }
        if c.split != split {
            return Err(CliError::config(format!("{} uses a different split", path.display())));
        }
    }
    let mut names: Vec<String> = checkpoints.iter().map(|p| stem(p)).collect();
    // sibling run directories all hold checkpoint.json; use the directory then
    if names.iter().collect::<std::collections::BTreeSet<_>>().len() < names.len() {
        names = checkpoints
            .iter()
            .map(|p| p.parent().map_or_else(|| stem(p), stem))
            .collect();
    }
    let mut report = EvaluationReport::new(&s, &split)?;
    for (name, c) in names.iter().zip(&ckpts) {
        let data = Dataset::with_stats(&s, &cat, split.clone(), c.feature_stats.clone(), None)
            .map_err(|e| CliError::Evaluation(e.into()))?;
        report.add_model(&data, name, &c.params)?;
    }
    let text = match format {
        Format::Json => report.to_json(),
        Format::Table => report.to_table(),
        Format::Csv => report.to_csv(),
    };
    print!("{text}");
    if !text.ends_with('\n') {
        println!();
    }
    if let Some(out) = out {
        prepare_out(out)?;
        write_file(out, "report.json", &report.to_json())?;
        write_file(out, "report.txt", &report.to_table())?;
        write_file(out, "report.csv", &report.to_csv())?;
        let mut inputs = vec![hash_path(scenario)?, hash_path(catalog)?];
        for p in checkpoints {
            inputs.push(hash_path(p)?);
        }
        RunManifest {
            command: "evaluate".into(),
            config_path: None,
            config: serde_json::json!({ "selectors": names }),
            seed: None,
            inputs,
            out_dir: out.display().to_string(),
            outputs: vec!["report.json".into(), "report.txt".into(), "report.csv".into()],
        }
        .write(out)?;
    }
    Ok(())
}

fn ablate(run: &RunArgs) -> Result<()> {
    let c = run.resolve()?;
    let (scenario, catalog) = load_inputs(c.scenario()?, c.catalog()?)?;
    let split = split_instances(scenario.num_instances(), c.split.train_fraction, c.split.seed)?;
    let data = Dataset::new(&scenario, &catalog, split, None)?;
    let report = run_ablations(&data, &c.model, &c.train)?;
    let table = report.to_table();
    print!("{table}");
    prepare_out(&run.out)?;
    write_file(&run.out, "ablation.json", &to_json(&report))?;
    write_file(&run.out, "ablation.txt", &table)?;
    run.manifest("ablate", &c, &["ablation.json", "ablation.txt"])?
        .write(&run.out)?;
    Ok(())
}

fn bound(checkpoint: &Path, scenario: &Path, catalog: &Path, out: Option<&Path>) -> Result<()> {
    let (s, cat) = load_inputs(scenario, catalog)?;
    let c = Checkpoint::load(checkpoint)?;
    if c.scenario_id != s.meta.scenario_id {
        return Err(CliError::config(format!(
            "checkpoint was trained on scenario {}, not {}",
            c.scenario_id, s.meta.scenario_id
        )));
    }
    let problems: Vec<Vec<f64>> = c
        .split
        .train
        .iter()
        .map(|&p| c.feature_stats.apply(&s.instances[p].features))
        .collect();
    let report = bound_from_params(&c.params, &cat, &problems)?;
    let text = to_json(&report);
    println!("{text}");
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(out) = out {
        prepare_out(out)?;
        write_file(out, "bound.json", &text)?;
        RunManifest {
            command: "bound".into(),
            config_path: None,
            config: serde_json::Value::Null,
            seed: None,
            inputs: vec![hash_path(scenario)?, hash_path(catalog)?, hash_path(checkpoint)?],
            out_dir: out.display().to_string(),
            outputs: vec!["bound.json".into()],
        }
        .write(out)?;
    }
    Ok(())
}

fn embed_synth(
    ids: Vec<String>,
    scenario: Option<&Path>,
    dim: usize,
    tokens: usize,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let ids = match scenario {
        Some(dir) => load_scenario(dir)?.algorithms,
        None => ids,
    };
    if ids.is_empty() {
        return Err(CliError::config("no algorithm ids (use --ids or --scenario)"));
    }
    if dim == 0 || tokens == 0 {
        return Err(CliError::config("--dim and --tokens must be positive"));
    }
    let cat = synth_catalog(&ids, dim, tokens, seed);
    fs::write(out, cat.to_jsonl()).map_err(|e| CliError::config(format!("{}: {e}", out.display())))?;
    println!("wrote {} sequences to {}", cat.len(), out.display());
    Ok(())
}

fn synth_scenario(kind: SynthKind, seed: u64, instances: Option<usize>, out: &Path) -> Result<()> {
    let planted = match kind {
        SynthKind::Centroid => {
            let d = CentroidScenario::default();
            CentroidScenario {
                seed,
                n_instances: instances.unwrap_or(d.n_instances),
                ..d
            }
            .generate()
        }
        SynthKind::Signal => {
            let d = SignalScenario::default();
            SignalScenario {
                seed,
                n_instances: instances.unwrap_or(d.n_instances),
                ..d
            }
            .generate()
        }
    };
    prepare_out(out)?;
    write_scenario(&planted.scenario, out).map_err(|e| CliError::config(e.to_string()))?;
    write_file(out, "catalog.jsonl", &planted.catalog.to_jsonl())?;
    println!("{}", planted.scenario.summary());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { scenario, out } => ingest(&scenario, out.as_deref()),
        Command::Train { run, no_wall_time } => train(&run, no_wall_time),
        Command::Evaluate {
            checkpoint,
            scenario,
            catalog,
            format,
            out,
        } => evaluate(&checkpoint, &scenario, &catalog, format, out.as_deref()),
        Command::Ablate { run } => ablate(&run),
        Command::Bound {
            checkpoint,
            scenario,
            catalog,
            out,
        } => bound(&checkpoint, &scenario, &catalog, out.as_deref()),
        Command::EmbedSynth {
            ids,
            scenario,
            dim,
            tokens,
            seed,
            out,
        } => embed_synth(ids, scenario.as_deref(), dim, tokens, seed, &out),
        Command::SynthScenario {
            kind,
            seed,
            instances,
            out,
        } => synth_scenario(kind, seed, instances, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
