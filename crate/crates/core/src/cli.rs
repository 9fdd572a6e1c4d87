//! Command-line surface. Every command reads a JSON config (`--config`,
//! defaults when absent), applies `--override key=value` and `--seed`,
//! validates the result against its schema, writes `manifest.json` into
//! the run directory and only then does any work.
//!
//! Exit codes: 0 success, 1 invalid config or input, 2 runtime failure
//! (I/O, divergence, failed gradient check).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use schemars::JsonSchema;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::dataset::{dataset_files, load_dataset, write_dataset};
use crate::error::Error;
use crate::experiment::phantom_cases;
use crate::gradcheck::{check_gradients, loss_suite, GradCheckOptions, GradCheckReport, REL_ERR_FLOOR};
use crate::losses::{DistillConfig, Toggles};
use crate::model::{build_network, derive_student_plan, load_checkpoint, save_checkpoint, Network, NetworkPlan};
use crate::rng;
use crate::tensor::Tensor;
use crate::train::{
    distill_student, evaluate_threads, metrics_csv, run_ablation, train, train_teacher, AblationEntry, TrainConfig,
    TrainOutcome,
};
use crate::volume::{class_stats_many, ClassSpec, PhantomSpec, ShapeKind};

pub const THREADS_ENV: &str = "RECO_KD_THREADS";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Parser)]
#[command(name = "reco-kd", version, about = "Region- and context-aware feature distillation for 3D segmentation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// JSON config file; defaults apply to omitted keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the command's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run directory (default: runs/<command>-<unix time>-s<seed>).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Dotted-path override, e.g. `train.lr0=0.005`; values parse as JSON
    /// and fall back to strings.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a phantom dataset.
    Gen(RunArgs),
    /// Voxel-distribution statistics of a dataset.
    Stats(RunArgs),
    /// Plain supervised training of any plan.
    Train(RunArgs),
    /// Supervised training of a full-width teacher.
    TrainTeacher(RunArgs),
    /// Distil a width-scaled student from a teacher checkpoint.
    Distill(RunArgs),
    /// Dice and HD95 of a checkpoint on a dataset.
    Eval(RunArgs),
    /// Train one student per distillation config and compare.
    Ablate(RunArgs),
    /// Finite-difference gradient checks.
    Gradcheck(RunArgs),
    /// Re-execute a run from its manifest.
    Rerun {
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the JSON schema of a command's config.
    Schema { command: CommandName },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandName {
    Gen,
    Stats,
    Train,
    TrainTeacher,
    Distill,
    Eval,
    Ablate,
    Gradcheck,
}

impl CommandName {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Gen => "gen",
            Self::Stats => "stats",
            Self::Train => "train",
            Self::TrainTeacher => "train-teacher",
            Self::Distill => "distill",
            Self::Eval => "eval",
            Self::Ablate => "ablate",
            Self::Gradcheck => "gradcheck",
        }
    }

    /// Dotted path of the seed inside the config, if the command has one.
    fn seed_path(self) -> Option<&'static str> {
        match self {
            Self::Gen | Self::Gradcheck => Some("seed"),
            Self::Train | Self::TrainTeacher | Self::Distill | Self::Ablate => Some("train.seed"),
            Self::Stats | Self::Eval => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub seed: u64,
    pub cases: usize,
    pub phantom: PhantomSpec,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            cases: 10,
            phantom: PhantomSpec {
                shape: [32; 3],
                classes: vec![
                    ClassSpec {
                        target_fraction: 0.08,
                        shape_kind: ShapeKind::Ellipsoid,
                    },
                    ClassSpec {
                        target_fraction: 0.03,
                        shape_kind: ShapeKind::Shell,
                    },
                    ClassSpec {
                        target_fraction: 0.006,
                        shape_kind: ShapeKind::Sphere,
                    },
                ],
                noise_sigma: 0.3,
                modalities: 1,
                class_means: None,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct StatsConfig {
    /// Dataset directory or its `index.json`.
    pub dataset: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct TrainRunConfig {
    pub dataset: PathBuf,
    pub plan: NetworkPlan,
    #[serde(default)]
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct DistillRunConfig {
    pub dataset: PathBuf,
    /// Teacher checkpoint manifest.
    pub teacher: PathBuf,
    #[serde(default = "default_student_t")]
    pub student_width_factor: u32,
    /// Defaults to the teacher plan's floor.
    #[serde(default)]
    pub c_min: Option<usize>,
    #[serde(default)]
    pub distill: DistillConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_student_t() -> u32 {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct EvalRunConfig {
    pub dataset: PathBuf,
    pub checkpoint: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum AblationPreset {
    /// Mask-align, FG, BG, FG+BG, full region distillation, context only, everything.
    Components,
    /// Shallowest stage, deepest stage, all stages.
    Stages,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct AblateRunConfig {
    pub dataset: PathBuf,
    /// Scored on this dataset when given, else on `dataset`.
    #[serde(default)]
    pub eval_dataset: Option<PathBuf>,
    pub teacher: PathBuf,
    #[serde(default = "default_student_t")]
    pub student_width_factor: u32,
    #[serde(default)]
    pub c_min: Option<usize>,
    /// Explicit matrix; when empty the preset expands against `base`.
    #[serde(default)]
    pub matrix: Vec<AblationEntry>,
    #[serde(default = "default_preset")]
    pub preset: AblationPreset,
    /// Shared settings the preset rows start from.
    #[serde(default)]
    pub base: DistillConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_preset() -> AblationPreset {
    AblationPreset::Components
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkCheck {
    pub teacher_plan: NetworkPlan,
    pub student_width_factor: u32,
    pub input_shape: [usize; 3],
    pub distill: DistillConfig,
}

impl Default for NetworkCheck {
    fn default() -> Self {
        Self {
            teacher_plan: NetworkPlan::toy(1, 3),
            student_width_factor: 1,
            input_shape: [8; 3],
            // keeps the total O(1) so difference quotients stay above round-off
            distill: DistillConfig {
                temperature: 2.0,
                gamma: 1e-2,
                lambda: 1e-2,
                sard_weight: 1e-2,
                ..DistillConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckConfig {
    pub seed: u64,
    /// Randomized loss-level instances.
    pub instances: usize,
    pub coords: usize,
    pub step: f64,
    pub tolerance: f64,
    /// End-to-end check of the total loss through a student network.
    pub network: Option<NetworkCheck>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            instances: 1,
            coords: 200,
            step: 1e-5,
            tolerance: 1e-4,
            network: Some(NetworkCheck::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub command: CommandName,
    pub config_path: Option<PathBuf>,
    pub resolved_config: Value,
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    pub version: String,
    /// SHA-256 of every input file, keyed by path.
    pub input_hashes: BTreeMap<String, String>,
}

/// Error carrying its process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config { .. }
            | Error::InvalidPlan(_)
            | Error::EmptyStages(_)
            | Error::Divisibility { .. }
            | Error::InfeasibleFraction(_)
            | Error::NonPositiveTemperature(_) => 1,
            _ => 2,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses arguments and runs; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    let (name, args) = match cli.command {
        Command::Gen(a) => (CommandName::Gen, a),
        Command::Stats(a) => (CommandName::Stats, a),
        Command::Train(a) => (CommandName::Train, a),
        Command::TrainTeacher(a) => (CommandName::TrainTeacher, a),
        Command::Distill(a) => (CommandName::Distill, a),
        Command::Eval(a) => (CommandName::Eval, a),
        Command::Ablate(a) => (CommandName::Ablate, a),
        Command::Gradcheck(a) => (CommandName::Gradcheck, a),
        Command::Rerun { manifest, out } => return rerun(&manifest, out),
        Command::Schema { command } => {
            println!("{}", serde_json::to_string_pretty(&schema(command)).expect("schema serializes"));
            return Ok(());
        }
    };
    let raw = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::validation(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::validation(format!("{}: {e}", p.display())))?
        }
        None => Value::Object(Default::default()),
    };
    let resolved = resolve_config(name, raw, &args.overrides, args.seed)?;
    execute(name, args.config, resolved, args.out)
}

/// Applies overrides and the seed, then validates by a typed round trip;
/// the returned value includes every default.
pub fn resolve_config(name: CommandName, raw: Value, overrides: &[String], seed: Option<u64>) -> CliResult<Value> {
    let mut raw = merged(defaults(name), raw);
    for o in overrides {
        let (key, value) = o
            .split_once('=')
            .ok_or_else(|| CliError::validation(format!("override {o:?} is not KEY=VALUE")))?;
        let v = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
        set_path(&mut raw, key, v)?;
    }
    if let Some(s) = seed {
        match name.seed_path() {
            Some(p) => set_path(&mut raw, p, Value::from(s))?,
            None => return Err(CliError::validation(format!("{} takes no seed", name.as_str()))),
        }
    }
    match name {
        CommandName::Gen => typed::<GenConfig>(raw),
        CommandName::Stats => typed::<StatsConfig>(raw),
        CommandName::Train | CommandName::TrainTeacher => typed::<TrainRunConfig>(raw),
        CommandName::Distill => typed::<DistillRunConfig>(raw),
        CommandName::Eval => typed::<EvalRunConfig>(raw),
        CommandName::Ablate => typed::<AblateRunConfig>(raw),
        CommandName::Gradcheck => typed::<GradcheckConfig>(raw),
    }
}

/// Default values of every section that has them, so overrides can
/// address nested entries of a config that omits them.
fn defaults(name: CommandName) -> Value {
    let train = serde_json::to_value(TrainConfig::default()).expect("serializes");
    let distill = serde_json::to_value(DistillConfig::default()).expect("serializes");
    match name {
        CommandName::Gen => serde_json::to_value(GenConfig::default()).expect("serializes"),
        CommandName::Gradcheck => serde_json::to_value(GradcheckConfig::default()).expect("serializes"),
        CommandName::Train | CommandName::TrainTeacher => serde_json::json!({ "train": train }),
        CommandName::Distill => serde_json::json!({ "train": train, "distill": distill }),
        CommandName::Ablate => serde_json::json!({ "train": train, "base": distill }),
        CommandName::Stats | CommandName::Eval => Value::Object(Default::default()),
    }
}

/// `top` over `base`: objects merge key by key, anything else replaces.
fn merged(base: Value, top: Value) -> Value {
    match (base, top) {
        (Value::Object(mut b), Value::Object(t)) => {
            for (k, tv) in t {
                let nv = match b.remove(&k) {
                    Some(bv) => merged(bv, tv),
                    None => tv,
                };
                b.insert(k, nv);
            }
            Value::Object(b)
        }
        (_, top) => top,
    }
}

fn typed<T: Serialize + DeserializeOwned>(raw: Value) -> CliResult<Value> {
    let t: T = parse_config(raw)?;
    Ok(serde_json::to_value(t).expect("config serializes"))
}

fn parse_config<T: DeserializeOwned>(raw: Value) -> CliResult<T> {
    serde_path_to_error::deserialize(raw).map_err(|e| {
        let path = e.path().to_string();
        let path = if path == "." { "config".to_string() } else { format!("config.{path}") };
        CliError::validation(format!("{path}: {}", e.inner()))
    })
}

fn set_path(root: &mut Value, key: &str, v: Value) -> CliResult<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::validation(format!("bad override key {key:?}")));
    }
    let mut cur = root;
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        cur = match cur {
            Value::Array(a) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| CliError::validation(format!("{key}: {part:?} is not an array index")))?;
                let len = a.len();
                a.get_mut(idx)
                    .ok_or_else(|| CliError::validation(format!("{key}: index {idx} out of range ({len})")))?
            }
            Value::Object(m) => m
                .entry(part.to_string())
                .or_insert_with(|| if last { Value::Null } else { Value::Object(Default::default()) }),
            Value::Null => {
                *cur = Value::Object(Default::default());
                cur.as_object_mut()
                    .expect("just set")
                    .entry(part.to_string())
                    .or_insert(Value::Null)
            }
            _ => return Err(CliError::validation(format!("{key}: {part:?} is inside a non-object value"))),
        };
        if last {
            *cur = v;
            return Ok(());
        }
    }
    Ok(())
}

pub fn schema(name: CommandName) -> Value {
    let s = match name {
        CommandName::Gen => schemars::schema_for!(GenConfig),
        CommandName::Stats => schemars::schema_for!(StatsConfig),
        CommandName::Train | CommandName::TrainTeacher => schemars::schema_for!(TrainRunConfig),
        CommandName::Distill => schemars::schema_for!(DistillRunConfig),
        CommandName::Eval => schemars::schema_for!(EvalRunConfig),
        CommandName::Ablate => schemars::schema_for!(AblateRunConfig),
        CommandName::Gradcheck => schemars::schema_for!(GradcheckConfig),
    };
    serde_json::to_value(s).expect("schema serializes")
}

fn sha256_file(p: &Path) -> CliResult<String> {
    let bytes = fs::read(p).map_err(|e| CliError::validation(format!("{}: {e}", p.display())))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

fn checkpoint_files(p: &Path) -> Vec<PathBuf> {
    vec![p.to_path_buf(), p.with_extension("bin")]
}

/// Every file a resolved config reads.
fn input_files(name: CommandName, cfg: &Value) -> CliResult<Vec<PathBuf>> {
    let path = |k: &str| cfg.get(k).and_then(Value::as_str).map(PathBuf::from);
    let mut files = Vec::new();
    for k in ["dataset", "eval_dataset"] {
        if let Some(p) = path(k) {
            files.extend(dataset_files(&p).map_err(|e| CliError::validation(e.to_string()))?);
        }
    }
    for k in ["teacher", "checkpoint"] {
        if let Some(p) = path(k) {
            files.extend(checkpoint_files(&p));
        }
    }
    let _ = name;
    Ok(files)
}

fn hash_inputs(files: &[PathBuf]) -> CliResult<BTreeMap<String, String>> {
    files
        .iter()
        .map(|f| Ok((f.display().to_string(), sha256_file(f)?)))
        .collect()
}

fn threads() -> CliResult<usize> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(1),
        Ok(v) => v
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::validation(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, v: &impl Serialize) -> CliResult<()> {
    write(path, serde_json::to_string_pretty(v).expect("serializes") + "\n")
}

fn seed_of(name: CommandName, cfg: &Value) -> Option<u64> {
    let mut cur = cfg;
    for part in name.seed_path()?.split('.') {
        cur = cur.get(part)?;
    }
    cur.as_u64()
}

fn execute(name: CommandName, config_path: Option<PathBuf>, resolved: Value, out: Option<PathBuf>) -> CliResult<()> {
    let threads = threads()?;
    let seed = seed_of(name, &resolved);
    let out = out.unwrap_or_else(|| {
        let ts = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        PathBuf::from("runs").join(format!("{}-{ts}-s{}", name.as_str(), seed.unwrap_or(0)))
    });
    let mut files = input_files(name, &resolved)?;
    if let Some(c) = &config_path {
        files.insert(0, c.clone());
    }
    let manifest = RunManifest {
        command: name,
        config_path,
        resolved_config: resolved.clone(),
        seed,
        out_dir: out.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        input_hashes: hash_inputs(&files)?,
    };
    fs::create_dir_all(&out).map_err(|e| CliError::runtime(format!("{}: {e}", out.display())))?;
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    match name {
        CommandName::Gen => cmd_gen(parse_config(resolved)?, &out),
        CommandName::Stats => cmd_stats(parse_config(resolved)?, &out),
        CommandName::Train => cmd_train(parse_config(resolved)?, &out, false, threads),
        CommandName::TrainTeacher => cmd_train(parse_config(resolved)?, &out, true, threads),
        CommandName::Distill => cmd_distill(parse_config(resolved)?, &out, threads),
        CommandName::Eval => cmd_eval(parse_config(resolved)?, &out, threads),
        CommandName::Ablate => cmd_ablate(parse_config(resolved)?, &out),
        CommandName::Gradcheck => cmd_gradcheck(parse_config(resolved)?, &out),
    }
}

fn rerun(manifest: &Path, out: Option<PathBuf>) -> CliResult<()> {
    let text = fs::read_to_string(manifest).map_err(|e| CliError::validation(format!("{}: {e}", manifest.display())))?;
    let m: RunManifest =
        serde_json::from_str(&text).map_err(|e| CliError::validation(format!("{}: {e}", manifest.display())))?;
    let config_file = m.config_path.as_ref().map(|p| p.display().to_string());
    for (path, hash) in &m.input_hashes {
        if Some(path) == config_file.as_ref() {
            continue;
        }
        if &sha256_file(Path::new(path))? != hash {
            return Err(CliError::validation(format!("input {path} changed since the recorded run")));
        }
    }
    let out = out.unwrap_or_else(|| {
        let mut s = m.out_dir.clone().into_os_string();
        s.push("-rerun");
        PathBuf::from(s)
    });
    let resolved = resolve_config(m.command, m.resolved_config, &[], None)?;
    execute(m.command, m.config_path, resolved, Some(out))
}

fn cmd_gen(cfg: GenConfig, out: &Path) -> CliResult<()> {
    cfg.phantom.validate().map_err(CliError::from)?;
    let base = cfg.seed.wrapping_mul(1_000_003);
    let cases = phantom_cases(&cfg.phantom, "case", base, cfg.cases)?;
    let generator = serde_json::to_value(&cfg).expect("serializes");
    write_dataset(out, &cases, generator)?;
    let stats = class_stats_many(cases.iter().map(|c| &c.labels));
    println!(
        "wrote {} cases to {} (background {:.2}%)",
        cases.len(),
        out.display(),
        100.0 * stats.background_fraction
    );
    Ok(())
}

fn cmd_stats(cfg: StatsConfig, out: &Path) -> CliResult<()> {
    let cases = load_dataset(&cfg.dataset)?;
    let stats = class_stats_many(cases.iter().map(|c| &c.labels));
    write_json(&out.join("stats.json"), &stats)?;
    write(&out.join("stats.csv"), stats.to_csv())?;
    println!(
        "{} cases, background {:.4}, largest-to-smallest foreground ratio {}",
        cases.len(),
        stats.background_fraction,
        stats.foreground_ratio
    );
    Ok(())
}

fn write_outcome(out: &Path, o: &TrainOutcome) -> CliResult<()> {
    save_checkpoint(&out.join("best.json"), &o.best, None, o.best_epoch)?;
    save_checkpoint(&out.join("last.json"), &o.last, None, o.metrics.len())?;
    write(&out.join("metrics.csv"), metrics_csv(&o.metrics))?;
    let mut v = String::from("epoch,val_mdice\n");
    for r in &o.validation {
        v.push_str(&format!("{},{}\n", r.epoch, r.mdice));
    }
    write(&out.join("validation.csv"), v)?;
    write_json(&out.join("split.json"), &o.split)
}

fn summary(o: &TrainOutcome, train_mdice: f64) -> Value {
    serde_json::json!({
        "best_epoch": o.best_epoch,
        "best_val_mdice": o.validation.iter().find(|r| r.epoch == o.best_epoch).map(|r| r.mdice),
        "train_mdice": train_mdice,
        "param_hash": o.best.param_hash(),
        "steps": o.metrics.len(),
    })
}

fn cmd_train(cfg: TrainRunConfig, out: &Path, teacher: bool, threads: usize) -> CliResult<()> {
    cfg.plan.validate()?;
    cfg.train.validate(&cfg.plan)?;
    let cases = load_dataset(&cfg.dataset)?;
    let o = if teacher {
        train_teacher(&cases, &cfg.plan, &cfg.train, Some(out))?
    } else {
        train(&cases, &cfg.plan, &cfg.train, Some(out))?
    };
    write_outcome(out, &o)?;
    let mdice = evaluate_threads(&o.best, &cases, threads)?.mdice;
    write_json(&out.join("summary.json"), &summary(&o, mdice))?;
    println!("best epoch {} of {}, training-set mDice {mdice:.4}", o.best_epoch + 1, cfg.train.epochs);
    Ok(())
}

fn student_plan(teacher: &Network, t: u32, c_min: Option<usize>) -> CliResult<NetworkPlan> {
    let plan = derive_student_plan(teacher.plan(), t, c_min.unwrap_or(teacher.plan().c_min));
    plan.validate()?;
    Ok(plan)
}

fn cmd_distill(cfg: DistillRunConfig, out: &Path, threads: usize) -> CliResult<()> {
    let teacher = load_checkpoint(&cfg.teacher)?.network;
    let plan = student_plan(&teacher, cfg.student_width_factor, cfg.c_min)?;
    cfg.train.validate(&plan)?;
    if cfg.distill.toggles.any() {
        cfg.distill.validate(plan.num_stages())?;
    }
    let cases = load_dataset(&cfg.dataset)?;
    let before = teacher.param_hash();
    let o = distill_student(&cases, &teacher, &plan, &cfg.distill, &cfg.train, Some(out))?;
    if teacher.param_hash() != before {
        return Err(CliError::runtime("teacher parameters changed during distillation"));
    }
    write_outcome(out, &o)?;
    let mdice = evaluate_threads(&o.best, &cases, threads)?.mdice;
    let mut s = summary(&o, mdice);
    s["teacher_hash"] = Value::from(before);
    write_json(&out.join("summary.json"), &s)?;
    println!("best epoch {} of {}, training-set mDice {mdice:.4}", o.best_epoch + 1, cfg.train.epochs);
    Ok(())
}

fn cmd_eval(cfg: EvalRunConfig, out: &Path, threads: usize) -> CliResult<()> {
    let net = load_checkpoint(&cfg.checkpoint)?.network;
    let cases = load_dataset(&cfg.dataset)?;
    let report = evaluate_threads(&net, &cases, threads)?;
    write_json(&out.join("report.json"), &report)?;
    write(&out.join("report.csv"), report.to_csv())?;
    write(&out.join("timing.csv"), report.timing_csv())?;
    println!("mDice {:.4} over {} cases", report.mdice, cases.len());
    for c in &report.per_class {
        let f = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"));
        println!("  class {}: Dice {} HD95 {}", c.class_id, f(c.dice), f(c.hd95));
    }
    Ok(())
}

/// Rows of a preset matrix starting from `base`.
pub fn preset_matrix(preset: AblationPreset, base: &DistillConfig, num_stages: usize) -> Vec<AblationEntry> {
    let with = |name: &str, toggles: Toggles, stages: Option<Vec<usize>>| AblationEntry {
        name: name.to_string(),
        distill: DistillConfig {
            toggles,
            stages: stages.or_else(|| base.stages.clone()),
            ..base.clone()
        },
    };
    let t = |sard_fg, sard_bg, mask_align, msca| Toggles {
        sard_fg,
        sard_bg,
        mask_align,
        msca,
    };
    match preset {
        AblationPreset::Components => vec![
            with("no-kd", Toggles::NONE, None),
            with("mask-align", t(false, false, true, false), None),
            with("fg", t(true, false, false, false), None),
            with("bg", t(false, true, false, false), None),
            with("fg+bg", t(true, true, false, false), None),
            with("ms-sard", t(true, true, true, false), None),
            with("ms-ca", t(false, false, false, true), None),
            with("full", Toggles::ALL, None),
        ],
        AblationPreset::Stages => vec![
            with("shallow", base.toggles, Some(vec![0])),
            with("deep", base.toggles, Some(vec![num_stages - 1])),
            with("all", base.toggles, Some((0..num_stages).collect())),
        ],
    }
}

fn cmd_ablate(cfg: AblateRunConfig, out: &Path) -> CliResult<()> {
    let teacher = load_checkpoint(&cfg.teacher)?.network;
    let plan = student_plan(&teacher, cfg.student_width_factor, cfg.c_min)?;
    cfg.train.validate(&plan)?;
    let matrix = if cfg.matrix.is_empty() {
        preset_matrix(cfg.preset, &cfg.base, plan.num_stages())
    } else {
        cfg.matrix.clone()
    };
    let cases = load_dataset(&cfg.dataset)?;
    let eval_cases = match &cfg.eval_dataset {
        Some(p) => load_dataset(p)?,
        None => cases.clone(),
    };
    let report = run_ablation(&cases, &eval_cases, &teacher, &plan, &matrix, &cfg.train)?;
    write(&out.join("ablation.csv"), report.to_csv())?;
    write_json(&out.join("ablation.json"), &report)?;
    write(&out.join("timing.csv"), report.timing_csv())?;
    println!("baseline mDice {:.4}", report.baseline_mdice);
    for r in &report.rows {
        println!("  {:<12} mDice {:.4} delta {:+.4}", r.name, r.mdice, r.delta_mdice);
    }
    Ok(())
}

/// Total loss through a student network against a frozen teacher, over
/// student and distillation-head parameters.
pub fn network_gradcheck(cfg: &NetworkCheck, seed: u64, opts: GradCheckOptions) -> crate::Result<GradCheckReport> {
    use crate::losses::loss_task;
    use crate::model::forward_with_taps;
    use crate::train::{distill_terms, DistillHead};
    use crate::volume::generate_phantom;

    let teacher = build_network(&cfg.teacher_plan, seed ^ 0x7eac)?.frozen();
    let plan = derive_student_plan(&cfg.teacher_plan, cfg.student_width_factor, cfg.teacher_plan.c_min);
    let student = build_network(&plan, seed)?;
    let head = DistillHead::random(&cfg.teacher_plan, &plan, &cfg.distill, seed);
    let k = cfg.teacher_plan.num_classes;
    let spec = PhantomSpec {
        shape: cfg.input_shape,
        classes: (1..k)
            .map(|_| ClassSpec {
                target_fraction: 0.25 / (k - 1) as f64,
                shape_kind: ShapeKind::Sphere,
            })
            .collect(),
        noise_sigma: 0.3,
        modalities: cfg.teacher_plan.input_modalities,
        class_means: None,
    };
    let (image, labels) = generate_phantom(seed, &spec)?;
    let x = image.to_tensor();
    let mut named = student.named();
    named.extend(head.names().into_iter().zip(head.tensors()).map(|(n, t)| (format!("head.{n}"), t)));
    let n = student.params().len();
    let all: Vec<Tensor> = named.iter().map(|(_, t)| t.detach()).collect();
    // the shared output bias cancels between teacher and student branches
    let checked: Vec<usize> = (0..named.len()).filter(|&i| !named[i].0.ends_with(".b_v2")).collect();
    let loss = |sub: &[Tensor]| -> crate::Result<Tensor> {
        let mut p = all.clone();
        for (&i, t) in checked.iter().zip(sub) {
            p[i] = t.clone();
        }
        let net = student.with_params(p[..n].to_vec())?;
        let (logits, taps) = forward_with_taps(&net, &x)?;
        let s = logits.shape().to_vec();
        let task = loss_task(&logits.reshape(&s[1..])?, &labels)?;
        let (sard, ca) = distill_terms(&teacher, &taps, &head.with_tensors(&p[n..]), &cfg.distill, &x, &labels)?;
        task.add(&sard)?.add(&ca)
    };
    let params: Vec<(String, Tensor)> = checked.iter().map(|&i| named[i].clone()).collect();
    check_gradients(&params, loss, opts, &mut rng::stream(seed, rng::GRADCHECK))
}

fn cmd_gradcheck(cfg: GradcheckConfig, out: &Path) -> CliResult<()> {
    if !(cfg.step > 0.0) || !(cfg.tolerance > 0.0) || cfg.coords == 0 {
        return Err(CliError::validation("config: step, tolerance and coords must be positive"));
    }
    let opts = GradCheckOptions {
        step: cfg.step,
        coords: cfg.coords,
        floor: REL_ERR_FLOOR,
    };
    let mut r = rng::stream(cfg.seed, rng::GRADCHECK);
    let mut results: Vec<(String, GradCheckReport)> = Vec::new();
    for i in 0..cfg.instances {
        for (name, rep) in loss_suite(&mut r, opts)? {
            results.push((format!("{name}#{i}"), rep));
        }
    }
    if let Some(net) = &cfg.network {
        results.push(("network_total".into(), network_gradcheck(net, cfg.seed, opts)?));
    }
    let mut all = GradCheckReport { checks: Vec::new() };
    let mut summary = Vec::new();
    for (name, rep) in &results {
        let w = rep.worst();
        println!(
            "{name:<16} coords {:>4}  max rel err {:.3e}  worst {}",
            rep.checks.len(),
            rep.max_rel_err(),
            w.map_or("-".to_string(), |c| format!("{}[{}]", c.param, c.index))
        );
        summary.push(serde_json::json!({"term": name, "coords": rep.checks.len(), "max_rel_err": rep.max_rel_err()}));
        all.merge(rep.clone());
    }
    write_json(
        &out.join("gradcheck.json"),
        &serde_json::json!({"terms": summary, "checks": all.checks, "tolerance": cfg.tolerance}),
    )?;
    let worst = all.worst().cloned();
    let max = all.max_rel_err();
    match worst {
        Some(w) => println!(
            "worst parameter {}[{}]: rel err {:.3e} over {} coordinates",
            w.param,
            w.index,
            max,
            all.checks.len()
        ),
        None => println!("no coordinates checked"),
    }
    if max < cfg.tolerance {
        println!("PASS (tolerance {:.0e})", cfg.tolerance);
        Ok(())
    } else {
        Err(CliError::runtime(format!(
            "gradient check failed: rel err {max:.3e} >= {:.0e}",
            cfg.tolerance
        )))
    }
}
