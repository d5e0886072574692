//! Run configuration: one JSON document drives every subcommand.
//!
//! Unknown keys are rejected at every level. Relative paths are resolved
//! against the directory holding the config file. All stage seeds are
//! derived from the top-level `seed`; the cohort seed lives in `synth.seed`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use tristack::dataset::Task;
use tristack::eval::EvalConfig;
use tristack::learners::{ForestParams, LogisticParams, SvmParams, TreeParams};
use tristack::preprocess::PreprocessConfig;
use tristack::stack::StackConfig;
use tristack::synth::CohortSpec;
use tristack::tune::ParamGrid;

use crate::presets;
use crate::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub synth: CohortSpec,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default = "default_tasks")]
    pub tasks: Vec<Task>,
    #[serde(default)]
    pub models: ModelsConfig,
    #[serde(default)]
    pub tune: TuneConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub explain: ExplainConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_seed() -> u64 {
    42
}

fn default_tasks() -> Vec<Task> {
    vec![Task::LoginBinary, Task::MessageMulticlass]
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("every section has defaults")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Directory holding `cohort.csv` and `labels.csv`; defaults to
    /// `<output.dir>/cohort`, where `synth` writes.
    pub dir: Option<PathBuf>,
    /// JSON list of column schemas; defaults to the synthetic cohort schema.
    pub schema: Option<PathBuf>,
    /// Text column name to a two-column rules CSV.
    pub rules: BTreeMap<String, PathBuf>,
    /// Rows modelled for the message task.
    pub message_population: Population,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Population {
    /// Every participant, so class 0 includes those who never logged in.
    #[default]
    Full,
    /// Only participants with a login.
    LoggedIn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    /// Share of rows in the training partition.
    pub train_ratio: f64,
    pub smote: bool,
    pub smote_k: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            train_ratio: 0.8,
            smote: true,
            smote_k: 5,
        }
    }
}

/// Hyperparameters of the eight compared models for one task. The three
/// boosting baselines are the stack's base learners refit on the full
/// training partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSet {
    pub logistic: LogisticParams,
    pub tree: TreeParams,
    pub forest: ForestParams,
    pub svm: SvmParams,
    pub stack: StackConfig,
}

/// A preset name or explicit parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Choice<T> {
    Preset(String),
    Explicit(Box<T>),
}

impl Choice<ModelSet> {
    pub fn resolve(&self) -> Result<ModelSet, Failure> {
        match self {
            Choice::Preset(name) => presets::model_set(name),
            Choice::Explicit(m) => Ok((**m).clone()),
        }
    }
}

impl Choice<ParamGrid> {
    pub fn resolve(&self) -> Result<ParamGrid, Failure> {
        match self {
            Choice::Preset(name) => presets::grid(name),
            Choice::Explicit(g) => Ok((**g).clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelsConfig {
    pub login: Choice<ModelSet>,
    pub message: Choice<ModelSet>,
}

impl Default for ModelsConfig {
    fn default() -> Self {
        Self {
            login: Choice::Preset("login".into()),
            message: Choice::Preset("message".into()),
        }
    }
}

impl ModelsConfig {
    pub fn for_task(&self, task: Task) -> Result<ModelSet, Failure> {
        match task {
            Task::LoginBinary => self.login.resolve(),
            // the binary engagement view reuses the message hyperparameters
            Task::MessageMulticlass | Task::MessageBinary => self.message.resolve(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuneConfig {
    pub task: Task,
    pub grid: Choice<ParamGrid>,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            task: Task::LoginBinary,
            grid: Choice::Preset("login_xgboost_grid".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExplainConfig {
    pub top_n: usize,
    /// Test rows explained per task; a seeded subset is drawn when the
    /// test partition is larger.
    pub max_rows: usize,
    /// Rows drawn in the decision plot.
    pub decision_rows: usize,
    /// Adds a `message_binary` view (0 vs ≥1 messages) with its own stack.
    pub binary_recode: bool,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self {
            top_n: 10,
            max_rows: 100,
            decision_rows: 10,
            binary_recode: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("run") }
    }
}

fn config_err(key: &str, msg: impl std::fmt::Display) -> Failure {
    Failure::Config(format!("`{key}`: {msg}"))
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, Failure> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Failure::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file, resolving relative paths
    /// against its directory.
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output.dir);
        if let Some(d) = self.data.dir.as_mut() {
            fix(d);
        }
        if let Some(s) = self.data.schema.as_mut() {
            fix(s);
        }
        self.data.rules.values_mut().for_each(fix);
    }

    pub fn validate(&self) -> Result<(), Failure> {
        self.synth.check().map_err(|e| match e {
            tristack::Error::Config(m) => Failure::Config(format!("synth: {m}")),
            other => Failure::Config(format!("synth: {other}")),
        })?;
        let r = self.sampling.train_ratio;
        if !(r > 0.0 && r < 1.0) {
            return Err(config_err("sampling.train_ratio", format!("must lie in (0, 1), got {r}")));
        }
        if self.sampling.smote_k == 0 {
            return Err(config_err("sampling.smote_k", "must be ≥ 1"));
        }
        if self.tasks.is_empty() {
            return Err(config_err("tasks", "at least one task is required"));
        }
        for t in &self.tasks {
            if *t == Task::MessageBinary {
                return Err(config_err("tasks", "message_binary is produced by explain.binary_recode, not trained directly"));
            }
        }
        for task in [Task::LoginBinary, Task::MessageMulticlass] {
            let set = self.models.for_task(task).map_err(|e| match e {
                Failure::Config(m) => Failure::Config(format!("models.{}: {m}", task.name())),
                other => other,
            })?;
            set.stack.check().map_err(|e| config_err(&format!("models.{}.stack", task.name()), e))?;
        }
        let grid = self.tune.grid.resolve().map_err(|e| match e {
            Failure::Config(m) => Failure::Config(format!("tune.grid: {m}")),
            other => other,
        })?;
        grid.check().map_err(|e| config_err("tune.grid", e))?;
        if self.tune.task == Task::MessageBinary {
            return Err(config_err("tune.task", "choose login or message"));
        }
        let a = self.eval.alpha;
        if !(a > 0.0 && a < 1.0) {
            return Err(config_err("eval.alpha", format!("must lie in (0, 1), got {a}")));
        }
        if self.eval.n_bootstrap == 0 {
            return Err(config_err("eval.n_bootstrap", "must be ≥ 1"));
        }
        if self.explain.top_n == 0 {
            return Err(config_err("explain.top_n", "must be ≥ 1"));
        }
        if self.explain.max_rows == 0 {
            return Err(config_err("explain.max_rows", "must be ≥ 1"));
        }
        if self.preprocess.knn_k == 0 {
            return Err(config_err("preprocess.knn_k", "must be ≥ 1"));
        }
        Ok(())
    }

    pub fn data_dir(&self) -> PathBuf {
        self.data.dir.clone().unwrap_or_else(|| self.output.dir.join("cohort"))
    }
}
