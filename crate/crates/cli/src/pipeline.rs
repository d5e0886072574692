//! The six stages. Every stage reads the config, writes under
//! `output.dir`, appends to the run log and rebuilds the manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use tristack::dataset::{read_csv, read_labels, ColumnSchema, DataTable, LabelVector, Task};
use tristack::eval::{evaluate, ComparisonTable, MetricReport};
use tristack::explain::{
    column_means, decision_paths, explain_matrix, ranking_csv, recode_binary_engagement, render_svg, stack_shap_matrix, summarize,
    write_shap_csv_file, Explainer, Plot, RankEntry, ShapValues,
};
use tristack::learners::{fit_boost, AnyModel, Classifier, LearnerConfig};
use tristack::preprocess::Preprocessor;
use tristack::rng::{derive_seed, seeded};
use tristack::sampling::{smote, stratified_split, SplitPlan};
use tristack::stack::{fit_stack, Inference, StackConfig, StackModel};
use tristack::synth::{cohort_schema, generate_cohort, read_ground_truth, write_cohort, CohortFiles, GroundTruth, Outcome};
use tristack::textnorm::RuleDictionary;
use tristack::tune::random_grid_search;
use tristack::Matrix;

use crate::config::{ModelSet, Population, RunConfig};
use crate::manifest::{log_line, read_json, sha256_hex, write_json, write_json_compact, write_manifest, write_text, AuditLog};
use crate::Failure;

/// File stem and table label of the eight compared models, in table order.
pub const MODELS: [(&str, &str); 8] = [
    ("logistic_regression", "LR"),
    ("decision_tree", "DT"),
    ("random_forest", "RF"),
    ("svm", "SVM"),
    ("xgboost", "XGB"),
    ("lightgbm", "LightGBM"),
    ("catboost", "CatBoost"),
    ("etb", "ETB"),
];

/// The three boosting baselines, by position in the stack's base list.
const BASE_NAMES: [&str; 3] = ["xgboost", "lightgbm", "catboost"];

/// Attribution views written by `explain`.
pub const VIEWS: [&str; 2] = ["xgboost", "etb"];

pub fn out_dir(cfg: &RunConfig) -> &Path {
    &cfg.output.dir
}

pub fn model_path(cfg: &RunConfig, task: Task, name: &str) -> PathBuf {
    cfg.output.dir.join("models").join(task.name()).join(format!("{name}.json"))
}

pub fn explain_dir(cfg: &RunConfig, task: Task, view: &str) -> PathBuf {
    cfg.output.dir.join("explain").join(task.name()).join(view)
}

fn finish(cfg: &RunConfig, command: &str) -> Result<(), Failure> {
    log_line(out_dir(cfg), command, "done")?;
    write_manifest(out_dir(cfg))?;
    Ok(())
}

fn to_json_string<T: Serialize>(v: &T) -> Result<String, Failure> {
    serde_json::to_string(v).map_err(|e| Failure::Runtime(e.to_string()))
}

// ---------------------------------------------------------------------------
// Data and splits
// ---------------------------------------------------------------------------

pub struct Data {
    pub table: DataTable,
    pub labels: BTreeMap<String, LabelVector>,
}

impl Data {
    pub fn labels(&self, task: Task) -> Result<&LabelVector, Failure> {
        self.labels
            .get(task.name())
            .ok_or_else(|| Failure::Runtime(format!("labels file has no `{}` column", task.name())))
    }

    /// The rows modelled for `task`: the whole cohort, or for the message
    /// task optionally only rows with a login.
    pub fn for_task(&self, cfg: &RunConfig, task: Task) -> Result<TaskData, Failure> {
        let labels = self.labels(task)?;
        if task == Task::LoginBinary || cfg.data.message_population == Population::Full {
            return Ok(TaskData {
                table: self.table.clone(),
                labels: labels.clone(),
            });
        }
        let login = self.labels(Task::LoginBinary)?;
        let rows: Vec<usize> = (0..login.len()).filter(|&i| login.labels[i] == 1).collect();
        Ok(TaskData {
            table: self.table.select_rows(&rows),
            labels: labels.select(&rows),
        })
    }
}

pub struct TaskData {
    pub table: DataTable,
    pub labels: LabelVector,
}

pub fn load_data(cfg: &RunConfig) -> Result<Data, Failure> {
    let files = CohortFiles::in_dir(&cfg.data_dir());
    for p in [&files.features, &files.labels] {
        if !p.is_file() {
            return Err(Failure::Runtime(format!("missing cohort file {}", p.display())));
        }
    }
    let schema: Vec<ColumnSchema> = match &cfg.data.schema {
        Some(p) => read_json(p).map_err(|e| Failure::Config(format!("`data.schema`: {e}")))?,
        None => cohort_schema(),
    };
    let table = read_csv(&files.features, &schema)?;
    let (ids, labels) = read_labels(&files.labels)?;
    if ids != table.row_ids() {
        return Err(Failure::Runtime(format!(
            "{} and {} list different row ids",
            files.features.display(),
            files.labels.display()
        )));
    }
    Ok(Data { table, labels })
}

fn load_rules(cfg: &RunConfig) -> Result<BTreeMap<String, RuleDictionary>, Failure> {
    cfg.data
        .rules
        .iter()
        .map(|(col, path)| Ok((col.clone(), RuleDictionary::from_csv(path)?)))
        .collect()
}

/// The split as persisted next to the models; `sha256` covers every other
/// field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub task: Task,
    pub ratio: f64,
    pub seed: u64,
    pub train_row_ids: Vec<u64>,
    pub test_row_ids: Vec<u64>,
    pub sha256: String,
}

impl SplitRecord {
    pub fn new(task: Task, plan: &SplitPlan, row_ids: &[u64]) -> Result<Self, Failure> {
        let mut r = SplitRecord {
            task,
            ratio: plan.ratio,
            seed: plan.seed,
            train_row_ids: plan.train_indices.iter().map(|&i| row_ids[i]).collect(),
            test_row_ids: plan.test_indices.iter().map(|&i| row_ids[i]).collect(),
            sha256: String::new(),
        };
        r.sha256 = r.digest()?;
        Ok(r)
    }

    pub fn digest(&self) -> Result<String, Failure> {
        let body = to_json_string(&(self.task, self.ratio, self.seed, &self.train_row_ids, &self.test_row_ids))?;
        Ok(sha256_hex(body.as_bytes()))
    }
}

pub fn split_path(cfg: &RunConfig, task: Task) -> PathBuf {
    cfg.output.dir.join("splits").join(format!("{}.json", task.name()))
}

pub fn audit_path(cfg: &RunConfig, task: Task) -> PathBuf {
    cfg.output.dir.join("audit").join(format!("{}.json", task.name()))
}

fn split_for(cfg: &RunConfig, task: Task, labels: &LabelVector) -> Result<SplitPlan, Failure> {
    Ok(stratified_split(labels, cfg.sampling.train_ratio, derive_seed(cfg.seed, &format!("split/{}", task.name())))?)
}

/// Split, preprocessing and (optionally) SMOTE for one task, fitted on
/// training rows only.
pub struct Prepared {
    pub task: Task,
    pub plan: SplitPlan,
    pub record: SplitRecord,
    pub preprocessor: Preprocessor,
    pub x_train: Matrix,
    pub y_train: LabelVector,
    /// SMOTE-balanced training set (a copy of the above when disabled).
    pub x_fit: Matrix,
    pub y_fit: LabelVector,
    pub audit: AuditLog,
}

pub fn prepare(cfg: &RunConfig, data: &TaskData, task: Task, resample: bool) -> Result<Prepared, Failure> {
    let labels = &data.labels;
    let plan = split_for(cfg, task, labels)?;
    let record = SplitRecord::new(task, &plan, data.table.row_ids())?;
    let train = data.table.select_rows(&plan.train_indices);
    let y_train = labels.select(&plan.train_indices);
    let rules = load_rules(cfg)?;
    let (preprocessor, x_train) = Preprocessor::fit(&train, &y_train, &cfg.preprocess, &rules, derive_seed(cfg.seed, &format!("preprocess/{}", task.name())))?;
    let mut audit = AuditLog::new(task);
    for stage in ["text_normalizer", "encoder", "imputer", "scaler", "selector"] {
        audit.record(stage, train.row_ids());
    }
    let (x_fit, y_fit) = if resample && cfg.sampling.smote {
        audit.record("smote", train.row_ids());
        smote(&x_train, &y_train, cfg.sampling.smote_k, derive_seed(cfg.seed, &format!("smote/{}", task.name())))?
    } else {
        (x_train.clone(), y_train.clone())
    };
    Ok(Prepared {
        task,
        plan,
        record,
        preprocessor,
        x_train,
        y_train,
        x_fit,
        y_fit,
        audit,
    })
}

/// Recomputes the split from config and labels and checks it against the
/// persisted record and the audit log.
pub fn verified_split(cfg: &RunConfig, data: &TaskData, task: Task) -> Result<(SplitPlan, SplitRecord), Failure> {
    let record: SplitRecord = read_json(&split_path(cfg, task))?;
    let plan = split_for(cfg, task, &data.labels)?;
    let fresh = SplitRecord::new(task, &plan, data.table.row_ids())?;
    if record.digest()? != record.sha256 || fresh.sha256 != record.sha256 {
        return Err(Failure::Runtime(format!(
            "split plan hash mismatch for `{}`: the stored split does not match this config and cohort",
            task.name()
        )));
    }
    let audit: AuditLog = read_json(&audit_path(cfg, task))?;
    audit.verify(&record.train_row_ids, &record.test_row_ids)?;
    Ok((plan, record))
}

// ---------------------------------------------------------------------------
// Models
// ---------------------------------------------------------------------------

/// A persisted model of either kind.
pub enum Trained {
    Single(AnyModel),
    Stack(Box<StackModel>),
}

impl Trained {
    pub fn predict_proba(&self, x: &Matrix) -> Result<Matrix, Failure> {
        Ok(match self {
            Trained::Single(m) => m.predict_proba(x)?,
            Trained::Stack(m) => m.predict_proba(x)?,
        })
    }
}

pub fn load_model(cfg: &RunConfig, task: Task, name: &str) -> Result<Trained, Failure> {
    let path = model_path(cfg, task, name);
    if name == "etb" {
        let text = std::fs::read_to_string(&path).map_err(|e| Failure::Runtime(format!("cannot read {}: {e}", path.display())))?;
        Ok(Trained::Stack(Box::new(StackModel::from_json(&text)?)))
    } else {
        Ok(Trained::Single(read_json(&path)?))
    }
}

fn load_single(cfg: &RunConfig, task: Task, name: &str) -> Result<AnyModel, Failure> {
    read_json(&model_path(cfg, task, name))
}

fn load_stack(cfg: &RunConfig, task: Task) -> Result<StackModel, Failure> {
    match load_model(cfg, task, "etb")? {
        Trained::Stack(s) => Ok(*s),
        Trained::Single(_) => unreachable!("etb always loads as a stack"),
    }
}

fn stack_config(cfg: &RunConfig, set: &ModelSet, task: Task) -> StackConfig {
    StackConfig {
        seed: derive_seed(cfg.seed, &format!("train/{}/etb", task.name())),
        ..set.stack.clone()
    }
}

/// The stacked model plus its three base learners refit on all training rows.
pub fn fit_ensemble(cfg: &RunConfig, set: &ModelSet, task: Task, x: &Matrix, y: &LabelVector) -> Result<(StackModel, Vec<AnyModel>), Failure> {
    let stack_cfg = stack_config(cfg, set, task);
    let stack = fit_stack(x, y, &stack_cfg)?;
    let bases = if stack.full_models.len() == BASE_NAMES.len() {
        stack.full_models.iter().cloned().map(AnyModel::Boost).collect()
    } else {
        BASE_NAMES
            .iter()
            .zip(&stack_cfg.base)
            .map(|(name, p)| {
                let seed = derive_seed(cfg.seed, &format!("train/{}/{name}", task.name()));
                Ok(AnyModel::Boost(fit_boost(x, &y.labels, y.n_classes, p, seed)?))
            })
            .collect::<Result<_, Failure>>()?
    };
    Ok((stack, bases))
}

fn params_echo(cfg: &RunConfig, set: &ModelSet, task: Task) -> Value {
    let stack = stack_config(cfg, set, task);
    let mut m = serde_json::Map::new();
    m.insert("logistic_regression".into(), json!(set.logistic));
    m.insert("decision_tree".into(), json!(set.tree));
    m.insert("random_forest".into(), json!(set.forest));
    m.insert("svm".into(), json!(set.svm));
    for (name, p) in BASE_NAMES.iter().zip(&stack.base) {
        m.insert((*name).into(), json!(p));
    }
    m.insert("etb".into(), json!(stack));
    Value::Object(m)
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<CohortFiles, Failure> {
    let cohort = generate_cohort(&cfg.synth).map_err(|e| match e {
        tristack::Error::Config(m) => Failure::Config(format!("synth: {m}")),
        other => Failure::from(other),
    })?;
    let files = write_cohort(&cfg.data_dir(), &cohort)?;
    log_line(out_dir(cfg), "synth", &format!("{} rows written to {}", cohort.table.n_rows(), cfg.data_dir().display()))?;
    finish(cfg, "synth")?;
    Ok(files)
}

pub fn cmd_train(cfg: &RunConfig) -> Result<(), Failure> {
    let data = load_data(cfg)?;
    for &task in &cfg.tasks {
        let set = cfg.models.for_task(task)?;
        let td = data.for_task(cfg, task)?;
        let p = prepare(cfg, &td, task, true)?;
        let k = td.labels.n_classes;
        let singles = [
            ("logistic_regression", LearnerConfig::Logistic(set.logistic.clone())),
            ("decision_tree", LearnerConfig::Tree(set.tree.clone())),
            ("random_forest", LearnerConfig::Forest(set.forest.clone())),
            ("svm", LearnerConfig::Svm(set.svm.clone())),
        ];
        for (name, learner) in singles {
            let seed = derive_seed(cfg.seed, &format!("train/{}/{name}", task.name()));
            let model = learner.fit(&p.x_fit, &p.y_fit.labels, k, seed)?;
            write_json_compact(&model_path(cfg, task, name), &model)?;
            log_line(out_dir(cfg), "train", &format!("{}: {name} fitted", task.name()))?;
        }
        let (mut stack, bases) = fit_ensemble(cfg, &set, task, &p.x_fit, &p.y_fit)?;
        for (name, model) in BASE_NAMES.iter().zip(&bases) {
            write_json_compact(&model_path(cfg, task, name), model)?;
        }
        if stack.inference == Inference::Refit {
            // fold models only feed the out-of-fold features, which are kept
            stack.fold_models.clear();
        }
        let mut text = stack.to_json()?;
        text.push('\n');
        write_text(&model_path(cfg, task, "etb"), &text)?;
        log_line(out_dir(cfg), "train", &format!("{}: stacked ensemble fitted", task.name()))?;
        write_json_compact(&model_path(cfg, task, "preprocessor"), &p.preprocessor)?;
        write_json(&model_path(cfg, task, "params"), &params_echo(cfg, &set, task))?;
        write_json(&split_path(cfg, task), &p.record)?;
        write_json(&audit_path(cfg, task), &p.audit)?;
    }
    finish(cfg, "train")
}

// ---------------------------------------------------------------------------
// Tuning
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneSummary {
    pub task: Task,
    pub scoring: tristack::tune::Scoring,
    pub best_score: f64,
    pub best_params: BTreeMap<String, Value>,
    pub best_config: LearnerConfig,
    pub n_candidates: usize,
}

pub fn tune_paths(cfg: &RunConfig) -> (PathBuf, PathBuf) {
    let dir = cfg.output.dir.join("tune");
    let t = cfg.tune.task.name();
    (dir.join(format!("{t}_best.json")), dir.join(format!("{t}_scores.csv")))
}

pub fn cmd_tune(cfg: &RunConfig) -> Result<TuneSummary, Failure> {
    let data = load_data(cfg)?;
    let task = cfg.tune.task;
    let td = data.for_task(cfg, task)?;
    // cross-validation folds see raw training rows; oversampling inside a
    // fold would leak synthetic neighbours of its held-out rows
    let p = prepare(cfg, &td, task, false)?;
    let mut grid = cfg.tune.grid.resolve()?;
    grid.seed = derive_seed(cfg.seed, &format!("tune/{}", task.name()));
    let result = random_grid_search(&p.x_train, &p.y_train, &grid)?;
    let summary = TuneSummary {
        task,
        scoring: result.scoring,
        best_score: result.best_score,
        best_params: result.best_params().iter().cloned().collect(),
        best_config: result.best_config.clone(),
        n_candidates: result.candidates.len(),
    };
    let (best, scores) = tune_paths(cfg);
    write_json(&best, &summary)?;
    write_text(&scores, &result.to_csv()?)?;
    log_line(out_dir(cfg), "tune", &format!("{}: {} candidates, best {:.4}", task.name(), summary.n_candidates, summary.best_score))?;
    finish(cfg, "tune")?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

pub fn report_path(cfg: &RunConfig, task: Task, ext: &str) -> PathBuf {
    cfg.output.dir.join("reports").join(format!("{}.{ext}", task.name()))
}

fn test_matrix(cfg: &RunConfig, data: &TaskData, task: Task, plan: &SplitPlan) -> Result<(Matrix, Preprocessor), Failure> {
    let pre: Preprocessor = read_json(&model_path(cfg, task, "preprocessor"))?;
    let x = pre.transform(&data.table.select_rows(&plan.test_indices))?;
    Ok((x, pre))
}

/// Preprocessed held-out rows and their labels for a trained task.
pub fn test_set(cfg: &RunConfig, data: &Data, task: Task) -> Result<(Matrix, LabelVector), Failure> {
    let td = data.for_task(cfg, task)?;
    let (plan, _) = verified_split(cfg, &td, task)?;
    let (x, _) = test_matrix(cfg, &td, task, &plan)?;
    Ok((x, td.labels.select(&plan.test_indices)))
}

pub fn cmd_evaluate(cfg: &RunConfig) -> Result<Vec<ComparisonTable>, Failure> {
    let data = load_data(cfg)?;
    let mut tables = Vec::new();
    for &task in &cfg.tasks {
        let (x_test, y_test) = test_set(cfg, &data, task)?;
        let seed = derive_seed(cfg.seed, &format!("eval/{}", task.name()));
        let mut rows: Vec<(String, MetricReport)> = Vec::new();
        for (name, label) in MODELS {
            let proba = load_model(cfg, task, name)?.predict_proba(&x_test)?;
            rows.push((label.to_string(), evaluate(&y_test.labels, &proba, &cfg.eval, seed)?));
        }
        let table = ComparisonTable {
            task: task.name().to_string(),
            rows,
        };
        write_text(&report_path(cfg, task, "csv"), &table.to_csv()?)?;
        write_text(&report_path(cfg, task, "txt"), &table.to_text())?;
        write_json(&report_path(cfg, task, "json"), &table)?;
        log_line(out_dir(cfg), "evaluate", &format!("{}: {} test rows", task.name(), y_test.len()))?;
        tables.push(table);
    }
    finish(cfg, "evaluate")?;
    Ok(tables)
}

// ---------------------------------------------------------------------------
// Explanation
// ---------------------------------------------------------------------------

/// Positions (into the test partition) of the rows to explain: all of them,
/// or a seeded sorted subset of `max_rows`.
pub fn explain_rows(n_test: usize, max_rows: usize, seed: u64) -> Vec<usize> {
    if n_test <= max_rows {
        return (0..n_test).collect();
    }
    let mut rows = rand::seq::index::sample(&mut seeded(seed), n_test, max_rows).into_vec();
    rows.sort_unstable();
    rows
}

/// Writes one attribution view; returns its full ranking.
fn write_view(
    cfg: &RunConfig,
    dir: &Path,
    label: &str,
    shap: &ShapValues,
    x: &Matrix,
    row_ids: &[u64],
    names: &[String],
    raw: Option<&[f64]>,
) -> Result<Vec<RankEntry>, Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    write_shap_csv_file(dir.join("shap_values.csv"), shap, x, row_ids, names)?;
    let full = summarize(shap, x, names, names.len())?;
    write_text(&dir.join("ranking.csv"), &ranking_csv(&full)?)?;
    write_json(&dir.join("ranking.json"), &full.ranking)?;
    let top = summarize(shap, x, names, cfg.explain.top_n)?;
    render_svg(Plot::Bar(&top), &format!("{label}: mean |SHAP|"), dir.join("summary.svg"))?;
    render_svg(Plot::Beeswarm(&top), &format!("{label}: SHAP values"), dir.join("beeswarm.svg"))?;
    if let Some(raw) = raw {
        let rows: Vec<usize> = (0..cfg.explain.decision_rows.min(raw.len())).collect();
        let paths = decision_paths(shap, names, &rows, raw)?;
        render_svg(Plot::Decision(&paths), &format!("{label}: decision paths"), dir.join("decision.svg"))?;
    }
    Ok(full.ranking)
}

/// Explains the class-`K−1` output of a stack and of its level-wise base
/// learner on the same rows.
fn explain_stack(cfg: &RunConfig, task: Task, stack: &StackModel, x: &Matrix, row_ids: &[u64], names: &[String]) -> Result<(), Failure> {
    let k = stack.n_classes - 1;
    let xgb = match stack.full_models.first() {
        Some(m) => AnyModel::Boost(m.clone()),
        None => load_single(cfg, task, "xgboost")?,
    };
    let explainer = Explainer::new(&xgb, k, &column_means(x))?;
    let shap = explain_matrix(&explainer, x, k)?;
    let raw: Vec<f64> = x.rows_iter().map(|r| explainer.raw_output(r)).collect();
    write_view(cfg, &explain_dir(cfg, task, "xgboost"), &format!("{} (XGB)", task.name()), &shap, x, row_ids, names, Some(&raw))?;
    let shap = stack_shap_matrix(stack, x, k)?;
    write_view(cfg, &explain_dir(cfg, task, "etb"), &format!("{} (ETB)", task.name()), &shap, x, row_ids, names, None)?;
    log_line(out_dir(cfg), "explain", &format!("{}: {} rows explained", task.name(), x.n_rows()))
}

pub fn cmd_explain(cfg: &RunConfig) -> Result<(), Failure> {
    let data = load_data(cfg)?;
    for &task in &cfg.tasks {
        let td = data.for_task(cfg, task)?;
        let (plan, record) = verified_split(cfg, &td, task)?;
        let (x_test, pre) = test_matrix(cfg, &td, task, &plan)?;
        let rows = explain_rows(x_test.n_rows(), cfg.explain.max_rows, derive_seed(cfg.seed, &format!("explain/{}", task.name())));
        let x = x_test.select_rows(&rows);
        let ids: Vec<u64> = rows.iter().map(|&r| record.test_row_ids[r]).collect();
        let names = pre.feature_names();
        let stack = load_stack(cfg, task)?;
        explain_stack(cfg, task, &stack, &x, &ids, &names)?;

        if cfg.explain.binary_recode && task == Task::MessageMulticlass {
            let set = cfg.models.for_task(Task::MessageBinary)?;
            let binary = recode_binary_engagement(&td.labels)?;
            let y_train = binary.select(&plan.train_indices);
            let x_train = pre.transform(&td.table.select_rows(&plan.train_indices))?;
            let (x_fit, y_fit) = if cfg.sampling.smote {
                smote(&x_train, &y_train, cfg.sampling.smote_k, derive_seed(cfg.seed, "smote/message_binary"))?
            } else {
                (x_train, y_train)
            };
            let (stack, _) = fit_ensemble(cfg, &set, Task::MessageBinary, &x_fit, &y_fit)?;
            explain_stack(cfg, Task::MessageBinary, &stack, &x, &ids, &names)?;
        }
    }
    finish(cfg, "explain")
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

/// How many planted effects a ranking recovers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recovery {
    pub planted: usize,
    /// Planted features found among the top `top` of their outcome's ranking.
    pub in_top: usize,
    /// Planted features whose value-attribution correlation has the planted sign.
    pub sign_matches: usize,
    pub details: Vec<RecoveryItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryItem {
    pub feature: String,
    pub outcome: Outcome,
    pub sign: i8,
    /// 1-based rank, `None` when the feature is absent from the ranking.
    pub rank: Option<usize>,
    pub value_correlation: Option<f64>,
}

pub fn outcome_of(task: Task) -> Outcome {
    match task {
        Task::LoginBinary => Outcome::Login,
        Task::MessageMulticlass | Task::MessageBinary => Outcome::Message,
    }
}

/// Scores rankings against the planted effects; `rankings` maps each
/// outcome to its full mean-|φ| ranking.
pub fn score_recovery(truth: &GroundTruth, rankings: &BTreeMap<Outcome, Vec<RankEntry>>, top: usize) -> Recovery {
    let mut details = Vec::new();
    for e in &truth.effects {
        let ranking = rankings.get(&e.outcome).map(Vec::as_slice).unwrap_or(&[]);
        let pos = ranking.iter().position(|r| r.name == e.feature);
        details.push(RecoveryItem {
            feature: e.feature.clone(),
            outcome: e.outcome,
            sign: e.sign,
            rank: pos.map(|p| p + 1),
            value_correlation: pos.map(|p| ranking[p].value_correlation),
        });
    }
    Recovery {
        planted: details.len(),
        in_top: details.iter().filter(|d| d.rank.is_some_and(|r| r <= top)).count(),
        sign_matches: details
            .iter()
            .filter(|d| d.value_correlation.is_some_and(|c| c != 0.0 && c.signum() == f64::from(d.sign)))
            .count(),
        details,
    }
}

pub fn read_ranking(cfg: &RunConfig, task: Task, view: &str) -> Result<Vec<RankEntry>, Failure> {
    read_json(&explain_dir(cfg, task, view).join("ranking.json"))
}

/// Recovery of the `etb` view against the cohort's ground truth, when both
/// exist.
pub fn recovery(cfg: &RunConfig, top: usize) -> Result<Option<Recovery>, Failure> {
    let truth_path = CohortFiles::in_dir(&cfg.data_dir()).truth;
    if !truth_path.is_file() {
        return Ok(None);
    }
    let truth = read_ground_truth(&truth_path)?;
    let mut rankings = BTreeMap::new();
    for &task in &cfg.tasks {
        match read_ranking(cfg, task, "etb") {
            Ok(r) => {
                rankings.insert(outcome_of(task), r);
            }
            Err(_) => return Ok(None),
        }
    }
    Ok(Some(score_recovery(&truth, &rankings, top)))
}

pub fn cmd_report(cfg: &RunConfig) -> Result<String, Failure> {
    let mut md = String::from("# Run report\n\n");
    md.push_str(&format!("Run seed: {}\n\n", cfg.seed));
    let mut tasks = cfg.tasks.clone();
    if cfg.explain.binary_recode {
        tasks.push(Task::MessageBinary);
    }
    for &task in &tasks {
        md.push_str(&format!("## {}\n\n", task.name()));
        let txt = report_path(cfg, task, "txt");
        match std::fs::read_to_string(&txt) {
            Ok(t) => md.push_str(&format!("```\n{t}```\n\n")),
            Err(_) if task != Task::MessageBinary => md.push_str("Evaluation not run.\n\n"),
            Err(_) => {}
        }
        for view in VIEWS {
            let Ok(ranking) = read_ranking(cfg, task, view) else {
                continue;
            };
            md.push_str(&format!("Top features ({view}):\n\n| Rank | Feature | mean abs SHAP | direction |\n|---:|---|---:|---|\n"));
            for (i, r) in ranking.iter().take(cfg.explain.top_n).enumerate() {
                let dir = if r.value_correlation > 0.0 {
                    "+"
                } else if r.value_correlation < 0.0 {
                    "-"
                } else {
                    "0"
                };
                md.push_str(&format!("| {} | {} | {:.4} | {dir} |\n", i + 1, r.name, r.mean_abs));
            }
            md.push('\n');
        }
    }
    let (best, _) = tune_paths(cfg);
    if let Ok(summary) = read_json::<TuneSummary>(&best) {
        md.push_str(&format!("## Tuning ({})\n\nBest {:?} score {:.4} over {} candidates:\n\n", summary.task.name(), summary.scoring, summary.best_score, summary.n_candidates));
        for (k, v) in &summary.best_params {
            md.push_str(&format!("- `{k}` = {v}\n"));
        }
        md.push('\n');
    }
    if let Some(rec) = recovery(cfg, 5)? {
        md.push_str(&format!(
            "## Planted-signal recovery\n\n{} of {} planted features in the top 5; {} with the planted direction.\n\n",
            rec.in_top, rec.planted, rec.sign_matches
        ));
        for d in &rec.details {
            let rank = d.rank.map_or("-".to_string(), |r| r.to_string());
            md.push_str(&format!("- {} ({:?}, sign {:+}): rank {rank}\n", d.feature, d.outcome, d.sign));
        }
        md.push('\n');
    }
    write_text(&cfg.output.dir.join("report.md"), &md)?;
    finish(cfg, "report")?;
    Ok(md)
}
