//! Fine-tuning experiments over SQuAD-style data: sampling, delegated
//! training, EM/F1 scoring and result tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{self, BufRead, BufWriter};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{write_jsonl, PassageStore, Triplet};
use crate::metrics::squad_em_f1;
use crate::providers::{PredictItem, TrainRequest, Trainer};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid experiment plan: {0}")]
    Plan(String),
    #[error("sample of {size} requested from {available} items")]
    SampleTooLarge { size: usize, available: usize },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquadItem {
    pub id: String,
    pub context: String,
    pub question: String,
    pub answers: Vec<String>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum AnswerField {
    Text(String),
    Span { text: String },
}

impl AnswerField {
    fn into_text(self) -> String {
        match self {
            AnswerField::Text(t) | AnswerField::Span { text: t } => t,
        }
    }
}

#[derive(Deserialize)]
struct LooseItem {
    id: String,
    context: String,
    question: String,
    answers: Vec<AnswerField>,
}

#[derive(Deserialize)]
struct NestedFile {
    data: Vec<NestedArticle>,
}

#[derive(Deserialize)]
struct NestedArticle {
    paragraphs: Vec<NestedParagraph>,
}

#[derive(Deserialize)]
struct NestedParagraph {
    context: String,
    qas: Vec<NestedQa>,
}

#[derive(Deserialize)]
struct NestedQa {
    id: String,
    question: String,
    #[serde(default)]
    answers: Vec<AnswerField>,
}

/// Loads either a nested SQuAD JSON file (`{"data": [...]}`) or JSONL with
/// one `{id, context, question, answers}` object per line. Answers may be
/// plain strings or `{text, ...}` objects.
pub fn load_squad(path: &Path) -> Result<Vec<SquadItem>, EvalError> {
    let parse_err = |message: String| EvalError::Parse {
        path: path.to_path_buf(),
        message,
    };
    let text = std::fs::read_to_string(path).map_err(|e| io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    if let Ok(nested) = serde_json::from_str::<NestedFile>(&text) {
        let mut out = Vec::new();
        for art in nested.data {
            for par in art.paragraphs {
                for qa in par.qas {
                    out.push(SquadItem {
                        id: qa.id,
                        context: par.context.clone(),
                        question: qa.question,
                        answers: qa.answers.into_iter().map(AnswerField::into_text).collect(),
                    });
                }
            }
        }
        return Ok(out);
    }
    let mut out = Vec::new();
    for (i, line) in text.as_bytes().lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item: LooseItem =
            serde_json::from_str(&line).map_err(|e| parse_err(format!("line {}: {e}", i + 1)))?;
        out.push(SquadItem {
            id: item.id,
            context: item.context,
            question: item.question,
            answers: item.answers.into_iter().map(AnswerField::into_text).collect(),
        });
    }
    Ok(out)
}

/// Surviving triplets as SQuAD items with ids `passage#gen_index`.
pub fn squad_from_triplets(triplets: &[Triplet], store: &PassageStore) -> Result<Vec<SquadItem>, EvalError> {
    triplets
        .iter()
        .filter(|t| t.survived())
        .map(|t| {
            let p = store
                .get(&t.passage_id)
                .ok_or_else(|| EvalError::Plan(format!("unknown passage `{}`", t.passage_id)))?;
            Ok(SquadItem {
                id: format!("{}#{}", t.passage_id, t.pair.gen_index),
                context: p.text.clone(),
                question: t.pair.question.clone(),
                answers: vec![t.pair.answer.clone()],
            })
        })
        .collect()
}

/// `replicas` samples of `size` distinct indices below `available`;
/// replica `r` is drawn with seed `seed + r`.
pub fn draw_samples(available: usize, size: usize, replicas: u32, seed: u64) -> Result<Vec<Vec<usize>>, EvalError> {
    if size > available {
        return Err(EvalError::SampleTooLarge { size, available });
    }
    Ok((0..replicas)
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(u64::from(r)));
            rand::seq::index::sample(&mut rng, available, size).into_vec()
        })
        .collect())
}

/// Mean EM and F1 in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub em: f64,
    pub f1: f64,
    pub items: usize,
}

/// Scores predictions against golds. Gold ids without a prediction score 0;
/// predictions for unknown ids are ignored.
pub fn score_prediction_file(predictions: &BTreeMap<String, String>, golds: &BTreeMap<String, Vec<String>>) -> Scores {
    let extra = predictions.keys().filter(|k| !golds.contains_key(*k)).count();
    if extra > 0 {
        log::warn!("{extra} predictions have no gold answer and are ignored");
    }
    let mut missing = 0;
    let (mut em, mut f1) = (0.0, 0.0);
    for (id, answers) in golds {
        match predictions.get(id) {
            Some(p) => {
                let s = squad_em_f1(p, answers);
                em += s.em;
                f1 += s.f1;
            }
            None => missing += 1,
        }
    }
    if missing > 0 {
        log::warn!("{missing} gold items have no prediction and score 0");
    }
    let n = golds.len().max(1) as f64;
    Scores {
        em: 100.0 * em / n,
        f1: 100.0 * f1 / n,
        items: golds.len(),
    }
}

pub fn gold_map(items: &[SquadItem]) -> BTreeMap<String, Vec<String>> {
    items.iter().map(|i| (i.id.clone(), i.answers.clone())).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Exp1SingleFinetune,
    Exp2SequentialFinetune,
    Exp3OwnDevFolds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentPlan {
    pub kind: ExperimentKind,
    pub sample_sizes: Vec<usize>,
    pub replicas: u32,
    pub folds: usize,
    pub fold_dev_size: usize,
    pub exp3_sample_size: usize,
    pub exp3_epochs: u32,
    pub exp2_base_sizes: Vec<usize>,
    pub exp2_epochs: Vec<u32>,
    /// Passed to the trainer as is; `epochs` is overridden where an
    /// experiment fixes it.
    pub trainer_params: serde_json::Value,
    pub seed: u64,
    /// Items per predict request.
    pub predict_batch: usize,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        ExperimentPlan {
            kind: ExperimentKind::Exp1SingleFinetune,
            sample_sizes: vec![50_000, 100_000, 300_000],
            replicas: 2,
            folds: 5,
            fold_dev_size: 10_000,
            exp3_sample_size: 110_000,
            exp3_epochs: 2,
            exp2_base_sizes: vec![100_000, 300_000],
            exp2_epochs: vec![1, 2, 3],
            trainer_params: serde_json::json!({"epochs": 3, "learning_rate": 2e-5, "weight_decay": 0.01}),
            seed: 0,
            predict_batch: 1000,
        }
    }
}

impl ExperimentPlan {
    pub fn from_toml(text: &str) -> Result<Self, EvalError> {
        toml::from_str(text).map_err(|e| EvalError::Plan(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path).map_err(|e| io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
        ExperimentPlan::from_toml(&text)
    }

    pub fn validate(&self, dataset_len: usize) -> Result<(), EvalError> {
        let fail = |m: String| Err(EvalError::Plan(m));
        if self.replicas == 0 {
            return fail("replicas must be at least 1".into());
        }
        if self.predict_batch == 0 {
            return fail("predict_batch must be at least 1".into());
        }
        if !self.trainer_params.is_object() {
            return fail("trainer_params must be a table".into());
        }
        let sizes: &[usize] = match self.kind {
            ExperimentKind::Exp1SingleFinetune => &self.sample_sizes,
            ExperimentKind::Exp2SequentialFinetune => &self.exp2_base_sizes,
            ExperimentKind::Exp3OwnDevFolds => std::slice::from_ref(&self.exp3_sample_size),
        };
        for &s in sizes {
            if s == 0 || s > dataset_len {
                return fail(format!("sample size {s} not in 1..={dataset_len}"));
            }
        }
        if self.kind == ExperimentKind::Exp3OwnDevFolds {
            if self.folds == 0 || self.fold_dev_size == 0 {
                return fail("folds and fold_dev_size must be positive".into());
            }
            if self.folds * self.fold_dev_size > self.exp3_sample_size {
                return fail(format!(
                    "{} folds of {} exceed the sample of {}",
                    self.folds, self.fold_dev_size, self.exp3_sample_size
                ));
            }
            if self.folds * self.fold_dev_size == self.exp3_sample_size && self.folds == 1 {
                return fail("a single fold covering the sample leaves nothing to train on".into());
            }
        }
        if self.kind == ExperimentKind::Exp2SequentialFinetune && self.exp2_epochs.is_empty() {
            return fail("exp2_epochs is empty".into());
        }
        Ok(())
    }

    fn params_with_epochs(&self, epochs: Option<u32>) -> serde_json::Value {
        let mut p = self.trainer_params.clone();
        if let (Some(e), Some(obj)) = (epochs, p.as_object_mut()) {
            obj.insert("epochs".into(), e.into());
        }
        p
    }
}

/// One training run's scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunScores {
    pub run: u32,
    pub dev: Option<Scores>,
    pub test: Option<Scores>,
    pub own_dev: Option<Scores>,
    pub error: Option<String>,
}

/// One row of a result table. Averages are means over runs and are absent
/// when any run failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub label: String,
    pub em_dev: Option<f64>,
    pub f1_dev: Option<f64>,
    pub em_test: Option<f64>,
    pub f1_test: Option<f64>,
    pub em_own_dev: Option<f64>,
    pub f1_own_dev: Option<f64>,
    pub runs: Vec<RunScores>,
    pub failed: bool,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = xs.collect();
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

impl EvalResult {
    fn from_runs(label: String, runs: Vec<RunScores>) -> Self {
        let failed = runs.iter().any(|r| r.error.is_some());
        let avg = |f: &dyn Fn(&RunScores) -> Option<f64>| {
            if failed {
                None
            } else {
                runs.iter().map(f).collect::<Option<Vec<f64>>>().and_then(|v| mean(v.into_iter()))
            }
        };
        EvalResult {
            em_dev: avg(&|r| r.dev.map(|s| s.em)),
            f1_dev: avg(&|r| r.dev.map(|s| s.f1)),
            em_test: avg(&|r| r.test.map(|s| s.em)),
            f1_test: avg(&|r| r.test.map(|s| s.f1)),
            em_own_dev: avg(&|r| r.own_dev.map(|s| s.em)),
            f1_own_dev: avg(&|r| r.own_dev.map(|s| s.f1)),
            label,
            runs,
            failed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub rows: Vec<EvalResult>,
}

impl ResultTable {
    /// Aligned plain-text rendering.
    pub fn render_text(&self) -> String {
        let header = ["setup", "EM dev", "F1 dev", "EM test", "F1 test", "EM own", "F1 own"];
        let cell = |v: Option<f64>, failed: bool| match v {
            Some(x) => format!("{x:.2}"),
            None if failed => "failed".into(),
            None => "-".into(),
        };
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.label.clone(),
                    cell(r.em_dev, r.failed),
                    cell(r.f1_dev, r.failed),
                    cell(r.em_test, r.failed),
                    cell(r.f1_test, r.failed),
                    cell(r.em_own_dev, r.failed),
                    cell(r.f1_own_dev, r.failed),
                ]
            })
            .collect();
        let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
        for r in &rows {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.chars().count());
            }
        }
        let mut out = String::new();
        let mut line = |cells: Vec<String>| {
            let parts: Vec<String> = cells
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, w))| {
                    if i == 0 {
                        format!("{c:<w$}")
                    } else {
                        format!("{c:>w$}")
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(header.iter().map(|h| h.to_string()).collect());
        for r in rows {
            line(r);
        }
        out
    }
}

/// External evaluation sets plus the optional second training set used for
/// the baseline and sequential fine-tuning.
pub struct EvalSets {
    pub dev: Vec<SquadItem>,
    pub test: Vec<SquadItem>,
    pub second_train: Option<Vec<SquadItem>>,
}

/// Sample indices of each exp3 run's dev fold and train split.
pub fn exp3_folds(sample: &[usize], folds: usize, dev_size: usize) -> Vec<(Vec<usize>, Vec<usize>)> {
    (0..folds)
        .map(|k| {
            let (lo, hi) = (k * dev_size, (k + 1) * dev_size);
            let dev = sample[lo..hi].to_vec();
            let train = sample[..lo].iter().chain(&sample[hi..]).copied().collect();
            (dev, train)
        })
        .collect()
}

struct Runner<'a> {
    plan: &'a ExperimentPlan,
    trainer: &'a dyn Trainer,
    sets: &'a EvalSets,
    work_dir: &'a Path,
}

impl Runner<'_> {
    fn write_items<'b>(&self, name: &str, items: impl IntoIterator<Item = &'b SquadItem>) -> Result<(String, usize), String> {
        let path = self.work_dir.join(format!("{name}.jsonl"));
        let file = std::fs::File::create(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        let n = write_jsonl(items, &mut BufWriter::new(file)).map_err(|e| e.to_string())?;
        Ok((path.to_string_lossy().into_owned(), n))
    }

    fn train(&self, name: &str, items: Vec<&SquadItem>, epochs: Option<u32>, base: Option<String>) -> Result<String, String> {
        let (samples_ref, sample_count) = self.write_items(name, items)?;
        self.trainer
            .train(&TrainRequest {
                samples_ref,
                sample_count,
                params: self.plan.params_with_epochs(epochs),
                base,
            })
            .map_err(|e| e.to_string())
    }

    fn score(&self, handle: &str, items: &[&SquadItem]) -> Result<Scores, String> {
        let mut preds = BTreeMap::new();
        for chunk in items.chunks(self.plan.predict_batch) {
            let req: Vec<PredictItem> = chunk
                .iter()
                .map(|i| PredictItem {
                    id: i.id.clone(),
                    context: i.context.clone(),
                    question: i.question.clone(),
                })
                .collect();
            let answers = self.trainer.predict(handle, &req).map_err(|e| e.to_string())?;
            for (i, a) in chunk.iter().zip(answers) {
                preds.insert(i.id.clone(), a);
            }
        }
        let golds = items.iter().map(|i| (i.id.clone(), i.answers.clone())).collect();
        Ok(score_prediction_file(&preds, &golds))
    }

    fn external(&self, run: u32, handle: Result<String, String>, own: Option<&[&SquadItem]>) -> RunScores {
        let result = handle.and_then(|h| {
            let dev: Vec<&SquadItem> = self.sets.dev.iter().collect();
            let test: Vec<&SquadItem> = self.sets.test.iter().collect();
            Ok((
                self.score(&h, &dev)?,
                self.score(&h, &test)?,
                own.map(|o| self.score(&h, o)).transpose()?,
            ))
        });
        match result {
            Ok((dev, test, own_dev)) => RunScores {
                run,
                dev: Some(dev),
                test: Some(test),
                own_dev,
                error: None,
            },
            Err(e) => {
                log::warn!("run {run} failed: {e}");
                RunScores {
                    run,
                    dev: None,
                    test: None,
                    own_dev: None,
                    error: Some(e),
                }
            }
        }
    }
}

enum Unit {
    Baseline,
    Single(usize),
    Sequential(usize),
    Fold(usize),
}

/// Runs the experiment grid. Independent cells run in parallel on the
/// current rayon pool; rows come back in plan order. A trainer failure
/// marks its row as failed without stopping the others.
pub fn run_experiment(
    plan: &ExperimentPlan,
    dataset: &[SquadItem],
    trainer: &dyn Trainer,
    sets: &EvalSets,
    work_dir: &Path,
) -> Result<ResultTable, EvalError> {
    plan.validate(dataset.len())?;
    std::fs::create_dir_all(work_dir)?;
    let runner = Runner {
        plan,
        trainer,
        sets,
        work_dir,
    };
    let units: Vec<Unit> = match plan.kind {
        ExperimentKind::Exp1SingleFinetune => sets
            .second_train
            .iter()
            .map(|_| Unit::Baseline)
            .chain(plan.sample_sizes.iter().map(|&s| Unit::Single(s)))
            .collect(),
        ExperimentKind::Exp2SequentialFinetune => {
            if sets.second_train.is_none() {
                return Err(EvalError::Plan("sequential fine-tuning needs a second training set".into()));
            }
            plan.exp2_base_sizes.iter().map(|&s| Unit::Sequential(s)).collect()
        }
        ExperimentKind::Exp3OwnDevFolds => (0..plan.folds).map(Unit::Fold).collect(),
    };
    let exp3 = if plan.kind == ExperimentKind::Exp3OwnDevFolds {
        let sample = draw_samples(dataset.len(), plan.exp3_sample_size, 1, plan.seed)?.remove(0);
        exp3_folds(&sample, plan.folds, plan.fold_dev_size)
    } else {
        Vec::new()
    };
    let pick = |idx: &[usize]| -> Vec<&SquadItem> { idx.iter().map(|&i| &dataset[i]).collect() };

    let rows: Vec<Result<Vec<EvalResult>, EvalError>> = units
        .par_iter()
        .map(|unit| -> Result<Vec<EvalResult>, EvalError> {
            Ok(match unit {
                Unit::Baseline => {
                    let second = sets.second_train.as_ref().expect("baseline needs second set");
                    let h = runner.train("baseline", second.iter().collect(), None, None);
                    vec![EvalResult::from_runs("second_train".into(), vec![runner.external(0, h, None)])]
                }
                Unit::Single(size) => {
                    let samples = draw_samples(dataset.len(), *size, plan.replicas, plan.seed)?;
                    let runs = samples
                        .iter()
                        .enumerate()
                        .map(|(r, idx)| {
                            let h = runner.train(&format!("sample_{size}_r{r}"), pick(idx), None, None);
                            runner.external(r as u32, h, None)
                        })
                        .collect();
                    vec![EvalResult::from_runs(format!("sample_{size}"), runs)]
                }
                Unit::Sequential(size) => {
                    let samples = draw_samples(dataset.len(), *size, plan.replicas, plan.seed)?;
                    let second = sets.second_train.as_ref().expect("checked above");
                    let bases: Vec<Result<String, String>> = samples
                        .iter()
                        .enumerate()
                        .map(|(r, idx)| runner.train(&format!("sample_{size}_r{r}"), pick(idx), None, None))
                        .collect();
                    plan.exp2_epochs
                        .iter()
                        .map(|&ep| {
                            let runs = bases
                                .iter()
                                .enumerate()
                                .map(|(r, base)| {
                                    let h = base.clone().and_then(|b| {
                                        runner.train(
                                            &format!("sample_{size}_r{r}_second_{ep}ep"),
                                            second.iter().collect(),
                                            Some(ep),
                                            Some(b),
                                        )
                                    });
                                    runner.external(r as u32, h, None)
                                })
                                .collect();
                            EvalResult::from_runs(format!("sample_{size}+second_{ep}ep"), runs)
                        })
                        .collect()
                }
                Unit::Fold(k) => {
                    let (dev, train) = &exp3[*k];
                    let h = runner.train(&format!("fold_{k}_train"), pick(train), Some(plan.exp3_epochs), None);
                    let own = pick(dev);
                    vec![EvalResult::from_runs(format!("fold_{k}"), vec![runner.external(*k as u32, h, Some(&own))])]
                }
            })
        })
        .collect();
    let mut out = Vec::new();
    for r in rows {
        out.extend(r?);
    }
    Ok(ResultTable {
        kind: plan.kind,
        seed: plan.seed,
        rows: out,
    })
}
