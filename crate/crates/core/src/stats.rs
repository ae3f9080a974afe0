//! Corpus diagnostics: Self-BLEU, wh-word ratios, lengths, frequent lemmas
//! and per-topic retention.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{PassageStore, QAPair, Triplet};
use crate::metrics::{self_bleu, BleuConfig, MetricError};
use crate::textproc::{token_spans, Analyzer, TextError, WhLexicon};

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("{0} is empty")]
    Empty(&'static str),
    #[error("triplet refers to unknown passage `{0}`")]
    UnknownPassage(String),
    #[error("invalid category rules: {0}")]
    Rules(String),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl StatsError {
    pub fn provider_error(&self) -> Option<&crate::providers::ProviderError> {
        match self {
            StatsError::Text(e) => e.provider_error(),
            StatsError::Metric(e) => e.provider_error(),
            _ => None,
        }
    }
}

/// Fraction of questions whose lemmas include each lexicon word. A question
/// counts once per word however often the word repeats.
pub fn wh_ratios(
    questions: &[&str],
    lexicon: &WhLexicon,
    analyzer: &Analyzer,
) -> Result<BTreeMap<String, f64>, StatsError> {
    if questions.is_empty() {
        return Err(StatsError::Empty("question set"));
    }
    let hits: Vec<BTreeSet<String>> = questions
        .par_iter()
        .map(|q| {
            Ok(analyzer
                .lemmas(q)?
                .into_iter()
                .filter(|l| lexicon.contains(l))
                .collect())
        })
        .collect::<Result<_, TextError>>()?;
    let mut counts: BTreeMap<&str, usize> = lexicon.words.iter().map(|w| (w.as_str(), 0)).collect();
    for set in &hits {
        for w in set {
            *counts.get_mut(w.as_str()).expect("lexicon word") += 1;
        }
    }
    let n = questions.len() as f64;
    Ok(counts.into_iter().map(|(w, c)| (w.to_string(), c as f64 / n)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthStats {
    pub pairs: usize,
    pub avg_q_chars: f64,
    pub avg_q_tokens: f64,
    pub avg_a_chars: f64,
    pub avg_a_tokens: f64,
}

/// Mean character and token lengths of questions and answers.
pub fn length_stats(pairs: &[&QAPair]) -> Result<LengthStats, StatsError> {
    if pairs.is_empty() {
        return Err(StatsError::Empty("pair set"));
    }
    let sums = pairs
        .par_iter()
        .map(|p| {
            [
                p.question.chars().count(),
                token_spans(&p.question).count(),
                p.answer.chars().count(),
                token_spans(&p.answer).count(),
            ]
        })
        .reduce(|| [0; 4], |a, b| [a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3]]);
    let n = pairs.len() as f64;
    Ok(LengthStats {
        pairs: pairs.len(),
        avg_q_chars: sums[0] as f64 / n,
        avg_q_tokens: sums[1] as f64 / n,
        avg_a_chars: sums[2] as f64 / n,
        avg_a_tokens: sums[3] as f64 / n,
    })
}

/// The `k` most frequent lemmas, descending by count, ties in lexicographic
/// order. Lemmas in `stopwords` are skipped.
pub fn top_lemmas(
    strings: &[&str],
    k: usize,
    analyzer: &Analyzer,
    stopwords: &BTreeSet<String>,
) -> Result<Vec<(String, usize)>, StatsError> {
    if k == 0 {
        return Ok(Vec::new());
    }
    let counts = strings
        .par_iter()
        .map(|s| -> Result<HashMap<String, usize>, TextError> {
            let mut m = HashMap::new();
            for l in analyzer.lemmas(s)? {
                if !stopwords.contains(&l) {
                    *m.entry(l).or_insert(0) += 1;
                }
            }
            Ok(m)
        })
        .try_reduce(HashMap::new, |mut a, b| {
            for (l, c) in b {
                *a.entry(l).or_insert(0) += c;
            }
            Ok(a)
        })?;
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(k);
    Ok(ranked)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryGroup {
    pub name: String,
    /// Case-insensitive substrings of category names.
    pub patterns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryRules {
    pub groups: Vec<CategoryGroup>,
}

impl Default for CategoryRules {
    fn default() -> Self {
        let g = |name: &str, pats: &[&str]| CategoryGroup {
            name: name.into(),
            patterns: pats.iter().map(|p| p.to_string()).collect(),
        };
        CategoryRules {
            groups: vec![
                g("history", &["истори", "войн", "сражени", "битв", "революци"]),
                g("biographies", &["родившиеся", "умершие", "персоналии"]),
                g("plants", &["растени", "флора", "деревья", "травы"]),
                g("technical", &["техник", "технолог", "оборудовани", "программное обеспечение", "изобретени"]),
                g("geography", &["географи", "населённые пункты", "реки", "озёра", "горы", "города"]),
                g("mathematics", &["математи", "теорем", "алгебр", "геометри"]),
                g("sports", &["спорт", "футбол", "хокке", "олимпийск", "чемпионат"]),
                g("actors", &["актёры", "актеры", "актрисы"]),
                g("movies", &["фильмы", "кинофильм", "телесериалы"]),
            ],
        }
    }
}

impl CategoryRules {
    pub fn from_toml(text: &str) -> Result<Self, StatsError> {
        toml::from_str(text).map_err(|e| StatsError::Rules(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, StatsError> {
        CategoryRules::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Names of the groups any of `categories` falls into.
    pub fn groups_of<'a>(&'a self, categories: &[String]) -> Vec<&'a str> {
        let lower: Vec<String> = categories.iter().map(|c| c.to_lowercase()).collect();
        self.groups
            .iter()
            .filter(|g| {
                g.patterns.iter().any(|p| {
                    let p = p.to_lowercase();
                    lower.iter().any(|c| c.contains(&p))
                })
            })
            .map(|g| g.name.as_str())
            .collect()
    }
}

/// Survivor fraction per category group. Triplets without a verdict count
/// as survivors; groups that match nothing are absent.
pub fn category_retention(
    triplets: &[Triplet],
    store: &PassageStore,
    rules: &CategoryRules,
) -> Result<BTreeMap<String, f64>, StatsError> {
    let mut tally: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    let mut memo: HashMap<&str, Vec<&str>> = HashMap::new();
    for t in triplets {
        let groups = match memo.get(t.passage_id.as_str()) {
            Some(g) => g,
            None => {
                let p = store
                    .get(&t.passage_id)
                    .ok_or_else(|| StatsError::UnknownPassage(t.passage_id.clone()))?;
                memo.entry(t.passage_id.as_str()).or_insert(rules.groups_of(&p.categories))
            }
        };
        for g in groups {
            let e = tally.entry(g).or_insert((0, 0));
            e.0 += usize::from(t.survived());
            e.1 += 1;
        }
    }
    Ok(tally
        .into_iter()
        .map(|(g, (s, n))| (g.to_string(), s as f64 / n as f64))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiagnosticsConfig {
    pub self_bleu_sample: usize,
    pub seed: u64,
    pub top_k: usize,
    pub bleu: BleuConfig,
    pub lexicon: WhLexicon,
    pub rules: CategoryRules,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            self_bleu_sample: 5000,
            seed: 0,
            top_k: 20,
            bleu: BleuConfig::default(),
            lexicon: WhLexicon::default(),
            rules: CategoryRules::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub triplets: usize,
    pub survivors: usize,
    /// `None` when fewer than two questions survive.
    pub self_bleu_median: Option<f64>,
    pub wh_ratios: BTreeMap<String, f64>,
    pub avg_q_chars: f64,
    pub avg_q_tokens: f64,
    pub avg_a_chars: f64,
    pub avg_a_tokens: f64,
    pub top_lemmas_q: Vec<(String, usize)>,
    pub top_lemmas_a: Vec<(String, usize)>,
    pub per_category_retention: BTreeMap<String, f64>,
}

/// Diagnostics over the surviving triplets; retention uses all of them.
pub fn diversity_report(
    triplets: &[Triplet],
    store: &PassageStore,
    config: &DiagnosticsConfig,
    analyzer: &Analyzer,
) -> Result<DiagnosticsReport, StatsError> {
    let survivors: Vec<&Triplet> = triplets.iter().filter(|t| t.survived()).collect();
    if survivors.is_empty() {
        return Err(StatsError::Empty("survivor set"));
    }
    let questions: Vec<&str> = survivors.iter().map(|t| t.pair.question.as_str()).collect();
    let answers: Vec<&str> = survivors.iter().map(|t| t.pair.answer.as_str()).collect();
    let owned: Vec<String> = questions.iter().map(|q| q.to_string()).collect();
    let self_bleu_median = if owned.len() < 2 {
        log::warn!("fewer than 2 surviving questions; Self-BLEU omitted");
        None
    } else {
        Some(self_bleu(&owned, config.self_bleu_sample, config.seed, analyzer, &config.bleu)?)
    };
    let pairs: Vec<&QAPair> = survivors.iter().map(|t| &t.pair).collect();
    let lengths = length_stats(&pairs)?;
    Ok(DiagnosticsReport {
        triplets: triplets.len(),
        survivors: survivors.len(),
        self_bleu_median,
        wh_ratios: wh_ratios(&questions, &config.lexicon, analyzer)?,
        avg_q_chars: lengths.avg_q_chars,
        avg_q_tokens: lengths.avg_q_tokens,
        avg_a_chars: lengths.avg_a_chars,
        avg_a_tokens: lengths.avg_a_tokens,
        top_lemmas_q: top_lemmas(&questions, config.top_k, analyzer, &config.lexicon.words)?,
        top_lemmas_a: top_lemmas(&answers, config.top_k, analyzer, &config.lexicon.words)?,
        per_category_retention: category_retention(triplets, store, &config.rules)?,
    })
}
