//! The filtration cascade: per-triplet stages in plan order, then
//! near-duplicate removal inside each passage group.

use std::cell::OnceCell;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::io;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusError, FilterVerdict, Passage, PassageStore, QAPair, Triplet};
use crate::metrics::{
    bleu, lemma_overlap, meteor_lite_tokens, rouge_l, word_movers_distance, BleuConfig, MeteorParams,
};
use crate::providers::{Providers, ReaderAnswer};
use crate::textproc::{
    count_interrogatives, extract_entities, levenshtein_similarity, token_levenshtein_similarity,
    Analyzer, Entity, EntityKind, Token, WhLexicon,
};

mod config;

pub use config::{
    DedupUnit, FilterConfig, NgramThresholds, PlannedStage, Stage, StagePlan, UnresolvedPolicy,
    WmdPolarity,
};

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("invalid filter config: {0}")]
    Config(String),
    #[error("triplet refers to unknown passage `{0}`")]
    UnknownPassage(String),
    #[error("triplets of passage `{0}` are not contiguous in the input")]
    NonContiguous(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// Aggregate counts of one filtration run. `per_stage` counts rejections
/// with a resolved score; `unresolved` counts triplets on which a provider
/// failed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub input: usize,
    pub survivors: usize,
    pub per_stage: BTreeMap<Stage, usize>,
    pub unresolved: usize,
}

impl FilterReport {
    fn for_plan(plan: &StagePlan) -> Self {
        FilterReport {
            per_stage: plan.enabled().map(|s| (s, 0)).collect(),
            ..Default::default()
        }
    }

    pub fn merge(&mut self, other: &FilterReport) {
        self.input += other.input;
        self.survivors += other.survivors;
        self.unresolved += other.unresolved;
        for (&s, &n) in &other.per_stage {
            *self.per_stage.entry(s).or_insert(0) += n;
        }
    }

    pub fn survival_ratio(&self) -> f64 {
        if self.input == 0 {
            0.0
        } else {
            self.survivors as f64 / self.input as f64
        }
    }
}

/// Near-duplicate check result for one pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DedupScore {
    pub duplicate_of: Option<u32>,
    pub question_sim: f64,
    pub answer_sim: f64,
}

/// Scans `pairs` in `gen_index` order. A pair duplicates the first earlier
/// pair whose question and answer similarities both exceed `threshold`.
/// Without a duplicate, the reported similarities are those of the closest
/// earlier pair (zero for the first).
pub fn find_duplicates(pairs: &[&QAPair], threshold: f64, unit: DedupUnit) -> Vec<DedupScore> {
    let sim = |a: &str, b: &str| match unit {
        DedupUnit::Chars => levenshtein_similarity(a, b),
        DedupUnit::Tokens => token_levenshtein_similarity(a, b),
    };
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by_key(|&i| (pairs[i].gen_index, i));
    let mut out = vec![
        DedupScore {
            duplicate_of: None,
            question_sim: 0.0,
            answer_sim: 0.0,
        };
        pairs.len()
    ];
    for (k, &i) in order.iter().enumerate() {
        let mut closest = (f64::NEG_INFINITY, 0.0, 0.0);
        for &j in &order[..k] {
            let qs = sim(&pairs[i].question, &pairs[j].question);
            let as_ = sim(&pairs[i].answer, &pairs[j].answer);
            if qs > threshold && as_ > threshold {
                out[i] = DedupScore {
                    duplicate_of: Some(pairs[j].gen_index),
                    question_sim: qs,
                    answer_sim: as_,
                };
                break;
            }
            if qs.min(as_) > closest.0 {
                closest = (qs.min(as_), qs, as_);
            }
        }
        if out[i].duplicate_of.is_none() && k > 0 {
            out[i].question_sim = closest.1;
            out[i].answer_sim = closest.2;
        }
    }
    out
}

enum Check {
    Pass,
    Reject,
    Unresolved(String),
}

impl Check {
    fn from_bool(pass: bool) -> Self {
        if pass {
            Check::Pass
        } else {
            Check::Reject
        }
    }
}

/// Lazily computed passage-level data shared by a group's triplets.
struct GroupCtx<'a> {
    passage: &'a Passage,
    lower: OnceCell<String>,
    tokens: OnceCell<Result<Vec<Token>, String>>,
}

impl<'a> GroupCtx<'a> {
    fn new(passage: &'a Passage) -> Self {
        GroupCtx {
            passage,
            lower: OnceCell::new(),
            tokens: OnceCell::new(),
        }
    }

    fn lower(&self) -> &str {
        self.lower.get_or_init(|| self.passage.text.to_lowercase())
    }
}

pub struct FilterPipeline {
    config: FilterConfig,
    providers: Providers,
    analyzer: Analyzer,
    lexicon: WhLexicon,
    per_triplet: Vec<Stage>,
    dedup: bool,
    pool: Arc<rayon::ThreadPool>,
    chunk_triplets: usize,
}

impl FilterPipeline {
    pub fn new(config: FilterConfig, providers: Providers) -> Result<Self, FilterError> {
        config.validate().map_err(FilterError::Config)?;
        let analyzer = Analyzer {
            lemmatizer: providers.lemmatizer.clone(),
            fallback: config.lemma_fallback,
        };
        let lexicon = config.lexicon();
        let per_triplet = config.plan.per_triplet();
        let dedup = config.plan.is_enabled(Stage::Dedup);
        Ok(FilterPipeline {
            config,
            providers,
            analyzer,
            lexicon,
            per_triplet,
            dedup,
            pool: Arc::new(build_pool(1)?),
            chunk_triplets: 8192,
        })
    }

    pub fn with_workers(mut self, workers: usize) -> Result<Self, FilterError> {
        self.set_workers(workers)?;
        Ok(self)
    }

    fn set_workers(&mut self, workers: usize) -> Result<(), FilterError> {
        self.pool = Arc::new(build_pool(workers)?);
        Ok(())
    }

    pub fn config(&self) -> &FilterConfig {
        &self.config
    }

    fn gold<'c>(&self, ctx: &GroupCtx<'_>, pair: &QAPair, cache: &'c mut Option<Result<ReaderAnswer, String>>) -> Result<&'c ReaderAnswer, String> {
        cache
            .get_or_insert_with(|| {
                self.providers
                    .reader
                    .answer(&ctx.passage.text, &pair.question)
                    .map_err(|e| e.to_string())
            })
            .as_ref()
            .map_err(Clone::clone)
    }

    fn entities(&self, pair: &QAPair) -> Result<Vec<Entity>, String> {
        let ner = self.providers.ner.as_ref();
        let mut out = extract_entities(&pair.question, ner, false).map_err(|e| e.to_string())?;
        out.extend(extract_entities(&pair.answer, ner, false).map_err(|e| e.to_string())?);
        Ok(out)
    }

    fn ngram_mean(reference: &[Token], candidate: &[Token]) -> f64 {
        let r: Vec<&str> = reference.iter().map(|t| t.lemma.as_str()).collect();
        let c: Vec<&str> = candidate.iter().map(|t| t.lemma.as_str()).collect();
        let b = if c.is_empty() {
            0.0
        } else {
            bleu(&c, std::slice::from_ref(&r), &BleuConfig::default())
        };
        let rl = if r.is_empty() && c.is_empty() { 0.0 } else { rouge_l(&r, &c) };
        let m = if r.is_empty() && c.is_empty() {
            0.0
        } else {
            meteor_lite_tokens(reference, candidate, &MeteorParams::default())
        };
        (b + rl + m) / 3.0
    }

    fn check(
        &self,
        stage: Stage,
        ctx: &GroupCtx<'_>,
        pair: &QAPair,
        gold: &mut Option<Result<ReaderAnswer, String>>,
        v: &mut FilterVerdict,
    ) -> Check {
        let cfg = &self.config;
        match stage {
            Stage::Interrogative => match count_interrogatives(&pair.question, &self.lexicon, &self.analyzer) {
                Ok(n) => {
                    v.scores.insert("interrogatives".into(), n as f64);
                    Check::from_bool(n <= cfg.max_interrogatives)
                }
                Err(e) => Check::Unresolved(e.to_string()),
            },
            Stage::GoldAgreement => {
                let g = match self.gold(ctx, pair, gold) {
                    Ok(g) => g,
                    Err(e) => return Check::Unresolved(e),
                };
                v.gold_answer = Some(g.answer.clone());
                v.scores.insert("reader_score".into(), g.score);
                match lemma_overlap(&pair.answer, &g.answer, cfg.overlap_mode, &self.analyzer) {
                    Ok(o) => {
                        v.scores.insert("lemma_overlap".into(), o);
                        Check::from_bool(o >= cfg.lemma_overlap_threshold)
                    }
                    Err(e) => Check::Unresolved(e.to_string()),
                }
            }
            Stage::OptReaderScore => match self.gold(ctx, pair, gold) {
                Ok(g) => {
                    v.gold_answer = Some(g.answer.clone());
                    v.scores.insert("reader_score".into(), g.score);
                    Check::from_bool(g.score > cfg.reader_score_min)
                }
                Err(e) => Check::Unresolved(e),
            },
            Stage::OptNgramMetrics => {
                let g = match self.gold(ctx, pair, gold) {
                    Ok(g) => g.clone(),
                    Err(e) => return Check::Unresolved(e),
                };
                v.gold_answer = Some(g.answer.clone());
                let text = match ctx
                    .tokens
                    .get_or_init(|| self.analyzer.tokens(&ctx.passage.text).map_err(|e| e.to_string()))
                {
                    Ok(t) => t,
                    Err(e) => return Check::Unresolved(e.clone()),
                };
                let toks = |s: &str| self.analyzer.tokens(s).map_err(|e| e.to_string());
                let (gold_t, q_t, a_t) = match (toks(&g.answer), toks(&pair.question), toks(&pair.answer)) {
                    (Ok(g), Ok(q), Ok(a)) => (g, q, a),
                    (Err(e), _, _) | (_, Err(e), _) | (_, _, Err(e)) => return Check::Unresolved(e),
                };
                let means = [
                    ("ngram_gold_answer", Self::ngram_mean(&gold_t, &a_t)),
                    ("ngram_question_answer", Self::ngram_mean(&q_t, &a_t)),
                    ("ngram_text_answer", Self::ngram_mean(text, &a_t)),
                    ("ngram_text_question", Self::ngram_mean(text, &q_t)),
                ];
                let mut pass = true;
                for ((key, mean), min) in means.iter().zip(cfg.ngram_thresholds.as_array()) {
                    v.scores.insert((*key).into(), *mean);
                    pass &= *mean >= min;
                }
                Check::from_bool(pass)
            }
            Stage::OptWmd => {
                let g = match self.gold(ctx, pair, gold) {
                    Ok(g) => g.clone(),
                    Err(e) => return Check::Unresolved(e),
                };
                v.gold_answer = Some(g.answer.clone());
                let (a, b) = match (self.analyzer.lemmas(&pair.answer), self.analyzer.lemmas(&g.answer)) {
                    (Ok(a), Ok(b)) => (a, b),
                    (Err(e), _) | (_, Err(e)) => return Check::Unresolved(e.to_string()),
                };
                let a: Vec<&str> = a.iter().map(String::as_str).collect();
                let b: Vec<&str> = b.iter().map(String::as_str).collect();
                match word_movers_distance(&a, &b, self.providers.embedder.as_ref()) {
                    Ok(d) => {
                        v.scores.insert("wmd".into(), d);
                        let [lo, hi] = cfg.wmd_range;
                        let inside = (lo..=hi).contains(&d);
                        Check::from_bool(inside == (cfg.wmd_polarity == WmdPolarity::KeepInside))
                    }
                    Err(e) => Check::Unresolved(e.to_string()),
                }
            }
            Stage::EntityConsistency => match self.entities(pair) {
                Ok(ents) => {
                    let text = ctx.lower();
                    let missing: Vec<String> = ents
                        .into_iter()
                        .filter(|e| !text.contains(&e.text.to_lowercase()))
                        .map(|e| e.text)
                        .collect();
                    v.scores.insert("missing_entities".into(), missing.len() as f64);
                    let pass = missing.is_empty();
                    v.missing_entities.extend(missing);
                    Check::from_bool(pass)
                }
                Err(e) => Check::Unresolved(e),
            },
            Stage::OptPersonLocation => match self.entities(pair) {
                Ok(ents) => {
                    let text = ctx.lower();
                    let mut missing = Vec::new();
                    for kind in [EntityKind::Person, EntityKind::Location] {
                        let m: Vec<String> = ents
                            .iter()
                            .filter(|e| e.kind == kind && !text.contains(&e.text.to_lowercase()))
                            .map(|e| e.text.clone())
                            .collect();
                        let key = if kind == EntityKind::Person {
                            "missing_persons"
                        } else {
                            "missing_locations"
                        };
                        v.scores.insert(key.into(), m.len() as f64);
                        missing.extend(m);
                    }
                    let pass = missing.is_empty();
                    for m in missing {
                        if !v.missing_entities.contains(&m) {
                            v.missing_entities.push(m);
                        }
                    }
                    Check::from_bool(pass)
                }
                Err(e) => Check::Unresolved(e),
            },
            Stage::Dedup => Check::Pass,
        }
    }

    fn verdict_for(&self, ctx: &GroupCtx<'_>, pair: &QAPair, report: &mut FilterReport) -> FilterVerdict {
        let mut v = FilterVerdict::passing();
        let mut gold = None;
        for &stage in &self.per_triplet {
            match self.check(stage, ctx, pair, &mut gold, &mut v) {
                Check::Pass => {}
                Check::Reject => {
                    v.reject(stage);
                    *report.per_stage.entry(stage).or_insert(0) += 1;
                    break;
                }
                Check::Unresolved(reason) => {
                    log::warn!(
                        "stage {stage} unresolved for passage `{}` pair {}: {reason}",
                        ctx.passage.id,
                        pair.gen_index
                    );
                    v.unresolved = true;
                    if self.config.unresolved_policy == UnresolvedPolicy::Reject {
                        v.reject(stage);
                        break;
                    }
                }
            }
        }
        report.unresolved += usize::from(v.unresolved);
        v
    }

    fn process_refs(&self, passage: &Passage, group: &mut [&mut Triplet]) -> FilterReport {
        let mut report = FilterReport::for_plan(&self.config.plan);
        report.input = group.len();
        let ctx = GroupCtx::new(passage);
        let verdicts: Vec<FilterVerdict> = group
            .iter()
            .map(|t| self.verdict_for(&ctx, &t.pair, &mut report))
            .collect();
        for (t, v) in group.iter_mut().zip(verdicts) {
            t.verdict = Some(v);
        }
        if self.dedup {
            let pairs: Vec<&QAPair> = group.iter().map(|t| &t.pair).collect();
            let dups = find_duplicates(&pairs, self.config.dedup_threshold, self.config.dedup_unit);
            for (t, d) in group.iter_mut().zip(dups) {
                let v = t.verdict.as_mut().expect("verdict set above");
                if !v.passed {
                    continue;
                }
                v.scores.insert("question_sim".into(), d.question_sim);
                v.scores.insert("answer_sim".into(), d.answer_sim);
                if d.duplicate_of.is_some() {
                    v.duplicate_of = d.duplicate_of;
                    v.reject(Stage::Dedup);
                    *report.per_stage.entry(Stage::Dedup).or_insert(0) += 1;
                }
            }
        }
        report.survivors = group.iter().filter(|t| t.survived()).count();
        report
    }

    /// Filters the triplets of one passage in place.
    pub fn process_group(&self, passage: &Passage, group: &mut [Triplet]) -> FilterReport {
        let mut refs: Vec<&mut Triplet> = group.iter_mut().collect();
        self.process_refs(passage, &mut refs)
    }

    /// Filters an in-memory set of triplets in place. Triplets are grouped by
    /// passage regardless of their order.
    pub fn apply(&self, triplets: &mut [Triplet], store: &PassageStore) -> Result<FilterReport, FilterError> {
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut groups: Vec<(&Passage, Vec<&mut Triplet>)> = Vec::new();
        for t in triplets.iter_mut() {
            let gi = match index.get(&t.passage_id) {
                Some(&gi) => gi,
                None => {
                    let p = store
                        .get(&t.passage_id)
                        .ok_or_else(|| FilterError::UnknownPassage(t.passage_id.clone()))?;
                    index.insert(t.passage_id.clone(), groups.len());
                    groups.push((p, Vec::new()));
                    groups.len() - 1
                }
            };
            groups[gi].1.push(t);
        }
        let reports: Vec<FilterReport> = self.pool.install(|| {
            groups
                .par_iter_mut()
                .map(|(p, g)| self.process_refs(p, g))
                .collect()
        });
        let mut total = FilterReport::for_plan(&self.config.plan);
        for r in &reports {
            total.merge(r);
        }
        Ok(total)
    }

    fn flush(
        &self,
        groups: &mut Vec<(&Passage, Vec<Triplet>)>,
        total: &mut FilterReport,
        sink: &mut dyn FnMut(&Triplet) -> io::Result<()>,
    ) -> Result<(), FilterError> {
        let reports: Vec<FilterReport> = self.pool.install(|| {
            groups
                .par_iter_mut()
                .map(|(p, g)| self.process_group(p, g))
                .collect()
        });
        for r in &reports {
            total.merge(r);
        }
        for (_, g) in groups.drain(..) {
            for t in &g {
                sink(t)?;
            }
        }
        Ok(())
    }

    /// Streams triplets through the cascade. Each passage's triplets must be
    /// contiguous in `input`. Output order equals input order.
    pub fn run<I>(
        &self,
        input: I,
        store: &PassageStore,
        sink: &mut dyn FnMut(&Triplet) -> io::Result<()>,
    ) -> Result<FilterReport, FilterError>
    where
        I: IntoIterator<Item = Result<Triplet, FilterError>>,
    {
        let mut total = FilterReport::for_plan(&self.config.plan);
        let mut done: HashSet<String> = HashSet::new();
        let mut groups: Vec<(&Passage, Vec<Triplet>)> = Vec::new();
        let mut pending = 0usize;
        for t in input {
            let t = t?;
            let same = groups.last().is_some_and(|(p, _)| p.id == t.passage_id);
            if !same {
                if pending >= self.chunk_triplets {
                    self.flush(&mut groups, &mut total, sink)?;
                    pending = 0;
                }
                if !done.insert(t.passage_id.clone()) {
                    return Err(FilterError::NonContiguous(t.passage_id));
                }
                let p = store
                    .get(&t.passage_id)
                    .ok_or_else(|| FilterError::UnknownPassage(t.passage_id.clone()))?;
                groups.push((p, Vec::new()));
            }
            groups.last_mut().expect("group pushed above").1.push(t);
            pending += 1;
        }
        self.flush(&mut groups, &mut total, sink)?;
        Ok(total)
    }
}

fn build_pool(workers: usize) -> Result<rayon::ThreadPool, FilterError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| FilterError::Config(format!("cannot start worker pool: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{DomainTag, ModelTag};
    use crate::providers::{ProviderError, Reader, Role, TableNer, TableReader};

    fn passage(id: &str, text: &str) -> Passage {
        Passage {
            id: id.into(),
            title: String::new(),
            text: text.into(),
            categories: vec![],
            batch: 0,
            domain_tag: DomainTag::Wiki,
        }
    }

    fn trip(pid: &str, q: &str, a: &str, i: u32) -> Triplet {
        Triplet {
            passage_id: pid.into(),
            pair: QAPair {
                question: q.into(),
                answer: a.into(),
                gen_index: i,
            },
            model_tag: ModelTag::Stub,
            verdict: None,
        }
    }

    const TEXT: &str = "Bee Train — японская анимационная студия. Студия основана в 1997 году Коити Масимо.";

    fn providers(answers: &[(&str, &str, f64)]) -> Providers {
        let mut p = Providers::stubs();
        p.reader = Arc::new(TableReader::new(answers.iter().map(|(q, a, s)| {
            (
                q.to_string(),
                ReaderAnswer {
                    answer: a.to_string(),
                    score: *s,
                },
            )
        })));
        p.ner = Arc::new(TableNer::new([
            ("Bee Train", EntityKind::Organization),
            ("Коити Масимо", EntityKind::Person),
            ("Хаяо Миядзаки", EntityKind::Person),
            ("Токио", EntityKind::Location),
        ]));
        p
    }

    fn verdict(t: &Triplet) -> &FilterVerdict {
        t.verdict.as_ref().unwrap()
    }

    #[test]
    fn interrogative_stage_counts_wh_words() {
        let p = passage("p", TEXT);
        let pipe = FilterPipeline::new(
            FilterConfig {
                plan: StagePlan::only(&[Stage::Interrogative]),
                ..Default::default()
            },
            Providers::stubs(),
        )
        .unwrap();
        let mut g = vec![
            trip("p", "Кто является основателем студии?", "Коити Масимо", 0),
            trip("p", "Кто и когда основал студию?", "Коити Масимо", 1),
            trip("p", "Это студия.", "да", 2),
        ];
        let r = pipe.process_group(&p, &mut g);
        assert!(verdict(&g[0]).passed);
        assert_eq!(verdict(&g[1]).rejected_at, Some(Stage::Interrogative));
        assert_eq!(verdict(&g[1]).scores["interrogatives"], 2.0);
        assert!(verdict(&g[2]).passed);
        assert_eq!(r.per_stage[&Stage::Interrogative], 1);
    }

    #[test]
    fn gold_agreement_boundary_is_inclusive() {
        let p = passage("p", TEXT);
        let q = "Кто основал студию?";
        let cfg = |t: f64| FilterConfig {
            lemma_overlap_threshold: t,
            plan: StagePlan::only(&[Stage::GoldAgreement]),
            ..Default::default()
        };
        // jaccard({a,b,c,d,e,f,g}, {a,b,c,d,e,f,g,h,i,j}) = 0.7
        let gold = "a b c d e f g h i j";
        let pipe = FilterPipeline::new(cfg(0.7), providers(&[(q, gold, 0.9)])).unwrap();
        let mut g = vec![trip("p", q, "a b c d e f g", 0)];
        pipe.process_group(&p, &mut g);
        assert!(verdict(&g[0]).passed);
        assert_eq!(verdict(&g[0]).scores["lemma_overlap"], 0.7);
        assert_eq!(verdict(&g[0]).gold_answer.as_deref(), Some(gold));

        let pipe = FilterPipeline::new(cfg(0.71), providers(&[(q, gold, 0.9)])).unwrap();
        pipe.process_group(&p, &mut g);
        assert_eq!(verdict(&g[0]).rejected_at, Some(Stage::GoldAgreement));
    }

    #[test]
    fn entity_consistency_lists_missing_names() {
        let p = passage("p", TEXT);
        let pipe = FilterPipeline::new(
            FilterConfig {
                plan: StagePlan::only(&[Stage::EntityConsistency]),
                ..Default::default()
            },
            providers(&[]),
        )
        .unwrap();
        let mut g = vec![
            trip("p", "Кто основал Bee Train?", "Коити Масимо", 0),
            trip("p", "Кто основал студию?", "Хаяо Миядзаки", 1),
            trip("p", "Что это?", "студия", 2),
        ];
        pipe.process_group(&p, &mut g);
        assert!(verdict(&g[0]).passed);
        assert_eq!(verdict(&g[1]).missing_entities, ["Хаяо Миядзаки"]);
        assert!(verdict(&g[2]).passed);
    }

    #[test]
    fn person_location_checks_kinds_separately() {
        let p = passage("p", TEXT);
        let pipe = FilterPipeline::new(
            FilterConfig {
                plan: StagePlan::only(&[Stage::OptPersonLocation]),
                ..Default::default()
            },
            providers(&[]),
        )
        .unwrap();
        let mut g = vec![
            trip("p", "Где Коити Масимо основал студию?", "Токио", 0),
            trip("p", "Кто основал Bee Train?", "Коити Масимо", 1),
        ];
        pipe.process_group(&p, &mut g);
        let v = verdict(&g[0]);
        assert_eq!(v.rejected_at, Some(Stage::OptPersonLocation));
        assert_eq!((v.scores["missing_persons"], v.scores["missing_locations"]), (0.0, 1.0));
        assert!(verdict(&g[1]).passed);
    }

    #[test]
    fn reader_score_is_strict() {
        let p = passage("p", TEXT);
        let pipe = FilterPipeline::new(
            FilterConfig {
                plan: StagePlan::only(&[Stage::OptReaderScore]),
                ..Default::default()
            },
            providers(&[("a?", "x", 0.995), ("b?", "x", 0.99), ("c?", "x", 0.3)]),
        )
        .unwrap();
        let mut g = vec![trip("p", "a?", "x", 0), trip("p", "b?", "x", 1), trip("p", "c?", "x", 2)];
        pipe.process_group(&p, &mut g);
        let passed: Vec<bool> = g.iter().map(|t| verdict(t).passed).collect();
        assert_eq!(passed, [true, false, false]);
    }

    #[test]
    fn dedup_rules() {
        let q = |s: &str, a: &str, i| QAPair {
            question: s.into(),
            answer: a.into(),
            gen_index: i,
        };
        let same = [q("Кто основал студию?", "Коити Масимо", 0), q("Кто основал студию?", "Коити Масимо", 1)];
        let d = find_duplicates(&same.iter().collect::<Vec<_>>(), 0.7, DedupUnit::Chars);
        assert_eq!(d[1].duplicate_of, Some(0));

        let and = [q("Кто основал студию?", "Коити Масимо", 0), q("Кто основал студию!", "1997", 1)];
        let d = find_duplicates(&and.iter().collect::<Vec<_>>(), 0.7, DedupUnit::Chars);
        assert!(d.iter().all(|x| x.duplicate_of.is_none()));

        let three = [q("abcdefghij", "klmnopqrst", 2), q("abcdefghiX", "klmnopqrsX", 1), q("abcdefghij", "klmnopqrsY", 0)];
        let d = find_duplicates(&three.iter().collect::<Vec<_>>(), 0.7, DedupUnit::Chars);
        assert_eq!(d.iter().map(|x| x.duplicate_of).collect::<Vec<_>>(), [Some(0), Some(0), None]);
        // Rejected pairs still count: c is close to b only.
        let chain = [q("aaaaaaaaaa", "zzzz", 0), q("aaaaaaabbb", "zzzz", 1), q("aaaabbbbbb", "zzzz", 2)];
        let d = find_duplicates(&chain.iter().collect::<Vec<_>>(), 0.65, DedupUnit::Chars);
        assert_eq!(d.iter().map(|x| x.duplicate_of).collect::<Vec<_>>(), [None, Some(0), Some(1)]);
    }

    #[test]
    fn wmd_band_and_polarity() {
        let p = passage("p", TEXT);
        let mut prov = providers(&[("q?", "x", 0.9)]);
        prov.embedder = Arc::new(crate::providers::TableEmbedder::new([
            ("x", vec![0.0]),
            ("y", vec![1.3]),
            ("z", vec![2.0]),
        ]));
        let run = |polarity, answers: &[&str]| {
            let pipe = FilterPipeline::new(
                FilterConfig {
                    wmd_polarity: polarity,
                    plan: StagePlan::only(&[Stage::OptWmd]),
                    ..Default::default()
                },
                prov.clone(),
            )
            .unwrap();
            let mut g: Vec<Triplet> = answers.iter().enumerate().map(|(i, a)| trip("p", "q?", a, i as u32)).collect();
            pipe.process_group(&p, &mut g);
            g.iter().map(|t| verdict(t).passed).collect::<Vec<_>>()
        };
        assert_eq!(run(WmdPolarity::KeepInside, &["y", "x", "z"]), [true, false, false]);
        assert_eq!(run(WmdPolarity::DropInside, &["y", "x", "z"]), [false, true, true]);
    }

    struct DownReader;

    impl Reader for DownReader {
        fn answer(&self, _: &str, _: &str) -> Result<ReaderAnswer, ProviderError> {
            Err(ProviderError::Unavailable { role: Role::Reader })
        }
    }

    #[test]
    fn unresolved_policy() {
        let p = passage("p", TEXT);
        let mut prov = Providers::stubs();
        prov.reader = Arc::new(DownReader);
        let run = |policy| {
            let pipe = FilterPipeline::new(
                FilterConfig {
                    unresolved_policy: policy,
                    ..Default::default()
                },
                prov.clone(),
            )
            .unwrap();
            let mut g = vec![trip("p", "Кто основал студию?", "Коити Масимо", 0)];
            let r = pipe.process_group(&p, &mut g);
            (verdict(&g[0]).clone(), r)
        };
        let (v, r) = run(UnresolvedPolicy::Reject);
        assert!(v.unresolved && !v.passed);
        assert_eq!(v.rejected_at, Some(Stage::GoldAgreement));
        assert_eq!((r.unresolved, r.per_stage[&Stage::GoldAgreement]), (1, 0));
        let (v, r) = run(UnresolvedPolicy::Skip);
        assert!(v.unresolved && v.passed);
        assert_eq!(r.survivors, 1);
    }

    #[test]
    fn all_stages_disabled_is_identity() {
        let p = passage("p", TEXT);
        let pipe = FilterPipeline::new(
            FilterConfig {
                plan: StagePlan::none(),
                ..Default::default()
            },
            Providers::stubs(),
        )
        .unwrap();
        let mut g = vec![trip("p", "Кто и когда?", "x", 0), trip("p", "Кто и когда?", "x", 1)];
        let r = pipe.process_group(&p, &mut g);
        assert_eq!(r.survivors, 2);
        assert!(g.iter().all(|t| verdict(t).passed && verdict(t).scores.is_empty()));
    }

    #[test]
    fn streaming_rejects_split_groups_and_unknown_passages() {
        let store = PassageStore::new(vec![passage("a", TEXT), passage("b", TEXT)]).unwrap();
        let pipe = FilterPipeline::new(FilterConfig::default(), Providers::stubs()).unwrap();
        let input = vec![trip("a", "Кто?", "x", 0), trip("b", "Кто?", "x", 0), trip("a", "Где?", "y", 1)];
        let err = pipe.run(input.into_iter().map(Ok), &store, &mut |_| Ok(())).unwrap_err();
        assert!(matches!(err, FilterError::NonContiguous(id) if id == "a"));
        let err = pipe
            .run(vec![Ok(trip("zz", "Кто?", "x", 0))], &store, &mut |_| Ok(()))
            .unwrap_err();
        assert!(matches!(err, FilterError::UnknownPassage(_)));
    }
}
