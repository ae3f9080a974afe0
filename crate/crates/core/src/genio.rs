//! Prompt encoding, generator calls and parsing of generated QA pairs.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ModelTag, Passage, QAPair, Triplet};
use crate::providers::{GenerateRequest, Generator, ProviderError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StyleTag {
    GptStyle,
    T5Style,
}

impl StyleTag {
    pub fn model_tag(self) -> ModelTag {
        match self {
            StyleTag::GptStyle => ModelTag::GptStyle,
            StyleTag::T5Style => ModelTag::T5Style,
        }
    }
}

/// Marker tokens framing text, question and answer in the model's line
/// format: `TEXT text QUESTION question ANSWER answer EOS`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptStyle {
    pub text_marker: String,
    pub question_marker: String,
    pub answer_marker: String,
    pub eos_marker: String,
    pub style_tag: StyleTag,
}

impl PromptStyle {
    pub fn gpt() -> Self {
        PromptStyle {
            text_marker: "<[TEXT]>".into(),
            question_marker: "<[QUESTION]>".into(),
            answer_marker: "<[ANSWER]>".into(),
            eos_marker: "</s>".into(),
            style_tag: StyleTag::GptStyle,
        }
    }

    /// Russian-word markers. The strings are configuration; these are the
    /// shipped defaults.
    pub fn t5() -> Self {
        PromptStyle {
            text_marker: "<[ТЕКСТ]>".into(),
            question_marker: "<[ВОПРОС]>".into(),
            answer_marker: "<[ОТВЕТ]>".into(),
            eos_marker: "</s>".into(),
            style_tag: StyleTag::T5Style,
        }
    }

    pub fn for_tag(tag: StyleTag) -> Self {
        match tag {
            StyleTag::GptStyle => Self::gpt(),
            StyleTag::T5Style => Self::t5(),
        }
    }

    fn markers(&self) -> [&str; 4] {
        [
            &self.text_marker,
            &self.question_marker,
            &self.answer_marker,
            &self.eos_marker,
        ]
    }

    pub fn validate(&self) -> Result<(), GenError> {
        let m = self.markers();
        if m.iter().any(|s| s.is_empty()) {
            return Err(GenError::InvalidStyle("markers must be non-empty".into()));
        }
        for i in 0..m.len() {
            for j in i + 1..m.len() {
                if m[i] == m[j] {
                    return Err(GenError::InvalidStyle(format!("marker `{}` used twice", m[i])));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenMode {
    /// One decoding pass parsed into up to `pairs_per_passage` pairs.
    #[default]
    SinglePass,
    /// One call per pair, each parsed for a single pair.
    PerCall,
}

/// Decoding parameters, passed through to the generator untouched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenParams {
    pub max_length: u32,
    pub beams: u32,
    pub no_repeat_ngram: u32,
    pub repetition_penalty: f64,
    pub pairs_per_passage: u32,
    pub mode: GenMode,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            max_length: 1048,
            beams: 7,
            no_repeat_ngram: 3,
            repetition_penalty: 2.0,
            pairs_per_passage: 3,
            mode: GenMode::SinglePass,
        }
    }
}

impl GenParams {
    pub fn t5() -> Self {
        GenParams {
            max_length: 512,
            beams: 12,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), GenError> {
        let ints = [
            ("max_length", self.max_length),
            ("beams", self.beams),
            ("no_repeat_ngram", self.no_repeat_ngram),
            ("pairs_per_passage", self.pairs_per_passage),
        ];
        if let Some((name, _)) = ints.iter().find(|(_, v)| *v == 0) {
            return Err(GenError::InvalidParams(format!("{name} must be positive")));
        }
        if !(self.repetition_penalty > 0.0) {
            return Err(GenError::InvalidParams("repetition_penalty must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum GenError {
    #[error("passage `{0}` has empty text")]
    EmptyText(String),
    #[error("passage `{id}` contains the marker `{marker}`")]
    MarkerCollision { id: String, marker: String },
    #[error("invalid prompt style: {0}")]
    InvalidStyle(String),
    #[error("invalid generation parameters: {0}")]
    InvalidParams(String),
    #[error("generator unreachable for a whole chunk, aborting (resume from checkpoint): {source}")]
    Aborted {
        checkpoint: Checkpoint,
        #[source]
        source: ProviderError,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// `text_marker + text + question_marker`; generation continues from there.
pub fn format_prompt(passage: &Passage, style: &PromptStyle) -> Result<String, GenError> {
    if passage.text.trim().is_empty() {
        return Err(GenError::EmptyText(passage.id.clone()));
    }
    if let Some(m) = style.markers().iter().find(|m| passage.text.contains(**m)) {
        return Err(GenError::MarkerCollision {
            id: passage.id.clone(),
            marker: m.to_string(),
        });
    }
    let mut out = String::with_capacity(passage.text.len() + 32);
    out.push_str(&style.text_marker);
    out.push_str(&passage.text);
    out.push_str(&style.question_marker);
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseReport {
    /// Fragments without a usable question/answer split, including a
    /// truncated trailing one.
    pub malformed: usize,
    /// Well-formed pairs beyond the cap.
    pub extra: usize,
}

/// Splits raw generator output into QA pairs. An echoed prompt is skipped and
/// everything after the end-of-sequence marker is ignored.
pub fn parse_generation(raw: &str, style: &PromptStyle, cap: usize) -> (Vec<QAPair>, ParseReport) {
    let mut body = raw;
    if let Some(pos) = body.rfind(style.text_marker.as_str()) {
        let after = &body[pos + style.text_marker.len()..];
        body = match after.find(style.question_marker.as_str()) {
            Some(q) => &after[q + style.question_marker.len()..],
            None => "",
        };
    }
    if let Some(pos) = body.find(style.eos_marker.as_str()) {
        body = &body[..pos];
    }
    let mut pairs = Vec::new();
    let mut report = ParseReport::default();
    for segment in body.split(style.question_marker.as_str()) {
        if segment.trim().is_empty() {
            continue;
        }
        let mut parts = segment.split(style.answer_marker.as_str());
        let (q, a, rest) = (parts.next(), parts.next(), parts.next());
        let pair = match (q.map(str::trim), a.map(str::trim), rest) {
            (Some(q), Some(a), None) if !q.is_empty() && !a.is_empty() => Some((q, a)),
            _ => None,
        };
        match pair {
            Some((q, a)) if pairs.len() < cap => pairs.push(QAPair {
                question: q.to_string(),
                answer: a.to_string(),
                gen_index: pairs.len() as u32,
            }),
            Some(_) => report.extra += 1,
            None => report.malformed += 1,
        }
    }
    (pairs, report)
}

/// Last completed passage id per batch.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub batches: BTreeMap<u32, String>,
}

impl Checkpoint {
    pub fn is_done(&self, passage: &Passage) -> bool {
        self.batches
            .get(&passage.batch)
            .is_some_and(|last| passage.id.as_str() <= last.as_str())
    }

    pub fn mark(&mut self, passage: &Passage) {
        let slot = self.batches.entry(passage.batch).or_default();
        if passage.id.as_str() > slot.as_str() {
            *slot = passage.id.clone();
        }
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        if !path.exists() {
            return Ok(Self::default());
        }
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(path, text + "\n")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenOptions {
    pub workers: usize,
    /// Attempts per generator call before the passage is skipped.
    pub max_attempts: u32,
    pub retry_backoff_ms: u64,
    /// Passages per unit of work; output and checkpoints advance per chunk.
    pub chunk_size: usize,
}

impl Default for GenOptions {
    fn default() -> Self {
        GenOptions {
            workers: 1,
            max_attempts: 3,
            retry_backoff_ms: 0,
            chunk_size: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub passage_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenReport {
    pub passages: usize,
    pub resumed_past: usize,
    pub triplets: usize,
    pub malformed: usize,
    pub extra: usize,
    pub skipped: Vec<SkipRecord>,
}

enum Outcome {
    Pairs(Vec<QAPair>, ParseReport),
    Failed(String, Option<ProviderError>),
}

fn call_with_retries(
    generator: &dyn Generator,
    req: &GenerateRequest<'_>,
    opts: &GenOptions,
) -> Result<String, ProviderError> {
    let mut attempt = 0;
    loop {
        attempt += 1;
        match generator.generate(req) {
            Ok(raw) => return Ok(raw),
            Err(e) if attempt >= opts.max_attempts.max(1) => return Err(e),
            Err(e) => {
                log::debug!("generator attempt {attempt} failed: {e}");
                if opts.retry_backoff_ms > 0 {
                    std::thread::sleep(Duration::from_millis(opts.retry_backoff_ms * u64::from(attempt)));
                }
            }
        }
    }
}

fn generate_one(
    passage: &Passage,
    generator: &dyn Generator,
    style: &PromptStyle,
    params: &GenParams,
    opts: &GenOptions,
) -> Outcome {
    let prompt = match format_prompt(passage, style) {
        Ok(p) => p,
        Err(e) => return Outcome::Failed(e.to_string(), None),
    };
    let cap = params.pairs_per_passage as usize;
    let calls = match params.mode {
        GenMode::SinglePass => 1,
        GenMode::PerCall => params.pairs_per_passage,
    };
    let mut pairs = Vec::new();
    let mut report = ParseReport::default();
    for call_index in 0..calls {
        let req = GenerateRequest {
            prompt: &prompt,
            style,
            params,
            call_index,
        };
        let raw = match call_with_retries(generator, &req, opts) {
            Ok(raw) => raw,
            Err(e) => return Outcome::Failed(e.to_string(), Some(e)),
        };
        let per_call_cap = if params.mode == GenMode::PerCall { 1 } else { cap };
        let (got, r) = parse_generation(&raw, style, per_call_cap);
        report.malformed += r.malformed;
        report.extra += r.extra;
        pairs.extend(got);
    }
    for (i, p) in pairs.iter_mut().enumerate() {
        p.gen_index = i as u32;
    }
    Outcome::Pairs(pairs, report)
}

/// Generates triplets for every passage not already covered by
/// `checkpoint`. Output reaches `sink` chunk by chunk in
/// `(batch, passage id, gen_index)` order, independent of the worker count.
/// A chunk in which every passage failed because the generator was
/// unreachable aborts the run; earlier chunks have already been flushed and
/// checkpointed.
pub fn generate_for_passages(
    passages: &[Passage],
    generator: &dyn Generator,
    style: &PromptStyle,
    params: &GenParams,
    opts: &GenOptions,
    checkpoint: &mut Checkpoint,
    sink: &mut dyn FnMut(&[Triplet], &Checkpoint) -> std::io::Result<()>,
) -> Result<GenReport, GenError> {
    style.validate()?;
    params.validate()?;
    let mut order: Vec<&Passage> = passages.iter().collect();
    order.sort_by(|a, b| (a.batch, &a.id).cmp(&(b.batch, &b.id)));
    let mut report = GenReport {
        passages: order.len(),
        ..Default::default()
    };
    order.retain(|p| {
        let done = checkpoint.is_done(p);
        report.resumed_past += usize::from(done);
        !done
    });
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .map_err(|e| GenError::InvalidParams(format!("cannot start worker pool: {e}")))?;
    let model_tag = generator.model_tag(style);

    for chunk in order.chunks(opts.chunk_size.max(1)) {
        let outcomes: Vec<Outcome> = pool.install(|| {
            chunk
                .par_iter()
                .map(|p| generate_one(p, generator, style, params, opts))
                .collect()
        });
        let all_unreachable = outcomes
            .iter()
            .all(|o| matches!(o, Outcome::Failed(_, Some(e)) if e.is_unreachable()));
        if all_unreachable {
            if let Some(Outcome::Failed(_, Some(source))) = outcomes.into_iter().next() {
                return Err(GenError::Aborted {
                    checkpoint: checkpoint.clone(),
                    source,
                });
            }
            unreachable!("chunks are never empty");
        }
        let mut triplets = Vec::with_capacity(chunk.len() * params.pairs_per_passage as usize);
        for (passage, outcome) in chunk.iter().zip(outcomes) {
            match outcome {
                Outcome::Pairs(pairs, r) => {
                    report.malformed += r.malformed;
                    report.extra += r.extra;
                    triplets.extend(pairs.into_iter().map(|pair| Triplet {
                        passage_id: passage.id.clone(),
                        pair,
                        model_tag,
                        verdict: None,
                    }));
                }
                Outcome::Failed(reason, _) => {
                    log::warn!("skipping passage `{}`: {reason}", passage.id);
                    report.skipped.push(SkipRecord {
                        passage_id: passage.id.clone(),
                        reason,
                    });
                }
            }
            checkpoint.mark(passage);
        }
        report.triplets += triplets.len();
        sink(&triplets, checkpoint)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::DomainTag;
    use crate::providers::{Role, StubGenerator};
    use proptest::prelude::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

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

    #[test]
    fn formats_gpt_prompt() {
        let p = passage("p", "abc");
        assert_eq!(format_prompt(&p, &PromptStyle::gpt()).unwrap(), "<[TEXT]>abc<[QUESTION]>");
        assert!(matches!(
            format_prompt(&passage("p", ""), &PromptStyle::gpt()),
            Err(GenError::EmptyText(_))
        ));
        assert!(matches!(
            format_prompt(&passage("p", "a <[ANSWER]> b"), &PromptStyle::gpt()),
            Err(GenError::MarkerCollision { .. })
        ));
    }

    #[test]
    fn parse_examples() {
        let s = PromptStyle::gpt();
        let (pairs, r) = parse_generation("Q1<[ANSWER]>A1<[QUESTION]>Q2<[ANSWER]>A2", &s, 3);
        assert_eq!(pairs.len(), 2);
        assert_eq!(r, ParseReport::default());
        assert_eq!(pairs[1].question, "Q2");
        assert_eq!(pairs[1].gen_index, 1);

        let (pairs, r) = parse_generation("Q1<[ANSWER]>", &s, 3);
        assert!(pairs.is_empty());
        assert_eq!(r.malformed, 1);

        let raw = "a<[ANSWER]>1<[QUESTION]>b<[ANSWER]>2<[QUESTION]>c<[ANSWER]>3<[QUESTION]>d<[ANSWER]>4";
        let (pairs, r) = parse_generation(raw, &s, 3);
        assert_eq!(pairs.len(), 3);
        assert_eq!(r.extra, 1);
    }

    #[test]
    fn parse_skips_echoed_prompt_and_stops_at_eos() {
        let s = PromptStyle::gpt();
        let raw = "<[TEXT]>текст<[QUESTION]> Кто? <[ANSWER]> Он </s> мусор<[QUESTION]>x<[ANSWER]>y";
        let (pairs, r) = parse_generation(raw, &s, 3);
        assert_eq!(pairs.len(), 1);
        assert_eq!((pairs[0].question.as_str(), pairs[0].answer.as_str()), ("Кто?", "Он"));
        assert_eq!(r, ParseReport::default());
    }

    #[test]
    fn invalid_styles_and_params() {
        let mut s = PromptStyle::gpt();
        s.answer_marker = s.question_marker.clone();
        assert!(s.validate().is_err());
        assert!(PromptStyle::t5().validate().is_ok());
        let p = GenParams {
            beams: 0,
            ..Default::default()
        };
        assert!(p.validate().is_err());
    }

    proptest! {
        #[test]
        fn embedded_pairs_round_trip(pairs in proptest::collection::vec(
            ("[а-яa-z0-9 ?]{1,12}", "[а-яa-z0-9 ]{1,8}"), 0..4)) {
            let s = PromptStyle::gpt();
            let pairs: Vec<(String, String)> = pairs
                .into_iter()
                .filter(|(q, a)| !q.trim().is_empty() && !a.trim().is_empty())
                .collect();
            let raw = pairs
                .iter()
                .map(|(q, a)| format!("{q}{}{a}", s.answer_marker))
                .collect::<Vec<_>>()
                .join(&s.question_marker);
            let (got, report) = parse_generation(&raw, &s, 3);
            let k = pairs.len().min(3);
            prop_assert_eq!(got.len(), k);
            prop_assert_eq!(report.extra, pairs.len() - k);
            for (g, (q, a)) in got.iter().zip(&pairs) {
                prop_assert_eq!(g.question.as_str(), q.trim());
                prop_assert_eq!(g.answer.as_str(), a.trim());
            }
        }
    }

    struct Flaky {
        failing_id: &'static str,
        calls: AtomicUsize,
    }

    impl Generator for Flaky {
        fn generate(&self, req: &GenerateRequest<'_>) -> Result<String, ProviderError> {
            if req.prompt.contains(self.failing_id) {
                self.calls.fetch_add(1, Ordering::SeqCst);
                return Err(ProviderError::failed(Role::Generator, "boom"));
            }
            StubGenerator.generate(req)
        }
    }

    fn collect(
        passages: &[Passage],
        generator: &dyn Generator,
        workers: usize,
    ) -> (Vec<Triplet>, GenReport) {
        let mut out = Vec::new();
        let mut cp = Checkpoint::default();
        let opts = GenOptions {
            workers,
            chunk_size: 2,
            ..Default::default()
        };
        let report = generate_for_passages(
            passages,
            generator,
            &PromptStyle::gpt(),
            &GenParams::default(),
            &opts,
            &mut cp,
            &mut |ts, _| {
                out.extend_from_slice(ts);
                Ok(())
            },
        )
        .unwrap();
        (out, report)
    }

    const TEXT: &str = "Студия основана в 1997 году. Она выпустила много сериалов. Офис находится в Токио.";

    #[test]
    fn stub_yields_three_triplets_per_passage_in_order() {
        let passages = vec![passage("b", TEXT), passage("a", TEXT)];
        let (ts, report) = collect(&passages, &StubGenerator, 1);
        assert_eq!(ts.len(), 6);
        assert_eq!(report.triplets, 6);
        let keys: Vec<_> = ts.iter().map(|t| (t.passage_id.as_str(), t.pair.gen_index)).collect();
        assert_eq!(keys, [("a", 0), ("a", 1), ("a", 2), ("b", 0), ("b", 1), ("b", 2)]);
        assert!(ts.iter().all(|t| t.model_tag == ModelTag::Stub));
        let (ts8, _) = collect(&passages, &StubGenerator, 8);
        assert_eq!(ts, ts8);
    }

    #[test]
    fn failing_passage_is_retried_then_skipped() {
        let flaky = Flaky {
            failing_id: "ОШИБКА",
            calls: AtomicUsize::new(0),
        };
        let passages = vec![passage("a", TEXT), passage("z", "ОШИБКА в тексте здесь.")];
        let (ts, report) = collect(&passages, &flaky, 2);
        assert_eq!(flaky.calls.load(Ordering::SeqCst), 3);
        assert!(ts.iter().all(|t| t.passage_id == "a"));
        assert_eq!(report.skipped.len(), 1);
        assert_eq!(report.skipped[0].passage_id, "z");
    }

    #[test]
    fn unreachable_generator_aborts_with_checkpoint_and_resumes() {
        struct DownAfter(&'static str);
        impl Generator for DownAfter {
            fn generate(&self, req: &GenerateRequest<'_>) -> Result<String, ProviderError> {
                if req.prompt.contains(self.0) {
                    Err(ProviderError::Unreachable {
                        role: Role::Generator,
                        message: "connection refused".into(),
                    })
                } else {
                    StubGenerator.generate(req)
                }
            }
        }
        let passages = vec![
            passage("p1", TEXT),
            passage("p2", TEXT),
            passage("p3", "ВНИЗ первый текст."),
            passage("p4", "ВНИЗ второй текст."),
        ];
        let mut cp = Checkpoint::default();
        let mut out = Vec::new();
        let opts = GenOptions {
            chunk_size: 2,
            ..Default::default()
        };
        let err = generate_for_passages(
            &passages,
            &DownAfter("ВНИЗ"),
            &PromptStyle::gpt(),
            &GenParams::default(),
            &opts,
            &mut cp,
            &mut |ts, _| {
                out.extend_from_slice(ts);
                Ok(())
            },
        )
        .unwrap_err();
        let GenError::Aborted { checkpoint, .. } = err else {
            panic!("expected abort");
        };
        assert_eq!(checkpoint.batches[&0], "p2");
        assert_eq!(out.len(), 6);

        let mut cp = checkpoint;
        let report = generate_for_passages(
            &passages,
            &StubGenerator,
            &PromptStyle::gpt(),
            &GenParams::default(),
            &opts,
            &mut cp,
            &mut |ts, _| {
                out.extend_from_slice(ts);
                Ok(())
            },
        )
        .unwrap();
        assert_eq!(report.resumed_past, 2);
        assert_eq!(cp.batches[&0], "p4");
        assert_eq!(out.iter().filter(|t| t.passage_id == "p3").count(), 3);
    }

    #[test]
    fn per_call_mode_issues_one_call_per_pair() {
        let params = GenParams {
            mode: GenMode::PerCall,
            ..Default::default()
        };
        let mut out = Vec::new();
        generate_for_passages(
            &[passage("a", TEXT)],
            &StubGenerator,
            &PromptStyle::t5(),
            &params,
            &GenOptions::default(),
            &mut Checkpoint::default(),
            &mut |ts, _| {
                out.extend_from_slice(ts);
                Ok(())
            },
        )
        .unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out.iter().map(|t| t.pair.gen_index).collect::<Vec<_>>(), [0, 1, 2]);
        assert_ne!(out[0].pair.question, out[1].pair.question);
    }
}
