//! Deterministic in-process providers.

use std::collections::{HashMap, HashSet};

use sha2::{Digest, Sha256};

use super::{
    EntityRecognizer, Embedder, GenerateRequest, Generator, Lemmatizer, PredictItem,
    ProviderError, Reader, ReaderAnswer, Role, TrainRequest, Trainer,
};
use crate::corpus::ModelTag;
use crate::genio::{GenMode, PromptStyle};
use crate::textproc::{sentence_spans, token_spans, words_lower, Entity, EntityKind};

/// Lemma = lowercased surface.
#[derive(Debug, Clone, Copy, Default)]
pub struct LowercaseLemmatizer;

impl Lemmatizer for LowercaseLemmatizer {
    fn name(&self) -> &str {
        "lowercase"
    }

    fn lemmatize(&self, words: &[&str]) -> Result<Vec<String>, ProviderError> {
        Ok(words.iter().map(|w| w.to_lowercase()).collect())
    }
}

/// Dictionary lookup on the lowercased surface; misses keep the lowercased
/// surface.
#[derive(Debug, Clone, Default)]
pub struct TableLemmatizer {
    table: HashMap<String, String>,
}

const BUILTIN_LEMMAS: &[(&str, &[&str])] = &[
    ("кто", &["кого", "кому", "кем", "ком"]),
    ("что", &["чего", "чему"]),
    (
        "какой",
        &["какая", "какое", "какие", "какого", "каким", "какими", "каких", "какую", "какому", "каком"],
    ),
    (
        "который",
        &[
            "которая", "которое", "которые", "которого", "которой", "которым", "которыми",
            "которых", "которую", "которому", "котором",
        ],
    ),
    ("чей", &["чья", "чьё", "чье", "чьи", "чьего", "чьей", "чьим", "чьих", "чьему"]),
    ("каков", &["какова", "каково", "каковы"]),
    ("каковой", &["каковая", "каковое", "каковые", "каковых"]),
    ("сколько", &["скольких", "скольким", "сколькими"]),
    ("год", &["годы", "года", "году", "годом", "годе", "годах", "годам", "годов", "лет"]),
    ("город", &["города", "городе", "городом", "городу", "городов"]),
];

impl TableLemmatizer {
    pub fn from_pairs<I, A, B>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (A, B)>,
        A: AsRef<str>,
        B: AsRef<str>,
    {
        TableLemmatizer {
            table: pairs
                .into_iter()
                .map(|(a, b)| (a.as_ref().to_lowercase(), b.as_ref().to_lowercase()))
                .collect(),
        }
    }

    /// Small fixture covering inflected interrogatives and a few frequent
    /// nouns.
    pub fn builtin() -> Self {
        let mut table = HashMap::new();
        for (lemma, forms) in BUILTIN_LEMMAS {
            for form in forms.iter() {
                table.insert(form.to_string(), lemma.to_string());
            }
        }
        TableLemmatizer { table }
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl Lemmatizer for TableLemmatizer {
    fn name(&self) -> &str {
        "table"
    }

    fn lemmatize(&self, words: &[&str]) -> Result<Vec<String>, ProviderError> {
        Ok(words
            .iter()
            .map(|w| {
                let lower = w.to_lowercase();
                self.table.get(&lower).cloned().unwrap_or(lower)
            })
            .collect())
    }
}

/// Runs of two or more adjacent capitalized words, separated only by
/// whitespace, tagged `other`.
#[derive(Debug, Clone, Copy, Default)]
pub struct CapitalizationNer;

impl EntityRecognizer for CapitalizationNer {
    fn name(&self) -> &str {
        "capitalization"
    }

    fn entities(&self, text: &str) -> Result<Vec<Entity>, ProviderError> {
        let mut out = Vec::new();
        let mut run: Option<(usize, usize, usize)> = None; // start, end, length
        let mut flush = |run: &mut Option<(usize, usize, usize)>| {
            if let Some((s, e, n)) = run.take() {
                if n >= 2 {
                    out.push(Entity {
                        text: text[s..e].to_string(),
                        kind: EntityKind::Other,
                        span: (s, e),
                    });
                }
            }
        };
        for (s, e) in token_spans(text) {
            let capitalized = text[s..e].chars().next().is_some_and(char::is_uppercase);
            if !capitalized {
                flush(&mut run);
                continue;
            }
            run = match run {
                Some((rs, re, n)) if text[re..s].chars().all(char::is_whitespace) => Some((rs, e, n + 1)),
                other => {
                    let mut other = other;
                    flush(&mut other);
                    Some((s, e, 1))
                }
            };
        }
        flush(&mut run);
        Ok(out)
    }
}

/// Gazetteer lookup: leftmost-longest whole-word matches of known names.
#[derive(Debug, Clone, Default)]
pub struct TableNer {
    entries: Vec<(String, EntityKind)>,
}

impl TableNer {
    pub fn new<I, S>(entries: I) -> Self
    where
        I: IntoIterator<Item = (S, EntityKind)>,
        S: Into<String>,
    {
        let mut entries: Vec<(String, EntityKind)> =
            entries.into_iter().map(|(s, k)| (s.into(), k)).filter(|(s, _)| !s.is_empty()).collect();
        entries.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        entries.dedup_by(|a, b| a.0 == b.0);
        TableNer { entries }
    }
}

impl EntityRecognizer for TableNer {
    fn name(&self) -> &str {
        "table"
    }

    fn entities(&self, text: &str) -> Result<Vec<Entity>, ProviderError> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < text.len() {
            let at_boundary = text[..i].chars().next_back().is_none_or(|c| !c.is_alphanumeric());
            let hit = if at_boundary {
                self.entries.iter().find(|(name, _)| {
                    text[i..].starts_with(name.as_str())
                        && text[i + name.len()..].chars().next().is_none_or(|c| !c.is_alphanumeric())
                })
            } else {
                None
            };
            match hit {
                Some((name, kind)) => {
                    out.push(Entity {
                        text: name.clone(),
                        kind: *kind,
                        span: (i, i + name.len()),
                    });
                    i += name.len();
                }
                None => i += text[i..].chars().next().map_or(1, char::len_utf8),
            }
        }
        Ok(out)
    }
}

/// Extractive heuristic reader. Picks the sentence sharing the most words
/// with the question and answers with the longest run of that sentence's
/// words that the question does not mention (the last one on ties). The score is the fraction of
/// distinct question words found in the sentence.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubReader;

impl Reader for StubReader {
    fn answer(&self, context: &str, question: &str) -> Result<ReaderAnswer, ProviderError> {
        let qwords: HashSet<String> = words_lower(question).into_iter().collect();
        let mut best: Option<(usize, Vec<(usize, usize)>)> = None;
        for (ss, se) in sentence_spans(context) {
            let toks: Vec<(usize, usize)> = token_spans(&context[ss..se]).map(|(a, b)| (a + ss, b + ss)).collect();
            if toks.is_empty() {
                continue;
            }
            let shared: HashSet<String> = toks
                .iter()
                .map(|&(a, b)| context[a..b].to_lowercase())
                .filter(|w| qwords.contains(w))
                .collect();
            if best.as_ref().is_none_or(|(n, _)| shared.len() > *n) {
                best = Some((shared.len(), toks));
            }
        }
        let Some((shared, toks)) = best else {
            return Err(ProviderError::failed(Role::Reader, "context has no words"));
        };
        let mut best_run = (0, 0);
        let mut run_start = None;
        for (i, &(a, b)) in toks.iter().enumerate() {
            if qwords.contains(&context[a..b].to_lowercase()) {
                run_start = None;
                continue;
            }
            let start = *run_start.get_or_insert(i);
            if i + 1 - start >= best_run.1 - best_run.0 {
                best_run = (start, i + 1);
            }
        }
        if best_run.1 == best_run.0 {
            best_run = (toks.len() - 1, toks.len());
        }
        let answer = context[toks[best_run.0].0..toks[best_run.1 - 1].1].to_string();
        let score = if qwords.is_empty() {
            0.0
        } else {
            shared as f64 / qwords.len() as f64
        };
        Ok(ReaderAnswer { answer, score })
    }
}

/// Canned answers keyed by question text.
#[derive(Debug, Clone, Default)]
pub struct TableReader {
    answers: HashMap<String, ReaderAnswer>,
}

impl TableReader {
    pub fn new<I: IntoIterator<Item = (String, ReaderAnswer)>>(answers: I) -> Self {
        TableReader {
            answers: answers.into_iter().collect(),
        }
    }
}

impl Reader for TableReader {
    fn answer(&self, _context: &str, question: &str) -> Result<ReaderAnswer, ProviderError> {
        self.answers
            .get(question)
            .cloned()
            .ok_or_else(|| ProviderError::failed(Role::Reader, format!("no canned answer for `{question}`")))
    }
}

/// Template generator: one pair per sentence of the prompt text. The answer
/// is the sentence's last two words and the question is an interrogative
/// followed by the remaining words.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubGenerator;

const STUB_WH: [&str; 3] = ["Что", "Где", "Когда"];

impl StubGenerator {
    fn passage_text<'a>(prompt: &'a str, style: &PromptStyle) -> &'a str {
        let body = prompt.strip_prefix(style.text_marker.as_str()).unwrap_or(prompt);
        body.strip_suffix(style.question_marker.as_str()).unwrap_or(body)
    }

    fn pair(text: &str, sentences: &[Vec<(usize, usize)>], k: usize) -> (String, String) {
        let toks = &sentences[k % sentences.len()];
        let n = toks.len();
        let answer = text[toks[n - 2].0..toks[n - 1].1].to_string();
        let mut body: Vec<String> = toks[..n - 2].iter().map(|&(a, b)| text[a..b].to_string()).collect();
        body[0] = body[0].to_lowercase();
        (format!("{} {}?", STUB_WH[k % STUB_WH.len()], body.join(" ")), answer)
    }
}

impl Generator for StubGenerator {
    fn generate(&self, req: &GenerateRequest<'_>) -> Result<String, ProviderError> {
        let style = req.style;
        let text = Self::passage_text(req.prompt, style);
        let sentences: Vec<Vec<(usize, usize)>> = sentence_spans(text)
            .into_iter()
            .map(|(s, e)| token_spans(&text[s..e]).map(|(a, b)| (a + s, b + s)).collect::<Vec<_>>())
            .filter(|toks| toks.len() >= 3)
            .collect();
        if sentences.is_empty() {
            return Ok(style.eos_marker.clone());
        }
        let (first, count) = match req.params.mode {
            GenMode::SinglePass => (0, req.params.pairs_per_passage as usize),
            GenMode::PerCall => (req.call_index as usize, 1),
        };
        let mut raw = String::new();
        for k in first..first + count {
            if k > first {
                raw.push_str(&style.question_marker);
            }
            let (q, a) = Self::pair(text, &sentences, k);
            raw.push_str(&q);
            raw.push_str(&style.answer_marker);
            raw.push_str(&a);
        }
        raw.push_str(&style.eos_marker);
        Ok(raw)
    }

    fn model_tag(&self, _style: &PromptStyle) -> ModelTag {
        ModelTag::Stub
    }
}

fn digest(bytes: &[u8]) -> Vec<u8> {
    Sha256::digest(bytes).to_vec()
}

/// Pseudo-embeddings derived from a hash of the lowercased word.
#[derive(Debug, Clone, Copy)]
pub struct HashEmbedder {
    pub dim: usize,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder { dim: 16 }
    }
}

impl Embedder for HashEmbedder {
    fn embed(&self, words: &[&str]) -> Result<Vec<Option<Vec<f64>>>, ProviderError> {
        Ok(words
            .iter()
            .map(|w| {
                let bytes = digest(w.to_lowercase().as_bytes());
                let v = (0..self.dim)
                    .map(|i| f64::from(bytes[i % bytes.len()]) / 127.5 - 1.0)
                    .collect();
                Some(v)
            })
            .collect())
    }
}

/// Fixed word vectors; anything else is out of vocabulary.
#[derive(Debug, Clone, Default)]
pub struct TableEmbedder {
    vectors: HashMap<String, Vec<f64>>,
}

impl TableEmbedder {
    pub fn new<I, S>(vectors: I) -> Self
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: Into<String>,
    {
        TableEmbedder {
            vectors: vectors.into_iter().map(|(w, v)| (w.into(), v)).collect(),
        }
    }
}

impl Embedder for TableEmbedder {
    fn embed(&self, words: &[&str]) -> Result<Vec<Option<Vec<f64>>>, ProviderError> {
        Ok(words.iter().map(|w| self.vectors.get(*w).cloned()).collect())
    }
}

fn request_handle(prefix: &str, req: &TrainRequest) -> String {
    let bytes = serde_json::to_vec(req).unwrap_or_default();
    format!("{prefix}:{}", hex::encode(&digest(&bytes)[..6]))
}

/// "Trains" nothing; predicts with [`StubReader`].
#[derive(Debug, Clone, Copy, Default)]
pub struct ExtractiveTrainer;

impl Trainer for ExtractiveTrainer {
    fn train(&self, req: &TrainRequest) -> Result<String, ProviderError> {
        Ok(request_handle("extractive", req))
    }

    fn predict(&self, _handle: &str, items: &[PredictItem]) -> Result<Vec<String>, ProviderError> {
        Ok(items
            .iter()
            .map(|it| StubReader.answer(&it.context, &it.question).map(|a| a.answer).unwrap_or_default())
            .collect())
    }
}

/// Always predicts the empty string.
#[derive(Debug, Clone, Copy, Default)]
pub struct EmptyTrainer;

impl Trainer for EmptyTrainer {
    fn train(&self, req: &TrainRequest) -> Result<String, ProviderError> {
        Ok(request_handle("empty", req))
    }

    fn predict(&self, _handle: &str, items: &[PredictItem]) -> Result<Vec<String>, ProviderError> {
        Ok(vec![String::new(); items.len()])
    }
}

/// Predicts the known gold answer for every id it was given.
#[derive(Debug, Clone, Default)]
pub struct OracleTrainer {
    golds: HashMap<String, String>,
}

impl OracleTrainer {
    pub fn new<I: IntoIterator<Item = (String, String)>>(golds: I) -> Self {
        OracleTrainer {
            golds: golds.into_iter().collect(),
        }
    }
}

impl Trainer for OracleTrainer {
    fn train(&self, req: &TrainRequest) -> Result<String, ProviderError> {
        Ok(request_handle("oracle", req))
    }

    fn predict(&self, _handle: &str, items: &[PredictItem]) -> Result<Vec<String>, ProviderError> {
        Ok(items
            .iter()
            .map(|it| self.golds.get(&it.id).cloned().unwrap_or_default())
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genio::{parse_generation, GenParams};

    #[test]
    fn reader_answers_with_a_context_span() {
        let ctx = "Bee Train — японская студия. Студия основана в 1997 году Коити Масимо.";
        let a = StubReader.answer(ctx, "Кто основал студию в 1997 году?").unwrap();
        assert!(ctx.contains(&a.answer));
        assert_eq!(a.answer, "Коити Масимо");
        assert!((0.0..=1.0).contains(&a.score));
    }

    #[test]
    fn capitalization_runs_need_two_words() {
        let ents = CapitalizationNer.entities("Кто основал Bee Train, а не Масимо?").unwrap();
        assert_eq!(ents.iter().map(|e| e.text.as_str()).collect::<Vec<_>>(), ["Bee Train"]);
        let ents = CapitalizationNer.entities("Bee, Train").unwrap();
        assert!(ents.is_empty());
    }

    #[test]
    fn table_ner_respects_word_boundaries() {
        let ner = TableNer::new([("Москва", EntityKind::Location), ("Москва-река", EntityKind::Location)]);
        let ents = ner.entities("Москва-река и Москвач, Москва").unwrap();
        let names: Vec<_> = ents.iter().map(|e| e.text.as_str()).collect();
        assert_eq!(names, ["Москва-река", "Москва"]);
    }

    #[test]
    fn stub_generator_output_parses() {
        let style = PromptStyle::gpt();
        let params = GenParams::default();
        let prompt = format!(
            "{}Студия основана в 1997 году. Она выпустила много аниме сериалов.{}",
            style.text_marker, style.question_marker
        );
        let raw = StubGenerator
            .generate(&GenerateRequest {
                prompt: &prompt,
                style: &style,
                params: &params,
                call_index: 0,
            })
            .unwrap();
        let (pairs, report) = parse_generation(&raw, &style, 3);
        assert_eq!(pairs.len(), 3);
        assert_eq!(report.malformed, 0);
        assert_eq!(pairs[0].answer, "1997 году");
        assert_eq!(pairs[0].question, "Что студия основана в?");
    }

    #[test]
    fn hash_embedder_is_deterministic() {
        let a = HashEmbedder::default().embed(&["год", "Год"]).unwrap();
        assert_eq!(a[0], a[1]);
        assert_eq!(a[0].as_ref().unwrap().len(), 16);
    }
}
