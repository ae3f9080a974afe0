//! Tokenization, lemma and entity lookup through providers, edit-distance
//! similarity, n-grams and interrogative counting.

use std::collections::{BTreeSet, HashMap};
use std::hash::Hash;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::providers::{CapitalizationNer, EntityRecognizer, Lemmatizer, ProviderError};

#[derive(Debug, Error)]
pub enum TextError {
    #[error("provider `{provider}` failed: {source}")]
    Provider {
        provider: String,
        #[source]
        source: ProviderError,
    },
    #[error("n-gram order must be at least 1")]
    ZeroOrder,
}

impl TextError {
    pub fn provider_error(&self) -> Option<&ProviderError> {
        match self {
            TextError::Provider { source, .. } => Some(source),
            TextError::ZeroOrder => None,
        }
    }
}

/// A word token. `span` holds byte offsets into the source string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub surface: String,
    pub lemma: String,
    pub span: (usize, usize),
}

#[inline]
fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

/// Byte spans of maximal letter/digit runs.
pub fn token_spans(text: &str) -> impl Iterator<Item = (usize, usize)> + '_ {
    let mut chars = text.char_indices().peekable();
    std::iter::from_fn(move || {
        let start = loop {
            let (i, c) = chars.next()?;
            if is_word_char(c) {
                break i;
            }
        };
        let mut end = text.len();
        while let Some(&(i, c)) = chars.peek() {
            if !is_word_char(c) {
                end = i;
                break;
            }
            chars.next();
        }
        Some((start, end))
    })
}

/// Splits on everything that is not a letter or digit. Lemmas start out as
/// the lowercased surface.
pub fn tokenize(text: &str) -> Vec<Token> {
    token_spans(text)
        .map(|(s, e)| {
            let surface = &text[s..e];
            Token {
                surface: surface.to_string(),
                lemma: surface.to_lowercase(),
                span: (s, e),
            }
        })
        .collect()
}

/// Lowercased surface words, without lemmatization.
pub fn words_lower(text: &str) -> Vec<String> {
    token_spans(text).map(|(s, e)| text[s..e].to_lowercase()).collect()
}

/// Fills in lemmas from `provider`. Provider lemmas are lowercased; an empty
/// lemma falls back to the lowercased surface. When the provider fails and
/// `fallback` is set every token gets its lowercased surface instead.
pub fn lemmatize(
    tokens: &mut [Token],
    provider: &dyn Lemmatizer,
    fallback: bool,
) -> Result<(), TextError> {
    if tokens.is_empty() {
        return Ok(());
    }
    let words: Vec<&str> = tokens.iter().map(|t| t.surface.as_str()).collect();
    match provider.lemmatize(&words) {
        Ok(lemmas) => {
            for (tok, lemma) in tokens.iter_mut().zip(lemmas) {
                let lemma = lemma.trim().to_lowercase();
                tok.lemma = if lemma.is_empty() {
                    tok.surface.to_lowercase()
                } else {
                    lemma
                };
            }
            Ok(())
        }
        Err(source) if fallback => {
            log::debug!("lemmatizer `{}` failed, using lowercase: {source}", provider.name());
            for tok in tokens.iter_mut() {
                tok.lemma = tok.surface.to_lowercase();
            }
            Ok(())
        }
        Err(source) => Err(TextError::Provider {
            provider: provider.name().to_string(),
            source,
        }),
    }
}

/// A lemmatizer plus its fallback policy.
#[derive(Clone)]
pub struct Analyzer {
    pub lemmatizer: Arc<dyn Lemmatizer>,
    pub fallback: bool,
}

impl Analyzer {
    pub fn new(lemmatizer: Arc<dyn Lemmatizer>) -> Self {
        Analyzer {
            lemmatizer,
            fallback: true,
        }
    }

    pub fn tokens(&self, text: &str) -> Result<Vec<Token>, TextError> {
        let mut toks = tokenize(text);
        lemmatize(&mut toks, self.lemmatizer.as_ref(), self.fallback)?;
        Ok(toks)
    }

    pub fn lemmas(&self, text: &str) -> Result<Vec<String>, TextError> {
        Ok(self.tokens(text)?.into_iter().map(|t| t.lemma).collect())
    }
}

/// Interrogative words, as lemmas.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WhLexicon {
    pub words: BTreeSet<String>,
}

pub const DEFAULT_WH_WORDS: [&str; 15] = [
    "кто", "что", "какой", "чей", "где", "который", "откуда", "сколько", "каковой", "каков",
    "зачем", "когда", "почему", "чем", "как",
];

impl Default for WhLexicon {
    fn default() -> Self {
        WhLexicon {
            words: DEFAULT_WH_WORDS.iter().map(|w| w.to_string()).collect(),
        }
    }
}

impl WhLexicon {
    pub fn new<I: IntoIterator<Item = S>, S: Into<String>>(words: I) -> Self {
        WhLexicon {
            words: words.into_iter().map(|w| w.into().to_lowercase()).collect(),
        }
    }

    pub fn contains(&self, lemma: &str) -> bool {
        self.words.contains(lemma)
    }
}

pub fn count_interrogatives(
    question: &str,
    lexicon: &WhLexicon,
    analyzer: &Analyzer,
) -> Result<usize, TextError> {
    Ok(analyzer
        .tokens(question)?
        .iter()
        .filter(|t| lexicon.contains(&t.lemma))
        .count())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Person,
    Location,
    Organization,
    Other,
}

impl std::str::FromStr for EntityKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "person" | "per" => Ok(EntityKind::Person),
            "location" | "loc" => Ok(EntityKind::Location),
            "organization" | "org" => Ok(EntityKind::Organization),
            "other" | "misc" => Ok(EntityKind::Other),
            _ => Err(format!("unknown entity kind `{s}`")),
        }
    }
}

/// A named entity. `span` holds byte offsets and `text == source[span]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entity {
    pub text: String,
    pub kind: EntityKind,
    pub span: (usize, usize),
}

/// Entities ordered by span. On provider failure with `fallback` set, the
/// capitalization heuristic is used instead.
pub fn extract_entities(
    text: &str,
    provider: &dyn EntityRecognizer,
    fallback: bool,
) -> Result<Vec<Entity>, TextError> {
    if text.is_empty() {
        return Ok(Vec::new());
    }
    let mut ents = match provider.entities(text) {
        Ok(ents) => ents,
        Err(source) if fallback => {
            log::debug!("NER `{}` failed, using capitalization fallback: {source}", provider.name());
            CapitalizationNer.entities(text).map_err(|source| TextError::Provider {
                provider: CapitalizationNer.name().to_string(),
                source,
            })?
        }
        Err(source) => {
            return Err(TextError::Provider {
                provider: provider.name().to_string(),
                source,
            })
        }
    };
    ents.sort_by(|a, b| a.span.cmp(&b.span).then(a.kind.cmp(&b.kind)));
    Ok(ents)
}

/// Unit-cost Levenshtein distance over arbitrary symbols.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let subst = prev[j] + usize::from(x != y);
            cur[j + 1] = subst.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `1 - dist / max(len)`; two empty sequences are identical.
pub fn similarity_ratio<T: PartialEq>(a: &[T], b: &[T]) -> f64 {
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 1.0;
    }
    1.0 - edit_distance(a, b) as f64 / longest as f64
}

/// Character-level Levenshtein similarity ratio in `[0, 1]`.
pub fn levenshtein_similarity(a: &str, b: &str) -> f64 {
    if a == b {
        return 1.0;
    }
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    similarity_ratio(&a, &b)
}

/// Token-level variant: edits count whole lowercased words.
pub fn token_levenshtein_similarity(a: &str, b: &str) -> f64 {
    similarity_ratio(&words_lower(a), &words_lower(b))
}

/// All contiguous `n`-token windows with multiplicity.
pub fn ngrams<T: Eq + Hash>(tokens: &[T], n: usize) -> Result<HashMap<&[T], usize>, TextError> {
    if n == 0 {
        return Err(TextError::ZeroOrder);
    }
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w).or_insert(0) += 1;
        }
    }
    Ok(out)
}

/// Byte ranges of sentences, split after `.`, `!`, `?` or `…` followed by
/// whitespace. Ranges are trimmed and never empty.
pub fn sentence_spans(text: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut iter = text.char_indices().peekable();
    while let Some((i, c)) = iter.next() {
        if matches!(c, '.' | '!' | '?' | '…') {
            let end = i + c.len_utf8();
            if iter.peek().is_none_or(|&(_, n)| n.is_whitespace()) {
                push_trimmed(text, start, end, &mut out);
                start = end;
            }
        }
    }
    push_trimmed(text, start, text.len(), &mut out);
    out
}

fn push_trimmed(text: &str, start: usize, end: usize, out: &mut Vec<(usize, usize)>) {
    let slice = &text[start..end];
    let lead = slice.len() - slice.trim_start().len();
    let trail = slice.len() - slice.trim_end().len();
    if lead + trail < slice.len() {
        out.push((start + lead, end - trail));
    }
}
