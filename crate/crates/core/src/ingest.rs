//! Passage store construction from raw text records.

use std::collections::HashSet;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{
    open_input, CorpusError, DomainTag, JsonlReader, Passage, PassageStore, Validate, DEFAULT_ERROR_CAP,
};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("invalid ingest config: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// One input record. Wiki records carry a title and categories; other
/// domains usually only have text.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RawRecord {
    #[serde(default)]
    pub id: Option<String>,
    #[serde(default)]
    pub title: Option<String>,
    pub text: String,
    #[serde(default)]
    pub categories: Vec<String>,
}

impl Validate for RawRecord {
    fn check(&self) -> Result<(), String> {
        Ok(())
    }
}

pub const DEFAULT_EXCLUDE_PATTERNS: [&str; 3] = ["страницы значений", "неоднозначност", "disambiguation"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub domain: DomainTag,
    pub batch_count: u32,
    /// Inclusive bounds on the trimmed text length in characters.
    pub min_chars: Option<usize>,
    pub max_chars: Option<usize>,
    /// Case-insensitive substrings of category names that mark a record
    /// for exclusion.
    pub exclude_category_patterns: Vec<String>,
    pub seed: u64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig::for_domain(DomainTag::Wiki)
    }
}

impl IngestConfig {
    /// Defaults with the length limits used for each text genre.
    pub fn for_domain(domain: DomainTag) -> Self {
        let (min_chars, max_chars) = match domain {
            DomainTag::News => (None, Some(3500)),
            DomainTag::Social | DomainTag::Fiction => (None, Some(3000)),
            // over 500, up to 1007
            DomainTag::Reviews => (Some(501), Some(1007)),
            DomainTag::Wiki | DomainTag::Other => (None, None),
        };
        IngestConfig {
            domain,
            batch_count: 20,
            min_chars,
            max_chars,
            exclude_category_patterns: DEFAULT_EXCLUDE_PATTERNS.iter().map(|s| s.to_string()).collect(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.batch_count == 0 {
            return Err("batch_count must be at least 1".into());
        }
        if let (Some(lo), Some(hi)) = (self.min_chars, self.max_chars) {
            if lo >= hi {
                return Err(format!("min_chars ({lo}) must be below max_chars ({hi})"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub records: usize,
    pub kept: usize,
    pub malformed: usize,
    pub empty_text: usize,
    pub disambiguation: usize,
    pub duplicate_text: usize,
    pub duplicate_id: usize,
    pub too_short: usize,
    pub too_long: usize,
    pub batch_sizes: Vec<usize>,
}

fn digest(parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    h.finalize().into()
}

/// Single-pass record filter. Feed records with [`Ingestor::push`], then
/// call [`Ingestor::finish`].
pub struct Ingestor {
    config: IngestConfig,
    patterns: Vec<String>,
    seen_text: HashSet<u128>,
    seen_id: HashSet<String>,
    kept: Vec<Passage>,
    report: IngestReport,
}

impl Ingestor {
    pub fn new(config: IngestConfig) -> Result<Self, IngestError> {
        config.validate().map_err(IngestError::Config)?;
        let patterns = config
            .exclude_category_patterns
            .iter()
            .map(|p| p.to_lowercase())
            .filter(|p| !p.is_empty())
            .collect();
        Ok(Ingestor {
            config,
            patterns,
            seen_text: HashSet::new(),
            seen_id: HashSet::new(),
            kept: Vec::new(),
            report: IngestReport::default(),
        })
    }

    pub fn push_malformed(&mut self) {
        self.report.records += 1;
        self.report.malformed += 1;
    }

    pub fn push(&mut self, rec: RawRecord) {
        let r = &mut self.report;
        r.records += 1;
        let text = rec.text.trim();
        if text.is_empty() {
            r.empty_text += 1;
            return;
        }
        if rec.categories.iter().any(|c| {
            let c = c.to_lowercase();
            self.patterns.iter().any(|p| c.contains(p.as_str()))
        }) {
            r.disambiguation += 1;
            return;
        }
        let len = text.chars().count();
        if self.config.min_chars.is_some_and(|m| len < m) {
            r.too_short += 1;
            return;
        }
        if self.config.max_chars.is_some_and(|m| len > m) {
            r.too_long += 1;
            return;
        }
        let hash = digest(&[text.as_bytes()]);
        let key = u128::from_le_bytes(hash[..16].try_into().expect("16 bytes"));
        if self.seen_text.contains(&key) {
            r.duplicate_text += 1;
            return;
        }
        let id = match rec.id.filter(|i| !i.trim().is_empty()) {
            Some(id) => id,
            None => format!("{}-{}", self.config.domain.as_str(), hex::encode(&hash[..8])),
        };
        if !self.seen_id.insert(id.clone()) {
            r.duplicate_id += 1;
            return;
        }
        self.seen_text.insert(key);
        self.kept.push(Passage {
            id,
            title: rec.title.unwrap_or_default(),
            text: text.to_string(),
            categories: rec.categories,
            batch: 0,
            domain_tag: self.config.domain,
        });
    }

    pub fn finish(mut self) -> Result<(PassageStore, IngestReport), IngestError> {
        assign_batches(&mut self.kept, self.config.batch_count, self.config.seed);
        let mut sizes = vec![0usize; self.config.batch_count as usize];
        for p in &self.kept {
            sizes[p.batch as usize] += 1;
        }
        self.report.kept = self.kept.len();
        self.report.batch_sizes = sizes;
        if self.kept.is_empty() {
            log::warn!("passage store is empty after filtering");
        }
        Ok((PassageStore::new(self.kept)?, self.report))
    }
}

/// Filters `records` and assigns batches.
pub fn ingest<I>(records: I, config: IngestConfig) -> Result<(PassageStore, IngestReport), IngestError>
where
    I: IntoIterator<Item = RawRecord>,
{
    let mut ing = Ingestor::new(config)?;
    for r in records {
        ing.push(r);
    }
    ing.finish()
}

/// Feeds every JSONL record of `reader` into `ing`. Malformed lines are
/// counted; more than the default cap is an error.
pub fn ingest_reader<R: BufRead>(reader: R, ing: &mut Ingestor) -> Result<(), IngestError> {
    let mut errors = 0;
    for item in JsonlReader::<R, RawRecord>::new(reader) {
        let (line, parsed) = item.map_err(CorpusError::Io)?;
        match parsed {
            Ok(rec) => ing.push(rec),
            Err(e) => {
                log::warn!("skipping malformed record: {e}");
                ing.push_malformed();
                errors += 1;
                if errors > DEFAULT_ERROR_CAP {
                    return Err(CorpusError::TooManyMalformed {
                        cap: DEFAULT_ERROR_CAP,
                        line,
                    }
                    .into());
                }
            }
        }
    }
    Ok(())
}

pub fn ingest_files(paths: &[&Path], config: IngestConfig) -> Result<(PassageStore, IngestReport), IngestError> {
    let mut ing = Ingestor::new(config)?;
    for p in paths {
        ingest_reader(open_input(p)?, &mut ing)?;
    }
    ing.finish()
}

/// Balanced, seeded batch assignment: passages are ranked by a hash of
/// `(seed, id)` and dealt round-robin, so sizes differ by at most one.
pub fn assign_batches(passages: &mut [Passage], batch_count: u32, seed: u64) {
    let batch_count = batch_count.max(1) as usize;
    let mut keyed: Vec<(u64, usize)> = passages
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let h = digest(&[&seed.to_le_bytes(), p.id.as_bytes()]);
            (u64::from_le_bytes(h[..8].try_into().expect("8 bytes")), i)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| passages[a.1].id.cmp(&passages[b.1].id)));
    for (rank, (_, i)) in keyed.into_iter().enumerate() {
        passages[i].batch = (rank % batch_count) as u32;
    }
}
