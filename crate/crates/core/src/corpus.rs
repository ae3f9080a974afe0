//! Domain records and their JSONL interchange.
//!
//! Every record is one JSON object per LF-terminated line. Field order inside
//! an object follows the struct declaration order and score maps are sorted,
//! so serialization is byte-stable for a fixed input.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filter::Stage;

/// Default cap on malformed lines tolerated by the readers.
pub const DEFAULT_ERROR_CAP: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainTag {
    Wiki,
    News,
    Social,
    Reviews,
    Fiction,
    Other,
}

impl DomainTag {
    pub fn as_str(self) -> &'static str {
        match self {
            DomainTag::Wiki => "wiki",
            DomainTag::News => "news",
            DomainTag::Social => "social",
            DomainTag::Reviews => "reviews",
            DomainTag::Fiction => "fiction",
            DomainTag::Other => "other",
        }
    }
}

impl std::str::FromStr for DomainTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "wiki" => Ok(DomainTag::Wiki),
            "news" => Ok(DomainTag::News),
            "social" => Ok(DomainTag::Social),
            "reviews" => Ok(DomainTag::Reviews),
            "fiction" => Ok(DomainTag::Fiction),
            "other" => Ok(DomainTag::Other),
            _ => Err(format!("unknown domain tag `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelTag {
    GptStyle,
    T5Style,
    Stub,
}

/// A source text unit that QA pairs are generated from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Passage {
    pub id: String,
    #[serde(default)]
    pub title: String,
    pub text: String,
    #[serde(default)]
    pub categories: Vec<String>,
    #[serde(default)]
    pub batch: u32,
    pub domain_tag: DomainTag,
}

impl Passage {
    pub fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("passage id is empty".into());
        }
        if self.text.trim().is_empty() {
            return Err(format!("passage `{}` has empty text", self.id));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAPair {
    pub question: String,
    pub answer: String,
    pub gen_index: u32,
}

/// Per-triplet audit record of the filtration cascade.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub passed: bool,
    pub rejected_at: Option<Stage>,
    #[serde(default)]
    pub scores: BTreeMap<String, f64>,
    #[serde(default)]
    pub gold_answer: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub missing_entities: Vec<String>,
    /// `gen_index` of the earlier pair this one duplicates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duplicate_of: Option<u32>,
    /// Set when a provider failed on this triplet.
    #[serde(default, skip_serializing_if = "is_false")]
    pub unresolved: bool,
}

fn is_false(b: &bool) -> bool {
    !*b
}

impl FilterVerdict {
    pub fn passing() -> Self {
        FilterVerdict {
            passed: true,
            ..Default::default()
        }
    }

    pub fn reject(&mut self, stage: Stage) {
        self.passed = false;
        self.rejected_at = Some(stage);
    }

    pub fn is_consistent(&self) -> bool {
        self.passed != self.rejected_at.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triplet {
    pub passage_id: String,
    pub pair: QAPair,
    pub model_tag: ModelTag,
    #[serde(default)]
    pub verdict: Option<FilterVerdict>,
}

impl Triplet {
    pub fn validate(&self) -> Result<(), String> {
        if self.pair.question.trim().is_empty() {
            return Err(format!("triplet for `{}` has an empty question", self.passage_id));
        }
        if self.pair.answer.trim().is_empty() {
            return Err(format!("triplet for `{}` has an empty answer", self.passage_id));
        }
        Ok(())
    }

    /// True when the triplet has no verdict yet or its verdict passed.
    pub fn survived(&self) -> bool {
        self.verdict.as_ref().is_none_or(|v| v.passed)
    }
}

/// Records that can be checked after decoding a line.
pub trait Validate {
    fn check(&self) -> Result<(), String>;
}

impl Validate for Passage {
    fn check(&self) -> Result<(), String> {
        self.validate()
    }
}

impl Validate for Triplet {
    fn check(&self) -> Result<(), String> {
        self.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

impl std::fmt::Display for LineError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("{path}: {source}")]
    File { path: PathBuf, source: io::Error },
    #[error("more than {cap} malformed lines (last at line {line})")]
    TooManyMalformed { cap: usize, line: usize },
    #[error("duplicate passage id `{id}` at line {line} (first seen at line {first_line})")]
    DuplicateId {
        id: String,
        line: usize,
        first_line: usize,
    },
    #[error("{0}")]
    Invalid(String),
}

/// Streams `(line_number, record)` pairs from line-delimited JSON.
/// Blank lines are skipped; line numbers are 1-based.
pub struct JsonlReader<R, T> {
    lines: io::Lines<R>,
    line_no: usize,
    _marker: PhantomData<T>,
}

impl<R: BufRead, T> JsonlReader<R, T> {
    pub fn new(reader: R) -> Self {
        JsonlReader {
            lines: reader.lines(),
            line_no: 0,
            _marker: PhantomData,
        }
    }
}

impl<R: BufRead, T: DeserializeOwned + Validate> Iterator for JsonlReader<R, T> {
    type Item = Result<(usize, Result<T, LineError>), io::Error>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(line) => line,
                Err(e) => return Some(Err(e)),
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            let line_no = self.line_no;
            let parsed = serde_json::from_str::<T>(&line)
                .map_err(|e| e.to_string())
                .and_then(|rec| rec.check().map(|()| rec))
                .map_err(|message| LineError {
                    line: line_no,
                    message,
                });
            return Some(Ok((line_no, parsed)));
        }
    }
}

#[derive(Debug)]
pub struct ReadOutcome<T> {
    pub records: Vec<T>,
    pub errors: Vec<LineError>,
}

fn read_all<R: BufRead, T: DeserializeOwned + Validate>(
    reader: R,
    error_cap: usize,
    mut on_record: impl FnMut(usize, &T) -> Result<(), CorpusError>,
) -> Result<ReadOutcome<T>, CorpusError> {
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for item in JsonlReader::<R, T>::new(reader) {
        let (line, parsed) = item?;
        match parsed {
            Ok(rec) => {
                on_record(line, &rec)?;
                records.push(rec);
            }
            Err(err) => {
                log::warn!("skipping malformed record: {err}");
                errors.push(err);
                if errors.len() > error_cap {
                    return Err(CorpusError::TooManyMalformed {
                        cap: error_cap,
                        line,
                    });
                }
            }
        }
    }
    Ok(ReadOutcome { records, errors })
}

/// Reads passages in file order. Malformed lines are collected (up to
/// `error_cap`); a repeated id is a hard error.
pub fn read_passages<R: BufRead>(
    reader: R,
    error_cap: usize,
) -> Result<ReadOutcome<Passage>, CorpusError> {
    let mut seen: HashMap<String, usize> = HashMap::new();
    read_all(reader, error_cap, |line, p: &Passage| {
        if let Some(&first_line) = seen.get(&p.id) {
            return Err(CorpusError::DuplicateId {
                id: p.id.clone(),
                line,
                first_line,
            });
        }
        seen.insert(p.id.clone(), line);
        Ok(())
    })
}

pub fn read_triplets<R: BufRead>(
    reader: R,
    error_cap: usize,
) -> Result<ReadOutcome<Triplet>, CorpusError> {
    read_all(reader, error_cap, |_, _: &Triplet| Ok(()))
}

#[derive(Debug, Error)]
#[error("write failed after {written} records: {source}")]
pub struct WriteError {
    pub written: usize,
    #[source]
    pub source: io::Error,
}

/// Writes one JSON object per line and returns the number written.
pub fn write_jsonl<'a, T, I, W>(items: I, sink: &mut W) -> Result<usize, WriteError>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
    W: Write + ?Sized,
{
    let mut written = 0;
    let mut buf = Vec::with_capacity(512);
    for item in items {
        buf.clear();
        serde_json::to_writer(&mut buf, item).map_err(|e| WriteError {
            written,
            source: io::Error::new(io::ErrorKind::InvalidData, e),
        })?;
        buf.push(b'\n');
        sink.write_all(&buf).map_err(|source| WriteError { written, source })?;
        written += 1;
    }
    sink.flush().map_err(|source| WriteError { written, source })?;
    Ok(written)
}

pub fn write_triplets<'a, I, W>(triplets: I, sink: &mut W) -> Result<usize, WriteError>
where
    I: IntoIterator<Item = &'a Triplet>,
    W: Write + ?Sized,
{
    write_jsonl(triplets, sink)
}

pub fn write_passages<'a, I, W>(passages: I, sink: &mut W) -> Result<usize, WriteError>
where
    I: IntoIterator<Item = &'a Passage>,
    W: Write + ?Sized,
{
    write_jsonl(passages, sink)
}

/// Opens a file for buffered reading, decompressing `.gz` transparently.
pub fn open_input(path: &Path) -> Result<Box<dyn BufRead>, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::File {
        path: path.to_path_buf(),
        source,
    })?;
    if path.extension().is_some_and(|e| e == "gz") {
        Ok(Box::new(BufReader::new(flate2::read::MultiGzDecoder::new(file))))
    } else {
        Ok(Box::new(BufReader::new(file)))
    }
}

/// File name of one batch inside a passage store directory.
pub fn batch_file_name(batch: u32) -> String {
    format!("batch-{batch:02}.jsonl")
}

/// Passages keyed by id, kept in (batch, id) order.
#[derive(Debug, Default, Clone)]
pub struct PassageStore {
    passages: Vec<Passage>,
    index: HashMap<String, usize>,
}

impl PassageStore {
    pub fn new(mut passages: Vec<Passage>) -> Result<Self, CorpusError> {
        passages.sort_by(|a, b| (a.batch, &a.id).cmp(&(b.batch, &b.id)));
        let mut index = HashMap::with_capacity(passages.len());
        for (i, p) in passages.iter().enumerate() {
            if index.insert(p.id.clone(), i).is_some() {
                return Err(CorpusError::Invalid(format!("duplicate passage id `{}`", p.id)));
            }
        }
        Ok(PassageStore { passages, index })
    }

    pub fn get(&self, id: &str) -> Option<&Passage> {
        self.index.get(id).map(|&i| &self.passages[i])
    }

    pub fn passages(&self) -> &[Passage] {
        &self.passages
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    /// Loads a store from a directory of `batch-NN.jsonl` files, or from a
    /// single JSONL file.
    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let files = if path.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(path)
                .map_err(|source| CorpusError::File {
                    path: path.to_path_buf(),
                    source,
                })?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    p.file_name()
                        .and_then(|n| n.to_str())
                        .is_some_and(|n| n.starts_with("batch-") && n.ends_with(".jsonl"))
                })
                .collect();
            files.sort();
            files
        } else {
            vec![path.to_path_buf()]
        };
        let mut all = Vec::new();
        for file in files {
            let outcome = read_passages(open_input(&file)?, DEFAULT_ERROR_CAP)?;
            if !outcome.errors.is_empty() {
                log::warn!("{}: {} malformed lines skipped", file.display(), outcome.errors.len());
            }
            all.extend(outcome.records);
        }
        Self::new(all)
    }

    /// Writes one `batch-NN.jsonl` file per batch present in the store.
    pub fn write_dir(&self, dir: &Path, batch_count: u32) -> Result<(), CorpusError> {
        std::fs::create_dir_all(dir)?;
        for batch in 0..batch_count {
            let path = dir.join(batch_file_name(batch));
            let mut out = io::BufWriter::new(File::create(&path)?);
            write_passages(self.passages.iter().filter(|p| p.batch == batch), &mut out)
                .map_err(|e| CorpusError::Io(e.source))?;
        }
        Ok(())
    }
}
