//! Model-backed roles behind a fixed interface.
//!
//! Each role (generator, reader, NER, lemmatizer, embedder, trainer) is a
//! trait with two families of implementations: deterministic in-process
//! stubs (selected with the `stub:` endpoint scheme) and JSON-over-HTTP
//! clients speaking the versioned wire protocol in [`http`].

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::ModelTag;
use crate::genio::{GenParams, PromptStyle};
use crate::textproc::Entity;

pub mod http;
pub mod stub;

pub use http::HttpOptions;
pub use stub::{
    CapitalizationNer, EmptyTrainer, ExtractiveTrainer, HashEmbedder, LowercaseLemmatizer,
    OracleTrainer, StubGenerator, StubReader, TableEmbedder, TableLemmatizer, TableNer,
    TableReader,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Generator,
    Reader,
    Ner,
    Lemmatizer,
    Embedder,
    Trainer,
}

impl Role {
    pub const ALL: [Role; 6] = [
        Role::Generator,
        Role::Reader,
        Role::Ner,
        Role::Lemmatizer,
        Role::Embedder,
        Role::Trainer,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Generator => "generator",
            Role::Reader => "reader",
            Role::Ner => "ner",
            Role::Lemmatizer => "lemmatizer",
            Role::Embedder => "embedder",
            Role::Trainer => "trainer",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProviderError {
    #[error("{role} provider unreachable: {message}")]
    Unreachable { role: Role, message: String },
    #[error("{role} provider reports the role as unavailable")]
    Unavailable { role: Role },
    #[error("{role} provider protocol violation: {message}")]
    Protocol { role: Role, message: String },
    #[error("{role} provider failed: {message}")]
    Failed { role: Role, message: String },
}

impl ProviderError {
    pub fn role(&self) -> Role {
        match self {
            ProviderError::Unreachable { role, .. }
            | ProviderError::Unavailable { role }
            | ProviderError::Protocol { role, .. }
            | ProviderError::Failed { role, .. } => *role,
        }
    }

    pub fn is_unreachable(&self) -> bool {
        matches!(self, ProviderError::Unreachable { .. })
    }

    pub fn failed(role: Role, message: impl Into<String>) -> Self {
        ProviderError::Failed {
            role,
            message: message.into(),
        }
    }
}

/// Where a role is served from: `stub:[variant]` or an `http(s)://` base URL.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProviderSpec {
    Stub(String),
    Http(String),
}

impl ProviderSpec {
    pub fn parse(s: &str) -> Result<Self, String> {
        let s = s.trim();
        if let Some(variant) = s.strip_prefix("stub:") {
            Ok(ProviderSpec::Stub(variant.to_string()))
        } else if s == "stub" {
            Ok(ProviderSpec::Stub(String::new()))
        } else if s.starts_with("http://") || s.starts_with("https://") {
            Ok(ProviderSpec::Http(s.trim_end_matches('/').to_string()))
        } else {
            Err(format!("unsupported endpoint `{s}` (expected stub:[variant] or http(s)://...)"))
        }
    }

    pub fn is_stub(&self) -> bool {
        matches!(self, ProviderSpec::Stub(_))
    }
}

impl fmt::Display for ProviderSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProviderSpec::Stub(v) => write!(f, "stub:{v}"),
            ProviderSpec::Http(url) => f.write_str(url),
        }
    }
}

pub trait Lemmatizer: Send + Sync {
    fn name(&self) -> &str;
    /// Returns one lemma per input word.
    fn lemmatize(&self, words: &[&str]) -> Result<Vec<String>, ProviderError>;
}

pub trait EntityRecognizer: Send + Sync {
    fn name(&self) -> &str;
    /// Entities with byte spans into `text`.
    fn entities(&self, text: &str) -> Result<Vec<Entity>, ProviderError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReaderAnswer {
    pub answer: String,
    pub score: f64,
}

pub trait Reader: Send + Sync {
    fn answer(&self, context: &str, question: &str) -> Result<ReaderAnswer, ProviderError>;
}

pub struct GenerateRequest<'a> {
    /// Fully formatted prompt.
    pub prompt: &'a str,
    pub style: &'a PromptStyle,
    pub params: &'a GenParams,
    /// Index of the call for one passage when generating one pair per call.
    pub call_index: u32,
}

pub trait Generator: Send + Sync {
    fn generate(&self, req: &GenerateRequest<'_>) -> Result<String, ProviderError>;

    fn model_tag(&self, style: &PromptStyle) -> ModelTag {
        style.style_tag.model_tag()
    }
}

pub trait Embedder: Send + Sync {
    /// One vector per word; `None` marks out-of-vocabulary words.
    fn embed(&self, words: &[&str]) -> Result<Vec<Option<Vec<f64>>>, ProviderError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRequest {
    /// Path of a JSONL file of training items.
    pub samples_ref: String,
    pub sample_count: usize,
    pub params: serde_json::Value,
    /// Handle of a model to continue training from.
    pub base: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictItem {
    pub id: String,
    pub context: String,
    pub question: String,
}

pub trait Trainer: Send + Sync {
    fn train(&self, req: &TrainRequest) -> Result<String, ProviderError>;
    fn predict(&self, handle: &str, items: &[PredictItem]) -> Result<Vec<String>, ProviderError>;
}

/// Endpoint per role; unspecified roles use `stub:`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Endpoints {
    pub generator: Option<String>,
    pub reader: Option<String>,
    pub ner: Option<String>,
    pub lemmatizer: Option<String>,
    pub embedder: Option<String>,
    pub trainer: Option<String>,
}

impl Endpoints {
    pub fn get(&self, role: Role) -> Option<&str> {
        match role {
            Role::Generator => self.generator.as_deref(),
            Role::Reader => self.reader.as_deref(),
            Role::Ner => self.ner.as_deref(),
            Role::Lemmatizer => self.lemmatizer.as_deref(),
            Role::Embedder => self.embedder.as_deref(),
            Role::Trainer => self.trainer.as_deref(),
        }
    }

    pub fn set(&mut self, role: Role, value: String) {
        let slot = match role {
            Role::Generator => &mut self.generator,
            Role::Reader => &mut self.reader,
            Role::Ner => &mut self.ner,
            Role::Lemmatizer => &mut self.lemmatizer,
            Role::Embedder => &mut self.embedder,
            Role::Trainer => &mut self.trainer,
        };
        *slot = Some(value);
    }

    pub fn spec(&self, role: Role) -> Result<ProviderSpec, String> {
        ProviderSpec::parse(self.get(role).unwrap_or("stub:"))
    }

    pub fn resolved(&self) -> BTreeMap<Role, String> {
        Role::ALL
            .iter()
            .map(|&r| (r, self.get(r).unwrap_or("stub:").to_string()))
            .collect()
    }
}

/// The full set of role implementations used by one run.
#[derive(Clone)]
pub struct Providers {
    pub generator: Arc<dyn Generator>,
    pub reader: Arc<dyn Reader>,
    pub ner: Arc<dyn EntityRecognizer>,
    pub lemmatizer: Arc<dyn Lemmatizer>,
    pub embedder: Arc<dyn Embedder>,
    pub trainer: Arc<dyn Trainer>,
}

impl Providers {
    /// All roles served by the default in-process stubs.
    pub fn stubs() -> Self {
        Providers {
            generator: Arc::new(StubGenerator),
            reader: Arc::new(StubReader),
            ner: Arc::new(CapitalizationNer),
            lemmatizer: Arc::new(TableLemmatizer::builtin()),
            embedder: Arc::new(HashEmbedder::default()),
            trainer: Arc::new(ExtractiveTrainer),
        }
    }

    pub fn from_endpoints(endpoints: &Endpoints, options: &HttpOptions) -> Result<Self, String> {
        let stubs = Providers::stubs();
        let mut out = stubs.clone();
        for role in Role::ALL {
            match endpoints.spec(role)? {
                ProviderSpec::Stub(variant) => match (role, variant.as_str()) {
                    (_, "") => {}
                    (Role::Lemmatizer, "lowercase") => out.lemmatizer = Arc::new(LowercaseLemmatizer),
                    (Role::Trainer, "empty") => out.trainer = Arc::new(EmptyTrainer),
                    (Role::Trainer, "oracle") => {
                        // The oracle needs gold answers; callers install it.
                    }
                    (role, v) => return Err(format!("unknown stub variant `{v}` for {role}")),
                },
                ProviderSpec::Http(url) => {
                    let client = http::HttpClient::new(role, &url, options);
                    match role {
                        Role::Generator => out.generator = Arc::new(client),
                        Role::Reader => out.reader = Arc::new(client),
                        Role::Ner => out.ner = Arc::new(client),
                        Role::Lemmatizer => out.lemmatizer = Arc::new(client),
                        Role::Embedder => out.embedder = Arc::new(client),
                        Role::Trainer => out.trainer = Arc::new(client),
                    }
                }
            }
        }
        Ok(out)
    }
}
