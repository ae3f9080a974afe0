//! JSON-over-HTTP provider client, wire protocol v1.
//!
//! Every call is `POST {base}/v1/{op}` with a JSON body:
//!
//! | op          | request                                   | response                                  |
//! |-------------|-------------------------------------------|-------------------------------------------|
//! | `generate`  | `{text, style, params, call_index}`       | `{raw}`                                   |
//! | `answer`    | `{context, question}`                     | `{answer, score}` with score in `[0, 1]`  |
//! | `ner`       | `{text}`                                  | `[{text, kind, start, end}]`              |
//! | `lemmatize` | `{tokens}`                                | `{lemmas}`, same length as `tokens`       |
//! | `embed`     | `{words}`                                 | `{vectors, dim}`, `null` for OOV words    |
//! | `train`     | `{samples_ref, sample_count, params, base}` | `{handle}`                              |
//! | `predict`   | `{handle, items: [{id, context, question}]}` | `{answers}`                            |
//!
//! NER offsets on the wire count Unicode scalar values. A `503` response
//! means the role is not loaded. `GET {base}/health` reports loaded roles.

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{
    EntityRecognizer, Embedder, GenerateRequest, Generator, Lemmatizer, PredictItem,
    ProviderError, Reader, ReaderAnswer, Role, TrainRequest, Trainer,
};
use crate::genio::{GenParams, StyleTag};
use crate::textproc::{Entity, EntityKind};

pub const PROTOCOL_PREFIX: &str = "/v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpOptions {
    pub timeout_ms: u64,
    /// Upper bound on concurrent requests per client.
    pub max_in_flight: usize,
}

impl Default for HttpOptions {
    fn default() -> Self {
        HttpOptions {
            timeout_ms: 60_000,
            max_in_flight: 8,
        }
    }
}

#[derive(Serialize)]
pub struct GenerateBody<'a> {
    pub text: &'a str,
    pub style: StyleTag,
    pub params: &'a GenParams,
    pub call_index: u32,
}

#[derive(Deserialize)]
struct GenerateReply {
    raw: String,
}

#[derive(Serialize)]
pub struct AnswerBody<'a> {
    pub context: &'a str,
    pub question: &'a str,
}

#[derive(Serialize)]
pub struct NerBody<'a> {
    pub text: &'a str,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireEntity {
    pub text: String,
    pub kind: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Serialize)]
pub struct LemmatizeBody<'a> {
    pub tokens: &'a [&'a str],
}

#[derive(Deserialize)]
struct LemmatizeReply {
    lemmas: Vec<String>,
}

#[derive(Serialize)]
pub struct EmbedBody<'a> {
    pub words: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedReply {
    vectors: Vec<Option<Vec<f64>>>,
    dim: usize,
}

#[derive(Deserialize)]
struct TrainReply {
    handle: String,
}

#[derive(Serialize)]
pub struct PredictBody<'a> {
    pub handle: &'a str,
    pub items: &'a [PredictItem],
}

#[derive(Deserialize)]
struct PredictReply {
    answers: Vec<String>,
}

struct Permits {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Permits);

impl Permits {
    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// One role served over HTTP. Cloning shares the connection pool and the
/// in-flight limit.
#[derive(Clone)]
pub struct HttpClient {
    role: Role,
    base: String,
    agent: ureq::Agent,
    permits: Arc<Permits>,
}

impl HttpClient {
    pub fn new(role: Role, base: &str, options: &HttpOptions) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(options.timeout_ms)))
            .build();
        HttpClient {
            role,
            base: base.trim_end_matches('/').to_string(),
            agent: ureq::Agent::new_with_config(config),
            permits: Arc::new(Permits {
                free: Mutex::new(options.max_in_flight.max(1)),
                cv: Condvar::new(),
            }),
        }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    fn map_err(&self, err: ureq::Error) -> ProviderError {
        let role = self.role;
        match err {
            ureq::Error::StatusCode(503) => ProviderError::Unavailable { role },
            ureq::Error::StatusCode(code) => ProviderError::Failed {
                role,
                message: format!("HTTP status {code}"),
            },
            ureq::Error::Io(_)
            | ureq::Error::Timeout(_)
            | ureq::Error::HostNotFound
            | ureq::Error::ConnectionFailed => ProviderError::Unreachable {
                role,
                message: err.to_string(),
            },
            other => ProviderError::Protocol {
                role,
                message: other.to_string(),
            },
        }
    }

    pub fn post<B: Serialize, R: DeserializeOwned>(&self, op: &str, body: &B) -> Result<R, ProviderError> {
        let url = format!("{}{PROTOCOL_PREFIX}/{op}", self.base);
        let _permit = self.permits.acquire();
        let mut resp = self.agent.post(&url).send_json(body).map_err(|e| self.map_err(e))?;
        resp.body_mut().read_json::<R>().map_err(|e| ProviderError::Protocol {
            role: self.role,
            message: format!("bad `{op}` response: {e}"),
        })
    }

    /// `GET /health`, returned as raw JSON.
    pub fn health(&self) -> Result<serde_json::Value, ProviderError> {
        let url = format!("{}/health", self.base);
        let mut resp = self.agent.get(&url).call().map_err(|e| self.map_err(e))?;
        resp.body_mut().read_json().map_err(|e| ProviderError::Protocol {
            role: self.role,
            message: e.to_string(),
        })
    }

    fn protocol(&self, message: impl Into<String>) -> ProviderError {
        ProviderError::Protocol {
            role: self.role,
            message: message.into(),
        }
    }
}

impl Generator for HttpClient {
    fn generate(&self, req: &GenerateRequest<'_>) -> Result<String, ProviderError> {
        let reply: GenerateReply = self.post(
            "generate",
            &GenerateBody {
                text: req.prompt,
                style: req.style.style_tag,
                params: req.params,
                call_index: req.call_index,
            },
        )?;
        Ok(reply.raw)
    }
}

impl Reader for HttpClient {
    fn answer(&self, context: &str, question: &str) -> Result<ReaderAnswer, ProviderError> {
        let reply: ReaderAnswer = self.post("answer", &AnswerBody { context, question })?;
        if !(0.0..=1.0).contains(&reply.score) {
            return Err(self.protocol(format!("reader score {} outside [0, 1]", reply.score)));
        }
        Ok(reply)
    }
}

/// Converts wire entities (char offsets) into byte-span entities, checking
/// that each span is in range and matches the entity text.
pub fn entities_from_wire(text: &str, wire: Vec<WireEntity>) -> Result<Vec<Entity>, String> {
    let mut offsets: Vec<usize> = text.char_indices().map(|(i, _)| i).collect();
    offsets.push(text.len());
    wire.into_iter()
        .map(|w| {
            if w.start >= w.end || w.end >= offsets.len() {
                return Err(format!("entity span {}..{} out of range", w.start, w.end));
            }
            let (s, e) = (offsets[w.start], offsets[w.end]);
            if text[s..e] != w.text {
                return Err(format!("entity text `{}` does not match its span", w.text));
            }
            let kind = w.kind.parse::<EntityKind>()?;
            Ok(Entity {
                text: w.text,
                kind,
                span: (s, e),
            })
        })
        .collect()
}

impl EntityRecognizer for HttpClient {
    fn name(&self) -> &str {
        &self.base
    }

    fn entities(&self, text: &str) -> Result<Vec<Entity>, ProviderError> {
        let wire: Vec<WireEntity> = self.post("ner", &NerBody { text })?;
        entities_from_wire(text, wire).map_err(|m| self.protocol(m))
    }
}

impl Lemmatizer for HttpClient {
    fn name(&self) -> &str {
        &self.base
    }

    fn lemmatize(&self, words: &[&str]) -> Result<Vec<String>, ProviderError> {
        let reply: LemmatizeReply = self.post("lemmatize", &LemmatizeBody { tokens: words })?;
        if reply.lemmas.len() != words.len() {
            return Err(self.protocol(format!(
                "{} lemmas for {} tokens",
                reply.lemmas.len(),
                words.len()
            )));
        }
        Ok(reply.lemmas)
    }
}

impl Embedder for HttpClient {
    fn embed(&self, words: &[&str]) -> Result<Vec<Option<Vec<f64>>>, ProviderError> {
        let reply: EmbedReply = self.post("embed", &EmbedBody { words })?;
        if reply.vectors.len() != words.len() {
            return Err(self.protocol(format!("{} vectors for {} words", reply.vectors.len(), words.len())));
        }
        if reply.vectors.iter().flatten().any(|v| v.len() != reply.dim) {
            return Err(self.protocol(format!("vector length differs from dim {}", reply.dim)));
        }
        Ok(reply.vectors)
    }
}

impl Trainer for HttpClient {
    fn train(&self, req: &TrainRequest) -> Result<String, ProviderError> {
        let reply: TrainReply = self.post("train", req)?;
        Ok(reply.handle)
    }

    fn predict(&self, handle: &str, items: &[PredictItem]) -> Result<Vec<String>, ProviderError> {
        let reply: PredictReply = self.post("predict", &PredictBody { handle, items })?;
        if reply.answers.len() != items.len() {
            return Err(self.protocol(format!("{} answers for {} items", reply.answers.len(), items.len())));
        }
        Ok(reply.answers)
    }
}
