//! Synthetic QA dataset engine.
//!
//! Builds passage stores from raw corpora, asks a generator model for
//! question/answer pairs, runs the heuristic filtration cascade over the
//! resulting triplets, and computes corpus diagnostics and SQuAD-style
//! evaluation scores. Model-backed roles (generator, reader, NER,
//! lemmatizer, embedder, trainer) sit behind [`providers`] so that every
//! stage can run against deterministic in-process stubs.

pub mod cli;
pub mod corpus;
pub mod evalharness;
pub mod filter;
pub mod genio;
pub mod ingest;
pub mod metrics;
pub mod providers;
pub mod stats;
pub mod textproc;

pub use corpus::{DomainTag, FilterVerdict, ModelTag, Passage, PassageStore, QAPair, Triplet};
pub use filter::{FilterConfig, FilterPipeline, FilterReport, Stage, StagePlan};
pub use providers::{ProviderError, ProviderSpec, Providers};
