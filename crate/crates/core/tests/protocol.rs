//! Wire transcripts against an in-process mock sidecar.

mod common;

use common::sidecar::{post, MockSidecar};

use std::net::TcpListener;
use std::sync::Arc;

use qaforge_core::corpus::{DomainTag, Passage, PassageStore};
use qaforge_core::filter::{FilterConfig, FilterPipeline, Stage};
use qaforge_core::genio::{
    generate_for_passages, Checkpoint, GenError, GenOptions, GenParams, PromptStyle,
};
use qaforge_core::providers::http::{HttpClient, HttpOptions};
use qaforge_core::providers::{
    EntityRecognizer, Embedder, Endpoints, GenerateRequest, Generator, Lemmatizer, PredictItem,
    ProviderError, Reader, Role, TrainRequest, Trainer,
};
use qaforge_core::textproc::EntityKind;
use qaforge_core::{Providers, QAPair, Triplet};
use serde_json::json;

#[test]
fn generate_request_carries_prompt_style_params_and_call_index() {
    let sidecar = MockSidecar::json(|_| json!({"raw": "Кто? <[ANSWER]> Он</s>"}));
    let style = PromptStyle::gpt();
    let params = GenParams::default();
    let raw = sidecar
        .client(Role::Generator)
        .generate(&GenerateRequest {
            prompt: "<[TEXT]>Текст.<[QUESTION]>",
            style: &style,
            params: &params,
            call_index: 2,
        })
        .unwrap();
    assert_eq!(raw, "Кто? <[ANSWER]> Он</s>");
    assert_eq!(
        sidecar.requests(),
        [post(
            "/v1/generate",
            json!({
                "text": "<[TEXT]>Текст.<[QUESTION]>",
                "style": "gpt_style",
                "params": {
                    "max_length": 1048,
                    "beams": 7,
                    "no_repeat_ngram": 3,
                    "repetition_penalty": 2.0,
                    "pairs_per_passage": 3,
                    "mode": "single_pass"
                },
                "call_index": 2
            })
        )]
    );
}

#[test]
fn answer_transcript_and_score_range() {
    let sidecar = MockSidecar::json(|r| {
        if r.body["question"] == "Где?" {
            json!({"answer": "в Томске", "score": 0.97})
        } else {
            json!({"answer": "x", "score": 1.5})
        }
    });
    let reader = sidecar.client(Role::Reader);
    let got = reader.answer("Студия в Томске.", "Где?").unwrap();
    assert_eq!((got.answer.as_str(), got.score), ("в Томске", 0.97));
    assert_eq!(
        sidecar.requests()[0],
        post("/v1/answer", json!({"context": "Студия в Томске.", "question": "Где?"}))
    );
    let err = reader.answer("c", "other").unwrap_err();
    assert!(matches!(err, ProviderError::Protocol { role: Role::Reader, .. }), "{err:?}");
}

#[test]
fn ner_offsets_are_characters_and_spans_become_bytes() {
    let sidecar = MockSidecar::json(|_| {
        json!([
            {"text": "Пётр Орлов", "kind": "PER", "start": 0, "end": 10},
            {"text": "Томск", "kind": "location", "start": 19, "end": 24}
        ])
    });
    let text = "Пётр Орлов родился Томск.";
    let ents = sidecar.client(Role::Ner).entities(text).unwrap();
    assert_eq!(sidecar.requests()[0], post("/v1/ner", json!({"text": text})));
    assert_eq!(ents.len(), 2);
    assert_eq!(ents[0].kind, EntityKind::Person);
    assert_eq!(&text[ents[0].span.0..ents[0].span.1], "Пётр Орлов");
    assert_eq!(ents[1].kind, EntityKind::Location);
    assert_eq!(&text[ents[1].span.0..ents[1].span.1], "Томск");
}

#[test]
fn ner_span_mismatch_is_a_protocol_error() {
    let sidecar = MockSidecar::json(|_| json!([{"text": "Томск", "kind": "LOC", "start": 0, "end": 5}]));
    let err = sidecar.client(Role::Ner).entities("Город Томск").unwrap_err();
    assert!(matches!(err, ProviderError::Protocol { role: Role::Ner, .. }), "{err:?}");
}

#[test]
fn lemmatize_and_embed_transcripts() {
    let sidecar = MockSidecar::json(|r| match r.path.as_str() {
        "/v1/lemmatize" => {
            let toks = r.body["tokens"].as_array().unwrap();
            json!({"lemmas": toks.iter().map(|t| t.as_str().unwrap().to_lowercase()).collect::<Vec<_>>()})
        }
        "/v1/embed" => json!({"vectors": [[1.0, 0.0], null], "dim": 2}),
        _ => json!({}),
    });
    let lemmas = sidecar.client(Role::Lemmatizer).lemmatize(&["Студии", "Года"]).unwrap();
    assert_eq!(lemmas, ["студии", "года"]);
    let vecs = sidecar.client(Role::Embedder).embed(&["мост", "qwzx"]).unwrap();
    assert_eq!(vecs, [Some(vec![1.0, 0.0]), None]);
    assert_eq!(
        sidecar.requests(),
        [
            post("/v1/lemmatize", json!({"tokens": ["Студии", "Года"]})),
            post("/v1/embed", json!({"words": ["мост", "qwzx"]})),
        ]
    );
}

#[test]
fn length_mismatches_are_protocol_errors() {
    let sidecar = MockSidecar::json(|r| match r.path.as_str() {
        "/v1/lemmatize" => json!({"lemmas": ["a"]}),
        "/v1/embed" => json!({"vectors": [[1.0, 0.0, 3.0]], "dim": 2}),
        "/v1/predict" => json!({"answers": []}),
        _ => json!({}),
    });
    let lem = sidecar.client(Role::Lemmatizer).lemmatize(&["a", "b"]).unwrap_err();
    let emb = sidecar.client(Role::Embedder).embed(&["a"]).unwrap_err();
    let item = PredictItem {
        id: "q".into(),
        context: "c".into(),
        question: "q".into(),
    };
    let pred = sidecar.client(Role::Trainer).predict("h", &[item]).unwrap_err();
    for e in [lem, emb, pred] {
        assert!(matches!(e, ProviderError::Protocol { .. }), "{e:?}");
    }
}

#[test]
fn train_and_predict_transcripts() {
    let sidecar = MockSidecar::json(|r| match r.path.as_str() {
        "/v1/train" => json!({"handle": "model-1"}),
        "/v1/predict" => json!({"answers": ["1901"]}),
        _ => json!({}),
    });
    let trainer = sidecar.client(Role::Trainer);
    let handle = trainer
        .train(&TrainRequest {
            samples_ref: "/work/sample_50.jsonl".into(),
            sample_count: 50,
            params: json!({"epochs": 3}),
            base: None,
        })
        .unwrap();
    assert_eq!(handle, "model-1");
    let answers = trainer
        .predict(
            &handle,
            &[PredictItem {
                id: "dev-0".into(),
                context: "Мост построен в 1901 году.".into(),
                question: "Когда построен мост?".into(),
            }],
        )
        .unwrap();
    assert_eq!(answers, ["1901"]);
    assert_eq!(
        sidecar.requests(),
        [
            post(
                "/v1/train",
                json!({"samples_ref": "/work/sample_50.jsonl", "sample_count": 50, "params": {"epochs": 3}, "base": null})
            ),
            post(
                "/v1/predict",
                json!({"handle": "model-1", "items": [{"id": "dev-0", "context": "Мост построен в 1901 году.", "question": "Когда построен мост?"}]})
            ),
        ]
    );
}

#[test]
fn status_codes_map_to_error_kinds() {
    let sidecar = MockSidecar::start(|r| match r.path.as_str() {
        "/v1/answer" => (503, "{}".into()),
        "/v1/lemmatize" => (500, "{}".into()),
        _ => (200, "not json".into()),
    });
    let err = sidecar.client(Role::Reader).answer("c", "q").unwrap_err();
    assert_eq!(err, ProviderError::Unavailable { role: Role::Reader });
    let err = sidecar.client(Role::Lemmatizer).lemmatize(&["a"]).unwrap_err();
    assert!(matches!(err, ProviderError::Failed { role: Role::Lemmatizer, .. }), "{err:?}");
    let err = sidecar.client(Role::Embedder).embed(&["a"]).unwrap_err();
    assert!(matches!(err, ProviderError::Protocol { role: Role::Embedder, .. }), "{err:?}");
}

#[test]
fn health_is_a_plain_get() {
    let sidecar = MockSidecar::json(|_| json!({"roles": ["reader", "ner"]}));
    let health = sidecar.client(Role::Reader).health().unwrap();
    assert_eq!(health, json!({"roles": ["reader", "ner"]}));
    let reqs = sidecar.requests();
    assert_eq!((reqs[0].method.as_str(), reqs[0].path.as_str()), ("GET", "/health"));
}

#[test]
fn endpoints_route_roles_to_http_clients() {
    let sidecar = MockSidecar::json(|_| json!({"lemmas": ["x"]}));
    let mut endpoints = Endpoints::default();
    endpoints.set(Role::Lemmatizer, format!("{}/", sidecar.base));
    let providers = Providers::from_endpoints(&endpoints, &HttpOptions::default()).unwrap();
    assert_eq!(providers.lemmatizer.lemmatize(&["Y"]).unwrap(), ["x"]);
    // Other roles stay on stubs and never reach the sidecar.
    providers.reader.answer("Мост построен в 1901 году.", "Когда?").unwrap();
    assert_eq!(sidecar.requests().len(), 1);
}

fn passage(id: &str, batch: u32) -> Passage {
    Passage {
        id: id.into(),
        title: String::new(),
        text: format!("Текст {id}."),
        categories: vec![],
        batch,
        domain_tag: DomainTag::Wiki,
    }
}

#[test]
fn generation_over_http_parses_replies_and_skips_unavailable_passages() {
    let sidecar = MockSidecar::start(|r| {
        let text = r.body["text"].as_str().unwrap();
        let id = ["p1", "p2", "p3"].into_iter().find(|id| text.contains(id)).unwrap();
        if id == "p2" {
            (503, "{}".into())
        } else {
            (200, json!({"raw": format!("Что такое {id}? <[ANSWER]> текст </s> junk")}).to_string())
        }
    });
    let passages = [passage("p1", 0), passage("p2", 0), passage("p3", 1)];
    let client = sidecar.client(Role::Generator);
    let mut checkpoint = Checkpoint::default();
    let mut out: Vec<Triplet> = Vec::new();
    let opts = GenOptions {
        max_attempts: 2,
        ..Default::default()
    };
    let report = generate_for_passages(
        &passages,
        &client,
        &PromptStyle::gpt(),
        &GenParams::default(),
        &opts,
        &mut checkpoint,
        &mut |ts, _| {
            out.extend_from_slice(ts);
            Ok(())
        },
    )
    .unwrap();
    let got: Vec<(&str, &QAPair)> = out.iter().map(|t| (t.passage_id.as_str(), &t.pair)).collect();
    assert_eq!(got.len(), 2);
    assert_eq!(got[0].0, "p1");
    assert_eq!((got[0].1.question.as_str(), got[0].1.answer.as_str()), ("Что такое p1?", "текст"));
    assert_eq!(got[1].0, "p3");
    assert_eq!(report.skipped.len(), 1);
    assert_eq!(report.skipped[0].passage_id, "p2");
    // Two attempts for the unavailable passage, one for each of the others.
    let calls = sidecar.requests().iter().filter(|r| r.body["text"].as_str().unwrap().contains("p2")).count();
    assert_eq!(calls, 2);
    assert_eq!(sidecar.requests().len(), 4);
}

#[test]
fn unreachable_generator_aborts_with_checkpoint() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    drop(listener);
    let client = HttpClient::new(
        Role::Generator,
        &base,
        &HttpOptions {
            timeout_ms: 2_000,
            max_in_flight: 1,
        },
    );
    let mut checkpoint = Checkpoint::default();
    let err = generate_for_passages(
        &[passage("p1", 0)],
        &client,
        &PromptStyle::gpt(),
        &GenParams::default(),
        &GenOptions::default(),
        &mut checkpoint,
        &mut |_, _| Ok(()),
    )
    .unwrap_err();
    assert!(matches!(err, GenError::Aborted { .. }), "{err:?}");
}

#[test]
fn unavailable_reader_leaves_triplets_unresolved() {
    let sidecar = MockSidecar::start(|_| (503, "{}".into()));
    let mut providers = Providers::stubs();
    providers.reader = Arc::new(sidecar.client(Role::Reader));
    let store = PassageStore::new(vec![Passage {
        text: "Мост построен в 1901 году.".into(),
        ..passage("p", 0)
    }])
    .unwrap();
    let mut ts = vec![Triplet {
        passage_id: "p".into(),
        pair: QAPair {
            question: "Когда построен мост?".into(),
            answer: "1901".into(),
            gen_index: 0,
        },
        model_tag: qaforge_core::ModelTag::Stub,
        verdict: None,
    }];
    let pipeline = FilterPipeline::new(FilterConfig::default(), providers).unwrap();
    let report = pipeline.apply(&mut ts, &store).unwrap();
    assert_eq!((report.survivors, report.unresolved), (0, 1));
    let v = ts[0].verdict.as_ref().unwrap();
    assert_eq!(v.rejected_at, Some(Stage::GoldAgreement));
    assert!(v.unresolved);
}

#[test]
fn cli_generate_against_sidecar() {
    let sidecar = MockSidecar::json(|_| json!({"raw": "Где стоит мост? <[ANSWER]> в городе </s>"}));
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    let raw = common::fixture("pipeline50/raw.jsonl");
    let (code, _, err) = common::run_cli(&[
        "ingest", "--in", raw.to_str().unwrap(), "--batches", "2", "--out", store.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    let gen = dir.path().join("gen");
    let (code, _, err) = common::run_cli(&[
        "generate", "--passages", store.to_str().unwrap(), "--endpoint", &sidecar.base, "--out",
        gen.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    let text = std::fs::read_to_string(gen.join("triplets.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 50);
    assert!(text.lines().all(|l| l.contains("\"question\":\"Где стоит мост?\"") && l.contains("gpt_style")));
    assert_eq!(sidecar.requests().len(), 50);
    assert!(sidecar.requests().iter().all(|r| r.path == "/v1/generate"));
}
