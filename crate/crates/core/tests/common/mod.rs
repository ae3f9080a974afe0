#![allow(dead_code)]

pub mod sidecar;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use qaforge_core::corpus::{read_passages, read_triplets, DomainTag, ModelTag, Passage, PassageStore, QAPair, Triplet};
use qaforge_core::filter::FilterConfig;
use qaforge_core::providers::{ReaderAnswer, TableNer, TableReader};
use qaforge_core::textproc::EntityKind;
use qaforge_core::Providers;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

pub fn read_fixture(rel: &str) -> String {
    std::fs::read_to_string(fixture(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

#[derive(Debug, Deserialize)]
pub struct Filter200Expected {
    pub input: usize,
    pub survivors: Vec<String>,
    pub rejected_at: BTreeMap<String, String>,
    pub per_stage: BTreeMap<String, usize>,
    pub unresolved: usize,
}

pub struct Filter200 {
    pub store: PassageStore,
    pub triplets: Vec<Triplet>,
    pub providers: Providers,
    pub config: FilterConfig,
    pub expected: Filter200Expected,
}

#[derive(Deserialize)]
struct CannedAnswer {
    answer: String,
    score: f64,
}

/// The 200-triplet fixture with its canned reader and gazetteer NER.
pub fn load_filter200() -> Filter200 {
    let passages = read_passages(read_fixture("filter200/passages.jsonl").as_bytes(), 0).unwrap();
    let triplets = read_triplets(read_fixture("filter200/triplets.jsonl").as_bytes(), 0).unwrap();
    let reader: BTreeMap<String, CannedAnswer> = serde_json::from_str(&read_fixture("filter200/reader.json")).unwrap();
    let ner: BTreeMap<String, String> = serde_json::from_str(&read_fixture("filter200/ner.json")).unwrap();
    let mut providers = Providers::stubs();
    providers.reader = Arc::new(TableReader::new(
        reader
            .into_iter()
            .map(|(q, a)| (q, ReaderAnswer { answer: a.answer, score: a.score })),
    ));
    providers.ner = Arc::new(TableNer::new(
        ner.into_iter().map(|(name, kind)| (name, kind.parse::<EntityKind>().unwrap())),
    ));
    Filter200 {
        store: PassageStore::new(passages.records).unwrap(),
        triplets: triplets.records,
        providers,
        config: FilterConfig::from_toml(&read_fixture("filter200/filter.toml")).unwrap(),
        expected: serde_json::from_str(&read_fixture("filter200/expected.json")).unwrap(),
    }
}

pub fn key(t: &Triplet) -> String {
    format!("{}#{}", t.passage_id, t.pair.gen_index)
}

const NAMES: [&str; 12] = [
    "Москва", "Казань", "Иван", "Пётр", "Анна", "Волга", "Урал", "Сибирь", "Мария", "Олег", "Томск", "Байкал",
];
const WORDS: [&str; 24] = [
    "река", "город", "году", "студия", "основана", "фильм", "мост", "озеро", "театр", "построен", "открыт",
    "известен", "берег", "музей", "школа", "завод", "книга", "автор", "поэт", "площадь", "улица", "храм",
    "парк", "вокзал",
];
const WH: [&str; 8] = ["Кто", "Что", "Где", "Когда", "Какой", "Сколько", "Почему", "Как"];

fn pick<'a>(rng: &mut ChaCha8Rng, xs: &[&'a str]) -> &'a str {
    xs[rng.random_range(0..xs.len())]
}

/// Random passages and triplets whose questions and answers borrow words
/// from their passage, so that every stage rejects some and keeps some.
pub fn random_corpus(seed: u64, passages: usize, per_passage: u32) -> (PassageStore, Vec<Triplet>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ps = Vec::new();
    let mut ts = Vec::new();
    for p in 0..passages {
        let mut sentences = Vec::new();
        for _ in 0..rng.random_range(2..5) {
            let mut s: Vec<String> = Vec::new();
            for _ in 0..rng.random_range(4..9) {
                if rng.random_bool(0.3) {
                    s.push(format!("{} {}", pick(&mut rng, &NAMES), pick(&mut rng, &NAMES)));
                } else {
                    s.push(pick(&mut rng, &WORDS).to_string());
                }
            }
            s.push(format!("{}", 1800 + rng.random_range(0..200)));
            let mut sentence = s.join(" ");
            sentence.push('.');
            sentences.push(sentence);
        }
        let text = sentences.join(" ");
        let words: Vec<&str> = text.split_whitespace().map(|w| w.trim_end_matches('.')).collect();
        let id = format!("r{p:05}");
        for g in 0..per_passage {
            let mut q = vec![pick(&mut rng, &WH).to_string()];
            if rng.random_bool(0.15) {
                q.push(pick(&mut rng, &WH).to_lowercase());
            }
            for _ in 0..rng.random_range(2..6) {
                if rng.random_bool(0.1) {
                    q.push(pick(&mut rng, &NAMES).to_string());
                } else {
                    q.push(words[rng.random_range(0..words.len())].to_string());
                }
            }
            let answer = if rng.random_bool(0.6) {
                let start = rng.random_range(0..words.len());
                let len = rng.random_range(1..4).min(words.len() - start);
                words[start..start + len].join(" ")
            } else if rng.random_bool(0.3) {
                format!("{} {}", pick(&mut rng, &NAMES), pick(&mut rng, &NAMES))
            } else {
                (0..rng.random_range(1..3)).map(|_| pick(&mut rng, &WORDS)).collect::<Vec<_>>().join(" ")
            };
            ts.push(Triplet {
                passage_id: id.clone(),
                pair: QAPair {
                    question: format!("{}?", q.join(" ")),
                    answer,
                    gen_index: g,
                },
                model_tag: ModelTag::Stub,
                verdict: None,
            });
            if rng.random_bool(0.1) {
                // Near-duplicate of the previous pair.
                let mut dup = ts.last().unwrap().clone();
                dup.pair.gen_index = per_passage + g;
                dup.pair.question.pop();
                ts.push(dup);
            }
        }
        ps.push(Passage {
            id,
            title: String::new(),
            text,
            categories: vec![],
            batch: (p % 4) as u32,
            domain_tag: DomainTag::Wiki,
        });
    }
    (PassageStore::new(ps).unwrap(), ts)
}

/// Canned reader and gazetteer NER for a `random_corpus` sample. Most
/// golds agree with the generated answer; the rest overlap partly, differ,
/// or are missing. Reader scores straddle the score threshold.
pub fn random_providers(seed: u64, triplets: &[Triplet]) -> Providers {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut answers = Vec::new();
    for t in triplets {
        let roll: f64 = rng.random();
        let gold = if roll < 0.6 {
            t.pair.answer.clone()
        } else if roll < 0.75 {
            format!("{} {}", t.pair.answer, pick(&mut rng, &WORDS))
        } else if roll < 0.9 {
            pick(&mut rng, &WORDS).to_string()
        } else {
            continue;
        };
        let score = [1.0, 0.999, 0.995, 0.99][rng.random_range(0..4)];
        answers.push((t.pair.question.clone(), ReaderAnswer { answer: gold, score }));
    }
    let mut providers = Providers::stubs();
    providers.reader = Arc::new(TableReader::new(answers));
    providers.ner = Arc::new(TableNer::new(NAMES.iter().enumerate().map(|(i, n)| {
        let kind = if [2, 3, 4, 8, 9].contains(&i) {
            EntityKind::Person
        } else {
            EntityKind::Location
        };
        (*n, kind)
    })));
    providers
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}

/// Hashes of every file under `dir`, keyed by relative path.
pub fn tree_hashes(dir: &std::path::Path) -> BTreeMap<String, String> {
    fn walk(root: &std::path::Path, dir: &std::path::Path, out: &mut BTreeMap<String, String>) {
        let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, sha256_hex(&std::fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

pub fn qaforge_bin() -> &'static str {
    env!("CARGO_BIN_EXE_qaforge")
}

/// Runs the binary and returns (exit code, stdout, stderr).
pub fn run_cli(args: &[&str]) -> (i32, String, String) {
    let out = std::process::Command::new(qaforge_bin())
        .args(args)
        .env("QAFORGE_LOG", "warn")
        .output()
        .expect("spawn qaforge");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

/// ingest → generate (stub) → filter → stats on the 50-record corpus into
/// `dir`. Returns the first failing step's stderr.
pub fn run_pipeline(dir: &std::path::Path, workers: usize) -> Result<(), String> {
    let d = |p: &str| dir.join(p).to_string_lossy().into_owned();
    let raw = fixture("pipeline50/raw.jsonl").to_string_lossy().into_owned();
    let w = workers.to_string();
    let steps: Vec<Vec<String>> = vec![
        vec!["ingest", "--in", &raw, "--domain", "wiki", "--batches", "5", "--out", &d("store")],
        vec!["generate", "--passages", &d("store"), "--style", "gpt", "--endpoint", "stub:", "--out", &d("gen"), "--chunk-size", "7"],
        vec![
            "filter", "--in", &d("gen/triplets.jsonl"), "--passages", &d("store"), "--out", &d("filtered.jsonl"),
            "--report", &d("filter_report.json"),
        ],
        vec!["stats", "--in", &d("filtered.jsonl"), "--passages", &d("store"), "--out", &d("stats.json"), "--seed", "7"],
    ]
    .into_iter()
    .map(|v| v.into_iter().map(String::from).collect())
    .collect();
    for step in steps {
        let mut args: Vec<&str> = step.iter().map(String::as_str).collect();
        args.extend(["--workers", &w]);
        let (code, _, err) = run_cli(&args);
        if code != 0 {
            return Err(format!("`{}` exited {code}: {err}", step[0]));
        }
    }
    Ok(())
}
