use std::collections::HashMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EmF1 {
    pub em: f64,
    pub f1: f64,
}

/// Lowercase, drop every character that is neither a letter/digit nor
/// whitespace, collapse whitespace.
pub fn normalize_answer(s: &str) -> String {
    let kept: String = s
        .to_lowercase()
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    kept.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn token_f1(pred: &[&str], gold: &[&str]) -> f64 {
    if pred.is_empty() || gold.is_empty() {
        return if pred.is_empty() && gold.is_empty() { 1.0 } else { 0.0 };
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in gold {
        *counts.entry(t).or_insert(0) += 1;
    }
    let mut common = 0usize;
    for t in pred {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let p = common as f64 / pred.len() as f64;
    let r = common as f64 / gold.len() as f64;
    2.0 * p * r / (p + r)
}

/// Exact match and best token-bag F1 over the golds.
pub fn squad_em_f1(prediction: &str, golds: &[String]) -> EmF1 {
    if golds.is_empty() {
        log::warn!("no gold answers; scoring 0");
        return EmF1::default();
    }
    let pred = normalize_answer(prediction);
    let pred_toks: Vec<&str> = pred.split_whitespace().collect();
    let mut best = EmF1::default();
    for g in golds {
        let gold = normalize_answer(g);
        if pred == gold {
            best.em = 1.0;
        }
        let gold_toks: Vec<&str> = gold.split_whitespace().collect();
        best.f1 = best.f1.max(token_f1(&pred_toks, &gold_toks));
    }
    best
}
