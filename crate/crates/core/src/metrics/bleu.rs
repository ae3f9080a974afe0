use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::textproc::Analyzer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    None,
    /// Adds one to the matched and total counts of every order above 1.
    AddOneHighOrder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BleuConfig {
    pub max_n: usize,
    pub smoothing: Smoothing,
}

impl Default for BleuConfig {
    fn default() -> Self {
        BleuConfig {
            max_n: 4,
            smoothing: Smoothing::AddOneHighOrder,
        }
    }
}

impl BleuConfig {
    pub fn unsmoothed(max_n: usize) -> Self {
        BleuConfig {
            max_n,
            smoothing: Smoothing::None,
        }
    }
}

/// Sufficient statistics of one hypothesis against its references.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BleuStats {
    /// Clipped matches per order, index 0 = unigrams.
    pub matches: Vec<usize>,
    pub totals: Vec<usize>,
    pub hyp_len: usize,
    /// Closest reference length (shorter wins ties).
    pub ref_len: usize,
}

impl BleuStats {
    /// Uniform-weight geometric mean of the n-gram precisions times the
    /// brevity penalty. An order with no matches (after smoothing) scores 0.
    pub fn score(&self, smoothing: Smoothing) -> f64 {
        if self.hyp_len == 0 || self.matches.is_empty() {
            return 0.0;
        }
        let mut log_sum = 0.0;
        for (n, (&m, &t)) in self.matches.iter().zip(&self.totals).enumerate() {
            let (m, t) = match smoothing {
                Smoothing::AddOneHighOrder if n > 0 => (m + 1, t + 1),
                _ => (m, t),
            };
            if m == 0 {
                return 0.0;
            }
            log_sum += (m as f64 / t as f64).ln();
        }
        let bp = if self.hyp_len > self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        };
        bp * (log_sum / self.matches.len() as f64).exp()
    }
}

fn closest_len(hyp_len: usize, lens: impl Iterator<Item = usize>) -> usize {
    lens.min_by_key(|&l| (l.abs_diff(hyp_len), l)).unwrap_or(0)
}

pub fn bleu_stats<T: Eq + Hash>(hyp: &[T], refs: &[Vec<T>], max_n: usize) -> BleuStats {
    let mut matches = vec![0; max_n];
    let mut totals = vec![0; max_n];
    for n in 1..=max_n {
        if hyp.len() < n {
            continue;
        }
        let mut counts: HashMap<&[T], usize> = HashMap::new();
        for w in hyp.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
        let mut max_ref: HashMap<&[T], usize> = HashMap::new();
        for r in refs {
            if r.len() < n {
                continue;
            }
            let mut rc: HashMap<&[T], usize> = HashMap::new();
            for w in r.windows(n) {
                if counts.contains_key(w) {
                    *rc.entry(w).or_insert(0) += 1;
                }
            }
            for (g, c) in rc {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(c);
            }
        }
        matches[n - 1] = counts
            .iter()
            .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
            .sum();
        totals[n - 1] = hyp.len() + 1 - n;
    }
    BleuStats {
        matches,
        totals,
        hyp_len: hyp.len(),
        ref_len: closest_len(hyp.len(), refs.iter().map(Vec::len)),
    }
}

/// Sentence BLEU of `hyp` against `refs`.
pub fn bleu<T: Eq + Hash>(hyp: &[T], refs: &[Vec<T>], cfg: &BleuConfig) -> f64 {
    if hyp.is_empty() {
        log::warn!("BLEU of an empty hypothesis is defined as 0");
        return 0.0;
    }
    bleu_stats(hyp, refs, cfg.max_n.max(1)).score(cfg.smoothing)
}

/// Median of a non-empty slice; mean of the middle two for even lengths.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => (v[n / 2 - 1] + v[n / 2]) / 2.0,
    }
}

/// Best and runner-up reference count of one n-gram across the sample.
#[derive(Clone, Copy)]
struct Top2 {
    best: usize,
    best_idx: usize,
    second: usize,
}

impl Top2 {
    fn push(&mut self, count: usize, idx: usize) {
        if count > self.best {
            self.second = self.best;
            self.best = count;
            self.best_idx = idx;
        } else if count > self.second {
            self.second = count;
        }
    }

    fn excluding(&self, idx: usize) -> usize {
        if self.best_idx == idx {
            self.second
        } else {
            self.best
        }
    }
}

/// Median BLEU of each sampled question against all other sampled questions.
///
/// Questions are put in a canonical (sorted) order before a seeded sample of
/// `min(sample_size, N)` is drawn, so the result depends only on the multiset
/// of questions and the seed. Questions are lemmatized with `analyzer`.
/// Hypotheses are scored in parallel on the current rayon pool; the result
/// does not depend on the pool size.
pub fn self_bleu(
    questions: &[String],
    sample_size: usize,
    seed: u64,
    analyzer: &Analyzer,
    cfg: &BleuConfig,
) -> Result<f64, MetricError> {
    let mut canon: Vec<&String> = questions.iter().collect();
    canon.sort();
    let k = sample_size.min(canon.len());
    if k < 2 {
        return Err(MetricError::TooFewQuestions(k));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = rand::seq::index::sample(&mut rng, canon.len(), k).into_vec();

    let lemmas: Vec<Vec<String>> = picked
        .par_iter()
        .map(|&i| analyzer.lemmas(canon[i]))
        .collect::<Result<_, _>>()?;
    let mut vocab: HashMap<&str, u32> = HashMap::new();
    let seqs: Vec<Vec<u32>> = lemmas
        .iter()
        .map(|toks| {
            toks.iter()
                .map(|t| {
                    let next = vocab.len() as u32;
                    *vocab.entry(t.as_str()).or_insert(next)
                })
                .collect()
        })
        .collect();

    let max_n = cfg.max_n.max(1);
    let mut index: Vec<HashMap<&[u32], Top2>> = vec![HashMap::new(); max_n];
    for (idx, seq) in seqs.iter().enumerate() {
        for n in 1..=max_n.min(seq.len()) {
            let mut counts: HashMap<&[u32], usize> = HashMap::new();
            for w in seq.windows(n) {
                *counts.entry(w).or_insert(0) += 1;
            }
            for (g, c) in counts {
                index[n - 1]
                    .entry(g)
                    .or_insert(Top2 {
                        best: 0,
                        best_idx: usize::MAX,
                        second: 0,
                    })
                    .push(c, idx);
            }
        }
    }
    let mut len_hist: BTreeMap<usize, usize> = BTreeMap::new();
    for s in &seqs {
        *len_hist.entry(s.len()).or_insert(0) += 1;
    }

    let scores: Vec<f64> = (0..seqs.len())
        .into_par_iter()
        .map(|i| {
            let hyp = &seqs[i];
            if hyp.is_empty() {
                return 0.0;
            }
            let mut matches = vec![0; max_n];
            let mut totals = vec![0; max_n];
            for n in 1..=max_n.min(hyp.len()) {
                let mut counts: HashMap<&[u32], usize> = HashMap::new();
                for w in hyp.windows(n) {
                    *counts.entry(w).or_insert(0) += 1;
                }
                matches[n - 1] = counts
                    .iter()
                    .map(|(g, &c)| c.min(index[n - 1][g].excluding(i)))
                    .sum();
                totals[n - 1] = hyp.len() + 1 - n;
            }
            let others = len_hist
                .iter()
                .filter(|&(&l, &c)| c > usize::from(l == hyp.len()))
                .map(|(&l, _)| l);
            BleuStats {
                matches,
                totals,
                hyp_len: hyp.len(),
                ref_len: closest_len(hyp.len(), others),
            }
            .score(cfg.smoothing)
        })
        .collect();
    Ok(median(&scores))
}
