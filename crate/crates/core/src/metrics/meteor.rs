use crate::textproc::Token;

/// Recall weight and fragmentation penalty shape.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeteorParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for MeteorParams {
    fn default() -> Self {
        MeteorParams {
            alpha: 0.9,
            beta: 3.0,
            gamma: 0.5,
        }
    }
}

/// Greedy one-to-one alignment, stage by stage. Returns the reference index
/// for each candidate position.
fn align(
    cand_len: usize,
    ref_len: usize,
    stages: &[&dyn Fn(usize, usize) -> bool],
) -> Vec<Option<usize>> {
    let mut out = vec![None; cand_len];
    let mut used = vec![false; ref_len];
    for stage in stages {
        let mut last: Option<usize> = None;
        for i in 0..cand_len {
            if let Some(j) = out[i] {
                last = Some(j);
                continue;
            }
            let follow = i
                .checked_sub(1)
                .and_then(|p| out[p])
                .map(|j| j + 1)
                .filter(|&j| j < ref_len && !used[j] && stage(i, j));
            let after = last.map_or(0, |j| j + 1);
            let pick = follow
                .or_else(|| (after..ref_len).find(|&j| !used[j] && stage(i, j)))
                .or_else(|| (0..after.min(ref_len)).find(|&j| !used[j] && stage(i, j)));
            if let Some(j) = pick {
                used[j] = true;
                out[i] = Some(j);
                last = Some(j);
            }
        }
    }
    out
}

fn score(alignment: &[Option<usize>], ref_len: usize, p: &MeteorParams) -> f64 {
    let cand_len = alignment.len();
    if cand_len == 0 && ref_len == 0 {
        log::warn!("METEOR of two empty sequences is defined as 0");
        return 0.0;
    }
    let pairs: Vec<(usize, usize)> = alignment
        .iter()
        .enumerate()
        .filter_map(|(i, j)| j.map(|j| (i, j)))
        .collect();
    let m = pairs.len();
    if m == 0 {
        return 0.0;
    }
    let chunks = 1 + pairs
        .windows(2)
        .filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1))
        .count();
    let precision = m as f64 / cand_len as f64;
    let recall = m as f64 / ref_len as f64;
    let fmean = precision * recall / (p.alpha * precision + (1.0 - p.alpha) * recall);
    let frag = if m > 1 {
        (chunks - 1) as f64 / (m - 1) as f64
    } else {
        0.0
    };
    fmean * (1.0 - p.gamma * frag.powf(p.beta))
}

/// METEOR variant with exact matching only. Fragmentation is measured as
/// `(chunks - 1) / (matches - 1)` so a single contiguous alignment has no
/// penalty.
pub fn meteor_lite<T: PartialEq>(reference: &[T], candidate: &[T], p: &MeteorParams) -> f64 {
    let exact = |i: usize, j: usize| candidate[i] == reference[j];
    score(&align(candidate.len(), reference.len(), &[&exact]), reference.len(), p)
}

/// Exact (case-insensitive surface) stage, then a lemma stage.
pub fn meteor_lite_tokens(reference: &[Token], candidate: &[Token], p: &MeteorParams) -> f64 {
    let exact = |i: usize, j: usize| candidate[i].surface.to_lowercase() == reference[j].surface.to_lowercase();
    let lemma = |i: usize, j: usize| candidate[i].lemma == reference[j].lemma;
    score(
        &align(candidate.len(), reference.len(), &[&exact, &lemma]),
        reference.len(),
        p,
    )
}
