use std::collections::HashMap;

use super::MetricError;
use crate::providers::Embedder;

const EPS: f64 = 1e-12;

struct Edge {
    to: usize,
    cap: u64,
    cost: f64,
}

struct Network {
    edges: Vec<Edge>,
    adj: Vec<Vec<usize>>,
}

impl Network {
    fn new(n: usize) -> Self {
        Network {
            edges: Vec::new(),
            adj: vec![Vec::new(); n],
        }
    }

    fn add(&mut self, from: usize, to: usize, cap: u64, cost: f64) -> usize {
        let id = self.edges.len();
        self.edges.push(Edge { to, cap, cost });
        self.adj[from].push(id);
        self.edges.push(Edge {
            to: from,
            cap: 0,
            cost: -cost,
        });
        self.adj[to].push(id + 1);
        id
    }

    /// Successive shortest paths with Bellman-Ford.
    fn min_cost_flow(&mut self, s: usize, t: usize) {
        let n = self.adj.len();
        loop {
            let mut dist = vec![f64::INFINITY; n];
            let mut via = vec![usize::MAX; n];
            dist[s] = 0.0;
            for _ in 0..n {
                let mut changed = false;
                for u in 0..n {
                    if dist[u].is_infinite() {
                        continue;
                    }
                    for &e in &self.adj[u] {
                        let edge = &self.edges[e];
                        if edge.cap > 0 && dist[u] + edge.cost < dist[edge.to] - EPS {
                            dist[edge.to] = dist[u] + edge.cost;
                            via[edge.to] = e;
                            changed = true;
                        }
                    }
                }
                if !changed {
                    break;
                }
            }
            if dist[t].is_infinite() {
                return;
            }
            let mut push = u64::MAX;
            let mut v = t;
            while v != s {
                let e = via[v];
                push = push.min(self.edges[e].cap);
                v = self.edges[e ^ 1].to;
            }
            let mut v = t;
            while v != s {
                let e = via[v];
                self.edges[e].cap -= push;
                self.edges[e ^ 1].cap += push;
                v = self.edges[e ^ 1].to;
            }
        }
    }
}

/// Minimum total cost of shipping integer `supply` to integer `demand`
/// (equal totals) with per-unit `cost[i][j]`.
pub fn transport_cost(supply: &[u64], demand: &[u64], cost: &[Vec<f64>]) -> f64 {
    let (m, n) = (supply.len(), demand.len());
    let (s, t) = (m + n, m + n + 1);
    let mut net = Network::new(m + n + 2);
    for (i, &q) in supply.iter().enumerate() {
        net.add(s, i, q, 0.0);
    }
    for (j, &q) in demand.iter().enumerate() {
        net.add(m + j, t, q, 0.0);
    }
    let mut cells = Vec::with_capacity(m * n);
    for i in 0..m {
        for j in 0..n {
            cells.push((net.add(i, m + j, u64::MAX, cost[i][j]), cost[i][j]));
        }
    }
    net.min_cost_flow(s, t);
    cells
        .iter()
        .map(|&(e, c)| net.edges[e ^ 1].cap as f64 * c)
        .sum()
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Distance between two weighted bags of vectors; weights are counts and are
/// normalized to unit mass on each side.
pub fn wmd_from_bags(a: &[(Vec<f64>, u64)], b: &[(Vec<f64>, u64)]) -> f64 {
    let ta: u64 = a.iter().map(|x| x.1).sum();
    let tb: u64 = b.iter().map(|x| x.1).sum();
    if ta == 0 || tb == 0 {
        return f64::NAN;
    }
    let supply: Vec<u64> = a.iter().map(|x| x.1 * tb).collect();
    let demand: Vec<u64> = b.iter().map(|x| x.1 * ta).collect();
    let cost: Vec<Vec<f64>> = a
        .iter()
        .map(|(va, _)| b.iter().map(|(vb, _)| euclid(va, vb)).collect())
        .collect();
    transport_cost(&supply, &demand, &cost) / (ta as f64 * tb as f64)
}

fn bag<'a>(tokens: &[&'a str]) -> Vec<(&'a str, u64)> {
    let mut out: Vec<(&str, u64)> = Vec::new();
    let mut at: HashMap<&str, usize> = HashMap::new();
    for &t in tokens {
        match at.get(t) {
            Some(&i) => out[i].1 += 1,
            None => {
                at.insert(t, out.len());
                out.push((t, 1));
            }
        }
    }
    out
}

/// Word mover's distance with Euclidean word costs. Out-of-vocabulary words
/// are skipped.
pub fn word_movers_distance(a: &[&str], b: &[&str], embedder: &dyn Embedder) -> Result<f64, MetricError> {
    let (ba, bb) = (bag(a), bag(b));
    let words: Vec<&str> = ba.iter().chain(&bb).map(|x| x.0).collect();
    let vectors = embedder.embed(&words)?;
    let mut it = vectors.into_iter();
    let mut side = |bag: &[(&str, u64)], name: &'static str| -> Result<Vec<(Vec<f64>, u64)>, MetricError> {
        let mut kept = Vec::new();
        for (w, c) in bag {
            match it.next().flatten() {
                Some(v) => kept.push((v, *c)),
                None => log::warn!("no vector for `{w}`, skipped"),
            }
        }
        if kept.is_empty() {
            return Err(MetricError::UndefinedDistance(name));
        }
        Ok(kept)
    };
    let va = side(&ba, "first")?;
    let vb = side(&bb, "second")?;
    Ok(wmd_from_bags(&va, &vb))
}
