//! Agent-to-agent influence over a combination matrix.
//!
//! A walk `l = v0 -> v1 -> ... -> vr = k` scores
//! `(|Theta| - 1) * delta * (1 - delta)^r * prod a_{v_i v_{i+1}}`, and the
//! aggregate influence `eta_d(l, k)` sums that score over every walk of length
//! at most `d`. The most influential walk is a shortest path under edge costs
//! `-ln a - ln(1 - delta)`, searched over a hop-layered graph so the length
//! bound is exact.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::CombinationMatrix;
use crate::ratio::{LogRatioMatrix, RatioKind};
use crate::social;

/// Costs closer than this are treated as ties.
const COST_TIE_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum InfluenceError {
    #[error("invalid path: {0}")]
    InvalidPath(String),
    #[error("no path from {from} to {to} within {max_hops} hops")]
    NoPath {
        from: usize,
        to: usize,
        max_hops: usize,
    },
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluencePath {
    /// Agents from source to target.
    pub nodes: Vec<usize>,
    pub score: f64,
}

impl InfluencePath {
    pub fn hops(&self) -> usize {
        self.nodes.len().saturating_sub(1)
    }

    pub fn source(&self) -> usize {
        self.nodes[0]
    }

    pub fn target(&self) -> usize {
        *self.nodes.last().expect("paths are non-empty")
    }
}

fn check_delta(delta: f64) -> Result<(), InfluenceError> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(InfluenceError::InvalidParameter {
            name: "delta",
            reason: format!("must lie in (0, 1), got {delta}"),
        })
    }
}

/// Score of one walk; every edge along it must carry positive weight.
pub fn path_influence(
    a: &CombinationMatrix,
    nodes: &[usize],
    delta: f64,
    theta_count: usize,
) -> Result<f64, InfluenceError> {
    if nodes.is_empty() {
        return Err(InfluenceError::InvalidPath("empty node list".into()));
    }
    if let Some(v) = nodes.iter().find(|&&v| v >= a.n()) {
        return Err(InfluenceError::InvalidPath(format!(
            "agent {v} out of range"
        )));
    }
    let mut product = 1.0;
    for w in nodes.windows(2) {
        let weight = a.weight(w[0], w[1]);
        if weight <= 0.0 {
            return Err(InfluenceError::InvalidPath(format!(
                "no edge {} -> {}",
                w[0], w[1]
            )));
        }
        product *= weight;
    }
    let r = nodes.len() - 1;
    Ok((theta_count as f64 - 1.0) * delta * (1.0 - delta).powi(r as i32) * product)
}

/// `eta_d` for every pair: entry `(l, k)` is
/// `(|Theta| - 1) delta sum_{r=0}^{d} (1 - delta)^r [A^r]_{lk}`.
pub fn eta_matrix(a: &CombinationMatrix, d: usize, delta: f64, theta_count: usize) -> DMatrix<f64> {
    let n = a.n();
    let mut power = DMatrix::identity(n, n);
    let mut total = power.clone();
    let mut decay = 1.0;
    for _ in 0..d {
        power = &power * a.weights();
        decay *= 1.0 - delta;
        total += &power * decay;
    }
    total * ((theta_count as f64 - 1.0) * delta)
}

pub fn eta(
    a: &CombinationMatrix,
    source: usize,
    target: usize,
    d: usize,
    delta: f64,
    theta_count: usize,
) -> f64 {
    // Column `target` of A^r, advanced one power at a time.
    let mut column = a.weights().column(target).into_owned();
    let mut sum = if source == target { 1.0 } else { 0.0 };
    let mut decay = 1.0;
    for r in 1..=d {
        if r > 1 {
            column = a.weights() * column;
        }
        decay *= 1.0 - delta;
        sum += decay * column[source];
    }
    (theta_count as f64 - 1.0) * delta * sum
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceInfluence {
    pub source: usize,
    pub raw: f64,
    /// `raw / max raw`; equals `raw` when the map is all zero.
    pub normalized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceMap {
    pub target: usize,
    pub horizon: usize,
    pub delta: f64,
    pub sources: Vec<SourceInfluence>,
    /// False when every raw influence is zero and normalization was skipped.
    pub normalized: bool,
}

impl InfluenceMap {
    /// Sources sorted by decreasing influence, ties by index.
    pub fn ranking(&self) -> Vec<usize> {
        let mut order: Vec<&SourceInfluence> = self.sources.iter().collect();
        order.sort_by(|x, y| y.raw.total_cmp(&x.raw).then(x.source.cmp(&y.source)));
        order.into_iter().map(|s| s.source).collect()
    }

    pub fn get(&self, source: usize) -> Option<&SourceInfluence> {
        self.sources.iter().find(|s| s.source == source)
    }
}

/// Influence of every other agent on `target`, normalized by the maximum.
pub fn influence_map(
    a: &CombinationMatrix,
    target: usize,
    d: usize,
    delta: f64,
    theta_count: usize,
) -> Result<InfluenceMap, InfluenceError> {
    check_delta(delta)?;
    if target >= a.n() {
        return Err(InfluenceError::InvalidParameter {
            name: "target",
            reason: format!("agent {target} out of range"),
        });
    }
    let raw: Vec<(usize, f64)> = (0..a.n())
        .filter(|&l| l != target)
        .map(|l| (l, eta(a, l, target, d, delta, theta_count)))
        .collect();
    let max = raw.iter().map(|(_, v)| *v).fold(0.0, f64::max);
    let normalized = max > 0.0;
    let sources = raw
        .into_iter()
        .map(|(source, raw)| SourceInfluence {
            source,
            raw,
            normalized: if normalized { raw / max } else { raw },
        })
        .collect();
    Ok(InfluenceMap {
        target,
        horizon: d,
        delta,
        sources,
        normalized,
    })
}

#[derive(Debug, Clone)]
struct Label {
    cost: f64,
    nodes: Vec<usize>,
}

impl Label {
    /// Lower cost wins; near-equal costs fall back to lexicographic order.
    fn better_than(&self, other: &Label) -> bool {
        if (self.cost - other.cost).abs() > COST_TIE_TOL {
            self.cost < other.cost
        } else {
            self.nodes < other.nodes
        }
    }
}

#[derive(Debug)]
struct QueueEntry {
    cost: f64,
    node: usize,
    hops: usize,
}

impl PartialEq for QueueEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for QueueEntry {}

impl PartialOrd for QueueEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for QueueEntry {
    // Min-heap on cost.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.hops.cmp(&self.hops))
            .then_with(|| other.node.cmp(&self.node))
    }
}

/// Walk from `source` to `target` with at most `d` hops maximizing the
/// walk score. Ties go to fewer hops, then to the lexicographically smaller
/// node sequence. For `source == target` the zero-hop walk wins.
pub fn most_influential_path(
    a: &CombinationMatrix,
    source: usize,
    target: usize,
    d: usize,
    delta: f64,
    theta_count: usize,
) -> Result<InfluencePath, InfluenceError> {
    check_delta(delta)?;
    let n = a.n();
    if source >= n || target >= n {
        return Err(InfluenceError::InvalidParameter {
            name: "agent",
            reason: format!("agents {source}, {target} out of range for n = {n}"),
        });
    }
    if source == target {
        return Ok(InfluencePath {
            nodes: vec![source],
            score: (theta_count as f64 - 1.0) * delta,
        });
    }
    let step_cost = -(1.0 - delta).ln();
    // labels[h][v]: best walk reaching v with exactly h hops.
    let mut labels: Vec<Vec<Option<Label>>> = vec![vec![None; n]; d + 1];
    let mut settled = vec![vec![false; n]; d + 1];
    labels[0][source] = Some(Label {
        cost: 0.0,
        nodes: vec![source],
    });
    let mut heap = BinaryHeap::from([QueueEntry {
        cost: 0.0,
        node: source,
        hops: 0,
    }]);
    while let Some(QueueEntry { node, hops, .. }) = heap.pop() {
        if settled[hops][node] {
            continue;
        }
        settled[hops][node] = true;
        if hops == d || node == target {
            continue;
        }
        let current = labels[hops][node]
            .clone()
            .expect("queued states are labeled");
        for next in 0..n {
            let w = a.weight(node, next);
            if w <= 0.0 || settled[hops + 1][next] {
                continue;
            }
            let mut nodes = current.nodes.clone();
            nodes.push(next);
            let candidate = Label {
                cost: current.cost - w.ln() + step_cost,
                nodes,
            };
            let slot = &mut labels[hops + 1][next];
            if slot.as_ref().map_or(true, |old| candidate.better_than(old)) {
                heap.push(QueueEntry {
                    cost: candidate.cost,
                    node: next,
                    hops: hops + 1,
                });
                *slot = Some(candidate);
            }
        }
    }

    // Scan by increasing hop count so a strict improvement is required to
    // prefer a longer walk.
    let mut best: Option<&Label> = None;
    for layer in labels.iter().skip(1) {
        if let Some(l) = &layer[target] {
            if best.map_or(true, |b| l.cost < b.cost - COST_TIE_TOL) {
                best = Some(l);
            }
        }
    }
    let best = best.ok_or(InfluenceError::NoPath {
        from: source,
        to: target,
        max_hops: d,
    })?;
    let score = path_influence(a, &best.nodes, delta, theta_count)?;
    Ok(InfluencePath {
        nodes: best.nodes.clone(),
        score,
    })
}

/// Strongest walk into `target` from each other agent, best first, truncated
/// to `top`.
pub fn top_paths_to(
    a: &CombinationMatrix,
    target: usize,
    d: usize,
    delta: f64,
    theta_count: usize,
    top: usize,
) -> Result<Vec<InfluencePath>, InfluenceError> {
    let mut paths = Vec::new();
    for source in (0..a.n()).filter(|&l| l != target) {
        match most_influential_path(a, source, target, d, delta, theta_count) {
            Ok(p) => paths.push(p),
            Err(InfluenceError::NoPath { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    paths.sort_by(|x, y| {
        y.score
            .total_cmp(&x.score)
            .then(x.hops().cmp(&y.hops()))
            .then_with(|| x.nodes.cmp(&y.nodes))
    });
    paths.truncate(top);
    Ok(paths)
}

/// Closed-form and finite-difference sensitivities of `Lambda_i` with
/// respect to `L_t`, entry `(l, k)` holding `d[Lambda_i]_{k,j} / d[L_t]_{l,j}`.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeCheck {
    pub closed_form: DMatrix<f64>,
    pub numerical: DMatrix<f64>,
}

impl DerivativeCheck {
    /// Largest error relative to `max(|closed form|, floor)`.
    pub fn max_relative_error(&self, floor: f64) -> f64 {
        self.closed_form
            .iter()
            .zip(self.numerical.iter())
            .map(|(c, m)| (c - m).abs() / c.abs().max(floor))
            .fold(0.0, f64::max)
    }
}

/// `delta (1 - delta)^(i-t) [A^(i-t)]_{lk}` for `t < i`, `delta 1{l = k}` for
/// `t = i`.
pub fn closed_form_sensitivity(a: &CombinationMatrix, lag: usize, delta: f64) -> DMatrix<f64> {
    let n = a.n();
    if lag == 0 {
        return DMatrix::identity(n, n) * delta;
    }
    let mut power = a.weights().clone();
    for _ in 1..lag {
        power = &power * a.weights();
    }
    power * (delta * (1.0 - delta).powi(lag as i32))
}

/// Compares the closed form against central differences of the unrolled
/// log-belief recursion over random inputs. Step `i` and `t <= i` are 1-based.
pub fn influence_derivative_check<R: Rng + ?Sized>(
    a: &CombinationMatrix,
    theta_count: usize,
    i: usize,
    t: usize,
    delta: f64,
    rng: &mut R,
) -> Result<DerivativeCheck, InfluenceError> {
    check_delta(delta)?;
    if t == 0 || t > i {
        return Err(InfluenceError::InvalidParameter {
            name: "t",
            reason: format!("need 1 <= t <= i, got t = {t}, i = {i}"),
        });
    }
    let n = a.n();
    let cols = theta_count - 1;
    let random = |rng: &mut R| {
        LogRatioMatrix::new(
            DMatrix::from_fn(n, cols, |_, _| rng.gen_range(-1.0..1.0)),
            0,
            RatioKind::Likelihood,
        )
    };
    let initial = random(rng);
    let inputs: Vec<LogRatioMatrix> = (0..i).map(|_| random(rng)).collect();
    let unroll = |inputs: &[LogRatioMatrix]| {
        let mut lambda = initial.clone();
        for l in inputs {
            lambda = social::recursion_reference(&lambda, a, l, delta).expect("shapes agree");
        }
        lambda
    };

    let h = 1e-6;
    let j = 0;
    let mut numerical = DMatrix::zeros(n, n);
    for l in 0..n {
        let mut plus = inputs.clone();
        let mut minus = inputs.clone();
        let bump = |m: &mut LogRatioMatrix, by: f64| {
            let mut v = m.values().clone();
            v[(l, j)] += by;
            *m = LogRatioMatrix::new(v, 0, RatioKind::Likelihood);
        };
        bump(&mut plus[t - 1], h);
        bump(&mut minus[t - 1], -h);
        let up = unroll(&plus);
        let down = unroll(&minus);
        for k in 0..n {
            numerical[(l, k)] = (up.values()[(k, j)] - down.values()[(k, j)]) / (2.0 * h);
        }
    }
    Ok(DerivativeCheck {
        closed_form: closed_form_sensitivity(a, i - t, delta),
        numerical,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Adjacency;
    use crate::rng;

    fn weights(n: usize, entries: &[(usize, usize, f64)]) -> CombinationMatrix {
        let mut w = DMatrix::zeros(n, n);
        for &(l, k, v) in entries {
            w[(l, k)] = v;
        }
        CombinationMatrix::from_weights(w).unwrap()
    }

    #[test]
    fn single_edge_score() {
        let a = weights(2, &[(0, 0, 1.0), (0, 1, 0.3), (1, 1, 0.7)]);
        let s = path_influence(&a, &[0, 1], 0.1, 2).unwrap();
        assert!((s - 0.027).abs() < 1e-15);
        assert!((eta(&a, 0, 1, 1, 0.1, 2) - 0.027).abs() < 1e-15);
        assert_eq!(eta(&a, 0, 1, 0, 0.1, 2), 0.0);
    }

    #[test]
    fn two_edge_score() {
        let a = weights(
            3,
            &[
                (0, 0, 0.5),
                (0, 1, 0.5),
                (1, 1, 0.5),
                (1, 2, 0.5),
                (2, 2, 0.5),
                (2, 0, 0.5),
            ],
        );
        let s = path_influence(&a, &[0, 1, 2], 0.1, 2).unwrap();
        assert!((s - 0.02025).abs() < 1e-15);
    }

    #[test]
    fn missing_edge_is_invalid() {
        let a = weights(2, &[(0, 0, 1.0), (0, 1, 0.3), (1, 1, 0.7)]);
        assert!(matches!(
            path_influence(&a, &[1, 0], 0.1, 2),
            Err(InfluenceError::InvalidPath(_))
        ));
    }

    #[test]
    fn eta_matrix_agrees_with_columnwise_eta() {
        let a = crate::graph::generate_erdos_renyi(6, 0.4, 3).unwrap();
        let m = eta_matrix(&a, 3, 0.2, 4);
        for l in 0..6 {
            for k in 0..6 {
                assert!((m[(l, k)] - eta(&a, l, k, 3, 0.2, 4)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn star_leaves_are_symmetric() {
        // Hub 0 listens to itself and four leaves equally; leaves listen to the hub.
        let mut edges: Vec<(usize, usize)> = (0..5).map(|l| (l, 0)).collect();
        for leaf in 1..5 {
            edges.push((0, leaf));
            edges.push((leaf, leaf));
        }
        let a = CombinationMatrix::uniform_from_support(&Adjacency::from_edges(5, &edges)).unwrap();
        let map = influence_map(&a, 0, 1, 0.1, 3).unwrap();
        let first = map.sources[0].raw;
        assert!(map.sources.iter().all(|s| (s.raw - first).abs() < 1e-15));
        assert!(map
            .sources
            .iter()
            .all(|s| (s.normalized - 1.0).abs() < 1e-15));
    }

    #[test]
    fn all_zero_map_skips_normalization() {
        let a = CombinationMatrix::identity(3);
        let map = influence_map(&a, 1, 2, 0.1, 2).unwrap();
        assert!(!map.normalized);
        assert!(map
            .sources
            .iter()
            .all(|s| s.raw == 0.0 && s.normalized == 0.0));
    }

    #[test]
    fn chain_is_the_only_route() {
        let a = weights(
            3,
            &[
                (0, 0, 1.0),
                (0, 1, 0.4),
                (1, 1, 0.6),
                (1, 2, 0.2),
                (2, 2, 0.8),
            ],
        );
        let p = most_influential_path(&a, 0, 2, 2, 0.1, 2).unwrap();
        assert_eq!(p.nodes, vec![0, 1, 2]);
        assert!(matches!(
            most_influential_path(&a, 0, 2, 1, 0.1, 2),
            Err(InfluenceError::NoPath { max_hops: 1, .. })
        ));
        assert!(matches!(
            most_influential_path(&a, 2, 0, 4, 0.1, 2),
            Err(InfluenceError::NoPath { .. })
        ));
    }

    #[test]
    fn two_hop_route_beats_weak_direct_edge() {
        // l = 0, v = 1, k = 2: direct a_02 = 0.1, two-hop 0.6 * 0.6.
        let a = weights(
            3,
            &[
                (0, 0, 0.4),
                (0, 1, 0.6),
                (1, 1, 0.4),
                (0, 2, 0.1),
                (1, 2, 0.6),
                (2, 2, 0.3),
                (2, 0, 0.6),
            ],
        );
        let direct = path_influence(&a, &[0, 2], 0.1, 2).unwrap();
        let two_hop = path_influence(&a, &[0, 1, 2], 0.1, 2).unwrap();
        assert!((direct / 0.1 - 0.09).abs() < 1e-15);
        assert!((two_hop / 0.1 - 0.2916).abs() < 1e-15);
        let p = most_influential_path(&a, 0, 2, 3, 0.1, 2).unwrap();
        assert_eq!(p.nodes, vec![0, 1, 2]);
        assert_eq!(p.score, two_hop);
        let p1 = most_influential_path(&a, 0, 2, 1, 0.1, 2).unwrap();
        assert_eq!(p1.nodes, vec![0, 2]);
    }

    #[test]
    fn self_path_is_zero_hops() {
        let a = crate::graph::generate_erdos_renyi(4, 0.5, 1).unwrap();
        let p = most_influential_path(&a, 2, 2, 3, 0.1, 5).unwrap();
        assert_eq!(p.nodes, vec![2]);
        assert!((p.score - 0.4).abs() < 1e-15);
    }

    #[test]
    fn equal_routes_prefer_lexicographic_order() {
        // Two symmetric two-hop routes 0 -> 1 -> 3 and 0 -> 2 -> 3.
        let adj = Adjacency::from_edges(
            4,
            &[
                (0, 0),
                (0, 1),
                (0, 2),
                (1, 1),
                (2, 2),
                (1, 3),
                (2, 3),
                (3, 3),
                (3, 0),
            ],
        );
        let a = CombinationMatrix::uniform_from_support(&adj).unwrap();
        let p = most_influential_path(&a, 0, 3, 2, 0.1, 2).unwrap();
        assert_eq!(p.nodes, vec![0, 1, 3]);
    }

    #[test]
    fn top_paths_are_sorted() {
        let a = crate::graph::generate_erdos_renyi(8, 0.3, 2).unwrap();
        let paths = top_paths_to(&a, 0, 3, 0.1, 4, 5).unwrap();
        assert!(paths.len() <= 5);
        assert!(paths.windows(2).all(|w| w[0].score >= w[1].score));
        assert!(paths.iter().all(|p| p.target() == 0));
    }

    #[test]
    fn same_step_derivative() {
        let a = crate::graph::generate_erdos_renyi(4, 0.5, 6).unwrap();
        let check = influence_derivative_check(&a, 3, 3, 3, 0.1, &mut rng::stream(1)).unwrap();
        for l in 0..4 {
            for k in 0..4 {
                let expected = if l == k { 0.1 } else { 0.0 };
                assert_eq!(check.closed_form[(l, k)], expected);
                assert!((check.numerical[(l, k)] - expected).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn previous_step_derivative() {
        let a = crate::graph::generate_erdos_renyi(5, 0.4, 2).unwrap();
        let check = influence_derivative_check(&a, 4, 6, 5, 0.1, &mut rng::stream(2)).unwrap();
        for l in 0..5 {
            for k in 0..5 {
                let expected = 0.1 * 0.9 * a.weight(l, k);
                assert!((check.closed_form[(l, k)] - expected).abs() < 1e-15);
                assert!((check.numerical[(l, k)] - expected).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn derivative_rejects_future_input() {
        let a = CombinationMatrix::identity(2);
        assert!(influence_derivative_check(&a, 2, 2, 3, 0.1, &mut rng::stream(0)).is_err());
    }
}
