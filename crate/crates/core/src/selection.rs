//! Class-balanced stimulus-set selection.
//!
//! For one model pair, choose at most `m` candidates maximizing total
//! controversiality such that every class is the target of model A at most
//! `q` times and the target of model B at most `q` times. With `m = K·q`
//! a full solution targets each class exactly `q` times per model.
//!
//! The problem is a degree-constrained bipartite matching between
//! `y_a`-nodes and `y_b`-nodes and is solved exactly as a min-cost flow.
//! Among solutions of maximal cardinality the one of maximal score is
//! returned; remaining ties go to the lexicographically smallest list of
//! `(y_a, y_b)` pairs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::stimulus::{pair_condition, StimulusManifest, StimulusRecord};
use crate::{Error, Result};

/// Scores closer than this are treated as equal when breaking ties.
pub const SCORE_TOLERANCE: f64 = 1e-9;

/// Largest instance [`brute_force_select`] accepts.
pub const BRUTE_FORCE_LIMIT: usize = 15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: String,
    pub class_a: usize,
    pub class_b: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionProblem {
    pub candidates: Vec<Candidate>,
    pub num_classes: usize,
    pub subset_size: usize,
    pub quota: usize,
}

impl SelectionProblem {
    /// A full balanced problem: `subset_size = num_classes · quota`.
    pub fn balanced(candidates: Vec<Candidate>, num_classes: usize, quota: usize) -> Result<Self> {
        let p = SelectionProblem { candidates, num_classes, subset_size: num_classes * quota, quota };
        p.validate()?;
        Ok(p)
    }

    pub fn from_records(records: &[StimulusRecord], num_classes: usize, quota: usize) -> Result<Self> {
        let candidates = records
            .iter()
            .map(|r| Candidate {
                id: r.id.clone(),
                class_a: r.assignment.class_a,
                class_b: r.assignment.class_b,
                score: r.score.value(),
            })
            .collect();
        Self::balanced(candidates, num_classes, quota)
    }

    pub fn validate(&self) -> Result<()> {
        if self.candidates.is_empty() {
            return Err(Error::invalid("no candidates to select from"));
        }
        if self.quota == 0 || self.subset_size == 0 {
            return Err(Error::invalid("quota and subset size must be positive"));
        }
        if self.subset_size > self.num_classes * self.quota {
            return Err(Error::invalid("subset size exceeds num_classes × quota"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for c in &self.candidates {
            if c.class_a >= self.num_classes || c.class_b >= self.num_classes || c.class_a == c.class_b {
                return Err(Error::invalid(format!("candidate {} has invalid classes", c.id)));
            }
            if !c.score.is_finite() {
                return Err(Error::invalid(format!("candidate {} has a non-finite score", c.id)));
            }
            if !seen.insert((c.class_a, c.class_b)) {
                return Err(Error::invalid(format!(
                    "more than one candidate for class pair ({}, {})",
                    c.class_a, c.class_b
                )));
            }
        }
        Ok(())
    }

    /// Candidate indices in `(y_a, y_b)` order.
    fn canonical_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.candidates.len()).collect();
        order.sort_by_key(|&i| (self.candidates[i].class_a, self.candidates[i].class_b));
        order
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionStatus {
    Full,
    Partial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Chosen candidates in `(y_a, y_b)` order.
    pub selected: Vec<Candidate>,
    /// Sum of the chosen scores, accumulated in `(y_a, y_b)` order.
    pub objective: f64,
    pub status: SelectionStatus,
}

impl Selection {
    fn from_indices(p: &SelectionProblem, mut chosen: Vec<usize>) -> Self {
        chosen.sort_by_key(|&i| (p.candidates[i].class_a, p.candidates[i].class_b));
        let selected: Vec<Candidate> = chosen.iter().map(|&i| p.candidates[i].clone()).collect();
        let objective = selected.iter().map(|c| c.score).sum();
        let status = if selected.len() == p.subset_size { SelectionStatus::Full } else { SelectionStatus::Partial };
        Selection { selected, objective, status }
    }

    pub fn ids(&self) -> Vec<String> {
        self.selected.iter().map(|c| c.id.clone()).collect()
    }
}

/// Exact selection by min-cost flow.
pub fn select_stimulus_set(p: &SelectionProblem) -> Result<Selection> {
    p.validate()?;
    let mut forced_in = vec![false; p.candidates.len()];
    let mut excluded = vec![false; p.candidates.len()];
    let best = solve(p, &forced_in, &excluded).expect("unconstrained problem is feasible");
    for i in p.canonical_order() {
        forced_in[i] = true;
        let keep = solve(p, &forced_in, &excluded)
            .is_some_and(|(card, score)| card == best.0 && score >= best.1 - SCORE_TOLERANCE);
        if !keep {
            forced_in[i] = false;
            excluded[i] = true;
        }
    }
    let chosen: Vec<usize> = (0..p.candidates.len()).filter(|&i| forced_in[i]).collect();
    let selection = Selection::from_indices(p, chosen);
    if selection.status == SelectionStatus::Partial {
        tracing::warn!(
            selected = selection.selected.len(),
            requested = p.subset_size,
            "no fully balanced selection exists; returning a partial one"
        );
    }
    Ok(selection)
}

/// Optimal `(cardinality, score)` with the candidates in `forced_in` taken
/// and those in `excluded` removed; `None` if the forced set breaks a quota.
fn solve(p: &SelectionProblem, forced_in: &[bool], excluded: &[bool]) -> Option<(usize, f64)> {
    let k = p.num_classes;
    let mut cap_a = vec![p.quota; k];
    let mut cap_b = vec![p.quota; k];
    let mut forced_count = 0;
    let mut forced_score = 0.0;
    for (c, _) in p.candidates.iter().zip(forced_in).filter(|(_, f)| **f) {
        if cap_a[c.class_a] == 0 || cap_b[c.class_b] == 0 {
            return None;
        }
        cap_a[c.class_a] -= 1;
        cap_b[c.class_b] -= 1;
        forced_count += 1;
        forced_score += c.score;
    }
    if forced_count > p.subset_size {
        return None;
    }
    // Nodes: super source, source, y_a nodes, y_b nodes, sink.
    let (super_source, source, sink) = (0, 1, 2 + 2 * k);
    let mut g = FlowGraph::new(2 * k + 3);
    g.add_edge(super_source, source, p.subset_size - forced_count, 0.0);
    for y in 0..k {
        g.add_edge(source, 2 + y, cap_a[y], 0.0);
        g.add_edge(2 + k + y, sink, cap_b[y], 0.0);
    }
    for (i, c) in p.candidates.iter().enumerate() {
        if !forced_in[i] && !excluded[i] {
            g.add_edge(2 + c.class_a, 2 + k + c.class_b, 1, -c.score);
        }
    }
    let (flow, cost) = g.min_cost_max_flow(super_source, sink);
    Some((forced_count + flow, forced_score - cost))
}

struct Edge {
    to: usize,
    cap: usize,
    cost: f64,
}

struct FlowGraph {
    edges: Vec<Edge>,
    adj: Vec<Vec<usize>>,
}

impl FlowGraph {
    fn new(n: usize) -> Self {
        FlowGraph { edges: Vec::new(), adj: vec![Vec::new(); n] }
    }

    fn add_edge(&mut self, from: usize, to: usize, cap: usize, cost: f64) {
        self.adj[from].push(self.edges.len());
        self.edges.push(Edge { to, cap, cost });
        self.adj[to].push(self.edges.len());
        self.edges.push(Edge { to: from, cap: 0, cost: -cost });
    }

    /// Successive shortest paths with Bellman-Ford; returns (flow, cost).
    fn min_cost_max_flow(&mut self, s: usize, t: usize) -> (usize, f64) {
        let n = self.adj.len();
        let (mut flow, mut cost) = (0, 0.0);
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
                        if edge.cap > 0 && dist[u] + edge.cost < dist[edge.to] - 1e-12 {
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
                return (flow, cost);
            }
            let mut push = usize::MAX;
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
                cost += push as f64 * self.edges[e].cost;
                v = self.edges[e ^ 1].to;
            }
            flow += push;
        }
    }
}

/// Exhaustive enumeration over all quota-respecting subsets; a test oracle.
pub fn brute_force_select(p: &SelectionProblem) -> Result<Selection> {
    p.validate()?;
    let n = p.candidates.len();
    if n > BRUTE_FORCE_LIMIT {
        return Err(Error::invalid(format!("brute force is limited to {BRUTE_FORCE_LIMIT} candidates")));
    }
    let order = p.canonical_order();
    let mut feasible: Vec<(usize, f64, Vec<usize>)> = Vec::new();
    for mask in 0u32..(1 << n) {
        let members: Vec<usize> = order.iter().copied().filter(|&i| mask & (1 << i) != 0).collect();
        if members.len() > p.subset_size {
            continue;
        }
        let mut count_a = vec![0; p.num_classes];
        let mut count_b = vec![0; p.num_classes];
        for &i in &members {
            count_a[p.candidates[i].class_a] += 1;
            count_b[p.candidates[i].class_b] += 1;
        }
        if count_a.iter().chain(&count_b).any(|&c| c > p.quota) {
            continue;
        }
        let score = members.iter().map(|&i| p.candidates[i].score).sum();
        feasible.push((members.len(), score, members));
    }
    let best_card = feasible.iter().map(|f| f.0).max().unwrap_or(0);
    let best_score = feasible.iter().filter(|f| f.0 == best_card).map(|f| f.1).fold(f64::NEG_INFINITY, f64::max);
    let rank = |i: &usize| order.iter().position(|j| j == i).expect("index in order");
    let chosen = feasible
        .into_iter()
        .filter(|f| f.0 == best_card && f.1 >= best_score - SCORE_TOLERANCE)
        .map(|f| f.2)
        .min_by(|x, y| x.iter().map(rank).cmp(y.iter().map(rank)))
        .unwrap_or_default();
    Ok(Selection::from_indices(p, chosen))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSelection {
    pub condition: String,
    pub model_a: String,
    pub model_b: String,
    pub status: SelectionStatus,
    pub requested: usize,
    pub selected: Vec<String>,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub num_classes: usize,
    pub quota: usize,
    pub pairs: Vec<PairSelection>,
}

impl SelectionReport {
    pub fn selected_ids(&self) -> Vec<String> {
        self.pairs.iter().flat_map(|p| p.selected.iter().cloned()).collect()
    }
}

/// Runs one selection per model pair found in `records`.
pub fn select_per_pair(records: &[StimulusRecord], num_classes: usize, quota: usize) -> Result<SelectionReport> {
    let mut groups: BTreeMap<(String, String), Vec<Candidate>> = BTreeMap::new();
    for r in records {
        let key = (r.assignment.model_a.clone(), r.assignment.model_b.clone());
        groups.entry(key).or_default().push(Candidate {
            id: r.id.clone(),
            class_a: r.assignment.class_a,
            class_b: r.assignment.class_b,
            score: r.score.value(),
        });
    }
    select_groups(groups, num_classes, quota)
}

/// Like [`select_per_pair`] but reads candidates from the provenance of a
/// stimulus manifest, keeping those scoring at least `min_score`.
pub fn select_from_manifest(
    manifest: &StimulusManifest,
    num_classes: usize,
    quota: usize,
    min_score: f64,
) -> Result<SelectionReport> {
    let mut groups: BTreeMap<(String, String), Vec<Candidate>> = BTreeMap::new();
    for (entry, prov) in manifest.stimuli.iter().filter_map(|e| e.provenance.as_ref().map(|p| (e, p))) {
        let key = (prov.assignment.model_a.clone(), prov.assignment.model_b.clone());
        let group = groups.entry(key).or_default();
        if prov.score >= min_score {
            group.push(Candidate {
                id: entry.id.clone(),
                class_a: prov.assignment.class_a,
                class_b: prov.assignment.class_b,
                score: prov.score,
            });
        }
    }
    select_groups(groups, num_classes, quota)
}

fn select_groups(
    groups: BTreeMap<(String, String), Vec<Candidate>>,
    num_classes: usize,
    quota: usize,
) -> Result<SelectionReport> {
    if groups.is_empty() {
        return Err(Error::invalid("no stimulus records to select from"));
    }
    let mut pairs = Vec::new();
    for ((model_a, model_b), candidates) in groups {
        let requested = num_classes * quota;
        let selection = if candidates.is_empty() {
            Selection { selected: Vec::new(), objective: 0.0, status: SelectionStatus::Partial }
        } else {
            select_stimulus_set(&SelectionProblem::balanced(candidates, num_classes, quota)?)?
        };
        pairs.push(PairSelection {
            condition: pair_condition(&model_a, &model_b),
            model_a,
            model_b,
            status: selection.status,
            requested,
            selected: selection.ids(),
            objective: selection.objective,
        });
    }
    Ok(SelectionReport { num_classes, quota, pairs })
}
