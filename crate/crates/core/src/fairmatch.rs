//! Max-flow re-ranking that promotes relevant but rarely recommended items.
//!
//! The long lists form a bipartite graph (items on the left, users on the
//! right) fed by a source and drained by a sink. Middle edges get a
//! capacity mixing the item's rank in the user's list with its (or its
//! supplier's) visibility, so relevant low-visibility items sit behind
//! narrow edges. After a FIFO push-relabel solve, left nodes that could not
//! forward their preflow had to push it back to the source, which lifts
//! their label to at least the source label; those are harvested, removed,
//! and the process repeats on the remaining graph. Harvested `(item, user)`
//! pairs then replace the most visible entries of each final list.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::dataset::SupplierMap;
use crate::error::{Error, Result};
use crate::recommend::{RecBatch, RecList};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Visibility is the item's degree.
    Item,
    /// Visibility is the summed degree of all items of the item's supplier.
    Supplier,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FairMatchConfig {
    pub variant: Variant,
    /// Weight on rank versus visibility, in [0, 1].
    pub lambda: f64,
    /// Fraction of each final list open to replacement, in (0, 1].
    pub beta: f64,
    pub long_list_size: usize,
    pub final_size: usize,
}

impl FairMatchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::domain(format!(
                "lambda {} outside [0, 1]",
                self.lambda
            )));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::domain(format!("beta {} outside (0, 1]", self.beta)));
        }
        if self.final_size == 0 || self.final_size >= self.long_list_size {
            return Err(Error::domain(format!(
                "final size {} must be in 1..{}",
                self.final_size, self.long_list_size
            )));
        }
        Ok(())
    }
}

/// Structural bipartite graph of a batch: one left node per distinct item,
/// one right node per user, one edge per list entry.
#[derive(Debug, Clone, PartialEq)]
pub struct RecGraph {
    /// Left node → item ordinal, ascending.
    pub items: Vec<usize>,
    /// Right node → user ordinal, ascending.
    pub users: Vec<usize>,
    pub edges: Vec<GraphEdge>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraphEdge {
    pub left: usize,
    pub right: usize,
    /// 1-based position of the item in the user's long list.
    pub rank: usize,
}

impl RecGraph {
    /// Left-node degrees.
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.items.len()];
        for e in &self.edges {
            deg[e.left] += 1;
        }
        deg
    }

    /// Keeps only `edges`, dropping nodes left without any edge.
    fn induced(&self, edges: impl Iterator<Item = GraphEdge>) -> RecGraph {
        let edges: Vec<GraphEdge> = edges.collect();
        let mut left_used = vec![false; self.items.len()];
        let mut right_used = vec![false; self.users.len()];
        for e in &edges {
            left_used[e.left] = true;
            right_used[e.right] = true;
        }
        let remap = |used: &[bool]| {
            let mut next = 0;
            used.iter()
                .map(|&u| {
                    let ix = next;
                    next += usize::from(u);
                    u.then_some(ix)
                })
                .collect::<Vec<_>>()
        };
        let left_map = remap(&left_used);
        let right_map = remap(&right_used);
        RecGraph {
            items: self
                .items
                .iter()
                .zip(&left_used)
                .filter(|(_, &u)| u)
                .map(|(&i, _)| i)
                .collect(),
            users: self
                .users
                .iter()
                .zip(&right_used)
                .filter(|(_, &u)| u)
                .map(|(&i, _)| i)
                .collect(),
            edges: edges
                .iter()
                .map(|e| GraphEdge {
                    left: left_map[e.left].expect("used"),
                    right: right_map[e.right].expect("used"),
                    rank: e.rank,
                })
                .collect(),
        }
    }
}

pub fn build_graph(batch: &RecBatch) -> Result<RecGraph> {
    let num_items = batch.items().len();
    let mut left_of = vec![usize::MAX; num_items];
    let mut present = vec![false; num_items];
    for list in batch.lists() {
        for item in list.items() {
            present[item] = true;
        }
    }
    let items: Vec<usize> = (0..num_items).filter(|&i| present[i]).collect();
    if items.is_empty() {
        return Err(Error::domain("cannot build a graph from an empty batch"));
    }
    for (l, &i) in items.iter().enumerate() {
        left_of[i] = l;
    }
    let lists: Vec<&RecList> = batch.lists().iter().filter(|l| !l.is_empty()).collect();
    let users: Vec<usize> = lists.iter().map(|l| l.user).collect();
    let mut edges: Vec<GraphEdge> = lists
        .iter()
        .enumerate()
        .flat_map(|(r, list)| {
            list.items()
                .enumerate()
                .map(move |(pos, item)| (r, pos, item))
        })
        .map(|(right, pos, item)| GraphEdge {
            left: left_of[item],
            right,
            rank: pos + 1,
        })
        .collect();
    edges.sort_by_key(|e| (e.left, e.right));
    Ok(RecGraph {
        items,
        users,
        edges,
    })
}

/// Capacities for the source and sink edges derived from the total middle capacity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TerminalCapacities {
    pub total: u64,
    /// `ceil(total / |I|)`
    pub per_left: u64,
    /// `ceil(total / |U|)`
    pub per_right: u64,
    pub gcd: u64,
    /// Capacity of every `s1 → item` edge.
    pub source: u64,
    /// Capacity of every `user → s2` edge.
    pub sink: u64,
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

pub fn terminal_capacities(total: u64, num_left: usize, num_right: usize) -> TerminalCapacities {
    let per_left = total.div_ceil(num_left as u64);
    let per_right = total.div_ceil(num_right as u64);
    let g = gcd(per_left, per_right).max(1);
    TerminalCapacities {
        total,
        per_left,
        per_right,
        gcd: g,
        source: (per_left / g).min(per_right / g),
        sink: per_left / g,
    }
}

/// Slack absorbed before rounding weights up, so values like 4.000000000001
/// produced by float arithmetic are not pushed to the next integer.
const CEIL_SLACK: f64 = 1e-9;

/// Middle-edge capacities (aligned with `graph.edges`) for the given variant.
pub fn middle_weights(
    graph: &RecGraph,
    suppliers: Option<&SupplierMap>,
    config: &FairMatchConfig,
) -> Result<Vec<u64>> {
    let degrees = graph.degrees();
    let visibility: Vec<f64> = match config.variant {
        Variant::Item => degrees.iter().map(|&d| d as f64).collect(),
        Variant::Supplier => {
            let sm = suppliers
                .ok_or_else(|| Error::domain("supplier variant requires a supplier map"))?;
            let mut per_supplier = vec![0usize; sm.num_suppliers()];
            for (l, &item) in graph.items.iter().enumerate() {
                per_supplier[sm.supplier_of(item)] += degrees[l];
            }
            graph
                .items
                .iter()
                .map(|&item| per_supplier[sm.supplier_of(item)] as f64)
                .collect()
        }
    };
    let edge_vis = graph.edges.iter().map(|e| visibility[e.left]);
    let lo = edge_vis.clone().fold(f64::INFINITY, f64::min);
    let hi = edge_vis.fold(f64::NEG_INFINITY, f64::max);
    let span = (config.long_list_size.max(1) - 1) as f64;
    let lambda = config.lambda;
    Ok(graph
        .edges
        .iter()
        .map(|e| {
            let vis = if hi > lo {
                1.0 + (visibility[e.left] - lo) / (hi - lo) * span
            } else {
                1.0
            };
            let w = lambda * e.rank as f64 + (1.0 - lambda) * vis;
            (w - CEIL_SLACK).ceil().max(0.0) as u64
        })
        .collect())
}

/// Builds the capacitated flow network for one FairMatch iteration.
pub fn compute_weights(
    graph: &RecGraph,
    suppliers: Option<&SupplierMap>,
    config: &FairMatchConfig,
) -> Result<FlowNetwork> {
    let weights = middle_weights(graph, suppliers, config)?;
    let caps = terminal_capacities(weights.iter().sum(), graph.items.len(), graph.users.len());
    let mut net = FlowNetwork::new(graph.items.len(), graph.users.len());
    for (e, &w) in graph.edges.iter().zip(&weights) {
        net.add_middle_edge(e.left, e.right, w);
    }
    for l in 0..graph.items.len() {
        net.set_source_capacity(l, caps.source);
    }
    for r in 0..graph.users.len() {
        net.set_sink_capacity(r, caps.sink);
    }
    Ok(net)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Node {
    Source,
    Left(usize),
    Right(usize),
    Sink,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Push {
    pub from: Node,
    pub to: Node,
    pub amount: u64,
}

#[derive(Debug, Clone, Copy)]
struct Arc {
    to: usize,
    residual: u64,
}

/// Source `s1`, left nodes, right nodes and sink `s2` with integer capacities.
///
/// Arcs are stored in pairs (`e`, `e ^ 1`) so the reverse residual of any
/// arc is one index away.
#[derive(Debug, Clone)]
pub struct FlowNetwork {
    num_left: usize,
    num_right: usize,
    arcs: Vec<Arc>,
    capacity: Vec<u64>,
    adjacency: Vec<Vec<usize>>,
    source_arcs: Vec<usize>,
    sink_arcs: Vec<usize>,
    middle_arcs: Vec<(usize, usize, usize)>,
    label: Vec<u64>,
    excess: Vec<u64>,
    trace: Option<Vec<Push>>,
}

/// Result of a push-relabel solve.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxFlow {
    pub value: u64,
    pub left_labels: Vec<u64>,
    pub right_labels: Vec<u64>,
    /// Excess left on every non-terminal node (all zero after a solve).
    pub residual_excess: u64,
}

impl FlowNetwork {
    /// Network with all terminal edges present at capacity zero.
    pub fn new(num_left: usize, num_right: usize) -> Self {
        let n = num_left + num_right + 2;
        let mut net = Self {
            num_left,
            num_right,
            arcs: Vec::new(),
            capacity: Vec::new(),
            adjacency: vec![Vec::new(); n],
            source_arcs: Vec::with_capacity(num_left),
            sink_arcs: Vec::with_capacity(num_right),
            middle_arcs: Vec::new(),
            label: vec![0; n],
            excess: vec![0; n],
            trace: None,
        };
        for l in 0..num_left {
            let e = net.add_arc(net.source(), net.left(l), 0);
            net.source_arcs.push(e);
        }
        for r in 0..num_right {
            let e = net.add_arc(net.right(r), net.sink(), 0);
            net.sink_arcs.push(e);
        }
        net
    }

    fn source(&self) -> usize {
        0
    }

    fn left(&self, l: usize) -> usize {
        1 + l
    }

    fn right(&self, r: usize) -> usize {
        1 + self.num_left + r
    }

    fn sink(&self) -> usize {
        1 + self.num_left + self.num_right
    }

    fn num_nodes(&self) -> usize {
        self.num_left + self.num_right + 2
    }

    fn node(&self, v: usize) -> Node {
        if v == self.source() {
            Node::Source
        } else if v == self.sink() {
            Node::Sink
        } else if v <= self.num_left {
            Node::Left(v - 1)
        } else {
            Node::Right(v - 1 - self.num_left)
        }
    }

    fn add_arc(&mut self, from: usize, to: usize, cap: u64) -> usize {
        let e = self.arcs.len();
        self.arcs.push(Arc { to, residual: cap });
        self.arcs.push(Arc {
            to: from,
            residual: 0,
        });
        self.capacity.push(cap);
        self.capacity.push(0);
        self.adjacency[from].push(e);
        self.adjacency[to].push(e + 1);
        e
    }

    pub fn num_left(&self) -> usize {
        self.num_left
    }

    pub fn num_right(&self) -> usize {
        self.num_right
    }

    pub fn add_middle_edge(&mut self, left: usize, right: usize, capacity: u64) {
        let e = self.add_arc(self.left(left), self.right(right), capacity);
        self.middle_arcs.push((left, right, e));
    }

    pub fn set_source_capacity(&mut self, left: usize, capacity: u64) {
        let e = self.source_arcs[left];
        self.capacity[e] = capacity;
        self.arcs[e].residual = capacity;
    }

    pub fn set_sink_capacity(&mut self, right: usize, capacity: u64) {
        let e = self.sink_arcs[right];
        self.capacity[e] = capacity;
        self.arcs[e].residual = capacity;
    }

    pub fn source_capacity(&self, left: usize) -> u64 {
        self.capacity[self.source_arcs[left]]
    }

    pub fn sink_capacity(&self, right: usize) -> u64 {
        self.capacity[self.sink_arcs[right]]
    }

    /// `(left, right, capacity)` of every middle edge in insertion order.
    pub fn middle_edges(&self) -> impl Iterator<Item = (usize, usize, u64)> + '_ {
        self.middle_arcs
            .iter()
            .map(|&(l, r, e)| (l, r, self.capacity[e]))
    }

    /// Flow currently on a middle edge.
    pub fn middle_flow(&self, index: usize) -> u64 {
        let (_, _, e) = self.middle_arcs[index];
        self.capacity[e] - self.arcs[e].residual
    }

    /// Records every push performed by the next solve.
    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    pub fn trace(&self) -> Option<&[Push]> {
        self.trace.as_deref()
    }

    pub fn left_label(&self, left: usize) -> u64 {
        self.label[self.left(left)]
    }

    /// The label the source is pinned at, `|I| + |U| + 2`.
    pub fn source_label(&self) -> u64 {
        self.num_nodes() as u64
    }

    fn push(&mut self, u: usize, e: usize, amount: u64) {
        let v = self.arcs[e].to;
        self.arcs[e].residual -= amount;
        self.arcs[e ^ 1].residual += amount;
        self.excess[u] -= amount;
        self.excess[v] += amount;
        if self.trace.is_some() {
            let step = Push {
                from: self.node(u),
                to: self.node(v),
                amount,
            };
            if let Some(trace) = &mut self.trace {
                trace.push(step);
            }
        }
    }

    /// FIFO push-relabel from the preflow labeling `s1 = |I|+|U|+2`,
    /// left = 2, right = 1, `s2` = 0.
    pub fn push_relabel_max_flow(&mut self) -> MaxFlow {
        let n = self.num_nodes();
        let (s, t) = (self.source(), self.sink());
        for (e, arc) in self.arcs.iter_mut().enumerate() {
            arc.residual = self.capacity[e];
        }
        self.excess.iter_mut().for_each(|x| *x = 0);
        self.label[s] = n as u64;
        self.label[t] = 0;
        for l in 0..self.num_left {
            let v = self.left(l);
            self.label[v] = 2;
        }
        for r in 0..self.num_right {
            let v = self.right(r);
            self.label[v] = 1;
        }

        let mut queue = VecDeque::new();
        let mut queued = vec![false; n];
        for l in 0..self.num_left {
            let e = self.source_arcs[l];
            let cap = self.arcs[e].residual;
            self.excess[s] += cap;
            if cap > 0 {
                self.push(s, e, cap);
                let v = self.left(l);
                queue.push_back(v);
                queued[v] = true;
            }
        }

        let mut current = vec![0usize; n];
        while let Some(u) = queue.pop_front() {
            queued[u] = false;
            // discharge
            while self.excess[u] > 0 {
                if current[u] == self.adjacency[u].len() {
                    let lowest = self.adjacency[u]
                        .iter()
                        .filter(|&&e| self.arcs[e].residual > 0)
                        .map(|&e| self.label[self.arcs[e].to])
                        .min();
                    match lowest {
                        Some(h) => self.label[u] = h + 1,
                        None => break,
                    }
                    current[u] = 0;
                    continue;
                }
                let e = self.adjacency[u][current[u]];
                let arc = self.arcs[e];
                if arc.residual > 0 && self.label[u] == self.label[arc.to] + 1 {
                    let amount = self.excess[u].min(arc.residual);
                    self.push(u, e, amount);
                    let v = arc.to;
                    if v != s && v != t && !queued[v] {
                        queue.push_back(v);
                        queued[v] = true;
                    }
                } else {
                    current[u] += 1;
                }
            }
        }

        let residual_excess = (1..t).map(|v| self.excess[v]).sum();
        MaxFlow {
            value: self.excess[t],
            left_labels: (0..self.num_left)
                .map(|l| self.label[self.left(l)])
                .collect(),
            right_labels: (0..self.num_right)
                .map(|r| self.label[self.right(r)])
                .collect(),
            residual_excess,
        }
    }
}

/// Left nodes whose final label reached `|I| + |U| + 2`.
pub fn select_candidates(net: &FlowNetwork) -> Vec<usize> {
    let threshold = net.source_label();
    (0..net.num_left())
        .filter(|&l| net.left_label(l) >= threshold)
        .collect()
}

/// Harvested `(item, user)` pairs plus the long-list visibility of every item.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub pairs: BTreeSet<(usize, usize)>,
    /// Number of long lists containing each item, indexed by item ordinal.
    pub visibility: Vec<usize>,
    /// Number of max-flow solves performed.
    pub iterations: usize,
    /// Items harvested by each productive iteration.
    pub harvested: Vec<Vec<usize>>,
}

impl CandidateSet {
    /// Candidate items paired with `user`, ascending visibility then ordinal.
    pub fn items_for(&self, user: usize) -> Vec<usize> {
        let mut items: Vec<usize> = self
            .pairs
            .iter()
            .filter(|&&(_, u)| u == user)
            .map(|&(i, _)| i)
            .collect();
        items.sort_by_key(|&i| (self.visibility[i], i));
        items
    }
}

/// Repeats weight computation, push-relabel and harvesting until an
/// iteration selects nothing or the graph is exhausted.
pub fn fairmatch_iterate(
    batch: &RecBatch,
    suppliers: Option<&SupplierMap>,
    config: &FairMatchConfig,
) -> Result<CandidateSet> {
    config.validate()?;
    if config.variant == Variant::Supplier && suppliers.is_none() {
        return Err(Error::domain("supplier variant requires a supplier map"));
    }
    let visibility = long_list_visibility(batch);

    let mut graph = build_graph(batch)?;
    let mut pairs = BTreeSet::new();
    let mut harvested = Vec::new();
    let mut iterations = 0;
    while !graph.edges.is_empty() {
        let mut net = compute_weights(&graph, suppliers, config)?;
        net.push_relabel_max_flow();
        iterations += 1;
        let selected = select_candidates(&net);
        if selected.is_empty() {
            break;
        }
        let mut is_selected = vec![false; graph.items.len()];
        for &l in &selected {
            is_selected[l] = true;
        }
        for e in &graph.edges {
            if is_selected[e.left] {
                pairs.insert((graph.items[e.left], graph.users[e.right]));
            }
        }
        harvested.push(selected.iter().map(|&l| graph.items[l]).collect());
        let remaining: Vec<GraphEdge> = graph
            .edges
            .iter()
            .filter(|e| !is_selected[e.left])
            .copied()
            .collect();
        graph = graph.induced(remaining.into_iter());
    }
    Ok(CandidateSet {
        pairs,
        visibility,
        iterations,
        harvested,
    })
}

fn long_list_visibility(batch: &RecBatch) -> Vec<usize> {
    let mut counts = vec![0usize; batch.items().len()];
    for list in batch.lists() {
        for item in list.items() {
            counts[item] += 1;
        }
    }
    counts
}

/// Number of entries of an `n`-list open to replacement.
fn replacement_budget(beta: f64, n: usize) -> usize {
    ((beta * n as f64 + CEIL_SLACK).floor() as usize).min(n)
}

/// Final lists of size `n`: the top-`n` prefix minus its `m` most visible
/// entries, followed by the `m` least visible candidates paired with the
/// user that are not already in the prefix.
pub fn reconstruct_lists(
    batch: &RecBatch,
    candidates: &CandidateSet,
    config: &FairMatchConfig,
) -> RecBatch {
    let n = config.final_size;
    let budget = replacement_budget(config.beta, n);
    let lists = batch
        .lists()
        .iter()
        .map(|list| {
            let prefix: Vec<(usize, f64)> = list.entries.iter().take(n).copied().collect();
            let rank = |item: usize| list.entries.iter().position(|&(i, _)| i == item);
            let mut fresh: Vec<usize> = candidates
                .items_for(list.user)
                .into_iter()
                .filter(|i| !prefix.iter().any(|&(p, _)| p == *i))
                .collect();
            fresh.sort_by_key(|&i| (candidates.visibility[i], rank(i)));
            let m = budget.min(fresh.len());
            if m == 0 {
                return RecList {
                    user: list.user,
                    entries: prefix,
                };
            }
            // Most visible first; among equals the lower-ranked entry goes first.
            let mut by_visibility: Vec<usize> = (0..prefix.len()).collect();
            by_visibility.sort_by_key(|&pos| {
                (
                    std::cmp::Reverse(candidates.visibility[prefix[pos].0]),
                    std::cmp::Reverse(pos),
                )
            });
            let dropped: BTreeSet<usize> = by_visibility.into_iter().take(m).collect();
            let mut entries: Vec<(usize, f64)> = prefix
                .iter()
                .enumerate()
                .filter(|(pos, _)| !dropped.contains(pos))
                .map(|(_, &e)| e)
                .collect();
            for &item in fresh.iter().take(m) {
                let score = list
                    .entries
                    .iter()
                    .find(|&&(i, _)| i == item)
                    .map_or(f64::NAN, |&(_, s)| s);
                entries.push((item, score));
            }
            RecList {
                user: list.user,
                entries,
            }
        })
        .collect();
    batch.with_lists(lists, n)
}

/// Full re-ranking: candidate harvesting followed by list reconstruction.
pub fn fairmatch(
    batch: &RecBatch,
    suppliers: Option<&SupplierMap>,
    config: &FairMatchConfig,
) -> Result<RecBatch> {
    let candidates = fairmatch_iterate(batch, suppliers, config)?;
    Ok(reconstruct_lists(batch, &candidates, config))
}
