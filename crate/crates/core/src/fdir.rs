//! Fault detection, isolation and restoration on radial distribution
//! feeders.
//!
//! A topology is a graph of sources, switches and loads. Loads and closed
//! switches conduct; open switches and faulted edges block. Each load is fed
//! by at most one source at a time.
//!
//! Ticks are read as seconds throughout this module.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::invariant::Tick;

pub const TICKS_PER_MINUTE: f64 = 60.0;

/// Upper bound on enumerated restoration paths.
const MAX_PATHS: usize = 10_000;

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FdirError {
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("unknown edge {0:?}")]
    UnknownEdge(String),
    #[error("unknown load {0:?}")]
    UnknownLoad(String),
    #[error("unknown switch {0:?}")]
    UnknownSwitch(String),
    #[error("no switch can isolate fault on edge {0:?}")]
    NoIsolatingSwitches(String),
    #[error("invalid path: {0}")]
    InvalidPath(String),
    #[error("re-closing {switch:?} is unsafe: {reason}")]
    RestoreSafetyViolation { switch: String, reason: String },
    #[error("negative interruption duration for load {0:?}")]
    NegativeDuration(String),
    #[error("parse error: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SwitchState {
    Open,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SwitchKind {
    Sectionalizer,
    Recloser,
    TieRecloser,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Node {
    Source { capacity_kw: f64 },
    Switch { state: SwitchState, kind: SwitchKind },
    Load { demand_kw: f64, customers: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Edge {
    pub id: String,
    pub a: String,
    pub b: String,
    pub capacity_kw: f64,
}

impl Edge {
    pub fn other(&self, end: &str) -> &str {
        if self.a == end {
            &self.b
        } else {
            &self.a
        }
    }
}

#[derive(Serialize, Deserialize)]
struct NodeEntry {
    id: String,
    #[serde(flatten)]
    node: Node,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TopologyDoc {
    nodes: Vec<NodeEntry>,
    edges: Vec<Edge>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    faults: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    fdir_opened: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    relay_settings: BTreeMap<String, f64>,
}

/// Network state. Values are immutable in spirit: every operation returns a
/// new topology.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    nodes: BTreeMap<String, Node>,
    edges: BTreeMap<String, Edge>,
    faults: BTreeSet<String>,
    fdir_opened: BTreeSet<String>,
    relay_settings: BTreeMap<String, f64>,
    adjacency: BTreeMap<String, Vec<(String, String)>>,
}

impl Serialize for Topology {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        TopologyDoc {
            nodes: self
                .nodes
                .iter()
                .map(|(id, node)| NodeEntry {
                    id: id.clone(),
                    node: node.clone(),
                })
                .collect(),
            edges: self.edges.values().cloned().collect(),
            faults: self.faults.clone(),
            fdir_opened: self.fdir_opened.clone(),
            relay_settings: self.relay_settings.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Topology {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let doc = TopologyDoc::deserialize(d)?;
        let nodes = doc.nodes.into_iter().map(|e| (e.id, e.node)).collect::<Vec<_>>();
        let mut topo = Topology::new(nodes, doc.edges).map_err(serde::de::Error::custom)?;
        for f in doc.faults {
            if !topo.edges.contains_key(&f) {
                return Err(serde::de::Error::custom(format!("fault on unknown edge {f:?}")));
            }
            topo.faults.insert(f);
        }
        for s in &doc.fdir_opened {
            if !topo.is_switch(s) {
                return Err(serde::de::Error::custom(format!("fdir_opened names non-switch {s:?}")));
            }
        }
        topo.fdir_opened = doc.fdir_opened;
        topo.relay_settings = doc.relay_settings;
        Ok(topo)
    }
}

impl Topology {
    pub fn new(nodes: Vec<(String, Node)>, edges: Vec<Edge>) -> Result<Self, FdirError> {
        let invalid = |m: String| Err(FdirError::InvalidTopology(m));
        let mut node_map = BTreeMap::new();
        for (id, node) in nodes {
            let values = match &node {
                Node::Source { capacity_kw } => vec![*capacity_kw],
                Node::Load { demand_kw, .. } => vec![*demand_kw],
                Node::Switch { .. } => vec![],
            };
            if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return invalid(format!("node {id:?} has a negative or non-finite value"));
            }
            if node_map.insert(id.clone(), node).is_some() {
                return invalid(format!("duplicate node id {id:?}"));
            }
        }
        let mut edge_map = BTreeMap::new();
        let mut adjacency: BTreeMap<String, Vec<(String, String)>> =
            node_map.keys().map(|k| (k.clone(), Vec::new())).collect();
        for e in edges {
            for end in [&e.a, &e.b] {
                if !node_map.contains_key(end) {
                    return invalid(format!("edge {:?} references unknown node {end:?}", e.id));
                }
            }
            if e.a == e.b {
                return invalid(format!("edge {:?} is a self-loop", e.id));
            }
            if !e.capacity_kw.is_finite() || e.capacity_kw < 0.0 {
                return invalid(format!("edge {:?} has a negative or non-finite capacity", e.id));
            }
            adjacency.get_mut(&e.a).expect("checked").push((e.b.clone(), e.id.clone()));
            adjacency.get_mut(&e.b).expect("checked").push((e.a.clone(), e.id.clone()));
            if let Some(dup) = edge_map.insert(e.id.clone(), e) {
                return invalid(format!("duplicate edge id {:?}", dup.id));
            }
        }
        adjacency.values_mut().for_each(|v| v.sort());
        Ok(Topology {
            nodes: node_map,
            edges: edge_map,
            faults: BTreeSet::new(),
            fdir_opened: BTreeSet::new(),
            relay_settings: BTreeMap::new(),
            adjacency,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, FdirError> {
        serde_json::from_str(text).map_err(|e| FdirError::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("topology serializes")
    }

    pub fn nodes(&self) -> &BTreeMap<String, Node> {
        &self.nodes
    }
    pub fn edges(&self) -> &BTreeMap<String, Edge> {
        &self.edges
    }
    pub fn faults(&self) -> &BTreeSet<String> {
        &self.faults
    }
    pub fn fdir_opened(&self) -> &BTreeSet<String> {
        &self.fdir_opened
    }
    pub fn relay_settings(&self) -> &BTreeMap<String, f64> {
        &self.relay_settings
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.get(id)
    }

    /// Neighbours with the connecting edge id, sorted.
    pub fn neighbors(&self, id: &str) -> &[(String, String)] {
        self.adjacency.get(id).map_or(&[], Vec::as_slice)
    }

    pub fn is_source(&self, id: &str) -> bool {
        matches!(self.nodes.get(id), Some(Node::Source { .. }))
    }

    pub fn is_switch(&self, id: &str) -> bool {
        matches!(self.nodes.get(id), Some(Node::Switch { .. }))
    }

    pub fn is_load(&self, id: &str) -> bool {
        matches!(self.nodes.get(id), Some(Node::Load { .. }))
    }

    pub fn is_open_tie(&self, id: &str) -> bool {
        matches!(
            self.nodes.get(id),
            Some(Node::Switch {
                state: SwitchState::Open,
                kind: SwitchKind::TieRecloser
            })
        )
    }

    /// Loads and closed switches pass power on.
    pub fn conducts(&self, id: &str) -> bool {
        matches!(
            self.nodes.get(id),
            Some(Node::Load { .. })
                | Some(Node::Switch {
                    state: SwitchState::Closed,
                    ..
                })
        )
    }

    pub fn is_faulted(&self, edge: &str) -> bool {
        self.faults.contains(edge)
    }

    pub fn demand(&self, id: &str) -> f64 {
        match self.nodes.get(id) {
            Some(Node::Load { demand_kw, .. }) => *demand_kw,
            _ => 0.0,
        }
    }

    pub fn customers(&self, id: &str) -> u64 {
        match self.nodes.get(id) {
            Some(Node::Load { customers, .. }) => *customers,
            _ => 0,
        }
    }

    pub fn source_capacity(&self, id: &str) -> f64 {
        match self.nodes.get(id) {
            Some(Node::Source { capacity_kw }) => *capacity_kw,
            _ => 0.0,
        }
    }

    pub fn total_customers(&self) -> u64 {
        self.nodes.keys().map(|id| self.customers(id)).sum()
    }

    pub fn switch_state(&self, id: &str) -> Option<SwitchState> {
        match self.nodes.get(id) {
            Some(Node::Switch { state, .. }) => Some(*state),
            _ => None,
        }
    }

    /// Every switch with its state, in id order.
    pub fn switch_states(&self) -> BTreeMap<String, SwitchState> {
        self.nodes
            .iter()
            .filter_map(|(id, n)| match n {
                Node::Switch { state, .. } => Some((id.clone(), *state)),
                _ => None,
            })
            .collect()
    }

    pub fn set_switch(&self, id: &str, state: SwitchState) -> Result<Topology, FdirError> {
        let mut next = self.clone();
        match next.nodes.get_mut(id) {
            Some(Node::Switch { state: s, .. }) => *s = state,
            _ => return Err(FdirError::UnknownSwitch(id.to_string())),
        }
        Ok(next)
    }

    pub fn clear_fault(&self, edge: &str) -> Result<Topology, FdirError> {
        if !self.edges.contains_key(edge) {
            return Err(FdirError::UnknownEdge(edge.to_string()));
        }
        let mut next = self.clone();
        next.faults.remove(edge);
        Ok(next)
    }

    pub fn mark_fault(&self, edge: &str) -> Result<Topology, FdirError> {
        if !self.edges.contains_key(edge) {
            return Err(FdirError::UnknownEdge(edge.to_string()));
        }
        let mut next = self.clone();
        next.faults.insert(edge.to_string());
        Ok(next)
    }

    /// Which source feeds each node. Sources feed themselves; power spreads
    /// through conducting nodes over healthy edges and never through
    /// another source. When several sources reach a node, the lowest id
    /// wins.
    pub fn energized_by(&self) -> BTreeMap<String, String> {
        let mut fed = BTreeMap::new();
        for source in self.nodes.keys().filter(|id| self.is_source(id)) {
            fed.insert(source.clone(), source.clone());
            let mut queue = VecDeque::from([source.as_str()]);
            while let Some(u) = queue.pop_front() {
                for (v, e) in self.neighbors(u) {
                    if self.is_faulted(e) || !self.conducts(v) || fed.contains_key(v) {
                        continue;
                    }
                    fed.insert(v.clone(), source.clone());
                    queue.push_back(v);
                }
            }
        }
        fed
    }

    pub fn energized_loads(&self) -> BTreeSet<String> {
        self.energized_by().into_keys().filter(|id| self.is_load(id)).collect()
    }

    /// Demand currently fed by `source`.
    pub fn served_load(&self, source: &str) -> f64 {
        self.energized_by()
            .iter()
            .filter(|(_, s)| *s == source)
            .map(|(n, _)| self.demand(n))
            .sum()
    }

    /// Faulted edges with an energized conducting endpoint.
    pub fn energized_faults(&self) -> Vec<String> {
        let fed = self.energized_by();
        self.faults
            .iter()
            .filter(|e| {
                let edge = &self.edges[*e];
                [&edge.a, &edge.b].iter().any(|n| fed.contains_key(n.as_str()))
            })
            .cloned()
            .collect()
    }
}

/// Replaces load demands.
pub fn update_loads(topo: &Topology, readings: &BTreeMap<String, f64>) -> Result<Topology, FdirError> {
    let mut next = topo.clone();
    for (id, kw) in readings {
        match next.nodes.get_mut(id) {
            Some(Node::Load { demand_kw, .. }) if kw.is_finite() && *kw >= 0.0 => *demand_kw = *kw,
            Some(Node::Load { .. }) => {
                return Err(FdirError::InvalidTopology(format!("reading for {id:?} must be non-negative")))
            }
            _ => return Err(FdirError::UnknownLoad(id.clone())),
        }
    }
    Ok(next)
}

// ---------------------------------------------------------------------------
// Isolation

/// Marks `edge` faulted and opens the smallest set of closed switches that
/// separates it from every source and from every load outside the faulted
/// segment. Among minimum cuts the one closest to the fault is chosen. An
/// already isolated fault opens nothing.
pub fn isolate_fault(topo: &Topology, edge: &str) -> Result<(Topology, BTreeSet<String>), FdirError> {
    let faulted = topo
        .edges
        .get(edge)
        .ok_or_else(|| FdirError::UnknownEdge(edge.to_string()))?;
    let segment = fault_segment(topo, faulted);
    if segment.iter().any(|n| topo.is_source(n)) {
        return Err(FdirError::NoIsolatingSwitches(edge.to_string()));
    }
    let terminals: Vec<&str> = topo
        .nodes
        .keys()
        .filter(|id| topo.is_source(id) || (topo.is_load(id) && !segment.contains(id.as_str())))
        .map(String::as_str)
        .collect();
    let cut = min_switch_cut(topo, [faulted.a.as_str(), faulted.b.as_str()], &terminals)
        .ok_or_else(|| FdirError::NoIsolatingSwitches(edge.to_string()))?;

    let mut next = topo.mark_fault(edge)?;
    for s in &cut {
        next = next.set_switch(s, SwitchState::Open)?;
        next.fdir_opened.insert(s.clone());
    }
    Ok((next, cut))
}

/// Nodes reachable from the faulted edge without passing a switch.
fn fault_segment<'a>(topo: &'a Topology, faulted: &'a Edge) -> BTreeSet<&'a str> {
    let mut seen: BTreeSet<&str> = [faulted.a.as_str(), faulted.b.as_str()].into();
    let mut queue: VecDeque<&str> = seen.iter().copied().filter(|n| !topo.is_switch(n)).collect();
    while let Some(u) = queue.pop_front() {
        for (v, _) in topo.neighbors(u) {
            if seen.insert(v) && !topo.is_switch(v) {
                queue.push_back(v);
            }
        }
    }
    seen
}

struct FlowGraph {
    to: Vec<usize>,
    cap: Vec<i64>,
    head: Vec<Vec<usize>>,
}

impl FlowGraph {
    fn new(n: usize) -> Self {
        FlowGraph {
            to: Vec::new(),
            cap: Vec::new(),
            head: vec![Vec::new(); n],
        }
    }

    fn arc(&mut self, u: usize, v: usize, c: i64) {
        self.head[u].push(self.to.len());
        self.to.push(v);
        self.cap.push(c);
        self.head[v].push(self.to.len());
        self.to.push(u);
        self.cap.push(0);
    }

    /// Edmonds-Karp; stops early once the flow reaches `limit`.
    fn max_flow(&mut self, s: usize, t: usize, limit: i64) -> i64 {
        let mut flow = 0;
        while flow < limit {
            let mut prev = vec![usize::MAX; self.head.len()];
            prev[s] = usize::MAX - 1;
            let mut queue = VecDeque::from([s]);
            while let Some(u) = queue.pop_front() {
                for &a in &self.head[u] {
                    let v = self.to[a];
                    if self.cap[a] > 0 && prev[v] == usize::MAX {
                        prev[v] = a;
                        queue.push_back(v);
                    }
                }
            }
            if prev[t] == usize::MAX {
                break;
            }
            let mut push = i64::MAX;
            let mut v = t;
            while v != s {
                let a = prev[v];
                push = push.min(self.cap[a]);
                v = self.to[a ^ 1];
            }
            let mut v = t;
            while v != s {
                let a = prev[v];
                self.cap[a] -= push;
                self.cap[a ^ 1] += push;
                v = self.to[a ^ 1];
            }
            flow += push;
        }
        flow
    }

    fn reachable(&self, s: usize) -> Vec<bool> {
        let mut seen = vec![false; self.head.len()];
        seen[s] = true;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for &a in &self.head[u] {
                let v = self.to[a];
                if self.cap[a] > 0 && !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen
    }
}

/// Minimum set of closed switches whose opening disconnects `starts` from
/// `terminals`; `None` when no switch set can. Each node is split into an
/// in/out pair carrying the node's cut cost (1 for a closed switch, 0 for an
/// open one, unbounded otherwise).
fn min_switch_cut(topo: &Topology, starts: [&str; 2], terminals: &[&str]) -> Option<BTreeSet<String>> {
    let ids: Vec<&str> = topo.nodes.keys().map(String::as_str).collect();
    let index: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let n = ids.len();
    let inf = n as i64 + 1;
    let (s, t) = (2 * n, 2 * n + 1);
    let mut g = FlowGraph::new(2 * n + 2);
    for (i, id) in ids.iter().enumerate() {
        let c = match topo.switch_state(id) {
            Some(SwitchState::Closed) => 1,
            Some(SwitchState::Open) => 0,
            None => inf,
        };
        g.arc(2 * i, 2 * i + 1, c);
    }
    for e in topo.edges.values() {
        let (a, b) = (index[e.a.as_str()], index[e.b.as_str()]);
        g.arc(2 * a + 1, 2 * b, inf);
        g.arc(2 * b + 1, 2 * a, inf);
    }
    for st in starts {
        g.arc(s, 2 * index[st], inf);
    }
    for term in terminals {
        g.arc(2 * index[term] + 1, t, inf);
    }
    if g.max_flow(s, t, inf) >= inf {
        return None;
    }
    let side = g.reachable(s);
    Some(
        ids.iter()
            .enumerate()
            .filter(|(i, id)| side[2 * i] && !side[2 * i + 1] && topo.switch_state(id) == Some(SwitchState::Closed))
            .map(|(_, id)| id.to_string())
            .collect(),
    )
}

// ---------------------------------------------------------------------------
// Restoration

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RestorationPath {
    /// From the source to the tie, inclusive.
    pub nodes: Vec<String>,
    pub tie: String,
}

/// Connected groups of de-energized nodes (joined through conducting nodes
/// over healthy edges), each sorted, in order of their first id.
fn dead_segments(topo: &Topology) -> Vec<Vec<String>> {
    let fed = topo.energized_by();
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for id in topo.nodes.keys() {
        if !topo.conducts(id) || fed.contains_key(id) || seen.contains(id) {
            continue;
        }
        let mut members = vec![id.clone()];
        seen.insert(id.clone());
        let mut queue = VecDeque::from([id.as_str()]);
        while let Some(u) = queue.pop_front() {
            for (v, e) in topo.neighbors(u) {
                if topo.is_faulted(e) || !topo.conducts(v) || !seen.insert(v.clone()) {
                    continue;
                }
                members.push(v.clone());
                queue.push_back(v);
            }
        }
        members.sort();
        out.push(members);
    }
    out
}

/// De-energized segments that hold load and touch no faulted edge.
pub fn healthy_dead_segments(topo: &Topology) -> Vec<Vec<String>> {
    let touches_fault = |id: &str| topo.neighbors(id).iter().any(|(_, e)| topo.is_faulted(e));
    dead_segments(topo)
        .into_iter()
        .filter(|seg| seg.iter().any(|n| topo.is_load(n)) && !seg.iter().any(|n| touches_fault(n)))
        .collect()
}

/// Segments a closed `tie` would re-energize.
fn pickup_segments<'a>(topo: &Topology, tie: &str, healthy: &'a [Vec<String>]) -> Vec<&'a Vec<String>> {
    healthy
        .iter()
        .filter(|seg| {
            topo.neighbors(tie)
                .iter()
                .any(|(v, e)| !topo.is_faulted(e) && seg.binary_search(v).is_ok())
        })
        .collect()
}

/// Every simple path from a source through conducting nodes and healthy
/// edges to an open tie-recloser bordering a healthy de-energized segment,
/// in lexicographic order.
pub fn find_restoration_paths(topo: &Topology) -> Vec<RestorationPath> {
    let healthy = healthy_dead_segments(topo);
    let ties: BTreeSet<&str> = topo
        .nodes
        .keys()
        .filter(|id| topo.is_open_tie(id) && !pickup_segments(topo, id, &healthy).is_empty())
        .map(String::as_str)
        .collect();
    let mut out = Vec::new();
    if ties.is_empty() {
        return out;
    }
    for source in topo.nodes.keys().filter(|id| topo.is_source(id)) {
        let mut path = vec![source.as_str()];
        let mut on_path: BTreeSet<&str> = [source.as_str()].into();
        walk(topo, &ties, &mut path, &mut on_path, &mut out);
    }
    out.sort();
    out
}

fn walk<'a>(
    topo: &'a Topology,
    ties: &BTreeSet<&str>,
    path: &mut Vec<&'a str>,
    on_path: &mut BTreeSet<&'a str>,
    out: &mut Vec<RestorationPath>,
) {
    if out.len() >= MAX_PATHS {
        return;
    }
    let u = *path.last().expect("non-empty path");
    for (v, e) in topo.neighbors(u) {
        if topo.is_faulted(e) || on_path.contains(v.as_str()) {
            continue;
        }
        if ties.contains(v.as_str()) {
            let mut nodes: Vec<String> = path.iter().map(|s| s.to_string()).collect();
            nodes.push(v.clone());
            out.push(RestorationPath { nodes, tie: v.clone() });
        } else if topo.conducts(v) {
            path.push(v);
            on_path.insert(v);
            walk(topo, ties, path, on_path, out);
            on_path.remove(v.as_str());
            path.pop();
        }
    }
}

fn validate_path(topo: &Topology, path: &RestorationPath) -> Result<(), FdirError> {
    let bad = |m: String| Err(FdirError::InvalidPath(m));
    let nodes = &path.nodes;
    let (Some(first), Some(last)) = (nodes.first(), nodes.last()) else {
        return bad("empty path".into());
    };
    if nodes.len() < 2 {
        return bad("a path needs a source and a tie".into());
    }
    if !topo.is_source(first) {
        return bad(format!("{first:?} is not a source"));
    }
    if last != &path.tie || !topo.is_open_tie(last) {
        return bad(format!("{last:?} is not the open tie-recloser {:?}", path.tie));
    }
    let mut seen = BTreeSet::new();
    for (i, pair) in nodes.windows(2).enumerate() {
        let (u, v) = (&pair[0], &pair[1]);
        if !seen.insert(u) {
            return bad(format!("{u:?} repeats"));
        }
        if i > 0 && !topo.conducts(u) {
            return bad(format!("{u:?} does not conduct"));
        }
        let linked = topo.neighbors(u).iter().any(|(w, e)| w == v && !topo.is_faulted(e));
        if !linked {
            return bad(format!("no healthy edge between {u:?} and {v:?}"));
        }
    }
    Ok(())
}

/// Load on the path's source once the tie closes: what it already feeds
/// plus every healthy de-energized load the tie would pick up.
pub fn expected_load(topo: &Topology, path: &RestorationPath) -> Result<f64, FdirError> {
    validate_path(topo, path)?;
    let healthy = healthy_dead_segments(topo);
    let pickup: f64 = pickup_segments(topo, &path.tie, &healthy)
        .into_iter()
        .flatten()
        .map(|n| topo.demand(n))
        .sum();
    Ok(topo.served_load(&path.nodes[0]) + pickup)
}

/// Smallest capacity along the path: the source and every edge on it.
fn path_limit(topo: &Topology, path: &RestorationPath) -> f64 {
    let mut limit = topo.source_capacity(&path.nodes[0]);
    for pair in path.nodes.windows(2) {
        for (w, e) in topo.neighbors(&pair[0]) {
            if w == &pair[1] && !topo.is_faulted(e) {
                limit = limit.min(topo.edges[e].capacity_kw);
            }
        }
    }
    limit
}

/// Power flow of a radial network: what every source feeds and what every
/// energized edge carries.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Loading {
    pub served_kw: BTreeMap<String, f64>,
    pub carried_kw: BTreeMap<String, f64>,
}

/// Computes the radial loading, or explains why the network is not safe:
/// sources in parallel, a loop, an energized fault, or a capacity exceeded.
pub fn check_loading(topo: &Topology) -> Result<Loading, String> {
    if let Some(e) = topo.energized_faults().first() {
        return Err(format!("faulted edge {e:?} is energized"));
    }
    let mut loading = Loading::default();
    let mut owner: BTreeMap<&str, &str> = BTreeMap::new();
    for source in topo.nodes.keys().filter(|id| topo.is_source(id)) {
        // Iterative DFS recording each node's parent edge; post-order sums.
        let mut order: Vec<(&str, Option<&str>)> = Vec::new();
        let mut stack: Vec<(&str, Option<&str>)> = vec![(source.as_str(), None)];
        owner.insert(source, source);
        while let Some((u, via)) = stack.pop() {
            order.push((u, via));
            for (v, e) in topo.neighbors(u) {
                if Some(e.as_str()) == via || topo.is_faulted(e) {
                    continue;
                }
                if topo.is_source(v) {
                    return Err(format!("sources {source:?} and {v:?} are connected"));
                }
                if !topo.conducts(v) {
                    continue;
                }
                if let Some(other) = owner.get(v.as_str()) {
                    return Err(if *other == source.as_str() {
                        format!("loop through {v:?}")
                    } else {
                        format!("{v:?} is fed by both {other:?} and {source:?}")
                    });
                }
                owner.insert(v, source);
                stack.push((v, Some(e)));
            }
        }
        let mut subtree: BTreeMap<&str, f64> = BTreeMap::new();
        for (u, via) in order.iter().rev() {
            let total = subtree.get(u).copied().unwrap_or(0.0) + topo.demand(u);
            subtree.insert(u, total);
            if let Some(e) = via {
                let parent = topo.edges[*e].other(u);
                *subtree.entry(parent).or_insert(0.0) += total;
                if total > topo.edges[*e].capacity_kw + EPS {
                    return Err(format!(
                        "edge {e:?} would carry {total} kW over its {} kW capacity",
                        topo.edges[*e].capacity_kw
                    ));
                }
                loading.carried_kw.insert(e.to_string(), total);
            }
        }
        let served = subtree[source.as_str()];
        if served > topo.source_capacity(source) + EPS {
            return Err(format!(
                "source {source:?} would serve {served} kW over its {} kW capacity",
                topo.source_capacity(source)
            ));
        }
        loading.served_kw.insert(source.clone(), served);
    }
    Ok(loading)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "camelCase")]
pub enum Action {
    OpenSwitch { switch: String },
    RelaySetting { switch: String, expected_kw: f64 },
    CloseSwitch { switch: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ReconfigPlan {
    pub actions: Vec<Action>,
    pub picked_up_loads: BTreeSet<String>,
    pub infeasible_loads: BTreeSet<String>,
}

/// Greedy restoration plan.
///
/// The plan starts with the isolation openings recorded on the topology,
/// so that undoing it also re-closes them. Then, for each healthy
/// de-energized segment, it picks among the restoration paths whose tie
/// borders the segment the one with the smallest expected load (ties by
/// lowest tie id) that fits the path's source and edge capacities and
/// leaves the whole network within its limits once closed.
pub fn plan_reconfiguration(topo: &Topology) -> ReconfigPlan {
    let mut plan = ReconfigPlan::default();
    if topo.faults.is_empty() {
        return plan;
    }
    plan.actions = topo
        .fdir_opened
        .iter()
        .map(|s| Action::OpenSwitch { switch: s.clone() })
        .collect();

    let targets = healthy_dead_segments(topo);
    let mut work = topo.clone();
    for segment in &targets {
        let energized = work.energized_by();
        if segment.iter().any(|n| energized.contains_key(n)) {
            continue;
        }
        let healthy = healthy_dead_segments(&work);
        let mut best: Option<(f64, String, RestorationPath, Topology)> = None;
        for path in find_restoration_paths(&work) {
            let borders = pickup_segments(&work, &path.tie, &healthy)
                .iter()
                .any(|s| s.first() == segment.first());
            if !borders {
                continue;
            }
            let Ok(expected) = expected_load(&work, &path) else { continue };
            if expected > path_limit(&work, &path) + EPS {
                continue;
            }
            let better = best
                .as_ref()
                .is_none_or(|(e, tie, p, _)| (expected, &path.tie, &path) < (*e, tie, p));
            if !better {
                continue;
            }
            let Ok(trial) = work.set_switch(&path.tie, SwitchState::Closed) else { continue };
            if check_loading(&trial).is_ok() {
                best = Some((expected, path.tie.clone(), path, trial));
            }
        }
        if let Some((expected, tie, _, trial)) = best {
            plan.actions.push(Action::RelaySetting {
                switch: tie.clone(),
                expected_kw: expected,
            });
            plan.actions.push(Action::CloseSwitch { switch: tie.clone() });
            work = trial;
            work.relay_settings.insert(tie, expected);
        }
    }
    let energized = work.energized_loads();
    for load in targets.iter().flatten().filter(|n| work.is_load(n)) {
        if energized.contains(load) {
            plan.picked_up_loads.insert(load.clone());
        } else {
            plan.infeasible_loads.insert(load.clone());
        }
    }
    plan
}

/// Executes the plan's actions in order.
pub fn apply_plan(topo: &Topology, plan: &ReconfigPlan) -> Result<Topology, FdirError> {
    let mut next = topo.clone();
    for action in &plan.actions {
        next = match action {
            Action::OpenSwitch { switch } => next.set_switch(switch, SwitchState::Open)?,
            Action::CloseSwitch { switch } => next.set_switch(switch, SwitchState::Closed)?,
            Action::RelaySetting { switch, expected_kw } => {
                if !next.is_switch(switch) {
                    return Err(FdirError::UnknownSwitch(switch.clone()));
                }
                let mut n = next;
                n.relay_settings.insert(switch.clone(), *expected_kw);
                n
            }
        };
    }
    Ok(next)
}

/// Undoes an applied plan: actions in reverse, each inverted. Before a
/// switch is re-closed the resulting network is checked; an energized fault
/// or an exceeded capacity aborts with `RestoreSafetyViolation`.
pub fn restore(topo: &Topology, plan: &ReconfigPlan) -> Result<Topology, FdirError> {
    let mut next = topo.clone();
    for action in plan.actions.iter().rev() {
        match action {
            Action::CloseSwitch { switch } => next = next.set_switch(switch, SwitchState::Open)?,
            Action::RelaySetting { switch, .. } => {
                next.relay_settings.remove(switch);
            }
            Action::OpenSwitch { switch } => {
                let trial = next.set_switch(switch, SwitchState::Closed)?;
                if let Err(reason) = check_loading(&trial) {
                    return Err(FdirError::RestoreSafetyViolation {
                        switch: switch.clone(),
                        reason,
                    });
                }
                next = trial;
                next.fdir_opened.remove(switch);
            }
        }
    }
    Ok(next)
}

// ---------------------------------------------------------------------------
// Reliability

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct OutageRecord {
    pub load: String,
    pub deenergized_at: Tick,
    pub reenergized_at: Tick,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Interruption {
    pub load: String,
    pub customers: u64,
    pub duration_minutes: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ReliabilityReport {
    pub saidi_minutes: f64,
    /// `None` when nobody was interrupted.
    pub caidi_minutes: Option<f64>,
    pub interruptions: Vec<Interruption>,
}

/// Customer-weighted interruption indices over the loads of `topo`:
/// SAIDI divides customer-minutes by all customers served, CAIDI by the
/// customers interrupted. Each record counts on its own, so overlapping
/// outages add up.
pub fn reliability_indices(topo: &Topology, log: &[OutageRecord]) -> Result<ReliabilityReport, FdirError> {
    let mut interruptions = Vec::with_capacity(log.len());
    for r in log {
        if !topo.is_load(&r.load) {
            return Err(FdirError::UnknownLoad(r.load.clone()));
        }
        if r.reenergized_at < r.deenergized_at {
            return Err(FdirError::NegativeDuration(r.load.clone()));
        }
        interruptions.push(Interruption {
            load: r.load.clone(),
            customers: topo.customers(&r.load),
            duration_minutes: (r.reenergized_at - r.deenergized_at) as f64 / TICKS_PER_MINUTE,
        });
    }
    let customer_minutes: f64 = interruptions.iter().map(|i| i.customers as f64 * i.duration_minutes).sum();
    let interrupted: u64 = interruptions.iter().map(|i| i.customers).sum();
    let total = topo.total_customers();
    Ok(ReliabilityReport {
        saidi_minutes: if total == 0 { 0.0 } else { customer_minutes / total as f64 },
        caidi_minutes: (interrupted > 0).then(|| customer_minutes / interrupted as f64),
        interruptions,
    })
}

// ---------------------------------------------------------------------------
// Matrix import

/// Reads a connection matrix.
///
/// ```text
/// node,type,attrs,S1,SW1,L1
/// S1,source,capacity_kw=500,,300,
/// SW1,switch,state=closed;kind=sectionalizer,300,,300
/// L1,load,demand_kw=50;customers=100,,300,
/// ```
///
/// Column order of the node columns must follow the row order. A non-empty
/// cell is an edge with that capacity in kW; the matrix must be symmetric.
/// Edge ids are `a-b` with the endpoints in id order.
pub fn topology_from_matrix_csv(text: &str) -> Result<Topology, FdirError> {
    let parse = |m: String| FdirError::Parse(m);
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| parse(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.len() < 4 || header[..3] != ["node", "type", "attrs"] {
        return Err(parse("header must start with node,type,attrs followed by node ids".into()));
    }
    let columns = &header[3..];
    let mut nodes = Vec::new();
    let mut cells: Vec<Vec<Option<f64>>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| parse(e.to_string()))?;
        let id = record[0].to_string();
        if columns.get(i) != Some(&id) {
            return Err(parse(format!("row {} is {id:?} but column {} is {:?}", i + 1, i + 1, columns.get(i))));
        }
        let attrs: BTreeMap<&str, &str> = record[2]
            .split(';')
            .filter(|s| !s.is_empty())
            .map(|kv| kv.split_once('=').ok_or_else(|| parse(format!("bad attribute {kv:?} on {id:?}"))))
            .collect::<Result<_, _>>()?;
        let num = |k: &str| -> Result<f64, FdirError> {
            attrs
                .get(k)
                .ok_or_else(|| parse(format!("{id:?} needs {k}")))?
                .parse()
                .map_err(|_| parse(format!("{id:?}: {k} is not a number")))
        };
        let node = match &record[1] {
            "source" => Node::Source {
                capacity_kw: num("capacity_kw")?,
            },
            "load" => Node::Load {
                demand_kw: num("demand_kw")?,
                customers: num("customers")? as u64,
            },
            "switch" => {
                let word = |k: &str| attrs.get(k).map(|v| format!("\"{v}\"")).ok_or_else(|| parse(format!("{id:?} needs {k}")));
                Node::Switch {
                    state: serde_json::from_str(&word("state")?).map_err(|e| parse(format!("{id:?}: {e}")))?,
                    kind: serde_json::from_str(&word("kind")?).map_err(|e| parse(format!("{id:?}: {e}")))?,
                }
            }
            other => return Err(parse(format!("{id:?} has unknown type {other:?}"))),
        };
        nodes.push((id, node));
        let row = record
            .iter()
            .skip(3)
            .map(|c| {
                if c.is_empty() || c == "0" {
                    Ok(None)
                } else {
                    c.parse::<f64>().map(Some).map_err(|_| parse(format!("bad capacity {c:?}")))
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        cells.push(row);
    }
    if cells.len() != columns.len() {
        return Err(parse(format!("{} node columns but {} rows", columns.len(), cells.len())));
    }
    let mut edges = Vec::new();
    for i in 0..cells.len() {
        if cells[i][i].is_some() {
            return Err(parse(format!("self-loop on {:?}", columns[i])));
        }
        for j in i + 1..cells.len() {
            if cells[i][j] != cells[j][i] {
                return Err(parse(format!("matrix not symmetric at {:?}/{:?}", columns[i], columns[j])));
            }
            if let Some(capacity_kw) = cells[i][j] {
                let (a, b) = if columns[i] < columns[j] { (i, j) } else { (j, i) };
                edges.push(Edge {
                    id: format!("{}-{}", columns[a], columns[b]),
                    a: columns[a].clone(),
                    b: columns[b].clone(),
                    capacity_kw,
                });
            }
        }
    }
    Topology::new(nodes, edges)
}

// ---------------------------------------------------------------------------
// Scenario replay

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "camelCase", deny_unknown_fields)]
pub enum ScenarioEvent {
    UpdateLoads { readings: BTreeMap<String, f64> },
    Fault { edge: String },
    ClearFault { edge: String },
    /// Advances the clock by `seconds` ticks.
    Tick { seconds: Tick },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub events: Vec<ScenarioEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct StepReport {
    pub index: usize,
    pub at: Tick,
    pub event: ScenarioEvent,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub opened: Option<BTreeSet<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plan: Option<ReconfigPlan>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SimulationReport {
    pub steps: Vec<StepReport>,
    pub outages: Vec<OutageRecord>,
    pub reliability: ReliabilityReport,
    pub final_switch_states: BTreeMap<String, SwitchState>,
    pub final_topology: Topology,
}

/// Replays events against a topology. A fault is isolated and followed by a
/// restoration plan, both applied at once; clearing it undoes that plan.
/// Outages are tracked per load from the moment it loses power until it
/// regains it (or the scenario ends).
pub struct Simulator {
    topo: Topology,
    clock: Tick,
    plans: BTreeMap<String, ReconfigPlan>,
    down_since: BTreeMap<String, Tick>,
    outages: Vec<OutageRecord>,
    steps: Vec<StepReport>,
}

impl Simulator {
    pub fn new(topo: Topology) -> Self {
        Simulator {
            topo,
            clock: 0,
            plans: BTreeMap::new(),
            down_since: BTreeMap::new(),
            outages: Vec::new(),
            steps: Vec::new(),
        }
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn clock(&self) -> Tick {
        self.clock
    }

    pub fn steps(&self) -> &[StepReport] {
        &self.steps
    }

    /// Applies one event and returns its report. Failed events leave the
    /// network unchanged.
    pub fn step(&mut self, event: ScenarioEvent) -> &StepReport {
        let before = self.topo.energized_loads();
        let mut report = StepReport {
            index: self.steps.len(),
            at: self.clock,
            event: event.clone(),
            opened: None,
            plan: None,
            error: None,
        };
        let outcome = match &event {
            ScenarioEvent::UpdateLoads { readings } => update_loads(&self.topo, readings).map(|t| self.topo = t),
            ScenarioEvent::Tick { seconds } if *seconds < 0 => {
                Err(FdirError::NegativeDuration(format!("tick of {seconds}")))
            }
            ScenarioEvent::Tick { seconds } => {
                self.clock += seconds;
                report.at = self.clock;
                Ok(())
            }
            ScenarioEvent::Fault { edge } => self.fault(edge, &mut report),
            ScenarioEvent::ClearFault { edge } => self.clear(edge),
        };
        if let Err(e) = outcome {
            report.error = Some(e.to_string());
        }
        self.track(&before);
        self.steps.push(report);
        self.steps.last().expect("just pushed")
    }

    fn fault(&mut self, edge: &str, report: &mut StepReport) -> Result<(), FdirError> {
        let previous = self.topo.fdir_opened.clone();
        let (isolated, opened) = isolate_fault(&self.topo, edge)?;
        let mut plan = plan_reconfiguration(&isolated);
        // Only this fault's openings belong to its plan.
        plan.actions
            .retain(|a| !matches!(a, Action::OpenSwitch { switch } if previous.contains(switch)));
        let applied = apply_plan(&isolated, &plan)?;
        self.topo = applied;
        report.opened = Some(opened);
        report.plan = Some(plan.clone());
        self.plans.insert(edge.to_string(), plan);
        Ok(())
    }

    fn clear(&mut self, edge: &str) -> Result<(), FdirError> {
        let cleared = self.topo.clear_fault(edge)?;
        let restored = match self.plans.get(edge) {
            Some(plan) => restore(&cleared, plan)?,
            None => cleared,
        };
        self.plans.remove(edge);
        self.topo = restored;
        Ok(())
    }

    fn track(&mut self, before: &BTreeSet<String>) {
        let after = self.topo.energized_loads();
        for load in before.difference(&after) {
            self.down_since.insert(load.clone(), self.clock);
        }
        for load in after.difference(before) {
            if let Some(start) = self.down_since.remove(load) {
                self.push_outage(load.clone(), start);
            }
        }
    }

    fn push_outage(&mut self, load: String, start: Tick) {
        if self.clock > start {
            self.outages.push(OutageRecord {
                load,
                deenergized_at: start,
                reenergized_at: self.clock,
            });
        }
    }

    /// Closes outages still open at the current clock and reports.
    pub fn finish(mut self) -> Result<SimulationReport, FdirError> {
        let open = std::mem::take(&mut self.down_since);
        for (load, start) in open {
            self.push_outage(load, start);
        }
        self.outages
            .sort_by(|a, b| (a.deenergized_at, &a.load).cmp(&(b.deenergized_at, &b.load)));
        let reliability = reliability_indices(&self.topo, &self.outages)?;
        Ok(SimulationReport {
            steps: self.steps,
            outages: self.outages,
            reliability,
            final_switch_states: self.topo.switch_states(),
            final_topology: self.topo,
        })
    }
}

pub fn parse_scenario(text: &str) -> Result<Scenario, FdirError> {
    serde_json::from_str(text).map_err(|e| FdirError::Parse(e.to_string()))
}

pub fn run_scenario(topo: &Topology, scenario: &Scenario) -> Result<SimulationReport, FdirError> {
    let mut sim = Simulator::new(topo.clone());
    for event in &scenario.events {
        sim.step(event.clone());
    }
    sim.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn source(cap: f64) -> Node {
        Node::Source { capacity_kw: cap }
    }
    fn switch(state: SwitchState, kind: SwitchKind) -> Node {
        Node::Switch { state, kind }
    }
    fn load(kw: f64, customers: u64) -> Node {
        Node::Load {
            demand_kw: kw,
            customers,
        }
    }
    fn edge(id: &str, a: &str, b: &str, cap: f64) -> Edge {
        Edge {
            id: id.into(),
            a: a.into(),
            b: b.into(),
            capacity_kw: cap,
        }
    }

    /// S-sw1-L1-sw2-L2
    fn linear() -> Topology {
        use SwitchKind::*;
        use SwitchState::*;
        Topology::new(
            vec![
                ("S".into(), source(500.0)),
                ("sw1".into(), switch(Closed, Sectionalizer)),
                ("L1".into(), load(50.0, 100)),
                ("sw2".into(), switch(Closed, Sectionalizer)),
                ("L2".into(), load(30.0, 100)),
            ],
            vec![
                edge("e1", "S", "sw1", 300.0),
                edge("e2", "sw1", "L1", 300.0),
                edge("e3", "L1", "sw2", 300.0),
                edge("e4", "sw2", "L2", 300.0),
            ],
        )
        .unwrap()
    }

    /// Two feeders joined by a normally open tie: S1-SW1-L1-SW2-L2-TIE-S2.
    pub(crate) fn two_feeder() -> Topology {
        use SwitchKind::*;
        use SwitchState::*;
        Topology::new(
            vec![
                ("S1".into(), source(200.0)),
                ("SW1".into(), switch(Closed, Recloser)),
                ("L1".into(), load(50.0, 100)),
                ("SW2".into(), switch(Closed, Sectionalizer)),
                ("L2".into(), load(30.0, 100)),
                ("TIE".into(), switch(Open, TieRecloser)),
                ("S2".into(), source(100.0)),
            ],
            vec![
                edge("e1", "S1", "SW1", 200.0),
                edge("e2", "SW1", "L1", 200.0),
                edge("e3", "L1", "SW2", 200.0),
                edge("e4", "SW2", "L2", 200.0),
                edge("e5", "L2", "TIE", 100.0),
                edge("e6", "TIE", "S2", 100.0),
            ],
        )
        .unwrap()
    }

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn update_loads_replaces_demand() {
        let t = linear();
        assert_eq!(update_loads(&t, &BTreeMap::new()).unwrap(), t);
        let t2 = update_loads(&t, &[("L1".to_string(), 50.0)].into()).unwrap();
        assert_eq!(t2.demand("L1"), 50.0);
        assert_eq!(
            update_loads(&t, &[("sw1".to_string(), 50.0)].into()),
            Err(FdirError::UnknownLoad("sw1".into()))
        );
    }

    #[test]
    fn linear_feeder_isolation() {
        let (t, opened) = isolate_fault(&linear(), "e3").unwrap();
        assert_eq!(opened, set(&["sw1", "sw2"]));
        assert!(t.energized_faults().is_empty());
        let (again, opened) = isolate_fault(&t, "e3").unwrap();
        assert!(opened.is_empty());
        assert_eq!(again.switch_states(), t.switch_states());
        assert_eq!(isolate_fault(&linear(), "nope"), Err(FdirError::UnknownEdge("nope".into())));
        assert_eq!(
            isolate_fault(&linear(), "e1"),
            Err(FdirError::NoIsolatingSwitches("e1".into()))
        );
    }

    #[test]
    fn two_feeder_restoration() {
        let topo = two_feeder();
        assert!(find_restoration_paths(&topo).is_empty());
        let (isolated, opened) = isolate_fault(&topo, "e3").unwrap();
        assert_eq!(opened, set(&["SW1", "SW2"]));
        let paths = find_restoration_paths(&isolated);
        assert_eq!(
            paths,
            vec![RestorationPath {
                nodes: vec!["S2".into(), "TIE".into()],
                tie: "TIE".into()
            }]
        );
        assert_eq!(expected_load(&isolated, &paths[0]).unwrap(), 30.0);
        let plan = plan_reconfiguration(&isolated);
        assert_eq!(
            plan.actions,
            vec![
                Action::OpenSwitch { switch: "SW1".into() },
                Action::OpenSwitch { switch: "SW2".into() },
                Action::RelaySetting {
                    switch: "TIE".into(),
                    expected_kw: 30.0
                },
                Action::CloseSwitch { switch: "TIE".into() },
            ]
        );
        assert_eq!(plan.picked_up_loads, set(&["L2"]));
        assert!(plan.infeasible_loads.is_empty());

        let applied = apply_plan(&isolated, &plan).unwrap();
        assert!(applied.energized_loads().contains("L2"));
        assert!(!applied.energized_loads().contains("L1"));
        assert!(matches!(
            restore(&applied, &plan),
            Err(FdirError::RestoreSafetyViolation { .. })
        ));
        let restored = restore(&applied.clear_fault("e3").unwrap(), &plan).unwrap();
        assert_eq!(restored.switch_states(), topo.switch_states());
        assert!(restored.fdir_opened().is_empty());
    }

    #[test]
    fn capacity_blocks_pickup() {
        let topo = update_loads(&two_feeder(), &[("L2".to_string(), 150.0)].into()).unwrap();
        let (isolated, _) = isolate_fault(&topo, "e3").unwrap();
        let plan = plan_reconfiguration(&isolated);
        assert!(!plan.actions.iter().any(|a| matches!(a, Action::CloseSwitch { .. })));
        assert_eq!(plan.infeasible_loads, set(&["L2"]));
        assert!(plan_reconfiguration(&topo).actions.is_empty());
    }

    #[test]
    fn expected_load_adds_existing_service() {
        use SwitchKind::*;
        use SwitchState::*;
        let topo = Topology::new(
            vec![
                ("S".into(), source(500.0)),
                ("L0".into(), load(50.0, 10)),
                ("T".into(), switch(Open, TieRecloser)),
                ("L2".into(), load(30.0, 10)),
            ],
            vec![edge("a", "S", "L0", 500.0), edge("b", "L0", "T", 500.0), edge("c", "T", "L2", 500.0)],
        )
        .unwrap();
        let path = RestorationPath {
            nodes: vec!["S".into(), "L0".into(), "T".into()],
            tie: "T".into(),
        };
        assert_eq!(expected_load(&topo, &path).unwrap(), 80.0);
        let bad = RestorationPath {
            nodes: vec!["S".into(), "T".into()],
            tie: "T".into(),
        };
        assert!(matches!(expected_load(&topo, &bad), Err(FdirError::InvalidPath(_))));
        let energized = topo.set_switch("T", Closed).unwrap();
        assert!(find_restoration_paths(&energized).is_empty());
    }

    #[test]
    fn reliability_examples() {
        let topo = two_feeder();
        let empty = reliability_indices(&topo, &[]).unwrap();
        assert_eq!((empty.saidi_minutes, empty.caidi_minutes), (0.0, None));
        let one = [OutageRecord {
            load: "L1".into(),
            deenergized_at: 0,
            reenergized_at: 1800,
        }];
        let r = reliability_indices(&topo, &one).unwrap();
        assert_eq!((r.saidi_minutes, r.caidi_minutes), (15.0, Some(30.0)));
        let two = [
            one[0].clone(),
            OutageRecord {
                load: "L2".into(),
                deenergized_at: 600,
                reenergized_at: 1200,
            },
        ];
        let r = reliability_indices(&topo, &two).unwrap();
        // (100*30 + 100*10) / 200 and / 200
        assert_eq!((r.saidi_minutes, r.caidi_minutes), (20.0, Some(20.0)));
        let negative = [OutageRecord {
            load: "L1".into(),
            deenergized_at: 10,
            reenergized_at: 5,
        }];
        assert_eq!(
            reliability_indices(&topo, &negative),
            Err(FdirError::NegativeDuration("L1".into()))
        );
    }

    #[test]
    fn scenario_replay() {
        let scenario = Scenario {
            events: vec![
                ScenarioEvent::Fault { edge: "e3".into() },
                ScenarioEvent::Tick { seconds: 1800 },
                ScenarioEvent::ClearFault { edge: "e3".into() },
            ],
        };
        let report = run_scenario(&two_feeder(), &scenario).unwrap();
        assert_eq!(
            report.outages,
            vec![OutageRecord {
                load: "L1".into(),
                deenergized_at: 0,
                reenergized_at: 1800
            }]
        );
        assert_eq!(report.reliability.saidi_minutes, 15.0);
        assert_eq!(report.reliability.caidi_minutes, Some(30.0));
        assert_eq!(report.final_switch_states, two_feeder().switch_states());
        assert!(report.steps.iter().all(|s| s.error.is_none()));
    }

    #[test]
    fn json_and_matrix_formats() {
        let topo = two_feeder();
        assert_eq!(Topology::from_json(&topo.to_json()).unwrap(), topo);
        let matrix = "node,type,attrs,S,SW,L\n\
                      S,source,capacity_kw=100,,50,\n\
                      SW,switch,state=closed;kind=recloser,50,,40\n\
                      L,load,demand_kw=10;customers=5,,40,\n";
        let t = topology_from_matrix_csv(matrix).unwrap();
        assert_eq!(t.edges().len(), 2);
        assert_eq!(t.edges()["L-SW"].capacity_kw, 40.0);
        assert!(t.energized_loads().contains("L"));
        let asym = matrix.replace("SW,switch,state=closed;kind=recloser,50,,40", "SW,switch,state=closed;kind=recloser,50,,41");
        assert!(topology_from_matrix_csv(&asym).is_err());
        assert!(Topology::from_json(r#"{"nodes":[{"id":"a","type":"load","demand_kw":-1,"customers":1}],"edges":[]}"#).is_err());
    }
}
