//! Reference implementations that trade speed for obviousness. None of them
//! call into the algorithms they check.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use gridspace_core::fdir::{Node, SwitchKind, SwitchState, Topology};
use gridspace_core::ingestion::GridFrame;
use gridspace_core::rules::{Metric, Rule, RuleWindow};
use gridspace_core::{Area, Tick};

use crate::gen::{Observation, ObservationModel};

/// Lattice points of a box by double loop.
pub fn box_points(x1: i64, y1: i64, x2: i64, y2: i64) -> Vec<(i64, i64)> {
    let (lx, hx) = (x1.min(x2), x1.max(x2));
    let (ly, hy) = (y1.min(y2), y1.max(y2));
    let mut out = Vec::new();
    for y in ly..=hy {
        for x in lx..=hx {
            out.push((x, y));
        }
    }
    out
}

pub fn area_points(a: &Area) -> Vec<(i64, i64)> {
    box_points(a.x1(), a.y1(), a.x2(), a.y2())
}

/// Cells at or above `threshold` (0 counts as 1), read cell by cell.
pub fn covered_cells(frame: &GridFrame, threshold: u8) -> u64 {
    let t = threshold.max(1);
    let mut n = 0;
    for j in 0..frame.height() {
        for i in 0..frame.width() {
            if frame.cell(i, j) >= t {
                n += 1;
            }
        }
    }
    n
}

/// Every geometric cell of an observation, duplicates kept.
fn observation_cells(o: &Observation) -> Vec<(i64, i64)> {
    let mut cells = o.points.clone();
    for b in &o.boxes {
        cells.extend(area_points(b));
    }
    cells
}

/// Rule evaluation by decomposing everything to points and ticks.
///
/// Returns the per-area measurements when the rule fires. For each sampled
/// tick the per-observation counts inside an area are maximized, then the
/// maximum over ticks is taken.
pub fn evaluate_rule(rule: &Rule, model: &ObservationModel, now: Tick) -> Option<Vec<f64>> {
    let (t1, t2) = match rule.window {
        RuleWindow::Absolute { t1, t2 } => (t1, t2.min(now)),
        RuleWindow::Sliding { sliding } => (now - sliding, now),
    };
    if t1 > t2 {
        return None;
    }
    let mut measured = Vec::new();
    for area in &rule.areas {
        let inside: BTreeSet<(i64, i64)> = area_points(area).into_iter().collect();
        let mut best = 0u64;
        let mut t = t1;
        while t <= t2 {
            for o in &model.observations {
                if o.owner != rule.owner || t < o.span.0 || t > o.span.1 {
                    continue;
                }
                let n = observation_cells(o).iter().filter(|c| inside.contains(c)).count() as u64;
                best = best.max(n);
            }
            t += rule.eval_step;
        }
        measured.push(match rule.metric {
            Metric::CoveredCells => best as f64,
            Metric::CoverageFraction => best as f64 / inside.len() as f64,
        });
    }
    measured.iter().all(|m| *m >= rule.threshold).then_some(measured)
}

/// One overlap as `(t1, t2, sorted points, owner_a, owner_b)`.
pub type OverlapRow = (Tick, Tick, Vec<(i64, i64)>, String, String);

/// Pairwise overlaps by point sets, ordered by start tick then owners,
/// clause order breaking ties.
pub fn overlaps(a: &ObservationModel, b: &ObservationModel) -> Vec<OverlapRow> {
    let mut out = Vec::new();
    for oa in &a.observations {
        let pa: BTreeSet<(i64, i64)> = observation_cells(oa).into_iter().collect();
        for ob in &b.observations {
            let (s, e) = (oa.span.0.max(ob.span.0), oa.span.1.min(ob.span.1));
            if s > e {
                continue;
            }
            let pb: BTreeSet<(i64, i64)> = observation_cells(ob).into_iter().collect();
            let mut region: Vec<(i64, i64)> = pa.intersection(&pb).copied().collect();
            if region.is_empty() {
                continue;
            }
            region.sort_by_key(|&(x, y)| (y, x));
            out.push((s, e, region, oa.owner.clone(), ob.owner.clone()));
        }
    }
    out.sort_by(|x, y| (x.0, &x.3, &x.4).cmp(&(y.0, &y.3, &y.4)));
    out
}

// ---------------------------------------------------------------------------
// Feeders

fn conducts(topo: &Topology, id: &str) -> bool {
    match topo.node(id) {
        Some(Node::Load { .. }) => true,
        Some(Node::Switch { state, .. }) => *state == SwitchState::Closed,
        _ => false,
    }
}

fn is_source(topo: &Topology, id: &str) -> bool {
    matches!(topo.node(id), Some(Node::Source { .. }))
}

/// Every node reached from the faulted edge when `blocked` switches (and
/// already open ones) do not pass power. Blocked switches count as reached.
fn reach_from_fault(topo: &Topology, edge: &str, blocked: &BTreeSet<String>) -> BTreeSet<String> {
    let e = &topo.edges()[edge];
    let passes = |id: &str| match topo.node(id) {
        Some(Node::Switch { state, .. }) => *state == SwitchState::Closed && !blocked.contains(id),
        _ => true,
    };
    let mut seen: BTreeSet<String> = [e.a.clone(), e.b.clone()].into();
    let mut queue: VecDeque<String> = seen.iter().filter(|n| passes(n)).cloned().collect();
    while let Some(u) = queue.pop_front() {
        for (v, _) in topo.neighbors(&u) {
            if seen.insert(v.clone()) && passes(v) {
                queue.push_back(v.clone());
            }
        }
    }
    seen
}

fn subsets(items: &[String], k: usize, start: usize, current: &mut Vec<String>, out: &mut Vec<Vec<String>>) {
    if current.len() == k {
        out.push(current.clone());
        return;
    }
    for i in start..items.len() {
        current.push(items[i].clone());
        subsets(items, k, i + 1, current, out);
        current.pop();
    }
}

/// Minimum-cardinality set of closed switches separating the faulted edge
/// from every source and from every load outside its switchless segment.
/// Ties: the cut leaving the smallest reachable component, then the
/// lexicographically smallest. `None` when no switch set separates.
pub fn min_isolating_cut(topo: &Topology, edge: &str) -> Option<BTreeSet<String>> {
    let closed: Vec<String> = topo
        .switch_states()
        .into_iter()
        .filter(|(_, s)| *s == SwitchState::Closed)
        .map(|(id, _)| id)
        .collect();
    // The segment: reachable without passing any switch at all.
    let all: BTreeSet<String> = closed.iter().cloned().collect();
    let segment = reach_from_fault(topo, edge, &all);
    let terminal = |id: &str| {
        is_source(topo, id)
            || (matches!(topo.node(id), Some(Node::Load { .. })) && !segment.contains(id))
    };
    let separates = |reached: &BTreeSet<String>| !reached.iter().any(|n| terminal(n));
    if !separates(&segment) {
        return None;
    }
    for k in 0..=closed.len() {
        let mut candidates = Vec::new();
        subsets(&closed, k, 0, &mut Vec::new(), &mut candidates);
        let mut best: Option<(usize, Vec<String>)> = None;
        for cut in candidates {
            let blocked: BTreeSet<String> = cut.iter().cloned().collect();
            let reached = reach_from_fault(topo, edge, &blocked);
            if !separates(&reached) {
                continue;
            }
            let key = (reached.len(), cut);
            if best.as_ref().is_none_or(|b| key < *b) {
                best = Some(key);
            }
        }
        if let Some((_, cut)) = best {
            return Some(cut.into_iter().collect());
        }
    }
    None
}

/// All simple paths from `from` to a node satisfying `is_end`, stepping over
/// healthy edges and through nodes satisfying `through`.
fn simple_paths(
    topo: &Topology,
    from: &str,
    through: &dyn Fn(&str) -> bool,
    is_end: &dyn Fn(&str) -> bool,
) -> Vec<(Vec<String>, Vec<String>)> {
    fn go(
        topo: &Topology,
        nodes: &mut Vec<String>,
        edges: &mut Vec<String>,
        through: &dyn Fn(&str) -> bool,
        is_end: &dyn Fn(&str) -> bool,
        out: &mut Vec<(Vec<String>, Vec<String>)>,
    ) {
        let u = nodes.last().expect("non-empty").clone();
        for (v, e) in topo.neighbors(&u) {
            if topo.is_faulted(e) || nodes.contains(v) {
                continue;
            }
            nodes.push(v.clone());
            edges.push(e.clone());
            if is_end(v) {
                out.push((nodes.clone(), edges.clone()));
            }
            if through(v) {
                go(topo, nodes, edges, through, is_end, out);
            }
            nodes.pop();
            edges.pop();
        }
    }
    let mut out = Vec::new();
    go(topo, &mut vec![from.to_string()], &mut Vec::new(), through, is_end, &mut out);
    out
}

/// Load served per source and carried per edge, in kW.
pub type Flows = (BTreeMap<String, f64>, BTreeMap<String, f64>);

/// Power flow by path enumeration: each energized load must have exactly
/// one simple path to exactly one source through conducting nodes, and
/// contributes its demand to every edge on it. Fails on meshed or parallel
/// feeds, energized faults and exceeded capacities.
pub fn loading(topo: &Topology) -> Result<Flows, String> {
    let sources: Vec<String> = topo.nodes().keys().filter(|id| is_source(topo, id)).cloned().collect();
    let through = |id: &str| conducts(topo, id);
    for s in &sources {
        let other = |id: &str| is_source(topo, id) && id != s;
        if !simple_paths(topo, s, &through, &other).is_empty() {
            return Err(format!("{s} is connected to another source"));
        }
    }
    let mut served: BTreeMap<String, f64> = sources.iter().map(|s| (s.clone(), 0.0)).collect();
    let mut carried: BTreeMap<String, f64> = BTreeMap::new();
    let mut energized: BTreeSet<String> = sources.iter().cloned().collect();
    for (id, node) in topo.nodes() {
        if !matches!(node, Node::Load { .. } | Node::Switch { state: SwitchState::Closed, .. }) {
            continue;
        }
        let mut feeds = Vec::new();
        for s in &sources {
            let target = |n: &str| n == id;
            for p in simple_paths(topo, s, &through, &target) {
                feeds.push((s.clone(), p));
            }
        }
        match feeds.len() {
            0 => {}
            1 => {
                let (s, (_, edges)) = &feeds[0];
                energized.insert(id.clone());
                let d = topo.demand(id);
                *served.get_mut(s).expect("source") += d;
                for e in edges {
                    *carried.entry(e.clone()).or_insert(0.0) += d;
                }
            }
            n => return Err(format!("{id} has {n} feeding paths")),
        }
    }
    for f in topo.faults() {
        let e = &topo.edges()[f];
        if energized.contains(&e.a) || energized.contains(&e.b) {
            return Err(format!("fault {f} is energized"));
        }
    }
    for (s, kw) in &served {
        if *kw > topo.source_capacity(s) + 1e-9 {
            return Err(format!("{s} serves {kw} over capacity"));
        }
    }
    for (e, kw) in &carried {
        if *kw > topo.edges()[e].capacity_kw + 1e-9 {
            return Err(format!("{e} carries {kw} over capacity"));
        }
    }
    Ok((served, carried))
}

/// Loads energized according to path enumeration.
pub fn energized_loads(topo: &Topology) -> BTreeSet<String> {
    let sources: Vec<String> = topo.nodes().keys().filter(|id| is_source(topo, id)).cloned().collect();
    let through = |id: &str| conducts(topo, id);
    let is_load = |id: &str| matches!(topo.node(id), Some(Node::Load { .. }));
    let mut out = BTreeSet::new();
    for s in &sources {
        for (nodes, _) in simple_paths(topo, s, &through, &is_load) {
            out.insert(nodes.last().expect("non-empty").clone());
        }
    }
    out
}

/// Restoration paths by enumeration: simple paths from each source through
/// conducting nodes to an open tie-recloser that borders a de-energized,
/// fault-free group of nodes containing a load.
pub fn restoration_paths(topo: &Topology) -> Vec<Vec<String>> {
    let live: BTreeSet<String> = {
        let sources: Vec<String> = topo.nodes().keys().filter(|id| is_source(topo, id)).cloned().collect();
        let through = |id: &str| conducts(topo, id);
        let any = |id: &str| conducts(topo, id);
        let mut live: BTreeSet<String> = sources.iter().cloned().collect();
        for s in &sources {
            for (nodes, _) in simple_paths(topo, s, &through, &any) {
                live.insert(nodes.last().expect("non-empty").clone());
            }
        }
        live
    };
    let touches_fault = |id: &str| topo.neighbors(id).iter().any(|(_, e)| topo.is_faulted(e));
    let is_tie = |id: &str| {
        matches!(
            topo.node(id),
            Some(Node::Switch {
                state: SwitchState::Open,
                kind: SwitchKind::TieRecloser
            })
        )
    };
    // Dead group containing `start`, grown through conducting nodes.
    let dead_group = |start: &str| {
        let mut seen: BTreeSet<String> = [start.to_string()].into();
        let mut queue = VecDeque::from([start.to_string()]);
        while let Some(u) = queue.pop_front() {
            for (v, e) in topo.neighbors(&u) {
                if !topo.is_faulted(e) && conducts(topo, v) && seen.insert(v.clone()) {
                    queue.push_back(v.clone());
                }
            }
        }
        seen
    };
    let useful_tie = |tie: &str| {
        topo.neighbors(tie).iter().any(|(v, e)| {
            if topo.is_faulted(e) || !conducts(topo, v) || live.contains(v) {
                return false;
            }
            let group = dead_group(v);
            group.iter().any(|n| matches!(topo.node(n), Some(Node::Load { .. })))
                && !group.iter().any(|n| touches_fault(n))
        })
    };
    let mut out = Vec::new();
    for s in topo.nodes().keys().filter(|id| is_source(topo, id)) {
        let through = |id: &str| conducts(topo, id);
        let end = |id: &str| is_tie(id) && useful_tie(id);
        for (nodes, _) in simple_paths(topo, s, &through, &end) {
            out.push(nodes);
        }
    }
    out.sort();
    out
}

/// Customer-minute indices straight from the definitions: returns
/// `(saidi, caidi)` for `(customers, minutes)` interruptions over
/// `total` customers.
pub fn saidi_caidi(interruptions: &[(u64, f64)], total: u64) -> (f64, Option<f64>) {
    let minutes: f64 = interruptions.iter().map(|(c, d)| *c as f64 * d).sum();
    let customers: u64 = interruptions.iter().map(|(c, _)| c).sum();
    (minutes / total as f64, (customers > 0).then(|| minutes / customers as f64))
}

/// Heatmap raw values at one tick, by decomposing footprints to points.
/// `clauses` holds `(net deficit, footprints)` of clauses active at the
/// tick. Values are indexed `row * cols + col` over the region's grid.
pub fn heatmap_raw(clauses: &[(f64, Vec<Area>)], region: &Area, cell: i64) -> Vec<f64> {
    let cols = (region.x2() - region.x1()) / cell + 1;
    let rows = (region.y2() - region.y1()) / cell + 1;
    let mut raw = vec![0.0; (cols * rows) as usize];
    for (net, shapes) in clauses {
        let mut touched = BTreeSet::new();
        for s in shapes {
            for (x, y) in area_points(s) {
                touched.insert(((x - region.x1()).div_euclid(cell), (y - region.y1()).div_euclid(cell)));
            }
        }
        let share = net / touched.len() as f64;
        for (c, r) in touched {
            if (0..cols).contains(&c) && (0..rows).contains(&r) {
                raw[(r * cols + c) as usize] += share;
            }
        }
    }
    raw
}
