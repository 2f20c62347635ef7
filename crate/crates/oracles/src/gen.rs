//! Proptest strategies for invariants, frames, monitoring models, rules and
//! radial feeders.

use std::collections::BTreeMap;

use gridspace_core::fdir::{Edge, Node, SwitchKind, SwitchState, Topology};
use gridspace_core::ingestion::GridFrame;
use gridspace_core::reaction::{DisplayInstruction, ReactionSpec};
use gridspace_core::rules::{AreaConjunction, Metric, Rule, RuleWindow};
use gridspace_core::{Area, Invariant, Tick};
use proptest::prelude::*;
use proptest::sample::Index;

/// Tags exercise the XML and JSON escapes but avoid control characters and
/// whitespace other than plain spaces.
pub fn tag() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9_ <>&\"'/-]{0,6}"
}

pub fn coord() -> impl Strategy<Value = i64> {
    prop_oneof![8 => -1000i64..1000, 1 => Just(i64::MIN), 1 => Just(i64::MAX)]
}

pub fn tick() -> impl Strategy<Value = Tick> {
    prop_oneof![8 => -100_000i64..100_000, 1 => Just(Tick::MIN), 1 => Just(Tick::MAX)]
}

pub fn decimal() -> impl Strategy<Value = f64> {
    prop_oneof![
        4 => (-1_000_000i64..1_000_000).prop_map(|v| v as f64 / 100.0),
        1 => any::<f64>().prop_filter("finite", |v| v.is_finite()),
    ]
}

pub fn atom() -> BoxedStrategy<Invariant> {
    prop_oneof![
        Just(Invariant::True),
        Just(Invariant::False),
        tick().prop_map(Invariant::time_point),
        (tick(), tick()).prop_map(|(a, b)| Invariant::time_interval(a.min(b), a.max(b)).expect("ordered")),
        tag().prop_map(Invariant::owner),
        tag().prop_map(Invariant::event),
        (coord(), coord()).prop_map(|(x, y)| Invariant::point(x, y)),
        (coord(), coord(), coord(), coord()).prop_map(|(a, b, c, d)| Invariant::occupy_box(a, b, c, d)),
        (coord(), coord(), coord(), coord(), coord(), coord())
            .prop_map(|(a, b, c, d, e, f)| Invariant::occupy_3d_box(a, b, c, d, e, f)),
        (tag(), tag()).prop_map(|(s, t)| Invariant::edge(s, t)),
        (tag(), tag(), tag()).prop_map(|(s, e, t)| Invariant::transition(s, e, t)),
        (tag(), decimal(), tag()).prop_map(|(k, v, u)| Invariant::quantity(k, v, u).expect("finite")),
    ]
    .boxed()
}

/// Random formulas whose tree depth (a leaf has depth 1) is at most
/// `max_depth`.
pub fn invariant(max_depth: u32) -> BoxedStrategy<Invariant> {
    atom()
        .prop_recursive(max_depth.saturating_sub(1), 256, 4, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(l, r)| Invariant::and(l, r)),
                (inner.clone(), inner.clone()).prop_map(|(l, r)| Invariant::or(l, r)),
                inner.clone().prop_map(Invariant::not),
                (inner.clone(), inner.clone()).prop_map(|(g, b)| Invariant::implies(g, b)),
                prop::collection::vec(inner, 0..4).prop_map(Invariant::big_and),
            ]
        })
        .boxed()
}

pub fn depth(inv: &Invariant) -> usize {
    1 + match inv {
        Invariant::And { left, right } | Invariant::Or { left, right } => depth(left).max(depth(right)),
        Invariant::Not { inner } => depth(inner),
        Invariant::Implies { guard, body } => depth(guard).max(depth(body)),
        Invariant::BigAnd { items } => items.iter().map(depth).max().unwrap_or(0),
        _ => 0,
    }
}

/// Boxes with sides of at most `max_side` cells, corners given in any order.
pub fn small_box(max_side: i64) -> impl Strategy<Value = (i64, i64, i64, i64)> {
    (-1000i64..1000, -1000i64..1000, 0..max_side, 0..max_side, any::<bool>(), any::<bool>()).prop_map(
        |(x, y, w, h, flip_x, flip_y)| {
            let (x1, x2) = if flip_x { (x + w, x) } else { (x, x + w) };
            let (y1, y2) = if flip_y { (y + h, y) } else { (y, y + h) };
            (x1, y1, x2, y2)
        },
    )
}

/// Frames up to `max_w × max_h`, mostly clear with scattered intensities.
pub fn frame(max_w: u32, max_h: u32) -> impl Strategy<Value = GridFrame> {
    (1..=max_w, 1..=max_h)
        .prop_flat_map(|(w, h)| {
            let cell = prop_oneof![3 => Just(0u8), 2 => any::<u8>()];
            (
                Just((w, h)),
                prop::collection::vec(cell, (w * h) as usize),
                -1000i64..1000,
                1i64..100,
                (-500i64..500, -500i64..500),
            )
        })
        .prop_map(|((w, h), cells, t, validity, origin)| {
            GridFrame::new(t, validity, origin, w, h, cells).expect("consistent frame")
        })
}

/// One observation: an owner's geometry over a closed tick span.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub owner: String,
    pub span: (Tick, Tick),
    pub points: Vec<(i64, i64)>,
    pub boxes: Vec<Area>,
}

impl Observation {
    pub fn to_invariant(&self) -> Invariant {
        let guard = Invariant::and(
            Invariant::time_interval(self.span.0, self.span.1).expect("ordered span"),
            Invariant::owner(self.owner.clone()),
        );
        let mut body: Vec<Invariant> = self.points.iter().map(|&(x, y)| Invariant::point(x, y)).collect();
        body.extend(self.boxes.iter().map(|b| Invariant::OccupyBox(*b)));
        Invariant::implies(guard, Invariant::big_and(body))
    }
}

/// A model made of observations, in order, plus atoms that carry no owned
/// geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationModel {
    pub observations: Vec<Observation>,
    pub noise: Vec<Invariant>,
}

impl ObservationModel {
    pub fn to_invariant(&self) -> Invariant {
        let mut items: Vec<Invariant> = self.observations.iter().map(Observation::to_invariant).collect();
        items.extend(self.noise.iter().cloned());
        Invariant::big_and(items)
    }
}

fn observation(owners: &'static [&'static str], side: i64, ticks: Tick) -> impl Strategy<Value = Observation> {
    (
        prop::sample::select(owners),
        0..ticks,
        0..ticks,
        prop::collection::btree_set((0..side, 0..side), 0..40),
        prop::collection::vec((0..side, 0..side, 0..side / 4, 0..side / 4), 0..3),
    )
        .prop_map(move |(owner, a, b, points, boxes)| Observation {
            owner: owner.to_string(),
            span: (a.min(b), a.max(b)),
            points: points.into_iter().collect(),
            boxes: boxes
                .into_iter()
                .map(|(x, y, w, h)| Area::new(x, y, (x + w).min(side - 1), (y + h).min(side - 1)))
                .collect(),
        })
}

/// Models on a `side × side` lattice over ticks `0..ticks`.
pub fn observation_model(side: i64, ticks: Tick) -> impl Strategy<Value = ObservationModel> {
    const OWNERS: &[&str] = &["cloud", "cloud", "smoke"];
    let noise = prop_oneof![
        (0..side, 0..side).prop_map(|(x, y)| Invariant::point(x, y)),
        (0..ticks, 0..side).prop_map(|(t, x)| Invariant::implies(Invariant::time_point(t), Invariant::point(x, x))),
        Just(Invariant::edge("a", "b")),
        Just(Invariant::owner("cloud")),
    ];
    (
        prop::collection::vec(observation(OWNERS, side, ticks), 0..12),
        prop::collection::vec(noise, 0..3),
    )
        .prop_map(|(observations, noise)| ObservationModel { observations, noise })
}

pub fn demo_reaction() -> ReactionSpec {
    ReactionSpec {
        displays: vec![DisplayInstruction::TextAlert {
            text: "check".into(),
            wall_hint: None,
        }],
    }
}

/// Rules over the same lattice and tick range as [`observation_model`],
/// with an evaluation time.
pub fn rule_and_now(side: i64, ticks: Tick) -> impl Strategy<Value = (Rule, Tick)> {
    let window = prop_oneof![
        (0..ticks, 0..ticks).prop_map(|(a, b)| RuleWindow::Absolute {
            t1: a.min(b),
            t2: a.max(b)
        }),
        (0..ticks).prop_map(|sliding| RuleWindow::Sliding { sliding }),
    ];
    let areas = prop::collection::vec((0..side, 0..side, 0..side / 2, 0..side / 2), 1..4).prop_map(move |v| {
        v.into_iter()
            .map(|(x, y, w, h)| Area::new(x, y, (x + w).min(side - 1), (y + h).min(side - 1)))
            .collect::<Vec<_>>()
    });
    let metric = prop_oneof![
        (0u32..60).prop_map(|t| (Metric::CoveredCells, t as f64)),
        (0u32..=20).prop_map(|t| (Metric::CoverageFraction, t as f64 / 20.0)),
    ];
    (
        window,
        areas,
        prop::sample::select(&["cloud", "smoke"][..]),
        metric,
        1i64..5,
        0..ticks + 20,
    )
        .prop_map(|(window, areas, owner, (metric, threshold), eval_step, now)| {
            (
                Rule {
                    id: "r".into(),
                    priority: 0,
                    window,
                    areas,
                    owner: owner.into(),
                    metric,
                    threshold,
                    conjunction: AreaConjunction::AllAreas,
                    eval_step,
                    severity: None,
                    stakeholders: vec!["ops".into()],
                    reaction: demo_reaction(),
                },
                now,
            )
        })
}

/// A radial network with `feeders` sources, each feeding a random tree of
/// loads and closed switches, joined by open tie-reclosers. Tree edges and
/// sources have enough capacity for the normal configuration; tie edges
/// get random capacities.
#[derive(Debug, Clone)]
pub struct FeederPlan {
    pub feeders: usize,
    /// `(feeder, parent index within feeder, is_switch, demand, customers)`
    pub nodes: Vec<(usize, Index, bool, u32, u32)>,
    pub ties: Vec<(Index, Index, u32)>,
    pub slack: Vec<u32>,
}

pub fn feeder_plan(max_nodes: usize) -> impl Strategy<Value = FeederPlan> {
    prop_oneof![1 => Just(1usize), 4 => 2usize..=3]
        .prop_flat_map(move |feeders| {
            let budget = max_nodes - feeders;
            (
                Just(feeders),
                prop::collection::vec(
                    (0..feeders, any::<Index>(), prop::bool::weighted(0.45), 1u32..60, 1u32..120),
                    4..budget.saturating_sub(3).max(5),
                ),
                prop::collection::vec((any::<Index>(), any::<Index>(), 0u32..600), 1..4),
                prop::collection::vec(0u32..250, max_nodes + 3),
            )
        })
        .prop_map(|(feeders, nodes, ties, slack)| FeederPlan {
            feeders,
            nodes,
            ties,
            slack,
        })
}

impl FeederPlan {
    pub fn build(&self, max_nodes: usize) -> Topology {
        let mut nodes: Vec<(String, Node)> = Vec::new();
        let mut members: Vec<Vec<String>> = (0..self.feeders).map(|f| vec![format!("S{f}")]).collect();
        let mut parent: BTreeMap<String, String> = BTreeMap::new();
        let mut demand: BTreeMap<String, f64> = BTreeMap::new();
        for (i, (feeder, at, is_switch, kw, customers)) in self.nodes.iter().enumerate() {
            let id = if *is_switch { format!("W{i:02}") } else { format!("L{i:02}") };
            let p = at.get(&members[*feeder]).clone();
            parent.insert(id.clone(), p);
            members[*feeder].push(id.clone());
            if *is_switch {
                let kind = if i % 3 == 0 { SwitchKind::Recloser } else { SwitchKind::Sectionalizer };
                nodes.push((id, Node::Switch { state: SwitchState::Closed, kind }));
            } else {
                demand.insert(id.clone(), *kw as f64);
                nodes.push((id, Node::Load { demand_kw: *kw as f64, customers: *customers as u64 }));
            }
        }
        // Subtree demand, children listed after parents.
        let mut subtree = demand.clone();
        let order: Vec<String> = members.iter().flatten().cloned().collect();
        for id in order.iter().rev() {
            if let Some(p) = parent.get(id) {
                let s = subtree.get(id).copied().unwrap_or(0.0);
                *subtree.entry(p.clone()).or_insert(0.0) += s;
            }
        }
        let mut edges = Vec::new();
        let mut slack = self.slack.iter().cycle();
        for (child, p) in &parent {
            edges.push(Edge {
                id: format!("{p}~{child}"),
                a: p.clone(),
                b: child.clone(),
                capacity_kw: subtree.get(child).copied().unwrap_or(0.0) + *slack.next().expect("cycle") as f64,
            });
        }
        for f in 0..self.feeders {
            let s = format!("S{f}");
            let cap = subtree.get(&s).copied().unwrap_or(0.0) + *slack.next().expect("cycle") as f64;
            nodes.push((s, Node::Source { capacity_kw: cap }));
        }
        if self.feeders > 1 {
            for (k, (a, b, cap)) in self.ties.iter().enumerate() {
                if nodes.len() >= max_nodes {
                    break;
                }
                let fa = a.index(self.feeders);
                let fb = (fa + 1 + b.index(self.feeders - 1)) % self.feeders;
                let (Some(ua), Some(ub)) = (pick_non_source(&members[fa], a), pick_non_source(&members[fb], b)) else {
                    continue;
                };
                let tie = format!("T{k}");
                nodes.push((
                    tie.clone(),
                    Node::Switch {
                        state: SwitchState::Open,
                        kind: SwitchKind::TieRecloser,
                    },
                ));
                for (u, side) in [(ua, "a"), (ub, "b")] {
                    edges.push(Edge {
                        id: format!("{tie}{side}"),
                        a: u.clone(),
                        b: tie.clone(),
                        capacity_kw: *cap as f64,
                    });
                }
            }
        }
        Topology::new(nodes, edges).expect("generated topology is valid")
    }
}

fn pick_non_source<'a>(members: &'a [String], at: &Index) -> Option<&'a String> {
    let rest = &members[1..];
    (!rest.is_empty()).then(|| at.get(rest))
}

/// Random radial networks with at most `max_nodes` nodes.
pub fn feeder(max_nodes: usize) -> impl Strategy<Value = Topology> {
    feeder_plan(max_nodes).prop_map(move |plan| plan.build(max_nodes))
}
