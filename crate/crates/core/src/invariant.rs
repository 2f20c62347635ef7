//! The invariant AST: propositional connectives over time, ownership,
//! geometry, topology and quantity atoms.
//!
//! Values are immutable once built. Boxes are stored with ordered corners
//! (constructors reorder them) and both corners are inclusive.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Abstract time unit. The bundled profiles read ticks as seconds.
pub type Tick = i64;

/// Upper bound on the number of points a box may be decomposed into.
pub const DEFAULT_DECOMPOSITION_CAP: u64 = 10_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LogicError {
    #[error("time interval is reversed: t1={t1} > t2={t2}")]
    ReversedInterval { t1: Tick, t2: Tick },
    #[error("quantity value must be finite, got {0}")]
    NonFiniteQuantity(f64),
    #[error("decomposition of {requested} points exceeds cap of {cap}")]
    CapExceeded { requested: u128, cap: u64 },
    #[error("unsupported fragment at {path}: {reason}")]
    UnsupportedFragment { path: String, reason: String },
}

/// A lattice point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Point {
    pub x: i64,
    pub y: i64,
}

impl Point {
    pub fn new(x: i64, y: i64) -> Self {
        Point { x, y }
    }
}

/// Axis-aligned rectangle with inclusive, ordered corners.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Area {
    x1: i64,
    y1: i64,
    x2: i64,
    y2: i64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawArea {
    x1: i64,
    y1: i64,
    x2: i64,
    y2: i64,
}

impl<'de> Deserialize<'de> for Area {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = RawArea::deserialize(deserializer)?;
        Ok(Area::new(raw.x1, raw.y1, raw.x2, raw.y2))
    }
}

impl Area {
    /// Builds a box from any two opposite corners.
    pub fn new(x1: i64, y1: i64, x2: i64, y2: i64) -> Self {
        Area {
            x1: x1.min(x2),
            y1: y1.min(y2),
            x2: x1.max(x2),
            y2: y1.max(y2),
        }
    }

    pub fn x1(&self) -> i64 {
        self.x1
    }
    pub fn y1(&self) -> i64 {
        self.y1
    }
    pub fn x2(&self) -> i64 {
        self.x2
    }
    pub fn y2(&self) -> i64 {
        self.y2
    }

    pub fn width(&self) -> u128 {
        (self.x2 as i128 - self.x1 as i128 + 1) as u128
    }

    pub fn height(&self) -> u128 {
        (self.y2 as i128 - self.y1 as i128 + 1) as u128
    }

    pub fn cell_count(&self) -> u128 {
        self.width().saturating_mul(self.height())
    }

    pub fn contains(&self, p: Point) -> bool {
        self.x1 <= p.x && p.x <= self.x2 && self.y1 <= p.y && p.y <= self.y2
    }

    pub fn contains_area(&self, other: &Area) -> bool {
        self.x1 <= other.x1 && other.x2 <= self.x2 && self.y1 <= other.y1 && other.y2 <= self.y2
    }

    pub fn intersect(&self, other: &Area) -> Option<Area> {
        let x1 = self.x1.max(other.x1);
        let y1 = self.y1.max(other.y1);
        let x2 = self.x2.min(other.x2);
        let y2 = self.y2.min(other.y2);
        (x1 <= x2 && y1 <= y2).then_some(Area { x1, y1, x2, y2 })
    }

    /// Shifts the box; `None` on coordinate overflow.
    pub fn translate(&self, dx: i64, dy: i64) -> Option<Area> {
        Some(Area {
            x1: self.x1.checked_add(dx)?,
            y1: self.y1.checked_add(dy)?,
            x2: self.x2.checked_add(dx)?,
            y2: self.y2.checked_add(dy)?,
        })
    }

    pub fn lower_left(&self) -> Point {
        Point::new(self.x1, self.y1)
    }

    /// Lattice points in row-major order (rows by ascending y).
    pub fn points(&self) -> impl Iterator<Item = Point> + '_ {
        (self.y1..=self.y2).flat_map(move |y| (self.x1..=self.x2).map(move |x| Point::new(x, y)))
    }
}

impl fmt::Display for Area {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{})", self.x1, self.y1, self.x2, self.y2)
    }
}

/// Axis-aligned 3D box with inclusive, ordered corners. Stored only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct Volume {
    x1: i64,
    y1: i64,
    z1: i64,
    x2: i64,
    y2: i64,
    z2: i64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawVolume {
    x1: i64,
    y1: i64,
    z1: i64,
    x2: i64,
    y2: i64,
    z2: i64,
}

impl<'de> Deserialize<'de> for Volume {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let r = RawVolume::deserialize(deserializer)?;
        Ok(Volume::new(r.x1, r.y1, r.z1, r.x2, r.y2, r.z2))
    }
}

impl Volume {
    pub fn new(x1: i64, y1: i64, z1: i64, x2: i64, y2: i64, z2: i64) -> Self {
        Volume {
            x1: x1.min(x2),
            y1: y1.min(y2),
            z1: z1.min(z2),
            x2: x1.max(x2),
            y2: y1.max(y2),
            z2: z1.max(z2),
        }
    }

    /// `[x1, y1, z1, x2, y2, z2]`
    pub fn corners(&self) -> [i64; 6] {
        [self.x1, self.y1, self.z1, self.x2, self.y2, self.z2]
    }

    /// Ground-plane footprint.
    pub fn footprint(&self) -> Area {
        Area::new(self.x1, self.y1, self.x2, self.y2)
    }

    pub fn with_footprint(&self, area: Area) -> Volume {
        Volume::new(area.x1, area.y1, self.z1, area.x2, area.y2, self.z2)
    }
}

/// Closed tick interval `[t1, t2]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Interval {
    t1: Tick,
    t2: Tick,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInterval {
    t1: Tick,
    t2: Tick,
}

impl<'de> Deserialize<'de> for Interval {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = RawInterval::deserialize(deserializer)?;
        Interval::new(raw.t1, raw.t2).map_err(serde::de::Error::custom)
    }
}

impl Interval {
    pub fn new(t1: Tick, t2: Tick) -> Result<Self, LogicError> {
        if t1 > t2 {
            return Err(LogicError::ReversedInterval { t1, t2 });
        }
        Ok(Interval { t1, t2 })
    }

    pub fn point(t: Tick) -> Self {
        Interval { t1: t, t2: t }
    }

    /// The whole tick axis, used for clauses without a time guard.
    pub fn always() -> Self {
        Interval {
            t1: Tick::MIN,
            t2: Tick::MAX,
        }
    }

    pub fn start(&self) -> Tick {
        self.t1
    }

    pub fn end(&self) -> Tick {
        self.t2
    }

    pub fn contains(&self, t: Tick) -> bool {
        self.t1 <= t && t <= self.t2
    }

    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let t1 = self.t1.max(other.t1);
        let t2 = self.t2.min(other.t2);
        (t1 <= t2).then_some(Interval { t1, t2 })
    }
}

/// Named numeric magnitude such as `load_kw`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Quantity {
    pub kind: String,
    #[serde(serialize_with = "ser_decimal", deserialize_with = "de_decimal")]
    value: f64,
    pub unit: String,
}

impl Quantity {
    pub fn new(kind: impl Into<String>, value: f64, unit: impl Into<String>) -> Result<Self, LogicError> {
        if !value.is_finite() {
            return Err(LogicError::NonFiniteQuantity(value));
        }
        Ok(Quantity {
            kind: kind.into(),
            value,
            unit: unit.into(),
        })
    }

    pub fn value(&self) -> f64 {
        self.value
    }
}

/// Formats a finite float as a plain decimal string (no exponent).
pub fn format_decimal(v: f64) -> String {
    format!("{v}")
}

/// Parses `-?digits(.digits)?`; rejects exponents, `inf` and `NaN`.
pub fn parse_decimal(s: &str) -> Option<f64> {
    let digits = s.strip_prefix('-').unwrap_or(s);
    let (int, frac) = match digits.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (digits, None),
    };
    let ok_int = !int.is_empty() && int.bytes().all(|b| b.is_ascii_digit());
    let ok_frac = frac.is_none_or(|f| !f.is_empty() && f.bytes().all(|b| b.is_ascii_digit()));
    if !(ok_int && ok_frac) {
        return None;
    }
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn ser_decimal<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&format_decimal(*v))
}

fn de_decimal<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    let s = String::deserialize(d)?;
    parse_decimal(&s).ok_or_else(|| serde::de::Error::custom(format!("invalid decimal string {s:?}")))
}

/// A formula of the logic.
///
/// The serde representation is the `op`-tagged JSON node format; field
/// order in each variant is the canonical key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op")]
pub enum Invariant {
    #[serde(rename = "AND")]
    And {
        left: Box<Invariant>,
        right: Box<Invariant>,
    },
    #[serde(rename = "OR")]
    Or {
        left: Box<Invariant>,
        right: Box<Invariant>,
    },
    #[serde(rename = "NOT")]
    Not { inner: Box<Invariant> },
    #[serde(rename = "IMPLIES")]
    Implies {
        guard: Box<Invariant>,
        body: Box<Invariant>,
    },
    #[serde(rename = "BIGAND")]
    BigAnd { items: Vec<Invariant> },
    #[serde(rename = "TRUE")]
    True,
    #[serde(rename = "FALSE")]
    False,
    TimePoint { t: Tick },
    TimeInterval(Interval),
    Owner { tag: String },
    Event { tag: String },
    OccupyPoint(Point),
    OccupyBox(Area),
    #[serde(rename = "Occupy3DBox")]
    Occupy3DBox(Volume),
    Edge { source: String, target: String },
    Transition {
        source: String,
        event: String,
        target: String,
    },
    Quantity(Quantity),
}

/// Constructor names in their canonical spelling.
pub const OP_NAMES: [&str; 17] = [
    "AND",
    "OR",
    "NOT",
    "IMPLIES",
    "BIGAND",
    "TRUE",
    "FALSE",
    "TimePoint",
    "TimeInterval",
    "Owner",
    "Event",
    "OccupyPoint",
    "OccupyBox",
    "Occupy3DBox",
    "Edge",
    "Transition",
    "Quantity",
];

impl Invariant {
    pub fn and(left: Invariant, right: Invariant) -> Self {
        Invariant::And {
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    pub fn or(left: Invariant, right: Invariant) -> Self {
        Invariant::Or {
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(inner: Invariant) -> Self {
        Invariant::Not {
            inner: Box::new(inner),
        }
    }

    pub fn implies(guard: Invariant, body: Invariant) -> Self {
        Invariant::Implies {
            guard: Box::new(guard),
            body: Box::new(body),
        }
    }

    pub fn big_and(items: Vec<Invariant>) -> Self {
        Invariant::BigAnd { items }
    }

    pub fn time_point(t: Tick) -> Self {
        Invariant::TimePoint { t }
    }

    pub fn time_interval(t1: Tick, t2: Tick) -> Result<Self, LogicError> {
        Interval::new(t1, t2).map(Invariant::TimeInterval)
    }

    pub fn owner(tag: impl Into<String>) -> Self {
        Invariant::Owner { tag: tag.into() }
    }

    pub fn event(tag: impl Into<String>) -> Self {
        Invariant::Event { tag: tag.into() }
    }

    pub fn point(x: i64, y: i64) -> Self {
        Invariant::OccupyPoint(Point::new(x, y))
    }

    pub fn occupy_box(x1: i64, y1: i64, x2: i64, y2: i64) -> Self {
        Invariant::OccupyBox(Area::new(x1, y1, x2, y2))
    }

    pub fn occupy_3d_box(x1: i64, y1: i64, z1: i64, x2: i64, y2: i64, z2: i64) -> Self {
        Invariant::Occupy3DBox(Volume::new(x1, y1, z1, x2, y2, z2))
    }

    pub fn edge(source: impl Into<String>, target: impl Into<String>) -> Self {
        Invariant::Edge {
            source: source.into(),
            target: target.into(),
        }
    }

    pub fn transition(source: impl Into<String>, event: impl Into<String>, target: impl Into<String>) -> Self {
        Invariant::Transition {
            source: source.into(),
            event: event.into(),
            target: target.into(),
        }
    }

    pub fn quantity(kind: impl Into<String>, value: f64, unit: impl Into<String>) -> Result<Self, LogicError> {
        Quantity::new(kind, value, unit).map(Invariant::Quantity)
    }

    /// Canonical constructor name.
    pub fn op_name(&self) -> &'static str {
        match self {
            Invariant::And { .. } => "AND",
            Invariant::Or { .. } => "OR",
            Invariant::Not { .. } => "NOT",
            Invariant::Implies { .. } => "IMPLIES",
            Invariant::BigAnd { .. } => "BIGAND",
            Invariant::True => "TRUE",
            Invariant::False => "FALSE",
            Invariant::TimePoint { .. } => "TimePoint",
            Invariant::TimeInterval(_) => "TimeInterval",
            Invariant::Owner { .. } => "Owner",
            Invariant::Event { .. } => "Event",
            Invariant::OccupyPoint(_) => "OccupyPoint",
            Invariant::OccupyBox(_) => "OccupyBox",
            Invariant::Occupy3DBox(_) => "Occupy3DBox",
            Invariant::Edge { .. } => "Edge",
            Invariant::Transition { .. } => "Transition",
            Invariant::Quantity(_) => "Quantity",
        }
    }

    pub fn is_atom(&self) -> bool {
        !matches!(
            self,
            Invariant::And { .. }
                | Invariant::Or { .. }
                | Invariant::Not { .. }
                | Invariant::Implies { .. }
                | Invariant::BigAnd { .. }
        )
    }

    pub fn is_temporal(&self) -> bool {
        matches!(self, Invariant::TimePoint { .. } | Invariant::TimeInterval(_))
    }

    pub fn is_geometric(&self) -> bool {
        matches!(
            self,
            Invariant::OccupyPoint(_) | Invariant::OccupyBox(_) | Invariant::Occupy3DBox(_)
        )
    }

    /// Canonical form: conjunction chains flattened into `BIGAND`, `TRUE`
    /// conjuncts dropped, singleton conjunctions unwrapped and the empty
    /// conjunction turned into `TRUE`. Idempotent.
    pub fn normalize(&self) -> Invariant {
        match self {
            Invariant::And { .. } | Invariant::BigAnd { .. } => {
                let mut items = Vec::new();
                self.flatten_conjuncts(&mut items);
                conjunction(items)
            }
            Invariant::Or { left, right } => Invariant::or(left.normalize(), right.normalize()),
            Invariant::Not { inner } => Invariant::not(inner.normalize()),
            Invariant::Implies { guard, body } => Invariant::implies(guard.normalize(), body.normalize()),
            atom => atom.clone(),
        }
    }

    fn flatten_conjuncts(&self, out: &mut Vec<Invariant>) {
        match self {
            Invariant::And { left, right } => {
                left.flatten_conjuncts(out);
                right.flatten_conjuncts(out);
            }
            Invariant::BigAnd { items } => items.iter().for_each(|i| i.flatten_conjuncts(out)),
            Invariant::True => {}
            other => out.push(other.normalize()),
        }
    }

    /// Number of nodes in the tree.
    pub fn size(&self) -> usize {
        1 + match self {
            Invariant::And { left, right } | Invariant::Or { left, right } => left.size() + right.size(),
            Invariant::Not { inner } => inner.size(),
            Invariant::Implies { guard, body } => guard.size() + body.size(),
            Invariant::BigAnd { items } => items.iter().map(Invariant::size).sum(),
            _ => 0,
        }
    }
}

/// Joins already-normalized, non-conjunction items the way `normalize` does.
pub fn conjunction(mut items: Vec<Invariant>) -> Invariant {
    match items.len() {
        0 => Invariant::True,
        1 => items.pop().expect("one item"),
        _ => Invariant::BigAnd { items },
    }
}

/// All lattice points of `area`, row-major, refusing more than `cap` points.
pub fn decompose_box_to_points(area: &Area, cap: u64) -> Result<Vec<Point>, LogicError> {
    let requested = area.cell_count();
    if requested > cap as u128 {
        return Err(LogicError::CapExceeded { requested, cap });
    }
    let mut out = Vec::with_capacity(requested as usize);
    out.extend(area.points());
    Ok(out)
}
