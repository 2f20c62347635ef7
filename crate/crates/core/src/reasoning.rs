//! Filtering and aggregation over monitoring-fragment models.
//!
//! Every operator here is a pure function of its inputs. Temporal filtering
//! keeps the bodies of clauses whose time guard holds; spatial filtering
//! clips geometry to a window. The fold operators iterate such filtered
//! views over a tick window or along a path of translated boxes.

use std::error::Error as StdError;
use std::thread;

use thiserror::Error;

use crate::clause::{clauses_to_invariant, to_clauses, Clause};
use crate::invariant::{
    decompose_box_to_points, Area, Interval, Invariant, LogicError, Point, Tick, DEFAULT_DECOMPOSITION_CAP,
};

#[derive(Debug, Error)]
pub enum ReasoningError {
    #[error(transparent)]
    Logic(#[from] LogicError),
    #[error("invalid time window: {0}")]
    InvalidWindow(String),
    #[error("invalid space path: {0}")]
    InvalidPath(String),
    #[error("stop area {stop} is not reachable from {start} in steps of ({dx},{dy})")]
    PathUnreachable { start: Area, stop: Area, dx: i64, dy: i64 },
    #[error("fold step {index} (at {at}) failed: {source}")]
    Step {
        index: usize,
        at: String,
        #[source]
        source: Box<dyn StdError + Send + Sync>,
    },
}

/// Tick iteration window: `start, start+step, ...` up to and including `stop`
/// when it is hit exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeWindow {
    start: Tick,
    stop: Tick,
    step: Tick,
}

impl TimeWindow {
    pub fn new(start: Tick, stop: Tick, step: Tick) -> Result<Self, ReasoningError> {
        if start > stop {
            return Err(ReasoningError::InvalidWindow(format!("start {start} > stop {stop}")));
        }
        if step <= 0 {
            return Err(ReasoningError::InvalidWindow(format!("step {step} must be positive")));
        }
        Ok(TimeWindow { start, stop, step })
    }

    pub fn start(&self) -> Tick {
        self.start
    }
    pub fn stop(&self) -> Tick {
        self.stop
    }
    pub fn step(&self) -> Tick {
        self.step
    }

    /// `floor((stop - start) / step) + 1`
    pub fn iterations(&self) -> u64 {
        ((self.stop as i128 - self.start as i128) / self.step as i128 + 1) as u64
    }

    pub fn ticks(&self) -> impl Iterator<Item = Tick> {
        let (start, stop, step) = (self.start, self.stop, self.step);
        std::iter::successors(Some(start), move |t| t.checked_add(step).filter(|n| *n <= stop))
    }

    pub fn as_interval(&self) -> Interval {
        Interval::new(self.start, self.stop).expect("start <= stop")
    }
}

/// A constant-size box translated from `start` to `stop` by a fixed offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpacePath {
    start: Area,
    stop: Area,
    dx: i64,
    dy: i64,
}

impl SpacePath {
    pub fn new(start: Area, stop: Area, step_offset: (i64, i64)) -> Result<Self, ReasoningError> {
        if start.width() != stop.width() || start.height() != stop.height() {
            return Err(ReasoningError::InvalidPath(format!(
                "start {start} and stop {stop} differ in size"
            )));
        }
        if step_offset == (0, 0) {
            return Err(ReasoningError::InvalidPath("step offset must be non-zero".into()));
        }
        Ok(SpacePath {
            start,
            stop,
            dx: step_offset.0,
            dy: step_offset.1,
        })
    }

    /// Number of steps `k` with `start + k*offset == stop`.
    pub fn steps(&self) -> Result<u64, ReasoningError> {
        let unreachable = || ReasoningError::PathUnreachable {
            start: self.start,
            stop: self.stop,
            dx: self.dx,
            dy: self.dy,
        };
        let delta_x = self.stop.x1() as i128 - self.start.x1() as i128;
        let delta_y = self.stop.y1() as i128 - self.start.y1() as i128;
        let along = |delta: i128, step: i64| -> Option<Option<i128>> {
            if step == 0 {
                return (delta == 0).then_some(None);
            }
            let step = step as i128;
            (delta % step == 0 && delta / step >= 0).then_some(Some(delta / step))
        };
        let kx = along(delta_x, self.dx).ok_or_else(unreachable)?;
        let ky = along(delta_y, self.dy).ok_or_else(unreachable)?;
        let k = match (kx, ky) {
            (Some(a), Some(b)) if a == b => a,
            (Some(a), None) | (None, Some(a)) => a,
            _ => return Err(unreachable()),
        };
        Ok(k as u64)
    }

    /// The windows visited, `start` first and `stop` last.
    pub fn windows(&self) -> Result<Vec<Area>, ReasoningError> {
        let k = self.steps()?;
        (0..=k as i64)
            .map(|i| {
                let w = i.checked_mul(self.dx).zip(i.checked_mul(self.dy));
                w.and_then(|(wx, wy)| self.start.translate(wx, wy))
                    .ok_or_else(|| ReasoningError::InvalidPath("coordinate overflow".into()))
            })
            .collect()
    }
}

pub(crate) fn filter_clauses_by_time(clauses: &[Clause], t: Tick) -> Vec<Clause> {
    let mut out = Vec::new();
    for clause in clauses {
        let Some(guard) = &clause.guard else {
            out.push(clause.clone());
            continue;
        };
        if !clause.holds_at(t) {
            continue;
        }
        let residual: Vec<Invariant> = guard.iter().filter(|a| !a.is_temporal()).cloned().collect();
        if residual.is_empty() {
            out.extend(clause.body.iter().cloned().map(Clause::bare));
        } else {
            out.push(Clause::guarded(residual, clause.body.clone()));
        }
    }
    out
}

fn clip_atom(atom: &Invariant, window: &Area) -> Option<Invariant> {
    match atom {
        Invariant::OccupyPoint(p) => window.contains(*p).then(|| atom.clone()),
        Invariant::OccupyBox(b) => b.intersect(window).map(Invariant::OccupyBox),
        Invariant::Occupy3DBox(v) => v
            .footprint()
            .intersect(window)
            .map(|a| Invariant::Occupy3DBox(v.with_footprint(a))),
        other => Some(other.clone()),
    }
}

pub(crate) fn filter_clauses_by_area(clauses: &[Clause], window: &Area) -> Vec<Clause> {
    clauses
        .iter()
        .filter_map(|clause| {
            let clip = |atoms: &[Invariant]| atoms.iter().filter_map(|a| clip_atom(a, window)).collect::<Vec<_>>();
            let clipped = Clause {
                guard: clause.guard.as_deref().map(clip),
                body: clip(&clause.body),
            };
            (clipped.geometry().count() > 0).then_some(clipped)
        })
        .collect()
}

/// The clauses whose temporal guard holds at `t`, time atoms removed.
/// Guardless clauses always pass.
pub fn filter_by_time(inv: &Invariant, t: Tick) -> Result<Invariant, LogicError> {
    let clauses = to_clauses(inv)?;
    Ok(clauses_to_invariant(&filter_clauses_by_time(&clauses, t)))
}

/// Clips every clause's geometry to `window`. Clauses left without geometry
/// (including those that never had any) are dropped.
pub fn filter_by_area(inv: &Invariant, window: &Area) -> Result<Invariant, LogicError> {
    let clauses = to_clauses(inv)?;
    Ok(clauses_to_invariant(&filter_clauses_by_area(&clauses, window)))
}

/// Sequential time fold: `f(acc, filter_by_time(inv, t))` for each tick of
/// the window.
pub fn fold_time<A, F>(inv: &Invariant, init: A, window: &TimeWindow, mut f: F) -> Result<A, ReasoningError>
where
    F: FnMut(A, &Invariant) -> A,
{
    try_fold_time(inv, init, window, |acc, view| Ok::<A, std::convert::Infallible>(f(acc, view)))
}

/// Like [`fold_time`] with a fallible step; a failing step aborts the fold
/// and reports its iteration index.
pub fn try_fold_time<A, E, F>(inv: &Invariant, init: A, window: &TimeWindow, mut f: F) -> Result<A, ReasoningError>
where
    E: StdError + Send + Sync + 'static,
    F: FnMut(A, &Invariant) -> Result<A, E>,
{
    let clauses = to_clauses(inv)?;
    let mut acc = init;
    for (index, t) in window.ticks().enumerate() {
        let view = clauses_to_invariant(&filter_clauses_by_time(&clauses, t));
        acc = f(acc, &view).map_err(|e| ReasoningError::Step {
            index,
            at: format!("t={t}"),
            source: Box::new(e),
        })?;
    }
    Ok(acc)
}

/// Parallel time fold for an associative `combine` with identity
/// `identity`. Partial results are combined in tick order, so the result
/// equals the sequential fold of `combine(acc, map(view))`.
pub fn fold_time_associative<A, M, C>(
    inv: &Invariant,
    identity: A,
    window: &TimeWindow,
    map: M,
    combine: C,
) -> Result<A, ReasoningError>
where
    A: Clone + Send,
    M: Fn(&Invariant) -> A + Sync,
    C: Fn(A, A) -> A + Sync,
{
    let clauses = to_clauses(inv)?;
    let ticks: Vec<Tick> = window.ticks().collect();
    let workers = thread::available_parallelism().map_or(1, |n| n.get()).min(ticks.len().max(1));
    let chunk = ticks.len().div_ceil(workers).max(1);
    let partials: Vec<A> = thread::scope(|scope| {
        let handles: Vec<_> = ticks
            .chunks(chunk)
            .map(|part| {
                let (clauses, map, combine, identity) = (&clauses, &map, &combine, identity.clone());
                scope.spawn(move || {
                    part.iter().fold(identity, |acc, t| {
                        let view = clauses_to_invariant(&filter_clauses_by_time(clauses, *t));
                        combine(acc, map(&view))
                    })
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("fold worker panicked")).collect()
    });
    Ok(partials.into_iter().fold(identity, &combine))
}

/// Space fold: `f(acc, filter_by_area(inv, w))` for each window `w` on the
/// path, `start` to `stop` inclusive.
pub fn fold_space<A, F>(inv: &Invariant, init: A, path: &SpacePath, mut f: F) -> Result<A, ReasoningError>
where
    F: FnMut(A, &Invariant) -> A,
{
    let clauses = to_clauses(inv)?;
    let windows = path.windows()?;
    Ok(windows.iter().fold(init, |acc, w| {
        let view = clauses_to_invariant(&filter_clauses_by_area(&clauses, w));
        f(acc, &view)
    }))
}

/// Adds to `total` the number of cells owned by `cloud` in `inv`.
///
/// Looks at the top-level conjuncts (a lone clause counts as a one-element
/// conjunction). A conjunct contributes when it is `IMPLIES(guard, body)`
/// whose guard is `Owner(cloud)` or a conjunction containing it; the body
/// contributes 1 per point, 2 for `AND(point, point)`, the item count for a
/// `BIGAND` of points, and the cell count of any box. Anything else adds 0.
pub fn cloudy_area_count(cloud: &str, total: u64, inv: &Invariant) -> u64 {
    let area = match inv {
        Invariant::And { left, right } => clause_cells(cloud, left) + clause_cells(cloud, right),
        Invariant::BigAnd { items } => items.iter().map(|i| clause_cells(cloud, i)).sum(),
        single @ Invariant::Implies { .. } => clause_cells(cloud, single),
        _ => 0,
    };
    total + area
}

fn clause_cells(cloud: &str, inv: &Invariant) -> u64 {
    match inv {
        Invariant::Implies { guard, body } if owned_by(guard, cloud) => body_cells(body),
        _ => 0,
    }
}

fn owned_by(guard: &Invariant, cloud: &str) -> bool {
    let is_cloud = |i: &Invariant| matches!(i, Invariant::Owner { tag } if tag == cloud);
    match guard {
        Invariant::And { left, right } => is_cloud(left) || is_cloud(right),
        Invariant::BigAnd { items } => items.iter().any(is_cloud),
        other => is_cloud(other),
    }
}

fn body_cells(body: &Invariant) -> u64 {
    match body {
        Invariant::OccupyPoint(_) => 1,
        Invariant::OccupyBox(b) => u64::try_from(b.cell_count()).unwrap_or(u64::MAX),
        Invariant::And { left, right } => body_cells(left).saturating_add(body_cells(right)),
        Invariant::BigAnd { items } => items.iter().map(body_cells).fold(0u64, u64::saturating_add),
        _ => 0,
    }
}

/// A shared extent of two clauses in time and space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Overlap {
    pub time_span: Interval,
    pub region: Vec<Point>,
    pub owner_a: String,
    pub owner_b: String,
}

/// Pairwise clause overlaps between two models, using the default
/// decomposition cap.
pub fn overlaps(a: &Invariant, b: &Invariant) -> Result<Vec<Overlap>, LogicError> {
    overlaps_with_cap(a, b, DEFAULT_DECOMPOSITION_CAP)
}

/// Guardless clauses span all ticks. Regions are row-major, duplicate-free
/// point lists. Output is ordered by `(time_span.start, owner_a, owner_b)`,
/// then by clause position.
pub fn overlaps_with_cap(a: &Invariant, b: &Invariant, cap: u64) -> Result<Vec<Overlap>, LogicError> {
    let left = to_clauses(a)?;
    let right = to_clauses(b)?;
    let mut out = Vec::new();
    for ca in &left {
        let Some(span_a) = ca.active_span() else { continue };
        let shapes_a: Vec<Area> = ca.footprints().collect();
        if shapes_a.is_empty() {
            continue;
        }
        for cb in &right {
            let Some(time_span) = cb.active_span().and_then(|s| s.intersect(&span_a)) else {
                continue;
            };
            let mut region = Vec::new();
            for sa in &shapes_a {
                for sb in cb.footprints() {
                    if let Some(common) = sa.intersect(&sb) {
                        region.extend(decompose_box_to_points(&common, cap)?);
                        if region.len() as u64 > cap {
                            return Err(LogicError::CapExceeded {
                                requested: region.len() as u128,
                                cap,
                            });
                        }
                    }
                }
            }
            if region.is_empty() {
                continue;
            }
            region.sort_by_key(|p| (p.y, p.x));
            region.dedup();
            out.push(Overlap {
                time_span,
                region,
                owner_a: ca.owner().unwrap_or_default().to_string(),
                owner_b: cb.owner().unwrap_or_default().to_string(),
            });
        }
    }
    out.sort_by(|x, y| {
        (x.time_span.start(), &x.owner_a, &x.owner_b).cmp(&(y.time_span.start(), &y.owner_a, &y.owner_b))
    });
    Ok(out)
}
