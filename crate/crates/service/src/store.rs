//! In-memory model store.
//!
//! Clauses are indexed by their active time span and by the coarse spatial
//! buckets their footprints touch. The writer mutates a private copy and
//! publishes it as an immutable [`StoreSnapshot`]; readers holding an older
//! snapshot keep seeing it unchanged.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use gridspace_core::clause::to_clauses;
use gridspace_core::ingestion::{frame_to_invariant, GridFrame, SourceConfig};
use gridspace_core::{clauses_to_invariant, Area, Clause, Interval, Invariant, LogicError, Tick};

pub const DEFAULT_BUCKET_SIDE: i64 = 64;
/// 24 hours at one tick per second.
pub const DEFAULT_RETENTION: Tick = 24 * 60 * 60;
/// Footprints touching more buckets than this skip the spatial index and
/// are returned by every spatial query.
const MAX_BUCKETS_PER_FOOTPRINT: u128 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StoreConfig {
    pub bucket_side: i64,
    /// Clauses whose span ended more than this many ticks before the latest
    /// ingested tick are evicted.
    pub retention: Tick,
}

impl Default for StoreConfig {
    fn default() -> Self {
        StoreConfig {
            bucket_side: DEFAULT_BUCKET_SIDE,
            retention: DEFAULT_RETENTION,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredClause {
    pub id: u64,
    pub clause: Clause,
    /// `None` when the guard can never hold.
    pub span: Option<Interval>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Placement {
    Buckets,
    Wide,
    Nowhere,
}

/// One consistent revision of the store.
#[derive(Debug, Clone)]
pub struct StoreSnapshot {
    config: StoreConfig,
    revision: u64,
    next_id: u64,
    latest: Option<Tick>,
    clauses: BTreeMap<u64, Arc<StoredClause>>,
    /// Spans no longer than `max_len`, keyed by start.
    by_start: BTreeMap<Tick, BTreeSet<u64>>,
    max_len: Tick,
    /// Unbounded spans and spans longer than the retention horizon.
    long_spans: BTreeSet<u64>,
    by_bucket: HashMap<(i64, i64), BTreeSet<u64>>,
    wide: BTreeSet<u64>,
    /// `(owner, timestamp)` of every retained frame.
    frames: BTreeSet<(String, Tick)>,
}

impl StoreSnapshot {
    fn new(config: StoreConfig) -> Self {
        StoreSnapshot {
            config,
            revision: 0,
            next_id: 0,
            latest: None,
            clauses: BTreeMap::new(),
            by_start: BTreeMap::new(),
            max_len: 0,
            long_spans: BTreeSet::new(),
            by_bucket: HashMap::new(),
            wide: BTreeSet::new(),
            frames: BTreeSet::new(),
        }
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn len(&self) -> usize {
        self.clauses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clauses.is_empty()
    }

    /// Latest tick seen by ingestion.
    pub fn latest(&self) -> Option<Tick> {
        self.latest
    }

    pub fn config(&self) -> StoreConfig {
        self.config
    }

    /// Clauses in insertion order.
    pub fn clauses(&self) -> impl Iterator<Item = &Arc<StoredClause>> {
        self.clauses.values()
    }

    pub fn to_invariant(&self) -> Invariant {
        let clauses: Vec<Clause> = self.clauses.values().map(|c| c.clause.clone()).collect();
        clauses_to_invariant(&clauses)
    }

    pub fn contains_frame(&self, owner: &str, timestamp: Tick) -> bool {
        self.frames.contains(&(owner.to_string(), timestamp))
    }

    fn bucket_of(&self, x: i64, y: i64) -> (i64, i64) {
        let side = self.config.bucket_side;
        (x.div_euclid(side), y.div_euclid(side))
    }

    /// Bucket range covered by `area`, or `None` when it is too large to
    /// enumerate.
    fn bucket_range(&self, area: &Area) -> Option<((i64, i64), (i64, i64))> {
        let lo = self.bucket_of(area.x1(), area.y1());
        let hi = self.bucket_of(area.x2(), area.y2());
        let count = (hi.0 - lo.0 + 1) as u128 * (hi.1 - lo.1 + 1) as u128;
        (count <= MAX_BUCKETS_PER_FOOTPRINT).then_some((lo, hi))
    }

    /// Ids of clauses whose guard can hold at some tick of `window`.
    pub fn active_ids(&self, window: &Interval) -> BTreeSet<u64> {
        let from = window.start().saturating_sub(self.max_len);
        let bounded = self
            .by_start
            .range(from..=window.end())
            .flat_map(|(_, ids)| ids.iter().copied());
        bounded
            .chain(self.long_spans.iter().copied())
            .filter(|id| {
                self.clauses[id]
                    .span
                    .is_some_and(|s| s.intersect(window).is_some())
            })
            .collect()
    }

    /// Clauses whose guard can hold at `t`, in insertion order.
    pub fn active_at(&self, t: Tick) -> Vec<Arc<StoredClause>> {
        self.resolve(self.active_ids(&Interval::point(t)))
    }

    /// Ids of clauses with a footprint that may touch one of `areas`.
    /// `None` means the areas are too large to narrow anything down.
    pub fn spatial_ids(&self, areas: &[Area]) -> Option<BTreeSet<u64>> {
        let mut out = self.wide.clone();
        for area in areas {
            let ((bx1, by1), (bx2, by2)) = self.bucket_range(area)?;
            for bx in bx1..=bx2 {
                for by in by1..=by2 {
                    if let Some(ids) = self.by_bucket.get(&(bx, by)) {
                        out.extend(ids.iter().copied());
                    }
                }
            }
        }
        Some(out)
    }

    /// Clauses active somewhere in `window` that may touch `areas`. Every
    /// clause with geometry inside an area and a span meeting the window
    /// is included.
    pub fn candidates(&self, window: &Interval, areas: &[Area]) -> Vec<Arc<StoredClause>> {
        let active = self.active_ids(window);
        let ids = match self.spatial_ids(areas) {
            Some(spatial) => active.intersection(&spatial).copied().collect(),
            None => active,
        };
        self.resolve(ids)
    }

    fn resolve(&self, ids: BTreeSet<u64>) -> Vec<Arc<StoredClause>> {
        ids.into_iter().map(|id| self.clauses[&id].clone()).collect()
    }

    fn placement(&self, clause: &Clause) -> (Placement, BTreeSet<(i64, i64)>) {
        let mut buckets = BTreeSet::new();
        let mut any = false;
        for fp in clause.footprints() {
            any = true;
            let Some(((bx1, by1), (bx2, by2))) = self.bucket_range(&fp) else {
                return (Placement::Wide, BTreeSet::new());
            };
            for bx in bx1..=bx2 {
                for by in by1..=by2 {
                    buckets.insert((bx, by));
                }
            }
        }
        if any {
            (Placement::Buckets, buckets)
        } else {
            (Placement::Nowhere, buckets)
        }
    }

    fn add(&mut self, clause: Clause) {
        let id = self.next_id;
        self.next_id += 1;
        let span = clause.active_span();
        match span {
            Some(s) if s.start() != Tick::MIN && s.end() != Tick::MAX && s.end() - s.start() <= self.config.retention => {
                self.max_len = self.max_len.max(s.end() - s.start());
                self.by_start.entry(s.start()).or_default().insert(id);
            }
            Some(_) => {
                self.long_spans.insert(id);
            }
            None => {}
        }
        match self.placement(&clause) {
            (Placement::Buckets, buckets) => {
                for b in buckets {
                    self.by_bucket.entry(b).or_default().insert(id);
                }
            }
            (Placement::Wide, _) => {
                self.wide.insert(id);
            }
            (Placement::Nowhere, _) => {}
        }
        self.clauses.insert(id, Arc::new(StoredClause { id, clause, span }));
    }

    fn remove(&mut self, id: u64) {
        let Some(stored) = self.clauses.remove(&id) else { return };
        if let Some(s) = stored.span {
            if let Some(ids) = self.by_start.get_mut(&s.start()) {
                ids.remove(&id);
                if ids.is_empty() {
                    self.by_start.remove(&s.start());
                }
            }
        }
        self.long_spans.remove(&id);
        if self.wide.remove(&id) {
            return;
        }
        if let (Placement::Buckets, buckets) = self.placement(&stored.clause) {
            for b in buckets {
                if let Some(ids) = self.by_bucket.get_mut(&b) {
                    ids.remove(&id);
                    if ids.is_empty() {
                        self.by_bucket.remove(&b);
                    }
                }
            }
        }
    }

    /// Drops clauses whose span ended before the horizon, and clauses that
    /// can never hold.
    fn evict(&mut self) {
        let Some(latest) = self.latest else { return };
        let horizon = latest.saturating_sub(self.config.retention);
        let mut expired: Vec<u64> = self
            .by_start
            .range(..horizon)
            .flat_map(|(_, ids)| ids.iter().copied())
            .filter(|id| self.clauses[id].span.is_some_and(|s| s.end() < horizon))
            .collect();
        expired.extend(
            self.long_spans
                .iter()
                .copied()
                .filter(|id| self.clauses[id].span.is_some_and(|s| s.end() < horizon)),
        );
        for id in expired {
            self.remove(id);
        }
        self.frames.retain(|(_, t)| *t >= horizon);
    }
}

/// Writer side of the store. Only the owner of the `ModelStore` mutates;
/// readers use [`ModelStore::snapshot`].
#[derive(Debug, Clone)]
pub struct ModelStore {
    current: Arc<StoreSnapshot>,
}

impl Default for ModelStore {
    fn default() -> Self {
        ModelStore::new(StoreConfig::default())
    }
}

impl ModelStore {
    pub fn new(config: StoreConfig) -> Self {
        assert!(config.bucket_side > 0, "bucket side must be positive");
        ModelStore {
            current: Arc::new(StoreSnapshot::new(config)),
        }
    }

    pub fn snapshot(&self) -> Arc<StoreSnapshot> {
        self.current.clone()
    }

    pub fn revision(&self) -> u64 {
        self.current.revision
    }

    /// Inserts a frame. Returns the new revision, or `None` when a frame
    /// from the same owner with the same timestamp is already stored.
    /// A frame with no qualifying cell adds no clause but still counts as a
    /// revision.
    pub fn insert_frame(&mut self, frame: &GridFrame, source: &SourceConfig) -> Option<u64> {
        let key = (source.owner_tag.clone(), frame.timestamp());
        if self.current.frames.contains(&key) {
            return None;
        }
        let clauses = to_clauses(&frame_to_invariant(frame, source)).expect("frames are in the monitoring fragment");
        let snap = Arc::make_mut(&mut self.current);
        snap.frames.insert(key);
        snap.latest = Some(snap.latest.map_or(frame.timestamp(), |t| t.max(frame.timestamp())));
        for clause in clauses {
            snap.add(clause);
        }
        snap.evict();
        snap.revision += 1;
        Some(snap.revision)
    }

    /// Inserts every clause of a model. Models outside the monitoring
    /// fragment are refused whole.
    pub fn insert_model(&mut self, model: &Invariant) -> Result<u64, LogicError> {
        let clauses = to_clauses(model)?;
        let snap = Arc::make_mut(&mut self.current);
        for clause in clauses {
            snap.add(clause);
        }
        snap.evict();
        snap.revision += 1;
        Ok(snap.revision)
    }
}
