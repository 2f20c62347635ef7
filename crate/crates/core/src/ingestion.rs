//! Turning external observations into invariants: radar-style coverage
//! frames, generation/load tables, and the polling loop that feeds frames
//! to a consumer.
//!
//! Frame text format:
//!
//! ```text
//! GRIDFRAME 1
//! t=<tick> validity=<tick> origin=<x>,<y> size=<w>x<h>
//! <h lines of w space-separated integers 0..255, top row first>
//! ```

use std::collections::HashSet;
use std::fs;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, warn};

use crate::invariant::{Invariant, LogicError, Tick};

pub const FRAME_MAGIC: &str = "GRIDFRAME 1";

/// Delay multipliers applied to the poll interval after consecutive fetch
/// failures. The last entry repeats.
pub const BACKOFF_MULTIPLIERS: [i64; 5] = [1, 2, 4, 8, 16];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IngestError {
    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },
    #[error("fetch error: {0}")]
    Fetch(String),
    #[error("invalid source config: {0}")]
    Config(String),
    #[error(transparent)]
    Logic(#[from] LogicError),
}

fn parse_err(line: usize, reason: impl Into<String>) -> IngestError {
    IngestError::Parse {
        line,
        reason: reason.into(),
    }
}

/// One rasterized observation. Cells are stored row-major from the bottom
/// row (`j = 0`) up; intensity 0 is clear.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridFrame {
    timestamp: Tick,
    validity: Tick,
    origin_x: i64,
    origin_y: i64,
    width: u32,
    height: u32,
    cells: Vec<u8>,
}

impl GridFrame {
    pub fn new(
        timestamp: Tick,
        validity: Tick,
        origin: (i64, i64),
        width: u32,
        height: u32,
        cells: Vec<u8>,
    ) -> Result<Self, IngestError> {
        if width == 0 || height == 0 {
            return Err(IngestError::DimensionMismatch {
                expected: "positive width and height".into(),
                found: format!("{width}x{height}"),
            });
        }
        if validity <= 0 {
            return Err(parse_err(0, format!("validity must be positive, got {validity}")));
        }
        let expected = width as usize * height as usize;
        if cells.len() != expected {
            return Err(IngestError::DimensionMismatch {
                expected: format!("{expected} cells"),
                found: format!("{} cells", cells.len()),
            });
        }
        timestamp
            .checked_add(validity)
            .ok_or_else(|| parse_err(0, "timestamp + validity overflows"))?;
        let far_x = origin.0.checked_add(width as i64 - 1);
        let far_y = origin.1.checked_add(height as i64 - 1);
        if far_x.is_none() || far_y.is_none() {
            return Err(parse_err(0, "frame extends past the coordinate range"));
        }
        Ok(GridFrame {
            timestamp,
            validity,
            origin_x: origin.0,
            origin_y: origin.1,
            width,
            height,
            cells,
        })
    }

    pub fn timestamp(&self) -> Tick {
        self.timestamp
    }
    pub fn validity(&self) -> Tick {
        self.validity
    }
    pub fn origin(&self) -> (i64, i64) {
        (self.origin_x, self.origin_y)
    }
    pub fn width(&self) -> u32 {
        self.width
    }
    pub fn height(&self) -> u32 {
        self.height
    }
    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    /// Intensity of cell `(i, j)`, `j = 0` being the bottom row.
    pub fn cell(&self, i: u32, j: u32) -> u8 {
        self.cells[(j * self.width + i) as usize]
    }

    pub fn covered_count(&self, threshold: u8) -> usize {
        self.cells.iter().filter(|&&c| c >= threshold.max(1)).count()
    }
}

/// Parses a single frame.
pub fn parse_grid_frame(text: &str) -> Result<GridFrame, IngestError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let mut next_line = || lines.by_ref().find(|(_, l)| !l.is_empty());

    let (n, magic) = next_line().ok_or_else(|| parse_err(1, "empty input"))?;
    if magic != FRAME_MAGIC {
        return Err(parse_err(n, format!("expected {FRAME_MAGIC:?}, found {magic:?}")));
    }
    let (n, header) = next_line().ok_or_else(|| parse_err(n + 1, "missing header line"))?;
    let (timestamp, validity, origin, width, height) = parse_header(n, header)?;

    let mut cells = vec![0u8; width as usize * height as usize];
    let mut rows = 0u32;
    let mut last_line = n;
    while let Some((n, row)) = next_line() {
        last_line = n;
        if rows == height {
            return Err(IngestError::DimensionMismatch {
                expected: format!("{height} rows"),
                found: format!("extra row at line {n}"),
            });
        }
        let values = row
            .split_whitespace()
            .map(|v| v.parse::<u8>().map_err(|_| parse_err(n, format!("invalid cell value {v:?}"))))
            .collect::<Result<Vec<u8>, _>>()?;
        if values.len() != width as usize {
            return Err(IngestError::DimensionMismatch {
                expected: format!("{width} cells per row"),
                found: format!("{} cells at line {n}", values.len()),
            });
        }
        let j = height - 1 - rows;
        let start = (j * width) as usize;
        cells[start..start + width as usize].copy_from_slice(&values);
        rows += 1;
    }
    if rows != height {
        return Err(IngestError::DimensionMismatch {
            expected: format!("{height} rows"),
            found: format!("{rows} rows ending at line {last_line}"),
        });
    }
    GridFrame::new(timestamp, validity, origin, width, height, cells).map_err(|e| match e {
        IngestError::Parse { reason, .. } => parse_err(n, reason),
        other => other,
    })
}

type Header = (Tick, Tick, (i64, i64), u32, u32);

fn parse_header(n: usize, header: &str) -> Result<Header, IngestError> {
    let mut t = None;
    let mut validity = None;
    let mut origin = None;
    let mut size = None;
    for field in header.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| parse_err(n, format!("malformed header field {field:?}")))?;
        let bad = || parse_err(n, format!("invalid value for {key}: {value:?}"));
        match key {
            "t" => t = Some(value.parse::<Tick>().map_err(|_| bad())?),
            "validity" => validity = Some(value.parse::<Tick>().map_err(|_| bad())?),
            "origin" => {
                let (x, y) = value.split_once(',').ok_or_else(bad)?;
                origin = Some((x.parse().map_err(|_| bad())?, y.parse().map_err(|_| bad())?));
            }
            "size" => {
                let (w, h) = value.split_once('x').ok_or_else(bad)?;
                size = Some((w.parse::<u32>().map_err(|_| bad())?, h.parse::<u32>().map_err(|_| bad())?));
            }
            other => return Err(parse_err(n, format!("unknown header field {other:?}"))),
        }
    }
    let missing = |k: &str| parse_err(n, format!("header is missing {k}"));
    let (w, h) = size.ok_or_else(|| missing("size"))?;
    if w == 0 || h == 0 {
        return Err(IngestError::DimensionMismatch {
            expected: "positive width and height".into(),
            found: format!("{w}x{h}"),
        });
    }
    let validity = validity.ok_or_else(|| missing("validity"))?;
    if validity <= 0 {
        return Err(parse_err(n, format!("validity must be positive, got {validity}")));
    }
    Ok((t.ok_or_else(|| missing("t"))?, validity, origin.ok_or_else(|| missing("origin"))?, w, h))
}

/// Canonical text of a frame; `parse_grid_frame` inverts it.
pub fn write_grid_frame(frame: &GridFrame) -> String {
    let mut out = format!(
        "{FRAME_MAGIC}\nt={} validity={} origin={},{} size={}x{}\n",
        frame.timestamp, frame.validity, frame.origin_x, frame.origin_y, frame.width, frame.height
    );
    for j in (0..frame.height).rev() {
        let row: Vec<String> = (0..frame.width).map(|i| frame.cell(i, j).to_string()).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

/// Splits a replay file holding several concatenated frames into the text
/// of each frame. Each chunk starts at a `GRIDFRAME` line.
pub fn split_frames(text: &str) -> Vec<String> {
    let mut chunks: Vec<String> = Vec::new();
    for line in text.lines() {
        if line.trim_start().starts_with("GRIDFRAME") || chunks.is_empty() {
            chunks.push(String::new());
        }
        let current = chunks.last_mut().expect("at least one chunk");
        current.push_str(line);
        current.push('\n');
    }
    chunks.retain(|c| !c.trim().is_empty());
    chunks
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SourceKind {
    #[serde(rename = "file-replay")]
    FileReplay,
    #[serde(rename = "http-pull")]
    HttpPull,
}

/// Where frames come from and how they become invariants. Serialized with
/// the config-file key names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub kind: SourceKind,
    pub uri: String,
    #[serde(rename = "poll_seconds", default)]
    pub poll_interval: Tick,
    #[serde(rename = "owner")]
    pub owner_tag: String,
    #[serde(rename = "threshold")]
    pub intensity_threshold: u8,
}

impl SourceConfig {
    pub fn new(kind: SourceKind, uri: impl Into<String>, poll_interval: Tick, owner_tag: impl Into<String>, threshold: u8) -> Self {
        SourceConfig {
            kind,
            uri: uri.into(),
            poll_interval,
            owner_tag: owner_tag.into(),
            intensity_threshold: threshold,
        }
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if self.intensity_threshold == 0 {
            return Err(IngestError::Config("threshold must be in 1..255".into()));
        }
        if self.kind == SourceKind::HttpPull && self.poll_interval <= 0 {
            return Err(IngestError::Config("poll_seconds must be positive for http-pull".into()));
        }
        if self.poll_interval < 0 {
            return Err(IngestError::Config("poll_seconds must not be negative".into()));
        }
        if self.owner_tag.is_empty() {
            return Err(IngestError::Config("owner must not be empty".into()));
        }
        Ok(())
    }
}

/// `IMPLIES(AND(TimeInterval(t, t + validity), Owner(owner)), BIGAND(points))`
/// with one point per cell at or above the threshold; `TRUE` when no cell
/// qualifies.
pub fn frame_to_invariant(frame: &GridFrame, cfg: &SourceConfig) -> Invariant {
    let threshold = cfg.intensity_threshold.max(1);
    let mut points = Vec::new();
    for j in 0..frame.height {
        for i in 0..frame.width {
            if frame.cell(i, j) >= threshold {
                points.push(Invariant::point(frame.origin_x + i as i64, frame.origin_y + j as i64));
            }
        }
    }
    if points.is_empty() {
        return Invariant::True;
    }
    let span = Invariant::time_interval(frame.timestamp, frame.timestamp + frame.validity)
        .expect("validity is positive");
    Invariant::implies(
        Invariant::and(span, Invariant::owner(cfg.owner_tag.clone())),
        Invariant::big_and(points),
    )
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
struct QuantityRow {
    x: i64,
    y: i64,
    t1: Tick,
    t2: Tick,
    kind: String,
    value: f64,
    unit: String,
}

/// Parses a generation/load table (`x,y,t1,t2,kind,value,unit` with a
/// header row) into one clause per row:
/// `IMPLIES(TimeInterval(t1, t2), AND(OccupyPoint(x, y), Quantity))`.
pub fn parse_quantity_csv(text: &str) -> Result<Invariant, IngestError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if headers != "x,y,t1,t2,kind,value,unit" {
        return Err(parse_err(1, format!("expected header x,y,t1,t2,kind,value,unit, found {headers}")));
    }
    let mut clauses = Vec::new();
    for (i, row) in reader.deserialize::<QuantityRow>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| parse_err(line, e.to_string()))?;
        let span = Invariant::time_interval(row.t1, row.t2).map_err(|e| parse_err(line, e.to_string()))?;
        let quantity =
            Invariant::quantity(row.kind, row.value, row.unit).map_err(|e| parse_err(line, e.to_string()))?;
        clauses.push(Invariant::implies(span, Invariant::and(Invariant::point(row.x, row.y), quantity)));
    }
    Ok(Invariant::big_and(clauses).normalize())
}

// ---------------------------------------------------------------------------
// Source runner

/// Result of one fetch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Fetched {
    Text(String),
    /// The source has nothing more to give (end of a replay file).
    Exhausted,
}

pub trait Fetcher: Send {
    fn fetch(&mut self) -> Result<Fetched, IngestError>;
}

/// Receives parsed frames from the fetch loop.
pub trait FrameSink: Send {
    fn accept(&mut self, frame: GridFrame);
}

impl<F: FnMut(GridFrame) + Send> FrameSink for F {
    fn accept(&mut self, frame: GridFrame) {
        self(frame)
    }
}

/// Waits between polls. Returns `false` when `stop` was raised during the
/// wait.
pub trait Pacer: Send {
    fn wait(&mut self, ticks: Tick, stop: &AtomicBool) -> bool;
}

/// Wall-clock pacer reading one tick as one second.
#[derive(Debug, Default, Clone, Copy)]
pub struct RealPacer;

impl Pacer for RealPacer {
    fn wait(&mut self, ticks: Tick, stop: &AtomicBool) -> bool {
        let deadline = Instant::now() + Duration::from_secs(ticks.max(0) as u64);
        loop {
            if stop.load(Ordering::Relaxed) {
                return false;
            }
            let now = Instant::now();
            if now >= deadline {
                return true;
            }
            thread::sleep((deadline - now).min(Duration::from_millis(20)));
        }
    }
}

/// Serves the frames of a replay file one per fetch.
pub struct FileReplayFetcher {
    chunks: std::vec::IntoIter<String>,
}

impl FileReplayFetcher {
    pub fn open(path: &str) -> Result<Self, IngestError> {
        let path = path.strip_prefix("file://").unwrap_or(path);
        let text = fs::read_to_string(path).map_err(|e| IngestError::Fetch(format!("{path}: {e}")))?;
        Ok(Self::from_text(&text))
    }

    pub fn from_text(text: &str) -> Self {
        FileReplayFetcher {
            chunks: split_frames(text).into_iter(),
        }
    }
}

impl Fetcher for FileReplayFetcher {
    fn fetch(&mut self) -> Result<Fetched, IngestError> {
        Ok(self.chunks.next().map_or(Fetched::Exhausted, Fetched::Text))
    }
}

/// Plain HTTP GET; only a 200 response counts as success.
pub struct HttpFetcher {
    agent: ureq::Agent,
    uri: String,
}

impl HttpFetcher {
    pub fn new(uri: impl Into<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(10)))
            .http_status_as_error(false)
            .build()
            .into();
        HttpFetcher { agent, uri: uri.into() }
    }
}

impl Fetcher for HttpFetcher {
    fn fetch(&mut self) -> Result<Fetched, IngestError> {
        let mut response = self
            .agent
            .get(&self.uri)
            .call()
            .map_err(|e| IngestError::Fetch(format!("GET {}: {e}", self.uri)))?;
        let status = response.status().as_u16();
        if status != 200 {
            return Err(IngestError::Fetch(format!("GET {}: status {status}", self.uri)));
        }
        response
            .body_mut()
            .read_to_string()
            .map(Fetched::Text)
            .map_err(|e| IngestError::Fetch(format!("GET {}: {e}", self.uri)))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SourceStats {
    pub frames_emitted: u64,
    pub duplicates_dropped: u64,
    pub parse_errors: u64,
    pub fetch_errors: u64,
}

/// Handle to a running fetch loop.
pub struct SourceHandle {
    stop: Arc<AtomicBool>,
    stats: Arc<Mutex<SourceStats>>,
    thread: Option<JoinHandle<()>>,
}

impl SourceHandle {
    /// Asks the loop to finish after the current step.
    pub fn stop(&self) {
        self.stop.store(true, Ordering::Relaxed);
    }

    pub fn stats(&self) -> SourceStats {
        self.stats.lock().expect("stats lock").clone()
    }

    pub fn is_finished(&self) -> bool {
        self.thread.as_ref().is_none_or(|t| t.is_finished())
    }

    /// Waits for the loop to end and returns its final counters.
    pub fn join(mut self) -> SourceStats {
        if let Some(t) = self.thread.take() {
            if t.join().is_err() {
                warn!("source loop panicked");
            }
        }
        self.stats()
    }
}

impl Drop for SourceHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Starts the fetch loop for `cfg` with the default fetcher for its kind and
/// a wall-clock pacer.
pub fn run_source(cfg: SourceConfig, sink: impl FrameSink + 'static) -> Result<SourceHandle, IngestError> {
    cfg.validate()?;
    let fetcher: Box<dyn Fetcher> = match cfg.kind {
        SourceKind::FileReplay => Box::new(FileReplayFetcher::open(&cfg.uri)?),
        SourceKind::HttpPull => Box::new(HttpFetcher::new(cfg.uri.clone())),
    };
    Ok(run_source_with(cfg, fetcher, sink, RealPacer))
}

impl Fetcher for Box<dyn Fetcher> {
    fn fetch(&mut self) -> Result<Fetched, IngestError> {
        (**self).fetch()
    }
}

/// Starts the fetch loop on its own thread with explicit collaborators.
///
/// Successful fetches wait one poll interval before the next. Failed
/// fetches are counted and retried after `BACKOFF_MULTIPLIERS[k]` poll
/// intervals for the k-th consecutive failure; a success resets the
/// schedule. Unparseable frames are skipped and counted; frames whose
/// timestamp was already seen are dropped.
pub fn run_source_with(
    cfg: SourceConfig,
    mut fetcher: impl Fetcher + 'static,
    mut sink: impl FrameSink + 'static,
    mut pacer: impl Pacer + 'static,
) -> SourceHandle {
    let stop = Arc::new(AtomicBool::new(false));
    let stats = Arc::new(Mutex::new(SourceStats::default()));
    let (stop_flag, shared) = (stop.clone(), stats.clone());
    let thread = thread::spawn(move || {
        let mut seen = HashSet::new();
        let mut failures = 0usize;
        while !stop_flag.load(Ordering::Relaxed) {
            let delay = match fetcher.fetch() {
                Ok(Fetched::Exhausted) => break,
                Ok(Fetched::Text(text)) => {
                    failures = 0;
                    match parse_grid_frame(&text) {
                        Ok(frame) if seen.insert(frame.timestamp()) => {
                            debug!(uri = %cfg.uri, t = frame.timestamp(), "frame received");
                            sink.accept(frame);
                            shared.lock().expect("stats lock").frames_emitted += 1;
                        }
                        Ok(frame) => {
                            debug!(uri = %cfg.uri, t = frame.timestamp(), "duplicate frame dropped");
                            shared.lock().expect("stats lock").duplicates_dropped += 1;
                        }
                        Err(e) => {
                            warn!(uri = %cfg.uri, error = %e, "frame skipped");
                            shared.lock().expect("stats lock").parse_errors += 1;
                        }
                    }
                    cfg.poll_interval
                }
                Err(e) => {
                    let factor = BACKOFF_MULTIPLIERS[failures.min(BACKOFF_MULTIPLIERS.len() - 1)];
                    failures += 1;
                    warn!(uri = %cfg.uri, error = %e, retry_in = cfg.poll_interval * factor, "fetch failed");
                    shared.lock().expect("stats lock").fetch_errors += 1;
                    cfg.poll_interval.saturating_mul(factor)
                }
            };
            if !pacer.wait(delay, &stop_flag) {
                break;
            }
        }
    });
    SourceHandle {
        stop,
        stats,
        thread: Some(thread),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reasoning::cloudy_area_count;

    fn cloud_cfg() -> SourceConfig {
        SourceConfig::new(SourceKind::FileReplay, "mem", 0, "cloud", 1)
    }

    const SMALL: &str = "GRIDFRAME 1\nt=100 validity=10 origin=10,20 size=3x2\n0 9 9\n0 0 9\n";

    #[test]
    fn single_clear_cell() {
        let f = parse_grid_frame("GRIDFRAME 1\nt=0 validity=1 origin=0,0 size=1x1\n0\n").unwrap();
        assert_eq!((f.width(), f.height(), f.cells()), (1, 1, &[0u8][..]));
        assert_eq!(frame_to_invariant(&f, &cloud_cfg()), Invariant::True);
    }

    #[test]
    fn three_by_two_frame() {
        let f = parse_grid_frame(SMALL).unwrap();
        assert_eq!(f.covered_count(1), 3);
        // bottom row is the last text line
        assert_eq!(f.cells(), &[0, 0, 9, 0, 9, 9]);
        let inv = frame_to_invariant(&f, &cloud_cfg());
        let Invariant::Implies { body, .. } = &inv else { panic!("{inv:?}") };
        let Invariant::BigAnd { items } = body.as_ref() else { panic!("{body:?}") };
        assert_eq!(items.len(), 3);
        assert!(items.contains(&Invariant::point(12, 20)));
        assert!(items.contains(&Invariant::point(11, 21)));
        assert_eq!(cloudy_area_count("cloud", 0, &inv), 3);
        assert_eq!(parse_grid_frame(&write_grid_frame(&f)).unwrap(), f);
    }

    #[test]
    fn threshold_binarizes() {
        let f = parse_grid_frame("GRIDFRAME 1\nt=0 validity=5 origin=0,0 size=3x1\n1 50 200\n").unwrap();
        let cfg = SourceConfig::new(SourceKind::FileReplay, "mem", 0, "cloud", 50);
        assert_eq!(cloudy_area_count("cloud", 0, &frame_to_invariant(&f, &cfg)), 2);
    }

    #[test]
    fn malformed_frames() {
        let wrong_width = "GRIDFRAME 1\nt=0 validity=1 origin=0,0 size=3x1\n0 0 0 0 0\n";
        assert!(matches!(parse_grid_frame(wrong_width), Err(IngestError::DimensionMismatch { .. })));
        let missing_row = "GRIDFRAME 1\nt=0 validity=1 origin=0,0 size=1x2\n0\n";
        assert!(matches!(parse_grid_frame(missing_row), Err(IngestError::DimensionMismatch { .. })));
        let extra_row = "GRIDFRAME 1\nt=0 validity=1 origin=0,0 size=1x1\n0\n1\n";
        assert!(matches!(parse_grid_frame(extra_row), Err(IngestError::DimensionMismatch { .. })));
        for bad in [
            "",
            "GRIDFRAME 2\nt=0 validity=1 origin=0,0 size=1x1\n0\n",
            "GRIDFRAME 1\nt=0 validity=0 origin=0,0 size=1x1\n0\n",
            "GRIDFRAME 1\nt=0 origin=0,0 size=1x1\n0\n",
            "GRIDFRAME 1\nt=0 validity=1 origin=0,0 size=1x1\n256\n",
            "GRIDFRAME 1\nt=0 validity=1 origin=0;0 size=1x1\n0\n",
        ] {
            assert!(matches!(parse_grid_frame(bad), Err(IngestError::Parse { .. })), "{bad:?}");
        }
    }

    #[test]
    fn split_concatenated_frames() {
        let two = format!("{SMALL}\n{}", SMALL.replace("t=100", "t=110"));
        let chunks = split_frames(&two);
        assert_eq!(chunks.len(), 2);
        assert_eq!(parse_grid_frame(&chunks[1]).unwrap().timestamp(), 110);
    }

    #[test]
    fn quantity_table() {
        let csv = "x,y,t1,t2,kind,value,unit\n1,2,0,10,load_kw,12.5,kW\n1,2,0,10,generation_kw,3,kW\n";
        let inv = parse_quantity_csv(csv).unwrap();
        let clauses = crate::clause::to_clauses(&inv).unwrap();
        assert_eq!(clauses.len(), 2);
        assert_eq!(clauses[0].quantities().next().unwrap().value(), 12.5);
        assert!(parse_quantity_csv("x,y\n1,2\n").is_err());
        assert!(matches!(
            parse_quantity_csv("x,y,t1,t2,kind,value,unit\n1,2,9,3,load_kw,1,kW\n"),
            Err(IngestError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn config_validation() {
        assert!(SourceConfig::new(SourceKind::HttpPull, "http://x", 0, "cloud", 1).validate().is_err());
        assert!(SourceConfig::new(SourceKind::FileReplay, "f", 0, "cloud", 0).validate().is_err());
        assert!(SourceConfig::new(SourceKind::FileReplay, "f", 0, "cloud", 1).validate().is_ok());
    }
}
