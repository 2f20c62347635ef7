//! Reaction documents: the XML display instructions produced when a rule
//! fires, and their delivery to stakeholder endpoints.
//!
//! Document shape (see `docs/reaction-xml.md`):
//!
//! ```text
//! <reaction rule=".." severity=".." firedAt=".." key="rule:firedAt">
//!   <target stakeholder=".."/>...
//!   <display kind="map-overlay" base="..">
//!     <highlight x1 y1 x2 y2 measured threshold metric/>...
//!   </display>
//!   <display kind="url" href=".."/>
//!   <display kind="text-alert" text=".."/>
//! </reaction>
//! ```
//!
//! Output carries no insignificant whitespace and attributes always appear
//! in the order shown.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, warn};

use crate::invariant::{format_decimal, Area, Tick};
use crate::rules::{Metric, Rule, Trigger};
use crate::serialization::escape_xml;

pub const IDEMPOTENCY_HEADER: &str = "X-Gridspace-Idempotency-Key";

/// Advisory placement of a display on a video wall.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WallHint {
    pub wall: String,
    pub x: i64,
    pub y: i64,
    pub w: i64,
    pub h: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum DisplayInstruction {
    /// Map with highlighted boxes. The firing rule's areas are always
    /// highlighted; `highlights` adds fixed extra boxes.
    #[serde(rename = "map-overlay")]
    MapOverlay {
        base_layer: String,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        highlights: Vec<Area>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        wall_hint: Option<WallHint>,
    },
    #[serde(rename = "url")]
    Url {
        url: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        wall_hint: Option<WallHint>,
    },
    #[serde(rename = "text-alert")]
    TextAlert {
        text: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        wall_hint: Option<WallHint>,
    },
}

impl DisplayInstruction {
    pub fn kind(&self) -> &'static str {
        match self {
            DisplayInstruction::MapOverlay { .. } => "map-overlay",
            DisplayInstruction::Url { .. } => "url",
            DisplayInstruction::TextAlert { .. } => "text-alert",
        }
    }

    pub fn wall_hint(&self) -> Option<&WallHint> {
        match self {
            DisplayInstruction::MapOverlay { wall_hint, .. }
            | DisplayInstruction::Url { wall_hint, .. }
            | DisplayInstruction::TextAlert { wall_hint, .. } => wall_hint.as_ref(),
        }
    }
}

/// The displays a rule asks for when it fires.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReactionSpec {
    pub displays: Vec<DisplayInstruction>,
}

impl ReactionSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.displays.is_empty() {
            return Err("at least one display instruction is required".into());
        }
        for d in &self.displays {
            if let Some(h) = d.wall_hint() {
                if h.w <= 0 || h.h <= 0 {
                    return Err(format!("wall hint size must be positive, got {}x{}", h.w, h.h));
                }
            }
            if let DisplayInstruction::Url { url, .. } = d {
                if url.is_empty() {
                    return Err("url display needs a url".into());
                }
            }
        }
        Ok(())
    }
}

/// A rendered reaction with its routing metadata.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct RenderedReaction {
    pub rule_id: String,
    pub fired_at: Tick,
    pub stakeholders: Vec<String>,
    pub xml: String,
}

impl RenderedReaction {
    pub fn idempotency_key(&self) -> String {
        idempotency_key(&self.rule_id, self.fired_at)
    }
}

pub fn idempotency_key(rule_id: &str, fired_at: Tick) -> String {
    format!("{rule_id}:{fired_at}")
}

/// Writes `<name k="v"...` leaving the tag open.
fn open_tag(out: &mut String, name: &str, attrs: &[(&str, String)]) {
    out.push('<');
    out.push_str(name);
    for (k, v) in attrs {
        out.push(' ');
        out.push_str(k);
        out.push_str("=\"");
        out.push_str(&escape_xml(v));
        out.push('"');
    }
}

fn wall_attrs(hint: Option<&WallHint>) -> Vec<(&'static str, String)> {
    hint.map_or_else(Vec::new, |h| {
        vec![
            ("wall", h.wall.clone()),
            ("wallX", h.x.to_string()),
            ("wallY", h.y.to_string()),
            ("wallW", h.w.to_string()),
            ("wallH", h.h.to_string()),
        ]
    })
}

fn box_attrs(area: &Area) -> Vec<(&'static str, String)> {
    vec![
        ("x1", area.x1().to_string()),
        ("y1", area.y1().to_string()),
        ("x2", area.x2().to_string()),
        ("y2", area.y2().to_string()),
    ]
}

fn metric_name(metric: Metric) -> &'static str {
    match metric {
        Metric::CoveredCells => "covered_cells",
        Metric::CoverageFraction => "coverage_fraction",
    }
}

/// Renders the reaction document for a firing of `rule`. Byte-identical
/// for identical inputs.
pub fn render_reaction(trigger: &Trigger, rule: &Rule) -> String {
    let mut out = String::new();
    open_tag(
        &mut out,
        "reaction",
        &[
            ("rule", trigger.rule_id.clone()),
            ("severity", trigger.severity_label.clone()),
            ("firedAt", trigger.fired_at.to_string()),
            ("key", idempotency_key(&trigger.rule_id, trigger.fired_at)),
        ],
    );
    out.push('>');
    for stakeholder in &rule.stakeholders {
        open_tag(&mut out, "target", &[("stakeholder", stakeholder.clone())]);
        out.push_str("/>");
    }
    for display in &rule.reaction.displays {
        let mut attrs = vec![("kind", display.kind().to_string())];
        match display {
            DisplayInstruction::MapOverlay { base_layer, .. } => attrs.push(("base", base_layer.clone())),
            DisplayInstruction::Url { url, .. } => attrs.push(("href", url.clone())),
            DisplayInstruction::TextAlert { text, .. } => attrs.push(("text", text.clone())),
        }
        attrs.extend(wall_attrs(display.wall_hint()));
        open_tag(&mut out, "display", &attrs);
        let DisplayInstruction::MapOverlay { highlights, .. } = display else {
            out.push_str("/>");
            continue;
        };
        out.push('>');
        for m in &trigger.per_area {
            let mut attrs = box_attrs(&m.area);
            attrs.push(("measured", format_decimal(m.measured)));
            attrs.push(("threshold", format_decimal(rule.threshold)));
            attrs.push(("metric", metric_name(rule.metric).to_string()));
            open_tag(&mut out, "highlight", &attrs);
            out.push_str("/>");
        }
        for extra in highlights {
            open_tag(&mut out, "highlight", &box_attrs(extra));
            out.push_str("/>");
        }
        out.push_str("</display>");
    }
    out.push_str("</reaction>");
    out
}

pub fn render(trigger: &Trigger, rule: &Rule) -> RenderedReaction {
    RenderedReaction {
        rule_id: trigger.rule_id.clone(),
        fired_at: trigger.fired_at,
        stakeholders: rule.stakeholders.clone(),
        xml: render_reaction(trigger, rule),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid reaction document: {0}")]
pub struct ReactionSchemaError(pub String);

/// Checks a document against the reaction schema.
pub fn validate_reaction(xml: &str) -> Result<(), ReactionSchemaError> {
    let fail = |m: String| Err(ReactionSchemaError(m));
    let doc = roxmltree::Document::parse(xml).map_err(|e| ReactionSchemaError(e.to_string()))?;
    let root = doc.root_element();
    if root.tag_name().name() != "reaction" {
        return fail(format!("root must be <reaction>, found <{}>", root.tag_name().name()));
    }
    require_attrs(root, &["rule", "severity", "firedAt", "key"], &[])?;
    let fired_at = root.attribute("firedAt").unwrap_or_default();
    if fired_at.parse::<Tick>().is_err() {
        return fail(format!("firedAt is not an integer: {fired_at:?}"));
    }
    let expected_key = format!("{}:{fired_at}", root.attribute("rule").unwrap_or_default());
    if root.attribute("key") != Some(expected_key.as_str()) {
        return fail(format!("key must be {expected_key:?}"));
    }

    let mut targets = 0;
    let mut displays = 0;
    for child in root.children() {
        if child.is_text() && child.text().is_some_and(|t| !t.trim().is_empty()) {
            return fail("unexpected text in <reaction>".into());
        }
        if !child.is_element() {
            continue;
        }
        match child.tag_name().name() {
            "target" if displays == 0 => {
                require_attrs(child, &["stakeholder"], &[])?;
                no_children(child)?;
                targets += 1;
            }
            "target" => return fail("<target> must precede every <display>".into()),
            "display" => {
                validate_display(child)?;
                displays += 1;
            }
            other => return fail(format!("unexpected element <{other}>")),
        }
    }
    if targets == 0 {
        return fail("at least one <target> is required".into());
    }
    if displays == 0 {
        return fail("at least one <display> is required".into());
    }
    Ok(())
}

const WALL_ATTRS: [&str; 5] = ["wall", "wallX", "wallY", "wallW", "wallH"];

fn validate_display(node: roxmltree::Node) -> Result<(), ReactionSchemaError> {
    let fail = |m: String| Err(ReactionSchemaError(m));
    let kind = node.attribute("kind").unwrap_or_default();
    let payload = match kind {
        "map-overlay" => "base",
        "url" => "href",
        "text-alert" => "text",
        other => return fail(format!("unknown display kind {other:?}")),
    };
    require_attrs(node, &["kind", payload], &WALL_ATTRS)?;
    let hint_count = WALL_ATTRS.iter().filter(|a| node.attribute(**a).is_some()).count();
    if hint_count != 0 && hint_count != WALL_ATTRS.len() {
        return fail("wall hint attributes must appear together".into());
    }
    for dim in ["wallW", "wallH"] {
        if let Some(v) = node.attribute(dim) {
            if v.parse::<i64>().map_or(true, |n| n <= 0) {
                return fail(format!("{dim} must be a positive integer"));
            }
        }
    }
    if kind != "map-overlay" {
        return no_children(node);
    }
    for child in node.children().filter(|c| c.is_element()) {
        if child.tag_name().name() != "highlight" {
            return fail(format!("unexpected <{}> in map-overlay", child.tag_name().name()));
        }
        require_attrs(child, &["x1", "y1", "x2", "y2"], &["measured", "threshold", "metric"])?;
        let coords: Vec<Option<i64>> = ["x1", "y1", "x2", "y2"]
            .iter()
            .map(|a| child.attribute(*a).and_then(|v| v.parse().ok()))
            .collect();
        match coords[..] {
            [Some(x1), Some(y1), Some(x2), Some(y2)] if x1 <= x2 && y1 <= y2 => {}
            _ => return fail("highlight corners must be ordered integers".into()),
        }
        no_children(child)?;
    }
    Ok(())
}

fn require_attrs(node: roxmltree::Node, required: &[&str], optional: &[&str]) -> Result<(), ReactionSchemaError> {
    let name = node.tag_name().name();
    for r in required {
        if node.attribute(*r).is_none() {
            return Err(ReactionSchemaError(format!("<{name}> is missing {r:?}")));
        }
    }
    for a in node.attributes() {
        if !required.contains(&a.name()) && !optional.contains(&a.name()) {
            return Err(ReactionSchemaError(format!("<{name}> has unexpected attribute {:?}", a.name())));
        }
    }
    Ok(())
}

fn no_children(node: roxmltree::Node) -> Result<(), ReactionSchemaError> {
    let has_content = node
        .children()
        .any(|c| c.is_element() || c.text().is_some_and(|t| !t.trim().is_empty()));
    if has_content {
        return Err(ReactionSchemaError(format!("<{}> must be empty", node.tag_name().name())));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Routing

/// Posts a document to an endpoint, returning the HTTP status.
pub trait Transport: Sync {
    fn post(&self, endpoint: &str, body: &str, idempotency_key: &str) -> Result<u16, String>;
}

pub struct HttpTransport {
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpTransport { agent }
    }
}

impl Default for HttpTransport {
    fn default() -> Self {
        Self::new(Duration::from_secs(10))
    }
}

impl Transport for HttpTransport {
    fn post(&self, endpoint: &str, body: &str, idempotency_key: &str) -> Result<u16, String> {
        self.agent
            .post(endpoint)
            .header("Content-Type", "application/xml")
            .header(IDEMPOTENCY_HEADER, idempotency_key)
            .send(body)
            .map(|r| r.status().as_u16())
            .map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeliveryStatus {
    Delivered { attempts: u32 },
    Unmapped,
    Failed { attempts: u32 },
}

impl std::fmt::Display for DeliveryStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DeliveryStatus::Delivered { .. } => f.write_str("delivered"),
            DeliveryStatus::Unmapped => f.write_str("unmapped"),
            DeliveryStatus::Failed { attempts } => write!(f, "failed({attempts})"),
        }
    }
}

impl Serialize for DeliveryStatus {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct DeliveryEntry {
    pub stakeholder: String,
    pub rule_id: String,
    pub fired_at: Tick,
    pub endpoint: Option<String>,
    pub status: DeliveryStatus,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DeliveryReport {
    /// Sorted by stakeholder, then rule id and firing tick.
    pub entries: Vec<DeliveryEntry>,
}

impl DeliveryReport {
    pub fn all_delivered(&self) -> bool {
        self.entries
            .iter()
            .all(|e| matches!(e.status, DeliveryStatus::Delivered { .. }))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RouteOptions {
    pub max_in_flight: usize,
    pub attempts: u32,
    pub retry_delay: Duration,
}

impl Default for RouteOptions {
    fn default() -> Self {
        RouteOptions {
            max_in_flight: 8,
            attempts: 3,
            retry_delay: Duration::from_millis(100),
        }
    }
}

/// Delivers every document to every stakeholder it names. Stakeholders
/// missing from `registry` get an `unmapped` entry; anything other than a
/// 2xx answer is retried up to `attempts` times in total.
pub fn route_reactions(
    docs: &[RenderedReaction],
    registry: &BTreeMap<String, String>,
    transport: &dyn Transport,
    opts: RouteOptions,
) -> DeliveryReport {
    let mut entries = Vec::new();
    let mut jobs = Vec::new();
    for doc in docs {
        for stakeholder in &doc.stakeholders {
            match registry.get(stakeholder) {
                Some(endpoint) => jobs.push((doc, stakeholder, endpoint)),
                None => {
                    warn!(%stakeholder, rule = %doc.rule_id, "no endpoint registered");
                    entries.push(DeliveryEntry {
                        stakeholder: stakeholder.clone(),
                        rule_id: doc.rule_id.clone(),
                        fired_at: doc.fired_at,
                        endpoint: None,
                        status: DeliveryStatus::Unmapped,
                    });
                }
            }
        }
    }

    let next = AtomicUsize::new(0);
    let results = Mutex::new(Vec::with_capacity(jobs.len()));
    let workers = opts.max_in_flight.max(1).min(jobs.len());
    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((doc, stakeholder, endpoint)) = jobs.get(i) else { break };
                let status = deliver(doc, endpoint, transport, &opts);
                results.lock().expect("results lock").push(DeliveryEntry {
                    stakeholder: (*stakeholder).clone(),
                    rule_id: doc.rule_id.clone(),
                    fired_at: doc.fired_at,
                    endpoint: Some((*endpoint).clone()),
                    status,
                });
            });
        }
    });
    entries.extend(results.into_inner().expect("results lock"));
    entries.sort_by(|a, b| {
        (&a.stakeholder, &a.rule_id, a.fired_at).cmp(&(&b.stakeholder, &b.rule_id, b.fired_at))
    });
    DeliveryReport { entries }
}

fn deliver(doc: &RenderedReaction, endpoint: &str, transport: &dyn Transport, opts: &RouteOptions) -> DeliveryStatus {
    let key = doc.idempotency_key();
    let attempts = opts.attempts.max(1);
    for attempt in 1..=attempts {
        match transport.post(endpoint, &doc.xml, &key) {
            Ok(status) if (200..300).contains(&status) => {
                debug!(%endpoint, %key, attempt, "reaction delivered");
                return DeliveryStatus::Delivered { attempts: attempt };
            }
            Ok(status) => warn!(%endpoint, %key, attempt, status, "delivery rejected"),
            Err(e) => warn!(%endpoint, %key, attempt, error = %e, "delivery failed"),
        }
        if attempt < attempts && !opts.retry_delay.is_zero() {
            thread::sleep(opts.retry_delay);
        }
    }
    DeliveryStatus::Failed { attempts }
}
