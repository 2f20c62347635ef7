//! The running system: one writer owning the store, the rule set and the
//! FDIR state, with readers served from published snapshots.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};
use std::thread;
use std::time::Duration;

use gridspace_core::analysis::{weak_link_heatmap, Aggregate, HeatMap};
use gridspace_core::fdir::{run_scenario, Scenario, SimulationReport, Topology};
use gridspace_core::ingestion::{parse_quantity_csv, run_source, GridFrame, SourceConfig, SourceHandle, SourceKind};
use gridspace_core::reaction::{render, route_reactions, HttpTransport, RouteOptions, Transport};
use gridspace_core::reasoning::TimeWindow;
use gridspace_core::serialization::{parse_json, parse_xml};
use gridspace_core::rules::{
    evaluate_rule_on_clauses, read_rules_dir, sort_triggers, Rule, RuleError, RuleMutation, RuleSet, Trigger,
};
use gridspace_core::{Area, Invariant, Tick};
use serde::Serialize;
use thiserror::Error;
use tokio::sync::watch;
use tracing::{info, warn};

use crate::alerts::{AlertLog, AlertRecord};
use crate::config::ServiceConfig;
use crate::store::{ModelStore, StoreConfig, StoreSnapshot};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Unavailable(String),
}

impl From<RuleError> for ServiceError {
    fn from(e: RuleError) -> Self {
        match e {
            RuleError::Parse { .. } => ServiceError::Validation(e.to_string()),
            RuleError::DuplicateId(_) => ServiceError::Conflict(e.to_string()),
            RuleError::UnknownId(_) => ServiceError::NotFound(e.to_string()),
            RuleError::Io { .. } => ServiceError::Unavailable(e.to_string()),
        }
    }
}

/// What readers see: a store revision and the rule set current with it.
#[derive(Debug, Clone)]
pub struct Published {
    pub store: Arc<StoreSnapshot>,
    pub rules: RuleSet,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "camelCase")]
pub enum FrameOutcome {
    #[serde(rename_all = "camelCase")]
    Accepted {
        revision: u64,
        triggers: Vec<Trigger>,
        /// Log sequence numbers of the alerts written.
        alerts: Vec<u64>,
    },
    #[serde(rename_all = "camelCase")]
    Duplicate { revision: u64 },
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct FdirView {
    pub topology: Topology,
    pub energized_loads: Vec<String>,
    pub served_load_kw: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub last_report: Option<SimulationReport>,
}

struct FdirState {
    topology: Topology,
    last_report: Option<SimulationReport>,
}

struct Writer {
    store: ModelStore,
    rules: RuleSet,
    fdir: Option<FdirState>,
}

/// Everything needed to build a [`Service`] without a config file.
pub struct ServiceParts {
    pub store: StoreConfig,
    pub alert_capacity: usize,
    pub rules: RuleSet,
    /// Where rule changes are persisted; `None` keeps them in memory.
    pub rules_dir: Option<PathBuf>,
    pub topology: Option<Topology>,
    /// Sources whose settings apply to frames posted over the API. The
    /// first one is the default.
    pub frame_sources: Vec<SourceConfig>,
    pub delivery: BTreeMap<String, String>,
    pub transport: Arc<dyn Transport + Send>,
    pub route: RouteOptions,
}

impl Default for ServiceParts {
    fn default() -> Self {
        ServiceParts {
            store: StoreConfig::default(),
            alert_capacity: crate::alerts::DEFAULT_ALERT_CAPACITY,
            rules: RuleSet::new(),
            rules_dir: None,
            topology: None,
            frame_sources: Vec::new(),
            delivery: BTreeMap::new(),
            transport: Arc::new(HttpTransport::default()),
            route: RouteOptions::default(),
        }
    }
}

pub struct Service {
    writer: Mutex<Writer>,
    published: RwLock<Arc<Published>>,
    alerts: RwLock<AlertLog>,
    alert_seq: watch::Sender<u64>,
    fdir_view: RwLock<Option<Arc<FdirView>>>,
    rules_dir: Option<PathBuf>,
    frame_sources: Vec<SourceConfig>,
    delivery: BTreeMap<String, String>,
    transport: Arc<dyn Transport + Send>,
    route: RouteOptions,
}

fn unavailable<T>(_: T) -> ServiceError {
    ServiceError::Unavailable("store unavailable".into())
}

/// Evaluates every rule against one store snapshot at `now`, using the
/// store index to narrow the clauses each rule looks at.
pub fn evaluate_snapshot(store: &StoreSnapshot, rules: &RuleSet, now: Tick) -> Vec<Trigger> {
    let mut triggers: Vec<Trigger> = rules
        .iter()
        .filter_map(|rule| {
            let window = rule.resolve_window(now)?;
            let candidates = store.candidates(&window, &rule.areas);
            evaluate_rule_on_clauses(rule, candidates.iter().map(|c| &c.clause), now)
        })
        .collect();
    sort_triggers(&mut triggers);
    triggers
}

fn fdir_view(state: &FdirState) -> FdirView {
    let energized: Vec<String> = state.topology.energized_loads().into_iter().collect();
    FdirView {
        topology: state.topology.clone(),
        served_load_kw: energized.iter().map(|l| state.topology.demand(l)).sum(),
        energized_loads: energized,
        last_report: state.last_report.clone(),
    }
}

/// Rule ids are used as file names.
fn check_rule_id(id: &str) -> Result<(), ServiceError> {
    let ok = !id.is_empty()
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(ServiceError::Validation(format!(
            "rule id {id:?} must be non-empty ASCII letters, digits, '-', '_' or '.'"
        )))
    }
}

fn write_rules_file(path: &Path, rules: &[Rule]) -> Result<(), ServiceError> {
    let text = match rules {
        [one] => serde_json::to_string_pretty(one),
        many => serde_json::to_string_pretty(many),
    }
    .expect("rules serialize");
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, text + "\n")
        .and_then(|_| std::fs::rename(&tmp, path))
        .map_err(|e| ServiceError::Unavailable(format!("{}: {e}", path.display())))
}

/// Reads a model file, choosing the format by extension.
pub fn load_model(path: &Path) -> Result<Invariant, ServiceError> {
    let text = std::fs::read_to_string(path).map_err(|e| ServiceError::Unavailable(format!("{}: {e}", path.display())))?;
    let invalid = |e: String| ServiceError::Validation(format!("{}: {e}", path.display()));
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => parse_quantity_csv(&text).map_err(|e| invalid(e.to_string())),
        Some("xml") => parse_xml(&text).map_err(|e| invalid(e.to_string())),
        _ => parse_json(&text).map_err(|e| invalid(e.to_string())),
    }
}

impl Service {
    pub fn new(parts: ServiceParts) -> Self {
        let store = ModelStore::new(parts.store);
        let published = Published {
            store: store.snapshot(),
            rules: parts.rules.clone(),
        };
        let fdir = parts.topology.map(|topology| FdirState {
            topology,
            last_report: None,
        });
        let view = fdir.as_ref().map(|s| Arc::new(fdir_view(s)));
        Service {
            writer: Mutex::new(Writer {
                store,
                rules: parts.rules,
                fdir,
            }),
            published: RwLock::new(Arc::new(published)),
            alerts: RwLock::new(AlertLog::new(parts.alert_capacity)),
            alert_seq: watch::Sender::new(0),
            fdir_view: RwLock::new(view),
            rules_dir: parts.rules_dir,
            frame_sources: parts.frame_sources,
            delivery: parts.delivery,
            transport: parts.transport,
            route: parts.route,
        }
    }

    /// Builds the service from a config file's settings, loading the rule
    /// directory (created when missing) and the FDIR topology.
    pub fn from_config(cfg: &ServiceConfig) -> Result<Self, ServiceError> {
        std::fs::create_dir_all(&cfg.rules_dir)
            .map_err(|e| ServiceError::Unavailable(format!("{}: {e}", cfg.rules_dir.display())))?;
        let rules = gridspace_core::rules::load_rules_dir(&cfg.rules_dir)?;
        let topology = match &cfg.topology {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| ServiceError::Unavailable(format!("{}: {e}", path.display())))?;
                Some(Topology::from_json(&text).map_err(|e| ServiceError::Validation(e.to_string()))?)
            }
            None => None,
        };
        info!(rules = rules.len(), dir = %cfg.rules_dir.display(), "rules loaded");
        let service = Service::new(ServiceParts {
            store: cfg.store_config(),
            alert_capacity: cfg.alert_capacity,
            rules,
            rules_dir: Some(cfg.rules_dir.clone()),
            topology,
            frame_sources: cfg.sources.clone(),
            delivery: cfg.delivery.clone(),
            transport: Arc::new(HttpTransport::new(Duration::from_millis(cfg.delivery_timeout_ms))),
            route: RouteOptions::default(),
        });
        for path in &cfg.models {
            let model = load_model(path)?;
            service.insert_model(&model)?;
            info!(path = %path.display(), "model loaded");
        }
        Ok(service)
    }

    fn lock(&self) -> Result<MutexGuard<'_, Writer>, ServiceError> {
        self.writer.lock().map_err(unavailable)
    }

    fn publish(&self, writer: &Writer) -> Result<Arc<Published>, ServiceError> {
        let published = Arc::new(Published {
            store: writer.store.snapshot(),
            rules: writer.rules.clone(),
        });
        *self.published.write().map_err(unavailable)? = published.clone();
        Ok(published)
    }

    pub fn snapshot(&self) -> Result<Arc<Published>, ServiceError> {
        Ok(self.published.read().map_err(unavailable)?.clone())
    }

    /// Settings for frames arriving over the API: the source with the
    /// given owner, else the first configured source, else cloud frames
    /// counting every non-zero cell.
    pub fn frame_source(&self, owner: Option<&str>) -> Result<SourceConfig, ServiceError> {
        match owner {
            Some(o) => self
                .frame_sources
                .iter()
                .find(|s| s.owner_tag == o)
                .cloned()
                .map_or_else(
                    || Ok(SourceConfig::new(SourceKind::FileReplay, "api", 0, o, 1)),
                    Ok,
                )
                .and_then(|s| {
                    s.validate().map_err(|e| ServiceError::Validation(e.to_string()))?;
                    Ok(s)
                }),
            None => Ok(self
                .frame_sources
                .first()
                .cloned()
                .unwrap_or_else(|| SourceConfig::new(SourceKind::FileReplay, "api", 0, "cloud", 1))),
        }
    }

    /// Inserts a frame, evaluates every rule on the resulting snapshot at
    /// the frame's timestamp, and renders, routes and logs each firing.
    pub fn handle_frame(&self, frame: &GridFrame, source: &SourceConfig) -> Result<FrameOutcome, ServiceError> {
        let mut writer = self.lock()?;
        let Some(revision) = writer.store.insert_frame(frame, source) else {
            return Ok(FrameOutcome::Duplicate {
                revision: writer.store.revision(),
            });
        };
        let published = self.publish(&writer)?;
        let now = frame.timestamp();
        let triggers = evaluate_snapshot(&published.store, &published.rules, now);
        let mut alerts = Vec::new();
        for trigger in &triggers {
            if !self.alerts.read().map_err(unavailable)?.accepts(&trigger.rule_id, now) {
                warn!(rule = %trigger.rule_id, fired_at = now, "firing not after the last logged one, not logged");
                continue;
            }
            let rule = published.rules.get(&trigger.rule_id).expect("trigger names a live rule");
            let doc = render(trigger, rule);
            let report = route_reactions(std::slice::from_ref(&doc), &self.delivery, &*self.transport, self.route);
            let seq = self.alerts.write().map_err(unavailable)?.append(trigger.clone(), doc, report);
            alerts.extend(seq);
        }
        if let Some(&last) = alerts.last() {
            self.alert_seq.send_replace(last);
        }
        drop(writer);
        Ok(FrameOutcome::Accepted {
            revision,
            triggers,
            alerts,
        })
    }

    /// Adds a static model such as a load and generation table.
    pub fn insert_model(&self, model: &Invariant) -> Result<u64, ServiceError> {
        let mut writer = self.lock()?;
        let revision = writer
            .store
            .insert_model(model)
            .map_err(|e| ServiceError::Validation(e.to_string()))?;
        self.publish(&writer)?;
        Ok(revision)
    }

    pub fn rules(&self) -> Result<RuleSet, ServiceError> {
        Ok(self.snapshot()?.rules.clone())
    }

    /// Files of the rules directory and the rules each holds.
    fn rule_files(&self) -> Result<Vec<(PathBuf, Vec<Rule>)>, ServiceError> {
        let Some(dir) = &self.rules_dir else { return Ok(Vec::new()) };
        Ok(read_rules_dir(dir)?
            .into_iter()
            .map(|(p, r)| (PathBuf::from(p), r))
            .collect())
    }

    /// Creates or replaces a rule. Returns whether it was created.
    pub fn put_rule(&self, id: &str, rule: Rule) -> Result<bool, ServiceError> {
        if rule.id != id {
            return Err(ServiceError::Validation(format!("body id {:?} does not match path id {id:?}", rule.id)));
        }
        check_rule_id(id)?;
        rule.validate()?;
        let mut writer = self.lock()?;
        let created = writer.rules.get(id).is_none();
        if let Some(dir) = &self.rules_dir {
            let files = self.rule_files()?;
            match files.iter().find(|(_, rules)| rules.iter().any(|r| r.id == id)) {
                Some((path, rules)) => {
                    let updated: Vec<Rule> = rules
                        .iter()
                        .map(|r| if r.id == id { rule.clone() } else { r.clone() })
                        .collect();
                    write_rules_file(path, &updated)?;
                }
                None => write_rules_file(&dir.join(format!("{id}.json")), std::slice::from_ref(&rule))?,
            }
        }
        let mutation = if created {
            RuleMutation::Add(rule)
        } else {
            RuleMutation::Replace(rule)
        };
        writer.rules = writer.rules.apply(mutation)?;
        self.publish(&writer)?;
        Ok(created)
    }

    pub fn delete_rule(&self, id: &str) -> Result<(), ServiceError> {
        let mut writer = self.lock()?;
        if writer.rules.get(id).is_none() {
            return Err(ServiceError::NotFound(format!("unknown rule id {id:?}")));
        }
        for (path, rules) in self.rule_files()? {
            if !rules.iter().any(|r| r.id == id) {
                continue;
            }
            let rest: Vec<Rule> = rules.into_iter().filter(|r| r.id != id).collect();
            if rest.is_empty() {
                std::fs::remove_file(&path)
                    .map_err(|e| ServiceError::Unavailable(format!("{}: {e}", path.display())))?;
            } else {
                write_rules_file(&path, &rest)?;
            }
        }
        writer.rules = writer.rules.apply(RuleMutation::Remove(id.to_string()))?;
        self.publish(&writer)?;
        Ok(())
    }

    /// Brings the rule set in line with the rules directory. An unreadable
    /// or invalid directory leaves the current set in place.
    pub fn reload_rules(&self) -> Result<usize, ServiceError> {
        let Some(dir) = &self.rules_dir else { return Ok(0) };
        let mut writer = self.lock()?;
        let mut target = BTreeMap::new();
        for (_, rules) in read_rules_dir(dir)? {
            for rule in rules {
                if target.contains_key(&rule.id) {
                    return Err(RuleError::DuplicateId(rule.id).into());
                }
                target.insert(rule.id.clone(), rule);
            }
        }
        let mutations = writer.rules.diff(&target);
        let count = mutations.len();
        if count == 0 {
            return Ok(0);
        }
        let mut next = writer.rules.clone();
        for mutation in mutations {
            next = next.apply(mutation)?;
        }
        writer.rules = next;
        self.publish(&writer)?;
        info!(changes = count, revision = writer.rules.revision(), "rules reloaded");
        Ok(count)
    }

    pub fn alerts_since(&self, since: Tick) -> Result<Vec<Arc<AlertRecord>>, ServiceError> {
        Ok(self.alerts.read().map_err(unavailable)?.since(since))
    }

    pub fn alerts_after(&self, seq: u64) -> Result<Vec<Arc<AlertRecord>>, ServiceError> {
        Ok(self.alerts.read().map_err(unavailable)?.after(seq))
    }

    pub fn last_alert_seq(&self) -> u64 {
        *self.alert_seq.borrow()
    }

    /// Receiver that changes whenever alerts are logged.
    pub fn subscribe_alerts(&self) -> watch::Receiver<u64> {
        self.alert_seq.subscribe()
    }

    pub fn heatmap(&self, region: &Area, window: &TimeWindow, cell: u32, aggregate: Aggregate) -> Result<HeatMap, ServiceError> {
        let model = self.snapshot()?.store.to_invariant();
        weak_link_heatmap(&model, region, window, cell, aggregate).map_err(|e| ServiceError::Validation(e.to_string()))
    }

    pub fn fdir_state(&self) -> Result<Arc<FdirView>, ServiceError> {
        self.fdir_view
            .read()
            .map_err(unavailable)?
            .clone()
            .ok_or_else(|| ServiceError::Unavailable("no feeder topology configured".into()))
    }

    /// Runs a scenario against the current feeder state and keeps the
    /// resulting topology.
    pub fn run_fdir_scenario(&self, scenario: &Scenario) -> Result<SimulationReport, ServiceError> {
        let mut writer = self.lock()?;
        let state = writer
            .fdir
            .as_mut()
            .ok_or_else(|| ServiceError::Unavailable("no feeder topology configured".into()))?;
        let report = run_scenario(&state.topology, scenario).map_err(|e| ServiceError::Validation(e.to_string()))?;
        state.topology = report.final_topology.clone();
        state.last_report = Some(report.clone());
        *self.fdir_view.write().map_err(unavailable)? = Some(Arc::new(fdir_view(state)));
        Ok(report)
    }

    /// Starts one ingestion thread per source, each feeding `handle_frame`.
    pub fn start_sources(self: &Arc<Self>, sources: &[SourceConfig]) -> Result<Vec<SourceHandle>, ServiceError> {
        sources
            .iter()
            .map(|cfg| {
                let (svc, source) = (self.clone(), cfg.clone());
                run_source(cfg.clone(), move |frame: GridFrame| {
                    if let Err(e) = svc.handle_frame(&frame, &source) {
                        warn!(error = %e, t = frame.timestamp(), "frame dropped");
                    }
                })
                .map_err(|e| ServiceError::Validation(e.to_string()))
            })
            .collect()
    }

    /// Polls the rules directory until `stop` is set.
    pub fn spawn_rules_watcher(self: &Arc<Self>, every: Duration, stop: Arc<AtomicBool>) -> thread::JoinHandle<()> {
        let svc = self.clone();
        thread::spawn(move || {
            while !stop.load(Ordering::Relaxed) {
                if let Err(e) = svc.reload_rules() {
                    warn!(error = %e, "rules directory not applied, keeping current rules");
                }
                let mut slept = Duration::ZERO;
                while slept < every && !stop.load(Ordering::Relaxed) {
                    let step = (every - slept).min(Duration::from_millis(50));
                    thread::sleep(step);
                    slept += step;
                }
            }
        })
    }
}
