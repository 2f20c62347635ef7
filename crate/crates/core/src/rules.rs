//! Threshold rules over owned coverage, evaluated against a model snapshot.
//!
//! A rule fires at `now` when, for every one of its areas, the largest
//! coverage seen at any sampled tick of its window reaches the threshold.
//! Coverage at a tick is the largest cell count of a single clause owned by
//! the rule's owner, clipped to the area, so overlapping frames are not
//! double counted.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clause::{partition_clauses, Clause};
use crate::invariant::{Area, Interval, Invariant, LogicError, Tick};
use crate::reaction::ReactionSpec;

/// Severity used for cloud rules that do not set one.
pub const CLOUD_SEVERITY: &str = "critical solar energy level";
/// Severity used for other rules that do not set one.
pub const DEFAULT_SEVERITY: &str = "alert";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RuleError {
    #[error("rule {}: {reason}", id.as_deref().unwrap_or("<unknown>"))]
    Parse { id: Option<String>, reason: String },
    #[error("duplicate rule id {0:?}")]
    DuplicateId(String),
    #[error("unknown rule id {0:?}")]
    UnknownId(String),
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RuleWindow {
    Absolute { t1: Tick, t2: Tick },
    Sliding { sliding: Tick },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    CoveredCells,
    CoverageFraction,
}

/// How per-area results combine. Only the conjunction over all areas is
/// supported.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum AreaConjunction {
    #[default]
    #[serde(rename = "all-areas")]
    AllAreas,
}

fn default_step() -> Tick {
    1
}

fn is_default_step(step: &Tick) -> bool {
    *step == 1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rule {
    pub id: String,
    /// Lower is more urgent.
    #[serde(default)]
    pub priority: i64,
    pub window: RuleWindow,
    pub areas: Vec<Area>,
    pub owner: String,
    pub metric: Metric,
    pub threshold: f64,
    #[serde(default, skip_serializing_if = "is_all_areas")]
    pub conjunction: AreaConjunction,
    #[serde(default = "default_step", skip_serializing_if = "is_default_step")]
    pub eval_step: Tick,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub severity: Option<String>,
    pub stakeholders: Vec<String>,
    pub reaction: ReactionSpec,
}

fn is_all_areas(c: &AreaConjunction) -> bool {
    *c == AreaConjunction::AllAreas
}

impl Rule {
    pub fn validate(&self) -> Result<(), RuleError> {
        let fail = |reason: String| {
            Err(RuleError::Parse {
                id: Some(self.id.clone()),
                reason,
            })
        };
        if self.id.trim().is_empty() {
            return Err(RuleError::Parse {
                id: None,
                reason: "id must not be empty".into(),
            });
        }
        if self.areas.is_empty() {
            return fail("at least one area is required".into());
        }
        if !self.threshold.is_finite() || self.threshold < 0.0 {
            return fail(format!("threshold must be a non-negative number, got {}", self.threshold));
        }
        if self.metric == Metric::CoverageFraction && self.threshold > 1.0 {
            return fail(format!("coverage_fraction threshold must be at most 1, got {}", self.threshold));
        }
        if self.eval_step <= 0 {
            return fail(format!("eval_step must be positive, got {}", self.eval_step));
        }
        match self.window {
            RuleWindow::Absolute { t1, t2 } if t1 > t2 => return fail(format!("window t1={t1} > t2={t2}")),
            RuleWindow::Sliding { sliding } if sliding < 0 => {
                return fail(format!("sliding window must not be negative, got {sliding}"))
            }
            _ => {}
        }
        if self.owner.is_empty() {
            return fail("owner must not be empty".into());
        }
        if self.stakeholders.is_empty() || self.stakeholders.iter().any(|s| s.trim().is_empty()) {
            return fail("at least one non-empty stakeholder is required".into());
        }
        self.reaction.validate().or_else(|reason| fail(format!("reaction: {reason}")))
    }

    /// The configured severity, or the default for the rule's owner.
    pub fn severity_label(&self) -> &str {
        match &self.severity {
            Some(s) => s,
            None if self.owner == "cloud" => CLOUD_SEVERITY,
            None => DEFAULT_SEVERITY,
        }
    }

    /// The tick range the rule looks at when evaluated at `now`; `None` when
    /// it is empty. Absolute windows stop at `now`.
    pub fn resolve_window(&self, now: Tick) -> Option<Interval> {
        match self.window {
            RuleWindow::Absolute { t1, t2 } => Interval::new(t1, t2.min(now)).ok(),
            RuleWindow::Sliding { sliding } => Interval::new(now.saturating_sub(sliding), now).ok(),
        }
    }
}

/// Parses and validates one rule document.
pub fn parse_rule(text: &str) -> Result<Rule, RuleError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| RuleError::Parse {
        id: None,
        reason: e.to_string(),
    })?;
    rule_from_value(value)
}

fn rule_from_value(value: serde_json::Value) -> Result<Rule, RuleError> {
    let id = value.get("id").and_then(|v| v.as_str()).map(str::to_string);
    let rule: Rule = serde_json::from_value(value).map_err(|e| RuleError::Parse {
        id: id.clone(),
        reason: e.to_string(),
    })?;
    rule.validate()?;
    Ok(rule)
}

/// Parses a document holding either one rule object or an array of rules.
pub fn parse_rules_document(text: &str) -> Result<Vec<Rule>, RuleError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| RuleError::Parse {
        id: None,
        reason: e.to_string(),
    })?;
    match value {
        serde_json::Value::Array(items) => items.into_iter().map(rule_from_value).collect(),
        single => Ok(vec![rule_from_value(single)?]),
    }
}

/// Reads every `*.json` file of `dir` in file-name order.
pub fn read_rules_dir(dir: &Path) -> Result<Vec<(String, Vec<Rule>)>, RuleError> {
    let io = |e: std::io::Error| RuleError::Io {
        path: dir.display().to_string(),
        reason: e.to_string(),
    };
    let mut files: Vec<_> = fs::read_dir(dir)
        .map_err(io)?
        .collect::<Result<Vec<_>, _>>()
        .map_err(io)?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|path| {
            let text = fs::read_to_string(&path).map_err(|e| RuleError::Io {
                path: path.display().to_string(),
                reason: e.to_string(),
            })?;
            let rules = parse_rules_document(&text).map_err(|e| match e {
                RuleError::Parse { id, reason } => RuleError::Parse {
                    id,
                    reason: format!("{}: {reason}", path.display()),
                },
                other => other,
            })?;
            Ok((path.display().to_string(), rules))
        })
        .collect()
}

/// Loads a rule directory into a fresh set; one revision per rule.
pub fn load_rules_dir(dir: &Path) -> Result<RuleSet, RuleError> {
    let rules = read_rules_dir(dir)?.into_iter().flat_map(|(_, r)| r).collect();
    RuleSet::from_rules(rules)
}

#[derive(Debug, Clone, PartialEq)]
pub enum RuleMutation {
    Add(Rule),
    Replace(Rule),
    Remove(String),
}

/// Immutable, id-keyed rule collection. Mutations return a new set with the
/// revision bumped by one; holders of the old set keep seeing it unchanged.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RuleSet {
    rules: Arc<BTreeMap<String, Rule>>,
    revision: u64,
}

impl RuleSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_rules(rules: Vec<Rule>) -> Result<Self, RuleError> {
        rules
            .into_iter()
            .try_fold(RuleSet::new(), |set, rule| set.apply(RuleMutation::Add(rule)))
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Rule> {
        self.rules.get(id)
    }

    /// Rules in id order.
    pub fn iter(&self) -> impl Iterator<Item = &Rule> {
        self.rules.values()
    }

    pub fn apply(&self, mutation: RuleMutation) -> Result<RuleSet, RuleError> {
        let mut rules = (*self.rules).clone();
        match mutation {
            RuleMutation::Add(rule) => {
                rule.validate()?;
                if rules.contains_key(&rule.id) {
                    return Err(RuleError::DuplicateId(rule.id));
                }
                rules.insert(rule.id.clone(), rule);
            }
            RuleMutation::Replace(rule) => {
                rule.validate()?;
                if !rules.contains_key(&rule.id) {
                    return Err(RuleError::UnknownId(rule.id));
                }
                rules.insert(rule.id.clone(), rule);
            }
            RuleMutation::Remove(id) => {
                if rules.remove(&id).is_none() {
                    return Err(RuleError::UnknownId(id));
                }
            }
        }
        Ok(RuleSet {
            rules: Arc::new(rules),
            revision: self.revision + 1,
        })
    }

    /// Mutations turning this set into `target`: removals first, then
    /// replacements and additions, each in id order.
    pub fn diff(&self, target: &BTreeMap<String, Rule>) -> Vec<RuleMutation> {
        let mut out: Vec<RuleMutation> = self
            .rules
            .keys()
            .filter(|id| !target.contains_key(*id))
            .map(|id| RuleMutation::Remove(id.clone()))
            .collect();
        for (id, rule) in target {
            match self.rules.get(id) {
                None => out.push(RuleMutation::Add(rule.clone())),
                Some(old) if old != rule => out.push(RuleMutation::Replace(rule.clone())),
                Some(_) => {}
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaMeasurement {
    pub area: Area,
    pub measured: f64,
}

/// A rule firing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Trigger {
    pub rule_id: String,
    pub priority: i64,
    pub fired_at: Tick,
    pub per_area: Vec<AreaMeasurement>,
    pub severity_label: String,
}

/// Evaluates `rule` against `model` at `now`.
///
/// Fails with `UnsupportedFragment` when a top-level conjunct outside the
/// monitoring fragment mentions the rule's owner; other such conjuncts
/// cannot contribute coverage and are ignored.
pub fn evaluate_rule(rule: &Rule, model: &Invariant, now: Tick) -> Result<Option<Trigger>, LogicError> {
    let (clauses, rejected) = partition_clauses(model);
    check_relevant(rule, &rejected)?;
    Ok(evaluate_rule_on_clauses(rule, &clauses, now))
}

fn check_relevant(rule: &Rule, rejected: &[crate::clause::Rejected]) -> Result<(), LogicError> {
    match rejected.iter().find(|r| mentions_owner(&r.part, &rule.owner)) {
        Some(r) => Err(r.error.clone()),
        None => Ok(()),
    }
}

fn mentions_owner(inv: &Invariant, owner: &str) -> bool {
    match inv {
        Invariant::Owner { tag } => tag == owner,
        Invariant::And { left, right } | Invariant::Or { left, right } => {
            mentions_owner(left, owner) || mentions_owner(right, owner)
        }
        Invariant::Implies { guard, body } => mentions_owner(guard, owner) || mentions_owner(body, owner),
        Invariant::Not { inner } => mentions_owner(inner, owner),
        Invariant::BigAnd { items } => items.iter().any(|i| mentions_owner(i, owner)),
        _ => false,
    }
}

/// Evaluation over clauses that are already in canonical form.
pub fn evaluate_rule_on_clauses<'a, I>(rule: &Rule, clauses: I, now: Tick) -> Option<Trigger>
where
    I: IntoIterator<Item = &'a Clause>,
{
    let window = rule.resolve_window(now)?;
    let mut best = vec![0u64; rule.areas.len()];
    for clause in clauses {
        if !owned_after_time_filter(clause, &rule.owner) {
            continue;
        }
        let Some(span) = clause.active_span() else { continue };
        if !sampled_tick_in(&window, rule.eval_step, &span) {
            continue;
        }
        for (area, best) in rule.areas.iter().zip(best.iter_mut()) {
            *best = (*best).max(body_cells_in(clause, area));
        }
    }
    let per_area: Vec<AreaMeasurement> = rule
        .areas
        .iter()
        .zip(best)
        .map(|(area, cells)| AreaMeasurement {
            area: *area,
            measured: match rule.metric {
                Metric::CoveredCells => cells as f64,
                Metric::CoverageFraction => cells as f64 / area.cell_count() as f64,
            },
        })
        .collect();
    per_area.iter().all(|m| m.measured >= rule.threshold).then(|| Trigger {
        rule_id: rule.id.clone(),
        priority: rule.priority,
        fired_at: now,
        per_area,
        severity_label: rule.severity_label().to_string(),
    })
}

/// Whether the clause, once its time atoms are dropped, still has a guard
/// naming `owner`. Clauses whose guard was purely temporal become bare
/// atoms and own nothing.
fn owned_after_time_filter(clause: &Clause, owner: &str) -> bool {
    clause
        .guard
        .iter()
        .flatten()
        .any(|a| matches!(a, Invariant::Owner { tag } if tag == owner))
}

/// Whether some tick `window.start + k * step` lies in `span`.
fn sampled_tick_in(window: &Interval, step: Tick, span: &Interval) -> bool {
    let Some(hit) = window.intersect(span) else { return false };
    let (start, lo, hi, step) = (window.start() as i128, hit.start() as i128, hit.end() as i128, step as i128);
    let first = start + (lo - start + step - 1).div_euclid(step) * step;
    first <= hi
}

/// Cells of the clause body inside `area`: one per point, the clipped cell
/// count per box. Solids and non-geometric atoms add nothing.
fn body_cells_in(clause: &Clause, area: &Area) -> u64 {
    clause.body.iter().fold(0u64, |acc, atom| {
        let cells = match atom {
            Invariant::OccupyPoint(p) => u64::from(area.contains(*p)),
            Invariant::OccupyBox(b) => b
                .intersect(area)
                .map_or(0, |i| u64::try_from(i.cell_count()).unwrap_or(u64::MAX)),
            _ => 0,
        };
        acc.saturating_add(cells)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleFailure {
    pub rule_id: String,
    pub error: LogicError,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Evaluation {
    /// Sorted by `(priority, rule id)`.
    pub triggers: Vec<Trigger>,
    pub errors: Vec<RuleFailure>,
}

/// Evaluates every rule; a failing rule is reported without stopping the
/// others.
pub fn evaluate_all(rules: &RuleSet, model: &Invariant, now: Tick) -> Evaluation {
    let (clauses, rejected) = partition_clauses(model);
    let mut out = Evaluation::default();
    for rule in rules.iter() {
        match check_relevant(rule, &rejected) {
            Ok(()) => out.triggers.extend(evaluate_rule_on_clauses(rule, &clauses, now)),
            Err(error) => out.errors.push(RuleFailure {
                rule_id: rule.id.clone(),
                error,
            }),
        }
    }
    sort_triggers(&mut out.triggers);
    out
}

pub fn sort_triggers(triggers: &mut [Trigger]) {
    triggers.sort_by(|a, b| (a.priority, &a.rule_id).cmp(&(b.priority, &b.rule_id)));
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reaction::DisplayInstruction;

    pub(crate) fn rule(id: &str, priority: i64, areas: Vec<Area>, metric: Metric, threshold: f64) -> Rule {
        Rule {
            id: id.into(),
            priority,
            window: RuleWindow::Sliding { sliding: 10 },
            areas,
            owner: "cloud".into(),
            metric,
            threshold,
            conjunction: AreaConjunction::AllAreas,
            eval_step: 1,
            severity: None,
            stakeholders: vec!["ops".into()],
            reaction: ReactionSpec {
                displays: vec![DisplayInstruction::TextAlert {
                    text: "check".into(),
                    wall_hint: None,
                }],
            },
        }
    }

    fn cloud_clause(t1: Tick, t2: Tick, points: &[(i64, i64)]) -> Invariant {
        Invariant::implies(
            Invariant::and(Invariant::time_interval(t1, t2).unwrap(), Invariant::owner("cloud")),
            Invariant::big_and(points.iter().map(|&(x, y)| Invariant::point(x, y)).collect()),
        )
    }

    fn fill(area: Area, n: usize) -> Vec<(i64, i64)> {
        area.points().take(n).map(|p| (p.x, p.y)).collect()
    }

    #[test]
    fn two_area_fraction_rule() {
        let a1 = Area::new(0, 0, 9, 9);
        let a2 = Area::new(20, 0, 29, 9);
        let mut pts = fill(a1, 60);
        pts.extend(fill(a2, 70));
        let model = cloud_clause(0, 10, &pts);
        let r = rule("r", 0, vec![a1, a2], Metric::CoverageFraction, 0.5);
        let t = evaluate_rule(&r, &model, 5).unwrap().unwrap();
        let measured: Vec<f64> = t.per_area.iter().map(|m| m.measured).collect();
        assert_eq!(measured, vec![0.6, 0.7]);
        assert_eq!(t.severity_label, CLOUD_SEVERITY);

        let mut pts = fill(a1, 60);
        pts.extend(fill(a2, 40));
        assert_eq!(evaluate_rule(&r, &cloud_clause(0, 10, &pts), 5).unwrap(), None);
    }

    #[test]
    fn zero_threshold_fires_on_any_model_with_a_window() {
        let r = rule("r", 0, vec![Area::new(0, 0, 1, 1)], Metric::CoveredCells, 0.0);
        assert!(evaluate_rule(&r, &Invariant::True, 0).unwrap().is_some());
        let mut future = r.clone();
        future.window = RuleWindow::Absolute { t1: 100, t2: 200 };
        assert!(evaluate_rule(&future, &Invariant::True, 50).unwrap().is_none());
    }

    #[test]
    fn overlapping_frames_take_the_maximum() {
        let a = Area::new(0, 0, 9, 0);
        let model = Invariant::and(cloud_clause(0, 10, &fill(a, 4)), cloud_clause(5, 15, &fill(a, 6)));
        let r = rule("r", 0, vec![a], Metric::CoveredCells, 6.0);
        assert_eq!(evaluate_rule(&r, &model, 7).unwrap().unwrap().per_area[0].measured, 6.0);
        let r = rule("r", 0, vec![a], Metric::CoveredCells, 7.0);
        assert!(evaluate_rule(&r, &model, 7).unwrap().is_none());
    }

    #[test]
    fn eval_step_skips_ticks() {
        let a = Area::new(0, 0, 0, 0);
        let model = cloud_clause(3, 3, &[(0, 0)]);
        let mut r = rule("r", 0, vec![a], Metric::CoveredCells, 1.0);
        r.window = RuleWindow::Absolute { t1: 0, t2: 10 };
        assert!(evaluate_rule(&r, &model, 10).unwrap().is_some());
        r.eval_step = 2;
        assert!(evaluate_rule(&r, &model, 10).unwrap().is_none());
        r.eval_step = 3;
        assert!(evaluate_rule(&r, &model, 10).unwrap().is_some());
    }

    #[test]
    fn ordering_and_error_isolation() {
        let a = Area::new(0, 0, 0, 0);
        let set = RuleSet::from_rules(vec![
            rule("late", 5, vec![a], Metric::CoveredCells, 1.0),
            rule("urgent", 1, vec![a], Metric::CoveredCells, 1.0),
        ])
        .unwrap();
        let model = cloud_clause(0, 10, &[(0, 0)]);
        let ids: Vec<_> = evaluate_all(&set, &model, 5).triggers.into_iter().map(|t| t.rule_id).collect();
        assert_eq!(ids, vec!["urgent", "late"]);
        assert!(evaluate_all(&RuleSet::new(), &model, 5).triggers.is_empty());

        let mut smoke = rule("smoke", 0, vec![a], Metric::CoveredCells, 1.0);
        smoke.owner = "smoke".into();
        let set = RuleSet::from_rules(vec![smoke, rule("cloud", 0, vec![a], Metric::CoveredCells, 1.0)]).unwrap();
        let bad = Invariant::or(Invariant::owner("smoke"), Invariant::False);
        let eval = evaluate_all(&set, &Invariant::and(model, bad), 5);
        assert_eq!(eval.triggers.len(), 1);
        assert_eq!(eval.errors.len(), 1);
        assert_eq!(eval.errors[0].rule_id, "smoke");
        assert!(matches!(eval.errors[0].error, LogicError::UnsupportedFragment { .. }));
    }

    #[test]
    fn mutations_and_revisions() {
        let a = Area::new(0, 0, 0, 0);
        let set = RuleSet::new();
        assert_eq!((set.len(), set.revision()), (0, 0));
        let added = set.apply(RuleMutation::Add(rule("x", 0, vec![a], Metric::CoveredCells, 1.0))).unwrap();
        let removed = added.apply(RuleMutation::Remove("x".into())).unwrap();
        assert!(removed.get("x").is_none());
        assert_eq!(removed.revision(), 2);
        assert_eq!(added.len(), 1, "old snapshot unchanged");
        assert_eq!(
            set.apply(RuleMutation::Replace(rule("nope", 0, vec![a], Metric::CoveredCells, 1.0))),
            Err(RuleError::UnknownId("nope".into()))
        );
        assert_eq!(
            added.apply(RuleMutation::Add(rule("x", 0, vec![a], Metric::CoveredCells, 1.0))),
            Err(RuleError::DuplicateId("x".into()))
        );
    }

    #[test]
    fn rule_documents() {
        let text = r#"{"id":"demo","priority":1,"window":{"sliding":60},"areas":[{"x1":9,"y1":9,"x2":0,"y2":0}],
            "owner":"cloud","metric":"coverage_fraction","threshold":0.5,
            "stakeholders":["grid-operator"],"reaction":{"displays":[{"kind":"text-alert","text":"low solar"}]}}"#;
        let r = parse_rule(text).unwrap();
        assert_eq!(r.areas[0], Area::new(0, 0, 9, 9));
        assert_eq!(r.eval_step, 1);
        assert_eq!(parse_rule(&serde_json::to_string(&r).unwrap()).unwrap(), r);

        let negative = text.replace("\"threshold\":0.5", "\"threshold\":-1");
        assert!(matches!(parse_rule(&negative), Err(RuleError::Parse { id: Some(id), .. }) if id == "demo"));
        let over = text.replace("\"threshold\":0.5", "\"threshold\":1.5");
        assert!(parse_rule(&over).is_err());
        let no_areas = text.replace(r#"[{"x1":9,"y1":9,"x2":0,"y2":0}]"#, "[]");
        assert!(parse_rule(&no_areas).is_err());
        let no_people = text.replace(r#"["grid-operator"]"#, "[]");
        assert!(parse_rule(&no_people).is_err());
        assert_eq!(parse_rules_document(&format!("[{text},{text}]")).unwrap().len(), 2);
        let dup = parse_rules_document(&format!("[{text},{text}]")).unwrap();
        assert_eq!(RuleSet::from_rules(dup), Err(RuleError::DuplicateId("demo".into())));
    }

    #[test]
    fn rules_directory() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(load_rules_dir(dir.path()).unwrap().revision(), 0);
        let r = rule("one", 0, vec![Area::new(0, 0, 1, 1)], Metric::CoveredCells, 1.0);
        fs::write(dir.path().join("one.json"), serde_json::to_string(&r).unwrap()).unwrap();
        fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let set = load_rules_dir(dir.path()).unwrap();
        assert_eq!((set.len(), set.revision()), (1, 1));
    }

    #[test]
    fn diff_produces_mutations() {
        let a = Area::new(0, 0, 0, 0);
        let set = RuleSet::from_rules(vec![
            rule("keep", 0, vec![a], Metric::CoveredCells, 1.0),
            rule("gone", 0, vec![a], Metric::CoveredCells, 1.0),
            rule("edit", 0, vec![a], Metric::CoveredCells, 1.0),
        ])
        .unwrap();
        let target: BTreeMap<String, Rule> = [
            rule("keep", 0, vec![a], Metric::CoveredCells, 1.0),
            rule("edit", 0, vec![a], Metric::CoveredCells, 2.0),
            rule("new", 0, vec![a], Metric::CoveredCells, 1.0),
        ]
        .into_iter()
        .map(|r| (r.id.clone(), r))
        .collect();
        let muts = set.diff(&target);
        assert_eq!(muts.len(), 3);
        let next = muts.into_iter().try_fold(set, |s, m| s.apply(m)).unwrap();
        assert_eq!(next.revision(), 6);
        assert!(next.get("gone").is_none());
        assert_eq!(next.get("edit").unwrap().threshold, 2.0);
    }
}
