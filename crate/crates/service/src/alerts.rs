//! Volatile log of rule firings. Lost on restart.

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use gridspace_core::reaction::{DeliveryReport, RenderedReaction};
use gridspace_core::rules::Trigger;
use gridspace_core::Tick;
use serde::Serialize;

pub const DEFAULT_ALERT_CAPACITY: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct AlertRecord {
    /// Position in the log, starting at 1 and never reused.
    pub seq: u64,
    pub trigger: Trigger,
    pub reaction: RenderedReaction,
    pub delivery: DeliveryReport,
}

/// Capped ring of alert records.
#[derive(Debug, Clone)]
pub struct AlertLog {
    capacity: usize,
    records: VecDeque<Arc<AlertRecord>>,
    last_seq: u64,
    last_fired: HashMap<String, Tick>,
}

impl Default for AlertLog {
    fn default() -> Self {
        AlertLog::new(DEFAULT_ALERT_CAPACITY)
    }
}

impl AlertLog {
    pub fn new(capacity: usize) -> Self {
        AlertLog {
            capacity: capacity.max(1),
            records: VecDeque::new(),
            last_seq: 0,
            last_fired: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last_seq(&self) -> u64 {
        self.last_seq
    }

    /// Whether a firing of `rule_id` at `fired_at` would be accepted.
    pub fn accepts(&self, rule_id: &str, fired_at: Tick) -> bool {
        self.last_fired.get(rule_id).is_none_or(|last| fired_at > *last)
    }

    /// Appends a record. Firings not later than the last logged firing of
    /// the same rule are refused so that each rule's entries stay in
    /// increasing `firedAt` order.
    pub fn append(&mut self, trigger: Trigger, reaction: RenderedReaction, delivery: DeliveryReport) -> Option<u64> {
        if !self.accepts(&trigger.rule_id, trigger.fired_at) {
            return None;
        }
        self.last_fired.insert(trigger.rule_id.clone(), trigger.fired_at);
        self.last_seq += 1;
        if self.records.len() == self.capacity {
            self.records.pop_front();
        }
        self.records.push_back(Arc::new(AlertRecord {
            seq: self.last_seq,
            trigger,
            reaction,
            delivery,
        }));
        Some(self.last_seq)
    }

    /// Records with `firedAt >= since`, oldest first.
    pub fn since(&self, since: Tick) -> Vec<Arc<AlertRecord>> {
        self.records
            .iter()
            .filter(|r| r.trigger.fired_at >= since)
            .cloned()
            .collect()
    }

    /// Records appended after sequence number `seq`.
    pub fn after(&self, seq: u64) -> Vec<Arc<AlertRecord>> {
        let skip = self.records.partition_point(|r| r.seq <= seq);
        self.records.iter().skip(skip).cloned().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<AlertRecord>> {
        self.records.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trigger(rule: &str, at: Tick) -> Trigger {
        Trigger {
            rule_id: rule.into(),
            priority: 0,
            fired_at: at,
            per_area: Vec::new(),
            severity_label: "alert".into(),
        }
    }

    fn push(log: &mut AlertLog, rule: &str, at: Tick) -> Option<u64> {
        let reaction = RenderedReaction {
            rule_id: rule.into(),
            fired_at: at,
            stakeholders: Vec::new(),
            xml: String::new(),
        };
        log.append(trigger(rule, at), reaction, DeliveryReport::default())
    }

    #[test]
    fn ring_drops_oldest() {
        let mut log = AlertLog::new(2);
        for t in 1..=3 {
            push(&mut log, "r", t);
        }
        let fired: Vec<Tick> = log.iter().map(|r| r.trigger.fired_at).collect();
        assert_eq!(fired, vec![2, 3]);
        assert_eq!(log.last_seq(), 3);
        assert_eq!(log.after(1).len(), 2);
        assert_eq!(log.after(2).len(), 1);
    }

    #[test]
    fn per_rule_order_is_enforced() {
        let mut log = AlertLog::default();
        assert_eq!(push(&mut log, "a", 10), Some(1));
        assert_eq!(push(&mut log, "b", 5), Some(2));
        assert_eq!(push(&mut log, "a", 10), None);
        assert_eq!(push(&mut log, "a", 9), None);
        assert_eq!(push(&mut log, "a", 11), Some(3));
        assert_eq!(log.since(10).len(), 2);
    }
}
