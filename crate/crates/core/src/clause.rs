//! Canonical clause view of the monitoring fragment.
//!
//! A model in the monitoring fragment is a conjunction of clauses. A clause
//! is either `IMPLIES(guard, body)` where guard and body are conjunctions of
//! atoms, or a bare atom with no guard.

use crate::invariant::{conjunction, Area, Interval, Invariant, LogicError, Quantity, Tick};

/// One guarded clause. `guard == None` marks a bare (guardless) clause.
#[derive(Debug, Clone, PartialEq)]
pub struct Clause {
    pub guard: Option<Vec<Invariant>>,
    pub body: Vec<Invariant>,
}

impl Clause {
    pub fn guarded(guard: Vec<Invariant>, body: Vec<Invariant>) -> Self {
        Clause {
            guard: Some(guard),
            body,
        }
    }

    pub fn bare(atom: Invariant) -> Self {
        Clause {
            guard: None,
            body: vec![atom],
        }
    }

    fn atoms(&self) -> impl Iterator<Item = &Invariant> {
        self.guard.iter().flatten().chain(self.body.iter())
    }

    fn guard_atoms(&self) -> impl Iterator<Item = &Invariant> {
        self.guard.iter().flatten()
    }

    /// Ticks at which the temporal guard holds: the intersection of every
    /// time atom in the guard. `None` means the guard can never hold.
    pub fn active_span(&self) -> Option<Interval> {
        let mut span = Interval::always();
        for atom in self.guard_atoms() {
            let constraint = match atom {
                Invariant::TimePoint { t } => Interval::point(*t),
                Invariant::TimeInterval(i) => *i,
                _ => continue,
            };
            span = span.intersect(&constraint)?;
        }
        Some(span)
    }

    pub fn has_time_guard(&self) -> bool {
        self.guard_atoms().any(Invariant::is_temporal)
    }

    pub fn holds_at(&self, t: Tick) -> bool {
        self.guard_atoms().all(|atom| match atom {
            Invariant::TimePoint { t: p } => *p == t,
            Invariant::TimeInterval(i) => i.contains(t),
            _ => true,
        })
    }

    /// First owner tag, looking at the guard before the body.
    pub fn owner(&self) -> Option<&str> {
        self.atoms().find_map(|a| match a {
            Invariant::Owner { tag } => Some(tag.as_str()),
            _ => None,
        })
    }

    pub fn event(&self) -> Option<&str> {
        self.atoms().find_map(|a| match a {
            Invariant::Event { tag } => Some(tag.as_str()),
            _ => None,
        })
    }

    pub fn quantities(&self) -> impl Iterator<Item = &Quantity> {
        self.atoms().filter_map(|a| match a {
            Invariant::Quantity(q) => Some(q),
            _ => None,
        })
    }

    pub fn geometry(&self) -> impl Iterator<Item = &Invariant> {
        self.atoms().filter(|a| a.is_geometric())
    }

    /// Ground-plane footprints of the geometry atoms (points as unit boxes).
    pub fn footprints(&self) -> impl Iterator<Item = Area> + '_ {
        self.geometry().filter_map(|a| match a {
            Invariant::OccupyPoint(p) => Some(Area::new(p.x, p.y, p.x, p.y)),
            Invariant::OccupyBox(b) => Some(*b),
            Invariant::Occupy3DBox(v) => Some(v.footprint()),
            _ => None,
        })
    }

    pub fn topology(&self) -> impl Iterator<Item = &Invariant> {
        self.atoms()
            .filter(|a| matches!(a, Invariant::Edge { .. } | Invariant::Transition { .. }))
    }

    /// The clause as a normalized invariant.
    pub fn to_invariant(&self) -> Invariant {
        match &self.guard {
            Some(guard) => Invariant::implies(conjunction(guard.clone()), conjunction(self.body.clone())),
            None => conjunction(self.body.clone()),
        }
    }
}

/// Splits a model into clauses. Fails with `UnsupportedFragment` when the
/// model leaves the monitoring fragment; the reported path addresses the
/// normalized model (`$` is the root).
pub fn to_clauses(inv: &Invariant) -> Result<Vec<Clause>, LogicError> {
    let normalized = inv.normalize();
    match &normalized {
        Invariant::True => Ok(Vec::new()),
        Invariant::BigAnd { items } => items
            .iter()
            .enumerate()
            .map(|(i, item)| clause_of(item, &format!("$/items/{i}")))
            .collect(),
        other => Ok(vec![clause_of(other, "$")?]),
    }
}

/// A top-level conjunct that is outside the monitoring fragment.
#[derive(Debug, Clone, PartialEq)]
pub struct Rejected {
    pub part: Invariant,
    pub error: LogicError,
}

/// Like [`to_clauses`] but keeps going past conjuncts outside the fragment,
/// returning them separately.
pub fn partition_clauses(inv: &Invariant) -> (Vec<Clause>, Vec<Rejected>) {
    let normalized = inv.normalize();
    let items: Vec<(Invariant, String)> = match normalized {
        Invariant::True => Vec::new(),
        Invariant::BigAnd { items } => items
            .into_iter()
            .enumerate()
            .map(|(i, item)| (item, format!("$/items/{i}")))
            .collect(),
        other => vec![(other, "$".to_string())],
    };
    let mut clauses = Vec::with_capacity(items.len());
    let mut rejected = Vec::new();
    for (item, path) in items {
        match clause_of(&item, &path) {
            Ok(c) => clauses.push(c),
            Err(error) => rejected.push(Rejected { part: item, error }),
        }
    }
    (clauses, rejected)
}

fn clause_of(item: &Invariant, path: &str) -> Result<Clause, LogicError> {
    match item {
        Invariant::Implies { guard, body } => Ok(Clause::guarded(
            atom_conjunction(guard, &format!("{path}/guard"))?,
            atom_conjunction(body, &format!("{path}/body"))?,
        )),
        atom if atom.is_atom() => Ok(Clause::bare(atom.clone())),
        other => Err(unsupported(other, path)),
    }
}

fn atom_conjunction(inv: &Invariant, path: &str) -> Result<Vec<Invariant>, LogicError> {
    match inv {
        Invariant::True => Ok(Vec::new()),
        Invariant::BigAnd { items } => items
            .iter()
            .enumerate()
            .map(|(i, item)| {
                if item.is_atom() {
                    Ok(item.clone())
                } else {
                    Err(unsupported(item, &format!("{path}/items/{i}")))
                }
            })
            .collect(),
        atom if atom.is_atom() => Ok(vec![atom.clone()]),
        other => Err(unsupported(other, path)),
    }
}

fn unsupported(inv: &Invariant, path: &str) -> LogicError {
    let reason = match inv {
        Invariant::Implies { .. } => "nested IMPLIES".to_string(),
        other => format!("{} outside the conjunctive fragment", other.op_name()),
    };
    LogicError::UnsupportedFragment {
        path: path.to_string(),
        reason,
    }
}

/// Rebuilds a normalized model from clauses.
pub fn clauses_to_invariant(clauses: &[Clause]) -> Invariant {
    let mut items = Vec::with_capacity(clauses.len());
    for clause in clauses {
        match clause.to_invariant() {
            Invariant::True => {}
            Invariant::BigAnd { items: atoms } => items.extend(atoms),
            other => items.push(other),
        }
    }
    conjunction(items)
}
