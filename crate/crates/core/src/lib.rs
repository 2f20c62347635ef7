//! Spatio-temporal invariants for grid monitoring: the formula language,
//! its text formats, clause-level reasoning, rule evaluation, reactions,
//! grid analysis and fault handling on radial feeders.

pub mod analysis;
pub mod clause;
pub mod fdir;
pub mod ingestion;
pub mod invariant;
pub mod reaction;
pub mod reasoning;
pub mod rules;
pub mod serialization;

pub use clause::{clauses_to_invariant, to_clauses, Clause};
pub use invariant::{Area, Interval, Invariant, LogicError, Point, Quantity, Tick, Volume};
