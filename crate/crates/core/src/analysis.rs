//! Long-term grid analysis: load/generation deficit heatmaps for spotting
//! weak links, and simple payback estimates for renewable installations.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clause::{to_clauses, Clause};
use crate::invariant::{Area, Interval, Invariant, LogicError, DEFAULT_DECOMPOSITION_CAP};
use crate::reasoning::TimeWindow;

pub const LOAD_KIND: &str = "load_kw";
pub const GENERATION_KIND: &str = "generation_kw";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Logic(#[from] LogicError),
    #[error("domain error: {0}")]
    Domain(String),
}

/// How per-tick deficits combine over the window.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregate {
    #[default]
    Max,
    Mean,
}

/// Deficit map over a region. Grids are row-major with row 0 at the bottom
/// (`y1`) of the region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct HeatMap {
    pub region: Area,
    pub cell_size: u32,
    pub cols: usize,
    pub rows: usize,
    pub aggregate: Aggregate,
    /// `raw / max(raw)` clamped to `[0, 1]`; all zero when no cell has a
    /// positive deficit.
    pub scores: Vec<f64>,
    /// Load minus generation in kW.
    pub raw: Vec<f64>,
    /// Set when no clause touching the region carries load or generation.
    pub missing_quantities: bool,
}

impl HeatMap {
    pub fn score(&self, col: usize, row: usize) -> f64 {
        self.scores[row * self.cols + col]
    }

    pub fn raw_at(&self, col: usize, row: usize) -> f64 {
        self.raw[row * self.cols + col]
    }

    /// Plain-text grayscale image, top row first, 255 = worst deficit.
    pub fn to_pgm(&self) -> String {
        let mut out = format!("P2\n{} {}\n255\n", self.cols, self.rows);
        for row in (0..self.rows).rev() {
            let line: Vec<String> = (0..self.cols)
                .map(|col| ((self.score(col, row) * 255.0).round() as u8).to_string())
                .collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }
}

/// A clause's contribution: its active span, net deficit share and the
/// in-grid cells receiving it.
struct Contribution {
    span: Interval,
    share: f64,
    cells: Vec<usize>,
}

fn net_deficit(clause: &Clause) -> Option<f64> {
    let mut found = false;
    let mut net = 0.0;
    for q in clause.quantities() {
        match q.kind.as_str() {
            LOAD_KIND => net += q.value(),
            GENERATION_KIND => net -= q.value(),
            _ => continue,
        }
        found = true;
    }
    found.then_some(net)
}

/// Aligned grid cell index of coordinate `v`; may lie outside `0..n`.
fn cell_index(v: i64, origin: i64, size: i64) -> i64 {
    (v as i128 - origin as i128).div_euclid(size as i128) as i64
}

/// Weak-link heatmap of `model` over `region`.
///
/// Each clause carrying `load_kw`/`generation_kw` quantities contributes its
/// net deficit (load minus generation), split evenly over every grid cell
/// its geometry touches. The grid is aligned to the region's lower-left
/// corner and extended past the region to count cells touched outside it;
/// only cells inside the region receive their share. Per tick, the shares
/// of clauses whose time guard holds are summed; per cell, ticks combine by
/// `aggregate`.
pub fn weak_link_heatmap(
    model: &Invariant,
    region: &Area,
    window: &TimeWindow,
    cell_size: u32,
    aggregate: Aggregate,
) -> Result<HeatMap, AnalysisError> {
    if cell_size == 0 {
        return Err(AnalysisError::Domain("cell size must be positive".into()));
    }
    let size = cell_size as i64;
    let cols = region.width().div_ceil(cell_size as u128);
    let rows = region.height().div_ceil(cell_size as u128);
    let n = cols.saturating_mul(rows);
    if n > DEFAULT_DECOMPOSITION_CAP as u128 {
        return Err(LogicError::CapExceeded {
            requested: n,
            cap: DEFAULT_DECOMPOSITION_CAP,
        }
        .into());
    }
    let (cols, rows) = (cols as usize, rows as usize);

    let clauses = to_clauses(model)?;
    let mut contributions = Vec::new();
    for clause in &clauses {
        let Some(net) = net_deficit(clause) else { continue };
        let Some(span) = clause.active_span() else { continue };
        let mut touched = BTreeSet::new();
        let mut inside = Vec::new();
        for fp in clause.footprints() {
            let (c1, c2) = (cell_index(fp.x1(), region.x1(), size), cell_index(fp.x2(), region.x1(), size));
            let (r1, r2) = (cell_index(fp.y1(), region.y1(), size), cell_index(fp.y2(), region.y1(), size));
            let count = (c2 - c1 + 1) as u128 * (r2 - r1 + 1) as u128;
            if touched.len() as u128 + count > DEFAULT_DECOMPOSITION_CAP as u128 {
                return Err(LogicError::CapExceeded {
                    requested: touched.len() as u128 + count,
                    cap: DEFAULT_DECOMPOSITION_CAP,
                }
                .into());
            }
            for r in r1..=r2 {
                for c in c1..=c2 {
                    touched.insert((r, c));
                }
            }
            if let Some(clipped) = fp.intersect(region) {
                let cc = (cell_index(clipped.x1(), region.x1(), size), cell_index(clipped.x2(), region.x1(), size));
                let rr = (cell_index(clipped.y1(), region.y1(), size), cell_index(clipped.y2(), region.y1(), size));
                for r in rr.0..=rr.1 {
                    for c in cc.0..=cc.1 {
                        inside.push(r as usize * cols + c as usize);
                    }
                }
            }
        }
        if touched.is_empty() || inside.is_empty() {
            continue;
        }
        inside.sort_unstable();
        inside.dedup();
        contributions.push(Contribution {
            span,
            share: net / touched.len() as f64,
            cells: inside,
        });
    }

    let missing_quantities = contributions.is_empty();
    let mut raw = vec![0.0; cols * rows];
    if !missing_quantities {
        let mut first = true;
        let mut ticks = 0u64;
        for t in window.ticks() {
            let mut at_t = vec![0.0; cols * rows];
            for c in contributions.iter().filter(|c| c.span.contains(t)) {
                for &cell in &c.cells {
                    at_t[cell] += c.share;
                }
            }
            for (acc, v) in raw.iter_mut().zip(at_t) {
                *acc = match (aggregate, first) {
                    (_, true) => v,
                    (Aggregate::Max, false) => acc.max(v),
                    (Aggregate::Mean, false) => *acc + v,
                };
            }
            first = false;
            ticks += 1;
        }
        if aggregate == Aggregate::Mean && ticks > 0 {
            raw.iter_mut().for_each(|v| *v /= ticks as f64);
        }
    }

    let max_positive = raw.iter().copied().fold(0.0_f64, f64::max);
    let scores = raw
        .iter()
        .map(|&r| if max_positive > 0.0 { (r / max_positive).clamp(0.0, 1.0) } else { 0.0 })
        .collect();
    Ok(HeatMap {
        region: *region,
        cell_size,
        cols,
        rows,
        aggregate,
        scores,
        raw,
        missing_quantities,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenewableInputs {
    pub panel_area_m2: f64,
    pub irradiance_kwh_m2_yr: f64,
    pub efficiency: f64,
    pub performance_ratio: f64,
    pub capex: f64,
    pub tariff_per_kwh: f64,
    pub opex_per_year: f64,
    pub lifetime_years: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct RenewableEstimate {
    pub annual_kwh: f64,
    pub annual_net: f64,
    pub roi: f64,
    /// `None` when the installation never pays back.
    pub pbp_years: Option<f64>,
}

/// Undiscounted yield, return on investment and payback period.
pub fn estimate_renewable(inputs: &RenewableInputs) -> Result<RenewableEstimate, AnalysisError> {
    let named = [
        ("panel_area_m2", inputs.panel_area_m2),
        ("irradiance_kwh_m2_yr", inputs.irradiance_kwh_m2_yr),
        ("efficiency", inputs.efficiency),
        ("performance_ratio", inputs.performance_ratio),
        ("capex", inputs.capex),
        ("tariff_per_kwh", inputs.tariff_per_kwh),
        ("opex_per_year", inputs.opex_per_year),
        ("lifetime_years", inputs.lifetime_years),
    ];
    for (name, v) in named {
        if !v.is_finite() || v <= 0.0 {
            return Err(AnalysisError::Domain(format!("{name} must be positive, got {v}")));
        }
    }
    for (name, v) in [("efficiency", inputs.efficiency), ("performance_ratio", inputs.performance_ratio)] {
        if v > 1.0 {
            return Err(AnalysisError::Domain(format!("{name} must be in (0, 1], got {v}")));
        }
    }
    let annual_kwh =
        inputs.panel_area_m2 * inputs.irradiance_kwh_m2_yr * inputs.efficiency * inputs.performance_ratio;
    let annual_net = annual_kwh * inputs.tariff_per_kwh - inputs.opex_per_year;
    Ok(RenewableEstimate {
        annual_kwh,
        annual_net,
        roi: (annual_net * inputs.lifetime_years - inputs.capex) / inputs.capex,
        pbp_years: (annual_net > 0.0).then(|| inputs.capex / annual_net),
    })
}
