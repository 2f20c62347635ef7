//! Reading models, frames and topologies from disk.

use std::path::Path;

use clap::Args;
use gridspace_core::fdir::{topology_from_matrix_csv, Topology};
use gridspace_core::ingestion::{frame_to_invariant, parse_grid_frame, parse_quantity_csv, split_frames, SourceConfig, SourceKind};
use gridspace_core::serialization::{parse_json, parse_xml};
use gridspace_core::{clauses_to_invariant, to_clauses, Invariant};

use crate::CliError;

/// How raw frames become invariants.
#[derive(Debug, Clone, Args)]
pub struct FrameSource {
    /// Owner tag given to covered cells.
    #[arg(long, default_value = "cloud")]
    pub owner: String,
    /// Minimum cell value counted as covered.
    #[arg(long, default_value_t = 1)]
    pub threshold: u8,
}

impl FrameSource {
    fn config(&self) -> SourceConfig {
        SourceConfig::new(SourceKind::FileReplay, "cli", 0, self.owner.clone(), self.threshold)
    }

    /// One invariant per frame in `text`.
    pub fn frames(&self, text: &str) -> Result<Vec<Invariant>, CliError> {
        let cfg = self.config();
        split_frames(text)
            .iter()
            .map(|chunk| {
                let frame = parse_grid_frame(chunk).map_err(|e| CliError::Invalid(e.to_string()))?;
                Ok(frame_to_invariant(&frame, &cfg))
            })
            .collect()
    }
}

pub fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn looks_like_frames(text: &str) -> bool {
    text.trim_start().starts_with("GRIDFRAME")
}

/// Loads a model: frame text (any extension), a `.csv` quantity table, an
/// `.xml` document, or JSON. Several frames are merged into one model.
pub fn load_model(path: &Path, source: &FrameSource) -> Result<Invariant, CliError> {
    let text = read(path)?;
    let invalid = |e: String| CliError::Invalid(format!("{}: {e}", path.display()));
    if looks_like_frames(&text) {
        let mut clauses = Vec::new();
        for inv in source.frames(&text)? {
            clauses.extend(to_clauses(&inv).map_err(|e| invalid(e.to_string()))?);
        }
        return Ok(clauses_to_invariant(&clauses));
    }
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => parse_quantity_csv(&text).map_err(|e| invalid(e.to_string())),
        Some("xml") => parse_xml(&text).map_err(|e| invalid(e.to_string())),
        _ => parse_json(&text).map_err(|e| invalid(e.to_string())),
    }
}

pub fn load_topology(path: &Path) -> Result<Topology, CliError> {
    let text = read(path)?;
    let parsed = match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => topology_from_matrix_csv(&text),
        _ => Topology::from_json(&text),
    };
    parsed.map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}
