//! Post-processing of pipeline results into a plot-free summary table.

use crate::ecg::CaseResult;
use crate::error::Result;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

/// One row of the scalar summary table.
#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub lead: String,
    pub density: String,
    pub rank: usize,
    pub max_std_mv: f64,
    pub max_expected_gap_mv: f64,
    /// Largest deviation between the lead-field and the forward pointwise
    /// signal, when a forward run is available for the lead.
    pub reciprocity_max_err_mv: Option<f64>,
}

/// Collapse per-case statistics into the reported scalars. All values are
/// recomputable from the per-time CSVs.
pub fn summarize(
    cases: &[CaseResult],
    reciprocity_by_lead: &HashMap<String, f64>,
) -> Vec<SummaryRow> {
    cases
        .iter()
        .map(|case| SummaryRow {
            lead: case.lead.clone(),
            density: case.density.to_string(),
            rank: case.stats.rank(),
            max_std_mv: case.stats.max_std(),
            max_expected_gap_mv: case.stats.max_expected_gap(),
            reciprocity_max_err_mv: reciprocity_by_lead.get(&case.lead).copied(),
        })
        .collect()
}

pub const SUMMARY_HEADER: &str =
    "lead,density,rank,max_std_mv,max_expected_gap_mv,reciprocity_max_err_mv";

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for row in rows {
        let rec = row
            .reciprocity_max_err_mv
            .map(|v| v.to_string())
            .unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{}",
            row.lead, row.density, row.rank, row.max_std_mv, row.max_expected_gap_mv, rec
        )
        .unwrap();
    }
    std::fs::write(path, out)?;
    Ok(())
}
