use super::{PoseErrorRecord, ReportRow, SolverStatus, RECALL_THRESHOLDS};
use crate::{Error, Result};

/// Fraction of records with translation error at most `t_cm / 100` units and
/// rotation error at most `t_deg`. Failed records count as misses.
pub fn recall_at(records: &[PoseErrorRecord], t_cm: f64, t_deg: f64) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::InvalidConfig("recall of an empty record set".into()));
    }
    let hits = records
        .iter()
        .filter(|r| match (r.status, r.rot_err_deg, r.trans_err_units) {
            (SolverStatus::Success, Some(rot), Some(t)) => t <= t_cm / 100.0 && rot <= t_deg,
            _ => false,
        })
        .count();
    Ok(hits as f64 / records.len() as f64)
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Summarizes records into a report line. `timings` are the per-frame times
/// that count towards the median (warm-up already removed).
pub fn report_row(variant: &str, records: &[PoseErrorRecord], timings: &[f64]) -> Result<ReportRow> {
    let [r1, r3, r5] = RECALL_THRESHOLDS.map(|(cm, deg)| recall_at(records, cm, deg));
    Ok(ReportRow {
        variant: variant.to_string(),
        r1: r1?,
        r3: r3?,
        r5: r5?,
        matches: records.iter().map(|r| r.num_matches as f64).sum::<f64>() / records.len() as f64,
        ms: median(timings).unwrap_or(0.0),
    })
}
