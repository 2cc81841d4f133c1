use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{AgreementRow, MatchMode, OverlapSeries};
use crate::error::Result;

const HEADERS: [&str; 8] = [
    "Instance #",
    "Hark issues",
    "Pre-PI issues",
    "Common",
    "Unique Hark",
    "Unique Pre-PI",
    "Hark overlap ratio",
    "Pre-PI overlap ratio",
];

/// `num/den` to two decimals, rounding half up on the exact fraction.
fn ratio_2dp(num: usize, den: usize) -> String {
    if den == 0 {
        return "0.00".into();
    }
    let hundredths = (200 * num + den) / (2 * den);
    format!("{}.{:02}", hundredths / 100, hundredths % 100)
}

fn cells(series: &OverlapSeries) -> Vec<[String; 8]> {
    series
        .rows
        .iter()
        .map(|r| {
            [
                (r.instance + 1).to_string(),
                r.hark_issues.to_string(),
                r.prepi_issues.to_string(),
                r.common.to_string(),
                r.unique_hark.to_string(),
                r.unique_prepi.to_string(),
                ratio_2dp(r.common.min(r.hark_issues), r.hark_issues),
                ratio_2dp(r.common, r.prepi_issues),
            ]
        })
        .collect()
}

pub fn overlap_table_csv(series: &OverlapSeries) -> String {
    let mut s = HEADERS.join(",");
    s.push('\n');
    for row in cells(series) {
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

pub fn overlap_table_markdown(series: &OverlapSeries) -> String {
    let mut s = format!("### {} overlap\n\n| {} |\n|", series.app, HEADERS.join(" | "));
    s.push_str(&"---|".repeat(HEADERS.len()));
    s.push('\n');
    for row in cells(series) {
        let _ = writeln!(s, "| {} |", row.join(" | "));
    }
    s.push('\n');
    let _ = write!(s, "Matcher: {}", series.matcher);
    if let (MatchMode::Semantic, Some(t)) = (series.matcher, series.tau) {
        let _ = write!(s, " (tau = {t})");
    }
    s.push_str(". Counts are cumulative unions through each instance; a ratio with an empty denominator is reported as 0.\n");
    if series.rows.iter().any(|r| r.hark_temporal_clamped) {
        s.push_str("Some Hark temporal ratios exceeded 1 and were clamped.\n");
    }
    s
}

/// Plot data: one line per instance with both temporal ratios.
pub fn plot_data_csv(series: &OverlapSeries) -> String {
    let mut s = String::from("instance,prepi_temporal_ratio,hark_temporal_ratio\n");
    for r in &series.rows {
        let _ = writeln!(s, "{},{:.6},{:.6}", r.instance + 1, r.prepi_temporal_ratio, r.hark_temporal_ratio);
    }
    s
}

fn agreement_markdown(rows: &[AgreementRow]) -> String {
    let mut s = String::from("### Rater agreement\n\n| Method | Issues | Cohen kappa | Agreement |\n|---|---|---|---|\n");
    for r in rows {
        let flag = if r.stats.kappa.degenerate { " (degenerate marginals)" } else { "" };
        let _ = writeln!(
            s,
            "| {} | {} | {:.2}{} | {:.0}% |",
            r.method,
            r.issues,
            r.stats.kappa.value,
            flag,
            r.stats.percent_agreement * 100.0
        );
    }
    s
}

/// Writes the report bundle into `dir` and returns the files written.
pub fn emit_tables(series: &OverlapSeries, agreement: Option<&[AgreementRow]>, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut files = vec![
        (dir.join("overlap.csv"), overlap_table_csv(series)),
        (dir.join("overlap.md"), overlap_table_markdown(series)),
        (dir.join("series.json"), serde_json::to_string_pretty(series)? + "\n"),
        (dir.join("temporal_plot.csv"), plot_data_csv(series)),
    ];
    if let Some(rows) = agreement {
        files.push((dir.join("agreement.md"), agreement_markdown(rows)));
        files.push((dir.join("agreement.json"), serde_json::to_string_pretty(rows)? + "\n"));
    }
    for (p, body) in &files {
        fs::write(p, body)?;
    }
    Ok(files.into_iter().map(|(p, _)| p).collect())
}
