use std::fmt::Write;
use std::str::FromStr;

use super::{RegressionResult, UpliftReport};
use crate::storyline::ArcLibrary;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Table,
}

impl FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "table" => Ok(ReportFormat::Table),
            other => Err(format!("unknown report format `{other}` (expected csv or table)")),
        }
    }
}

fn params_header(report: &UpliftReport) -> String {
    let p = &report.params;
    let metrics: Vec<&str> = p.metrics.iter().map(|m| m.key()).collect();
    let mut out = String::new();
    writeln!(out, "# model=gradient_boosted_trees loss=squared_error").unwrap();
    writeln!(
        out,
        "# rounds={} learning_rate={} max_depth={} min_leaf={}",
        p.gbt.rounds, p.gbt.learning_rate, p.gbt.max_depth, p.gbt.min_leaf
    )
    .unwrap();
    writeln!(out, "# metrics={}", metrics.join(";")).unwrap();
    writeln!(out, "# features={}", report.features.join(";")).unwrap();
    writeln!(out, "# categorical_encoding=one_hot_all_levels").unwrap();
    writeln!(out, "# uplift_pct=100*(PD(1)-PD(0))/mean(metric in subvertical)").unwrap();
    for s in &report.skipped {
        writeln!(out, "# skipped {} {}: {}", s.metric.key(), s.subvertical.key(), s.reason).unwrap();
    }
    out
}

fn arc_name(library: Option<&ArcLibrary>, abbrev: &str) -> String {
    library
        .and_then(|l| l.get(abbrev))
        .map(|a| a.label())
        .unwrap_or_else(|| abbrev.to_string())
}

/// Full ranking, one line per (metric, subvertical, arc).
pub fn uplift_report_csv(report: &UpliftReport, library: Option<&ArcLibrary>) -> String {
    let mut out = params_header(report);
    out.push_str("metric,subvertical,rank,arc_abbrev,arc_name,uplift_pct,uplift_abs,support\n");
    for r in &report.rows {
        writeln!(
            out,
            "{},{},{},{},\"{}\",{:.4},{:.8},{}",
            r.metric.key(),
            r.subvertical.key(),
            r.rank,
            r.arc_abbrev,
            arc_name(library, &r.arc_abbrev).replace('"', "\"\""),
            r.uplift_pct,
            r.uplift_abs,
            r.support
        )
        .unwrap();
    }
    out
}

/// Top arc per (metric, subvertical), as an aligned text table.
pub fn uplift_report_table(report: &UpliftReport, library: Option<&ArcLibrary>) -> String {
    let header = ["Ad Metric", "Subvertical", "Top Storyline Pattern", "Uplift", "Support"];
    let rows: Vec<[String; 5]> = report
        .top_rows()
        .map(|r| {
            [
                r.metric.key().to_string(),
                r.subvertical.display_name().to_string(),
                arc_name(library, &r.arc_abbrev),
                format!("{:+.1}%", r.uplift_pct),
                r.support.to_string(),
            ]
        })
        .collect();
    let mut widths = header.map(|h| h.chars().count());
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, &w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        format!("| {} |\n", padded.join(" | "))
    };
    let mut out = params_header(report);
    out.push_str(&line(&header.map(String::from)));
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    out.push_str(&format!("|-{}-|\n", rule.join("-|-")));
    for row in &rows {
        out.push_str(&line(row));
    }
    out
}

/// Per-second story coefficients with absolute and relative readings.
pub fn dwell_report_csv(result: &RegressionResult) -> String {
    let mut out = String::new();
    writeln!(out, "# model=ols response=dwell_s").unwrap();
    writeln!(out, "# columns={}", result.columns.join(";")).unwrap();
    if let Some(r) = &result.reference_objective {
        writeln!(out, "# reference_objective={r}").unwrap();
    }
    writeln!(out, "# coef_pp=100*coefficient relative_change=coefficient/baseline_nonstory_dwell").unwrap();
    out.push_str("second,coef_pp,std_err_pp,n,baseline_nonstory_dwell,relative_change\n");
    for c in &result.per_second {
        writeln!(
            out,
            "{},{:.6},{:.6},{},{:.6},{}",
            c.second,
            c.coef_pp,
            c.std_err_pp,
            c.n,
            c.baseline_nonstory_dwell,
            c.relative_change.map(|r| format!("{r:.6}")).unwrap_or_default()
        )
        .unwrap();
    }
    out
}
