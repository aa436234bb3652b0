use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "model,precision,recall,map50,train_s,test_ms,flops,params";
const UNDEFINED: &str = "—";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Markdown => "md",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            other => Err(Error::Config(format!("unknown report format {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub model: String,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub map50: Option<f64>,
    pub train_s: f64,
    pub test_ms: f64,
    pub flops: u64,
    pub params: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub fingerprint: String,
    pub seed: u64,
    pub epochs: usize,
    pub train_samples: usize,
    pub test_samples: usize,
}

impl BenchReport {
    /// Copy with wall-clock fields zeroed, for determinism comparisons.
    pub fn without_timings(&self) -> Self {
        let mut r = self.clone();
        for row in &mut r.rows {
            row.train_s = 0.0;
            row.test_ms = 0.0;
        }
        r
    }

    fn row(&self, model: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.model == model)
    }

    /// Hybrid minus plain mAP@50, when both rows are present.
    pub fn map50_delta(&self) -> Option<f64> {
        let h = self.row(super::HYBRID)?.map50?;
        let p = self.row(super::PLAIN)?.map50?;
        Some(h - p)
    }
}

fn score(v: Option<f64>) -> String {
    v.map_or_else(|| UNDEFINED.to_string(), |x| format!("{x:.3}"))
}

fn render_csv(report: &BenchReport) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{:.3},{:.3},{},{}",
            r.model,
            score(r.precision),
            score(r.recall),
            score(r.map50),
            r.train_s,
            r.test_ms,
            r.flops,
            r.params
        );
    }
    out
}

fn delta_line(report: &BenchReport) -> String {
    match report.map50_delta() {
        Some(d) => {
            let verdict = if d > 0.0 {
                "hybrid ahead"
            } else if d < 0.0 {
                "plain ahead"
            } else {
                "tie"
            };
            format!("Observed mAP@50 delta (hybrid − plain): {d:+.3} ({verdict}).")
        }
        None => "Observed mAP@50 delta (hybrid − plain): —.".to_string(),
    }
}

fn render_markdown(report: &BenchReport) -> String {
    let mut out = String::from("# Hybrid vs plain detector benchmark\n\n");
    out.push_str(
        "One hybrid/plain pair of a single detector stand-in; the legs share every setting \
         except the conv→batchnorm→activation pre-block. Comparing detector generations is \
         out of scope.\n\n",
    );
    let _ = writeln!(
        out,
        "Seed {} · config {} · {} epochs · {} train / {} test images.\n",
        report.seed, report.fingerprint, report.epochs, report.train_samples, report.test_samples
    );
    let _ = writeln!(out, "{}", delta_line(report));
    out.push_str(
        "Score ordering depends on the dataset and is reported, not asserted; the cost ordering \
         (FLOPs, parameters) is structural.\n\n",
    );
    out.push_str("## Detection scores\n\n");
    out.push_str("| Model | Precision | Recall | mAP@50 |\n|---|---|---|---|\n");
    for r in &report.rows {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} |",
            r.model,
            score(r.precision),
            score(r.recall),
            score(r.map50)
        );
    }
    out.push_str("\n## Compute cost\n\n");
    out.push_str(
        "| Model | Training time (min) | Testing time (ms) | FLOPs/image | Parameters |\n\
         |---|---|---|---|---|\n",
    );
    for r in &report.rows {
        let _ = writeln!(
            out,
            "| {} | {:.1} | {:.1} | {} | {} |",
            r.model,
            r.train_s / 60.0,
            r.test_ms,
            r.flops,
            r.params
        );
    }
    out
}

pub fn render_report(report: &BenchReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => render_csv(report),
        ReportFormat::Markdown => render_markdown(report),
    }
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

/// Rows of a CSV report as written by [`render_report`].
pub fn parse_report_csv(text: &str) -> Result<Vec<BenchRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        _ => return Err(parse_err(1, "missing report header")),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(parse_err(n, format!("expected 8 fields, got {}", f.len())));
        }
        let opt = |s: &str| -> Result<Option<f64>> {
            if s == UNDEFINED {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| parse_err(n, format!("bad number {s:?}")))
            }
        };
        let real = |s: &str| -> Result<f64> { s.parse().map_err(|_| parse_err(n, format!("bad number {s:?}"))) };
        let int = |s: &str| -> Result<u64> { s.parse().map_err(|_| parse_err(n, format!("bad integer {s:?}"))) };
        rows.push(BenchRow {
            model: f[0].to_string(),
            precision: opt(f[1])?,
            recall: opt(f[2])?,
            map50: opt(f[3])?,
            train_s: real(f[4])?,
            test_ms: real(f[5])?,
            flops: int(f[6])?,
            params: int(f[7])?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(model: &str) -> BenchRow {
        BenchRow {
            model: model.into(),
            precision: Some(0.887),
            recall: Some(0.9),
            map50: Some(0.932),
            train_s: 101.0 * 60.0,
            test_ms: 11.9,
            flops: 123_456,
            params: 789,
        }
    }

    fn report(rows: Vec<BenchRow>) -> BenchReport {
        BenchReport {
            rows,
            fingerprint: "00ff".into(),
            seed: 7,
            epochs: 3,
            train_samples: 8,
            test_samples: 2,
        }
    }

    #[test]
    fn score_row_fixture() {
        let csv = render_report(&report(vec![row("hybrid")]), ReportFormat::Csv);
        assert_eq!(
            csv,
            format!("{CSV_HEADER}\nhybrid,0.887,0.900,0.932,6060.000,11.900,123456,789\n")
        );
        let md = render_report(&report(vec![row("hybrid")]), ReportFormat::Markdown);
        assert!(md.contains("| hybrid | 0.887 | 0.900 | 0.932 |"));
    }

    #[test]
    fn time_row_fixture() {
        let md = render_report(&report(vec![row("hybrid")]), ReportFormat::Markdown);
        assert!(md.contains("| hybrid | 101.0 | 11.9 | 123456 | 789 |"), "{md}");
    }

    #[test]
    fn zero_rows_header_only() {
        assert_eq!(render_report(&report(vec![]), ReportFormat::Csv), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn undefined_scores() {
        let mut r = row("plain");
        r.precision = None;
        let rep = report(vec![r.clone()]);
        let csv = render_report(&rep, ReportFormat::Csv);
        assert!(csv.contains("plain,—,0.900"));
        assert!(render_report(&rep, ReportFormat::Markdown).contains("| plain | — |"));
        assert_eq!(parse_report_csv(&csv).unwrap()[0].precision, None);
    }

    #[test]
    fn csv_round_trip() {
        let rep = report(vec![row("hybrid"), row("plain")]);
        let csv = render_report(&rep, ReportFormat::Csv);
        let parsed = parse_report_csv(&csv).unwrap();
        assert_eq!(parsed, rep.rows);
        let again = render_report(&report(parsed), ReportFormat::Csv);
        assert_eq!(again, csv);
    }

    #[test]
    fn delta_sign_recorded() {
        let mut p = row("plain");
        p.map50 = Some(0.906);
        let rep = report(vec![row("hybrid"), p]);
        assert!((rep.map50_delta().unwrap() - 0.026).abs() < 1e-12);
        let md = render_report(&rep, ReportFormat::Markdown);
        assert!(md.contains("+0.026 (hybrid ahead)"));
    }

    #[test]
    fn bad_csv() {
        assert!(parse_report_csv("").is_err());
        assert!(parse_report_csv(&format!("{CSV_HEADER}\na,b\n")).is_err());
    }
}
