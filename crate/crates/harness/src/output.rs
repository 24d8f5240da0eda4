//! Files written for an experiment.
//!
//! ```text
//! manifest.json       configuration, resolved settings, per-run outcome
//! runs/run_NNN.jsonl  every emitted metrics row of run NNN
//! aggregate.csv       across-run statistics at the table steps
//! table.md            the same rows with a runtime column
//! error_curve.csv     mean relative error at every emitted step
//! loss_curve.csv      mean loss at every emitted step
//! ```
//!
//! Everything except the manifest, the run logs and `table.md` is a pure
//! function of the configuration: wall-clock time only enters those three.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use anyhow::{bail, Context};
use deep2bsde_core::MetricsRow;

use crate::aggregate::AggregateRow;

pub const AGGREGATE_HEADER: &str =
    "step,runs_ok,runs_failed,mean_u,std_u,mean_rel_l1_error,std_rel_l1_error,mean_loss";
pub const TABLE_COLUMNS: [&str; 7] = [
    "Training steps",
    "Mean u",
    "Std u",
    "Mean rel. L1 error",
    "Std rel. L1 error",
    "Mean loss",
    "Runtime (s)",
];

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut out = String::from(AGGREGATE_HEADER);
    out.push('\n');
    for r in rows {
        let e = r.rel_l1_error;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.step,
            r.runs_ok,
            r.runs_failed,
            r.u.mean,
            r.u.std,
            opt(e.map(|m| m.mean)),
            opt(e.map(|m| m.std)),
            r.mean_loss
        )
        .unwrap();
    }
    out
}

pub fn table_markdown(title: &str, rows: &[AggregateRow]) -> String {
    let mut out = format!("### {}\n\n| {} |\n|", title, TABLE_COLUMNS.join(" | "));
    out.push_str(&"---|".repeat(TABLE_COLUMNS.len()));
    out.push('\n');
    let fmt = |v: Option<f64>| v.map(|v| format!("{:.5}", v)).unwrap_or_else(|| "n/a".into());
    for r in rows {
        let e = r.rel_l1_error;
        writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} | {:.1} |",
            r.step,
            fmt(Some(r.u.mean)),
            fmt(Some(r.u.std)),
            fmt(e.map(|m| m.mean)),
            fmt(e.map(|m| m.std)),
            fmt(Some(r.mean_loss)),
            r.mean_seconds
        )
        .unwrap();
    }
    if let Some(r) = rows.first() {
        if r.runs_failed > 0 {
            writeln!(out, "\n{} run(s) failed and are excluded from the statistics.", r.runs_failed).unwrap();
        }
    }
    out
}

/// `(step, mean relative error)` per emitted step. Fails without a reference.
pub fn error_curve_csv(rows: &[AggregateRow]) -> anyhow::Result<String> {
    if rows.is_empty() {
        bail!("no successful run to draw curves from");
    }
    let mut out = String::from("step,mean_rel_l1_error\n");
    for r in rows {
        let Some(e) = r.rel_l1_error else { bail!("no reference value, so no error curve") };
        writeln!(out, "{},{}", r.step, e.mean).unwrap();
    }
    Ok(out)
}

pub fn loss_curve_csv(rows: &[AggregateRow]) -> anyhow::Result<String> {
    if rows.is_empty() {
        bail!("no successful run to draw curves from");
    }
    let mut out = String::from("step,mean_loss\n");
    for r in rows {
        writeln!(out, "{},{}", r.step, r.mean_loss).unwrap();
    }
    Ok(out)
}

/// Least-squares slope of the mean error over the last tenth of the curve.
/// Positive means the error was still rising at the end.
pub fn tail_slope(rows: &[AggregateRow]) -> Option<f64> {
    let tail = &rows[rows.len() - (rows.len() / 10).max(2).min(rows.len())..];
    let pts: Vec<(f64, f64)> = tail.iter().map(|r| Some((r.step as f64, r.rel_l1_error?.mean))).collect::<Option<_>>()?;
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    Some(sxy / sxx)
}

pub fn write_jsonl(path: &Path, rows: &[MetricsRow]) -> anyhow::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for r in rows {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> anyhow::Result<Vec<MetricsRow>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines().map(|l| serde_json::from_str(l).map_err(Into::into)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregate::Moments;

    fn row(step: u64, err: Option<f64>) -> AggregateRow {
        AggregateRow {
            step,
            runs_ok: 2,
            runs_failed: 0,
            u: Moments { mean: 0.25, std: 0.5 },
            rel_l1_error: err.map(|mean| Moments { mean, std: 0.0 }),
            mean_loss: 1.5,
            mean_seconds: 3.25,
        }
    }

    #[test]
    fn csv_layout() {
        let csv = aggregate_csv(&[row(0, Some(0.125)), row(10, None)]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], AGGREGATE_HEADER);
        assert_eq!(lines[1], "0,2,0,0.25,0.5,0.125,0,1.5");
        assert_eq!(lines[2], "10,2,0,0.25,0.5,,,1.5");
    }

    #[test]
    fn table_has_one_line_per_row_plus_header() {
        let t = table_markdown("x", &[row(0, Some(0.1)), row(5, Some(0.05))]);
        let body: Vec<&str> = t.lines().filter(|l| l.starts_with('|')).collect();
        assert_eq!(body.len(), 4);
        assert_eq!(body[0].matches('|').count(), TABLE_COLUMNS.len() + 1);
        assert!(body[3].contains("3.2"));
    }

    #[test]
    fn curves_need_rows_and_a_reference() {
        assert!(loss_curve_csv(&[]).is_err());
        assert!(error_curve_csv(&[row(0, None)]).is_err());
        assert_eq!(error_curve_csv(&[row(0, Some(0.5))]).unwrap(), "step,mean_rel_l1_error\n0,0.5\n");
    }

    #[test]
    fn tail_slope_sign() {
        let falling: Vec<AggregateRow> = (0..50).map(|m| row(m, Some(1.0 / (m + 1) as f64))).collect();
        assert!(tail_slope(&falling).unwrap() < 0.0);
        let rising: Vec<AggregateRow> = (0..50).map(|m| row(m, Some(m as f64))).collect();
        assert!(tail_slope(&rising).unwrap() > 0.0);
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        let rows = vec![
            MetricsRow { run: 0, step: 0, u_estimate: 0.1, loss: 2.0, rel_l1_error: None, seconds: 0.0 },
            MetricsRow { run: 0, step: 1, u_estimate: 0.2, loss: 1.0, rel_l1_error: Some(0.3), seconds: 0.5 },
        ];
        write_jsonl(&path, &rows).unwrap();
        assert_eq!(read_jsonl(&path).unwrap(), rows);
    }
}
