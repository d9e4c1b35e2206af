// SPDX-License-Identifier: MIT OR Apache-2.0

//! CSV, NDJSON and SVG output of analysis results.

use std::fmt::Write as _;
use std::io::Write;

use serde::Serialize;

use super::{PruneReport, UtilizationMatrix};
use crate::error::{Error, Result};

/// One JSON object per line.
pub fn write_ndjson_records<T: Serialize, W: Write>(records: &[T], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").map_err(|e| Error::io("<ndjson writer>", e))?;
    }
    Ok(())
}

/// Header row from the field names of `T`, then one row per record.
pub fn write_csv<T: Serialize, W: Write>(records: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io {
        path: "<csv writer>".into(),
        source: std::io::Error::other(e.to_string()),
    }
}

#[derive(Serialize)]
struct PruneCsvRow {
    t: String,
    p: String,
    class: String,
    correct: usize,
    total: usize,
    accuracy: f64,
}

/// Rows `(t, p, class)` plus pooled `class = all` rows and a leading
/// `baseline` row.
pub fn write_prune_csv<W: Write>(report: &PruneReport, out: W) -> Result<()> {
    let total: usize = report.splits.iter().map(|s| s.test.len()).sum();
    let mut rows = vec![PruneCsvRow {
        t: "baseline".into(),
        p: "0".into(),
        class: "all".into(),
        correct: (report.baseline * total as f64).round() as usize,
        total,
        accuracy: report.baseline,
    }];
    rows.extend(report.rows.iter().map(|r| PruneCsvRow {
        t: r.t.to_string(),
        p: r.p.to_string(),
        class: r.class.map_or_else(|| "all".into(), |c| c.to_string()),
        correct: r.correct,
        total: r.total,
        accuracy: r.accuracy,
    }));
    write_csv(&rows, out)
}

#[derive(Serialize)]
struct FrequencyRow {
    class: usize,
    layer: usize,
    channel: usize,
    count: u64,
    normalized: f64,
}

/// Long-format selection frequencies, one row per nonzero count, for
/// per-layer distribution plots.
pub fn write_frequency_csv<W: Write>(matrices: &[UtilizationMatrix], out: W) -> Result<()> {
    let mut rows = Vec::new();
    for m in matrices {
        for (l, (counts, norm)) in m.counts.iter().zip(&m.normalized).enumerate() {
            for (c, (&count, &normalized)) in counts.iter().zip(norm).enumerate() {
                if count > 0 {
                    rows.push(FrequencyRow {
                        class: m.class,
                        layer: l + 1,
                        channel: c,
                        count,
                        normalized,
                    });
                }
            }
        }
    }
    write_csv(&rows, out)
}

/// Line chart of pooled accuracy against the mask fraction, one line per
/// retained count, with the unpruned baseline dashed.
pub fn prune_curve_svg(report: &PruneReport) -> String {
    const W: f64 = 480.0;
    const H: f64 = 320.0;
    const PAD: f64 = 48.0;
    let x = |p: f64| PAD + p * (W - 2.0 * PAD);
    let y = |a: f64| H - PAD - a * (H - 2.0 * PAD);
    let palette = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02"];
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<path d="M{x0} {y1} L{x0} {y0} L{x1} {y0}" stroke="black" fill="none"/>"#,
        x0 = x(0.0),
        x1 = x(1.0),
        y0 = y(0.0),
        y1 = y(1.0)
    );
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{tick}</text>"#, x(tick), y(0.0) + 16.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{tick}</text>"#, x(0.0) - 6.0, y(tick) + 4.0);
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">mask fraction p</text>"#, W / 2.0, H - 10.0);
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">accuracy</text>"#,
        H / 2.0,
        H / 2.0
    );
    let _ = writeln!(
        svg,
        r##"<line x1="{}" y1="{b}" x2="{}" y2="{b}" stroke="#555" stroke-dasharray="4 3"/>"##,
        x(0.0),
        x(1.0),
        b = y(report.baseline)
    );
    for (i, &t) in report.config.t_values.iter().enumerate() {
        let mut pts: Vec<(f64, f64)> = report
            .rows
            .iter()
            .filter(|r| r.class.is_none() && r.t == t)
            .map(|r| (r.p, r.accuracy))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let colour = palette[i % palette.len()];
        let d: Vec<String> = pts.iter().map(|&(p, a)| format!("{:.2},{:.2}", x(p), y(a))).collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="2"/>"#,
            d.join(" ")
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" fill="{colour}">t={t}</text>"#,
            W - PAD + 4.0,
            PAD + 14.0 * i as f64
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Row {
        a: usize,
        b: f64,
    }

    #[test]
    fn csv_has_header_and_rows() {
        let mut out = Vec::new();
        write_csv(&[Row { a: 1, b: 0.5 }, Row { a: 2, b: -1.0 }], &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "a,b\n1,0.5\n2,-1.0\n");
    }

    #[test]
    fn ndjson_lines() {
        let mut out = Vec::new();
        write_ndjson_records(&[Row { a: 3, b: 1.0 }], &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "{\"a\":3,\"b\":1.0}\n");
    }
}
