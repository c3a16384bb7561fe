//! Result files. Everything is written to a temporary file in the target
//! directory and renamed into place, so an interrupted run never leaves a
//! truncated file behind.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mechanisms::OfferRecord;
use crate::prediction::WalkTrace;

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// One JSON document per line.
pub fn to_jsonl<T: Serialize>(items: &[T]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.push(b'\n');
    }
    Ok(out)
}

pub fn from_jsonl<T: serde::de::DeserializeOwned>(text: &str) -> Result<Vec<T>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

fn csv_bytes(fill: impl FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> csv::Result<()>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut writer = csv::Writer::from_writer(&mut out);
        fill(&mut writer)?;
        writer.flush().map_err(|e| Error::io("<memory>", e))?;
    }
    Ok(out)
}

/// Offer ledgers of many trials as one CSV.
pub fn ledger_csv<'a>(ledgers: impl IntoIterator<Item = (u64, &'a [OfferRecord])>) -> Result<Vec<u8>> {
    csv_bytes(|w| {
        w.write_record(["trial", "period", "phase", "round", "agent", "price", "threshold", "accepted", "budget_after"])?;
        for (trial, ledger) in ledgers {
            for r in ledger {
                w.write_record([
                    trial.to_string(),
                    r.period.as_str().to_string(),
                    r.phase.to_string(),
                    r.round.to_string(),
                    r.agent.to_string(),
                    r.price.to_string(),
                    r.threshold.to_string(),
                    r.accepted.to_string(),
                    r.budget_after.to_string(),
                ])?;
            }
        }
        Ok(())
    })
}

/// Walk traces as `(trial, step, state, threshold, hit)` rows; the final
/// state of each walk has an empty `hit`.
pub fn walk_csv<'a>(walks: impl IntoIterator<Item = (u64, &'a WalkTrace)>) -> Result<Vec<u8>> {
    csv_bytes(|w| {
        w.write_record(["trial", "step", "state", "threshold", "hit"])?;
        for (trial, walk) in walks {
            for (step, (state, threshold)) in walk.states.iter().zip(&walk.thresholds).enumerate() {
                let hit = walk.hits.get(step).map(|h| u8::from(*h).to_string()).unwrap_or_default();
                w.write_record([trial.to_string(), step.to_string(), state.to_string(), threshold.to_string(), hit])?;
            }
        }
        Ok(())
    })
}

/// Header plus rows of already-formatted cells.
pub fn table_csv(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    csv_bytes(|w| {
        w.write_record(header)?;
        for row in rows {
            w.write_record(row)?;
        }
        Ok(())
    })
}

/// A named polyline for [`line_chart_svg`].
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Minimal self-contained SVG line chart with a log2 x axis.
pub fn line_chart_svg(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (width, height, margin) = (640.0, 400.0, 60.0);
    let points = series.iter().flat_map(|s| s.points.iter()).filter(|p| p.0 > 0.0 && p.1.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64, f64::NEG_INFINITY);
    for &(x, y) in points {
        x0 = x0.min(x.log2());
        x1 = x1.max(x.log2());
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y1) = (0.0, 1.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| margin + (x.log2() - x0) / (x1 - x0) * (width - 2.0 * margin);
    let sy = |y: f64| height - margin - (y - y0) / (y1 - y0) * (height - 2.0 * margin);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n\
         <line x1=\"{margin}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{margin}\" y1=\"{margin}\" x2=\"{margin}\" y2=\"{}\" stroke=\"black\"/>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n\
         <text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>\n",
        width / 2.0,
        escape(title),
        height - margin,
        width - margin,
        height - margin,
        height - margin,
        width / 2.0,
        height - 16.0,
        escape(x_label),
        height / 2.0,
        height / 2.0,
        escape(y_label),
    );
    for tick in 0..=4 {
        let y = y0 + (y1 - y0) * f64::from(tick) / 4.0;
        svg += &format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n",
            margin - 6.0,
            sy(y) + 4.0,
            format_tick(y)
        );
    }
    let mut exponent = x0.ceil();
    while exponent <= x1 {
        let x = exponent.exp2();
        svg += &format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">2^{}</text>\n",
            sx(x),
            height - margin + 16.0,
            exponent
        );
        exponent += 1.0;
    }
    for (i, s) in series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = s
            .points
            .iter()
            .filter(|p| p.0 > 0.0 && p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        svg += &format!(
            "<polyline fill=\"none\" stroke=\"{colour}\" stroke-width=\"2\" points=\"{}\"/>\n",
            path.join(" ")
        );
        for p in &path {
            let (cx, cy) = p.split_once(',').expect("formatted pair");
            svg += &format!("<circle cx=\"{cx}\" cy=\"{cy}\" r=\"3\" fill=\"{colour}\"/>\n");
        }
        svg += &format!(
            "<text x=\"{}\" y=\"{}\" fill=\"{colour}\">{}</text>\n",
            width - margin - 120.0,
            margin + 16.0 * i as f64,
            escape(&s.name)
        );
    }
    svg += "</svg>\n";
    svg
}

fn format_tick(y: f64) -> String {
    if y.abs() >= 1000.0 || (y != 0.0 && y.abs() < 0.01) {
        format!("{y:.2e}")
    } else {
        format!("{y:.2}")
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanisms::Period;

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested").join("out.txt");
        write_atomic(&path, b"first").unwrap();
        write_atomic(&path, b"second").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "second");
        assert_eq!(std::fs::read_dir(path.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn jsonl_round_trip() {
        let items = vec![vec![1.0, 2.5], vec![], vec![0.1]];
        let bytes = to_jsonl(&items).unwrap();
        let back: Vec<Vec<f64>> = from_jsonl(std::str::from_utf8(&bytes).unwrap()).unwrap();
        assert_eq!(back, items);
    }

    #[test]
    fn ledger_columns() {
        let record = OfferRecord {
            period: Period::Exploitation,
            phase: 3,
            round: 7,
            agent: 11,
            price: 0.25,
            threshold: 4.0,
            marginal: 1.0,
            accepted: true,
            budget_after: 0.75,
        };
        let text = String::from_utf8(ledger_csv([(2, std::slice::from_ref(&record))]).unwrap()).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("trial,period,phase,round,agent,price,threshold,accepted,budget_after"));
        assert_eq!(lines.next(), Some("2,exploitation,3,7,11,0.25,4,true,0.75"));
    }

    #[test]
    fn svg_is_well_formed() {
        let svg = line_chart_svg(
            "ratio <by> n",
            "n",
            "OPT / E[value]",
            &[Series {
                name: "posted".into(),
                points: vec![(16384.0, 40.0), (65536.0, 42.0), (262144.0, 41.0)],
            }],
        );
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("&lt;by&gt;"));
        assert_eq!(svg.matches("<circle").count(), 3);
    }
}
