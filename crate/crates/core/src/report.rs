//! Tabular and graphical output: indicator CSV, SVG indicator plots and
//! JSON report flattening.

use std::fmt::Write as _;

use serde_json::Value;

use std::collections::BTreeMap;

use crate::encoding::{Indicator, IndicatorSeries};
use crate::error::{Error, Result};
use crate::types::{EventSet, EventType};

/// One row per frame: `frame, boundary, f_<type>, b_<type>, ...`.
pub fn indicators_csv(series: &IndicatorSeries) -> String {
    let mut out = String::from("frame,boundary");
    for event in series.channels.keys() {
        let name = event.name();
        write!(out, ",f_{name},b_{name}").unwrap();
    }
    out.push('\n');
    for t in 0..series.len() {
        write!(out, "{t},{}", u8::from(series.boundary.get(t).copied().unwrap_or(false))).unwrap();
        for ind in series.channels.values() {
            // Adding zero turns -0 into 0.
            write!(out, ",{},{}", ind.forward[t] + 0.0, ind.backward[t] + 0.0).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Read a file written by [`indicators_csv`] back into a series with the
/// given `t_max`.
pub fn parse_indicators_csv(text: &str, t_max: usize) -> Result<IndicatorSeries> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::Schema("indicator file is empty".into()))?
        .split(',')
        .collect();
    if header.len() < 2 || header[0] != "frame" || header[1] != "boundary" || header.len() % 2 != 0 {
        return Err(Error::Schema("indicator file: unexpected header".into()));
    }
    let mut events = Vec::new();
    for pair in header[2..].chunks(2) {
        let name = pair[0]
            .strip_prefix("f_")
            .filter(|n| pair[1].strip_prefix("b_") == Some(*n))
            .ok_or_else(|| Error::Schema(format!("indicator file: bad column pair {pair:?}")))?;
        events.push(name.parse::<EventType>()?);
    }
    let mut boundary = Vec::new();
    let mut columns = vec![Vec::new(); header.len() - 2];
    for (row, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != header.len() || cells[0].parse::<usize>().ok() != Some(row) {
            return Err(Error::Schema(format!("indicator file: malformed row {}", row + 2)));
        }
        boundary.push(cells[1] == "1");
        for (col, cell) in columns.iter_mut().zip(&cells[2..]) {
            col.push(
                cell.parse::<f64>()
                    .map_err(|e| Error::Schema(format!("indicator file row {}: {e}", row + 2)))?,
            );
        }
    }
    let mut channels = BTreeMap::new();
    let mut cols = columns.into_iter();
    for event in events {
        let forward = cols.next().expect("two columns per event");
        let backward = cols.next().expect("two columns per event");
        channels.insert(event, Indicator { forward, backward });
    }
    Ok(IndicatorSeries { t_max, channels, boundary })
}

const PANEL_H: f64 = 180.0;
const MARGIN: f64 = 40.0;
const WIDTH: f64 = 960.0;

/// Static plot of predicted indicators, one panel per event type.
///
/// Forward indicators are drawn in blue, backward ones in orange, extracted
/// events as solid red lines and ground-truth events (if given) as dashed
/// green lines. Boundary frames are shaded.
pub fn indicator_plot_svg(
    series: &IndicatorSeries,
    predicted: &EventSet,
    truth: Option<&EventSet>,
    title: &str,
) -> String {
    let n = series.len().max(1);
    let panels = series.channels.len().max(1);
    let height = MARGIN * 2.0 + PANEL_H * panels as f64;
    let plot_w = WIDTH - 2.0 * MARGIN;
    let x_of = |t: f64| MARGIN + plot_w * t / (n.max(2) - 1) as f64;
    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(svg, r#"<text x="{MARGIN}" y="20" font-size="14">{}</text>"#, escape(title)).unwrap();

    for (i, (event, ind)) in series.channels.iter().enumerate() {
        let top = MARGIN + PANEL_H * i as f64;
        let inner = PANEL_H - 20.0;
        // Indicator values lie in [-1, 1].
        let y_of = |v: f64| top + inner * (1.0 - v.clamp(-1.2, 1.2)) / 2.0;
        writeln!(svg, r#"<g class="panel" data-event="{}">"#, event.name()).unwrap();
        for (t, _) in series.boundary.iter().enumerate().filter(|(_, b)| **b) {
            let x0 = x_of(t as f64 - 0.5).max(MARGIN);
            let x1 = x_of(t as f64 + 0.5).min(MARGIN + plot_w);
            writeln!(
                svg,
                r##"<rect x="{x0:.2}" y="{top:.2}" width="{:.2}" height="{inner:.2}" fill="#eeeeee"/>"##,
                (x1 - x0).max(0.0)
            )
            .unwrap();
        }
        writeln!(
            svg,
            r##"<rect x="{MARGIN}" y="{top:.2}" width="{plot_w}" height="{inner:.2}" fill="none" stroke="#888888"/>"##
        )
        .unwrap();
        let zero = y_of(0.0);
        writeln!(
            svg,
            r##"<line x1="{MARGIN}" y1="{zero:.2}" x2="{:.2}" y2="{zero:.2}" stroke="#bbbbbb"/>"##,
            MARGIN + plot_w
        )
        .unwrap();
        writeln!(svg, r#"<text x="{MARGIN}" y="{:.2}">{}</text>"#, top - 4.0, event.name()).unwrap();
        for (values, color, class) in [(&ind.forward, "#1f77b4", "forward"), (&ind.backward, "#ff7f0e", "backward")] {
            let pts: Vec<String> = values
                .iter()
                .enumerate()
                .map(|(t, &v)| format!("{:.2},{:.2}", x_of(t as f64), y_of(v)))
                .collect();
            writeln!(
                svg,
                r#"<polyline class="{class}" fill="none" stroke="{color}" stroke-width="1.2" points="{}"/>"#,
                pts.join(" ")
            )
            .unwrap();
        }
        let markers = |svg: &mut String, events: &EventSet, class: &str, style: &str| {
            for &t in events.occurrences(*event) {
                let x = x_of(t as f64);
                writeln!(
                    svg,
                    r#"<line class="{class}" data-frame="{t}" x1="{x:.2}" y1="{top:.2}" x2="{x:.2}" y2="{:.2}" {style}/>"#,
                    top + inner
                )
                .unwrap();
            }
        };
        markers(&mut svg, predicted, "predicted", r##"stroke="#d62728" stroke-width="1.5""##);
        if let Some(gt) = truth {
            markers(&mut svg, gt, "truth", r##"stroke="#2ca02c" stroke-width="1.5" stroke-dasharray="4 3""##);
        }
        writeln!(svg, "</g>").unwrap();
    }
    writeln!(svg, "</svg>").unwrap();
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Flatten a JSON report into CSV.
///
/// The rows are taken from the top-level array, or from the first array
/// found among the top-level fields. Columns are the union of the row keys
/// in order of first appearance; nested values are written as JSON.
pub fn json_to_csv(report: &Value) -> Result<String> {
    let rows = match report {
        Value::Array(a) => a,
        Value::Object(map) => map
            .values()
            .find_map(|v| v.as_array())
            .ok_or_else(|| Error::Schema("report has no array of rows".into()))?,
        _ => return Err(Error::Schema("report must be an object or array".into())),
    };
    let mut columns: Vec<String> = Vec::new();
    for row in rows {
        let obj = row
            .as_object()
            .ok_or_else(|| Error::Schema("report rows must be objects".into()))?;
        for k in obj.keys() {
            if !columns.contains(k) {
                columns.push(k.clone());
            }
        }
    }
    let mut out = columns.iter().map(|c| csv_field(c)).collect::<Vec<_>>().join(",");
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = columns
            .iter()
            .map(|c| match row.get(c) {
                None | Some(Value::Null) => String::new(),
                Some(Value::String(s)) => csv_field(s),
                Some(v @ (Value::Number(_) | Value::Bool(_))) => v.to_string(),
                Some(v) => csv_field(&v.to_string()),
            })
            .collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    Ok(out)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
