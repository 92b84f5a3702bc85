//! Dependency-free SVG line charts for run logs and easiness traces.

use std::fmt::Write as _;

use super::runlog::RunLog;
use crate::curriculum::{summarize_trace, EasinessTraceRow, Phase};
use crate::error::{DcrError, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 48.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// A named series of `(x, y)` points.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(name: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Series {
            name: name.into(),
            points,
        }
    }
}

fn bounds(series: &[Series]) -> Option<(f64, f64, f64, f64)> {
    let pts = series.iter().flat_map(|s| s.points.iter()).filter(|(x, y)| x.is_finite() && y.is_finite());
    let mut b: Option<(f64, f64, f64, f64)> = None;
    for &(x, y) in pts {
        b = Some(match b {
            None => (x, x, y, y),
            Some((x0, x1, y0, y1)) => (x0.min(x), x1.max(x), y0.min(y), y1.max(y)),
        });
    }
    b.map(|(x0, x1, y0, y1)| {
        let (x1, y1) = (if x1 > x0 { x1 } else { x0 + 1.0 }, if y1 > y0 { y1 } else { y0 + 1.0 });
        (x0, x1, y0, y1)
    })
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders series as an SVG line chart with axis extents and a legend.
pub fn line_chart_svg(title: &str, x_label: &str, series: &[Series]) -> Result<String> {
    let (x0, x1, y0, y1) =
        bounds(series).ok_or_else(|| DcrError::Invalid(format!("chart {title:?} has no finite points")))?;
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let (left, right, top, bottom) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        svg,
        r#"<polyline points="{left},{top} {left},{bottom} {right},{bottom}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(svg, r#"<text x="{left}" y="{}" text-anchor="middle">{x0}</text>"#, bottom + 14.0);
    let _ = writeln!(svg, r#"<text x="{right}" y="{}" text-anchor="middle">{x1}</text>"#, bottom + 14.0);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        bottom + 30.0,
        escape(x_label)
    );
    let _ = writeln!(svg, r#"<text x="{}" y="{bottom}" text-anchor="end">{y0:.4}</text>"#, left - 4.0);
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{y1:.4}</text>"#, left - 4.0, top + 4.0);
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            pts.join(" ")
        );
        let ly = top + 14.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{ly}" text-anchor="end" fill="{color}">{}</text>"#,
            right,
            escape(&s.name)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Charts for a run log as `(file stem, svg)`: training losses, learning
/// rate, and, when present, order pre-training, validation top-1 and
/// easiness statistics.
pub fn run_log_charts(log: &RunLog) -> Result<Vec<(String, String)>> {
    let mut charts = Vec::new();
    let train: Vec<_> = log.phase_rows(Phase::Train).collect();
    let pre: Vec<_> = log.phase_rows(Phase::Pretrain).collect();
    let ep = |r: &&super::runlog::RunLogRow| r.epoch as f64;
    if !train.is_empty() {
        let series = vec![
            Series::new("total", train.iter().map(|r| (ep(r), r.total)).collect()),
            Series::new("rec", train.iter().map(|r| (ep(r), r.losses.rec)).collect()),
            Series::new("cls", train.iter().map(|r| (ep(r), r.losses.cls())).collect()),
        ];
        charts.push(("losses".to_string(), line_chart_svg("Training losses", "epoch", &series)?));
        let lr = vec![Series::new("lr", train.iter().map(|r| (ep(r), r.lr)).collect())];
        charts.push(("lr".to_string(), line_chart_svg("Learning rate", "epoch", &lr)?));
        let val: Vec<(f64, f64)> = train
            .iter()
            .filter_map(|r| r.val.as_ref().and_then(|v| v.action()).map(|m| (ep(r), m.top1)))
            .collect();
        if !val.is_empty() {
            charts.push((
                "val_top1".to_string(),
                line_chart_svg("Validation top-1", "epoch", &[Series::new("action top-1", val)])?,
            ));
        }
        let t: Vec<_> = train.iter().filter_map(|r| r.easiness.map(|e| (ep(r), e))).collect();
        if !t.is_empty() {
            let series = vec![
                Series::new("min", t.iter().map(|(x, e)| (*x, e.min)).collect()),
                Series::new("mean", t.iter().map(|(x, e)| (*x, e.mean)).collect()),
                Series::new("max", t.iter().map(|(x, e)| (*x, e.max)).collect()),
            ];
            charts.push(("easiness".to_string(), line_chart_svg("Easiness", "epoch", &series)?));
        }
    }
    if !pre.is_empty() {
        let series = vec![Series::new("order loss", pre.iter().filter_map(|r| r.order_loss.map(|v| (ep(r), v))).collect())];
        charts.push(("pretrain_loss".to_string(), line_chart_svg("Order pre-training loss", "epoch", &series)?));
        let acc = vec![Series::new(
            "position accuracy",
            pre.iter().filter_map(|r| r.position_accuracy.map(|v| (ep(r), v))).collect(),
        )];
        charts.push(("pretrain_accuracy".to_string(), line_chart_svg("Position accuracy", "epoch", &acc)?));
    }
    Ok(charts)
}

/// Easiness chart and `epoch,t_min,t_mean,t_max` summary CSV of a trace.
pub fn easiness_trace_chart(rows: &[EasinessTraceRow]) -> Result<(String, String)> {
    let summary = summarize_trace(rows);
    let series = vec![
        Series::new("min", summary.iter().map(|(e, s)| (*e as f64, s.min)).collect()),
        Series::new("mean", summary.iter().map(|(e, s)| (*e as f64, s.mean)).collect()),
        Series::new("max", summary.iter().map(|(e, s)| (*e as f64, s.max)).collect()),
    ];
    let svg = line_chart_svg("Per-instance easiness", "epoch", &series)?;
    let mut csv = String::from("epoch,t_min,t_mean,t_max\n");
    for (e, s) in &summary {
        let _ = writeln!(csv, "{e},{},{},{}", s.min, s.mean, s.max);
    }
    Ok((svg, csv))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_contains_one_polyline_per_series() {
        let s = vec![
            Series::new("a", vec![(1.0, 2.0), (2.0, 1.0)]),
            Series::new("b<c", vec![(1.0, 0.5), (2.0, f64::NAN)]),
        ];
        let svg = line_chart_svg("t", "epoch", &s).unwrap();
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("stroke-width=\"1.5\"").count(), 2);
        assert!(svg.contains("b&lt;c"));
        assert!(line_chart_svg("empty", "x", &[]).is_err());
    }

    #[test]
    fn trace_summary_csv() {
        let rows = vec![
            EasinessTraceRow { epoch: 1, instance_id: "a".into(), t: 1.0, q: Some(0.5) },
            EasinessTraceRow { epoch: 1, instance_id: "b".into(), t: 0.5, q: None },
        ];
        let (_, csv) = easiness_trace_chart(&rows).unwrap();
        assert_eq!(csv.lines().nth(1).unwrap(), "1,0.5,0.75,1");
    }
}
