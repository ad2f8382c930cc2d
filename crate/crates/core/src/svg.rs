//! ROC plot as a small standalone SVG document.
//!
//! The chart holds exactly two `<polyline>` elements, one per aggregation
//! method, with one vertex per ROC point. Axes, grid and the chance diagonal
//! are drawn with `<line>` and `<rect>` so tests can count polylines.

use std::fmt::Write as _;

use crate::metrics::RocCurve;

const SIZE: f64 = 480.0;
const MARGIN: f64 = 60.0;
const PLOT: f64 = SIZE - 2.0 * MARGIN;

pub struct Series<'a> {
    pub label: &'a str,
    pub color: &'a str,
    pub curve: &'a RocCurve,
}

fn to_px(fpr: f64, tpr: f64) -> (f64, f64) {
    (MARGIN + fpr * PLOT, MARGIN + (1.0 - tpr) * PLOT)
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders the curves over the unit square with a dashed chance diagonal
/// and an `AUC = x.xxx` annotation per series.
pub fn roc_svg(title: &str, series: &[Series<'_>]) -> String {
    let mut s = String::new();
    s.push_str(&format!(
            "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" \
             width=\"{SIZE}\" height=\"{SIZE}\" viewBox=\"0 0 {SIZE} {SIZE}\" font-family=\"sans-serif\">\n"
        ));
    s.push_str(&format!("<rect x=\"0\" y=\"0\" width=\"{SIZE}\" height=\"{SIZE}\" fill=\"white\"/>\n"));
    s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"16\">{}</text>\n",
            SIZE / 2.0,
            MARGIN / 2.0,
            escape(title)
        ));

    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let (x, _) = to_px(t, 0.0);
        let (_, y) = to_px(0.0, t);
        s.push_str(&format!(
                "<line x1=\"{x}\" y1=\"{MARGIN}\" x2=\"{x}\" y2=\"{}\" stroke=\"#eeeeee\"/>\n\
                 <line x1=\"{MARGIN}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"#eeeeee\"/>\n\
                 <text x=\"{x}\" y=\"{}\" text-anchor=\"middle\" font-size=\"11\">{t:.2}</text>\n\
                 <text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-size=\"11\">{t:.2}</text>\n",
                MARGIN + PLOT,
                MARGIN + PLOT,
                MARGIN + PLOT + 16.0,
                MARGIN - 6.0,
                y + 4.0
            ));
    }
    s.push_str(&format!("<rect x=\"{MARGIN}\" y=\"{MARGIN}\" width=\"{PLOT}\" height=\"{PLOT}\" fill=\"none\" stroke=\"black\"/>\n"));
    let (x0, y0) = to_px(0.0, 0.0);
    let (x1, y1) = to_px(1.0, 1.0);
    s.push_str(&format!(
            "<line class=\"chance\" x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y1}\" stroke=\"grey\" stroke-dasharray=\"6 4\"/>\n"
        ));
    s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"13\">False positive rate</text>\n\
             <text x=\"16\" y=\"{}\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 16 {})\">True positive rate</text>\n",
            SIZE / 2.0,
            SIZE - 14.0,
            SIZE / 2.0,
            SIZE / 2.0
        ));

    for (i, series) in series.iter().enumerate() {
        let mut pts = String::new();
        for (j, p) in series.curve.points.iter().enumerate() {
            let (x, y) = to_px(p.fpr, p.tpr);
            if j > 0 {
                pts.push(' ');
            }
            write!(pts, "{x:.2},{y:.2}").expect("write to string");
        }
        s.push_str(&format!(
                "<polyline class=\"roc\" data-label=\"{label}\" points=\"{pts}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
                label = escape(series.label),
                color = series.color
            ));
        let ly = MARGIN + PLOT - 16.0 - 20.0 * i as f64;
        s.push_str(&format!(
                "<text x=\"{}\" y=\"{ly}\" text-anchor=\"end\" font-size=\"13\" fill=\"{}\">{} (AUC = {:.3})</text>\n",
                MARGIN + PLOT - 10.0,
                series.color,
                escape(series.label),
                series.curve.auc
            ));
    }
    s.push_str("</svg>\n");
    s
}

/// Number of vertices in each `<polyline>` of `svg`, in document order.
pub fn polyline_vertex_counts(svg: &str) -> Vec<usize> {
    svg.split("<polyline")
        .skip(1)
        .filter_map(|el| {
            let start = el.find("points=\"")? + "points=\"".len();
            let end = el[start..].find('"')? + start;
            Some(el[start..end].split_whitespace().count())
        })
        .collect()
}
