//! Minimal static SVG emitters for line charts and histograms.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 150.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// One named polyline of `(x, y)` points.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn header(out: &mut String, title: &str) {
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    )
    .unwrap();
    writeln!(out, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).unwrap();
    writeln!(
        out,
        r#"<text x="{:.1}" y="24" font-family="sans-serif" font-size="15" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    )
    .unwrap();
}

fn axes(out: &mut String, x_label: &str, y_label: &str) {
    let (x0, y0, x1, y1) = (MARGIN_LEFT, HEIGHT - MARGIN_BOTTOM, WIDTH - MARGIN_RIGHT, MARGIN_TOP);
    writeln!(out, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#).unwrap();
    writeln!(out, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#).unwrap();
    writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    )
    .unwrap();
    writeln!(
        out,
        r#"<text x="16" y="{:.1}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    )
    .unwrap();
}

fn tick_label(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else {
        format!("{v:.3}")
    }
}

fn span(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        (lo, hi)
    } else {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        (lo - pad, hi + pad)
    }
}

/// Line chart with a log10 y axis. Nonpositive or non-finite y values are
/// skipped.
pub fn line_chart_log_y(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let pts = || series.iter().flat_map(|s| s.points.iter()).filter(|(_, y)| *y > 0.0 && y.is_finite());
    let (xmin, xmax) = pts().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (x, _)| (a.min(*x), b.max(*x)));
    let (lmin, lmax) = pts().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (_, y)| (a.min(y.log10()), b.max(y.log10())));
    let (xmin, xmax) = if xmin.is_finite() { span(xmin, xmax) } else { (0.0, 1.0) };
    let (lmin, lmax) = if lmin.is_finite() { (lmin.floor(), lmax.ceil().max(lmin.floor() + 1.0)) } else { (-1.0, 0.0) };
    let px = |x: f64| MARGIN_LEFT + (x - xmin) / (xmax - xmin) * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT);
    let py = |l: f64| HEIGHT - MARGIN_BOTTOM - (l - lmin) / (lmax - lmin) * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM);

    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, x_label, y_label);
    let mut decade = lmin as i32;
    while decade as f64 <= lmax {
        let y = py(decade as f64);
        writeln!(out, r##"<line x1="{MARGIN_LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/>"##, WIDTH - MARGIN_RIGHT).unwrap();
        writeln!(
            out,
            r#"<text x="{:.1}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="end">1e{decade}</text>"#,
            MARGIN_LEFT - 6.0,
            y + 4.0
        )
        .unwrap();
        decade += 1;
    }
    let mut xs: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    for x in xs {
        writeln!(
            out,
            r#"<text x="{:.2}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#,
            px(x),
            HEIGHT - MARGIN_BOTTOM + 16.0,
            tick_label(x)
        )
        .unwrap();
    }
    for (k, s) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let coords: Vec<String> = s
            .points
            .iter()
            .filter(|(_, y)| *y > 0.0 && y.is_finite())
            .map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(y.log10())))
            .collect();
        writeln!(out, r#"<g data-series="{}">"#, escape(&s.name)).unwrap();
        writeln!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, coords.join(" ")).unwrap();
        for c in &coords {
            let (cx, cy) = c.split_once(',').unwrap();
            writeln!(out, r#"<circle cx="{cx}" cy="{cy}" r="3" fill="{color}"/>"#).unwrap();
        }
        writeln!(out, "</g>").unwrap();
        let ly = MARGIN_TOP + 10.0 + 18.0 * k as f64;
        let lx = WIDTH - MARGIN_RIGHT + 12.0;
        writeln!(out, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 18.0).unwrap();
        writeln!(
            out,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12">{}</text>"#,
            lx + 24.0,
            ly + 4.0,
            escape(&s.name)
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    out
}

/// Histogram bin edges with the Freedman-Diaconis width and at least
/// `min_bins` bins.
pub fn histogram_edges(values: &[f64], min_bins: usize) -> Vec<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return (0..=min_bins).map(|k| k as f64 / min_bins as f64).collect();
    }
    let (lo, hi) = span(v[0], v[v.len() - 1]);
    let quantile = |p: f64| {
        let pos = p * (v.len() - 1) as f64;
        let (i, f) = (pos.floor() as usize, pos.fract());
        if i + 1 < v.len() {
            v[i] + f * (v[i + 1] - v[i])
        } else {
            v[i]
        }
    };
    let iqr = quantile(0.75) - quantile(0.25);
    let width = 2.0 * iqr / (v.len() as f64).cbrt();
    let bins = if width > 0.0 { ((hi - lo) / width).ceil() as usize } else { min_bins };
    let bins = bins.clamp(min_bins, 200);
    (0..=bins).map(|k| lo + (hi - lo) * k as f64 / bins as f64).collect()
}

/// Counts per bin; the last bin is closed on the right.
pub fn histogram_counts(values: &[f64], edges: &[f64]) -> Vec<usize> {
    let bins = edges.len() - 1;
    let mut counts = vec![0; bins];
    let (lo, hi) = (edges[0], edges[bins]);
    for &x in values.iter().filter(|x| x.is_finite()) {
        if x < lo || x > hi {
            continue;
        }
        let k = (((x - lo) / (hi - lo)) * bins as f64).floor() as usize;
        counts[k.min(bins - 1)] += 1;
    }
    counts
}

/// Bar histogram. Bars left of `zero` are drawn in red.
pub fn histogram(title: &str, x_label: &str, edges: &[f64], counts: &[usize]) -> String {
    let bins = counts.len();
    let max_count = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let (lo, hi) = (edges[0], edges[bins]);
    let px = |x: f64| MARGIN_LEFT + (x - lo) / (hi - lo) * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT);
    let ph = |c: f64| c / max_count * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM);
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, x_label, "count");
    writeln!(out, r#"<g data-series="count">"#).unwrap();
    for k in 0..bins {
        let (x0, x1) = (px(edges[k]), px(edges[k + 1]));
        let h = ph(counts[k] as f64);
        let color = if edges[k + 1] <= 0.0 && edges[k] < 0.0 { "#d62728" } else { "#1f77b4" };
        writeln!(
            out,
            r#"<rect x="{x0:.2}" y="{:.2}" width="{:.2}" height="{h:.2}" fill="{color}" stroke="white" stroke-width="0.5"/>"#,
            HEIGHT - MARGIN_BOTTOM - h,
            (x1 - x0).max(0.0)
        )
        .unwrap();
    }
    writeln!(out, "</g>").unwrap();
    for (x, anchor) in [(lo, "start"), (hi, "end")] {
        writeln!(
            out,
            r#"<text x="{:.2}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="{anchor}">{}</text>"#,
            px(x),
            HEIGHT - MARGIN_BOTTOM + 16.0,
            tick_label(x)
        )
        .unwrap();
    }
    writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="end">{}</text>"#,
        MARGIN_LEFT - 6.0,
        MARGIN_TOP + 4.0,
        max_count
    )
    .unwrap();
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_edges_respect_minimum() {
        let e = histogram_edges(&[1.0, 1.0, 1.0], 10);
        assert_eq!(e.len(), 11);
        let v: Vec<f64> = (0..1000).map(|k| (k as f64).sqrt()).collect();
        assert!(histogram_edges(&v, 10).len() > 11);
    }

    #[test]
    fn counts_cover_every_value() {
        let v: Vec<f64> = (0..57).map(|k| k as f64 * 0.37 - 4.0).collect();
        let e = histogram_edges(&v, 10);
        assert_eq!(histogram_counts(&v, &e).iter().sum::<usize>(), 57);
    }

    #[test]
    fn line_chart_names_every_series() {
        let s = vec![
            Series { name: "a<b".into(), points: vec![(1.0, 0.1), (2.0, 0.01)] },
            Series { name: "c".into(), points: vec![(1.0, 1.0)] },
        ];
        let svg = line_chart_log_y("t", "x", "y", &s);
        assert!(svg.contains("a&lt;b") && svg.contains(r#"data-series="c""#));
    }
}
