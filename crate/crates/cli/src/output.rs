//! Artifact serialization: tidy CSV with full double precision, stable
//! JSON, and minimal static SVG line charts.

use anyhow::Result;
use incbounds::estimator::IncrementalCurve;
use incbounds::sim::{BiasRow, CoverageRow, Figure1Row};

/// 17 significant digits: parses back to the identical f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_from_rows(header: &[&str], rows: Vec<Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    Ok(w.into_inner()?)
}

/// One row per (delta, gamma, side), with the collapsed point estimate
/// carried on its own `point` side rows at gamma = 1.
pub fn curve_csv(curve: &IncrementalCurve) -> Result<Vec<u8>> {
    let header = ["delta", "gamma", "side", "psi", "sigma", "ci", "n", "ci_level"];
    let mut rows = Vec::new();
    let grid = curve.grid();
    for (gi, &gamma) in grid.gammas().iter().enumerate() {
        for (di, &delta) in grid.deltas().iter().enumerate() {
            let e = curve.estimate(gi, di);
            for (side, psi, sigma, ci) in [
                ("lower", e.psi_lower, e.sigma_lower, e.ci_lower_bound),
                ("upper", e.psi_upper, e.sigma_upper, e.ci_upper_bound),
            ] {
                rows.push(vec![
                    fmt_f64(delta),
                    fmt_f64(gamma),
                    side.to_string(),
                    fmt_f64(psi),
                    fmt_f64(sigma),
                    fmt_f64(ci),
                    e.n.to_string(),
                    fmt_f64(e.ci_level),
                ]);
            }
        }
    }
    for (di, &delta) in grid.deltas().iter().enumerate() {
        let e = curve.point(di);
        rows.push(vec![
            fmt_f64(delta),
            fmt_f64(1.0),
            "point".to_string(),
            fmt_f64(e.psi_lower),
            fmt_f64(e.sigma_lower),
            fmt_f64(e.ci_lower_bound),
            e.n.to_string(),
            fmt_f64(e.ci_level),
        ]);
    }
    csv_from_rows(&header, rows)
}

pub fn figure1_csv(rows: &[Figure1Row]) -> Result<Vec<u8>> {
    let header = [
        "panel", "x_low", "x_high", "noise", "gamma", "delta", "psi_lower", "psi_upper",
        "length", "pattern",
    ];
    let body = rows
        .iter()
        .map(|r| {
            vec![
                r.panel.clone(),
                fmt_f64(r.x_low),
                fmt_f64(r.x_high),
                r.noise.clone(),
                fmt_f64(r.gamma),
                fmt_f64(r.delta),
                fmt_f64(r.psi_lower),
                fmt_f64(r.psi_upper),
                fmt_f64(r.length),
                r.pattern.clone(),
            ]
        })
        .collect();
    csv_from_rows(&header, body)
}

pub fn bias_csv(rows: &[BiasRow]) -> Result<Vec<u8>> {
    let header = ["estimator", "side", "alpha", "n", "reps", "abs_bias", "mc_se"];
    let body = rows
        .iter()
        .map(|r| {
            vec![
                r.estimator.clone(),
                r.side.clone(),
                fmt_f64(r.alpha),
                r.n.to_string(),
                r.reps.to_string(),
                fmt_f64(r.abs_bias),
                fmt_f64(r.mc_se),
            ]
        })
        .collect();
    csv_from_rows(&header, body)
}

pub fn coverage_csv(rows: &[CoverageRow]) -> Result<Vec<u8>> {
    let header = ["side", "n", "reps", "ci_level", "coverage", "mean_ci_width"];
    let body = rows
        .iter()
        .map(|r| {
            vec![
                r.side.clone(),
                r.n.to_string(),
                r.reps.to_string(),
                fmt_f64(r.ci_level),
                fmt_f64(r.coverage),
                fmt_f64(r.mean_ci_width),
            ]
        })
        .collect();
    csv_from_rows(&header, body)
}

/// A polyline series for the SVG chart.
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Static line chart: axes, ticks, legend, nothing interactive.
pub fn line_chart_svg(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h) = (720.0, 480.0);
    let (ml, mr, mt, mb) = (70.0, 20.0, 40.0, 55.0);
    let (pw, ph) = (w - ml - mr, h - mt - mb);
    let finite = |v: f64| v.is_finite();
    let xs: Vec<f64> =
        series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).filter(|&v| finite(v)).collect();
    let ys: Vec<f64> =
        series.iter().flat_map(|s| s.points.iter().map(|p| p.1)).filter(|&v| finite(v)).collect();
    let (x0, x1) = span(&xs);
    let (y0, y1) = span(&ys);
    let sx = move |v: f64| ml + (v - x0) / (x1 - x0) * pw;
    let sy = move |v: f64| mt + ph - (v - y0) / (y1 - y0) * ph;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
         viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    svg.push_str(&format!(
        "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
        w / 2.0,
        escape(title)
    ));
    // axes
    svg.push_str(&format!(
        "<line x1=\"{ml}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{ml}\" y1=\"{mt}\" x2=\"{ml}\" y2=\"{}\" stroke=\"black\"/>\n",
        mt + ph,
        ml + pw,
        mt + ph,
        mt + ph
    ));
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{:.3}</text>\n",
            sx(fx),
            mt + ph + 18.0,
            fx
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{:.3}</text>\n",
            ml - 6.0,
            sy(fy) + 4.0,
            fy
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
        ml + pw / 2.0,
        h - 12.0,
        escape(x_label)
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>\n",
        mt + ph / 2.0,
        mt + ph / 2.0,
        escape(y_label)
    ));
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let dash = if s.dashed { " stroke-dasharray=\"6 4\"" } else { "" };
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|p| finite(p.0) && finite(p.1))
            .map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1)))
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"{dash} points=\"{}\"/>\n",
            pts.join(" ")
        ));
        let ly = mt + 14.0 + 16.0 * i as f64;
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"1.5\"{dash}/>\n\
             <text x=\"{}\" y=\"{}\">{}</text>\n",
            ml + pw - 150.0,
            ml + pw - 120.0,
            ml + pw - 112.0,
            ly + 4.0,
            escape(&s.label)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn span(values: &[f64]) -> (f64, f64) {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = 0.04 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
