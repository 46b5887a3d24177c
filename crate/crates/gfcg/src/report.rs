//! CSV and SVG artifact writers. CSVs are the contract (fixed column order,
//! mandatory header, 9-significant-digit numbers); SVGs are conveniences
//! rendered from raw line/scatter primitives.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::sampler::ChainResult;

/// Decimal rendering with 9 significant digits; scientific notation only for
/// extreme magnitudes so the files stay human-readable.
pub fn render_value(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let mag = v.abs().log10().floor() as i32;
    let text = if !(-5..=14).contains(&mag) {
        format!("{v:.8e}")
    } else {
        let prec = (8 - mag).max(0) as usize;
        format!("{v:.prec$}")
    };
    if text.contains('.') && !text.contains('e') {
        let trimmed = text.trim_end_matches('0').trim_end_matches('.');
        trimmed.to_string()
    } else {
        text
    }
}

fn write_text(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, content).map_err(|e| Error::io(path, e))
}

/// samples.csv: chain, c_des, x_1..x_d, nfe.
pub fn render_samples_csv(results: &[ChainResult]) -> Result<String> {
    let dim = results
        .first()
        .map(|r| r.final_sample.len())
        .ok_or_else(|| Error::argument("no chains to report"))?;
    let mut out = String::from("chain,c_des");
    for i in 1..=dim {
        let _ = write!(out, ",x_{i}");
    }
    out.push_str(",nfe\n");
    for (chain, r) in results.iter().enumerate() {
        let _ = write!(out, "{chain},{}", r.c_des);
        for v in r.final_sample.iter() {
            let _ = write!(out, ",{}", render_value(*v));
        }
        let _ = writeln!(out, ",{}", r.nfe_total);
    }
    Ok(out)
}

/// diagnostics.csv: chain, t, p_des, omega, c_ref, guidance_active,
/// classifier_invoked. Optional fields render as empty cells.
pub fn render_diagnostics_csv(results: &[ChainResult]) -> String {
    let mut out = String::from("chain,t,p_des,omega,c_ref,guidance_active,classifier_invoked\n");
    for (chain, r) in results.iter().enumerate() {
        for d in &r.diagnostics {
            let p_des = d.p_des.map(render_value).unwrap_or_default();
            let c_ref = d.c_ref.map(|c| c.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{chain},{},{p_des},{},{c_ref},{},{}",
                d.t,
                render_value(d.omega),
                d.guidance_active,
                d.classifier_invoked
            );
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub method: String,
    pub axis_value: Option<f64>,
    pub precision: f64,
    pub recall: Option<f64>,
    pub frechet: f64,
    pub nfe_mean: f64,
    pub chains: usize,
    pub seed: u64,
}

/// report.csv: method, axis_value, precision, recall, frechet, nfe_mean,
/// chains, seed.
pub fn render_report_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from("method,axis_value,precision,recall,frechet,nfe_mean,chains,seed\n");
    for r in rows {
        let axis = r.axis_value.map(render_value).unwrap_or_default();
        let recall = r.recall.map(render_value).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{axis},{},{recall},{},{},{},{}",
            r.method,
            render_value(r.precision),
            render_value(r.frechet),
            render_value(r.nfe_mean),
            r.chains,
            r.seed
        );
    }
    out
}

pub fn write_samples_csv(path: &Path, results: &[ChainResult]) -> Result<()> {
    write_text(path, &render_samples_csv(results)?)
}

pub fn write_diagnostics_csv(path: &Path, results: &[ChainResult]) -> Result<()> {
    write_text(path, &render_diagnostics_csv(results))
}

pub fn write_report_csv(path: &Path, rows: &[ReportRow]) -> Result<()> {
    write_text(path, &render_report_csv(rows))
}

/// One named polyline with point markers.
#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: &[&str] = &["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Minimal line/scatter chart; no external plotting dependency.
pub fn render_line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h) = (640.0, 420.0);
    let (ml, mr, mt, mb) = (70.0, 20.0, 40.0, 55.0);
    let (pw, ph) = (w - ml - mr, h - mt - mb);

    let points: Vec<(f64, f64)> = series.iter().flat_map(|s| s.points.iter().copied()).collect();
    let (mut x0, mut x1) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
            (a.min(p.0), b.max(p.0))
        });
    let (mut y0, mut y1) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
            (a.min(p.1), b.max(p.1))
        });
    if !x0.is_finite() {
        (x0, x1) = (0.0, 1.0);
    }
    if !y0.is_finite() {
        (y0, y1) = (0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let sx = move |x: f64| ml + (x - x0) / (x1 - x0) * pw;
    let sy = move |y: f64| mt + ph - (y - y0) / (y1 - y0) * ph;

    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">{title}</text>\n",
        w / 2.0
    );
    // Axes.
    let _ = write!(
        svg,
        "<line x1=\"{ml}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{ml}\" y1=\"{mt}\" x2=\"{ml}\" y2=\"{}\" stroke=\"black\"/>\n",
        mt + ph,
        ml + pw,
        mt + ph,
        mt + ph
    );
    // Ticks: 5 per axis.
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        let px = sx(fx);
        let py = sy(fy);
        let _ = write!(
            svg,
            "<line x1=\"{px}\" y1=\"{}\" x2=\"{px}\" y2=\"{}\" stroke=\"black\"/>\n\
             <text x=\"{px}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n\
             <line x1=\"{}\" y1=\"{py}\" x2=\"{ml}\" y2=\"{py}\" stroke=\"black\"/>\n\
             <text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
            mt + ph,
            mt + ph + 5.0,
            mt + ph + 20.0,
            format_tick(fx),
            ml - 5.0,
            ml - 8.0,
            py + 4.0,
            format_tick(fy)
        );
    }
    let _ = write!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">{x_label}</text>\n\
         <text x=\"16\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" transform=\"rotate(-90 16 {})\">{y_label}</text>\n",
        ml + pw / 2.0,
        h - 12.0,
        mt + ph / 2.0,
        mt + ph / 2.0
    );
    for (idx, s) in series.iter().enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        if s.points.len() > 1 {
            let path: Vec<String> = s
                .points
                .iter()
                .map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y)))
                .collect();
            let _ = writeln!(
                svg,
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
                path.join(" ")
            );
        }
        for (x, y) in &s.points {
            let _ = writeln!(
                svg,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"{color}\"/>",
                sx(*x),
                sy(*y)
            );
        }
        let ly = mt + 14.0 * (idx as f64 + 1.0);
        let _ = write!(
            svg,
            "<rect x=\"{}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{color}\"/>\n\
             <text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
            ml + pw - 140.0,
            ly - 9.0,
            ml + pw - 126.0,
            ly,
            s.label
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn format_tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1000.0 || v.abs() < 0.01 {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

pub fn write_svg(path: &Path, content: &str) -> Result<()> {
    write_text(path, content)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guidance::StepDiagnostics;
    use nalgebra::DVector;

    #[test]
    fn render_value_nine_significant_digits() {
        assert_eq!(render_value(0.0), "0");
        assert_eq!(render_value(1.0), "1");
        assert_eq!(render_value(-1.5), "-1.5");
        assert_eq!(render_value(1.0 / 3.0), "0.333333333");
        assert_eq!(render_value(123456789.0), "123456789");
        assert_eq!(render_value(0.000123456789123), "0.000123456789");
        assert_eq!(render_value(1e-9), "1.00000000e-9");
        assert_eq!(render_value(12345.678912345), "12345.6789");
    }

    fn fake_chain(c_des: usize) -> ChainResult {
        ChainResult {
            final_sample: DVector::from_vec(vec![0.5, -1.0 / 3.0]),
            trajectory: None,
            diagnostics: vec![
                StepDiagnostics {
                    t: 2,
                    p_des: None,
                    omega: 1.0,
                    c_ref: None,
                    guidance_active: false,
                    classifier_invoked: false,
                },
                StepDiagnostics {
                    t: 1,
                    p_des: Some(0.25),
                    omega: 2.0,
                    c_ref: Some(1),
                    guidance_active: true,
                    classifier_invoked: true,
                },
            ],
            nfe_total: 3,
            seed: 7,
            c_des,
        }
    }

    #[test]
    fn samples_csv_schema() {
        let csv = render_samples_csv(&[fake_chain(0), fake_chain(1)]).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "chain,c_des,x_1,x_2,nfe");
        assert_eq!(lines[1], "0,0,0.5,-0.333333333,3");
        assert_eq!(lines[2], "1,1,0.5,-0.333333333,3");
        assert!(render_samples_csv(&[]).is_err());
    }

    #[test]
    fn diagnostics_csv_schema() {
        let csv = render_diagnostics_csv(&[fake_chain(0)]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(
            lines[0],
            "chain,t,p_des,omega,c_ref,guidance_active,classifier_invoked"
        );
        assert_eq!(lines[1], "0,2,,1,,false,false");
        assert_eq!(lines[2], "0,1,0.25,2,1,true,true");
    }

    #[test]
    fn report_csv_schema() {
        let rows = vec![ReportRow {
            method: "ng".into(),
            axis_value: None,
            precision: 0.93,
            recall: Some(0.9),
            frechet: 0.12,
            nfe_mean: 63.0,
            chains: 100,
            seed: 42,
        }];
        let csv = render_report_csv(&rows);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(
            lines[0],
            "method,axis_value,precision,recall,frechet,nfe_mean,chains,seed"
        );
        assert_eq!(lines[1], "ng,,0.93,0.9,0.12,63,100,42");
    }

    #[test]
    fn svg_contains_series_and_labels() {
        let svg = render_line_chart(
            "demo",
            "x",
            "y",
            &[Series {
                label: "precision".into(),
                points: vec![(0.0, 0.5), (1.0, 0.9)],
            }],
        );
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("polyline"));
        assert!(svg.contains("precision"));
        assert!(svg.ends_with("</svg>\n"));
    }

    #[test]
    fn svg_handles_single_point_without_nan() {
        let svg = render_line_chart(
            "demo",
            "x",
            "y",
            &[Series {
                label: "one".into(),
                points: vec![(2.0, 3.0)],
            }],
        );
        assert!(!svg.contains("NaN"));
    }
}
