//! Experiment reports: tables, fits, verdicts, CSV and SVG output.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Duration;

use crate::error::{Error, Result};

/// Ordinary least-squares line through `(x, y)` points.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual.
    pub residual: f64,
}

/// Least-squares slope, intercept and RMS residual.
pub fn fit_slope(points: &[(f64, f64)]) -> Result<Fit> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return Err(Error::InvalidArgument("slope fit needs at least two points".into()));
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::InvalidArgument("slope fit needs two distinct abscissae".into()));
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = points.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    Ok(Fit { slope, intercept, residual: (ss / n).sqrt() })
}

/// One pass/fail check.
#[derive(Clone, Debug, PartialEq)]
pub struct Verdict {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    /// The accepted range, as text.
    pub tolerance: String,
}

impl Verdict {
    pub fn new(name: &str, passed: bool, measured: f64, tolerance: impl Into<String>) -> Self {
        Verdict { name: name.to_string(), passed, measured, tolerance: tolerance.into() }
    }

    /// `|measured - target| <= tol * |target|`.
    pub fn relative(name: &str, measured: f64, target: f64, tol: f64) -> Self {
        let passed = (measured - target).abs() <= tol * target.abs();
        Verdict::new(name, passed, measured, format!("{target} +/- {}", tol * target.abs()))
    }

    pub fn at_most(name: &str, measured: f64, bound: f64) -> Self {
        Verdict::new(name, measured <= bound, measured, format!("<= {bound}"))
    }

    pub fn at_least(name: &str, measured: f64, bound: f64) -> Self {
        Verdict::new(name, measured >= bound, measured, format!(">= {bound}"))
    }
}

/// Log-log scatter with an optional fitted line.
#[derive(Clone, Debug, PartialEq)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    /// One series per label.
    pub series: Vec<(String, Vec<(f64, f64)>)>,
    pub fits: Vec<(String, Fit)>,
}

#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub id: String,
    /// Every configuration value the run read, tolerances included.
    pub config: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub fits: Vec<(String, Fit)>,
    pub verdicts: Vec<Verdict>,
    pub plot: Option<Plot>,
    /// Extra files, `(name, contents)`.
    pub attachments: Vec<(String, String)>,
    pub elapsed: Duration,
}

impl ExperimentReport {
    pub fn new(id: &str, columns: &[&str]) -> Self {
        ExperimentReport {
            id: id.to_string(),
            config: Vec::new(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            fits: Vec::new(),
            verdicts: Vec::new(),
            plot: None,
            attachments: Vec::new(),
            elapsed: Duration::ZERO,
        }
    }

    pub fn row(&mut self, cells: Vec<String>) {
        debug_assert_eq!(cells.len(), self.columns.len());
        self.rows.push(cells);
    }

    pub fn passed(&self) -> bool {
        !self.verdicts.is_empty() && self.verdicts.iter().all(|v| v.passed)
    }

    pub fn verdict(&self, name: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.name == name)
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.columns.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }

    /// Deterministic summary (no timings).
    pub fn summary(&self) -> String {
        let mut s = String::new();
        writeln!(s, "experiment {}", self.id).unwrap();
        for (k, v) in &self.config {
            writeln!(s, "  config {k} = {v}").unwrap();
        }
        for (name, f) in &self.fits {
            writeln!(s, "  fit {name}: slope {:.6} intercept {:.6} residual {:.3e}", f.slope, f.intercept, f.residual).unwrap();
        }
        for v in &self.verdicts {
            let tag = if v.passed { "PASS" } else { "FAIL" };
            writeln!(s, "  {tag} {}: measured {:.6e}, accepted {}", v.name, v.measured, v.tolerance).unwrap();
        }
        writeln!(s, "  verdict {}", if self.passed() { "PASS" } else { "FAIL" }).unwrap();
        s
    }

    /// Writes `<id>.csv`, `<id>.txt`, `<id>.svg` (when plotted) and attachments into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io(e.to_string()))?;
        let mut files = vec![
            (format!("{}.csv", self.id), self.to_csv()),
            (format!("{}.txt", self.id), format!("{}elapsed {:.3} s\n", self.summary(), self.elapsed.as_secs_f64())),
        ];
        if let Some(p) = &self.plot {
            files.push((format!("{}.svg", self.id), render_svg(p)));
        }
        files.extend(self.attachments.iter().cloned());
        let mut out = Vec::new();
        for (name, body) in files {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| Error::Io(e.to_string()))?;
            out.push(path);
        }
        Ok(out)
    }
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Minimal SVG: axes, ticks, points per series, fitted lines.
pub fn render_svg(plot: &Plot) -> String {
    let (w, h, m) = (640.0, 440.0, 60.0);
    let pts: Vec<(f64, f64)> = plot.series.iter().flat_map(|s| s.1.iter().copied()).filter(|p| p.0.is_finite() && p.1.is_finite()).collect();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in &pts {
        x0 = x0.min(p.0);
        x1 = x1.max(p.0);
        y0 = y0.min(p.1);
        y1 = y1.max(p.1);
    }
    if pts.is_empty() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let sx = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
    let sy = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);
    let mut s = String::new();
    writeln!(s, "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"12\">").unwrap();
    writeln!(s, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>").unwrap();
    writeln!(s, "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">{}</text>", w / 2.0, escape(&plot.title)).unwrap();
    writeln!(s, "<line x1=\"{m}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>", h - m, w - m, h - m).unwrap();
    writeln!(s, "<line x1=\"{m}\" y1=\"{m}\" x2=\"{m}\" y2=\"{}\" stroke=\"black\"/>", h - m).unwrap();
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let (xv, yv) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
        writeln!(s, "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\">{:.3}</text>", sx(xv), h - m + 18.0, xv).unwrap();
        writeln!(s, "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">{:.3}</text>", m - 6.0, sy(yv) + 4.0, yv).unwrap();
    }
    writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>", w / 2.0, h - 16.0, escape(&plot.x_label)).unwrap();
    writeln!(s, "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>", h / 2.0, h / 2.0, escape(&plot.y_label)).unwrap();
    for (i, (label, series)) in plot.series.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        for p in series.iter().filter(|p| p.0.is_finite() && p.1.is_finite()) {
            writeln!(s, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{c}\"/>", sx(p.0), sy(p.1)).unwrap();
        }
        writeln!(s, "<text x=\"{}\" y=\"{}\" fill=\"{c}\">{}</text>", w - m - 150.0, m + 16.0 * i as f64, escape(label)).unwrap();
    }
    for (i, (label, f)) in plot.fits.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        let (ya, yb) = (f.intercept + f.slope * x0, f.intercept + f.slope * x1);
        writeln!(s, "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"{c}\" stroke-dasharray=\"4 3\"/>", sx(x0), sy(ya), sx(x1), sy(yb)).unwrap();
        writeln!(s, "<text x=\"{}\" y=\"{}\" fill=\"{c}\">{} slope {:.3}</text>", m + 10.0, m + 16.0 * i as f64, escape(label), f.slope).unwrap();
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_examples() {
        let f = fit_slope(&[(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)]).unwrap();
        assert!((f.slope - 1.0).abs() < 1e-15 && f.residual < 1e-15);
        assert_eq!(fit_slope(&[(0.0, 5.0), (1.0, 5.0), (2.0, 5.0)]).unwrap().slope, 0.0);
        assert!((fit_slope(&[(0.0, 0.0), (1.0, 2.0), (2.0, 4.0)]).unwrap().slope - 2.0).abs() < 1e-15);
        assert!(fit_slope(&[(1.0, 0.0), (1.0, 2.0)]).is_err());
        assert!(fit_slope(&[(1.0, 0.0)]).is_err());
    }

    #[test]
    fn svg_is_well_formed() {
        let plot = Plot {
            title: "a < b".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            series: vec![("s".into(), vec![(0.0, 1.0), (1.0, 2.0)])],
            fits: vec![("fit".into(), Fit { slope: 1.0, intercept: 1.0, residual: 0.0 })],
        };
        let svg = render_svg(&plot);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a &lt; b"));
        assert_eq!(svg.matches("<circle").count(), 2);
    }
}
