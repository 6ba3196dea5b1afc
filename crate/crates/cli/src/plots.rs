use std::fmt::Write as _;

use starflow::flow::SharedSystem;
use starflow::io::read_orbit_cache;

use crate::artifacts::RunDir;
use crate::error::CliError;
use crate::pipeline::{CompareReport, SpectrumReport, COMPARE_JSON, MARGINS_CSV, ORBIT_BIN, SPECTRUM_JSON};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const PAD: f64 = 56.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// One polyline (or scatter, when `points_only`) of a figure.
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub points_only: bool,
}

/// A minimal 2-D figure rendered as standalone SVG with linear axes.
pub struct Figure {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Horizontal reference lines (value, label).
    pub h_lines: Vec<(f64, String)>,
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Figure {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Figure { title: title.into(), x_label: x_label.into(), y_label: y_label.into(), series: Vec::new(), h_lines: Vec::new() }
    }

    pub fn line(mut self, label: &str, points: Vec<(f64, f64)>) -> Self {
        self.series.push(Series { label: label.into(), points, points_only: false });
        self
    }

    pub fn scatter(mut self, label: &str, points: Vec<(f64, f64)>) -> Self {
        self.series.push(Series { label: label.into(), points, points_only: true });
        self
    }

    pub fn h_line(mut self, y: f64, label: &str) -> Self {
        self.h_lines.push((y, label.into()));
        self
    }

    pub fn render(&self) -> String {
        let xs = self.series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
        let ys = self.series.iter().flat_map(|s| s.points.iter().map(|p| p.1)).chain(self.h_lines.iter().map(|h| h.0));
        let (x0, x1) = range(xs);
        let (y0, y1) = range(ys);
        let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * PAD);
        let sy = |y: f64| HEIGHT - PAD - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * PAD);
        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#);
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{}</text>"#, WIDTH / 2.0, esc(&self.title));
        let _ = writeln!(
            s,
            r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            WIDTH - 2.0 * PAD,
            HEIGHT - 2.0 * PAD
        );
        for k in 0..=4 {
            let fx = x0 + (x1 - x0) * k as f64 / 4.0;
            let fy = y0 + (y1 - y0) * k as f64 / 4.0;
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="11">{}</text>"#,
                sx(fx),
                HEIGHT - PAD + 16.0,
                tick(fx)
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-family="sans-serif" font-size="11">{}</text>"#,
                PAD - 4.0,
                sy(fy) + 4.0,
                tick(fy)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="13">{}</text>"#,
            WIDTH / 2.0,
            HEIGHT - 12.0,
            esc(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{}" text-anchor="middle" font-family="sans-serif" font-size="13" transform="rotate(-90 16 {})">{}</text>"#,
            HEIGHT / 2.0,
            HEIGHT / 2.0,
            esc(&self.y_label)
        );
        for (y, label) in &self.h_lines {
            let _ = writeln!(
                s,
                r##"<line x1="{PAD}" x2="{}" y1="{:.2}" y2="{:.2}" stroke="#888" stroke-dasharray="4 3"/><text x="{}" y="{:.1}" text-anchor="end" font-family="sans-serif" font-size="11" fill="#555">{}</text>"##,
                WIDTH - PAD,
                sy(*y),
                sy(*y),
                WIDTH - PAD - 4.0,
                sy(*y) - 4.0,
                esc(label)
            );
        }
        for (k, series) in self.series.iter().enumerate() {
            let color = COLORS[k % COLORS.len()];
            if series.points_only {
                for &(x, y) in series.points.iter().filter(|p| p.0.is_finite() && p.1.is_finite()) {
                    let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, sx(x), sy(y));
                }
            } else if !series.points.is_empty() {
                let mut d = String::new();
                for &(x, y) in series.points.iter().filter(|p| p.0.is_finite() && p.1.is_finite()) {
                    let _ = write!(d, "{:.2},{:.2} ", sx(x), sy(y));
                }
                let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="0.8" points="{}"/>"#, d.trim_end());
            }
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" fill="{color}">{}</text>"#,
                PAD + 8.0,
                PAD + 16.0 + 14.0 * k as f64,
                esc(&series.label)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.1e}")
    } else {
        format!("{v:.3}").trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// Keeps at most `max` evenly spaced points.
fn thin<T: Copy>(points: &[T], max: usize) -> Vec<T> {
    let step = points.len().div_ceil(max).max(1);
    points.iter().step_by(step).copied().collect()
}

/// Writes every figure whose inputs exist. The orbit cache is required;
/// the others are drawn once their stages have run.
pub fn emit_plots(run: &RunDir, system: &SharedSystem) -> Result<Vec<String>, CliError> {
    let p = run.require(ORBIT_BIN, "simulate")?;
    let orbit = read_orbit_cache(&p, system.clone()).map_err(|e| CliError::stage("plots", e))?;
    let mut written = Vec::new();

    // The classical (x, z) view for Lorenz, (x, y) otherwise.
    let (i, j) = if orbit.system.name() == "lorenz" { (0, 2) } else { (0, 1) };
    let pts: Vec<(f64, f64)> = orbit.states.iter().map(|x| (x[i], x[j])).collect();
    let mut fig = Figure::new("attractor", &format!("x_{}", i + 1), &format!("x_{}", j + 1)).line("orbit", thin(&pts, 20_000));
    let mut loops: Vec<_> = std::fs::read_dir(run.root().join("orbits"))
        .into_iter()
        .flatten()
        .flatten()
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e == "bin"))
        .collect();
    loops.sort();
    for path in loops {
        let lp = read_orbit_cache(&path, system.clone()).map_err(|e| CliError::stage("plots", e))?;
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        fig = fig.line(&format!("periodic {name}"), lp.states.iter().map(|x| (x[i], x[j])).collect());
    }
    run.write_text("plots/attractor.svg", &fig.render())?;
    written.push("plots/attractor.svg".to_string());

    if run.exists(SPECTRUM_JSON) {
        let spec: SpectrumReport = run.read_json(SPECTRUM_JSON, "spectrum")?;
        let mut fig = Figure::new("running exponents of the scaled cocycle", "t", "lambda_i(t)");
        let count = spec.scaled.exponents.len();
        for i in 0..count {
            let pts: Vec<(f64, f64)> = spec.scaled.history.iter().map(|(t, l)| (*t, l[i])).collect();
            fig = fig.line(&format!("lambda_{}", i + 1), thin(&pts, 4000));
        }
        run.write_text("plots/exponents.svg", &fig.h_line(0.0, "0").render())?;
        written.push("plots/exponents.svg".to_string());
    }

    if run.exists(MARGINS_CSV) {
        let text = std::fs::read_to_string(run.root().join(MARGINS_CSV))
            .map_err(|source| CliError::Io { path: run.root().join(MARGINS_CSV), source })?;
        let mut dom = Vec::new();
        let mut con = Vec::new();
        let mut exp = Vec::new();
        for line in text.lines().skip(1) {
            let v: Vec<f64> = line.split(',').filter_map(|c| c.parse().ok()).collect();
            if v.len() == 6 {
                con.push((v[2], v[3]));
                exp.push((v[2], v[4]));
                dom.push((v[2], v[5]));
            }
        }
        let fig = Figure::new("Pliss margins against string length", "duration", "margin")
            .scatter("contraction", thin(&con, 5000))
            .scatter("expansion", thin(&exp, 5000))
            .scatter("domination", thin(&dom, 5000))
            .h_line(0.0, "0");
        run.write_text("plots/pliss_margins.svg", &fig.render())?;
        written.push("plots/pliss_margins.svg".to_string());
    }

    if run.exists(COMPARE_JSON) {
        let cmp: CompareReport = run.read_json(COMPARE_JSON, "compare")?;
        let all: Vec<(f64, f64)> = cmp.comparisons.iter().map(|c| (c.d_hi, c.dm.value)).collect();
        let best: Vec<(f64, f64)> = cmp.best_per_bucket.iter().filter_map(|b| b.value.map(|v| (b.d_hi, v))).collect();
        let fig = Figure::new("truncated d_M against the return threshold", "D", "d_M (first n terms)")
            .scatter("accepted orbits", all)
            .line("best per bucket", best)
            .h_line(cmp.epsilon - cmp.tail_bound, "epsilon - tail");
        run.write_text("plots/dm_vs_d.svg", &fig.render())?;
        written.push("plots/dm_vs_d.svg".to_string());
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_is_wellformed() {
        let svg = Figure::new("a<b", "x", "y").line("s", vec![(0.0, 1.0), (1.0, 2.0)]).h_line(1.5, "h").render();
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a&lt;b"));
        assert_eq!(svg.matches("<polyline").count(), 1);
    }

    #[test]
    fn thin_keeps_bounds() {
        let v: Vec<usize> = (0..10).collect();
        assert_eq!(thin(&v, 4), vec![0, 3, 6, 9]);
        assert_eq!(thin(&v, 100).len(), 10);
    }
}
