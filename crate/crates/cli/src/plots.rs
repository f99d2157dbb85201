//! SVG figures rebuilt from the result files of a run: tube silhouettes
//! before and after synthesis, the control sets, and separation over time.
//! Fixed viewport and six-decimal coordinates keep the files byte-stable.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, Matrix2, SymmetricEigen, Vector2};
use serde_json::Value;

use crate::error::CliError;
use crate::output::{DIAGNOSTICS, SEPARATION_FINAL, SEPARATION_INITIAL, SOLUTION, TUBES_FINAL, TUBES_INITIAL};

pub const INITIAL_TUBES_SVG: &str = "initial_tubes.svg";
pub const FINAL_TUBES_SVG: &str = "final_tubes.svg";
pub const CONTROL_SETS_SVG: &str = "control_sets.svg";
pub const SEPARATION_SVG: &str = "separation.svg";

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 600.0;
const PAD: f64 = 60.0;
const AXIS_NAMES: [&str; 3] = ["x [m]", "y [m]", "z [m]"];

#[derive(Debug, Default)]
pub struct PlotOutput {
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

fn read(dir: &Path, name: &str) -> Result<String, CliError> {
    let path = dir.join(name);
    if !path.exists() {
        return Err(CliError::Missing(format!("{} (run the scenario first)", path.display())));
    }
    fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))
}

fn read_json(dir: &Path, name: &str) -> Result<Value, CliError> {
    let text = read(dir, name)?;
    serde_json::from_str(&text).map_err(|e| CliError::Missing(format!("{name} is not valid JSON: {e}")))
}

fn rows(text: &str, name: &str) -> Result<Vec<Vec<String>>, CliError> {
    let mut lines = text.lines();
    lines.next().ok_or_else(|| CliError::Missing(format!("{name} is empty")))?;
    Ok(lines.filter(|l| !l.is_empty()).map(|l| l.split(',').map(str::to_string).collect()).collect())
}

fn num(s: &str, name: &str) -> Result<f64, CliError> {
    s.parse().map_err(|_| CliError::Missing(format!("{name}: cannot parse number {s:?}")))
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn fit(points: impl Iterator<Item = (f64, f64)>, equal: bool) -> Frame {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for (x, y) in points {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        let grow = |a: f64, b: f64| {
            let w = (b - a).max(1e-9);
            (a - 0.05 * w, b + 0.05 * w)
        };
        let (mut x, mut y) = (grow(x0, x1), grow(y0, y1));
        if equal {
            // Same scale on both axes so ellipses and tubes keep their shape.
            let sx = (x.1 - x.0) / (WIDTH - 2.0 * PAD);
            let sy = (y.1 - y.0) / (HEIGHT - 2.0 * PAD);
            let s = sx.max(sy);
            let (cx, cy) = (0.5 * (x.0 + x.1), 0.5 * (y.0 + y.1));
            let (hw, hh) = (0.5 * s * (WIDTH - 2.0 * PAD), 0.5 * s * (HEIGHT - 2.0 * PAD));
            x = (cx - hw, cx + hw);
            y = (cy - hh, cy + hh);
        }
        Frame { x, y }
    }

    fn px(&self, x: f64, y: f64) -> (f64, f64) {
        (
            PAD + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - 2.0 * PAD),
            HEIGHT - PAD - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - 2.0 * PAD),
        )
    }
}

struct Svg {
    body: String,
}

impl Svg {
    fn new(title: &str) -> Svg {
        let mut body = String::new();
        writeln!(
            body,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
        )
        .unwrap();
        writeln!(body, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>").unwrap();
        writeln!(
            body,
            "<text x=\"{}\" y=\"30\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{}</text>",
            WIDTH / 2.0,
            escape(title)
        )
        .unwrap();
        Svg { body }
    }

    fn axes(&mut self, f: &Frame, xlabel: &str, ylabel: &str) {
        let (x0, y0) = f.px(f.x.0, f.y.0);
        let (x1, y1) = f.px(f.x.1, f.y.1);
        writeln!(
            self.body,
            "<rect x=\"{x0:.6}\" y=\"{y1:.6}\" width=\"{:.6}\" height=\"{:.6}\" fill=\"none\" stroke=\"black\"/>",
            x1 - x0,
            y0 - y1
        )
        .unwrap();
        for (v, anchor, x, y) in [
            (f.x.0, "start", x0, y0 + 18.0),
            (f.x.1, "end", x1, y0 + 18.0),
        ] {
            self.text(x, y, &format!("{v:.3}"), anchor);
        }
        for (v, y) in [(f.y.0, y0), (f.y.1, y1 + 12.0)] {
            self.text(x0 - 6.0, y, &format!("{v:.3}"), "end");
        }
        self.text((x0 + x1) / 2.0, HEIGHT - 20.0, xlabel, "middle");
        writeln!(
            self.body,
            "<text x=\"18\" y=\"{:.6}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 18 {:.6})\">{}</text>",
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0,
            escape(ylabel)
        )
        .unwrap();
    }

    fn text(&mut self, x: f64, y: f64, s: &str, anchor: &str) {
        writeln!(
            self.body,
            "<text x=\"{x:.6}\" y=\"{y:.6}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"{anchor}\">{}</text>",
            escape(s)
        )
        .unwrap();
    }

    #[allow(clippy::too_many_arguments)]
    fn polyline(&mut self, f: &Frame, pts: &[(f64, f64)], closed: bool, stroke: &str, fill: &str, opacity: f64, dash: bool) {
        if pts.is_empty() {
            return;
        }
        let coords: Vec<String> = pts
            .iter()
            .map(|(x, y)| {
                let (a, b) = f.px(*x, *y);
                format!("{a:.6},{b:.6}")
            })
            .collect();
        let tag = if closed { "polygon" } else { "polyline" };
        let dash = if dash { " stroke-dasharray=\"6 4\"" } else { "" };
        writeln!(
            self.body,
            "<{tag} points=\"{}\" fill=\"{fill}\" fill-opacity=\"{opacity}\" stroke=\"{stroke}\" stroke-width=\"1\"{dash}/>",
            coords.join(" ")
        )
        .unwrap();
    }

    fn legend(&mut self, entries: &[(&str, &str)]) {
        for (i, (color, label)) in entries.iter().enumerate() {
            let y = PAD + 16.0 * i as f64 + 8.0;
            writeln!(
                self.body,
                "<rect x=\"{:.6}\" y=\"{:.6}\" width=\"12\" height=\"12\" fill=\"{color}\"/>",
                WIDTH - PAD - 170.0,
                y - 10.0
            )
            .unwrap();
            self.text(WIDTH - PAD - 152.0, y, label, "start");
        }
    }

    fn finish(mut self) -> String {
        self.body.push_str("</svg>\n");
        self.body
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Support values of one aircraft at one time, directions in the plot plane.
type Slice = Vec<((f64, f64), f64)>;
type Series = Vec<(f64, Slice)>;
type Polygons = Vec<Vec<(f64, f64)>>;

/// `aircraft -> [(t, slice)]`, in file order.
fn parse_tubes(text: &str, name: &str, axes: [usize; 2]) -> Result<Vec<(String, Series)>, CliError> {
    let mut out: Vec<(String, Series)> = Vec::new();
    for r in rows(text, name)? {
        if r.len() != 7 {
            return Err(CliError::Missing(format!("{name}: expected 7 columns")));
        }
        let t = num(&r[1], name)?;
        let dir = [num(&r[3], name)?, num(&r[4], name)?, num(&r[5], name)?];
        let h = num(&r[6], name)?;
        if out.last().is_none_or(|(a, _)| *a != r[0]) {
            out.push((r[0].clone(), Vec::new()));
        }
        let series = &mut out.last_mut().expect("pushed").1;
        if series.last().is_none_or(|(tt, _)| *tt != t) {
            series.push((t, Vec::new()));
        }
        series.last_mut().expect("pushed").1.push(((dir[axes[0]], dir[axes[1]]), h));
    }
    Ok(out)
}

/// Vertices of `{p : ⟨n_i, p⟩ ≤ h_i}` for directions sorted by angle.
fn polygon(slice: &Slice) -> Vec<(f64, f64)> {
    let n = slice.len();
    (0..n)
        .filter_map(|i| {
            let ((a1, b1), h1) = slice[i];
            let ((a2, b2), h2) = slice[(i + 1) % n];
            let det = a1 * b2 - a2 * b1;
            (det.abs() > 1e-12).then(|| ((h1 * b2 - h2 * b1) / det, (a1 * h2 - a2 * h1) / det))
        })
        .collect()
}

fn tube_figure(text: &str, name: &str, axes: [usize; 2], title: &str) -> Result<Option<String>, CliError> {
    let tubes = parse_tubes(text, name, axes)?;
    if tubes.iter().all(|(_, s)| s.iter().all(|(_, sl)| sl.len() < 3)) {
        return Ok(None);
    }
    let polys: Vec<(String, Polygons)> = tubes
        .iter()
        .map(|(a, series)| (a.clone(), series.iter().map(|(_, sl)| polygon(sl)).collect()))
        .collect();
    let frame = Frame::fit(polys.iter().flat_map(|(_, p)| p.iter().flatten().copied()), true);
    let mut svg = Svg::new(title);
    svg.axes(&frame, AXIS_NAMES[axes[0]], AXIS_NAMES[axes[1]]);
    let colors = ["#d4a017", "#c0392b", "#2e86c1"];
    let mut legend = Vec::new();
    for (k, (aircraft, ps)) in polys.iter().enumerate() {
        let color = colors[k % colors.len()];
        for p in ps {
            svg.polyline(&frame, p, true, color, color, 0.06, false);
        }
        legend.push((color, format!("aircraft {aircraft}")));
    }
    let legend: Vec<(&str, &str)> = legend.iter().map(|(c, l)| (*c, l.as_str())).collect();
    svg.legend(&legend);
    Ok(Some(svg.finish()))
}

fn json_matrix(v: &Value) -> Option<DMatrix<f64>> {
    let rows = v.as_array()?;
    let n = rows.len();
    let data: Vec<f64> = rows
        .iter()
        .flat_map(|r| r.as_array().into_iter().flatten().filter_map(Value::as_f64))
        .collect();
    (n > 0 && data.len().is_multiple_of(n)).then(|| DMatrix::from_row_slice(n, data.len() / n, &data))
}

fn json_vector(v: &Value) -> Option<Vec<f64>> {
    v.as_array()?.iter().map(Value::as_f64).collect()
}

fn ellipse_points(center: &[f64], shape: &DMatrix<f64>, axes: [usize; 2]) -> Vec<(f64, f64)> {
    let (i, j) = (axes[0], axes[1]);
    let m = Matrix2::new(shape[(i, i)], shape[(i, j)], shape[(j, i)], shape[(j, j)]);
    let eig = SymmetricEigen::new(m);
    let root = eig.eigenvectors
        * Matrix2::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()))
        * eig.eigenvectors.transpose();
    (0..96)
        .map(|k| {
            let a = 2.0 * std::f64::consts::PI * k as f64 / 96.0;
            let p = root * Vector2::new(a.cos(), a.sin());
            (center[i] + p[0], center[j] + p[1])
        })
        .collect()
}

fn control_figure(solution: &Value, axes: [usize; 2]) -> Result<String, CliError> {
    let missing = |what: &str| CliError::Missing(format!("{SOLUTION}: {what}"));
    let mut sets: Vec<(&str, String, Vec<f64>, DMatrix<f64>)> = Vec::new();
    let orig = &solution["original_control_sets"];
    let oa = (
        json_vector(&orig["A"]["center"]).ok_or_else(|| missing("original A center"))?,
        json_matrix(&orig["A"]["shape"]).ok_or_else(|| missing("original A shape"))?,
    );
    let ob = (
        json_vector(&orig["B"]["center"]).ok_or_else(|| missing("original B center"))?,
        json_matrix(&orig["B"]["shape"]).ok_or_else(|| missing("original B shape"))?,
    );
    if oa == ob {
        sets.push(("#222222", "original".into(), oa.0, oa.1));
    } else {
        sets.push(("#222222", "original A".into(), oa.0, oa.1));
        sets.push(("#777777", "original B".into(), ob.0, ob.1));
    }
    for (key, color, label) in [("aircraft_a", "#c0392b", "constrained A"), ("aircraft_b", "#2e86c1", "constrained B")] {
        let s = &solution[key];
        if s.is_null() {
            continue;
        }
        let c = json_vector(&s["q"]).ok_or_else(|| missing("q"))?;
        let m = json_matrix(&s["control_shape"]).ok_or_else(|| missing("control_shape"))?;
        sets.push((color, label.into(), c, m));
    }
    if sets.iter().any(|(_, _, c, m)| axes.iter().any(|a| *a >= c.len() || *a >= m.nrows())) {
        return Err(missing("control plot axis exceeds the control dimension"));
    }
    let outlines: Vec<Vec<(f64, f64)>> = sets.iter().map(|(_, _, c, m)| ellipse_points(c, m, axes)).collect();
    let frame = Frame::fit(outlines.iter().flatten().copied(), true);
    let mut svg = Svg::new("Control sets");
    svg.axes(&frame, &format!("u{}", axes[0]), &format!("u{}", axes[1]));
    for ((color, _, c, _), pts) in sets.iter().zip(&outlines) {
        svg.polyline(&frame, pts, true, color, color, 0.08, false);
        let (x, y) = frame.px(c[axes[0]], c[axes[1]]);
        writeln!(svg.body, "<circle cx=\"{x:.6}\" cy=\"{y:.6}\" r=\"2.5\" fill=\"{color}\"/>").unwrap();
    }
    let legend: Vec<(&str, &str)> = sets.iter().map(|(c, l, _, _)| (*c, l.as_str())).collect();
    svg.legend(&legend);
    Ok(svg.finish())
}

fn separation_series(text: &str, name: &str) -> Result<Vec<(f64, f64)>, CliError> {
    rows(text, name)?
        .iter()
        .map(|r| Ok((num(&r[0], name)?, num(&r[1], name)?)))
        .collect()
}

fn separation_figure(initial: &[(f64, f64)], fin: &[(f64, f64)], d: f64) -> String {
    let pts = initial.iter().chain(fin).copied().chain([(0.0, d)]);
    let frame = Frame::fit(pts, false);
    let mut svg = Svg::new("Separation between the reachable sets");
    svg.axes(&frame, "t [s]", "separation [m]");
    svg.polyline(&frame, initial, false, "#d4a017", "none", 0.0, false);
    svg.polyline(&frame, fin, false, "#2e86c1", "none", 0.0, false);
    svg.polyline(&frame, &[(frame.x.0, d), (frame.x.1, d)], false, "#000000", "none", 0.0, true);
    svg.legend(&[("#d4a017", "initial sets"), ("#2e86c1", "constrained sets"), ("#000000", "required separation")]);
    svg.finish()
}

/// Writes the four figures next to the result files in `dir`.
pub fn emit_plots(dir: &Path) -> Result<PlotOutput, CliError> {
    let diag = read_json(dir, DIAGNOSTICS)?;
    let axes_of = |key: &str| -> Result<[usize; 2], CliError> {
        let v = json_vector(&diag[key]).ok_or_else(|| CliError::Missing(format!("{DIAGNOSTICS}: {key}")))?;
        match v.as_slice() {
            [a, b] => Ok([*a as usize, *b as usize]),
            _ => Err(CliError::Missing(format!("{DIAGNOSTICS}: {key} must have two entries"))),
        }
    };
    let plot_axes = axes_of("plot_axes")?;
    let control_axes = axes_of("control_plot_axes")?;
    let d = diag["required_separation_m"]
        .as_f64()
        .ok_or_else(|| CliError::Missing(format!("{DIAGNOSTICS}: required_separation_m")))?;
    let tubes_initial = read(dir, TUBES_INITIAL)?;
    let tubes_final = read(dir, TUBES_FINAL)?;
    let sep_initial = read(dir, SEPARATION_INITIAL)?;
    let sep_final = read(dir, SEPARATION_FINAL)?;
    let solution = read_json(dir, SOLUTION)?;

    let mut out = PlotOutput::default();
    let emit = |name: &str, body: String, out: &mut PlotOutput| -> Result<(), CliError> {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| CliError::io(&path, e))?;
        out.files.push(path);
        Ok(())
    };
    for (text, src, name, title) in [
        (&tubes_initial, TUBES_INITIAL, INITIAL_TUBES_SVG, "Reachable tubes with the original control sets"),
        (&tubes_final, TUBES_FINAL, FINAL_TUBES_SVG, "Reachable tubes with the constrained control sets"),
    ] {
        match tube_figure(text, src, plot_axes, title)? {
            Some(svg) => emit(name, svg, &mut out)?,
            None => out.warnings.push(format!("{src} has fewer than three directions; {name} not written")),
        }
    }
    emit(CONTROL_SETS_SVG, control_figure(&solution, control_axes)?, &mut out)?;
    let fig = separation_figure(
        &separation_series(&sep_initial, SEPARATION_INITIAL)?,
        &separation_series(&sep_final, SEPARATION_FINAL)?,
        d,
    );
    emit(SEPARATION_SVG, fig, &mut out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_from_four_halfplanes() {
        let slice: Slice = vec![((1.0, 0.0), 1.0), ((0.0, 1.0), 2.0), ((-1.0, 0.0), 1.0), ((0.0, -1.0), 2.0)];
        assert_eq!(polygon(&slice), vec![(1.0, 2.0), (-1.0, 2.0), (-1.0, -2.0), (1.0, -2.0)]);
    }

    #[test]
    fn ellipse_outline_hits_semi_axes() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 1.0]);
        let pts = ellipse_points(&[1.0, 0.0], &m, [0, 1]);
        assert!((pts[0].0 - 3.0).abs() < 1e-12);
        assert!((pts[24].1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn missing_artifacts_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let err = emit_plots(dir.path()).unwrap_err();
        assert!(matches!(err, CliError::Missing(_)), "{err}");
    }
}
