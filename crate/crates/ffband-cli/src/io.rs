//! CSV and SVG input/output for the command-line tool.
//!
//! Curve files use the format: header row `t,curve_1,...,curve_n`; one data
//! row per grid point with the grid value first; an empty cell marks a
//! missing (unobserved) value; UTF-8 with LF line endings.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use ffband::nalgebra::DMatrix;
use ffband::{Band, FunctionalSample, Grid};

/// Parse a curve CSV into a functional sample (curves × grid points, with an
/// observation mask). Errors name the offending row and column.
pub fn read_curves(path: &Path) -> Result<FunctionalSample> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .with_context(|| format!("cannot open {}", path.display()))?;

    let headers = reader
        .headers()
        .with_context(|| format!("{}: cannot read header row", path.display()))?
        .clone();
    if headers.len() < 2 {
        bail!(
            "{}: header must be `t,curve_1,...` with at least one curve column",
            path.display()
        );
    }
    if headers.get(0) != Some("t") {
        bail!(
            "{}: first header column must be `t`, found `{}`",
            path.display(),
            headers.get(0).unwrap_or("")
        );
    }
    let n = headers.len() - 1;

    let mut ts: Vec<f64> = Vec::new();
    // Row-major by grid point; transposed into curve-major matrices below.
    let mut cells: Vec<Vec<Option<f64>>> = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record =
            record.with_context(|| format!("{}: malformed CSV record", path.display()))?;
        let row = record
            .position()
            .map(|p| p.line())
            .unwrap_or(idx as u64 + 2);
        if record.len() != n + 1 {
            bail!(
                "{}: row {} has {} fields but the header has {}",
                path.display(),
                row,
                record.len(),
                n + 1
            );
        }
        let t: f64 = record[0].parse().with_context(|| {
            format!(
                "{}: row {}, column `t`: `{}` is not a number",
                path.display(),
                row,
                &record[0]
            )
        })?;
        ts.push(t);
        let mut vals = Vec::with_capacity(n);
        for j in 1..=n {
            let cell = &record[j];
            if cell.is_empty() {
                vals.push(None);
            } else {
                let v: f64 = cell.parse().with_context(|| {
                    format!(
                        "{}: row {}, column `{}`: `{}` is not a number",
                        path.display(),
                        row,
                        headers.get(j).unwrap_or(""),
                        cell
                    )
                })?;
                vals.push(Some(v));
            }
        }
        cells.push(vals);
    }

    let grid = Grid::new(ts).with_context(|| format!("{}: grid column `t`", path.display()))?;
    let m = grid.len();
    let curves = DMatrix::from_fn(n, m, |i, j| cells[j][i].unwrap_or(0.0));
    let mask = DMatrix::from_fn(n, m, |i, j| cells[j][i].is_some());
    let sample = FunctionalSample { grid, curves, mask };
    sample
        .validate()
        .with_context(|| format!("{}: invalid curve sample", path.display()))?;
    Ok(sample)
}

/// Parse a single fully observed curve (`t,value` CSV) into its grid and
/// values. Used for hypothesized curves.
pub fn read_single_curve(path: &Path) -> Result<(Grid, Vec<f64>)> {
    let sample = read_curves(path)?;
    if sample.n() != 1 {
        bail!(
            "{}: expected exactly one value column, found {}",
            path.display(),
            sample.n()
        );
    }
    if !sample.is_fully_observed() {
        bail!("{}: the curve must have no missing cells", path.display());
    }
    let values: Vec<f64> = (0..sample.m()).map(|j| sample.curves[(0, j)]).collect();
    Ok((sample.grid, values))
}

/// Render a `t` column plus one named value column, every float in full
/// `%.17e` precision so output files are byte-reproducible.
pub fn column_csv(name: &str, ts: &[f64], values: &[f64]) -> String {
    let mut out = format!("t,{name}\n");
    for (t, v) in ts.iter().zip(values) {
        out.push_str(&format!("{t:.17e},{v:.17e}\n"));
    }
    out
}

/// Write `text` to `path`, or to stdout when no path is given.
pub fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => {
            std::io::stdout()
                .write_all(text.as_bytes())
                .context("cannot write to stdout")
        }
    }
}

/// Plain SVG line rendering of a band: the two limits, the center curve, a
/// framed plot area, and minimal axis labels. Infinite limits of one-sided
/// bands are simply not drawn.
pub fn band_svg(band: &Band) -> String {
    const W: f64 = 800.0;
    const H: f64 = 480.0;
    const ML: f64 = 64.0;
    const MR: f64 = 24.0;
    const MT: f64 = 28.0;
    const MB: f64 = 44.0;

    let mut ymin = f64::INFINITY;
    let mut ymax = f64::NEG_INFINITY;
    for v in band
        .lower
        .iter()
        .chain(&band.upper)
        .chain(&band.center)
        .filter(|v| v.is_finite())
    {
        ymin = ymin.min(*v);
        ymax = ymax.max(*v);
    }
    if !(ymin < ymax) {
        ymax = ymin + 1.0;
    }
    let pad = 0.05 * (ymax - ymin);
    ymin -= pad;
    ymax += pad;

    let x = |t: f64| ML + t * (W - ML - MR);
    let y = |v: f64| MT + (ymax - v) / (ymax - ymin) * (H - MT - MB);
    let polyline = |vals: &[f64], style: &str| -> String {
        let coords: Vec<String> = band
            .grid
            .points()
            .iter()
            .zip(vals)
            .filter(|(_, v)| v.is_finite())
            .map(|(&t, &v)| format!("{:.2},{:.2}", x(t), y(v)))
            .collect();
        if coords.is_empty() {
            return String::new();
        }
        format!(
            "  <polyline fill=\"none\" {style} points=\"{}\"/>\n",
            coords.join(" ")
        )
    };

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\">\n"
    );
    svg.push_str(&format!(
        "  <rect x=\"{ML}\" y=\"{MT}\" width=\"{}\" height=\"{}\" fill=\"white\" \
         stroke=\"black\"/>\n",
        W - ML - MR,
        H - MT - MB
    ));
    svg.push_str(&polyline(
        &band.lower,
        "stroke=\"#2b6cb0\" stroke-width=\"1.5\"",
    ));
    svg.push_str(&polyline(
        &band.upper,
        "stroke=\"#2b6cb0\" stroke-width=\"1.5\"",
    ));
    svg.push_str(&polyline(
        &band.center,
        "stroke=\"black\" stroke-width=\"1.5\" stroke-dasharray=\"5 3\"",
    ));
    svg.push_str(&format!(
        "  <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"13\" text-anchor=\"middle\">0</text>\n",
        x(0.0),
        H - MB + 18.0
    ));
    svg.push_str(&format!(
        "  <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"13\" text-anchor=\"middle\">1</text>\n",
        x(1.0),
        H - MB + 18.0
    ));
    svg.push_str(&format!(
        "  <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"13\" text-anchor=\"end\">{:.4}</text>\n",
        ML - 6.0,
        y(ymin) ,
        ymin
    ));
    svg.push_str(&format!(
        "  <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"13\" text-anchor=\"end\">{:.4}</text>\n",
        ML - 6.0,
        y(ymax) + 10.0,
        ymax
    ));
    svg.push_str(&format!(
        "  <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"13\">{} band, alpha = {}</text>\n",
        ML,
        MT - 8.0,
        band.method,
        band.alpha
    ));
    svg.push_str("</svg>\n");
    svg
}
