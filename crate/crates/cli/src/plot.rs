//! Minimal SVG charts from report CSVs, and spin-image grids.

use std::fmt::Write;

use valleyscope::{Error, Result, Spin};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChartKind {
    Line,
    /// Stacked bars, one per row.
    Bar,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    /// Comma-separated text; `#` lines are provenance and skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .filter(|l| !l.starts_with('#') && !l.trim().is_empty());
        let headers: Vec<String> = lines
            .next()
            .ok_or_else(|| Error::Domain("CSV has no header".into()))?
            .split(',')
            .map(|s| s.trim().to_string())
            .collect();
        let rows: Vec<Vec<String>> = lines
            .map(|l| l.split(',').map(|s| s.trim().to_string()).collect())
            .collect();
        if let Some(r) = rows.iter().find(|r| r.len() != headers.len()) {
            return Err(Error::Shape(format!(
                "row {r:?} does not match {} columns",
                headers.len()
            )));
        }
        Ok(Self { headers, rows })
    }

    fn index(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Lookup(format!("no column {name:?}; have {:?}", self.headers)))
    }

    pub fn column(&self, name: &str) -> Result<Vec<String>> {
        let k = self.index(name)?;
        Ok(self.rows.iter().map(|r| r[k].clone()).collect())
    }

    /// Empty cells read as NaN and are skipped when drawing.
    pub fn numeric(&self, name: &str) -> Result<Vec<f64>> {
        self.column(name)?
            .iter()
            .map(|s| {
                if s.is_empty() {
                    Ok(f64::NAN)
                } else {
                    s.parse::<f64>().map_err(|_| {
                        Error::Domain(format!("{s:?} in column {name:?} is not a number"))
                    })
                }
            })
            .collect()
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn frame(title: &str, x_label: &str, y_range: (f64, f64)) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let (x0, y0, x1, y1) = (
        MARGIN,
        HEIGHT - MARGIN,
        WIDTH - MARGIN / 2.0,
        MARGIN / 2.0 + 8.0,
    );
    let _ = writeln!(
        s,
        r#"<path d="M{x0} {y1} L{x0} {y0} L{x1} {y0}" stroke="black" fill="none"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    for k in 0..=4 {
        let v = y_range.0 + (y_range.1 - y_range.0) * f64::from(k) / 4.0;
        let y = y0 - (y0 - y1) * f64::from(k) / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            x0 - 6.0,
            y + 4.0,
            tick(v)
        );
    }
    s
}

fn tick(v: f64) -> String {
    if v == 0.0 || (v.abs() >= 0.01 && v.abs() < 1e4) {
        format!("{:.3}", v)
            .trim_end_matches('0')
            .trim_end_matches('.')
            .to_string()
    } else {
        format!("{v:.2e}")
    }
}

fn legend(s: &mut String, names: &[String]) {
    for (k, name) in names.iter().enumerate() {
        let y = MARGIN / 2.0 + 12.0 + 16.0 * k as f64;
        let x = WIDTH - MARGIN / 2.0 - 140.0;
        let _ = writeln!(
            s,
            r#"<rect x="{x:.2}" y="{:.2}" width="10" height="10" fill="{}"/>"#,
            y - 9.0,
            PALETTE[k % PALETTE.len()]
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{y:.2}">{}</text>"#,
            x + 14.0,
            escape(name)
        );
    }
}

fn map(v: f64, (lo, hi): (f64, f64), a: f64, b: f64) -> f64 {
    a + (v - lo) / (hi - lo) * (b - a)
}

pub fn line_chart(title: &str, x_label: &str, x: &[f64], series: &[(String, Vec<f64>)]) -> String {
    let xr = range(x.iter().copied());
    let yr = range(series.iter().flat_map(|(_, ys)| ys.iter().copied()));
    let mut s = frame(title, x_label, yr);
    let (x0, y0, x1, y1) = (
        MARGIN,
        HEIGHT - MARGIN,
        WIDTH - MARGIN / 2.0,
        MARGIN / 2.0 + 8.0,
    );
    for k in 0..=4 {
        let v = xr.0 + (xr.1 - xr.0) * f64::from(k) / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            map(v, xr, x0, x1),
            y0 + 16.0,
            tick(v)
        );
    }
    for (k, (_, ys)) in series.iter().enumerate() {
        let points: Vec<String> = x
            .iter()
            .zip(ys)
            .filter(|(a, b)| a.is_finite() && b.is_finite())
            .map(|(&a, &b)| format!("{:.2},{:.2}", map(a, xr, x0, x1), map(b, yr, y0, y1)))
            .collect();
        let colour = PALETTE[k % PALETTE.len()];
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="2"/>"#,
            points.join(" ")
        );
        for p in &points {
            let (px, py) = p.split_once(',').expect("formatted pair");
            let _ = writeln!(s, r#"<circle cx="{px}" cy="{py}" r="3" fill="{colour}"/>"#);
        }
    }
    let names: Vec<String> = series.iter().map(|(n, _)| n.clone()).collect();
    legend(&mut s, &names);
    s.push_str("</svg>\n");
    s
}

pub fn bar_chart(
    title: &str,
    x_label: &str,
    labels: &[String],
    series: &[(String, Vec<f64>)],
) -> String {
    let totals: Vec<f64> = (0..labels.len())
        .map(|i| {
            series
                .iter()
                .map(|(_, ys)| ys[i].max(0.0))
                .filter(|v| v.is_finite())
                .sum()
        })
        .collect();
    let yr = (0.0, totals.iter().copied().fold(0.0, f64::max).max(1.0));
    let mut s = frame(title, x_label, yr);
    let (x0, y0, x1, y1) = (
        MARGIN,
        HEIGHT - MARGIN,
        WIDTH - MARGIN / 2.0,
        MARGIN / 2.0 + 8.0,
    );
    let slot = (x1 - x0) / labels.len().max(1) as f64;
    let stride = labels.len().div_ceil(10).max(1);
    for (i, label) in labels.iter().enumerate() {
        let left = x0 + slot * i as f64 + slot * 0.1;
        let mut base = 0.0;
        for (k, (_, ys)) in series.iter().enumerate() {
            let v = ys[i];
            if !(v.is_finite() && v > 0.0) {
                continue;
            }
            let top = map(base + v, yr, y0, y1);
            let bottom = map(base, yr, y0, y1);
            let _ = writeln!(
                s,
                r#"<rect x="{left:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                slot * 0.8,
                bottom - top,
                PALETTE[k % PALETTE.len()]
            );
            base += v;
        }
        if i % stride == 0 {
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                left + slot * 0.4,
                y0 + 16.0,
                escape(label)
            );
        }
    }
    let names: Vec<String> = series.iter().map(|(n, _)| n.clone()).collect();
    legend(&mut s, &names);
    s.push_str("</svg>\n");
    s
}

/// Chart of `y_cols` against `x_col` from CSV text.
pub fn plot_csv(
    text: &str,
    x_col: &str,
    y_cols: &[String],
    kind: ChartKind,
    title: &str,
) -> Result<String> {
    let table = Table::parse(text)?;
    if y_cols.is_empty() {
        return Err(Error::Domain("plot needs at least one y column".into()));
    }
    let series = y_cols
        .iter()
        .map(|c| Ok((c.clone(), table.numeric(c)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(match kind {
        ChartKind::Line => line_chart(title, x_col, &table.numeric(x_col)?, &series),
        ChartKind::Bar => bar_chart(title, x_col, &table.column(x_col)?, &series),
    })
}

/// Spin images as black (+1) and white (-1) cells, `cols` wide and laid out
/// in a grid of `per_row` images with captions.
pub fn image_grid(images: &[(String, Vec<Spin>)], cols: usize, per_row: usize) -> String {
    let cell = 6.0;
    let rows = images
        .first()
        .map_or(0, |(_, v)| v.len().div_ceil(cols.max(1)));
    let (w, h) = (cols as f64 * cell + 12.0, rows as f64 * cell + 24.0);
    let grid_rows = images.len().div_ceil(per_row.max(1)).max(1);
    let (total_w, total_h) = (w * per_row.max(1) as f64, h * grid_rows as f64);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total_w}" height="{total_h}" font-family="sans-serif" font-size="8">"#
    );
    let _ = writeln!(
        s,
        r#"<rect width="{total_w}" height="{total_h}" fill="white"/>"#
    );
    for (n, (caption, v)) in images.iter().enumerate() {
        let ox = (n % per_row.max(1)) as f64 * w + 6.0;
        let oy = (n / per_row.max(1)) as f64 * h + 4.0;
        let _ = writeln!(
            s,
            r#"<rect x="{ox}" y="{oy}" width="{}" height="{}" fill="none" stroke="gray"/>"#,
            cols as f64 * cell,
            rows as f64 * cell
        );
        for (j, &spin) in v.iter().enumerate() {
            if spin > 0 {
                let (r, c) = (j / cols, j % cols);
                let _ = writeln!(
                    s,
                    r#"<rect x="{}" y="{}" width="{cell}" height="{cell}"/>"#,
                    ox + c as f64 * cell,
                    oy + r as f64 * cell
                );
            }
        }
        let _ = writeln!(
            s,
            r#"<text x="{ox}" y="{}">{}</text>"#,
            oy + rows as f64 * cell + 12.0,
            escape(caption)
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const CSV: &str =
        "# provenance\nscale,classification_error,reconstruction_error\n1,0.5,0.2\n2,0.25,\n";

    #[test]
    fn parses_csv_and_skips_provenance() {
        let t = Table::parse(CSV).unwrap();
        assert_eq!(t.headers.len(), 3);
        assert_eq!(t.numeric("scale").unwrap(), vec![1.0, 2.0]);
        assert!(t.numeric("reconstruction_error").unwrap()[1].is_nan());
        assert!(t.numeric("missing").is_err());
        assert!(Table::parse("a,b\n1\n").is_err());
    }

    #[test]
    fn line_chart_has_one_polyline_per_series() {
        let y = [
            "classification_error".to_string(),
            "reconstruction_error".to_string(),
        ];
        let svg = plot_csv(CSV, "scale", &y, ChartKind::Line, "errors").unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(
            svg,
            plot_csv(CSV, "scale", &y, ChartKind::Line, "errors").unwrap()
        );
    }

    #[test]
    fn bar_chart_stacks_nonzero_segments() {
        let csv = "lo,hi,shared,only,total\n0,1,2,1,3\n1,2,0,4,4\n";
        let y = ["shared".to_string(), "only".to_string()];
        let svg = plot_csv(csv, "lo", &y, ChartKind::Bar, "h").unwrap();
        assert_eq!(svg.matches("<rect x=").count(), 3 + 2);
    }

    #[test]
    fn image_grid_draws_positive_cells() {
        let svg = image_grid(
            &[
                ("a".into(), vec![1, -1, -1, 1]),
                ("b".into(), vec![1, 1, 1, 1]),
            ],
            2,
            2,
        );
        assert_eq!(svg.matches("width=\"6\"").count(), 6);
    }
}
