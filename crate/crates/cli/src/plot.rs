//! SVG charts: convergence curves on a log scale and phase heatmaps with the
//! 50% contour.

use std::collections::BTreeSet;

use lrmc::experiments::{extract_contour, PhaseGrid, CONVERGENCE_HEADER, PHASE_HEADER};
use plotters::prelude::*;

use crate::PlotKind;

const SIZE: (u32, u32) = (800, 520);

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
}

fn field<T: std::str::FromStr>(
    record: &csv::StringRecord,
    idx: usize,
    line: usize,
) -> Result<T, String> {
    let raw = record.get(idx).unwrap_or("");
    raw.parse()
        .map_err(|_| format!("line {line}: cannot parse `{raw}` in column {}", idx + 1))
}

fn records(text: &str) -> Result<(Vec<String>, Vec<csv::StringRecord>), String> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| e.to_string())?
        .iter()
        .map(str::to_owned)
        .collect();
    let rows = reader
        .records()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    Ok((header, rows))
}

fn parse_series(rows: &[csv::StringRecord]) -> Result<Vec<Series>, String> {
    let mut series: Vec<(String, f64, Series)> = Vec::new();
    for (n, rec) in rows.iter().enumerate() {
        let line = n + 2;
        let alg: String = field(rec, 0, line)?;
        let lambda: f64 = field(rec, 1, line)?;
        let k: usize = field(rec, 2, line)?;
        let err: f64 = field(rec, 3, line)?;
        let idx = match series
            .iter()
            .position(|(a, l, _)| *a == alg && *l == lambda)
        {
            Some(idx) => idx,
            None => {
                let label = if lambda > 0.0 {
                    format!("{alg} (lambda {lambda:e})")
                } else {
                    alg.clone()
                };
                series.push((
                    alg,
                    lambda,
                    Series {
                        label,
                        points: Vec::new(),
                    },
                ));
                series.len() - 1
            }
        };
        if err > 0.0 && err.is_finite() {
            series[idx].2.points.push((k as f64, err));
        }
    }
    Ok(series.into_iter().map(|(_, _, s)| s).collect())
}

fn parse_grid(rows: &[csv::StringRecord]) -> Result<PhaseGrid, String> {
    let mut cells = Vec::with_capacity(rows.len());
    for (n, rec) in rows.iter().enumerate() {
        let line = n + 2;
        let p: f64 = field(rec, 0, line)?;
        let r: usize = field(rec, 1, line)?;
        let trials: usize = field(rec, 2, line)?;
        let successes: usize = field(rec, 3, line)?;
        if trials == 0 || successes > trials {
            return Err(format!(
                "line {line}: {successes} successes out of {trials} trials"
            ));
        }
        cells.push((p, r, trials, successes));
    }
    let mut p_values: Vec<f64> = cells.iter().map(|c| c.0).collect();
    p_values.sort_by(f64::total_cmp);
    p_values.dedup();
    let r_values: Vec<usize> = cells
        .iter()
        .map(|c| c.1)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let trials = cells[0].2;
    if cells.iter().any(|c| c.2 != trials) {
        return Err("trial counts differ between cells".into());
    }
    let mut successes = vec![vec![None; p_values.len()]; r_values.len()];
    for &(p, r, _, s) in &cells {
        let pi = p_values.iter().position(|&x| x == p).unwrap_or_default();
        let ri = r_values.iter().position(|&x| x == r).unwrap_or_default();
        if successes[ri][pi].replace(s).is_some() {
            return Err(format!("cell (p = {p}, r = {r}) appears twice"));
        }
    }
    let successes = successes
        .into_iter()
        .map(|row| row.into_iter().collect::<Option<Vec<usize>>>())
        .collect::<Option<Vec<_>>>()
        .ok_or("the grid has missing cells")?;
    let mut grid = PhaseGrid {
        p_values,
        r_values,
        trials,
        successes,
        contour: Vec::new(),
    };
    grid.contour = extract_contour(&grid);
    Ok(grid)
}

fn draw_lines(series: &[Series]) -> Result<String, String> {
    let points = series.iter().flat_map(|s| &s.points);
    let k_max = points.clone().map(|p| p.0).fold(1.0, f64::max);
    let lo = points.clone().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let hi = points.map(|p| p.1).fold(0.0, f64::max);
    if !(lo <= hi) {
        return Err("no positive relative errors to plot".into());
    }
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(|e| e.to_string())?;
        let mut chart = ChartBuilder::on(&root)
            .caption("Relative error", ("sans-serif", 20))
            .margin(15)
            .x_label_area_size(40)
            .y_label_area_size(70)
            .build_cartesian_2d(0.0..k_max, (lo / 2.0..hi * 2.0).log_scale())
            .map_err(|e| e.to_string())?;
        chart
            .configure_mesh()
            .x_desc("iteration")
            .y_desc("relative error")
            .y_label_formatter(&|v| format!("{v:.0e}"))
            .draw()
            .map_err(|e| e.to_string())?;
        for (idx, s) in series.iter().enumerate() {
            let color = Palette99::pick(idx).to_rgba();
            chart
                .draw_series(LineSeries::new(
                    s.points.iter().copied(),
                    color.stroke_width(2),
                ))
                .map_err(|e| e.to_string())?
                .label(s.label.as_str())
                .legend(move |(x, y)| {
                    Rectangle::new([(x, y - 4), (x + 16, y + 4)], color.filled())
                });
        }
        chart
            .configure_series_labels()
            .position(SeriesLabelPosition::UpperRight)
            .background_style(WHITE)
            .border_style(BLACK)
            .draw()
            .map_err(|e| e.to_string())?;
        root.present().map_err(|e| e.to_string())?;
    }
    Ok(svg)
}

/// Cell boundaries around sorted grid values.
fn edges(values: &[f64], pad: f64) -> Vec<f64> {
    let n = values.len();
    let mut out = Vec::with_capacity(n + 1);
    let half = |a: usize, b: usize| 0.5 * (values[b] - values[a]);
    out.push(values[0] - if n > 1 { half(0, 1) } else { pad });
    for k in 1..n {
        out.push(values[k - 1] + half(k - 1, k));
    }
    out.push(values[n - 1] + if n > 1 { half(n - 2, n - 1) } else { pad });
    out
}

fn draw_heatmap(grid: &PhaseGrid) -> Result<String, String> {
    let r_values: Vec<f64> = grid.r_values.iter().map(|&r| r as f64).collect();
    let (px, ry) = (edges(&grid.p_values, 0.05), edges(&r_values, 0.5));
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(|e| e.to_string())?;
        let mut chart = ChartBuilder::on(&root)
            .caption("Success rate and 50% contour", ("sans-serif", 20))
            .margin(15)
            .x_label_area_size(40)
            .y_label_area_size(50)
            .build_cartesian_2d(px[0]..px[px.len() - 1], ry[0]..ry[ry.len() - 1])
            .map_err(|e| e.to_string())?;
        chart
            .configure_mesh()
            .disable_mesh()
            .x_desc("sampling rate p")
            .y_desc("rank r")
            .draw()
            .map_err(|e| e.to_string())?;
        let (px, ry) = (&px, &ry);
        let cells = (0..grid.r_values.len()).flat_map(|ri| {
            (0..grid.p_values.len()).map(move |pi| {
                let shade = (255.0 * grid.rate(ri, pi)).round() as u8;
                Rectangle::new(
                    [(px[pi], ry[ri]), (px[pi + 1], ry[ri + 1])],
                    RGBColor(shade, shade, shade).filled(),
                )
            })
        });
        chart.draw_series(cells).map_err(|e| e.to_string())?;
        let contour: Vec<(f64, f64)> = grid
            .contour
            .iter()
            .filter_map(|c| c.p_cross.map(|p| (p, c.r as f64)))
            .collect();
        if !contour.is_empty() {
            chart
                .draw_series(LineSeries::new(contour, RED.stroke_width(2)))
                .map_err(|e| e.to_string())?;
        }
        root.present().map_err(|e| e.to_string())?;
    }
    Ok(svg)
}

/// Renders CSV text as an SVG document. The chart type follows the header;
/// a requested `kind` that disagrees with it is an error.
pub fn render(text: &str, kind: Option<PlotKind>) -> Result<String, String> {
    let (header, rows) = records(text)?;
    let detected = if header == CONVERGENCE_HEADER {
        PlotKind::Lines
    } else if header == PHASE_HEADER {
        PlotKind::Heatmap
    } else {
        return Err(format!(
            "unrecognized header `{}`; expected `{}` or `{}`",
            header.join(","),
            CONVERGENCE_HEADER.join(","),
            PHASE_HEADER.join(",")
        ));
    };
    if let Some(k) = kind.filter(|&k| k != detected) {
        return Err(match k {
            PlotKind::Lines => "--kind lines needs a convergence CSV, got a phase CSV",
            PlotKind::Heatmap => "--kind heatmap needs a phase CSV, got a convergence CSV",
        }
        .into());
    }
    if rows.is_empty() {
        return Err("no data rows".into());
    }
    match detected {
        PlotKind::Lines => draw_lines(&parse_series(&rows)?),
        PlotKind::Heatmap => draw_heatmap(&parse_grid(&rows)?),
    }
}
