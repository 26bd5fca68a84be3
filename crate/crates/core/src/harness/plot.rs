//! Static SVG charts from the aggregate CSV files of a run directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use super::config::Algorithm;

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("missing metrics: {0}")]
    MissingMetrics(String),
    #[error("i/o failure on {path}: {message}")]
    Io { path: PathBuf, message: String },
}

#[derive(Debug, Deserialize)]
struct AggregateRow {
    k: usize,
    i: usize,
    algorithm: String,
    mean_sq_error: f64,
}

#[derive(Debug, Deserialize)]
struct NetworkRow {
    k: usize,
    algorithm: String,
    mean_r_t: f64,
    mean_lambda_min_coop: f64,
    mean_regret_ratio: f64,
}

type Series = (String, Vec<(f64, f64)>);

struct Panel {
    title: String,
    y_label: &'static str,
    series: Vec<Series>,
}

const WIDTH: f64 = 720.0;
const PANEL_HEIGHT: f64 = 280.0;
const MARGIN_LEFT: f64 = 80.0;
const MARGIN_RIGHT: f64 = 175.0;
const MARGIN_TOP: f64 = 36.0;
const MARGIN_BOTTOM: f64 = 44.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, PlotError> {
    if !path.exists() {
        return Err(PlotError::MissingMetrics(format!("{} not found", path.display())));
    }
    let mut reader = csv::Reader::from_path(path).map_err(|e| PlotError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    reader
        .deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| PlotError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

fn algorithm_order(name: &str) -> usize {
    Algorithm::from_id(name).map_or(usize::MAX, |a| a as usize)
}

fn nice_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let frac = raw / mag;
    let nice = if frac < 1.5 {
        1.0
    } else if frac < 3.5 {
        2.0
    } else if frac < 7.5 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-3 {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn render(panels: &[Panel], x_label: &str) -> String {
    let height = PANEL_HEIGHT * panels.len() as f64;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (p, panel) in panels.iter().enumerate() {
        let top = p as f64 * PANEL_HEIGHT + MARGIN_TOP;
        let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
        let plot_h = PANEL_HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
        let points = panel.series.iter().flat_map(|(_, pts)| pts.iter());
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in points {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        y0 = y0.min(0.0);
        if x1 <= x0 {
            x1 = x0 + 1.0;
        }
        if y1 <= y0 {
            y1 = y0 + 1.0;
        }
        let step = nice_step(y1 - y0);
        y1 = (y1 / step).ceil() * step;
        let sx = |x: f64| MARGIN_LEFT + (x - x0) / (x1 - x0) * plot_w;
        let sy = |y: f64| top + plot_h - (y - y0) / (y1 - y0) * plot_h;

        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="14">{}</text>"#,
            MARGIN_LEFT + plot_w / 2.0,
            top - 12.0,
            escape(&panel.title)
        );
        let _ = writeln!(
            svg,
            r#"<rect x="{MARGIN_LEFT}" y="{top:.1}" width="{plot_w:.1}" height="{plot_h:.1}" fill="none" stroke="black"/>"#
        );
        let mut tick = y0;
        while tick <= y1 + step * 1e-9 {
            let y = sy(tick);
            let _ = writeln!(
                svg,
                r##"<line x1="{MARGIN_LEFT}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#dddddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"##,
                MARGIN_LEFT + plot_w,
                MARGIN_LEFT - 6.0,
                y + 4.0,
                fmt_tick(tick)
            );
            tick += step;
        }
        let xstep = nice_step(x1 - x0);
        let mut xt = (x0 / xstep).ceil() * xstep;
        while xt <= x1 + xstep * 1e-9 {
            let x = sx(xt);
            let _ = writeln!(
                svg,
                r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                top + plot_h + 16.0,
                fmt_tick(xt)
            );
            xt += xstep;
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{x_label}</text>"#,
            MARGIN_LEFT + plot_w / 2.0,
            top + plot_h + 34.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"#,
            top + plot_h / 2.0,
            top + plot_h / 2.0,
            escape(panel.y_label)
        );
        for (s, (label, pts)) in panel.series.iter().enumerate() {
            let color = COLORS[s % COLORS.len()];
            let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
            let _ = writeln!(
                svg,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                path.join(" ")
            );
            let ly = top + 10.0 + 18.0 * s as f64;
            let lx = MARGIN_LEFT + plot_w + 12.0;
            let _ = writeln!(
                svg,
                r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text>"#,
                lx + 20.0,
                lx + 26.0,
                ly + 4.0,
                escape(label)
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

fn finite(points: impl Iterator<Item = (f64, f64)>) -> Vec<(f64, f64)> {
    points.filter(|(x, y)| x.is_finite() && y.is_finite()).collect()
}

fn write(path: PathBuf, body: String) -> Result<PathBuf, PlotError> {
    fs::write(&path, body).map_err(|e| PlotError::Io {
        path: path.clone(),
        message: e.to_string(),
    })?;
    Ok(path)
}

/// Writes `figures/estimation_errors.svg`, `figures/excitation_ratio.svg` and
/// `figures/regret_ratio.svg` under `dir`, returning the written paths.
pub fn emit_plots(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, PlotError> {
    let dir = dir.as_ref();
    let rows: Vec<AggregateRow> = read_csv(&dir.join("aggregate.csv"))?;
    let network: Vec<NetworkRow> = read_csv(&dir.join("network_aggregate.csv"))?;

    let mut by_algo: BTreeMap<(usize, String), BTreeMap<usize, Vec<(f64, f64)>>> = BTreeMap::new();
    for r in &rows {
        by_algo
            .entry((algorithm_order(&r.algorithm), r.algorithm.clone()))
            .or_default()
            .entry(r.i)
            .or_default()
            .push((r.k as f64, r.mean_sq_error));
    }
    if by_algo.is_empty() {
        return Err(PlotError::MissingMetrics("no algorithm rows in aggregate.csv".into()));
    }
    let error_panels: Vec<Panel> = by_algo
        .into_iter()
        .map(|((_, name), nodes)| Panel {
            title: format!("{name}: mean squared estimation error"),
            y_label: "mean squared error",
            series: nodes
                .into_iter()
                .map(|(i, pts)| (format!("node {}", i + 1), finite(pts.into_iter())))
                .collect(),
        })
        .collect();

    let mut net: BTreeMap<(usize, String), Vec<&NetworkRow>> = BTreeMap::new();
    for r in &network {
        net.entry((algorithm_order(&r.algorithm), r.algorithm.clone())).or_default().push(r);
    }
    let first = net
        .values()
        .next()
        .ok_or_else(|| PlotError::MissingMetrics("no rows in network_aggregate.csv".into()))?;
    let excitation = Panel {
        title: "excitation ratio log(r_t) / lambda_min".into(),
        y_label: "ratio",
        series: vec![(
            "network".into(),
            finite(first.iter().map(|r| (r.k as f64, r.mean_r_t.ln() / r.mean_lambda_min_coop))),
        )],
    };
    let regret = Panel {
        title: "accumulated regret / log(r_t)".into(),
        y_label: "ratio",
        series: net
            .iter()
            .map(|((_, name), rs)| (name.clone(), finite(rs.iter().map(|r| (r.k as f64, r.mean_regret_ratio)))))
            .collect(),
    };

    let fig_dir = dir.join("figures");
    fs::create_dir_all(&fig_dir).map_err(|e| PlotError::Io {
        path: fig_dir.clone(),
        message: e.to_string(),
    })?;
    Ok(vec![
        write(fig_dir.join("estimation_errors.svg"), render(&error_panels, "k"))?,
        write(fig_dir.join("excitation_ratio.svg"), render(&[excitation], "t"))?,
        write(fig_dir.join("regret_ratio.svg"), render(&[regret], "t"))?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_are_round() {
        assert_eq!(nice_step(10.0), 2.0);
        assert_eq!(nice_step(0.7), 0.1);
        assert_eq!(fmt_tick(0.25), "0.25");
        assert_eq!(fmt_tick(2.0), "2");
    }

    #[test]
    fn missing_directory_is_missing_metrics() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(emit_plots(dir.path()), Err(PlotError::MissingMetrics(_))));
    }

    #[test]
    fn header_only_files_are_missing_metrics() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("aggregate.csv"), "k,i,algorithm,mean_sq_error,mean_regret\n").unwrap();
        fs::write(
            dir.path().join("network_aggregate.csv"),
            "k,algorithm,mean_r_t,mean_lambda_min_coop,mean_V,mean_logdet,max_phiPphi,mean_accumulated_regret,mean_regret_ratio,mean_rate_statistic\n",
        )
        .unwrap();
        assert!(matches!(emit_plots(dir.path()), Err(PlotError::MissingMetrics(_))));
    }
}
