//! Self-contained SVG line charts of summary curves: one chart per
//! environment, one polyline per agent, x = round, y = mean cumulative
//! average regret. Output is deterministic — the same summary file always
//! renders byte-identical SVG.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::runner::SUMMARY_HEADER;

/// One parsed `summary.csv` row.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub env: String,
    pub agent: String,
    pub round: u64,
    pub mean_cum_avg: f64,
    pub std_cum_avg: f64,
}

/// Read and validate a `summary.csv` produced by the runner. Errors carry
/// 1-based line numbers.
pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_summary(&text, path)
}

fn parse_summary(text: &str, path: &Path) -> Result<Vec<SummaryRow>> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == SUMMARY_HEADER => {}
        Some((_, header)) => {
            return Err(err(
                1,
                format!("bad header {header:?}, expected {SUMMARY_HEADER:?}"),
            ))
        }
        None => return Err(err(1, "empty file".into())),
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(err(
                lineno,
                format!("expected 5 fields, found {}", fields.len()),
            ));
        }
        let round: u64 = fields[2]
            .parse()
            .map_err(|_| err(lineno, format!("bad round {:?}", fields[2])))?;
        let mean_cum_avg: f64 = fields[3]
            .parse()
            .map_err(|_| err(lineno, format!("bad mean_cum_avg {:?}", fields[3])))?;
        let std_cum_avg: f64 = fields[4]
            .parse()
            .map_err(|_| err(lineno, format!("bad std_cum_avg {:?}", fields[4])))?;
        if !mean_cum_avg.is_finite() || !std_cum_avg.is_finite() {
            return Err(err(lineno, "non-finite value".into()));
        }
        rows.push(SummaryRow {
            env: fields[0].to_string(),
            agent: fields[1].to_string(),
            round,
            mean_cum_avg,
            std_cum_avg,
        });
    }
    if rows.is_empty() {
        return Err(err(1, "summary has a header but no rows".into()));
    }
    Ok(rows)
}

const WIDTH: f64 = 860.0;
const HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 72.0;
const MARGIN_RIGHT: f64 = 200.0;
const MARGIN_TOP: f64 = 42.0;
const MARGIN_BOTTOM: f64 = 58.0;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
    "#bcbd22", "#7f7f7f",
];

/// Render one environment's chart. `rows` must all belong to `env`;
/// agents are drawn in lexicographic order with a fixed palette.
pub fn render_chart(env: &str, rows: &[SummaryRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::InvalidInput(format!("no summary rows for env {env:?}")));
    }
    let mut agents: BTreeMap<&str, Vec<(u64, f64)>> = BTreeMap::new();
    let mut max_round = 1u64;
    let mut y_max = f64::MIN;
    let mut y_min = f64::MAX;
    for row in rows {
        if row.env != env {
            return Err(Error::InvalidInput(format!(
                "row for env {:?} passed to chart for {env:?}",
                row.env
            )));
        }
        agents
            .entry(&row.agent)
            .or_default()
            .push((row.round, row.mean_cum_avg));
        max_round = max_round.max(row.round);
        y_max = y_max.max(row.mean_cum_avg);
        y_min = y_min.min(row.mean_cum_avg);
    }
    for series in agents.values_mut() {
        series.sort_by_key(|(round, _)| *round);
    }
    // pad the y range so curves never sit on the frame
    if y_min > 0.0 {
        y_min = 0.0;
    }
    let span = (y_max - y_min).abs();
    let pad = if span > 0.0 { span * 0.05 } else { 1.0 };
    let y_hi = y_max + pad;
    let y_lo = y_min;
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let x_of = |round: u64| -> f64 {
        let frac = if max_round > 1 {
            (round.saturating_sub(1)) as f64 / (max_round - 1) as f64
        } else {
            0.0
        };
        MARGIN_LEFT + frac * plot_w
    };
    let y_of = |v: f64| -> f64 {
        let frac = (v - y_lo) / (y_hi - y_lo);
        MARGIN_TOP + (1.0 - frac) * plot_h
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{}: mean cumulative average regret</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        escape(env)
    );
    // frame
    let _ = writeln!(
        svg,
        r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="#333" stroke-width="1"/>"##,
        MARGIN_LEFT, MARGIN_TOP, plot_w, plot_h
    );
    // x ticks
    for i in 0..=4u64 {
        let round = 1 + (max_round - 1) * i / 4;
        let x = x_of(round);
        let _ = writeln!(
            svg,
            r##"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="#333" stroke-width="1"/>"##,
            MARGIN_TOP + plot_h,
            MARGIN_TOP + plot_h + 5.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{x:.1}" y="{:.1}" font-family="sans-serif" font-size="12" text-anchor="middle">{round}</text>"#,
            MARGIN_TOP + plot_h + 20.0
        );
    }
    // y ticks
    for i in 0..=4u32 {
        let v = y_lo + (y_hi - y_lo) * f64::from(i) / 4.0;
        let y = y_of(v);
        let _ = writeln!(
            svg,
            r##"<line x1="{:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#333" stroke-width="1"/>"##,
            MARGIN_LEFT - 5.0,
            MARGIN_LEFT
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12" text-anchor="end">{}</text>"#,
            MARGIN_LEFT - 9.0,
            y + 4.0,
            format_tick(v)
        );
    }
    // axis labels
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="13" text-anchor="middle">round</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 14.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{:.1}" font-family="sans-serif" font-size="13" text-anchor="middle" transform="rotate(-90 18 {:.1})">mean cumulative average regret</text>"#,
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0
    );
    // curves + legend
    for (idx, (agent, series)) in agents.iter().enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        let mut points = String::new();
        for (round, v) in series {
            let _ = write!(points, "{:.2},{:.2} ", x_of(*round), y_of(*v));
        }
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            points.trim_end()
        );
        let ly = MARGIN_TOP + 14.0 + idx as f64 * 20.0;
        let lx = MARGIN_LEFT + plot_w + 14.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2.5"/>"#,
            lx + 22.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12">{}</text>"#,
            lx + 28.0,
            ly + 4.0,
            escape(agent)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn format_tick(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else if v.abs() >= 1.0 {
        format!("{v:.2}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Read `summary.csv` and write one `regret-<env>.svg` per environment
/// into `out_dir`. Returns the written paths in environment order.
pub fn write_plots(summary: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let rows = read_summary(summary)?;
    let mut by_env: BTreeMap<String, Vec<SummaryRow>> = BTreeMap::new();
    for row in rows {
        by_env.entry(row.env.clone()).or_default().push(row);
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    for (env, rows) in &by_env {
        let svg = render_chart(env, rows)?;
        let path = out_dir.join(format!("regret-{env}.svg"));
        std::fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
