//! Run artifact emission: timeline CSV, JSON reports, and minimal SVG line
//! charts rendered without plotting dependencies. CSV and JSON bodies are
//! deterministic; wall-clock metadata goes to a separate file.

use crate::attack::TimelineRow;
use std::io::Write;
use std::path::Path;

pub fn write_run_csv(path: &Path, rows: &[TimelineRow]) -> std::io::Result<()> {
    let mut out = String::from("step,episode_return_raw,btp,asr,r_dagger,r_l,r_u,phase,frozen\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.step, r.episode_return_raw, r.btp, r.asr, r.r_dagger, r.r_l, r.r_u, r.phase, r.frozen
        ));
    }
    std::fs::write(path, out)
}

pub struct ChartSeries {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 5] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];
const W: f64 = 640.0;
const H: f64 = 360.0;
const MARGIN: f64 = 48.0;

/// Writes a minimal SVG line chart. Axis ranges are the data extents.
pub fn write_line_chart(path: &Path, title: &str, series: &[ChartSeries]) -> std::io::Result<()> {
    let mut xs = (f64::INFINITY, f64::NEG_INFINITY);
    let mut ys = (f64::INFINITY, f64::NEG_INFINITY);
    for s in series {
        for (x, y) in &s.points {
            xs = (xs.0.min(*x), xs.1.max(*x));
            ys = (ys.0.min(*y), ys.1.max(*y));
        }
    }
    if !xs.0.is_finite() {
        xs = (0.0, 1.0);
        ys = (0.0, 1.0);
    }
    if xs.0 == xs.1 {
        xs.1 += 1.0;
    }
    if ys.0 == ys.1 {
        ys.1 += 1.0;
    }
    let px = |x: f64| MARGIN + (x - xs.0) / (xs.1 - xs.0) * (W - 2.0 * MARGIN);
    let py = |y: f64| H - MARGIN - (y - ys.0) / (ys.1 - ys.0) * (H - 2.0 * MARGIN);

    let mut f = std::fs::File::create(path)?;
    writeln!(
        f,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    )?;
    writeln!(f, r#"<rect width="{W}" height="{H}" fill="white"/>"#)?;
    writeln!(
        f,
        r#"<text x="{}" y="20" font-size="14" text-anchor="middle" font-family="sans-serif">{title}</text>"#,
        W / 2.0
    )?;
    // axes
    writeln!(
        f,
        r#"<line x1="{m}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{m}" y1="{t}" x2="{m}" y2="{b}" stroke="black"/>"#,
        m = MARGIN,
        b = H - MARGIN,
        r = W - MARGIN,
        t = MARGIN
    )?;
    for (v, x, y, anchor) in [
        (xs.0, MARGIN, H - MARGIN + 16.0, "middle"),
        (xs.1, W - MARGIN, H - MARGIN + 16.0, "middle"),
        (ys.0, MARGIN - 6.0, H - MARGIN, "end"),
        (ys.1, MARGIN - 6.0, MARGIN + 4.0, "end"),
    ] {
        writeln!(
            f,
            r#"<text x="{x}" y="{y}" font-size="10" text-anchor="{anchor}" font-family="sans-serif">{v:.3}</text>"#
        )?;
    }
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y)))
            .collect();
        writeln!(
            f,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        )?;
        writeln!(
            f,
            r#"<text x="{}" y="{}" font-size="11" fill="{color}" font-family="sans-serif">{}</text>"#,
            W - MARGIN + 4.0 - 90.0,
            MARGIN + 14.0 * (i as f64 + 1.0),
            s.label
        )?;
    }
    writeln!(f, "</svg>")
}

/// Standard charts for one attack run: BTP/ASR and the reward-space
/// trajectory against env steps.
pub fn write_timeline_charts(dir: &Path, rows: &[TimelineRow]) -> std::io::Result<()> {
    let pick = |get: fn(&TimelineRow) -> f64| -> Vec<(f64, f64)> {
        rows.iter().map(|r| (r.step as f64, get(r))).collect()
    };
    write_line_chart(
        &dir.join("performance.svg"),
        "monitored BTP / ASR",
        &[
            ChartSeries {
                label: "BTP".into(),
                points: pick(|r| r.btp),
            },
            ChartSeries {
                label: "ASR".into(),
                points: pick(|r| r.asr),
            },
        ],
    )?;
    write_line_chart(
        &dir.join("reward_space.svg"),
        "backdoor reward space",
        &[
            ChartSeries {
                label: "r_dagger".into(),
                points: pick(|r| r.r_dagger),
            },
            ChartSeries {
                label: "r_l".into(),
                points: pick(|r| r.r_l),
            },
            ChartSeries {
                label: "r_u".into(),
                points: pick(|r| r.r_u),
            },
        ],
    )
}
