//! Self-contained SVG rendering of phase-space scatters and timelines.

use std::fmt::Write as _;

use desync_core::analytics::PhaseSpaceSeries;

const SIZE: f64 = 640.0;
const MARGIN: f64 = 64.0;
const WIDE: f64 = 960.0;
const TALL: f64 = 420.0;

/// Provenance written into every plot.
pub struct Stamp<'a> {
    pub config_hash: &'a str,
    pub seed: u64,
    /// Unix seconds; `None` omits the comment for reproducible output.
    pub timestamp: Option<u64>,
}

fn header(out: &mut String, width: f64, height: f64, stamp: &Stamp<'_>) {
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" data-config-hash="{}" data-seed="{}">"#,
        stamp.config_hash, stamp.seed
    )
    .unwrap();
    writeln!(out, "<!-- config_hash={} seed={} -->", stamp.config_hash, stamp.seed).unwrap();
    if let Some(t) = stamp.timestamp {
        writeln!(out, "<!-- generated at unix time {t} -->").unwrap();
    }
    writeln!(out, r#"<rect width="{width}" height="{height}" fill="white"/>"#).unwrap();
}

/// Range padded so a constant input still spans a visible interval.
fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        let pad = 0.04 * (hi - lo);
        (lo - pad, hi + pad)
    } else {
        let pad = if lo == 0.0 { 1.0 } else { 0.05 * lo.abs() };
        (lo - pad, hi + pad)
    }
}

/// Blue for early iterations through red for late ones.
pub fn color(key: f64) -> String {
    let k = key.clamp(0.0, 1.0);
    format!("rgb({},0,{})", (255.0 * k).round(), (255.0 * (1.0 - k)).round())
}

/// Scatter of `(m_i, m_{i+1})` on equal axes with the diagonal as guide.
/// Each marker carries its exact coordinates in `data-x` and `data-y`.
pub fn phase_space(ps: &PhaseSpaceSeries, label: &str, stamp: &Stamp<'_>) -> String {
    let (lo, hi) = ps
        .points
        .iter()
        .flat_map(|&(x, y)| [x, y])
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = padded(lo, hi);
    let span = SIZE - 2.0 * MARGIN;
    let px = |v: f64| MARGIN + (v - lo) / (hi - lo) * span;
    let py = |v: f64| SIZE - MARGIN - (v - lo) / (hi - lo) * span;

    let mut out = String::new();
    header(&mut out, SIZE, SIZE, stamp);
    writeln!(
        out,
        r##"<rect x="{MARGIN}" y="{MARGIN}" width="{span}" height="{span}" fill="none" stroke="#444"/>"##
    )
    .unwrap();
    writeln!(
        out,
        r##"<line class="diagonal" x1="{:.3}" y1="{:.3}" x2="{:.3}" y2="{:.3}" stroke="#999" stroke-dasharray="4 4"/>"##,
        px(lo),
        py(lo),
        px(hi),
        py(hi)
    )
    .unwrap();
    let text = |out: &mut String, x: f64, y: f64, anchor: &str, s: &str| {
        writeln!(
            out,
            r#"<text x="{x:.1}" y="{y:.1}" font-family="sans-serif" font-size="12" text-anchor="{anchor}">{s}</text>"#
        )
        .unwrap();
    };
    text(&mut out, SIZE / 2.0, SIZE - 16.0, "middle", &format!("{label} at i"));
    text(&mut out, 16.0, MARGIN - 16.0, "start", &format!("{label} at i+1"));
    text(&mut out, MARGIN, SIZE - MARGIN + 16.0, "start", &format!("{lo:.4e}"));
    text(&mut out, SIZE - MARGIN, SIZE - MARGIN + 16.0, "end", &format!("{hi:.4e}"));
    text(&mut out, MARGIN - 4.0, SIZE - MARGIN, "end", &format!("{lo:.2e}"));
    text(&mut out, MARGIN - 4.0, MARGIN + 10.0, "end", &format!("{hi:.2e}"));

    writeln!(out, r#"<g class="points" data-rank="{}">"#, ps.rank).unwrap();
    for ((&(x, y), &i), &c) in ps.points.iter().zip(&ps.iterations).zip(&ps.color_key) {
        writeln!(
            out,
            r#"<circle cx="{:.3}" cy="{:.3}" r="2.5" fill="{}" fill-opacity="0.7" data-x="{x}" data-y="{y}" data-iteration="{i}"/>"#,
            px(x),
            py(y),
            color(c)
        )
        .unwrap();
    }
    out.push_str("</g>\n</svg>\n");
    out
}

/// Mean line with a plus/minus one standard deviation band across ranks.
pub fn timeline(
    first_iteration: usize,
    mean: &[f64],
    std: &[f64],
    label: &str,
    stamp: &Stamp<'_>,
) -> String {
    let n = mean.len();
    let (lo, hi) = mean
        .iter()
        .zip(std)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (m, s)| (a.min(m - s), b.max(m + s)));
    let (lo, hi) = padded(lo, hi);
    let last = (first_iteration + n.saturating_sub(1)) as f64;
    let first = first_iteration as f64;
    let x_span = (last - first).max(1.0);
    let px = |i: usize| MARGIN + ((first_iteration + i) as f64 - first) / x_span * (WIDE - 2.0 * MARGIN);
    let py = |v: f64| TALL - MARGIN - (v - lo) / (hi - lo) * (TALL - 2.0 * MARGIN);

    let mut out = String::new();
    header(&mut out, WIDE, TALL, stamp);
    writeln!(
        out,
        r##"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="#444"/>"##,
        WIDE - 2.0 * MARGIN,
        TALL - 2.0 * MARGIN
    )
    .unwrap();
    let upper = (0..n).map(|i| format!("{:.3},{:.3}", px(i), py(mean[i] + std[i])));
    let lower = (0..n).rev().map(|i| format!("{:.3},{:.3}", px(i), py(mean[i] - std[i])));
    let band: Vec<String> = upper.chain(lower).collect();
    writeln!(
        out,
        r##"<polygon class="band" points="{}" fill="#9ecae1" fill-opacity="0.6" stroke="none"/>"##,
        band.join(" ")
    )
    .unwrap();
    let line: Vec<String> = (0..n).map(|i| format!("{:.3},{:.3}", px(i), py(mean[i]))).collect();
    writeln!(
        out,
        r##"<polyline class="mean" points="{}" fill="none" stroke="#08519c" stroke-width="1.2" data-first-iteration="{first_iteration}" data-count="{n}"/>"##,
        line.join(" ")
    )
    .unwrap();
    for (x, y, anchor, s) in [
        (WIDE / 2.0, TALL - 16.0, "middle", "iteration".to_string()),
        (16.0, MARGIN - 16.0, "start", format!("{label}: mean and std over ranks")),
        (MARGIN, TALL - MARGIN + 16.0, "start", format!("{first_iteration}")),
        (WIDE - MARGIN, TALL - MARGIN + 16.0, "end", format!("{}", last as usize)),
        (MARGIN - 4.0, TALL - MARGIN, "end", format!("{lo:.3e}")),
        (MARGIN - 4.0, MARGIN + 10.0, "end", format!("{hi:.3e}")),
    ] {
        writeln!(
            out,
            r#"<text x="{x:.1}" y="{y:.1}" font-family="sans-serif" font-size="12" text-anchor="{anchor}">{s}</text>"#
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    out
}
