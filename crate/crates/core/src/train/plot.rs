use std::fmt::Write as _;

use super::EpochStats;

const W: f64 = 640.0;
const H: f64 = 220.0;
const MARGIN: f64 = 48.0;

struct Series<'a> {
    name: &'a str,
    color: &'a str,
    points: Vec<(f64, f64)>,
}

fn panel(out: &mut String, top: f64, title: &str, series: &[Series], y_max: Option<f64>) {
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let ys = series.iter().flat_map(|s| s.points.iter().map(|p| p.1));
    let (x0, x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    let (y0, mut y1) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), y| (a.min(y), b.max(y)));
    let y0 = y0.min(0.0);
    if let Some(m) = y_max {
        y1 = y1.min(m);
    }
    let x_span = if x1 > x0 { x1 - x0 } else { 1.0 };
    let y_span = if y1 > y0 { y1 - y0 } else { 1.0 };
    let px = |x: f64| MARGIN + (x - x0) / x_span * (W - 2.0 * MARGIN);
    let py = |y: f64| top + H - MARGIN - (y.min(y1) - y0) / y_span * (H - 2.0 * MARGIN);

    let _ = writeln!(
        out,
        r#"<rect x="{MARGIN}" y="{}" width="{}" height="{}" fill="none" stroke="gray"/>"#,
        top + MARGIN,
        W - 2.0 * MARGIN,
        H - 2.0 * MARGIN
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" font-size="14" text-anchor="middle">{title}</text>"#,
        W / 2.0,
        top + MARGIN - 12.0
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" font-size="10" text-anchor="end">{y1:.3}</text><text x="{}" y="{}" font-size="10" text-anchor="end">{y0:.3}</text>"#,
        MARGIN - 4.0,
        top + MARGIN + 4.0,
        MARGIN - 4.0,
        top + H - MARGIN
    );
    let _ = writeln!(
        out,
        r#"<text x="{MARGIN}" y="{}" font-size="10">{x0}</text><text x="{}" y="{}" font-size="10" text-anchor="end">{x1}</text>"#,
        top + H - MARGIN + 14.0,
        W - MARGIN,
        top + H - MARGIN + 14.0
    );
    for (i, s) in series.iter().enumerate() {
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|p| p.1.is_finite())
            .map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            s.color,
            pts.join(" ")
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-size="11" fill="{}">{}</text>"#,
            W - MARGIN - 80.0,
            top + MARGIN + 16.0 + 14.0 * i as f64,
            s.color,
            s.name
        );
    }
}

/// Loss and train error-rate curves over epochs as a standalone SVG.
pub fn render_svg(stats: &[EpochStats]) -> String {
    let pts = |f: fn(&EpochStats) -> f64| stats.iter().map(|s| (s.epoch as f64, f(s))).collect();
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{}" viewBox="0 0 {W} {}">"#,
        2.0 * H,
        2.0 * H
    );
    if stats.is_empty() {
        let _ = writeln!(out, r#"<text x="20" y="40">no epochs logged</text>"#);
    } else {
        panel(
            &mut out,
            0.0,
            "training loss",
            &[Series {
                name: "loss",
                color: "#1f77b4",
                points: pts(|s| s.loss),
            }],
            None,
        );
        panel(
            &mut out,
            H,
            "train error rate (%)",
            &[
                Series {
                    name: "LER",
                    color: "#d62728",
                    points: pts(|s| 100.0 * s.train_ler),
                },
                Series {
                    name: "WER",
                    color: "#2ca02c",
                    points: pts(|s| 100.0 * s.train_wer),
                },
            ],
            Some(100.0),
        );
    }
    out.push_str("</svg>\n");
    out
}
