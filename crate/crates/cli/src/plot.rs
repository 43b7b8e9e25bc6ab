//! Static SVG line charts for the match-curve report.

use std::fmt::Write;

use tasktransfer::adaptation::{Curve, MatchCurves};

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

/// Rolling success (0..1) against training step, one polyline per series.
/// Absent series are listed in the legend as "(no samples)".
pub fn line_chart(title: &str, series: &[(&str, &str, Option<&Curve>)], notes: &[String]) -> String {
    let max_step = series
        .iter()
        .filter_map(|(_, _, c)| c.and_then(|c| c.last().map(|p| p.0)))
        .max()
        .unwrap_or(1)
        .max(1) as f64;
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let x = |step: usize| LEFT + pw * step as f64 / max_step;
    let y = |v: f64| TOP + ph * (1.0 - v.clamp(0.0, 1.0));

    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#).unwrap();
    writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, LEFT + pw / 2.0, escape(title)).unwrap();

    for k in 0..=5 {
        let v = k as f64 / 5.0;
        writeln!(s, r##"<line x1="{LEFT}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#ddd"/>"##, y(v), LEFT + pw, y(v)).unwrap();
        writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.1}</text>"#, LEFT - 6.0, y(v) + 4.0).unwrap();
    }
    for k in 0..=4 {
        let step = (max_step * k as f64 / 4.0).round() as usize;
        writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{step}</text>"#, x(step), TOP + ph + 18.0).unwrap();
    }
    writeln!(s, r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>"##).unwrap();
    writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">training step</text>"#, LEFT + pw / 2.0, H - 12.0).unwrap();
    writeln!(s, r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">rolling success</text>"#, TOP + ph / 2.0, TOP + ph / 2.0).unwrap();

    for (idx, (name, color, curve)) in series.iter().enumerate() {
        let ly = TOP + 10.0 + 20.0 * idx as f64;
        let lx = W - RIGHT + 14.0;
        match curve {
            Some(c) if !c.is_empty() => {
                let pts: Vec<String> = c.iter().map(|&(st, v)| format!("{:.2},{:.2}", x(st), y(v))).collect();
                writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, pts.join(" ")).unwrap();
                writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0).unwrap();
                writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 26.0, ly + 4.0, escape(name)).unwrap();
            }
            _ => {
                writeln!(s, r##"<text x="{}" y="{}" fill="#888">{} (no samples)</text>"##, lx, ly + 4.0, escape(name)).unwrap();
            }
        }
    }
    for (k, note) in notes.iter().enumerate() {
        writeln!(s, r##"<text x="{}" y="{:.2}" fill="#a00">{}</text>"##, W - RIGHT + 14.0, TOP + 110.0 + 16.0 * k as f64, escape(note)).unwrap();
    }
    s.push_str("</svg>\n");
    s
}

/// Chart for one dimension's match curves.
pub fn match_chart(m: &MatchCurves) -> String {
    let dim = m.dimension.name();
    let mut notes = Vec::new();
    if m.matching.is_none() {
        notes.push(format!("no {dim}-matching pairs"));
    }
    if m.differing.is_none() {
        notes.push(format!("no {dim}-differing pairs"));
    }
    let same = format!("same {dim} (n={})", m.n_matching);
    let diff = format!("different {dim} (n={})", m.n_differing);
    line_chart(
        &format!("Adaptation by {dim} match"),
        &[
            (&same, "#1f77b4", m.matching.as_ref()),
            (&diff, "#d62728", m.differing.as_ref()),
            ("all pairs", "#7f7f7f", Some(&m.overall)),
            ("from scratch", "#2ca02c", m.scratch.as_ref()),
        ],
        &notes,
    )
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_is_deterministic_and_marks_missing_series() {
        let c: Curve = vec![(0, 0.0), (500, 0.5), (1000, 1.0)];
        let a = line_chart("t <1>", &[("a", "red", Some(&c)), ("b", "blue", None)], &["note".into()]);
        assert_eq!(a, line_chart("t <1>", &[("a", "red", Some(&c)), ("b", "blue", None)], &["note".into()]));
        assert!(a.starts_with("<svg"));
        assert!(a.contains("t &lt;1&gt;"));
        assert!(a.contains("b (no samples)"));
        assert!(a.contains(r#"points="60.00,350.00 265.00,195.00 470.00,40.00""#));
    }
}
