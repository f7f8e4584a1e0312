//! Minimal SVG rendering for phase heatmaps and residual-decay curves.
//!
//! Both renderers embed a caller-supplied JSON string (configuration and
//! seed) in a `<metadata>` element.

use std::fmt::Write as _;

use crate::experiment::GridResult;
use crate::flow::Trajectory;
use crate::theory::TheoryReport;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 70.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn open(out: &mut String, title: &str, metadata: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, "<title>{}</title>", escape(title));
    let _ = writeln!(out, "<metadata>{}</metadata>", escape(metadata));
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
}

fn label(out: &mut String, x: f64, y: f64, anchor: &str, text: &str) {
    let _ = writeln!(
        out,
        r#"<text x="{x:.1}" y="{y:.1}" text-anchor="{anchor}">{}</text>"#,
        escape(text)
    );
}

/// White (0) to dark blue (1).
fn shade(freq: f64) -> String {
    let f = freq.clamp(0.0, 1.0);
    let r = (255.0 * (1.0 - f) + 20.0 * f) as u8;
    let g = (255.0 * (1.0 - f) + 50.0 * f) as u8;
    let b = (255.0 * (1.0 - f) + 140.0 * f) as u8;
    format!("#{r:02x}{g:02x}{b:02x}")
}

/// Success-frequency heatmap: axis 1 vertical (bottom to top), axis 2 horizontal.
pub fn heatmap(result: &GridResult, metadata: &str) -> String {
    let spec = &result.spec;
    let rows = spec.axis1.values.len();
    let cols = spec.axis2.values.len();
    let cw = (WIDTH - 2.0 * MARGIN) / cols as f64;
    let ch = (HEIGHT - 2.0 * MARGIN) / rows as f64;
    let mut out = String::new();
    open(&mut out, "success frequency", metadata);
    for c in &result.cells {
        let x = MARGIN + c.axis2_index as f64 * cw;
        let y = HEIGHT - MARGIN - (c.axis1_index + 1) as f64 * ch;
        let f = c.success_freq();
        let _ = writeln!(
            out,
            r#"<rect x="{x:.1}" y="{y:.1}" width="{cw:.1}" height="{ch:.1}" fill="{}" stroke="gray"/>"#,
            shade(f)
        );
        let colour = if f > 0.5 { "white" } else { "black" };
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" fill="{colour}">{f:.2}</text>"#,
            x + cw / 2.0,
            y + ch / 2.0 + 4.0
        );
    }
    for (j, v) in spec.axis2.values.iter().enumerate() {
        label(
            &mut out,
            MARGIN + (j as f64 + 0.5) * cw,
            HEIGHT - MARGIN + 18.0,
            "middle",
            &v.to_string(),
        );
    }
    for (i, v) in spec.axis1.values.iter().enumerate() {
        label(
            &mut out,
            MARGIN - 8.0,
            HEIGHT - MARGIN - (i as f64 + 0.5) * ch + 4.0,
            "end",
            &v.to_string(),
        );
    }
    label(
        &mut out,
        WIDTH / 2.0,
        HEIGHT - 20.0,
        "middle",
        spec.axis2.param.name(),
    );
    label(
        &mut out,
        20.0,
        HEIGHT / 2.0,
        "middle",
        spec.axis1.param.name(),
    );
    out.push_str("</svg>\n");
    out
}

/// Semilog plot of `‖y(t) − y‖` with the theoretical envelope as a dashed line.
pub fn decay_curve(traj: &Trajectory, report: &TheoryReport, metadata: &str) -> String {
    let pts: Vec<(f64, f64)> = traj
        .samples
        .iter()
        .filter(|s| s.residual_y.is_finite() && s.residual_y > 0.0)
        .map(|s| (s.time, s.residual_y.log10()))
        .collect();
    let t_max = pts
        .iter()
        .map(|p| p.0)
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let env: Vec<(f64, f64)> = (0..=100)
        .map(|i| {
            let t = t_max * i as f64 / 100.0;
            (t, report.residual_envelope(t))
        })
        .filter(|p| p.1 > 0.0)
        .map(|(t, v)| (t, v.log10()))
        .collect();
    let (lo, hi) = pts
        .iter()
        .chain(env.iter())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.1), hi.max(p.1))
        });
    let (lo, hi) = if lo.is_finite() && hi > lo {
        (lo.floor(), hi.ceil())
    } else {
        (-1.0, 1.0)
    };
    let sx = |t: f64| MARGIN + (WIDTH - 2.0 * MARGIN) * t / t_max;
    let sy = |v: f64| HEIGHT - MARGIN - (HEIGHT - 2.0 * MARGIN) * (v - lo) / (hi - lo);
    let path = |p: &[(f64, f64)]| {
        p.iter()
            .map(|&(t, v)| format!("{:.2},{:.2}", sx(t), sy(v)))
            .collect::<Vec<_>>()
            .join(" ")
    };

    let mut out = String::new();
    open(&mut out, "residual decay", metadata);
    let _ = writeln!(
        out,
        r#"<line x1="{m}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{m}" y1="{m}" x2="{m}" y2="{b}" stroke="black"/>"#,
        m = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN
    );
    let _ = writeln!(
        out,
        r#"<polyline points="{}" fill="none" stroke="firebrick" stroke-dasharray="6,4"/>"#,
        path(&env)
    );
    let _ = writeln!(
        out,
        r#"<polyline points="{}" fill="none" stroke="navy" stroke-width="1.5"/>"#,
        path(&pts)
    );
    let mut e = lo as i64;
    while e as f64 <= hi {
        label(
            &mut out,
            MARGIN - 8.0,
            sy(e as f64) + 4.0,
            "end",
            &format!("1e{e}"),
        );
        e += 1;
    }
    label(&mut out, MARGIN, HEIGHT - MARGIN + 18.0, "middle", "0");
    label(
        &mut out,
        WIDTH - MARGIN,
        HEIGHT - MARGIN + 18.0,
        "middle",
        &format!("{t_max:.3}"),
    );
    label(&mut out, WIDTH / 2.0, HEIGHT - 20.0, "middle", "t");
    label(&mut out, 20.0, HEIGHT / 2.0, "middle", "residual");
    label(
        &mut out,
        WIDTH - MARGIN,
        MARGIN - 10.0,
        "end",
        "solid: measured, dashed: envelope",
    );
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn escaping_and_shading() {
        assert_eq!(escape("a<b & c>"), "a&lt;b &amp; c&gt;");
        assert_eq!(shade(0.0), "#ffffff");
        assert_eq!(shade(1.0), "#14328c");
    }
}
