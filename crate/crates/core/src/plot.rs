//! Static SVG step plots of cumulative curves.

use std::fmt::Write;

use crate::curve::CumulativeCurve;

const PALETTE: [&str; 8] = [
    "#1f4e9c", "#c0392b", "#2e8b57", "#7d3c98", "#d68910", "#111111", "#17a2b8", "#7f8c8d",
];
const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 300.0;
const MARGIN_L: f64 = 56.0;
const MARGIN_R: f64 = 12.0;
const MARGIN_T: f64 = 28.0;
const MARGIN_B: f64 = 40.0;
const LEGEND_ROW: f64 = 16.0;

/// One plotting panel: a title and the curves drawn in it.
pub struct PlotPanel<'a> {
    pub title: String,
    pub curves: Vec<&'a CumulativeCurve>,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Round outward to a tidy axis range.
fn nice_range(lo: f64, hi: f64) -> (f64, f64) {
    let (lo, hi) = if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    };
    let step = 10f64.powf(((hi - lo) / 5.0).log10().floor());
    ((lo / step).floor() * step, (hi / step).ceil() * step)
}

/// Side-by-side panels sharing one legend (labels from the first panel).
pub fn panels_svg(title: &str, panels: &[PlotPanel<'_>], y_label: &str) -> String {
    let n_legend = panels.first().map_or(0, |p| p.curves.len());
    let width = PANEL_W * panels.len().max(1) as f64;
    let height = PANEL_H + 30.0 + LEGEND_ROW * n_legend as f64;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="16" text-anchor="middle" font-size="13">{}</text>"#,
        width / 2.0,
        esc(title)
    );
    for (k, panel) in panels.iter().enumerate() {
        draw_panel(&mut svg, panel, k as f64 * PANEL_W, 10.0, y_label);
    }
    if let Some(first) = panels.first() {
        for (i, c) in first.curves.iter().enumerate() {
            let y = PANEL_H + 24.0 + LEGEND_ROW * i as f64;
            let colour = PALETTE[i % PALETTE.len()];
            let _ = writeln!(
                svg,
                r#"<line x1="{MARGIN_L}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="{colour}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text>"#,
                MARGIN_L + 24.0,
                MARGIN_L + 30.0,
                y + 4.0,
                esc(&c.label)
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// Single-panel convenience wrapper.
pub fn step_plot_svg(title: &str, curves: &[&CumulativeCurve], y_label: &str) -> String {
    panels_svg(
        title,
        &[PlotPanel {
            title: String::new(),
            curves: curves.to_vec(),
        }],
        y_label,
    )
}

fn draw_panel(svg: &mut String, panel: &PlotPanel<'_>, x0: f64, y0: f64, y_label: &str) {
    let t_max = panel.curves.iter().map(|c| c.t_max()).max().unwrap_or(1).max(1) as f64;
    let mut lo = 0.0f64;
    let mut hi = 0.0f64;
    for c in &panel.curves {
        let (l, u) = c.limits().unwrap_or_else(|| (c.values.clone(), c.values.clone()));
        for v in c.values.iter().chain(&l).chain(&u) {
            if v.is_finite() {
                lo = lo.min(*v);
                hi = hi.max(*v);
            }
        }
    }
    let (lo, hi) = nice_range(lo, hi);
    let pw = PANEL_W - MARGIN_L - MARGIN_R;
    let ph = PANEL_H - MARGIN_T - MARGIN_B;
    let left = x0 + MARGIN_L;
    let top = y0 + MARGIN_T;
    let sx = |t: f64| left + pw * t / (t_max + 1.0);
    let sy = |v: f64| top + ph * (hi - v) / (hi - lo);

    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="12">{}</text>"#,
        left + pw / 2.0,
        top - 6.0,
        esc(&panel.title)
    );
    let _ = writeln!(
        svg,
        r##"<rect x="{left:.1}" y="{top:.1}" width="{pw:.1}" height="{ph:.1}" fill="none" stroke="#444"/>"##
    );
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let y = sy(v);
        let _ = writeln!(
            svg,
            r##"<line x1="{left:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"##,
            left + pw,
            left - 4.0,
            y + 4.0,
            trim(v)
        );
    }
    if lo < 0.0 && hi > 0.0 {
        let y = sy(0.0);
        let _ = writeln!(
            svg,
            r##"<line x1="{left:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#888" stroke-dasharray="3,3"/>"##,
            left + pw
        );
    }
    for t in 0..=(t_max as u32 + 1) {
        let x = sx(t as f64);
        let _ = writeln!(
            svg,
            r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{t}</text>"#,
            top + ph + 14.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">time</text>"#,
        left + pw / 2.0,
        top + ph + 30.0
    );
    let _ = writeln!(
        svg,
        r#"<text transform="translate({:.1},{:.1}) rotate(-90)" text-anchor="middle">{}</text>"#,
        x0 + 14.0,
        top + ph / 2.0,
        esc(y_label)
    );

    for (i, c) in panel.curves.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        if let Some((l, u)) = c.limits() {
            let mut pts = String::new();
            for (k, v) in u.iter().enumerate() {
                let _ = write!(
                    pts,
                    "{:.1},{:.1} {:.1},{:.1} ",
                    sx(k as f64),
                    sy(*v),
                    sx(k as f64 + 1.0),
                    sy(*v)
                );
            }
            for (k, v) in l.iter().enumerate().rev() {
                let _ = write!(
                    pts,
                    "{:.1},{:.1} {:.1},{:.1} ",
                    sx(k as f64 + 1.0),
                    sy(*v),
                    sx(k as f64),
                    sy(*v)
                );
            }
            let _ = writeln!(
                svg,
                r#"<polygon points="{}" fill="{colour}" fill-opacity="0.12" stroke="none"/>"#,
                pts.trim_end()
            );
        }
        // Step path: value v[k] holds on [k, k + 1).
        let mut d = format!("M{:.1},{:.1}", sx(0.0), sy(0.0));
        for (k, v) in c.values.iter().enumerate() {
            let _ = write!(d, " V{:.1} H{:.1}", sy(*v), sx(k as f64 + 1.0));
        }
        let dash = if i >= PALETTE.len() {
            r#" stroke-dasharray="5,3""#
        } else {
            ""
        };
        let _ = writeln!(
            svg,
            r#"<path d="{d}" fill="none" stroke="{colour}" stroke-width="1.8"{dash}/>"#
        );
    }
}

fn trim(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}
