//! Plain SVG rendering of scenes and trajectories.

use std::fmt::Write as _;

use crate::dynamics::State;
use crate::scenario::ScenarioConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceStyle {
    Filtered,
    Baseline,
}

pub struct Trace<'a> {
    pub states: &'a [State],
    pub style: TraceStyle,
    pub label: &'a str,
}

/// Obstacles, computed-region circles, reference line and trajectories.
pub fn render_svg(cfg: &ScenarioConfig, traces: &[Trace<'_>]) -> String {
    let g = &cfg.grid;
    let (mut x0, mut x1, mut y0, mut y1) = (g.x_range[0], g.x_range[1], g.y_range[0], g.y_range[1]);
    for t in traces {
        for s in t.states {
            x0 = x0.min(s.x);
            x1 = x1.max(s.x);
            y0 = y0.min(s.y);
            y1 = y1.max(s.y);
        }
    }
    let pad = 2.0;
    let (x0, x1, y0, y1) = (x0 - pad, x1 + pad, y0 - pad, y1 + pad);
    let scale = 900.0 / (x1 - x0).max(y1 - y0);
    let w = (x1 - x0) * scale;
    let h = (y1 - y0) * scale;
    let px = |x: f64| (x - x0) * scale;
    let py = |y: f64| (y1 - y) * scale;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.1}" height="{h:.1}" viewBox="0 0 {w:.1} {h:.1}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for c in cfg.obstacles.circles() {
        let _ = writeln!(
            out,
            r#"<circle cx="{:.2}" cy="{:.2}" r="{:.2}" fill="none" stroke="green" stroke-width="1.5"/>"#,
            px(c.center[0]),
            py(c.center[1]),
            (c.radius + g.mask_threshold) * scale
        );
    }
    for c in cfg.obstacles.circles() {
        let _ = writeln!(
            out,
            r#"<circle cx="{:.2}" cy="{:.2}" r="{:.2}" fill="black" fill-opacity="0.8"/>"#,
            px(c.center[0]),
            py(c.center[1]),
            c.radius * scale
        );
    }
    let yr = py(cfg.nominal.y_ref);
    let _ = writeln!(
        out,
        r#"<line x1="0" y1="{yr:.2}" x2="{w:.1}" y2="{yr:.2}" stroke="red" stroke-width="1.5" stroke-dasharray="6 4"/>"#
    );
    for t in traces {
        let (color, width) = match t.style {
            TraceStyle::Filtered => ("blue", 2.0),
            TraceStyle::Baseline => ("gray", 1.5),
        };
        let mut pts = String::new();
        for s in t.states {
            let _ = write!(pts, "{:.2},{:.2} ", px(s.x), py(s.y));
        }
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="{width}"><title>{}</title></polyline>"#,
            pts.trim_end(),
            t.label
        );
        let every = (t.states.len() / 40).max(1);
        for s in t.states.iter().step_by(every) {
            let len = 0.8;
            let _ = writeln!(
                out,
                r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="1"/>"#,
                px(s.x),
                py(s.y),
                px(s.x + len * s.psi.cos()),
                py(s.y + len * s.psi.sin())
            );
        }
    }
    out.push_str("</svg>\n");
    out
}
