//! SVG phase portraits of simulated executions.

use std::fmt::Write;

use zenocert_core::hybrid::HybridSystem;
use zenocert_core::simulator::Execution;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 640.0;
const MARGIN: f64 = 48.0;
/// Cells per side of the grid used to trace guard curves.
const GRID: usize = 160;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

struct View {
    lo: [f64; 2],
    hi: [f64; 2],
}

impl View {
    fn px(&self, x: f64, y: f64) -> (f64, f64) {
        let u = MARGIN + (x - self.lo[0]) / (self.hi[0] - self.lo[0]) * (WIDTH - 2.0 * MARGIN);
        let v = HEIGHT - MARGIN - (y - self.lo[1]) / (self.hi[1] - self.lo[1]) * (HEIGHT - 2.0 * MARGIN);
        (u, v)
    }
}

fn view_of(points: impl Iterator<Item = (f64, f64)>) -> View {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for (x, y) in points {
        lo = [lo[0].min(x), lo[1].min(y)];
        hi = [hi[0].max(x), hi[1].max(y)];
    }
    for k in 0..2 {
        if !lo[k].is_finite() {
            lo[k] = -1.0;
            hi[k] = 1.0;
        }
        let pad = 0.08 * (hi[k] - lo[k]).max(1e-9);
        lo[k] -= pad;
        hi[k] += pad;
    }
    View { lo, hi }
}

/// Zero-level segments of `f` on the view, restricted to points where `keep` holds.
fn contour(view: &View, f: &dyn Fn(f64, f64) -> f64, keep: &dyn Fn(f64, f64) -> bool) -> Vec<[(f64, f64); 2]> {
    let at = |i: usize, j: usize| {
        let x = view.lo[0] + (view.hi[0] - view.lo[0]) * i as f64 / GRID as f64;
        let y = view.lo[1] + (view.hi[1] - view.lo[1]) * j as f64 / GRID as f64;
        (x, y, f(x, y))
    };
    let mut segments = Vec::new();
    for i in 0..GRID {
        for j in 0..GRID {
            let corners = [at(i, j), at(i + 1, j), at(i + 1, j + 1), at(i, j + 1)];
            let mut crossings = Vec::new();
            for k in 0..4 {
                let (a, b) = (corners[k], corners[(k + 1) % 4]);
                if (a.2 <= 0.0) != (b.2 <= 0.0) {
                    let t = a.2 / (a.2 - b.2);
                    crossings.push((a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1)));
                }
            }
            for pair in crossings.chunks_exact(2) {
                let mid = (0.5 * (pair[0].0 + pair[1].0), 0.5 * (pair[0].1 + pair[1].1));
                if keep(mid.0, mid.1) {
                    segments.push([pair[0], pair[1]]);
                }
            }
        }
    }
    segments
}

/// Phase portrait of the first two states, or of the only state against time,
/// with trajectories colored by mode and guard curves dashed.
pub fn phase_portrait(sys: &HybridSystem, exec: &Execution, names: &[String]) -> String {
    let planar = sys.n_state() >= 2;
    let coords = |t: f64, x: &[f64]| if planar { (x[0], x[1]) } else { (t, x[0]) };
    let view = view_of(exec.intervals.iter().flat_map(|iv| iv.samples.iter().map(|s| coords(s.t, &s.x))));
    let mode_color = |id: usize| {
        let k = sys.modes.iter().position(|m| m.id == id).unwrap_or(0);
        PALETTE[k % PALETTE.len()]
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (x0, y0) = view.px(view.lo[0], view.lo[1]);
    let (x1, y1) = view.px(view.hi[0], view.hi[1]);
    let _ = writeln!(
        svg,
        r##"<rect x="{x0:.2}" y="{y1:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#888"/>"##,
        x1 - x0,
        y0 - y1
    );
    let (xl, yl) = if planar { (names[0].clone(), names[1].clone()) } else { ("t".to_string(), names[0].clone()) };
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="14" text-anchor="middle">{xl}</text>"#,
        0.5 * WIDTH,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{:.2}" font-family="sans-serif" font-size="14" text-anchor="middle" transform="rotate(-90 16 {:.2})">{yl}</text>"#,
        0.5 * HEIGHT,
        0.5 * HEIGHT
    );
    for (k, (lo, hi)) in [(view.lo[0], view.hi[0]), (view.lo[1], view.hi[1])].into_iter().enumerate() {
        let label = format!("[{lo:.3}, {hi:.3}]");
        let (x, y, anchor) = if k == 0 { (x1, y0 + 16.0, "end") } else { (x0 + 4.0, y1 - 6.0, "start") };
        let _ = writeln!(
            svg,
            r##"<text x="{x:.2}" y="{y:.2}" font-family="sans-serif" font-size="11" fill="#555" text-anchor="{anchor}">{label}</text>"##
        );
    }

    if planar {
        let fixed: Vec<f64> = match exec.final_state() {
            Some((_, s)) => s.x.clone(),
            None => vec![0.0; sys.n_state()],
        };
        for (e, edge) in sys.edges.iter().enumerate() {
            let point = |x: f64, y: f64| {
                let mut p = fixed.clone();
                p[0] = x;
                p[1] = y;
                p.extend_from_slice(&exec.params);
                p
            };
            let f = |x: f64, y: f64| edge.guard.equality.eval_unchecked(&point(x, y));
            let keep =
                |x: f64, y: f64| edge.guard.inequalities.iter().all(|h| h.poly.eval_unchecked(&point(x, y)) >= -1e-9);
            let dash = 4 + 2 * e;
            let _ = write!(
                svg,
                r##"<path fill="none" stroke="#444" stroke-width="1" stroke-dasharray="{dash} 3" data-edge="{}-{}" d=""##,
                edge.from, edge.to
            );
            for [a, b] in contour(&view, &f, &keep) {
                let (ax, ay) = view.px(a.0, a.1);
                let (bx, by) = view.px(b.0, b.1);
                let _ = write!(svg, "M{ax:.2} {ay:.2}L{bx:.2} {by:.2}");
            }
            let _ = writeln!(svg, r#""/>"#);
        }
    }

    for iv in &exec.intervals {
        if iv.samples.is_empty() {
            continue;
        }
        let _ = write!(svg, r#"<polyline fill="none" stroke="{}" stroke-width="1.2" points=""#, mode_color(iv.mode));
        for s in &iv.samples {
            let (x, y) = coords(s.t, &s.x);
            let (u, v) = view.px(x, y);
            let _ = write!(svg, "{u:.2},{v:.2} ");
        }
        let _ = writeln!(svg, r#""/>"#);
    }
    if let Some(s) = exec.intervals.first().and_then(|iv| iv.samples.first()) {
        let (x, y) = coords(s.t, &s.x);
        let (u, v) = view.px(x, y);
        let _ = writeln!(svg, r#"<circle cx="{u:.2}" cy="{v:.2}" r="3" fill="black"/>"#);
    }

    for (k, m) in sys.modes.iter().enumerate() {
        let y = 20.0 + 16.0 * k as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{}" stroke-width="2"/><text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12">mode {}</text>"#,
            WIDTH - 120.0,
            WIDTH - 100.0,
            mode_color(m.id),
            WIDTH - 94.0,
            y + 4.0,
            m.id
        );
    }
    svg.push_str("</svg>\n");
    svg
}
