//! Side-by-side SVG of skeletons before and after the learned view.
//!
//! Joints are projected orthographically onto the x-y plane (x to the
//! right, y up). All panels share one scale so poses stay comparable.

use std::fmt::Write;

use viewadapt::skeleton::SkeletonSequence;

use crate::CliError;

const PANEL: f64 = 240.0;
const PAD: f64 = 20.0;
const HEADER: f64 = 28.0;

/// One row per frame index: the input skeleton left, the transformed one
/// right. `bones` are joint index pairs drawn as lines.
pub fn render_svg(
    original: &SkeletonSequence,
    transformed: &SkeletonSequence,
    frames: &[usize],
    bones: &[(usize, usize)],
) -> Result<String, CliError> {
    if frames.is_empty() {
        return Err(CliError::Usage("no frames selected".into()));
    }
    if let Some(&t) = frames.iter().find(|&&t| t >= original.num_frames()) {
        return Err(CliError::Usage(format!(
            "frame {t} out of range for a {}-frame sequence",
            original.num_frames()
        )));
    }
    let points = frames.iter().flat_map(|&t| {
        original.frames[t]
            .joints
            .iter()
            .chain(&transformed.frames[t].joints)
    });
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in points {
        for (k, v) in [p.x, p.y].into_iter().enumerate() {
            lo[k] = lo[k].min(v);
            hi[k] = hi[k].max(v);
        }
    }
    let extent = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-9);
    let scale = (PANEL - 2.0 * PAD) / extent;
    let center = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];

    let width = 2.0 * PANEL;
    let height = HEADER + PANEL * frames.len() as f64;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (col, title) in ["input", "learned view"].iter().enumerate() {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="18" font-family="sans-serif" font-size="14" text-anchor="middle">{title}</text>"#,
            PANEL * (col as f64 + 0.5)
        );
    }
    for (row, &t) in frames.iter().enumerate() {
        for (col, seq) in [original, transformed].into_iter().enumerate() {
            let ox = PANEL * col as f64 + PANEL / 2.0;
            let oy = HEADER + PANEL * row as f64 + PANEL / 2.0;
            let xy: Vec<(f64, f64)> = seq.frames[t]
                .joints
                .iter()
                .map(|j| {
                    (
                        ox + (j.x - center[0]) * scale,
                        oy - (j.y - center[1]) * scale,
                    )
                })
                .collect();
            let _ = writeln!(
                svg,
                r##"<g id="frame{t}-{}"><rect x="{:.1}" y="{:.1}" width="{PANEL:.0}" height="{PANEL:.0}" fill="none" stroke="#ccc"/>"##,
                if col == 0 { "input" } else { "view" },
                ox - PANEL / 2.0,
                oy - PANEL / 2.0
            );
            let _ = writeln!(
                svg,
                r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11">frame {t}</text>"#,
                ox - PANEL / 2.0 + 6.0,
                oy - PANEL / 2.0 + 14.0
            );
            for &(a, b) in bones {
                if a < xy.len() && b < xy.len() {
                    let _ = writeln!(
                        svg,
                        r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#345" stroke-width="2"/>"##,
                        xy[a].0, xy[a].1, xy[b].0, xy[b].1
                    );
                }
            }
            for (x, y) in &xy {
                let _ = writeln!(
                    svg,
                    r##"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="#c33"/>"##
                );
            }
            let _ = writeln!(svg, "</g>");
        }
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}
