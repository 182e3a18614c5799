//! Minimal static SVG bar charts for the report breakdowns. Hand-written SVG
//! keeps the figure outputs dependency-free; nothing here is interactive.

use std::fmt::Write as _;

/// Renders a grouped bar chart. `categories` label the x-axis groups and each
/// entry of `series` is one bar color across all groups.
pub fn grouped_bar_chart(
    title: &str,
    categories: &[String],
    series: &[(String, Vec<f64>)],
) -> String {
    const PALETTE: [&str; 6] = [
        "#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#b07aa1", "#76b7b2",
    ];
    let width = 720.0;
    let height = 400.0;
    let margin_left = 60.0;
    let margin_bottom = 60.0;
    let margin_top = 40.0;
    let plot_w = width - margin_left - 20.0;
    let plot_h = height - margin_top - margin_bottom;

    let max_value = series
        .iter()
        .flat_map(|(_, vs)| vs.iter())
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
        .max(1e-9);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(
        svg,
        r#"<rect width="{width}" height="{height}" fill="white"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"#,
        width / 2.0,
        xml_escape(title)
    );

    // Axes.
    let x0 = margin_left;
    let y0 = margin_top + plot_h;
    let _ = writeln!(
        svg,
        r#"<line x1="{x0}" y1="{y0}" x2="{}" y2="{y0}" stroke="black"/>"#,
        x0 + plot_w
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{margin_top}" stroke="black"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="12" y="{}" font-family="sans-serif" font-size="11" transform="rotate(-90 12 {})">{:.3}</text>"#,
        margin_top + 40.0,
        margin_top + 40.0,
        max_value
    );

    let n_groups = categories.len().max(1);
    let n_series = series.len().max(1);
    let group_w = plot_w / n_groups as f64;
    let bar_w = (group_w * 0.8) / n_series as f64;

    for (g, cat) in categories.iter().enumerate() {
        let gx = x0 + g as f64 * group_w;
        for (s, (_, values)) in series.iter().enumerate() {
            let v = values.get(g).copied().unwrap_or(0.0);
            let h = (v.abs() / max_value) * plot_h;
            let bx = gx + group_w * 0.1 + s as f64 * bar_w;
            let by = y0 - h;
            let color = PALETTE[s % PALETTE.len()];
            let _ = writeln!(
                svg,
                r#"<rect x="{bx:.2}" y="{by:.2}" width="{:.2}" height="{h:.2}" fill="{color}"><title>{}: {v}</title></rect>"#,
                bar_w * 0.9,
                xml_escape(cat)
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#,
            gx + group_w / 2.0,
            y0 + 18.0,
            xml_escape(cat)
        );
    }

    // Legend.
    for (s, (name, _)) in series.iter().enumerate() {
        let lx = x0 + s as f64 * 140.0;
        let ly = height - 18.0;
        let color = PALETTE[s % PALETTE.len()];
        let _ = writeln!(
            svg,
            r#"<rect x="{lx}" y="{}" width="12" height="12" fill="{color}"/>"#,
            ly - 10.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{ly}" font-family="sans-serif" font-size="12">{}</text>"#,
            lx + 16.0,
            xml_escape(name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
