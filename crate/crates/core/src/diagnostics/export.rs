use std::fmt::Write as _;
use std::io::Write;

use super::attention::CellAttentionMap;
use super::deviation::LayerDeviationProfile;
use crate::Result;

/// Columns: `descriptor,layer,delta`.
pub fn write_deviation_csv<W: Write>(profiles: &[LayerDeviationProfile], mut out: W) -> Result<()> {
    writeln!(out, "descriptor,layer,delta")?;
    for p in profiles {
        for (l, d) in p.deltas.iter().enumerate() {
            writeln!(out, "{},{l},{d}", p.descriptor)?;
        }
    }
    Ok(())
}

/// Columns: `row,col,p`.
pub fn write_attention_csv<W: Write>(map: &CellAttentionMap, mut out: W) -> Result<()> {
    writeln!(out, "row,col,p")?;
    for (c, p) in &map.cells {
        writeln!(out, "{},{},{p}", c.row, c.col)?;
    }
    Ok(())
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Standalone SVG line chart. Each series is `(label, points)`.
pub fn line_chart_svg(title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let (w, h, pad) = (560.0, 340.0, 50.0);
    let pts = series.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y1) = (0.0, 1.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| pad + (x - x0) / (x1 - x0) * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - y0) / (y1 - y0) * (h - 2.0 * pad);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{}</text>"#,
        w / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<line x1="{pad}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/><line x1="{pad}" y1="{pad}" x2="{pad}" y2="{0}" stroke="black"/>"#,
        h - pad,
        w - pad
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        w / 2.0,
        h - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        h / 2.0,
        h / 2.0,
        escape(y_label)
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{y1:.3}</text>"#, pad - 4.0, pad + 4.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{y0:.3}</text>"#, pad - 4.0, h - pad);
    let _ = writeln!(s, r#"<text x="{pad}" y="{}" text-anchor="middle">{x0}</text>"#, h - pad + 14.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{x1}</text>"#, w - pad, h - pad + 14.0);
    for (i, (label, points)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            path.join(" ")
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
            w - pad - 110.0,
            pad + 14.0 * i as f64,
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Deviation profiles as a line chart over layers.
pub fn deviation_svg(profiles: &[LayerDeviationProfile]) -> String {
    let series: Vec<(String, Vec<(f64, f64)>)> = profiles
        .iter()
        .map(|p| (p.descriptor.clone(), p.deltas.iter().enumerate().map(|(l, d)| (l as f64, *d)).collect()))
        .collect();
    line_chart_svg("activation deviation by layer", "layer", "delta", &series)
}

/// Grid heatmap of a cell attention map.
pub fn attention_svg(map: &CellAttentionMap, rows: usize, cols: usize) -> String {
    let size = 40.0;
    let max = map.cells.iter().map(|(_, p)| *p).fold(0.0f64, f64::max).max(1e-12);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="sans-serif" font-size="10">"#,
        cols as f64 * size,
        rows as f64 * size
    );
    for (c, p) in &map.cells {
        let shade = (255.0 * (1.0 - p / max)).round() as u8;
        let (x, y) = ((c.col - 1) as f64 * size, (c.row - 1) as f64 * size);
        let _ = writeln!(
            s,
            r#"<rect x="{x}" y="{y}" width="{size}" height="{size}" fill="rgb(255,{shade},{shade})" stroke="gray"/><text x="{}" y="{}" text-anchor="middle">{p:.2}</text>"#,
            x + size / 2.0,
            y + size / 2.0 + 3.0
        );
    }
    for c in &map.omitted {
        let (x, y) = ((c.col - 1) as f64 * size, (c.row - 1) as f64 * size);
        let _ = writeln!(
            s,
            r#"<rect x="{x}" y="{y}" width="{size}" height="{size}" fill="lightgray" stroke="gray"/>"#
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::Cell;

    #[test]
    fn csv_layouts() {
        let p = LayerDeviationProfile {
            intervention_layer: 1,
            deltas: vec![0.0, 0.5],
            descriptor: "query".into(),
        };
        let mut out = Vec::new();
        write_deviation_csv(std::slice::from_ref(&p), &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "descriptor,layer,delta\nquery,0,0\nquery,1,0.5\n");
        assert!(deviation_svg(&[p]).starts_with("<svg"));
    }

    #[test]
    fn heatmap_has_one_rect_per_cell() {
        let map = CellAttentionMap {
            layer: 0,
            query_position: 3,
            cells: vec![(Cell::new(1, 1), 0.75), (Cell::new(1, 2), 0.25)],
            omitted: vec![Cell::new(2, 1)],
        };
        let svg = attention_svg(&map, 2, 2);
        assert_eq!(svg.matches("<rect").count(), 3);
        let mut out = Vec::new();
        write_attention_csv(&map, &mut out).unwrap();
        assert!(String::from_utf8(out).unwrap().contains("1,2,0.25"));
    }
}
