//! Approximate scalp maps: a `channel,value` CSV and an SVG disc rendered by
//! inverse-distance weighting over projected 10/20 electrode positions.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::DspError;
use crate::eeg::Montage;

const GRID: usize = 48;
/// Projected radius of the equator ring (Fpz, T7, Oz, T8).
const EQUATOR: f64 = 0.8;

/// Projected 2-D position of a 10/20 (10/10) electrode, nose up, left
/// hemisphere at negative x. Returns `None` for unrecognised labels.
pub fn electrode_position(name: &str) -> Option<(f64, f64)> {
    let upper = name.to_ascii_uppercase();
    let split = upper.find(|c: char| c.is_ascii_digit() || c == 'Z')?;
    let (row, rest) = upper.split_at(split);

    // Midline polar angle (degrees from vertex, negative = posterior) and
    // azimuth of the row's outermost equator electrode.
    let (polar, lateral_az) = match row {
        "FP" => (90.0, 18.0),
        "AF" => (67.5, 36.0),
        "F" => (45.0, 54.0),
        "FC" => (22.5, 72.0),
        "FT" => (22.5, 72.0),
        "C" | "T" => (0.0, 90.0),
        "CP" => (-22.5, 108.0),
        "TP" => (-22.5, 108.0),
        "P" => (-45.0, 126.0),
        "PO" => (-67.5, 144.0),
        "O" => (-90.0, 162.0),
        "I" => (-112.5, 180.0),
        _ => return None,
    };
    let to_xy = |theta: f64, az: f64| {
        let r = EQUATOR * theta / 90.0;
        let a = az.to_radians();
        (r * a.sin(), r * a.cos())
    };
    let midline = if polar >= 0.0 { to_xy(polar, 0.0) } else { to_xy(-polar, 180.0) };
    if rest == "Z" {
        return Some(midline);
    }
    let num: u32 = rest.parse().ok()?;
    if num == 0 {
        return None;
    }
    let side = if num % 2 == 1 { -1.0 } else { 1.0 };
    let odd = if num % 2 == 1 { num } else { num - 1 };
    if odd >= 9 {
        // FT9/TP9 and friends sit one ring below the equator.
        let (x, y) = to_xy(112.5, lateral_az);
        return Some((side * x, y));
    }
    let (ex, ey) = to_xy(90.0, lateral_az);
    let edge = (side * ex, ey);
    let frac = match row {
        "FP" | "O" => 1.0,
        _ => (odd as f64 + 1.0) / 8.0,
    };
    Some((midline.0 + frac * (edge.0 - midline.0), midline.1 + frac * (edge.1 - midline.1)))
}

fn positions(montage: &Montage) -> Result<Vec<(f64, f64)>, DspError> {
    montage
        .channel_names()
        .iter()
        .map(|n| electrode_position(n).ok_or_else(|| DspError::UnknownElectrode(n.clone())))
        .collect()
}

fn idw(points: &[(f64, f64)], values: &[f64], x: f64, y: f64) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (&(px, py), &v) in points.iter().zip(values) {
        let d2 = (px - x).powi(2) + (py - y).powi(2);
        if d2 < 1e-18 {
            return v;
        }
        num += v / d2;
        den += 1.0 / d2;
    }
    num / den
}

/// Diverging blue-white-red colour for `t` in `[-1, 1]`.
fn colour(t: f64) -> String {
    let t = t.clamp(-1.0, 1.0);
    let (r, g, b) = if t >= 0.0 {
        (1.0, 1.0 - t, 1.0 - t)
    } else {
        (1.0 + t, 1.0 + t, 1.0)
    };
    let q = |c: f64| (c * 255.0).round() as u8;
    format!("#{:02x}{:02x}{:02x}", q(r), q(g), q(b))
}

fn check_len(values: &[f64], montage: &Montage) -> Result<(), DspError> {
    if values.len() != montage.len() {
        return Err(DspError::ChannelMismatch { expected: montage.len(), found: values.len() });
    }
    Ok(())
}

/// Renders the interpolated map as an SVG document.
pub fn render_topomap_svg(values: &[f64], montage: &Montage) -> Result<String, DspError> {
    check_len(values, montage)?;
    let pts = positions(montage)?;
    let vmax = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let norm = |v: f64| if vmax > 0.0 { v / vmax } else { 0.0 };

    let radius = 1.0;
    let cell = 2.0 * radius / GRID as f64;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="-1.2 -1.2 2.4 2.4" width="480" height="480">"#
    );
    let _ = writeln!(svg, r#"<defs><clipPath id="head"><circle cx="0" cy="0" r="{radius}"/></clipPath></defs>"#);
    let _ = writeln!(svg, r#"<g clip-path="url(#head)" shape-rendering="crispEdges">"#);
    for i in 0..GRID {
        for j in 0..GRID {
            let x = -radius + (j as f64 + 0.5) * cell;
            let y = radius - (i as f64 + 0.5) * cell;
            if x * x + y * y > (radius + cell).powi(2) {
                continue;
            }
            let v = idw(&pts, values, x, y);
            let _ = writeln!(
                svg,
                r#"<rect class="cell" x="{:.4}" y="{:.4}" width="{:.4}" height="{:.4}" fill="{}"/>"#,
                x - cell / 2.0,
                -y - cell / 2.0,
                cell,
                cell,
                colour(norm(v))
            );
        }
    }
    let _ = writeln!(svg, "</g>");
    let _ = writeln!(
        svg,
        r#"<circle cx="0" cy="0" r="{radius}" fill="none" stroke="black" stroke-width="0.01"/>"#
    );
    let _ = writeln!(svg, r#"<path d="M -0.08 -0.99 L 0 -1.1 L 0.08 -0.99" fill="none" stroke="black" stroke-width="0.01"/>"#);
    for (name, &(x, y)) in montage.channel_names().iter().zip(&pts) {
        let _ = writeln!(
            svg,
            r#"<circle class="electrode" cx="{x:.4}" cy="{:.4}" r="0.015" fill="black"><title>{name}</title></circle>"#,
            -y
        );
    }
    let _ = writeln!(svg, "</svg>");
    Ok(svg)
}

/// Writes `channel,value` rows in montage order.
pub fn write_values_csv(values: &[f64], montage: &Montage, path: impl AsRef<Path>) -> Result<(), DspError> {
    check_len(values, montage)?;
    let mut w = csv::Writer::from_path(path.as_ref()).map_err(|e| DspError::Io(e.to_string()))?;
    w.write_record(["channel", "value"]).map_err(|e| DspError::Io(e.to_string()))?;
    for (name, v) in montage.channel_names().iter().zip(values) {
        w.write_record([name.as_str(), &v.to_string()]).map_err(|e| DspError::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a `channel,value` CSV and orders the values by `montage`.
pub fn read_values_csv(path: impl AsRef<Path>, montage: &Montage) -> Result<Vec<f64>, DspError> {
    let mut r = csv::Reader::from_path(path.as_ref()).map_err(|e| DspError::Io(e.to_string()))?;
    let mut values = vec![None; montage.len()];
    let mut rows = 0;
    for record in r.records() {
        let record = record.map_err(|e| DspError::Io(e.to_string()))?;
        let name = record.get(0).unwrap_or_default();
        let value: f64 = record
            .get(1)
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| DspError::Io(format!("bad value for channel {name:?}")))?;
        let idx = montage.index_of(name).ok_or_else(|| DspError::UnknownElectrode(name.to_string()))?;
        values[idx] = Some(value);
        rows += 1;
    }
    if rows != montage.len() || values.iter().any(Option::is_none) {
        return Err(DspError::ChannelMismatch { expected: montage.len(), found: rows });
    }
    Ok(values.into_iter().map(Option::unwrap).collect())
}

/// Writes `<base>.csv` and `<base>.svg`.
pub fn export_topomap(values: &[f64], montage: &Montage, base: impl AsRef<Path>) -> Result<(), DspError> {
    check_len(values, montage)?;
    let base = base.as_ref();
    let svg = render_topomap_svg(values, montage)?;
    write_values_csv(values, montage, base.with_extension("csv"))?;
    fs::write(base.with_extension("svg"), svg)?;
    Ok(())
}
