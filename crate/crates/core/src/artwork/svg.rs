//! Importer for a flattened SVG subset: `path` (M/L/H/V/Z, absolute and
//! relative), `polygon`, `polyline`, `line` and `rect`. Curves must be
//! flattened beforehand.

use super::{ArtworkDocument, ArtworkError, PaletteEntry, Shape, ShapeKind};
use crate::simulator::Rgb;

fn length_in_meters(s: &str) -> Option<(f64, bool)> {
    let s = s.trim();
    for (suffix, scale) in [("mm", 1e-3), ("cm", 1e-2), ("m", 1.0)] {
        if let Some(v) = s.strip_suffix(suffix) {
            return v.trim().parse::<f64>().ok().map(|v| (v * scale, true));
        }
    }
    s.parse::<f64>().ok().map(|v| (v, false))
}

fn numbers(s: &str) -> Vec<f64> {
    s.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()).filter_map(|t| t.parse().ok()).collect()
}

fn parse_path(d: &str) -> Result<Vec<(Vec<[f64; 2]>, bool)>, ArtworkError> {
    let mut tokens: Vec<String> = Vec::new();
    let mut cur = String::new();
    for c in d.chars() {
        if c.is_ascii_alphabetic() && c != 'e' && c != 'E' {
            if !cur.trim().is_empty() {
                tokens.push(cur.clone());
            }
            cur.clear();
            tokens.push(c.to_string());
        } else {
            cur.push(c);
        }
    }
    if !cur.trim().is_empty() {
        tokens.push(cur);
    }
    let mut subpaths = Vec::new();
    let mut pts: Vec<[f64; 2]> = Vec::new();
    let mut pos = [0.0, 0.0];
    let mut i = 0;
    while i < tokens.len() {
        let cmd = tokens[i].chars().next().unwrap_or(' ');
        let args = tokens.get(i + 1).filter(|t| !t.chars().next().is_some_and(|c| c.is_ascii_alphabetic()));
        let nums = args.map(|a| numbers(a)).unwrap_or_default();
        i += if args.is_some() { 2 } else { 1 };
        let rel = cmd.is_ascii_lowercase();
        match cmd.to_ascii_uppercase() {
            'M' | 'L' => {
                if cmd.to_ascii_uppercase() == 'M' && !pts.is_empty() {
                    subpaths.push((std::mem::take(&mut pts), false));
                }
                for pair in nums.chunks_exact(2) {
                    pos = if rel { [pos[0] + pair[0], pos[1] + pair[1]] } else { [pair[0], pair[1]] };
                    pts.push(pos);
                }
            }
            'H' => {
                for x in nums {
                    pos[0] = if rel { pos[0] + x } else { x };
                    pts.push(pos);
                }
            }
            'V' => {
                for y in nums {
                    pos[1] = if rel { pos[1] + y } else { y };
                    pts.push(pos);
                }
            }
            'Z' => {
                if let Some(first) = pts.first().copied() {
                    subpaths.push((std::mem::take(&mut pts), true));
                    pos = first;
                }
            }
            other => return Err(ArtworkError::Invalid(format!("unsupported SVG path command `{other}`; flatten curves first"))),
        }
    }
    if !pts.is_empty() {
        subpaths.push((pts, false));
    }
    Ok(subpaths)
}

pub fn import_svg(text: &str) -> Result<ArtworkDocument, ArtworkError> {
    let xml = roxmltree::Document::parse(text).map_err(|e| ArtworkError::Invalid(format!("SVG parse error: {e}")))?;
    let root = xml.root_element();
    let view: Vec<f64> = root.attribute("viewBox").map(numbers).unwrap_or_default();
    let (width, w_units) = root
        .attribute("width")
        .and_then(length_in_meters)
        .or_else(|| view.get(2).map(|v| (*v, false)))
        .ok_or_else(|| ArtworkError::Invalid("SVG needs a width or viewBox".into()))?;
    let (height, _) = root
        .attribute("height")
        .and_then(length_in_meters)
        .or_else(|| view.get(3).map(|v| (*v, false)))
        .ok_or_else(|| ArtworkError::Invalid("SVG needs a height or viewBox".into()))?;
    let (vx, vy, vw) = if view.len() == 4 { (view[0], view[1], view[2]) } else { (0.0, 0.0, width) };
    let scale = if w_units || view.len() == 4 { width / vw } else { 1.0 };
    let to_canvas = |p: [f64; 2]| [(p[0] - vx) * scale, height - (p[1] - vy) * scale];

    let mut doc = ArtworkDocument::new(width, height, Vec::new());
    for node in root.descendants().filter(|n| n.is_element()) {
        let fill = node.attribute("fill").filter(|f| *f != "none");
        let stroke = node.attribute("stroke").filter(|f| *f != "none");
        let (color, filled) = match (fill, stroke) {
            (Some(f), _) => (f, true),
            (None, Some(s)) => (s, false),
            _ => continue,
        };
        let raw: Vec<(Vec<[f64; 2]>, bool)> = match node.tag_name().name() {
            "path" => parse_path(node.attribute("d").unwrap_or(""))?,
            "polygon" | "polyline" => {
                let n = numbers(node.attribute("points").unwrap_or(""));
                vec![(n.chunks_exact(2).map(|c| [c[0], c[1]]).collect(), node.tag_name().name() == "polygon")]
            }
            "line" => {
                let a = |k: &str| node.attribute(k).and_then(|v| v.parse::<f64>().ok()).unwrap_or(0.0);
                vec![(vec![[a("x1"), a("y1")], [a("x2"), a("y2")]], false)]
            }
            "rect" => {
                let a = |k: &str| node.attribute(k).and_then(|v| v.parse::<f64>().ok()).unwrap_or(0.0);
                let (x, y, w, h) = (a("x"), a("y"), a("width"), a("height"));
                vec![(vec![[x, y], [x + w, y], [x + w, y + h], [x, y + h]], true)]
            }
            _ => continue,
        };
        let name = color.to_string();
        if Rgb::parse(&name).is_none() {
            return Err(ArtworkError::Invalid(format!("unsupported SVG color `{name}`")));
        }
        if !doc.palette.iter().any(|p| p.name == name) {
            doc.palette.push(PaletteEntry { name: name.clone(), rgb: name.clone() });
        }
        for (pts, closed) in raw {
            let mut pts: Vec<[f64; 2]> = pts.into_iter().map(to_canvas).collect();
            if closed && pts.len() > 1 && pts.first() == pts.last() {
                pts.pop();
            }
            let kind = if filled && (closed || pts.len() >= 3) { ShapeKind::Polygon } else { ShapeKind::Polyline };
            doc.shapes.push(Shape { kind, color: name.clone(), points: pts });
        }
    }
    Ok(doc)
}
