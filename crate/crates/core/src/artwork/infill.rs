//! Scanline hatching of polygons.

use nalgebra::Rotation2;

use crate::geometry::Vec2;

#[derive(Debug, Clone, PartialEq)]
pub struct Infill {
    pub polylines: Vec<Vec<Vec2>>,
    /// Stepover exceeded the polygon extent; a single centerline was used.
    pub centerline_fallback: bool,
}

/// Even-odd point-in-polygon test; points on the boundary count as inside.
pub fn point_in_polygon(p: &Vec2, poly: &[Vec2]) -> bool {
    let n = poly.len();
    let mut inside = false;
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        if segment_distance(p, &a, &b) <= 1e-12 {
            return true;
        }
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if p.x < x {
                inside = !inside;
            }
        }
    }
    inside
}

fn segment_distance(p: &Vec2, a: &Vec2, b: &Vec2) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 == 0.0 { 0.0 } else { ((p - a).dot(&ab) / len2).clamp(0.0, 1.0) };
    (p - (a + ab * t)).norm()
}

pub fn polygon_area(poly: &[Vec2]) -> f64 {
    let n = poly.len();
    (0..n).map(|i| poly[i].x * poly[(i + 1) % n].y - poly[(i + 1) % n].x * poly[i].y).sum::<f64>() / 2.0
}

/// x-intervals where the horizontal line at `y` is inside `poly`.
fn scanline_intervals(poly: &[Vec2], y: f64) -> Vec<(f64, f64)> {
    let n = poly.len();
    let mut xs = Vec::new();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        // Half-open rule so vertices on the line are counted once.
        if (a.y <= y && b.y > y) || (b.y <= y && a.y > y) {
            xs.push(a.x + (y - a.y) / (b.y - a.y) * (b.x - a.x));
        }
    }
    xs.sort_by(f64::total_cmp);
    xs.chunks_exact(2).filter(|c| c[1] - c[0] > 1e-12).map(|c| (c[0], c[1])).collect()
}

fn segments_cross(p1: &Vec2, p2: &Vec2, q1: &Vec2, q2: &Vec2) -> bool {
    let orient = |a: &Vec2, b: &Vec2, c: &Vec2| (b - a).perp(&(c - a));
    let (d1, d2) = (orient(q1, q2, p1), orient(q1, q2, p2));
    let (d3, d4) = (orient(p1, p2, q1), orient(p1, p2, q2));
    let eps = 1e-12;
    ((d1 > eps && d2 < -eps) || (d1 < -eps && d2 > eps)) && ((d3 > eps && d4 < -eps) || (d3 < -eps && d4 > eps))
}

fn connector_inside(a: &Vec2, b: &Vec2, poly: &[Vec2]) -> bool {
    if !point_in_polygon(&((a + b) / 2.0), poly) {
        return false;
    }
    let n = poly.len();
    !(0..n).any(|i| segments_cross(a, b, &poly[i], &poly[(i + 1) % n]))
}

/// Parallel hatch lines at `angle` spaced by `stepover`, first and last
/// inset by half a stepover, joined serpentine-fashion where the connector
/// stays inside the polygon.
pub fn generate_infill(polygon: &[Vec2], stepover: f64, angle: f64) -> Infill {
    let empty = Infill { polylines: Vec::new(), centerline_fallback: false };
    if polygon.len() < 3 || !(stepover > 0.0) || polygon_area(polygon).abs() < 1e-12 {
        return empty;
    }
    let rot = Rotation2::new(-angle);
    let back = rot.inverse();
    let local: Vec<Vec2> = polygon.iter().map(|p| rot * p).collect();
    let ymin = local.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
    let ymax = local.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
    let extent = ymax - ymin;
    let (ys, fallback) = if stepover >= extent {
        (vec![(ymin + ymax) / 2.0], true)
    } else {
        let (lo, hi) = (ymin + stepover / 2.0, ymax - stepover / 2.0);
        let n = ((hi - lo) / stepover - 1e-9).ceil().max(0.0) as usize + 1;
        ((0..n).map(|j| (lo + j as f64 * stepover).min(hi)).collect(), false)
    };

    let mut lines: Vec<Vec<Vec2>> = Vec::new();
    let mut open: Option<Vec<Vec2>> = None;
    let mut forward = true;
    for y in ys {
        let intervals = scanline_intervals(&local, y);
        if intervals.len() != 1 {
            lines.extend(open.take());
            for (x0, x1) in intervals {
                lines.push(vec![Vec2::new(x0, y), Vec2::new(x1, y)]);
            }
            forward = true;
            continue;
        }
        let (x0, x1) = intervals[0];
        let (start, end) = if forward { (Vec2::new(x0, y), Vec2::new(x1, y)) } else { (Vec2::new(x1, y), Vec2::new(x0, y)) };
        match open.as_mut() {
            Some(chain) if connector_inside(chain.last().expect("non-empty"), &start, &local) => {
                chain.push(start);
                chain.push(end);
            }
            _ => {
                lines.extend(open.take());
                open = Some(vec![start, end]);
            }
        }
        forward = !forward;
    }
    lines.extend(open.take());
    let polylines = lines.into_iter().map(|l| l.into_iter().map(|p| back * p).collect()).collect();
    Infill { polylines, centerline_fallback: fallback }
}
