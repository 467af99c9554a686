//! Tracking and painting metrics.

use serde::{Deserialize, Serialize};

use crate::artwork::{point_in_polygon, ArtworkDocument, ShapeKind};
use crate::geometry::Vec2;
use crate::simulator::CanvasRaster;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("traces are not aligned: {measured} measured vs {reference} reference samples")]
    Alignment { measured: usize, reference: usize },
    #[error("painted raster has no layer for color `{0}`")]
    MissingColor(String),
    #[error("raster size {found:?} does not match the design {expected:?}")]
    RasterSize { found: (usize, usize), expected: (usize, usize) },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackingMetrics {
    /// Mean Euclidean error, meters.
    pub ate: f64,
    pub max: f64,
    pub rms: f64,
    pub samples: usize,
}

pub fn tracking_error(measured: &[Vec2], reference: &[Vec2]) -> Result<TrackingMetrics, EvalError> {
    if measured.len() != reference.len() || measured.is_empty() {
        return Err(EvalError::Alignment { measured: measured.len(), reference: reference.len() });
    }
    let errs: Vec<f64> = measured.iter().zip(reference).map(|(a, b)| (a - b).norm()).collect();
    let n = errs.len() as f64;
    Ok(TrackingMetrics {
        ate: errs.iter().sum::<f64>() / n,
        max: errs.iter().copied().fold(0.0, f64::max),
        rms: (errs.iter().map(|e| e * e).sum::<f64>() / n).sqrt(),
        samples: errs.len(),
    })
}

/// Per-color design mask on the same pixel grid as [`CanvasRaster`].
/// Polygons cover pixels whose centres are inside; polylines cover pixels
/// within half a brush width.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMask {
    pub cols: usize,
    pub rows: usize,
    pub layers: Vec<(String, Vec<bool>)>,
}

pub fn rasterize_design(doc: &ArtworkDocument, resolution: f64, brush_width: f64) -> DesignMask {
    let probe = CanvasRaster::new(doc.width_m, doc.height_m, resolution, brush_width, &[]);
    let (cols, rows) = (probe.cols, probe.rows);
    let mut layers: Vec<(String, Vec<bool>)> = Vec::new();
    for shape in &doc.shapes {
        let idx = match layers.iter().position(|(c, _)| *c == shape.color) {
            Some(i) => i,
            None => {
                layers.push((shape.color.clone(), vec![false; cols * rows]));
                layers.len() - 1
            }
        };
        let verts = shape.vertices();
        let lo = verts.iter().fold(Vec2::repeat(f64::INFINITY), |a, p| a.inf(p));
        let hi = verts.iter().fold(Vec2::repeat(f64::NEG_INFINITY), |a, p| a.sup(p));
        let pad = if shape.kind == ShapeKind::Polyline { brush_width / 2.0 } else { 0.0 };
        let c0 = ((lo.x - pad) * resolution).floor().max(0.0) as usize;
        let c1 = (((hi.x + pad) * resolution).ceil() as usize).min(cols);
        let r0 = ((lo.y - pad) * resolution).floor().max(0.0) as usize;
        let r1 = (((hi.y + pad) * resolution).ceil() as usize).min(rows);
        for row in r0..r1 {
            for col in c0..c1 {
                let p = probe.pixel_center(col, row);
                let inside = match shape.kind {
                    ShapeKind::Polygon => point_in_polygon(&p, &verts),
                    ShapeKind::Polyline => verts.windows(2).any(|w| segment_distance(&p, &w[0], &w[1]) <= pad),
                };
                if inside {
                    layers[idx].1[row * cols + col] = true;
                }
            }
        }
    }
    DesignMask { cols, rows, layers }
}

fn segment_distance(p: &Vec2, a: &Vec2, b: &Vec2) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 == 0.0 { 0.0 } else { ((p - a).dot(&ab) / len2).clamp(0.0, 1.0) };
    (p - (a + ab * t)).norm()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColorAgreement {
    pub color: String,
    /// Fraction of design pixels painted in this color.
    pub agreement: f64,
    /// Fraction of painted pixels of this color outside the design.
    pub spill: f64,
}

/// A pixel counts as painted when its coverage reaches `threshold`.
pub fn coverage_agreement(design: &DesignMask, painted: &CanvasRaster, threshold: f32) -> Result<Vec<ColorAgreement>, EvalError> {
    if (painted.cols, painted.rows) != (design.cols, design.rows) {
        return Err(EvalError::RasterSize { found: (painted.cols, painted.rows), expected: (design.cols, design.rows) });
    }
    design
        .layers
        .iter()
        .map(|(color, mask)| {
            let ci = painted.color_index(color).ok_or_else(|| EvalError::MissingColor(color.clone()))?;
            let layer = painted.coverage_layer(ci);
            let (mut want, mut hit, mut paint, mut outside) = (0usize, 0usize, 0usize, 0usize);
            for (m, c) in mask.iter().zip(layer) {
                let p = *c >= threshold;
                want += usize::from(*m);
                hit += usize::from(*m && p);
                paint += usize::from(p);
                outside += usize::from(p && !*m);
            }
            Ok(ColorAgreement {
                color: color.clone(),
                agreement: if want == 0 { 1.0 } else { hit as f64 / want as f64 },
                spill: if paint == 0 { 0.0 } else { outside as f64 / paint as f64 },
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::artwork::{PaletteEntry, Shape};
    use crate::simulator::Rgb;

    #[test]
    fn identical_traces_and_constant_offset() {
        let r: Vec<Vec2> = (0..50).map(|k| Vec2::new(k as f64 * 0.01, 1.0)).collect();
        assert_eq!(tracking_error(&r, &r).unwrap().ate, 0.0);
        let m: Vec<Vec2> = r.iter().map(|p| p + Vec2::new(0.006, 0.008)).collect();
        let t = tracking_error(&m, &r).unwrap();
        assert!((t.ate - 0.010).abs() < 1e-12 && (t.max - 0.010).abs() < 1e-12);
        assert!(matches!(tracking_error(&m[1..], &r), Err(EvalError::Alignment { .. })));
    }

    #[test]
    fn painted_rectangle_agrees_with_design() {
        let mut doc = ArtworkDocument::new(1.0, 1.0, vec![PaletteEntry { name: "black".into(), rgb: "#000000".into() }]);
        doc.shapes.push(Shape { kind: ShapeKind::Polygon, color: "black".into(), points: vec![[0.2, 0.2], [0.8, 0.2], [0.8, 0.6], [0.2, 0.6]] });
        let design = rasterize_design(&doc, 100.0, 0.1);
        let mut canvas = CanvasRaster::new(1.0, 1.0, 100.0, 0.1, &[("black".into(), Rgb(0, 0, 0))]);
        assert_eq!(coverage_agreement(&design, &canvas, 0.5).unwrap()[0].agreement, 0.0);
        for k in 0..5 {
            let y = 0.25 + 0.075 * k as f64;
            canvas.deposit_paint(Vec2::new(0.25, y), Vec2::new(0.75, y), "black", 1.0);
        }
        let a = &coverage_agreement(&design, &canvas, 0.5).unwrap()[0];
        assert!(a.agreement > 0.98, "{a:?}");
        assert!(a.spill < 0.01);
    }
}
