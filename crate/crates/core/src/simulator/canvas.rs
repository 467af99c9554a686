use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::format::FormatError;
use crate::geometry::Vec2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rgb(pub u8, pub u8, pub u8);

impl Rgb {
    /// Parses `#rrggbb` or a handful of common color names.
    pub fn parse(s: &str) -> Option<Rgb> {
        if let Some(hex) = s.strip_prefix('#') {
            if hex.len() != 6 {
                return None;
            }
            let c = |i: usize| u8::from_str_radix(&hex[i..i + 2], 16).ok();
            return Some(Rgb(c(0)?, c(2)?, c(4)?));
        }
        Some(match s.to_ascii_lowercase().as_str() {
            "black" => Rgb(0, 0, 0),
            "white" => Rgb(255, 255, 255),
            "red" => Rgb(200, 30, 30),
            "green" => Rgb(30, 150, 60),
            "blue" => Rgb(30, 60, 200),
            "yellow" => Rgb(240, 200, 20),
            "orange" => Rgb(240, 130, 20),
            "purple" => Rgb(120, 40, 160),
            "gray" | "grey" => Rgb(128, 128, 128),
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepositResult {
    /// Length of the segment actually painted (after clipping), meters.
    pub distance: f64,
    /// The segment extended outside the canvas and was clipped.
    pub clipped: bool,
    pub pixels_touched: usize,
}

/// Per-color paint coverage over the canvas. Pixel `(col, row)` covers
/// `[col, col+1) x [row, row+1)` divided by the resolution, with row 0 at the
/// bottom edge (y up).
#[derive(Debug, Clone, PartialEq)]
pub struct CanvasRaster {
    pub width: f64,
    pub height: f64,
    pub resolution: f64,
    pub brush_width: f64,
    pub cols: usize,
    pub rows: usize,
    colors: Vec<(String, Rgb)>,
    coverage: Vec<Vec<f32>>,
}

impl CanvasRaster {
    pub fn new(width: f64, height: f64, resolution: f64, brush_width: f64, colors: &[(String, Rgb)]) -> Self {
        let cols = (width * resolution).round().max(1.0) as usize;
        let rows = (height * resolution).round().max(1.0) as usize;
        Self {
            width,
            height,
            resolution,
            brush_width,
            cols,
            rows,
            colors: colors.to_vec(),
            coverage: vec![vec![0.0; cols * rows]; colors.len()],
        }
    }

    pub fn colors(&self) -> impl Iterator<Item = &str> {
        self.colors.iter().map(|(n, _)| n.as_str())
    }

    pub fn color_index(&self, name: &str) -> Option<usize> {
        self.colors.iter().position(|(n, _)| n == name)
    }

    pub fn pixel_center(&self, col: usize, row: usize) -> Vec2 {
        Vec2::new((col as f64 + 0.5) / self.resolution, (row as f64 + 0.5) / self.resolution)
    }

    pub fn coverage(&self, color: usize, col: usize, row: usize) -> f32 {
        self.coverage[color][row * self.cols + col]
    }

    pub fn coverage_layer(&self, color: usize) -> &[f32] {
        &self.coverage[color]
    }

    /// Paints a round-ended stroke of `brush_width` from `from` to `to`.
    /// Returns `None` for an unknown color.
    pub fn deposit_paint(&mut self, from: Vec2, to: Vec2, color: &str, brush_load: f64) -> Option<DepositResult> {
        let ci = self.color_index(color)?;
        let full = (to - from).norm();
        if full == 0.0 {
            return Some(DepositResult { distance: 0.0, clipped: false, pixels_touched: 0 });
        }
        let Some((a, b)) = clip_segment(from, to, self.width, self.height) else {
            return Some(DepositResult { distance: 0.0, clipped: true, pixels_touched: 0 });
        };
        let clipped = (a - from).norm() > 1e-12 || (b - to).norm() > 1e-12;
        let r = self.brush_width / 2.0;
        let load = brush_load.clamp(0.0, 1.0) as f32;
        let to_px = |v: f64| (v * self.resolution).floor();
        let c0 = to_px(a.x.min(b.x) - r).max(0.0) as usize;
        let c1 = (to_px(a.x.max(b.x) + r) as usize).min(self.cols - 1);
        let r0 = to_px(a.y.min(b.y) - r).max(0.0) as usize;
        let r1 = (to_px(a.y.max(b.y) + r) as usize).min(self.rows - 1);
        let mut touched = 0;
        for row in r0..=r1 {
            for col in c0..=c1 {
                if point_segment_distance(self.pixel_center(col, row), a, b) <= r {
                    let cell = &mut self.coverage[ci][row * self.cols + col];
                    *cell = (*cell + load).min(1.0);
                    touched += 1;
                }
            }
        }
        Some(DepositResult { distance: (b - a).norm(), clipped, pixels_touched: touched })
    }

    /// Composites all layers over white in color order and writes a PNG.
    pub fn save_png(&self, path: &Path) -> Result<(), FormatError> {
        let mut img = image::RgbImage::from_pixel(self.cols as u32, self.rows as u32, image::Rgb([255, 255, 255]));
        for (ci, (_, rgb)) in self.colors.iter().enumerate() {
            for row in 0..self.rows {
                for col in 0..self.cols {
                    let c = f64::from(self.coverage(ci, col, row));
                    if c <= 0.0 {
                        continue;
                    }
                    let px = img.get_pixel_mut(col as u32, (self.rows - 1 - row) as u32);
                    let blend = |base: u8, paint: u8| (f64::from(base) * (1.0 - c) + f64::from(paint) * c).round() as u8;
                    *px = image::Rgb([blend(px[0], rgb.0), blend(px[1], rgb.1), blend(px[2], rgb.2)]);
                }
            }
        }
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)
                .map_err(|source| FormatError::Io { path: dir.display().to_string(), source })?;
        }
        img.save(path).map_err(|e| FormatError::parse(path, e))
    }
    /// Reads a PNG written by [`CanvasRaster::save_png`] back into layers.
    /// Each pixel is assigned wholly to the nearest color among white and
    /// the palette, so blended overlaps come back as a single color.
    pub fn load_png(path: &Path, resolution: f64, brush_width: f64, colors: &[(String, Rgb)]) -> Result<Self, FormatError> {
        let img = image::open(path).map_err(|e| FormatError::parse(path, e))?.to_rgb8();
        let (cols, rows) = (img.width() as usize, img.height() as usize);
        let mut c = CanvasRaster::new(cols as f64 / resolution, rows as f64 / resolution, resolution, brush_width, colors);
        if (c.cols, c.rows) != (cols, rows) {
            return Err(FormatError::parse(path, format!("{cols}x{rows} px does not divide evenly at {resolution} px/m")));
        }
        let dist = |p: &image::Rgb<u8>, q: Rgb| {
            (0..3).map(|k| (f64::from(p[k]) - f64::from([q.0, q.1, q.2][k])).powi(2)).sum::<f64>()
        };
        for (x, y, px) in img.enumerate_pixels() {
            let mut best = (dist(px, Rgb(255, 255, 255)), None);
            for (ci, (_, rgb)) in colors.iter().enumerate() {
                let d = dist(px, *rgb);
                if d < best.0 {
                    best = (d, Some(ci));
                }
            }
            if let Some(ci) = best.1 {
                let row = rows - 1 - y as usize;
                c.coverage[ci][row * cols + x as usize] = 1.0;
            }
        }
        Ok(c)
    }
}


pub fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 == 0.0 { 0.0 } else { ((p - a).dot(&ab) / len2).clamp(0.0, 1.0) };
    (p - (a + ab * t)).norm()
}

/// Liang-Barsky clip of a segment against `[0, w] x [0, h]`.
fn clip_segment(a: Vec2, b: Vec2, w: f64, h: f64) -> Option<(Vec2, Vec2)> {
    let d = b - a;
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for (p, q) in [(-d.x, a.x), (d.x, w - a.x), (-d.y, a.y), (d.y, h - a.y)] {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let t = q / p;
            if p < 0.0 {
                t0 = t0.max(t);
            } else {
                t1 = t1.min(t);
            }
        }
    }
    (t0 <= t1).then(|| (a + d * t0, a + d * t1))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn canvas() -> CanvasRaster {
        CanvasRaster::new(1.0, 0.5, 100.0, 0.05, &[("black".into(), Rgb(0, 0, 0)), ("red".into(), Rgb(200, 30, 30))])
    }

    fn painted(c: &CanvasRaster, ci: usize) -> Vec<(usize, usize)> {
        let mut v = Vec::new();
        for row in 0..c.rows {
            for col in 0..c.cols {
                if c.coverage(ci, col, row) > 0.0 {
                    v.push((col, row));
                }
            }
        }
        v
    }

    #[test]
    fn zero_length_paints_nothing() {
        let mut c = canvas();
        let r = c.deposit_paint(Vec2::new(0.3, 0.2), Vec2::new(0.3, 0.2), "black", 1.0).unwrap();
        assert_eq!(r.distance, 0.0);
        assert!(painted(&c, 0).is_empty());
    }

    #[test]
    fn horizontal_stroke_matches_direct_count() {
        let mut c = canvas();
        let (a, b) = (Vec2::new(0.25, 0.25), Vec2::new(0.75, 0.25));
        let r = c.deposit_paint(a, b, "black", 1.0).unwrap();
        assert!((r.distance - 0.5).abs() < 1e-12);
        // Brute force over every pixel of the canvas.
        let mut expected = 0;
        for row in 0..c.rows {
            for col in 0..c.cols {
                let p = c.pixel_center(col, row);
                let t = ((p.x - a.x) / (b.x - a.x)).clamp(0.0, 1.0);
                let q = Vec2::new(a.x + t * (b.x - a.x), a.y);
                if (p - q).norm() <= 0.025 {
                    expected += 1;
                }
            }
        }
        let px = painted(&c, 0);
        assert_eq!(px.len(), expected);
        let core = px.iter().filter(|(col, _)| (25..75).contains(col)).count();
        assert_eq!(core, 50 * 5);
        let rows: std::collections::BTreeSet<_> = px.iter().map(|p| p.1).collect();
        assert_eq!(rows.len(), 5);
    }

    #[test]
    fn overlapping_strokes_saturate() {
        let mut c = canvas();
        for _ in 0..3 {
            c.deposit_paint(Vec2::new(0.1, 0.1), Vec2::new(0.9, 0.4), "red", 0.7).unwrap();
        }
        assert!(c.coverage_layer(1).iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(c.coverage_layer(1).iter().any(|v| *v == 1.0));
    }

    #[test]
    fn outside_segment_is_clipped() {
        let mut c = canvas();
        let r = c.deposit_paint(Vec2::new(0.5, 0.25), Vec2::new(1.5, 0.25), "black", 1.0).unwrap();
        assert!(r.clipped);
        assert!((r.distance - 0.5).abs() < 1e-12);
        assert!(c.deposit_paint(Vec2::new(0.5, 0.2), Vec2::new(0.6, 0.2), "teal", 1.0).is_none());
    }

    #[test]
    fn png_export() {
        let mut c = canvas();
        c.deposit_paint(Vec2::new(0.1, 0.1), Vec2::new(0.9, 0.1), "red", 1.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("canvas.png");
        c.save_png(&path).unwrap();
        let img = image::open(&path).unwrap().to_rgb8();
        assert_eq!(img.dimensions(), (100, 50));
        assert_eq!(img.get_pixel(50, 49 - 10).0, [200, 30, 30]);
    }

    #[test]
    fn parses_colors() {
        assert_eq!(Rgb::parse("#10ff00"), Some(Rgb(16, 255, 0)));
        assert_eq!(Rgb::parse("Blue"), Some(Rgb(30, 60, 200)));
        assert_eq!(Rgb::parse("#123"), None);
    }

    #[test]
    fn png_round_trip_recovers_layers() {
        let mut c = canvas();
        c.deposit_paint(Vec2::new(0.1, 0.1), Vec2::new(0.8, 0.1), "black", 1.0).unwrap();
        c.deposit_paint(Vec2::new(0.2, 0.35), Vec2::new(0.6, 0.4), "red", 1.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.png");
        c.save_png(&path).unwrap();
        let colors = [("black".into(), Rgb(0, 0, 0)), ("red".into(), Rgb(200, 30, 30))];
        let back = CanvasRaster::load_png(&path, 100.0, 0.05, &colors).unwrap();
        assert_eq!((back.cols, back.rows), (c.cols, c.rows));
        assert_eq!(painted(&back, 0), painted(&c, 0));
        assert_eq!(painted(&back, 1), painted(&c, 1));
    }
}
