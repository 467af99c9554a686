//! Vector artwork to per-color, dynamically feasible paint programs.

mod infill;
mod program;
mod retime;
mod svg;

pub use infill::{generate_infill, point_in_polygon, polygon_area, Infill};
pub use program::{
    compile_program, parse_programs_csv, programs_to_csv, read_programs_csv, write_programs_csv, CompileOptions, PaintProgram,
    ProgramSample, Segment, PROGRAM_SCHEMA,
};
pub use retime::{polyline_length, retime, trapezoid_duration, CornerPolicy, RetimeLimits, Trajectory};
pub use svg::import_svg;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::format::{self, FormatError};
use crate::geometry::Vec2;
use crate::simulator::Rgb;

pub const ARTWORK_SCHEMA: &str = "muralbot.artwork/1";

#[derive(Debug, thiserror::Error)]
pub enum ArtworkError {
    #[error("{0}")]
    Invalid(String),
    #[error("unknown color `{color}`; palette is [{}]", palette.join(", "))]
    UnknownColor { color: String, palette: Vec<String> },
    #[error(transparent)]
    Format(#[from] FormatError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    /// Closed region, filled by hatching.
    Polygon,
    /// Open stroke painted as-is.
    Polyline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shape {
    pub kind: ShapeKind,
    pub color: String,
    pub points: Vec<[f64; 2]>,
}

impl Shape {
    pub fn vertices(&self) -> Vec<Vec2> {
        self.points.iter().map(|[x, y]| Vec2::new(*x, *y)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaletteEntry {
    pub name: String,
    pub rgb: String,
}

/// Artwork in canvas coordinates: meters, origin at the canvas lower-left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtworkDocument {
    pub schema: String,
    pub width_m: f64,
    pub height_m: f64,
    pub palette: Vec<PaletteEntry>,
    #[serde(default)]
    pub shapes: Vec<Shape>,
}

impl ArtworkDocument {
    pub fn new(width_m: f64, height_m: f64, palette: Vec<PaletteEntry>) -> Self {
        Self { schema: ARTWORK_SCHEMA.to_string(), width_m, height_m, palette, shapes: Vec::new() }
    }

    pub fn load(path: &Path) -> Result<Self, ArtworkError> {
        let doc = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("svg")) {
            import_svg(&format::read_string(path)?)?
        } else {
            let doc: ArtworkDocument = format::read_toml(path)?;
            format::check_schema(path, &doc.schema, ARTWORK_SCHEMA)?;
            doc
        };
        doc.validate()?;
        Ok(doc)
    }

    pub fn save(&self, path: &Path) -> Result<(), ArtworkError> {
        Ok(format::write_toml(path, self)?)
    }

    pub fn palette_names(&self) -> Vec<String> {
        self.palette.iter().map(|p| p.name.clone()).collect()
    }

    pub fn colors(&self) -> Result<Vec<(String, Rgb)>, ArtworkError> {
        self.palette
            .iter()
            .map(|p| {
                Rgb::parse(&p.rgb)
                    .map(|c| (p.name.clone(), c))
                    .ok_or_else(|| ArtworkError::Invalid(format!("palette entry `{}` has bad color `{}`", p.name, p.rgb)))
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), ArtworkError> {
        if !(self.width_m > 0.0 && self.height_m > 0.0) {
            return Err(ArtworkError::Invalid("canvas size must be positive".into()));
        }
        self.colors()?;
        for (i, s) in self.shapes.iter().enumerate() {
            if !self.palette.iter().any(|p| p.name == s.color) {
                return Err(ArtworkError::UnknownColor { color: s.color.clone(), palette: self.palette_names() });
            }
            let min_points = if s.kind == ShapeKind::Polygon { 3 } else { 2 };
            if s.points.len() < min_points {
                return Err(ArtworkError::Invalid(format!("shape {i} has too few points")));
            }
            for [x, y] in &s.points {
                if !(0.0..=self.width_m).contains(x) || !(0.0..=self.height_m).contains(y) {
                    return Err(ArtworkError::Invalid(format!("shape {i} point ({x}, {y}) is outside the canvas")));
                }
            }
            if s.kind == ShapeKind::Polygon && self_intersects(&s.vertices()) {
                return Err(ArtworkError::Invalid(format!("polygon {i} is self-intersecting")));
            }
        }
        Ok(())
    }
}

fn self_intersects(poly: &[Vec2]) -> bool {
    let n = poly.len();
    let cross = |a: Vec2, b: Vec2, c: Vec2, d: Vec2| {
        let o = |p: Vec2, q: Vec2, r: Vec2| (q - p).perp(&(r - p));
        let (d1, d2, d3, d4) = (o(c, d, a), o(c, d, b), o(a, b, c), o(a, b, d));
        d1 * d2 < 0.0 && d3 * d4 < 0.0
    };
    for i in 0..n {
        for j in i + 2..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            if cross(poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n]) {
                return true;
            }
        }
    }
    false
}
