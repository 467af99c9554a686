use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GeometryError, RobotGeometry, Vec2, CABLES, DEFAULT_WORKSPACE_MARGIN};
use crate::format::{self, FormatError};

pub const GEOMETRY_SCHEMA: &str = "muralbot.geometry/1";

/// On-disk geometry description. Units are part of every field name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryConfig {
    pub schema: String,
    pub frame_width_m: f64,
    pub frame_height_m: f64,
    #[serde(default = "default_margin")]
    pub workspace_margin_m: f64,
    /// Corner order: bottom-left, bottom-right, top-right, top-left.
    pub anchors_m: [[f64; 2]; CABLES],
    pub attachments_m: [[f64; 2]; CABLES],
    pub routing_ratio: [u8; CABLES],
    pub winch_nominal_diameter_m: [f64; CABLES],
}

fn default_margin() -> f64 {
    DEFAULT_WORKSPACE_MARGIN
}

impl From<&RobotGeometry> for GeometryConfig {
    fn from(g: &RobotGeometry) -> Self {
        Self {
            schema: GEOMETRY_SCHEMA.to_string(),
            frame_width_m: g.frame_width,
            frame_height_m: g.frame_height,
            workspace_margin_m: g.workspace_margin,
            anchors_m: g.anchors.map(|a| [a.x, a.y]),
            attachments_m: g.attachments.map(|a| [a.x, a.y]),
            routing_ratio: g.routing_ratio,
            winch_nominal_diameter_m: g.winch_nominal_diameter,
        }
    }
}

impl GeometryConfig {
    pub fn to_geometry(&self) -> Result<RobotGeometry, GeometryError> {
        if self.schema != GEOMETRY_SCHEMA {
            return Err(GeometryError::Invalid(format!("unknown geometry schema `{}`", self.schema)));
        }
        let g = RobotGeometry {
            anchors: self.anchors_m.map(|[x, y]| Vec2::new(x, y)),
            attachments: self.attachments_m.map(|[x, y]| Vec2::new(x, y)),
            routing_ratio: self.routing_ratio,
            winch_nominal_diameter: self.winch_nominal_diameter_m,
            frame_width: self.frame_width_m,
            frame_height: self.frame_height_m,
            workspace_margin: self.workspace_margin_m,
        };
        g.validate()?;
        Ok(g)
    }
}

impl RobotGeometry {
    pub fn load(path: &Path) -> Result<Self, FormatError> {
        let cfg: GeometryConfig = format::read_toml(path)?;
        format::check_schema(path, &cfg.schema, GEOMETRY_SCHEMA)?;
        cfg.to_geometry().map_err(|e| FormatError::parse(path, e))
    }

    pub fn save(&self, path: &Path) -> Result<(), FormatError> {
        format::write_toml(path, &GeometryConfig::from(self))
    }
}
