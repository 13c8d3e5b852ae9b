//! The invisible collider corridor instantiated along the road spline.
//!
//! Each [`RoadBlock`] is a road floor plus two walls in a shared frame
//! (x forward, y left, z up). Block `r` sits at arc position `r * spacing`,
//! points at block `r + 1`, and is lowered by a fraction of the vehicle height
//! so that a vehicle driving on the floor carries its front camera at spline
//! height.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{frame_rotation, orthonormalize_against, Obb, Vec3};
use crate::spline::{RoadSpline, UpMode};

/// Half thickness of each road floor slab.
pub const FLOOR_HALF_THICKNESS: f64 = 0.25;

#[derive(Debug, Error)]
pub enum TrackError {
    #[error("invalid track config: {0}")]
    InvalidConfig(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("track serialization: {0}")]
    Serialize(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackConfig {
    /// Distance between consecutive blocks along the spline, meters.
    #[serde(alias = "f")]
    pub spacing: f64,
    /// Road width as a multiple of the vehicle width.
    pub road_width_factor: f64,
    /// Wall height as a multiple of the vehicle height.
    pub wall_height_factor: f64,
    pub wall_thickness: f64,
    /// Downward block offset as a multiple of the vehicle height.
    pub drop_offset_factor: f64,
    pub up_mode: UpMode,
}

impl Default for TrackConfig {
    fn default() -> Self {
        Self {
            spacing: 1.0,
            road_width_factor: 2.0,
            wall_height_factor: 2.0,
            wall_thickness: 0.2,
            drop_offset_factor: 0.5,
            up_mode: UpMode::Slerp,
        }
    }
}

impl TrackConfig {
    pub fn validate(&self) -> Result<(), TrackError> {
        let checks = [
            ("spacing", self.spacing),
            ("road_width_factor", self.road_width_factor),
            ("wall_height_factor", self.wall_height_factor),
            ("wall_thickness", self.wall_thickness),
            ("drop_offset_factor", self.drop_offset_factor),
        ];
        for (name, v) in checks {
            if !(v.is_finite() && v > 0.0) {
                return Err(TrackError::InvalidConfig(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadBlock {
    pub index: usize,
    /// Arc position of the block on the spline.
    pub s: f64,
    /// Block origin after the downward offset; the road surface passes through it.
    pub center: Vec3,
    pub up: Vec3,
    pub forward: Vec3,
    pub floor_box: Obb,
    pub left_wall_box: Obb,
    pub right_wall_box: Obb,
}

impl RoadBlock {
    pub fn left(&self) -> Vec3 {
        self.up.cross(&self.forward)
    }

    pub fn boxes(&self) -> [&Obb; 3] {
        [&self.floor_box, &self.left_wall_box, &self.right_wall_box]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub blocks: Vec<RoadBlock>,
    pub spline: RoadSpline,
    pub config: TrackConfig,
    pub vehicle_width: f64,
    pub vehicle_height: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportFormat {
    Json,
    Obj,
}

impl Track {
    pub fn road_half_width(&self) -> f64 {
        self.config.road_width_factor * self.vehicle_width / 2.0
    }

    pub fn drop_offset(&self) -> f64 {
        self.config.drop_offset_factor * self.vehicle_height
    }

    pub fn floor_boxes(&self) -> impl Iterator<Item = &Obb> {
        self.blocks.iter().map(|b| &b.floor_box)
    }

    pub fn wall_boxes(&self) -> impl Iterator<Item = &Obb> {
        self.blocks
            .iter()
            .flat_map(|b| [&b.left_wall_box, &b.right_wall_box])
    }

    pub fn export(&self, path: impl AsRef<Path>, format: ExportFormat) -> Result<(), TrackError> {
        let path = path.as_ref();
        let io = |source| TrackError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        match format {
            ExportFormat::Json => serde_json::to_writer_pretty(&mut f, self)?,
            ExportFormat::Obj => f.write_all(self.to_obj().as_bytes()).map_err(io)?,
        }
        f.flush().map_err(io)
    }

    pub fn from_json(text: &str) -> Result<Track, TrackError> {
        Ok(serde_json::from_str(text)?)
    }

    /// Triangle mesh of every box, 12 triangles per box.
    pub fn to_obj(&self) -> String {
        // corner index bits: 1 = +x, 2 = +y, 4 = +z
        const FACES: [[usize; 3]; 12] = [
            [0, 2, 3], [0, 3, 1], // -z
            [4, 5, 7], [4, 7, 6], // +z
            [0, 1, 5], [0, 5, 4], // -y
            [2, 6, 7], [2, 7, 3], // +y
            [0, 4, 6], [0, 6, 2], // -x
            [1, 3, 7], [1, 7, 5], // +x
        ];
        let mut out = String::from("# road track collider mesh\n");
        let mut base = 1;
        for b in &self.blocks {
            for (name, bx) in ["floor", "left_wall", "right_wall"].iter().zip(b.boxes()) {
                out.push_str(&format!("o block{}_{}\n", b.index, name));
                for c in bx.corners() {
                    out.push_str(&format!("v {} {} {}\n", c.x, c.y, c.z));
                }
                for f in FACES {
                    out.push_str(&format!("f {} {} {}\n", base + f[0], base + f[1], base + f[2]));
                }
                base += 8;
            }
        }
        out
    }
}

/// Instantiates road blocks along `spline`.
///
/// Block `r` is placed at arc length `r * spacing` for
/// `r = 0..=floor(L / spacing)`. When the spacing reaches the spline length a
/// warning is recorded and the two end blocks are emitted.
pub fn place_blocks(
    spline: &RoadSpline,
    cfg: &TrackConfig,
    vehicle_width: f64,
    vehicle_height: f64,
) -> Result<Track, TrackError> {
    cfg.validate()?;
    if !(vehicle_width > 0.0 && vehicle_height > 0.0) {
        return Err(TrackError::InvalidConfig("vehicle dimensions must be > 0".into()));
    }
    let spline = spline.clone().with_up_mode(cfg.up_mode);
    let length = spline.total_length();
    let mut warnings = Vec::new();

    let mut arcs: Vec<f64> = if cfg.spacing >= length {
        warnings.push(format!(
            "SingleSegmentTrack: spacing {} >= spline length {length}",
            cfg.spacing
        ));
        vec![0.0, length]
    } else {
        // tolerate L/f landing a rounding error below an integer
        let n = (length / cfg.spacing + 1e-9).floor() as usize;
        (0..=n).map(|r| (r as f64 * cfg.spacing).min(length)).collect()
    };
    arcs.dedup();
    let spacing = cfg.spacing.min(length);

    let samples: Vec<_> = arcs.iter().map(|&s| spline.eval_clamped(s)).collect();
    let road_hw = cfg.road_width_factor * vehicle_width / 2.0;
    let wall_hh = cfg.wall_height_factor * vehicle_height / 2.0;
    let wall_ht = cfg.wall_thickness / 2.0;
    let half_len = spacing / 2.0 + cfg.wall_thickness;
    let drop = cfg.drop_offset_factor * vehicle_height;

    let mut forwards: Vec<Vec3> = samples
        .windows(2)
        .map(|w| (w[1].position - w[0].position).normalize())
        .collect();
    let last = *forwards.last().expect("at least two blocks");
    forwards.push(last);

    let blocks = samples
        .iter()
        .zip(&forwards)
        .zip(&arcs)
        .enumerate()
        .map(|(index, ((smp, forward), &s))| {
            let up = orthonormalize_against(&smp.up, forward, &smp.up);
            let left = up.cross(forward);
            let rot = frame_rotation(forward, &left, &up);
            let center = smp.position - up * drop;
            let floor_box = Obb::new(
                center - up * FLOOR_HALF_THICKNESS,
                Vec3::new(half_len, road_hw, FLOOR_HALF_THICKNESS),
                rot,
            );
            let wall = |side: f64| {
                Obb::new(
                    center + left * (side * (road_hw + wall_ht)) + up * wall_hh,
                    Vec3::new(half_len, wall_ht, wall_hh),
                    rot,
                )
            };
            RoadBlock {
                index,
                s,
                center,
                up,
                forward: *forward,
                floor_box,
                left_wall_box: wall(1.0),
                right_wall_box: wall(-1.0),
            }
        })
        .collect();

    Ok(Track {
        blocks,
        spline,
        config: cfg.clone(),
        vehicle_width,
        vehicle_height,
        warnings,
    })
}
