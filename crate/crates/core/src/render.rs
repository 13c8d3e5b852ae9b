//! Tile-based software rasterizer for Gaussian splats.
//!
//! Frames are rendered in three passes. Every gaussian of every scene is
//! projected to a screen-space ellipse (EWA local-affine approximation). The
//! projected set is then sorted by camera depth, ties broken by
//! `(scene index, gaussian index)`, and binned into 16×16 pixel tiles by the
//! ellipse's 3σ bounding box. Finally each tile composites its list front to
//! back.
//!
//! Tiles are independent, so the output is bit-identical for any number of
//! worker threads.

use std::path::Path;

use nalgebra::{Isometry3, Matrix2x3, Matrix3, Point3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{frame_rotation, Vec3};
use crate::sh::eval_sh;
use crate::splat::{Gaussian, SplatScene};

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("png encoding failed for {path}: {message}")]
    Png { path: String, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Pinhole camera in the OpenCV convention: x right, y down, z forward.
/// Pixel `(i, j)` has its center at `(i + 0.5, j + 0.5)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PinholeCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub world_from_camera: Isometry3<f64>,
    pub near: f64,
}

pub const DEFAULT_NEAR: f64 = 0.05;

impl PinholeCamera {
    /// Square-pixel camera with horizontal field of view `fov_x` (radians)
    /// and the principal point at the image center.
    pub fn from_fov(width: u32, height: u32, fov_x: f64, world_from_camera: Isometry3<f64>) -> Self {
        let fx = width as f64 / 2.0 / (fov_x / 2.0).tan();
        Self {
            fx,
            fy: fx,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            world_from_camera,
            near: DEFAULT_NEAR,
        }
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(RenderError::InvalidCamera("fx and fy must be > 0".into()));
        }
        if self.width < 8 || self.height < 8 {
            return Err(RenderError::InvalidCamera("image must be at least 8x8".into()));
        }
        Ok(())
    }

    pub fn center(&self) -> Vec3 {
        self.world_from_camera.translation.vector
    }
}

/// World-from-camera pose looking along `forward` with `up` towards the top
/// of the image.
pub fn look_along(position: Vec3, forward: &Vec3, up: &Vec3) -> Isometry3<f64> {
    let z = forward.normalize();
    let y = -crate::geom::orthonormalize_against(up, &z, &Vec3::z());
    let x = y.cross(&z);
    Isometry3::from_parts(position.into(), frame_rotation(&x, &y, &z))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderOptions {
    /// Added to the diagonal of every 2D covariance, pixels².
    pub low_pass: f64,
    /// Compositing stops once transmittance falls below this.
    pub min_transmittance: f64,
    pub tile_size: u32,
    /// Footprint cutoff in standard deviations.
    pub cutoff_sigma: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            low_pass: 0.3,
            min_transmittance: 1.0 / 255.0,
            tile_size: 16,
            cutoff_sigma: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedSplat {
    pub mean2d: [f64; 2],
    /// Symmetric 2D covariance `(xx, xy, yy)` in pixels², low-pass included.
    pub cov2d: [f64; 3],
    /// Inverse of `cov2d`, same layout.
    pub conic: [f64; 3],
    pub color: [f64; 3],
    pub alpha: f64,
    pub depth: f64,
    /// Inclusive pixel range `[x0, x1] × [y0, y1]`, clipped to the image.
    pub bbox: [u32; 4],
    pub scene: u32,
    pub index: u32,
}

impl ProjectedSplat {
    /// Mahalanobis² of the pixel center `(px + 0.5, py + 0.5)`.
    #[inline]
    pub fn power(&self, px: u32, py: u32) -> f64 {
        let dx = px as f64 + 0.5 - self.mean2d[0];
        let dy = py as f64 + 0.5 - self.mean2d[1];
        let [a, b, c] = self.conic;
        a * dx * dx + 2.0 * b * dx * dy + c * dy * dy
    }
}

/// Projects one gaussian placed by `scene_xf` into `cam`. Returns `None` when
/// it lies at or behind the near plane or its 3σ box misses the image.
pub fn project_gaussian(
    g: &Gaussian,
    scene_xf: &Isometry3<f64>,
    sh_degree: u8,
    cam: &PinholeCamera,
    opts: &RenderOptions,
) -> Option<ProjectedSplat> {
    let mean_w = scene_xf.transform_point(&Point3::from(g.mean_f64()));
    let cam_from_world = cam.world_from_camera.inverse();
    let t = cam_from_world.transform_point(&mean_w).coords;
    if t.z <= cam.near {
        return None;
    }
    let m = (cam_from_world.rotation * scene_xf.rotation * g.rotation_f64()).to_rotation_matrix();
    let s = g.scale();
    let ms = m.matrix() * Matrix3::from_diagonal(&s);
    let cov_cam = ms * ms.transpose();

    let lim_x = 1.3 * cam.width as f64 / (2.0 * cam.fx);
    let lim_y = 1.3 * cam.height as f64 / (2.0 * cam.fy);
    let tx = (t.x / t.z).clamp(-lim_x, lim_x) * t.z;
    let ty = (t.y / t.z).clamp(-lim_y, lim_y) * t.z;
    let z2 = t.z * t.z;
    let j = Matrix2x3::new(
        cam.fx / t.z,
        0.0,
        -cam.fx * tx / z2,
        0.0,
        cam.fy / t.z,
        -cam.fy * ty / z2,
    );
    let cov = j * cov_cam * j.transpose();
    let a = cov[(0, 0)] + opts.low_pass;
    let b = cov[(0, 1)];
    let c = cov[(1, 1)] + opts.low_pass;
    let det = a * c - b * b;
    if !(det > 0.0) {
        return None;
    }
    let mx = cam.fx * t.x / t.z + cam.cx;
    let my = cam.fy * t.y / t.z + cam.cy;
    let hx = opts.cutoff_sigma * a.sqrt();
    let hy = opts.cutoff_sigma * c.sqrt();
    // one pixel of slack so rounding at the ellipse rim never drops a pixel
    let x0 = (mx - hx - 0.5).ceil() - 1.0;
    let x1 = (mx + hx - 0.5).floor() + 1.0;
    let y0 = (my - hy - 0.5).ceil() - 1.0;
    let y1 = (my + hy - 0.5).floor() + 1.0;
    let (w, h) = (cam.width as f64, cam.height as f64);
    if !(x1 >= 0.0 && y1 >= 0.0 && x0 <= w - 1.0 && y0 <= h - 1.0) {
        return None;
    }
    let bbox = [
        x0.max(0.0) as u32,
        x1.min(w - 1.0) as u32,
        y0.max(0.0) as u32,
        y1.min(h - 1.0) as u32,
    ];

    let view = (mean_w.coords - cam.center()).normalize();
    let view_local = scene_xf.rotation.inverse_transform_vector(&view);
    let n = (sh_degree as usize + 1).pow(2);
    let color = eval_sh(&g.sh[..n], &view_local, sh_degree).expect("sh_degree validated by scene");
    Some(ProjectedSplat {
        mean2d: [mx, my],
        cov2d: [a, b, c],
        conic: [c / det, -b / det, a / det],
        color,
        alpha: g.opacity(),
        depth: t.z,
        bbox,
        scene: 0,
        index: 0,
    })
}

/// Result of compositing one pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelResult {
    /// Premultiplied color before the background term.
    pub rgb: [f64; 3],
    pub transmittance: f64,
    /// Σ of per-splat weights `α·G·T`.
    pub weight_sum: f64,
    pub contributors: u32,
}

/// Front-to-back compositing over `splats` (already depth sorted) at pixel
/// `(px, py)`.
pub fn composite_pixel<'a>(
    splats: impl IntoIterator<Item = &'a ProjectedSplat>,
    px: u32,
    py: u32,
    opts: &RenderOptions,
) -> PixelResult {
    let cutoff = opts.cutoff_sigma * opts.cutoff_sigma;
    let mut rgb = [0.0f64; 3];
    let mut t = 1.0f64;
    let mut weight_sum = 0.0;
    let mut contributors = 0;
    for s in splats {
        let power = s.power(px, py);
        if power > cutoff {
            continue;
        }
        let a = s.alpha * (-0.5 * power).exp();
        let w = a * t;
        for ch in 0..3 {
            rgb[ch] += w * s.color[ch];
        }
        weight_sum += w;
        contributors += 1;
        t *= 1.0 - a;
        if t < opts.min_transmittance {
            break;
        }
    }
    PixelResult {
        rgb,
        transmittance: t,
        weight_sum,
        contributors,
    }
}

/// Projected, sorted and tile-binned splats for one frame.
#[derive(Debug, Clone)]
pub struct FramePlan {
    pub width: u32,
    pub height: u32,
    pub tile_size: u32,
    pub tiles_x: u32,
    pub tiles_y: u32,
    /// Depth-sorted projected splats.
    pub splats: Vec<ProjectedSplat>,
    /// Per tile, indices into `splats` in ascending depth order.
    pub tile_lists: Vec<Vec<u32>>,
    pub opts: RenderOptions,
}

impl FramePlan {
    pub fn build(scenes: &[SplatScene], cam: &PinholeCamera, opts: &RenderOptions) -> Self {
        let mut splats: Vec<ProjectedSplat> = Vec::new();
        for (si, scene) in scenes.iter().enumerate() {
            let projected: Vec<Option<ProjectedSplat>> = scene
                .gaussians
                .par_iter()
                .enumerate()
                .map(|(gi, g)| {
                    project_gaussian(g, &scene.local_to_world, scene.sh_degree, cam, opts).map(|mut p| {
                        p.scene = si as u32;
                        p.index = gi as u32;
                        p
                    })
                })
                .collect();
            splats.extend(projected.into_iter().flatten());
        }
        splats.sort_by(|a, b| {
            a.depth
                .total_cmp(&b.depth)
                .then(a.scene.cmp(&b.scene))
                .then(a.index.cmp(&b.index))
        });

        let ts = opts.tile_size.max(1);
        let tiles_x = cam.width.div_ceil(ts);
        let tiles_y = cam.height.div_ceil(ts);
        let mut tile_lists = vec![Vec::new(); (tiles_x * tiles_y) as usize];
        for (i, s) in splats.iter().enumerate() {
            let [x0, x1, y0, y1] = s.bbox;
            for ty in y0 / ts..=y1 / ts {
                for tx in x0 / ts..=x1 / ts {
                    tile_lists[(ty * tiles_x + tx) as usize].push(i as u32);
                }
            }
        }
        FramePlan {
            width: cam.width,
            height: cam.height,
            tile_size: ts,
            tiles_x,
            tiles_y,
            splats,
            tile_lists,
            opts: opts.clone(),
        }
    }

    pub fn tile_of(&self, px: u32, py: u32) -> usize {
        ((py / self.tile_size) * self.tiles_x + px / self.tile_size) as usize
    }

    pub fn composite(&self, px: u32, py: u32) -> PixelResult {
        let list = &self.tile_lists[self.tile_of(px, py)];
        composite_pixel(list.iter().map(|&i| &self.splats[i as usize]), px, py, &self.opts)
    }

    /// Composites every tile (in parallel) over `background`.
    pub fn rasterize(&self, background: [f64; 3]) -> Framebuffer {
        let (w, h, ts) = (self.width, self.height, self.tile_size);
        let tiles: Vec<Vec<(u32, u32, PixelResult)>> = (0..self.tile_lists.len())
            .into_par_iter()
            .map(|t| {
                let tx = t as u32 % self.tiles_x;
                let ty = t as u32 / self.tiles_x;
                let list = &self.tile_lists[t];
                let mut out = Vec::with_capacity((ts * ts) as usize);
                for py in ty * ts..((ty + 1) * ts).min(h) {
                    for px in tx * ts..((tx + 1) * ts).min(w) {
                        let r = composite_pixel(
                            list.iter().map(|&i| &self.splats[i as usize]),
                            px,
                            py,
                            &self.opts,
                        );
                        out.push((px, py, r));
                    }
                }
                out
            })
            .collect();
        let mut fb = Framebuffer::new(w, h);
        for (px, py, r) in tiles.into_iter().flatten() {
            fb.set(px, py, &r, &background);
        }
        fb
    }
}

/// Renders `scenes` through `cam`; uncovered transmittance shows `background`.
pub fn render(scenes: &[SplatScene], cam: &PinholeCamera, background: [f64; 3]) -> Framebuffer {
    render_with(scenes, cam, background, &RenderOptions::default())
}

pub fn render_with(
    scenes: &[SplatScene],
    cam: &PinholeCamera,
    background: [f64; 3],
    opts: &RenderOptions,
) -> Framebuffer {
    FramePlan::build(scenes, cam, opts).rasterize(background)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Framebuffer {
    pub width: u32,
    pub height: u32,
    pub rgb: Vec<[f32; 3]>,
    pub transmittance: Vec<f32>,
}

impl Framebuffer {
    pub fn new(width: u32, height: u32) -> Self {
        let n = (width * height) as usize;
        Self {
            width,
            height,
            rgb: vec![[0.0; 3]; n],
            transmittance: vec![1.0; n],
        }
    }

    pub fn filled(width: u32, height: u32, rgb: [f32; 3]) -> Self {
        let mut fb = Self::new(width, height);
        fb.rgb.iter_mut().for_each(|p| *p = rgb);
        fb
    }

    fn set(&mut self, px: u32, py: u32, r: &PixelResult, bg: &[f64; 3]) {
        let i = (py * self.width + px) as usize;
        for ch in 0..3 {
            self.rgb[i][ch] = (r.rgb[ch] + r.transmittance * bg[ch]).clamp(0.0, 1.0) as f32;
        }
        self.transmittance[i] = r.transmittance as f32;
    }

    pub fn pixel(&self, px: u32, py: u32) -> [f32; 3] {
        self.rgb[(py * self.width + px) as usize]
    }

    /// Row-major RGB8, each channel `round(v * 255)`.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.rgb
            .iter()
            .flat_map(|p| p.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8))
            .collect()
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), RenderError> {
        render_to_png(self, path)
    }
}

pub fn render_to_png(fb: &Framebuffer, path: impl AsRef<Path>) -> Result<(), RenderError> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let file = std::fs::File::create(path).map_err(|source| RenderError::Io {
        path: name.clone(),
        source,
    })?;
    let mut enc = png::Encoder::new(std::io::BufWriter::new(file), fb.width, fb.height);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let png_err = |e: png::EncodingError| RenderError::Png {
        path: name.clone(),
        message: e.to_string(),
    };
    let mut writer = enc.write_header().map_err(png_err)?;
    writer.write_image_data(&fb.to_rgb8()).map_err(png_err)?;
    writer.finish().map_err(png_err)
}

/// Camera-space position helper used by tests and observers.
pub fn to_camera(cam: &PinholeCamera, p: &Vec3) -> Vector3<f64> {
    cam.world_from_camera.inverse_transform_point(&Point3::from(*p)).coords
}
