//! Sliding-window tiling of large scenes into fixed-size patches, with
//! oriented-box re-projection and the inverse stitching check.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::{serialize_dota_obb, OrientedBox, SceneAnnotation};
use crate::geometry::{clip_to_rect, min_area_rect, signed_area, ClipRect, Point};
use crate::raster::{Raster, RasterError};

#[derive(Debug, Error)]
pub enum TileError {
    #[error("invalid tiling config: {0}")]
    InvalidConfig(String),
    #[error("raster is {raster_w}x{raster_h} but scene `{image_id}` declares {scene_w}x{scene_h}")]
    RasterMismatch { image_id: String, scene_w: u32, scene_h: u32, raster_w: u32, raster_h: u32 },
    #[error("patches leave pixel ({x}, {y}) of the padded extent uncovered")]
    CoverageGap { x: u32, y: u32 },
    #[error("stitching needs patches from a single parent, found `{0}` and `{1}`")]
    MixedParents(String, String),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, TileError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileConfig {
    pub window: u32,
    pub overlap: u32,
    pub pad_value: u8,
    pub keep_empty: bool,
    /// Minimum fraction of a box's area a patch must retain to keep the box.
    pub min_box_area_ratio: f64,
}

impl TileConfig {
    /// 1024 px windows, 256 px overlap, empty patches dropped.
    pub fn train() -> Self {
        Self { window: 1024, overlap: 256, pad_value: 0, keep_empty: false, min_box_area_ratio: 0.3 }
    }

    /// 1024 px windows without overlap; every patch kept.
    pub fn val() -> Self {
        Self { overlap: 0, keep_empty: true, ..Self::train() }
    }

    pub fn stride(&self) -> u32 {
        self.window - self.overlap
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(TileError::InvalidConfig("window must be positive".into()));
        }
        if self.overlap >= self.window {
            return Err(TileError::InvalidConfig(format!(
                "overlap {} must be smaller than window {}",
                self.overlap, self.window
            )));
        }
        if !(0.0..=1.0).contains(&self.min_box_area_ratio) {
            return Err(TileError::InvalidConfig(format!(
                "min_box_area_ratio {} outside [0, 1]",
                self.min_box_area_ratio
            )));
        }
        Ok(())
    }
}

impl Default for TileConfig {
    fn default() -> Self {
        Self::train()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub parent_id: String,
    pub origin: (u32, u32),
    pub pixels: Raster,
    pub annotations: Vec<OrientedBox>,
    pub padded: bool,
}

impl Patch {
    /// File stem `{parent_id}__{x}_{y}`.
    pub fn name(&self) -> String {
        patch_name(&self.parent_id, self.origin)
    }

    pub fn annotation_text(&self, gsd: Option<f64>) -> String {
        let scene = SceneAnnotation {
            image_id: self.name(),
            image_width: self.pixels.width,
            image_height: self.pixels.height,
            gsd,
            boxes: self.annotations.clone(),
        };
        serialize_dota_obb(&scene)
    }
}

pub fn patch_name(parent_id: &str, origin: (u32, u32)) -> String {
    format!("{parent_id}__{}_{}", origin.0, origin.1)
}

fn axis_origins(dim: u32, window: u32, stride: u32) -> Vec<u32> {
    let last = dim.saturating_sub(window);
    let mut out: Vec<u32> = (0..dim).step_by(stride as usize).map(|o| o.min(last)).collect();
    out.dedup();
    out
}

/// Window origins in row-major order (y outer, x inner). Origins whose
/// window would overrun the image are pulled back to `dim - window`, or to 0
/// when the image is smaller than the window.
pub fn tile_origins(width: u32, height: u32, cfg: &TileConfig) -> Vec<(u32, u32)> {
    assert!(cfg.window > 0 && cfg.overlap < cfg.window, "invalid tile config");
    let xs = axis_origins(width, cfg.window, cfg.stride());
    let ys = axis_origins(height, cfg.window, cfg.stride());
    ys.iter().flat_map(|&y| xs.iter().map(move |&x| (x, y))).collect()
}

/// Size of the canvas the patches of a `width × height` image cover.
pub fn padded_extent(width: u32, height: u32, window: u32) -> (u32, u32) {
    (width.max(window), height.max(window))
}

/// Re-express `b` in the frame of the window at `origin`. Boxes entirely
/// inside the window are translated exactly; others are clipped, dropped if
/// they keep less than `min_box_area_ratio` of their area, and otherwise
/// replaced by the minimum-area rectangle of the clipped polygon.
pub fn project_box(b: &OrientedBox, origin: (u32, u32), cfg: &TileConfig) -> Option<OrientedBox> {
    let (ox, oy) = (f64::from(origin.0), f64::from(origin.1));
    let w = f64::from(cfg.window);
    let rect = ClipRect { x0: ox, y0: oy, x1: ox + w, y1: oy + w };
    let shift = Point { x: ox, y: oy };

    if b.vertices.iter().all(|&p| rect.contains(p)) {
        let mut out = b.clone();
        for v in &mut out.vertices {
            *v = *v - shift;
        }
        return Some(out);
    }

    let clipped = clip_to_rect(&b.vertices, rect);
    let kept = signed_area(&clipped).abs();
    if kept <= 0.0 || kept < cfg.min_box_area_ratio * b.area() {
        return None;
    }
    let fitted = min_area_rect(&clipped)?;
    let mut vertices = fitted.corners();
    for v in &mut vertices {
        let local = *v - shift;
        *v = Point { x: local.x.clamp(0.0, w), y: local.y.clamp(0.0, w) };
    }
    let out = OrientedBox { vertices, class_label: b.class_label.clone(), difficulty: b.difficulty };
    (!out.is_degenerate()).then_some(out)
}

pub fn tile_scene(scene: &SceneAnnotation, raster: &Raster, cfg: &TileConfig) -> Result<Vec<Patch>> {
    cfg.validate()?;
    if raster.width != scene.image_width || raster.height != scene.image_height {
        return Err(TileError::RasterMismatch {
            image_id: scene.image_id.clone(),
            scene_w: scene.image_width,
            scene_h: scene.image_height,
            raster_w: raster.width,
            raster_h: raster.height,
        });
    }
    let mut patches = Vec::new();
    for origin in tile_origins(scene.image_width, scene.image_height, cfg) {
        let annotations: Vec<OrientedBox> = scene.boxes.iter().filter_map(|b| project_box(b, origin, cfg)).collect();
        if annotations.is_empty() && !cfg.keep_empty {
            continue;
        }
        let (pixels, padded) = raster.crop_padded(origin.0, origin.1, cfg.window, cfg.window, cfg.pad_value);
        patches.push(Patch { parent_id: scene.image_id.clone(), origin, pixels, annotations, padded });
    }
    Ok(patches)
}

/// Reassemble the padded parent of `parent_width × parent_height` from its
/// patches. Fails if any pixel of the padded extent is not covered.
pub fn stitch_validate(patches: &[Patch], parent_width: u32, parent_height: u32, cfg: &TileConfig) -> Result<Raster> {
    cfg.validate()?;
    let (ew, eh) = padded_extent(parent_width, parent_height, cfg.window);
    let Some(first) = patches.first() else {
        return Err(TileError::CoverageGap { x: 0, y: 0 });
    };
    if let Some(other) = patches.iter().find(|p| p.parent_id != first.parent_id) {
        return Err(TileError::MixedParents(first.parent_id.clone(), other.parent_id.clone()));
    }
    let mut canvas = Raster::filled(ew, eh, first.pixels.channels, cfg.pad_value);
    let mut covered = vec![false; ew as usize * eh as usize];
    for p in patches {
        canvas.blit(&p.pixels, p.origin.0, p.origin.1);
        let x_end = (p.origin.0 + p.pixels.width).min(ew);
        let y_end = (p.origin.1 + p.pixels.height).min(eh);
        for y in p.origin.1.min(eh)..y_end {
            let row = y as usize * ew as usize;
            covered[row + p.origin.0.min(ew) as usize..row + x_end as usize].fill(true);
        }
    }
    if let Some(i) = covered.iter().position(|c| !c) {
        return Err(TileError::CoverageGap { x: (i % ew as usize) as u32, y: (i / ew as usize) as u32 });
    }
    Ok(canvas)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TilingManifest {
    pub parent_id: String,
    pub window: u32,
    pub overlap: u32,
    /// Origins of the emitted patches, in emission order.
    pub origins: Vec<(u32, u32)>,
    pub padded_extent: (u32, u32),
    pub patches: Vec<String>,
}

/// Write each patch as `{name}.pgm|ppm` plus `{name}.txt`, and the parent's
/// `{parent_id}__tiling.json`.
pub fn write_patches(
    out_dir: &Path,
    scene: &SceneAnnotation,
    patches: &[Patch],
    cfg: &TileConfig,
) -> Result<TilingManifest> {
    std::fs::create_dir_all(out_dir)?;
    let mut names = Vec::with_capacity(patches.len());
    for p in patches {
        let name = p.name();
        p.pixels.write(out_dir.join(format!("{name}.{}", p.pixels.extension())))?;
        std::fs::write(out_dir.join(format!("{name}.txt")), p.annotation_text(scene.gsd))?;
        names.push(name);
    }
    let manifest = TilingManifest {
        parent_id: scene.image_id.clone(),
        window: cfg.window,
        overlap: cfg.overlap,
        origins: patches.iter().map(|p| p.origin).collect(),
        padded_extent: padded_extent(scene.image_width, scene.image_height, cfg.window),
        patches: names,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(out_dir.join(format!("{}__tiling.json", scene.image_id)), json + "\n")?;
    Ok(manifest)
}
