//! Pyramid-level auditing: minor-axis occupancy per stride, a raster
//! simulation of feature dilution under average pooling, and the rule that
//! picks a contiguous run of levels from the data.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{clip_to_rect, signed_area, ClipRect, Point};
use crate::morphometry::{Axis, AxisStats};
use crate::rf_engine::ArchSpec;

#[derive(Debug, Error, PartialEq)]
pub enum AdvisorError {
    #[error("bar does not fit in the {canvas}px canvas")]
    BarExceedsCanvas { canvas: u32 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Minor-axis occupancy ratio: how many feature cells the narrow side spans.
pub fn occupancy_ratio(minor: f64, stride: f64) -> f64 {
    minor / stride
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyAudit {
    pub level: String,
    pub stride: f64,
    pub rho_mean: f64,
    pub rho_q_low: f64,
    /// Strict sampling criterion: stride ≤ q_low / 2.
    pub nyquist_strict_ok: bool,
    /// Fraction of instances with ρ < 1; needs raw samples.
    pub subpixel_fraction: Option<f64>,
}

pub fn audit_levels(
    minor_stats: &AxisStats,
    levels: &[(String, f64)],
    minor_samples: Option<&[f64]>,
) -> Vec<OccupancyAudit> {
    levels
        .iter()
        .map(|(name, stride)| {
            let subpixel_fraction = minor_samples.filter(|s| !s.is_empty()).map(|s| {
                let below = s.iter().filter(|&&m| occupancy_ratio(m, *stride) < 1.0).count();
                below as f64 / s.len() as f64
            });
            OccupancyAudit {
                level: name.clone(),
                stride: *stride,
                rho_mean: occupancy_ratio(minor_stats.mean, *stride),
                rho_q_low: occupancy_ratio(minor_stats.q_low, *stride),
                nyquist_strict_ok: *stride <= minor_stats.q_low / 2.0,
                subpixel_fraction,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RfSource {
    Trf,
    Erf,
}

impl std::str::FromStr for RfSource {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "trf" => Ok(RfSource::Trf),
            "erf" => Ok(RfSource::Erf),
            other => Err(format!("unknown rf source `{other}` (expected trf or erf)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub stride: f64,
    pub trf: f64,
    pub erf: Option<f64>,
    /// Receptive field the coverage rule used for this level.
    pub rf: f64,
    pub source: RfSource,
    pub image_size: u32,
    pub covers: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PyramidReport {
    pub audits: Vec<OccupancyAudit>,
    pub erf_coverage: BTreeMap<String, Coverage>,
    pub recommended_levels: Vec<String>,
    pub pruned_levels: Vec<String>,
    pub rationale: Vec<String>,
    pub warnings: Vec<String>,
}

/// Pick the pyramid levels for a corpus.
///
/// * Lowest level: the coarsest tap whose stride does not exceed q_low of the
///   minor axis (ρ_q_low ≥ 1). If no tap qualifies the finest tap is kept and
///   a warning is recorded.
/// * Highest level: the first tap at or above the lowest whose receptive
///   field covers the whole image; coarser taps are pruned. The object-extent
///   rule (rf ≥ snapped q_high of the major axis) is reported alongside.
///
/// The result is always a contiguous run of taps ordered by stride.
pub fn recommend_levels(
    minor_stats: &AxisStats,
    major_stats: &AxisStats,
    arch: &ArchSpec,
    image_size: u32,
    rf_source: RfSource,
    erf: Option<&BTreeMap<String, f64>>,
) -> PyramidReport {
    debug_assert_eq!(minor_stats.axis, Axis::Minor);
    let levels = arch.levels_by_stride();
    let mut rationale = Vec::new();
    let mut warnings = Vec::new();

    let strides: Vec<(String, f64)> = levels.iter().map(|(n, g)| (n.clone(), g.stride_px())).collect();
    let audits = audit_levels(minor_stats, &strides, None);
    if levels.len() == 1 {
        warnings.push(format!("architecture exposes a single level ({}); nothing to choose from", levels[0].0));
    }

    if rf_source == RfSource::Erf && erf.is_none_or(|m| m.is_empty()) {
        warnings.push("rf_source=erf but no ERF measurements supplied; falling back to TRF".into());
    }
    let mut erf_coverage = BTreeMap::new();
    let mut rf_values = Vec::with_capacity(levels.len());
    for (name, geom) in &levels {
        let measured = erf.and_then(|m| m.get(name)).copied();
        let (rf, source) = match (rf_source, measured) {
            (RfSource::Erf, Some(v)) => (v, RfSource::Erf),
            (RfSource::Erf, None) => {
                if erf.is_some_and(|m| !m.is_empty()) {
                    warnings.push(format!("no ERF for {name}; using TRF"));
                }
                (geom.trf_px(), RfSource::Trf)
            }
            (RfSource::Trf, _) => (geom.trf_px(), RfSource::Trf),
        };
        rf_values.push(rf);
        erf_coverage.insert(
            name.clone(),
            Coverage {
                stride: geom.stride_px(),
                trf: geom.trf_px(),
                erf: measured,
                rf,
                source,
                image_size,
                covers: rf >= f64::from(image_size),
            },
        );
    }

    // Occupancy rule.
    let q_low = minor_stats.q_low;
    let lowest = match strides.iter().rposition(|(_, s)| *s <= q_low) {
        Some(i) => {
            rationale.push(format!(
                "occupancy: {} is the coarsest level with stride {} ≤ q_low(minor) {:.2} (ρ_q_low = {:.3} ≥ 1)",
                strides[i].0,
                strides[i].1,
                q_low,
                occupancy_ratio(q_low, strides[i].1)
            ));
            i
        }
        None => {
            warnings.push(format!(
                "NoFeasibleLevel: finest tap {} has stride {} > q_low(minor) {:.2}; keeping it anyway",
                strides[0].0, strides[0].1, q_low
            ));
            rationale.push(format!(
                "occupancy: no level reaches ρ_q_low ≥ 1 (best {} with ρ_q_low = {:.3})",
                strides[0].0,
                occupancy_ratio(q_low, strides[0].1)
            ));
            0
        }
    };
    for a in &audits[..lowest] {
        rationale.push(format!(
            "occupancy: {} (stride {}) is finer than needed, ρ_q_low = {:.3}",
            a.level, a.stride, a.rho_q_low
        ));
    }

    // Coverage rule.
    let image = f64::from(image_size);
    let highest = match (lowest..levels.len()).find(|&i| rf_values[i] >= image) {
        Some(i) => {
            rationale.push(format!(
                "coverage: {} is the first level with rf {:.1} ≥ image {}",
                levels[i].0, rf_values[i], image_size
            ));
            i
        }
        None => {
            let last = levels.len() - 1;
            warnings.push(format!(
                "no level's receptive field covers the {image_size}px image; keeping up to {}",
                levels[last].0
            ));
            rationale.push(format!(
                "coverage: largest rf is {:.1} at {} (< image {})",
                rf_values[last], levels[last].0, image_size
            ));
            last
        }
    };
    let object_extent = major_stats.range95_snapped[1];
    if let Some(i) = (0..levels.len()).find(|&i| rf_values[i] >= object_extent) {
        rationale.push(format!(
            "object extent: {} is the first level with rf {:.1} ≥ snapped q_high(major) {}",
            levels[i].0, rf_values[i], object_extent
        ));
    }
    for i in highest + 1..levels.len() {
        rationale.push(format!(
            "prune: {} (stride {}) adds rf {:.1} beyond the image ({:.1}× the largest object extent {})",
            levels[i].0,
            strides[i].1,
            rf_values[i],
            rf_values[i] / object_extent,
            object_extent
        ));
    }

    let recommended_levels = levels[lowest..=highest].iter().map(|(n, _)| n.clone()).collect();
    let pruned_levels = levels[highest + 1..].iter().map(|(n, _)| n.clone()).collect();
    PyramidReport { audits, erf_coverage, recommended_levels, pruned_levels, rationale, warnings }
}

impl PyramidReport {
    /// Aligned text table: stride / receptive fields / occupancy per level.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<6} {:>8} {:>9} {:>9} {:>7} {:>9} {:>10} {:>8} {:>9}",
            "level", "stride", "trf", "erf", "covers", "rho_mean", "rho_q_low", "nyquist", "selected"
        );
        for a in &self.audits {
            let cov = &self.erf_coverage[&a.level];
            let erf = cov.erf.map_or("-".to_string(), |v| format!("{v:.1}"));
            let selected = if self.recommended_levels.contains(&a.level) { "yes" } else { "no" };
            let _ = writeln!(
                out,
                "{:<6} {:>8} {:>9.1} {:>9} {:>7} {:>9.3} {:>10.3} {:>8} {:>9}",
                a.level,
                a.stride,
                cov.trf,
                erf,
                cov.covers,
                a.rho_mean,
                a.rho_q_low,
                if a.nyquist_strict_ok { "ok" } else { "fail" },
                selected
            );
        }
        let _ = writeln!(out, "recommended: {}", self.recommended_levels.join(", "));
        if !self.pruned_levels.is_empty() {
            let _ = writeln!(out, "pruned: {}", self.pruned_levels.join(", "));
        }
        for r in &self.rationale {
            let _ = writeln!(out, "  - {r}");
        }
        for w in &self.warnings {
            let _ = writeln!(out, "  ! {w}");
        }
        out
    }
}

/// Where the bar sits on the canvas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Placement {
    /// Bounding-box corner on the stride grid cell nearest the canvas centre.
    GridAligned,
    /// Bar centre at the canvas centre.
    Centered,
    /// Bounding-box minimum corner at this point.
    Corner(f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarSpec {
    pub width: f64,
    pub length: f64,
    /// Rotation of the long side from the x axis.
    pub angle_deg: f64,
    pub stride: u32,
    pub canvas: u32,
    pub placement: Placement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DilutionResult {
    pub stride: u32,
    pub bar_width: f64,
    pub bar_length: f64,
    pub angle_deg: f64,
    /// Largest average-pooled cell value.
    pub max_cell_signal: f64,
    /// min(1, width / stride): the occupancy ratio capped at one.
    pub occupancy_bound: f64,
    /// min(1, width · length / stride²).
    pub area_bound: f64,
    /// Bound the pooled signal must respect: the smaller of the two for
    /// axis-aligned bars, the area bound otherwise.
    pub bound: f64,
}

fn bar_polygon(spec: &BarSpec) -> [Point; 4] {
    let (s, c) = spec.angle_deg.to_radians().sin_cos();
    let u = Point::new(c, s) * (spec.length * 0.5);
    let v = Point::new(-s, c) * (spec.width * 0.5);
    let mut poly = [u * -1.0 - v, u - v, u + v, u * -1.0 + v];
    let min_x = poly.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
    let min_y = poly.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
    let max_x = poly.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
    let max_y = poly.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
    let canvas = f64::from(spec.canvas);
    let stride = f64::from(spec.stride);
    let corner = match spec.placement {
        Placement::GridAligned => {
            let g = (canvas / 2.0 / stride).floor() * stride;
            Point::new(g, g)
        }
        Placement::Centered => Point::new((canvas - (max_x - min_x)) / 2.0, (canvas - (max_y - min_y)) / 2.0),
        Placement::Corner(x, y) => Point::new(x, y),
    };
    let shift = corner - Point::new(min_x, min_y);
    for p in poly.iter_mut() {
        *p = *p + shift;
    }
    poly
}

fn is_axis_aligned(angle_deg: f64) -> bool {
    let r = angle_deg.rem_euclid(90.0);
    r < 1e-9 || 90.0 - r < 1e-9
}

/// Rasterise a bar with exact per-pixel area coverage, average-pool by
/// `stride`, and report the strongest cell.
pub fn simulate_dilution(spec: &BarSpec) -> Result<DilutionResult, AdvisorError> {
    if spec.stride == 0 || spec.canvas == 0 || !spec.canvas.is_multiple_of(spec.stride) {
        return Err(AdvisorError::InvalidArgument(format!(
            "canvas {} must be a positive multiple of stride {}",
            spec.canvas, spec.stride
        )));
    }
    if !(spec.width > 0.0 && spec.length > 0.0) || !spec.angle_deg.is_finite() {
        return Err(AdvisorError::InvalidArgument("bar width and length must be positive".into()));
    }
    let poly = bar_polygon(spec);
    let canvas = f64::from(spec.canvas);
    const EDGE_TOL: f64 = 1e-9;
    if poly.iter().any(|p| p.x < -EDGE_TOL || p.y < -EDGE_TOL || p.x > canvas + EDGE_TOL || p.y > canvas + EDGE_TOL) {
        return Err(AdvisorError::BarExceedsCanvas { canvas: spec.canvas });
    }

    let n = spec.canvas as usize;
    let s = spec.stride as usize;
    let cells = n / s;
    let mut pooled = vec![0.0; cells * cells];
    let lo_x = poly.iter().map(|p| p.x).fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
    let lo_y = poly.iter().map(|p| p.y).fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
    let hi_x = (poly.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max).ceil() as usize).min(n);
    let hi_y = (poly.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max).ceil() as usize).min(n);
    for py in lo_y..hi_y {
        for px in lo_x..hi_x {
            let pixel = ClipRect { x0: px as f64, y0: py as f64, x1: px as f64 + 1.0, y1: py as f64 + 1.0 };
            let cover = signed_area(&clip_to_rect(&poly, pixel)).abs().min(1.0);
            if cover > 0.0 {
                pooled[(py / s) * cells + px / s] += cover;
            }
        }
    }
    let inv = 1.0 / (s * s) as f64;
    let max_cell_signal = pooled.iter().fold(0.0f64, |m, &v| m.max(v * inv)).min(1.0);

    let stride = f64::from(spec.stride);
    let occupancy_bound = (spec.width / stride).min(1.0);
    let area_bound = (spec.width * spec.length / (stride * stride)).min(1.0);
    let bound = if is_axis_aligned(spec.angle_deg) { occupancy_bound.min(area_bound) } else { area_bound };
    Ok(DilutionResult {
        stride: spec.stride,
        bar_width: spec.width,
        bar_length: spec.length,
        angle_deg: spec.angle_deg,
        max_cell_signal,
        occupancy_bound,
        area_bound,
        bound,
    })
}

pub const DILUTION_CSV_HEADER: &str = "stride,width,length,angle,max_cell_signal,bound";

pub fn dilution_csv_row(r: &DilutionResult) -> String {
    format!("{},{},{},{},{:.6},{:.4}", r.stride, r.bar_width, r.bar_length, r.angle_deg, r.max_cell_signal, r.bound)
}
