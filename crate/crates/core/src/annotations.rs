//! Oriented-box annotation corpora: DOTA-style text parsing and
//! serialization, plus the JSON manifest that ties annotation files to
//! image metadata.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{signed_area, Point};

/// Shoelace-area threshold (px²) below which a box is considered degenerate.
pub const DEGENERATE_AREA: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("line {0}: malformed annotation")]
    MalformedLine(usize),
    #[error("line {0}: degenerate box (zero area)")]
    DegenerateBox(usize),
    #[error("line {0}: vertex outside the {1}x{2} image")]
    OutOfBounds(usize, u32, u32),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("duplicate image id `{0}`")]
    DuplicateImageId(String),
    #[error("manifest {}: {source}", path.display())]
    Manifest {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{}: {source}", path.display())]
    InFile {
        path: PathBuf,
        #[source]
        source: Box<AnnotationError>,
    },
    #[error("{} annotation file(s) failed: {}", .0.len(), join_errors(.0))]
    Aggregate(Vec<AnnotationError>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn join_errors(errs: &[AnnotationError]) -> String {
    errs.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; ")
}

pub type Result<T, E = AnnotationError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub vertices: [Point; 4],
    pub class_label: String,
    pub difficulty: Option<i32>,
}

impl OrientedBox {
    pub fn new(vertices: [Point; 4], class_label: impl Into<String>) -> Self {
        Self { vertices, class_label: class_label.into(), difficulty: None }
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices).abs()
    }

    pub fn is_degenerate(&self) -> bool {
        self.area() <= DEGENERATE_AREA
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneAnnotation {
    pub image_id: String,
    pub image_width: u32,
    pub image_height: u32,
    pub gsd: Option<f64>,
    pub boxes: Vec<OrientedBox>,
}

impl SceneAnnotation {
    pub fn new(image_id: impl Into<String>, image_width: u32, image_height: u32) -> Result<Self> {
        let image_id = image_id.into();
        if image_id.is_empty() {
            return Err(AnnotationError::InvalidScene("empty image id".into()));
        }
        if image_width == 0 || image_height == 0 {
            return Err(AnnotationError::InvalidScene(format!(
                "`{image_id}` has zero size {image_width}x{image_height}"
            )));
        }
        Ok(Self { image_id, image_width, image_height, gsd: None, boxes: Vec::new() })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseOptions {
    /// Reject out-of-image vertices instead of clamping them.
    pub strict_bounds: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseReport {
    /// Number of vertices moved onto the image border.
    pub clamped_vertices: usize,
}

/// Parse DOTA-style OBB text with default options (clamp out-of-bounds).
pub fn parse_dota_obb(text: &str, image_id: &str, width: u32, height: u32) -> Result<SceneAnnotation> {
    parse_dota_obb_with(text, image_id, width, height, ParseOptions::default()).map(|(s, _)| s)
}

pub fn parse_dota_obb_with(
    text: &str,
    image_id: &str,
    width: u32,
    height: u32,
    opts: ParseOptions,
) -> Result<(SceneAnnotation, ParseReport)> {
    let mut scene = SceneAnnotation::new(image_id, width, height)?;
    let mut report = ParseReport::default();
    let (w, h) = (f64::from(width), f64::from(height));

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with("imagesource") {
            continue;
        }
        if let Some(rest) = line.strip_prefix("gsd") {
            let value = rest.trim_start_matches(':').trim();
            scene.gsd = match value {
                "" | "null" | "None" => None,
                v => match v.parse::<f64>() {
                    Ok(g) if g.is_finite() && g > 0.0 => Some(g),
                    _ => return Err(AnnotationError::MalformedLine(line_no)),
                },
            };
            continue;
        }

        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 9 && tokens.len() != 10 {
            return Err(AnnotationError::MalformedLine(line_no));
        }
        let mut coords = [0.0f64; 8];
        for (slot, tok) in coords.iter_mut().zip(&tokens[..8]) {
            *slot = match tok.parse::<f64>() {
                Ok(v) if v.is_finite() => v,
                _ => return Err(AnnotationError::MalformedLine(line_no)),
            };
        }
        let difficulty = match tokens.get(9) {
            Some(tok) => Some(tok.parse::<i32>().map_err(|_| AnnotationError::MalformedLine(line_no))?),
            None => None,
        };

        let mut vertices = [Point::default(); 4];
        for (k, v) in vertices.iter_mut().enumerate() {
            let (mut x, mut y) = (coords[2 * k], coords[2 * k + 1]);
            if !(0.0..=w).contains(&x) || !(0.0..=h).contains(&y) {
                if opts.strict_bounds {
                    return Err(AnnotationError::OutOfBounds(line_no, width, height));
                }
                x = x.clamp(0.0, w);
                y = y.clamp(0.0, h);
                report.clamped_vertices += 1;
            }
            *v = Point::new(x, y);
        }

        let obb = OrientedBox { vertices, class_label: tokens[8].to_string(), difficulty };
        if obb.is_degenerate() {
            return Err(AnnotationError::DegenerateBox(line_no));
        }
        scene.boxes.push(obb);
    }
    Ok((scene, report))
}

/// Serialize a scene back to DOTA-style text. Coordinates use the shortest
/// representation that parses back to the same `f64`.
pub fn serialize_dota_obb(scene: &SceneAnnotation) -> String {
    let mut out = String::new();
    if let Some(gsd) = scene.gsd {
        let _ = writeln!(out, "gsd:{gsd}");
    }
    for b in &scene.boxes {
        for p in &b.vertices {
            let _ = write!(out, "{} {} ", p.x, p.y);
        }
        out.push_str(&b.class_label);
        if let Some(d) = b.difficulty {
            let _ = write!(out, " {d}");
        }
        out.push('\n');
    }
    out
}

/// One record of a corpus manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    /// Relative paths resolve against the manifest's directory.
    pub annotation_file: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gsd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Manifest {
    pub path: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => AnnotationError::MissingFile(path.to_path_buf()),
            _ => AnnotationError::Io(e),
        })?;
        let entries: Vec<ManifestEntry> = serde_json::from_str(&text)
            .map_err(|source| AnnotationError::Manifest { path: path.to_path_buf(), source })?;
        Ok(Self { path: path.to_path_buf(), entries })
    }

    pub fn resolve(&self, rel: &Path) -> PathBuf {
        match self.path.parent() {
            Some(dir) if rel.is_relative() => dir.join(rel),
            _ => rel.to_path_buf(),
        }
    }

    /// Dataset name used when a record carries none: the manifest file stem.
    pub fn default_dataset(&self) -> String {
        self.path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "corpus".to_string())
    }

    pub fn dataset_of(&self, entry: &ManifestEntry) -> String {
        entry.dataset.clone().unwrap_or_else(|| self.default_dataset())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub name: String,
    pub scenes: Vec<SceneAnnotation>,
    pub class_set: BTreeSet<String>,
}

impl Corpus {
    pub fn new(name: impl Into<String>, scenes: Vec<SceneAnnotation>) -> Result<Self> {
        let mut seen = HashSet::new();
        for s in &scenes {
            if !seen.insert(s.image_id.as_str()) {
                return Err(AnnotationError::DuplicateImageId(s.image_id.clone()));
            }
        }
        let class_set = scenes.iter().flat_map(|s| s.boxes.iter().map(|b| b.class_label.clone())).collect();
        Ok(Self { name: name.into(), scenes, class_set })
    }

    pub fn instance_count(&self) -> usize {
        self.scenes.iter().map(|s| s.boxes.len()).sum()
    }

    pub fn boxes(&self) -> impl Iterator<Item = &OrientedBox> {
        self.scenes.iter().flat_map(|s| s.boxes.iter())
    }

    pub fn is_empty(&self) -> bool {
        self.instance_count() == 0
    }
}

fn load_entry(manifest: &Manifest, entry: &ManifestEntry) -> Result<SceneAnnotation> {
    let path = manifest.resolve(&entry.annotation_file);
    let text = match std::fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(AnnotationError::MissingFile(path));
        }
        Err(e) => return Err(AnnotationError::Io(e)),
    };
    let mut scene = parse_dota_obb(&text, &entry.image_id, entry.width, entry.height)
        .map_err(|e| AnnotationError::InFile { path: path.clone(), source: Box::new(e) })?;
    if entry.gsd.is_some() {
        scene.gsd = entry.gsd;
    }
    Ok(scene)
}

/// Parse every annotation file named by `manifest`, in parallel, keeping
/// manifest order. A missing file alone is reported as `MissingFile`; any
/// other failures are collected into `Aggregate`.
pub fn load_scenes(manifest: &Manifest) -> Result<Vec<SceneAnnotation>> {
    let results: Vec<Result<SceneAnnotation>> = manifest.entries.par_iter().map(|e| load_entry(manifest, e)).collect();
    let mut scenes = Vec::with_capacity(results.len());
    let mut errors = Vec::new();
    for r in results {
        match r {
            Ok(s) => scenes.push(s),
            Err(e) => errors.push(e),
        }
    }
    match errors.len() {
        0 => Ok(scenes),
        1 => Err(errors.pop().unwrap()),
        _ => Err(AnnotationError::Aggregate(errors)),
    }
}

/// Load the whole manifest as one corpus named after the manifest file stem.
pub fn load_corpus(manifest_path: impl AsRef<Path>) -> Result<Corpus> {
    let manifest = Manifest::read(manifest_path)?;
    let scenes = load_scenes(&manifest)?;
    Corpus::new(manifest.default_dataset(), scenes)
}

/// Load a manifest split into one corpus per `dataset` tag, in order of
/// first appearance.
pub fn load_datasets(manifest_path: impl AsRef<Path>) -> Result<Vec<Corpus>> {
    let manifest = Manifest::read(manifest_path)?;
    let scenes = load_scenes(&manifest)?;
    // Validates image-id uniqueness across the whole manifest.
    Corpus::new(manifest.default_dataset(), scenes.clone())?;

    let mut groups: Vec<(String, Vec<SceneAnnotation>)> = Vec::new();
    for (entry, scene) in manifest.entries.iter().zip(scenes) {
        let name = manifest.dataset_of(entry);
        match groups.iter_mut().find(|(n, _)| *n == name) {
            Some((_, v)) => v.push(scene),
            None => groups.push((name, vec![scene])),
        }
    }
    groups.into_iter().map(|(name, scenes)| Corpus::new(name, scenes)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_single_box() {
        let s = parse_dota_obb("0 0 10 0 10 4 0 4 ship 0", "a", 100, 100).unwrap();
        assert_eq!(s.boxes.len(), 1);
        let b = &s.boxes[0];
        assert_eq!(
            b.vertices,
            [Point::new(0.0, 0.0), Point::new(10.0, 0.0), Point::new(10.0, 4.0), Point::new(0.0, 4.0)]
        );
        assert_eq!(b.class_label, "ship");
        assert_eq!(b.difficulty, Some(0));
    }

    #[test]
    fn parses_gsd_header() {
        let s = parse_dota_obb("imagesource:GoogleEarth\ngsd:0.5\n0 0 10 0 10 4 0 4 ship 0", "a", 100, 100).unwrap();
        assert_eq!(s.gsd, Some(0.5));
        assert_eq!(s.boxes.len(), 1);
    }

    #[test]
    fn null_gsd_is_none() {
        let s = parse_dota_obb("gsd:null\n", "a", 10, 10).unwrap();
        assert_eq!(s.gsd, None);
    }

    #[test]
    fn zero_area_is_degenerate() {
        let err = parse_dota_obb("0 0 0 0 0 0 0 0 ship 0", "a", 10, 10).unwrap_err();
        assert!(matches!(err, AnnotationError::DegenerateBox(1)));
    }

    #[test]
    fn malformed_lines_report_line_number() {
        let text = "0 0 10 0 10 4 0 4 ship 0\n\n0 0 10 0 10 4 0 ship";
        assert!(matches!(parse_dota_obb(text, "a", 100, 100), Err(AnnotationError::MalformedLine(3))));
        assert!(matches!(
            parse_dota_obb("0 0 1e400 0 10 4 0 4 ship", "a", 100, 100),
            Err(AnnotationError::MalformedLine(1))
        ));
        assert!(matches!(
            parse_dota_obb("0 0 10 0 10 4 0 4 ship hard", "a", 100, 100),
            Err(AnnotationError::MalformedLine(1))
        ));
        assert!(matches!(parse_dota_obb("gsd:abc", "a", 100, 100), Err(AnnotationError::MalformedLine(1))));
    }

    #[test]
    fn difficulty_is_optional() {
        let s = parse_dota_obb("0 0 10 0 10 4 0 4 ship", "a", 100, 100).unwrap();
        assert_eq!(s.boxes[0].difficulty, None);
    }

    #[test]
    fn clamps_by_default_rejects_when_strict() {
        let text = "-1 0 10 0 10 4 0 4 ship 0";
        let (s, rep) = parse_dota_obb_with(text, "a", 8, 8, ParseOptions::default()).unwrap();
        assert_eq!(rep.clamped_vertices, 3);
        assert_eq!(s.boxes[0].vertices[0], Point::new(0.0, 0.0));
        assert_eq!(s.boxes[0].vertices[1], Point::new(8.0, 0.0));
        let strict = ParseOptions { strict_bounds: true };
        assert!(matches!(parse_dota_obb_with(text, "a", 8, 8, strict), Err(AnnotationError::OutOfBounds(1, 8, 8))));
    }

    #[test]
    fn rejects_invalid_scene() {
        assert!(matches!(parse_dota_obb("", "", 10, 10), Err(AnnotationError::InvalidScene(_))));
        assert!(matches!(parse_dota_obb("", "a", 0, 10), Err(AnnotationError::InvalidScene(_))));
    }

    #[test]
    fn serialize_header_only() {
        let mut s = SceneAnnotation::new("a", 10, 10).unwrap();
        s.gsd = Some(0.3);
        assert_eq!(serialize_dota_obb(&s), "gsd:0.3\n");
    }

    #[test]
    fn serialize_one_line() {
        let s = parse_dota_obb("0 0 10 0 10 4 0 4 ship 0", "a", 100, 100).unwrap();
        let text = serialize_dota_obb(&s);
        assert_eq!(text.lines().count(), 1);
        assert_eq!(parse_dota_obb(&text, "a", 100, 100).unwrap(), s);
    }

    #[test]
    fn corpus_rejects_duplicate_ids() {
        let a = SceneAnnotation::new("a", 10, 10).unwrap();
        assert!(matches!(Corpus::new("c", vec![a.clone(), a]), Err(AnnotationError::DuplicateImageId(_))));
    }
}
