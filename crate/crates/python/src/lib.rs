//! Python bindings for `limforge`.
//!
//! Structured reports cross the boundary as plain dicts and lists (built
//! from the core types' JSON form), while the types users hold on to
//! (`OrientedBox`, `Scene`, `Arch`, `Tensor`) are proper classes.

use std::collections::BTreeMap;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyAny;
use serde::Serialize;

use limforge::annotations::{self, SceneAnnotation};
use limforge::geometry::Point;
use limforge::gradcheck::{self, CheckOptions};
use limforge::morphometry::{self, Axis};
use limforge::nn_kernels::{self, GNParams, Tensor4};
use limforge::pyramid_advisor::{self, BarSpec, Placement, RfSource};
use limforge::rf_engine::{self, ArchSpec, ErfConfig};
use limforge::tiler::{self, TileConfig};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Convert any serializable value into native Python objects.
fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(value_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn parse_axis(axis: &str) -> PyResult<Axis> {
    match axis {
        "major" => Ok(Axis::Major),
        "minor" => Ok(Axis::Minor),
        other => Err(value_err(format!("axis must be 'major' or 'minor', got {other:?}"))),
    }
}

fn quad(vertices: [(f64, f64); 4]) -> [Point; 4] {
    vertices.map(|(x, y)| Point::new(x, y))
}

#[pyclass(name = "OrientedBox", module = "limforge_py", from_py_object)]
#[derive(Clone)]
struct PyOrientedBox {
    inner: annotations::OrientedBox,
}

#[pymethods]
impl PyOrientedBox {
    #[new]
    #[pyo3(signature = (vertices, class_label, difficulty = None))]
    fn new(vertices: [(f64, f64); 4], class_label: String, difficulty: Option<i32>) -> Self {
        let mut inner = annotations::OrientedBox::new(quad(vertices), class_label);
        inner.difficulty = difficulty;
        Self { inner }
    }

    #[getter]
    fn vertices(&self) -> Vec<(f64, f64)> {
        self.inner.vertices.iter().map(|p| (p.x, p.y)).collect()
    }

    #[getter]
    fn class_label(&self) -> &str {
        &self.inner.class_label
    }

    #[getter]
    fn difficulty(&self) -> Option<i32> {
        self.inner.difficulty
    }

    fn area(&self) -> f64 {
        self.inner.area()
    }

    /// `(major, minor)` side lengths of the minimum-area enclosing rectangle.
    fn axis_lengths(&self) -> PyResult<(f64, f64)> {
        let a = morphometry::axis_lengths(&self.inner).map_err(value_err)?;
        Ok((a.major, a.minor))
    }

    fn __repr__(&self) -> String {
        format!("OrientedBox({:?}, {:?})", self.vertices(), self.inner.class_label)
    }
}

type WindowBoxes = ((u32, u32), Vec<PyOrientedBox>);

#[pyclass(name = "Scene", module = "limforge_py")]
struct PyScene {
    inner: SceneAnnotation,
}

#[pymethods]
impl PyScene {
    #[getter]
    fn image_id(&self) -> &str {
        &self.inner.image_id
    }

    #[getter]
    fn size(&self) -> (u32, u32) {
        (self.inner.image_width, self.inner.image_height)
    }

    #[getter]
    fn gsd(&self) -> Option<f64> {
        self.inner.gsd
    }

    #[getter]
    fn boxes(&self) -> Vec<PyOrientedBox> {
        self.inner.boxes.iter().cloned().map(|inner| PyOrientedBox { inner }).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.boxes.len()
    }

    /// Serialize back to the text annotation format.
    fn to_text(&self) -> String {
        annotations::serialize_dota_obb(&self.inner)
    }

    /// Window origins and the boxes each window would carry, as
    /// `[((x, y), [OrientedBox, ...]), ...]`.
    #[pyo3(signature = (window = 1024, overlap = 256, min_box_area_ratio = 0.3))]
    fn tile_boxes(&self, window: u32, overlap: u32, min_box_area_ratio: f64) -> PyResult<Vec<WindowBoxes>> {
        let cfg = TileConfig { window, overlap, min_box_area_ratio, ..TileConfig::train() };
        cfg.validate().map_err(value_err)?;
        let s = &self.inner;
        Ok(tiler::tile_origins(s.image_width, s.image_height, &cfg)
            .into_iter()
            .map(|origin| {
                let boxes = s
                    .boxes
                    .iter()
                    .filter_map(|b| tiler::project_box(b, origin, &cfg))
                    .map(|inner| PyOrientedBox { inner })
                    .collect();
                (origin, boxes)
            })
            .collect())
    }
}

/// Parse annotation text for one image.
#[pyfunction]
fn parse_dota_obb(text: &str, image_id: &str, width: u32, height: u32) -> PyResult<PyScene> {
    annotations::parse_dota_obb(text, image_id, width, height).map(|inner| PyScene { inner }).map_err(value_err)
}

/// Load every scene listed in a manifest into a list of `Scene`s.
#[pyfunction]
fn load_scenes(manifest_path: &str) -> PyResult<Vec<PyScene>> {
    let corpus = annotations::load_corpus(manifest_path).map_err(value_err)?;
    Ok(corpus.scenes.into_iter().map(|inner| PyScene { inner }).collect())
}

/// `(major, minor)` for a quadrilateral given as four `(x, y)` pairs.
#[pyfunction]
fn axis_lengths(vertices: [(f64, f64); 4]) -> PyResult<(f64, f64)> {
    let b = annotations::OrientedBox::new(quad(vertices), "");
    let a = morphometry::axis_lengths(&b).map_err(value_err)?;
    Ok((a.major, a.minor))
}

/// Summary statistics of axis-length samples as a dict.
#[pyfunction]
#[pyo3(signature = (samples, axis = "minor"))]
fn axis_stats<'py>(py: Python<'py>, samples: Vec<f64>, axis: &str) -> PyResult<Bound<'py, PyAny>> {
    let s = morphometry::axis_stats(&samples, parse_axis(axis)?).map_err(value_err)?;
    to_py(py, &s)
}

#[pyfunction]
fn occupancy_ratio(minor: f64, stride: f64) -> f64 {
    pyramid_advisor::occupancy_ratio(minor, stride)
}

#[pyclass(name = "Arch", module = "limforge_py", from_py_object)]
#[derive(Clone)]
struct PyArch {
    inner: ArchSpec,
}

#[pymethods]
impl PyArch {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        ArchSpec::from_json(text).map(|inner| Self { inner }).map_err(value_err)
    }

    #[staticmethod]
    fn from_path(path: &str) -> PyResult<Self> {
        ArchSpec::from_path(path).map(|inner| Self { inner }).map_err(value_err)
    }

    /// The bundled reference backbone.
    #[staticmethod]
    fn bundled() -> Self {
        Self { inner: rf_engine::bundled_arch() }
    }

    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    /// Tap names ordered by stride.
    fn levels(&self) -> Vec<String> {
        self.inner.levels_by_stride().into_iter().map(|(n, _)| n).collect()
    }

    /// `(trf, stride)` in input pixels.
    fn trf_and_stride(&self, level: &str) -> PyResult<(f64, f64)> {
        let g = rf_engine::trf_and_stride(&self.inner, level).map_err(value_err)?;
        Ok((g.trf_px(), g.stride_px()))
    }

    /// Width of the nonzero gradient region of the centre output unit.
    fn gradient_support(&self, level: &str, input_size: usize) -> PyResult<u64> {
        rf_engine::gradient_support(&self.inner, level, input_size).map_err(value_err)
    }

    /// Effective receptive field measurement; returns a dict with the
    /// `RFResult` fields plus `center` and the averaged gradient `map`.
    #[pyo3(signature = (level, draws = 64, mass = 0.95, input_size = 64, seed = 42, deterministic = false, channel_cap = 4))]
    #[allow(clippy::too_many_arguments)]
    fn erf<'py>(
        &self,
        py: Python<'py>,
        level: &str,
        draws: usize,
        mass: f64,
        input_size: usize,
        seed: u64,
        deterministic: bool,
        channel_cap: u32,
    ) -> PyResult<Bound<'py, PyAny>> {
        let cfg = ErfConfig { input_size, draws, mass, seed, deterministic, channel_cap };
        let est = rf_engine::erf_estimate(&self.inner, level, &cfg).map_err(value_err)?;
        let out = to_py(py, &est.result)?;
        out.set_item("center", est.center)?;
        let rows: Vec<Vec<f64>> = est.map.data.chunks(est.map.size).map(<[f64]>::to_vec).collect();
        out.set_item("map", rows)?;
        Ok(out)
    }
}

/// Occupancy audit and level recommendation from raw axis samples.
#[pyfunction]
#[pyo3(signature = (minor, major, arch, image_size = 1024, erf = None))]
fn recommend_levels<'py>(
    py: Python<'py>,
    minor: Vec<f64>,
    major: Vec<f64>,
    arch: &PyArch,
    image_size: u32,
    erf: Option<BTreeMap<String, f64>>,
) -> PyResult<Bound<'py, PyAny>> {
    let minor_stats = morphometry::axis_stats(&minor, Axis::Minor).map_err(value_err)?;
    let major_stats = morphometry::axis_stats(&major, Axis::Major).map_err(value_err)?;
    let source = if erf.is_some() { RfSource::Erf } else { RfSource::Trf };
    let report =
        pyramid_advisor::recommend_levels(&minor_stats, &major_stats, &arch.inner, image_size, source, erf.as_ref());
    to_py(py, &report)
}

/// Strongest average-pooled cell value for a rasterised bar.
#[pyfunction]
#[pyo3(signature = (width, stride, length = 128.0, angle_deg = 0.0, canvas = 512, centered = false))]
fn simulate_dilution<'py>(
    py: Python<'py>,
    width: f64,
    stride: u32,
    length: f64,
    angle_deg: f64,
    canvas: u32,
    centered: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let placement = if centered { Placement::Centered } else { Placement::GridAligned };
    let spec = BarSpec { width, length, angle_deg, stride, canvas, placement };
    let r = pyramid_advisor::simulate_dilution(&spec).map_err(value_err)?;
    to_py(py, &r)
}

#[pyfunction]
#[pyo3(signature = (width, height, window = 1024, overlap = 256))]
fn tile_origins(width: u32, height: u32, window: u32, overlap: u32) -> PyResult<Vec<(u32, u32)>> {
    let cfg = TileConfig { window, overlap, ..TileConfig::train() };
    cfg.validate().map_err(value_err)?;
    Ok(tiler::tile_origins(width, height, &cfg))
}

/// NCHW tensor of `f64`.
#[pyclass(name = "Tensor", module = "limforge_py")]
struct PyTensor {
    inner: Tensor4,
}

#[pymethods]
impl PyTensor {
    #[new]
    fn new(shape: [usize; 4], data: Vec<f64>) -> PyResult<Self> {
        Tensor4::new(shape, data).map(|inner| Self { inner }).map_err(value_err)
    }

    /// Uniform random values from a seeded generator.
    #[staticmethod]
    fn seeded(shape: [usize; 4], seed: u64) -> Self {
        Self { inner: Tensor4::seeded(shape, seed) }
    }

    #[getter]
    fn shape(&self) -> [usize; 4] {
        self.inner.shape()
    }

    fn tolist(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }

    fn max_abs_diff(&self, other: &PyTensor) -> PyResult<f64> {
        if self.inner.shape() != other.inner.shape() {
            return Err(value_err("shape mismatch"));
        }
        Ok(self.inner.max_abs_diff(&other.inner))
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Group normalization forward pass with γ = 1, β = 0.
#[pyfunction]
#[pyo3(signature = (x, groups = 32, eps = 1e-5))]
fn gn_forward(x: &PyTensor, groups: usize, eps: f64) -> PyResult<PyTensor> {
    let c = x.inner.shape()[1];
    let p = GNParams { eps, ..GNParams::identity(c).with_groups(groups) };
    let (y, _) = nn_kernels::gn_forward(&x.inner, &p).map_err(value_err)?;
    Ok(PyTensor { inner: y })
}

/// Gradient checks plus the batch-independence experiment; returns the
/// report as a dict with a boolean `passed`.
#[pyfunction]
#[pyo3(signature = (seed = 42))]
fn run_gncheck<'py>(py: Python<'py>, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let report = gradcheck::run_gncheck(seed, CheckOptions::default());
    to_py(py, &report)
}

#[pymodule]
fn limforge_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyOrientedBox>()?;
    m.add_class::<PyScene>()?;
    m.add_class::<PyArch>()?;
    m.add_class::<PyTensor>()?;
    m.add_function(wrap_pyfunction!(parse_dota_obb, m)?)?;
    m.add_function(wrap_pyfunction!(load_scenes, m)?)?;
    m.add_function(wrap_pyfunction!(axis_lengths, m)?)?;
    m.add_function(wrap_pyfunction!(axis_stats, m)?)?;
    m.add_function(wrap_pyfunction!(occupancy_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(recommend_levels, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_dilution, m)?)?;
    m.add_function(wrap_pyfunction!(tile_origins, m)?)?;
    m.add_function(wrap_pyfunction!(gn_forward, m)?)?;
    m.add_function(wrap_pyfunction!(run_gncheck, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_names() {
        assert_eq!(parse_axis("major").unwrap(), Axis::Major);
        assert_eq!(parse_axis("minor").unwrap(), Axis::Minor);
    }

    #[test]
    fn quad_keeps_vertex_order() {
        let q = quad([(0.0, 0.0), (4.0, 0.0), (4.0, 1.0), (0.0, 1.0)]);
        assert_eq!(q[2], Point::new(4.0, 1.0));
    }
}
