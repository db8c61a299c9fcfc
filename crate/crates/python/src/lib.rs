//! Python bindings. Masks, grids and annotation sets are immutable wrappers
//! around the core types; operations return new objects.

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;

use hiermask::config::{parse_config, PipelineConfig};
use hiermask::conquer::PartMask;
use hiermask::pipeline::{run_image, ImageJob};
use hiermask::postprocess::IdentityRefiner;

fn err(e: hiermask::Error) -> PyErr {
    match e {
        hiermask::Error::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

#[pyclass(name = "BinaryMask", module = "hiermask", frozen, eq, skip_from_py_object)]
#[derive(Clone, PartialEq)]
struct PyBinaryMask(hiermask::BinaryMask);

#[pymethods]
impl PyBinaryMask {
    /// `bitmap` is row-major, `height * width` booleans. Omitted means empty.
    #[new]
    #[pyo3(signature = (height, width, bitmap=None))]
    fn new(height: u32, width: u32, bitmap: Option<Vec<bool>>) -> PyResult<Self> {
        match bitmap {
            Some(bits) => hiermask::BinaryMask::from_bitmap(height, width, &bits).map(Self).map_err(err),
            None => Ok(Self(hiermask::BinaryMask::empty(height, width))),
        }
    }

    /// Column-major run lengths starting with background.
    #[staticmethod]
    fn from_counts(height: u32, width: u32, counts: Vec<u32>) -> PyResult<Self> {
        hiermask::BinaryMask::from_counts(height, width, &counts).map(Self).map_err(err)
    }

    #[getter]
    fn height(&self) -> u32 {
        self.0.height()
    }

    #[getter]
    fn width(&self) -> u32 {
        self.0.width()
    }

    #[getter]
    fn counts(&self) -> Vec<u32> {
        self.0.counts().to_vec()
    }

    #[getter]
    fn area(&self) -> u64 {
        self.0.area()
    }

    fn to_bitmap(&self) -> Vec<bool> {
        self.0.to_bitmap()
    }

    fn contains(&self, x: u32, y: u32) -> PyResult<bool> {
        self.0.contains_point(x, y).map_err(err)
    }

    /// `(x, y)` prompt point.
    fn center_point(&self) -> PyResult<(u32, u32)> {
        self.0.center_point().map_err(err)
    }

    /// `(x1, y1, x2, y2)` with exclusive upper corner.
    fn bbox(&self) -> PyResult<(u32, u32, u32, u32)> {
        let b = self.0.bbox().map_err(err)?;
        Ok((b.x1, b.y1, b.x2, b.y2))
    }

    fn iou(&self, other: &PyBinaryMask) -> PyResult<f64> {
        hiermask::iou(&self.0, &other.0).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("BinaryMask({}x{}, area={})", self.0.height(), self.0.width(), self.0.area())
    }
}

#[pyclass(name = "FeatureGrid", module = "hiermask", frozen, eq, skip_from_py_object)]
#[derive(Clone, PartialEq)]
struct PyFeatureGrid(hiermask::FeatureGrid);

#[pymethods]
impl PyFeatureGrid {
    /// `data` is row-major over patches, `dim` floats per patch.
    #[new]
    fn new(gh: usize, gw: usize, dim: usize, patch_size: u32, data: Vec<f32>) -> PyResult<Self> {
        hiermask::FeatureGrid::new(gh, gw, dim, patch_size, data).map(Self).map_err(err)
    }

    #[getter]
    fn gh(&self) -> usize {
        self.0.gh()
    }

    #[getter]
    fn gw(&self) -> usize {
        self.0.gw()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn patch_size(&self) -> u32 {
        self.0.patch_size()
    }

    #[getter]
    fn pixel_height(&self) -> u32 {
        self.0.pixel_height()
    }

    #[getter]
    fn pixel_width(&self) -> u32 {
        self.0.pixel_width()
    }

    fn data(&self) -> Vec<f32> {
        self.0.data().to_vec()
    }

    fn feature(&self, index: usize) -> PyResult<Vec<f32>> {
        if index >= self.0.len() {
            return Err(PyValueError::new_err(format!("patch {index} out of range")));
        }
        Ok(self.0.feature(index).to_vec())
    }

    fn crop(&self, bbox: (u32, u32, u32, u32), side: u32, local_patch: u32) -> PyResult<Self> {
        let b = hiermask::BBox::new(bbox.0, bbox.1, bbox.2, bbox.3).map_err(err)?;
        self.0.crop(&b, side, local_patch).map(Self).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "FeatureGrid({}x{} patches, dim={}, patch_size={})",
            self.0.gh(),
            self.0.gw(),
            self.0.dim(),
            self.0.patch_size()
        )
    }
}

#[pyclass(name = "ScoredMask", module = "hiermask", frozen, eq, skip_from_py_object)]
#[derive(Clone, PartialEq)]
struct PyScoredMask(hiermask::ScoredMask);

#[pymethods]
impl PyScoredMask {
    #[new]
    #[pyo3(signature = (id, mask, score, level=0, parent_id=None, provenance=None))]
    fn new(
        id: u64,
        mask: &PyBinaryMask,
        score: f64,
        level: u32,
        parent_id: Option<u64>,
        provenance: Option<String>,
    ) -> PyResult<Self> {
        let mut m = hiermask::ScoredMask::new(hiermask::MaskId(id), mask.0.clone(), score);
        m.level = level;
        m.parent_id = parent_id.map(hiermask::MaskId);
        m.provenance = provenance;
        m.validate().map_err(err)?;
        Ok(Self(m))
    }

    #[getter]
    fn id(&self) -> u64 {
        self.0.id.0
    }

    #[getter]
    fn mask(&self) -> PyBinaryMask {
        PyBinaryMask(self.0.mask.clone())
    }

    #[getter]
    fn score(&self) -> f64 {
        self.0.score
    }

    #[getter]
    fn level(&self) -> u32 {
        self.0.level
    }

    #[getter]
    fn parent_id(&self) -> Option<u64> {
        self.0.parent_id.map(|p| p.0)
    }

    #[getter]
    fn provenance(&self) -> Option<String> {
        self.0.provenance.clone()
    }

    fn __repr__(&self) -> String {
        format!(
            "ScoredMask(id={}, score={}, level={}, area={})",
            self.0.id,
            self.0.score,
            self.0.level,
            self.0.area()
        )
    }
}

fn unwrap_masks(masks: &[PyRef<'_, PyScoredMask>]) -> Vec<hiermask::ScoredMask> {
    masks.iter().map(|m| m.0.clone()).collect()
}

fn wrap_masks(masks: Vec<hiermask::ScoredMask>) -> Vec<PyScoredMask> {
    masks.into_iter().map(PyScoredMask).collect()
}

#[pyclass(name = "AnnotationSet", module = "hiermask", frozen, eq, skip_from_py_object)]
#[derive(Clone, PartialEq)]
struct PyAnnotationSet(hiermask::AnnotationSet);

#[pymethods]
impl PyAnnotationSet {
    #[new]
    #[pyo3(signature = (image_id, height, width, masks=Vec::new()))]
    fn new(image_id: String, height: u32, width: u32, masks: Vec<PyRef<'_, PyScoredMask>>) -> PyResult<Self> {
        let set = hiermask::AnnotationSet::new(image_id, height, width).with_masks(unwrap_masks(&masks));
        set.validate().map_err(err)?;
        Ok(Self(set))
    }

    #[getter]
    fn image_id(&self) -> String {
        self.0.image_id.clone()
    }

    #[getter]
    fn height(&self) -> u32 {
        self.0.height
    }

    #[getter]
    fn width(&self) -> u32 {
        self.0.width
    }

    #[getter]
    fn masks(&self) -> Vec<PyScoredMask> {
        wrap_masks(self.0.masks.clone())
    }

    fn __len__(&self) -> usize {
        self.0.masks.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "AnnotationSet({:?}, {}x{}, {} masks)",
            self.0.image_id,
            self.0.height,
            self.0.width,
            self.0.masks.len()
        )
    }
}

#[pyclass(name = "Hierarchy", module = "hiermask", frozen)]
struct PyHierarchy(hiermask::Hierarchy);

#[pymethods]
impl PyHierarchy {
    #[getter]
    fn parent(&self) -> PyScoredMask {
        PyScoredMask(self.0.parent.clone())
    }

    #[getter]
    fn depth(&self) -> usize {
        self.0.depth()
    }

    #[getter]
    fn thetas(&self) -> Vec<f64> {
        self.0.thetas.clone()
    }

    /// Patch-index lists of every cluster, coarsest level first.
    #[getter]
    fn levels(&self) -> Vec<Vec<Vec<usize>>> {
        self.0
            .levels
            .iter()
            .map(|l| l.iter().map(|c| c.patches.clone()).collect())
            .collect()
    }

    /// `(level, cluster_id, mask, score)` per cluster, masks in image
    /// coordinates.
    fn part_masks(&self) -> PyResult<Vec<(u32, usize, PyBinaryMask, f64)>> {
        let parent = &self.0.parent.mask;
        let (h, w) = (parent.height(), parent.width());
        self.0
            .part_masks()
            .into_iter()
            .map(|PartMask { level, cluster_id, mask, score }| {
                let global = self.0.geometry.to_global(&mask, h, w)?.intersect(parent)?;
                Ok((level, cluster_id, PyBinaryMask(global), score))
            })
            .collect::<hiermask::Result<_>>()
            .map_err(err)
    }
}

#[pyfunction]
fn iou(a: &PyBinaryMask, b: &PyBinaryMask) -> PyResult<f64> {
    hiermask::iou(&a.0, &b.0).map_err(err)
}

/// Iterated normalised cuts on a feature grid.
#[pyfunction]
#[pyo3(signature = (grid, t_max=3, tau_ncut=0.15, epsilon=1e-5, min_patches=2))]
fn maskcut(grid: &PyFeatureGrid, t_max: usize, tau_ncut: f64, epsilon: f64, min_patches: usize) -> PyResult<Vec<PyScoredMask>> {
    let opts = hiermask::MaskCutOptions {
        t_max,
        tau_ncut,
        epsilon,
        min_patches,
        ..Default::default()
    };
    hiermask::maskcut(&grid.0, &opts).map(wrap_masks).map_err(err)
}

/// Coarse masks scoring above `tau`, from `grid` or from `proposals`.
#[pyfunction]
#[pyo3(signature = (grid=None, proposals=None, tau=0.3))]
fn divide(grid: Option<&PyFeatureGrid>, proposals: Option<&PyAnnotationSet>, tau: f64) -> PyResult<Vec<PyScoredMask>> {
    let opts = hiermask::MaskCutOptions::default();
    let input = match (grid, proposals) {
        (_, Some(p)) => hiermask::DivideInput::Proposals(&p.0),
        (Some(g), None) => hiermask::DivideInput::Features(&g.0, &opts),
        (None, None) => return Err(PyValueError::new_err("need a grid or proposals")),
    };
    hiermask::divide_stage(input, tau).map(wrap_masks).map_err(err)
}

/// Hierarchy of `parent` from the feature grid of its crop.
#[pyfunction]
#[pyo3(signature = (parent, grid, thetas=vec![0.6, 0.5, 0.4, 0.3, 0.2, 0.1]))]
fn conquer(parent: &PyScoredMask, grid: &PyFeatureGrid, thetas: Vec<f64>) -> PyResult<PyHierarchy> {
    hiermask::conquer(&parent.0, &grid.0, &thetas).map(PyHierarchy).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (masks, iou_thresh=0.9))]
fn nms(masks: Vec<PyRef<'_, PyScoredMask>>, iou_thresh: f64) -> PyResult<Vec<PyScoredMask>> {
    hiermask::nms(&unwrap_masks(&masks), iou_thresh).map(wrap_masks).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (pseudo, predictions, tau_self_train=0.7, dedup_iou=0.5))]
fn self_train_merge(
    pseudo: &PyAnnotationSet,
    predictions: &PyAnnotationSet,
    tau_self_train: f64,
    dedup_iou: f64,
) -> PyResult<PyAnnotationSet> {
    hiermask::self_train_merge(&pseudo.0, &predictions.0, tau_self_train, dedup_iou)
        .map(PyAnnotationSet)
        .map_err(err)
}

#[pyfunction]
#[pyo3(signature = (gt, unsup, tau_plus=0.02))]
fn fuse(gt: &PyAnnotationSet, unsup: &PyAnnotationSet, tau_plus: f64) -> PyResult<PyAnnotationSet> {
    hiermask::unsam_plus_fuse(&gt.0, &unsup.0, tau_plus)
        .map(PyAnnotationSet)
        .map_err(err)
}

fn unwrap_sets(sets: &[PyRef<'_, PyAnnotationSet>]) -> Vec<hiermask::AnnotationSet> {
    sets.iter().map(|s| s.0.clone()).collect()
}

/// Evaluation report as a dict.
#[pyfunction]
#[pyo3(signature = (preds, gts, max_dets=1000, k_point=6))]
fn evaluate<'py>(
    py: Python<'py>,
    preds: Vec<PyRef<'py, PyAnnotationSet>>,
    gts: Vec<PyRef<'py, PyAnnotationSet>>,
    max_dets: usize,
    k_point: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let report =
        hiermask::eval::evaluate(&unwrap_sets(&preds), &unwrap_sets(&gts), max_dets, k_point).map_err(err)?;
    let json = serde_json::to_string(&report).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (json,))
}

/// Full pipeline on one image. `config` is TOML text; omitted keys take
/// their defaults.
#[pyfunction]
#[pyo3(signature = (image_id, grid, config=None, proposals=None))]
fn run_pipeline(
    image_id: String,
    grid: &PyFeatureGrid,
    config: Option<&str>,
    proposals: Option<&PyAnnotationSet>,
) -> PyResult<PyAnnotationSet> {
    let cfg = match config {
        Some(text) => parse_config(text).map_err(err)?,
        None => PipelineConfig::default(),
    };
    let mut job = ImageJob::new(image_id, grid.0.clone());
    job.proposals = proposals.map(|p| p.0.clone());
    run_image(&job, &cfg, &IdentityRefiner)
        .map(|o| PyAnnotationSet(o.set))
        .map_err(err)
}

#[pyfunction]
fn read_feature_grid(path: std::path::PathBuf) -> PyResult<PyFeatureGrid> {
    hiermask::io::read_feature_grid(path).map(PyFeatureGrid).map_err(err)
}

#[pyfunction]
fn write_feature_grid(path: std::path::PathBuf, grid: &PyFeatureGrid) -> PyResult<()> {
    hiermask::io::write_feature_grid(path, &grid.0).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (image_id, mask_id=None))]
fn feature_file_name(image_id: &str, mask_id: Option<u64>) -> String {
    hiermask::io::feature_file_name(image_id, mask_id.map(hiermask::MaskId))
}

#[pyfunction]
fn read_annotation_sets(path: std::path::PathBuf) -> PyResult<Vec<PyAnnotationSet>> {
    hiermask::io::read_annotation_sets(path)
        .map(|v| v.into_iter().map(PyAnnotationSet).collect())
        .map_err(err)
}

#[pyfunction]
fn write_annotation_sets(path: std::path::PathBuf, sets: Vec<PyRef<'_, PyAnnotationSet>>) -> PyResult<()> {
    hiermask::io::write_annotation_sets(path, &unwrap_sets(&sets)).map_err(err)
}

#[pymodule(name = "hiermask")]
fn hiermask_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBinaryMask>()?;
    m.add_class::<PyFeatureGrid>()?;
    m.add_class::<PyScoredMask>()?;
    m.add_class::<PyAnnotationSet>()?;
    m.add_class::<PyHierarchy>()?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(maskcut, m)?)?;
    m.add_function(wrap_pyfunction!(divide, m)?)?;
    m.add_function(wrap_pyfunction!(conquer, m)?)?;
    m.add_function(wrap_pyfunction!(nms, m)?)?;
    m.add_function(wrap_pyfunction!(self_train_merge, m)?)?;
    m.add_function(wrap_pyfunction!(fuse, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(read_feature_grid, m)?)?;
    m.add_function(wrap_pyfunction!(write_feature_grid, m)?)?;
    m.add_function(wrap_pyfunction!(feature_file_name, m)?)?;
    m.add_function(wrap_pyfunction!(read_annotation_sets, m)?)?;
    m.add_function(wrap_pyfunction!(write_annotation_sets, m)?)?;
    Ok(())
}
