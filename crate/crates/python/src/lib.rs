//! Python bindings: points, encoders, trained models, synthetic data, metrics
//! and the command-line entry point.

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sphere2vec::data::{self, Dataset, ObservationRecord};
use sphere2vec::nnet::{self, Arch};
use sphere2vec::training::{self, LossConfig, TrainConfig};
use sphere2vec::{eval, geometry, Variant};

fn to_py(e: sphere2vec::Error) -> PyErr {
    let msg = format!("{}: {}", e.code(), e);
    match e {
        sphere2vec::Error::Io { .. } => PyOSError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for sphere2vec::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

/// A point on the unit sphere, stored in radians.
#[pyclass(name = "SphericalPoint", frozen, skip_from_py_object)]
#[derive(Clone, Copy)]
struct PyPoint(sphere2vec::SphericalPoint);

#[pymethods]
#[allow(clippy::wrong_self_convention)]
impl PyPoint {
    #[new]
    fn new(lon: f64, lat: f64) -> PyResult<Self> {
        geometry::make_point(lon, lat).py().map(Self)
    }

    #[staticmethod]
    fn from_degrees(lon_deg: f64, lat_deg: f64) -> PyResult<Self> {
        data::point_from_degrees(lon_deg, lat_deg).py().map(Self)
    }

    #[getter]
    fn lon(&self) -> f64 {
        self.0.lon()
    }

    #[getter]
    fn lat(&self) -> f64 {
        self.0.lat()
    }

    fn to_degrees(&self) -> (f64, f64) {
        data::point_to_degrees(&self.0)
    }

    fn to_unit_vector(&self) -> [f64; 3] {
        self.0.to_unit_vector()
    }

    fn __repr__(&self) -> String {
        format!("SphericalPoint(lon={}, lat={})", self.0.lon(), self.0.lat())
    }
}

#[pyfunction]
fn central_angle(a: PyRef<'_, PyPoint>, b: PyRef<'_, PyPoint>) -> f64 {
    geometry::central_angle(&a.0, &b.0)
}

#[pyfunction]
#[pyo3(signature = (a, b, radius = 1.0))]
fn great_circle_distance(a: PyRef<'_, PyPoint>, b: PyRef<'_, PyPoint>, radius: f64) -> PyResult<f64> {
    geometry::great_circle_distance(&a.0, &b.0, radius).py()
}

/// Position encoder configuration.
#[pyclass(name = "EncoderSpec", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySpec(sphere2vec::EncoderSpec);

#[pymethods]
impl PySpec {
    #[new]
    #[pyo3(signature = (variant, scales, r_min, r_max = 1.0))]
    fn new(variant: &str, scales: usize, r_min: f64, r_max: f64) -> PyResult<Self> {
        let variant: Variant = variant.parse().py()?;
        sphere2vec::EncoderSpec::new(variant, scales, r_min)
            .and_then(|s| s.with_r_max(r_max))
            .py()
            .map(Self)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        serde_json::from_str(text)
            .map_err(|e| PyValueError::new_err(e.to_string()))
            .map(Self)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.0).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[getter]
    fn variant(&self) -> &'static str {
        self.0.variant().name()
    }

    #[getter]
    fn scales(&self) -> usize {
        self.0.scales()
    }

    #[getter]
    fn output_dim(&self) -> usize {
        self.0.output_dim()
    }

    fn scale_factors(&self) -> Vec<f64> {
        sphere2vec::encoders::scale_factors(&self.0)
    }

    fn encode(&self, point: PyRef<'_, PyPoint>) -> Vec<f64> {
        self.0.encode(&point.0).into_vec()
    }

    fn encode_degrees(&self, lon_deg: f64, lat_deg: f64) -> PyResult<Vec<f64>> {
        let p = data::point_from_degrees(lon_deg, lat_deg).py()?;
        Ok(self.0.encode(&p).into_vec())
    }

    fn __repr__(&self) -> String {
        format!(
            "EncoderSpec(variant={:?}, scales={}, r_min={}, r_max={})",
            self.0.variant().name(),
            self.0.scales(),
            self.0.r_min(),
            self.0.r_max()
        )
    }
}

/// Labelled observations with a declared class count.
#[pyclass(name = "Dataset", frozen)]
struct PyDataset(Dataset);

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn load_csv(path: &str) -> PyResult<Self> {
        data::load_csv(path).py().map(Self)
    }

    #[staticmethod]
    fn from_records(num_classes: usize, records: Vec<(String, f64, f64, usize)>) -> PyResult<Self> {
        let records = records
            .into_iter()
            .map(|(sample_id, lon, lat, class_id)| {
                Ok(ObservationRecord {
                    sample_id,
                    point: data::point_from_degrees(lon, lat).py()?,
                    class_id,
                })
            })
            .collect::<PyResult<Vec<_>>>()?;
        Ok(Self(Dataset { num_classes, records }))
    }

    fn save_csv(&self, path: &str) -> PyResult<()> {
        data::save_csv(&self.0, path).py()
    }

    fn to_csv(&self) -> PyResult<String> {
        data::to_csv_string(&self.0).py()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.0.num_classes
    }

    fn records(&self) -> Vec<(String, f64, f64, usize)> {
        self.0
            .records
            .iter()
            .map(|r| {
                let (lon, lat) = data::point_to_degrees(&r.point);
                (r.sample_id.clone(), lon, lat, r.class_id)
            })
            .collect()
    }

    fn labels(&self) -> Vec<usize> {
        self.0.labels()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

/// Synthetic train/test split from a named vMF preset (`antipodal` or `polar`).
#[pyfunction]
#[pyo3(signature = (preset, points_per_class = None, seed = 0))]
fn synth(preset: &str, points_per_class: Option<usize>, seed: u64) -> PyResult<(PyDataset, PyDataset)> {
    let spec = data::synthetic_preset(preset, points_per_class).py()?;
    let (train, test) = data::synth_vmf_dataset(&spec, &mut ChaCha8Rng::seed_from_u64(seed)).py()?;
    Ok((PyDataset(train), PyDataset(test)))
}

/// A trained geo-prior and its training record.
#[pyclass(name = "Model", frozen)]
struct PyModel {
    checkpoint: nnet::Checkpoint,
    model: nnet::LocationModel,
}

impl PyModel {
    fn from_checkpoint(checkpoint: nnet::Checkpoint) -> PyResult<Self> {
        let model = checkpoint.to_model().py()?;
        Ok(Self { checkpoint, model })
    }

    fn points(lon_lat_deg: &[(f64, f64)]) -> PyResult<Vec<sphere2vec::SphericalPoint>> {
        lon_lat_deg
            .iter()
            .map(|&(lon, lat)| data::point_from_degrees(lon, lat).py())
            .collect()
    }
}

fn rows(a: ndarray::Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Self::from_checkpoint(nnet::Checkpoint::from_json(text).py()?)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PyOSError::new_err(format!("{path}: {e}")))?;
        Self::from_json(&text)
    }

    fn to_json(&self) -> PyResult<String> {
        self.checkpoint.to_json().py()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.model.num_classes()
    }

    #[getter]
    fn encoder(&self) -> PySpec {
        PySpec(self.model.encoder.clone())
    }

    #[getter]
    fn loss_history(&self) -> Vec<f64> {
        self.checkpoint.loss_history.clone()
    }

    /// Per-class priors for `(lon_deg, lat_deg)` pairs.
    fn geo_prior(&self, lon_lat_deg: Vec<(f64, f64)>) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows(eval::geo_priors(&self.model, &Self::points(&lon_lat_deg)?)))
    }

    fn embed(&self, lon_lat_deg: Vec<(f64, f64)>) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows(self.model.embed(&Self::points(&lon_lat_deg)?)))
    }

    /// Location-only MRR on a labelled dataset.
    fn mrr(&self, dataset: PyRef<'_, PyDataset>) -> PyResult<f64> {
        let priors = eval::geo_priors(&self.model, &dataset.0.points());
        eval::mrr(&eval::rankings_from_scores(priors.view()), &dataset.0.labels()).py()
    }

    fn cluster(&self, grid_step_deg: f64, n_clusters: usize) -> PyResult<Vec<(f64, f64, usize)>> {
        let cells = eval::cluster_embeddings(&self.model, grid_step_deg, n_clusters).py()?;
        Ok(cells.into_iter().map(|c| (c.lon_deg, c.lat_deg, c.label)).collect())
    }
}

/// Trains a geo-prior on `dataset`; unset options use the library defaults.
#[pyfunction]
#[pyo3(signature = (
    dataset, encoder, hidden_layers = 1, hidden_dim = 1024, embed_dim = None, beta = None,
    negatives_per_positive = 1, learning_rate = 1e-3, epochs = 30, batch_size = 512, seed = 0
))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    dataset: PyRef<'_, PyDataset>,
    encoder: PyRef<'_, PySpec>,
    hidden_layers: usize,
    hidden_dim: usize,
    embed_dim: Option<usize>,
    beta: Option<f64>,
    negatives_per_positive: usize,
    learning_rate: f64,
    epochs: usize,
    batch_size: usize,
    seed: u64,
) -> PyResult<PyModel> {
    let c = dataset.0.num_classes;
    let arch = Arch {
        h: hidden_layers,
        k: hidden_dim,
        d: embed_dim.unwrap_or(hidden_dim),
        c,
    };
    let loss = LossConfig {
        beta: beta.unwrap_or(c as f64),
        negatives_per_positive,
    };
    let cfg = TrainConfig {
        learning_rate,
        epochs,
        batch_size,
        seed,
        ..TrainConfig::default()
    };
    let records = dataset.0.records.clone();
    let spec = encoder.0.clone();
    let checkpoint = py
        .detach(|| training::train(&records, c, &spec, arch, &loss, &cfg))
        .py()?;
    PyModel::from_checkpoint(checkpoint)
}

#[pyfunction]
fn rank_descending(scores: Vec<f64>) -> Vec<usize> {
    eval::rank_descending(&scores)
}

#[pyfunction]
fn combine_with_image(prior: Vec<f64>, image_probs: Vec<f64>) -> PyResult<Vec<usize>> {
    eval::combine_with_image(&prior, &image_probs).py()
}

#[pyfunction]
fn mrr(rankings: Vec<Vec<usize>>, labels: Vec<usize>) -> PyResult<f64> {
    eval::mrr(&rankings, &labels).py()
}

/// Runs the command line with `args` (without the program name) and returns its stdout.
#[pyfunction]
fn run_cli(args: Vec<String>) -> PyResult<String> {
    let mut out = Vec::new();
    sphere2vec::cli::run(std::iter::once("sphere2vec".to_string()).chain(args), &mut out).py()?;
    String::from_utf8(out).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pymodule]
fn sphere2vec_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPoint>()?;
    m.add_class::<PySpec>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(central_angle, m)?)?;
    m.add_function(wrap_pyfunction!(great_circle_distance, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(rank_descending, m)?)?;
    m.add_function(wrap_pyfunction!(combine_with_image, m)?)?;
    m.add_function(wrap_pyfunction!(mrr, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    m.add(
        "VARIANTS",
        Variant::ALL.iter().map(|v| v.name()).collect::<Vec<_>>(),
    )?;
    Ok(())
}
