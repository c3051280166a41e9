//! Python bindings for the concept bootstrapping lab.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use pcb_core::active_query::{run_active_loop, ActiveLoopConfig, QuerySource, QueryStrategy, StrategyKind};
use pcb_core::cem::CemConfig;
use pcb_core::experiment::{self, ExperimentConfig};
use pcb_core::nets::{ModelFile, Network};
use pcb_core::oracle::ConceptId;
use pcb_core::scene::{Catalog, PointCloudObservation, RenderConfig, SceneState, Workspace};
use pcb_core::{seed, Error};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn concept(name: &str) -> PyResult<ConceptId> {
    name.parse().map_err(py_err)
}

/// Names of the nine spatial concepts.
#[pyfunction]
fn concepts() -> Vec<&'static str> {
    ConceptId::ALL.iter().map(|c| c.name()).collect()
}

/// Simulator state: two objects and a camera.
#[pyclass(name = "Scene", module = "pcb_py", frozen)]
struct PyScene(SceneState);

#[pymethods]
impl PyScene {
    /// Random scene whose objects are applicable to `concept`.
    #[staticmethod]
    #[pyo3(signature = (concept_name, seed = 0))]
    fn sample(concept_name: &str, seed: u64) -> PyResult<Self> {
        let c = concept(concept_name)?;
        let mut rng = seed::rng(seed);
        pcb_core::scene::sample_scene(&Catalog::primitives(), &Workspace::default(), c, &mut rng)
            .map(Self)
            .map_err(py_err)
    }

    /// Scene built to demonstrate (`label = 1`) or violate `concept`.
    #[staticmethod]
    #[pyo3(signature = (concept_name, label, seed = 0))]
    fn demo(concept_name: &str, label: u8, seed: u64) -> PyResult<Self> {
        let c = concept(concept_name)?;
        let mut rng = seed::rng(seed);
        pcb_core::oracle::demo_scene(c, &Catalog::primitives(), &Workspace::default(), label, &mut rng)
            .map(Self)
            .map_err(py_err)
    }

    #[staticmethod]
    fn from_flat(values: Vec<f64>) -> PyResult<Self> {
        SceneState::from_flat(&values).map(Self).map_err(py_err)
    }

    fn to_flat(&self) -> Vec<f64> {
        self.0.to_flat().to_vec()
    }

    fn concept_value(&self, concept_name: &str) -> PyResult<f64> {
        pcb_core::oracle::concept_value(concept(concept_name)?, &self.0).map_err(py_err)
    }

    fn true_label(&self, concept_name: &str) -> PyResult<u8> {
        pcb_core::oracle::true_label(concept(concept_name)?, &self.0).map_err(py_err)
    }

    fn privileged_features(&self) -> Vec<f64> {
        pcb_core::scene::privileged_features(&self.0).features.to_vec()
    }

    /// Segmented point cloud in the camera frame as `[x, y, z, segment]`
    /// rows (segment 0 = anchor, 1 = moving).
    #[pyo3(signature = (points_per_object = 256, seed = 0))]
    fn render(&self, points_per_object: usize, seed: u64) -> PyResult<Vec<[f64; 4]>> {
        let cfg = RenderConfig {
            points_per_object,
            ..Default::default()
        };
        pcb_core::scene::render_segmented_cloud(&self.0, &cfg, seed).map(|c| c.rows()).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Scene(anchor={}, moving={})",
            self.0.anchor.spec.shape.name(),
            self.0.moving.spec.shape.name()
        )
    }
}

/// Privileged-feature concept learned from simulated human queries.
#[pyclass(name = "LowDimConcept", module = "pcb_py", frozen)]
struct PyLowDimConcept(pcb_core::active_query::LowDimConcept);

#[pymethods]
impl PyLowDimConcept {
    /// Runs the active query loop and returns the final concept.
    /// `strategy` is `random`, `confusion`, `confrand` or `demo`.
    #[staticmethod]
    #[pyo3(signature = (concept_name, budget = 500, strategy = "confrand", augment = false, features = true, noise = 0.0, seed = 0))]
    fn train(
        py: Python<'_>,
        concept_name: &str,
        budget: usize,
        strategy: &str,
        augment: bool,
        features: bool,
        noise: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let c = concept(concept_name)?;
        let source = if strategy == "demo" {
            QuerySource::Demo
        } else {
            let kind = StrategyKind::ALL
                .into_iter()
                .find(|k| k.name() == strategy)
                .ok_or_else(|| PyValueError::new_err(format!("unknown strategy {strategy:?}")))?;
            QuerySource::Label(QueryStrategy::new(kind, augment))
        };
        let mut cfg = ActiveLoopConfig::new(c, budget, source, features, seed);
        cfg.noise = noise;
        cfg.train_at = Some(vec![]);
        let run = py
            .detach(|| run_active_loop(&cfg, &Catalog::primitives(), &Workspace::default()))
            .map_err(py_err)?;
        Ok(Self(run.final_model().clone()))
    }

    #[getter]
    fn concept(&self) -> &'static str {
        self.0.concept.name()
    }

    fn predict(&self, scene: &PyScene) -> PyResult<f64> {
        self.0.predict(&scene.0).map_err(py_err)
    }

    fn to_json(&self) -> PyResult<String> {
        self.0.to_json().map_err(py_err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        pcb_core::active_query::LowDimConcept::from_json(text).map(Self).map_err(py_err)
    }
}

/// Max-pooled point-set classifier over segmented clouds.
#[pyclass(name = "PointSetModel", module = "pcb_py", frozen)]
struct PyPointSetModel(pcb_core::nets::PointSetModel);

#[pymethods]
impl PyPointSetModel {
    #[new]
    #[pyo3(signature = (seed = 0))]
    fn new(seed: u64) -> Self {
        Self(pcb_core::nets::PointSetModel::phi_high(seed))
    }

    /// Probability that the concept holds for `[x, y, z, segment]` rows.
    fn predict(&self, cloud: Vec<[f64; 4]>) -> PyResult<f64> {
        self.0.forward(&cloud[..]).map_err(py_err)
    }

    fn param_count(&self) -> usize {
        self.0.params().len()
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.0.to_file()).map_err(|e| py_err(e.into()))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| py_err(e.into()))?;
        pcb_core::nets::PointSetModel::from_file(&file).map(Self).map_err(py_err)
    }
}

/// Moves the moving block of `cloud` by a camera-frame delta
/// (translation, axis-angle) about its centroid.
#[pyfunction]
fn transform_moving_cloud(cloud: Vec<[f64; 4]>, translation: [f64; 3], rotation: [f64; 3]) -> Vec<[f64; 4]> {
    let delta = pcb_core::geometry::Pose::from_axis_angle(translation.into(), rotation.into());
    pcb_core::scene::transform_moving_cloud(&PointCloudObservation::from_rows(&cloud), &delta).rows()
}

/// Minimizes a Python callable with the cross-entropy method. Returns the
/// best point and its cost.
#[pyfunction]
#[pyo3(signature = (cost, init_mean, population = 64, elite_fraction = 0.1, iterations = 30, init_std = 1.0, seed = 0))]
fn cem_minimize(
    cost: &Bound<'_, PyAny>,
    init_mean: Vec<f64>,
    population: usize,
    elite_fraction: f64,
    iterations: usize,
    init_std: f64,
    seed: u64,
) -> PyResult<(Vec<f64>, f64)> {
    let cfg = CemConfig {
        population,
        elite_fraction,
        iterations,
        init_std: vec![init_std],
        seed,
        ..Default::default()
    };
    let mut failure = None;
    let result = pcb_core::cem::cem_minimize(
        |x| match cost.call1((x.to_vec(),)).and_then(|v| v.extract::<f64>()) {
            Ok(v) => v,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        },
        &init_mean,
        &cfg,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    result.map_err(py_err)
}

/// Runs an experiment from a JSON config and returns the results path.
#[pyfunction]
fn run_experiment(py: Python<'_>, config_json: &str) -> PyResult<String> {
    let cfg = ExperimentConfig::from_json(config_json).map_err(py_err)?;
    let path = py.detach(|| experiment::run_experiment(&cfg)).map_err(py_err)?;
    Ok(path.display().to_string())
}

/// Seed-averaged learning-curve table of a results file.
#[pyfunction]
fn summarize(results_path: PathBuf) -> PyResult<String> {
    let rows = experiment::read_results(&results_path).map_err(py_err)?;
    Ok(experiment::render_table(&experiment::summarize(&rows).map_err(py_err)?))
}

#[pymodule]
fn pcb_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScene>()?;
    m.add_class::<PyLowDimConcept>()?;
    m.add_class::<PyPointSetModel>()?;
    m.add_function(wrap_pyfunction!(concepts, m)?)?;
    m.add_function(wrap_pyfunction!(transform_moving_cloud, m)?)?;
    m.add_function(wrap_pyfunction!(cem_minimize, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(summarize, m)?)?;
    Ok(())
}
