//! Python bindings: configuration, parameters, synthetic data, forward
//! pass, inference and training.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use stcnn::data::{synth_generate, SynthConfig};
use stcnn::network::{load_checkpoint, save_checkpoint};
use stcnn::train::{lsbp_train, TrainConfig};
use stcnn::{Error, LatentVars, ModelConfig, Parameters, Tensor, VideoSample};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        Error::Numeric(m) => PyRuntimeError::new_err(m),
        other => PyValueError::new_err(other.to_string()),
    }
}

#[pyclass(name = "ModelConfig", from_py_object)]
#[derive(Clone)]
struct PyModelConfig {
    inner: ModelConfig,
}

#[pymethods]
impl PyModelConfig {
    /// Defaults, overridden by keyword arguments such as `classes=3`.
    #[new]
    #[pyo3(signature = (**overrides))]
    fn new(overrides: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut inner = ModelConfig::default();
        if let Some(kw) = overrides {
            for (k, v) in kw.iter() {
                inner.set(&k.extract::<String>()?, v.extract::<usize>()?).map_err(py_err)?;
            }
        }
        Ok(PyModelConfig { inner })
    }

    fn get(&self, key: &str) -> PyResult<usize> {
        let idx = ModelConfig::field_names()
            .iter()
            .position(|&k| k == key)
            .ok_or_else(|| PyValueError::new_err(format!("unknown key `{key}`")))?;
        Ok(self.inner.to_fields()[idx])
    }

    fn set(&mut self, key: &str, value: usize) -> PyResult<()> {
        self.inner.set(key, value).map_err(py_err)
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(py_err)
    }

    fn clique_features(&self) -> PyResult<usize> {
        self.inner.clique_features().map_err(py_err)
    }

    fn concat_len(&self) -> PyResult<usize> {
        self.inner.concat_len().map_err(py_err)
    }

    fn parameter_count(&self) -> PyResult<usize> {
        self.inner.parameter_count().map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("ModelConfig({})", self.inner.to_string().trim_end().replace('\n', ", "))
    }
}

#[pyclass(name = "Parameters", from_py_object)]
#[derive(Clone)]
struct PyParameters {
    inner: Parameters,
}

#[pymethods]
impl PyParameters {
    #[staticmethod]
    fn init(config: &PyModelConfig, seed: u64) -> PyResult<Self> {
        Ok(PyParameters {
            inner: Parameters::init(&config.inner, seed).map_err(py_err)?,
        })
    }

    /// Returns `(parameters, config)`.
    #[staticmethod]
    fn load(path: &str) -> PyResult<(Self, PyModelConfig)> {
        let (inner, config) = load_checkpoint(path).map_err(py_err)?;
        Ok((PyParameters { inner }, PyModelConfig { inner: config }))
    }

    fn save(&self, path: &str, config: &PyModelConfig) -> PyResult<()> {
        save_checkpoint(&self.inner, &config.inner, path).map_err(py_err)
    }

    fn to_list(&self) -> Vec<f32> {
        self.inner.to_flat()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

#[pyclass(name = "VideoSample", from_py_object)]
#[derive(Clone)]
struct PySample {
    inner: VideoSample,
}

#[pymethods]
impl PySample {
    /// `frames` is flat channel-major data of shape `(channels, A, H, W)`.
    #[new]
    fn new(frames: Vec<f32>, shape: Vec<usize>, label: usize, subject_id: u16) -> PyResult<Self> {
        let t = Tensor::new(shape, frames).map_err(py_err)?;
        Ok(PySample {
            inner: VideoSample::new(t, label, subject_id).map_err(py_err)?,
        })
    }

    #[getter]
    fn label(&self) -> usize {
        self.inner.label
    }

    #[getter]
    fn subject_id(&self) -> u16 {
        self.inner.subject_id
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.inner.frames.shape().to_vec()
    }

    fn frames(&self) -> Vec<f32> {
        self.inner.frames.data().to_vec()
    }
}

fn samples(list: &[PySample]) -> Vec<VideoSample> {
    list.iter().map(|s| s.inner.clone()).collect()
}

/// Returns `(samples, truth)` where truth holds `(starts, lengths)` per sample.
#[pyfunction]
#[pyo3(signature = (config, per_class, seed, noise=0.05, randomize_boundaries=true, shared_motifs=false))]
fn synth(
    config: &PyModelConfig,
    per_class: usize,
    seed: u64,
    noise: f64,
    randomize_boundaries: bool,
    shared_motifs: bool,
) -> PyResult<(Vec<PySample>, Vec<(Vec<usize>, Vec<usize>)>)> {
    let cfg = SynthConfig {
        noise,
        randomize_boundaries,
        shared_motifs,
        ..SynthConfig::for_model(&config.inner, per_class, seed)
    };
    let d = synth_generate(&cfg).map_err(py_err)?;
    Ok((
        d.samples.into_iter().map(|inner| PySample { inner }).collect(),
        d.truth.iter().map(|h| (h.starts(), h.lengths())).collect(),
    ))
}

/// Class probabilities under the segmentation `(starts, lengths)`.
#[pyfunction]
fn forward(
    sample: &PySample,
    params: &PyParameters,
    starts: Vec<usize>,
    lengths: Vec<usize>,
    config: &PyModelConfig,
) -> PyResult<Vec<f32>> {
    if starts.len() != lengths.len() {
        return Err(PyValueError::new_err("starts and lengths differ in length"));
    }
    let h = LatentVars::from_parts(&starts, &lengths);
    let p = stcnn::network_forward(&sample.inner, &params.inner, &h, &config.inner).map_err(py_err)?;
    Ok(p.data().to_vec())
}

/// `(label, probability, starts, lengths)` maximizing over labels and segmentations.
#[pyfunction]
fn infer(
    sample: &PySample,
    params: &PyParameters,
    config: &PyModelConfig,
) -> PyResult<(usize, f32, Vec<usize>, Vec<usize>)> {
    let r = stcnn::infer(&sample.inner, &params.inner, &config.inner).map_err(py_err)?;
    Ok((r.label, r.probability, r.latent.starts(), r.latent.lengths()))
}

/// Returns the trained parameters and the cost history as
/// `(iteration, phase, J, data_term, reg_term)` tuples. Keyword arguments
/// set training options (`learning_rate`, `mode`, `max_iterations`, ...).
#[pyfunction]
#[pyo3(signature = (samples_, params, config, **options))]
fn train(
    py: Python<'_>,
    samples_: Vec<PySample>,
    params: &PyParameters,
    config: &PyModelConfig,
    options: Option<&Bound<'_, PyDict>>,
) -> PyResult<(PyParameters, Vec<(usize, String, f64, f64, f64)>)> {
    let mut tc = TrainConfig::default();
    if let Some(kw) = options {
        for (k, v) in kw.iter() {
            let value = v.str()?.to_string();
            tc.set(&k.extract::<String>()?, &value).map_err(py_err)?;
        }
    }
    let data = samples(&samples_);
    let (init, model) = (params.inner.clone(), config.inner.clone());
    let state = py.detach(move || lsbp_train(&data, &init, &model, &tc)).map_err(py_err)?;
    let history = state
        .cost_history
        .iter()
        .map(|r| (r.iteration, r.phase.to_string(), r.cost.total, r.cost.data_term, r.cost.reg_term))
        .collect();
    Ok((PyParameters { inner: state.params }, history))
}

#[pyfunction]
fn enumeration_count(anchors: usize, cliques: usize, min_frames: usize, max_frames: usize) -> usize {
    stcnn::enumerate(anchors, cliques, min_frames, max_frames).count()
}

/// Maximum relative gradient error on the built-in tiny configuration.
#[pyfunction]
fn gradcheck(seed: u64) -> PyResult<f64> {
    Ok(stcnn::gradcheck::run_gradcheck(seed).map_err(py_err)?.max_rel_error)
}

#[pymodule]
fn stcnn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModelConfig>()?;
    m.add_class::<PyParameters>()?;
    m.add_class::<PySample>()?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(forward, m)?)?;
    m.add_function(wrap_pyfunction!(infer, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(enumeration_count, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
