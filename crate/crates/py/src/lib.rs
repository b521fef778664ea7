//! Python bindings: the outer code, sensing operators, denoisers, state
//! evolution, and the experiment driver, exposed as a `ccs_amp` module.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use ccs_amp::amp::{self, DenoiserKind};
use ccs_amp::bp;
use ccs_amp::error::Error;
use ccs_amp::sensing;
use ccs_amp::sim;
use ccs_amp::state_evolution as se;
use ccs_amp::tree_code;

fn convert(e: Error) -> PyErr {
    match e {
        Error::Config(_) => PyValueError::new_err(e.to_string()),
        Error::Numerical { .. } => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Outer tree code with triadic parity structure.
#[pyclass(name = "CodeDesign")]
struct PyCodeDesign {
    inner: tree_code::CodeDesign,
}

#[pymethods]
impl PyCodeDesign {
    /// Build the standard triadic design for a `payload_bits`-bit message
    /// split into `section_bits`-bit sections.
    #[new]
    #[pyo3(signature = (payload_bits, section_bits, extra_cross=0, seed=0))]
    fn new(
        payload_bits: usize,
        section_bits: u32,
        extra_cross: usize,
        seed: u64,
    ) -> PyResult<Self> {
        tree_code::make_triadic_design(payload_bits, section_bits, extra_cross, seed)
            .map(|inner| Self { inner })
            .map_err(convert)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        tree_code::CodeDesign::from_json(text)
            .map(|inner| Self { inner })
            .map_err(convert)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn num_sections(&self) -> usize {
        self.inner.num_sections()
    }

    #[getter]
    fn payload_bits(&self) -> usize {
        self.inner.payload_bits()
    }

    #[getter]
    fn info_sections(&self) -> Vec<usize> {
        self.inner.info_sections().to_vec()
    }

    #[getter]
    fn girth(&self) -> usize {
        self.inner.girth()
    }

    #[getter]
    fn total_len(&self) -> usize {
        self.inner.layout().total_len()
    }

    fn section_size(&self, l: usize) -> usize {
        self.inner.layout().section_size(l)
    }

    /// Encode payload bits (a list of 0/1) into per-section indices.
    fn encode(&self, bits: Vec<u8>) -> PyResult<Vec<u32>> {
        if bits.len() != self.inner.payload_bits() {
            return Err(PyValueError::new_err(format!(
                "expected {} payload bits, got {}",
                self.inner.payload_bits(),
                bits.len()
            )));
        }
        Ok(tree_code::encode(&self.inner, &tree_code::Payload::new(bits)).k)
    }

    /// Check every parity factor of a full index vector.
    fn is_consistent(&self, indices: Vec<u32>) -> PyResult<bool> {
        if indices.len() != self.inner.num_sections() {
            return Err(PyValueError::new_err("one index per section required"));
        }
        Ok(tree_code::codeword_consistent(
            &self.inner,
            &tree_code::IndexVector { k: indices },
        ))
    }

    /// Payload bits carried by the information sections of an index vector.
    fn payload(&self, indices: Vec<u32>) -> PyResult<Vec<u8>> {
        if indices.len() != self.inner.num_sections() {
            return Err(PyValueError::new_err("one index per section required"));
        }
        Ok(tree_code::IndexVector { k: indices }
            .payload(&self.inner)
            .bits)
    }
}

/// Sensing operator with matched forward/adjoint maps.
#[pyclass(name = "SensingOperator")]
struct PySensingOperator {
    inner: sensing::SensingOperator,
}

#[pymethods]
impl PySensingOperator {
    #[new]
    #[pyo3(signature = (n, m, kind="subsampled_hadamard", seed=0))]
    fn new(n: usize, m: usize, kind: &str, seed: u64) -> PyResult<Self> {
        let kind = match kind {
            "subsampled_hadamard" => sensing::OperatorKind::SubsampledHadamard,
            "dense_gaussian" => sensing::OperatorKind::DenseGaussian,
            other => {
                return Err(PyValueError::new_err(format!(
                    "unknown operator kind {other:?}"
                )))
            }
        };
        sensing::build_operator(kind, n, m, seed)
            .map(|inner| Self { inner })
            .map_err(convert)
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m()
    }

    fn forward(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        if x.len() != self.inner.m() {
            return Err(PyValueError::new_err("forward expects an m-vector"));
        }
        Ok(self.inner.forward(&x))
    }

    fn adjoint(&self, z: Vec<f64>) -> PyResult<Vec<f64>> {
        if z.len() != self.inner.n() {
            return Err(PyValueError::new_err("adjoint expects an n-vector"));
        }
        Ok(self.inner.adjoint(&z))
    }
}

/// Posterior mean of a binary signal in Gaussian noise.
#[pyfunction]
fn pme(q: f64, r: f64, d: f64, tau: f64) -> PyResult<f64> {
    if !(0.0..=1.0).contains(&q) || tau <= 0.0 {
        return Err(PyValueError::new_err("need q in [0,1] and tau > 0"));
    }
    Ok(amp::pme(q, r, d, tau))
}

fn se_params(
    design: &PyCodeDesign,
    k_a: usize,
    ebn0_db: f64,
    n: usize,
    mc_samples: usize,
) -> se::SeParams {
    let w = design.inner.payload_bits() as f64;
    let power = 2.0 * w * 10f64.powf(ebn0_db / 10.0) / n as f64;
    se::SeParams {
        k_a,
        design: design.inner.clone(),
        amplitudes: sensing::AmplitudeDiagonal::equal_power(power, n, design.inner.num_sections()),
        sigma_sq: 1.0,
        n,
        mc_samples,
    }
}

/// Large-system limit of `||y||^2 / n`.
#[pyfunction]
#[pyo3(signature = (design, k_a, ebn0_db, n=38400))]
fn tau0_sq(design: &PyCodeDesign, k_a: usize, ebn0_db: f64, n: usize) -> f64 {
    se::tau0_sq(&se_params(design, k_a, ebn0_db, n, 1))
}

/// State-evolution trajectory `tau_t^2` for `steps` iterations.
#[pyfunction]
#[pyo3(signature = (design, k_a, ebn0_db, steps, denoiser="dynamic", n=38400, mc_samples=2000, seed=0))]
#[allow(clippy::too_many_arguments)]
fn state_evolution(
    design: &PyCodeDesign,
    k_a: usize,
    ebn0_db: f64,
    steps: usize,
    denoiser: &str,
    n: usize,
    mc_samples: usize,
    seed: u64,
) -> PyResult<Vec<f64>> {
    let kind = match denoiser {
        "original" => se::SeDenoiser::Original,
        "dynamic" => se::SeDenoiser::Dynamic,
        other => return Err(PyValueError::new_err(format!("unknown denoiser {other:?}"))),
    };
    let params = se_params(design, k_a, ebn0_db, n, mc_samples);
    se::run_se(&params, steps, kind, seed)
        .map(|t| t.tau_sq)
        .map_err(convert)
}

/// Run a full experiment from a JSON configuration string; returns
/// `(mean_pupe, std_err, per_trial_pupe)`.
#[pyfunction]
fn run_experiment(config_json: &str) -> PyResult<(f64, f64, Vec<f64>)> {
    let config = sim::SimConfig::from_json(config_json).map_err(convert)?;
    let result = sim::run_experiment(&config).map_err(convert)?;
    let per_trial = result.trials.iter().map(|t| t.pupe).collect();
    Ok((result.mean_pupe, result.std_err, per_trial))
}

/// One decoding pass over a provided observation; returns decoded payloads as
/// bit lists. Exposed for scripting custom scenes from Python.
#[pyfunction]
fn decode_observation(config_json: &str, y: Vec<f64>) -> PyResult<Vec<Vec<u8>>> {
    let config = sim::SimConfig::from_json(config_json).map_err(convert)?;
    let ctx = sim::DecoderContext::from_config(&config).map_err(convert)?;
    let op = sensing::build_operator(
        config.operator,
        config.n,
        ctx.design.layout().total_len(),
        config.seeds.matrix,
    )
    .map_err(convert)?;
    if y.len() != config.n {
        return Err(PyValueError::new_err(format!(
            "expected {} observations",
            config.n
        )));
    }
    let result = sim::decode(&ctx, &y, &op).map_err(convert)?;
    Ok(result
        .recovered
        .iter()
        .map(|(iv, _)| iv.payload(&ctx.design).bits)
        .collect())
}

/// BP-refined extrinsic priors from an effective observation (one flat
/// `r` vector of length `design.total_len()`), returned per section.
#[pyfunction]
#[pyo3(signature = (design, r, tau, d, k_a, bp_rounds=1))]
fn bp_priors(
    design: &PyCodeDesign,
    r: Vec<f64>,
    tau: f64,
    d: f64,
    k_a: usize,
    bp_rounds: usize,
) -> PyResult<Vec<Vec<f64>>> {
    if r.len() != design.inner.layout().total_len() {
        return Err(PyValueError::new_err(
            "r must have design.total_len() entries",
        ));
    }
    if tau <= 0.0 {
        return Err(PyValueError::new_err("tau must be positive"));
    }
    let amplitudes = sensing::AmplitudeDiagonal::new(vec![d; design.inner.num_sections()]);
    let table = bp::precompute_masks(&design.inner);
    let lambda = bp::init_lambda(&r, tau, &design.inner, &amplitudes, k_a);
    bp::run_bp(&design.inner, &table, &lambda, bp_rounds, k_a).map_err(convert)
}

/// Denoiser kinds accepted by config JSON, for reference from Python.
#[pyfunction]
fn denoiser_kinds() -> Vec<String> {
    let kinds = [
        DenoiserKind::Original,
        DenoiserKind::Dynamic { bp_rounds: 1 },
    ];
    kinds
        .iter()
        .map(|k| serde_json::to_string(k).unwrap())
        .collect()
}

#[pymodule]
fn ccs_amp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCodeDesign>()?;
    m.add_class::<PySensingOperator>()?;
    m.add_function(wrap_pyfunction!(pme, m)?)?;
    m.add_function(wrap_pyfunction!(tau0_sq, m)?)?;
    m.add_function(wrap_pyfunction!(state_evolution, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(decode_observation, m)?)?;
    m.add_function(wrap_pyfunction!(bp_priors, m)?)?;
    m.add_function(wrap_pyfunction!(denoiser_kinds, m)?)?;
    Ok(())
}
