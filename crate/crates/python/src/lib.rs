//! Python bindings for the `mvres` codec.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use mvres::arch::ArchitectureConfig;
use mvres::codec::{self, MotionSearch};
use mvres::frame_io::{read_yuv420, read_yuv420_file, upsample_420_to_444, write_yuv420};
use mvres::motion::{sdc_warp as warp, KernelField};
use mvres::range_coder::{self, CdfTable};
use mvres::rate_control::{self, ConfigPoint};
use mvres::{entropy, metrics, Container, Error, FlowField, Frame420, Tensor};

create_exception!(mvres_py, MvresError, PyException);
create_exception!(mvres_py, InfeasibleError, MvresError);
create_exception!(mvres_py, FormatError, MvresError);

fn to_py(err: Error) -> PyErr {
    let message = err.to_string();
    let root = root_cause(&err);
    match root {
        Error::Infeasible { .. } => InfeasibleError::new_err(message),
        Error::Usage(_) | Error::Domain(_) | Error::Shape(_) | Error::Dimension(_) => PyValueError::new_err(message),
        Error::Io(_) | Error::Json(_) | Error::Config(_) => MvresError::new_err(message),
        _ if err.exit_code() == 2 => FormatError::new_err(message),
        _ => MvresError::new_err(message),
    }
}

fn root_cause(err: &Error) -> &Error {
    match err {
        Error::Context { source, .. } => root_cause(source),
        other => other,
    }
}

/// A raw YUV 4:2:0 frame.
#[pyclass(name = "Frame", module = "mvres_py", frozen)]
struct PyFrame {
    inner: Frame420,
}

#[pymethods]
impl PyFrame {
    /// Build from planar Y, U, V bytes.
    #[new]
    fn new(width: usize, height: usize, data: &[u8]) -> PyResult<Self> {
        Ok(Self { inner: read_yuv420(data, width, height).map_err(to_py)? })
    }

    #[staticmethod]
    fn read(path: PathBuf, width: usize, height: usize) -> PyResult<Self> {
        Ok(Self { inner: read_yuv420_file(path, width, height).map_err(to_py)? })
    }

    #[staticmethod]
    fn filled(width: usize, height: usize, y: u8, u: u8, v: u8) -> PyResult<Self> {
        Ok(Self { inner: Frame420::filled(width, height, y, u, v).map_err(to_py)? })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        std::fs::write(path, write_yuv420(&self.inner)).map_err(|e| to_py(e.into()))
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &write_yuv420(&self.inner))
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("Frame({}x{})", self.inner.width(), self.inner.height())
    }
}

/// One quality level of a weight directory, ready to encode and decode.
#[pyclass(name = "Codec", module = "mvres_py", frozen)]
struct PyCodec {
    model: mvres::Model,
}

#[pymethods]
impl PyCodec {
    #[new]
    fn new(weights_dir: PathBuf, q: u8) -> PyResult<Self> {
        Ok(Self { model: codec::load_model(weights_dir, q).map_err(to_py)? })
    }

    #[getter]
    fn quality(&self) -> u8 {
        self.model.quality()
    }

    /// Returns `(container_bytes, reconstruction, stats)`.
    ///
    /// `flow`, when given, is `(u, v)` with `width * height` pixel offsets each.
    #[pyo3(signature = (reference, target, flow = None, block = 8, radius = 16))]
    fn encode<'py>(
        &self,
        py: Python<'py>,
        reference: &PyFrame,
        target: &PyFrame,
        flow: Option<(Vec<f32>, Vec<f32>)>,
        block: usize,
        radius: usize,
    ) -> PyResult<(Bound<'py, PyBytes>, PyFrame, Bound<'py, PyDict>)> {
        let (w, h) = (target.inner.width(), target.inner.height());
        let flow = match flow {
            Some((u, v)) => {
                let mut data = u;
                data.extend(v);
                Some(FlowField::new(Tensor::from_vec(2, h, w, data).map_err(to_py)?).map_err(to_py)?)
            }
            None => None,
        };
        let enc = codec::encode_frame(&self.model, &reference.inner, &target.inner, flow.as_ref(), MotionSearch { block, radius })
            .map_err(to_py)?;
        let s = &enc.stats;
        let stats = PyDict::new(py);
        stats.set_item("q", s.q)?;
        stats.set_item("lambda", s.lambda)?;
        stats.set_item("rate_y_bits", s.rate_y_bits)?;
        stats.set_item("rate_z_bits", s.rate_z_bits)?;
        stats.set_item("estimated_bytes", s.estimated_bytes)?;
        stats.set_item("y_bytes", s.y_bytes)?;
        stats.set_item("z_bytes", s.z_bytes)?;
        stats.set_item("payload_bytes", s.payload_bytes)?;
        stats.set_item("container_bytes", s.container_bytes)?;
        stats.set_item("msssim", s.msssim)?;
        stats.set_item("msssim_scales", s.msssim_scales)?;
        stats.set_item("psnr", s.psnr)?;
        let bytes = PyBytes::new(py, &enc.container.to_bytes());
        Ok((bytes, PyFrame { inner: enc.reconstruction }, stats))
    }

    fn decode(&self, container: &[u8], reference: &PyFrame) -> PyResult<PyFrame> {
        let container = Container::from_bytes(container).map_err(to_py)?;
        let decoded = codec::decode_frame(&self.model, &container, &reference.inner).map_err(to_py)?;
        Ok(PyFrame { inner: decoded.frame })
    }
}

/// Write an architecture file and seeded weights for every quality level.
#[pyfunction]
#[pyo3(signature = (directory, preset = "compact", seed = 0, f16 = false))]
fn init_weights(directory: PathBuf, preset: &str, seed: u64, f16: bool) -> PyResult<()> {
    let arch = match preset {
        "compact" => ArchitectureConfig::compact(),
        "default" => ArchitectureConfig::default(),
        other => return Err(PyValueError::new_err(format!("unknown preset '{other}'"))),
    };
    let precision = if f16 { mvres::Precision::F16 } else { mvres::Precision::F32 };
    codec::init_weight_dir(directory, &arch, seed, precision).map_err(to_py)
}

#[pyfunction]
fn ms_ssim(a: &PyFrame, b: &PyFrame) -> PyResult<f64> {
    metrics::ms_ssim(&upsample_420_to_444(&a.inner), &upsample_420_to_444(&b.inner)).map_err(to_py)
}

/// PSNR in dB over the 4:4:4 planes; `inf` for identical frames.
#[pyfunction]
fn psnr(a: &PyFrame, b: &PyFrame) -> PyResult<f64> {
    metrics::psnr(&upsample_420_to_444(&a.inner), &upsample_420_to_444(&b.inner)).map_err(to_py)
}

/// `tables[i]` lists `(q, rate_bytes, msssim)` for frame `i`.
#[pyfunction]
#[pyo3(signature = (tables, budget, granularity = rate_control::DEFAULT_GRANULARITY))]
fn allocate<'py>(
    py: Python<'py>,
    tables: Vec<Vec<(u8, u64, f64)>>,
    budget: u64,
    granularity: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let tables: Vec<Vec<ConfigPoint>> = tables
        .into_iter()
        .map(|t| t.into_iter().map(|(q, rate_bytes, msssim)| ConfigPoint { q, rate_bytes, msssim }).collect())
        .collect();
    let plan = rate_control::allocate(&tables, budget, granularity).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("budget", plan.budget)?;
    out.set_item("granularity", plan.granularity)?;
    out.set_item("q", plan.q.iter().map(|&q| q as u32).collect::<Vec<u32>>())?;
    out.set_item("total_rate", plan.total_rate)?;
    out.set_item("total_msssim", plan.total_msssim)?;
    Ok(out)
}

#[pyfunction]
fn evaluate_loss(msssim: f64, rate_y_bits: f64, rate_z_bits: f64, lam: f64) -> PyResult<f64> {
    rate_control::evaluate_loss(msssim, rate_y_bits, rate_z_bits, lam).map_err(to_py)
}

#[pyfunction]
fn lambda_for_quality(q: u8) -> f64 {
    rate_control::lambda_for_quality(q)
}

#[pyfunction]
fn laplace_pmf(k: i32, mu: f64, sigma: f64) -> PyResult<f64> {
    entropy::laplace_pmf(k, mu, sigma).map_err(to_py)
}

/// 16-bit symbol frequencies for a pmf (each at least 1, summing to 65536).
#[pyfunction]
fn build_cdf(pmf: Vec<f64>) -> PyResult<Vec<u32>> {
    Ok(range_coder::build_cdf(&pmf).map_err(to_py)?.frequencies())
}

fn tables_from(freqs: Vec<Vec<u32>>) -> PyResult<Vec<CdfTable>> {
    freqs.iter().map(|f| CdfTable::from_frequencies(f).map_err(to_py)).collect()
}

/// Range-code `symbols[i]` with frequency table `tables[i]`.
#[pyfunction]
fn encode_symbols<'py>(py: Python<'py>, symbols: Vec<u32>, tables: Vec<Vec<u32>>) -> PyResult<Bound<'py, PyBytes>> {
    let bytes = range_coder::encode_symbols(&symbols, &tables_from(tables)?).map_err(to_py)?;
    Ok(PyBytes::new(py, &bytes))
}

#[pyfunction]
fn decode_symbols(data: &[u8], tables: Vec<Vec<u32>>, count: usize) -> PyResult<Vec<u32>> {
    range_coder::decode_symbols(data, &tables_from(tables)?, count).map_err(to_py)
}

/// Spatially-displaced convolution on flat channel-major buffers.
///
/// `reference` holds `channels * height * width` values, `flow` is `u` then
/// `v`, and each kernel buffer holds `taps * height * width` simplex weights.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
fn sdc_warp(
    reference: Vec<f32>,
    channels: usize,
    height: usize,
    width: usize,
    flow: Vec<f32>,
    kernels_u: Vec<f32>,
    kernels_v: Vec<f32>,
    taps: usize,
) -> PyResult<Vec<f32>> {
    let reference = Tensor::from_vec(channels, height, width, reference).map_err(to_py)?;
    let flow = FlowField::new(Tensor::from_vec(2, height, width, flow).map_err(to_py)?).map_err(to_py)?;
    let kernels = KernelField::new(
        Tensor::from_vec(taps, height, width, kernels_u).map_err(to_py)?,
        Tensor::from_vec(taps, height, width, kernels_v).map_err(to_py)?,
    )
    .map_err(to_py)?;
    Ok(warp(&reference, &flow, &kernels).map_err(to_py)?.into_vec())
}

#[pymodule]
fn mvres_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("MvresError", py.get_type::<MvresError>())?;
    m.add("InfeasibleError", py.get_type::<InfeasibleError>())?;
    m.add("FormatError", py.get_type::<FormatError>())?;
    m.add_class::<PyFrame>()?;
    m.add_class::<PyCodec>()?;
    m.add_function(wrap_pyfunction!(init_weights, m)?)?;
    m.add_function(wrap_pyfunction!(ms_ssim, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(allocate, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_loss, m)?)?;
    m.add_function(wrap_pyfunction!(lambda_for_quality, m)?)?;
    m.add_function(wrap_pyfunction!(laplace_pmf, m)?)?;
    m.add_function(wrap_pyfunction!(build_cdf, m)?)?;
    m.add_function(wrap_pyfunction!(encode_symbols, m)?)?;
    m.add_function(wrap_pyfunction!(decode_symbols, m)?)?;
    m.add_function(wrap_pyfunction!(sdc_warp, m)?)?;
    m.add("QUALITY_LEVELS", rate_control::QUALITY_LEVELS)?;
    Ok(())
}
