//! Python bindings. Tensors cross the boundary as a flat row-major list of
//! floats plus a shape list.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use vesrnet::analysis;
use vesrnet::attention;
use vesrnet::data::{self, Clip, DegradationSpec};
use vesrnet::model::{preset, VesrNet};
use vesrnet::tensor::Tensor;
use vesrnet::train::{self, TrainConfig};

type Flat = (Vec<f32>, Vec<usize>);

fn py_err(e: vesrnet::Error) -> PyErr {
    if e.is_io() {
        PyIOError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn tensor(data: Vec<f32>, shape: &[usize]) -> PyResult<Tensor<f32>> {
    Tensor::from_vec(shape, data).map_err(|e| py_err(e.into()))
}

fn flat(t: Tensor<f32>) -> Flat {
    let shape = t.shape().to_vec();
    (t.into_data(), shape)
}

fn clip(data: Vec<f32>, shape: &[usize]) -> PyResult<Clip> {
    Clip::new(tensor(data, shape)?).map_err(py_err)
}

/// A VESR-Net instance holding f32 parameters. Parameters are shared with
/// the autodiff tape through `Rc`, so instances stay on their creating
/// thread.
#[pyclass(name = "Model", unsendable)]
struct PyModel {
    net: VesrNet<f32>,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (preset_name = "tiny", seed = 0))]
    fn new(preset_name: &str, seed: u64) -> PyResult<Self> {
        let cfg = preset(preset_name).map_err(py_err)?;
        Ok(Self {
            net: VesrNet::new(&cfg, seed).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            net: VesrNet::load(path).map_err(py_err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.net.save(path).map_err(py_err)
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.net.param_count()
    }

    #[getter]
    fn n_frames(&self) -> usize {
        self.net.config.n_frames
    }

    #[getter]
    fn channels(&self) -> usize {
        self.net.config.channels
    }

    /// Super-resolves one `T x 3 x H x W` window to `3 x 4H x 4W`.
    fn infer(&self, data: Vec<f32>, shape: Vec<usize>) -> PyResult<Flat> {
        let out = self.net.infer(&tensor(data, &shape)?).map_err(py_err)?;
        Ok(flat(out))
    }

    /// Super-resolves every frame of an LR clip, clamped to `[0, 1]`.
    fn restore_clip(&self, data: Vec<f32>, shape: Vec<usize>) -> PyResult<Flat> {
        let hr = train::restore_clip(&self.net, &clip(data, &shape)?).map_err(py_err)?;
        Ok(flat(hr.into_frames()))
    }

    fn __repr__(&self) -> String {
        let c = &self.net.config;
        format!(
            "Model(channels={}, n_frames={}, params={})",
            c.channels,
            c.n_frames,
            self.net.param_count()
        )
    }
}

/// Renders a deterministic `T x 3 x H x W` clip in `[0, 1]`.
#[pyfunction]
fn synthetic_clip(seed: u64, frames: usize, height: usize, width: usize) -> PyResult<Flat> {
    let c = data::generate_synthetic_clip(seed, frames, height, width).map_err(py_err)?;
    Ok(flat(c.into_frames()))
}

/// Antialiased bicubic 4x downscale, optional Gaussian noise, 8-bit
/// quantisation.
#[pyfunction]
#[pyo3(signature = (data, shape, noise_sigma = 0.0, seed = 0))]
fn degrade(data: Vec<f32>, shape: Vec<usize>, noise_sigma: f32, seed: u64) -> PyResult<Flat> {
    let spec = DegradationSpec {
        noise_sigma,
        ..Default::default()
    };
    let lr = data::degrade_clip(&clip(data, &shape)?, &spec, seed).map_err(py_err)?;
    Ok(flat(lr.into_frames()))
}

#[pyfunction]
#[pyo3(signature = (pred, target, shape, peak = 1.0))]
fn psnr(pred: Vec<f32>, target: Vec<f32>, shape: Vec<usize>, peak: f64) -> PyResult<f64> {
    train::psnr(&tensor(pred, &shape)?, &tensor(target, &shape)?, peak).map_err(py_err)
}

#[pyfunction]
fn attention_memory_footprint(py: Python<'_>, t: u64, h: u64, w: u64, c: u64) -> PyResult<Bound<'_, PyDict>> {
    let f = attention::attention_memory_footprint(t, h, w, c).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("full_entries", f.full_entries)?;
    d.set_item("separate_entries", f.separate_entries)?;
    d.set_item("ratio", f.ratio)?;
    Ok(d)
}

#[pyfunction]
fn count_params(preset_name: &str) -> PyResult<u64> {
    let net = VesrNet::<f32>::new(&preset(preset_name).map_err(py_err)?, 0).map_err(py_err)?;
    Ok(analysis::count_params(&net).total_params())
}

/// Operation totals of one forward pass on `size x size` LR frames.
#[pyfunction]
#[pyo3(signature = (preset_name, size = 64))]
fn count_flops<'py>(py: Python<'py>, preset_name: &str, size: usize) -> PyResult<Bound<'py, PyDict>> {
    let net = VesrNet::<f32>::new(&preset(preset_name).map_err(py_err)?, 0).map_err(py_err)?;
    let r = analysis::count_flops(&net, size, size).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("params", r.total_params())?;
    d.set_item("macs", r.total_macs())?;
    d.set_item("elementwise", r.total_elementwise())?;
    d.set_item("flops", r.total_flops())?;
    d.set_item("flops_per_input_frame", r.flops_per_input_frame())?;
    d.set_item("convention", analysis::FLOP_CONVENTION)?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (epoch, base_lr = 1e-4, decay = 0.8, decay_epochs = 20))]
fn lr_at(epoch: usize, base_lr: f32, decay: f64, decay_epochs: usize) -> PyResult<f32> {
    let cfg = TrainConfig {
        base_lr,
        lr_decay: decay,
        decay_epochs,
        ..Default::default()
    };
    cfg.validate().map_err(py_err)?;
    Ok(train::lr_at(&cfg, epoch))
}

#[pymodule]
fn vesrnet_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(synthetic_clip, m)?)?;
    m.add_function(wrap_pyfunction!(degrade, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(attention_memory_footprint, m)?)?;
    m.add_function(wrap_pyfunction!(count_params, m)?)?;
    m.add_function(wrap_pyfunction!(count_flops, m)?)?;
    m.add_function(wrap_pyfunction!(lr_at, m)?)?;
    Ok(())
}
