//! Python bindings. Images and masks cross the boundary as lists of rows.

use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;

use segbayes::decoder::{BoxPrompt, DecoderDims, DecoderModel};
use segbayes::pipeline::{train_sokan, TrainConfig};
use segbayes::sokan::{positive_ratio, prune, HyperMapVariant};
use segbayes::toolkit::model_io::{load_model, save_model};
use segbayes::toolkit::{self, PhantomConfig, TensorContainer};
use segbayes::tvbi::{self, collect_tokens, compute_token_stats};
use segbayes::{Error, RngStream, Tensor};

type Rows = Vec<Vec<f32>>;
type BoxTuple = (usize, usize, usize, usize);

fn py_err(e: Error) -> PyErr {
    match e {
        Error::InvalidInput(m) | Error::Format(m) => PyValueError::new_err(m),
        Error::Numeric(m) => PyArithmeticError::new_err(m),
        Error::Io(e) => PyIOError::new_err(e.to_string()),
    }
}

/// Rows of equal length into an `H × W` tensor.
pub fn rows_to_tensor(rows: &[Vec<f32>]) -> segbayes::Result<Tensor> {
    let h = rows.len();
    let w = rows.first().map_or(0, Vec::len);
    if h == 0 || w == 0 || rows.iter().any(|r| r.len() != w) {
        return Err(Error::InvalidInput("expected a nonempty rectangular list of rows".into()));
    }
    Tensor::matrix(h, w, rows.concat())
}

pub fn tensor_to_rows(t: &Tensor) -> Rows {
    let w = t.shape().get(1).copied().unwrap_or(t.len()).max(1);
    t.data().chunks(w).map(<[f32]>::to_vec).collect()
}

fn to_box(b: BoxTuple) -> BoxPrompt {
    BoxPrompt::new(b.0, b.1, b.2, b.3)
}

fn parse_variant(name: &str) -> PyResult<HyperMapVariant> {
    match name {
        "kan" => Ok(HyperMapVariant::Kan),
        "mlp" => Ok(HyperMapVariant::PlainMlp),
        other => Err(PyValueError::new_err(format!("variant must be 'kan' or 'mlp', got {other:?}"))),
    }
}

fn prompted(images: &[Rows], boxes: &[BoxTuple]) -> PyResult<Vec<(Tensor, BoxPrompt)>> {
    if images.len() != boxes.len() {
        return Err(PyValueError::new_err("images and boxes differ in length"));
    }
    images
        .iter()
        .zip(boxes)
        .map(|(img, &b)| Ok((rows_to_tensor(img).map_err(py_err)?, to_box(b))))
        .collect()
}

#[pyclass(name = "DecoderModel", module = "segbayes_py", skip_from_py_object)]
#[derive(Clone)]
struct PyDecoderModel {
    inner: DecoderModel,
}

#[pymethods]
impl PyDecoderModel {
    /// Seeded model with default dimensions; `prior` adds the dark-region
    /// detector, otherwise every weight is random.
    #[new]
    #[pyo3(signature = (seed=0, variant="kan", prior=true))]
    fn new(seed: u64, variant: &str, prior: bool) -> PyResult<Self> {
        let v = parse_variant(variant)?;
        let dims = DecoderDims::default();
        let inner = if prior {
            DecoderModel::intensity_prior(dims, seed, v)
        } else {
            DecoderModel::random(dims, seed, v)
        };
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: load_model(path).map_err(py_err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_model(path, &self.inner).map_err(py_err)
    }

    #[getter]
    fn token_dim(&self) -> usize {
        self.inner.dims.token_dim
    }

    #[getter]
    fn channels(&self) -> usize {
        self.inner.dims.channels
    }

    #[getter]
    fn variant(&self) -> &'static str {
        match self.inner.hyper_map.variant() {
            HyperMapVariant::Kan => "kan",
            HyperMapVariant::PlainMlp => "mlp",
        }
    }

    fn kept_channels(&self) -> Vec<usize> {
        self.inner.kept_channels()
    }

    fn parameter_count(&self) -> usize {
        self.inner.parameter_count()
    }

    fn mask_combination_multiplies(&self, pixels: usize) -> usize {
        self.inner.mask_combination_multiplies(pixels)
    }

    /// Noise-free probability mask.
    fn deterministic_mask(&self, image: Rows, prompt: BoxTuple) -> PyResult<Rows> {
        let img = rows_to_tensor(&image).map_err(py_err)?;
        let m = tvbi::deterministic_mask(&self.inner, &img, &to_box(prompt)).map_err(py_err)?;
        Ok(tensor_to_rows(&m))
    }

    /// Positive ratio per channel, the ranking and the kept channels.
    #[pyo3(signature = (images, boxes, keep=4))]
    fn positive_ratio(&self, images: Vec<Rows>, boxes: Vec<BoxTuple>, keep: usize) -> PyResult<(Vec<f32>, Vec<usize>, Vec<usize>)> {
        let items = prompted(&images, &boxes)?;
        let r = positive_ratio(&self.inner, &items, keep).map_err(py_err)?;
        Ok((r.positive_ratio.data().to_vec(), r.ranking, r.kept))
    }

    /// Copy combining only the top `keep` channels by positive ratio.
    #[pyo3(signature = (images, boxes, keep=4))]
    fn pruned(&self, images: Vec<Rows>, boxes: Vec<BoxTuple>, keep: usize) -> PyResult<Self> {
        let items = prompted(&images, &boxes)?;
        let report = positive_ratio(&self.inner, &items, keep).map_err(py_err)?;
        Ok(Self {
            inner: prune(&self.inner, &report).map_err(py_err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "DecoderModel(token_dim={}, channels={}, variant='{}', kept={})",
            self.inner.dims.token_dim,
            self.inner.dims.channels,
            self.variant(),
            self.inner.kept_channels().len()
        )
    }
}

#[pyclass(name = "TokenStats", module = "segbayes_py", skip_from_py_object)]
#[derive(Clone)]
struct PyTokenStats {
    inner: tvbi::TokenStats,
}

#[pymethods]
impl PyTokenStats {
    /// Population statistics of the model's tokens over image/box pairs.
    #[staticmethod]
    fn compute(model: &PyDecoderModel, images: Vec<Rows>, boxes: Vec<BoxTuple>) -> PyResult<Self> {
        let items = prompted(&images, &boxes)?;
        let tokens = collect_tokens(&model.inner, &items).map_err(py_err)?;
        Ok(Self {
            inner: compute_token_stats(&tokens).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn zeros(token_dim: usize) -> Self {
        Self {
            inner: tvbi::TokenStats::zeros(token_dim),
        }
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let c = TensorContainer::read(path).map_err(py_err)?;
        Ok(Self {
            inner: tvbi::TokenStats::from_container(&c).map_err(py_err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.to_container().write(path).map_err(py_err)
    }

    #[getter]
    fn sigma(&self) -> Vec<f32> {
        self.inner.sigma.data().to_vec()
    }

    #[getter]
    fn count(&self) -> usize {
        self.inner.count
    }

    fn scaled(&self, factor: f32) -> Self {
        Self {
            inner: self.inner.scaled(factor),
        }
    }
}

/// Monte-Carlo mean mask and uncertainty.
#[pyfunction]
#[pyo3(signature = (model, image, prompt, stats, k=10, seed=0, parallel=false))]
fn infer(
    py: Python<'_>,
    model: &PyDecoderModel,
    image: Rows,
    prompt: BoxTuple,
    stats: &PyTokenStats,
    k: usize,
    seed: u64,
    parallel: bool,
) -> PyResult<(Rows, Rows)> {
    let img = rows_to_tensor(&image).map_err(py_err)?;
    let (m, s, b) = (&model.inner, &stats.inner, to_box(prompt));
    let p = py
        .detach(|| {
            if parallel {
                tvbi::infer_parallel(m, &img, &b, s, k, seed)
            } else {
                tvbi::infer(m, &img, &b, s, k, seed)
            }
        })
        .map_err(py_err)?;
    Ok((tensor_to_rows(&p.mean_mask), tensor_to_rows(&p.uncertainty)))
}

/// Self-supervised spline training; returns the trained model and the loss
/// trace as `(iteration, l_unw, l_feat, total, mu)` tuples.
#[pyfunction]
#[pyo3(signature = (model, images, regions, iterations=2000, learning_rate=1e-4, seed=0, k_train=10))]
fn train(
    py: Python<'_>,
    model: &PyDecoderModel,
    images: Vec<Rows>,
    regions: Vec<Rows>,
    iterations: usize,
    learning_rate: f64,
    seed: u64,
    k_train: usize,
) -> PyResult<(PyDecoderModel, Vec<(usize, f64, f64, f64, f64)>)> {
    if images.len() != regions.len() {
        return Err(PyValueError::new_err("images and regions differ in length"));
    }
    let items: Vec<(Tensor, Tensor)> = images
        .iter()
        .zip(&regions)
        .map(|(i, r)| Ok((rows_to_tensor(i)?, rows_to_tensor(r)?)))
        .collect::<segbayes::Result<_>>()
        .map_err(py_err)?;
    let config = TrainConfig {
        max_iterations: iterations,
        learning_rate,
        seed,
        k_train,
        ..TrainConfig::default()
    };
    let m = &model.inner;
    let out = py.detach(|| train_sokan(m, &items, &config)).map_err(py_err)?;
    let trace = out.trace.iter().map(|r| (r.iteration, r.l_unw, r.l_feat, r.total, r.mu)).collect();
    Ok((PyDecoderModel { inner: out.model }, trace))
}

#[pyfunction]
fn dice(a: Rows, b: Rows) -> PyResult<f64> {
    let (a, b) = (rows_to_tensor(&a).map_err(py_err)?, rows_to_tensor(&b).map_err(py_err)?);
    toolkit::dice(&a, &b).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (mask, pixels=10))]
fn expand_box(mask: Rows, pixels: usize) -> PyResult<BoxTuple> {
    let b = toolkit::expand_box(&rows_to_tensor(&mask).map_err(py_err)?, pixels).map_err(py_err)?;
    Ok((b.x0, b.y0, b.x1, b.y1))
}

/// Phantom image and lesion mask drawn from stream `index` of `seed`.
#[pyfunction]
#[pyo3(signature = (size=256, seed=0, index=0))]
fn synth_phantom(size: usize, seed: u64, index: u64) -> PyResult<(Rows, Rows)> {
    let (img, mask) =
        toolkit::synth_phantom(&PhantomConfig::sized(size), &mut RngStream::new(seed, index)).map_err(py_err)?;
    Ok((tensor_to_rows(&img), tensor_to_rows(&mask)))
}

#[pyfunction]
fn read_pgm(path: &str) -> PyResult<Rows> {
    Ok(tensor_to_rows(&toolkit::read_pgm(path).map_err(py_err)?))
}

#[pyfunction]
fn write_pgm(path: &str, image: Rows) -> PyResult<()> {
    toolkit::write_pgm(path, &rows_to_tensor(&image).map_err(py_err)?).map_err(py_err)
}

#[pymodule]
fn segbayes_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDecoderModel>()?;
    m.add_class::<PyTokenStats>()?;
    m.add_function(wrap_pyfunction!(infer, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(dice, m)?)?;
    m.add_function(wrap_pyfunction!(expand_box, m)?)?;
    m.add_function(wrap_pyfunction!(synth_phantom, m)?)?;
    m.add_function(wrap_pyfunction!(read_pgm, m)?)?;
    m.add_function(wrap_pyfunction!(write_pgm, m)?)?;
    Ok(())
}
