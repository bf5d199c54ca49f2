//! Python bindings: meshes, assembled systems, spectral summaries, training
//! and the experiment drivers.

use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use feonet::evaluation::ReferenceSet;
use feonet::experiments::{run_scenario, ExperimentConfig, Outcome};
use feonet::fem::{assemble, solve_reference, AssembledSystem, LoadAssembler, PdeCoefficients};
use feonet::forcing::{sample_many, ForcingDistribution, ForcingFamily, ForcingSample};
use feonet::mesh::{build_structured_square, build_uniform_interval, load_mesh, ElementFamily, Rect};
use feonet::neural::NetworkArchitecture;
use feonet::spectral::{build_preconditioner, spectral_summary, PreconditionerKind};
use feonet::training::{train, Feonet, LossKind, TrainConfig};
use feonet::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::InvalidArgument(_) | Error::Config(_) | Error::IllPosed(_) | Error::MeshLoad { .. } => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

#[pyclass(name = "Mesh", frozen)]
struct PyMesh {
    inner: Arc<feonet::mesh::Mesh>,
}

#[pymethods]
impl PyMesh {
    /// Uniform mesh of `[a, b]`; `degree` is 1 or 2.
    #[staticmethod]
    #[pyo3(signature = (a, b, elements, degree = 1))]
    fn interval(a: f64, b: f64, elements: usize, degree: usize) -> PyResult<Self> {
        let family = match degree {
            1 => ElementFamily::P1Interval,
            2 => ElementFamily::P2Interval,
            _ => return Err(PyValueError::new_err("degree must be 1 or 2")),
        };
        let m = build_uniform_interval(a, b, elements, family).map_err(py_err)?;
        Ok(Self { inner: Arc::new(m) })
    }

    /// Structured triangulation of the unit square with an optional hole
    /// `(x0, x1, y0, y1)`.
    #[staticmethod]
    #[pyo3(signature = (n, hole = None))]
    fn square(n: usize, hole: Option<(f64, f64, f64, f64)>) -> PyResult<Self> {
        let hole = hole.map(|(x0, x1, y0, y1)| Rect { x0, x1, y0, y1 });
        let m = build_structured_square(n, n, hole).map_err(py_err)?;
        Ok(Self { inner: Arc::new(m) })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: Arc::new(load_mesh(path).map_err(py_err)?),
        })
    }

    #[getter]
    fn n_dofs(&self) -> usize {
        self.inner.n_dofs()
    }

    #[getter]
    fn n_elements(&self) -> usize {
        self.inner.n_elements()
    }

    /// `(h, h_min, gamma)`.
    fn metrics(&self) -> (f64, f64, f64) {
        let m = self.inner.metrics();
        (m.h, m.h_min, m.gamma)
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }
}

#[pyclass(name = "System", frozen)]
struct PySystem {
    inner: Arc<AssembledSystem>,
}

#[pymethods]
impl PySystem {
    /// Assembles `−∇·(a∇u) + b·∇u + cu` with constant coefficients.
    #[new]
    #[pyo3(signature = (mesh, diffusion = 1.0, convection = (0.0, 0.0), reaction = 0.0))]
    fn new(mesh: &PyMesh, diffusion: f64, convection: (f64, f64), reaction: f64) -> PyResult<Self> {
        let coeffs = PdeCoefficients::constant(diffusion, [convection.0, convection.1], reaction);
        Ok(Self {
            inner: Arc::new(assemble(&mesh.inner, &coeffs).map_err(py_err)?),
        })
    }

    #[getter]
    fn n_dofs(&self) -> usize {
        self.inner.n_dofs()
    }

    /// Dense rows of `A`.
    fn matrix(&self) -> Vec<Vec<f64>> {
        let d = self.inner.a.to_dense();
        (0..d.nrows()).map(|i| d.row(i).iter().copied().collect()).collect()
    }

    fn solve(&self, load: Vec<f64>) -> PyResult<Vec<f64>> {
        solve_reference(&self.inner, &load).map_err(py_err)
    }

    /// `(λ_min, λ_max, σ_min, σ_max, κ)`; `preconditioner` is one of
    /// identity, jacobi, spai and is applied from the left.
    #[pyo3(signature = (preconditioner = None))]
    fn spectrum(&self, preconditioner: Option<&str>) -> PyResult<(f64, f64, f64, f64, f64)> {
        let a = match preconditioner {
            None => self.inner.a.clone(),
            Some(k) => {
                let kind: PreconditionerKind = k.parse().map_err(py_err)?;
                build_preconditioner(&self.inner.a, kind, None)
                    .map_err(py_err)?
                    .apply_left(&self.inner.a)
            }
        };
        let s = spectral_summary(&a, a.is_symmetric(1e-12)).map_err(py_err)?;
        Ok((s.lambda_min, s.lambda_max, s.sigma_min, s.sigma_max, s.kappa))
    }
}

fn distribution(dim: usize, boxes: Option<Vec<(f64, f64)>>) -> PyResult<ForcingDistribution> {
    let family = match dim {
        1 => ForcingFamily::SinCos1d,
        2 => ForcingFamily::SinCos2d,
        _ => return Err(PyValueError::new_err("dimension must be 1 or 2")),
    };
    match boxes {
        None => Ok(ForcingDistribution::standard(family)),
        Some(b) => ForcingDistribution::new(family, b.into_iter().map(|(lo, hi)| [lo, hi]).collect()).map_err(py_err),
    }
}

#[pyclass(name = "Model", frozen)]
struct PyModel {
    inner: Feonet,
    system: Arc<AssembledSystem>,
    #[pyo3(get)]
    loss_history: Vec<f64>,
}

#[pymethods]
impl PyModel {
    /// Coefficients for `ω = (n₁, n₂, m₁, m₂)`.
    fn predict(&self, omega: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.predict(&omega).map_err(py_err)
    }

    /// Mean relative L² error against Galerkin solutions on `count` fresh
    /// samples.
    fn test_error(&self, seed: u64, count: usize) -> PyResult<f64> {
        let samples = sample_many(&self.inner.dist, seed, count);
        let refs = ReferenceSet::new(&self.system, &self.inner.dist, samples.clone(), None).map_err(py_err)?;
        let pred = self.inner.predict_batch(&samples).map_err(py_err)?;
        Ok(refs.galerkin_error(&pred).mean_rel_l2)
    }
}

/// Trains a network with the residual loss (or the SPAI-preconditioned one).
#[pyfunction]
#[pyo3(signature = (system, samples, epochs, hidden = 32, depth = 2, lr = 1e-3, seed = 0, boxes = None, preconditioned = false))]
#[allow(clippy::too_many_arguments)]
fn train_model(
    py: Python<'_>,
    system: &PySystem,
    samples: usize,
    epochs: usize,
    hidden: usize,
    depth: usize,
    lr: f64,
    seed: u64,
    boxes: Option<Vec<(f64, f64)>>,
    preconditioned: bool,
) -> PyResult<PyModel> {
    let sys = system.inner.clone();
    let dist = distribution(sys.mesh.dim(), boxes)?;
    let arch = NetworkArchitecture::mlp(dist.dim(), hidden, depth, sys.n_dofs()).map_err(py_err)?;
    let mut cfg = TrainConfig::new(arch, samples, epochs, seed);
    cfg.adam.lr = lr;
    if preconditioned {
        let p = build_preconditioner(&sys.a, PreconditionerKind::Spai, None).map_err(py_err)?;
        cfg.loss = LossKind::preconditioned(p);
    }
    let report = py
        .detach(|| train(&LoadAssembler::new(&sys.mesh), &sys, &dist, &cfg))
        .map_err(py_err)?;
    Ok(PyModel {
        inner: report.model,
        system: sys,
        loss_history: report.loss_history,
    })
}

/// Forcing parameters of draws `0..count` of the stream `seed`.
#[pyfunction]
#[pyo3(signature = (seed, count, dim = 1, boxes = None))]
fn sample_forcing(seed: u64, count: usize, dim: usize, boxes: Option<Vec<(f64, f64)>>) -> PyResult<Vec<Vec<f64>>> {
    let d = distribution(dim, boxes)?;
    Ok(sample_many(&d, seed, count)
        .into_iter()
        .map(|s: ForcingSample| s.omega)
        .collect())
}

#[pyfunction]
fn preset(name: &str) -> PyResult<String> {
    ExperimentConfig::preset(name)
        .map(|c| c.to_toml())
        .ok_or_else(|| PyValueError::new_err(format!("unknown preset '{name}'")))
}

/// Runs a TOML experiment config and returns its main CSV.
#[pyfunction]
fn run_experiment(py: Python<'_>, config: &str) -> PyResult<String> {
    let cfg = ExperimentConfig::from_toml(config).map_err(py_err)?;
    let out = py.detach(|| run_scenario(&cfg)).map_err(py_err)?;
    Ok(match out {
        Outcome::Sweep(s) => s.to_csv(),
        Outcome::Barron(b) => b.to_csv(),
        Outcome::Cond(c) => c.to_csv(),
    })
}

#[pymodule]
fn feonet_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMesh>()?;
    m.add_class::<PySystem>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(train_model, m)?)?;
    m.add_function(wrap_pyfunction!(sample_forcing, m)?)?;
    m.add_function(wrap_pyfunction!(preset, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
