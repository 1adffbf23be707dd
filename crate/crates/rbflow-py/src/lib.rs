//! Python module `rbflow_py`: load reduced models, solve queries, run the
//! offline stage.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rbflow::config::PipelineConfig;
use rbflow::geometry::RotationProfile;
use rbflow::online::{self, OnlineOptions, SolverKind};
use rbflow::pipeline::{self, StageStatus};
use rbflow::reduction::ReducedModel;
use rbflow::ParameterPoint;
use std::path::PathBuf;

fn err(e: rbflow::Error) -> PyErr {
    match e {
        rbflow::Error::InvalidInput(m) => PyValueError::new_err(m),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

#[pyclass(frozen, name = "Model")]
pub struct Model {
    rm: ReducedModel,
}

#[pymethods]
impl Model {
    #[getter]
    fn kind(&self) -> &'static str {
        self.rm.kind.name()
    }

    /// (M_V, M_S, M_P)
    #[getter]
    fn sizes(&self) -> (usize, usize, usize) {
        (self.rm.mv, self.rm.ms, self.rm.mp)
    }

    /// ((phi_min, phi_max) in degrees, (uinf_min, uinf_max))
    #[getter]
    fn param_box(&self) -> ((f64, f64), (f64, f64)) {
        let b = self.rm.param_box;
        ((b.phi_min.to_degrees(), b.phi_max.to_degrees()), (b.uinf_min, b.uinf_max))
    }

    #[getter]
    fn expected_error(&self) -> f64 {
        self.rm.expected_error()
    }

    /// Names of the solvers this model supports.
    fn solvers(&self) -> Vec<&'static str> {
        SolverKind::ALL.into_iter().filter(|s| s.supports(&self.rm).is_ok()).map(|s| s.name()).collect()
    }

    /// Solve at angle `phi` (degrees) and inflow speed `uinf`. Returns a dict
    /// with reduced coefficients, Newton statistics and phase timings; with
    /// `lift=True` also the full velocity and pressure coefficient vectors.
    #[pyo3(signature = (phi, uinf, solver = "coupled", lift = false))]
    fn solve<'py>(&self, py: Python<'py>, phi: f64, uinf: f64, solver: &str, lift: bool) -> PyResult<Bound<'py, PyDict>> {
        let kind = SolverKind::parse(solver).ok_or_else(|| PyValueError::new_err(format!("unknown solver {solver:?}")))?;
        let mu = ParameterPoint::from_degrees(phi, uinf);
        let model = if kind == SolverKind::CoupledUnstab { self.rm.truncate(self.rm.mv, 0, self.rm.mp).map_err(err)? } else { self.rm.clone() };
        let sol = py.detach(|| online::solve(&model, mu, kind, &OnlineOptions::default())).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("solver", kind.name())?;
        d.set_item("converged", sol.converged)?;
        d.set_item("newton_iters", sol.newton_iters)?;
        d.set_item("u_coeffs", sol.u_coeffs.clone())?;
        d.set_item("s_coeffs", sol.s_coeffs.clone())?;
        d.set_item("p_coeffs", sol.p_coeffs.clone())?;
        d.set_item("t_assembly", sol.times.assembly)?;
        d.set_item("t_solve", sol.times.solve)?;
        d.set_item("t_recovery", sol.times.recovery)?;
        if lift {
            let (u, p) = online::lift_solution(&model, &sol);
            d.set_item("u", u)?;
            d.set_item("p", p)?;
        }
        Ok(d)
    }

    fn __repr__(&self) -> String {
        format!("Model(kind={:?}, M_V={}, M_S={}, M_P={})", self.rm.kind.name(), self.rm.mv, self.rm.ms, self.rm.mp)
    }
}

#[pyfunction]
fn load_model(path: PathBuf) -> PyResult<Model> {
    Ok(Model { rm: rbflow::store::load_model(&path).map_err(err)? })
}

/// Run (or resume) the offline stage. Returns [(stage, "ran" | "skipped")].
#[pyfunction]
#[pyo3(signature = (out, config = None))]
fn run_offline(py: Python<'_>, out: PathBuf, config: Option<PathBuf>) -> PyResult<Vec<(String, &'static str)>> {
    let cfg = match config {
        Some(p) => PipelineConfig::load(&p).map_err(err)?,
        None => PipelineConfig::default(),
    };
    let summary = py.detach(|| pipeline::run_offline(&cfg, &out)).map_err(err)?;
    Ok(summary
        .stages
        .into_iter()
        .map(|(s, st)| (s, if st == StageStatus::Ran { "ran" } else { "skipped" }))
        .collect())
}

/// Closed NACA 00xx polyline in chord units.
#[pyfunction]
#[pyo3(signature = (thickness = 0.15, n_points = 96))]
fn naca_profile(thickness: f64, n_points: usize) -> PyResult<Vec<(f64, f64)>> {
    let p = rbflow::geometry::naca_profile(thickness, n_points).map_err(err)?;
    Ok(p.points.iter().map(|q| (q[0], q[1])).collect())
}

/// Rotation profile θ(r) and θ'(r) of the default deformation.
#[pyfunction]
fn theta(r: f64) -> (f64, f64) {
    RotationProfile::default().theta(r)
}

#[pymodule]
fn rbflow_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(load_model, m)?)?;
    m.add_function(wrap_pyfunction!(run_offline, m)?)?;
    m.add_function(wrap_pyfunction!(naca_profile, m)?)?;
    m.add_function(wrap_pyfunction!(theta, m)?)?;
    Ok(())
}
