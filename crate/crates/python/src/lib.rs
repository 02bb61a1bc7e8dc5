//! Python module `riemopt`: thin wrappers over `riemopt-core`.

use nalgebra::DMatrix;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use riemopt_core::gd::{gd_solve, GdConfig, GdMode};
use riemopt_core::rtr::rtr_solve;
use riemopt_core::sdp::{default_rank, solve_relaxation};
use riemopt_core::seed::rng_for;
use riemopt_core::verify::{parse_trace, verify_bounds, CsvConfigs, VerifyOptions};
use riemopt_core::{BmSolution, Error, Manifold, Problem, RtrConfig, SdpInstance};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Numerical(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn dense(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, Error> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::Format("expected a non-empty square matrix".into()));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn status_name<T: serde::Serialize>(s: &T) -> String {
    serde_json::to_value(s).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

/// Outcome of a Rayleigh-quotient solve.
#[derive(Debug)]
pub struct RayleighRun {
    pub x: Vec<f64>,
    pub f: f64,
    pub gradnorm: f64,
    pub iterations: usize,
    pub status: String,
    pub trace_json: String,
}

/// Minimize `½ xᵀAx` on the unit sphere from a seeded random start.
pub fn run_rayleigh(
    a: &[Vec<f64>],
    solver: &str,
    eps_g: f64,
    eps_h: Option<f64>,
    lipschitz: Option<f64>,
    max_iters: Option<usize>,
    seed: u64,
) -> Result<RayleighRun, Error> {
    let p = Problem::rayleigh(dense(a)?)?;
    let x0 = p.manifold().random_point(&mut rng_for(seed, 0));
    match solver {
        "gd-fixed" | "gd-armijo" => {
            if eps_h.is_some() {
                return Err(Error::Contract("eps_h applies to the trust-region solver only".into()));
            }
            let mode = if solver == "gd-fixed" { GdMode::FixedStep } else { GdMode::Armijo };
            let mut cfg = GdConfig { eps_g, lipschitz, mode, ..GdConfig::default() };
            if let Some(m) = max_iters {
                cfg.max_iters = m;
            }
            let (x, t) = gd_solve(&p, &x0, &cfg).map_err(|f| f.error)?;
            let last = t.records.last().expect("trace has a final record");
            Ok(RayleighRun {
                f: last.f,
                gradnorm: last.gradnorm,
                iterations: t.iterations(),
                status: t.status.map(|s| status_name(&s)).unwrap_or_default(),
                trace_json: t.to_json()?,
                x: x.coords().to_vec(),
            })
        }
        "rtr" => {
            let mut cfg = RtrConfig { eps_g, eps_h, ..RtrConfig::for_manifold(p.manifold()) };
            if let Some(m) = max_iters {
                cfg.max_iters = m;
            }
            let out = rtr_solve(&p, &x0, &cfg).map_err(|f| f.error)?;
            let last = out.trace.records.last().expect("trace has a final record");
            Ok(RayleighRun {
                f: last.f,
                gradnorm: last.gradnorm,
                iterations: out.trace.iterations(),
                status: out.trace.status.map(|s| status_name(&s)).unwrap_or_default(),
                trace_json: out.trace.to_json()?,
                x: out.x.coords().to_vec(),
            })
        }
        other => Err(Error::Contract(format!("unknown solver {other:?}; use gd-fixed, gd-armijo or rtr"))),
    }
}

/// Burer-Monteiro solve of the max-cut relaxation `min ⟨C, X⟩`, `diag X = 1`.
pub fn run_maxcut(c: &[Vec<f64>], p: Option<usize>, eps_g: f64, eps_h: f64, seed: u64) -> Result<BmSolution, Error> {
    let inst = SdpInstance::new(dense(c)?)?;
    let p = p.unwrap_or_else(|| default_rank(inst.n()));
    let cfg = RtrConfig { eps_g, eps_h: Some(eps_h), ..RtrConfig::for_manifold(Manifold::oblique(inst.n(), p)) };
    solve_relaxation(&inst, p, &cfg, seed).map_err(|f| f.error)
}

/// Check a JSON trace against the worst-case bounds.
pub fn run_verify(text: &str) -> Result<(bool, String, String), Error> {
    let trace = parse_trace(text, &CsvConfigs::default())?;
    let report = verify_bounds(&trace, &VerifyOptions::default())?;
    Ok((report.passed(), report.summary(), report.to_json()?))
}

#[pyfunction]
#[pyo3(signature = (a, solver = "rtr", eps_g = 1e-6, eps_h = None, lipschitz = None, max_iters = None, seed = 0))]
fn solve_rayleigh<'py>(
    py: Python<'py>,
    a: Vec<Vec<f64>>,
    solver: &str,
    eps_g: f64,
    eps_h: Option<f64>,
    lipschitz: Option<f64>,
    max_iters: Option<usize>,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let r = py.detach(|| run_rayleigh(&a, solver, eps_g, eps_h, lipschitz, max_iters, seed)).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("x", r.x)?;
    d.set_item("f", r.f)?;
    d.set_item("gradnorm", r.gradnorm)?;
    d.set_item("iterations", r.iterations)?;
    d.set_item("status", r.status)?;
    d.set_item("trace_json", r.trace_json)?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (c, p = None, eps_g = 1e-6, eps_h = 1e-5, seed = 0))]
fn maxcut<'py>(
    py: Python<'py>,
    c: Vec<Vec<f64>>,
    p: Option<usize>,
    eps_g: f64,
    eps_h: f64,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let s = py.detach(|| run_maxcut(&c, p, eps_g, eps_h, seed)).map_err(to_py)?;
    let y: Vec<Vec<f64>> = s.y.coords().chunks(s.p).map(<[f64]>::to_vec).collect();
    let d = PyDict::new(py);
    d.set_item("n", s.n)?;
    d.set_item("p", s.p)?;
    d.set_item("objective", s.objective)?;
    d.set_item("lower_bound", s.lower_bound())?;
    d.set_item("gap_bound", s.gap_bound)?;
    d.set_item("lambda_min_S", s.lambda_min_s)?;
    d.set_item("feasibility", s.feasibility())?;
    d.set_item("status", status_name(&s.status))?;
    d.set_item("iterations", s.iterations)?;
    d.set_item("y", y)?;
    Ok(d)
}

/// Returns `(passed, summary, report_json)`.
#[pyfunction]
fn verify_trace(py: Python<'_>, text: &str) -> PyResult<(bool, String, String)> {
    py.detach(|| run_verify(text)).map_err(to_py)
}

#[pymodule]
fn riemopt(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(solve_rayleigh, m)?)?;
    m.add_function(wrap_pyfunction!(maxcut, m)?)?;
    m.add_function(wrap_pyfunction!(verify_trace, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(d: &[f64]) -> Vec<Vec<f64>> {
        (0..d.len()).map(|i| (0..d.len()).map(|j| if i == j { d[i] } else { 0.0 }).collect()).collect()
    }

    #[test]
    fn rayleigh_reaches_half_the_smallest_eigenvalue() {
        let a = diag(&[3.0, -1.0, 2.0, 0.5]);
        for solver in ["gd-armijo", "rtr"] {
            let r = run_rayleigh(&a, solver, 1e-8, None, None, None, 1).unwrap();
            assert!((r.f + 0.5).abs() < 1e-10, "{solver}: f = {}", r.f);
            assert!(r.gradnorm <= 1e-8);
        }
        let r = run_rayleigh(&a, "gd-fixed", 1e-8, None, Some(8.0), None, 1).unwrap();
        assert_eq!(r.status, "grad_tolerance_met");
    }

    #[test]
    fn rejects_bad_input() {
        assert!(run_rayleigh(&[vec![1.0, 2.0]], "rtr", 1e-6, None, None, None, 0).is_err());
        assert!(run_rayleigh(&diag(&[1.0, 2.0]), "newton", 1e-6, None, None, None, 0).is_err());
        assert!(run_rayleigh(&diag(&[1.0, 2.0]), "gd-armijo", 1e-6, Some(1e-3), None, None, 0).is_err());
    }

    #[test]
    fn maxcut_on_two_nodes() {
        let s = run_maxcut(&[vec![0.0, 1.0], vec![1.0, 0.0]], None, 1e-8, 1e-6, 0).unwrap();
        assert_eq!(s.p, 3);
        assert!((s.objective + 2.0).abs() < 1e-6);
    }

    #[test]
    fn verify_round_trip() {
        let r = run_rayleigh(&diag(&[3.0, -1.0, 2.0]), "rtr", 1e-8, Some(1e-5), None, None, 2).unwrap();
        let (passed, summary, json) = run_verify(&r.trace_json).unwrap();
        assert!(passed, "{summary}");
        assert!(json.contains("boundreport-v1"));
    }
}
