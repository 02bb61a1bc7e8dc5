//! Cost functions bound to a manifold.
//!
//! A [`Problem`] holds an ambient cost, its ambient gradient and optionally an
//! ambient Hessian-vector product. Riemannian derivatives follow from the
//! submanifold geometry: the gradient is the tangent projection of the ambient
//! gradient, and the Hessian is the projected ambient Hessian plus the
//! manifold's curvature correction. The pullback `f̂_x = f ∘ R_x` and the
//! Taylor-order checks operate on those.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{all_finite, axpy};
use crate::manifold::{fitted_order, Manifold, Point, TangentVector};

pub type CostFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
pub type GradFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;
pub type HessVecFn = dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync;

/// Smallest gap accepted on a Taylor slope: `pass ⇔ slope ≥ order − 0.2`.
pub const TAYLOR_SLOPE_SLACK: f64 = 0.2;

/// Number of log-spaced step sizes in `[1e-8, 1]` used by the Taylor checks.
pub const TAYLOR_POINTS: usize = 20;

#[derive(Debug, Default)]
struct EvalCounters {
    cost: AtomicU64,
    grad: AtomicU64,
    hess: AtomicU64,
}

/// Snapshot of callback invocation counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCounts {
    pub cost: u64,
    pub grad: u64,
    pub hess: u64,
}

impl std::ops::Sub for EvalCounts {
    type Output = EvalCounts;
    fn sub(self, rhs: EvalCounts) -> EvalCounts {
        EvalCounts {
            cost: self.cost - rhs.cost,
            grad: self.grad - rhs.grad,
            hess: self.hess - rhs.hess,
        }
    }
}

/// A smooth cost on a manifold.
pub struct Problem {
    manifold: Manifold,
    cost: Arc<CostFn>,
    grad: Arc<GradFn>,
    hess: Option<Arc<HessVecFn>>,
    counters: EvalCounters,
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("manifold", &self.manifold)
            .field("has_hessian", &self.hess.is_some())
            .field("evals", &self.eval_counts())
            .finish()
    }
}

impl Problem {
    pub fn new<C, G>(manifold: Manifold, cost: C, grad: G) -> Self
    where
        C: Fn(&[f64]) -> f64 + Send + Sync + 'static,
        G: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        Problem {
            manifold,
            cost: Arc::new(cost),
            grad: Arc::new(grad),
            hess: None,
            counters: EvalCounters::default(),
        }
    }

    pub fn with_hessian<H>(mut self, hess: H) -> Self
    where
        H: Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        self.hess = Some(Arc::new(hess));
        self
    }

    /// Copy of this problem sharing the callbacks but with a fresh counter set.
    pub fn fresh(&self) -> Self {
        Problem {
            manifold: self.manifold,
            cost: self.cost.clone(),
            grad: self.grad.clone(),
            hess: self.hess.clone(),
            counters: EvalCounters::default(),
        }
    }

    /// Same callbacks with the Hessian dropped.
    pub fn without_hessian(&self) -> Self {
        let mut p = self.fresh();
        p.hess = None;
        p
    }

    /// `f(x) = ½ xᵀAx` on the sphere `S^{n-1}`. Critical points are the unit
    /// eigenvectors of `A`; the minimum value is `λ_min(A)/2`.
    pub fn rayleigh(a: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::contract("Rayleigh quotient needs a square matrix"));
        }
        let a = Arc::new(a);
        let (a1, a2, a3) = (a.clone(), a.clone(), a);
        Ok(Problem::new(
            Manifold::sphere(n),
            move |x| 0.5 * DVector::from_column_slice(x).dot(&(&*a1 * DVector::from_column_slice(x))),
            move |x| (&*a2 * DVector::from_column_slice(x)).as_slice().to_vec(),
        )
        .with_hessian(move |_x, v| (&*a3 * DVector::from_column_slice(v)).as_slice().to_vec()))
    }

    /// `f(x) = ½ xᵀAx + bᵀx` restricted to `manifold`.
    pub fn quadratic(manifold: Manifold, a: DMatrix<f64>, b: Vec<f64>) -> Result<Self> {
        let n = manifold.ambient_dim();
        if a.nrows() != n || a.ncols() != n || b.len() != n {
            return Err(Error::contract("quadratic data does not match the ambient dimension"));
        }
        let a = Arc::new(a);
        let b = Arc::new(DVector::from_vec(b));
        let (a1, a2, a3, b1, b2) = (a.clone(), a.clone(), a, b.clone(), b);
        Ok(Problem::new(
            manifold,
            move |x| {
                let xv = DVector::from_column_slice(x);
                0.5 * xv.dot(&(&*a1 * &xv)) + b1.dot(&xv)
            },
            move |x| (&*a2 * DVector::from_column_slice(x) + &*b2).as_slice().to_vec(),
        )
        .with_hessian(move |_x, v| (&*a3 * DVector::from_column_slice(v)).as_slice().to_vec()))
    }

    pub fn manifold(&self) -> Manifold {
        self.manifold
    }

    pub fn has_hessian(&self) -> bool {
        self.hess.is_some()
    }

    pub fn eval_counts(&self) -> EvalCounts {
        EvalCounts {
            cost: self.counters.cost.load(Ordering::Relaxed),
            grad: self.counters.grad.load(Ordering::Relaxed),
            hess: self.counters.hess.load(Ordering::Relaxed),
        }
    }

    fn check_point(&self, x: &Point) -> Result<()> {
        if x.manifold() != self.manifold {
            return Err(Error::contract("point does not belong to the problem's manifold"));
        }
        x.check_feasible()
    }

    pub fn cost(&self, x: &Point) -> f64 {
        self.counters.cost.fetch_add(1, Ordering::Relaxed);
        (self.cost)(x.coords())
    }

    pub fn ambient_grad(&self, x: &Point) -> Vec<f64> {
        self.counters.grad.fetch_add(1, Ordering::Relaxed);
        (self.grad)(x.coords())
    }

    /// Riemannian gradient `Proj_x ∇f(x)`.
    pub fn riemannian_grad(&self, x: &Point) -> Result<TangentVector> {
        Ok(self.grad_parts(x)?.1)
    }

    /// Ambient and Riemannian gradient from a single callback invocation.
    pub fn grad_parts(&self, x: &Point) -> Result<(Vec<f64>, TangentVector)> {
        self.check_point(x)?;
        let eg = self.ambient_grad(x);
        if eg.len() != self.manifold.ambient_dim() {
            return Err(Error::contract("gradient callback returned the wrong dimension"));
        }
        if !all_finite(&eg) {
            return Err(Error::numerical("non-finite gradient"));
        }
        let rg = self.manifold.project_unchecked(x, &eg);
        Ok((eg, rg))
    }

    /// Riemannian Hessian applied to `eta`; evaluates the gradient too.
    pub fn riemannian_hess_vec(&self, x: &Point, eta: &TangentVector) -> Result<TangentVector> {
        if self.hess.is_none() {
            return Err(Error::Capability("problem has no Hessian callback".into()));
        }
        let (eg, _) = self.grad_parts(x)?;
        self.riemannian_hess_vec_with_grad(x, &eg, eta)
    }

    /// Riemannian Hessian applied to `eta`, reusing an ambient gradient at `x`.
    pub fn riemannian_hess_vec_with_grad(
        &self,
        x: &Point,
        egrad: &[f64],
        eta: &TangentVector,
    ) -> Result<TangentVector> {
        let hess = self
            .hess
            .as_ref()
            .ok_or_else(|| Error::Capability("problem has no Hessian callback".into()))?;
        if !eta.base().same_as(x) {
            return Err(Error::contract("tangent vector is not based at the given point"));
        }
        self.counters.hess.fetch_add(1, Ordering::Relaxed);
        let eh = hess(x.coords(), eta.coords());
        if eh.len() != self.manifold.ambient_dim() {
            return Err(Error::contract("Hessian callback returned the wrong dimension"));
        }
        let mut out = self.manifold.project_unchecked(x, &eh).into_coords();
        let corr = self.manifold.hessian_correction(x, egrad, eta.coords());
        axpy(1.0, &corr, &mut out);
        if !all_finite(&out) {
            return Err(Error::numerical("non-finite Hessian-vector product"));
        }
        Ok(TangentVector::from_parts(x, out))
    }

    /// `f(R_x(η))`.
    pub fn pullback_eval(&self, x: &Point, eta: &TangentVector) -> Result<f64> {
        let y = self.manifold.retract(x, eta)?;
        Ok(self.cost(&y))
    }

    fn taylor_grid() -> Vec<f64> {
        (0..TAYLOR_POINTS)
            .map(|i| 10f64.powf(-8.0 + 8.0 * i as f64 / (TAYLOR_POINTS - 1) as f64))
            .collect()
    }

    fn check_unit(eta: &TangentVector) -> Result<()> {
        if (eta.norm() - 1.0).abs() > 1e-8 {
            return Err(Error::contract("derivative checks need a unit tangent vector"));
        }
        Ok(())
    }

    /// First-order Taylor residual of the pullback along `η`; slope ≈ 2 when
    /// the gradient is right.
    pub fn check_gradient(&self, x: &Point, eta: &TangentVector) -> Result<TaylorCheckReport> {
        Self::check_unit(eta)?;
        let f0 = self.cost(x);
        let g = self.riemannian_grad(x)?;
        let slope0 = eta.dot(&g);
        self.taylor_report(x, eta, 2.0, |t, ft| {
            let model = f0 + t * slope0;
            ((ft - model).abs(), f0.abs() + ft.abs() + (t * slope0).abs())
        })
    }

    /// Second-order Taylor residual of the pullback along `η`; slope ≈ 3 when
    /// the Hessian is right and the retraction is second order.
    pub fn check_hessian(&self, x: &Point, eta: &TangentVector) -> Result<TaylorCheckReport> {
        if self.hess.is_none() {
            return Err(Error::Capability("problem has no Hessian callback".into()));
        }
        Self::check_unit(eta)?;
        let f0 = self.cost(x);
        let (eg, g) = self.grad_parts(x)?;
        let slope0 = eta.dot(&g);
        let curv = eta.dot(&self.riemannian_hess_vec_with_grad(x, &eg, eta)?);
        self.taylor_report(x, eta, 3.0, |t, ft| {
            let model = f0 + t * slope0 + 0.5 * t * t * curv;
            (
                (ft - model).abs(),
                f0.abs() + ft.abs() + (t * slope0).abs() + (0.5 * t * t * curv).abs(),
            )
        })
    }

    /// Shared Taylor-check driver; `residual(t, f̂(tη))` returns the residual
    /// and the magnitude of the summed terms (for the rounding floor).
    fn taylor_report<F>(&self, x: &Point, eta: &TangentVector, order: f64, residual: F) -> Result<TaylorCheckReport>
    where
        F: Fn(f64, f64) -> (f64, f64),
    {
        let ts = Self::taylor_grid();
        let mut errors = Vec::with_capacity(ts.len());
        let mut floors = Vec::with_capacity(ts.len());
        for &t in &ts {
            let ft = self.pullback_eval(x, &eta.scale(t))?;
            if !ft.is_finite() {
                return Err(Error::numerical("non-finite cost in Taylor check"));
            }
            let (r, mag) = residual(t, ft);
            errors.push(r);
            floors.push(16.0 * f64::EPSILON * (mag + f64::MIN_POSITIVE));
        }
        let fit = fitted_order(&ts, &errors, &floors);
        let pass = fit.slope >= order - TAYLOR_SLOPE_SLACK;
        Ok(TaylorCheckReport {
            ts,
            errors,
            slope: fit.slope,
            expected_order: order,
            window: fit.window,
            pass,
        })
    }

    /// Sampled Lipschitz-type constants of the pullbacks:
    /// `L_g ≈ max 2|f̂(η) − f − ⟨η, g⟩| / ‖η‖²` and, with a Hessian,
    /// `L_H ≈ max 6|f̂(η) − f − ⟨η, g⟩ − ½⟨η, Hη⟩| / ‖η‖³`. These are lower
    /// estimates of the true constants.
    pub fn estimate_lipschitz(&self, samples: &[(Point, TangentVector)]) -> Result<LipschitzEstimate> {
        if samples.is_empty() {
            return Err(Error::contract("Lipschitz estimation needs at least one sample"));
        }
        let mut lg = 0.0f64;
        let mut lh: Option<f64> = self.hess.as_ref().map(|_| 0.0);
        for (x, eta) in samples {
            let r = eta.norm();
            if r == 0.0 {
                continue;
            }
            let f0 = self.cost(x);
            let (eg, g) = self.grad_parts(x)?;
            let fe = self.pullback_eval(x, eta)?;
            let first = fe - f0 - eta.dot(&g);
            if !first.is_finite() {
                return Err(Error::numerical("non-finite cost while sampling Lipschitz constants"));
            }
            lg = lg.max(2.0 * first.abs() / (r * r));
            if let Some(h) = lh.as_mut() {
                let curv = eta.dot(&self.riemannian_hess_vec_with_grad(x, &eg, eta)?);
                *h = h.max(6.0 * (first - 0.5 * curv).abs() / (r * r * r));
            }
        }
        Ok(LipschitzEstimate { lg, lh })
    }

    /// Largest `‖Hess f(x)‖` (operator norm on `T_x M`) over `points`: a
    /// lower estimate of the pullback gradient Lipschitz constant that sees
    /// the extreme curvature random directions miss. Uses a dense tangent
    /// basis, so it costs `dim` Hessian-vector products per point.
    pub fn estimate_hessian_norm(&self, points: &[Point]) -> Result<f64> {
        if self.hess.is_none() {
            return Err(Error::Capability("Hessian norm estimate needs a Hessian callback".into()));
        }
        let mut worst = 0.0f64;
        for x in points {
            let basis = self.manifold.tangent_basis(x)?;
            let d = basis.len();
            if d == 0 {
                continue;
            }
            let egrad = self.ambient_grad(x);
            let mut h = DMatrix::zeros(d, d);
            for (j, v) in basis.vectors.iter().enumerate() {
                let hv = self.riemannian_hess_vec_with_grad(x, &egrad, v)?;
                for (i, u) in basis.vectors.iter().enumerate() {
                    h[(i, j)] = u.dot(&hv);
                }
            }
            let (sym, _) = crate::linalg::symmetrize(&h);
            let ev = crate::linalg::sym_eigenvalues(&sym);
            worst = worst.max(ev[0].abs()).max(ev[d - 1].abs());
        }
        Ok(worst)
    }

    /// Random `(x, η)` pairs with `‖η‖` uniform in `(0, radius]`.
    pub fn lipschitz_samples<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        count: usize,
        radius: f64,
    ) -> Vec<(Point, TangentVector)> {
        (0..count)
            .map(|_| {
                let x = self.manifold.random_point(rng);
                let u = self.manifold.random_unit_tangent(&x, rng);
                let r = radius * (1.0 - rng.random::<f64>());
                let eta = u.scale(r);
                (x, eta)
            })
            .collect()
    }
}

/// Outcome of a Taylor-order derivative check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaylorCheckReport {
    pub ts: Vec<f64>,
    pub errors: Vec<f64>,
    /// Fitted log-log slope; `+∞` when the residual vanishes to rounding.
    pub slope: f64,
    pub expected_order: f64,
    /// `(start, len)` of the sample window behind the slope.
    pub window: Option<(usize, usize)>,
    pub pass: bool,
}

/// Sampled Lipschitz constants of the pullbacks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimate {
    pub lg: f64,
    pub lh: Option<f64>,
}
