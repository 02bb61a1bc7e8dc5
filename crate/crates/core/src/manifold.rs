//! Manifold primitives in ambient coordinates.
//!
//! Three Riemannian submanifolds are shipped: Euclidean space `R^n`, the unit
//! sphere `S^{n-1} ⊂ R^n` and the oblique manifold of `n×p` matrices with unit
//! rows (a product of `n` spheres in `R^p`). Points and tangent vectors are
//! stored as flat ambient vectors; oblique matrices are row-major. All three
//! inherit the Euclidean metric of the embedding space, and each ships a
//! globally defined second-order retraction (plain addition, or a metric
//! projection back onto the manifold).

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, fit_line, norm};

/// Default feasibility tolerance for points and tangent vectors.
pub const DEFAULT_FEAS_TOL: f64 = 1e-9;

/// Vectors whose norm falls below this after projection are dropped while
/// building a tangent basis.
const BASIS_DROP_TOL: f64 = 1e-8;

/// Descriptor of one of the shipped manifolds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Manifold {
    Euclidean { n: usize },
    Sphere { n: usize },
    /// `rows` unit-norm rows of length `cols`.
    Oblique { rows: usize, cols: usize },
}

impl Manifold {
    pub fn euclidean(n: usize) -> Self {
        Manifold::Euclidean { n }
    }

    pub fn sphere(n: usize) -> Self {
        Manifold::Sphere { n }
    }

    pub fn oblique(rows: usize, cols: usize) -> Self {
        Manifold::Oblique { rows, cols }
    }

    /// Intrinsic dimension.
    pub fn dim(&self) -> usize {
        match *self {
            Manifold::Euclidean { n } => n,
            Manifold::Sphere { n } => n.saturating_sub(1),
            Manifold::Oblique { rows, cols } => rows * cols.saturating_sub(1),
        }
    }

    pub fn ambient_dim(&self) -> usize {
        match *self {
            Manifold::Euclidean { n } | Manifold::Sphere { n } => n,
            Manifold::Oblique { rows, cols } => rows * cols,
        }
    }

    /// Every shipped retraction agrees with geodesics to second order.
    pub fn has_second_order_retraction(&self) -> bool {
        true
    }

    pub fn name(&self) -> String {
        match *self {
            Manifold::Euclidean { n } => format!("euclidean({n})"),
            Manifold::Sphere { n } => format!("sphere({n})"),
            Manifold::Oblique { rows, cols } => format!("oblique({rows},{cols})"),
        }
    }

    /// Length of the blocks that must each have unit norm, if any.
    fn block_len(&self) -> Option<usize> {
        match *self {
            Manifold::Euclidean { .. } => None,
            Manifold::Sphere { n } => Some(n),
            Manifold::Oblique { cols, .. } => Some(cols),
        }
    }

    /// Wrap ambient coordinates as a point, checking feasibility with the
    /// default tolerance.
    pub fn point(&self, coords: Vec<f64>) -> Result<Point> {
        self.point_with_tol(coords, DEFAULT_FEAS_TOL)
    }

    pub fn point_with_tol(&self, coords: Vec<f64>, feas_tol: f64) -> Result<Point> {
        if coords.len() != self.ambient_dim() {
            return Err(Error::contract(format!(
                "point has {} coordinates, {} expects {}",
                coords.len(),
                self.name(),
                self.ambient_dim()
            )));
        }
        let p = Point {
            manifold: *self,
            coords: coords.into(),
            feas_tol,
        };
        p.check_feasible()?;
        Ok(p)
    }

    /// Normalize each unit-norm block of `coords` to produce a feasible point.
    pub fn normalize(&self, mut coords: Vec<f64>) -> Result<Point> {
        if coords.len() != self.ambient_dim() {
            return Err(Error::contract("wrong ambient dimension"));
        }
        if let Some(b) = self.block_len() {
            for row in coords.chunks_mut(b) {
                let r = norm(row);
                if r == 0.0 || !r.is_finite() {
                    return Err(Error::contract("cannot normalize a zero block"));
                }
                row.iter_mut().for_each(|v| *v /= r);
            }
        }
        Ok(Point {
            manifold: *self,
            coords: coords.into(),
            feas_tol: DEFAULT_FEAS_TOL,
        })
    }

    /// Random point: standard Gaussian coordinates, normalized blockwise, so
    /// each sphere factor is sampled uniformly.
    pub fn random_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        loop {
            let coords: Vec<f64> = (0..self.ambient_dim()).map(|_| rng.sample(StandardNormal)).collect();
            if let Ok(p) = self.normalize(coords) {
                return p;
            }
        }
    }

    /// Random unit-norm tangent vector at `x`.
    pub fn random_unit_tangent<R: Rng + ?Sized>(&self, x: &Point, rng: &mut R) -> TangentVector {
        loop {
            let v: Vec<f64> = (0..self.ambient_dim()).map(|_| rng.sample(StandardNormal)).collect();
            let t = self.project_unchecked(x, &v);
            let nt = t.norm();
            if nt > 1e-6 {
                return t.scale(1.0 / nt);
            }
        }
    }

    /// Wrap ambient coordinates as a tangent vector at `x`, checking tangency.
    pub fn tangent(&self, x: &Point, coords: Vec<f64>) -> Result<TangentVector> {
        self.check_point(x)?;
        if coords.len() != self.ambient_dim() {
            return Err(Error::contract("tangent vector has wrong ambient dimension"));
        }
        let t = TangentVector {
            base: x.clone(),
            coords,
        };
        t.check_tangent(x.feas_tol)?;
        Ok(t)
    }

    fn check_point(&self, x: &Point) -> Result<()> {
        if x.manifold != *self {
            return Err(Error::contract(format!(
                "point belongs to {}, not {}",
                x.manifold.name(),
                self.name()
            )));
        }
        Ok(())
    }

    /// Riemannian metric: the ambient dot product.
    pub fn inner(&self, x: &Point, u: &TangentVector, v: &TangentVector) -> Result<f64> {
        self.check_point(x)?;
        if !u.base.same_as(x) || !v.base.same_as(x) {
            return Err(Error::contract("tangent vectors are not based at the given point"));
        }
        Ok(dot(&u.coords, &v.coords))
    }

    /// Orthogonal projection of an ambient vector onto `T_x M`.
    pub fn project(&self, x: &Point, v: &[f64]) -> Result<TangentVector> {
        self.check_point(x)?;
        x.check_feasible()?;
        if v.len() != self.ambient_dim() {
            return Err(Error::contract("ambient vector has wrong dimension"));
        }
        Ok(self.project_unchecked(x, v))
    }

    pub(crate) fn project_unchecked(&self, x: &Point, v: &[f64]) -> TangentVector {
        let mut out = v.to_vec();
        if let Some(b) = self.block_len() {
            for (o, xr) in out.chunks_mut(b).zip(x.coords.chunks(b)) {
                let c = dot(xr, o);
                axpy(-c, xr, o);
            }
        }
        TangentVector {
            base: x.clone(),
            coords: out,
        }
    }

    /// Retraction: `x + η` on Euclidean space, blockwise normalization of
    /// `x + η` on the sphere and the oblique manifold. `retract(x, 0)` returns
    /// `x` bit for bit.
    pub fn retract(&self, x: &Point, eta: &TangentVector) -> Result<Point> {
        self.check_point(x)?;
        if !eta.base.same_as(x) {
            return Err(Error::contract("tangent vector is not based at the given point"));
        }
        Ok(self.retract_unchecked(x, &eta.coords))
    }

    pub(crate) fn retract_unchecked(&self, x: &Point, eta: &[f64]) -> Point {
        let mut out: Vec<f64> = x.coords.to_vec();
        match self.block_len() {
            None => axpy(1.0, eta, &mut out),
            Some(b) => {
                for (o, e) in out.chunks_mut(b).zip(eta.chunks(b)) {
                    if e.iter().all(|v| *v == 0.0) {
                        continue;
                    }
                    axpy(1.0, e, o);
                    let r = norm(o);
                    o.iter_mut().for_each(|v| *v /= r);
                }
            }
        }
        Point {
            manifold: *self,
            coords: out.into(),
            feas_tol: x.feas_tol,
        }
    }

    /// Curvature term of the Riemannian Hessian of a submanifold:
    /// `Hess f(x)[η] = Proj_x(∇²f(x)[η]) + correction`, where the correction
    /// is `−(xᵀ∇f(x)) η` on each unit-norm block and zero on Euclidean space.
    pub(crate) fn hessian_correction(&self, x: &Point, egrad: &[f64], eta: &[f64]) -> Vec<f64> {
        match self.block_len() {
            None => vec![0.0; eta.len()],
            Some(b) => {
                let mut out = Vec::with_capacity(eta.len());
                for ((xr, gr), er) in x.coords.chunks(b).zip(egrad.chunks(b)).zip(eta.chunks(b)) {
                    let c = dot(xr, gr);
                    out.extend(er.iter().map(|v| -c * v));
                }
                out
            }
        }
    }

    /// Orthonormal basis of `T_x M`, built by projecting ambient basis vectors
    /// in index order and running modified Gram–Schmidt (two passes).
    pub fn tangent_basis(&self, x: &Point) -> Result<TangentBasis> {
        self.check_point(x)?;
        x.check_feasible()?;
        let n = self.ambient_dim();
        let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(self.dim());
        match self.block_len() {
            None => {
                for i in 0..n {
                    let mut e = vec![0.0; n];
                    e[i] = 1.0;
                    vectors.push(e);
                }
            }
            Some(b) => {
                for (blk, xr) in x.coords.chunks(b).enumerate() {
                    let mut local: Vec<Vec<f64>> = Vec::with_capacity(b - 1);
                    for i in 0..b {
                        if local.len() == b - 1 {
                            break;
                        }
                        let mut v = vec![0.0; b];
                        v[i] = 1.0;
                        let mut ok = true;
                        for _pass in 0..2 {
                            let c = dot(xr, &v);
                            axpy(-c, xr, &mut v);
                            for q in &local {
                                let c = dot(q, &v);
                                axpy(-c, q, &mut v);
                            }
                            let nv = norm(&v);
                            if nv < BASIS_DROP_TOL {
                                ok = false;
                                break;
                            }
                            v.iter_mut().for_each(|c| *c /= nv);
                        }
                        if ok {
                            local.push(v);
                        }
                    }
                    for q in local {
                        let mut full = vec![0.0; n];
                        full[blk * b..(blk + 1) * b].copy_from_slice(&q);
                        vectors.push(full);
                    }
                }
            }
        }
        if vectors.len() != self.dim() {
            return Err(Error::numerical(format!(
                "tangent basis has {} vectors, expected {}",
                vectors.len(),
                self.dim()
            )));
        }
        Ok(TangentBasis {
            vectors: vectors
                .into_iter()
                .map(|coords| TangentVector {
                    base: x.clone(),
                    coords,
                })
                .collect(),
        })
    }

    /// Closed-form exponential map of the sphere factors; identity shift on
    /// Euclidean space. Only used to measure the retraction's agreement with
    /// geodesics.
    fn exp_unchecked(&self, x: &Point, eta: &[f64]) -> Vec<f64> {
        let mut out = x.coords.to_vec();
        match self.block_len() {
            None => axpy(1.0, eta, &mut out),
            Some(b) => {
                for (o, e) in out.chunks_mut(b).zip(eta.chunks(b)) {
                    let th = norm(e);
                    if th == 0.0 {
                        continue;
                    }
                    let (s, c) = th.sin_cos();
                    for (oi, ei) in o.iter_mut().zip(e) {
                        *oi = c * *oi + s * ei / th;
                    }
                }
            }
        }
        out
    }

    /// Log-log slopes of the retraction's first-order deviation
    /// `‖R_x(tη) − x − tη‖` and its distance to the geodesic
    /// `‖R_x(tη) − Exp_x(tη)‖`, sampled at `t = 2^{-k}`. A deviation that is
    /// identically zero (Euclidean space) yields `f64::INFINITY`.
    pub fn check_retraction_orders(&self, x: &Point, eta: &TangentVector) -> Result<RetractionOrders> {
        self.check_point(x)?;
        if !eta.base.same_as(x) {
            return Err(Error::contract("tangent vector is not based at the given point"));
        }
        if (eta.norm() - 1.0).abs() > 1e-10 {
            return Err(Error::contract("retraction order check needs a unit tangent vector"));
        }
        let ts: Vec<f64> = (0..25).map(|k| 0.5f64.powi(k)).collect();
        let mut dev1 = Vec::with_capacity(ts.len());
        let mut dev2 = Vec::with_capacity(ts.len());
        for &t in &ts {
            let step: Vec<f64> = eta.coords.iter().map(|v| t * v).collect();
            let r = self.retract_unchecked(x, &step);
            let e = self.exp_unchecked(x, &step);
            let mut d1 = 0.0;
            let mut d2 = 0.0;
            for i in 0..step.len() {
                d1 += (r.coords[i] - x.coords[i] - step[i]).powi(2);
                d2 += (r.coords[i] - e[i]).powi(2);
            }
            dev1.push(d1.sqrt());
            dev2.push(d2.sqrt());
        }
        let floors = vec![64.0 * f64::EPSILON; ts.len()];
        Ok(RetractionOrders {
            first_order_slope: fitted_order(&ts, &dev1, &floors).slope,
            geodesic_slope: fitted_order(&ts, &dev2, &floors).slope,
        })
    }
}

/// Measured agreement orders of a retraction at one `(x, η)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetractionOrders {
    /// Slope of `‖R_x(tη) − x − tη‖`; 2 for a retraction.
    pub first_order_slope: f64,
    /// Slope of `‖R_x(tη) − Exp_x(tη)‖`; 3 for a second-order retraction.
    pub geodesic_slope: f64,
}

/// Result of a log-log slope fit over a sliding window.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct OrderFit {
    pub slope: f64,
    /// Indices `[start, start + len)` of the chosen window.
    pub window: Option<(usize, usize)>,
}

/// Window length used by every log-log slope fit.
pub(crate) const FIT_WINDOW: usize = 7;

pub(crate) const FIT_T_MAX: f64 = 0.1;

/// Fit `log err` against `log t` on the window of `FIT_WINDOW` consecutive
/// samples (each above its rounding floor) with the smallest residual.
/// Windows reaching past `t = FIT_T_MAX` are used only when no other window
/// qualifies, since higher-order terms take over there when the leading
/// coefficient is small.
/// Returns an infinite slope when every error is at or below its floor.
pub(crate) fn fitted_order(ts: &[f64], errs: &[f64], floors: &[f64]) -> OrderFit {
    if errs.iter().zip(floors).all(|(e, f)| *e <= *f) {
        return OrderFit {
            slope: f64::INFINITY,
            window: None,
        };
    }
    let best = best_window(ts, errs, floors, FIT_T_MAX).or_else(|| best_window(ts, errs, floors, f64::INFINITY));
    match best {
        Some((slope, start)) => OrderFit {
            slope,
            window: Some((start, FIT_WINDOW)),
        },
        None => OrderFit {
            slope: f64::NAN,
            window: None,
        },
    }
}

fn best_window(ts: &[f64], errs: &[f64], floors: &[f64], t_max: f64) -> Option<(f64, usize)> {
    let mut best: Option<(f64, f64, usize)> = None;
    for start in 0..ts.len().saturating_sub(FIT_WINDOW - 1) {
        if ts[start + FIT_WINDOW - 1] > t_max {
            continue;
        }
        let w = start..start + FIT_WINDOW;
        if errs[w.clone()]
            .iter()
            .zip(&floors[w.clone()])
            .any(|(e, f)| *e <= *f || !e.is_finite())
        {
            continue;
        }
        let lx: Vec<f64> = ts[w.clone()].iter().map(|t| t.ln()).collect();
        let ly: Vec<f64> = errs[w].iter().map(|e| e.ln()).collect();
        let (slope, rss) = fit_line(&lx, &ly);
        if best.map_or(true, |(_, r, _)| rss < r) {
            best = Some((slope, rss, start));
        }
    }
    best.map(|(slope, _, start)| (slope, start))
}

/// A point of a manifold in ambient coordinates. Cloning is cheap.
#[derive(Clone, Debug)]
pub struct Point {
    manifold: Manifold,
    coords: Arc<[f64]>,
    feas_tol: f64,
}

impl Point {
    pub fn manifold(&self) -> Manifold {
        self.manifold
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn feas_tol(&self) -> f64 {
        self.feas_tol
    }

    /// Largest deviation of a unit-norm block from norm one (0 on Euclidean).
    pub fn feasibility_error(&self) -> f64 {
        match self.manifold.block_len() {
            None => 0.0,
            Some(b) => self
                .coords
                .chunks(b)
                .map(|r| (norm(r) - 1.0).abs())
                .fold(0.0, f64::max),
        }
    }

    pub fn check_feasible(&self) -> Result<()> {
        let e = self.feasibility_error();
        if !(e <= self.feas_tol) || !self.coords.iter().all(|v| v.is_finite()) {
            return Err(Error::contract(format!(
                "point is infeasible on {} (deviation {e:.3e} > {:.1e})",
                self.manifold.name(),
                self.feas_tol
            )));
        }
        Ok(())
    }

    /// Same manifold and identical coordinates.
    pub fn same_as(&self, other: &Point) -> bool {
        Arc::ptr_eq(&self.coords, &other.coords)
            || (self.manifold == other.manifold && self.coords[..] == other.coords[..])
    }
}

/// A tangent vector in ambient coordinates, tagged with its base point.
#[derive(Clone, Debug)]
pub struct TangentVector {
    base: Point,
    coords: Vec<f64>,
}

impl TangentVector {
    pub fn zero(base: &Point) -> Self {
        TangentVector {
            base: base.clone(),
            coords: vec![0.0; base.manifold.ambient_dim()],
        }
    }

    pub(crate) fn from_parts(base: &Point, coords: Vec<f64>) -> Self {
        TangentVector {
            base: base.clone(),
            coords,
        }
    }

    pub fn base(&self) -> &Point {
        &self.base
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    pub fn norm(&self) -> f64 {
        norm(&self.coords)
    }

    /// Metric inner product. Both vectors must share a base point.
    pub fn dot(&self, other: &TangentVector) -> f64 {
        debug_assert!(self.base.same_as(&other.base), "tangent vectors at different points");
        dot(&self.coords, &other.coords)
    }

    pub fn scale(&self, a: f64) -> Self {
        TangentVector {
            base: self.base.clone(),
            coords: self.coords.iter().map(|v| a * v).collect(),
        }
    }

    /// `self + a * other`
    pub fn add_scaled(&self, a: f64, other: &TangentVector) -> Self {
        let mut coords = self.coords.clone();
        axpy(a, &other.coords, &mut coords);
        TangentVector {
            base: self.base.clone(),
            coords,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.coords.iter().all(|v| *v == 0.0)
    }

    /// Tangency holds when every block's inner product with the base block is
    /// at most `tol · ‖block‖`.
    pub fn check_tangent(&self, tol: f64) -> Result<()> {
        if let Some(b) = self.base.manifold.block_len() {
            for (xr, er) in self.base.coords.chunks(b).zip(self.coords.chunks(b)) {
                let c = dot(xr, er).abs();
                if c > tol * norm(er).max(f64::MIN_POSITIVE) && c > 0.0 {
                    return Err(Error::contract(format!("vector is not tangent (|xᵀη| = {c:.3e})")));
                }
            }
        }
        Ok(())
    }
}

/// Orthonormal basis of a tangent space.
#[derive(Clone, Debug)]
pub struct TangentBasis {
    pub vectors: Vec<TangentVector>,
}

impl TangentBasis {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Largest entry of `|G − I|` for the Gram matrix `G`.
    pub fn orthonormality_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for (i, u) in self.vectors.iter().enumerate() {
            for (j, v) in self.vectors.iter().enumerate().skip(i) {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((u.dot(v) - target).abs());
            }
        }
        worst
    }

    /// Combine basis vectors with the given coefficients.
    pub fn combine(&self, coeffs: &[f64]) -> TangentVector {
        let first = &self.vectors[0];
        let mut coords = vec![0.0; first.coords.len()];
        for (c, v) in coeffs.iter().zip(&self.vectors) {
            axpy(*c, &v.coords, &mut coords);
        }
        TangentVector {
            base: first.base.clone(),
            coords,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const S2: f64 = std::f64::consts::FRAC_1_SQRT_2;

    fn e(n: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        v
    }

    #[test]
    fn dimensions() {
        assert_eq!(Manifold::euclidean(4).dim(), 4);
        assert_eq!(Manifold::sphere(5).dim(), 4);
        let ob = Manifold::oblique(3, 4);
        assert_eq!(ob.dim(), 9);
        assert_eq!(ob.ambient_dim(), 12);
    }

    #[test]
    fn inner_examples() {
        let m = Manifold::euclidean(2);
        let x = m.point(vec![0.0, 0.0]).unwrap();
        let u = m.tangent(&x, vec![1.0, 0.0]).unwrap();
        let v = m.tangent(&x, vec![0.0, 1.0]).unwrap();
        assert_eq!(m.inner(&x, &u, &v).unwrap(), 0.0);

        let s = Manifold::sphere(3);
        let x = s.point(e(3, 0)).unwrap();
        let u = s.tangent(&x, vec![0.0, 2.0, 0.0]).unwrap();
        assert_eq!(s.inner(&x, &u, &u).unwrap(), 4.0);

        let ob = Manifold::oblique(2, 2);
        let y = ob.point(vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let u = ob.tangent(&y, vec![0.0, 1.0, -1.0, 0.0]).unwrap();
        assert_eq!(ob.inner(&y, &u, &u).unwrap(), 2.0);
    }

    #[test]
    fn inner_rejects_mismatched_base() {
        let s = Manifold::sphere(3);
        let x = s.point(e(3, 0)).unwrap();
        let y = s.point(e(3, 1)).unwrap();
        let u = s.tangent(&x, vec![0.0, 1.0, 0.0]).unwrap();
        let v = s.tangent(&y, vec![1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(s.inner(&x, &u, &v), Err(Error::Contract(_))));
    }

    #[test]
    fn project_examples() {
        let s = Manifold::sphere(3);
        let x = s.point(e(3, 0)).unwrap();
        assert_eq!(s.project(&x, &[5.0, 1.0, 2.0]).unwrap().coords(), &[0.0, 1.0, 2.0]);

        let m = Manifold::euclidean(4);
        let x = m.point(vec![1.0; 4]).unwrap();
        assert_eq!(m.project(&x, &[1.0, -2.0, 3.0, 4.0]).unwrap().coords(), &[1.0, -2.0, 3.0, 4.0]);

        // Dense projector I − xxᵀ as the independent route.
        let s = Manifold::sphere(2);
        let x = s.point(vec![S2, S2]).unwrap();
        let p = s.project(&x, &[1.0, 0.0]).unwrap();
        let xs = x.coords();
        let dense = [
            (1.0 - xs[0] * xs[0]) * 1.0 - xs[0] * xs[1] * 0.0,
            -xs[1] * xs[0] * 1.0 + (1.0 - xs[1] * xs[1]) * 0.0,
        ];
        for i in 0..2 {
            assert!((p.coords()[i] - dense[i]).abs() < 1e-15);
        }
        assert!((p.coords()[0] - 0.5).abs() < 1e-15 && (p.coords()[1] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn project_rejects_infeasible_point() {
        let s = Manifold::sphere(3);
        assert!(s.point(vec![2.0, 0.0, 0.0]).is_err());
        let x = Point {
            manifold: s,
            coords: vec![2.0, 0.0, 0.0].into(),
            feas_tol: DEFAULT_FEAS_TOL,
        };
        assert!(matches!(s.project(&x, &[1.0, 1.0, 1.0]), Err(Error::Contract(_))));
    }

    #[test]
    fn retract_examples() {
        let s = Manifold::sphere(3);
        let x = s.point(e(3, 0)).unwrap();
        let eta = s.tangent(&x, vec![0.0, 1.0, 0.0]).unwrap();
        let r = s.retract(&x, &eta).unwrap();
        assert!((r.coords()[0] - S2).abs() < 1e-15);
        assert!((r.coords()[1] - S2).abs() < 1e-15);
        assert_eq!(r.coords()[2], 0.0);

        let m = Manifold::euclidean(2);
        let x = m.point(vec![1.0, 2.0]).unwrap();
        let eta = m.tangent(&x, vec![3.0, -1.0]).unwrap();
        assert_eq!(m.retract(&x, &eta).unwrap().coords(), &[4.0, 1.0]);
    }

    #[test]
    fn retract_zero_is_identity_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for m in [Manifold::euclidean(5), Manifold::sphere(5), Manifold::oblique(3, 4)] {
            let x = m.random_point(&mut rng);
            let r = m.retract(&x, &TangentVector::zero(&x)).unwrap();
            assert_eq!(r.coords(), x.coords());
        }
    }

    #[test]
    fn tangent_basis_examples() {
        let m = Manifold::euclidean(3);
        let x = m.point(vec![0.3, 0.1, 0.0]).unwrap();
        let b = m.tangent_basis(&x).unwrap();
        for (i, v) in b.vectors.iter().enumerate() {
            assert_eq!(v.coords(), &e(3, i)[..]);
        }

        let s = Manifold::sphere(3);
        let x = s.point(e(3, 0)).unwrap();
        let b = s.tangent_basis(&x).unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!(b.vectors[0].coords(), &e(3, 1)[..]);
        assert_eq!(b.vectors[1].coords(), &e(3, 2)[..]);
    }

    #[test]
    fn tangent_basis_is_orthonormal_and_tangent() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for m in [Manifold::sphere(7), Manifold::oblique(4, 3), Manifold::sphere(2)] {
            for _ in 0..20 {
                let x = m.random_point(&mut rng);
                let b = m.tangent_basis(&x).unwrap();
                assert_eq!(b.len(), m.dim());
                assert!(b.orthonormality_error() < 1e-12, "{}", b.orthonormality_error());
                for v in &b.vectors {
                    v.check_tangent(1e-12).unwrap();
                }
            }
        }
        // Nearly axis-aligned point: the first projected vector is tiny.
        let s = Manifold::sphere(3);
        let x = s.normalize(vec![1.0, 1e-6, 0.0]).unwrap();
        let b = s.tangent_basis(&x).unwrap();
        assert!(b.orthonormality_error() < 1e-12);
    }

    #[test]
    fn retraction_orders() {
        let s = Manifold::sphere(3);
        let x = s.point(e(3, 0)).unwrap();
        let eta = s.tangent(&x, e(3, 1)).unwrap();
        let o = s.check_retraction_orders(&x, &eta).unwrap();
        assert!((o.first_order_slope - 2.0).abs() < 0.05, "{o:?}");
        assert!((o.geodesic_slope - 3.0).abs() < 0.05, "{o:?}");

        let m = Manifold::euclidean(3);
        let x = m.point(vec![1.0, 2.0, 3.0]).unwrap();
        let eta = m.tangent(&x, e(3, 2)).unwrap();
        let o = m.check_retraction_orders(&x, &eta).unwrap();
        assert_eq!(o.first_order_slope, f64::INFINITY);

        let bad = s.tangent(&s.point(e(3, 0)).unwrap(), vec![0.0, 2.0, 0.0]).unwrap();
        assert!(s.check_retraction_orders(bad.base(), &bad).is_err());
    }

    #[test]
    fn hessian_correction_blocks() {
        let ob = Manifold::oblique(2, 2);
        let y = ob.point(vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let c = ob.hessian_correction(&y, &[2.0, 0.0, 0.0, 3.0], &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(c, vec![0.0, -2.0, -3.0, 0.0]);
    }
}
