//! `min Tr(CX)` over `X ⪰ 0, diag(X) = 1`, solved through the factorization
//! `X = YYᵀ` with `Y` on the oblique manifold (unit-norm rows).
//!
//! Max-Cut users pass the negated (scaled) Laplacian: this module minimizes.

use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, SolveFailure};
use crate::linalg::{min_eigenpair, symmetrize, to_matrix, to_row_major};
use crate::manifold::{Manifold, Point};
use crate::problem::Problem;
use crate::rtr::{rtr_solve, RtrConfig, RtrStatus, RtrTrace};
use crate::seed::rng_for;

pub const BM_SCHEMA: &str = "bmsol-v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MatrixFormat {
    MatrixMarket,
    DenseText,
}

impl MatrixFormat {
    /// `.mtx` files are MatrixMarket, anything else dense text.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("mtx") => MatrixFormat::MatrixMarket,
            _ => MatrixFormat::DenseText,
        }
    }
}

/// Symmetric cost matrix of the relaxation.
#[derive(Clone, Debug, PartialEq)]
pub struct SdpInstance {
    c: Arc<DMatrix<f64>>,
}

impl SdpInstance {
    /// Symmetrizes `c` as `(C + Cᵀ)/2`, warning when that changes it.
    pub fn new(c: DMatrix<f64>) -> Result<Self> {
        if c.nrows() != c.ncols() {
            return Err(Error::Format(format!("matrix is {}×{}, expected square", c.nrows(), c.ncols())));
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("matrix has non-finite entries".into()));
        }
        let (sym, resid) = symmetrize(&c);
        if resid > 0.0 {
            log::warn!("input matrix is not symmetric (max |C − Cᵀ|/2 = {resid:e}); using (C + Cᵀ)/2");
        }
        Ok(SdpInstance { c: Arc::new(sym) })
    }

    pub fn n(&self) -> usize {
        self.c.nrows()
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
}

pub fn load_matrix(path: &Path, format: MatrixFormat) -> Result<SdpInstance> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_matrix(&text, format)
}

pub fn parse_matrix(text: &str, format: MatrixFormat) -> Result<SdpInstance> {
    let c = match format {
        MatrixFormat::MatrixMarket => parse_matrix_market(text)?,
        MatrixFormat::DenseText => parse_dense(text)?,
    };
    SdpInstance::new(c)
}

fn parse_dense(text: &str) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') || t.starts_with('%') {
            continue;
        }
        let row = t
            .split_whitespace()
            .map(|s| s.parse::<f64>().map_err(|_| Error::Parse { line: i + 1, msg: format!("bad number {s:?}") }))
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("row has {} entries, expected {}", row.len(), first.len()),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Format("empty matrix".into()));
    }
    let (r, c) = (rows.len(), rows[0].len());
    if r != c {
        return Err(Error::Format(format!("matrix is {r}×{c}, expected square")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn parse_matrix_market(text: &str) -> Result<DMatrix<f64>> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::Format("empty MatrixMarket file".into()))?;
    let h: Vec<String> = header.split_whitespace().map(|s| s.to_ascii_lowercase()).collect();
    if h.len() != 5 || h[0] != "%%matrixmarket" || h[1] != "matrix" {
        return Err(Error::Parse { line: 1, msg: "expected '%%MatrixMarket matrix <format> <field> <symmetry>'".into() });
    }
    let coordinate = match h[2].as_str() {
        "coordinate" => true,
        "array" => false,
        other => return Err(Error::Parse { line: 1, msg: format!("unsupported format {other:?}") }),
    };
    if !matches!(h[3].as_str(), "real" | "integer" | "double") {
        return Err(Error::Parse { line: 1, msg: format!("unsupported field {:?}", h[3]) });
    }
    let symmetric = match h[4].as_str() {
        "general" => false,
        "symmetric" => true,
        other => return Err(Error::Parse { line: 1, msg: format!("unsupported symmetry {other:?}") }),
    };

    let mut body = lines.filter(|(_, l)| {
        let t = l.trim();
        !t.is_empty() && !t.starts_with('%')
    });
    let (size_idx, size_line) = body.next().ok_or_else(|| Error::Format("missing size line".into()))?;
    let dims: Vec<usize> = size_line
        .split_whitespace()
        .map(|s| s.parse().map_err(|_| Error::Parse { line: size_idx + 1, msg: format!("bad size {s:?}") }))
        .collect::<Result<_>>()?;
    let expected_dims = if coordinate { 3 } else { 2 };
    if dims.len() != expected_dims {
        return Err(Error::Parse { line: size_idx + 1, msg: format!("expected {expected_dims} size fields") });
    }
    let (nr, nc) = (dims[0], dims[1]);
    if nr != nc {
        return Err(Error::Format(format!("matrix is {nr}×{nc}, expected square")));
    }
    let mut m = DMatrix::zeros(nr, nc);
    let num = |s: &str, line: usize| -> Result<f64> {
        s.parse::<f64>().map_err(|_| Error::Parse { line, msg: format!("bad number {s:?}") })
    };

    if coordinate {
        let nnz = dims[2];
        let mut seen = 0usize;
        for (i, line) in body {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 {
                return Err(Error::Parse { line: i + 1, msg: "expected 'row col value'".into() });
            }
            let idx = |s: &str, bound: usize| -> Result<usize> {
                match s.parse::<usize>() {
                    Ok(v) if v >= 1 && v <= bound => Ok(v - 1),
                    _ => Err(Error::Parse { line: i + 1, msg: format!("index {s:?} out of range 1..={bound}") }),
                }
            };
            let (r, c, v) = (idx(f[0], nr)?, idx(f[1], nc)?, num(f[2], i + 1)?);
            m[(r, c)] += v;
            if symmetric && r != c {
                m[(c, r)] += v;
            }
            seen += 1;
            if seen > nnz {
                return Err(Error::Parse { line: i + 1, msg: format!("more than the declared {nnz} entries") });
            }
        }
        if seen != nnz {
            return Err(Error::Format(format!("declared {nnz} entries, found {seen}")));
        }
    } else {
        // Column-major values; the symmetric form lists the lower triangle.
        let slots: Vec<(usize, usize)> = (0..nc)
            .flat_map(|j| (if symmetric { j } else { 0 }..nr).map(move |i| (i, j)))
            .collect();
        let mut it = slots.iter();
        for (i, line) in body {
            for s in line.split_whitespace() {
                let &(r, c) = it
                    .next()
                    .ok_or_else(|| Error::Parse { line: i + 1, msg: "more values than the matrix holds".into() })?;
                let v = num(s, i + 1)?;
                m[(r, c)] = v;
                if symmetric {
                    m[(c, r)] = v;
                }
            }
        }
        if it.next().is_some() {
            return Err(Error::Format("fewer values than the matrix holds".into()));
        }
    }
    Ok(m)
}

/// Coordinate `general` MatrixMarket text listing every nonzero.
pub fn to_matrix_market(c: &DMatrix<f64>) -> String {
    let entries: Vec<(usize, usize, f64)> = (0..c.ncols())
        .flat_map(|j| (0..c.nrows()).map(move |i| (i, j)))
        .filter_map(|(i, j)| (c[(i, j)] != 0.0).then(|| (i, j, c[(i, j)])))
        .collect();
    let mut out = format!("%%MatrixMarket matrix coordinate real general\n{} {} {}\n", c.nrows(), c.ncols(), entries.len());
    for (i, j, v) in entries {
        out.push_str(&format!("{} {} {}\n", i + 1, j + 1, v));
    }
    out
}

/// `f(Y) = Tr(C Y Yᵀ)` on `Oblique(n, p)` with ambient gradient `2CY` and
/// Hessian-vector map `Ẏ ↦ 2CẎ`.
pub fn bm_problem(inst: &SdpInstance, p: usize) -> Result<Problem> {
    if p < 1 {
        return Err(Error::contract("rank p must be at least 1"));
    }
    let n = inst.n();
    let (c1, c2, c3) = (inst.c.clone(), inst.c.clone(), inst.c.clone());
    Ok(Problem::new(
        Manifold::oblique(n, p),
        move |y| {
            let ym = to_matrix(n, p, y);
            (&*c1 * &ym).dot(&ym)
        },
        move |y| to_row_major(&(&*c2 * to_matrix(n, p, y) * 2.0)),
    )
    .with_hessian(move |_y, v| to_row_major(&(&*c3 * to_matrix(n, p, v) * 2.0))))
}

/// Dual data at a feasible `Y`.
#[derive(Clone, Debug)]
pub struct DualCertificate {
    /// `S = C − ddiag(C Y Yᵀ)`.
    pub s: DMatrix<f64>,
    pub lambda_min_s: f64,
    /// `n·max(0, −λ_min(S))`, an upper bound on `Tr(CYYᵀ) − Tr(CX*)`.
    pub gap_bound: f64,
}

pub fn dual_certificate(inst: &SdpInstance, y: &Point) -> Result<DualCertificate> {
    let n = inst.n();
    let p = match y.manifold() {
        Manifold::Oblique { rows, cols } if rows == n => cols,
        _ => return Err(Error::contract("Y must lie on Oblique(n, p) with n matching C")),
    };
    y.check_feasible()?;
    let ym = to_matrix(n, p, y.coords());
    let cy = &*inst.c * &ym;
    let mut s = (*inst.c).clone();
    for i in 0..n {
        s[(i, i)] -= cy.row(i).dot(&ym.row(i));
    }
    let (lambda_min_s, _) = min_eigenpair(&s);
    Ok(DualCertificate { s, lambda_min_s, gap_bound: n as f64 * (-lambda_min_s).max(0.0) })
}

/// Outcome of a Burer–Monteiro solve.
#[derive(Clone, Debug)]
pub struct BmSolution {
    pub n: usize,
    pub p: usize,
    pub y: Point,
    pub objective: f64,
    pub lambda_min_s: f64,
    pub gap_bound: f64,
    pub status: RtrStatus,
    pub iterations: usize,
    pub eps_h: Option<f64>,
    pub trace: RtrTrace,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BmSolutionJson {
    pub schema: String,
    pub n: usize,
    pub p: usize,
    pub objective: f64,
    #[serde(rename = "lambda_min_S")]
    pub lambda_min_s: f64,
    pub gap_bound: f64,
    pub status: RtrStatus,
    pub iterations: usize,
    /// `Tr(CYYᵀ) − gap_bound`, a certified lower bound on the SDP optimum.
    pub lower_bound: f64,
    /// `(n/2)ε_H` when a second-order tolerance was used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub second_order_gap: Option<f64>,
    pub feasibility: f64,
}

impl BmSolution {
    pub fn lower_bound(&self) -> f64 {
        self.objective - self.gap_bound
    }

    pub fn second_order_gap(&self) -> Option<f64> {
        self.eps_h.map(|e| self.n as f64 / 2.0 * e)
    }

    /// Largest `|‖row‖² − 1|` of `Y`, i.e. the `diag(YYᵀ) = 1` residual.
    pub fn feasibility(&self) -> f64 {
        self.y
            .coords()
            .chunks(self.p)
            .map(|r| (r.iter().map(|v| v * v).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn to_json_value(&self) -> BmSolutionJson {
        BmSolutionJson {
            schema: BM_SCHEMA.into(),
            n: self.n,
            p: self.p,
            objective: self.objective,
            lambda_min_s: self.lambda_min_s,
            gap_bound: self.gap_bound,
            status: self.status,
            iterations: self.iterations,
            lower_bound: self.lower_bound(),
            second_order_gap: self.second_order_gap(),
            feasibility: self.feasibility(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_json_value())?)
    }

    /// `Y` as whitespace-separated rows.
    pub fn y_dense_text(&self) -> String {
        let mut out = String::new();
        for row in self.y.coords().chunks(self.p) {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&cells.join(" "));
            out.push('\n');
        }
        out
    }
}

pub fn parse_solution_json(text: &str) -> Result<BmSolutionJson> {
    let v: serde_json::Value = serde_json::from_str(text)?;
    match v.get("schema").and_then(|s| s.as_str()) {
        Some(BM_SCHEMA) => Ok(serde_json::from_value(v)?),
        Some(other) => Err(Error::Format(format!("expected schema {BM_SCHEMA}, found {other}"))),
        None => Err(Error::Format("solution has no schema tag".into())),
    }
}

/// Default factorization rank `n + 1`.
pub fn default_rank(n: usize) -> usize {
    n + 1
}

/// Smallest rank of the empirical sweep, `⌈√(2n)⌉`.
pub fn min_sweep_rank(n: usize) -> usize {
    ((2.0 * n as f64).sqrt().ceil() as usize).max(1)
}

/// Run the trust-region method from a random feasible `Y` (rows uniform on the
/// sphere, stream `(seed, 0)`).
pub fn solve_relaxation(
    inst: &SdpInstance,
    p: usize,
    cfg: &RtrConfig,
    seed: u64,
) -> std::result::Result<BmSolution, SolveFailure<RtrTrace>> {
    solve_relaxation_replicate(inst, p, cfg, seed, 0)
}

pub fn solve_relaxation_replicate(
    inst: &SdpInstance,
    p: usize,
    cfg: &RtrConfig,
    seed: u64,
    replicate: u64,
) -> std::result::Result<BmSolution, SolveFailure<RtrTrace>> {
    let wrap = |e: Error| SolveFailure { error: e, trace: RtrTrace::new(cfg) };
    if p < 2 {
        return Err(wrap(Error::contract("rank p must be at least 2")));
    }
    let problem = bm_problem(inst, p).map_err(wrap)?;
    let mut rng = rng_for(seed, replicate);
    let y0 = problem.manifold().random_point(&mut rng);
    let out = rtr_solve(&problem, &y0, cfg)?;
    let cert = dual_certificate(inst, &out.x).map_err(|e| SolveFailure { error: e, trace: out.trace.clone() })?;
    let objective = problem.cost(&out.x);
    Ok(BmSolution {
        n: inst.n(),
        p,
        objective,
        lambda_min_s: cert.lambda_min_s,
        gap_bound: cert.gap_bound,
        status: out.certificate.status,
        iterations: out.trace.iterations(),
        eps_h: cfg.eps_h,
        y: out.x,
        trace: out.trace,
    })
}
