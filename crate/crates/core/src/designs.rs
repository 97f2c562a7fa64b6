//! Control-Lyapunov design data and grid certification of the design
//! assumptions.
//!
//! Every certificate is a statement about the sampled box only. A uniform
//! grid cannot establish a global inequality; the report carries the box so
//! that readers know what was actually checked.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::plants::{dot, mat_vec, PlantSpec, ScalarFn, VectorFn};

const ORIGIN_TOL: f64 = 1e-12;
/// Relative tolerance for symmetric-matrix identities and eigenvalues.
pub const MATRIX_TOL: f64 = 1e-10;
/// Relative rounding allowance for grid margins: a certificate passes when
/// `worst_margin >= -CERT_REL_TOL * max(1, largest term on the grid)`.
pub const CERT_REL_TOL: f64 = 1e-9;
pub const DEFAULT_RESOLUTION: usize = 201;

/// The quintuple `(V, grad V, Q, k, mu)` for a nonlinear design.
#[derive(Clone)]
pub struct ClfDesign {
    n: usize,
    v: ScalarFn,
    grad_v: VectorFn,
    q: ScalarFn,
    k: ScalarFn,
    mu: ScalarFn,
}

impl fmt::Debug for ClfDesign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ClfDesign").field("n", &self.n).finish_non_exhaustive()
    }
}

impl ClfDesign {
    pub fn new(n: usize, v: ScalarFn, grad_v: VectorFn, q: ScalarFn, k: ScalarFn, mu: ScalarFn) -> Result<Self> {
        let origin = vec![0.0; n];
        let (v0, q0, k0, mu0) = (v(&origin), q(&origin), k(&origin), mu(&origin));
        if grad_v(&origin).len() != n {
            return config(format!("design: grad V must return an {n}-vector"));
        }
        if v0.abs() > ORIGIN_TOL || q0.abs() > ORIGIN_TOL || k0.abs() > ORIGIN_TOL {
            return config("design: V(0), Q(0) and k(0) must vanish");
        }
        if !(mu0 >= 1.0) {
            return config(format!("design: mu(0) = {mu0} < 1"));
        }
        Ok(Self { n, v, grad_v, q, k, mu })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn v(&self, x: &[f64]) -> f64 {
        (self.v)(x)
    }

    pub fn grad_v(&self, x: &[f64]) -> Vec<f64> {
        (self.grad_v)(x)
    }

    pub fn q(&self, x: &[f64]) -> f64 {
        (self.q)(x)
    }

    pub fn k(&self, x: &[f64]) -> f64 {
        (self.k)(x)
    }

    pub fn mu(&self, x: &[f64]) -> f64 {
        (self.mu)(x)
    }
}

/// Quadratic design for `x' = A x + B(...)`: `V = x'Px`, `k(x) = -k'x`,
/// `Q = -(A - Bk')'P - P(A - Bk')`.
#[derive(Clone)]
pub struct LinearDesign {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub k: DVector<f64>,
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub eta: f64,
    pub mu: ScalarFn,
    pub eps: f64,
    pub lambda_min_p: f64,
}

impl fmt::Debug for LinearDesign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LinearDesign")
            .field("a", &self.a)
            .field("b", &self.b)
            .field("k", &self.k)
            .field("p", &self.p)
            .field("q", &self.q)
            .field("eta", &self.eta)
            .field("eps", &self.eps)
            .field("lambda_min_p", &self.lambda_min_p)
            .finish_non_exhaustive()
    }
}

impl LinearDesign {
    pub fn new(
        a: DMatrix<f64>,
        b: DVector<f64>,
        k: DVector<f64>,
        p: DMatrix<f64>,
        eta: f64,
        mu: ScalarFn,
        eps: f64,
    ) -> Result<Self> {
        let n = a.nrows();
        if !(eta > 0.0) || !(eps > 0.0) {
            return config("linear design: eta and eps must be positive");
        }
        if k.len() != n {
            return config("linear design: k must be an n-vector");
        }
        let q = lyapunov_q_from(&a, &b, &k, &p)?;
        let acl = closed_loop_matrix(&a, &b, &k);
        let spectral_abscissa = max_real_eigenvalue(&acl)?;
        if !(spectral_abscissa < 0.0) {
            return config(format!(
                "linear design: A - Bk' is not Hurwitz (max real part {spectral_abscissa})"
            ));
        }
        let lambda_min_p = symmetric_eigenvalues(&p)?[0];
        if !(lambda_min_p > 0.0) {
            return config("linear design: P is not positive definite");
        }
        if !(symmetric_eigenvalues(&q)?[0] > 0.0) {
            return config("linear design: Q is not positive definite");
        }
        let mu0 = mu(&vec![0.0; n]);
        if !(mu0 >= 1.0) {
            return config(format!("linear design: mu(0) = {mu0} < 1"));
        }
        Ok(Self {
            a,
            b,
            k,
            p,
            q,
            eta,
            mu,
            eps,
            lambda_min_p,
        })
    }

    /// Builds the design from a desired decrease matrix by solving
    /// `(A - Bk')'P + P(A - Bk') = -q_target` for `P`.
    pub fn from_lyapunov(
        a: DMatrix<f64>,
        b: DVector<f64>,
        k: DVector<f64>,
        q_target: &DMatrix<f64>,
        eta: f64,
        mu: ScalarFn,
        eps: f64,
    ) -> Result<Self> {
        let acl = closed_loop_matrix(&a, &b, &k);
        let p = solve_lyapunov(&acl, q_target)?;
        Self::new(a, b, k, p, eta, mu, eps)
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn v(&self, x: &[f64]) -> f64 {
        quad_form(&self.p, x)
    }

    pub fn q_form(&self, x: &[f64]) -> f64 {
        quad_form(&self.q, x)
    }

    /// `lambda_min(P) eps^2`: the deadzone level of the linear update law.
    pub fn deadzone_level(&self) -> f64 {
        self.lambda_min_p * self.eps * self.eps
    }

    /// `B'Px`.
    pub fn b_p_x(&self, x: &[f64]) -> f64 {
        let px = mat_vec(&self.p, x);
        self.b.iter().zip(&px).map(|(b, v)| b * v).sum()
    }

    /// `V = x'Px`, `grad V = 2x'P`, `Q = x'Qx`, `k(x) = -k'x`.
    pub fn as_clf(&self) -> ClfDesign {
        let (p1, p2, q, k) = (self.p.clone(), self.p.clone(), self.q.clone(), self.k.clone());
        ClfDesign {
            n: self.n(),
            v: Arc::new(move |x: &[f64]| quad_form(&p1, x)),
            grad_v: Arc::new(move |x: &[f64]| mat_vec(&p2, x).into_iter().map(|v| 2.0 * v).collect()),
            q: Arc::new(move |x: &[f64]| quad_form(&q, x)),
            k: Arc::new(move |x: &[f64]| -k.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()),
            mu: self.mu.clone(),
        }
    }
}

pub(crate) fn quad_form(m: &DMatrix<f64>, x: &[f64]) -> f64 {
    let n = x.len();
    let mut acc = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += m[(i, j)] * x[j];
        }
        acc += x[i] * row;
    }
    acc
}

pub fn closed_loop_matrix(a: &DMatrix<f64>, b: &DVector<f64>, k: &DVector<f64>) -> DMatrix<f64> {
    a - b * k.transpose()
}

/// `Q = -(A - Bk')'P - P(A - Bk')`.
pub fn lyapunov_q_from(a: &DMatrix<f64>, b: &DVector<f64>, k: &DVector<f64>, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || p.nrows() != n || p.ncols() != n || b.len() != n || k.len() != n {
        return config("lyapunov_q_from: A, P must be n x n and B, k n-vectors");
    }
    let scale = p.amax().max(f64::MIN_POSITIVE);
    if (p - p.transpose()).amax() > MATRIX_TOL * scale {
        return config("lyapunov_q_from: P is not symmetric");
    }
    let acl = closed_loop_matrix(a, b, k);
    Ok(-(acl.transpose() * p) - p * &acl)
}

/// Solves `A'P + PA = -Q` through the Kronecker form.
pub fn solve_lyapunov(acl: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = acl.nrows();
    if acl.ncols() != n || q.shape() != (n, n) {
        return config("solve_lyapunov: square matrices of equal size required");
    }
    let eye = DMatrix::<f64>::identity(n, n);
    let at = acl.transpose();
    // Column-major vec: vec(A'P) = (I ⊗ A') vec P, vec(PA) = (A' ⊗ I) vec P.
    let system = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = DVector::from_iterator(n * n, q.iter().map(|v| -v));
    let sol = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Config("solve_lyapunov: singular Lyapunov operator".into()))?;
    let p = DMatrix::from_column_slice(n, n, sol.as_slice());
    Ok((&p + p.transpose()) * 0.5)
}

/// Eigenvalues of a symmetric matrix, sorted ascending.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    if !m.is_square() {
        return config("symmetric_eigenvalues: matrix is not square");
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    if (m - m.transpose()).amax() > MATRIX_TOL * scale {
        return config("symmetric_eigenvalues: matrix is not symmetric");
    }
    let mut ev: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

/// Largest real part over the spectrum of a general square matrix.
pub fn max_real_eigenvalue(m: &DMatrix<f64>) -> Result<f64> {
    if !m.is_square() {
        return config("max_real_eigenvalue: matrix is not square");
    }
    Ok(m.complex_eigenvalues()
        .iter()
        .map(|c| c.re)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Smallest `s` with `x'Qx >= s x'Px` for all `x` (smallest eigenvalue of `P^{-1} Q`).
pub fn min_generalized_eigenvalue(q: &DMatrix<f64>, p: &DMatrix<f64>) -> Result<f64> {
    let chol = p
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Config("min_generalized_eigenvalue: P not positive definite".into()))?;
    let l_inv = chol
        .l()
        .try_inverse()
        .ok_or_else(|| Error::Config("min_generalized_eigenvalue: singular factor".into()))?;
    let m = &l_inv * q * l_inv.transpose();
    let m = (&m + m.transpose()) * 0.5;
    Ok(symmetric_eigenvalues(&m)?[0])
}

/// The design of the planar example: `k = (5, 4)`, `P = [[5,2],[2,1]]/2`,
/// `eta = 3`, `mu(x) = 2 + x1^2`, `eps = 0.2`.
pub fn make_example1_design() -> LinearDesign {
    let (a, b) = crate::plants::double_integrator_matrices(2);
    let k = DVector::from_vec(vec![5.0, 4.0]);
    let p = DMatrix::from_row_slice(2, 2, &[2.5, 1.0, 1.0, 0.5]);
    LinearDesign::new(a, b, k, p, 3.0, Arc::new(|x: &[f64]| 2.0 + x[0] * x[0]), 0.2).expect("example design is valid")
}

/// Uniform tensor grid over an axis-aligned box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub resolution: usize,
}

impl GridSpec {
    /// `[-half_width, half_width]^n` with `resolution` points per axis.
    pub fn symmetric(n: usize, half_width: f64, resolution: usize) -> Self {
        Self {
            lower: vec![-half_width; n],
            upper: vec![half_width; n],
            resolution,
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn len(&self) -> usize {
        self.resolution.pow(self.dim() as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.lower.len() != n || self.upper.len() != n {
            return config(format!("grid: box must have {n} bounds per side"));
        }
        if self.resolution < 2 {
            return config("grid: resolution must be at least 2");
        }
        for (lo, hi) in self.lower.iter().zip(&self.upper) {
            if !(lo < hi) || !(*lo <= 0.0 && *hi >= 0.0) {
                return config("grid: box must be non-degenerate and contain the origin");
            }
        }
        Ok(())
    }

    pub fn point(&self, mut index: usize) -> Vec<f64> {
        let steps = (self.resolution - 1) as f64;
        (0..self.dim())
            .map(|axis| {
                let i = index % self.resolution;
                index /= self.resolution;
                let (lo, hi) = (self.lower[axis], self.upper[axis]);
                lo + (hi - lo) * (i as f64) / steps
            })
            .collect()
    }

    /// Radius of the largest origin-centred ball inside the box.
    pub fn inner_radius(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| (-lo).min(*hi))
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Assumption {
    /// `grad V (f + g k) <= -Q`.
    A,
    /// `|phi|^2 <= mu Q`.
    B,
    /// `Q >= eta V` on `|x| <= delta`. `None` selects the defaults: `delta` is
    /// the inner radius of the box, `eta` is 0.9 times the sampled infimum of
    /// `Q/V` on that ball.
    C { delta: Option<f64>, eta: Option<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertReport {
    pub assumption: String,
    #[serde(rename = "box")]
    pub bounds: GridBox,
    pub resolution: usize,
    pub worst_margin: f64,
    pub worst_point: Vec<f64>,
    pub passed: bool,
    pub tolerance: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub parameters: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeta_estimate: Option<ZetaEnvelope>,
    pub scope: String,
}

struct GridMin {
    margin: f64,
    index: usize,
    scale: f64,
}

/// Minimum of `eval` over the grid. `eval` returns `(margin, term scale)` or
/// `None` to exclude the point. Ties resolve to the lowest index so that the
/// parallel reduction is deterministic.
fn grid_min<F>(grid: &GridSpec, eval: F) -> Result<Option<GridMin>>
where
    F: Fn(&[f64]) -> Result<Option<(f64, f64)>> + Sync,
{
    let best = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let x = grid.point(i);
            match eval(&x)? {
                Some((m, s)) if m.is_finite() && s.is_finite() => Ok(Some(GridMin {
                    margin: m,
                    index: i,
                    scale: s.abs(),
                })),
                Some(_) => Err(Error::NumericFault {
                    what: "grid certification".into(),
                    t: None,
                    state: x,
                }),
                None => Ok(None),
            }
        })
        .try_reduce(
            || None,
            |a, b| {
                Ok(match (a, b) {
                    (None, x) | (x, None) => x,
                    (Some(a), Some(b)) => {
                        let scale = a.scale.max(b.scale);
                        let pick_a = a.margin < b.margin || (a.margin == b.margin && a.index < b.index);
                        let w = if pick_a { a } else { b };
                        Some(GridMin { scale, ..w })
                    }
                })
            },
        )?;
    Ok(best)
}

fn finish(
    label: &str,
    grid: &GridSpec,
    best: Option<GridMin>,
    parameters: BTreeMap<String, f64>,
) -> Result<CertReport> {
    let best = best.ok_or_else(|| Error::Config(format!("certification of {label}: no grid points in scope")))?;
    let tolerance = CERT_REL_TOL * best.scale.max(1.0);
    Ok(CertReport {
        assumption: label.to_string(),
        bounds: GridBox {
            lower: grid.lower.clone(),
            upper: grid.upper.clone(),
        },
        resolution: grid.resolution,
        worst_margin: best.margin,
        worst_point: grid.point(best.index),
        passed: best.margin >= -tolerance,
        tolerance,
        parameters,
        zeta_estimate: None,
        scope: "sampled on the declared box only".into(),
    })
}

fn check_dims(design: &ClfDesign, plant: &PlantSpec, grid: &GridSpec) -> Result<()> {
    if design.n() != plant.n() {
        return config("certification: design and plant dimensions differ");
    }
    grid.validate(plant.n())
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Sampled infimum of `Q/V` over grid points with `0 < |x| <= radius`.
fn inf_q_over_v(design: &ClfDesign, grid: &GridSpec, radius: f64) -> Result<f64> {
    let best = grid_min(grid, |x| {
        let r = norm(x);
        if r == 0.0 || r > radius {
            return Ok(None);
        }
        let v = design.v(x);
        if !(v > 0.0) {
            return Ok(None);
        }
        Ok(Some((design.q(x) / v, 0.0)))
    })?;
    best.map(|b| b.margin)
        .ok_or_else(|| Error::Config("no grid points with V > 0 inside the ball".into()))
}

pub fn certify_assumption(
    design: &ClfDesign,
    plant: &PlantSpec,
    which: Assumption,
    grid: &GridSpec,
) -> Result<CertReport> {
    check_dims(design, plant, grid)?;
    match which {
        Assumption::A => {
            let best = grid_min(grid, |x| {
                let grad = design.grad_v(x);
                let k = design.k(x);
                let closed: Vec<f64> = plant.f(x).iter().zip(plant.g(x)).map(|(f, g)| f + g * k).collect();
                let lie = dot(&grad, &closed);
                let q = design.q(x);
                Ok(Some((-lie - q, lie.abs().max(q.abs()))))
            })?;
            finish("A", grid, best, BTreeMap::new())
        }
        Assumption::B => {
            let best = grid_min(grid, |x| {
                let phi2: f64 = plant.phi(x).iter().map(|v| v * v).sum();
                let mq = design.mu(x) * design.q(x);
                Ok(Some((mq - phi2, mq.abs().max(phi2))))
            })?;
            finish("B", grid, best, BTreeMap::new())
        }
        Assumption::C { delta, eta } => {
            let delta = delta.unwrap_or_else(|| grid.inner_radius());
            if !(delta > 0.0) {
                return config("assumption C: delta must be positive");
            }
            let eta = match eta {
                Some(e) => e,
                None => 0.9 * inf_q_over_v(design, grid, delta)?,
            };
            let best = grid_min(grid, |x| {
                if norm(x) > delta {
                    return Ok(None);
                }
                let (q, v) = (design.q(x), design.v(x));
                Ok(Some((q - eta * v, q.abs().max((eta * v).abs()))))
            })?;
            let params = BTreeMap::from([("delta".to_string(), delta), ("eta".to_string(), eta)]);
            finish("C", grid, best, params)
        }
    }
}

/// Margin `x'Qx - eta x'Px - |phi(x)|^2 / (4 mu(x))`.
pub fn certify_quadratic_decrease(design: &LinearDesign, plant: &PlantSpec, grid: &GridSpec) -> Result<CertReport> {
    if design.n() != plant.n() {
        return config("certification: design and plant dimensions differ");
    }
    grid.validate(plant.n())?;
    let best = grid_min(grid, |x| {
        let qx = design.q_form(x);
        let px = design.eta * design.v(x);
        let phi2: f64 = plant.phi(x).iter().map(|v| v * v).sum();
        let mu = (design.mu)(x);
        if !(mu >= 1.0) {
            return config(format!("mu(x) = {mu} < 1 at {x:?}"));
        }
        let w = phi2 / (4.0 * mu);
        Ok(Some((qx - px - w, qx.abs().max(px.abs()).max(w))))
    })?;
    let params = BTreeMap::from([("eta".to_string(), design.eta)]);
    finish("2.17", grid, best, params)
}

/// Sampled lower envelope `zeta` with `Q(x) >= zeta(V(x))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZetaEnvelope {
    pub levels: Vec<f64>,
    /// Per-level infimum; `None` marks a level band that contained no grid point.
    pub raw: Vec<Option<f64>>,
    /// Greatest non-decreasing minorant of `raw` (empty levels inherit from above).
    pub hull: Vec<f64>,
    pub band_half_width: f64,
}

impl ZetaEnvelope {
    /// Piecewise-linear interpolation of the hull; `None` beyond the last level.
    pub fn eval(&self, level: f64) -> Option<f64> {
        if level < 0.0 || level > *self.levels.last()? {
            return None;
        }
        let step = self.levels[1] - self.levels[0];
        let i = ((level / step).floor() as usize).min(self.levels.len() - 2);
        let w = (level - self.levels[i]) / step;
        Some(self.hull[i] * (1.0 - w) + self.hull[i + 1] * w)
    }

    /// Smallest sampled level whose hull value reaches `value`.
    pub fn inverse(&self, value: f64) -> Option<f64> {
        self.levels
            .iter()
            .zip(&self.hull)
            .find(|(_, h)| **h >= value)
            .map(|(l, _)| *l)
    }
}

/// Levels `L_i = i * level_max / n_levels`. For each level the grid points
/// with `|V(x) - L_i| <= band` contribute `Q(x) * L_i / V(x)`, i.e. `Q`
/// rescaled to the level, so that `Q = c V` yields exactly `c L_i`.
pub fn zeta_envelope(design: &ClfDesign, grid: &GridSpec, level_max: f64, n_levels: usize) -> Result<ZetaEnvelope> {
    if !(level_max > 0.0) || n_levels == 0 {
        return config("zeta_envelope: level_max must be positive and n_levels >= 1");
    }
    grid.validate(design.n())?;
    let spacing = level_max / n_levels as f64;
    let half = 0.5 * spacing;
    let raw_inner = (0..grid.len())
        .into_par_iter()
        .fold(
            || vec![f64::INFINITY; n_levels + 1],
            |mut acc, i| {
                let x = grid.point(i);
                let v = design.v(&x);
                if v > 0.0 && v <= level_max + half {
                    let idx = (v / spacing).round() as usize;
                    if (1..=n_levels).contains(&idx) {
                        let level = idx as f64 * spacing;
                        let val = design.q(&x) * level / v;
                        if val < acc[idx] {
                            acc[idx] = val;
                        }
                    }
                }
                acc
            },
        )
        .reduce(
            || vec![f64::INFINITY; n_levels + 1],
            |a, b| a.iter().zip(&b).map(|(x, y)| x.min(*y)).collect(),
        );
    let levels: Vec<f64> = (0..=n_levels).map(|i| i as f64 * spacing).collect();
    let mut raw: Vec<Option<f64>> = raw_inner
        .into_iter()
        .map(|v| if v.is_finite() { Some(v) } else { None })
        .collect();
    raw[0] = Some(0.0);
    let mut hull = vec![0.0; n_levels + 1];
    let mut running = f64::INFINITY;
    for i in (0..=n_levels).rev() {
        if let Some(v) = raw[i] {
            running = running.min(v);
        }
        hull[i] = running;
    }
    Ok(ZetaEnvelope {
        levels,
        raw,
        hull,
        band_half_width: half,
    })
}
