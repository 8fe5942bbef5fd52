//! Riemannian conjugate gradient on products of complex unit circles.
//!
//! A point is a complex matrix whose masked entries have unit modulus and
//! whose remaining entries are exactly zero. The tangent space at `W` is the
//! set of `T` with `Re{T ⊙ conj(W)} = 0` on the mask and `T = 0` off it.
//! Gradients follow the convention `df = Re tr(G^H dW)`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{real_inner, unit, CMatrix, C64};
use crate::metrics::{Mask, UNIT_MODULUS_TOL};

const TANGENT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldPoint {
    w: CMatrix,
    mask: Mask,
}

impl ManifoldPoint {
    pub fn new(w: CMatrix, mask: Mask) -> Result<Self> {
        if w.shape() != mask.shape() {
            return Err(Error::Shape(format!("point {:?} vs mask {:?}", w.shape(), mask.shape())));
        }
        for j in 0..w.ncols() {
            for i in 0..w.nrows() {
                let v = w[(i, j)];
                let ok = if mask[(i, j)] {
                    (v.norm() - 1.0).abs() <= UNIT_MODULUS_TOL
                } else {
                    v == C64::new(0.0, 0.0)
                };
                if !ok {
                    return Err(Error::Domain(format!(
                        "entry ({i}, {j}) = {v} violates the unit-modulus pattern"
                    )));
                }
            }
        }
        Ok(Self { w, mask })
    }

    /// Point with `e^{j phase}` on the mask, drawn uniformly.
    pub fn random<R: Rng + ?Sized>(mask: Mask, rng: &mut R) -> Self {
        let w = CMatrix::from_fn(mask.nrows(), mask.ncols(), |i, j| {
            if mask[(i, j)] {
                unit(rng.random_range(-std::f64::consts::PI..std::f64::consts::PI))
            } else {
                C64::new(0.0, 0.0)
            }
        });
        Self { w, mask }
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.w
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn into_parts(self) -> (CMatrix, Mask) {
        (self.w, self.mask)
    }

    /// Largest deviation `| |W_ij| - 1 |` over masked entries.
    pub fn modulus_error(&self) -> f64 {
        self.w
            .iter()
            .zip(self.mask.iter())
            .filter(|(_, m)| **m)
            .map(|(v, _)| (v.norm() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Largest `|Re{T ⊙ conj(W)}|` over the mask.
pub fn tangency_residual(point: &ManifoldPoint, t: &CMatrix) -> f64 {
    point
        .w
        .iter()
        .zip(t.iter())
        .zip(point.mask.iter())
        .filter(|(_, m)| **m)
        .map(|((w, t), _)| (t * w.conj()).re.abs())
        .fold(0.0, f64::max)
}

fn project_onto(w: &CMatrix, mask: &Mask, g: &CMatrix) -> CMatrix {
    CMatrix::from_fn(w.nrows(), w.ncols(), |i, j| {
        if mask[(i, j)] {
            let wij = w[(i, j)];
            let gij = g[(i, j)];
            gij - wij * (gij * wij.conj()).re
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

/// Orthogonal projection of an ambient matrix onto the tangent space at `point`.
pub fn riemannian_project(point: &ManifoldPoint, g: &CMatrix) -> CMatrix {
    project_onto(&point.w, &point.mask, g)
}

/// Entry-wise normalization of `W + alpha D` back onto the circles.
pub fn retract(point: &ManifoldPoint, d: &CMatrix, alpha: f64) -> Result<ManifoldPoint> {
    if d.shape() != point.w.shape() {
        return Err(Error::Shape(format!("direction {:?} vs point {:?}", d.shape(), point.w.shape())));
    }
    let scale = d.iter().map(|v| v.norm()).fold(1.0, f64::max);
    let residual = tangency_residual(point, d);
    if residual > TANGENT_TOL * scale {
        return Err(Error::NotTangent { residual });
    }
    let mut out = CMatrix::zeros(point.w.nrows(), point.w.ncols());
    for j in 0..out.ncols() {
        for i in 0..out.nrows() {
            if !point.mask[(i, j)] {
                continue;
            }
            let v = point.w[(i, j)] + d[(i, j)] * alpha;
            let n = v.norm();
            if !(n > 0.0) || !n.is_finite() {
                return Err(Error::DegenerateRetraction { row: i, col: j });
            }
            out[(i, j)] = v / n;
        }
    }
    Ok(ManifoldPoint {
        w: out,
        mask: point.mask.clone(),
    })
}

/// Moves a tangent vector to the tangent space at `next` by projection.
pub fn transport(d: &CMatrix, next: &ManifoldPoint) -> CMatrix {
    project_onto(&next.w, &next.mask, d)
}

/// Nonnegative Polak-Ribiere coefficient from the new gradient, the old
/// gradient transported to the new point, and the old gradient.
pub fn polak_ribiere(g_new: &CMatrix, g_old_moved: &CMatrix, g_old: &CMatrix) -> f64 {
    let denom = real_inner(g_old, g_old);
    if denom <= 0.0 {
        return 0.0;
    }
    let num = real_inner(g_new, &(g_new - g_old_moved));
    (num / denom).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

impl Sense {
    fn sign(self) -> f64 {
        match self {
            Sense::Minimize => 1.0,
            Sense::Maximize => -1.0,
        }
    }
}

/// Smooth objective on the ambient matrix space. Implementations must be
/// re-entrant; the optimizer only calls them through `&self`.
pub trait Objective {
    fn sense(&self) -> Sense {
        Sense::Minimize
    }

    fn value(&self, w: &CMatrix) -> Result<f64>;

    /// Euclidean gradient, same shape as `w`.
    fn gradient(&self, w: &CMatrix) -> Result<CMatrix>;

    fn value_and_gradient(&self, w: &CMatrix) -> Result<(f64, CMatrix)> {
        Ok((self.value(w)?, self.gradient(w)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Armijo {
    pub initial_step: f64,
    pub contraction: f64,
    pub sufficient_decrease: f64,
    pub max_backtracks: usize,
}

impl Default for Armijo {
    fn default() -> Self {
        Self {
            initial_step: 1.0,
            contraction: 0.5,
            sufficient_decrease: 1e-4,
            max_backtracks: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOptions {
    /// Stop once `|f_new - f_old| / |f_old|` drops below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Stop once the Riemannian gradient norm is below `grad_tol * (1 + |f|)`.
    pub grad_tol: f64,
    pub armijo: Armijo,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 200,
            grad_tol: 1e-12,
            armijo: Armijo::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Stationary,
    SmallChange,
    LineSearchFailed,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub point: ManifoldPoint,
    /// Objective value at the start and after every accepted step.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub stop: StopReason,
}

impl CgOutcome {
    pub fn value(&self) -> f64 {
        *self.trace.last().expect("trace holds the starting value")
    }
}

fn finite_grad(g: &CMatrix) -> bool {
    g.iter().all(|v| v.is_finite())
}

/// Polak-Ribiere conjugate gradient with Armijo backtracking. Maximization
/// is handled by descending on the negated objective.
pub fn cg_optimize<O: Objective + ?Sized>(
    objective: &O,
    start: ManifoldPoint,
    options: &CgOptions,
) -> Result<CgOutcome> {
    let sign = objective.sense().sign();
    let mut point = start;
    let (f0, egrad) = objective.value_and_gradient(point.matrix())?;
    if !f0.is_finite() || !finite_grad(&egrad) {
        return Err(Error::NonFinite { iteration: 0 });
    }
    let mut cost = sign * f0;
    let mut grad = riemannian_project(&point, &(egrad * C64::new(sign, 0.0)));
    let mut dir = -grad.clone();
    let mut trace = vec![f0];
    let mut stop = StopReason::MaxIterations;
    let mut iterations = 0;

    for it in 1..=options.max_iter {
        iterations = it;
        let gnorm2 = real_inner(&grad, &grad);
        if gnorm2.sqrt() <= options.grad_tol * (1.0 + cost.abs()) {
            stop = StopReason::Stationary;
            break;
        }
        let mut slope = real_inner(&grad, &dir);
        if slope >= 0.0 {
            dir = -grad.clone();
            slope = -gnorm2;
        }

        let Armijo {
            initial_step,
            contraction,
            sufficient_decrease,
            max_backtracks,
        } = options.armijo;
        let mut alpha = initial_step;
        let mut accepted = None;
        for _ in 0..=max_backtracks {
            match retract(&point, &dir, alpha) {
                Ok(candidate) => {
                    let f = objective.value(candidate.matrix())?;
                    if f.is_finite() && sign * f <= cost + sufficient_decrease * alpha * slope {
                        accepted = Some((candidate, f));
                        break;
                    }
                }
                Err(Error::DegenerateRetraction { .. }) => {}
                Err(e) => return Err(e),
            }
            alpha *= contraction;
        }
        let Some((next, f_next)) = accepted else {
            stop = StopReason::LineSearchFailed;
            break;
        };

        let egrad = objective.gradient(next.matrix())?;
        if !finite_grad(&egrad) {
            return Err(Error::NonFinite { iteration: it });
        }
        let grad_next = riemannian_project(&next, &(egrad * C64::new(sign, 0.0)));
        let grad_moved = transport(&grad, &next);
        let dir_moved = transport(&dir, &next);
        let beta = polak_ribiere(&grad_next, &grad_moved, &grad);
        dir = -&grad_next + dir_moved * C64::new(beta, 0.0);

        let cost_next = sign * f_next;
        let change = (cost_next - cost).abs() / cost.abs().max(f64::MIN_POSITIVE);
        point = next;
        cost = cost_next;
        grad = grad_next;
        trace.push(f_next);
        if change < options.tol {
            stop = StopReason::SmallChange;
            break;
        }
    }

    Ok(CgOutcome {
        point,
        trace,
        iterations,
        stop,
    })
}
