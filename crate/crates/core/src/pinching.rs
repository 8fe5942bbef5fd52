//! Gauss-Seidel grid search over PA positions.
//!
//! Each pass visits the PAs in ascending order and tries every candidate
//! position of the current PA with all other PAs held in place. A candidate is
//! accepted only if it keeps the configuration feasible and strictly improves
//! the objective.

use crate::error::{Error, Result};
use crate::geometry::{GeometryConfig, PinchPositions, Violation, POSITION_EPS};
use crate::manifold::Sense;

/// Candidate positions per PA.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchGrid {
    resolution: f64,
    bounds: Vec<(f64, f64)>,
    candidates: Vec<Vec<f64>>,
}

fn interval_points(lo: f64, hi: f64, resolution: f64) -> Vec<f64> {
    let steps = ((hi - lo) / resolution + 1e-9).floor() as usize;
    let mut points: Vec<f64> = (0..=steps).map(|i| lo + i as f64 * resolution).collect();
    if let Some(last) = points.last_mut() {
        if *last > hi {
            *last = hi;
        }
    }
    if hi - points[points.len() - 1] > POSITION_EPS {
        points.push(hi);
    }
    points
}

impl SearchGrid {
    /// One grid per waveguide segment, both endpoints included.
    pub fn for_segments(geom: &GeometryConfig, resolution: f64) -> Result<Self> {
        let bounds = (0..geom.segments()).map(|m| geom.segment_bounds(m)).collect();
        Self::from_bounds(bounds, resolution)
    }

    /// `count` PAs sharing the interval `[lo, hi]`, as on a single long waveguide.
    pub fn shared(lo: f64, hi: f64, count: usize, resolution: f64) -> Result<Self> {
        Self::from_bounds(vec![(lo, hi); count], resolution)
    }

    pub fn from_bounds(bounds: Vec<(f64, f64)>, resolution: f64) -> Result<Self> {
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "grid resolution must be positive, got {resolution}"
            )));
        }
        if let Some((lo, hi)) = bounds.iter().find(|(lo, hi)| !(lo <= hi)) {
            return Err(Error::InvalidConfig(format!("empty search interval [{lo}, {hi}]")));
        }
        let candidates = bounds
            .iter()
            .map(|&(lo, hi)| interval_points(lo, hi, resolution))
            .collect();
        Ok(Self {
            resolution,
            bounds,
            candidates,
        })
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.bounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bounds.is_empty()
    }

    pub fn bounds(&self, m: usize) -> (f64, f64) {
        self.bounds[m]
    }

    pub fn candidates(&self, m: usize) -> &[f64] {
        &self.candidates[m]
    }

    /// Checks that `x` sits inside the grid's intervals with the given spacing.
    pub fn check(&self, x: &[f64], delta_min: f64) -> std::result::Result<(), Violation> {
        if x.len() != self.len() {
            return Err(Violation::Count {
                expected: self.len(),
                got: x.len(),
            });
        }
        for (m, &xm) in x.iter().enumerate() {
            let (lo, hi) = self.bounds[m];
            if !(xm >= lo - POSITION_EPS && xm <= hi + POSITION_EPS) {
                return Err(Violation::Containment { index: m, x: xm, lo, hi });
            }
        }
        for i in 0..x.len() {
            for j in i + 1..x.len() {
                let gap = (x[i] - x[j]).abs();
                if gap < delta_min - POSITION_EPS {
                    return Err(Violation::Spacing { first: i, second: j, gap });
                }
            }
        }
        Ok(())
    }
}

/// Objective over position vectors. `evaluate_move` may be overridden with
/// an incremental evaluation; `commit` tells the objective that PA `m` moved.
pub trait PositionObjective {
    fn evaluate(&mut self, x: &[f64]) -> f64;

    fn evaluate_move(&mut self, x: &[f64], m: usize, candidate: f64) -> f64 {
        let mut trial = x.to_vec();
        trial[m] = candidate;
        self.evaluate(&trial)
    }

    fn commit(&mut self, _x: &[f64], _m: usize) {}
}

impl<F: FnMut(&[f64]) -> f64> PositionObjective for F {
    fn evaluate(&mut self, x: &[f64]) -> f64 {
        self(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchOptions {
    /// Stop once a pass changes the objective by less than this fraction.
    pub tol: f64,
    pub max_pass: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_pass: 100,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub positions: PinchPositions,
    /// Objective at the start and after every pass.
    pub trace: Vec<f64>,
    pub passes: usize,
}

impl SearchOutcome {
    pub fn value(&self) -> f64 {
        *self.trace.last().expect("trace holds the starting value")
    }
}

fn spacing_ok(x: &[f64], m: usize, candidate: f64, delta_min: f64) -> bool {
    x.iter()
        .enumerate()
        .all(|(j, &xj)| j == m || (candidate - xj).abs() >= delta_min - POSITION_EPS)
}

fn better(sense: Sense, candidate: f64, incumbent: f64) -> bool {
    candidate.is_finite()
        && match sense {
            Sense::Minimize => candidate < incumbent,
            Sense::Maximize => candidate > incumbent,
        }
}

/// Per-coordinate grid search with strict-improvement acceptance.
pub fn gauss_seidel<O: PositionObjective + ?Sized>(
    objective: &mut O,
    sense: Sense,
    grid: &SearchGrid,
    delta_min: f64,
    x0: PinchPositions,
    options: &SearchOptions,
) -> Result<SearchOutcome> {
    grid.check(x0.as_slice(), delta_min).map_err(Error::Infeasible)?;
    let mut x = x0.into_inner();
    let mut value = objective.evaluate(&x);
    let mut trace = vec![value];
    let mut passes = 0;

    while passes < options.max_pass {
        passes += 1;
        let start = value;
        let mut moved = false;
        for m in 0..x.len() {
            let mut best: Option<(f64, f64)> = None;
            for &c in grid.candidates(m) {
                if c == x[m] || !spacing_ok(&x, m, c, delta_min) {
                    continue;
                }
                let v = objective.evaluate_move(&x, m, c);
                let incumbent = best.map_or(value, |(_, bv)| bv);
                if better(sense, v, incumbent) {
                    best = Some((c, v));
                }
            }
            if let Some((c, v)) = best {
                x[m] = c;
                value = v;
                moved = true;
                objective.commit(&x, m);
            }
        }
        trace.push(value);
        let change = (value - start).abs() / start.abs().max(f64::MIN_POSITIVE);
        if !moved || change < options.tol {
            break;
        }
    }

    Ok(SearchOutcome {
        positions: PinchPositions::new(x),
        trace,
        passes,
    })
}
