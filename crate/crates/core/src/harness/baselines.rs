//! Reference receivers compared against the segmented design.

use crate::error::{Error, Result};
use crate::fc::{bcd_fc_observed, BcdOptions, BcdOutcome, StepEvent, Variant};
use crate::geometry::{FixedArrayChannel, Point3, RadioConfig, UserLayout};
use crate::linalg::C64;
use crate::manifold::Sense;
use crate::metrics::{full_mask, BeamformerState};
use crate::pinching::{gauss_seidel, PositionObjective, SearchGrid, SearchOptions};
use crate::CMatrix;

use super::config::Scenario;

/// Hybrid WMMSE on a fixed half-wavelength ULA of `M` elements centered at
/// `(D_x/2, 0, H)`. There is no waveguide and no pinching step; the analog
/// network starts from the zero-forcing solution when one exists.
pub fn mmimo_fc_wmmse(
    scenario: &Scenario,
    users: &UserLayout,
    analog_start: CMatrix,
    options: &BcdOptions,
    observer: &mut dyn FnMut(Variant, &StepEvent<'_>),
) -> Result<BcdOutcome> {
    let geom = &scenario.geometry;
    let center = Point3::new(geom.d_x() / 2.0, 0.0, geom.height());
    let model = FixedArrayChannel::half_wavelength_ula(geom.segments(), center, &scenario.radio, users);
    let options = BcdOptions {
        pinching: None,
        ..options.clone()
    };
    let m = geom.segments();
    let n_rf = analog_start.ncols();
    let init = BeamformerState::new(
        analog_start,
        CMatrix::zeros(n_rf, users.len()),
        full_mask(m, n_rf),
        vec![1.0; users.len()],
    )?;
    let zf = bcd_fc_observed(Variant::Zf, &model, &scenario.radio, &init, model.positions(), &options, &mut |ev| {
        observer(Variant::Zf, ev)
    });
    let start = match zf {
        Ok(zf) => zf.state,
        Err(e) if matches!(e.root(), Error::ZfInfeasible) => init,
        Err(e) => return Err(e),
    };
    bcd_fc_observed(Variant::Wmmse, &model, &scenario.radio, &start, model.positions(), &options, &mut |ev| {
        observer(Variant::Wmmse, ev)
    })
}

/// Single waveguide over `[0, D_x]` fed at `x = 0`, one RF chain, `M`
/// pinching antennas sharing the guide. The antennas superpose without any
/// normalization: user `k` sees `h_k = sum_m g(r_mk) * w(x_m)` with `g` the
/// free-space response and `w` the guided response from the feed.
#[derive(Debug, Clone)]
pub struct ConvPass<'a> {
    pub radio: &'a RadioConfig,
    pub users: &'a UserLayout,
    pub d_x: f64,
    pub height: f64,
}

#[derive(Debug, Clone)]
pub struct ConvPassOutcome {
    pub positions: Vec<f64>,
    pub per_user_rates: Vec<f64>,
    pub passes: usize,
}

impl ConvPassOutcome {
    pub fn rate(&self) -> f64 {
        self.per_user_rates.iter().sum()
    }
}

impl ConvPass<'_> {
    fn contribution(&self, xm: f64, k: usize) -> C64 {
        let r = Point3::new(xm, 0.0, self.height).distance(&self.users.positions()[k]);
        self.radio.free_space_gain(r) * self.radio.guided_gain(xm)
    }

    /// Effective scalar channel of every user.
    pub fn effective_channel(&self, x: &[f64]) -> Vec<C64> {
        (0..self.users.len())
            .map(|k| x.iter().map(|&xm| self.contribution(xm, k)).sum())
            .collect()
    }

    /// Rates of the scalar MMSE receiver on one RF chain.
    pub fn rates(&self, h: &[C64]) -> Vec<f64> {
        let p = self.radio.power();
        let total: f64 = h.iter().map(|v| v.norm_sqr()).sum();
        h.iter()
            .map(|v| {
                let s = v.norm_sqr();
                (1.0 + p * s / (p * (total - s) + self.radio.noise())).log2()
            })
            .collect()
    }

    /// Antennas evenly spread at `(m + 1/2) D_x / M`.
    pub fn initial_positions(&self, count: usize) -> Vec<f64> {
        let step = self.d_x / count as f64;
        (0..count).map(|m| (m as f64 + 0.5) * step).collect()
    }

    /// Gauss-Seidel placement maximizing the sum rate.
    pub fn optimize(&self, x0: Vec<f64>, resolution: f64, delta_min: f64, search: &SearchOptions) -> Result<ConvPassOutcome> {
        if x0.is_empty() {
            return Err(Error::InvalidConfig("at least one pinching antenna is required".into()));
        }
        let grid = SearchGrid::shared(0.0, self.d_x, x0.len(), resolution)?;
        let mut objective = ConvObjective::new(self, &x0);
        let out = gauss_seidel(
            &mut objective,
            Sense::Maximize,
            &grid,
            delta_min,
            crate::geometry::PinchPositions::new(x0),
            search,
        )?;
        let positions = out.positions.into_inner();
        let h = self.effective_channel(&positions);
        Ok(ConvPassOutcome {
            per_user_rates: self.rates(&h),
            positions,
            passes: out.passes,
        })
    }
}

/// Sum rate with per-antenna contributions cached so a single move costs O(K).
struct ConvObjective<'a, 'b> {
    model: &'b ConvPass<'a>,
    parts: Vec<Vec<C64>>,
    sums: Vec<C64>,
}

impl<'a, 'b> ConvObjective<'a, 'b> {
    fn new(model: &'b ConvPass<'a>, x: &[f64]) -> Self {
        let mut s = Self {
            model,
            parts: Vec::new(),
            sums: Vec::new(),
        };
        s.rebuild(x);
        s
    }

    fn rebuild(&mut self, x: &[f64]) {
        let k = self.model.users.len();
        self.parts = x
            .iter()
            .map(|&xm| (0..k).map(|u| self.model.contribution(xm, u)).collect())
            .collect();
        self.sums = (0..k).map(|u| self.parts.iter().map(|p| p[u]).sum()).collect();
    }

    fn rate_of(&self, h: &[C64]) -> f64 {
        self.model.rates(h).iter().sum()
    }
}

impl PositionObjective for ConvObjective<'_, '_> {
    fn evaluate(&mut self, x: &[f64]) -> f64 {
        self.rebuild(x);
        let h = self.sums.clone();
        self.rate_of(&h)
    }

    fn evaluate_move(&mut self, _x: &[f64], m: usize, candidate: f64) -> f64 {
        let h: Vec<C64> = (0..self.sums.len())
            .map(|u| self.sums[u] - self.parts[m][u] + self.model.contribution(candidate, u))
            .collect();
        self.rate_of(&h)
    }

    fn commit(&mut self, x: &[f64], m: usize) {
        for u in 0..self.sums.len() {
            let new = self.model.contribution(x[m], u);
            self.sums[u] += new - self.parts[m][u];
            self.parts[m][u] = new;
        }
    }
}
