//! Fully connected tri-hybrid receivers: WMMSE and zero-forcing block
//! coordinate descent over the digital combiner, the analog phase-shifter
//! network and the PA positions.

use crate::error::{Error, Result};
use crate::geometry::{ChannelModel, PinchPositions, RadioConfig};
use crate::linalg::{inverse_hpd, real_inner, solve_hpd, CMatrix, C64};
use crate::manifold::{cg_optimize, CgOptions, ManifoldPoint, Objective, Sense};
use crate::metrics::{mse_all, sum_rate, BeamformerState};
use crate::pinching::{gauss_seidel, PositionObjective, SearchGrid, SearchOptions};

/// Quadratic model of the weighted MSE in the analog combiner:
/// `f(W) = tr(W^H R W C) - Re tr(W^H B) + P sum_k w_k`.
#[derive(Debug, Clone)]
pub struct WmmseCache {
    pub r: CMatrix,
    pub c: CMatrix,
    pub b: CMatrix,
    constant: f64,
}

impl WmmseCache {
    pub fn new(h: &CMatrix, digital: &CMatrix, weights: &[f64], radio: &RadioConfig) -> Result<Self> {
        let (m, k) = h.shape();
        if digital.ncols() != k || weights.len() != k {
            return Err(Error::Shape(format!(
                "channel has {k} users, digital has {}, weights {}",
                digital.ncols(),
                weights.len()
            )));
        }
        let p = radio.power();
        let mut r = h * h.adjoint();
        for i in 0..m {
            r[(i, i)] += radio.noise_to_power();
        }
        let n = digital.nrows();
        let mut c = CMatrix::zeros(n, n);
        let mut b = CMatrix::zeros(m, n);
        for (kk, &w) in weights.iter().enumerate() {
            let wk = digital.column(kk);
            c += (&wk * wk.adjoint()) * C64::new(p * w, 0.0);
            b += (h.column(kk) * wk.adjoint()) * C64::new(2.0 * p * w, 0.0);
        }
        Ok(Self {
            r,
            c,
            b,
            constant: p * weights.iter().sum::<f64>(),
        })
    }

    /// Cache with explicit matrices; the constant is `K P` for `K` users.
    pub fn from_parts(r: CMatrix, c: CMatrix, b: CMatrix, users: usize, radio: &RadioConfig) -> Self {
        Self {
            r,
            c,
            b,
            constant: users as f64 * radio.power(),
        }
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }
}

impl Objective for WmmseCache {
    fn value(&self, w: &CMatrix) -> Result<f64> {
        Ok(wmmse_analog_objective(w, self)?.0)
    }

    fn gradient(&self, w: &CMatrix) -> Result<CMatrix> {
        Ok(wmmse_analog_objective(w, self)?.1)
    }

    fn value_and_gradient(&self, w: &CMatrix) -> Result<(f64, CMatrix)> {
        wmmse_analog_objective(w, self)
    }
}

/// Value and Euclidean gradient `2 R W C - B` of the analog WMMSE objective.
pub fn wmmse_analog_objective(w: &CMatrix, cache: &WmmseCache) -> Result<(f64, CMatrix)> {
    if w.nrows() != cache.r.nrows() || w.ncols() != cache.c.nrows() {
        return Err(Error::Shape(format!(
            "analog {:?} vs cache {}x{}",
            w.shape(),
            cache.r.nrows(),
            cache.c.nrows()
        )));
    }
    let rwc = &cache.r * w * &cache.c;
    let value = real_inner(w, &rwc) - real_inner(w, &cache.b) + cache.constant;
    let grad = rwc * C64::new(2.0, 0.0) - &cache.b;
    Ok((value, grad))
}

/// MMSE digital combiner for a fixed analog network.
pub fn wmmse_digital_update(analog: &CMatrix, h: &CMatrix, radio: &RadioConfig) -> Result<CMatrix> {
    if analog.nrows() != h.nrows() {
        return Err(Error::Shape(format!("analog {:?} vs channel {:?}", analog.shape(), h.shape())));
    }
    let hc = analog.ad_mul(h);
    let mut a = &hc * hc.adjoint();
    a += analog.ad_mul(analog) * C64::new(radio.noise_to_power(), 0.0);
    solve_hpd(&a, &hc, "MMSE digital update")
}

/// `w_k = 1 / e_k`.
pub fn wmmse_weight_update(e: &[f64]) -> Result<Vec<f64>> {
    e.iter()
        .map(|&ek| {
            if ek > 0.0 && ek.is_finite() {
                Ok(1.0 / ek)
            } else {
                Err(Error::Domain(format!("MSE must be positive, got {ek}")))
            }
        })
        .collect()
}

/// Relative pivot below which the ZF Gram matrix counts as singular.
const ZF_RANK_TOL: f64 = 1e-12;

fn zf_gram_inverse(t2: &CMatrix) -> Result<CMatrix> {
    let scale = (0..t2.nrows()).map(|i| t2[(i, i)].re).fold(0.0, f64::max);
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::ZfInfeasible);
    }
    let chol = t2.clone().cholesky().ok_or(Error::ZfInfeasible)?;
    let l = chol.l_dirty();
    let min_pivot = (0..t2.nrows()).map(|i| l[(i, i)].norm_sqr()).fold(f64::INFINITY, f64::min);
    if min_pivot < ZF_RANK_TOL * scale {
        return Err(Error::ZfInfeasible);
    }
    let n = t2.nrows();
    Ok(chol.solve(&CMatrix::identity(n, n)))
}

/// Intermediate matrices of the ZF analog objective.
#[derive(Debug, Clone)]
pub struct ZfCache {
    pub t1: CMatrix,
    pub h_check: CMatrix,
    pub t2: CMatrix,
    pub t3: CMatrix,
    pub t: Vec<f64>,
    pub t4: Vec<f64>,
    pub c: f64,
}

impl ZfCache {
    pub fn new(analog: &CMatrix, h: &CMatrix, radio: &RadioConfig) -> Result<Self> {
        if analog.nrows() != h.nrows() {
            return Err(Error::Shape(format!("analog {:?} vs channel {:?}", analog.shape(), h.shape())));
        }
        if h.ncols() > analog.ncols() {
            return Err(Error::ZfInfeasible);
        }
        let t1 = inverse_hpd(&analog.ad_mul(analog), "analog Gram matrix").map_err(|_| Error::ZfInfeasible)?;
        let h_check = analog.ad_mul(h);
        let t2 = h_check.ad_mul(&(&t1 * &h_check));
        let t3 = zf_gram_inverse(&t2)?;
        let c = 1.0 / radio.noise_to_power();
        let t: Vec<f64> = (0..t3.nrows()).map(|k| t3[(k, k)].re).collect();
        if t.iter().any(|tk| !(*tk > 0.0)) {
            return Err(Error::ZfInfeasible);
        }
        let ln2 = std::f64::consts::LN_2;
        let t4 = t.iter().map(|tk| -c / (ln2 * tk * (tk + c))).collect();
        Ok(Self {
            t1,
            h_check,
            t2,
            t3,
            t,
            t4,
            c,
        })
    }

    pub fn value(&self) -> f64 {
        self.t.iter().map(|tk| (1.0 + self.c / tk).log2()).sum()
    }
}

/// Minimum-norm zero-forcing digital combiner `D^-1 H' (H'^H D^-1 H')^-1`
/// with `D = W^H W` and `H' = W^H H`.
pub fn zf_digital_update(analog: &CMatrix, h: &CMatrix) -> Result<CMatrix> {
    if analog.nrows() != h.nrows() {
        return Err(Error::Shape(format!("analog {:?} vs channel {:?}", analog.shape(), h.shape())));
    }
    if h.ncols() > analog.ncols() {
        return Err(Error::ZfInfeasible);
    }
    let t1 = inverse_hpd(&analog.ad_mul(analog), "analog Gram matrix").map_err(|_| Error::ZfInfeasible)?;
    let h_check = analog.ad_mul(h);
    let t1h = &t1 * &h_check;
    let t3 = zf_gram_inverse(&h_check.ad_mul(&t1h))?;
    Ok(t1h * t3)
}

/// Value `sum_k log2(1 + c / t_k)` and Euclidean gradient of the ZF analog
/// objective, in the `df = Re tr(G^H dW)` convention.
pub fn zf_analog_objective(analog: &CMatrix, h: &CMatrix, radio: &RadioConfig) -> Result<(f64, CMatrix)> {
    let cache = ZfCache::new(analog, h, radio)?;
    let t4 = CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        cache.t4.len(),
        cache.t4.iter().map(|v| C64::new(*v, 0.0)),
    ));
    let a = &cache.t3 * t4 * &cache.t3;
    let right = &a * cache.h_check.adjoint() * &cache.t1;
    let grad = (analog * &cache.t1 * &cache.h_check * &right - h * &right) * C64::new(2.0, 0.0);
    Ok((cache.value(), grad))
}

struct ZfAnalog<'a> {
    h: &'a CMatrix,
    radio: &'a RadioConfig,
}

impl Objective for ZfAnalog<'_> {
    fn sense(&self) -> Sense {
        Sense::Maximize
    }

    fn value(&self, w: &CMatrix) -> Result<f64> {
        match ZfCache::new(w, self.h, self.radio) {
            Ok(cache) => Ok(cache.value()),
            Err(Error::ZfInfeasible) => Ok(f64::NEG_INFINITY),
            Err(e) => Err(e),
        }
    }

    fn gradient(&self, w: &CMatrix) -> Result<CMatrix> {
        Ok(zf_analog_objective(w, self.h, self.radio)?.1)
    }

    fn value_and_gradient(&self, w: &CMatrix) -> Result<(f64, CMatrix)> {
        zf_analog_objective(w, self.h, self.radio)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Wmmse,
    Zf,
}

/// PA search used inside the descent; absent for fixed arrays.
#[derive(Debug, Clone)]
pub struct PinchingStep {
    pub grid: SearchGrid,
    pub delta_min: f64,
    pub search: SearchOptions,
}

#[derive(Debug, Clone)]
pub struct BcdOptions {
    /// Stop once the fractional sum-rate change drops below this.
    pub tol: f64,
    pub max_outer: usize,
    pub cg: CgOptions,
    pub pinching: Option<PinchingStep>,
}

impl Default for BcdOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_outer: 50,
            cg: CgOptions::default(),
            pinching: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubStep {
    Digital,
    Analog,
    Pinching,
    Weights,
}

/// Snapshot handed to observers after every sub-step. `objective` is the
/// weighted-MSE objective for WMMSE and the ZF sum rate for ZF.
#[derive(Debug)]
pub struct StepEvent<'a> {
    pub iteration: usize,
    pub step: SubStep,
    pub state: &'a BeamformerState,
    pub positions: &'a PinchPositions,
    pub channel: &'a CMatrix,
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct BcdOutcome {
    pub state: BeamformerState,
    pub positions: PinchPositions,
    pub channel: CMatrix,
    /// Sum rate before the first outer iteration and after each one.
    pub rate_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl BcdOutcome {
    pub fn rate(&self) -> f64 {
        *self.rate_trace.last().expect("trace holds the initial rate")
    }
}

pub(crate) enum AnalogUpdate<'a> {
    Manifold(&'a CgOptions),
    /// Element-wise sweeps until the analog objective settles; the CG
    /// tolerance and iteration cap are reused for the sweeps.
    Elementwise(&'a CgOptions),
}

fn weighted_objective(e: &[f64], weights: &[f64]) -> f64 {
    e.iter().zip(weights).map(|(e, w)| w * e - w.ln()).sum()
}

fn fractional_change(new: f64, old: f64) -> f64 {
    (new - old).abs() / old.abs().max(f64::MIN_POSITIVE)
}

/// Weighted MSE `sum_k w_k e_k` as a function of the PA positions with the
/// combined receivers `u_k` held fixed. Moves are scored through rank-one
/// updates of the cross gains `u_k^H h_j`.
struct WmmsePinching<'a, C: ChannelModel + ?Sized> {
    model: &'a C,
    radio: &'a RadioConfig,
    u: CMatrix,
    weights: &'a [f64],
    norms: Vec<f64>,
    h: CMatrix,
    gains: CMatrix,
    scratch: CMatrix,
}

impl<'a, C: ChannelModel + ?Sized> WmmsePinching<'a, C> {
    fn new(model: &'a C, radio: &'a RadioConfig, u: CMatrix, weights: &'a [f64], h: CMatrix) -> Self {
        let norms = u.column_iter().map(|c| c.norm_squared()).collect();
        let gains = u.ad_mul(&h);
        let k = h.ncols();
        Self {
            model,
            radio,
            u,
            weights,
            norms,
            h,
            gains,
            scratch: CMatrix::zeros(k, k),
        }
    }

    fn score(&self, gains: &CMatrix) -> f64 {
        let p = self.radio.power();
        let noise = self.radio.noise();
        (0..gains.nrows())
            .map(|k| {
                let all: f64 = gains.row(k).iter().map(|a| a.norm_sqr()).sum();
                self.weights[k] * (p * all - 2.0 * p * gains[(k, k)].re + noise * self.norms[k] + p)
            })
            .sum()
    }

    fn apply_move(&self, m: usize, candidate: f64, gains: &mut CMatrix) {
        let k = self.h.ncols();
        for j in 0..k {
            let delta = self.model.entry(m, candidate, j) - self.h[(m, j)];
            for i in 0..k {
                gains[(i, j)] += self.u[(m, i)].conj() * delta;
            }
        }
    }
}

impl<C: ChannelModel + ?Sized> PositionObjective for WmmsePinching<'_, C> {
    fn evaluate(&mut self, x: &[f64]) -> f64 {
        for (m, &xm) in x.iter().enumerate() {
            for j in 0..self.h.ncols() {
                self.h[(m, j)] = self.model.entry(m, xm, j);
            }
        }
        self.gains = self.u.ad_mul(&self.h);
        self.score(&self.gains)
    }

    fn evaluate_move(&mut self, _x: &[f64], m: usize, candidate: f64) -> f64 {
        let mut scratch = std::mem::take(&mut self.scratch);
        scratch.copy_from(&self.gains);
        self.apply_move(m, candidate, &mut scratch);
        let v = self.score(&scratch);
        self.scratch = scratch;
        v
    }

    fn commit(&mut self, x: &[f64], m: usize) {
        for j in 0..self.h.ncols() {
            self.h[(m, j)] = self.model.entry(m, x[m], j);
        }
        self.gains = self.u.ad_mul(&self.h);
    }
}

/// ZF sum rate as a function of the PA positions with the analog network
/// fixed and the ZF digital combiner implicitly re-derived. Rank-deficient
/// configurations score NaN and are never accepted.
struct ZfPinching<'a, C: ChannelModel + ?Sized> {
    model: &'a C,
    analog: &'a CMatrix,
    t1: CMatrix,
    c: f64,
    h: CMatrix,
    h_check: CMatrix,
    t1h: CMatrix,
}

impl<'a, C: ChannelModel + ?Sized> ZfPinching<'a, C> {
    fn new(model: &'a C, analog: &'a CMatrix, radio: &RadioConfig, h: CMatrix) -> Result<Self> {
        let t1 = inverse_hpd(&analog.ad_mul(analog), "analog Gram matrix").map_err(|_| Error::ZfInfeasible)?;
        let h_check = analog.ad_mul(&h);
        let t1h = &t1 * &h_check;
        Ok(Self {
            model,
            analog,
            t1,
            c: 1.0 / radio.noise_to_power(),
            h,
            h_check,
            t1h,
        })
    }

    fn score(&self, h_check: &CMatrix, t1h: &CMatrix) -> f64 {
        match zf_gram_inverse(&h_check.ad_mul(t1h)) {
            Ok(t3) => (0..t3.nrows())
                .map(|k| {
                    let tk = t3[(k, k)].re;
                    if tk > 0.0 {
                        (1.0 + self.c / tk).log2()
                    } else {
                        f64::NAN
                    }
                })
                .sum(),
            Err(_) => f64::NAN,
        }
    }

    fn moved(&self, m: usize, candidate: f64) -> (CMatrix, CMatrix) {
        let k = self.h.ncols();
        let v = self.analog.row(m).adjoint();
        let t1v = &self.t1 * &v;
        let delta = nalgebra::RowDVector::from_iterator(
            k,
            (0..k).map(|j| self.model.entry(m, candidate, j) - self.h[(m, j)]),
        );
        (&self.h_check + &v * &delta, &self.t1h + t1v * delta)
    }
}

impl<C: ChannelModel + ?Sized> PositionObjective for ZfPinching<'_, C> {
    fn evaluate(&mut self, x: &[f64]) -> f64 {
        for (m, &xm) in x.iter().enumerate() {
            for j in 0..self.h.ncols() {
                self.h[(m, j)] = self.model.entry(m, xm, j);
            }
        }
        self.h_check = self.analog.ad_mul(&self.h);
        self.t1h = &self.t1 * &self.h_check;
        self.score(&self.h_check, &self.t1h)
    }

    fn evaluate_move(&mut self, _x: &[f64], m: usize, candidate: f64) -> f64 {
        let (hc, t1h) = self.moved(m, candidate);
        self.score(&hc, &t1h)
    }

    fn commit(&mut self, x: &[f64], m: usize) {
        for j in 0..self.h.ncols() {
            self.h[(m, j)] = self.model.entry(m, x[m], j);
        }
        self.h_check = self.analog.ad_mul(&self.h);
        self.t1h = &self.t1 * &self.h_check;
    }
}

fn check_init<C: ChannelModel + ?Sized>(model: &C, init: &BeamformerState, positions: &PinchPositions) -> Result<()> {
    init.validate()?;
    if init.antennas() != model.antennas() || positions.len() != model.antennas() {
        return Err(Error::Shape(format!(
            "model has {} antennas, analog has {}, positions {}",
            model.antennas(),
            init.antennas(),
            positions.len()
        )));
    }
    if init.users() != model.users() {
        return Err(Error::Shape(format!(
            "model has {} users, digital has {}",
            model.users(),
            init.users()
        )));
    }
    Ok(())
}

fn at(it: usize, step: &str) -> impl FnOnce(Error) -> Error + '_ {
    move |e| e.context(format!("outer iteration {it}, {step} step"))
}

/// WMMSE descent shared by the fully and partially connected receivers; only
/// the analog update differs.
pub(crate) fn wmmse_descent<C: ChannelModel + ?Sized>(
    model: &C,
    radio: &RadioConfig,
    init: &BeamformerState,
    positions: PinchPositions,
    options: &BcdOptions,
    analog_update: AnalogUpdate<'_>,
    observer: &mut dyn FnMut(&StepEvent<'_>),
) -> Result<BcdOutcome> {
    check_init(model, init, &positions)?;
    let mut x = positions;
    let mut h = model.channel(&x)?.into_matrix();
    let mut state = init.clone();
    let k = h.ncols();
    state.weights = vec![1.0; k];

    let refresh = |state: &mut BeamformerState,
                   h: &CMatrix,
                   x: &PinchPositions,
                   it: usize,
                   observer: &mut dyn FnMut(&StepEvent<'_>)|
     -> Result<()> {
        state.digital = wmmse_digital_update(&state.analog, h, radio).map_err(at(it, "digital"))?;
        let e = mse_all(state, h, radio)?;
        observer(&StepEvent {
            iteration: it,
            step: SubStep::Digital,
            state,
            positions: x,
            channel: h,
            objective: weighted_objective(&e, &state.weights),
        });
        state.weights = wmmse_weight_update(&e).map_err(at(it, "weight"))?;
        observer(&StepEvent {
            iteration: it,
            step: SubStep::Weights,
            state,
            positions: x,
            channel: h,
            objective: weighted_objective(&e, &state.weights),
        });
        Ok(())
    };

    refresh(&mut state, &h, &x, 0, observer)?;
    let mut rate = sum_rate(&state, &h, radio)?;
    let mut trace = vec![rate];
    let mut converged = false;
    let mut iterations = 0;

    for it in 1..=options.max_outer {
        iterations = it;

        let cache = WmmseCache::new(&h, &state.digital, &state.weights, radio)?;
        match analog_update {
            AnalogUpdate::Manifold(cg) => {
                let start = ManifoldPoint::new(state.analog.clone(), state.mask.clone())?;
                let out = cg_optimize(&cache, start, cg).map_err(at(it, "analog"))?;
                state.analog = out.point.into_parts().0;
            }
            AnalogUpdate::Elementwise(cg) => {
                crate::pc::elementwise_descent(&mut state.analog, &state.mask, &cache, cg.tol, cg.max_iter)
                    .map_err(at(it, "analog"))?;
            }
        }
        let e = mse_all(&state, &h, radio)?;
        observer(&StepEvent {
            iteration: it,
            step: SubStep::Analog,
            state: &state,
            positions: &x,
            channel: &h,
            objective: weighted_objective(&e, &state.weights),
        });

        if let Some(step) = &options.pinching {
            let u = state.combiners();
            let mut obj = WmmsePinching::new(model, radio, u, &state.weights, h.clone());
            let out = gauss_seidel(&mut obj, Sense::Minimize, &step.grid, step.delta_min, x, &step.search)
                .map_err(at(it, "pinching"))?;
            x = out.positions;
            h = model.channel(&x).map_err(at(it, "pinching"))?.into_matrix();
            let e = mse_all(&state, &h, radio)?;
            observer(&StepEvent {
                iteration: it,
                step: SubStep::Pinching,
                state: &state,
                positions: &x,
                channel: &h,
                objective: weighted_objective(&e, &state.weights),
            });
        }

        refresh(&mut state, &h, &x, it, observer)?;
        let next = sum_rate(&state, &h, radio)?;
        trace.push(next);
        let change = fractional_change(next, rate);
        rate = next;
        if change < options.tol {
            converged = true;
            break;
        }
    }

    Ok(BcdOutcome {
        state,
        positions: x,
        channel: h,
        rate_trace: trace,
        iterations,
        converged,
    })
}

fn zf_descent<C: ChannelModel + ?Sized>(
    model: &C,
    radio: &RadioConfig,
    init: &BeamformerState,
    positions: PinchPositions,
    options: &BcdOptions,
    observer: &mut dyn FnMut(&StepEvent<'_>),
) -> Result<BcdOutcome> {
    check_init(model, init, &positions)?;
    let mut x = positions;
    let mut h = model.channel(&x)?.into_matrix();
    let mut state = init.clone();
    state.weights = vec![1.0; h.ncols()];

    state.digital = zf_digital_update(&state.analog, &h).map_err(at(0, "digital"))?;
    let mut rate = sum_rate(&state, &h, radio)?;
    observer(&StepEvent {
        iteration: 0,
        step: SubStep::Digital,
        state: &state,
        positions: &x,
        channel: &h,
        objective: rate,
    });
    let mut trace = vec![rate];
    let mut converged = false;
    let mut iterations = 0;

    for it in 1..=options.max_outer {
        iterations = it;

        let objective = ZfAnalog { h: &h, radio };
        let start = ManifoldPoint::new(state.analog.clone(), state.mask.clone())?;
        let out = cg_optimize(&objective, start, &options.cg).map_err(at(it, "analog"))?;
        let value = out.value();
        state.analog = out.point.into_parts().0;
        observer(&StepEvent {
            iteration: it,
            step: SubStep::Analog,
            state: &state,
            positions: &x,
            channel: &h,
            objective: value,
        });

        if let Some(step) = &options.pinching {
            let mut obj = ZfPinching::new(model, &state.analog, radio, h.clone()).map_err(at(it, "pinching"))?;
            let out = gauss_seidel(&mut obj, Sense::Maximize, &step.grid, step.delta_min, x, &step.search)
                .map_err(at(it, "pinching"))?;
            let value = out.value();
            x = out.positions;
            h = model.channel(&x).map_err(at(it, "pinching"))?.into_matrix();
            observer(&StepEvent {
                iteration: it,
                step: SubStep::Pinching,
                state: &state,
                positions: &x,
                channel: &h,
                objective: value,
            });
        }

        state.digital = zf_digital_update(&state.analog, &h).map_err(at(it, "digital"))?;
        let next = sum_rate(&state, &h, radio)?;
        observer(&StepEvent {
            iteration: it,
            step: SubStep::Digital,
            state: &state,
            positions: &x,
            channel: &h,
            objective: next,
        });
        trace.push(next);
        let change = fractional_change(next, rate);
        rate = next;
        if change < options.tol {
            converged = true;
            break;
        }
    }

    Ok(BcdOutcome {
        state,
        positions: x,
        channel: h,
        rate_trace: trace,
        iterations,
        converged,
    })
}

/// Block coordinate descent for the fully connected receiver. The digital
/// combiner and weights of `init` are recomputed; only its analog network
/// and mask are used.
pub fn bcd_fc<C: ChannelModel + ?Sized>(
    variant: Variant,
    model: &C,
    radio: &RadioConfig,
    init: &BeamformerState,
    positions: PinchPositions,
    options: &BcdOptions,
) -> Result<BcdOutcome> {
    bcd_fc_observed(variant, model, radio, init, positions, options, &mut |_| {})
}

/// [`bcd_fc`] with a callback invoked after every sub-step.
pub fn bcd_fc_observed<C: ChannelModel + ?Sized>(
    variant: Variant,
    model: &C,
    radio: &RadioConfig,
    init: &BeamformerState,
    positions: PinchPositions,
    options: &BcdOptions,
    observer: &mut dyn FnMut(&StepEvent<'_>),
) -> Result<BcdOutcome> {
    match variant {
        Variant::Wmmse => wmmse_descent(
            model,
            radio,
            init,
            positions,
            options,
            AnalogUpdate::Manifold(&options.cg),
            observer,
        ),
        Variant::Zf => zf_descent(model, radio, init, positions, options, observer),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{GeometryConfig, Point3, SwanChannel, UserLayout};
    use crate::linalg::unit;
    use crate::metrics::{full_mask, weighted_mse_objective};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn unit_radio() -> RadioConfig {
        RadioConfig::new(28e9, 1.4, 0.0, 1.0, 1.0).unwrap()
    }

    fn cn(rng: &mut ChaCha8Rng) -> C64 {
        c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    }

    fn random_analog(rng: &mut ChaCha8Rng, m: usize, n: usize) -> CMatrix {
        CMatrix::from_fn(m, n, |_, _| unit(rng.random_range(-3.2..3.2)))
    }

    fn random_matrix(rng: &mut ChaCha8Rng, m: usize, n: usize) -> CMatrix {
        CMatrix::from_fn(m, n, |_, _| cn(rng))
    }

    #[test]
    fn scalar_mmse_combiner() {
        let one = CMatrix::from_element(1, 1, c(1.0, 0.0));
        let w = wmmse_digital_update(&one, &one, &unit_radio()).unwrap();
        assert!((w[(0, 0)] - c(0.5, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn mmse_combiner_is_stationary() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let radio = RadioConfig::new(28e9, 1.4, 0.0, 0.5, 0.2).unwrap();
        let w = random_analog(&mut rng, 6, 3);
        let h = random_matrix(&mut rng, 6, 3);
        let wbb = wmmse_digital_update(&w, &h, &radio).unwrap();
        let hc = w.ad_mul(&h);
        let p = radio.power();
        let gram = w.ad_mul(&w);
        for k in 0..3 {
            let wk = wbb.column(k);
            let grad = (&hc * hc.adjoint() * wk) * c(p, 0.0) - hc.column(k) * c(p, 0.0)
                + (&gram * wk) * c(radio.noise(), 0.0);
            assert!(grad.norm() < 1e-10, "{}", grad.norm());
        }
    }

    #[test]
    fn weight_update_examples() {
        assert_eq!(wmmse_weight_update(&[1.0, 1.0]).unwrap(), vec![1.0, 1.0]);
        assert_eq!(wmmse_weight_update(&[0.5]).unwrap(), vec![2.0]);
        assert!(matches!(wmmse_weight_update(&[0.0]), Err(Error::Domain(_))));
        let e = [0.3, 1.7];
        let w = wmmse_weight_update(&e).unwrap();
        for (e, w) in e.iter().zip(&w) {
            assert!((e - 1.0 / w).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_cache_value_is_kp() {
        let radio = RadioConfig::new(28e9, 1.4, 0.0, 0.25, 0.1).unwrap();
        let cache = WmmseCache::from_parts(
            CMatrix::identity(3, 3),
            CMatrix::zeros(2, 2),
            CMatrix::zeros(3, 2),
            4,
            &radio,
        );
        let w = CMatrix::from_element(3, 2, unit(0.4));
        let (v, g) = wmmse_analog_objective(&w, &cache).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
        assert_eq!(g.norm(), 0.0);
    }

    fn fd_check(f: impl Fn(&CMatrix) -> f64, w: &CMatrix, g: &CMatrix, step: f64) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..w.nrows() {
            for j in 0..w.ncols() {
                for dir in [c(1.0, 0.0), c(0.0, 1.0)] {
                    let mut wp = w.clone();
                    let mut wm = w.clone();
                    wp[(i, j)] += dir * step;
                    wm[(i, j)] -= dir * step;
                    let fd = (f(&wp) - f(&wm)) / (2.0 * step);
                    let an = (g[(i, j)].conj() * dir).re;
                    worst = worst.max((fd - an).abs() / g.norm().max(1e-300));
                }
            }
        }
        worst
    }

    #[test]
    fn wmmse_gradient_and_value_agree_with_link_metrics() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let radio = RadioConfig::new(28e9, 1.4, 0.0, 0.7, 0.3).unwrap();
        for _ in 0..10 {
            let w = random_analog(&mut rng, 8, 4);
            let h = random_matrix(&mut rng, 8, 2);
            let wbb = wmmse_digital_update(&w, &h, &radio).unwrap();
            let weights = vec![rng.random_range(0.5..2.0), rng.random_range(0.5..2.0)];
            let cache = WmmseCache::new(&h, &wbb, &weights, &radio).unwrap();
            let (v, g) = wmmse_analog_objective(&w, &cache).unwrap();
            let state = BeamformerState::new(w.clone(), wbb, full_mask(8, 4), weights.clone()).unwrap();
            let e = mse_all(&state, &h, &radio).unwrap();
            let direct: f64 = e.iter().zip(&weights).map(|(e, w)| e * w).sum();
            assert!((v - direct).abs() <= 1e-9 * direct.abs());
            let err = fd_check(|w| wmmse_analog_objective(w, &cache).unwrap().0, &w, &g, 1e-6);
            assert!(err < 1e-6, "{err}");
        }
    }

    #[test]
    fn zf_identity_instance() {
        let eye = CMatrix::identity(3, 3);
        let radio = RadioConfig::new(28e9, 1.4, 0.0, 2.0, 0.5).unwrap();
        let wbb = zf_digital_update(&eye, &eye).unwrap();
        assert!((wbb - &eye).norm() < 1e-14);
        let cache = ZfCache::new(&eye, &eye, &radio).unwrap();
        assert!(cache.t.iter().all(|t| (t - 1.0).abs() < 1e-14));
        assert!((cache.value() - 3.0 * 5f64.log2()).abs() < 1e-12);
    }

    #[test]
    fn zf_rank_deficiency_is_reported() {
        let w = CMatrix::from_element(4, 2, c(1.0, 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let h = random_matrix(&mut rng, 4, 2);
        assert!(matches!(zf_digital_update(&w, &h), Err(Error::ZfInfeasible)));
        let w = random_analog(&mut rng, 4, 2);
        let h = random_matrix(&mut rng, 4, 3);
        assert!(matches!(zf_digital_update(&w, &h), Err(Error::ZfInfeasible)));
        let col = random_matrix(&mut rng, 4, 1);
        let twin = CMatrix::from_fn(4, 2, |i, _| col[(i, 0)]);
        assert!(matches!(zf_digital_update(&w, &twin), Err(Error::ZfInfeasible)));
    }

    #[test]
    fn zf_matches_kkt_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..20 {
            let w = random_analog(&mut rng, 8, 4);
            let h = random_matrix(&mut rng, 8, 3);
            let wbb = zf_digital_update(&w, &h).unwrap();
            let hc = w.ad_mul(&h);
            let residual = (wbb.adjoint() * &hc - CMatrix::identity(3, 3)).norm();
            assert!(residual < 1e-8, "{residual}");
            // stationarity of the Lagrangian: D w_k + H' lambda = 0, H'^H w_k = e_k
            let d = w.ad_mul(&w);
            let mut kkt = CMatrix::zeros(7, 7);
            kkt.view_mut((0, 0), (4, 4)).copy_from(&d);
            kkt.view_mut((0, 4), (4, 3)).copy_from(&hc);
            kkt.view_mut((4, 0), (3, 4)).copy_from(&hc.adjoint());
            for k in 0..3 {
                let mut rhs = CMatrix::zeros(7, 1);
                rhs[(4 + k, 0)] = c(1.0, 0.0);
                let sol = kkt.clone().lu().solve(&rhs).unwrap();
                let wk = sol.view((0, 0), (4, 1)).into_owned();
                let oracle = (&w * wk).norm_squared();
                let ours = (&w * wbb.column(k)).norm_squared();
                assert!((oracle - ours).abs() <= 1e-8 * oracle, "{oracle} vs {ours}");
            }
        }
    }

    #[test]
    fn zf_gradient_and_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let radio = RadioConfig::new(28e9, 1.4, 0.0, 1.0, 0.5).unwrap();
        for _ in 0..10 {
            let w = random_analog(&mut rng, 8, 4);
            let h = random_matrix(&mut rng, 8, 2);
            let (v, g) = zf_analog_objective(&w, &h, &radio).unwrap();
            let wbb = zf_digital_update(&w, &h).unwrap();
            let state = BeamformerState::new(w.clone(), wbb, full_mask(8, 4), vec![1.0, 1.0]).unwrap();
            let direct = sum_rate(&state, &h, &radio).unwrap();
            assert!((v - direct).abs() <= 1e-9 * direct.abs());
            let err = fd_check(|w| zf_analog_objective(w, &h, &radio).unwrap().0, &w, &g, 1e-6);
            assert!(err < 1e-5, "{err}");
        }
    }

    fn small_scene() -> (GeometryConfig, RadioConfig, UserLayout) {
        let geom = GeometryConfig::new(8.0, 4.0, 3.0, 8, 0.0054).unwrap();
        let radio = RadioConfig::from_dbm(28e9, 1.4, 0.08, 10.0, -80.0).unwrap();
        let users = UserLayout::new(vec![
            Point3::ground(1.3, 0.5),
            Point3::ground(4.1, 3.2),
            Point3::ground(6.8, 1.9),
        ])
        .unwrap();
        (geom, radio, users)
    }

    #[test]
    fn wmmse_descent_is_monotone_and_consistent() {
        let (geom, radio, users) = small_scene();
        let model = SwanChannel {
            geometry: &geom,
            radio: &radio,
            users: &users,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let analog = random_analog(&mut rng, 8, 4);
        let init = BeamformerState::new(analog, CMatrix::zeros(4, 3), full_mask(8, 4), vec![1.0; 3]).unwrap();
        let options = BcdOptions {
            max_outer: 15,
            pinching: Some(PinchingStep {
                grid: SearchGrid::for_segments(&geom, 0.01).unwrap(),
                delta_min: geom.delta_min(),
                search: SearchOptions::default(),
            }),
            ..Default::default()
        };
        let mut last = f64::INFINITY;
        let mut worst = 0.0_f64;
        let out = bcd_fc_observed(Variant::Wmmse, &model, &radio, &init, geom.midpoints(), &options, &mut |ev| {
            let direct = weighted_mse_objective(ev.state, ev.channel, &radio).unwrap();
            assert!((direct - ev.objective).abs() <= 1e-9 * direct.abs());
            worst = worst.max(ev.objective - last);
            last = ev.objective;
        })
        .unwrap();
        assert!(worst <= 1e-10 * last.abs(), "objective rose by {worst}");
        assert!(out.rate_trace.windows(2).all(|p| p[1] >= p[0] - 1e-12 * p[0]));
        let fresh = model.channel(&out.positions).unwrap().into_matrix();
        let recomputed = sum_rate(&out.state, &fresh, &radio).unwrap();
        assert!((recomputed - out.rate()).abs() < 1e-9 * recomputed);
        assert!(out.rate() > out.rate_trace[0]);
    }

    #[test]
    fn zf_descent_keeps_constraint() {
        let (geom, radio, users) = small_scene();
        let model = SwanChannel {
            geometry: &geom,
            radio: &radio,
            users: &users,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let init = BeamformerState::new(random_analog(&mut rng, 8, 4), CMatrix::zeros(4, 3), full_mask(8, 4), vec![1.0; 3])
            .unwrap();
        let options = BcdOptions {
            max_outer: 10,
            pinching: Some(PinchingStep {
                grid: SearchGrid::for_segments(&geom, 0.01).unwrap(),
                delta_min: geom.delta_min(),
                search: SearchOptions::default(),
            }),
            ..Default::default()
        };
        let out = bcd_fc_observed(Variant::Zf, &model, &radio, &init, geom.midpoints(), &options, &mut |ev| {
            if ev.step == SubStep::Digital {
                let hc = ev.state.analog.ad_mul(ev.channel);
                let residual = (ev.state.digital.adjoint() * hc - CMatrix::identity(3, 3)).norm();
                assert!(residual < 1e-8, "{residual}");
            }
        })
        .unwrap();
        assert!(out.rate_trace.windows(2).all(|p| p[1] >= p[0] - 1e-12 * p[0]));
        assert!(out.state.analog.iter().all(|v| (v.norm() - 1.0).abs() < 1e-12));
    }
}
