//! Monte Carlo trials.
//!
//! Trial `t` draws from a ChaCha8 stream seeded with the scenario seed and
//! switched to stream `t`, so a trial's outcome depends on `(config, seed,
//! t)` only and trials may run in any order.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fc::{bcd_fc_observed, BcdOptions, BcdOutcome, PinchingStep, StepEvent, Variant};
use crate::geometry::{Point3, SwanChannel, UserLayout};
use crate::manifold::{CgOptions, ManifoldPoint};
use crate::metrics::{energy_efficiency, full_mask, per_user_rates, BeamformerState, Mask};
use crate::pc::{bcd_pc_observed, build_interleaved};
use crate::pinching::{SearchGrid, SearchOptions};
use crate::CMatrix;

use super::baselines::{mmimo_fc_wmmse, ConvPass};
use super::config::{Method, Scenario, ScenarioConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    pub method: Method,
    #[serde(rename = "M")]
    pub segments: usize,
    #[serde(rename = "N_RF")]
    pub n_rf: usize,
    #[serde(rename = "K")]
    pub users: usize,
    #[serde(rename = "P_dBm")]
    pub p_dbm: f64,
    #[serde(rename = "sum_rate_bpshz")]
    pub sum_rate: f64,
    pub per_user_rates: Vec<f64>,
    #[serde(rename = "ee_bpshz_per_w")]
    pub ee: f64,
    pub iterations: usize,
    /// Present only when timing was requested; wall time breaks byte-identity.
    pub wall_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub trial: usize,
    pub seed: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub median: f64,
    /// Sample standard deviation; zero for fewer than two values.
    pub std: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Option<Stats> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        let median = if sorted.len() % 2 == 1 {
            sorted[mid]
        } else {
            0.5 * (sorted[mid - 1] + sorted[mid])
        };
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Some(Stats { mean, median, std })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub method: Method,
    pub sweep_key: Option<String>,
    pub sweep_value: Option<f64>,
    pub trials: usize,
    pub failures: usize,
    pub sum_rate: Option<Stats>,
    pub ee: Option<Stats>,
}

impl Summary {
    pub fn from_results(method: Method, results: &[TrialResult], failures: usize) -> Self {
        let rates: Vec<f64> = results.iter().map(|r| r.sum_rate).collect();
        let ee: Vec<f64> = results.iter().map(|r| r.ee).collect();
        Summary {
            method,
            sweep_key: None,
            sweep_value: None,
            trials: results.len() + failures,
            failures,
            sum_rate: Stats::of(&rates),
            ee: Stats::of(&ee),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub results: Vec<TrialResult>,
    pub failures: Vec<TrialFailure>,
    pub summary: Summary,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub timing: bool,
}

/// Generator for trial `trial` of a scenario seeded with `seed`.
pub fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

/// `K` users uniform over `[0, D_x] x [0, D_y]` on the ground.
pub fn sample_users<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Result<UserLayout> {
    let g = &scenario.geometry;
    let users = (0..scenario.config.users)
        .map(|_| Point3::ground(rng.random_range(0.0..=g.d_x()), rng.random_range(0.0..=g.d_y())))
        .collect();
    UserLayout::new(users)
}

/// Solver settings implied by the scenario.
pub fn bcd_options(scenario: &Scenario) -> Result<BcdOptions> {
    let cfg = &scenario.config;
    Ok(BcdOptions {
        tol: cfg.bcd_tolerance,
        max_outer: cfg.max_outer,
        cg: CgOptions {
            max_iter: cfg.cg_max_iter,
            ..CgOptions::default()
        },
        pinching: Some(PinchingStep {
            grid: SearchGrid::for_segments(&scenario.geometry, cfg.grid_resolution)?,
            delta_min: scenario.geometry.delta_min(),
            search: SearchOptions {
                max_pass: cfg.search_max_pass,
                ..SearchOptions::default()
            },
        }),
    })
}

/// Outcome of one method on one user drop.
#[derive(Debug, Clone)]
pub struct MethodOutcome {
    pub per_user_rates: Vec<f64>,
    pub iterations: usize,
    /// RF chains, antennas and phase shifters powered.
    pub hardware: (usize, usize, usize),
    pub bcd: Option<BcdOutcome>,
}

fn random_analog<R: Rng + ?Sized>(mask: Mask, rng: &mut R) -> CMatrix {
    ManifoldPoint::random(mask, rng).into_parts().0
}

fn fc_state(analog: CMatrix, users: usize) -> Result<BeamformerState> {
    let (m, n) = analog.shape();
    BeamformerState::new(analog, CMatrix::zeros(n, users), full_mask(m, n), vec![1.0; users])
}

fn from_bcd(out: BcdOutcome, scenario: &Scenario, hardware: (usize, usize, usize)) -> Result<MethodOutcome> {
    let rates = per_user_rates(&out.state, &out.channel, &scenario.radio)?;
    Ok(MethodOutcome {
        per_user_rates: rates,
        iterations: out.iterations,
        hardware,
        bcd: Some(out),
    })
}

/// Runs `method` on one drop of users. `rng` supplies the random analog start.
pub fn run_method<R: Rng + ?Sized>(
    method: Method,
    scenario: &Scenario,
    users: &UserLayout,
    rng: &mut R,
) -> Result<MethodOutcome> {
    run_method_observed(method, scenario, users, rng, &mut |_, _| {})
}

/// [`run_method`] reporting every descent sub-step together with the stage
/// (zero-forcing or WMMSE) that produced it. The conventional baseline has
/// no descent and reports nothing.
pub fn run_method_observed<R: Rng + ?Sized>(
    method: Method,
    scenario: &Scenario,
    users: &UserLayout,
    rng: &mut R,
    observer: &mut dyn FnMut(Variant, &StepEvent<'_>),
) -> Result<MethodOutcome> {
    let cfg = &scenario.config;
    let (m, n_rf, k) = (cfg.segments, cfg.n_rf, cfg.users);
    let options = bcd_options(scenario)?;
    let model = SwanChannel {
        geometry: &scenario.geometry,
        radio: &scenario.radio,
        users,
    };
    match method {
        Method::SwanFcZf => {
            let init = fc_state(random_analog(full_mask(m, n_rf), rng), k)?;
            let out = bcd_fc_observed(
                Variant::Zf,
                &model,
                &scenario.radio,
                &init,
                scenario.geometry.midpoints(),
                &options,
                &mut |ev| observer(Variant::Zf, ev),
            )?;
            from_bcd(out, scenario, (n_rf, m, m * n_rf))
        }
        Method::SwanFcWmmse => {
            let init = fc_state(random_analog(full_mask(m, n_rf), rng), k)?;
            let midpoints = scenario.geometry.midpoints();
            let zf = bcd_fc_observed(
                Variant::Zf,
                &model,
                &scenario.radio,
                &init,
                midpoints.clone(),
                &options,
                &mut |ev| observer(Variant::Zf, ev),
            );
            let (start, x0) = match zf {
                Ok(zf) => (zf.state, zf.positions),
                Err(e) if matches!(e.root(), Error::ZfInfeasible) => (init, midpoints),
                Err(e) => return Err(e),
            };
            let out = bcd_fc_observed(Variant::Wmmse, &model, &scenario.radio, &start, x0, &options, &mut |ev| {
                observer(Variant::Wmmse, ev)
            })?;
            from_bcd(out, scenario, (n_rf, m, m * n_rf))
        }
        Method::SwanPcWmmse => {
            let topology = build_interleaved(m, n_rf)?;
            let init = BeamformerState::new(
                random_analog(topology.mask().clone(), rng),
                CMatrix::zeros(n_rf, k),
                topology.mask().clone(),
                vec![1.0; k],
            )?;
            let out = bcd_pc_observed(
                Variant::Wmmse,
                &model,
                &scenario.radio,
                &topology,
                &init,
                scenario.geometry.midpoints(),
                &options,
                &mut |ev| observer(Variant::Wmmse, ev),
            )?;
            from_bcd(out, scenario, (n_rf, m, m))
        }
        Method::MmimoFcWmmse => {
            let analog = random_analog(full_mask(m, n_rf), rng);
            let out = mmimo_fc_wmmse(scenario, users, analog, &options, observer)?;
            from_bcd(out, scenario, (n_rf, m, m * n_rf))
        }
        Method::ConvPass => {
            let conv = ConvPass {
                radio: &scenario.radio,
                users,
                d_x: scenario.geometry.d_x(),
                height: scenario.geometry.height(),
            };
            let search = SearchOptions {
                max_pass: cfg.search_max_pass,
                ..SearchOptions::default()
            };
            let out = conv.optimize(
                conv.initial_positions(m),
                cfg.grid_resolution,
                scenario.geometry.delta_min(),
                &search,
            )?;
            Ok(MethodOutcome {
                per_user_rates: out.per_user_rates,
                iterations: out.passes,
                hardware: (1, m, 0),
                bcd: None,
            })
        }
    }
}

/// One complete trial: user drop, solver, metrics.
pub fn run_trial(scenario: &Scenario, trial: usize, options: RunOptions) -> Result<TrialResult> {
    let cfg = &scenario.config;
    let started = Instant::now();
    let mut rng = trial_rng(cfg.seed, trial);
    let users = sample_users(scenario, &mut rng)?;
    let out = run_method(cfg.method, scenario, &users, &mut rng)?;
    let sum_rate: f64 = out.per_user_rates.iter().sum();
    if !sum_rate.is_finite() {
        return Err(Error::Domain(format!("non-finite sum rate {sum_rate}")));
    }
    let (chains, antennas, shifters) = out.hardware;
    let ee = energy_efficiency(sum_rate, &scenario.radio, &scenario.energy, chains, antennas, shifters);
    Ok(TrialResult {
        trial,
        seed: cfg.seed,
        method: cfg.method,
        segments: cfg.segments,
        n_rf: cfg.n_rf,
        users: cfg.users,
        p_dbm: cfg.p_dbm,
        sum_rate,
        per_user_rates: out.per_user_rates,
        ee,
        iterations: out.iterations,
        wall_ms: options.timing.then(|| started.elapsed().as_secs_f64() * 1e3),
    })
}

/// Runs every trial of the scenario; failed trials are reported, not fatal.
pub fn run_scenario(cfg: &ScenarioConfig, options: RunOptions) -> Result<RunReport> {
    let scenario = cfg.resolve()?;
    let outcomes: Vec<(usize, Result<TrialResult>)> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| (t, run_trial(&scenario, t, options)))
        .collect();
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for (trial, outcome) in outcomes {
        match outcome {
            Ok(r) => results.push(r),
            Err(e) => failures.push(TrialFailure {
                trial,
                seed: cfg.seed,
                reason: e.to_string(),
            }),
        }
    }
    let summary = Summary::from_results(cfg.method, &results, failures.len());
    Ok(RunReport {
        results,
        failures,
        summary,
    })
}

/// One run per value of `key`, summaries tagged with the value.
pub fn run_sweep(cfg: &ScenarioConfig, key: &str, values: &[f64], options: RunOptions) -> Result<Vec<RunReport>> {
    if values.is_empty() {
        return Err(Error::InvalidConfig("sweep needs at least one value".into()));
    }
    let configs = values
        .iter()
        .map(|&v| cfg.with_value(key, v))
        .collect::<Result<Vec<_>>>()?;
    configs
        .iter()
        .zip(values)
        .map(|(c, &v)| {
            let mut report = run_scenario(c, options)?;
            report.summary.sweep_key = Some(key.to_string());
            report.summary.sweep_value = Some(v);
            Ok(report)
        })
        .collect()
}
