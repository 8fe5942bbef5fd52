//! Single-user rate-scaling laws with the user centered on the waveguide.
//!
//! Two limits are covered: one RF chain driving all `M` feeds through phase
//! shifters (the FC limit, coherent combining with noise collected from every
//! feed), and `M` RF chains with one phase shifter each (the PC limit,
//! maximum-ratio combining). In-waveguide loss is neglected throughout.

use crate::error::{Error, Result};
use crate::geometry::{GeometryConfig, PinchPositions, Point3, RadioConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingParams {
    pub power: f64,
    pub noise: f64,
    pub eta: f64,
    pub segment_len: f64,
    pub delta_yz: f64,
    pub segments: usize,
}

impl ScalingParams {
    pub fn new(power: f64, noise: f64, eta: f64, segment_len: f64, delta_yz: f64, segments: usize) -> Result<Self> {
        for (name, v) in [
            ("power", power),
            ("noise", noise),
            ("path gain", eta),
            ("segment length", segment_len),
            ("transverse distance", delta_yz),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if segments == 0 {
            return Err(Error::InvalidConfig("segment count must be at least 1".into()));
        }
        Ok(Self {
            power,
            noise,
            eta,
            segment_len,
            delta_yz,
            segments,
        })
    }

    pub fn from_radio(radio: &RadioConfig, segment_len: f64, delta_yz: f64, segments: usize) -> Result<Self> {
        Self::new(radio.power(), radio.noise(), radio.path_gain(), segment_len, delta_yz, segments)
    }

    pub fn with_segments(self, segments: usize) -> Self {
        Self { segments, ..self }
    }

    fn snr_scale(&self) -> f64 {
        self.power * self.eta / self.noise
    }

    fn require_odd(&self) -> Result<usize> {
        if self.segments % 2 == 0 {
            return Err(Error::UnsupportedGeometry(format!(
                "closed-form sums need an odd segment count, got {}",
                self.segments
            )));
        }
        Ok((self.segments - 1) / 2)
    }

    /// Distance offsets `L (i - 1/2)` of the PAs on either side of the user.
    fn offsets(&self) -> impl Iterator<Item = f64> + '_ {
        let half = (self.segments - 1) / 2;
        (1..=half).map(move |i| self.segment_len * (i as f64 - 0.5))
    }
}

/// `log2(1 + snr)`.
pub fn rate(snr: f64) -> f64 {
    snr.ln_1p() / std::f64::consts::LN_2
}

/// Exact SNR of the FC limit, odd `M`.
pub fn snr_fc_exact(p: &ScalingParams) -> Result<f64> {
    p.require_odd()?;
    let d = p.delta_yz;
    let amplitude = 1.0 / d + p.offsets().map(|o| 2.0 / (o * o + d * d).sqrt()).sum::<f64>();
    Ok(p.snr_scale() / p.segments as f64 * amplitude * amplitude)
}

/// Large-`M` approximation of the FC-limit SNR.
pub fn snr_fc_approx(p: &ScalingParams) -> f64 {
    let (l, d, m) = (p.segment_len, p.delta_yz, p.segments as f64);
    let amplitude = 1.0 / d + 2.0 / l * (l * m / (2.0 * d)).asinh();
    p.snr_scale() / m * amplitude * amplitude
}

/// Segment count `2 Delta_yz^2 / L` at which the FC-limit rate peaks.
pub fn fc_peak_segments(p: &ScalingParams) -> f64 {
    2.0 * p.delta_yz * p.delta_yz / p.segment_len
}

/// Exact SNR of the PC limit, odd `M`.
pub fn snr_pc_exact(p: &ScalingParams) -> Result<f64> {
    p.require_odd()?;
    let d2 = p.delta_yz * p.delta_yz;
    let gain = 1.0 / d2 + p.offsets().map(|o| 2.0 / (o * o + d2)).sum::<f64>();
    Ok(p.snr_scale() * gain)
}

/// Large-`M` approximation of the PC-limit SNR.
pub fn snr_pc_approx(p: &ScalingParams) -> f64 {
    let (l, d, m) = (p.segment_len, p.delta_yz, p.segments as f64);
    p.snr_scale() * (1.0 / (d * d) + 2.0 / (l * d) * ((m - 1.0) * l / (2.0 * d)).atan())
}

/// PC-limit SNR as `M` grows without bound.
pub fn pc_limit(p: &ScalingParams) -> f64 {
    let (l, d) = (p.segment_len, p.delta_yz);
    p.snr_scale() * (1.0 / (d * d) + std::f64::consts::PI / (l * d))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Limit {
    Fc,
    Pc,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ScalingRow {
    #[serde(rename = "M")]
    pub segments: usize,
    pub exact_snr: f64,
    pub approx_snr: f64,
    pub exact_rate: f64,
    pub approx_rate: f64,
}

/// Evaluates both laws at every odd `M` up to `m_max`.
pub fn scan(limit: Limit, p: &ScalingParams, m_max: usize) -> Result<Vec<ScalingRow>> {
    if m_max == 0 || m_max % 2 == 0 {
        return Err(Error::UnsupportedGeometry(format!(
            "the scan needs an odd maximum segment count, got {m_max}"
        )));
    }
    (1..=m_max)
        .step_by(2)
        .map(|m| {
            let q = p.with_segments(m);
            let (exact, approx) = match limit {
                Limit::Fc => (snr_fc_exact(&q)?, snr_fc_approx(&q)),
                Limit::Pc => (snr_pc_exact(&q)?, snr_pc_approx(&q)),
            };
            Ok(ScalingRow {
                segments: m,
                exact_snr: exact,
                approx_snr: approx,
                exact_rate: rate(exact),
                approx_rate: rate(approx),
            })
        })
        .collect()
}

/// PA positions as close to a single user as the segments and the minimum
/// spacing allow.
pub fn optimal_placement_single_user(geom: &GeometryConfig, user: &Point3) -> PinchPositions {
    let m_count = geom.segments();
    let home = geom.segment_of(user.x);
    let (lo, hi) = geom.segment_bounds(home);
    let mut x = vec![0.0; m_count];
    x[home] = user.x.clamp(lo, hi);
    for m in home + 1..m_count {
        let (lo, hi) = geom.segment_bounds(m);
        x[m] = (x[m - 1] + geom.delta_min()).max(lo).min(hi);
    }
    for m in (0..home).rev() {
        let (lo, hi) = geom.segment_bounds(m);
        x[m] = (x[m + 1] - geom.delta_min()).min(hi).max(lo);
    }
    PinchPositions::new(x)
}
