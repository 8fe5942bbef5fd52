//! Segmented-waveguide layout, PA feasibility and uplink channel synthesis.
//!
//! Coordinates are in meters. The waveguide segments lie on the line
//! `y = 0, z = H`; users sit on the ground plane `z = 0`. Segment `m`
//! (0-based) spans `[m L, (m + 1) L]` and is fed at its left endpoint.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, CVector, C64};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Slack used when comparing positions against segment bounds and spacing,
/// so that grid points computed as `lo + i * step` land inside.
pub const POSITION_EPS: f64 = 1e-9;

/// Converts a power in dBm to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometryConfig {
    d_x: f64,
    d_y: f64,
    height: f64,
    segments: usize,
    segment_len: f64,
    delta_min: f64,
    feed_x: Vec<f64>,
}

impl GeometryConfig {
    pub fn new(d_x: f64, d_y: f64, height: f64, segments: usize, delta_min: f64) -> Result<Self> {
        if segments == 0 {
            return Err(Error::InvalidConfig("segment count must be at least 1".into()));
        }
        if !(d_x > 0.0 && d_y >= 0.0 && d_x.is_finite() && d_y.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "service area must be positive, got {d_x} x {d_y}"
            )));
        }
        if !(height > 0.0 && height.is_finite()) {
            return Err(Error::InvalidConfig(format!("height must be positive, got {height}")));
        }
        if !(delta_min > 0.0 && delta_min.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "minimum PA spacing must be positive, got {delta_min}"
            )));
        }
        let segment_len = d_x / segments as f64;
        let feed_x = (0..segments).map(|m| m as f64 * segment_len).collect();
        Ok(Self {
            d_x,
            d_y,
            height,
            segments,
            segment_len,
            delta_min,
            feed_x,
        })
    }

    pub fn d_x(&self) -> f64 {
        self.d_x
    }
    pub fn d_y(&self) -> f64 {
        self.d_y
    }
    pub fn height(&self) -> f64 {
        self.height
    }
    pub fn segments(&self) -> usize {
        self.segments
    }
    pub fn segment_len(&self) -> f64 {
        self.segment_len
    }
    pub fn delta_min(&self) -> f64 {
        self.delta_min
    }
    pub fn feed_x(&self) -> &[f64] {
        &self.feed_x
    }

    /// Closed interval covered by segment `m`.
    pub fn segment_bounds(&self, m: usize) -> (f64, f64) {
        let lo = self.feed_x[m];
        let hi = if m + 1 == self.segments {
            self.d_x
        } else {
            (m + 1) as f64 * self.segment_len
        };
        (lo, hi)
    }

    /// Index of the segment containing `x`, clamped to the waveguide.
    pub fn segment_of(&self, x: f64) -> usize {
        let idx = (x / self.segment_len).floor();
        if idx < 0.0 {
            0
        } else {
            (idx as usize).min(self.segments - 1)
        }
    }

    /// PA positions at the segment midpoints.
    pub fn midpoints(&self) -> PinchPositions {
        PinchPositions::new(
            (0..self.segments)
                .map(|m| {
                    let (lo, hi) = self.segment_bounds(m);
                    0.5 * (lo + hi)
                })
                .collect(),
        )
    }
}

/// Carrier, waveguide and power parameters. Wavelengths and the path-gain
/// constant are derived on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct RadioConfig {
    carrier_hz: f64,
    wavelength: f64,
    n_eff: f64,
    guided_wavelength: f64,
    kappa_db_per_m: f64,
    path_gain: f64,
    power_w: f64,
    noise_w: f64,
}

impl RadioConfig {
    pub fn new(
        carrier_hz: f64,
        n_eff: f64,
        kappa_db_per_m: f64,
        power_w: f64,
        noise_w: f64,
    ) -> Result<Self> {
        if !(carrier_hz > 0.0 && carrier_hz.is_finite()) {
            return Err(Error::InvalidConfig(format!("carrier must be positive, got {carrier_hz}")));
        }
        if !(n_eff >= 1.0 && n_eff.is_finite()) {
            return Err(Error::InvalidConfig(format!("n_eff must be >= 1, got {n_eff}")));
        }
        if !(kappa_db_per_m >= 0.0 && kappa_db_per_m.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "waveguide loss must be nonnegative, got {kappa_db_per_m}"
            )));
        }
        if !(power_w > 0.0 && power_w.is_finite()) {
            return Err(Error::InvalidConfig(format!("transmit power must be positive, got {power_w}")));
        }
        if !(noise_w > 0.0 && noise_w.is_finite()) {
            return Err(Error::InvalidConfig(format!("noise power must be positive, got {noise_w}")));
        }
        let wavelength = SPEED_OF_LIGHT / carrier_hz;
        Ok(Self {
            carrier_hz,
            wavelength,
            n_eff,
            guided_wavelength: wavelength / n_eff,
            kappa_db_per_m,
            path_gain: wavelength * wavelength / (16.0 * PI * PI),
            power_w,
            noise_w,
        })
    }

    /// Same as [`RadioConfig::new`] with powers given in dBm.
    pub fn from_dbm(
        carrier_hz: f64,
        n_eff: f64,
        kappa_db_per_m: f64,
        power_dbm: f64,
        noise_dbm: f64,
    ) -> Result<Self> {
        Self::new(
            carrier_hz,
            n_eff,
            kappa_db_per_m,
            dbm_to_watts(power_dbm),
            dbm_to_watts(noise_dbm),
        )
    }

    pub fn carrier_hz(&self) -> f64 {
        self.carrier_hz
    }
    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }
    pub fn n_eff(&self) -> f64 {
        self.n_eff
    }
    pub fn guided_wavelength(&self) -> f64 {
        self.guided_wavelength
    }
    pub fn kappa(&self) -> f64 {
        self.kappa_db_per_m
    }
    /// Free-space path-gain constant `lambda^2 / (16 pi^2)`.
    pub fn path_gain(&self) -> f64 {
        self.path_gain
    }
    pub fn power(&self) -> f64 {
        self.power_w
    }
    pub fn noise(&self) -> f64 {
        self.noise_w
    }
    /// `sigma^2 / P`, the noise term of the normalized SINR.
    pub fn noise_to_power(&self) -> f64 {
        self.noise_w / self.power_w
    }

    /// Copy of this config with a different waveguide loss.
    pub fn with_kappa(&self, kappa_db_per_m: f64) -> Result<Self> {
        Self::new(self.carrier_hz, self.n_eff, kappa_db_per_m, self.power_w, self.noise_w)
    }

    /// Complex gain of an in-waveguide run of length `delta`.
    #[inline]
    pub fn guided_gain(&self, delta: f64) -> C64 {
        let amp = 10f64.powf(-self.kappa_db_per_m * delta / 20.0);
        C64::from_polar(amp, -2.0 * PI * delta / self.guided_wavelength)
    }

    /// Complex free-space gain over distance `r`.
    #[inline]
    pub fn free_space_gain(&self, r: f64) -> C64 {
        C64::from_polar(self.path_gain.sqrt() / r, -2.0 * PI * r / self.wavelength)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub const fn ground(x: f64, y: f64) -> Self {
        Self { x, y, z: 0.0 }
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        (dx * dx + dy * dy + dz * dz).sqrt()
    }
}

/// Ground-plane user locations.
#[derive(Debug, Clone, PartialEq)]
pub struct UserLayout {
    positions: Vec<Point3>,
}

impl UserLayout {
    pub fn new(positions: Vec<Point3>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::InvalidConfig("at least one user is required".into()));
        }
        if let Some(k) = positions.iter().position(|p| p.z != 0.0) {
            return Err(Error::InvalidConfig(format!(
                "user {k} is off the ground plane (z = {})",
                positions[k].z
            )));
        }
        Ok(Self { positions })
    }

    pub fn positions(&self) -> &[Point3] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// x-coordinates of the `M` pinching antennas, one per segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PinchPositions(Vec<f64>);

impl PinchPositions {
    pub fn new(x: Vec<f64>) -> Self {
        Self(x)
    }
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }
    pub fn len(&self) -> usize {
        self.0.len()
    }
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// First violated constraint of the feasible set. Indices are 0-based.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Violation {
    Count { expected: usize, got: usize },
    Containment { index: usize, x: f64, lo: f64, hi: f64 },
    Spacing { first: usize, second: usize, gap: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Count { expected, got } => {
                write!(f, "expected {expected} positions, got {got}")
            }
            Violation::Containment { index, x, lo, hi } => {
                write!(f, "PA {index} at {x} outside its segment [{lo}, {hi}]")
            }
            Violation::Spacing { first, second, gap } => {
                write!(f, "PAs {first} and {second} are {gap} m apart")
            }
        }
    }
}

/// Checks segment containment, then pairwise spacing.
pub fn check_feasible(geom: &GeometryConfig, x: &PinchPositions) -> std::result::Result<(), Violation> {
    let x = x.as_slice();
    if x.len() != geom.segments() {
        return Err(Violation::Count {
            expected: geom.segments(),
            got: x.len(),
        });
    }
    for (m, &xm) in x.iter().enumerate() {
        let (lo, hi) = geom.segment_bounds(m);
        if !(xm >= lo - POSITION_EPS && xm <= hi + POSITION_EPS) {
            return Err(Violation::Containment { index: m, x: xm, lo, hi });
        }
    }
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let gap = (x[i] - x[j]).abs();
            if gap < geom.delta_min() - POSITION_EPS {
                return Err(Violation::Spacing { first: i, second: j, gap });
            }
        }
    }
    Ok(())
}

pub fn is_feasible(geom: &GeometryConfig, x: &PinchPositions) -> bool {
    check_feasible(geom, x).is_ok()
}

fn require_feasible(geom: &GeometryConfig, x: &PinchPositions) -> Result<()> {
    check_feasible(geom, x).map_err(Error::Infeasible)
}

/// Complex uplink channel matrix `H`, `M x K`, column `k` belongs to user `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix(CMatrix);

impl ChannelMatrix {
    pub fn new(h: CMatrix) -> Self {
        Self(h)
    }
    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }
    pub fn into_matrix(self) -> CMatrix {
        self.0
    }
    pub fn antennas(&self) -> usize {
        self.0.nrows()
    }
    pub fn users(&self) -> usize {
        self.0.ncols()
    }
}

fn pa_point(geom: &GeometryConfig, xm: f64) -> Point3 {
    Point3::new(xm, 0.0, geom.height())
}

/// Free-space response from one user to every PA.
pub fn free_space_channel(
    geom: &GeometryConfig,
    radio: &RadioConfig,
    x: &PinchPositions,
    user: &Point3,
) -> Result<CVector> {
    require_feasible(geom, x)?;
    if user.z != 0.0 {
        return Err(Error::InvalidConfig(format!("user is off the ground plane (z = {})", user.z)));
    }
    let mut out = CVector::zeros(x.len());
    for (m, &xm) in x.as_slice().iter().enumerate() {
        let r = pa_point(geom, xm).distance(user);
        if r <= 0.0 {
            return Err(Error::SingularGeometry { antenna: m, user: 0 });
        }
        out[m] = radio.free_space_gain(r);
    }
    Ok(out)
}

/// In-waveguide response from each PA to its segment's feed point.
pub fn waveguide_response(
    geom: &GeometryConfig,
    radio: &RadioConfig,
    x: &PinchPositions,
) -> Result<CVector> {
    require_feasible(geom, x)?;
    Ok(CVector::from_iterator(
        x.len(),
        x.as_slice()
            .iter()
            .zip(geom.feed_x())
            .map(|(&xm, &feed)| radio.guided_gain((feed - xm).abs())),
    ))
}

/// Overall channel `H(x)`: free-space response times waveguide response,
/// entry-wise, one column per user.
pub fn uplink_channel(
    geom: &GeometryConfig,
    radio: &RadioConfig,
    x: &PinchPositions,
    users: &UserLayout,
) -> Result<ChannelMatrix> {
    let guided = waveguide_response(geom, radio, x)?;
    let mut h = CMatrix::zeros(x.len(), users.len());
    for (k, user) in users.positions().iter().enumerate() {
        let free = free_space_channel(geom, radio, x, user).map_err(|e| match e {
            Error::SingularGeometry { antenna, .. } => Error::SingularGeometry { antenna, user: k },
            other => other,
        })?;
        h.set_column(k, &free.component_mul(&guided));
    }
    Ok(ChannelMatrix(h))
}

/// Source of channel matrices as a function of antenna positions. The
/// block coordinate descent solvers only see this trait, so the same solver
/// drives SWAN receivers and fixed arrays.
pub trait ChannelModel: Sync {
    fn antennas(&self) -> usize;
    fn users(&self) -> usize;

    /// Channel between antenna `m`, placed at `xm`, and user `k`.
    fn entry(&self, m: usize, xm: f64, k: usize) -> C64;

    /// Full channel matrix; validates the positions.
    fn channel(&self, x: &PinchPositions) -> Result<ChannelMatrix>;
}

/// Segmented waveguide receiver with one PA per segment.
#[derive(Debug, Clone, Copy)]
pub struct SwanChannel<'a> {
    pub geometry: &'a GeometryConfig,
    pub radio: &'a RadioConfig,
    pub users: &'a UserLayout,
}

impl ChannelModel for SwanChannel<'_> {
    fn antennas(&self) -> usize {
        self.geometry.segments()
    }

    fn users(&self) -> usize {
        self.users.len()
    }

    #[inline]
    fn entry(&self, m: usize, xm: f64, k: usize) -> C64 {
        let r = pa_point(self.geometry, xm).distance(&self.users.positions()[k]);
        let delta = (self.geometry.feed_x()[m] - xm).abs();
        self.radio.free_space_gain(r) * self.radio.guided_gain(delta)
    }

    fn channel(&self, x: &PinchPositions) -> Result<ChannelMatrix> {
        uplink_channel(self.geometry, self.radio, x, self.users)
    }
}

/// Conventional fixed-position array: free-space response only, antenna
/// coordinates never move.
#[derive(Debug, Clone)]
pub struct FixedArrayChannel<'a> {
    pub elements: Vec<Point3>,
    pub radio: &'a RadioConfig,
    pub users: &'a UserLayout,
}

impl<'a> FixedArrayChannel<'a> {
    /// `count` elements at half-wavelength spacing along x, centered at `center`.
    pub fn half_wavelength_ula(
        count: usize,
        center: Point3,
        radio: &'a RadioConfig,
        users: &'a UserLayout,
    ) -> Self {
        let spacing = radio.wavelength() / 2.0;
        let offset = (count as f64 - 1.0) / 2.0;
        let elements = (0..count)
            .map(|m| Point3::new(center.x + (m as f64 - offset) * spacing, center.y, center.z))
            .collect();
        Self { elements, radio, users }
    }

    pub fn positions(&self) -> PinchPositions {
        PinchPositions::new(self.elements.iter().map(|p| p.x).collect())
    }
}

impl ChannelModel for FixedArrayChannel<'_> {
    fn antennas(&self) -> usize {
        self.elements.len()
    }

    fn users(&self) -> usize {
        self.users.len()
    }

    fn entry(&self, m: usize, _xm: f64, k: usize) -> C64 {
        let r = self.elements[m].distance(&self.users.positions()[k]);
        self.radio.free_space_gain(r)
    }

    fn channel(&self, _x: &PinchPositions) -> Result<ChannelMatrix> {
        let mut h = CMatrix::zeros(self.elements.len(), self.users.len());
        for (k, user) in self.users.positions().iter().enumerate() {
            for (m, el) in self.elements.iter().enumerate() {
                let r = el.distance(user);
                if r <= 0.0 {
                    return Err(Error::SingularGeometry { antenna: m, user: k });
                }
                h[(m, k)] = self.radio.free_space_gain(r);
            }
        }
        Ok(ChannelMatrix(h))
    }
}
