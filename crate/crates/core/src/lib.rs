//! Uplink tri-hybrid beamforming for segmented-waveguide pinching-antenna
//! receivers (SWAN).
//!
//! The receiver is a row of `M` short dielectric waveguide segments along the
//! x-axis, each carrying a single movable pinching antenna (PA) and a feed
//! point at its left end. The received signal passes through three layers of
//! beamforming:
//!
//! * pinching beamforming: PA positions [`geometry::PinchPositions`],
//! * analog beamforming: a unit-modulus phase-shifter network, fully or
//!   partially connected,
//! * digital beamforming: a baseband combining matrix.
//!
//! Module map:
//!
//! | module | contents |
//! |---|---|
//! | [`geometry`] | waveguide layout, feasibility, channel synthesis |
//! | [`metrics`] | SINR, sum rate, MSE, weighted-MSE objective, energy efficiency |
//! | [`manifold`] | conjugate gradient on the (masked) complex-circle manifold |
//! | [`fc`] | fully connected WMMSE and ZF block coordinate descent |
//! | [`pc`] | interleaved partially connected topology and WMMSE descent |
//! | [`pinching`] | Gauss-Seidel grid search over PA positions |
//! | [`scaling`] | closed-form single-user rate-scaling laws |
//! | [`harness`] | scenario config, Monte Carlo trials, baselines, output |

pub mod error;
pub mod fc;
pub mod geometry;
pub mod harness;
pub mod linalg;
pub mod manifold;
pub mod metrics;
pub mod pc;
pub mod pinching;
pub mod scaling;

pub use error::{Error, Result};
pub use linalg::{CMatrix, CVector, C64};
