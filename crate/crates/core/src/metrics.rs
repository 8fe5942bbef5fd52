//! Link-level figures of merit for a hybrid receiver `(G_RF, G_BB)`.
//!
//! User `k` is detected as `s_k_hat = g_k^H G_RF^H y`; every metric below is
//! computed from the combined receivers `u_k = G_RF g_k` and the cross gains
//! `a_{kj} = u_k^H h_j`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::geometry::RadioConfig;
use crate::linalg::{CMatrix, C64};

/// Connectivity pattern of the phase-shifter network, `M x N_RF`.
pub type Mask = DMatrix<bool>;

/// Every RF chain reaches every feed point.
pub fn full_mask(antennas: usize, chains: usize) -> Mask {
    Mask::from_element(antennas, chains, true)
}

/// Modulus slack accepted on masked analog entries.
pub const UNIT_MODULUS_TOL: f64 = 1e-9;

const DEGENERATE_NORM: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerState {
    pub analog: CMatrix,
    pub digital: CMatrix,
    pub mask: Mask,
    pub weights: Vec<f64>,
}

impl BeamformerState {
    /// Validates shapes, the unit-modulus/sparsity pattern and the weights.
    pub fn new(analog: CMatrix, digital: CMatrix, mask: Mask, weights: Vec<f64>) -> Result<Self> {
        let state = Self {
            analog,
            digital,
            mask,
            weights,
        };
        state.validate()?;
        Ok(state)
    }

    pub fn antennas(&self) -> usize {
        self.analog.nrows()
    }

    pub fn chains(&self) -> usize {
        self.analog.ncols()
    }

    pub fn users(&self) -> usize {
        self.digital.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mask.shape() != self.analog.shape() {
            return Err(Error::Shape(format!(
                "mask {:?} vs analog {:?}",
                self.mask.shape(),
                self.analog.shape()
            )));
        }
        if self.digital.nrows() != self.analog.ncols() {
            return Err(Error::Shape(format!(
                "digital has {} rows, analog has {} columns",
                self.digital.nrows(),
                self.analog.ncols()
            )));
        }
        if self.weights.len() != self.digital.ncols() {
            return Err(Error::Shape(format!(
                "{} weights for {} users",
                self.weights.len(),
                self.digital.ncols()
            )));
        }
        if let Some(w) = self.weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::Domain(format!("weights must be positive, got {w}")));
        }
        for j in 0..self.analog.ncols() {
            for i in 0..self.analog.nrows() {
                let v = self.analog[(i, j)];
                if self.mask[(i, j)] {
                    if (v.norm() - 1.0).abs() > UNIT_MODULUS_TOL {
                        return Err(Error::Domain(format!(
                            "analog entry ({i}, {j}) has modulus {}",
                            v.norm()
                        )));
                    }
                } else if v != C64::new(0.0, 0.0) {
                    return Err(Error::Domain(format!(
                        "analog entry ({i}, {j}) is off the mask but nonzero"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Combined receivers `G_RF G_BB`, one column per user.
    pub fn combiners(&self) -> CMatrix {
        &self.analog * &self.digital
    }
}

/// Cross gains `a_{kj} = u_k^H h_j` and receiver norms `||u_k||^2`.
pub(crate) struct CrossGains {
    pub gains: CMatrix,
    pub norms: Vec<f64>,
}

pub(crate) fn cross_gains(combiners: &CMatrix, h: &CMatrix) -> Result<CrossGains> {
    if combiners.nrows() != h.nrows() || combiners.ncols() != h.ncols() {
        return Err(Error::Shape(format!(
            "combiners {:?} vs channel {:?}",
            combiners.shape(),
            h.shape()
        )));
    }
    Ok(CrossGains {
        gains: combiners.ad_mul(h),
        norms: combiners.column_iter().map(|c| c.norm_squared()).collect(),
    })
}

fn sinr_from(g: &CrossGains, k: usize, noise_to_power: f64) -> Result<f64> {
    if g.norms[k].sqrt() < DEGENERATE_NORM {
        return Err(Error::DegenerateReceiver { user: k });
    }
    let row = g.gains.row(k);
    let signal = row[k].norm_sqr();
    let interference: f64 = row
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != k)
        .map(|(_, a)| a.norm_sqr())
        .sum();
    Ok(signal / (interference + noise_to_power * g.norms[k]))
}

fn mse_from(g: &CrossGains, k: usize, radio: &RadioConfig) -> f64 {
    let p = radio.power();
    let row = g.gains.row(k);
    let all: f64 = row.iter().map(|a| a.norm_sqr()).sum();
    p * all - 2.0 * p * row[k].re + radio.noise() * g.norms[k] + p
}

fn check_users(state: &BeamformerState, h: &CMatrix) -> Result<()> {
    if state.users() != h.ncols() || state.antennas() != h.nrows() {
        return Err(Error::Shape(format!(
            "state is {}x{}x{}, channel is {:?}",
            state.antennas(),
            state.chains(),
            state.users(),
            h.shape()
        )));
    }
    Ok(())
}

/// SINR of user `k` with the noise folded in as `sigma^2 / P`.
pub fn sinr(state: &BeamformerState, h: &CMatrix, radio: &RadioConfig, k: usize) -> Result<f64> {
    check_users(state, h)?;
    if k >= state.users() {
        return Err(Error::Shape(format!("user {k} out of range")));
    }
    let g = cross_gains(&state.combiners(), h)?;
    sinr_from(&g, k, radio.noise_to_power())
}

/// Per-user rates `log2(1 + SINR_k)` for arbitrary combiners `u_k`.
pub fn rates_for_combiners(combiners: &CMatrix, h: &CMatrix, radio: &RadioConfig) -> Result<Vec<f64>> {
    let g = cross_gains(combiners, h)?;
    (0..h.ncols())
        .map(|k| sinr_from(&g, k, radio.noise_to_power()).map(|s| (1.0 + s).log2()))
        .collect()
}

pub fn per_user_rates(state: &BeamformerState, h: &CMatrix, radio: &RadioConfig) -> Result<Vec<f64>> {
    check_users(state, h)?;
    rates_for_combiners(&state.combiners(), h, radio)
}

/// Sum rate in bits/s/Hz.
pub fn sum_rate(state: &BeamformerState, h: &CMatrix, radio: &RadioConfig) -> Result<f64> {
    Ok(per_user_rates(state, h, radio)?.iter().sum())
}

/// Mean squared error of user `k`'s symbol estimate.
pub fn mse_per_user(state: &BeamformerState, h: &CMatrix, radio: &RadioConfig, k: usize) -> Result<f64> {
    check_users(state, h)?;
    if k >= state.users() {
        return Err(Error::Shape(format!("user {k} out of range")));
    }
    let g = cross_gains(&state.combiners(), h)?;
    Ok(mse_from(&g, k, radio))
}

/// All users' MSEs.
pub fn mse_all(state: &BeamformerState, h: &CMatrix, radio: &RadioConfig) -> Result<Vec<f64>> {
    check_users(state, h)?;
    mse_for_combiners(&state.combiners(), h, radio)
}

pub fn mse_for_combiners(combiners: &CMatrix, h: &CMatrix, radio: &RadioConfig) -> Result<Vec<f64>> {
    let g = cross_gains(combiners, h)?;
    Ok((0..h.ncols()).map(|k| mse_from(&g, k, radio)).collect())
}

/// `sum_k (w_k e_k - ln w_k)`, the objective the WMMSE descent minimizes.
pub fn weighted_mse_objective(state: &BeamformerState, h: &CMatrix, radio: &RadioConfig) -> Result<f64> {
    let e = mse_all(state, h, radio)?;
    Ok(e.iter()
        .zip(&state.weights)
        .map(|(e, w)| w * e - w.ln())
        .sum())
}

/// Per-component hardware power draw in watts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyModel {
    pub amplifier_w: f64,
    pub phase_shifter_w: f64,
    pub rf_chain_w: f64,
}

impl EnergyModel {
    pub fn new(amplifier_w: f64, phase_shifter_w: f64, rf_chain_w: f64) -> Result<Self> {
        for (name, v) in [
            ("amplifier", amplifier_w),
            ("phase shifter", phase_shifter_w),
            ("RF chain", rf_chain_w),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} power must be positive, got {v}")));
            }
        }
        Ok(Self {
            amplifier_w,
            phase_shifter_w,
            rf_chain_w,
        })
    }
}

impl Default for EnergyModel {
    fn default() -> Self {
        Self {
            amplifier_w: 0.1,
            phase_shifter_w: 0.01,
            rf_chain_w: 0.1,
        }
    }
}

/// Sum rate per watt of total consumed power.
pub fn energy_efficiency(
    rate: f64,
    radio: &RadioConfig,
    model: &EnergyModel,
    chains: usize,
    antennas: usize,
    phase_shifters: usize,
) -> f64 {
    let total = radio.power()
        + chains as f64 * model.rf_chain_w
        + antennas as f64 * model.amplifier_w
        + phase_shifters as f64 * model.phase_shifter_w;
    rate / total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fc::wmmse_digital_update;
    use crate::linalg::unit;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_radio() -> RadioConfig {
        RadioConfig::new(28e9, 1.4, 0.0, 1.0, 1.0).unwrap()
    }

    fn scalar_state(w: C64) -> BeamformerState {
        BeamformerState::new(
            CMatrix::from_element(1, 1, C64::new(1.0, 0.0)),
            CMatrix::from_element(1, 1, w),
            full_mask(1, 1),
            vec![1.0],
        )
        .unwrap()
    }

    fn random_instance(rng: &mut ChaCha8Rng, m: usize, n: usize, k: usize) -> (BeamformerState, CMatrix) {
        let analog = CMatrix::from_fn(m, n, |_, _| unit(rng.random_range(-3.2..3.2)));
        let digital = CMatrix::from_fn(n, k, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let h = CMatrix::from_fn(m, k, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let weights = (0..k).map(|_| rng.random_range(0.5..2.0)).collect();
        (BeamformerState::new(analog, digital, full_mask(m, n), weights).unwrap(), h)
    }

    #[test]
    fn scalar_sinr_and_rate() {
        let s = scalar_state(C64::new(1.0, 0.0));
        let h = CMatrix::from_element(1, 1, C64::new(1.0, 0.0));
        assert_eq!(sinr(&s, &h, &scalar_radio(), 0).unwrap(), 1.0);
        assert_eq!(sum_rate(&s, &h, &scalar_radio()).unwrap(), 1.0);
    }

    #[test]
    fn scalar_mse_examples() {
        let h = CMatrix::from_element(1, 1, C64::new(1.0, 0.0));
        let half = scalar_state(C64::new(0.5, 0.0));
        assert!((mse_per_user(&half, &h, &scalar_radio(), 0).unwrap() - 0.5).abs() < 1e-15);
        let zero = BeamformerState {
            digital: CMatrix::zeros(1, 1),
            ..half
        };
        let radio = RadioConfig::new(28e9, 1.4, 0.0, 0.3, 1.0).unwrap();
        assert_eq!(mse_per_user(&zero, &h, &radio, 0).unwrap(), 0.3);
    }

    #[test]
    fn degenerate_receiver_is_an_error() {
        let s = BeamformerState {
            digital: CMatrix::zeros(1, 1),
            ..scalar_state(C64::new(1.0, 0.0))
        };
        let h = CMatrix::from_element(1, 1, C64::new(1.0, 0.0));
        assert!(matches!(
            sinr(&s, &h, &scalar_radio(), 0),
            Err(Error::DegenerateReceiver { user: 0 })
        ));
    }

    #[test]
    fn orthogonal_channels_have_no_interference() {
        let id = CMatrix::identity(2, 2);
        let s = BeamformerState::new(id.clone(), id.clone(), full_mask(2, 2), vec![1.0, 1.0]);
        // identity analog is not unit modulus off-diagonal, so use a PC-style mask
        assert!(s.is_err());
        let mut mask = Mask::from_element(2, 2, false);
        mask[(0, 0)] = true;
        mask[(1, 1)] = true;
        let s = BeamformerState::new(id.clone(), id.clone(), mask, vec![1.0, 1.0]).unwrap();
        let radio = scalar_radio();
        assert_eq!(sinr(&s, &id, &radio, 0).unwrap(), 1.0);
        assert_eq!(sinr(&s, &id, &radio, 1).unwrap(), 1.0);
    }

    #[test]
    fn symmetric_users_get_equal_rates() {
        let h = CMatrix::from_row_slice(2, 2, &[C64::new(1.0, 0.0), C64::new(0.3, 0.0), C64::new(0.3, 0.0), C64::new(1.0, 0.0)]);
        let analog = CMatrix::from_row_slice(2, 2, &[unit(0.0), unit(0.0), unit(0.0), unit(std::f64::consts::PI)]);
        let digital = analog.adjoint() / C64::new(2.0, 0.0);
        let s = BeamformerState::new(analog, digital, full_mask(2, 2), vec![1.0, 1.0]).unwrap();
        let r = per_user_rates(&s, &h, &scalar_radio()).unwrap();
        assert!((r[0] - r[1]).abs() < 1e-12);
    }

    #[test]
    fn sinr_invariant_to_receiver_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let radio = scalar_radio();
        for _ in 0..20 {
            let (mut s, h) = random_instance(&mut rng, 6, 3, 2);
            let before = sinr(&s, &h, &radio, 1).unwrap();
            let scale = C64::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
            for v in s.digital.column_mut(1).iter_mut() {
                *v *= scale;
            }
            let after = sinr(&s, &h, &radio, 1).unwrap();
            assert!((before - after).abs() <= 1e-12 * before.max(1.0));
        }
    }

    #[test]
    fn sum_rate_invariant_to_joint_user_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let radio = scalar_radio();
        let (s, h) = random_instance(&mut rng, 6, 3, 3);
        let perm = [2usize, 0, 1];
        let h2 = CMatrix::from_fn(6, 3, |i, j| h[(i, perm[j])]);
        let d2 = CMatrix::from_fn(3, 3, |i, j| s.digital[(i, perm[j])]);
        let s2 = BeamformerState {
            digital: d2,
            weights: perm.iter().map(|&p| s.weights[p]).collect(),
            ..s.clone()
        };
        let a = sum_rate(&s, &h, &radio).unwrap();
        let b = sum_rate(&s2, &h2, &radio).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn mmse_receiver_links_mse_and_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let radio = RadioConfig::new(28e9, 1.4, 0.0, 0.7, 0.2).unwrap();
        for _ in 0..20 {
            let (mut s, h) = random_instance(&mut rng, 8, 4, 2);
            s.digital = wmmse_digital_update(&s.analog, &h, &radio).unwrap();
            let e = mse_all(&s, &h, &radio).unwrap();
            let rates = per_user_rates(&s, &h, &radio).unwrap();
            let via_mse: f64 = e.iter().map(|ek| -(ek / radio.power()).log2()).sum();
            let total: f64 = rates.iter().sum();
            assert!((total - via_mse).abs() < 1e-9 * total.max(1.0));
            for k in 0..2 {
                let g = sinr(&s, &h, &radio, k).unwrap();
                assert!((e[k] * (1.0 + g) - radio.power()).abs() < 1e-9 * radio.power());
            }
        }
    }

    #[test]
    fn weighted_objective_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let radio = scalar_radio();
        let (mut s, h) = random_instance(&mut rng, 5, 3, 3);
        s.weights = vec![1.0; 3];
        let e = mse_all(&s, &h, &radio).unwrap();
        let obj = weighted_mse_objective(&s, &h, &radio).unwrap();
        assert!((obj - e.iter().sum::<f64>()).abs() < 1e-12);
        s.weights = e.iter().map(|v| 1.0 / v).collect();
        let obj = weighted_mse_objective(&s, &h, &radio).unwrap();
        let expect: f64 = e.iter().map(|v| 1.0 + v.ln()).sum();
        assert!((obj - expect).abs() < 1e-12);
    }

    #[test]
    fn energy_efficiency_examples() {
        let radio = RadioConfig::new(28e9, 1.4, 0.08, 0.01, 1e-11).unwrap();
        let em = EnergyModel::default();
        let fc = energy_efficiency(10.0, &radio, &em, 25, 50, 1250);
        assert!((fc - 10.0 / 20.01).abs() < 1e-12);
        assert!((fc - 0.49975).abs() < 1e-5);
        let pc = energy_efficiency(10.0, &radio, &em, 25, 50, 50);
        assert!((pc - 10.0 / 8.01).abs() < 1e-12);
        assert!((pc - 1.2484).abs() < 1e-4);
        assert_eq!(energy_efficiency(0.0, &radio, &em, 25, 50, 50), 0.0);
        let mut prev = f64::INFINITY;
        for n_ps in 0..100 {
            let ee = energy_efficiency(10.0, &radio, &em, 4, 8, n_ps);
            assert!(ee < prev);
            prev = ee;
        }
        assert!(EnergyModel::new(0.1, 0.0, 0.1).is_err());
    }
}
