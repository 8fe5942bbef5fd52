//! Interleaved partially connected receivers.
//!
//! Chain `n` (0-based) is wired to segments `n, n + N_RF, n + 2 N_RF, ...`,
//! spreading every sub-array across the whole waveguide. Analog phases are
//! calibrated one entry at a time.

use crate::error::{Error, Result};
use crate::fc::{wmmse_analog_objective, wmmse_descent, wmmse_digital_update, AnalogUpdate, BcdOptions, BcdOutcome, StepEvent, Variant, WmmseCache};
use crate::geometry::{ChannelModel, PinchPositions, RadioConfig};
use crate::linalg::{CMatrix, C64};
use crate::metrics::Mask;

#[derive(Debug, Clone, PartialEq)]
pub struct InterleavedTopology {
    n_rf: usize,
    n_par: usize,
    /// `perm[j] = i`: sequential row `j` moves to interleaved row `i`.
    perm: Vec<usize>,
    mask: Mask,
}

impl InterleavedTopology {
    pub fn chains(&self) -> usize {
        self.n_rf
    }

    pub fn per_chain(&self) -> usize {
        self.n_par
    }

    pub fn antennas(&self) -> usize {
        self.perm.len()
    }

    pub fn mapping(&self) -> &[usize] {
        &self.perm
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    /// Permutation matrix `P` with `P[i, j] = 1` when sequential row `j`
    /// lands on row `i`.
    pub fn permutation_matrix(&self) -> nalgebra::DMatrix<u8> {
        let m = self.antennas();
        let mut p = nalgebra::DMatrix::zeros(m, m);
        for (j, &i) in self.perm.iter().enumerate() {
            p[(i, j)] = 1;
        }
        p
    }

    /// Chain wired to segment `row`.
    pub fn chain_of(&self, row: usize) -> usize {
        row % self.n_rf
    }

    /// Sub-array mask with chain `n` driving the contiguous block
    /// `n N_par .. (n + 1) N_par`.
    pub fn sequential_mask(&self) -> Mask {
        Mask::from_fn(self.antennas(), self.n_rf, |i, n| i / self.n_par == n)
    }

    /// Applies the row permutation to a sequential-layout matrix.
    pub fn permute_rows<T: nalgebra::Scalar>(&self, sequential: &nalgebra::DMatrix<T>) -> nalgebra::DMatrix<T> {
        let mut source = vec![0; self.perm.len()];
        for (j, &i) in self.perm.iter().enumerate() {
            source[i] = j;
        }
        nalgebra::DMatrix::from_fn(sequential.nrows(), sequential.ncols(), |i, n| {
            sequential[(source[i], n)].clone()
        })
    }
}

/// Builds the round-robin chain assignment for `M` segments and `N_RF` chains.
pub fn build_interleaved(m: usize, n_rf: usize) -> Result<InterleavedTopology> {
    if n_rf == 0 || m == 0 || m % n_rf != 0 {
        return Err(Error::Topology(format!(
            "{m} segments cannot be split evenly over {n_rf} RF chains"
        )));
    }
    let n_par = m / n_rf;
    let mut perm = vec![0; m];
    for ip in 0..n_par {
        for jp in 0..n_rf {
            perm[jp * n_par + ip] = ip * n_rf + jp;
        }
    }
    let mask = Mask::from_fn(m, n_rf, |i, n| i % n_rf == n);
    Ok(InterleavedTopology { n_rf, n_par, perm, mask })
}

/// MMSE digital combiner for a masked analog network.
pub fn pc_digital_update(analog: &CMatrix, h: &CMatrix, radio: &RadioConfig) -> Result<CMatrix> {
    wmmse_digital_update(analog, h, radio)
}

/// Coefficients of the weighted MSE restricted to entry `(m, n)`:
/// `f(w) = c1 + c2 |w|^2 - Re(conj(w) c3)`. Returns `(c2, c3)`.
pub fn entry_coefficients(analog: &CMatrix, cache: &WmmseCache, m: usize, n: usize) -> (f64, C64) {
    let rfc_mn = (cache.r.row(m) * analog * cache.c.column(n))[(0, 0)];
    let c2 = (cache.r[(m, m)] * cache.c[(n, n)]).re;
    let rbfc = rfc_mn - cache.r[(m, m)] * analog[(m, n)] * cache.c[(n, n)];
    (c2, cache.b[(m, n)] - rbfc * 2.0)
}

/// Sets entry `(m, n)` to `e^{j arg c3}`; a vanishing `c3` leaves it alone.
pub fn elementwise_phase_update(analog: &mut CMatrix, mask: &Mask, cache: &WmmseCache, m: usize, n: usize) -> Result<()> {
    if !mask[(m, n)] {
        return Err(Error::Domain(format!("entry ({m}, {n}) is not wired")));
    }
    let (_, c3) = entry_coefficients(analog, cache, m, n);
    if c3.norm() > 0.0 {
        analog[(m, n)] = c3 / c3.norm();
    }
    Ok(())
}

/// Repeats [`elementwise_sweep`] until a sweep lowers the analog objective
/// by less than `tol` relative, or `max_sweeps` is reached. Returns the
/// number of sweeps.
pub fn elementwise_descent(
    analog: &mut CMatrix,
    mask: &Mask,
    cache: &WmmseCache,
    tol: f64,
    max_sweeps: usize,
) -> Result<usize> {
    let mut value = wmmse_analog_objective(analog, cache)?.0;
    for sweep in 1..=max_sweeps {
        elementwise_sweep(analog, mask, cache);
        let next = wmmse_analog_objective(analog, cache)?.0;
        if !next.is_finite() {
            return Err(Error::NonFinite { iteration: sweep });
        }
        let decrease = value - next;
        value = next;
        if decrease <= tol * next.abs().max(f64::MIN_POSITIVE) {
            return Ok(sweep);
        }
    }
    Ok(max_sweeps)
}

/// One row-major pass of element-wise updates over the wired entries. `R F`
/// is kept current so each entry costs `O(M + N_RF)`.
pub fn elementwise_sweep(analog: &mut CMatrix, mask: &Mask, cache: &WmmseCache) {
    let mut rf = &cache.r * &*analog;
    let (rows, cols) = analog.shape();
    for m in 0..rows {
        for n in 0..cols {
            if !mask[(m, n)] {
                continue;
            }
            let rfc_mn: C64 = (0..cols).map(|l| rf[(m, l)] * cache.c[(l, n)]).sum();
            let old = analog[(m, n)];
            let rbfc = rfc_mn - cache.r[(m, m)] * old * cache.c[(n, n)];
            let c3 = cache.b[(m, n)] - rbfc * 2.0;
            let norm = c3.norm();
            if !(norm > 0.0) {
                continue;
            }
            let new = c3 / norm;
            let delta = new - old;
            analog[(m, n)] = new;
            for i in 0..rows {
                rf[(i, n)] += cache.r[(i, m)] * delta;
            }
        }
    }
}

/// WMMSE block coordinate descent on an interleaved partially connected
/// receiver. `init` must carry the topology's mask.
pub fn bcd_pc<C: ChannelModel + ?Sized>(
    variant: Variant,
    model: &C,
    radio: &RadioConfig,
    topology: &InterleavedTopology,
    init: &crate::metrics::BeamformerState,
    positions: PinchPositions,
    options: &BcdOptions,
) -> Result<BcdOutcome> {
    bcd_pc_observed(variant, model, radio, topology, init, positions, options, &mut |_| {})
}

#[allow(clippy::too_many_arguments)]
pub fn bcd_pc_observed<C: ChannelModel + ?Sized>(
    variant: Variant,
    model: &C,
    radio: &RadioConfig,
    topology: &InterleavedTopology,
    init: &crate::metrics::BeamformerState,
    positions: PinchPositions,
    options: &BcdOptions,
    observer: &mut dyn FnMut(&StepEvent<'_>),
) -> Result<BcdOutcome> {
    if variant == Variant::Zf {
        return Err(Error::UnsupportedVariant(
            "zero forcing is not offered for the partially connected receiver".into(),
        ));
    }
    if init.mask != *topology.mask() {
        return Err(Error::Topology("initial analog network does not match the topology mask".into()));
    }
    wmmse_descent(model, radio, init, positions, options, AnalogUpdate::Elementwise(&options.cg), observer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::unit;
    use crate::metrics::{full_mask, mse_all, BeamformerState};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn four_by_two_interleaves() {
        let t = build_interleaved(4, 2).unwrap();
        let seq: Vec<usize> = (0..4).map(|i| i / 2).collect();
        assert_eq!(seq, vec![0, 0, 1, 1]);
        let chains: Vec<usize> = (0..4).map(|i| (0..2).find(|&n| t.mask()[(i, n)]).unwrap()).collect();
        assert_eq!(chains, vec![0, 1, 0, 1]);
        assert_eq!(t.mapping(), &[0, 2, 1, 3]);
    }

    #[test]
    fn degenerate_topologies() {
        let t = build_interleaved(5, 1).unwrap();
        assert_eq!(t.mapping(), &[0, 1, 2, 3, 4]);
        assert!(t.mask().iter().all(|b| *b));
        let t = build_interleaved(3, 3).unwrap();
        assert_eq!(t.mapping(), &[0, 1, 2]);
        assert_eq!(*t.mask(), Mask::from_fn(3, 3, |i, j| i == j));
        assert!(matches!(build_interleaved(6, 4), Err(Error::Topology(_))));
        assert!(matches!(build_interleaved(6, 0), Err(Error::Topology(_))));
    }

    #[test]
    fn permutation_round_trip() {
        for (m, n) in [(4, 2), (12, 3), (12, 4), (32, 8), (50, 25), (7, 7)] {
            let t = build_interleaved(m, n).unwrap();
            let p = t.permutation_matrix();
            for i in 0..m {
                assert_eq!(p.row(i).iter().map(|v| *v as usize).sum::<usize>(), 1);
                assert_eq!(p.column(i).iter().map(|v| *v as usize).sum::<usize>(), 1);
            }
            assert_eq!(t.permute_rows(&t.sequential_mask()), *t.mask());
            for i in 0..m {
                assert_eq!(t.mask().row(i).iter().filter(|b| **b).count(), 1);
                assert!(t.mask()[(i, t.chain_of(i))]);
            }
        }
    }

    fn random_masked(rng: &mut ChaCha8Rng, mask: &Mask) -> CMatrix {
        CMatrix::from_fn(mask.nrows(), mask.ncols(), |i, j| {
            if mask[(i, j)] {
                unit(rng.random_range(-3.2..3.2))
            } else {
                c(0.0, 0.0)
            }
        })
    }

    #[test]
    fn digital_update_matches_fc_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let radio = RadioConfig::new(28e9, 1.4, 0.0, 0.3, 0.1).unwrap();
        let t = build_interleaved(6, 3).unwrap();
        let f = random_masked(&mut rng, t.mask());
        let h = CMatrix::from_fn(6, 2, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        assert_eq!(pc_digital_update(&f, &h, &radio).unwrap(), wmmse_digital_update(&f, &h, &radio).unwrap());

        let eye = CMatrix::identity(6, 6);
        let got = pc_digital_update(&eye, &h, &radio).unwrap();
        let mut r = &h * h.adjoint();
        for i in 0..6 {
            r[(i, i)] += radio.noise_to_power();
        }
        let expect = r.lu().solve(&h).unwrap();
        assert!((got - expect).norm() < 1e-10);

        let one = CMatrix::from_element(1, 1, c(1.0, 0.0));
        let unit_radio = RadioConfig::new(28e9, 1.4, 0.0, 1.0, 1.0).unwrap();
        assert!((pc_digital_update(&one, &one, &unit_radio).unwrap()[(0, 0)] - c(0.5, 0.0)).norm() < 1e-15);
    }

    fn cache_with_c3(c3: C64) -> WmmseCache {
        let radio = RadioConfig::new(28e9, 1.4, 0.0, 1.0, 1.0).unwrap();
        WmmseCache::from_parts(
            CMatrix::identity(1, 1),
            CMatrix::identity(1, 1),
            CMatrix::from_element(1, 1, c3),
            1,
            &radio,
        )
    }

    #[test]
    fn phase_update_examples() {
        let mask = full_mask(1, 1);
        // c3 = B - 2 (R F C - R_mm F_mn C_nn) = B for a single entry
        let mut f = CMatrix::from_element(1, 1, unit(2.0));
        elementwise_phase_update(&mut f, &mask, &cache_with_c3(c(3.0, 0.0)), 0, 0).unwrap();
        assert!((f[(0, 0)] - c(1.0, 0.0)).norm() < 1e-15);
        elementwise_phase_update(&mut f, &mask, &cache_with_c3(c(-1.0, 0.0)), 0, 0).unwrap();
        assert!((f[(0, 0)] - c(-1.0, 0.0)).norm() < 1e-15);
        let before = f.clone();
        elementwise_phase_update(&mut f, &mask, &cache_with_c3(c(0.0, 0.0)), 0, 0).unwrap();
        assert_eq!(f, before);
        let off = Mask::from_element(1, 1, false);
        assert!(elementwise_phase_update(&mut f, &off, &cache_with_c3(c(1.0, 0.0)), 0, 0).is_err());
    }

    fn instance(rng: &mut ChaCha8Rng, t: &InterleavedTopology, k: usize) -> (CMatrix, CMatrix, Vec<f64>, RadioConfig) {
        let radio = RadioConfig::new(28e9, 1.4, 0.0, 0.5, 0.2).unwrap();
        let m = t.antennas();
        let f = random_masked(rng, t.mask());
        let h = CMatrix::from_fn(m, k, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let weights = (0..k).map(|_| rng.random_range(0.5..2.0)).collect();
        (f, h, weights, radio)
    }

    fn weighted(f: &CMatrix, fbb: &CMatrix, mask: &Mask, weights: &[f64], h: &CMatrix, radio: &RadioConfig) -> f64 {
        let state = BeamformerState::new(f.clone(), fbb.clone(), mask.clone(), weights.to_vec()).unwrap();
        mse_all(&state, h, radio).unwrap().iter().zip(weights).map(|(e, w)| e * w).sum()
    }

    #[test]
    fn phase_update_matches_grid_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let t = build_interleaved(6, 2).unwrap();
        for _ in 0..5 {
            let (f, h, weights, radio) = instance(&mut rng, &t, 2);
            let fbb = pc_digital_update(&f, &h, &radio).unwrap();
            let cache = WmmseCache::new(&h, &fbb, &weights, &radio).unwrap();
            let (m, n) = (3, 1);
            let mut updated = f.clone();
            elementwise_phase_update(&mut updated, t.mask(), &cache, m, n).unwrap();
            let ours = weighted(&updated, &fbb, t.mask(), &weights, &h, &radio);
            let mut best = f64::INFINITY;
            for s in 0..10_000 {
                let mut trial = f.clone();
                trial[(m, n)] = unit(2.0 * std::f64::consts::PI * s as f64 / 10_000.0);
                best = best.min(weighted(&trial, &fbb, t.mask(), &weights, &h, &radio));
            }
            assert!(ours <= best + 1e-12 * best.abs(), "{ours} vs {best}");
            // the grid cannot beat the exact minimizer by more than its own resolution allows
            let (c2, c3) = entry_coefficients(&f, &cache, m, n);
            assert!(c2 >= 0.0);
            let slack = c3.norm() * (1.0 - (std::f64::consts::PI * 1e-4).cos());
            assert!(best - ours <= slack + 1e-12 * best.abs());
        }
    }

    #[test]
    fn sweep_never_increases_objective_and_keeps_pattern() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let t = build_interleaved(8, 4).unwrap();
        for _ in 0..10 {
            let (mut f, h, weights, radio) = instance(&mut rng, &t, 3);
            let fbb = pc_digital_update(&f, &h, &radio).unwrap();
            let cache = WmmseCache::new(&h, &fbb, &weights, &radio).unwrap();
            let before = weighted(&f, &fbb, t.mask(), &weights, &h, &radio);
            let mut reference = f.clone();
            for m in 0..8 {
                for n in 0..4 {
                    if t.mask()[(m, n)] {
                        elementwise_phase_update(&mut reference, t.mask(), &cache, m, n).unwrap();
                    }
                }
            }
            elementwise_sweep(&mut f, t.mask(), &cache);
            assert!((&f - &reference).norm() < 1e-10);
            let after = weighted(&f, &fbb, t.mask(), &weights, &h, &radio);
            assert!(after <= before + 1e-12 * before.abs());
            for m in 0..8 {
                for n in 0..4 {
                    if t.mask()[(m, n)] {
                        assert!((f[(m, n)].norm() - 1.0).abs() < 1e-12);
                    } else {
                        assert_eq!(f[(m, n)], c(0.0, 0.0));
                    }
                }
            }
        }
    }

    #[test]
    fn zf_variant_is_rejected() {
        use crate::geometry::{GeometryConfig, Point3, SwanChannel, UserLayout};
        let geom = GeometryConfig::new(4.0, 2.0, 3.0, 2, 0.005).unwrap();
        let radio = RadioConfig::from_dbm(28e9, 1.4, 0.08, 10.0, -80.0).unwrap();
        let users = UserLayout::new(vec![Point3::ground(1.0, 1.0)]).unwrap();
        let model = SwanChannel {
            geometry: &geom,
            radio: &radio,
            users: &users,
        };
        let t = build_interleaved(2, 2).unwrap();
        let init = BeamformerState::new(CMatrix::identity(2, 2), CMatrix::zeros(2, 1), t.mask().clone(), vec![1.0]).unwrap();
        let err = bcd_pc(Variant::Zf, &model, &radio, &t, &init, geom.midpoints(), &BcdOptions::default());
        assert!(matches!(err, Err(Error::UnsupportedVariant(_))));
    }
}
