//! Per-bin gradients, curvatures and Newton-type parameter updates.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{self, quad_form, real, CMat, CVec, ZERO};
use crate::model::BinState;
use crate::stft::Spectrogram;

/// Score magnitudes below this mark a bin as dead for the current iteration.
pub const DEAD_BIN: f64 = 1e-12;

/// Why a bin kept its parameters in an iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Skip {
    /// Silent bin: no excitation, vanishing score normalization or degenerate covariance.
    Dead,
    /// Newton curvature vanished.
    Curvature,
    /// Curvature matrix singular even after loading.
    Singular,
}

fn mean_times_conj(e: &CMat, v: impl Iterator<Item = Complex64>) -> CVec {
    let t = e.ncols();
    let mut acc = CVec::zeros(e.nrows());
    for (k, c) in v.enumerate() {
        acc += e.column(k) * c;
    }
    acc / real(t as f64)
}

/// `E[e u^*]` for `e`: `M x T`, `u`: `1 x T`.
pub fn cross_correlation(e: &CMat, u: &CMat) -> CVec {
    mean_times_conj(e, u.iter().map(|v| v.conj()))
}

/// `E[|u|^2]`.
pub fn mean_power(u: &CMat) -> f64 {
    u.norm_squared() / u.ncols().max(1) as f64
}

/// Echo-path gradient `dJ/dh^* = -E[(phi^* / nu^* w + R e) u^*]`.
pub fn grad_h(e: &CMat, u: &CMat, phi: &[Complex64], nu: Complex64, bin: &BinState) -> CVec {
    let t = u.ncols() as f64;
    let phi_u: Complex64 = phi.iter().zip(u.iter()).map(|(p, v)| p.conj() * v.conj()).sum::<Complex64>() / t;
    let eu = cross_correlation(e, u);
    -(&bin.w * (phi_u / nu.conj()) + &bin.r * eu)
}

/// Beamformer gradient `dJ/dw^* = E[e phi / nu] - a`.
pub fn grad_w(e: &CMat, phi: &[Complex64], nu: Complex64, a: &CVec) -> CVec {
    mean_times_conj(e, phi.iter().map(|p| p / nu)) - a
}

/// Echo-path curvature `(R + rho^*/nu^* w w^H) E[|u|^2]` (conjugated Hessian).
pub fn hessian_h(u: &CMat, bin: &BinState, nu: Complex64, rho: Complex64) -> CMat {
    let ww = &bin.w * bin.w.adjoint();
    (&bin.r + ww * (rho.conj() / nu.conj())) * real(mean_power(u))
}

/// Pseudo-Hessian `xi w^* w^H E[u^2]` that the echo-path update neglects.
pub fn pseudo_hessian_h(u: &CMat, bin: &BinState, xi: Complex64) -> CMat {
    let t = u.ncols() as f64;
    let u2: Complex64 = u.iter().map(|v| v * v).sum::<Complex64>() / t;
    bin.w.conjugate() * bin.w.adjoint() * (xi * u2)
}

/// Non-circularity `|E[u^2]| / E[|u|^2]` per bin; near zero justifies dropping the pseudo-Hessian.
pub fn circularity_check(u: &Spectrogram) -> Vec<f64> {
    u.bins()
        .iter()
        .map(|b| {
            let row = b.row(0);
            let p = row.norm_squared();
            if p == 0.0 {
                return 0.0;
            }
            row.iter().map(|v| v * v).sum::<Complex64>().norm() / p
        })
        .collect()
}

/// Newton step on the echo path; returns the applied increment.
pub fn update_aec(
    bin: &mut BinState,
    e: &CMat,
    u: &CMat,
    phi: &[Complex64],
    nu: Complex64,
    rho: Complex64,
    loading: f64,
) -> std::result::Result<CVec, Skip> {
    if mean_power(u) <= DEAD_BIN || nu.norm() <= DEAD_BIN {
        return Err(Skip::Dead);
    }
    let rhs = -grad_h(e, u, phi, nu, bin);
    let mut curv = hessian_h(u, bin, nu, rho);
    let step = match linalg::solve(&curv, &rhs) {
        Some(s) => s,
        None => {
            linalg::load_diagonal(&mut curv, loading.max(crate::model::DEFAULT_LOADING));
            linalg::solve(&curv, &rhs).ok_or(Skip::Singular)?
        }
    };
    bin.h += &step;
    Ok(step)
}

/// Newton-type (one-unit FastIVA) step on the beamformer; returns the applied increment.
///
/// The step is `nu^*/(nu^* - rho^*) C_ee^{-1} (E[e phi / nu] - a)`. Requires a
/// current `C_ee` and `a` in `bin` and a unit-scale output.
pub fn update_bse(
    bin: &mut BinState,
    e: &CMat,
    phi: &[Complex64],
    nu: Complex64,
    rho: Complex64,
    loading: f64,
) -> std::result::Result<CVec, Skip> {
    if nu.norm() <= DEAD_BIN {
        return Err(Skip::Dead);
    }
    let denom = nu.conj() - rho.conj();
    if denom.norm() < DEAD_BIN {
        return Err(Skip::Curvature);
    }
    let g = grad_w(e, phi, nu, &bin.a);
    let mut c = bin.c_ee.clone();
    linalg::load_diagonal(&mut c, loading);
    let dir = linalg::solve(&c, &g).ok_or(Skip::Singular)?;
    let step = dir * (nu.conj() / denom);
    bin.w += &step;
    Ok(step)
}

/// Rescales `w` so that `w^H C_ee w = 1`, i.e. unit output power.
pub fn normalize_w(bin: &mut BinState) -> Result<()> {
    let p = quad_form(&bin.c_ee, &bin.w);
    if !(p > 0.0 && p.is_finite()) {
        return Err(Error::Numerical(format!("output power {p} cannot be normalized")));
    }
    bin.w /= real(p.sqrt());
    Ok(())
}

/// Minimal-distortion scale per bin, `E[s^* e_r] / E[|s|^2]`.
pub fn backprojection_scale(s_hat: &CMat, e: &CMat, r: usize) -> Result<Complex64> {
    let p = s_hat.norm_squared();
    if p == 0.0 {
        return Err(Error::Numerical("cannot backproject a silent estimate".into()));
    }
    let cross: Complex64 = s_hat.iter().zip(e.row(r).iter()).map(|(s, x)| s.conj() * x).sum();
    Ok(cross / p)
}

/// Rescales each bin of `s_hat` onto error channel `r` (zero-based).
/// Silent bins get scale zero.
pub fn backproject(s_hat: &Spectrogram, e: &Spectrogram, r: usize) -> Result<(Spectrogram, Vec<Complex64>)> {
    if r >= e.channels() {
        return Err(Error::Config(format!("reference channel {} out of range", r + 1)));
    }
    if s_hat.channels() != 1 || s_hat.num_bins() != e.num_bins() || s_hat.frames() != e.frames() {
        return Err(Error::Shape("estimate and error signal disagree in shape".into()));
    }
    let mut scales = Vec::with_capacity(s_hat.num_bins());
    let mut bins = Vec::with_capacity(s_hat.num_bins());
    for (s, ef) in s_hat.bins().iter().zip(e.bins()) {
        let a = backprojection_scale(s, ef, r).unwrap_or(ZERO);
        scales.push(a);
        bins.push(s * a);
    }
    let out = Spectrogram::from_bins(bins)?.with_meta(s_hat.meta().copied())?;
    Ok((out, scales))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::unit;
    use crate::model::{covariance, score_field, ScoreModel, DEFAULT_LOADING};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> CMat {
        CMat::from_fn(r, c, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    #[test]
    fn no_excitation_no_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = rand_mat(&mut rng, 3, 20);
        let u = CMat::zeros(1, 20);
        let bin = BinState::initial(3);
        let phi = vec![Complex64::new(0.3, 0.1); 20];
        assert_eq!(grad_h(&e, &u, &phi, real(1.0), &bin).norm(), 0.0);
        assert_eq!(hessian_h(&u, &bin, real(1.0), real(2.0)).norm(), 0.0);
        let mut b = bin.clone();
        assert_eq!(update_aec(&mut b, &e, &u, &phi, real(1.0), real(2.0), 0.0), Err(Skip::Dead));
    }

    #[test]
    fn converged_echo_path_has_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u = rand_mat(&mut rng, 1, 20);
        let e = CMat::zeros(3, 20);
        let bins = vec![e.rows(0, 1).into_owned()];
        let field = score_field(&bins, ScoreModel::Spherical);
        let g = grad_h(&e, &u, &field.phi[0], real(1.0), &BinState::initial(3));
        assert_eq!(g.norm(), 0.0);
    }

    #[test]
    fn single_channel_curvature_is_loudspeaker_power() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = rand_mat(&mut rng, 1, 50);
        let bin = BinState::initial(1);
        // Gaussian score: rho = 1, nu = E|s|^2; with w = 1 the curvature is E|u|^2 / nu
        let nu = 1.0;
        let h = hessian_h(&u, &bin, real(nu), real(1.0));
        assert!((h[(0, 0)].re - mean_power(&u)).abs() < 1e-14);
    }

    #[test]
    fn circularity_examples() {
        let constant = Spectrogram::from_bins(vec![CMat::from_element(1, 10, real(0.7))]).unwrap();
        assert!((circularity_check(&constant)[0] - 1.0).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let bins = (0..50)
            .map(|_| {
                CMat::from_fn(1, 1000, |_, _| {
                    let re: f64 = rng.sample(rand_distr::StandardNormal);
                    let im: f64 = rng.sample(rand_distr::StandardNormal);
                    Complex64::new(re, im)
                })
            })
            .collect();
        let ratios = circularity_check(&Spectrogram::from_bins(bins).unwrap());
        assert!(ratios.iter().all(|r| *r < 0.15));
    }

    #[test]
    fn bse_fixed_point_is_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let e = rand_mat(&mut rng, 3, 40);
        let mut bin = BinState::initial(3);
        bin.c_ee = covariance(&e, DEFAULT_LOADING).unwrap();
        let phi: Vec<Complex64> = (0..40).map(|t| e[(1, t)].conj()).collect();
        // choose a so that the gradient vanishes
        bin.a = mean_times_conj(&e, phi.iter().copied());
        let before = bin.w.clone();
        let step = update_bse(&mut bin, &e, &phi, real(1.0), real(3.0), DEFAULT_LOADING).unwrap();
        assert!(step.norm() < 1e-15);
        assert!((bin.w - before).norm() < 1e-15);
    }

    #[test]
    fn bse_skips_flat_curvature() {
        let mut bin = BinState::initial(2);
        let e = CMat::from_element(2, 4, real(1.0));
        let phi = vec![real(1.0); 4];
        assert_eq!(update_bse(&mut bin, &e, &phi, real(1.0), real(1.0), 0.0), Err(Skip::Curvature));
        assert_eq!(update_bse(&mut bin, &e, &phi, ZERO, real(1.0), 0.0), Err(Skip::Dead));
    }

    #[test]
    fn normalization_examples() {
        let mut bin = BinState::initial(2);
        bin.w = unit(2, 0) * real(2.0);
        normalize_w(&mut bin).unwrap();
        assert_eq!(bin.w, unit(2, 0));

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let e = rand_mat(&mut rng, 3, 30);
        let mut bin = BinState::initial(3);
        bin.w = rand_mat(&mut rng, 3, 1).column(0).into_owned();
        bin.c_ee = covariance(&e, 0.0).unwrap();
        normalize_w(&mut bin).unwrap();
        let s = crate::model::extract(&bin.w, &e);
        assert!((mean_power(&s) - 1.0).abs() < 1e-10);
        let once = bin.w.clone();
        normalize_w(&mut bin).unwrap();
        assert!((bin.w - once).norm() < 1e-15);

        let mut dead = BinState::initial(2);
        dead.c_ee = CMat::zeros(2, 2);
        assert!(normalize_w(&mut dead).is_err());
    }

    #[test]
    fn backprojection_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let e = Spectrogram::from_bins(vec![rand_mat(&mut rng, 2, 30)]).unwrap();
        let s = e.channel(0);
        let (out, sc) = backproject(&s, &e, 0).unwrap();
        assert!((sc[0] - real(1.0)).norm() < 1e-14);
        assert!((out.bin(0) - s.bin(0)).norm() < 1e-14);

        let doubled = s.scaled(2.0);
        let (out, _) = backproject(&doubled, &e, 0).unwrap();
        assert!((out.bin(0) - s.bin(0)).norm() < 1e-13);

        assert!(backproject(&s, &e, 2).is_err());
    }

    #[test]
    fn backprojection_minimizes_distortion() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let e = rand_mat(&mut rng, 2, 25);
        let s = rand_mat(&mut rng, 1, 25);
        let alpha = backprojection_scale(&s, &e, 1).unwrap();
        let dist = |a: Complex64| -> f64 { (&s * a - e.rows(1, 1)).norm_squared() };
        let mut best = (f64::INFINITY, ZERO);
        let (lo, hi, n) = (-1.0, 1.0, 801);
        for i in 0..n {
            for j in 0..n {
                let a = Complex64::new(
                    lo + (hi - lo) * i as f64 / (n - 1) as f64,
                    lo + (hi - lo) * j as f64 / (n - 1) as f64,
                );
                let d = dist(a);
                if d < best.0 {
                    best = (d, a);
                }
            }
        }
        assert!((best.1 - alpha).norm() < 2.0 * (hi - lo) / (n - 1) as f64);
        assert!(dist(alpha) <= best.0 + 1e-12);
    }
}
