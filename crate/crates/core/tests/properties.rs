use aecbse::linalg::{self, CMat, CVec};
use aecbse::metrics;
use aecbse::model::{self, BinState};
use aecbse::optimizer::updates;
use aecbse::stft::{self, FrameSpec, Spectrogram, Window};
use num_complex::Complex64;
use proptest::prelude::*;

fn complex() -> impl Strategy<Value = Complex64> {
    (-1.0f64..1.0, -1.0f64..1.0).prop_map(|(re, im)| Complex64::new(re, im))
}

fn cvec(n: usize) -> impl Strategy<Value = CVec> {
    prop::collection::vec(complex(), n).prop_map(CVec::from_vec)
}

fn cmat(r: usize, c: usize) -> impl Strategy<Value = CMat> {
    prop::collection::vec(complex(), r * c).prop_map(move |v| CMat::from_vec(r, c, v))
}

fn bin_case() -> impl Strategy<Value = (CVec, CMat)> {
    (2usize..6).prop_flat_map(|m| (cvec(m), cmat(m, 4 * m)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn blocking_matrix_annihilates_atf(a in (2usize..9).prop_flat_map(cvec)) {
        prop_assume!(a[0].norm() > 1e-3);
        let b = model::blocking_matrix(&a).unwrap();
        prop_assert!((&b * &a).norm() <= 1e-12 * (1.0 + a.norm_squared()));
    }

    #[test]
    fn orthogonal_constraint_is_distortionless((w, frames) in bin_case()) {
        let c = model::covariance(&frames, 0.0).unwrap();
        prop_assume!(linalg::quad_form(&c, &w) > 1e-6);
        let a = model::orthogonal_constraint_atf(&c, &w).unwrap();
        prop_assert!((w.dotc(&a) - Complex64::new(1.0, 0.0)).norm() <= 1e-10);
    }

    #[test]
    fn normalization_gives_unit_power_and_is_idempotent((w, frames) in bin_case()) {
        let mut bin = BinState::initial(w.len());
        bin.w = w;
        bin.refresh(&frames, 0.0).unwrap();
        prop_assume!(linalg::quad_form(&bin.c_ee, &bin.w) > 1e-6);
        updates::normalize_w(&mut bin).unwrap();
        let power = updates::mean_power(&model::extract(&bin.w, &frames));
        prop_assert!((power - 1.0).abs() <= 1e-10);
        let once = bin.w.clone();
        updates::normalize_w(&mut bin).unwrap();
        prop_assert!((&bin.w - &once).norm() <= 1e-12);
    }

    #[test]
    fn score_is_scale_invariant(s in prop::collection::vec(complex(), 1..16), idx in 0usize..3) {
        prop_assume!(s.iter().map(|v| v.norm_sqr()).sum::<f64>() > 1e-6);
        let alpha = [0.5, 2.0, 10.0][idx];
        let scaled: Vec<Complex64> = s.iter().map(|v| v * alpha).collect();
        let (p, q) = (model::score(&s), model::score(&scaled));
        for (x, y) in p.phi.iter().zip(&q.phi) {
            prop_assert!((x - y).norm() <= 1e-12 * (1.0 + x.norm()));
        }
    }

    #[test]
    fn stft_round_trip(sig in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 700..1200), 1..3)) {
        let len = sig.iter().map(Vec::len).min().unwrap();
        let sig: Vec<Vec<f64>> = sig.into_iter().map(|mut c| { c.truncate(len); c }).collect();
        let spec = FrameSpec::new(128, 64, Window::SqrtHann, 16000).unwrap();
        let back = stft::synthesize(&stft::analyze(&sig, &spec).unwrap()).unwrap();
        let range = spec.interior(len);
        for (a, b) in sig.iter().zip(&back) {
            let err: f64 = range.clone().map(|n| (a[n] - b[n]).powi(2)).sum();
            let energy: f64 = range.clone().map(|n| a[n] * a[n]).sum();
            prop_assert!(err.sqrt() <= 1e-10 * energy.sqrt().max(1e-300));
        }
    }

    #[test]
    fn backprojection_removes_scale(e in cmat(3, 20), g in complex()) {
        prop_assume!(g.norm() > 1e-3 && e.row(0).norm() > 1e-6);
        let s = e.rows(0, 1) * g;
        let e = Spectrogram::from_bins(vec![e]).unwrap();
        let s = Spectrogram::from_bins(vec![s]).unwrap();
        let (proj, scales) = updates::backproject(&s, &e, 0).unwrap();
        prop_assert!((scales[0] * g - Complex64::new(1.0, 0.0)).norm() <= 1e-10);
        prop_assert!((proj.bin(0) - e.bin(0).rows(0, 1)).norm() <= 1e-10 * e.bin(0).norm());
    }

    #[test]
    fn ratios_are_scale_invariant(p in prop::array::uniform4(1e-6f64..1e3), k in 1e-3f64..1e3) {
        let a = metrics::ratios(p[0], p[1], p[2], p[3]);
        let b = metrics::ratios(k * p[0], k * p[1], k * p[2], k * p[3]);
        prop_assert!((a.0 - b.0).abs() < 1e-9 && (a.1 - b.1).abs() < 1e-9 && (a.2 - b.2).abs() < 1e-9);
    }
}
