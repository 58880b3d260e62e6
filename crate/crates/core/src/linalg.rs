//! Small dense complex helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type CVec = DVector<Complex64>;
pub type CMat = DMatrix<Complex64>;

pub(crate) const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub(crate) const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Unit vector `e_k` of length `dim`.
pub fn unit(dim: usize, k: usize) -> CVec {
    let mut v = CVec::zeros(dim);
    v[k] = ONE;
    v
}

pub(crate) fn real(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

/// `v^H M v`, real part only (exact for Hermitian `M`).
pub fn quad_form(m: &CMat, v: &CVec) -> f64 {
    v.dotc(&(m * v)).re
}

/// Adds `ratio * tr(C) / dim` to the diagonal.
pub fn load_diagonal(c: &mut CMat, ratio: f64) {
    let dim = c.nrows();
    if dim == 0 || ratio == 0.0 {
        return;
    }
    let delta = ratio * c.trace().re / dim as f64;
    for i in 0..dim {
        c[(i, i)] += real(delta);
    }
}

/// Solves `A x = b` for Hermitian positive definite `A`, falling back to LU.
pub fn solve(a: &CMat, b: &CVec) -> Option<CVec> {
    if let Some(ch) = a.clone().cholesky() {
        let x = ch.solve(b);
        if x.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
            return Some(x);
        }
    }
    let x = a.clone().lu().solve(b)?;
    x.iter().all(|v| v.re.is_finite() && v.im.is_finite()).then_some(x)
}

/// Inverse of a Hermitian positive definite matrix, falling back to LU.
pub fn inverse(a: &CMat) -> Option<CMat> {
    if let Some(ch) = a.clone().cholesky() {
        return Some(ch.inverse());
    }
    a.clone().try_inverse()
}

/// Largest absolute deviation from Hermitian symmetry.
pub fn hermitian_defect(a: &CMat) -> f64 {
    (a - a.adjoint()).iter().map(|v| v.norm()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solve_recovers_rhs() {
        let a = CMat::from_row_slice(
            2,
            2,
            &[real(4.0), Complex64::new(1.0, 1.0), Complex64::new(1.0, -1.0), real(3.0)],
        );
        let x = CVec::from_vec(vec![Complex64::new(1.0, 2.0), Complex64::new(-0.5, 0.25)]);
        let b = &a * &x;
        let got = solve(&a, &b).unwrap();
        assert!((got - x).norm() < 1e-12);
    }

    #[test]
    fn singular_system_has_no_solution() {
        assert!(solve(&CMat::zeros(2, 2), &unit(2, 0)).is_none());
    }

    #[test]
    fn loading_scales_with_trace() {
        let mut c = CMat::from_diagonal(&CVec::from_vec(vec![real(2.0), real(4.0)]));
        load_diagonal(&mut c, 0.5);
        assert_eq!(c[(0, 0)], real(3.5));
        assert_eq!(c[(1, 1)], real(5.5));
    }
}
