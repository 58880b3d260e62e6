//! Demixing model: echo canceller followed by a distortionless extraction
//! beamformer and a blocking matrix, the broadband source score, and the
//! diagnostic cost and transmission matrix.
//!
//! Per frequency bin the estimator is
//!
//! ```text
//! e  = x - h u
//! s^ = w^H e
//! z^ = B(a) e,    B(a) = [g, -gamma I],  a = (gamma, g^T)^T
//! ```
//!
//! where `a` is tied to `w` through the orthogonal constraint
//! `a = C_ee w / (w^H C_ee w)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, real, unit, CMat, CVec, ONE, ZERO};
use crate::stft::Spectrogram;
use num_complex::Complex64;

/// Relative diagonal loading applied to every covariance before inversion.
pub const DEFAULT_LOADING: f64 = 1e-6;
/// Floor on the broadband frame norm `r` in the spherical score.
pub const SCORE_FLOOR: f64 = 1e-12;

/// Parameters and cached statistics of one frequency bin.
#[derive(Debug, Clone, PartialEq)]
pub struct BinState {
    /// Echo path estimate.
    pub h: CVec,
    /// Extraction beamformer.
    pub w: CVec,
    /// Source-of-interest ATF estimate; first entry is `gamma`.
    pub a: CVec,
    pub c_ee: CMat,
    pub c_zz: CMat,
    /// `B^H C_zz^{-1} B`.
    pub r: CMat,
}

impl BinState {
    /// Pass-through initialization `h = 0`, `w = a = e_1`.
    pub fn initial(mics: usize) -> Self {
        let bg = mics.saturating_sub(1);
        Self {
            h: CVec::zeros(mics),
            w: unit(mics, 0),
            a: unit(mics, 0),
            c_ee: CMat::identity(mics, mics),
            c_zz: CMat::identity(bg, bg),
            r: CMat::zeros(mics, mics),
        }
    }

    pub fn gamma(&self) -> Complex64 {
        self.a[0]
    }

    /// Recomputes `C_ee`, `a`, `C_zz` and `R` from the current error frames (`M x T`).
    ///
    /// `C_ee` is kept unloaded; `loading` only regularizes the inverted `C_zz`.
    /// On a degenerate bin the previous `a` is kept and the error is returned.
    pub fn refresh(&mut self, e: &CMat, loading: f64) -> Result<()> {
        self.c_ee = covariance(e, 0.0)?;
        self.refresh_constraint(loading)
    }

    /// Recomputes `a`, `C_zz` and `R` for a new `w` under the current `C_ee`.
    pub fn refresh_constraint(&mut self, loading: f64) -> Result<()> {
        self.a = orthogonal_constraint_atf(&self.c_ee, &self.w)?;
        if self.w.len() < 2 {
            return Ok(());
        }
        let b = blocking_matrix(&self.a)?;
        // E[z z^H] = B C_ee B^H
        let mut c_zz = &b * &self.c_ee * b.adjoint();
        c_zz = (&c_zz + c_zz.adjoint()) * real(0.5);
        // Loading follows the data scale, not tr(C_zz): C_zz vanishes when the
        // error is rank one (single active source) and must stay invertible.
        let m = self.w.len() as f64;
        let delta = loading * b.norm_squared() / (m - 1.0) * self.c_ee.trace().re / m;
        for i in 0..c_zz.nrows() {
            c_zz[(i, i)] += real(delta);
        }
        self.c_zz = c_zz;
        self.r = background_precision(&b, &self.c_zz)?;
        Ok(())
    }
}

/// Full demixing state over all frequency bins.
#[derive(Debug, Clone, PartialEq)]
pub struct DemixState {
    pub bins: Vec<BinState>,
}

impl DemixState {
    pub fn new(bins: usize, mics: usize) -> Self {
        Self {
            bins: vec![BinState::initial(mics); bins],
        }
    }

    pub fn mics(&self) -> usize {
        self.bins.first().map_or(0, |b| b.w.len())
    }

    pub fn num_bins(&self) -> usize {
        self.bins.len()
    }
}

/// Blocking matrix `B = [g, -gamma I_{M-1}]` with `B a = 0`.
pub fn blocking_matrix(a: &CVec) -> Result<CMat> {
    let m = a.len();
    if m < 2 {
        return Err(Error::Shape(format!(
            "blocking matrix needs at least 2 channels, got {m}"
        )));
    }
    let gamma = a[0];
    let mut b = CMat::zeros(m - 1, m);
    for i in 0..m - 1 {
        b[(i, 0)] = a[i + 1];
        b[(i, i + 1)] = -gamma;
    }
    Ok(b)
}

/// `B^H C_zz^{-1} B`, Hermitian by construction.
pub fn background_precision(b: &CMat, c_zz: &CMat) -> Result<CMat> {
    let inv = linalg::inverse(c_zz)
        .ok_or_else(|| Error::Numerical("background covariance is singular".into()))?;
    let r = b.adjoint() * inv * b;
    Ok((&r + r.adjoint()) * real(0.5))
}

/// Sample covariance `(1/T) V V^H` of the columns of `frames` plus relative diagonal loading.
pub fn covariance(frames: &CMat, loading: f64) -> Result<CMat> {
    let t = frames.ncols();
    if t == 0 {
        return Err(Error::Shape("covariance of an empty frame set".into()));
    }
    let mut c = frames * frames.adjoint() * real(1.0 / t as f64);
    c = (&c + c.adjoint()) * real(0.5);
    linalg::load_diagonal(&mut c, loading);
    Ok(c)
}

/// ATF implied by the orthogonal constraint, `a = C_ee w / (w^H C_ee w)`.
pub fn orthogonal_constraint_atf(c_ee: &CMat, w: &CVec) -> Result<CVec> {
    let cw = c_ee * w;
    let denom = w.dotc(&cw);
    if !(denom.re.is_finite()) || denom.norm() <= f64::MIN_POSITIVE {
        return Err(Error::Numerical(
            "degenerate error covariance: w^H C_ee w vanishes".into(),
        ));
    }
    Ok(cw / denom)
}

/// `e = x - h u` for one bin (`x`: `M x T`, `u`: `1 x T`).
pub fn error_frames(x: &CMat, u: &CMat, h: &CVec) -> CMat {
    x - h * u
}

/// `s^ = w^H e` for one bin, returned as a `1 x T` row.
pub fn extract(w: &CVec, e: &CMat) -> CMat {
    let s = w.adjoint() * e;
    CMat::from_row_slice(1, s.ncols(), s.as_slice())
}

/// Outputs of [`apply_demixer`].
#[derive(Debug, Clone)]
pub struct DemixOutput {
    pub e: Spectrogram,
    pub s_hat: Spectrogram,
    pub z_hat: Spectrogram,
}

/// Runs the sequential estimator: echo subtraction, beamformer and blocking matrix.
pub fn apply_demixer(x: &Spectrogram, u: &Spectrogram, state: &DemixState) -> Result<DemixOutput> {
    let m = x.channels();
    if u.channels() != 1 {
        return Err(Error::Shape(format!("loudspeaker must be mono, has {} channels", u.channels())));
    }
    if x.num_bins() != u.num_bins() || x.frames() != u.frames() {
        return Err(Error::Shape("microphone and loudspeaker spectrograms differ in shape".into()));
    }
    if state.num_bins() != x.num_bins() || state.mics() != m {
        return Err(Error::Shape(format!(
            "state has {} bins x {} channels, signal {} x {}",
            state.num_bins(),
            state.mics(),
            x.num_bins(),
            m
        )));
    }
    let mut e_bins = Vec::with_capacity(x.num_bins());
    let mut s_bins = Vec::with_capacity(x.num_bins());
    let mut z_bins = Vec::with_capacity(x.num_bins());
    for (f, bin) in state.bins.iter().enumerate() {
        let e = error_frames(x.bin(f), u.bin(f), &bin.h);
        s_bins.push(extract(&bin.w, &e));
        z_bins.push(blocking_matrix(&bin.a)? * &e);
        e_bins.push(e);
    }
    let meta = x.meta().copied();
    Ok(DemixOutput {
        e: Spectrogram::from_bins(e_bins)?.with_meta(meta)?,
        s_hat: Spectrogram::from_bins(s_bins)?.with_meta(meta)?,
        z_hat: Spectrogram::from_bins(z_bins)?.with_meta(meta)?,
    })
}

/// Full `(M+1) x (M+1)` demixing matrix of one bin acting on `(x^T, u)^T`,
/// with the echo entries fixed by the cancellation constraints.
pub fn demixing_matrix(bin: &BinState) -> Result<CMat> {
    let m = bin.w.len();
    let b = blocking_matrix(&bin.a)?;
    let mut w = CMat::zeros(m + 1, m + 1);
    for j in 0..m {
        w[(0, j)] = bin.w[j].conj();
    }
    w[(0, m)] = -bin.w.dotc(&bin.h);
    let bh = &b * &bin.h;
    for i in 0..m - 1 {
        for j in 0..m {
            w[(i + 1, j)] = b[(i, j)];
        }
        w[(i + 1, m)] = -bh[i];
    }
    w[(m, m)] = ONE;
    Ok(w)
}

/// Source model behind the score function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScoreModel {
    /// Spherical broadband super-Gaussian: `phi_f = s_f^* / ||s||`.
    #[default]
    Spherical,
    /// Stationary Gaussian: `phi_f = s_f^*`.
    Gaussian,
}

/// Score and its Wirtinger derivatives for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameScore {
    pub phi: Vec<Complex64>,
    /// `d phi_f / d s_f^*`
    pub d_conj: Vec<Complex64>,
    /// `d phi_f / d s_f`
    pub d_plain: Vec<Complex64>,
}

impl ScoreModel {
    /// Evaluates the score over one broadband frame `s[f]`.
    pub fn frame(self, s: &[Complex64]) -> FrameScore {
        match self {
            ScoreModel::Spherical => {
                let r = s.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt().max(SCORE_FLOOR);
                let r3 = 2.0 * r * r * r;
                FrameScore {
                    phi: s.iter().map(|v| v.conj() / r).collect(),
                    d_conj: s.iter().map(|v| real(1.0 / r - v.norm_sqr() / r3)).collect(),
                    d_plain: s.iter().map(|v| -(v.conj() * v.conj()) / r3).collect(),
                }
            }
            ScoreModel::Gaussian => FrameScore {
                phi: s.iter().map(|v| v.conj()).collect(),
                d_conj: vec![ONE; s.len()],
                d_plain: vec![ZERO; s.len()],
            },
        }
    }

    /// Negative log density up to a constant, `2 ||s||` or `sum |s_f|^2`.
    pub fn neg_log_density(self, s: &[Complex64]) -> f64 {
        let sq: f64 = s.iter().map(|v| v.norm_sqr()).sum();
        match self {
            ScoreModel::Spherical => 2.0 * sq.sqrt(),
            ScoreModel::Gaussian => sq,
        }
    }
}

/// Spherical score of one broadband frame.
pub fn score(s_hat_frame: &[Complex64]) -> FrameScore {
    ScoreModel::Spherical.frame(s_hat_frame)
}

/// Per-bin time averages `nu = E[s phi]`, `rho = E[d phi / d s^*]`, `xi = E[d phi / d s]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreStats {
    pub nu: Vec<Complex64>,
    pub rho: Vec<Complex64>,
    pub xi: Vec<Complex64>,
}

/// Score values `phi[f][t]` together with their statistics.
#[derive(Debug, Clone)]
pub struct ScoreField {
    pub phi: Vec<Vec<Complex64>>,
    pub stats: ScoreStats,
}

/// Evaluates the score on per-bin `1 x T` rows of the source estimate.
pub fn score_field(s_hat: &[CMat], model: ScoreModel) -> ScoreField {
    let bins = s_hat.len();
    let frames = s_hat.first().map_or(0, |b| b.ncols());
    let mut phi = vec![vec![ZERO; frames]; bins];
    let mut nu = vec![ZERO; bins];
    let mut rho = vec![ZERO; bins];
    let mut xi = vec![ZERO; bins];
    let mut frame = vec![ZERO; bins];
    for t in 0..frames {
        for (f, row) in s_hat.iter().enumerate() {
            frame[f] = row[(0, t)];
        }
        let sc = model.frame(&frame);
        for f in 0..bins {
            phi[f][t] = sc.phi[f];
            nu[f] += frame[f] * sc.phi[f];
            rho[f] += sc.d_conj[f];
            xi[f] += sc.d_plain[f];
        }
    }
    let inv = real(1.0 / frames.max(1) as f64);
    for f in 0..bins {
        nu[f] *= inv;
        rho[f] *= inv;
        xi[f] *= inv;
    }
    ScoreField {
        phi,
        stats: ScoreStats { nu, rho, xi },
    }
}

/// Spherical-score statistics of a single-channel source estimate.
pub fn score_stats(s_hat: &Spectrogram) -> Result<ScoreStats> {
    if s_hat.channels() != 1 {
        return Err(Error::Shape("score statistics need a single-channel estimate".into()));
    }
    Ok(score_field(s_hat.bins(), ScoreModel::Spherical).stats)
}

/// Diagnostic cost
/// `E[-log p(s^) + sum_f e^H R_f e] - (M - 2) sum_f log |gamma_f|^2`
/// with `-log p` fixed to `2 ||s^||`.
pub fn cost(state: &DemixState, e: &Spectrogram, s_hat: &Spectrogram) -> Result<f64> {
    if e.num_bins() != state.num_bins() || s_hat.num_bins() != state.num_bins() {
        return Err(Error::Shape("cost inputs disagree with the state in bin count".into()));
    }
    cost_terms(s_hat.bins(), &state.bins, ScoreModel::Spherical, |f, bin| {
        background_energy(&bin.r, e.bin(f))
    })
}

/// Cost with the background term `E[e^H R_f e]` supplied per bin.
pub(crate) fn cost_terms(
    s_hat: &[CMat],
    bins: &[BinState],
    model: ScoreModel,
    background: impl Fn(usize, &BinState) -> f64,
) -> Result<f64> {
    let frames = s_hat.first().map_or(0, |b| b.ncols());
    if frames == 0 {
        return Err(Error::Shape("cost over an empty frame set".into()));
    }
    let mics = bins.first().map_or(0, |b| b.w.len());
    let mut frame = vec![ZERO; s_hat.len()];
    let mut source = 0.0;
    for t in 0..frames {
        for (f, row) in s_hat.iter().enumerate() {
            frame[f] = row[(0, t)];
        }
        source += model.neg_log_density(&frame);
    }
    let mut bg = 0.0;
    let mut log_gamma = 0.0;
    for (f, bin) in bins.iter().enumerate() {
        bg += background(f, bin);
        if mics > 2 {
            let g = bin.gamma().norm_sqr();
            if g == 0.0 {
                return Err(Error::Numerical(format!("gamma vanishes in bin {f}")));
            }
            log_gamma += g.ln();
        }
    }
    Ok(source / frames as f64 + bg - (mics as f64 - 2.0) * log_gamma)
}

/// `E[e^H R e]` from the error frames.
pub(crate) fn background_energy(r: &CMat, e: &CMat) -> f64 {
    let re = r * e;
    e.zip_fold(&re, 0.0, |acc, a, b| acc + (a.conj() * b).re) / e.ncols().max(1) as f64
}

/// `E[e^H R e] = tr(R C_ee)` from a cached sample covariance.
pub(crate) fn background_energy_cached(bin: &BinState) -> f64 {
    bin.r.zip_fold(&bin.c_ee, 0.0, |acc, r, c| acc + (r * c.conj()).re)
}

/// True narrowband mixing parameters of a synthetic scene.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingTruth {
    /// Source-of-interest ATF per bin (`M`).
    pub a_soi: Vec<CVec>,
    /// Echo path per bin (`M`).
    pub h: Vec<CVec>,
    /// Background mixing per bin (`M x (M-1)`).
    pub a_bg: Vec<CMat>,
}

/// Overall transmission matrix `V` from `(s, q, u)` to `(s^, z^, u)` for one bin.
pub fn transmission_matrix(bin: &BinState, a_soi: &CVec, a_bg: &CMat, h_true: &CVec) -> Result<CMat> {
    let m = bin.w.len();
    if a_soi.len() != m || h_true.len() != m || a_bg.nrows() != m || a_bg.ncols() != m - 1 {
        return Err(Error::Shape("truth dimensions disagree with the state".into()));
    }
    let mut mixing = CMat::zeros(m + 1, m + 1);
    mixing.view_mut((0, 0), (m, 1)).copy_from(a_soi);
    mixing.view_mut((0, 1), (m, m - 1)).copy_from(a_bg);
    mixing.view_mut((0, m), (m, 1)).copy_from(h_true);
    mixing[(m, m)] = ONE;
    Ok(demixing_matrix(bin)? * mixing)
}

/// Off-block-diagonal energy of a transmission matrix with blocks of size `1, M-1, 1`.
///
/// Each output row (source estimate and every background row) is normalized
/// to unit energy first, so the ratio does not depend on the arbitrary
/// scaling of the blocking matrix rows. Returns the mean over rows.
pub fn off_block_ratio(v: &CMat) -> f64 {
    let n = v.nrows();
    let m = n - 1;
    let block = |i: usize| -> usize {
        if i == 0 {
            0
        } else if i < m {
            1
        } else {
            2
        }
    };
    let mut acc = 0.0;
    for i in 0..m {
        let total: f64 = (0..n).map(|j| v[(i, j)].norm_sqr()).sum();
        if total == 0.0 {
            continue;
        }
        let off: f64 = (0..n)
            .filter(|&j| block(j) != block(i))
            .map(|j| v[(i, j)].norm_sqr())
            .sum();
        acc += off / total;
    }
    acc / m as f64
}

/// Mean off-block ratio over all bins, in dB.
pub fn off_block_db(state: &DemixState, truth: &MixingTruth) -> Result<f64> {
    if truth.a_soi.len() != state.num_bins() {
        return Err(Error::Shape("truth and state differ in bin count".into()));
    }
    let mut acc = 0.0;
    for (f, bin) in state.bins.iter().enumerate() {
        let v = transmission_matrix(bin, &truth.a_soi[f], &truth.a_bg[f], &truth.h[f])?;
        acc += off_block_ratio(&v);
    }
    Ok(10.0 * (acc / state.num_bins() as f64).max(1e-300).log10())
}
