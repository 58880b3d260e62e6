//! Windowed short-time Fourier analysis and overlap-add synthesis.
//!
//! Frames start at multiples of the hop with no leading padding; the last
//! partial frame is zero-padded. Analysis and synthesis use the same window
//! and the synthesis output is normalized by the overlap-add constant, so
//! `synthesize(analyze(x))` reproduces `x` on every sample that is covered by
//! a full set of overlapping frames (see [`FrameSpec::interior`]).

use std::ops::Range;

use nalgebra::DMatrix;
use num_complex::Complex64;
use realfft::RealFftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Window applied at both analysis and synthesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    /// Periodic square-root Hann, `sin(pi n / N)`.
    #[default]
    SqrtHann,
    Rectangular,
}

impl Window {
    pub fn samples(self, len: usize) -> Vec<f64> {
        match self {
            Window::SqrtHann => (0..len)
                .map(|n| (std::f64::consts::PI * n as f64 / len as f64).sin())
                .collect(),
            Window::Rectangular => vec![1.0; len],
        }
    }
}

/// Frame geometry of the transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrameSpec {
    pub frame_len: usize,
    pub hop: usize,
    #[serde(default)]
    pub window: Window,
    pub sample_rate: u32,
}

impl Default for FrameSpec {
    fn default() -> Self {
        Self {
            frame_len: 2048,
            hop: 1024,
            window: Window::SqrtHann,
            sample_rate: 16_000,
        }
    }
}

impl FrameSpec {
    pub fn new(frame_len: usize, hop: usize, window: Window, sample_rate: u32) -> Result<Self> {
        let spec = Self {
            frame_len,
            hop,
            window,
            sample_rate,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Checks the power-of-two length, hop divisibility and the overlap-add condition.
    pub fn validate(&self) -> Result<()> {
        if self.frame_len < 2 || !self.frame_len.is_power_of_two() {
            return Err(Error::Frame(format!(
                "frame length {} is not a power of two",
                self.frame_len
            )));
        }
        if self.hop == 0 || self.frame_len % self.hop != 0 {
            return Err(Error::Frame(format!(
                "hop {} does not divide frame length {}",
                self.hop, self.frame_len
            )));
        }
        if self.sample_rate == 0 {
            return Err(Error::Frame("sample rate must be positive".into()));
        }
        self.overlap_add_gain().map(|_| ())
    }

    /// Constant value of `sum_k w(n + k hop)^2`; errors if it is not constant within 1e-12.
    pub fn overlap_add_gain(&self) -> Result<f64> {
        let win = self.window.samples(self.frame_len);
        let sums: Vec<f64> = (0..self.hop)
            .map(|n| {
                (n..self.frame_len)
                    .step_by(self.hop)
                    .map(|i| win[i] * win[i])
                    .sum()
            })
            .collect();
        let mean = sums.iter().sum::<f64>() / sums.len() as f64;
        let worst = sums.iter().map(|s| (s - mean).abs()).fold(0.0, f64::max);
        if mean <= 0.0 || worst > 1e-12 * mean {
            return Err(Error::Frame(format!(
                "{:?} window with frame {} / hop {} violates constant overlap-add (deviation {:e})",
                self.window, self.frame_len, self.hop, worst
            )));
        }
        Ok(mean)
    }

    pub fn bins(&self) -> usize {
        self.frame_len / 2 + 1
    }

    /// Number of frames covering `len` samples with a zero-padded tail.
    pub fn frames_for(&self, len: usize) -> usize {
        if len <= self.frame_len {
            1
        } else {
            (len - self.frame_len).div_ceil(self.hop) + 1
        }
    }

    /// Samples reconstructed with full overlap by synthesis.
    pub fn interior(&self, len: usize) -> Range<usize> {
        let start = self.frame_len - self.hop;
        let end = len.min(self.frames_for(len) * self.hop);
        start.min(end)..end
    }

    /// Seconds to samples, rounded to the nearest sample.
    pub fn samples_for(&self, seconds: f64) -> usize {
        (seconds * self.sample_rate as f64).round() as usize
    }
}

/// Frame geometry attached to spectrograms that came from (or can go back to) the time domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StftMeta {
    pub spec: FrameSpec,
    pub signal_len: usize,
}

/// Complex STFT tensor indexed by (frequency, frame, channel).
///
/// Stored per frequency bin as a `channels x frames` matrix, which is the
/// layout every per-bin update works on.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    bins: Vec<DMatrix<Complex64>>,
    meta: Option<StftMeta>,
}

impl Spectrogram {
    pub fn zeros(bins: usize, frames: usize, channels: usize) -> Self {
        Self {
            bins: vec![DMatrix::zeros(channels, frames); bins],
            meta: None,
        }
    }

    /// Builds from per-bin `channels x frames` matrices. All bins must agree in shape.
    pub fn from_bins(bins: Vec<DMatrix<Complex64>>) -> Result<Self> {
        let first = bins
            .first()
            .ok_or_else(|| Error::Shape("spectrogram needs at least one bin".into()))?
            .shape();
        if first.0 == 0 {
            return Err(Error::Shape("spectrogram needs at least one channel".into()));
        }
        if let Some((f, b)) = bins.iter().enumerate().find(|(_, b)| b.shape() != first) {
            return Err(Error::Shape(format!(
                "bin {f} has shape {:?}, expected {:?}",
                b.shape(),
                first
            )));
        }
        Ok(Self { bins, meta: None })
    }

    pub fn with_meta(mut self, meta: Option<StftMeta>) -> Result<Self> {
        if let Some(m) = &meta {
            if m.spec.bins() != self.num_bins() || m.spec.frames_for(m.signal_len) != self.frames() {
                return Err(Error::Shape(format!(
                    "{} bins x {} frames inconsistent with frame {} / hop {} over {} samples",
                    self.num_bins(),
                    self.frames(),
                    m.spec.frame_len,
                    m.spec.hop,
                    m.signal_len
                )));
            }
        }
        self.meta = meta;
        Ok(self)
    }

    pub fn meta(&self) -> Option<&StftMeta> {
        self.meta.as_ref()
    }

    pub fn num_bins(&self) -> usize {
        self.bins.len()
    }

    pub fn frames(&self) -> usize {
        self.bins[0].ncols()
    }

    pub fn channels(&self) -> usize {
        self.bins[0].nrows()
    }

    pub fn bin(&self, f: usize) -> &DMatrix<Complex64> {
        &self.bins[f]
    }

    pub fn bin_mut(&mut self, f: usize) -> &mut DMatrix<Complex64> {
        &mut self.bins[f]
    }

    pub fn bins(&self) -> &[DMatrix<Complex64>] {
        &self.bins
    }

    pub fn get(&self, f: usize, t: usize, m: usize) -> Complex64 {
        self.bins[f][(m, t)]
    }

    pub fn set(&mut self, f: usize, t: usize, m: usize, v: Complex64) {
        self.bins[f][(m, t)] = v;
    }

    /// Single-channel copy of channel `m`.
    pub fn channel(&self, m: usize) -> Spectrogram {
        Spectrogram {
            bins: self.bins.iter().map(|b| b.rows(m, 1).into_owned()).collect(),
            meta: self.meta,
        }
    }

    /// Total energy `sum |X|^2` over all entries.
    pub fn energy(&self) -> f64 {
        self.bins.iter().map(|b| b.norm_squared()).sum()
    }

    pub fn same_shape(&self, other: &Spectrogram) -> bool {
        self.num_bins() == other.num_bins()
            && self.frames() == other.frames()
            && self.channels() == other.channels()
    }

    /// Element-wise `self + other`.
    pub fn add(&self, other: &Spectrogram) -> Result<Spectrogram> {
        if !self.same_shape(other) {
            return Err(Error::Shape("cannot add spectrograms of different shape".into()));
        }
        Ok(Spectrogram {
            bins: self.bins.iter().zip(&other.bins).map(|(a, b)| a + b).collect(),
            meta: self.meta.or(other.meta),
        })
    }

    pub fn scaled(&self, gain: f64) -> Spectrogram {
        Spectrogram {
            bins: self.bins.iter().map(|b| b * Complex64::new(gain, 0.0)).collect(),
            meta: self.meta,
        }
    }
}

fn check_channels(signal: &[Vec<f64>]) -> Result<usize> {
    let len = signal
        .first()
        .ok_or_else(|| Error::Shape("signal has no channels".into()))?
        .len();
    if signal.iter().any(|c| c.len() != len) {
        return Err(Error::Shape("channels differ in length".into()));
    }
    Ok(len)
}

/// Forward transform of a multichannel signal (`signal[m][n]`).
pub fn analyze(signal: &[Vec<f64>], spec: &FrameSpec) -> Result<Spectrogram> {
    spec.validate()?;
    let len = check_channels(signal)?;
    if len < spec.frame_len {
        return Err(Error::SignalTooShort {
            len,
            frame_len: spec.frame_len,
        });
    }
    let n = spec.frame_len;
    let frames = spec.frames_for(len);
    let window = spec.window.samples(n);
    let fft = RealFftPlanner::<f64>::new().plan_fft_forward(n);
    let mut buf = fft.make_input_vec();
    let mut out = fft.make_output_vec();
    let mut scratch = fft.make_scratch_vec();

    let mut spec_out = Spectrogram::zeros(spec.bins(), frames, signal.len());
    for (m, channel) in signal.iter().enumerate() {
        for t in 0..frames {
            let start = t * spec.hop;
            for (i, b) in buf.iter_mut().enumerate() {
                *b = channel.get(start + i).copied().unwrap_or(0.0) * window[i];
            }
            fft.process_with_scratch(&mut buf, &mut out, &mut scratch)
                .map_err(|e| Error::Numerical(e.to_string()))?;
            for (f, v) in out.iter().enumerate() {
                spec_out.bins[f][(m, t)] = *v;
            }
        }
    }
    spec_out.meta = Some(StftMeta {
        spec: *spec,
        signal_len: len,
    });
    Ok(spec_out)
}

/// Overlap-add inverse of [`analyze`]; returns `signal[m][n]` trimmed to the original length.
///
/// The imaginary parts of the DC and Nyquist bins are ignored, as for any
/// real-signal spectrum.
pub fn synthesize(spectrogram: &Spectrogram) -> Result<Vec<Vec<f64>>> {
    let meta = spectrogram
        .meta
        .ok_or_else(|| Error::Shape("spectrogram carries no frame geometry".into()))?;
    let spec = meta.spec;
    spec.validate()?;
    if spectrogram.num_bins() != spec.bins() || spectrogram.frames() != spec.frames_for(meta.signal_len)
    {
        return Err(Error::Shape(format!(
            "{} bins x {} frames inconsistent with frame {} / hop {}",
            spectrogram.num_bins(),
            spectrogram.frames(),
            spec.frame_len,
            spec.hop
        )));
    }
    let n = spec.frame_len;
    let frames = spectrogram.frames();
    let window = spec.window.samples(n);
    let norm = 1.0 / (n as f64 * spec.overlap_add_gain()?);
    let ifft = RealFftPlanner::<f64>::new().plan_fft_inverse(n);
    let mut inp = ifft.make_input_vec();
    let mut out = ifft.make_output_vec();
    let mut scratch = ifft.make_scratch_vec();

    let padded = (frames - 1) * spec.hop + n;
    let mut signal = vec![vec![0.0; padded]; spectrogram.channels()];
    for (m, channel) in signal.iter_mut().enumerate() {
        for t in 0..frames {
            for (f, v) in inp.iter_mut().enumerate() {
                *v = spectrogram.bins[f][(m, t)];
            }
            inp[0].im = 0.0;
            inp[n / 2].im = 0.0;
            ifft.process_with_scratch(&mut inp, &mut out, &mut scratch)
                .map_err(|e| Error::Numerical(e.to_string()))?;
            let start = t * spec.hop;
            for (i, v) in out.iter().enumerate() {
                channel[start + i] += v * window[i] * norm;
            }
        }
        channel.truncate(meta.signal_len);
    }
    Ok(signal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(channels: usize, len: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..channels)
            .map(|_| (0..len).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    fn small() -> FrameSpec {
        FrameSpec::new(64, 32, Window::SqrtHann, 16_000).unwrap()
    }

    #[test]
    fn frame_count_matches_enumeration() {
        let spec = FrameSpec::default();
        let len = 5 * 16_000;
        // every frame start s = k*hop with s < len - frame + hop, i.e. until the tail is covered
        let mut starts = 0;
        let mut s = 0;
        loop {
            starts += 1;
            if s + spec.frame_len >= len {
                break;
            }
            s += spec.hop;
        }
        assert_eq!(spec.frames_for(len), starts);
        assert_eq!(spec.frames_for(len), 78);
        assert_eq!(spec.bins(), 1025);
        let x = noise(4, len, 1);
        let s = analyze(&x, &spec).unwrap();
        assert_eq!((s.num_bins(), s.frames(), s.channels()), (1025, 78, 4));
    }

    #[test]
    fn zero_in_zero_out() {
        let spec = small();
        let x = vec![vec![0.0; 300]; 2];
        let s = analyze(&x, &spec).unwrap();
        assert_eq!(s.energy(), 0.0);
        let y = synthesize(&s).unwrap();
        assert!(y.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn bin_centered_sinusoid_with_rectangular_window() {
        let spec = FrameSpec::new(32, 32, Window::Rectangular, 8000).unwrap();
        let k = 5;
        let x: Vec<f64> = (0..96)
            .map(|n| (2.0 * std::f64::consts::PI * k as f64 * n as f64 / 32.0).cos())
            .collect();
        let s = analyze(&[x], &spec).unwrap();
        for t in 0..s.frames() {
            for f in 0..s.num_bins() {
                let mag = s.get(f, t, 0).norm();
                if f == k {
                    assert!((mag - 16.0).abs() < 1e-9);
                } else {
                    assert!(mag < 1e-9, "leak at bin {f}: {mag}");
                }
            }
        }
    }

    #[test]
    fn round_trip_interior() {
        let spec = small();
        let x = noise(3, 1000, 7);
        let y = synthesize(&analyze(&x, &spec).unwrap()).unwrap();
        let r = spec.interior(1000);
        assert!(r.len() > 900);
        for (a, b) in x.iter().zip(&y) {
            let num: f64 = r.clone().map(|n| (a[n] - b[n]).powi(2)).sum();
            let den: f64 = r.clone().map(|n| a[n] * a[n]).sum();
            assert!((num / den).sqrt() < 1e-10);
        }
    }

    #[test]
    fn single_bin_synthesizes_windowed_cosine() {
        let spec = small();
        let n = spec.frame_len;
        let mut s = Spectrogram::zeros(spec.bins(), 1, 1)
            .with_meta(Some(StftMeta {
                spec,
                signal_len: n,
            }))
            .unwrap();
        let k = 3;
        s.set(k, 0, 0, Complex64::new(1.0, 0.0));
        let y = synthesize(&s).unwrap();
        let win = spec.window.samples(n);
        let gain = spec.overlap_add_gain().unwrap();
        for i in 0..n {
            // inverse DFT of the Hermitian pair (k, n-k), each of unit weight
            let mut acc = Complex64::new(0.0, 0.0);
            for bin in [k, n - k] {
                acc += Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * (bin * i) as f64 / n as f64);
            }
            let expect = acc.re / n as f64 * win[i] / gain;
            assert!((y[0][i] - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(FrameSpec::new(100, 50, Window::SqrtHann, 16_000).is_err());
        assert!(FrameSpec::new(64, 24, Window::SqrtHann, 16_000).is_err());
        // sqrt-Hann without overlap is not overlap-add constant
        assert!(FrameSpec::new(64, 64, Window::SqrtHann, 16_000).is_err());
        assert!(FrameSpec::new(64, 16, Window::SqrtHann, 16_000).is_ok());
        assert!(matches!(
            analyze(&[vec![0.0; 10]], &small()),
            Err(Error::SignalTooShort { .. })
        ));
        assert!(analyze(&[vec![0.0; 100], vec![0.0; 99]], &small()).is_err());
    }

    #[test]
    fn synthesize_rejects_inconsistent_shape() {
        let s = Spectrogram::zeros(10, 3, 1);
        assert!(synthesize(&s).is_err());
        let meta = StftMeta {
            spec: small(),
            signal_len: 200,
        };
        assert!(Spectrogram::zeros(10, 3, 1).with_meta(Some(meta)).is_err());
    }
}
