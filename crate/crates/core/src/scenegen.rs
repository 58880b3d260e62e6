//! Synthetic test scenes: model-matched narrowband mixtures with ground truth,
//! and convolutive mixtures rendered from externally supplied impulse responses.
//!
//! Power ratios (source-to-echo, interference-to-echo, echo-to-noise) are
//! measured at the first microphone over the whole signal.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use realfft::RealFftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMat, CVec};
use crate::model::MixingTruth;
use crate::stft::{self, FrameSpec, Spectrogram, StftMeta};
use crate::wav;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SceneMode {
    #[default]
    Narrowband,
    Convolutive,
}

impl std::str::FromStr for SceneMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "narrowband" => Ok(SceneMode::Narrowband),
            "convolutive" => Ok(SceneMode::Convolutive),
            other => Err(Error::Config(format!("unknown scene mode '{other}'"))),
        }
    }
}

/// Which components are rendered into the mixture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Components {
    pub soi: bool,
    pub echo: bool,
    pub interference: bool,
    pub noise: bool,
}

impl Default for Components {
    fn default() -> Self {
        Self {
            soi: true,
            echo: true,
            interference: true,
            noise: true,
        }
    }
}

/// Parameters of one acoustic scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub mics: usize,
    /// Source-of-interest to echo power ratio.
    pub ser_db: f64,
    /// Interference to echo power ratio.
    pub ier_db: f64,
    /// Echo to sensor-noise power ratio.
    pub enr_db: f64,
    pub seed: u64,
    pub duration_s: f64,
    #[serde(default)]
    pub mode: SceneMode,
    /// Source signals for convolutive scenes: source of interest, loudspeaker, then interferers.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub source_paths: Vec<PathBuf>,
    /// One `M`-channel impulse-response file per entry of `source_paths`, in the same order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rir_paths: Vec<PathBuf>,
    #[serde(default)]
    pub components: Components,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            mics: 4,
            ser_db: 7.5,
            ier_db: 2.5,
            enr_db: 30.0,
            seed: 0,
            duration_s: 5.0,
            mode: SceneMode::Narrowband,
            source_paths: Vec::new(),
            rir_paths: Vec::new(),
            components: Components::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mics < 2 {
            return Err(Error::Config(format!("need at least 2 microphones, got {}", self.mics)));
        }
        if [self.ser_db, self.ier_db, self.enr_db].iter().any(|v| v.is_nan()) {
            return Err(Error::Config("power ratios must not be NaN".into()));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::Config(format!("duration {} s must be positive", self.duration_s)));
        }
        Ok(())
    }
}

/// Sampling ranges for [`sample_scenario`], in dB.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioRanges {
    pub mics: usize,
    pub duration_s: f64,
    pub mode: SceneMode,
    pub ser_db: (f64, f64),
    pub ier_db: (f64, f64),
    pub enr_db: (f64, f64),
}

impl Default for ScenarioRanges {
    fn default() -> Self {
        Self {
            mics: 4,
            duration_s: 5.0,
            mode: SceneMode::Narrowband,
            ser_db: (5.0, 10.0),
            ier_db: (0.0, 5.0),
            enr_db: (25.0, 35.0),
        }
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// Draws power ratios uniformly inside `ranges` and a render seed.
pub fn sample_scenario<R: Rng + ?Sized>(rng: &mut R, ranges: &ScenarioRanges) -> ScenarioConfig {
    let ser_db = uniform(rng, ranges.ser_db);
    let ier_db = uniform(rng, ranges.ier_db);
    let enr_db = uniform(rng, ranges.enr_db);
    ScenarioConfig {
        mics: ranges.mics,
        ser_db,
        ier_db,
        enr_db,
        seed: rng.random(),
        duration_s: ranges.duration_s,
        mode: ranges.mode,
        ..ScenarioConfig::default()
    }
}

fn circular_gaussian<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> CMat {
    DMatrix::from_fn(rows, cols, |_, _| circular_gaussian(rng))
}

/// Unit-power spherical source: an exponential per-frame radius scaling
/// i.i.d. circular Gaussian bins, so all bins of a frame are active together.
fn spherical_source<R: Rng + ?Sized>(rng: &mut R, bins: usize, frames: usize) -> Vec<CMat> {
    let mut out = vec![CMat::zeros(1, frames); bins];
    for t in 0..frames {
        let radius: f64 = Exp1.sample(rng);
        let g = radius * std::f64::consts::FRAC_1_SQRT_2;
        for bin in out.iter_mut() {
            bin[(0, t)] = circular_gaussian(rng) * g;
        }
    }
    out
}

/// STFT-domain source signals of a narrowband scene.
#[derive(Debug, Clone)]
pub struct Sources {
    /// Source of interest, `1 x T` per bin.
    pub s: Spectrogram,
    /// Background point sources, `(M-1) x T` per bin.
    pub q: Spectrogram,
    /// Loudspeaker, `1 x T` per bin.
    pub u: Spectrogram,
}

/// Draws a spherical super-Gaussian source of interest, circular Gaussian
/// background sources and an independent spherical loudspeaker signal, all of unit power.
pub fn synth_sources<R: Rng + ?Sized>(rng: &mut R, bins: usize, frames: usize, background: usize) -> Result<Sources> {
    if bins == 0 || frames == 0 || background == 0 {
        return Err(Error::Shape("sources need at least one bin, frame and background channel".into()));
    }
    let s = Spectrogram::from_bins(spherical_source(rng, bins, frames))?;
    let q = Spectrogram::from_bins((0..bins).map(|_| gaussian_matrix(rng, background, frames)).collect())?;
    let u = Spectrogram::from_bins(spherical_source(rng, bins, frames))?;
    Ok(Sources { s, q, u })
}

/// Linear gains applied to the unscaled component images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gains {
    pub soi: f64,
    pub echo: f64,
    pub interference: f64,
    pub noise: f64,
}

impl Gains {
    fn from_powers(cfg: &ScenarioConfig, soi: f64, echo: f64, intf: f64, noise: f64) -> Self {
        let ratio = |num_db: f64, reference: f64, raw: f64, on: bool| {
            if !on || raw <= 0.0 {
                0.0
            } else {
                (10f64.powf(num_db / 10.0) * reference / raw).sqrt()
            }
        };
        let on = cfg.components;
        Gains {
            soi: ratio(cfg.ser_db, echo, soi, on.soi),
            echo: if on.echo { 1.0 } else { 0.0 },
            interference: ratio(cfg.ier_db, echo, intf, on.interference),
            noise: ratio(-cfg.enr_db, echo, noise, on.noise),
        }
    }
}

/// The four additive components of a mixture.
#[derive(Debug, Clone)]
pub struct Images<T> {
    pub soi: T,
    pub echo: T,
    pub interference: T,
    pub noise: T,
}

impl<T> Images<T> {
    pub fn iter(&self) -> impl Iterator<Item = (&'static str, &T)> {
        [
            ("soi", &self.soi),
            ("echo", &self.echo),
            ("interference", &self.interference),
            ("noise", &self.noise),
        ]
        .into_iter()
    }
}

/// Time-domain view of a scene (`signal[channel][sample]`).
#[derive(Debug, Clone)]
pub struct TimeSignals {
    pub x: Vec<Vec<f64>>,
    pub u: Vec<f64>,
    pub images: Images<Vec<Vec<f64>>>,
}

/// A mixture with its ground-truth component images.
#[derive(Debug, Clone)]
pub struct Scene {
    pub config: ScenarioConfig,
    pub x: Spectrogram,
    pub u: Spectrogram,
    pub images: Images<Spectrogram>,
    pub gains: Gains,
    /// Present for narrowband scenes only.
    pub truth: Option<MixingTruth>,
    /// Present for scenes rendered in the time domain.
    pub time: Option<TimeSignals>,
}

fn mic1_power(s: &Spectrogram) -> f64 {
    s.bins().iter().map(|b| b.row(0).norm_squared()).sum()
}

/// Multiplies per-bin mixing `mix[f]` (`M x K`) with sources (`K x T`).
fn mix_bins(mix: &[CMat], src: &Spectrogram) -> Result<Spectrogram> {
    Spectrogram::from_bins(mix.iter().zip(src.bins()).map(|(a, s)| a * s).collect())
}

/// Renders images `soi = a s`, `echo = H u`, `interference = A_bg q` plus
/// spatially white sensor noise, with i.i.d. circular Gaussian ATFs per bin.
pub fn render_narrowband<R: Rng + ?Sized>(cfg: &ScenarioConfig, sources: &Sources, rng: &mut R) -> Result<Scene> {
    cfg.validate()?;
    let m = cfg.mics;
    let bins = sources.s.num_bins();
    let frames = sources.s.frames();
    if sources.q.channels() != m - 1 || sources.u.num_bins() != bins || sources.q.num_bins() != bins {
        return Err(Error::Shape("sources disagree with the microphone count or each other".into()));
    }
    let a_soi: Vec<CVec> = (0..bins).map(|_| gaussian_matrix(rng, m, 1).column(0).into_owned()).collect();
    let h: Vec<CVec> = (0..bins).map(|_| gaussian_matrix(rng, m, 1).column(0).into_owned()).collect();
    let a_bg: Vec<CMat> = (0..bins).map(|_| gaussian_matrix(rng, m, m - 1)).collect();
    let noise = Spectrogram::from_bins((0..bins).map(|_| gaussian_matrix(rng, m, frames)).collect())?;

    let as_mats = |v: &[CVec]| -> Vec<CMat> { v.iter().map(|c| CMat::from_column_slice(m, 1, c.as_slice())).collect() };
    let raw_soi = mic1_power(&mix_bins(&as_mats(&a_soi), &sources.s)?);
    let raw_echo = mic1_power(&mix_bins(&as_mats(&h), &sources.u)?);
    let raw_intf = mic1_power(&mix_bins(&a_bg, &sources.q)?);
    let gains = Gains::from_powers(cfg, raw_soi, raw_echo, raw_intf, mic1_power(&noise));

    let scale = |g: f64| Complex64::new(g, 0.0);
    let truth = MixingTruth {
        a_soi: a_soi.iter().map(|a| a * scale(gains.soi)).collect(),
        h: h.iter().map(|a| a * scale(gains.echo)).collect(),
        a_bg: a_bg.iter().map(|a| a * scale(gains.interference)).collect(),
    };
    let images = Images {
        soi: mix_bins(&as_mats(&truth.a_soi), &sources.s)?,
        echo: mix_bins(&as_mats(&truth.h), &sources.u)?,
        interference: mix_bins(&truth.a_bg, &sources.q)?,
        noise: noise.scaled(gains.noise),
    };
    let x = images.soi.add(&images.echo)?.add(&images.interference)?.add(&images.noise)?;
    Ok(Scene {
        config: cfg.clone(),
        x,
        u: sources.u.clone(),
        images,
        gains,
        truth: Some(truth),
        time: None,
    })
}

/// Narrowband scene with explicit bin and frame counts, seeded from `cfg.seed`.
pub fn narrowband_scene(cfg: &ScenarioConfig, bins: usize, frames: usize) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sources = synth_sources(&mut rng, bins, frames, cfg.mics - 1)?;
    render_narrowband(cfg, &sources, &mut rng)
}

/// Narrowband scene shaped like the STFT of `cfg.duration_s` seconds under `frame`,
/// so that it can be synthesized to the time domain.
pub fn narrowband_scene_for(cfg: &ScenarioConfig, frame: &FrameSpec) -> Result<Scene> {
    frame.validate()?;
    let len = frame.samples_for(cfg.duration_s);
    if len < frame.frame_len {
        return Err(Error::Config(format!(
            "{} s is shorter than one frame",
            cfg.duration_s
        )));
    }
    let meta = Some(StftMeta {
        spec: *frame,
        signal_len: len,
    });
    let mut scene = narrowband_scene(cfg, frame.bins(), frame.frames_for(len))?;
    for s in [
        &mut scene.x,
        &mut scene.u,
        &mut scene.images.soi,
        &mut scene.images.echo,
        &mut scene.images.interference,
        &mut scene.images.noise,
    ] {
        *s = std::mem::replace(s, Spectrogram::zeros(1, 1, 1)).with_meta(meta)?;
    }
    Ok(scene)
}

impl Scene {
    /// Time-domain signals, synthesizing narrowband spectrograms when needed.
    pub fn time_signals(&self) -> Result<TimeSignals> {
        if let Some(t) = &self.time {
            return Ok(t.clone());
        }
        Ok(TimeSignals {
            x: stft::synthesize(&self.x)?,
            u: stft::synthesize(&self.u)?.remove(0),
            images: Images {
                soi: stft::synthesize(&self.images.soi)?,
                echo: stft::synthesize(&self.images.echo)?,
                interference: stft::synthesize(&self.images.interference)?,
                noise: stft::synthesize(&self.images.noise)?,
            },
        })
    }
}

/// Linear convolution of `a` with `b`, truncated to `out_len` samples.
pub fn fft_convolve(a: &[f64], b: &[f64], out_len: usize) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return vec![0.0; out_len];
    }
    let n = (a.len() + b.len() - 1).next_power_of_two();
    let mut planner = RealFftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let spectrum = |x: &[f64]| {
        let mut buf = fwd.make_input_vec();
        buf[..x.len()].copy_from_slice(x);
        let mut out = fwd.make_output_vec();
        fwd.process(&mut buf, &mut out).expect("buffer sizes come from the plan");
        out
    };
    let fa = spectrum(a);
    let fb = spectrum(b);
    let mut prod: Vec<Complex64> = fa.iter().zip(&fb).map(|(x, y)| x * y).collect();
    prod[0].im = 0.0;
    prod[n / 2].im = 0.0;
    let mut out = inv.make_output_vec();
    inv.process(&mut prod, &mut out).expect("buffer sizes come from the plan");
    out.truncate(out_len);
    out.resize(out_len, 0.0);
    out.iter_mut().for_each(|v| *v /= n as f64);
    out
}

/// Renders a convolutive scene in the time domain.
///
/// `sources` holds the source of interest, the loudspeaker and any number of
/// interferers; `rirs[k][m]` is the impulse response from source `k` to mic `m`.
/// Sensor noise is white Gaussian and drawn from `cfg.seed`.
pub fn render_convolutive(
    cfg: &ScenarioConfig,
    frame: &FrameSpec,
    sources: &[Vec<f64>],
    rirs: &[Vec<Vec<f64>>],
) -> Result<Scene> {
    cfg.validate()?;
    frame.validate()?;
    let m = cfg.mics;
    if sources.len() < 2 {
        return Err(Error::Config("need at least a source of interest and a loudspeaker signal".into()));
    }
    if rirs.len() != sources.len() {
        return Err(Error::Config(format!(
            "{} impulse-response sets for {} sources",
            rirs.len(),
            sources.len()
        )));
    }
    if let Some(k) = rirs.iter().position(|r| r.len() != m) {
        return Err(Error::Config(format!(
            "impulse-response set {k} has {} channels, expected {m}",
            rirs[k].len()
        )));
    }
    let len = sources
        .iter()
        .map(Vec::len)
        .min()
        .unwrap_or(0)
        .min(frame.samples_for(cfg.duration_s));
    if len < frame.frame_len {
        return Err(Error::SignalTooShort {
            len,
            frame_len: frame.frame_len,
        });
    }
    let image = |k: usize| -> Vec<Vec<f64>> {
        rirs[k]
            .iter()
            .map(|rir| fft_convolve(&sources[k][..len], rir, len))
            .collect()
    };
    let raw_soi = image(0);
    let raw_echo = image(1);
    let mut raw_intf = vec![vec![0.0; len]; m];
    for k in 2..sources.len() {
        for (acc, ch) in raw_intf.iter_mut().zip(image(k)) {
            acc.iter_mut().zip(ch).for_each(|(a, v)| *a += v);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let raw_noise: Vec<Vec<f64>> = (0..m)
        .map(|_| (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();

    let p1 = |x: &[Vec<f64>]| x[0].iter().map(|v| v * v).sum::<f64>();
    let gains = Gains::from_powers(cfg, p1(&raw_soi), p1(&raw_echo), p1(&raw_intf), p1(&raw_noise));
    let scale = |x: Vec<Vec<f64>>, g: f64| -> Vec<Vec<f64>> {
        x.into_iter().map(|c| c.into_iter().map(|v| v * g).collect()).collect()
    };
    let images = Images {
        soi: scale(raw_soi, gains.soi),
        echo: scale(raw_echo, gains.echo),
        interference: scale(raw_intf, gains.interference),
        noise: scale(raw_noise, gains.noise),
    };
    let x: Vec<Vec<f64>> = (0..m)
        .map(|c| {
            (0..len)
                .map(|n| images.soi[c][n] + images.echo[c][n] + images.interference[c][n] + images.noise[c][n])
                .collect()
        })
        .collect();
    let u = sources[1][..len].to_vec();

    let spec_images = Images {
        soi: stft::analyze(&images.soi, frame)?,
        echo: stft::analyze(&images.echo, frame)?,
        interference: stft::analyze(&images.interference, frame)?,
        noise: stft::analyze(&images.noise, frame)?,
    };
    Ok(Scene {
        config: cfg.clone(),
        x: stft::analyze(&x, frame)?,
        u: stft::analyze(std::slice::from_ref(&u), frame)?,
        images: spec_images,
        gains,
        truth: None,
        time: Some(TimeSignals { x, u, images }),
    })
}

/// Loads `cfg.source_paths` and `cfg.rir_paths` and renders a convolutive scene.
pub fn load_convolutive(cfg: &ScenarioConfig, frame: &FrameSpec) -> Result<Scene> {
    if cfg.source_paths.len() != cfg.rir_paths.len() {
        return Err(Error::Config(format!(
            "{} source files but {} impulse-response files",
            cfg.source_paths.len(),
            cfg.rir_paths.len()
        )));
    }
    let load = |p: &Path| -> Result<Vec<Vec<f64>>> {
        let (sig, sr) = wav::read_wav(p)?;
        if sr != frame.sample_rate {
            return Err(Error::Config(format!(
                "{} has sample rate {sr}, expected {}",
                p.display(),
                frame.sample_rate
            )));
        }
        Ok(sig)
    };
    let mut sources = Vec::new();
    for p in &cfg.source_paths {
        let mut sig = load(p)?;
        if sig.len() != 1 {
            return Err(Error::Config(format!("{} must be mono", p.display())));
        }
        sources.push(sig.remove(0));
    }
    let rirs = cfg.rir_paths.iter().map(|p| load(p)).collect::<Result<Vec<_>>>()?;
    render_convolutive(cfg, frame, &sources, &rirs)
}

/// Scene for `cfg` under `frame`, dispatching on the scene mode.
pub fn build_scene(cfg: &ScenarioConfig, frame: &FrameSpec) -> Result<Scene> {
    match cfg.mode {
        SceneMode::Narrowband => narrowband_scene_for(cfg, frame),
        SceneMode::Convolutive => load_convolutive(cfg, frame),
    }
}
