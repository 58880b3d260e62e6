use num_complex::Complex64;
use rayon::prelude::*;

use super::updates::{self, Skip};
use super::{Algorithm, IterationRecord, RunConfig, RunDiagnostics};
use crate::error::{Error, Result};
use crate::linalg::{real, CMat, CVec, ONE};
use crate::model::{self, cost_terms, score_field, DemixState, MixingTruth, ScoreField, ScoreModel};
use crate::stft::Spectrogram;

/// Result of an estimation run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    /// Backprojected source estimate.
    pub s_hat: Spectrogram,
    /// Echo canceller output.
    pub e: Spectrogram,
    pub state: DemixState,
    /// Backprojection scale per bin.
    pub scales: Vec<Complex64>,
    pub diagnostics: RunDiagnostics,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EchoMode {
    Joint,
    Bnlms,
    Off,
}

struct Engine<'a> {
    x: &'a [CMat],
    u: Option<&'a [CMat]>,
    loading: f64,
    score: ScoreModel,
    state: DemixState,
    e: Vec<CMat>,
    s: Vec<CMat>,
    field: ScoreField,
    dead: Vec<bool>,
}

impl<'a> Engine<'a> {
    fn new(x: &'a Spectrogram, u: Option<&'a Spectrogram>, cfg: &RunConfig) -> Self {
        let state = DemixState::new(x.num_bins(), x.channels());
        let e = x.bins().to_vec();
        let s: Vec<CMat> = e.iter().map(|b| b.rows(0, 1).into_owned()).collect();
        let field = score_field(&s, cfg.score);
        let mut eng = Engine {
            x: x.bins(),
            u: u.map(|u| u.bins()),
            loading: cfg.loading,
            score: cfg.score,
            state,
            e,
            s,
            field,
            dead: vec![false; x.num_bins()],
        };
        eng.refresh_stats();
        eng.normalize();
        eng.refresh_stats();
        eng.refresh_output();
        eng
    }

    fn refresh_errors(&mut self) {
        let Some(u) = self.u else { return };
        let x = self.x;
        self.e
            .par_iter_mut()
            .zip(self.state.bins.par_iter())
            .enumerate()
            .for_each(|(f, (e, bin))| *e = model::error_frames(&x[f], &u[f], &bin.h));
    }

    fn refresh_stats(&mut self) {
        let loading = self.loading;
        let e = &self.e;
        self.dead = self
            .state
            .bins
            .par_iter_mut()
            .enumerate()
            .map(|(f, bin)| bin.refresh(&e[f], loading).is_err())
            .collect();
    }

    fn refresh_constraints(&mut self) {
        let loading = self.loading;
        let dead = &self.dead;
        let failed: Vec<bool> = self
            .state
            .bins
            .par_iter_mut()
            .enumerate()
            .map(|(f, bin)| dead[f] || bin.refresh_constraint(loading).is_err())
            .collect();
        self.dead = failed;
    }

    fn refresh_output(&mut self) {
        self.s = self
            .state
            .bins
            .par_iter()
            .zip(self.e.par_iter())
            .map(|(bin, e)| model::extract(&bin.w, e))
            .collect();
        self.field = score_field(&self.s, self.score);
    }

    fn normalize(&mut self) -> usize {
        let dead = &self.dead;
        self.state
            .bins
            .par_iter_mut()
            .enumerate()
            .filter(|(f, _)| !dead[*f])
            .map(|(_, bin)| usize::from(updates::normalize_w(bin).is_err()))
            .sum()
    }

    /// Applies a per-bin update to every live bin; returns the step norm and skip count.
    fn step<F>(&mut self, update: F) -> (f64, usize)
    where
        F: Fn(usize, &mut model::BinState, &CMat, &ScoreField) -> std::result::Result<CVec, Skip> + Sync,
    {
        let (e, field, dead) = (&self.e, &self.field, &self.dead);
        let results: Vec<std::result::Result<f64, ()>> = self
            .state
            .bins
            .par_iter_mut()
            .enumerate()
            .map(|(f, bin)| {
                if dead[f] {
                    return Err(());
                }
                update(f, bin, &e[f], field).map(|d| d.norm_squared()).map_err(|_| ())
            })
            .collect();
        let norm = results.iter().filter_map(|r| r.as_ref().ok()).sum::<f64>().sqrt();
        (norm, results.iter().filter(|r| r.is_err()).count())
    }

    fn echo_step(&mut self, mode: EchoMode) -> (f64, usize) {
        let Some(u) = self.u else { return (0.0, 0) };
        let loading = self.loading;
        let out = match mode {
            EchoMode::Off => return (0.0, 0),
            EchoMode::Joint => self.step(|f, bin, e, field| {
                let st = &field.stats;
                updates::update_aec(bin, e, &u[f], &field.phi[f], st.nu[f], st.rho[f], loading)
            }),
            EchoMode::Bnlms => self.step(|f, bin, e, _| {
                let p = updates::mean_power(&u[f]);
                if p <= updates::DEAD_BIN {
                    return Err(Skip::Dead);
                }
                let step = updates::cross_correlation(e, &u[f]) / real(p);
                bin.h += &step;
                Ok(step)
            }),
        };
        self.refresh_errors();
        self.refresh_stats();
        self.refresh_output();
        out
    }

    fn extraction_step(&mut self) -> (f64, usize) {
        let loading = self.loading;
        let out = self.step(|f, bin, e, field| {
            let st = &field.stats;
            updates::update_bse(bin, e, &field.phi[f], st.nu[f], st.rho[f], loading)
        });
        let failed = self.normalize();
        // e is unchanged, so only the constraint-dependent statistics move
        self.refresh_constraints();
        self.refresh_output();
        (out.0, out.1 + failed)
    }

    fn record(&self, iteration: usize, dh: (f64, usize), dw: (f64, usize), truth: Option<&MixingTruth>) -> IterationRecord {
        let n = self.field.stats.nu.len().max(1) as f64;
        IterationRecord {
            iteration,
            cost: cost_terms(&self.s, &self.state.bins, self.score, |_, bin| model::background_energy_cached(bin)).ok(),
            delta_h: dh.0,
            delta_w: dw.0,
            nu_mean: self.field.stats.nu.iter().map(|v| v.norm()).sum::<f64>() / n,
            rho_mean: self.field.stats.rho.iter().map(|v| v.norm()).sum::<f64>() / n,
            off_block_db: truth.and_then(|t| model::off_block_db(&self.state, t).ok()),
            skipped_aec: dh.1,
            skipped_bse: dw.1,
        }
    }

    fn finish(self, reference: usize, algorithm: Algorithm, records: Vec<IterationRecord>, meta_src: &Spectrogram) -> Result<RunOutput> {
        let meta = meta_src.meta().copied();
        let e = Spectrogram::from_bins(self.e)?.with_meta(meta)?;
        let s = Spectrogram::from_bins(self.s)?.with_meta(meta)?;
        let (s_hat, scales) = updates::backproject(&s, &e, reference)?;
        Ok(RunOutput {
            s_hat,
            e,
            state: self.state,
            scales,
            diagnostics: RunDiagnostics {
                algorithm: Some(algorithm),
                iterations: records,
            },
        })
    }
}

fn check_inputs(x: &Spectrogram, u: Option<&Spectrogram>, cfg: &RunConfig, min_mics: usize) -> Result<()> {
    if x.channels() < min_mics {
        return Err(Error::Shape(format!(
            "{} needs at least {min_mics} microphones, got {}",
            cfg.algorithm,
            x.channels()
        )));
    }
    if let Some(u) = u {
        if u.channels() != 1 {
            return Err(Error::Shape(format!("loudspeaker must be mono, has {} channels", u.channels())));
        }
        if u.num_bins() != x.num_bins() || u.frames() != x.frames() {
            return Err(Error::Shape(format!(
                "loudspeaker is {} x {}, microphones {} x {}",
                u.num_bins(),
                u.frames(),
                x.num_bins(),
                x.frames()
            )));
        }
    }
    cfg.validate(x.channels())
}

fn iterate(
    x: &Spectrogram,
    u: Option<&Spectrogram>,
    cfg: &RunConfig,
    mode: EchoMode,
    truth: Option<&MixingTruth>,
) -> Result<RunOutput> {
    let mut eng = Engine::new(x, u, cfg);
    let mut records = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let dh = eng.echo_step(mode);
        let dw = eng.extraction_step();
        records.push(eng.record(it + 1, dh, dw, truth));
    }
    eng.finish(cfg.reference_channel - 1, cfg.algorithm, records, x)
}

/// Runs `cfg.algorithm` on microphone spectrogram `x` and loudspeaker `u`.
///
/// With `truth`, each iteration records the off-block transmission energy.
pub fn run(x: &Spectrogram, u: &Spectrogram, cfg: &RunConfig, truth: Option<&MixingTruth>) -> Result<RunOutput> {
    match cfg.algorithm {
        Algorithm::Joint => {
            check_inputs(x, Some(u), cfg, 2)?;
            iterate(x, Some(u), cfg, EchoMode::Joint, truth)
        }
        Algorithm::BnlmsIve => {
            check_inputs(x, Some(u), cfg, 2)?;
            iterate(x, Some(u), cfg, EchoMode::Bnlms, truth)
        }
        Algorithm::IveOnly => {
            check_inputs(x, None, cfg, 2)?;
            iterate(x, None, cfg, EchoMode::Off, truth)
        }
        Algorithm::LsAec => {
            check_inputs(x, Some(u), cfg, 1)?;
            let h = least_squares_paths(x, u)?;
            pass_through(x, Some((u, h)), cfg)
        }
        Algorithm::Unprocessed => {
            check_inputs(x, None, cfg, 1)?;
            pass_through(x, None, cfg)
        }
    }
}

/// Joint echo canceller and source extraction.
pub fn run_joint(x: &Spectrogram, u: &Spectrogram, cfg: &RunConfig) -> Result<RunOutput> {
    let cfg = RunConfig {
        algorithm: Algorithm::Joint,
        ..cfg.clone()
    };
    run(x, u, &cfg, None)
}

/// Per-channel batch NLMS echo canceller interleaved with source extraction.
pub fn run_bnlms_ive(x: &Spectrogram, u: &Spectrogram, cfg: &RunConfig) -> Result<RunOutput> {
    let cfg = RunConfig {
        algorithm: Algorithm::BnlmsIve,
        ..cfg.clone()
    };
    run(x, u, &cfg, None)
}

/// Source extraction on the raw microphones.
pub fn run_ive_only(x: &Spectrogram, cfg: &RunConfig) -> Result<RunOutput> {
    let cfg = RunConfig {
        algorithm: Algorithm::IveOnly,
        ..cfg.clone()
    };
    check_inputs(x, None, &cfg, 2)?;
    iterate(x, None, &cfg, EchoMode::Off, None)
}

/// Batch least-squares echo paths `h_f = E[x u^*] / E[|u|^2]`; returns the error signal and paths.
pub fn run_ls_aec(x: &Spectrogram, u: &Spectrogram) -> Result<(Spectrogram, Vec<CVec>)> {
    let cfg = RunConfig {
        algorithm: Algorithm::LsAec,
        ..RunConfig::default()
    };
    check_inputs(x, Some(u), &cfg, 1)?;
    let h = least_squares_paths(x, u)?;
    let e = Spectrogram::from_bins(
        x.bins()
            .iter()
            .zip(u.bins())
            .zip(&h)
            .map(|((xf, uf), hf)| model::error_frames(xf, uf, hf))
            .collect(),
    )?
    .with_meta(x.meta().copied())?;
    Ok((e, h))
}

fn least_squares_paths(x: &Spectrogram, u: &Spectrogram) -> Result<Vec<CVec>> {
    if u.energy() == 0.0 {
        return Err(Error::NoExcitation);
    }
    Ok(x.bins()
        .iter()
        .zip(u.bins())
        .map(|(xf, uf)| {
            let p = updates::mean_power(uf);
            if p <= updates::DEAD_BIN {
                CVec::zeros(xf.nrows())
            } else {
                updates::cross_correlation(xf, uf) / real(p)
            }
        })
        .collect())
}

/// Output is the reference error channel with unit scale, optionally after echo cancellation.
fn pass_through(x: &Spectrogram, echo: Option<(&Spectrogram, Vec<CVec>)>, cfg: &RunConfig) -> Result<RunOutput> {
    let r = cfg.reference_channel - 1;
    let mut state = DemixState::new(x.num_bins(), x.channels());
    let e = match echo {
        Some((u, h)) => {
            let bins = x
                .bins()
                .iter()
                .zip(u.bins())
                .zip(&h)
                .map(|((xf, uf), hf)| model::error_frames(xf, uf, hf))
                .collect();
            for (bin, hf) in state.bins.iter_mut().zip(h) {
                bin.h = hf;
            }
            Spectrogram::from_bins(bins)?.with_meta(x.meta().copied())?
        }
        None => x.clone(),
    };
    for bin in &mut state.bins {
        bin.w = crate::linalg::unit(x.channels(), r);
        bin.a = bin.w.clone();
    }
    Ok(RunOutput {
        s_hat: e.channel(r),
        e,
        state,
        scales: vec![ONE; x.num_bins()],
        diagnostics: RunDiagnostics {
            algorithm: Some(cfg.algorithm),
            iterations: Vec::new(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{unit, ZERO};
    use crate::scenegen::{narrowband_scene, Components, ScenarioConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> CMat {
        CMat::from_fn(r, c, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    #[test]
    fn ls_aec_recovers_noiseless_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = Spectrogram::from_bins((0..5).map(|_| rand_mat(&mut rng, 1, 30)).collect()).unwrap();
        let hs: Vec<CVec> = (0..5).map(|_| rand_mat(&mut rng, 3, 1).column(0).into_owned()).collect();
        let x = Spectrogram::from_bins((0..5).map(|f| &hs[f] * u.bin(f)).collect()).unwrap();
        let (e, h) = run_ls_aec(&x, &u).unwrap();
        for f in 0..5 {
            assert!((&h[f] - &hs[f]).norm() < 1e-12);
        }
        assert!(e.energy() < 1e-24);
        let silent = Spectrogram::zeros(5, 30, 1);
        assert!(matches!(run_ls_aec(&x, &silent), Err(Error::NoExcitation)));
    }

    #[test]
    fn unprocessed_is_first_microphone() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Spectrogram::from_bins((0..3).map(|_| rand_mat(&mut rng, 2, 10)).collect()).unwrap();
        let u = Spectrogram::from_bins((0..3).map(|_| rand_mat(&mut rng, 1, 10)).collect()).unwrap();
        let cfg = RunConfig {
            algorithm: Algorithm::Unprocessed,
            ..RunConfig::default()
        };
        let out = run(&x, &u, &cfg, None).unwrap();
        assert_eq!(out.s_hat, x.channel(0));
    }

    #[test]
    fn rejects_bad_inputs() {
        let x = Spectrogram::zeros(3, 10, 1);
        let u = Spectrogram::zeros(3, 10, 1);
        assert!(run_joint(&x, &u, &RunConfig::default()).is_err());
        let x = Spectrogram::zeros(3, 10, 2);
        let u2 = Spectrogram::zeros(3, 9, 1);
        assert!(run_joint(&x, &u2, &RunConfig::default()).is_err());
        let cfg = RunConfig {
            iterations: 0,
            ..RunConfig::default()
        };
        assert!(run_joint(&x, &u, &cfg).is_err());
        let cfg = RunConfig {
            reference_channel: 3,
            ..RunConfig::default()
        };
        assert!(run_joint(&x, &u, &cfg).is_err());
    }

    #[test]
    fn constraints_hold_after_every_iteration() {
        let cfg = ScenarioConfig {
            mics: 3,
            seed: 4,
            ..ScenarioConfig::default()
        };
        let scene = narrowband_scene(&cfg, 16, 120).unwrap();
        let mut eng = Engine::new(&scene.x, Some(&scene.u), &RunConfig::default());
        for _ in 0..5 {
            eng.echo_step(EchoMode::Joint);
            eng.extraction_step();
            for (f, bin) in eng.state.bins.iter().enumerate() {
                assert!((bin.w.dotc(&bin.a) - ONE).norm() < 1e-10);
                let p = updates::mean_power(&eng.s[f]);
                assert!((p - 1.0).abs() < 1e-10, "bin {f}: {p}");
            }
        }
    }

    #[test]
    fn silent_bins_are_frozen_not_fatal() {
        let cfg = ScenarioConfig {
            mics: 2,
            seed: 5,
            ..ScenarioConfig::default()
        };
        let mut scene = narrowband_scene(&cfg, 6, 60).unwrap();
        *scene.x.bin_mut(2) = CMat::zeros(2, 60);
        *scene.u.bin_mut(2) = CMat::zeros(1, 60);
        let run_cfg = RunConfig {
            iterations: 3,
            ..RunConfig::default()
        };
        let out = run_joint(&scene.x, &scene.u, &run_cfg).unwrap();
        assert!(out.diagnostics.iterations.iter().all(|r| r.skipped_aec >= 1));
        assert_eq!(out.state.bins[2].h, CVec::zeros(2));
        assert_eq!(out.scales[2], ZERO);
        assert!(out.s_hat.bins().iter().flatten().all(|v| v.re.is_finite()));
    }

    #[test]
    fn echo_free_scene_keeps_echo_path_near_zero() {
        let cfg = ScenarioConfig {
            mics: 3,
            seed: 6,
            components: Components {
                echo: false,
                ..Components::default()
            },
            ..ScenarioConfig::default()
        };
        let scene = narrowband_scene(&cfg, 16, 200).unwrap();
        let out = run_joint(&scene.x, &scene.u, &RunConfig::default()).unwrap();
        let hn: f64 = out.state.bins.iter().map(|b| b.h.norm_squared()).sum::<f64>().sqrt();
        let xn: f64 = scene.truth.unwrap().a_soi.iter().map(|a| a.norm_squared()).sum::<f64>().sqrt();
        assert!(hn < 0.2 * xn, "{hn} vs {xn}");
        assert!(unit(3, 0).norm() > 0.0);
    }
}
