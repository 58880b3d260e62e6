//! Echo and interference metrics by shadow filtering: each ground-truth
//! component image is passed through the estimated linear pipeline on its own.

use std::fmt::Write as _;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::DemixState;
use crate::optimizer::{Algorithm, RunOutput};
use crate::scenegen::{Images, Scene};
use crate::stft::{self, Spectrogram};

/// Ratios are clipped to `+-RATIO_CAP_DB`.
pub const RATIO_CAP_DB: f64 = 99.0;

/// `10 log10(num / den)`, clipped to the cap. `0 / 0` is 0 dB.
pub fn db_ratio(num: f64, den: f64) -> f64 {
    if num == den {
        return 0.0;
    }
    (10.0 * (num / den).log10()).clamp(-RATIO_CAP_DB, RATIO_CAP_DB)
}

/// Per-component contributions after the echo canceller (`M` channels) and after the beamformer (1 channel).
#[derive(Debug, Clone)]
pub struct ComponentOutputs {
    pub aec: Images<Spectrogram>,
    pub bse: Images<Spectrogram>,
}

fn aec_stage(image: &Spectrogram, u: Option<&Spectrogram>, state: &DemixState) -> Result<Spectrogram> {
    let Some(u) = u else { return Ok(image.clone()) };
    let bins = image
        .bins()
        .iter()
        .zip(u.bins())
        .zip(&state.bins)
        .map(|((c, uf), bin)| c - &bin.h * uf)
        .collect();
    Spectrogram::from_bins(bins)?.with_meta(image.meta().copied())
}

fn bse_stage(e: &Spectrogram, state: &DemixState, scales: &[Complex64]) -> Result<Spectrogram> {
    let bins = e
        .bins()
        .iter()
        .zip(&state.bins)
        .zip(scales)
        .map(|((ef, bin), g)| crate::model::extract(&bin.w, ef) * *g)
        .collect();
    Spectrogram::from_bins(bins)?.with_meta(e.meta().copied())
}

/// Passes each image through `e = c - h u_c`, then `s = alpha w^H e`.
///
/// Only the echo image has a loudspeaker part, namely `u`.
pub fn component_pass(
    state: &DemixState,
    scales: &[Complex64],
    images: &Images<Spectrogram>,
    u: &Spectrogram,
) -> Result<ComponentOutputs> {
    if scales.len() != state.num_bins() || images.soi.num_bins() != state.num_bins() {
        return Err(Error::Shape("state, scales and images differ in bin count".into()));
    }
    if images.soi.channels() != state.mics() {
        return Err(Error::Shape(format!(
            "images have {} channels, state {}",
            images.soi.channels(),
            state.mics()
        )));
    }
    let aec = Images {
        soi: aec_stage(&images.soi, None, state)?,
        echo: aec_stage(&images.echo, Some(u), state)?,
        interference: aec_stage(&images.interference, None, state)?,
        noise: aec_stage(&images.noise, None, state)?,
    };
    let bse = Images {
        soi: bse_stage(&aec.soi, state, scales)?,
        echo: bse_stage(&aec.echo, state, scales)?,
        interference: bse_stage(&aec.interference, state, scales)?,
        noise: bse_stage(&aec.noise, state, scales)?,
    };
    Ok(ComponentOutputs { aec, bse })
}

/// Power of channel `m`: time domain over interior samples when the
/// spectrogram carries frame metadata, spectral otherwise.
pub fn channel_power(s: &Spectrogram, m: usize) -> Result<f64> {
    match s.meta() {
        Some(meta) => {
            let sig = stft::synthesize(&s.channel(m))?;
            let range = meta.spec.interior(meta.signal_len);
            Ok(sig[0][range].iter().map(|v| v * v).sum())
        }
        None => Ok(s.bins().iter().map(|b| b.row(m).norm_squared()).sum()),
    }
}

/// Echo return loss enhancement in dB from image and residual powers.
pub fn erle(echo_power: f64, residual_power: f64) -> f64 {
    db_ratio(echo_power, residual_power)
}

/// `(SIR, SER, SIER)` in dB from component powers at the output.
pub fn ratios(soi: f64, echo: f64, interference: f64, noise: f64) -> (f64, f64, f64) {
    (
        db_ratio(soi, interference),
        db_ratio(soi, echo),
        db_ratio(soi, interference + echo + noise),
    )
}

/// Metrics of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub iterations: usize,
    pub sir_db: f64,
    pub ser_db: f64,
    pub sier_db: f64,
    pub erle_aec_db: f64,
    pub erle_bf_db: f64,
}

/// Evaluates a run against its scene. `reference` is the zero-based error channel.
pub fn evaluate(scene: &Scene, out: &RunOutput, reference: usize) -> Result<MetricsReport> {
    let pass = component_pass(&out.state, &out.scales, &scene.images, &scene.u)?;
    let echo_in = channel_power(&scene.images.echo, reference)?;
    let erle_aec = erle(echo_in, channel_power(&pass.aec.echo, reference)?);
    let erle_bf = erle(echo_in, channel_power(&pass.bse.echo, 0)?);
    let (sir, ser, sier) = ratios(
        channel_power(&pass.bse.soi, 0)?,
        channel_power(&pass.bse.echo, 0)?,
        channel_power(&pass.bse.interference, 0)?,
        channel_power(&pass.bse.noise, 0)?,
    );
    Ok(MetricsReport {
        algorithm: out.diagnostics.algorithm.unwrap_or_default(),
        seed: scene.config.seed,
        iterations: out.diagnostics.iterations.len(),
        sir_db: sir,
        ser_db: ser,
        sier_db: sier,
        erle_aec_db: erle_aec,
        erle_bf_db: erle_bf,
    })
}

pub const CSV_HEADER: &str = "algorithm,seed,SIR,SER,SIER,ERLE_aec,ERLE_bf";

/// Per-run rows sorted by seed then algorithm, followed by one `mean` row per algorithm.
pub fn to_csv(reports: &[MetricsReport]) -> String {
    let mut rows: Vec<&MetricsReport> = reports.iter().collect();
    rows.sort_by_key(|r| (r.seed, Algorithm::ALL.iter().position(|a| *a == r.algorithm)));
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    let line = |out: &mut String, name: &str, seed: &str, v: [f64; 5]| {
        let _ = writeln!(out, "{name},{seed},{:.2},{:.2},{:.2},{:.2},{:.2}", v[0], v[1], v[2], v[3], v[4]);
    };
    let values = |r: &MetricsReport| [r.sir_db, r.ser_db, r.sier_db, r.erle_aec_db, r.erle_bf_db];
    for r in &rows {
        line(&mut out, r.algorithm.name(), &r.seed.to_string(), values(r));
    }
    for (alg, mean) in means(reports) {
        line(&mut out, alg.name(), "mean", mean);
    }
    out
}

/// Mean `[SIR, SER, SIER, ERLE_aec, ERLE_bf]` per algorithm present, in canonical algorithm order.
pub fn means(reports: &[MetricsReport]) -> Vec<(Algorithm, [f64; 5])> {
    Algorithm::ALL
        .iter()
        .filter_map(|&alg| {
            let sel: Vec<&MetricsReport> = reports.iter().filter(|r| r.algorithm == alg).collect();
            if sel.is_empty() {
                return None;
            }
            let mut acc = [0.0; 5];
            for r in &sel {
                for (a, v) in acc.iter_mut().zip([r.sir_db, r.ser_db, r.sier_db, r.erle_aec_db, r.erle_bf_db]) {
                    *a += v;
                }
            }
            Some((alg, acc.map(|a| a / sel.len() as f64)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_examples() {
        let (sir, _, _) = ratios(1.0, 0.0, 1.0, 0.0);
        assert_eq!(sir, 0.0);
        let (sir, ser, _) = ratios(1.0, 0.0, 0.5, 0.0);
        assert!((sir - 3.0103).abs() < 1e-4);
        assert_eq!(ser, RATIO_CAP_DB);
        assert_eq!(db_ratio(0.0, 1.0), -RATIO_CAP_DB);
        assert_eq!(db_ratio(0.0, 0.0), 0.0);
    }

    #[test]
    fn erle_examples() {
        assert_eq!(erle(3.0, 3.0), 0.0);
        // amplitude 10^(-1/2) is a factor 10 in power
        assert!((erle(2.0, 0.2) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn sier_bound() {
        for (s, e, i, n) in [(1.0, 0.3, 0.2, 0.0), (2.0, 1.0, 1.0, 0.1), (1.0, 1e-3, 0.5, 1e-4)] {
            let (sir, ser, sier) = ratios(s, e, i, n);
            assert!(sier <= sir.min(ser) + 3.02);
            assert!(sier <= sir.min(ser));
        }
    }

    fn report(alg: Algorithm, seed: u64, v: f64) -> MetricsReport {
        MetricsReport {
            algorithm: alg,
            seed,
            iterations: 1,
            sir_db: v,
            ser_db: v,
            sier_db: v,
            erle_aec_db: 0.0,
            erle_bf_db: 0.0,
        }
    }

    #[test]
    fn csv_layout() {
        let csv = to_csv(&[
            report(Algorithm::Joint, 2, 1.0),
            report(Algorithm::Unprocessed, 2, 3.0),
            report(Algorithm::Joint, 1, 2.0),
        ]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert!(lines[1].starts_with("joint,1,"));
        assert!(lines[2].starts_with("unprocessed,2,"));
        assert!(lines[3].starts_with("joint,2,"));
        assert_eq!(lines[4], "unprocessed,mean,3.00,3.00,3.00,0.00,0.00");
        assert_eq!(lines[5], "joint,mean,1.50,1.50,1.50,0.00,0.00");
    }

    #[test]
    fn single_run_mean_is_the_row() {
        let csv = to_csv(&[report(Algorithm::IveOnly, 7, 4.25)]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[1].split_once(",7,").unwrap().1, lines[2].split_once(",mean,").unwrap().1);
    }
}
