//! Experiment plumbing behind the `aecbse` binary: scene files, single runs and benchmarks.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::CVec;
use crate::metrics::{self, MetricsReport};
use crate::optimizer::{self, Algorithm, IterationRecord, RunConfig};
use crate::scenegen::{self, Images, ScenarioConfig, ScenarioRanges, Scene, SceneMode};
use crate::stft::{self, FrameSpec};
use crate::wav::{self, WavEncoding};

/// Everything needed to reproduce an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    pub scenario: ScenarioConfig,
    /// When set, each benchmark run draws its power ratios from these ranges.
    pub ranges: Option<ScenarioRanges>,
    /// Scene manifest written by `simulate`, used by `run`.
    pub manifest: Option<PathBuf>,
    pub algorithms: Vec<Algorithm>,
    pub runs: usize,
    pub output_dir: PathBuf,
    pub frame: FrameSpec,
    pub run: RunConfig,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            ranges: Some(ScenarioRanges::default()),
            manifest: None,
            algorithms: Algorithm::ALL.to_vec(),
            runs: 50,
            output_dir: PathBuf::from("out"),
            frame: FrameSpec::default(),
            run: RunConfig::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        if self.algorithms.is_empty() {
            return Err(Error::Config("no algorithm selected".into()));
        }
        self.frame.validate()?;
        self.scenario.validate()?;
        self.run.validate(self.scenario.mics)?;
        if let Some(m) = &self.manifest {
            if !m.exists() {
                return Err(Error::MissingFile(m.clone()));
            }
        }
        for p in self.scenario.source_paths.iter().chain(&self.scenario.rir_paths) {
            if !p.exists() {
                return Err(Error::MissingFile(p.clone()));
            }
        }
        Ok(())
    }

    /// Scenario of benchmark run `index`, seeded from `scenario.seed + index`.
    pub fn scenario_for(&self, index: usize) -> ScenarioConfig {
        let seed = self.scenario.seed.wrapping_add(index as u64);
        let mut cfg = match &self.ranges {
            Some(r) => {
                let ranges = ScenarioRanges {
                    mics: self.scenario.mics,
                    duration_s: self.scenario.duration_s,
                    mode: self.scenario.mode,
                    ..r.clone()
                };
                let sampled = scenegen::sample_scenario(&mut ChaCha8Rng::seed_from_u64(seed), &ranges);
                ScenarioConfig {
                    ser_db: sampled.ser_db,
                    ier_db: sampled.ier_db,
                    enr_db: sampled.enr_db,
                    ..self.scenario.clone()
                }
            }
            None => self.scenario.clone(),
        };
        cfg.seed = seed;
        cfg
    }
}

/// Relative file names of a simulated scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFiles {
    pub mixture: PathBuf,
    pub loudspeaker: PathBuf,
    pub soi: PathBuf,
    pub echo: PathBuf,
    pub interference: PathBuf,
    pub noise: PathBuf,
}

impl Default for SceneFiles {
    fn default() -> Self {
        Self {
            mixture: "mixture.wav".into(),
            loudspeaker: "loudspeaker.wav".into(),
            soi: "soi.wav".into(),
            echo: "echo.wav".into(),
            interference: "interference.wav".into(),
            noise: "noise.wav".into(),
        }
    }
}

/// Scene description written next to the WAV files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub scenario: ScenarioConfig,
    pub frame: FrameSpec,
    pub samples: usize,
    pub gains: scenegen::Gains,
    pub files: SceneFiles,
}

fn write_multi(dir: &Path, name: &Path, sig: &[Vec<f64>], sr: u32) -> Result<()> {
    wav::write_wav(&dir.join(name), sig, sr, WavEncoding::Float32)
}

/// Renders the configured scene and writes the mixture, loudspeaker and component images
/// as float WAVs plus `manifest.json`.
pub fn cmd_simulate(spec: &ExperimentSpec) -> Result<Manifest> {
    spec.frame.validate()?;
    spec.scenario.validate()?;
    let scene = scenegen::build_scene(&spec.scenario, &spec.frame)?;
    let time = scene.time_signals()?;
    let dir = &spec.output_dir;
    fs::create_dir_all(dir)?;
    let files = SceneFiles::default();
    let sr = spec.frame.sample_rate;
    write_multi(dir, &files.mixture, &time.x, sr)?;
    write_multi(dir, &files.loudspeaker, std::slice::from_ref(&time.u), sr)?;
    write_multi(dir, &files.soi, &time.images.soi, sr)?;
    write_multi(dir, &files.echo, &time.images.echo, sr)?;
    write_multi(dir, &files.interference, &time.images.interference, sr)?;
    write_multi(dir, &files.noise, &time.images.noise, sr)?;
    let manifest = Manifest {
        scenario: spec.scenario.clone(),
        frame: spec.frame,
        samples: time.u.len(),
        gains: scene.gains,
        files,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

fn read_checked(path: &Path, sr: u32, channels: Option<usize>) -> Result<Vec<Vec<f64>>> {
    let (sig, rate) = wav::read_wav(path)?;
    if rate != sr {
        return Err(Error::Config(format!("{} has sample rate {rate}, expected {sr}", path.display())));
    }
    if let Some(c) = channels {
        if sig.len() != c {
            return Err(Error::Config(format!("{} has {} channels, expected {c}", path.display(), sig.len())));
        }
    }
    Ok(sig)
}

/// Loads a simulated scene from its manifest and re-analyzes the WAV files.
pub fn load_scene(manifest_path: &Path) -> Result<(Manifest, Scene)> {
    let text = fs::read_to_string(manifest_path).map_err(|_| Error::MissingFile(manifest_path.to_path_buf()))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let sr = manifest.frame.sample_rate;
    let m = manifest.scenario.mics;
    let f = &manifest.files;
    let x = read_checked(&dir.join(&f.mixture), sr, Some(m))?;
    let u = read_checked(&dir.join(&f.loudspeaker), sr, Some(1))?.remove(0);
    let images = Images {
        soi: read_checked(&dir.join(&f.soi), sr, Some(m))?,
        echo: read_checked(&dir.join(&f.echo), sr, Some(m))?,
        interference: read_checked(&dir.join(&f.interference), sr, Some(m))?,
        noise: read_checked(&dir.join(&f.noise), sr, Some(m))?,
    };
    let frame = &manifest.frame;
    let scene = Scene {
        config: manifest.scenario.clone(),
        x: stft::analyze(&x, frame)?,
        u: stft::analyze(std::slice::from_ref(&u), frame)?,
        images: Images {
            soi: stft::analyze(&images.soi, frame)?,
            echo: stft::analyze(&images.echo, frame)?,
            interference: stft::analyze(&images.interference, frame)?,
            noise: stft::analyze(&images.noise, frame)?,
        },
        gains: manifest.gains,
        truth: None,
        time: Some(scenegen::TimeSignals { x, u, images }),
    };
    Ok((manifest, scene))
}

/// Estimated filters of one bin as `[re, im]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinFilters {
    pub h: Vec<[f64; 2]>,
    pub w: Vec<[f64; 2]>,
}

fn pairs(v: &CVec) -> Vec<[f64; 2]> {
    v.iter().map(|c| [c.re, c.im]).collect()
}

/// Contents of `diagnostics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub algorithm: Algorithm,
    pub run: RunConfig,
    pub iterations: Vec<IterationRecord>,
    pub metrics: MetricsReport,
}

/// Runs one algorithm on a scene; writes `enhanced.wav`, `filters.json` and `diagnostics.json`.
///
/// The scene comes from `spec.manifest` when set, otherwise it is rendered from `spec.scenario`.
pub fn cmd_run(spec: &ExperimentSpec) -> Result<RunReport> {
    let algorithm = *spec
        .algorithms
        .first()
        .ok_or_else(|| Error::Config("no algorithm selected".into()))?;
    let (scene, frame) = match &spec.manifest {
        Some(path) => {
            let (manifest, scene) = load_scene(path)?;
            (scene, manifest.frame)
        }
        None => {
            spec.scenario.validate()?;
            (scenegen::build_scene(&spec.scenario, &spec.frame)?, spec.frame)
        }
    };
    let cfg = RunConfig {
        algorithm,
        ..spec.run.clone()
    };
    let out = optimizer::run(&scene.x, &scene.u, &cfg, scene.truth.as_ref())?;
    let metrics = metrics::evaluate(&scene, &out, cfg.reference_channel - 1)?;

    let enhanced = match (algorithm, &scene.time) {
        (Algorithm::Unprocessed, Some(t)) => vec![t.x[cfg.reference_channel - 1].clone()],
        _ => stft::synthesize(&out.s_hat)?,
    };
    let dir = &spec.output_dir;
    fs::create_dir_all(dir)?;
    wav::write_wav(&dir.join("enhanced.wav"), &enhanced, frame.sample_rate, WavEncoding::Float32)?;
    let filters: Vec<BinFilters> = out
        .state
        .bins
        .iter()
        .map(|b| BinFilters {
            h: pairs(&b.h),
            w: pairs(&b.w),
        })
        .collect();
    fs::write(dir.join("filters.json"), serde_json::to_string(&filters)? + "\n")?;
    let report = RunReport {
        algorithm,
        run: cfg,
        iterations: out.diagnostics.iterations,
        metrics,
    };
    fs::write(dir.join("diagnostics.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    Ok(report)
}

/// Metrics of every algorithm on benchmark run `index`, computed in memory.
pub fn bench_run(spec: &ExperimentSpec, index: usize) -> Result<Vec<MetricsReport>> {
    let cfg = spec.scenario_for(index);
    let scene = scenegen::build_scene(&cfg, &spec.frame)?;
    spec.algorithms
        .iter()
        .map(|&algorithm| {
            let run_cfg = RunConfig {
                algorithm,
                ..spec.run.clone()
            };
            let out = optimizer::run(&scene.x, &scene.u, &run_cfg, None)?;
            metrics::evaluate(&scene, &out, run_cfg.reference_channel - 1)
        })
        .collect()
}

/// Runs every algorithm on `spec.runs` seeded scenes and writes `bench.csv`.
pub fn cmd_bench(spec: &ExperimentSpec) -> Result<(Vec<MetricsReport>, String)> {
    spec.validate()?;
    let runs: Vec<Vec<MetricsReport>> = (0..spec.runs)
        .into_par_iter()
        .map(|i| bench_run(spec, i))
        .collect::<Result<_>>()?;
    let reports: Vec<MetricsReport> = runs.into_iter().flatten().collect();
    let csv = metrics::to_csv(&reports);
    fs::create_dir_all(&spec.output_dir)?;
    fs::write(spec.output_dir.join("bench.csv"), &csv)?;
    Ok((reports, csv))
}

#[derive(Debug, Parser)]
#[command(name = "aecbse", version, about = "Joint acoustic echo cancellation and source extraction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a scene to WAV files and a manifest.
    Simulate(CommonArgs),
    /// Run one algorithm on a scene.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        /// Scene manifest written by `simulate`.
        #[arg(long)]
        scene: Option<PathBuf>,
    },
    /// Benchmark algorithms over seeded scenes.
    Bench(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON experiment spec; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub mode: Option<String>,
    /// Algorithm name, or a comma separated list for `bench`.
    #[arg(long)]
    pub algo: Option<String>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl CommonArgs {
    /// Spec from the config file (or defaults) with flag overrides applied.
    pub fn resolve(&self) -> Result<ExperimentSpec> {
        let mut spec = match &self.config {
            Some(p) => ExperimentSpec::load(p)?,
            None => ExperimentSpec::default(),
        };
        if let Some(s) = self.seed {
            spec.scenario.seed = s;
        }
        if let Some(m) = &self.mode {
            spec.scenario.mode = m.parse::<SceneMode>()?;
        }
        if let Some(a) = &self.algo {
            spec.algorithms = a.split(',').map(|s| s.trim().parse()).collect::<Result<_>>()?;
        }
        if let Some(r) = self.runs {
            spec.runs = r;
        }
        if let Some(i) = self.iterations {
            spec.run.iterations = i;
        }
        if let Some(o) = &self.out {
            spec.output_dir = o.clone();
        }
        Ok(spec)
    }
}

/// Executes a parsed command line and returns the text to print.
pub fn execute(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Simulate(args) => {
            let spec = args.resolve()?;
            let m = cmd_simulate(&spec)?;
            Ok(format!(
                "wrote {} samples x {} channels to {}",
                m.samples,
                m.scenario.mics,
                spec.output_dir.display()
            ))
        }
        Command::Run { common, scene } => {
            let mut spec = common.resolve()?;
            if common.algo.is_none() {
                spec.algorithms = vec![Algorithm::Joint];
            }
            if let Some(s) = scene {
                spec.manifest = Some(s.clone());
            }
            if let Some(m) = &spec.manifest {
                if !m.exists() {
                    return Err(Error::MissingFile(m.clone()));
                }
            }
            let r = cmd_run(&spec)?;
            let m = &r.metrics;
            Ok(format!(
                "{}: SIR {:.2} dB, SER {:.2} dB, SIER {:.2} dB, ERLE_aec {:.2} dB, ERLE_bf {:.2} dB",
                r.algorithm, m.sir_db, m.ser_db, m.sier_db, m.erle_aec_db, m.erle_bf_db
            ))
        }
        Command::Bench(args) => {
            let spec = args.resolve()?;
            let (_, csv) = cmd_bench(&spec)?;
            Ok(csv.trim_end().to_string())
        }
    }
}
