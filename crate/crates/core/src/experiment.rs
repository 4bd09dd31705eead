//! Orchestration of configured experiments and their output artifacts.
//!
//! Every run directory contains `config.toml` (the resolved configuration, in units of
//! `gamma`) and a `summary.json`; simulation modes add `detections.jsonl`, `trace.csv`
//! and waiting-time histograms `hist_*.csv`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::analysis::{self, ChannelCounts, WaitingHistogram};
use crate::atom::{AtomParams, AtomState};
use crate::batch::{derive_seed, run_indexed};
use crate::cascaded::{run_trajectory_cascaded, CascadedModel, CascadedRunOptions, CASCADED_LABELS};
use crate::channels::{filter_responses, prism_channels, ChannelResponse};
use crate::config::{ExperimentConfig, Mode};
use crate::engine::{run_trajectory, DetectionRecord, EngineOptions, NmModel, RunOptions};
use crate::error::{Error, Result};
use crate::oracles::{self, BlochState};
use crate::output::TrajectoryOutput;

/// Environment variable that overrides `io.out_dir`.
pub const OUT_DIR_ENV: &str = "SPECTRAJ_OUT_DIR";

pub fn atom_params(cfg: &ExperimentConfig) -> Result<AtomParams> {
    AtomParams::new(cfg.physics.gamma, cfg.physics.omega_rabi)
}

/// The transmit/reflect pair of the filter configuration.
pub fn filter_channels(cfg: &ExperimentConfig) -> Result<Vec<ChannelResponse>> {
    let p = &cfg.physics;
    let (t, r) = filter_responses(p.kappa, p.nu, p.dt, p.t_m)?;
    Ok(vec![t, r])
}

pub fn prism_bands(cfg: &ExperimentConfig) -> Result<Vec<ChannelResponse>> {
    let p = &cfg.physics;
    prism_channels(&p.band_centers, p.band_width, p.dt, p.t_m)
}

fn channels_for(cfg: &ExperimentConfig) -> Result<Vec<ChannelResponse>> {
    match cfg.mode {
        Mode::NmFilter | Mode::CascadedFilter => filter_channels(cfg),
        Mode::NmPrism => prism_bands(cfg),
        m => Err(Error::Config(format!("mode {} has no detection channels", m.as_str()))),
    }
}

/// A ready-to-run simulator for one of the stochastic modes.
#[derive(Debug, Clone)]
pub enum Simulator {
    Nm { model: Arc<NmModel>, opts: RunOptions },
    Cascaded { model: Arc<CascadedModel>, opts: CascadedRunOptions },
}

impl Simulator {
    /// Builds from a validated configuration in units of `gamma`.
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let params = atom_params(cfg)?;
        let p = &cfg.physics;
        let r = &cfg.run;
        match cfg.mode {
            Mode::NmFilter | Mode::NmPrism => {
                let model = Arc::new(NmModel::new(params, &channels_for(cfg)?)?);
                let opts = RunOptions {
                    duration: r.duration,
                    target_detections: r.target_detections,
                    trace_stride: r.trace_stride,
                    initial: AtomState::ground(),
                    engine: EngineOptions { max_in_window: r.max_in_window, overflow: r.overflow },
                };
                Ok(Simulator::Nm { model, opts })
            }
            Mode::CascadedFilter => {
                let model = Arc::new(CascadedModel::new(params, p.kappa, p.nu, p.n_max, p.dt)?);
                let opts = CascadedRunOptions {
                    duration: r.duration,
                    target_detections: r.target_detections,
                    trace_stride: r.trace_stride,
                    initial: AtomState::ground(),
                };
                Ok(Simulator::Cascaded { model, opts })
            }
            m => Err(Error::Config(format!("mode {} is not a simulation mode", m.as_str()))),
        }
    }

    pub fn labels(&self) -> Vec<String> {
        match self {
            Simulator::Nm { model, .. } => model.labels().to_vec(),
            Simulator::Cascaded { .. } => CASCADED_LABELS.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn run(&self, seed: u64) -> Result<TrajectoryOutput> {
        match self {
            Simulator::Nm { model, opts } => run_trajectory(model.clone(), opts, seed),
            Simulator::Cascaded { model, opts } => run_trajectory_cascaded(model, opts, seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: Mode,
    pub seed: u64,
    pub n_trajectories: usize,
    pub labels: Vec<String>,
    /// Simulated time after burn-in, summed over trajectories.
    pub observed_time: f64,
    pub burn_in: f64,
    pub counts: ChannelCounts,
    /// Detections per unit time after burn-in.
    pub rate: f64,
    pub mean_wait: Option<f64>,
    pub mean_wait_by_channel: Vec<Option<f64>>,
    pub settle_events: u64,
    pub truncation_leakage: Option<f64>,
    /// Channel fractions expected from the stationary spectrum and the designed responses.
    pub predicted_fractions: Option<Vec<f64>>,
}

/// Waiting-time histograms of a set of trajectories, pooled over trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramSet {
    pub combined: WaitingHistogram,
    pub by_channel: Vec<WaitingHistogram>,
    /// Present for three-band prism runs.
    pub inter_sideband: Option<WaitingHistogram>,
}

pub fn histograms(
    records: &[Vec<DetectionRecord>],
    labels: &[String],
    n_bins: usize,
    max: f64,
) -> Result<HistogramSet> {
    let pooled = |keep: &dyn Fn(&DetectionRecord) -> bool| -> Vec<f64> {
        records.iter().flat_map(|r| analysis::waiting_times(r, keep)).collect()
    };
    let combined = analysis::histogram(&pooled(&|_| true), n_bins, max)?.with_label("all");
    let by_channel = (0..labels.len())
        .map(|n| {
            analysis::histogram(&pooled(&|d| d.channel == n), n_bins, max).map(|h| h.with_label(labels[n].clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let inter_sideband = if labels == ["L", "C", "R"] {
        let waits: Vec<f64> = records.iter().flat_map(|r| analysis::inter_sideband_waits(r, 0, 2)).collect();
        Some(analysis::histogram(&waits, n_bins, max)?.with_label("LR"))
    } else {
        None
    };
    Ok(HistogramSet { combined, by_channel, inter_sideband })
}

/// Spectrum-based channel fractions for the configured channels.
pub fn predicted_fractions(cfg: &ExperimentConfig) -> Result<Vec<f64>> {
    let params = atom_params(cfg)?;
    let channels = channels_for(cfg)?;
    let span = 40.0 * (params.omega_rabi + cfg.physics.kappa + cfg.physics.band_width).max(params.gamma);
    let n = (2.0 * span / (params.gamma / 20.0)).ceil() as usize + 1;
    let grid = crate::channels::linspace(-span, span, n);
    let spec = oracles::mollow_spectrum(&params, &grid)?;
    Ok(spec.channel_fractions(&channels))
}

fn summarize(cfg: &ExperimentConfig, seed: u64, labels: &[String], outs: &[TrajectoryOutput]) -> Result<(RunSummary, Vec<Vec<DetectionRecord>>)> {
    let burn_in = cfg.burn_in();
    let kept: Vec<Vec<DetectionRecord>> = outs.iter().map(|o| analysis::discard_before(&o.detections, burn_in)).collect();
    let all: Vec<DetectionRecord> = kept.iter().flatten().copied().collect();
    let counts = analysis::channel_counts(&all, labels.len());
    let observed_time: f64 = outs.iter().map(|o| (o.duration - burn_in).max(0.0)).sum();
    let waits: Vec<f64> = kept.iter().flat_map(|r| analysis::waiting_times(r, |_| true)).collect();
    let mean_wait_by_channel = (0..labels.len())
        .map(|n| {
            let w: Vec<f64> = kept.iter().flat_map(|r| analysis::waiting_times(r, |d| d.channel == n)).collect();
            analysis::mean(&w)
        })
        .collect();
    let leak: Vec<f64> = outs.iter().filter_map(|o| o.truncation_leakage).collect();
    let predicted = match cfg.mode {
        Mode::NmFilter | Mode::NmPrism | Mode::CascadedFilter => Some(predicted_fractions(cfg)?),
        _ => None,
    };
    Ok((
        RunSummary {
            mode: cfg.mode,
            seed,
            n_trajectories: outs.len(),
            labels: labels.to_vec(),
            observed_time,
            burn_in,
            rate: if observed_time > 0.0 { counts.total as f64 / observed_time } else { 0.0 },
            counts,
            mean_wait: analysis::mean(&waits),
            mean_wait_by_channel,
            settle_events: outs.iter().map(|o| o.settle_events).sum(),
            truncation_leakage: analysis::mean(&leak),
            predicted_fractions: predicted,
        },
        kept,
    ))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn write_histograms(dir: &Path, set: &HistogramSet) -> Result<()> {
    std::fs::write(dir.join("hist_all.csv"), set.combined.to_csv())?;
    for h in &set.by_channel {
        std::fs::write(dir.join(format!("hist_{}.csv", h.label)), h.to_csv())?;
    }
    if let Some(h) = &set.inter_sideband {
        std::fs::write(dir.join("hist_inter_sideband.csv"), h.to_csv())?;
    }
    Ok(())
}

fn write_trajectory(dir: &Path, out: &TrajectoryOutput, header: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    out.write_jsonl(&dir.join("detections.jsonl"))?;
    if !out.trace.is_empty() {
        out.write_trace_csv(&dir.join("trace.csv"), header)?;
    }
    Ok(())
}

/// What a completed command produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub out_dir: PathBuf,
    pub summary: serde_json::Value,
}

/// Validates, rescales to `gamma = 1` and applies the out-dir environment override.
pub fn prepare(cfg: &ExperimentConfig) -> Result<ExperimentConfig> {
    cfg.validate()?;
    let mut c = cfg.rescaled();
    if let Ok(dir) = std::env::var(OUT_DIR_ENV) {
        if !dir.is_empty() {
            c.io.out_dir = PathBuf::from(dir);
        }
    }
    Ok(c)
}

fn start_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = cfg.io.out_dir.clone();
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml())?;
    Ok(dir)
}

fn config_header(cfg: &ExperimentConfig, seed: u64) -> String {
    format!("trajectory seed = {seed}\n{}", cfg.to_toml())
}

/// Single run of the configured mode.
pub fn run(cfg: &ExperimentConfig) -> Result<Report> {
    let cfg = prepare(cfg)?;
    match cfg.mode {
        Mode::NmFilter | Mode::NmPrism | Mode::CascadedFilter => simulate(&cfg, 1),
        Mode::OracleBloch => oracle_bloch(&cfg),
        Mode::OracleSpectrum => oracle_spectrum(&cfg),
        Mode::Analyze => analyze(&cfg),
        Mode::Compare => compare(&cfg),
    }
}

/// `run.n_trajectories` independent trajectories with aggregated statistics.
pub fn batch(cfg: &ExperimentConfig) -> Result<Report> {
    let cfg = prepare(cfg)?;
    match cfg.mode {
        Mode::NmFilter | Mode::NmPrism | Mode::CascadedFilter => simulate(&cfg, cfg.run.n_trajectories),
        m => Err(Error::Config(format!("batch needs a simulation mode, got {}", m.as_str()))),
    }
}

#[derive(Serialize)]
struct PartialResults {
    completed: Vec<usize>,
    failed: Vec<(usize, String)>,
}

fn simulate(cfg: &ExperimentConfig, n: usize) -> Result<Report> {
    let sim = Simulator::new(cfg)?;
    let master = cfg.run.seed.expect("validated");
    let dir = start_dir(cfg)?;
    let results = run_indexed(n, cfg.run.n_workers, master, |_, seed| sim.run(seed))?;
    let mut outs = Vec::with_capacity(n);
    let mut failed = Vec::new();
    let mut first_err = None;
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(o) => outs.push((i, o)),
            Err(e) => {
                failed.push((i, e.to_string()));
                first_err.get_or_insert(e);
            }
        }
    }
    for (i, o) in &outs {
        let sub = if n == 1 { dir.clone() } else { dir.join(format!("traj_{i:05}")) };
        write_trajectory(&sub, o, &config_header(cfg, o.seed))?;
    }
    if let Some(e) = first_err {
        write_json(
            &dir.join("partial_results.json"),
            &PartialResults { completed: outs.iter().map(|(i, _)| *i).collect(), failed },
        )?;
        return Err(e);
    }
    let outs: Vec<TrajectoryOutput> = outs.into_iter().map(|(_, o)| o).collect();
    let labels = sim.labels();
    let (summary, kept) = summarize(cfg, master, &labels, &outs)?;
    let hists = histograms(&kept, &labels, cfg.analysis.n_bins, cfg.analysis.hist_max)?;
    write_histograms(&dir, &hists)?;
    if n > 1 && cfg.run.trace_stride > 0 {
        let traces: Vec<_> = outs.iter().map(|o| o.trace.clone()).collect();
        let shortest = traces.iter().map(Vec::len).min().unwrap_or(0);
        let traces: Vec<_> = traces.into_iter().map(|mut t| {
            t.truncate(shortest);
            t
        }).collect();
        let avg = oracles::ensemble_average(&traces)?;
        std::fs::write(dir.join("ensemble.csv"), ensemble_csv(&avg))?;
    }
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(Report { out_dir: dir, summary: serde_json::to_value(&summary)? })
}

fn ensemble_csv(avg: &oracles::EnsembleAverage) -> String {
    let mut s = String::from("t,sx,sy,sz,err_sx,err_sy,err_sz\n");
    for ((t, m), e) in avg.t.iter().zip(&avg.mean).zip(&avg.stderr) {
        s.push_str(&format!("{t},{:e},{:e},{:e},{:e},{:e},{:e}\n", m.sx, m.sy, m.sz, e.sx, e.sy, e.sz));
    }
    s
}

/// Seed of trajectory `i` of a run with master seed `seed`.
pub fn trajectory_seed(seed: u64, i: usize) -> u64 {
    derive_seed(seed, i as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlochSummary {
    pub steady_state: BlochState,
    pub steady_excited_population: f64,
    pub final_state: BlochState,
    pub final_time: f64,
}

fn oracle_bloch(cfg: &ExperimentConfig) -> Result<Report> {
    let params = atom_params(cfg)?;
    let dir = start_dir(cfg)?;
    let step = cfg.physics.dt * cfg.run.trace_stride.max(1) as f64;
    let n = (cfg.run.duration / step + 1e-9).floor() as usize;
    let times: Vec<f64> = (0..=n).map(|k| k as f64 * step).collect();
    let states = oracles::bloch_evolve_many(BlochState::GROUND, &params, &times)?;
    let mut csv = String::from("t,sx,sy,sz\n");
    for (t, s) in times.iter().zip(&states) {
        csv.push_str(&format!("{t},{:e},{:e},{:e}\n", s.sx, s.sy, s.sz));
    }
    std::fs::write(dir.join("bloch.csv"), csv)?;
    let ss = oracles::steady_state(&params);
    let summary = BlochSummary {
        steady_state: ss,
        steady_excited_population: ss.excited_population(),
        final_state: *states.last().expect("t = 0 included"),
        final_time: *times.last().expect("t = 0 included"),
    };
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(Report { out_dir: dir, summary: serde_json::to_value(&summary)? })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandWeights {
    pub peaks: Vec<f64>,
    pub total_rate: f64,
    pub coherent_rate: f64,
    pub band_centers: Vec<f64>,
    pub band_width: f64,
    /// Using the sampled prism responses.
    pub prism_fractions: Vec<f64>,
    pub prism_rates: Vec<f64>,
    /// Using ideal top-hat bands.
    pub ideal_fractions: Vec<f64>,
    /// Transmit/reflect fractions of the filter pair.
    pub filter_fractions: Option<Vec<f64>>,
}

fn oracle_spectrum(cfg: &ExperimentConfig) -> Result<Report> {
    let params = atom_params(cfg)?;
    let dir = start_dir(cfg)?;
    let grid = oracles::default_spectrum_grid(&params);
    let spec = oracles::mollow_spectrum(&params, &grid)?;
    std::fs::write(dir.join("spectrum.csv"), spec.to_csv())?;
    let wide_cfg = ExperimentConfig { mode: Mode::NmPrism, ..cfg.clone() };
    let bands = prism_bands(&wide_cfg)?;
    let span = 40.0 * (params.omega_rabi + cfg.physics.band_width).max(params.gamma);
    let wide = crate::channels::linspace(-span, span, (2.0 * span / (params.gamma / 20.0)).ceil() as usize + 1);
    let wide_spec = oracles::mollow_spectrum(&params, &wide)?;
    let ideal: Vec<_> = cfg
        .physics
        .band_centers
        .iter()
        .map(|&c| crate::channels::TopHat { center: c, width: cfg.physics.band_width })
        .collect();
    let filter_fractions = if cfg.physics.kappa > 0.0 {
        let f = filter_channels(cfg)?;
        Some(wide_spec.channel_fractions(&f))
    } else {
        None
    };
    let weights = BandWeights {
        peaks: spec.peaks(),
        total_rate: spec.total_rate,
        coherent_rate: spec.coherent_rate,
        band_centers: cfg.physics.band_centers.clone(),
        band_width: cfg.physics.band_width,
        prism_fractions: wide_spec.channel_fractions(&bands),
        prism_rates: wide_spec.channel_rates(&bands),
        ideal_fractions: wide_spec.channel_fractions(&ideal),
        filter_fractions,
    };
    write_json(&dir.join("band_weights.json"), &weights)?;
    write_json(&dir.join("summary.json"), &weights)?;
    Ok(Report { out_dir: dir, summary: serde_json::to_value(&weights)? })
}

/// Detection records of a run directory (single run or batch), with its labels.
pub fn load_run(dir: &Path) -> Result<(ExperimentConfig, Vec<String>, Vec<Vec<DetectionRecord>>)> {
    let cfg = ExperimentConfig::load(&dir.join("config.toml"))?;
    let summary: RunSummary = serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json"))?)?;
    let labels = summary.labels;
    let mut files = Vec::new();
    if dir.join("detections.jsonl").exists() {
        files.push(dir.join("detections.jsonl"));
    } else {
        let mut subs: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir() && p.join("detections.jsonl").exists())
            .collect();
        subs.sort();
        files.extend(subs.into_iter().map(|p| p.join("detections.jsonl")));
    }
    if files.is_empty() {
        return Err(Error::Config(format!("{} holds no detections.jsonl", dir.display())));
    }
    let records = files
        .iter()
        .map(|f| TrajectoryOutput::parse_jsonl(&std::fs::read_to_string(f)?, &labels, cfg.physics.dt))
        .collect::<Result<Vec<_>>>()?;
    Ok((cfg, labels, records))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisEntry {
    pub input: PathBuf,
    pub labels: Vec<String>,
    pub counts: ChannelCounts,
    pub mean_wait: Option<f64>,
    pub mean_wait_by_channel: Vec<Option<f64>>,
}

fn analyze(cfg: &ExperimentConfig) -> Result<Report> {
    let dir = start_dir(cfg)?;
    let mut entries = Vec::new();
    for (k, input) in cfg.analysis.inputs.iter().enumerate() {
        let (run_cfg, labels, records) = load_run(input)?;
        let burn = cfg.analysis.burn_in.unwrap_or(run_cfg.physics.t_m);
        let kept: Vec<Vec<DetectionRecord>> = records.iter().map(|r| analysis::discard_before(r, burn)).collect();
        let all: Vec<DetectionRecord> = kept.iter().flatten().copied().collect();
        let hists = histograms(&kept, &labels, cfg.analysis.n_bins, cfg.analysis.hist_max)?;
        let sub = dir.join(format!("input_{k}"));
        std::fs::create_dir_all(&sub)?;
        write_histograms(&sub, &hists)?;
        let waits: Vec<f64> = kept.iter().flat_map(|r| analysis::waiting_times(r, |_| true)).collect();
        entries.push(AnalysisEntry {
            input: input.clone(),
            counts: analysis::channel_counts(&all, labels.len()),
            mean_wait: analysis::mean(&waits),
            mean_wait_by_channel: (0..labels.len())
                .map(|n| {
                    let w: Vec<f64> = kept.iter().flat_map(|r| analysis::waiting_times(r, |d| d.channel == n)).collect();
                    analysis::mean(&w)
                })
                .collect(),
            labels,
        });
    }
    write_json(&dir.join("summary.json"), &entries)?;
    Ok(Report { out_dir: dir, summary: serde_json::to_value(&entries)? })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramComparison {
    pub label: String,
    pub distance: f64,
    pub noise_floor: f64,
    pub within_noise: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionComparison {
    pub label: String,
    pub a: f64,
    pub b: f64,
    /// Combined binomial standard error.
    pub sigma: f64,
    pub within_2_sigma: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub inputs: [PathBuf; 2],
    pub detections: [u64; 2],
    pub histograms: Vec<HistogramComparison>,
    pub fractions: Vec<FractionComparison>,
    pub all_within_noise: bool,
}

/// Compares two sets of detection records that share channel labels.
pub fn compare_records(
    a: &[Vec<DetectionRecord>],
    b: &[Vec<DetectionRecord>],
    labels: &[String],
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<(Vec<HistogramComparison>, Vec<FractionComparison>)> {
    let ha = histograms(a, labels, cfg.analysis.n_bins, cfg.analysis.hist_max)?;
    let hb = histograms(b, labels, cfg.analysis.n_bins, cfg.analysis.hist_max)?;
    let mut pairs = vec![(&ha.combined, &hb.combined)];
    pairs.extend(ha.by_channel.iter().zip(&hb.by_channel));
    let mut hist = Vec::new();
    for (k, (x, y)) in pairs.into_iter().enumerate() {
        let distance = analysis::histogram_distance(x, y)?;
        let floor = analysis::noise_floor(
            x,
            y,
            cfg.analysis.noise_resamples,
            cfg.analysis.noise_quantile,
            derive_seed(seed, k as u64),
        )?;
        hist.push(HistogramComparison {
            label: x.label.clone(),
            distance,
            noise_floor: floor,
            within_noise: distance <= floor,
        });
    }
    let ca = analysis::channel_counts(&a.concat(), labels.len());
    let cb = analysis::channel_counts(&b.concat(), labels.len());
    let (fa, fb) = match (&ca.fractions, &cb.fractions) {
        (Some(x), Some(y)) => (x.clone(), y.clone()),
        _ => return Err(Error::Degenerate("a compared run has no detections".into())),
    };
    let ea = ca.fraction_errors.expect("with fractions");
    let eb = cb.fraction_errors.expect("with fractions");
    let fractions = (0..labels.len())
        .map(|n| {
            let sigma = (ea[n].powi(2) + eb[n].powi(2)).sqrt();
            FractionComparison {
                label: labels[n].clone(),
                a: fa[n],
                b: fb[n],
                sigma,
                within_2_sigma: (fa[n] - fb[n]).abs() <= 2.0 * sigma,
            }
        })
        .collect();
    Ok((hist, fractions))
}

fn compare(cfg: &ExperimentConfig) -> Result<Report> {
    let dir = start_dir(cfg)?;
    let (_, la, ra) = load_run(&cfg.analysis.inputs[0])?;
    let (cb, lb, rb) = load_run(&cfg.analysis.inputs[1])?;
    if la != lb {
        return Err(Error::Alignment(format!("channel labels differ: {la:?} vs {lb:?}")));
    }
    let burn = cfg.analysis.burn_in.unwrap_or(cb.physics.t_m);
    let trim = |r: &[Vec<DetectionRecord>]| -> Vec<Vec<DetectionRecord>> {
        r.iter().map(|x| analysis::discard_before(x, burn)).collect()
    };
    let (ra, rb) = (trim(&ra), trim(&rb));
    let (histograms, fractions) = compare_records(&ra, &rb, &la, cfg, cfg.run.seed.expect("validated"))?;
    let all_within_noise = histograms.iter().all(|h| h.within_noise) && fractions.iter().all(|f| f.within_2_sigma);
    let report = CompareReport {
        inputs: [cfg.analysis.inputs[0].clone(), cfg.analysis.inputs[1].clone()],
        detections: [ra.iter().map(|r| r.len() as u64).sum(), rb.iter().map(|r| r.len() as u64).sum()],
        histograms,
        fractions,
        all_within_noise,
    };
    write_json(&dir.join("summary.json"), &report)?;
    Ok(Report { out_dir: dir, summary: serde_json::to_value(&report)? })
}
