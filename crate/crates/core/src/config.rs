//! Experiment configuration: a TOML file with `[physics]`, `[run]`, `[io]` and
//! `[analysis]` tables, validated and rescaled so that `gamma = 1`.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::engine::OverflowPolicy;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    NmFilter,
    NmPrism,
    CascadedFilter,
    OracleBloch,
    OracleSpectrum,
    Analyze,
    Compare,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::NmFilter => "nm-filter",
            Mode::NmPrism => "nm-prism",
            Mode::CascadedFilter => "cascaded-filter",
            Mode::OracleBloch => "oracle-bloch",
            Mode::OracleSpectrum => "oracle-spectrum",
            Mode::Analyze => "analyze",
            Mode::Compare => "compare",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        toml::Value::String(s.to_string())
            .try_into()
            .map_err(|_| Error::Config(format!("unknown mode '{s}'")))
    }

    /// Modes that draw random numbers and therefore need a seed.
    pub fn is_stochastic(self) -> bool {
        matches!(self, Mode::NmFilter | Mode::NmPrism | Mode::CascadedFilter | Mode::Compare)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Physics {
    pub gamma: f64,
    pub omega_rabi: f64,
    pub kappa: f64,
    pub nu: f64,
    /// Full width of each prism band.
    pub band_width: f64,
    pub band_centers: Vec<f64>,
    pub t_m: f64,
    pub dt: f64,
    /// Cavity photon truncation of the cascaded model.
    pub n_max: usize,
}

impl Default for Physics {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            omega_rabi: 10.0,
            kappa: 5.0,
            nu: 0.0,
            band_width: 10.0,
            band_centers: vec![-10.0, 0.0, 10.0],
            t_m: 1.0,
            dt: 0.005,
            n_max: crate::cascaded::DEFAULT_N_MAX,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSettings {
    pub duration: f64,
    /// Stop each trajectory after this many detections; `duration` is then a hard cap.
    pub target_detections: Option<u64>,
    pub n_trajectories: usize,
    pub seed: Option<u64>,
    pub trace_stride: usize,
    pub n_workers: usize,
    pub max_in_window: usize,
    pub overflow: OverflowPolicy,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            duration: 100.0,
            target_detections: None,
            n_trajectories: 1,
            seed: None,
            trace_stride: 10,
            n_workers: 1,
            max_in_window: 2,
            overflow: OverflowPolicy::SettleOldest,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Io {
    pub out_dir: PathBuf,
}

impl Default for Io {
    fn default() -> Self {
        Self { out_dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSettings {
    /// Run directories to analyse (`analyze`: one or more; `compare`: exactly two).
    pub inputs: Vec<PathBuf>,
    pub n_bins: usize,
    pub hist_max: f64,
    /// Detections earlier than this are discarded; defaults to `t_m`.
    pub burn_in: Option<f64>,
    pub noise_resamples: usize,
    pub noise_quantile: f64,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        Self {
            inputs: Vec::new(),
            n_bins: crate::analysis::DEFAULT_BINS,
            hist_max: crate::analysis::DEFAULT_RANGE,
            burn_in: None,
            noise_resamples: 1000,
            noise_quantile: 0.99,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    #[serde(default)]
    pub physics: Physics,
    #[serde(default)]
    pub run: RunSettings,
    #[serde(default)]
    pub io: Io,
    #[serde(default)]
    pub analysis: AnalysisSettings,
}

impl ExperimentConfig {
    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            physics: Physics::default(),
            run: RunSettings::default(),
            io: Io::default(),
            analysis: AnalysisSettings::default(),
        }
    }

    /// Parses TOML; syntax and type errors carry the line and column.
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is serializable")
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.physics;
        let r = &self.run;
        let bad = |key: &str, msg: String| Err(Error::Config(format!("{key}: {msg}")));
        let finite = [
            ("physics.gamma", p.gamma),
            ("physics.omega_rabi", p.omega_rabi),
            ("physics.kappa", p.kappa),
            ("physics.nu", p.nu),
            ("physics.band_width", p.band_width),
            ("physics.t_m", p.t_m),
            ("physics.dt", p.dt),
            ("run.duration", r.duration),
        ];
        for (k, v) in finite {
            if !v.is_finite() {
                return bad(k, format!("must be finite, got {v}"));
            }
        }
        if !(p.gamma > 0.0) {
            return bad("physics.gamma", format!("must be > 0, got {}", p.gamma));
        }
        if p.omega_rabi < 0.0 {
            return bad("physics.omega_rabi", format!("must be >= 0, got {}", p.omega_rabi));
        }
        if !(p.dt > 0.0) {
            return bad("physics.dt", format!("must be > 0, got {}", p.dt));
        }
        if !(p.t_m > 0.0) {
            return bad("physics.t_m", format!("must be > 0, got {}", p.t_m));
        }
        match self.mode {
            Mode::NmFilter | Mode::CascadedFilter => {
                if !(p.kappa > 0.0) {
                    return bad("physics.kappa", format!("must be > 0, got {}", p.kappa));
                }
            }
            Mode::NmPrism => {
                if !(p.band_width > 0.0) {
                    return bad("physics.band_width", format!("must be > 0, got {}", p.band_width));
                }
                if p.band_centers.is_empty() {
                    return bad("physics.band_centers", "must list at least one band".into());
                }
            }
            _ => {}
        }
        if self.mode == Mode::CascadedFilter && p.n_max < 2 {
            return bad("physics.n_max", format!("must be >= 2, got {}", p.n_max));
        }
        if self.mode.is_stochastic() && r.seed.is_none() {
            return bad("run.seed", "is required (no clock-based default)".into());
        }
        if !(r.duration >= 0.0) {
            return bad("run.duration", format!("must be >= 0, got {}", r.duration));
        }
        if matches!(self.mode, Mode::NmFilter | Mode::NmPrism)
            && r.target_detections.is_none()
            && r.duration > 0.0
            && r.duration <= p.t_m
        {
            return bad("run.duration", format!("must exceed t_m = {}", p.t_m));
        }
        if r.n_trajectories == 0 {
            return bad("run.n_trajectories", "must be >= 1".into());
        }
        if r.n_workers == 0 {
            return bad("run.n_workers", "must be >= 1".into());
        }
        if !(1..=8).contains(&r.max_in_window) {
            return bad("run.max_in_window", format!("must be in 1..=8, got {}", r.max_in_window));
        }
        let a = &self.analysis;
        if a.n_bins == 0 || !(a.hist_max > 0.0) {
            return bad("analysis", "n_bins and hist_max must be > 0".into());
        }
        if !(a.noise_quantile > 0.0 && a.noise_quantile <= 1.0) || a.noise_resamples == 0 {
            return bad("analysis", "noise_quantile must be in (0, 1] and noise_resamples >= 1".into());
        }
        match self.mode {
            Mode::Analyze if a.inputs.is_empty() => bad("analysis.inputs", "needs at least one run directory".into()),
            Mode::Compare if a.inputs.len() != 2 => bad("analysis.inputs", "needs exactly two run directories".into()),
            _ => Ok(()),
        }
    }

    /// Copy with every rate divided by `gamma` and every time multiplied by it.
    pub fn rescaled(&self) -> Self {
        let g = self.physics.gamma;
        let mut c = self.clone();
        let p = &mut c.physics;
        p.gamma = 1.0;
        p.omega_rabi /= g;
        p.kappa /= g;
        p.nu /= g;
        p.band_width /= g;
        for x in &mut p.band_centers {
            *x /= g;
        }
        p.t_m *= g;
        p.dt *= g;
        c.run.duration *= g;
        c.analysis.hist_max *= g;
        if let Some(b) = &mut c.analysis.burn_in {
            *b *= g;
        }
        c
    }

    pub fn burn_in(&self) -> f64 {
        self.analysis.burn_in.unwrap_or(self.physics.t_m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FILTER: &str = r#"
mode = "nm-filter"

[physics]
kappa = 5.0
omega_rabi = 10.0

[run]
seed = 7
duration = 50.0
"#;

    #[test]
    fn partial_tables_use_defaults() {
        let c = ExperimentConfig::from_toml(FILTER).unwrap();
        assert_eq!(c.mode, Mode::NmFilter);
        assert_eq!(c.physics.dt, 0.005);
        assert_eq!(c.run.seed, Some(7));
        assert_eq!(c.run.duration, 50.0);
        assert_eq!(c.run.overflow, OverflowPolicy::SettleOldest);
        c.validate().unwrap();
    }

    #[test]
    fn round_trip() {
        let c = ExperimentConfig::from_toml(FILTER).unwrap();
        let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn seed_is_mandatory_for_stochastic_modes() {
        let c = ExperimentConfig::from_toml("mode = \"nm-prism\"\n").unwrap();
        assert!(matches!(c.validate(), Err(Error::Config(m)) if m.contains("run.seed")));
        let c = ExperimentConfig::from_toml("mode = \"oracle-bloch\"\n").unwrap();
        c.validate().unwrap();
    }

    #[test]
    fn errors_point_at_the_line() {
        let err = ExperimentConfig::from_toml("mode = \"nm-filter\"\n[physics]\ngamma = \"one\"\n").unwrap_err();
        let Error::Config(msg) = err else { panic!() };
        assert!(msg.contains("line 2") || msg.contains("line 3"), "{msg}");
        assert!(ExperimentConfig::from_toml("mode = \"nm-filter\"\n[physics]\ngama = 1.0\n").is_err());
        assert!(ExperimentConfig::from_toml("mode = \"bogus\"\n").is_err());
    }

    #[test]
    fn rejects_nonpositive_rates() {
        let mut c = ExperimentConfig::from_toml(FILTER).unwrap();
        c.physics.kappa = 0.0;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::from_toml(FILTER).unwrap();
        c.physics.gamma = -1.0;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::from_toml(FILTER).unwrap();
        c.run.duration = 0.5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn rescaling_to_gamma_units() {
        let mut c = ExperimentConfig::from_toml(FILTER).unwrap();
        c.physics.gamma = 2.0;
        c.physics.omega_rabi = 20.0;
        c.physics.t_m = 0.5;
        c.physics.dt = 0.0025;
        let r = c.rescaled();
        assert_eq!(r.physics.gamma, 1.0);
        assert_eq!(r.physics.omega_rabi, 10.0);
        assert_eq!(r.physics.kappa, 2.5);
        assert_eq!(r.physics.t_m, 1.0);
        assert_eq!(r.physics.dt, 0.005);
        assert_eq!(r.run.duration, 100.0);
    }

    #[test]
    fn mode_names() {
        for m in [Mode::NmFilter, Mode::NmPrism, Mode::CascadedFilter, Mode::OracleBloch, Mode::OracleSpectrum, Mode::Analyze, Mode::Compare] {
            assert_eq!(Mode::parse(m.as_str()).unwrap(), m);
        }
    }
}
