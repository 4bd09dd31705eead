use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spectraj::config::{ExperimentConfig, Mode};
use spectraj::engine::OverflowPolicy;
use spectraj::{experiment, Error};

/// Spectrally resolved photodetection of a driven two-level atom.
#[derive(Parser, Debug)]
#[command(name = "spectraj", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Single run of the configured mode.
    Run(Overrides),
    /// Many independent trajectories with aggregated statistics.
    Batch(Overrides),
}

/// Flags override values from `--config`; with no config file the mode's defaults apply.
#[derive(Args, Debug, Default)]
struct Overrides {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long = "omega")]
    omega_rabi: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long)]
    band_width: Option<f64>,
    /// Comma-separated band centers.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    band_centers: Option<Vec<f64>>,
    #[arg(long)]
    t_m: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    n_max: Option<usize>,
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    target_detections: Option<u64>,
    #[arg(long)]
    n_trajectories: Option<usize>,
    #[arg(long)]
    trace_stride: Option<usize>,
    #[arg(long)]
    n_workers: Option<usize>,
    #[arg(long)]
    max_in_window: Option<usize>,
    /// settle-oldest | error
    #[arg(long)]
    overflow: Option<String>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Run directory to analyze or compare; repeat for several.
    #[arg(long = "input")]
    inputs: Vec<PathBuf>,
}

impl Overrides {
    fn resolve(&self) -> spectraj::Result<ExperimentConfig> {
        let mut cfg = match (&self.config, &self.mode) {
            (Some(path), _) => ExperimentConfig::load(path)?,
            (None, Some(m)) => ExperimentConfig::new(Mode::parse(m)?),
            (None, None) => return Err(Error::Config("either --config or --mode is required".into())),
        };
        if let Some(m) = &self.mode {
            cfg.mode = Mode::parse(m)?;
        }
        let p = &mut cfg.physics;
        macro_rules! set {
            ($dst:expr, $src:expr) => {
                if let Some(v) = $src.clone() {
                    $dst = v;
                }
            };
        }
        set!(p.gamma, self.gamma);
        set!(p.omega_rabi, self.omega_rabi);
        set!(p.kappa, self.kappa);
        set!(p.nu, self.nu);
        set!(p.band_width, self.band_width);
        set!(p.band_centers, self.band_centers);
        set!(p.t_m, self.t_m);
        set!(p.dt, self.dt);
        set!(p.n_max, self.n_max);
        let r = &mut cfg.run;
        set!(r.duration, self.duration);
        set!(r.n_trajectories, self.n_trajectories);
        set!(r.trace_stride, self.trace_stride);
        set!(r.n_workers, self.n_workers);
        set!(r.max_in_window, self.max_in_window);
        if self.target_detections.is_some() {
            r.target_detections = self.target_detections;
        }
        if self.seed.is_some() {
            r.seed = self.seed;
        }
        if let Some(o) = &self.overflow {
            r.overflow = match o.as_str() {
                "settle-oldest" => OverflowPolicy::SettleOldest,
                "error" => OverflowPolicy::Error,
                _ => return Err(Error::Config(format!("run.overflow: unknown policy {o:?}"))),
            };
        }
        set!(cfg.io.out_dir, self.out_dir);
        if !self.inputs.is_empty() {
            cfg.analysis.inputs = self.inputs.clone();
        }
        Ok(cfg)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parse(_) | Error::Domain(_) => 2,
        e if e.is_numerical() => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(o) => o.resolve().and_then(|c| experiment::run(&c)),
        Command::Batch(o) => o.resolve().and_then(|c| experiment::batch(&c)),
    };
    match result {
        Ok(report) => {
            println!("{}", serde_json::to_string_pretty(&report.summary).expect("summary serialises"));
            eprintln!("artifacts in {}", report.out_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
