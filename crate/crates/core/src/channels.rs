//! Measurement channels: sampled impulse responses of the spectral filters placed
//! between the atom and the photodetectors.
//!
//! Conventions: a channel with impulse response `h(tau)` has frequency response
//! `S(omega) = delta_coeff + integral h(tau) e^{i omega tau} d tau`; a complete set of
//! channels satisfies `sum_n |S_n(omega)|^2 = 1`. Stored kernels are causal and sampled at
//! lags `j dt` after the latency shift; grid-level corrections of the quadrature are
//! carried by `delta_coeff`.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default bound on the fraction of `|h|^2` lost by truncating a filter kernel at `t_m`.
pub const DEFAULT_TRUNCATION_TOL: f64 = 1e-4;

/// Fraction of the (outer) kernel support covered by the raised-cosine taper of the prism.
pub const PRISM_TAPER_FRACTION: f64 = 0.5;

/// Smallest kappa * t_m accepted for the Fabry-Perot filter.
pub const MIN_KAPPA_TM: f64 = 5.0;

/// Largest kappa * dt accepted for the Fabry-Perot filter.
pub const MAX_KAPPA_DT: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelResponse {
    pub label: String,
    /// Coefficient of a direct `delta(tau)` term; never sampled.
    pub delta_coeff: Complex64,
    /// Kernel samples (units of rate).
    pub kernel: Vec<Complex64>,
    /// Shift applied to make the stored kernel causal.
    pub latency: f64,
    pub dt: f64,
    pub t_m: f64,
    /// `int_{outside}|h|^2 / int_{inside}|h|^2` of the untruncated kernel.
    pub truncation_ratio: f64,
}

impl ChannelResponse {
    /// Per-emission amplitude weights on the grid: `w[j] = h[j] dt`, plus the direct
    /// term at `j = 0`.
    pub fn weights(&self) -> Vec<Complex64> {
        let mut w: Vec<Complex64> = self.kernel.iter().map(|h| h * self.dt).collect();
        if w.is_empty() {
            w.push(Complex64::new(0.0, 0.0));
        }
        w[0] += self.delta_coeff;
        w
    }

    /// Number of grid cells the channel can reach back in time.
    pub fn support_len(&self) -> usize {
        self.kernel.len().max(1)
    }

    /// Discrete-time frequency response of the stored (causal) kernel.
    pub fn frequency_response(&self, omega: f64) -> Complex64 {
        let step = Complex64::from_polar(1.0, omega * self.dt);
        let mut phase = Complex64::new(1.0, 0.0);
        let mut acc = Complex64::new(0.0, 0.0);
        for h in &self.kernel {
            acc += h * phase;
            phase *= step;
        }
        self.delta_coeff + acc * self.dt
    }

    /// Response of the kernel before the latency shift (differs by a pure phase).
    pub fn unshifted_response(&self, omega: f64) -> Complex64 {
        self.frequency_response(omega) * Complex64::from_polar(1.0, -omega * self.latency)
    }

    /// `sum_j |h[j]|^2 dt`.
    pub fn kernel_energy(&self) -> f64 {
        self.kernel.iter().map(|h| h.norm_sqr()).sum::<f64>() * self.dt
    }

    /// An ideal Markovian channel: `h(tau) = delta(tau)`, i.e. a detector placed right at
    /// the atom.
    pub fn markov(label: impl Into<String>, dt: f64) -> Self {
        Self {
            label: label.into(),
            delta_coeff: Complex64::new(1.0, 0.0),
            kernel: Vec::new(),
            latency: 0.0,
            dt,
            t_m: dt,
            truncation_ratio: 0.0,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# label={}", self.label);
        let _ = writeln!(out, "# delta_re={:e}", self.delta_coeff.re);
        let _ = writeln!(out, "# delta_im={:e}", self.delta_coeff.im);
        let _ = writeln!(out, "# latency={:e}", self.latency);
        let _ = writeln!(out, "# dt={:e}", self.dt);
        let _ = writeln!(out, "# t_m={:e}", self.t_m);
        let _ = writeln!(out, "# truncation_ratio={:e}", self.truncation_ratio);
        out.push_str("tau,re,im\n");
        for (j, h) in self.kernel.iter().enumerate() {
            let _ = writeln!(out, "{:e},{:e},{:e}", j as f64 * self.dt, h.re, h.im);
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut label = None;
        let mut meta = std::collections::HashMap::new();
        let mut kernel = Vec::new();
        let mut seen_header = false;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let (k, v) = rest
                    .trim()
                    .split_once('=')
                    .ok_or_else(|| Error::Parse(format!("line {}: bad metadata", lineno + 1)))?;
                if k == "label" {
                    label = Some(v.to_string());
                } else {
                    let x: f64 = v
                        .parse()
                        .map_err(|_| Error::Parse(format!("line {}: bad number", lineno + 1)))?;
                    meta.insert(k.to_string(), x);
                }
                continue;
            }
            if !seen_header {
                if line != "tau,re,im" {
                    return Err(Error::Parse(format!(
                        "line {}: expected header 'tau,re,im'",
                        lineno + 1
                    )));
                }
                seen_header = true;
                continue;
            }
            let cols: Vec<f64> = line
                .split(',')
                .map(|c| c.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Parse(format!("line {}: bad row", lineno + 1)))?;
            if cols.len() != 3 {
                return Err(Error::Parse(format!("line {}: expected 3 columns", lineno + 1)));
            }
            kernel.push(Complex64::new(cols[1], cols[2]));
        }
        let get = |k: &str| {
            meta.get(k)
                .copied()
                .ok_or_else(|| Error::Parse(format!("missing metadata '{k}'")))
        };
        Ok(Self {
            label: label.ok_or_else(|| Error::Parse("missing metadata 'label'".into()))?,
            delta_coeff: Complex64::new(get("delta_re")?, get("delta_im")?),
            kernel,
            latency: get("latency")?,
            dt: get("dt")?,
            t_m: get("t_m")?,
            truncation_ratio: meta.get("truncation_ratio").copied().unwrap_or(0.0),
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }
}

/// Anything with a frequency response `S(omega)`.
pub trait SpectralResponse {
    fn response(&self, omega: f64) -> Complex64;

    /// Grid spacing for sampled responses; analytic responses return `None`.
    fn sample_spacing(&self) -> Option<f64> {
        None
    }
}

impl SpectralResponse for ChannelResponse {
    fn response(&self, omega: f64) -> Complex64 {
        self.frequency_response(omega)
    }

    fn sample_spacing(&self) -> Option<f64> {
        Some(self.dt)
    }
}

/// Continuous-time Fabry-Perot filter responses.
#[derive(Debug, Clone, Copy)]
pub enum AnalyticFilter {
    Transmit { kappa: f64, nu: f64 },
    Reflect { kappa: f64, nu: f64 },
}

impl SpectralResponse for AnalyticFilter {
    fn response(&self, omega: f64) -> Complex64 {
        match *self {
            AnalyticFilter::Transmit { kappa, nu } => {
                Complex64::new(kappa, 0.0) / Complex64::new(kappa, -(omega - nu))
            }
            AnalyticFilter::Reflect { kappa, nu } => {
                Complex64::new(0.0, omega - nu) / Complex64::new(kappa, -(omega - nu))
            }
        }
    }
}

/// Ideal top-hat band `[center - width/2, center + width/2)`.
#[derive(Debug, Clone, Copy)]
pub struct TopHat {
    pub center: f64,
    pub width: f64,
}

impl SpectralResponse for TopHat {
    fn response(&self, omega: f64) -> Complex64 {
        let lo = self.center - 0.5 * self.width;
        let hi = self.center + 0.5 * self.width;
        if omega >= lo && omega < hi {
            Complex64::new(1.0, 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    }
}

/// Transmitted-light impulse response `u(tau) kappa e^{-i nu tau} e^{-kappa tau}`.
pub fn filter_transmit_kernel(kappa: f64, nu: f64, tau: f64) -> Complex64 {
    if tau < 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    Complex64::from_polar(kappa * (-kappa * tau).exp(), -nu * tau)
}

/// Untruncated top-hat impulse response `e^{-i c tau} sin(width tau / 2) / (pi tau)`.
pub fn prism_kernel(center: f64, width: f64, tau: f64) -> Complex64 {
    let x = 0.5 * width * tau;
    let sinc = if x.abs() < 1e-8 { 1.0 - x * x / 6.0 } else { x.sin() / x };
    Complex64::from_polar(width / (2.0 * PI) * sinc, -center * tau)
}

fn grid_len(t_m: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !(t_m > 0.0) {
        return Err(Error::Config(format!("dt and t_m must be > 0 (dt={dt}, t_m={t_m})")));
    }
    let m = (t_m / dt).round();
    if (m * dt - t_m).abs() > 1e-9 * t_m {
        return Err(Error::Config(format!("t_m = {t_m} is not a multiple of dt = {dt}")));
    }
    if m < 1.0 {
        return Err(Error::Config("t_m shorter than one grid step".into()));
    }
    Ok(m as usize)
}

/// Fabry-Perot transmit/reflect pair with linewidth `kappa` centred on `nu`.
pub fn filter_responses(
    kappa: f64,
    nu: f64,
    dt: f64,
    t_m: f64,
) -> Result<(ChannelResponse, ChannelResponse)> {
    filter_responses_with_tol(kappa, nu, dt, t_m, DEFAULT_TRUNCATION_TOL)
}

pub fn filter_responses_with_tol(
    kappa: f64,
    nu: f64,
    dt: f64,
    t_m: f64,
    truncation_tol: f64,
) -> Result<(ChannelResponse, ChannelResponse)> {
    if !(kappa > 0.0) {
        return Err(Error::Config(format!("kappa must be > 0, got {kappa}")));
    }
    let m = grid_len(t_m, dt)?;
    if kappa * dt > MAX_KAPPA_DT + 1e-12 {
        return Err(Error::Config(format!(
            "dt = {dt} does not resolve the filter: need kappa*dt <= {MAX_KAPPA_DT}"
        )));
    }
    let tail = (-2.0 * kappa * t_m).exp();
    let truncation_ratio = tail / (1.0 - tail);
    if kappa * t_m < MIN_KAPPA_TM - 1e-12 || truncation_ratio > truncation_tol {
        return Err(Error::Config(format!(
            "t_m = {t_m} too short for kappa = {kappa}: truncated tail ratio {truncation_ratio:.3e} \
             (tolerance {truncation_tol:.1e}, need kappa*t_m >= {MIN_KAPPA_TM})"
        )));
    }
    let z = Complex64::new(kappa, nu);
    // Point samples with trapezoid weights; the half weight of the zero-lag sample is
    // carried by the direct term, so the discrete response has no half-step delay.
    let kernel: Vec<Complex64> = (0..m).map(|j| (-z * (j as f64 * dt)).exp() * kappa).collect();
    let endpoint = Complex64::new(-0.5 * kappa * dt, 0.0);
    let transmit = ChannelResponse {
        label: "T".into(),
        delta_coeff: endpoint,
        kernel: kernel.clone(),
        latency: 0.0,
        dt,
        t_m,
        truncation_ratio,
    };
    let reflect = ChannelResponse {
        label: "R".into(),
        delta_coeff: endpoint - 1.0,
        kernel,
        ..transmit.clone()
    };
    Ok((transmit, reflect))
}

/// Raised-cosine (Tukey) taper on `x in [-1, 1]`.
fn taper(x: f64, fraction: f64) -> f64 {
    let a = x.abs();
    if a >= 1.0 {
        0.0
    } else if fraction <= 0.0 || a <= 1.0 - fraction {
        1.0
    } else {
        0.5 * (1.0 + (PI * (a - (1.0 - fraction)) / fraction).cos())
    }
}

/// Energy fraction of the ideal top-hat kernel lying outside `|tau| < t_m/2`, relative
/// to the energy inside.
pub fn prism_truncation_ratio(width: f64, t_m: f64) -> f64 {
    // int_{-T}^{T} sin^2(a t)/(pi t)^2 dt by composite Simpson, total = width/(2 pi).
    let half = 0.5 * t_m;
    let n = 4000;
    let h = 2.0 * half / n as f64;
    let f = |t: f64| prism_kernel(0.0, width, t).norm_sqr();
    let mut s = f(-half) + f(half);
    for i in 1..n {
        let t = -half + i as f64 * h;
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(t);
    }
    let inside = s * h / 3.0;
    let total = width / (2.0 * PI);
    ((total - inside) / inside).max(0.0)
}

/// Prism channel: top-hat band of full width `width` around `center`, truncated to
/// `[-t_m/2, t_m/2)`, tapered, and delayed by `t_m/2`.
pub fn prism_response(center: f64, width: f64, dt: f64, t_m: f64) -> Result<ChannelResponse> {
    if !(width > 0.0) {
        return Err(Error::Config(format!("band width must be > 0, got {width}")));
    }
    let m = grid_len(t_m, dt)?;
    if width * dt > PI {
        return Err(Error::Config(format!(
            "band width {width} aliases on grid dt = {dt} (width*dt > pi)"
        )));
    }
    if center.abs() + 0.5 * width > PI / dt {
        return Err(Error::Config(format!(
            "band [{}, {}) exceeds the Nyquist frequency {}",
            center - 0.5 * width,
            center + 0.5 * width,
            PI / dt
        )));
    }
    if t_m * width < 2.0 * PI {
        return Err(Error::Config(format!(
            "band width {width} unresolvable with t_m = {t_m} (need t_m*width >= 2 pi)"
        )));
    }
    let latency = 0.5 * m as f64 * dt;
    let kernel = (0..m)
        .map(|j| {
            let tau = (j as f64 + 0.5) * dt - latency;
            prism_kernel(center, width, tau) * taper(tau / latency, PRISM_TAPER_FRACTION)
        })
        .collect();
    Ok(ChannelResponse {
        label: String::new(),
        delta_coeff: Complex64::new(0.0, 0.0),
        kernel,
        latency,
        dt,
        t_m,
        truncation_ratio: prism_truncation_ratio(width, t_m),
    })
}

/// Three prism bands labelled `L`, `C`, `R` centred on `centers` (left to right).
pub fn prism_channels(
    centers: &[f64],
    width: f64,
    dt: f64,
    t_m: f64,
) -> Result<Vec<ChannelResponse>> {
    let labels = ["L", "C", "R"];
    centers
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let mut ch = prism_response(c, width, dt, t_m)?;
            ch.label = if centers.len() == 3 {
                labels[i].to_string()
            } else {
                format!("B{i}")
            };
            Ok(ch)
        })
        .collect()
}

/// `max_omega |sum_n |S_n(omega)|^2 - 1|` over `omega_grid`.
pub fn completeness_deviation<R: SpectralResponse>(channels: &[R], omega_grid: &[f64]) -> Result<f64> {
    let first = channels
        .first()
        .ok_or_else(|| Error::Domain("completeness of an empty channel set".into()))?;
    if let Some(dt) = first.sample_spacing() {
        if channels
            .iter()
            .any(|c| c.sample_spacing().is_some_and(|d| (d - dt).abs() > 1e-15 * dt))
        {
            return Err(Error::Domain("channels do not share the same dt".into()));
        }
    }
    Ok(omega_grid
        .iter()
        .map(|&w| {
            let total: f64 = channels.iter().map(|c| c.response(w).norm_sqr()).sum();
            (total - 1.0).abs()
        })
        .fold(0.0, f64::max))
}

/// Mean-square error of `|S(omega)|^2` against the ideal band indicator, excluding the
/// transition regions `||omega - center| - width/2| <= pi / t_m` around each band edge.
pub fn band_mse(channel: &ChannelResponse, center: f64, width: f64, omega_grid: &[f64]) -> f64 {
    let transition = PI / channel.t_m;
    let mut sum = 0.0;
    let mut n = 0usize;
    for &w in omega_grid {
        let off = (w - center).abs();
        if (off - 0.5 * width).abs() <= transition {
            continue;
        }
        let ideal = if off < 0.5 * width { 1.0 } else { 0.0 };
        sum += (channel.frequency_response(w).norm_sqr() - ideal).powi(2);
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Uniform grid `[lo, hi]` with `n` points.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `|S|` of the kernel sampled at its unshifted times, summed directly.
    fn direct_unshifted_magnitude(ch: &ChannelResponse, omega: f64) -> f64 {
        let mut acc = ch.delta_coeff;
        for (j, h) in ch.kernel.iter().enumerate() {
            let tau = j as f64 * ch.dt - ch.latency;
            acc += h * ch.dt * Complex64::from_polar(1.0, omega * tau);
        }
        acc.norm()
    }

    #[test]
    fn transmit_kernel_is_causal() {
        for tau in [-1.0, -0.1, -1e-9] {
            assert_eq!(filter_transmit_kernel(5.0, 0.0, tau), Complex64::new(0.0, 0.0));
        }
        assert!((filter_transmit_kernel(5.0, 0.0, 0.0).re - 5.0).abs() < 1e-15);
    }

    #[test]
    fn transmit_first_sample_near_kappa() {
        let kappa = 5.0;
        let (t, r) = filter_responses(kappa, 0.0, 1.0 / (1000.0 * kappa), 10.0 / kappa).unwrap();
        assert!((t.kernel[0].re - kappa).abs() / kappa < 0.01);
        assert_eq!(r.delta_coeff - t.delta_coeff, Complex64::new(-1.0, 0.0));
        assert!((t.weights()[0].re - 0.5 * kappa * t.dt).abs() < 1e-15);
        assert_eq!(t.kernel, r.kernel);
        assert_eq!(t.latency, 0.0);
        assert_eq!(r.latency, 0.0);
        // engine grid
        let (t, _) = filter_responses(kappa, 0.0, 1.0 / 200.0, 1.0).unwrap();
        assert!((t.kernel[0].re - kappa).abs() / kappa < 0.02);
    }

    #[test]
    fn transmit_energy_is_half_kappa() {
        let kappa = 5.0;
        let (t, _) = filter_responses(kappa, 0.0, 1.0 / (1000.0 * kappa), 10.0 / kappa).unwrap();
        assert!((t.kernel_energy() - kappa / 2.0).abs() / (kappa / 2.0) < 0.01);
    }

    #[test]
    fn filter_rejects_short_memory() {
        assert!(matches!(
            filter_responses(5.0, 0.0, 0.005, 0.5),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            filter_responses(5.0, 0.0, 0.02, 1.0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            filter_responses(0.0, 0.0, 0.005, 1.0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn analytic_filter_pair_is_complete() {
        let pair = [
            AnalyticFilter::Transmit { kappa: 5.0, nu: 1.0 },
            AnalyticFilter::Reflect { kappa: 5.0, nu: 1.0 },
        ];
        let grid = linspace(-100.0, 100.0, 2001);
        assert!(completeness_deviation(&pair, &grid).unwrap() < 1e-14);
    }

    #[test]
    fn disjoint_top_hats_are_complete_in_band() {
        let bands = [-10.0, 0.0, 10.0].map(|c| TopHat { center: c, width: 10.0 });
        let grid = linspace(-15.0, 14.999, 3001);
        assert_eq!(completeness_deviation(&bands, &grid).unwrap(), 0.0);
    }

    #[test]
    fn sampled_filter_pair_nearly_complete() {
        let kappa = 5.0;
        let (t, r) = filter_responses(kappa, 0.0, 1.0 / (1000.0 * kappa), 10.0 / kappa).unwrap();
        let grid = linspace(-10.0 * kappa, 10.0 * kappa, 1001);
        let dev = completeness_deviation(&[t, r], &grid).unwrap();
        assert!(dev < 0.02, "deviation {dev}");
    }

    #[test]
    fn empty_or_mixed_channel_sets_rejected() {
        let none: [ChannelResponse; 0] = [];
        assert!(matches!(completeness_deviation(&none, &[0.0]), Err(Error::Domain(_))));
        let (a, _) = filter_responses(5.0, 0.0, 0.005, 1.0).unwrap();
        let (b, _) = filter_responses(5.0, 0.0, 0.0025, 1.0).unwrap();
        assert!(matches!(completeness_deviation(&[a, b], &[0.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn reflect_blocks_resonant_light() {
        let (t, r) = filter_responses(5.0, 0.0, 1.0 / 200.0, 1.0).unwrap();
        // truncation at kappa*t_m = 5 leaves an amplitude tail of e^{-5}
        assert!(r.frequency_response(0.0).norm_sqr() < 1e-4);
        assert!((t.frequency_response(0.0).norm_sqr() - 1.0).abs() < 0.02);
        let exact = AnalyticFilter::Reflect { kappa: 5.0, nu: 0.0 };
        assert_eq!(exact.response(0.0).norm_sqr(), 0.0);
    }

    #[test]
    fn prism_kernel_center_value_and_symmetry() {
        let width = 10.0;
        assert!((prism_kernel(0.0, width, 0.0).re - width / (2.0 * PI)).abs() < 1e-15);
        // the band indicator integrates to width / (2 pi) at tau = 0
        let n = 200_000;
        let dw = width / n as f64;
        let direct: f64 = (0..n).map(|_| dw).sum::<f64>() / (2.0 * PI);
        assert!((direct - prism_kernel(0.0, width, 0.0).re).abs() < 1e-9);
        for tau in [0.01, 0.13, 0.49] {
            let a = prism_kernel(0.0, width, tau);
            let b = prism_kernel(0.0, width, -tau);
            assert!(a.im.abs() < 1e-15 && (a - b).norm() < 1e-15);
        }
        let ch = prism_response(0.0, width, 1.0 / 200.0, 1.0).unwrap();
        let m = ch.kernel.len();
        for j in 0..m {
            assert!(ch.kernel[j].im.abs() < 1e-15);
            assert!((ch.kernel[j] - ch.kernel[m - 1 - j]).norm() < 1e-14);
        }
    }

    #[test]
    fn prism_band_error_small() {
        let width = 10.0;
        let grid = linspace(-30.0, 30.0, 601);
        for center in [-10.0, 0.0, 10.0] {
            let ch = prism_response(center, width, 1.0 / 200.0, 1.0).unwrap();
            let mse = band_mse(&ch, center, width, &grid);
            assert!(mse < 1e-2, "center {center}: mse {mse}");
        }
    }

    #[test]
    fn prism_rejects_aliasing_and_unresolved_bands() {
        assert!(matches!(prism_response(0.0, 700.0, 0.005, 1.0), Err(Error::Config(_))));
        assert!(matches!(prism_response(0.0, 2.0, 0.005, 1.0), Err(Error::Config(_))));
        assert!(matches!(prism_response(0.0, -1.0, 0.005, 1.0), Err(Error::Config(_))));
    }

    #[test]
    fn latency_is_pure_phase() {
        let ch = prism_response(10.0, 10.0, 1.0 / 200.0, 1.0).unwrap();
        for w in linspace(-40.0, 40.0, 161) {
            let a = ch.frequency_response(w).norm();
            let b = direct_unshifted_magnitude(&ch, w);
            assert!((a - b).abs() < 1e-10);
            assert!((ch.unshifted_response(w).norm() - a).abs() < 1e-12);
        }
    }

    #[test]
    fn stored_kernels_are_causal_and_truncation_small() {
        let (t, _) = filter_responses(5.0, 0.0, 1.0 / 200.0, 1.0).unwrap();
        assert!(t.truncation_ratio < DEFAULT_TRUNCATION_TOL);
        assert_eq!(t.kernel.len(), 200);
        let p = prism_response(0.0, 10.0, 1.0 / 200.0, 1.0).unwrap();
        assert_eq!(p.kernel.len(), 200);
        assert!(p.latency > 0.0);
        // the stored prism support lies in [0, t_m)
        assert!((p.latency - 0.5).abs() < 1e-12);
        assert!(p.truncation_ratio > 0.0 && p.truncation_ratio < 0.25);
    }

    #[test]
    fn csv_round_trip() {
        let (_, r) = filter_responses(5.0, 1.5, 1.0 / 200.0, 1.0).unwrap();
        let back = ChannelResponse::from_csv(&r.to_csv()).unwrap();
        assert_eq!(back.label, r.label);
        assert_eq!(back.delta_coeff, r.delta_coeff);
        assert_eq!(back.kernel.len(), r.kernel.len());
        for (a, b) in back.kernel.iter().zip(&r.kernel) {
            assert!((a - b).norm() <= 1e-15 * b.norm().max(1.0));
        }
        assert!(ChannelResponse::from_csv("tau,re,im\n0,1,2\n").is_err());
    }
}
