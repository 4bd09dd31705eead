//! Statistics of detection records: waiting times, histograms, channel counts and
//! histogram comparisons.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::engine::DetectionRecord;
use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 100;
pub const DEFAULT_RANGE: f64 = 5.0;

/// Gaps between consecutive detections passing `keep`; other detections are ignored.
pub fn waiting_times<F: Fn(&DetectionRecord) -> bool>(records: &[DetectionRecord], keep: F) -> Vec<f64> {
    let times: Vec<f64> = records.iter().filter(|r| keep(r)).map(|r| r.time).collect();
    times.windows(2).map(|w| w[1] - w[0]).collect()
}

/// Records at or after `t0` (burn-in removal).
pub fn discard_before(records: &[DetectionRecord], t0: f64) -> Vec<DetectionRecord> {
    records.iter().filter(|r| r.time >= t0).copied().collect()
}

/// Gap from a side-peak detection to the next detection in the opposite side peak.
///
/// Each side holds at most one pending start. A further detection on the same side
/// while a start is pending opens no new pair. Central-peak detections are ignored.
pub fn inter_sideband_waits(records: &[DetectionRecord], left: usize, right: usize) -> Vec<f64> {
    let mut pending_left: Option<f64> = None;
    let mut pending_right: Option<f64> = None;
    let mut out = Vec::new();
    for r in records {
        let (mine, other) = if r.channel == left {
            (&mut pending_left, &mut pending_right)
        } else if r.channel == right {
            (&mut pending_right, &mut pending_left)
        } else {
            continue;
        };
        if let Some(start) = other.take() {
            out.push(r.time - start);
        }
        if mine.is_none() {
            *mine = Some(r.time);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaitingHistogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    /// Samples inside the binned range.
    pub total: u64,
    /// Samples at or beyond the last edge.
    pub overflow: u64,
    pub label: String,
}

/// Linear bins over `[0, max)`; values `>= max` go to the overflow count.
pub fn histogram(waits: &[f64], n_bins: usize, max: f64) -> Result<WaitingHistogram> {
    if n_bins == 0 || !(max > 0.0) {
        return Err(Error::Domain(format!("need n_bins > 0 and max > 0 (got {n_bins}, {max})")));
    }
    let width = max / n_bins as f64;
    let bin_edges: Vec<f64> = (0..=n_bins).map(|i| i as f64 * width).collect();
    let mut counts = vec![0u64; n_bins];
    let mut overflow = 0;
    for &w in waits {
        if w < 0.0 || !w.is_finite() {
            return Err(Error::Domain(format!("invalid waiting time {w}")));
        }
        let k = (w / width).floor() as usize;
        if k >= n_bins {
            overflow += 1;
        } else {
            counts[k] += 1;
        }
    }
    let total = counts.iter().sum();
    Ok(WaitingHistogram { bin_edges, counts, total, overflow, label: String::new() })
}

pub fn default_histogram(waits: &[f64]) -> WaitingHistogram {
    histogram(waits, DEFAULT_BINS, DEFAULT_RANGE).expect("valid defaults")
}

impl WaitingHistogram {
    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn bin_width(&self, i: usize) -> f64 {
        self.bin_edges[i + 1] - self.bin_edges[i]
    }

    /// In-range probability mass per bin.
    pub fn probabilities(&self) -> Vec<f64> {
        let t = self.total.max(1) as f64;
        self.counts.iter().map(|&c| c as f64 / t).collect()
    }

    /// Probability density, normalised by all samples including overflow.
    pub fn densities(&self) -> Vec<f64> {
        let all = (self.total + self.overflow).max(1) as f64;
        self.counts
            .iter()
            .enumerate()
            .map(|(i, &c)| c as f64 / (all * self.bin_width(i)))
            .collect()
    }

    pub fn modal_bin(&self) -> Option<usize> {
        if self.total == 0 {
            return None;
        }
        let max = *self.counts.iter().max()?;
        self.counts.iter().position(|&c| c == max)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,count,density\n");
        for (i, (c, d)) in self.counts.iter().zip(self.densities()).enumerate() {
            let _ = writeln!(out, "{},{},{},{:e}", self.bin_edges[i], self.bin_edges[i + 1], c, d);
        }
        out
    }

    fn same_edges(&self, other: &Self) -> bool {
        self.bin_edges.len() == other.bin_edges.len()
            && self
                .bin_edges
                .iter()
                .zip(&other.bin_edges)
                .all(|(a, b)| (a - b).abs() <= 1e-12 * a.abs().max(1.0))
    }
}

/// L1 distance between normalised histograms, in `[0, 2]`.
pub fn histogram_distance(a: &WaitingHistogram, b: &WaitingHistogram) -> Result<f64> {
    if !a.same_edges(b) {
        return Err(Error::Alignment("histograms have different bin edges".into()));
    }
    if a.total == 0 || b.total == 0 {
        return Err(Error::Degenerate("cannot compare an empty histogram".into()));
    }
    Ok(a.probabilities().iter().zip(b.probabilities()).map(|(p, q)| (p - q).abs()).sum())
}

/// Statistical floor for [`histogram_distance`] between two samples of sizes
/// `a.total` and `b.total` drawn from one distribution: the `quantile` of the L1
/// distance between multinomial resamples of the pooled histogram.
pub fn noise_floor(
    a: &WaitingHistogram,
    b: &WaitingHistogram,
    n_resamples: usize,
    quantile: f64,
    seed: u64,
) -> Result<f64> {
    if !a.same_edges(b) {
        return Err(Error::Alignment("histograms have different bin edges".into()));
    }
    if a.total == 0 || b.total == 0 || n_resamples == 0 {
        return Err(Error::Degenerate("noise floor needs nonempty histograms".into()));
    }
    let pooled: Vec<f64> = a
        .counts
        .iter()
        .zip(&b.counts)
        .map(|(x, y)| (x + y) as f64 / (a.total + b.total) as f64)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws: Vec<f64> = (0..n_resamples)
        .map(|_| {
            let x = multinomial(&mut rng, a.total, &pooled);
            let y = multinomial(&mut rng, b.total, &pooled);
            x.iter()
                .zip(&y)
                .map(|(&u, &v)| (u as f64 / a.total as f64 - v as f64 / b.total as f64).abs())
                .sum()
        })
        .collect();
    draws.sort_by(f64::total_cmp);
    let idx = ((quantile * n_resamples as f64).ceil() as usize).clamp(1, n_resamples) - 1;
    Ok(draws[idx])
}

fn multinomial(rng: &mut ChaCha8Rng, n: u64, p: &[f64]) -> Vec<u64> {
    let mut left = n;
    let mut mass = 1.0;
    let mut out = Vec::with_capacity(p.len());
    for &pi in p {
        if left == 0 || mass <= 0.0 {
            out.push(0);
            continue;
        }
        let q = (pi / mass).clamp(0.0, 1.0);
        let k = Binomial::new(left, q).expect("valid probability").sample(rng);
        out.push(k);
        left -= k;
        mass -= pi;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelCounts {
    pub counts: Vec<u64>,
    pub total: u64,
    /// `None` when there are no detections.
    pub fractions: Option<Vec<f64>>,
    /// Binomial standard errors of the fractions.
    pub fraction_errors: Option<Vec<f64>>,
}

impl ChannelCounts {
    /// `counts[a] / counts[b]` with its propagated standard error.
    pub fn ratio(&self, a: usize, b: usize) -> Option<(f64, f64)> {
        let x = *self.counts.get(a)? as f64;
        let y = *self.counts.get(b)? as f64;
        if x == 0.0 || y == 0.0 {
            return None;
        }
        let r = x / y;
        Some((r, r * (1.0 / x + 1.0 / y).sqrt()))
    }
}

pub fn channel_counts(records: &[DetectionRecord], n_channels: usize) -> ChannelCounts {
    let mut counts = vec![0u64; n_channels];
    for r in records {
        if r.channel < n_channels {
            counts[r.channel] += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return ChannelCounts { counts, total, fractions: None, fraction_errors: None };
    }
    let n = total as f64;
    let fractions: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
    let errors = fractions.iter().map(|p| (p * (1.0 - p) / n).sqrt()).collect();
    ChannelCounts { counts, total, fractions: Some(fractions), fraction_errors: Some(errors) }
}

pub fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Asymptotic Kolmogorov-Smirnov p-value of `samples` against the CDF `cdf`.
pub fn ks_test<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::Degenerate("K-S test of an empty sample".into()));
    }
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max);
    let sn = n.sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    Ok((d, kolmogorov_q(lambda)))
}

/// `Q_KS(lambda) = 2 sum_k (-1)^{k-1} e^{-2 k^2 lambda^2}`.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Pearson chi-square test of histogram counts against expected bin probabilities
/// (bins with expected count below 5 are merged into their neighbours).
pub fn chi_square_test(counts: &[u64], expected_prob: &[f64]) -> Result<(f64, f64)> {
    if counts.len() != expected_prob.len() || counts.is_empty() {
        return Err(Error::Alignment("counts and expectations differ in length".into()));
    }
    let n: u64 = counts.iter().sum();
    let n = n as f64;
    let mut groups: Vec<(f64, f64)> = Vec::new();
    let mut acc = (0.0, 0.0);
    for (&c, &p) in counts.iter().zip(expected_prob) {
        acc.0 += c as f64;
        acc.1 += p * n;
        if acc.1 >= 5.0 {
            groups.push(acc);
            acc = (0.0, 0.0);
        }
    }
    if acc.1 > 0.0 || acc.0 > 0.0 {
        match groups.last_mut() {
            Some(last) => {
                last.0 += acc.0;
                last.1 += acc.1;
            }
            None => groups.push(acc),
        }
    }
    if groups.len() < 2 {
        return Err(Error::Degenerate("too few populated bins for a chi-square test".into()));
    }
    let stat: f64 = groups.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    let dof = (groups.len() - 1) as f64;
    let dist = ChiSquared::new(dof).map_err(|e| Error::Domain(e.to_string()))?;
    Ok((stat, 1.0 - dist.cdf(stat)))
}
