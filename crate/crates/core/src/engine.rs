//! Non-Markovian trajectory engine.
//!
//! The atom is evolved alone. Each detection in channel `n` at grid time `d` is
//! attributed to an emission at some earlier grid time `e` weighted by the channel
//! response, `sqrt(gamma) w_n[d - e]`. Emissions older than the window boundary are
//! frozen into *branch states*: `branches[mask]` is the atom state at the boundary given
//! that exactly the in-window detections in `mask` have already emitted. Everything after
//! the boundary is re-summed each step.
//!
//! Emission convention: an emission at grid point `e` applies `sigma` to the state already
//! propagated to `e`. A detection at `d` collects emissions at ages `j = 0 .. M-1`.

use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::atom::{lower_ket, pauli_expectations, u_eff_unchecked, AtomParams, AtomState, Ket, Mat2};
use crate::channels::ChannelResponse;
use crate::error::{Error, Result};
use crate::output::{TraceRow, TrajectoryOutput};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    /// Detection time (grid aligned).
    pub time: f64,
    /// Grid index of the detection.
    pub step: u64,
    /// Index into the channel list.
    pub channel: usize,
}

/// What to do when a detection would push the in-window count past the limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OverflowPolicy {
    /// Fold the oldest in-window detection into the boundary branches, moving its
    /// remaining emission amplitude to the boundary (exact when no other emission
    /// interleaves with it). Each fold is counted.
    #[default]
    SettleOldest,
    /// Fail with [`Error::WindowOverflow`].
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineOptions {
    pub max_in_window: usize,
    pub overflow: OverflowPolicy,
}

impl Default for EngineOptions {
    fn default() -> Self {
        Self { max_in_window: 2, overflow: OverflowPolicy::SettleOldest }
    }
}

/// Channel data and propagators shared by every trajectory of a run.
#[derive(Debug, Clone)]
pub struct NmModel {
    params: AtomParams,
    dt: f64,
    labels: Vec<String>,
    /// `sqrt(gamma) w_n[j]`.
    weights: Vec<Vec<Complex64>>,
    /// Window lag in grid steps: the longest channel support.
    lag: usize,
    u: Mat2,
    /// `U^k`, `k = 0..=lag`.
    u_pow: Vec<Mat2>,
    /// `fast[n][l] = sum_{j<l} sqrt(gamma) w_n[j] U^j sigma U^{l-j}`.
    fast: Vec<Vec<Mat2>>,
}

impl NmModel {
    pub fn new(params: AtomParams, channels: &[ChannelResponse]) -> Result<Self> {
        params.validate()?;
        let first = channels
            .first()
            .ok_or_else(|| Error::Config("at least one channel is required".into()))?;
        let dt = first.dt;
        if !(dt > 0.0) {
            return Err(Error::Config(format!("dt must be > 0, got {dt}")));
        }
        if channels.iter().any(|c| (c.dt - dt).abs() > 1e-12 * dt) {
            return Err(Error::Config("all channels must share the same dt".into()));
        }
        if channels.len() > 16 {
            return Err(Error::Config("at most 16 channels are supported".into()));
        }
        let sg = params.gamma.sqrt();
        let weights: Vec<Vec<Complex64>> = channels
            .iter()
            .map(|c| c.weights().into_iter().map(|w| w * sg).collect())
            .collect();
        let lag = weights.iter().map(Vec::len).max().unwrap_or(1).max(1);
        let u = u_eff_unchecked(dt, &params);
        let mut u_pow = Vec::with_capacity(lag + 1);
        u_pow.push(Mat2::identity());
        for k in 1..=lag {
            u_pow.push(u * u_pow[k - 1]);
        }
        let sigma = crate::atom::lowering();
        let fast = weights
            .iter()
            .map(|w| {
                (0..=lag)
                    .map(|l| {
                        let mut m = Mat2::zeros();
                        for (j, wj) in w.iter().enumerate().take(l) {
                            m += u_pow[j] * sigma * u_pow[l - j] * *wj;
                        }
                        m
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            params,
            dt,
            labels: channels.iter().map(|c| c.label.clone()).collect(),
            weights,
            lag,
            u,
            u_pow,
            fast,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn params(&self) -> &AtomParams {
        &self.params
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn n_channels(&self) -> usize {
        self.weights.len()
    }

    /// Window lag in grid steps.
    pub fn lag(&self) -> usize {
        self.lag
    }

    /// Memory time covered by the window.
    pub fn t_m(&self) -> f64 {
        self.lag as f64 * self.dt
    }

    #[inline]
    fn weight(&self, channel: usize, age: i64) -> Complex64 {
        let w = &self.weights[channel];
        if age < 0 || age as usize >= w.len() {
            Complex64::new(0.0, 0.0)
        } else {
            w[age as usize]
        }
    }
}

/// A branch of the boundary state, exposed for inspection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchState {
    /// Bit `k` set: the `k`-th oldest in-window detection emitted before the boundary.
    pub history_mask: u32,
    pub state: AtomState,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Pending {
    step: u64,
    channel: usize,
}

/// Unnormalised states for the next grid time, in the window's scaled frame.
#[derive(Debug, Clone, PartialEq)]
pub struct StepAmplitudes {
    pub no_jump: Ket,
    pub detection: Vec<Ket>,
}

#[derive(Debug, Clone)]
pub struct MemoryWindow {
    model: Arc<NmModel>,
    options: EngineOptions,
    boundary: u64,
    current: u64,
    pending: Vec<Pending>,
    branches: Vec<Ket>,
    /// Conditioned state at the current time (no detection beyond the recorded ones).
    state: Ket,
    /// `ln` of the common factor divided out of all branches.
    log_scale: f64,
    settle_events: u64,
}

impl MemoryWindow {
    pub fn new(model: Arc<NmModel>, initial: AtomState) -> Result<Self> {
        Self::with_options(model, initial, EngineOptions::default())
    }

    pub fn with_options(model: Arc<NmModel>, initial: AtomState, options: EngineOptions) -> Result<Self> {
        if options.max_in_window == 0 || options.max_in_window > 8 {
            return Err(Error::Config("max_in_window must be in 1..=8".into()));
        }
        let psi = initial
            .normalized()
            .ok_or_else(|| Error::Degenerate("initial state has zero norm".into()))?
            .to_ket();
        Ok(Self {
            model,
            options,
            boundary: 0,
            current: 0,
            pending: Vec::new(),
            branches: vec![psi],
            state: psi,
            log_scale: 0.0,
            settle_events: 0,
        })
    }

    pub fn model(&self) -> &NmModel {
        &self.model
    }

    pub fn boundary_time(&self) -> f64 {
        self.boundary as f64 * self.model.dt
    }

    pub fn current_time(&self) -> f64 {
        self.current as f64 * self.model.dt
    }

    pub fn current_step(&self) -> u64 {
        self.current
    }

    pub fn boundary_step(&self) -> u64 {
        self.boundary
    }

    pub fn in_window(&self) -> usize {
        self.pending.len()
    }

    /// Number of times the overflow policy folded a detection early.
    pub fn settle_events(&self) -> u64 {
        self.settle_events
    }

    pub fn branches(&self) -> Vec<BranchState> {
        self.branches
            .iter()
            .enumerate()
            .map(|(mask, k)| BranchState { history_mask: mask as u32, state: AtomState::from_ket(k) })
            .collect()
    }

    /// `<psi0(t)|psi0(t)>` of the conditioned, unnormalised state at the current time.
    pub fn window_normalization(&self) -> f64 {
        self.log_window_normalization().exp()
    }

    pub fn log_window_normalization(&self) -> f64 {
        self.state.norm_squared().ln() + 2.0 * self.log_scale
    }

    /// Survival amplitude at the next grid time, assuming no detection.
    pub fn no_jump_extend(&self) -> AtomState {
        let a = self.amplitudes();
        AtomState::from_ket(&(a.no_jump * Complex64::new(self.log_scale.exp(), 0.0)))
    }

    /// Unnormalised state at the next grid time given a detection in `channel` there.
    pub fn detection_amplitude(&self, channel: usize) -> Result<AtomState> {
        if channel >= self.model.n_channels() {
            return Err(Error::Domain(format!("no channel {channel}")));
        }
        let a = self.amplitudes();
        Ok(AtomState::from_ket(&(a.detection[channel] * Complex64::new(self.log_scale.exp(), 0.0))))
    }

    /// Detection probabilities for the next grid step.
    pub fn probabilities(&self) -> Vec<f64> {
        self.probabilities_from(&self.amplitudes())
    }

    fn probabilities_from(&self, amps: &StepAmplitudes) -> Vec<f64> {
        let denom = self.state.norm_squared();
        amps.detection
            .iter()
            .map(|a| self.model.dt * a.norm_squared() / denom)
            .collect()
    }

    /// Boundary state as a mixture `(P_k, psi_k)` over branches; `P_k` sum to one.
    pub fn conditioned_state(&self) -> Vec<(f64, AtomState)> {
        let total: f64 = self.branches.iter().map(|k| k.norm_squared()).sum();
        self.branches
            .iter()
            .filter(|k| k.norm_squared() > 0.0)
            .map(|k| {
                let w = k.norm_squared() / total;
                let s = AtomState::from_ket(k).normalized().expect("nonzero branch");
                (w, s)
            })
            .collect()
    }

    pub fn bloch(&self) -> Result<(f64, f64, f64)> {
        pauli_expectations(&self.conditioned_state())
    }

    #[inline]
    fn emission_weight(&self, p: &Pending, e: u64) -> Complex64 {
        self.model.weight(p.channel, p.step as i64 - e as i64)
    }

    /// States at the next grid time via the fast path or the subset recursion.
    pub fn amplitudes(&self) -> StepAmplitudes {
        let lag = (self.current + 1 - self.boundary) as usize;
        if self.pending.is_empty() {
            let psi = self.branches[0];
            return StepAmplitudes {
                no_jump: self.model.u_pow[lag] * psi,
                detection: self.model.fast.iter().map(|m| m[lag] * psi).collect(),
            };
        }
        self.subset_recursion(self.current + 1, true)
    }

    /// Forward recursion over emission times `e in (boundary, t_end]` for every subset of
    /// in-window detections; with `with_new`, also for a hypothetical detection at `t_end`
    /// in each channel.
    fn subset_recursion(&self, t_end: u64, with_new: bool) -> StepAmplitudes {
        let model = &*self.model;
        let nsub = self.branches.len();
        let nch = if with_new { model.n_channels() } else { 0 };
        let zero = Ket::zeros();
        let mut base = self.branches.clone();
        let mut fresh = vec![vec![zero; nsub]; nch];
        let mut ub = vec![zero; nsub];
        let mut un = vec![zero; nsub];
        let mut v = vec![Complex64::new(0.0, 0.0); self.pending.len()];
        for e in self.boundary + 1..=t_end {
            for (vi, p) in v.iter_mut().zip(&self.pending) {
                *vi = self.emission_weight(p, e);
            }
            for s in 0..nsub {
                ub[s] = model.u * base[s];
            }
            for (n, f) in fresh.iter_mut().enumerate() {
                for s in 0..nsub {
                    un[s] = model.u * f[s];
                }
                let vn = model.weight(n, (t_end - e) as i64);
                for s in 0..nsub {
                    let mut acc = un[s];
                    if vn != Complex64::new(0.0, 0.0) {
                        acc += lower_ket(&ub[s]) * vn;
                    }
                    for (i, vi) in v.iter().enumerate() {
                        if s & (1 << i) != 0 && *vi != Complex64::new(0.0, 0.0) {
                            acc += lower_ket(&un[s ^ (1 << i)]) * *vi;
                        }
                    }
                    f[s] = acc;
                }
            }
            for s in 0..nsub {
                let mut acc = ub[s];
                for (i, vi) in v.iter().enumerate() {
                    if s & (1 << i) != 0 && *vi != Complex64::new(0.0, 0.0) {
                        acc += lower_ket(&ub[s ^ (1 << i)]) * *vi;
                    }
                }
                base[s] = acc;
            }
        }
        StepAmplitudes {
            no_jump: base[nsub - 1],
            detection: fresh.into_iter().map(|f| f[nsub - 1]).collect(),
        }
    }

    /// Same quantities as [`Self::amplitudes`], by explicit enumeration of every ordered
    /// assignment of emission times. Cost grows as `lag^(detections + 1)`; for checks only.
    pub fn recompute_from_scratch(&self) -> StepAmplitudes {
        let model = &*self.model;
        let t_end = self.current + 1;
        let full = self.branches.len() - 1;
        let mut no_jump = Ket::zeros();
        let mut detection = vec![Ket::zeros(); model.n_channels()];
        for (mask, psi) in self.branches.iter().enumerate() {
            // detections still to emit after the boundary
            let todo: Vec<Pending> = self
                .pending
                .iter()
                .enumerate()
                .filter(|(i, _)| (full & !mask) & (1 << i) != 0)
                .map(|(_, p)| *p)
                .collect();
            no_jump += self.enumerate_emissions(psi, &todo, t_end);
            for (n, d) in detection.iter_mut().enumerate() {
                let mut with_new = todo.clone();
                with_new.push(Pending { step: t_end, channel: n });
                *d += self.enumerate_emissions(psi, &with_new, t_end);
            }
        }
        StepAmplitudes { no_jump, detection }
    }

    fn enumerate_emissions(&self, psi: &Ket, todo: &[Pending], t_end: u64) -> Ket {
        let times: Vec<u64> = (self.boundary + 1..=t_end).collect();
        let mut total = Ket::zeros();
        let mut chosen = vec![0u64; todo.len()];
        self.enumerate_rec(psi, todo, &times, 0, &mut chosen, t_end, &mut total);
        total
    }

    #[allow(clippy::too_many_arguments)]
    fn enumerate_rec(
        &self,
        psi: &Ket,
        todo: &[Pending],
        times: &[u64],
        depth: usize,
        chosen: &mut Vec<u64>,
        t_end: u64,
        total: &mut Ket,
    ) {
        if depth == todo.len() {
            let mut order: Vec<usize> = (0..todo.len()).collect();
            order.sort_by_key(|&i| chosen[i]);
            let mut state = *psi;
            let mut t = self.boundary;
            let mut coeff = Complex64::new(1.0, 0.0);
            for &i in &order {
                let e = chosen[i];
                state = u_eff_unchecked((e - t) as f64 * self.model.dt, &self.model.params) * state;
                state = lower_ket(&state);
                coeff *= self.emission_weight(&todo[i], e);
                t = e;
            }
            state = u_eff_unchecked((t_end - t) as f64 * self.model.dt, &self.model.params) * state;
            *total += state * coeff;
            return;
        }
        for &e in times {
            if chosen[..depth].contains(&e) {
                continue;
            }
            if self.emission_weight(&todo[depth], e) == Complex64::new(0.0, 0.0) {
                continue;
            }
            chosen[depth] = e;
            self.enumerate_rec(psi, todo, times, depth + 1, chosen, t_end, total);
        }
    }

    /// One grid step: detection decision with a single uniform draw, then the bookkeeping.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Option<DetectionRecord>> {
        let amps = self.amplitudes();
        let probs = self.probabilities_from(&amps);
        let u: f64 = rng.gen();
        self.apply(amps, &probs, u)
    }

    /// Step using a caller-supplied uniform number; returns the record and probabilities.
    pub fn step_with_uniform(&mut self, u: f64) -> Result<(Option<DetectionRecord>, Vec<f64>)> {
        let amps = self.amplitudes();
        let probs = self.probabilities_from(&amps);
        let rec = self.apply(amps, &probs, u)?;
        Ok((rec, probs))
    }

    fn apply(&mut self, amps: StepAmplitudes, probs: &[f64], u: f64) -> Result<Option<DetectionRecord>> {
        let total: f64 = probs.iter().sum();
        if !(total <= 1.0) {
            return Err(Error::StepSize {
                step: self.current + 1,
                time: (self.current + 1) as f64 * self.model.dt,
                total,
            });
        }
        let mut chosen = None;
        let mut cum = 0.0;
        for (n, p) in probs.iter().enumerate() {
            cum += p;
            if u < cum {
                chosen = Some(n);
                break;
            }
        }
        self.current += 1;
        let record = match chosen {
            None => {
                self.state = amps.no_jump;
                None
            }
            Some(n) => {
                self.state = amps.detection[n];
                let mut refold = false;
                if self.pending.len() >= self.options.max_in_window {
                    match self.options.overflow {
                        OverflowPolicy::Error => {
                            return Err(Error::WindowOverflow {
                                time: self.current_time(),
                                in_window: self.pending.len() + 1,
                            })
                        }
                        OverflowPolicy::SettleOldest => {
                            self.fold_oldest();
                            refold = true;
                        }
                    }
                }
                let nsub = self.branches.len();
                self.branches.resize(2 * nsub, Ket::zeros());
                self.pending.push(Pending { step: self.current, channel: n });
                if refold {
                    // keep the denominator consistent with the folded branches
                    let fresh = self.subset_recursion(self.current, false);
                    self.state = fresh.no_jump;
                }
                Some(DetectionRecord { time: self.current_time(), step: self.current, channel: n })
            }
        };
        if (self.current - self.boundary) as usize >= self.model.lag {
            self.advance_boundary();
        }
        self.renormalize()?;
        Ok(record)
    }

    fn advance_boundary(&mut self) {
        let model = &*self.model;
        let e = self.boundary + 1;
        let ub: Vec<Ket> = self.branches.iter().map(|k| model.u * k).collect();
        let v: Vec<Complex64> = self.pending.iter().map(|p| self.emission_weight(p, e)).collect();
        for s in 0..self.branches.len() {
            let mut acc = ub[s];
            for (i, vi) in v.iter().enumerate() {
                if s & (1 << i) != 0 {
                    acc += lower_ket(&ub[s ^ (1 << i)]) * *vi;
                }
            }
            self.branches[s] = acc;
        }
        self.boundary = e;
        // detections whose emission is now certainly behind the boundary
        while let Some(p) = self.pending.first() {
            if p.step > self.boundary {
                break;
            }
            self.drop_oldest_keeping_emitted();
        }
    }

    /// Remove bit 0, keeping only the branches in which it has emitted.
    fn drop_oldest_keeping_emitted(&mut self) {
        let half = self.branches.len() / 2;
        let kept: Vec<Ket> = (0..half).map(|s| self.branches[(s << 1) | 1]).collect();
        self.branches = kept;
        self.pending.remove(0);
    }

    /// Move the oldest detection's emission to the boundary (Heisenberg-reordered) and
    /// remove it from the window.
    fn fold_oldest(&mut self) {
        let model = &*self.model;
        let p = self.pending[0];
        let mut fold = Mat2::zeros();
        let sigma = crate::atom::lowering();
        for e in self.boundary + 1..=p.step {
            let w = self.emission_weight(&p, e);
            if w == Complex64::new(0.0, 0.0) {
                continue;
            }
            let k = (e - self.boundary) as usize;
            let fwd = if k < model.u_pow.len() {
                model.u_pow[k]
            } else {
                u_eff_unchecked(k as f64 * model.dt, &model.params)
            };
            let inv = fwd.try_inverse().unwrap_or_else(Mat2::zeros);
            fold += inv * sigma * fwd * w;
        }
        let half = self.branches.len() / 2;
        let folded: Vec<Ket> = (0..half)
            .map(|s| self.branches[(s << 1) | 1] + fold * self.branches[s << 1])
            .collect();
        self.branches = folded;
        self.pending.remove(0);
        self.settle_events += 1;
    }

    fn renormalize(&mut self) -> Result<()> {
        let total: f64 = self.branches.iter().map(|k| k.norm_squared()).sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::Degenerate(format!(
                "branch norm {total} at t = {}",
                self.current_time()
            )));
        }
        let f = total.sqrt();
        let inv = Complex64::new(1.0 / f, 0.0);
        for k in &mut self.branches {
            *k *= inv;
        }
        self.state *= inv;
        self.log_scale += f.ln();
        Ok(())
    }
}

/// Settings for a whole trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub duration: f64,
    /// Stop once this many detections have been recorded (`duration` is then a cap).
    pub target_detections: Option<u64>,
    /// Record a trace row every `trace_stride` boundary steps; 0 disables traces.
    pub trace_stride: usize,
    pub initial: AtomState,
    pub engine: EngineOptions,
}

impl RunOptions {
    pub fn new(duration: f64) -> Self {
        Self {
            duration,
            target_detections: None,
            trace_stride: 0,
            initial: AtomState::ground(),
            engine: EngineOptions::default(),
        }
    }
}

/// Runs one trajectory from a fresh window seeded with `seed`.
pub fn run_trajectory(model: Arc<NmModel>, opts: &RunOptions, seed: u64) -> Result<TrajectoryOutput> {
    if !(opts.duration >= 0.0) || !opts.duration.is_finite() {
        return Err(Error::Config(format!("duration must be finite and >= 0, got {}", opts.duration)));
    }
    let dt = model.dt;
    let lag = model.lag as u64;
    let n_steps = (opts.duration / dt + 1e-9).floor() as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut window = MemoryWindow::with_options(model.clone(), opts.initial, opts.engine)?;
    let mut out = TrajectoryOutput::new(model.labels.clone(), dt, model.t_m(), seed);
    // probabilities by grid index, kept until the boundary catches up
    let mut recent: std::collections::VecDeque<(u64, Vec<f64>)> = std::collections::VecDeque::new();
    let nch = model.n_channels();
    let mut last_boundary = None;
    let mut record_trace = |window: &MemoryWindow,
                            recent: &std::collections::VecDeque<(u64, Vec<f64>)>,
                            out: &mut TrajectoryOutput|
     -> Result<()> {
        if opts.trace_stride == 0 {
            return Ok(());
        }
        let b = window.boundary_step();
        if last_boundary == Some(b) || b % opts.trace_stride as u64 != 0 {
            return Ok(());
        }
        last_boundary = Some(b);
        let (sx, sy, sz) = window.bloch()?;
        let probs = recent
            .iter()
            .find(|(k, _)| *k == b)
            .map(|(_, p)| p.clone())
            .unwrap_or_else(|| vec![0.0; nch]);
        out.trace.push(TraceRow { t: b as f64 * dt, sx, sy, sz, probs });
        Ok(())
    };
    record_trace(&window, &recent, &mut out)?;
    for _ in 0..n_steps {
        let amps = window.amplitudes();
        let probs = window.probabilities_from(&amps);
        let u: f64 = rng.gen();
        let rec = window.apply(amps, &probs, u)?;
        if opts.trace_stride > 0 {
            recent.push_back((window.current_step(), probs));
            while recent.len() > lag as usize + 2 {
                recent.pop_front();
            }
        }
        record_trace(&window, &recent, &mut out)?;
        if let Some(r) = rec {
            out.detections.push(r);
            if opts.target_detections.is_some_and(|t| out.detections.len() as u64 >= t) {
                break;
            }
        }
    }
    out.steps = window.current_step();
    out.duration = window.current_time();
    out.settle_events = window.settle_events();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::{filter_responses, prism_channels};
    use rand::rngs::StdRng;

    fn markov_model(gamma: f64, omega: f64, dt: f64) -> Arc<NmModel> {
        let p = AtomParams::new(gamma, omega).unwrap();
        Arc::new(NmModel::new(p, &[ChannelResponse::markov("M", dt)]).unwrap())
    }

    fn filter_model() -> Arc<NmModel> {
        let p = AtomParams::new(1.0, 10.0).unwrap();
        let (t, r) = filter_responses(5.0, 0.0, 1.0 / 200.0, 1.0).unwrap();
        Arc::new(NmModel::new(p, &[t, r]).unwrap())
    }

    fn prism_model() -> Arc<NmModel> {
        let p = AtomParams::new(1.0, 10.0).unwrap();
        let ch = prism_channels(&[-10.0, 0.0, 10.0], 10.0, 1.0 / 200.0, 1.0).unwrap();
        Arc::new(NmModel::new(p, &ch).unwrap())
    }

    fn rel_diff(a: &Ket, b: &Ket) -> f64 {
        (a - b).norm() / b.norm().max(1e-300)
    }

    #[test]
    fn fresh_window_normalization_is_one() {
        let w = MemoryWindow::new(filter_model(), AtomState::ground()).unwrap();
        assert!((w.window_normalization() - 1.0).abs() < 1e-15);
        let mix = w.conditioned_state();
        assert_eq!(mix.len(), 1);
        assert_eq!(mix[0].0, 1.0);
    }

    #[test]
    fn ground_atom_without_drive_never_emits() {
        let model = filter_model();
        let p = AtomParams::new(1.0, 0.0).unwrap();
        let (t, r) = filter_responses(5.0, 0.0, 1.0 / 200.0, 1.0).unwrap();
        let _ = model;
        let model = Arc::new(NmModel::new(p, &[t, r]).unwrap());
        let mut w = MemoryWindow::new(model, AtomState::ground()).unwrap();
        let mut rng = StdRng::seed_from_u64(1);
        for _ in 0..500 {
            for n in 0..2 {
                assert_eq!(w.detection_amplitude(n).unwrap().norm_sqr(), 0.0);
            }
            assert!(w.step(&mut rng).unwrap().is_none());
            assert!((w.window_normalization() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn excited_survival_decays_exponentially() {
        let gamma = 1.0;
        let dt = 1e-3;
        let model = markov_model(gamma, 0.0, dt);
        let mut w = MemoryWindow::new(model, AtomState::excited()).unwrap();
        for k in 1..=2000 {
            // u = 1 never detects
            w.step_with_uniform(1.0).unwrap();
            if k % 500 == 0 {
                let t = k as f64 * dt;
                let exact = (-gamma * t).exp();
                assert!((w.window_normalization() - exact).abs() < 1e-12 * exact.max(1.0));
            }
        }
        // filter channels: survival still e^{-gamma t} since the atom is undriven
        let p = AtomParams::new(1.0, 0.0).unwrap();
        let (t, r) = filter_responses(5.0, 0.0, 1.0 / 200.0, 1.0).unwrap();
        let model = Arc::new(NmModel::new(p, &[t, r]).unwrap());
        let mut w = MemoryWindow::new(model, AtomState::excited()).unwrap();
        for _ in 0..400 {
            w.step_with_uniform(1.0).unwrap();
        }
        let exact = (-w.current_time()).exp();
        assert!((w.window_normalization() - exact).abs() < 1e-12);
    }

    #[test]
    fn step_rejects_oversized_probability() {
        let model = markov_model(1.0, 0.0, 2.0);
        let mut w = MemoryWindow::new(model, AtomState::excited()).unwrap();
        // dt * gamma * |U_ee|^2 with dt = 2 is e^{-2} * 2 < 1; use a huge gamma instead
        let _ = w.step_with_uniform(1.0);
        let p = AtomParams::new(1000.0, 0.0).unwrap();
        let model = Arc::new(NmModel::new(p, &[ChannelResponse::markov("M", 1e-4)]).unwrap());
        let mut w = MemoryWindow::new(model, AtomState::excited()).unwrap();
        w.step_with_uniform(1.0).unwrap();
        let p = AtomParams::new(1.0, 0.0).unwrap();
        let mut big = ChannelResponse::markov("M", 0.5);
        big.delta_coeff = Complex64::new(3.0, 0.0);
        let model = Arc::new(NmModel::new(p, &[big]).unwrap());
        let mut w = MemoryWindow::new(model, AtomState::excited()).unwrap();
        assert!(matches!(w.step_with_uniform(0.5), Err(Error::StepSize { .. })));
    }

    #[test]
    fn decoupled_bath_evolves_unitarily() {
        let p = AtomParams::new(0.0, 3.0).unwrap();
        let (t, r) = filter_responses(5.0, 0.0, 1.0 / 200.0, 1.0).unwrap();
        let model = Arc::new(NmModel::new(p, &[t, r]).unwrap());
        let out = run_trajectory(model, &RunOptions { trace_stride: 10, ..RunOptions::new(5.0) }, 3).unwrap();
        assert!(out.detections.is_empty());
        for row in &out.trace {
            let exact_sz = -(3.0 * row.t).cos();
            assert!((row.sz - exact_sz).abs() < 1e-9, "t={} sz={} vs {}", row.t, row.sz, exact_sz);
        }
    }

    #[test]
    fn incremental_matches_enumeration_with_detections() {
        for model in [filter_model(), prism_model()] {
            let mut w = MemoryWindow::new(model.clone(), AtomState::ground()).unwrap();
            // fill the window, then force detections in different channels
            let plan = [(150u64, 0usize), (230, 1), (300, 0)];
            let mut checked = 0;
            for k in 0..420u64 {
                let forced = plan.iter().find(|(s, _)| *s == k + 1).map(|(_, n)| *n);
                let amps = w.amplitudes();
                let probs = w.probabilities();
                if k % 37 == 0 || forced.is_some() {
                    let brute = w.recompute_from_scratch();
                    assert!(rel_diff(&amps.no_jump, &brute.no_jump) < 1e-10);
                    for (a, b) in amps.detection.iter().zip(&brute.detection) {
                        if b.norm() > 0.0 {
                            assert!(rel_diff(a, b) < 1e-10, "step {k}");
                        }
                    }
                    checked += 1;
                }
                let u = match forced {
                    Some(n) => probs[..n].iter().sum::<f64>() + 0.5 * probs[n],
                    None => 1.0,
                };
                let (rec, _) = w.step_with_uniform(u).unwrap();
                assert_eq!(rec.map(|r| r.channel), forced);
            }
            assert!(checked > 10);
        }
    }

    #[test]
    fn branch_weights_sum_to_one() {
        let model = filter_model();
        let mut w = MemoryWindow::new(model, AtomState::ground()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut max_branches = 0;
        for _ in 0..4000 {
            w.step(&mut rng).unwrap();
            let total: f64 = w.conditioned_state().iter().map(|(p, _)| p).sum();
            assert!((total - 1.0).abs() < 1e-12);
            max_branches = max_branches.max(w.branches().len());
            let p: f64 = w.probabilities().iter().sum();
            assert!((0.0..=1.0).contains(&p));
        }
        assert!(max_branches >= 2);
    }

    #[test]
    fn filter_trace_keeps_sigma_x_zero() {
        let out = run_trajectory(filter_model(), &RunOptions { trace_stride: 1, ..RunOptions::new(20.0) }, 5).unwrap();
        assert!(!out.detections.is_empty());
        for row in &out.trace {
            assert!(row.sx.abs() < 1e-6);
        }
    }

    #[test]
    fn seed_determinism() {
        let opts = RunOptions { trace_stride: 20, ..RunOptions::new(10.0) };
        let a = run_trajectory(prism_model(), &opts, 99).unwrap();
        let b = run_trajectory(prism_model(), &opts, 99).unwrap();
        assert_eq!(a.detections, b.detections);
        assert_eq!(a.trace, b.trace);
        let c = run_trajectory(prism_model(), &opts, 100).unwrap();
        assert_ne!(a.detections, c.detections);
    }

    #[test]
    fn zero_duration_is_empty() {
        let out = run_trajectory(filter_model(), &RunOptions::new(0.0), 1).unwrap();
        assert!(out.detections.is_empty());
        assert_eq!(out.steps, 0);
    }

    #[test]
    fn overflow_policy_error_and_fold() {
        let model = filter_model();
        let opts = EngineOptions { max_in_window: 1, overflow: OverflowPolicy::Error };
        let mut w = MemoryWindow::with_options(model.clone(), AtomState::ground(), opts).unwrap();
        let mut hit = false;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20_000 {
            match w.step(&mut rng) {
                Err(Error::WindowOverflow { in_window, .. }) => {
                    assert_eq!(in_window, 2);
                    hit = true;
                    break;
                }
                r => {
                    r.unwrap();
                }
            }
        }
        assert!(hit);
        let opts = EngineOptions { max_in_window: 1, overflow: OverflowPolicy::SettleOldest };
        let mut w = MemoryWindow::with_options(model, AtomState::ground(), opts).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20_000 {
            w.step(&mut rng).unwrap();
            assert!(w.in_window() <= 1);
        }
        assert!(w.settle_events() > 0);
    }

    #[test]
    fn target_detections_stops_early() {
        let opts = RunOptions { target_detections: Some(5), ..RunOptions::new(1000.0) };
        let out = run_trajectory(filter_model(), &opts, 4).unwrap();
        assert_eq!(out.detections.len(), 5);
        assert!(out.duration < 1000.0);
        for pair in out.detections.windows(2) {
            assert!(pair[0].time < pair[1].time);
        }
    }
}
