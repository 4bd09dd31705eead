//! Deterministic references: optical Bloch equations, the Mollow spectrum from the
//! quantum regression theorem, ensemble averaging, and a plain Markovian MCWF.

use nalgebra::{Matrix4, Vector3, Vector4};
use num_complex::Complex64;
use ode_solvers::{Dop853, System};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::atom::{lower_ket, pauli_expectations, u_eff_unchecked, AtomParams, AtomState, Ket, Mat2};
use crate::channels::SpectralResponse;
use crate::engine::DetectionRecord;
use crate::error::{Error, Result};
use crate::output::{TraceRow, TrajectoryOutput};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlochState {
    pub sx: f64,
    pub sy: f64,
    pub sz: f64,
}

impl BlochState {
    pub const GROUND: BlochState = BlochState { sx: 0.0, sy: 0.0, sz: -1.0 };
    pub const EXCITED: BlochState = BlochState { sx: 0.0, sy: 0.0, sz: 1.0 };

    pub fn new(sx: f64, sy: f64, sz: f64) -> Result<Self> {
        let s = Self { sx, sy, sz };
        if s.length_sqr() > 1.0 + 1e-9 {
            return Err(Error::Domain(format!("Bloch vector ({sx}, {sy}, {sz}) outside the unit ball")));
        }
        Ok(s)
    }

    pub fn from_state(s: &AtomState) -> Result<Self> {
        let (sx, sy, sz) = pauli_expectations(&[(1.0, *s)])?;
        Ok(Self { sx, sy, sz })
    }

    pub fn length_sqr(&self) -> f64 {
        self.sx * self.sx + self.sy * self.sy + self.sz * self.sz
    }

    pub fn excited_population(&self) -> f64 {
        0.5 * (1.0 + self.sz)
    }

    fn to_vec(self) -> Vector3<f64> {
        Vector3::new(self.sx, self.sy, self.sz)
    }
}

struct BlochSystem {
    gamma: f64,
    omega: f64,
}

impl System<f64, Vector3<f64>> for BlochSystem {
    fn system(&self, _t: f64, s: &Vector3<f64>, ds: &mut Vector3<f64>) {
        let g = self.gamma;
        ds[0] = -0.5 * g * s[0];
        ds[1] = -0.5 * g * s[1] - self.omega * s[2];
        ds[2] = -g * (s[2] + 1.0) + self.omega * s[1];
    }
}

/// Resonance-fluorescence master equation in Bloch form, integrated adaptively.
pub fn bloch_evolve(initial: BlochState, params: &AtomParams, t: f64) -> Result<BlochState> {
    Ok(*bloch_evolve_many(initial, params, &[t])?.last().expect("one time"))
}

/// Bloch vector at each of the (nondecreasing) `times`.
pub fn bloch_evolve_many(initial: BlochState, params: &AtomParams, times: &[f64]) -> Result<Vec<BlochState>> {
    params.validate()?;
    let mut out = Vec::with_capacity(times.len());
    let mut s = initial.to_vec();
    let mut t0 = 0.0;
    for &t in times {
        if !(t >= t0) || !t.is_finite() {
            return Err(Error::Domain(format!("times must be finite and nondecreasing from 0, got {t}")));
        }
        if t > t0 {
            let sys = BlochSystem { gamma: params.gamma, omega: params.omega_rabi };
            // the output step also caps the internal step; keep it short
            let span = t - t0;
            let dx = span / (span / 0.01).ceil();
            let mut solver = Dop853::new(sys, t0, t, dx, s, 1e-12, 1e-13);
            solver
                .integrate()
                .map_err(|e| Error::Degenerate(format!("Bloch integration failed: {e:?}")))?;
            let last_x = *solver.x_out().last().expect("output");
            s = *solver.y_out().last().expect("output");
            if (last_x - t).abs() > 1e-9 * t.max(1.0) {
                return Err(Error::Degenerate("Bloch integration stopped early".into()));
            }
        }
        t0 = t;
        out.push(BlochState { sx: s[0], sy: s[1], sz: s[2] });
    }
    Ok(out)
}

/// Stationary Bloch vector on resonance.
pub fn steady_state(params: &AtomParams) -> BlochState {
    let g = params.gamma;
    let w = params.omega_rabi;
    let d = g * g + 2.0 * w * w;
    BlochState { sx: 0.0, sy: 2.0 * w * g / d, sz: -g * g / d }
}

/// Density-matrix generator on `vec(rho)` (column-major, basis {g, e}).
fn liouvillian(params: &AtomParams) -> Matrix4<Complex64> {
    let h = params.hamiltonian();
    let s = crate::atom::lowering();
    let id = Mat2::identity();
    let i = Complex64::new(0.0, 1.0);
    let sds = s.adjoint() * s;
    let g = Complex64::new(params.gamma, 0.0);
    let half = Complex64::new(0.5, 0.0);
    // vec(A X B) = (B^T kron A) vec(X)
    let kron = |a: &Mat2, b: &Mat2| a.kronecker(b);
    let l = -(kron(&id, &h) - kron(&h.transpose(), &id)) * i
        + (kron(&s.conjugate(), &s) - kron(&id, &sds) * half - kron(&sds.transpose(), &id) * half) * g;
    Matrix4::from_iterator(l.iter().copied())
}

fn rho_from_bloch(b: &BlochState) -> Mat2 {
    let c = |x: f64, y: f64| Complex64::new(x, y);
    // rho = (I + sx X + sy Y + sz Z)/2 with |e> the "up" state
    let rho_ee = 0.5 * (1.0 + b.sz);
    let rho_gg = 0.5 * (1.0 - b.sz);
    // <sigma> = rho_eg = (sx - i sy)/2, <sigma^dag> = rho_ge
    let rho_eg = c(0.5 * b.sx, -0.5 * b.sy);
    Mat2::new(c(rho_gg, 0.0), rho_eg.conj(), rho_eg, c(rho_ee, 0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MollowSpectrum {
    pub omega: Vec<f64>,
    /// Incoherent spectral density (photons per unit time per unit frequency).
    pub density: Vec<f64>,
    /// Rate of elastically scattered photons, `gamma |<sigma>|^2`, a delta at `omega = 0`.
    pub coherent_rate: f64,
    /// Total emission rate `gamma <sigma^dag sigma>`.
    pub total_rate: f64,
}

/// Default evaluation grid: `[-3 Omega, 3 Omega]` at spacing `gamma / 10`.
pub fn default_spectrum_grid(params: &AtomParams) -> Vec<f64> {
    let step = params.gamma / 10.0;
    let half = (3.0 * params.omega_rabi.max(params.gamma) / step).ceil() as i64;
    (-half..=half).map(|k| k as f64 * step).collect()
}

/// Stationary fluorescence spectrum from the regression theorem:
/// `S(omega) = (gamma/pi) Re int_0^inf (<sigma^dag(tau) sigma(0)> - |<sigma>|^2) e^{-i omega tau} d tau`.
pub fn mollow_spectrum(params: &AtomParams, omega_grid: &[f64]) -> Result<MollowSpectrum> {
    params.validate()?;
    if !(params.gamma > 0.0) {
        return Err(Error::Domain("the stationary spectrum needs gamma > 0".into()));
    }
    let l = liouvillian(params);
    let ss = steady_state(params);
    let rho = rho_from_bloch(&ss);
    let s = crate::atom::lowering();
    let mean_sigma = (s * rho).trace();
    let x = s * rho - rho * mean_sigma;
    let xv = Vector4::from_iterator(x.iter().copied());
    let sd = s.adjoint();
    // Tr[A Y] = sum_ij A_ji Y_ij = vec(A^T) . vec(Y)
    let probe = Vector4::from_iterator(sd.transpose().iter().copied());
    // X is traceless, so deflating the stationary mode by rho_ss tr(.) leaves the
    // solution unchanged while making the resolvent regular at omega = 0.
    let rho_v = Vector4::from_iterator(rho.iter().copied());
    let trace_v = Vector4::from_iterator(Mat2::identity().iter().copied());
    let deflated = l - rho_v * trace_v.transpose();
    let mut density = Vec::with_capacity(omega_grid.len());
    for &w in omega_grid {
        let m = Matrix4::identity() * Complex64::new(0.0, w) - deflated;
        let y = m
            .lu()
            .solve(&xv)
            .ok_or_else(|| Error::Degenerate(format!("singular resolvent at omega = {w}")))?;
        density.push(params.gamma / std::f64::consts::PI * probe.dot(&y).re);
    }
    Ok(MollowSpectrum {
        omega: omega_grid.to_vec(),
        density,
        coherent_rate: params.gamma * mean_sigma.norm_sqr(),
        total_rate: params.gamma * ss.excited_population(),
    })
}

impl MollowSpectrum {
    /// Trapezoidal integral of the incoherent density over the grid.
    pub fn incoherent_integral(&self) -> f64 {
        trapezoid(&self.omega, &self.density)
    }

    /// Local maxima of the incoherent density, by grid position.
    pub fn peaks(&self) -> Vec<f64> {
        let d = &self.density;
        (1..d.len().saturating_sub(1))
            .filter(|&i| d[i] > d[i - 1] && d[i] >= d[i + 1])
            .map(|i| self.omega[i])
            .collect()
    }

    /// Detection rate in each channel: `int S(omega) |S_n(omega)|^2 d omega`, with the
    /// coherent part weighted by `|S_n(0)|^2`.
    pub fn channel_rates<R: SpectralResponse>(&self, channels: &[R]) -> Vec<f64> {
        channels
            .iter()
            .map(|c| {
                let y: Vec<f64> = self
                    .omega
                    .iter()
                    .zip(&self.density)
                    .map(|(&w, &s)| s * c.response(w).norm_sqr())
                    .collect();
                trapezoid(&self.omega, &y) + self.coherent_rate * c.response(0.0).norm_sqr()
            })
            .collect()
    }

    /// Channel rates normalised to fractions of the total detected rate.
    pub fn channel_fractions<R: SpectralResponse>(&self, channels: &[R]) -> Vec<f64> {
        let r = self.channel_rates(channels);
        let total: f64 = r.iter().sum();
        r.into_iter().map(|x| x / total).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("omega,S\n");
        for (w, s) in self.omega.iter().zip(&self.density) {
            out.push_str(&format!("{w},{s:e}\n"));
        }
        out
    }
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xw, yw)| 0.5 * (xw[1] - xw[0]) * (yw[0] + yw[1]))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleAverage {
    pub t: Vec<f64>,
    pub mean: Vec<BlochState>,
    /// Standard error `sigma / sqrt(N)` per component.
    pub stderr: Vec<BlochState>,
    pub n: usize,
}

/// Pointwise mean of Bloch traces sampled on a common time grid.
pub fn ensemble_average(traces: &[Vec<TraceRow>]) -> Result<EnsembleAverage> {
    if traces.len() < 2 {
        return Err(Error::Domain("ensemble average needs at least two trajectories".into()));
    }
    let grid: Vec<f64> = traces[0].iter().map(|r| r.t).collect();
    for tr in traces {
        if tr.len() != grid.len() || tr.iter().zip(&grid).any(|(r, t)| (r.t - t).abs() > 1e-9) {
            return Err(Error::Alignment("trajectory traces are sampled on different grids".into()));
        }
    }
    let n = traces.len() as f64;
    let mut mean = Vec::with_capacity(grid.len());
    let mut stderr = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        let mut s = [0.0; 3];
        let mut q = [0.0; 3];
        for tr in traces {
            let v = [tr[i].sx, tr[i].sy, tr[i].sz];
            for k in 0..3 {
                s[k] += v[k];
                q[k] += v[k] * v[k];
            }
        }
        let m = s.map(|x| x / n);
        let e: Vec<f64> = (0..3)
            .map(|k| ((q[k] / n - m[k] * m[k]).max(0.0) * n / (n - 1.0) / n).sqrt())
            .collect();
        mean.push(BlochState { sx: m[0], sy: m[1], sz: m[2] });
        stderr.push(BlochState { sx: e[0], sy: e[1], sz: e[2] });
    }
    Ok(EnsembleAverage { t: grid, mean, stderr, n: traces.len() })
}

/// Standard Markovian quantum-jump simulation of the bare atom, using the same step
/// rule as the engine: `psi' = U psi`, `p = dt gamma |<e|psi'>|^2 / ||psi||^2`.
#[derive(Debug, Clone)]
pub struct MarkovMcwf {
    pub params: AtomParams,
    pub dt: f64,
    u: Mat2,
}

impl MarkovMcwf {
    pub fn new(params: AtomParams, dt: f64) -> Result<Self> {
        params.validate()?;
        if !(dt > 0.0) {
            return Err(Error::Config(format!("dt must be > 0, got {dt}")));
        }
        Ok(Self { params, dt, u: u_eff_unchecked(dt, &params) })
    }

    /// Advances a normalised state; returns the jump flag and the jump probability.
    pub fn step_with_uniform(&self, psi: &mut Ket, u: f64) -> Result<(bool, f64)> {
        let next = self.u * *psi;
        let p = self.dt * self.params.gamma * next[1].norm_sqr() / psi.norm_squared();
        if p > 1.0 {
            return Err(Error::StepSize { step: 0, time: f64::NAN, total: p });
        }
        let jump = u < p;
        *psi = if jump { lower_ket(&next) } else { next };
        let n = psi.norm();
        *psi /= Complex64::new(n, 0.0);
        Ok((jump, p))
    }

    pub fn run(&self, initial: AtomState, duration: f64, trace_stride: usize, seed: u64) -> Result<TrajectoryOutput> {
        let n_steps = (duration / self.dt + 1e-9).floor() as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut psi = initial
            .normalized()
            .ok_or_else(|| Error::Degenerate("initial state has zero norm".into()))?
            .to_ket();
        let mut out = TrajectoryOutput::new(vec!["M".into()], self.dt, self.dt, seed);
        let push = |k: u64, psi: &Ket, p: f64, out: &mut TrajectoryOutput| -> Result<()> {
            if trace_stride > 0 && k % trace_stride as u64 == 0 {
                let b = BlochState::from_state(&AtomState::from_ket(psi))?;
                out.trace.push(TraceRow { t: k as f64 * self.dt, sx: b.sx, sy: b.sy, sz: b.sz, probs: vec![p] });
            }
            Ok(())
        };
        push(0, &psi, 0.0, &mut out)?;
        for k in 1..=n_steps {
            let u: f64 = rng.gen();
            let (jump, p) = self.step_with_uniform(&mut psi, u)?;
            if jump {
                out.detections.push(DetectionRecord { time: k as f64 * self.dt, step: k, channel: 0 });
            }
            push(k, &psi, p, &mut out)?;
        }
        out.steps = n_steps;
        out.duration = n_steps as f64 * self.dt;
        Ok(out)
    }
}
