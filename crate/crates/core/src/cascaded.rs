//! Markovian reference for the filter experiment: the atom cascaded into the filter
//! cavity and evolved as one system with collapse operators `C_T = sqrt(kappa) a` and
//! `C_R = sqrt(kappa) a + sqrt(gamma) sigma`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::atom::{AtomParams, AtomState};
use crate::error::{Error, Result};
use crate::output::{TraceRow, TrajectoryOutput};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Largest per-step jump probability accepted by [`CascadedModel::mcwf_step`].
pub const MAX_STEP_PROBABILITY: f64 = 0.1;

pub const DEFAULT_N_MAX: usize = 4;

/// Index of `|atom, m>` with atom 0 = g, 1 = e.
#[inline]
pub fn basis_index(atom: usize, m: usize, n_max: usize) -> usize {
    atom * (n_max + 1) + m
}

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// Cavity annihilation operator on the product space.
pub fn annihilation(n_max: usize) -> CMatrix {
    let dim = 2 * (n_max + 1);
    let mut a = CMatrix::zeros(dim, dim);
    for atom in 0..2 {
        for m in 1..=n_max {
            a[(basis_index(atom, m - 1, n_max), basis_index(atom, m, n_max))] = c((m as f64).sqrt());
        }
    }
    a
}

/// Atomic lowering operator on the product space.
pub fn atom_lowering(n_max: usize) -> CMatrix {
    let dim = 2 * (n_max + 1);
    let mut s = CMatrix::zeros(dim, dim);
    for m in 0..=n_max {
        s[(basis_index(0, m, n_max), basis_index(1, m, n_max))] = c(1.0);
    }
    s
}

/// `H_atom + (nu - i kappa) a^dag a - i (gamma/2 sigma^dag sigma + sqrt(gamma kappa) sigma a^dag)`.
pub fn build_heff(params: &AtomParams, kappa: f64, nu: f64, n_max: usize) -> Result<CMatrix> {
    if n_max < 2 {
        return Err(Error::Config(format!("n_max must be >= 2, got {n_max}")));
    }
    params.validate()?;
    if !(kappa >= 0.0) {
        return Err(Error::Config(format!("kappa must be >= 0, got {kappa}")));
    }
    let a = annihilation(n_max);
    let s = atom_lowering(n_max);
    let ad = a.adjoint();
    let sd = s.adjoint();
    let half_omega = c(0.5 * params.omega_rabi);
    let h_atom = (&sd + &s) * half_omega;
    let i = Complex64::new(0.0, 1.0);
    let n_op = &ad * &a;
    let h = h_atom + &n_op * Complex64::new(nu, -kappa)
        - (&sd * &s * c(0.5 * params.gamma) + &s * &ad * c((params.gamma * kappa).sqrt())) * i;
    Ok(h)
}

/// Reduced atomic state from the product-space amplitudes, as a Fock-resolved mixture.
pub fn reduced_atom_mixture(psi: &CVector, n_max: usize) -> Vec<(f64, AtomState)> {
    let norm = psi.norm_squared();
    (0..=n_max)
        .filter_map(|m| {
            let g = psi[basis_index(0, m, n_max)];
            let e = psi[basis_index(1, m, n_max)];
            let s = AtomState::new(g, e);
            let w = s.norm_sqr();
            (w > 0.0).then(|| (w / norm, s.normalized().expect("nonzero")))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct CascadedModel {
    pub params: AtomParams,
    pub kappa: f64,
    pub nu: f64,
    pub n_max: usize,
    pub dt: f64,
    /// `exp(-i H_eff dt)`.
    propagator: CMatrix,
    collapse: [CMatrix; 2],
}

/// Labels of the two collapse channels, matching the engine's filter channel order.
pub const CASCADED_LABELS: [&str; 2] = ["T", "R"];

impl CascadedModel {
    pub fn new(params: AtomParams, kappa: f64, nu: f64, n_max: usize, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::Config(format!("dt must be > 0, got {dt}")));
        }
        let h = build_heff(&params, kappa, nu, n_max)?;
        let propagator = (h * Complex64::new(0.0, -dt)).exp();
        let a = annihilation(n_max) * c(kappa.sqrt());
        let r = &a + atom_lowering(n_max) * c(params.gamma.sqrt());
        Ok(Self { params, kappa, nu, n_max, dt, propagator, collapse: [a, r] })
    }

    pub fn dim(&self) -> usize {
        2 * (self.n_max + 1)
    }

    pub fn collapse_operators(&self) -> &[CMatrix; 2] {
        &self.collapse
    }

    pub fn propagator(&self) -> &CMatrix {
        &self.propagator
    }

    /// Product state `|atom> x |0>`.
    pub fn initial_state(&self, atom: AtomState) -> CVector {
        let mut psi = CVector::zeros(self.dim());
        psi[basis_index(0, 0, self.n_max)] = atom.amp_g;
        psi[basis_index(1, 0, self.n_max)] = atom.amp_e;
        psi
    }

    /// Jump probabilities for the next step: `dt ||C_k U psi||^2 / ||psi||^2`.
    pub fn jump_probabilities(&self, psi: &CVector) -> (CVector, [f64; 2]) {
        let next = &self.propagator * psi;
        let norm = psi.norm_squared();
        let p = [0, 1].map(|k| self.dt * (&self.collapse[k] * &next).norm_squared() / norm);
        (next, p)
    }

    /// One MCWF step with a single uniform draw; the state is renormalised.
    pub fn mcwf_step<R: Rng + ?Sized>(&self, psi: &mut CVector, rng: &mut R) -> Result<Option<usize>> {
        self.mcwf_step_with_uniform(psi, rng.gen())
    }

    pub fn mcwf_step_with_uniform(&self, psi: &mut CVector, u: f64) -> Result<Option<usize>> {
        let (next, p) = self.jump_probabilities(psi);
        let total = p[0] + p[1];
        if total > MAX_STEP_PROBABILITY {
            return Err(Error::StepSize { step: 0, time: f64::NAN, total });
        }
        let jump = if u < p[0] {
            Some(0)
        } else if u < total {
            Some(1)
        } else {
            None
        };
        *psi = match jump {
            Some(k) => &self.collapse[k] * next,
            None => next,
        };
        let n = psi.norm();
        if !(n > 0.0) {
            return Err(Error::Degenerate("cascaded state collapsed to zero".into()));
        }
        *psi /= c(n);
        Ok(jump)
    }

    /// Population of the highest retained Fock level.
    pub fn top_fock_population(&self, psi: &CVector) -> f64 {
        let top = (0..2)
            .map(|a| psi[basis_index(a, self.n_max, self.n_max)].norm_sqr())
            .sum::<f64>();
        top / psi.norm_squared()
    }

    pub fn mean_photon_number(&self, psi: &CVector) -> f64 {
        let mut acc = 0.0;
        for atom in 0..2 {
            for m in 0..=self.n_max {
                acc += m as f64 * psi[basis_index(atom, m, self.n_max)].norm_sqr();
            }
        }
        acc / psi.norm_squared()
    }
}

/// Settings shared with the engine runner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadedRunOptions {
    pub duration: f64,
    pub target_detections: Option<u64>,
    pub trace_stride: usize,
    pub initial: AtomState,
}

impl CascadedRunOptions {
    pub fn new(duration: f64) -> Self {
        Self { duration, target_detections: None, trace_stride: 0, initial: AtomState::ground() }
    }
}

pub fn run_trajectory_cascaded(
    model: &CascadedModel,
    opts: &CascadedRunOptions,
    seed: u64,
) -> Result<TrajectoryOutput> {
    if !(opts.duration >= 0.0) || !opts.duration.is_finite() {
        return Err(Error::Config(format!("duration must be finite and >= 0, got {}", opts.duration)));
    }
    let dt = model.dt;
    let n_steps = (opts.duration / dt + 1e-9).floor() as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut psi = model.initial_state(
        opts.initial
            .normalized()
            .ok_or_else(|| Error::Degenerate("initial state has zero norm".into()))?,
    );
    let mut out = TrajectoryOutput::new(CASCADED_LABELS.iter().map(|s| s.to_string()).collect(), dt, 0.0, seed);
    let mut leak_sum = 0.0;
    let push_trace = |k: u64, psi: &CVector, probs: Vec<f64>, out: &mut TrajectoryOutput| -> Result<()> {
        if opts.trace_stride > 0 && k % opts.trace_stride as u64 == 0 {
            let (sx, sy, sz) = crate::atom::pauli_expectations(&reduced_atom_mixture(psi, model.n_max))?;
            out.trace.push(TraceRow { t: k as f64 * dt, sx, sy, sz, probs });
        }
        Ok(())
    };
    push_trace(0, &psi, vec![0.0; 2], &mut out)?;
    let mut k = 0u64;
    while k < n_steps {
        let (next, p) = model.jump_probabilities(&psi);
        let total = p[0] + p[1];
        if total > MAX_STEP_PROBABILITY {
            return Err(Error::StepSize { step: k + 1, time: (k + 1) as f64 * dt, total });
        }
        let u: f64 = rng.gen();
        let jump = if u < p[0] {
            Some(0)
        } else if u < total {
            Some(1)
        } else {
            None
        };
        psi = match jump {
            Some(j) => &model.collapse[j] * next,
            None => next,
        };
        let n = psi.norm();
        if !(n > 0.0) {
            return Err(Error::Degenerate("cascaded state collapsed to zero".into()));
        }
        psi /= c(n);
        k += 1;
        leak_sum += model.top_fock_population(&psi);
        push_trace(k, &psi, p.to_vec(), &mut out)?;
        if let Some(j) = jump {
            out.detections.push(crate::engine::DetectionRecord { time: k as f64 * dt, step: k, channel: j });
            if opts.target_detections.is_some_and(|t| out.detections.len() as u64 >= t) {
                break;
            }
        }
    }
    out.steps = k;
    out.duration = k as f64 * dt;
    out.truncation_leakage = Some(if k > 0 { leak_sum / k as f64 } else { 0.0 });
    Ok(out)
}
