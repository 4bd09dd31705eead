//! Driven two-level atom: basis `{|g>, |e>}`, lowering operator `sigma = |g><e|`,
//! and the resonant drive `H = (Omega/2)(sigma^dag + sigma)`.

use nalgebra::{Matrix2, Vector2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Mat2 = Matrix2<Complex64>;
pub type Ket = Vector2<Complex64>;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Tolerance on `|norm^2 - 1|` for a state that claims to be normalized.
pub const NORMALIZED_TOL: f64 = 1e-12;

/// Two-level wavefunction, possibly unnormalized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtomState {
    pub amp_g: Complex64,
    pub amp_e: Complex64,
}

impl AtomState {
    pub const fn new(amp_g: Complex64, amp_e: Complex64) -> Self {
        Self { amp_g, amp_e }
    }

    pub const fn ground() -> Self {
        Self::new(ONE, ZERO)
    }

    pub const fn excited() -> Self {
        Self::new(ZERO, ONE)
    }

    pub const fn zero() -> Self {
        Self::new(ZERO, ZERO)
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amp_g.norm_sqr() + self.amp_e.norm_sqr()
    }

    pub fn is_normalized(&self) -> bool {
        (self.norm_sqr() - 1.0).abs() < NORMALIZED_TOL
    }

    /// Returns the normalized state, or `None` for the zero vector.
    pub fn normalized(&self) -> Option<Self> {
        let n = self.norm_sqr();
        if n > 0.0 && n.is_finite() {
            let s = 1.0 / n.sqrt();
            Some(Self::new(self.amp_g * s, self.amp_e * s))
        } else {
            None
        }
    }

    pub fn to_ket(self) -> Ket {
        Ket::new(self.amp_g, self.amp_e)
    }

    pub fn from_ket(k: &Ket) -> Self {
        Self::new(k[0], k[1])
    }

    /// Unnormalized `(<sx>, <sy>, <sz>)` weighted by `norm^2`.
    fn pauli_moments(&self) -> (f64, f64, f64) {
        let coh = self.amp_g.conj() * self.amp_e;
        (
            2.0 * coh.re,
            -2.0 * coh.im,
            self.amp_e.norm_sqr() - self.amp_g.norm_sqr(),
        )
    }
}

/// Physical rates of the atom. `gamma` sets the unit of inverse time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtomParams {
    pub gamma: f64,
    pub omega_rabi: f64,
}

impl AtomParams {
    pub fn new(gamma: f64, omega_rabi: f64) -> Result<Self> {
        let p = Self { gamma, omega_rabi };
        p.validate()?;
        Ok(p)
    }

    /// Validation used by the public constructors. `gamma = 0` is accepted here so that the
    /// decoupled-bath limit can be exercised; config-level validation demands `gamma > 0`.
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Domain(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if !(self.omega_rabi >= 0.0 && self.omega_rabi.is_finite()) {
            return Err(Error::Domain(format!(
                "omega_rabi must be >= 0, got {}",
                self.omega_rabi
            )));
        }
        Ok(())
    }

    /// `H_atom = (Omega/2)(sigma^dag + sigma)` in the `{g, e}` basis.
    pub fn hamiltonian(&self) -> Mat2 {
        let h = Complex64::new(0.5 * self.omega_rabi, 0.0);
        Mat2::new(ZERO, h, h, ZERO)
    }

    /// `-i H_atom - (gamma/2) sigma^dag sigma`.
    pub fn generator(&self) -> Mat2 {
        let off = Complex64::new(0.0, -0.5 * self.omega_rabi);
        Mat2::new(ZERO, off, off, Complex64::new(-0.5 * self.gamma, 0.0))
    }
}

/// `sigma = |g><e|`.
pub fn lowering() -> Mat2 {
    Mat2::new(ZERO, ONE, ZERO, ZERO)
}

/// Closed-form `exp{[-i H_atom - (gamma/2) sigma^dag sigma] tau}`.
///
/// The generator is `(tr/2) I + N` with `N^2 = mu^2 I`, so
/// `exp(G tau) = e^{tr tau / 2} [cosh(mu tau) I + sinh(mu tau)/mu N]`.
pub fn u_eff(tau: f64, params: &AtomParams) -> Result<Mat2> {
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(Error::Domain(format!("propagation time must be >= 0, got {tau}")));
    }
    Ok(u_eff_unchecked(tau, params))
}

pub(crate) fn u_eff_unchecked(tau: f64, params: &AtomParams) -> Mat2 {
    let g = params.gamma;
    let w = params.omega_rabi;
    let n = Mat2::new(
        Complex64::new(0.25 * g, 0.0),
        Complex64::new(0.0, -0.5 * w),
        Complex64::new(0.0, -0.5 * w),
        Complex64::new(-0.25 * g, 0.0),
    );
    let mu = Complex64::new(g * g / 16.0 - w * w / 4.0, 0.0).sqrt();
    let z = mu * tau;
    let cosh = z.cosh();
    // sinh(z)/mu = tau * sinh(z)/z, with the series near z = 0.
    let sinhc = if z.norm() < 1e-4 {
        let z2 = z * z;
        ONE + z2 / 6.0 + z2 * z2 / 120.0
    } else {
        z.sinh() / z
    };
    let prefactor = (-0.25 * g * tau).exp();
    (Mat2::identity() * cosh + n * (sinhc * tau)) * Complex64::new(prefactor, 0.0)
}

/// `sigma` applied to a state: `(g, e) -> (e, 0)`.
pub fn apply_lowering(state: &AtomState) -> AtomState {
    AtomState::new(state.amp_e, ZERO)
}

#[inline]
pub(crate) fn lower_ket(k: &Ket) -> Ket {
    Ket::new(k[1], ZERO)
}

/// Expectation values of `(sigma_x, sigma_y, sigma_z)` for a weighted mixture of
/// (possibly unnormalized) states; each state contributes `weight * |psi><psi|`.
pub fn pauli_expectations(mixture: &[(f64, AtomState)]) -> Result<(f64, f64, f64)> {
    let mut total = 0.0;
    let (mut sx, mut sy, mut sz) = (0.0, 0.0, 0.0);
    for (w, s) in mixture {
        if !(*w >= 0.0) {
            return Err(Error::Domain(format!("mixture weight must be >= 0, got {w}")));
        }
        let (x, y, z) = s.pauli_moments();
        total += w * s.norm_sqr();
        sx += w * x;
        sy += w * y;
        sz += w * z;
    }
    if !(total > 0.0) {
        return Err(Error::Degenerate("mixture has zero total weight".into()));
    }
    Ok((sx / total, sy / total, sz / total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ode_solvers::{Dop853, System, Vector4};
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn max_abs_diff(a: &Mat2, b: &Mat2) -> f64 {
        (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    struct Schrodinger {
        gen: Mat2,
    }

    impl System<f64, Vector4<f64>> for Schrodinger {
        fn system(&self, _t: f64, y: &Vector4<f64>, dy: &mut Vector4<f64>) {
            let k = Ket::new(c(y[0], y[1]), c(y[2], y[3]));
            let d = self.gen * k;
            dy[0] = d[0].re;
            dy[1] = d[0].im;
            dy[2] = d[1].re;
            dy[3] = d[1].im;
        }
    }

    /// Column `j` of `exp(G tau)` by adaptive integration of `d psi/dt = G psi`.
    fn ode_column(params: &AtomParams, tau: f64, j: usize) -> Ket {
        let mut y0 = Vector4::zeros();
        y0[2 * j] = 1.0;
        let sys = Schrodinger { gen: params.generator() };
        let mut solver = Dop853::new(sys, 0.0, tau, tau / 1000.0, y0, 1e-13, 1e-14);
        solver.integrate().unwrap();
        let y = solver.y_out().last().unwrap();
        Ket::new(c(y[0], y[1]), c(y[2], y[3]))
    }

    #[test]
    fn zero_time_is_identity() {
        let p = AtomParams::new(1.0, 10.0).unwrap();
        assert!(max_abs_diff(&u_eff(0.0, &p).unwrap(), &Mat2::identity()) < 1e-15);
    }

    #[test]
    fn undriven_levels_decouple() {
        let p = AtomParams::new(1.0, 0.0).unwrap();
        let u = u_eff(1.0, &p).unwrap();
        let expected = Mat2::new(ONE, ZERO, ZERO, c((-0.5f64).exp(), 0.0));
        assert!(max_abs_diff(&u, &expected) < 1e-14);
    }

    #[test]
    fn matches_adaptive_ode_integration() {
        let p = AtomParams::new(1.0, 10.0).unwrap();
        let u = u_eff(0.1, &p).unwrap();
        for j in 0..2 {
            let col = ode_column(&p, 0.1, j);
            for i in 0..2 {
                assert!((u[(i, j)] - col[i]).norm() < 1e-10, "entry ({i},{j}) {} vs {}", u[(i, j)], col[i]);
            }
        }
    }

    #[test]
    fn critical_damping_uses_series() {
        // gamma^2/16 = Omega^2/4 makes mu vanish.
        let p = AtomParams::new(2.0, 1.0).unwrap();
        let u = u_eff(0.7, &p).unwrap();
        for j in 0..2 {
            let col = ode_column(&p, 0.7, j);
            for i in 0..2 {
                assert!((u[(i, j)] - col[i]).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn negative_time_rejected() {
        let p = AtomParams::new(1.0, 1.0).unwrap();
        assert!(matches!(u_eff(-1e-3, &p), Err(Error::Domain(_))));
    }

    #[test]
    fn lowering_action() {
        let e = AtomState::excited();
        assert_eq!(apply_lowering(&e), AtomState::ground());
        assert_eq!(apply_lowering(&AtomState::ground()), AtomState::zero());
        let s = AtomState::new(c(0.3, 0.1), c(-0.2, 0.7));
        assert_eq!(apply_lowering(&apply_lowering(&s)), AtomState::zero());
    }

    #[test]
    fn pauli_examples() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let g = pauli_expectations(&[(1.0, AtomState::ground())]).unwrap();
        assert_eq!(g, (0.0, 0.0, -1.0));
        let plus = AtomState::new(c(h, 0.0), c(h, 0.0));
        let minus = AtomState::new(c(h, 0.0), c(-h, 0.0));
        let (x, y, z) = pauli_expectations(&[(1.0, plus)]).unwrap();
        assert!((x - 1.0).abs() < 1e-15 && y.abs() < 1e-15 && z.abs() < 1e-15);
        let (x, y, z) = pauli_expectations(&[(0.5, plus), (0.5, minus)]).unwrap();
        assert!(x.abs() < 1e-15 && y.abs() < 1e-15 && z.abs() < 1e-15);
        assert!(matches!(
            pauli_expectations(&[(0.0, plus), (1.0, AtomState::zero())]),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn sigma_x_is_conserved_without_decay() {
        let p = AtomParams::new(0.0, 10.0).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let plus = AtomState::new(c(h, 0.0), c(h, 0.0));
        for k in 1..50 {
            let u = u_eff(0.037 * k as f64, &p).unwrap();
            let s = AtomState::from_ket(&(u * plus.to_ket()));
            let (x, _, _) = pauli_expectations(&[(1.0, s)]).unwrap();
            assert!((x - 1.0).abs() < 1e-10);
        }
    }

    fn arb_state() -> impl Strategy<Value = AtomState> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
            .prop_filter("nonzero", |(a, b, c2, d)| a * a + b * b + c2 * c2 + d * d > 1e-6)
            .prop_map(|(a, b, c2, d)| AtomState::new(c(a, b), c(c2, d)).normalized().unwrap())
    }

    proptest! {
        #[test]
        fn composition_law(a in 0.0..5.0f64, b in 0.0..5.0f64, w in 0.0..20.0f64) {
            let p = AtomParams::new(1.0, w).unwrap();
            let lhs = u_eff(a + b, &p).unwrap();
            let rhs = u_eff(a, &p).unwrap() * u_eff(b, &p).unwrap();
            prop_assert!(max_abs_diff(&lhs, &rhs) < 1e-12);
        }

        #[test]
        fn propagation_contracts_norm(tau in 0.0..5.0f64, w in 0.0..20.0f64, s in arb_state()) {
            let p = AtomParams::new(1.0, w).unwrap();
            let out = u_eff(tau, &p).unwrap() * s.to_ket();
            prop_assert!(out.norm_squared() <= 1.0 + 1e-12);
        }

        #[test]
        fn unitary_without_decay(tau in 0.0..5.0f64, w in 0.0..20.0f64) {
            let p = AtomParams::new(0.0, w).unwrap();
            let u = u_eff(tau, &p).unwrap();
            prop_assert!(max_abs_diff(&(u.adjoint() * u), &Mat2::identity()) < 1e-12);
        }

        #[test]
        fn bloch_vector_inside_ball(ws in proptest::collection::vec((0.0..1.0f64, arb_state()), 1..5)) {
            prop_assume!(ws.iter().map(|(w, _)| w).sum::<f64>() > 1e-6);
            let (x, y, z) = pauli_expectations(&ws).unwrap();
            prop_assert!(x * x + y * y + z * z <= 1.0 + 1e-12);
        }
    }
}
