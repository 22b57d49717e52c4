//! Velocity reconstruction `u = k ∗ ξ` and the quadratic term `q(ξ) = ξ (k ∗ ξ)`.
//!
//! In Fourier variables the Biot-Savart law is `û_η = −i η^⊥ ξ_η / |η|²`
//! with `η^⊥ = (−η₂, η₁)`, so `u` is divergence free and `curl u = ξ`
//! mode by mode. The product `q` is formed pseudospectrally on the
//! collocation lattice and dealiased.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::spectral::{lp_norm, RealField, SpectralField, TorusGrid};

/// Two-component spectral vector field (velocity or flux).
#[derive(Clone, Debug, PartialEq)]
pub struct VelocitySpectral {
    u1: SpectralField,
    u2: SpectralField,
}

impl VelocitySpectral {
    pub fn zeros(grid: &TorusGrid) -> Self {
        Self {
            u1: SpectralField::zeros(grid),
            u2: SpectralField::zeros(grid),
        }
    }

    pub fn from_components(u1: SpectralField, u2: SpectralField) -> Result<Self> {
        if u1.grid() != u2.grid() {
            return Err(Error::GridMismatch);
        }
        Ok(Self { u1, u2 })
    }

    pub fn grid(&self) -> &TorusGrid {
        self.u1.grid()
    }

    pub fn components(&self) -> (&SpectralField, &SpectralField) {
        (&self.u1, &self.u2)
    }

    pub fn to_real(&self) -> (RealField, RealField) {
        (self.u1.to_real(), self.u2.to_real())
    }

    /// `‖u‖_{L²}` via Parseval.
    pub fn l2_norm(&self) -> f64 {
        self.u1.l2_norm().hypot(self.u2.l2_norm())
    }

    /// `(Σ |η|² |û_η|²)^{1/2}`.
    pub fn h1_seminorm(&self) -> f64 {
        self.u1.sobolev_norm(1.0).hypot(self.u2.sobolev_norm(1.0))
    }

    /// Spatial `L^p` norm of the pointwise magnitude `|u(x)|`.
    pub fn lp_norm(&self, p: f64) -> f64 {
        let magnitude = magnitude(&self.to_real());
        lp_norm(&magnitude, p)
    }

    /// Scalar curl `∂₁u₂ − ∂₂u₁`.
    pub fn curl(&self) -> SpectralField {
        let mut out = self.u2.derivative(0);
        out.axpy(-1.0, &self.u1.derivative(1));
        out
    }

    /// `∇·u` in spectral space (`iη·û`).
    pub fn divergence(&self) -> SpectralField {
        let mut out = self.u1.derivative(0);
        out.axpy(1.0, &self.u2.derivative(1));
        out
    }

    /// `max_η |η·û_η|`.
    pub fn incompressibility_defect(&self) -> f64 {
        let grid = self.grid();
        let (a, b) = (self.u1.coeffs(), self.u2.coeffs());
        (0..grid.len())
            .map(|idx| {
                let (k1, k2) = grid.mode(idx);
                (a[idx] * k1 as f64 + b[idx] * k2 as f64).norm()
            })
            .fold(0.0_f64, f64::max)
    }

    pub fn scale(&mut self, s: f64) {
        self.u1.scale(s);
        self.u2.scale(s);
    }

    pub fn axpy(&mut self, s: f64, other: &VelocitySpectral) {
        self.u1.axpy(s, &other.u1);
        self.u2.axpy(s, &other.u2);
    }

    pub fn add(&self, other: &VelocitySpectral) -> Self {
        let mut out = self.clone();
        out.axpy(1.0, other);
        out
    }
}

fn magnitude((a, b): &(RealField, RealField)) -> RealField {
    let samples = a
        .samples()
        .iter()
        .zip(b.samples())
        .map(|(x, y)| x.hypot(*y))
        .collect();
    RealField::new(a.grid(), samples).expect("same grid")
}

/// Biot-Savart law `û_η = −i η^⊥ ξ_η / |η|²`. Rejects fields with nonzero mean.
pub fn velocity_from_vorticity(xi: &SpectralField) -> Result<VelocitySpectral> {
    xi.require_zero_mean()?;
    Ok(biot_savart_unchecked(xi))
}

pub(crate) fn biot_savart_unchecked(xi: &SpectralField) -> VelocitySpectral {
    let grid = xi.grid();
    let mut u1 = vec![Complex64::new(0.0, 0.0); grid.len()];
    let mut u2 = vec![Complex64::new(0.0, 0.0); grid.len()];
    for (idx, &g) in xi.coeffs().iter().enumerate() {
        if idx == 0 || grid.is_nyquist(idx) {
            continue;
        }
        let (k1, k2) = grid.mode(idx);
        let c = g / grid.mode_norm_sq(idx);
        // −i η^⊥ c with η^⊥ = (−η₂, η₁)
        u1[idx] = Complex64::new(0.0, k2 as f64) * c;
        u2[idx] = Complex64::new(0.0, -(k1 as f64)) * c;
    }
    VelocitySpectral {
        u1: SpectralField::from_coeffs(grid, u1).expect("length matches"),
        u2: SpectralField::from_coeffs(grid, u2).expect("length matches"),
    }
}

/// `q(ξ) = ξ · u` with `u` the Biot-Savart velocity, formed on the lattice and
/// dealiased.
pub fn nonlinearity_q(xi: &SpectralField) -> Result<VelocitySpectral> {
    xi.require_zero_mean()?;
    let xi_real = xi.to_real();
    nonlinearity_from_parts(xi, &xi_real)
}

/// Same as [`nonlinearity_q`] when the lattice samples of `ξ` are already at
/// hand (saves one inverse transform in the solvers).
pub(crate) fn nonlinearity_from_parts(
    xi: &SpectralField,
    xi_real: &RealField,
) -> Result<VelocitySpectral> {
    let u = biot_savart_unchecked(xi);
    let (u1, u2) = u.to_real();
    let q1 = xi_real.mul(&u1)?.to_spectral()?.dealiased();
    let q2 = xi_real.mul(&u2)?.to_spectral()?.dealiased();
    Ok(VelocitySpectral { u1: q1, u2: q2 })
}

/// `−∇·φ` in spectral space: the multiplier `−iη·φ̂_η`. This is what the
/// convolution `∫ ∇_y G(t,x,y)·φ(y) dy` contributes per mode before the heat
/// factor `e^{−t|η|²}` (the kernel depends on `x − y`, so `∇_y = −∇_x`).
pub fn negative_divergence(phi: &VelocitySpectral) -> SpectralField {
    let mut out = phi.divergence();
    out.scale(-1.0);
    out
}

/// Transport term `∇·q(ξ) = u·∇ξ` (spectral).
pub fn transport_term(xi: &SpectralField) -> Result<SpectralField> {
    Ok(nonlinearity_q(xi)?.divergence())
}

/// `⟨∇·q(ξ), ξ⟩_{L²}`, which vanishes for divergence-free `u`.
pub fn transport_orthogonality(xi: &SpectralField) -> Result<f64> {
    Ok(transport_term(xi)?.inner(xi))
}

/// Result of comparing `‖k∗ξ‖_{L^∞}` with `‖ξ‖_{L^p}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinfBound {
    /// `‖u‖_{L^∞}` with `u = k ∗ ξ`.
    pub lhs: f64,
    /// `‖u‖_{L^∞} / ‖ξ‖_{L^p}`, zero by convention when `ξ = 0`.
    pub ratio: f64,
}

pub fn linf_bound_check(xi: &SpectralField, p: f64) -> Result<LinfBound> {
    if !(p > 2.0) {
        return Err(Error::InvalidParameter(format!("need p > 2, got {p}")));
    }
    let u = velocity_from_vorticity(xi)?;
    let lhs = u.lp_norm(f64::INFINITY);
    let denom = lp_norm(&xi.to_real(), p);
    let ratio = if denom == 0.0 { 0.0 } else { lhs / denom };
    Ok(LinfBound { lhs, ratio })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::Phase;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn grid(n: usize) -> TorusGrid {
        TorusGrid::two_thirds(n).unwrap()
    }

    #[test]
    fn cosine_vorticity_gives_sine_shear() {
        let g = grid(32);
        let xi = SpectralField::single_mode(&g, 1, 0, 1.0, Phase::Cos).unwrap();
        let u = velocity_from_vorticity(&xi).unwrap();
        let (u1, u2) = u.to_real();
        assert!(u1.sup_norm() < 1e-14);
        let want = RealField::from_fn(&g, |x1, _| x1.sin());
        for (a, b) in u2.samples().iter().zip(want.samples()) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!(u.curl().sub(&xi).l2_norm() < 1e-14);
    }

    #[test]
    fn zero_in_zero_out() {
        let g = grid(16);
        let z = SpectralField::zeros(&g);
        assert_eq!(velocity_from_vorticity(&z).unwrap().l2_norm(), 0.0);
        assert_eq!(nonlinearity_q(&z).unwrap().l2_norm(), 0.0);
        assert_eq!(
            linf_bound_check(&z, 4.0).unwrap(),
            LinfBound {
                lhs: 0.0,
                ratio: 0.0
            }
        );
    }

    #[test]
    fn nonzero_mean_is_rejected() {
        let g = grid(16);
        let c = RealField::constant(&g, 1.0).to_spectral().unwrap();
        assert!(matches!(
            velocity_from_vorticity(&c),
            Err(Error::NonZeroMean(_))
        ));
        assert!(matches!(nonlinearity_q(&c), Err(Error::NonZeroMean(_))));
    }

    #[test]
    fn enstrophy_norm_equivalence() {
        let g = grid(64);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let xi = SpectralField::random(&g, &mut rng, 1.0, 0.5);
            let u = velocity_from_vorticity(&xi).unwrap();
            // direct per-mode sum of |η|²|û_η|²
            let (a, b) = u.components();
            let direct: f64 = (0..g.len())
                .map(|i| g.mode_norm_sq(i) * (a.coeffs()[i].norm_sqr() + b.coeffs()[i].norm_sqr()))
                .sum();
            let enstrophy: f64 = xi.coeffs().iter().map(|c| c.norm_sqr()).sum();
            assert!((direct - enstrophy).abs() < 1e-13 * enstrophy.max(1.0));
            assert!(u.l2_norm() <= xi.l2_norm());
        }
    }

    #[test]
    fn q_of_cosine_is_half_sine_of_double_angle() {
        let g = grid(32);
        let xi = SpectralField::single_mode(&g, 1, 0, 1.0, Phase::Cos).unwrap();
        let q = nonlinearity_q(&xi).unwrap();
        // grid oracle: pointwise product of ξ and u = (0, sin x₁)
        let xr = xi.to_real();
        let ur = RealField::from_fn(&g, |x1, _| x1.sin());
        let direct = xr.mul(&ur).unwrap();
        let (q1, q2) = q.to_real();
        assert!(q1.sup_norm() < 1e-14);
        for ((a, b), idx) in q2.samples().iter().zip(direct.samples()).zip(0..) {
            let (x1, _) = g.point(idx);
            assert!((a - b).abs() < 1e-14);
            assert!((a - 0.5 * (2.0 * x1).sin()).abs() < 1e-14);
        }
    }

    #[test]
    fn transport_is_l2_orthogonal() {
        let g = grid(64);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let xi = SpectralField::random(&g, &mut rng, 1.0, 0.5);
            assert!(transport_orthogonality(&xi).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn linf_bound_for_cosine() {
        let g = grid(64);
        let xi = SpectralField::single_mode(&g, 1, 0, 1.0, Phase::Cos).unwrap();
        let b = linf_bound_check(&xi, 4.0).unwrap();
        assert!((b.lhs - 1.0).abs() < 1e-14);
        // ‖cos x₁‖⁴_{L⁴} = (3/8)·4π² = 3π²/2
        let want = 1.0 / (1.5 * PI * PI).powf(0.25);
        assert!((b.ratio - want).abs() < 1e-12);
        assert!(linf_bound_check(&xi, 2.0).is_err());
    }

    #[test]
    fn negative_divergence_matches_heat_kernel_gradient_sign() {
        // −∇·φ for φ = (cos x₁, 0) is sin x₁
        let g = grid(16);
        let phi = VelocitySpectral::from_components(
            SpectralField::single_mode(&g, 1, 0, 1.0, Phase::Cos).unwrap(),
            SpectralField::zeros(&g),
        )
        .unwrap();
        let nd = negative_divergence(&phi);
        let want = SpectralField::single_mode(&g, 1, 0, 1.0, Phase::Sin).unwrap();
        assert!(nd.sub(&want).l2_norm() < 1e-14);
    }
}
