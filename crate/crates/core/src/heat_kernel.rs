//! Heat kernel of the torus, the heat semigroup, and numerical checks of the
//! kernel's scaling estimates.
//!
//! Two closed forms of `G(t, x, y) = G(t, 0, x − y)` are available:
//!
//! ```text
//!     Fourier:  G = (1/4π²) Σ_η exp(−t|η|² + iη·(x−y))
//!     images:   G = (1/4πt) Σ_η exp(−|x − y + 2πη|² / 4t)
//! ```
//!
//! Both factor into a product of one-dimensional theta sums, which is how
//! they are evaluated here. The image sum converges fast for small `t`, the
//! Fourier sum for large `t`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::biot_savart::{velocity_from_vorticity, VelocitySpectral};
use crate::error::{Error, Result};
use crate::spectral::{RealField, SpectralField};
use crate::stats::{fit_line, median};

const TWO_PI: f64 = 2.0 * PI;

/// Below this time the image sum is used by [`Representation::Auto`].
pub const SWITCH_TIME: f64 = 0.1;

/// Which closed form to sum, and where to truncate it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Representation {
    /// Fourier series over modes with `|η_i| ≤ radius`.
    Fourier { radius: usize },
    /// Image sum over `|n_i| ≤ shells` (so `shells = 2` is a 5×5 block).
    Images { shells: usize },
    /// Images below [`SWITCH_TIME`], Fourier above, truncations chosen so the
    /// neglected tail is below `1e-17` relative.
    Auto,
}

impl Representation {
    /// Resolves `Auto` into a concrete representation for time `t`.
    pub fn resolve(self, t: f64) -> Representation {
        match self {
            Representation::Auto if t < SWITCH_TIME => Representation::Images {
                shells: auto_shells(t),
            },
            Representation::Auto => Representation::Fourier {
                radius: auto_radius(t),
            },
            other => other,
        }
    }
}

/// Smallest Fourier radius with `exp(−t M²) < 4e-18`.
pub fn auto_radius(t: f64) -> usize {
    ((40.0 / t).sqrt().ceil() as usize).max(1)
}

/// Smallest image count whose first neglected image (distance `≥ π(2S+1)`
/// once `x − y` is wrapped into `[−π, π)`) contributes `< 4e-18`.
pub fn auto_shells(t: f64) -> usize {
    let s = (((160.0 * t).sqrt() / PI - 1.0) / 2.0).ceil();
    (s.max(1.0)) as usize
}

/// A kernel evaluation request.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelEval {
    pub time: f64,
    pub representation: Representation,
}

impl KernelEval {
    pub fn value(&self, dx: (f64, f64)) -> Result<f64> {
        kernel_value(self.time, dx, self.representation)
    }
}

fn wrap(x: f64) -> f64 {
    (x + PI).rem_euclid(TWO_PI) - PI
}

/// One-dimensional periodic heat kernel `θ_t(x)` and its derivative.
/// `G(t, 0, x) = θ_t(x₁) θ_t(x₂)`.
fn theta(t: f64, x: f64, rep: Representation) -> (f64, f64) {
    let x = wrap(x);
    match rep {
        Representation::Fourier { radius } => {
            // (1/2π) Σ_{|k|≤M} e^{−tk²} cos(kx)
            let mut v = 1.0;
            let mut d = 0.0;
            for k in 1..=radius {
                let kf = k as f64;
                let w = 2.0 * (-t * kf * kf).exp();
                v += w * (kf * x).cos();
                d -= w * kf * (kf * x).sin();
            }
            (v / TWO_PI, d / TWO_PI)
        }
        Representation::Images { shells } => {
            // (4πt)^{-1/2} Σ_{|n|≤S} exp(−(x + 2πn)² / 4t)
            let norm = 1.0 / (4.0 * PI * t).sqrt();
            let s = shells as i64;
            let mut v = 0.0;
            let mut d = 0.0;
            for n in -s..=s {
                let z = x + TWO_PI * n as f64;
                let e = (-z * z / (4.0 * t)).exp();
                v += e;
                d -= z / (2.0 * t) * e;
            }
            (v * norm, d * norm)
        }
        Representation::Auto => theta(t, x, rep.resolve(t)),
    }
}

/// `G(t, 0, dx)`.
pub fn kernel_value(t: f64, dx: (f64, f64), rep: Representation) -> Result<f64> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("heat kernel needs t > 0, got {t}")));
    }
    let rep = rep.resolve(t);
    Ok(theta(t, dx.0, rep).0 * theta(t, dx.1, rep).0)
}

/// `∇_x G(t, 0, dx)`; note `∇_y G(t, x, y) = −∇_x G`.
pub fn kernel_gradient(t: f64, dx: (f64, f64), rep: Representation) -> Result<(f64, f64)> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("heat kernel needs t > 0, got {t}")));
    }
    let rep = rep.resolve(t);
    let (a, da) = theta(t, dx.0, rep);
    let (b, db) = theta(t, dx.1, rep);
    Ok((da * b, a * db))
}

/// Heat semigroup `S(t) = e^{tΔ}`: multiplies `g_η` by `exp(−t|η|²)`.
pub fn semigroup_apply(t: f64, g: &SpectralField) -> Result<SpectralField> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("semigroup needs t >= 0, got {t}")));
    }
    Ok(g.apply_multiplier(|a, b| (-t * (a * a + b * b) as f64).exp()))
}

/// Semigroup action as a lattice convolution with `G(t, x, ·)`
/// (quadrature form, O(N⁴); for cross-checks on small grids).
pub fn semigroup_convolution(t: f64, f: &RealField) -> Result<RealField> {
    let grid = f.grid();
    let area = grid.cell_area();
    let mut out = vec![0.0; grid.len()];
    for (i, o) in out.iter_mut().enumerate() {
        let (x1, x2) = grid.point(i);
        let mut acc = 0.0;
        for (j, v) in f.samples().iter().enumerate() {
            let (y1, y2) = grid.point(j);
            acc += kernel_value(t, (x1 - y1, x2 - y2), Representation::Auto)? * v;
        }
        *o = acc * area;
    }
    RealField::new(grid, out)
}

/// Log-log fit of a kernel integral against time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub beta: f64,
    pub theoretical_exponent: f64,
    pub fitted_slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub sample_times: Vec<f64>,
    pub integrals: Vec<f64>,
}

/// Settings for the exponent fits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitOptions {
    pub s_min: f64,
    pub s_max: f64,
    /// Number of log-spaced sample times (at least 12).
    pub samples: usize,
    /// Cells per kernel width `√s` at the smallest time.
    pub cells_per_width: usize,
    /// Quadrature points per axis; `None` picks the smallest admissible.
    pub points_per_axis: Option<usize>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            s_min: 1e-3,
            s_max: 1e-1,
            samples: 12,
            cells_per_width: 8,
            points_per_axis: None,
        }
    }
}

impl FitOptions {
    /// Points per axis needed so that `√s_min` spans `cells_per_width` cells.
    pub fn required_points(&self) -> usize {
        let n = (TWO_PI * self.cells_per_width as f64 / self.s_min.sqrt()).ceil() as usize;
        n + n % 2
    }

    fn validate(&self) -> Result<usize> {
        if !(self.s_min > 0.0 && self.s_max > self.s_min) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < s_min < s_max, got [{}, {}]",
                self.s_min, self.s_max
            )));
        }
        if self.samples < 12 {
            return Err(Error::InvalidParameter(format!(
                "log-log fit needs at least 12 sample times, got {}",
                self.samples
            )));
        }
        let required = self.required_points();
        match self.points_per_axis {
            Some(given) if given < required => Err(Error::UnderResolved {
                time: self.s_min,
                required,
                given,
            }),
            Some(given) => Ok(given),
            None => Ok(required),
        }
    }

    fn times(&self) -> Vec<f64> {
        let (a, b) = (self.s_min.ln(), self.s_max.ln());
        let m = self.samples - 1;
        (0..self.samples)
            .map(|i| (a + (b - a) * i as f64 / m as f64).exp())
            .collect()
    }
}

/// Midpoint nodes on `[−π, π)` with `n` cells.
fn nodes(n: usize) -> (Vec<f64>, f64) {
    let h = TWO_PI / n as f64;
    ((0..n).map(|j| -PI + (j as f64 + 0.5) * h).collect(), h)
}

/// `∫_{T²} |∇_y G(s, x, y)|^β dy` by the tensor midpoint rule.
pub fn gradient_integral(s: f64, beta: f64, points: usize) -> f64 {
    let rep = Representation::Images {
        shells: auto_shells(s),
    };
    let (ys, h) = nodes(points);
    let th: Vec<(f64, f64)> = ys.iter().map(|&y| theta(s, y, rep)).collect();
    let half_beta = 0.5 * beta;
    let total: f64 = th
        .iter()
        .map(|&(a, da)| {
            th.iter()
                .map(|&(b, db)| {
                    let g1 = da * b;
                    let g2 = a * db;
                    (g1 * g1 + g2 * g2).powf(half_beta)
                })
                .sum::<f64>()
        })
        .sum();
    total * h * h
}

/// `∫_{T²} G(s, x, y)^β dy`; the integrand factorizes, so this is the square
/// of a one-dimensional midpoint sum.
pub fn kernel_integral(s: f64, beta: f64, points: usize) -> f64 {
    let rep = Representation::Images {
        shells: auto_shells(s),
    };
    let (ys, h) = nodes(points);
    let one_d: f64 = ys
        .iter()
        .map(|&y| theta(s, y, rep).0.powf(beta))
        .sum::<f64>()
        * h;
    one_d * one_d
}

fn fit_exponent(
    beta: f64,
    theoretical_exponent: f64,
    opts: &FitOptions,
    integral: impl Fn(f64, usize) -> f64 + Sync,
) -> Result<ExponentFit> {
    let points = opts.validate()?;
    let times = opts.times();
    let integrals: Vec<f64> = times.par_iter().map(|&s| integral(s, points)).collect();
    let xs: Vec<f64> = times.iter().map(|s| s.ln()).collect();
    let ys: Vec<f64> = integrals.iter().map(|v| v.ln()).collect();
    let fit = fit_line(&xs, &ys).expect("distinct sample times");
    Ok(ExponentFit {
        beta,
        theoretical_exponent,
        fitted_slope: fit.slope,
        intercept: fit.intercept,
        r_squared: fit.r_squared,
        sample_times: times,
        integrals,
    })
}

/// Recovers the exponent of `∫|∇_y G(s)|^β dy ≲ s^{1 − 3β/2}` for `β ∈ (0, 4/3)`.
pub fn fit_gradient_estimate(beta: f64, opts: &FitOptions) -> Result<ExponentFit> {
    if !(beta > 0.0 && beta < 4.0 / 3.0) {
        return Err(Error::InvalidParameter(format!(
            "gradient estimate needs beta in (0, 4/3), got {beta}"
        )));
    }
    fit_exponent(beta, 1.0 - 1.5 * beta, opts, |s, n| {
        gradient_integral(s, beta, n)
    })
}

/// Recovers the exponent of `∫ G(s)^β dy ≲ s^{1 − β}` for `β ∈ (0, 2)`.
pub fn fit_kernel_estimate(beta: f64, opts: &FitOptions) -> Result<ExponentFit> {
    if !(beta > 0.0 && beta < 2.0) {
        return Err(Error::InvalidParameter(format!(
            "kernel estimate needs beta in (0, 2), got {beta}"
        )));
    }
    fit_exponent(beta, 1.0 - beta, opts, |s, n| kernel_integral(s, beta, n))
}

/// `(Jφ)(t_k)` for every solver time `t_k = k·dt`, where
/// `(Jφ)(t) = ∫₀ᵗ ∫ ∇_y G(t−s, x, y)·φ(s, y) dy ds`.
///
/// Per mode the space integral is `e^{−(t−s)|η|²} (−iη·φ̂_η(s))`; the time
/// integral uses the midpoint rule on each step with `φ` at the step midpoint
/// taken as the average of its endpoint samples.
pub fn apply_j_path(phi: &[VelocitySpectral], dt: f64) -> Result<Vec<SpectralField>> {
    let first = phi
        .first()
        .ok_or_else(|| Error::InvalidParameter("J needs at least one sample".into()))?;
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "dt must be positive, got {dt}"
        )));
    }
    let grid = first.grid().clone();
    let decay_full: Vec<f64> = (0..grid.len())
        .map(|i| (-dt * grid.mode_norm_sq(i)).exp())
        .collect();
    let decay_half: Vec<f64> = (0..grid.len())
        .map(|i| (-0.5 * dt * grid.mode_norm_sq(i)).exp())
        .collect();

    let mut out = Vec::with_capacity(phi.len());
    let mut acc = vec![Complex64::new(0.0, 0.0); grid.len()];
    out.push(SpectralField::from_coeffs(&grid, acc.clone())?);
    for w in phi.windows(2) {
        let mut mid = w[0].clone();
        mid.axpy(1.0, &w[1]);
        mid.scale(0.5);
        let forcing = crate::biot_savart::negative_divergence(&mid);
        for (i, a) in acc.iter_mut().enumerate() {
            *a = *a * decay_full[i] + forcing.coeffs()[i] * (dt * decay_half[i]);
        }
        out.push(SpectralField::from_coeffs(&grid, acc.clone())?);
    }
    Ok(out)
}

/// `(Jφ)(T)` on the lattice, `T = (len − 1)·dt`.
pub fn apply_j(phi: &[VelocitySpectral], dt: f64) -> Result<RealField> {
    Ok(apply_j_path(phi, dt)?.pop().expect("non-empty").to_real())
}

/// Empirical constant in `sup_{t,x}|Jφ| ≤ C (∫₀ᵀ ‖φ(s)‖^γ_{L^p} ds)^{1/γ}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JBoundProbe {
    pub p: f64,
    pub gamma: f64,
    pub samples: usize,
    pub max_constant: f64,
    pub median_constant: f64,
}

/// Samples random divergence-free, time-modulated fields and records the
/// ratio `sup|Jφ| / ‖φ‖_{L^γ(0,T; L^p)}`.
pub fn j_bound_probe<R: Rng + ?Sized>(
    grid: &crate::spectral::TorusGrid,
    t_final: f64,
    steps: usize,
    p: f64,
    gamma: f64,
    samples: usize,
    rng: &mut R,
) -> Result<JBoundProbe> {
    let dt = t_final / steps as f64;
    let mut ratios = Vec::with_capacity(samples);
    for _ in 0..samples {
        let shapes: Vec<VelocitySpectral> = (0..3)
            .map(|_| velocity_from_vorticity(&SpectralField::random(grid, rng, 1.0, 1.0)))
            .collect::<Result<_>>()?;
        let freqs: Vec<(f64, f64)> = (0..3)
            .map(|_| (rng.random_range(0.0..10.0), rng.random_range(0.0..TWO_PI)))
            .collect();
        let phi: Vec<VelocitySpectral> = (0..=steps)
            .map(|k| {
                let t = k as f64 * dt;
                let mut v = VelocitySpectral::zeros(grid);
                for (shape, (w, ph)) in shapes.iter().zip(&freqs) {
                    v.axpy((w * t + ph).cos(), shape);
                }
                v
            })
            .collect();
        let path = apply_j_path(&phi, dt)?;
        let sup = path
            .iter()
            .map(|f| f.to_real().sup_norm())
            .fold(0.0_f64, f64::max);
        // midpoint-in-time quadrature of ‖φ‖^γ_{L^p}
        let norms: Vec<f64> = phi.iter().map(|v| v.lp_norm(p)).collect();
        let integral: f64 = norms
            .windows(2)
            .map(|w| 0.5 * (w[0].powf(gamma) + w[1].powf(gamma)) * dt)
            .sum();
        let denom = integral.powf(1.0 / gamma);
        if denom > 0.0 {
            ratios.push(sup / denom);
        }
    }
    Ok(JBoundProbe {
        p,
        gamma,
        samples: ratios.len(),
        max_constant: ratios.iter().cloned().fold(0.0, f64::max),
        median_constant: median(&ratios).unwrap_or(0.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{Phase, TorusGrid};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn nonpositive_time_is_a_domain_error() {
        assert!(matches!(
            kernel_value(0.0, (0.0, 0.0), Representation::Auto),
            Err(Error::Domain(_))
        ));
        assert!(kernel_value(-1.0, (0.1, 0.0), Representation::Auto).is_err());
        assert!(semigroup_apply(
            -0.1,
            &SpectralField::zeros(&TorusGrid::two_thirds(8).unwrap())
        )
        .is_err());
    }

    #[test]
    fn representations_agree_at_half() {
        let f = kernel_value(0.5, (0.0, 0.0), Representation::Fourier { radius: 32 }).unwrap();
        let i = kernel_value(0.5, (0.0, 0.0), Representation::Images { shells: 2 }).unwrap();
        assert!((f - i).abs() < 1e-12, "{f} vs {i}");
    }

    #[test]
    fn large_time_limit_is_uniform() {
        let want = 1.0 / (4.0 * PI * PI);
        for dx in [(0.0, 0.0), (1.0, -2.0), (PI, PI)] {
            let v = kernel_value(40.0, dx, Representation::Auto).unwrap();
            assert!((v - want).abs() < 1e-15);
        }
    }

    #[test]
    fn kernel_is_positive_even_and_has_unit_mass() {
        let grid = TorusGrid::two_thirds(64).unwrap();
        for t in [0.05, 0.3, 1.0, 5.0] {
            let mut mass = 0.0;
            for idx in 0..grid.len() {
                let (x1, x2) = grid.point(idx);
                let v = kernel_value(t, (x1, x2), Representation::Auto).unwrap();
                let w = kernel_value(t, (-x1, -x2), Representation::Auto).unwrap();
                assert!(v > 0.0);
                assert!((v - w).abs() <= 1e-13 * v.max(1.0));
                mass += v;
            }
            mass *= grid.cell_area();
            assert!((mass - 1.0).abs() < 1e-12, "t={t}: mass {mass}");
        }
    }

    #[test]
    fn semigroup_identity_law_and_eigenfunction() {
        let grid = TorusGrid::two_thirds(32).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = SpectralField::random(&grid, &mut rng, 1.0, 1.0);
        assert_eq!(semigroup_apply(0.0, &g).unwrap(), g);
        let two = semigroup_apply(0.3, &semigroup_apply(0.2, &g).unwrap()).unwrap();
        let one = semigroup_apply(0.5, &g).unwrap();
        assert!(two.sub(&one).l2_norm() < 1e-14 * g.l2_norm());
        let c = SpectralField::single_mode(&grid, 1, 0, 1.0, Phase::Cos).unwrap();
        let s = semigroup_apply(1.0, &c).unwrap();
        assert!(s.sub(&c.clone().scaled((-1.0f64).exp())).l2_norm() < 1e-15);
    }

    #[test]
    fn semigroup_matches_convolution_form() {
        let grid = TorusGrid::two_thirds(16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = SpectralField::random(&grid, &mut rng, 1.0, 1.0);
        // the lattice sum aliases e^{−t|η+Nm|²}; negligible for these t at N = 16
        for t in [0.3, 1.0] {
            let spectral = semigroup_apply(t, &g).unwrap().to_real();
            let conv = semigroup_convolution(t, &g.to_real()).unwrap();
            let err = spectral
                .samples()
                .iter()
                .zip(conv.samples())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-10, "t={t}: {err}");
        }
    }

    #[test]
    fn gradient_formula_matches_finite_differences() {
        let t = 0.07;
        let h = 1e-6;
        let x = (0.3, -0.8);
        let (g1, g2) = kernel_gradient(t, x, Representation::Auto).unwrap();
        let f = |a: f64, b: f64| kernel_value(t, (a, b), Representation::Auto).unwrap();
        let d1 = (f(x.0 + h, x.1) - f(x.0 - h, x.1)) / (2.0 * h);
        let d2 = (f(x.0, x.1 + h) - f(x.0, x.1 - h)) / (2.0 * h);
        assert!((g1 - d1).abs() < 1e-6 * g1.abs().max(1.0));
        assert!((g2 - d2).abs() < 1e-6 * g2.abs().max(1.0));
    }

    #[test]
    fn underresolved_quadrature_is_refused() {
        let opts = FitOptions {
            points_per_axis: Some(256),
            ..FitOptions::default()
        };
        match fit_kernel_estimate(1.0, &opts) {
            Err(Error::UnderResolved {
                required, given, ..
            }) => {
                assert_eq!(given, 256);
                assert!(required >= 1590);
            }
            other => panic!("unexpected {other:?}"),
        }
        let few = FitOptions {
            samples: 5,
            ..FitOptions::default()
        };
        assert!(fit_kernel_estimate(1.0, &few).is_err());
        assert!(fit_gradient_estimate(4.0 / 3.0, &FitOptions::default()).is_err());
        assert!(fit_kernel_estimate(2.0, &FitOptions::default()).is_err());
    }

    #[test]
    fn gradient_exponents() {
        let opts = FitOptions::default();
        let one = fit_gradient_estimate(1.0, &opts).unwrap();
        assert!((one.fitted_slope + 0.5).abs() < 0.05, "{one:?}");
        let flat = fit_gradient_estimate(2.0 / 3.0, &opts).unwrap();
        assert!(flat.fitted_slope.abs() < 0.05);
        // slope decreases as β grows, approaching 1 for small β
        let slopes: Vec<f64> = [0.2, 0.5, 1.0, 1.2]
            .iter()
            .map(|&b| fit_gradient_estimate(b, &opts).unwrap().fitted_slope)
            .collect();
        assert!(slopes.windows(2).all(|w| w[0] > w[1]), "{slopes:?}");
        assert!(slopes[0] < 1.0 && slopes[0] > 0.6);
    }

    #[test]
    fn kernel_exponents() {
        let opts = FitOptions::default();
        for (beta, want) in [(1.0, 0.0), (1.5, -0.5), (0.5, 0.5)] {
            let fit = fit_kernel_estimate(beta, &opts).unwrap();
            assert!((fit.fitted_slope - want).abs() < 0.05, "{fit:?}");
        }
    }

    #[test]
    fn j_of_zero_is_zero() {
        let grid = TorusGrid::two_thirds(16).unwrap();
        let phi = vec![VelocitySpectral::zeros(&grid); 11];
        assert_eq!(apply_j(&phi, 0.1).unwrap().sup_norm(), 0.0);
    }

    #[test]
    fn j_of_constant_single_mode_matches_closed_form() {
        let grid = TorusGrid::two_thirds(16).unwrap();
        // φ = (cos(x₁ + 2x₂), 0): not divergence free, but J is linear and the
        // per-mode formula does not care
        let shape = VelocitySpectral::from_components(
            SpectralField::single_mode(&grid, 1, 2, 1.0, Phase::Cos).unwrap(),
            SpectralField::single_mode(&grid, 1, 2, -0.5, Phase::Sin).unwrap(),
        )
        .unwrap();
        let dt = 1e-3;
        let t = 0.8;
        let steps = (t / dt) as usize;
        let phi = vec![shape.clone(); steps + 1];
        let got = apply_j_path(&phi, dt).unwrap().pop().unwrap();
        // (1 − e^{−t|η|²}) / |η|² · (−iη·φ̂_η)
        let lam = 5.0;
        let closed =
            crate::biot_savart::negative_divergence(&shape).scaled((1.0 - (-t * lam).exp()) / lam);
        let rel = got.sub(&closed).l2_norm() / closed.l2_norm();
        // midpoint rule error ≈ (λ dt)² / 24
        let bound = 1.1 * (lam * dt).powi(2) / 24.0;
        assert!(rel < bound, "relative error {rel}");
    }

    #[test]
    fn j_bound_constant_is_finite() {
        let grid = TorusGrid::two_thirds(16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let probe = j_bound_probe(&grid, 1.0, 100, 8.0, 4.0, 10, &mut rng).unwrap();
        assert_eq!(probe.samples, 10);
        assert!(probe.max_constant.is_finite() && probe.max_constant > 0.0);
        assert!(probe.median_constant <= probe.max_constant);
    }
}
