//! Noise construction and sampling.
//!
//! * Additive Q-Wiener noise with `Q = (−Δ)^{−a}`: the stochastic convolution
//!   `ζ(t) = ∫₀ᵗ S(t−s) dW(s)` is advanced by the exact per-mode
//!   Ornstein-Uhlenbeck recursion
//!   `ζ̂_η ← e^{−|η|²dt} ζ̂_η + N(0, v_η)` with
//!   `v_η = |η|^{−2a} (1 − e^{−2|η|²dt}) / (2|η|²)`.
//!   Complex coefficients are drawn on one half of the lattice and mirrored,
//!   which realizes the real cos/sin basis implicitly.
//! * Multiplicative finite-dimensional noise: `n` channels, channel `j`
//!   contributing `σ_j(t, x, r) = g_j(x) f(r)` with a spatial profile `g_j`
//!   and a response `f` from a small built-in family.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{Phase, RealField, SpectralField, TorusGrid};

/// What a random stream is used for. Part of the stream id so that streams
/// for different purposes never overlap.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Purpose {
    InitialCondition = 1,
    AdditiveNoise = 2,
    MultiplicativeNoise = 3,
    Optimizer = 4,
    Probe = 5,
    Ensemble = 6,
}

/// Reproducible random stream keyed by `(seed, trajectory, purpose)`.
///
/// Backed by ChaCha8 with the 64-bit stream selector set from the trajectory
/// index and purpose, so identical keys give bit-identical draws regardless
/// of thread scheduling.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    trajectory: u64,
    purpose: Purpose,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, trajectory: u64, purpose: Purpose) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(trajectory.wrapping_mul(16).wrapping_add(purpose as u64));
        Self {
            seed,
            trajectory,
            purpose,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn trajectory(&self) -> u64 {
        self.trajectory
    }

    pub fn purpose(&self) -> Purpose {
        self.purpose
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Additive noise with covariance `Q = (−Δ)^{−a}`, `a > 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, try_from = "AdditiveRaw")]
pub struct AdditiveNoiseSpec {
    a: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AdditiveRaw {
    a: f64,
}

impl TryFrom<AdditiveRaw> for AdditiveNoiseSpec {
    type Error = Error;
    fn try_from(raw: AdditiveRaw) -> Result<Self> {
        Self::new(raw.a)
    }
}

impl AdditiveNoiseSpec {
    pub fn new(a: f64) -> Result<Self> {
        if !(a > 0.0) || !a.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "additive noise needs regularity exponent a > 0, got {a}"
            )));
        }
        Ok(Self { a })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    /// Eigenvalue of `Q` on mode `η ≠ 0`: `|η|^{−2a}`.
    pub fn eigenvalue(&self, mode_norm_sq: f64) -> f64 {
        mode_norm_sq.powf(-self.a)
    }
}

/// `E|ζ̂_η(t)|²` for `ζ(0) = 0`: `|η|^{−2a} (1 − e^{−2|η|²t}) / (2|η|²)`.
pub fn ou_variance(mode_norm_sq: f64, a: f64, t: f64) -> f64 {
    mode_norm_sq.powf(-a) * (-(-2.0 * mode_norm_sq * t).exp_m1()) / (2.0 * mode_norm_sq)
}

/// One exact-in-law step of the stochastic convolution.
pub fn sample_stochastic_convolution_step<R: Rng + ?Sized>(
    zeta: &SpectralField,
    dt: f64,
    spec: &AdditiveNoiseSpec,
    rng: &mut R,
) -> Result<SpectralField> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "dt must be positive, got {dt}"
        )));
    }
    let grid = zeta.grid().clone();
    let mut coeffs = zeta.coeffs().to_vec();
    for idx in 0..grid.len() {
        let conj = grid.conjugate_index(idx);
        if conj < idx {
            continue;
        }
        if idx == 0 || grid.is_nyquist(idx) {
            coeffs[idx] = Complex64::new(0.0, 0.0);
            continue;
        }
        let lam = grid.mode_norm_sq(idx);
        let decay = (-lam * dt).exp();
        let sd = (0.5 * ou_variance(lam, spec.a, dt)).sqrt();
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        let c = coeffs[idx] * decay + Complex64::new(re, im) * sd;
        coeffs[idx] = c;
        coeffs[conj] = c.conj();
    }
    SpectralField::from_coeffs(&grid, coeffs)
}

/// `ζ` at `t_k = k·dt`, `k = 0..=steps`, starting from `ζ(0) = 0`.
pub fn sample_zeta_path<R: Rng + ?Sized>(
    grid: &TorusGrid,
    spec: &AdditiveNoiseSpec,
    dt: f64,
    steps: usize,
    rng: &mut R,
) -> Result<Vec<SpectralField>> {
    let mut path = Vec::with_capacity(steps + 1);
    path.push(SpectralField::zeros(grid));
    for k in 0..steps {
        let next = sample_stochastic_convolution_step(&path[k], dt, spec, rng)?;
        path.push(next);
    }
    Ok(path)
}

/// Response `f(r)` of a multiplicative channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaFamily {
    /// `f ≡ 1`
    Constant,
    /// `f(r) = r`
    Linear,
    /// `f(r) = sin r`
    Sine,
    /// `f(r) = r / (1 + |r|)`
    Saturated,
}

impl SigmaFamily {
    #[inline]
    pub fn apply(self, r: f64) -> f64 {
        match self {
            SigmaFamily::Constant => 1.0,
            SigmaFamily::Linear => r,
            SigmaFamily::Sine => r.sin(),
            SigmaFamily::Saturated => r / (1.0 + r.abs()),
        }
    }

    /// Derivative `f'(r)`.
    #[inline]
    pub fn derivative(self, r: f64) -> f64 {
        match self {
            SigmaFamily::Constant => 0.0,
            SigmaFamily::Linear => 1.0,
            SigmaFamily::Sine => r.cos(),
            SigmaFamily::Saturated => 1.0 / ((1.0 + r.abs()) * (1.0 + r.abs())),
        }
    }

    /// `(K_f, L_f)` with `|f(r)| ≤ K_f (1 + |r|)` and `f` `L_f`-Lipschitz.
    pub fn constants(self) -> (f64, f64) {
        match self {
            SigmaFamily::Constant => (1.0, 0.0),
            SigmaFamily::Linear | SigmaFamily::Sine | SigmaFamily::Saturated => (1.0, 1.0),
        }
    }

    /// True when `f` does not depend on the state.
    pub fn is_state_independent(self) -> bool {
        self == SigmaFamily::Constant
    }
}

/// Spatial profile `g_j(x)` of a channel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum ChannelProfile {
    /// `g ≡ amplitude`
    Uniform { amplitude: f64 },
    /// `g(x) = amplitude · cos(η·x)` or `sin(η·x)`
    Mode {
        mode: [i64; 2],
        phase: Phase,
        amplitude: f64,
    },
}

impl ChannelProfile {
    pub fn value(&self, x1: f64, x2: f64) -> f64 {
        match *self {
            ChannelProfile::Uniform { amplitude } => amplitude,
            ChannelProfile::Mode {
                mode,
                phase,
                amplitude,
            } => {
                let arg = mode[0] as f64 * x1 + mode[1] as f64 * x2;
                amplitude
                    * match phase {
                        Phase::Cos => arg.cos(),
                        Phase::Sin => arg.sin(),
                    }
            }
        }
    }

    pub fn sup(&self) -> f64 {
        match *self {
            ChannelProfile::Uniform { amplitude } | ChannelProfile::Mode { amplitude, .. } => {
                amplitude.abs()
            }
        }
    }
}

/// Multiplicative noise `Σ_j σ_j(t, x, ξ) dW^j` with `σ_j = g_j(x) f(r)`.
///
/// Construction checks the growth and Lipschitz bounds with the declared
/// constants on random samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MultiplicativeRaw", into = "MultiplicativeRaw")]
pub struct MultiplicativeNoiseSpec {
    family: SigmaFamily,
    channels: Vec<ChannelProfile>,
    growth_constant: f64,
    lipschitz_constant: f64,
}

#[derive(Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MultiplicativeRaw {
    family: SigmaFamily,
    channels: Vec<ChannelProfile>,
    #[serde(default)]
    growth_constant: Option<f64>,
    #[serde(default)]
    lipschitz_constant: Option<f64>,
}

impl TryFrom<MultiplicativeRaw> for MultiplicativeNoiseSpec {
    type Error = Error;
    fn try_from(raw: MultiplicativeRaw) -> Result<Self> {
        Self::with_constants(
            raw.family,
            raw.channels,
            raw.growth_constant,
            raw.lipschitz_constant,
        )
    }
}

impl From<MultiplicativeNoiseSpec> for MultiplicativeRaw {
    fn from(s: MultiplicativeNoiseSpec) -> Self {
        Self {
            family: s.family,
            channels: s.channels,
            growth_constant: Some(s.growth_constant),
            lipschitz_constant: Some(s.lipschitz_constant),
        }
    }
}

const REGISTRATION_SAMPLES: usize = 10_000;

impl MultiplicativeNoiseSpec {
    /// Constants derived from the family and profile amplitudes.
    pub fn new(family: SigmaFamily, channels: Vec<ChannelProfile>) -> Result<Self> {
        Self::with_constants(family, channels, None, None)
    }

    pub fn with_constants(
        family: SigmaFamily,
        channels: Vec<ChannelProfile>,
        growth: Option<f64>,
        lipschitz: Option<f64>,
    ) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::InvalidParameter(
                "multiplicative noise needs at least one channel".into(),
            ));
        }
        let amp = channels.iter().map(ChannelProfile::sup).fold(0.0, f64::max);
        let (kf, lf) = family.constants();
        let spec = Self {
            family,
            channels,
            growth_constant: growth.unwrap_or(kf * amp),
            lipschitz_constant: lipschitz.unwrap_or(lf * amp),
        };
        spec.check_bounds()?;
        Ok(spec)
    }

    /// Randomized check of `|σ_j| ≤ K(1+|r|)` and `|σ_j(r) − σ_j(s)| ≤ L|r−s|`.
    fn check_bounds(&self) -> Result<()> {
        let (k, l) = (self.growth_constant, self.lipschitz_constant);
        if !(k >= 0.0 && l >= 0.0) {
            return Err(Error::InvalidParameter(
                "noise constants must be nonnegative".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0x5157_4d41);
        for _ in 0..REGISTRATION_SAMPLES {
            let x1 = rng.random_range(0.0..2.0 * PI);
            let x2 = rng.random_range(0.0..2.0 * PI);
            let scale = 10f64.powf(rng.random_range(-3.0..3.0));
            let r = scale * rng.random_range(-1.0..1.0);
            let s = scale * rng.random_range(-1.0..1.0);
            for (j, ch) in self.channels.iter().enumerate() {
                let g = ch.value(x1, x2);
                let sr = g * self.family.apply(r);
                let ss = g * self.family.apply(s);
                if sr.abs() > k * (1.0 + r.abs()) * (1.0 + 1e-12) + 1e-15 {
                    return Err(Error::InvalidParameter(format!(
                        "channel {j} violates the growth bound with K = {k} at r = {r}"
                    )));
                }
                if (sr - ss).abs() > l * (r - s).abs() * (1.0 + 1e-12) + 1e-15 {
                    return Err(Error::InvalidParameter(format!(
                        "channel {j} violates the Lipschitz bound with L = {l} at r = {r}, s = {s}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn family(&self) -> SigmaFamily {
        self.family
    }

    pub fn channels(&self) -> &[ChannelProfile] {
        &self.channels
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn growth_constant(&self) -> f64 {
        self.growth_constant
    }

    pub fn lipschitz_constant(&self) -> f64 {
        self.lipschitz_constant
    }

    /// Lattice samples of the channel profiles.
    pub fn profiles(&self, grid: &TorusGrid) -> Vec<RealField> {
        self.channels
            .iter()
            .map(|ch| RealField::from_fn(grid, |x1, x2| ch.value(x1, x2)))
            .collect()
    }
}

/// `σ_j(t, x, field(x))` on the lattice for every channel. The built-in
/// families do not depend on `t`.
pub fn eval_sigma(spec: &MultiplicativeNoiseSpec, _t: f64, field: &RealField) -> Vec<RealField> {
    let grid = field.grid();
    spec.channels
        .iter()
        .map(|ch| {
            let samples = field
                .samples()
                .iter()
                .enumerate()
                .map(|(idx, &r)| {
                    let (x1, x2) = grid.point(idx);
                    ch.value(x1, x2) * spec.family.apply(r)
                })
                .collect();
            RealField::new(grid, samples).expect("same grid")
        })
        .collect()
}

/// Spectral forcing shapes `P σ_j(ξ)`: the channel fields transformed,
/// projected onto mean zero and dealiased.
pub fn sigma_forcing(
    spec: &MultiplicativeNoiseSpec,
    t: f64,
    field: &RealField,
) -> Result<Vec<SpectralField>> {
    eval_sigma(spec, t, field)
        .into_iter()
        .map(|s| {
            let mut f = s.to_spectral()?;
            f.project_zero_mean();
            f.dealias();
            Ok(f)
        })
        .collect()
}

/// `n` i.i.d. `N(0, dt)` increments.
pub fn wiener_increments<R: Rng + ?Sized>(n: usize, dt: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "dt must be positive, got {dt}"
        )));
    }
    let sd = dt.sqrt();
    Ok((0..n)
        .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
        .collect())
}

/// Noise specification used by the solvers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum NoiseSpec {
    Additive(AdditiveNoiseSpec),
    Multiplicative(MultiplicativeNoiseSpec),
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn grid(n: usize) -> TorusGrid {
        TorusGrid::two_thirds(n).unwrap()
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = {
            let mut s = RngStream::new(7, 3, Purpose::AdditiveNoise);
            (0..4).map(|_| s.next_u64()).collect()
        };
        let b: Vec<u64> = {
            let mut s = RngStream::new(7, 3, Purpose::AdditiveNoise);
            (0..4).map(|_| s.next_u64()).collect()
        };
        let c: Vec<u64> = {
            let mut s = RngStream::new(7, 3, Purpose::MultiplicativeNoise);
            (0..4).map(|_| s.next_u64()).collect()
        };
        let d: Vec<u64> = {
            let mut s = RngStream::new(7, 4, Purpose::AdditiveNoise);
            (0..4).map(|_| s.next_u64()).collect()
        };
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn additive_spec_requires_positive_a() {
        assert!(AdditiveNoiseSpec::new(0.0).is_err());
        assert!(AdditiveNoiseSpec::new(-1.0).is_err());
        assert!(AdditiveNoiseSpec::new(f64::NAN).is_err());
        assert!(serde_json::from_str::<AdditiveNoiseSpec>(r#"{"a": 0.0}"#).is_err());
        assert_eq!(
            serde_json::from_str::<AdditiveNoiseSpec>(r#"{"a": 1.0}"#)
                .unwrap()
                .a(),
            1.0
        );
    }

    #[test]
    fn zeta_is_real_and_mean_free() {
        let g = grid(32);
        let spec = AdditiveNoiseSpec::new(0.5).unwrap();
        let mut rng = RngStream::new(1, 0, Purpose::AdditiveNoise);
        let path = sample_zeta_path(&g, &spec, 0.01, 20, &mut rng).unwrap();
        assert_eq!(path[0].l2_norm(), 0.0);
        for z in &path {
            assert_eq!(z.mean_coeff().norm(), 0.0);
            assert!(z.max_imaginary_part() < 1e-12);
            assert_eq!(z.reality_defect(), 0.0);
        }
    }

    fn sample_mode(
        spec: &AdditiveNoiseSpec,
        g: &TorusGrid,
        steps: usize,
        dt: f64,
        samples: usize,
        seed: u64,
        modes: &[(i64, i64)],
    ) -> Vec<Vec<Complex64>> {
        let mut out = vec![Vec::with_capacity(samples); modes.len()];
        for s in 0..samples {
            let mut rng = RngStream::new(seed, s as u64, Purpose::AdditiveNoise);
            let mut z = SpectralField::zeros(g);
            for _ in 0..steps {
                z = sample_stochastic_convolution_step(&z, dt, spec, &mut rng).unwrap();
            }
            for (m, &(k1, k2)) in modes.iter().enumerate() {
                out[m].push(z.coeff(k1, k2).unwrap());
            }
        }
        out
    }

    #[test]
    fn stationary_variance_is_reached() {
        let g = grid(8);
        let spec = AdditiveNoiseSpec::new(1.0).unwrap();
        let modes = [(1, 0), (1, 1), (2, 1)];
        let draws = sample_mode(&spec, &g, 5, 2.0, 10_000, 42, &modes);
        for (m, &(k1, k2)) in modes.iter().enumerate() {
            let lam = (k1 * k1 + k2 * k2) as f64;
            let want = lam.powf(-1.0) / (2.0 * lam);
            let n = draws[m].len() as f64;
            let mean = draws[m].iter().map(|c| c.norm_sqr()).sum::<f64>() / n;
            // |ζ̂|² is exponential with mean v: standard error v/√n
            let se = want / n.sqrt();
            assert!(
                (mean - want).abs() < 3.0 * se,
                "mode {k1},{k2}: {mean} vs {want}"
            );
        }
    }

    /// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
    fn ks_two_sample(a: &mut [f64], b: &mut [f64]) -> f64 {
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let (n, m) = (a.len(), b.len());
        let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
        while i < n && j < m {
            if a[i] <= b[j] {
                i += 1;
            } else {
                j += 1;
            }
            d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
        }
        let ne = (n * m) as f64 / (n + m) as f64;
        let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
        let mut p = 0.0;
        for k in 1..100 {
            let kf = k as f64;
            p += 2.0 * (-1f64).powi(k - 1) * (-2.0 * kf * kf * lambda * lambda).exp();
        }
        p.clamp(0.0, 1.0)
    }

    #[test]
    fn two_half_steps_equal_one_step_in_law() {
        let g = grid(8);
        let spec = AdditiveNoiseSpec::new(1.0).unwrap();
        let modes = [(1, 0), (1, 1), (2, 1)];
        let dt = 0.3;
        // analytic: composing variances
        for &(k1, k2) in &modes {
            let lam = (k1 * k1 + k2 * k2) as f64;
            let half = ou_variance(lam, 1.0, dt / 2.0);
            let composed = (-2.0 * lam * dt / 2.0).exp() * half + half;
            assert!((composed - ou_variance(lam, 1.0, dt)).abs() < 1e-15);
        }
        let two = sample_mode(&spec, &g, 2, dt / 2.0, 10_000, 1, &modes);
        let one = sample_mode(&spec, &g, 1, dt, 10_000, 2, &modes);
        for m in 0..modes.len() {
            let mut a: Vec<f64> = two[m].iter().map(|c| c.re).collect();
            let mut b: Vec<f64> = one[m].iter().map(|c| c.re).collect();
            let p = ks_two_sample(&mut a, &mut b);
            assert!(p > 0.01, "mode {:?}: KS p = {p}", modes[m]);
        }
    }

    #[test]
    fn sigma_families_satisfy_declared_bounds() {
        let uniform = vec![ChannelProfile::Uniform { amplitude: 1.0 }];
        let c = MultiplicativeNoiseSpec::new(SigmaFamily::Constant, uniform.clone()).unwrap();
        assert_eq!((c.growth_constant(), c.lipschitz_constant()), (1.0, 0.0));
        let g = grid(8);
        let field = RealField::from_fn(&g, |x1, x2| x1 - x2);
        let out = eval_sigma(&c, 0.0, &field);
        assert!(out[0].samples().iter().all(|&v| v == 1.0));

        let lin = MultiplicativeNoiseSpec::new(SigmaFamily::Linear, uniform.clone()).unwrap();
        assert_eq!(
            (lin.growth_constant(), lin.lipschitz_constant()),
            (1.0, 1.0)
        );
        assert_eq!(eval_sigma(&lin, 0.0, &field)[0], field);

        // understated constants are caught at registration
        assert!(MultiplicativeNoiseSpec::with_constants(
            SigmaFamily::Linear,
            uniform.clone(),
            Some(0.5),
            None
        )
        .is_err());
        assert!(MultiplicativeNoiseSpec::with_constants(
            SigmaFamily::Sine,
            uniform.clone(),
            None,
            Some(0.9)
        )
        .is_err());
        assert!(MultiplicativeNoiseSpec::new(SigmaFamily::Saturated, uniform).is_ok());
        assert!(MultiplicativeNoiseSpec::new(SigmaFamily::Linear, vec![]).is_err());
    }

    #[test]
    fn sine_is_one_lipschitz() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100_000 {
            let r: f64 = rng.random_range(-50.0..50.0);
            let s: f64 = rng.random_range(-50.0..50.0);
            assert!((r.sin() - s.sin()).abs() <= (r - s).abs() + 1e-15);
        }
    }

    #[test]
    fn mode_profile_forcing_is_the_mode() {
        let g = grid(16);
        let spec = MultiplicativeNoiseSpec::new(
            SigmaFamily::Constant,
            vec![ChannelProfile::Mode {
                mode: [1, 0],
                phase: Phase::Cos,
                amplitude: 1.0,
            }],
        )
        .unwrap();
        let f = sigma_forcing(&spec, 0.0, &RealField::zeros(&g)).unwrap();
        let want = SpectralField::single_mode(&g, 1, 0, 1.0, Phase::Cos).unwrap();
        assert!(f[0].sub(&want).l2_norm() < 1e-13);
        // uniform profile has no zero-mean component
        let u = MultiplicativeNoiseSpec::new(
            SigmaFamily::Constant,
            vec![ChannelProfile::Uniform { amplitude: 1.0 }],
        )
        .unwrap();
        assert!(sigma_forcing(&u, 0.0, &RealField::zeros(&g)).unwrap()[0].l2_norm() < 1e-14);
    }

    #[test]
    fn multiplicative_spec_serde_round_trip() {
        let json = r#"{"family":"sine","channels":[{"kind":"mode","mode":[1,2],"phase":"sin","amplitude":0.5}]}"#;
        let spec: MultiplicativeNoiseSpec = serde_json::from_str(json).unwrap();
        assert_eq!(spec.growth_constant(), 0.5);
        let back: MultiplicativeNoiseSpec =
            serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
        let bad = r#"{"family":"sine","channels":[],"extra":1}"#;
        assert!(serde_json::from_str::<MultiplicativeNoiseSpec>(bad).is_err());
    }

    #[test]
    fn wiener_increment_moments() {
        let dt = 0.01;
        let n = 100_000usize;
        let mut rng = RngStream::new(5, 0, Purpose::MultiplicativeNoise);
        let draws = wiener_increments(n, dt, &mut rng).unwrap();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 4.0 * (dt / n as f64).sqrt());
        assert!((var - dt).abs() < 0.05 * dt);
        let mut again = RngStream::new(5, 0, Purpose::MultiplicativeNoise);
        assert_eq!(wiener_increments(n, dt, &mut again).unwrap(), draws);
        assert!(wiener_increments(1, 0.0, &mut again).is_err());
        // tail sanity against the normal CDF
        let normal = Normal::new(0.0, dt.sqrt()).unwrap();
        let frac = draws.iter().filter(|&&d| d > 0.2).count() as f64 / n as f64;
        let want = 1.0 - normal.cdf(0.2);
        assert!((frac - want).abs() < 4.0 * (want / n as f64).sqrt());
    }
}
