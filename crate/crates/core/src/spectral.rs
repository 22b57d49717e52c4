//! Grids, real/spectral transforms, differential operators and norms on the
//! torus `[0, 2π]²`.
//!
//! Coefficients are taken in the orthonormal basis `e_η(x) = e^{iη·x} / (2π)`:
//!
//! ```text
//!     g_η = ∫ f(x) conj(e_η(x)) dx        f(x) = Σ_η g_η e_η(x)
//! ```
//!
//! so Parseval reads `‖f‖²_{L²} = Σ_η |g_η|²`. On the `N×N` collocation
//! lattice `x_j = 2π j / N` the integral becomes the rectangle rule, which
//! gives `g = (2π / N²) · DFT(f)` and makes the discrete Parseval identity
//! exact (lattice sum times cell area `(2π/N)²` on the physical side).
//!
//! Storage is row-major with the first index along `x₁`: entry `i1 * N + i2`
//! holds the sample at `(x₁, x₂) = (2π i1/N, 2π i2/N)` or the coefficient of
//! the mode `(k(i1), k(i2))`, where `k(i) = i` for `i < N/2` and `i - N`
//! otherwise.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

const TWO_PI: f64 = 2.0 * PI;

struct GridInner {
    n: usize,
    dealias_fraction: f64,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

/// Square `N×N` collocation grid on the 2π-periodic torus together with its
/// FFT plans. Cloning is cheap (the plans are shared).
#[derive(Clone)]
pub struct TorusGrid {
    inner: Arc<GridInner>,
}

impl fmt::Debug for TorusGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TorusGrid")
            .field("n", &self.inner.n)
            .field("dealias_fraction", &self.inner.dealias_fraction)
            .finish()
    }
}

impl PartialEq for TorusGrid {
    fn eq(&self, other: &Self) -> bool {
        self.inner.n == other.inner.n && self.inner.dealias_fraction == other.inner.dealias_fraction
    }
}

impl TorusGrid {
    /// `n` must be a power of two, at least 4; the dealias fraction lies in `(0, 1]`.
    pub fn new(n: usize, dealias_fraction: f64) -> Result<Self> {
        if n < 4 || !n.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "points per axis must be a power of two >= 4, got {n}"
            )));
        }
        if !(dealias_fraction > 0.0 && dealias_fraction <= 1.0) {
            return Err(Error::InvalidGrid(format!(
                "dealias fraction must lie in (0, 1], got {dealias_fraction}"
            )));
        }
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        Ok(Self {
            inner: Arc::new(GridInner {
                n,
                dealias_fraction,
                forward,
                inverse,
            }),
        })
    }

    /// Grid with the usual 2/3 dealiasing rule.
    pub fn two_thirds(n: usize) -> Result<Self> {
        Self::new(n, 2.0 / 3.0)
    }

    pub fn n(&self) -> usize {
        self.inner.n
    }

    /// Number of lattice points (= number of stored coefficients).
    pub fn len(&self) -> usize {
        self.inner.n * self.inner.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dealias_fraction(&self) -> f64 {
        self.inner.dealias_fraction
    }

    pub fn spacing(&self) -> f64 {
        TWO_PI / self.inner.n as f64
    }

    pub fn cell_area(&self) -> f64 {
        let h = self.spacing();
        h * h
    }

    /// Signed wavenumber stored at array index `i` along one axis.
    #[inline]
    pub fn wavenumber(&self, i: usize) -> i64 {
        let n = self.inner.n;
        if i < n / 2 {
            i as i64
        } else {
            i as i64 - n as i64
        }
    }

    /// Mode `η = (η₁, η₂)` stored at flat index `idx`.
    #[inline]
    pub fn mode(&self, idx: usize) -> (i64, i64) {
        let n = self.inner.n;
        (self.wavenumber(idx / n), self.wavenumber(idx % n))
    }

    /// `|η|²` at flat index `idx`.
    #[inline]
    pub fn mode_norm_sq(&self, idx: usize) -> f64 {
        let (a, b) = self.mode(idx);
        (a * a + b * b) as f64
    }

    /// Flat index of `-η` for the mode stored at `idx`.
    #[inline]
    pub fn conjugate_index(&self, idx: usize) -> usize {
        let n = self.inner.n;
        let (i1, i2) = (idx / n, idx % n);
        ((n - i1) % n) * n + (n - i2) % n
    }

    /// Flat index of a resolvable mode, i.e. `|η_i| ≤ N/2 − 1`.
    pub fn index_of(&self, k1: i64, k2: i64) -> Option<usize> {
        let half = (self.inner.n / 2) as i64;
        if k1.abs() >= half || k2.abs() >= half {
            return None;
        }
        let n = self.inner.n as i64;
        Some((k1.rem_euclid(n) * n + k2.rem_euclid(n)) as usize)
    }

    /// True when either component sits on the Nyquist index `N/2`.
    #[inline]
    pub fn is_nyquist(&self, idx: usize) -> bool {
        let n = self.inner.n;
        idx / n == n / 2 || idx % n == n / 2
    }

    /// True when the mode survives the dealiasing mask.
    #[inline]
    pub fn is_kept(&self, idx: usize) -> bool {
        let cutoff = self.inner.dealias_fraction * (self.inner.n / 2) as f64;
        let (a, b) = self.mode(idx);
        (a.abs() as f64) <= cutoff && (b.abs() as f64) <= cutoff && !self.is_nyquist(idx)
    }

    /// Physical coordinates of lattice point `idx`.
    #[inline]
    pub fn point(&self, idx: usize) -> (f64, f64) {
        let n = self.inner.n;
        let h = self.spacing();
        ((idx / n) as f64 * h, (idx % n) as f64 * h)
    }

    fn check_same(&self, other: &TorusGrid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    /// Unnormalized 2D DFT in place (`sign = -1` forward, `+1` inverse).
    fn fft2(&self, data: &mut [Complex64], inverse: bool) {
        let n = self.inner.n;
        let plan = if inverse {
            &self.inner.inverse
        } else {
            &self.inner.forward
        };
        let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        for row in data.chunks_exact_mut(n) {
            plan.process_with_scratch(row, &mut scratch);
        }
        let mut column = vec![Complex64::new(0.0, 0.0); n];
        for i2 in 0..n {
            for i1 in 0..n {
                column[i1] = data[i1 * n + i2];
            }
            plan.process_with_scratch(&mut column, &mut scratch);
            for i1 in 0..n {
                data[i1 * n + i2] = column[i1];
            }
        }
    }
}

/// Real samples on the `N×N` collocation lattice.
#[derive(Clone, Debug, PartialEq)]
pub struct RealField {
    grid: TorusGrid,
    samples: Vec<f64>,
}

impl RealField {
    pub fn new(grid: &TorusGrid, samples: Vec<f64>) -> Result<Self> {
        if samples.len() != grid.len() {
            return Err(Error::InvalidParameter(format!(
                "expected {} samples, got {}",
                grid.len(),
                samples.len()
            )));
        }
        Ok(Self {
            grid: grid.clone(),
            samples,
        })
    }

    pub fn zeros(grid: &TorusGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: &TorusGrid, value: f64) -> Self {
        Self {
            grid: grid.clone(),
            samples: vec![value; grid.len()],
        }
    }

    /// Samples `f(x₁, x₂)` on the lattice.
    pub fn from_fn(grid: &TorusGrid, f: impl Fn(f64, f64) -> f64) -> Self {
        let samples = (0..grid.len())
            .map(|idx| {
                let (x1, x2) = grid.point(idx);
                f(x1, x2)
            })
            .collect();
        Self {
            grid: grid.clone(),
            samples,
        }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [f64] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid.clone(),
            samples: self.samples.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Pointwise product.
    pub fn mul(&self, other: &RealField) -> Result<Self> {
        self.grid.check_same(&other.grid)?;
        Ok(Self {
            grid: self.grid.clone(),
            samples: self
                .samples
                .iter()
                .zip(&other.samples)
                .map(|(a, b)| a * b)
                .collect(),
        })
    }

    pub fn sup_norm(&self) -> f64 {
        self.samples.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Forward transform. Conjugate pairs are averaged so the reality
    /// condition `conj(g_η) = g_{−η}` holds exactly.
    pub fn to_spectral(&self) -> Result<SpectralField> {
        let n = self.grid.n();
        if let Some(idx) = self.samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteSample {
                j1: idx / n,
                j2: idx % n,
                value: self.samples[idx],
            });
        }
        let mut data: Vec<Complex64> = self
            .samples
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .collect();
        self.grid.fft2(&mut data, false);
        let scale = TWO_PI / (n * n) as f64;
        for c in data.iter_mut() {
            *c *= scale;
        }
        let mut field = SpectralField {
            grid: self.grid.clone(),
            coeffs: data,
        };
        field.enforce_reality();
        Ok(field)
    }
}

/// `L^p` norm by lattice quadrature; `p = f64::INFINITY` gives the sup norm.
///
/// Panics if `p < 1` or `p` is NaN.
pub fn lp_norm(f: &RealField, p: f64) -> f64 {
    assert!(p >= 1.0, "L^p norm needs p >= 1, got {p}");
    if p.is_infinite() {
        return f.sup_norm();
    }
    let area = f.grid.cell_area();
    if p == 2.0 {
        return (f.samples.iter().map(|v| v * v).sum::<f64>() * area).sqrt();
    }
    (f.samples.iter().map(|v| v.abs().powf(p)).sum::<f64>() * area).powf(1.0 / p)
}

/// Complex Fourier coefficients of a real field in the `e_η` basis.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralField {
    grid: TorusGrid,
    coeffs: Vec<Complex64>,
}

impl SpectralField {
    pub fn zeros(grid: &TorusGrid) -> Self {
        Self {
            grid: grid.clone(),
            coeffs: vec![Complex64::new(0.0, 0.0); grid.len()],
        }
    }

    /// Wraps raw coefficients; the reality condition is enforced.
    pub fn from_coeffs(grid: &TorusGrid, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != grid.len() {
            return Err(Error::InvalidParameter(format!(
                "expected {} coefficients, got {}",
                grid.len(),
                coeffs.len()
            )));
        }
        let mut field = Self {
            grid: grid.clone(),
            coeffs,
        };
        field.enforce_reality();
        Ok(field)
    }

    /// `amplitude · cos(η·x)` (or `sin`) built directly in spectral space.
    pub fn single_mode(
        grid: &TorusGrid,
        k1: i64,
        k2: i64,
        amplitude: f64,
        phase: Phase,
    ) -> Result<Self> {
        let idx = grid.index_of(k1, k2).ok_or_else(|| {
            Error::InvalidParameter(format!(
                "mode ({k1}, {k2}) is not resolvable on N = {}",
                grid.n()
            ))
        })?;
        let mut field = Self::zeros(grid);
        let conj = grid.conjugate_index(idx);
        // cos(η·x) = π (e_η + e_{−η}),  sin(η·x) = −iπ (e_η − e_{−η})
        let (c, c_conj) = match phase {
            Phase::Cos => (Complex64::new(PI, 0.0), Complex64::new(PI, 0.0)),
            Phase::Sin => (Complex64::new(0.0, -PI), Complex64::new(0.0, PI)),
        };
        if idx == conj {
            // η = 0: cos gives the constant, sin vanishes.
            if phase == Phase::Cos {
                field.coeffs[idx] = Complex64::new(amplitude * TWO_PI, 0.0);
            }
            return Ok(field);
        }
        field.coeffs[idx] += c * amplitude;
        field.coeffs[conj] += c_conj * amplitude;
        Ok(field)
    }

    /// Random real, zero-mean field band-limited to the dealiased modes with
    /// coefficient standard deviation `amplitude · |η|^{-decay}`.
    pub fn random<R: Rng + ?Sized>(
        grid: &TorusGrid,
        rng: &mut R,
        amplitude: f64,
        decay: f64,
    ) -> Self {
        let mut coeffs = vec![Complex64::new(0.0, 0.0); grid.len()];
        for idx in 0..grid.len() {
            let conj = grid.conjugate_index(idx);
            // fill one representative of each conjugate pair
            if conj < idx || !grid.is_kept(idx) || grid.mode_norm_sq(idx) == 0.0 {
                continue;
            }
            let sd = amplitude * grid.mode_norm_sq(idx).powf(-decay / 2.0);
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            let c = Complex64::new(re, im) * (sd / 2f64.sqrt());
            coeffs[idx] = c;
            coeffs[conj] = c.conj();
        }
        Self {
            grid: grid.clone(),
            coeffs,
        }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    /// Mutable coefficient access; callers are responsible for keeping
    /// conjugate pairs consistent (or calling [`Self::enforce_reality`]).
    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn coeff(&self, k1: i64, k2: i64) -> Option<Complex64> {
        self.grid.index_of(k1, k2).map(|i| self.coeffs[i])
    }

    /// Coefficient of `(0, 0)`.
    pub fn mean_coeff(&self) -> Complex64 {
        self.coeffs[0]
    }

    /// Average of the field over the torus.
    pub fn mean(&self) -> f64 {
        self.coeffs[0].re / TWO_PI
    }

    pub fn is_zero_mean(&self, tol: f64) -> bool {
        self.coeffs[0].norm() <= tol
    }

    /// Rejects fields whose mean coefficient exceeds `1e-10 · max(1, ‖g‖)`.
    pub fn require_zero_mean(&self) -> Result<()> {
        let tol = 1e-10 * self.l2_norm().max(1.0);
        if self.is_zero_mean(tol) {
            Ok(())
        } else {
            Err(Error::NonZeroMean(self.coeffs[0].norm()))
        }
    }

    /// Inverse transform to lattice samples.
    pub fn to_real(&self) -> RealField {
        let mut data = self.coeffs.clone();
        self.grid.fft2(&mut data, true);
        let scale = 1.0 / TWO_PI;
        RealField {
            grid: self.grid.clone(),
            samples: data.iter().map(|c| c.re * scale).collect(),
        }
    }

    /// Largest imaginary part produced by the inverse transform (reality check).
    pub fn max_imaginary_part(&self) -> f64 {
        let mut data = self.coeffs.clone();
        self.grid.fft2(&mut data, true);
        data.iter().fold(0.0_f64, |m, c| m.max(c.im.abs())) / TWO_PI
    }

    /// Makes `conj(g_η) = g_{−η}` hold exactly by averaging conjugate pairs.
    pub fn enforce_reality(&mut self) {
        for idx in 0..self.coeffs.len() {
            let conj = self.grid.conjugate_index(idx);
            if conj < idx {
                continue;
            }
            let avg = 0.5 * (self.coeffs[idx] + self.coeffs[conj].conj());
            self.coeffs[idx] = avg;
            self.coeffs[conj] = avg.conj();
        }
    }

    pub fn reality_defect(&self) -> f64 {
        (0..self.coeffs.len())
            .map(|idx| {
                (self.coeffs[idx] - self.coeffs[self.grid.conjugate_index(idx)].conj()).norm()
            })
            .fold(0.0, f64::max)
    }

    pub fn project_zero_mean(&mut self) {
        self.coeffs[0] = Complex64::new(0.0, 0.0);
    }

    /// Zeroes every mode outside the dealiasing mask (and the Nyquist line).
    pub fn dealias(&mut self) {
        for (idx, c) in self.coeffs.iter_mut().enumerate() {
            if !self.grid.is_kept(idx) {
                *c = Complex64::new(0.0, 0.0);
            }
        }
    }

    pub fn dealiased(mut self) -> Self {
        self.dealias();
        self
    }

    /// Multiplies each coefficient by a real multiplier depending on `(η₁, η₂)`.
    pub fn apply_multiplier(&self, m: impl Fn(i64, i64) -> f64) -> Self {
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(idx, &c)| {
                let (a, b) = self.grid.mode(idx);
                c * m(a, b)
            })
            .collect();
        Self {
            grid: self.grid.clone(),
            coeffs,
        }
    }

    /// `Δg`: coefficient at `η` becomes `−|η|² g_η`.
    pub fn laplacian(&self) -> Self {
        self.apply_multiplier(|a, b| -((a * a + b * b) as f64))
    }

    /// Spectral partial derivative along axis `axis` (0 for `x₁`, 1 for
    /// `x₂`). The Nyquist line is mapped to zero.
    pub fn derivative(&self, axis: usize) -> Self {
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(idx, &c)| {
                if self.grid.is_nyquist(idx) {
                    return Complex64::new(0.0, 0.0);
                }
                let (a, b) = self.grid.mode(idx);
                let k = if axis == 0 { a } else { b };
                c * Complex64::new(0.0, k as f64)
            })
            .collect();
        Self {
            grid: self.grid.clone(),
            coeffs,
        }
    }

    /// `H^a` norm `(Σ_{η≠0} |η|^{2a} |g_η|²)^{1/2}`.
    pub fn sobolev_norm(&self, a: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .skip(1)
            .map(|(idx, c)| self.grid.mode_norm_sq(idx).powf(a) * c.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// `L²` norm via Parseval.
    pub fn l2_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Real `L²` inner product `∫ f g dx = Re Σ f_η conj(g_η)`.
    pub fn inner(&self, other: &SpectralField) -> f64 {
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| (a * b.conj()).re)
            .sum()
    }

    pub fn scale(&mut self, s: f64) {
        for c in self.coeffs.iter_mut() {
            *c *= s;
        }
    }

    pub fn scaled(mut self, s: f64) -> Self {
        self.scale(s);
        self
    }

    /// `self += s · other`.
    pub fn axpy(&mut self, s: f64, other: &SpectralField) {
        debug_assert!(self.grid == other.grid);
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += b * s;
        }
    }

    pub fn add(&self, other: &SpectralField) -> Self {
        let mut out = self.clone();
        out.axpy(1.0, other);
        out
    }

    pub fn sub(&self, other: &SpectralField) -> Self {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    /// Cosine amplitude of mode `η`: `a` such that the field contains
    /// `a cos(η·x)` (or `a sin(η·x)` for [`Phase::Sin`]).
    pub fn mode_amplitude(&self, k1: i64, k2: i64, phase: Phase) -> Option<f64> {
        let idx = self.grid.index_of(k1, k2)?;
        let g = self.coeffs[idx];
        let g_conj = self.coeffs[self.grid.conjugate_index(idx)];
        Some(match phase {
            Phase::Cos => (g + g_conj).re / TWO_PI,
            Phase::Sin => (Complex64::new(0.0, 1.0) * (g - g_conj)).re / TWO_PI,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs
            .iter()
            .all(|c| c.re.is_finite() && c.im.is_finite())
    }
}

/// Trigonometric phase of a real single-mode profile.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Cos,
    Sin,
}
