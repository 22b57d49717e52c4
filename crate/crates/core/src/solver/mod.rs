//! Time integration of the vorticity equation
//! `∂ₜξ + u·∇ξ = Δξ (+ noise, + control)` in mild form.
//!
//! All solvers use exponential time differencing. Per mode `η` with
//! `λ = |η|²`, `E = e^{−λ dt}` and `φ₁ = (1 − E)/λ`, the first-order scheme is
//!
//! ```text
//! ξ̂ ← E ξ̂ + φ₁ (N̂(ξ) + Σⱼ vⱼ σ̂ⱼ(ξ)) + √ε ρ/√dt Σⱼ σ̂ⱼ(ξ) ΔWʲ
//! ```
//!
//! where `N = −∇·q(ξ)` is the transport term in conservative form and
//! `ρ² = (1 − E²)/(2λ)` is the exact variance of `∫ e^{−λ(dt−s)} dW(s)`.
//! The second-order variant adds the Cox-Matthews correction
//! `φ₂ (N(a) − N(ξ))` with `a` the first-order predictor.

mod energy;
mod picard;

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::biot_savart::{negative_divergence, nonlinearity_from_parts};
use crate::error::{Error, Result};
use crate::ldp::ControlPath;
use crate::noise::{
    sample_zeta_path, sigma_forcing, wiener_increments, AdditiveNoiseSpec, MultiplicativeNoiseSpec,
    NoiseSpec,
};
use crate::spectral::{lp_norm, RealField, SpectralField, TorusGrid};

pub use energy::{energy_constant, energy_report, EnergyReport};
pub use picard::{picard_iterate, picard_solve, PicardReport, PicardSettings};

/// Exponential integrator order.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Exponential Euler.
    #[default]
    Etd1,
    /// Two-stage exponential Runge-Kutta (second order in the nonlinearity).
    Etd2,
}

/// Which states a trajectory keeps. Diagnostics are always kept for every
/// time; the initial and final states are always kept.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recording {
    #[default]
    All,
    Every(usize),
    Final,
}

impl Recording {
    fn keeps(self, k: usize, steps: usize) -> bool {
        k == 0
            || k == steps
            || match self {
                Recording::All => true,
                Recording::Every(s) => s > 0 && k.is_multiple_of(s),
                Recording::Final => false,
            }
    }
}

/// Parameters shared by every solver. The viscosity is fixed to 1.
#[derive(Clone, Debug)]
pub struct SimulationConfig {
    pub grid: TorusGrid,
    pub t_final: f64,
    pub dt: f64,
    /// Noise intensity `ε ≥ 0`; noise enters as `√ε`.
    pub epsilon: f64,
    /// Exponent of the `L^p` diagnostics.
    pub p: f64,
    pub noise: Option<NoiseSpec>,
    pub scheme: Scheme,
    /// Switches the transport term off (linear heat equation with forcing).
    pub nonlinearity: bool,
    pub recording: Recording,
}

impl SimulationConfig {
    /// Deterministic defaults: `ε = 0`, `p = 4`, no noise, first order.
    pub fn new(grid: &TorusGrid, t_final: f64, dt: f64) -> Result<Self> {
        let cfg = Self {
            grid: grid.clone(),
            t_final,
            dt,
            epsilon: 0.0,
            p: 4.0,
            noise: None,
            scheme: Scheme::Etd1,
            nonlinearity: true,
            recording: Recording::All,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "horizon T must be positive, got {}",
                self.t_final
            )));
        }
        if !(self.dt > 0.0 && self.dt <= self.t_final) {
            return Err(Error::InvalidParameter(format!(
                "time step must satisfy 0 < dt <= T, got dt = {}, T = {}",
                self.dt, self.t_final
            )));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be >= 0, got {}",
                self.epsilon
            )));
        }
        if !(self.p > 2.0) {
            return Err(Error::InvalidParameter(format!(
                "diagnostic exponent p must exceed 2, got {}",
                self.p
            )));
        }
        self.steps().map(|_| ())
    }

    /// Number of steps `T/dt`; `T` must be an integer multiple of `dt`.
    pub fn steps(&self) -> Result<usize> {
        let s = (self.t_final / self.dt).round();
        if s < 1.0 || (s * self.dt - self.t_final).abs() > 1e-9 * self.t_final {
            return Err(Error::InvalidParameter(format!(
                "T = {} is not an integer multiple of dt = {}",
                self.t_final, self.dt
            )));
        }
        Ok(s as usize)
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    fn additive(&self) -> Result<&AdditiveNoiseSpec> {
        match &self.noise {
            Some(NoiseSpec::Additive(a)) => Ok(a),
            _ => Err(Error::InvalidParameter(
                "configuration has no additive noise".into(),
            )),
        }
    }

    fn multiplicative(&self) -> Result<&MultiplicativeNoiseSpec> {
        match &self.noise {
            Some(NoiseSpec::Multiplicative(m)) => Ok(m),
            _ => Err(Error::InvalidParameter(
                "configuration has no multiplicative noise".into(),
            )),
        }
    }
}

/// Smooth cutoff `Π_R` applied to the `L^p` norm of the state.
///
/// `Π_R(r) = 1` for `r ≤ R`, `0` for `r ≥ R + 1`, cubic smoothstep in between
/// (`|Π_R'| ≤ 3/2`). An infinite radius disables truncation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(
    deny_unknown_fields,
    try_from = "TruncationRaw",
    into = "TruncationRaw"
)]
pub struct TruncationSpec {
    radius: f64,
    truncate_sigma: bool,
}

#[derive(Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TruncationRaw {
    /// `null` means no truncation.
    radius: Option<f64>,
    #[serde(default = "default_true")]
    truncate_sigma: bool,
}

fn default_true() -> bool {
    true
}

impl TryFrom<TruncationRaw> for TruncationSpec {
    type Error = Error;
    fn try_from(raw: TruncationRaw) -> Result<Self> {
        Ok(Self::new(raw.radius.unwrap_or(f64::INFINITY))?
            .with_sigma_truncation(raw.truncate_sigma))
    }
}

impl From<TruncationSpec> for TruncationRaw {
    fn from(t: TruncationSpec) -> Self {
        Self {
            radius: t.radius.is_finite().then_some(t.radius),
            truncate_sigma: t.truncate_sigma,
        }
    }
}

impl TruncationSpec {
    pub fn new(radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "truncation radius must be positive, got {radius}"
            )));
        }
        Ok(Self {
            radius,
            truncate_sigma: true,
        })
    }

    /// `Π ≡ 1`.
    pub fn none() -> Self {
        Self {
            radius: f64::INFINITY,
            truncate_sigma: false,
        }
    }

    /// `R = max(10 ‖ξ₀‖_{L^p}, 1)`.
    pub fn default_for(xi0: &SpectralField, p: f64) -> Self {
        let r = 10.0 * lp_norm(&xi0.to_real(), p);
        Self {
            radius: r.max(1.0),
            truncate_sigma: true,
        }
    }

    pub fn with_sigma_truncation(mut self, on: bool) -> Self {
        self.truncate_sigma = on;
        self
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn truncates_sigma(&self) -> bool {
        self.truncate_sigma
    }

    pub fn factor(&self, r: f64) -> f64 {
        let x = r - self.radius;
        if x <= 0.0 {
            1.0
        } else if x >= 1.0 {
            0.0
        } else {
            1.0 - x * x * (3.0 - 2.0 * x)
        }
    }

    pub fn derivative(&self, r: f64) -> f64 {
        let x = r - self.radius;
        if x <= 0.0 || x >= 1.0 {
            0.0
        } else {
            -6.0 * x * (1.0 - x)
        }
    }

    /// Largest difference quotient of `Π_R` on `points` equispaced samples of
    /// `[R − 1, R + 2]`.
    pub fn lipschitz_estimate(&self, points: usize) -> f64 {
        if !self.radius.is_finite() || points < 2 {
            return 0.0;
        }
        let (a, b) = (self.radius - 1.0, self.radius + 2.0);
        let h = (b - a) / (points - 1) as f64;
        (0..points - 1)
            .map(|i| {
                let r = a + i as f64 * h;
                (self.factor(r + h) - self.factor(r)).abs() / h
            })
            .fold(0.0, f64::max)
    }
}

/// Per-time diagnostics of a trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub l2: f64,
    pub lp: f64,
    pub grad_l2: f64,
    /// `Π_R(‖ξ‖_{L^p})`; 1 when no truncation applies.
    pub truncation_factor: f64,
    pub truncation_active: bool,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub diagnostics: Vec<Diagnostics>,
    /// Kept states and their time indices (see [`Recording`]).
    pub states: Vec<SpectralField>,
    pub state_indices: Vec<usize>,
    pub p: f64,
    /// Fraction of steps on which `Π_R = 0`.
    pub saturated_fraction: f64,
}

impl Trajectory {
    pub fn final_state(&self) -> &SpectralField {
        self.states
            .last()
            .expect("trajectory keeps its final state")
    }

    pub fn initial_state(&self) -> &SpectralField {
        &self.states[0]
    }

    pub fn state_at(&self, k: usize) -> Option<&SpectralField> {
        self.state_indices
            .binary_search(&k)
            .ok()
            .map(|i| &self.states[i])
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("non-empty")
    }

    pub fn truncation_ever_active(&self) -> bool {
        self.diagnostics.iter().any(|d| d.truncation_active)
    }

    /// `sup_k ‖ξ(t_k)‖_{L^p}`.
    pub fn sup_lp(&self) -> f64 {
        self.diagnostics.iter().map(|d| d.lp).fold(0.0, f64::max)
    }

    pub fn sup_l2(&self) -> f64 {
        self.diagnostics.iter().map(|d| d.l2).fold(0.0, f64::max)
    }

    /// Whether every state was kept.
    pub fn is_complete(&self) -> bool {
        self.states.len() == self.times.len()
    }
}

/// Per-mode ETD coefficients for one step size.
#[derive(Clone, Debug)]
pub(crate) struct Propagator {
    pub(crate) e: Vec<f64>,
    pub(crate) phi1: Vec<f64>,
    pub(crate) phi2: Vec<f64>,
    /// `ρ/√dt`: multiplies a Wiener increment.
    pub(crate) noise_gain: Vec<f64>,
}

impl Propagator {
    pub(crate) fn new(grid: &TorusGrid, dt: f64) -> Self {
        let n = grid.len();
        let mut p = Self {
            e: vec![0.0; n],
            phi1: vec![0.0; n],
            phi2: vec![0.0; n],
            noise_gain: vec![0.0; n],
        };
        for idx in 0..n {
            let lam = grid.mode_norm_sq(idx);
            let h = lam * dt;
            p.e[idx] = (-h).exp();
            if h == 0.0 {
                p.phi1[idx] = dt;
                p.phi2[idx] = 0.5 * dt;
                p.noise_gain[idx] = 1.0;
                continue;
            }
            p.phi1[idx] = -(-h).exp_m1() / lam;
            p.phi2[idx] = if h < 1e-2 {
                dt * (0.5 - h / 6.0 + h * h / 24.0 - h * h * h / 120.0 + h * h * h * h / 720.0)
            } else {
                (h + (-h).exp_m1()) / (lam * h)
            };
            p.noise_gain[idx] = (-(-2.0 * h).exp_m1() / (2.0 * lam)).sqrt() / dt.sqrt();
        }
        p
    }

    /// `E x + φ₁ f + g_noise w`, mean coefficient set to zero.
    pub(crate) fn advance(
        &self,
        x: &SpectralField,
        f: Option<&SpectralField>,
        w: Option<&SpectralField>,
    ) -> SpectralField {
        let mut out = x.clone();
        let c = out.coeffs_mut();
        for (i, ci) in c.iter_mut().enumerate() {
            let mut v = *ci * self.e[i];
            if let Some(f) = f {
                v += f.coeffs()[i] * self.phi1[i];
            }
            if let Some(w) = w {
                v += w.coeffs()[i] * self.noise_gain[i];
            }
            *ci = v;
        }
        c[0] = Complex64::new(0.0, 0.0);
        out
    }

    /// `x + φ₂ (b − a)`.
    pub(crate) fn correct(&self, x: &mut SpectralField, a: &SpectralField, b: &SpectralField) {
        let c = x.coeffs_mut();
        for (i, ci) in c.iter_mut().enumerate() {
            *ci += (b.coeffs()[i] - a.coeffs()[i]) * self.phi2[i];
        }
    }
}

/// Transport term `−∇·q(ξ)` from spectral and lattice representations.
pub(crate) fn transport(state: &SpectralField, real: &RealField) -> Result<SpectralField> {
    Ok(negative_divergence(&nonlinearity_from_parts(state, real)?))
}

fn diagnostics(state: &SpectralField, lp: f64, factor: f64) -> Diagnostics {
    Diagnostics {
        l2: state.l2_norm(),
        lp,
        grad_l2: state.sobolev_norm(1.0),
        truncation_factor: factor,
        truncation_active: factor < 1.0,
    }
}

fn check_initial(cfg: &SimulationConfig, xi0: &SpectralField) -> Result<()> {
    cfg.validate()?;
    if xi0.grid() != &cfg.grid {
        return Err(Error::GridMismatch);
    }
    xi0.require_zero_mean()?;
    if !xi0.is_finite() {
        return Err(Error::InvalidParameter(
            "initial state is not finite".into(),
        ));
    }
    Ok(())
}

/// Collects diagnostics and kept states while a solver runs.
struct Recorder {
    traj: Trajectory,
    recording: Recording,
    steps: usize,
    saturated: usize,
}

impl Recorder {
    fn new(cfg: &SimulationConfig, steps: usize) -> Self {
        Self {
            traj: Trajectory {
                times: Vec::with_capacity(steps + 1),
                diagnostics: Vec::with_capacity(steps + 1),
                states: Vec::new(),
                state_indices: Vec::new(),
                p: cfg.p,
                saturated_fraction: 0.0,
            },
            recording: cfg.recording,
            steps,
            saturated: 0,
        }
    }

    fn push(&mut self, k: usize, t: f64, state: &SpectralField, lp: f64, factor: f64) {
        self.traj.times.push(t);
        self.traj.diagnostics.push(diagnostics(state, lp, factor));
        if k < self.steps && factor == 0.0 {
            self.saturated += 1;
        }
        if self.recording.keeps(k, self.steps) {
            self.traj.states.push(state.clone());
            self.traj.state_indices.push(k);
        }
    }

    fn finish(mut self) -> Trajectory {
        self.traj.saturated_fraction = self.saturated as f64 / self.steps as f64;
        if self.traj.saturated_fraction > 0.1 {
            log::warn!(
                "truncation saturated on {:.1}% of steps; the solution left the radius-R regime",
                100.0 * self.traj.saturated_fraction
            );
        }
        self.traj
    }
}

/// Turns a non-finite lattice sample met while evaluating the step that
/// starts from `state` into a state dump.
fn dump_on_overflow(e: Error, step: usize, cfg: &SimulationConfig, state: &SpectralField) -> Error {
    match e {
        Error::NonFiniteSample { .. } => non_finite(step, cfg, state),
        e => e,
    }
}

fn non_finite(step: usize, cfg: &SimulationConfig, last_good: &SpectralField) -> Error {
    Error::NonFiniteState {
        step,
        time: cfg.time(step),
        state: Box::new(last_good.clone()),
    }
}

/// One deterministic step (`ε = 0`, no control) of size `dt`.
pub fn step_deterministic(xi: &SpectralField, dt: f64) -> Result<SpectralField> {
    step_deterministic_with(xi, dt, Scheme::Etd1)
}

pub fn step_deterministic_with(
    xi: &SpectralField,
    dt: f64,
    scheme: Scheme,
) -> Result<SpectralField> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "dt must be positive, got {dt}"
        )));
    }
    xi.require_zero_mean()?;
    let prop = Propagator::new(xi.grid(), dt);
    let dump = |e: Error| match e {
        Error::NonFiniteSample { .. } => Error::NonFiniteState {
            step: 0,
            time: 0.0,
            state: Box::new(xi.clone()),
        },
        e => e,
    };
    let n0 = transport(xi, &xi.to_real()).map_err(dump)?;
    let mut next = prop.advance(xi, Some(&n0), None);
    if scheme == Scheme::Etd2 {
        let n1 = transport(&next, &next.to_real()).map_err(dump)?;
        prop.correct(&mut next, &n0, &n1);
    }
    if !next.is_finite() {
        return Err(dump(Error::NonFiniteSample {
            j1: 0,
            j2: 0,
            value: f64::NAN,
        }));
    }
    Ok(next)
}

/// Deterministic trajectory (noise ignored).
pub fn simulate_deterministic(cfg: &SimulationConfig, xi0: &SpectralField) -> Result<Trajectory> {
    let mut det = cfg.clone();
    det.noise = None;
    det.epsilon = 0.0;
    simulate_multiplicative_inner(&det, xi0, &TruncationSpec::none(), None, None)
}

/// Additive noise: `ξ = β + √ε ζ` with `ζ` the stochastic convolution and
/// `∂ₜβ = Δβ − ∇·q(β + √ε ζ)`, `β(0) = ξ₀`.
pub fn simulate_additive<R: Rng + ?Sized>(
    cfg: &SimulationConfig,
    xi0: &SpectralField,
    rng: &mut R,
) -> Result<Trajectory> {
    let spec = *cfg.additive()?;
    check_initial(cfg, xi0)?;
    let steps = cfg.steps()?;
    let zeta = if cfg.epsilon > 0.0 {
        let s = cfg.epsilon.sqrt();
        sample_zeta_path(&cfg.grid, &spec, cfg.dt, steps, rng)?
            .into_iter()
            .map(|z| z.scaled(s))
            .collect()
    } else {
        vec![SpectralField::zeros(&cfg.grid); steps + 1]
    };
    simulate_additive_driven(cfg, xi0, &zeta)
}

/// Solves `∂ₜβ = Δβ − ∇·q(β + z)`, `β(0) = ξ₀`, for a given forcing path
/// `z(t_k)` (`steps + 1` samples), and returns `ξ = β + z`.
pub fn simulate_additive_driven(
    cfg: &SimulationConfig,
    xi0: &SpectralField,
    forcing: &[SpectralField],
) -> Result<Trajectory> {
    check_initial(cfg, xi0)?;
    let steps = cfg.steps()?;
    if forcing.len() != steps + 1 {
        return Err(Error::InvalidParameter(format!(
            "forcing path has {} samples, expected {}",
            forcing.len(),
            steps + 1
        )));
    }
    if forcing.iter().any(|z| z.grid() != &cfg.grid) {
        return Err(Error::GridMismatch);
    }
    let prop = Propagator::new(&cfg.grid, cfg.dt);
    let mut rec = Recorder::new(cfg, steps);
    let mut beta = xi0.clone();
    for k in 0..=steps {
        let xi = beta.add(&forcing[k]);
        let real = xi.to_real();
        rec.push(k, cfg.time(k), &xi, lp_norm(&real, cfg.p), 1.0);
        if k == steps {
            break;
        }
        let next = if cfg.nonlinearity {
            let n0 = transport(&xi, &real).map_err(|e| dump_on_overflow(e, k, cfg, &xi))?;
            let mut next = prop.advance(&beta, Some(&n0), None);
            if cfg.scheme == Scheme::Etd2 {
                let pred = next.add(&forcing[k + 1]);
                let n1 = transport(&pred, &pred.to_real())
                    .map_err(|e| dump_on_overflow(e, k, cfg, &xi))?;
                prop.correct(&mut next, &n0, &n1);
            }
            next
        } else {
            prop.advance(&beta, None, None)
        };
        if !next.is_finite() {
            return Err(non_finite(k + 1, cfg, &xi));
        }
        beta = next;
    }
    Ok(rec.finish())
}

/// Wiener increments for a multiplicative run, step-major and channel-minor:
/// entry `k·n + j` is `ΔWʲ` on step `k`.
pub fn draw_increments<R: Rng + ?Sized>(cfg: &SimulationConfig, rng: &mut R) -> Result<Vec<f64>> {
    let n = cfg.multiplicative()?.n_channels();
    wiener_increments(cfg.steps()? * n, cfg.dt, rng)
}

/// Multiplicative noise, optionally controlled:
///
/// ```text
/// dξ = (Δξ − Π ∇·q(ξ) + Π_σ Σⱼ σⱼ(ξ) vⱼ) dt + √ε Π_σ Σⱼ σⱼ(ξ) dWʲ
/// ```
///
/// with `Π = Π_R(‖ξ‖_{L^p})` and `Π_σ = Π` when the truncation applies to the
/// noise coefficients (`1` otherwise). Without `rng` the noise term is absent,
/// which with `ε = 0` gives the skeleton equation.
pub fn simulate_multiplicative(
    cfg: &SimulationConfig,
    xi0: &SpectralField,
    trunc: &TruncationSpec,
    control: Option<&ControlPath>,
    rng: Option<&mut dyn RngCore>,
) -> Result<Trajectory> {
    cfg.multiplicative()?;
    let increments = match rng {
        Some(r) if cfg.epsilon > 0.0 => Some(draw_increments(cfg, r)?),
        Some(_) => None,
        None if cfg.epsilon > 0.0 => {
            return Err(Error::InvalidParameter(
                "epsilon > 0 needs a random stream".into(),
            ));
        }
        None => None,
    };
    simulate_multiplicative_inner(cfg, xi0, trunc, control, increments.as_deref())
}

/// [`simulate_multiplicative`] with the Wiener increments supplied (layout of
/// [`draw_increments`]).
pub fn simulate_multiplicative_driven(
    cfg: &SimulationConfig,
    xi0: &SpectralField,
    trunc: &TruncationSpec,
    control: Option<&ControlPath>,
    increments: Option<&[f64]>,
) -> Result<Trajectory> {
    cfg.multiplicative()?;
    simulate_multiplicative_inner(cfg, xi0, trunc, control, increments)
}

fn simulate_multiplicative_inner(
    cfg: &SimulationConfig,
    xi0: &SpectralField,
    trunc: &TruncationSpec,
    control: Option<&ControlPath>,
    increments: Option<&[f64]>,
) -> Result<Trajectory> {
    check_initial(cfg, xi0)?;
    let steps = cfg.steps()?;
    let dynamics = Dynamics::new(cfg, trunc, control, increments)?;
    let mut rec = Recorder::new(cfg, steps);
    let mut state = xi0.clone();
    for k in 0..=steps {
        let real = state.to_real();
        let lp = lp_norm(&real, cfg.p);
        let factor = trunc.factor(lp);
        rec.push(k, cfg.time(k), &state, lp, factor);
        if k == steps {
            break;
        }
        let terms = dynamics
            .terms(k, &state, &real, lp)
            .map_err(|e| dump_on_overflow(e, k, cfg, &state))?;
        let mut next = dynamics
            .prop
            .advance(&state, terms.drift.as_ref(), terms.noise.as_ref());
        if cfg.scheme == Scheme::Etd2 {
            if let Some(n0) = &terms.transport {
                let real1 = next.to_real();
                let n1 = dynamics
                    .transport_term(&next, &real1, lp_norm(&real1, cfg.p))
                    .map_err(|e| dump_on_overflow(e, k, cfg, &state))?;
                dynamics.prop.correct(&mut next, n0, &n1);
            }
        }
        if !next.is_finite() {
            return Err(non_finite(k + 1, cfg, &state));
        }
        state = next;
    }
    Ok(rec.finish())
}

/// Skeleton states `ξ_v⁰(t_k)` for every `k` (no noise, no truncation,
/// no diagnostics). With `keep_all = false` only the final state is returned.
pub(crate) fn skeleton_states(
    cfg: &SimulationConfig,
    xi0: &SpectralField,
    control: Option<&ControlPath>,
    keep_all: bool,
) -> Result<Vec<SpectralField>> {
    check_initial(cfg, xi0)?;
    let steps = cfg.steps()?;
    let dynamics = Dynamics::new(cfg, &TruncationSpec::none(), control, None)?;
    let needs_real = cfg.nonlinearity || dynamics.frozen_sigma.is_none();
    let placeholder = RealField::zeros(&cfg.grid);
    let mut out = Vec::with_capacity(if keep_all { steps + 1 } else { 1 });
    let mut state = xi0.clone();
    for k in 0..steps {
        let computed;
        let real = if needs_real {
            computed = state.to_real();
            &computed
        } else {
            &placeholder
        };
        let terms = dynamics
            .terms(k, &state, real, 0.0)
            .map_err(|e| dump_on_overflow(e, k, cfg, &state))?;
        let mut next = dynamics.prop.advance(&state, terms.drift.as_ref(), None);
        if cfg.scheme == Scheme::Etd2 {
            if let Some(n0) = &terms.transport {
                let n1 = dynamics
                    .transport_term(&next, &next.to_real(), 0.0)
                    .map_err(|e| dump_on_overflow(e, k, cfg, &state))?;
                dynamics.prop.correct(&mut next, n0, &n1);
            }
        }
        if !next.is_finite() {
            return Err(non_finite(k + 1, cfg, &state));
        }
        if keep_all {
            out.push(std::mem::replace(&mut state, next));
        } else {
            state = next;
        }
    }
    out.push(state);
    Ok(out)
}

/// Drift and noise terms of one step, all evaluated at the left endpoint.
pub(crate) struct StepTerms {
    /// `Π N(ξ)` alone (kept for the second-order correction).
    pub(crate) transport: Option<SpectralField>,
    /// `Π N(ξ) + Π_σ Σ vⱼ σ̂ⱼ`.
    pub(crate) drift: Option<SpectralField>,
    /// `√ε Π_σ Σ σ̂ⱼ ΔWʲ` (before the per-mode gain).
    pub(crate) noise: Option<SpectralField>,
}

pub(crate) struct Dynamics<'a> {
    cfg: &'a SimulationConfig,
    pub(crate) prop: Propagator,
    noise: Option<&'a MultiplicativeNoiseSpec>,
    trunc: TruncationSpec,
    control: Option<&'a ControlPath>,
    increments: Option<&'a [f64]>,
    frozen_sigma: Option<Vec<SpectralField>>,
}

impl<'a> Dynamics<'a> {
    pub(crate) fn new(
        cfg: &'a SimulationConfig,
        trunc: &TruncationSpec,
        control: Option<&'a ControlPath>,
        increments: Option<&'a [f64]>,
    ) -> Result<Self> {
        let steps = cfg.steps()?;
        let noise = cfg.multiplicative().ok();
        let n = noise.map_or(0, MultiplicativeNoiseSpec::n_channels);
        if let Some(v) = control {
            let spec_n = noise.ok_or_else(|| {
                Error::InvalidParameter("controls need a multiplicative noise spec".into())
            })?;
            if v.n_channels() != spec_n.n_channels() {
                return Err(Error::InvalidParameter(format!(
                    "control has {} channels, noise has {}",
                    v.n_channels(),
                    spec_n.n_channels()
                )));
            }
            if (v.t_final() - cfg.t_final).abs() > 1e-12 * cfg.t_final {
                return Err(Error::InvalidParameter(
                    "control horizon differs from T".into(),
                ));
            }
            if !v.is_admissible() {
                return Err(Error::InvalidParameter(format!(
                    "control energy {} exceeds its bound {}",
                    v.cost(),
                    v.bound()
                )));
            }
        }
        let increments = if cfg.epsilon > 0.0 { increments } else { None };
        if let Some(w) = increments {
            if w.len() != steps * n {
                return Err(Error::InvalidParameter(format!(
                    "expected {} Wiener increments, got {}",
                    steps * n,
                    w.len()
                )));
            }
        }
        let frozen_sigma = match noise {
            Some(spec) if spec.family().is_state_independent() => {
                Some(sigma_forcing(spec, 0.0, &RealField::zeros(&cfg.grid))?)
            }
            _ => None,
        };
        Ok(Self {
            cfg,
            prop: Propagator::new(&cfg.grid, cfg.dt),
            noise,
            trunc: *trunc,
            control,
            increments,
            frozen_sigma,
        })
    }

    pub(crate) fn transport_term(
        &self,
        state: &SpectralField,
        real: &RealField,
        lp: f64,
    ) -> Result<SpectralField> {
        let mut n = transport(state, real)?;
        let f = self.trunc.factor(lp);
        if f != 1.0 {
            n.scale(f);
        }
        Ok(n)
    }

    pub(crate) fn terms(
        &self,
        k: usize,
        state: &SpectralField,
        real: &RealField,
        lp: f64,
    ) -> Result<StepTerms> {
        let transport = if self.cfg.nonlinearity {
            Some(self.transport_term(state, real, lp)?)
        } else {
            None
        };
        let mut drift = transport.clone();
        let mut noise = None;
        let control = self
            .control
            .map(|v| v.value_at((k as f64 + 0.5) * self.cfg.dt));
        let active_control = control.filter(|v| v.iter().any(|&x| x != 0.0));
        if let (Some(spec), true) = (
            self.noise,
            active_control.is_some() || self.increments.is_some(),
        ) {
            let sigma_factor = if self.trunc.truncates_sigma() {
                self.trunc.factor(lp)
            } else {
                1.0
            };
            let computed;
            let shapes = match &self.frozen_sigma {
                Some(s) => s,
                None => {
                    computed = sigma_forcing(spec, self.cfg.time(k), real)?;
                    &computed
                }
            };
            if let Some(v) = active_control {
                let d = drift.get_or_insert_with(|| SpectralField::zeros(&self.cfg.grid));
                for (j, s) in shapes.iter().enumerate() {
                    if v[j] != 0.0 {
                        d.axpy(sigma_factor * v[j], s);
                    }
                }
            }
            if let Some(w) = self.increments {
                let amp = self.cfg.epsilon.sqrt() * sigma_factor;
                let n = spec.n_channels();
                let mut acc = SpectralField::zeros(&self.cfg.grid);
                for (j, s) in shapes.iter().enumerate() {
                    acc.axpy(amp * w[k * n + j], s);
                }
                noise = Some(acc);
            }
        }
        Ok(StepTerms {
            transport,
            drift,
            noise,
        })
    }
}

/// Exact `L²` norm of `a cos(η·x)`: `a π √2`.
pub fn cosine_l2_norm(amplitude: f64) -> f64 {
    amplitude.abs() * PI * 2f64.sqrt()
}
