//! Whole-path Picard iteration for the mild equation.
//!
//! The map `𝒜` sends a discrete path `u = (u_0, …, u_K)` to the path
//! `a_0 = ξ₀`, `a_{k+1} = E a_k + φ₁ F(u_k) + gain · W(u_k)`, i.e. the
//! exponential-Euler discretization of the mild equation with all
//! nonlinear terms evaluated on `u`. Its fixed point is exactly the
//! stepping solution. Iterates are compared in the weighted norm
//! `‖u‖_λ = sup_k e^{−λ t_k} ‖u_k‖_{L^p}`, which gives the contraction
//! factors. The stopping rule uses the unweighted norm `‖·‖_0`: with
//! `e^{−λT}` tiny the weighted increment says nothing about late times.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    check_initial, Dynamics, Recorder, Scheme, SimulationConfig, Trajectory, TruncationSpec,
};
use crate::error::{Error, Result};
use crate::ldp::ControlPath;
use crate::spectral::{lp_norm, SpectralField};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PicardSettings {
    /// Exponential weight `λ > 0` of the path norm.
    pub lambda: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PicardSettings {
    fn default() -> Self {
        Self {
            lambda: 100.0,
            tol: 1e-10,
            max_iter: 50,
        }
    }
}

impl PicardSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "Picard weight must be positive, got {}",
                self.lambda
            )));
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidParameter(
                "Picard needs tol > 0 and max_iter >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Convergence record of a Picard run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PicardReport {
    pub iterations: usize,
    pub converged: bool,
    /// `‖u^{(m)} − u^{(m−1)}‖_λ` for `m = 1, 2, …`.
    pub increments: Vec<f64>,
    /// Same increments in the unweighted norm; iteration stops once below `tol`.
    pub sup_increments: Vec<f64>,
    /// Successive ratios `increments[m] / increments[m − 1]`.
    pub contraction_factors: Vec<f64>,
    /// Largest observed `‖F(u) − F(w)‖_{L^p} / ‖u − w‖_{L^p}` for the
    /// truncated transport term.
    pub transport_lipschitz: f64,
    /// A-priori contraction bound of `𝒜` in `‖·‖_λ`:
    /// `L_q T^{(p−1)/(2p)} √(π/λ) + (ε n L_σ²)^{1/2} ((1 − e^{−2λT})/(2λ))^{1/2}`
    /// with `L_q` the observed transport Lipschitz constant.
    pub certificate: f64,
}

impl PicardReport {
    pub fn max_contraction_factor(&self) -> Option<f64> {
        self.contraction_factors.iter().copied().reduce(f64::max)
    }
}

/// Runs the iteration and returns the last iterate and its report without
/// failing on non-convergence.
pub fn picard_iterate(
    cfg: &SimulationConfig,
    xi0: &SpectralField,
    trunc: &TruncationSpec,
    control: Option<&ControlPath>,
    increments: Option<&[f64]>,
    settings: &PicardSettings,
) -> Result<(Vec<SpectralField>, PicardReport)> {
    check_initial(cfg, xi0)?;
    settings.validate()?;
    if cfg.scheme != Scheme::Etd1 {
        return Err(Error::InvalidParameter(
            "Picard iteration is implemented for the first-order scheme only".into(),
        ));
    }
    let steps = cfg.steps()?;
    let dynamics = Dynamics::new(cfg, trunc, control, increments)?;
    let weights: Vec<f64> = (0..=steps)
        .map(|k| (-settings.lambda * cfg.time(k)).exp())
        .collect();

    let mut path = vec![xi0.clone(); steps + 1];
    let mut history: Vec<f64> = Vec::new();
    let mut sup_history: Vec<f64> = Vec::new();
    let mut ratios = Vec::new();
    let mut lip_q: f64 = 0.0;
    let mut prev_transport: Option<Vec<Option<SpectralField>>> = None;
    let mut prev_diffs: Option<Vec<f64>> = None;
    let mut converged = false;

    for _ in 0..settings.max_iter {
        let evaluated: Vec<_> = (0..steps)
            .into_par_iter()
            .map(|k| {
                let real = path[k].to_real();
                let lp = lp_norm(&real, cfg.p);
                dynamics.terms(k, &path[k], &real, lp)
            })
            .collect::<Result<_>>()?;

        let mut next = Vec::with_capacity(steps + 1);
        next.push(xi0.clone());
        for (k, t) in evaluated.iter().enumerate() {
            let a = dynamics
                .prop
                .advance(&next[k], t.drift.as_ref(), t.noise.as_ref());
            if !a.is_finite() {
                return Err(Error::NonFiniteState {
                    step: k + 1,
                    time: cfg.time(k + 1),
                    state: Box::new(next[k].clone()),
                });
            }
            next.push(a);
        }

        let diffs: Vec<f64> = (0..=steps)
            .into_par_iter()
            .map(|k| lp_norm(&next[k].sub(&path[k]).to_real(), cfg.p))
            .collect();
        let increment = diffs
            .iter()
            .zip(&weights)
            .map(|(d, w)| d * w)
            .fold(0.0, f64::max);
        let sup_increment = diffs.iter().copied().fold(0.0, f64::max);
        sup_history.push(sup_increment);

        let transport: Vec<Option<SpectralField>> =
            evaluated.into_iter().map(|t| t.transport).collect();
        if let (Some(prev), Some(gaps)) = (&prev_transport, &prev_diffs) {
            // `transport` was evaluated on `path`, `prev` on the input before
            // it; their distance is the previous increment, stepwise.
            let gaps: &Vec<f64> = gaps;
            let observed = (0..steps)
                .into_par_iter()
                .filter(|&k| gaps[k] > 1e-14)
                .filter_map(|k| match (&transport[k], &prev[k]) {
                    (Some(a), Some(b)) => Some(lp_norm(&a.sub(b).to_real(), cfg.p) / gaps[k]),
                    _ => None,
                })
                .reduce(|| 0.0, f64::max);
            lip_q = lip_q.max(observed);
        }

        if let Some(&last) = history.last() {
            ratios.push(if last > 0.0 { increment / last } else { 0.0 });
        }
        history.push(increment);
        prev_transport = Some(transport);
        prev_diffs = Some(diffs);
        path = next;
        if sup_increment < settings.tol {
            converged = true;
            break;
        }
    }

    let report = PicardReport {
        iterations: history.len(),
        converged,
        increments: history,
        sup_increments: sup_history,
        contraction_factors: ratios,
        transport_lipschitz: lip_q,
        certificate: certificate(cfg, trunc, settings.lambda, lip_q),
    };
    Ok((path, report))
}

fn certificate(cfg: &SimulationConfig, trunc: &TruncationSpec, lambda: f64, lip_q: f64) -> f64 {
    let (t, p) = (cfg.t_final, cfg.p);
    let transport = lip_q * t.powf((p - 1.0) / (2.0 * p)) * (std::f64::consts::PI / lambda).sqrt();
    let noise = match cfg.multiplicative() {
        Ok(spec) if cfg.epsilon > 0.0 => {
            // the cutoff adds at most |Π'| K (1 + R + 1) to the Lipschitz constant of Π σ
            let mut l = spec.lipschitz_constant();
            if trunc.truncates_sigma() && trunc.radius().is_finite() {
                l += 1.5 * spec.growth_constant() * (2.0 + trunc.radius());
            }
            let v = -(-2.0 * lambda * t).exp_m1() / (2.0 * lambda);
            (cfg.epsilon * spec.n_channels() as f64 * l * l * v).sqrt()
        }
        _ => 0.0,
    };
    transport + noise
}

/// Picard solution as a trajectory; fails if the tolerance is not reached
/// within `max_iter` iterations.
pub fn picard_solve(
    cfg: &SimulationConfig,
    xi0: &SpectralField,
    trunc: &TruncationSpec,
    control: Option<&ControlPath>,
    increments: Option<&[f64]>,
    settings: &PicardSettings,
) -> Result<(Trajectory, PicardReport)> {
    let (path, report) = picard_iterate(cfg, xi0, trunc, control, increments, settings)?;
    for (m, r) in report.contraction_factors.iter().enumerate() {
        log::debug!("Picard iteration {}: contraction factor {r:.3e}", m + 2);
    }
    if !report.converged {
        return Err(Error::PicardNotConverged {
            iterations: report.iterations,
            last_increment: report.sup_increments.last().copied().unwrap_or(f64::NAN),
            last_factor: report
                .contraction_factors
                .last()
                .copied()
                .unwrap_or(f64::NAN),
        });
    }
    let steps = path.len() - 1;
    let mut rec = Recorder::new(cfg, steps);
    for (k, u) in path.iter().enumerate() {
        let lp = lp_norm(&u.to_real(), cfg.p);
        rec.push(k, cfg.time(k), u, lp, trunc.factor(lp));
    }
    Ok((rec.finish(), report))
}
