use serde::{Deserialize, Serialize};

use super::Trajectory;
use crate::error::{Error, Result};
use crate::spectral::{lp_norm, SpectralField};

/// `L^p` energy summary of a trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub p: f64,
    /// `sup_t ‖ξ(t)‖_{L^p}^p`.
    pub sup_lp_pow: f64,
    /// `∫₀ᵀ ‖ |ξ|^{(p−2)/2} ∇ξ ‖²_{L²} dt`.
    pub dissipation: f64,
    /// `p (p − 1)` times [`Self::dissipation`]: the dissipation as it appears
    /// in `d/dt ‖ξ‖_{L^p}^p`.
    pub weighted_dissipation: f64,
}

/// `‖ |ξ|^{(p−2)/2} ∇ξ ‖²_{L²}` by lattice quadrature.
fn dissipation_density(xi: &SpectralField, p: f64) -> f64 {
    let real = xi.to_real();
    let d1 = xi.derivative(0).to_real();
    let d2 = xi.derivative(1).to_real();
    let area = xi.grid().cell_area();
    let weight = |v: f64| if p == 2.0 { 1.0 } else { v.abs().powf(p - 2.0) };
    real.samples()
        .iter()
        .zip(d1.samples().iter().zip(d2.samples()))
        .map(|(&v, (&a, &b))| weight(v) * (a * a + b * b))
        .sum::<f64>()
        * area
}

/// Composite Simpson on uniform samples, trapezoid on a leftover interval.
fn integrate_uniform(values: &[f64], h: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let intervals = n - 1;
    let even = intervals - intervals % 2;
    let mut s = 0.0;
    if even > 0 {
        let mut acc = values[0] + values[even];
        for (i, v) in values.iter().enumerate().take(even).skip(1) {
            acc += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
        }
        s += acc * h / 3.0;
    }
    if intervals % 2 == 1 {
        s += 0.5 * h * (values[n - 2] + values[n - 1]);
    }
    s
}

/// Energy summary for `p ≥ 2`. Needs every state (record with
/// [`super::Recording::All`]) on a uniform time grid.
pub fn energy_report(traj: &Trajectory, p: f64) -> Result<EnergyReport> {
    if !(p >= 2.0) {
        return Err(Error::InvalidParameter(format!(
            "energy report needs p >= 2, got {p}"
        )));
    }
    if !traj.is_complete() {
        return Err(Error::InvalidParameter(
            "energy report needs every state of the trajectory".into(),
        ));
    }
    let sup_lp_pow = traj
        .states
        .iter()
        .map(|s| lp_norm(&s.to_real(), p).powf(p))
        .fold(0.0, f64::max);
    let densities: Vec<f64> = traj
        .states
        .iter()
        .map(|s| dissipation_density(s, p))
        .collect();
    let h = if traj.times.len() > 1 {
        traj.times[1] - traj.times[0]
    } else {
        0.0
    };
    let dissipation = integrate_uniform(&densities, h);
    Ok(EnergyReport {
        p,
        sup_lp_pow,
        dissipation,
        weighted_dissipation: p * (p - 1.0) * dissipation,
    })
}

/// Empirical constant `C = mean(sup_t ‖ξ‖^p_{L^p}) / (1 + ‖ξ₀‖^p_{L^p})` for an
/// ensemble started from `xi0`.
pub fn energy_constant(reports: &[EnergyReport], xi0: &SpectralField) -> Option<f64> {
    let first = reports.first()?;
    let p = first.p;
    let mean = reports.iter().map(|r| r.sup_lp_pow).sum::<f64>() / reports.len() as f64;
    Some(mean / (1.0 + lp_norm(&xi0.to_real(), p).powf(p)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_is_exact_on_cubics() {
        let h = 0.1;
        let v: Vec<f64> = (0..11).map(|i| (i as f64 * h).powi(3)).collect();
        assert!((integrate_uniform(&v, h) - 0.25).abs() < 1e-14);
        // odd number of intervals falls back to a trapezoid on the last one
        let w = [1.0, 1.0, 1.0, 1.0];
        assert!((integrate_uniform(&w, 0.5) - 1.5).abs() < 1e-15);
    }
}
