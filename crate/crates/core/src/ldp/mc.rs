//! Small-noise Monte Carlo estimates of `P(event)` and of the decay rate
//! `lim ε log P`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{NoiseSpec, Purpose, RngStream};
use crate::solver::{
    simulate_additive, simulate_multiplicative, Recording, SimulationConfig, Trajectory,
    TruncationSpec,
};
use crate::spectral::{Phase, SpectralField};
use crate::stats::{fit_line, wilson_interval, LineFit, Z_95};

/// Events decidable from a trajectory's diagnostics and final state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum Event {
    /// Always true.
    Whole,
    /// `‖ξ(T)‖_{L²} > threshold`.
    TerminalL2Exceeds { threshold: f64 },
    /// `sup_t ‖ξ(t)‖_{L^p} > threshold`.
    SupLpExceeds { threshold: f64 },
    /// The `cos`/`sin` amplitude of mode `η` in `ξ(T)` exceeds `threshold`.
    TerminalModeExceeds {
        mode: [i64; 2],
        phase: Phase,
        threshold: f64,
    },
}

impl Event {
    pub fn occurs(&self, traj: &Trajectory) -> bool {
        match self {
            Event::Whole => true,
            Event::TerminalL2Exceeds { threshold } => {
                traj.diagnostics.last().is_some_and(|d| d.l2 > *threshold)
            }
            Event::SupLpExceeds { threshold } => traj.sup_lp() > *threshold,
            Event::TerminalModeExceeds {
                mode,
                phase,
                threshold,
            } => traj
                .final_state()
                .mode_amplitude(mode[0], mode[1], *phase)
                .is_some_and(|a| a > *threshold),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Event::Whole => "whole space".into(),
            Event::TerminalL2Exceeds { threshold } => format!("||xi(T)||_L2 > {threshold}"),
            Event::SupLpExceeds { threshold } => format!("sup_t ||xi(t)||_Lp > {threshold}"),
            Event::TerminalModeExceeds {
                mode,
                phase,
                threshold,
            } => {
                let ph = match phase {
                    Phase::Cos => "cos",
                    Phase::Sin => "sin",
                };
                format!(
                    "{ph} amplitude of mode ({}, {}) at T > {threshold}",
                    mode[0], mode[1]
                )
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MCRow {
    pub epsilon: f64,
    pub samples: u64,
    pub hits: u64,
    pub probability: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// `ε log P̂`; `None` without hits.
    pub eps_log_p: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MCEstimate {
    pub event: Event,
    pub epsilons: Vec<f64>,
    pub rows: Vec<MCRow>,
    /// Fit of `ε log P̂` against `ε`; the intercept estimates `−inf I`.
    pub slope_fit: Option<LineFit>,
    /// Fit of `ε log P̂ − ½ ε log ε` against `ε`. Removes the `√ε` prefactor
    /// of Gaussian-type tails, which otherwise biases the intercept at
    /// moderate `ε`.
    pub corrected_fit: Option<LineFit>,
    /// ε values left out of the fits for lack of hits.
    pub skipped: Vec<f64>,
}

impl MCEstimate {
    /// Rate estimate `−intercept` from the corrected fit.
    pub fn rate_estimate(&self) -> Option<f64> {
        self.corrected_fit.map(|f| -f.intercept)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MCOptions {
    pub samples: u64,
    pub seed: u64,
    /// Truncation for multiplicative runs; none by default.
    pub truncation: TruncationSpec,
}

impl Default for MCOptions {
    fn default() -> Self {
        Self {
            samples: 10_000,
            seed: 0,
            truncation: TruncationSpec::none(),
        }
    }
}

/// One noisy trajectory with the model in `cfg` (additive or
/// multiplicative).
pub fn sample_trajectory(
    cfg: &SimulationConfig,
    xi0: &SpectralField,
    trunc: &TruncationSpec,
    rng: &mut RngStream,
) -> Result<Trajectory> {
    match &cfg.noise {
        Some(NoiseSpec::Additive(_)) => simulate_additive(cfg, xi0, rng),
        Some(NoiseSpec::Multiplicative(_)) => {
            simulate_multiplicative(cfg, xi0, trunc, None, Some(rng))
        }
        None => Err(Error::InvalidParameter(
            "Monte Carlo needs a noise spec".into(),
        )),
    }
}

/// Hit frequencies of `event` for each `ε`. Sample `s` at the `i`-th `ε` uses
/// stream `(seed, i · samples + s)`.
pub fn mc_estimate(
    event: &Event,
    epsilons: &[f64],
    cfg: &SimulationConfig,
    xi0: &SpectralField,
    opts: &MCOptions,
) -> Result<MCEstimate> {
    if epsilons.is_empty() || opts.samples == 0 {
        return Err(Error::InvalidParameter(
            "need at least one epsilon and one sample".into(),
        ));
    }
    if epsilons.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::InvalidParameter(
            "Monte Carlo epsilons must be positive".into(),
        ));
    }
    let mut run = cfg.clone();
    run.recording = Recording::Final;
    let purpose = match cfg.noise {
        Some(NoiseSpec::Additive(_)) => Purpose::AdditiveNoise,
        _ => Purpose::MultiplicativeNoise,
    };
    let mut rows = Vec::with_capacity(epsilons.len());
    for (i, &eps) in epsilons.iter().enumerate() {
        run.epsilon = eps;
        let hits: u64 = (0..opts.samples)
            .into_par_iter()
            .map(|s| {
                let mut rng = RngStream::new(opts.seed, i as u64 * opts.samples + s, purpose);
                let traj = sample_trajectory(&run, xi0, &opts.truncation, &mut rng)?;
                Ok(u64::from(event.occurs(&traj)))
            })
            .sum::<Result<u64>>()?;
        let p = hits as f64 / opts.samples as f64;
        let (lo, hi) = wilson_interval(hits, opts.samples, Z_95);
        rows.push(MCRow {
            epsilon: eps,
            samples: opts.samples,
            hits,
            probability: p,
            ci_low: lo,
            ci_high: hi,
            eps_log_p: (hits > 0).then(|| eps * p.ln()),
        });
    }
    Ok(summarize(event, epsilons, rows))
}

fn summarize(event: &Event, epsilons: &[f64], rows: Vec<MCRow>) -> MCEstimate {
    let used: Vec<&MCRow> = rows.iter().filter(|r| r.eps_log_p.is_some()).collect();
    let xs: Vec<f64> = used.iter().map(|r| r.epsilon).collect();
    let raw: Vec<f64> = used
        .iter()
        .map(|r| r.eps_log_p.expect("filtered"))
        .collect();
    let corrected: Vec<f64> = used
        .iter()
        .map(|r| r.eps_log_p.expect("filtered") - 0.5 * r.epsilon * r.epsilon.ln())
        .collect();
    let skipped = rows
        .iter()
        .filter(|r| r.eps_log_p.is_none())
        .map(|r| r.epsilon)
        .collect();
    MCEstimate {
        event: event.clone(),
        epsilons: epsilons.to_vec(),
        slope_fit: fit_line(&xs, &raw),
        corrected_fit: fit_line(&xs, &corrected),
        rows,
        skipped,
    }
}
