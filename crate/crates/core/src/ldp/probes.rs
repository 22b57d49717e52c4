//! Numerical probes of the local Lipschitz estimate for the additive split
//! and of uniform convergence of the controlled equation as `ε → 0`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ControlPath;
use crate::error::{Error, Result};
use crate::noise::{NoiseSpec, Purpose, RngStream};
use crate::solver::{
    draw_increments, simulate_additive_driven, simulate_multiplicative_driven, Recording,
    SimulationConfig, Trajectory, TruncationSpec,
};
use crate::spectral::{lp_norm, SpectralField};
use crate::stats::median;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzProbe {
    pub r1: f64,
    pub r2: f64,
    pub pairs: usize,
    /// `‖β₁ − β₂‖_{C([0,T];L^p)} / ‖ζ₁ − ζ₂‖_{C([0,T];L^p)}` per pair.
    pub ratios_lp: Vec<f64>,
    /// Same quotient in `C([0,T] × T²)`.
    pub ratios_sup: Vec<f64>,
    pub max_ratio_lp: f64,
    pub max_ratio_sup: f64,
    pub median_ratio_lp: f64,
    pub median_ratio_sup: f64,
}

/// Smooth forcing path `z(t) = sin(πt/T) A + (1 − cos(2πt/T)) B / 2` with
/// smooth random `A`, `B`, rescaled to `sup_t ‖z(t)‖_{L^p} = radius`.
fn forcing_path(
    cfg: &SimulationConfig,
    radius: f64,
    rng: &mut RngStream,
) -> Result<Vec<SpectralField>> {
    let steps = cfg.steps()?;
    let a = SpectralField::random(&cfg.grid, rng, 1.0, 2.0).dealiased();
    let b = SpectralField::random(&cfg.grid, rng, 1.0, 2.0).dealiased();
    let t_final = cfg.t_final;
    let mut path: Vec<SpectralField> = (0..=steps)
        .map(|k| {
            let s = cfg.time(k) / t_final;
            let mut z = a.clone().scaled((std::f64::consts::PI * s).sin());
            z.axpy(0.5 * (1.0 - (2.0 * std::f64::consts::PI * s).cos()), &b);
            z
        })
        .collect();
    let sup = path
        .iter()
        .map(|z| lp_norm(&z.to_real(), cfg.p))
        .fold(0.0, f64::max);
    if sup > 0.0 {
        let s = radius / sup;
        path.iter_mut().for_each(|z| z.scale(s));
    }
    Ok(path)
}

fn path_distance(a: &[SpectralField], b: &[SpectralField], p: f64) -> (f64, f64) {
    a.iter().zip(b).fold((0.0f64, 0.0f64), |(lp, sup), (x, y)| {
        let d = x.sub(y).to_real();
        (lp.max(lp_norm(&d, p)), sup.max(d.sup_norm()))
    })
}

fn beta_path(traj: &Trajectory, forcing: &[SpectralField]) -> Vec<SpectralField> {
    traj.states
        .iter()
        .zip(forcing)
        .map(|(xi, z)| xi.sub(z))
        .collect()
}

/// Samples `pairs` pairs of smooth forcings with `sup_t ‖ζ‖_{L^p} ≤ r2` and
/// initial data with `‖ξ₀‖_{L^p} ≤ r1`, solves `∂ₜβ = Δβ − ∇·q(β + ζ)` for
/// both and reports the difference quotients. `cfg` needs no noise spec.
pub fn lipschitz_probe(
    r1: f64,
    r2: f64,
    pairs: usize,
    cfg: &SimulationConfig,
    seed: u64,
) -> Result<LipschitzProbe> {
    if !(r1 >= 0.0 && r2 > 0.0) || pairs == 0 {
        return Err(Error::InvalidParameter(
            "Lipschitz probe needs r1 >= 0, r2 > 0 and pairs > 0".into(),
        ));
    }
    let mut run = cfg.clone();
    run.recording = Recording::All;
    run.epsilon = 0.0;
    let results: Vec<(f64, f64)> = (0..pairs)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::new(seed, i as u64, Purpose::Probe);
            let u: f64 = rand::Rng::random_range(&mut rng, 0.1..=1.0);
            let mut xi0 = SpectralField::random(&run.grid, &mut rng, 1.0, 2.0);
            let n0 = lp_norm(&xi0.to_real(), run.p);
            if n0 > 0.0 {
                xi0.scale(u * r1 / n0);
            }
            loop {
                let s1: f64 = rand::Rng::random_range(&mut rng, 0.1..=1.0);
                let s2: f64 = rand::Rng::random_range(&mut rng, 0.1..=1.0);
                let z1 = forcing_path(&run, s1 * r2, &mut rng)?;
                let z2 = forcing_path(&run, s2 * r2, &mut rng)?;
                let (dz_lp, dz_sup) = path_distance(&z1, &z2, run.p);
                if dz_lp < 1e-6 {
                    continue;
                }
                let t1 = simulate_additive_driven(&run, &xi0, &z1)?;
                let t2 = simulate_additive_driven(&run, &xi0, &z2)?;
                let (db_lp, db_sup) =
                    path_distance(&beta_path(&t1, &z1), &beta_path(&t2, &z2), run.p);
                return Ok((db_lp / dz_lp, db_sup / dz_sup));
            }
        })
        .collect::<Result<_>>()?;
    let ratios_lp: Vec<f64> = results.iter().map(|r| r.0).collect();
    let ratios_sup: Vec<f64> = results.iter().map(|r| r.1).collect();
    Ok(LipschitzProbe {
        r1,
        r2,
        pairs,
        max_ratio_lp: ratios_lp.iter().copied().fold(0.0, f64::max),
        max_ratio_sup: ratios_sup.iter().copied().fold(0.0, f64::max),
        median_ratio_lp: median(&ratios_lp).expect("pairs > 0"),
        median_ratio_sup: median(&ratios_sup).expect("pairs > 0"),
        ratios_lp,
        ratios_sup,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathNorm {
    /// `C([0,T]; L^p)`
    Lp,
    /// `C([0,T] × T²)`
    Sup,
}

/// Exceedance frequency for one `(ξ₀, v, ε, δ, norm)` cell.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformRow {
    pub initial: usize,
    pub control: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub norm: PathNorm,
    pub samples: usize,
    pub hits: usize,
    pub probability: f64,
}

/// Max over the `(ξ₀, v)` grid, per `(ε, δ, norm)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformMax {
    pub epsilon: f64,
    pub delta: f64,
    pub norm: PathNorm,
    pub max_probability: f64,
}

/// Variance of the estimated difference `P̂(ε_i) − P̂(ε_{i+1})` with shared
/// noise (as run) and as it would be with independent noise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairingGain {
    pub epsilon_hi: f64,
    pub epsilon_lo: f64,
    pub delta: f64,
    pub norm: PathNorm,
    pub paired_variance: f64,
    pub independent_variance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformProbe {
    pub epsilons: Vec<f64>,
    pub deltas: Vec<f64>,
    pub rows: Vec<UniformRow>,
    pub maxima: Vec<UniformMax>,
    pub pairing: Vec<PairingGain>,
    /// Max over the grid is nonincreasing as `ε` decreases, for every
    /// `(δ, norm)`.
    pub monotone: bool,
    /// Initial data form a finite sample of a norm ball; uniformity over the
    /// whole ball is not checked.
    pub limitation: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UniformOptions {
    pub samples: usize,
    pub deltas: Vec<f64>,
    pub seed: u64,
}

impl Default for UniformOptions {
    fn default() -> Self {
        Self {
            samples: 200,
            deltas: vec![0.1, 0.05],
            seed: 0,
        }
    }
}

/// For every `(ξ₀, v)` runs the controlled equation at each `ε` against the
/// skeleton (`ε = 0`) with the same control, sharing Wiener increments across
/// `ε`, and records `P̂(‖ξ_v^ε − ξ_v⁰‖ > δ)`.
pub fn uniform_convergence_probe(
    cfg: &SimulationConfig,
    initial: &[SpectralField],
    controls: &[ControlPath],
    epsilons: &[f64],
    opts: &UniformOptions,
) -> Result<UniformProbe> {
    if !matches!(cfg.noise, Some(NoiseSpec::Multiplicative(_))) {
        return Err(Error::InvalidParameter(
            "uniform convergence probe needs multiplicative noise".into(),
        ));
    }
    if initial.is_empty() || controls.is_empty() || epsilons.is_empty() || opts.samples == 0 {
        return Err(Error::InvalidParameter(
            "probe needs initial data, controls, epsilons and samples".into(),
        ));
    }
    let mut eps_sorted = epsilons.to_vec();
    eps_sorted.sort_by(|a, b| b.total_cmp(a));
    let mut run = cfg.clone();
    run.recording = Recording::All;
    run.epsilon = 1.0;
    let trunc = TruncationSpec::none();
    let n_eps = eps_sorted.len();
    let n_delta = opts.deltas.len();
    let cells: Vec<(usize, usize)> = (0..initial.len())
        .flat_map(|i| (0..controls.len()).map(move |c| (i, c)))
        .collect();

    let mut rows = Vec::new();
    let mut pairing_acc = vec![[0.0f64; 2]; (n_eps.saturating_sub(1)) * n_delta * 2];
    for (cell, &(i, c)) in cells.iter().enumerate() {
        let mut skel_cfg = run.clone();
        skel_cfg.epsilon = 0.0;
        let skeleton = simulate_multiplicative_driven(
            &skel_cfg,
            &initial[i],
            &trunc,
            Some(&controls[c]),
            None,
        )?
        .states;
        // indicator[s][e][d][norm]
        let indicators: Vec<Vec<bool>> = (0..opts.samples)
            .into_par_iter()
            .map(|s| {
                let mut rng = RngStream::new(
                    opts.seed,
                    (cell * opts.samples + s) as u64,
                    Purpose::MultiplicativeNoise,
                );
                let w = draw_increments(&run, &mut rng)?;
                let mut out = Vec::with_capacity(n_eps * n_delta * 2);
                for &eps in &eps_sorted {
                    let mut noisy_cfg = run.clone();
                    noisy_cfg.epsilon = eps;
                    let traj = simulate_multiplicative_driven(
                        &noisy_cfg,
                        &initial[i],
                        &trunc,
                        Some(&controls[c]),
                        Some(&w),
                    )?;
                    let (d_lp, d_sup) = path_distance(&traj.states, &skeleton, run.p);
                    for &delta in &opts.deltas {
                        out.push(d_lp > delta);
                        out.push(d_sup > delta);
                    }
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;
        let idx = |e: usize, d: usize, n: usize| (e * n_delta + d) * 2 + n;
        for (e, &eps) in eps_sorted.iter().enumerate() {
            for (d, &delta) in opts.deltas.iter().enumerate() {
                for (n, norm) in [PathNorm::Lp, PathNorm::Sup].into_iter().enumerate() {
                    let hits = indicators.iter().filter(|v| v[idx(e, d, n)]).count();
                    rows.push(UniformRow {
                        initial: i,
                        control: c,
                        epsilon: eps,
                        delta,
                        norm,
                        samples: opts.samples,
                        hits,
                        probability: hits as f64 / opts.samples as f64,
                    });
                    if e + 1 < n_eps {
                        let m = opts.samples as f64;
                        let a: Vec<f64> = indicators
                            .iter()
                            .map(|v| f64::from(u8::from(v[idx(e, d, n)])))
                            .collect();
                        let b: Vec<f64> = indicators
                            .iter()
                            .map(|v| f64::from(u8::from(v[idx(e + 1, d, n)])))
                            .collect();
                        let var = |x: &[f64]| {
                            let mu = x.iter().sum::<f64>() / m;
                            x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (m - 1.0).max(1.0)
                        };
                        let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
                        let slot = &mut pairing_acc[(e * n_delta + d) * 2 + n];
                        slot[0] += var(&diff) / m;
                        slot[1] += (var(&a) + var(&b)) / m;
                    }
                }
            }
        }
    }

    let mut maxima = Vec::new();
    let mut monotone = true;
    for &delta in &opts.deltas {
        for norm in [PathNorm::Lp, PathNorm::Sup] {
            let mut prev = f64::INFINITY;
            for &eps in &eps_sorted {
                let m = rows
                    .iter()
                    .filter(|r| r.epsilon == eps && r.delta == delta && r.norm == norm)
                    .map(|r| r.probability)
                    .fold(0.0, f64::max);
                if m > prev {
                    monotone = false;
                }
                prev = m;
                maxima.push(UniformMax {
                    epsilon: eps,
                    delta,
                    norm,
                    max_probability: m,
                });
            }
        }
    }
    let cells_f = cells.len() as f64;
    let mut pairing = Vec::new();
    for e in 0..n_eps.saturating_sub(1) {
        for (d, &delta) in opts.deltas.iter().enumerate() {
            for (n, norm) in [PathNorm::Lp, PathNorm::Sup].into_iter().enumerate() {
                let slot = pairing_acc[(e * n_delta + d) * 2 + n];
                pairing.push(PairingGain {
                    epsilon_hi: eps_sorted[e],
                    epsilon_lo: eps_sorted[e + 1],
                    delta,
                    norm,
                    paired_variance: slot[0] / cells_f,
                    independent_variance: slot[1] / cells_f,
                });
            }
        }
    }
    Ok(UniformProbe {
        epsilons: eps_sorted,
        deltas: opts.deltas.clone(),
        rows,
        maxima,
        pairing,
        monotone,
        limitation: format!(
            "uniformity checked on {} initial conditions and {} controls only, not on the full norm ball",
            initial.len(),
            controls.len()
        ),
    })
}
