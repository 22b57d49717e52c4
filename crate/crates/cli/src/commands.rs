use std::f64::consts::TAU;

use serde::Serialize;
use sns_core::biot_savart::{transport_orthogonality, velocity_from_vorticity};
use sns_core::heat_kernel::{
    auto_radius, auto_shells, fit_gradient_estimate, fit_kernel_estimate, kernel_value,
    ExponentFit, Representation,
};
use sns_core::ldp::{
    lipschitz_probe, mc_estimate, rate_function, skeleton_endpoint, uniform_convergence_probe,
    ControlPath, MCOptions, PathNorm, UniformOptions,
};
use sns_core::noise::{NoiseSpec, Purpose, RngStream};
use sns_core::solver::{
    draw_increments, picard_solve, simulate_additive, simulate_deterministic,
    simulate_multiplicative, Trajectory, TruncationSpec,
};
use sns_core::spectral::{SpectralField, TorusGrid};
use sns_core::stats::LineFit;

use crate::config::{Method, RunConfig};
use crate::error::CliError;
use crate::run::{state_bytes, Csv, RunDir};

/// Printed summary of a successful command.
pub type Summary = Vec<String>;

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn norm_name(n: PathNorm) -> &'static str {
    match n {
        PathNorm::Lp => "lp",
        PathNorm::Sup => "sup",
    }
}

/// Fills in the truncation radius a simulation would pick by default, so the
/// resolved config states it.
pub fn resolve_simulate(rc: &mut RunConfig) -> Result<(), CliError> {
    if rc.truncation.is_none() {
        let grid = rc.grid()?;
        let xi0 = rc.initial(&grid)?;
        rc.truncation = Some(TruncationSpec::default_for(&xi0, rc.p));
    }
    Ok(())
}

fn write_trajectory(run: &mut RunDir, traj: &Trajectory, dumps: bool) -> Result<(), CliError> {
    let mut csv = Csv::new(&["step", "time", "l2", "lp", "grad_l2", "truncation_active"]);
    for (k, (t, d)) in traj.times.iter().zip(&traj.diagnostics).enumerate() {
        csv.row(&[
            k.to_string(),
            t.to_string(),
            d.l2.to_string(),
            d.lp.to_string(),
            d.grad_l2.to_string(),
            u8::from(d.truncation_active).to_string(),
        ]);
    }
    run.write("diagnostics.csv", &csv.into_bytes())?;
    if dumps {
        for (idx, state) in traj.state_indices.iter().zip(&traj.states) {
            run.write(&format!("states/state_{idx:06}.bin"), &state_bytes(state))?;
        }
    }
    Ok(())
}

pub fn simulate(rc: &RunConfig, run: &mut RunDir) -> Result<Summary, CliError> {
    let cfg = rc.simulation()?;
    let xi0 = rc.initial(&cfg.grid)?;
    let trunc = rc
        .truncation
        .unwrap_or_else(|| TruncationSpec::default_for(&xi0, cfg.p));
    let result = match rc.simulate.method {
        Method::Stepping => match &cfg.noise {
            None => simulate_deterministic(&cfg, &xi0).map(|t| (t, None)),
            Some(NoiseSpec::Additive(_)) => {
                let mut rng = RngStream::new(rc.seed, 0, Purpose::AdditiveNoise);
                simulate_additive(&cfg, &xi0, &mut rng).map(|t| (t, None))
            }
            Some(NoiseSpec::Multiplicative(_)) => {
                let mut rng = RngStream::new(rc.seed, 0, Purpose::MultiplicativeNoise);
                simulate_multiplicative(&cfg, &xi0, &trunc, None, Some(&mut rng)).map(|t| (t, None))
            }
        },
        Method::Picard => {
            if matches!(cfg.noise, Some(NoiseSpec::Additive(_))) {
                return Err(CliError::Config(
                    "field `simulate.method`: Picard iteration supports deterministic and multiplicative runs".into(),
                ));
            }
            let increments = if cfg.epsilon > 0.0 && cfg.noise.is_some() {
                let mut rng = RngStream::new(rc.seed, 0, Purpose::MultiplicativeNoise);
                Some(draw_increments(&cfg, &mut rng)?)
            } else {
                None
            };
            picard_solve(
                &cfg,
                &xi0,
                &trunc,
                None,
                increments.as_deref(),
                &rc.simulate.picard,
            )
            .map(|(t, r)| (t, Some(r)))
        }
    };
    let (traj, report) = match result {
        Ok(r) => r,
        Err(sns_core::Error::NonFiniteState { step, time, state }) => {
            run.write("nonfinite_state.bin", &state_bytes(&state))?;
            return Err(CliError::Invariant(format!(
                "non-finite state at step {step} (t = {time}); dumped to nonfinite_state.bin"
            )));
        }
        Err(e) => return Err(e.into()),
    };
    write_trajectory(run, &traj, rc.simulate.state_dumps)?;
    let mut summary = vec![
        format!("steps: {}", traj.steps()),
        format!(
            "final L2 norm: {}",
            traj.diagnostics.last().map_or(f64::NAN, |d| d.l2)
        ),
        format!("sup L^p norm: {}", traj.sup_lp()),
    ];
    if traj.saturated_fraction > 0.0 {
        summary.push(format!(
            "truncation active on {:.1}% of steps",
            100.0 * traj.saturated_fraction
        ));
    }
    if let Some(r) = report {
        summary.push(format!(
            "Picard iterations: {} (converged: {})",
            r.iterations, r.converged
        ));
        run.write_json("picard_report.json", &r)?;
    }
    Ok(summary)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum VerifyTarget {
    Kernels,
    BiotSavart,
    All,
}

#[derive(Serialize)]
struct Check {
    name: String,
    value: f64,
    tolerance: f64,
    passed: bool,
}

impl Check {
    fn below(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            value,
            tolerance,
            passed: value < tolerance,
        }
    }
}

fn fit_csv(fits: &[ExponentFit]) -> Vec<u8> {
    let mut csv = Csv::new(&["beta", "theoretical_exponent", "fitted_slope", "r_squared"]);
    for f in fits {
        csv.row(&[
            f.beta.to_string(),
            f.theoretical_exponent.to_string(),
            f.fitted_slope.to_string(),
            f.r_squared.to_string(),
        ]);
    }
    csv.into_bytes()
}

/// Low-discrepancy displacement in `[0, 2π)²`.
fn displacement(i: usize) -> (f64, f64) {
    const A1: f64 = 0.754_877_666_246_692_8;
    const A2: f64 = 0.569_840_290_998_053_3;
    let k = i as f64 + 1.0;
    (TAU * (k * A1).fract(), TAU * (k * A2).fract())
}

fn verify_kernels(
    rc: &RunConfig,
    run: &mut RunDir,
    checks: &mut Vec<Check>,
) -> Result<(), CliError> {
    let v = &rc.verify;
    let rep = &v.representation;
    if rep.points < 2 || !(rep.t_min > 0.0 && rep.t_max > rep.t_min) {
        return Err(CliError::Config(
            "field `verify.representation`: need 0 < t_min < t_max and points >= 2".into(),
        ));
    }
    let mut csv = Csv::new(&["time", "dx1", "dx2", "fourier", "images", "abs_diff"]);
    let mut worst = 0.0f64;
    for i in 0..rep.points {
        let t = rep.t_min * (rep.t_max / rep.t_min).powf(i as f64 / (rep.points - 1) as f64);
        let dx = displacement(i);
        let f = kernel_value(
            t,
            dx,
            Representation::Fourier {
                radius: auto_radius(t),
            },
        )?;
        let g = kernel_value(
            t,
            dx,
            Representation::Images {
                shells: auto_shells(t),
            },
        )?;
        worst = worst.max((f - g).abs());
        csv.row(&[
            t.to_string(),
            dx.0.to_string(),
            dx.1.to_string(),
            f.to_string(),
            g.to_string(),
            (f - g).abs().to_string(),
        ]);
    }
    run.write("kernel_representation.csv", &csv.into_bytes())?;
    checks.push(Check::below(
        "kernel representation agreement",
        worst,
        rep.tolerance,
    ));

    let gradient = v
        .gradient_betas
        .iter()
        .map(|&b| fit_gradient_estimate(b, &v.fit))
        .collect::<Result<Vec<_>, _>>()?;
    let kernel = v
        .kernel_betas
        .iter()
        .map(|&b| fit_kernel_estimate(b, &v.fit))
        .collect::<Result<Vec<_>, _>>()?;
    run.write("kernel_gradient_exponents.csv", &fit_csv(&gradient))?;
    run.write("kernel_exponents.csv", &fit_csv(&kernel))?;
    for (label, fits) in [("gradient", &gradient), ("kernel", &kernel)] {
        for f in fits {
            checks.push(Check::below(
                format!("{label} exponent, beta = {}", f.beta),
                (f.fitted_slope - f.theoretical_exponent).abs(),
                v.slope_tolerance,
            ));
            checks.push(Check {
                name: format!("{label} fit r^2, beta = {}", f.beta),
                value: f.r_squared,
                tolerance: v.min_r_squared,
                passed: f.r_squared > v.min_r_squared,
            });
        }
    }
    Ok(())
}

fn verify_biot_savart(
    rc: &RunConfig,
    run: &mut RunDir,
    checks: &mut Vec<Check>,
) -> Result<(), CliError> {
    let bs = &rc.verify.biot_savart;
    let grid = TorusGrid::two_thirds(bs.n)
        .map_err(|e| CliError::Config(format!("field `verify.biot_savart.n`: {e}")))?;
    let mut csv = Csv::new(&[
        "field",
        "curl_defect",
        "divergence_defect",
        "transport_orthogonality",
    ]);
    let (mut curl, mut div, mut orth) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..bs.fields {
        let mut rng = RngStream::new(rc.seed, i as u64, Purpose::Probe);
        let xi = SpectralField::random(&grid, &mut rng, 1.0, 0.5);
        let u = velocity_from_vorticity(&xi)?;
        let c = u
            .curl()
            .sub(&xi)
            .coeffs()
            .iter()
            .map(|z| z.norm())
            .fold(0.0f64, f64::max);
        let d = u.incompressibility_defect();
        let o = transport_orthogonality(&xi.clone().dealiased())?.abs();
        curl = curl.max(c);
        div = div.max(d);
        orth = orth.max(o);
        csv.row(&[i.to_string(), c.to_string(), d.to_string(), o.to_string()]);
    }
    run.write("biot_savart.csv", &csv.into_bytes())?;
    checks.push(Check::below(
        "curl of Biot-Savart velocity equals vorticity",
        curl,
        bs.identity_tolerance,
    ));
    checks.push(Check::below(
        "Biot-Savart velocity is divergence-free",
        div,
        bs.identity_tolerance,
    ));
    checks.push(Check::below(
        "transport term is L2-orthogonal to vorticity",
        orth,
        bs.orthogonality_tolerance,
    ));
    Ok(())
}

pub fn verify(rc: &RunConfig, run: &mut RunDir, target: VerifyTarget) -> Result<Summary, CliError> {
    let mut checks = Vec::new();
    if matches!(target, VerifyTarget::Kernels | VerifyTarget::All) {
        verify_kernels(rc, run, &mut checks)?;
    }
    if matches!(target, VerifyTarget::BiotSavart | VerifyTarget::All) {
        verify_biot_savart(rc, run, &mut checks)?;
    }
    run.write_json("verify_report.json", &checks)?;
    let summary: Summary = checks
        .iter()
        .map(|c| {
            format!(
                "{} {}: {:e} (tolerance {:e})",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.value,
                c.tolerance
            )
        })
        .collect();
    let failed: Vec<&str> = checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| c.name.as_str())
        .collect();
    if failed.is_empty() {
        Ok(summary)
    } else {
        for line in &summary {
            println!("{line}");
        }
        Err(CliError::Invariant(format!(
            "{} check(s) failed: {}",
            failed.len(),
            failed.join("; ")
        )))
    }
}

fn require<'a, T>(block: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
    block
        .as_ref()
        .ok_or_else(|| CliError::Config(format!("missing field `{name}` required by this command")))
}

pub fn rate(rc: &RunConfig, run: &mut RunDir) -> Result<Summary, CliError> {
    let block = require(&rc.rate, "rate")?;
    let cfg = rc.simulation()?;
    let n = rc
        .n_channels()
        .ok_or_else(|| CliError::Config("field `noise`: rate needs multiplicative noise".into()))?;
    let xi0 = rc.initial(&cfg.grid)?;
    let mut target = block
        .target
        .build(&cfg.grid, rc.seed)
        .map_err(|e| e.context("field `rate.target`"))?;
    if block.relative_to_free_endpoint {
        let free = ControlPath::zeros(n, block.options.knots.max(1), cfg.t_final)?;
        target.axpy(1.0, &skeleton_endpoint(&cfg, &xi0, &free)?);
    }
    let res = rate_function(&xi0, &target, &cfg, &block.options)?;
    run.write_json("rate_result.json", &res)?;
    Ok(vec![
        format!("cost: {}", res.cost),
        format!("terminal residual: {}", res.terminal_residual),
        format!("converged: {}, success: {}", res.converged, res.success),
    ])
}

fn fit_row(name: &str, fit: Option<LineFit>) -> Vec<String> {
    match fit {
        Some(f) => vec![
            name.into(),
            f.slope.to_string(),
            f.intercept.to_string(),
            f.r_squared.to_string(),
        ],
        None => vec![name.into(), String::new(), String::new(), String::new()],
    }
}

pub fn mc(rc: &RunConfig, run: &mut RunDir) -> Result<Summary, CliError> {
    let block = require(&rc.mc, "mc")?;
    let cfg = rc.simulation()?;
    if cfg.noise.is_none() {
        return Err(CliError::Config(
            "field `noise`: Monte Carlo needs a noise spec".into(),
        ));
    }
    let xi0 = rc.initial(&cfg.grid)?;
    let opts = MCOptions {
        samples: block.samples,
        seed: rc.seed,
        truncation: rc.truncation.unwrap_or_else(TruncationSpec::none),
    };
    let est = mc_estimate(&block.event, &block.epsilons, &cfg, &xi0, &opts)?;
    let mut csv = Csv::new(&[
        "epsilon",
        "samples",
        "hits",
        "probability",
        "ci_low",
        "ci_high",
        "eps_log_p",
    ]);
    for r in &est.rows {
        csv.row(&[
            r.epsilon.to_string(),
            r.samples.to_string(),
            r.hits.to_string(),
            r.probability.to_string(),
            r.ci_low.to_string(),
            r.ci_high.to_string(),
            opt(r.eps_log_p),
        ]);
    }
    run.write("mc_estimate.csv", &csv.into_bytes())?;
    let mut fits = Csv::new(&["fit", "slope", "intercept", "r_squared"]);
    fits.row(&fit_row("eps_log_p", est.slope_fit));
    fits.row(&fit_row("eps_log_p_prefactor_corrected", est.corrected_fit));
    run.write("mc_fits.csv", &fits.into_bytes())?;
    run.write_json("mc_estimate.json", &est)?;
    let mut summary = vec![format!("event: {}", block.event.describe())];
    summary.extend(est.rows.iter().map(|r| {
        format!(
            "eps = {}: {} / {} hits, P = {} [{}, {}]",
            r.epsilon, r.hits, r.samples, r.probability, r.ci_low, r.ci_high
        )
    }));
    summary.push(format!("rate estimate: {}", opt(est.rate_estimate())));
    Ok(summary)
}

#[derive(Serialize)]
struct LipschitzReport {
    r1: f64,
    r2: Vec<f64>,
    pairs: usize,
    median_ratio_lp: Vec<f64>,
    median_ratio_sup: Vec<f64>,
    /// Whether the medians grow with `R₂`; reported, not enforced.
    medians_increase_with_r2: bool,
}

pub fn probe_lipschitz(rc: &RunConfig, run: &mut RunDir) -> Result<Summary, CliError> {
    let block = require(&rc.probe_lipschitz, "probe_lipschitz")?;
    let cfg = rc.simulation()?;
    let mut r2 = block.r2.clone();
    r2.sort_by(f64::total_cmp);
    let mut pairs = Csv::new(&["r2", "pair", "ratio_lp", "ratio_sup"]);
    let mut table = Csv::new(&[
        "r1",
        "r2",
        "pairs",
        "max_ratio_lp",
        "max_ratio_sup",
        "median_ratio_lp",
        "median_ratio_sup",
    ]);
    let mut probes = Vec::new();
    for &r in &r2 {
        let p = lipschitz_probe(block.r1, r, block.pairs, &cfg, rc.seed)?;
        for (i, (a, b)) in p.ratios_lp.iter().zip(&p.ratios_sup).enumerate() {
            pairs.row(&[r.to_string(), i.to_string(), a.to_string(), b.to_string()]);
        }
        table.row(&[
            p.r1.to_string(),
            p.r2.to_string(),
            p.pairs.to_string(),
            p.max_ratio_lp.to_string(),
            p.max_ratio_sup.to_string(),
            p.median_ratio_lp.to_string(),
            p.median_ratio_sup.to_string(),
        ]);
        probes.push(p);
    }
    run.write("lipschitz_pairs.csv", &pairs.into_bytes())?;
    run.write("lipschitz_probe.csv", &table.into_bytes())?;
    let med_lp: Vec<f64> = probes.iter().map(|p| p.median_ratio_lp).collect();
    let increasing = med_lp.windows(2).all(|w| w[0] <= w[1]);
    run.write_json(
        "lipschitz_report.json",
        &LipschitzReport {
            r1: block.r1,
            r2: r2.clone(),
            pairs: block.pairs,
            median_ratio_lp: med_lp.clone(),
            median_ratio_sup: probes.iter().map(|p| p.median_ratio_sup).collect(),
            medians_increase_with_r2: increasing,
        },
    )?;
    let mut summary: Summary = probes
        .iter()
        .map(|p| {
            format!(
                "R2 = {}: max ratio {} (Lp), {} (sup); median {}",
                p.r2, p.max_ratio_lp, p.max_ratio_sup, p.median_ratio_lp
            )
        })
        .collect();
    if !increasing {
        log::warn!("median Lipschitz quotient does not increase with R2: {med_lp:?}");
        summary.push("flag: median quotient not increasing in R2".into());
    }
    let finite = probes.iter().all(|p| {
        p.ratios_lp
            .iter()
            .chain(&p.ratios_sup)
            .all(|r| r.is_finite())
    });
    if !finite {
        return Err(CliError::Invariant("non-finite Lipschitz quotient".into()));
    }
    Ok(summary)
}

#[derive(Serialize)]
struct UniformReport<'a> {
    epsilons: &'a [f64],
    deltas: &'a [f64],
    monotone: bool,
    limitation: &'a str,
}

pub fn probe_uniform(rc: &RunConfig, run: &mut RunDir) -> Result<Summary, CliError> {
    let block = require(&rc.probe_uniform, "probe_uniform")?;
    let cfg = rc.simulation()?;
    let n = rc.n_channels().ok_or_else(|| {
        CliError::Config("field `noise`: the uniform probe needs multiplicative noise".into())
    })?;
    let initial = block
        .initial_conditions
        .iter()
        .enumerate()
        .map(|(i, f)| {
            f.build(&cfg.grid, rc.seed)
                .map_err(|e| e.context(&format!("field `probe_uniform.initial_conditions[{i}]`")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let controls = block
        .controls
        .iter()
        .enumerate()
        .map(|(i, c)| {
            c.build(n, cfg.t_final, block.bound)
                .map_err(|e| e.context(&format!("field `probe_uniform.controls[{i}]`")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let opts = UniformOptions {
        samples: block.samples,
        deltas: block.deltas.clone(),
        seed: rc.seed,
    };
    let probe = uniform_convergence_probe(&cfg, &initial, &controls, &block.epsilons, &opts)?;
    let mut rows = Csv::new(&[
        "initial",
        "control",
        "epsilon",
        "delta",
        "norm",
        "samples",
        "hits",
        "probability",
    ]);
    for r in &probe.rows {
        rows.row(&[
            r.initial.to_string(),
            r.control.to_string(),
            r.epsilon.to_string(),
            r.delta.to_string(),
            norm_name(r.norm).into(),
            r.samples.to_string(),
            r.hits.to_string(),
            r.probability.to_string(),
        ]);
    }
    run.write("uniform_rows.csv", &rows.into_bytes())?;
    let mut maxima = Csv::new(&["epsilon", "delta", "norm", "max_probability"]);
    for m in &probe.maxima {
        maxima.row(&[
            m.epsilon.to_string(),
            m.delta.to_string(),
            norm_name(m.norm).into(),
            m.max_probability.to_string(),
        ]);
    }
    run.write("uniform_maxima.csv", &maxima.into_bytes())?;
    let mut pairing = Csv::new(&[
        "epsilon_hi",
        "epsilon_lo",
        "delta",
        "norm",
        "paired_variance",
        "independent_variance",
    ]);
    for p in &probe.pairing {
        pairing.row(&[
            p.epsilon_hi.to_string(),
            p.epsilon_lo.to_string(),
            p.delta.to_string(),
            norm_name(p.norm).into(),
            p.paired_variance.to_string(),
            p.independent_variance.to_string(),
        ]);
    }
    run.write("uniform_pairing.csv", &pairing.into_bytes())?;
    run.write_json(
        "uniform_report.json",
        &UniformReport {
            epsilons: &probe.epsilons,
            deltas: &probe.deltas,
            monotone: probe.monotone,
            limitation: &probe.limitation,
        },
    )?;
    let summary: Summary = probe
        .maxima
        .iter()
        .map(|m| {
            format!(
                "eps = {}, delta = {}, {}: max P = {}",
                m.epsilon,
                m.delta,
                norm_name(m.norm),
                m.max_probability
            )
        })
        .collect();
    if probe.monotone {
        Ok(summary)
    } else {
        for line in &summary {
            println!("{line}");
        }
        Err(CliError::Invariant(
            "maximal exceedance probability increases as epsilon decreases".into(),
        ))
    }
}
