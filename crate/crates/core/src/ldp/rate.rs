//! Rate function by optimal control of the skeleton equation.
//!
//! `I(ψ) = inf { ½ ∫₀ᵀ |v|² dt : ξ_v⁰(T) = ψ }` is relaxed to the penalized
//! problem `min_v J(v) = ½ Σ_k |v_k|² Δt + P ‖ξ_v⁰(T) − ψ‖²_{L²}` over
//! piecewise-constant controls, solved for a short increasing sequence of
//! penalties `P`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ControlPath;
use crate::error::{Error, Result};
use crate::noise::{
    sigma_forcing, MultiplicativeNoiseSpec, NoiseSpec, Purpose, RngStream, SigmaFamily,
};
use crate::solver::{skeleton_states, Scheme, SimulationConfig};
use crate::spectral::SpectralField;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMethod {
    /// Adjoint when available, finite differences otherwise.
    #[default]
    Auto,
    FiniteDifference,
    Adjoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RateOptions {
    /// Number of control knots `K` on `[0, T]`.
    pub knots: usize,
    /// Initial penalty; multiplied by `penalty_growth` for each further stage.
    pub penalty: f64,
    pub stages: usize,
    pub penalty_growth: f64,
    pub max_iter: usize,
    /// Iterations without improvement before a stage is abandoned.
    pub stall_limit: usize,
    /// Stationarity test `‖∇J‖ ≤ grad_tol (1 + |J|)`.
    pub grad_tol: f64,
    /// A stage also ends once an accepted step lowers `J` by less than
    /// `obj_tol (1 + |J|)`; finite-difference gradients rarely reach
    /// `grad_tol` at large penalties.
    pub obj_tol: f64,
    /// Central-difference step.
    pub fd_step: f64,
    /// Random starts in addition to the zero control.
    pub restarts: usize,
    /// Standard deviation of the random starts' knot values.
    pub init_scale: f64,
    /// Terminal `L²` residual required for success.
    pub match_tol: f64,
    /// Energy bound `M`; `None` for unbounded.
    pub bound: Option<f64>,
    pub gradient: GradientMethod,
    pub seed: u64,
}

impl Default for RateOptions {
    fn default() -> Self {
        Self {
            knots: 20,
            penalty: 10.0,
            stages: 3,
            penalty_growth: 10.0,
            max_iter: 500,
            stall_limit: 20,
            grad_tol: 1e-7,
            obj_tol: 1e-13,
            fd_step: 1e-5,
            restarts: 3,
            init_scale: 0.5,
            match_tol: 1e-2,
            bound: None,
            gradient: GradientMethod::Auto,
            seed: 0,
        }
    }
}

impl RateOptions {
    fn validate(&self) -> Result<()> {
        if self.knots == 0 || self.stages == 0 || self.max_iter == 0 {
            return Err(Error::InvalidParameter(
                "knots, stages and max_iter must be positive".into(),
            ));
        }
        if !(self.penalty > 0.0
            && self.penalty_growth >= 1.0
            && self.fd_step > 0.0
            && self.grad_tol > 0.0
            && self.obj_tol >= 0.0)
        {
            return Err(Error::InvalidParameter(
                "penalty, penalty_growth, fd_step and grad_tol must be positive".into(),
            ));
        }
        if matches!(self.bound, Some(m) if !(m >= 0.0)) {
            return Err(Error::InvalidParameter(
                "control bound must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RateResult {
    #[serde(skip)]
    pub target: SpectralField,
    pub target_l2: f64,
    pub optimal_control: ControlPath,
    /// `½ Σ |v_k|² Δt` of the returned control: the rate estimate.
    pub cost: f64,
    /// `‖ξ_v⁰(T) − target‖_{L²}`.
    pub terminal_residual: f64,
    pub objective: f64,
    pub final_penalty: f64,
    pub iterations: usize,
    pub converged: bool,
    pub success: bool,
    pub gradient: GradientMethod,
    pub best_start: usize,
    pub start_objectives: Vec<f64>,
}

/// Terminal state of the skeleton equation driven by `control`.
pub fn skeleton_endpoint(
    cfg: &SimulationConfig,
    xi0: &SpectralField,
    control: &ControlPath,
) -> Result<SpectralField> {
    let mut skel = cfg.clone();
    skel.epsilon = 0.0;
    Ok(skeleton_states(&skel, xi0, Some(control), false)?
        .pop()
        .expect("non-empty"))
}

/// `‖ξ_v⁰(T) − target‖_{L²}`.
pub fn skeleton_residual(
    cfg: &SimulationConfig,
    xi0: &SpectralField,
    target: &SpectralField,
    control: &ControlPath,
) -> Result<f64> {
    Ok(skeleton_endpoint(cfg, xi0, control)?.sub(target).l2_norm())
}

struct Problem<'a> {
    cfg: SimulationConfig,
    spec: &'a MultiplicativeNoiseSpec,
    xi0: &'a SpectralField,
    target: &'a SpectralField,
    n: usize,
    bound: f64,
    fd_step: f64,
    adjoint: bool,
}

impl Problem<'_> {
    fn control(&self, x: &[f64]) -> Result<ControlPath> {
        ControlPath::from_flat(self.n, self.cfg.t_final, x, f64::INFINITY)
    }

    fn objective(&self, x: &[f64], penalty: f64) -> Result<f64> {
        let v = self.control(x)?;
        let end = skeleton_states(&self.cfg, self.xi0, Some(&v), false)?
            .pop()
            .expect("non-empty");
        let r = end.sub(self.target).l2_norm();
        Ok(v.cost() + penalty * r * r)
    }

    /// Projection onto `½ Σ|v|²Δt ≤ M`.
    fn project(&self, x: &mut [f64], knots: usize) {
        if !self.bound.is_finite() {
            return;
        }
        let dt = self.cfg.t_final / knots as f64;
        let cost = 0.5 * dt * x.iter().map(|v| v * v).sum::<f64>();
        if cost > self.bound {
            let s = (self.bound / cost).sqrt();
            x.iter_mut().for_each(|v| *v *= s);
        }
    }

    fn gradient(&self, x: &[f64], penalty: f64) -> Result<Vec<f64>> {
        if self.adjoint {
            self.adjoint_gradient(x, penalty)
        } else {
            self.fd_gradient(x, penalty)
        }
    }

    fn fd_gradient(&self, x: &[f64], penalty: f64) -> Result<Vec<f64>> {
        let h = self.fd_step;
        (0..x.len())
            .into_par_iter()
            .map(|i| {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[i] += h;
                xm[i] -= h;
                Ok((self.objective(&xp, penalty)? - self.objective(&xm, penalty)?) / (2.0 * h))
            })
            .collect()
    }

    /// Exact gradient of the discrete objective for the linear skeleton
    /// (`ξ_{k+1} = P₀(E ξ_k + φ₁ Σⱼ vⱼ σ̂ⱼ(ξ_k))` with `σ̂ⱼ` constant or
    /// linear in `ξ`), by a backward sweep.
    fn adjoint_gradient(&self, x: &[f64], penalty: f64) -> Result<Vec<f64>> {
        let v = self.control(x)?;
        let states = skeleton_states(&self.cfg, self.xi0, Some(&v), true)?;
        let steps = states.len() - 1;
        let grid = &self.cfg.grid;
        let dt = self.cfg.dt;
        let e: Vec<f64> = (0..grid.len())
            .map(|i| (-dt * grid.mode_norm_sq(i)).exp())
            .collect();
        let phi1: Vec<f64> = (0..grid.len())
            .map(|i| {
                let lam = grid.mode_norm_sq(i);
                if lam == 0.0 {
                    dt
                } else {
                    -(-lam * dt).exp_m1() / lam
                }
            })
            .collect();
        let linear = self.spec.family() == SigmaFamily::Linear;
        let profiles = self.spec.profiles(grid);
        let frozen = if linear {
            None
        } else {
            Some(sigma_forcing(self.spec, 0.0, &states[0].to_real())?)
        };

        let mut grad: Vec<f64> = x.iter().map(|vi| vi * v.knot_dt()).collect();
        let mut lam = states[steps].sub(self.target).scaled(2.0 * penalty);
        lam.project_zero_mean();
        for k in (0..steps).rev() {
            let mut mu = lam.clone();
            for (c, p) in mu.coeffs_mut().iter_mut().zip(&phi1) {
                *c *= *p;
            }
            let computed;
            let shapes = match &frozen {
                Some(s) => s,
                None => {
                    computed = sigma_forcing(self.spec, self.cfg.time(k), &states[k].to_real())?;
                    &computed
                }
            };
            let knot = v.knot_index((k as f64 + 0.5) * dt);
            for (j, s) in shapes.iter().enumerate() {
                grad[knot * self.n + j] += mu.inner(s);
            }
            for (c, f) in lam.coeffs_mut().iter_mut().zip(&e) {
                *c *= *f;
            }
            if linear {
                let vk = v.value_at((k as f64 + 0.5) * dt);
                let mut projected = mu.clone();
                projected.project_zero_mean();
                projected.dealias();
                let mu_real = projected.to_real();
                for (j, g) in profiles.iter().enumerate() {
                    if vk[j] != 0.0 {
                        lam.axpy(vk[j], &g.mul(&mu_real)?.to_spectral()?);
                    }
                }
            }
            lam.project_zero_mean();
        }
        Ok(grad)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct StartOutcome {
    x: Vec<f64>,
    objective: f64,
    iterations: usize,
    converged: bool,
}

/// Gradient descent with Barzilai-Borwein steps and Armijo backtracking, one
/// run per penalty stage.
fn descend(problem: &Problem, mut x: Vec<f64>, opts: &RateOptions) -> Result<StartOutcome> {
    let knots = opts.knots;
    problem.project(&mut x, knots);
    let mut penalty = opts.penalty;
    let mut iterations = 0;
    let mut converged = true;
    let mut f = f64::NAN;
    for stage in 0..opts.stages {
        if stage > 0 {
            penalty *= opts.penalty_growth;
        }
        f = problem.objective(&x, penalty)?;
        let mut g = problem.gradient(&x, penalty)?;
        let mut alpha = 1.0 / (1.0 + dot(&g, &g).sqrt());
        let mut best = f;
        let mut stall = 0;
        let mut stage_done = false;
        for _ in 0..opts.max_iter {
            if dot(&g, &g).sqrt() <= opts.grad_tol * (1.0 + f.abs()) {
                stage_done = true;
                break;
            }
            iterations += 1;
            let mut a = alpha;
            let mut accepted = None;
            for _ in 0..50 {
                let mut trial: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - a * gi).collect();
                problem.project(&mut trial, knots);
                let decrease: f64 = x
                    .iter()
                    .zip(&trial)
                    .zip(&g)
                    .map(|((xo, xn), gi)| gi * (xo - xn))
                    .sum();
                let ft = problem.objective(&trial, penalty)?;
                if ft <= f - 1e-4 * decrease && decrease > 0.0 {
                    accepted = Some((trial, ft));
                    break;
                }
                a *= 0.5;
            }
            let Some((xn, fnew)) = accepted else {
                stall += 1;
                alpha = a;
                if stall >= opts.stall_limit {
                    break;
                }
                continue;
            };
            let gn = problem.gradient(&xn, penalty)?;
            let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &y);
            alpha = if sy > 0.0 {
                (dot(&s, &s) / sy).clamp(1e-12, 1e12)
            } else {
                2.0 * a
            };
            let small_step = f - fnew <= opts.obj_tol * (1.0 + f.abs());
            if fnew < best - 1e-15 * best.abs() {
                best = fnew;
                stall = 0;
            } else {
                stall += 1;
            }
            x = xn;
            f = fnew;
            g = gn;
            if small_step {
                stage_done = true;
                break;
            }
            if stall >= opts.stall_limit {
                break;
            }
        }
        if !stage_done {
            converged = false;
            log::warn!(
                "rate optimization stage {stage} (penalty {penalty}) stopped before stationarity"
            );
        }
    }
    Ok(StartOutcome {
        x,
        objective: f,
        iterations,
        converged,
    })
}

fn adjoint_available(cfg: &SimulationConfig, spec: &MultiplicativeNoiseSpec) -> bool {
    !cfg.nonlinearity
        && cfg.scheme == Scheme::Etd1
        && matches!(spec.family(), SigmaFamily::Constant | SigmaFamily::Linear)
}

/// Estimates `I(target)` for the skeleton equation started at `xi0`.
pub fn rate_function(
    xi0: &SpectralField,
    target: &SpectralField,
    cfg: &SimulationConfig,
    opts: &RateOptions,
) -> Result<RateResult> {
    opts.validate()?;
    cfg.validate()?;
    let spec = match &cfg.noise {
        Some(NoiseSpec::Multiplicative(m)) => m,
        _ => {
            return Err(Error::InvalidParameter(
                "rate function needs a multiplicative noise spec".into(),
            ))
        }
    };
    target.require_zero_mean()?;
    if target.grid() != &cfg.grid {
        return Err(Error::GridMismatch);
    }
    let adjoint = match opts.gradient {
        GradientMethod::FiniteDifference => false,
        GradientMethod::Adjoint if !adjoint_available(cfg, spec) => {
            return Err(Error::InvalidParameter(
                "adjoint gradients need the linear skeleton (nonlinearity off, constant or linear family, first-order scheme)"
                    .into(),
            ));
        }
        GradientMethod::Adjoint => true,
        GradientMethod::Auto => adjoint_available(cfg, spec),
    };
    let mut skel = cfg.clone();
    skel.epsilon = 0.0;
    let n = spec.n_channels();
    let problem = Problem {
        cfg: skel,
        spec,
        xi0,
        target,
        n,
        bound: opts.bound.unwrap_or(f64::INFINITY),
        fd_step: opts.fd_step,
        adjoint,
    };
    let dim = opts.knots * n;
    let starts: Vec<Vec<f64>> = std::iter::once(vec![0.0; dim])
        .chain((0..opts.restarts).map(|r| {
            let mut rng = RngStream::new(opts.seed, r as u64, Purpose::Optimizer);
            (0..dim)
                .map(|_| opts.init_scale * rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect()
        }))
        .collect();
    let outcomes: Vec<StartOutcome> = starts
        .into_par_iter()
        .map(|x0| descend(&problem, x0, opts))
        .collect::<Result<_>>()?;

    let best_start = outcomes
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.objective.total_cmp(&b.1.objective))
        .map(|(i, _)| i)
        .expect("at least one start");
    let best = &outcomes[best_start];
    let control =
        ControlPath::from_flat(n, cfg.t_final, &best.x, opts.bound.unwrap_or(f64::INFINITY))?;
    let residual = skeleton_residual(cfg, xi0, target, &control)?;
    let final_penalty = opts.penalty * opts.penalty_growth.powi(opts.stages as i32 - 1);
    Ok(RateResult {
        target: target.clone(),
        target_l2: target.l2_norm(),
        cost: control.cost(),
        terminal_residual: residual,
        objective: best.objective,
        final_penalty,
        iterations: outcomes.iter().map(|o| o.iterations).sum(),
        converged: best.converged,
        success: best.converged && residual <= opts.match_tol,
        gradient: if adjoint {
            GradientMethod::Adjoint
        } else {
            GradientMethod::FiniteDifference
        },
        best_start,
        start_objectives: outcomes.iter().map(|o| o.objective).collect(),
        optimal_control: control,
    })
}
