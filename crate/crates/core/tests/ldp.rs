use proptest::prelude::*;
use sns_core::ldp::{
    lipschitz_probe, mc_estimate, rate_function, skeleton_endpoint, skeleton_residual,
    uniform_convergence_probe, ControlPath, Event, MCOptions, RateOptions, UniformOptions,
};
use sns_core::noise::{
    ChannelProfile, MultiplicativeNoiseSpec, NoiseSpec, Purpose, RngStream, SigmaFamily,
};
use sns_core::solver::SimulationConfig;
use sns_core::spectral::{Phase, SpectralField, TorusGrid};
use statrs::function::erf::erfc;

fn mode_channel(k1: i64, k2: i64, phase: Phase) -> ChannelProfile {
    ChannelProfile::Mode {
        mode: [k1, k2],
        phase,
        amplitude: 1.0,
    }
}

/// One constant channel forcing `cos x₁`, transport off: the `cos x₁`
/// amplitude obeys `dx = −x dt + v dt + √ε dW`.
fn single_mode_cfg(t: f64, dt: f64) -> SimulationConfig {
    let g = TorusGrid::two_thirds(8).unwrap();
    let spec =
        MultiplicativeNoiseSpec::new(SigmaFamily::Constant, vec![mode_channel(1, 0, Phase::Cos)])
            .unwrap();
    let mut cfg = SimulationConfig::new(&g, t, dt).unwrap();
    cfg.noise = Some(NoiseSpec::Multiplicative(spec));
    cfg.nonlinearity = false;
    cfg
}

fn cos_x1(cfg: &SimulationConfig, a: f64) -> SpectralField {
    SpectralField::single_mode(&cfg.grid, 1, 0, a, Phase::Cos).unwrap()
}

/// Minimal energy to steer the amplitude from 0 to `z` with controls that are
/// constant on `knots` equal pieces of `[0,T]`, under exact exponential
/// stepping with step `dt` and the control sampled at step midpoints.
fn discrete_gramian_cost(z: f64, t: f64, dt: f64, knots: usize) -> f64 {
    let steps = (t / dt).round() as usize;
    let tau = t / knots as f64;
    let e = (-dt).exp();
    let phi1 = -(-dt).exp_m1();
    let mut g = vec![0.0; knots];
    for k in 0..steps {
        let mid = (k as f64 + 0.5) * dt;
        let j = ((mid / tau) as usize).min(knots - 1);
        g[j] += phi1 * e.powi((steps - 1 - k) as i32);
    }
    let w: f64 = g.iter().map(|x| x * x).sum::<f64>() / tau;
    z * z / (2.0 * w)
}

fn continuous_gramian_cost(z: f64, t: f64) -> f64 {
    z * z / (1.0 - (-2.0 * t).exp())
}

#[test]
fn gramian_cost_is_recovered() {
    let cfg = single_mode_cfg(1.0, 0.01);
    let zero = SpectralField::zeros(&cfg.grid);
    let res = rate_function(&zero, &cos_x1(&cfg, 1.0), &cfg, &RateOptions::default()).unwrap();
    assert!(res.success, "{res:?}");
    let exact = continuous_gramian_cost(1.0, 1.0);
    let discrete = discrete_gramian_cost(1.0, 1.0, 0.01, 20);
    assert!(
        (res.cost - exact).abs() / exact < 0.02,
        "{} vs {exact}",
        res.cost
    );
    assert!(
        (res.cost - discrete).abs() / discrete < 1e-3,
        "{} vs {discrete}",
        res.cost
    );
}

#[test]
fn discrete_gramian_oracle_converges_to_the_closed_form() {
    let coarse = discrete_gramian_cost(1.0, 1.0, 0.01, 20);
    let fine = discrete_gramian_cost(1.0, 1.0, 0.001, 500);
    let exact = continuous_gramian_cost(1.0, 1.0);
    assert!((fine - exact).abs() < (coarse - exact).abs());
    assert!((fine - exact).abs() / exact < 1e-4);
}

#[test]
fn refining_the_control_grid_does_not_raise_the_cost() {
    let cfg = single_mode_cfg(1.0, 0.01);
    let zero = SpectralField::zeros(&cfg.grid);
    let target = cos_x1(&cfg, 0.7);
    let opts = |knots| RateOptions {
        knots,
        ..RateOptions::default()
    };
    let c10 = rate_function(&zero, &target, &cfg, &opts(10)).unwrap().cost;
    let c20 = rate_function(&zero, &target, &cfg, &opts(20)).unwrap().cost;
    assert!(c20 <= c10 * 1.01, "{c20} vs {c10}");
}

/// Transport on, two constant channels.
fn nonlinear_cfg() -> (SimulationConfig, SpectralField) {
    let g = TorusGrid::two_thirds(8).unwrap();
    let spec = MultiplicativeNoiseSpec::new(
        SigmaFamily::Constant,
        vec![
            mode_channel(1, 0, Phase::Cos),
            mode_channel(0, 1, Phase::Sin),
        ],
    )
    .unwrap();
    let mut cfg = SimulationConfig::new(&g, 0.5, 0.025).unwrap();
    cfg.noise = Some(NoiseSpec::Multiplicative(spec));
    let mut rng = RngStream::new(5, 0, Purpose::InitialCondition);
    let xi0 = SpectralField::random(&g, &mut rng, 1.0, 2.0).dealiased();
    (cfg, xi0)
}

#[test]
fn cost_grows_along_a_ray_away_from_the_deterministic_endpoint() {
    let (cfg, xi0) = nonlinear_cfg();
    let n = 2;
    let free =
        skeleton_endpoint(&cfg, &xi0, &ControlPath::zeros(n, 10, cfg.t_final).unwrap()).unwrap();
    let dir = SpectralField::single_mode(&cfg.grid, 1, 0, 1.0, Phase::Cos)
        .unwrap()
        .add(&SpectralField::single_mode(&cfg.grid, 0, 1, 0.5, Phase::Sin).unwrap());
    let opts = RateOptions {
        knots: 10,
        restarts: 1,
        ..RateOptions::default()
    };
    let costs: Vec<f64> = [0.1, 0.2, 0.4]
        .iter()
        .map(|&s| {
            let mut target = free.clone();
            target.axpy(s, &dir);
            let r = rate_function(&xi0, &target, &cfg, &opts).unwrap();
            assert!(r.cost >= 0.0);
            r.cost
        })
        .collect();
    assert!(costs.windows(2).all(|w| w[0] <= w[1]), "{costs:?}");
}

#[test]
fn replaying_the_optimal_control_reproduces_the_residual() {
    let (cfg, xi0) = nonlinear_cfg();
    let free =
        skeleton_endpoint(&cfg, &xi0, &ControlPath::zeros(2, 10, cfg.t_final).unwrap()).unwrap();
    let mut target = free.clone();
    target.axpy(
        0.2,
        &SpectralField::single_mode(&cfg.grid, 1, 0, 1.0, Phase::Cos).unwrap(),
    );
    let opts = RateOptions {
        knots: 10,
        restarts: 1,
        ..RateOptions::default()
    };
    let res = rate_function(&xi0, &target, &cfg, &opts).unwrap();
    assert!(res.success, "{res:?}");
    let replay = skeleton_residual(&cfg, &xi0, &target, &res.optimal_control).unwrap();
    assert_eq!(replay.to_bits(), res.terminal_residual.to_bits());
    let again = rate_function(&xi0, &target, &cfg, &opts).unwrap();
    assert_eq!(again.optimal_control, res.optimal_control);
}

#[test]
fn unreachable_target_with_tiny_budget_is_flagged() {
    let cfg = single_mode_cfg(0.5, 0.05);
    let zero = SpectralField::zeros(&cfg.grid);
    let opts = RateOptions {
        knots: 5,
        max_iter: 2,
        stages: 1,
        restarts: 0,
        penalty: 1e-3,
        ..RateOptions::default()
    };
    let res = rate_function(&zero, &cos_x1(&cfg, 5.0), &cfg, &opts).unwrap();
    assert!(!res.success);
    assert!(res.terminal_residual > opts.match_tol);
}

fn ou_tail(z: f64, eps: f64, t: f64) -> f64 {
    let var = eps * (1.0 - (-2.0 * t).exp()) / 2.0;
    0.5 * erfc(z / (2.0 * var).sqrt())
}

fn exceeds(z: f64) -> Event {
    Event::TerminalModeExceeds {
        mode: [1, 0],
        phase: Phase::Cos,
        threshold: z,
    }
}

#[test]
fn wilson_intervals_cover_the_exact_tail() {
    let cfg = single_mode_cfg(1.0, 0.1);
    let zero = SpectralField::zeros(&cfg.grid);
    let (z, eps) = (0.3, 0.1);
    let exact = ou_tail(z, eps, 1.0);
    let mut covered = 0;
    for rep in 0..100 {
        let opts = MCOptions {
            samples: 400,
            seed: 1000 + rep,
            ..MCOptions::default()
        };
        let est = mc_estimate(&exceeds(z), &[eps], &cfg, &zero, &opts).unwrap();
        let row = est.rows[0];
        assert!((0.0..=1.0).contains(&row.probability));
        assert!(row.ci_low <= row.probability && row.probability <= row.ci_high);
        covered += usize::from(row.ci_low <= exact && exact <= row.ci_high);
    }
    assert!(covered >= 93, "coverage {covered}/100 for p = {exact}");
}

#[test]
fn whole_space_has_probability_one() {
    let cfg = single_mode_cfg(0.5, 0.05);
    let zero = SpectralField::zeros(&cfg.grid);
    let opts = MCOptions {
        samples: 50,
        ..MCOptions::default()
    };
    let est = mc_estimate(&Event::Whole, &[0.1, 0.01], &cfg, &zero, &opts).unwrap();
    for row in &est.rows {
        assert_eq!(row.probability, 1.0);
        assert_eq!(row.eps_log_p, Some(0.0));
    }
}

#[test]
fn decay_rate_is_bounded_below_by_the_control_cost() {
    let cfg = single_mode_cfg(1.0, 0.05);
    let zero = SpectralField::zeros(&cfg.grid);
    for (z, eps, seed) in [(0.5, 0.05, 1), (0.3, 0.02, 2)] {
        let est = mc_estimate(
            &exceeds(z),
            &[eps],
            &cfg,
            &zero,
            &MCOptions {
                samples: 20_000,
                seed,
                ..MCOptions::default()
            },
        )
        .unwrap();
        let decay = -est.rows[0].eps_log_p.expect("event was hit");
        let cost = rate_function(&zero, &cos_x1(&cfg, z), &cfg, &RateOptions::default())
            .unwrap()
            .cost;
        assert!(decay >= 0.8 * cost, "z = {z}: {decay} vs cost {cost}");
    }
}

#[test]
fn lipschitz_quotients_are_finite() {
    let g = TorusGrid::two_thirds(16).unwrap();
    let cfg = SimulationConfig::new(&g, 0.5, 0.01).unwrap();
    let probe = lipschitz_probe(1.0, 1.0, 50, &cfg, 3).unwrap();
    assert_eq!(probe.ratios_lp.len(), 50);
    assert!(probe
        .ratios_lp
        .iter()
        .chain(&probe.ratios_sup)
        .all(|r| r.is_finite() && *r >= 0.0));
    assert!(probe.max_ratio_lp.is_finite() && probe.max_ratio_sup.is_finite());

    let medians: Vec<f64> = [0.5, 1.0, 2.0]
        .iter()
        .map(|&r2| {
            lipschitz_probe(1.0, r2, 20, &cfg, 4)
                .unwrap()
                .median_ratio_lp
        })
        .collect();
    if !medians.windows(2).all(|w| w[0] <= w[1]) {
        eprintln!("flag: median Lipschitz quotient not increasing in R2: {medians:?}");
    }
}

#[test]
fn uniform_probe_vanishes_without_noise_and_decreases() {
    let g = TorusGrid::two_thirds(8).unwrap();
    let spec = MultiplicativeNoiseSpec::new(
        SigmaFamily::Sine,
        vec![
            mode_channel(1, 0, Phase::Cos),
            mode_channel(0, 1, Phase::Cos),
        ],
    )
    .unwrap();
    let mut cfg = SimulationConfig::new(&g, 0.5, 0.02).unwrap();
    cfg.noise = Some(NoiseSpec::Multiplicative(spec));
    let xi0 = vec![SpectralField::single_mode(&g, 1, 1, 1.0, Phase::Sin).unwrap()];
    let controls = vec![
        ControlPath::zeros(2, 5, 0.5).unwrap(),
        ControlPath::constant(&[1.0, -0.5], 5, 0.5).unwrap(),
    ];
    let opts = UniformOptions {
        samples: 50,
        ..UniformOptions::default()
    };
    let probe = uniform_convergence_probe(&cfg, &xi0, &controls, &[0.0], &opts).unwrap();
    assert!(probe.rows.iter().all(|r| r.hits == 0));

    let probe =
        uniform_convergence_probe(&cfg, &xi0, &controls, &[1e-1, 1e-2, 1e-3], &opts).unwrap();
    assert!(probe.monotone, "{:?}", probe.maxima);
    assert!(!probe.limitation.is_empty());
    assert!(probe
        .rows
        .iter()
        .all(|r| (0.0..=1.0).contains(&r.probability)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn rate_cost_is_nonnegative_and_controls_round_trip(
        amp in -1.0f64..1.0,
        knots in 2usize..6,
        values in proptest::collection::vec(-2.0f64..2.0, 12),
    ) {
        let cfg = single_mode_cfg(0.5, 0.05);
        let zero = SpectralField::zeros(&cfg.grid);
        let opts = RateOptions { knots, restarts: 0, max_iter: 50, ..RateOptions::default() };
        let res = rate_function(&zero, &cos_x1(&cfg, amp), &cfg, &opts).unwrap();
        prop_assert!(res.cost >= 0.0);
        let json = serde_json::to_string(&res.optimal_control).unwrap();
        let back: ControlPath = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(&back, &res.optimal_control);

        let path = ControlPath::from_flat(2, 0.5, &values[..2 * knots], f64::INFINITY).unwrap();
        prop_assert!(path.cost() >= 0.0);
        prop_assert!(path.refined(2).cost() - path.cost() <= 1e-12 * (1.0 + path.cost()));
    }
}
