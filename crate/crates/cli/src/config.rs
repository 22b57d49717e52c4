//! Run configuration: one JSON document per run, unknown keys rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sns_core::heat_kernel::FitOptions;
use sns_core::ldp::{ControlPath, Event, RateOptions};
use sns_core::noise::{NoiseSpec, Purpose, RngStream};
use sns_core::solver::{PicardSettings, Recording, Scheme, SimulationConfig, TruncationSpec};
use sns_core::spectral::{Phase, SpectralField, TorusGrid};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub grid: GridConfig,
    pub t_final: f64,
    pub dt: f64,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default = "default_true")]
    pub nonlinearity: bool,
    #[serde(default)]
    pub recording: Recording,
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
    /// `None` picks `max(10 ‖ξ₀‖_{L^p}, 1)` for simulations; ldp commands
    /// run untruncated unless a block says otherwise.
    #[serde(default)]
    pub truncation: Option<TruncationSpec>,
    #[serde(default)]
    pub initial_condition: FieldSpec,
    #[serde(default)]
    pub simulate: SimulateBlock,
    #[serde(default)]
    pub verify: VerifyBlock,
    #[serde(default)]
    pub rate: Option<RateBlock>,
    #[serde(default)]
    pub mc: Option<McBlock>,
    #[serde(default)]
    pub probe_lipschitz: Option<LipschitzBlock>,
    #[serde(default)]
    pub probe_uniform: Option<UniformBlock>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_p() -> f64 {
    4.0
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n: usize,
    #[serde(default = "default_dealias")]
    pub dealias_fraction: f64,
}

fn default_dealias() -> f64 {
    2.0 / 3.0
}

/// A vorticity field given by its modes or drawn at random.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    Zero {},
    /// `Σ amplitude · cos/sin(η·x)`.
    Modes {
        modes: Vec<ModeTerm>,
    },
    /// Random smooth field from the run seed; `stream` separates draws.
    Random {
        amplitude: f64,
        decay: f64,
        #[serde(default)]
        stream: u64,
    },
}

impl Default for FieldSpec {
    fn default() -> Self {
        FieldSpec::Zero {}
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeTerm {
    pub mode: [i64; 2],
    pub phase: Phase,
    pub amplitude: f64,
}

impl FieldSpec {
    pub fn build(&self, grid: &TorusGrid, seed: u64) -> Result<SpectralField, CliError> {
        match self {
            FieldSpec::Zero {} => Ok(SpectralField::zeros(grid)),
            FieldSpec::Modes { modes } => {
                let mut out = SpectralField::zeros(grid);
                for m in modes {
                    if m.mode == [0, 0] {
                        return Err(CliError::Config(
                            "mode (0, 0) is not allowed: fields are mean-free".into(),
                        ));
                    }
                    let f = SpectralField::single_mode(
                        grid,
                        m.mode[0],
                        m.mode[1],
                        m.amplitude,
                        m.phase,
                    )
                    .map_err(|e| CliError::Config(format!("mode {:?}: {e}", m.mode)))?;
                    out.axpy(1.0, &f);
                }
                Ok(out)
            }
            FieldSpec::Random {
                amplitude,
                decay,
                stream,
            } => {
                if !(amplitude.is_finite() && decay.is_finite() && *decay >= 0.0) {
                    return Err(CliError::Config(
                        "random field needs finite amplitude and decay >= 0".into(),
                    ));
                }
                let mut rng = RngStream::new(seed, *stream, Purpose::InitialCondition);
                let mut f = SpectralField::random(grid, &mut rng, *amplitude, *decay).dealiased();
                f.project_zero_mean();
                Ok(f)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Stepping,
    Picard,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateBlock {
    pub method: Method,
    pub picard: PicardSettings,
    /// Write the recorded states as binary dumps.
    pub state_dumps: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyBlock {
    pub gradient_betas: Vec<f64>,
    pub kernel_betas: Vec<f64>,
    pub fit: FitOptions,
    pub slope_tolerance: f64,
    pub min_r_squared: f64,
    pub representation: RepresentationCheck,
    pub biot_savart: BiotSavartCheck,
}

impl Default for VerifyBlock {
    fn default() -> Self {
        Self {
            gradient_betas: vec![0.5, 1.0, 1.25],
            kernel_betas: vec![0.5, 1.0, 1.5],
            fit: FitOptions::default(),
            slope_tolerance: 0.05,
            min_r_squared: 0.999,
            representation: RepresentationCheck::default(),
            biot_savart: BiotSavartCheck::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RepresentationCheck {
    pub t_min: f64,
    pub t_max: f64,
    pub points: usize,
    pub tolerance: f64,
}

impl Default for RepresentationCheck {
    fn default() -> Self {
        Self {
            t_min: 1e-2,
            t_max: 10.0,
            points: 100,
            tolerance: 1e-10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BiotSavartCheck {
    pub n: usize,
    pub fields: usize,
    pub identity_tolerance: f64,
    pub orthogonality_tolerance: f64,
}

impl Default for BiotSavartCheck {
    fn default() -> Self {
        Self {
            n: 64,
            fields: 100,
            identity_tolerance: 1e-13,
            orthogonality_tolerance: 1e-12,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateBlock {
    pub target: FieldSpec,
    /// Adds the uncontrolled endpoint to `target`, so `zero` means "stay on
    /// the deterministic flow".
    #[serde(default)]
    pub relative_to_free_endpoint: bool,
    #[serde(default)]
    pub options: RateOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McBlock {
    pub event: Event,
    pub epsilons: Vec<f64>,
    pub samples: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LipschitzBlock {
    pub r1: f64,
    /// One probe per forcing radius; medians are compared across them.
    pub r2: Vec<f64>,
    pub pairs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniformBlock {
    pub initial_conditions: Vec<FieldSpec>,
    pub controls: Vec<ControlSpec>,
    pub epsilons: Vec<f64>,
    #[serde(default = "default_uniform_samples")]
    pub samples: usize,
    #[serde(default = "default_deltas")]
    pub deltas: Vec<f64>,
    /// Energy bound `M` of the admissible controls.
    #[serde(default)]
    pub bound: Option<f64>,
}

fn default_uniform_samples() -> usize {
    200
}

fn default_deltas() -> Vec<f64> {
    vec![0.1, 0.05]
}

/// Piecewise-constant control on `[0, T]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControlSpec {
    /// The same channel values on each of `knots` pieces.
    Constant { values: Vec<f64>, knots: usize },
    /// Channel values per piece.
    Knots { values: Vec<Vec<f64>> },
}

impl ControlSpec {
    pub fn build(
        &self,
        n_channels: usize,
        t_final: f64,
        bound: Option<f64>,
    ) -> Result<ControlPath, CliError> {
        let path = match self {
            ControlSpec::Constant { values, knots } => {
                ControlPath::constant(values, *knots, t_final)
            }
            ControlSpec::Knots { values } => {
                let n = values.first().map_or(0, Vec::len);
                ControlPath::new(n, t_final, values.clone(), f64::INFINITY)
            }
        }
        .map_err(|e| CliError::Config(format!("control: {e}")))?;
        if path.n_channels() != n_channels {
            return Err(CliError::Config(format!(
                "control has {} channels, noise has {n_channels}",
                path.n_channels()
            )));
        }
        match bound {
            Some(m) => path
                .with_bound(m)
                .map_err(|e| CliError::Config(format!("control: {e}"))),
            None => Ok(path),
        }
    }
}

impl RunConfig {
    /// Parses `text`, reporting the offending field path and position.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            if path == "." {
                CliError::Config(inner.to_string())
            } else {
                CliError::Config(format!("field `{path}`: {inner}"))
            }
        })?;
        cfg.simulation()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn grid(&self) -> Result<TorusGrid, CliError> {
        TorusGrid::new(self.grid.n, self.grid.dealias_fraction)
            .map_err(|e| CliError::Config(format!("field `grid`: {e}")))
    }

    pub fn simulation(&self) -> Result<SimulationConfig, CliError> {
        let grid = self.grid()?;
        let cfg = SimulationConfig {
            grid,
            t_final: self.t_final,
            dt: self.dt,
            epsilon: self.epsilon,
            p: self.p,
            noise: self.noise.clone(),
            scheme: self.scheme,
            nonlinearity: self.nonlinearity,
            recording: self.recording,
        };
        cfg.validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn initial(&self, grid: &TorusGrid) -> Result<SpectralField, CliError> {
        self.initial_condition
            .build(grid, self.seed)
            .map_err(|e| e.context("field `initial_condition`"))
    }

    pub fn n_channels(&self) -> Option<usize> {
        match &self.noise {
            Some(NoiseSpec::Multiplicative(m)) => Some(m.n_channels()),
            _ => None,
        }
    }
}
