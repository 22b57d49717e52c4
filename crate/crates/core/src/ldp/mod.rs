//! Large-deviation tooling: rate-function evaluation by optimal control,
//! small-noise Monte Carlo and numerical probes of the uniform estimates.

mod control;
mod mc;
mod probes;
mod rate;

pub use control::ControlPath;
pub use mc::{mc_estimate, sample_trajectory, Event, MCEstimate, MCOptions, MCRow};
pub use probes::{
    lipschitz_probe, uniform_convergence_probe, LipschitzProbe, PairingGain, PathNorm, UniformMax,
    UniformOptions, UniformProbe, UniformRow,
};
pub use rate::{
    rate_function, skeleton_endpoint, skeleton_residual, GradientMethod, RateOptions, RateResult,
};
