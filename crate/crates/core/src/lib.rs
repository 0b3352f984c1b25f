//! Planar swarm simulation and data-driven system identification.
//!
//! The crate covers the swarm model and its stochastic integrator, dataset
//! construction, the mean field error metric, a small reverse-mode
//! autodiff engine, and the forecasters built on it: least squares,
//! MLP/RNN/CNN baselines and a weight-shared neural ODE.

pub mod autodiff;
pub mod baselines;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod node;
pub mod ols;
pub mod regime;
pub mod simulator;
pub mod swarm;

pub use error::{Error, Result};
pub use metrics::{mean_field, mfe, mfe_series, steady_descriptors, MfeSeries, SteadyDescriptors};
pub use regime::{classify_regime, Regime, RegimeLabel, RegimeThresholds};
pub use simulator::{simulate, split_transient_steady, SplitPolicy, Trajectory};
pub use swarm::{NoiseScaling, StateDerivative, SwarmParams, SwarmState, Vec2};
