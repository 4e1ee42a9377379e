//! Transmit-power minimization for multi-user MIMO downlinks assisted by
//! tiled reconfigurable intelligent surfaces.
//!
//! The precoder and the tile configuration are optimized alternately: the
//! precoder by the uplink-downlink duality fixed point ([`precoder`]), the
//! tile coefficients by projected gradient ascent on the Lagrangian dual of
//! a convex MSE problem ([`to2`]). [`ao`] drives the loop and
//! [`experiments`] runs Monte-Carlo sweeps over it.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ao;
pub mod channel;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod precoder;
pub mod ris_model;
pub mod rng;
pub mod scenario;
pub mod to2;

pub use error::{AoError, ChannelError, ExperimentError, ModelError, ScenarioError, SolverError};
pub use scenario::{builtin_preset, load_scenario, resolve_scenario, Scenario, ScenarioConfig};
