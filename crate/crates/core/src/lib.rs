//! Joint user scheduling, BS precoding and distributed-RIS phase control for
//! downlink multi-user MISO under statistical CSI.
//!
//! Two solvers share one system model: a centralized alternating optimizer
//! wrapped in an exhaustive schedule search ([`optimizer`]) and decentralized
//! multi-agent PPO ([`mappo`]). [`runtime`] runs trained agents interval by
//! interval and [`bench`] drives the experiments.

pub mod bench;
pub mod channel;
pub mod config;
pub mod error;
pub mod linalg;
pub mod mappo;
pub mod nn;
pub mod optimizer;
pub mod rate;
pub mod runtime;
pub mod streams;

pub use channel::{build_stats, sample_channels, ChannelSample, ChannelStats};
pub use config::{Geometry, Layout, Scenario, SystemConfig};
pub use error::{Error, Result};
pub use rate::{approx_rates, ergodic_sum_rate_mc, jfi, PrecodingState};
pub use streams::SeedStream;
