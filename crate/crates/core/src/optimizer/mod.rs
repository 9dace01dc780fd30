//! Centralized solver: exhaustive schedule search around alternating
//! precoder and phase updates.

mod ao;
pub mod fp;
pub mod manifold;
pub mod precoder;
pub mod schedule;

pub use ao::{ao_solve, bfs_ao_solve, build_quadratic, random_init, AoOptions, AoSolution, BfsAoSolution, ScheduleResult, MONOTONE_SLACK};
pub use fp::{update_active_aux, update_epsilon, update_passive_aux, Auxiliaries};
pub use manifold::{rcg_unit_modulus, ManifoldProblem, RcgOutcome};
pub use precoder::{update_precoder, PrecoderUpdate};
pub use schedule::{binomial, enumerate_schedules};
