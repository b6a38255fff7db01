//! Spatial prisoner's dilemma with probabilistic abstention.
//!
//! Agents on a toroidal square lattice carry a strategy (cooperate or defect)
//! and a probability α of sitting out any individual play. Sitting out pays
//! both sides the loner's payoff. Populations evolve by imitation, either
//! synchronously (copy the best neighbour) or asynchronously (Fermi rule).
//! With every α = 0 the model is the classic spatial prisoner's dilemma; with
//! α restricted to {0, 1} it is the optional prisoner's dilemma.
//!
//! ```
//! use pdpa::{run_simulation, InitScheme, LatticeConfig, RunConfig, UpdateRule};
//!
//! let config = RunConfig {
//!     lattice: LatticeConfig::square(20)?,
//!     scheme: InitScheme::Pdpa,
//!     rule: UpdateRule::Synchronous,
//!     steps: 50,
//!     ..Default::default()
//! };
//! let result = run_simulation(&config)?;
//! let last = result.final_stats();
//! assert!(last.mean_epsilon + last.mean_alpha <= 1.0 + 1e-12);
//! # Ok::<(), pdpa::Error>(())
//! ```

pub mod cli;
pub mod dynamics;
mod error;
pub mod experiments;
pub mod interaction;
pub mod io;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod rng;

pub use dynamics::{
    async_elementary_update, async_step, fermi_probability, run_simulation, sync_step, RunConfig, SimResult,
    Stepper, UpdateRule,
};
pub use error::{Error, Result};
pub use experiments::{
    derive_seed, run_replicates, sweep_temptation, sweep_tl, AggregateCell, Execution, PlaneResult, SweepSpec,
};
pub use interaction::{
    expected_edge_payoff, gather_utility, interaction_probability, play_edge, EdgeOutcome, GameParams, ParamMode,
};
pub use metrics::{population_stats, sampling_schedule, snapshot, PopulationStats, SamplingMode, SnapshotSet};
pub use model::{
    alpha_value, effective_cooperation, initialize, neighbor_sites, AgentState, AlphaLevel, InitScheme, Lattice,
    LatticeConfig, Strategy, ALPHA_LEVELS, KAPPA,
};
pub use rng::RngStream;

/// The guide's chapters, compiled as doctests so their snippets stay in sync
/// with the library.
#[cfg(doctest)]
pub mod book {
    #[doc = include_str!("../../../book/src/game.md")]
    pub mod game {}
    #[doc = include_str!("../../../book/src/lattice.md")]
    pub mod lattice {}
    #[doc = include_str!("../../../book/src/dynamics.md")]
    pub mod dynamics {}
    #[doc = include_str!("../../../book/src/measurement.md")]
    pub mod measurement {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    pub mod experiments {}
}
