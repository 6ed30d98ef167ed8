//! Multi-agent extended Kyle market game.
//!
//! An informed trader, a liquidity trader, noise traders and a finite set of
//! competing market makers trade in discrete steps. Makers are paid against a
//! unanimous depth-weighted clearing price, which makes their game zero-sum.
//! The crate also carries the analytical benchmarks (the recursive Kyle
//! equilibrium and the risk-averse acquisition schedule), an independent PPO
//! learner, execution strategies and price-discovery diagnostics.

pub mod config;
pub mod diagnostics;
pub mod env;
pub mod exec;
pub mod kyle;
pub mod market;
pub mod ppo;
pub mod strategies;

pub use config::{GameConfig, LobMode, PolicyParam, Variant};
pub use env::{EpisodeTrace, MarketGame, ResetMode};
pub use exec::{ExecutionSchedule, ImpactPath};
pub use kyle::KyleEquilibrium;
pub use market::{LobSnapshot, NetOrderFlow, Quote};
