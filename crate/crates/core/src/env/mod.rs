//! The multi-period trading game.
//!
//! Each step runs in two phases. Traders submit orders first
//! ([`MarketGame::submit_orders`]); the makers then see the aggregate flow and
//! quote ([`MarketGame::clear`]). Observations handed out at step `n` only
//! carry market information from step `n - 1`.

pub mod actions;
pub mod trace;

use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{GameConfig, InvalidConfig, LobMode};
use crate::market::{self, clamp_and_tick, LobSnapshot, MarketError, NetOrderFlow, PriceBounds, Quote};

pub use trace::{EpisodeSeries, EpisodeTrace, Rewards, StepRecord};

const CENTS_PER_DOLLAR: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResetMode {
    /// `v` drawn from its prior, opening price uniform over the admissible range.
    TrainRandom,
    /// `v = mu_v`, opening price `0.7 mu_v`.
    EvalDown,
    /// `v = mu_v`, opening price `1.3 mu_v`.
    EvalUp,
}

impl ResetMode {
    pub fn label(self) -> &'static str {
        match self {
            ResetMode::TrainRandom => "train",
            ResetMode::EvalDown => "down",
            ResetMode::EvalUp => "up",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error(transparent)]
    InvalidConfig(#[from] InvalidConfig),
    #[error("episode finished; call reset")]
    EpisodeFinished,
    #[error("no episode in progress; call reset")]
    NotStarted,
    #[error("action out of domain: {0}")]
    ActionOutOfDomain(String),
    #[error("step phase out of order: {0}")]
    OutOfOrder(&'static str),
    #[error(transparent)]
    Market(#[from] MarketError),
}

/// Global and role-specific observation parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentObservation {
    pub global: Vec<f64>,
    pub individual: Vec<f64>,
}

impl AgentObservation {
    pub fn to_vec(&self) -> Vec<f64> {
        self.global.iter().chain(&self.individual).copied().collect()
    }
}

/// Trader observations for the step about to be played.
#[derive(Debug, Clone, PartialEq)]
pub struct TraderObservations {
    pub informed: Option<AgentObservation>,
    pub liquidity: Option<AgentObservation>,
}

/// Raw trader actions for one step; each must be present iff the role is.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TraderActions {
    pub informed: Option<f64>,
    pub liquidity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub rewards: Rewards,
    pub done: bool,
    pub record: StepRecord,
    /// Trader observations for the next step, `None` once done.
    pub next: Option<TraderObservations>,
}

#[derive(Debug, Clone)]
struct Pending {
    informed_action: Option<f64>,
    theta: Option<f64>,
    flow: NetOrderFlow,
}

#[derive(Debug, Clone)]
struct Episode {
    fundamental: f64,
    open_price: f64,
    bounds: PriceBounds,
    /// Completed steps.
    n: usize,
    prior_vwap: f64,
    prior_book: Option<LobSnapshot>,
    inventory: f64,
    pending: Option<Pending>,
    rows: Vec<StepRecord>,
}

/// One game instance. Not shareable across threads while an episode runs;
/// run independent instances with distinct seeds instead.
#[derive(Debug, Clone)]
pub struct MarketGame {
    config: GameConfig,
    rng: ChaCha8Rng,
    episode: Option<Episode>,
}

impl MarketGame {
    pub fn new(config: GameConfig) -> Result<Self, EnvError> {
        config.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self {
            config,
            rng,
            episode: None,
        })
    }

    pub fn config(&self) -> &GameConfig {
        &self.config
    }

    /// Restarts the environment's random stream.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    pub fn reset(&mut self, mode: ResetMode) -> TraderObservations {
        let cfg = &self.config;
        // Both draws happen in every mode so the noise stream does not depend on it.
        let v_draw = Normal::new(cfg.mu_v, cfg.sigma_v)
            .expect("validated sigma_v")
            .sample(&mut self.rng);
        let u01: f64 = self.rng.random();
        let (fundamental, open) = match mode {
            ResetMode::TrainRandom => {
                let b = PriceBounds::around(v_draw, cfg.price_cap_fraction);
                (v_draw, b.min + u01 * (b.max - b.min))
            }
            ResetMode::EvalDown => (cfg.mu_v, 0.7 * cfg.mu_v),
            ResetMode::EvalUp => (cfg.mu_v, 1.3 * cfg.mu_v),
        };
        let bounds = PriceBounds::around(fundamental, cfg.price_cap_fraction);
        let open_price = clamp_and_tick(open, bounds);
        self.episode = Some(Episode {
            fundamental,
            open_price,
            bounds,
            n: 0,
            prior_vwap: open_price,
            prior_book: None,
            inventory: cfg.target_inventory,
            pending: None,
            rows: Vec::with_capacity(cfg.horizon),
        });
        self.trader_observations().expect("episode just started")
    }

    pub fn is_done(&self) -> bool {
        self.episode
            .as_ref()
            .is_none_or(|e| e.n >= self.config.horizon)
    }

    pub fn fundamental(&self) -> Option<f64> {
        self.episode.as_ref().map(|e| e.fundamental)
    }

    pub fn open_price(&self) -> Option<f64> {
        self.episode.as_ref().map(|e| e.open_price)
    }

    pub fn bounds(&self) -> Option<PriceBounds> {
        self.episode.as_ref().map(|e| e.bounds)
    }

    pub fn remaining_inventory(&self) -> Option<f64> {
        self.episode.as_ref().map(|e| e.inventory)
    }

    /// Steps completed so far.
    pub fn step_index(&self) -> usize {
        self.episode.as_ref().map_or(0, |e| e.n)
    }

    fn episode(&self) -> Result<&Episode, EnvError> {
        self.episode.as_ref().ok_or(EnvError::NotStarted)
    }

    fn global_observation(&self, ep: &Episode) -> Vec<f64> {
        let mut g = vec![clamp_and_tick(ep.prior_vwap, ep.bounds)];
        if self.config.lob_mode == LobMode::Exchange {
            match &ep.prior_book {
                Some(book) => g.extend(book.flatten()),
                // No book before the first step: zero depth at the opening price.
                None => {
                    for _ in 0..self.config.num_market_makers {
                        g.extend([0.0, ep.open_price]);
                    }
                }
            }
        }
        g
    }

    fn clock(&self, ep: &Episode) -> f64 {
        (ep.n + 1) as f64 * self.config.tau
    }

    pub fn trader_observations(&self) -> Result<TraderObservations, EnvError> {
        let ep = self.episode()?;
        if ep.n >= self.config.horizon {
            return Err(EnvError::EpisodeFinished);
        }
        let global = self.global_observation(ep);
        let t = self.clock(ep);
        let variant = self.config.variant;
        Ok(TraderObservations {
            informed: variant.has_informed().then(|| AgentObservation {
                global: global.clone(),
                individual: vec![t, ep.fundamental],
            }),
            liquidity: variant.has_liquidity().then(|| AgentObservation {
                global,
                individual: vec![t, ep.inventory],
            }),
        })
    }

    /// First phase: traders' orders plus noise. Returns each maker's
    /// observation, which includes this step's total flow.
    pub fn submit_orders(
        &mut self,
        actions: TraderActions,
    ) -> Result<Vec<AgentObservation>, EnvError> {
        let cfg = self.config.clone();
        let ep = self.episode.as_ref().ok_or(EnvError::NotStarted)?;
        if ep.n >= cfg.horizon {
            return Err(EnvError::EpisodeFinished);
        }
        if ep.pending.is_some() {
            return Err(EnvError::OutOfOrder("orders already submitted this step"));
        }
        let informed = check_role("informed", cfg.variant.has_informed(), actions.informed)?;
        let liquidity = check_role("liquidity", cfg.variant.has_liquidity(), actions.liquidity)?;

        let noise_std = cfg.noise_std();
        let noise_draw: f64 = Normal::new(0.0, noise_std)
            .expect("validated sigma_u")
            .sample(&mut self.rng);
        let ep = self.episode.as_mut().expect("checked above");
        let noise = actions::to_lot(noise_draw, cfg.integer_orders);

        let x_it = informed.map_or(0.0, |raw| {
            let x = actions::informed_order(
                cfg.policy_param,
                raw,
                ep.fundamental,
                ep.prior_vwap,
                cfg.tau,
                cfg.informed_cap(),
            );
            actions::to_lot(x, cfg.integer_orders)
        });
        let (theta, x_lt) = match liquidity {
            Some(raw) => {
                let (theta, x) = actions::liquidity_order(raw, ep.inventory, cfg.theta_bounds);
                let x = actions::to_lot(x, cfg.integer_orders).min(ep.inventory);
                // Exact fill when the whole remainder is requested.
                let x = if theta >= 1.0 { ep.inventory } else { x };
                (Some(theta), x)
            }
            None => (None, 0.0),
        };
        let flow = NetOrderFlow::new(x_it, x_lt, noise);
        ep.pending = Some(Pending {
            informed_action: informed,
            theta,
            flow,
        });

        let ep = self.episode.as_ref().expect("checked above");
        let global = self.global_observation(ep);
        let t = self.clock(ep);
        Ok((0..cfg.num_market_makers)
            .map(|_| AgentObservation {
                global: global.clone(),
                individual: vec![t, flow.total],
            })
            .collect())
    }

    /// Second phase: maker quotes, pro-rata clearing and rewards.
    pub fn clear(&mut self, maker_actions: &[f64]) -> Result<StepOutcome, EnvError> {
        let cfg = &self.config;
        let ep = self.episode.as_mut().ok_or(EnvError::NotStarted)?;
        if ep.n >= cfg.horizon {
            return Err(EnvError::EpisodeFinished);
        }
        let Some(pending) = ep.pending.take() else {
            return Err(EnvError::OutOfOrder("clear called before submit_orders"));
        };
        if maker_actions.len() != cfg.num_market_makers {
            ep.pending = Some(pending);
            return Err(EnvError::ActionOutOfDomain(format!(
                "expected {} maker actions, got {}",
                cfg.num_market_makers,
                maker_actions.len()
            )));
        }
        if let Some(bad) = maker_actions.iter().position(|a| !a.is_finite()) {
            ep.pending = Some(pending);
            return Err(EnvError::ActionOutOfDomain(format!(
                "maker {bad} action is not finite"
            )));
        }

        let flow = pending.flow;
        let mut floor_hits = 0;
        let quotes: Vec<Quote> = maker_actions
            .iter()
            .enumerate()
            .map(|(i, &raw)| {
                let mq = actions::maker_quote(
                    cfg.policy_param,
                    raw,
                    ep.prior_vwap,
                    flow.total,
                    ep.bounds,
                    cfg.lambda_floor,
                    cfg.lambda_max,
                );
                floor_hits += usize::from(mq.floored);
                Quote::new(i, mq.price, mq.lambda)
            })
            .collect();
        let allocations = market::allocate_pro_rata(flow.total, &quotes)?;
        let vwap_raw = market::vwap(&quotes)?;

        let n = ep.n + 1;
        let maker_rewards: Vec<f64> = quotes
            .iter()
            .zip(&allocations)
            .map(|(q, a)| a * (q.price - vwap_raw) / CENTS_PER_DOLLAR)
            .collect();
        let informed_reward = pending
            .informed_action
            .map(|_| (ep.fundamental - vwap_raw) * flow.informed / CENTS_PER_DOLLAR);
        let inventory_before = ep.inventory;
        let liquidity_reward = pending.theta.map(|_| {
            let mut cost = flow.liquidity * vwap_raw + cfg.risk_aversion * inventory_before.powi(2);
            if n == cfg.horizon {
                let unfilled = inventory_before - flow.liquidity;
                cost += cfg.terminal_penalty * unfilled.powi(2);
            }
            -cost / CENTS_PER_DOLLAR
        });
        let rewards = Rewards {
            informed: informed_reward,
            liquidity: liquidity_reward,
            makers: maker_rewards,
        };

        let has_lt = pending.theta.is_some();
        if has_lt {
            ep.inventory = inventory_before - flow.liquidity;
        }
        let ticked: Vec<Quote> = quotes
            .iter()
            .map(|q| Quote::new(q.maker_id, clamp_and_tick(q.price, ep.bounds), q.lambda))
            .collect();
        let record = StepRecord {
            n,
            prior_vwap: ep.prior_vwap,
            vwap_raw,
            vwap: clamp_and_tick(vwap_raw, ep.bounds),
            flow,
            informed_action: pending.informed_action,
            theta: pending.theta,
            inventory_before: has_lt.then_some(inventory_before),
            inventory_after: has_lt.then_some(ep.inventory),
            maker_actions: maker_actions.to_vec(),
            quotes,
            allocations,
            rewards: rewards.clone(),
            depth_floor_hits: floor_hits,
        };
        ep.prior_book = Some(LobSnapshot::from_quotes(&ticked, vwap_raw)?);
        ep.prior_vwap = vwap_raw;
        ep.n = n;
        ep.rows.push(record.clone());

        let done = n >= cfg.horizon;
        let next = if done { None } else { Some(self.trader_observations()?) };
        Ok(StepOutcome {
            rewards,
            done,
            record,
            next,
        })
    }

    /// Both phases with maker actions fixed up front.
    pub fn step(
        &mut self,
        traders: TraderActions,
        maker_actions: &[f64],
    ) -> Result<StepOutcome, EnvError> {
        self.submit_orders(traders)?;
        self.clear(maker_actions)
    }

    /// Trace of the current (or just finished) episode.
    pub fn trace(&self) -> Option<EpisodeTrace> {
        self.episode.as_ref().map(|ep| EpisodeTrace {
            variant: self.config.variant,
            fundamental: ep.fundamental,
            open_price: ep.open_price,
            bounds: ep.bounds,
            rows: ep.rows.clone(),
        })
    }
}

fn check_role(
    role: &str,
    present: bool,
    action: Option<f64>,
) -> Result<Option<f64>, EnvError> {
    match (present, action) {
        (true, Some(a)) if a.is_finite() => Ok(Some(a)),
        (true, Some(_)) => Err(EnvError::ActionOutOfDomain(format!("{role} action is not finite"))),
        (true, None) => Err(EnvError::ActionOutOfDomain(format!("missing {role} action"))),
        (false, Some(_)) => Err(EnvError::ActionOutOfDomain(format!(
            "{role} trader is not part of this variant"
        ))),
        (false, None) => Ok(None),
    }
}

/// Something that chooses every agent's raw action from its observation.
pub trait Controller {
    fn informed(&mut self, obs: &AgentObservation) -> f64;
    fn liquidity(&mut self, obs: &AgentObservation) -> f64;
    fn maker(&mut self, index: usize, obs: &AgentObservation) -> f64;
}

/// Plays one full episode from `reset(mode)` to done.
pub fn run_episode<C: Controller + ?Sized>(
    game: &mut MarketGame,
    controller: &mut C,
    mode: ResetMode,
) -> Result<EpisodeTrace, EnvError> {
    let mut obs = game.reset(mode);
    loop {
        let actions = TraderActions {
            informed: obs.informed.as_ref().map(|o| controller.informed(o)),
            liquidity: obs.liquidity.as_ref().map(|o| controller.liquidity(o)),
        };
        let maker_obs = game.submit_orders(actions)?;
        let quotes: Vec<f64> = maker_obs
            .iter()
            .enumerate()
            .map(|(i, o)| controller.maker(i, o))
            .collect();
        let outcome = game.clear(&quotes)?;
        match outcome.next {
            Some(next) => obs = next,
            None => break,
        }
    }
    Ok(game.trace().expect("episode ran"))
}

/// Seed of evaluation episode `e`, shared by every controller run on the
/// same config so they face identical fundamentals and noise.
pub fn episode_seed(seed: u64, e: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(e as u64)
}

/// Plays `episodes` independent episodes in parallel. Episode `e` reseeds a
/// fresh game with [`episode_seed`], so results do not depend on scheduling.
pub fn run_episodes<C: Controller + Clone + Send + Sync>(
    config: &GameConfig,
    controller: &C,
    mode: ResetMode,
    episodes: usize,
) -> Result<Vec<EpisodeTrace>, EnvError> {
    let base = MarketGame::new(config.clone())?;
    (0..episodes)
        .into_par_iter()
        .map(|e| {
            let mut g = base.clone();
            g.reseed(episode_seed(config.seed, e));
            let mut c = controller.clone();
            run_episode(&mut g, &mut c, mode)
        })
        .collect()
}

/// Implied linear coefficients recovered from a trace, one entry per step.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpliedCoefficients {
    pub beta: Option<f64>,
    pub lambdas: Vec<Option<f64>>,
}

pub fn implied_coefficients(trace: &EpisodeTrace, tau: f64) -> Vec<ImpliedCoefficients> {
    trace
        .rows
        .iter()
        .map(|r| ImpliedCoefficients {
            beta: r
                .informed_action
                .and_then(|_| actions::implied_beta(r.flow.informed, trace.fundamental, r.prior_vwap, tau)),
            lambdas: r
                .quotes
                .iter()
                .map(|q| actions::implied_lambda(q.price, r.prior_vwap, r.flow.total))
                .collect(),
        })
        .collect()
}
