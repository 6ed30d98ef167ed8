//! Game configuration. Defaults: `N = 20` steps, `v ~ N(1000, 100^2)` cents,
//! noise scale 50 units, a 50% price cap, `Q = 1000`, `phi = 0.01`, terminal
//! penalty 10 and no mean reversion.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Informed trader, noise trader and makers.
    KyleOnly,
    /// Liquidity trader, noise trader and makers.
    LiquidityVsMakers,
    /// All three trader types and makers.
    FullGame,
}

impl Variant {
    pub fn has_informed(self) -> bool {
        matches!(self, Variant::KyleOnly | Variant::FullGame)
    }

    pub fn has_liquidity(self) -> bool {
        matches!(self, Variant::LiquidityVsMakers | Variant::FullGame)
    }
}

/// Whether the sorted book is part of the shared observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LobMode {
    Otc,
    Exchange,
}

impl LobMode {
    /// The `0/1` flag used in result tables.
    pub fn flag(self) -> u8 {
        match self {
            LobMode::Otc => 0,
            LobMode::Exchange => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyParam {
    /// Policies emit structural coefficients (beta, lambda).
    Linear,
    /// Policies emit orders and quotes directly.
    Nonlinear,
}

impl PolicyParam {
    pub fn label(self) -> &'static str {
        match self {
            PolicyParam::Linear => "linear",
            PolicyParam::Nonlinear => "non-linear",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid game config: {0}")]
pub struct InvalidConfig(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GameConfig {
    pub horizon: usize,
    pub num_market_makers: usize,
    pub variant: Variant,
    pub lob_mode: LobMode,
    pub policy_param: PolicyParam,
    /// Mean fundamental value, cents.
    pub mu_v: f64,
    /// Standard deviation of the fundamental value, cents.
    pub sigma_v: f64,
    /// Noise-trader order standard deviation per step, units.
    pub sigma_u: f64,
    /// Rescale noise variance as `sigma_u^2 * 20 / N` (execution games).
    pub execution_noise_scaling: bool,
    pub price_cap_fraction: f64,
    pub target_inventory: f64,
    pub risk_aversion: f64,
    pub terminal_penalty: f64,
    pub mean_reversion: f64,
    pub tau: f64,
    pub theta_bounds: [f64; 2],
    /// Smallest admissible `|lambda|` for a maker, cents per unit.
    pub lambda_floor: f64,
    /// Largest admissible `|lambda|` for a maker, cents per unit.
    pub lambda_max: f64,
    /// Cap on `|x_it|` as a multiple of `sigma_u`.
    pub informed_cap_sigmas: f64,
    /// Round trader and noise orders to whole units.
    pub integer_orders: bool,
    /// Multiplier applied to the Kyle impact path before the execution solver.
    pub analytical_lambda_scale: f64,
    pub seed: u64,
}

impl Default for GameConfig {
    fn default() -> Self {
        Self {
            horizon: 20,
            num_market_makers: 20,
            variant: Variant::KyleOnly,
            lob_mode: LobMode::Otc,
            policy_param: PolicyParam::Linear,
            mu_v: 1000.0,
            sigma_v: 100.0,
            sigma_u: 50.0,
            execution_noise_scaling: false,
            price_cap_fraction: 0.5,
            target_inventory: 1000.0,
            risk_aversion: 0.01,
            terminal_penalty: 10.0,
            mean_reversion: 0.0,
            tau: 1.0,
            theta_bounds: [0.0, 1.0],
            lambda_floor: 1e-4,
            lambda_max: 10.0,
            informed_cap_sigmas: 10.0,
            integer_orders: true,
            analytical_lambda_scale: 1.0,
            seed: 0,
        }
    }
}

impl GameConfig {
    /// The execution-game preset: full game with scaled noise.
    pub fn execution() -> Self {
        Self {
            variant: Variant::FullGame,
            execution_noise_scaling: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), InvalidConfig> {
        let fail = |msg: String| Err(InvalidConfig(msg));
        if self.horizon < 1 {
            return fail("horizon must be at least 1".into());
        }
        if self.num_market_makers < 1 {
            return fail("num_market_makers must be at least 1".into());
        }
        if !(self.price_cap_fraction > 0.0 && self.price_cap_fraction < 1.0) {
            return fail(format!(
                "price_cap_fraction {} not in (0, 1)",
                self.price_cap_fraction
            ));
        }
        if self.theta_bounds[0] > self.theta_bounds[1] {
            return fail(format!("theta_bounds {:?} are reversed", self.theta_bounds));
        }
        if !(self.risk_aversion >= 0.0) {
            return fail(format!("risk_aversion {} is negative", self.risk_aversion));
        }
        if !(self.terminal_penalty > self.risk_aversion) {
            return fail(format!(
                "terminal_penalty {} must exceed risk_aversion {}",
                self.terminal_penalty, self.risk_aversion
            ));
        }
        if !(0.0..=1.0).contains(&self.mean_reversion) {
            return fail(format!("mean_reversion {} not in [0, 1]", self.mean_reversion));
        }
        if !(self.mu_v > 0.0) || !(self.sigma_v >= 0.0) || !(self.sigma_u >= 0.0) {
            return fail("mu_v must be positive and sigma_v, sigma_u non-negative".into());
        }
        if !(self.tau > 0.0) {
            return fail(format!("tau {} must be positive", self.tau));
        }
        if !(self.lambda_floor > 0.0 && self.lambda_floor < self.lambda_max) {
            return fail(format!(
                "need 0 < lambda_floor ({}) < lambda_max ({})",
                self.lambda_floor, self.lambda_max
            ));
        }
        if !(self.target_inventory >= 0.0) {
            return fail("target_inventory must be non-negative".into());
        }
        if !(self.informed_cap_sigmas > 0.0) {
            return fail("informed_cap_sigmas must be positive".into());
        }
        Ok(())
    }

    /// Per-step standard deviation of noise-trader flow, `sigma_u * sqrt(tau)`
    /// after the optional horizon rescaling.
    pub fn noise_std(&self) -> f64 {
        let var = if self.execution_noise_scaling {
            self.sigma_u * self.sigma_u * 20.0 / self.horizon as f64
        } else {
            self.sigma_u * self.sigma_u
        };
        (var * self.tau).sqrt()
    }

    pub fn informed_cap(&self) -> f64 {
        self.informed_cap_sigmas * self.sigma_u
    }

    /// Length of the shared observation component.
    pub fn global_obs_dim(&self) -> usize {
        match self.lob_mode {
            LobMode::Otc => 1,
            LobMode::Exchange => 1 + 2 * self.num_market_makers,
        }
    }

    /// Every role observes `global ++ [t, private]`.
    pub fn obs_dim(&self) -> usize {
        self.global_obs_dim() + 2
    }
}
