//! Liquidity-trader execution strategies and implementation shortfall.
//!
//! Schedules are expressed in units per step and handed to the environment as
//! fractions of the remaining inventory. Counterpart (informed and maker)
//! policies stay frozen and act at their mean.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{GameConfig, Variant};
use crate::env::{run_episodes, AgentObservation, Controller, EnvError, EpisodeTrace, ResetMode};
use crate::exec::{optimal_schedule, ExecError, ImpactPath};
use crate::kyle::{solve_kyle, KyleEquilibrium, KyleError, DEFAULT_TOL};
use crate::ppo::{GaussianPolicy, PolicySet};

pub const DEFAULT_EVAL_EPISODES: usize = 30;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StrategyError {
    #[error("reference traces carry no traded volume")]
    ZeroTotalVolume,
    #[error("no {0} policy available")]
    MissingPolicy(&'static str),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Kyle(#[from] KyleError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    PpoMulti,
    VwapTrajectory,
    Twap,
    AnalyticalKyleLambda,
    PpoSingle,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [
        StrategyKind::PpoMulti,
        StrategyKind::VwapTrajectory,
        StrategyKind::Twap,
        StrategyKind::AnalyticalKyleLambda,
        StrategyKind::PpoSingle,
    ];

    pub fn label(self) -> &'static str {
        match self {
            StrategyKind::PpoMulti => "ppo",
            StrategyKind::VwapTrajectory => "vwap",
            StrategyKind::Twap => "twap",
            StrategyKind::AnalyticalKyleLambda => "analytical",
            StrategyKind::PpoSingle => "ppo_single",
        }
    }

    pub fn is_schedule(self) -> bool {
        matches!(self, StrategyKind::VwapTrajectory | StrategyKind::Twap | StrategyKind::AnalyticalKyleLambda)
    }
}

/// Splits an integer total over `weights` by largest remainder. Ties go to
/// the earliest step.
fn apportion(weights: &[f64], total: f64) -> Vec<f64> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| total * w / sum).collect();
    let mut out: Vec<f64> = exact.iter().map(|e| e.floor()).collect();
    let short = (total - out.iter().sum::<f64>()).round() as usize;
    let mut order: Vec<usize> = (0..weights.len()).collect();
    // Stable sort keeps earlier steps first among equal remainders.
    order.sort_by(|&a, &b| (exact[b] - out[b]).total_cmp(&(exact[a] - out[a])));
    for &i in order.iter().cycle().take(short) {
        out[i] += 1.0;
    }
    out
}

fn is_whole(q: f64) -> bool {
    q.fract() == 0.0 && q.abs() < 1e15
}

/// `Q / N` per step; with an integer `Q` the remainder lands on the earliest steps.
pub fn twap_schedule(q: f64, horizon: usize) -> Vec<f64> {
    assert!(horizon >= 1, "horizon must be at least 1");
    if is_whole(q) {
        apportion(&vec![1.0; horizon], q)
    } else {
        vec![q / horizon as f64; horizon]
    }
}

/// Allocates `q` in proportion to the mean gross volume `|x_IT| + |x_LT| + |u|`
/// per step across `reference`.
pub fn vwap_schedule(reference: &[EpisodeTrace], q: f64) -> Result<Vec<f64>, StrategyError> {
    let Some(first) = reference.first() else {
        return Err(StrategyError::ZeroTotalVolume);
    };
    let horizon = first.len();
    let mut volume = vec![0.0; horizon];
    for t in reference {
        if t.len() != horizon {
            return Err(StrategyError::InvalidInput(format!(
                "reference traces have lengths {horizon} and {}",
                t.len()
            )));
        }
        for (v, r) in volume.iter_mut().zip(&t.rows) {
            *v += r.flow.gross_volume();
        }
    }
    if !(volume.iter().sum::<f64>() > 0.0) {
        return Err(StrategyError::ZeroTotalVolume);
    }
    Ok(if is_whole(q) {
        apportion(&volume, q)
    } else {
        let total: f64 = volume.iter().sum();
        volume.iter().map(|v| q * v / total).collect()
    })
}

/// Open-loop optimal schedule under the equilibrium impact path.
/// `lambda_scale` multiplies every equilibrium λ before solving.
pub fn analytical_strategy(
    kyle: &KyleEquilibrium,
    phi: f64,
    alpha: f64,
    q: f64,
    horizon: usize,
    lambda_scale: f64,
) -> Result<Vec<f64>, StrategyError> {
    if kyle.horizon != horizon {
        return Err(StrategyError::InvalidInput(format!(
            "equilibrium horizon {} differs from {horizon}",
            kyle.horizon
        )));
    }
    let mut path = ImpactPath::new(kyle.lambda.iter().map(|l| l * lambda_scale).collect(), alpha, phi);
    path.sigma_u_sq = kyle.sigma_u_sq * kyle.dt;
    let sched = optimal_schedule(&path, q, horizon)?;
    if !is_whole(q) {
        return Ok(sched.x);
    }
    // Round to whole lots while keeping the total.
    let mut out = Vec::with_capacity(horizon);
    let mut carried = 0.0;
    let mut exact_cum = 0.0;
    for x in &sched.x {
        exact_cum += x;
        let target = exact_cum.round();
        out.push(target - carried);
        carried = target;
    }
    Ok(out)
}

/// The equilibrium for a game config: prior variance `sigma_v^2` and noise
/// variance per unit time.
pub fn kyle_for_game(game: &GameConfig) -> Result<KyleEquilibrium, StrategyError> {
    let noise_var = game.noise_std().powi(2) / game.tau;
    Ok(solve_kyle(game.sigma_v.powi(2), noise_var, game.tau, game.horizon, DEFAULT_TOL)?)
}

/// Implementation shortfall `(avg fill - p0) / p0` of the liquidity trader,
/// using the raw clearing price. `None` when less than one unit was bought.
pub fn implementation_shortfall(trace: &EpisodeTrace) -> Option<f64> {
    let (mut paid, mut filled) = (0.0, 0.0);
    for r in &trace.rows {
        paid += r.vwap_raw * r.flow.liquidity;
        filled += r.flow.liquidity;
    }
    if filled < 1.0 {
        return None;
    }
    Some((paid / filled - trace.open_price) / trace.open_price)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortfallReport {
    pub per_episode: Vec<Option<f64>>,
    pub mean: Option<f64>,
    /// Sample standard deviation, `None` with fewer than two values.
    pub std: Option<f64>,
    pub count: usize,
}

impl ShortfallReport {
    pub fn from_values(per_episode: Vec<Option<f64>>) -> Self {
        let vals: Vec<f64> = per_episode.iter().flatten().copied().collect();
        let n = vals.len() as f64;
        let mean = (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / n);
        let std = mean.filter(|_| vals.len() > 1).map(|m| {
            (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        });
        Self { count: per_episode.len(), per_episode, mean, std }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: ShortfallReport,
    pub traces: Vec<EpisodeTrace>,
}

/// Frozen counterparts with the liquidity trader following a fixed schedule.
#[derive(Debug, Clone)]
pub struct ScheduleController {
    pub counterparts: PolicySet,
    pub schedule: Vec<f64>,
    pub tau: f64,
}

impl ScheduleController {
    /// θ for step `n` (1-based) given the inventory still to buy.
    pub fn theta(&self, n: usize, remaining: f64) -> f64 {
        if n >= self.schedule.len() {
            return 1.0;
        }
        if remaining <= 0.0 {
            return 0.0;
        }
        (self.schedule[n - 1] / remaining).clamp(0.0, 1.0)
    }
}

impl Controller for ScheduleController {
    fn informed(&mut self, obs: &AgentObservation) -> f64 {
        self.counterparts.informed(obs)
    }

    fn liquidity(&mut self, obs: &AgentObservation) -> f64 {
        // Individual part is `[t, Q]` with `t = n * tau`.
        let n = (obs.individual[0] / self.tau).round() as usize;
        self.theta(n.max(1), obs.individual[1])
    }

    fn maker(&mut self, index: usize, obs: &AgentObservation) -> f64 {
        self.counterparts.maker(index, obs)
    }
}

/// Builds the order schedule of a schedule strategy.
pub fn build_schedule(
    kind: StrategyKind,
    counterparts: &PolicySet,
    game: &GameConfig,
    mode: ResetMode,
    episodes: usize,
) -> Result<Vec<f64>, StrategyError> {
    let q = game.target_inventory;
    match kind {
        StrategyKind::Twap => Ok(twap_schedule(q, game.horizon)),
        StrategyKind::VwapTrajectory => {
            if counterparts.liquidity.is_none() {
                return Err(StrategyError::MissingPolicy("liquidity"));
            }
            let reference = run_episodes(game, counterparts, mode, episodes)?;
            vwap_schedule(&reference, q)
        }
        StrategyKind::AnalyticalKyleLambda => {
            let kyle = kyle_for_game(game)?;
            analytical_strategy(&kyle, game.risk_aversion, game.mean_reversion, q, game.horizon, game.analytical_lambda_scale)
        }
        StrategyKind::PpoMulti | StrategyKind::PpoSingle => {
            Err(StrategyError::InvalidInput(format!("{} is not a schedule strategy", kind.label())))
        }
    }
}

/// Runs `episodes` evaluation episodes with the liquidity trader driven by
/// `kind`. `single` is the separately retrained liquidity policy used by
/// [`StrategyKind::PpoSingle`].
pub fn evaluate_strategy(
    kind: StrategyKind,
    counterparts: &PolicySet,
    single: Option<&GaussianPolicy>,
    game: &GameConfig,
    mode: ResetMode,
    episodes: usize,
) -> Result<Evaluation, StrategyError> {
    if game.variant != Variant::FullGame {
        return Err(StrategyError::InvalidInput("strategies are evaluated in the full game".into()));
    }
    counterparts
        .check_dims(game)
        .map_err(|e| StrategyError::InvalidInput(e.to_string()))?;
    let traces = match kind {
        StrategyKind::PpoMulti => {
            if counterparts.liquidity.is_none() {
                return Err(StrategyError::MissingPolicy("liquidity"));
            }
            run_episodes(game, counterparts, mode, episodes)?
        }
        StrategyKind::PpoSingle => {
            let lt = single.ok_or(StrategyError::MissingPolicy("single-agent liquidity"))?;
            let mut set = counterparts.clone();
            set.liquidity = Some(lt.clone());
            run_episodes(game, &set, mode, episodes)?
        }
        _ => {
            let schedule = build_schedule(kind, counterparts, game, mode, episodes)?;
            let ctl = ScheduleController { counterparts: counterparts.clone(), schedule, tau: game.tau };
            run_episodes(game, &ctl, mode, episodes)?
        }
    };
    let report = ShortfallReport::from_values(traces.iter().map(implementation_shortfall).collect());
    Ok(Evaluation { report, traces })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub act_type: String,
    pub lob: u8,
    pub phi: f64,
    pub mode: String,
    pub strategy: StrategyKind,
    pub report: ShortfallReport,
}

pub fn write_comparison_csv<W: Write>(mut out: W, rows: &[ComparisonRow], manifest_hash: &str) -> Result<(), csv::Error> {
    writeln!(out, "# manifest: {manifest_hash}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["act_type", "lob", "phi", "mode", "strategy", "mean_is", "std_is"])?;
    let na = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
    for r in rows {
        w.write_record([
            r.act_type.clone(),
            r.lob.to_string(),
            r.phi.to_string(),
            r.mode.clone(),
            r.strategy.label().to_string(),
            na(r.report.mean),
            na(r.report.std),
        ])?;
    }
    w.flush()?;
    Ok(())
}
