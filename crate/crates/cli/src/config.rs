use std::path::Path;

use anyhow::{bail, Context, Result};
use kyle_marl::ppo::PpoConfig;
use kyle_marl::strategies::DEFAULT_EVAL_EPISODES;
use kyle_marl::GameConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Offset between the training seed and the evaluation seed when `--seed`
/// sets both.
pub const EVAL_SEED_OFFSET: u64 = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub episodes: usize,
    /// Seed of the evaluation game, kept apart from the training seed.
    pub seed: u64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self { episodes: DEFAULT_EVAL_EPISODES, seed: EVAL_SEED_OFFSET }
    }
}

/// Everything one experiment needs. Every section and field is optional.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub game: GameConfig,
    pub ppo: PpoConfig,
    pub evaluation: EvaluationConfig,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| anyhow::anyhow!("{e}"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        self.game.validate().context("section `game`")?;
        self.ppo.validate().context("section `ppo`")?;
        if self.evaluation.episodes == 0 {
            bail!("section `evaluation`: episodes must be positive");
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.game.seed = s;
            self.ppo.seed = s;
            self.evaluation.seed = s.wrapping_add(EVAL_SEED_OFFSET);
        }
        self
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Game config used for evaluation episodes.
    pub fn eval_game(&self) -> GameConfig {
        GameConfig { seed: self.evaluation.seed, ..self.game.clone() }
    }
}
