//! Independent PPO over the market game.

use std::io::Write;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::buffer::RolloutBuffer;
use super::policy::{gaussian_log_prob, ActionTransform, GaussianPolicy};
use super::update::{ppo_update, Adam};
use super::{learner_rng, PpoConfig, PpoError, RewardScaler};
use crate::config::{GameConfig, PolicyParam};
use crate::env::{AgentObservation, Controller, MarketGame, ResetMode, TraderActions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Informed,
    Liquidity,
    Maker,
}

impl Role {
    pub fn label(self) -> &'static str {
        match self {
            Role::Informed => "informed",
            Role::Liquidity => "liquidity",
            Role::Maker => "makers",
        }
    }
}

/// Maps network outputs onto each role's environment action scale.
pub fn action_transform(role: Role, game: &GameConfig) -> ActionTransform {
    match (role, game.policy_param) {
        (Role::Informed, PolicyParam::Nonlinear) => ActionTransform { offset: 0.0, scale: game.noise_std() },
        (Role::Maker, PolicyParam::Nonlinear) => ActionTransform { offset: game.mu_v, scale: game.sigma_v },
        _ => ActionTransform::default(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MakerPolicies {
    Shared(GaussianPolicy),
    Independent(Vec<GaussianPolicy>),
}

impl MakerPolicies {
    pub fn get(&self, i: usize) -> &GaussianPolicy {
        match self {
            MakerPolicies::Shared(p) => p,
            MakerPolicies::Independent(v) => &v[i],
        }
    }

    fn slot(&self, i: usize) -> usize {
        match self {
            MakerPolicies::Shared(_) => 0,
            MakerPolicies::Independent(_) => i,
        }
    }

    fn all(&self) -> Vec<&GaussianPolicy> {
        match self {
            MakerPolicies::Shared(p) => vec![p],
            MakerPolicies::Independent(v) => v.iter().collect(),
        }
    }
}

/// One policy per learning role. As a [`Controller`] it plays mean actions.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySet {
    pub informed: Option<GaussianPolicy>,
    pub liquidity: Option<GaussianPolicy>,
    pub makers: MakerPolicies,
}

fn mean_action(p: Option<&GaussianPolicy>, obs: &AgentObservation) -> f64 {
    p.and_then(|p| p.act_deterministic(&obs.to_vec()).ok()).unwrap_or(f64::NAN)
}

impl Controller for PolicySet {
    fn informed(&mut self, obs: &AgentObservation) -> f64 {
        mean_action(self.informed.as_ref(), obs)
    }
    fn liquidity(&mut self, obs: &AgentObservation) -> f64 {
        mean_action(self.liquidity.as_ref(), obs)
    }
    fn maker(&mut self, index: usize, obs: &AgentObservation) -> f64 {
        mean_action(Some(self.makers.get(index)), obs)
    }
}

impl PolicySet {
    /// Fresh policies for every role present in the game.
    pub fn initial(game: &GameConfig, ppo: &PpoConfig) -> Self {
        let dim = game.obs_dim();
        let make = |role: Role, stream: u64| {
            let mut rng = learner_rng(ppo.seed, stream);
            let mut p = GaussianPolicy::new(dim, 1, &ppo.hidden, ppo.init_log_std, &mut rng);
            p.transform = action_transform(role, game);
            p
        };
        let makers = if ppo.shared_makers {
            MakerPolicies::Shared(make(Role::Maker, 2))
        } else {
            MakerPolicies::Independent((0..game.num_market_makers).map(|i| make(Role::Maker, 2 + i as u64)).collect())
        };
        Self {
            informed: game.variant.has_informed().then(|| make(Role::Informed, 0)),
            liquidity: game.variant.has_liquidity().then(|| make(Role::Liquidity, 1)),
            makers,
        }
    }

    /// Writes one checkpoint file per policy into `dir`.
    pub fn save_dir(&self, dir: &Path) -> Result<(), PpoError> {
        std::fs::create_dir_all(dir).map_err(|e| PpoError::Io(format!("{}: {e}", dir.display())))?;
        if let Some(p) = &self.informed {
            p.save(&dir.join("informed.json"))?;
        }
        if let Some(p) = &self.liquidity {
            p.save(&dir.join("liquidity.json"))?;
        }
        match &self.makers {
            MakerPolicies::Shared(p) => p.save(&dir.join("maker.json"))?,
            MakerPolicies::Independent(v) => {
                for (i, p) in v.iter().enumerate() {
                    p.save(&dir.join(format!("maker_{i}.json")))?;
                }
            }
        }
        Ok(())
    }

    /// Loads the files written by [`PolicySet::save_dir`] for a game with
    /// `num_makers` makers.
    pub fn load_dir(dir: &Path, num_makers: usize) -> Result<Self, PpoError> {
        let opt = |name: &str| -> Result<Option<GaussianPolicy>, PpoError> {
            let path = dir.join(name);
            if path.exists() {
                GaussianPolicy::load(&path).map(Some)
            } else {
                Ok(None)
            }
        };
        let makers = match opt("maker.json")? {
            Some(p) => MakerPolicies::Shared(p),
            None => {
                let v = (0..num_makers)
                    .map(|i| GaussianPolicy::load(&dir.join(format!("maker_{i}.json"))))
                    .collect::<Result<Vec<_>, _>>()?;
                MakerPolicies::Independent(v)
            }
        };
        Ok(Self {
            informed: opt("informed.json")?,
            liquidity: opt("liquidity.json")?,
            makers,
        })
    }

    pub fn check_dims(&self, game: &GameConfig) -> Result<(), PpoError> {
        let dim = game.obs_dim();
        let all = self.informed.iter().chain(self.liquidity.iter()).chain(self.makers.all());
        for p in all {
            if p.obs_dim() != dim {
                return Err(PpoError::DimensionMismatch { expected: dim, got: p.obs_dim() });
            }
        }
        if let MakerPolicies::Independent(v) = &self.makers {
            if v.len() != game.num_market_makers {
                return Err(PpoError::InvalidConfig(format!(
                    "{} maker policies for {} makers",
                    v.len(),
                    game.num_market_makers
                )));
            }
        }
        if game.variant.has_informed() != self.informed.is_some() || game.variant.has_liquidity() != self.liquidity.is_some() {
            return Err(PpoError::InvalidConfig("policy roles do not match the game variant".into()));
        }
        Ok(())
    }
}

/// Mean episode reward (dollars) per learning role after each update.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LearningCurve {
    pub roles: Vec<Role>,
    /// `(update, episodes so far, mean episode reward per role)`.
    pub rows: Vec<(usize, usize, Vec<f64>)>,
}

impl LearningCurve {
    pub fn write_csv<W: Write>(&self, mut out: W, manifest_hash: &str) -> Result<(), csv::Error> {
        writeln!(out, "# manifest: {manifest_hash}")?;
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["update".to_string(), "episodes".to_string()];
        header.extend(self.roles.iter().map(|r| format!("mean_reward_{}", r.label())));
        w.write_record(&header)?;
        for (u, e, vals) in &self.rows {
            let mut rec = vec![u.to_string(), e.to_string()];
            rec.extend(vals.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingOutcome {
    pub policies: PolicySet,
    pub curve: LearningCurve,
}

/// Optimiser and statistics owned by one learning policy.
struct Learner {
    adam: Adam,
    scaler: RewardScaler,
    rng: ChaCha8Rng,
    trajectories: Vec<Trajectory>,
}

#[derive(Default)]
struct Trajectory {
    obs: Vec<Vec<f64>>,
    actions: Vec<Vec<f64>>,
    log_probs: Vec<f64>,
    values: Vec<f64>,
    rewards: Vec<f64>,
}

impl Learner {
    fn new(policy: &GaussianPolicy, ppo: &PpoConfig, stream: u64) -> Self {
        Self {
            adam: Adam::new(policy.num_params(), ppo.learning_rate),
            scaler: RewardScaler::default(),
            rng: learner_rng(ppo.seed, 1000 + stream),
            trajectories: Vec::new(),
        }
    }

    fn update(&mut self, policy: &mut GaussianPolicy, ppo: &PpoConfig) -> Result<(), PpoError> {
        let trajs = std::mem::take(&mut self.trajectories);
        if trajs.is_empty() {
            return Ok(());
        }
        let scale = if ppo.scale_rewards {
            let rewards: Vec<Vec<f64>> = trajs.iter().map(|t| t.rewards.clone()).collect();
            self.scaler.update(&rewards, ppo.gamma)
        } else {
            1.0
        };
        let mut buf = RolloutBuffer::default();
        for t in trajs {
            let n = t.rewards.len();
            for (k, (((o, a), lp), (v, r))) in t
                .obs
                .into_iter()
                .zip(t.actions)
                .zip(t.log_probs)
                .zip(t.values.into_iter().zip(t.rewards))
                .enumerate()
            {
                buf.push(o, a, lp, r / scale, v, k + 1 == n);
            }
        }
        buf.compute_advantages(ppo.gamma, ppo.gae_lambda)?;
        ppo_update(policy, &mut self.adam, &buf, ppo, &mut self.rng)?;
        Ok(())
    }
}

/// Samples an action for a learning policy and stages it in `traj`.
fn act_learning(policy: &mut GaussianPolicy, rng: &mut ChaCha8Rng, traj: &mut Trajectory, raw: &[f64]) -> Result<f64, PpoError> {
    policy.obs_norm.observe(raw);
    let obs = policy.normalize(raw)?;
    let out = policy.forward(&obs)?;
    let a = policy.sample(&out, rng);
    traj.log_probs.push(gaussian_log_prob(&out.mean, &out.log_std, &a));
    traj.values.push(out.value);
    let env_action = policy.transform.apply(a[0]);
    traj.obs.push(obs);
    traj.actions.push(a);
    Ok(env_action)
}

fn validate(game: &GameConfig, ppo: &PpoConfig) -> Result<(), PpoError> {
    game.validate().map_err(|e| PpoError::InvalidConfig(e.to_string()))?;
    ppo.validate()
}

/// Trains every role with its own PPO learner for `ppo.total_episodes`
/// episodes. With `checkpoint_dir` set, the final policies are saved there.
pub fn train_marl(game: &GameConfig, ppo: &PpoConfig, checkpoint_dir: Option<&Path>) -> Result<TrainingOutcome, PpoError> {
    validate(game, ppo)?;
    let mut policies = PolicySet::initial(game, ppo);
    let roles = [Role::Informed, Role::Liquidity, Role::Maker];
    let curve = run_training(game, ppo, &mut policies, &roles)?;
    if let Some(dir) = checkpoint_dir {
        policies.save_dir(dir)?;
    }
    Ok(TrainingOutcome { policies, curve })
}

/// Continues training one role while every other role plays its current
/// mean action without learning.
pub fn retrain_single(policies: &PolicySet, role: Role, game: &GameConfig, ppo: &PpoConfig) -> Result<TrainingOutcome, PpoError> {
    validate(game, ppo)?;
    policies.check_dims(game)?;
    let mut policies = policies.clone();
    let curve = run_training(game, ppo, &mut policies, &[role])?;
    Ok(TrainingOutcome { policies, curve })
}

fn run_training(game: &GameConfig, ppo: &PpoConfig, set: &mut PolicySet, learning: &[Role]) -> Result<LearningCurve, PpoError> {
    let learns = |r: Role| learning.contains(&r);
    let mut env = MarketGame::new(game.clone())?;
    let m = game.num_market_makers;
    let has_it = set.informed.is_some() && learns(Role::Informed);
    let has_lt = set.liquidity.is_some() && learns(Role::Liquidity);
    let makers_learn = learns(Role::Maker);

    let mut it_learner = set.informed.as_ref().filter(|_| has_it).map(|p| Learner::new(p, ppo, 0));
    let mut lt_learner = set.liquidity.as_ref().filter(|_| has_lt).map(|p| Learner::new(p, ppo, 1));
    let mut mm_learners: Vec<Learner> = if makers_learn {
        set.makers.all().iter().enumerate().map(|(i, p)| Learner::new(p, ppo, 2 + i as u64)).collect()
    } else {
        Vec::new()
    };

    let mut curve = LearningCurve {
        roles: [Role::Informed, Role::Liquidity, Role::Maker]
            .into_iter()
            .filter(|&r| match r {
                Role::Informed => has_it,
                Role::Liquidity => has_lt,
                Role::Maker => makers_learn,
            })
            .collect(),
        rows: Vec::new(),
    };

    let mut done_episodes = 0;
    let mut update = 0;
    while done_episodes < ppo.total_episodes {
        let batch = ppo.episodes_per_update.min(ppo.total_episodes - done_episodes);
        let (mut sum_it, mut sum_lt, mut sum_mm) = (0.0, 0.0, 0.0);
        for _ in 0..batch {
            let mut obs = env.reset(ResetMode::TrainRandom);
            let mut t_it = Trajectory::default();
            let mut t_lt = Trajectory::default();
            let mut t_mm: Vec<Trajectory> = (0..m).map(|_| Trajectory::default()).collect();
            loop {
                let informed = match (&obs.informed, set.informed.as_mut(), it_learner.as_mut()) {
                    (Some(o), Some(p), Some(l)) => Some(act_learning(p, &mut l.rng, &mut t_it, &o.to_vec())?),
                    (Some(o), Some(p), None) => Some(p.act_deterministic(&o.to_vec())?),
                    _ => None,
                };
                let liquidity = match (&obs.liquidity, set.liquidity.as_mut(), lt_learner.as_mut()) {
                    (Some(o), Some(p), Some(l)) => Some(act_learning(p, &mut l.rng, &mut t_lt, &o.to_vec())?),
                    (Some(o), Some(p), None) => Some(p.act_deterministic(&o.to_vec())?),
                    _ => None,
                };
                let maker_obs = env.submit_orders(TraderActions { informed, liquidity })?;
                let mut quotes = Vec::with_capacity(m);
                for (i, o) in maker_obs.iter().enumerate() {
                    let slot = set.makers.slot(i);
                    let q = if makers_learn {
                        let p = match &mut set.makers {
                            MakerPolicies::Shared(p) => p,
                            MakerPolicies::Independent(v) => &mut v[slot],
                        };
                        act_learning(p, &mut mm_learners[slot].rng, &mut t_mm[i], &o.to_vec())?
                    } else {
                        set.makers.get(i).act_deterministic(&o.to_vec())?
                    };
                    quotes.push(q);
                }
                let out = env.clear(&quotes)?;
                if let Some(r) = out.rewards.informed {
                    sum_it += r;
                    if has_it {
                        t_it.rewards.push(r);
                    }
                }
                if let Some(r) = out.rewards.liquidity {
                    sum_lt += r;
                    if has_lt {
                        t_lt.rewards.push(r);
                    }
                }
                for (i, r) in out.rewards.makers.iter().enumerate() {
                    sum_mm += r / m as f64;
                    if makers_learn {
                        t_mm[i].rewards.push(*r);
                    }
                }
                match out.next {
                    Some(n) => obs = n,
                    None => break,
                }
            }
            if let Some(l) = it_learner.as_mut() {
                l.trajectories.push(t_it);
            }
            if let Some(l) = lt_learner.as_mut() {
                l.trajectories.push(t_lt);
            }
            if makers_learn {
                for (i, t) in t_mm.into_iter().enumerate() {
                    let slot = set.makers.slot(i);
                    mm_learners[slot].trajectories.push(t);
                }
            }
        }
        if let (Some(l), Some(p)) = (it_learner.as_mut(), set.informed.as_mut()) {
            l.update(p, ppo)?;
        }
        if let (Some(l), Some(p)) = (lt_learner.as_mut(), set.liquidity.as_mut()) {
            l.update(p, ppo)?;
        }
        for (slot, l) in mm_learners.iter_mut().enumerate() {
            let p = match &mut set.makers {
                MakerPolicies::Shared(p) => p,
                MakerPolicies::Independent(v) => &mut v[slot],
            };
            l.update(p, ppo)?;
        }
        done_episodes += batch;
        update += 1;
        let b = batch as f64;
        let mut vals = Vec::new();
        for r in &curve.roles {
            vals.push(match r {
                Role::Informed => sum_it / b,
                Role::Liquidity => sum_lt / b,
                Role::Maker => sum_mm / b,
            });
        }
        curve.rows.push((update, done_episodes, vals));
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Variant;
    use crate::env::run_episode;

    fn small_game(variant: Variant) -> GameConfig {
        GameConfig {
            variant,
            horizon: 5,
            num_market_makers: 2,
            ..GameConfig::default()
        }
    }

    #[test]
    fn zero_episodes_returns_initial_policies() {
        let game = small_game(Variant::FullGame);
        let ppo = PpoConfig { total_episodes: 0, ..PpoConfig::default() };
        let out = train_marl(&game, &ppo, None).unwrap();
        assert_eq!(out.policies, PolicySet::initial(&game, &ppo));
        assert!(out.curve.rows.is_empty());
    }

    #[test]
    fn training_is_deterministic() {
        let game = small_game(Variant::FullGame);
        let ppo = PpoConfig { total_episodes: 20, hidden: vec![8, 8], ..PpoConfig::default() };
        let a = train_marl(&game, &ppo, None).unwrap();
        let b = train_marl(&game, &ppo, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.curve.rows.len(), 2);
        assert_ne!(a.policies, PolicySet::initial(&game, &ppo));
    }

    #[test]
    fn independent_makers_get_separate_policies() {
        let game = small_game(Variant::KyleOnly);
        let ppo = PpoConfig { total_episodes: 10, hidden: vec![8], shared_makers: false, ..PpoConfig::default() };
        let out = train_marl(&game, &ppo, None).unwrap();
        match &out.policies.makers {
            MakerPolicies::Independent(v) => {
                assert_eq!(v.len(), 2);
                assert_ne!(v[0], v[1]);
            }
            MakerPolicies::Shared(_) => panic!("expected independent makers"),
        }
    }

    #[test]
    fn retrain_single_only_moves_one_role() {
        let game = small_game(Variant::FullGame);
        let ppo = PpoConfig { total_episodes: 10, hidden: vec![8], ..PpoConfig::default() };
        let base = train_marl(&game, &ppo, None).unwrap().policies;
        let out = retrain_single(&base, Role::Liquidity, &game, &ppo).unwrap();
        assert_eq!(out.policies.informed, base.informed);
        assert_eq!(out.policies.makers, base.makers);
        assert_ne!(out.policies.liquidity, base.liquidity);
        assert_eq!(out.curve.roles, vec![Role::Liquidity]);
    }

    #[test]
    fn saved_policies_replay_identically() {
        let game = small_game(Variant::FullGame);
        let ppo = PpoConfig { total_episodes: 10, hidden: vec![8], seed: 4, ..PpoConfig::default() };
        let dir = tempfile::tempdir().unwrap();
        let out = train_marl(&game, &ppo, Some(dir.path())).unwrap();
        let mut loaded = PolicySet::load_dir(dir.path(), 2).unwrap();
        assert_eq!(loaded, out.policies);
        let mut original = out.policies.clone();
        let eval = GameConfig { seed: 99, ..game };
        let a = run_episode(&mut MarketGame::new(eval.clone()).unwrap(), &mut original, ResetMode::EvalUp).unwrap();
        let b = run_episode(&mut MarketGame::new(eval).unwrap(), &mut loaded, ResetMode::EvalUp).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn curve_csv() {
        let curve = LearningCurve { roles: vec![Role::Informed, Role::Maker], rows: vec![(1, 10, vec![1.5, -0.25])] };
        let mut buf = Vec::new();
        curve.write_csv(&mut buf, "h").unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "# manifest: h\nupdate,episodes,mean_reward_informed,mean_reward_makers\n1,10,1.5,-0.25\n"
        );
    }

    #[test]
    fn nonlinear_transforms() {
        let game = GameConfig { policy_param: PolicyParam::Nonlinear, ..small_game(Variant::FullGame) };
        assert_eq!(action_transform(Role::Maker, &game), ActionTransform { offset: 1000.0, scale: 100.0 });
        assert_eq!(action_transform(Role::Informed, &game).scale, game.noise_std());
        assert_eq!(action_transform(Role::Liquidity, &game), ActionTransform::default());
    }
}
