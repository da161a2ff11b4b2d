//! Training loop: rollout collection with per-episode preferences, GAE,
//! critic-then-actor minibatch updates, normalization state, logging and
//! checkpoints.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::advantage::{compute_gae, AdvantageMatrix};
use crate::diff::{clip_global_norm, Adam, Checkpoint, Module, Tape, Tensor};
use crate::error::{Error, Result};
use crate::losses::{actor_surrogate_loss, critic_loss, diversity_loss, preference_gaps, surrogate_input, LossBundle, WeightingMode};
use crate::metrics::PreferencePolicy;
use crate::momdp::{Action, ActionSpace, EnvConfig, EnvSpec, Environment};
use crate::policy::{decode_action, encode_action, evaluate, Actor, MultiHeadCritic};
use crate::preference::{perturb_distractor, sample_uniform, PreferenceVector};

/// Clip range applied to normalized observations and scaled rewards.
pub const NORM_CLIP: f64 = 10.0;
const NORM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub env: EnvConfig,
    pub total_steps: usize,
    pub rollout_len: usize,
    pub n_envs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub minibatches: usize,
    pub epochs: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub lambda_div: f64,
    pub alpha: f64,
    pub sigma_distractor: f64,
    pub weighting: WeightingMode,
    pub diversity: bool,
    pub normalize_advantages: bool,
    pub normalize_observations: bool,
    pub normalize_rewards: bool,
    pub max_grad_norm: f64,
    pub hidden: Vec<usize>,
    pub log_std_init: f64,
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::by_name("treasure_grid").expect("known env"),
            total_steps: 500_000,
            rollout_len: 128,
            n_envs: 4,
            lr: 3e-4,
            batch_size: 512,
            minibatches: 32,
            epochs: 10,
            gamma: 0.995,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            entropy_coef: 0.0,
            value_coef: 0.5,
            lambda_div: 0.01,
            alpha: 1.0,
            sigma_distractor: 0.1,
            weighting: WeightingMode::Lsw,
            diversity: true,
            normalize_advantages: true,
            normalize_observations: true,
            normalize_rewards: true,
            max_grad_norm: 0.5,
            hidden: vec![64, 64],
            log_std_init: 0.0,
            checkpoint_every: 50,
            seed: 0,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got {v:?}"))),
    }
}

impl TrainConfig {
    pub fn for_env(name: &str) -> Result<Self> {
        Ok(Self {
            env: EnvConfig::by_name(name)?,
            ..Self::default()
        })
    }

    /// Applies one `key=value` setting. `env` switches environment (resetting
    /// its parameters); `env.<param>` sets an environment parameter.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        if let Some(param) = key.strip_prefix("env.") {
            return self.env.set_param(param, value);
        }
        match key {
            "env" => self.env = EnvConfig::by_name(value.trim())?,
            "total_steps" => self.total_steps = parse(key, value)?,
            "rollout_len" => self.rollout_len = parse(key, value)?,
            "n_envs" => self.n_envs = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "minibatches" => self.minibatches = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "gae_lambda" => self.gae_lambda = parse(key, value)?,
            "clip_eps" => self.clip_eps = parse(key, value)?,
            "entropy_coef" => self.entropy_coef = parse(key, value)?,
            "value_coef" => self.value_coef = parse(key, value)?,
            "lambda_div" => self.lambda_div = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "sigma_distractor" => self.sigma_distractor = parse(key, value)?,
            "weighting" => self.weighting = value.parse()?,
            "diversity" => self.diversity = parse_bool(key, value)?,
            "normalize_advantages" => self.normalize_advantages = parse_bool(key, value)?,
            "normalize_observations" => self.normalize_observations = parse_bool(key, value)?,
            "normalize_rewards" => self.normalize_rewards = parse_bool(key, value)?,
            "max_grad_norm" => self.max_grad_norm = parse(key, value)?,
            "hidden" => {
                self.hidden = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| parse(key, s))
                    .collect::<Result<_>>()?
            }
            "log_std_init" => self.log_std_init = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Every field as `(key, value)` in canonical order; feeding these back
    /// through [`TrainConfig::set`] reproduces the config exactly.
    pub fn entries(&self) -> Vec<(String, String)> {
        let mut e: Vec<(String, String)> = vec![("env".into(), self.env.name().into())];
        for (k, v) in self.env.params() {
            e.push((format!("env.{k}"), v));
        }
        let f = |v: f64| format!("{v:?}");
        let hidden: Vec<String> = self.hidden.iter().map(|h| h.to_string()).collect();
        e.extend([
            ("total_steps".into(), self.total_steps.to_string()),
            ("rollout_len".into(), self.rollout_len.to_string()),
            ("n_envs".into(), self.n_envs.to_string()),
            ("lr".into(), f(self.lr)),
            ("batch_size".into(), self.batch_size.to_string()),
            ("minibatches".into(), self.minibatches.to_string()),
            ("epochs".into(), self.epochs.to_string()),
            ("gamma".into(), f(self.gamma)),
            ("gae_lambda".into(), f(self.gae_lambda)),
            ("clip_eps".into(), f(self.clip_eps)),
            ("entropy_coef".into(), f(self.entropy_coef)),
            ("value_coef".into(), f(self.value_coef)),
            ("lambda_div".into(), f(self.lambda_div)),
            ("alpha".into(), f(self.alpha)),
            ("sigma_distractor".into(), f(self.sigma_distractor)),
            ("weighting".into(), self.weighting.to_string()),
            ("diversity".into(), self.diversity.to_string()),
            ("normalize_advantages".into(), self.normalize_advantages.to_string()),
            ("normalize_observations".into(), self.normalize_observations.to_string()),
            ("normalize_rewards".into(), self.normalize_rewards.to_string()),
            ("max_grad_norm".into(), f(self.max_grad_norm)),
            ("hidden".into(), hidden.join(",")),
            ("log_std_init".into(), f(self.log_std_init)),
            ("checkpoint_every".into(), self.checkpoint_every.to_string()),
            ("seed".into(), self.seed.to_string()),
        ]);
        e
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    /// Parses `key=value` lines; blank lines and `#` comments are skipped.
    /// Starts from defaults, and an `env=` line resets environment parameters,
    /// so it should precede any `env.*` line.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_envs == 0 || self.rollout_len == 0 {
            return bad("n_envs and rollout_len must be positive".into());
        }
        if self.batch_size != self.n_envs * self.rollout_len {
            return bad(format!(
                "batch_size {} must equal n_envs * rollout_len = {}",
                self.batch_size,
                self.n_envs * self.rollout_len
            ));
        }
        if self.minibatches == 0 || !self.batch_size.is_multiple_of(self.minibatches) {
            return bad(format!(
                "batch_size {} not divisible by minibatches {}",
                self.batch_size, self.minibatches
            ));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma {} outside (0, 1)", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad(format!("gae_lambda {} outside [0, 1]", self.gae_lambda));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad(format!("clip_eps {} outside (0, 1)", self.clip_eps));
        }
        if !(self.lr > 0.0) || !(self.max_grad_norm > 0.0) {
            return bad("lr and max_grad_norm must be positive".into());
        }
        if self.lambda_div < 0.0 || self.alpha < 0.0 || self.sigma_distractor < 0.0 || self.entropy_coef < 0.0 {
            return bad("lambda_div, alpha, sigma_distractor and entropy_coef must be non-negative".into());
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden widths must be non-empty and positive".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical text form, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn minibatch_size(&self) -> usize {
        self.batch_size / self.minibatches
    }

    pub fn iterations(&self) -> usize {
        self.total_steps.div_ceil(self.batch_size)
    }

    /// Whether the diversity term (and its distractor draws) is active.
    pub fn diversity_active(&self) -> bool {
        self.diversity && self.lambda_div > 0.0
    }
}

/// Running mean and population variance per coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningMeanStd {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: f64,
}

impl RunningMeanStd {
    pub fn new(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
            count: 1e-4,
        }
    }

    /// Merges the statistics of `rows` (parallel-variance formula).
    pub fn update(&mut self, rows: &[&[f64]]) {
        if rows.is_empty() {
            return;
        }
        let n = rows.len() as f64;
        for j in 0..self.mean.len() {
            let bm = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let bv = rows.iter().map(|r| (r[j] - bm).powi(2)).sum::<f64>() / n;
            let delta = bm - self.mean[j];
            let tot = self.count + n;
            let m2 = self.var[j] * self.count + bv * n + delta * delta * self.count * n / tot;
            self.mean[j] += delta * n / tot;
            self.var[j] = (m2 / tot).max(0.0);
        }
        self.count += n;
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.var))
            .map(|(v, (m, s))| ((v - m) / (s + NORM_EPS).sqrt()).clamp(-NORM_CLIP, NORM_CLIP))
            .collect()
    }

    fn to_tensor(&self) -> Tensor {
        let mut data = self.mean.clone();
        data.extend_from_slice(&self.var);
        data.push(self.count);
        Tensor::new(1, data.len(), data).expect("length matches")
    }

    fn from_tensor(t: &Tensor) -> Result<Self> {
        let n = t.len();
        if n % 2 != 1 {
            return Err(Error::Checkpoint("malformed normalizer tensor".into()));
        }
        let d = n / 2;
        let v = t.data();
        Ok(Self {
            mean: v[..d].to_vec(),
            var: v[d..2 * d].to_vec(),
            count: v[2 * d],
        })
    }
}

/// Observation statistics plus per-objective discounted-return scaling.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizerState {
    pub obs: Option<RunningMeanStd>,
    pub ret: Option<RunningMeanStd>,
}

impl NormalizerState {
    pub fn new(obs_dim: usize, objectives: usize, cfg: &TrainConfig) -> Self {
        Self {
            obs: cfg.normalize_observations.then(|| RunningMeanStd::new(obs_dim)),
            ret: cfg.normalize_rewards.then(|| RunningMeanStd::new(objectives)),
        }
    }

    /// Frozen observation transform.
    pub fn observe(&self, raw: &[f64]) -> Vec<f64> {
        match &self.obs {
            Some(s) => s.normalize(raw),
            None => raw.to_vec(),
        }
    }

    /// Divides each reward component by the running std of its discounted
    /// return (no centering), then clips.
    pub fn scale_reward(&self, r: &[f64]) -> Vec<f64> {
        match &self.ret {
            Some(s) => r
                .iter()
                .zip(&s.var)
                .map(|(x, v)| (x / (v + NORM_EPS).sqrt()).clamp(-NORM_CLIP, NORM_CLIP))
                .collect(),
            None => r.to_vec(),
        }
    }
}

/// Actor, critic, their optimizers and the normalizer.
#[derive(Clone, Debug)]
pub struct Agent {
    pub actor: Actor,
    pub critic: MultiHeadCritic,
    pub actor_opt: Adam,
    pub critic_opt: Adam,
    pub normalizer: NormalizerState,
}

impl Agent {
    pub fn new(spec: &EnvSpec, cfg: &TrainConfig, rng: &mut impl Rng) -> Result<Self> {
        Self::with_dims(spec.obs_dim, spec.objectives, spec.action.clone(), cfg, rng)
    }

    /// Agent for arbitrary dimensions, including `d = 1`.
    pub fn with_dims(
        obs_dim: usize,
        objectives: usize,
        action: ActionSpace,
        cfg: &TrainConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let actor = Actor::new(obs_dim, objectives, action, &cfg.hidden, cfg.log_std_init, rng)?;
        let critic = MultiHeadCritic::new(obs_dim, objectives, &cfg.hidden, rng)?;
        Ok(Self {
            actor_opt: Adam::for_module(cfg.lr, &actor),
            critic_opt: Adam::for_module(cfg.lr, &critic),
            normalizer: NormalizerState::new(obs_dim, objectives, cfg),
            actor,
            critic,
        })
    }

    pub fn objectives(&self) -> usize {
        self.critic.objectives
    }

    /// Inference-only view with frozen normalization.
    pub fn policy(&self) -> PolicySnapshot {
        PolicySnapshot {
            actor: self.actor.clone(),
            obs_norm: self.normalizer.obs.clone(),
        }
    }
}

/// Freshly initialized agent for `cfg.env`, seeded by `cfg.seed`.
pub fn init_agent(cfg: &TrainConfig) -> Result<Agent> {
    let env = cfg.env.build()?;
    Agent::new(env.spec(), cfg, &mut ChaCha8Rng::seed_from_u64(cfg.seed))
}

/// Frozen policy used for evaluation and serving.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicySnapshot {
    pub actor: Actor,
    pub obs_norm: Option<RunningMeanStd>,
}

impl PolicySnapshot {
    pub fn observe(&self, raw: &[f64]) -> Vec<f64> {
        match &self.obs_norm {
            Some(s) => s.normalize(raw),
            None => raw.to_vec(),
        }
    }

    /// Checks that this policy can drive `spec`.
    pub fn check_compatible(&self, spec: &EnvSpec) -> Result<()> {
        if self.actor.obs_dim != spec.obs_dim
            || self.actor.objectives != spec.objectives
            || self.actor.action_space != spec.action
        {
            return Err(Error::Checkpoint(format!(
                "checkpoint expects obs_dim={} objectives={} action={:?}, environment {} has obs_dim={} objectives={} action={:?}",
                self.actor.obs_dim,
                self.actor.objectives,
                self.actor.action_space,
                spec.name,
                spec.obs_dim,
                spec.objectives,
                spec.action
            )));
        }
        Ok(())
    }
}

impl PreferencePolicy for PolicySnapshot {
    fn greedy_action(&self, obs: &[f64], pref: &[f64]) -> Result<Action> {
        self.actor.act_greedy(&self.observe(obs), pref)
    }
}

fn push_module(ckpt: &mut Checkpoint, prefix: &str, m: &impl Module) -> Result<()> {
    for (name, t) in m.named_parameters() {
        ckpt.push_tensor(&format!("{prefix}.{name}"), t)?;
    }
    Ok(())
}

fn load_module(ckpt: &Checkpoint, prefix: &str, m: &mut impl Module) -> Result<()> {
    let names: Vec<String> = m.named_parameters().into_iter().map(|(n, _)| n).collect();
    for (name, slot) in names.iter().zip(m.parameters_mut()) {
        let t = ckpt.tensor(&format!("{prefix}.{name}"))?;
        if t.shape() != slot.shape() {
            return Err(Error::Checkpoint(format!(
                "{prefix}.{name}: shape {:?}, expected {:?}",
                t.shape(),
                slot.shape()
            )));
        }
        *slot = t.clone();
    }
    Ok(())
}

/// Serializes parameters, normalizer state and the full config.
pub fn save_checkpoint(agent: &Agent, cfg: &TrainConfig, iteration: usize, steps: usize) -> Result<Checkpoint> {
    let mut c = Checkpoint::new();
    c.set_header("iteration", iteration)?;
    c.set_header("steps", steps)?;
    c.set_header("config_hash", cfg.hash())?;
    c.set_header("obs_dim", agent.actor.obs_dim)?;
    c.set_header("objectives", agent.objectives())?;
    for (k, v) in cfg.entries() {
        c.set_header(&format!("config.{k}"), if v.is_empty() { "-".into() } else { v })?;
    }
    push_module(&mut c, "actor", &agent.actor)?;
    push_module(&mut c, "critic", &agent.critic)?;
    if let Some(s) = &agent.normalizer.obs {
        c.push_tensor("norm.obs", &s.to_tensor())?;
    }
    if let Some(s) = &agent.normalizer.ret {
        c.push_tensor("norm.ret", &s.to_tensor())?;
    }
    Ok(c)
}

/// Recovers the training config stored in a checkpoint.
pub fn checkpoint_config(ckpt: &Checkpoint) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::for_env(ckpt.require_header("config.env")?)?;
    let keys: Vec<String> = TrainConfig::default().entries().into_iter().map(|(k, _)| k).collect();
    let env_keys: Vec<String> = cfg.env.params().into_iter().map(|(k, _)| format!("env.{k}")).collect();
    for key in keys.iter().chain(&env_keys) {
        if key == "env" || (key.starts_with("env.") && !env_keys.contains(key)) {
            continue;
        }
        let v = ckpt.require_header(&format!("config.{key}"))?;
        cfg.set(key, if v == "-" { "" } else { v })?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Rebuilds a full agent (fresh optimizer state) from a checkpoint.
pub fn load_agent(ckpt: &Checkpoint) -> Result<(Agent, TrainConfig)> {
    let cfg = checkpoint_config(ckpt)?;
    let env = cfg.env.build()?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut agent = Agent::new(env.spec(), &cfg, &mut rng)?;
    load_module(ckpt, "actor", &mut agent.actor)?;
    load_module(ckpt, "critic", &mut agent.critic)?;
    if let Some(s) = &mut agent.normalizer.obs {
        *s = RunningMeanStd::from_tensor(ckpt.tensor("norm.obs")?)?;
    }
    if let Some(s) = &mut agent.normalizer.ret {
        *s = RunningMeanStd::from_tensor(ckpt.tensor("norm.ret")?)?;
    }
    Ok((agent, cfg))
}

pub fn load_policy(ckpt: &Checkpoint) -> Result<(PolicySnapshot, TrainConfig)> {
    let (agent, cfg) = load_agent(ckpt)?;
    Ok((agent.policy(), cfg))
}

/// Transitions of one iteration, stored env-major: row `e * T + t`.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutBuffer {
    pub n_envs: usize,
    pub rollout_len: usize,
    /// Normalized observations fed to the networks.
    pub obs: Tensor,
    /// Encoded actions as sampled (before any environment clamping).
    pub actions: Tensor,
    /// Scaled rewards used for learning.
    pub rewards: Tensor,
    pub raw_rewards: Tensor,
    pub prefs: Tensor,
    pub log_probs: Vec<f64>,
    pub dones: Vec<bool>,
    pub values: Tensor,
    /// Critic value of the state after each env's last step.
    pub bootstrap: Vec<Vec<f64>>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_probs.is_empty()
    }

    /// Per-objective GAE over each env's contiguous segment.
    pub fn advantages(&self, gamma: f64, lambda: f64) -> Result<AdvantageMatrix> {
        let d = self.rewards.cols();
        let t_len = self.rollout_len;
        let mut adv = Vec::with_capacity(self.len() * d);
        let mut ret = Vec::with_capacity(self.len() * d);
        for e in 0..self.n_envs {
            let rows = e * t_len..(e + 1) * t_len;
            let seg = |t: &Tensor| -> Result<Tensor> {
                Tensor::new(t_len, d, t.data()[rows.start * d..rows.end * d].to_vec())
            };
            let m = compute_gae(
                &seg(&self.rewards)?,
                &seg(&self.values)?,
                &self.bootstrap[e],
                &self.dones[rows.clone()],
                gamma,
                lambda,
            )?;
            adv.extend_from_slice(m.advantages.data());
            ret.extend_from_slice(m.returns.data());
        }
        Ok(AdvantageMatrix {
            advantages: Tensor::new(self.len(), d, adv)?,
            returns: Tensor::new(self.len(), d, ret)?,
            stats: None,
        })
    }
}

/// One environment instance with its episode state.
pub struct EnvSlot {
    pub env: Box<dyn Environment>,
    pub obs: Vec<f64>,
    pub pref: PreferenceVector,
    /// Discounted running return for reward scaling.
    ret_acc: Vec<f64>,
    /// Undiscounted raw return of the current episode.
    episode_return: Vec<f64>,
}

impl EnvSlot {
    pub fn new(mut env: Box<dyn Environment>, rng: &mut impl Rng) -> Self {
        let d = env.spec().objectives;
        let obs = env.reset(rng.random());
        Self {
            env,
            obs,
            pref: sample_uniform(rng, d),
            ret_acc: vec![0.0; d],
            episode_return: vec![0.0; d],
        }
    }
}

/// Summary of completed episodes during one collection pass.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EpisodeStats {
    pub completed: usize,
    pub mean_return: Vec<f64>,
}

fn rows_tensor(rows: &[Vec<f64>]) -> Result<Tensor> {
    Tensor::from_rows(rows)
}

/// Steps every env `rollout_len` times. Preferences are resampled exactly
/// when an episode ends; normalizer statistics are updated as data arrives.
pub fn collect_rollouts(
    agent: &mut Agent,
    slots: &mut [EnvSlot],
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<(RolloutBuffer, EpisodeStats)> {
    let n_envs = slots.len();
    let t_len = cfg.rollout_len;
    let n = n_envs * t_len;
    let d = agent.objectives();
    let obs_dim = agent.actor.obs_dim;
    let act_cols = match agent.actor.action_space {
        ActionSpace::Discrete { .. } => 1,
        ActionSpace::Continuous { dim, .. } => dim,
    };
    let mut obs = Tensor::zeros(n, obs_dim);
    let mut actions = Tensor::zeros(n, act_cols);
    let mut rewards = Tensor::zeros(n, d);
    let mut raw_rewards = Tensor::zeros(n, d);
    let mut prefs = Tensor::zeros(n, d);
    let mut values = Tensor::zeros(n, d);
    let mut log_probs = vec![0.0; n];
    let mut dones = vec![false; n];
    let mut stats = EpisodeStats {
        completed: 0,
        mean_return: vec![0.0; d],
    };

    for t in 0..t_len {
        if let Some(s) = &mut agent.normalizer.obs {
            let raw: Vec<&[f64]> = slots.iter().map(|s| s.obs.as_slice()).collect();
            s.update(&raw);
        }
        let obs_rows: Vec<Vec<f64>> = slots.iter().map(|s| agent.normalizer.observe(&s.obs)).collect();
        let pref_rows: Vec<Vec<f64>> = slots.iter().map(|s| s.pref.as_slice().to_vec()).collect();
        let obs_t = rows_tensor(&obs_rows)?;
        let pref_t = rows_tensor(&pref_rows)?;
        let dists = agent.actor.distributions(&obs_t, &pref_t)?;
        let vals = agent.critic.values(&obs_t, &pref_t)?;

        let mut raw_r = Vec::with_capacity(n_envs);
        let mut step_done = Vec::with_capacity(n_envs);
        for (e, slot) in slots.iter_mut().enumerate() {
            let row = e * t_len + t;
            let a = dists[e].sample(rng);
            log_probs[row] = dists[e].log_prob(&a)?;
            let step = slot.env.step(&a)?;
            if step.reward.len() != d {
                return Err(Error::Env("reward length differs from objective count".into()));
            }
            for j in 0..obs_dim {
                obs.set(row, j, obs_rows[e][j]);
            }
            for (j, v) in encode_action(&a).into_iter().enumerate() {
                actions.set(row, j, v);
            }
            for j in 0..d {
                raw_rewards.set(row, j, step.reward[j]);
                prefs.set(row, j, pref_rows[e][j]);
                values.set(row, j, vals.get(e, j));
            }
            dones[row] = step.done;
            for (acc, r) in slot.ret_acc.iter_mut().zip(&step.reward) {
                *acc = *acc * cfg.gamma + r;
            }
            for (acc, r) in slot.episode_return.iter_mut().zip(&step.reward) {
                *acc += r;
            }
            raw_r.push(step.reward);
            step_done.push(step.done);
            slot.obs = step.obs;
        }
        if let Some(s) = &mut agent.normalizer.ret {
            let accs: Vec<&[f64]> = slots.iter().map(|s| s.ret_acc.as_slice()).collect();
            s.update(&accs);
        }
        for (e, slot) in slots.iter_mut().enumerate() {
            let row = e * t_len + t;
            let scaled = agent.normalizer.scale_reward(&raw_r[e]);
            for (j, v) in scaled.into_iter().enumerate() {
                rewards.set(row, j, v);
            }
            if step_done[e] {
                stats.completed += 1;
                for (m, r) in stats.mean_return.iter_mut().zip(&slot.episode_return) {
                    *m += r;
                }
                slot.obs = slot.env.reset(rng.random());
                slot.pref = sample_uniform(rng, d);
                slot.ret_acc.iter_mut().for_each(|v| *v = 0.0);
                slot.episode_return.iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }
    if stats.completed > 0 {
        let c = stats.completed as f64;
        stats.mean_return.iter_mut().for_each(|m| *m /= c);
    }

    let obs_rows: Vec<Vec<f64>> = slots.iter().map(|s| agent.normalizer.observe(&s.obs)).collect();
    let pref_rows: Vec<Vec<f64>> = slots.iter().map(|s| s.pref.as_slice().to_vec()).collect();
    let boot = agent.critic.values(&rows_tensor(&obs_rows)?, &rows_tensor(&pref_rows)?)?;
    let bootstrap = (0..n_envs).map(|e| boot.row_slice(e).to_vec()).collect();

    Ok((
        RolloutBuffer {
            n_envs,
            rollout_len: t_len,
            obs,
            actions,
            rewards,
            raw_rewards,
            prefs,
            log_probs,
            dones,
            values,
            bootstrap,
        },
        stats,
    ))
}

/// Frozen inputs of one optimization phase.
#[derive(Clone, Debug, PartialEq)]
pub struct UpdateBatch {
    pub obs: Tensor,
    pub actions: Tensor,
    pub prefs: Tensor,
    pub old_log_probs: Vec<f64>,
    /// Unnormalized per-objective advantages, `[N, d]`.
    pub advantages: Tensor,
    pub returns: Tensor,
}

impl UpdateBatch {
    pub fn from_buffer(buf: &RolloutBuffer, adv: AdvantageMatrix) -> Self {
        Self {
            obs: buf.obs.clone(),
            actions: buf.actions.clone(),
            prefs: buf.prefs.clone(),
            old_log_probs: buf.log_probs.clone(),
            advantages: adv.advantages,
            returns: adv.returns,
        }
    }

    pub fn len(&self) -> usize {
        self.old_log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.old_log_probs.is_empty()
    }
}

fn gather(t: &Tensor, idx: &[usize]) -> Tensor {
    let c = t.cols();
    let mut data = Vec::with_capacity(idx.len() * c);
    for &i in idx {
        data.extend_from_slice(t.row_slice(i));
    }
    Tensor::new(idx.len(), c, data).expect("gathered shape")
}

fn finite_grads(grads: &[Tensor], what: &str) -> Result<()> {
    if grads.iter().all(|g| g.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} gradient")))
    }
}

/// `E` epochs of shuffled minibatches; each minibatch takes one critic step
/// and then one actor step. Returns per-minibatch diagnostics.
///
/// Fails with [`Error::NonFinite`] on any non-finite loss or gradient;
/// parameters may then be partially updated and must be restored by the
/// caller.
pub fn update(agent: &mut Agent, batch: &UpdateBatch, cfg: &TrainConfig, rng: &mut impl Rng) -> Result<Vec<LossBundle>> {
    let n = batch.len();
    let mb = cfg.minibatch_size().min(n).max(1);
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for idx in order.chunks(mb) {
            history.push(minibatch_step(agent, batch, idx, cfg, rng)?);
        }
    }
    Ok(history)
}

fn minibatch_step(
    agent: &mut Agent,
    batch: &UpdateBatch,
    idx: &[usize],
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<LossBundle> {
    let obs = gather(&batch.obs, idx);
    let prefs = gather(&batch.prefs, idx);
    let actions = gather(&batch.actions, idx);
    let adv = gather(&batch.advantages, idx);
    let returns = gather(&batch.returns, idx);
    let old_lp = Tensor::column(&idx.iter().map(|&i| batch.old_log_probs[i]).collect::<Vec<_>>());
    let mut out = LossBundle::default();

    {
        let tape = Tape::new();
        let bound = agent.critic.bind(&tape);
        let v = MultiHeadCritic::forward(&bound, &tape, &obs, &prefs)?;
        let closs = critic_loss(&tape, v, &returns)?;
        out.critic_loss = tape.scalar(closs);
        if !out.critic_loss.is_finite() {
            return Err(Error::NonFinite("critic loss".into()));
        }
        let loss = tape.scale(closs, cfg.value_coef);
        let g = tape.backward(loss)?;
        let mut grads: Vec<Tensor> = bound.vars().iter().map(|&p| g.get_or_zeros(p, tape.shape(p))).collect();
        finite_grads(&grads, "critic")?;
        out.critic_grad_norm = clip_global_norm(&mut grads, cfg.max_grad_norm);
        agent.critic_opt.step(agent.critic.parameters_mut(), &grads)?;
    }

    let distractors = if cfg.diversity_active() {
        let rows: Vec<Vec<f64>> = (0..prefs.rows())
            .map(|i| {
                let w = PreferenceVector::new(prefs.row_slice(i).to_vec())?;
                Ok(perturb_distractor(&w, cfg.sigma_distractor, rng).as_slice().to_vec())
            })
            .collect::<Result<_>>()?;
        Some(Tensor::from_rows(&rows)?)
    } else {
        None
    };

    let tape = Tape::new();
    let bound = agent.actor.bind(&tape);
    let (lp, ent, dist) = evaluate(&tape, &bound, &obs, &prefs, &actions)?;
    let ratio = tape.exp(tape.sub(lp, tape.constant(old_lp))?);
    let mut loss = actor_surrogate_loss(
        &tape,
        cfg.weighting,
        ratio,
        &adv,
        &prefs,
        cfg.clip_eps,
        cfg.normalize_advantages,
    )?;
    let ent_mean = tape.mean(ent, crate::diff::Axis::All);
    out.entropy = tape.scalar(ent_mean);
    if cfg.entropy_coef > 0.0 {
        loss = tape.sub(loss, tape.scale(ent_mean, cfg.entropy_coef))?;
    }
    if let Some(dw) = &distractors {
        let other = bound.forward(&tape, &obs, dw)?;
        let gaps = preference_gaps(&prefs, dw)?;
        let (dloss, kl) = diversity_loss(&tape, &dist, &other, &gaps, cfg.alpha)?;
        let klv = tape.value(kl);
        out.mean_kl = klv.data().iter().sum::<f64>() / klv.len() as f64;
        out.diversity_residual = klv
            .data()
            .iter()
            .zip(gaps.data())
            .map(|(k, g)| k - cfg.alpha * g)
            .sum::<f64>()
            / klv.len() as f64;
        loss = tape.add(loss, tape.scale(dloss, cfg.lambda_div))?;
    }
    out.actor_loss = tape.scalar(loss);
    if !out.actor_loss.is_finite() {
        return Err(Error::NonFinite("actor loss".into()));
    }

    let rho = tape.value(ratio);
    let input = surrogate_input(cfg.weighting, &adv, &prefs, cfg.normalize_advantages)?;
    out.clip_fraction = (0..input.cols())
        .map(|j| {
            let active = (0..input.rows())
                .filter(|&i| {
                    let (r, a) = (rho.get(i, 0), input.get(i, j));
                    r.clamp(1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * a < r * a
                })
                .count();
            active as f64 / input.rows() as f64
        })
        .collect();

    let g = tape.backward(loss)?;
    let mut grads: Vec<Tensor> = bound.vars().iter().map(|&p| g.get_or_zeros(p, tape.shape(p))).collect();
    finite_grads(&grads, "actor")?;
    out.actor_grad_norm = clip_global_norm(&mut grads, cfg.max_grad_norm);
    agent.actor_opt.step(agent.actor.parameters_mut(), &grads)?;
    Ok(out)
}

/// One structured line of `train.log`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub steps: usize,
    pub updates: usize,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub clip_fraction: Vec<f64>,
    pub mean_kl: f64,
    pub entropy: f64,
    pub diversity_residual: f64,
    pub actor_grad_norm_median: f64,
    pub critic_grad_norm_median: f64,
    pub episodes: usize,
    pub episode_return: Vec<f64>,
    pub clamped_actions: u64,
    pub status: &'static str,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn summarize(iteration: usize, steps: usize, hist: &[LossBundle], ep: &EpisodeStats, clamped: u64) -> IterationLog {
    let n = hist.len().max(1) as f64;
    let mean = |f: &dyn Fn(&LossBundle) -> f64| hist.iter().map(f).sum::<f64>() / n;
    let cols = hist.first().map_or(0, |h| h.clip_fraction.len());
    IterationLog {
        iteration,
        steps,
        updates: hist.len(),
        actor_loss: mean(&|h| h.actor_loss),
        critic_loss: mean(&|h| h.critic_loss),
        clip_fraction: (0..cols).map(|j| mean(&|h| h.clip_fraction[j])).collect(),
        mean_kl: mean(&|h| h.mean_kl),
        entropy: mean(&|h| h.entropy),
        diversity_residual: mean(&|h| h.diversity_residual),
        actor_grad_norm_median: median(hist.iter().map(|h| h.actor_grad_norm).collect()),
        critic_grad_norm_median: median(hist.iter().map(|h| h.critic_grad_norm).collect()),
        episodes: ep.completed,
        episode_return: ep.mean_return.clone(),
        clamped_actions: clamped,
        status: "ok",
    }
}

/// Stateful training run.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub agent: Agent,
    slots: Vec<EnvSlot>,
    rng: ChaCha8Rng,
    iteration: usize,
    steps: usize,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let probe = cfg.env.build()?;
        probe.spec().validate()?;
        let agent = Agent::new(probe.spec(), &cfg, &mut rng)?;
        let slots = (0..cfg.n_envs)
            .map(|_| Ok(EnvSlot::new(cfg.env.build()?, &mut rng)))
            .collect::<Result<_>>()?;
        Ok(Self {
            cfg,
            agent,
            slots,
            rng,
            iteration: 0,
            steps: 0,
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn spec(&self) -> &EnvSpec {
        self.slots[0].env.spec()
    }

    pub fn done(&self) -> bool {
        self.steps >= self.cfg.total_steps
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        save_checkpoint(&self.agent, &self.cfg, self.iteration, self.steps)
    }

    /// Collects one buffer and optimizes on it. On a non-finite loss the
    /// agent is restored to its state before the iteration and the error is
    /// returned.
    pub fn run_iteration(&mut self) -> Result<IterationLog> {
        let snapshot = self.agent.clone();
        match self.iteration_inner() {
            Ok(log) => Ok(log),
            Err(e @ Error::NonFinite(_)) => {
                self.agent = snapshot;
                Err(e)
            }
            Err(e) => Err(e),
        }
    }

    fn iteration_inner(&mut self) -> Result<IterationLog> {
        let clamp_before: u64 = self.slots.iter().map(|s| s.env.clamp_count()).sum();
        let (buf, ep) = collect_rollouts(&mut self.agent, &mut self.slots, &self.cfg, &mut self.rng)?;
        let adv = buf.advantages(self.cfg.gamma, self.cfg.gae_lambda)?;
        let batch = UpdateBatch::from_buffer(&buf, adv);
        let hist = update(&mut self.agent, &batch, &self.cfg, &mut self.rng)?;
        self.iteration += 1;
        self.steps += buf.len();
        let clamp_after: u64 = self.slots.iter().map(|s| s.env.clamp_count()).sum();
        Ok(summarize(self.iteration, self.steps, &hist, &ep, clamp_after - clamp_before))
    }
}

/// Outcome of [`train`].
#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub iterations: usize,
    pub steps: usize,
    /// A non-finite loss aborted the run.
    pub aborted: bool,
    pub checkpoints: Vec<PathBuf>,
}

fn checkpoint_path(out: &Path, iteration: usize) -> PathBuf {
    out.join(format!("ckpt_{iteration}"))
}

/// Full run writing `config.txt`, `train.log` and `ckpt_<iter>` files to `out`.
pub fn train(cfg: &TrainConfig, out: &Path) -> Result<TrainOutcome> {
    train_with(cfg, out, |_| {})
}

/// [`train`] with a callback invoked after every logged iteration.
pub fn train_with(cfg: &TrainConfig, out: &Path, mut on_iter: impl FnMut(&IterationLog)) -> Result<TrainOutcome> {
    fs::create_dir_all(out)?;
    fs::write(out.join("config.txt"), cfg.to_text())?;
    let mut log = fs::File::create(out.join("train.log"))?;
    writeln!(
        log,
        "{}",
        serde_json::json!({ "config_hash": cfg.hash(), "env": cfg.env.name(), "seed": cfg.seed })
    )?;
    let mut trainer = Trainer::new(cfg.clone())?;
    let mut outcome = TrainOutcome {
        iterations: 0,
        steps: 0,
        aborted: false,
        checkpoints: Vec::new(),
    };
    let mut last_saved = None;
    let save = |trainer: &Trainer, outcome: &mut TrainOutcome| -> Result<()> {
        let p = checkpoint_path(out, trainer.iteration());
        trainer.checkpoint()?.save(&p)?;
        outcome.checkpoints.push(p);
        Ok(())
    };
    if cfg.total_steps == 0 {
        save(&trainer, &mut outcome)?;
        return Ok(outcome);
    }
    while !trainer.done() {
        match trainer.run_iteration() {
            Ok(rec) => {
                writeln!(log, "{}", serde_json::to_string(&rec)?)?;
                on_iter(&rec);
            }
            Err(Error::NonFinite(msg)) => {
                writeln!(
                    log,
                    "{}",
                    serde_json::json!({
                        "iteration": trainer.iteration() + 1,
                        "status": "aborted_non_finite",
                        "detail": msg,
                        "restored_iteration": trainer.iteration(),
                    })
                )?;
                outcome.aborted = true;
                break;
            }
            Err(e) => return Err(e),
        }
        if cfg.checkpoint_every > 0 && trainer.iteration() % cfg.checkpoint_every == 0 {
            save(&trainer, &mut outcome)?;
            last_saved = Some(trainer.iteration());
        }
    }
    if last_saved != Some(trainer.iteration()) {
        save(&trainer, &mut outcome)?;
    }
    outcome.iterations = trainer.iteration();
    outcome.steps = trainer.steps();
    Ok(outcome)
}

/// Decodes a buffer row back into an action.
pub fn buffer_action(space: &ActionSpace, buf: &RolloutBuffer, row: usize) -> Action {
    decode_action(space, buf.actions.row_slice(row))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(env: &str) -> TrainConfig {
        let mut c = TrainConfig::for_env(env).unwrap();
        c.rollout_len = 16;
        c.n_envs = 2;
        c.batch_size = 32;
        c.minibatches = 4;
        c.epochs = 2;
        c.total_steps = 64;
        c.hidden = vec![8];
        c
    }

    #[test]
    fn defaults_validate() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        assert_eq!(c.minibatch_size(), 16);
        assert_eq!(c.n_envs * c.rollout_len, c.batch_size);
    }

    #[test]
    fn config_text_round_trip() {
        let mut c = TrainConfig::for_env("conflict_bandit").unwrap();
        c.set("weighting", "es").unwrap();
        c.set("lambda_div", "0.5").unwrap();
        c.set("env.arms", "1,0;0,1").unwrap();
        let back = TrainConfig::from_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        let mut d = c.clone();
        d.seed = 9;
        assert_ne!(d.hash(), c.hash());
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = TrainConfig::default();
        c.minibatches = 7;
        assert!(c.validate().is_err());
        assert!(TrainConfig::default().set("bogus", "1").is_err());
        assert!(TrainConfig::from_text("lr 3").is_err());
    }

    #[test]
    fn running_stats_match_batch_stats() {
        let mut s = RunningMeanStd::new(1);
        s.count = 0.0;
        let xs = [1.0, 2.0, 4.0, 7.0];
        s.update(&[&[xs[0]], &[xs[1]]]);
        s.update(&[&[xs[2]], &[xs[3]]]);
        assert!((s.mean[0] - 3.5).abs() < 1e-12);
        let var = xs.iter().map(|x| (x - 3.5f64).powi(2)).sum::<f64>() / 4.0;
        assert!((s.var[0] - var).abs() < 1e-12);
    }

    #[test]
    fn buffer_shape_and_preference_constancy() {
        let cfg = small("treasure_grid");
        let mut t = Trainer::new(cfg.clone()).unwrap();
        let (buf, _) = collect_rollouts(&mut t.agent, &mut t.slots, &cfg, &mut t.rng).unwrap();
        assert_eq!(buf.len(), cfg.n_envs * cfg.rollout_len);
        for e in 0..cfg.n_envs {
            for k in 1..cfg.rollout_len {
                let row = e * cfg.rollout_len + k;
                if !buf.dones[row - 1] {
                    assert_eq!(buf.prefs.row_slice(row), buf.prefs.row_slice(row - 1));
                }
            }
        }
    }

    #[test]
    fn bandit_transitions_are_all_terminal_with_fresh_preferences() {
        let cfg = small("conflict_bandit");
        let mut t = Trainer::new(cfg.clone()).unwrap();
        let (buf, ep) = collect_rollouts(&mut t.agent, &mut t.slots, &cfg, &mut t.rng).unwrap();
        assert!(buf.dones.iter().all(|d| *d));
        assert_eq!(ep.completed, buf.len());
        assert_ne!(buf.prefs.row_slice(0), buf.prefs.row_slice(1));
    }

    #[test]
    fn first_pass_ratio_is_one() {
        let cfg = small("line_tradeoff");
        let mut t = Trainer::new(cfg.clone()).unwrap();
        let (buf, _) = collect_rollouts(&mut t.agent, &mut t.slots, &cfg, &mut t.rng).unwrap();
        let tape = Tape::new();
        let bound = t.agent.actor.bind(&tape);
        let (lp, _, _) = evaluate(&tape, &bound, &buf.obs, &buf.prefs, &buf.actions).unwrap();
        for (a, b) in tape.value(lp).data().iter().zip(&buf.log_probs) {
            assert!(((a - b).exp() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn checkpoint_round_trip_restores_policy() {
        let cfg = small("line_tradeoff");
        let mut t = Trainer::new(cfg).unwrap();
        t.run_iteration().unwrap();
        let ckpt = Checkpoint::parse(&t.checkpoint().unwrap().to_text()).unwrap();
        let (agent, cfg2) = load_agent(&ckpt).unwrap();
        assert_eq!(cfg2, t.cfg);
        assert_eq!(agent.actor, t.agent.actor);
        assert_eq!(agent.critic, t.agent.critic);
        assert_eq!(agent.normalizer, t.agent.normalizer);
    }

    #[test]
    fn zero_steps_writes_only_initial_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small("conflict_bandit");
        cfg.total_steps = 0;
        let out = train(&cfg, dir.path()).unwrap();
        assert_eq!(out.checkpoints, vec![dir.path().join("ckpt_0")]);
        assert_eq!(out.iterations, 0);
    }

    #[test]
    fn non_finite_parameters_abort_and_restore() {
        let cfg = small("conflict_bandit");
        let mut t = Trainer::new(cfg).unwrap();
        t.agent.critic.mlp.layers_mut()[0].bias.data_mut()[0] = f64::NAN;
        let before = t.agent.actor.clone();
        assert!(matches!(t.run_iteration(), Err(Error::NonFinite(_))));
        assert_eq!(t.agent.actor, before);
        assert_eq!(t.iteration(), 0);
    }

    #[test]
    fn policy_mismatch_is_detected() {
        let t = Trainer::new(small("line_tradeoff")).unwrap();
        let grid = EnvConfig::by_name("treasure_grid").unwrap().build().unwrap();
        assert!(t.agent.policy().check_compatible(grid.spec()).is_err());
        t.agent.policy().check_compatible(t.spec()).unwrap();
    }
}
