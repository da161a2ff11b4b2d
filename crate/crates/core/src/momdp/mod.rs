//! Multi-objective MDPs: the environment interface and three small
//! deterministic environments whose Pareto fronts are known exactly.

mod bandit;
mod line;
mod treasure;

use std::fmt;

use serde::Serialize;

pub use bandit::{BanditConfig, ConflictBandit};
pub use line::{LineTradeoff, LineTradeoffConfig};
pub use treasure::{Treasure, TreasureGrid, TreasureGridConfig};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActionSpace {
    Discrete { n: usize },
    Continuous { dim: usize, low: f64, high: f64 },
}

impl ActionSpace {
    /// Width of the policy head for this space.
    pub fn head_width(&self) -> usize {
        match *self {
            ActionSpace::Discrete { n } => n,
            ActionSpace::Continuous { dim, .. } => dim,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnvSpec {
    pub name: String,
    /// Number of objectives `d`.
    pub objectives: usize,
    pub obs_dim: usize,
    pub action: ActionSpace,
    pub horizon: usize,
    /// Discount used for evaluation returns.
    pub gamma_eval: f64,
    /// Default hypervolume reference point.
    pub reference_point: Vec<f64>,
}

impl EnvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.objectives < 2 {
            return Err(Error::Env("an MOMDP needs at least two objectives".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Env("horizon must be at least 1".into()));
        }
        if !(self.gamma_eval > 0.0 && self.gamma_eval <= 1.0) {
            return Err(Error::Env(format!("gamma_eval {} outside (0, 1]", self.gamma_eval)));
        }
        if self.reference_point.len() != self.objectives {
            return Err(Error::Env("reference point has wrong length".into()));
        }
        Ok(())
    }
}

impl fmt::Display for EnvSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "name = {}", self.name)?;
        writeln!(f, "objectives = {}", self.objectives)?;
        writeln!(f, "obs_dim = {}", self.obs_dim)?;
        match &self.action {
            ActionSpace::Discrete { n } => writeln!(f, "action = discrete {n}")?,
            ActionSpace::Continuous { dim, low, high } => {
                writeln!(f, "action = continuous {dim} [{low}, {high}]")?
            }
        }
        writeln!(f, "horizon = {}", self.horizon)?;
        writeln!(f, "gamma_eval = {}", self.gamma_eval)?;
        let r: Vec<String> = self.reference_point.iter().map(|v| v.to_string()).collect();
        write!(f, "reference_point = {}", r.join(","))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub obs: Vec<f64>,
    pub reward: Vec<f64>,
    pub done: bool,
    pub info: Vec<(&'static str, f64)>,
}

/// A deterministic multi-objective environment.
pub trait Environment: Send {
    fn spec(&self) -> &EnvSpec;

    /// Starts a new episode. Identical seeds give identical trajectories under
    /// identical actions.
    fn reset(&mut self, seed: u64) -> Vec<f64>;

    fn step(&mut self, action: &Action) -> Result<StepResult>;

    /// Steps taken in the current episode.
    fn step_index(&self) -> usize;

    /// Schematic state for display (agent position, grid contents...).
    fn render(&self) -> serde_json::Value;

    /// How many continuous actions were clamped into the box so far.
    fn clamp_count(&self) -> u64 {
        0
    }

    /// Exact non-dominated set of `gamma_eval`-discounted return vectors over
    /// all deterministic policies.
    fn exact_front(&self) -> Result<Vec<Vec<f64>>> {
        Err(Error::Unsupported(format!(
            "no exact front for {}",
            self.spec().name
        )))
    }
}

/// Ground-truth Pareto front of a finite environment.
pub fn enumerate_true_front(env: &dyn Environment) -> Result<Vec<Vec<f64>>> {
    env.exact_front()
}

/// Environment selection plus parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum EnvConfig {
    TreasureGrid(TreasureGridConfig),
    LineTradeoff(LineTradeoffConfig),
    ConflictBandit(BanditConfig),
}

impl EnvConfig {
    pub const NAMES: [&'static str; 3] = ["treasure_grid", "line_tradeoff", "conflict_bandit"];

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "treasure_grid" => Ok(Self::TreasureGrid(TreasureGridConfig::default())),
            "line_tradeoff" => Ok(Self::LineTradeoff(LineTradeoffConfig::default())),
            "conflict_bandit" => Ok(Self::ConflictBandit(BanditConfig::default())),
            other => Err(Error::Config(format!(
                "unknown environment {other:?}; expected one of {:?}",
                Self::NAMES
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::TreasureGrid(_) => "treasure_grid",
            Self::LineTradeoff(_) => "line_tradeoff",
            Self::ConflictBandit(_) => "conflict_bandit",
        }
    }

    /// Sets an environment parameter from its textual form.
    pub fn set_param(&mut self, key: &str, value: &str) -> Result<()> {
        let num = |v: &str| -> Result<f64> {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("env.{key}: not a number: {v:?}")))
        };
        let int = |v: &str| -> Result<usize> {
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("env.{key}: not an integer: {v:?}")))
        };
        match (self, key) {
            (Self::TreasureGrid(c), "width") => c.width = int(value)?,
            (Self::TreasureGrid(c), "height") => c.height = int(value)?,
            (Self::TreasureGrid(c), "horizon") => c.horizon = int(value)?,
            (Self::TreasureGrid(c), "treasures") => c.treasures = Treasure::parse_list(value)?,
            (Self::LineTradeoff(c), "dt") => c.dt = num(value)?,
            (Self::LineTradeoff(c), "v_max") => c.v_max = num(value)?,
            (Self::LineTradeoff(c), "horizon") => c.horizon = int(value)?,
            (Self::ConflictBandit(c), "arms") => c.arms = BanditConfig::parse_arms(value)?,
            (env, key) => {
                return Err(Error::Config(format!(
                    "unknown parameter env.{key} for {}",
                    env.name()
                )))
            }
        }
        Ok(())
    }

    /// `(key, value)` pairs that [`EnvConfig::set_param`] accepts back.
    pub fn params(&self) -> Vec<(&'static str, String)> {
        match self {
            Self::TreasureGrid(c) => vec![
                ("width", c.width.to_string()),
                ("height", c.height.to_string()),
                ("horizon", c.horizon.to_string()),
                ("treasures", Treasure::format_list(&c.treasures)),
            ],
            Self::LineTradeoff(c) => vec![
                ("dt", format!("{:?}", c.dt)),
                ("v_max", format!("{:?}", c.v_max)),
                ("horizon", c.horizon.to_string()),
            ],
            Self::ConflictBandit(c) => vec![("arms", BanditConfig::format_arms(&c.arms))],
        }
    }

    pub fn build(&self) -> Result<Box<dyn Environment>> {
        Ok(match self {
            Self::TreasureGrid(c) => Box::new(TreasureGrid::new(c.clone())?),
            Self::LineTradeoff(c) => Box::new(LineTradeoff::new(c.clone())?),
            Self::ConflictBandit(c) => Box::new(ConflictBandit::new(c.clone())?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_named_env_has_a_valid_spec() {
        for name in EnvConfig::NAMES {
            let env = EnvConfig::by_name(name).unwrap().build().unwrap();
            env.spec().validate().unwrap();
            assert_eq!(env.spec().name, name);
        }
    }

    #[test]
    fn continuous_env_has_no_exact_front() {
        let env = EnvConfig::by_name("line_tradeoff").unwrap().build().unwrap();
        assert!(matches!(enumerate_true_front(env.as_ref()), Err(Error::Unsupported(_))));
    }

    #[test]
    fn params_round_trip() {
        for name in EnvConfig::NAMES {
            let cfg = EnvConfig::by_name(name).unwrap();
            let mut other = EnvConfig::by_name(name).unwrap();
            for (k, v) in cfg.params() {
                other.set_param(k, &v).unwrap();
            }
            assert_eq!(cfg, other);
        }
    }

    #[test]
    fn unknown_env_and_param_rejected() {
        assert!(EnvConfig::by_name("hopper").is_err());
        let mut c = EnvConfig::by_name("line_tradeoff").unwrap();
        assert!(c.set_param("treasures", "1").is_err());
    }
}
