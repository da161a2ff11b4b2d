use serde_json::json;

use super::{Action, ActionSpace, EnvSpec, Environment, StepResult};
use crate::error::{Error, Result};
use crate::metrics::pareto_filter_points;

#[derive(Clone, Debug, PartialEq)]
pub struct BanditConfig {
    /// One reward vector per arm.
    pub arms: Vec<Vec<f64>>,
}

impl Default for BanditConfig {
    fn default() -> Self {
        Self {
            arms: vec![
                vec![2.0, -1.0],
                vec![1.0, 1.0],
                vec![-1.0, 2.0],
                vec![0.0, 0.0],
            ],
        }
    }
}

impl BanditConfig {
    /// Parses `a,b;c,d;...`.
    pub fn parse_arms(s: &str) -> Result<Vec<Vec<f64>>> {
        s.split(';')
            .filter(|p| !p.trim().is_empty())
            .map(|arm| {
                arm.split(',')
                    .map(|v| {
                        v.trim()
                            .parse::<f64>()
                            .map_err(|_| Error::Config(format!("bad arm {arm:?}")))
                    })
                    .collect()
            })
            .collect()
    }

    pub fn format_arms(arms: &[Vec<f64>]) -> String {
        arms.iter()
            .map(|a| a.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(","))
            .collect::<Vec<_>>()
            .join(";")
    }
}

/// One-step bandit with fixed, partly conflicting reward vectors.
pub struct ConflictBandit {
    cfg: BanditConfig,
    spec: EnvSpec,
    last_arm: Option<usize>,
    done: bool,
    t: usize,
}

impl ConflictBandit {
    pub fn new(cfg: BanditConfig) -> Result<Self> {
        let d = cfg.arms.first().map_or(0, Vec::len);
        if cfg.arms.is_empty() || cfg.arms.iter().any(|a| a.len() != d) {
            return Err(Error::Env("arms must be non-empty and equal length".into()));
        }
        if cfg.arms.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Env("arm rewards must be finite".into()));
        }
        let reference_point = (0..d)
            .map(|i| cfg.arms.iter().map(|a| a[i]).fold(f64::INFINITY, f64::min) - 1.0)
            .collect();
        let spec = EnvSpec {
            name: "conflict_bandit".into(),
            objectives: d,
            obs_dim: 1,
            action: ActionSpace::Discrete { n: cfg.arms.len() },
            horizon: 1,
            gamma_eval: 1.0,
            reference_point,
        };
        Ok(Self {
            cfg,
            spec,
            last_arm: None,
            done: false,
            t: 0,
        })
    }

    pub fn arms(&self) -> &[Vec<f64>] {
        &self.cfg.arms
    }
}

impl Environment for ConflictBandit {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, _seed: u64) -> Vec<f64> {
        self.done = false;
        self.t = 0;
        vec![1.0]
    }

    fn step(&mut self, action: &Action) -> Result<StepResult> {
        if self.done {
            return Err(Error::Env("step after episode end".into()));
        }
        let arm = match *action {
            Action::Discrete(a) if a < self.cfg.arms.len() => a,
            Action::Discrete(a) => return Err(Error::Env(format!("arm {a} out of range"))),
            Action::Continuous(_) => return Err(Error::Env("expected a discrete action".into())),
        };
        self.last_arm = Some(arm);
        self.done = true;
        self.t = 1;
        Ok(StepResult {
            obs: vec![1.0],
            reward: self.cfg.arms[arm].clone(),
            done: true,
            info: vec![("arm", arm as f64)],
        })
    }

    fn step_index(&self) -> usize {
        self.t
    }

    fn render(&self) -> serde_json::Value {
        json!({ "kind": "bandit", "arms": self.cfg.arms, "last_arm": self.last_arm })
    }

    fn exact_front(&self) -> Result<Vec<Vec<f64>>> {
        let mut front = pareto_filter_points(&self.cfg.arms)?;
        front.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        Ok(front)
    }
}
