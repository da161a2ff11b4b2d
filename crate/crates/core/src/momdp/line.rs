use serde_json::json;

use super::{Action, ActionSpace, EnvSpec, Environment, StepResult};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LineTradeoffConfig {
    pub dt: f64,
    pub v_max: f64,
    pub horizon: usize,
}

impl Default for LineTradeoffConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            v_max: 2.0,
            horizon: 100,
        }
    }
}

/// 1-D double integrator. Rewards are `(velocity, -acceleration²)`: going
/// fast costs energy, so preferences trade progress against effort.
pub struct LineTradeoff {
    cfg: LineTradeoffConfig,
    spec: EnvSpec,
    x: f64,
    v: f64,
    t: usize,
    done: bool,
    clamped: u64,
}

impl LineTradeoff {
    pub fn new(cfg: LineTradeoffConfig) -> Result<Self> {
        if !(cfg.dt > 0.0) || !(cfg.v_max > 0.0) || cfg.horizon == 0 {
            return Err(Error::Env(format!("invalid line config {cfg:?}")));
        }
        let spec = EnvSpec {
            name: "line_tradeoff".into(),
            objectives: 2,
            obs_dim: 2,
            action: ActionSpace::Continuous {
                dim: 1,
                low: -1.0,
                high: 1.0,
            },
            horizon: cfg.horizon,
            gamma_eval: 1.0,
            reference_point: vec![-10.0, -120.0],
        };
        Ok(Self {
            cfg,
            spec,
            x: 0.0,
            v: 0.0,
            t: 0,
            done: false,
            clamped: 0,
        })
    }

    pub fn state(&self) -> (f64, f64) {
        (self.x, self.v)
    }
}

impl Environment for LineTradeoff {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, _seed: u64) -> Vec<f64> {
        self.x = 0.0;
        self.v = 0.0;
        self.t = 0;
        self.done = false;
        vec![self.x, self.v]
    }

    fn step(&mut self, action: &Action) -> Result<StepResult> {
        if self.done {
            return Err(Error::Env("step after episode end".into()));
        }
        let raw = match action {
            Action::Continuous(a) if a.len() == 1 => a[0],
            Action::Continuous(a) => {
                return Err(Error::Env(format!("expected 1 action dim, got {}", a.len())))
            }
            Action::Discrete(_) => return Err(Error::Env("expected a continuous action".into())),
        };
        if !raw.is_finite() {
            return Err(Error::Env("non-finite action".into()));
        }
        let a = raw.clamp(-1.0, 1.0);
        if a != raw {
            self.clamped += 1;
        }
        let reward = vec![self.v, -a * a];
        self.x += self.v * self.cfg.dt;
        self.v = (self.v + a * self.cfg.dt).clamp(-self.cfg.v_max, self.cfg.v_max);
        self.t += 1;
        self.done = self.t >= self.cfg.horizon;
        Ok(StepResult {
            obs: vec![self.x, self.v],
            reward,
            done: self.done,
            info: vec![("clamped", self.clamped as f64)],
        })
    }

    fn step_index(&self) -> usize {
        self.t
    }

    fn render(&self) -> serde_json::Value {
        json!({ "kind": "track", "position": self.x, "velocity": self.v, "v_max": self.cfg.v_max })
    }

    fn clamp_count(&self) -> u64 {
        self.clamped
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reset_is_at_rest() {
        let mut env = LineTradeoff::new(LineTradeoffConfig::default()).unwrap();
        assert_eq!(env.reset(3), vec![0.0, 0.0]);
    }

    #[test]
    fn hand_stepped_dynamics() {
        let mut env = LineTradeoff::new(LineTradeoffConfig::default()).unwrap();
        env.reset(0);
        let r1 = env.step(&Action::Continuous(vec![1.0])).unwrap();
        assert_eq!(r1.reward, vec![0.0, -1.0]);
        let r2 = env.step(&Action::Continuous(vec![0.0])).unwrap();
        assert!((r2.reward[0] - 0.1).abs() < 1e-15);
        assert_eq!(r2.reward[1], 0.0);
        // x advanced by v*dt using the pre-update velocity
        assert!((env.state().0 - 0.01).abs() < 1e-15);
    }

    #[test]
    fn actions_are_clamped_and_counted() {
        let mut env = LineTradeoff::new(LineTradeoffConfig::default()).unwrap();
        env.reset(0);
        let r = env.step(&Action::Continuous(vec![3.0])).unwrap();
        assert_eq!(r.reward[1], -1.0);
        assert_eq!(env.clamp_count(), 1);
    }

    #[test]
    fn velocity_saturates_and_horizon_ends_episode() {
        let mut env = LineTradeoff::new(LineTradeoffConfig::default()).unwrap();
        env.reset(0);
        let mut last = None;
        for _ in 0..100 {
            last = Some(env.step(&Action::Continuous(vec![1.0])).unwrap());
        }
        let last = last.unwrap();
        assert!(last.done);
        assert_eq!(env.state().1, 2.0);
        assert!(env.step(&Action::Continuous(vec![0.0])).is_err());
    }

    #[test]
    fn identical_actions_give_identical_trajectories() {
        let run = || {
            let mut env = LineTradeoff::new(LineTradeoffConfig::default()).unwrap();
            env.reset(11);
            (0..30)
                .map(|i| env.step(&Action::Continuous(vec![(i as f64 * 0.37).sin()])).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
