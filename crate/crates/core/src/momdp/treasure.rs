use serde_json::json;

use super::{Action, ActionSpace, EnvSpec, Environment, StepResult};
use crate::error::{Error, Result};
use crate::metrics::pareto_filter_points;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Treasure {
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

impl Treasure {
    /// Parses `row:col:value;row:col:value;...`.
    pub fn parse_list(s: &str) -> Result<Vec<Treasure>> {
        s.split(';')
            .filter(|p| !p.trim().is_empty())
            .map(|p| {
                let f: Vec<&str> = p.trim().split(':').collect();
                let bad = || Error::Config(format!("bad treasure spec {p:?}"));
                if f.len() != 3 {
                    return Err(bad());
                }
                Ok(Treasure {
                    row: f[0].parse().map_err(|_| bad())?,
                    col: f[1].parse().map_err(|_| bad())?,
                    value: f[2].parse().map_err(|_| bad())?,
                })
            })
            .collect()
    }

    pub fn format_list(ts: &[Treasure]) -> String {
        ts.iter()
            .map(|t| format!("{}:{}:{:?}", t.row, t.col, t.value))
            .collect::<Vec<_>>()
            .join(";")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TreasureGridConfig {
    pub width: usize,
    pub height: usize,
    pub horizon: usize,
    pub treasures: Vec<Treasure>,
}

impl Default for TreasureGridConfig {
    /// 11×11 grid, five treasures. Values rise with distance from the start
    /// while the marginal value per extra step shrinks, so every treasure is
    /// the unique optimum for some linear preference.
    fn default() -> Self {
        let t = |row, col, value| Treasure { row, col, value };
        Self {
            width: 11,
            height: 11,
            horizon: 50,
            treasures: vec![
                t(2, 0, 4.0),
                t(2, 2, 10.0),
                t(4, 3, 16.0),
                t(6, 4, 19.75),
                t(9, 5, 22.75),
            ],
        }
    }
}

const UP: usize = 0;
const DOWN: usize = 1;
const LEFT: usize = 2;
const RIGHT: usize = 3;

/// Submarine-style grid: start top-left, move in four directions, the episode
/// ends on the first treasure or at the horizon. Rewards are
/// `(treasure value, -1 per step)`.
pub struct TreasureGrid {
    cfg: TreasureGridConfig,
    spec: EnvSpec,
    pos: (usize, usize),
    t: usize,
    done: bool,
}

impl TreasureGrid {
    pub fn new(cfg: TreasureGridConfig) -> Result<Self> {
        if cfg.width == 0 || cfg.height == 0 || cfg.width * cfg.height < 2 {
            return Err(Error::Env("grid too small".into()));
        }
        if cfg.horizon == 0 {
            return Err(Error::Env("horizon must be positive".into()));
        }
        for tr in &cfg.treasures {
            if tr.row >= cfg.height || tr.col >= cfg.width {
                return Err(Error::Env(format!("treasure {tr:?} outside the grid")));
            }
            if (tr.row, tr.col) == (0, 0) {
                return Err(Error::Env("treasure on the start cell".into()));
            }
            if !tr.value.is_finite() {
                return Err(Error::Env("treasure value must be finite".into()));
            }
        }
        let spec = EnvSpec {
            name: "treasure_grid".into(),
            objectives: 2,
            obs_dim: 2,
            action: ActionSpace::Discrete { n: 4 },
            horizon: cfg.horizon,
            gamma_eval: 1.0,
            reference_point: vec![0.0, -60.0],
        };
        Ok(Self {
            cfg,
            spec,
            pos: (0, 0),
            t: 0,
            done: false,
        })
    }

    pub fn config(&self) -> &TreasureGridConfig {
        &self.cfg
    }

    pub fn position(&self) -> (usize, usize) {
        self.pos
    }

    fn treasure_at(&self, pos: (usize, usize)) -> Option<f64> {
        self.cfg
            .treasures
            .iter()
            .find(|t| (t.row, t.col) == pos)
            .map(|t| t.value)
    }

    fn moved(&self, pos: (usize, usize), action: usize) -> (usize, usize) {
        let (r, c) = pos;
        match action {
            UP => (r.saturating_sub(1), c),
            DOWN => ((r + 1).min(self.cfg.height - 1), c),
            LEFT => (r, c.saturating_sub(1)),
            _ => (r, (c + 1).min(self.cfg.width - 1)),
        }
    }

    fn observe(&self) -> Vec<f64> {
        let norm = |x: usize, n: usize| if n > 1 { x as f64 / (n - 1) as f64 } else { 0.0 };
        vec![norm(self.pos.0, self.cfg.height), norm(self.pos.1, self.cfg.width)]
    }
}

impl Environment for TreasureGrid {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, _seed: u64) -> Vec<f64> {
        self.pos = (0, 0);
        self.t = 0;
        self.done = false;
        self.observe()
    }

    fn step(&mut self, action: &Action) -> Result<StepResult> {
        if self.done {
            return Err(Error::Env("step after episode end".into()));
        }
        let a = match *action {
            Action::Discrete(a) if a < 4 => a,
            Action::Discrete(a) => return Err(Error::Env(format!("action {a} out of range 0..4"))),
            Action::Continuous(_) => return Err(Error::Env("expected a discrete action".into())),
        };
        self.pos = self.moved(self.pos, a);
        self.t += 1;
        let treasure = self.treasure_at(self.pos);
        self.done = treasure.is_some() || self.t >= self.cfg.horizon;
        Ok(StepResult {
            obs: self.observe(),
            reward: vec![treasure.unwrap_or(0.0), -1.0],
            done: self.done,
            info: vec![("step", self.t as f64)],
        })
    }

    fn step_index(&self) -> usize {
        self.t
    }

    fn render(&self) -> serde_json::Value {
        json!({
            "kind": "grid",
            "width": self.cfg.width,
            "height": self.cfg.height,
            "agent": [self.pos.0, self.pos.1],
            "treasures": self.cfg.treasures.iter().map(|t| json!([t.row, t.col, t.value])).collect::<Vec<_>>(),
        })
    }

    /// Backward induction over (time, cell) carrying sets of non-dominated
    /// return vectors.
    fn exact_front(&self) -> Result<Vec<Vec<f64>>> {
        let (h, w) = (self.cfg.height, self.cfg.width);
        let gamma = self.spec.gamma_eval;
        let idx = |p: (usize, usize)| p.0 * w + p.1;
        // value sets for the cells at time t+1; empty at the horizon.
        let mut next: Vec<Vec<Vec<f64>>> = vec![Vec::new(); h * w];
        for t in (0..self.cfg.horizon).rev() {
            let mut cur: Vec<Vec<Vec<f64>>> = vec![Vec::new(); h * w];
            for r in 0..h {
                for c in 0..w {
                    if self.treasure_at((r, c)).is_some() {
                        continue;
                    }
                    let mut cands = Vec::new();
                    for a in [UP, DOWN, LEFT, RIGHT] {
                        let np = self.moved((r, c), a);
                        let reward = [self.treasure_at(np).unwrap_or(0.0), -1.0];
                        let terminal = self.treasure_at(np).is_some() || t + 1 >= self.cfg.horizon;
                        if terminal {
                            cands.push(reward.to_vec());
                        } else {
                            for v in &next[idx(np)] {
                                cands.push(vec![reward[0] + gamma * v[0], reward[1] + gamma * v[1]]);
                            }
                        }
                    }
                    cur[idx((r, c))] = pareto_filter_points(&cands)?;
                }
            }
            next = cur;
        }
        let mut front = next[idx((0, 0))].clone();
        front.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        Ok(front)
    }
}
