//! Steerable rollout sessions and their JSON wire protocol.
//!
//! A session owns one environment instance and a frozen policy. Inbound
//! control messages are applied between ticks; each tick advances the
//! environment by one step under the current preference and yields one
//! outbound message. Transport lives elsewhere.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::PreferencePolicy;
use crate::momdp::Environment;
use crate::preference::PreferenceVector;
use crate::trainer::PolicySnapshot;

/// Wire schema version carried in every message as `v`.
pub const PROTOCOL_VERSION: u32 = 1;
pub const DEFAULT_TICK_HZ: f64 = 20.0;
pub const MAX_TICK_HZ: f64 = 1000.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InboundKind {
    SetWeights { weights: Vec<f64> },
    Pause,
    Resume,
    Reset,
    SetTickRate { hz: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Inbound {
    pub v: u32,
    #[serde(flatten)]
    pub kind: InboundKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum OutboundKind {
    Tick {
        step: usize,
        render: serde_json::Value,
        reward: Vec<f64>,
        cum_return: Vec<f64>,
        weights: Vec<f64>,
        done: bool,
    },
    Error {
        msg: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outbound {
    pub v: u32,
    #[serde(flatten)]
    pub kind: OutboundKind,
}

impl Outbound {
    pub fn error(msg: impl Into<String>) -> Self {
        Self {
            v: PROTOCOL_VERSION,
            kind: OutboundKind::Error { msg: msg.into() },
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("outbound messages serialize")
    }
}

/// Parses and version-checks an inbound text frame.
pub fn parse_inbound(text: &str) -> Result<Inbound> {
    let msg: Inbound = serde_json::from_str(text)?;
    if msg.v != PROTOCOL_VERSION {
        return Err(Error::InvalidArgument(format!(
            "unsupported protocol version {}; expected {PROTOCOL_VERSION}",
            msg.v
        )));
    }
    Ok(msg)
}

/// State of one live rollout.
pub struct SessionState {
    pub checkpoint_id: String,
    policy: PolicySnapshot,
    env: Box<dyn Environment>,
    obs: Vec<f64>,
    weights: PreferenceVector,
    step: usize,
    cum_return: Vec<f64>,
    discount: f64,
    paused: bool,
    failed: bool,
    tick_hz: f64,
    episode: u64,
}

impl SessionState {
    /// Refuses policies whose dimensions do not match `env`.
    pub fn new(policy: PolicySnapshot, mut env: Box<dyn Environment>, checkpoint_id: impl Into<String>) -> Result<Self> {
        policy.check_compatible(env.spec())?;
        let d = env.spec().objectives;
        let obs = env.reset(0);
        Ok(Self {
            checkpoint_id: checkpoint_id.into(),
            policy,
            env,
            obs,
            weights: PreferenceVector::uniform(d),
            step: 0,
            cum_return: vec![0.0; d],
            discount: 1.0,
            paused: false,
            failed: false,
            tick_hz: DEFAULT_TICK_HZ,
            episode: 0,
        })
    }

    pub fn weights(&self) -> &[f64] {
        self.weights.as_slice()
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn cum_return(&self) -> &[f64] {
        &self.cum_return
    }

    pub fn is_paused(&self) -> bool {
        self.paused
    }

    pub fn is_failed(&self) -> bool {
        self.failed
    }

    pub fn tick_hz(&self) -> f64 {
        self.tick_hz
    }

    fn new_episode(&mut self) {
        self.episode += 1;
        self.obs = self.env.reset(self.episode);
        self.step = 0;
        self.discount = 1.0;
        self.cum_return.iter_mut().for_each(|c| *c = 0.0);
    }

    /// Applies a control message. Returns an error message for the client
    /// when the message is rejected.
    pub fn apply(&mut self, msg: InboundKind) -> Option<Outbound> {
        match msg {
            InboundKind::SetWeights { weights } => {
                if weights.len() != self.weights.dim() {
                    return Some(Outbound::error(format!(
                        "expected {} weights, got {}",
                        self.weights.dim(),
                        weights.len()
                    )));
                }
                match PreferenceVector::project(&weights) {
                    Ok(w) => self.weights = w,
                    Err(e) => return Some(Outbound::error(e.to_string())),
                }
            }
            InboundKind::Pause => self.paused = true,
            InboundKind::Resume => self.paused = false,
            InboundKind::Reset => {
                self.failed = false;
                self.new_episode();
            }
            InboundKind::SetTickRate { hz } => {
                if !(hz > 0.0 && hz <= MAX_TICK_HZ) {
                    return Some(Outbound::error(format!("tick rate {hz} outside (0, {MAX_TICK_HZ}]")));
                }
                self.tick_hz = hz;
            }
        }
        None
    }

    /// Parses and applies a raw text frame.
    pub fn handle_text(&mut self, text: &str) -> Option<Outbound> {
        match parse_inbound(text) {
            Ok(m) => self.apply(m.kind),
            Err(e) => Some(Outbound::error(e.to_string())),
        }
    }

    /// Advances one step. Returns `None` while paused or after a failure
    /// (until a reset).
    pub fn tick(&mut self) -> Option<Outbound> {
        if self.paused || self.failed {
            return None;
        }
        let result = self
            .policy
            .greedy_action(&self.obs, self.weights.as_slice())
            .and_then(|a| self.env.step(&a));
        let step = match result {
            Ok(s) => s,
            Err(e) => {
                self.failed = true;
                return Some(Outbound::error(format!("session halted: {e}")));
            }
        };
        self.step += 1;
        for (c, r) in self.cum_return.iter_mut().zip(&step.reward) {
            *c += self.discount * r;
        }
        self.discount *= self.env.spec().gamma_eval;
        self.obs = step.obs;
        let msg = Outbound {
            v: PROTOCOL_VERSION,
            kind: OutboundKind::Tick {
                step: self.step,
                render: self.env.render(),
                reward: step.reward,
                cum_return: self.cum_return.clone(),
                weights: self.weights.as_slice().to_vec(),
                done: step.done,
            },
        };
        if step.done {
            self.new_episode();
        }
        Some(msg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::momdp::EnvConfig;
    use crate::trainer::{Agent, TrainConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn session(env: &str) -> SessionState {
        let cfg = TrainConfig::for_env(env).unwrap();
        let e = cfg.env.build().unwrap();
        let agent = Agent::new(e.spec(), &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        SessionState::new(agent.policy(), e, "test").unwrap()
    }

    fn tick_fields(m: &Outbound) -> (usize, Vec<f64>, Vec<f64>, bool) {
        match &m.kind {
            OutboundKind::Tick { step, reward, weights, done, .. } => (*step, reward.clone(), weights.clone(), *done),
            other => panic!("expected tick, got {other:?}"),
        }
    }

    #[test]
    fn set_weights_is_echoed_after_projection() {
        let mut s = session("line_tradeoff");
        assert!(s.handle_text(r#"{"v":1,"type":"set_weights","weights":[0.7,0.3]}"#).is_none());
        let (_, _, w, _) = tick_fields(&s.tick().unwrap());
        assert!((w[0] - 0.7).abs() < 1e-12 && (w[1] - 0.3).abs() < 1e-12);
        s.handle_text(r#"{"v":1,"type":"set_weights","weights":[2,2]}"#);
        let (_, _, w, _) = tick_fields(&s.tick().unwrap());
        assert_eq!(w, vec![0.5, 0.5]);
    }

    #[test]
    fn pause_resume_keeps_step_index_continuous() {
        let mut s = session("line_tradeoff");
        let (a, _, _, _) = tick_fields(&s.tick().unwrap());
        s.apply(InboundKind::Pause);
        assert!(s.tick().is_none());
        assert!(s.tick().is_none());
        s.apply(InboundKind::Resume);
        let (b, _, _, _) = tick_fields(&s.tick().unwrap());
        assert_eq!(b, a + 1);
    }

    #[test]
    fn bandit_ticks_are_complete_episodes() {
        let mut s = session("conflict_bandit");
        for _ in 0..5 {
            let (step, reward, _, done) = tick_fields(&s.tick().unwrap());
            assert!(done);
            assert_eq!(step, 1);
            assert_eq!(reward.len(), 2);
        }
    }

    #[test]
    fn bad_messages_produce_errors() {
        let mut s = session("treasure_grid");
        for bad in [
            "not json",
            r#"{"v":2,"type":"pause"}"#,
            r#"{"v":1,"type":"set_weights","weights":[1]}"#,
            r#"{"v":1,"type":"fly"}"#,
            r#"{"v":1,"type":"set_tick_rate","hz":0}"#,
        ] {
            let m = s.handle_text(bad).expect("error reply");
            assert!(matches!(m.kind, OutboundKind::Error { .. }), "{bad}");
        }
        assert!(!s.is_paused());
    }

    #[test]
    fn mismatched_checkpoint_is_refused() {
        let cfg = TrainConfig::for_env("line_tradeoff").unwrap();
        let e = cfg.env.build().unwrap();
        let agent = Agent::new(e.spec(), &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let grid = EnvConfig::by_name("treasure_grid").unwrap().build().unwrap();
        assert!(SessionState::new(agent.policy(), grid, "x").is_err());
    }

    #[test]
    fn wire_format_shape() {
        let m = Outbound::error("boom");
        let v: serde_json::Value = serde_json::from_str(&m.to_json()).unwrap();
        assert_eq!(v, serde_json::json!({"v": 1, "type": "error", "msg": "boom"}));
        let i = parse_inbound(r#"{"v":1,"type":"reset"}"#).unwrap();
        assert_eq!(i.kind, InboundKind::Reset);
    }
}
