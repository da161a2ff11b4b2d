//! Preference-conditioned actor, multi-head critic, and closed-form
//! distribution calculus.
//!
//! Both networks read `concat(observation, ω)`. The actor emits categorical
//! logits for discrete spaces, or a mean with a free state-independent
//! log-std vector for continuous spaces. The critic has one linear head per
//! objective on a shared body and predicts unweighted values.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::diff::{Axis, BoundMlp, Mlp, Module, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::momdp::{Action, ActionSpace};

/// Action distribution with plain values.
#[derive(Clone, Debug, PartialEq)]
pub enum ActionDistribution {
    Categorical { probs: Vec<f64> },
    DiagonalGaussian { mean: Vec<f64>, std: Vec<f64> },
}

impl ActionDistribution {
    /// Softmax of `logits`.
    pub fn from_logits(logits: &[f64]) -> Self {
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let s: f64 = exps.iter().sum();
        Self::Categorical {
            probs: exps.into_iter().map(|e| e / s).collect(),
        }
    }

    pub fn log_prob(&self, action: &Action) -> Result<f64> {
        match (self, action) {
            (Self::Categorical { probs }, Action::Discrete(a)) => probs
                .get(*a)
                .map(|p| p.ln())
                .ok_or_else(|| Error::InvalidArgument(format!("action {a} out of range"))),
            (Self::DiagonalGaussian { mean, std }, Action::Continuous(a)) if a.len() == mean.len() => {
                Ok(mean
                    .iter()
                    .zip(std)
                    .zip(a)
                    .map(|((m, s), x)| {
                        let z = (x - m) / s;
                        -0.5 * z * z - s.ln() - 0.5 * (2.0 * PI).ln()
                    })
                    .sum())
            }
            _ => Err(Error::DistributionMismatch("action does not match distribution".into())),
        }
    }

    pub fn entropy(&self) -> f64 {
        match self {
            Self::Categorical { probs } => -probs
                .iter()
                .filter(|&&p| p > 0.0)
                .map(|p| p * p.ln())
                .sum::<f64>(),
            Self::DiagonalGaussian { std, .. } => std
                .iter()
                .map(|s| s.ln() + 0.5 * (2.0 * PI * std::f64::consts::E).ln())
                .sum(),
        }
    }

    /// `KL(self ‖ other)`. Returns `+∞` when `other` puts zero mass where
    /// `self` does not.
    pub fn kl(&self, other: &ActionDistribution) -> Result<f64> {
        match (self, other) {
            (Self::Categorical { probs: p }, Self::Categorical { probs: q }) if p.len() == q.len() => {
                let mut total = 0.0;
                for (&pi, &qi) in p.iter().zip(q) {
                    if pi > 0.0 {
                        if qi <= 0.0 {
                            return Ok(f64::INFINITY);
                        }
                        total += pi * (pi.ln() - qi.ln());
                    }
                }
                Ok(total)
            }
            (
                Self::DiagonalGaussian { mean: mp, std: sp },
                Self::DiagonalGaussian { mean: mq, std: sq },
            ) if mp.len() == mq.len() => Ok(mp
                .iter()
                .zip(sp)
                .zip(mq.iter().zip(sq))
                .map(|((m1, s1), (m2, s2))| {
                    (s2 / s1).ln() + (s1 * s1 + (m1 - m2).powi(2)) / (2.0 * s2 * s2) - 0.5
                })
                .sum()),
            _ => Err(Error::DistributionMismatch(
                "KL needs two distributions of the same kind and size".into(),
            )),
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Action {
        match self {
            Self::Categorical { probs } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (i, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return Action::Discrete(i);
                    }
                }
                Action::Discrete(probs.len() - 1)
            }
            Self::DiagonalGaussian { mean, std } => Action::Continuous(
                mean.iter()
                    .zip(std)
                    .map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal))
                    .collect(),
            ),
        }
    }

    /// Argmax for categorical, mean for Gaussian.
    pub fn mode(&self) -> Action {
        match self {
            Self::Categorical { probs } => {
                let mut best = 0;
                for (i, p) in probs.iter().enumerate() {
                    if *p > probs[best] {
                        best = i;
                    }
                }
                Action::Discrete(best)
            }
            Self::DiagonalGaussian { mean, .. } => Action::Continuous(mean.clone()),
        }
    }
}

/// Differentiable distribution parameters for a batch, living on a tape.
#[derive(Clone, Copy, Debug)]
pub enum DistVars {
    /// Row-wise log-probabilities, `[n, k]`.
    Categorical { log_probs: Var },
    /// Means `[n, k]` and shared log-std `[1, k]`.
    Gaussian { mean: Var, log_std: Var },
}

/// Batch of actions as stored in the rollout buffer: `[n, 1]` arm indices
/// for discrete spaces, `[n, k]` raw samples for continuous ones.
pub fn encode_action(action: &Action) -> Vec<f64> {
    match action {
        Action::Discrete(a) => vec![*a as f64],
        Action::Continuous(v) => v.clone(),
    }
}

pub fn decode_action(space: &ActionSpace, row: &[f64]) -> Action {
    match space {
        ActionSpace::Discrete { .. } => Action::Discrete(row[0] as usize),
        ActionSpace::Continuous { .. } => Action::Continuous(row.to_vec()),
    }
}

impl DistVars {
    /// Log-density of `actions` (encoded as in [`encode_action`]), `[n, 1]`.
    pub fn log_prob(&self, tape: &Tape, actions: &Tensor) -> Result<Var> {
        match *self {
            DistVars::Categorical { log_probs } => {
                let [n, k] = tape.shape(log_probs);
                if actions.rows() != n || actions.cols() != 1 {
                    return Err(Error::Shape {
                        op: "log_prob",
                        lhs: [n, k],
                        rhs: actions.shape(),
                    });
                }
                let mut mask = Tensor::zeros(n, k);
                for i in 0..n {
                    let a = actions.get(i, 0) as usize;
                    if a >= k {
                        return Err(Error::InvalidArgument(format!("action {a} out of range")));
                    }
                    mask.set(i, a, 1.0);
                }
                let picked = tape.mul(log_probs, tape.constant(mask))?;
                Ok(tape.sum(picked, Axis::Features))
            }
            DistVars::Gaussian { mean, log_std } => {
                let [n, k] = tape.shape(mean);
                if actions.shape() != [n, k] {
                    return Err(Error::Shape {
                        op: "log_prob",
                        lhs: [n, k],
                        rhs: actions.shape(),
                    });
                }
                let diff = tape.sub(tape.constant(actions.clone()), mean)?;
                let inv_std = tape.exp(tape.neg(log_std));
                let z = tape.mul(diff, inv_std)?;
                let quad = tape.scale(tape.sum(tape.square(z), Axis::Features), -0.5);
                let norm = tape.add_scalar(tape.sum(log_std, Axis::All), 0.5 * k as f64 * (2.0 * PI).ln());
                tape.sub(quad, norm)
            }
        }
    }

    /// Per-row entropy, `[n, 1]` (Gaussian entropy does not depend on the row).
    pub fn entropy(&self, tape: &Tape) -> Result<Var> {
        match *self {
            DistVars::Categorical { log_probs } => {
                let p = tape.exp(log_probs);
                let plogp = tape.mul(p, log_probs)?;
                Ok(tape.neg(tape.sum(plogp, Axis::Features)))
            }
            DistVars::Gaussian { mean, log_std } => {
                let [n, k] = tape.shape(mean);
                let h = tape.add_scalar(
                    tape.sum(log_std, Axis::All),
                    0.5 * k as f64 * (2.0 * PI * std::f64::consts::E).ln(),
                );
                tape.add(tape.constant(Tensor::zeros(n, 1)), h)
            }
        }
    }

    /// Row-wise `KL(self ‖ other)`, `[n, 1]`, differentiable through both.
    pub fn kl(&self, tape: &Tape, other: &DistVars) -> Result<Var> {
        match (*self, *other) {
            (DistVars::Categorical { log_probs: lp }, DistVars::Categorical { log_probs: lq }) => {
                let p = tape.exp(lp);
                let d = tape.sub(lp, lq)?;
                Ok(tape.sum(tape.mul(p, d)?, Axis::Features))
            }
            (
                DistVars::Gaussian { mean: mp, log_std: sp },
                DistVars::Gaussian { mean: mq, log_std: sq },
            ) => {
                let log_ratio = tape.sub(sq, sp)?;
                let var_p = tape.exp(tape.scale(sp, 2.0));
                let diff2 = tape.square(tape.sub(mp, mq)?);
                let num = tape.add(diff2, var_p)?;
                let half_inv_var_q = tape.scale(tape.exp(tape.scale(sq, -2.0)), 0.5);
                let per_dim = tape.add(tape.mul(num, half_inv_var_q)?, log_ratio)?;
                Ok(tape.add_scalar(tape.sum(per_dim, Axis::Features), -0.5 * tape.shape(mp)[1] as f64))
            }
            _ => Err(Error::DistributionMismatch("KL between different kinds".into())),
        }
    }

    /// Plain-value distribution of row `i`.
    pub fn row(&self, tape: &Tape, i: usize) -> ActionDistribution {
        match *self {
            DistVars::Categorical { log_probs } => ActionDistribution::Categorical {
                probs: tape.value(log_probs).row_slice(i).iter().map(|l| l.exp()).collect(),
            },
            DistVars::Gaussian { mean, log_std } => ActionDistribution::DiagonalGaussian {
                mean: tape.value(mean).row_slice(i).to_vec(),
                std: tape.value(log_std).data().iter().map(|l| l.exp()).collect(),
            },
        }
    }
}

fn network_input(obs: &Tensor, prefs: &Tensor) -> Result<Tensor> {
    if obs.rows() != prefs.rows() {
        return Err(Error::Shape {
            op: "network_input",
            lhs: obs.shape(),
            rhs: prefs.shape(),
        });
    }
    let mut data = Vec::with_capacity(obs.rows() * (obs.cols() + prefs.cols()));
    for i in 0..obs.rows() {
        data.extend_from_slice(obs.row_slice(i));
        data.extend_from_slice(prefs.row_slice(i));
    }
    Tensor::new(obs.rows(), obs.cols() + prefs.cols(), data)
}

fn ensure_finite(t: &Tensor, what: &str) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} produced a non-finite output")))
    }
}

/// Preference-conditioned policy `π(a | s, ω)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Actor {
    pub mlp: Mlp,
    /// `[1, action_dim]` for continuous spaces.
    pub log_std: Option<Tensor>,
    pub action_space: ActionSpace,
    pub obs_dim: usize,
    pub objectives: usize,
}

impl Actor {
    pub fn new(
        obs_dim: usize,
        objectives: usize,
        action_space: ActionSpace,
        hidden: &[usize],
        log_std_init: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut widths = vec![obs_dim + objectives];
        widths.extend_from_slice(hidden);
        widths.push(action_space.head_width());
        let mlp = Mlp::new(&widths, 0.01, rng)?;
        let log_std = match action_space {
            ActionSpace::Continuous { dim, .. } => Some(Tensor::filled(1, dim, log_std_init)),
            ActionSpace::Discrete { .. } => None,
        };
        Ok(Self {
            mlp,
            log_std,
            action_space,
            obs_dim,
            objectives,
        })
    }

    /// Distributions for a batch of `(observation, ω)` rows.
    pub fn distributions(&self, obs: &Tensor, prefs: &Tensor) -> Result<Vec<ActionDistribution>> {
        let out = self.mlp.forward(&network_input(obs, prefs)?)?;
        ensure_finite(&out, "actor")?;
        Ok((0..out.rows())
            .map(|i| match &self.log_std {
                None => ActionDistribution::from_logits(out.row_slice(i)),
                Some(ls) => ActionDistribution::DiagonalGaussian {
                    mean: out.row_slice(i).to_vec(),
                    std: ls.data().iter().map(|l| l.exp()).collect(),
                },
            })
            .collect())
    }

    pub fn distribution(&self, obs: &[f64], pref: &[f64]) -> Result<ActionDistribution> {
        let mut d = self.distributions(&Tensor::row(obs), &Tensor::row(pref))?;
        Ok(d.remove(0))
    }

    /// Samples an action and returns it with its exact log-probability.
    pub fn act(&self, obs: &[f64], pref: &[f64], rng: &mut impl Rng) -> Result<(Action, f64)> {
        let dist = self.distribution(obs, pref)?;
        let a = dist.sample(rng);
        let lp = dist.log_prob(&a)?;
        Ok((a, lp))
    }

    /// Argmax / mean action.
    pub fn act_greedy(&self, obs: &[f64], pref: &[f64]) -> Result<Action> {
        Ok(self.distribution(obs, pref)?.mode())
    }

    pub fn bind(&self, tape: &Tape) -> BoundActor {
        BoundActor {
            mlp: self.mlp.bind(tape),
            log_std: self.log_std.as_ref().map(|t| tape.param(t.clone())),
        }
    }
}

impl Module for Actor {
    fn named_parameters(&self) -> Vec<(String, &Tensor)> {
        let mut p = self.mlp.named_parameters();
        if let Some(ls) = &self.log_std {
            p.push(("log_std".into(), ls));
        }
        p
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.mlp.parameters_mut();
        if let Some(ls) = &mut self.log_std {
            p.push(ls);
        }
        p
    }
}

pub struct BoundActor {
    mlp: BoundMlp,
    log_std: Option<Var>,
}

impl BoundActor {
    pub fn forward(&self, tape: &Tape, obs: &Tensor, prefs: &Tensor) -> Result<DistVars> {
        let x = tape.constant(network_input(obs, prefs)?);
        let out = self.mlp.forward(tape, x)?;
        ensure_finite(&tape.value(out), "actor")?;
        Ok(match self.log_std {
            None => DistVars::Categorical {
                log_probs: tape.log_softmax(out),
            },
            Some(log_std) => DistVars::Gaussian { mean: out, log_std },
        })
    }

    /// Leaves in [`Module::parameters`] order.
    pub fn vars(&self) -> Vec<Var> {
        let mut v = self.mlp.vars();
        v.extend(self.log_std);
        v
    }
}

/// Differentiable `(log π(a|s,ω), entropy, distribution)` for a batch.
pub fn evaluate(
    tape: &Tape,
    actor: &BoundActor,
    obs: &Tensor,
    prefs: &Tensor,
    actions: &Tensor,
) -> Result<(Var, Var, DistVars)> {
    let dist = actor.forward(tape, obs, prefs)?;
    let lp = dist.log_prob(tape, actions)?;
    let ent = dist.entropy(tape)?;
    Ok((lp, ent, dist))
}

/// Shared body with `d` scalar heads predicting unweighted per-objective
/// values `V^(i)(s, ω)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiHeadCritic {
    pub mlp: Mlp,
    pub obs_dim: usize,
    pub objectives: usize,
}

impl MultiHeadCritic {
    pub fn new(obs_dim: usize, objectives: usize, hidden: &[usize], rng: &mut impl Rng) -> Result<Self> {
        let mut widths = vec![obs_dim + objectives];
        widths.extend_from_slice(hidden);
        widths.push(objectives);
        Ok(Self {
            mlp: Mlp::new(&widths, 1.0, rng)?,
            obs_dim,
            objectives,
        })
    }

    /// `[n, d]` values for a batch.
    pub fn values(&self, obs: &Tensor, prefs: &Tensor) -> Result<Tensor> {
        let v = self.mlp.forward(&network_input(obs, prefs)?)?;
        ensure_finite(&v, "critic")?;
        Ok(v)
    }

    pub fn value(&self, obs: &[f64], pref: &[f64]) -> Result<Vec<f64>> {
        Ok(self.values(&Tensor::row(obs), &Tensor::row(pref))?.into_data())
    }

    pub fn bind(&self, tape: &Tape) -> BoundMlp {
        self.mlp.bind(tape)
    }

    pub fn forward(bound: &BoundMlp, tape: &Tape, obs: &Tensor, prefs: &Tensor) -> Result<Var> {
        let x = tape.constant(network_input(obs, prefs)?);
        bound.forward(tape, x)
    }
}

impl Module for MultiHeadCritic {
    fn named_parameters(&self) -> Vec<(String, &Tensor)> {
        self.mlp.named_parameters()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.mlp.parameters_mut()
    }
}

/// Exact number of scalar parameters.
pub fn count_params(model: &impl Module) -> usize {
    model.param_count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(42)
    }

    #[test]
    fn uniform_categorical_log_prob_and_entropy() {
        let d = ActionDistribution::from_logits(&[0.3; 4]);
        let mut r = rng();
        for _ in 0..10 {
            let a = d.sample(&mut r);
            assert!((d.log_prob(&a).unwrap() - 0.25f64.ln()).abs() < 1e-15);
        }
        assert!((d.entropy() - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn standard_normal_at_zero() {
        let d = ActionDistribution::DiagonalGaussian { mean: vec![0.0], std: vec![1.0] };
        let lp = d.log_prob(&Action::Continuous(vec![0.0])).unwrap();
        assert!((lp + 0.5 * (2.0 * PI).ln()).abs() < 1e-15);
        let d3 = ActionDistribution::DiagonalGaussian { mean: vec![0.0; 3], std: vec![1.0; 3] };
        let expect = 3.0 * 0.5 * (2.0 * PI * std::f64::consts::E).ln();
        assert!((d3.entropy() - expect).abs() < 1e-12);
    }

    #[test]
    fn categorical_sampling_frequencies() {
        let d = ActionDistribution::Categorical { probs: vec![0.7, 0.3] };
        let mut r = rng();
        let n = 100_000;
        let zeros = (0..n).filter(|_| d.sample(&mut r) == Action::Discrete(0)).count();
        assert!((zeros as f64 / n as f64 - 0.7).abs() < 0.01);
    }

    #[test]
    fn kl_examples() {
        let g0 = ActionDistribution::DiagonalGaussian { mean: vec![0.0], std: vec![1.0] };
        let g1 = ActionDistribution::DiagonalGaussian { mean: vec![1.0], std: vec![1.0] };
        assert_eq!(g0.kl(&g0).unwrap(), 0.0);
        assert!((g0.kl(&g1).unwrap() - 0.5).abs() < 1e-15);

        // direct summation at high precision: (1-e)ln(2(1-e)) + e ln(2e)
        let e = 1e-9f64;
        let oracle = (1.0 - e) * (2.0 * (1.0 - e)).ln() + e * (2.0 * e).ln();
        let p = ActionDistribution::Categorical { probs: vec![1.0 - e, e] };
        let q = ActionDistribution::Categorical { probs: vec![0.5, 0.5] };
        let kl = p.kl(&q).unwrap();
        assert!((kl - oracle).abs() < 1e-12);
        assert!((kl - 2f64.ln()).abs() < 1e-7);

        let z = ActionDistribution::Categorical { probs: vec![1.0, 0.0] };
        assert_eq!(q.kl(&z).unwrap(), f64::INFINITY);
        assert!(q.kl(&g0).is_err());
    }

    #[test]
    fn tape_kl_matches_closed_form() {
        let t = Tape::new();
        let lp = t.log_softmax(t.param(Tensor::row(&[0.2, -0.4, 1.0])));
        let lq = t.log_softmax(t.param(Tensor::row(&[0.0, 0.3, -0.2])));
        let a = DistVars::Categorical { log_probs: lp };
        let b = DistVars::Categorical { log_probs: lq };
        let kl = t.scalar(a.kl(&t, &b).unwrap());
        let plain = a.row(&t, 0).kl(&b.row(&t, 0)).unwrap();
        assert!((kl - plain).abs() < 1e-14);

        let g1 = DistVars::Gaussian {
            mean: t.param(Tensor::row(&[0.5, -1.0])),
            log_std: t.param(Tensor::row(&[0.1, -0.3])),
        };
        let g2 = DistVars::Gaussian {
            mean: t.param(Tensor::row(&[0.0, 0.2])),
            log_std: t.param(Tensor::row(&[-0.2, 0.4])),
        };
        let kl = t.scalar(g1.kl(&t, &g2).unwrap());
        let plain = g1.row(&t, 0).kl(&g2.row(&t, 0)).unwrap();
        assert!((kl - plain).abs() < 1e-14);
    }

    #[test]
    fn score_is_zero_at_gaussian_mean() {
        let t = Tape::new();
        let mean = t.param(Tensor::row(&[0.7]));
        let log_std = t.param(Tensor::row(&[0.0]));
        let d = DistVars::Gaussian { mean, log_std };
        let lp = d.log_prob(&t, &Tensor::row(&[0.7])).unwrap();
        let g = t.backward(t.sum(lp, Axis::All)).unwrap();
        assert_eq!(g.get(mean).unwrap().item(), 0.0);
    }

    #[test]
    fn zeroed_critic_head_gives_zero_values() {
        let mut c = MultiHeadCritic::new(2, 3, &[64, 64], &mut rng()).unwrap();
        let last = c.mlp.layers_mut().last_mut().unwrap();
        last.weight.data_mut().fill(0.0);
        last.bias.data_mut().fill(0.0);
        let v = c.value(&[0.3, -0.1], &[0.2, 0.3, 0.5]).unwrap();
        assert_eq!(v, vec![0.0; 3]);
    }

    #[test]
    fn critic_depends_on_preference() {
        let c = MultiHeadCritic::new(2, 2, &[64, 64], &mut rng()).unwrap();
        let a = c.value(&[0.3, -0.1], &[1.0, 0.0]).unwrap();
        let b = c.value(&[0.3, -0.1], &[0.0, 1.0]).unwrap();
        assert_eq!(a.len(), 2);
        assert_ne!(a, b);
    }

    #[test]
    fn parameter_counts() {
        let space = ActionSpace::Continuous { dim: 1, low: -1.0, high: 1.0 };
        let actor = Actor::new(2, 2, space, &[64, 64], 0.0, &mut rng()).unwrap();
        // (4*64+64) + (64*64+64) + (64*1+1) + 1 log-std entry
        assert_eq!(count_params(&actor), 320 + 4160 + 65 + 1);
        let critic = MultiHeadCritic::new(2, 2, &[64, 64], &mut rng()).unwrap();
        assert_eq!(count_params(&critic), 320 + 4160 + 130);
        assert_eq!(
            count_params(&actor) + count_params(&critic),
            Mlp::closed_form_count(&[4, 64, 64, 1]) + 1 + Mlp::closed_form_count(&[4, 64, 64, 2])
        );
    }

    #[test]
    fn act_matches_evaluate() {
        let space = ActionSpace::Discrete { n: 4 };
        let actor = Actor::new(2, 2, space, &[16], 0.0, &mut rng()).unwrap();
        let (a, lp) = actor.act(&[0.1, 0.2], &[0.4, 0.6], &mut rng()).unwrap();
        let t = Tape::new();
        let bound = actor.bind(&t);
        let (lpv, _, _) = evaluate(
            &t,
            &bound,
            &Tensor::row(&[0.1, 0.2]),
            &Tensor::row(&[0.4, 0.6]),
            &Tensor::row(&encode_action(&a)),
        )
        .unwrap();
        assert!((t.scalar(lpv) - lp).abs() < 1e-12);
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let space = ActionSpace::Discrete { n: 2 };
        let mut actor = Actor::new(1, 2, space, &[4], 0.0, &mut rng()).unwrap();
        actor.mlp.layers_mut()[0].bias.data_mut()[0] = f64::NAN;
        assert!(actor.distribution(&[0.0], &[0.5, 0.5]).is_err());
    }
}
