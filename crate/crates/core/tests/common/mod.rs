//! Independent reference implementations used by integration and acceptance
//! tests. Nothing here calls the library routine it is meant to check.

#![allow(dead_code)]

use d3po_core::diff::{clip_global_norm, Adam, Axis, Module, Tape, Tensor};
use d3po_core::momdp::ActionSpace;
use d3po_core::policy::{encode_action, Actor, MultiHeadCritic};
use d3po_core::trainer::{Agent, TrainConfig, UpdateBatch};
use rand::seq::SliceRandom;
use rand::Rng;

/// GAE by forward summation `A_t = Σ_l (γλ)^l δ_{t+l}`, stopping at the
/// first terminal step.
pub fn gae_forward(rewards: &[Vec<f64>], values: &[Vec<f64>], bootstrap: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> Vec<Vec<f64>> {
    let t_len = rewards.len();
    let d = bootstrap.len();
    let next_value = |t: usize, i: usize| -> f64 {
        if dones[t] {
            0.0
        } else if t + 1 < t_len {
            values[t + 1][i]
        } else {
            bootstrap[i]
        }
    };
    let mut out = vec![vec![0.0; d]; t_len];
    for t in 0..t_len {
        for i in 0..d {
            let mut acc = 0.0;
            let mut coef = 1.0;
            for k in t..t_len {
                let delta = rewards[k][i] + gamma * next_value(k, i) - values[k][i];
                acc += coef * delta;
                if dones[k] {
                    break;
                }
                coef *= gamma * lambda;
            }
            out[t][i] = acc;
        }
    }
    out
}

/// O(n²) non-dominated subset, duplicates collapsed to first occurrence.
pub fn brute_force_front(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let dominated = |p: &Vec<f64>, q: &Vec<f64>| q.iter().zip(p).all(|(a, b)| a >= b) && q != p;
    let mut out: Vec<Vec<f64>> = Vec::new();
    for p in points {
        if points.iter().any(|q| dominated(p, q)) || out.contains(p) {
            continue;
        }
        out.push(p.clone());
    }
    out
}

/// Monte-Carlo hypervolume: `(estimate, standard error)`.
pub fn hv_monte_carlo(points: &[Vec<f64>], reference: &[f64], samples: usize, rng: &mut impl Rng) -> (f64, f64) {
    let d = reference.len();
    let upper: Vec<f64> = (0..d)
        .map(|i| points.iter().map(|p| p[i]).fold(reference[i], f64::max))
        .collect();
    let box_vol: f64 = (0..d).map(|i| upper[i] - reference[i]).product();
    let mut hits = 0usize;
    let mut x = vec![0.0; d];
    for _ in 0..samples {
        for i in 0..d {
            x[i] = reference[i] + rng.random::<f64>() * (upper[i] - reference[i]);
        }
        if points.iter().any(|p| p.iter().zip(&x).all(|(u, v)| u >= v)) {
            hits += 1;
        }
    }
    let frac = hits as f64 / samples as f64;
    let se = (frac * (1.0 - frac) / samples as f64).sqrt() * box_vol;
    (frac * box_vol, se)
}

/// Lanczos approximation of `ln Γ(x)`, x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

pub fn t_pdf(x: f64, df: f64) -> f64 {
    let ln_norm = ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0) - 0.5 * (df * std::f64::consts::PI).ln();
    (ln_norm - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln()).exp()
}

/// `P(T > t)` by composite Simpson integration of the density over `[0, |t|]`.
pub fn t_sf_integrated(t: f64, df: f64) -> f64 {
    let n = 200_000;
    let b = t.abs();
    let h = b / n as f64;
    let mut s = t_pdf(0.0, df) + t_pdf(b, df);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        s += w * t_pdf(k as f64 * h, df);
    }
    let area = s * h / 3.0;
    if t >= 0.0 {
        0.5 - area
    } else {
        0.5 + area
    }
}

/// Welch one-sided p-value for `mean(a) > mean(b)` via the integration oracle.
pub fn welch_p_oracle(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let stats = |x: &[f64]| {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let v = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
        (m, v, n)
    };
    let (ma, va, na) = stats(a);
    let (mb, vb, nb) = stats(b);
    let se2 = va / na + vb / nb;
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));
    (t, df, t_sf_integrated(t, df))
}

/// Holm adjustment written as the textbook definition:
/// `adj_(i) = max_{j ≤ i} min(1, (m - j + 1) p_(j))`.
pub fn holm_reference(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let mut idx: Vec<usize> = (0..m).collect();
    idx.sort_by(|a, b| p[*a].partial_cmp(&p[*b]).unwrap());
    let mut out = vec![0.0; m];
    for (i, &orig) in idx.iter().enumerate() {
        out[orig] = (0..=i)
            .map(|j| ((m - j) as f64 * p[idx[j]]).min(1.0))
            .fold(0.0, f64::max);
    }
    out
}

/// Relative error `‖a - n‖ / max(‖a‖ + ‖n‖, 1e-12)` over a whole gradient.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt() + numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    diff / scale.max(1e-12)
}

/// Central differences of `f` with respect to every entry of `params`.
pub fn numeric_gradient(params: &[Tensor], h: f64, f: impl Fn(&[Tensor]) -> f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut work: Vec<Tensor> = params.to_vec();
    for p in 0..params.len() {
        for k in 0..params[p].len() {
            let orig = work[p].data()[k];
            work[p].data_mut()[k] = orig + h;
            let up = f(&work);
            work[p].data_mut()[k] = orig - h;
            let down = f(&work);
            work[p].data_mut()[k] = orig;
            out.push((up - down) / (2.0 * h));
        }
    }
    out
}

/// Single-objective PPO update written directly against the tape: standardized
/// scalar advantages, one clipped surrogate, critic MSE scaled by the value
/// coefficient, per-network global-norm clipping and Adam.
pub fn plain_ppo_update(
    actor: &mut Actor,
    critic: &mut MultiHeadCritic,
    actor_opt: &mut Adam,
    critic_opt: &mut Adam,
    batch: &UpdateBatch,
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) {
    let n = batch.old_log_probs.len();
    let mb = cfg.batch_size / cfg.minibatches;
    let mut order: Vec<usize> = (0..n).collect();
    let input = |idx: &[usize]| -> Tensor {
        let rows: Vec<Vec<f64>> = idx
            .iter()
            .map(|&i| {
                let mut r = batch.obs.row_slice(i).to_vec();
                r.push(1.0);
                r
            })
            .collect();
        Tensor::from_rows(&rows).unwrap()
    };
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for idx in order.chunks(mb) {
            let x = input(idx);
            let g: Vec<f64> = idx.iter().map(|&i| batch.returns.get(i, 0)).collect();
            // critic
            let tape = Tape::new();
            let net = critic.mlp.bind(&tape);
            let v = net.forward(&tape, tape.constant(x.clone())).unwrap();
            let diff = tape.sub(v, tape.constant(Tensor::column(&g))).unwrap();
            let loss = tape.scale(tape.mean(tape.square(diff), Axis::All), cfg.value_coef);
            let grads = tape.backward(loss).unwrap();
            let mut gs: Vec<Tensor> = net.vars().iter().map(|&p| grads.get_or_zeros(p, tape.shape(p))).collect();
            clip_global_norm(&mut gs, cfg.max_grad_norm);
            critic_opt.step(critic.parameters_mut(), &gs).unwrap();

            // actor
            let raw: Vec<f64> = idx.iter().map(|&i| batch.advantages.get(i, 0)).collect();
            let mean = raw.iter().sum::<f64>() / raw.len() as f64;
            let std = (raw.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / raw.len() as f64).sqrt();
            let adv: Vec<f64> = raw.iter().map(|a| (a - mean) / std.max(1e-8)).collect();
            let tape = Tape::new();
            let net = actor.mlp.bind(&tape);
            let logits = net.forward(&tape, tape.constant(x)).unwrap();
            let logp_all = tape.log_softmax(logits);
            let mut mask = Tensor::zeros(idx.len(), tape.shape(logp_all)[1]);
            for (r, &i) in idx.iter().enumerate() {
                mask.set(r, batch.actions.get(i, 0) as usize, 1.0);
            }
            let logp = tape.sum(tape.mul(logp_all, tape.constant(mask)).unwrap(), Axis::Features);
            let old: Vec<f64> = idx.iter().map(|&i| batch.old_log_probs[i]).collect();
            let ratio = tape.exp(tape.sub(logp, tape.constant(Tensor::column(&old))).unwrap());
            let a = tape.constant(Tensor::column(&adv));
            let s1 = tape.mul(ratio, a).unwrap();
            let s2 = tape.mul(tape.clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps), a).unwrap();
            let loss = tape.neg(tape.mean(tape.minimum(s1, s2).unwrap(), Axis::All));
            let grads = tape.backward(loss).unwrap();
            let mut gs: Vec<Tensor> = net.vars().iter().map(|&p| grads.get_or_zeros(p, tape.shape(p))).collect();
            clip_global_norm(&mut gs, cfg.max_grad_norm);
            actor_opt.step(actor.parameters_mut(), &gs).unwrap();
        }
    }
}

/// Random single-objective discrete batch together with a fresh agent.
pub fn single_objective_fixture(rng: &mut impl Rng, cfg: &TrainConfig) -> (Agent, UpdateBatch) {
    let obs_dim = 3;
    let n = cfg.batch_size;
    let agent = Agent::with_dims(obs_dim, 1, ActionSpace::Discrete { n: 3 }, cfg, rng).unwrap();
    let obs = Tensor::new(n, obs_dim, (0..n * obs_dim).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let prefs = Tensor::filled(n, 1, 1.0);
    let dists = agent.actor.distributions(&obs, &prefs).unwrap();
    let mut actions = Vec::new();
    let mut old = Vec::new();
    for d in &dists {
        let a = d.sample(rng);
        old.push(d.log_prob(&a).unwrap());
        actions.extend(encode_action(&a));
    }
    let advantages = Tensor::new(n, 1, (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
    let returns = Tensor::new(n, 1, (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
    let batch = UpdateBatch {
        obs,
        actions: Tensor::new(n, 1, actions).unwrap(),
        prefs,
        old_log_probs: old,
        advantages,
        returns,
    };
    (agent, batch)
}

/// Greedy dedupe: number of points pairwise farther apart than `tol` (L2).
pub fn distinct_points(points: &[Vec<f64>], tol: f64) -> usize {
    let mut kept: Vec<&Vec<f64>> = Vec::new();
    for p in points {
        let far = kept
            .iter()
            .all(|q| p.iter().zip(q.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() > tol);
        if far {
            kept.push(p);
        }
    }
    kept.len()
}
