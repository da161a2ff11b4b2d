//! Critic, clipped-surrogate, diversity and entropy objectives, plus the
//! three weighting modes for combining per-objective surrogates.
//!
//! Loss builders operate on a [`Tape`]. Advantages are data (no gradient),
//! so any preprocessing of them happens on plain tensors before the
//! surrogate is built.

use std::fmt;
use std::str::FromStr;

use crate::advantage::normalize_per_objective;
use crate::diff::{Axis, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::policy::DistVars;

/// Where the preference weights enter the actor objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum WeightingMode {
    /// Per-objective surrogates on unweighted advantages, weighted last.
    Lsw,
    /// Weights multiply the advantages inside each per-objective surrogate.
    Mvs,
    /// Advantages are scalarized to `ωᵀA` before a single surrogate.
    Es,
}

impl WeightingMode {
    pub const ALL: [WeightingMode; 3] = [Self::Lsw, Self::Mvs, Self::Es];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Lsw => "lsw",
            Self::Mvs => "mvs",
            Self::Es => "es",
        }
    }
}

impl fmt::Display for WeightingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WeightingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lsw" => Ok(Self::Lsw),
            "mvs" => Ok(Self::Mvs),
            "es" => Ok(Self::Es),
            other => Err(Error::Config(format!(
                "unknown weighting mode {other:?}; expected lsw, mvs or es"
            ))),
        }
    }
}

/// Scalar results and diagnostics of one minibatch update.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossBundle {
    pub actor_loss: f64,
    pub critic_loss: f64,
    /// Per surrogate column, fraction of samples where the clipped branch is
    /// the active minimum.
    pub clip_fraction: Vec<f64>,
    pub mean_kl: f64,
    pub entropy: f64,
    /// Mean of `KL - α‖ω-ω′‖₁`.
    pub diversity_residual: f64,
    pub actor_grad_norm: f64,
    pub critic_grad_norm: f64,
}

/// Plain-value mean of `min(ρA, clip(ρ, 1-ε, 1+ε)A)`.
pub fn clip_surrogate(ratio: &[f64], adv: &[f64], eps: f64) -> f64 {
    if ratio.is_empty() {
        return 0.0;
    }
    ratio
        .iter()
        .zip(adv)
        .map(|(&r, &a)| (r * a).min(r.clamp(1.0 - eps, 1.0 + eps) * a))
        .sum::<f64>()
        / ratio.len() as f64
}

/// `-Σ ωᵢ L⁽ⁱ⁾ - β H + λ_div L_div` on already-reduced scalars.
pub fn combine_lsw(
    surrogates: &[f64],
    weights: &[f64],
    entropy: f64,
    diversity: f64,
    beta: f64,
    lambda_div: f64,
) -> f64 {
    let weighted: f64 = surrogates.iter().zip(weights).map(|(l, w)| l * w).sum();
    -weighted - beta * entropy + lambda_div * diversity
}

/// Elementwise `min(ρA, clip(ρ)A)` for ratio `[n, 1]` and advantages
/// `[n, k]`; result `[n, k]`.
pub fn surrogate_terms(tape: &Tape, ratio: Var, adv: &Tensor, eps: f64) -> Result<Var> {
    let a = tape.constant(adv.clone());
    let unclipped = tape.mul(ratio, a)?;
    let clipped = tape.mul(tape.clamp(ratio, 1.0 - eps, 1.0 + eps), a)?;
    tape.minimum(unclipped, clipped)
}

/// Per-objective surrogates `L⁽ⁱ⁾`, `[1, d]`.
pub fn per_objective_surrogates(tape: &Tape, ratio: Var, adv: &Tensor, eps: f64) -> Result<Var> {
    Ok(tape.mean(surrogate_terms(tape, ratio, adv, eps)?, Axis::Batch))
}

fn check_prefs(adv: &Tensor, prefs: &Tensor) -> Result<()> {
    if adv.shape() != prefs.shape() {
        return Err(Error::Shape {
            op: "actor_loss",
            lhs: adv.shape(),
            rhs: prefs.shape(),
        });
    }
    Ok(())
}

fn hadamard(a: &Tensor, b: &Tensor) -> Tensor {
    let mut out = a.clone();
    for (x, y) in out.data_mut().iter_mut().zip(b.data()) {
        *x *= y;
    }
    out
}

/// Advantage matrix actually fed to the surrogate for `mode`.
///
/// * LSW: `P(A)`, weights applied after the surrogate.
/// * MVS: `P(ω ⊙ A)`.
/// * ES: `P(ωᵀA)`, a single column.
///
/// `P` is per-column standardization when `normalize` is set, identity
/// otherwise.
pub fn surrogate_input(mode: WeightingMode, adv: &Tensor, prefs: &Tensor, normalize: bool) -> Result<Tensor> {
    check_prefs(adv, prefs)?;
    let pre = match mode {
        WeightingMode::Lsw => adv.clone(),
        WeightingMode::Mvs => hadamard(adv, prefs),
        WeightingMode::Es => {
            let w = hadamard(adv, prefs);
            Tensor::column(&(0..w.rows()).map(|i| w.row_slice(i).iter().sum()).collect::<Vec<_>>())
        }
    };
    Ok(if normalize { normalize_per_objective(&pre).0 } else { pre })
}

/// Surrogate part of the actor loss (sign already flipped for minimization).
pub fn actor_surrogate_loss(
    tape: &Tape,
    mode: WeightingMode,
    ratio: Var,
    adv: &Tensor,
    prefs: &Tensor,
    eps: f64,
    normalize: bool,
) -> Result<Var> {
    let input = surrogate_input(mode, adv, prefs, normalize)?;
    let terms = surrogate_terms(tape, ratio, &input, eps)?;
    let per_sample = match mode {
        WeightingMode::Lsw => tape.mul(terms, tape.constant(prefs.clone()))?,
        WeightingMode::Mvs | WeightingMode::Es => terms,
    };
    let per_column = tape.mean(per_sample, Axis::Batch);
    Ok(tape.neg(tape.sum(per_column, Axis::All)))
}

pub fn actor_loss_lsw(tape: &Tape, ratio: Var, adv: &Tensor, prefs: &Tensor, eps: f64, normalize: bool) -> Result<Var> {
    actor_surrogate_loss(tape, WeightingMode::Lsw, ratio, adv, prefs, eps, normalize)
}

pub fn actor_loss_mvs(tape: &Tape, ratio: Var, adv: &Tensor, prefs: &Tensor, eps: f64, normalize: bool) -> Result<Var> {
    actor_surrogate_loss(tape, WeightingMode::Mvs, ratio, adv, prefs, eps, normalize)
}

pub fn actor_loss_es(tape: &Tape, ratio: Var, adv: &Tensor, prefs: &Tensor, eps: f64, normalize: bool) -> Result<Var> {
    actor_surrogate_loss(tape, WeightingMode::Es, ratio, adv, prefs, eps, normalize)
}

/// `(1/d) Σᵢ mean_t (V⁽ⁱ⁾ - G⁽ⁱ⁾)²`, before the value coefficient.
pub fn critic_loss(tape: &Tape, values: Var, returns: &Tensor) -> Result<Var> {
    let diff = tape.sub(values, tape.constant(returns.clone()))?;
    Ok(tape.mean(tape.square(diff), Axis::All))
}

/// Row-wise `‖ω - ω′‖₁`, `[n, 1]`.
pub fn preference_gaps(prefs: &Tensor, distractors: &Tensor) -> Result<Tensor> {
    if prefs.shape() != distractors.shape() {
        return Err(Error::Shape {
            op: "preference_gaps",
            lhs: prefs.shape(),
            rhs: distractors.shape(),
        });
    }
    Ok(Tensor::column(
        &(0..prefs.rows())
            .map(|i| {
                prefs.row_slice(i)
                    .iter()
                    .zip(distractors.row_slice(i))
                    .map(|(a, b)| (a - b).abs())
                    .sum()
            })
            .collect::<Vec<_>>(),
    ))
}

/// Diversity regularizer and its per-row KL, both differentiable through
/// both distributions: `mean (KL(π_ω ‖ π_ω′) - α‖ω-ω′‖₁)²`.
pub fn diversity_loss(
    tape: &Tape,
    dist: &DistVars,
    distractor: &DistVars,
    gaps: &Tensor,
    alpha: f64,
) -> Result<(Var, Var)> {
    let kl = dist.kl(tape, distractor)?;
    let residual = tape.sub(kl, tape.constant(gaps.map(|g| alpha * g)))?;
    Ok((tape.mean(tape.square(residual), Axis::All), kl))
}

/// Mean entropy bonus term.
pub fn mean_entropy(tape: &Tape, entropy: Var) -> Var {
    tape.mean(entropy, Axis::All)
}

/// Per-column fraction of samples with `ρ` outside `[1-ε, 1+ε]`.
pub fn clip_fraction(ratio: &[f64], eps: f64) -> f64 {
    if ratio.is_empty() {
        return 0.0;
    }
    ratio.iter().filter(|r| (**r - 1.0).abs() > eps).count() as f64 / ratio.len() as f64
}

/// `sign(x)|x|^γ`: a monotone but not degree-1 homogeneous preprocessing map.
pub fn power_operator(x: f64, gamma: f64) -> f64 {
    x.signum() * x.abs().powf(gamma)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_surrogate_examples() {
        assert!((clip_surrogate(&[1.5], &[1.0], 0.2) - 1.2).abs() < 1e-15);
        assert!((clip_surrogate(&[0.5], &[-1.0], 0.2) + 0.8).abs() < 1e-15);
        assert_eq!(clip_surrogate(&[1.0, 1.0], &[3.0, -7.0], 0.2), -2.0);
    }

    #[test]
    fn combine_lsw_example() {
        let l = combine_lsw(&[1.2, -0.8], &[0.5, 0.5], 0.0, 0.0, 0.0, 0.0);
        assert!((l + 0.2).abs() < 1e-15);
        assert_eq!(combine_lsw(&[1.0], &[1.0], 2.0, 3.0, 0.5, 0.1), -1.0 - 1.0 + 0.3);
    }

    #[test]
    fn es_scalarization_examples() {
        let a = Tensor::row(&[2.0, -1.0]);
        let w = Tensor::row(&[0.5, 0.5]);
        let s = surrogate_input(WeightingMode::Es, &a, &w, false).unwrap();
        assert_eq!(s.item(), 0.5);
        let s = surrogate_input(WeightingMode::Es, &Tensor::row(&[1.0, 1.0]), &w, false).unwrap();
        assert_eq!(s.item(), 1.0);
    }

    #[test]
    fn critic_loss_example_and_gradient() {
        let t = Tape::new();
        let v = t.param(Tensor::row(&[0.0, 0.0]));
        let l = critic_loss(&t, v, &Tensor::row(&[2.0, 4.0])).unwrap();
        assert_eq!(t.scalar(l), 10.0);
        let g = t.backward(l).unwrap();
        // 2/(d T) (V - G)
        assert_eq!(g.get(v).unwrap().data(), &[-2.0, -4.0]);
    }

    #[test]
    fn one_hot_weights_reduce_to_single_objective() {
        let t = Tape::new();
        let ratio = t.param(Tensor::column(&[0.9, 1.3, 1.05]));
        let adv = Tensor::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0], vec![-1.0, 0.1]]).unwrap();
        let prefs = Tensor::from_rows(&[[1.0, 0.0]; 3]).unwrap();
        let lsw = t.scalar(actor_loss_lsw(&t, ratio, &adv, &prefs, 0.2, false).unwrap());
        let mvs = t.scalar(actor_loss_mvs(&t, ratio, &adv, &prefs, 0.2, false).unwrap());
        let single = -clip_surrogate(&[0.9, 1.3, 1.05], &[1.0, 0.5, -1.0], 0.2);
        assert!((lsw - single).abs() < 1e-15);
        assert!((mvs - single).abs() < 1e-15);
    }

    #[test]
    fn zero_advantage_gives_zero_surrogate_gradient() {
        let t = Tape::new();
        let ratio = t.param(Tensor::column(&[0.9, 1.1]));
        let adv = Tensor::zeros(2, 2);
        let prefs = Tensor::from_rows(&[vec![0.3, 0.7], vec![0.6, 0.4]]).unwrap();
        for mode in WeightingMode::ALL {
            let l = actor_surrogate_loss(&t, mode, ratio, &adv, &prefs, 0.2, true).unwrap();
            assert_eq!(t.scalar(l), 0.0);
        }
        let l = actor_loss_lsw(&t, ratio, &adv, &prefs, 0.2, false).unwrap();
        let g = t.backward(l).unwrap();
        assert!(g.get(ratio).unwrap().data().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn toy_power_operator_is_not_homogeneous() {
        let w: f64 = 0.25;
        let a = 4.0;
        assert_eq!(power_operator(w * a, 0.5).abs(), 1.0);
        assert_eq!(w * power_operator(a, 0.5).abs(), 0.5);
    }

    #[test]
    fn diversity_zero_on_manifold() {
        let t = Tape::new();
        let d1 = DistVars::Gaussian {
            mean: t.param(Tensor::row(&[1.0])),
            log_std: t.param(Tensor::row(&[0.0])),
        };
        let d2 = DistVars::Gaussian {
            mean: t.param(Tensor::row(&[0.0])),
            log_std: t.param(Tensor::row(&[0.0])),
        };
        // KL = m²/2 = 0.5 = α‖ω-ω′‖₁ with α = 1, gap 0.5
        let gaps = preference_gaps(&Tensor::row(&[0.5, 0.5]), &Tensor::row(&[0.75, 0.25])).unwrap();
        let (l, _) = diversity_loss(&t, &d1, &d2, &gaps, 1.0).unwrap();
        assert_eq!(t.scalar(l), 0.0);
        let (l, _) = diversity_loss(&t, &d2, &d2, &Tensor::column(&[0.0]), 1.0).unwrap();
        assert_eq!(t.scalar(l), 0.0);
    }

    #[test]
    fn weighting_mode_parses() {
        for m in WeightingMode::ALL {
            assert_eq!(m.as_str().parse::<WeightingMode>().unwrap(), m);
        }
        assert!("early".parse::<WeightingMode>().is_err());
    }

    #[test]
    fn clip_fraction_counts_outside() {
        assert_eq!(clip_fraction(&[1.0, 1.3, 0.7, 1.1], 0.2), 0.5);
    }
}
