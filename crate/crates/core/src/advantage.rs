//! Per-objective generalized advantage estimation.

use crate::diff::Tensor;
use crate::error::{Error, Result};

/// Lower bound on the standard deviation used when standardizing a column.
pub const STD_FLOOR: f64 = 1e-8;

/// Unweighted advantages and return targets, both `[T, d]`.
///
/// Invariant: `returns = advantages + values` elementwise, where `values` are
/// the critic predictions the estimate was built from.
#[derive(Clone, Debug, PartialEq)]
pub struct AdvantageMatrix {
    pub advantages: Tensor,
    pub returns: Tensor,
    /// Per-column `(mean, std)` if the advantages were standardized.
    pub stats: Option<Vec<(f64, f64)>>,
}

/// GAE run independently on every objective column.
///
/// `bootstrap` is the critic value after the last step and is ignored when
/// the last step is terminal.
pub fn compute_gae(
    rewards: &Tensor,
    values: &Tensor,
    bootstrap: &[f64],
    dones: &[bool],
    gamma: f64,
    lambda: f64,
) -> Result<AdvantageMatrix> {
    let [t_len, d] = rewards.shape();
    if values.shape() != [t_len, d] {
        return Err(Error::Shape {
            op: "compute_gae",
            lhs: rewards.shape(),
            rhs: values.shape(),
        });
    }
    if bootstrap.len() != d || dones.len() != t_len {
        return Err(Error::Shape {
            op: "compute_gae",
            lhs: [t_len, d],
            rhs: [dones.len(), bootstrap.len()],
        });
    }
    if !(gamma > 0.0 && gamma <= 1.0) || !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!(
            "gamma {gamma} / lambda {lambda} out of range"
        )));
    }
    let mut adv = Tensor::zeros(t_len, d);
    for i in 0..d {
        let mut next_adv = 0.0;
        let mut next_value = bootstrap[i];
        for t in (0..t_len).rev() {
            let live = if dones[t] { 0.0 } else { 1.0 };
            let v = values.get(t, i);
            let delta = rewards.get(t, i) + gamma * next_value * live - v;
            let a = delta + gamma * lambda * live * next_adv;
            adv.set(t, i, a);
            next_adv = a;
            next_value = v;
        }
    }
    let mut returns = adv.clone();
    for (g, v) in returns.data_mut().iter_mut().zip(values.data()) {
        *g += v;
    }
    Ok(AdvantageMatrix {
        advantages: adv,
        returns,
        stats: None,
    })
}

/// Standardizes each column to mean 0 and population std 1.
pub fn normalize_per_objective(a: &Tensor) -> (Tensor, Vec<(f64, f64)>) {
    let [n, d] = a.shape();
    let mut out = a.clone();
    let mut stats = Vec::with_capacity(d);
    for j in 0..d {
        let (mean, std) = column_stats(a, j);
        let std_eff = std.max(STD_FLOOR);
        for i in 0..n {
            out.set(i, j, (a.get(i, j) - mean) / std_eff);
        }
        stats.push((mean, std));
    }
    (out, stats)
}

/// Population mean and standard deviation of column `j`.
pub fn column_stats(a: &Tensor, j: usize) -> (f64, f64) {
    let n = a.rows();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = (0..n).map(|i| a.get(i, j)).sum::<f64>() / n as f64;
    let var = (0..n).map(|i| (a.get(i, j) - mean).powi(2)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

impl AdvantageMatrix {
    pub fn normalized(mut self) -> Self {
        let (a, stats) = normalize_per_objective(&self.advantages);
        self.advantages = a;
        self.stats = Some(stats);
        self
    }
}
