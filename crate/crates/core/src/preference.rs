//! Points on the preference simplex: sampling, distractor perturbation and
//! Euclidean projection.

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SUM_TOL: f64 = 1e-9;

/// Non-negative weights summing to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct PreferenceVector(Vec<f64>);

impl TryFrom<Vec<f64>> for PreferenceVector {
    type Error = Error;

    fn try_from(w: Vec<f64>) -> Result<Self> {
        Self::new(w)
    }
}

impl From<PreferenceVector> for Vec<f64> {
    fn from(p: PreferenceVector) -> Self {
        p.0
    }
}

impl PreferenceVector {
    /// Validates that `weights` already lies on the simplex.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidArgument("empty preference".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "preference weights must be finite and non-negative: {weights:?}"
            )));
        }
        let s: f64 = weights.iter().sum();
        if (s - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidArgument(format!(
                "preference weights sum to {s}, not 1"
            )));
        }
        Ok(Self(weights))
    }

    /// Euclidean projection of arbitrary finite weights onto the simplex.
    pub fn project(raw: &[f64]) -> Result<Self> {
        if raw.is_empty() || raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("cannot project {raw:?}")));
        }
        Ok(Self(project_simplex(raw)))
    }

    /// `e_i` in dimension `d`.
    pub fn corner(d: usize, i: usize) -> Self {
        let mut w = vec![0.0; d];
        w[i] = 1.0;
        Self(w)
    }

    pub fn uniform(d: usize) -> Self {
        Self(vec![1.0 / d as f64; d])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dot(&self, v: &[f64]) -> f64 {
        self.0.iter().zip(v).map(|(a, b)| a * b).sum()
    }
}

/// Projects `v` onto `{w ≥ 0, Σw = 1}` in the Euclidean norm using the
/// sort-and-threshold method.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).expect("finite input"));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    let mut w: Vec<f64> = v.iter().map(|x| (x - theta).max(0.0)).collect();
    // Absorb round-off so the sum is exactly representable as 1 within tolerance.
    let s: f64 = w.iter().sum();
    if s > 0.0 {
        w.iter_mut().for_each(|x| *x /= s);
    }
    w
}

/// Uniform draw from the simplex via normalized exponentials.
pub fn sample_uniform(rng: &mut impl Rng, d: usize) -> PreferenceVector {
    assert!(d >= 1, "preference dimension must be positive");
    let mut w: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let s: f64 = w.iter().sum();
    if s > 0.0 {
        w.iter_mut().for_each(|x| *x /= s);
    } else {
        w = vec![1.0 / d as f64; d];
    }
    PreferenceVector(w)
}

/// Distractor preference: Gaussian noise of scale `sigma`, then projection
/// back onto the simplex.
pub fn perturb_distractor(w: &PreferenceVector, sigma: f64, rng: &mut impl Rng) -> PreferenceVector {
    let noisy: Vec<f64> = w
        .as_slice()
        .iter()
        .map(|x| x + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    PreferenceVector(project_simplex(&noisy))
}

/// `Σ |a_i − b_i|`.
pub fn l1_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum())
}

/// Deterministic evaluation grid: every composition of `resolution` into `d`
/// parts, divided by `resolution`. Corners are always included.
pub fn simplex_grid(d: usize, resolution: usize) -> Vec<PreferenceVector> {
    fn rec(d: usize, left: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if d == 1 {
            prefix.push(left);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for k in (0..=left).rev() {
            prefix.push(k);
            rec(d - 1, left - k, prefix, out);
            prefix.pop();
        }
    }
    let resolution = resolution.max(1);
    let mut out = Vec::new();
    rec(d, resolution, &mut Vec::new(), &mut out);
    out.into_iter()
        .map(|c| PreferenceVector(c.into_iter().map(|k| k as f64 / resolution as f64).collect()))
        .collect()
}

/// Smallest grid resolution giving at least `n` points in dimension `d`.
pub fn grid_resolution_for(d: usize, n: usize) -> usize {
    let count = |r: usize| -> usize {
        // C(r + d - 1, d - 1)
        let mut c: u128 = 1;
        for i in 0..(d - 1) {
            c = c * (r + d - 1 - i) as u128 / (i + 1) as u128;
        }
        c.min(usize::MAX as u128) as usize
    };
    let mut r = 1;
    while count(r) < n {
        r += 1;
    }
    r
}
