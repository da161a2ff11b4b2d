//! Front quality metrics, preference-sweep evaluation and significance tests.

use std::cmp::Ordering;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::momdp::{Action, Environment};
use crate::preference::{grid_resolution_for, simplex_grid, PreferenceVector};

/// `u ≻ v`: no worse everywhere, strictly better somewhere.
pub fn dominates(u: &[f64], v: &[f64]) -> bool {
    let mut strict = false;
    for (a, b) in u.iter().zip(v) {
        if a < b {
            return false;
        }
        if a > b {
            strict = true;
        }
    }
    strict
}

fn check_dims(points: &[Vec<f64>]) -> Result<()> {
    if let Some(first) = points.first() {
        if points.iter().any(|p| p.len() != first.len()) {
            return Err(Error::InvalidArgument("points of mixed dimension".into()));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("non-finite return vector".into()));
        }
    }
    Ok(())
}

/// Indices of the non-dominated points, in input order. Of exact duplicates
/// only the first occurrence is kept.
pub fn pareto_filter(points: &[Vec<f64>]) -> Result<Vec<usize>> {
    check_dims(points)?;
    let mut keep = Vec::new();
    'outer: for (i, p) in points.iter().enumerate() {
        for (j, q) in points.iter().enumerate() {
            if dominates(q, p) || (j < i && q == p) {
                continue 'outer;
            }
        }
        keep.push(i);
    }
    Ok(keep)
}

pub fn pareto_filter_points(points: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    Ok(pareto_filter(points)?.into_iter().map(|i| points[i].clone()).collect())
}

/// Non-dominated return vectors with the preference that produced each.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParetoFront {
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<Option<Vec<f64>>>,
    pub reference: Vec<f64>,
}

impl ParetoFront {
    pub fn from_points(points: &[Vec<f64>], reference: &[f64]) -> Result<Self> {
        let keep = pareto_filter(points)?;
        Ok(Self {
            points: keep.iter().map(|&i| points[i].clone()).collect(),
            weights: vec![None; keep.len()],
            reference: reference.to_vec(),
        })
    }

    pub fn hypervolume(&self) -> Result<f64> {
        hypervolume(&self.points, &self.reference)
    }

    pub fn sparsity(&self) -> Sparsity {
        sparsity(&self.points)
    }
}

/// Points that do not strictly dominate `reference` (they add no volume).
pub fn points_below_reference(points: &[Vec<f64>], reference: &[f64]) -> usize {
    points
        .iter()
        .filter(|p| p.iter().zip(reference).any(|(u, r)| u <= r))
        .count()
}

/// Exact hypervolume dominated by `points` and bounded below by `reference`,
/// by recursive slicing along the last coordinate. Points that do not
/// strictly dominate the reference are ignored.
pub fn hypervolume(points: &[Vec<f64>], reference: &[f64]) -> Result<f64> {
    check_dims(points)?;
    if points.iter().any(|p| p.len() != reference.len()) {
        return Err(Error::InvalidArgument("reference point dimension mismatch".into()));
    }
    let inside: Vec<Vec<f64>> = points
        .iter()
        .filter(|p| p.iter().zip(reference).all(|(u, r)| u > r))
        .cloned()
        .collect();
    if inside.is_empty() {
        return Ok(0.0);
    }
    let front = pareto_filter_points(&inside)?;
    Ok(hv_rec(front, reference))
}

fn hv_rec(mut pts: Vec<Vec<f64>>, r: &[f64]) -> f64 {
    let d = r.len();
    if pts.is_empty() {
        return 0.0;
    }
    if d == 1 {
        return pts.iter().map(|p| p[0] - r[0]).fold(0.0, f64::max);
    }
    if d == 2 {
        pts.sort_by(|a, b| b[0].total_cmp(&a[0]).then(b[1].total_cmp(&a[1])));
        let mut vol = 0.0;
        let mut best_y = r[1];
        for p in &pts {
            if p[1] > best_y {
                vol += (p[0] - r[0]) * (p[1] - best_y);
                best_y = p[1];
            }
        }
        return vol;
    }
    pts.sort_by(|a, b| b[d - 1].total_cmp(&a[d - 1]));
    let mut vol = 0.0;
    for k in 0..pts.len() {
        let top = pts[k][d - 1];
        let bottom = if k + 1 < pts.len() { pts[k + 1][d - 1] } else { r[d - 1] };
        if top <= bottom {
            continue;
        }
        let slice: Vec<Vec<f64>> = pts[..=k].iter().map(|p| p[..d - 1].to_vec()).collect();
        let slice = pareto_filter_points(&slice).unwrap_or(slice);
        vol += hv_rec(slice, &r[..d - 1]) * (top - bottom);
    }
    vol
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Sparsity {
    pub value: f64,
    /// Fewer than two points: value is reported as 0.
    pub degenerate: bool,
}

/// Orders points by the first objective, ties broken lexicographically.
pub fn sort_by_first_objective(points: &mut [Vec<f64>]) {
    points.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
    });
}

/// Mean Euclidean gap between consecutive points after ordering.
pub fn sparsity(points: &[Vec<f64>]) -> Sparsity {
    if points.len() < 2 {
        return Sparsity { value: 0.0, degenerate: true };
    }
    let mut sorted = points.to_vec();
    sort_by_first_objective(&mut sorted);
    let total: f64 = sorted
        .windows(2)
        .map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
        .sum();
    Sparsity {
        value: total / (sorted.len() - 1) as f64,
        degenerate: false,
    }
}

/// Anything that picks a deterministic action for `(observation, ω)`.
pub trait PreferencePolicy {
    fn greedy_action(&self, obs: &[f64], pref: &[f64]) -> Result<Action>;
}

impl<F> PreferencePolicy for F
where
    F: Fn(&[f64], &[f64]) -> Result<Action>,
{
    fn greedy_action(&self, obs: &[f64], pref: &[f64]) -> Result<Action> {
        self(obs, pref)
    }
}

/// Discounted return vector of one episode.
pub fn rollout_return(
    policy: &dyn PreferencePolicy,
    env: &mut dyn Environment,
    pref: &[f64],
    seed: u64,
    gamma: f64,
) -> Result<Vec<f64>> {
    let d = env.spec().objectives;
    let horizon = env.spec().horizon;
    let mut obs = env.reset(seed);
    let mut ret = vec![0.0; d];
    let mut discount = 1.0;
    for _ in 0..horizon {
        let a = policy.greedy_action(&obs, pref)?;
        let step = env.step(&a)?;
        for (g, r) in ret.iter_mut().zip(&step.reward) {
            *g += discount * r;
        }
        discount *= gamma;
        obs = step.obs;
        if step.done {
            break;
        }
    }
    Ok(ret)
}

/// Mean discounted return over `episodes` episodes (seeds `0..episodes`).
pub fn average_return(
    policy: &dyn PreferencePolicy,
    env: &mut dyn Environment,
    pref: &[f64],
    episodes: usize,
    gamma: f64,
) -> Result<Vec<f64>> {
    let episodes = episodes.max(1);
    let d = env.spec().objectives;
    let mut acc = vec![0.0; d];
    for e in 0..episodes {
        for (a, g) in acc.iter_mut().zip(rollout_return(policy, env, pref, e as u64, gamma)?) {
            *a += g;
        }
    }
    Ok(acc.into_iter().map(|a| a / episodes as f64).collect())
}

/// `mean_ω ωᵀ G(π_ω)`.
pub fn expected_utility(
    policy: &dyn PreferencePolicy,
    env: &mut dyn Environment,
    prefs: &[PreferenceVector],
    episodes: usize,
    gamma: f64,
) -> Result<f64> {
    if prefs.is_empty() {
        return Err(Error::InvalidArgument("no preference samples".into()));
    }
    let mut total = 0.0;
    for w in prefs {
        total += w.dot(&average_return(policy, env, w.as_slice(), episodes, gamma)?);
    }
    Ok(total / prefs.len() as f64)
}

/// Deterministic simplex grid with at least `n` points; corners included.
pub fn evaluation_preferences(d: usize, n: usize) -> Vec<PreferenceVector> {
    simplex_grid(d, grid_resolution_for(d, n.max(d)))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalRow {
    pub weights: Vec<f64>,
    pub returns: Vec<f64>,
    pub on_front: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FrontEvaluation {
    pub rows: Vec<EvalRow>,
    pub front: ParetoFront,
    pub hv: f64,
    pub sp: f64,
    pub sp_degenerate: bool,
    pub eu: f64,
    /// Front points not strictly dominating the reference.
    pub below_reference: usize,
}

/// Sweeps `prefs`, filters the resulting return vectors, and scores the front.
pub fn evaluate_front(
    policy: &dyn PreferencePolicy,
    env: &mut dyn Environment,
    prefs: &[PreferenceVector],
    episodes: usize,
    gamma: f64,
    reference: &[f64],
) -> Result<FrontEvaluation> {
    if prefs.is_empty() {
        return Err(Error::InvalidArgument("no preference samples".into()));
    }
    let mut returns = Vec::with_capacity(prefs.len());
    let mut eu = 0.0;
    for w in prefs {
        let g = average_return(policy, env, w.as_slice(), episodes, gamma)?;
        eu += w.dot(&g);
        returns.push(g);
    }
    eu /= prefs.len() as f64;
    let keep = pareto_filter(&returns)?;
    let mut on_front = vec![false; returns.len()];
    for &i in &keep {
        on_front[i] = true;
    }
    let front = ParetoFront {
        points: keep.iter().map(|&i| returns[i].clone()).collect(),
        weights: keep.iter().map(|&i| Some(prefs[i].as_slice().to_vec())).collect(),
        reference: reference.to_vec(),
    };
    let hv = front.hypervolume()?;
    let sp = front.sparsity();
    Ok(FrontEvaluation {
        rows: prefs
            .iter()
            .zip(returns)
            .zip(on_front)
            .map(|((w, g), f)| EvalRow {
                weights: w.as_slice().to_vec(),
                returns: g,
                on_front: f,
            })
            .collect(),
        below_reference: points_below_reference(&front.points, reference),
        front,
        hv,
        sp: sp.value,
        sp_degenerate: sp.degenerate,
        eu,
    })
}

impl FrontEvaluation {
    /// `w0..,g0..,on_front` table.
    pub fn to_csv(&self) -> String {
        let d = self.rows.first().map_or(0, |r| r.weights.len());
        let mut header: Vec<String> = (0..d).map(|i| format!("w{i}")).collect();
        header.extend((0..d).map(|i| format!("g{i}")));
        header.push("on_front".into());
        let mut out = header.join(",");
        out.push('\n');
        for r in &self.rows {
            let mut cells: Vec<String> = r.weights.iter().map(|v| format!("{v:?}")).collect();
            cells.extend(r.returns.iter().map(|v| format!("{v:?}")));
            cells.push(if r.on_front { "1" } else { "0" }.into());
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    /// Summary object for `metrics.json`; `config` is echoed verbatim.
    pub fn metrics_json(&self, config: serde_json::Value) -> serde_json::Value {
        serde_json::json!({
            "hv": self.hv,
            "sp": self.sp,
            "sp_degenerate": self.sp_degenerate,
            "eu": self.eu,
            "n_points": self.front.points.len(),
            "n_preferences": self.rows.len(),
            "below_reference": self.below_reference,
            "reference": self.front.reference,
            "config": config,
        })
    }
}

/// Alternative hypothesis of a one-sided test on `mean(a) - mean(b)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Greater,
    Less,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WelchResult {
    pub t: f64,
    pub df: f64,
    pub p: f64,
    /// Both groups have zero variance.
    pub degenerate: bool,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// One-sided Welch t-test with Welch–Satterthwaite degrees of freedom.
pub fn welch_one_sided(a: &[f64], b: &[f64], direction: Direction) -> Result<WelchResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InvalidArgument("each group needs at least two samples".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("non-finite sample".into()));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let sa = va / na;
    let sb = vb / nb;
    let se2 = sa + sb;
    let signed = match direction {
        Direction::Greater => ma - mb,
        Direction::Less => mb - ma,
    };
    if se2 == 0.0 {
        let p = match signed.partial_cmp(&0.0) {
            Some(Ordering::Greater) => 0.0,
            Some(Ordering::Less) => 1.0,
            _ => 0.5,
        };
        let t = if signed == 0.0 { 0.0 } else { signed.signum() * f64::INFINITY };
        return Ok(WelchResult { t, df: na + nb - 2.0, p, degenerate: true });
    }
    let t = signed / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| Error::InvalidArgument(format!("t distribution: {e}")))?;
    Ok(WelchResult {
        t,
        df,
        p: dist.sf(t),
        degenerate: false,
    })
}

/// Holm step-down adjustment, monotone and capped at 1, in input order.
pub fn holm_adjust(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| p[i].total_cmp(&p[j]));
    let mut out = vec![0.0; m];
    let mut running = 0.0f64;
    for (rank, &i) in order.iter().enumerate() {
        running = running.max(((m - rank) as f64 * p[i]).min(1.0));
        out[i] = running;
    }
    out
}

pub fn bonferroni_adjust(p: &[f64]) -> Vec<f64> {
    let m = p.len() as f64;
    p.iter().map(|v| (v * m).min(1.0)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub name: String,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub direction: Direction,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StatRow {
    pub name: String,
    pub mean_a: f64,
    pub mean_b: f64,
    pub t: f64,
    pub df: f64,
    pub p_raw: f64,
    pub p_holm: f64,
    pub p_bonferroni: f64,
    pub significant_holm: bool,
    pub significant_bonferroni: bool,
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StatReport {
    pub alpha: f64,
    pub rows: Vec<StatRow>,
}

/// Welch tests over a family of comparisons with Holm and Bonferroni
/// corrections at level `alpha`.
pub fn welch_holm(comparisons: &[Comparison], alpha: f64) -> Result<StatReport> {
    let tests = comparisons
        .iter()
        .map(|c| welch_one_sided(&c.a, &c.b, c.direction))
        .collect::<Result<Vec<_>>>()?;
    let raw: Vec<f64> = tests.iter().map(|t| t.p).collect();
    let holm = holm_adjust(&raw);
    let bonf = bonferroni_adjust(&raw);
    let rows = comparisons
        .iter()
        .zip(tests)
        .enumerate()
        .map(|(i, (c, t))| StatRow {
            name: c.name.clone(),
            mean_a: c.a.iter().sum::<f64>() / c.a.len() as f64,
            mean_b: c.b.iter().sum::<f64>() / c.b.len() as f64,
            t: t.t,
            df: t.df,
            p_raw: t.p,
            p_holm: holm[i],
            p_bonferroni: bonf[i],
            significant_holm: holm[i] < alpha,
            significant_bonferroni: bonf[i] < alpha,
            degenerate: t.degenerate,
        })
        .collect();
    Ok(StatReport { alpha, rows })
}

impl StatReport {
    /// Fixed-width text table.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<28} {:>12} {:>12} {:>9} {:>8} {:>10} {:>10} {:>10} {:>5}\n",
            "comparison", "mean_a", "mean_b", "t", "df", "p", "p_holm", "p_bonf", "sig"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<28} {:>12.4} {:>12.4} {:>9.3} {:>8.2} {:>10.3e} {:>10.3e} {:>10.3e} {:>5}\n",
                r.name,
                r.mean_a,
                r.mean_b,
                r.t,
                r.df,
                r.p_raw,
                r.p_holm,
                r.p_bonferroni,
                if r.significant_holm { "*" } else { "" }
            ));
        }
        out
    }
}
