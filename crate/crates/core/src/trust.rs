//! Per-robot trust belief: impacting factors, conditional distributions and the
//! discretized forward filter.
//!
//! Trust lives on (0, 1), split into `bins` equal cells represented by their
//! midpoints. The transition CPD is a Gaussian around a mean that depends on the
//! source bin and the impacting factors at the current and previous update,
//! truncated to the grid and row-normalized. Human approval evidence enters
//! through a sigmoid likelihood over the (current, previous) trust pair.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocation::{AllocationPath, RobotId, RobotProfile};

pub mod trace;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrustError {
    #[error("belief collapsed: normalizer underflowed")]
    DegenerateBelief,
    #[error("invalid trust parameter: {0}")]
    InvalidParams(String),
    #[error("belief has {got} bins, parameters expect {expected}")]
    BinMismatch { expected: usize, got: usize },
}

/// Initial trust distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Prior {
    Gaussian { mean: f64, sd: f64 },
    Delta { value: f64 },
    Uniform,
}

impl Default for Prior {
    fn default() -> Self {
        Prior::Gaussian { mean: 0.5, sd: 0.1 }
    }
}

/// Which point estimate of the belief is fed to the allocation weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointEstimate {
    #[default]
    Mean,
    Mode,
}

/// Coefficients of the trust model.
///
/// The defaults are placeholders, not fitted values: the coefficients are meant
/// to be trained from human-subject data and supplied through configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrustParams {
    pub a: f64,
    pub b1: f64,
    pub b2: f64,
    pub c1: f64,
    pub c2: f64,
    pub d1: f64,
    pub d2: f64,
    pub e1: f64,
    pub e2: f64,
    /// Variance of the Gaussian transition.
    pub rho: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    /// Utilization ratio of the environmental workload curve.
    pub gamma: f64,
    pub mu: f64,
    pub mu_bar: f64,
    /// Most robots a supervisor is comfortable monitoring.
    pub i_max: u32,
    pub bins: usize,
    /// Transition means are clamped to `[clamp_margin, 1 - clamp_margin]`.
    pub clamp_margin: f64,
    pub prior: Prior,
    pub point_estimate: PointEstimate,
}

impl Default for TrustParams {
    fn default() -> Self {
        TrustParams {
            a: 0.85,
            b1: 0.05,
            b2: 0.05,
            c1: 0.02,
            c2: 0.04,
            d1: 0.02,
            d2: 0.04,
            e1: 1.0,
            e2: 1.0,
            rho: 0.01,
            alpha1: 8.0,
            alpha2: 4.0,
            gamma: 0.8,
            mu: 0.5,
            mu_bar: -0.5,
            i_max: 5,
            bins: 101,
            clamp_margin: 0.01,
            prior: Prior::default(),
            point_estimate: PointEstimate::Mean,
        }
    }
}

impl TrustParams {
    pub fn validate(&self) -> Result<(), TrustError> {
        let bad = |m: &str| Err(TrustError::InvalidParams(m.to_owned()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.rho > 0.0) {
            return bad("rho must be positive");
        }
        if self.bins < 3 {
            return bad("bins must be at least 3");
        }
        if !(self.mu > 0.0 && self.mu_bar < 0.0) {
            return bad("mu must be positive and mu_bar negative");
        }
        if !(self.clamp_margin > 0.0 && self.clamp_margin < 0.5) {
            return bad("clamp_margin must lie in (0, 0.5)");
        }
        if self.i_max == 0 {
            return bad("i_max must be at least 1");
        }
        if self.alpha1 < 0.0 || self.alpha2 < 0.0 {
            return bad("alpha1 and alpha2 must be nonnegative");
        }
        match self.prior {
            Prior::Gaussian { mean, sd } if !(sd > 0.0) || !(0.0..=1.0).contains(&mean) => {
                bad("gaussian prior needs sd > 0 and mean in [0, 1]")
            }
            Prior::Delta { value } if !(0.0..=1.0).contains(&value) => bad("delta prior must lie in [0, 1]"),
            _ => Ok(()),
        }
    }
}

/// Reallocation influence at an accepted reallocation and at the one before it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Influence {
    pub current: f64,
    pub previous: f64,
}

/// Impacting factors of one robot at one update.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrustFactors {
    pub performance: f64,
    pub safety: f64,
    pub env_workload: f64,
    pub supervision_workload: f64,
    /// Only present at reallocation epochs.
    pub influence: Option<Influence>,
}

impl Default for TrustFactors {
    fn default() -> Self {
        TrustFactors {
            performance: 0.0,
            safety: 1.0,
            env_workload: 0.0,
            supervision_workload: 1.0,
            influence: None,
        }
    }
}

/// Human answer to a reallocation inquiry; `allow = true` is h = 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HumanObservation {
    pub robot: RobotId,
    pub time: u64,
    pub allow: bool,
}

pub fn performance_update(prev: f64, completed: bool, avoided: u32) -> f64 {
    prev + if completed { 1.0 } else { 0.0 } + f64::from(avoided)
}

pub fn safety_coefficient(robot: &RobotProfile, battery_low: bool) -> f64 {
    if battery_low {
        1.0 / robot.capabilities.len() as f64
    } else {
        1.0
    }
}

pub fn env_workload(obstacles_in_range: u32, params: &TrustParams) -> f64 {
    1.0 - params.gamma.powi(obstacles_in_range as i32 + 1)
}

pub fn supervision_workload(activated: bool, active_robots: u32, params: &TrustParams) -> f64 {
    if activated {
        1.0 - f64::from(active_robots) / f64::from(params.i_max)
    } else {
        1.0
    }
}

/// Step counts behind the reallocation influence of one robot.
///
/// `assigned` counts steps that give the robot an action; `passed_over` counts
/// steps where another robot was given a symbol this robot could have performed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InfluenceTally {
    pub assigned: u32,
    pub passed_over: u32,
}

impl InfluenceTally {
    pub fn of(path: &AllocationPath, robot: &RobotProfile) -> Self {
        let mut tally = InfluenceTally::default();
        for step in &path.steps {
            if step.assigns(&robot.id) {
                tally.assigned += 1;
            } else if step.assignments().any(|a| robot.can(&a.symbol)) {
                tally.passed_over += 1;
            }
        }
        tally
    }

    pub fn value(&self, robot_count: usize, params: &TrustParams) -> f64 {
        (f64::from(self.assigned) * params.mu + f64::from(self.passed_over) * params.mu_bar) / robot_count as f64
    }
}

impl std::ops::Add for InfluenceTally {
    type Output = InfluenceTally;

    fn add(self, rhs: Self) -> Self {
        InfluenceTally {
            assigned: self.assigned + rhs.assigned,
            passed_over: self.passed_over + rhs.passed_over,
        }
    }
}

/// Influence of an accepted allocation on one robot: `mu / I` per assigned step,
/// `mu_bar / I` per passed-over step, zero otherwise.
pub fn allocation_influence(path: &AllocationPath, robot: &RobotProfile, robot_count: usize, params: &TrustParams) -> f64 {
    InfluenceTally::of(path, robot).value(robot_count, params)
}

/// Probability that the human allows a reallocation given current and previous trust.
pub fn intervention_probability(t_now: f64, t_prev: f64, params: &TrustParams) -> f64 {
    1.0 / (1.0 + (-params.alpha1 * t_now + params.alpha2 * t_prev).exp())
}

/// Mean of the Gaussian transition out of a source trust value, clamped into
/// `[clamp_margin, 1 - clamp_margin]`.
pub fn transition_mean(t_prev: f64, now: &TrustFactors, prev: &TrustFactors, p: &TrustParams) -> f64 {
    let mut m = p.a * t_prev + p.b1 * now.safety * now.performance - p.b2 * prev.safety * prev.performance
        + p.c1 * now.env_workload
        - p.c2 * prev.env_workload
        + p.d1 * now.supervision_workload
        - p.d2 * prev.supervision_workload;
    if let Some(inf) = now.influence {
        m += p.e1 * inf.current - p.e2 * inf.previous;
    }
    m.clamp(p.clamp_margin, 1.0 - p.clamp_margin)
}

/// Discretized belief over trust bin midpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrustBelief {
    probs: Vec<f64>,
}

impl TrustBelief {
    pub fn midpoint(bins: usize, j: usize) -> f64 {
        (j as f64 + 0.5) / bins as f64
    }

    pub fn uniform(bins: usize) -> Self {
        TrustBelief {
            probs: vec![1.0 / bins as f64; bins],
        }
    }

    /// All mass on the bin containing `value`.
    pub fn delta(bins: usize, value: f64) -> Self {
        let j = ((value * bins as f64) as usize).min(bins - 1);
        let mut probs = vec![0.0; bins];
        probs[j] = 1.0;
        TrustBelief { probs }
    }

    pub fn from_prior(prior: &Prior, bins: usize) -> Self {
        match *prior {
            Prior::Uniform => Self::uniform(bins),
            Prior::Delta { value } => Self::delta(bins, value),
            Prior::Gaussian { mean, sd } => {
                let w: Vec<f64> = (0..bins)
                    .map(|j| {
                        let z = (Self::midpoint(bins, j) - mean) / sd;
                        (-0.5 * z * z).exp()
                    })
                    .collect();
                let total: f64 = w.iter().sum();
                TrustBelief {
                    probs: w.into_iter().map(|x| x / total).collect(),
                }
            }
        }
    }

    /// Wraps raw probabilities, normalizing them. Returns `None` if they cannot be
    /// normalized.
    pub fn from_weights(weights: Vec<f64>) -> Option<Self> {
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| *w < 0.0 || !w.is_finite()) || !(total > 0.0) {
            return None;
        }
        Some(TrustBelief {
            probs: weights.into_iter().map(|w| w / total).collect(),
        })
    }

    pub fn bins(&self) -> usize {
        self.probs.len()
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    pub fn mean(&self) -> f64 {
        let n = self.bins();
        self.probs.iter().enumerate().map(|(j, p)| Self::midpoint(n, j) * p).sum()
    }

    pub fn variance(&self) -> f64 {
        let n = self.bins();
        let m = self.mean();
        self.probs
            .iter()
            .enumerate()
            .map(|(j, p)| {
                let d = Self::midpoint(n, j) - m;
                d * d * p
            })
            .sum()
    }

    /// Midpoint of the most probable bin; the lowest bin wins ties.
    pub fn mode(&self) -> f64 {
        let mut best = 0;
        for (j, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = j;
            }
        }
        Self::midpoint(self.bins(), best)
    }

    pub fn point(&self, which: PointEstimate) -> f64 {
        match which {
            PointEstimate::Mean => self.mean(),
            PointEstimate::Mode => self.mode(),
        }
    }
}

pub fn expected_trust(bel: &TrustBelief) -> f64 {
    bel.mean()
}

pub fn mode_trust(bel: &TrustBelief) -> f64 {
    bel.mode()
}

/// One forward-filter update.
///
/// `bel'(v) ∝ Σ_u H(v, u) · K(v | u) · bel(u)`, where `K` is the row-normalized
/// Gaussian transition and `H` the evidence likelihood (1 without observation).
pub fn filter_step(
    bel: &TrustBelief,
    now: &TrustFactors,
    prev: &TrustFactors,
    obs: Option<&HumanObservation>,
    params: &TrustParams,
) -> Result<TrustBelief, TrustError> {
    let n = params.bins;
    if bel.bins() != n {
        return Err(TrustError::BinMismatch {
            expected: n,
            got: bel.bins(),
        });
    }
    let values: Vec<f64> = (0..n).map(|j| TrustBelief::midpoint(n, j)).collect();
    let mut out = vec![0.0; n];
    let mut row = vec![0.0; n];
    for (src, &mass) in bel.probs.iter().enumerate() {
        if mass == 0.0 {
            continue;
        }
        let t_prev = values[src];
        let mean = transition_mean(t_prev, now, prev, params);
        let mut row_total = 0.0;
        for (dst, &v) in values.iter().enumerate() {
            let d = v - mean;
            row[dst] = (-d * d / (2.0 * params.rho)).exp();
            row_total += row[dst];
        }
        if !(row_total > 0.0) {
            return Err(TrustError::DegenerateBelief);
        }
        for (dst, &v) in values.iter().enumerate() {
            let h = match obs {
                None => 1.0,
                Some(o) => {
                    let p = intervention_probability(v, t_prev, params);
                    if o.allow {
                        p
                    } else {
                        1.0 - p
                    }
                }
            };
            out[dst] += h * row[dst] / row_total * mass;
        }
    }
    TrustBelief::from_weights(out).ok_or(TrustError::DegenerateBelief)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocation::{MultiAction, RobotProfile};
    use approx::assert_abs_diff_eq;

    fn identity() -> TrustParams {
        TrustParams {
            a: 1.0,
            b1: 0.0,
            b2: 0.0,
            c1: 0.0,
            c2: 0.0,
            d1: 0.0,
            d2: 0.0,
            e1: 0.0,
            e2: 0.0,
            ..TrustParams::default()
        }
    }

    #[test]
    fn performance() {
        assert_eq!(performance_update(2.0, true, 2), 5.0);
        assert_eq!(performance_update(0.0, false, 0), 0.0);
        assert_eq!(performance_update(3.0, false, 1), 4.0);
    }

    #[test]
    fn safety() {
        let r1 = RobotProfile::new("r1", &["a", "c", "d"]);
        let r5 = RobotProfile::new("r5", &["c", "e"]);
        assert_abs_diff_eq!(safety_coefficient(&r1, true), 1.0 / 3.0);
        assert_eq!(safety_coefficient(&r1, false), 1.0);
        assert_eq!(safety_coefficient(&r5, true), 0.5);
    }

    #[test]
    fn workloads() {
        let p = TrustParams::default();
        assert_abs_diff_eq!(env_workload(0, &p), 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(env_workload(3, &p), 0.5904, epsilon = 1e-12);
        let near_one = TrustParams { gamma: 1.0 - 1e-12, ..p.clone() };
        assert!(env_workload(5, &near_one) < 1e-10);

        assert_eq!(supervision_workload(true, 3, &p), 0.4);
        assert_eq!(supervision_workload(false, 3, &p), 1.0);
        assert_eq!(supervision_workload(true, 5, &p), 0.0);
    }

    fn step(parts: &[Option<(&str, &str)>]) -> MultiAction {
        MultiAction {
            components: parts.iter().map(|p| p.map(|(r, s)| (r.into(), s.into()))).collect(),
        }
    }

    #[test]
    fn influence() {
        let p = TrustParams::default();
        let me = RobotProfile::new("r1", &["a", "b"]);
        let path = AllocationPath {
            steps: vec![
                step(&[Some(("r1", "a")), None]),
                step(&[Some(("r2", "b")), None]),
                step(&[None, Some(("r3", "z"))]),
            ],
            total_trust: 0.0,
        };
        assert_abs_diff_eq!(allocation_influence(&path, &me, 5, &p), 0.0, epsilon = 1e-15);

        let always = AllocationPath {
            steps: vec![step(&[Some(("r1", "a"))]); 3],
            total_trust: 0.0,
        };
        assert_abs_diff_eq!(allocation_influence(&always, &me, 5, &p), 0.3, epsilon = 1e-15);

        let stranger = RobotProfile::new("r9", &["q"]);
        assert_eq!(allocation_influence(&path, &stranger, 5, &p), 0.0);
    }

    #[test]
    fn intervention() {
        let p = TrustParams {
            alpha1: 5.0,
            alpha2: 5.0,
            ..TrustParams::default()
        };
        assert_eq!(intervention_probability(0.4, 0.4, &p), 0.5);
        assert_abs_diff_eq!(intervention_probability(0.9, 0.1, &p), 0.982013790037908, epsilon = 1e-12);
        let p = TrustParams {
            alpha1: 10.0,
            alpha2: 0.0,
            ..TrustParams::default()
        };
        assert_abs_diff_eq!(intervention_probability(0.5, 0.3, &p), 0.9933071490757153, epsilon = 1e-12);
    }

    #[test]
    fn mean_examples() {
        let f = TrustFactors::default();
        assert_eq!(transition_mean(0.5, &f, &f, &identity()), 0.5);

        let p = TrustParams {
            b1: 0.01,
            b2: 0.01,
            ..identity()
        };
        let now = TrustFactors {
            performance: 5.0,
            ..TrustFactors::default()
        };
        let prev = TrustFactors {
            performance: 4.0,
            ..TrustFactors::default()
        };
        assert_abs_diff_eq!(transition_mean(0.5, &now, &prev, &p), 0.51, epsilon = 1e-12);

        let p = TrustParams { b1: 1.0, ..identity() };
        assert_eq!(transition_mean(0.99, &now, &TrustFactors::default(), &p), 0.99);
    }

    #[test]
    fn influence_only_counts_at_epochs() {
        let p = TrustParams {
            e1: 1.0,
            e2: 1.0,
            ..identity()
        };
        let mut now = TrustFactors::default();
        assert_eq!(transition_mean(0.5, &now, &now, &p), 0.5);
        now.influence = Some(Influence {
            current: 0.1,
            previous: 0.0,
        });
        assert_abs_diff_eq!(transition_mean(0.5, &now, &TrustFactors::default(), &p), 0.6, epsilon = 1e-12);
    }

    #[test]
    fn delta_identity_stays_centered() {
        let p = identity();
        let bel = TrustBelief::delta(p.bins, 0.5);
        let f = TrustFactors::default();
        let out = filter_step(&bel, &f, &f, None, &p).unwrap();
        let half_bin = 0.5 / p.bins as f64;
        assert!((out.mean() - 0.5).abs() <= half_bin);
        let probs = out.probabilities();
        for j in 0..p.bins {
            assert_abs_diff_eq!(probs[j], probs[p.bins - 1 - j], epsilon = 1e-12);
        }
    }

    #[test]
    fn approval_raises_mean() {
        let p = TrustParams {
            alpha1: 12.0,
            alpha2: 1.0,
            ..TrustParams::default()
        };
        let bel = TrustBelief::from_prior(&p.prior, p.bins);
        let f = TrustFactors::default();
        let obs = HumanObservation {
            robot: "r1".into(),
            time: 0,
            allow: true,
        };
        let plain = filter_step(&bel, &f, &f, None, &p).unwrap();
        let approved = filter_step(&bel, &f, &f, Some(&obs), &p).unwrap();
        assert!(approved.mean() > plain.mean());
        let denied = filter_step(&bel, &f, &f, Some(&HumanObservation { allow: false, ..obs }), &p).unwrap();
        assert!(denied.mean() < plain.mean());
    }

    #[test]
    fn point_estimates() {
        let d = TrustBelief::delta(10, 0.7);
        assert_abs_diff_eq!(d.mean(), 0.75, epsilon = 1e-12);
        assert_eq!(d.mode(), 0.75);
        let d = TrustBelief::delta(5, 0.7);
        assert_abs_diff_eq!(expected_trust(&d), 0.7, epsilon = 1e-12);
        assert_abs_diff_eq!(mode_trust(&d), 0.7, epsilon = 1e-12);

        assert_abs_diff_eq!(TrustBelief::uniform(101).mean(), 0.5, epsilon = 1e-12);

        let bimodal = TrustBelief::from_weights(vec![0.5, 0.5]).unwrap();
        assert_abs_diff_eq!(bimodal.mean(), 0.5, epsilon = 1e-12);
        assert_eq!(bimodal.mode(), 0.25);
    }

    #[test]
    fn degenerate_and_invalid() {
        let p = TrustParams {
            rho: 1e-300,
            bins: 4,
            ..identity()
        };
        let p = TrustParams { c1: 0.01, ..p };
        let bel = TrustBelief::uniform(4);
        let f = TrustFactors::default();
        let shifted = TrustFactors {
            env_workload: 1.0,
            ..f
        };
        assert_eq!(filter_step(&bel, &shifted, &f, None, &p).unwrap_err(), TrustError::DegenerateBelief);
        assert!(TrustParams { gamma: 1.0, ..TrustParams::default() }.validate().is_err());
        assert!(TrustParams { bins: 2, ..TrustParams::default() }.validate().is_err());
        assert!(TrustParams::default().validate().is_ok());
        assert!(matches!(
            filter_step(&TrustBelief::uniform(7), &f, &f, None, &TrustParams::default()),
            Err(TrustError::BinMismatch { .. })
        ));
    }
}
