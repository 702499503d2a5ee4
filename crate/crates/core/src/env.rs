//! Drifting Bradley–Terry environment: unit-sphere parameter paths with a
//! total-variation budget, unit-norm action features, preference draws and
//! noisy linear rewards.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{distance, dot, norm, sigmoid};

/// Tolerance for the unit-norm contract on parameters.
pub const UNIT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DriftMode {
    SphereWalk,
    Frozen,
}

/// Per-step perturbation limits. `interval` spaces drift events: a move is
/// attempted on transitions into steps that are multiples of `interval`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftConfig {
    pub delta_min: f64,
    pub delta_max: f64,
    pub mode: DriftMode,
    pub interval: usize,
}

impl DriftConfig {
    pub fn new(delta_min: f64, delta_max: f64, mode: DriftMode) -> Result<Self> {
        let cfg = Self {
            delta_min,
            delta_max,
            mode,
            interval: 1,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn frozen() -> Self {
        Self {
            delta_min: 0.0,
            delta_max: 0.0,
            mode: DriftMode::Frozen,
            interval: 1,
        }
    }

    pub fn with_interval(mut self, interval: usize) -> Self {
        self.interval = interval.max(1);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta_min >= 0.0 && self.delta_min <= self.delta_max && self.delta_max.is_finite())
        {
            return Err(Error::InvalidArgument(format!(
                "drift limits must satisfy 0 <= delta_min <= delta_max (got {}, {})",
                self.delta_min, self.delta_max
            )));
        }
        if self.interval == 0 {
            return Err(Error::InvalidArgument("drift interval must be >= 1".into()));
        }
        Ok(())
    }
}

/// Uniformly random unit vector in `R^d`.
pub fn random_unit<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let n = norm(&v);
        if n > 1e-300 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn check_unit(theta: &[f64]) -> Result<()> {
    let n = norm(theta);
    if (n - 1.0).abs() > UNIT_TOL {
        return Err(Error::Contract(format!(
            "parameter must have unit norm, got norm {n}"
        )));
    }
    Ok(())
}

/// One drift step `θ ← (θ + δ)/‖θ + δ‖` with a uniformly oriented `δ` of
/// magnitude in `[delta_min, delta_max]`.
///
/// Returns `theta` unchanged when drift is frozen or when the move would take
/// more than `remaining_budget` of total variation.
pub fn advance_theta<R: Rng + ?Sized>(
    theta: &[f64],
    cfg: &DriftConfig,
    remaining_budget: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_unit(theta)?;
    if cfg.mode == DriftMode::Frozen || remaining_budget <= 0.0 {
        return Ok(theta.to_vec());
    }
    let d = theta.len();
    let next = loop {
        let dir = random_unit(d, rng);
        let mag = if cfg.delta_max > cfg.delta_min {
            rng.random_range(cfg.delta_min..=cfg.delta_max)
        } else {
            cfg.delta_min
        };
        let moved: Vec<f64> = theta.iter().zip(&dir).map(|(t, u)| t + mag * u).collect();
        let n = norm(&moved);
        // θ + δ = 0 has probability zero; redraw if it happens.
        if n > 1e-12 {
            break moved.into_iter().map(|x| x / n).collect::<Vec<_>>();
        }
    };
    if distance(&next, theta) > remaining_budget {
        return Ok(theta.to_vec());
    }
    Ok(next)
}

/// Ground-truth parameter sequence with total-variation accounting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaPath {
    pub thetas: Vec<Vec<f64>>,
    pub tv_used: f64,
    pub tv_budget: f64,
}

impl ThetaPath {
    /// Generates `steps` parameters starting from `theta0`. Once a move would
    /// overrun the budget, drift stays frozen for the rest of the path.
    pub fn generate<R: Rng + ?Sized>(
        theta0: Vec<f64>,
        steps: usize,
        cfg: &DriftConfig,
        tv_budget: f64,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        check_unit(&theta0)?;
        if steps == 0 {
            return Err(Error::Empty("theta path needs at least one step"));
        }
        let mut thetas = Vec::with_capacity(steps);
        thetas.push(theta0);
        let mut tv_used = 0.0;
        let mut exhausted = false;
        for t in 1..steps {
            let prev = &thetas[t - 1];
            let mut next = prev.clone();
            if !exhausted && t % cfg.interval == 0 && cfg.mode == DriftMode::SphereWalk {
                let candidate = advance_theta(prev, cfg, f64::INFINITY, rng)?;
                let step = distance(&candidate, prev);
                if tv_used + step <= tv_budget {
                    tv_used += step;
                    next = candidate;
                } else {
                    exhausted = true;
                }
            }
            thetas.push(next);
        }
        Ok(Self {
            thetas,
            tv_used,
            tv_budget,
        })
    }

    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.thetas[0].len()
    }

    /// `‖θ_{t+1} − θ_t‖₂` for `t = 0..len-1`.
    pub fn increments(&self) -> Vec<f64> {
        self.thetas.windows(2).map(|w| distance(&w[1], &w[0])).collect()
    }
}

/// `K` action feature vectors for one context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub rows: Vec<Vec<f64>>,
    pub phi_max: f64,
}

impl FeatureSet {
    pub fn new(rows: Vec<Vec<f64>>, phi_max: f64) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty("feature set has no actions"));
        }
        let d = rows[0].len();
        for r in &rows {
            if r.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: r.len(),
                });
            }
            if norm(r) > phi_max * (1.0 + 1e-12) {
                return Err(Error::Contract(format!(
                    "feature row norm {} exceeds phi_max {phi_max}",
                    norm(r)
                )));
            }
        }
        Ok(Self { rows, phi_max })
    }

    pub fn arms(&self) -> usize {
        self.rows.len()
    }

    pub fn dim(&self) -> usize {
        self.rows[0].len()
    }

    pub fn utilities(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.rows.iter().map(|r| utility(theta, r)).collect()
    }
}

/// `K` isotropic unit-norm rows in `R^d`.
pub fn make_features<R: Rng + ?Sized>(k: usize, d: usize, rng: &mut R) -> Result<FeatureSet> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 arms, got {k}")));
    }
    if d < 1 {
        return Err(Error::InvalidArgument("dimension must be >= 1".into()));
    }
    let rows = (0..k).map(|_| random_unit(d, rng)).collect();
    Ok(FeatureSet { rows, phi_max: 1.0 })
}

/// `u(x, y) = ⟨θ, φ(x, y)⟩`.
pub fn utility(theta: &[f64], phi: &[f64]) -> Result<f64> {
    dot(theta, phi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreferenceLabel {
    pub winner_is_first: bool,
    pub probability_used: f64,
}

/// Bradley–Terry draw: the first action wins with probability `σ(u_a − u_b)`.
pub fn sample_preference<R: Rng + ?Sized>(
    theta: &[f64],
    phi_a: &[f64],
    phi_b: &[f64],
    rng: &mut R,
) -> Result<PreferenceLabel> {
    let p = sigmoid(utility(theta, phi_a)? - utility(theta, phi_b)?);
    let draw: f64 = rng.random();
    Ok(PreferenceLabel {
        winner_is_first: draw < p,
        probability_used: p,
    })
}

/// Linear reward with Gaussian noise of standard deviation `noise_scale`
/// (1 for the standard 1-sub-Gaussian setting).
pub fn sample_reward<R: Rng + ?Sized>(
    theta: &[f64],
    phi: &[f64],
    noise_scale: f64,
    rng: &mut R,
) -> Result<f64> {
    let u = utility(theta, phi)?;
    if noise_scale == 0.0 {
        return Ok(u);
    }
    let eta: f64 = StandardNormal.sample(rng);
    Ok(u + noise_scale * eta)
}

/// Stream domains for the pieces of one seeded run.
pub mod streams {
    pub const PATH: u64 = 1;
    pub const CONTEXTS: u64 = 2;
    pub const LEARNER: u64 = 3;
    pub const TRIALS: u64 = 4;
    pub const ISLANDS: u64 = 5;
    pub const EPISODES: u64 = 6;
    pub const NOISE: u64 = 7;
    pub const PAIRS: u64 = 8;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub arms: usize,
    pub dim: usize,
    pub horizon: usize,
    pub drift: DriftConfig,
    pub tv_budget: f64,
    /// One shared context for every step instead of fresh i.i.d. draws.
    pub fixed_context: bool,
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.arms < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 arms, got {}", self.arms)));
        }
        if self.dim < 1 {
            return Err(Error::InvalidArgument("dimension must be >= 1".into()));
        }
        if self.horizon < 1 {
            return Err(Error::InvalidArgument("horizon must be >= 1".into()));
        }
        if !(self.tv_budget >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tv budget must be nonnegative, got {}",
                self.tv_budget
            )));
        }
        self.drift.validate()
    }
}

/// A fully materialized environment: the parameter path and the context
/// shown at each step. Read-only once built.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceEnv {
    pub path: ThetaPath,
    contexts: Vec<FeatureSet>,
}

impl PreferenceEnv {
    /// Path and contexts come from separate streams, so two learners run on
    /// the same seed see the same world.
    pub fn generate(cfg: &EnvConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut prng = crate::rng::tagged_substream(seed, streams::PATH, 0);
        let theta0 = random_unit(cfg.dim, &mut prng);
        let path = ThetaPath::generate(theta0, cfg.horizon, &cfg.drift, cfg.tv_budget, &mut prng)?;
        let mut crng = crate::rng::tagged_substream(seed, streams::CONTEXTS, 0);
        let n = if cfg.fixed_context { 1 } else { cfg.horizon };
        let contexts = (0..n)
            .map(|_| make_features(cfg.arms, cfg.dim, &mut crng))
            .collect::<Result<_>>()?;
        Ok(Self { path, contexts })
    }

    pub fn from_parts(path: ThetaPath, contexts: Vec<FeatureSet>) -> Result<Self> {
        if contexts.len() != 1 && contexts.len() != path.len() {
            return Err(Error::InvalidArgument(format!(
                "need 1 or {} contexts, got {}",
                path.len(),
                contexts.len()
            )));
        }
        Ok(Self { path, contexts })
    }

    pub fn horizon(&self) -> usize {
        self.path.len()
    }

    pub fn arms(&self) -> usize {
        self.contexts[0].arms()
    }

    pub fn dim(&self) -> usize {
        self.path.dim()
    }

    /// Context at step `t` (0-based).
    pub fn context(&self, t: usize) -> &FeatureSet {
        if self.contexts.len() == 1 {
            &self.contexts[0]
        } else {
            &self.contexts[t]
        }
    }

    pub fn theta(&self, t: usize) -> &[f64] {
        &self.path.thetas[t]
    }

    /// One context per step, expanded if shared.
    pub fn step_contexts(&self) -> Vec<FeatureSet> {
        (0..self.horizon()).map(|t| self.context(t).clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;

    fn e(d: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        v
    }

    #[test]
    fn zero_perturbation_is_identity() {
        let mut rng = seeded(1);
        let cfg = DriftConfig::new(0.0, 0.0, DriftMode::SphereWalk).unwrap();
        let theta = random_unit(4, &mut rng);
        let out = advance_theta(&theta, &cfg, 10.0, &mut rng).unwrap();
        assert_eq!(out, theta);
    }

    #[test]
    fn frozen_and_exhausted_return_input() {
        let mut rng = seeded(2);
        let theta = random_unit(3, &mut rng);
        let frozen = DriftConfig::frozen();
        assert_eq!(advance_theta(&theta, &frozen, 5.0, &mut rng).unwrap(), theta);
        let walk = DriftConfig::new(1.0, 5.0, DriftMode::SphereWalk).unwrap();
        assert_eq!(advance_theta(&theta, &walk, 0.0, &mut rng).unwrap(), theta);
    }

    #[test]
    fn non_unit_input_is_rejected() {
        let mut rng = seeded(3);
        let cfg = DriftConfig::new(0.1, 0.2, DriftMode::SphereWalk).unwrap();
        let err = advance_theta(&[1.0, 1.0], &cfg, 1.0, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn bad_drift_limits_rejected() {
        assert!(DriftConfig::new(2.0, 1.0, DriftMode::SphereWalk).is_err());
        assert!(DriftConfig::new(-0.1, 1.0, DriftMode::SphereWalk).is_err());
    }

    #[test]
    fn table5_path_stays_within_budget() {
        let mut rng = seeded(4);
        let cfg = DriftConfig::new(1.0, 5.0, DriftMode::SphereWalk).unwrap();
        let theta0 = random_unit(5, &mut rng);
        let path = ThetaPath::generate(theta0, 2000, &cfg, 8000.0, &mut rng).unwrap();
        assert_eq!(path.len(), 2000);
        assert!(path.tv_used <= 2.0 * 2000.0);
        assert!(path.tv_used <= path.tv_budget);
        let recount: f64 = path.increments().iter().sum();
        assert!((recount - path.tv_used).abs() <= 1e-9);
        for th in &path.thetas {
            assert!((norm(th) - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn small_budget_freezes_drift() {
        let mut rng = seeded(5);
        let cfg = DriftConfig::new(1.0, 5.0, DriftMode::SphereWalk).unwrap();
        let theta0 = random_unit(5, &mut rng);
        let path = ThetaPath::generate(theta0, 500, &cfg, 3.0, &mut rng).unwrap();
        assert!(path.tv_used <= 3.0);
        assert_eq!(path.thetas[498], path.thetas[499]);
    }

    #[test]
    fn interval_spaces_moves() {
        let mut rng = seeded(6);
        let cfg = DriftConfig::new(0.5, 0.5, DriftMode::SphereWalk)
            .unwrap()
            .with_interval(10);
        let path = ThetaPath::generate(random_unit(3, &mut rng), 55, &cfg, 100.0, &mut rng).unwrap();
        for (t, inc) in path.increments().iter().enumerate() {
            if (t + 1) % 10 != 0 {
                assert_eq!(*inc, 0.0, "unexpected move into step {}", t + 1);
            } else {
                assert!(*inc > 0.0);
            }
        }
    }

    #[test]
    fn utility_examples() {
        assert_eq!(utility(&e(3, 0), &e(3, 0)).unwrap(), 1.0);
        assert_eq!(utility(&e(3, 0), &e(3, 1)).unwrap(), 0.0);
        assert!(matches!(
            utility(&[1.0, 0.0], &[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        let mut rng = seeded(7);
        for _ in 0..100 {
            let a = random_unit(6, &mut rng);
            let b = random_unit(6, &mut rng);
            let mut naive = 0.0;
            for i in 0..6 {
                naive += a[i] * b[i];
            }
            let u = utility(&a, &b).unwrap();
            assert!((u - naive).abs() <= 1e-12);
            assert!(u.abs() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn preference_probability_examples() {
        let mut rng = seeded(8);
        let theta = e(2, 0);
        let same = sample_preference(&theta, &e(2, 1), &e(2, 1), &mut rng).unwrap();
        assert_eq!(same.probability_used, 0.5);
        let big = sample_preference(&[20.0, 0.0], &e(2, 0), &[0.0, 0.0], &mut rng).unwrap();
        assert!(big.probability_used > 1.0 - 1e-8);
    }

    #[test]
    fn preference_win_rate_matches_sigmoid() {
        let mut rng = seeded(9);
        let theta = [1.0, 0.0];
        let (a, b) = ([1.0, 0.0], [0.0, 0.0]);
        let n = 100_000;
        let wins = (0..n)
            .filter(|_| sample_preference(&theta, &a, &b, &mut rng).unwrap().winner_is_first)
            .count();
        let p = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((p - 0.7311).abs() < 1e-4);
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!(((wins as f64 / n as f64) - p).abs() <= 3.0 * se);
    }

    #[test]
    fn make_features_examples() {
        let mut rng = seeded(10);
        let fs = make_features(5, 5, &mut rng).unwrap();
        assert_eq!(fs.arms(), 5);
        assert_eq!(fs.dim(), 5);
        for r in &fs.rows {
            assert!((norm(r) - 1.0).abs() <= 1e-12);
        }
        let one_d = make_features(8, 1, &mut rng).unwrap();
        for r in &one_d.rows {
            assert!(r[0] == 1.0 || r[0] == -1.0);
        }
        assert!(make_features(1, 3, &mut rng).is_err());
        assert!(make_features(3, 0, &mut rng).is_err());
        let a = make_features(4, 3, &mut seeded(11)).unwrap();
        let b = make_features(4, 3, &mut seeded(11)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn reward_noise_statistics() {
        let mut rng = seeded(12);
        let theta = [0.6, 0.8];
        let phi = [1.0, 0.0];
        assert_eq!(sample_reward(&theta, &phi, 0.0, &mut rng).unwrap(), 0.6);
        let n = 100_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| sample_reward(&theta, &phi, 1.0, &mut rng).unwrap())
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        assert!((mean - 0.6).abs() <= 3.0 / (n as f64).sqrt());

        let orth = [0.0, 1.0];
        let ys: Vec<f64> = (0..n)
            .map(|_| sample_reward(&[1.0, 0.0], &orth, 1.0, &mut rng).unwrap())
            .collect();
        let m = ys.iter().sum::<f64>() / n as f64;
        let var = ys.iter().map(|y| (y - m) * (y - m)).sum::<f64>() / (n as f64 - 1.0);
        assert!((var - 1.0).abs() <= 0.05);
    }

    #[test]
    fn determinism_of_paths_and_labels() {
        let run = |seed| {
            let mut rng = seeded(seed);
            let cfg = DriftConfig::new(0.1, 0.3, DriftMode::SphereWalk).unwrap();
            let path = ThetaPath::generate(random_unit(4, &mut rng), 50, &cfg, 10.0, &mut rng).unwrap();
            let fs = make_features(3, 4, &mut rng).unwrap();
            let lab = sample_preference(&path.thetas[49], &fs.rows[0], &fs.rows[1], &mut rng).unwrap();
            (path, fs, lab)
        };
        assert_eq!(run(3), run(3));
    }

    proptest! {
        #[test]
        fn advance_keeps_unit_norm(seed in any::<u64>(), dmin in 0.0f64..3.0, extra in 0.0f64..3.0, d in 1usize..8) {
            let mut rng = seeded(seed);
            let theta = random_unit(d, &mut rng);
            let cfg = DriftConfig::new(dmin, dmin + extra, DriftMode::SphereWalk).unwrap();
            let out = advance_theta(&theta, &cfg, f64::INFINITY, &mut rng).unwrap();
            prop_assert!((norm(&out) - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn preference_probabilities_are_complementary(seed in any::<u64>()) {
            let mut rng = seeded(seed);
            let theta = random_unit(4, &mut rng);
            let a = random_unit(4, &mut rng);
            let b = random_unit(4, &mut rng);
            let p = sample_preference(&theta, &a, &b, &mut rng).unwrap().probability_used;
            let q = sample_preference(&theta, &b, &a, &mut rng).unwrap().probability_used;
            prop_assert!((p + q - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn tv_accounting_holds(seed in any::<u64>(), budget in 0.0f64..20.0) {
            let mut rng = seeded(seed);
            let cfg = DriftConfig::new(0.2, 1.5, DriftMode::SphereWalk).unwrap();
            let path = ThetaPath::generate(random_unit(3, &mut rng), 100, &cfg, budget, &mut rng).unwrap();
            let recount: f64 = path.increments().iter().sum();
            prop_assert!((recount - path.tv_used).abs() <= 1e-9);
            prop_assert!(path.tv_used <= path.tv_budget);
        }
    }
}
