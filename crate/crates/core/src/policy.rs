//! Finite-action categorical policies, the closed-form KL-regularized (Gibbs)
//! tilt, exact KL, policy values and the inspector's gate statistics.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::FeatureSet;
use crate::error::{Error, Result};
use crate::numerics::{dot_unchecked, log_sum_exp};

/// Default lower bound on every policy probability.
pub const DEFAULT_PI_MIN: f64 = 1e-9;

/// Raises entries below `floor` to `floor` and rescales the remaining mass so
/// the row still sums to one. A row already above the floor is returned as is.
pub fn floor_renormalize(p: &mut [f64], floor: f64) {
    let k = p.len();
    if k == 0 || floor <= 0.0 {
        return;
    }
    let floor = floor.min(1.0 / k as f64);
    let mut pinned = vec![false; k];
    loop {
        let mut changed = false;
        for (i, v) in p.iter().enumerate() {
            if !pinned[i] && *v < floor {
                pinned[i] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let n_pinned = pinned.iter().filter(|&&b| b).count();
        let free_mass: f64 = p
            .iter()
            .zip(&pinned)
            .filter(|(_, &b)| !b)
            .map(|(v, _)| *v)
            .sum();
        let target = 1.0 - n_pinned as f64 * floor;
        for (v, &b) in p.iter_mut().zip(&pinned) {
            if b {
                *v = floor;
            } else if free_mass > 0.0 {
                *v *= target / free_mass;
            }
        }
    }
}

fn check_simplex(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::Empty("probability vector"));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-9 || p.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "not a probability vector (sum {s})"
        )));
    }
    Ok(())
}

/// Normalized probabilities from unnormalized log weights, with max shift.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|l| (l - lse).exp()).collect()
}

/// `π ∝ π_ref · exp(u/β)`, floored at [`DEFAULT_PI_MIN`].
pub fn gibbs(pi_ref: &[f64], u: &[f64], beta: f64) -> Result<Vec<f64>> {
    gibbs_with_floor(pi_ref, u, beta, DEFAULT_PI_MIN)
}

pub fn gibbs_with_floor(pi_ref: &[f64], u: &[f64], beta: f64, floor: f64) -> Result<Vec<f64>> {
    if !(beta > 0.0) {
        return Err(Error::InvalidArgument(format!("beta must be positive, got {beta}")));
    }
    if pi_ref.len() != u.len() {
        return Err(Error::DimensionMismatch {
            expected: pi_ref.len(),
            got: u.len(),
        });
    }
    check_simplex(pi_ref)?;
    if pi_ref.iter().any(|&p| p <= 0.0) {
        return Err(Error::Support {
            value: pi_ref.iter().copied().fold(f64::INFINITY, f64::min),
            floor,
        });
    }
    let logits: Vec<f64> = pi_ref.iter().zip(u).map(|(p, x)| p.ln() + x / beta).collect();
    let mut out = softmax(&logits);
    floor_renormalize(&mut out, floor);
    Ok(out)
}

/// `KL(p ‖ q) = Σ p ln(p/q)` with `0 ln 0 = 0`. `q` must respect the support
/// floor.
pub fn kl(p: &[f64], q: &[f64]) -> Result<f64> {
    kl_with_floor(p, q, DEFAULT_PI_MIN)
}

pub fn kl_with_floor(p: &[f64], q: &[f64], floor: f64) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            got: q.len(),
        });
    }
    let mut total = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if qi < floor * (1.0 - 1e-6) {
            return Err(Error::Support { value: qi, floor });
        }
        if pi > 0.0 {
            total += pi * (pi / qi).ln();
        }
    }
    Ok(total.max(0.0))
}

/// `J(π) = Σ π(y) u(y)`.
pub fn value(pi: &[f64], u: &[f64]) -> Result<f64> {
    if pi.len() != u.len() {
        return Err(Error::DimensionMismatch {
            expected: pi.len(),
            got: u.len(),
        });
    }
    Ok(dot_unchecked(pi, u))
}

/// Per-context probability table over `K` actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalPolicy {
    table: Vec<Vec<f64>>,
    support_floor: f64,
}

impl CategoricalPolicy {
    pub fn new(mut table: Vec<Vec<f64>>, support_floor: f64) -> Result<Self> {
        if !(support_floor > 0.0) {
            return Err(Error::InvalidArgument("support floor must be positive".into()));
        }
        for row in &mut table {
            check_simplex(row)?;
            floor_renormalize(row, support_floor);
        }
        Ok(Self {
            table,
            support_floor,
        })
    }

    pub fn uniform(contexts: usize, actions: usize) -> Self {
        Self {
            table: vec![vec![1.0 / actions as f64; actions]; contexts],
            support_floor: DEFAULT_PI_MIN,
        }
    }

    pub fn row(&self, context: usize) -> &[f64] {
        &self.table[context]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.table
    }

    pub fn contexts(&self) -> usize {
        self.table.len()
    }

    pub fn support_floor(&self) -> f64 {
        self.support_floor
    }

    /// Row-wise Gibbs tilt with per-context utilities.
    pub fn tilt(&self, utilities: &[Vec<f64>], beta: f64) -> Result<Self> {
        if utilities.len() != self.table.len() {
            return Err(Error::DimensionMismatch {
                expected: self.table.len(),
                got: utilities.len(),
            });
        }
        let table = self
            .table
            .iter()
            .zip(utilities)
            .map(|(row, u)| gibbs_with_floor(row, u, beta, self.support_floor))
            .collect::<Result<_>>()?;
        Ok(Self {
            table,
            support_floor: self.support_floor,
        })
    }
}

/// Context ids sampled without replacement for one gating decision.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateSubset {
    ids: Vec<usize>,
}

impl GateSubset {
    pub fn new(ids: Vec<usize>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::Empty("gate subset"));
        }
        let mut sorted = ids.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("gate subset ids must be unique".into()));
        }
        Ok(Self { ids })
    }

    /// Draws `min(size, available)` distinct ids from `0..available`.
    pub fn sample<R: Rng + ?Sized>(available: usize, size: usize, rng: &mut R) -> Result<Self> {
        if available == 0 || size == 0 {
            return Err(Error::Empty("gate subset"));
        }
        let ids = rand::seq::index::sample(rng, available, size.min(available)).into_vec();
        Ok(Self { ids })
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Mean over the gate contexts of the exact categorical `KL(π(·|x) ‖ π_ref(·|x))`.
pub fn gate_kl_estimate(
    pi: &CategoricalPolicy,
    pi_ref: &CategoricalPolicy,
    gate: &GateSubset,
) -> Result<f64> {
    if gate.is_empty() {
        return Err(Error::Empty("gate subset"));
    }
    let mut total = 0.0;
    for &x in gate.ids() {
        total += kl_with_floor(pi.row(x), pi_ref.row(x), pi_ref.support_floor())?;
    }
    Ok(total / gate.len() as f64)
}

/// Subset mean of `Score(x, π) = J_x(π)` under the caller's per-context
/// utilities (estimated for the live gate, true for diagnostics).
pub fn inspector_score(
    pi: &CategoricalPolicy,
    gate: &GateSubset,
    utilities: &[Vec<f64>],
) -> Result<f64> {
    if gate.is_empty() {
        return Err(Error::Empty("gate subset"));
    }
    let mut total = 0.0;
    for &x in gate.ids() {
        total += value(pi.row(x), &utilities[x])?;
    }
    Ok(total / gate.len() as f64)
}

/// A log-linear policy built as a chain of Gibbs tilts of the uniform policy,
/// `π_{j+1}(y|x) ∝ π_j(y|x) · exp(⟨v_j, φ(x, y)⟩)`, floored after every tilt.
///
/// Evaluates on arbitrary (fresh) contexts, which is how per-step policies
/// are represented when contexts are never revisited.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GibbsChain {
    increments: Arc<Vec<Vec<f64>>>,
    floor: f64,
}

impl GibbsChain {
    pub fn uniform(floor: f64) -> Self {
        Self {
            increments: Arc::new(Vec::new()),
            floor,
        }
    }

    /// Chain extended by one tilt with natural-parameter increment `v`.
    pub fn extended(&self, v: Vec<f64>) -> Self {
        let mut incs = (*self.increments).clone();
        incs.push(v);
        Self {
            increments: Arc::new(incs),
            floor: self.floor,
        }
    }

    pub fn depth(&self) -> usize {
        self.increments.len()
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn increments(&self) -> &[Vec<f64>] {
        &self.increments
    }

    /// Probabilities at a context.
    pub fn probs(&self, features: &FeatureSet) -> Vec<f64> {
        let k = features.arms();
        let mut p = vec![1.0 / k as f64; k];
        for inc in self.increments.iter() {
            p = tilt_once(&p, features, inc, self.floor);
        }
        p
    }
}

/// One floored tilt `p ∝ p · exp(⟨v, φ_y⟩)`.
pub fn tilt_once(p: &[f64], features: &FeatureSet, v: &[f64], floor: f64) -> Vec<f64> {
    let logits: Vec<f64> = p
        .iter()
        .zip(&features.rows)
        .map(|(pi, phi)| pi.ln() + dot_unchecked(v, phi))
        .collect();
    let mut out = softmax(&logits);
    floor_renormalize(&mut out, floor);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{make_features, random_unit};
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_simplex<R: Rng>(k: usize, rng: &mut R) -> Vec<f64> {
        let raw: Vec<f64> = (0..k).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
        let s: f64 = raw.iter().sum();
        let mut p: Vec<f64> = raw.into_iter().map(|x| x / s).collect();
        floor_renormalize(&mut p, DEFAULT_PI_MIN);
        p
    }

    fn tv(a: &[f64], b: &[f64]) -> f64 {
        0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
    }

    #[test]
    fn gibbs_constant_utility_returns_reference() {
        let r = [0.2, 0.3, 0.5];
        let out = gibbs(&r, &[1.7, 1.7, 1.7], 0.4).unwrap();
        assert!(tv(&out, &r) < 1e-15);
    }

    #[test]
    fn gibbs_partition_sum_example() {
        let out = gibbs(&[0.5, 0.5], &[3.0f64.ln(), 0.0], 1.0).unwrap();
        // Z = 0.5·3 + 0.5·1 = 2
        assert!((out[0] - 0.75).abs() < 1e-15);
        assert!((out[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn gibbs_large_beta_returns_reference() {
        let out = gibbs(&[0.5, 0.5], &[1.0, 0.0], 1e6).unwrap();
        assert!(tv(&out, &[0.5, 0.5]) <= 1e-5);
    }

    #[test]
    fn gibbs_rejects_bad_beta_and_small_beta_is_finite() {
        assert!(gibbs(&[0.5, 0.5], &[1.0, 0.0], 0.0).is_err());
        assert!(gibbs(&[0.5, 0.5], &[1.0, 0.0], -1.0).is_err());
        let out = gibbs(&[0.5, 0.5], &[1.0, 0.0], 1e-6).unwrap();
        assert!(out.iter().all(|v| v.is_finite()));
        assert!(out[1] >= DEFAULT_PI_MIN);
    }

    #[test]
    fn kl_examples() {
        let p = [0.3, 0.7];
        assert_eq!(kl(&p, &p).unwrap(), 0.0);
        let a = kl(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!((a - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((a - 0.693147).abs() < 1e-6);
        let b = kl(&[0.75, 0.25], &[0.5, 0.5]).unwrap();
        let direct = 0.75 * 1.5f64.ln() + 0.25 * 0.5f64.ln();
        assert!((b - direct).abs() < 1e-15);
        assert!((b - 0.130812).abs() < 1e-6);
        assert!(matches!(kl(&[0.5, 0.5], &[1.0, 0.0]), Err(Error::Support { .. })));
    }

    #[test]
    fn value_examples() {
        assert_eq!(value(&[1.0, 0.0], &[0.3, 0.9]).unwrap(), 0.3);
        assert_eq!(value(&[0.5, 0.5], &[1.0, 3.0]).unwrap(), 2.0);
        let mut rng = seeded(30);
        let p = random_simplex(6, &mut rng);
        let u: Vec<f64> = (0..6).map(|_| rng.random::<f64>()).collect();
        let mut naive = 0.0;
        for i in 0..6 {
            naive += p[i] * u[i];
        }
        assert!((value(&p, &u).unwrap() - naive).abs() <= 1e-12);
    }

    fn table(rng: &mut impl Rng, n: usize, k: usize) -> CategoricalPolicy {
        CategoricalPolicy::new((0..n).map(|_| random_simplex(k, rng)).collect(), DEFAULT_PI_MIN)
            .unwrap()
    }

    #[test]
    fn gate_kl_examples() {
        let mut rng = seeded(31);
        let pi = table(&mut rng, 40, 4);
        let reference = table(&mut rng, 40, 4);
        let all = GateSubset::new((0..40).collect()).unwrap();
        assert_eq!(gate_kl_estimate(&pi, &pi, &all).unwrap(), 0.0);
        let single = GateSubset::new(vec![7]).unwrap();
        assert_eq!(
            gate_kl_estimate(&pi, &reference, &single).unwrap(),
            kl(pi.row(7), reference.row(7)).unwrap()
        );
        let g = GateSubset::sample(40, 32, &mut rng).unwrap();
        assert_eq!(g.len(), 32);
        let mean: f64 = g
            .ids()
            .iter()
            .map(|&x| kl(pi.row(x), reference.row(x)).unwrap())
            .sum::<f64>()
            / 32.0;
        assert!((gate_kl_estimate(&pi, &reference, &g).unwrap() - mean).abs() <= 1e-12);
        assert!(GateSubset::new(vec![]).is_err());
        assert!(GateSubset::new(vec![1, 1]).is_err());
    }

    #[test]
    fn inspector_score_examples() {
        let pi = CategoricalPolicy::new(vec![vec![0.0, 1.0, 0.0]], DEFAULT_PI_MIN).unwrap();
        let u = vec![vec![0.1, 0.9, -0.4]];
        let g = GateSubset::new(vec![0]).unwrap();
        assert!((inspector_score(&pi, &g, &u).unwrap() - 0.9).abs() < 1e-8);

        let mut rng = seeded(32);
        let p = table(&mut rng, 20, 3);
        let utils: Vec<Vec<f64>> = (0..20).map(|_| (0..3).map(|_| rng.random()).collect()).collect();
        let g = GateSubset::sample(20, 8, &mut rng).unwrap();
        let s = inspector_score(&p, &g, &utils).unwrap();
        assert_eq!(s - inspector_score(&p, &g, &utils).unwrap(), 0.0);
        let oracle: f64 = g
            .ids()
            .iter()
            .map(|&x| (0..3).map(|y| p.row(x)[y] * utils[x][y]).sum::<f64>())
            .sum::<f64>()
            / g.len() as f64;
        assert!((s - oracle).abs() <= 1e-12);
    }

    #[test]
    fn chain_matches_repeated_gibbs() {
        let mut rng = seeded(33);
        let fs = make_features(4, 3, &mut rng).unwrap();
        let v1 = random_unit(3, &mut rng);
        let v2 = random_unit(3, &mut rng);
        let chain = GibbsChain::uniform(DEFAULT_PI_MIN).extended(v1.clone()).extended(v2.clone());
        let u1 = fs.utilities(&v1).unwrap();
        let u2 = fs.utilities(&v2).unwrap();
        let step1 = gibbs(&[0.25; 4], &u1, 1.0).unwrap();
        let step2 = gibbs(&step1, &u2, 1.0).unwrap();
        assert!(tv(&chain.probs(&fs), &step2) < 1e-14);
    }

    #[test]
    fn floor_is_a_noop_above_floor() {
        let mut p = vec![0.2, 0.3, 0.5];
        floor_renormalize(&mut p, 1e-9);
        assert_eq!(p, vec![0.2, 0.3, 0.5]);
    }

    proptest! {
        #[test]
        fn floor_renormalize_invariants(raw in proptest::collection::vec(0.0f64..1.0, 2..8), exps in proptest::collection::vec(0i32..40, 8)) {
            let mut p: Vec<f64> = raw.iter().zip(&exps).map(|(x, e)| x * 10f64.powi(-e)).collect();
            let s: f64 = p.iter().sum();
            prop_assume!(s > 0.0);
            for v in &mut p { *v /= s; }
            floor_renormalize(&mut p, 1e-9);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(p.iter().all(|&v| v >= 1e-9 * (1.0 - 1e-12)));
        }

        #[test]
        fn gibbs_maximizes_regularized_value(seed in any::<u64>(), k in 2usize..7) {
            let mut rng = seeded(seed);
            let r = random_simplex(k, &mut rng);
            let u: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
            let beta = rng.random_range(0.1..2.0);
            let g = gibbs(&r, &u, beta).unwrap();
            let objective = |p: &[f64]| value(p, &u).unwrap() - beta * kl(p, &r).unwrap();
            let best = objective(&g);
            for _ in 0..100 {
                let eps = rng.random_range(0.0..0.3);
                let other = random_simplex(k, &mut rng);
                let mut q: Vec<f64> = g.iter().zip(&other).map(|(a, b)| (1.0 - eps) * a + eps * b).collect();
                floor_renormalize(&mut q, DEFAULT_PI_MIN);
                prop_assert!(best >= objective(&q) - 1e-10);
            }
        }

        #[test]
        fn pinsker_holds(seed in any::<u64>(), k in 2usize..8) {
            let mut rng = seeded(seed);
            let p = random_simplex(k, &mut rng);
            let q = random_simplex(k, &mut rng);
            let l1: f64 = p.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum();
            prop_assert!(l1 <= (2.0 * kl(&p, &q).unwrap()).sqrt() + 1e-12);
        }

        #[test]
        fn kl_bound_on_gibbs_pairs(seed in any::<u64>()) {
            let mut rng = seeded(seed);
            let fs = make_features(4, 3, &mut rng).unwrap();
            let theta = random_unit(3, &mut rng);
            let theta_hat: Vec<f64> = (0..3).map(|_| rng.random_range(-1.5..1.5)).collect();
            let r = random_simplex(4, &mut rng);
            let beta = rng.random_range(0.1..2.0);
            let a = gibbs(&r, &fs.utilities(&theta).unwrap(), beta).unwrap();
            let b = gibbs(&r, &fs.utilities(&theta_hat).unwrap(), beta).unwrap();
            let d2: f64 = theta.iter().zip(&theta_hat).map(|(x, y)| (x - y) * (x - y)).sum();
            prop_assert!(kl(&a, &b).unwrap() <= d2 / (2.0 * beta * beta) + 1e-12);
        }
    }
}
