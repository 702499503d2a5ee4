//! Empirical checks of the analysis: the KL bound between Gibbs policies,
//! the oracle switching budget, local variation, the self-normalized
//! radius, the windowed estimation error, and regret scaling against the
//! fixed-reference baseline.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{
    make_features, random_unit, sample_preference, streams, DriftConfig, DriftMode, EnvConfig,
    FeatureSet, PreferenceEnv, ThetaPath,
};
use crate::error::{Error, Result};
use crate::estimator::{
    curvature_floor, estimation_error_terms, fit_logistic_window, self_normalized_rhs,
    BoundConstants, WindowBuffer, DEFAULT_TOL,
};
use crate::evodpo::{run_evodpo, EvoDpoConfig, PhaseConfig, ReferenceMode, SolverOptions};
use crate::numerics::{distance, dot_unchecked, norm, sigmoid};
use crate::policy::{softmax, DEFAULT_PI_MIN};
use crate::regret::{local_variations, measured_margin, slope_fit, switch_free_margin, switching_count};
use crate::rng::tagged_substream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub lemma: String,
    pub trials: usize,
    /// Trials with `LHS > RHS`.
    pub violations: usize,
    /// Trials left out (e.g. near-degenerate margin), not counted in `trials`.
    pub excluded: usize,
    pub max_slack_ratio: f64,
    pub violation_rate: f64,
    /// Largest violation rate the check tolerates.
    pub allowed_rate: f64,
    pub passed: bool,
    pub constants: BTreeMap<String, f64>,
}

impl LemmaReport {
    fn build(
        lemma: &str,
        ratios: &[f64],
        excluded: usize,
        allowed_rate: f64,
        constants: BTreeMap<String, f64>,
    ) -> Self {
        let trials = ratios.len();
        let violations = ratios.iter().filter(|r| **r > 1.0).count();
        let violation_rate = if trials == 0 { 0.0 } else { violations as f64 / trials as f64 };
        Self {
            lemma: lemma.to_string(),
            trials,
            violations,
            excluded,
            max_slack_ratio: ratios.iter().copied().fold(0.0, f64::max),
            violation_rate,
            allowed_rate,
            passed: trials > 0 && violation_rate <= allowed_rate,
            constants,
        }
    }
}

/// `δ + 3√(δ(1−δ)/n)`.
pub fn binomial_allowance(delta: f64, n: usize) -> f64 {
    delta + 3.0 * (delta * (1.0 - delta) / n as f64).sqrt()
}

/// `LHS/RHS`, with `0/0 = 0` and a positive LHS over a zero RHS counted as
/// a violation.
fn ratio(lhs: f64, rhs: f64) -> f64 {
    if lhs <= 0.0 {
        0.0
    } else if rhs <= 0.0 {
        f64::INFINITY
    } else {
        lhs / rhs
    }
}

fn exact_kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a / b).ln())
        .sum::<f64>()
        .max(0.0)
}

fn exact_gibbs(pi_ref: &[f64], u: &[f64], beta: f64) -> Vec<f64> {
    let logits: Vec<f64> = pi_ref.iter().zip(u).map(|(p, x)| p.ln() + x / beta).collect();
    softmax(&logits)
}

fn constants(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

/// `KL(gibbs(π_ref, u(θ), β) ‖ gibbs(π_ref, u(θ̂), β)) ≤ φ²‖θ − θ̂‖²/(2β²)`
/// on random draws with `K = 4`, `d = 3`, `β ∈ [0.1, 2]`.
pub fn check_kl_bound(trials: usize, seed: u64) -> Result<LemmaReport> {
    if trials == 0 {
        return Err(Error::InvalidArgument("need at least one trial".into()));
    }
    let (k, d) = (4, 3);
    let ratios = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = tagged_substream(seed, streams::TRIALS, i as u64);
            let fs = make_features(k, d, &mut rng)?;
            let theta = random_unit(d, &mut rng);
            let scale = rng.random_range(0.0..2.0);
            let dir = random_unit(d, &mut rng);
            let theta_hat: Vec<f64> = theta.iter().zip(&dir).map(|(t, e)| t + scale * e).collect();
            let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
            let s: f64 = raw.iter().sum();
            let pi_ref: Vec<f64> = raw.iter().map(|v| v / s).collect();
            let beta = rng.random_range(0.1..2.0);
            let p = exact_gibbs(&pi_ref, &fs.utilities(&theta)?, beta);
            let q = exact_gibbs(&pi_ref, &fs.utilities(&theta_hat)?, beta);
            let lhs = exact_kl(&p, &q);
            let dist = distance(&theta, &theta_hat);
            let rhs = fs.phi_max * fs.phi_max * dist * dist / (2.0 * beta * beta);
            Ok(ratio(lhs, rhs))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(LemmaReport::build(
        "kl-bound",
        &ratios,
        0,
        0.0,
        constants(&[("phi_max", 1.0), ("k", k as f64), ("d", d as f64)]),
    ))
}

/// Settings shared by the path-based checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathCheckConfig {
    pub steps: usize,
    pub arms: usize,
    pub dim: usize,
    pub drift: DriftConfig,
    pub tv_budget: f64,
}

impl Default for PathCheckConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            arms: 5,
            dim: 3,
            drift: DriftConfig {
                delta_min: 0.02,
                delta_max: 0.2,
                mode: DriftMode::SphereWalk,
                interval: 1,
            },
            tv_budget: 1e9,
        }
    }
}

/// Margins below this are treated as degenerate and reported separately.
pub const MIN_MARGIN: f64 = 1e-6;

/// `B_T ≤ (2φ_max/γ) Σ‖θ_t − θ_{t−1}‖` with a fixed context and the
/// measured margin `γ = min_t gap(u_{t−1}(x, ·))`. The same ratio with `γ`
/// taken over switch-free steps only is reported alongside in `constants`.
pub fn check_switching_budget(runs: usize, cfg: &PathCheckConfig, seed: u64) -> Result<LemmaReport> {
    // (ratio with γ over all steps, ratio with γ over switch-free steps)
    let results = (0..runs)
        .into_par_iter()
        .map(|i| -> Result<Option<(f64, f64)>> {
            let env = PreferenceEnv::generate(
                &EnvConfig {
                    arms: cfg.arms,
                    dim: cfg.dim,
                    horizon: cfg.steps,
                    drift: cfg.drift,
                    tv_budget: cfg.tv_budget,
                    fixed_context: true,
                },
                crate::rng::derive_seed(seed, streams::TRIALS, i as u64),
            )?;
            let ctx = env.step_contexts();
            let gamma = measured_margin(&env.path, &ctx)?;
            if gamma < MIN_MARGIN {
                return Ok(None);
            }
            let gamma_sf = switch_free_margin(&env.path, &ctx)?;
            let b = switching_count(&env.path, &ctx)? as f64;
            let v: f64 = env.path.increments().iter().sum();
            let phi = env.context(0).phi_max;
            Ok(Some((ratio(b, 2.0 * phi * v / gamma), ratio(b, 2.0 * phi * v / gamma_sf))))
        })
        .collect::<Result<Vec<_>>>()?;
    let excluded = results.iter().filter(|r| r.is_none()).count();
    let kept: Vec<(f64, f64)> = results.into_iter().flatten().collect();
    let ratios: Vec<f64> = kept.iter().map(|r| r.0).collect();
    let sf_violations = kept.iter().filter(|r| r.1 > 1.0).count();
    let sf_max = kept.iter().map(|r| r.1).fold(0.0, f64::max);
    Ok(LemmaReport::build(
        "switching-budget",
        &ratios,
        excluded,
        0.0,
        constants(&[
            ("phi_max", 1.0),
            ("steps", cfg.steps as f64),
            ("min_margin", MIN_MARGIN),
            ("switch_free_violations", sf_violations as f64),
            ("switch_free_max_slack_ratio", sf_max),
        ]),
    ))
}

/// Both local-variation inequalities on one path:
/// `Σ_{τ∈W_t} ‖θ_t − θ_τ‖ ≤ W·V_{t,W}` for every `t`, and
/// `Σ_t V_{t,W} ≤ W·V_T`. Returns the worst ratio of each.
pub fn local_variation_ratios(path: &ThetaPath, window: usize) -> (f64, f64) {
    let inc = path.increments();
    let v = local_variations(&inc, window);
    let w = window as f64;
    // Slack for summation-order rounding only.
    let tol = 1.0 + 1e-12;
    let mut worst_first: f64 = 0.0;
    for t in 0..path.len() {
        let lo = t.saturating_sub(window);
        let lhs: f64 = (lo..t).map(|tau| distance(&path.thetas[t], &path.thetas[tau])).sum();
        worst_first = worst_first.max(ratio(lhs, w * v[t] * tol));
    }
    let total: f64 = v.iter().sum();
    let vt: f64 = inc.iter().sum();
    (worst_first, ratio(total, w * vt * tol))
}

pub fn check_local_variation(runs: usize, window: usize, cfg: &PathCheckConfig, seed: u64) -> Result<LemmaReport> {
    if window == 0 {
        return Err(Error::InvalidArgument("window must be >= 1".into()));
    }
    let ratios = (0..runs)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let mut rng = tagged_substream(seed, streams::TRIALS, i as u64);
            let theta0 = random_unit(cfg.dim, &mut rng);
            let path = ThetaPath::generate(theta0, cfg.steps, &cfg.drift, cfg.tv_budget, &mut rng)?;
            let (a, b) = local_variation_ratios(&path, window);
            Ok(a.max(b))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LemmaReport::build(
        "local-variation",
        &ratios,
        0,
        0.0,
        constants(&[("window", window as f64), ("steps", cfg.steps as f64)]),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelfNormalizedConfig {
    pub window: usize,
    pub dim: usize,
    pub lambda: f64,
    pub delta: f64,
}

impl Default for SelfNormalizedConfig {
    fn default() -> Self {
        Self {
            window: 100,
            dim: 5,
            lambda: 0.1,
            delta: 0.05,
        }
    }
}

/// `‖Σ η_τ φ_τ‖ ≤ √(λ + Wφ²) · √(2(d/2 · ln(1 + Wφ²/(dλ)) + ln(1/δ)))` with
/// `η_τ = p_τ − σ(⟨θ, φ_τ⟩)` from Bradley–Terry labels. The radius uses the
/// 1-sub-Gaussian constant; the report also lists the radius for the
/// 1/2-sub-Gaussian constant that bounded noise admits.
pub fn check_self_normalized(trials: usize, cfg: &SelfNormalizedConfig, seed: u64) -> Result<LemmaReport> {
    if !(cfg.delta > 0.0 && cfg.delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta must lie in (0,1), got {}", cfg.delta)));
    }
    if trials == 0 {
        return Err(Error::InvalidArgument("need at least one trial".into()));
    }
    let rhs = self_normalized_rhs(cfg.window as f64, cfg.lambda, cfg.dim as f64, cfg.delta, 1.0)?;
    let ratios = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = tagged_substream(seed, streams::TRIALS, i as u64);
            let theta = random_unit(cfg.dim, &mut rng);
            let mut s = vec![0.0; cfg.dim];
            for _ in 0..cfg.window {
                let phi = random_unit(cfg.dim, &mut rng);
                let p = sigmoid(dot_unchecked(&theta, &phi));
                let label = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
                let eta = label - p;
                for (si, fi) in s.iter_mut().zip(&phi) {
                    *si += eta * fi;
                }
            }
            ratio(norm(&s), rhs)
        })
        .collect::<Vec<f64>>();
    Ok(LemmaReport::build(
        "self-normalized",
        &ratios,
        0,
        binomial_allowance(cfg.delta, trials),
        constants(&[
            ("window", cfg.window as f64),
            ("d", cfg.dim as f64),
            ("lambda", cfg.lambda),
            ("delta", cfg.delta),
            ("phi_max", 1.0),
            ("subgaussian", 1.0),
            ("rhs", rhs),
            ("rhs_half_subgaussian", 0.5 * rhs),
        ]),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimationCheckConfig {
    pub steps: usize,
    pub window: usize,
    pub arms: usize,
    pub dim: usize,
    pub lambda: f64,
    pub delta: f64,
    /// Steps between evaluations once the window is full.
    pub stride: usize,
    pub drift: DriftConfig,
}

impl Default for EstimationCheckConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            window: 200,
            arms: 8,
            dim: 3,
            lambda: 1.0,
            delta: 0.05,
            stride: 50,
            drift: DriftConfig {
                delta_min: 0.0,
                delta_max: 0.01,
                mode: DriftMode::SphereWalk,
                interval: 1,
            },
        }
    }
}

/// Windowed logistic estimation error against the three-term bound, with a
/// fixed context, uniform distinct action pairs and difference features
/// (`φ_max = 2`, `m0 = σ(2)(1 − σ(2))`, realized `c = λ_min(A_t)/W`).
pub fn check_estimation_error(runs: usize, cfg: &EstimationCheckConfig, seed: u64) -> Result<LemmaReport> {
    if !(cfg.delta > 0.0 && cfg.delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta must lie in (0,1), got {}", cfg.delta)));
    }
    if cfg.window == 0 || cfg.window > cfg.steps || cfg.stride == 0 {
        return Err(Error::InvalidArgument("need 1 <= window <= steps and stride >= 1".into()));
    }
    let phi_max = 2.0;
    let m0 = curvature_floor(phi_max);
    let per_run = (0..runs)
        .into_par_iter()
        .map(|i| -> Result<(Vec<f64>, f64)> {
            let env = PreferenceEnv::generate(
                &EnvConfig {
                    arms: cfg.arms,
                    dim: cfg.dim,
                    horizon: cfg.steps,
                    drift: cfg.drift,
                    tv_budget: f64::INFINITY,
                    fixed_context: true,
                },
                crate::rng::derive_seed(seed, streams::TRIALS, i as u64),
            )?;
            let mut rng = tagged_substream(seed, streams::LEARNER, i as u64);
            let x: &FeatureSet = env.context(0);
            let inc = env.path.increments();
            let v = local_variations(&inc, cfg.window);
            let mut buf = WindowBuffer::new(cfg.window, cfg.dim)?;
            let mut ratios = Vec::new();
            let mut min_c = f64::INFINITY;
            for t in 0..cfg.steps {
                let theta = env.theta(t);
                let a = rng.random_range(0..cfg.arms);
                let b = (a + rng.random_range(1..cfg.arms)) % cfg.arms;
                let lab = sample_preference(theta, &x.rows[a], &x.rows[b], &mut rng)?;
                let phi: Vec<f64> = x.rows[a].iter().zip(&x.rows[b]).map(|(p, q)| p - q).collect();
                buf.push(phi, if lab.winner_is_first { 1.0 } else { 0.0 })?;
                // The estimate at step t uses the window ending at t−1.
                let next = t + 1;
                if next < cfg.steps && next >= cfg.window && (next - cfg.window) % cfg.stride == 0 {
                    let est = fit_logistic_window(&buf, cfg.lambda, DEFAULT_TOL)?;
                    let w = cfg.window as f64;
                    let c = est.diversity(cfg.window);
                    min_c = min_c.min(c);
                    let k = BoundConstants {
                        lambda: cfg.lambda,
                        d: cfg.dim as f64,
                        delta: cfg.delta,
                        m0,
                        c,
                        phi_max,
                        theta_max: 1.0,
                    };
                    let rhs = estimation_error_terms(v[next], w, &k)?.total();
                    let lhs = distance(&est.theta_hat, env.theta(next));
                    ratios.push(ratio(lhs, rhs));
                }
            }
            Ok((ratios, min_c))
        })
        .collect::<Result<Vec<_>>>()?;
    let min_c = per_run.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    let ratios: Vec<f64> = per_run.into_iter().flat_map(|r| r.0).collect();
    let n = ratios.len().max(1);
    Ok(LemmaReport::build(
        "estimation-error",
        &ratios,
        0,
        binomial_allowance(cfg.delta, n),
        constants(&[
            ("phi_max", phi_max),
            ("theta_max", 1.0),
            ("m0", m0),
            ("c_min_realized", min_c),
            ("lambda", cfg.lambda),
            ("window", cfg.window as f64),
            ("delta", cfg.delta),
            ("subgaussian", 1.0),
        ]),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingConfig {
    pub horizons: Vec<usize>,
    pub seeds: Vec<u64>,
    pub arms: usize,
    pub dim: usize,
    pub delta_min: f64,
    pub delta_max: f64,
    /// Drift moves per run; spaced `T / drift_events` apart so that the
    /// total variation stays O(1) across horizons.
    pub drift_events: usize,
    pub tv_budget: f64,
    pub kappa: f64,
    pub phase: PhaseConfig,
    pub solver: SolverOptions,
    pub pi_min: f64,
}

pub const MIN_SCALING_SEEDS: usize = 20;

impl Default for ScalingConfig {
    fn default() -> Self {
        Self {
            horizons: vec![2000, 4000, 8000],
            seeds: (0..MIN_SCALING_SEEDS as u64).collect(),
            arms: 5,
            dim: 5,
            delta_min: 1.0,
            delta_max: 5.0,
            drift_events: 8,
            tv_budget: 16.0,
            kappa: 2.0 / 3.0,
            phase: PhaseConfig {
                eps_s: 0.0,
                delta_h: f64::INFINITY,
                ..PhaseConfig::default()
            },
            solver: SolverOptions::default(),
            pi_min: DEFAULT_PI_MIN,
        }
    }
}

impl ScalingConfig {
    pub fn env(&self, horizon: usize, frozen: bool) -> Result<EnvConfig> {
        let drift = if frozen {
            DriftConfig::frozen()
        } else {
            DriftConfig::new(self.delta_min, self.delta_max, DriftMode::SphereWalk)?
                .with_interval((horizon / self.drift_events.max(1)).max(1))
        };
        Ok(EnvConfig {
            arms: self.arms,
            dim: self.dim,
            horizon,
            drift,
            tv_budget: self.tv_budget,
            fixed_context: false,
        })
    }

    pub fn learner(&self, horizon: usize, mode: ReferenceMode) -> EvoDpoConfig {
        EvoDpoConfig {
            phase: self.phase,
            solver: self.solver,
            window: window_for(horizon, self.kappa),
            pi_min: self.pi_min,
            mode,
        }
    }
}

/// `W = ⌈T^κ⌉`.
pub fn window_for(horizon: usize, kappa: f64) -> usize {
    ((horizon as f64).powf(kappa).ceil() as usize).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantCurve {
    /// `[seed][horizon]` cumulative regret.
    pub regret: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
    pub slope_per_seed: Vec<f64>,
    pub mean_regret: Vec<f64>,
    pub mean_bias: Vec<f64>,
    pub slope_of_mean: f64,
    pub bias_slope_of_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub horizons: Vec<usize>,
    pub seeds: Vec<u64>,
    pub evolving: VariantCurve,
    pub fixed: VariantCurve,
    /// Share of seeds whose evolving exponent is below the fixed one.
    pub paired_win_rate: f64,
    pub sublinear: bool,
    pub bias_gap: f64,
    pub bias_gap_ok: bool,
}

fn curve(runs: &[Vec<(f64, f64)>], horizons: &[f64]) -> Result<VariantCurve> {
    let regret: Vec<Vec<f64>> = runs.iter().map(|r| r.iter().map(|x| x.0).collect()).collect();
    let bias: Vec<Vec<f64>> = runs.iter().map(|r| r.iter().map(|x| x.1).collect()).collect();
    let slope_per_seed = regret
        .iter()
        .map(|r| slope_fit(horizons, r))
        .collect::<Result<Vec<_>>>()?;
    let n = runs.len() as f64;
    let mean = |m: &Vec<Vec<f64>>| -> Vec<f64> {
        (0..horizons.len()).map(|j| m.iter().map(|r| r[j]).sum::<f64>() / n).collect()
    };
    let mean_regret = mean(&regret);
    let mean_bias = mean(&bias);
    Ok(VariantCurve {
        slope_of_mean: slope_fit(horizons, &mean_regret)?,
        bias_slope_of_mean: slope_fit(horizons, &mean_bias)?,
        regret,
        bias,
        slope_per_seed,
        mean_regret,
        mean_bias,
    })
}

/// Runs both variants on identical worlds for every (seed, horizon) and
/// fits log-log exponents of cumulative regret and of its bias part.
pub fn check_regret_scaling(cfg: &ScalingConfig) -> Result<ScalingReport> {
    if cfg.seeds.len() < MIN_SCALING_SEEDS {
        return Err(Error::InvalidArgument(format!(
            "regret scaling needs at least {MIN_SCALING_SEEDS} seeds, got {}",
            cfg.seeds.len()
        )));
    }
    if cfg.horizons.len() < 3 {
        return Err(Error::InvalidArgument("regret scaling needs at least 3 horizons".into()));
    }
    let per_seed = cfg
        .seeds
        .par_iter()
        .map(|&seed| -> Result<[Vec<(f64, f64)>; 2]> {
            let mut out = [Vec::new(), Vec::new()];
            for &h in &cfg.horizons {
                let env = PreferenceEnv::generate(&cfg.env(h, false)?, seed)?;
                for (i, mode) in [ReferenceMode::Evolving, ReferenceMode::Fixed].into_iter().enumerate() {
                    let run = run_evodpo(&env, &cfg.learner(h, mode), seed)?;
                    out[i].push((run.ledger.cumulative_regret(), run.ledger.cumulative_bias()));
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let hs: Vec<f64> = cfg.horizons.iter().map(|h| *h as f64).collect();
    let evo_runs: Vec<_> = per_seed.iter().map(|p| p[0].clone()).collect();
    let fix_runs: Vec<_> = per_seed.iter().map(|p| p[1].clone()).collect();
    let evolving = curve(&evo_runs, &hs)?;
    let fixed = curve(&fix_runs, &hs)?;
    let wins = evolving
        .slope_per_seed
        .iter()
        .zip(&fixed.slope_per_seed)
        .filter(|(e, f)| e < f)
        .count();
    let bias_gap = fixed.bias_slope_of_mean - evolving.bias_slope_of_mean;
    Ok(ScalingReport {
        horizons: cfg.horizons.clone(),
        seeds: cfg.seeds.clone(),
        paired_win_rate: wins as f64 / cfg.seeds.len() as f64,
        sublinear: evolving.slope_of_mean <= 0.95,
        bias_gap,
        bias_gap_ok: bias_gap >= 0.15,
        evolving,
        fixed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenBiasReport {
    pub horizon: usize,
    pub seeds: Vec<u64>,
    /// Seed-mean of `R_T^bias / T` per variant.
    pub evolving: f64,
    pub fixed: f64,
    pub passed: bool,
}

/// With drift frozen, both variants' per-step bias should be negligible.
pub fn check_frozen_bias(cfg: &ScalingConfig, horizon: usize) -> Result<FrozenBiasReport> {
    if cfg.seeds.is_empty() {
        return Err(Error::InvalidArgument("need at least one seed".into()));
    }
    let per_seed = cfg
        .seeds
        .par_iter()
        .map(|&seed| -> Result<[f64; 2]> {
            let env = PreferenceEnv::generate(&cfg.env(horizon, true)?, seed)?;
            let mut out = [0.0; 2];
            for (i, mode) in [ReferenceMode::Evolving, ReferenceMode::Fixed].into_iter().enumerate() {
                let run = run_evodpo(&env, &cfg.learner(horizon, mode), seed)?;
                out[i] = run.ledger.cumulative_bias() / horizon as f64;
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = per_seed.len() as f64;
    let evolving = per_seed.iter().map(|p| p[0]).sum::<f64>() / n;
    let fixed = per_seed.iter().map(|p| p[1]).sum::<f64>() / n;
    Ok(FrozenBiasReport {
        horizon,
        seeds: cfg.seeds.clone(),
        evolving,
        fixed,
        passed: evolving.abs() <= 1e-3 && fixed.abs() <= 1e-3,
    })
}

/// Sizes for one pass over all lemma checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyPlan {
    pub kl_trials: usize,
    pub path_runs: usize,
    pub local_window: usize,
    pub self_normalized_trials: usize,
    pub estimation_runs: usize,
    pub path: PathCheckConfig,
    pub self_normalized: SelfNormalizedConfig,
    pub estimation: EstimationCheckConfig,
}

impl Default for VerifyPlan {
    fn default() -> Self {
        Self {
            kl_trials: 1000,
            path_runs: 100,
            local_window: 16,
            self_normalized_trials: 2000,
            estimation_runs: 50,
            path: PathCheckConfig::default(),
            self_normalized: SelfNormalizedConfig::default(),
            estimation: EstimationCheckConfig::default(),
        }
    }
}

pub fn verify_lemmas(plan: &VerifyPlan, seed: u64) -> Result<Vec<LemmaReport>> {
    Ok(vec![
        check_kl_bound(plan.kl_trials, seed)?,
        check_switching_budget(plan.path_runs, &plan.path, seed)?,
        check_local_variation(plan.path_runs, plan.local_window, &plan.path, seed)?,
        check_self_normalized(plan.self_normalized_trials, &plan.self_normalized, seed)?,
        check_estimation_error(plan.estimation_runs, &plan.estimation, seed)?,
    ])
}
