//! DPO and EvoDPO over the Gibbs-of-linear-reward policy class: the loss,
//! its minimizer, reference proposal, the inspector gate and the phase loop.
//!
//! Under `π(y|x) ∝ π_ref(y|x) · exp(⟨w, φ(x,y)⟩/β)` the DPO margin of a pair
//! is `⟨w, φ(x,y⁺) − φ(x,y⁻)⟩`, so the fit is regularized logistic
//! regression on difference features.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{sample_preference, streams, FeatureSet, PreferenceEnv};
use crate::error::{Error, Result};
use crate::numerics::{dot_unchecked, neg_log_sigmoid, norm, sigmoid};
use crate::policy::{
    gate_kl_estimate, gibbs_with_floor, inspector_score, tilt_once, CategoricalPolicy, GateSubset,
    GibbsChain, DEFAULT_PI_MIN,
};
use crate::regret::{argmax_lowest, regret_decompose, RegretLedger};
use crate::rng::{tagged_substream, SimRng};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PairMeta {
    pub phase: usize,
    pub island: Option<usize>,
    pub winner_score: Option<f64>,
    pub loser_score: Option<f64>,
}

/// `(x, y⁺, y⁻, m)`; `context` indexes the caller's context table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub context: usize,
    pub winner: usize,
    pub loser: usize,
    pub meta: PairMeta,
}

impl PreferencePair {
    pub fn new(context: usize, winner: usize, loser: usize, arms: usize) -> Result<Self> {
        if winner == loser {
            return Err(Error::InvalidArgument(format!("winner and loser are both {winner}")));
        }
        if winner >= arms || loser >= arms {
            return Err(Error::InvalidArgument(format!(
                "actions ({winner}, {loser}) out of range for {arms} arms"
            )));
        }
        Ok(Self {
            context,
            winner,
            loser,
            meta: PairMeta::default(),
        })
    }

    pub fn with_meta(mut self, meta: PairMeta) -> Self {
        self.meta = meta;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseConfig {
    pub beta: f64,
    pub beta_ref: f64,
    pub eps_s: f64,
    pub delta_h: f64,
    pub phase_length: usize,
    pub gate_size: usize,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        Self {
            beta: 0.6,
            beta_ref: 0.01,
            eps_s: 0.0007,
            delta_h: 0.002,
            phase_length: 20,
            gate_size: 32,
        }
    }
}

impl PhaseConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        if !(self.beta_ref > 0.0 && self.beta_ref.is_finite()) {
            return bad(format!("beta_ref must be positive, got {}", self.beta_ref));
        }
        if !(self.eps_s >= 0.0) {
            return bad(format!("eps_s must be nonnegative, got {}", self.eps_s));
        }
        if !(self.delta_h > 0.0) {
            return bad(format!("delta_H must be positive, got {}", self.delta_h));
        }
        if self.phase_length == 0 {
            return bad("phase_length must be >= 1".into());
        }
        if self.gate_size == 0 {
            return bad("gate_size must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Ridge weight on the reward parameter.
    pub lambda: f64,
    /// Gradient-norm tolerance per unit of data (scaled by `1 + N`).
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            tol: 1e-10,
            max_iters: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GateDecision {
    Accept,
    Reject,
}

/// Inspector rule: accept iff `ΔŜ ≥ ε_s` and `KL̂ ≤ δ_H`.
pub fn gate(delta_s: f64, kl_hat: f64, cfg: &PhaseConfig) -> GateDecision {
    if delta_s >= cfg.eps_s && kl_hat <= cfg.delta_h {
        GateDecision::Accept
    } else {
        GateDecision::Reject
    }
}

/// How a phase's gate outcome is recorded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseOutcomeKind {
    Accepted,
    Rejected,
    /// Fixed-reference baseline: statistics computed, gate not consulted.
    Inert,
    /// Empty dataset: no fit and no gate.
    Skipped,
}

impl PhaseOutcomeKind {
    pub fn csv_label(&self) -> &'static str {
        match self {
            Self::Accepted => "1",
            Self::Rejected => "0",
            Self::Inert => "inert",
            Self::Skipped => "skip",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceMode {
    Evolving,
    Fixed,
    /// Evolving machinery with the gate forced to reject.
    AlwaysReject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub k: usize,
    pub n_pairs: usize,
    pub loss_trace: Vec<f64>,
    pub delta_s: f64,
    pub kl_hat: f64,
    pub outcome: PhaseOutcomeKind,
    pub beta: f64,
    pub eps_s: f64,
    pub delta_h: f64,
    /// Index into `{final, mid, reference}` picked by the proposal step.
    pub chosen: Option<usize>,
    pub ref_before: usize,
    pub ref_after: usize,
}

fn check_pairs(
    pairs: &[PreferencePair],
    contexts: usize,
    arms: usize,
) -> Result<()> {
    for p in pairs {
        if p.context >= contexts {
            return Err(Error::InvalidArgument(format!(
                "pair context {} outside table of {contexts}",
                p.context
            )));
        }
        if p.winner >= arms || p.loser >= arms || p.winner == p.loser {
            return Err(Error::InvalidArgument(format!(
                "invalid pair actions ({}, {})",
                p.winner, p.loser
            )));
        }
    }
    Ok(())
}

fn log_prob(pi: &CategoricalPolicy, x: usize, y: usize) -> Result<f64> {
    let v = pi.row(x)[y];
    if !(v > 0.0) {
        return Err(Error::Support { value: v, floor: 0.0 });
    }
    Ok(v.ln())
}

/// Mean DPO loss `−ln σ(β[ln π(y⁺)/π_ref(y⁺) − ln π(y⁻)/π_ref(y⁻)])`.
pub fn dpo_loss(
    pi: &CategoricalPolicy,
    pi_ref: &CategoricalPolicy,
    pairs: &[PreferencePair],
    beta: f64,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("preference pairs"));
    }
    if pi.contexts() != pi_ref.contexts() {
        return Err(Error::DimensionMismatch {
            expected: pi_ref.contexts(),
            got: pi.contexts(),
        });
    }
    let arms = pi.row(0).len();
    check_pairs(pairs, pi.contexts(), arms)?;
    let mut total = 0.0;
    for p in pairs {
        let win = log_prob(pi, p.context, p.winner)? - log_prob(pi_ref, p.context, p.winner)?;
        let lose = log_prob(pi, p.context, p.loser)? - log_prob(pi_ref, p.context, p.loser)?;
        total += neg_log_sigmoid(beta * (win - lose));
    }
    Ok(total / pairs.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpoFit {
    pub policy: CategoricalPolicy,
    /// Reward parameter `w`; the policy tilt is `w/β`.
    pub w: Vec<f64>,
    /// Mean DPO loss after each accepted solver step (first entry at `w = 0`).
    pub loss_trace: Vec<f64>,
    pub grad_norm: f64,
    pub iterations: usize,
}

impl DpoFit {
    pub fn increment(&self, beta: f64) -> Vec<f64> {
        self.w.iter().map(|v| v / beta).collect()
    }
}

struct DpoProblem<'a> {
    features: &'a [FeatureSet],
    pairs: &'a [PreferencePair],
    lambda: f64,
}

impl DpoProblem<'_> {
    /// Objective `Σ −ln σ(β·margin) + (λ/2)‖w‖²`. Under the Gibbs-linear
    /// class `β·margin = ⟨w, φ⁺ − φ⁻⟩` exactly; evaluating it in that form
    /// avoids the rounding noise of the log-ratio route near the optimum.
    fn value(&self, w: &[f64]) -> f64 {
        let mut total = 0.0;
        for p in self.pairs {
            let f = &self.features[p.context];
            let z = dot_unchecked(w, &f.rows[p.winner]) - dot_unchecked(w, &f.rows[p.loser]);
            total += neg_log_sigmoid(z);
        }
        total + 0.5 * self.lambda * dot_unchecked(w, w)
    }

    fn gradient(&self, w: &[f64]) -> Vec<f64> {
        let mut g: Vec<f64> = w.iter().map(|v| self.lambda * v).collect();
        for p in self.pairs {
            let f = &self.features[p.context];
            let (a, b) = (&f.rows[p.winner], &f.rows[p.loser]);
            let z = dot_unchecked(w, a) - dot_unchecked(w, b);
            let s = sigmoid(-z);
            for i in 0..g.len() {
                g[i] -= s * (a[i] - b[i]);
            }
        }
        g
    }
}

/// Minimizer of the regularized DPO objective over the Gibbs-linear class,
/// found by BFGS with Armijo backtracking.
pub fn fit_dpo(
    pi_ref: &CategoricalPolicy,
    features: &[FeatureSet],
    pairs: &[PreferencePair],
    beta: f64,
    opt: &SolverOptions,
) -> Result<DpoFit> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidArgument(format!("beta must be positive, got {beta}")));
    }
    if !(opt.lambda > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "lambda must be positive, got {}",
            opt.lambda
        )));
    }
    if features.len() != pi_ref.contexts() {
        return Err(Error::DimensionMismatch {
            expected: pi_ref.contexts(),
            got: features.len(),
        });
    }
    let d = features.first().map_or(0, |f| f.dim());
    if pairs.is_empty() {
        return Ok(DpoFit {
            policy: pi_ref.clone(),
            w: vec![0.0; d],
            loss_trace: Vec::new(),
            grad_norm: 0.0,
            iterations: 0,
        });
    }
    let arms = features[0].arms();
    check_pairs(pairs, features.len(), arms)?;
    let prob = DpoProblem {
        features,
        pairs,
        lambda: opt.lambda,
    };
    let n = pairs.len() as f64;
    let tol = opt.tol * (1.0 + n);

    let mut w = vec![0.0; d];
    let mut f = prob.value(&w);
    let mut g = prob.gradient(&w);
    let mut hinv = identity(d);
    let mut trace = vec![(f - 0.5 * opt.lambda * dot_unchecked(&w, &w)) / n];
    let mut iterations = 0;
    while norm(&g) > tol {
        if iterations >= opt.max_iters {
            return Err(Error::Convergence {
                iterations,
                residual: norm(&g),
                last_iterate: w,
            });
        }
        iterations += 1;
        let mut dir = mat_vec_neg(&hinv, &g);
        let mut slope = dot_unchecked(&g, &dir);
        if slope >= 0.0 {
            hinv = identity(d);
            dir = g.iter().map(|v| -v).collect();
            slope = -dot_unchecked(&g, &g);
        }
        let mut step = 1.0;
        let mut next = None;
        for _ in 0..60 {
            let cand: Vec<f64> = w.iter().zip(&dir).map(|(a, b)| a + step * b).collect();
            let fc = prob.value(&cand);
            if fc <= f + 1e-4 * step * slope {
                next = Some((cand, fc));
                break;
            }
            step *= 0.5;
        }
        let Some((wn, fnext)) = next else {
            // No representable decrease: accept a numerically stationary point.
            if norm(&g) <= tol * 1e4 {
                break;
            }
            return Err(Error::Convergence {
                iterations,
                residual: norm(&g),
                last_iterate: w,
            });
        };
        let gn = prob.gradient(&wn);
        let stalled = f - fnext <= 1e-15 * (1.0 + f.abs()) && norm(&gn) <= tol * 1e4;
        let s: Vec<f64> = wn.iter().zip(&w).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot_unchecked(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) && sy > 0.0 {
            bfgs_update(&mut hinv, &s, &y, sy);
        }
        w = wn;
        f = fnext;
        g = gn;
        trace.push((f - 0.5 * opt.lambda * dot_unchecked(&w, &w)) / n);
        if stalled {
            break;
        }
    }
    let v: Vec<f64> = w.iter().map(|x| x / beta).collect();
    let floor = pi_ref.support_floor();
    let rows = pi_ref
        .rows()
        .iter()
        .zip(features)
        .map(|(r, fs)| tilt_once(r, fs, &v, floor))
        .collect();
    Ok(DpoFit {
        policy: CategoricalPolicy::new(rows, floor)?,
        w,
        loss_trace: trace,
        grad_norm: norm(&g),
        iterations,
    })
}

fn identity(d: usize) -> Vec<Vec<f64>> {
    (0..d)
        .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn mat_vec_neg(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| -dot_unchecked(row, v)).collect()
}

fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let d = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = h.iter().map(|row| dot_unchecked(row, y)).collect();
    let yhy = dot_unchecked(y, &hy);
    for i in 0..d {
        for j in 0..d {
            h[i][j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub index: usize,
    pub objective: f64,
    pub score: f64,
    pub kl_hat: f64,
}

/// `argmax_{π ∈ C} Ŝ(π) − β_ref · KL̂(π ‖ π_ref)` on the gate subset; the
/// earliest candidate wins ties.
pub fn propose_reference(
    candidates: &[CategoricalPolicy],
    gate_subset: &GateSubset,
    beta_ref: f64,
    pi_ref: &CategoricalPolicy,
    utilities: &[Vec<f64>],
) -> Result<Proposal> {
    if candidates.is_empty() {
        return Err(Error::Empty("candidate set"));
    }
    let mut best: Option<Proposal> = None;
    for (index, c) in candidates.iter().enumerate() {
        let score = inspector_score(c, gate_subset, utilities)?;
        let kl_hat = gate_kl_estimate(c, pi_ref, gate_subset)?;
        let objective = score - beta_ref * kl_hat;
        if best.is_none_or(|b| objective > b.objective) {
            best = Some(Proposal {
                index,
                objective,
                score,
                kl_hat,
            });
        }
    }
    Ok(best.expect("nonempty candidates"))
}

/// Everything one fine-tuning phase produces.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseOutcome {
    pub report: PhaseReport,
    /// Phase-final fit, the acting policy for the next phase.
    pub fit: DpoFit,
    /// Tilt `w/β` of the phase-final fit.
    pub final_increment: Vec<f64>,
    /// Tilt taking the old reference to the new one; `None` if unchanged.
    pub reference_increment: Option<Vec<f64>>,
    pub next_reference: CategoricalPolicy,
}

pub const CANDIDATE_FINAL: usize = 0;
pub const CANDIDATE_MID: usize = 1;
pub const CANDIDATE_REFERENCE: usize = 2;

/// One phase: fit, mid-phase checkpoint, proposal over
/// `{final, mid, reference}` on a fresh gate subset, then the gate.
#[allow(clippy::too_many_arguments)]
pub fn run_phase<R: Rng + ?Sized>(
    k: usize,
    pi_ref: &CategoricalPolicy,
    features: &[FeatureSet],
    pairs: &[PreferencePair],
    cfg: &PhaseConfig,
    solver: &SolverOptions,
    mode: ReferenceMode,
    ref_version: usize,
    rng: &mut R,
) -> Result<PhaseOutcome> {
    cfg.validate()?;
    let d = features.first().map_or(0, |f| f.dim());
    if pairs.is_empty() {
        return Ok(PhaseOutcome {
            report: PhaseReport {
                k,
                n_pairs: 0,
                loss_trace: Vec::new(),
                delta_s: 0.0,
                kl_hat: 0.0,
                outcome: PhaseOutcomeKind::Skipped,
                beta: cfg.beta,
                eps_s: cfg.eps_s,
                delta_h: cfg.delta_h,
                chosen: None,
                ref_before: ref_version,
                ref_after: ref_version,
            },
            fit: fit_dpo(pi_ref, features, pairs, cfg.beta, solver)?,
            final_increment: vec![0.0; d],
            reference_increment: None,
            next_reference: pi_ref.clone(),
        });
    }
    let fit = fit_dpo(pi_ref, features, pairs, cfg.beta, solver)?;
    let mid = fit_dpo(pi_ref, features, &pairs[..pairs.len().div_ceil(2)], cfg.beta, solver)?;
    let gate_subset = GateSubset::sample(features.len(), cfg.gate_size, rng)?;
    // Live scorer: the phase-final reward estimate.
    let utilities: Vec<Vec<f64>> = features
        .iter()
        .map(|f| f.rows.iter().map(|phi| dot_unchecked(&fit.w, phi)).collect())
        .collect();
    let candidates = [fit.policy.clone(), mid.policy.clone(), pi_ref.clone()];
    let proposal = propose_reference(&candidates, &gate_subset, cfg.beta_ref, pi_ref, &utilities)?;
    let ref_score = inspector_score(pi_ref, &gate_subset, &utilities)?;
    let delta_s = proposal.score - ref_score;
    let kl_hat = proposal.kl_hat;
    let outcome = match mode {
        ReferenceMode::Fixed => PhaseOutcomeKind::Inert,
        ReferenceMode::AlwaysReject => PhaseOutcomeKind::Rejected,
        ReferenceMode::Evolving => match gate(delta_s, kl_hat, cfg) {
            GateDecision::Accept => PhaseOutcomeKind::Accepted,
            GateDecision::Reject => PhaseOutcomeKind::Rejected,
        },
    };
    let final_increment = fit.increment(cfg.beta);
    let (reference_increment, next_reference, ref_after) = if outcome == PhaseOutcomeKind::Accepted {
        let inc = match proposal.index {
            CANDIDATE_FINAL => Some(final_increment.clone()),
            CANDIDATE_MID => Some(mid.increment(cfg.beta)),
            _ => None,
        };
        (inc, candidates[proposal.index].clone(), ref_version + 1)
    } else {
        (None, pi_ref.clone(), ref_version)
    };
    Ok(PhaseOutcome {
        report: PhaseReport {
            k,
            n_pairs: pairs.len(),
            loss_trace: fit.loss_trace.clone(),
            delta_s,
            kl_hat,
            outcome,
            beta: cfg.beta,
            eps_s: cfg.eps_s,
            delta_h: cfg.delta_h,
            chosen: Some(proposal.index),
            ref_before: ref_version,
            ref_after,
        },
        fit,
        final_increment,
        reference_increment,
        next_reference,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvoDpoConfig {
    pub phase: PhaseConfig,
    pub solver: SolverOptions,
    /// Most recent pairs kept in the dataset window.
    pub window: usize,
    pub pi_min: f64,
    pub mode: ReferenceMode,
}

impl Default for EvoDpoConfig {
    fn default() -> Self {
        Self {
            phase: PhaseConfig::default(),
            solver: SolverOptions::default(),
            window: 160,
            pi_min: DEFAULT_PI_MIN,
            mode: ReferenceMode::Evolving,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvoDpoRun {
    pub phases: Vec<PhaseReport>,
    pub ledger: RegretLedger,
}

impl EvoDpoRun {
    /// Accepted over gated (accepted or rejected) phases; `None` if no phase
    /// consulted the gate.
    pub fn accept_rate(&self) -> Option<f64> {
        accept_rate(&self.phases)
    }
}

pub fn accept_rate(phases: &[PhaseReport]) -> Option<f64> {
    let acc = phases
        .iter()
        .filter(|p| p.outcome == PhaseOutcomeKind::Accepted)
        .count();
    let gated = acc
        + phases
            .iter()
            .filter(|p| p.outcome == PhaseOutcomeKind::Rejected)
            .count();
    (gated > 0).then(|| acc as f64 / gated as f64)
}

struct Record {
    features: FeatureSet,
    winner: usize,
    loser: usize,
    /// `π_ref,k` at this record's context, kept current across promotions.
    ref_probs: Vec<f64>,
}

/// Draws from `p`, optionally excluding one action (renormalizing the rest).
pub(crate) fn sample_categorical<R: Rng + ?Sized>(p: &[f64], exclude: Option<usize>, rng: &mut R) -> usize {
    let mass: f64 = p
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != exclude)
        .map(|(_, v)| v)
        .sum();
    let target = rng.random::<f64>() * mass;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, v) in p.iter().enumerate() {
        if Some(i) == exclude {
            continue;
        }
        acc += v;
        last = i;
        if target < acc {
            return i;
        }
    }
    last
}

/// The EvoDPO phase loop on a drifting preference environment.
///
/// Each step shows context `x_t`, draws two distinct actions from the acting
/// policy and records the Bradley–Terry winner. Every `phase_length` steps
/// the window of recent pairs is refit against the current reference and the
/// gate decides whether to promote. Per-step regret is measured against the
/// one-hot oracle, with `π^kl_t = gibbs(ρ_k(x_t), u_t, β_ref)` as the
/// comparator, where `ρ_k` is the reference the analysis tracks: uniform
/// until the first promotion, then tilted by `θ/β_ref` at every promotion.
pub fn run_evodpo(env: &PreferenceEnv, cfg: &EvoDpoConfig, seed: u64) -> Result<EvoDpoRun> {
    cfg.phase.validate()?;
    if cfg.window == 0 {
        return Err(Error::InvalidArgument("dataset window must be >= 1".into()));
    }
    if !(cfg.pi_min > 0.0 && cfg.pi_min * env.arms() as f64 <= 0.5) {
        return Err(Error::InvalidArgument(format!(
            "pi_min must lie in (0, 1/(2K)], got {}",
            cfg.pi_min
        )));
    }
    let mut rng: SimRng = tagged_substream(seed, streams::LEARNER, 0);
    let floor = cfg.pi_min;
    let horizon = env.horizon();
    let pl = cfg.phase.phase_length;

    // Acting policy is `base` tilted by `acting_inc`; the reference is `base`
    // tilted by `ref_inc`. Both share one chain evaluation per step.
    let mut base = GibbsChain::uniform(floor);
    let mut acting_inc: Option<Vec<f64>> = None;
    let mut ref_inc: Option<Vec<f64>> = None;
    let mut comparator = GibbsChain::uniform(floor);
    let mut ref_version = 0;

    let mut window: VecDeque<Record> = VecDeque::with_capacity(cfg.window + 1);
    let mut ledger = RegretLedger::default();
    let mut phases = Vec::new();

    for t in 0..horizon {
        let phase = t / pl;
        let x = env.context(t);
        let theta = env.theta(t);
        let u = x.utilities(theta)?;

        let base_p = base.probs(x);
        let acting = match &acting_inc {
            Some(v) => tilt_once(&base_p, x, v, floor),
            None => base_p.clone(),
        };
        let ref_p = match &ref_inc {
            Some(v) => tilt_once(&base_p, x, v, floor),
            None => base_p,
        };

        let oracle = argmax_lowest(&u);
        let mut star = vec![0.0; u.len()];
        star[oracle] = 1.0;
        let pi_kl = gibbs_with_floor(&comparator.probs(x), &u, cfg.phase.beta_ref, floor)?;
        let step = regret_decompose(&u, &star, &pi_kl, &acting)?;
        let switch = t > 0 && argmax_lowest(&x.utilities(env.theta(t - 1))?) != oracle;
        ledger.push(phase, step, oracle, switch);

        let y1 = sample_categorical(&acting, None, &mut rng);
        let y2 = sample_categorical(&acting, Some(y1), &mut rng);
        let label = sample_preference(theta, &x.rows[y1], &x.rows[y2], &mut rng)?;
        let (winner, loser) = if label.winner_is_first { (y1, y2) } else { (y2, y1) };
        window.push_back(Record {
            features: x.clone(),
            winner,
            loser,
            ref_probs: ref_p,
        });
        if window.len() > cfg.window {
            window.pop_front();
        }

        let phase_end = (t + 1) % pl == 0 || t + 1 == horizon;
        if !phase_end {
            continue;
        }
        let features: Vec<FeatureSet> = window.iter().map(|r| r.features.clone()).collect();
        let pi_ref = CategoricalPolicy::new(window.iter().map(|r| r.ref_probs.clone()).collect(), floor)?;
        let pairs: Vec<PreferencePair> = window
            .iter()
            .enumerate()
            .map(|(i, r)| PreferencePair {
                context: i,
                winner: r.winner,
                loser: r.loser,
                meta: PairMeta {
                    phase,
                    ..PairMeta::default()
                },
            })
            .collect();
        let out = run_phase(
            phase,
            &pi_ref,
            &features,
            &pairs,
            &cfg.phase,
            &cfg.solver,
            cfg.mode,
            ref_version,
            &mut rng,
        )?;
        if out.report.outcome != PhaseOutcomeKind::Skipped {
            // The reference used for this fit becomes the base of the next
            // phase's acting policy.
            if let Some(v) = ref_inc.take() {
                base = base.extended(v);
            }
            acting_inc = Some(out.final_increment.clone());
        }
        if out.report.outcome == PhaseOutcomeKind::Accepted {
            ref_inc = out.reference_increment.clone();
            for (r, row) in window.iter_mut().zip(out.next_reference.rows()) {
                r.ref_probs.clone_from(row);
            }
            let step_theta: Vec<f64> = theta.iter().map(|v| v / cfg.phase.beta_ref).collect();
            comparator = comparator.extended(step_theta);
        }
        ref_version = out.report.ref_after;
        phases.push(out.report);
    }
    Ok(EvoDpoRun { phases, ledger })
}
