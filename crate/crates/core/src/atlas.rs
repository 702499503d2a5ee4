//! The ATLAS loop without language models: six island buffers of scored
//! SW-LinUCB hyperparameter candidates, top-s preference pairs over a grid of
//! candidate clusters, EvoDPO phases on the cluster policy, and rule-based
//! stand-ins for the strategist and exploration supporter.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{sample_reward, streams, EnvConfig, FeatureSet, PreferenceEnv};
use crate::error::{Error, Result};
use crate::evodpo::{
    run_phase, sample_categorical, PairMeta, PhaseConfig, PhaseOutcomeKind, PhaseReport,
    PreferencePair, ReferenceMode, SolverOptions,
};
use crate::policy::{CategoricalPolicy, DEFAULT_PI_MIN};
use crate::regret::{argmax_lowest, nmr, RegretLedger, StepRegret};
use crate::rng::{derive_seed, tagged_substream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyCandidate {
    pub window_size: usize,
    pub lambda_reg: f64,
    pub ucb_alpha: f64,
}

impl StrategyCandidate {
    pub fn new(window_size: usize, lambda_reg: f64, ucb_alpha: f64) -> Result<Self> {
        let c = Self {
            window_size,
            lambda_reg,
            ucb_alpha,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_size < 1 {
            return Err(Error::InvalidArgument("window_size must be >= 1".into()));
        }
        if !(self.lambda_reg > 0.0 && self.lambda_reg.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lambda_reg must be positive, got {}",
                self.lambda_reg
            )));
        }
        if !(self.ucb_alpha >= 0.0 && self.ucb_alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "ucb_alpha must be nonnegative, got {}",
                self.ucb_alpha
            )));
        }
        Ok(())
    }
}

/// Sliding-window ridge state: `A = Σ φφᵀ + λI`, `b = Σ r φ` over the last
/// `W` observations, maintained incrementally.
#[derive(Debug, Clone)]
pub struct SwLinUcb {
    hyper: StrategyCandidate,
    a: DMatrix<f64>,
    b: DVector<f64>,
    history: VecDeque<(DVector<f64>, f64)>,
}

impl SwLinUcb {
    pub fn new(dim: usize, hyper: StrategyCandidate) -> Result<Self> {
        hyper.validate()?;
        Ok(Self {
            hyper,
            a: DMatrix::identity(dim, dim) * hyper.lambda_reg,
            b: DVector::zeros(dim),
            history: VecDeque::with_capacity(hyper.window_size + 1),
        })
    }

    pub fn hyper(&self) -> &StrategyCandidate {
        &self.hyper
    }

    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }

    pub fn update(&mut self, phi: &[f64], reward: f64) {
        let v = DVector::from_column_slice(phi);
        self.a += &v * v.transpose();
        self.b += &v * reward;
        self.history.push_back((v, reward));
        if self.history.len() > self.hyper.window_size {
            let (old, r) = self.history.pop_front().expect("nonempty window");
            self.a -= &old * old.transpose();
            self.b -= &old * r;
        }
    }

    pub fn theta_hat(&self) -> Result<Vec<f64>> {
        let chol = self.cholesky()?;
        Ok(chol.solve(&self.b).iter().copied().collect())
    }

    fn cholesky(&self) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
        self.a
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Contract("windowed design matrix lost positive definiteness".into()))
    }
}

/// `argmax_a ⟨θ̂, x_a⟩ + α √(x_aᵀ A⁻¹ x_a)`, ties to the lowest index.
pub fn sw_linucb_select(context: &FeatureSet, state: &SwLinUcb) -> Result<usize> {
    if state.history.len() > state.hyper.window_size {
        return Err(Error::Contract("window holds more than window_size entries".into()));
    }
    if context.dim() != state.b.len() {
        return Err(Error::DimensionMismatch {
            expected: state.b.len(),
            got: context.dim(),
        });
    }
    let chol = state.cholesky()?;
    let theta = chol.solve(&state.b);
    let scores: Vec<f64> = context
        .rows
        .iter()
        .map(|row| {
            let x = DVector::from_column_slice(row);
            let width = x.dot(&chol.solve(&x)).max(0.0).sqrt();
            theta.dot(&x) + state.hyper.ucb_alpha * width
        })
        .collect();
    Ok(argmax_lowest(&scores))
}

/// Default bandit task: `K = 5`, `d = 5`, drift in `[1, 5]` every step,
/// `V_T = 8000`, fresh unit contexts.
pub fn table5_bandit(horizon: usize) -> EnvConfig {
    EnvConfig {
        arms: 5,
        dim: 5,
        horizon,
        drift: crate::env::DriftConfig {
            delta_min: 1.0,
            delta_max: 5.0,
            mode: crate::env::DriftMode::SphereWalk,
            interval: 1,
        },
        tv_budget: 8000.0,
        fixed_context: false,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BanditEpisode {
    pub ledger: RegretLedger,
    pub chosen: Vec<f64>,
    pub optimal: Vec<f64>,
    pub nmr: f64,
}

/// One SW-LinUCB episode with 1-sub-Gaussian reward noise drawn from
/// `noise_seed`. Regret is measured on expected rewards; the ledger carries
/// it entirely in the error column.
pub fn run_bandit_episode(
    env: &PreferenceEnv,
    hyper: StrategyCandidate,
    noise_scale: f64,
    noise_seed: u64,
) -> Result<BanditEpisode> {
    let mut state = SwLinUcb::new(env.dim(), hyper)?;
    let mut rng = tagged_substream(noise_seed, streams::NOISE, 0);
    let h = env.horizon();
    let mut ledger = RegretLedger::default();
    let mut chosen = Vec::with_capacity(h);
    let mut optimal = Vec::with_capacity(h);
    for t in 0..h {
        let x = env.context(t);
        let theta = env.theta(t);
        let u = x.utilities(theta)?;
        let best = argmax_lowest(&u);
        let a = sw_linucb_select(x, &state)?;
        let r = sample_reward(theta, &x.rows[a], noise_scale, &mut rng)?;
        state.update(&x.rows[a], r);
        let gap = u[best] - u[a];
        let switch = t > 0 && argmax_lowest(&x.utilities(env.theta(t - 1))?) != best;
        ledger.push(
            0,
            StepRegret {
                bias: 0.0,
                error: gap,
                regret: gap,
            },
            best,
            switch,
        );
        chosen.push(u[a]);
        optimal.push(u[best]);
    }
    let score = nmr(&chosen, &optimal)?;
    Ok(BanditEpisode {
        ledger,
        chosen,
        optimal,
        nmr: score,
    })
}

/// Candidate clustering grid: `log₂ W ∈ {0..10}`, `log₁₀ λ ∈ {−3..1}`,
/// `α ∈ {0, .5, 1, 2}`.
pub mod grid {
    use super::StrategyCandidate;

    pub const LOG2_W: usize = 11;
    pub const LOG10_LAMBDA: usize = 5;
    pub const ALPHAS: [f64; 4] = [0.0, 0.5, 1.0, 2.0];
    pub const CELLS: usize = LOG2_W * LOG10_LAMBDA * ALPHAS.len();
    pub const FEATURE_DIM: usize = 9;
    /// Largest feature-row norm (all three coordinates at 1).
    pub const PHI_MAX: f64 = 3.0;

    pub fn cell(iw: usize, il: usize, ia: usize) -> usize {
        (iw * LOG10_LAMBDA + il) * ALPHAS.len() + ia
    }

    pub fn decode(cell: usize) -> (usize, usize, usize) {
        let ia = cell % ALPHAS.len();
        let rest = cell / ALPHAS.len();
        (rest / LOG10_LAMBDA, rest % LOG10_LAMBDA, ia)
    }

    pub fn center(cell: usize) -> StrategyCandidate {
        let (iw, il, ia) = decode(cell);
        StrategyCandidate {
            window_size: 1usize << iw,
            lambda_reg: 10f64.powi(il as i32 - 3),
            ucb_alpha: ALPHAS[ia],
        }
    }

    pub fn label(c: &StrategyCandidate) -> usize {
        let iw = (c.window_size as f64).log2().round().clamp(0.0, (LOG2_W - 1) as f64) as usize;
        let il = (c.lambda_reg.log10().round() + 3.0).clamp(0.0, (LOG10_LAMBDA - 1) as f64) as usize;
        let mut ia = 0;
        for (i, a) in ALPHAS.iter().enumerate() {
            if (c.ucb_alpha - a).abs() < (c.ucb_alpha - ALPHAS[ia]).abs() {
                ia = i;
            }
        }
        cell(iw, il, ia)
    }

    /// Quadratic features of the scaled cell coordinates.
    pub fn features(cell: usize) -> Vec<f64> {
        let (iw, il, ia) = decode(cell);
        let x1 = iw as f64 / 10.0;
        let x2 = il as f64 / 4.0;
        let x3 = ALPHAS[ia] / 2.0;
        vec![x1, x2, x3, x1 * x1, x2 * x2, x3 * x3, x1 * x2, x1 * x3, x2 * x3]
    }
}

fn cell_features() -> FeatureSet {
    FeatureSet {
        rows: (0..grid::CELLS).map(grid::features).collect(),
        phi_max: grid::PHI_MAX,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IslandEntry {
    pub context: usize,
    pub candidate: StrategyCandidate,
    pub score: f64,
    pub cluster: usize,
    pub round: usize,
    pub phase: usize,
    pub island: usize,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IslandBuffer {
    pub id: usize,
    pub entries: Vec<IslandEntry>,
    pub proposal_scale: f64,
    pub best_score: f64,
    pub stale_steps: usize,
}

impl IslandBuffer {
    pub fn new(id: usize, proposal_scale: f64) -> Self {
        Self {
            id,
            entries: Vec::new(),
            proposal_scale,
            best_score: f64::NEG_INFINITY,
            stale_steps: 0,
        }
    }

    /// Distinct cluster labels seen so far.
    pub fn coverage(&self) -> usize {
        let mut seen = vec![false; grid::CELLS];
        for e in &self.entries {
            seen[e.cluster] = true;
        }
        seen.iter().filter(|s| **s).count()
    }
}

pub const ISLANDS: usize = 6;
/// Non-improving steps before an island's proposal scale doubles.
pub const STALE_LIMIT: usize = 10;
const MAX_SCALE: f64 = 8.0;

/// Scores candidates by mean NMR over a fixed set of episodes; the same
/// candidate always gets the same score.
pub trait Scorer: Sync {
    fn score(&self, c: &StrategyCandidate) -> Result<f64>;
}

pub struct EpisodeScorer {
    envs: Vec<PreferenceEnv>,
    noise_seeds: Vec<u64>,
}

impl EpisodeScorer {
    pub fn new(task: &EnvConfig, episodes: usize, seed: u64) -> Result<Self> {
        if episodes == 0 {
            return Err(Error::InvalidArgument("need at least one scoring episode".into()));
        }
        let envs = (0..episodes as u64)
            .map(|e| PreferenceEnv::generate(task, derive_seed(seed, streams::EPISODES, e)))
            .collect::<Result<_>>()?;
        let noise_seeds = (0..episodes as u64)
            .map(|e| derive_seed(seed, streams::NOISE, e))
            .collect();
        Ok(Self { envs, noise_seeds })
    }
}

impl Scorer for EpisodeScorer {
    fn score(&self, c: &StrategyCandidate) -> Result<f64> {
        let mut total = 0.0;
        for (env, s) in self.envs.iter().zip(&self.noise_seeds) {
            total += run_bandit_episode(env, *c, 1.0, *s)?.nmr;
        }
        Ok(total / self.envs.len() as f64)
    }
}

/// Draws a cell from the policy and jitters its center in log space with the
/// island's proposal scale.
pub fn propose_candidate<R: Rng + ?Sized>(policy: &[f64], scale: f64, rng: &mut R) -> StrategyCandidate {
    let cell = sample_categorical(policy, None, rng);
    let c = grid::center(cell);
    let z: [f64; 3] = [
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
    ];
    let log2w = ((c.window_size as f64).log2() + 2.0 * scale * z[0]).clamp(0.0, 10.0);
    let log10l = (c.lambda_reg.log10() + scale * z[1]).clamp(-3.0, 1.0);
    let alpha = (c.ucb_alpha + scale * z[2]).clamp(0.0, 2.0);
    StrategyCandidate {
        window_size: (2f64.powf(log2w).round() as usize).max(1),
        lambda_reg: 10f64.powf(log10l),
        ucb_alpha: alpha,
    }
}

/// One island's round: `j` candidates from the shared policy snapshot,
/// scored and appended. Depends only on the island's own stream.
#[allow(clippy::too_many_arguments)]
pub fn island_step<R: Rng + ?Sized, S: Scorer + ?Sized>(
    island: &mut IslandBuffer,
    policy: &[f64],
    j: usize,
    round: usize,
    phase: usize,
    scorer: &S,
    rng: &mut R,
) {
    let mut improved = false;
    for _ in 0..j {
        let candidate = propose_candidate(policy, island.proposal_scale, rng);
        let (score, failed) = match scorer.score(&candidate) {
            Ok(s) if s.is_finite() => (s, false),
            _ => (f64::MIN, true),
        };
        if !failed && score > island.best_score {
            island.best_score = score;
            improved = true;
        }
        island.entries.push(IslandEntry {
            context: 0,
            candidate,
            score,
            cluster: grid::label(&candidate),
            round,
            phase,
            island: island.id,
            failed,
        });
    }
    if improved {
        island.stale_steps = 0;
    } else {
        island.stale_steps += 1;
        if island.stale_steps >= STALE_LIMIT {
            island.proposal_scale = (island.proposal_scale * 2.0).min(MAX_SCALE);
            island.stale_steps = 0;
        }
    }
}

/// Top-s pairing. Entries at or above `threshold` pass; winners are the `s`
/// best passed entries (earlier entry first on equal scores); each winner
/// gets one loser drawn from the failed entries, or from the lower passed
/// entries if none failed. Pairs whose two entries share a cluster carry no
/// preference between actions and are dropped.
pub fn build_pairs_top_s<R: Rng + ?Sized>(
    entries: &[IslandEntry],
    s: usize,
    threshold: f64,
    rng: &mut R,
) -> Result<Vec<PreferencePair>> {
    if s == 0 {
        return Err(Error::InvalidArgument("top-s needs s >= 1".into()));
    }
    let mut passed: Vec<usize> = (0..entries.len())
        .filter(|&i| !entries[i].failed && entries[i].score >= threshold)
        .collect();
    let failed: Vec<usize> = (0..entries.len())
        .filter(|&i| entries[i].failed || entries[i].score < threshold)
        .collect();
    // Stable sort keeps insertion order among equal scores.
    passed.sort_by(|&a, &b| entries[b].score.total_cmp(&entries[a].score));
    let top = s.min(passed.len());
    let lower = &passed[top..];
    let mut pairs = Vec::new();
    for &w in &passed[..top] {
        let pool = if !failed.is_empty() { &failed[..] } else { lower };
        if pool.is_empty() {
            continue;
        }
        let l = pool[rng.random_range(0..pool.len())];
        let (ew, el) = (&entries[w], &entries[l]);
        if ew.cluster == el.cluster {
            continue;
        }
        pairs.push(PreferencePair {
            context: ew.context,
            winner: ew.cluster,
            loser: el.cluster,
            meta: PairMeta {
                phase: ew.phase,
                island: Some(ew.island),
                winner_score: Some(ew.score),
                loser_score: Some(el.score),
            },
        });
    }
    Ok(pairs)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub max: f64,
}

impl ScoreSummary {
    pub fn of(scores: &[f64]) -> Self {
        if scores.is_empty() {
            return Self::default();
        }
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        Self {
            count: scores.len(),
            mean,
            median: quantile(scores, 0.5),
            max: scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Lower empirical quantile (`q = 0.5` on an even count averages the two
/// middle values).
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Telemetry {
    pub phase_scores: Vec<ScoreSummary>,
    pub outcomes: Vec<PhaseOutcomeKind>,
    pub delta_s: Vec<f64>,
    pub dataset_sizes: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategistState {
    pub phase: PhaseConfig,
    /// Quantile of the recent scores used as the pass threshold.
    pub threshold_quantile: f64,
}

pub const BETA_MIN: f64 = 0.1;
pub const BETA_MAX: f64 = 5.0;

/// Rule-based stand-in for the fine-tuning strategist (not a rule from the
/// method itself): after two consecutive rejects, cool β by ×0.8 and raise
/// the pass quantile by 0.1 (to at most 0.9); otherwise leave settings alone.
/// β always ends in `[0.1, 5]`.
pub fn strategist_rules(telemetry: &Telemetry, current: &StrategistState) -> StrategistState {
    let mut next = *current;
    let n = telemetry.outcomes.len();
    if n >= 2
        && telemetry.outcomes[n - 2..]
            .iter()
            .all(|o| *o == PhaseOutcomeKind::Rejected)
    {
        next.phase.beta *= 0.8;
        next.threshold_quantile = (next.threshold_quantile + 0.1).min(0.9);
    }
    next.phase.beta = next.phase.beta.clamp(BETA_MIN, BETA_MAX);
    next
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtlasConfig {
    pub rounds: usize,
    pub max_phases: usize,
    pub candidates_per_island: usize,
    pub top_s: usize,
    pub episodes: usize,
    pub episode_horizon: usize,
    /// Horizon of the final replay of the best candidate.
    pub replay_horizon: usize,
    pub threshold_window: usize,
    pub dataset_phases: usize,
    pub finetune: bool,
    pub phase: PhaseConfig,
    pub solver: SolverOptions,
    pub pi_min: f64,
}

impl Default for AtlasConfig {
    fn default() -> Self {
        Self {
            rounds: 100,
            max_phases: 20,
            candidates_per_island: 1,
            top_s: 8,
            episodes: 3,
            episode_horizon: 500,
            replay_horizon: 2000,
            threshold_window: 50,
            dataset_phases: 4,
            finetune: true,
            phase: PhaseConfig::default(),
            solver: SolverOptions::default(),
            pi_min: DEFAULT_PI_MIN,
        }
    }
}

/// Per-island base proposal scales (log units).
pub const BASE_SCALES: [f64; ISLANDS] = [0.1, 0.2, 0.3, 0.5, 0.75, 1.0];

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub rounds: usize,
    pub phases: Vec<PhaseReport>,
    /// 1-based round index at which each phase ran.
    pub phase_rounds: Vec<usize>,
    pub pairs: Vec<Vec<PreferencePair>>,
    pub islands: Vec<IslandBuffer>,
    pub telemetry: Telemetry,
    pub policy: Vec<f64>,
    pub reference: Vec<f64>,
    pub best: Option<(StrategyCandidate, f64)>,
    /// Replay of the best candidate on a fresh default episode.
    pub replay: Option<BanditEpisode>,
    pub final_beta: f64,
}

pub fn run_atlas(cfg: &AtlasConfig, seed: u64) -> Result<RunReport> {
    cfg.phase.validate()?;
    if cfg.candidates_per_island == 0 || cfg.top_s == 0 || cfg.threshold_window == 0 {
        return Err(Error::InvalidArgument(
            "candidates_per_island, top_s and threshold_window must be >= 1".into(),
        ));
    }
    let scorer = EpisodeScorer::new(&table5_bandit(cfg.episode_horizon), cfg.episodes, seed)?;
    run_atlas_with(cfg, seed, &scorer)
}

/// `run_atlas` with a caller-supplied scorer.
pub fn run_atlas_with<S: Scorer>(cfg: &AtlasConfig, seed: u64, scorer: &S) -> Result<RunReport> {
    let features = vec![cell_features()];
    let mut policy = CategoricalPolicy::new(vec![vec![1.0 / grid::CELLS as f64; grid::CELLS]], cfg.pi_min)?;
    let mut reference = policy.clone();
    let mut ref_version = 0;
    let mut islands: Vec<IslandBuffer> = (0..ISLANDS).map(|i| IslandBuffer::new(i, BASE_SCALES[i])).collect();
    let mut state = StrategistState {
        phase: cfg.phase,
        threshold_quantile: 0.5,
    };
    let mut telemetry = Telemetry::default();
    let mut phases = Vec::new();
    let mut phase_rounds = Vec::new();
    let mut all_pairs: Vec<Vec<PreferencePair>> = Vec::new();
    let mut recent_scores: VecDeque<f64> = VecDeque::new();
    let mut phase_start = vec![0usize; ISLANDS];
    let mut pair_rng = tagged_substream(seed, streams::PAIRS, 0);

    for round in 0..cfg.rounds {
        let k = phases.len();
        let snapshot = policy.row(0).to_vec();
        islands.par_iter_mut().for_each(|isl| {
            let mut rng = tagged_substream(seed, streams::ISLANDS, (round * ISLANDS + isl.id) as u64);
            island_step(isl, &snapshot, cfg.candidates_per_island, round, k, scorer, &mut rng);
        });
        // Merge point: the threshold window sees entries in island order.
        for isl in &islands {
            let new = &isl.entries[isl.entries.len() - cfg.candidates_per_island..];
            for e in new.iter().filter(|e| !e.failed) {
                recent_scores.push_back(e.score);
                if recent_scores.len() > cfg.threshold_window {
                    recent_scores.pop_front();
                }
            }
        }

        let r1 = round + 1;
        if !(cfg.finetune && r1 % cfg.phase.phase_length == 0 && phases.len() < cfg.max_phases) {
            continue;
        }
        let current: Vec<IslandEntry> = islands
            .iter()
            .zip(&phase_start)
            .flat_map(|(isl, &s)| isl.entries[s..].iter().cloned())
            .collect();
        for (s, isl) in phase_start.iter_mut().zip(&islands) {
            *s = isl.entries.len();
        }
        let scores: Vec<f64> = recent_scores.iter().copied().collect();
        let threshold = if scores.is_empty() {
            f64::INFINITY
        } else {
            quantile(&scores, state.threshold_quantile)
        };
        let new_pairs = build_pairs_top_s(&current, cfg.top_s, threshold, &mut pair_rng)?;
        all_pairs.push(new_pairs);
        let lo = all_pairs.len().saturating_sub(cfg.dataset_phases);
        let dataset: Vec<PreferencePair> = all_pairs[lo..].iter().flatten().cloned().collect();

        let out = run_phase(
            k,
            &reference,
            &features,
            &dataset,
            &state.phase,
            &cfg.solver,
            ReferenceMode::Evolving,
            ref_version,
            &mut pair_rng,
        )?;
        if out.report.outcome != PhaseOutcomeKind::Skipped {
            policy = out.fit.policy.clone();
        }
        reference = out.next_reference.clone();
        ref_version = out.report.ref_after;

        let phase_scores: Vec<f64> = current.iter().filter(|e| !e.failed).map(|e| e.score).collect();
        telemetry.phase_scores.push(ScoreSummary::of(&phase_scores));
        telemetry.outcomes.push(out.report.outcome);
        telemetry.delta_s.push(out.report.delta_s);
        telemetry.dataset_sizes.push(dataset.len());
        phases.push(out.report);
        phase_rounds.push(r1);
        state = strategist_rules(&telemetry, &state);
    }

    let best = islands
        .iter()
        .flat_map(|i| i.entries.iter())
        .filter(|e| !e.failed)
        .fold(None::<&IslandEntry>, |b, e| match b {
            Some(x) if x.score >= e.score => Some(x),
            _ => Some(e),
        })
        .map(|e| (e.candidate, e.score));
    let replay = match best {
        Some((c, _)) if cfg.replay_horizon > 0 => {
            let env = PreferenceEnv::generate(
                &table5_bandit(cfg.replay_horizon),
                derive_seed(seed, streams::EPISODES, u64::MAX),
            )?;
            Some(run_bandit_episode(&env, c, 1.0, derive_seed(seed, streams::NOISE, u64::MAX))?)
        }
        _ => None,
    };
    Ok(RunReport {
        rounds: cfg.rounds,
        phases,
        phase_rounds,
        pairs: all_pairs,
        islands,
        telemetry,
        policy: policy.row(0).to_vec(),
        reference: reference.row(0).to_vec(),
        best,
        replay,
        final_beta: state.phase.beta,
    })
}
