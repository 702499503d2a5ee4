//! Acceptance run: one PASS/FAIL line per criterion, each with its tolerance
//! and wall-clock limit. Criteria run one after another so that the timings
//! are not shared with each other.
//!
//! `ACCEPTANCE_ONLY=2,6` restricts the run to the listed criteria.

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::Rng;

use evodpo::atlas::{
    run_atlas, run_bandit_episode, table5_bandit, AtlasConfig, RunReport, StrategyCandidate,
};
use evodpo::cli::execute;
use evodpo::config::{Mode, RunConfig};
use evodpo::env::{make_features, random_unit, sample_preference, PreferenceEnv};
use evodpo::estimator::{fit_logistic_window, WindowBuffer, DEFAULT_TOL};
use evodpo::evodpo::{fit_dpo, gate, GateDecision, PhaseConfig, PreferencePair, SolverOptions};
use evodpo::policy::{gibbs, CategoricalPolicy, DEFAULT_PI_MIN};
use evodpo::rng::tagged_substream;
use evodpo::verify::{
    binomial_allowance, check_estimation_error, check_frozen_bias, check_kl_bound,
    check_local_variation, check_regret_scaling, check_self_normalized, check_switching_budget,
    EstimationCheckConfig, PathCheckConfig, ScalingConfig, SelfNormalizedConfig,
};

type Check = Result<(bool, String), String>;

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Criterion 1: `fit_dpo` against the Gibbs policy of the logistic estimate
/// fitted on the same pairs, total variation ≤ 0.05.
fn dpo_matches_gibbs() -> Check {
    const TOL: f64 = 0.05;
    let solver = SolverOptions::default();
    let beta = PhaseConfig::default().beta;
    let mut worst: f64 = 0.0;
    for i in 0..100u64 {
        let mut rng = tagged_substream(1, 100, i);
        let k = rng.random_range(2..=6);
        let d = rng.random_range(1..=5);
        let fs = make_features(k, d, &mut rng).map_err(err)?;
        let theta = random_unit(d, &mut rng);
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let pi_ref: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let mut pairs = Vec::with_capacity(500);
        let mut buf = WindowBuffer::new(500, d).map_err(err)?;
        for _ in 0..500 {
            let a = rng.random_range(0..k);
            let b = (a + rng.random_range(1..k)) % k;
            let lab = sample_preference(&theta, &fs.rows[a], &fs.rows[b], &mut rng).map_err(err)?;
            let (w, l) = if lab.winner_is_first { (a, b) } else { (b, a) };
            pairs.push(PreferencePair::new(0, w, l, k).map_err(err)?);
            let diff: Vec<f64> = fs.rows[w].iter().zip(&fs.rows[l]).map(|(x, y)| x - y).collect();
            buf.push(diff, 1.0).map_err(err)?;
        }
        let reference = CategoricalPolicy::new(vec![pi_ref.clone()], DEFAULT_PI_MIN).map_err(err)?;
        let fit = fit_dpo(&reference, std::slice::from_ref(&fs), &pairs, beta, &solver).map_err(err)?;
        let est = fit_logistic_window(&buf, solver.lambda, DEFAULT_TOL).map_err(err)?;
        let closed = gibbs(&pi_ref, &fs.utilities(&est.theta_hat).map_err(err)?, beta).map_err(err)?;
        let tv = 0.5
            * fit
                .policy
                .row(0)
                .iter()
                .zip(&closed)
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>();
        worst = worst.max(tv);
    }
    Ok((worst <= TOL, format!("max TV {worst:.3e} over 100 instances (tol {TOL})")))
}

fn kl_lemma() -> Check {
    let r = check_kl_bound(1000, 2).map_err(err)?;
    Ok((
        r.violations == 0,
        format!(
            "{} violations in {} trials, max LHS/RHS {:.4} (tol 0 violations)",
            r.violations, r.trials, r.max_slack_ratio
        ),
    ))
}

fn switching_and_local_variation() -> Check {
    let cfg = PathCheckConfig::default();
    let a = check_switching_budget(100, &cfg, 3).map_err(err)?;
    let b = check_local_variation(100, 16, &cfg, 3).map_err(err)?;
    Ok((
        a.violations == 0 && b.violations == 0 && a.trials + a.excluded == 100,
        format!(
            "switching: {} violations in {} runs ({} excluded, γ < 1e-6), max ratio {:.3e}; \
             local variation: {} violations in {} runs, max ratio {:.6} (tol 0 violations)",
            a.violations, a.trials, a.excluded, a.max_slack_ratio, b.violations, b.trials, b.max_slack_ratio
        ),
    ))
}

fn self_normalized() -> Check {
    let cfg = SelfNormalizedConfig::default();
    let r = check_self_normalized(2000, &cfg, 4).map_err(err)?;
    let allowed = binomial_allowance(0.05, 2000);
    Ok((
        r.violation_rate <= allowed,
        format!(
            "violation rate {:.4} in {} trials (tol {:.4}), max ratio {:.4}",
            r.violation_rate, r.trials, allowed, r.max_slack_ratio
        ),
    ))
}

fn estimation_error() -> Check {
    let r = check_estimation_error(50, &EstimationCheckConfig::default(), 5).map_err(err)?;
    Ok((
        r.violation_rate <= r.allowed_rate,
        format!(
            "violation rate {:.4} over {} sampled steps in 50 runs (tol {:.4}), max ratio {:.4}, min realized c {:.4}",
            r.violation_rate, r.trials, r.allowed_rate, r.max_slack_ratio, r.constants["c_min_realized"]
        ),
    ))
}

fn gate_truth_table() -> Check {
    let cfg = PhaseConfig::default();
    let cases = [
        (0.001, 0.001, GateDecision::Accept),
        (0.0, 0.001, GateDecision::Reject),
        (0.001, 0.003, GateDecision::Reject),
        (0.0, 0.003, GateDecision::Reject),
        (0.0007, 0.002, GateDecision::Accept),
    ];
    let wrong: Vec<String> = cases
        .iter()
        .filter(|(s, k, want)| gate(*s, *k, &cfg) != *want)
        .map(|(s, k, _)| format!("({s}, {k})"))
        .collect();
    Ok((
        wrong.is_empty(),
        format!(
            "{} of {} cases match at eps_s = {}, delta_H = {} (tol exact){}",
            cases.len() - wrong.len(),
            cases.len(),
            cfg.eps_s,
            cfg.delta_h,
            if wrong.is_empty() { String::new() } else { format!("; wrong: {}", wrong.join(" ")) }
        ),
    ))
}

fn regret_scaling() -> Check {
    let r = check_regret_scaling(&ScalingConfig::default()).map_err(err)?;
    let mean_seed_slope = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok((
        r.sublinear && r.paired_win_rate >= 0.8,
        format!(
            "exponent of mean regret {:.3} (tol ≤ 0.95; fixed {:.3}), paired wins {:.0}% (tol ≥ 80%), \
             mean per-seed exponents {:.3} vs {:.3}, bias exponents {:.3} vs {:.3}",
            r.evolving.slope_of_mean,
            r.fixed.slope_of_mean,
            100.0 * r.paired_win_rate,
            mean_seed_slope(&r.evolving.slope_per_seed),
            mean_seed_slope(&r.fixed.slope_per_seed),
            r.evolving.bias_slope_of_mean,
            r.fixed.bias_slope_of_mean
        ),
    ))
}

fn frozen_bias() -> Check {
    let r = check_frozen_bias(&ScalingConfig::default(), 2000).map_err(err)?;
    Ok((
        r.passed,
        format!(
            "|bias/T| evolving {:.3e}, fixed {:.3e} over {} seeds (tol 1e-3)",
            r.evolving,
            r.fixed,
            r.seeds.len()
        ),
    ))
}

/// Every pair's winner must be a passed entry of that phase ranked within
/// the top `s` by score; the loser must rank below it or have failed.
fn top_s_violations(report: &RunReport, s: usize) -> usize {
    let mut bad = 0;
    for (k, pairs) in report.pairs.iter().enumerate() {
        let pool: Vec<_> = report.islands.iter().flat_map(|i| &i.entries).filter(|e| e.phase == k).collect();
        let mut scores: Vec<f64> = pool.iter().filter(|e| !e.failed).map(|e| e.score).collect();
        scores.sort_by(|a, b| b.total_cmp(a));
        let cutoff = scores.get(s.min(scores.len()).saturating_sub(1)).copied();
        for p in pairs {
            let (Some(ws), Some(ls), Some(island)) = (p.meta.winner_score, p.meta.loser_score, p.meta.island) else {
                bad += 1;
                continue;
            };
            let winner_ok = pool
                .iter()
                .any(|e| e.island == island && e.cluster == p.winner && !e.failed && e.score == ws)
                && cutoff.is_some_and(|c| ws >= c);
            let loser_ok = pool
                .iter()
                .any(|e| e.cluster == p.loser && e.score.to_bits() == ls.to_bits() && (e.failed || e.score <= ws));
            if !(winner_ok && loser_ok && p.winner != p.loser && p.meta.phase == k) {
                bad += 1;
            }
        }
    }
    bad
}

fn atlas_schedule() -> Check {
    let cfg = AtlasConfig::default();
    let r = run_atlas(&cfg, 9).map_err(err)?;
    let n_pairs: usize = r.pairs.iter().map(Vec::len).sum();
    let bad = top_s_violations(&r, cfg.top_s);
    let schedule_ok = r.phases.len() == 5 && r.phase_rounds == vec![20, 40, 60, 80, 100];
    Ok((
        schedule_ok && bad == 0 && n_pairs > 0,
        format!(
            "{} phases at rounds {:?} (tol exactly 5), {} of {} pairs violate top-{} (tol 0)",
            r.phases.len(),
            r.phase_rounds,
            bad,
            n_pairs,
            cfg.top_s
        ),
    ))
}

fn determinism() -> Check {
    let tmp = tempfile::tempdir().map_err(err)?;
    let mut mismatched = Vec::new();
    let mut files = 0;
    for mode in Mode::ALL {
        let mut dirs = Vec::new();
        for rep in 0..2 {
            let out = tmp.path().join(format!("{}-{rep}", mode.name()));
            let cfg = RunConfig {
                mode,
                horizon: 500,
                rounds: 40,
                episode_horizon: 200,
                eps_s: 0.0,
                delta_h: 0.05,
                seeds: vec![11, 12],
                out: out.clone(),
                ..RunConfig::default()
            };
            execute(&cfg).map_err(err)?;
            dirs.push(out);
        }
        let mut names: Vec<_> = std::fs::read_dir(&dirs[0])
            .map_err(err)?
            .map(|e| e.map(|e| e.file_name()))
            .collect::<Result<_, _>>()
            .map_err(err)?;
        names.sort();
        for n in names {
            files += 1;
            let a = std::fs::read(dirs[0].join(&n)).map_err(err)?;
            let b = std::fs::read(dirs[1].join(&n)).map_err(err)?;
            if a != b {
                mismatched.push(n.to_string_lossy().into_owned());
            }
        }
    }
    Ok((
        mismatched.is_empty() && files > 0,
        format!(
            "{} of {files} files byte-identical across reruns of all five modes (tol exact){}",
            files - mismatched.len(),
            if mismatched.is_empty() { String::new() } else { format!("; differ: {}", mismatched.join(" ")) }
        ),
    ))
}

fn window_effect() -> Check {
    let (lambda, alpha) = (0.1, 0.1);
    let mut small = Vec::new();
    let mut large = Vec::new();
    for seed in 0..20u64 {
        let env = PreferenceEnv::generate(&table5_bandit(2000), seed).map_err(err)?;
        for (w, acc) in [(20, &mut small), (200, &mut large)] {
            let hyper = StrategyCandidate::new(w, lambda, alpha).map_err(err)?;
            let ep = run_bandit_episode(&env, hyper, 1.0, seed).map_err(err)?;
            acc.push(ep.ledger.cumulative_regret() / 2000.0);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let wins = small.iter().zip(&large).filter(|(a, b)| a < b).count();
    let (ms, ml) = (mean(&small), mean(&large));
    Ok((
        ms < ml,
        format!(
            "mean per-step regret W=20 {ms:.4} vs W=200 {ml:.4} (tol strict <), W=20 lower on {wins}/20 seeds"
        ),
    ))
}

fn main() -> ExitCode {
    let only: Option<BTreeSet<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let criteria: [(usize, &str, u64, fn() -> Check); 11] = [
        (1, "Gibbs/DPO consistency", 30, dpo_matches_gibbs),
        (2, "KL bound between Gibbs policies", 5, kl_lemma),
        (3, "switching budget and local variation", 60, switching_and_local_variation),
        (4, "self-normalized radius", 60, self_normalized),
        (5, "windowed estimation error", 300, estimation_error),
        (6, "gate truth table", 1, gate_truth_table),
        (7, "reference-progression advantage", 1200, regret_scaling),
        (8, "frozen-drift bias", 120, frozen_bias),
        (9, "ATLAS schedule and top-s soundness", 120, atlas_schedule),
        (10, "byte-identical reruns", 60, determinism),
        (11, "SW-LinUCB window effect", 300, window_effect),
    ];
    let mut failed = 0;
    for (n, name, limit, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let start = Instant::now();
        let result = f();
        let elapsed = start.elapsed();
        let in_time = elapsed <= Duration::from_secs(limit);
        let (pass, detail) = match result {
            Ok((p, d)) => (p && in_time, d),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {n:>2} {} {name}: {detail} [{:.2}s, limit {limit}s{}]",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            if in_time { "" } else { ", over time" }
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion/criteria failed");
        ExitCode::FAILURE
    }
}
