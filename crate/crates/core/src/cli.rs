//! Run orchestration and report emission behind the `evodpo` binary.
//!
//! Every float is written with 17 significant digits so that a rerun of the
//! same `(config, seed)` reproduces each output byte.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::atlas::{run_atlas, run_bandit_episode, AtlasConfig, StrategyCandidate};
use crate::config::{Mode, RunConfig};
use crate::env::PreferenceEnv;
use crate::error::{Error, Result};
use crate::evodpo::{accept_rate, run_evodpo, PhaseOutcomeKind, PhaseReport, ReferenceMode, SolverOptions};
use crate::fmt::g17;
use crate::numerics::mean_sem;
use crate::regret::{slope_fit, RegretLedger};
use crate::verify::{check_regret_scaling, verify_lemmas, LemmaReport, ScalingConfig, ScalingReport, VerifyPlan};

pub const LEDGER_HEADER: &str = "t,phase,bias,error,regret_step,regret_cum,oracle_arm,switch";
pub const PHASE_HEADER: &str = "k,n_pairs,delta_S,kl_hat,accepted,beta,eps_s,delta_H";
pub const LEMMA_HEADER: &str = "lemma,trials,violations,excluded,max_slack_ratio,violation_rate,allowed_rate,passed";
pub const REPORT_HEADER: &str = "mode,metric,n_seeds,mean,sem,slope_exponent,accept_rate";
pub const SUMMARY_FILE: &str = "summary.json";

pub fn ledger_csv(ledger: &RegretLedger) -> String {
    let mut s = String::with_capacity(64 * (ledger.len() + 1));
    s.push_str(LEDGER_HEADER);
    s.push('\n');
    for r in &ledger.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.t,
            r.phase,
            g17(r.bias),
            g17(r.error),
            g17(r.regret_step),
            g17(r.regret_cum),
            r.oracle_arm,
            u8::from(r.switch)
        );
    }
    s
}

pub fn phases_csv(phases: &[PhaseReport]) -> String {
    let mut s = String::from(PHASE_HEADER);
    s.push('\n');
    for p in phases {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            p.k,
            p.n_pairs,
            g17(p.delta_s),
            g17(p.kl_hat),
            p.outcome.csv_label(),
            g17(p.beta),
            g17(p.eps_s),
            g17(p.delta_h)
        );
    }
    s
}

pub fn lemmas_csv(reports: &[LemmaReport]) -> String {
    let mut s = String::from(LEMMA_HEADER);
    s.push('\n');
    for r in reports {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.lemma,
            r.trials,
            r.violations,
            r.excluded,
            g17(r.max_slack_ratio),
            g17(r.violation_rate),
            g17(r.allowed_rate),
            u8::from(r.passed)
        );
    }
    s
}

/// Pretty JSON with floats in 17-significant-digit form. Non-finite floats
/// are already `null` in a `Value`.
pub fn to_json(value: &Value) -> String {
    let mut s = String::new();
    write_json(value, 0, &mut s);
    s.push('\n');
    s
}

fn write_json(v: &Value, indent: usize, s: &mut String) {
    let pad = |n: usize, s: &mut String| s.extend(std::iter::repeat_n(' ', 2 * n));
    match v {
        Value::Null | Value::Bool(_) | Value::String(_) => s.push_str(&v.to_string()),
        Value::Number(n) => match (n.as_u64(), n.as_i64()) {
            (Some(u), _) if !n.is_f64() => {
                let _ = write!(s, "{u}");
            }
            (_, Some(i)) if !n.is_f64() => {
                let _ = write!(s, "{i}");
            }
            _ => s.push_str(&g17(n.as_f64().unwrap_or(f64::NAN))),
        },
        Value::Array(a) if a.is_empty() => s.push_str("[]"),
        Value::Array(a) => {
            s.push_str("[\n");
            for (i, x) in a.iter().enumerate() {
                pad(indent + 1, s);
                write_json(x, indent + 1, s);
                s.push_str(if i + 1 < a.len() { ",\n" } else { "\n" });
            }
            pad(indent, s);
            s.push(']');
        }
        Value::Object(o) if o.is_empty() => s.push_str("{}"),
        Value::Object(o) => {
            s.push_str("{\n");
            for (i, (k, x)) in o.iter().enumerate() {
                pad(indent + 1, s);
                s.push_str(&Value::String(k.clone()).to_string());
                s.push_str(": ");
                write_json(x, indent + 1, s);
                s.push_str(if i + 1 < o.len() { ",\n" } else { "\n" });
            }
            pad(indent, s);
            s.push('}');
        }
    }
}

pub fn lemmas_json(reports: &[LemmaReport]) -> Result<String> {
    Ok(to_json(&serde_json::to_value(reports)?))
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Summary {
    pub mode: String,
    pub seeds: Vec<u64>,
    pub final_metric_per_seed: Vec<f64>,
    pub mean: f64,
    pub sem: f64,
    pub slope_exponent: Option<f64>,
    pub accept_rate: Option<f64>,
}

/// What one seed produced.
#[derive(Debug, Clone)]
pub struct SeedOutput {
    pub seed: u64,
    pub ledger: Option<RegretLedger>,
    pub phases: Vec<PhaseReport>,
    pub lemmas: Vec<LemmaReport>,
    /// Cumulative regret for the preference modes, NMR for the bandit modes,
    /// share of passed lemma checks for verify.
    pub final_metric: f64,
}

pub fn metric_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Evodpo | Mode::FixedRef => "regret_T",
        Mode::Atlas | Mode::RewardBandit => "nmr",
        Mode::Verify => "lemmas_passed",
    }
}

pub fn run_seed(cfg: &RunConfig, seed: u64) -> Result<SeedOutput> {
    let mut out = SeedOutput {
        seed,
        ledger: None,
        phases: Vec::new(),
        lemmas: Vec::new(),
        final_metric: f64::NAN,
    };
    match cfg.mode {
        Mode::Evodpo | Mode::FixedRef => {
            let mode = if cfg.mode == Mode::Evodpo {
                ReferenceMode::Evolving
            } else {
                ReferenceMode::Fixed
            };
            let env = PreferenceEnv::generate(&cfg.env()?, seed)?;
            let run = run_evodpo(&env, &cfg.learner(mode), seed)?;
            out.final_metric = run.ledger.cumulative_regret();
            out.ledger = Some(run.ledger);
            out.phases = run.phases;
        }
        Mode::RewardBandit => {
            let env = PreferenceEnv::generate(&cfg.env()?, seed)?;
            let hyper = StrategyCandidate::new(cfg.window(), cfg.lambda, cfg.ucb_alpha)?;
            let ep = run_bandit_episode(&env, hyper, 1.0, seed)?;
            out.final_metric = ep.nmr;
            out.ledger = Some(ep.ledger);
        }
        Mode::Atlas => {
            let acfg = AtlasConfig {
                rounds: cfg.rounds,
                episode_horizon: cfg.episode_horizon,
                replay_horizon: cfg.horizon,
                phase: cfg.phase(),
                solver: SolverOptions {
                    lambda: cfg.lambda,
                    ..SolverOptions::default()
                },
                pi_min: cfg.pi_min,
                ..AtlasConfig::default()
            };
            let report = run_atlas(&acfg, seed)?;
            if let Some(replay) = report.replay {
                out.final_metric = replay.nmr;
                out.ledger = Some(replay.ledger);
            }
            out.phases = report.phases;
        }
        Mode::Verify => {
            out.lemmas = verify_lemmas(&VerifyPlan::default(), seed)?;
            let passed = out.lemmas.iter().filter(|r| r.passed).count();
            out.final_metric = passed as f64 / out.lemmas.len() as f64;
        }
    }
    Ok(out)
}

/// Exponent of the seed-mean cumulative regret at `t ∈ {H/4, H/2, H}`
/// within each run; `None` when undefined.
fn within_run_slope(outputs: &[SeedOutput]) -> Option<f64> {
    let ledgers: Vec<&RegretLedger> = outputs.iter().filter_map(|o| o.ledger.as_ref()).collect();
    if ledgers.is_empty() || ledgers.len() != outputs.len() {
        return None;
    }
    let h = ledgers[0].len();
    if h < 4 || ledgers.iter().any(|l| l.len() != h) {
        return None;
    }
    let ts = [h / 4, h / 2, h];
    let mean: Vec<f64> = ts
        .iter()
        .map(|&t| ledgers.iter().map(|l| l.regret_at(t)).sum::<f64>() / ledgers.len() as f64)
        .collect();
    let xs: Vec<f64> = ts.iter().map(|t| *t as f64).collect();
    slope_fit(&xs, &mean).ok()
}

pub fn summarize(mode: Mode, outputs: &[SeedOutput]) -> Summary {
    let finals: Vec<f64> = outputs.iter().map(|o| o.final_metric).collect();
    let (mean, sem) = mean_sem(&finals);
    let phases: Vec<PhaseReport> = outputs.iter().flat_map(|o| o.phases.iter().cloned()).collect();
    Summary {
        mode: mode.name().to_string(),
        seeds: outputs.iter().map(|o| o.seed).collect(),
        final_metric_per_seed: finals,
        mean,
        sem,
        slope_exponent: if mode == Mode::Verify { None } else { within_run_slope(outputs) },
        accept_rate: accept_rate(&phases),
    }
}

pub fn seed_file(dir: &Path, mode: Mode, seed: u64, suffix: &str) -> PathBuf {
    dir.join(format!("{}_seed{}_{}", mode.name(), seed, suffix))
}

/// Runs every configured seed (concurrently), then writes per-seed files and
/// `summary.json` into `cfg.out` in seed order.
pub fn execute(cfg: &RunConfig) -> Result<Summary> {
    let outputs = cfg
        .seeds
        .par_iter()
        .map(|&s| run_seed(cfg, s))
        .collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    for o in &outputs {
        if let Some(ledger) = &o.ledger {
            write_file(&seed_file(&cfg.out, cfg.mode, o.seed, "ledger.csv"), &ledger_csv(ledger))?;
        }
        if matches!(cfg.mode, Mode::Evodpo | Mode::FixedRef | Mode::Atlas) {
            write_file(&seed_file(&cfg.out, cfg.mode, o.seed, "phases.csv"), &phases_csv(&o.phases))?;
        }
        if cfg.mode == Mode::Verify {
            write_file(
                &seed_file(&cfg.out, cfg.mode, o.seed, "lemmas.json"),
                &lemmas_json(&o.lemmas)?,
            )?;
            write_file(&seed_file(&cfg.out, cfg.mode, o.seed, "lemmas.csv"), &lemmas_csv(&o.lemmas))?;
        }
    }
    if cfg.mode == Mode::Verify && cfg.verify_scaling {
        let scaling = run_scaling(cfg)?;
        write_file(&cfg.out.join("verify_scaling.json"), &to_json(&serde_json::to_value(&scaling)?))?;
    }
    let summary = summarize(cfg.mode, &outputs);
    write_file(&cfg.out.join(SUMMARY_FILE), &to_json(&serde_json::to_value(&summary)?))?;
    Ok(summary)
}

/// Regret-scaling comparison over horizons `{H, 2H, 4H}` for the configured
/// seeds; the other settings are the sustained-drift defaults.
pub fn run_scaling(cfg: &RunConfig) -> Result<ScalingReport> {
    let h = cfg.horizon;
    check_regret_scaling(&ScalingConfig {
        horizons: vec![h, 2 * h, 4 * h],
        seeds: cfg.seeds.clone(),
        kappa: cfg.kappa,
        ..ScalingConfig::default()
    })
}

pub fn read_summary(path: &Path) -> Result<Summary> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Schema {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn opt(x: Option<f64>) -> String {
    x.map(g17).unwrap_or_default()
}

/// One comparison row per summary.
pub fn report_table(summaries: &[(PathBuf, Summary)]) -> Result<String> {
    if summaries.is_empty() {
        return Err(Error::Empty("report needs at least one summary"));
    }
    let mut s = String::from(REPORT_HEADER);
    s.push('\n');
    for (path, sum) in summaries {
        let mode: Mode = sum.mode.parse().map_err(|m| Error::Schema {
            path: path.clone(),
            message: m,
        })?;
        if sum.seeds.len() != sum.final_metric_per_seed.len() {
            return Err(Error::Schema {
                path: path.clone(),
                message: "seeds and final_metric_per_seed differ in length".into(),
            });
        }
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            mode.name(),
            metric_name(mode),
            sum.seeds.len(),
            g17(sum.mean),
            g17(sum.sem),
            opt(sum.slope_exponent),
            opt(sum.accept_rate)
        );
    }
    Ok(s)
}

pub fn report(paths: &[PathBuf]) -> Result<String> {
    let summaries = paths
        .iter()
        .map(|p| Ok((p.clone(), read_summary(p)?)))
        .collect::<Result<Vec<_>>>()?;
    report_table(&summaries)
}

/// Accepted over gated phases, recounted from a phase CSV body.
pub fn accept_rate_from_csv(text: &str) -> Option<f64> {
    let mut acc = 0usize;
    let mut gated = 0usize;
    for line in text.lines().skip(1) {
        match line.split(',').nth(4) {
            Some(l) if l == PhaseOutcomeKind::Accepted.csv_label() => {
                acc += 1;
                gated += 1;
            }
            Some(l) if l == PhaseOutcomeKind::Rejected.csv_label() => gated += 1,
            _ => {}
        }
    }
    (gated > 0).then(|| acc as f64 / gated as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regret::StepRegret;

    #[test]
    fn ledger_header_and_rows() {
        let mut l = RegretLedger::default();
        l.push(
            0,
            StepRegret {
                bias: 0.1,
                error: 0.2,
                regret: 0.30000000000000004,
            },
            3,
            true,
        );
        let csv = ledger_csv(&l);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), LEDGER_HEADER);
        assert_eq!(
            lines.next().unwrap(),
            "1,0,0.10000000000000001,0.20000000000000001,0.30000000000000004,0.30000000000000004,3,1"
        );
    }

    #[test]
    fn json_floats_use_seventeen_digits() {
        let v = serde_json::json!({"a": 0.1, "b": 3, "c": [1.5, null], "d": {}});
        let s = to_json(&v);
        assert!(s.contains("\"a\": 0.10000000000000001"));
        assert!(s.contains("\"b\": 3"));
        let back: Value = serde_json::from_str(&s).unwrap();
        assert_eq!(back["a"].as_f64(), Some(0.1));
        assert_eq!(back["c"][1], Value::Null);
    }

    #[test]
    fn single_summary_gives_one_row() {
        let s = Summary {
            mode: "evodpo".into(),
            seeds: vec![1],
            final_metric_per_seed: vec![2.5],
            mean: 2.5,
            sem: 0.0,
            slope_exponent: None,
            accept_rate: Some(0.5),
        };
        let t = report_table(&[(PathBuf::from("x"), s)]).unwrap();
        let lines: Vec<_> = t.lines().collect();
        assert_eq!(lines, vec![REPORT_HEADER, "evodpo,regret_T,1,2.5,0,,0.5"]);
        assert!(report_table(&[]).is_err());
    }

    #[test]
    fn phase_csv_recount() {
        let csv = format!("{PHASE_HEADER}\n1,4,0.1,0.001,1,0.6,0.0007,0.002\n2,4,0,0.001,0,0.6,0.0007,0.002\n3,0,nan,nan,skip,0.6,0.0007,0.002\n");
        assert_eq!(accept_rate_from_csv(&csv), Some(0.5));
        assert_eq!(accept_rate_from_csv(PHASE_HEADER), None);
    }
}
