//! Dynamic-regret accounting: oracle actions, the bias/error decomposition,
//! oracle switches, negative mean regret and log-log scaling fits.

use serde::{Deserialize, Serialize};

use crate::env::{FeatureSet, ThetaPath};
use crate::error::{Error, Result};
use crate::policy::value;

/// Best action under `theta`; ties go to the lowest index.
pub fn oracle_action(theta: &[f64], features: &FeatureSet) -> Result<usize> {
    let u = features.utilities(theta)?;
    Ok(argmax_lowest(&u))
}

pub(crate) fn argmax_lowest(u: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in u.iter().enumerate().skip(1) {
        if v > u[best] {
            best = i;
        }
    }
    best
}

/// Gap between the best and second-best utility.
pub fn top_two_gap(u: &[f64]) -> f64 {
    let best = argmax_lowest(u);
    u.iter()
        .enumerate()
        .filter(|(i, _)| *i != best)
        .map(|(_, v)| u[best] - v)
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRegret {
    pub bias: f64,
    pub error: f64,
    pub regret: f64,
}

/// `bias = J(π*) − J(π^kl)`, `error = J(π^kl) − J(π)`, `r = J(π*) − J(π)`.
pub fn regret_decompose(u: &[f64], pi_star: &[f64], pi_kl: &[f64], pi: &[f64]) -> Result<StepRegret> {
    let j_star = value(pi_star, u)?;
    let j_kl = value(pi_kl, u)?;
    let j = value(pi, u)?;
    Ok(StepRegret {
        bias: j_star - j_kl,
        error: j_kl - j,
        regret: j_star - j,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub t: usize,
    pub phase: usize,
    pub bias: f64,
    pub error: f64,
    pub regret_step: f64,
    pub regret_cum: f64,
    pub oracle_arm: usize,
    pub switch: bool,
}

/// Per-step regret ledger. Rows are appended in time order; `t` starts at 1.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegretLedger {
    pub rows: Vec<LedgerRow>,
}

impl RegretLedger {
    pub fn push(&mut self, phase: usize, step: StepRegret, oracle_arm: usize, switch: bool) {
        let prev = self.rows.last().map_or(0.0, |r| r.regret_cum);
        self.rows.push(LedgerRow {
            t: self.rows.len() + 1,
            phase,
            bias: step.bias,
            error: step.error,
            regret_step: step.regret,
            regret_cum: prev + step.regret,
            oracle_arm,
            switch,
        });
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn cumulative_regret(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.regret_cum)
    }

    pub fn cumulative_bias(&self) -> f64 {
        self.rows.iter().map(|r| r.bias).sum()
    }

    pub fn cumulative_error(&self) -> f64 {
        self.rows.iter().map(|r| r.error).sum()
    }

    pub fn switches(&self) -> usize {
        self.rows.iter().filter(|r| r.switch).count()
    }

    /// Cumulative regret after step `t` (1-based).
    pub fn regret_at(&self, t: usize) -> f64 {
        self.rows[t - 1].regret_cum
    }
}

/// Number of steps `t ≥ 2` where the oracle action at the step's context
/// changes between `θ_{t−1}` and `θ_t`.
pub fn switching_count(path: &ThetaPath, contexts: &[FeatureSet]) -> Result<usize> {
    if contexts.len() != path.len() {
        return Err(Error::InvalidArgument(format!(
            "path has {} steps but {} contexts were given",
            path.len(),
            contexts.len()
        )));
    }
    let mut count = 0;
    for t in 1..path.len() {
        let now = oracle_action(&path.thetas[t], &contexts[t])?;
        let before = oracle_action(&path.thetas[t - 1], &contexts[t])?;
        if now != before {
            count += 1;
        }
    }
    Ok(count)
}

/// Smallest top-two utility gap of `u_{t−1}(x_t, ·)` over `t ≥ 2`.
pub fn measured_margin(path: &ThetaPath, contexts: &[FeatureSet]) -> Result<f64> {
    if contexts.len() != path.len() {
        return Err(Error::InvalidArgument("path/context length mismatch".into()));
    }
    let mut gamma = f64::INFINITY;
    for t in 1..path.len() {
        let u = contexts[t].utilities(&path.thetas[t - 1])?;
        gamma = gamma.min(top_two_gap(&u));
    }
    Ok(gamma)
}

/// Smallest top-two gap of `u_{t−1}(x_t, ·)` over the steps `t ≥ 2` where
/// the oracle action does not switch. Never below [`measured_margin`].
pub fn switch_free_margin(path: &ThetaPath, contexts: &[FeatureSet]) -> Result<f64> {
    if contexts.len() != path.len() {
        return Err(Error::InvalidArgument("path/context length mismatch".into()));
    }
    let mut gamma = f64::INFINITY;
    for t in 1..path.len() {
        let u = contexts[t].utilities(&path.thetas[t - 1])?;
        if argmax_lowest(&u) == oracle_action(&path.thetas[t], &contexts[t])? {
            gamma = gamma.min(top_two_gap(&u));
        }
    }
    Ok(gamma)
}

/// Local window variation `V_{t,W} = Σ_{j=t−W}^{t−1} ‖θ_{j+1} − θ_j‖` for
/// every `t` (0-based here), with indices clipped at the start of the path.
pub fn local_variations(increments: &[f64], window: usize) -> Vec<f64> {
    // increments[j] = ‖θ_{j+1} − θ_j‖; V_t sums increments j in [t−W, t−1].
    let n = increments.len() + 1;
    (0..n)
        .map(|t| {
            let lo = t.saturating_sub(window);
            increments[lo..t].iter().sum()
        })
        .collect()
}

/// Negative mean regret `−(1/H) Σ (r*_t − r_t)` over expected rewards.
pub fn nmr(chosen: &[f64], optimal: &[f64]) -> Result<f64> {
    if chosen.is_empty() {
        return Err(Error::Empty("NMR horizon"));
    }
    if chosen.len() != optimal.len() {
        return Err(Error::DimensionMismatch {
            expected: optimal.len(),
            got: chosen.len(),
        });
    }
    let h = chosen.len() as f64;
    let total: f64 = optimal.iter().zip(chosen).map(|(o, c)| o - c).sum();
    Ok(-(total / h))
}

/// Least-squares slope of `ln R` against `ln T`.
pub fn slope_fit(horizons: &[f64], regrets: &[f64]) -> Result<f64> {
    if horizons.len() != regrets.len() {
        return Err(Error::DimensionMismatch {
            expected: horizons.len(),
            got: regrets.len(),
        });
    }
    if horizons.len() < 3 {
        return Err(Error::InvalidArgument("slope fit needs at least 3 points".into()));
    }
    if horizons.iter().chain(regrets).any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidArgument(
            "slope fit needs strictly positive horizons and regrets".into(),
        ));
    }
    let xs: Vec<f64> = horizons.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = regrets.iter().map(|v| v.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("horizons must not all be equal".into()));
    }
    Ok(sxy / sxx)
}
