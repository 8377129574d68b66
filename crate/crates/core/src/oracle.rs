//! Brute-force posterior over activity patterns.
//!
//! Works directly from the matched-filter rows of every frame in the
//! window (not from inverse LLRs) and enumerates all `2^W` patterns, so it
//! shares no code path with the denoisers it is used to check. Cost is
//! exponential in the window width; intended for small test windows.

use crate::error::{Error, Result};
use crate::model::{PatternTable, C64};

/// `p(P_s | r, S)` for every pattern of the window.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternPosterior {
    pub width: usize,
    pub target: usize,
    /// Indexed by pattern code.
    pub probs: Vec<f64>,
}

impl PatternPosterior {
    /// Posterior probability that the target frame is active.
    pub fn target_active(&self) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .filter(|(code, _)| (code >> (self.width - 1 - self.target)) & 1 == 1)
            .map(|(_, p)| p)
            .sum()
    }
}

/// `ln CN(r; 0, v I)` up to the `-M ln(pi)` constant.
fn log_gaussian(r: &[C64], var: f64) -> f64 {
    let energy: f64 = r.iter().map(|z| z.re * z.re + z.im * z.im).sum();
    -(r.len() as f64) * var.ln() - energy / var
}

/// Posterior over patterns given one row per window frame and the state
/// variance of each frame. Frame `k` of the window uses `rows[k]`.
pub fn exact_pattern_posterior(
    rows: &[&[C64]],
    state_vars: &[f64],
    table: &PatternTable,
    beta: f64,
) -> Result<PatternPosterior> {
    let width = table.width();
    if rows.len() != width || state_vars.len() != width {
        return Err(Error::dims("oracle window", width, rows.len().max(state_vars.len())));
    }
    let mut logw = Vec::with_capacity(1 << width);
    for (code, &u) in table.probs().iter().enumerate() {
        if u == 0.0 {
            logw.push(f64::NEG_INFINITY);
            continue;
        }
        let mut w = u.ln();
        for k in 0..width {
            let active = (code >> (width - 1 - k)) & 1 == 1;
            let var = if active { state_vars[k] + beta } else { state_vars[k] };
            w += log_gaussian(rows[k], var);
        }
        logw.push(w);
    }
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::VanishingPosterior);
    }
    let total: f64 = logw.iter().map(|w| (w - max).exp()).sum();
    let probs = logw.iter().map(|w| (w - max).exp() / total).collect();
    Ok(PatternPosterior {
        width,
        target: table.target(),
        probs,
    })
}

/// MMSE estimate of the target row: active patterns contribute the
/// conditional mean `(1 + e/beta)^-1 r`, inactive ones zero.
pub fn exact_posterior_mean(posterior: &PatternPosterior, r_target: &[C64], e_target: f64, beta: f64) -> Vec<C64> {
    let weight = posterior.target_active() * beta / (beta + e_target);
    r_target.iter().map(|z| z * weight).collect()
}
