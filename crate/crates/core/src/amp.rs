//! Vector AMP with side information.
//!
//! Each iteration matched-filters the residual, shrinks every row of the
//! result with the MMSE denoiser of a Bernoulli-Gaussian prior sharpened by
//! neighbouring frames, and forms an Onsager-corrected residual:
//!
//! ```text
//! R_i = X_{i-1} + A^H V_{i-1}
//! X_i = eta(R_i; S)
//! V_i = Y - A X_i + (1/L) V_{i-1} sum_n d eta_n / d r_n
//! ```
//!
//! The denoiser of row `r` is `(1 + e/beta)^-1 r / (1 + phi)`, where `phi`
//! is the posterior odds of inactivity. All odds are carried as natural
//! logarithms; `+inf`/`-inf` encode perfect knowledge of inactivity/activity.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::model::{MarkovActivityModel, PatternTable, C64};

/// Inverse log-likelihood ratio `ln p(r | inactive) - ln p(r | active)` of
/// one device in one frame.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Illr(f64);

impl Illr {
    pub const UNINFORMATIVE: Illr = Illr(0.0);
    pub const KNOWN_INACTIVE: Illr = Illr(f64::INFINITY);
    pub const KNOWN_ACTIVE: Illr = Illr(f64::NEG_INFINITY);

    pub fn from_ln(ln: f64) -> Self {
        Illr(ln)
    }

    /// From the ratio itself; `+inf` is allowed.
    pub fn from_value(v: f64) -> Result<Self> {
        if v.is_nan() || v < 0.0 {
            return Err(Error::invalid("inverse LLR", format!("{v} is not in [0, inf]")));
        }
        Ok(Illr(v.ln()))
    }

    pub fn ln(self) -> f64 {
        self.0
    }

    pub fn value(self) -> f64 {
        self.0.exp()
    }
}

/// Per-device side information from the frames around the target frame.
///
/// Each device owns `left + right` entries: the `left` preceding frames
/// nearest first, then the `right` following frames nearest first.
#[derive(Debug, Clone, PartialEq)]
pub struct SideInfo {
    devices: usize,
    left: usize,
    right: usize,
    values: Vec<Illr>,
}

/// Side information of a single device.
#[derive(Debug, Clone, Copy)]
pub struct SiEntry<'a> {
    pub left: &'a [Illr],
    pub right: &'a [Illr],
}

impl SiEntry<'static> {
    pub const NONE: SiEntry<'static> = SiEntry {
        left: &[],
        right: &[],
    };
}

impl SideInfo {
    /// No side information: the plain Bernoulli-Gaussian MMSE denoiser.
    pub fn none(devices: usize) -> Self {
        Self {
            devices,
            left: 0,
            right: 0,
            values: Vec::new(),
        }
    }

    /// Previous- and next-frame inverse LLRs.
    pub fn double_sided(prev: Vec<Illr>, next: Vec<Illr>) -> Result<Self> {
        Self::window(vec![prev], vec![next])
    }

    /// `left[k]` holds frame `t - 1 - k`, `right[k]` frame `t + 1 + k`.
    pub fn window(left: Vec<Vec<Illr>>, right: Vec<Vec<Illr>>) -> Result<Self> {
        let devices = left
            .first()
            .or(right.first())
            .map(Vec::len)
            .ok_or_else(|| Error::invalid("side info", "empty window; use SideInfo::none"))?;
        if let Some(bad) = left.iter().chain(&right).find(|v| v.len() != devices) {
            return Err(Error::dims("side info", devices, bad.len()));
        }
        if left.iter().chain(&right).flatten().any(|v| v.0.is_nan()) {
            return Err(Error::InvalidSideInfo);
        }
        let width = left.len() + right.len();
        let mut values = Vec::with_capacity(devices * width);
        for n in 0..devices {
            values.extend(left.iter().map(|f| f[n]));
            values.extend(right.iter().map(|f| f[n]));
        }
        Ok(Self {
            devices,
            left: left.len(),
            right: right.len(),
            values,
        })
    }

    pub fn devices(&self) -> usize {
        self.devices
    }

    pub fn left_len(&self) -> usize {
        self.left
    }

    pub fn right_len(&self) -> usize {
        self.right
    }

    pub fn entry(&self, n: usize) -> SiEntry<'_> {
        let width = self.left + self.right;
        let row = &self.values[n * width..(n + 1) * width];
        SiEntry {
            left: &row[..self.left],
            right: &row[self.left..],
        }
    }
}

/// Prior over the activity of a device inside the SI window.
#[derive(Debug, Clone, PartialEq)]
pub enum WindowPrior {
    /// First-order chain; windows of any size are handled by forward and
    /// backward message passing.
    Markov(MarkovActivityModel),
    /// Explicit pattern probabilities for an arbitrary activity process.
    Patterns(PatternTable),
}

impl WindowPrior {
    pub fn active_probability(&self) -> f64 {
        match self {
            WindowPrior::Markov(m) => m.active_probability(),
            WindowPrior::Patterns(t) => t.active_probability(),
        }
    }

    /// `ln(phi / upsilon_t)`: the posterior odds of inactivity contributed by
    /// the prior and the side information, excluding the target frame's own
    /// likelihood.
    pub fn log_si_odds(&self, si: SiEntry<'_>) -> Result<f64> {
        match self {
            WindowPrior::Markov(m) => markov_log_odds(m, si),
            WindowPrior::Patterns(t) => table_log_odds(t, si),
        }
    }

    /// `ln p(S | inactive) - ln p(S | active)`: the side-information part of
    /// the detector threshold, free of the activity prior.
    pub fn log_si_likelihood_ratio(&self, si: SiEntry<'_>) -> Result<f64> {
        match self {
            WindowPrior::Markov(m) => markov_evidence(m, si),
            WindowPrior::Patterns(t) => {
                let pa = t.active_probability();
                if pa <= 0.0 || pa >= 1.0 {
                    return Err(Error::DegeneratePrior);
                }
                let v = table_log_odds(t, si)? - ((1.0 - pa).ln() - pa.ln());
                if v.is_nan() {
                    return Err(Error::InvalidSideInfo);
                }
                Ok(v)
            }
        }
    }
}

/// `ln [(p01 + (1 - p01) u) / (p11 + (1 - p11) u)]` for `u = exp(ln_u)`,
/// with the limits at `u = 0` and `u = inf`.
pub(crate) fn log_bracket(model: &MarkovActivityModel, ln_u: f64) -> f64 {
    let (p01, p11) = (model.p01(), model.p11());
    if ln_u == f64::INFINITY {
        return (1.0 - p01).ln() - (1.0 - p11).ln();
    }
    if ln_u == f64::NEG_INFINITY {
        return p01.ln() - p11.ln();
    }
    let num = log_affine(p01, ln_u);
    let den = log_affine(p11, ln_u);
    if num.is_infinite() && den.is_infinite() {
        // p01 = p11 = 0 with u underflowing: ratio of the (1 - p) u terms.
        return (1.0 - p01).ln() - (1.0 - p11).ln();
    }
    num - den
}

/// `ln(p + (1 - p) u)` for finite `ln_u`.
fn log_affine(p: f64, ln_u: f64) -> f64 {
    if ln_u < 700.0 {
        ((1.0 - p) * ln_u.exp_m1()).ln_1p()
    } else if p < 1.0 {
        (1.0 - p).ln() + ln_u + (p / (1.0 - p) * (-ln_u).exp()).ln_1p()
    } else {
        0.0
    }
}

/// Folds one side of the window (nearest first) into the effective inverse
/// LLR of the frame adjacent to the target.
fn markov_side(model: &MarkovActivityModel, side: &[Illr]) -> Result<Option<f64>> {
    let Some((far, rest)) = side.split_last() else {
        return Ok(None);
    };
    let mut eff = far.ln();
    for u in rest.iter().rev() {
        eff = u.ln() + log_bracket(model, eff);
        if eff.is_nan() {
            return Err(Error::InvalidSideInfo);
        }
    }
    Ok(Some(eff))
}

fn markov_evidence(model: &MarkovActivityModel, si: SiEntry<'_>) -> Result<f64> {
    // Two-state stationary chains are reversible, so the past is folded
    // with the same transition probabilities as the future.
    let mut total = 0.0;
    for side in [si.left, si.right] {
        if let Some(eff) = markov_side(model, side)? {
            total += log_bracket(model, eff);
        }
    }
    if total.is_nan() {
        return Err(Error::InvalidSideInfo);
    }
    Ok(total)
}

fn markov_log_odds(model: &MarkovActivityModel, si: SiEntry<'_>) -> Result<f64> {
    let (p01, p11) = (model.p01(), model.p11());
    if p11 == 1.0 && p01 > 0.0 {
        // Absorbing active state: the prior odds (1-p11)/p01 vanish while
        // each known-inactive neighbour contributes (1-p01)/(1-p11). Track
        // the power of (1 - p11) to take the limit.
        let mut order = 1i32;
        let mut finite = -p01.ln();
        for side in [si.left, si.right] {
            match markov_side(model, side)? {
                None => {}
                Some(eff) if eff == f64::INFINITY => {
                    order -= 1;
                    finite += (1.0 - p01).ln();
                }
                Some(eff) => finite += log_bracket(model, eff),
            }
        }
        return Ok(match order.cmp(&0) {
            std::cmp::Ordering::Greater => f64::NEG_INFINITY,
            std::cmp::Ordering::Equal => finite,
            std::cmp::Ordering::Less => f64::INFINITY,
        });
    }
    let pa = model.active_probability();
    let total = ((1.0 - pa).ln() - pa.ln()) + markov_evidence(model, si)?;
    if total.is_nan() {
        return Err(Error::InvalidSideInfo);
    }
    Ok(total)
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn log_sum_exp(values: impl IntoIterator<Item = f64>) -> f64 {
    let values: Vec<f64> = values.into_iter().collect();
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn table_log_odds(table: &PatternTable, si: SiEntry<'_>) -> Result<f64> {
    let target = table.target();
    if si.left.len() != target || si.right.len() != table.width() - target - 1 {
        return Err(Error::dims(
            "pattern window",
            format!("{} left / {} right", target, table.width() - target - 1),
            format!("{} left / {} right", si.left.len(), si.right.len()),
        ));
    }
    // Per-offset likelihoods normalised to v^(1-b) / (1 + v) so perfect
    // knowledge becomes 0/1 weights instead of infinities.
    let weight = |u: Illr, active: bool| {
        if active {
            -softplus(u.ln())
        } else {
            -softplus(-u.ln())
        }
    };
    let mut inactive = Vec::new();
    let mut active = Vec::new();
    for (pattern, u) in table.iter() {
        if u == 0.0 {
            continue;
        }
        let mut w = u.ln();
        for k in 0..table.width() {
            if k == target {
                continue;
            }
            let illr = if k < target {
                si.left[target - 1 - k]
            } else {
                si.right[k - target - 1]
            };
            w += weight(illr, pattern.bit(k));
        }
        if pattern.bit(target) {
            active.push(w);
        } else {
            inactive.push(w);
        }
    }
    if active.is_empty() {
        return Err(Error::DegeneratePrior);
    }
    let den = log_sum_exp(active);
    if den == f64::NEG_INFINITY {
        return Err(Error::InvalidSideInfo);
    }
    Ok(log_sum_exp(inactive) - den)
}

/// Scalar parameters of the denoiser at one iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenoiserParams {
    pub beta: f64,
    pub state_var: f64,
    /// `1/e - 1/(e + beta)`
    pub xi: f64,
}

impl DenoiserParams {
    pub fn new(beta: f64, state_var: f64) -> Result<Self> {
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::invalid("beta", beta.to_string()));
        }
        if !(state_var.is_finite() && state_var > 0.0) {
            return Err(Error::invalid("state_var", state_var.to_string()));
        }
        Ok(Self {
            beta,
            state_var,
            xi: 1.0 / state_var - 1.0 / (state_var + beta),
        })
    }

    /// Linear MMSE gain `(1 + e/beta)^-1` of an active row.
    pub fn gain(&self) -> f64 {
        1.0 / (1.0 + self.state_var / self.beta)
    }

    /// `ln((beta + e)/e)`, the per-antenna log-determinant ratio.
    pub fn log_det_ratio(&self) -> f64 {
        (self.beta / self.state_var).ln_1p()
    }

    /// `ln upsilon` of a row with squared norm `energy` over `antennas` entries.
    pub fn log_inverse_llr(&self, energy: f64, antennas: usize) -> f64 {
        antennas as f64 * self.log_det_ratio() - self.xi * energy
    }
}

pub(crate) fn row_energy(r: &[C64]) -> f64 {
    r.iter().map(|z| z.norm_sqr()).sum()
}

/// `((beta + e)/e)^M exp(-xi |r|^2)`, evaluated in the log domain.
pub fn inverse_llr(r: &[C64], params: &DenoiserParams) -> f64 {
    params.log_inverse_llr(row_energy(r), r.len()).exp()
}

/// Posterior odds of inactivity `phi` under a first-order chain with
/// previous/next-frame side information.
pub fn phi_dsi(illr_t: Illr, si: SiEntry<'_>, model: &MarkovActivityModel) -> Result<f64> {
    if illr_t.ln().is_nan() {
        return Err(Error::InvalidSideInfo);
    }
    let odds = WindowPrior::Markov(*model).log_si_odds(si)?;
    let ln_phi = illr_t.ln() + odds;
    if ln_phi.is_nan() {
        return Err(Error::InvalidSideInfo);
    }
    Ok(ln_phi.exp())
}

/// Shrinkage factor `1/(1 + phi)` and `phi/(1 + phi)^2` from `ln phi`.
fn shrink_terms(ln_phi: f64) -> (f64, f64) {
    if ln_phi > 0.0 {
        let inv = (-ln_phi).exp();
        let g = inv / (1.0 + inv);
        (g, inv / ((1.0 + inv) * (1.0 + inv)))
    } else {
        let phi = ln_phi.exp();
        let g = 1.0 / (1.0 + phi);
        (g, phi * g * g)
    }
}

/// Real multiplier `(1 + e/beta)^-1 / (1 + phi)` applied to row `r`, given
/// `ln(phi / upsilon_t)`.
pub fn shrinkage_multiplier(r: &[C64], params: &DenoiserParams, log_si_odds: f64) -> f64 {
    let ln_phi = params.log_inverse_llr(row_energy(r), r.len()) + log_si_odds;
    params.gain() * shrink_terms(ln_phi).0
}

pub fn denoise_row(r: &[C64], params: &DenoiserParams, log_si_odds: f64) -> Vec<C64> {
    let k = shrinkage_multiplier(r, params, log_si_odds);
    r.iter().map(|z| z * k).collect()
}

/// MMSE denoiser with double-sided (or any first-order chain window) SI.
pub fn denoise_dsi(
    r: &[C64],
    params: &DenoiserParams,
    model: &MarkovActivityModel,
    si: SiEntry<'_>,
) -> Result<Vec<C64>> {
    let odds = WindowPrior::Markov(*model).log_si_odds(si)?;
    Ok(denoise_row(r, params, odds))
}

/// MMSE denoiser for an arbitrary activity process given as pattern
/// probabilities over the window.
pub fn denoise_generalized(
    r: &[C64],
    params: &DenoiserParams,
    si: SiEntry<'_>,
    table: &PatternTable,
) -> Result<Vec<C64>> {
    let odds = table_log_odds(table, si)?;
    Ok(denoise_row(r, params, odds))
}

/// Wirtinger Jacobian `d eta / d r` (conjugate held fixed) as an `M x M`
/// matrix with entry `(j, k) = d eta_k / d r_j`:
/// `a g I + a xi phi/(1+phi)^2 conj(r)^T r`.
pub fn denoiser_jacobian(
    r: &[C64],
    params: &DenoiserParams,
    prior: &WindowPrior,
    si: SiEntry<'_>,
) -> Result<Array2<C64>> {
    let odds = prior.log_si_odds(si)?;
    Ok(jacobian_from_odds(r, params, odds))
}

pub(crate) fn jacobian_from_odds(r: &[C64], params: &DenoiserParams, log_si_odds: f64) -> Array2<C64> {
    let m = r.len();
    let ln_phi = params.log_inverse_llr(row_energy(r), m) + log_si_odds;
    let (g, curv) = shrink_terms(ln_phi);
    let a = params.gain();
    let c = a * params.xi * curv;
    Array2::from_shape_fn((m, m), |(j, k)| {
        let diag = if j == k { a * g } else { 0.0 };
        r[j].conj() * r[k] * c + diag
    })
}

/// Pilot matrix together with its conjugate transpose.
#[derive(Debug, Clone)]
pub struct Pilot {
    matrix: Array2<C64>,
    adjoint: Array2<C64>,
}

impl Pilot {
    pub fn new(matrix: Array2<C64>) -> Self {
        let adjoint = matrix.t().mapv(|z| z.conj());
        Self { matrix, adjoint }
    }

    pub fn matrix(&self) -> &Array2<C64> {
        &self.matrix
    }

    pub fn adjoint(&self) -> &Array2<C64> {
        &self.adjoint
    }

    /// L
    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    /// N
    pub fn devices(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Iterate of one AMP run on one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AmpRunState {
    /// X_i, N x M
    pub estimate: Array2<C64>,
    /// V_i, L x M
    pub residual: Array2<C64>,
    /// R_i, N x M
    pub matched_filter: Array2<C64>,
    /// e used to denoise `matched_filter`.
    pub state_var: f64,
    pub iter: usize,
    /// State variance used at each iteration, in order.
    pub state_history: Vec<f64>,
    pub converged: bool,
}

impl AmpRunState {
    pub fn initial(received: &Array2<C64>, devices: usize) -> Self {
        let m = received.ncols();
        Self {
            estimate: Array2::zeros((devices, m)),
            residual: received.clone(),
            matched_filter: Array2::zeros((devices, m)),
            state_var: f64::NAN,
            iter: 0,
            state_history: Vec::new(),
            converged: false,
        }
    }

    pub fn denoiser_params(&self, beta: f64) -> Result<DenoiserParams> {
        DenoiserParams::new(beta, self.state_var)
    }
}

/// `X_{i-1} + A^H V_{i-1}`.
pub fn matched_filter_step(state: &AmpRunState, pilot: &Pilot) -> Result<Array2<C64>> {
    let (l, n) = pilot.matrix.dim();
    if state.residual.nrows() != l {
        return Err(Error::dims("residual rows", l, state.residual.nrows()));
    }
    if state.estimate.dim() != (n, state.residual.ncols()) {
        return Err(Error::dims(
            "estimate",
            format!("{n}x{}", state.residual.ncols()),
            format!("{:?}", state.estimate.dim()),
        ));
    }
    Ok(&state.estimate + &pilot.adjoint.dot(&state.residual))
}

/// `Y - A X_i + (1/L) V_{i-1} J` with `J` the summed denoiser Jacobian.
pub fn residual_update(
    received: &Array2<C64>,
    pilot: &Pilot,
    estimate: &Array2<C64>,
    prev_residual: &Array2<C64>,
    jacobian_sum: ArrayView2<'_, C64>,
) -> Result<Array2<C64>> {
    let (l, n) = pilot.matrix.dim();
    let m = received.ncols();
    if received.dim() != (l, m) || prev_residual.dim() != (l, m) {
        return Err(Error::dims("residual", format!("{l}x{m}"), format!("{:?}", prev_residual.dim())));
    }
    if estimate.dim() != (n, m) {
        return Err(Error::dims("estimate", format!("{n}x{m}"), format!("{:?}", estimate.dim())));
    }
    if jacobian_sum.dim() != (m, m) {
        return Err(Error::dims("jacobian", format!("{m}x{m}"), format!("{:?}", jacobian_sum.dim())));
    }
    let onsager = prev_residual.dot(&jacobian_sum) / C64::new(l as f64, 0.0);
    Ok(received - &pilot.matrix.dot(estimate) + onsager)
}

/// Residual-based estimate `|V|_F^2 / (L M)` of the state variance.
pub fn update_state_var(residual: &Array2<C64>) -> f64 {
    residual.iter().map(|z| z.norm_sqr()).sum::<f64>() / residual.len() as f64
}

/// Iteration controls and scalar system parameters of an AMP run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmpConfig {
    pub beta: f64,
    pub noise_var: f64,
    pub max_iters: usize,
    /// Relative Frobenius change below which the run stops; 0 runs all
    /// `max_iters` iterations.
    pub conv_tol: f64,
}

impl AmpConfig {
    pub fn from_system(cfg: &crate::model::SystemConfig) -> Self {
        Self {
            beta: cfg.beta,
            noise_var: cfg.noise_var,
            max_iters: cfg.max_iters,
            conv_tol: cfg.conv_tol,
        }
    }

    /// State variance at `X = 0`: `sigma^2 + (N/L) p_a beta`.
    pub fn initial_state_var(&self, devices: usize, pilot_len: usize, p_active: f64) -> f64 {
        self.noise_var + devices as f64 / pilot_len as f64 * p_active * self.beta
    }
}

fn frob(a: &Array2<C64>) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Runs AMP on one frame until the estimate stops moving or `max_iters`.
pub fn run_amp(
    received: &Array2<C64>,
    pilot: &Pilot,
    cfg: &AmpConfig,
    prior: &WindowPrior,
    si: &SideInfo,
) -> Result<AmpRunState> {
    let (l, n) = pilot.matrix.dim();
    let m = received.ncols();
    if received.nrows() != l {
        return Err(Error::dims("received rows", l, received.nrows()));
    }
    if si.devices() != n {
        return Err(Error::dims("side info devices", n, si.devices()));
    }
    if cfg.max_iters == 0 {
        return Err(Error::invalid("max_iters", "must be positive"));
    }

    let odds = (0..n)
        .map(|d| prior.log_si_odds(si.entry(d)))
        .collect::<Result<Vec<f64>>>()?;

    let mut state = AmpRunState::initial(received, n);
    let e0 = cfg.initial_state_var(n, l, prior.active_probability());

    for iter in 1..=cfg.max_iters {
        let r = matched_filter_step(&state, pilot)?;
        let e = if iter == 1 {
            e0
        } else {
            update_state_var(&state.residual).max(cfg.noise_var)
        };
        let params = DenoiserParams::new(cfg.beta, e).map_err(|_| Error::NonFinite { iteration: iter })?;
        let a = params.gain();
        let m_f = m as f64;
        let log_det = params.log_det_ratio();

        let mut estimate = Array2::<C64>::zeros((n, m));
        let mut diag = 0.0;
        let mut outer = Array2::<C64>::zeros((m, m));
        for (d, (row, mut out)) in r.rows().into_iter().zip(estimate.rows_mut()).enumerate() {
            let energy: f64 = row.iter().map(|z| z.norm_sqr()).sum();
            let ln_phi = m_f * log_det - params.xi * energy + odds[d];
            let (g, curv) = shrink_terms(ln_phi);
            let k = a * g;
            out.zip_mut_with(&row, |o, z| *o = z * k);
            diag += k;
            let c = a * params.xi * curv;
            if c != 0.0 {
                for j in 0..m {
                    let rj = row[j].conj() * c;
                    for kk in 0..m {
                        outer[[j, kk]] += rj * row[kk];
                    }
                }
            }
        }
        for j in 0..m {
            outer[[j, j]] += diag;
        }

        let residual = residual_update(received, pilot, &estimate, &state.residual, outer.view())?;
        if !estimate.iter().chain(residual.iter()).all(|z| z.re.is_finite() && z.im.is_finite()) {
            return Err(Error::NonFinite { iteration: iter });
        }

        let change = frob(&(&estimate - &state.estimate));
        let scale = frob(&state.estimate);
        state.estimate = estimate;
        state.residual = residual;
        state.matched_filter = r;
        state.state_var = e;
        state.state_history.push(e);
        state.iter = iter;
        if change <= cfg.conv_tol * scale {
            state.converged = true;
            break;
        }
    }
    Ok(state)
}
