//! Likelihood-ratio activity detection, equal-error-rate calibration and
//! the MDR / FAR / NMSE metrics.

use std::ops::AddAssign;

use ndarray::Array2;

use crate::amp::{AmpRunState, DenoiserParams, SiEntry, SideInfo, WindowPrior};
use crate::error::{Error, Result};
use crate::model::{ScenarioRealization, C64};

/// Per-device energy threshold
/// `[base + M ln((e + beta)/e) + ln p(S | inactive)/p(S | active)] / xi`.
pub fn decision_threshold(
    params: &DenoiserParams,
    antennas: usize,
    prior: &WindowPrior,
    si: SiEntry<'_>,
    base_threshold: f64,
) -> Result<f64> {
    let si_ratio = prior.log_si_likelihood_ratio(si)?;
    Ok(threshold_from_parts(params, antennas, si_ratio, base_threshold))
}

fn threshold_from_parts(params: &DenoiserParams, antennas: usize, si_ratio: f64, base: f64) -> f64 {
    (base + side_offset(params, antennas, si_ratio)) / params.xi
}

fn side_offset(params: &DenoiserParams, antennas: usize, si_ratio: f64) -> f64 {
    antennas as f64 * params.log_det_ratio() + si_ratio
}

/// LLR `ln p(r, S | active) - ln p(r, S | inactive)` of one row.
pub fn activity_llr(r: &[C64], params: &DenoiserParams, prior: &WindowPrior, si: SiEntry<'_>) -> Result<f64> {
    let energy: f64 = r.iter().map(|z| z.norm_sqr()).sum();
    Ok(-params.log_inverse_llr(energy, r.len()) - prior.log_si_likelihood_ratio(si)?)
}

/// Thresholds of every device for one converged frame.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    pub base_threshold: f64,
    pub calibrated: bool,
    pub thresholds: Vec<f64>,
}

impl DetectorConfig {
    pub fn for_frame(
        converged: &AmpRunState,
        side_info: &SideInfo,
        prior: &WindowPrior,
        beta: f64,
        base_threshold: f64,
        calibrated: bool,
    ) -> Result<Self> {
        let params = converged.denoiser_params(beta)?;
        let m = converged.matched_filter.ncols();
        let thresholds = (0..side_info.devices())
            .map(|n| decision_threshold(&params, m, prior, side_info.entry(n), base_threshold))
            .collect::<Result<_>>()?;
        Ok(Self {
            base_threshold,
            calibrated,
            thresholds,
        })
    }
}

/// Device `n` is declared active iff `|r_n|^2 > threshold_n`.
pub fn detect(converged: &AmpRunState, thresholds: &[f64]) -> Vec<bool> {
    converged
        .matched_filter
        .rows()
        .into_iter()
        .zip(thresholds)
        .map(|(row, &th)| row.iter().map(|z| z.norm_sqr()).sum::<f64>() > th)
        .collect()
}

/// Everything needed to re-threshold one converged frame cheaply.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionInputs {
    pub energies: Vec<f64>,
    /// `M ln((e + beta)/e) + ln p(S|inactive)/p(S|active)` per device.
    pub offsets: Vec<f64>,
    pub xi: f64,
    pub truth: Vec<bool>,
}

impl DetectionInputs {
    pub fn new(
        converged: &AmpRunState,
        side_info: &SideInfo,
        prior: &WindowPrior,
        beta: f64,
        truth: &[bool],
    ) -> Result<Self> {
        let params = converged.denoiser_params(beta)?;
        let m = converged.matched_filter.ncols();
        let energies = converged
            .matched_filter
            .rows()
            .into_iter()
            .map(|row| row.iter().map(|z| z.norm_sqr()).sum())
            .collect();
        let offsets = (0..side_info.devices())
            .map(|n| {
                prior
                    .log_si_likelihood_ratio(side_info.entry(n))
                    .map(|s| side_offset(&params, m, s))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            energies,
            offsets,
            xi: params.xi,
            truth: truth.to_vec(),
        })
    }

    pub fn decide(&self, base_threshold: f64) -> Vec<bool> {
        self.energies
            .iter()
            .zip(&self.offsets)
            .map(|(&en, &off)| en > (base_threshold + off) / self.xi)
            .collect()
    }

    pub fn counts(&self, base_threshold: f64) -> FrameMetrics {
        let mut m = FrameMetrics::default();
        m.add_decisions(&self.truth, &self.decide(base_threshold));
        m
    }
}

/// Error counts and channel-estimation energies, pooled over any number of
/// frames.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FrameMetrics {
    pub active: u64,
    pub inactive: u64,
    pub missed: u64,
    pub false_alarms: u64,
    /// `sum |X_hat - X|_F^2`
    pub error_energy: f64,
    /// `sum |X|_F^2`
    pub signal_energy: f64,
    pub frames: u64,
    pub frames_without_actives: u64,
}

impl FrameMetrics {
    pub fn mdr(&self) -> f64 {
        self.missed as f64 / self.active.max(1) as f64
    }

    pub fn far(&self) -> f64 {
        self.false_alarms as f64 / self.inactive.max(1) as f64
    }

    pub fn nmse(&self) -> f64 {
        if self.signal_energy > 0.0 {
            self.error_energy / self.signal_energy
        } else if self.error_energy == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }

    pub fn nmse_db(&self) -> f64 {
        10.0 * self.nmse().log10()
    }

    fn add_decisions(&mut self, truth: &[bool], decisions: &[bool]) {
        for (&t, &d) in truth.iter().zip(decisions) {
            if t {
                self.active += 1;
                self.missed += (!d) as u64;
            } else {
                self.inactive += 1;
                self.false_alarms += d as u64;
            }
        }
    }
}

impl AddAssign for FrameMetrics {
    fn add_assign(&mut self, o: Self) {
        self.active += o.active;
        self.inactive += o.inactive;
        self.missed += o.missed;
        self.false_alarms += o.false_alarms;
        self.error_energy += o.error_energy;
        self.signal_energy += o.signal_energy;
        self.frames += o.frames;
        self.frames_without_actives += o.frames_without_actives;
    }
}

/// Metrics of one frame.
pub fn frame_metrics(truth: &[bool], effective: &Array2<C64>, decisions: &[bool], estimate: &Array2<C64>) -> Result<FrameMetrics> {
    if truth.len() != decisions.len() || effective.dim() != estimate.dim() || truth.len() != effective.nrows() {
        return Err(Error::dims(
            "metrics",
            format!("{} devices, {:?}", truth.len(), effective.dim()),
            format!("{} decisions, {:?}", decisions.len(), estimate.dim()),
        ));
    }
    let mut m = FrameMetrics {
        frames: 1,
        ..Default::default()
    };
    m.add_decisions(truth, decisions);
    if m.active == 0 {
        m.frames_without_actives = 1;
    }
    m.error_energy = estimate.iter().zip(effective).map(|(a, b)| (a - b).norm_sqr()).sum();
    m.signal_energy = effective.iter().map(|z| z.norm_sqr()).sum();
    Ok(m)
}

/// Pools metrics over all frames of a scenario.
pub fn compute_metrics(truth: &ScenarioRealization, decisions: &[Vec<bool>], estimates: &[Array2<C64>]) -> Result<FrameMetrics> {
    if decisions.len() != truth.frames() || estimates.len() != truth.frames() {
        return Err(Error::dims("frames", truth.frames(), decisions.len().min(estimates.len())));
    }
    let mut total = FrameMetrics::default();
    for t in 0..truth.frames() {
        total += frame_metrics(&truth.activity[t], &truth.effective[t], &decisions[t], &estimates[t])?;
    }
    Ok(total)
}

/// Result of an equal-error-rate threshold search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub base_threshold: f64,
    pub mdr: f64,
    pub far: f64,
    pub steps: usize,
    /// Whether `|MDR - FAR| <= 0.1 (MDR + FAR)/2` was reached.
    pub within_tolerance: bool,
}

pub const CALIBRATION_STEPS: usize = 30;

fn balanced(mdr: f64, far: f64) -> bool {
    (mdr - far).abs() <= 0.1 * (mdr + far) / 2.0
}

/// Bisects the base LLR threshold until MDR and FAR agree to within 10% of
/// their mean. `rates(threshold)` returns `(mdr, far)` and must be
/// nondecreasing / nonincreasing respectively in the threshold.
pub fn calibrate_equal_rates<F>(mut rates: F, lo: f64, hi: f64) -> Result<Calibration>
where
    F: FnMut(f64) -> Result<(f64, f64)>,
{
    if lo.partial_cmp(&hi) != Some(std::cmp::Ordering::Less) {
        return Err(Error::invalid("bounds", format!("[{lo}, {hi}]")));
    }
    let mut seen: Vec<(f64, f64, f64)> = Vec::new();
    let mut eval = |th: f64, seen: &mut Vec<(f64, f64, f64)>| -> Result<(f64, f64)> {
        let (mdr, far) = rates(th)?;
        for &(t, m, f) in seen.iter() {
            let ok = if t < th { m <= mdr && f >= far } else { m >= mdr && f <= far };
            if !ok {
                return Err(Error::NonMonotone { threshold: th });
            }
        }
        seen.push((th, mdr, far));
        Ok((mdr, far))
    };
    let done = |th, mdr, far, steps| Calibration {
        base_threshold: th,
        mdr,
        far,
        steps,
        within_tolerance: balanced(mdr, far),
    };

    let (mdr_lo, far_lo) = eval(lo, &mut seen)?;
    let (mdr_hi, far_hi) = eval(hi, &mut seen)?;
    if mdr_lo - far_lo > 0.0 || mdr_hi - far_hi < 0.0 {
        return Err(Error::NotBracketing {
            lo,
            hi,
            mdr_lo,
            far_lo,
            mdr_hi,
            far_hi,
        });
    }
    if balanced(mdr_lo, far_lo) {
        return Ok(done(lo, mdr_lo, far_lo, 0));
    }
    if balanced(mdr_hi, far_hi) {
        return Ok(done(hi, mdr_hi, far_hi, 0));
    }

    let (mut a, mut b) = (lo, hi);
    let mut best = if (mdr_lo - far_lo).abs() <= (mdr_hi - far_hi).abs() {
        (lo, mdr_lo, far_lo)
    } else {
        (hi, mdr_hi, far_hi)
    };
    for step in 1..=CALIBRATION_STEPS {
        let mid = 0.5 * (a + b);
        let (mdr, far) = eval(mid, &mut seen)?;
        if (mdr - far).abs() < (best.1 - best.2).abs() {
            best = (mid, mdr, far);
        }
        if balanced(mdr, far) {
            return Ok(done(mid, mdr, far, step));
        }
        if mdr < far {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(done(best.0, best.1, best.2, CALIBRATION_STEPS))
}

/// Pooled `(MDR, FAR)` of a set of frames at `base_threshold`.
pub fn pooled_rates(inputs: &[DetectionInputs], base_threshold: f64) -> (f64, f64) {
    let mut m = FrameMetrics::default();
    for f in inputs {
        m += f.counts(base_threshold);
    }
    (m.mdr(), m.far())
}
