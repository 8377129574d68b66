//! Frame-by-frame estimation with a sliding side-information window.
//!
//! For each frame `t`, side information on the left comes from the stored
//! full runs of earlier frames, and on the right from coarse SI-free runs
//! of the following frames. Window slots that fall outside `0..T` are
//! filled with uninformative inverse LLRs.

use std::fmt;
use std::str::FromStr;

use crate::amp::{run_amp, AmpConfig, AmpRunState, DenoiserParams, Illr, Pilot, SideInfo, WindowPrior};
use crate::error::{Error, Result};
use crate::model::{MarkovActivityModel, ScenarioRealization, SystemConfig};

/// Which side information the per-frame denoiser is given.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SiMode {
    /// Plain vector AMP.
    NoSi,
    /// Previous frame only. Realised as the double-sided denoiser with the
    /// next-frame SI pinned to uninformative.
    Ssi,
    /// Previous full run and next-frame coarse run.
    Dsi,
    /// True activity of the neighbouring frames.
    PerfectSi,
    /// `left` earlier and `right` later frames.
    GeneralizedDsi { left: usize, right: usize },
}

impl SiMode {
    pub fn generalized(left: usize, right: usize) -> Result<Self> {
        if left + right == 0 {
            return Err(Error::invalid("window", "generalized window needs at least one side frame"));
        }
        Ok(SiMode::GeneralizedDsi { left, right })
    }

    /// Number of (earlier, later) frames in the SI window.
    pub fn window(&self) -> (usize, usize) {
        match *self {
            SiMode::NoSi => (0, 0),
            SiMode::Ssi | SiMode::Dsi | SiMode::PerfectSi => (1, 1),
            SiMode::GeneralizedDsi { left, right } => (left, right),
        }
    }

    pub fn label(&self) -> String {
        match self {
            SiMode::NoSi => "NoSI".into(),
            SiMode::Ssi => "SSI-surrogate".into(),
            SiMode::Dsi => "DSI".into(),
            SiMode::PerfectSi => "PerfectSI".into(),
            SiMode::GeneralizedDsi { left, right } => format!("GDSI-{left}-{right}"),
        }
    }
}

impl fmt::Display for SiMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for SiMode {
    type Err = Error;

    /// Accepts `nosi`, `ssi`, `dsi`, `perfect`, and `gdsi:<left>:<right>`
    /// (case-insensitive), as well as the labels produced by [`SiMode::label`].
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "nosi" | "none" => return Ok(SiMode::NoSi),
            "ssi" | "ssi-surrogate" => return Ok(SiMode::Ssi),
            "dsi" => return Ok(SiMode::Dsi),
            "perfect" | "perfectsi" => return Ok(SiMode::PerfectSi),
            _ => {}
        }
        let parts: Vec<&str> = lower.split([':', '-']).collect();
        if let ["gdsi", l, r] = parts.as_slice() {
            let parse = |v: &str| v.parse::<usize>().map_err(|_| Error::invalid("mode", s.to_string()));
            return SiMode::generalized(parse(l)?, parse(r)?);
        }
        Err(Error::invalid("mode", format!("unknown SI mode `{s}`")))
    }
}

/// Inverse LLRs of a converged run, one per device.
pub fn extract_si(converged: &AmpRunState, beta: f64) -> Result<Vec<Illr>> {
    let params = DenoiserParams::new(beta, converged.state_var)?;
    let m = converged.matched_filter.ncols();
    Ok(converged
        .matched_filter
        .rows()
        .into_iter()
        .map(|row| {
            let energy: f64 = row.iter().map(|z| z.norm_sqr()).sum();
            Illr::from_ln(params.log_inverse_llr(energy, m))
        })
        .collect())
}

/// Perfect knowledge of a frame's activity.
pub fn perfect_si(truth: &[bool]) -> Vec<Illr> {
    truth
        .iter()
        .map(|&on| if on { Illr::KNOWN_ACTIVE } else { Illr::KNOWN_INACTIVE })
        .collect()
}

/// Settings shared by every AMP run of a pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineParams {
    pub amp: AmpConfig,
    pub activity: MarkovActivityModel,
}

impl PipelineParams {
    pub fn from_system(cfg: &SystemConfig) -> Self {
        Self {
            amp: AmpConfig::from_system(cfg),
            activity: cfg.activity,
        }
    }
}

/// Output of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutput {
    pub state: AmpRunState,
    pub side_info: SideInfo,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FramePipelineResult {
    pub mode: SiMode,
    pub prior: WindowPrior,
    pub frames: Vec<FrameOutput>,
    /// Coarse SI-free run of each frame, where one was needed.
    pub coarse: Vec<Option<AmpRunState>>,
    /// AMP runs executed by this call (cached coarse runs excluded).
    pub amp_runs: usize,
}

/// A scenario prepared for repeated pipeline runs (pilot adjoint cached).
pub struct FramePipeline<'a> {
    scenario: &'a ScenarioRealization,
    pilot: Pilot,
    params: PipelineParams,
}

impl<'a> FramePipeline<'a> {
    pub fn new(scenario: &'a ScenarioRealization, params: PipelineParams) -> Self {
        Self {
            scenario,
            pilot: Pilot::new(scenario.pilot.clone()),
            params,
        }
    }

    pub fn pilot(&self) -> &Pilot {
        &self.pilot
    }

    pub fn params(&self) -> &PipelineParams {
        &self.params
    }

    /// SI-free run on frame `t`.
    pub fn plain_run(&self, t: usize) -> Result<AmpRunState> {
        let prior = WindowPrior::Markov(self.params.activity);
        run_amp(
            &self.scenario.received[t],
            &self.pilot,
            &self.params.amp,
            &prior,
            &SideInfo::none(self.scenario.devices()),
        )
        .map_err(|e| frame_err(t, e))
    }

    pub fn run(&self, mode: SiMode) -> Result<FramePipelineResult> {
        self.run_with_prior(mode, WindowPrior::Markov(self.params.activity), None)
    }

    /// As [`FramePipeline::run`], reusing already computed SI-free runs
    /// (e.g. from a `NoSi` pass) as the coarse right-side runs.
    pub fn run_with_coarse(&self, mode: SiMode, plain_runs: &[AmpRunState]) -> Result<FramePipelineResult> {
        self.run_with_prior(mode, WindowPrior::Markov(self.params.activity), Some(plain_runs))
    }

    /// Runs every frame under `mode` with an explicit window prior (for
    /// example a [`crate::model::PatternTable`] of a non-Markov process).
    pub fn run_with_prior(
        &self,
        mode: SiMode,
        prior: WindowPrior,
        plain_runs: Option<&[AmpRunState]>,
    ) -> Result<FramePipelineResult> {
        let sc = self.scenario;
        let frames = sc.frames();
        let devices = sc.devices();
        let beta = self.params.amp.beta;
        let (left, right) = mode.window();
        if let WindowPrior::Patterns(table) = &prior {
            if table.width() != left + 1 + right || table.target() != left {
                return Err(Error::dims(
                    "window prior",
                    format!("{left} left / {right} right"),
                    format!("width {} target {}", table.width(), table.target()),
                ));
            }
        }
        let uninformative = || vec![Illr::UNINFORMATIVE; devices];

        let mut coarse: Vec<Option<AmpRunState>> = vec![None; frames];
        let mut outputs: Vec<FrameOutput> = Vec::with_capacity(frames);
        let mut runs = 0;

        for t in 0..frames {
            let side_info = match mode {
                SiMode::NoSi => SideInfo::none(devices),
                SiMode::PerfectSi => {
                    let prev = if t > 0 { perfect_si(&sc.activity[t - 1]) } else { uninformative() };
                    let next = if t + 1 < frames {
                        perfect_si(&sc.activity[t + 1])
                    } else {
                        uninformative()
                    };
                    SideInfo::double_sided(prev, next)?
                }
                SiMode::Ssi | SiMode::Dsi | SiMode::GeneralizedDsi { .. } => {
                    let mut lhs = Vec::with_capacity(left);
                    for k in 1..=left {
                        lhs.push(match t.checked_sub(k) {
                            Some(s) => extract_si(&outputs[s].state, beta)?,
                            None => uninformative(),
                        });
                    }
                    let mut rhs = Vec::with_capacity(right);
                    for k in 1..=right {
                        let s = t + k;
                        if mode == SiMode::Ssi || s >= frames {
                            rhs.push(uninformative());
                            continue;
                        }
                        if coarse[s].is_none() {
                            let run = match plain_runs {
                                Some(cached) => cached[s].clone(),
                                None => {
                                    runs += 1;
                                    self.plain_run(s)?
                                }
                            };
                            coarse[s] = Some(run);
                        }
                        rhs.push(extract_si(coarse[s].as_ref().expect("filled above"), beta)?);
                    }
                    SideInfo::window(lhs, rhs)?
                }
            };
            runs += 1;
            let state = run_amp(&sc.received[t], &self.pilot, &self.params.amp, &prior, &side_info)
                .map_err(|e| frame_err(t, e))?;
            outputs.push(FrameOutput { state, side_info });
        }

        Ok(FramePipelineResult {
            mode,
            prior,
            frames: outputs,
            coarse,
            amp_runs: runs,
        })
    }
}

fn frame_err(frame: usize, e: Error) -> Error {
    match e {
        e @ Error::Frame { .. } => e,
        e => Error::Frame {
            frame,
            source: Box::new(e),
        },
    }
}

/// Runs every frame of `scenario` under `mode`.
pub fn process_frames(
    scenario: &ScenarioRealization,
    mode: SiMode,
    params: &PipelineParams,
) -> Result<FramePipelineResult> {
    FramePipeline::new(scenario, *params).run(mode)
}
