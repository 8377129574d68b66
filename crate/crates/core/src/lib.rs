//! Grant-free activity detection and channel estimation with approximate
//! message passing, using soft activity information from neighbouring
//! frames of a Markov-correlated device population.

pub mod amp;
pub mod detect;
pub mod error;
pub mod experiment;
pub mod model;
pub mod oracle;
pub mod window;

pub use amp::{
    denoise_dsi, denoise_generalized, denoiser_jacobian, inverse_llr, phi_dsi, run_amp, AmpConfig, AmpRunState,
    DenoiserParams, Illr, Pilot, SiEntry, SideInfo, WindowPrior,
};
pub use detect::{
    calibrate_equal_rates, compute_metrics, decision_threshold, detect, Calibration, DetectionInputs, DetectorConfig,
    FrameMetrics,
};
pub use error::{Error, Result};
pub use experiment::{
    emit_csv, emit_plotdata, read_csv, run_point, run_sweep, PointResult, ResultRow, SweepParameter, SweepSpec,
};
pub use model::{
    generate_scenario, pattern_probability, stationary_probability, ActivityPattern, MarkovActivityModel,
    PatternTable, ScenarioRealization, SystemConfig, C64,
};
pub use oracle::{exact_pattern_posterior, exact_posterior_mean, PatternPosterior};
pub use window::{extract_si, perfect_si, process_frames, FramePipeline, FramePipelineResult, PipelineParams, SiMode};
