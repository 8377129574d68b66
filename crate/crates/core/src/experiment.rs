//! Seeded Monte Carlo sweeps and their CSV / plot-data outputs.
//!
//! Trials run on the ambient rayon pool; results are collected in trial
//! order so the output does not depend on the number of workers.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::amp::AmpRunState;
use crate::detect::{calibrate_equal_rates, frame_metrics, pooled_rates, Calibration, DetectionInputs, FrameMetrics};
use crate::error::{Error, Result};
use crate::model::{generate_scenario, MarkovActivityModel, SystemConfig};
use crate::window::{FramePipeline, FramePipelineResult, PipelineParams, SiMode};

pub const CSV_HEADER: &str = "mode,N,L,M,T,p01,p11,snr_db,trials,mdr,far,nmse_db,base_threshold,wall_time_seconds";

/// Search interval for the base LLR threshold.
pub const CALIBRATION_BOUNDS: (f64, f64) = (-100.0, 100.0);

const EVAL_DOMAIN: u64 = 0;
const CALIBRATION_DOMAIN: u64 = 1;

/// Seed of trial `index` in a seed `domain` (evaluation or calibration).
pub fn trial_seed(base: u64, domain: u64, index: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    mix(base ^ mix((domain << 48) ^ index))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParameter {
    PilotLength,
    P11,
    Antennas,
}

impl SweepParameter {
    pub fn key(&self) -> &'static str {
        match self {
            SweepParameter::PilotLength => "L",
            SweepParameter::P11 => "p11",
            SweepParameter::Antennas => "M",
        }
    }

    /// Value of this parameter in a result row.
    pub fn of_row(&self, row: &ResultRow) -> f64 {
        match self {
            SweepParameter::PilotLength => row.l as f64,
            SweepParameter::P11 => row.p11,
            SweepParameter::Antennas => row.m as f64,
        }
    }
}

impl fmt::Display for SweepParameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for SweepParameter {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "L" | "pilot_length" => Ok(SweepParameter::PilotLength),
            "p11" => Ok(SweepParameter::P11),
            "M" | "antennas" => Ok(SweepParameter::Antennas),
            _ => Err(Error::invalid("sweep parameter", s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
    pub base: SystemConfig,
    pub modes: Vec<SiMode>,
    pub trials: usize,
    pub calibration_trials: usize,
    pub calibrate: bool,
}

impl SweepSpec {
    pub const DEFAULT_PILOT_LENGTHS: [f64; 5] = [60.0, 80.0, 100.0, 120.0, 140.0];
    pub const DEFAULT_P11: [f64; 6] = [0.2, 0.4, 0.6, 0.75, 0.9, 1.0];

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::invalid("values", "sweep needs at least one value"));
        }
        if self.modes.is_empty() {
            return Err(Error::invalid("modes", "at least one SI mode is required"));
        }
        if self.trials == 0 {
            return Err(Error::invalid("trials", "must be positive"));
        }
        if self.calibrate && self.calibration_trials == 0 {
            return Err(Error::invalid("calibration_trials", "must be positive when calibrating"));
        }
        Ok(())
    }

    /// Scenario for one swept value. A `p11` sweep keeps the base marginal
    /// activity probability fixed and solves for `p01`.
    pub fn config_for(&self, value: f64) -> Result<SystemConfig> {
        let mut cfg = self.base.clone();
        match self.parameter {
            SweepParameter::PilotLength => cfg.pilot_len = positive_int("L", value)?,
            SweepParameter::Antennas => cfg.antennas = positive_int("M", value)?,
            SweepParameter::P11 => {
                let pa = self.base.activity.active_probability();
                cfg.activity = MarkovActivityModel::with_active_probability(pa, value)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn positive_int(name: &'static str, v: f64) -> Result<usize> {
    if v >= 1.0 && v.fract() == 0.0 {
        Ok(v as usize)
    } else {
        Err(Error::invalid(name, format!("{v} is not a positive integer")))
    }
}

/// One line of the results table.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub mode: String,
    pub n: usize,
    pub l: usize,
    pub m: usize,
    pub t: usize,
    pub p01: f64,
    pub p11: f64,
    pub snr_db: f64,
    pub trials: usize,
    pub mdr: f64,
    pub far: f64,
    pub nmse_db: f64,
    pub base_threshold: f64,
    pub wall_time_seconds: f64,
}

/// Per-mode outcome at one sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSummary {
    pub mode: SiMode,
    pub base_threshold: f64,
    pub calibration: Option<Calibration>,
    pub pooled: FrameMetrics,
    /// Pooled over the frames of each evaluation trial, in trial order.
    pub per_trial: Vec<FrameMetrics>,
    pub wall_time: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointResult {
    pub config: SystemConfig,
    pub modes: Vec<ModeSummary>,
}

impl PointResult {
    pub fn mode(&self, mode: SiMode) -> Option<&ModeSummary> {
        self.modes.iter().find(|m| m.mode == mode)
    }

    pub fn rows(&self) -> Vec<ResultRow> {
        let c = &self.config;
        self.modes
            .iter()
            .map(|s| ResultRow {
                mode: s.mode.label(),
                n: c.devices,
                l: c.pilot_len,
                m: c.antennas,
                t: c.frames,
                p01: c.activity.p01(),
                p11: c.activity.p11(),
                snr_db: c.snr_db(),
                trials: s.per_trial.len(),
                mdr: s.pooled.mdr(),
                far: s.pooled.far(),
                nmse_db: s.pooled.nmse_db(),
                base_threshold: s.base_threshold,
                wall_time_seconds: s.wall_time.as_secs_f64(),
            })
            .collect()
    }
}

/// Converged output of one mode on one trial, before thresholding.
#[derive(Debug, Clone)]
pub struct ModeTrial {
    pub detection: Vec<DetectionInputs>,
    /// Estimation error and signal energies (detection counts left empty).
    pub estimation: FrameMetrics,
    pub elapsed: Duration,
}

impl ModeTrial {
    pub fn metrics(&self, base_threshold: f64) -> FrameMetrics {
        let mut m = self.estimation;
        for f in &self.detection {
            let c = f.counts(base_threshold);
            m.active += c.active;
            m.inactive += c.inactive;
            m.missed += c.missed;
            m.false_alarms += c.false_alarms;
        }
        m
    }
}

fn summarize(
    res: &FramePipelineResult,
    scenario: &crate::model::ScenarioRealization,
    beta: f64,
    elapsed: Duration,
) -> Result<ModeTrial> {
    let mut detection = Vec::with_capacity(res.frames.len());
    let mut estimation = FrameMetrics::default();
    for (t, f) in res.frames.iter().enumerate() {
        detection.push(DetectionInputs::new(&f.state, &f.side_info, &res.prior, beta, &scenario.activity[t])?);
        let truth = &scenario.activity[t];
        let mut m = frame_metrics(truth, &scenario.effective[t], truth, &f.state.estimate)?;
        m.active = 0;
        m.inactive = 0;
        m.missed = 0;
        m.false_alarms = 0;
        m.frames_without_actives = truth.iter().all(|b| !b) as u64;
        estimation += m;
    }
    Ok(ModeTrial {
        detection,
        estimation,
        elapsed,
    })
}

/// Runs every mode on the scenario drawn from `config` (its seed included).
/// SI-free runs are shared between `NoSi` and the coarse runs of the
/// double-sided modes.
pub fn run_trial(config: &SystemConfig, modes: &[SiMode]) -> Result<Vec<ModeTrial>> {
    let scenario = generate_scenario(config);
    let pipeline = FramePipeline::new(&scenario, PipelineParams::from_system(config));
    let needs_plain = modes
        .iter()
        .any(|m| matches!(m, SiMode::NoSi | SiMode::Dsi | SiMode::GeneralizedDsi { .. }));

    let start = Instant::now();
    let plain: Option<FramePipelineResult> = if needs_plain { Some(pipeline.run(SiMode::NoSi)?) } else { None };
    let plain_time = start.elapsed();
    let plain_states: Option<Vec<AmpRunState>> =
        plain.as_ref().map(|p| p.frames.iter().map(|f| f.state.clone()).collect());

    modes
        .iter()
        .map(|&mode| {
            let start = Instant::now();
            let res = match (mode, &plain, &plain_states) {
                (SiMode::NoSi, Some(p), _) => p.clone(),
                (SiMode::Dsi | SiMode::GeneralizedDsi { .. }, _, Some(states)) => {
                    pipeline.run_with_coarse(mode, states)?
                }
                _ => pipeline.run(mode)?,
            };
            let mut elapsed = start.elapsed();
            if needs_plain && matches!(mode, SiMode::NoSi | SiMode::Dsi | SiMode::GeneralizedDsi { .. }) {
                elapsed += plain_time;
            }
            summarize(&res, &scenario, config.beta, elapsed)
        })
        .collect()
}

fn run_trials(config: &SystemConfig, modes: &[SiMode], domain: u64, count: usize) -> Result<Vec<Vec<ModeTrial>>> {
    (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let seed = trial_seed(config.seed, domain, i);
            let cfg = SystemConfig { seed, ..config.clone() };
            run_trial(&cfg, modes).map_err(|e| Error::Trial {
                seed,
                source: Box::new(e),
            })
        })
        .collect()
}

/// Calibrates (optionally) and evaluates every mode at one configuration.
pub fn run_point(
    config: &SystemConfig,
    modes: &[SiMode],
    trials: usize,
    calibration_trials: usize,
    calibrate: bool,
) -> Result<PointResult> {
    config.validate()?;
    let mut thresholds = vec![(0.0, None); modes.len()];
    let mut calib_time = vec![Duration::ZERO; modes.len()];
    if calibrate {
        let calib = run_trials(config, modes, CALIBRATION_DOMAIN, calibration_trials)?;
        for (k, slot) in thresholds.iter_mut().enumerate() {
            let inputs: Vec<DetectionInputs> = calib.iter().flat_map(|t| t[k].detection.iter().cloned()).collect();
            let cal = calibrate_equal_rates(
                |th| Ok(pooled_rates(&inputs, th)),
                CALIBRATION_BOUNDS.0,
                CALIBRATION_BOUNDS.1,
            )?;
            *slot = (cal.base_threshold, Some(cal));
            calib_time[k] = calib.iter().map(|t| t[k].elapsed).sum();
        }
    }

    let eval = run_trials(config, modes, EVAL_DOMAIN, trials)?;
    let summaries = modes
        .iter()
        .enumerate()
        .map(|(k, &mode)| {
            let (th, cal) = thresholds[k];
            let per_trial: Vec<FrameMetrics> = eval.iter().map(|t| t[k].metrics(th)).collect();
            let mut pooled = FrameMetrics::default();
            for m in &per_trial {
                pooled += *m;
            }
            ModeSummary {
                mode,
                base_threshold: th,
                calibration: cal,
                pooled,
                per_trial,
                wall_time: calib_time[k] + eval.iter().map(|t| t[k].elapsed).sum::<Duration>(),
            }
        })
        .collect();
    Ok(PointResult {
        config: config.clone(),
        modes: summaries,
    })
}

pub fn run_sweep_points(spec: &SweepSpec) -> Result<Vec<PointResult>> {
    spec.validate()?;
    spec.values
        .iter()
        .map(|&v| {
            let cfg = spec.config_for(v)?;
            run_point(&cfg, &spec.modes, spec.trials, spec.calibration_trials, spec.calibrate)
        })
        .collect()
}

/// One row per (swept value, mode), in sweep-value then mode order.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<ResultRow>> {
    Ok(run_sweep_points(spec)?.iter().flat_map(PointResult::rows).collect())
}

/// Formats with 6 significant digits, `%g` style.
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        let fixed = format!("{x:.decimals$}");
        if fixed.contains('.') {
            fixed.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            fixed
        }
    } else {
        let mantissa = if mantissa.contains('.') {
            mantissa.trim_end_matches('0').trim_end_matches('.')
        } else {
            mantissa
        };
        format!("{mantissa}e{exp}")
    }
}

fn row_fields(r: &ResultRow) -> [String; 14] {
    [
        r.mode.clone(),
        r.n.to_string(),
        r.l.to_string(),
        r.m.to_string(),
        r.t.to_string(),
        format_sig6(r.p01),
        format_sig6(r.p11),
        format_sig6(r.snr_db),
        r.trials.to_string(),
        format_sig6(r.mdr),
        format_sig6(r.far),
        format_sig6(r.nmse_db),
        format_sig6(r.base_threshold),
        format_sig6(r.wall_time_seconds),
    ]
}

pub fn write_csv<W: Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(CSV_HEADER.split(','))?;
    for r in rows {
        w.write_record(row_fields(r))?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_csv(rows: &[ResultRow], path: impl AsRef<Path>) -> Result<()> {
    let file = fs::File::create(path)?;
    write_csv(rows, std::io::BufWriter::new(file))
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<ResultRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != CSV_HEADER {
        return Err(Error::Config(format!("unexpected CSV header `{}`", header.join(","))));
    }
    let num = |s: &str| -> Result<f64> { s.parse::<f64>().map_err(|_| Error::Config(format!("bad number `{s}`"))) };
    let int = |s: &str| -> Result<usize> { s.parse::<usize>().map_err(|_| Error::Config(format!("bad integer `{s}`"))) };
    rdr.records()
        .map(|rec| {
            let r = rec?;
            Ok(ResultRow {
                mode: r[0].to_string(),
                n: int(&r[1])?,
                l: int(&r[2])?,
                m: int(&r[3])?,
                t: int(&r[4])?,
                p01: num(&r[5])?,
                p11: num(&r[6])?,
                snr_db: num(&r[7])?,
                trials: int(&r[8])?,
                mdr: num(&r[9])?,
                far: num(&r[10])?,
                nmse_db: num(&r[11])?,
                base_threshold: num(&r[12])?,
                wall_time_seconds: num(&r[13])?,
            })
        })
        .collect()
}

/// Writes `<param>_mdr_<mode>.dat` and `<param>_nmse_db_<mode>.dat` series
/// (`x y` per line, x ascending) for every mode in `rows`.
pub fn emit_plotdata(rows: &[ResultRow], parameter: SweepParameter, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut modes: Vec<&str> = Vec::new();
    for r in rows {
        if !modes.contains(&r.mode.as_str()) {
            modes.push(&r.mode);
        }
    }
    let mut written = Vec::new();
    for mode in modes {
        let mut series: Vec<&ResultRow> = rows.iter().filter(|r| r.mode == mode).collect();
        series.sort_by(|a, b| parameter.of_row(a).total_cmp(&parameter.of_row(b)));
        for (metric, value) in [("mdr", (|r: &ResultRow| r.mdr) as fn(&ResultRow) -> f64), ("nmse_db", |r| r.nmse_db)] {
            let path = dir.join(format!("{}_{}_{}.dat", parameter.key(), metric, mode));
            let mut text = String::new();
            for r in &series {
                text.push_str(&format!("{} {}\n", format_sig6(parameter.of_row(r)), format_sig6(value(r))));
            }
            fs::write(&path, text)?;
            written.push(path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig6_formatting() {
        assert_eq!(format_sig6(0.0), "0");
        assert_eq!(format_sig6(100.0), "100");
        assert_eq!(format_sig6(0.0625), "0.0625");
        assert_eq!(format_sig6(1.0 / 3.0), "0.333333");
        assert_eq!(format_sig6(-10.000000000000002), "-10");
        assert_eq!(format_sig6(123456789.0), "1.23457e8");
        assert_eq!(format_sig6(1.5e-7), "1.5e-7");
        assert_eq!(format_sig6(999999.5), "1e6");
        for x in [0.123456789f64, -7.77777777, 12345.678, 3.0e-4] {
            let back: f64 = format_sig6(x).parse().unwrap();
            assert!((back - x).abs() <= 5e-6 * x.abs());
        }
    }

    #[test]
    fn trial_seeds_are_distinct() {
        let mut seen = std::collections::HashSet::new();
        for d in 0..2 {
            for i in 0..1000 {
                assert!(seen.insert(trial_seed(42, d, i)));
            }
        }
    }

    #[test]
    fn p11_sweep_keeps_marginal() {
        let spec = SweepSpec {
            parameter: SweepParameter::P11,
            values: SweepSpec::DEFAULT_P11.to_vec(),
            base: SystemConfig::default(),
            modes: vec![SiMode::Dsi],
            trials: 1,
            calibration_trials: 1,
            calibrate: false,
        };
        let cfg = spec.config_for(0.2).unwrap();
        assert_eq!(cfg.activity.p01(), cfg.activity.p11());
        let cfg = spec.config_for(0.75).unwrap();
        assert!((cfg.activity.p01() - 1.0 / 16.0).abs() < 1e-15);
        for &v in &spec.values {
            let cfg = spec.config_for(v).unwrap();
            let (p01, p11) = (cfg.activity.p01(), cfg.activity.p11());
            if p11 < 1.0 {
                assert!((p01 / (1.0 - p11 + p01) - 0.2).abs() <= 1e-12);
            } else {
                assert_eq!(p01, 0.0);
            }
            assert!((cfg.activity.active_probability() - 0.2).abs() <= 1e-12);
        }
    }

    #[test]
    fn csv_header_only() {
        let mut buf = Vec::new();
        write_csv(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{CSV_HEADER}\n"));
    }

    fn small_spec() -> SweepSpec {
        let base = SystemConfig {
            devices: 40,
            pilot_len: 20,
            antennas: 2,
            frames: 4,
            seed: 9,
            ..SystemConfig::default()
        }
        .with_snr_db(5.0);
        SweepSpec {
            parameter: SweepParameter::PilotLength,
            values: vec![24.0, 16.0],
            base,
            modes: vec![SiMode::NoSi, SiMode::Dsi, SiMode::PerfectSi],
            trials: 3,
            calibration_trials: 2,
            calibrate: true,
        }
    }

    fn strip_time(rows: &[ResultRow]) -> Vec<ResultRow> {
        rows.iter()
            .map(|r| ResultRow {
                wall_time_seconds: 0.0,
                ..r.clone()
            })
            .collect()
    }

    #[test]
    fn sweep_is_deterministic_and_worker_independent() {
        let spec = small_spec();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| run_sweep(&spec)).unwrap();
        let b = four.install(|| run_sweep(&spec)).unwrap();
        assert_eq!(strip_time(&a), strip_time(&b));
        assert_eq!(a.len(), 6);
        assert_eq!(a[0].l, 24);
        assert_eq!(a[3].mode, "NoSI");
    }

    #[test]
    fn csv_round_trip_and_plot_data() {
        let spec = small_spec();
        let rows = run_sweep(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        emit_csv(&rows, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(CSV_HEADER));
        assert!(!text.contains('\r'));
        let back = read_csv(&path).unwrap();
        assert_eq!(back.len(), rows.len());
        for (a, b) in back.iter().zip(&rows) {
            assert_eq!(a.mode, b.mode);
            assert_eq!((a.n, a.l, a.m, a.t, a.trials), (b.n, b.l, b.m, b.t, b.trials));
            assert_eq!(format_sig6(a.mdr), format_sig6(b.mdr));
            assert_eq!(format_sig6(a.nmse_db), format_sig6(b.nmse_db));
        }

        let direct = dir.path().join("direct");
        let regen = dir.path().join("regen");
        let files = emit_plotdata(&rows, spec.parameter, &direct).unwrap();
        emit_plotdata(&back, spec.parameter, &regen).unwrap();
        assert_eq!(files.len(), 6);
        for f in files {
            let name = f.file_name().unwrap();
            assert_eq!(fs::read(&f).unwrap(), fs::read(regen.join(name)).unwrap());
        }
        let mdr = fs::read_to_string(direct.join("L_mdr_DSI.dat")).unwrap();
        let xs: Vec<&str> = mdr.lines().map(|l| l.split(' ').next().unwrap()).collect();
        assert_eq!(xs, ["16", "24"]);
    }

    #[test]
    fn calibrated_thresholds_are_recorded() {
        let spec = small_spec();
        let pts = run_sweep_points(&spec).unwrap();
        for p in &pts {
            for m in &p.modes {
                let cal = m.calibration.expect("calibrated");
                assert_eq!(cal.base_threshold, m.base_threshold);
                assert_eq!(m.per_trial.len(), 3);
                assert_eq!(m.pooled.frames, 12);
            }
        }
    }

    #[test]
    fn sweep_rejects_bad_values() {
        let mut spec = small_spec();
        spec.values = vec![20.5];
        assert!(run_sweep(&spec).is_err());
        spec.values = vec![];
        assert!(run_sweep(&spec).is_err());
    }
}
