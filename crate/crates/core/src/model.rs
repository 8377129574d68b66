//! Stochastic system model: Markov device activity, Gaussian pilots,
//! block-fading Rayleigh channels and the received pilot signal.
//!
//! Every random component is drawn from its own ChaCha stream derived from
//! the master seed, so any of them (e.g. the noise of one frame) can be
//! regenerated without replaying the others.

use std::fmt;
use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Deserialize;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Stationary active probability `p01 / (1 - p11 + p01)` of a two-state chain.
pub fn stationary_probability(p01: f64, p11: f64) -> Result<f64> {
    check_probability("p01", p01)?;
    check_probability("p11", p11)?;
    let denom = 1.0 - p11 + p01;
    if denom <= 0.0 {
        return Err(Error::DegenerateChain { p01, p11 });
    }
    Ok(p01 / denom)
}

fn check_probability(name: &'static str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(name, format!("{p} is not a probability")));
    }
    Ok(())
}

/// First-order two-state Markov chain for a device's activity over frames.
///
/// `p_active` is the marginal activity probability of every frame. For an
/// irreducible chain it is the stationary probability; for the identity
/// chain (`p01 = 0`, `p11 = 1`) every distribution is stationary and the
/// marginal must be supplied explicitly via [`MarkovActivityModel::frozen`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkovActivityModel {
    p01: f64,
    p11: f64,
    p_active: f64,
}

impl MarkovActivityModel {
    pub fn new(p01: f64, p11: f64) -> Result<Self> {
        let p_active = stationary_probability(p01, p11)?;
        Ok(Self { p01, p11, p_active })
    }

    /// Memoryless activity with probability `p` per frame.
    pub fn independent(p: f64) -> Result<Self> {
        Self::new(p, p)
    }

    /// Identity chain: each device keeps its initial state forever.
    pub fn frozen(p_active: f64) -> Result<Self> {
        check_probability("p_a", p_active)?;
        Ok(Self {
            p01: 0.0,
            p11: 1.0,
            p_active,
        })
    }

    /// Chain with the given `p11` and marginal `p_a`, solving
    /// `p01 = p_a (1 - p11) / (1 - p_a)`.
    pub fn with_active_probability(p_active: f64, p11: f64) -> Result<Self> {
        check_probability("p_a", p_active)?;
        check_probability("p11", p11)?;
        if p11 == 1.0 {
            return Self::frozen(p_active);
        }
        if p_active >= 1.0 {
            return Err(Error::invalid("p_a", "must be below 1 when p11 < 1"));
        }
        // p11 = p_a is the independent chain; keep p01 == p11 exactly.
        let p01 = if p11 == p_active {
            p11
        } else {
            p_active * (1.0 - p11) / (1.0 - p_active)
        };
        if p01 > 1.0 {
            return Err(Error::invalid(
                "p11",
                format!("p_a = {p_active} is unreachable with p11 = {p11} (p01 = {p01} > 1)"),
            ));
        }
        Ok(Self {
            p01,
            p11,
            p_active,
        })
    }

    pub fn p01(&self) -> f64 {
        self.p01
    }

    pub fn p11(&self) -> f64 {
        self.p11
    }

    pub fn active_probability(&self) -> f64 {
        self.p_active
    }

    /// `Pr(next | prev)`.
    pub fn transition(&self, prev: bool, next: bool) -> f64 {
        let p_on = if prev { self.p11 } else { self.p01 };
        if next {
            p_on
        } else {
            1.0 - p_on
        }
    }

    pub fn marginal(&self, active: bool) -> f64 {
        if active {
            self.p_active
        } else {
            1.0 - self.p_active
        }
    }

    /// Draws one activity trajectory of length `frames`, started at stationarity.
    pub fn sample_trajectory<R: rand::Rng + ?Sized>(&self, frames: usize, rng: &mut R) -> Vec<bool> {
        let mut out = Vec::with_capacity(frames);
        let mut state = rng.gen::<f64>() < self.p_active;
        for t in 0..frames {
            if t > 0 {
                let p_on = if state { self.p11 } else { self.p01 };
                state = rng.gen::<f64>() < p_on;
            }
            out.push(state);
        }
        out
    }
}

/// Activity states of one device over a window of `width` frames.
///
/// Bit `k` is frame offset `k` from the window start; `code` stores them
/// most-significant first, so code `0b011` reads as pattern "011".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ActivityPattern {
    width: usize,
    code: u32,
}

impl ActivityPattern {
    pub const MAX_WIDTH: usize = 20;

    pub fn new(width: usize, code: u32) -> Result<Self> {
        if width == 0 || width > Self::MAX_WIDTH {
            return Err(Error::invalid("width", format!("{width} outside 1..={}", Self::MAX_WIDTH)));
        }
        if code >> width != 0 {
            return Err(Error::invalid("code", format!("{code:#b} wider than {width} bits")));
        }
        Ok(Self { width, code })
    }

    pub fn from_bits(bits: &[bool]) -> Result<Self> {
        let code = bits.iter().fold(0u32, |acc, &b| (acc << 1) | b as u32);
        Self::new(bits.len(), code)
    }

    /// All `2^width` patterns in code order.
    pub fn all(width: usize) -> impl Iterator<Item = ActivityPattern> {
        assert!((1..=Self::MAX_WIDTH).contains(&width), "pattern width {width}");
        (0..1u32 << width).map(move |code| ActivityPattern { width, code })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn code(&self) -> u32 {
        self.code
    }

    pub fn bit(&self, offset: usize) -> bool {
        debug_assert!(offset < self.width);
        (self.code >> (self.width - 1 - offset)) & 1 == 1
    }

    pub fn bits(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.width).map(|k| self.bit(k))
    }
}

impl fmt::Display for ActivityPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.bits() {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Occurrence probability of `pattern` under the stationary chain.
pub fn pattern_probability(model: &MarkovActivityModel, pattern: &ActivityPattern) -> f64 {
    let mut bits = pattern.bits();
    let first = bits.next().expect("pattern width is at least 1");
    let mut prob = model.marginal(first);
    let mut prev = first;
    for b in bits {
        prob *= model.transition(prev, b);
        prev = b;
    }
    prob
}

/// Prior probabilities `u_s` over all activity patterns of a window, with
/// one offset marked as the target frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternTable {
    width: usize,
    target: usize,
    probs: Vec<f64>,
}

impl PatternTable {
    pub fn new(width: usize, target: usize, probs: Vec<f64>) -> Result<Self> {
        if width == 0 || width > ActivityPattern::MAX_WIDTH {
            return Err(Error::invalid("width", width.to_string()));
        }
        if target >= width {
            return Err(Error::invalid("target", format!("{target} not below width {width}")));
        }
        if probs.len() != 1 << width {
            return Err(Error::dims("pattern table", 1usize << width, probs.len()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::invalid("probs", "entries must be finite and nonnegative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("probs", format!("sum to {total}, not 1")));
        }
        Ok(Self {
            width,
            target,
            probs,
        })
    }

    /// Table for a window of `left` frames before and `right` frames after
    /// the target, under a first-order chain.
    pub fn markov(model: &MarkovActivityModel, left: usize, right: usize) -> Result<Self> {
        let width = left + 1 + right;
        if width > ActivityPattern::MAX_WIDTH {
            return Err(Error::invalid("width", width.to_string()));
        }
        let probs = ActivityPattern::all(width)
            .map(|p| pattern_probability(model, &p))
            .collect();
        Self::new(width, left, probs)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn target(&self) -> usize {
        self.target
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn iter(&self) -> impl Iterator<Item = (ActivityPattern, f64)> + '_ {
        ActivityPattern::all(self.width).zip(self.probs.iter().copied())
    }

    /// Marginal probability that the target frame is active.
    pub fn active_probability(&self) -> f64 {
        self.iter()
            .filter(|(p, _)| p.bit(self.target))
            .map(|(_, u)| u)
            .sum()
    }
}

/// Scenario parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    /// N
    pub devices: usize,
    /// L
    pub pilot_len: usize,
    /// M
    pub antennas: usize,
    /// T
    pub frames: usize,
    /// Large-scale gain shared by all devices after power control.
    pub beta: f64,
    pub noise_var: f64,
    pub activity: MarkovActivityModel,
    pub seed: u64,
    pub max_iters: usize,
    pub conv_tol: f64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            devices: 500,
            pilot_len: 100,
            antennas: 2,
            frames: 8,
            beta: 1.0,
            noise_var: noise_var_for_snr(1.0, -10.0),
            activity: MarkovActivityModel::new(1.0 / 16.0, 0.75).expect("valid default chain"),
            seed: 1,
            max_iters: 50,
            conv_tol: 1e-6,
        }
    }
}

/// Noise variance giving `snr_db = 10 log10(beta / noise_var)`.
pub fn noise_var_for_snr(beta: f64, snr_db: f64) -> f64 {
    beta / 10f64.powf(snr_db / 10.0)
}

impl SystemConfig {
    pub fn snr_db(&self) -> f64 {
        10.0 * (self.beta / self.noise_var).log10()
    }

    pub fn with_snr_db(mut self, snr_db: f64) -> Self {
        self.noise_var = noise_var_for_snr(self.beta, snr_db);
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("N", self.devices),
            ("L", self.pilot_len),
            ("M", self.antennas),
            ("T", self.frames),
            ("max_iters", self.max_iters),
        ] {
            if v == 0 {
                return Err(Error::invalid(name, "must be positive"));
            }
        }
        for (name, v) in [("beta", self.beta), ("noise_var", self.noise_var), ("conv_tol", self.conv_tol)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(name, format!("{v} must be positive and finite")));
            }
        }
        Ok(())
    }

    /// Parses a flat `key = value` configuration. Missing keys keep their
    /// defaults. Recognised keys: `N L M T beta noise_var snr_db p01 p11
    /// p_a seed max_iters conv_tol`.
    pub fn from_config_str(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut cfg = SystemConfig::default();
        if let Some(v) = raw.n {
            cfg.devices = v;
        }
        if let Some(v) = raw.l {
            cfg.pilot_len = v;
        }
        if let Some(v) = raw.m {
            cfg.antennas = v;
        }
        if let Some(v) = raw.t {
            cfg.frames = v;
        }
        if let Some(v) = raw.beta {
            cfg.beta = v;
        }
        match (raw.noise_var, raw.snr_db) {
            (Some(_), Some(_)) => {
                return Err(Error::Config("set either noise_var or snr_db, not both".into()));
            }
            (Some(v), None) => cfg.noise_var = v,
            (None, Some(snr)) => cfg.noise_var = noise_var_for_snr(cfg.beta, snr),
            (None, None) => {}
        }
        let p11 = raw.p11.unwrap_or(cfg.activity.p11());
        cfg.activity = match (raw.p01, raw.p_a) {
            (Some(_), Some(_)) => {
                return Err(Error::Config("set either p01 or p_a, not both".into()));
            }
            (Some(p01), None) => MarkovActivityModel::new(p01, p11)?,
            (None, Some(pa)) => MarkovActivityModel::with_active_probability(pa, p11)?,
            (None, None) => MarkovActivityModel::new(cfg.activity.p01(), p11)?,
        };
        if let Some(v) = raw.seed {
            cfg.seed = v;
        }
        if let Some(v) = raw.max_iters {
            cfg.max_iters = v;
        }
        if let Some(v) = raw.conv_tol {
            cfg.conv_tol = v;
        }
        if cfg.pilot_len >= cfg.devices {
            return Err(Error::invalid("L", "pilot length must be below the device count"));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_config_str(&text)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(rename = "N")]
    n: Option<usize>,
    #[serde(rename = "L")]
    l: Option<usize>,
    #[serde(rename = "M")]
    m: Option<usize>,
    #[serde(rename = "T")]
    t: Option<usize>,
    beta: Option<f64>,
    noise_var: Option<f64>,
    snr_db: Option<f64>,
    p01: Option<f64>,
    p11: Option<f64>,
    p_a: Option<f64>,
    seed: Option<u64>,
    max_iters: Option<usize>,
    conv_tol: Option<f64>,
}

/// One Monte Carlo draw of the whole system over `T` frames.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioRealization {
    /// L x N, entries CN(0, 1/L).
    pub pilot: Array2<C64>,
    /// activity[t][n]
    pub activity: Vec<Vec<bool>>,
    /// Per frame, N x M rows `sqrt(beta) g`.
    pub channels: Vec<Array2<C64>>,
    /// Per frame, channels with inactive rows zeroed.
    pub effective: Vec<Array2<C64>>,
    /// Per frame, L x M.
    pub received: Vec<Array2<C64>>,
    pub noise_var: f64,
}

impl ScenarioRealization {
    pub fn frames(&self) -> usize {
        self.received.len()
    }

    pub fn devices(&self) -> usize {
        self.pilot.ncols()
    }
}

#[derive(Clone, Copy)]
#[repr(u64)]
enum Stream {
    Pilot = 1,
    Activity = 2,
    Channel = 3,
    Noise = 4,
}

fn stream_rng(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 32) | index);
    rng
}

/// Draws `CN(0, var)`: real and imaginary parts i.i.d. `N(0, var/2)`.
pub fn complex_gaussian<R: rand::Rng + ?Sized>(rng: &mut R, var: f64) -> C64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(s * re, s * im)
}

fn gaussian_matrix(rows: usize, cols: usize, var: f64, rng: &mut ChaCha8Rng) -> Array2<C64> {
    Array2::from_shape_simple_fn((rows, cols), || complex_gaussian(rng, var))
}

/// Noise matrix of frame `t`, regenerated from the config seed.
pub fn frame_noise(config: &SystemConfig, t: usize) -> Array2<C64> {
    let mut rng = stream_rng(config.seed, Stream::Noise, t as u64);
    gaussian_matrix(config.pilot_len, config.antennas, config.noise_var, &mut rng)
}

pub fn generate_scenario(config: &SystemConfig) -> ScenarioRealization {
    let (n, l, m, frames) = (config.devices, config.pilot_len, config.antennas, config.frames);

    let mut rng = stream_rng(config.seed, Stream::Pilot, 0);
    let pilot = gaussian_matrix(l, n, 1.0 / l as f64, &mut rng);

    let mut rng = stream_rng(config.seed, Stream::Activity, 0);
    let per_device: Vec<Vec<bool>> = (0..n)
        .map(|_| config.activity.sample_trajectory(frames, &mut rng))
        .collect();
    let activity: Vec<Vec<bool>> = (0..frames)
        .map(|t| per_device.iter().map(|traj| traj[t]).collect())
        .collect();

    let mut channels = Vec::with_capacity(frames);
    let mut effective = Vec::with_capacity(frames);
    let mut received = Vec::with_capacity(frames);
    for (t, active) in activity.iter().enumerate() {
        let mut rng = stream_rng(config.seed, Stream::Channel, t as u64);
        let h = gaussian_matrix(n, m, config.beta, &mut rng);
        let mut x = h.clone();
        for (mut row, &on) in x.rows_mut().into_iter().zip(active) {
            if !on {
                row.fill(C64::new(0.0, 0.0));
            }
        }
        let y = pilot.dot(&x) + frame_noise(config, t);
        channels.push(h);
        effective.push(x);
        received.push(y);
    }

    ScenarioRealization {
        pilot,
        activity,
        channels,
        effective,
        received,
        noise_var: config.noise_var,
    }
}
