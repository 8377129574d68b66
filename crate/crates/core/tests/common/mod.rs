#![allow(dead_code)]

use dsiamp::amp::{denoise_row, SiEntry};
use dsiamp::model::complex_gaussian;
use dsiamp::{
    denoise_dsi, denoise_generalized, denoiser_jacobian, exact_pattern_posterior, exact_posterior_mean,
    ActivityPattern, DenoiserParams, Illr, MarkovActivityModel, PatternTable, WindowPrior, C64,
};
use ndarray::Array2;
use rand::Rng;

pub fn norm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn rel_err(a: &[C64], b: &[C64]) -> f64 {
    let d: Vec<C64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(b);
    if scale == 0.0 {
        norm(&d)
    } else {
        norm(&d) / scale
    }
}

pub fn random_chain<R: Rng>(rng: &mut R) -> MarkovActivityModel {
    loop {
        let p01 = rng.gen_range(0.02..0.98);
        let p11 = rng.gen_range(0.02..0.98);
        if let Ok(m) = MarkovActivityModel::new(p01, p11) {
            return m;
        }
    }
}

/// Pattern probabilities with a wide spread of magnitudes.
pub fn random_table<R: Rng>(rng: &mut R, width: usize, target: usize) -> PatternTable {
    let raw: Vec<f64> = (0..1usize << width).map(|_| rng.gen::<f64>().powi(3) + 1e-6).collect();
    let total: f64 = raw.iter().sum();
    PatternTable::new(width, target, raw.iter().map(|p| p / total).collect()).unwrap()
}

pub fn sample_pattern<R: Rng>(rng: &mut R, table: &PatternTable) -> ActivityPattern {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (pat, p) in table.iter() {
        acc += p;
        if u < acc {
            return pat;
        }
    }
    ActivityPattern::new(table.width(), (1u32 << table.width()) - 1).unwrap()
}

/// One window of matched-filter rows drawn from the decoupled model, with
/// per-frame state variances.
pub struct WindowDraw {
    pub rows: Vec<Vec<C64>>,
    pub params: Vec<DenoiserParams>,
    pub beta: f64,
    pub target: usize,
}

impl WindowDraw {
    pub fn new<R: Rng>(rng: &mut R, table: &PatternTable, m: usize) -> Self {
        let beta = rng.gen_range(0.5..2.0);
        let pat = sample_pattern(rng, table);
        let mut rows = Vec::new();
        let mut params = Vec::new();
        for k in 0..table.width() {
            let e = rng.gen_range(0.2..2.0);
            let var = if pat.bit(k) { e + beta } else { e };
            rows.push((0..m).map(|_| complex_gaussian(rng, var)).collect());
            params.push(DenoiserParams::new(beta, e).unwrap());
        }
        Self {
            rows,
            params,
            beta,
            target: table.target(),
        }
    }

    fn illr(&self, k: usize) -> Illr {
        let energy: f64 = self.rows[k].iter().map(|z| z.norm_sqr()).sum();
        Illr::from_ln(self.params[k].log_inverse_llr(energy, self.rows[k].len()))
    }

    /// (left nearest first, right nearest first)
    pub fn side_info(&self) -> (Vec<Illr>, Vec<Illr>) {
        let left = (0..self.target).rev().map(|k| self.illr(k)).collect();
        let right = (self.target + 1..self.rows.len()).map(|k| self.illr(k)).collect();
        (left, right)
    }

    pub fn target_row(&self) -> &[C64] {
        &self.rows[self.target]
    }

    pub fn target_params(&self) -> &DenoiserParams {
        &self.params[self.target]
    }

    pub fn oracle_mean(&self, table: &PatternTable) -> Vec<C64> {
        let refs: Vec<&[C64]> = self.rows.iter().map(Vec::as_slice).collect();
        let vars: Vec<f64> = self.params.iter().map(|p| p.state_var).collect();
        let post = exact_pattern_posterior(&refs, &vars, table, self.beta).unwrap();
        exact_posterior_mean(&post, self.target_row(), self.target_params().state_var, self.beta)
    }
}

pub const ORACLE_ANTENNAS: [usize; 3] = [1, 2, 4];
pub const ORACLE_WIDTHS: [usize; 2] = [3, 5];

/// Largest relative error of `denoise_dsi` against the enumeration oracle
/// over `draws` random windows, cycling through antenna counts and widths.
pub fn oracle_check_dsi<R: Rng>(rng: &mut R, draws: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..draws {
        let m = ORACLE_ANTENNAS[i % 3];
        let w = ORACLE_WIDTHS[(i / 3) % 2];
        let side = (w - 1) / 2;
        let model = random_chain(rng);
        let table = PatternTable::markov(&model, side, side).unwrap();
        let draw = WindowDraw::new(rng, &table, m);
        let (l, r) = draw.side_info();
        let si = SiEntry { left: &l, right: &r };
        let got = denoise_dsi(draw.target_row(), draw.target_params(), &model, si).unwrap();
        worst = worst.max(rel_err(&got, &draw.oracle_mean(&table)));
    }
    worst
}

/// As [`oracle_check_dsi`] for `denoise_generalized` with random pattern
/// probabilities and a random target offset.
pub fn oracle_check_generalized<R: Rng>(rng: &mut R, draws: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..draws {
        let m = ORACLE_ANTENNAS[i % 3];
        let w = ORACLE_WIDTHS[(i / 3) % 2];
        let target = rng.gen_range(0..w);
        let table = random_table(rng, w, target);
        let draw = WindowDraw::new(rng, &table, m);
        let (l, r) = draw.side_info();
        let si = SiEntry { left: &l, right: &r };
        let got = denoise_generalized(draw.target_row(), draw.target_params(), si, &table).unwrap();
        worst = worst.max(rel_err(&got, &draw.oracle_mean(&table)));
    }
    worst
}

/// Wirtinger derivative `d eta_k / d r_j` by central differences on the real
/// and imaginary parts: `(d/dx - i d/dy) / 2`.
pub fn finite_difference_jacobian(eta: impl Fn(&[C64]) -> Vec<C64>, r: &[C64], h: f64) -> Array2<C64> {
    let m = r.len();
    let mut jac = Array2::zeros((m, m));
    for j in 0..m {
        let shifted = |delta: C64| {
            let mut v = r.to_vec();
            v[j] += delta;
            eta(&v)
        };
        let (xp, xm) = (shifted(C64::new(h, 0.0)), shifted(C64::new(-h, 0.0)));
        let (yp, ym) = (shifted(C64::new(0.0, h)), shifted(C64::new(0.0, -h)));
        for k in 0..m {
            let dx = (xp[k] - xm[k]) / (2.0 * h);
            let dy = (yp[k] - ym[k]) / (2.0 * h);
            jac[[j, k]] = (dx - C64::i() * dy) * 0.5;
        }
    }
    jac
}

pub fn frob_rel(a: &Array2<C64>, b: &Array2<C64>) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
    let scale: f64 = b.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    diff / scale
}

fn random_illr<R: Rng>(rng: &mut R) -> Illr {
    Illr::from_ln(rng.gen_range(-6.0..6.0))
}

/// Largest relative Frobenius error between the analytic Jacobian and
/// central differences over `draws` random inputs, for the chain denoiser
/// (`generalized = false`) or a random pattern-table prior.
pub fn jacobian_check<R: Rng>(rng: &mut R, draws: usize, generalized: bool) -> f64 {
    const STEP: f64 = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..draws {
        let m = rng.gen_range(1..=4);
        let beta = rng.gen_range(0.5..2.0);
        let e = rng.gen_range(0.2..2.0);
        let params = DenoiserParams::new(beta, e).unwrap();
        let (left_len, right_len) = if generalized {
            (rng.gen_range(0..=2), rng.gen_range(0..=2))
        } else {
            (1, 1)
        };
        let left: Vec<Illr> = (0..left_len).map(|_| random_illr(rng)).collect();
        let right: Vec<Illr> = (0..right_len).map(|_| random_illr(rng)).collect();
        let si = SiEntry { left: &left, right: &right };
        let prior = if generalized {
            WindowPrior::Patterns(random_table(rng, left_len + 1 + right_len, left_len))
        } else {
            WindowPrior::Markov(random_chain(rng))
        };
        // Rows near the decision boundary exercise the curvature term.
        let var = e + beta * rng.gen::<f64>();
        let r: Vec<C64> = (0..m).map(|_| complex_gaussian(rng, var)).collect();

        let analytic = denoiser_jacobian(&r, &params, &prior, si).unwrap();
        let numeric = match &prior {
            WindowPrior::Markov(model) => {
                finite_difference_jacobian(|v| denoise_dsi(v, &params, model, si).unwrap(), &r, STEP)
            }
            WindowPrior::Patterns(table) => {
                finite_difference_jacobian(|v| denoise_generalized(v, &params, si, table).unwrap(), &r, STEP)
            }
        };
        worst = worst.max(frob_rel(&numeric, &analytic));
    }
    worst
}

/// State evolution `e <- sigma^2 + (N/L) E|eta(x + sqrt(e) z) - x|^2 / M` of
/// the SI-free denoiser, with the expectation replaced by `samples` draws.
pub fn state_evolution<R: Rng>(
    rng: &mut R,
    devices: usize,
    pilot_len: usize,
    antennas: usize,
    beta: f64,
    noise_var: f64,
    p_active: f64,
    iterations: usize,
    samples: usize,
) -> Vec<f64> {
    let ratio = devices as f64 / pilot_len as f64;
    let odds = (1.0 - p_active).ln() - p_active.ln();
    let mut e = noise_var + ratio * p_active * beta;
    let mut traj = vec![e];
    for _ in 1..iterations {
        let params = DenoiserParams::new(beta, e).unwrap();
        let mut mse = 0.0;
        for _ in 0..samples {
            let active = rng.gen::<f64>() < p_active;
            let x: Vec<C64> = (0..antennas)
                .map(|_| if active { complex_gaussian(rng, beta) } else { C64::new(0.0, 0.0) })
                .collect();
            let r: Vec<C64> = x.iter().map(|xi| xi + complex_gaussian(rng, e)).collect();
            let est = denoise_row(&r, &params, odds);
            mse += est.iter().zip(&x).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>();
        }
        e = noise_var + ratio * mse / (samples * antennas) as f64;
        traj.push(e);
    }
    traj
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Standard error of the mean.
pub fn std_err(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mu = mean(xs);
    (xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (n - 1.0) / n).sqrt()
}

/// Mean and standard error of `a_i - b_i`.
pub fn paired(a: &[f64], b: &[f64]) -> (f64, f64) {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    (mean(&d), std_err(&d))
}
