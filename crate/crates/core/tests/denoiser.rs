mod common;

use common::*;
use dsiamp::amp::{denoise_row, shrinkage_multiplier, SiEntry};
use dsiamp::model::complex_gaussian;
use dsiamp::{denoise_dsi, denoise_generalized, DenoiserParams, Illr, MarkovActivityModel, PatternTable, C64};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn dsi_matches_enumeration_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let worst = oracle_check_dsi(&mut rng, 120);
    assert!(worst <= 1e-10, "max relative error {worst:e}");
}

#[test]
fn generalized_matches_enumeration_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let worst = oracle_check_generalized(&mut rng, 120);
    assert!(worst <= 1e-10, "max relative error {worst:e}");
}

#[test]
fn jacobians_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let dsi = jacobian_check(&mut rng, 100, false);
    let gen = jacobian_check(&mut rng, 100, true);
    assert!(dsi <= 1e-6, "chain denoiser {dsi:e}");
    assert!(gen <= 1e-6, "table denoiser {gen:e}");
}

#[test]
fn markov_table_reduces_to_dsi() {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    for _ in 0..200 {
        let model = random_chain(&mut rng);
        let table = PatternTable::markov(&model, 1, 1).unwrap();
        let params = DenoiserParams::new(rng.gen_range(0.5..2.0), rng.gen_range(0.2..2.0)).unwrap();
        let m = rng.gen_range(1..=4);
        let r: Vec<C64> = (0..m).map(|_| complex_gaussian(&mut rng, 1.5)).collect();
        let (a, b) = (Illr::from_ln(rng.gen_range(-8.0..8.0)), Illr::from_ln(rng.gen_range(-8.0..8.0)));
        let si = SiEntry { left: &[a], right: &[b] };
        let x = denoise_dsi(&r, &params, &model, si).unwrap();
        let y = denoise_generalized(&r, &params, si, &table).unwrap();
        assert!(rel_err(&y, &x) <= 1e-13, "{}", rel_err(&y, &x));
    }
}

#[test]
fn all_active_pattern_gives_linear_estimate() {
    let mut probs = vec![0.0; 32];
    probs[31] = 1.0;
    let table = PatternTable::new(5, 2, probs).unwrap();
    let params = DenoiserParams::new(1.0, 0.5).unwrap();
    let r = [C64::new(0.3, -1.0), C64::new(2.0, 0.5)];
    let left = [Illr::from_ln(3.0), Illr::from_ln(-1.0)];
    let right = [Illr::from_ln(0.2), Illr::UNINFORMATIVE];
    let y = denoise_generalized(&r, &params, SiEntry { left: &left, right: &right }, &table).unwrap();
    for (a, b) in y.iter().zip(&r) {
        assert!((a - b * params.gain()).norm() < 1e-15);
    }
}

#[test]
fn degenerate_prior_is_rejected() {
    let mut probs = vec![0.0; 8];
    probs[0] = 1.0;
    let table = PatternTable::new(3, 1, probs).unwrap();
    let params = DenoiserParams::new(1.0, 0.5).unwrap();
    let si = SiEntry {
        left: &[Illr::UNINFORMATIVE],
        right: &[Illr::UNINFORMATIVE],
    };
    assert!(matches!(
        denoise_generalized(&[C64::new(1.0, 0.0)], &params, si, &table),
        Err(dsiamp::Error::DegeneratePrior)
    ));
}

/// With inputs drawn from the decoupled model `r = x + sqrt(e) z`, the
/// error covariance of the denoiser is a scaled identity.
#[test]
fn error_covariance_is_scaled_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let (m, beta, e, pa) = (4usize, 1.0, 0.6, 0.2);
    let params = DenoiserParams::new(beta, e).unwrap();
    let odds = (1.0 - pa) / pa;
    let samples = 100_000;
    let mut qs = Vec::with_capacity(samples);
    for _ in 0..samples {
        let active = rng.gen::<f64>() < pa;
        let x: Vec<C64> = (0..m)
            .map(|_| if active { complex_gaussian(&mut rng, beta) } else { C64::new(0.0, 0.0) })
            .collect();
        let r: Vec<C64> = x.iter().map(|v| v + complex_gaussian(&mut rng, e)).collect();
        let est = denoise_row(&r, &params, f64::ln(odds));
        qs.push(est.iter().zip(&x).map(|(a, b)| a - b).collect::<Vec<C64>>());
    }
    // Covariance entries and their Monte Carlo standard errors.
    let mut diag = Vec::new();
    let mut diag_se = Vec::new();
    for j in 0..m {
        for k in 0..m {
            let prods: Vec<C64> = qs.iter().map(|q| q[j] * q[k].conj()).collect();
            let n = samples as f64;
            let mu = prods.iter().sum::<C64>() / n;
            let var = prods.iter().map(|p| (p - mu).norm_sqr()).sum::<f64>() / (n - 1.0);
            let se = (var / n).sqrt();
            if j == k {
                assert!(mu.im.abs() < 1e-12);
                diag.push(mu.re);
                diag_se.push(se);
            } else {
                assert!(mu.norm() <= 4.5 * se, "off-diagonal ({j},{k}) = {mu} with SE {se}");
            }
        }
    }
    let avg = mean(&diag);
    for (d, se) in diag.iter().zip(&diag_se) {
        assert!((d - avg).abs() <= 4.5 * se, "diagonal {diag:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn output_is_shrunk_copy_of_input(
        parts in prop::collection::vec(-4.0f64..4.0, 2..=8),
        beta in 0.1f64..3.0,
        e in 0.05f64..3.0,
        p01 in 0.01f64..0.99,
        p11 in 0.01f64..0.99,
        lp in -30.0f64..30.0,
        ln in -30.0f64..30.0,
    ) {
        let r: Vec<C64> = parts.chunks(2).map(|c| C64::new(c[0], *c.get(1).unwrap_or(&0.0))).collect();
        prop_assume!(norm(&r) > 1e-6);
        let model = MarkovActivityModel::new(p01, p11).unwrap();
        let params = DenoiserParams::new(beta, e).unwrap();
        let si = SiEntry { left: &[Illr::from_ln(lp)], right: &[Illr::from_ln(ln)] };
        let y = denoise_dsi(&r, &params, &model, si).unwrap();
        // colinear with a real, nonnegative factor
        let k = y.iter().zip(&r).map(|(a, b)| (a * b.conj()).re).sum::<f64>() / norm(&r).powi(2);
        for (a, b) in y.iter().zip(&r) {
            prop_assert!((a - b * k).norm() <= 1e-12 * norm(&r));
        }
        prop_assert!(k >= 0.0);
        prop_assert!(k <= params.gain() * (1.0 + 1e-15));
    }

    #[test]
    fn shrinkage_is_nondecreasing_in_energy(
        scale in 0.0f64..5.0,
        extra in 0.0f64..5.0,
        m in 1usize..5,
        beta in 0.1f64..3.0,
        e in 0.05f64..3.0,
        odds in -40.0f64..40.0,
    ) {
        let params = DenoiserParams::new(beta, e).unwrap();
        let small = vec![C64::new(scale, 0.0); m];
        let large = vec![C64::new(scale + extra, 0.0); m];
        prop_assert!(shrinkage_multiplier(&large, &params, odds) >= shrinkage_multiplier(&small, &params, odds));
    }
}
