use ladder_core::decoder::GKind;
use ladder_core::numerics::Rng;
use ladder_core::oracle::{empirical_best_linear, fit_g_to_oracle, posterior_mean, posterior_mean_mixture, MixtureComponent, Prior1D, USource};

fn normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let d = (x - mean) / sd;
    (-0.5 * d * d).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
}

/// `∫ z p(z) p(z̃|z) dz / ∫ p(z) p(z̃|z) dz` by the trapezoid rule on [−5, 5].
fn quadrature(z_tilde: f64, comps: &[MixtureComponent], sigma_n: f64) -> f64 {
    let n = 100_000;
    let h = 10.0 / (n - 1) as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..n {
        let z = -5.0 + i as f64 * h;
        let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
        let prior: f64 = comps.iter().map(|c| c.weight * normal_pdf(z, c.mean, c.std)).sum();
        let p = w * prior * normal_pdf(z_tilde, z, sigma_n);
        num += z * p;
        den += p;
    }
    num / den
}

fn bimodal() -> Vec<MixtureComponent> {
    Prior1D::symmetric_bimodal(1.0, 0.2).unwrap().components()
}

#[test]
fn mixture_matches_quadrature_at_reference_point() {
    let c = bimodal();
    let exact = posterior_mean_mixture(1.5, &c, 0.5).unwrap();
    assert!((exact - quadrature(1.5, &c, 0.5)).abs() < 1e-6);
}

#[test]
fn mixture_matches_quadrature_on_grid() {
    let c = bimodal();
    let mut worst: f64 = 0.0;
    for i in 0..201 {
        let zt = -3.0 + 0.03 * i as f64;
        worst = worst.max((posterior_mean_mixture(zt, &c, 0.5).unwrap() - quadrature(zt, &c, 0.5)).abs());
    }
    assert!(worst < 1e-6, "worst {worst:e}");
}

#[test]
fn mixture_pulls_toward_modes() {
    let c = bimodal();
    for mode in [1.0, -1.0] {
        let below = mode - 0.1;
        let above = mode + 0.1;
        assert!(posterior_mean_mixture(below, &c, 0.5).unwrap() - below > 0.0);
        assert!(posterior_mean_mixture(above, &c, 0.5).unwrap() - above < 0.0);
    }
}

#[test]
fn best_linear_slopes_match_formula() {
    let mut rng = Rng::new(77);
    for (sz, sn, want) in [(1.0, 1.0, 0.5), (2.0, 1.0, 0.8), (1.0, 2.0, 0.2)] {
        let prior = Prior1D::gaussian(0.0, sz).unwrap();
        let fit = empirical_best_linear(&prior, sn, 100_000, &mut rng).unwrap();
        assert!((fit.slope - want).abs() < 0.01, "({sz},{sn}) -> {}", fit.slope);
    }
}

#[test]
fn best_linear_error_shrinks_with_samples() {
    // Mean absolute slope error over repeats; 16x the samples should cut it
    // by about 4x, so demand at least 2x.
    let prior = Prior1D::gaussian(0.0, 1.0).unwrap();
    let err = |n: usize, seed: u64| {
        let mut rng = Rng::new(seed);
        (0..40).map(|_| (empirical_best_linear(&prior, 1.0, n, &mut rng).unwrap().slope - 0.5).abs()).sum::<f64>() / 40.0
    };
    let small = err(10_000, 1);
    let large = err(160_000, 2);
    assert!(large < small / 2.0, "{small:e} -> {large:e}");
}

#[test]
fn affine_denoisers_reach_gaussian_oracle() {
    let prior = Prior1D::gaussian(0.5, 1.0).unwrap();
    for kind in [GKind::Proposed, GKind::LinearG] {
        let mut rng = Rng::new(4);
        let fit = fit_g_to_oracle(kind, &prior, 1.0, USource::Constant(0.0), 2000, &mut rng).unwrap();
        // υ·σ_n² with υ = 0.5.
        assert!((fit.oracle_mse - 0.5).abs() < 0.01, "{}", fit.oracle_mse);
        assert!(fit.achieved_mse < 1.05 * fit.oracle_mse, "{kind:?}: {} vs {}", fit.achieved_mse, fit.oracle_mse);
    }
}

/// Bimodal prior whose modes have very different spreads, with `u` telling
/// the denoiser which mode produced the sample. The optimal slope in `z̃`
/// then depends on `u`, which a denoiser where `u` only shifts the output
/// cannot express.
fn side_information_prior() -> Prior1D {
    Prior1D::mixture(vec![
        MixtureComponent { weight: 0.5, mean: -1.0, std: 0.2 },
        MixtureComponent { weight: 0.5, mean: 1.0, std: 1.5 },
    ])
    .unwrap()
}

#[test]
fn modulated_denoiser_beats_additive_u_with_side_information() {
    let prior = side_information_prior();
    let fit = |kind| fit_g_to_oracle(kind, &prior, 0.5, USource::Component, 3000, &mut Rng::new(9)).unwrap();
    let proposed = fit(GKind::Proposed);
    let additive = fit(GKind::AdditiveU);
    assert!(proposed.achieved_mse < 1.05 * proposed.oracle_mse, "{proposed:?}");
    assert!(additive.achieved_mse > proposed.achieved_mse * 1.1, "{} vs {}", additive.achieved_mse, proposed.achieved_mse);
}

#[test]
fn constant_u_makes_additive_u_at_least_as_good_as_proposed() {
    // With u fixed, the proposed denoiser is affine in z̃ and the additive
    // family contains every affine map, so it cannot do worse.
    let prior = Prior1D::symmetric_bimodal(1.0, 0.2).unwrap();
    let fit = |kind| fit_g_to_oracle(kind, &prior, 0.5, USource::Constant(0.0), 3000, &mut Rng::new(10)).unwrap();
    let proposed = fit(GKind::Proposed);
    let additive = fit(GKind::AdditiveU);
    assert!(additive.achieved_mse < proposed.achieved_mse * 1.01, "{} vs {}", additive.achieved_mse, proposed.achieved_mse);
    assert!(proposed.achieved_mse > proposed.oracle_mse * 1.1);
}

#[test]
fn posterior_mean_dispatch() {
    let g = Prior1D::gaussian(0.0, 1.0).unwrap();
    assert_eq!(posterior_mean(&g, 2.0, 1.0).unwrap(), 1.0);
}
