use ladder_core::decoder::{GKind, TopInput};
use ladder_core::gradcheck::{gradient_check, GradCheckConfig, GRADCHECK_TOLERANCE};

fn check(cfg: &GradCheckConfig) {
    let report = gradient_check(cfg).unwrap();
    for g in &report.groups {
        eprintln!("{:?} {:<6} n={:<5} max_rel={:.3e} max_abs={:.3e}", cfg.widths, g.group.name(), g.count, g.max_rel_err, g.max_abs_grad);
        if cfg.lambdas.iter().all(|&l| l > 0.0) {
            assert!(g.max_abs_grad > 0.0, "{} gradient is identically zero", g.group.name());
        }
    }
    assert!(report.passed, "{:?}: max rel err {:.3e}", cfg.widths, report.max_rel_err);
}

#[test]
fn architectures_pass_gradcheck() {
    let archs: [&[usize]; 6] = [&[2, 3, 2], &[4, 5, 3], &[3, 6, 4, 2], &[5, 4, 4, 4, 3], &[6, 8, 3], &[2, 7, 5, 3, 2]];
    for (i, a) in archs.iter().enumerate() {
        check(&GradCheckConfig::new(a.to_vec(), 100 + i as u64));
    }
}

#[test]
fn every_denoiser_kind_passes_gradcheck() {
    for kind in GKind::ALL {
        let mut cfg = GradCheckConfig::new(vec![3, 5, 3], 21);
        cfg.g_kind = kind;
        check(&cfg);
    }
}

#[test]
fn raw_top_input_passes_gradcheck() {
    let mut cfg = GradCheckConfig::new(vec![3, 4, 3], 31);
    cfg.u_top = TopInput::Raw;
    check(&cfg);
}

#[test]
fn top_only_denoising_passes_gradcheck() {
    let cfg = GradCheckConfig::new(vec![3, 5, 4, 3], 41).gamma();
    check(&cfg);
    // Nothing below the top reaches the cost, so the projections get no gradient.
    let report = gradient_check(&cfg).unwrap();
    let v = report.groups.iter().find(|g| g.group.name() == "V").unwrap();
    assert_eq!(v.max_abs_grad, 0.0);
}

#[test]
fn corrupted_adjoint_is_detected() {
    let mut cfg = GradCheckConfig::new(vec![3, 4, 3], 51);
    cfg.corrupt_adjoint = true;
    let report = gradient_check(&cfg).unwrap();
    assert!(!report.passed);
    assert!(report.max_rel_err > GRADCHECK_TOLERANCE);
}

#[test]
fn oversized_network_is_rejected() {
    assert!(gradient_check(&GradCheckConfig::new(vec![60, 60, 10], 1)).is_err());
}
