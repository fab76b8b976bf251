use std::f64::consts::LN_2;
use std::sync::Arc;

use num_complex::Complex64 as C64;

use feshflow::config::ExperimentConfig;
use feshflow::cutoffs::eval_chibar;
use feshflow::ensemble::{free_kernel, gen_ensemble, EnsembleConfig};
use feshflow::flow::*;
use feshflow::fockspace::{build_basis, distance, hph, vacuum_expectation, FockBasis, LinOp, ModeGrid};
use feshflow::kernels::{interaction_norm_z, quantize};
use feshflow::report::Status;

fn setup() -> (ExperimentConfig, Arc<FockBasis>, FlowContext) {
    let cfg = ExperimentConfig::default();
    let basis = cfg.basis().unwrap();
    let ctx = cfg.context(basis.clone()).unwrap();
    (cfg, basis, ctx)
}

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Diagonal of `R̂_α(H_ph + z)` with `T = H_ph`: on a preimage of energy `E`,
/// `e^α E(E + z)/(E + zχ̄²)`, or `e^α(E + z)` where `χ̄ = 0`.
fn free_image(ctx: &FlowContext, m: usize, z: C64, rows: &feshflow::fockspace::Support) -> LinOp {
    let basis = &ctx.basis;
    let alpha = ctx.alpha(m);
    let vals: Vec<C64> = rows
        .indices()
        .iter()
        .map(|&i| {
            let p = (0..basis.dim()).find(|&p| basis.shifted_index(p, m) == Some(i)).unwrap();
            let e = basis.energy(p);
            let cb = eval_chibar(&ctx.family, alpha, e);
            let f = if cb == 0.0 { z + e } else { (z + e) * e / (z * cb * cb + e) };
            f * alpha.exp()
        })
        .collect();
    LinOp::diagonal(basis, rows, &vals)
}

#[test]
fn dilation_by_zero_is_identity() {
    let (_, basis, _) = setup();
    let g = dilation(&basis, 0);
    assert_eq!(distance(&g, &LinOp::identity(&basis, &basis.full_support())), 0.0);
}

#[test]
fn dilation_shifts_modes_down() {
    let basis = Arc::new(build_basis(&ModeGrid::new(LN_2, 1).unwrap(), 2));
    let from = basis.lookup(&[0, 1]).unwrap();
    let to = basis.lookup(&[1, 0]).unwrap();
    assert_eq!(basis.shifted_index(from, 1), Some(to));
    assert_eq!(basis.shifted_index(to, 1), None);
    let g = dilation(&basis, 1);
    assert_eq!(g.entry(to, from), c(1.0, 0.0));
}

#[test]
fn rescaling_fixes_hph_exactly() {
    let (_, basis, _) = setup();
    let h = hph(&basis);
    for m in 1..=3 {
        let s = rescale(&h, m);
        for &i in s.rows().indices() {
            for &j in s.cols().indices() {
                let want = if i == j { c(basis.energy(i), 0.0) } else { c(0.0, 0.0) };
                assert!((s.entry(i, j) - want).norm() <= 1e-15 * (1.0 + want.norm()), "m={m} ({i},{j})");
            }
        }
    }
}

#[test]
fn rescaled_identity_is_scaled_projection() {
    let (_, basis, _) = setup();
    let s = rescale(&LinOp::identity(&basis, &basis.full_support()), 2);
    let e = (2.0f64 * 0.5).exp();
    assert!(s.diag_values().iter().all(|v| (*v - c(e, 0.0)).norm() < 1e-14));
    assert!(s.max_offdiag() == 0.0);
    assert!(s.rows().len() < basis.dim());
}

#[test]
fn free_kernel_maps_to_hph_plus_scaled_z() {
    let (cfg, basis, ctx) = setup();
    let w = free_kernel(&basis, &cfg.norms).unwrap();
    let z = c(0.03, -0.02);
    for m in 1..=2 {
        let r = rescaled_fs_kernel(&ctx, &w, z, m).unwrap();
        let ea = ctx.alpha(m).exp();
        let want = free_image(&ctx, m, z, r.op.rows());
        assert!(distance(&r.op, &want) < 1e-14, "m={m}: {}", distance(&r.op, &want));
        // the image of Ran χ_α lies strictly below the cutoff H_ph < 1
        assert!(r.op.rows().indices().iter().all(|&i| basis.energy(i) < 1.0));
        let fam = KernelFamily::new(&w, &basis);
        let q = q_alpha(&ctx, &fam, m, z).unwrap();
        assert!((q.full - z * ea).norm() < 1e-15);
        assert!((q.closed - z * ea).norm() < 1e-15);
    }
}

#[test]
fn free_kernel_fixed_point_is_exact() {
    let (cfg, basis, ctx) = setup();
    let w = free_kernel(&basis, &cfg.norms).unwrap();
    let fam = KernelFamily::new(&w, &basis);
    let zeta = c(0.1, 0.05);
    let tr = solve_e(&ctx, &fam, 1, zeta).unwrap();
    assert!((tr.z - zeta * (-0.5f64).exp()).norm() < 1e-16);
    assert!(tr.iterations() <= 1);
    let ren = renorm_map(&ctx, &fam, 1, zeta).unwrap();
    let want = free_image(&ctx, 1, tr.z, ren.op.rows());
    assert!(distance(&ren.op, &want) < 1e-15);
    assert!((vacuum_expectation(&ren.op) - zeta).norm() < 1e-16);
}

#[test]
fn free_kernel_bounds_meet_the_lemma_constant() {
    let (cfg, basis, ctx) = setup();
    let w = free_kernel(&basis, &cfg.norms).unwrap();
    let rep = bound_suite(&ctx, &w, 1, &[c(0.0, 0.0), c(0.1, 0.05), c(-0.05, 0.1)]).unwrap();
    assert!(rep.passed(), "{:?}", rep.failures().collect::<Vec<_>>());
    let worst = rep.worst("delta_inverse_lemma").unwrap();
    assert!(worst <= 4.0 * 0.5f64.exp());
}

#[test]
fn free_kernel_semigroup_and_cocycle() {
    let (cfg, basis, ctx) = setup();
    let w = free_kernel(&basis, &cfg.norms).unwrap();
    let z = c(0.01, 0.02);
    let rep = hat_semigroup_suite(&ctx, &w, &[(1, 1), (1, 2)], &[z]).unwrap();
    assert!(rep.passed(), "{:?}", rep.failures().collect::<Vec<_>>());
    let ab = rescaled_fs_kernel(&ctx, &w, z, 3).unwrap();
    let want = free_image(&ctx, 3, z, ab.op.rows());
    assert!(distance(&ab.op, &want) < 1e-14);

    let rep = cocycle_flow_suite(&ctx, &w, 1, 1, &[c(0.0, 0.0), c(0.1, -0.05)], &cfg.suites.fit).unwrap();
    assert!(rep.passed(), "{:?}", rep.failures().collect::<Vec<_>>());
    assert!(rep.worst("cocycle_exact").unwrap() < 1e-15);
    assert!(rep.worst("fit_residual").unwrap() < 1e-12);
}

#[test]
fn free_kernel_stays_free_under_iteration() {
    let (cfg, basis, ctx) = setup();
    let w = free_kernel(&basis, &cfg.norms).unwrap();
    let tr = iterate_flow(&ctx, &w, 1, 2, &cfg.suites.fit, None).unwrap();
    assert_eq!(tr.steps.len(), 3);
    assert!(tr.steps.iter().all(|s| s.interaction_z < 1e-12), "{:?}", tr.steps.iter().map(|s| s.interaction_z).collect::<Vec<_>>());
}

#[test]
fn zero_spectral_parameter_gives_zero_vacuum_entry() {
    let (cfg, basis, ctx) = setup();
    let ens = gen_ensemble(&basis, &EnsembleConfig { count: 2, ..cfg.ensemble.clone() }, &cfg.norms).unwrap();
    for w in &ens {
        let fam = KernelFamily::new(w, &basis);
        let ren = renorm_map(&ctx, &fam, 1, c(0.0, 0.0)).unwrap();
        assert!(vacuum_expectation(&ren.op).norm() <= ctx.cfg.fp_tol);
    }
}

#[test]
fn q_closed_form_matches_full_map() {
    let (cfg, basis, ctx) = setup();
    let ens = gen_ensemble(&basis, &EnsembleConfig { count: 3, ..cfg.ensemble.clone() }, &cfg.norms).unwrap();
    for w in &ens {
        let fam = KernelFamily::new(w, &basis);
        for z in [c(0.0, 0.0), c(0.05, 0.05), c(-0.1, 0.02)] {
            let q = q_alpha(&ctx, &fam, 1, z).unwrap();
            assert!((q.full - q.closed).norm() <= 1e-11);
            assert!(q.correction.norm() > 0.0);
        }
    }
}

#[test]
fn zero_epsilon_gives_free_ensemble() {
    let (cfg, basis, _) = setup();
    let ens = gen_ensemble(&basis, &EnsembleConfig { epsilon: 0.0, count: 3, ..cfg.ensemble.clone() }, &cfg.norms).unwrap();
    let free = free_kernel(&basis, &cfg.norms).unwrap();
    let z = c(0.1, 0.1);
    for w in &ens {
        assert_eq!(interaction_norm_z(w, &cfg.norms), 0.0);
        assert!(distance(&quantize(w, z, &basis).unwrap(), &quantize(&free, z, &basis).unwrap()) < 1e-15);
    }
}

#[test]
fn ensemble_hits_target_norm() {
    let (cfg, basis, _) = setup();
    for target in [1e-4, 1e-3, 5e-3] {
        let ens = gen_ensemble(&basis, &EnsembleConfig { count: 4, interaction: Some(target), ..cfg.ensemble.clone() }, &cfg.norms).unwrap();
        for w in &ens {
            assert!((interaction_norm_z(w, &cfg.norms) - target).abs() <= 1e-12, "{target}");
        }
    }
}

#[test]
fn ensemble_members_satisfy_the_fixed_point_conditions() {
    let (cfg, basis, ctx) = setup();
    let ens = gen_ensemble(&basis, &cfg.ensemble, &cfg.norms).unwrap();
    for (k, w) in ens.iter().enumerate() {
        let n = kernel_norms(w, &cfg.norms);
        for m in 1..=3 {
            let conds = specrg_conditions(ctx.alpha(m), cfg.norms.xi, cfg.flow.r_z, &n, "");
            assert!(conds.iter().all(|c| c.holds), "member {k}, m={m}: {conds:?}");
        }
    }
}

#[test]
fn ensemble_is_seeded() {
    let (cfg, basis, _) = setup();
    let small = EnsembleConfig { count: 2, ..cfg.ensemble.clone() };
    let a = gen_ensemble(&basis, &small, &cfg.norms).unwrap();
    let b = gen_ensemble(&basis, &small, &cfg.norms).unwrap();
    assert_eq!(a, b);
    let other = gen_ensemble(&basis, &EnsembleConfig { seed: 8, ..small }, &cfg.norms).unwrap();
    assert_ne!(a, other);
}

#[test]
fn conditional_checks_skip_outside_hypotheses() {
    let (cfg, basis, ctx) = setup();
    let loud = EnsembleConfig { count: 1, interaction: Some(0.05), ..cfg.ensemble.clone() };
    let w = &gen_ensemble(&basis, &loud, &cfg.norms).unwrap()[0];
    let rep = fixed_point_suite(&ctx, w, 1, &FixedPointSettings::default()).unwrap();
    assert!(rep.conditions.iter().any(|c| !c.holds));
    assert!(rep.checks.iter().filter(|c| c.name == "contraction_ratio").all(|c| c.status == Status::Skipped));
    assert_eq!(rep.counts().fail, 0);
}

#[test]
fn scale_index_is_validated() {
    let (cfg, basis, ctx) = setup();
    let w = free_kernel(&basis, &cfg.norms).unwrap();
    assert!(rescaled_fs_kernel(&ctx, &w, c(0.0, 0.0), 0).is_err());
    assert!(rescaled_fs_kernel(&ctx, &w, c(0.0, 0.0), 8).is_err());
}
