//! Invariants over randomized inputs.

use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use feshflow::config::ExperimentConfig;
use feshflow::cutoffs::{Construction, Profile, SmoothFamily};
use feshflow::ensemble::{random_kernel, EnsembleConfig};
use feshflow::flow::*;
use feshflow::fockspace::{build_basis, hph, FockBasis, LinOp, ModeGrid};
use feshflow::fsmap::{isospectrality_check, FeshbachInput};
use feshflow::kernels::{quantization_bound_check, quantize, KernelSeq};
use feshflow::report::Status;

struct Fixture {
    cfg: ExperimentConfig,
    basis: Arc<FockBasis>,
    ctx: FlowContext,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let cfg = ExperimentConfig::default();
        let basis = cfg.basis().unwrap();
        let ctx = cfg.context(basis.clone()).unwrap();
        Fixture { cfg, basis, ctx }
    })
}

fn kernel(seed: u64, target: f64) -> KernelSeq {
    let f = fixture();
    let ens = EnsembleConfig { interaction: Some(target), ..f.cfg.ensemble.clone() };
    random_kernel(&f.basis, &ens, &f.cfg.norms, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn disc(radius: f64) -> impl Strategy<Value = C64> {
    (0.0..1.0f64, 0.0..std::f64::consts::TAU).prop_map(move |(u, t)| C64::from_polar(radius * u.sqrt(), t))
}

fn all_pass(checks: &[feshflow::report::CheckRecord]) -> Result<(), TestCaseError> {
    for c in checks {
        prop_assert!(c.status != Status::Fail, "{} [{}]: {:e} vs {:e}", c.name, c.case, c.value, c.limit);
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn cocycle_and_pythagoras_hold_pointwise(a in 0.01..3.0f64, b in 0.01..3.0f64, r in 0.0..1.2f64, deg in prop::sample::select(vec![3usize, 5, 7])) {
        let fam = SmoothFamily::new(Profile::new(deg).unwrap(), Construction::Quotient);
        let lhs = fam.chi(a + b, r);
        let rhs = fam.chi(b, a.exp() * r) * fam.chi(a, r);
        prop_assert!((lhs - rhs).abs() <= 1e-12, "{lhs} vs {rhs}");
        let (c, cb) = (fam.chi(a, r), fam.chibar(a, r));
        prop_assert!((c * c + cb * cb - 1.0).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&c) && (0.0..=1.0).contains(&cb));
        if r <= 0.5 * (-a).exp() {
            prop_assert_eq!(c, 1.0);
        }
        if r >= (-a).exp() {
            prop_assert_eq!(c, 0.0);
        }
    }

    #[test]
    fn scaling_fixes_hph_on_any_grid(delta in 0.2..1.0f64, j in 1usize..6, n_max in 1usize..4, m in 1usize..4) {
        prop_assume!(m <= j);
        let basis = Arc::new(build_basis(&ModeGrid::new(delta, j).unwrap(), n_max));
        let s = rescale(&hph(&basis), m);
        for &i in s.rows().indices() {
            prop_assert!((s.entry(i, i).re - basis.energy(i)).abs() <= 1e-14 * (1.0 + basis.energy(i)));
        }
        prop_assert_eq!(s.max_offdiag(), 0.0);
    }

    #[test]
    fn isospectrality_on_random_perturbations(seed in 0u64..10_000, eps in 0.0..0.3f64, z in disc(0.2)) {
        let f = fixture();
        let basis = &f.basis;
        let d = basis.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = DMatrix::from_fn(d, d, |_, _| C64::new(rand::Rng::random_range(&mut rng, -1.0..1.0), rand::Rng::random_range(&mut rng, -1.0..1.0)));
        let t = f.ctx.hph_on(&basis.full_support());
        let h = LinOp::from_full(basis, t.matrix() + v * C64::new(eps / d as f64, 0.0) + DMatrix::identity(d, d) * z).unwrap();
        let input = FeshbachInput::from_family(h, t, &f.ctx.family, 0.5).unwrap();
        match isospectrality_check(&input, 1e-10) {
            Ok(recs) => all_pass(&recs)?,
            Err(feshflow::Error::NotInDomain(_)) => {}
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        }
    }

    #[test]
    fn quantization_bound_on_random_kernels(seed in 0u64..10_000, target in 0.0..0.05f64, z in disc(0.25)) {
        let f = fixture();
        let w = kernel(seed, target);
        all_pass(&quantization_bound_check(&w, z, &f.basis, &f.cfg.norms).unwrap())?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn q_closed_form_agrees(seed in 0u64..10_000, m in 1usize..3, z in disc(0.25)) {
        let f = fixture();
        let w = kernel(seed, 1e-3);
        let z = z * (-f.ctx.alpha(m)).exp();
        let q = q_alpha(&f.ctx, &KernelFamily::new(&w, &f.basis), m, z).unwrap();
        prop_assert!((q.full - q.closed).norm() <= 1e-11, "{:e}", (q.full - q.closed).norm());
    }

    #[test]
    fn contraction_certificate(seed in 0u64..10_000, target in 0.0..2e-3f64, m in 1usize..3, zeta in disc(0.2)) {
        let f = fixture();
        let w = kernel(seed, target);
        let n = kernel_norms(&w, &f.cfg.norms);
        let conds = specrg_conditions(f.ctx.alpha(m), f.cfg.norms.xi, f.cfg.flow.r_z, &n, "");
        prop_assume!(holds(&conds, "cond_contraction") && holds(&conds, "cond_radius"));
        let fam = KernelFamily::new(&w, &f.basis);
        let ren = renorm_map(&f.ctx, &fam, m, zeta).unwrap();
        prop_assert!(ren.trace.max_ratio().unwrap_or(0.0) <= 0.125);
        prop_assert!(ren.trace.q_residual <= f.cfg.flow.fp_tol);
        // vacuum law
        prop_assert!(ren.vacuum_residual <= f.cfg.flow.fp_tol);
        prop_assert!(e_derivative(&f.ctx, &fam, m, zeta).unwrap().norm() <= 2.0);
    }

    #[test]
    fn hat_semigroup_on_lattice_pairs(seed in 0u64..10_000, ma in 1usize..3, mb in 1usize..3, z in disc(0.25)) {
        let f = fixture();
        let w = kernel(seed, 1e-3);
        let z = z * (-f.ctx.alpha(ma + mb)).exp();
        let rep = hat_semigroup_suite(&f.ctx, &w, &[(ma, mb)], &[z]).unwrap();
        all_pass(&rep.checks)?;
        prop_assert!(rep.worst("hat_semigroup").unwrap() <= f.cfg.flow.identity_tol);
    }

    #[test]
    fn sandwich_identities(seed in 0u64..10_000, ma in 1usize..3, mb in 1usize..3, z in disc(0.25)) {
        let f = fixture();
        let w = kernel(seed, 1e-3);
        let z = z * (-f.ctx.alpha(ma + mb)).exp();
        let rep = sandwich_suite(&f.ctx, &w, ma, mb, &[z]).unwrap();
        all_pass(&rep.checks)?;
        prop_assert!(rep.checks.iter().filter(|c| c.status == Status::Pass).count() >= 6);
    }

    #[test]
    fn quantization_is_linear_in_the_kernel(seed in 0u64..10_000, s in -2.0..2.0f64, z in disc(0.25)) {
        let f = fixture();
        let (a, b) = (kernel(seed, 1e-2), kernel(seed + 1, 3e-2));
        let sum = a.combine(C64::new(1.0, 0.0), &b, C64::new(s, 0.0)).unwrap();
        let lhs = quantize(&sum, z, &f.basis).unwrap();
        let rhs = &quantize(&a, z, &f.basis).unwrap() + &quantize(&b, z, &f.basis).unwrap().scale(C64::new(s, 0.0));
        prop_assert!(feshflow::fockspace::distance(&lhs, &rhs) <= 1e-13);
    }
}
