//! The verification suites over a seeded kernel ensemble.

use std::f64::consts::{LN_2, PI};
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::cutoffs::{verify_family, Construction, SmoothFamily};
use crate::ensemble::gen_ensemble;
use crate::error::{Error, Result};
use crate::flow::{
    bound_suite, cocycle_flow_suite, fixed_point_suite, hat_semigroup_suite, iterate_suite, sandwich_suite, FlowContext,
};
use crate::fockspace::{FockBasis, LinOp};
use crate::fsmap::{ind_check, isospectrality_check, reexpress_check, sharp_embed_check, trade_identity_check, FeshbachInput};
use crate::kernels::{norm_table, quantization_bound_check, quantize, quantize_split, KernelSeq};
use crate::report::{CheckRecord, FlowReport};

/// Suite names in canonical order.
pub const SUITES: [&str; 13] = [
    "family",
    "isospectrality",
    "ind",
    "trade",
    "reexpress",
    "sharp-embed",
    "quantization",
    "bounds",
    "sandwich",
    "hat-semigroup",
    "fixed-point",
    "cocycle-flow",
    "iterate",
];

/// A plot-ready table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

#[derive(Clone, Debug)]
pub struct SuiteOutput {
    pub report: FlowReport,
    pub tables: Vec<Table>,
}

impl SuiteOutput {
    fn plain(report: FlowReport) -> Self {
        Self { report, tables: Vec::new() }
    }
}

/// Basis, context and ensemble built once from a configuration.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub basis: Arc<FockBasis>,
    pub ctx: FlowContext,
    pub ensemble: Vec<KernelSeq>,
}

/// Prefixes every case of `rep` with `label`.
fn tag(mut rep: FlowReport, label: &str) -> FlowReport {
    let join = |case: &mut String| {
        *case = if case.is_empty() { label.to_string() } else { format!("{label}, {case}") };
    };
    rep.checks.iter_mut().for_each(|c| join(&mut c.case));
    rep.conditions.iter_mut().for_each(|c| join(&mut c.case));
    rep
}

/// Uniform points in the disc of radius `radius`.
fn disc_points(rng: &mut ChaCha8Rng, radius: f64, count: usize) -> Vec<C64> {
    (0..count)
        .map(|_| {
            let (u, t): (f64, f64) = (rng.random(), rng.random());
            C64::from_polar(radius * u.sqrt(), 2.0 * PI * t)
        })
        .collect()
}

fn c(x: f64) -> C64 {
    C64::new(x, 0.0)
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let basis = config.basis()?;
        let ctx = config.context(basis.clone())?;
        let ensemble = gen_ensemble(&basis, &config.ensemble, &config.norms)?;
        Ok(Self { config, basis, ctx, ensemble })
    }

    /// Independent stream per (member, purpose).
    fn rng(&self, member: usize, salt: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.ensemble.seed);
        rng.set_stream(1 + 64 * member as u64 + salt);
        rng
    }

    fn zs(&self, member: usize, salt: u64, radius: f64) -> Vec<C64> {
        disc_points(&mut self.rng(member, salt), radius, self.config.suites.z_per_member)
    }

    fn first_alpha(&self) -> (usize, f64) {
        let m = self.config.suites.scales[0];
        (m, self.ctx.alpha(m))
    }

    fn input(&self, h: LinOp, alpha: f64) -> Result<FeshbachInput> {
        let t = self.ctx.hph_on(h.rows());
        Ok(FeshbachInput::from_family(h, t, &self.ctx.family, alpha)?.with_threshold(self.ctx.cfg.svd_threshold))
    }

    /// Runs `f` on `members` in parallel and merges the tagged reports in order.
    /// A member that errors becomes a failing `member_error` record.
    fn per_member<F>(&self, suite: &str, members: usize, f: F) -> FlowReport
    where
        F: Fn(usize, &KernelSeq) -> Result<FlowReport> + Sync,
    {
        let parts: Vec<FlowReport> = self.ensemble[..members.min(self.ensemble.len())]
            .par_iter()
            .enumerate()
            .map(|(k, w)| {
                let label = format!("member {k}");
                match f(k, w) {
                    Ok(rep) => tag(rep, &label),
                    Err(e) => {
                        let mut rep = FlowReport::new(suite);
                        rep.push(CheckRecord::identity("member_error", &label, f64::INFINITY, 0.0).with_note(e.to_string()));
                        rep
                    }
                }
            })
            .collect();
        let mut rep = FlowReport::new(suite);
        for p in parts {
            rep.merge(p);
        }
        rep
    }

    fn all(&self) -> usize {
        self.ensemble.len()
    }

    pub fn run_suite(&self, name: &str) -> Result<SuiteOutput> {
        match name {
            "family" => self.family(),
            "isospectrality" => Ok(SuiteOutput::plain(self.isospectrality())),
            "ind" => Ok(SuiteOutput::plain(self.ind())),
            "trade" => Ok(SuiteOutput::plain(self.trade_like("trade", false))),
            "reexpress" => Ok(SuiteOutput::plain(self.trade_like("reexpress", true))),
            "sharp-embed" => Ok(SuiteOutput::plain(self.sharp_embed())),
            "quantization" => self.quantization(),
            "bounds" => Ok(SuiteOutput::plain(self.bounds())),
            "sandwich" => Ok(SuiteOutput::plain(self.sandwich())),
            "hat-semigroup" => Ok(SuiteOutput::plain(self.hat_semigroup())),
            "fixed-point" => Ok(SuiteOutput::plain(self.fixed_point())),
            "cocycle-flow" => Ok(SuiteOutput::plain(self.cocycle_flow())),
            "iterate" => self.iterate(),
            other => Err(Error::UnknownSuite(other.to_string())),
        }
    }

    fn family(&self) -> Result<SuiteOutput> {
        let n = self.config.suites.family_points;
        let grid: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let fam = &self.ctx.family;
        let mut rep = FlowReport::new("family");
        let sine_cosine = SmoothFamily::new(fam.profile.clone(), Construction::SineCosine);
        for a in [LN_2, 2.0 * LN_2] {
            for b in [LN_2, 2.0 * LN_2] {
                rep.extend(verify_family(fam, a, b, &grid, 1e-12));
                if fam.construction != Construction::SineCosine {
                    rep.merge(tag(checks_report(verify_family(&sine_cosine, a, b, &grid, 1e-12)), "sine-cosine"));
                }
            }
        }
        for p in &self.config.suites.pairs {
            rep.extend(verify_family(fam, self.ctx.alpha(p[0]), self.ctx.alpha(p[1]), &grid, 1e-12));
        }
        Ok(SuiteOutput::plain(rep))
    }

    fn isospectrality(&self) -> FlowReport {
        let (_, alpha) = self.first_alpha();
        let radius = 0.25 * (-alpha).exp();
        self.per_member("isospectrality", self.all(), |k, w| {
            let mut rep = FlowReport::new("isospectrality");
            for z in self.zs(k, 0, radius) {
                let input = self.input(quantize(w, z, &self.basis)?, alpha)?;
                rep.merge(tag(checks_report(isospectrality_check(&input, 1e-10)?), &format!("z={z:.5}")));
            }
            // H[w(z)] − μ with μ the eigenvalue nearest 0, z real
            let z = c(self.rng(k, 1).random_range(-radius..radius));
            let h = quantize(w, z, &self.basis)?;
            let herm = (h.matrix() - h.matrix().adjoint()).norm();
            let sym = (h.matrix() + h.matrix().adjoint()) * c(0.5);
            let eig = sym.symmetric_eigenvalues();
            let mu = eig.iter().copied().min_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(0.0);
            let d = h.rows().len();
            let shifted = LinOp::new(self.basis.clone(), h.rows().clone(), h.cols().clone(), sym - DMatrix::identity(d, d) * c(mu))?;
            let input = self.input(shifted, alpha)?;
            let case = format!("constructed, z={:.5}, mu={mu:.5e}", z.re);
            let kh = crate::fockspace::kernel_dim(&input.h, input.threshold);
            rep.push(CheckRecord::flag("constructed_kernel", &case, kh == 1).with_note(format!("hermiticity defect {herm:.1e}")));
            rep.merge(tag(checks_report(isospectrality_check(&input, 1e-10)?), &case));
            Ok(rep)
        })
    }

    fn ind(&self) -> FlowReport {
        let (_, alpha) = self.first_alpha();
        self.per_member("ind", self.all(), |k, w| {
            let mut rep = FlowReport::new("ind");
            for z in self.zs(k, 2, 0.25 * (-alpha).exp()) {
                let input = self.input(quantize(w, z, &self.basis)?, alpha)?;
                let sub = &input.subspaces;
                let pure_bar = sub.chibar_support.difference(&sub.overlap_support);
                let t = &input.t;
                let plus_one = LinOp::diag_fn(&self.basis, input.support(), |_| c(0.0));
                let mut s1 = t.clone().into_matrix();
                let mut s2 = plus_one.into_matrix();
                for (a, &i) in input.support().indices().iter().enumerate() {
                    if pure_bar.contains(i) {
                        s1[(a, a)] += c(1.0);
                    }
                    if sub.chibar_support.contains(i) {
                        s2[(a, a)] = t.entry(i, i);
                    }
                }
                let s = input.support().clone();
                let s1 = LinOp::new(self.basis.clone(), s.clone(), s.clone(), s1)?;
                let s2 = LinOp::new(self.basis.clone(), s.clone(), s, s2)?;
                rep.merge(tag(checks_report(ind_check(&input, &s1, 1e-11)?), &format!("z={z:.5}, S=T+1 off the overlap")));
                rep.merge(tag(checks_report(ind_check(&input, &s2, 1e-11)?), &format!("z={z:.5}, S=T on Ran chibar")));
            }
            Ok(rep)
        })
    }

    /// `S = w_{0,0}(H_ph)` and a random commuting diagonal `S`.
    fn trade_like(&self, suite: &str, reexpress: bool) -> FlowReport {
        let (_, alpha) = self.first_alpha();
        self.per_member(suite, self.all(), |k, w| {
            let mut rep = FlowReport::new(suite);
            let mut rng = self.rng(k, 3);
            for z in self.zs(k, 4, 0.25 * (-alpha).exp()) {
                let input = self.input(quantize(w, z, &self.basis)?, alpha)?;
                let (w00, _) = quantize_split(w, z, &self.basis)?;
                let vals: Vec<C64> = input
                    .support()
                    .indices()
                    .iter()
                    .map(|&i| c(self.basis.energy(i) * (1.0 + 0.5 * rng.random::<f64>())))
                    .collect();
                let s_rand = LinOp::diagonal(&self.basis, input.support(), &vals);
                for (s, label) in [(w00, "S=w00"), (s_rand, "S=random diagonal")] {
                    let recs = if reexpress {
                        reexpress_check(&input, &s, 1e-10)?
                    } else {
                        trade_identity_check(&input, &s, 1e-10)?
                    };
                    rep.merge(tag(checks_report(recs), &format!("z={z:.5}, {label}")));
                }
            }
            Ok(rep)
        })
    }

    fn sharp_embed(&self) -> FlowReport {
        let (_, alpha) = self.first_alpha();
        self.per_member("sharp-embed", self.all(), |k, w| {
            let mut rep = FlowReport::new("sharp-embed");
            for z in self.zs(k, 5, 0.25 * (-alpha).exp()) {
                let input = self.input(quantize(w, z, &self.basis)?, alpha)?;
                let sub = &input.subspaces;
                let redundancy = sub.chi_support.len() + sub.chibar_support.len() - input.support().len();
                let recs = sharp_embed_check(&input, 1e-14, 1e-12, 1e-10)?;
                rep.merge(tag(checks_report(recs), &format!("z={z:.5}, overlap redundancy {redundancy}")));
            }
            Ok(rep)
        })
    }

    fn quantization(&self) -> Result<SuiteOutput> {
        let zs = self.ctx.norms.z_grid();
        let picks: Vec<C64> = zs.iter().copied().step_by((zs.len() / 4).max(1)).collect();
        let rep = self.per_member("quantization", self.all(), |_, w| {
            let mut rep = FlowReport::new("quantization");
            for &z in &picks {
                rep.extend(quantization_bound_check(w, z, &self.basis, &self.ctx.norms)?);
            }
            Ok(rep)
        });
        let mut rows = Vec::new();
        if let Some(w) = self.ensemble.first() {
            for &z in &picks {
                for r in norm_table(w, z, &self.basis, &self.ctx.norms)? {
                    rows.push(vec![
                        format!("{}", z.re),
                        format!("{}", z.im),
                        r.m.to_string(),
                        r.n.to_string(),
                        r.entries.to_string(),
                        format!("{:e}", r.norm),
                        format!("{:e}", r.op_norm),
                        format!("{:e}", r.bound),
                    ]);
                }
            }
        }
        let header = ["z_re", "z_im", "m", "n", "entries", "norm", "op_norm", "bound"].map(String::from).to_vec();
        Ok(SuiteOutput { report: rep, tables: vec![Table { name: "norm_table".into(), header, rows }] })
    }

    fn bounds(&self) -> FlowReport {
        self.per_member("bounds", self.all(), |k, w| {
            let mut rep = FlowReport::new("bounds");
            for &m in &self.config.suites.scales {
                let radius = 0.25 * (-self.ctx.alpha(m)).exp();
                let mut zs = vec![c(0.0)];
                zs.extend(self.zs(k, 6 + m as u64, radius));
                rep.merge(bound_suite(&self.ctx, w, m, &zs)?);
            }
            Ok(rep)
        })
    }

    fn sandwich(&self) -> FlowReport {
        self.per_member("sandwich", self.all(), |k, w| {
            let mut rep = FlowReport::new("sandwich");
            for p in &self.config.suites.pairs {
                let zs = self.zs(k, 16, 0.25 * (-self.ctx.alpha(p[0] + p[1])).exp());
                rep.merge(sandwich_suite(&self.ctx, w, p[0], p[1], &zs)?);
            }
            Ok(rep)
        })
    }

    fn hat_semigroup(&self) -> FlowReport {
        let pairs: Vec<(usize, usize)> = self.config.suites.pairs.iter().map(|p| (p[0], p[1])).collect();
        let deepest = pairs.iter().map(|p| p.0 + p.1).max().unwrap_or(1);
        self.per_member("hat-semigroup", self.all(), |k, w| {
            let zs = self.zs(k, 17, 0.25 * (-self.ctx.alpha(deepest)).exp());
            hat_semigroup_suite(&self.ctx, w, &pairs, &zs)
        })
    }

    fn fixed_point(&self) -> FlowReport {
        self.per_member("fixed-point", self.all(), |_, w| {
            let mut rep = FlowReport::new("fixed-point");
            for &m in &self.config.suites.scales {
                rep.merge(fixed_point_suite(&self.ctx, w, m, &self.config.suites.fixed_point)?);
            }
            Ok(rep)
        })
    }

    fn cocycle_flow(&self) -> FlowReport {
        let s = &self.config.suites;
        self.per_member("cocycle-flow", s.flow_members, |k, w| {
            let mut rep = FlowReport::new("cocycle-flow");
            let mut zetas = vec![c(0.0)];
            zetas.extend(self.zs(k, 18, 0.9 * self.ctx.cfg.r_z));
            for p in &s.flow_pairs {
                rep.merge(cocycle_flow_suite(&self.ctx, w, p[0], p[1], &zetas, &s.fit)?);
            }
            Ok(rep)
        })
    }

    fn iterate(&self) -> Result<SuiteOutput> {
        let s = &self.config.suites;
        let n = s.flow_members.min(self.ensemble.len());
        let runs: Vec<Result<_>> = self.ensemble[..n]
            .par_iter()
            .map(|w| iterate_suite(&self.ctx, w, s.iterate_scale, s.iterate_steps, &s.fit))
            .collect();
        let mut rep = FlowReport::new("iterate");
        let header = ["member", "k", "interaction_z", "ratio", "dr", "dz", "dr_minus", "dz_minus", "fit_residual", "irreducible", "recenter_shift"]
            .map(String::from)
            .to_vec();
        let mut rows = Vec::new();
        let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        for (k, run) in runs.into_iter().enumerate() {
            let label = format!("member {k}");
            match run {
                Ok((r, trace)) => {
                    rep.merge(tag(r, &label));
                    for st in &trace.steps {
                        rows.push(vec![
                            k.to_string(),
                            st.k.to_string(),
                            format!("{:e}", st.interaction_z),
                            opt(st.ratio),
                            format!("{:e}", st.partial.dr),
                            format!("{:e}", st.partial.dz),
                            format!("{:e}", st.partial.dr_minus),
                            format!("{:e}", st.partial.dz_minus),
                            opt(st.fit_residual),
                            opt(st.irreducible),
                            opt(st.recenter_shift),
                        ]);
                    }
                }
                Err(e) => rep.push(CheckRecord::identity("member_error", &label, f64::INFINITY, 0.0).with_note(e.to_string())),
            }
        }
        Ok(SuiteOutput { report: rep, tables: vec![Table { name: "iterate_trace".into(), header, rows }] })
    }
}

fn checks_report(recs: Vec<CheckRecord>) -> FlowReport {
    let mut rep = FlowReport::default();
    rep.extend(recs);
    rep
}

/// What each suite checks, one line per check.
pub fn explain(suite: &str) -> Result<&'static str> {
    Ok(match suite {
        "family" => {
            "family: smooth cutoff family chi_a(r) = eta(e^a r)/eta(r), chibar_a = sqrt(1 - chi_a^2)\n\
             \x20 cocycle             chi_{a+b}(r) = chi_b(e^a r) chi_a(r)\n\
             \x20 pythagoras          chi_a^2 + chibar_a^2 = 1\n\
             \x20 plateau             chi_a = 1 on [0, e^{-a}/2]\n\
             \x20 overlap_pythagoras  X^2 + Xbar^2 = 1 (multiplied by chibar_{a+b}^2)\n\
             \x20 grids: 10^4 points of [0,1], (a,b) in {ln 2, 2 ln 2}^2 and the lattice pairs; tolerance 1e-12"
        }
        "isospectrality" => {
            "isospectrality: F = F_{chi_a,H_ph}(H[w(z)]) for ensemble kernels\n\
             \x20 invertibility_equivalence  H invertible iff F invertible (same relative SVD threshold)\n\
             \x20 inverse_formula            || F (chi H^-1 chi + chibar T^-1 chibar)|_chi - 1 || <= 1e-10\n\
             \x20 kernel_dimension           dim ker H = dim ker F under SVD thresholding\n\
             \x20 constructed_kernel         H - mu (mu the eigenvalue nearest 0, z real) has a one-dimensional kernel"
        }
        "ind" => {
            "ind: independence of the auxiliary operator off the overlap Ran chi ∩ Ran chibar\n\
             \x20 domain_agreement   both maps defined or both undefined\n\
             \x20 map_equality       ||F_{chi,S}(H) - F_{chi,T}(H)|| <= 1e-11\n\
             \x20 coupling_equality  chi W_T chibar = chi W_S chibar\n\
             \x20 hbar_equality      H_{chibar,S} = H_{chibar,T}\n\
             \x20 cases: S = T + 1 on pure-chibar states; S = T restricted to Ran chibar"
        }
        "trade" => {
            "trade: identities trading W_T for W_S, f = f_{chi,T}(S), Delta = T chi^2 + S chibar^2\n\
             \x20 trade_left       chibar W_T - chibar W_S f = H_chibar (S - T) Delta^-1 chibar\n\
             \x20 trade_right      W_T chibar - f W_S chibar = (S - T) Delta^-1 chibar H_chibar\n\
             \x20 one_minus_f      1 - f = chibar (S - T) Delta^-1 chibar\n\
             \x20 quadratic_trade  the quadratic term of F rewritten through W_S and f\n\
             \x20 cases: S = w_00(H_ph) and a random commuting diagonal S; tolerance 1e-10"
        }
        "reexpress" => {
            "reexpress: F_{chi,T}(H) = S f + chi f W_S f chi - chi f W_S chibar H_chibar^-1 chibar W_S f chi\n\
             \x20 reexpression  residual <= 1e-10 for S = w_00(H_ph) and a random commuting diagonal S"
        }
        "sharp-embed" => {
            "sharp-embed: J = (chi, chibar) into Ran chi (+) Ran chibar\n\
             \x20 isometry         ||J*J - 1|| <= 1e-14\n\
             \x20 lift             ||J* Hhat J - H|| <= 1e-12\n\
             \x20 sharp_equals_smooth  ||F_Phat(Hhat) - F_{chi,T}(H)|| <= 1e-10"
        }
        "quantization" => {
            "quantization: operator norms of quantized kernels\n\
             \x20 component_bound    ||H_{m,n}[w_{m,n}]|| <= ||w_{m,n}|| / sqrt(m^m n^n) for m + n <= 2\n\
             \x20 aggregate_bound    ||H[w]|| <= ||w||^(xi)\n\
             \x20 interaction_bound  ||W[w]|| <= xi ||w_(I)||^(xi)"
        }
        "bounds" => {
            "bounds: inverses on Ran chibar_a, |z| <= e^{-a}/4, x = ||w - r||_(dr)\n\
             \x20 delta_inverse_diagonal   ||Delta^-1|| equals sup 1/|r chi^2 + w_00 chibar^2| over the chibar support\n\
             \x20 delta_inverse_lemma      ||Delta^-1|| <= 4e^a/(1 - 2x)\n\
             \x20 delta_inverse_cor        ||Delta^-1|| <= 5e^a\n\
             \x20 hbar_inverse_lemma       ||H_chibar^-1|| <= 4e^a/(1 - 2x - 4 xi ||w_(I)|| e^a)\n\
             \x20 hbar_inverse_cor         ||H_chibar^-1|| <= 10e^a\n\
             \x20 neumann_ratio            ||chibar W chibar Delta^-1|| <= 4e^a xi ||w_(I)|| / (1 - 2x)\n\
             \x20 interaction_operator_norm ||W|| <= xi ||w_(I)||\n\
             \x20 real_part_growth         Re w_00(z,r) >= Re z + r(1 - x)\n\
             \x20 half_plane_invertible    H[w(z)] invertible when Re z >= 2 xi ||w_(I)|| e^a\n\
             \x20 lemma checks need |z| <= e^{-a}/4, x < 1/2, 4 xi ||w_(I)|| e^a < 1 - 2x;\n\
             \x20 corollary checks need x < 1/10, ||w_(I)|| <= e^{-a}/100; otherwise skipped"
        }
        "sandwich" => {
            "sandwich: cutoffs at a, b and a+b linked by the sandwiched kernel w^{a+b}\n\
             \x20 overlap_pythagoras  X^2 + Xbar^2 = 1 as operators\n\
             \x20 sandwich_kernel     H[w]_{chibar_{a+b},H_ph} = H[w^{a+b}] on Ran chibar_{a+b}\n\
             \x20 sandwich_hbar       H[w]_{chibar_a,H_ph} = H[w^{a+b}]_{Xbar,H_ph}\n\
             \x20 sandwich_delta      Delta_{chi_a,H_ph}(w_00) = Delta_{X,H_ph}(w^{a+b}_00)\n\
             \x20 sandwich_f          f_{chi_a,H_ph}(w_00) = f_{X,H_ph}(w^{a+b}_00)\n\
             \x20 sandwich_rescaled   Rhat_a(H)_{chibar_b,H_ph} = e^a G F_{X,H_ph}(H[w^{a+b}]) G* on Ran chibar_b\n\
             \x20 tolerance identity_tol"
        }
        "hat-semigroup" => {
            "hat-semigroup: Rhat_a(H) = e^a G_a F_{chi_a,H_ph}(H) G_a*\n\
             \x20 hat_semigroup          Rhat_b(Rhat_a(H)) = Rhat_{a+b}(H)\n\
             \x20 hat_semigroup_swapped  Rhat_a(Rhat_b(H)) = Rhat_{a+b}(H)\n\
             \x20 hat_semigroup_support  both sides live on the same subspace\n\
             \x20 inverse_route          Rhat_b(Rhat_a(H))^-1 = e^{-a-b} G [chi H^-1 chi + H_ph^-1 chibar^2] G* (cutoffs at a+b)"
        }
        "fixed-point" => {
            "fixed-point: Q_a(z) = <Rhat_a(H[w(z)])>_Omega, h(z) = z + e^{-a}(zeta - Q_a(z)), E_a = Q_a^-1\n\
             \x20 q_consistency         full map and closed form e^a(z - <W chibar H_chibar^-1 chibar W>) agree to 1e-11\n\
             \x20 q_deviation           |Q_a(z) - e^a z| <= 10 e^{2a} (xi ||w_(I)||)^2\n\
             \x20 h_lipschitz           sampled |h(z1) - h(z2)| / |z1 - z2| <= K = (10e^a)^2 (xi||w_(I)||)^2 (2 + ||w||)\n\
             \x20 h_lipschitz_eighth    the same sampled constant <= 1/8\n\
             \x20 contraction_ratio     measured iteration ratio <= 1/8\n\
             \x20 fixed_point_residual  |Q_a(E_a(zeta)) - zeta| <= fp_tol\n\
             \x20 fixed_point_converged the iteration for E_a(zeta) stops within fp_tol\n\
             \x20 fixed_point_ball      |E_a(zeta)| <= (1/4 + r_Z) e^{-a}/2\n\
             \x20 e_derivative          finite-difference |dE_a/dzeta| <= 2\n\
             \x20 e_derivative_sharp    the same derivative <= e^{-a}/(1 - K)\n\
             \x20 vacuum_law            <R_a(H[w])(zeta)>_Omega = zeta\n\
             \x20 containment_ring      |Q_a(z)| < r_Z on |z| = rho, rho = e^{-a} r_Z - 10 e^a (xi||w_(I)||)^2\n\
             \x20 containment_radius    rho <= e^{-a}/4\n\
             \x20 a_set_invertible      H[w(z)] invertible on D(rho) ∩ {Re z > 2 e^a xi ||w_(I)||}"
        }
        "cocycle-flow" => {
            "cocycle-flow: A = R_a(H[w]) as a family in zeta, w~ fitted with H[w~(z)] ~ A(z)\n\
             \x20 fit_round_trip     refitting H[w(z)] reproduces it to 1e-9\n\
             \x20 fit_residual       relative residual of the fit of A\n\
             \x20 cocycle_exact      E_{a+b,w} = E_{a,w} o E_{b,A}\n\
             \x20 flow_exact         R_b(A)(zeta) = R_{a+b}(H[w])(zeta)\n\
             \x20 cocycle_fitted     E_{a+b,w} = E_{a,w} o E_{b,w~} within fp_tol + L delta_fit\n\
             \x20 flow_fitted        R_b(H[w~]) = R_{a+b}(H[w]) within flow_tol + L delta_fit\n\
             \x20 vacuum_law*        <R(.)(zeta)>_Omega = zeta"
        }
        "iterate" => {
            "iterate: w^(k+1) = fit(R_a(H[w^(k)])), exploratory\n\
             \x20 iterate_fit_residual    each fit below the configured residual limit\n\
             \x20 iterate_completed       all steps ran\n\
             \x20 interaction_decreasing  ||w^(k)_(I)||_Z strictly decreasing for k = 1..n"
        }
        other => return Err(Error::UnknownSuite(other.to_string())),
    })
}
