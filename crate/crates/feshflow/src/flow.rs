//! Dilations, the rescaled map, the spectral-parameter flow and the suites
//! verifying its identities and bounds.
//!
//! The auxiliary operator of every map here is `H_ph`. Scales are lattice
//! points `α = mδ`, so the dilation `Γ_α` relabels basis states exactly.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::cutoffs::{chi_operator, cutoff_pair_from, SmoothFamily};
use crate::error::{Error, Result};
use crate::fockspace::{
    bounded_inverse, distance, op_norm, singular_values, vacuum_expectation, FockBasis, LinOp, Support,
};
use crate::fsmap::{check_domain, delta_op, f_op, fs_map, FeshbachInput, FeshbachResult};
use crate::kernels::{
    fit_kernel, interaction_norm, interaction_norm_z, partial_norms, polydisc_member, quantize, quantize_split,
    xi_norm_z, Channel, FitOptions, FitResult, FitTemplate, KernelSeq, Membership, NormConfig, PartialNorms,
    PolydiscSpec, QuantPlan, z_grid,
};
use crate::report::{CheckRecord, Condition, FlowReport};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// Differences below this are roundoff; contraction ratios are not measured there.
const RATIO_FLOOR: f64 = 1e-12;

/// Parameters of the flow and its tolerances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub r_z: f64,
    pub identity_tol: f64,
    pub fp_tol: f64,
    /// Tolerance of the composed-flow comparisons before fit slack.
    pub flow_tol: f64,
    pub svd_threshold: f64,
    pub max_iters: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self { r_z: 0.2, identity_tol: 1e-9, fp_tol: 1e-10, flow_tol: 1e-8, svd_threshold: 1e-12, max_iters: 200 }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.r_z > 0.0 && self.r_z < 0.25) {
            return Err(Error::InvalidParameter { name: "r_z", reason: format!("must lie in (0, 1/4), got {}", self.r_z) });
        }
        for (name, v) in [
            ("identity_tol", self.identity_tol),
            ("fp_tol", self.fp_tol),
            ("flow_tol", self.flow_tol),
            ("svd_threshold", self.svd_threshold),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter { name, reason: format!("must be positive, got {v}") });
            }
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter { name: "max_iters", reason: "must be at least 1".into() });
        }
        Ok(())
    }
}

/// Everything a flow computation needs besides the kernel.
#[derive(Clone, Debug)]
pub struct FlowContext {
    pub basis: Arc<FockBasis>,
    pub family: SmoothFamily,
    pub norms: NormConfig,
    pub cfg: FlowConfig,
}

impl FlowContext {
    pub fn new(basis: Arc<FockBasis>, family: SmoothFamily, norms: NormConfig, cfg: FlowConfig) -> Result<Self> {
        norms.validate()?;
        cfg.validate()?;
        Ok(Self { basis, family, norms, cfg })
    }

    /// `α = mδ`.
    pub fn alpha(&self, m: usize) -> f64 {
        m as f64 * self.basis.grid().delta()
    }

    pub fn hph_on(&self, s: &Support) -> LinOp {
        LinOp::diag_fn(&self.basis, s, |e| C64::new(e, 0.0))
    }

    fn check_scale(&self, m: usize) -> Result<()> {
        if m == 0 || m > self.basis.grid().j_max() {
            return Err(Error::InvalidParameter {
                name: "m",
                reason: format!("scale index must lie in 1..={}, got {m}", self.basis.grid().j_max()),
            });
        }
        Ok(())
    }
}

// ---------------------------------------------------------------- dilation

/// Image of `support` under the mode shift `j → j − m`, with `(source, image)`
/// pairs. States with an occupied mode below `m` have no image.
pub fn shift_support(basis: &FockBasis, support: &Support, m: usize) -> (Support, Vec<(usize, usize)>) {
    let pairs: Vec<(usize, usize)> =
        support.indices().iter().filter_map(|&i| basis.shifted_index(i, m).map(|k| (i, k))).collect();
    let img = Support::from_indices(basis.dim(), pairs.iter().map(|p| p.1).collect());
    (img, pairs)
}

/// Preimage under the shift of the states in `image`.
pub fn unshift_support(basis: &FockBasis, image: &Support, m: usize) -> Support {
    let idx = (0..basis.dim()).filter(|&i| basis.shifted_index(i, m).is_some_and(|k| image.contains(k))).collect();
    Support::from_indices(basis.dim(), idx)
}

/// `Γ_α` on the full basis: the partial isometry `|n⟩ ↦ |n shifted by m⟩`.
pub fn dilation(basis: &Arc<FockBasis>, m: usize) -> LinOp {
    let d = basis.dim();
    let mut g = DMatrix::zeros(d, d);
    for i in 0..d {
        if let Some(k) = basis.shifted_index(i, m) {
            g[(k, i)] = ONE;
        }
    }
    LinOp::from_full(basis, g).expect("square matrix on the full basis")
}

/// `Γ A Γ*`, kept on the images of the admissible parts of `A`'s supports.
pub fn conjugate(a: &LinOp, m: usize) -> LinOp {
    let basis = a.basis();
    let (rows, rmap) = shift_support(basis, a.rows(), m);
    let (cols, cmap) = shift_support(basis, a.cols(), m);
    let mut mat = DMatrix::zeros(rows.len(), cols.len());
    for &(sr, ir) in &rmap {
        let (ar, pr) = (a.rows().position(sr).unwrap(), rows.position(ir).unwrap());
        for &(sc, ic) in &cmap {
            mat[(pr, cols.position(ic).unwrap())] = a.matrix()[(ar, a.cols().position(sc).unwrap())];
        }
    }
    LinOp::new(basis.clone(), rows, cols, mat).expect("shapes match by construction")
}

/// Scaling transformation `S_α(A) = e^{mδ} Γ A Γ*`.
pub fn rescale(a: &LinOp, m: usize) -> LinOp {
    let s = (m as f64 * a.basis().grid().delta()).exp();
    conjugate(a, m).scale(C64::new(s, 0.0))
}

// ------------------------------------------------------------ rescaled map

/// `R̂_α(H) = S_α(F_{χ_α, H_ph}(H))` with the map data it came from.
#[derive(Clone, Debug)]
pub struct Rescaled {
    pub op: LinOp,
    pub map: FeshbachResult,
    pub input: FeshbachInput,
}

/// The rescaled map on the support of `h`.
pub fn rescaled_fs(ctx: &FlowContext, h: &LinOp, m: usize) -> Result<Rescaled> {
    ctx.check_scale(m)?;
    let t = ctx.hph_on(h.rows());
    let input = FeshbachInput::from_family(h.clone(), t, &ctx.family, ctx.alpha(m))?.with_threshold(ctx.cfg.svd_threshold);
    let map = fs_map(&input)?;
    let op = rescale(&map.f, m);
    Ok(Rescaled { op, map, input })
}

/// `R̂_α(H[w(z)])`.
pub fn rescaled_fs_kernel(ctx: &FlowContext, w: &KernelSeq, z: C64, m: usize) -> Result<Rescaled> {
    rescaled_fs(ctx, &quantize(w, z, &ctx.basis)?, m)
}

/// A map `z ↦ A(z)` of operators on a fixed support.
pub trait OperatorFamily {
    fn support(&self) -> Support;
    fn at(&self, z: C64) -> Result<LinOp>;
}

/// `z ↦ H[w(z)]`, compressed to `support`.
pub struct KernelFamily<'a> {
    pub w: &'a KernelSeq,
    pub basis: Arc<FockBasis>,
    pub support: Support,
    plan: Option<QuantPlan<'a>>,
}

impl<'a> KernelFamily<'a> {
    pub fn new(w: &'a KernelSeq, basis: &Arc<FockBasis>) -> Self {
        Self::on(w, basis, basis.full_support())
    }

    pub fn on(w: &'a KernelSeq, basis: &Arc<FockBasis>, support: Support) -> Self {
        Self { w, basis: basis.clone(), support, plan: QuantPlan::new(w, basis).ok() }
    }
}

impl OperatorFamily for KernelFamily<'_> {
    fn support(&self) -> Support {
        self.support.clone()
    }

    fn at(&self, z: C64) -> Result<LinOp> {
        let h = match &self.plan {
            Some(p) => p.eval(z)?,
            None => quantize(self.w, z, &self.basis)?,
        };
        if self.support.len() == self.basis.dim() {
            Ok(h)
        } else {
            h.restrict_to(&self.support)
        }
    }
}

/// A family given by a closure.
pub struct FnFamily<F> {
    support: Support,
    f: F,
}

impl<F: Fn(C64) -> Result<LinOp>> FnFamily<F> {
    pub fn new(support: Support, f: F) -> Self {
        Self { support, f }
    }
}

impl<F: Fn(C64) -> Result<LinOp>> OperatorFamily for FnFamily<F> {
    fn support(&self) -> Support {
        self.support.clone()
    }

    fn at(&self, z: C64) -> Result<LinOp> {
        (self.f)(z)
    }
}

/// `ζ ↦ R_α(A)(ζ)` for an inner family `A`.
pub struct RenormalizedFamily<'a> {
    ctx: &'a FlowContext,
    inner: &'a dyn OperatorFamily,
    m: usize,
    support: Support,
}

impl<'a> RenormalizedFamily<'a> {
    pub fn new(ctx: &'a FlowContext, inner: &'a dyn OperatorFamily, m: usize) -> Result<Self> {
        ctx.check_scale(m)?;
        let pair = chi_operator(&ctx.family, ctx.alpha(m), &ctx.basis, &inner.support());
        let (support, _) = shift_support(&ctx.basis, &pair.subspaces.chi_support, m);
        Ok(Self { ctx, inner, m, support })
    }
}

impl OperatorFamily for RenormalizedFamily<'_> {
    fn support(&self) -> Support {
        self.support.clone()
    }

    fn at(&self, zeta: C64) -> Result<LinOp> {
        Ok(renorm_map(self.ctx, self.inner, self.m, zeta)?.op)
    }
}

// ---------------------------------------------------- spectral parameter

/// `Q_α(z)` evaluated through the full map and through the closed form.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QEval {
    pub z: C64,
    /// `⟨R̂_α(A(z))⟩_Ω`.
    pub full: C64,
    /// `e^α (⟨A⟩_Ω − ⟨A χ̄ (A_{χ̄})^{-1} χ̄ A⟩_Ω)`.
    pub closed: C64,
    /// `⟨A χ̄ (A_{χ̄})^{-1} χ̄ A⟩_Ω`.
    pub correction: C64,
    /// `⟨A(z)⟩_Ω`, equal to `z` for flow-grade families.
    pub vacuum: C64,
    /// `‖(A_{χ̄,H_ph})^{-1}‖`.
    pub inv_norm: f64,
}

fn q_of_operator(ctx: &FlowContext, h: &LinOp, m: usize, z: C64) -> Result<(QEval, Rescaled)> {
    let r = rescaled_fs(ctx, h, m)?;
    let v = ctx.basis.vacuum_index();
    if !h.rows().contains(v) {
        return Err(Error::PreconditionViolated("the vacuum lies outside the operator's support".into()));
    }
    let q = &r.input.subspaces.chibar_support;
    let cb = |i: usize| r.input.chibar.entry(i, i);
    let row: Vec<C64> = q.indices().iter().map(|&j| h.entry(v, j) * cb(j)).collect();
    let col: Vec<C64> = q.indices().iter().map(|&i| cb(i) * h.entry(i, v)).collect();
    let g = r.map.domain.hbar_inv.matrix();
    let mut correction = ZERO;
    for (a, ra) in row.iter().enumerate() {
        for (b, cb) in col.iter().enumerate() {
            correction += ra * g[(a, b)] * cb;
        }
    }
    let vacuum = h.entry(v, v);
    let ea = ctx.alpha(m).exp();
    let eval = QEval {
        z,
        full: vacuum_expectation(&r.op),
        closed: (vacuum - correction) * ea,
        correction,
        vacuum,
        inv_norm: r.map.inv_norm_hbar,
    };
    Ok((eval, r))
}

/// `Q_α(z) = ⟨R̂_α(A(z))⟩_Ω`.
pub fn q_alpha(ctx: &FlowContext, fam: &dyn OperatorFamily, m: usize, z: C64) -> Result<QEval> {
    Ok(q_of_operator(ctx, &fam.at(z)?, m, z)?.0)
}

/// Iteration record of `z ↦ h(z) = z + e^{-α}ζ − e^{-α}Q_α(z)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedPointTrace {
    pub zeta: C64,
    pub m: usize,
    pub iterates: Vec<C64>,
    /// `|h(z_k) − z_k|`.
    pub residuals: Vec<f64>,
    /// `residual_{k+1} / residual_k` while above roundoff.
    pub ratios: Vec<f64>,
    /// `E_α(ζ)`.
    pub z: C64,
    /// `|Q_α(E_α(ζ)) − ζ|`.
    pub q_residual: f64,
}

impl FixedPointTrace {
    pub fn max_ratio(&self) -> Option<f64> {
        self.ratios.iter().copied().reduce(f64::max)
    }

    pub fn iterations(&self) -> usize {
        self.residuals.len()
    }
}

/// `E_α(ζ) = Q_α^{-1}(ζ)` by fixed-point iteration from `e^{-α}ζ`.
pub fn solve_e(ctx: &FlowContext, fam: &dyn OperatorFamily, m: usize, zeta: C64) -> Result<FixedPointTrace> {
    let ea = ctx.alpha(m).exp();
    let target = ctx.cfg.fp_tol * 1e-2;
    let mut z = zeta / ea;
    let mut tr = FixedPointTrace {
        zeta,
        m,
        iterates: vec![z],
        residuals: Vec::new(),
        ratios: Vec::new(),
        z,
        q_residual: f64::INFINITY,
    };
    for _ in 0..ctx.cfg.max_iters {
        let q = q_alpha(ctx, fam, m, z)?.full;
        let hz = z + (zeta - q) / ea;
        let res = (hz - z).norm();
        if let Some(&prev) = tr.residuals.last() {
            if prev > RATIO_FLOOR {
                tr.ratios.push(res / prev);
            }
        }
        let stalled = tr.residuals.last().is_some_and(|&prev| res >= prev);
        tr.residuals.push(res);
        let qres = (q - zeta).norm();
        if qres < tr.q_residual {
            tr.z = z;
            tr.q_residual = qres;
        }
        if qres <= target || (stalled && tr.q_residual <= ctx.cfg.fp_tol) {
            return Ok(tr);
        }
        z = hz;
        tr.iterates.push(z);
    }
    Err(Error::NoConvergence { iterations: ctx.cfg.max_iters, residual: tr.q_residual })
}

/// `R_α(A)(ζ) = R̂_α(A(E_α(ζ)))` with its vacuum-law residual.
#[derive(Clone, Debug)]
pub struct Renormalized {
    pub op: LinOp,
    pub trace: FixedPointTrace,
    /// `|⟨R_α(A)(ζ)⟩_Ω − ζ|`.
    pub vacuum_residual: f64,
}

pub fn renorm_map(ctx: &FlowContext, fam: &dyn OperatorFamily, m: usize, zeta: C64) -> Result<Renormalized> {
    let trace = solve_e(ctx, fam, m, zeta)?;
    let op = rescaled_fs(ctx, &fam.at(trace.z)?, m)?.op;
    let vacuum_residual = (vacuum_expectation(&op) - zeta).norm();
    Ok(Renormalized { op, trace, vacuum_residual })
}

/// Centred complex difference quotient of `E_α` with stencil `e^{-α} r_Z / 100`.
pub fn e_derivative(ctx: &FlowContext, fam: &dyn OperatorFamily, m: usize, zeta: C64) -> Result<C64> {
    let s = (-ctx.alpha(m)).exp() * ctx.cfg.r_z / 100.0;
    let e = |d: C64| solve_e(ctx, fam, m, zeta + d).map(|t| t.z);
    let dx = (e(C64::new(s, 0.0))? - e(C64::new(-s, 0.0))?) / (2.0 * s);
    let dy = (e(C64::new(0.0, s))? - e(C64::new(0.0, -s))?) / C64::new(0.0, 2.0 * s);
    Ok((dx + dy) * 0.5)
}

// ---------------------------------------------------------- norm ledger

/// Norms entering the hypotheses of the bounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelNorms {
    /// `‖w_(I)‖^{(ξ)}_Z`.
    pub interaction_z: f64,
    /// `‖w‖^{(ξ)}_Z`.
    pub total_z: f64,
    /// `‖w − (r + z)‖_(∂r)`.
    pub dr_dev: f64,
}

pub fn kernel_norms(w: &KernelSeq, cfg: &NormConfig) -> KernelNorms {
    KernelNorms {
        interaction_z: interaction_norm_z(w, cfg),
        total_z: xi_norm_z(w, cfg),
        dr_dev: partial_norms(&w.minus_free(), cfg).dr,
    }
}

/// `(10e^α)² (ξ‖w_(I)‖_Z)² (2 + ‖w‖_Z)`, the contraction constant of `h`.
pub fn contraction_constant(alpha: f64, xi: f64, n: &KernelNorms) -> f64 {
    let a = xi * n.interaction_z;
    (10.0 * alpha.exp()).powi(2) * a * a * (2.0 + n.total_z)
}

/// The two conditions of the spectral-parameter theorem and the extra ones
/// used for containment and for the flow property.
pub fn specrg_conditions(alpha: f64, xi: f64, r_z: f64, n: &KernelNorms, case: &str) -> Vec<Condition> {
    let a = xi * n.interaction_z;
    let ea = alpha.exp();
    vec![
        Condition::strict("cond_contraction", case, contraction_constant(alpha, xi, n), 0.125),
        Condition::strict("cond_radius", case, a * a, (-2.0 * alpha).exp() / 20.0 * (0.25 - r_z)),
        Condition::strict("cond_containment", case, 10.0 * ea * a * a, r_z / ea),
        Condition::strict("cond_hypo", case, 10.0 * ea * a * a + 2.0 * ea * a, r_z / ea),
    ]
}

/// Whether every condition called `name` holds.
pub fn holds(conds: &[Condition], name: &str) -> bool {
    conds.iter().filter(|c| c.name == name).all(|c| c.holds)
}

/// Radius `e^{-α} r_Z − 10 e^α (ξ‖w_(I)‖_Z)²` of the disc contained in `E_α(D(r_Z))`.
pub fn containment_radius(alpha: f64, xi: f64, r_z: f64, n: &KernelNorms) -> f64 {
    let a = xi * n.interaction_z;
    r_z * (-alpha).exp() - 10.0 * alpha.exp() * a * a
}

/// `r` evenly spaced angles on each radius `f · ρ`.
pub fn disc_samples(rho: f64, fractions: &[f64], angles: usize) -> Vec<C64> {
    let mut out = Vec::new();
    for &f in fractions {
        if f == 0.0 {
            out.push(ZERO);
            continue;
        }
        for k in 0..angles {
            let th = 2.0 * std::f64::consts::PI * (k as f64 + 0.5) / angles as f64;
            out.push(C64::from_polar(f * rho, th));
        }
    }
    out
}

/// `σ_min / σ_max`, or 1 for an empty operator.
fn conditioning(op: &LinOp) -> f64 {
    let sv = singular_values(op);
    match (sv.first(), sv.last()) {
        (Some(&max), Some(&min)) if max > 0.0 => min / max,
        (Some(_), Some(_)) => 0.0,
        _ => 1.0,
    }
}

fn is_invertible(op: &LinOp, threshold: f64) -> bool {
    conditioning(op) > threshold
}

// ------------------------------------------------------------ bound suite

/// Inverse bounds on `Ran χ̄_α` for the spectral parameters `zs`.
pub fn bound_suite(ctx: &FlowContext, w: &KernelSeq, m: usize, zs: &[C64]) -> Result<FlowReport> {
    ctx.check_scale(m)?;
    let mut rep = FlowReport::new("bounds");
    let alpha = ctx.alpha(m);
    let ea = alpha.exp();
    let xi = ctx.norms.xi;
    let basis = &ctx.basis;
    let full = basis.full_support();
    let hph = ctx.hph_on(&full);
    let pair = chi_operator(&ctx.family, alpha, basis, &full);
    let q = pair.subspaces.chibar_support.clone();
    let x = partial_norms(&w.minus_free(), &ctx.norms).dr;
    let key = w.free_key();
    let node: Vec<usize> = basis
        .energies()
        .iter()
        .map(|&e| w.node_of(e).ok_or(Error::InvalidParameter { name: "r_grid", reason: "basis energy off the grid".into() }))
        .collect::<Result<_>>()?;

    for &z in zs {
        let wi = interaction_norm(w, z, &ctx.norms);
        let case = format!("alpha={alpha:.4}, z={z:.5}");
        let in_disc = rep.condition(Condition::inclusive("z_in_disc", &case, z.norm(), 0.25 / ea));
        let l_dr = rep.condition(Condition::strict("lemma_dr", &case, x, 0.5));
        let l_int = rep.condition(Condition::strict("lemma_interaction", &case, 4.0 * xi * wi * ea, 1.0 - 2.0 * x));
        let c_dr = rep.condition(Condition::strict("cor_dr", &case, x, 0.1));
        let c_int = rep.condition(Condition::inclusive("cor_interaction", &case, wi, 0.01 / ea));
        let lemma = in_disc && l_dr && l_int;
        let cor = in_disc && c_dr && c_int;

        let h = quantize(w, z, basis)?;
        let (w00, wint) = quantize_split(w, z, basis)?;
        let delta = delta_op(&hph, &w00, &pair.chi, &pair.chibar)?.restrict_to(&q)?;
        let dinv = bounded_inverse(&delta, ctx.cfg.svd_threshold)?;
        let dn = op_norm(&dinv.op);
        // the same norm straight from the scalar function δ_z(r)
        let oracle = q
            .indices()
            .iter()
            .map(|&i| {
                let r = basis.energy(i);
                let (c, cb) = (ctx.family.chi(alpha, r), ctx.family.chibar(alpha, r));
                1.0 / (w.value(&key, z, node[i]) * cb * cb + r * c * c).norm()
            })
            .fold(0.0, f64::max);
        rep.push(CheckRecord::identity("delta_inverse_diagonal", &case, (dn - oracle).abs() / oracle.max(1.0), 1e-12).with_norms(dn, oracle));
        rep.push(CheckRecord::conditional("delta_inverse_lemma", &case, dn, 4.0 * ea / (1.0 - 2.0 * x), lemma));
        rep.push(CheckRecord::conditional("delta_inverse_cor", &case, dn, 5.0 * ea, cor));

        let wn = op_norm(&wint);
        rep.push(CheckRecord::bound("interaction_operator_norm", &case, wn, xi * wi));

        let input = FeshbachInput::new(h.clone(), hph.clone(), pair.chi.clone(), pair.chibar.clone())?
            .with_threshold(ctx.cfg.svd_threshold);
        match check_domain(&input) {
            Ok(dom) => {
                let lim = 4.0 * ea / (1.0 - 2.0 * x - 4.0 * xi * wi * ea);
                rep.push(CheckRecord::conditional("hbar_inverse_lemma", &case, dom.inv_norm, lim, lemma));
                rep.push(CheckRecord::conditional("hbar_inverse_cor", &case, dom.inv_norm, 10.0 * ea, cor));
            }
            Err(Error::NotInDomain(why)) => {
                let mut rec = CheckRecord::conditional("hbar_inverse_lemma", &case, f64::INFINITY, 0.0, lemma);
                rec.note = Some(why);
                rep.push(rec);
            }
            Err(e) => return Err(e),
        }
        let cwc = (&(&pair.chibar * &wint) * &pair.chibar).restrict_to(&q)?;
        let neumann = op_norm(&(&cwc * &dinv.op));
        rep.push(CheckRecord::conditional("neumann_ratio", &case, neumann, 4.0 * ea * xi * wi / (1.0 - 2.0 * x), lemma));

        // Re w_{0,0}(z, r) ≥ Re z + r(1 − ‖w − r‖_(∂r))
        let worst = w
            .r_grid()
            .iter()
            .enumerate()
            .map(|(i, &r)| z.re + r * (1.0 - x) - w.value(&key, z, i).re)
            .fold(f64::NEG_INFINITY, f64::max);
        rep.push(CheckRecord::conditional("real_part_growth", &case, worst, 1e-13, x < 1.0));

        // strict: at Re z = 0 the free kernel gives H_ph, which is singular
        let half_plane = z.re > 2.0 * xi * wi * ea;
        let inv = is_invertible(&h, ctx.cfg.svd_threshold);
        rep.push(CheckRecord::conditional("half_plane_invertible", &case, if inv { 0.0 } else { 1.0 }, 0.0, half_plane));
    }
    Ok(rep)
}

fn skipped_domain(name: &str, case: &str, why: String) -> CheckRecord {
    CheckRecord::conditional(name, case, f64::INFINITY, 0.0, false).with_note(format!("outside the domain: {why}"))
}

// ---------------------------------------------------- fixed-point suite

/// Settings of the spectral-parameter suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixedPointSettings {
    /// Radii of the `z` samples as fractions of `¼e^{-α}`.
    pub z_fractions: Vec<f64>,
    /// Radii of the `ζ` samples as fractions of `r_Z`.
    pub zeta_fractions: Vec<f64>,
    pub angles: usize,
    pub ring_points: usize,
}

impl Default for FixedPointSettings {
    fn default() -> Self {
        Self { z_fractions: vec![0.0, 0.5, 0.99], zeta_fractions: vec![0.0, 0.5, 0.99], angles: 6, ring_points: 16 }
    }
}

/// `Q_α`, `h` and `E_α` against their bounds for one kernel and scale.
pub fn fixed_point_suite(ctx: &FlowContext, w: &KernelSeq, m: usize, set: &FixedPointSettings) -> Result<FlowReport> {
    ctx.check_scale(m)?;
    let mut rep = FlowReport::new("fixed-point");
    let alpha = ctx.alpha(m);
    let (ea, xi, r_z) = (alpha.exp(), ctx.norms.xi, ctx.cfg.r_z);
    let n = kernel_norms(w, &ctx.norms);
    let a = xi * n.interaction_z;
    let case = format!("alpha={alpha:.4}");
    let conds = specrg_conditions(alpha, xi, r_z, &n, &case);
    let thm = holds(&conds, "cond_contraction") && holds(&conds, "cond_radius");
    let contain = holds(&conds, "cond_containment");
    let hypo = holds(&conds, "cond_hypo");
    for c in conds {
        rep.condition(c);
    }
    let cor = rep.condition(Condition::strict("cor_dr", &case, n.dr_dev, 0.1))
        & rep.condition(Condition::inclusive("cor_interaction", &case, n.interaction_z, 0.01 / ea));
    let k = contraction_constant(alpha, xi, &n);
    let fam = KernelFamily::new(w, &ctx.basis);

    // Q on the disc |z| ≤ ¼e^{-α}
    let zs = disc_samples(0.25 / ea, &set.z_fractions, set.angles);
    let mut hs = Vec::with_capacity(zs.len());
    for &z in &zs {
        let zc = format!("{case}, z={z:.5}");
        let q = match q_alpha(ctx, &fam, m, z) {
            Ok(q) => q,
            Err(Error::NotInDomain(why)) => {
                rep.push(skipped_domain("q_consistency", &zc, why));
                continue;
            }
            Err(e) => return Err(e),
        };
        rep.push(CheckRecord::identity("q_consistency", &zc, (q.full - q.closed).norm(), 1e-11).with_norms(q.full.norm(), q.closed.norm()));
        rep.push(CheckRecord::conditional("q_deviation", &zc, (q.full - z * ea).norm(), 10.0 * ea * ea * a * a, cor));
        hs.push((z, z - q.full / ea));
    }
    // |∂_z h| ≤ K on a convex set bounds every difference quotient
    let mut lip: f64 = 0.0;
    for (i, &(z1, h1)) in hs.iter().enumerate() {
        for &(z2, h2) in &hs[i + 1..] {
            lip = lip.max((h1 - h2).norm() / (z1 - z2).norm());
        }
    }
    rep.push(CheckRecord::conditional("h_lipschitz", &case, lip, k, thm).with_note(format!("K = {k:.3e}")));
    rep.push(CheckRecord::conditional("h_lipschitz_eighth", &case, lip, 0.125, thm));

    // E_α on D(r_Z)
    let ball = 0.5 * (0.25 + r_z) / ea;
    for zeta in disc_samples(r_z, &set.zeta_fractions, set.angles) {
        let zc = format!("{case}, zeta={zeta:.5}");
        let ren = match renorm_map(ctx, &fam, m, zeta) {
            Ok(r) => r,
            Err(Error::NoConvergence { iterations, residual }) => {
                rep.push(CheckRecord::conditional("fixed_point_converged", &zc, residual, ctx.cfg.fp_tol, thm)
                    .with_note(format!("no convergence in {iterations} iterations")));
                continue;
            }
            Err(Error::NotInDomain(why)) => {
                rep.push(skipped_domain("fixed_point_converged", &zc, why));
                continue;
            }
            Err(e) => return Err(e),
        };
        let tr = &ren.trace;
        let recheck = (q_alpha(ctx, &fam, m, tr.z)?.full - zeta).norm();
        rep.push(CheckRecord::conditional("fixed_point_residual", &zc, recheck, ctx.cfg.fp_tol, thm));
        let ratio = tr.max_ratio();
        let mut rec = CheckRecord::conditional("contraction_ratio", &zc, ratio.unwrap_or(0.0), 0.125, thm);
        if ratio.is_none() {
            rec = rec.with_note("converged before a ratio rose above roundoff");
        }
        rep.push(rec);
        rep.push(CheckRecord::conditional("fixed_point_ball", &zc, tr.z.norm(), ball, thm));
        rep.push(CheckRecord::identity("vacuum_law", &zc, ren.vacuum_residual, ctx.cfg.fp_tol));
        let de = e_derivative(ctx, &fam, m, zeta)?.norm();
        rep.push(CheckRecord::conditional("e_derivative", &zc, de, 2.0, thm));
        rep.push(CheckRecord::conditional("e_derivative_sharp", &zc, de, (-alpha).exp() / (1.0 - k), thm));
    }

    // every z with |z| < ρ has Q_α(z) ∈ D(r_Z)
    let rho = containment_radius(alpha, xi, r_z, &n);
    rep.push(CheckRecord::conditional("containment_radius", &case, rho, 0.25 / ea, contain));
    if rho > 0.0 {
        for z in disc_samples(rho * 0.999_999, &[1.0], set.ring_points) {
            let zc = format!("{case}, z={z:.5}");
            match q_alpha(ctx, &fam, m, z) {
                Ok(q) => rep.push(CheckRecord::conditional("containment_ring", &zc, q.full.norm(), r_z, contain)),
                Err(Error::NotInDomain(why)) => rep.push(skipped_domain("containment_ring", &zc, why)),
                Err(e) => return Err(e),
            }
        }
        // invertibility on D(ρ) ∩ {Re z > 2e^α ξ‖w_(I)‖}
        let edge = 2.0 * ea * a;
        for z in disc_samples(rho, &[0.3, 0.7, 0.99], set.angles).into_iter().filter(|z| z.re > edge) {
            let inv = is_invertible(&quantize(w, z, &ctx.basis)?, ctx.cfg.svd_threshold);
            rep.push(CheckRecord::conditional("a_set_invertible", &format!("{case}, z={z:.5}"), if inv { 0.0 } else { 1.0 }, 0.0, hypo));
        }
    }
    Ok(rep)
}

// -------------------------------------------------------- hat semigroup

/// `R̂_β(R̂_α(H)) = R̂_{α+β}(H)` and the inverse route.
pub fn hat_semigroup_suite(ctx: &FlowContext, w: &KernelSeq, pairs: &[(usize, usize)], zs: &[C64]) -> Result<FlowReport> {
    let mut rep = FlowReport::new("hat-semigroup");
    let tol = ctx.cfg.identity_tol;
    let basis = &ctx.basis;
    for &(ma, mb) in pairs {
        ctx.check_scale(ma + mb)?;
        for &z in zs {
            let case = format!("m=({ma},{mb}), z={z:.5}");
            let h = quantize(w, z, basis)?;
            let composed = (|| -> Result<_> {
                let one = rescaled_fs(ctx, &h, ma)?;
                let ab = rescaled_fs(ctx, &one.op, mb)?;
                let both = rescaled_fs(ctx, &h, ma + mb)?;
                let other = rescaled_fs(ctx, &rescaled_fs(ctx, &h, mb)?.op, ma)?;
                Ok((ab.op, both.op, other.op))
            })();
            let (ab, both, ba) = match composed {
                Ok(v) => v,
                Err(Error::NotInDomain(why)) => {
                    rep.push(skipped_domain("hat_semigroup", &case, why));
                    continue;
                }
                Err(e) => return Err(e),
            };
            rep.push(CheckRecord::flag("hat_semigroup_support", &case, ab.rows() == both.rows()));
            rep.push(CheckRecord::identity("hat_semigroup", &case, distance(&ab, &both), tol).with_norms(op_norm(&ab), op_norm(&both)));
            rep.push(CheckRecord::identity("hat_semigroup_swapped", &case, distance(&ba, &both), tol).with_norms(op_norm(&ba), op_norm(&both)));

            // e^{-α-β} Γ [χ H^{-1} χ + H_ph^{-1} χ̄²] Γ* with cutoffs at α + β
            let inv_h = rep.condition(Condition::strict("h_invertible", &case, ctx.cfg.svd_threshold, conditioning(&h)));
            if !inv_h {
                rep.push(CheckRecord::conditional("inverse_route", &case, f64::INFINITY, tol, false));
                continue;
            }
            let full = basis.full_support();
            let pair = chi_operator(&ctx.family, ctx.alpha(ma + mb), basis, &full);
            let hinv = bounded_inverse(&h, ctx.cfg.svd_threshold)?.op;
            let mut free = DMatrix::zeros(basis.dim(), basis.dim());
            for &i in pair.subspaces.chibar_support.indices() {
                let cb = pair.chibar.entry(i, i);
                free[(i, i)] = cb * cb / basis.energy(i);
            }
            let free = LinOp::from_full(basis, free)?;
            let inner = &(&(&pair.chi * &hinv) * &pair.chi) + &free;
            let route = rescale(&inner.restrict_to(&pair.subspaces.chi_support)?, ma + mb)
                .scale(C64::new((-2.0 * ctx.alpha(ma + mb)).exp(), 0.0));
            match bounded_inverse(&ab, ctx.cfg.svd_threshold) {
                Ok(direct) => rep.push(
                    CheckRecord::identity("inverse_route", &case, distance(&direct.op, &route), tol)
                        .with_norms(op_norm(&direct.op), op_norm(&route)),
                ),
                Err(Error::SingularOperator { margin, .. }) => {
                    rep.push(CheckRecord::identity("inverse_route", &case, f64::INFINITY, tol).with_note(format!("composed map singular ({margin:e})")))
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(rep)
}

// ------------------------------------------------------------- sandwich

/// `w^γ`: interaction entries multiplied by `χ̄_γ(r + ω_J) χ̄_γ(r + ω_L)` and
/// free part `r χ_γ² + w_{0,0} χ̄_γ²`, so that `H[w^γ] = H[w]_{χ̄_γ, H_ph}`.
pub fn sandwich_kernel(w: &KernelSeq, family: &SmoothFamily, gamma: f64) -> Result<KernelSeq> {
    let n = w.nodes();
    let deg = w.z_degree();
    let r = w.r_grid();
    let grid = w.grid();
    let (cb, cbd) = (|x: f64| family.chibar(gamma, x), |x: f64| family.chibar_dr(gamma, x));
    let mut out = w.empty_like();
    for (key, ch) in w.entries() {
        let mut new = Channel::zeros(deg, n);
        if key.is_free() {
            for (i, &ri) in r.iter().enumerate() {
                let (c, cd) = (family.chi(gamma, ri), family.chi_dr(gamma, ri));
                let (b, bd) = (cb(ri), cbd(ri));
                for p in 0..=deg {
                    let (v, d) = (ch.value[p * n + i], ch.dr[p * n + i]);
                    let mut val = v * (b * b);
                    let mut der = d * (b * b) + v * (2.0 * b * bd);
                    if p == 0 {
                        val += ri * c * c;
                        der += c * c + 2.0 * ri * c * cd;
                    }
                    new.value[p * n + i] = val;
                    new.dr[p * n + i] = der;
                }
            }
        } else {
            let (ej, el) = (key.create_energy(grid), key.annihilate_energy(grid));
            for (i, &ri) in r.iter().enumerate() {
                let g = cb(ri + ej) * cb(ri + el);
                let gd = cbd(ri + ej) * cb(ri + el) + cb(ri + ej) * cbd(ri + el);
                for p in 0..=deg {
                    let (v, d) = (ch.value[p * n + i], ch.dr[p * n + i]);
                    new.value[p * n + i] = v * g;
                    new.dr[p * n + i] = d * g + v * gd;
                }
            }
        }
        out.insert(key.clone(), new)?;
    }
    Ok(out)
}

/// The identities relating the cutoffs at `α`, `β` and `α + β` through the
/// sandwiched kernel and the overlap functions `X`, `X̄`.
pub fn sandwich_suite(ctx: &FlowContext, w: &KernelSeq, ma: usize, mb: usize, zs: &[C64]) -> Result<FlowReport> {
    ctx.check_scale(ma + mb)?;
    let mut rep = FlowReport::new("sandwich");
    let tol = ctx.cfg.identity_tol;
    let thr = ctx.cfg.svd_threshold;
    let basis = &ctx.basis;
    let full = basis.full_support();
    let hph = ctx.hph_on(&full);
    let (alpha, beta) = (ctx.alpha(ma), ctx.alpha(mb));
    let ov = ctx.family.overlap(alpha, beta);
    let xp = cutoff_pair_from(basis, &full, |r| ov.x(r), |r| ov.xbar(r));
    let ca = chi_operator(&ctx.family, alpha, basis, &full);
    let cab = chi_operator(&ctx.family, alpha + beta, basis, &full);
    let wab = sandwich_kernel(w, &ctx.family, alpha + beta)?;
    let case0 = format!("m=({ma},{mb})");
    let id = LinOp::identity(basis, &full);
    let xx = &(&xp.chi * &xp.chi) + &(&xp.chibar * &xp.chibar);
    rep.push(CheckRecord::identity("overlap_pythagoras", &case0, distance(&xx, &id), tol));

    let rec = |name: &str, case: &str, l: &LinOp, r: &LinOp| {
        CheckRecord::identity(name, case, distance(l, r), tol).with_norms(op_norm(l), op_norm(r))
    };
    for &z in zs {
        let case = format!("{case0}, z={z:.5}");
        let h = quantize(w, z, basis)?;
        let h2 = quantize(&wab, z, basis)?;
        let (w00, _) = quantize_split(w, z, basis)?;
        let (w00ab, _) = quantize_split(&wab, z, basis)?;

        let in_ab = FeshbachInput::new(h.clone(), hph.clone(), cab.chi.clone(), cab.chibar.clone())?;
        let qab = &in_ab.subspaces.chibar_support;
        rep.push(rec("sandwich_kernel", &case, &in_ab.hbar(), &h2.restrict_to(qab)?));

        let in_a = FeshbachInput::new(h.clone(), hph.clone(), ca.chi.clone(), ca.chibar.clone())?.with_threshold(thr);
        let in_x = FeshbachInput::new(h2.clone(), hph.clone(), xp.chi.clone(), xp.chibar.clone())?.with_threshold(thr);
        rep.push(rec("sandwich_hbar", &case, &in_a.hbar(), &in_x.hbar()));

        let d1 = delta_op(&hph, &w00, &ca.chi, &ca.chibar)?;
        let d2 = delta_op(&hph, &w00ab, &xp.chi, &xp.chibar)?;
        rep.push(rec("sandwich_delta", &case, &d1, &d2));

        match (f_op(&hph, &w00, &ca.chi, &ca.chibar, thr), f_op(&hph, &w00ab, &xp.chi, &xp.chibar, thr)) {
            (Ok((f1, _)), Ok((f2, _))) => rep.push(rec("sandwich_f", &case, &f1, &f2)),
            (Err(Error::SingularOperator { margin, .. }), _) | (_, Err(Error::SingularOperator { margin, .. })) => {
                rep.push(skipped_domain("sandwich_f", &case, format!("Delta singular ({margin:e})")))
            }
            (Err(e), _) | (_, Err(e)) => return Err(e),
        }

        // R̂_α(H)_{χ̄_β, H_ph} = e^α Γ F_{X,H_ph}(H[w^{α+β}]) Γ*, on Ran χ̄_β ∩ P'
        let lhs = (|| -> Result<LinOp> {
            let r = rescaled_fs(ctx, &h, ma)?.op;
            let t = ctx.hph_on(r.rows());
            FeshbachInput::from_family(r, t, &ctx.family, beta).map(|i| i.hbar())
        })();
        let rhs = fs_map(&in_x).map(|res| rescale(&res.f, ma));
        match (lhs, rhs) {
            (Ok(l), Ok(r)) => {
                let common = l.rows().intersect(r.rows());
                rep.push(rec("sandwich_rescaled", &case, &l.restrict_to(&common)?, &r.restrict_to(&common)?));
            }
            (Err(Error::NotInDomain(why)), _) | (_, Err(Error::NotInDomain(why))) => {
                rep.push(skipped_domain("sandwich_rescaled", &case, why))
            }
            (Err(e), _) | (_, Err(e)) => return Err(e),
        }
    }
    Ok(rep)
}

// ------------------------------------------------------ cocycle and flow

/// Settings of the kernel fits used by the flow suites.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSettings {
    pub z_degree: usize,
    /// Order cap of the fitted kernel; `None` means `2·n_max`.
    pub m_max: Option<usize>,
    /// Points on the circle `|z| = ¼`, plus the centre.
    pub z_points: usize,
    /// A fit worse than this makes the conditional conclusions vacuous.
    pub max_residual: f64,
    /// Step of the finite-difference Lipschitz estimate.
    pub fd_step: f64,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self { z_degree: 20, m_max: None, z_points: 32, max_residual: 1e-6, fd_step: 1e-6 }
    }
}

impl FitSettings {
    fn template(&self, w: &KernelSeq, basis: &FockBasis) -> FitTemplate {
        FitTemplate::like(w, self.m_max.unwrap_or(2 * basis.n_max()), self.z_degree)
    }
}

/// Fit of `z ↦ A(z)` on the `z` grid, on the support of `A`.
pub fn fit_family(ctx: &FlowContext, fam: &dyn OperatorFamily, w_like: &KernelSeq, set: &FitSettings) -> Result<FitResult> {
    let targets = z_grid(set.z_points).into_iter().map(|z| Ok((z, fam.at(z)?))).collect::<Result<Vec<_>>>()?;
    fit_kernel(&targets, &set.template(w_like, &ctx.basis), &ctx.basis, &FitOptions::default())
}

/// `max_z ‖B(z) − A(z)‖` over `zs`.
fn family_distance(a: &dyn OperatorFamily, b: &dyn OperatorFamily, zs: &[C64]) -> Result<f64> {
    zs.iter().try_fold(0.0_f64, |acc, &z| Ok(acc.max(distance(&a.at(z)?, &b.at(z)?))))
}

/// `A(z) + t·D` for a fixed operator `D`.
struct Shifted<'a> {
    inner: &'a dyn OperatorFamily,
    dir: &'a LinOp,
    t: f64,
}

impl OperatorFamily for Shifted<'_> {
    fn support(&self) -> Support {
        self.inner.support()
    }

    fn at(&self, z: C64) -> Result<LinOp> {
        Ok(&self.inner.at(z)? + &self.dir.scale(C64::new(self.t, 0.0)))
    }
}

/// Unit perturbation directions on `s`: the vacuum projector and a
/// normalized off-diagonal coupling to the vacuum.
fn directions(basis: &Arc<FockBasis>, s: &Support) -> Vec<LinOp> {
    let v = basis.vacuum_index();
    let mut proj = DMatrix::zeros(s.len(), s.len());
    let pv = s.position(v).expect("vacuum in support");
    proj[(pv, pv)] = ONE;
    let mut hop = DMatrix::zeros(s.len(), s.len());
    for k in 0..s.len() {
        if k != pv {
            hop[(pv, k)] = ONE;
            hop[(k, pv)] = ONE;
        }
    }
    let hop = LinOp::new(basis.clone(), s.clone(), s.clone(), hop).unwrap();
    let hn = op_norm(&hop).max(f64::MIN_POSITIVE);
    vec![LinOp::new(basis.clone(), s.clone(), s.clone(), proj).unwrap(), hop.scale(C64::new(1.0 / hn, 0.0))]
}

/// Cocycle `E_{α+β,w} = E_{α,w} ∘ E_{β,w̃}` and flow `R_β ∘ R_α = R_{α+β}`.
///
/// The exact route feeds `R_α(H[w])` itself to the second step. The fitted
/// route replaces it by `H[w̃]` and widens the tolerances by
/// `L·δ_fit`, with `δ_fit` the largest measured operator distance between
/// the two and `L` a finite-difference Lipschitz constant of the pipeline.
pub fn cocycle_flow_suite(
    ctx: &FlowContext,
    w: &KernelSeq,
    ma: usize,
    mb: usize,
    zetas: &[C64],
    set: &FitSettings,
) -> Result<FlowReport> {
    ctx.check_scale(ma + mb)?;
    let mut rep = FlowReport::new("cocycle-flow");
    let cfg = &ctx.cfg;
    let basis = &ctx.basis;
    let (alpha, beta) = (ctx.alpha(ma), ctx.alpha(mb));
    let xi = ctx.norms.xi;
    let case0 = format!("m=({ma},{mb})");

    // round trip of a kernel that lies inside the template
    let fam_w = KernelFamily::new(w, basis);
    let rt = fit_family(ctx, &fam_w, w, set)?;
    rep.push(CheckRecord::identity("fit_round_trip", &case0, rt.max_residual(), 1e-9));

    let nw = kernel_norms(w, &ctx.norms);
    let cw = specrg_conditions(alpha, xi, cfg.r_z, &nw, &format!("{case0}, w at alpha"));
    let ok_w = holds(&cw, "cond_contraction") && holds(&cw, "cond_radius") && holds(&cw, "cond_hypo");
    for c in cw {
        rep.condition(c);
    }

    let a_fam = RenormalizedFamily::new(ctx, &fam_w, ma)?;
    let p_prime = a_fam.support();
    let fit = fit_family(ctx, &a_fam, w, set)?;
    let fit_res = fit.max_residual();
    rep.push(CheckRecord::bound("fit_residual", &case0, fit_res, set.max_residual).with_note(format!(
        "irreducible {:.2e}, recentre shift {:.2e}, filled {}",
        fit.irreducible, fit.recenter_shift, fit.filled
    )));
    if !(fit_res <= set.max_residual) {
        return Err(Error::FitResidualTooLarge { residual: fit_res, limit: set.max_residual });
    }
    let wt = fit.kernel;
    let nt = kernel_norms(&wt, &ctx.norms);
    let ct = specrg_conditions(beta, xi, cfg.r_z, &nt, &format!("{case0}, fitted at beta"));
    let ok_t = holds(&ct, "cond_contraction") && holds(&ct, "cond_radius") && holds(&ct, "cond_hypo");
    for c in ct {
        rep.condition(c);
    }
    let hyp = ok_w && ok_t;
    let fam_t = KernelFamily::on(&wt, basis, p_prime.clone());
    let grid_pts = z_grid(set.z_points);
    let mut delta_fit = family_distance(&a_fam, &fam_t, &grid_pts)?;

    let dirs = directions(basis, &p_prime);
    for &zeta in zetas {
        let case = format!("{case0}, zeta={zeta:.5}");
        let whole = renorm_map(ctx, &fam_w, ma + mb, zeta)?;
        rep.push(CheckRecord::identity("vacuum_law", &case, whole.vacuum_residual, cfg.fp_tol));

        // exact route
        let step_b = renorm_map(ctx, &a_fam, mb, zeta)?;
        let e_a = solve_e(ctx, &fam_w, ma, step_b.trace.z)?;
        rep.push(CheckRecord::conditional("cocycle_exact", &case, (whole.trace.z - e_a.z).norm(), cfg.fp_tol, hyp));
        rep.push(
            CheckRecord::conditional("flow_exact", &case, distance(&step_b.op, &whole.op), cfg.flow_tol, hyp)
                .with_norms(op_norm(&step_b.op), op_norm(&whole.op)),
        );
        rep.push(CheckRecord::identity("vacuum_law_composed", &case, step_b.vacuum_residual, cfg.fp_tol));

        // fitted route
        let fitted = renorm_map(ctx, &fam_t, mb, zeta)?;
        let e_fit = solve_e(ctx, &fam_w, ma, fitted.trace.z)?.z;
        delta_fit = delta_fit.max(family_distance(&a_fam, &fam_t, &[fitted.trace.z, step_b.trace.z])?);
        let (mut l_e, mut l_r) = (0.0_f64, 0.0_f64);
        for d in &dirs {
            let moved = Shifted { inner: &fam_t, dir: d, t: set.fd_step };
            let r2 = renorm_map(ctx, &moved, mb, zeta)?;
            let e2 = solve_e(ctx, &fam_w, ma, r2.trace.z)?.z;
            l_e = l_e.max((e2 - e_fit).norm() / set.fd_step);
            l_r = l_r.max(distance(&r2.op, &fitted.op) / set.fd_step);
        }
        let (slack_e, slack_r) = (l_e * delta_fit, l_r * delta_fit);
        rep.push(
            CheckRecord::conditional("cocycle_fitted", &case, (whole.trace.z - e_fit).norm(), cfg.fp_tol + slack_e, hyp)
                .with_note(format!("slack {slack_e:.3e} = {l_e:.3e} x {delta_fit:.3e}")),
        );
        rep.push(
            CheckRecord::conditional("flow_fitted", &case, distance(&fitted.op, &whole.op), cfg.flow_tol + slack_r, hyp)
                .with_note(format!("slack {slack_r:.3e} = {l_r:.3e} x {delta_fit:.3e}")),
        );
        rep.push(CheckRecord::identity("vacuum_law_fitted", &case, fitted.vacuum_residual, cfg.fp_tol));
    }
    rep.notes.push(format!("fit distance {delta_fit:.3e} on P' of dimension {}", p_prime.len()));
    Ok(rep)
}

// ------------------------------------------------------------ iteration

/// One step of the kernel iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterStep {
    pub k: usize,
    /// `‖(w^{(k)})_(I)‖^{(ξ)}_Z`.
    pub interaction_z: f64,
    /// Ratio to the previous step.
    pub ratio: Option<f64>,
    pub partial: PartialNorms,
    /// Fit that produced this kernel (absent at `k = 0`).
    pub fit_residual: Option<f64>,
    pub irreducible: Option<f64>,
    pub recenter_shift: Option<f64>,
    pub membership: Option<Membership>,
}

/// Trace of `w^{(k+1)} = fit(R_α(H[w^{(k)}]))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterTrace {
    pub m: usize,
    pub steps: Vec<IterStep>,
    /// Why the iteration ended before `n_steps`, if it did.
    pub stopped: Option<String>,
}

impl IterTrace {
    /// `‖(w^{(k)})_(I)‖` strictly decreasing over `k = 1..`.
    pub fn decreasing_from(&self, k0: usize) -> bool {
        self.steps.windows(2).filter(|p| p[0].k >= k0).all(|p| p[1].interaction_z < p[0].interaction_z)
    }
}

/// Renormalizes `w` repeatedly at scale `mδ`.
pub fn iterate_flow(
    ctx: &FlowContext,
    w: &KernelSeq,
    m: usize,
    n_steps: usize,
    set: &FitSettings,
    polydisc: Option<&PolydiscSpec>,
) -> Result<IterTrace> {
    ctx.check_scale(m)?;
    let step = |k: usize, w: &KernelSeq, prev: Option<f64>, fit: Option<&FitResult>| {
        let interaction_z = interaction_norm_z(w, &ctx.norms);
        IterStep {
            k,
            interaction_z,
            ratio: prev.filter(|&p| p > 0.0).map(|p| interaction_z / p),
            partial: partial_norms(&w.minus_free(), &ctx.norms),
            fit_residual: fit.map(FitResult::max_residual),
            irreducible: fit.map(|f| f.irreducible),
            recenter_shift: fit.map(|f| f.recenter_shift),
            membership: polydisc.map(|p| polydisc_member(w, p, &ctx.norms)),
        }
    };
    let mut trace = IterTrace { m, steps: vec![step(0, w, None, None)], stopped: None };
    let mut cur = w.clone();
    for k in 1..=n_steps {
        let fam = KernelFamily::new(&cur, &ctx.basis);
        let next = RenormalizedFamily::new(ctx, &fam, m).and_then(|a| fit_family(ctx, &a, &cur, set));
        let fit = match next {
            Ok(f) if f.max_residual() <= set.max_residual => f,
            Ok(f) => {
                trace.stopped = Some(format!("step {k}: fit residual {:.3e} above {:.1e}", f.max_residual(), set.max_residual));
                break;
            }
            Err(e) => {
                trace.stopped = Some(format!("step {k}: {e}"));
                break;
            }
        };
        let prev = trace.steps.last().map(|s| s.interaction_z);
        trace.steps.push(step(k, &fit.kernel, prev, Some(&fit)));
        cur = fit.kernel;
    }
    Ok(trace)
}

/// Report form of [`iterate_flow`]: monotone decrease over `k = 1..n_steps`.
pub fn iterate_suite(ctx: &FlowContext, w: &KernelSeq, m: usize, n_steps: usize, set: &FitSettings) -> Result<(FlowReport, IterTrace)> {
    let trace = iterate_flow(ctx, w, m, n_steps, set, None)?;
    let mut rep = FlowReport::new("iterate");
    let case = format!("m={m}, steps={n_steps}");
    for s in &trace.steps[1..] {
        rep.push(CheckRecord::bound("iterate_fit_residual", &format!("{case}, k={}", s.k), s.fit_residual.unwrap_or(0.0), set.max_residual));
    }
    rep.push(
        CheckRecord::flag("iterate_completed", &case, trace.steps.len() == n_steps + 1)
            .with_note(trace.stopped.clone().unwrap_or_else(|| "all steps ran".into())),
    );
    rep.push(CheckRecord::flag("interaction_decreasing", &case, trace.decreasing_from(1)));
    Ok((rep, trace))
}
