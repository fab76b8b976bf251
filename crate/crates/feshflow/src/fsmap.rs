//! The smooth Feshbach–Schur map and the identities around it.
//!
//! All cutoffs are diagonal in the Fock basis, so `Ran χ`, `Ran χ̄` and the
//! overlap are coordinate subspaces of the operator's support.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use crate::cutoffs::{chi_operator, CutoffPair, SmoothFamily};
use crate::error::{Error, Result};
use crate::fockspace::{
    bounded_inverse, distance, kernel_dim, op_norm, singular_values, FockBasis, LinOp, Support, SubspaceTriple,
    DEFAULT_SVD_THRESHOLD,
};
use crate::report::CheckRecord;

/// Tolerance on `χ² + χ̄² = 1` and on the commutators with `T`.
pub const HYPOTHESIS_TOL: f64 = 1e-12;

/// Operator, auxiliary operator and cutoff pair, all on one square support.
#[derive(Clone, Debug)]
pub struct FeshbachInput {
    pub h: LinOp,
    pub t: LinOp,
    pub chi: LinOp,
    pub chibar: LinOp,
    pub subspaces: SubspaceTriple,
    pub threshold: f64,
}

fn check_cutoff(op: &LinOp, name: &str) -> Result<Vec<f64>> {
    if !op.is_diagonal() {
        return Err(Error::PreconditionViolated(format!("{name} must be diagonal in the Fock basis")));
    }
    op.diag_values()
        .into_iter()
        .map(|c| {
            if c.im != 0.0 || c.re < 0.0 {
                Err(Error::PreconditionViolated(format!("{name} must be real and non-negative")))
            } else {
                Ok(c.re)
            }
        })
        .collect()
}

impl FeshbachInput {
    pub fn new(h: LinOp, t: LinOp, chi: LinOp, chibar: LinOp) -> Result<Self> {
        let s = h.rows().clone();
        for (op, name) in [(&h, "H"), (&t, "T"), (&chi, "chi"), (&chibar, "chibar")] {
            if op.rows() != &s || op.cols() != &s {
                return Err(Error::SupportMismatch(format!("{name} does not live on the support of H")));
            }
        }
        let cv = check_cutoff(&chi, "chi")?;
        let bv = check_cutoff(&chibar, "chibar")?;
        if let Some(bad) = cv.iter().zip(&bv).map(|(c, b)| (c * c + b * b - 1.0).abs()).find(|&e| e > HYPOTHESIS_TOL) {
            return Err(Error::PreconditionViolated(format!("chi^2 + chibar^2 deviates from 1 by {bad:e}")));
        }
        let tn = op_norm(&t).max(1.0);
        for (c, name) in [(&chi, "chi"), (&chibar, "chibar")] {
            let comm = distance(&(c * &t), &(&t * c));
            if comm > HYPOTHESIS_TOL * tn {
                return Err(Error::PreconditionViolated(format!("T does not commute with {name} ({comm:e})")));
            }
        }
        let subspaces = SubspaceTriple::from_values(&s, &cv, &bv);
        Ok(Self { h, t, chi, chibar, subspaces, threshold: DEFAULT_SVD_THRESHOLD })
    }

    /// Input with `χ = χ_α(H_ph)` on the support of `h`.
    pub fn from_family(h: LinOp, t: LinOp, family: &SmoothFamily, alpha: f64) -> Result<Self> {
        let CutoffPair { chi, chibar, .. } = chi_operator(family, alpha, h.basis(), h.rows());
        Self::new(h, t, chi, chibar)
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn support(&self) -> &Support {
        self.h.rows()
    }

    pub fn basis(&self) -> &Arc<FockBasis> {
        self.h.basis()
    }

    /// `W_T = H − T`.
    pub fn w(&self) -> LinOp {
        &self.h - &self.t
    }

    /// `H_{χ̄,T} = T|_χ̄ + χ̄ W_T χ̄` on `Ran χ̄`.
    pub fn hbar(&self) -> LinOp {
        let q = &self.subspaces.chibar_support;
        let cwc = &(&self.chibar * &self.w()) * &self.chibar;
        let t = self.t.restrict_to(q).unwrap();
        &t + &cwc.restrict_to(q).unwrap()
    }
}

/// Facts established by [`check_domain`].
#[derive(Clone, Debug)]
pub struct Domain {
    /// `(H_{χ̄,T})^{-1}` on `Ran χ̄`.
    pub hbar_inv: LinOp,
    /// `‖(H_{χ̄,T})^{-1}‖`.
    pub inv_norm: f64,
    /// `‖χ̄ (H_{χ̄,T})^{-1} χ̄ W_T χ‖`.
    pub coupling_norm: f64,
    /// Smallest singular value of `H_{χ̄,T}`.
    pub margin: f64,
    /// Smallest singular value of `T|_χ̄`.
    pub t_margin: f64,
}

/// Verifies that `H_{χ̄,T}` is invertible on `Ran χ̄`.
pub fn check_domain(input: &FeshbachInput) -> Result<Domain> {
    let q = &input.subspaces.chibar_support;
    let tq = input.t.restrict_to(q)?;
    let t_margin = match bounded_inverse(&tq, input.threshold) {
        Ok(inv) => inv.margin,
        Err(Error::SingularOperator { margin, .. }) => {
            return Err(Error::NotInDomain(format!("T is not invertible on Ran(chibar) (margin {margin:e})")))
        }
        Err(e) => return Err(e),
    };
    let hbar = input.hbar();
    let inv = match bounded_inverse(&hbar, input.threshold) {
        Ok(inv) => inv,
        Err(Error::SingularOperator { margin, threshold }) => {
            return Err(Error::NotInDomain(format!(
                "H_chibar is singular (margin {margin:e}, threshold {threshold:e})"
            )))
        }
        Err(e) => return Err(e),
    };
    let inv_norm = if q.is_empty() { 0.0 } else { 1.0 / inv.margin };
    let p = &input.subspaces.chi_support;
    let s = input.support();
    let g = inv.op.extend(s, s)?;
    let coupling = &(&(&(&input.chibar * &g) * &input.chibar) * &input.w()) * &input.chi;
    let coupling_norm = op_norm(&coupling.restrict(s, p)?);
    Ok(Domain { hbar_inv: inv.op, inv_norm, coupling_norm, margin: inv.margin, t_margin })
}

/// Output of the map.
#[derive(Clone, Debug)]
pub struct FeshbachResult {
    /// `F_{χ,T}(H)` on `Ran χ`.
    pub f: LinOp,
    pub inv_norm_hbar: f64,
    pub domain: Domain,
    /// Frobenius distance to an independent full-space assembly.
    pub formula_residual: f64,
}

/// `F_{χ,T}(H) = T|_χ + χWχ − χWχ̄ (H_{χ̄,T})^{-1} χ̄Wχ` on `Ran χ`.
pub fn fs_map(input: &FeshbachInput) -> Result<FeshbachResult> {
    let domain = check_domain(input)?;
    let p = &input.subspaces.chi_support;
    let q = &input.subspaces.chibar_support;
    let w = input.w();
    let cw = &input.chi * &w;
    let wc = &w * &input.chi;
    let chi_w_chi = (&cw * &input.chi).restrict_to(p)?;
    let upper = (&cw * &input.chibar).restrict(p, q)?;
    let lower = (&input.chibar * &wc).restrict(q, p)?;
    let t = input.t.restrict_to(p)?;
    let quad = &(&upper * &domain.hbar_inv) * &lower;
    let f = &(&t + &chi_w_chi) - &quad;

    // same formula with the inverse zero-padded to the full support
    let s = input.support();
    let g = domain.hbar_inv.extend(s, s)?;
    let full = &(&input.t + &(&cw * &input.chi))
        - &(&(&(&(&cw * &input.chibar) * &g) * &input.chibar) * &wc);
    let formula_residual = (&full.restrict_to(p)? - &f).frobenius();
    Ok(FeshbachResult { f, inv_norm_hbar: domain.inv_norm, domain, formula_residual })
}

fn is_invertible(op: &LinOp, threshold: f64) -> (bool, f64) {
    let sv = singular_values(op);
    match (sv.first(), sv.last()) {
        (Some(&max), Some(&min)) => (min > threshold * max, min),
        _ => (true, f64::INFINITY),
    }
}

/// Isospectrality: invertibility equivalence, inverse formula, kernel dimensions.
pub fn isospectrality_check(input: &FeshbachInput, tol: f64) -> Result<Vec<CheckRecord>> {
    let res = fs_map(input)?;
    let thr = input.threshold;
    let (h_inv, h_margin) = is_invertible(&input.h, thr);
    let (f_inv, f_margin) = is_invertible(&res.f, thr);
    let case = format!("dim={}, sigma_min(H)={h_margin:.3e}, sigma_min(F)={f_margin:.3e}", input.support().len());
    let mut out = vec![CheckRecord::flag("invertibility_equivalence", &case, h_inv == f_inv)];
    if h_inv && f_inv {
        let p = &input.subspaces.chi_support;
        let q = &input.subspaces.chibar_support;
        let s = input.support();
        let hinv = bounded_inverse(&input.h, thr)?.op;
        let tinv = bounded_inverse(&input.t.restrict_to(q)?, thr)?.op.extend(s, s)?;
        let candidate = &(&(&input.chi * &hinv) * &input.chi) + &(&(&input.chibar * &tinv) * &input.chibar);
        let candidate = candidate.restrict_to(p)?;
        let prod = &res.f * &candidate;
        let resid = distance(&prod, &LinOp::identity(input.basis(), p));
        out.push(CheckRecord::identity("inverse_formula", &case, resid, tol).with_norms(op_norm(&res.f), op_norm(&candidate)));
    }
    let kh = kernel_dim(&input.h, thr);
    let kf = kernel_dim(&res.f, thr);
    out.push(
        CheckRecord::flag("kernel_dimension", &format!("{case}, dim ker H={kh}, dim ker F={kf}"), kh == kf)
            .with_norms(kh as f64, kf as f64),
    );
    Ok(out)
}

fn require_diagonal(op: &LinOp, name: &str) -> Result<()> {
    if op.is_diagonal() {
        Ok(())
    } else {
        Err(Error::PreconditionViolated(format!("{name} must be diagonal")))
    }
}

/// T-independence: `F_{χ,S}(H) = F_{χ,T}(H)` when `S = T` on the overlap.
pub fn ind_check(input: &FeshbachInput, s: &LinOp, tol: f64) -> Result<Vec<CheckRecord>> {
    require_diagonal(&input.t, "T")?;
    require_diagonal(s, "S")?;
    let ov = &input.subspaces.overlap_support;
    let dev = distance(&input.t.restrict_to(ov)?, &s.restrict_to(ov)?);
    if dev != 0.0 {
        return Err(Error::PreconditionViolated(format!("S differs from T on the overlap by {dev:e}")));
    }
    let other = FeshbachInput { t: s.clone(), ..input.clone() };
    let ft = fs_map(input);
    let fs = fs_map(&other);
    let mut out = vec![CheckRecord::flag("domain_agreement", "", ft.is_ok() == fs.is_ok())];
    if let (Ok(ft), Ok(fs)) = (ft, fs) {
        out.push(
            CheckRecord::identity("map_equality", "", distance(&ft.f, &fs.f), tol)
                .with_norms(op_norm(&ft.f), op_norm(&fs.f)),
        );
        let (wt, ws) = (input.w(), other.w());
        let lhs = &(&input.chi * &wt) * &input.chibar;
        let rhs = &(&input.chi * &ws) * &input.chibar;
        out.push(CheckRecord::identity("coupling_equality", "", distance(&lhs, &rhs), tol));
        out.push(CheckRecord::identity("hbar_equality", "", distance(&input.hbar(), &other.hbar()), tol));
    }
    Ok(out)
}

/// `Δ_{χ,T}(S) = Tχ² + Sχ̄²`.
pub fn delta_op(t: &LinOp, s: &LinOp, chi: &LinOp, chibar: &LinOp) -> Result<LinOp> {
    for (op, name) in [(t, "T"), (s, "S"), (chi, "chi"), (chibar, "chibar")] {
        require_diagonal(op, name)?;
    }
    Ok(&(&(t * chi) * chi) + &(&(s * chibar) * chibar))
}

/// `f_{χ,T}(S) = (T Δ^{-1})|_χ̄ ⊕ 1` together with `Δ^{-1}` zero-padded off `Ran χ̄`.
pub fn f_op(t: &LinOp, s: &LinOp, chi: &LinOp, chibar: &LinOp, threshold: f64) -> Result<(LinOp, LinOp)> {
    let delta = delta_op(t, s, chi, chibar)?;
    let sup = t.rows().clone();
    let cb: Vec<f64> = chibar.diag_values().iter().map(|c| c.re).collect();
    let q = SubspaceTriple::from_values(&sup, &cb, &cb).chibar_support;
    let dinv = bounded_inverse(&delta.restrict_to(&q)?, threshold)?.op;
    let td = &t.restrict_to(&q)? * &dinv;
    let comp = sup.difference(&q);
    let mut f = td.extend(&sup, &sup)?.into_matrix();
    for &i in comp.indices() {
        let a = sup.position(i).unwrap();
        f[(a, a)] = C64::new(1.0, 0.0);
    }
    let f = LinOp::new(t.basis().clone(), sup.clone(), sup.clone(), f)?;
    Ok((f, dinv.extend(&sup, &sup)?))
}

/// Residuals of the identities trading `W_T` for `W_S`.
pub fn trade_identity_check(input: &FeshbachInput, s: &LinOp, tol: f64) -> Result<Vec<CheckRecord>> {
    let dom = check_domain(input)?;
    let (f, dinv) = f_op(&input.t, s, &input.chi, &input.chibar, input.threshold)?;
    let sup = input.support();
    let (chi, cb) = (&input.chi, &input.chibar);
    let wt = input.w();
    let ws = &input.h - s;
    let g = dom.hbar_inv.extend(sup, sup)?;
    let hb = input.hbar().extend(sup, sup)?;
    let smt = s - &input.t;
    let id = LinOp::identity(input.basis(), sup);
    let one_minus_f = &id - &f;

    let lhs1 = &(cb * &wt) - &(&(cb * &ws) * &f);
    let rhs1 = &(&(&hb * &smt) * &dinv) * cb;
    let lhs2 = &(&wt * cb) - &(&(&f * &ws) * cb);
    let rhs2 = &(&(&smt * &dinv) * cb) * &hb;
    let rhs3 = &(&(cb * &smt) * &dinv) * cb;
    let lhs4 = &(&(&(&(chi * &wt) * cb) * &g) * cb) * &(&wt * chi);
    let lhs4 = &lhs4 - &(&(&(&(&(&(chi * &f) * &ws) * cb) * &g) * cb) * &(&(&ws * &f) * chi));
    let rhs4 = &(&(&(&(chi * &f) * &ws) * &one_minus_f) * chi) + &(&(&(chi * &one_minus_f) * &wt) * chi);

    let rec = |name: &str, l: &LinOp, r: &LinOp| {
        CheckRecord::identity(name, "", distance(l, r), tol).with_norms(op_norm(l), op_norm(r))
    };
    Ok(vec![
        rec("trade_left", &lhs1, &rhs1),
        rec("trade_right", &lhs2, &rhs2),
        rec("one_minus_f", &one_minus_f, &rhs3),
        rec("quadratic_trade", &lhs4, &rhs4),
    ])
}

/// `F_{χ,T}(H)` rebuilt from `W_S` and `f = f_{χ,T}(S)`.
pub fn reexpress(input: &FeshbachInput, s: &LinOp) -> Result<LinOp> {
    let dom = check_domain(input)?;
    let (f, _) = f_op(&input.t, s, &input.chi, &input.chibar, input.threshold)?;
    let sup = input.support();
    let (chi, cb) = (&input.chi, &input.chibar);
    let ws = &input.h - s;
    let g = dom.hbar_inv.extend(sup, sup)?;
    let cfw = &(chi * &f) * &ws;
    let wfc = &(&ws * &f) * chi;
    let out = &(&(s * &f) + &(&(&cfw * &f) * chi)) - &(&(&(&(&cfw * cb) * &g) * cb) * &wfc);
    out.restrict_to(&input.subspaces.chi_support)
}

pub fn reexpress_check(input: &FeshbachInput, s: &LinOp, tol: f64) -> Result<Vec<CheckRecord>> {
    let f = fs_map(input)?.f;
    let alt = reexpress(input, s)?;
    Ok(vec![CheckRecord::identity("reexpression", "", distance(&f, &alt), tol).with_norms(op_norm(&f), op_norm(&alt))])
}

/// Sharp Feshbach–Schur map `PHP − PHP⊥(P⊥HP⊥)^{-1}P⊥HP` on `Ran P`.
pub fn sharp_fs_map(h: &LinOp, p: &LinOp, threshold: f64) -> Result<LinOp> {
    let vals = check_cutoff(p, "P")?;
    if vals.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::PreconditionViolated("P must be a 0/1 projection".into()));
    }
    let sup = h.rows();
    let on: Vec<usize> = sup.indices().iter().zip(&vals).filter(|(_, &v)| v == 1.0).map(|(&i, _)| i).collect();
    let ran = Support::from_indices(sup.ambient(), on);
    let perp = sup.difference(&ran);
    let inv = bounded_inverse(&h.restrict_to(&perp)?, threshold)?.op;
    let php = h.restrict_to(&ran)?;
    Ok(&php - &(&(&h.restrict(&ran, &perp)? * &inv) * &h.restrict(&perp, &ran)?))
}

/// Embedding `J = (χ, χ̄)` into `Ran χ ⊕ Ran χ̄`, as a dense matrix.
fn embedding(input: &FeshbachInput) -> DMatrix<C64> {
    let sup = input.support();
    let (p, q) = (&input.subspaces.chi_support, &input.subspaces.chibar_support);
    let mut j = DMatrix::zeros(p.len() + q.len(), sup.len());
    for (a, &i) in p.indices().iter().enumerate() {
        j[(a, sup.position(i).unwrap())] = input.chi.entry(i, i);
    }
    for (b, &i) in q.indices().iter().enumerate() {
        j[(p.len() + b, sup.position(i).unwrap())] = input.chibar.entry(i, i);
    }
    j
}

fn mat_norm(m: &DMatrix<C64>) -> f64 {
    if m.is_empty() {
        0.0
    } else {
        m.clone().singular_values().max()
    }
}

/// The lifted operator `Ĥ = T̂ + Ŵ` on `Ran χ ⊕ Ran χ̄`.
pub fn sharp_lift(input: &FeshbachInput) -> Result<DMatrix<C64>> {
    let sup = input.support();
    let (p, q) = (&input.subspaces.chi_support, &input.subspaces.chibar_support);
    let (np, nq) = (p.len(), q.len());
    let w = input.w();
    let blocks = [
        ((&(&input.chi * &w) * &input.chi).restrict(p, p)?, 0, 0),
        ((&(&input.chi * &w) * &input.chibar).restrict(p, q)?, 0, np),
        ((&(&input.chibar * &w) * &input.chi).restrict(q, p)?, np, 0),
        ((&(&input.chibar * &w) * &input.chibar).restrict(q, q)?, np, np),
    ];
    let mut hh = DMatrix::zeros(np + nq, np + nq);
    for (b, r0, c0) in blocks {
        hh.view_mut((r0, c0), b.matrix().shape()).copy_from(b.matrix());
    }
    let tp = input.t.restrict_to(p)?;
    let tq = input.t.restrict_to(q)?;
    let mut v = hh.view_mut((0, 0), (np, np));
    v += tp.matrix();
    let mut v = hh.view_mut((np, np), (nq, nq));
    v += tq.matrix();
    let _ = sup;
    Ok(hh)
}

/// Checks `J*J = 1`, `J*ĤJ = H` and `F_P̂(Ĥ) = F_{χ,T}(H)`.
pub fn sharp_embed_check(input: &FeshbachInput, tol_iso: f64, tol_lift: f64, tol_map: f64) -> Result<Vec<CheckRecord>> {
    let res = fs_map(input)?;
    let j = embedding(input);
    let jj = j.adjoint() * &j;
    let n = jj.nrows();
    let iso = mat_norm(&(&jj - DMatrix::<C64>::identity(n, n)));
    let hh = sharp_lift(input)?;
    let back = j.adjoint() * &hh * &j;
    let lift = mat_norm(&(&back - input.h.matrix()));
    let np = input.subspaces.chi_support.len();
    let nq = input.subspaces.chibar_support.len();
    let a = hh.view((0, 0), (np, np)).clone_owned();
    let b = hh.view((0, np), (np, nq)).clone_owned();
    let c = hh.view((np, 0), (nq, np)).clone_owned();
    let d = hh.view((np, np), (nq, nq)).clone_owned();
    let fp = if nq == 0 {
        a
    } else {
        let dinv = d.lu().try_inverse().ok_or(Error::SingularOperator { margin: 0.0, threshold: 0.0 })?;
        &a - &b * dinv * &c
    };
    let map = mat_norm(&(&fp - res.f.matrix()));
    let redundancy = (np + nq) as f64 - input.support().len() as f64;
    let case = format!("overlap redundancy {redundancy}");
    Ok(vec![
        CheckRecord::identity("isometry", &case, iso, tol_iso),
        CheckRecord::identity("lift", &case, lift, tol_lift).with_norms(mat_norm(&back), op_norm(&input.h)),
        CheckRecord::identity("sharp_equals_smooth", &case, map, tol_map).with_norms(mat_norm(&fp), op_norm(&res.f)),
    ])
}
