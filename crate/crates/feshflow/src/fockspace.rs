//! Truncated bosonic Fock space over a geometric one-particle grid.
//!
//! Modes sit on radial shells with frequencies `ω_j = e^{-jδ}`. The basis keeps
//! every occupation vector with at most `n_max` bosons and free energy
//! `Σ n_j ω_j ≤ 1`, so the reduced projection is the identity on it.
//! Operators are dense complex matrices between coordinate subspaces.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack used when comparing free energies against the cutoff `1`.
pub const ENERGY_SLACK: f64 = 1e-12;

/// Default relative threshold for invertibility decisions.
pub const DEFAULT_SVD_THRESHOLD: f64 = 1e-12;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// Geometric grid of radial shells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeGrid {
    delta: f64,
    j_max: usize,
    freqs: Vec<f64>,
    weights: Vec<f64>,
}

impl ModeGrid {
    /// Grid with `j_max + 1` shells at `ω_j = e^{-jδ}`.
    pub fn new(delta: f64, j_max: usize) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "delta",
                reason: format!("must be positive and finite, got {delta}"),
            });
        }
        if j_max == 0 {
            return Err(Error::InvalidParameter { name: "J", reason: "must be at least 1".into() });
        }
        let freqs: Vec<f64> = (0..=j_max).map(|j| (-(j as f64) * delta).exp()).collect();
        let shell = 4.0 * PI / 3.0 * (1.0 - (-3.0 * delta).exp());
        // q_j^2 = V_j / ω_j with V_j the shell volume below ω_j
        let weights = freqs.iter().map(|w| (shell * w * w).sqrt()).collect();
        Ok(Self { delta, j_max, freqs, weights })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Largest mode index `J`.
    pub fn j_max(&self) -> usize {
        self.j_max
    }

    pub fn modes(&self) -> usize {
        self.j_max + 1
    }

    pub fn frequency(&self, j: usize) -> f64 {
        self.freqs[j]
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.freqs
    }

    /// Operator quadrature weight `q_j` (shell volume and `|k|^{-1/2}` folded in).
    pub fn quad_weight(&self, j: usize) -> f64 {
        self.weights[j]
    }

    pub fn quad_weights(&self) -> &[f64] {
        &self.weights
    }

    /// Volume of the shell `e^{-δ}ω_j < |k| ≤ ω_j`.
    pub fn shell_volume(&self, j: usize) -> f64 {
        let w = self.freqs[j];
        4.0 * PI / 3.0 * w * w * w * (1.0 - (-3.0 * self.delta).exp())
    }

    /// Norm weight of mode `j` for the measure `d³k / |k|^{3+2μ}`.
    pub fn norm_weight(&self, j: usize, mu: f64) -> f64 {
        self.shell_volume(j) * self.freqs[j].powf(-(3.0 + 2.0 * mu))
    }

    pub fn check_mode(&self, j: usize) -> Result<()> {
        if j > self.j_max {
            Err(Error::ModeOutOfRange { mode: j, modes: self.modes() })
        } else {
            Ok(())
        }
    }
}

/// Truncated occupation-number basis.
#[derive(Clone)]
pub struct FockBasis {
    grid: ModeGrid,
    n_max: usize,
    states: Vec<Vec<u8>>,
    energies: Vec<f64>,
    index: HashMap<Vec<u8>, usize>,
}

impl fmt::Debug for FockBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FockBasis")
            .field("delta", &self.grid.delta)
            .field("J", &self.grid.j_max)
            .field("n_max", &self.n_max)
            .field("dim", &self.states.len())
            .finish()
    }
}

impl PartialEq for FockBasis {
    fn eq(&self, other: &Self) -> bool {
        self.grid == other.grid && self.n_max == other.n_max && self.states == other.states
    }
}

/// Enumerates every admissible occupation vector, ordered lexicographically.
pub fn build_basis(grid: &ModeGrid, n_max: usize) -> FockBasis {
    fn rec(
        grid: &ModeGrid,
        j: usize,
        left: usize,
        energy: f64,
        cur: &mut Vec<u8>,
        out: &mut Vec<Vec<u8>>,
    ) {
        if j == grid.modes() {
            out.push(cur.clone());
            return;
        }
        let w = grid.frequency(j);
        let mut k = 0usize;
        while k <= left && energy + k as f64 * w <= 1.0 + ENERGY_SLACK {
            cur[j] = k as u8;
            rec(grid, j + 1, left - k, energy + k as f64 * w, cur, out);
            k += 1;
        }
        cur[j] = 0;
    }
    let mut states = Vec::new();
    let mut cur = vec![0u8; grid.modes()];
    rec(grid, 0, n_max, 0.0, &mut cur, &mut states);
    states.sort();
    let energies = states.iter().map(|s| energy_of(grid, s)).collect();
    let index = states.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
    FockBasis { grid: grid.clone(), n_max, states, energies, index }
}

fn energy_of(grid: &ModeGrid, occ: &[u8]) -> f64 {
    occ.iter().zip(grid.frequencies()).map(|(&n, w)| n as f64 * w).sum()
}

impl FockBasis {
    pub fn grid(&self) -> &ModeGrid {
        &self.grid
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[Vec<u8>] {
        &self.states
    }

    pub fn state(&self, i: usize) -> &[u8] {
        &self.states[i]
    }

    /// Free energy `H_ph(n)` of state `i`.
    pub fn energy(&self, i: usize) -> f64 {
        self.energies[i]
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn vacuum_index(&self) -> usize {
        0
    }

    pub fn lookup(&self, occ: &[u8]) -> Option<usize> {
        self.index.get(occ).copied()
    }

    /// Index of the state obtained by lowering every mode index by `m`,
    /// if all occupied modes are `≥ m` and the image lies in the basis.
    pub fn shifted_index(&self, i: usize, m: usize) -> Option<usize> {
        let s = &self.states[i];
        if s[..m.min(s.len())].iter().any(|&n| n > 0) {
            return None;
        }
        let mut img = vec![0u8; s.len()];
        let keep = s.len().saturating_sub(m);
        img[..keep].copy_from_slice(&s[s.len() - keep..]);
        self.lookup(&img)
    }

    pub fn full_support(&self) -> Support {
        Support::full(self.dim())
    }

    /// Support of the states satisfying `pred(energy)`.
    pub fn support_where(&self, pred: impl Fn(f64) -> bool) -> Support {
        Support::from_mask(&self.energies.iter().map(|&e| pred(e)).collect::<Vec<_>>())
    }

    pub fn to_json(&self) -> BasisJson {
        BasisJson {
            delta: self.grid.delta,
            j_max: self.grid.j_max,
            n_max: self.n_max,
            states: self.states.clone(),
            energies: self.energies.clone(),
        }
    }

    /// Rebuilds a basis from its JSON form and checks the state list.
    pub fn from_json(js: &BasisJson) -> Result<Self> {
        let grid = ModeGrid::new(js.delta, js.j_max)?;
        let basis = build_basis(&grid, js.n_max);
        if basis.states != js.states {
            return Err(Error::InvalidParameter {
                name: "states",
                reason: "state list does not match the enumerated basis".into(),
            });
        }
        Ok(basis)
    }
}

/// JSON form of a basis: grid parameters plus the ordered state list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisJson {
    pub delta: f64,
    pub j_max: usize,
    pub n_max: usize,
    pub states: Vec<Vec<u8>>,
    pub energies: Vec<f64>,
}

/// A coordinate subspace, stored as sorted basis indices.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Support {
    dim: usize,
    idx: Vec<usize>,
}

impl Support {
    pub fn full(dim: usize) -> Self {
        Self { dim, idx: (0..dim).collect() }
    }

    pub fn empty(dim: usize) -> Self {
        Self { dim, idx: Vec::new() }
    }

    pub fn from_mask(mask: &[bool]) -> Self {
        let idx = mask.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect();
        Self { dim: mask.len(), idx }
    }

    pub fn from_indices(dim: usize, mut idx: Vec<usize>) -> Self {
        idx.sort_unstable();
        idx.dedup();
        assert!(idx.last().map_or(true, |&i| i < dim), "index beyond ambient dimension");
        Self { dim, idx }
    }

    /// Dimension of the ambient basis.
    pub fn ambient(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.idx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.idx.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.idx
    }

    pub fn mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.dim];
        for &i in &self.idx {
            m[i] = true;
        }
        m
    }

    pub fn contains(&self, i: usize) -> bool {
        self.idx.binary_search(&i).is_ok()
    }

    /// Local position of basis index `i`.
    pub fn position(&self, i: usize) -> Option<usize> {
        self.idx.binary_search(&i).ok()
    }

    pub fn intersect(&self, other: &Self) -> Self {
        let idx = self.idx.iter().copied().filter(|&i| other.contains(i)).collect();
        Self { dim: self.dim, idx }
    }

    pub fn union(&self, other: &Self) -> Self {
        let mut idx = self.idx.clone();
        idx.extend_from_slice(&other.idx);
        Self::from_indices(self.dim, idx)
    }

    pub fn difference(&self, other: &Self) -> Self {
        let idx = self.idx.iter().copied().filter(|&i| !other.contains(i)).collect();
        Self { dim: self.dim, idx }
    }

    pub fn is_subset(&self, other: &Self) -> bool {
        self.idx.iter().all(|&i| other.contains(i))
    }
}

/// Index sets of `Ran χ`, `Ran χ̄` and their intersection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubspaceTriple {
    pub chi_support: Support,
    pub chibar_support: Support,
    pub overlap_support: Support,
}

impl SubspaceTriple {
    /// Reads the supports off the diagonal values of `χ` and `χ̄` on `ambient`.
    pub fn from_values(ambient: &Support, chi: &[f64], chibar: &[f64]) -> Self {
        let pick = |vals: &[f64]| {
            let idx = ambient
                .indices()
                .iter()
                .zip(vals)
                .filter(|(_, &v)| v != 0.0)
                .map(|(&i, _)| i)
                .collect();
            Support::from_indices(ambient.ambient(), idx)
        };
        let chi_support = pick(chi);
        let chibar_support = pick(chibar);
        let overlap_support = chi_support.intersect(&chibar_support);
        Self { chi_support, chibar_support, overlap_support }
    }
}

/// Dense operator between two coordinate subspaces of a basis.
#[derive(Clone, Debug)]
pub struct LinOp {
    basis: Arc<FockBasis>,
    rows: Support,
    cols: Support,
    mat: DMatrix<C64>,
}

impl LinOp {
    pub fn new(basis: Arc<FockBasis>, rows: Support, cols: Support, mat: DMatrix<C64>) -> Result<Self> {
        if mat.nrows() != rows.len() || mat.ncols() != cols.len() {
            return Err(Error::SupportMismatch(format!(
                "matrix is {}x{}, supports are {}x{}",
                mat.nrows(),
                mat.ncols(),
                rows.len(),
                cols.len()
            )));
        }
        if rows.ambient() != basis.dim() || cols.ambient() != basis.dim() {
            return Err(Error::SupportMismatch("support ambient dimension differs from basis".into()));
        }
        Ok(Self { basis, rows, cols, mat })
    }

    pub fn zeros(basis: &Arc<FockBasis>, rows: &Support, cols: &Support) -> Self {
        let mat = DMatrix::zeros(rows.len(), cols.len());
        Self { basis: basis.clone(), rows: rows.clone(), cols: cols.clone(), mat }
    }

    pub fn identity(basis: &Arc<FockBasis>, support: &Support) -> Self {
        let n = support.len();
        Self { basis: basis.clone(), rows: support.clone(), cols: support.clone(), mat: DMatrix::identity(n, n) }
    }

    /// Diagonal operator with one value per index of `support`.
    pub fn diagonal(basis: &Arc<FockBasis>, support: &Support, values: &[C64]) -> Self {
        assert_eq!(values.len(), support.len());
        let mat = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(values));
        Self { basis: basis.clone(), rows: support.clone(), cols: support.clone(), mat }
    }

    /// Diagonal operator `f(H_ph)` on `support`.
    pub fn diag_fn(basis: &Arc<FockBasis>, support: &Support, f: impl Fn(f64) -> C64) -> Self {
        let vals: Vec<C64> = support.indices().iter().map(|&i| f(basis.energy(i))).collect();
        Self::diagonal(basis, support, &vals)
    }

    /// Operator on the full basis from a `dim × dim` matrix.
    pub fn from_full(basis: &Arc<FockBasis>, mat: DMatrix<C64>) -> Result<Self> {
        let s = basis.full_support();
        Self::new(basis.clone(), s.clone(), s, mat)
    }

    pub fn basis(&self) -> &Arc<FockBasis> {
        &self.basis
    }

    pub fn rows(&self) -> &Support {
        &self.rows
    }

    pub fn cols(&self) -> &Support {
        &self.cols
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.mat
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.mat
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// Matrix element between basis states `i` and `j` (zero off the supports).
    pub fn entry(&self, i: usize, j: usize) -> C64 {
        match (self.rows.position(i), self.cols.position(j)) {
            (Some(a), Some(b)) => self.mat[(a, b)],
            _ => ZERO,
        }
    }

    pub fn compose(&self, rhs: &LinOp) -> Result<LinOp> {
        if self.cols != rhs.rows {
            return Err(Error::SupportMismatch(format!(
                "left domain has {} states, right range has {}",
                self.cols.len(),
                rhs.rows.len()
            )));
        }
        // diagonal factors (cutoffs, H_ph) scale rows or columns
        let mat = if is_diagonal(&self.mat) {
            let mut m = rhs.mat.clone();
            for (a, mut row) in m.row_iter_mut().enumerate() {
                row *= self.mat[(a, a)];
            }
            m
        } else if is_diagonal(&rhs.mat) {
            let mut m = self.mat.clone();
            for (b, mut col) in m.column_iter_mut().enumerate() {
                col *= rhs.mat[(b, b)];
            }
            m
        } else {
            &self.mat * &rhs.mat
        };
        Ok(LinOp { basis: self.basis.clone(), rows: self.rows.clone(), cols: rhs.cols.clone(), mat })
    }

    fn same_shape(&self, rhs: &LinOp) -> Result<()> {
        if self.rows != rhs.rows || self.cols != rhs.cols {
            return Err(Error::SupportMismatch("operands live on different subspaces".into()));
        }
        Ok(())
    }

    pub fn try_add(&self, rhs: &LinOp) -> Result<LinOp> {
        self.same_shape(rhs)?;
        Ok(self.with_matrix(&self.mat + &rhs.mat))
    }

    pub fn try_sub(&self, rhs: &LinOp) -> Result<LinOp> {
        self.same_shape(rhs)?;
        Ok(self.with_matrix(&self.mat - &rhs.mat))
    }

    fn with_matrix(&self, mat: DMatrix<C64>) -> LinOp {
        LinOp { basis: self.basis.clone(), rows: self.rows.clone(), cols: self.cols.clone(), mat }
    }

    pub fn scale(&self, s: C64) -> LinOp {
        self.with_matrix(&self.mat * s)
    }

    pub fn adjoint(&self) -> LinOp {
        LinOp {
            basis: self.basis.clone(),
            rows: self.cols.clone(),
            cols: self.rows.clone(),
            mat: self.mat.adjoint(),
        }
    }

    /// Compression to subspaces of the current supports.
    pub fn restrict(&self, rows: &Support, cols: &Support) -> Result<LinOp> {
        if !rows.is_subset(&self.rows) || !cols.is_subset(&self.cols) {
            return Err(Error::SupportMismatch("restriction target is not a sub-support".into()));
        }
        let ri: Vec<usize> = rows.indices().iter().map(|&i| self.rows.position(i).unwrap()).collect();
        let ci: Vec<usize> = cols.indices().iter().map(|&j| self.cols.position(j).unwrap()).collect();
        let mat = DMatrix::from_fn(ri.len(), ci.len(), |a, b| self.mat[(ri[a], ci[b])]);
        Ok(LinOp { basis: self.basis.clone(), rows: rows.clone(), cols: cols.clone(), mat })
    }

    /// Restriction to a square sub-block.
    pub fn restrict_to(&self, support: &Support) -> Result<LinOp> {
        self.restrict(support, support)
    }

    /// Zero-padding to larger supports.
    pub fn extend(&self, rows: &Support, cols: &Support) -> Result<LinOp> {
        if !self.rows.is_subset(rows) || !self.cols.is_subset(cols) {
            return Err(Error::SupportMismatch("extension target does not contain the support".into()));
        }
        let mut mat = DMatrix::zeros(rows.len(), cols.len());
        let ri: Vec<usize> = self.rows.indices().iter().map(|&i| rows.position(i).unwrap()).collect();
        let ci: Vec<usize> = self.cols.indices().iter().map(|&j| cols.position(j).unwrap()).collect();
        for (a, &ra) in ri.iter().enumerate() {
            for (b, &cb) in ci.iter().enumerate() {
                mat[(ra, cb)] = self.mat[(a, b)];
            }
        }
        Ok(LinOp { basis: self.basis.clone(), rows: rows.clone(), cols: cols.clone(), mat })
    }

    /// Zero-padded matrix on the full basis.
    pub fn to_full(&self) -> LinOp {
        let full = self.basis.full_support();
        self.extend(&full, &full).expect("full support contains every support")
    }

    /// Diagonal entries (square operators only).
    pub fn diag_values(&self) -> Vec<C64> {
        assert!(self.is_square(), "diagonal of a non-square operator");
        (0..self.mat.nrows()).map(|i| self.mat[(i, i)]).collect()
    }

    pub fn max_offdiag(&self) -> f64 {
        let mut m: f64 = 0.0;
        for a in 0..self.mat.nrows() {
            for b in 0..self.mat.ncols() {
                let same = self.rows.indices()[a] == self.cols.indices()[b];
                if !same {
                    m = m.max(self.mat[(a, b)].norm());
                }
            }
        }
        m
    }

    pub fn is_diagonal(&self) -> bool {
        self.is_square() && self.max_offdiag() == 0.0
    }

    /// Largest singular value.
    pub fn op_norm(&self) -> f64 {
        op_norm(self)
    }

    pub fn frobenius(&self) -> f64 {
        self.mat.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn to_json(&self) -> LinOpJson {
        let mut entries = Vec::with_capacity(self.mat.len());
        for a in 0..self.mat.nrows() {
            for b in 0..self.mat.ncols() {
                let c = self.mat[(a, b)];
                entries.push([c.re, c.im]);
            }
        }
        LinOpJson { rows: self.rows.indices().to_vec(), cols: self.cols.indices().to_vec(), entries }
    }

    pub fn from_json(basis: &Arc<FockBasis>, js: &LinOpJson) -> Result<Self> {
        let rows = Support::from_indices(basis.dim(), js.rows.clone());
        let cols = Support::from_indices(basis.dim(), js.cols.clone());
        if js.entries.len() != rows.len() * cols.len() {
            return Err(Error::SupportMismatch("entry count does not match supports".into()));
        }
        let mat = DMatrix::from_fn(rows.len(), cols.len(), |a, b| {
            let [re, im] = js.entries[a * cols.len() + b];
            C64::new(re, im)
        });
        Self::new(basis.clone(), rows, cols, mat)
    }
}

/// JSON form of an operator: support indices and row-major `[re, im]` entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinOpJson {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub entries: Vec<[f64; 2]>,
}

impl Mul for &LinOp {
    type Output = LinOp;

    fn mul(self, rhs: &LinOp) -> LinOp {
        self.compose(rhs).unwrap_or_else(|e| panic!("{e}"))
    }
}

impl Add for &LinOp {
    type Output = LinOp;

    fn add(self, rhs: &LinOp) -> LinOp {
        self.try_add(rhs).unwrap_or_else(|e| panic!("{e}"))
    }
}

impl Sub for &LinOp {
    type Output = LinOp;

    fn sub(self, rhs: &LinOp) -> LinOp {
        self.try_sub(rhs).unwrap_or_else(|e| panic!("{e}"))
    }
}

impl Neg for &LinOp {
    type Output = LinOp;

    fn neg(self) -> LinOp {
        self.scale(-ONE)
    }
}

impl Mul<C64> for &LinOp {
    type Output = LinOp;

    fn mul(self, s: C64) -> LinOp {
        self.scale(s)
    }
}

impl Mul<f64> for &LinOp {
    type Output = LinOp;

    fn mul(self, s: f64) -> LinOp {
        self.scale(C64::new(s, 0.0))
    }
}

/// Free boson energy `H_ph` on the full basis.
pub fn hph(basis: &Arc<FockBasis>) -> LinOp {
    LinOp::diag_fn(basis, &basis.full_support(), |e| C64::new(e, 0.0))
}

/// Creation operator `a*_j`, projected back into the truncation.
pub fn create(basis: &Arc<FockBasis>, j: usize) -> Result<LinOp> {
    basis.grid().check_mode(j)?;
    let d = basis.dim();
    let mut mat = DMatrix::zeros(d, d);
    for (c, s) in basis.states().iter().enumerate() {
        let mut t = s.clone();
        t[j] += 1;
        if let Some(r) = basis.lookup(&t) {
            mat[(r, c)] = C64::new(((s[j] as f64) + 1.0).sqrt(), 0.0);
        }
    }
    LinOp::from_full(basis, mat)
}

/// Annihilation operator `a_j`.
pub fn annihilate(basis: &Arc<FockBasis>, j: usize) -> Result<LinOp> {
    basis.grid().check_mode(j)?;
    let d = basis.dim();
    let mut mat = DMatrix::zeros(d, d);
    for (c, s) in basis.states().iter().enumerate() {
        if s[j] == 0 {
            continue;
        }
        let mut t = s.clone();
        t[j] -= 1;
        if let Some(r) = basis.lookup(&t) {
            mat[(r, c)] = C64::new((s[j] as f64).sqrt(), 0.0);
        }
    }
    LinOp::from_full(basis, mat)
}

/// Applies `f` to the diagonal of a diagonal operator.
pub fn func_calc(op: &LinOp, f: impl Fn(C64) -> C64) -> Result<LinOp> {
    if !op.is_square() {
        return Err(Error::NotDiagonal { max_offdiag: f64::NAN });
    }
    let off = op.max_offdiag();
    if off != 0.0 {
        return Err(Error::NotDiagonal { max_offdiag: off });
    }
    let vals: Vec<C64> = op.diag_values().into_iter().map(f).collect();
    Ok(LinOp::diagonal(op.basis(), op.rows(), &vals))
}

/// Inverse of a square operator together with its invertibility margin.
#[derive(Clone, Debug)]
pub struct Inverse {
    pub op: LinOp,
    /// Smallest singular value of the inverted operator.
    pub margin: f64,
}

fn is_diagonal(m: &DMatrix<C64>) -> bool {
    m.is_square() && (0..m.ncols()).all(|b| (0..m.nrows()).all(|a| a == b || m[(a, b)] == ZERO))
}

pub fn singular_values(op: &LinOp) -> Vec<f64> {
    if op.mat.is_empty() {
        return Vec::new();
    }
    let m = &op.mat;
    let mut sv: Vec<f64> = if is_diagonal(m) {
        m.diagonal().iter().map(|c| c.norm()).collect()
    } else {
        m.clone().singular_values().iter().copied().collect()
    };
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sv
}

/// Inverts `op` on its support, rejecting it when `σ_min < threshold·‖op‖`.
pub fn bounded_inverse(op: &LinOp, threshold: f64) -> Result<Inverse> {
    if !op.is_square() {
        return Err(Error::SupportMismatch("inverse of an operator between different subspaces".into()));
    }
    if op.mat.is_empty() {
        return Ok(Inverse { op: op.clone(), margin: f64::INFINITY });
    }
    let sv = singular_values(op);
    let (smax, smin) = (sv[0], *sv.last().unwrap());
    let limit = threshold * smax;
    if !(smin > limit) {
        return Err(Error::SingularOperator { margin: smin, threshold: limit });
    }
    let inv = op
        .mat
        .clone()
        .lu()
        .try_inverse()
        .ok_or(Error::SingularOperator { margin: smin, threshold: limit })?;
    Ok(Inverse { op: op.with_matrix(inv), margin: smin })
}

/// Operator norm (largest singular value).
pub fn op_norm(op: &LinOp) -> f64 {
    singular_values(op).first().copied().unwrap_or(0.0)
}

/// `⟨Ω, A Ω⟩`, zero when the vacuum lies outside the supports.
pub fn vacuum_expectation(op: &LinOp) -> C64 {
    let v = op.basis().vacuum_index();
    op.entry(v, v)
}

/// Numerical kernel dimension: singular values below `threshold · dim · ‖op‖`.
pub fn kernel_dim(op: &LinOp, threshold: f64) -> usize {
    let sv = singular_values(op);
    let Some(&smax) = sv.first() else { return 0 };
    let cut = threshold * sv.len() as f64 * smax.max(f64::MIN_POSITIVE);
    sv.iter().filter(|&&s| s <= cut).count()
}

/// `‖a − b‖` after padding both operators to the full basis.
pub fn distance(a: &LinOp, b: &LinOp) -> f64 {
    if a.rows == b.rows && a.cols == b.cols {
        return op_norm(&a.with_matrix(&a.mat - &b.mat));
    }
    let (fa, fb) = (a.to_full(), b.to_full());
    op_norm(&fa.with_matrix(&fa.mat - &fb.mat))
}

/// Frobenius norm of `a − b` after padding both to the full basis.
pub fn distance_frobenius(a: &LinOp, b: &LinOp) -> f64 {
    if a.rows == b.rows && a.cols == b.cols {
        return (&a.mat - &b.mat).norm();
    }
    (&a.to_full().mat - &b.to_full().mat).norm()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_ln2() -> ModeGrid {
        ModeGrid::new(std::f64::consts::LN_2, 1).unwrap()
    }

    #[test]
    fn vacuum_only_at_zero_bosons() {
        let b = build_basis(&grid_ln2(), 0);
        assert_eq!(b.dim(), 1);
        assert_eq!(b.state(0), &[0, 0]);
    }

    #[test]
    fn two_mode_enumeration() {
        let b = build_basis(&grid_ln2(), 2);
        let want: Vec<Vec<u8>> = vec![vec![0, 0], vec![0, 1], vec![0, 2], vec![1, 0]];
        assert_eq!(b.states(), &want[..]);
        assert!(b.lookup(&[1, 1]).is_none());
        assert!(b.lookup(&[2, 0]).is_none());
        let i = b.lookup(&[0, 2]).unwrap();
        assert!((b.energy(i) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn brute_force_dimension() {
        let g = ModeGrid::new(0.5, 3).unwrap();
        let b = build_basis(&g, 3);
        let mut count = 0;
        for a in 0..=3u8 {
            for bb in 0..=3u8 {
                for c in 0..=3u8 {
                    for d in 0..=3u8 {
                        let n = [a, bb, c, d];
                        let tot: u8 = n.iter().sum();
                        let e: f64 = n.iter().enumerate().map(|(j, &k)| k as f64 * (-0.5 * j as f64).exp()).sum();
                        if tot <= 3 && e <= 1.0 + ENERGY_SLACK {
                            count += 1;
                        }
                    }
                }
            }
        }
        assert_eq!(b.dim(), count);
    }

    #[test]
    fn geometric_ratios() {
        let g = ModeGrid::new(0.37, 6).unwrap();
        assert_eq!(g.frequency(0), 1.0);
        let r = (-0.37f64).exp();
        for j in 0..6 {
            assert!((g.frequency(j + 1) / g.frequency(j) - r).abs() < 1e-15);
            let q = g.quad_weight(j + 1) / g.quad_weight(j);
            assert!((q - g.quad_weight(1) / g.quad_weight(0)).abs() < 1e-14);
        }
    }

    #[test]
    fn hph_diagonal() {
        let b = Arc::new(build_basis(&grid_ln2(), 2));
        let h = hph(&b);
        assert_eq!(vacuum_expectation(&h), ZERO);
        let i = b.lookup(&[0, 2]).unwrap();
        assert!((h.entry(i, i).re - 1.0).abs() < 1e-15);
        for e in b.energies() {
            assert!((0.0..=1.0 + ENERGY_SLACK).contains(e));
        }
    }

    #[test]
    fn ladder_operators() {
        let g = ModeGrid::new(0.5, 3).unwrap();
        let b = Arc::new(build_basis(&g, 3));
        for j in 0..4 {
            let c = create(&b, j).unwrap();
            let a = annihilate(&b, j).unwrap();
            assert_eq!(a.matrix(), &c.matrix().adjoint());
            let av = &a * &LinOp::identity(&b, &b.full_support());
            assert_eq!(av.entry(0, 0), ZERO);
            // commutator on states whose raised image stays in the basis
            let comm = &(&a * &c) - &(&c * &a);
            for (i, s) in b.states().iter().enumerate() {
                let mut t = s.clone();
                t[j] += 1;
                if b.lookup(&t).is_some() {
                    assert!((comm.entry(i, i) - ONE).norm() < 1e-13);
                }
            }
        }
        let c0 = create(&b, 0).unwrap();
        let i10 = b.lookup(&[1, 0, 0, 0]).unwrap();
        assert_eq!(c0.entry(i10, 0), ONE);
        assert!(matches!(create(&b, 4), Err(Error::ModeOutOfRange { .. })));
    }

    #[test]
    fn func_calc_rules() {
        let b = Arc::new(build_basis(&ModeGrid::new(0.5, 3).unwrap(), 2));
        let h = hph(&b);
        let same = func_calc(&h, |x| x).unwrap();
        assert_eq!(same.matrix(), h.matrix());
        let one = func_calc(&h, |_| ONE).unwrap();
        assert_eq!(one.matrix(), LinOp::identity(&b, &b.full_support()).matrix());
        let sq = func_calc(&h, |x| x * x).unwrap();
        for i in 0..b.dim() {
            assert_eq!(sq.entry(i, i).re, b.energy(i) * b.energy(i));
        }
        let c = create(&b, 1).unwrap();
        assert!(matches!(func_calc(&c, |x| x), Err(Error::NotDiagonal { .. })));
    }

    #[test]
    fn inverse_small_cases() {
        let b = Arc::new(build_basis(&grid_ln2(), 0));
        let s = b.full_support();
        let id = LinOp::identity(&b, &s);
        let inv = bounded_inverse(&id, DEFAULT_SVD_THRESHOLD).unwrap();
        assert_eq!(inv.margin, 1.0);
        let b2 = Arc::new(build_basis(&grid_ln2(), 1));
        let s2 = Support::from_indices(b2.dim(), vec![0, 1]);
        let d = LinOp::diagonal(&b2, &s2, &[ONE, C64::new(0.5, 0.0)]);
        let inv = bounded_inverse(&d, DEFAULT_SVD_THRESHOLD).unwrap();
        assert!((inv.op.matrix()[(1, 1)] - C64::new(2.0, 0.0)).norm() < 1e-15);
        let z = LinOp::diagonal(&b2, &s2, &[ONE, ZERO]);
        assert!(matches!(bounded_inverse(&z, DEFAULT_SVD_THRESHOLD), Err(Error::SingularOperator { .. })));
    }

    #[test]
    fn supports_and_restriction() {
        let b = Arc::new(build_basis(&ModeGrid::new(0.5, 3).unwrap(), 2));
        let h = hph(&b);
        let low = b.support_where(|e| e < 0.5);
        let r = h.restrict_to(&low).unwrap();
        let back = r.extend(&b.full_support(), &b.full_support()).unwrap();
        for i in 0..b.dim() {
            let want = if low.contains(i) { h.entry(i, i) } else { ZERO };
            assert_eq!(back.entry(i, i), want);
        }
        let other = b.support_where(|e| e > 0.2);
        assert!(r.compose(&h.restrict_to(&other).unwrap()).is_err());
    }

    #[test]
    fn json_round_trip() {
        let b = Arc::new(build_basis(&ModeGrid::new(0.5, 3).unwrap(), 2));
        let js = serde_json::to_string(&b.to_json()).unwrap();
        let b2 = FockBasis::from_json(&serde_json::from_str(&js).unwrap()).unwrap();
        assert_eq!(*b, b2);
        let c = create(&b, 2).unwrap();
        let op = LinOp::from_json(&b, &c.to_json()).unwrap();
        assert_eq!(op.matrix(), c.matrix());
    }
}
