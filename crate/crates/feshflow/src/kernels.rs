//! Sampled kernel sequences `w = (w_{m,n})`, their quantization, norms and
//! extraction from operators by least squares.
//!
//! A component `w_{m,n}` is stored per leg multiset pair: `create` and
//! `annihilate` are occupation-count vectors over the modes, so permutation
//! symmetry holds by construction. Each entry holds its values on `r_grid`
//! as a polynomial in `u = z / Z_RADIUS`, in two channels (value and `∂_r`).
//!
//! JSON schema of a saved kernel:
//! `{delta, j_max, m_max, z_degree, r_grid: [..], entries: [{create, annihilate,
//! value: [[re, im], ..], dr: [[re, im], ..]}]}` where `value[p * nodes + i]` is
//! the coefficient of `u^p` at node `r_grid[i]`.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fockspace::{FockBasis, LinOp, ModeGrid};
use crate::report::CheckRecord;

/// Radius of the spectral-parameter disc.
pub const Z_RADIUS: f64 = 0.25;
/// Energies closer than this share an `r` node.
pub const NODE_TOL: f64 = 1e-12;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Parameters of the kernel norms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormConfig {
    pub xi: f64,
    pub mu: f64,
    /// Points of the uniform auxiliary `r` grid.
    pub aux_points: usize,
    /// Points on the circle `|z| = 1/4`; the centre is always added.
    pub z_points: usize,
}

impl Default for NormConfig {
    fn default() -> Self {
        Self { xi: 0.5, mu: 0.5, aux_points: 65, z_points: 32 }
    }
}

impl NormConfig {
    pub fn new(xi: f64, mu: f64) -> Result<Self> {
        let cfg = Self { xi, mu, aux_points: 65, z_points: 32 };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.xi > 0.0 && self.xi < 1.0) {
            return Err(Error::InvalidParameter { name: "xi", reason: format!("must lie in (0, 1), got {}", self.xi) });
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::InvalidParameter { name: "mu", reason: format!("must be positive, got {}", self.mu) });
        }
        if self.aux_points < 2 {
            return Err(Error::InvalidParameter { name: "aux_points", reason: "need at least 2".into() });
        }
        if self.z_points < 3 {
            return Err(Error::InvalidParameter { name: "z_points", reason: "need at least 3".into() });
        }
        Ok(())
    }

    /// The centre and `z_points` equispaced points of `|z| = 1/4`.
    pub fn z_grid(&self) -> Vec<C64> {
        z_grid(self.z_points)
    }
}

pub fn z_grid(points: usize) -> Vec<C64> {
    let mut out = vec![ZERO];
    out.extend((0..points).map(|k| C64::from_polar(Z_RADIUS, 2.0 * std::f64::consts::PI * k as f64 / points as f64)));
    out
}

/// Radii `(a_I, a_R, a_Z)` of a polydisc.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolydiscSpec {
    pub a_i: f64,
    pub a_r: f64,
    pub a_z: f64,
}

impl PolydiscSpec {
    pub fn new(a_i: f64, a_r: f64, a_z: f64) -> Result<Self> {
        for (v, name) in [(a_i, "a_I"), (a_r, "a_R"), (a_z, "a_Z")] {
            if !(v > 0.0) {
                return Err(Error::InvalidParameter { name, reason: format!("must be positive, got {v}") });
            }
        }
        Ok(Self { a_i, a_r, a_z })
    }

    /// Componentwise `self ≤ other`.
    pub fn le(&self, other: &Self) -> bool {
        self.a_i <= other.a_i && self.a_r <= other.a_r && self.a_z <= other.a_z
    }
}

/// Multisets of created and annihilated modes.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LegKey {
    pub create: Vec<u8>,
    pub annihilate: Vec<u8>,
}

fn multiset_size(v: &[u8]) -> usize {
    v.iter().map(|&n| n as usize).sum()
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Number of orderings of a multiset.
fn orderings(v: &[u8]) -> f64 {
    factorial(multiset_size(v)) / v.iter().map(|&n| factorial(n as usize)).product::<f64>()
}

impl LegKey {
    pub fn new(create: Vec<u8>, annihilate: Vec<u8>) -> Self {
        Self { create, annihilate }
    }

    pub fn free(modes: usize) -> Self {
        Self { create: vec![0; modes], annihilate: vec![0; modes] }
    }

    /// Key from lists of mode indices.
    pub fn from_modes(modes: usize, create: &[usize], annihilate: &[usize]) -> Result<Self> {
        let mut c = vec![0u8; modes];
        let mut a = vec![0u8; modes];
        for (list, out) in [(create, &mut c), (annihilate, &mut a)] {
            for &j in list {
                if j >= modes {
                    return Err(Error::ModeOutOfRange { mode: j, modes });
                }
                out[j] += 1;
            }
        }
        Ok(Self { create: c, annihilate: a })
    }

    pub fn m(&self) -> usize {
        multiset_size(&self.create)
    }

    pub fn n(&self) -> usize {
        multiset_size(&self.annihilate)
    }

    pub fn order(&self) -> (usize, usize) {
        (self.m(), self.n())
    }

    pub fn is_free(&self) -> bool {
        self.m() == 0 && self.n() == 0
    }

    pub fn is_disjoint(&self) -> bool {
        self.create.iter().zip(&self.annihilate).all(|(&a, &b)| a == 0 || b == 0)
    }

    pub fn create_energy(&self, grid: &ModeGrid) -> f64 {
        leg_energy(&self.create, grid)
    }

    pub fn annihilate_energy(&self, grid: &ModeGrid) -> f64 {
        leg_energy(&self.annihilate, grid)
    }

    /// `N^J N^L`, the norm measure of the key.
    fn measure(&self, grid: &ModeGrid, mu: f64) -> f64 {
        leg_product(&self.create, |j| grid.norm_weight(j, mu)) * leg_product(&self.annihilate, |j| grid.norm_weight(j, mu))
    }

    /// `ord(J) ord(L) q^J q^L`, the operator weight of the key.
    fn op_weight(&self, grid: &ModeGrid) -> f64 {
        orderings(&self.create)
            * orderings(&self.annihilate)
            * leg_product(&self.create, |j| grid.quad_weight(j))
            * leg_product(&self.annihilate, |j| grid.quad_weight(j))
    }
}

fn leg_energy(v: &[u8], grid: &ModeGrid) -> f64 {
    v.iter().enumerate().map(|(j, &n)| n as f64 * grid.frequency(j)).sum()
}

fn leg_product(v: &[u8], f: impl Fn(usize) -> f64) -> f64 {
    v.iter().enumerate().map(|(j, &n)| f(j).powi(n as i32)).product()
}

/// Polynomial-in-`u` samples of one entry on the `r` grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub value: Vec<C64>,
    pub dr: Vec<C64>,
}

impl Channel {
    pub fn zeros(degree: usize, nodes: usize) -> Self {
        Self { value: vec![ZERO; (degree + 1) * nodes], dr: vec![ZERO; (degree + 1) * nodes] }
    }

    fn eval(coeffs: &[C64], nodes: usize, node: usize, u: C64) -> C64 {
        let deg = coeffs.len() / nodes;
        (0..deg).rev().fold(ZERO, |acc, p| acc * u + coeffs[p * nodes + node])
    }

    fn eval_dz(coeffs: &[C64], nodes: usize, node: usize, u: C64) -> C64 {
        let deg = coeffs.len() / nodes;
        (1..deg).rev().fold(ZERO, |acc, p| acc * u + coeffs[p * nodes + node] * p as f64) / Z_RADIUS
    }
}

/// Sampled kernel sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelSeq {
    grid: ModeGrid,
    r_grid: Vec<f64>,
    m_max: usize,
    z_degree: usize,
    entries: BTreeMap<LegKey, Channel>,
}

/// `{0} ∪ energies ∪ uniform(aux)` on `[0, 1]`, merged within [`NODE_TOL`].
pub fn r_grid_for(basis: &FockBasis, aux_points: usize) -> Vec<f64> {
    let mut pts: Vec<(f64, bool)> = basis.energies().iter().map(|&e| (e.min(1.0), true)).collect();
    pts.push((0.0, true));
    pts.extend((0..aux_points).map(|i| (i as f64 / (aux_points - 1) as f64, false)));
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
    let mut out: Vec<(f64, bool)> = Vec::new();
    for p in pts {
        match out.last_mut() {
            Some(last) if (p.0 - last.0).abs() <= NODE_TOL => {
                if p.1 && !last.1 {
                    *last = p;
                }
            }
            _ => out.push(p),
        }
    }
    out.into_iter().map(|p| p.0).collect()
}

fn check_grid(r_grid: &[f64]) -> Result<()> {
    if r_grid.len() < 2 || r_grid[0] != 0.0 || *r_grid.last().unwrap() > 1.0 + NODE_TOL {
        return Err(Error::InvalidParameter { name: "r_grid", reason: "must start at 0, end in [0, 1], have 2+ nodes".into() });
    }
    if r_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter { name: "r_grid", reason: "must be strictly increasing".into() });
    }
    Ok(())
}

/// Three-point derivative on a nonuniform grid (one-sided at the ends).
pub fn nonuniform_derivative(x: &[f64], y: &[C64]) -> Vec<C64> {
    let n = x.len();
    if n < 3 {
        let s = if n == 2 { (y[1] - y[0]) / (x[1] - x[0]) } else { ZERO };
        return vec![s; n];
    }
    let three = |i0: usize, at: usize| {
        let (a, b, c) = (x[i0], x[i0 + 1], x[i0 + 2]);
        let t = x[at];
        let la = (2.0 * t - b - c) / ((a - b) * (a - c));
        let lb = (2.0 * t - a - c) / ((b - a) * (b - c));
        let lc = (2.0 * t - a - b) / ((c - a) * (c - b));
        y[i0] * la + y[i0 + 1] * lb + y[i0 + 2] * lc
    };
    (0..n)
        .map(|i| {
            if i == 0 {
                three(0, 0)
            } else if i == n - 1 {
                three(n - 3, n - 1)
            } else {
                three(i - 1, i)
            }
        })
        .collect()
}

impl KernelSeq {
    pub fn new(grid: &ModeGrid, r_grid: Vec<f64>, m_max: usize, z_degree: usize) -> Result<Self> {
        check_grid(&r_grid)?;
        Ok(Self { grid: grid.clone(), r_grid, m_max, z_degree, entries: BTreeMap::new() })
    }

    /// The free kernel `r + z`.
    pub fn free(grid: &ModeGrid, r_grid: Vec<f64>, m_max: usize) -> Result<Self> {
        let mut w = Self::new(grid, r_grid, m_max, 1)?;
        w.set_free_fn(|r| ([C64::new(r, 0.0), C64::new(Z_RADIUS, 0.0)], [C64::new(1.0, 0.0), ZERO]));
        Ok(w)
    }

    pub fn grid(&self) -> &ModeGrid {
        &self.grid
    }

    pub fn r_grid(&self) -> &[f64] {
        &self.r_grid
    }

    pub fn nodes(&self) -> usize {
        self.r_grid.len()
    }

    pub fn m_max(&self) -> usize {
        self.m_max
    }

    pub fn z_degree(&self) -> usize {
        self.z_degree
    }

    pub fn modes(&self) -> usize {
        self.grid.modes()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&LegKey, &Channel)> {
        self.entries.iter()
    }

    pub fn get(&self, key: &LegKey) -> Option<&Channel> {
        self.entries.get(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn free_key(&self) -> LegKey {
        LegKey::free(self.modes())
    }

    pub fn insert(&mut self, key: LegKey, ch: Channel) -> Result<()> {
        if key.create.len() != self.modes() || key.annihilate.len() != self.modes() {
            return Err(Error::InvalidParameter { name: "key", reason: "mode count does not match the grid".into() });
        }
        if key.m() + key.n() > self.m_max {
            return Err(Error::InvalidParameter {
                name: "key",
                reason: format!("order {}+{} exceeds m_max = {}", key.m(), key.n(), self.m_max),
            });
        }
        let len = (self.z_degree + 1) * self.nodes();
        if ch.value.len() != len || ch.dr.len() != len {
            return Err(Error::InvalidParameter { name: "channel", reason: format!("expected {len} coefficients") });
        }
        self.entries.insert(key, ch);
        Ok(())
    }

    pub fn remove(&mut self, key: &LegKey) -> Option<Channel> {
        self.entries.remove(key)
    }

    /// Fills an entry from `r ↦ (value coefficients, ∂_r coefficients)` in `u`.
    pub fn set_fn<const D: usize>(&mut self, key: LegKey, f: impl Fn(f64) -> ([C64; D], [C64; D])) -> Result<()> {
        if D > self.z_degree + 1 {
            return Err(Error::InvalidParameter { name: "z_degree", reason: format!("entry needs degree {}", D - 1) });
        }
        let n = self.nodes();
        let mut ch = Channel::zeros(self.z_degree, n);
        for (i, &r) in self.r_grid.iter().enumerate() {
            let (v, d) = f(r);
            for p in 0..D {
                ch.value[p * n + i] = v[p];
                ch.dr[p * n + i] = d[p];
            }
        }
        self.insert(key, ch)
    }

    pub fn set_free_fn<const D: usize>(&mut self, f: impl Fn(f64) -> ([C64; D], [C64; D])) {
        let key = self.free_key();
        self.set_fn(key, f).expect("free part fits any kernel");
    }

    fn eval_u(z: C64) -> C64 {
        z / Z_RADIUS
    }

    pub fn value(&self, key: &LegKey, z: C64, node: usize) -> C64 {
        self.entries.get(key).map_or(ZERO, |c| Channel::eval(&c.value, self.nodes(), node, Self::eval_u(z)))
    }

    pub fn dr(&self, key: &LegKey, z: C64, node: usize) -> C64 {
        self.entries.get(key).map_or(ZERO, |c| Channel::eval(&c.dr, self.nodes(), node, Self::eval_u(z)))
    }

    pub fn dz(&self, key: &LegKey, z: C64, node: usize) -> C64 {
        self.entries.get(key).map_or(ZERO, |c| Channel::eval_dz(&c.value, self.nodes(), node, Self::eval_u(z)))
    }

    /// Node index of `r`, if `r` is a node.
    pub fn node_of(&self, r: f64) -> Option<usize> {
        let i = self.r_grid.partition_point(|&x| x < r - NODE_TOL);
        (i < self.nodes() && (self.r_grid[i] - r).abs() <= NODE_TOL).then_some(i)
    }

    /// Value at any `r ∈ [0, 1]`: the node value or cubic Hermite interpolation.
    pub fn value_at(&self, key: &LegKey, z: C64, r: f64) -> C64 {
        if let Some(i) = self.node_of(r) {
            return self.value(key, z, i);
        }
        let n = self.nodes();
        let i = self.r_grid.partition_point(|&x| x < r).clamp(1, n - 1) - 1;
        let (x0, x1) = (self.r_grid[i], self.r_grid[i + 1]);
        let h = x1 - x0;
        let t = ((r - x0) / h).clamp(0.0, 1.0);
        let (h00, h10, h01, h11) =
            (2.0 * t.powi(3) - 3.0 * t * t + 1.0, t.powi(3) - 2.0 * t * t + t, -2.0 * t.powi(3) + 3.0 * t * t, t.powi(3) - t * t);
        self.value(key, z, i) * h00
            + self.dr(key, z, i) * (h10 * h)
            + self.value(key, z, i + 1) * h01
            + self.dr(key, z, i + 1) * (h11 * h)
    }

    /// Same grids and shape, no entries.
    pub fn empty_like(&self) -> Self {
        Self { entries: BTreeMap::new(), ..self.clone() }
    }

    /// `w_(I)`: the kernel without its free part.
    pub fn interaction(&self) -> Self {
        let mut w = self.clone();
        w.entries.remove(&self.free_key());
        w
    }

    /// The kernel `(w_{0,0}, 0, 0, …)`.
    pub fn free_part(&self) -> Self {
        let mut w = self.empty_like();
        if let Some(c) = self.entries.get(&self.free_key()) {
            w.entries.insert(self.free_key(), c.clone());
        }
        w
    }

    fn with_degree(&self, degree: usize) -> Self {
        if degree <= self.z_degree {
            return self.clone();
        }
        let n = self.nodes();
        let pad = |v: &[C64]| {
            let mut out = v.to_vec();
            out.resize((degree + 1) * n, ZERO);
            out
        };
        let entries = self.entries.iter().map(|(k, c)| (k.clone(), Channel { value: pad(&c.value), dr: pad(&c.dr) })).collect();
        Self { z_degree: degree, entries, ..self.clone() }
    }

    fn same_shape(&self, other: &Self) -> Result<()> {
        if self.grid != other.grid || self.r_grid != other.r_grid {
            return Err(Error::InvalidParameter { name: "kernel", reason: "grids differ".into() });
        }
        Ok(())
    }

    /// `a·self + b·other`.
    pub fn combine(&self, a: C64, other: &Self, b: C64) -> Result<Self> {
        self.same_shape(other)?;
        let deg = self.z_degree.max(other.z_degree);
        let (x, y) = (self.with_degree(deg), other.with_degree(deg));
        let mut out = x.empty_like();
        out.m_max = self.m_max.max(other.m_max);
        let zero = Channel::zeros(deg, self.nodes());
        let keys: std::collections::BTreeSet<&LegKey> = x.entries.keys().chain(y.entries.keys()).collect();
        for k in keys {
            let cx = x.entries.get(k).unwrap_or(&zero);
            let cy = y.entries.get(k).unwrap_or(&zero);
            let mix = |p: &[C64], q: &[C64]| p.iter().zip(q).map(|(&s, &t)| s * a + t * b).collect();
            out.entries.insert(k.clone(), Channel { value: mix(&cx.value, &cy.value), dr: mix(&cx.dr, &cy.dr) });
        }
        Ok(out)
    }

    pub fn scaled(&self, s: C64) -> Self {
        let mut w = self.clone();
        for c in w.entries.values_mut() {
            c.value.iter_mut().chain(c.dr.iter_mut()).for_each(|v| *v *= s);
        }
        w
    }

    /// `w − (r + z)`.
    pub fn minus_free(&self) -> Self {
        let free = KernelSeq::free(&self.grid, self.r_grid.clone(), self.m_max).unwrap();
        self.combine(C64::new(1.0, 0.0), &free, C64::new(-1.0, 0.0)).unwrap()
    }

    /// `∂_z w`.
    pub fn derivative_z(&self) -> Self {
        let n = self.nodes();
        let deg = self.z_degree.max(1) - if self.z_degree > 0 { 1 } else { 0 };
        let shift = |v: &[C64]| {
            let mut out = vec![ZERO; (deg + 1) * n];
            for p in 1..=self.z_degree {
                for i in 0..n {
                    out[(p - 1) * n + i] = v[p * n + i] * (p as f64 / Z_RADIUS);
                }
            }
            out
        };
        let entries = self.entries.iter().map(|(k, c)| (k.clone(), Channel { value: shift(&c.value), dr: shift(&c.dr) })).collect();
        Self { z_degree: deg, entries, ..self.clone() }
    }

    /// `∂_r w`, with its own `∂_r` channel from three-point differences.
    pub fn derivative_r(&self) -> Self {
        let n = self.nodes();
        let entries = self
            .entries
            .iter()
            .map(|(k, c)| {
                let mut dr2 = vec![ZERO; c.dr.len()];
                for p in 0..=self.z_degree {
                    let d = nonuniform_derivative(&self.r_grid, &c.dr[p * n..(p + 1) * n]);
                    dr2[p * n..(p + 1) * n].copy_from_slice(&d);
                }
                (k.clone(), Channel { value: c.dr.clone(), dr: dr2 })
            })
            .collect();
        Self { entries, ..self.clone() }
    }

    /// Replaces every `∂_r` channel by three-point differences of the values.
    pub fn recompute_dr(&mut self) {
        let n = self.nodes();
        for c in self.entries.values_mut() {
            for p in 0..=self.z_degree {
                let d = nonuniform_derivative(&self.r_grid, &c.value[p * n..(p + 1) * n]);
                c.dr[p * n..(p + 1) * n].copy_from_slice(&d);
            }
        }
    }

    /// Largest deviation between the `∂_r` channel and centred differences.
    pub fn dr_consistency(&self, z: C64) -> f64 {
        let n = self.nodes();
        let mut worst: f64 = 0.0;
        for k in self.entries.keys() {
            let vals: Vec<C64> = (0..n).map(|i| self.value(k, z, i)).collect();
            let fd = nonuniform_derivative(&self.r_grid, &vals);
            for (i, d) in fd.iter().enumerate() {
                worst = worst.max((d - self.dr(k, z, i)).norm());
            }
        }
        worst
    }

    /// `max_z |w_{0,0}(z, 0) − z|` over `zs`.
    pub fn vacuum_deviation(&self, zs: &[C64]) -> f64 {
        let key = self.free_key();
        zs.iter().map(|&z| (self.value(&key, z, 0) - z).norm()).fold(0.0, f64::max)
    }

    /// Entry-wise maximum distance of values at the given nodes.
    pub fn max_value_diff(&self, other: &Self, z: C64, nodes: impl Fn(&LegKey) -> Vec<usize>) -> f64 {
        let keys: std::collections::BTreeSet<&LegKey> = self.entries.keys().chain(other.entries.keys()).collect();
        let mut worst: f64 = 0.0;
        for k in keys {
            for i in nodes(k) {
                worst = worst.max((self.value(k, z, i) - other.value(k, z, i)).norm());
            }
        }
        worst
    }

    /// Nodes `r` with `r + ω_J ≤ 1` and `r + ω_L ≤ 1`.
    pub fn admissible_nodes(&self, key: &LegKey) -> Vec<usize> {
        let e = key.create_energy(&self.grid).max(key.annihilate_energy(&self.grid));
        (0..self.nodes()).filter(|&i| self.r_grid[i] + e <= 1.0 + NODE_TOL).collect()
    }

    pub fn to_json(&self) -> KernelJson {
        let pack = |v: &[C64]| v.iter().map(|c| [c.re, c.im]).collect();
        KernelJson {
            delta: self.grid.delta(),
            j_max: self.grid.j_max(),
            m_max: self.m_max,
            z_degree: self.z_degree,
            r_grid: self.r_grid.clone(),
            entries: self
                .entries
                .iter()
                .map(|(k, c)| EntryJson {
                    create: k.create.clone(),
                    annihilate: k.annihilate.clone(),
                    value: pack(&c.value),
                    dr: pack(&c.dr),
                })
                .collect(),
        }
    }

    pub fn from_json(js: &KernelJson) -> Result<Self> {
        let grid = ModeGrid::new(js.delta, js.j_max)?;
        let mut w = Self::new(&grid, js.r_grid.clone(), js.m_max, js.z_degree)?;
        let unpack = |v: &[[f64; 2]]| v.iter().map(|p| C64::new(p[0], p[1])).collect();
        for e in &js.entries {
            w.insert(LegKey::new(e.create.clone(), e.annihilate.clone()), Channel { value: unpack(&e.value), dr: unpack(&e.dr) })?;
        }
        Ok(w)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(&self.to_json())?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let js: KernelJson = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_json(&js)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelJson {
    pub delta: f64,
    pub j_max: usize,
    pub m_max: usize,
    pub z_degree: usize,
    pub r_grid: Vec<f64>,
    pub entries: Vec<EntryJson>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntryJson {
    pub create: Vec<u8>,
    pub annihilate: Vec<u8>,
    pub value: Vec<[f64; 2]>,
    pub dr: Vec<[f64; 2]>,
}

fn add_legs(state: &[u8], legs: &[u8]) -> Vec<u8> {
    state.iter().zip(legs).map(|(&a, &b)| a + b).collect()
}

/// `√(Π (χ_j + J_j)! / χ_j!)`, the ladder factor of `a*^J` on `χ`.
fn ladder(chi: &[u8], legs: &[u8]) -> f64 {
    chi.iter()
        .zip(legs)
        .map(|(&c, &l)| (1..=l as usize).map(|k| (c as usize + k) as f64).product::<f64>())
        .product::<f64>()
        .sqrt()
}

fn check_z(z: C64) -> Result<()> {
    if z.norm() > Z_RADIUS * (1.0 + 1e-9) {
        return Err(Error::InvalidParameter { name: "z", reason: format!("|z| = {} exceeds 1/4", z.norm()) });
    }
    Ok(())
}

fn check_basis(w: &KernelSeq, basis: &FockBasis) -> Result<()> {
    if basis.grid() != w.grid() {
        return Err(Error::InvalidParameter { name: "basis", reason: "mode grid differs from the kernel's".into() });
    }
    Ok(())
}

/// Node index of each basis energy (or `None` when off-grid).
fn basis_nodes(w: &KernelSeq, basis: &FockBasis) -> Vec<Option<usize>> {
    basis.energies().iter().map(|&e| w.node_of(e)).collect()
}

struct Term {
    row: usize,
    col: usize,
    node: Option<usize>,
    energy: f64,
    coef: f64,
}

/// Matrix positions and ladder factors of every kernel entry; only the
/// `z`-dependent values are recomputed per evaluation.
pub struct QuantPlan<'a> {
    w: &'a KernelSeq,
    basis: Arc<FockBasis>,
    groups: Vec<(&'a LegKey, Vec<Term>)>,
}

impl<'a> QuantPlan<'a> {
    pub fn new(w: &'a KernelSeq, basis: &Arc<FockBasis>) -> Result<Self> {
        Self::filtered(w, basis, |_| true)
    }

    fn filtered(w: &'a KernelSeq, basis: &Arc<FockBasis>, keep: impl Fn(&LegKey) -> bool) -> Result<Self> {
        check_basis(w, basis)?;
        let nodes = basis_nodes(w, basis);
        let mut groups = Vec::new();
        for (key, _) in w.entries().filter(|(k, _)| keep(k)) {
            let weight = key.op_weight(w.grid());
            let mut terms = Vec::new();
            for (c, chi) in basis.states().iter().enumerate() {
                let Some(row) = basis.lookup(&add_legs(chi, &key.create)) else { continue };
                let Some(col) = basis.lookup(&add_legs(chi, &key.annihilate)) else { continue };
                let coef = weight * ladder(chi, &key.create) * ladder(chi, &key.annihilate);
                terms.push(Term { row, col, node: nodes[c], energy: basis.energy(c), coef });
            }
            groups.push((key, terms));
        }
        Ok(Self { w, basis: basis.clone(), groups })
    }

    pub fn eval(&self, z: C64) -> Result<LinOp> {
        check_z(z)?;
        let d = self.basis.dim();
        let (w, n) = (self.w, self.w.nodes());
        let u = KernelSeq::eval_u(z);
        let mut m = DMatrix::<C64>::zeros(d, d);
        for (key, terms) in &self.groups {
            let ch = &w.entries[*key];
            for t in terms {
                let v = match t.node {
                    Some(i) => Channel::eval(&ch.value, n, i, u),
                    None => w.value_at(key, z, t.energy),
                };
                m[(t.row, t.col)] += v * t.coef;
            }
        }
        LinOp::from_full(&self.basis, m)
    }
}

/// Quantization of the components selected by `keep`, on the full basis.
fn quantize_filtered(w: &KernelSeq, z: C64, basis: &Arc<FockBasis>, keep: impl Fn(&LegKey) -> bool) -> Result<LinOp> {
    check_z(z)?;
    QuantPlan::filtered(w, basis, keep)?.eval(z)
}

/// `H[w(z)]` on the full basis.
pub fn quantize(w: &KernelSeq, z: C64, basis: &Arc<FockBasis>) -> Result<LinOp> {
    quantize_filtered(w, z, basis, |_| true)
}

/// `(w_{0,0}(z, H_ph), W[w(z)])`.
pub fn quantize_split(w: &KernelSeq, z: C64, basis: &Arc<FockBasis>) -> Result<(LinOp, LinOp)> {
    Ok((quantize_filtered(w, z, basis, LegKey::is_free)?, quantize_filtered(w, z, basis, |k| !k.is_free())?))
}

/// `H_{m,n}[w_{m,n}(z)]`.
pub fn quantize_component(w: &KernelSeq, z: C64, basis: &Arc<FockBasis>, m: usize, n: usize) -> Result<LinOp> {
    quantize_filtered(w, z, basis, |k| k.order() == (m, n))
}

/// `|f(0)| + ‖f‖_(∂r)`, the sup taken over the derivative samples and all secants.
pub fn c1_norm(r: &[f64], value: &[C64], dr: &[C64]) -> f64 {
    value[0].norm() + dr_sup(r, value, dr, f64::INFINITY)
}

/// `max |∂_r f|` over nodes with `r ≤ r_max`, including the secant slopes there.
fn dr_sup(r: &[f64], value: &[C64], dr: &[C64], r_max: f64) -> f64 {
    let mut s: f64 = 0.0;
    for i in 0..r.len() {
        if r[i] > r_max + NODE_TOL {
            break;
        }
        s = s.max(dr[i].norm());
        if i + 1 < r.len() && r[i + 1] <= r_max + NODE_TOL {
            s = s.max(((value[i + 1] - value[i]) / (r[i + 1] - r[i])).norm());
        }
    }
    s
}

fn entry_samples(w: &KernelSeq, key: &LegKey, z: C64) -> (Vec<C64>, Vec<C64>) {
    let n = w.nodes();
    ((0..n).map(|i| w.value(key, z, i)).collect(), (0..n).map(|i| w.dr(key, z, i)).collect())
}

/// `‖w_{m,n}(z)‖` for one component.
pub fn wmn_norm(w: &KernelSeq, z: C64, m: usize, n: usize, cfg: &NormConfig) -> f64 {
    let mut acc = 0.0;
    for (key, _) in w.entries().filter(|(k, _)| k.order() == (m, n)) {
        let (v, d) = entry_samples(w, key, z);
        let c1 = c1_norm(w.r_grid(), &v, &d);
        acc += orderings(&key.create) * orderings(&key.annihilate) * key.measure(w.grid(), cfg.mu) * c1 * c1;
    }
    acc.sqrt()
}

/// Orders `(m, n)` present in the kernel.
pub fn orders(w: &KernelSeq) -> Vec<(usize, usize)> {
    let mut v: Vec<_> = w.entries().map(|(k, _)| k.order()).collect();
    v.sort();
    v.dedup();
    v
}

/// `Σ ξ^{-(m+n)} ‖w_{m,n}(z)‖`.
pub fn xi_norm(w: &KernelSeq, z: C64, cfg: &NormConfig) -> f64 {
    orders(w).into_iter().map(|(m, n)| cfg.xi.powi(-((m + n) as i32)) * wmn_norm(w, z, m, n, cfg)).sum()
}

/// `max_z ‖w(z)‖ + ‖∂_z w(z)‖` over the z-grid.
pub fn xi_norm_z(w: &KernelSeq, cfg: &NormConfig) -> f64 {
    let dz = w.derivative_z();
    cfg.z_grid().into_iter().map(|z| xi_norm(w, z, cfg) + xi_norm(&dz, z, cfg)).fold(0.0, f64::max)
}

/// `‖w_(I)(z)‖^{(ξ)}`.
pub fn interaction_norm(w: &KernelSeq, z: C64, cfg: &NormConfig) -> f64 {
    xi_norm(&w.interaction(), z, cfg)
}

/// `‖w_(I)‖^{(ξ)}_Z`.
pub fn interaction_norm_z(w: &KernelSeq, cfg: &NormConfig) -> f64 {
    xi_norm_z(&w.interaction(), cfg)
}

/// Refined norm `‖w‖ + ‖∂_z w‖ + ‖∂_r w‖`, maximized over the z-grid.
pub fn refined_norm(w: &KernelSeq, cfg: &NormConfig) -> f64 {
    let dz = w.derivative_z();
    let dr = w.derivative_r();
    cfg.z_grid()
        .into_iter()
        .map(|z| xi_norm(w, z, cfg) + xi_norm(&dz, z, cfg) + xi_norm(&dr, z, cfg))
        .fold(0.0, f64::max)
}

/// One row of a norm table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentNorm {
    pub m: usize,
    pub n: usize,
    pub entries: usize,
    pub norm: f64,
    pub op_norm: f64,
    pub bound: f64,
}

/// Per-component norms at `z` together with the quantized operator norms.
pub fn norm_table(w: &KernelSeq, z: C64, basis: &Arc<FockBasis>, cfg: &NormConfig) -> Result<Vec<ComponentNorm>> {
    orders(w)
        .into_iter()
        .map(|(m, n)| {
            let norm = wmn_norm(w, z, m, n, cfg);
            let op = quantize_component(w, z, basis, m, n)?.op_norm();
            Ok(ComponentNorm {
                m,
                n,
                entries: w.entries().filter(|(k, _)| k.order() == (m, n)).count(),
                norm,
                op_norm: op,
                bound: norm / pow_self(m, n),
            })
        })
        .collect()
}

/// `√(m^m n^n)` with `0⁰ = 1`.
fn pow_self(m: usize, n: usize) -> f64 {
    let p = |k: usize| if k == 0 { 1.0 } else { (k as f64).powi(k as i32) };
    (p(m) * p(n)).sqrt()
}

/// Operator-norm bounds per component and in aggregate.
pub fn quantization_bound_check(w: &KernelSeq, z: C64, basis: &Arc<FockBasis>, cfg: &NormConfig) -> Result<Vec<CheckRecord>> {
    let mut out = Vec::new();
    for row in norm_table(w, z, basis, cfg)? {
        out.push(CheckRecord::bound("component_bound", &format!("m={}, n={}, z={z:.4}", row.m, row.n), row.op_norm, row.bound));
    }
    let total = quantize(w, z, basis)?.op_norm();
    out.push(CheckRecord::bound("aggregate_bound", &format!("z={z:.4}"), total, xi_norm(w, z, cfg)));
    let inter = quantize_filtered(w, z, basis, |k| !k.is_free())?.op_norm();
    out.push(CheckRecord::bound("interaction_bound", &format!("z={z:.4}"), inter, cfg.xi * interaction_norm(w, z, cfg)));
    Ok(out)
}

/// Sup norms of `∂_r w_{0,0}` and `∂_z w_{0,0}` on `[0, 1]` and on `[0, 1/2]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartialNorms {
    pub dr: f64,
    pub dz: f64,
    pub dr_minus: f64,
    pub dz_minus: f64,
}

pub fn partial_norms(w: &KernelSeq, cfg: &NormConfig) -> PartialNorms {
    let key = w.free_key();
    let r = w.r_grid();
    let mut out = PartialNorms { dr: 0.0, dz: 0.0, dr_minus: 0.0, dz_minus: 0.0 };
    for z in cfg.z_grid() {
        let (v, d) = entry_samples(w, &key, z);
        out.dr = out.dr.max(dr_sup(r, &v, &d, f64::INFINITY));
        out.dr_minus = out.dr_minus.max(dr_sup(r, &v, &d, 0.5));
        for (i, &ri) in r.iter().enumerate() {
            let dz = w.dz(&key, z, i).norm();
            out.dz = out.dz.max(dz);
            if ri <= 0.5 + NODE_TOL {
                out.dz_minus = out.dz_minus.max(dz);
            }
        }
    }
    out
}

/// Membership in the closed polydisc and the three margins.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Membership {
    pub member: bool,
    pub interaction: f64,
    pub dr: f64,
    pub dz: f64,
    pub margins: [f64; 3],
}

pub fn polydisc_member(w: &KernelSeq, spec: &PolydiscSpec, cfg: &NormConfig) -> Membership {
    let dev = w.minus_free();
    let interaction = refined_norm(&dev.interaction(), cfg);
    let p = partial_norms(&dev, cfg);
    let margins = [spec.a_i - interaction, spec.a_r - p.dr, spec.a_z - p.dz];
    Membership { member: margins.iter().all(|&m| m >= 0.0), interaction, dr: p.dr, dz: p.dz, margins }
}

/// Options of [`fit_kernel`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Fill nodes without equations by interpolation; otherwise fail.
    pub allow_extrapolation: bool,
    /// Force `w̃_{0,0}(z, 0) = z`.
    pub recenter: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { allow_extrapolation: true, recenter: true }
    }
}

/// Output of [`fit_kernel`].
#[derive(Clone, Debug)]
pub struct FitResult {
    pub kernel: KernelSeq,
    /// `‖H[w̃(z)] − target(z)‖_F / ‖target(z)‖_F` per sample.
    pub residuals: Vec<f64>,
    /// Part of the targets no kernel in the template reproduces, relative.
    pub irreducible: f64,
    /// `max_z |w̃_{0,0}(z, 0) − z|` before recentring.
    pub recenter_shift: f64,
    /// Number of `(key, node)` unknowns filled by interpolation.
    pub filled: usize,
}

impl FitResult {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().cloned().fold(0.0, f64::max)
    }
}

/// Template of a fit: grids, order cap and `z` degree.
#[derive(Clone, Debug)]
pub struct FitTemplate {
    pub grid: ModeGrid,
    pub r_grid: Vec<f64>,
    pub m_max: usize,
    pub z_degree: usize,
}

impl FitTemplate {
    pub fn like(w: &KernelSeq, m_max: usize, z_degree: usize) -> Self {
        Self { grid: w.grid().clone(), r_grid: w.r_grid().to_vec(), m_max, z_degree }
    }
}

/// Least-squares kernel in the disjoint gauge (`J ∩ L = ∅`) reproducing
/// `targets = [(z, A(z))]`. Each matrix element `⟨φ|A|ψ⟩` determines the
/// value at `(J, L, r) = (φ − φ∧ψ, ψ − φ∧ψ, E(φ∧ψ))`; elements sharing an
/// unknown are averaged in the least-squares sense, then each node is
/// fitted by a polynomial in `z`. Only elements inside the targets' common
/// support enter the fit and the residuals.
pub fn fit_kernel(
    targets: &[(C64, LinOp)],
    template: &FitTemplate,
    basis: &Arc<FockBasis>,
    opts: &FitOptions,
) -> Result<FitResult> {
    if targets.is_empty() {
        return Err(Error::InvalidParameter { name: "targets", reason: "need at least one z sample".into() });
    }
    if basis.grid() != &template.grid {
        return Err(Error::InvalidParameter { name: "basis", reason: "mode grid differs from the template's".into() });
    }
    let mut proto = KernelSeq::new(&template.grid, template.r_grid.clone(), template.m_max, template.z_degree)?;
    let nodes = proto.nodes();
    let node_of: Vec<Option<usize>> = basis.energies().iter().map(|&e| proto.node_of(e)).collect();
    if node_of.iter().any(Option::is_none) {
        return Err(Error::InvalidParameter { name: "r_grid", reason: "every basis energy must be a node".into() });
    }

    // group the matrix elements by unknown
    struct Eq {
        a: usize,
        b: usize,
        coef: f64,
    }
    let (rows, cols) = (targets[0].1.rows().clone(), targets[0].1.cols().clone());
    if targets.iter().any(|(_, t)| t.rows() != &rows || t.cols() != &cols) {
        return Err(Error::InvalidParameter { name: "targets", reason: "all samples must share one support".into() });
    }
    let mut groups: HashMap<(LegKey, usize), Vec<Eq>> = HashMap::new();
    let mut outside: Vec<(usize, usize)> = Vec::new();
    for &a in rows.indices() {
        for &b in cols.indices() {
            let (pa, pb) = (basis.state(a), basis.state(b));
            let chi: Vec<u8> = pa.iter().zip(pb).map(|(&x, &y)| x.min(y)).collect();
            let key = LegKey::new(
                pa.iter().zip(&chi).map(|(&x, &c)| x - c).collect(),
                pb.iter().zip(&chi).map(|(&y, &c)| y - c).collect(),
            );
            if key.m() + key.n() > template.m_max {
                outside.push((a, b));
                continue;
            }
            let c = basis.lookup(&chi).expect("basis is closed under removal");
            let coef = key.op_weight(&template.grid) * ladder(&chi, &key.create) * ladder(&chi, &key.annihilate);
            groups.entry((key, node_of[c].unwrap())).or_default().push(Eq { a, b, coef });
        }
    }

    // per-z solves
    let nz = targets.len();
    let mut keyed: BTreeMap<LegKey, Vec<Option<Vec<C64>>>> = BTreeMap::new();
    let mut irreducible_num = 0.0;
    let mut total_den = 0.0;
    for ((key, node), eqs) in &groups {
        let norm2: f64 = eqs.iter().map(|e| e.coef * e.coef).sum();
        let vals: Vec<C64> = targets
            .iter()
            .map(|(_, t)| eqs.iter().map(|e| t.entry(e.a, e.b) * e.coef).sum::<C64>() / norm2)
            .collect();
        keyed.entry(key.clone()).or_insert_with(|| vec![None; nodes])[*node] = Some(vals);
    }
    for (_, t) in targets {
        total_den += t.frobenius().powi(2);
        for &(a, b) in &outside {
            irreducible_num += t.entry(a, b).norm_sqr();
        }
    }

    // fill undetermined nodes, then fit in z
    let zfit = z_fitter(&targets.iter().map(|(z, _)| *z).collect::<Vec<_>>(), template.z_degree)?;
    let mut filled = 0usize;
    for (key, per_node) in keyed {
        let known: Vec<usize> = (0..nodes).filter(|&i| per_node[i].is_some()).collect();
        let missing = nodes - known.len();
        if missing > 0 && !opts.allow_extrapolation {
            return Err(Error::RankDeficientFit { deficiency: missing });
        }
        filled += missing;
        let r = &template.r_grid;
        let mut ch = Channel::zeros(template.z_degree, nodes);
        let mut samples = vec![vec![ZERO; nz]; nodes];
        for i in 0..nodes {
            samples[i] = match &per_node[i] {
                Some(v) => v.clone(),
                None => {
                    let right = known.iter().position(|&k| k > i);
                    match right {
                        Some(0) => per_node[known[0]].clone().unwrap(),
                        None => per_node[*known.last().unwrap()].clone().unwrap(),
                        Some(p) => {
                            let (lo, hi) = (known[p - 1], known[p]);
                            let t = (r[i] - r[lo]) / (r[hi] - r[lo]);
                            let (vl, vh) = (per_node[lo].as_ref().unwrap(), per_node[hi].as_ref().unwrap());
                            vl.iter().zip(vh).map(|(&x, &y)| x * (1.0 - t) + y * t).collect()
                        }
                    }
                }
            };
        }
        for i in 0..nodes {
            let coeffs = &zfit * nalgebra::DVector::from_column_slice(&samples[i]);
            for p in 0..=template.z_degree {
                ch.value[p * nodes + i] = coeffs[p];
            }
        }
        proto.insert(key, ch)?;
    }
    proto.recompute_dr();

    let zs: Vec<C64> = targets.iter().map(|(z, _)| *z).collect();
    let recenter_shift = proto.vacuum_deviation(&zs);
    if opts.recenter {
        let key = proto.free_key();
        let ch = proto.entries.entry(key).or_insert_with(|| Channel::zeros(template.z_degree, nodes));
        for p in 0..=template.z_degree {
            ch.value[p * nodes] = if p == 1 { C64::new(Z_RADIUS, 0.0) } else { ZERO };
        }
        let n = nodes;
        for p in 0..=template.z_degree {
            let d = nonuniform_derivative(&template.r_grid, &ch.value[p * n..(p + 1) * n]);
            ch.dr[p * n..(p + 1) * n].copy_from_slice(&d);
        }
    }

    let residuals = targets
        .iter()
        .map(|(z, t)| {
            let q = quantize(&proto, *z, basis)?.restrict(&rows, &cols)?;
            let den = t.frobenius();
            let diff = crate::fockspace::distance_frobenius(&q, t);
            Ok(if den > 0.0 { diff / den } else { diff })
        })
        .collect::<Result<Vec<_>>>()?;
    let irreducible = if total_den > 0.0 { (irreducible_num / total_den).sqrt() } else { 0.0 };
    Ok(FitResult { kernel: proto, residuals, irreducible, recenter_shift, filled })
}

/// Pseudo-inverse mapping samples at `zs` to coefficients of `u^0..u^deg`.
fn z_fitter(zs: &[C64], deg: usize) -> Result<DMatrix<C64>> {
    if zs.len() < deg + 1 {
        return Err(Error::RankDeficientFit { deficiency: deg + 1 - zs.len() });
    }
    let v = DMatrix::from_fn(zs.len(), deg + 1, |i, p| (zs[i] / Z_RADIUS).powi(p as i32));
    let svd = v.svd(true, true);
    let smax = svd.singular_values.max();
    let rank = svd.singular_values.iter().filter(|&&s| s > 1e-12 * smax).count();
    if rank < deg + 1 {
        return Err(Error::RankDeficientFit { deficiency: deg + 1 - rank });
    }
    svd.pseudo_inverse(1e-12 * smax).map_err(|e| Error::InvalidParameter { name: "z_samples", reason: e.into() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fockspace::{annihilate, build_basis, create, distance, hph, vacuum_expectation};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (Arc<FockBasis>, Vec<f64>) {
        let b = Arc::new(build_basis(&ModeGrid::new(0.5, 5).unwrap(), 2));
        let r = r_grid_for(&b, 33);
        (b, r)
    }

    fn cfg() -> NormConfig {
        NormConfig::new(0.5, 0.5).unwrap()
    }

    fn random_kernel(b: &Arc<FockBasis>, r: &[f64], m_max: usize, rng: &mut ChaCha8Rng, disjoint: bool) -> KernelSeq {
        let g = b.grid();
        let mut w = KernelSeq::free(g, r.to_vec(), m_max).unwrap();
        let modes = g.modes();
        for _ in 0..25 {
            let m = rng.random_range(0..=m_max);
            let n = rng.random_range(0..=(m_max - m));
            if m + n == 0 {
                continue;
            }
            let cr: Vec<usize> = (0..m).map(|_| rng.random_range(0..modes)).collect();
            let an: Vec<usize> = (0..n).map(|_| rng.random_range(0..modes)).collect();
            let key = LegKey::from_modes(modes, &cr, &an).unwrap();
            if disjoint && !key.is_disjoint() {
                continue;
            }
            let (a, bb, c) = (
                C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
                C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
                rng.random_range(-1.0..1.0),
            );
            w.set_fn(key, |r| ([a * (1.0 + c * r) * 0.01, bb * (1.0 + c * r) * 0.0025], [a * c * 0.01, bb * c * 0.0025]))
                .unwrap();
        }
        w
    }

    #[test]
    fn free_kernel_quantizes_to_hph_plus_z() {
        let (b, r) = setup();
        let w = KernelSeq::free(b.grid(), r, 2).unwrap();
        let z = C64::new(0.1, -0.05);
        let q = quantize(&w, z, &b).unwrap();
        let want = &hph(&b) + &LinOp::identity(&b, &b.full_support()).scale(z);
        assert!(distance(&q, &want) < 1e-15);
        assert!((vacuum_expectation(&q) - z).norm() < 1e-16);
        assert!((xi_norm(&w, z, &cfg()) - (z.norm() + 1.0)).abs() < 1e-14);
        let p = partial_norms(&w, &cfg());
        assert!((p.dz - 1.0).abs() < 1e-14 && (p.dr - 1.0).abs() < 1e-12);
        let dev = partial_norms(&w.minus_free(), &cfg());
        assert!(dev.dr < 1e-15 && dev.dz < 1e-15);
    }

    #[test]
    fn single_creation_leg_matches_ladder_operator() {
        let (b, r) = setup();
        let g = b.grid();
        let j = 2;
        let mut w = KernelSeq::new(g, r, 2, 0).unwrap();
        w.set_fn(LegKey::from_modes(g.modes(), &[j], &[]).unwrap(), |_| ([C64::new(1.0, 0.0)], [ZERO])).unwrap();
        let q = quantize(&w, ZERO, &b).unwrap();
        let want = create(&b, j).unwrap().scale(C64::new(g.quad_weight(j), 0.0));
        assert!(distance(&q, &want) < 1e-14);
        // (1,1) on one mode with constant kernel is q_j² a*_j a_j
        let mut w = KernelSeq::new(g, w.r_grid().to_vec(), 2, 0).unwrap();
        w.set_fn(LegKey::from_modes(g.modes(), &[j], &[j]).unwrap(), |_| ([C64::new(1.0, 0.0)], [ZERO])).unwrap();
        let q = quantize(&w, ZERO, &b).unwrap();
        let num = &create(&b, j).unwrap() * &annihilate(&b, j).unwrap();
        assert!(distance(&q, &num.scale(C64::new(g.quad_weight(j).powi(2), 0.0))) < 1e-14);
    }

    #[test]
    fn scalar_norm_examples() {
        let (b, r) = setup();
        let g = b.grid();
        let mut w = KernelSeq::new(g, r.clone(), 2, 0).unwrap();
        assert_eq!(xi_norm(&w, ZERO, &cfg()), 0.0);
        w.set_free_fn(|_| ([C64::new(0.3, 0.4)], [ZERO]));
        assert!((wmn_norm(&w, ZERO, 0, 0, &cfg()) - 0.5).abs() < 1e-15);
        w.set_free_fn(|r| ([C64::new(r, 0.0)], [C64::new(1.0, 0.0)]));
        assert!((wmn_norm(&w, ZERO, 0, 0, &cfg()) - 1.0).abs() < 1e-14);
        // εr² deviation: 2ε on [0, 1], ε on [0, 1/2]
        let eps = 0.01;
        let mut w = KernelSeq::free(g, r.clone(), 2).unwrap();
        w.set_free_fn(|r| ([C64::new(r + eps * r * r, 0.0), C64::new(Z_RADIUS, 0.0)], [C64::new(1.0 + 2.0 * eps * r, 0.0), ZERO]));
        let p = partial_norms(&w.minus_free(), &cfg());
        assert!((p.dr - 2.0 * eps).abs() < 1e-14);
        assert!((p.dr_minus - eps).abs() < 1e-14);
        // ξ scaling of a (1,1)-only kernel
        let mut w = KernelSeq::new(g, r, 2, 0).unwrap();
        w.set_fn(LegKey::from_modes(g.modes(), &[1], &[3]).unwrap(), |r| ([C64::new(1.0 + r, 0.0)], [C64::new(1.0, 0.0)]))
            .unwrap();
        let a = xi_norm(&w, ZERO, &NormConfig::new(0.5, 0.5).unwrap());
        let c = xi_norm(&w, ZERO, &NormConfig::new(0.25, 0.5).unwrap());
        assert!((c / a - 4.0).abs() < 1e-13);
    }

    #[test]
    fn quantization_bounds_hold() {
        let (b, r) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let w = random_kernel(&b, &r, 2, &mut rng, false);
            for z in [ZERO, C64::new(0.2, 0.1)] {
                for rec in quantization_bound_check(&w, z, &b, &cfg()).unwrap() {
                    assert!(rec.passed(), "{rec:?}");
                }
            }
        }
        let zero = KernelSeq::new(b.grid(), r, 2, 0).unwrap();
        assert!(quantization_bound_check(&zero, ZERO, &b, &cfg()).unwrap().iter().all(|r| r.value == 0.0));
    }

    #[test]
    fn linearity() {
        let (b, r) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let u = random_kernel(&b, &r, 2, &mut rng, false);
        let v = random_kernel(&b, &r, 2, &mut rng, false);
        let (a, c) = (C64::new(0.7, -0.2), C64::new(-1.3, 0.4));
        let z = C64::new(0.05, 0.1);
        let lhs = quantize(&u.combine(a, &v, c).unwrap(), z, &b).unwrap();
        let rhs = &quantize(&u, z, &b).unwrap().scale(a) + &quantize(&v, z, &b).unwrap().scale(c);
        assert!(distance(&lhs, &rhs) < 1e-13);
    }

    #[test]
    fn fit_round_trip() {
        let (b, r) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let w = random_kernel(&b, &r, 2, &mut rng, true);
        let zs = z_grid(16);
        let targets: Vec<_> = zs.iter().map(|&z| (z, quantize(&w, z, &b).unwrap())).collect();
        let tpl = FitTemplate::like(&w, 4, 4);
        let fit = fit_kernel(&targets, &tpl, &b, &FitOptions::default()).unwrap();
        assert!(fit.max_residual() < 1e-10, "{:?}", fit.residuals);
        assert!(fit.irreducible == 0.0);
        assert!(fit.recenter_shift < 1e-12);
        for z in [ZERO, C64::new(0.1, 0.2)] {
            let diff = fit.kernel.max_value_diff(&w, z, |k| {
                (0..b.dim())
                    .filter(|&c| {
                        let chi = b.state(c);
                        b.lookup(&add_legs(chi, &k.create)).is_some() && b.lookup(&add_legs(chi, &k.annihilate)).is_some()
                    })
                    .filter_map(|c| w.node_of(b.energy(c)))
                    .collect()
            });
            assert!(diff < 1e-10, "{diff}");
        }
        // free target
        let free = KernelSeq::free(b.grid(), r.clone(), 2).unwrap();
        let targets: Vec<_> = zs.iter().map(|&z| (z, quantize(&free, z, &b).unwrap())).collect();
        let fit = fit_kernel(&targets, &tpl, &b, &FitOptions::default()).unwrap();
        let d = fit.kernel.minus_free();
        assert!(xi_norm(&d, C64::new(0.2, 0.0), &cfg()) < 1e-12);
        // strict mode reports the unreachable auxiliary nodes
        let strict = FitOptions { allow_extrapolation: false, recenter: true };
        assert!(matches!(fit_kernel(&targets, &tpl, &b, &strict), Err(Error::RankDeficientFit { deficiency }) if deficiency > 0));
    }

    #[test]
    fn fit_reports_irreducible_part() {
        let (b, r) = setup();
        let g = b.grid();
        let mut w = KernelSeq::free(g, r, 3).unwrap();
        w.set_fn(LegKey::from_modes(g.modes(), &[3, 4], &[2]).unwrap(), |_| ([C64::new(0.1, 0.0)], [ZERO])).unwrap();
        let targets: Vec<_> = z_grid(8).iter().map(|&z| (z, quantize(&w, z, &b).unwrap())).collect();
        let tpl = FitTemplate::like(&w, 2, 2);
        let fit = fit_kernel(&targets, &tpl, &b, &FitOptions::default()).unwrap();
        assert!(fit.irreducible > 1e-4);
        assert!(fit.max_residual() > 1e-4);
    }

    #[test]
    fn json_round_trip() {
        let (b, r) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = random_kernel(&b, &r, 2, &mut rng, false);
        let back = KernelSeq::from_json(&serde_json::from_str(&serde_json::to_string(&w.to_json()).unwrap()).unwrap()).unwrap();
        assert_eq!(w, back);
    }

    #[test]
    fn derivative_channels() {
        let (b, r) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = random_kernel(&b, &r, 2, &mut rng, false);
        // random kernels are affine in r, so three-point differences are exact
        assert!(w.dr_consistency(C64::new(0.1, 0.1)) < 1e-12);
        let dz = w.derivative_z();
        let key = w.free_key();
        let z = C64::new(0.1, 0.05);
        let h = 1e-6;
        let fd = (w.value(&key, z + h, 5) - w.value(&key, z - h, 5)) / (2.0 * h);
        assert!((fd - dz.value(&key, z, 5)).norm() < 1e-9);
        let v = w.value_at(&key, z, 0.123456);
        assert!((v - (C64::new(0.123456, 0.0) + z)).norm() < 1e-12);
    }

    #[test]
    fn polydisc_boundary_is_member() {
        let (b, r) = setup();
        let w = KernelSeq::free(b.grid(), r, 2).unwrap();
        let spec = PolydiscSpec::new(0.1, 0.2, 0.3).unwrap();
        let m = polydisc_member(&w, &spec, &cfg());
        assert!(m.member);
        assert_eq!(m.margins, [0.1, 0.2, 0.3]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = random_kernel(&b, w.r_grid(), 2, &mut rng, false);
        let exact = refined_norm(&w.interaction(), &cfg());
        let spec = PolydiscSpec::new(exact, 1.0, 1.0).unwrap();
        assert!(polydisc_member(&w, &spec, &cfg()).member);
    }
}
