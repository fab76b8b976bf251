//! Seeded random kernels with a prescribed interaction norm.

use std::sync::Arc;

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fockspace::FockBasis;
use crate::kernels::{interaction_norm_z, r_grid_for, KernelSeq, LegKey, NormConfig, Z_RADIUS};

fn c(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// Parameters of a kernel ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub seed: u64,
    pub count: usize,
    /// Amplitude of the free-part perturbation. Zero gives free kernels.
    pub epsilon: f64,
    /// Target `‖w_(I)‖^{(ξ)}_Z`; `None` means `e^{-alpha_max}/200`.
    pub interaction: Option<f64>,
    /// Largest scale the ensemble must serve.
    pub alpha_max: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self { seed: 7, count: 50, epsilon: 0.02, interaction: None, alpha_max: 1.5 }
    }
}

impl EnsembleConfig {
    pub fn target(&self) -> f64 {
        self.interaction.unwrap_or_else(|| (-self.alpha_max).exp() / 200.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidParameter { name: "ensemble.epsilon", reason: "must be finite and non-negative".into() });
        }
        if !(self.alpha_max > 0.0 && self.alpha_max.is_finite()) {
            return Err(Error::InvalidParameter { name: "ensemble.alpha_max", reason: "must be positive".into() });
        }
        if !(self.target() >= 0.0 && self.target().is_finite()) {
            return Err(Error::InvalidParameter { name: "ensemble.interaction", reason: "must be non-negative".into() });
        }
        Ok(())
    }
}

/// Interaction keys of order `m + n ≤ 2` in the disjoint gauge.
fn interaction_keys(modes: usize) -> Vec<LegKey> {
    let mut out = Vec::new();
    for j in 0..modes {
        out.push(LegKey::from_modes(modes, &[j], &[]).unwrap());
        out.push(LegKey::from_modes(modes, &[], &[j]).unwrap());
        for l in j..modes {
            out.push(LegKey::from_modes(modes, &[j, l], &[]).unwrap());
            out.push(LegKey::from_modes(modes, &[], &[j, l]).unwrap());
            if l != j {
                out.push(LegKey::from_modes(modes, &[j], &[l]).unwrap());
                out.push(LegKey::from_modes(modes, &[l], &[j]).unwrap());
            }
        }
    }
    out
}

/// Canonical representative of `{key, key*}` so that adjoint pairs share coefficients.
fn pair_class(key: &LegKey) -> LegKey {
    let swapped = LegKey::new(key.annihilate.clone(), key.create.clone());
    key.clone().min(swapped)
}

/// One member: `w_{0,0} = z + r + ε a r(1 − r) + ε b z r` and interaction
/// entries `(a + b z)(1 + c r) Π ω^{1/2}` with real coefficients shared
/// between `w_{J,L}` and `w_{L,J}`, scaled to the target norm.
pub fn random_kernel(basis: &FockBasis, cfg: &EnsembleConfig, norms: &NormConfig, rng: &mut ChaCha8Rng) -> Result<KernelSeq> {
    let grid = basis.grid();
    let r_grid = r_grid_for(basis, norms.aux_points);
    let mut w = KernelSeq::new(grid, r_grid.clone(), 2, 1)?;
    let (a0, b0): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let eps = cfg.epsilon;
    w.set_free_fn(|r| {
        (
            [c(r + eps * a0 * r * (1.0 - r)), c(Z_RADIUS * (1.0 + eps * b0 * r))],
            [c(1.0 + eps * a0 * (1.0 - 2.0 * r)), c(Z_RADIUS * eps * b0)],
        )
    });
    if eps == 0.0 || cfg.target() == 0.0 {
        return Ok(w);
    }

    let mut inter = w.empty_like();
    let mut coeffs = std::collections::BTreeMap::new();
    for key in interaction_keys(grid.modes()) {
        let (a, b, cr) = *coeffs.entry(pair_class(&key)).or_insert_with(|| {
            (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        let weight: f64 = key
            .create
            .iter()
            .chain(&key.annihilate)
            .enumerate()
            .map(|(j, &n)| grid.frequency(j % grid.modes()).sqrt().powi(n as i32))
            .product();
        inter.set_fn(key, |r| {
            let g = weight * (1.0 + cr * r);
            ([c(a * g), c(Z_RADIUS * b * g)], [c(a * weight * cr), c(Z_RADIUS * b * weight * cr)])
        })?;
    }
    let n = interaction_norm_z(&inter, norms);
    if n == 0.0 {
        return Ok(w);
    }
    w.combine(c(1.0), &inter, c(cfg.target() / n))
}

/// `cfg.count` members drawn from one ChaCha stream seeded by `cfg.seed`.
pub fn gen_ensemble(basis: &Arc<FockBasis>, cfg: &EnsembleConfig, norms: &NormConfig) -> Result<Vec<KernelSeq>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.count).map(|_| random_kernel(basis, cfg, norms, &mut rng)).collect()
}

/// The free kernel `r + z` on the ensemble's grids.
pub fn free_kernel(basis: &FockBasis, norms: &NormConfig) -> Result<KernelSeq> {
    KernelSeq::free(basis.grid(), r_grid_for(basis, norms.aux_points), 2)
}
