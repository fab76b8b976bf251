//! Experiment configuration shared by the runner and the bindings.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cutoffs::{Construction, Profile, SmoothFamily};
use crate::ensemble::EnsembleConfig;
use crate::error::{Error, Result};
use crate::flow::{FitSettings, FixedPointSettings, FlowConfig, FlowContext};
use crate::fockspace::{build_basis, FockBasis, ModeGrid};
use crate::kernels::NormConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub delta: f64,
    #[serde(rename = "J")]
    pub j_max: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { delta: 0.5, j_max: 7 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasisConfig {
    pub n_max: usize,
}

impl Default for BasisConfig {
    fn default() -> Self {
        Self { n_max: 2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FamilyConfig {
    /// Odd degree of the smoothstep profile.
    pub degree: usize,
    pub construction: Construction,
}

impl Default for FamilyConfig {
    fn default() -> Self {
        Self { degree: 5, construction: Construction::Quotient }
    }
}

/// Per-suite knobs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteSettings {
    /// Scale indices `m` (with `α = mδ`) for the single-scale suites.
    pub scales: Vec<usize>,
    /// `(m_α, m_β)` pairs for the two-scale suites.
    pub pairs: Vec<[usize; 2]>,
    /// Spectral parameters drawn per ensemble member.
    pub z_per_member: usize,
    /// Ensemble members fed to the fitted-flow suites.
    pub flow_members: usize,
    pub flow_pairs: Vec<[usize; 2]>,
    pub iterate_scale: usize,
    pub iterate_steps: usize,
    /// Points of the `r` grid of the smooth-family suite.
    pub family_points: usize,
    pub fixed_point: FixedPointSettings,
    pub fit: FitSettings,
}

impl Default for SuiteSettings {
    fn default() -> Self {
        Self {
            scales: vec![1, 2],
            pairs: vec![[1, 1], [1, 2], [2, 1]],
            z_per_member: 2,
            flow_members: 2,
            flow_pairs: vec![[1, 1]],
            iterate_scale: 1,
            iterate_steps: 5,
            family_points: 10_000,
            fixed_point: FixedPointSettings::default(),
            fit: FitSettings::default(),
        }
    }
}

/// Suite selection and output location.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Suites to run; empty selects all of them.
    pub suites: Vec<String>,
    pub out: Option<String>,
    /// Worker threads; `None` lets the pool decide.
    pub threads: Option<usize>,
}

/// Everything a run depends on.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: GridConfig,
    pub basis: BasisConfig,
    pub norms: NormConfig,
    pub flow: FlowConfig,
    pub family: FamilyConfig,
    pub ensemble: EnsembleConfig,
    pub suites: SuiteSettings,
    pub run: RunConfig,
}

fn need(ok: bool, name: &'static str, reason: impl Into<String>) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidParameter { name, reason: reason.into() })
    }
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Re-checks every constraint, naming the offending field.
    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        need(g.delta > 0.0 && g.delta.is_finite(), "grid.delta", format!("must be positive, got {}", g.delta))?;
        need(g.j_max >= 1, "grid.J", "must be at least 1")?;
        need(self.basis.n_max >= 1, "basis.n_max", "must be at least 1")?;
        let n = &self.norms;
        need(n.xi > 0.0 && n.xi < 1.0, "norms.xi", format!("must lie in (0, 1), got {}", n.xi))?;
        need(n.mu > 0.0 && n.mu.is_finite(), "norms.mu", format!("must be positive, got {}", n.mu))?;
        need(n.aux_points >= 2, "norms.aux_points", "need at least 2")?;
        need(n.z_points >= 3, "norms.z_points", "need at least 3")?;
        let f = &self.flow;
        need(f.r_z > 0.0 && f.r_z < 0.25, "flow.r_z", format!("must lie in (0, 1/4), got {}", f.r_z))?;
        for (v, name) in [
            (f.identity_tol, "flow.identity_tol"),
            (f.fp_tol, "flow.fp_tol"),
            (f.flow_tol, "flow.flow_tol"),
            (f.svd_threshold, "flow.svd_threshold"),
        ] {
            need(v > 0.0 && v.is_finite(), name, format!("must be positive, got {v}"))?;
        }
        need(f.max_iters >= 1, "flow.max_iters", "must be at least 1")?;
        need(
            self.family.degree >= 3 && self.family.degree % 2 == 1,
            "family.degree",
            format!("must be odd and at least 3, got {}", self.family.degree),
        )?;
        let e = &self.ensemble;
        need(e.epsilon >= 0.0 && e.epsilon.is_finite(), "ensemble.epsilon", "must be finite and non-negative")?;
        need(e.alpha_max > 0.0 && e.alpha_max.is_finite(), "ensemble.alpha_max", "must be positive")?;
        need(e.interaction.is_none_or(|t| t >= 0.0 && t.is_finite()), "ensemble.interaction", "must be non-negative")?;
        need(e.count >= 1, "ensemble.count", "must be at least 1")?;
        let s = &self.suites;
        let j = g.j_max;
        need(s.scales.iter().all(|&m| (1..=j).contains(&m)), "suites.scales", format!("entries must lie in 1..={j}"))?;
        for (pairs, name) in [(&s.pairs, "suites.pairs"), (&s.flow_pairs, "suites.flow_pairs")] {
            need(
                pairs.iter().all(|p| p[0] >= 1 && p[1] >= 1 && p[0] + p[1] <= j),
                name,
                format!("each pair needs both entries >= 1 and sum <= {j}"),
            )?;
        }
        need((1..=j).contains(&s.iterate_scale), "suites.iterate_scale", format!("must lie in 1..={j}"))?;
        need(s.family_points >= 2, "suites.family_points", "need at least 2")?;
        need(s.z_per_member >= 1, "suites.z_per_member", "must be at least 1")?;
        need(s.fixed_point.angles >= 1, "suites.fixed_point.angles", "must be at least 1")?;
        need(s.fit.z_points > s.fit.z_degree, "suites.fit.z_points", "must exceed suites.fit.z_degree")?;
        need(s.fit.max_residual > 0.0, "suites.fit.max_residual", "must be positive")?;
        need(s.fit.fd_step > 0.0, "suites.fit.fd_step", "must be positive")?;
        for name in &self.run.suites {
            if !crate::suites::SUITES.contains(&name.as_str()) {
                return Err(Error::UnknownSuite(name.clone()));
            }
        }
        need(self.run.threads != Some(0), "run.threads", "must be at least 1")?;
        Ok(())
    }

    pub fn mode_grid(&self) -> Result<ModeGrid> {
        ModeGrid::new(self.grid.delta, self.grid.j_max)
    }

    pub fn basis(&self) -> Result<Arc<FockBasis>> {
        Ok(Arc::new(build_basis(&self.mode_grid()?, self.basis.n_max)))
    }

    pub fn smooth_family(&self) -> Result<SmoothFamily> {
        Ok(SmoothFamily::new(Profile::new(self.family.degree)?, self.family.construction))
    }

    pub fn context(&self, basis: Arc<FockBasis>) -> Result<FlowContext> {
        FlowContext::new(basis, self.smooth_family()?, self.norms.clone(), self.flow.clone())
    }

    /// Suites selected by `run.suites`, in canonical order.
    pub fn selected_suites(&self) -> Vec<&'static str> {
        crate::suites::SUITES
            .iter()
            .copied()
            .filter(|s| self.run.suites.is_empty() || self.run.suites.iter().any(|x| x == s))
            .collect()
    }
}
