use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use bskit_core::bs_quant::{ClassicalObservable, ObservableSpec, SetSpec};
use bskit_core::coherent_family::{CoherentFamily, FamilyRegistry, FamilySpec};
use bskit_core::discrete_bundle::constants::BUNDLE_KERNEL_CUTOFF;
use bskit_core::semigroup_limit::DEFAULT_NU_SWEEP;
use serde::{Deserialize, Serialize};

use crate::{CliError, CliResult};

/// One experiment: the shared family/grid/observable/MC blocks plus one optional section
/// per subcommand.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub family: FamilySpec,
    pub grid: GridSpec,
    #[serde(default)]
    pub observables: BTreeMap<String, ObservableSpec>,
    #[serde(default)]
    pub mc: Option<McSpec>,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub resolution: Option<ResolutionSection>,
    #[serde(default)]
    pub spectrum: Option<SpectrumSection>,
    #[serde(default)]
    pub sibori: Option<SiboriSection>,
    #[serde(default)]
    pub fk: Option<FkSection>,
    #[serde(default)]
    pub jointprob: Option<JointProbSection>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub radius: f64,
    pub spacing: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSpec {
    pub n_paths: usize,
    pub steps: usize,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default)]
    pub dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolutionSection {
    #[serde(default = "default_resolution_threshold")]
    pub threshold: f64,
    /// Spacings for the refinement table; empty means (2h, h, h/2).
    #[serde(default)]
    pub refinement: Vec<f64>,
    /// Required residual(h)/residual(h/2); unchecked when absent.
    #[serde(default)]
    pub min_halving_ratio: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumOperator {
    /// 2Δ_{d″}, psd by construction.
    Dbar,
    /// ∇*∇ − n assembled directly; slightly indefinite on coarse grids.
    BochnerMinusN,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumSection {
    #[serde(default = "default_operator")]
    pub operator: SpectrumOperator,
    #[serde(default = "default_cutoff")]
    pub cutoff: f64,
    #[serde(default = "default_eigen_count")]
    pub eigenvalue_count: usize,
    /// Dense eigensolve grid (the main grid is usually too large for it).
    #[serde(default = "default_dense_radius")]
    pub dense_radius: f64,
    #[serde(default = "default_dense_spacing")]
    pub dense_spacing: f64,
    #[serde(default = "default_lanczos")]
    pub lanczos_iterations: usize,
    /// Relative tolerance on λ_min(∇*∇) = n.
    #[serde(default = "default_lowest_tol")]
    pub lowest_tolerance: f64,
    #[serde(default = "default_bkn_spacings")]
    pub bkn_spacings: Vec<f64>,
    /// Residual must stay ≤ C·h at every refinement level.
    #[serde(default = "default_one")]
    pub bkn_constant: f64,
    /// Least-squares convergence order of the residual must reach this.
    #[serde(default)]
    pub min_order: Option<f64>,
    #[serde(default)]
    pub max_order: Option<f64>,
    #[serde(default = "default_psd_tol")]
    pub psd_tolerance: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiboriSection {
    #[serde(default)]
    pub synthetic: Option<SyntheticSpec>,
    #[serde(default)]
    pub bundle: Option<BundleSpec>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    #[serde(default = "default_problems")]
    pub problems: usize,
    #[serde(default = "default_syn_dim")]
    pub dim: usize,
    #[serde(default = "default_kernel_dim")]
    pub kernel_dim: usize,
    #[serde(default = "default_one")]
    pub alpha: f64,
    #[serde(default = "default_one")]
    pub h_norm: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_nus")]
    pub nus: Vec<f64>,
    #[serde(default = "default_ts")]
    pub ts: Vec<f64>,
    #[serde(default = "default_slack")]
    pub slack: f64,
    #[serde(default = "default_slope_target")]
    pub slope_target: f64,
    #[serde(default = "default_slope_tol")]
    pub slope_tolerance: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleSpec {
    pub radius: f64,
    pub spacing: f64,
    /// Observable name for H.
    pub h: String,
    #[serde(default = "default_one")]
    pub t: f64,
    #[serde(default = "default_nus")]
    pub nus: Vec<f64>,
    /// ν at which distance ≤ C‖H‖/(να) + grid_tolerance is checked.
    #[serde(default)]
    pub nu_check: Option<f64>,
    #[serde(default = "default_bound_constant")]
    pub bound_constant: f64,
    #[serde(default)]
    pub grid_tolerance: f64,
    #[serde(default = "default_cutoff")]
    pub cutoff: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FkSection {
    #[serde(default = "default_fk_t")]
    pub t: f64,
    #[serde(default)]
    pub x: [f64; 2],
    #[serde(default)]
    pub y: [f64; 2],
    /// Observable name for V; V = 0 when absent.
    #[serde(default)]
    pub potential: Option<String>,
    #[serde(default = "default_oracle_radius")]
    pub oracle_radius: f64,
    /// Two oracle spacings, coarse then fine; their difference is the grid tolerance.
    #[serde(default = "default_oracle_spacings")]
    pub oracle_spacings: Vec<f64>,
    #[serde(default = "default_sigmas")]
    pub sigmas: f64,
    #[serde(default)]
    pub evolution: Option<EvolutionSpec>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionSpec {
    pub h: String,
    #[serde(default = "default_evo_nus")]
    pub nus: Vec<f64>,
    #[serde(default = "default_evo_t")]
    pub t: f64,
    /// Start points p₁; every pair shares the end point p₂.
    pub p1: Vec<[f64; 2]>,
    #[serde(default)]
    pub p2: [f64; 2],
    pub n_paths: usize,
    pub steps: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointProbSection {
    pub rho: String,
    pub h: String,
    pub times: Vec<f64>,
    pub sets: Vec<SetSpec>,
    #[serde(default = "default_jp_nu")]
    pub nu: f64,
    /// Bridges per leg inside one outer sample.
    #[serde(default = "default_usize_one")]
    pub leg_paths: usize,
    #[serde(default = "default_sigmas")]
    pub sigmas: f64,
    /// Known value (trivial cases); compared within sigmas·σ + expected_tolerance.
    #[serde(default)]
    pub expected: Option<f64>,
    #[serde(default = "default_expected_tol")]
    pub expected_tolerance: f64,
    #[serde(default)]
    pub surrogate: Option<SurrogateSpec>,
    #[serde(default)]
    pub operator: Option<OperatorSpec>,
    #[serde(default)]
    pub limit: Option<LimitSpec>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateSpec {
    /// Glauber truncation for the closing basis ê_k.
    #[serde(default = "default_surrogate_dim")]
    pub dim: usize,
    pub radius: f64,
    /// Coarse then fine; their difference is the grid tolerance.
    pub spacings: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorSpec {
    pub dim: usize,
    pub radius: f64,
    pub spacing: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitSpec {
    pub radius: f64,
    pub spacing: f64,
    #[serde(default = "default_surrogate_dim")]
    pub dim: usize,
    pub nus: Vec<f64>,
    #[serde(default = "default_bound_constant")]
    pub bound_constant: f64,
    /// Allowed |S(∞) − P_ρ| from discretization.
    pub grid_tolerance: f64,
    #[serde(default = "default_cutoff")]
    pub cutoff: f64,
}

fn default_resolution_threshold() -> f64 {
    1e-3
}
fn default_operator() -> SpectrumOperator {
    SpectrumOperator::Dbar
}
fn default_cutoff() -> f64 {
    BUNDLE_KERNEL_CUTOFF
}
fn default_eigen_count() -> usize {
    20
}
fn default_dense_radius() -> f64 {
    4.0
}
fn default_dense_spacing() -> f64 {
    0.25
}
fn default_lanczos() -> usize {
    1000
}
fn default_lowest_tol() -> f64 {
    0.02
}
fn default_bkn_spacings() -> Vec<f64> {
    vec![0.2, 0.1, 0.05]
}
fn default_one() -> f64 {
    1.0
}
fn default_usize_one() -> usize {
    1
}
fn default_psd_tol() -> f64 {
    1e-8
}
fn default_problems() -> usize {
    20
}
fn default_syn_dim() -> usize {
    24
}
fn default_kernel_dim() -> usize {
    8
}
fn default_nus() -> Vec<f64> {
    DEFAULT_NU_SWEEP.to_vec()
}
fn default_ts() -> Vec<f64> {
    vec![0.1, 0.5, 1.0, 1.5, 2.0]
}
fn default_slack() -> f64 {
    1.0 + 1e-6
}
fn default_slope_target() -> f64 {
    -1.0
}
fn default_slope_tol() -> f64 {
    0.15
}
fn default_bound_constant() -> f64 {
    5.0
}
fn default_fk_t() -> f64 {
    0.5
}
fn default_oracle_radius() -> f64 {
    4.0
}
fn default_oracle_spacings() -> Vec<f64> {
    vec![0.1, 0.05]
}
fn default_sigmas() -> f64 {
    3.0
}
fn default_evo_nus() -> Vec<f64> {
    vec![4.0, 8.0]
}
fn default_evo_t() -> f64 {
    0.1
}
fn default_jp_nu() -> f64 {
    2.0
}
fn default_expected_tol() -> f64 {
    1e-2
}
fn default_surrogate_dim() -> usize {
    10
}

/// Command-line overrides.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Parses and validates; `origin` names the source in diagnostics.
    pub fn parse(text: &str, origin: &str) -> CliResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config { path: origin.into(), message: e.to_string() })?;
        cfg.validate().map_err(|message| CliError::Config { path: origin.into(), message })?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), String> {
        self.build_family().map_err(|e| e.to_string())?;
        if !(self.grid.radius > 0.0 && self.grid.spacing > 0.0) {
            return Err("grid.radius and grid.spacing must be > 0".into());
        }
        for (name, spec) in &self.observables {
            spec.build().map_err(|e| format!("observables.{name}: {e}"))?;
        }
        let mut refs: Vec<(&str, &str)> = Vec::new();
        if let Some(fk) = &self.fk {
            if let Some(v) = &fk.potential {
                refs.push(("fk.potential", v));
            }
            if let Some(ev) = &fk.evolution {
                refs.push(("fk.evolution.h", &ev.h));
            }
            if fk.oracle_spacings.len() != 2 {
                return Err("fk.oracle_spacings needs exactly two entries (coarse, fine)".into());
            }
        }
        if let Some(jp) = &self.jointprob {
            refs.push(("jointprob.rho", &jp.rho));
            refs.push(("jointprob.h", &jp.h));
            if jp.times.len() != jp.sets.len() {
                return Err(format!("jointprob.times has {} entries but jointprob.sets has {}", jp.times.len(), jp.sets.len()));
            }
            if let Some(s) = &jp.surrogate {
                if s.spacings.len() != 2 {
                    return Err("jointprob.surrogate.spacings needs exactly two entries (coarse, fine)".into());
                }
            }
        }
        if let Some(b) = self.sibori.as_ref().and_then(|s| s.bundle.as_ref()) {
            refs.push(("sibori.bundle.h", &b.h));
        }
        for (field, name) in refs {
            if !self.observables.contains_key(name) {
                return Err(format!(
                    "{field} references unknown observable {name:?} (defined: {:?})",
                    self.observables.keys().collect::<Vec<_>>()
                ));
            }
        }
        Ok(())
    }

    pub fn build_family(&self) -> bskit_core::Result<Arc<dyn CoherentFamily>> {
        FamilyRegistry::default().build(&self.family)
    }

    pub fn observable(&self, name: &str) -> CliResult<ClassicalObservable> {
        let spec = self
            .observables
            .get(name)
            .ok_or_else(|| CliError::Config { path: "<config>".into(), message: format!("unknown observable {name:?}") })?;
        Ok(spec.build()?)
    }

    /// MC block with the seed resolved; a seed is mandatory whenever MC runs.
    pub fn mc_resolved(&self, opts: &RunOptions, section: &str) -> CliResult<(McSpec, u64)> {
        let mc = self.mc.clone().ok_or_else(|| CliError::Config {
            path: "<config>".into(),
            message: format!("[mc] (n_paths, steps, seed) is required by {section}"),
        })?;
        let seed = opts.seed.or(mc.seed).ok_or_else(|| CliError::Config {
            path: "<config>".into(),
            message: "mc.seed is required whenever Monte Carlo runs (or pass --seed)".into(),
        })?;
        Ok((mc, seed))
    }
}
