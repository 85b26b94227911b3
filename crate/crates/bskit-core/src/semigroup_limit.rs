//! The strong limit e^{−t(νA+iH)} → e^{−itE_K H E_K}E_K as ν → ∞ with the explicit
//! O(1/(να)) bounds, on synthetic problems and on the discretized line bundle.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bs_quant::{ClassicalObservable, GramProjection, PovmSet};
use crate::coherent_family::{CoherentFamily, QuadratureGrid, coherent_block};
use crate::discrete_bundle::{
    CsrMatrix, bochner_laplacian, constants, dbar_laplacian, expm_action, first_above, lanczos_lowest, projection_below,
};
use crate::error::{BsError, Result};
use crate::operator_core::{C64, ComplexMatrix, Spectrum, default_kernel_tol, eig_hermitian, expm};

/// Negative eigenvalues of A up to this fraction of ‖A‖ are clipped to zero.
pub const PSD_DUST_REL: f64 = 1e-8;
/// Tolerated component of v outside K before `error_bounds_check` refuses.
pub const KERNEL_MEMBERSHIP_TOL: f64 = 1e-10;
/// Default geometric ν sweep.
/// Absolute roundoff allowance in `BoundsRecord::holds`.
pub const BOUND_FLOOR: f64 = 1e-12;

pub const DEFAULT_NU_SWEEP: [f64; 5] = [10.0, 31.6, 100.0, 316.0, 1000.0];

/// A psd generator A with kernel projection E_K and gap α, plus a Hermitian H.
#[derive(Clone, Debug)]
pub struct SiboriProblem {
    pub a: ComplexMatrix,
    pub h: ComplexMatrix,
    pub alpha: f64,
    pub e_k: ComplexMatrix,
    pub h_norm: f64,
}

fn vec_norm(v: &[C64]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

fn vec_sub(a: &[C64], b: &[C64]) -> Vec<C64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn check_hermitian(m: &ComplexMatrix, what: &str) -> Result<()> {
    let tol = crate::operator_core::HERMITIAN_TOL * m.norm_max().max(1.0);
    let defect = m.hermitian_defect();
    if defect > tol {
        return Err(BsError::InvalidArgument(format!("{what} is not Hermitian (defect {defect:.3e})")));
    }
    Ok(())
}

impl SiboriProblem {
    /// Validates A (clipping negative dust) and measures E_K and α.
    pub fn new(a: ComplexMatrix, h: ComplexMatrix) -> Result<Self> {
        if !a.is_square() || a.rows() != h.rows() || !h.is_square() {
            return Err(BsError::Dimension("A and H must be square of equal size".into()));
        }
        check_hermitian(&a, "A")?;
        check_hermitian(&h, "H")?;
        let spec = eig_hermitian(&a)?;
        let scale = spec.eigenvalues.iter().map(|l| l.abs()).fold(0.0, f64::max);
        let dust = PSD_DUST_REL * scale.max(f64::MIN_POSITIVE);
        if let Some(&min) = spec.eigenvalues.first() {
            if min < -dust {
                return Err(BsError::NotPsd { eigenvalue: min });
            }
        }
        let tol = default_kernel_tol(&a).max(dust);
        Self::from_spectrum(&spec, h, tol)
    }

    /// Builds the problem from a spectrum: eigenvalues below `kernel_cutoff` are set to zero
    /// and span K.
    pub fn from_spectrum(spec: &Spectrum, h: ComplexMatrix, kernel_cutoff: f64) -> Result<Self> {
        let clipped = Spectrum {
            eigenvalues: spec.eigenvalues.iter().map(|&l| if l < kernel_cutoff { 0.0 } else { l }).collect(),
            eigenvectors: spec.eigenvectors.clone(),
        };
        let a = clipped.reconstruct().hermitian_part();
        let e_k = spec.projector(|_, l| l < kernel_cutoff).hermitian_part();
        let alpha = first_above(&spec.eigenvalues, kernel_cutoff).unwrap_or(f64::INFINITY);
        let h = h.hermitian_part();
        let h_norm = h.norm_op();
        Ok(Self { a, h, alpha, e_k, h_norm })
    }

    /// Random problem: A = V diag(0,…,0, α, …) V† with eigenvalues of K⊥ in [α, α + 3],
    /// and H a random Hermitian matrix scaled to ‖H‖ = h_norm.
    pub fn random(dim: usize, kernel_dim: usize, alpha: f64, h_norm: f64, seed: u64) -> Result<Self> {
        if kernel_dim == 0 || kernel_dim >= dim || !(alpha > 0.0) {
            return Err(BsError::InvalidArgument("need 0 < kernel_dim < dim and alpha > 0".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gauss = || -> f64 { StandardNormal.sample(&mut rng) };
        let g = ComplexMatrix::from_fn(dim, dim, |_, _| C64::new(gauss(), gauss()));
        let v = eig_hermitian(&g.add(&g.adjoint())?)?.eigenvectors;
        let eig: Vec<f64> = (0..dim)
            .map(|k| if k < kernel_dim { 0.0 } else { alpha + 3.0 * (k - kernel_dim) as f64 / (dim - kernel_dim) as f64 })
            .collect();
        let a = Spectrum { eigenvalues: eig, eigenvectors: v }.reconstruct().hermitian_part();
        let hraw = ComplexMatrix::from_fn(dim, dim, |_, _| C64::new(gauss(), gauss()));
        let hraw = hraw.add(&hraw.adjoint())?;
        let h = hraw.scale(C64::new(h_norm / hraw.norm_op(), 0.0));
        let p = Self::new(a, h)?;
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.a.rows()
    }

    /// e^{−t(νA + iH)} as a matrix.
    pub fn propagator(&self, nu: f64, t: f64) -> Result<ComplexMatrix> {
        if t < 0.0 {
            return Err(BsError::InvalidArgument(format!("t = {t} < 0: only the forward semigroup exists")));
        }
        if !(nu > 0.0) {
            return Err(BsError::InvalidArgument(format!("nu = {nu} must be > 0")));
        }
        let generator = self.a.scale(C64::new(nu, 0.0)).add(&self.h.scale(C64::new(0.0, 1.0)))?;
        expm(&generator, C64::new(-t, 0.0))
    }

    pub fn evolve(&self, nu: f64, t: f64, v: &[C64]) -> Result<Vec<C64>> {
        self.propagator(nu, t)?.apply(v)
    }

    /// e^{−itE_K H E_K}E_K as a matrix.
    pub fn limit_propagator(&self, t: f64) -> Result<ComplexMatrix> {
        let ehe = self.e_k.matmul(&self.h)?.matmul(&self.e_k)?.hermitian_part();
        expm(&ehe, C64::new(0.0, -t))?.matmul(&self.e_k)
    }

    pub fn limit_reference(&self, t: f64, v: &[C64]) -> Result<Vec<C64>> {
        self.limit_propagator(t)?.apply(v)
    }

    /// Projects v onto K, renormalizes to ‖v‖, and returns (E_K v, defect ‖(I−E_K)v‖/‖v‖).
    pub fn project_to_kernel(&self, v: &[C64]) -> Result<(Vec<C64>, f64)> {
        let nv = vec_norm(v);
        let ev = self.e_k.apply(v)?;
        let defect = vec_norm(&vec_sub(v, &ev)) / nv.max(f64::MIN_POSITIVE);
        let ne = vec_norm(&ev);
        let scaled = if ne > 0.0 { ev.iter().map(|x| x * (nv / ne)).collect() } else { ev };
        Ok((scaled, defect))
    }

    pub fn error_bounds_check(&self, nu: f64, t: f64, v: &[C64]) -> Result<BoundsRecord> {
        let (v, defect) = self.project_to_kernel(v)?;
        if defect > KERNEL_MEMBERSHIP_TOL {
            return Err(BsError::NotInKernel(defect));
        }
        let vt = self.evolve(nu, t, &v)?;
        let evt = self.e_k.apply(&vt)?;
        let perp = vec_sub(&vt, &evt);
        let perp_norm = vec_norm(&perp);
        // (d/dt + iEHE)E v_t = −iE H E⊥ v_t.
        let deriv_defect = vec_norm(&self.e_k.apply(&self.h.apply(&perp)?)?);
        let nv = vec_norm(&v);
        let denom = nu * self.alpha;
        Ok(BoundsRecord {
            nu,
            t,
            perp_norm,
            bound: self.h_norm * nv / denom,
            deriv_defect,
            deriv_bound: self.h_norm * self.h_norm * nv / denom,
            kernel_defect: defect,
        })
    }

    /// ν × t sweep for one v ∈ K.
    pub fn sweep(&self, nus: &[f64], ts: &[f64], v: &[C64]) -> Result<Vec<SweepRow>> {
        let mut rows = Vec::with_capacity(nus.len() * ts.len());
        for &t in ts {
            let (vk, _) = self.project_to_kernel(v)?;
            let reference = self.limit_reference(t, &vk)?;
            for &nu in nus {
                let rec = self.error_bounds_check(nu, t, &vk)?;
                let vt = self.evolve(nu, t, &vk)?;
                rows.push(SweepRow {
                    nu,
                    t,
                    perp_norm: rec.perp_norm,
                    bound: rec.bound,
                    distance_to_limit: vec_norm(&vec_sub(&vt, &reference)),
                });
            }
        }
        Ok(rows)
    }

    /// ‖e^{−t(νA+iH)} − e^{−itEHE}E‖ in operator norm.
    pub fn distance_to_limit(&self, nu: f64, t: f64) -> Result<f64> {
        Ok(self.propagator(nu, t)?.sub(&self.limit_propagator(t)?)?.norm_op())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct BoundsRecord {
    pub nu: f64,
    pub t: f64,
    pub perp_norm: f64,
    pub bound: f64,
    pub deriv_defect: f64,
    pub deriv_bound: f64,
    /// Relative component of the input outside K removed before evolving.
    pub kernel_defect: f64,
}

impl BoundsRecord {
    /// Both bounds up to `slack`, with an absolute floor of BOUND_FLOOR for roundoff
    /// (relevant when H = 0 makes both bounds vanish).
    pub fn holds(&self, slack: f64) -> bool {
        self.perp_norm <= self.bound * slack + BOUND_FLOOR && self.deriv_defect <= self.deriv_bound * slack + BOUND_FLOOR
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SweepRow {
    pub nu: f64,
    pub t: f64,
    pub perp_norm: f64,
    pub bound: f64,
    pub distance_to_limit: f64,
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Least-squares slope of log y against log x.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(BsError::InvalidArgument("slope fit needs ≥ 2 paired points".into()));
    }
    if xs.iter().chain(ys).any(|&v| !(v > 0.0)) {
        return Err(BsError::InvalidArgument("slope fit needs positive data".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

/// sup_t perp_norm per ν from a sweep, in the order of `nus`.
pub fn sup_perp_by_nu(rows: &[SweepRow], nus: &[f64]) -> Vec<f64> {
    nus.iter().map(|&nu| rows.iter().filter(|r| r.nu == nu).map(|r| r.perp_norm).fold(0.0, f64::max)).collect()
}

/// The line-bundle instance: A = 2Δ_{d″} with eigenvalues below the kernel cutoff set to
/// zero, E_K the spectral projection below the cutoff, H = M_H.
pub struct BundleSibori {
    pub problem: SiboriProblem,
    /// |λ_min(∇*∇) − n|, the discretization error of the shift.
    pub disc_error: f64,
    pub cutoff: f64,
    pub eigenvalues: Vec<f64>,
}

impl BundleSibori {
    pub fn new(family: &dyn CoherentFamily, grid: &QuadratureGrid, h: &ClassicalObservable, cutoff: f64) -> Result<Self> {
        let spec = dbar_laplacian(family, grid)?.spectrum()?;
        projection_below(&spec, cutoff)?;
        if spec.eigenvalues[0] < -1e-8 * spec.eigenvalues.last().copied().unwrap_or(1.0).abs() {
            return Err(BsError::NotPsd { eigenvalue: spec.eigenvalues[0] });
        }
        let bochner = bochner_laplacian(family, grid)?;
        let disc_error = (lanczos_lowest(&bochner.matrix, 600, 0)? - constants::N_SHIFT).abs();
        let mh = ComplexMatrix::from_diag(&grid.points.iter().map(|&p| h.cell_value(p, grid.spacing)).collect::<Vec<_>>());
        let problem = SiboriProblem::from_spectrum(&spec, mh, cutoff)?;
        if !(problem.alpha >= 10.0 * disc_error) {
            return Err(BsError::UnreliableGap { gap: problem.alpha, disc_error });
        }
        Ok(Self { problem, disc_error, cutoff, eigenvalues: spec.eigenvalues })
    }
}

#[derive(Clone, Debug)]
pub struct BundleSiboriResult {
    pub matrix: ComplexMatrix,
    pub distance_to_limit: f64,
    pub alpha: f64,
    /// ‖H‖/(να).
    pub rate: f64,
}

pub fn sibori_on_bundle(
    family: &dyn CoherentFamily,
    grid: &QuadratureGrid,
    h: &ClassicalObservable,
    nu: f64,
    t: f64,
) -> Result<BundleSiboriResult> {
    let b = BundleSibori::new(family, grid, h, constants::BUNDLE_KERNEL_CUTOFF)?;
    let matrix = b.problem.propagator(nu, t)?;
    let distance_to_limit = matrix.sub(&b.problem.limit_propagator(t)?)?.norm_op();
    Ok(BundleSiboriResult { matrix, distance_to_limit, alpha: b.problem.alpha, rate: b.problem.h_norm / (nu * b.problem.alpha) })
}

/// max over k < k_max of ‖E e^{−itEM_HE}E·ê_k − W e^{−itQ(H)ᵀ}e_k‖/‖ê_k‖, where ê_k = W e_k is
/// the sampled k-th holomorphic section and E is the spectral kernel projection.
pub fn conjugation_consistency(problem: &SiboriProblem, gram: &GramProjection, qh: &ComplexMatrix, t: f64, k_max: usize) -> Result<f64> {
    let lim = problem.limit_propagator(t)?;
    let w = gram.factor();
    let u = expm(&qh.transpose().hermitian_part(), C64::new(0.0, -t))?;
    let wu = w.matmul(&u)?;
    let mut worst: f64 = 0.0;
    for k in 0..k_max.min(gram.dim()) {
        let ek = w.column(k);
        let lhs = lim.apply(&ek)?;
        let rhs = wu.column(k);
        worst = worst.max(vec_norm(&vec_sub(&lhs, &rhs)) / vec_norm(&ek));
    }
    Ok(worst)
}

/// Applies e^{−Δ(νA ± iM_H)} to a block of vectors.
pub trait LegPropagator {
    fn propagate(&self, block: &mut [Vec<C64>], duration: f64, sign: f64) -> Result<()>;
}

/// Sparse generator; each vector is propagated by `expm_action`.
pub struct SparseLegs {
    pub a: CsrMatrix,
    pub mh: Vec<f64>,
    pub nu: f64,
}

impl LegPropagator for SparseLegs {
    fn propagate(&self, block: &mut [Vec<C64>], duration: f64, sign: f64) -> Result<()> {
        if duration == 0.0 {
            return Ok(());
        }
        let diag: Vec<C64> = self.mh.iter().map(|&h| C64::new(0.0, sign * h)).collect();
        let generator = self.a.scale(C64::new(self.nu, 0.0)).plus_diag(&diag);
        for v in block.iter_mut() {
            *v = expm_action(&generator, C64::new(-duration, 0.0), v)?;
        }
        Ok(())
    }
}

/// Dense generator from a `SiboriProblem`; ν = ∞ selects the limit propagator.
pub struct DenseLegs<'a> {
    pub problem: &'a SiboriProblem,
    pub nu: f64,
}

impl LegPropagator for DenseLegs<'_> {
    fn propagate(&self, block: &mut [Vec<C64>], duration: f64, sign: f64) -> Result<()> {
        let p = self.problem;
        let u = if self.nu.is_infinite() {
            let ehe = p.e_k.matmul(&p.h)?.matmul(&p.e_k)?.hermitian_part();
            expm(&ehe, C64::new(0.0, -sign * duration))?.matmul(&p.e_k)?
        } else {
            let generator = p.a.scale(C64::new(self.nu, 0.0)).add(&p.h.scale(C64::new(0.0, sign)))?;
            expm(&generator, C64::new(-duration, 0.0))?
        };
        for v in block.iter_mut() {
            *v = u.apply(v)?;
        }
        Ok(())
    }
}

/// Fixed-ν matrix surrogate of the loop formula:
/// Tr(M_{χ_N}U₋(Δ_N)⋯M_{χ_1}U₋(Δ_1)M_{f_ρ}U₊(Δ_1)M_{χ_1}⋯U₊(Δ_N)M_{χ_N}E) with
/// U_± = e^{−Δ(νA ± iM_H)}, Δ_k = t_k − t_{k−1}, t_0 = 0, and the trace closed on the
/// sampled holomorphic sections ê_k spanning E.
pub fn joint_probability_surrogate(
    legs: &dyn LegPropagator,
    family: &dyn CoherentFamily,
    grid: &QuadratureGrid,
    rho_f: &ClassicalObservable,
    times: &[f64],
    sets: &[PovmSet],
) -> Result<C64> {
    if times.len() != sets.len() || times.is_empty() {
        return Err(BsError::Dimension(format!("{} times for {} sets", times.len(), sets.len())));
    }
    if times[0] < 0.0 || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(BsError::InvalidArgument("times must be ascending and ≥ 0".into()));
    }
    let d = family.dim();
    let basis: Vec<Vec<C64>> = {
        let rows: Vec<Vec<C64>> = grid
            .points
            .iter()
            .zip(&grid.weights)
            .map(|(&p, &w)| coherent_block(family, p).into_iter().map(|c| c * w.sqrt()).collect())
            .collect();
        (0..d).map(|k| rows.iter().map(|r| r[k]).collect()).collect()
    };
    let chis: Vec<Vec<f64>> = sets.iter().map(|s| grid.points.iter().map(|&p| s.cell_fraction(p, grid.spacing)).collect()).collect();
    let f: Vec<C64> = grid.points.iter().map(|&p| rho_f.cell_value(p, grid.spacing)).collect();
    let mul = |block: &mut [Vec<C64>], m: &[f64]| {
        for v in block.iter_mut() {
            v.iter_mut().zip(m).for_each(|(x, c)| *x *= *c);
        }
    };
    let deltas: Vec<f64> = times.iter().enumerate().map(|(k, &t)| t - if k == 0 { 0.0 } else { times[k - 1] }).collect();
    let n = times.len();
    let mut block = basis.clone();
    // Right to left: M_{χ_N}, U₊(Δ_N), …, M_{χ_1}, U₊(Δ_1).
    for k in (0..n).rev() {
        mul(&mut block, &chis[k]);
        legs.propagate(&mut block, deltas[k], 1.0)?;
    }
    for v in block.iter_mut() {
        v.iter_mut().zip(&f).for_each(|(x, c)| *x *= *c);
    }
    for k in 0..n {
        legs.propagate(&mut block, deltas[k], -1.0)?;
        mul(&mut block, &chis[k]);
    }
    Ok(basis.iter().zip(&block).map(|(e, v)| e.iter().zip(v).map(|(a, b)| a.conj() * b).sum::<C64>()).sum())
}
