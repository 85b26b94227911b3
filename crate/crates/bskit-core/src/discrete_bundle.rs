//! Finite-difference line bundle over the flat Glauber chart: link (Peierls) covariant
//! differences, the Bochner Laplacian ∇*∇, the ∂̄-Laplacian 2Δ_{d″}, and the holomorphic
//! projection as a spectral projection.
//!
//! Sparse storage, Lanczos and Krylov-free `expm_action` live here because the grids needed
//! for refinement studies have tens of thousands of points.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coherent_family::{ChartPoint, CoherentFamily, ConnectionForm, QuadratureGrid};
use crate::error::{BsError, Result};
use crate::operator_core::{C64, ComplexMatrix, Spectrum, eig_hermitian};

/// Every scale factor relating the chart metric, the Laplacians and Brownian motion.
pub mod constants {
    /// Chart metric is METRIC_SCALE·(dx² + dy²).
    pub const METRIC_SCALE: f64 = 1.0;
    /// n = dim_ℝ M, the Bochner–Kodaira–Nakano shift: 2Δ_{d″} = ∇*∇ − n.
    pub const N_SHIFT: f64 = 2.0;
    /// Curvature sign: dθ_nor = CURVATURE_SIGN·ω with ω = 2 dx∧dy.
    pub const CURVATURE_SIGN: f64 = -1.0;
    /// ω = OMEGA_DENSITY dx∧dy.
    pub const OMEGA_DENSITY: f64 = 2.0;
    /// Per-component Brownian diffusion generated by ½∇*∇ (Var = DIFFUSION·t).
    pub const FK_DIFFUSION: f64 = 1.0;
    /// Continuum gap of 2Δ_{d″} (first Landau level above the holomorphic one).
    pub const CONTINUUM_GAP: f64 = 4.0;
    /// Eigenvalues of the discrete 2Δ_{d″} below this count as kernel.
    pub const BUNDLE_KERNEL_CUTOFF: f64 = 0.5;
    /// Relative half-width around a cutoff inside which eigenvalues make it ambiguous.
    pub const CUTOFF_AMBIGUITY: f64 = 0.05;
    /// An eigenvector is "bulk" if this fraction of its mass lies in |z| ≤ R/2.
    pub const BULK_FRACTION: f64 = 0.5;
}

use constants::*;

/// Compressed sparse row complex matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<C64>,
}

impl CsrMatrix {
    /// Duplicates are summed; explicit zeros are kept out.
    pub fn from_triplets(rows: usize, cols: usize, mut trips: Vec<(usize, usize, C64)>) -> Self {
        trips.sort_by_key(|&(i, j, _)| (i, j));
        let mut indptr = vec![0usize; rows + 1];
        let mut indices = Vec::with_capacity(trips.len());
        let mut values: Vec<C64> = Vec::with_capacity(trips.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in trips {
            assert!(i < rows && j < cols, "triplet ({i},{j}) outside {rows}x{cols}");
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(j);
                values.push(v);
                indptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..rows {
            indptr[i + 1] += indptr[i];
        }
        Self { rows, cols, indptr, indices, values }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, n, (0..n).map(|i| (i, i, C64::new(1.0, 0.0))).collect())
    }

    pub fn from_diag(d: &[C64]) -> Self {
        Self::from_triplets(d.len(), d.len(), d.iter().enumerate().map(|(i, &v)| (i, i, v)).collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, C64)> + '_ {
        let r = self.indptr[i]..self.indptr[i + 1];
        self.indices[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.row(i).find(|&(c, _)| c == j).map(|(_, v)| v).unwrap_or_default()
    }

    pub fn matvec(&self, v: &[C64]) -> Vec<C64> {
        assert_eq!(v.len(), self.cols);
        (0..self.rows).map(|i| self.row(i).map(|(j, a)| a * v[j]).sum()).collect()
    }

    pub fn adjoint(&self) -> Self {
        let mut trips = Vec::with_capacity(self.nnz());
        for i in 0..self.rows {
            for (j, v) in self.row(i) {
                trips.push((j, i, v.conj()));
            }
        }
        Self::from_triplets(self.cols, self.rows, trips)
    }

    /// self · other, row by row with a dense accumulator.
    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows);
        let mut acc = vec![C64::new(0.0, 0.0); other.cols];
        let mut mark = vec![usize::MAX; other.cols];
        let mut trips = Vec::new();
        for i in 0..self.rows {
            let mut touched = Vec::new();
            for (k, a) in self.row(i) {
                for (j, b) in other.row(k) {
                    if mark[j] != i {
                        mark[j] = i;
                        acc[j] = C64::new(0.0, 0.0);
                        touched.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            for j in touched {
                trips.push((i, j, acc[j]));
            }
        }
        Self::from_triplets(self.rows, other.cols, trips)
    }

    /// self† · other.
    pub fn adjoint_mul(&self, other: &Self) -> Self {
        self.adjoint().matmul(other)
    }

    /// a·self + b·other.
    pub fn combine(&self, a: C64, other: &Self, b: C64) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let mut trips = Vec::with_capacity(self.nnz() + other.nnz());
        for i in 0..self.rows {
            trips.extend(self.row(i).map(|(j, v)| (i, j, a * v)));
            trips.extend(other.row(i).map(|(j, v)| (i, j, b * v)));
        }
        Self::from_triplets(self.rows, self.cols, trips)
    }

    pub fn scale(&self, c: C64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= c);
        out
    }

    /// self + diag(d).
    pub fn plus_diag(&self, d: &[C64]) -> Self {
        self.combine(C64::new(1.0, 0.0), &Self::from_diag(d), C64::new(1.0, 0.0))
    }

    pub fn shifted(&self, c: f64) -> Self {
        self.plus_diag(&vec![C64::new(c, 0.0); self.rows])
    }

    pub fn to_dense(&self) -> ComplexMatrix {
        let mut m = ComplexMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for (j, v) in self.row(i) {
                m.set(i, j, m.get(i, j) + v);
            }
        }
        m
    }

    pub fn hermitian_defect(&self) -> f64 {
        self.combine(C64::new(1.0, 0.0), &self.adjoint(), C64::new(-1.0, 0.0)).values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn norm_max(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Max absolute column sum.
    pub fn norm_one(&self) -> f64 {
        let mut col = vec![0.0; self.cols];
        for (j, v) in self.indices.iter().zip(&self.values) {
            col[*j] += v.norm();
        }
        col.into_iter().fold(0.0, f64::max)
    }
}

/// Boundary treatment of a discrete operator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Sections vanish outside the disk.
    Dirichlet,
}

/// A sparse operator on grid sections.
#[derive(Clone, Debug)]
pub struct DiscreteOperator {
    pub matrix: CsrMatrix,
    pub boundary: Boundary,
    pub hermitian: bool,
}

impl DiscreteOperator {
    pub fn len(&self) -> usize {
        self.matrix.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.rows() == 0
    }

    pub fn to_dense(&self) -> ComplexMatrix {
        self.matrix.to_dense()
    }

    pub fn apply(&self, s: &SectionGrid) -> Result<Vec<C64>> {
        if s.values.len() != self.len() {
            return Err(BsError::Dimension(format!("section of length {} for operator of size {}", s.values.len(), self.len())));
        }
        Ok(self.matrix.matvec(&s.values))
    }

    /// Dense Hermitian spectrum; only for grids of a few thousand points.
    pub fn spectrum(&self) -> Result<Spectrum> {
        eig_hermitian(&self.to_dense().hermitian_part())
    }
}

/// A section in the normalized frame sampled on a uniform grid.
#[derive(Clone, Debug)]
pub struct SectionGrid {
    pub grid: QuadratureGrid,
    pub values: Vec<C64>,
}

impl SectionGrid {
    pub fn new(grid: QuadratureGrid, values: Vec<C64>) -> Result<Self> {
        if grid.len() != values.len() {
            return Err(BsError::Dimension(format!("{} values on {} grid points", values.len(), grid.len())));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: &QuadratureGrid, f: impl Fn(ChartPoint) -> C64) -> Self {
        let values = grid.points.iter().map(|&p| f(p)).collect();
        Self { grid: grid.clone(), values }
    }

    /// ⟨a|b⟩ = Σ wᵢ conj(aᵢ) bᵢ.
    pub fn inner(&self, other: &SectionGrid) -> C64 {
        self.values.iter().zip(&other.values).zip(&self.grid.weights).map(|((a, b), w)| a.conj() * b * *w).sum()
    }

    pub fn norm(&self) -> f64 {
        self.inner(self).re.max(0.0).sqrt()
    }
}

/// Lattice lookup for a uniform grid.
struct LatticeIndex {
    spacing: f64,
    map: HashMap<(i64, i64), usize>,
}

impl LatticeIndex {
    fn new(grid: &QuadratureGrid) -> Result<Self> {
        let uniform = grid.spacing > 0.0
            && !grid.is_empty()
            && grid.weights.iter().all(|w| (w - grid.weights[0]).abs() <= 1e-12 * grid.weights[0].abs())
            && grid
                .lattice
                .iter()
                .zip(&grid.points)
                .all(|(&(i, j), p)| (i as f64 * grid.spacing - p.x).abs() < 1e-9 && (j as f64 * grid.spacing - p.y).abs() < 1e-9);
        if !uniform {
            return Err(BsError::InvalidArgument("bundle operators need a uniform lattice grid".into()));
        }
        let map = grid.lattice.iter().enumerate().map(|(k, &ij)| (ij, k)).collect();
        Ok(Self { spacing: grid.spacing, map })
    }

    fn get(&self, i: i64, j: i64) -> Option<usize> {
        self.map.get(&(i, j)).copied()
    }

    fn point(&self, i: f64, j: f64) -> ChartPoint {
        ChartPoint::new(i * self.spacing, j * self.spacing)
    }
}

/// Direction of link differences.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LinkDirection {
    Forward,
    Backward,
}

/// Covariant link differences (D_x, D_y) mapping grid sections to an extended row set that
/// includes the Dirichlet ghost sites, so that D†D carries the boundary correctly.
///
/// Forward: (D_x s)(i,j) = (e^{iθ_x h}s(i+1,j) − s(i,j))/h with θ at the link midpoint.
pub fn link_differences(conn: &dyn ConnectionForm, grid: &QuadratureGrid, dir: LinkDirection) -> Result<(CsrMatrix, CsrMatrix)> {
    let lat = LatticeIndex::new(grid)?;
    let h = lat.spacing;
    let mut base: BTreeSet<(i64, i64)> = grid.lattice.iter().copied().collect();
    for &(i, j) in &grid.lattice {
        match dir {
            LinkDirection::Forward => {
                base.insert((i - 1, j));
                base.insert((i, j - 1));
            }
            LinkDirection::Backward => {
                base.insert((i + 1, j));
                base.insert((i, j + 1));
            }
        }
    }
    let mut dx = Vec::new();
    let mut dy = Vec::new();
    for (r, &(i, j)) in base.iter().enumerate() {
        let (fi, fj) = (i as f64, j as f64);
        match dir {
            LinkDirection::Forward => {
                if let Some(c) = lat.get(i, j) {
                    dx.push((r, c, C64::new(-1.0 / h, 0.0)));
                    dy.push((r, c, C64::new(-1.0 / h, 0.0)));
                }
                if let Some(c) = lat.get(i + 1, j) {
                    let th = conn.theta(lat.point(fi + 0.5, fj)).0;
                    dx.push((r, c, C64::from_polar(1.0 / h, th * h)));
                }
                if let Some(c) = lat.get(i, j + 1) {
                    let th = conn.theta(lat.point(fi, fj + 0.5)).1;
                    dy.push((r, c, C64::from_polar(1.0 / h, th * h)));
                }
            }
            LinkDirection::Backward => {
                if let Some(c) = lat.get(i, j) {
                    dx.push((r, c, C64::new(1.0 / h, 0.0)));
                    dy.push((r, c, C64::new(1.0 / h, 0.0)));
                }
                if let Some(c) = lat.get(i - 1, j) {
                    let th = conn.theta(lat.point(fi - 0.5, fj)).0;
                    dx.push((r, c, -C64::from_polar(1.0 / h, -th * h)));
                }
                if let Some(c) = lat.get(i, j - 1) {
                    let th = conn.theta(lat.point(fi, fj - 0.5)).1;
                    dy.push((r, c, -C64::from_polar(1.0 / h, -th * h)));
                }
            }
        }
    }
    let m = base.len();
    Ok((CsrMatrix::from_triplets(m, grid.len(), dx), CsrMatrix::from_triplets(m, grid.len(), dy)))
}

/// ∇s = (∂_x s + iθ_x s, ∂_y s + iθ_y s) with central differences and zero ghost values.
pub fn covariant_grad(s: &SectionGrid, conn: &dyn ConnectionForm) -> Result<(SectionGrid, SectionGrid)> {
    let lat = LatticeIndex::new(&s.grid)?;
    let h = lat.spacing;
    let val = |i: i64, j: i64| lat.get(i, j).map(|k| s.values[k]).unwrap_or_default();
    let mut gx = Vec::with_capacity(s.values.len());
    let mut gy = Vec::with_capacity(s.values.len());
    for (k, &(i, j)) in s.grid.lattice.iter().enumerate() {
        let (tx, ty) = conn.theta(s.grid.points[k]);
        let v = s.values[k];
        gx.push((val(i + 1, j) - val(i - 1, j)) / (2.0 * h) + C64::new(0.0, tx) * v);
        gy.push((val(i, j + 1) - val(i, j - 1)) / (2.0 * h) + C64::new(0.0, ty) * v);
    }
    Ok((SectionGrid { grid: s.grid.clone(), values: gx }, SectionGrid { grid: s.grid.clone(), values: gy }))
}

/// The (0,1)-part ½(∇_x + i∇_y)s of the central-difference gradient.
pub fn dbar_part(s: &SectionGrid, conn: &dyn ConnectionForm) -> Result<SectionGrid> {
    let (gx, gy) = covariant_grad(s, conn)?;
    let values = gx.values.iter().zip(&gy.values).map(|(a, b)| 0.5 * (a + C64::new(0.0, 1.0) * b)).collect();
    Ok(SectionGrid { grid: s.grid.clone(), values })
}

/// θ_nor of a family as a connection form.
pub struct FamilyConnection<'a>(pub &'a dyn CoherentFamily);

impl ConnectionForm for FamilyConnection<'_> {
    fn theta(&self, p: ChartPoint) -> (f64, f64) {
        self.0.theta_nor(p)
    }
}

fn require_flat_chart(family: &dyn CoherentFamily) -> Result<()> {
    if family.kind() != "glauber" {
        return Err(BsError::Unsupported(format!(
            "bundle Laplacians are implemented on the flat Glauber chart only, not on '{}'",
            family.kind()
        )));
    }
    Ok(())
}

/// ∇*∇ = D_x†D_x + D_y†D_y for an arbitrary connection form.
pub fn bochner_with_connection(conn: &dyn ConnectionForm, grid: &QuadratureGrid) -> Result<DiscreteOperator> {
    let (dx, dy) = link_differences(conn, grid, LinkDirection::Forward)?;
    let m = dx.adjoint_mul(&dx).combine(C64::new(1.0, 0.0), &dy.adjoint_mul(&dy), C64::new(1.0, 0.0));
    Ok(DiscreteOperator { matrix: m.scale(C64::new(1.0 / METRIC_SCALE, 0.0)), boundary: Boundary::Dirichlet, hermitian: true })
}

/// 2Δ_{d″} assembled from d″ alone: with L = D_x + iD_y, 2Δ_{d″} = ½(L_f†L_f + L_b†L_b).
pub fn dbar_with_connection(conn: &dyn ConnectionForm, grid: &QuadratureGrid) -> Result<DiscreteOperator> {
    let i = C64::new(0.0, 1.0);
    let one = C64::new(1.0, 0.0);
    let mut total: Option<CsrMatrix> = None;
    for dir in [LinkDirection::Forward, LinkDirection::Backward] {
        let (dx, dy) = link_differences(conn, grid, dir)?;
        let l = dx.combine(one, &dy, i);
        let part = l.adjoint_mul(&l);
        total = Some(match total {
            None => part,
            Some(t) => t.combine(one, &part, one),
        });
    }
    let m = total.unwrap().scale(C64::new(0.5 / METRIC_SCALE, 0.0));
    Ok(DiscreteOperator { matrix: m, boundary: Boundary::Dirichlet, hermitian: true })
}

pub fn bochner_laplacian(family: &dyn CoherentFamily, grid: &QuadratureGrid) -> Result<DiscreteOperator> {
    require_flat_chart(family)?;
    bochner_with_connection(&FamilyConnection(family), grid)
}

pub fn dbar_laplacian(family: &dyn CoherentFamily, grid: &QuadratureGrid) -> Result<DiscreteOperator> {
    require_flat_chart(family)?;
    dbar_with_connection(&FamilyConnection(family), grid)
}

/// Smooth test sections used for the Bochner–Kodaira–Nakano residual: unit-width Gaussians
/// with a mild phase, centred well inside the disk.
pub fn bkn_test_sections(grid: &QuadratureGrid) -> Vec<SectionGrid> {
    let r = grid.radius;
    let centres = [(0.0, 0.0), (0.15 * r, -0.1 * r), (-0.1 * r, 0.12 * r)];
    centres
        .iter()
        .map(|&(cx, cy)| {
            SectionGrid::from_fn(grid, move |p| {
                let d2 = (p.x - cx).powi(2) + (p.y - cy).powi(2);
                C64::from_polar((-d2 / 2.0).exp(), 0.3 * p.x - 0.2 * p.y)
            })
        })
        .collect()
}

/// Points at distance ≤ R − margin from the origin; the margin keeps two link lengths and
/// two Gaussian widths clear of the Dirichlet boundary.
pub fn interior_mask(grid: &QuadratureGrid) -> Vec<bool> {
    let inner = (grid.radius - 2.0 - 2.0 * grid.spacing).max(0.5 * grid.radius);
    grid.points.iter().map(|p| p.abs() <= inner).collect()
}

/// max over the test sections of ‖(2Δ_{d″} − (∇*∇ − n))s‖_interior / ‖s‖_interior.
pub fn bkn_residual(dbar: &DiscreteOperator, bochner: &DiscreteOperator, grid: &QuadratureGrid) -> Result<f64> {
    let mask = interior_mask(grid);
    let mut worst: f64 = 0.0;
    for s in bkn_test_sections(grid) {
        let a = dbar.apply(&s)?;
        let b = bochner.apply(&s)?;
        let (mut num, mut den) = (0.0, 0.0);
        for k in 0..s.values.len() {
            if mask[k] {
                num += (a[k] - b[k] + N_SHIFT * s.values[k]).norm_sqr();
                den += s.values[k].norm_sqr();
            }
        }
        worst = worst.max((num / den).sqrt());
    }
    Ok(worst)
}

/// Per-point ratio (∂_xθ_y − ∂_yθ_x)/ω_density from central differences of θ.
pub fn curvature_ratio(conn: &dyn ConnectionForm, grid: &QuadratureGrid, step: f64) -> Vec<f64> {
    grid.points
        .iter()
        .map(|&p| {
            let dtx_dy = (conn.theta(ChartPoint::new(p.x, p.y + step)).0 - conn.theta(ChartPoint::new(p.x, p.y - step)).0) / (2.0 * step);
            let dty_dx = (conn.theta(ChartPoint::new(p.x + step, p.y)).1 - conn.theta(ChartPoint::new(p.x - step, p.y)).1) / (2.0 * step);
            (dty_dx - dtx_dy) / OMEGA_DENSITY
        })
        .collect()
}

/// Lowest eigenvalue of a Hermitian sparse matrix by plain Lanczos (no reorthogonalization;
/// spurious copies do not affect the extreme Ritz value).
pub fn lanczos_lowest(a: &CsrMatrix, iterations: usize, seed: u64) -> Result<f64> {
    let n = a.rows();
    if n == 0 || a.cols() != n {
        return Err(BsError::Dimension("Lanczos needs a non-empty square matrix".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<C64> = (0..n).map(|_| C64::new(rng.r#gen::<f64>() - 0.5, rng.r#gen::<f64>() - 0.5)).collect();
    let nv = norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let mut v_prev = vec![C64::new(0.0, 0.0); n];
    let (mut alphas, mut betas) = (Vec::new(), Vec::new());
    let mut beta = 0.0;
    for _ in 0..iterations.min(n) {
        let mut w = a.matvec(&v);
        let alpha: f64 = v.iter().zip(&w).map(|(x, y)| (x.conj() * y).re).sum();
        for k in 0..n {
            w[k] -= alpha * v[k] + beta * v_prev[k];
        }
        alphas.push(alpha);
        beta = norm(&w);
        if beta < 1e-12 * alpha.abs().max(1.0) {
            break;
        }
        betas.push(beta);
        w.iter_mut().for_each(|x| *x /= beta);
        v_prev = std::mem::replace(&mut v, w);
    }
    betas.truncate(alphas.len().saturating_sub(1));
    Ok(tridiagonal_lowest(&alphas, &betas))
}

fn norm(v: &[C64]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// Smallest eigenvalue of the symmetric tridiagonal (diag a, off-diag b) by Sturm bisection.
pub fn tridiagonal_lowest(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for k in 0..n {
        let r = b.get(k).map_or(0.0, |x| x.abs()) + if k > 0 { b[k - 1].abs() } else { 0.0 };
        lo = lo.min(a[k] - r);
        hi = hi.max(a[k] + r);
    }
    // Number of eigenvalues below x, from the signs of the LDLᵀ pivots.
    let count_below = |x: f64| {
        let mut count = 0;
        let mut d = 1.0;
        for k in 0..n {
            let off = if k > 0 { b[k - 1] * b[k - 1] } else { 0.0 };
            d = a[k] - x - if k > 0 { off / d } else { 0.0 };
            if d == 0.0 {
                d = -f64::EPSILON * (x.abs() + 1.0);
            }
            if d < 0.0 {
                count += 1;
            }
        }
        count
    };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if count_below(mid) >= 1 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// e^{tA}v by Taylor series on substeps with ‖tA/s‖₁ ≤ EXPM_ACTION_STEP_NORM.
pub fn expm_action(a: &CsrMatrix, t: C64, v: &[C64]) -> Result<Vec<C64>> {
    if a.rows() != a.cols() || v.len() != a.cols() {
        return Err(BsError::Dimension("expm_action needs a square matrix and matching vector".into()));
    }
    let size = t.norm() * a.norm_one();
    if !size.is_finite() {
        return Err(BsError::NumericRange("non-finite generator norm".into()));
    }
    let steps = (size / EXPM_ACTION_STEP_NORM).ceil().max(1.0) as usize;
    let dt = t / steps as f64;
    let mut out = v.to_vec();
    for _ in 0..steps {
        let scale = norm(&out);
        let mut term = out.clone();
        let mut acc = out.clone();
        for k in 1..=120 {
            term = a.matvec(&term);
            let c = dt / k as f64;
            term.iter_mut().for_each(|x| *x *= c);
            for (y, x) in acc.iter_mut().zip(&term) {
                *y += x;
            }
            if norm(&term) <= 1e-16 * scale.max(f64::MIN_POSITIVE) {
                break;
            }
        }
        out = acc;
        if out.iter().any(|x| !x.is_finite()) {
            return Err(BsError::NumericRange("expm_action overflowed".into()));
        }
    }
    Ok(out)
}

/// Substep size for `expm_action`; the Taylor terms peak near (norm)^k/k! ≈ 10 before decaying.
pub const EXPM_ACTION_STEP_NORM: f64 = 3.5;

/// Kernel entry K(p_i, p_j) w.r.t. Lebesgue measure of e^{tA}: (e^{tA})_{ij}/h².
pub fn lebesgue_kernel_entry(a: &CsrMatrix, t: C64, grid: &QuadratureGrid, i: usize, j: usize) -> Result<C64> {
    let mut e = vec![C64::new(0.0, 0.0); a.cols()];
    e[j] = C64::new(1.0, 0.0);
    Ok(expm_action(a, t, &e)?[i] / (grid.spacing * grid.spacing))
}

/// Index of the lattice point nearest to p.
pub fn nearest_index(grid: &QuadratureGrid, p: ChartPoint) -> Option<usize> {
    grid.points
        .iter()
        .enumerate()
        .min_by(|a, b| {
            let da = (a.1.x - p.x).powi(2) + (a.1.y - p.y).powi(2);
            let db = (b.1.x - p.x).powi(2) + (b.1.y - p.y).powi(2);
            da.total_cmp(&db)
        })
        .map(|(k, _)| k)
}

fn ambiguity_check(eigenvalues: &[f64], cutoff: f64) -> Result<()> {
    let nearby: Vec<f64> = eigenvalues.iter().copied().filter(|l| (l - cutoff).abs() <= CUTOFF_AMBIGUITY * cutoff.abs()).collect();
    if !nearby.is_empty() {
        return Err(BsError::AmbiguousCutoff { cutoff, nearby });
    }
    Ok(())
}

/// Spectral projection of 2Δ_{d″} onto eigenvalues below `cutoff`.
pub fn holomorphic_projection_spectral(family: &dyn CoherentFamily, grid: &QuadratureGrid, cutoff: f64) -> Result<ComplexMatrix> {
    let spec = dbar_laplacian(family, grid)?.spectrum()?;
    projection_below(&spec, cutoff)
}

pub fn projection_below(spec: &Spectrum, cutoff: f64) -> Result<ComplexMatrix> {
    ambiguity_check(&spec.eigenvalues, cutoff)?;
    Ok(spec.projector(|_, l| l < cutoff))
}

/// Number of eigenvalues below the cutoff.
pub fn kernel_count(eigenvalues: &[f64], cutoff: f64) -> usize {
    eigenvalues.iter().filter(|&&l| l < cutoff).count()
}

/// Fraction of |v|² carried by points with |z| ≤ R/2.
pub fn bulk_weight(grid: &QuadratureGrid, v: &[C64]) -> f64 {
    let total: f64 = v.iter().map(|x| x.norm_sqr()).sum();
    let inner: f64 = v.iter().zip(&grid.points).filter(|(_, p)| p.abs() <= 0.5 * grid.radius).map(|(x, _)| x.norm_sqr()).sum();
    inner / total
}

/// Smallest eigenvalue above `cutoff` whose eigenvector is concentrated in the bulk.
pub fn bulk_gap(spec: &Spectrum, grid: &QuadratureGrid, cutoff: f64) -> Option<f64> {
    spec.eigenvalues
        .iter()
        .enumerate()
        .filter(|&(_, &l)| l >= cutoff)
        .find(|&(k, _)| bulk_weight(grid, &spec.eigenvectors.column(k)) >= BULK_FRACTION)
        .map(|(_, &l)| l)
}

/// Literal gap: smallest eigenvalue above the cutoff.
pub fn first_above(eigenvalues: &[f64], cutoff: f64) -> Option<f64> {
    eigenvalues.iter().copied().find(|&l| l >= cutoff)
}

pub fn write_spectrum_csv(path: &Path, eigenvalues: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["index", "eigenvalue"])?;
    for (k, l) in eigenvalues.iter().enumerate() {
        w.write_record([k.to_string(), format!("{l:.17e}")])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coherent_family::{FlatConnection, Glauber, Spin, make_grid};

    fn glauber_grid(r: f64, h: f64) -> (Glauber, QuadratureGrid) {
        let g = Glauber::new(8).unwrap();
        let grid = make_grid(&g, r, h).unwrap();
        (g, grid)
    }

    #[test]
    fn csr_products_match_dense() {
        let a = CsrMatrix::from_triplets(3, 2, vec![(0, 0, C64::new(1.0, 1.0)), (2, 1, C64::new(0.0, 2.0)), (2, 1, C64::new(1.0, 0.0))]);
        let b = CsrMatrix::from_triplets(3, 2, vec![(1, 0, C64::new(3.0, 0.0)), (2, 1, C64::new(1.0, -1.0))]);
        let dense = a.to_dense().adjoint().matmul(&b.to_dense()).unwrap();
        assert!(a.adjoint_mul(&b).to_dense().sub(&dense).unwrap().norm_max() < 1e-15);
        assert_eq!(a.get(2, 1), C64::new(1.0, 2.0));
    }

    #[test]
    fn spin_family_is_unsupported() {
        let s = Spin::new(4);
        let grid = make_grid(&s, 2.0, 0.5).unwrap();
        assert!(matches!(bochner_laplacian(&s, &grid), Err(BsError::Unsupported(_))));
    }

    #[test]
    fn flat_gradient_of_constant_and_linear() {
        let (_, grid) = glauber_grid(2.0, 0.1);
        let one = SectionGrid::from_fn(&grid, |_| C64::new(1.0, 0.0));
        let lin = SectionGrid::from_fn(&grid, |p| C64::new(p.x, 0.0));
        let (cx, _) = covariant_grad(&one, &FlatConnection).unwrap();
        let (lx, ly) = covariant_grad(&lin, &FlatConnection).unwrap();
        for (k, p) in grid.points.iter().enumerate() {
            if p.abs() < 1.5 {
                assert!(cx.values[k].norm() < 1e-12);
                assert!((lx.values[k] - 1.0).norm() < 1e-12);
                assert!(ly.values[k].norm() < 1e-12);
            }
        }
    }

    #[test]
    fn tridiagonal_bisection() {
        // [[2,1],[1,2]] has eigenvalues 1 and 3.
        assert!((tridiagonal_lowest(&[2.0, 2.0], &[1.0]) - 1.0).abs() < 1e-14);
        assert!((tridiagonal_lowest(&[5.0], &[]) - 5.0).abs() < 1e-14);
    }

    #[test]
    fn expm_action_matches_dense() {
        let (g, grid) = glauber_grid(1.5, 0.25);
        let b = bochner_laplacian(&g, &grid).unwrap();
        let v: Vec<C64> = (0..b.len()).map(|k| C64::new((k as f64).sin(), 0.1 * k as f64)).collect();
        let t = C64::new(-0.3, 0.2);
        let sparse = expm_action(&b.matrix, t, &v).unwrap();
        let dense = crate::operator_core::expm(&b.to_dense(), t).unwrap().apply(&v).unwrap();
        let err = sparse.iter().zip(&dense).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn ambiguous_cutoff_lists_neighbours() {
        let err = ambiguity_check(&[0.1, 0.49, 0.8], 0.5).unwrap_err();
        assert_eq!(err, BsError::AmbiguousCutoff { cutoff: 0.5, nearby: vec![0.49] });
    }
}
