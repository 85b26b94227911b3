//! Chart-parametrized coherent-state families, their quadrature grids, and the
//! resolution-of-identity check.
//!
//! Families are trait objects registered by name in a [`FamilyRegistry`], so configs can
//! select `"glauber"` or `"spin"` at runtime.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{BsError, Result};
use crate::operator_core::{C64, ComplexMatrix, eig_hermitian};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChartPoint {
    pub x: f64,
    pub y: f64,
}

impl ChartPoint {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn z(self) -> C64 {
        C64::new(self.x, self.y)
    }

    pub fn abs_sq(self) -> f64 {
        self.x * self.x + self.y * self.y
    }

    pub fn abs(self) -> f64 {
        self.abs_sq().sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<C64> for ChartPoint {
    fn from(z: C64) -> Self {
        Self { x: z.re, y: z.im }
    }
}

/// A real 1-form θ = θ_x dx + θ_y dy on the chart.
pub trait ConnectionForm: Send + Sync {
    fn theta(&self, p: ChartPoint) -> (f64, f64);
}

/// θ ≡ 0; the free test connection.
#[derive(Clone, Copy, Debug, Default)]
pub struct FlatConnection;

impl ConnectionForm for FlatConnection {
    fn theta(&self, _p: ChartPoint) -> (f64, f64) {
        (0.0, 0.0)
    }
}

/// A coherent-state family z ↦ ψ(z) over a single chart of ℂ.
pub trait CoherentFamily: Send + Sync {
    fn kind(&self) -> &'static str;
    /// Truncation dimension D.
    fn dim(&self) -> usize;
    /// Radius within which the truncated single-point objects are trusted.
    fn r_max(&self) -> f64;
    /// Raw components ψ_k(z), k < D, without domain checks.
    fn psi_raw(&self, z: ChartPoint) -> Vec<C64>;
    /// Untruncated Kähler potential ‖ψ(z)‖².
    fn kahler_potential(&self, z: ChartPoint) -> f64;
    /// Density of μ with respect to dx dy.
    fn density(&self, z: ChartPoint) -> f64;
    /// Normalized-frame connection form (θ_x, θ_y).
    fn theta_nor(&self, z: ChartPoint) -> (f64, f64);
}

impl<F: CoherentFamily + ?Sized> ConnectionForm for F {
    fn theta(&self, p: ChartPoint) -> (f64, f64) {
        self.theta_nor(p)
    }
}

/// Glauber states ψ_k(z) = z^k/√k!.
#[derive(Clone, Debug)]
pub struct Glauber {
    dim: usize,
    r_max: f64,
}

impl Glauber {
    /// R_max defaults to √D/2.
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(BsError::InvalidArgument("Glauber dimension must be ≥ 1".into()));
        }
        Ok(Self { dim, r_max: (dim as f64).sqrt() / 2.0 })
    }

    pub fn with_r_max(mut self, r_max: f64) -> Self {
        self.r_max = r_max;
        self
    }
}

impl CoherentFamily for Glauber {
    fn kind(&self) -> &'static str {
        "glauber"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn r_max(&self) -> f64 {
        self.r_max
    }

    fn psi_raw(&self, z: ChartPoint) -> Vec<C64> {
        let z = z.z();
        let mut out = Vec::with_capacity(self.dim);
        let mut term = C64::new(1.0, 0.0);
        for k in 0..self.dim {
            if k > 0 {
                term = term * z / (k as f64).sqrt();
            }
            out.push(term);
        }
        out
    }

    fn kahler_potential(&self, z: ChartPoint) -> f64 {
        z.abs_sq().exp()
    }

    fn density(&self, _z: ChartPoint) -> f64 {
        std::f64::consts::FRAC_1_PI
    }

    fn theta_nor(&self, z: ChartPoint) -> (f64, f64) {
        (z.y, -z.x)
    }
}

/// SU(2) coherent states on the stereographic chart: ψ_k(z) = √C(N,k)·z^k, D = N+1.
///
/// A second family satisfying the same Kähler assumptions, with density (N+1)/π·(1+|z|²)⁻².
#[derive(Clone, Debug)]
pub struct Spin {
    n: usize,
    r_max: f64,
}

impl Spin {
    pub fn new(n: usize) -> Self {
        Self { n, r_max: f64::INFINITY }
    }

    pub fn with_r_max(mut self, r_max: f64) -> Self {
        self.r_max = r_max;
        self
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

impl CoherentFamily for Spin {
    fn kind(&self) -> &'static str {
        "spin"
    }

    fn dim(&self) -> usize {
        self.n + 1
    }

    fn r_max(&self) -> f64 {
        self.r_max
    }

    fn psi_raw(&self, z: ChartPoint) -> Vec<C64> {
        let z = z.z();
        let mut pow = C64::new(1.0, 0.0);
        (0..=self.n)
            .map(|k| {
                if k > 0 {
                    pow *= z;
                }
                pow * binomial(self.n, k).sqrt()
            })
            .collect()
    }

    fn kahler_potential(&self, z: ChartPoint) -> f64 {
        (1.0 + z.abs_sq()).powi(self.n as i32)
    }

    fn density(&self, z: ChartPoint) -> f64 {
        (self.n as f64 + 1.0) / std::f64::consts::PI / (1.0 + z.abs_sq()).powi(2)
    }

    fn theta_nor(&self, z: ChartPoint) -> (f64, f64) {
        let s = self.n as f64 / (1.0 + z.abs_sq());
        (s * z.y, -s * z.x)
    }
}

/// Config-level family description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySpec {
    pub kind: String,
    /// Truncation dimension (Glauber).
    #[serde(default)]
    pub dim: Option<usize>,
    /// Spin label N (spin family).
    #[serde(default, rename = "N", alias = "n")]
    pub n: Option<usize>,
    #[serde(default)]
    pub r_max: Option<f64>,
}

type FamilyCtor = fn(&FamilySpec) -> Result<Arc<dyn CoherentFamily>>;

/// Named constructors for coherent families.
pub struct FamilyRegistry {
    ctors: BTreeMap<&'static str, FamilyCtor>,
}

impl Default for FamilyRegistry {
    fn default() -> Self {
        let mut r = Self { ctors: BTreeMap::new() };
        r.register("glauber", |s| {
            let dim = s.dim.ok_or_else(|| BsError::InvalidArgument("family.dim is required for glauber".into()))?;
            let mut g = Glauber::new(dim)?;
            if let Some(r) = s.r_max {
                g = g.with_r_max(r);
            }
            Ok(Arc::new(g))
        });
        r.register("spin", |s| {
            let n = s.n.ok_or_else(|| BsError::InvalidArgument("family.N is required for spin".into()))?;
            let mut f = Spin::new(n);
            if let Some(r) = s.r_max {
                f = f.with_r_max(r);
            }
            Ok(Arc::new(f))
        });
        r
    }
}

impl FamilyRegistry {
    pub fn register(&mut self, name: &'static str, ctor: FamilyCtor) {
        self.ctors.insert(name, ctor);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.ctors.keys().copied().collect()
    }

    pub fn build(&self, spec: &FamilySpec) -> Result<Arc<dyn CoherentFamily>> {
        let ctor = self
            .ctors
            .get(spec.kind.as_str())
            .ok_or_else(|| BsError::InvalidArgument(format!("unknown family kind {:?} (known: {:?})", spec.kind, self.names())))?;
        ctor(spec)
    }
}

fn check_domain(family: &dyn CoherentFamily, z: ChartPoint) -> Result<()> {
    if !z.is_finite() || z.abs() > family.r_max() {
        return Err(BsError::Domain { radius: z.abs(), r_max: family.r_max() });
    }
    Ok(())
}

pub fn psi(family: &dyn CoherentFamily, z: ChartPoint) -> Result<Vec<C64>> {
    check_domain(family, z)?;
    Ok(family.psi_raw(z))
}

/// ψ(z)/‖ψ(z)‖ in the truncated inner product.
pub fn normalized_ket(family: &dyn CoherentFamily, z: ChartPoint) -> Result<Vec<C64>> {
    let v = psi(family, z)?;
    let norm = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    Ok(v.into_iter().map(|c| c / norm).collect())
}

/// ⟨z1|z2⟩ between normalized kets.
pub fn overlap(family: &dyn CoherentFamily, z1: ChartPoint, z2: ChartPoint) -> Result<C64> {
    let a = normalized_ket(family, z1)?;
    let b = normalized_ket(family, z2)?;
    Ok(inner(&a, &b))
}

/// ⟨a|b⟩, antilinear in the first slot.
pub fn inner(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Truncated ‖ψ_D(z)‖².
pub fn kahler_potential_truncated(family: &dyn CoherentFamily, z: ChartPoint) -> f64 {
    family.psi_raw(z).iter().map(|c| c.norm_sqr()).sum()
}

/// The exact D×D compression of the coherent projector is c(z)c(z)† with
/// c(z) = ψ_D(z)/√K(z), K the untruncated potential. Valid at any radius.
pub fn coherent_block(family: &dyn CoherentFamily, z: ChartPoint) -> Vec<C64> {
    let s = family.kahler_potential(z).sqrt();
    family.psi_raw(z).into_iter().map(|c| c / s).collect()
}

/// ω = −i d″d′ log K as a multiple of dx∧dy, i.e. ½Δ log K, by central differences.
pub fn omega_density_fd(family: &dyn CoherentFamily, z: ChartPoint, step: f64) -> f64 {
    let f = |x: f64, y: f64| family.kahler_potential(ChartPoint::new(x, y)).ln();
    let c = f(z.x, z.y);
    let lap = (f(z.x + step, z.y) + f(z.x - step, z.y) + f(z.x, z.y + step) + f(z.x, z.y - step) - 4.0 * c) / (step * step);
    0.5 * lap
}

/// θ_nor = ½[(∂_x log h) dy − (∂_y log h) dx], h = 1/K, by central differences.
pub fn theta_nor_fd(family: &dyn CoherentFamily, z: ChartPoint, step: f64) -> (f64, f64) {
    let logh = |x: f64, y: f64| -family.kahler_potential(ChartPoint::new(x, y)).ln();
    let dx = (logh(z.x + step, z.y) - logh(z.x - step, z.y)) / (2.0 * step);
    let dy = (logh(z.x, z.y + step) - logh(z.x, z.y - step)) / (2.0 * step);
    (-0.5 * dy, 0.5 * dx)
}

/// Lattice points (i·h, j·h) inside |z| ≤ R with midpoint weights density·h².
#[derive(Clone, Debug)]
pub struct QuadratureGrid {
    pub points: Vec<ChartPoint>,
    pub weights: Vec<f64>,
    /// Integer lattice coordinates of each point.
    pub lattice: Vec<(i64, i64)>,
    pub spacing: f64,
    pub radius: f64,
}

impl QuadratureGrid {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        pairwise_sum(&self.weights)
    }

    /// Builds a grid from explicit points; used for degenerate and test grids.
    pub fn from_points(points: Vec<ChartPoint>, weights: Vec<f64>) -> Result<Self> {
        if points.len() != weights.len() {
            return Err(BsError::Dimension("points and weights differ in length".into()));
        }
        let radius = points.iter().map(|p| p.abs()).fold(0.0, f64::max);
        Ok(Self { lattice: vec![(0, 0); points.len()], points, weights, spacing: 0.0, radius })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["x", "y", "weight"])?;
        for (p, wt) in self.points.iter().zip(&self.weights) {
            w.write_record([p.x.to_string(), p.y.to_string(), wt.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Lattice nodes (i, j) with (ih)² + (jh)² ≤ R², ordered row by row (j outer).
pub fn disk_lattice(radius: f64, spacing: f64) -> Vec<(i64, i64)> {
    let n = (radius / spacing + 1e-9).floor() as i64;
    let r2 = radius * radius * (1.0 + 1e-12);
    let mut out = Vec::new();
    for j in -n..=n {
        for i in -n..=n {
            let (x, y) = (i as f64 * spacing, j as f64 * spacing);
            if x * x + y * y <= r2 {
                out.push((i, j));
            }
        }
    }
    out
}

/// Midpoint-rule grid on the disk |z| ≤ R. R_max is deliberately not enforced: the
/// grid-level objects use the untruncated potential.
pub fn make_grid(family: &dyn CoherentFamily, radius: f64, spacing: f64) -> Result<QuadratureGrid> {
    if !(spacing > 0.0) || !(radius > 0.0) || spacing >= radius {
        return Err(BsError::DegenerateGrid(format!("spacing {spacing} must be in (0, R = {radius})")));
    }
    let lattice = disk_lattice(radius, spacing);
    let points: Vec<ChartPoint> = lattice.iter().map(|&(i, j)| ChartPoint::new(i as f64 * spacing, j as f64 * spacing)).collect();
    let weights = points.iter().map(|&p| family.density(p) * spacing * spacing).collect();
    Ok(QuadratureGrid { points, weights, lattice, spacing, radius })
}

/// Σᵢ wᵢ cᵢcᵢ† for per-point weights `f`, accumulated in grid order.
pub fn weighted_projector_sum(family: &dyn CoherentFamily, grid: &QuadratureGrid, f: impl Fn(usize) -> C64) -> ComplexMatrix {
    let d = family.dim();
    let mut acc = vec![C64::new(0.0, 0.0); d * d];
    for (idx, (&p, &w)) in grid.points.iter().zip(&grid.weights).enumerate() {
        let fw = f(idx) * w;
        if fw == C64::new(0.0, 0.0) {
            continue;
        }
        let c = coherent_block(family, p);
        for k in 0..d {
            let ck = c[k] * fw;
            for l in 0..d {
                acc[k * d + l] += ck * c[l].conj();
            }
        }
    }
    ComplexMatrix::from_fn(d, d, |k, l| acc[k * d + l])
}

/// ‖Σᵢ wᵢ P(zᵢ) − I_D‖ in operator norm.
pub fn resolution_residual(family: &dyn CoherentFamily, grid: &QuadratureGrid) -> Result<f64> {
    let s = weighted_projector_sum(family, grid, |_| C64::new(1.0, 0.0));
    let diff = s.sub(&ComplexMatrix::identity(family.dim()))?;
    let spec = eig_hermitian(&diff.hermitian_part())?;
    Ok(spec.eigenvalues.iter().fold(0.0, |m, l| m.max(l.abs())))
}

/// Pairwise (tree) summation in fixed order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 16 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}
