//! Berezin–Simon quantization Q(f) = ∫ f(p) p dμ(p) at truncation D, the reproducing
//! projection on grid-sampled sections, Heisenberg evolution, trace products and quantum
//! joint probabilities.

use std::sync::Arc;

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::coherent_family::{
    ChartPoint, CoherentFamily, QuadratureGrid, coherent_block, make_grid, resolution_residual, weighted_projector_sum,
};
use crate::error::{BsError, Result};
use crate::operator_core::{C64, ComplexMatrix, HERMITIAN_TOL, eig_hermitian, expm};

/// `quantize` refuses grids whose resolution residual exceeds this.
pub const QUANTIZE_GATE: f64 = 1e-2;
/// Reference quadrature for Q̃(F): spacing divided by this factor…
pub const REFERENCE_REFINEMENT: f64 = 2.0;
/// …and radius extended by this much.
pub const REFERENCE_PAD: f64 = 3.0;
/// Tolerated trace defect of ρ before renormalization.
pub const STATE_TRACE_TOL: f64 = 1e-3;
/// Tolerated negative eigenvalue of ρ.
pub const STATE_PSD_TOL: f64 = 1e-8;

/// Where an observable is supported; used by Monte Carlo vertex sampling.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SupportHint {
    Empty,
    Disk {
        center: ChartPoint,
        radius: f64,
    },
    /// f(z) ∝ exp(−|z|²/m), i.e. a complex Gaussian with E|z|² = m.
    Gaussian {
        mean_abs_sq: f64,
    },
    Everywhere,
}

type Evaluator = Arc<dyn Fn(ChartPoint) -> C64 + Send + Sync>;

/// A bounded chart function F.
#[derive(Clone)]
pub struct ClassicalObservable {
    pub label: String,
    evaluator: Evaluator,
    pub support: SupportHint,
    /// Jump discontinuities (indicators) are averaged over grid cells instead of sampled.
    pub discontinuous: bool,
}

impl std::fmt::Debug for ClassicalObservable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ClassicalObservable({})", self.label)
    }
}

impl ClassicalObservable {
    pub fn new(label: impl Into<String>, support: SupportHint, f: impl Fn(ChartPoint) -> C64 + Send + Sync + 'static) -> Self {
        Self { label: label.into(), evaluator: Arc::new(f), support, discontinuous: false }
    }

    pub fn eval(&self, z: ChartPoint) -> C64 {
        (self.evaluator)(z)
    }

    /// Value attached to the grid cell of side `spacing` centred at p: the point value for
    /// continuous observables, the cell average for discontinuous ones.
    pub fn cell_value(&self, p: ChartPoint, spacing: f64) -> C64 {
        if !self.discontinuous || !(spacing > 0.0) {
            return self.eval(p);
        }
        cell_average(p, spacing, |q| self.eval(q))
    }

    /// max |F| over the grid points.
    pub fn bound_on(&self, grid: &QuadratureGrid) -> f64 {
        grid.points.iter().map(|&p| self.eval(p).norm()).fold(0.0, f64::max)
    }

    pub fn is_real_on(&self, grid: &QuadratureGrid) -> bool {
        grid.points.iter().all(|&p| self.eval(p).im == 0.0)
    }

    pub fn constant(c: f64) -> Self {
        let support = if c == 0.0 { SupportHint::Empty } else { SupportHint::Everywhere };
        Self::new(format!("constant({c})"), support, move |_| C64::new(c, 0.0))
    }

    /// a·exp(−|z − z₀|²/w²); the default bump is e^{−|z|²}.
    pub fn gaussian_bump(amplitude: f64, width: f64, center: ChartPoint) -> Self {
        Self::new(format!("gaussian_bump(a={amplitude}, w={width})"), SupportHint::Everywhere, move |p| {
            let d = ChartPoint::new(p.x - center.x, p.y - center.y);
            C64::new(amplitude * (-d.abs_sq() / (width * width)).exp(), 0.0)
        })
    }

    pub fn indicator_disk(center: ChartPoint, radius: f64) -> Self {
        PovmSet::disk(center, radius).as_observable()
    }

    pub fn coordinate(component: Coordinate) -> Self {
        Self::new(format!("coordinate({component:?})"), SupportHint::Everywhere, move |p| match component {
            Coordinate::Z => p.z(),
            Coordinate::ZBar => p.z().conj(),
            Coordinate::X => C64::new(p.x, 0.0),
            Coordinate::Y => C64::new(p.y, 0.0),
            Coordinate::AbsSq => C64::new(p.abs_sq(), 0.0),
        })
    }

    /// P-representation of the thermal state with mean occupation n̄: (1/n̄)e^{−|z|²/n̄}.
    pub fn thermal(nbar: f64) -> Self {
        Self::new(format!("thermal(nbar={nbar})"), SupportHint::Gaussian { mean_abs_sq: nbar }, move |p| {
            C64::new((-p.abs_sq() / nbar).exp() / nbar, 0.0)
        })
    }

    pub fn scaled(&self, a: C64) -> Self {
        let f = self.evaluator.clone();
        let mut out = Self::new(format!("{}*({a})", self.label), self.support, move |p| a * f(p));
        out.discontinuous = self.discontinuous;
        out
    }

    pub fn plus(&self, other: &Self) -> Self {
        let (f, g) = (self.evaluator.clone(), other.evaluator.clone());
        let mut out = Self::new(format!("{}+{}", self.label, other.label), SupportHint::Everywhere, move |p| f(p) + g(p));
        out.discontinuous = self.discontinuous || other.discontinuous;
        out
    }
}

/// Sub-samples per cell side for cell averages.
pub const CELL_SUBSAMPLES: usize = 8;

/// Mean of f over a CELL_SUBSAMPLES² midpoint lattice of the square cell centred at p.
pub fn cell_average(p: ChartPoint, spacing: f64, f: impl Fn(ChartPoint) -> C64) -> C64 {
    let m = CELL_SUBSAMPLES;
    let step = spacing / m as f64;
    let start = -0.5 * spacing + 0.5 * step;
    let mut acc = C64::new(0.0, 0.0);
    for a in 0..m {
        for b in 0..m {
            acc += f(ChartPoint::new(p.x + start + a as f64 * step, p.y + start + b as f64 * step));
        }
    }
    acc / (m * m) as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coordinate {
    Z,
    ZBar,
    X,
    Y,
    AbsSq,
}

/// The closed observable library available to configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObservableSpec {
    GaussianBump {
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default = "one")]
        width: f64,
        #[serde(default)]
        center: [f64; 2],
    },
    IndicatorDisk {
        radius: f64,
        #[serde(default)]
        center: [f64; 2],
    },
    Coordinate {
        component: Coordinate,
    },
    Constant {
        value: f64,
    },
    Thermal {
        nbar: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl ObservableSpec {
    pub fn build(&self) -> Result<ClassicalObservable> {
        Ok(match *self {
            ObservableSpec::GaussianBump { amplitude, width, center } => {
                if !(width > 0.0) {
                    return Err(BsError::InvalidArgument("gaussian_bump width must be > 0".into()));
                }
                ClassicalObservable::gaussian_bump(amplitude, width, ChartPoint::new(center[0], center[1]))
            }
            ObservableSpec::IndicatorDisk { radius, center } => {
                ClassicalObservable::indicator_disk(ChartPoint::new(center[0], center[1]), radius)
            }
            ObservableSpec::Coordinate { component } => ClassicalObservable::coordinate(component),
            ObservableSpec::Constant { value } => ClassicalObservable::constant(value),
            ObservableSpec::Thermal { nbar } => {
                if !(nbar > 0.0) {
                    return Err(BsError::InvalidArgument("thermal nbar must be > 0".into()));
                }
                ClassicalObservable::thermal(nbar)
            }
        })
    }
}

/// A measurable set S through its indicator χ_S.
#[derive(Clone)]
pub struct PovmSet {
    pub label: String,
    indicator: Arc<dyn Fn(ChartPoint) -> bool + Send + Sync>,
    pub support: SupportHint,
}

impl std::fmt::Debug for PovmSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "PovmSet({})", self.label)
    }
}

impl PovmSet {
    pub fn new(label: impl Into<String>, support: SupportHint, f: impl Fn(ChartPoint) -> bool + Send + Sync + 'static) -> Self {
        Self { label: label.into(), indicator: Arc::new(f), support }
    }

    pub fn contains(&self, p: ChartPoint) -> bool {
        (self.indicator)(p)
    }

    /// Fraction of the grid cell centred at p that lies in S.
    pub fn cell_fraction(&self, p: ChartPoint, spacing: f64) -> f64 {
        if !(spacing > 0.0) {
            return if self.contains(p) { 1.0 } else { 0.0 };
        }
        cell_average(p, spacing, |q| C64::new(if self.contains(q) { 1.0 } else { 0.0 }, 0.0)).re
    }

    pub fn whole() -> Self {
        Self::new("M", SupportHint::Everywhere, |_| true)
    }

    pub fn empty() -> Self {
        Self::new("∅", SupportHint::Empty, |_| false)
    }

    /// Open disk |z − c| < r.
    pub fn disk(center: ChartPoint, radius: f64) -> Self {
        Self::new(format!("disk(c=({},{}), r={radius})", center.x, center.y), SupportHint::Disk { center, radius }, move |p| {
            let d = ChartPoint::new(p.x - center.x, p.y - center.y);
            d.abs_sq() < radius * radius
        })
    }

    pub fn as_observable(&self) -> ClassicalObservable {
        let f = self.indicator.clone();
        ClassicalObservable {
            label: format!("chi[{}]", self.label),
            evaluator: Arc::new(move |p| C64::new(if f(p) { 1.0 } else { 0.0 }, 0.0)),
            support: self.support,
            discontinuous: true,
        }
    }
}

/// Config form of a POVM set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "set", rename_all = "snake_case", deny_unknown_fields)]
pub enum SetSpec {
    Whole,
    Empty,
    Disk {
        radius: f64,
        #[serde(default)]
        center: [f64; 2],
    },
}

impl SetSpec {
    pub fn build(&self) -> PovmSet {
        match *self {
            SetSpec::Whole => PovmSet::whole(),
            SetSpec::Empty => PovmSet::empty(),
            SetSpec::Disk { radius, center } => PovmSet::disk(ChartPoint::new(center[0], center[1]), radius),
        }
    }
}

/// A family with a grid that passed the resolution gate.
pub struct Quantizer<'a> {
    pub family: &'a dyn CoherentFamily,
    pub grid: &'a QuadratureGrid,
    pub resolution: f64,
}

impl<'a> Quantizer<'a> {
    pub fn new(family: &'a dyn CoherentFamily, grid: &'a QuadratureGrid) -> Result<Self> {
        let resolution = resolution_residual(family, grid)?;
        if !(resolution <= QUANTIZE_GATE) {
            return Err(BsError::UnresolvedGrid { residual: resolution, gate: QUANTIZE_GATE });
        }
        Ok(Self { family, grid, resolution })
    }

    /// Σᵢ wᵢ F(zᵢ) |zᵢ⟩⟨zᵢ|.
    pub fn quantize(&self, f: &ClassicalObservable) -> ComplexMatrix {
        quantize_unchecked(f, self.family, self.grid)
    }
}

/// Q(F) on a grid without the resolution gate (used for reference quadratures).
pub fn quantize_unchecked(f: &ClassicalObservable, family: &dyn CoherentFamily, grid: &QuadratureGrid) -> ComplexMatrix {
    weighted_projector_sum(family, grid, |i| f.cell_value(grid.points[i], grid.spacing))
}

pub fn quantize(f: &ClassicalObservable, family: &dyn CoherentFamily, grid: &QuadratureGrid) -> Result<ComplexMatrix> {
    Ok(Quantizer::new(family, grid)?.quantize(f))
}

/// The reproducing projection E on √w-scaled grid sections, held in factored form
/// E = W W† with W[i,k] = √wᵢ·cₖ(zᵢ), so that E[i,j] = √wᵢ⟨zⱼ|zᵢ⟩√wⱼ.
pub struct GramProjection {
    w: Mat<C64>,
    gram: ComplexMatrix,
    gram_eigenvalues: Vec<f64>,
    gram_sqrt: ComplexMatrix,
    pub resolution: f64,
}

impl GramProjection {
    pub fn new(family: &dyn CoherentFamily, grid: &QuadratureGrid) -> Result<Self> {
        let q = Quantizer::new(family, grid)?;
        let d = family.dim();
        let mut w = Mat::<C64>::zeros(grid.len(), d);
        for (i, (&p, &wt)) in grid.points.iter().zip(&grid.weights).enumerate() {
            let c = coherent_block(family, p);
            let s = wt.sqrt();
            for k in 0..d {
                w[(i, k)] = c[k] * s;
            }
        }
        let gram = ComplexMatrix::from_faer(w.adjoint() * &w).hermitian_part();
        let spec = eig_hermitian(&gram)?;
        let gram_sqrt = spec.apply_function(|g| C64::new(g.max(0.0).sqrt(), 0.0));
        Ok(Self { w, gram, gram_eigenvalues: spec.eigenvalues, gram_sqrt, resolution: q.resolution })
    }

    pub fn len(&self) -> usize {
        self.w.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.w.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn factor(&self) -> ComplexMatrix {
        ComplexMatrix::from_faer(self.w.clone())
    }

    /// G = W†W, whose nonzero spectrum equals that of E.
    pub fn gram(&self) -> &ComplexMatrix {
        &self.gram
    }

    pub fn trace(&self) -> f64 {
        self.gram.trace().re
    }

    /// ‖E² − E‖ = max |g(g − 1)| over the spectrum of G.
    pub fn idempotency_defect(&self) -> f64 {
        self.gram_eigenvalues.iter().map(|g| (g * (g - 1.0)).abs()).fold(0.0, f64::max)
    }

    pub fn apply(&self, s: &[C64]) -> Result<Vec<C64>> {
        if s.len() != self.len() {
            return Err(BsError::Dimension(format!("section of length {} on {} points", s.len(), self.len())));
        }
        let col = Mat::<C64>::from_fn(s.len(), 1, |i, _| s[i]);
        let out = &self.w * (self.w.adjoint() * &col);
        Ok((0..s.len()).map(|i| out[(i, 0)]).collect())
    }

    /// √w-scaled samples of the holomorphic section z ↦ ⟨u|z⟩ of u* ∈ H*.
    pub fn section_of(&self, u: &[C64]) -> Vec<C64> {
        (0..self.len()).map(|i| (0..self.dim()).map(|k| self.w[(i, k)] * u[k].conj()).sum()).collect()
    }

    /// Dense N×N matrix; only sensible for small grids.
    pub fn to_dense(&self) -> ComplexMatrix {
        ComplexMatrix::from_faer(&self.w * self.w.adjoint())
    }

    /// W† diag(F) W = Q_grid(F)ᵀ.
    pub fn compressed_multiplier(&self, f: &[C64]) -> ComplexMatrix {
        let fw = Mat::<C64>::from_fn(self.len(), self.dim(), |i, k| f[i] * self.w[(i, k)]);
        ComplexMatrix::from_faer(self.w.adjoint() * &fw)
    }

    /// Section-space image W Aᵀ W† of a D×D operator (quantization as a kernel operator).
    pub fn lift(&self, a: &ComplexMatrix) -> ComplexMatrix {
        let at = a.transpose();
        ComplexMatrix::from_faer(&self.w * at.as_faer() * self.w.adjoint())
    }

    /// ‖W Z W†‖ computed as ‖G^{1/2} Z G^{1/2}‖.
    pub fn sandwich_norm(&self, z: &ComplexMatrix) -> f64 {
        let s = self.gram_sqrt.as_faer();
        ComplexMatrix::from_faer(s * z.as_faer() * s).norm_op()
    }
}

pub fn projection_e(family: &dyn CoherentFamily, grid: &QuadratureGrid) -> Result<GramProjection> {
    GramProjection::new(family, grid)
}

/// Reference Q(F) on a refined, enlarged grid.
pub fn reference_quantize(f: &ClassicalObservable, family: &dyn CoherentFamily, grid: &QuadratureGrid) -> Result<ComplexMatrix> {
    let reference = make_grid(family, grid.radius + REFERENCE_PAD, grid.spacing / REFERENCE_REFINEMENT)?;
    Ok(quantize_unchecked(f, family, &reference))
}

/// ‖E·diag(F)·E − Q̃(F)‖ with Q̃(F) = W Q(F)ᵀ W† and Q(F) from the reference quadrature.
pub fn projrep_check(f: &ClassicalObservable, family: &dyn CoherentFamily, grid: &QuadratureGrid) -> Result<f64> {
    let e = GramProjection::new(family, grid)?;
    let q_ref = reference_quantize(f, family, grid)?;
    projrep_residual(&e, f, grid, &q_ref)
}

pub fn projrep_residual(e: &GramProjection, f: &ClassicalObservable, grid: &QuadratureGrid, q_ref: &ComplexMatrix) -> Result<f64> {
    let fv: Vec<C64> = grid.points.iter().map(|&p| f.cell_value(p, grid.spacing)).collect();
    let core = e.compressed_multiplier(&fv);
    Ok(e.sandwich_norm(&core.sub(&q_ref.transpose())?))
}

fn require_hermitian(m: &ComplexMatrix) -> Result<()> {
    let tol = HERMITIAN_TOL * m.norm_max().max(f64::MIN_POSITIVE);
    let defect = m.hermitian_defect();
    if defect > tol {
        return Err(BsError::NotHermitian { defect, tol });
    }
    Ok(())
}

/// e^{itQ(H)} Q(F) e^{−itQ(H)}.
pub fn heisenberg(qf: &ComplexMatrix, qh: &ComplexMatrix, t: f64) -> Result<ComplexMatrix> {
    require_hermitian(qh)?;
    if t == 0.0 {
        return Ok(qf.clone());
    }
    let u = expm(&qh.hermitian_part(), C64::new(0.0, t))?;
    u.matmul(qf)?.matmul(&u.adjoint())
}

/// Tr Πⱼ e^{itⱼQ(H)} Q(Fⱼ) e^{−itⱼQ(H)} on the D-dimensional space.
pub fn trace_product(
    times: &[f64],
    fs: &[ClassicalObservable],
    h: &ClassicalObservable,
    family: &dyn CoherentFamily,
    grid: &QuadratureGrid,
) -> Result<C64> {
    if times.len() != fs.len() {
        return Err(BsError::Dimension(format!("{} times for {} observables", times.len(), fs.len())));
    }
    let q = Quantizer::new(family, grid)?;
    let qh = q.quantize(h);
    let mut prod = ComplexMatrix::identity(family.dim());
    for (&t, f) in times.iter().zip(fs) {
        prod = prod.matmul(&heisenberg(&q.quantize(f), &qh, t)?)?;
    }
    Ok(prod.trace())
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct JointProbResiduals {
    pub resolution: f64,
    pub psd_correction: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct JointProbReport {
    pub value: f64,
    /// Imaginary part of the trace; zero up to rounding.
    pub imag: f64,
    /// Accumulated quadrature tolerance ε.
    pub epsilon: f64,
    pub residuals: JointProbResiduals,
}

/// ρ = Q(f_ρ), validated and renormalized; returns (ρ, |Tr ρ − 1|).
pub fn density_from_p_representation(q: &Quantizer<'_>, rho_f: &ClassicalObservable) -> Result<(ComplexMatrix, f64)> {
    let rho = q.quantize(rho_f).hermitian_part();
    let spec = eig_hermitian(&rho)?;
    let min = spec.eigenvalues.first().copied().unwrap_or(0.0);
    if min < -STATE_PSD_TOL {
        return Err(BsError::State(format!("Q(f_rho) has eigenvalue {min:.3e}")));
    }
    let tr = rho.trace().re;
    let correction = (tr - 1.0).abs();
    if correction > STATE_TRACE_TOL {
        return Err(BsError::State(format!("Tr Q(f_rho) = {tr:.6} differs from 1 by more than {STATE_TRACE_TOL}")));
    }
    Ok((rho.scale(C64::new(1.0 / tr, 0.0)), correction))
}

/// P_ρ(t⃗, S⃗) = Tr E_{t_N}(S_N)⋯E_{t_1}(S_1) ρ E_{t_1}(S_1)⋯E_{t_N}(S_N) with
/// E_t(S) = e^{itQ(H)} Q(χ_S) e^{−itQ(H)}.
pub fn joint_probability_operator(
    rho_f: &ClassicalObservable,
    h: &ClassicalObservable,
    times: &[f64],
    sets: &[PovmSet],
    family: &dyn CoherentFamily,
    grid: &QuadratureGrid,
) -> Result<JointProbReport> {
    if times.len() != sets.len() || times.is_empty() {
        return Err(BsError::Dimension(format!("{} times for {} sets", times.len(), sets.len())));
    }
    if times.windows(2).any(|w| w[1] < w[0]) || times[0] < 0.0 {
        return Err(BsError::InvalidArgument("times must be ascending and ≥ 0".into()));
    }
    let q = Quantizer::new(family, grid)?;
    let (rho, psd_correction) = density_from_p_representation(&q, rho_f)?;
    let qh = q.quantize(h).hermitian_part();
    let mut m = rho;
    for (&t, s) in times.iter().zip(sets) {
        let e = heisenberg(&q.quantize(&s.as_observable()), &qh, t)?;
        m = e.matmul(&m)?.matmul(&e)?;
    }
    let tr = m.trace();
    Ok(JointProbReport {
        value: tr.re,
        imag: tr.im,
        epsilon: (2 * times.len() + 1) as f64 * q.resolution + psd_correction,
        residuals: JointProbResiduals { resolution: q.resolution, psd_correction },
    })
}

/// Rescales a point; convenience for building shifted observables in tests and configs.
pub fn shifted(p: ChartPoint, dx: f64, dy: f64) -> ChartPoint {
    ChartPoint::new(p.x + dx, p.y + dy)
}
