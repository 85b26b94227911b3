//! Monte Carlo on the flat chart: exact Brownian bridges, midpoint (Stratonovich) line
//! integrals, stochastic holonomy, Feynman–Kac kernels at fixed ν and loop estimates of
//! joint probabilities.
//!
//! Kernels are densities w.r.t. Lebesgue measure dx dy. A kernel K(x, y) carries the phase
//! e^{i∫θ} along bridges from x to y, which is the inverse parallel transport for
//! ∇ = d + iθ_nor.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::bs_quant::{ClassicalObservable, PovmSet, SupportHint};
use crate::coherent_family::{ChartPoint, ConnectionForm, pairwise_sum};
use crate::discrete_bundle::constants::{FK_DIFFUSION, N_SHIFT};
use crate::error::{BsError, Result};
use crate::operator_core::C64;

/// Fewer paths than this make the standard error meaningless.
pub const MIN_PATHS: usize = 100;
/// Largest ν accepted in MC mode; the e^{nνT} compensation blows up the variance beyond.
pub const NU_CAP: f64 = 32.0;

/// Counter-based stream for one path: identical for any thread count.
pub fn path_rng(seed: u64, path_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path_index);
    rng
}

/// A sampled path with its time stamps.
#[derive(Clone, Debug, PartialEq)]
pub struct PathSample {
    pub times: Vec<f64>,
    pub points: Vec<ChartPoint>,
    pub seed: u64,
}

impl PathSample {
    /// A deterministic path through the given points on equally spaced times in [0, duration].
    pub fn deterministic(points: Vec<ChartPoint>, duration: f64) -> Self {
        let m = points.len().saturating_sub(1).max(1) as f64;
        let times = (0..points.len()).map(|k| duration * k as f64 / m).collect();
        Self { times, points, seed: 0 }
    }
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Bridge points x → y over `steps` equal steps, each component with Var = diffusion·t.
fn bridge_points(rng: &mut ChaCha8Rng, x: ChartPoint, y: ChartPoint, duration: f64, steps: usize, diffusion: f64) -> Vec<ChartPoint> {
    let dt = duration / steps as f64;
    let mut pts = Vec::with_capacity(steps + 1);
    pts.push(x);
    let mut cur = x;
    for k in 0..steps - 1 {
        let remaining = duration - k as f64 * dt;
        let frac = dt / remaining;
        let sd = (diffusion * dt * (remaining - dt) / remaining).sqrt();
        cur = ChartPoint::new(cur.x + (y.x - cur.x) * frac + sd * gauss(rng), cur.y + (y.y - cur.y) * frac + sd * gauss(rng));
        pts.push(cur);
    }
    pts.push(y);
    pts
}

pub fn sample_bridge(x: ChartPoint, y: ChartPoint, duration: f64, steps: usize, diffusion: f64, seed: u64) -> Result<PathSample> {
    sample_bridge_indexed(x, y, duration, steps, diffusion, seed, 0)
}

pub fn sample_bridge_indexed(
    x: ChartPoint,
    y: ChartPoint,
    duration: f64,
    steps: usize,
    diffusion: f64,
    seed: u64,
    path_index: u64,
) -> Result<PathSample> {
    if !(duration > 0.0) || steps < 2 || !(diffusion > 0.0) {
        return Err(BsError::InvalidArgument(format!(
            "bridge needs duration > 0, steps ≥ 2, diffusion > 0 (got {duration}, {steps}, {diffusion})"
        )));
    }
    let mut rng = path_rng(seed, path_index);
    let points = bridge_points(&mut rng, x, y, duration, steps, diffusion);
    let times = (0..=steps).map(|k| duration * k as f64 / steps as f64).collect();
    Ok(PathSample { times, points, seed })
}

fn midpoint(a: ChartPoint, b: ChartPoint) -> ChartPoint {
    ChartPoint::new(0.5 * (a.x + b.x), 0.5 * (a.y + b.y))
}

fn line_integral_points<C: ConnectionForm + ?Sized>(points: &[ChartPoint], form: &C) -> f64 {
    points
        .windows(2)
        .map(|w| {
            let (tx, ty) = form.theta(midpoint(w[0], w[1]));
            tx * (w[1].x - w[0].x) + ty * (w[1].y - w[0].y)
        })
        .sum()
}

/// Σ_k form(midpoint)·(x_{k+1} − x_k).
pub fn stratonovich_line_integral<C: ConnectionForm + ?Sized>(path: &PathSample, form: &C) -> f64 {
    line_integral_points(&path.points, form)
}

/// Left-point (Itô) sum, for comparison with the midpoint rule.
pub fn ito_line_integral<C: ConnectionForm + ?Sized>(path: &PathSample, form: &C) -> f64 {
    path.points
        .windows(2)
        .map(|w| {
            let (tx, ty) = form.theta(w[0]);
            tx * (w[1].x - w[0].x) + ty * (w[1].y - w[0].y)
        })
        .sum()
}

/// Σ_k H(midpoint)·Δt_k.
pub fn time_integral(path: &PathSample, h: &ClassicalObservable) -> C64 {
    path.points.windows(2).zip(path.times.windows(2)).map(|(p, t)| h.eval(midpoint(p[0], p[1])) * (t[1] - t[0])).sum()
}

/// exp(−i[∫θ + ∫H dt]) for real H; unit modulus by construction.
pub fn holonomy_h<C: ConnectionForm + ?Sized>(path: &PathSample, form: &C, h: &ClassicalObservable) -> C64 {
    let phase = stratonovich_line_integral(path, form) + time_integral(path, h).re;
    C64::from_polar(1.0, -phase)
}

/// A 1-form given by a closure, e.g. an exact form dφ.
pub struct FormFn<F>(pub F);

impl<F: Fn(ChartPoint) -> (f64, f64) + Send + Sync> ConnectionForm for FormFn<F> {
    fn theta(&self, p: ChartPoint) -> (f64, f64) {
        (self.0)(p)
    }
}

/// θ + dφ for a gradient given as a closure.
pub struct GaugeShifted<'a, C: ?Sized, G> {
    pub base: &'a C,
    pub grad_phi: G,
}

impl<C: ConnectionForm + ?Sized, G: Fn(ChartPoint) -> (f64, f64) + Send + Sync> ConnectionForm for GaugeShifted<'_, C, G> {
    fn theta(&self, p: ChartPoint) -> (f64, f64) {
        let (a, b) = self.base.theta(p);
        let (c, d) = (self.grad_phi)(p);
        (a + c, b + d)
    }
}

/// Flat heat kernel with per-component variance `var`.
pub fn heat_kernel(x: ChartPoint, y: ChartPoint, var: f64) -> f64 {
    let d2 = (x.x - y.x).powi(2) + (x.y - y.y).powi(2);
    (-d2 / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var)
}

/// Mean ± standard error of complex samples.
#[derive(Clone, Debug, PartialEq)]
pub struct McEstimate {
    pub mean: C64,
    pub stderr: f64,
    pub n_samples: usize,
    pub seed: u64,
    /// e.g. "empty_support" when the estimate is 0 by detection rather than sampling.
    pub flags: Vec<String>,
}

impl McEstimate {
    pub fn from_samples(samples: &[C64], seed: u64) -> Self {
        let n = samples.len();
        let re: Vec<f64> = samples.iter().map(|s| s.re).collect();
        let im: Vec<f64> = samples.iter().map(|s| s.im).collect();
        let mean = C64::new(pairwise_sum(&re) / n as f64, pairwise_sum(&im) / n as f64);
        let dev: Vec<f64> = samples.iter().map(|s| (s - mean).norm_sqr()).collect();
        let var = if n > 1 { pairwise_sum(&dev) / (n - 1) as f64 } else { 0.0 };
        Self { mean, stderr: (var / n as f64).sqrt(), n_samples: n, seed, flags: Vec::new() }
    }

    /// Deterministic product with a constant (e.g. a heat-kernel prefactor).
    pub fn scaled(mut self, c: f64) -> Self {
        self.mean *= c;
        self.stderr *= c.abs();
        self
    }

    /// |mean − target| in units of the standard error.
    pub fn z_score(&self, target: C64) -> f64 {
        (self.mean - target).norm() / self.stderr.max(f64::MIN_POSITIVE)
    }

    pub fn to_json(&self, params: serde_json::Value) -> serde_json::Value {
        serde_json::json!({
            "mean_re": self.mean.re,
            "mean_im": self.mean.im,
            "stderr": self.stderr,
            "n": self.n_samples,
            "seed": self.seed,
            "flags": self.flags,
            "params": params,
        })
    }
}

fn check_counts(n_paths: usize, steps: usize) -> Result<()> {
    if n_paths < MIN_PATHS {
        return Err(BsError::McRefused(format!("{n_paths} paths < {MIN_PATHS}")));
    }
    if steps < 2 {
        return Err(BsError::InvalidArgument("steps must be ≥ 2".into()));
    }
    Ok(())
}

/// p_t(x,y)·E^{x,y}[e^{−∫V} e^{i∫θ}] for e^{−t(½∇*∇ + V)}.
#[allow(clippy::too_many_arguments)]
pub fn fk_kernel_estimate<C: ConnectionForm + ?Sized>(
    form: &C,
    x: ChartPoint,
    y: ChartPoint,
    t: f64,
    v: &ClassicalObservable,
    n_paths: usize,
    steps: usize,
    seed: u64,
) -> Result<McEstimate> {
    check_counts(n_paths, steps)?;
    if !(t > 0.0) {
        return Err(BsError::InvalidArgument(format!("t = {t} must be > 0")));
    }
    fk_generic(form, x, y, t, FK_DIFFUSION, |p| v.eval(p), n_paths, steps, seed).map(|e| e.scaled(heat_kernel(x, y, FK_DIFFUSION * t)))
}

/// Bridge average of e^{−∫pot dt}·e^{i∫θ} with the given diffusion.
#[allow(clippy::too_many_arguments)]
fn fk_generic<C: ConnectionForm + ?Sized>(
    form: &C,
    x: ChartPoint,
    y: ChartPoint,
    duration: f64,
    diffusion: f64,
    pot: impl Fn(ChartPoint) -> C64 + Sync,
    n_paths: usize,
    steps: usize,
    seed: u64,
) -> Result<McEstimate> {
    let dt = duration / steps as f64;
    let samples: Vec<C64> = (0..n_paths as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = path_rng(seed, k);
            let pts = bridge_points(&mut rng, x, y, duration, steps, diffusion);
            let theta = line_integral_points(&pts, form);
            let v: C64 = pts.windows(2).map(|w| pot(midpoint(w[0], w[1]))).sum::<C64>() * dt;
            (C64::new(0.0, theta) - v).exp()
        })
        .collect();
    Ok(McEstimate::from_samples(&samples, seed))
}

/// Kernel of e^{−t(ν(∇*∇ − n) + iM_H)} at (p₁, p₂): e^{nνt}·p(p₁,p₂)·E[e^{−i∫H dt}e^{i∫θ}]
/// over bridges with diffusion 2ν per component during physical time t.
#[allow(clippy::too_many_arguments)]
pub fn evolution_kernel_estimate<C: ConnectionForm + ?Sized>(
    form: &C,
    p1: ChartPoint,
    p2: ChartPoint,
    t: f64,
    h: &ClassicalObservable,
    nu: f64,
    n_paths: usize,
    steps: usize,
    seed: u64,
) -> Result<McEstimate> {
    check_counts(n_paths, steps)?;
    check_nu(nu)?;
    if !(t > 0.0) {
        return Err(BsError::InvalidArgument(format!("t = {t} must be > 0")));
    }
    let diffusion = 2.0 * nu * FK_DIFFUSION;
    let est = fk_generic(form, p1, p2, t, diffusion, |p| C64::new(0.0, h.eval(p).re), n_paths, steps, seed)?;
    Ok(est.scaled((N_SHIFT * nu * t).exp() * heat_kernel(p1, p2, diffusion * t)))
}

fn check_nu(nu: f64) -> Result<()> {
    if !(1.0..=NU_CAP).contains(&nu) {
        return Err(BsError::McRefused(format!("nu = {nu} outside [1, {NU_CAP}]")));
    }
    Ok(())
}

/// Equal-time kernel of the holomorphic projection w.r.t. Lebesgue measure, for the leg a → b:
/// exp(z̄_b z_a − |z_a|²/2 − |z_b|²/2)/π.
pub fn projection_kernel(a: ChartPoint, b: ChartPoint) -> C64 {
    (b.z().conj() * a.z() - 0.5 * (a.abs_sq() + b.abs_sq())).exp() / std::f64::consts::PI
}

/// Vertex proposal matching a support hint; returns (point, proposal density).
fn propose(hint: SupportHint, rng: &mut ChaCha8Rng) -> Result<(ChartPoint, f64)> {
    use std::f64::consts::PI;
    match hint {
        SupportHint::Empty => Err(BsError::McRefused("importance weights vanish identically (empty support)".into())),
        SupportHint::Disk { center, radius } => {
            let r = radius * rand::Rng::r#gen::<f64>(rng).sqrt();
            let phi = 2.0 * PI * rand::Rng::r#gen::<f64>(rng);
            Ok((ChartPoint::new(center.x + r * phi.cos(), center.y + r * phi.sin()), 1.0 / (PI * radius * radius)))
        }
        SupportHint::Gaussian { .. } | SupportHint::Everywhere => {
            // Whole-chart observables get a complex Gaussian with E|z|² = 2.
            let m = match hint {
                SupportHint::Gaussian { mean_abs_sq } => mean_abs_sq,
                _ => 2.0,
            };
            let sd = (m / 2.0).sqrt();
            let p = ChartPoint::new(sd * gauss(rng), sd * gauss(rng));
            Ok((p, (-p.abs_sq() / m).exp() / (PI * m)))
        }
    }
}

/// Loop estimate of P_ρ(t⃗, S⃗). Vertices in loop order are
/// (χ_{S_N}, …, χ_{S_1}, f_ρ, χ_{S_1}, …, χ_{S_N}) at times (t_N, …, t_1, 0, t_1, …, t_N).
/// The f_ρ vertex is drawn from a proposal matched to its support; the others by Gaussian
/// increments whose density is the leg heat kernel, so the heat-kernel factors cancel.
/// Leg j → j+1 carries e^{i∫θ}·e^{∓i∫H dt} (descending/ascending half), a zero-duration leg
/// is the identity (coincident vertices), and the loop is closed by the projection kernel.
/// Each of the `n_outer` samples averages `n_paths` bridges per leg.
#[allow(clippy::too_many_arguments)]
pub fn loop_joint_probability<C: ConnectionForm + ?Sized>(
    form: &C,
    rho_f: &ClassicalObservable,
    h: &ClassicalObservable,
    times: &[f64],
    sets: &[PovmSet],
    nu: f64,
    n_outer: usize,
    n_paths: usize,
    steps: usize,
    seed: u64,
) -> Result<McEstimate> {
    if times.len() != sets.len() || times.is_empty() {
        return Err(BsError::Dimension(format!("{} times for {} sets", times.len(), sets.len())));
    }
    if times[0] < 0.0 || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(BsError::InvalidArgument("times must be ascending and ≥ 0".into()));
    }
    check_counts(n_outer, steps)?;
    check_nu(nu)?;
    if n_paths == 0 {
        return Err(BsError::InvalidArgument("n_paths must be ≥ 1".into()));
    }
    if rho_f.support == SupportHint::Empty {
        return Err(BsError::McRefused("f_rho has empty support".into()));
    }
    if sets.iter().any(|s| s.support == SupportHint::Empty) {
        let mut e = McEstimate { mean: C64::new(0.0, 0.0), stderr: 0.0, n_samples: 0, seed, flags: Vec::new() };
        e.flags.push("empty_support".into());
        return Ok(e);
    }
    let n = times.len();
    // Loop-order vertex times and their indicator (None for the f_ρ vertex).
    let mut vtimes = Vec::with_capacity(2 * n + 1);
    let mut vsets: Vec<Option<&PovmSet>> = Vec::with_capacity(2 * n + 1);
    for k in (0..n).rev() {
        vtimes.push(times[k]);
        vsets.push(Some(&sets[k]));
    }
    vtimes.push(0.0);
    vsets.push(None);
    for k in 0..n {
        vtimes.push(times[k]);
        vsets.push(Some(&sets[k]));
    }
    let total_time: f64 = vtimes.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    let prefactor = (N_SHIFT * nu * total_time).exp();
    let diffusion = 2.0 * nu * FK_DIFFUSION;
    let centre = n;

    let samples: Vec<C64> = (0..n_outer as u64)
        .into_par_iter()
        .map(|idx| -> C64 {
            let mut rng = path_rng(seed, idx);
            let (pf, q) = propose(rho_f.support, &mut rng).expect("support checked");
            let mut weight = rho_f.eval(pf) / q;
            let mut verts = vec![pf; 2 * n + 1];
            // Walk outward from the f_ρ vertex.
            for j in (0..centre).rev() {
                let sd = (diffusion * (vtimes[j] - vtimes[j + 1]).abs()).sqrt();
                verts[j] = ChartPoint::new(verts[j + 1].x + sd * gauss(&mut rng), verts[j + 1].y + sd * gauss(&mut rng));
            }
            for j in centre + 1..=2 * n {
                let sd = (diffusion * (vtimes[j] - vtimes[j - 1]).abs()).sqrt();
                verts[j] = ChartPoint::new(verts[j - 1].x + sd * gauss(&mut rng), verts[j - 1].y + sd * gauss(&mut rng));
            }
            for (v, s) in verts.iter().zip(&vsets) {
                if let Some(s) = s {
                    if !s.contains(*v) {
                        return C64::new(0.0, 0.0);
                    }
                }
            }
            for j in 0..2 * n {
                let dur = (vtimes[j + 1] - vtimes[j]).abs();
                if dur == 0.0 {
                    continue;
                }
                // Descending half carries e^{+i∫H}, ascending half e^{−i∫H}.
                let hsign = if j < centre { 1.0 } else { -1.0 };
                let dt = dur / steps as f64;
                let mut acc = C64::new(0.0, 0.0);
                for _ in 0..n_paths {
                    let pts = bridge_points(&mut rng, verts[j], verts[j + 1], dur, steps, diffusion);
                    let theta = line_integral_points(&pts, form);
                    let hint: f64 = pts.windows(2).map(|w| h.eval(midpoint(w[0], w[1])).re).sum::<f64>() * dt;
                    acc += C64::from_polar(1.0, theta + hsign * hint);
                }
                weight *= acc / n_paths as f64;
            }
            weight * prefactor * projection_kernel(verts[2 * n], verts[0])
        })
        .collect();
    Ok(McEstimate::from_samples(&samples, seed))
}
