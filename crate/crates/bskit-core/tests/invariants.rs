//! Property tests for the structural invariants of each module.

use bskit_core::bs_quant::{ClassicalObservable, PovmSet, joint_probability_operator, quantize};
use bskit_core::coherent_family::{ChartPoint, Glauber, Spin, kahler_potential_truncated, make_grid, omega_density_fd, overlap, psi};
use bskit_core::discrete_bundle::{FamilyConnection, bochner_with_connection, dbar_laplacian};
use bskit_core::operator_core::{eig_hermitian, expm, spectral_gap};
use bskit_core::path_mc::{GaugeShifted, PathSample, fk_kernel_estimate, holonomy_h, sample_bridge};
use bskit_core::semigroup_limit::SiboriProblem;
use bskit_core::{C64, ComplexMatrix};
use proptest::prelude::*;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn small_matrix(n: usize) -> impl Strategy<Value = ComplexMatrix> {
    proptest::collection::vec(-1.0..1.0f64, 2 * n * n)
        .prop_map(move |v| ComplexMatrix::from_fn(n, n, |i, j| c(v[2 * (i * n + j)], v[2 * (i * n + j) + 1])))
}

fn chart_point(r: f64) -> impl Strategy<Value = ChartPoint> {
    (0.0..r, 0.0..std::f64::consts::TAU).prop_map(|(rho, phi)| ChartPoint::new(rho * phi.cos(), rho * phi.sin()))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn expm_of_commuting_diagonals_factorizes(a in proptest::collection::vec(-2.0..2.0f64, 12)) {
        let da = ComplexMatrix::from_diag(&(0..6).map(|k| c(a[k], a[k + 6])).collect::<Vec<_>>());
        let db = ComplexMatrix::from_diag(&(0..6).map(|k| c(a[(k + 3) % 12], -a[k])).collect::<Vec<_>>());
        let one = c(1.0, 0.0);
        let lhs = expm(&da.add(&db).unwrap(), one).unwrap();
        let rhs = expm(&da, one).unwrap().matmul(&expm(&db, one).unwrap()).unwrap();
        prop_assert!(lhs.sub(&rhs).unwrap().norm_max() <= 1e-10 * lhs.norm_max().max(1.0));
    }

    #[test]
    fn hermitian_exponential_is_unitary(m in small_matrix(6), t in -10.0..10.0f64) {
        let h = m.hermitian_part();
        let u = expm(&h, c(0.0, -t)).unwrap();
        let defect = u.adjoint().matmul(&u).unwrap().sub(&ComplexMatrix::identity(6)).unwrap().norm_op();
        prop_assert!(defect <= 1e-9, "defect {defect}");
    }

    #[test]
    fn trace_is_cyclic(a in small_matrix(5), b in small_matrix(5)) {
        let ab = a.matmul(&b).unwrap().trace();
        let ba = b.matmul(&a).unwrap().trace();
        prop_assert!((ab - ba).norm() <= 1e-10);
    }

    #[test]
    fn gap_of_scaled_complementary_projection(m in small_matrix(6), alpha in 0.1..5.0f64, rank in 1usize..5) {
        let vecs = eig_hermitian(&m.hermitian_part()).unwrap().eigenvectors;
        let p = ComplexMatrix::from_fn(6, 6, |i, j| (0..rank).map(|k| vecs.get(i, k) * vecs.get(j, k).conj()).sum());
        let a = ComplexMatrix::identity(6).sub(&p).unwrap().scale(c(alpha, 0.0)).hermitian_part();
        let gap = spectral_gap(&a, 1e-8).unwrap();
        prop_assert!((gap - alpha).abs() <= 1e-9 * alpha.max(1.0), "gap {gap} vs {alpha}");
    }

    #[test]
    fn first_component_is_one(z in chart_point(1.5)) {
        let g = Glauber::new(12).unwrap();
        let s = Spin::new(6);
        prop_assert_eq!(psi(&g, z).unwrap()[0], c(1.0, 0.0));
        prop_assert_eq!(psi(&s, z).unwrap()[0], c(1.0, 0.0));
    }

    #[test]
    fn overlap_is_conjugate_symmetric(z1 in chart_point(1.5), z2 in chart_point(1.5)) {
        let g = Glauber::new(12).unwrap();
        let a = overlap(&g, z1, z2).unwrap();
        let b = overlap(&g, z2, z1).unwrap();
        prop_assert!((a - b.conj()).norm() <= 1e-14);
    }

    #[test]
    fn truncated_potential_matches_exponential(z in chart_point(2.8)) {
        let g = Glauber::new(32).unwrap();
        prop_assume!(z.abs_sq() <= 32.0 / 4.0);
        let exact = z.abs_sq().exp();
        prop_assert!((kahler_potential_truncated(&g, z) - exact).abs() / exact <= 1e-9);
    }

    #[test]
    fn symplectic_density_is_two(z in chart_point(2.0)) {
        let g = Glauber::new(16).unwrap();
        prop_assert!((omega_density_fd(&g, z, 1e-3) - 2.0).abs() <= 1e-5);
    }

    #[test]
    fn grid_weights_are_positive(r in 1.0..4.0f64, h in 0.1..0.5f64) {
        let s = Spin::new(4);
        let grid = make_grid(&s, r, h).unwrap();
        prop_assert!(grid.weights.iter().all(|&w| w > 0.0));
    }
}

fn quant_setup() -> (Glauber, bskit_core::coherent_family::QuadratureGrid) {
    let g = Glauber::new(8).unwrap();
    let grid = make_grid(&g, 6.0, 0.1).unwrap();
    (g, grid)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn quantization_is_linear(a in -2.0..2.0f64, b in -2.0..2.0f64, x in -1.0..1.0f64, w in 0.3..2.0f64) {
        let (g, grid) = quant_setup();
        let f = ClassicalObservable::gaussian_bump(1.0, w, ChartPoint::new(x, 0.0));
        let h = ClassicalObservable::coordinate(bskit_core::bs_quant::Coordinate::X);
        let combo = f.scaled(c(a, 0.0)).plus(&h.scaled(c(b, 0.0)));
        let lhs = quantize(&combo, &g, &grid).unwrap();
        let rhs = quantize(&f, &g, &grid).unwrap().scale(c(a, 0.0)).add(&quantize(&h, &g, &grid).unwrap().scale(c(b, 0.0))).unwrap();
        prop_assert!(lhs.sub(&rhs).unwrap().norm_max() <= 1e-12 * (1.0 + lhs.norm_max()));
    }

    #[test]
    fn quantization_preserves_positivity_and_norm(amp in 0.1..3.0f64, w in 0.3..2.0f64, x in -2.0..2.0f64, y in -2.0..2.0f64) {
        let (g, grid) = quant_setup();
        let f = ClassicalObservable::gaussian_bump(amp, w, ChartPoint::new(x, y));
        let q = quantize(&f, &g, &grid).unwrap();
        let spec = eig_hermitian(&q.hermitian_part()).unwrap();
        prop_assert!(spec.eigenvalues[0] >= -1e-10);
        let residual = bskit_core::coherent_family::resolution_residual(&g, &grid).unwrap();
        prop_assert!(q.norm_op() <= amp * (1.0 + residual) + 1e-12);
    }

    #[test]
    fn whole_space_has_probability_one(t1 in 0.0..1.0f64, dt in 0.0..1.0f64, amp in -2.0..2.0f64) {
        let g = Glauber::new(8).unwrap();
        let grid = make_grid(&g, 6.0, 0.1).unwrap();
        let rho = ClassicalObservable::thermal(0.4);
        let h = ClassicalObservable::gaussian_bump(amp, 1.0, ChartPoint::new(0.3, 0.0));
        let p = joint_probability_operator(&rho, &h, &[t1, t1 + dt], &[PovmSet::whole(), PovmSet::whole()], &g, &grid).unwrap();
        prop_assert!((p.value - 1.0).abs() <= p.epsilon + 1e-9, "{} vs eps {}", p.value, p.epsilon);
    }

    #[test]
    fn joint_probability_is_monotone_in_the_set(r1 in 0.2..2.0f64, extra in 0.0..1.5f64, t in 0.0..1.0f64) {
        let g = Glauber::new(8).unwrap();
        let grid = make_grid(&g, 6.0, 0.1).unwrap();
        let rho = ClassicalObservable::thermal(0.4);
        let h = ClassicalObservable::gaussian_bump(1.0, 1.0, ChartPoint::new(0.0, 0.0));
        let o = ChartPoint::new(0.0, 0.0);
        let small = joint_probability_operator(&rho, &h, &[t], &[PovmSet::disk(o, r1)], &g, &grid).unwrap();
        let large = joint_probability_operator(&rho, &h, &[t], &[PovmSet::disk(o, r1 + extra)], &g, &grid).unwrap();
        prop_assert!(small.value <= large.value + large.epsilon);
    }
}

#[test]
fn laplacians_are_hermitian() {
    let g = Glauber::new(8).unwrap();
    let grid = make_grid(&g, 3.0, 0.2).unwrap();
    let conn = FamilyConnection(&g);
    // Glauber weights are uniform, so the weighted adjoint is the plain adjoint.
    assert!(bochner_with_connection(&conn, &grid).unwrap().matrix.hermitian_defect() <= 1e-10);
    assert!(dbar_laplacian(&g, &grid).unwrap().matrix.hermitian_defect() <= 1e-10);
}

#[test]
fn spectrum_is_gauge_covariant() {
    let g = Glauber::new(8).unwrap();
    let conn = FamilyConnection(&g);
    let shifted = GaugeShifted { base: &conn, grad_phi: |p: ChartPoint| (0.6 * p.x * p.y.cos(), -0.3 * p.x * p.x * p.y.sin()) };
    let sigma = |h: f64| {
        let grid = make_grid(&g, 2.0, h).unwrap();
        let a = eig_hermitian(&bochner_with_connection(&conn, &grid).unwrap().to_dense()).unwrap().eigenvalues;
        let b = eig_hermitian(&bochner_with_connection(&shifted, &grid).unwrap().to_dense()).unwrap().eigenvalues;
        a.iter().zip(&b).take(30).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    };
    let (coarse, fine) = (sigma(0.2), sigma(0.1));
    // φ = 0.3x²cos y; the change is pure link-quadrature error, second order in h.
    assert!(fine < 1e-2, "spectral change {fine}");
    assert!(coarse / fine > 3.0, "refinement ratio {}", coarse / fine);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn sibori_bound_holds_literally(seed in 0u64..1000, nu in 5.0..2000.0f64, t in 0.05..3.0f64) {
        let p = SiboriProblem::random(12, 4, 0.7, 1.3, seed).unwrap();
        let v0: Vec<C64> = (0..12).map(|k| c((k as f64).sin(), (seed as f64 + k as f64).cos())).collect();
        let (v, _) = p.project_to_kernel(&v0).unwrap();
        let rec = p.error_bounds_check(nu, t, &v).unwrap();
        prop_assert!(rec.perp_norm * nu * p.alpha <= p.h_norm * norm(&v) * (1.0 + 1e-6));
    }

    #[test]
    fn evolution_is_a_semigroup(seed in 0u64..1000, nu in 1.0..100.0f64, t in 0.0..1.0f64, s in 0.0..1.0f64) {
        let p = SiboriProblem::random(10, 3, 1.0, 1.0, seed).unwrap();
        let v: Vec<C64> = (0..10).map(|k| c(1.0 / (k as f64 + 1.0), (k as f64).cos())).collect();
        let lhs = p.evolve(nu, t + s, &v).unwrap();
        let rhs = p.evolve(nu, t, &p.evolve(nu, s, &v).unwrap()).unwrap();
        let diff: f64 = lhs.iter().zip(&rhs).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        prop_assert!(diff <= 1e-8 * norm(&v));
    }

    #[test]
    fn distance_is_non_increasing_on_doubling(seed in 0u64..1000, t in 0.2..2.0f64) {
        let p = SiboriProblem::random(10, 3, 1.0, 1.0, seed).unwrap();
        let ds: Vec<f64> = [10.0, 20.0, 40.0, 80.0, 160.0].iter().map(|&nu| p.distance_to_limit(nu, t).unwrap()).collect();
        prop_assert!(ds.windows(2).all(|w| w[1] <= w[0] + 1e-9), "{ds:?}");
    }

    #[test]
    fn limit_is_unitary_on_kernel(seed in 0u64..1000, t in 0.0..5.0f64) {
        let p = SiboriProblem::random(10, 4, 1.0, 1.0, seed).unwrap();
        let u: Vec<C64> = (0..10).map(|k| c((k as f64 * 0.3).sin(), 0.5)).collect();
        let w: Vec<C64> = (0..10).map(|k| c(0.2, (k as f64 * 0.9 + seed as f64).cos())).collect();
        let (u, _) = p.project_to_kernel(&u).unwrap();
        let (w, _) = p.project_to_kernel(&w).unwrap();
        let before = dot(&u, &w);
        let after = dot(&p.limit_reference(t, &u).unwrap(), &p.limit_reference(t, &w).unwrap());
        prop_assert!((before - after).norm() <= 1e-10);
    }

    #[test]
    fn holonomy_has_unit_modulus(seed in 0u64..10_000, ex in -1.0..1.0f64, ey in -1.0..1.0f64) {
        let g = Glauber::new(8).unwrap();
        let path = sample_bridge(ChartPoint::new(0.0, 0.0), ChartPoint::new(ex, ey), 0.7, 64, 1.0, seed).unwrap();
        let h = ClassicalObservable::gaussian_bump(2.0, 1.0, ChartPoint::new(0.2, 0.1));
        prop_assert_eq!(holonomy_h(&path, &g, &h).norm(), 1.0);
    }
}

fn norm(v: &[C64]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

#[test]
fn estimates_are_bitwise_reproducible() {
    let g = Glauber::new(8).unwrap();
    let o = ChartPoint::new(0.0, 0.0);
    let v = ClassicalObservable::gaussian_bump(0.5, 1.0, o);
    let a = fk_kernel_estimate(&g, o, ChartPoint::new(0.3, 0.2), 0.5, &v, 2000, 50, 42).unwrap();
    let b = fk_kernel_estimate(&g, o, ChartPoint::new(0.3, 0.2), 0.5, &v, 2000, 50, 42).unwrap();
    assert_eq!(a.mean.re.to_bits(), b.mean.re.to_bits());
    assert_eq!(a.mean.im.to_bits(), b.mean.im.to_bits());
    assert_eq!(a.stderr.to_bits(), b.stderr.to_bits());
}

#[test]
fn loop_estimates_are_gauge_invariant() {
    let g = Glauber::new(8).unwrap();
    let shifted = GaugeShifted { base: &g, grad_phi: |p: ChartPoint| (p.y.cos(), -p.x * p.y.sin()) };
    let (x, t) = (ChartPoint::new(0.4, -0.2), 0.5);
    let zero = ClassicalObservable::constant(0.0);
    let a = fk_kernel_estimate(&g, x, x, t, &zero, 20_000, 400, 9).unwrap();
    let b = fk_kernel_estimate(&shifted, x, x, t, &zero, 20_000, 400, 9).unwrap();
    // Same bridges; the exact form integrates to zero on closed paths up to the midpoint rule.
    assert!((a.mean - b.mean).norm() <= 1e-3 * a.mean.norm(), "{:?} vs {:?}", a.mean, b.mean);
}

#[test]
fn step_refinement_is_consistent() {
    let g = Glauber::new(8).unwrap();
    let o = ChartPoint::new(0.0, 0.0);
    let zero = ClassicalObservable::constant(0.0);
    let a = fk_kernel_estimate(&g, o, o, 0.5, &zero, 100_000, 100, 1).unwrap();
    let b = fk_kernel_estimate(&g, o, o, 0.5, &zero, 100_000, 200, 2).unwrap();
    let combined = (a.stderr.powi(2) + b.stderr.powi(2)).sqrt();
    assert!((a.mean - b.mean).norm() < 2.0 * combined + 1e-12, "{:?} vs {:?} (σ {combined})", a.mean, b.mean);
}

#[test]
fn stderr_scales_as_inverse_root_n() {
    let g = Glauber::new(8).unwrap();
    let o = ChartPoint::new(0.0, 0.0);
    let zero = ClassicalObservable::constant(0.0);
    let small = fk_kernel_estimate(&g, o, ChartPoint::new(0.5, 0.0), 0.5, &zero, 10_000, 50, 3).unwrap();
    let large = fk_kernel_estimate(&g, o, ChartPoint::new(0.5, 0.0), 0.5, &zero, 40_000, 50, 4).unwrap();
    let ratio = small.stderr / large.stderr;
    assert!((ratio / 2.0 - 1.0).abs() <= 0.2, "ratio {ratio}");
}

#[test]
fn deterministic_path_holonomy_is_unimodular() {
    let g = Glauber::new(8).unwrap();
    let path = PathSample::deterministic((0..50).map(|k| ChartPoint::new(k as f64 * 0.1, (k as f64 * 0.2).sin())).collect(), 1.0);
    let h = ClassicalObservable::coordinate(bskit_core::bs_quant::Coordinate::X);
    assert_eq!(holonomy_h(&path, &g, &h).norm(), 1.0);
}

#[test]
fn evolution_kernel_swaps_points_under_h_reversal() {
    // (e^{−t(ν(B−n) + iH)})† = e^{−t(ν(B−n) − iH)}, so K(p1,p2;H) = conj K(p2,p1;−H).
    use bskit_core::discrete_bundle::{bochner_laplacian, lebesgue_kernel_entry, nearest_index};
    let g = Glauber::new(8).unwrap();
    let grid = make_grid(&g, 3.0, 0.25).unwrap();
    let b = bochner_laplacian(&g, &grid).unwrap().matrix.shifted(-2.0).scale(c(4.0, 0.0));
    let h = ClassicalObservable::gaussian_bump(1.5, 0.8, ChartPoint::new(0.3, -0.2));
    let hv: Vec<C64> = grid.points.iter().map(|&p| h.eval(p)).collect();
    let generator = |sign: f64| b.plus_diag(&hv.iter().map(|v| c(0.0, sign) * v).collect::<Vec<_>>());
    let (i, j) = (nearest_index(&grid, ChartPoint::new(0.0, 0.0)).unwrap(), nearest_index(&grid, ChartPoint::new(0.5, -0.25)).unwrap());
    let k_fwd = lebesgue_kernel_entry(&generator(1.0), c(-0.1, 0.0), &grid, i, j).unwrap();
    let k_rev = lebesgue_kernel_entry(&generator(-1.0), c(-0.1, 0.0), &grid, j, i).unwrap();
    assert!((k_fwd - k_rev.conj()).norm() <= 1e-10 * k_fwd.norm(), "{k_fwd} vs {k_rev}");
    // Without reversing H the swap is not a symmetry.
    let k_same = lebesgue_kernel_entry(&generator(1.0), c(-0.1, 0.0), &grid, j, i).unwrap();
    assert!((k_fwd - k_same.conj()).norm() > 1e-6 * k_fwd.norm());
}
