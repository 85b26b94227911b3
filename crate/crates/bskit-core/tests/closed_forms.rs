//! Quantization and kernel values checked against independent closed forms.

use bskit_core::bs_quant::{ClassicalObservable, Coordinate, PovmSet, joint_probability_operator, quantize};
use bskit_core::coherent_family::{ChartPoint, Glauber, QuadratureGrid, make_grid};
use bskit_core::discrete_bundle::{bochner_laplacian, lebesgue_kernel_entry, nearest_index};
use bskit_core::{C64, ComplexMatrix};

const ORIGIN: ChartPoint = ChartPoint { x: 0.0, y: 0.0 };

fn setup(dim: usize, r: f64, h: f64) -> (Glauber, QuadratureGrid) {
    let g = Glauber::new(dim).unwrap();
    let grid = make_grid(&g, r, h).unwrap();
    (g, grid)
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|j| j as f64).product()
}

/// γ(k+1, x)/k! = P(Poisson(x) ≥ k+1).
fn lower_gamma_ratio(k: usize, x: f64) -> f64 {
    1.0 - (-x as f64).exp() * (0..=k).map(|j| x.powi(j as i32) / factorial(j)).sum::<f64>()
}

fn assert_diag(q: &ComplexMatrix, expected: impl Fn(usize) -> f64, tol: f64) {
    let n = q.rows();
    for i in 0..n {
        for j in 0..n {
            let want = if i == j { expected(i) } else { 0.0 };
            let got = q.get(i, j);
            assert!((got - C64::new(want, 0.0)).norm() <= tol, "({i},{j}): {got} vs {want}");
        }
    }
}

#[test]
fn gaussian_bump_quantizes_to_powers_of_two() {
    let (g, grid) = setup(12, 6.0, 0.05);
    let q = quantize(&ClassicalObservable::gaussian_bump(1.0, 1.0, ORIGIN), &g, &grid).unwrap();
    assert_diag(&q, |k| 0.5f64.powi(k as i32 + 1), 1e-8);
}

#[test]
fn unit_disk_indicator_quantizes_to_incomplete_gamma() {
    let (g, grid) = setup(10, 6.0, 0.05);
    let q = quantize(&ClassicalObservable::indicator_disk(ORIGIN, 1.0), &g, &grid).unwrap();
    assert_diag(&q, |k| lower_gamma_ratio(k, 1.0), 2e-4);
}

#[test]
fn thermal_p_function_quantizes_to_geometric_state() {
    let nbar = 0.5;
    let (g, grid) = setup(12, 6.0, 0.05);
    let q = quantize(&ClassicalObservable::thermal(nbar), &g, &grid).unwrap();
    assert_diag(&q, |k| nbar.powi(k as i32) / (1.0 + nbar).powi(k as i32 + 1), 1e-8);
}

#[test]
fn abs_sq_and_z_quantize_to_number_and_annihilation() {
    let (g, grid) = setup(8, 6.0, 0.05);
    let n = quantize(&ClassicalObservable::coordinate(Coordinate::AbsSq), &g, &grid).unwrap();
    assert_diag(&n, |k| k as f64 + 1.0, 1e-6);
    let a = quantize(&ClassicalObservable::coordinate(Coordinate::Z), &g, &grid).unwrap();
    for i in 0..8 {
        for j in 0..8 {
            let want = if j == i + 1 { (j as f64).sqrt() } else { 0.0 };
            assert!((a.get(i, j) - C64::new(want, 0.0)).norm() <= 1e-6, "({i},{j}) {}", a.get(i, j));
        }
    }
}

#[test]
fn grid_area_matches_disk_area() {
    let (_, grid) = setup(8, 6.0, 0.1);
    // Σ w = #points·h²/π ≈ R², up to the O(R·h) lattice-count error at the rim.
    assert!((grid.total_weight() - 36.0).abs() <= 0.2, "{}", grid.total_weight());
}

#[test]
fn radial_joint_probability_matches_diagonal_sum() {
    // Radial ρ, H and S commute after quantization: P = Σ ρ_k (γ(k+1,1)/k!)².
    let nbar: f64 = 0.5;
    let (g, grid) = setup(16, 6.0, 0.05);
    let p = joint_probability_operator(
        &ClassicalObservable::thermal(nbar),
        &ClassicalObservable::gaussian_bump(1.0, 1.0, ORIGIN),
        &[0.25],
        &[PovmSet::disk(ORIGIN, 1.0)],
        &g,
        &grid,
    )
    .unwrap();
    let q = nbar / (1.0 + nbar);
    let exact: f64 = (0..40).map(|k| (1.0 - q) * q.powi(k as i32) * lower_gamma_ratio(k, 1.0).powi(2)).sum();
    assert!((p.value - exact).abs() <= 5e-4, "{} vs {exact}", p.value);
    assert!(p.imag.abs() <= 1e-12);
}

#[test]
fn magnetic_heat_kernel_diagonal_converges_to_mehler() {
    // ½∇*∇ with field strength B = 2: K_t(x,x) = B/(4π sinh(Bt/2)).
    let t = 0.5;
    let mehler = 2.0 / (4.0 * std::f64::consts::PI * (t as f64).sinh());
    let entry = |h: f64| {
        let (g, grid) = setup(8, 4.0, h);
        let a = bochner_laplacian(&g, &grid).unwrap().matrix.scale(C64::new(0.5, 0.0));
        let j = nearest_index(&grid, ORIGIN).unwrap();
        lebesgue_kernel_entry(&a, C64::new(-t, 0.0), &grid, j, j).unwrap().re
    };
    let (coarse, fine) = (entry(0.1), entry(0.05));
    assert!((fine - mehler).abs() <= 1e-3, "{fine} vs {mehler}");
    let ratio = (coarse - mehler) / (fine - mehler);
    assert!((3.0..5.0).contains(&ratio), "second-order ratio {ratio}");
}
