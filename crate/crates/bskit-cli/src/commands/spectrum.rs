use std::path::Path;

use bskit_core::coherent_family::make_grid;
use bskit_core::discrete_bundle::{
    bkn_residual, bochner_laplacian, bulk_gap, constants::N_SHIFT, dbar_laplacian, first_above, kernel_count, lanczos_lowest,
    write_spectrum_csv,
};
use bskit_core::semigroup_limit::loglog_slope;
use serde::Serialize;

use super::{missing, write_rows};
use crate::CliResult;
use crate::config::{ExperimentConfig, SpectrumOperator};
use crate::report::{Check, Report};

#[derive(Serialize)]
struct BknRow {
    spacing: f64,
    points: usize,
    residual: f64,
    bound: f64,
}

pub fn cmd_spectrum(cfg: &ExperimentConfig, dir: &Path) -> CliResult<Report> {
    let s = cfg.spectrum.as_ref().ok_or_else(|| missing("spectrum"))?;
    let family = cfg.build_family()?;
    let fam = family.as_ref();
    let mut checks = Vec::new();

    // Dense spectrum on the (small) dense grid.
    let dense_grid = make_grid(fam, s.dense_radius, s.dense_spacing)?;
    let op = match s.operator {
        SpectrumOperator::Dbar => dbar_laplacian(fam, &dense_grid)?,
        SpectrumOperator::BochnerMinusN => {
            let mut b = bochner_laplacian(fam, &dense_grid)?;
            b.matrix = b.matrix.shifted(-N_SHIFT);
            b
        }
    };
    let spec = op.spectrum()?;
    let eig = &spec.eigenvalues;
    let scale = eig.last().copied().unwrap_or(1.0).abs().max(1.0);
    checks.push(Check::ge("psd_min_eigenvalue", eig[0], -s.psd_tolerance * scale));
    let lowest: Vec<f64> = eig.iter().copied().take(s.eigenvalue_count).collect();
    let csv_spec = "spectrum.csv".to_string();
    write_spectrum_csv(&dir.join(&csv_spec), &lowest)?;
    let gap_first = first_above(eig, s.cutoff);
    let gap_bulk = bulk_gap(&spec, &dense_grid, s.cutoff);

    // λ_min(∇*∇) on the main grid.
    let main_grid = make_grid(fam, cfg.grid.radius, cfg.grid.spacing)?;
    let bochner = bochner_laplacian(fam, &main_grid)?;
    let lambda_min = lanczos_lowest(&bochner.matrix, s.lanczos_iterations, 0)?;
    checks.push(Check::le("lowest_bochner_rel_error", (lambda_min - N_SHIFT).abs() / N_SHIFT, s.lowest_tolerance));

    // BKN refinement at the main radius.
    let mut rows = Vec::new();
    for &h in &s.bkn_spacings {
        let grid = make_grid(fam, cfg.grid.radius, h)?;
        let res = bkn_residual(&dbar_laplacian(fam, &grid)?, &bochner_laplacian(fam, &grid)?, &grid)?;
        rows.push(BknRow { spacing: h, points: grid.len(), residual: res, bound: s.bkn_constant * h });
    }
    let worst_excess = rows.iter().map(|r| r.residual / r.bound).fold(0.0, f64::max);
    checks.push(Check::le("bkn_residual_over_ch", worst_excess, 1.0));
    let order = if rows.len() >= 2 {
        let hs: Vec<f64> = rows.iter().map(|r| r.spacing).collect();
        let rs: Vec<f64> = rows.iter().map(|r| r.residual).collect();
        Some(loglog_slope(&hs, &rs)?)
    } else {
        None
    };
    if let (Some(min), Some(o)) = (s.min_order, order) {
        checks.push(Check::ge("bkn_order_min", o, min));
    }
    if let (Some(max), Some(o)) = (s.max_order, order) {
        checks.push(Check::le("bkn_order_max", o, max));
    }
    let csv_bkn = write_rows(dir, "bkn.csv", &rows)?;

    let results = serde_json::json!({
        "operator": s.operator,
        "dense_radius": s.dense_radius,
        "dense_spacing": s.dense_spacing,
        "lowest_eigenvalues": lowest,
        "kernel_count": kernel_count(eig, s.cutoff),
        "gap_first_above_cutoff": gap_first,
        "gap_bulk": gap_bulk,
        "lambda_min_bochner": lambda_min,
        "bkn": rows,
        "bkn_order": order,
    });
    Ok(Report::new("spectrum", None, checks, results, vec![csv_spec, csv_bkn]))
}
