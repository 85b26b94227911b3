use std::path::Path;

use bskit_core::coherent_family::{make_grid, resolution_residual};
use serde::Serialize;

use super::write_rows;
use crate::CliResult;
use crate::config::ExperimentConfig;
use crate::report::{Check, Report};

#[derive(Serialize)]
struct RefinementRow {
    spacing: f64,
    points: usize,
    residual: f64,
}

pub fn cmd_resolution(cfg: &ExperimentConfig, dir: &Path) -> CliResult<Report> {
    let section = cfg.resolution.clone().unwrap_or(crate::config::ResolutionSection {
        threshold: 1e-3,
        refinement: Vec::new(),
        min_halving_ratio: None,
    });
    let family = cfg.build_family()?;
    let h = cfg.grid.spacing;
    let mut spacings = if section.refinement.is_empty() { vec![2.0 * h, h, 0.5 * h] } else { section.refinement.clone() };
    if !spacings.contains(&h) {
        spacings.push(h);
    }
    if section.min_halving_ratio.is_some() && !spacings.contains(&(0.5 * h)) {
        spacings.push(0.5 * h);
    }
    spacings.sort_by(|a, b| b.total_cmp(a));

    let mut rows = Vec::with_capacity(spacings.len());
    for &s in &spacings {
        let grid = make_grid(family.as_ref(), cfg.grid.radius, s)?;
        rows.push(RefinementRow { spacing: s, points: grid.len(), residual: resolution_residual(family.as_ref(), &grid)? });
    }
    let at = |s: f64| rows.iter().find(|r| r.spacing == s).map(|r| r.residual).expect("spacing in table");
    let residual = at(h);

    let mut checks = vec![Check::le("resolution_residual", residual, section.threshold)];
    let mut halving = None;
    if let Some(min_ratio) = section.min_halving_ratio {
        let ratio = residual / at(0.5 * h);
        halving = Some(ratio);
        checks.push(Check::ge("halving_ratio", ratio, min_ratio));
    }
    let csv = write_rows(dir, "refinement.csv", &rows)?;
    let results = serde_json::json!({
        "family": family.kind(),
        "dim": family.dim(),
        "radius": cfg.grid.radius,
        "spacing": h,
        "residual": residual,
        "halving_ratio": halving,
        "refinement": rows,
    });
    Ok(Report::new("resolution", None, checks, results, vec![csv]))
}
