use std::path::Path;

use bskit_core::BsError;
use bskit_core::C64;
use bskit_core::bs_quant::ClassicalObservable;
use bskit_core::coherent_family::{ChartPoint, QuadratureGrid, make_grid};
use bskit_core::discrete_bundle::{
    CsrMatrix, FamilyConnection, bochner_laplacian, constants::N_SHIFT, lebesgue_kernel_entry, nearest_index,
};
use bskit_core::path_mc::{evolution_kernel_estimate, fk_kernel_estimate};
use serde::Serialize;

use super::{missing, write_rows};
use crate::CliResult;
use crate::config::{EvolutionSpec, ExperimentConfig, FkSection, RunOptions};
use crate::report::{Check, Report};

/// MC estimate next to its matrix oracle on a coarse and a fine grid.
#[derive(Serialize)]
struct ComparisonRow {
    label: String,
    nu: f64,
    estimate_re: f64,
    estimate_im: f64,
    stderr: f64,
    oracle_re: f64,
    oracle_im: f64,
    grid_tolerance: f64,
    diff: f64,
    diff_over_sigma: f64,
    allowed: f64,
}

impl ComparisonRow {
    fn new(label: String, nu: f64, est: C64, stderr: f64, coarse: C64, fine: C64, sigmas: f64) -> Self {
        let grid_tolerance = (coarse - fine).norm();
        let diff = (est - fine).norm();
        Self {
            label,
            nu,
            estimate_re: est.re,
            estimate_im: est.im,
            stderr,
            oracle_re: fine.re,
            oracle_im: fine.im,
            grid_tolerance,
            diff,
            diff_over_sigma: diff / stderr.max(f64::MIN_POSITIVE),
            allowed: sigmas * stderr + grid_tolerance,
        }
    }
}

fn point(p: [f64; 2]) -> ChartPoint {
    ChartPoint::new(p[0], p[1])
}

/// Column of e^{−t·gen} at the lattice point nearest to `end`, read at each of `starts`
/// and divided by h² (kernel w.r.t. Lebesgue measure).
fn oracle_entries(generator: &CsrMatrix, t: f64, grid: &QuadratureGrid, starts: &[ChartPoint], end: ChartPoint) -> CliResult<Vec<C64>> {
    let j = nearest_index(grid, end).ok_or_else(|| BsError::DegenerateGrid("empty oracle grid".into()))?;
    let mut out = Vec::with_capacity(starts.len());
    for &p in starts {
        let i = nearest_index(grid, p).ok_or_else(|| BsError::DegenerateGrid("empty oracle grid".into()))?;
        out.push(lebesgue_kernel_entry(generator, C64::new(-t, 0.0), grid, i, j)?);
    }
    Ok(out)
}

pub fn cmd_fk(cfg: &ExperimentConfig, opts: &RunOptions, dir: &Path) -> CliResult<Report> {
    let s = cfg.fk.as_ref().ok_or_else(|| missing("fk"))?;
    let (mc, seed) = cfg.mc_resolved(opts, "fk")?;
    let family = cfg.build_family()?;
    let mut checks = Vec::new();
    let mut rows = Vec::new();

    let v = match &s.potential {
        Some(name) => cfg.observable(name)?,
        None => ClassicalObservable::constant(0.0),
    };
    let (x, y) = (point(s.x), point(s.y));
    let conn = FamilyConnection(family.as_ref());
    let est = fk_kernel_estimate(&conn, x, y, s.t, &v, mc.n_paths, mc.steps, seed)?;
    let mut oracle = Vec::new();
    for &h in &s.oracle_spacings {
        let grid = make_grid(family.as_ref(), s.oracle_radius, h)?;
        let vdiag: Vec<C64> = grid.points.iter().map(|&p| v.cell_value(p, h)).collect();
        let generator = bochner_laplacian(family.as_ref(), &grid)?.matrix.scale(C64::new(0.5, 0.0)).plus_diag(&vdiag);
        oracle.push(oracle_entries(&generator, s.t, &grid, &[x], y)?[0]);
    }
    let row = ComparisonRow::new("fk".into(), 0.0, est.mean, est.stderr, oracle[0], oracle[1], s.sigmas);
    checks.push(Check::le("fk_diff", row.diff, row.allowed));
    rows.push(row);
    let fk_json = est.to_json(serde_json::json!({"t": s.t, "x": s.x, "y": s.y, "n_paths": mc.n_paths, "steps": mc.steps}));

    let mut evo_json = serde_json::Value::Null;
    if let Some(ev) = &s.evolution {
        evo_json = evolution(cfg, s, ev, seed, &mut rows, &mut checks)?;
    }
    let csv = write_rows(dir, "fk_comparison.csv", &rows)?;
    let results = serde_json::json!({ "fk": fk_json, "comparisons": &rows, "evolution": evo_json });
    Ok(Report::new("fk", Some(seed), checks, results, vec![csv]))
}

fn evolution(
    cfg: &ExperimentConfig,
    s: &FkSection,
    ev: &EvolutionSpec,
    seed: u64,
    rows: &mut Vec<ComparisonRow>,
    checks: &mut Vec<Check>,
) -> CliResult<serde_json::Value> {
    let family = cfg.build_family()?;
    let h = cfg.observable(&ev.h)?;
    let starts: Vec<ChartPoint> = ev.p1.iter().copied().map(point).collect();
    let end = point(ev.p2);
    let mut estimates = Vec::new();
    let conn = FamilyConnection(family.as_ref());
    for (n, &nu) in ev.nus.iter().enumerate() {
        let mut oracle = Vec::new();
        for &spacing in &s.oracle_spacings {
            let grid = make_grid(family.as_ref(), s.oracle_radius, spacing)?;
            let mh: Vec<C64> = grid.points.iter().map(|&p| C64::new(0.0, h.cell_value(p, spacing).re)).collect();
            let generator = bochner_laplacian(family.as_ref(), &grid)?.matrix.shifted(-N_SHIFT).scale(C64::new(nu, 0.0)).plus_diag(&mh);
            oracle.push(oracle_entries(&generator, ev.t, &grid, &starts, end)?);
        }
        for (k, &p1) in starts.iter().enumerate() {
            // Distinct seed per (ν, pair); the FK baseline keeps `seed` itself.
            let sub_seed = seed.wrapping_add(1 + (n * starts.len() + k) as u64);
            let est = evolution_kernel_estimate(&conn, p1, end, ev.t, &h, nu, ev.n_paths, ev.steps, sub_seed)?;
            let row = ComparisonRow::new(
                format!("evolution[nu={nu}, p1=({}, {})]", p1.x, p1.y),
                nu,
                est.mean,
                est.stderr,
                oracle[0][k],
                oracle[1][k],
                s.sigmas,
            );
            checks.push(Check::le(format!("evolution_diff_nu{nu}_pair{k}"), row.diff, row.allowed));
            estimates.push(est.to_json(serde_json::json!({"nu": nu, "p1": [p1.x, p1.y], "p2": ev.p2, "t": ev.t})));
            rows.push(row);
        }
    }
    Ok(serde_json::Value::Array(estimates))
}
