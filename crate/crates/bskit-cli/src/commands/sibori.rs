use std::path::Path;

use bskit_core::C64;
use bskit_core::coherent_family::make_grid;
use bskit_core::semigroup_limit::{BundleSibori, SiboriProblem, loglog_slope, sup_perp_by_nu};
use serde::Serialize;

use super::{missing, write_rows};
use crate::CliResult;
use crate::config::{BundleSpec, ExperimentConfig, RunOptions, SyntheticSpec};
use crate::report::{Check, Report};

#[derive(Serialize)]
struct SyntheticRow {
    problem: usize,
    nu: f64,
    t: f64,
    perp_norm: f64,
    bound: f64,
    distance_to_limit: f64,
}

#[derive(Serialize)]
struct BundleRow {
    nu: f64,
    t: f64,
    distance_to_limit: f64,
    bound: f64,
}

/// νtα at and above which an H = 0 problem must have converged to 1e-6.
const ZERO_H_NU_T_ALPHA: f64 = 40.0;
const ZERO_H_DISTANCE: f64 = 1e-6;

pub fn cmd_sibori(cfg: &ExperimentConfig, opts: &RunOptions, dir: &Path) -> CliResult<Report> {
    let s = cfg.sibori.as_ref().ok_or_else(|| missing("sibori"))?;
    if s.synthetic.is_none() && s.bundle.is_none() {
        return Err(missing("sibori.synthetic] or [sibori.bundle"));
    }
    let mut checks = Vec::new();
    let mut artifacts = Vec::new();
    let mut results = serde_json::Map::new();
    let mut seed = None;
    if let Some(syn) = &s.synthetic {
        let base = opts.seed.unwrap_or(syn.seed);
        seed = Some(base);
        let (rows, json) = synthetic(syn, base, &mut checks)?;
        artifacts.push(write_rows(dir, "sibori_synthetic.csv", &rows)?);
        results.insert("synthetic".into(), json);
    }
    if let Some(b) = &s.bundle {
        let (rows, json) = bundle(cfg, b, &mut checks)?;
        artifacts.push(write_rows(dir, "sibori_bundle.csv", &rows)?);
        results.insert("bundle".into(), json);
    }
    Ok(Report::new("sibori", seed, checks, serde_json::Value::Object(results), artifacts))
}

/// A fixed, generic start vector; it is projected onto each problem's kernel.
fn start_vector(dim: usize) -> Vec<C64> {
    (0..dim).map(|k| C64::new((k as f64 * 0.7).sin(), (k as f64 * 1.3).cos())).collect()
}

fn synthetic(syn: &SyntheticSpec, base_seed: u64, checks: &mut Vec<Check>) -> CliResult<(Vec<SyntheticRow>, serde_json::Value)> {
    let mut rows = Vec::new();
    let mut slopes = Vec::new();
    let mut worst_ratio: f64 = 0.0;
    let mut all_hold = true;
    let mut worst_zero_h: f64 = 0.0;
    for p in 0..syn.problems {
        let problem = SiboriProblem::random(syn.dim, syn.kernel_dim, syn.alpha, syn.h_norm, base_seed.wrapping_add(p as u64))?;
        let (v, _) = problem.project_to_kernel(&start_vector(syn.dim))?;
        for &t in &syn.ts {
            for &nu in &syn.nus {
                let rec = problem.error_bounds_check(nu, t, &v)?;
                all_hold &= rec.holds(syn.slack);
                if rec.bound > 0.0 {
                    worst_ratio = worst_ratio.max(rec.perp_norm / rec.bound);
                }
            }
        }
        let sweep = problem.sweep(&syn.nus, &syn.ts, &v)?;
        for r in &sweep {
            if nu_t_alpha(r.nu, r.t, problem.alpha) >= ZERO_H_NU_T_ALPHA {
                worst_zero_h = worst_zero_h.max(r.distance_to_limit);
            }
            rows.push(SyntheticRow {
                problem: p,
                nu: r.nu,
                t: r.t,
                perp_norm: r.perp_norm,
                bound: r.bound,
                distance_to_limit: r.distance_to_limit,
            });
        }
        if syn.h_norm > 0.0 {
            slopes.push(loglog_slope(&syn.nus, &sup_perp_by_nu(&sweep, &syn.nus))?);
        }
    }
    checks.push(Check::holds("synthetic_bounds_hold", all_hold));
    if !slopes.is_empty() {
        let worst_slope_dev = slopes.iter().map(|s| (s - syn.slope_target).abs()).fold(0.0, f64::max);
        checks.push(Check::le("synthetic_slope_deviation", worst_slope_dev, syn.slope_tolerance));
    } else {
        checks.push(Check::le("synthetic_zero_h_distance", worst_zero_h, ZERO_H_DISTANCE));
    }
    let json = serde_json::json!({
        "problems": syn.problems,
        "dim": syn.dim,
        "kernel_dim": syn.kernel_dim,
        "alpha": syn.alpha,
        "h_norm": syn.h_norm,
        "worst_perp_over_bound": worst_ratio,
        "slopes": slopes,
        "worst_distance_at_large_nu_t_alpha": worst_zero_h,
    });
    Ok((rows, json))
}

fn nu_t_alpha(nu: f64, t: f64, alpha: f64) -> f64 {
    nu * t * alpha
}

fn bundle(cfg: &ExperimentConfig, b: &BundleSpec, checks: &mut Vec<Check>) -> CliResult<(Vec<BundleRow>, serde_json::Value)> {
    let family = cfg.build_family()?;
    let grid = make_grid(family.as_ref(), b.radius, b.spacing)?;
    let h = cfg.observable(&b.h)?;
    let bs = BundleSibori::new(family.as_ref(), &grid, &h, b.cutoff)?;
    let p = &bs.problem;
    let mut nus = b.nus.clone();
    if let Some(nc) = b.nu_check {
        if !nus.contains(&nc) {
            nus.push(nc);
        }
    }
    nus.sort_by(f64::total_cmp);
    let mut rows = Vec::with_capacity(nus.len());
    for &nu in &nus {
        rows.push(BundleRow {
            nu,
            t: b.t,
            distance_to_limit: p.distance_to_limit(nu, b.t)?,
            bound: b.bound_constant * p.h_norm / (nu * p.alpha) + b.grid_tolerance,
        });
    }
    let monotone = rows.windows(2).all(|w| w[1].distance_to_limit < w[0].distance_to_limit);
    checks.push(Check::holds("bundle_distance_monotone", monotone));
    if let Some(nc) = b.nu_check {
        let r = rows.iter().find(|r| r.nu == nc).expect("nu_check in sweep");
        checks.push(Check::le("bundle_distance_at_nu_check", r.distance_to_limit, r.bound));
    }
    let slope = if rows.len() >= 2 {
        loglog_slope(&rows.iter().map(|r| r.nu).collect::<Vec<_>>(), &rows.iter().map(|r| r.distance_to_limit).collect::<Vec<_>>()).ok()
    } else {
        None
    };
    let json = serde_json::json!({
        "radius": b.radius,
        "spacing": b.spacing,
        "points": grid.len(),
        "alpha": p.alpha,
        "h_norm": p.h_norm,
        "disc_error": bs.disc_error,
        "slope": slope,
        "sweep": &rows,
    });
    Ok((rows, json))
}
