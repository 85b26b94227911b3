use std::path::Path;

use bskit_core::C64;
use bskit_core::bs_quant::{PovmSet, joint_probability_operator};
use bskit_core::coherent_family::{Glauber, make_grid};
use bskit_core::discrete_bundle::{FamilyConnection, bochner_laplacian, constants::N_SHIFT};
use bskit_core::path_mc::loop_joint_probability;
use bskit_core::semigroup_limit::{BundleSibori, DenseLegs, SparseLegs, joint_probability_surrogate};
use serde::Serialize;

use super::{missing, write_rows};
use crate::CliResult;
use crate::config::{ExperimentConfig, JointProbSection, RunOptions};
use crate::report::{Check, Report};

#[derive(Serialize)]
struct LimitRow {
    nu: f64,
    surrogate_re: f64,
    surrogate_im: f64,
    distance_to_limit: f64,
    bound: f64,
}

pub fn cmd_jointprob(cfg: &ExperimentConfig, opts: &RunOptions, dir: &Path) -> CliResult<Report> {
    let s = cfg.jointprob.as_ref().ok_or_else(|| missing("jointprob"))?;
    let (mc, seed) = cfg.mc_resolved(opts, "jointprob")?;
    let family = cfg.build_family()?;
    let rho = cfg.observable(&s.rho)?;
    let h = cfg.observable(&s.h)?;
    let sets: Vec<PovmSet> = s.sets.iter().map(|x| x.build()).collect();
    let mut checks = Vec::new();
    let mut artifacts = Vec::new();

    let est = loop_joint_probability(
        &FamilyConnection(family.as_ref()),
        &rho,
        &h,
        &s.times,
        &sets,
        s.nu,
        mc.n_paths,
        s.leg_paths,
        mc.steps,
        seed,
    )?;
    let empty = est.flags.iter().any(|f| f == "empty_support");
    if empty {
        checks.push(Check::le("empty_support_value", est.mean.norm(), 0.0));
    } else {
        checks.push(Check::le("mc_imag_part", est.mean.im.abs(), s.sigmas * est.stderr));
    }
    if let Some(expected) = s.expected {
        checks.push(Check::le("mc_vs_expected", (est.mean.re - expected).abs(), s.sigmas * est.stderr + s.expected_tolerance));
    }

    let mut surrogate_json = serde_json::Value::Null;
    if let Some(sur) = &s.surrogate {
        let basis = Glauber::new(sur.dim)?;
        let mut vals = Vec::new();
        for &spacing in &sur.spacings {
            let grid = make_grid(&basis, sur.radius, spacing)?;
            let legs = SparseLegs {
                a: bochner_laplacian(&basis, &grid)?.matrix.shifted(-N_SHIFT),
                mh: grid.points.iter().map(|&p| h.cell_value(p, spacing).re).collect(),
                nu: s.nu,
            };
            vals.push(joint_probability_surrogate(&legs, &basis, &grid, &rho, &s.times, &sets)?);
        }
        let grid_tol = (vals[0] - vals[1]).norm();
        let diff = (est.mean - vals[1]).norm();
        checks.push(Check::le("mc_vs_surrogate", diff, s.sigmas * est.stderr + grid_tol));
        surrogate_json = serde_json::json!({
            "nu": s.nu,
            "spacings": sur.spacings,
            "values": vals.iter().map(|v| [v.re, v.im]).collect::<Vec<_>>(),
            "grid_tolerance": grid_tol,
            "diff": diff,
        });
    }

    let mut operator_value = None;
    let mut operator_json = serde_json::Value::Null;
    if let Some(op) = &s.operator {
        let g = Glauber::new(op.dim)?;
        let grid = make_grid(&g, op.radius, op.spacing)?;
        let r = joint_probability_operator(&rho, &h, &s.times, &sets, &g, &grid)?;
        operator_value = Some(r.value);
        operator_json = serde_json::to_value(&r).expect("serializable");
    }

    let mut limit_json = serde_json::Value::Null;
    if let Some(lim) = &s.limit {
        let (rows, json) = limit_chain(cfg, s, lim, &sets, operator_value, &mut checks)?;
        artifacts.push(write_rows(dir, "jointprob_limit.csv", &rows)?);
        limit_json = json;
    }

    let results = serde_json::json!({
        "mc": est.to_json(serde_json::json!({
            "nu": s.nu, "times": s.times, "n_outer": mc.n_paths, "leg_paths": s.leg_paths, "steps": mc.steps,
        })),
        "surrogate": surrogate_json,
        "operator": operator_json,
        "limit": limit_json,
    });
    Ok(Report::new("jointprob", Some(seed), checks, results, artifacts))
}

/// Dense clipped-bundle surrogate S(ν) for growing ν and ν = ∞, compared with the operator
/// formalism value.
fn limit_chain(
    cfg: &ExperimentConfig,
    s: &JointProbSection,
    lim: &crate::config::LimitSpec,
    sets: &[PovmSet],
    operator_value: Option<f64>,
    checks: &mut Vec<Check>,
) -> CliResult<(Vec<LimitRow>, serde_json::Value)> {
    let family = cfg.build_family()?;
    let rho = cfg.observable(&s.rho)?;
    let h = cfg.observable(&s.h)?;
    let grid = make_grid(family.as_ref(), lim.radius, lim.spacing)?;
    let bs = BundleSibori::new(family.as_ref(), &grid, &h, lim.cutoff)?;
    let basis = Glauber::new(lim.dim)?;
    let value = |nu: f64| -> CliResult<C64> {
        Ok(joint_probability_surrogate(&DenseLegs { problem: &bs.problem, nu }, &basis, &grid, &rho, &s.times, sets)?)
    };
    let limit = value(f64::INFINITY)?;
    let legs = 2.0 * s.times.len() as f64;
    let mut rows = Vec::new();
    for &nu in &lim.nus {
        let v = value(nu)?;
        rows.push(LimitRow {
            nu,
            surrogate_re: v.re,
            surrogate_im: v.im,
            distance_to_limit: (v - limit).norm(),
            bound: lim.bound_constant * legs * bs.problem.h_norm / (nu * bs.problem.alpha),
        });
    }
    let monotone = rows.windows(2).all(|w| w[1].distance_to_limit <= w[0].distance_to_limit);
    checks.push(Check::holds("limit_distance_monotone", monotone));
    let worst = rows.iter().map(|r| r.distance_to_limit / r.bound).fold(0.0, f64::max);
    checks.push(Check::le("limit_distance_over_rate", worst, 1.0));
    let gap = operator_value.map(|p| (limit.re - p).abs());
    if let Some(gap) = gap {
        checks.push(Check::le("limit_vs_operator", gap, lim.grid_tolerance));
    }
    let json = serde_json::json!({
        "radius": lim.radius,
        "spacing": lim.spacing,
        "alpha": bs.problem.alpha,
        "limit": [limit.re, limit.im],
        "operator_gap": gap,
        "sweep": &rows,
    });
    Ok((rows, json))
}
