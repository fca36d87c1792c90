//! Verification against the fine-scale reference: continuum-wise local
//! averages, the relative L2 error of the coarse solution, and sweep
//! drivers reproducing the reported error tables.

use crate::coarse::{AssemblyFlags, CoarseSolution};
use crate::config::{LayersSpec, RunConfig};
use crate::fem::continuum_cell_averages;
use crate::grid::FineGrid;
use crate::media::ContinuumMap;
use crate::pipeline::{build_problem, run_coarse, run_fine, upscale_all, upscale_all_gradconstraint};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Continuum-wise averages of a fine solution over every coarse cell,
/// with a mask marking where each continuum is actually present.
#[derive(Debug, Clone)]
pub struct AverageReference {
    pub n: usize,
    pub m: usize,
    /// `values[i][cell]`: average over the continuum's part of the cell,
    /// zero where absent.
    pub values: Vec<Vec<f64>>,
    /// `present[i][cell]`.
    pub present: Vec<Vec<bool>>,
}

/// Averages a fine nodal field per continuum and coarse cell.
pub fn average_reference(
    fine: &FineGrid,
    coarse_m: usize,
    map: &ContinuumMap,
    u: &[f64],
) -> Result<AverageReference> {
    if fine.nx % coarse_m != 0 {
        return Err(Error::Grid(format!(
            "nx={} not divisible by M={coarse_m}",
            fine.nx
        )));
    }
    let values = continuum_cell_averages(fine, coarse_m, map, u);
    let cpc = fine.nx / coarse_m;
    let mut present = vec![vec![false; coarse_m * coarse_m]; map.n];
    for oy in 0..coarse_m {
        for ox in 0..coarse_m {
            for ly in 0..cpc {
                for lx in 0..cpc {
                    let lab = map.labels[(oy * cpc + ly) * fine.nx + ox * cpc + lx] as usize;
                    present[lab][oy * coarse_m + ox] = true;
                }
            }
        }
    }
    Ok(AverageReference {
        n: map.n,
        m: coarse_m,
        values,
        present,
    })
}

/// Relative coarse-solution error against the averaged reference.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorReport {
    /// `100 * sqrt(sum (U - ubar)^2 / sum ubar^2)`, over cells where the
    /// continuum is present.
    pub e2_percent: f64,
    /// The squared ratio before the square root.
    pub ratio: f64,
    /// Per-continuum errors on the same convention.
    pub per_continuum: Vec<f64>,
}

/// Computes the relative L2 error of a coarse multicontinuum solution with
/// respect to continuum-wise fine-solution averages. Cells where a
/// continuum is absent are excluded from both sums.
pub fn e2_error(reference: &AverageReference, coarse: &CoarseSolution) -> Result<ErrorReport> {
    if coarse.m != reference.m || coarse.n != reference.n {
        return Err(Error::Config(format!(
            "coarse solution ({}x{} cells, {} continua) does not match reference ({}x{}, {})",
            coarse.m, coarse.m, coarse.n, reference.m, reference.m, reference.n
        )));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    let mut per = Vec::with_capacity(reference.n);
    for i in 0..reference.n {
        let u = coarse.cell_values(i);
        let mut ni = 0.0;
        let mut di = 0.0;
        for c in 0..reference.m * reference.m {
            if reference.present[i][c] {
                let d = u[c] - reference.values[i][c];
                ni += d * d;
                di += reference.values[i][c] * reference.values[i][c];
            }
        }
        num += ni;
        den += di;
        per.push(if di > 0.0 {
            100.0 * (ni / di).sqrt()
        } else {
            f64::NAN
        });
    }
    if den <= 0.0 {
        return Err(Error::Config(
            "reference averages vanish: relative error undefined".into(),
        ));
    }
    let ratio = num / den;
    Ok(ErrorReport {
        e2_percent: 100.0 * ratio.sqrt(),
        ratio,
        per_continuum: per,
    })
}

/// Classical layered-medium limits for volume fraction `f` of `k2`:
/// `(arithmetic, harmonic)` means, the along-layer and cross-layer
/// effective conductivities.
pub fn layered_oracle(k1: f64, k2: f64, f: f64) -> (f64, f64) {
    let arithmetic = f * k2 + (1.0 - f) * k1;
    let harmonic = 1.0 / (f / k2 + (1.0 - f) / k1);
    (arithmetic, harmonic)
}

/// One sweep entry: a coarse mesh / period / oversampling combination.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SweepSpec {
    pub m: usize,
    pub epsilon: f64,
    /// Overrides the base configuration's depth when set.
    pub layers: Option<usize>,
}

/// One sweep result row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub m: usize,
    pub epsilon: f64,
    pub layers: usize,
    pub solved_regions: usize,
    pub e2_percent: Option<f64>,
    pub ratio: Option<f64>,
    pub error: Option<String>,
}

/// Runs compare (upscale + coarse solve + fine reference + error) across a
/// list of mesh/period/depth combinations. Failures are recorded per row
/// rather than aborting the sweep. Fine reference solutions are re-used
/// across rows that share a period.
pub fn run_sweep(base: &RunConfig, specs: &[SweepSpec]) -> Vec<SweepRow> {
    let mut fine_cache: HashMap<u64, std::rc::Rc<(crate::fem::FineSolution, ContinuumMap)>> =
        HashMap::new();
    let mut out = Vec::with_capacity(specs.len());
    for spec in specs {
        let mut cfg = base.clone();
        cfg.m = spec.m;
        cfg.epsilon = Some(spec.epsilon);
        if let Some(l) = spec.layers {
            cfg.layers = LayersSpec::Fixed(l);
        }
        let layers = cfg.layers();
        match run_compare_row(&cfg, &mut fine_cache) {
            Ok((report, solved)) => out.push(SweepRow {
                m: spec.m,
                epsilon: spec.epsilon,
                layers,
                solved_regions: solved,
                e2_percent: Some(report.e2_percent),
                ratio: Some(report.ratio),
                error: None,
            }),
            Err(e) => out.push(SweepRow {
                m: spec.m,
                epsilon: spec.epsilon,
                layers,
                solved_regions: 0,
                e2_percent: None,
                ratio: None,
                error: Some(e.to_string()),
            }),
        }
    }
    out
}

fn run_compare_row(
    cfg: &RunConfig,
    fine_cache: &mut HashMap<u64, std::rc::Rc<(crate::fem::FineSolution, ContinuumMap)>>,
) -> Result<(ErrorReport, usize)> {
    let problem = build_problem(cfg)?;
    let key = cfg.epsilon.unwrap_or(0.0).to_bits();
    let fine_ref = match fine_cache.get(&key) {
        Some(f) => std::rc::Rc::clone(f),
        None => {
            let sol = run_fine(&problem)?;
            let rc = std::rc::Rc::new((sol, problem.map.clone()));
            fine_cache.insert(key, std::rc::Rc::clone(&rc));
            rc
        }
    };
    let up = if cfg.gradient_constraint {
        upscale_all_gradconstraint(&problem)?
    } else {
        upscale_all(&problem)?
    };
    let flags = AssemblyFlags {
        include_cross_terms: cfg.cross_terms,
    };
    let (_, coarse_sol) = run_coarse(&problem, &up.eff, flags)?;
    let reference = average_reference(&problem.fine, cfg.m, &fine_ref.1, &fine_ref.0.u)?;
    Ok((e2_error(&reference, &coarse_sol)?, up.solved))
}

/// Full compare for one configuration: fine reference, upscaling, coarse
/// solve, and the error report.
pub struct CompareOutcome {
    pub problem: crate::pipeline::Problem,
    pub fine: crate::fem::FineSolution,
    pub reference: AverageReference,
    pub eff: Vec<crate::effective::EffectiveCoefficients>,
    pub solved_regions: usize,
    pub coarse: CoarseSolution,
    pub report: ErrorReport,
}

pub fn run_compare(cfg: &RunConfig) -> Result<CompareOutcome> {
    let problem = build_problem(cfg)?;
    let fine = run_fine(&problem)?;
    let up = if cfg.gradient_constraint {
        upscale_all_gradconstraint(&problem)?
    } else {
        upscale_all(&problem)?
    };
    let flags = AssemblyFlags {
        include_cross_terms: cfg.cross_terms,
    };
    let (_, coarse_sol) = run_coarse(&problem, &up.eff, flags)?;
    let reference = average_reference(&problem.fine, cfg.m, &problem.map, &fine.u)?;
    let report = e2_error(&reference, &coarse_sol)?;
    Ok(CompareOutcome {
        problem,
        fine,
        reference,
        eff: up.eff,
        solved_regions: up.solved,
        coarse: coarse_sol,
        report,
    })
}
