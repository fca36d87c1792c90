//! End-to-end orchestration: builds the medium from a run configuration,
//! upscales every coarse cell (re-using cell solutions across translated
//! copies of the same local medium), and runs the fine and coarse solvers.

use crate::cells::RegionSolver;
use crate::coarse::{assemble_coarse, solve_coarse, AssemblyFlags, CoarseSolution, CoarseSystem};
use crate::config::{CaseKind, ContinuumSource, RunConfig};
use crate::effective::EffectiveCoefficients;
use crate::fem::{self, solve_fine_reference, FineSolution};
use crate::grid::{oversample, CoarseGrid, FineGrid, LocalGrid};
use crate::media::{
    gen_case1, gen_case1_fixed_contrast, gen_case2, gen_case3, gen_source, ConductivityField,
    ContinuumMap, SourceField,
};
use crate::spectral::{identify_continua, spectral_decompose};
use crate::{Error, Result, DIM};
use std::collections::HashMap;
use std::rc::Rc;

/// A fully instantiated problem: grids, medium, labels, and source.
#[derive(Debug, Clone)]
pub struct Problem {
    pub fine: FineGrid,
    pub coarse: CoarseGrid,
    pub kappa: ConductivityField,
    pub map: ContinuumMap,
    pub source: SourceField,
    pub layers: usize,
    pub tol: f64,
}

/// Builds the grids, conductivity field, continuum labels, and source for a
/// validated configuration.
pub fn build_problem(cfg: &RunConfig) -> Result<Problem> {
    cfg.validate()?;
    let params = cfg.medium_params();
    let (fine, kappa, mut map) = match cfg.case {
        CaseKind::File => {
            let path = cfg.kappa_file.as_ref().expect("validated");
            let (fine, kappa, map) = crate::io::import_kappa(path)?;
            (fine, kappa, map)
        }
        generated => {
            let fine = FineGrid::new(cfg.nx)?;
            let eps = cfg.epsilon.expect("validated");
            let (kappa, map) = match generated {
                CaseKind::Case1 => gen_case1(&fine, eps, &params)?,
                CaseKind::Case1Fixed => gen_case1_fixed_contrast(&fine, eps, &params)?,
                CaseKind::Case2 => gen_case2(&fine, eps, &params)?,
                CaseKind::Case3 => gen_case3(&fine, eps, &params)?,
                CaseKind::File => unreachable!(),
            };
            (fine, kappa, map)
        }
    };
    let coarse = CoarseGrid::new(fine, cfg.m)?;
    if cfg.continuum_source == ContinuumSource::Spectral {
        // the RVE is one period when the medium is generated (and hence
        // periodic); the identified labels then tile the whole domain. For
        // file media no period is known, so the RVE is the full domain.
        let period_cells = match cfg.case {
            CaseKind::File => fine.nx,
            _ => (kappa.epsilon * fine.nx as f64).round() as usize,
        };
        let rve = LocalGrid {
            off: (0, 0),
            ncells: (period_cells, period_cells),
            h: fine.h(),
        };
        let kappa_rve = rve.gather_cells(&fine, &kappa.values);
        let eig_count = cfg.eig_count.min(rve.node_count());
        let report = spectral_decompose(&rve, &kappa_rve, eig_count, cfg.gap_threshold)?;
        let rve_map = identify_continua(&report, &rve, &kappa_rve)?;
        let mut labels = vec![0u8; fine.cell_count()];
        for cy in 0..fine.nx {
            for cx in 0..fine.nx {
                labels[fine.cell(cx, cy)] =
                    rve_map.labels[rve.cell(cx % period_cells, cy % period_cells)];
            }
        }
        map = ContinuumMap::new(rve_map.n, labels)?;
    }
    let source = gen_source(&fine, &kappa, &map);
    Ok(Problem {
        fine,
        coarse,
        kappa,
        map,
        source,
        layers: cfg.layers(),
        tol: cfg.tol,
    })
}

/// Cache key for cell solutions: two regions with the same local extent
/// and bit-identical conductivities and labels have bit-identical cell
/// solutions in region-local coordinates. The target patch does not enter:
/// average fields are target-independent and moment fields for any target
/// follow from the origin-centered ones by linearity.
#[derive(Hash, PartialEq, Eq)]
struct CacheKey {
    ncells: (usize, usize),
    labels: Vec<u8>,
    kappa_bits: Vec<u64>,
    /// Which physical domain edges the region touches (the moment problems
    /// carry a flux load there): bit 0 left, 1 right, 2 bottom, 3 top.
    edges: u8,
}

/// Bitmask of physical domain edges touched by a region.
fn physical_edges(local: &LocalGrid, fine_nx: usize) -> u8 {
    let mut e = 0u8;
    if local.off.0 == 0 {
        e |= 1;
    }
    if local.off.0 + local.ncells.0 == fine_nx {
        e |= 2;
    }
    if local.off.1 == 0 {
        e |= 4;
    }
    if local.off.1 + local.ncells.1 == fine_nx {
        e |= 8;
    }
    e
}

struct CachedRegion {
    /// Average-constrained fields.
    phi: Vec<Vec<f64>>,
    /// Moment-constrained fields centered at the region-local origin.
    phi_m0: Vec<Vec<Vec<f64>>>,
}

struct CachedGrad {
    /// Tensors without source weights (those depend on the region position).
    eff: EffectiveCoefficients,
    /// Average-constrained fields, needed for per-cell source weights.
    phi: Vec<Vec<f64>>,
}

/// Energy-product tensors of the given fields over the target cells.
#[allow(clippy::type_complexity)]
fn energy_tensors(
    local: &LocalGrid,
    kappa_local: &[f64],
    target: &[(usize, usize)],
    phi: &[Vec<f64>],
    phi_m: &[Vec<Vec<f64>>],
) -> (Vec<Vec<Vec<Vec<f64>>>>, Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>) {
    let n = phi.len();
    let mut alpha = vec![vec![vec![vec![0.0; DIM]; DIM]; n]; n];
    let mut beta_star = vec![vec![0.0; n]; n];
    let mut beta_m_star = vec![vec![vec![0.0; DIM]; n]; n];
    for i in 0..n {
        for j in 0..n {
            beta_star[i][j] = fem::energy_product(local, target, kappa_local, &phi[i], &phi[j]);
            for m in 0..DIM {
                beta_m_star[i][j][m] =
                    fem::energy_product(local, target, kappa_local, &phi_m[i][m], &phi[j]);
                for nn in 0..DIM {
                    alpha[i][j][m][nn] = fem::energy_product(
                        local,
                        target,
                        kappa_local,
                        &phi_m[i][m],
                        &phi_m[j][nn],
                    );
                }
            }
        }
    }
    (alpha, beta_star, beta_m_star)
}

/// Effective coefficients for every coarse cell, row-major, plus the number
/// of distinct cell problems actually solved.
pub struct UpscaleResult {
    pub eff: Vec<EffectiveCoefficients>,
    pub solved: usize,
    pub cells: usize,
}

/// Solves the constrained cell problems on every oversampled region and
/// extracts effective coefficients, including per-cell source weights.
pub fn upscale_all(problem: &Problem) -> Result<UpscaleResult> {
    let coarse = &problem.coarse;
    let mut cache: HashMap<CacheKey, Rc<CachedRegion>> = HashMap::new();
    let mut out = Vec::with_capacity(coarse.cell_count());
    let mut solved = 0usize;
    let n = problem.map.n;
    let cell_area = problem.fine.h() * problem.fine.h();
    for cy in 0..coarse.m {
        for cx in 0..coarse.m {
            let region = oversample(coarse, cx, cy, problem.layers)?;
            let local = LocalGrid::from_region(coarse, &region);
            let kappa_local = local.gather_cells(&problem.fine, &problem.kappa.values);
            let labels = local.gather_labels(&problem.fine, &problem.map.labels);
            let key = CacheKey {
                ncells: local.ncells,
                labels: labels.clone(),
                kappa_bits: kappa_local.iter().map(|v| v.to_bits()).collect(),
                edges: physical_edges(&local, problem.fine.nx),
            };
            let cached = match cache.get(&key) {
                Some(c) => Rc::clone(c),
                None => {
                    let result = (|| {
                        let solver =
                            RegionSolver::new(coarse, &region, &problem.kappa, &problem.map)?;
                        let (phi, _) = solver.solve_avg(problem.tol)?;
                        let phi_m0 = solver.solve_grad_origin(problem.tol)?;
                        Ok::<_, Error>(CachedRegion { phi, phi_m0 })
                    })();
                    let c = Rc::new(result.map_err(|e| {
                        Error::Solver(format!(
                            "cell problems on region around ({cx}, {cy}) failed: {e}"
                        ))
                    })?);
                    cache.insert(key, Rc::clone(&c));
                    solved += 1;
                    c
                }
            };
            // target-patch geometry: cells per continuum, masses, centroids
            let (rx, ry) = local.patch_cell_range(coarse, (cx, cy));
            let mut target_cells = vec![Vec::new(); n];
            for ty in ry.clone() {
                for tx in rx.clone() {
                    target_cells[labels[local.cell(tx, ty)] as usize].push((tx, ty));
                }
            }
            let masses: Vec<f64> = target_cells
                .iter()
                .map(|cells| cells.len() as f64 * cell_area)
                .collect();
            if let Some(j) = masses.iter().position(|&m| m <= 0.0) {
                return Err(Error::Media(format!(
                    "continuum {} has no mass in coarse cell ({cx}, {cy})",
                    j + 1
                )));
            }
            // re-center the moment fields on the target patch
            let mut phi_m = vec![Vec::with_capacity(DIM); n];
            for i in 0..n {
                for m in 0..DIM {
                    let c = fem::coordinate_integral(&local, &target_cells[i], m) / masses[i];
                    let field: Vec<f64> = cached.phi_m0[i][m]
                        .iter()
                        .zip(&cached.phi[i])
                        .map(|(&pm, &p)| pm - c * p)
                        .collect();
                    phi_m[i].push(field);
                }
            }
            let all_target: Vec<(usize, usize)> =
                target_cells.iter().flatten().copied().collect();
            let (alpha, beta_star, beta_m_star) =
                energy_tensors(&local, &kappa_local, &all_target, &cached.phi, &phi_m);
            let target_volume: f64 = masses.iter().sum();
            let region_volume = local.cell_count() as f64 * local.h * local.h;
            let f = Some(region_source_weights(
                &local,
                &problem.fine,
                &problem.source,
                &cached.phi,
                &all_target,
            ));
            out.push(EffectiveCoefficients {
                n,
                alpha,
                beta_star,
                beta_m_star,
                f,
                target_volume,
                region_volume,
                epsilon: problem.kappa.epsilon,
            });
        }
    }
    Ok(UpscaleResult {
        eff: out,
        solved,
        cells: coarse.cell_count(),
    })
}

/// `f_i = int_omega f phi_i` over the given target cells, with the source
/// gathered at the region's own global position. Restricting to the target
/// cell matches the energy tensors and keeps a localized source localized.
fn region_source_weights(
    local: &LocalGrid,
    fine: &FineGrid,
    source: &SourceField,
    phi: &[Vec<f64>],
    target: &[(usize, usize)],
) -> Vec<f64> {
    let f_local = local.gather_cells(fine, &source.values);
    phi.iter()
        .map(|p| fem::source_product(local, target, &f_local, p))
        .collect()
}

/// Upscaling through the single-region mode with simultaneous average and
/// gradient constraints (no oversampling). Diagnostic alternative to
/// [`upscale_all`].
pub fn upscale_all_gradconstraint(problem: &Problem) -> Result<UpscaleResult> {
    let coarse = &problem.coarse;
    let n = problem.map.n;
    let mut out = Vec::with_capacity(coarse.cell_count());
    let mut solved = 0usize;
    let mut cache: HashMap<CacheKey, Rc<CachedGrad>> = HashMap::new();
    for cy in 0..coarse.m {
        for cx in 0..coarse.m {
            let region = oversample(coarse, cx, cy, 0)?;
            let local = LocalGrid::from_region(coarse, &region);
            let kappa_local = local.gather_cells(&problem.fine, &problem.kappa.values);
            let labels = local.gather_labels(&problem.fine, &problem.map.labels);
            let key = CacheKey {
                ncells: local.ncells,
                labels,
                kappa_bits: kappa_local.iter().map(|v| v.to_bits()).collect(),
                // the single-RVE mode carries no boundary flux load, so the
                // fields do not depend on the region's position
                edges: 0,
            };
            let cached = match cache.get(&key) {
                Some(c) => Rc::clone(c),
                None => {
                    let set = crate::cells::solve_gradconstraint_cells(
                        coarse,
                        (cx, cy),
                        &problem.kappa,
                        &problem.map,
                        problem.tol,
                    )?;
                    // the region is the target cell itself: all tensors are
                    // energy products over the whole local grid
                    let all: Vec<(usize, usize)> = (0..set.local.ncells.1)
                        .flat_map(|y| (0..set.local.ncells.0).map(move |x| (x, y)))
                        .collect();
                    let (alpha, beta_star, beta_m_star) =
                        energy_tensors(&set.local, &set.kappa_local, &all, &set.phi, &set.phi_m);
                    let vol = set.local.cell_count() as f64 * set.local.h * set.local.h;
                    let eff = EffectiveCoefficients {
                        n,
                        alpha,
                        beta_star,
                        beta_m_star,
                        f: None,
                        target_volume: vol,
                        region_volume: vol,
                        epsilon: problem.kappa.epsilon,
                    };
                    let c = Rc::new(CachedGrad { eff, phi: set.phi });
                    cache.insert(key, Rc::clone(&c));
                    solved += 1;
                    c
                }
            };
            let mut eff = cached.eff.clone();
            // the region is the target cell itself here
            let all: Vec<(usize, usize)> = (0..local.ncells.1)
                .flat_map(|y| (0..local.ncells.0).map(move |x| (x, y)))
                .collect();
            eff.f = Some(region_source_weights(
                &local,
                &problem.fine,
                &problem.source,
                &cached.phi,
                &all,
            ));
            out.push(eff);
        }
    }
    Ok(UpscaleResult {
        eff: out,
        solved,
        cells: coarse.cell_count(),
    })
}

/// Fine-scale reference solution of the problem.
pub fn run_fine(problem: &Problem) -> Result<FineSolution> {
    solve_fine_reference(&problem.fine, &problem.kappa, &problem.source)
}

/// Assembles and solves the coupled coarse system from per-cell tensors.
pub fn run_coarse(
    problem: &Problem,
    eff: &[EffectiveCoefficients],
    flags: AssemblyFlags,
) -> Result<(CoarseSystem, CoarseSolution)> {
    let sys = assemble_coarse(&problem.coarse, eff, flags)?;
    let sol = solve_coarse(&sys)?;
    Ok((sys, sol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::solve_cells;
    use crate::config::LayersSpec;
    use crate::effective::extract;

    fn small_cfg() -> RunConfig {
        let mut cfg = RunConfig::example();
        cfg.nx = 40;
        cfg.m = 4;
        cfg.epsilon = Some(0.1);
        cfg.layers = LayersSpec::Fixed(1);
        cfg
    }

    #[test]
    fn build_problem_generates_consistent_medium() {
        let p = build_problem(&small_cfg()).unwrap();
        assert_eq!(p.kappa.values.len(), 1600);
        assert_eq!(p.map.n, 2);
        assert_eq!(p.source.values.len(), 1600);
        assert_eq!(p.layers, 1);
    }

    #[test]
    fn translation_cache_collapses_periodic_interior() {
        // eps = 1/10, M = 10 at nx = 80: every coarse cell spans exactly one
        // period, so interior regions are translated copies. With 1 layer
        // the cells whose regions touch neither domain edge are cx, cy in
        // 2..=7.
        let mut cfg = small_cfg();
        cfg.nx = 80;
        cfg.m = 10;
        let p = build_problem(&cfg).unwrap();
        let r = upscale_all(&p).unwrap();
        assert_eq!(r.eff.len(), 100);
        assert!(r.solved < r.cells, "cache never hit: {} of {}", r.solved, r.cells);
        // per axis: 2 clipped classes per side plus the interior class, and
        // boundary-touching regions are keyed separately (their moment
        // problems carry the physical-boundary flux load): 5 x 5 keys
        assert!(r.solved <= 25, "solved {}", r.solved);
        // cached copies carry per-cell source weights
        for e in &r.eff {
            let f = e.f.as_ref().unwrap();
            assert_eq!(f.len(), 2);
            assert!(f.iter().all(|v| v.is_finite()));
        }
        // source weights differ between center and corner cells
        let fc = r.eff[5 * 10 + 5].f.as_ref().unwrap()[1];
        let f0 = r.eff[0].f.as_ref().unwrap()[1];
        assert!(
            (fc - f0).abs() > 1e-12 * fc.abs().max(f0.abs()),
            "source weights identical across positions"
        );
    }

    #[test]
    fn cached_and_directly_solved_tensors_agree() {
        let p = build_problem(&small_cfg()).unwrap();
        let r = upscale_all(&p).unwrap();
        // recompute one interior cell without the cache
        let region = oversample(&p.coarse, 2, 2, p.layers).unwrap();
        let set = solve_cells(&p.coarse, &region, &p.kappa, &p.map, p.tol).unwrap();
        let direct = extract(&set, None);
        let via_cache = &r.eff[2 * 4 + 2];
        let ascale = direct
            .alpha
            .iter()
            .flatten()
            .flatten()
            .flatten()
            .fold(0.0f64, |a, &v| a.max(v.abs()));
        for i in 0..2 {
            for j in 0..2 {
                let a = direct.beta_star[i][j];
                let b = via_cache.beta_star[i][j];
                assert!(
                    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1e-300),
                    "beta[{i}][{j}]: {a} vs {b}"
                );
                // moment fields go through the linearity re-centering, so
                // they agree at solver tolerance rather than bitwise
                for m in 0..DIM {
                    for nn in 0..DIM {
                        let a = direct.alpha[i][j][m][nn];
                        let b = via_cache.alpha[i][j][m][nn];
                        assert!(
                            (a - b).abs() <= 1e-7 * ascale,
                            "alpha[{i}][{j}][{m}][{nn}]: {a} vs {b}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn full_pipeline_runs_coarse_solve() {
        let p = build_problem(&small_cfg()).unwrap();
        let r = upscale_all(&p).unwrap();
        let (_, sol) = run_coarse(&p, &r.eff, AssemblyFlags::default()).unwrap();
        assert_eq!(sol.u.len(), 2);
        assert_eq!(sol.u[0].len(), 25);
        assert!(sol.u.iter().flatten().any(|&v| v.abs() > 0.0));
        assert!(sol.u.iter().flatten().all(|v| v.is_finite()));
    }

    #[test]
    fn gradconstraint_mode_produces_comparable_tensors() {
        let p = build_problem(&small_cfg()).unwrap();
        let r = upscale_all_gradconstraint(&p).unwrap();
        assert_eq!(r.eff.len(), 16);
        for e in &r.eff {
            // diagonal energy products are positive
            assert!(e.beta_star[0][0] > 0.0);
            assert!(e.alpha[1][1][1][1] > 0.0);
            assert_eq!(e.target_volume, e.region_volume);
        }
        assert!(r.solved <= r.cells);
    }

    #[test]
    fn spectral_labeling_matches_generator_on_small_grid() {
        let mut cfg = small_cfg();
        cfg.nx = 20;
        cfg.m = 2;
        cfg.epsilon = Some(0.2);
        cfg.continuum_source = ContinuumSource::Spectral;
        cfg.contrast = Some(crate::media::ContrastSpec::Fixed {
            low: 1e-6,
            high: 1.0,
        });
        let p = build_problem(&cfg).unwrap();
        let mut gen_cfg = cfg.clone();
        gen_cfg.continuum_source = ContinuumSource::Generator;
        let pg = build_problem(&gen_cfg).unwrap();
        assert_eq!(p.map.n, pg.map.n);
        let agree = p
            .map
            .labels
            .iter()
            .zip(&pg.map.labels)
            .filter(|(a, b)| a == b)
            .count();
        assert!(
            agree as f64 >= 0.99 * p.map.labels.len() as f64,
            "agreement {agree}/{}",
            p.map.labels.len()
        );
    }
}
