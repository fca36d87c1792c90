//! Effective-coefficient extraction from cell solutions.
//!
//! All tensors are energy integrals of the cell-problem fields restricted
//! to the target RVE. Raw values are kept for coarse assembly (which turns
//! them into densities by dividing by the target volume); normalized values
//! (per unit RVE volume) are what the reported tables use.

use crate::cells::CellSolutionSet;
use crate::{fem, DIM};
use serde::{Deserialize, Serialize};

/// Effective tensors for one coarse cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EffectiveCoefficients {
    pub n: usize,
    /// `alpha[i][j][m][n] = int_{RVE} kappa grad(phi_i^m) . grad(phi_j^n)`.
    pub alpha: Vec<Vec<Vec<Vec<f64>>>>,
    /// `beta_star[i][j] = int_{RVE} kappa grad(phi_i) . grad(phi_j)`.
    pub beta_star: Vec<Vec<f64>>,
    /// `beta_m_star[i][j][m] = int_{RVE} kappa grad(phi_i^m) . grad(phi_j)`.
    pub beta_m_star: Vec<Vec<Vec<f64>>>,
    /// Source weights per continuum, if a source was supplied.
    pub f: Option<Vec<f64>>,
    /// `|omega|`: target RVE volume.
    pub target_volume: f64,
    /// `|R_omega|`: oversampled region volume.
    pub region_volume: f64,
    /// Period the medium was generated with, kept for rescaling.
    pub epsilon: f64,
}

/// Tensors rescaled to O(1) magnitudes; reporting metadata only.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RescaledCoefficients {
    /// `|R_omega| / eps^2 * beta_star`.
    pub beta_hat: Vec<Vec<f64>>,
    /// `|R_omega| / eps * beta_m_star`.
    pub beta_m_hat: Vec<Vec<Vec<f64>>>,
    /// `|R_omega| * alpha`.
    pub alpha_hat: Vec<Vec<Vec<Vec<f64>>>>,
}

impl EffectiveCoefficients {
    /// All tensor entries normalized by the RVE volume, flattened in a
    /// fixed order; used for decay studies and table output.
    pub fn normalized_flat(&self) -> Vec<f64> {
        let v = self.target_volume;
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in 0..self.n {
                out.push(self.beta_star[i][j] / v);
            }
        }
        for i in 0..self.n {
            for j in 0..self.n {
                for m in 0..DIM {
                    out.push(self.beta_m_star[i][j][m] / v);
                }
            }
        }
        for i in 0..self.n {
            for j in 0..self.n {
                for m in 0..DIM {
                    for nn in 0..DIM {
                        out.push(self.alpha[i][j][m][nn] / v);
                    }
                }
            }
        }
        out
    }

    /// `beta_star[i][j] / |RVE|`, the quantity the reported tables list.
    pub fn beta_normalized(&self, i: usize, j: usize) -> f64 {
        self.beta_star[i][j] / self.target_volume
    }

    /// `alpha[i][j][m][n] / |RVE|`.
    pub fn alpha_normalized(&self, i: usize, j: usize, m: usize, nn: usize) -> f64 {
        self.alpha[i][j][m][nn] / self.target_volume
    }
}

/// Extracts the effective tensors over the target RVE of `set`. If a local
/// per-cell source is supplied, source weights are included.
pub fn extract(set: &CellSolutionSet, f_local: Option<&[f64]>) -> EffectiveCoefficients {
    let n = set.n;
    let local = &set.local;
    let target: Vec<(usize, usize)> = set.target_patch_cells();
    let kap = &set.kappa_local;

    let mut alpha = vec![vec![vec![vec![0.0; DIM]; DIM]; n]; n];
    let mut beta_star = vec![vec![0.0; n]; n];
    let mut beta_m_star = vec![vec![vec![0.0; DIM]; n]; n];
    for i in 0..n {
        for j in 0..n {
            beta_star[i][j] =
                fem::energy_product(local, &target, kap, &set.phi[i], &set.phi[j]);
            for m in 0..DIM {
                beta_m_star[i][j][m] =
                    fem::energy_product(local, &target, kap, &set.phi_m[i][m], &set.phi[j]);
                for nn in 0..DIM {
                    alpha[i][j][m][nn] = fem::energy_product(
                        local,
                        &target,
                        kap,
                        &set.phi_m[i][m],
                        &set.phi_m[j][nn],
                    );
                }
            }
        }
    }
    let f = f_local.map(|fl| source_weights(set, fl));
    EffectiveCoefficients {
        n,
        alpha,
        beta_star,
        beta_m_star,
        f,
        target_volume: set.target_volume(),
        region_volume: set.region_volume(),
        epsilon: set.epsilon,
    }
}

/// Source weights `f_i = int_omega f phi_i` over the target RVE, matching
/// the energy tensors (every coarse density divides by the target volume).
/// Integrating over the target cell keeps a localized source localized; the
/// gradient-field contribution is dropped as an order smaller.
pub fn source_weights(set: &CellSolutionSet, f_local: &[f64]) -> Vec<f64> {
    let local = &set.local;
    let target = set.target_patch_cells();
    (0..set.n)
        .map(|i| fem::source_product(local, &target, f_local, &set.phi[i]))
        .collect()
}

/// Rescales tensors to O(1) magnitudes for reporting.
pub fn rescale(eff: &EffectiveCoefficients, eps: f64) -> RescaledCoefficients {
    let r = eff.region_volume;
    let beta_hat = eff
        .beta_star
        .iter()
        .map(|row| row.iter().map(|b| r / (eps * eps) * b).collect())
        .collect();
    let beta_m_hat = eff
        .beta_m_star
        .iter()
        .map(|bi| {
            bi.iter()
                .map(|bij| bij.iter().map(|b| r / eps * b).collect())
                .collect()
        })
        .collect();
    let alpha_hat = eff
        .alpha
        .iter()
        .map(|ai| {
            ai.iter()
                .map(|aij| {
                    aij.iter()
                        .map(|aijm| aijm.iter().map(|a| r * a).collect())
                        .collect()
                })
                .collect()
        })
        .collect();
    RescaledCoefficients {
        beta_hat,
        beta_m_hat,
        alpha_hat,
    }
}

/// CSV header for the per-cell coefficient export, fixed column order.
pub fn csv_header(n: usize) -> String {
    let mut cols = vec!["cx".to_string(), "cy".to_string()];
    for i in 0..n {
        for j in 0..n {
            cols.push(format!("beta_{}{}", i + 1, j + 1));
        }
    }
    for i in 0..n {
        for j in 0..n {
            for m in 0..DIM {
                cols.push(format!("beta_{}{}_{}", i + 1, j + 1, m + 1));
            }
        }
    }
    for i in 0..n {
        for j in 0..n {
            for m in 0..DIM {
                for nn in 0..DIM {
                    cols.push(format!("alpha_{}{}_{}{}", i + 1, j + 1, m + 1, nn + 1));
                }
            }
        }
    }
    for i in 0..n {
        cols.push(format!("f_{}", i + 1));
    }
    cols.join(",")
}

/// One CSV row matching [`csv_header`]: raw (un-normalized) tensors.
pub fn csv_row(cx: usize, cy: usize, eff: &EffectiveCoefficients) -> String {
    let mut cols = vec![cx.to_string(), cy.to_string()];
    for i in 0..eff.n {
        for j in 0..eff.n {
            cols.push(format!("{:.17e}", eff.beta_star[i][j]));
        }
    }
    for i in 0..eff.n {
        for j in 0..eff.n {
            for m in 0..DIM {
                cols.push(format!("{:.17e}", eff.beta_m_star[i][j][m]));
            }
        }
    }
    for i in 0..eff.n {
        for j in 0..eff.n {
            for m in 0..DIM {
                for nn in 0..DIM {
                    cols.push(format!("{:.17e}", eff.alpha[i][j][m][nn]));
                }
            }
        }
    }
    for i in 0..eff.n {
        let v = eff.f.as_ref().map_or(0.0, |f| f[i]);
        cols.push(format!("{v:.17e}"));
    }
    cols.join(",")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::solve_cells;
    use crate::grid::{oversample, CoarseGrid, FineGrid};
    use crate::media::{gen_case1, gen_source, ConductivityField, ContinuumMap, MediumParams};

    fn const_setup(
        nx: usize,
        m: usize,
        kap: f64,
    ) -> (CoarseGrid, ConductivityField, ContinuumMap) {
        let fine = FineGrid::new(nx).unwrap();
        let coarse = CoarseGrid::new(fine, m).unwrap();
        let kappa = ConductivityField {
            values: vec![kap; fine.cell_count()],
            epsilon: 1.0,
            descriptor: "const".into(),
        };
        let map = ContinuumMap::single(fine.cell_count());
        (coarse, kappa, map)
    }

    #[test]
    fn constant_coefficient_oracle() {
        let kap = 2.5;
        let (coarse, kappa, map) = const_setup(48, 8, kap);
        let region = oversample(&coarse, 4, 4, 3).unwrap();
        let set = solve_cells(&coarse, &region, &kappa, &map, 1e-10).unwrap();
        let eff = extract(&set, None);
        for m in 0..2 {
            for nn in 0..2 {
                let a = eff.alpha_normalized(0, 0, m, nn);
                let want = if m == nn { kap } else { 0.0 };
                // the region-boundary layer leaves about 3% at depth 3
                assert!(
                    (a - want).abs() < 0.05 * kap,
                    "alpha {m}{nn}: {a} vs {want}"
                );
            }
        }
        assert!(eff.beta_normalized(0, 0).abs() < 1e-10);
    }

    #[test]
    fn alpha_and_beta_symmetry_case1() {
        let fine = FineGrid::new(64).unwrap();
        let coarse = CoarseGrid::new(fine, 8).unwrap();
        let (kappa, map) = gen_case1(&fine, 1.0 / 8.0, &MediumParams::default()).unwrap();
        let region = oversample(&coarse, 4, 4, 2).unwrap();
        let set = solve_cells(&coarse, &region, &kappa, &map, 1e-10).unwrap();
        let eff = extract(&set, None);
        let amax = eff
            .alpha
            .iter()
            .flatten()
            .flatten()
            .flatten()
            .fold(0.0f64, |a, &b| a.max(b.abs()));
        for i in 0..2 {
            for j in 0..2 {
                for m in 0..2 {
                    for nn in 0..2 {
                        let d = (eff.alpha[i][j][m][nn] - eff.alpha[j][i][nn][m]).abs();
                        assert!(d < 1e-12 * amax, "alpha symmetry broken by {d}");
                    }
                }
            }
        }
        let bmax = eff
            .beta_star
            .iter()
            .flatten()
            .fold(0.0f64, |a, &b| a.max(b.abs()));
        for i in 0..2 {
            for j in 0..2 {
                let d = (eff.beta_star[i][j] - eff.beta_star[j][i]).abs();
                assert!(d < 1e-8 * bmax);
            }
        }
        // two-continuum structure: diagonal close, off-diagonal negative
        assert!(eff.beta_star[0][1] < 0.0);
        let d11 = eff.beta_normalized(0, 0);
        let d12 = eff.beta_normalized(0, 1);
        assert!((d11 + d12).abs() < 0.2 * d11.abs(), "{d11} vs {d12}");
    }

    #[test]
    fn beta_row_sums_vanish_at_every_depth() {
        // the average fields sum to one exactly, so every row of the
        // exchange tensor sums to zero up to round-off regardless of the
        // oversampling depth
        let fine = FineGrid::new(80).unwrap();
        let coarse = CoarseGrid::new(fine, 10).unwrap();
        let (kappa, map) = gen_case1(&fine, 1.0 / 10.0, &MediumParams::default()).unwrap();
        for l in [0usize, 1, 3] {
            let region = oversample(&coarse, 5, 5, l).unwrap();
            let set = solve_cells(&coarse, &region, &kappa, &map, 1e-10).unwrap();
            let eff = extract(&set, None);
            let bmax = eff
                .beta_star
                .iter()
                .flatten()
                .fold(0.0f64, |a, &b| a.max(b.abs()));
            for i in 0..eff.n {
                let row: f64 = eff.beta_star[i].iter().sum();
                assert!(row.abs() <= 1e-10 * bmax, "l={l} i={i}: {row} vs {bmax}");
            }
        }
    }

    #[test]
    fn rescale_is_literal() {
        let eff = EffectiveCoefficients {
            n: 1,
            alpha: vec![vec![vec![vec![3.0, 0.0], vec![0.0, 3.0]]]],
            beta_star: vec![vec![2.0]],
            beta_m_star: vec![vec![vec![5.0, 7.0]]],
            f: None,
            target_volume: 0.25,
            region_volume: 0.5,
            epsilon: 0.1,
        };
        let r = rescale(&eff, 0.1);
        assert!((r.beta_hat[0][0] - 0.5 / 0.01 * 2.0).abs() < 1e-12);
        assert!((r.beta_m_hat[0][0][0] - 0.5 / 0.1 * 5.0).abs() < 1e-12);
        assert!((r.alpha_hat[0][0][0][0] - 0.5 * 3.0).abs() < 1e-12);
    }

    #[test]
    fn source_weights_reduce_and_vanish() {
        let (coarse, kappa, map) = const_setup(32, 4, 1.0);
        let region = oversample(&coarse, 1, 1, 0).unwrap();
        let set = solve_cells(&coarse, &region, &kappa, &map, 1e-10).unwrap();
        // zero source -> zero weights
        let z = source_weights(&set, &vec![0.0; set.local.cell_count()]);
        assert_eq!(z, vec![0.0]);
        // N=1, phi = 1, RVE = region: f_1 = int_omega f
        let src = gen_source(&coarse.fine, &kappa, &map);
        let f_local = set.local.gather_cells(&coarse.fine, &src.values);
        let w = source_weights(&set, &f_local);
        let want: f64 = f_local.iter().sum::<f64>() * set.local.h * set.local.h;
        assert!((w[0] - want).abs() < 1e-10 * want.abs().max(1e-12));
    }

    #[test]
    fn source_weight_ratio_tracks_scaling() {
        let fine = FineGrid::new(80).unwrap();
        let coarse = CoarseGrid::new(fine, 10).unwrap();
        let (kappa, map) = gen_case1(&fine, 1.0 / 10.0, &MediumParams::default()).unwrap();
        let src = gen_source(&fine, &kappa, &map);
        // central RVE: low-continuum source is scaled by 1000 min(kappa)
        let region = oversample(&coarse, 4, 4, 1).unwrap();
        let set = solve_cells(&coarse, &region, &kappa, &map, 1e-9).unwrap();
        let f_local = set.local.gather_cells(&fine, &src.values);
        let w = source_weights(&set, &f_local);
        let ratio = w[0] / w[1];
        let scale = 1000.0 * kappa.min();
        assert!(
            ratio > 0.0 && (ratio / scale).log10().abs() < 1.0,
            "ratio {ratio} vs scale {scale}"
        );
    }

    #[test]
    fn csv_roundtrip_shape() {
        let header = csv_header(2);
        let ncols = header.split(',').count();
        // 2 + N^2 + 2 N^2 + 4 N^2 + N with N=2
        assert_eq!(ncols, 2 + 4 + 8 + 16 + 2);
        let eff = EffectiveCoefficients {
            n: 2,
            alpha: vec![vec![vec![vec![0.0; 2]; 2]; 2]; 2],
            beta_star: vec![vec![0.0; 2]; 2],
            beta_m_star: vec![vec![vec![0.0; 2]; 2]; 2],
            f: Some(vec![1.0, 2.0]),
            target_volume: 1.0,
            region_volume: 1.0,
            epsilon: 0.1,
        };
        assert_eq!(csv_row(3, 4, &eff).split(',').count(), ncols);
    }
}
