//! Coupled multicontinuum coarse solver.
//!
//! The coarse unknowns are N continuum fields, each continuous Q1 on the
//! coarse grid with homogeneous Dirichlet boundary. Per coarse cell the
//! effective tensors act as constants: the raw target-RVE integrals divided
//! by the target volume are densities, integrated exactly against Q1 basis
//! products.

use crate::effective::EffectiveCoefficients;
use crate::grid::CoarseGrid;
use crate::sparsela::{solve_spd, SparseSym};
use crate::{Error, Result, DIM};

/// Assembly options.
#[derive(Debug, Clone, Copy)]
pub struct AssemblyFlags {
    /// Include the convection-like coupling between averages and gradients.
    /// The terms are asymptotically negligible; the flag exists to measure
    /// that.
    pub include_cross_terms: bool,
}

impl Default for AssemblyFlags {
    fn default() -> Self {
        AssemblyFlags {
            include_cross_terms: true,
        }
    }
}

/// Assembled symmetric coarse system over `n * (m+1)^2` unknowns, ordered
/// continuum-major.
pub struct CoarseSystem {
    pub m: usize,
    pub n: usize,
    pub flags: AssemblyFlags,
    pub a: SparseSym,
    pub b: Vec<f64>,
}

/// Coarse solution fields.
#[derive(Debug, Clone)]
pub struct CoarseSolution {
    pub m: usize,
    pub n: usize,
    pub flags: AssemblyFlags,
    /// Nodal fields, `u[i]` row-major over `(m+1)^2` coarse nodes.
    pub u: Vec<Vec<f64>>,
}

impl CoarseSolution {
    /// Cell-averaged values of continuum `i`, row-major over coarse cells.
    pub fn cell_values(&self, i: usize) -> Vec<f64> {
        let m = self.m;
        let mut out = Vec::with_capacity(m * m);
        for cy in 0..m {
            for cx in 0..m {
                let s = self.u[i][cy * (m + 1) + cx]
                    + self.u[i][cy * (m + 1) + cx + 1]
                    + self.u[i][(cy + 1) * (m + 1) + cx]
                    + self.u[i][(cy + 1) * (m + 1) + cx + 1];
                out.push(0.25 * s);
            }
        }
        out
    }
}

const GPTS: [f64; 2] = [-0.577_350_269_189_625_76, 0.577_350_269_189_625_76];

#[inline]
fn shape(xi: f64, eta: f64) -> [f64; 4] {
    [
        0.25 * (1.0 - xi) * (1.0 - eta),
        0.25 * (1.0 + xi) * (1.0 - eta),
        0.25 * (1.0 + xi) * (1.0 + eta),
        0.25 * (1.0 - xi) * (1.0 + eta),
    ]
}

/// Physical gradients (d/dx, d/dy) of the four shape functions on a square
/// cell of side `h`.
#[inline]
fn shape_grad_phys(xi: f64, eta: f64, h: f64) -> [(f64, f64); 4] {
    let s = 2.0 / h * 0.25;
    [
        (-s * (1.0 - eta), -s * (1.0 - xi)),
        (s * (1.0 - eta), -s * (1.0 + xi)),
        (s * (1.0 + eta), s * (1.0 + xi)),
        (-s * (1.0 + eta), s * (1.0 - xi)),
    ]
}

#[inline]
fn grad_axis(g: (f64, f64), axis: usize) -> f64 {
    crate::grad_component(axis, g.0, g.1)
}

/// Element matrices on a cell of side `h` for the three coupling kinds:
/// anisotropic diffusion `int A_mn dm(Na) dn(Nb)` (trial index a),
/// convection `int c_m dm(Na) Nb`, and mass `int Na Nb`.
fn element_matrices(h: f64) -> ElementKernels {
    let mut diff = [[[[0.0; 4]; 4]; DIM]; DIM];
    let mut conv = [[[0.0; 4]; 4]; DIM];
    let mut mass = [[0.0; 4]; 4];
    let jac = h * h / 4.0;
    for &xi in &GPTS {
        for &eta in &GPTS {
            let nsh = shape(xi, eta);
            let g = shape_grad_phys(xi, eta, h);
            for a in 0..4 {
                for b in 0..4 {
                    mass[a][b] += jac * nsh[a] * nsh[b];
                    for m in 0..DIM {
                        conv[m][a][b] += jac * grad_axis(g[a], m) * nsh[b];
                        for nn in 0..DIM {
                            diff[m][nn][a][b] += jac * grad_axis(g[a], m) * grad_axis(g[b], nn);
                        }
                    }
                }
            }
        }
    }
    ElementKernels { diff, conv, mass }
}

struct ElementKernels {
    /// `diff[m][n][a][b] = int dm(Na) dn(Nb)`.
    diff: [[[[f64; 4]; 4]; DIM]; DIM],
    /// `conv[m][a][b] = int dm(Na) Nb`.
    conv: [[[f64; 4]; 4]; DIM],
    /// `mass[a][b] = int Na Nb`.
    mass: [[f64; 4]; 4],
}

/// Assembles the coupled coarse system from per-cell effective tensors
/// (row-major over coarse cells) and their source weights.
pub fn assemble_coarse(
    coarse: &CoarseGrid,
    eff: &[EffectiveCoefficients],
    flags: AssemblyFlags,
) -> Result<CoarseSystem> {
    let m = coarse.m;
    if eff.len() != m * m {
        return Err(Error::Config(format!(
            "expected effective coefficients for {} coarse cells, got {}",
            m * m,
            eff.len()
        )));
    }
    let n = eff[0].n;
    if eff.iter().any(|e| e.n != n) {
        return Err(Error::Config("inconsistent continuum counts across cells".into()));
    }
    let h = coarse.big_h();
    let kern = element_matrices(h);
    let nn_nodes = (m + 1) * (m + 1);
    let ndof = n * nn_nodes;
    let cell_vol = h * h;

    let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(m * m * n * n * 16 * 4);
    let mut rhs = vec![0.0; ndof];
    for cy in 0..m {
        for cx in 0..m {
            let e = &eff[cy * m + cx];
            // the stored tensors are integrals over the target cell, so the
            // constant densities entering the element matrices divide by the
            // target volume
            let rvol = e.target_volume;
            let nodes = [
                cy * (m + 1) + cx,
                cy * (m + 1) + cx + 1,
                (cy + 1) * (m + 1) + cx + 1,
                (cy + 1) * (m + 1) + cx,
            ];
            for i in 0..n {
                for j in 0..n {
                    // densities: symmetrized so the assembled matrix is
                    // symmetric to machine precision
                    let beta = 0.5 * (e.beta_star[i][j] + e.beta_star[j][i]) / rvol;
                    for a in 0..4 {
                        let row_base = j * nn_nodes; // test continuum j
                        let col_base = i * nn_nodes; // trial continuum i
                        for b in 0..4 {
                            let mut v = beta * kern.mass[a][b];
                            for mm in 0..DIM {
                                for nnn in 0..DIM {
                                    let alpha = 0.5
                                        * (e.alpha[i][j][mm][nnn] + e.alpha[j][i][nnn][mm])
                                        / rvol;
                                    v += alpha * kern.diff[mm][nnn][a][b];
                                }
                                if flags.include_cross_terms {
                                    // grad(U_i) V_j and U_i grad(V_j) carry
                                    // the same tensor with transposed roles,
                                    // which keeps the matrix exactly symmetric
                                    v += e.beta_m_star[i][j][mm] / rvol * kern.conv[mm][a][b];
                                    v += e.beta_m_star[j][i][mm] / rvol * kern.conv[mm][b][a];
                                }
                            }
                            // rows are test dofs, columns trial dofs
                            triplets.push((row_base + nodes[b], col_base + nodes[a], v));
                        }
                    }
                }
                if let Some(f) = &e.f {
                    // per-cell constant source density f_i(omega)/|omega|
                    let dens = f[i] / cell_vol;
                    for &nd in &nodes {
                        rhs[i * nn_nodes + nd] += dens * cell_vol / 4.0;
                    }
                }
            }
        }
    }

    // homogeneous Dirichlet on the domain boundary for every continuum
    let mut constrained = Vec::new();
    for iy in 0..=m {
        for ix in 0..=m {
            if ix == 0 || iy == 0 || ix == m || iy == m {
                for i in 0..n {
                    constrained.push(i * nn_nodes + iy * (m + 1) + ix);
                }
            }
        }
    }
    crate::fem::apply_dirichlet(&mut triplets, &mut rhs, &constrained);
    let a = SparseSym::from_triplets(ndof, triplets)?;
    Ok(CoarseSystem {
        m,
        n,
        flags,
        a,
        b: rhs,
    })
}

/// Solves the assembled coarse system.
pub fn solve_coarse(sys: &CoarseSystem) -> Result<CoarseSolution> {
    let x = solve_spd(&sys.a, &sys.b, 1e-11).map_err(|e| {
        Error::Solver(format!(
            "coarse solve failed (m={}, n={}, cross_terms={}): {e}",
            sys.m, sys.n, sys.flags.include_cross_terms
        ))
    })?;
    let nn_nodes = (sys.m + 1) * (sys.m + 1);
    let u = (0..sys.n)
        .map(|i| x[i * nn_nodes..(i + 1) * nn_nodes].to_vec())
        .collect();
    Ok(CoarseSolution {
        m: sys.m,
        n: sys.n,
        flags: sys.flags,
        u,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem;
    use crate::grid::{FineGrid, LocalGrid};

    fn const_eff_single(kap: f64, m: usize, f: Option<f64>) -> Vec<EffectiveCoefficients> {
        let h = 1.0 / m as f64;
        let vol = h * h;
        (0..m * m)
            .map(|_| EffectiveCoefficients {
                n: 1,
                alpha: vec![vec![vec![
                    vec![kap * vol, 0.0],
                    vec![0.0, kap * vol],
                ]]],
                beta_star: vec![vec![0.0]],
                beta_m_star: vec![vec![vec![0.0, 0.0]]],
                f: f.map(|v| vec![v * vol]),
                target_volume: vol,
                region_volume: vol,
                epsilon: 0.1,
            })
            .collect()
    }

    #[test]
    fn single_continuum_reduces_to_q1_laplacian() {
        let m = 8;
        let kap = 2.0;
        let fine = FineGrid::new(m).unwrap();
        let coarse = CoarseGrid::new(fine, m).unwrap();
        let eff = const_eff_single(kap, m, Some(1.0));
        let sys = assemble_coarse(&coarse, &eff, AssemblyFlags::default()).unwrap();
        let sol = solve_coarse(&sys).unwrap();

        // direct Q1 Poisson solve at the same resolution
        let local = LocalGrid::whole(&fine);
        let mut t = fem::stiffness_triplets(&local, &vec![kap; m * m]);
        let mut b = fem::load_vector(&local, &vec![1.0; m * m]);
        fem::apply_dirichlet(&mut t, &mut b, &fem::boundary_nodes(&fine));
        let a = SparseSym::from_triplets(local.node_count(), t).unwrap();
        let want = solve_spd(&a, &b, 1e-12).unwrap();
        let scale = want.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        for (got, want) in sol.u[0].iter().zip(&want) {
            assert!((got - want).abs() < 1e-10 * scale, "{got} vs {want}");
        }
    }

    #[test]
    fn zero_source_gives_zero() {
        let m = 4;
        let fine = FineGrid::new(m).unwrap();
        let coarse = CoarseGrid::new(fine, m).unwrap();
        let eff = const_eff_single(1.0, m, None);
        let sys = assemble_coarse(&coarse, &eff, AssemblyFlags::default()).unwrap();
        let sol = solve_coarse(&sys).unwrap();
        assert!(sol.u[0].iter().all(|&v| v.abs() < 1e-14));
    }

    fn two_continuum_eff(m: usize, beta: f64, kap: f64, f: (f64, f64)) -> Vec<EffectiveCoefficients> {
        let h = 1.0 / m as f64;
        let vol = h * h;
        let diag = |k: f64| vec![vec![k * vol, 0.0], vec![0.0, k * vol]];
        (0..m * m)
            .map(|_| EffectiveCoefficients {
                n: 2,
                alpha: vec![
                    vec![diag(kap), diag(0.0)],
                    vec![diag(0.0), diag(kap)],
                ],
                beta_star: vec![
                    vec![beta * vol, -beta * vol],
                    vec![-beta * vol, beta * vol],
                ],
                beta_m_star: vec![vec![vec![0.0; 2]; 2]; 2],
                f: Some(vec![f.0 * vol, f.1 * vol]),
                target_volume: vol,
                region_volume: vol,
                epsilon: 0.1,
            })
            .collect()
    }

    #[test]
    fn exchange_vanishes_at_equal_states() {
        // with row-sum-zero exchange and no diffusion difference, applying
        // the reaction part to (U, U) yields zero
        let m = 4;
        let fine = FineGrid::new(m).unwrap();
        let coarse = CoarseGrid::new(fine, m).unwrap();
        let eff = two_continuum_eff(m, 5.0, 0.0, (0.0, 0.0));
        let sys = assemble_coarse(&coarse, &eff, AssemblyFlags::default()).unwrap();
        let nn = (m + 1) * (m + 1);
        let mut x = vec![0.0; 2 * nn];
        for nd in 0..nn {
            let v = (nd as f64 * 0.37).sin();
            x[nd] = v;
            x[nn + nd] = v;
        }
        let y = sys.a.matvec(&x);
        // interior rows are pure exchange here and must cancel; boundary
        // rows are identity from the Dirichlet pinning
        for i in 0..2 {
            for iy in 1..m {
                for ix in 1..m {
                    let r = i * nn + iy * (m + 1) + ix;
                    assert!(y[r].abs() < 1e-12, "row {r}: {}", y[r]);
                }
            }
        }
    }

    #[test]
    fn equal_sources_dominant_exchange_equalizes_states() {
        let m = 8;
        let fine = FineGrid::new(m).unwrap();
        let coarse = CoarseGrid::new(fine, m).unwrap();
        // strong exchange, mildly different diffusion handled equally
        let eff = two_continuum_eff(m, 500.0, 1.0, (1.0, 1.0));
        let sys = assemble_coarse(&coarse, &eff, AssemblyFlags::default()).unwrap();
        let sol = solve_coarse(&sys).unwrap();
        let scale = sol.u[0].iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        for (a, b) in sol.u[0].iter().zip(&sol.u[1]) {
            assert!((a - b).abs() < 0.05 * scale);
        }
    }

    #[test]
    fn assembled_matrix_is_symmetric_with_cross_terms() {
        let m = 3;
        let fine = FineGrid::new(6).unwrap();
        let coarse = CoarseGrid::new(fine, m).unwrap();
        let h = 1.0 / m as f64;
        let vol = h * h;
        // nontrivial tensors with the symmetries extraction guarantees
        let eff: Vec<EffectiveCoefficients> = (0..m * m)
            .map(|c| {
                let s = 1.0 + 0.1 * c as f64;
                let mut alpha = vec![vec![vec![vec![0.0; 2]; 2]; 2]; 2];
                for i in 0..2 {
                    for j in 0..2 {
                        for mm in 0..2 {
                            for nn in 0..2 {
                                alpha[i][j][mm][nn] =
                                    s * vol * (1.0 + (i + j) as f64 + 0.3 * (mm * 2 + nn) as f64);
                            }
                        }
                    }
                }
                // impose the (i,m) <-> (j,n) symmetry exactly
                let snap = alpha.clone();
                for i in 0..2 {
                    for j in 0..2 {
                        for mm in 0..2 {
                            for nn in 0..2 {
                                alpha[i][j][mm][nn] =
                                    0.5 * (snap[i][j][mm][nn] + snap[j][i][nn][mm]);
                            }
                        }
                    }
                }
                EffectiveCoefficients {
                    n: 2,
                    alpha,
                    beta_star: vec![vec![s * vol, -s * vol], vec![-s * vol, s * vol]],
                    beta_m_star: vec![
                        vec![vec![0.1 * vol, 0.2 * vol], vec![-0.1 * vol, 0.05 * vol]],
                        vec![vec![0.07 * vol, -0.03 * vol], vec![0.2 * vol, 0.1 * vol]],
                    ],
                    f: None,
                    target_volume: vol,
                    region_volume: vol,
                    epsilon: 0.1,
                }
            })
            .collect();
        let sys = assemble_coarse(&coarse, &eff, AssemblyFlags::default()).unwrap();
        let d = sys.a.to_dense();
        let nmax = (0..d.nrows())
            .flat_map(|i| (0..d.ncols()).map(move |j| (i, j)))
            .fold(0.0f64, |acc, (i, j)| acc.max(d[(i, j)].abs()));
        for i in 0..d.nrows() {
            for j in 0..i {
                assert!(
                    (d[(i, j)] - d[(j, i)]).abs() < 1e-12 * nmax,
                    "asymmetry at ({i},{j})"
                );
            }
        }
    }

    #[test]
    fn missing_cells_rejected() {
        let fine = FineGrid::new(4).unwrap();
        let coarse = CoarseGrid::new(fine, 4).unwrap();
        let eff = const_eff_single(1.0, 2, None); // wrong count
        assert!(assemble_coarse(&coarse, &eff, AssemblyFlags::default()).is_err());
    }
}
