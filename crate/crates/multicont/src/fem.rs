//! Bilinear (Q1) finite elements on uniform rectangular grids.
//!
//! All element integrals use 2x2 Gauss quadrature, which is exact for the
//! polynomial integrands appearing here. Assembly works on a [`LocalGrid`]
//! so the same kernels serve whole-domain solves and oversampled regions.

use crate::grid::{FineGrid, LocalGrid};
use crate::media::{ConductivityField, ContinuumMap, SourceField};
use crate::sparsela::{solve_spd, SparseRow, SparseSym};
use crate::{axis_coord, Result};

/// 2x2 Gauss points on the reference square [-1,1]^2, unit weights.
const GPTS: [f64; 2] = [-0.577_350_269_189_625_76, 0.577_350_269_189_625_76];

/// Reference shape functions, CCW from the (-1,-1) corner.
#[inline]
fn shape(xi: f64, eta: f64) -> [f64; 4] {
    [
        0.25 * (1.0 - xi) * (1.0 - eta),
        0.25 * (1.0 + xi) * (1.0 - eta),
        0.25 * (1.0 + xi) * (1.0 + eta),
        0.25 * (1.0 - xi) * (1.0 + eta),
    ]
}

#[inline]
fn shape_grad(xi: f64, eta: f64) -> [(f64, f64); 4] {
    [
        (-0.25 * (1.0 - eta), -0.25 * (1.0 - xi)),
        (0.25 * (1.0 - eta), -0.25 * (1.0 + xi)),
        (0.25 * (1.0 + eta), 0.25 * (1.0 + xi)),
        (-0.25 * (1.0 + eta), 0.25 * (1.0 - xi)),
    ]
}

/// Element stiffness for unit conductivity on a square; independent of the
/// side length in 2D.
pub fn element_stiffness_unit() -> [[f64; 4]; 4] {
    let mut ke = [[0.0; 4]; 4];
    for &xi in &GPTS {
        for &eta in &GPTS {
            let g = shape_grad(xi, eta);
            // physical gradient (2/h) * ref gradient, jacobian h^2/4: h cancels
            for a in 0..4 {
                for b in 0..4 {
                    ke[a][b] += g[a].0 * g[b].0 + g[a].1 * g[b].1;
                }
            }
        }
    }
    ke
}

/// Element mass for a square of side `h`: `h^2/36 * [[4,2,1,2],...]`.
pub fn element_mass(h: f64) -> [[f64; 4]; 4] {
    let mut me = [[0.0; 4]; 4];
    let jac = h * h / 4.0;
    for &xi in &GPTS {
        for &eta in &GPTS {
            let n = shape(xi, eta);
            for a in 0..4 {
                for b in 0..4 {
                    me[a][b] += jac * n[a] * n[b];
                }
            }
        }
    }
    me
}

/// Conductivity-weighted stiffness triplets over a local grid; conductivity
/// is piecewise constant per fine cell, indexed local row-major.
pub fn stiffness_triplets(local: &LocalGrid, kappa_local: &[f64]) -> Vec<(usize, usize, f64)> {
    let ke = element_stiffness_unit();
    let mut t = Vec::with_capacity(local.cell_count() * 16);
    for cy in 0..local.ncells.1 {
        for cx in 0..local.ncells.0 {
            let k = kappa_local[local.cell(cx, cy)];
            let nodes = local.cell_nodes(cx, cy);
            for a in 0..4 {
                for b in 0..4 {
                    t.push((nodes[a], nodes[b], k * ke[a][b]));
                }
            }
        }
    }
    t
}

/// `kappa`-weighted mass triplets (`int kappa u v`).
pub fn weighted_mass_triplets(local: &LocalGrid, kappa_local: &[f64]) -> Vec<(usize, usize, f64)> {
    let me = element_mass(local.h);
    let mut t = Vec::with_capacity(local.cell_count() * 16);
    for cy in 0..local.ncells.1 {
        for cx in 0..local.ncells.0 {
            let k = kappa_local[local.cell(cx, cy)];
            let nodes = local.cell_nodes(cx, cy);
            for a in 0..4 {
                for b in 0..4 {
                    t.push((nodes[a], nodes[b], k * me[a][b]));
                }
            }
        }
    }
    t
}

/// Nodal load vector from a piecewise-constant source per local cell: each
/// cell contributes `f_c h^2/4` to each of its four nodes.
pub fn load_vector(local: &LocalGrid, f_local: &[f64]) -> Vec<f64> {
    let mut b = vec![0.0; local.node_count()];
    let w = local.h * local.h / 4.0;
    for cy in 0..local.ncells.1 {
        for cx in 0..local.ncells.0 {
            let fc = f_local[local.cell(cx, cy)] * w;
            for node in local.cell_nodes(cx, cy) {
                b[node] += fc;
            }
        }
    }
    b
}

/// Linear functional `v -> int_{cells} v` over a local-cell subset.
pub fn indicator_functional(local: &LocalGrid, cells: &[(usize, usize)]) -> SparseRow {
    let mut acc = vec![0.0; local.node_count()];
    let w = local.h * local.h / 4.0;
    for &(cx, cy) in cells {
        for node in local.cell_nodes(cx, cy) {
            acc[node] += w;
        }
    }
    compress(acc)
}

/// Linear functional `v -> int_{cells} (x_m - c) v` where `x_m` is the
/// region-local coordinate along `axis`, exact by 2x2 Gauss (Q1 times
/// linear is biquadratic).
pub fn moment_functional(
    local: &LocalGrid,
    cells: &[(usize, usize)],
    axis: usize,
    center: f64,
) -> SparseRow {
    let mut acc = vec![0.0; local.node_count()];
    let h = local.h;
    let jac = h * h / 4.0;
    for &(cx, cy) in cells {
        let x0 = cx as f64 * h;
        let y0 = cy as f64 * h;
        let nodes = local.cell_nodes(cx, cy);
        for &xi in &GPTS {
            for &eta in &GPTS {
                let n = shape(xi, eta);
                let x = x0 + 0.5 * h * (1.0 + xi);
                let y = y0 + 0.5 * h * (1.0 + eta);
                let coord = axis_coord(axis, x, y) - center;
                for a in 0..4 {
                    acc[nodes[a]] += jac * coord * n[a];
                }
            }
        }
    }
    compress(acc)
}

/// Linear functional `v -> int_{cells} d v / d x_axis`. For Q1 on a square
/// cell each node contributes +-h/2 depending on its side.
pub fn gradient_functional(local: &LocalGrid, cells: &[(usize, usize)], axis: usize) -> SparseRow {
    let mut acc = vec![0.0; local.node_count()];
    let s = local.h / 2.0;
    // CCW from lower-left: signs of int d/dx and int d/dy per node
    const SX: [f64; 4] = [-1.0, 1.0, 1.0, -1.0];
    const SY: [f64; 4] = [-1.0, -1.0, 1.0, 1.0];
    for &(cx, cy) in cells {
        let nodes = local.cell_nodes(cx, cy);
        for a in 0..4 {
            acc[nodes[a]] += s * crate::grad_component(axis, SX[a], SY[a]);
        }
    }
    compress(acc)
}

/// Exact integral of the region-local coordinate along `axis` over a cell
/// subset (cell centers times cell area, exact for a linear integrand).
pub fn coordinate_integral(local: &LocalGrid, cells: &[(usize, usize)], axis: usize) -> f64 {
    let area = local.h * local.h;
    cells
        .iter()
        .map(|&(cx, cy)| {
            let (x, y) = local.cell_center(cx, cy);
            axis_coord(axis, x, y) * area
        })
        .sum()
}

/// Integral of a Q1 nodal field over a cell subset.
pub fn integrate_field(local: &LocalGrid, cells: &[(usize, usize)], v: &[f64]) -> f64 {
    let w = local.h * local.h / 4.0;
    cells
        .iter()
        .map(|&(cx, cy)| local.cell_nodes(cx, cy).iter().map(|&n| v[n]).sum::<f64>() * w)
        .sum()
}

/// `int_{cells} kappa grad(u) . grad(v)` for two Q1 fields.
pub fn energy_product(
    local: &LocalGrid,
    cells: &[(usize, usize)],
    kappa_local: &[f64],
    u: &[f64],
    v: &[f64],
) -> f64 {
    let ke = element_stiffness_unit();
    let mut s = 0.0;
    for &(cx, cy) in cells {
        let k = kappa_local[local.cell(cx, cy)];
        let nodes = local.cell_nodes(cx, cy);
        for a in 0..4 {
            for b in 0..4 {
                s += k * ke[a][b] * u[nodes[a]] * v[nodes[b]];
            }
        }
    }
    s
}

/// `int_{cells} f u` for piecewise-constant `f` and Q1 `u`.
pub fn source_product(
    local: &LocalGrid,
    cells: &[(usize, usize)],
    f_local: &[f64],
    u: &[f64],
) -> f64 {
    let w = local.h * local.h / 4.0;
    cells
        .iter()
        .map(|&(cx, cy)| {
            f_local[local.cell(cx, cy)]
                * local.cell_nodes(cx, cy).iter().map(|&n| u[n]).sum::<f64>()
                * w
        })
        .sum()
}

fn compress(acc: Vec<f64>) -> SparseRow {
    let mut idx = Vec::new();
    let mut val = Vec::new();
    for (i, v) in acc.into_iter().enumerate() {
        if v != 0.0 {
            idx.push(i);
            val.push(v);
        }
    }
    SparseRow { idx, val }
}

/// Nodes on the boundary of the unit square for a whole-domain grid.
pub fn boundary_nodes(fine: &FineGrid) -> Vec<usize> {
    let n = fine.nx + 1;
    let mut out = Vec::with_capacity(4 * fine.nx);
    for iy in 0..n {
        for ix in 0..n {
            if ix == 0 || iy == 0 || ix == n - 1 || iy == n - 1 {
                out.push(iy * n + ix);
            }
        }
    }
    out
}

/// Eliminates homogeneous Dirichlet nodes from triplets by dropping entries
/// touching constrained nodes and pinning their diagonals to one.
pub fn apply_dirichlet(
    triplets: &mut Vec<(usize, usize, f64)>,
    b: &mut [f64],
    constrained: &[usize],
) {
    let n = b.len();
    let mut mask = vec![false; n];
    for &i in constrained {
        mask[i] = true;
        b[i] = 0.0;
    }
    triplets.retain(|&(i, j, _)| !mask[i] && !mask[j]);
    for &i in constrained {
        triplets.push((i, i, 1.0));
    }
}

/// Fine-scale reference field with its grid metadata.
#[derive(Debug, Clone)]
pub struct FineSolution {
    pub fine: FineGrid,
    /// Nodal values, row-major, (nx+1)^2.
    pub u: Vec<f64>,
}

/// Solves `-div(kappa grad u) = f` on the unit square with homogeneous
/// Dirichlet boundary at fine resolution.
pub fn solve_fine_reference(
    fine: &FineGrid,
    kappa: &ConductivityField,
    f: &SourceField,
) -> Result<FineSolution> {
    let local = LocalGrid::whole(fine);
    let mut t = stiffness_triplets(&local, &kappa.values);
    let mut b = load_vector(&local, &f.values);
    apply_dirichlet(&mut t, &mut b, &boundary_nodes(fine));
    let a = SparseSym::from_triplets(local.node_count(), t)?;
    let u = solve_spd(&a, &b, 1e-10)?;
    Ok(FineSolution { fine: *fine, u })
}

/// Per-continuum local averages of a fine nodal field over every coarse
/// cell: `int_{omega_i} u / |omega_i|`, zero where a continuum is absent.
/// Returned as `n` row-major coarse-cell grids.
pub fn continuum_cell_averages(
    fine: &FineGrid,
    coarse_m: usize,
    cont: &ContinuumMap,
    u: &[f64],
) -> Vec<Vec<f64>> {
    let local = LocalGrid::whole(fine);
    let cpc = fine.nx / coarse_m;
    let cell_area = fine.h() * fine.h();
    let mut out = vec![vec![0.0; coarse_m * coarse_m]; cont.n];
    for oy in 0..coarse_m {
        for ox in 0..coarse_m {
            let mut vol = vec![0.0; cont.n];
            let mut acc = vec![0.0; cont.n];
            for ly in 0..cpc {
                for lx in 0..cpc {
                    let cx = ox * cpc + lx;
                    let cy = oy * cpc + ly;
                    let lab = cont.labels[cy * fine.nx + cx] as usize;
                    let cell_int = local
                        .cell_nodes(cx, cy)
                        .iter()
                        .map(|&n| u[n])
                        .sum::<f64>()
                        * (cell_area / 4.0);
                    acc[lab] += cell_int;
                    vol[lab] += cell_area;
                }
            }
            for i in 0..cont.n {
                if vol[i] > 0.0 {
                    out[i][oy * coarse_m + ox] = acc[i] / vol[i];
                }
            }
        }
    }
    out
}
