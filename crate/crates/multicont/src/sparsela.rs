//! Sparse symmetric linear algebra: SPD solves, equality-constrained
//! saddle-point systems, and smallest generalized eigenpairs.
//!
//! Saddle systems `[[A, C^T], [C, 0]]` are solved by a Schur-complement
//! (range-space) method: the semidefinite block is made definite by a
//! rank-one pin written as an extra bordered unknown, so the factorization
//! solves the original system exactly. The pinned block is factored once
//! with a sparse Cholesky and reused across right-hand sides, which is what
//! makes the many cell problems per factorization cheap.

use crate::{Error, Result};
use faer::linalg::solvers::Solve;
use faer::linalg::triangular_solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Par, Side};

/// Symmetric sparse matrix (full storage) with its assembly triplets kept
/// for cheap re-assembly with modifications.
pub struct SparseSym {
    pub n: usize,
    mat: SparseColMat<usize, f64>,
    triplets: Vec<(usize, usize, f64)>,
}

impl SparseSym {
    /// Builds from triplets; duplicate entries are summed.
    pub fn from_triplets(n: usize, triplets: Vec<(usize, usize, f64)>) -> Result<Self> {
        let entries: Vec<Triplet<usize, usize, f64>> = triplets
            .iter()
            .map(|&(i, j, v)| Triplet::new(i, j, v))
            .collect();
        let mat = SparseColMat::try_new_from_triplets(n, n, &entries)
            .map_err(|e| Error::Solver(format!("sparse assembly failed: {e:?}")))?;
        Ok(SparseSym { n, mat, triplets })
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![0.0; self.n];
        let sym = self.mat.symbolic();
        let val = self.mat.val();
        for j in 0..self.n {
            let range = sym.col_range(j);
            let rows = &sym.row_idx()[range.clone()];
            let vals = &val[range];
            let xj = x[j];
            for (&i, &v) in rows.iter().zip(vals) {
                y[i] += v * xj;
            }
        }
        y
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let mut d = Mat::zeros(self.n, self.n);
        let sym = self.mat.symbolic();
        let val = self.mat.val();
        for j in 0..self.n {
            let range = sym.col_range(j);
            for (&i, &v) in sym.row_idx()[range.clone()].iter().zip(&val[range]) {
                d[(i, j)] += v;
            }
        }
        d
    }

    pub fn mean_abs_diag(&self) -> f64 {
        let mut s = 0.0;
        let sym = self.mat.symbolic();
        let val = self.mat.val();
        for j in 0..self.n {
            let range = sym.col_range(j);
            for (&i, &v) in sym.row_idx()[range.clone()].iter().zip(&val[range]) {
                if i == j {
                    s += v.abs();
                }
            }
        }
        s / self.n as f64
    }

    fn cholesky(&self) -> Result<faer::sparse::linalg::solvers::Llt<usize, f64>> {
        self.mat
            .sp_cholesky(Side::Lower)
            .map_err(|e| Error::Solver(format!("sparse Cholesky failed: {e:?}")))
    }

    /// Copy with `value` added to diagonal entry `idx`.
    fn with_diag_bump(&self, idx: usize, value: f64) -> Result<SparseSym> {
        let mut t = self.triplets.clone();
        t.push((idx, idx, value));
        SparseSym::from_triplets(self.n, t)
    }
}

/// Sparse row functional: a linear form over nodal vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRow {
    pub idx: Vec<usize>,
    pub val: Vec<f64>,
}

impl SparseRow {
    pub fn dot(&self, x: &[f64]) -> f64 {
        self.idx.iter().zip(&self.val).map(|(&i, &v)| v * x[i]).sum()
    }

    pub fn norm(&self) -> f64 {
        self.val.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Adds `scale * row` into a dense vector.
    pub fn axpy_into(&self, scale: f64, out: &mut [f64]) {
        for (&i, &v) in self.idx.iter().zip(&self.val) {
            out[i] += scale * v;
        }
    }
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn col_to_vec(m: &Mat<f64>, j: usize) -> Vec<f64> {
    (0..m.nrows()).map(|i| m[(i, j)]).collect()
}

/// Solves a symmetric positive definite system with a residual guarantee.
pub fn solve_spd(a: &SparseSym, b: &[f64], tol: f64) -> Result<Vec<f64>> {
    let llt = a.cholesky()?;
    let mut rhs = Mat::zeros(a.n, 1);
    for i in 0..a.n {
        rhs[(i, 0)] = b[i];
    }
    let mut x = col_to_vec(&llt.solve(&rhs), 0);
    let bnorm = norm2(b).max(f64::MIN_POSITIVE);
    // a couple of iterative refinement sweeps for high-contrast matrices
    for _ in 0..3 {
        let ax = a.matvec(&x);
        let mut rvec = Mat::zeros(a.n, 1);
        let mut rnorm = 0.0f64;
        for i in 0..a.n {
            let r = b[i] - ax[i];
            rvec[(i, 0)] = r;
            rnorm += r * r;
        }
        if rnorm.sqrt() <= tol * bnorm {
            return Ok(x);
        }
        let dx = llt.solve(&rvec);
        for i in 0..a.n {
            x[i] += dx[(i, 0)];
        }
    }
    let res = {
        let ax = a.matvec(&x);
        norm2(&ax.iter().zip(b).map(|(y, b)| b - y).collect::<Vec<_>>())
    };
    if res <= tol * bnorm {
        Ok(x)
    } else {
        Err(Error::Solver(format!(
            "SPD solve did not reach tolerance: residual {res:.3e} vs {:.3e}",
            tol * bnorm
        )))
    }
}

/// Factored saddle-point system `[[A, C^T], [C, 0]]` for a symmetric
/// positive semidefinite `A` whose kernel is removed by the constraints.
pub struct SaddleSolver {
    pub n: usize,
    pub k: usize,
    a: SparseSym,
    rows: Vec<SparseRow>,
    llt: faer::sparse::linalg::solvers::Llt<usize, f64>,
    pin_idx: usize,
    pin: f64,
    schur_lu: faer::linalg::solvers::PartialPivLu<f64>,
}

impl SaddleSolver {
    pub fn new(a: SparseSym, rows: Vec<SparseRow>) -> Result<Self> {
        let n = a.n;
        let k = rows.len();
        if k > n {
            return Err(Error::Solver(format!("more constraints ({k}) than unknowns ({n})")));
        }
        for (r, row) in rows.iter().enumerate() {
            if row.idx.is_empty() || row.norm() == 0.0 {
                return Err(Error::DegenerateConstraint {
                    row: r,
                    reason: "constraint row is identically zero".into(),
                });
            }
        }
        // duplicate rows make C rank deficient; catch the common case early
        {
            use std::collections::HashMap;
            let mut seen: HashMap<Vec<(usize, u64)>, usize> = HashMap::new();
            for (r, row) in rows.iter().enumerate() {
                let key: Vec<(usize, u64)> =
                    row.idx.iter().zip(&row.val).map(|(&i, &v)| (i, v.to_bits())).collect();
                if let Some(&first) = seen.get(&key) {
                    return Err(Error::DegenerateConstraint {
                        row: r,
                        reason: format!("duplicate of constraint row {first}"),
                    });
                }
                seen.insert(key, r);
            }
        }

        let pin_idx = 0;
        let pin = a.mean_abs_diag().max(f64::MIN_POSITIVE);
        let pinned = a.with_diag_bump(pin_idx, pin)?;
        let llt = pinned.cholesky()?;

        // border W = [C^T, -pin * e], Schur S = D - W^T A_pin^{-1} W with
        // D zero except D[k][k] = pin
        let kb = k + 1;
        let mut schur = Mat::<f64>::zeros(kb, kb);
        schur[(k, k)] = pin;
        let chunk = 64;
        let mut j0 = 0;
        while j0 < kb {
            let j1 = (j0 + chunk).min(kb);
            let mut w = Mat::<f64>::zeros(n, j1 - j0);
            for j in j0..j1 {
                if j < k {
                    for (&i, &v) in rows[j].idx.iter().zip(&rows[j].val) {
                        w[(i, j - j0)] = v;
                    }
                } else {
                    w[(pin_idx, j - j0)] = -pin;
                }
            }
            let x = llt.solve(&w);
            for j in j0..j1 {
                let xcol = col_to_vec(&x, j - j0);
                for i in 0..kb {
                    let dot = if i < k {
                        rows[i].dot(&xcol)
                    } else {
                        -pin * xcol[pin_idx]
                    };
                    schur[(i, j)] -= dot;
                }
            }
            j0 = j1;
        }
        let schur_lu = schur.partial_piv_lu();
        Ok(SaddleSolver {
            n,
            k,
            a,
            rows,
            llt,
            pin_idx,
            pin,
            schur_lu,
        })
    }

    /// One inner sweep of the bordered Schur solve; exact up to the
    /// accuracy of the inner factorizations.
    fn sweep(&self, b: &[f64], g: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.n;
        let k = self.k;
        let mut bm = Mat::zeros(n, 1);
        for i in 0..n {
            bm[(i, 0)] = b[i];
        }
        let u = self.llt.solve(&bm);
        let mut rhs_y = Mat::<f64>::zeros(k + 1, 1);
        for i in 0..k {
            let ucol = col_to_vec(&u, 0);
            rhs_y[(i, 0)] = g[i] - self.rows[i].dot(&ucol);
        }
        rhs_y[(k, 0)] = -(-self.pin * u[(self.pin_idx, 0)]);
        let y = self.schur_lu.solve(&rhs_y);
        // x = u - A_pin^{-1} (W y)
        let mut wy = Mat::<f64>::zeros(n, 1);
        for i in 0..k {
            for (&r, &v) in self.rows[i].idx.iter().zip(&self.rows[i].val) {
                wy[(r, 0)] += v * y[(i, 0)];
            }
        }
        wy[(self.pin_idx, 0)] += -self.pin * y[(k, 0)];
        let corr = self.llt.solve(&wy);
        let x: Vec<f64> = (0..n).map(|i| u[(i, 0)] - corr[(i, 0)]).collect();
        let lam: Vec<f64> = (0..k).map(|i| y[(i, 0)]).collect();
        (x, lam)
    }

    /// Solves `A x + C^T lam = b`, `C x = g` to relative residual `tol`.
    pub fn solve(&self, b: &[f64], g: &[f64], tol: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        assert_eq!(b.len(), self.n);
        assert_eq!(g.len(), self.k);
        let (mut x, mut lam) = self.sweep(b, g);
        let scale = norm2(b).max(norm2(g)).max(1e-300);
        for _ in 0..4 {
            let (rb, rg, res) = self.residual(&x, &lam, b, g);
            if res <= tol * scale {
                return Ok((x, lam));
            }
            let (dx, dl) = self.sweep(&rb, &rg);
            for i in 0..self.n {
                x[i] += dx[i];
            }
            for i in 0..self.k {
                lam[i] += dl[i];
            }
        }
        let (_, _, res) = self.residual(&x, &lam, b, g);
        if res <= tol * scale {
            Ok((x, lam))
        } else {
            Err(Error::Solver(format!(
                "saddle solve stalled: residual {res:.3e} vs tolerance {:.3e} (n={}, k={})",
                tol * scale,
                self.n,
                self.k
            )))
        }
    }

    /// Residuals of the full KKT system: primal `b - A x - C^T lam` and
    /// constraint `g - C x`, plus their joint 2-norm.
    fn residual(&self, x: &[f64], lam: &[f64], b: &[f64], g: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
        let mut rb = self.a.matvec(x);
        for i in 0..self.n {
            rb[i] = b[i] - rb[i];
        }
        for (row, &l) in self.rows.iter().zip(lam) {
            row.axpy_into(-l, &mut rb);
        }
        let rg: Vec<f64> = self
            .rows
            .iter()
            .zip(g)
            .map(|(row, &gi)| gi - row.dot(x))
            .collect();
        let res = (norm2(&rb).powi(2) + norm2(&rg).powi(2)).sqrt();
        (rb, rg, res)
    }
}

/// One-shot saddle solve.
pub fn solve_saddle(
    a: SparseSym,
    rows: Vec<SparseRow>,
    b: &[f64],
    g: &[f64],
    tol: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    SaddleSolver::new(a, rows)?.solve(b, g, tol)
}

/// A generalized eigenpair, `A eta = lambda B eta`.
#[derive(Debug, Clone)]
pub struct EigPair {
    pub value: f64,
    pub vector: Vec<f64>,
}

/// Dimension threshold below which the dense path is used.
const DENSE_EIG_LIMIT: usize = 3000;

/// Computes the `m` smallest eigenpairs of the symmetric-definite pencil
/// `(A, B)`: `A` positive semidefinite, `B` positive definite. Returned
/// pairs are ascending and B-orthonormal.
pub fn smallest_eigpairs(a: &SparseSym, b: &SparseSym, m: usize, tol: f64) -> Result<Vec<EigPair>> {
    let n = a.n;
    if b.n != n {
        return Err(Error::Eigen("dimension mismatch between A and B".into()));
    }
    if m == 0 || m > n {
        return Err(Error::Eigen(format!("requested {m} eigenpairs of a {n}-dim pencil")));
    }
    if n <= DENSE_EIG_LIMIT {
        dense_eigpairs(a, b, m)
    } else {
        subspace_eigpairs(a, b, m, tol)
    }
}

fn dense_eigpairs(a: &SparseSym, b: &SparseSym, m: usize) -> Result<Vec<EigPair>> {
    let n = a.n;
    let ad = a.to_dense();
    let bd = b.to_dense();
    let chol = bd
        .llt(Side::Lower)
        .map_err(|e| Error::Eigen(format!("B is not positive definite: {e:?}")))?;
    let l = chol.L().to_owned();
    // form L^-1 A L^-T
    let mut c = ad;
    triangular_solve::solve_lower_triangular_in_place(l.as_ref(), c.as_mut(), Par::Seq);
    let mut ct = c.transpose().to_owned();
    triangular_solve::solve_lower_triangular_in_place(l.as_ref(), ct.as_mut(), Par::Seq);
    // symmetrize to keep the eigensolver honest about roundoff
    let mut s = Mat::<f64>::zeros(n, n);
    for j in 0..n {
        for i in 0..n {
            s[(i, j)] = 0.5 * (ct[(i, j)] + ct[(j, i)]);
        }
    }
    let eig = s
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Eigen(format!("dense eigensolver failed: {e:?}")))?;
    let evals = eig.S();
    let evecs = eig.U();
    // faer returns ascending eigenvalues
    let mut out = Vec::with_capacity(m);
    for j in 0..m {
        let mut q = Mat::<f64>::zeros(n, 1);
        for i in 0..n {
            q[(i, 0)] = evecs[(i, j)];
        }
        triangular_solve::solve_upper_triangular_in_place(
            l.transpose(),
            q.as_mut(),
            Par::Seq,
        );
        out.push(EigPair {
            value: evals[j],
            vector: col_to_vec(&q, 0),
        });
    }
    Ok(out)
}

fn subspace_eigpairs(a: &SparseSym, b: &SparseSym, m: usize, tol: f64) -> Result<Vec<EigPair>> {
    use rand::{Rng, SeedableRng};
    let n = a.n;
    let s = (m + m.max(4)).min(n);
    // small B-shift regularizes the semidefinite A without changing
    // eigenvectors; Rayleigh-Ritz below reports unshifted eigenvalues
    let sigma = 1e-8 * a.mean_abs_diag().max(1e-300) / b.mean_abs_diag().max(1e-300);
    let shifted = {
        let mut t = a.triplets.clone();
        for &(i, j, v) in &b.triplets {
            t.push((i, j, sigma * v));
        }
        SparseSym::from_triplets(n, t)?
    };
    let llt = shifted.cholesky()?;
    let bllt = b.cholesky()?;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed_cafe);
    let mut basis: Vec<Vec<f64>> = (0..s)
        .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();

    let scale = a.mean_abs_diag() / b.mean_abs_diag().max(1e-300);
    let max_iter = 500;
    for _iter in 0..max_iter {
        // Y = (A + sigma B)^{-1} B X
        let mut w = Mat::<f64>::zeros(n, s);
        for (j, x) in basis.iter().enumerate() {
            let bx = b.matvec(x);
            for i in 0..n {
                w[(i, j)] = bx[i];
            }
        }
        let y = llt.solve(&w);
        let mut cols: Vec<Vec<f64>> = (0..s).map(|j| col_to_vec(&y, j)).collect();
        b_orthonormalize(&mut cols, b)?;

        // Rayleigh-Ritz on the original pencil
        let ay: Vec<Vec<f64>> = cols.iter().map(|c| a.matvec(c)).collect();
        let mut proj = Mat::<f64>::zeros(s, s);
        for i in 0..s {
            for j in 0..s {
                let v: f64 = cols[i].iter().zip(&ay[j]).map(|(a, b)| a * b).sum();
                proj[(i, j)] = v;
            }
        }
        for i in 0..s {
            for j in 0..i {
                let avg = 0.5 * (proj[(i, j)] + proj[(j, i)]);
                proj[(i, j)] = avg;
                proj[(j, i)] = avg;
            }
        }
        let eig = proj
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::Eigen(format!("projected eigensolver failed: {e:?}")))?;
        let mut rotated: Vec<Vec<f64>> = Vec::with_capacity(s);
        for j in 0..s {
            let mut v = vec![0.0; n];
            for i in 0..s {
                let c = eig.U()[(i, j)];
                for (vi, xi) in v.iter_mut().zip(&cols[i]) {
                    *vi += c * xi;
                }
            }
            rotated.push(v);
        }
        basis = rotated;

        // convergence: B^{-1}-norm of A x - lambda B x for the wanted pairs
        let mut converged = true;
        for j in 0..m {
            let lam = eig.S()[j];
            let x = &basis[j];
            let ax = a.matvec(x);
            let bx = b.matvec(x);
            let mut r = Mat::<f64>::zeros(n, 1);
            for i in 0..n {
                r[(i, 0)] = ax[i] - lam * bx[i];
            }
            let z = bllt.solve(&r);
            let rn: f64 = (0..n).map(|i| r[(i, 0)] * z[(i, 0)]).sum::<f64>().max(0.0).sqrt();
            if rn > tol * scale.max(lam.abs()) {
                converged = false;
                break;
            }
        }
        if converged {
            let mut out = Vec::with_capacity(m);
            for j in 0..m {
                let x = &basis[j];
                let ax = a.matvec(x);
                let lam: f64 = x.iter().zip(&ax).map(|(a, b)| a * b).sum();
                out.push(EigPair {
                    value: lam,
                    vector: x.clone(),
                });
            }
            out.sort_by(|p, q| p.value.total_cmp(&q.value));
            return Ok(out);
        }
    }
    Err(Error::Eigen(format!(
        "subspace iteration did not converge within {max_iter} iterations (n={n}, m={m})"
    )))
}

/// Modified Gram-Schmidt in the B inner product.
fn b_orthonormalize(cols: &mut [Vec<f64>], b: &SparseSym) -> Result<()> {
    let s = cols.len();
    for j in 0..s {
        for _pass in 0..2 {
            for i in 0..j {
                let bi = b.matvec(&cols[i]);
                let dot: f64 = cols[j].iter().zip(&bi).map(|(a, b)| a * b).sum();
                let (head, tail) = cols.split_at_mut(j);
                for (x, y) in tail[0].iter_mut().zip(&head[i]) {
                    *x -= dot * y;
                }
            }
        }
        let bj = b.matvec(&cols[j]);
        let nrm: f64 = cols[j].iter().zip(&bj).map(|(a, b)| a * b).sum::<f64>().sqrt();
        if !(nrm > 0.0) || !nrm.is_finite() {
            return Err(Error::Eigen("basis collapse during B-orthonormalization".into()));
        }
        for x in cols[j].iter_mut() {
            *x /= nrm;
        }
    }
    Ok(())
}
