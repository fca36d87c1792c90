//! Continuum identification through the conductivity-weighted eigenproblem.
//!
//! On an RVE, the generalized eigenproblem "stiffness vs kappa-weighted
//! mass" with natural boundary conditions separates high-contrast media:
//! eigenvectors of the smallest eigenvalues are near-constant on each
//! high-conductivity component, and the count of small eigenvalues equals
//! the number of continua. Cells are then clustered by their small-
//! eigenvector values.

use crate::grid::LocalGrid;
use crate::media::ContinuumMap;
use crate::sparsela::{smallest_eigpairs, SparseSym};
use crate::{fem, Error, Result};

/// Eigenpairs of one RVE plus gap diagnostics.
#[derive(Debug, Clone)]
pub struct SpectralReport {
    /// Ascending; tiny negative round-off clamped to zero.
    pub eigenvalues: Vec<f64>,
    /// Nodal fields on the RVE grid, B-orthonormal.
    pub eigenvectors: Vec<Vec<f64>>,
    /// Number of "small" eigenvalues if a gap was detected: the largest
    /// index `k` whose ratio `lambda_k/lambda_{k-1}` reaches the threshold.
    /// Taking the largest qualifying index (rather than the largest ratio)
    /// keeps the always-present ratio across the constant kernel from
    /// shadowing a genuine contrast-driven gap higher up.
    pub gap: Option<usize>,
    /// The ratio at the detected gap.
    pub gap_ratio: f64,
}

/// Default ratio declaring a spectral gap.
pub const GAP_THRESHOLD: f64 = 100.0;

/// Computes the `m` smallest eigenpairs of the RVE pencil and runs gap
/// detection with the given threshold.
pub fn spectral_decompose(
    local: &LocalGrid,
    kappa_local: &[f64],
    m: usize,
    threshold: f64,
) -> Result<SpectralReport> {
    if m < 2 {
        return Err(Error::Config(format!(
            "spectral decomposition needs at least 2 eigenpairs, got {m}"
        )));
    }
    let nn = local.node_count();
    let a = SparseSym::from_triplets(nn, fem::stiffness_triplets(local, kappa_local))?;
    let b = SparseSym::from_triplets(nn, fem::weighted_mass_triplets(local, kappa_local))?;
    let pairs = smallest_eigpairs(&a, &b, m, 1e-10)?;
    let lmax = pairs.last().map(|p| p.value.abs()).unwrap_or(0.0);
    let eigenvalues: Vec<f64> = pairs
        .iter()
        .map(|p| {
            // semidefinite pencil: clamp round-off negatives
            if p.value < 0.0 && p.value.abs() < 1e-8 * lmax.max(1e-300) {
                0.0
            } else {
                p.value
            }
        })
        .collect();
    let eigenvectors = pairs.into_iter().map(|p| p.vector).collect();
    // gap: largest k whose consecutive ratio clears the threshold, with
    // zero eigenvalues floored so the kernel still registers as a gap
    let floor = 1e-12 * lmax.max(1e-300);
    let mut gap = None;
    let mut gap_ratio = 0.0;
    for k in 1..m {
        let r = eigenvalues[k] / eigenvalues[k - 1].max(floor);
        if r >= threshold {
            gap_ratio = r;
            gap = Some(k);
        } else if gap.is_none() && r > gap_ratio {
            gap_ratio = r; // best ratio seen, for diagnostics
        }
    }
    Ok(SpectralReport {
        eigenvalues,
        eigenvectors,
        gap,
        gap_ratio,
    })
}

/// Clusters the RVE's fine cells into continua from the small eigenvectors.
///
/// Cells where every small eigenvector is locally near-constant and the
/// conductivity is high form the channel continua (one per distinct plateau
/// value combination, up to the gap count); remaining cells form the
/// background continuum. Continua are ordered by ascending mean
/// conductivity, so the background comes first.
pub fn identify_continua(
    report: &SpectralReport,
    local: &LocalGrid,
    kappa_local: &[f64],
) -> Result<ContinuumMap> {
    let k = report.gap.ok_or_else(|| {
        Error::NoSpectralGap(format!(
            "no multicontinuum structure: best eigenvalue ratio {:.3e} below threshold",
            report.gap_ratio
        ))
    })?;
    let ncells = local.cell_count();
    // per-cell features: small-eigenvector means over the cell's nodes,
    // plus the within-cell oscillation for the plateau test
    let mut feats = vec![vec![0.0f64; k]; ncells];
    let mut plateau = vec![true; ncells];
    let ranges: Vec<f64> = report.eigenvectors[..k]
        .iter()
        .map(|ev| {
            let lo = ev.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = ev.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            hi - lo
        })
        .collect();
    for cy in 0..local.ncells.1 {
        for cx in 0..local.ncells.0 {
            let c = local.cell(cx, cy);
            let nodes = local.cell_nodes(cx, cy);
            for (d, ev) in report.eigenvectors[..k].iter().enumerate() {
                let vals = nodes.map(|n| ev[n]);
                feats[c][d] = vals.iter().sum::<f64>() / 4.0;
                let osc = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                    - vals.iter().cloned().fold(f64::INFINITY, f64::min);
                if osc > 0.05 * ranges[d] + 1e-12 {
                    plateau[c] = false;
                }
            }
        }
    }
    // high-conductivity test against the geometric midpoint of the range
    let kmin = kappa_local.iter().cloned().fold(f64::INFINITY, f64::min);
    let kmax = kappa_local.iter().cloned().fold(0.0f64, f64::max);
    let contrasted = kmin > 0.0 && kmax / kmin > 10.0;
    let kmid = (kmin * kmax).sqrt();
    let channel: Vec<bool> = (0..ncells)
        .map(|c| plateau[c] && (!contrasted || kappa_local[c] >= kmid))
        .collect();
    let labels: Vec<usize> = if channel.iter().all(|&b| b) {
        // no background: cluster everything into the gap count directly
        kmeans_deterministic(&feats, k)
    } else {
        // channel cells cluster into up to `k` continua; the rest is the
        // background continuum with the highest cluster index for now
        let idx: Vec<usize> = (0..ncells).filter(|&c| channel[c]).collect();
        if idx.is_empty() {
            return Err(Error::NoSpectralGap(
                "no near-constant high-conductivity cells found".into(),
            ));
        }
        let sub: Vec<Vec<f64>> = idx.iter().map(|&c| feats[c].clone()).collect();
        let sub_labels = kmeans_deterministic(&sub, k.min(idx.len()));
        let mut labels = vec![usize::MAX; ncells];
        for (c, l) in idx.into_iter().zip(sub_labels) {
            labels[c] = l;
        }
        for l in labels.iter_mut() {
            if *l == usize::MAX {
                *l = k; // background
            }
        }
        labels
    };
    // drop empty clusters, then order by ascending mean conductivity so
    // the background (low) continuum comes first, matching the generators
    let nmax = k + 1;
    let mut ksum = vec![0.0; nmax];
    let mut kcount = vec![0usize; nmax];
    for (c, &l) in labels.iter().enumerate() {
        ksum[l] += kappa_local[c];
        kcount[l] += 1;
    }
    let mut order: Vec<usize> = (0..nmax).filter(|&l| kcount[l] > 0).collect();
    order.sort_by(|&a, &b| {
        let ma = ksum[a] / kcount[a] as f64;
        let mb = ksum[b] / kcount[b] as f64;
        ma.total_cmp(&mb)
    });
    let n = order.len();
    let mut rank = vec![0u8; nmax];
    for (r, &cl) in order.iter().enumerate() {
        rank[cl] = r as u8;
    }
    let relabeled: Vec<u8> = labels.iter().map(|&l| rank[l]).collect();
    ContinuumMap::new(n, relabeled)
}

/// Plain Lloyd iteration with farthest-point initialization; fully
/// deterministic (ties broken by lowest index).
fn kmeans_deterministic(feats: &[Vec<f64>], k: usize) -> Vec<usize> {
    let n = feats.len();
    let dim = feats[0].len();
    let dist2 = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    };
    // farthest-point seeding from the feature of largest norm
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    let first = (0..n)
        .max_by(|&a, &b| {
            let na: f64 = feats[a].iter().map(|v| v * v).sum();
            let nb: f64 = feats[b].iter().map(|v| v * v).sum();
            na.total_cmp(&nb).then(b.cmp(&a))
        })
        .unwrap();
    centers.push(feats[first].clone());
    while centers.len() < k {
        let far = (0..n)
            .max_by(|&a, &b| {
                let da = centers.iter().map(|c| dist2(&feats[a], c)).fold(f64::INFINITY, f64::min);
                let db = centers.iter().map(|c| dist2(&feats[b], c)).fold(f64::INFINITY, f64::min);
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .unwrap();
        centers.push(feats[far].clone());
    }
    let mut labels = vec![0usize; n];
    for _ in 0..200 {
        let mut changed = false;
        for (i, f) in feats.iter().enumerate() {
            let best = (0..k)
                .min_by(|&a, &b| dist2(f, &centers[a]).total_cmp(&dist2(f, &centers[b])).then(a.cmp(&b)))
                .unwrap();
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, f) in feats.iter().enumerate() {
            counts[labels[i]] += 1;
            for d in 0..dim {
                sums[labels[i]][d] += f[d];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for d in 0..dim {
                    centers[c][d] = sums[c][d] / counts[c] as f64;
                }
            }
        }
    }
    labels
}
