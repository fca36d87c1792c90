//! Structured grids on the unit square and oversampled-region geometry.
//!
//! Fine and coarse grids are uniform quadrilateral meshes on [0,1]^2. An
//! oversampled region extends a target coarse cell by `l` layers of coarse
//! cells, clipped at the domain boundary. Cell problems are assembled on the
//! fine sub-grid covering the region.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Uniform fine grid with `nx` cells per side on the unit square.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FineGrid {
    pub nx: usize,
}

impl FineGrid {
    pub fn new(nx: usize) -> Result<Self> {
        if nx < 2 {
            return Err(Error::Grid(format!("nx must be at least 2, got {nx}")));
        }
        Ok(FineGrid { nx })
    }

    #[inline]
    pub fn h(&self) -> f64 {
        1.0 / self.nx as f64
    }

    #[inline]
    pub fn node_count(&self) -> usize {
        (self.nx + 1) * (self.nx + 1)
    }

    #[inline]
    pub fn cell_count(&self) -> usize {
        self.nx * self.nx
    }

    /// Row-major node index for node column `ix`, row `iy`.
    #[inline]
    pub fn node(&self, ix: usize, iy: usize) -> usize {
        debug_assert!(ix <= self.nx && iy <= self.nx);
        iy * (self.nx + 1) + ix
    }

    /// Row-major cell index for cell column `cx`, row `cy`.
    #[inline]
    pub fn cell(&self, cx: usize, cy: usize) -> usize {
        debug_assert!(cx < self.nx && cy < self.nx);
        cy * self.nx + cx
    }

    /// Center coordinates of a fine cell.
    #[inline]
    pub fn cell_center(&self, cx: usize, cy: usize) -> (f64, f64) {
        let h = self.h();
        ((cx as f64 + 0.5) * h, (cy as f64 + 0.5) * h)
    }
}

/// Coarse grid of `m` cells per side overlaid on a fine grid.
///
/// Every coarse cell owns an integer block of fine cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoarseGrid {
    pub fine: FineGrid,
    pub m: usize,
}

impl CoarseGrid {
    pub fn new(fine: FineGrid, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::Grid("coarse cell count must be positive".into()));
        }
        if fine.nx % m != 0 {
            return Err(Error::Grid(format!(
                "fine grid nx={} is not divisible by coarse cells per side M={}",
                fine.nx, m
            )));
        }
        Ok(CoarseGrid { fine, m })
    }

    #[inline]
    pub fn big_h(&self) -> f64 {
        1.0 / self.m as f64
    }

    /// Fine cells per coarse cell, per side.
    #[inline]
    pub fn cells_per_coarse(&self) -> usize {
        self.fine.nx / self.m
    }

    #[inline]
    pub fn cell_count(&self) -> usize {
        self.m * self.m
    }

    #[inline]
    pub fn node_count(&self) -> usize {
        (self.m + 1) * (self.m + 1)
    }

    #[inline]
    pub fn cell(&self, cx: usize, cy: usize) -> usize {
        debug_assert!(cx < self.m && cy < self.m);
        cy * self.m + cx
    }

    #[inline]
    pub fn node(&self, ix: usize, iy: usize) -> usize {
        iy * (self.m + 1) + ix
    }

    /// Global fine-cell indices contained in a coarse cell, row-major.
    pub fn fine_cells_of(&self, cx: usize, cy: usize) -> Vec<usize> {
        let k = self.cells_per_coarse();
        let mut out = Vec::with_capacity(k * k);
        for fy in cy * k..(cy + 1) * k {
            for fx in cx * k..(cx + 1) * k {
                out.push(self.fine.cell(fx, fy));
            }
        }
        out
    }
}

/// A target coarse cell extended by `layers` layers of coarse cells,
/// clipped to the unit square.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OversampleRegion {
    pub target: (usize, usize),
    pub layers: usize,
    /// Inclusive lower-left coarse-cell corner of the region.
    pub clo: (usize, usize),
    /// Exclusive upper-right coarse-cell corner of the region.
    pub chi: (usize, usize),
    /// Coarse cells of the region, row-major. Pairwise disjoint by
    /// construction; their union is the clipped rectangle.
    pub patches: Vec<(usize, usize)>,
    /// Index of the target patch within `patches`.
    pub p0: usize,
}

impl OversampleRegion {
    pub fn patch_count(&self) -> usize {
        self.patches.len()
    }

    /// Width and height of the region in coarse cells.
    pub fn extent(&self) -> (usize, usize) {
        (self.chi.0 - self.clo.0, self.chi.1 - self.clo.1)
    }
}

/// Builds the oversampled region around coarse cell `(cx, cy)`.
pub fn oversample(coarse: &CoarseGrid, cx: usize, cy: usize, layers: usize) -> Result<OversampleRegion> {
    if cx >= coarse.m || cy >= coarse.m {
        return Err(Error::Grid(format!(
            "coarse cell ({cx},{cy}) out of range for M={}",
            coarse.m
        )));
    }
    let x0 = cx.saturating_sub(layers);
    let y0 = cy.saturating_sub(layers);
    let x1 = (cx + layers + 1).min(coarse.m);
    let y1 = (cy + layers + 1).min(coarse.m);
    let mut patches = Vec::with_capacity((x1 - x0) * (y1 - y0));
    let mut p0 = 0;
    for py in y0..y1 {
        for px in x0..x1 {
            if (px, py) == (cx, cy) {
                p0 = patches.len();
            }
            patches.push((px, py));
        }
    }
    Ok(OversampleRegion {
        target: (cx, cy),
        layers,
        clo: (x0, y0),
        chi: (x1, y1),
        patches,
        p0,
    })
}

/// Default oversampling depth for coarse mesh size `big_h`: ceil(-2 ln H).
pub fn default_layers(big_h: f64) -> usize {
    assert!(big_h > 0.0 && big_h < 1.0, "H must be in (0,1)");
    (-2.0 * big_h.ln()).ceil() as usize
}

/// A rectangular sub-grid of fine cells covering an oversampled region.
///
/// Geometry is expressed in region-local coordinates (the lower-left corner
/// of the region sits at the origin), which makes cell problems on
/// translated copies of the same medium bit-identical.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalGrid {
    /// Global fine-cell offset of the region's lower-left corner.
    pub off: (usize, usize),
    /// Fine cells per side (x, y).
    pub ncells: (usize, usize),
    pub h: f64,
}

impl LocalGrid {
    pub fn from_region(coarse: &CoarseGrid, region: &OversampleRegion) -> Self {
        let k = coarse.cells_per_coarse();
        LocalGrid {
            off: (region.clo.0 * k, region.clo.1 * k),
            ncells: ((region.chi.0 - region.clo.0) * k, (region.chi.1 - region.clo.1) * k),
            h: coarse.fine.h(),
        }
    }

    /// Whole fine grid as a local grid (global and local coordinates agree).
    pub fn whole(fine: &FineGrid) -> Self {
        LocalGrid {
            off: (0, 0),
            ncells: (fine.nx, fine.nx),
            h: fine.h(),
        }
    }

    #[inline]
    pub fn nodes(&self) -> (usize, usize) {
        (self.ncells.0 + 1, self.ncells.1 + 1)
    }

    #[inline]
    pub fn node_count(&self) -> usize {
        (self.ncells.0 + 1) * (self.ncells.1 + 1)
    }

    #[inline]
    pub fn cell_count(&self) -> usize {
        self.ncells.0 * self.ncells.1
    }

    #[inline]
    pub fn node(&self, ix: usize, iy: usize) -> usize {
        debug_assert!(ix <= self.ncells.0 && iy <= self.ncells.1);
        iy * (self.ncells.0 + 1) + ix
    }

    #[inline]
    pub fn cell(&self, cx: usize, cy: usize) -> usize {
        debug_assert!(cx < self.ncells.0 && cy < self.ncells.1);
        cy * self.ncells.0 + cx
    }

    /// Local coordinates of a local cell's center.
    #[inline]
    pub fn cell_center(&self, cx: usize, cy: usize) -> (f64, f64) {
        ((cx as f64 + 0.5) * self.h, (cy as f64 + 0.5) * self.h)
    }

    /// The four node indices of a local cell, counter-clockwise from the
    /// lower-left corner.
    #[inline]
    pub fn cell_nodes(&self, cx: usize, cy: usize) -> [usize; 4] {
        [
            self.node(cx, cy),
            self.node(cx + 1, cy),
            self.node(cx + 1, cy + 1),
            self.node(cx, cy + 1),
        ]
    }

    /// Maps a local cell to the global fine-cell index.
    #[inline]
    pub fn global_cell(&self, fine: &FineGrid, cx: usize, cy: usize) -> usize {
        fine.cell(self.off.0 + cx, self.off.1 + cy)
    }

    /// Extracts per-local-cell values from a global per-fine-cell array.
    pub fn gather_cells(&self, fine: &FineGrid, global: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.cell_count());
        for cy in 0..self.ncells.1 {
            for cx in 0..self.ncells.0 {
                out.push(global[self.global_cell(fine, cx, cy)]);
            }
        }
        out
    }

    pub fn gather_labels(&self, fine: &FineGrid, global: &[u8]) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.cell_count());
        for cy in 0..self.ncells.1 {
            for cx in 0..self.ncells.0 {
                out.push(global[self.global_cell(fine, cx, cy)]);
            }
        }
        out
    }

    /// Local cell-index range (x0..x1, y0..y1) of a patch, given the coarse
    /// grid the region was built on.
    pub fn patch_cell_range(
        &self,
        coarse: &CoarseGrid,
        patch: (usize, usize),
    ) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let k = coarse.cells_per_coarse();
        let x0 = patch.0 * k - self.off.0;
        let y0 = patch.1 * k - self.off.1;
        (x0..x0 + k, y0..y0 + k)
    }
}
