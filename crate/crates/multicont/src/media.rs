//! Conductivity-field generators, continuum indicator maps, and source terms.
//!
//! Three families of media are provided: a horizontally layered medium
//! (case 1), a periodic crossing-channel network (case 2), and a smoothly
//! modulated, non-periodic variant of the network (case 3). Conductivities
//! are sampled at fine-cell centers and held constant per fine cell.

use crate::grid::FineGrid;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Per-fine-cell conductivity values.
#[derive(Debug, Clone)]
pub struct ConductivityField {
    pub values: Vec<f64>,
    pub epsilon: f64,
    pub descriptor: String,
}

impl ConductivityField {
    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Per-fine-cell continuum labels, 0-based internally.
///
/// The derived indicators (1 on continuum j, 0 elsewhere) partition the
/// domain by construction.
#[derive(Debug, Clone)]
pub struct ContinuumMap {
    pub n: usize,
    pub labels: Vec<u8>,
}

impl ContinuumMap {
    pub fn new(n: usize, labels: Vec<u8>) -> Result<Self> {
        if n == 0 || n > u8::MAX as usize {
            return Err(Error::Media(format!("invalid continuum count {n}")));
        }
        for j in 0..n {
            if !labels.iter().any(|&l| l as usize == j) {
                return Err(Error::Media(format!("continuum {} is empty", j + 1)));
            }
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= n) {
            return Err(Error::Media(format!("label {bad} out of range for N={n}")));
        }
        Ok(ContinuumMap { n, labels })
    }

    /// Collapses to a single continuum covering everything.
    pub fn single(cell_count: usize) -> Self {
        ContinuumMap {
            n: 1,
            labels: vec![0; cell_count],
        }
    }
}

/// Per-fine-cell source values.
#[derive(Debug, Clone)]
pub struct SourceField {
    pub values: Vec<f64>,
}

/// How the two conductivity levels are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ContrastSpec {
    /// Low = eps/10000, high = 1/(100 eps); contrast grows as 1/eps^2.
    EpsilonScaled,
    /// Fixed values independent of the period.
    Fixed { low: f64, high: f64 },
}

impl ContrastSpec {
    fn values(&self, eps: f64) -> (f64, f64) {
        match *self {
            ContrastSpec::EpsilonScaled => (eps / 10000.0, 1.0 / (100.0 * eps)),
            ContrastSpec::Fixed { low, high } => (low, high),
        }
    }
}

/// Parameters shared by the layered and channel-network generators.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MediumParams {
    pub contrast: ContrastSpec,
    /// Case 1: volume fraction of the high-conductivity band per period.
    pub high_fraction: f64,
    /// Case 2/3: channel width as a fraction of the period.
    pub channel_width: f64,
    /// Case 3: amplitude of the smooth modulation of the high value.
    pub modulation: f64,
}

impl Default for MediumParams {
    fn default() -> Self {
        MediumParams {
            contrast: ContrastSpec::EpsilonScaled,
            high_fraction: 0.5,
            channel_width: 0.25,
            modulation: 0.5,
        }
    }
}

fn check_period(fine: &FineGrid, eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps < 1.0 + 1e-12) {
        return Err(Error::Media(format!("period eps={eps} out of range")));
    }
    let inv = 1.0 / eps;
    if (inv - inv.round()).abs() > 1e-9 {
        return Err(Error::Media(format!("1/eps = {inv} is not an integer")));
    }
    let cells_per_period = eps * fine.nx as f64;
    if (cells_per_period - cells_per_period.round()).abs() > 1e-9 || cells_per_period < 2.0 - 1e-9 {
        return Err(Error::Media(format!(
            "period eps={eps} is not resolved by nx={} (eps*nx must be an integer >= 2)",
            fine.nx
        )));
    }
    Ok(cells_per_period.round())
}

/// Horizontally layered medium: conductivity depends on y only, with period
/// `eps` split into a low band (continuum 1) and a high band (continuum 2).
pub fn gen_case1(
    fine: &FineGrid,
    eps: f64,
    params: &MediumParams,
) -> Result<(ConductivityField, ContinuumMap)> {
    let cpp = check_period(fine, eps)?;
    let f = params.high_fraction;
    if !(f > 0.0 && f < 1.0) {
        return Err(Error::Media(format!("high_fraction {f} must be in (0,1)")));
    }
    // sampled at cell centers: each band must capture at least one cell
    if f * cpp < 1.0 - 1e-9 || (1.0 - f) * cpp < 1.0 - 1e-9 {
        return Err(Error::Media(format!(
            "layer bands of eps={eps}, high_fraction={f} are below one fine cell at nx={}",
            fine.nx
        )));
    }
    let (lo, hi) = params.contrast.values(eps);
    let mut values = Vec::with_capacity(fine.cell_count());
    let mut labels = Vec::with_capacity(fine.cell_count());
    for cy in 0..fine.nx {
        let (_, y) = fine.cell_center(0, cy);
        let t = (y / eps).fract();
        let high = t >= 1.0 - f;
        let (v, l) = if high { (hi, 1u8) } else { (lo, 0u8) };
        for _ in 0..fine.nx {
            values.push(v);
            labels.push(l);
        }
    }
    let field = ConductivityField {
        values,
        epsilon: eps,
        descriptor: format!("case1 eps={eps} high_fraction={f}"),
    };
    Ok((field, ContinuumMap::new(2, labels)?))
}

/// Layered medium with fixed conductivity levels (same geometry as case 1).
pub fn gen_case1_fixed_contrast(
    fine: &FineGrid,
    eps: f64,
    params: &MediumParams,
) -> Result<(ConductivityField, ContinuumMap)> {
    let mut p = *params;
    p.contrast = ContrastSpec::Fixed {
        low: 1.0 / 10000.0,
        high: 1.0 / 10.0,
    };
    gen_case1(fine, eps, &p)
}

/// Periodic network of crossing horizontal and vertical channels
/// (continuum 2) in a low-conductivity matrix (continuum 1).
pub fn gen_case2(
    fine: &FineGrid,
    eps: f64,
    params: &MediumParams,
) -> Result<(ConductivityField, ContinuumMap)> {
    let cpp = check_period(fine, eps)?;
    let w = params.channel_width;
    if w <= 0.0 || w >= 1.0 {
        return Err(Error::Media(format!("channel_width {w} must be in (0,1)")));
    }
    if w * cpp < 1.0 - 1e-9 {
        return Err(Error::Media(format!(
            "channel width {w}*eps is below one fine cell at nx={}",
            fine.nx
        )));
    }
    let (lo, hi) = params.contrast.values(eps);
    let mut values = Vec::with_capacity(fine.cell_count());
    let mut labels = Vec::with_capacity(fine.cell_count());
    for cy in 0..fine.nx {
        for cx in 0..fine.nx {
            let (x, y) = fine.cell_center(cx, cy);
            let u = (x / eps).fract();
            let v = (y / eps).fract();
            let high = (u - 0.5).abs() < w / 2.0 || (v - 0.5).abs() < w / 2.0;
            let (val, l) = if high { (hi, 1u8) } else { (lo, 0u8) };
            values.push(val);
            labels.push(l);
        }
    }
    let field = ConductivityField {
        values,
        epsilon: eps,
        descriptor: format!("case2 eps={eps} channel_width={w}"),
    };
    Ok((field, ContinuumMap::new(2, labels)?))
}

/// Case 2 network with the high conductivity modulated by a smooth O(1)
/// factor, so the field is no longer periodic. Labels are unchanged.
pub fn gen_case3(
    fine: &FineGrid,
    eps: f64,
    params: &MediumParams,
) -> Result<(ConductivityField, ContinuumMap)> {
    let a = params.modulation;
    if !(0.0..1.0).contains(&a) {
        return Err(Error::Media(format!("modulation amplitude {a} must be in [0,1)")));
    }
    let (mut field, map) = gen_case2(fine, eps, params)?;
    for cy in 0..fine.nx {
        for cx in 0..fine.nx {
            let c = fine.cell(cx, cy);
            if map.labels[c] == 1 {
                let (x, y) = fine.cell_center(cx, cy);
                field.values[c] *= 1.0 + a * (std::f64::consts::PI * x).sin() * (std::f64::consts::PI * y).sin();
            }
        }
    }
    field.descriptor = format!("case3 {} modulation={a}", field.descriptor);
    Ok((field, map))
}

/// Gaussian source centered at (0.5, 0.5): scaled by `1000 min(kappa)` in
/// continuum 1 when there are at least two continua, unscaled elsewhere.
pub fn gen_source(fine: &FineGrid, field: &ConductivityField, map: &ContinuumMap) -> SourceField {
    let kmin = field.min();
    let scale_low = 1000.0 * kmin;
    let mut values = Vec::with_capacity(fine.cell_count());
    for cy in 0..fine.nx {
        for cx in 0..fine.nx {
            let (x, y) = fine.cell_center(cx, cy);
            let g = (-40.0 * ((x - 0.5).powi(2) + (y - 0.5).powi(2)).abs()).exp();
            let c = fine.cell(cx, cy);
            let s = if map.n >= 2 && map.labels[c] == 0 { scale_low } else { 1.0 };
            values.push(s * g);
        }
    }
    SourceField { values }
}
