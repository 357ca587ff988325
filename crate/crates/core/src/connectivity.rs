//! Pairwise connectivity measures and per-band connectivity matrices.
//!
//! - PCC: Pearson correlation with population moments.
//! - PLV: modulus of the mean unit phasor of phase differences.
//! - TE: first-order, lag-1 transfer entropy from equal-width binned
//!   samples with plug-in probabilities, in nats.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::filterbank::{analytic_phase, BandDefinition, BandedSegment, SegmentInfo};
use crate::matrix::SquareMatrix;

#[derive(Debug, Error, PartialEq)]
pub enum ConnectivityError {
    #[error("degenerate signal: zero variance")]
    DegenerateSignal,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {need} samples, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("need at least 2 bins, got {0}")]
    InvalidBins(usize),
    #[error("band index {index} out of range for {bands} bands")]
    BandIndex { index: usize, bands: usize },
    #[error("{} electrode pairs failed: {pairs:?}", pairs.len())]
    PartialFailure { pairs: Vec<(usize, usize)> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Measure {
    Pcc,
    Plv,
    Te,
}

impl Measure {
    pub fn is_directed(self) -> bool {
        matches!(self, Measure::Te)
    }

    /// Value placed on the diagonal.
    pub fn self_connectivity(self) -> f64 {
        match self {
            Measure::Pcc | Measure::Plv => 1.0,
            Measure::Te => 0.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Measure::Pcc => "pcc",
            Measure::Plv => "plv",
            Measure::Te => "te",
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Measure {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pcc" => Ok(Measure::Pcc),
            "plv" => Ok(Measure::Plv),
            "te" => Ok(Measure::Te),
            other => Err(format!("unknown measure {other:?} (expected pcc, plv or te)")),
        }
    }
}

fn check_lengths(x: usize, y: usize, need: usize) -> Result<(), ConnectivityError> {
    if x != y {
        return Err(ConnectivityError::LengthMismatch(x, y));
    }
    if x < need {
        return Err(ConnectivityError::TooShort { need, got: x });
    }
    Ok(())
}

/// Pearson correlation coefficient, clamped to `[-1, 1]`.
pub fn pcc(x: &[f64], y: &[f64]) -> Result<f64, ConnectivityError> {
    check_lengths(x.len(), y.len(), 2)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(ConnectivityError::DegenerateSignal);
    }
    // (1/T)Σ / (σx σy) with population σ; the 1/T factors cancel
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Phase locking value of two phase series.
pub fn plv(phx: &[f64], phy: &[f64]) -> Result<f64, ConnectivityError> {
    check_lengths(phx.len(), phy.len(), 1)?;
    let (re, im) = phx
        .iter()
        .zip(phy)
        .fold((0.0, 0.0), |(re, im), (a, b)| {
            let d = a - b;
            (re + d.cos(), im + d.sin())
        });
    Ok((re.hypot(im) / phx.len() as f64).min(1.0))
}

/// PLV from precomputed unit phasors `(cos φ, sin φ)`.
fn plv_phasors(a: &[(f64, f64)], b: &[(f64, f64)]) -> Result<f64, ConnectivityError> {
    check_lengths(a.len(), b.len(), 1)?;
    // e^{i(φa−φb)} = (ca + i sa)(cb − i sb)
    let (re, im) = a.iter().zip(b).fold((0.0, 0.0), |(re, im), (&(ca, sa), &(cb, sb))| {
        (re + ca * cb + sa * sb, im + sa * cb - ca * sb)
    });
    Ok((re.hypot(im) / a.len() as f64).min(1.0))
}

/// Transfer entropy estimate with a degeneracy flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TeEstimate {
    pub nats: f64,
    /// Set when either input occupies a single bin; `nats` is then 0.
    pub degenerate: bool,
}

/// Equal-width bin index of every sample over the sequence's own range.
/// `None` when the sequence is constant.
fn quantize(x: &[f64], bins: usize) -> Option<Vec<usize>> {
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let width = hi - lo;
    if !(width > 0.0) {
        return None;
    }
    Some(
        x.iter()
            .map(|&v| (((v - lo) / width * bins as f64) as usize).min(bins - 1))
            .collect(),
    )
}

/// Lag-1 transfer entropy `TE(x → y)` in nats.
pub fn te(x: &[f64], y: &[f64], bins: usize) -> Result<TeEstimate, ConnectivityError> {
    check_lengths(x.len(), y.len(), 3)?;
    if bins < 2 {
        return Err(ConnectivityError::InvalidBins(bins));
    }
    let (Some(qx), Some(qy)) = (quantize(x, bins), quantize(y, bins)) else {
        return Ok(TeEstimate {
            nats: 0.0,
            degenerate: true,
        });
    };
    Ok(TeEstimate {
        nats: te_symbols(&qx, &qy, bins),
        degenerate: false,
    })
}

/// Plug-in lag-1 TE of two equal-length bin-index series.
fn te_symbols(qx: &[usize], qy: &[usize], b: usize) -> f64 {
    // counts over transitions t -> t+1
    let mut joint = vec![0u32; b * b * b]; // (y_next, x, y)
    let mut xy = vec![0u32; b * b]; // (x, y)
    let mut yy = vec![0u32; b * b]; // (y_next, y)
    let mut ycount = vec![0u32; b];
    for t in 0..qx.len() - 1 {
        let (xi, yi, yn) = (qx[t], qy[t], qy[t + 1]);
        joint[(yn * b + xi) * b + yi] += 1;
        xy[xi * b + yi] += 1;
        yy[yn * b + yi] += 1;
        ycount[yi] += 1;
    }
    let total = (qx.len() - 1) as f64;
    let mut sum = 0.0;
    for yn in 0..b {
        for xi in 0..b {
            for yi in 0..b {
                let c = joint[(yn * b + xi) * b + yi];
                if c == 0 {
                    continue;
                }
                // p(yn | x, y) / p(yn | y) = c·n(y) / (n(x,y)·n(yn,y))
                let ratio = f64::from(c) * f64::from(ycount[yi])
                    / (f64::from(xy[xi * b + yi]) * f64::from(yy[yn * b + yi]));
                sum += f64::from(c) / total * ratio.ln();
            }
        }
    }
    sum.max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConnectivityParams {
    pub te_bins: usize,
}

impl Default for ConnectivityParams {
    fn default() -> Self {
        Self { te_bins: 8 }
    }
}

/// Connectivity of one band of one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectivityMatrix {
    pub measure: Measure,
    pub values: SquareMatrix,
    pub band: BandDefinition,
    pub segment: SegmentInfo,
    /// Number of pair kernels evaluated to fill the matrix.
    pub evaluations: usize,
    /// Ordered pairs whose TE inputs were degenerate and were set to 0.
    pub degenerate_pairs: Vec<(usize, usize)>,
}

impl ConnectivityMatrix {
    pub fn dim(&self) -> usize {
        self.values.dim()
    }
}

/// Unordered pairs `i < k`, or all ordered pairs `i != k` for directed measures.
pub fn pair_list(n: usize, directed: bool) -> Vec<(usize, usize)> {
    if directed {
        (0..n)
            .flat_map(|i| (0..n).filter(move |&k| k != i).map(move |k| (i, k)))
            .collect()
    } else {
        (0..n)
            .flat_map(|i| (i + 1..n).map(move |k| (i, k)))
            .collect()
    }
}

/// Computes the connectivity matrix of band `band` of `bs`.
pub fn connectivity_matrix(
    bs: &BandedSegment,
    band: usize,
    measure: Measure,
    params: ConnectivityParams,
) -> Result<ConnectivityMatrix, ConnectivityError> {
    if band >= bs.bands().len() {
        return Err(ConnectivityError::BandIndex {
            index: band,
            bands: bs.bands().len(),
        });
    }
    let signals = bs.band(band);
    let n = signals.len();

    // per-channel preprocessing: unit phasors for PLV, bin indices for TE.
    // An undefined phase fails every pair touching that channel.
    let phasors: Vec<Option<Vec<(f64, f64)>>> = if measure == Measure::Plv {
        signals
            .par_iter()
            .map(|x| {
                analytic_phase(x)
                    .ok()
                    .map(|p| p.iter().map(|v| (v.cos(), v.sin())).collect())
            })
            .collect()
    } else {
        Vec::new()
    };
    let symbols: Vec<Option<Vec<usize>>> = if measure == Measure::Te {
        if params.te_bins < 2 {
            return Err(ConnectivityError::InvalidBins(params.te_bins));
        }
        signals.iter().map(|x| quantize(x, params.te_bins)).collect()
    } else {
        Vec::new()
    };

    let pairs = pair_list(n, measure.is_directed());
    let results: Vec<Result<(f64, bool), ConnectivityError>> = pairs
        .par_iter()
        .map(|&(i, k)| match measure {
            Measure::Pcc => pcc(&signals[i], &signals[k]).map(|v| (v, false)),
            Measure::Plv => match (&phasors[i], &phasors[k]) {
                (Some(a), Some(b)) => plv_phasors(a, b).map(|v| (v, false)),
                _ => Err(ConnectivityError::DegenerateSignal),
            },
            Measure::Te => {
                check_lengths(signals[i].len(), signals[k].len(), 3)?;
                match (&symbols[i], &symbols[k]) {
                    (Some(qx), Some(qy)) => Ok((te_symbols(qx, qy, params.te_bins), false)),
                    _ => Ok((0.0, true)),
                }
            }
        })
        .collect();

    let mut values = SquareMatrix::filled(n, measure.self_connectivity());
    let mut failed = Vec::new();
    let mut degenerate_pairs = Vec::new();
    for (&(i, k), r) in pairs.iter().zip(results) {
        match r {
            Ok((v, degenerate)) => {
                values[(i, k)] = v;
                if !measure.is_directed() {
                    values[(k, i)] = v;
                }
                if degenerate {
                    degenerate_pairs.push((i, k));
                }
            }
            Err(ConnectivityError::TooShort { need, got }) => {
                return Err(ConnectivityError::TooShort { need, got })
            }
            Err(ConnectivityError::InvalidBins(b)) => {
                return Err(ConnectivityError::InvalidBins(b))
            }
            Err(_) => failed.push((i, k)),
        }
    }
    if !failed.is_empty() {
        return Err(ConnectivityError::PartialFailure { pairs: failed });
    }
    Ok(ConnectivityMatrix {
        measure,
        values,
        band: bs.bands()[band].clone(),
        segment: *bs.info(),
        evaluations: pairs.len(),
        degenerate_pairs,
    })
}

/// Connectivity matrices for every band of `bs`, in band order.
pub fn connectivity_all_bands(
    bs: &BandedSegment,
    measure: Measure,
    params: ConnectivityParams,
) -> Result<Vec<ConnectivityMatrix>, ConnectivityError> {
    (0..bs.bands().len())
        .map(|b| connectivity_matrix(bs, b, measure, params))
        .collect()
}
