//! Electrode orderings for connectivity matrices.
//!
//! Two geometric strategies walk the scalp greedily (`dist`, `dist-restr`);
//! two data-driven strategies embed electrodes on a line by unidimensional
//! scaling of a disparity derived from connectivity (`data-global`,
//! `data-local`).

mod greedy;
mod orderfile;
mod uds;

pub use greedy::{greedy_dist_order, greedy_dist_restr_order};
pub use orderfile::{read_order, read_order_file, write_order, write_order_file, OrderFile};
pub use uds::{
    classical_scaling_1d, data_order, disparity, fitted_order_stress, order_embedding,
    order_from_embedding, smacof, uds_minimize, uds_stress, DisparityMatrix, DisparityMode,
    SmacofRun, UdsEmbedding, UdsSolution, DEFAULT_RESTARTS, SMACOF_MAX_ITER, SMACOF_TOL,
};

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::connectivity::ConnectivityMatrix;
use crate::matrix::SquareMatrix;

#[derive(Debug, Error)]
pub enum OrderingError {
    #[error("layout error: {0}")]
    Layout(String),
    #[error("disparity is zero everywhere")]
    DegenerateDisparity,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("not a permutation of 0..{0}")]
    NotPermutation(usize),
    #[error("label error: {0}")]
    Label(String),
    #[error("order file format error: {0}")]
    Format(String),
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    Identity,
    Dist,
    DistRestr,
    DataGlobal,
    DataLocal,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Identity => "identity",
            Strategy::Dist => "dist",
            Strategy::DistRestr => "dist-restr",
            Strategy::DataGlobal => "data-global",
            Strategy::DataLocal => "data-local",
        }
    }

    pub fn is_data_driven(self) -> bool {
        matches!(self, Strategy::DataGlobal | Strategy::DataLocal)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "identity" => Ok(Strategy::Identity),
            "dist" => Ok(Strategy::Dist),
            "dist-restr" => Ok(Strategy::DistRestr),
            "data-global" => Ok(Strategy::DataGlobal),
            "data-local" => Ok(Strategy::DataLocal),
            other => Err(format!(
                "unknown ordering {other:?} (expected identity, dist, dist-restr, data-global or data-local)"
            )),
        }
    }
}

/// A permutation mapping matrix position to original electrode index.
#[derive(Debug, Clone, PartialEq)]
pub struct ElectrodeOrder {
    perm: Vec<usize>,
    strategy: Strategy,
    stress: Option<f64>,
}

impl ElectrodeOrder {
    pub fn new(
        perm: Vec<usize>,
        strategy: Strategy,
        stress: Option<f64>,
    ) -> Result<Self, OrderingError> {
        let n = perm.len();
        let mut seen = vec![false; n];
        for &p in &perm {
            if p >= n || std::mem::replace(&mut seen[p], true) {
                return Err(OrderingError::NotPermutation(n));
            }
        }
        Ok(Self {
            perm,
            strategy,
            stress,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            perm: (0..n).collect(),
            strategy: Strategy::Identity,
            stress: None,
        }
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn stress(&self) -> Option<f64> {
        self.stress
    }

    /// `positions()[electrode]` is the matrix position of `electrode`.
    pub fn positions(&self) -> Vec<usize> {
        let mut pos = vec![0; self.perm.len()];
        for (a, &e) in self.perm.iter().enumerate() {
            pos[e] = a;
        }
        pos
    }

    /// The inverse permutation, tagged with the same strategy.
    pub fn inverse(&self) -> Self {
        Self {
            perm: self.positions(),
            strategy: self.strategy,
            stress: self.stress,
        }
    }
}

/// `out[a][b] = m[perm[a]][perm[b]]`.
pub fn apply_order_matrix(
    m: &SquareMatrix,
    o: &ElectrodeOrder,
) -> Result<SquareMatrix, OrderingError> {
    if m.dim() != o.len() {
        return Err(OrderingError::Dimension {
            expected: o.len(),
            got: m.dim(),
        });
    }
    let p = o.perm();
    Ok(SquareMatrix::from_fn(m.dim(), |a, b| m[(p[a], p[b])]))
}

pub fn apply_order(
    m: &ConnectivityMatrix,
    o: &ElectrodeOrder,
) -> Result<ConnectivityMatrix, OrderingError> {
    Ok(ConnectivityMatrix {
        values: apply_order_matrix(&m.values, o)?,
        ..m.clone()
    })
}
