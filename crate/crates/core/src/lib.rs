//! EEG connectivity matrices as CNN inputs.
//!
//! The pipeline cuts recordings into overlapping windows, splits each window
//! into ten sub-bands, computes PCC, PLV or transfer-entropy matrices per
//! band, reorders the electrode axes, and stacks the bands into
//! `N_e × N_e × 10` tensors. Metrics quantify how concentrated
//! valence-related electrode pairs are under a convolution window, and
//! compare classifiers with McNemar and Wilcoxon tests.

pub mod connectivity;
pub mod filterbank;
pub mod matrix;
pub mod ordering;
pub mod signal_io;
pub mod tensor;
pub mod metrics;
pub mod cli;
pub mod error;

pub use error::{Error, Result};
