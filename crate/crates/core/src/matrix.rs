//! Dense square matrix used for connectivity and disparity values.

use std::ops::{Index, IndexMut};

/// Row-major `n × n` matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn filled(n: usize, value: f64) -> Self {
        Self {
            n,
            data: vec![value; n * n],
        }
    }

    /// Builds a matrix from row-major values. Returns `None` when the length
    /// is not a perfect square of `n`.
    pub fn from_row_major(n: usize, data: Vec<f64>) -> Option<Self> {
        (data.len() == n * n).then_some(Self { n, data })
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for k in 0..n {
                data.push(f(i, k));
            }
        }
        Self { n, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Option<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return None;
        }
        Some(Self {
            n,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.n, |i, k| self[(k, i)])
    }

    /// Exact (bitwise value) symmetry check.
    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (i + 1..self.n).all(|k| self[(i, k)] == self[(k, i)]))
    }

    /// Element-wise mean of equally sized matrices. `None` for an empty or
    /// ragged input.
    pub fn mean<'a>(mats: impl IntoIterator<Item = &'a SquareMatrix>) -> Option<Self> {
        let mut iter = mats.into_iter();
        let first = iter.next()?;
        let mut acc = first.data.clone();
        let mut count = 1usize;
        for m in iter {
            if m.n != first.n {
                return None;
            }
            for (a, v) in acc.iter_mut().zip(&m.data) {
                *a += v;
            }
            count += 1;
        }
        let inv = 1.0 / count as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
        Some(Self {
            n: first.n,
            data: acc,
        })
    }
}

impl Index<(usize, usize)> for SquareMatrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, k): (usize, usize)) -> &f64 {
        &self.data[i * self.n + k]
    }
}

impl IndexMut<(usize, usize)> for SquareMatrix {
    #[inline]
    fn index_mut(&mut self, (i, k): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.n + k]
    }
}
