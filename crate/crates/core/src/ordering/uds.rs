//! Unidimensional scaling of a disparity matrix.
//!
//! The normalized stress of positions `l` against disparities `δ` is
//!
//! ```text
//! stress(l) = Σ_{i<k} (|l_i − l_k| − δ_ik)² / Σ_{i<k} δ_ik²
//! ```
//!
//! In one dimension the Guttman transform reduces to
//! `l_i ← (1/n) Σ_k δ_ik · sign(l_i − l_k)`, which only depends on the current
//! order of the points. For a fixed order the same expression is the
//! least-squares embedding of that order. Minimization therefore combines
//! SMACOF runs from several starts with a swap search over orders.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{ElectrodeOrder, OrderingError, Strategy};
use crate::matrix::SquareMatrix;

pub const DEFAULT_RESTARTS: usize = 32;
pub const SMACOF_MAX_ITER: usize = 500;
pub const SMACOF_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DisparityMode {
    /// `δ = 2(1 − c)`: strongly connected electrodes end up close.
    Global,
    /// `δ = c²`: strongly connected electrodes end up far apart.
    Local,
}

/// Symmetric nonnegative disparities with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityMatrix {
    values: SquareMatrix,
    mode: Option<DisparityMode>,
}

impl DisparityMatrix {
    /// Wraps raw disparities. The matrix must be symmetric with a zero
    /// diagonal and nonnegative finite entries.
    pub fn from_values(values: SquareMatrix) -> Result<Self, OrderingError> {
        let n = values.dim();
        for i in 0..n {
            if values[(i, i)] != 0.0 {
                return Err(OrderingError::Param("disparity diagonal must be zero".into()));
            }
            for k in 0..n {
                let v = values[(i, k)];
                if !(v.is_finite() && v >= 0.0) || v != values[(k, i)] {
                    return Err(OrderingError::Param(format!(
                        "disparity ({i},{k}) = {v} is not symmetric, finite and nonnegative"
                    )));
                }
            }
        }
        Ok(Self { values, mode: None })
    }

    pub fn values(&self) -> &SquareMatrix {
        &self.values
    }

    pub fn mode(&self) -> Option<DisparityMode> {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.values.dim()
    }

    fn sum_sq(&self) -> f64 {
        let n = self.dim();
        (0..n)
            .flat_map(|i| (i + 1..n).map(move |k| (i, k)))
            .map(|(i, k)| self.values[(i, k)].powi(2))
            .sum()
    }
}

/// Disparity from a connectivity matrix. An asymmetric input is symmetrized
/// by averaging `c_ik` and `c_ki`; negative global disparities (connectivity
/// above 1) are clamped to 0.
pub fn disparity(c: &SquareMatrix, mode: DisparityMode) -> DisparityMatrix {
    let n = c.dim();
    let values = SquareMatrix::from_fn(n, |i, k| {
        if i == k {
            return 0.0;
        }
        let v = 0.5 * (c[(i, k)] + c[(k, i)]);
        match mode {
            DisparityMode::Global => (2.0 * (1.0 - v)).max(0.0),
            DisparityMode::Local => v * v,
        }
    });
    DisparityMatrix {
        values,
        mode: Some(mode),
    }
}

/// Positions of electrodes on a line, indexed by original electrode.
#[derive(Debug, Clone, PartialEq)]
pub struct UdsEmbedding {
    pub positions: Vec<f64>,
}

fn raw_stress(positions: &[f64], d: &DisparityMatrix) -> f64 {
    let n = positions.len();
    let mut s = 0.0;
    for i in 0..n {
        for k in i + 1..n {
            let r = (positions[i] - positions[k]).abs() - d.values[(i, k)];
            s += r * r;
        }
    }
    s
}

fn check_dims(n: usize, d: &DisparityMatrix) -> Result<(), OrderingError> {
    if n != d.dim() {
        Err(OrderingError::Dimension {
            expected: d.dim(),
            got: n,
        })
    } else {
        Ok(())
    }
}

/// Normalized stress of `emb` against `d`.
pub fn uds_stress(emb: &UdsEmbedding, d: &DisparityMatrix) -> Result<f64, OrderingError> {
    check_dims(emb.positions.len(), d)?;
    if emb.positions.iter().any(|v| !v.is_finite()) {
        return Err(OrderingError::Param("non-finite embedding".into()));
    }
    let denom = d.sum_sq();
    if denom == 0.0 {
        return Err(OrderingError::DegenerateDisparity);
    }
    Ok(raw_stress(&emb.positions, d) / denom)
}

fn guttman(positions: &[f64], d: &DisparityMatrix) -> Vec<f64> {
    let n = positions.len();
    let inv = 1.0 / n as f64;
    (0..n)
        .map(|i| {
            let row = d.values.row(i);
            let s: f64 = (0..n)
                .map(|k| match positions[i].partial_cmp(&positions[k]) {
                    Some(std::cmp::Ordering::Greater) => row[k],
                    Some(std::cmp::Ordering::Less) => -row[k],
                    _ => 0.0,
                })
                .sum();
            s * inv
        })
        .collect()
}

/// One SMACOF run with the stress after every iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct SmacofRun {
    pub embedding: UdsEmbedding,
    /// Stress of the initial embedding followed by the stress after each update.
    pub stress_history: Vec<f64>,
}

impl SmacofRun {
    pub fn stress(&self) -> f64 {
        *self.stress_history.last().expect("history is never empty")
    }
}

/// Iterates Guttman transforms from `init` until the stress improves by less
/// than `tol` or `max_iter` updates have run.
pub fn smacof(
    d: &DisparityMatrix,
    init: &[f64],
    max_iter: usize,
    tol: f64,
) -> Result<SmacofRun, OrderingError> {
    check_dims(init.len(), d)?;
    let denom = d.sum_sq();
    if denom == 0.0 {
        return Err(OrderingError::DegenerateDisparity);
    }
    let mut x = init.to_vec();
    let mut stress = raw_stress(&x, d) / denom;
    let mut history = vec![stress];
    for _ in 0..max_iter {
        let next = guttman(&x, d);
        let next_stress = raw_stress(&next, d) / denom;
        let improvement = stress - next_stress;
        x = next;
        stress = next_stress;
        history.push(stress);
        if improvement < tol {
            break;
        }
    }
    Ok(SmacofRun {
        embedding: UdsEmbedding { positions: x },
        stress_history: history,
    })
}

/// Least-squares embedding of a fixed order (`perm[position] = electrode`).
pub fn order_embedding(d: &DisparityMatrix, perm: &[usize]) -> UdsEmbedding {
    let n = perm.len();
    let mut rank = vec![0usize; n];
    for (a, &e) in perm.iter().enumerate() {
        rank[e] = a;
    }
    let inv = 1.0 / n as f64;
    let positions = (0..n)
        .map(|i| {
            let row = d.values.row(i);
            let s: f64 = (0..n)
                .map(|k| match rank[i].cmp(&rank[k]) {
                    std::cmp::Ordering::Greater => row[k],
                    std::cmp::Ordering::Less => -row[k],
                    std::cmp::Ordering::Equal => 0.0,
                })
                .sum();
            s * inv
        })
        .collect();
    UdsEmbedding { positions }
}

/// Stress of the least-squares embedding of `perm`.
pub fn fitted_order_stress(d: &DisparityMatrix, perm: &[usize]) -> Result<f64, OrderingError> {
    uds_stress(&order_embedding(d, perm), d)
}

/// Order of an embedding: ascending position, ties by electrode index, then
/// reflected if needed so the lower-indexed endpoint comes first.
pub fn order_from_embedding(emb: &UdsEmbedding) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..emb.positions.len()).collect();
    perm.sort_by(|&a, &b| {
        emb.positions[a]
            .total_cmp(&emb.positions[b])
            .then(a.cmp(&b))
    });
    if perm.len() > 1 && perm[perm.len() - 1] < perm[0] {
        perm.reverse();
    }
    perm
}

/// First classical-scaling coordinate of `d`.
pub fn classical_scaling_1d(d: &DisparityMatrix) -> Vec<f64> {
    let n = d.dim();
    let sq = DMatrix::from_fn(n, n, |i, k| d.values[(i, k)].powi(2));
    let row_means: Vec<f64> = (0..n).map(|i| sq.row(i).mean()).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    let b = DMatrix::from_fn(n, n, |i, k| -0.5 * (sq[(i, k)] - row_means[i] - row_means[k] + grand));
    let eig = SymmetricEigen::new(b);
    let (top, &lambda) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .expect("nonempty matrix");
    let scale = if lambda > 0.0 { lambda.sqrt() } else { 1.0 };
    eig.eigenvectors.column(top).iter().map(|v| v * scale).collect()
}

/// Best embedding found by [`uds_minimize`] together with its order.
#[derive(Debug, Clone, PartialEq)]
pub struct UdsSolution {
    pub embedding: UdsEmbedding,
    pub order: ElectrodeOrder,
    pub stress: f64,
    /// Index of the winning start: 0 is the classical-scaling start, `r > 0`
    /// the `r`-th random start.
    pub best_start: usize,
}

/// Best-improvement local search over orders with pairwise swaps and single
/// insertions, scored by the stress of each order's least-squares embedding.
fn polish(d: &DisparityMatrix, mut perm: Vec<usize>) -> Result<(Vec<usize>, f64), OrderingError> {
    let n = perm.len();
    let mut best = fitted_order_stress(d, &perm)?;
    let mut trial = perm.clone();
    loop {
        let mut improved: Option<(Vec<usize>, f64)> = None;
        let mut consider = |cand: &[usize]| -> Result<(), OrderingError> {
            let s = fitted_order_stress(d, cand)?;
            let target = improved.as_ref().map_or(best, |(_, s)| *s);
            if s < target - 1e-15 {
                improved = Some((cand.to_vec(), s));
            }
            Ok(())
        };
        for a in 0..n {
            for b in a + 1..n {
                trial.copy_from_slice(&perm);
                trial.swap(a, b);
                consider(&trial)?;
            }
        }
        for a in 0..n {
            for b in 0..n {
                // moving to a neighbouring slot is a swap, already covered
                if b + 1 >= a && b <= a + 1 {
                    continue;
                }
                trial.copy_from_slice(&perm);
                let e = trial.remove(a);
                trial.insert(b, e);
                consider(&trial)?;
            }
        }
        match improved {
            Some((p, s)) => {
                perm = p;
                best = s;
            }
            None => return Ok((perm, best)),
        }
    }
}

/// Distinct SMACOF orders polished by [`polish`].
pub const POLISHED_RUNS: usize = 8;

/// Minimizes normalized stress from one classical-scaling start and
/// `restarts` random starts, then polishes the best distinct orders by local
/// search.
/// Deterministic in `(d, restarts, seed)` regardless of thread count.
pub fn uds_minimize(
    d: &DisparityMatrix,
    restarts: usize,
    seed: u64,
) -> Result<UdsSolution, OrderingError> {
    if restarts == 0 {
        return Err(OrderingError::Param("restarts must be at least 1".into()));
    }
    let n = d.dim();
    if n < 2 {
        return Err(OrderingError::Param(format!("need at least 2 electrodes, got {n}")));
    }
    if d.sum_sq() == 0.0 {
        return Err(OrderingError::DegenerateDisparity);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut starts = vec![classical_scaling_1d(d)];
    for _ in 0..restarts {
        starts.push((0..n).map(|_| rng.random::<f64>()).collect());
    }
    let runs = starts
        .par_iter()
        .map(|init| smacof(d, init, SMACOF_MAX_ITER, SMACOF_TOL))
        .collect::<Result<Vec<_>, _>>()?;
    let mut ranked: Vec<usize> = (0..runs.len()).collect();
    ranked.sort_by(|&a, &b| runs[a].stress().total_cmp(&runs[b].stress()).then(a.cmp(&b)));
    let best_start = ranked[0];
    let mut embedding = runs[best_start].embedding.clone();
    let mut stress = runs[best_start].stress();

    let mut seen: Vec<Vec<usize>> = Vec::new();
    for &r in &ranked {
        let perm = order_from_embedding(&runs[r].embedding);
        if !seen.contains(&perm) {
            seen.push(perm);
        }
        if seen.len() == POLISHED_RUNS {
            break;
        }
    }
    let polished = seen
        .into_par_iter()
        .map(|perm| {
            let (perm, _) = polish(d, perm)?;
            smacof(d, &order_embedding(d, &perm).positions, SMACOF_MAX_ITER, SMACOF_TOL)
        })
        .collect::<Result<Vec<_>, _>>()?;
    for run in polished {
        if run.stress() < stress {
            stress = run.stress();
            embedding = run.embedding;
        }
    }
    let strategy = match d.mode {
        Some(DisparityMode::Global) => Strategy::DataGlobal,
        Some(DisparityMode::Local) => Strategy::DataLocal,
        None => Strategy::Identity,
    };
    let order = ElectrodeOrder::new(order_from_embedding(&embedding), strategy, Some(stress))?;
    Ok(UdsSolution {
        embedding,
        order,
        stress,
        best_start,
    })
}

/// Data-driven order from a mean connectivity matrix.
pub fn data_order(
    mean_connectivity: &SquareMatrix,
    mode: DisparityMode,
    restarts: usize,
    seed: u64,
) -> Result<ElectrodeOrder, OrderingError> {
    let d = disparity(mean_connectivity, mode);
    Ok(uds_minimize(&d, restarts, seed)?.order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn dis(n: usize, f: impl Fn(usize, usize) -> f64) -> DisparityMatrix {
        DisparityMatrix::from_values(SquareMatrix::from_fn(n, |i, k| if i == k { 0.0 } else { f(i.min(k), i.max(k)) }))
            .unwrap()
    }

    #[test]
    fn disparity_endpoints() {
        let one = SquareMatrix::filled(2, 1.0);
        let zero = SquareMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(disparity(&one, DisparityMode::Global).values()[(0, 1)], 0.0);
        assert_eq!(disparity(&zero, DisparityMode::Global).values()[(0, 1)], 2.0);
        assert_eq!(disparity(&one, DisparityMode::Local).values()[(0, 1)], 1.0);
        assert_eq!(disparity(&zero, DisparityMode::Local).values()[(0, 1)], 0.0);
        assert_eq!(disparity(&one, DisparityMode::Local).values()[(0, 0)], 0.0);
        // PCC of -1 maps to the top of [0, 4]
        let neg = SquareMatrix::from_rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]]).unwrap();
        assert_eq!(disparity(&neg, DisparityMode::Global).values()[(0, 1)], 4.0);
    }

    #[test]
    fn stress_examples() {
        let d = dis(2, |_, _| 2.0);
        let s = |p: Vec<f64>| uds_stress(&UdsEmbedding { positions: p }, &d).unwrap();
        assert_eq!(s(vec![0.0, 2.0]), 0.0);
        assert_eq!(s(vec![0.0, 0.0]), 1.0);
        assert_eq!(s(vec![5.0, 7.0]), 0.0);
        let zero = dis(3, |_, _| 0.0);
        assert!(matches!(
            uds_stress(&UdsEmbedding { positions: vec![0.0; 3] }, &zero),
            Err(OrderingError::DegenerateDisparity)
        ));
        assert!(matches!(uds_minimize(&zero, 4, 0), Err(OrderingError::DegenerateDisparity)));
    }

    #[test]
    fn line_metric_recovered() {
        let d = dis(9, |i, k| (k - i) as f64);
        let sol = uds_minimize(&d, 8, 0).unwrap();
        assert!(sol.stress < 1e-9);
        assert_eq!(sol.order.perm(), &(0..9).collect::<Vec<_>>()[..]);
    }

    #[test]
    fn two_points_always_exact() {
        let d = dis(2, |_, _| 0.7);
        let sol = uds_minimize(&d, 1, 42).unwrap();
        assert!(sol.stress < 1e-15);
        assert_eq!(sol.order.perm(), &[0, 1]);
    }

    #[test]
    fn deterministic_for_seed() {
        let d = dis(10, |i, k| ((i * 7 + k * 3) % 5) as f64 * 0.3 + 0.1);
        let a = uds_minimize(&d, 6, 9).unwrap();
        let b = uds_minimize(&d, 6, 9).unwrap();
        assert_eq!(a, b);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let c = pool.install(|| uds_minimize(&d, 6, 9).unwrap());
        assert_eq!(a, c);
    }

    #[test]
    fn restarts_must_be_positive() {
        let d = dis(3, |_, _| 1.0);
        assert!(matches!(uds_minimize(&d, 0, 0), Err(OrderingError::Param(_))));
    }

    #[test]
    fn reflection_canonical() {
        let emb = UdsEmbedding { positions: vec![3.0, 2.0, 1.0] };
        assert_eq!(order_from_embedding(&emb), vec![0, 1, 2]);
        let emb = UdsEmbedding { positions: vec![1.0, 1.0, 0.0] };
        // sorted 2, 0, 1; endpoint 1 < 2 so the order is reflected
        assert_eq!(order_from_embedding(&emb), vec![1, 0, 2]);
    }

    #[test]
    fn classical_start_for_line() {
        let d = dis(5, |i, k| (k - i) as f64);
        let x = classical_scaling_1d(&d);
        let sign = (x[4] - x[0]).signum();
        for w in x.windows(2) {
            assert!(sign * (w[1] - w[0]) > 0.0);
        }
    }

    #[test]
    fn from_values_validation() {
        let bad = SquareMatrix::from_rows(&[vec![0.0, 1.0], vec![2.0, 0.0]]).unwrap();
        assert!(DisparityMatrix::from_values(bad).is_err());
        let neg = SquareMatrix::from_rows(&[vec![0.0, -1.0], vec![-1.0, 0.0]]).unwrap();
        assert!(DisparityMatrix::from_values(neg).is_err());
    }

    fn random_disparity(n: usize, seed: u64) -> DisparityMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = SquareMatrix::zeros(n);
        for i in 0..n {
            for k in i + 1..n {
                let v = rng.random::<f64>() * 2.0;
                m[(i, k)] = v;
                m[(k, i)] = v;
            }
        }
        DisparityMatrix::from_values(m).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn stress_invariant_under_translation_and_reflection(
            seed in any::<u64>(), shift in -100.0f64..100.0, n in 2usize..12
        ) {
            let d = random_disparity(n, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
            let p: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 3.0).collect();
            let base = uds_stress(&UdsEmbedding { positions: p.clone() }, &d).unwrap();
            let moved = uds_stress(&UdsEmbedding { positions: p.iter().map(|v| v + shift).collect() }, &d).unwrap();
            let flipped = uds_stress(&UdsEmbedding { positions: p.iter().map(|v| -v).collect() }, &d).unwrap();
            prop_assert!((base - moved).abs() < 1e-9 * base.max(1.0));
            prop_assert!((base - flipped).abs() < 1e-12 * base.max(1.0));
        }

        #[test]
        fn smacof_never_increases_stress(seed in any::<u64>(), n in 2usize..16) {
            let d = random_disparity(n, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(5));
            let init: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let run = smacof(&d, &init, SMACOF_MAX_ITER, SMACOF_TOL).unwrap();
            for w in run.stress_history.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-12, "{} -> {}", w[0], w[1]);
            }
        }

        #[test]
        fn minimized_beats_identity_fit(seed in any::<u64>(), n in 2usize..14) {
            let d = random_disparity(n, seed);
            let sol = uds_minimize(&d, 4, seed).unwrap();
            let identity: Vec<usize> = (0..n).collect();
            prop_assert!(sol.stress <= fitted_order_stress(&d, &identity).unwrap() + 1e-12);
            let mut p = sol.order.perm().to_vec();
            p.sort_unstable();
            prop_assert_eq!(p, identity);
        }

        #[test]
        fn disparity_monotone(a in -1.0f64..1.0, b in -1.0f64..1.0) {
            let m = |c: f64| SquareMatrix::from_rows(&[vec![1.0, c], vec![c, 1.0]]).unwrap();
            let g = |c| disparity(&m(c), DisparityMode::Global).values()[(0, 1)];
            let l = |c| disparity(&m(c), DisparityMode::Local).values()[(0, 1)];
            if a < b {
                prop_assert!(g(a) >= g(b));
            }
            if a.abs() < b.abs() {
                prop_assert!(l(a) <= l(b));
            }
        }
    }
}
