//! Concentrativeness of valence-related pairs under a sliding convolution
//! window, classifier comparison statistics, and prediction files.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use statrs::function::erf::erfc;
use thiserror::Error;

use crate::connectivity::Measure;
use crate::ordering::ElectrodeOrder;
use crate::signal_io::ElectrodeLayout;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no connectivity incidence falls under any window")]
    EmptyIncidence,
    #[error("kernel size must be odd and >= 1, got {0}")]
    InvalidKernel(usize),
    #[error("pair ({0}, {1}) is out of range or a self-pair")]
    InvalidPair(usize, usize),
    #[error("no discordant predictions between the two systems")]
    NoDiscordance,
    #[error("prediction alignment error: {0}")]
    Alignment(String),
    #[error("all differences are zero")]
    NoVariation,
    #[error("need at least 5 nonzero differences, got {0}")]
    Insufficient(usize),
    #[error("label error: {0}")]
    Label(String),
    #[error("prediction file format error: {0}")]
    Format(String),
    #[error("grouping needs the {0} column")]
    MissingMetadata(&'static str),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ValenceSide {
    Low,
    High,
}

impl ValenceSide {
    pub fn as_str(self) -> &'static str {
        match self {
            ValenceSide::Low => "low",
            ValenceSide::High => "high",
        }
    }
}

impl fmt::Display for ValenceSide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

const PCC_LOW: &[(&str, &str)] = &[
    ("Fp2", "F7"),
    ("F7", "O1"),
    ("Fz", "T8"),
    ("T8", "P3"),
    ("P8", "O2"),
    ("O1", "O2"),
];

const PCC_HIGH: &[(&str, &str)] = &[
    ("Fp1", "F8"),
    ("Fp1", "P7"),
    ("Fp2", "C3"),
    ("F3", "F4"),
    ("F3", "P7"),
    ("F4", "C3"),
    ("F7", "F8"),
    ("F7", "P8"),
    ("Fz", "T8"),
    ("C3", "T8"),
    ("T7", "T8"),
];

const PLV_LOW: &[(&str, &str)] = &[
    ("Fp1", "Fp2"),
    ("Fp1", "FC1"),
    ("Fp1", "FC2"),
    ("Fp1", "F4"),
    ("Fp1", "Fz"),
    ("Fp1", "Cz"),
    ("Fp1", "P8"),
    ("Fp2", "Fz"),
    ("Fp2", "P3"),
    ("F3", "Fz"),
    ("F4", "T8"),
    ("F8", "Fz"),
    ("F8", "P7"),
    ("Fz", "P4"),
    ("T7", "P4"),
    ("T7", "P7"),
    ("T7", "Pz"),
    ("T8", "P7"),
    ("T8", "Pz"),
    ("C3", "P3"),
    ("C3", "P4"),
    ("P7", "O2"),
];

const PLV_HIGH: &[(&str, &str)] = &[
    ("Fp2", "T7"),
    ("Fp2", "Pz"),
    ("F3", "Fz"),
    ("Fz", "C4"),
    ("Fz", "P4"),
    ("C3", "C4"),
    ("C4", "P3"),
    ("Cz", "Pz"),
    ("T7", "Pz"),
    ("P7", "P8"),
    ("P7", "O2"),
];

/// Low- and high-valence electrode pairs for one measure.
#[derive(Debug, Clone, PartialEq)]
pub struct ValencePairSet {
    pub measure: Measure,
    pub low: Vec<(String, String)>,
    pub high: Vec<(String, String)>,
}

impl ValencePairSet {
    /// The published pair tables. Only PCC and PLV have one.
    pub fn published(measure: Measure) -> Option<Self> {
        let (low, high) = match measure {
            Measure::Pcc => (PCC_LOW, PCC_HIGH),
            Measure::Plv => (PLV_LOW, PLV_HIGH),
            Measure::Te => return None,
        };
        let own = |ps: &[(&str, &str)]| ps.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect();
        Some(Self {
            measure,
            low: own(low),
            high: own(high),
        })
    }

    pub fn side(&self, side: ValenceSide) -> &[(String, String)] {
        match side {
            ValenceSide::Low => &self.low,
            ValenceSide::High => &self.high,
        }
    }

    /// Resolves one side's labels to electrode indices of `layout`.
    pub fn indices(
        &self,
        side: ValenceSide,
        layout: &ElectrodeLayout,
    ) -> Result<Vec<(usize, usize)>, MetricsError> {
        self.side(side)
            .iter()
            .map(|(a, b)| {
                let look = |l: &str| {
                    layout
                        .index_of(l)
                        .ok_or_else(|| MetricsError::Label(format!("electrode {l} is not in the layout")))
                };
                let (i, k) = (look(a)?, look(b)?);
                if i == k {
                    return Err(MetricsError::Label(format!("self-pair {a}-{b}")));
                }
                Ok((i, k))
            })
            .collect()
    }
}

/// Row-major `n × n` mask with both `(i,k)` and `(k,i)` marked for every
/// pair, at the matrix positions given by `order`.
pub fn incidence_mask(
    order: &ElectrodeOrder,
    pairs: &[(usize, usize)],
) -> Result<Vec<bool>, MetricsError> {
    let n = order.len();
    let pos = order.positions();
    let mut mask = vec![false; n * n];
    for &(i, k) in pairs {
        if i >= n || k >= n || i == k {
            return Err(MetricsError::InvalidPair(i, k));
        }
        let (a, b) = (pos[i], pos[k]);
        mask[a * n + b] = true;
        mask[b * n + a] = true;
    }
    Ok(mask)
}

/// Window statistics of one mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowStats {
    /// Number of windows, `n²`.
    pub windows: usize,
    /// Windows without any marked cell.
    pub empty_windows: usize,
    /// Sum over windows of marked cells covered.
    pub marked_total: usize,
    pub kernel: usize,
}

impl WindowStats {
    /// `(1/(N−M)) Σ r_n` with `r_n = marked / s²`.
    pub fn concentrativeness(&self) -> Result<f64, MetricsError> {
        let active = self.windows - self.empty_windows;
        if active == 0 {
            return Err(MetricsError::EmptyIncidence);
        }
        Ok(self.marked_total as f64 / (self.kernel * self.kernel * active) as f64)
    }
}

/// Marked cells under an `s × s` window centred on every cell, row-major.
/// Zero padding, stride 1.
pub fn window_counts(mask: &[bool], n: usize, s: usize) -> Result<Vec<usize>, MetricsError> {
    if s == 0 || s % 2 == 0 {
        return Err(MetricsError::InvalidKernel(s));
    }
    assert_eq!(mask.len(), n * n, "mask must be n × n");
    // prefix[r·(n+1) + c] = marked cells in rows < r, cols < c
    let w = n + 1;
    let mut prefix = vec![0usize; w * w];
    for r in 0..n {
        for c in 0..n {
            prefix[(r + 1) * w + c + 1] =
                prefix[r * w + c + 1] + prefix[(r + 1) * w + c] - prefix[r * w + c] + mask[r * n + c] as usize;
        }
    }
    let h = s / 2;
    let mut out = Vec::with_capacity(n * n);
    for r in 0..n {
        let (r0, r1) = (r.saturating_sub(h), (r + h + 1).min(n));
        for c in 0..n {
            let (c0, c1) = (c.saturating_sub(h), (c + h + 1).min(n));
            out.push(prefix[r1 * w + c1] + prefix[r0 * w + c0] - prefix[r0 * w + c1] - prefix[r1 * w + c0]);
        }
    }
    Ok(out)
}

pub fn window_stats(mask: &[bool], n: usize, s: usize) -> Result<WindowStats, MetricsError> {
    let counts = window_counts(mask, n, s)?;
    Ok(WindowStats {
        windows: counts.len(),
        empty_windows: counts.iter().filter(|&&k| k == 0).count(),
        marked_total: counts.iter().sum(),
        kernel: s,
    })
}

/// Concentrativeness of `pairs` (electrode indices) under `order` for a
/// kernel of size `s`.
pub fn concentrativeness(
    order: &ElectrodeOrder,
    pairs: &[(usize, usize)],
    s: usize,
) -> Result<f64, MetricsError> {
    let mask = incidence_mask(order, pairs)?;
    window_stats(&mask, order.len(), s)?.concentrativeness()
}

/// One classified instance.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub instance_id: String,
    pub true_label: u32,
    pub predicted: u32,
    pub subject: Option<u16>,
    pub video: Option<u16>,
    pub valence: Option<f32>,
}

impl PredictionRecord {
    pub fn new(instance_id: impl Into<String>, true_label: u32, predicted: u32) -> Self {
        Self {
            instance_id: instance_id.into(),
            true_label,
            predicted,
            subject: None,
            video: None,
            valence: None,
        }
    }

    pub fn correct(&self) -> bool {
        self.true_label == self.predicted
    }
}

/// Reads `instance_id,true,predicted` with optional `subject`, `video` and
/// `valence` columns, in any header order.
pub fn read_predictions(r: impl BufRead) -> Result<Vec<PredictionRecord>, MetricsError> {
    let mut lines = r.lines();
    let header = loop {
        match lines.next() {
            Some(l) => {
                let l = l?;
                if !l.trim().is_empty() {
                    break l;
                }
            }
            None => return Err(MetricsError::Format("empty prediction file".into())),
        }
    };
    let cols: Vec<String> = header.split(',').map(|c| c.trim().to_ascii_lowercase()).collect();
    let col = |name: &str| cols.iter().position(|c| c == name);
    let (id_c, true_c, pred_c) = match (col("instance_id"), col("true"), col("predicted")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => {
            return Err(MetricsError::Format(
                "header must contain instance_id, true and predicted".into(),
            ))
        }
    };
    let (subj_c, vid_c, val_c) = (col("subject"), col("video"), col("valence"));
    let mut out = Vec::new();
    for (ln, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != cols.len() {
            return Err(MetricsError::Format(format!(
                "line {}: {} fields, header has {}",
                ln + 2,
                f.len(),
                cols.len()
            )));
        }
        fn num<T: FromStr>(s: &str, what: &str, ln: usize) -> Result<T, MetricsError> {
            s.parse()
                .map_err(|_| MetricsError::Format(format!("line {}: bad {what} {s:?}", ln + 2)))
        }
        out.push(PredictionRecord {
            instance_id: f[id_c].to_string(),
            true_label: num(f[true_c], "true label", ln)?,
            predicted: num(f[pred_c], "prediction", ln)?,
            subject: subj_c.map(|c| num(f[c], "subject", ln)).transpose()?,
            video: vid_c.map(|c| num(f[c], "video", ln)).transpose()?,
            valence: val_c.map(|c| num(f[c], "valence", ln)).transpose()?,
        });
    }
    Ok(out)
}

/// Writes the metadata columns only when every record carries them.
pub fn write_predictions(rs: &[PredictionRecord], w: &mut impl Write) -> Result<(), MetricsError> {
    let meta = !rs.is_empty()
        && rs
            .iter()
            .all(|r| r.subject.is_some() && r.video.is_some() && r.valence.is_some());
    if meta {
        writeln!(w, "instance_id,true,predicted,subject,video,valence")?;
    } else {
        writeln!(w, "instance_id,true,predicted")?;
    }
    for r in rs {
        if r.instance_id.contains(',') {
            return Err(MetricsError::Format(format!("instance id {:?} contains a comma", r.instance_id)));
        }
        write!(w, "{},{},{}", r.instance_id, r.true_label, r.predicted)?;
        if meta {
            write!(
                w,
                ",{},{},{}",
                r.subject.unwrap(),
                r.video.unwrap(),
                r.valence.unwrap()
            )?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Fails unless both systems saw the same instances in the same order.
pub fn check_alignment(a: &[PredictionRecord], b: &[PredictionRecord]) -> Result<(), MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::Alignment(format!("{} vs {} instances", a.len(), b.len())));
    }
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        if x.instance_id != y.instance_id {
            return Err(MetricsError::Alignment(format!(
                "row {i}: instance {} vs {}",
                x.instance_id, y.instance_id
            )));
        }
        if x.true_label != y.true_label {
            return Err(MetricsError::Alignment(format!(
                "instance {}: true label {} vs {}",
                x.instance_id, x.true_label, y.true_label
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McNemarResult {
    pub chi2: f64,
    pub p: f64,
    /// Correct under A, wrong under B.
    pub b_count: usize,
    /// Wrong under A, correct under B.
    pub c_count: usize,
}

/// Upper tail of the chi-square distribution with one degree of freedom.
pub fn chi2_sf_df1(x: f64) -> f64 {
    erfc((x.max(0.0) / 2.0).sqrt())
}

pub fn mcnemar_counts(b: usize, c: usize, continuity: bool) -> Result<McNemarResult, MetricsError> {
    if b + c == 0 {
        return Err(MetricsError::NoDiscordance);
    }
    let diff = (b as f64 - c as f64).abs();
    let num = if continuity { (diff - 1.0).max(0.0) } else { diff };
    let chi2 = num * num / (b + c) as f64;
    Ok(McNemarResult {
        chi2,
        p: chi2_sf_df1(chi2),
        b_count: b,
        c_count: c,
    })
}

pub fn mcnemar(
    a: &[PredictionRecord],
    b: &[PredictionRecord],
    continuity: bool,
) -> Result<McNemarResult, MetricsError> {
    check_alignment(a, b)?;
    let (mut bc, mut cc) = (0, 0);
    for (x, y) in a.iter().zip(b) {
        match (x.correct(), y.correct()) {
            (true, false) => bc += 1,
            (false, true) => cc += 1,
            _ => {}
        }
    }
    mcnemar_counts(bc, cc, continuity)
}

/// How the signed-rank p-value is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WilcoxonMethod {
    /// Exact null distribution when there are no tied magnitudes and at
    /// most [`EXACT_MAX_N`] differences; normal approximation with
    /// continuity correction otherwise.
    Auto,
    Exact,
    Normal { continuity: bool },
}

pub const EXACT_MAX_N: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WilcoxonResult {
    /// Sum of ranks of the positive differences.
    pub w: f64,
    /// Two-sided p-value.
    pub p: f64,
    /// Nonzero differences used.
    pub n: usize,
    pub exact: bool,
}

/// Average ranks (1-based) of `xs`, plus the size of every tie group.
pub fn average_ranks(xs: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && xs[idx[j]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = r;
        }
        if j - i > 1 {
            ties.push(j - i);
        }
        i = j;
    }
    (ranks, ties)
}

/// `P(W+ = w)` counts for ranks `1..=n`, as a probability vector.
fn exact_signed_rank_pmf(n: usize) -> Vec<f64> {
    let max = n * (n + 1) / 2;
    let mut counts = vec![0.0f64; max + 1];
    counts[0] = 1.0;
    for r in 1..=n {
        for w in (r..=max).rev() {
            counts[w] += counts[w - r];
        }
    }
    let total = 2f64.powi(n as i32);
    counts.iter().map(|c| c / total).collect()
}

/// One-sample Wilcoxon signed-rank test of `median(xs) = m0`.
pub fn wilcoxon_one_sample(
    xs: &[f64],
    m0: f64,
    method: WilcoxonMethod,
) -> Result<WilcoxonResult, MetricsError> {
    let d: Vec<f64> = xs.iter().map(|x| x - m0).filter(|v| *v != 0.0).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(MetricsError::Degenerate("non-finite sample".into()));
    }
    let n = d.len();
    if n == 0 {
        return Err(MetricsError::NoVariation);
    }
    if n < 5 {
        return Err(MetricsError::Insufficient(n));
    }
    let mags: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let (ranks, ties) = average_ranks(&mags);
    let w: f64 = ranks.iter().zip(&d).filter(|(_, v)| **v > 0.0).map(|(r, _)| r).sum();
    let exact = match method {
        WilcoxonMethod::Exact => true,
        WilcoxonMethod::Auto => ties.is_empty() && n <= EXACT_MAX_N,
        WilcoxonMethod::Normal { .. } => false,
    };
    let p = if exact {
        if !ties.is_empty() {
            return Err(MetricsError::Degenerate(
                "exact distribution needs untied magnitudes".into(),
            ));
        }
        let pmf = exact_signed_rank_pmf(n);
        let wi = w.round() as usize;
        let lower: f64 = pmf[..=wi].iter().sum();
        let upper: f64 = pmf[wi..].iter().sum();
        (2.0 * lower.min(upper)).min(1.0)
    } else {
        let continuity = match method {
            WilcoxonMethod::Normal { continuity } => continuity,
            _ => true,
        };
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let tie_adj: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_adj;
        let dev = (w - mean).abs() - if continuity { 0.5 } else { 0.0 };
        let z = dev.max(0.0) / var.sqrt();
        erfc(z / std::f64::consts::SQRT_2).min(1.0)
    };
    Ok(WilcoxonResult { w, p, n, exact })
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::Alignment(format!("{} vs {} values", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(MetricsError::Insufficient(x.len()));
    }
    let (rx, _) = average_ranks(x);
    let (ry, _) = average_ranks(y);
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricsError::Degenerate("constant ranks".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupBy {
    Subject,
    Video,
    ValenceSide,
}

impl FromStr for GroupBy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "subject" => Ok(GroupBy::Subject),
            "video" => Ok(GroupBy::Video),
            "valence" | "valence-side" | "valence_side" => Ok(GroupBy::ValenceSide),
            other => Err(format!("unknown grouping {other:?} (expected subject, video or valence-side)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupError {
    pub group: String,
    pub wrong: usize,
    pub total: usize,
}

impl GroupError {
    pub fn rate(&self) -> f64 {
        self.wrong as f64 / self.total as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub group_by: GroupBy,
    pub groups: Vec<GroupError>,
    pub warnings: Vec<String>,
}

/// Median of the per-video mean valence. Videos at or below it are low.
fn video_valence_median(preds: &[PredictionRecord]) -> Result<(BTreeMap<u16, f64>, f64), MetricsError> {
    let mut acc: BTreeMap<u16, (f64, usize)> = BTreeMap::new();
    for r in preds {
        let v = r.video.unwrap_or(r.true_label as u16);
        let val = r.valence.ok_or(MetricsError::MissingMetadata("valence"))?;
        let e = acc.entry(v).or_insert((0.0, 0));
        e.0 += val as f64;
        e.1 += 1;
    }
    let means: BTreeMap<u16, f64> = acc.into_iter().map(|(k, (s, c))| (k, s / c as f64)).collect();
    let mut vals: Vec<f64> = means.values().copied().collect();
    vals.sort_by(f64::total_cmp);
    let m = vals.len();
    if m == 0 {
        return Err(MetricsError::Insufficient(0));
    }
    let median = if m % 2 == 1 {
        vals[m / 2]
    } else {
        (vals[m / 2 - 1] + vals[m / 2]) / 2.0
    };
    Ok((means, median))
}

/// Error rates per group. The video defaults to the true class when the
/// file has no video column.
pub fn error_report(preds: &[PredictionRecord], group_by: GroupBy) -> Result<ErrorReport, MetricsError> {
    let mut groups: BTreeMap<(u32, String), (usize, usize)> = BTreeMap::new();
    let mut warnings = Vec::new();
    let mut bump = |key: (u32, String), wrong: bool| {
        let e = groups.entry(key).or_insert((0, 0));
        e.0 += wrong as usize;
        e.1 += 1;
    };
    match group_by {
        GroupBy::Subject => {
            for r in preds {
                let s = r.subject.ok_or(MetricsError::MissingMetadata("subject"))?;
                bump((s as u32, s.to_string()), !r.correct());
            }
        }
        GroupBy::Video => {
            for r in preds {
                let v = r.video.map_or(r.true_label, u32::from);
                bump((v, v.to_string()), !r.correct());
            }
        }
        GroupBy::ValenceSide => {
            let (means, median) = video_valence_median(preds)?;
            for r in preds {
                let v = r.video.unwrap_or(r.true_label as u16);
                let side = if means[&v] <= median {
                    ValenceSide::Low
                } else {
                    ValenceSide::High
                };
                bump((side as u32, side.to_string()), !r.correct());
            }
            for side in [ValenceSide::Low, ValenceSide::High] {
                if !groups.contains_key(&(side as u32, side.to_string())) {
                    warnings.push(format!("{side} valence group is empty and was omitted"));
                }
            }
        }
    }
    Ok(ErrorReport {
        group_by,
        groups: groups
            .into_iter()
            .map(|((_, group), (wrong, total))| GroupError { group, wrong, total })
            .collect(),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ordering::Strategy;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest, Just, ProptestConfig};
    use proptest::strategy::Strategy as _;

    // Chi-square(1) upper tail by Simpson quadrature of the normal density.
    fn chi2_sf_quadrature(x: f64) -> f64 {
        let a = x.sqrt();
        let b = a + 12.0;
        let m = 20_000;
        let h = (b - a) / m as f64;
        let phi = |t: f64| (-t * t / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut s = phi(a) + phi(b);
        for i in 1..m {
            s += phi(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        2.0 * s * h / 3.0
    }

    // Direct enumeration of all windows and all cells under them.
    fn brute_force(mask: &[bool], n: usize, s: usize) -> (f64, usize, usize) {
        let h = (s / 2) as isize;
        let (mut sum, mut zero, mut marked) = (0.0, 0, 0);
        for r in 0..n as isize {
            for c in 0..n as isize {
                let mut k = 0;
                for dr in -h..=h {
                    for dc in -h..=h {
                        let (rr, cc) = (r + dr, c + dc);
                        if rr >= 0 && cc >= 0 && rr < n as isize && cc < n as isize && mask[(rr * n as isize + cc) as usize] {
                            k += 1;
                        }
                    }
                }
                sum += k as f64 / (s * s) as f64;
                marked += k;
                zero += (k == 0) as usize;
            }
        }
        (sum / (n * n - zero) as f64, zero, marked)
    }

    #[test]
    fn published_tables() {
        let pcc = ValencePairSet::published(Measure::Pcc).unwrap();
        assert_eq!((pcc.low.len(), pcc.high.len()), (6, 11));
        let plv = ValencePairSet::published(Measure::Plv).unwrap();
        assert_eq!((plv.low.len(), plv.high.len()), (22, 11));
        assert!(ValencePairSet::published(Measure::Te).is_none());
        let layout = ElectrodeLayout::canonical();
        for set in [pcc, plv] {
            for side in [ValenceSide::Low, ValenceSide::High] {
                assert_eq!(set.indices(side, &layout).unwrap().len(), set.side(side).len());
            }
        }
    }

    #[test]
    fn unknown_label_is_label_error() {
        let layout = ElectrodeLayout::canonical_subset(&["Fp1", "Fp2", "F7"]).unwrap();
        let pcc = ValencePairSet::published(Measure::Pcc).unwrap();
        assert!(matches!(pcc.indices(ValenceSide::Low, &layout), Err(MetricsError::Label(_))));
    }

    #[test]
    fn four_of_nine_window() {
        // a 3 × 3 mask with four marked cells: the centre window sees all of them
        let mut mask = vec![false; 9];
        for i in [0, 2, 6, 8] {
            mask[i] = true;
        }
        let h = 1;
        let centre: usize = (0..3).flat_map(|r| (0..3).map(move |c| (r, c))).filter(|&(r, c)| {
            (r as isize - 1).abs() <= h && (c as isize - 1).abs() <= h && mask[r * 3 + c]
        }).count();
        assert_eq!(centre as f64 / 9.0, 4.0 / 9.0);
        let st = window_stats(&mask, 3, 3).unwrap();
        // corners see 1 each, edges 2 each, centre 4
        assert_eq!(st.marked_total, 4 + 4 * 2 + 4);
        assert_eq!(st.empty_windows, 0);
    }

    #[test]
    fn single_cell_in_six_by_six() {
        let mut mask = vec![false; 36];
        mask[2 * 6 + 2] = true;
        let st = window_stats(&mask, 6, 3).unwrap();
        assert_eq!(st.windows, 36);
        assert_eq!(st.empty_windows, 27);
        assert_abs_diff_eq!(st.concentrativeness().unwrap(), 1.0 / 9.0, epsilon = 1e-15);
    }

    #[test]
    fn full_mask_matches_oracle() {
        let mask = vec![true; 49];
        for s in [1, 3, 5] {
            let c = window_stats(&mask, 7, s).unwrap().concentrativeness().unwrap();
            assert_abs_diff_eq!(c, brute_force(&mask, 7, s).0, epsilon = 1e-14);
        }
        assert_eq!(window_stats(&mask, 7, 1).unwrap().concentrativeness().unwrap(), 1.0);
    }

    #[test]
    fn kernel_and_empty_errors() {
        let mask = vec![false; 16];
        assert!(matches!(window_stats(&mask, 4, 3).unwrap().concentrativeness(), Err(MetricsError::EmptyIncidence)));
        assert!(matches!(window_stats(&mask, 4, 2), Err(MetricsError::InvalidKernel(2))));
        assert!(matches!(window_stats(&mask, 4, 0), Err(MetricsError::InvalidKernel(0))));
        let o = ElectrodeOrder::identity(4);
        assert!(matches!(concentrativeness(&o, &[(1, 1)], 3), Err(MetricsError::InvalidPair(1, 1))));
        assert!(matches!(concentrativeness(&o, &[(1, 4)], 3), Err(MetricsError::InvalidPair(1, 4))));
    }

    #[test]
    fn mask_is_mirrored_under_order() {
        let o = ElectrodeOrder::new(vec![2, 0, 1], Strategy::Dist, None).unwrap();
        let m = incidence_mask(&o, &[(0, 2)]).unwrap();
        // electrode 2 sits at position 0, electrode 0 at position 1
        let marked: Vec<usize> = (0..9).filter(|&i| m[i]).collect();
        assert_eq!(marked, vec![1, 3]);
    }

    #[test]
    fn mcnemar_examples() {
        let r = mcnemar_counts(10, 2, false).unwrap();
        assert_abs_diff_eq!(r.chi2, 64.0 / 12.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.p, chi2_sf_quadrature(r.chi2), epsilon = 1e-9);
        assert_abs_diff_eq!(r.p, 0.0209, epsilon = 1e-3);
        let r = mcnemar_counts(0, 5, false).unwrap();
        assert_abs_diff_eq!(r.chi2, 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.p, chi2_sf_quadrature(5.0), epsilon = 1e-9);
        assert_abs_diff_eq!(r.p, 0.0253, epsilon = 1e-3);
        let r = mcnemar_counts(4, 4, false).unwrap();
        assert_eq!((r.chi2, r.p), (0.0, 1.0));
        assert_abs_diff_eq!(mcnemar_counts(10, 2, true).unwrap().chi2, 49.0 / 12.0, epsilon = 1e-12);
        assert!(matches!(mcnemar_counts(0, 0, false), Err(MetricsError::NoDiscordance)));
    }

    fn system(correct: &[bool]) -> Vec<PredictionRecord> {
        correct
            .iter()
            .enumerate()
            .map(|(i, &ok)| PredictionRecord::new(format!("i{i}"), i as u32 % 40, if ok { i as u32 % 40 } else { 99 }))
            .collect()
    }

    #[test]
    fn mcnemar_from_records_and_symmetry() {
        let mut a = vec![true; 30];
        let mut b = vec![true; 30];
        b[..10].fill(false);
        a[10..12].fill(false);
        a[20] = false;
        b[20] = false;
        let (sa, sb) = (system(&a), system(&b));
        let ab = mcnemar(&sa, &sb, false).unwrap();
        assert_eq!((ab.b_count, ab.c_count), (10, 2));
        assert_eq!(ab.chi2, mcnemar(&sb, &sa, false).unwrap().chi2);
        assert!(matches!(mcnemar(&sa, &sa, false), Err(MetricsError::NoDiscordance)));
        let mut misaligned = sb.clone();
        misaligned.swap(0, 1);
        assert!(matches!(mcnemar(&sa, &misaligned, false), Err(MetricsError::Alignment(_))));
        assert!(matches!(mcnemar(&sa, &sb[1..], false), Err(MetricsError::Alignment(_))));
    }

    // Exact two-sided p by enumerating every sign assignment.
    fn enumerate_p(ranks: &[f64], w_obs: f64) -> f64 {
        let n = ranks.len();
        let (mut le, mut ge) = (0u64, 0u64);
        for mask in 0u32..(1 << n) {
            let w: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
            le += (w <= w_obs + 1e-9) as u64;
            ge += (w >= w_obs - 1e-9) as u64;
        }
        (2.0 * le.min(ge) as f64 / (1u64 << n) as f64).min(1.0)
    }

    #[test]
    fn wilcoxon_all_positive_eight() {
        let xs = [1.3, 2.1, 0.4, 3.3, 1.8, 0.9, 2.7, 5.0];
        let r = wilcoxon_one_sample(&xs, 0.0, WilcoxonMethod::Auto).unwrap();
        assert_eq!(r.w, 36.0);
        assert!(r.exact);
        let oracle = enumerate_p(&(1..=8).map(f64::from).collect::<Vec<_>>(), 36.0);
        assert_abs_diff_eq!(oracle, 2.0 / 256.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.p, oracle, epsilon = 1e-12);
        let normal = wilcoxon_one_sample(&xs, 0.0, WilcoxonMethod::Normal { continuity: false }).unwrap();
        assert_abs_diff_eq!(normal.p, 0.0117, epsilon = 1e-4);
        let cc = wilcoxon_one_sample(&xs, 0.0, WilcoxonMethod::Normal { continuity: true }).unwrap();
        assert!(cc.p > normal.p);
    }

    #[test]
    fn wilcoxon_symmetric_and_guards() {
        let xs = [-3.0, -2.0, -1.0, 1.0, 2.0, 3.0, 0.0];
        let r = wilcoxon_one_sample(&xs, 0.0, WilcoxonMethod::Auto).unwrap();
        assert!(r.p >= 0.9);
        assert_eq!(r.n, 6);
        let r = wilcoxon_one_sample(&xs, 0.0, WilcoxonMethod::Normal { continuity: true }).unwrap();
        assert!(r.p >= 0.9);
        assert!(matches!(wilcoxon_one_sample(&[2.0; 9], 2.0, WilcoxonMethod::Auto), Err(MetricsError::NoVariation)));
        assert!(matches!(
            wilcoxon_one_sample(&[1.0, 2.0, 3.0, 4.0], 0.0, WilcoxonMethod::Auto),
            Err(MetricsError::Insufficient(4))
        ));
    }

    #[test]
    fn wilcoxon_ties_fall_back_to_normal() {
        let xs = [1.0, 1.0, -1.0, 2.0, 2.0, 3.0, 4.0];
        let r = wilcoxon_one_sample(&xs, 0.0, WilcoxonMethod::Auto).unwrap();
        assert!(!r.exact);
        // ranks of |d|: 1,1,1 -> 2 ; 2,2 -> 4.5 ; 3 -> 6 ; 4 -> 7
        assert_eq!(r.w, 2.0 + 2.0 + 4.5 + 4.5 + 6.0 + 7.0);
        let (ranks, _) = average_ranks(&xs.map(f64::abs));
        // normal approximation against the tie-aware exact enumeration
        assert_abs_diff_eq!(r.p, enumerate_p(&ranks, r.w), epsilon = 0.05);
        assert!(matches!(wilcoxon_one_sample(&xs, 0.0, WilcoxonMethod::Exact), Err(MetricsError::Degenerate(_))));
    }

    #[test]
    fn spearman_basics() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0, 4.0], &[8.0, 6.0, 4.0, 2.0]).unwrap(), -1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[1.0, 5.0, 9.0]).unwrap(), 1.0);
        // ranks (1,2,3) vs (2,1,3): 1 - 6*2/(3*8)
        assert_abs_diff_eq!(spearman(&[1.0, 2.0, 3.0], &[5.0, 4.0, 9.0]).unwrap(), 0.5, epsilon = 1e-12);
        assert!(spearman(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    fn labelled(i: usize, subject: u16, video: u16, valence: f32, ok: bool) -> PredictionRecord {
        PredictionRecord {
            instance_id: format!("s{subject}v{video}n{i}"),
            true_label: video as u32,
            predicted: if ok { video as u32 } else { (video as u32 + 1) % 40 },
            subject: Some(subject),
            video: Some(video),
            valence: Some(valence),
        }
    }

    #[test]
    fn error_report_groups() {
        let mut recs = Vec::new();
        for s in 1..=4u16 {
            for v in 0..40u16 {
                recs.push(labelled(recs.len(), s, v, v as f32 / 4.0, s != 3));
            }
        }
        let by_s = error_report(&recs, GroupBy::Subject).unwrap();
        let rates: Vec<f64> = by_s.groups.iter().map(GroupError::rate).collect();
        assert_eq!(rates, vec![0.0, 0.0, 1.0, 0.0]);
        let all_ok: Vec<_> = recs.iter().map(|r| PredictionRecord { predicted: r.true_label, ..r.clone() }).collect();
        for g in [GroupBy::Subject, GroupBy::Video, GroupBy::ValenceSide] {
            assert!(error_report(&all_ok, g).unwrap().groups.iter().all(|e| e.wrong == 0));
        }
    }

    #[test]
    fn error_report_matches_video_mask() {
        // video v is wrong for the first (v % 5) of 4 subjects
        let mut recs = Vec::new();
        for v in 0..40u16 {
            for s in 0..4u16 {
                recs.push(labelled(recs.len(), s, v, v as f32, s >= (v % 5)));
            }
        }
        let rep = error_report(&recs, GroupBy::Video).unwrap();
        assert_eq!(rep.groups.len(), 40);
        for g in &rep.groups {
            let v: u16 = g.group.parse().unwrap();
            assert_eq!((g.wrong, g.total), ((v % 5).min(4) as usize, 4));
        }
        let side = error_report(&recs, GroupBy::ValenceSide).unwrap();
        assert_eq!(side.groups.iter().map(|g| g.total).collect::<Vec<_>>(), vec![80, 80]);
        let low_wrong: usize = (0..20u16).map(|v| (v % 5) as usize).sum();
        assert_eq!(side.groups.iter().find(|g| g.group == "low").unwrap().wrong, low_wrong);
    }

    #[test]
    fn missing_metadata() {
        let recs = system(&[true, false]);
        assert!(matches!(error_report(&recs, GroupBy::Subject), Err(MetricsError::MissingMetadata("subject"))));
        assert_eq!(error_report(&recs, GroupBy::Video).unwrap().groups.len(), 2);
    }

    #[test]
    fn prediction_csv_round_trip() {
        for recs in [system(&[true, false, true]), vec![labelled(0, 1, 2, 6.5, false), labelled(1, 3, 4, 2.25, true)]] {
            let mut buf = Vec::new();
            write_predictions(&recs, &mut buf).unwrap();
            assert_eq!(read_predictions(buf.as_slice()).unwrap(), recs);
        }
        let text = "predicted,instance_id,true\n3,a,3\n\n4,b,2\n";
        let r = read_predictions(text.as_bytes()).unwrap();
        assert_eq!(r, vec![PredictionRecord::new("a", 3, 3), PredictionRecord::new("b", 2, 4)]);
        assert!(matches!(read_predictions("id,true\n".as_bytes()), Err(MetricsError::Format(_))));
        assert!(matches!(read_predictions("instance_id,true,predicted\na,1\n".as_bytes()), Err(MetricsError::Format(_))));
        assert!(matches!(read_predictions("instance_id,true,predicted\na,x,1\n".as_bytes()), Err(MetricsError::Format(_))));
    }

    fn order_and_mask() -> impl proptest::strategy::Strategy<Value = (usize, Vec<usize>, Vec<(usize, usize)>, usize)> {
        (2usize..=12).prop_flat_map(|n| {
            (
                Just(n),
                Just((0..n).collect::<Vec<_>>()).prop_shuffle(),
                proptest::collection::vec((0..n, 0..n), 1..(n * 2)),
                proptest::sample::select(vec![1usize, 3, 5]),
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn concentrativeness_equals_brute_force((n, perm, raw, s) in order_and_mask()) {
            let pairs: Vec<(usize, usize)> = raw.into_iter().filter(|(a, b)| a != b).collect();
            prop_assume_nonempty(&pairs)?;
            let o = ElectrodeOrder::new(perm, Strategy::DataGlobal, None).unwrap();
            let mask = incidence_mask(&o, &pairs).unwrap();
            let st = window_stats(&mask, n, s).unwrap();
            let (c_bf, zero, marked) = brute_force(&mask, n, s);
            prop_assert_eq!(st.empty_windows, zero);
            prop_assert_eq!(st.marked_total, marked);
            let c = concentrativeness(&o, &pairs, s).unwrap();
            prop_assert!((c - c_bf).abs() < 1e-12);
            prop_assert!(c > 0.0 && c <= 1.0);
            if s == 1 {
                prop_assert_eq!(c, 1.0);
            }
            // transposed mask gives the same value
            let t: Vec<bool> = (0..n * n).map(|i| mask[(i % n) * n + i / n]).collect();
            prop_assert_eq!(window_stats(&t, n, s).unwrap(), st);
        }
    }

    fn prop_assume_nonempty(p: &[(usize, usize)]) -> Result<(), proptest::test_runner::TestCaseError> {
        if p.is_empty() {
            Err(proptest::test_runner::TestCaseError::reject("no pairs"))
        } else {
            Ok(())
        }
    }
}
