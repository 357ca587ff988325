//! Sub-band decomposition with linear-phase FIR filters, and instantaneous
//! phase from the discrete analytic signal.

use std::f64::consts::PI;

use rayon::prelude::*;
use rustfft::{num_complex::Complex64, FftPlanner};
use thiserror::Error;

use crate::signal_io::{RecordingLabels, Segment};

#[derive(Debug, Error, PartialEq)]
pub enum FilterError {
    #[error("segment of {len} samples is shorter than the {taps}-tap filter")]
    SegmentTooShort { len: usize, taps: usize },
    #[error("invalid band {name}: [{lo}, {hi}] Hz at Nyquist {nyquist} Hz")]
    InvalidBand {
        name: String,
        lo: f64,
        hi: f64,
        nyquist: f64,
    },
    #[error("phase undefined for an all-zero signal")]
    PhaseUndefined,
    #[error("analytic signal needs at least 4 samples, got {0}")]
    TooShort(usize),
}

/// A named pass band `[lo, hi]` in Hz. `lo = 0` denotes a low-pass band.
#[derive(Debug, Clone, PartialEq)]
pub struct BandDefinition {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

impl BandDefinition {
    pub fn new(name: impl Into<String>, lo: f64, hi: f64) -> Self {
        Self {
            name: name.into(),
            lo,
            hi,
        }
    }

    pub fn validate(&self, sample_rate: f64) -> Result<(), FilterError> {
        let nyquist = sample_rate / 2.0;
        if self.lo >= 0.0 && self.lo < self.hi && self.hi <= nyquist {
            Ok(())
        } else {
            Err(FilterError::InvalidBand {
                name: self.name.clone(),
                lo: self.lo,
                hi: self.hi,
                nyquist,
            })
        }
    }
}

const CANONICAL_BANDS: [(&str, f64, f64); 10] = [
    ("delta", 0.0, 3.0),
    ("theta", 4.0, 7.0),
    ("low-alpha", 8.0, 9.5),
    ("high-alpha", 10.5, 12.0),
    ("alpha", 8.0, 12.0),
    ("low-beta", 13.0, 16.0),
    ("mid-beta", 17.0, 20.0),
    ("high-beta", 21.0, 29.0),
    ("beta", 13.0, 29.0),
    ("gamma", 30.0, 50.0),
];

/// The ten canonical bands in depth order, upper edges clamped to
/// `0.999 · Nyquist`. At very low rates a clamped band can end up with
/// `lo >= hi`; [`apply_filterbank`] rejects such a band.
pub fn canonical_bank(sample_rate: f64) -> Vec<BandDefinition> {
    let limit = 0.999 * sample_rate / 2.0;
    CANONICAL_BANDS
        .iter()
        .map(|&(name, lo, hi)| BandDefinition::new(name, lo, hi.min(limit)))
        .collect()
}

/// Tap count for a given rate: 129 at 128 Hz, scaled proportionally and
/// forced odd.
pub fn tap_count(sample_rate: f64) -> usize {
    let t = (129.0 * sample_rate / 128.0).round().max(3.0) as usize;
    if t % 2 == 0 {
        t + 1
    } else {
        t
    }
}

fn hamming(taps: usize) -> impl Iterator<Item = f64> {
    let m = (taps - 1) as f64;
    (0..taps).map(move |i| 0.54 - 0.46 * (2.0 * PI * i as f64 / m).cos())
}

fn windowed_sinc_lowpass(cutoff_hz: f64, sample_rate: f64, taps: usize) -> Vec<f64> {
    let fc = cutoff_hz / sample_rate;
    let mid = (taps / 2) as f64;
    hamming(taps)
        .enumerate()
        .map(|(i, w)| {
            let n = i as f64 - mid;
            let sinc = if n == 0.0 {
                2.0 * fc
            } else {
                (2.0 * PI * fc * n).sin() / (PI * n)
            };
            sinc * w
        })
        .collect()
}

/// Symmetric (linear-phase) FIR filter.
#[derive(Debug, Clone, PartialEq)]
pub struct FirFilter {
    taps: Vec<f64>,
}

impl FirFilter {
    /// Hamming-windowed sinc band-pass (low-pass when `lo == 0`), scaled to
    /// unit gain at the band centre (DC for a low-pass).
    pub fn design(band: &BandDefinition, sample_rate: f64) -> Result<Self, FilterError> {
        band.validate(sample_rate)?;
        let taps = tap_count(sample_rate);
        let mut h = windowed_sinc_lowpass(band.hi, sample_rate, taps);
        let centre = if band.lo > 0.0 {
            let low = windowed_sinc_lowpass(band.lo, sample_rate, taps);
            h.iter_mut().zip(&low).for_each(|(a, b)| *a -= b);
            0.5 * (band.lo + band.hi)
        } else {
            0.0
        };
        let filter = Self { taps: h };
        let g = filter.gain_at(centre, sample_rate);
        Ok(Self {
            taps: filter.taps.iter().map(|v| v / g).collect(),
        })
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    /// Magnitude response at `freq_hz`.
    pub fn gain_at(&self, freq_hz: f64, sample_rate: f64) -> f64 {
        let w = 2.0 * PI * freq_hz / sample_rate;
        let (re, im) = self
            .taps
            .iter()
            .enumerate()
            .fold((0.0, 0.0), |(re, im), (n, h)| {
                let a = w * n as f64;
                (re + h * a.cos(), im - h * a.sin())
            });
        re.hypot(im)
    }

    /// Zero-phase output of the same length as `x`. Both ends are extended by
    /// half the filter length with point reflection about the end sample
    /// (`2·x[0] − x[i]`), which keeps the signal and its slope continuous.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>, FilterError> {
        let taps = self.taps.len();
        if x.len() < taps {
            return Err(FilterError::SegmentTooShort {
                len: x.len(),
                taps,
            });
        }
        let padded = reflect_pad(x, taps / 2);
        // taps are symmetric, so correlation equals convolution
        Ok(padded
            .windows(taps)
            .map(|w| w.iter().zip(&self.taps).map(|(a, b)| a * b).sum())
            .collect())
    }
}

/// Extends both ends by `pad` samples of point reflection about the end sample.
fn reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    let mut padded = Vec::with_capacity(n + 2 * pad);
    let (first, last) = (x[0], x[n - 1]);
    padded.extend((1..=pad).rev().map(|i| 2.0 * first - x[i]));
    padded.extend_from_slice(x);
    padded.extend((1..=pad).map(|i| 2.0 * last - x[n - 1 - i]));
    padded
}

thread_local! {
    static PLANNER: std::cell::RefCell<FftPlanner<f64>> = std::cell::RefCell::new(FftPlanner::new());
}

fn fft(buf: &mut [Complex64], inverse: bool) {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        let plan = if inverse {
            p.plan_fft_inverse(buf.len())
        } else {
            p.plan_fft_forward(buf.len())
        };
        plan.process(buf);
    });
}

/// Where a [`BandedSegment`] came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentInfo {
    pub start_sample: usize,
    pub len_samples: usize,
    pub labels: Option<RecordingLabels>,
}

impl From<&Segment<'_>> for SegmentInfo {
    fn from(s: &Segment<'_>) -> Self {
        Self {
            start_sample: s.start_sample(),
            len_samples: s.len_samples(),
            labels: s.labels().copied(),
        }
    }
}

/// Filtered samples indexed `[band][channel][t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedSegment {
    bands: Vec<BandDefinition>,
    data: Vec<Vec<Vec<f64>>>,
    info: SegmentInfo,
    sample_rate: f64,
}

impl BandedSegment {
    /// Wraps pre-filtered data, e.g. raw broadband signals as a single band.
    pub fn from_parts(
        bands: Vec<BandDefinition>,
        data: Vec<Vec<Vec<f64>>>,
        info: SegmentInfo,
        sample_rate: f64,
    ) -> Self {
        assert_eq!(bands.len(), data.len(), "one data block per band");
        Self {
            bands,
            data,
            info,
            sample_rate,
        }
    }

    pub fn bands(&self) -> &[BandDefinition] {
        &self.bands
    }

    pub fn band(&self, b: usize) -> &[Vec<f64>] {
        &self.data[b]
    }

    pub fn n_channels(&self) -> usize {
        self.data.first().map_or(0, Vec::len)
    }

    pub fn info(&self) -> &SegmentInfo {
        &self.info
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }
}

/// Filters every channel of `seg` through every band of `bank`.
pub fn apply_filterbank(
    seg: &Segment<'_>,
    bank: &[BandDefinition],
) -> Result<BandedSegment, FilterError> {
    let rate = seg.recording().sample_rate();
    let filters = bank
        .iter()
        .map(|b| FirFilter::design(b, rate))
        .collect::<Result<Vec<_>, _>>()?;
    let channels: Vec<Vec<f64>> = (0..seg.n_channels())
        .map(|c| seg.channel(c).iter().map(|&v| f64::from(v)).collect())
        .collect();
    let n = seg.len_samples();
    let taps = tap_count(rate);
    if n < taps {
        return Err(FilterError::SegmentTooShort { len: n, taps });
    }
    // Same result as FirFilter::apply: circular convolution over the padded
    // length is exact on the n outputs that never see the wrap-around.
    let l = n + taps - 1;
    let spectra: Vec<Vec<Complex64>> = filters
        .iter()
        .map(|f| {
            let mut h = vec![Complex64::new(0.0, 0.0); l];
            for (d, &t) in h.iter_mut().zip(f.taps()) {
                d.re = t;
            }
            fft(&mut h, false);
            h
        })
        .collect();
    let scale = 1.0 / l as f64;
    let per_channel: Vec<Vec<Vec<f64>>> = channels
        .par_iter()
        .map(|x| {
            let mut p: Vec<Complex64> = reflect_pad(x, taps / 2)
                .into_iter()
                .map(|v| Complex64::new(v, 0.0))
                .collect();
            fft(&mut p, false);
            spectra
                .iter()
                .map(|h| {
                    let mut y: Vec<Complex64> = p.iter().zip(h).map(|(a, b)| a * b).collect();
                    fft(&mut y, true);
                    y[taps - 1..].iter().map(|v| v.re * scale).collect()
                })
                .collect()
        })
        .collect();
    let mut data = vec![Vec::with_capacity(channels.len()); filters.len()];
    for ch in per_channel {
        for (b, y) in ch.into_iter().enumerate() {
            data[b].push(y);
        }
    }
    Ok(BandedSegment {
        bands: bank.to_vec(),
        data,
        info: SegmentInfo::from(seg),
        sample_rate: rate,
    })
}

/// Samples at each end of a phase series affected by FFT edge effects. They
/// are kept in the series but are less reliable.
pub const PHASE_EDGE_SAMPLES: usize = 64;

/// Discrete analytic signal via the one-sided spectrum.
pub fn analytic_signal(x: &[f64]) -> Result<Vec<Complex64>, FilterError> {
    let n = x.len();
    if n < 4 {
        return Err(FilterError::TooShort(n));
    }
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft(&mut buf, false);
    // keep DC (and Nyquist for even n), double positive, zero negative
    let half = n / 2;
    for (k, v) in buf.iter_mut().enumerate().skip(1) {
        if k < half || (k == half && n % 2 == 1) {
            *v *= 2.0;
        } else if k > half {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    fft(&mut buf, true);
    let scale = 1.0 / n as f64;
    buf.iter_mut().for_each(|v| *v *= scale);
    Ok(buf)
}

/// Instantaneous phase in `(-π, π]`.
pub fn analytic_phase(x: &[f64]) -> Result<Vec<f64>, FilterError> {
    if x.len() >= 4 && x.iter().all(|&v| v == 0.0) {
        return Err(FilterError::PhaseUndefined);
    }
    Ok(analytic_signal(x)?
        .into_iter()
        .map(|z| {
            let p = z.arg();
            if p == -PI {
                PI
            } else {
                p
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal_io::{EegRecording, ElectrodeLayout};

    const FS: f64 = 128.0;

    fn tone(freq: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| (2.0 * PI * freq * i as f64 / FS).sin())
            .collect()
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    fn band(name: &str) -> BandDefinition {
        canonical_bank(FS).into_iter().find(|b| b.name == name).unwrap()
    }

    fn unwrap(p: &[f64]) -> Vec<f64> {
        let mut out = vec![p[0]];
        for w in p.windows(2) {
            let mut d = w[1] - w[0];
            while d > PI {
                d -= 2.0 * PI;
            }
            while d <= -PI {
                d += 2.0 * PI;
            }
            out.push(out.last().unwrap() + d);
        }
        out
    }

    #[test]
    fn canonical_bank_at_128() {
        let bank = canonical_bank(128.0);
        assert_eq!(bank.len(), 10);
        assert_eq!(bank[9], BandDefinition::new("gamma", 30.0, 50.0));
        assert_eq!(bank[4], BandDefinition::new("alpha", 8.0, 12.0));
        assert!(bank.iter().any(|b| b.name == "low-alpha"));
        assert!(bank.iter().any(|b| b.name == "high-alpha"));
        assert_eq!(canonical_bank(128.0), bank);
    }

    #[test]
    fn canonical_bank_clamps_to_nyquist() {
        let gamma = &canonical_bank(80.0)[9];
        assert!((gamma.hi - 39.96).abs() < 1e-12);
        // 50 Hz sampling leaves no room for gamma
        assert!(matches!(
            FirFilter::design(&canonical_bank(50.0)[9], 50.0),
            Err(FilterError::InvalidBand { .. })
        ));
    }

    #[test]
    fn tap_counts() {
        assert_eq!(tap_count(128.0), 129);
        assert_eq!(tap_count(256.0), 259);
        assert_eq!(tap_count(64.0), 65);
        assert_eq!(tap_count(10.0) % 2, 1);
    }

    #[test]
    fn alpha_tone_passes_gamma_rejects() {
        let x = tone(10.0, 384);
        let alpha = FirFilter::design(&band("alpha"), FS).unwrap().apply(&x).unwrap();
        let gamma = FirFilter::design(&band("gamma"), FS).unwrap().apply(&x).unwrap();
        assert!(rms(&alpha) >= 0.9 * rms(&x));
        assert!(rms(&gamma) < 0.01 * rms(&x));
    }

    #[test]
    fn stopband_attenuation_at_least_40_db() {
        for b in canonical_bank(FS) {
            let f = FirFilter::design(&b, FS).unwrap();
            // sample frequencies at least 4 Hz outside the band
            for i in 0..=640 {
                let freq = i as f64 * 0.1;
                let outside = freq < b.lo - 4.0 || freq > b.hi + 4.0;
                if outside {
                    assert!(
                        f.gain_at(freq, FS) < 0.01,
                        "{} gain {} at {freq} Hz",
                        b.name,
                        f.gain_at(freq, FS)
                    );
                }
            }
        }
    }

    #[test]
    fn zero_in_zero_out() {
        let x = vec![0.0; 384];
        for b in canonical_bank(FS) {
            let y = FirFilter::design(&b, FS).unwrap().apply(&x).unwrap();
            assert!(y.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn two_tones_separate() {
        // compared away from the edge-affected samples
        let n = 384;
        let inner = PHASE_EDGE_SAMPLES..n - PHASE_EDGE_SAMPLES;
        let low = tone(5.0, n);
        let high = tone(40.0, n);
        let sum: Vec<f64> = low.iter().zip(&high).map(|(a, b)| a + b).collect();
        for (name, alone) in [("theta", &low), ("gamma", &high)] {
            let f = FirFilter::design(&band(name), FS).unwrap();
            let mixed = f.apply(&sum).unwrap();
            let single = f.apply(alone).unwrap();
            let err: Vec<f64> = mixed.iter().zip(&single).map(|(a, b)| a - b).collect();
            assert!(rms(&err[inner.clone()]) < 0.05 * rms(&single[inner.clone()]), "{name}");
            // the 5 Hz tone sits 1 Hz inside the theta edge, so about 6% is lost
            assert!(rms(&mixed[inner.clone()]) >= 0.9 * rms(&alone[inner.clone()]), "{name}");
        }
    }

    #[test]
    fn output_is_delay_compensated() {
        // a centered tone in the alpha band keeps its phase
        let x = tone(10.0, 384);
        let y = FirFilter::design(&band("alpha"), FS).unwrap().apply(&x).unwrap();
        let dot: f64 = x[64..320].iter().zip(&y[64..320]).map(|(a, b)| a * b).sum();
        let nx: f64 = x[64..320].iter().map(|a| a * a).sum::<f64>().sqrt();
        let ny: f64 = y[64..320].iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(dot / (nx * ny) > 0.999);
    }

    #[test]
    fn filtering_is_linear() {
        let f = FirFilter::design(&band("beta"), FS).unwrap();
        let x: Vec<f64> = (0..300).map(|i| ((i * 37 % 101) as f64 - 50.0) / 7.0).collect();
        let y: Vec<f64> = (0..300).map(|i| ((i * 13 % 59) as f64 - 29.0) / 3.0).collect();
        let (a, b) = (2.5, -0.75);
        let combo: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let lhs = f.apply(&combo).unwrap();
        let (fx, fy) = (f.apply(&x).unwrap(), f.apply(&y).unwrap());
        for i in 0..lhs.len() {
            let rhs = a * fx[i] + b * fy[i];
            assert!((lhs[i] - rhs).abs() <= 1e-9 * rhs.abs().max(1.0));
        }
    }

    #[test]
    fn short_segment_rejected() {
        let f = FirFilter::design(&band("alpha"), FS).unwrap();
        assert_eq!(
            f.apply(&[0.0; 100]),
            Err(FilterError::SegmentTooShort { len: 100, taps: 129 })
        );
    }

    #[test]
    fn filterbank_shapes() {
        let layout = ElectrodeLayout::canonical_subset(&["Fp1", "Fp2", "Cz"]).unwrap();
        let chans = (0..3)
            .map(|c| (0..384).map(|i| ((i + c) as f32 * 0.3).sin()).collect())
            .collect();
        let rec = EegRecording::new(layout, FS, chans, None).unwrap();
        let seg = Segment::new(&rec, 0, 384).unwrap();
        let bs = apply_filterbank(&seg, &canonical_bank(FS)).unwrap();
        assert_eq!(bs.bands().len(), 10);
        assert_eq!(bs.n_channels(), 3);
        assert!(bs.band(3).iter().all(|c| c.len() == 384));
        let short = Segment::new(&rec, 0, 64).unwrap();
        assert!(matches!(
            apply_filterbank(&short, &canonical_bank(FS)),
            Err(FilterError::SegmentTooShort { .. })
        ));
    }

    #[test]
    fn filterbank_matches_direct_convolution() {
        let layout = ElectrodeLayout::canonical_subset(&["Fp1", "Fp2"]).unwrap();
        let chans: Vec<Vec<f32>> = (0..2)
            .map(|c| (0..300).map(|i| ((i * (c + 3)) % 17) as f32 - 8.0 + (i as f32 * 0.05).cos()).collect())
            .collect();
        let rec = EegRecording::new(layout, FS, chans.clone(), None).unwrap();
        let bank = canonical_bank(FS);
        let bs = apply_filterbank(&Segment::whole(&rec), &bank).unwrap();
        for (b, def) in bank.iter().enumerate() {
            let f = FirFilter::design(def, FS).unwrap();
            for (c, x) in chans.iter().enumerate() {
                let x: Vec<f64> = x.iter().map(|&v| f64::from(v)).collect();
                let direct = f.apply(&x).unwrap();
                for (a, d) in bs.band(b)[c].iter().zip(&direct) {
                    assert!((a - d).abs() < 1e-9, "band {} channel {c}: {a} vs {d}", def.name);
                }
            }
        }
    }

    #[test]
    fn cosine_phase_advances_linearly() {
        let n = 384;
        let x: Vec<f64> = (0..n).map(|i| (2.0 * PI * 8.0 * i as f64 / FS).cos()).collect();
        let p = unwrap(&analytic_phase(&x).unwrap());
        let step = 2.0 * PI * 8.0 / FS;
        for i in PHASE_EDGE_SAMPLES..n - PHASE_EDGE_SAMPLES {
            let expected = p[0] + step * i as f64;
            assert!((p[i] - expected).abs() < 1e-3);
        }
        assert!(p[0].abs() < 1e-3);
    }

    #[test]
    fn sine_lags_cosine_by_quarter_turn() {
        let n = 384;
        let c: Vec<f64> = (0..n).map(|i| (2.0 * PI * 8.0 * i as f64 / FS).cos()).collect();
        let s: Vec<f64> = (0..n).map(|i| (2.0 * PI * 8.0 * i as f64 / FS).sin()).collect();
        let pc = analytic_phase(&c).unwrap();
        let ps = analytic_phase(&s).unwrap();
        for i in 100..280 {
            let mut d = ps[i] - pc[i];
            while d <= -PI {
                d += 2.0 * PI;
            }
            while d > PI {
                d -= 2.0 * PI;
            }
            assert!((d + PI / 2.0).abs() < 1e-3);
        }
        assert_eq!(analytic_phase(&c).unwrap(), pc);
    }

    #[test]
    fn phase_errors() {
        assert_eq!(analytic_phase(&[0.0; 16]), Err(FilterError::PhaseUndefined));
        assert_eq!(analytic_phase(&[1.0, 2.0]), Err(FilterError::TooShort(2)));
        let p = analytic_phase(&[1.0, -1.0, 0.5, 2.0, -3.0]).unwrap();
        assert!(p.iter().all(|v| *v > -PI && *v <= PI));
    }

    #[test]
    fn band_tone_phase_is_monotone() {
        let x = tone(10.0, 384);
        let y = FirFilter::design(&band("alpha"), FS).unwrap().apply(&x).unwrap();
        let p = unwrap(&analytic_phase(&y).unwrap());
        let lo = 384 / 10;
        for w in p[lo..384 - lo].windows(2) {
            assert!(w[1] > w[0]);
        }
    }
}
