//! Recordings, segmentation into overlapping windows, file I/O, and
//! synthetic recordings with planted connectivity.

mod format;
mod layout;
mod synth;

pub use format::{load_csv, load_recording, read_recording, save_recording, write_recording};
pub use layout::{ElectrodeLayout, Hemisphere, CANONICAL_LABELS};
pub use synth::{synth_generate, PlantedStructure, SynthSpec};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("format error: {0}")]
    Format(String),
    #[error("layout error: {0}")]
    Layout(String),
    #[error("invalid synthetic spec: {0}")]
    Spec(String),
    #[error("invalid segmentation: {0}")]
    InvalidWindow(String),
    #[error("window of {window} samples does not fit a recording of {len} samples")]
    EmptySegmentation { window: usize, len: usize },
}

/// Per-trial metadata carried through the pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordingLabels {
    pub subject_id: u16,
    pub video_id: u16,
    pub valence: f32,
    pub arousal: f32,
}

/// Multichannel recording with channel-major `f32` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct EegRecording {
    layout: ElectrodeLayout,
    sample_rate: f64,
    len: usize,
    samples: Vec<f32>,
    labels: Option<RecordingLabels>,
}

impl EegRecording {
    /// `channels` holds one sample vector per electrode in layout order.
    pub fn new(
        layout: ElectrodeLayout,
        sample_rate: f64,
        channels: Vec<Vec<f32>>,
        labels: Option<RecordingLabels>,
    ) -> Result<Self, SignalError> {
        if channels.len() != layout.len() {
            return Err(SignalError::Format(format!(
                "{} channels for a layout of {} electrodes",
                channels.len(),
                layout.len()
            )));
        }
        let len = channels[0].len();
        if let Some((i, c)) = channels.iter().enumerate().find(|(_, c)| c.len() != len) {
            return Err(SignalError::Format(format!(
                "channel {i} has {} samples, expected {len}",
                c.len()
            )));
        }
        let samples = channels.into_iter().flatten().collect();
        Self::from_flat(layout, sample_rate, len, samples, labels)
    }

    pub(crate) fn from_flat(
        layout: ElectrodeLayout,
        sample_rate: f64,
        len: usize,
        samples: Vec<f32>,
        labels: Option<RecordingLabels>,
    ) -> Result<Self, SignalError> {
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(SignalError::Format(format!("invalid sample rate {sample_rate}")));
        }
        if len < 2 {
            return Err(SignalError::Format(format!(
                "recording needs at least 2 samples per channel, got {len}"
            )));
        }
        if samples.len() != len * layout.len() {
            return Err(SignalError::Format("sample buffer size mismatch".into()));
        }
        Ok(Self {
            layout,
            sample_rate,
            len,
            samples,
            labels,
        })
    }

    pub fn layout(&self) -> &ElectrodeLayout {
        &self.layout
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn n_channels(&self) -> usize {
        self.layout.len()
    }

    /// Samples per channel (T).
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn channel(&self, i: usize) -> &[f32] {
        &self.samples[i * self.len..(i + 1) * self.len]
    }

    pub fn labels(&self) -> Option<&RecordingLabels> {
        self.labels.as_ref()
    }

    pub fn with_labels(mut self, labels: Option<RecordingLabels>) -> Self {
        self.labels = labels;
        self
    }
}

/// A window into a recording.
#[derive(Debug, Clone, Copy)]
pub struct Segment<'a> {
    recording: &'a EegRecording,
    start: usize,
    len: usize,
}

impl<'a> Segment<'a> {
    pub fn new(recording: &'a EegRecording, start: usize, len: usize) -> Option<Self> {
        (start + len <= recording.len()).then_some(Self {
            recording,
            start,
            len,
        })
    }

    /// The whole recording as one segment.
    pub fn whole(recording: &'a EegRecording) -> Self {
        Self {
            recording,
            start: 0,
            len: recording.len(),
        }
    }

    pub fn recording(&self) -> &'a EegRecording {
        self.recording
    }

    pub fn start_sample(&self) -> usize {
        self.start
    }

    pub fn len_samples(&self) -> usize {
        self.len
    }

    pub fn labels(&self) -> Option<&'a RecordingLabels> {
        self.recording.labels()
    }

    pub fn n_channels(&self) -> usize {
        self.recording.n_channels()
    }

    pub fn channel(&self, i: usize) -> &'a [f32] {
        &self.recording.channel(i)[self.start..self.start + self.len]
    }
}

/// Rounds to the nearest integer with exact halves rounded toward zero.
pub(crate) fn round_half_toward_zero(x: f64) -> f64 {
    let t = x.trunc();
    if (x - t).abs() == 0.5 {
        t
    } else {
        x.round()
    }
}

/// Converts a duration in seconds into a sample count at `rate`.
pub fn seconds_to_samples(seconds: f64, rate: f64) -> usize {
    round_half_toward_zero(seconds * rate).max(0.0) as usize
}

/// Cuts a recording into windows of `window_s` seconds overlapping by
/// `overlap_s` seconds. Windows start at multiples of
/// `hop = round((window_s - overlap_s) * rate)` and lie fully inside the
/// recording.
pub fn segment(
    rec: &EegRecording,
    window_s: f64,
    overlap_s: f64,
) -> Result<Vec<Segment<'_>>, SignalError> {
    if !(window_s.is_finite() && overlap_s.is_finite() && overlap_s >= 0.0 && overlap_s < window_s)
    {
        return Err(SignalError::InvalidWindow(format!(
            "need 0 <= overlap < window, got window {window_s} s, overlap {overlap_s} s"
        )));
    }
    let rate = rec.sample_rate();
    let window = seconds_to_samples(window_s, rate);
    let hop = seconds_to_samples(window_s - overlap_s, rate);
    if window < 2 {
        return Err(SignalError::InvalidWindow(format!(
            "window of {window} samples is shorter than 2"
        )));
    }
    if hop == 0 {
        return Err(SignalError::InvalidWindow(format!(
            "hop of {} s rounds to zero samples",
            window_s - overlap_s
        )));
    }
    let t = rec.len();
    if window > t {
        return Err(SignalError::EmptySegmentation { window, len: t });
    }
    let count = (t - window) / hop + 1;
    Ok((0..count)
        .map(|k| Segment {
            recording: rec,
            start: k * hop,
            len: window,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_recording(rate: f64, seconds: f64) -> EegRecording {
        let n = seconds_to_samples(seconds, rate);
        let layout = ElectrodeLayout::canonical_subset(&["Fp1", "Fp2"]).unwrap();
        EegRecording::new(layout, rate, vec![vec![0.0; n], vec![1.0; n]], None).unwrap()
    }

    #[test]
    fn sixty_seconds_gives_115_windows() {
        let rec = flat_recording(128.0, 60.0);
        assert_eq!(rec.len(), 7680);
        let segs = segment(&rec, 3.0, 2.5).unwrap();
        assert_eq!(segs.len(), 115);
        assert_eq!(segs[1].start_sample(), 64);
        let last = segs.last().unwrap();
        assert_eq!(last.start_sample() + last.len_samples(), 7680);
    }

    #[test]
    fn exact_fit_gives_single_window() {
        let rec = flat_recording(128.0, 3.0);
        let segs = segment(&rec, 3.0, 2.5).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].start_sample(), 0);
    }

    #[test]
    fn ten_hz_enumeration() {
        let rec = flat_recording(10.0, 10.0);
        let starts: Vec<_> = segment(&rec, 4.0, 2.0)
            .unwrap()
            .iter()
            .map(|s| s.start_sample())
            .collect();
        assert_eq!(starts, vec![0, 20, 40, 60]);
    }

    #[test]
    fn window_longer_than_recording() {
        let rec = flat_recording(128.0, 2.0);
        assert!(matches!(
            segment(&rec, 3.0, 0.0),
            Err(SignalError::EmptySegmentation { window: 384, len: 256 })
        ));
    }

    #[test]
    fn invalid_overlap() {
        let rec = flat_recording(128.0, 5.0);
        assert!(matches!(segment(&rec, 3.0, 3.0), Err(SignalError::InvalidWindow(_))));
        assert!(matches!(segment(&rec, 3.0, -1.0), Err(SignalError::InvalidWindow(_))));
        assert!(matches!(segment(&rec, 0.001, 0.0), Err(SignalError::InvalidWindow(_))));
    }

    #[test]
    fn half_rounds_toward_zero() {
        assert_eq!(round_half_toward_zero(2.5), 2.0);
        assert_eq!(round_half_toward_zero(2.6), 3.0);
        assert_eq!(round_half_toward_zero(3.5), 3.0);
        assert_eq!(round_half_toward_zero(2.4), 2.0);
        // hop of 0.25 s at 10 Hz is 2.5 samples -> 2
        assert_eq!(seconds_to_samples(0.25, 10.0), 2);
    }

    #[test]
    fn segment_channel_view() {
        let layout = ElectrodeLayout::canonical_subset(&["Fp1", "Fp2"]).unwrap();
        let rec = EegRecording::new(
            layout,
            1.0,
            vec![(0..10).map(|v| v as f32).collect(), vec![0.0; 10]],
            None,
        )
        .unwrap();
        let s = Segment::new(&rec, 3, 4).unwrap();
        assert_eq!(s.channel(0), &[3.0, 4.0, 5.0, 6.0]);
        assert!(Segment::new(&rec, 7, 4).is_none());
    }

    #[test]
    fn ragged_channels_rejected() {
        let layout = ElectrodeLayout::canonical_subset(&["Fp1", "Fp2"]).unwrap();
        let r = EegRecording::new(layout, 128.0, vec![vec![0.0; 4], vec![0.0; 3]], None);
        assert!(matches!(r, Err(SignalError::Format(_))));
    }
}
