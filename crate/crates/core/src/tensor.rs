//! Stacked per-band connectivity tensors and the CTEN v1 file format.
//!
//! CTEN v1 (little-endian):
//!
//! ```text
//! magic    4 bytes  "CTEN"
//! version  u32      1
//! count    u32      number of tensors
//! dims     u32 × 3  rows, cols, bands
//! dtype    u8       1 = f32
//! then per tensor:
//!   subject  u16
//!   video    u16
//!   valence  f32
//!   arousal  f32
//!   payload  f32 × rows × cols × bands, row-major with band fastest
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::connectivity::{ConnectivityMatrix, Measure};
use crate::filterbank::BandDefinition;
use crate::ordering::{apply_order_matrix, ElectrodeOrder, OrderingError};
use crate::signal_io::RecordingLabels;

pub const MAGIC: [u8; 4] = *b"CTEN";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 1;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("band order mismatch: {0}")]
    BandOrder(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Ordering(#[from] OrderingError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// `n × n × bands` connectivity stack for one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectivityTensor {
    n: usize,
    bands: usize,
    data: Vec<f32>,
    pub labels: RecordingLabels,
    /// Order the slices were arranged with, when known.
    pub order: Option<ElectrodeOrder>,
    pub measure: Option<Measure>,
    pub segment_start: Option<usize>,
}

const NO_LABELS: RecordingLabels = RecordingLabels {
    subject_id: 0,
    video_id: 0,
    valence: 0.0,
    arousal: 0.0,
};

impl ConnectivityTensor {
    pub fn from_data(
        n: usize,
        bands: usize,
        data: Vec<f32>,
        labels: RecordingLabels,
    ) -> Result<Self, TensorError> {
        if data.len() != n * n * bands {
            return Err(TensorError::Format(format!(
                "{} values for shape ({n},{n},{bands})",
                data.len()
            )));
        }
        Ok(Self {
            n,
            bands,
            data,
            labels,
            order: None,
            measure: None,
            segment_start: None,
        })
    }

    pub fn zeros(n: usize, bands: usize) -> Self {
        Self::from_data(n, bands, vec![0.0; n * n * bands], NO_LABELS).expect("shape matches")
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.n, self.n, self.bands]
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, band: usize) -> usize {
        (row * self.n + col) * self.bands + band
    }

    pub fn get(&self, row: usize, col: usize, band: usize) -> f32 {
        self.data[self.index(row, col, band)]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// One band as a row-major `n × n` slice copy.
    pub fn band_slice(&self, band: usize) -> Vec<f32> {
        (0..self.n * self.n)
            .map(|rc| self.data[rc * self.bands + band])
            .collect()
    }
}

/// Arranges each band matrix by `order` and stacks them along the depth
/// axis in the order of `bank`.
pub fn stack_bands(
    mats: &[ConnectivityMatrix],
    order: &ElectrodeOrder,
    bank: &[BandDefinition],
) -> Result<ConnectivityTensor, TensorError> {
    if mats.len() != bank.len() {
        return Err(TensorError::BandOrder(format!(
            "{} matrices for {} bands",
            mats.len(),
            bank.len()
        )));
    }
    let first = mats
        .first()
        .ok_or_else(|| TensorError::BandOrder("no matrices".into()))?;
    for (m, b) in mats.iter().zip(bank) {
        if m.band != *b {
            return Err(TensorError::BandOrder(format!(
                "expected band {} [{}, {}], got {} [{}, {}]",
                b.name, b.lo, b.hi, m.band.name, m.band.lo, m.band.hi
            )));
        }
        if m.measure != first.measure || m.segment != first.segment {
            return Err(TensorError::BandOrder(
                "matrices come from different segments or measures".into(),
            ));
        }
    }
    let n = first.dim();
    let depth = mats.len();
    let slices = mats
        .iter()
        .map(|m| apply_order_matrix(&m.values, order))
        .collect::<Result<Vec<_>, _>>()?;
    let mut data = vec![0f32; n * n * depth];
    for (b, s) in slices.iter().enumerate() {
        for (rc, v) in s.as_slice().iter().enumerate() {
            data[rc * depth + b] = *v as f32;
        }
    }
    let mut t = ConnectivityTensor::from_data(n, depth, data, first.segment.labels.unwrap_or(NO_LABELS))?;
    t.order = Some(order.clone());
    t.measure = Some(first.measure);
    t.segment_start = Some(first.segment.start_sample);
    Ok(t)
}

pub fn write_tensors(ts: &[ConnectivityTensor], w: &mut impl Write) -> Result<(), TensorError> {
    let first = ts
        .first()
        .ok_or_else(|| TensorError::Format("cannot export an empty tensor list".into()))?;
    let shape = first.shape();
    if let Some((i, t)) = ts.iter().enumerate().find(|(_, t)| t.shape() != shape) {
        return Err(TensorError::Format(format!(
            "tensor {i} has shape {:?}, expected {shape:?}",
            t.shape()
        )));
    }
    let count = u32::try_from(ts.len())
        .map_err(|_| TensorError::Format("too many tensors".into()))?;
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&count.to_le_bytes())?;
    for d in shape {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    w.write_all(&[DTYPE_F32])?;
    for t in ts {
        w.write_all(&t.labels.subject_id.to_le_bytes())?;
        w.write_all(&t.labels.video_id.to_le_bytes())?;
        w.write_all(&t.labels.valence.to_le_bytes())?;
        w.write_all(&t.labels.arousal.to_le_bytes())?;
        let mut buf = Vec::with_capacity(t.data.len() * 4);
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_exact_fmt(r: &mut impl Read, buf: &mut [u8]) -> Result<(), TensorError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == ErrorKind::UnexpectedEof {
            TensorError::Format("truncated CTEN file".into())
        } else {
            TensorError::Io(e)
        }
    })
}

fn read_u32(r: &mut impl Read) -> Result<u32, TensorError> {
    let mut b = [0u8; 4];
    read_exact_fmt(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Header fields of a CTEN file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CtenHeader {
    pub count: u32,
    pub dims: [u32; 3],
}

pub fn read_header(r: &mut impl Read) -> Result<CtenHeader, TensorError> {
    let mut magic = [0u8; 4];
    read_exact_fmt(r, &mut magic)?;
    if magic != MAGIC {
        return Err(TensorError::Format("bad magic, not a CTEN file".into()));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(TensorError::Format(format!("unsupported CTEN version {version}")));
    }
    let count = read_u32(r)?;
    let dims = [read_u32(r)?, read_u32(r)?, read_u32(r)?];
    if dims[0] != dims[1] {
        return Err(TensorError::Format(format!("non-square slice {dims:?}")));
    }
    let mut dtype = [0u8; 1];
    read_exact_fmt(r, &mut dtype)?;
    if dtype[0] != DTYPE_F32 {
        return Err(TensorError::Format(format!("unsupported dtype {}", dtype[0])));
    }
    Ok(CtenHeader { count, dims })
}

pub fn read_tensors(r: &mut impl Read) -> Result<Vec<ConnectivityTensor>, TensorError> {
    let header = read_header(r)?;
    let [n, _, bands] = header.dims.map(|d| d as usize);
    let values = n * n * bands;
    let mut out = Vec::with_capacity(header.count as usize);
    let mut payload = vec![0u8; values * 4];
    for _ in 0..header.count {
        let mut meta = [0u8; 12];
        read_exact_fmt(r, &mut meta)?;
        let labels = RecordingLabels {
            subject_id: u16::from_le_bytes([meta[0], meta[1]]),
            video_id: u16::from_le_bytes([meta[2], meta[3]]),
            valence: f32::from_le_bytes([meta[4], meta[5], meta[6], meta[7]]),
            arousal: f32::from_le_bytes([meta[8], meta[9], meta[10], meta[11]]),
        };
        read_exact_fmt(r, &mut payload)?;
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        out.push(ConnectivityTensor::from_data(n, bands, data, labels)?);
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(TensorError::Format("trailing bytes after last tensor".into()));
    }
    Ok(out)
}

pub fn export_tensors(ts: &[ConnectivityTensor], path: impl AsRef<Path>) -> Result<(), TensorError> {
    // serialize fully before touching the file so a shape error leaves nothing behind
    let mut buf = Vec::new();
    write_tensors(ts, &mut buf)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn import_tensors(path: impl AsRef<Path>) -> Result<Vec<ConnectivityTensor>, TensorError> {
    read_tensors(&mut BufReader::new(File::open(path)?))
}

/// Debug manifest: `index,subject,video,segment_start` per tensor.
pub fn write_manifest(ts: &[ConnectivityTensor], w: &mut impl Write) -> Result<(), TensorError> {
    writeln!(w, "index,subject,video,segment_start")?;
    for (i, t) in ts.iter().enumerate() {
        let start = t.segment_start.map_or_else(String::new, |s| s.to_string());
        writeln!(w, "{i},{},{},{start}", t.labels.subject_id, t.labels.video_id)?;
    }
    Ok(())
}
