//! EEGR v1 recording files and a plain CSV importer.
//!
//! EEGR v1 layout (little-endian):
//!
//! ```text
//! magic      4 bytes  "EEGR"
//! version    u32      1
//! channels   u32
//! label_len  u32      byte length of the label string
//! labels     utf-8    comma-separated electrode names
//! rate       f64      samples per second
//! T          u64      samples per channel
//! has_labels u8       0 or 1
//!   subject  u16      (only when has_labels = 1)
//!   video    u16
//!   valence  f32
//!   arousal  f32
//! samples    f32 × channels × T, channel-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use super::{EegRecording, ElectrodeLayout, RecordingLabels, SignalError};

pub const MAGIC: [u8; 4] = *b"EEGR";
pub const VERSION: u32 = 1;

fn eof_as_format(e: std::io::Error) -> SignalError {
    if e.kind() == ErrorKind::UnexpectedEof {
        SignalError::Format("unexpected end of file".into())
    } else {
        SignalError::Io(e)
    }
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N], SignalError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(eof_as_format)?;
    Ok(buf)
}

fn read_u32(r: &mut impl Read) -> Result<u32, SignalError> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

pub fn write_recording(rec: &EegRecording, w: &mut impl Write) -> Result<(), SignalError> {
    let labels = rec.layout().names().join(",");
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(rec.n_channels() as u32).to_le_bytes())?;
    w.write_all(&(labels.len() as u32).to_le_bytes())?;
    w.write_all(labels.as_bytes())?;
    w.write_all(&rec.sample_rate().to_le_bytes())?;
    w.write_all(&(rec.len() as u64).to_le_bytes())?;
    match rec.labels() {
        Some(l) => {
            w.write_all(&[1])?;
            w.write_all(&l.subject_id.to_le_bytes())?;
            w.write_all(&l.video_id.to_le_bytes())?;
            w.write_all(&l.valence.to_le_bytes())?;
            w.write_all(&l.arousal.to_le_bytes())?;
        }
        None => w.write_all(&[0])?,
    }
    for c in 0..rec.n_channels() {
        for v in rec.channel(c) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_recording(r: &mut impl Read) -> Result<EegRecording, SignalError> {
    if read_array::<4>(r)? != MAGIC {
        return Err(SignalError::Format("bad magic, not an EEGR file".into()));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(SignalError::Format(format!("unsupported EEGR version {version}")));
    }
    let channels = read_u32(r)? as usize;
    let label_len = read_u32(r)? as usize;
    let mut label_bytes = Vec::new();
    r.by_ref()
        .take(label_len as u64)
        .read_to_end(&mut label_bytes)?;
    if label_bytes.len() != label_len {
        return Err(SignalError::Format("unexpected end of file in labels".into()));
    }
    let label_str = String::from_utf8(label_bytes)
        .map_err(|_| SignalError::Format("electrode labels are not UTF-8".into()))?;
    let names: Vec<&str> = label_str.split(',').collect();
    if names.len() != channels {
        return Err(SignalError::Format(format!(
            "header declares {channels} channels but lists {} labels",
            names.len()
        )));
    }
    let layout = ElectrodeLayout::canonical_subset(&names)?;
    let rate = f64::from_le_bytes(read_array(r)?);
    let t = u64::from_le_bytes(read_array(r)?) as usize;
    let labels = match read_array::<1>(r)?[0] {
        0 => None,
        1 => Some(RecordingLabels {
            subject_id: u16::from_le_bytes(read_array(r)?),
            video_id: u16::from_le_bytes(read_array(r)?),
            valence: f32::from_le_bytes(read_array(r)?),
            arousal: f32::from_le_bytes(read_array(r)?),
        }),
        f => return Err(SignalError::Format(format!("invalid label flag {f}"))),
    };
    let n_values = channels
        .checked_mul(t)
        .ok_or_else(|| SignalError::Format("sample count overflow".into()))?;
    let mut payload = Vec::new();
    r.by_ref()
        .take(n_values as u64 * 4)
        .read_to_end(&mut payload)?;
    if payload.len() != n_values * 4 {
        return Err(SignalError::Format(format!(
            "body holds {} samples, header declares {channels} channels × {t}",
            payload.len() / 4
        )));
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(SignalError::Format("trailing bytes after sample payload".into()));
    }
    let samples = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    EegRecording::from_flat(layout, rate, t, samples, labels)
}

pub fn save_recording(rec: &EegRecording, path: impl AsRef<Path>) -> Result<(), SignalError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_recording(rec, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_recording(path: impl AsRef<Path>) -> Result<EegRecording, SignalError> {
    let mut r = BufReader::new(File::open(path)?);
    read_recording(&mut r)
}

/// Imports a CSV whose header row holds electrode names and whose remaining
/// rows hold one sample per electrode.
pub fn load_csv(path: impl AsRef<Path>, sample_rate: f64) -> Result<EegRecording, SignalError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| SignalError::Format("empty CSV".into()))?;
    let names: Vec<&str> = header.split(',').map(str::trim).collect();
    let layout = ElectrodeLayout::canonical_subset(&names)?;
    let mut channels = vec![Vec::new(); names.len()];
    for (row, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != names.len() {
            return Err(SignalError::Format(format!(
                "row {} has {} fields, expected {}",
                row + 2,
                fields.len(),
                names.len()
            )));
        }
        for (c, f) in channels.iter_mut().zip(fields) {
            let v: f32 = f.trim().parse().map_err(|_| {
                SignalError::Format(format!("row {}: cannot parse {f:?}", row + 2))
            })?;
            c.push(v);
        }
    }
    EegRecording::new(layout, sample_rate, channels, None)
}
