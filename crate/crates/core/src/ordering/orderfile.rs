//! Text order files.
//!
//! ```text
//! # strategy=data-global
//! # stress=0.0812
//! # seed=0
//! 0,Fp1
//! 1,AF3
//! ...
//! ```
//!
//! One `rank,electrode_label` line per matrix position, ranks from 0.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::{ElectrodeOrder, OrderingError, Strategy};
use crate::signal_io::ElectrodeLayout;

/// A parsed order file.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderFile {
    pub order: ElectrodeOrder,
    pub seed: Option<u64>,
}

pub fn write_order(
    o: &ElectrodeOrder,
    layout: &ElectrodeLayout,
    seed: Option<u64>,
    w: &mut impl Write,
) -> Result<(), OrderingError> {
    if o.len() != layout.len() {
        return Err(OrderingError::Dimension {
            expected: layout.len(),
            got: o.len(),
        });
    }
    writeln!(w, "# strategy={}", o.strategy())?;
    if let Some(s) = o.stress() {
        writeln!(w, "# stress={s}")?;
    }
    if let Some(s) = seed {
        writeln!(w, "# seed={s}")?;
    }
    for (rank, &e) in o.perm().iter().enumerate() {
        writeln!(w, "{rank},{}", layout.names()[e])?;
    }
    Ok(())
}

pub fn read_order(
    r: impl BufRead,
    layout: &ElectrodeLayout,
) -> Result<OrderFile, OrderingError> {
    let mut strategy = Strategy::Identity;
    let mut stress = None;
    let mut seed = None;
    let mut perm = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = |msg: String| OrderingError::Format(format!("line {}: {msg}", lineno + 1));
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((key, value)) = comment.trim().split_once('=') {
                let value = value.trim();
                match key.trim() {
                    "strategy" => strategy = value.parse().map_err(bad)?,
                    "stress" => {
                        stress = Some(value.parse().map_err(|_| bad(format!("bad stress {value:?}")))?)
                    }
                    "seed" => {
                        seed = Some(value.parse().map_err(|_| bad(format!("bad seed {value:?}")))?)
                    }
                    _ => {}
                }
            }
            continue;
        }
        let (rank, label) = line
            .split_once(',')
            .ok_or_else(|| bad(format!("expected rank,label, got {line:?}")))?;
        let rank: usize = rank
            .trim()
            .parse()
            .map_err(|_| bad(format!("bad rank {rank:?}")))?;
        if rank != perm.len() {
            return Err(bad(format!("rank {rank} out of sequence")));
        }
        let label = label.trim();
        let e = layout
            .index_of(label)
            .ok_or_else(|| OrderingError::Label(format!("electrode {label:?} not in layout")))?;
        perm.push(e);
    }
    if perm.len() != layout.len() {
        return Err(OrderingError::Label(format!(
            "order lists {} electrodes, layout has {}",
            perm.len(),
            layout.len()
        )));
    }
    let order = ElectrodeOrder::new(perm, strategy, stress)
        .map_err(|_| OrderingError::Label("order lists an electrode twice".into()))?;
    Ok(OrderFile { order, seed })
}

pub fn write_order_file(
    o: &ElectrodeOrder,
    layout: &ElectrodeLayout,
    seed: Option<u64>,
    path: impl AsRef<Path>,
) -> Result<(), OrderingError> {
    let mut buf = Vec::new();
    write_order(o, layout, seed, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn read_order_file(
    path: impl AsRef<Path>,
    layout: &ElectrodeLayout,
) -> Result<OrderFile, OrderingError> {
    read_order(BufReader::new(std::fs::File::open(path)?), layout)
}
