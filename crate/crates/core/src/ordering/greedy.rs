//! Nearest-neighbour walks over the scalp projection.

use super::{ElectrodeOrder, OrderingError, Strategy};
use crate::signal_io::{ElectrodeLayout, Hemisphere};

fn start_index(layout: &ElectrodeLayout, start: &str) -> Result<usize, OrderingError> {
    layout
        .index_of(start)
        .ok_or_else(|| OrderingError::Layout(format!("unknown start electrode {start:?}")))
}

/// Unvisited candidate nearest to `current`; ties go to the lower index.
fn nearest(
    layout: &ElectrodeLayout,
    current: usize,
    visited: &[bool],
    allowed: impl Fn(usize) -> bool,
) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for j in (0..layout.len()).filter(|&j| !visited[j] && allowed(j)) {
        let d = layout.distance(current, j);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((j, d));
        }
    }
    best.map(|(j, _)| j)
}

/// Starting at `start`, repeatedly step to the closest unvisited electrode.
pub fn greedy_dist_order(
    layout: &ElectrodeLayout,
    start: &str,
) -> Result<ElectrodeOrder, OrderingError> {
    let mut current = start_index(layout, start)?;
    let mut visited = vec![false; layout.len()];
    visited[current] = true;
    let mut perm = vec![current];
    while let Some(next) = nearest(layout, current, &visited, |_| true) {
        visited[next] = true;
        perm.push(next);
        current = next;
    }
    ElectrodeOrder::new(perm, Strategy::Dist, None)
}

/// Like [`greedy_dist_order`], but the walk stays in the hemisphere it is
/// currently in until that hemisphere is exhausted. Midline electrodes belong
/// to both hemispheres: visiting one does not change the active side.
pub fn greedy_dist_restr_order(
    layout: &ElectrodeLayout,
    start: &str,
) -> Result<ElectrodeOrder, OrderingError> {
    let hemis = layout.hemispheres();
    let mut current = start_index(layout, start)?;
    let mut side = match hemis[current] {
        Hemisphere::Midline => None,
        h => Some(h),
    };
    let mut visited = vec![false; layout.len()];
    visited[current] = true;
    let mut perm = vec![current];
    loop {
        let same_side = |j: usize| match side {
            None => true,
            Some(s) => hemis[j] == s || hemis[j] == Hemisphere::Midline,
        };
        let next = nearest(layout, current, &visited, same_side)
            .or_else(|| nearest(layout, current, &visited, |_| true));
        let Some(next) = next else { break };
        visited[next] = true;
        perm.push(next);
        if hemis[next] != Hemisphere::Midline {
            side = Some(hemis[next]);
        }
        current = next;
    }
    ElectrodeOrder::new(perm, Strategy::DistRestr, None)
}
