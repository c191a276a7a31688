//! Dilated frame-pair schedule for cross-frame regularization.

use crate::error::{Error, Result};

/// Dilation used in `epoch`.
pub fn dilation_for_epoch(epoch: usize, schedule: &[usize]) -> Result<usize> {
    schedule
        .get(epoch)
        .copied()
        .ok_or_else(|| Error::invalid(format!("epoch {epoch} outside a {}-epoch schedule", schedule.len())))
}

/// Offsets `j·(d+1)` for `j ∈ [−⌊s/2⌋, ⌊s/2⌋]`.
pub fn pair_offsets(reg_window: usize, dilation: usize) -> Result<Vec<isize>> {
    if reg_window % 2 == 0 {
        return Err(Error::invalid("regularization window must be odd"));
    }
    let half = (reg_window / 2) as isize;
    Ok((-half..=half).map(|j| j * (dilation as isize + 1)).collect())
}

/// Frames paired with `frame` (itself included), clipped to `[0, len)`.
pub fn pair_set(frame: usize, len: usize, reg_window: usize, dilation: usize) -> Result<Vec<usize>> {
    Ok(pair_offsets(reg_window, dilation)?
        .into_iter()
        .filter_map(|o| {
            let f = frame as isize + o;
            (f >= 0 && (f as usize) < len).then_some(f as usize)
        })
        .collect())
}

/// Number of regularization paths reaching a frame after each epoch,
/// counting every chain of per-epoch offsets separately (`s^e`).
pub fn cumulative_reach(reg_window: usize, schedule: &[usize]) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(schedule.len());
    let mut reach = 1usize;
    for &d in schedule {
        reach *= pair_offsets(reg_window, d)?.len();
        out.push(reach);
    }
    Ok(out)
}

/// Number of distinct frame offsets connected to a frame after each epoch.
pub fn cumulative_span(reg_window: usize, schedule: &[usize]) -> Result<Vec<usize>> {
    let mut reached = std::collections::BTreeSet::from([0isize]);
    let mut out = Vec::with_capacity(schedule.len());
    for &d in schedule {
        let offsets = pair_offsets(reg_window, d)?;
        reached = reached.iter().flat_map(|r| offsets.iter().map(move |o| r + o)).collect();
        out.push(reached.len());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule_offsets() {
        let sched = [0, 2, 4];
        assert_eq!(dilation_for_epoch(0, &sched).unwrap(), 0);
        assert_eq!(pair_offsets(5, 0).unwrap(), vec![-2, -1, 0, 1, 2]);
        assert_eq!(pair_offsets(5, dilation_for_epoch(1, &sched).unwrap()).unwrap(), vec![-6, -3, 0, 3, 6]);
        assert_eq!(pair_offsets(5, dilation_for_epoch(2, &sched).unwrap()).unwrap(), vec![-10, -5, 0, 5, 10]);
        assert!(dilation_for_epoch(3, &sched).is_err());
    }

    #[test]
    fn pair_set_clips_to_sequence() {
        assert_eq!(pair_set(7, 20, 5, 0).unwrap(), vec![5, 6, 7, 8, 9]);
        assert_eq!(pair_set(1, 20, 5, 4).unwrap(), vec![1, 6, 11]);
        assert_eq!(pair_set(0, 1, 5, 0).unwrap(), vec![0]);
        assert!(pair_set(0, 10, 4, 0).is_err());
    }

    #[test]
    fn reach_counts_paths_and_span_counts_frames() {
        assert_eq!(cumulative_reach(3, &[0, 2, 4]).unwrap(), vec![3, 9, 27]);
        assert_eq!(cumulative_span(3, &[0, 2, 4]).unwrap(), vec![3, 9, 19]);
        assert_eq!(cumulative_span(3, &[0, 2, 8]).unwrap(), vec![3, 9, 27]);
    }
}
