//! Two-part event timestamps on a fixed pulse grid.
//!
//! A `Timestamp` splits absolute time into a pulse-slot index plus a signed
//! femtosecond offset from that slot's nominal time. A flat i64 femtosecond
//! counter overflows after about 2.5 hours; the split form stays exact for
//! arbitrarily long runs, with every mixed computation routed through i128.

use crate::error::{Error, Result};

pub const FS_PER_SEC: f64 = 1e15;

/// Signed duration in femtoseconds.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default)]
pub struct DurationFs(pub i64);

impl DurationFs {
    pub const fn fs(v: i64) -> Self {
        DurationFs(v)
    }
    pub const fn ps(v: i64) -> Self {
        DurationFs(v * 1_000)
    }
    pub const fn ns(v: i64) -> Self {
        DurationFs(v * 1_000_000)
    }
    pub const fn value(self) -> i64 {
        self.0
    }
    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / FS_PER_SEC
    }
}

impl std::ops::Add for DurationFs {
    type Output = DurationFs;
    fn add(self, rhs: DurationFs) -> DurationFs {
        DurationFs(self.0 + rhs.0)
    }
}

impl std::ops::Sub for DurationFs {
    type Output = DurationFs;
    fn sub(self, rhs: DurationFs) -> DurationFs {
        DurationFs(self.0 - rhs.0)
    }
}

impl std::ops::Neg for DurationFs {
    type Output = DurationFs;
    fn neg(self) -> DurationFs {
        DurationFs(-self.0)
    }
}

/// Largest magnitude `diff_fs` is allowed to return. Differences at or above
/// this are reported as overflow rather than silently wrapping.
pub const MAX_DIFF_FS: i128 = 1 << 62;

/// A point in time: `slot` whole pulse periods plus `offset_fs` femtoseconds.
///
/// The pulse period is deliberately not stored per timestamp; every operation
/// that needs it takes `period_fs` explicitly so that streams from different
/// clock configurations cannot be mixed by accident.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct Timestamp {
    pub slot: u64,
    pub offset_fs: i64,
}

impl Timestamp {
    pub const fn new(slot: u64, offset_fs: i64) -> Self {
        Timestamp { slot, offset_fs }
    }

    /// Exact absolute time in femtoseconds since the epoch (slot 0).
    pub fn total_fs(&self, period_fs: DurationFs) -> i128 {
        self.slot as i128 * period_fs.0 as i128 + self.offset_fs as i128
    }

    /// Absolute time in seconds, for slow-timescale models (drift, phase
    /// series). Good to roughly a picosecond over week-long spans, which is
    /// far finer than anything evaluated on this axis varies.
    pub fn as_secs_f64(&self, period_fs: DurationFs) -> f64 {
        self.total_fs(period_fs) as f64 / FS_PER_SEC
    }

    /// Rebuild from absolute femtoseconds with the canonical split
    /// (`offset_fs` in `[0, period_fs)`). Negative absolute time has no slot
    /// representation and errors.
    pub fn from_total_fs(total_fs: i128, period_fs: DurationFs) -> Result<Self> {
        let p = period_fs.0 as i128;
        debug_assert!(p > 0);
        if total_fs < 0 {
            return Err(Error::BeforeEpoch);
        }
        let slot = total_fs.div_euclid(p);
        if slot > u64::MAX as i128 {
            return Err(Error::DurationOverflow);
        }
        Ok(Timestamp {
            slot: slot as u64,
            offset_fs: total_fs.rem_euclid(p) as i64,
        })
    }

    /// Move whole periods from the offset into the slot index until
    /// `|offset_fs| < period_fs`. Carries truncate toward zero, so a small
    /// negative offset stays negative rather than borrowing a slot; only a
    /// slot index that would go below zero is an error.
    pub fn normalize(&self, period_fs: DurationFs) -> Result<Self> {
        let p = period_fs.0;
        debug_assert!(p > 0);
        let carry = self.offset_fs / p;
        let offset = self.offset_fs % p;
        let slot = self.slot as i128 + carry as i128;
        if slot < 0 {
            return Err(Error::BeforeEpoch);
        }
        if slot > u64::MAX as i128 {
            return Err(Error::DurationOverflow);
        }
        Ok(Timestamp {
            slot: slot as u64,
            offset_fs: offset,
        })
    }

    /// Exact signed time difference `self - other` in femtoseconds.
    pub fn diff_fs(&self, other: &Timestamp, period_fs: DurationFs) -> Result<DurationFs> {
        let d = self.total_fs(period_fs) - other.total_fs(period_fs);
        if d.abs() >= MAX_DIFF_FS {
            return Err(Error::DurationOverflow);
        }
        Ok(DurationFs(d as i64))
    }

    /// Shift by a signed duration, returning the canonical split.
    pub fn add_fs(&self, delta: DurationFs, period_fs: DurationFs) -> Result<Self> {
        Self::from_total_fs(self.total_fs(period_fs) + delta.0 as i128, period_fs)
    }
}

/// Sort key comparator for event streams that share one period.
pub fn cmp_by_time(a: &Timestamp, b: &Timestamp, period_fs: DurationFs) -> std::cmp::Ordering {
    a.total_fs(period_fs).cmp(&b.total_fs(period_fs))
}
