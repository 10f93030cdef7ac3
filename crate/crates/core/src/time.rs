//! Virtual time in integer nanoseconds.

use std::fmt;
use std::ops::Add;

use serde::{Deserialize, Serialize};

/// A point in (or span of) simulated time, stored as whole nanoseconds.
///
/// Arithmetic is checked: `checked_add` reports overflow and the `Add` impl
/// panics rather than wrapping.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_nanos(ns: u64) -> Self {
        SimTime(ns)
    }

    /// Converts decimal microseconds to the nearest nanosecond. Negative or
    /// non-finite inputs yield `None`.
    pub fn from_micros_f64(us: f64) -> Option<Self> {
        if !us.is_finite() || us < 0.0 {
            return None;
        }
        let ns = (us * 1000.0).round();
        if ns > u64::MAX as f64 {
            return None;
        }
        Some(SimTime(ns as u64))
    }

    pub const fn as_nanos(self) -> u64 {
        self.0
    }

    pub fn as_micros_f64(self) -> f64 {
        self.0 as f64 / 1000.0
    }

    pub fn checked_add(self, rhs: SimTime) -> Option<SimTime> {
        self.0.checked_add(rhs.0).map(SimTime)
    }

    pub fn checked_sub(self, rhs: SimTime) -> Option<SimTime> {
        self.0.checked_sub(rhs.0).map(SimTime)
    }

    pub fn checked_mul(self, k: u64) -> Option<SimTime> {
        self.0.checked_mul(k).map(SimTime)
    }

    pub fn saturating_sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;

    fn add(self, rhs: SimTime) -> SimTime {
        self.checked_add(rhs).expect("SimTime overflow")
    }
}

impl fmt::Display for SimTime {
    /// Microseconds with two decimals, e.g. `5.60us`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}us", format_micros(self.as_micros_f64()))
    }
}

/// Rounds half-up to two decimals and formats, e.g. `38.94`.
pub fn format_micros(us: f64) -> String {
    format!("{:.2}", round2(us))
}

/// Half-up rounding to two decimal places (half away from zero for negatives).
pub fn round2(x: f64) -> f64 {
    // The epsilon absorbs binary representation error such as 1.005 -> 1.00499..
    let scaled = x.abs() * 100.0;
    let r = (scaled + 0.5 + 1e-7).floor() / 100.0;
    if x < 0.0 {
        -r
    } else {
        r
    }
}
