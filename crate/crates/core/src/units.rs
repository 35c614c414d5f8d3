//! Unit conventions shared by every module.
//!
//! Volumes are bytes, rates are bits per second and times are seconds, all
//! carried as `f64`. File formats use decimal gigabytes / gigabits
//! (1 GB = 10^9 bytes, 1 Gb/s = 10^9 b/s); conversion between bytes and bits
//! is exactly a factor of 8.

/// Bits per second.
pub type Rate = f64;
/// Bytes.
pub type Bytes = f64;
/// Simulation time or duration in seconds.
pub type Seconds = f64;

pub const BITS_PER_BYTE: f64 = 8.0;
pub const GIGA: f64 = 1e9;

/// Sentinel for "no limit" (empty-path bottleneck, zero-rate completion time).
pub const UNBOUNDED: f64 = f64::INFINITY;

/// Relative tolerance used for capacity and admission comparisons.
pub(crate) const REL_EPS: f64 = 1e-9;

pub fn gbps(x: f64) -> Rate {
    x * GIGA
}

pub fn gigabytes(x: f64) -> Bytes {
    x * GIGA
}

pub fn to_gbps(rate: Rate) -> f64 {
    rate / GIGA
}

pub fn to_gigabytes(bytes: Bytes) -> f64 {
    bytes / GIGA
}

/// `a <= b` up to a relative tolerance on the magnitude of `b`.
pub(crate) fn approx_le(a: f64, b: f64) -> bool {
    a <= b + REL_EPS * b.abs().max(1.0)
}

pub(crate) fn approx_ge(a: f64, b: f64) -> bool {
    approx_le(b, a)
}
