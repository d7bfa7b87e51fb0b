//! Conversions into the internal SI convention (rad/s, seconds, tesla).

use std::f64::consts::PI;

/// 2π × `f` Hz.
pub fn hz(f: f64) -> f64 {
    2.0 * PI * f
}

/// 2π × `f` kHz.
pub fn khz(f: f64) -> f64 {
    hz(f * 1e3)
}

/// 2π × `f` MHz.
pub fn mhz(f: f64) -> f64 {
    hz(f * 1e6)
}

/// Angular frequency back to cycles per second.
pub fn to_hz(omega: f64) -> f64 {
    omega / (2.0 * PI)
}

pub fn to_khz(omega: f64) -> f64 {
    to_hz(omega) * 1e-3
}

pub fn millitesla(b: f64) -> f64 {
    b * 1e-3
}

pub fn gauss(b: f64) -> f64 {
    b * 1e-4
}

pub fn millis(t: f64) -> f64 {
    t * 1e-3
}
