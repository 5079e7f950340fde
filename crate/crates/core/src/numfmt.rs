//! Canonical float formatting for on-disk artifacts.
//!
//! Every decimal written to a file is first rounded to 12 significant digits,
//! so writing the same data twice produces identical bytes.

use serde::Serializer;

pub const SIGNIFICANT_DIGITS: usize = 12;

/// Rounds `v` to [`SIGNIFICANT_DIGITS`] significant digits. Non-finite values
/// and zero pass through unchanged.
pub fn round_sig(v: f64) -> f64 {
    if !v.is_finite() || v == 0.0 {
        return v;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, v)
        .parse()
        .unwrap_or(v)
}

/// Text form used in CSV reports.
pub fn fmt_decimal(v: f64) -> String {
    let r = round_sig(v);
    if r.is_finite() && r == r.trunc() && r.abs() < 1e15 {
        format!("{r:.1}")
    } else {
        format!("{r}")
    }
}

pub fn ser_f64<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(round_sig(*v))
}

pub fn ser_opt_f64<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(x) => s.serialize_some(&round_sig(*x)),
        None => s.serialize_none(),
    }
}
