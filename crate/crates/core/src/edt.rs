//! Entropy-based dynamic temperature.
//!
//! `T(H) = T0 * M^(gamma / H)`, cut to zero when it falls below `tau0`.
//! Low entropy (a confident model) gives a lower temperature than `T0`; as
//! entropy grows the temperature approaches `T0`. Entropy is in nats.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EdtError {
    #[error("base temperature must be > 0, got {0}")]
    BaseTemperature(f64),
    #[error("scaling factor must be in (0, 1], got {0}")]
    Scale(f64),
    #[error("gamma must be > 0, got {0}")]
    Gamma(f64),
    #[error("threshold must be >= 0, got {0}")]
    Threshold(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdtParams {
    pub t0: f64,
    pub m: f64,
    pub gamma: f64,
    pub tau0: f64,
}

impl Default for EdtParams {
    fn default() -> Self {
        EdtParams {
            t0: 0.8,
            m: 0.8,
            gamma: 1.0,
            tau0: 0.001,
        }
    }
}

impl EdtParams {
    pub fn validate(&self) -> Result<(), EdtError> {
        if !(self.t0 > 0.0 && self.t0.is_finite()) {
            return Err(EdtError::BaseTemperature(self.t0));
        }
        if !(self.m > 0.0 && self.m <= 1.0) {
            return Err(EdtError::Scale(self.m));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(EdtError::Gamma(self.gamma));
        }
        if !(self.tau0 >= 0.0 && self.tau0.is_finite()) {
            return Err(EdtError::Threshold(self.tau0));
        }
        Ok(())
    }
}

/// Sampling temperature for first-token entropy `entropy` (nats, >= 0).
///
/// `entropy == 0` takes the limit `M^(gamma/0+)`, which is 0 for `M < 1`.
pub fn temperature_for_entropy(entropy: f64, params: &EdtParams) -> f64 {
    let h = entropy.max(0.0);
    let factor = if h == 0.0 {
        if params.m < 1.0 {
            0.0
        } else {
            1.0
        }
    } else {
        params.m.powf(params.gamma / h)
    };
    let candidate = params.t0 * factor;
    if candidate >= params.tau0 {
        candidate
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_schedule_values() {
        let p = EdtParams::default();
        assert!((temperature_for_entropy(1.0, &p) - 0.64).abs() < 1e-12);
        assert!((temperature_for_entropy(1e12, &p) - 0.8).abs() < 1e-9);
        // 0.8 * 0.8^100 ~ 1.6e-10 < 0.001
        assert_eq!(temperature_for_entropy(0.01, &p), 0.0);
        assert_eq!(temperature_for_entropy(0.0, &p), 0.0);
    }

    #[test]
    fn cutoff_boundary() {
        // T0 * M^(1/H) = tau0  <=>  H = ln M / ln(tau0 / T0)
        let p = EdtParams::default();
        let h_star = p.m.ln() / (p.tau0 / p.t0).ln();
        assert!(temperature_for_entropy(h_star * 1.001, &p) >= p.tau0);
        assert_eq!(temperature_for_entropy(h_star * 0.999, &p), 0.0);
    }

    #[test]
    fn unit_scale_is_constant() {
        let p = EdtParams { m: 1.0, ..EdtParams::default() };
        assert_eq!(temperature_for_entropy(0.0, &p), 0.8);
        assert_eq!(temperature_for_entropy(0.3, &p), 0.8);
    }

    #[test]
    fn validation() {
        assert!(EdtParams::default().validate().is_ok());
        assert!(EdtParams { t0: 0.0, ..EdtParams::default() }.validate().is_err());
        assert!(EdtParams { m: 1.2, ..EdtParams::default() }.validate().is_err());
        assert!(EdtParams { tau0: -1.0, ..EdtParams::default() }.validate().is_err());
    }

    proptest! {
        #[test]
        fn monotone_and_bounded(
            h1 in 0.0f64..20.0, h2 in 0.0f64..20.0,
            t0 in 0.05f64..2.0, m in 0.05f64..=1.0, gamma in 0.05f64..5.0, tau0 in 0.0f64..0.05,
        ) {
            let p = EdtParams { t0, m, gamma, tau0 };
            let (lo, hi) = if h1 <= h2 { (h1, h2) } else { (h2, h1) };
            let (tl, th) = (temperature_for_entropy(lo, &p), temperature_for_entropy(hi, &p));
            prop_assert!(tl <= th);
            for t in [tl, th] {
                prop_assert!(t == 0.0 || (t >= tau0 && t <= t0));
            }
        }
    }
}
