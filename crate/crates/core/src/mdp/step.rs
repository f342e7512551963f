//! Robbins-Monro step sizes `1/k^a`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSize {
    pub exponent: f64,
}

impl Default for StepSize {
    fn default() -> Self {
        Self { exponent: 0.85 }
    }
}

impl StepSize {
    /// `sum 1/k^a` diverges and `sum 1/k^(2a)` converges exactly when
    /// `a` lies in `(0.5, 1]`.
    pub fn new(exponent: f64) -> Result<Self> {
        if !(exponent > 0.5 && exponent <= 1.0) {
            return Err(Error::Config(format!("step-size exponent {exponent} outside (0.5, 1]")));
        }
        Ok(Self { exponent })
    }

    pub fn at(&self, k: u64) -> f64 {
        debug_assert!(k >= 1);
        (k.max(1) as f64).powf(-self.exponent)
    }
}

/// Default-schedule step size for visit count `k >= 1`.
pub fn step_size(k: u64, exponent: f64) -> Result<f64> {
    if k == 0 {
        return Err(Error::Contract("visit counts start at 1".into()));
    }
    Ok(StepSize::new(exponent)?.at(k))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_is_one() {
        assert_eq!(step_size(1, 0.85).unwrap(), 1.0);
        assert_eq!(StepSize::default().at(1), 1.0);
    }

    #[test]
    fn exponent_range() {
        assert!(StepSize::new(0.4).is_err());
        assert!(StepSize::new(0.5).is_err());
        assert!(StepSize::new(1.0).is_ok());
        assert!(StepSize::new(1.1).is_err());
        assert!(step_size(0, 0.85).is_err());
    }

    #[test]
    fn harmonic_partial_sums() {
        let s = StepSize::new(1.0).unwrap();
        let n = 1_000_000u64;
        let (mut sum, mut sq) = (0.0, 0.0);
        for k in 1..=n {
            let e = s.at(k);
            sum += e;
            sq += e * e;
        }
        // H_n > ln(n+1), growing without bound; sum 1/k^2 < pi^2/6 < 2.
        assert!(sum > ((n + 1) as f64).ln());
        assert!(sq < std::f64::consts::PI.powi(2) / 6.0);
        assert!(sq < 2.0);
    }
}
