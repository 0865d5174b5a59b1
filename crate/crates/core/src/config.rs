//! Pinned constants.
//!
//! The underlying bounds hide absolute constants inside O(.) notation. Every
//! such constant is surfaced here as a named field with a default, so tests
//! can assert bounds numerically and experiments can override them as a
//! group (see the CLI's `SIIRV_LAB_CONSTANTS` hook).

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct Constants {
    /// Multiplier inside the tail-radius formula for `ell`.
    pub c_tail: f64,
    /// Partition-sum check: sum of mode-normalized weights must stay below
    /// `c_part * B^{1/4}`.
    pub c_part: f64,
    /// Additive slack multiplier in the critical projection radius.
    pub c_rcrit: f64,
    /// Multipliers on the four term-count thresholds whose max is `n'_crit`.
    pub c_n1: f64,
    pub c_n2: f64,
    pub c_n3: f64,
    pub c_n4: f64,
    /// Sample-count multiplier for pairwise hypothesis selection.
    pub c_h: f64,
    /// Massage parameter: `kappa = ceil(1 + c_kappa / eps)`.
    pub c_kappa: f64,
    /// Convolution window cap, in entries.
    pub convolve_cap: usize,
    /// Greedy-net candidate cap.
    pub grid_cap: usize,
    /// Per-convolution trimmed mass folded into the tail bound.
    pub trim_mass: f64,
    /// Candidate budget for lazy sparse enumerations.
    pub sparse_budget: usize,
}

impl Default for Constants {
    fn default() -> Self {
        Constants {
            c_tail: 4.0,
            c_part: 64.0,
            c_rcrit: 8.0,
            c_n1: 1.0,
            c_n2: 1.0,
            c_n3: 1.0,
            c_n4: 1.0,
            c_h: 8.0,
            c_kappa: 30.0,
            convolve_cap: 1 << 22,
            grid_cap: 10_000_000,
            trim_mass: 1e-15,
            sparse_budget: 50_000,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_merge_over_defaults() {
        let c: Constants = serde_json::from_str(r#"{"c_part": 16.0}"#).unwrap();
        assert_eq!(c.c_part, 16.0);
        assert_eq!(c.c_tail, Constants::default().c_tail);
    }
}
