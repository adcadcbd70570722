//! Constants that are only known to exist; defaults plus the probes that refit them.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FittedConstants {
    /// Gap between the chart strip width and `1/alpha`.
    pub k_bold: u32,
    /// Window width for the level branches `eta_n`.
    pub k_hat: u32,
    /// Left margin of the extension strip.
    pub k_prime: u32,
    /// Radius of the disks around integers in the descent classification.
    pub delta1: f64,
    /// Pole radius for the lift bounds; refit by `lift::refine_c1`.
    pub c1: f64,
    /// Bound on the pullback count.
    pub k_double_prime: u32,
}

impl Default for FittedConstants {
    fn default() -> Self {
        Self { k_bold: 2, k_hat: 2, k_prime: 3, delta1: 0.125, c1: 3.0, k_double_prime: 20 }
    }
}

impl FittedConstants {
    /// The high-type floor required for the extension strips to be nonempty.
    pub fn required_floor(&self) -> u32 {
        2 * self.k_prime + self.k_bold + 1
    }
}
