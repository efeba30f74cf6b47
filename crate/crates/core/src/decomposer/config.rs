use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::SymmetryDetection;

/// Whether Phase-II filtering ranks distances within each segment or over the whole target.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum FilterMode {
    #[default]
    PerSegment,
    Global,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BorrowConfig {
    /// Fraction of targets, by error, that try to borrow.
    pub worst_frac: f64,
    /// A transplant is accepted when its error is within this best quantile.
    pub accept_frac: f64,
    /// Donors tried per target.
    pub neighbors: usize,
}

impl Default for BorrowConfig {
    fn default() -> Self {
        Self {
            worst_frac: 0.6,
            accept_frac: 0.1,
            neighbors: 5,
        }
    }
}

/// Settings of the nested optimize / shift / borrow loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    /// Phase-I Adam steps per round.
    pub n1: usize,
    /// Optimize-and-shift rounds per borrow round.
    pub n2: usize,
    /// Borrow rounds.
    pub n3: usize,
    pub lr: f64,
    pub tau_overlap: f64,
    pub p_filter: f64,
    pub filter_mode: FilterMode,
    /// ε-graph threshold for connected components and symmetric contact.
    pub tau_cc: f64,
    pub swap_frac: f64,
    pub borrow: BorrowConfig,
    pub phase2: bool,
    pub phase3: bool,
    pub symmetry: bool,
    pub detection: SymmetryDetection,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            n1: 200,
            n2: 4,
            n3: 2,
            lr: 0.008,
            tau_overlap: 0.1,
            p_filter: 0.3,
            filter_mode: FilterMode::PerSegment,
            tau_cc: 0.05,
            swap_frac: 0.15,
            borrow: BorrowConfig::default(),
            phase2: true,
            phase3: true,
            symmetry: true,
            detection: SymmetryDetection::dense(),
        }
    }
}

impl ScheduleConfig {
    /// Short schedule sized for 64-point parts and a single CPU.
    pub fn desk() -> Self {
        Self {
            n1: 60,
            n2: 3,
            n3: 2,
            tau_cc: 0.08,
            ..Self::default()
        }
    }

    /// Total Phase-I steps of one schedule run.
    pub fn phase1_steps(&self) -> usize {
        self.n1 * (self.n2 * self.n3 + 1)
    }

    pub fn validate(&self) -> Result<()> {
        let frac = |x: f64| x > 0.0 && x < 1.0;
        let b = &self.borrow;
        let ok = self.n1 >= 1
            && self.n2 >= 1
            && self.n3 >= 1
            && self.lr >= 0.0
            && self.lr.is_finite()
            && self.tau_overlap > 0.0
            && self.tau_cc > 0.0
            && frac(self.p_filter)
            && frac(self.swap_frac)
            && frac(b.worst_frac)
            && frac(b.accept_frac)
            && b.neighbors >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid schedule config {self:?}")))
        }
    }
}
