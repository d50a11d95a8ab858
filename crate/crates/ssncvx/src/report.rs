//! Machine-readable solve result: objectives, the KKT accuracy breakdown,
//! and the per-iteration trace.

use serde::{Deserialize, Serialize};

use crate::newton::{IterTrace, SolveStatus};
use crate::saddle::KktResiduals;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub iterations: usize,
    pub wall_time: f64,
    pub norm_f: f64,
    pub kkt: KktResiduals,
    pub sigma_final: f64,
    /// max over accepted steps of the audited system residual ratio, when
    /// per-step checking was enabled
    pub residual_check: Option<f64>,
    pub trace: Vec<IterTrace>,
    pub x: Vec<f64>,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}
