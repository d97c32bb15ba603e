use serde::{Deserialize, Serialize};

use crate::grid::Timestamp;
use crate::types::{HouseholdId, RequestId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub request_id: RequestId,
    pub household: HouseholdId,
    pub start: Timestamp,
    pub start_period: usize,
    pub n_periods: usize,
    pub power_kw: f64,
    pub cost_gbp: f64,
}

impl LedgerEntry {
    pub fn periods(&self) -> std::ops::Range<usize> {
        self.start_period..self.start_period + self.n_periods
    }
}

/// Commitments made within one market instance and the power they draw per period.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommitmentLedger {
    entries: Vec<LedgerEntry>,
    scheduled_kw: Vec<f64>,
}

impl CommitmentLedger {
    pub fn new(periods: usize) -> Self {
        CommitmentLedger {
            entries: Vec::new(),
            scheduled_kw: vec![0.0; periods],
        }
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn scheduled_kw(&self) -> &[f64] {
        &self.scheduled_kw
    }

    pub fn push(&mut self, entry: LedgerEntry) {
        for t in entry.periods() {
            self.scheduled_kw[t] += entry.power_kw;
        }
        self.entries.push(entry);
    }

    /// Scheduled power rebuilt from the entries alone.
    pub fn recompute_scheduled(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.scheduled_kw.len()];
        for e in &self.entries {
            for t in e.periods() {
                out[t] += e.power_kw;
            }
        }
        out
    }

    pub fn total_cost(&self) -> f64 {
        self.entries.iter().map(|e| e.cost_gbp).sum()
    }
}
