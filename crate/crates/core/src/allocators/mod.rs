//! Resource allocation under scarcity: the stochastic Fair Play allocator and the two
//! global benchmarks (volume- and revenue-maximising), plus an exhaustive oracle used to
//! check the benchmarks on small instances.

mod fair_play;
mod fairness;
mod global;
mod oracle;
mod slot;

pub use fair_play::fair_play_run;
pub use fairness::{draw_next_request, fairness_scores};
pub use global::{commit_solution, revenue_max_solve, solve_global, volume_max_solve, GlobalSolution, Objective, SolverOptions};
pub use oracle::{brute_force_oracle, ORACLE_MAX_PERIODS, ORACLE_MAX_REQUESTS};
pub use slot::find_cheapest_slot;

use serde::{Deserialize, Serialize};

use crate::types::{HouseholdId, Request, RequestId};

/// A booking: `n_periods` at fixed `power_kw` from `start_period`, priced at `cost_gbp`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Slot {
    pub start_period: usize,
    pub n_periods: usize,
    pub power_kw: f64,
    pub cost_gbp: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AllocationOutcome {
    pub request_id: RequestId,
    pub household: HouseholdId,
    pub served: bool,
    pub delivered_kwh: f64,
    pub slot: Option<Slot>,
}

impl AllocationOutcome {
    pub fn served(request: &Request, slot: Slot) -> Self {
        AllocationOutcome {
            request_id: request.id.clone(),
            household: request.household.clone(),
            served: true,
            delivered_kwh: request.energy_kwh,
            slot: Some(slot),
        }
    }

    pub fn unserved(request: &Request) -> Self {
        AllocationOutcome {
            request_id: request.id.clone(),
            household: request.household.clone(),
            served: false,
            delivered_kwh: 0.0,
            slot: None,
        }
    }

    pub fn cost_gbp(&self) -> f64 {
        self.slot.as_ref().map_or(0.0, |s| s.cost_gbp)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FairnessFactor {
    #[default]
    HistoricSuccess,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FairnessPolicy {
    pub factor: FairnessFactor,
    /// Lower bound applied to household reliability before inverting it.
    pub gamma_floor: f64,
    /// Uniform multiplier on every score; relative weights are unchanged.
    pub scale: f64,
}

impl Default for FairnessPolicy {
    fn default() -> Self {
        FairnessPolicy {
            factor: FairnessFactor::HistoricSuccess,
            gamma_floor: 1e-3,
            scale: 1.0,
        }
    }
}

impl FairnessPolicy {
    pub fn validate(&self) -> crate::Result<()> {
        if !(self.gamma_floor > 0.0 && self.gamma_floor <= 1.0) {
            return Err(crate::Error::invalid("fairness policy", "gamma_floor must lie in (0, 1]"));
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(crate::Error::invalid("fairness policy", "scale must be positive"));
        }
        Ok(())
    }
}

/// Which allocator drives a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Approach {
    #[default]
    FairPlay,
    VolumeMax,
    RevenueMax,
}

impl Approach {
    pub const ALL: [Approach; 3] = [Approach::VolumeMax, Approach::RevenueMax, Approach::FairPlay];

    pub fn name(self) -> &'static str {
        match self {
            Approach::FairPlay => "fair_play",
            Approach::VolumeMax => "volume_max",
            Approach::RevenueMax => "revenue_max",
        }
    }
}

impl std::fmt::Display for Approach {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Approach {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s.replace('-', "_").as_str() {
            "fair_play" => Ok(Approach::FairPlay),
            "volume_max" => Ok(Approach::VolumeMax),
            "revenue_max" => Ok(Approach::RevenueMax),
            other => Err(crate::Error::invalid("approach", format!("unknown approach {other:?}"))),
        }
    }
}
