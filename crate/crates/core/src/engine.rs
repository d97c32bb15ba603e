//! Rolling simulation: market instances open every `spacing_hours`, each sees the
//! requests relevant to its window, allocates with the chosen approach, and books into a
//! run-wide schedule that later instances inherit.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::allocators::{
    commit_solution, fair_play_run, solve_global, AllocationOutcome, Approach, FairnessPolicy, Objective, SolverOptions,
};
use crate::amm::{settle, MarketState};
use crate::error::{Error, Result};
use crate::grid::{TimeGrid, Timestamp};
use crate::market::{advance_instance, is_relevant, MarketConfig};
use crate::reliability::ReliabilityReport;
use crate::types::{HouseholdId, HouseholdRecord, Offer, OfferId, Request, RequestId, EPS};

/// Slack for the run-wide capacity check, kW.
const CAPACITY_TOL: f64 = 1e-6;

/// Everything one simulated run needs. Series are per period of `grid`.
#[derive(Clone, Debug)]
pub struct Simulation {
    pub config: MarketConfig,
    pub approach: Approach,
    pub policy: FairnessPolicy,
    pub solver: SolverOptions,
    pub grid: TimeGrid,
    /// Total supply `S^T` in kW, already scaled.
    pub supply_kw: Vec<f64>,
    /// Aggregate essential consumption `C^B` in kW.
    pub essential_kw: Vec<f64>,
    pub requests: Vec<Request>,
    pub offers: Vec<Offer>,
    /// Reliability history carried into the run; absent households start at 1.
    pub households: BTreeMap<HouseholdId, HouseholdRecord>,
    /// Instances open from `start` (floored to the spacing) until `end`.
    pub start: Timestamp,
    pub end: Timestamp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub request_id: RequestId,
    pub household: HouseholdId,
    pub earliest: Timestamp,
    pub latest: Timestamp,
    pub energy_kwh: f64,
    pub budget_gbp: f64,
    pub served: bool,
    pub delivered_kwh: f64,
    pub start: Option<Timestamp>,
    pub power_kw: f64,
    pub cost_gbp: f64,
    /// Opening time of the instance that decided the request.
    pub instance: Option<Timestamp>,
}

impl OutcomeRecord {
    pub fn unit_cost(&self) -> Option<f64> {
        self.served.then(|| self.cost_gbp / self.energy_kwh)
    }

    fn to_outcome(&self) -> AllocationOutcome {
        AllocationOutcome {
            request_id: self.request_id.clone(),
            household: self.household.clone(),
            served: self.served,
            delivered_kwh: self.delivered_kwh,
            slot: None,
        }
    }
}

/// Opening prices of an instance over its first `spacing_hours`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriceRecord {
    pub timestamp: Timestamp,
    pub alpha: f64,
    pub bp: f64,
    pub sp: f64,
    pub available_kw: f64,
    pub c_fa_kw: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceReport {
    pub start: Timestamp,
    pub relevant: usize,
    pub served: usize,
    pub buyer_payments_gbp: f64,
    pub seller_receipts_gbp: f64,
    pub balanced: bool,
    /// Whether the global solver proved optimality (always true for Fair Play).
    pub exact: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Invariants {
    pub capacity: bool,
    pub budget_balance: bool,
    pub individual_rationality: bool,
}

impl Invariants {
    pub fn all_hold(&self) -> bool {
        self.capacity && self.budget_balance && self.individual_rationality
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    /// One record per request, in input order.
    pub outcomes: Vec<OutcomeRecord>,
    pub prices: Vec<PriceRecord>,
    pub instances: Vec<InstanceReport>,
    /// `None` when no request was submitted.
    pub reliability: Option<ReliabilityReport>,
    /// Reliability history after the run, prior history included.
    pub households: BTreeMap<HouseholdId, HouseholdRecord>,
    /// Booked power per period of the simulation grid.
    pub scheduled_kw: Vec<f64>,
    pub capacity_violations: usize,
    pub invariants: Invariants,
    pub offer_receipts_gbp: BTreeMap<OfferId, f64>,
    pub offers_rational: bool,
}

impl RunResult {
    pub fn total_cost_gbp(&self) -> f64 {
        self.outcomes.iter().map(|o| o.cost_gbp).sum()
    }

    pub fn served_kwh(&self) -> f64 {
        self.outcomes.iter().map(|o| o.delivered_kwh).sum()
    }

    pub fn requested_kwh(&self) -> f64 {
        self.outcomes.iter().map(|o| o.energy_kwh).sum()
    }

    pub fn gamma_actual(&self) -> Option<f64> {
        self.reliability.as_ref().map(|r| r.system)
    }
}

impl Simulation {
    fn validate(&self) -> Result<()> {
        self.config.validate()?;
        self.policy.validate()?;
        if self.grid.resolution_min() != self.config.resolution_minutes {
            return Err(Error::invalid("simulation", "data resolution differs from the market resolution"));
        }
        if self.supply_kw.len() != self.grid.len() || self.essential_kw.len() != self.grid.len() {
            return Err(Error::invalid("simulation", "supply and essential series must match the grid"));
        }
        if self.end <= self.start {
            return Err(Error::invalid("simulation", "end must be after start"));
        }
        if self.start < self.grid.start() || self.start >= self.grid.end() {
            return Err(Error::Coverage(format!(
                "run starts at {} outside data {}..{}",
                self.start,
                self.grid.start(),
                self.grid.end()
            )));
        }
        let mut ids = BTreeSet::new();
        for r in &self.requests {
            r.validate()?;
            if !ids.insert(&r.id) {
                return Err(Error::invalid("simulation", format!("duplicate request id {}", r.id)));
            }
        }
        Ok(())
    }
}

fn unserved_record(r: &Request, instance: Option<Timestamp>) -> OutcomeRecord {
    OutcomeRecord {
        request_id: r.id.clone(),
        household: r.household.clone(),
        earliest: r.earliest,
        latest: r.latest,
        energy_kwh: r.energy_kwh,
        budget_gbp: r.budget_gbp,
        served: false,
        delivered_kwh: 0.0,
        start: None,
        power_kw: 0.0,
        cost_gbp: 0.0,
        instance,
    }
}

fn record_household(households: &mut BTreeMap<HouseholdId, HouseholdRecord>, o: &OutcomeRecord) {
    households
        .entry(o.household.clone())
        .or_insert_with(|| HouseholdRecord::new(o.household.clone()))
        .record(o.energy_kwh, o.delivered_kwh);
}

/// Run the rolling market over `[sim.start, sim.end)`. Unserved requests stay in the
/// backlog and are retried by later instances until they can no longer start or drop out
/// of the relevant set; household reliability is updated as each instance closes.
pub fn simulate<R: Rng + ?Sized>(sim: &Simulation, rng: &mut R) -> Result<RunResult> {
    sim.validate()?;
    let cfg = &sim.config;
    let res = cfg.resolution_minutes;
    let data = sim.grid;
    let capacity: Vec<f64> = sim
        .supply_kw
        .iter()
        .zip(&sim.essential_kw)
        .map(|(s, c)| (s - c).max(0.0))
        .collect();
    let mut offered = vec![0.0; data.len()];
    let mut scheduled = vec![0.0; data.len()];

    let mut order: Vec<usize> = (0..sim.requests.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (&sim.requests[a], &sim.requests[b]);
        ra.earliest.cmp(&rb.earliest).then_with(|| ra.id.cmp(&rb.id))
    });
    let mut waiting: Vec<usize> = order;
    let index: BTreeMap<&RequestId, usize> = sim.requests.iter().enumerate().map(|(i, r)| (&r.id, i)).collect();
    let mut seen_relevant = vec![false; sim.requests.len()];
    let mut records: Vec<Option<OutcomeRecord>> = vec![None; sim.requests.len()];
    let mut households = sim.households.clone();
    let mut admitted_offers: Vec<&Offer> = Vec::new();
    let mut decided_offers: BTreeSet<&OfferId> = BTreeSet::new();
    let mut offer_receipts: BTreeMap<OfferId, f64> = BTreeMap::new();
    let mut offer_floors: BTreeMap<OfferId, f64> = BTreeMap::new();
    let mut prices = Vec::new();
    let mut instances = Vec::new();
    let mut balanced = true;
    let mut rational = true;

    let mut clock = sim.start.floor_to(res);
    while clock < sim.end {
        let Some(igrid) = advance_instance(cfg, clock)?.clip_end(data.end()) else {
            break;
        };
        if igrid.is_empty() {
            break;
        }
        let lo = data.offset_floor(igrid.start());
        if lo < 0 {
            return Err(Error::Coverage(format!("instance at {} starts before the data", igrid.start())));
        }
        let lo = lo as usize;
        let span = lo..lo + igrid.len();
        let mut state = MarketState::new(
            cfg,
            igrid,
            sim.supply_kw[span.clone()].to_vec(),
            sim.essential_kw[span.clone()].to_vec(),
        )?;
        for offer in &admitted_offers {
            if !igrid.covered_range(offer.earliest, offer.latest).is_empty() {
                state.readmit_offer(offer)?;
            }
        }
        state = state.with_carried(&scheduled[span.clone()])?;
        let fresh: Vec<Offer> = sim
            .offers
            .iter()
            .filter(|o| !decided_offers.contains(&o.id) && !igrid.covered_range(o.earliest, o.latest).is_empty())
            .cloned()
            .collect();
        for (offer, decision) in fresh.iter().zip(state.admit_offers(&fresh)?) {
            let original = sim.offers.iter().find(|o| o.id == offer.id).expect("offer present");
            decided_offers.insert(&original.id);
            if decision.admitted {
                admitted_offers.push(original);
                offer_floors.insert(original.id.clone(), original.revenue_floor_gbp);
                for t in data.covered_range(original.earliest, original.latest) {
                    offered[t] += decision.power_kw;
                }
            }
        }

        let mut closed: Vec<OutcomeRecord> = Vec::new();
        let mut relevant: Vec<usize> = Vec::new();
        waiting.retain(|&i| {
            let r = &sim.requests[i];
            let now_relevant = is_relevant(r, &igrid);
            let expired = r.latest_start(res) < igrid.start() || (seen_relevant[i] && !now_relevant);
            if expired {
                closed.push(unserved_record(r, Some(igrid.start())));
                return false;
            }
            if now_relevant {
                seen_relevant[i] = true;
                relevant.push(i);
            }
            true
        });
        let relevant_refs: Vec<&Request> = relevant.iter().map(|&i| &sim.requests[i]).collect();
        state.open_requests(relevant_refs.iter().copied());

        let block = (cfg.spacing_min() / res) as usize;
        for t in 0..block.min(igrid.len()) {
            prices.push(PriceRecord {
                timestamp: igrid.period_start(t),
                alpha: state.prices().alpha[t],
                bp: state.prices().bp[t],
                sp: state.prices().sp[t],
                available_kw: state.available_kw()[t],
                c_fa_kw: state.forecast().c_fa[t],
            });
        }

        let (outcomes, exact) = match sim.approach {
            Approach::FairPlay => (fair_play_run(&mut state, &relevant_refs, &households, &sim.policy, rng)?, true),
            Approach::VolumeMax | Approach::RevenueMax => {
                let objective = if sim.approach == Approach::VolumeMax {
                    Objective::Volume
                } else {
                    Objective::Revenue
                };
                let solution = solve_global(&state, &relevant_refs, objective, &sim.solver)?;
                commit_solution(&mut state, &relevant_refs, &solution)?;
                (solution.outcomes, solution.exact)
            }
        };

        let mut served = BTreeMap::new();
        let mut served_count = 0;
        for o in outcomes {
            let Some(slot) = o.slot else { continue };
            let i = *index
                .get(&o.request_id)
                .ok_or_else(|| Error::invalid("simulation", format!("unknown request {}", o.request_id)))?;
            let req = &sim.requests[i];
            if slot.cost_gbp > req.budget_gbp + EPS * req.budget_gbp.max(1.0) {
                rational = false;
            }
            let first = lo + slot.start_period;
            for s in &mut scheduled[first..first + slot.n_periods] {
                *s += slot.power_kw;
            }
            served.insert(i, ());
            served_count += 1;
            closed.push(OutcomeRecord {
                served: true,
                delivered_kwh: req.energy_kwh,
                start: Some(igrid.period_start(slot.start_period)),
                power_kw: slot.power_kw,
                cost_gbp: slot.cost_gbp,
                ..unserved_record(req, Some(igrid.start()))
            });
        }
        waiting.retain(|i| !served.contains_key(i));

        let report = settle(&state);
        balanced &= report.is_balanced();
        for s in &report.offers {
            *offer_receipts.entry(s.offer_id.clone()).or_insert(0.0) += s.receipts_gbp;
        }
        instances.push(InstanceReport {
            start: igrid.start(),
            relevant: relevant.len(),
            served: served_count,
            buyer_payments_gbp: report.buyer_payments_gbp,
            seller_receipts_gbp: report.seller_receipts_gbp(),
            balanced: report.is_balanced(),
            exact,
        });

        for o in closed {
            record_household(&mut households, &o);
            let i = index[&o.request_id];
            records[i] = Some(o);
        }
        clock = clock + cfg.spacing_min();
    }

    for &i in &waiting {
        let o = unserved_record(&sim.requests[i], None);
        record_household(&mut households, &o);
        records[i] = Some(o);
    }
    let outcomes: Vec<OutcomeRecord> = records
        .into_iter()
        .zip(&sim.requests)
        .map(|(o, r)| o.unwrap_or_else(|| unserved_record(r, None)))
        .collect();

    let capacity_violations = (0..data.len())
        .filter(|&t| scheduled[t] > capacity[t] + offered[t] + CAPACITY_TOL)
        .count();
    let reliability = if outcomes.is_empty() {
        None
    } else {
        let by_id: BTreeMap<RequestId, Request> = sim.requests.iter().map(|r| (r.id.clone(), r.clone())).collect();
        let plain: Vec<AllocationOutcome> = outcomes.iter().map(OutcomeRecord::to_outcome).collect();
        Some(ReliabilityReport::build(&plain, &by_id, cfg.gamma_target)?)
    };
    let offers_rational = offer_floors
        .iter()
        .all(|(id, floor)| offer_receipts.get(id).copied().unwrap_or(0.0) + 1e-9 >= *floor);
    Ok(RunResult {
        outcomes,
        prices,
        instances,
        reliability,
        households,
        scheduled_kw: scheduled,
        capacity_violations,
        invariants: Invariants {
            capacity: capacity_violations == 0,
            budget_balance: balanced,
            individual_rationality: rational,
        },
        offer_receipts_gbp: offer_receipts,
        offers_rational,
    })
}
