//! Delivered-versus-requested energy metrics at request, household, and system level,
//! and the check of a reliability target against a modelled population.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::allocators::AllocationOutcome;
use crate::engine::simulate;
use crate::error::{Error, Result};
use crate::experiments::{prepare, simulation_for, PreparedData, ScenarioSpec};
use crate::grid::MINUTES_PER_HOUR;
use crate::types::{HouseholdId, HouseholdRecord, Request, RequestId};

/// Fraction of the request's energy that was delivered.
pub fn request_success(outcome: &AllocationOutcome, request: &Request) -> f64 {
    debug_assert_eq!(outcome.request_id, request.id);
    (outcome.delivered_kwh / request.energy_kwh).clamp(0.0, 1.0)
}

/// Energy-weighted mean success over a household's requests; 1 with no history.
pub fn household_reliability(outcomes: &[AllocationOutcome], requests: &[&Request]) -> Result<f64> {
    if outcomes.len() != requests.len() {
        return Err(Error::invalid("reliability", "outcomes and requests are not aligned"));
    }
    let weight: f64 = requests.iter().map(|r| r.energy_kwh).sum();
    if weight <= 0.0 {
        return Ok(1.0);
    }
    let served: f64 = outcomes
        .iter()
        .zip(requests)
        .map(|(o, r)| r.energy_kwh * request_success(o, r))
        .sum();
    Ok((served / weight).clamp(0.0, 1.0))
}

/// Requested-energy-weighted mean of household reliabilities.
pub fn system_reliability<'a, I>(households: I) -> Result<f64>
where
    I: IntoIterator<Item = &'a HouseholdRecord>,
{
    let (mut num, mut den) = (0.0, 0.0);
    for h in households {
        num += h.requested_kwh * h.gamma;
        den += h.requested_kwh;
    }
    if den <= 0.0 {
        return Err(Error::UndefinedMetric("no household has requested any energy".into()));
    }
    Ok((num / den).clamp(0.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HouseholdScore {
    pub gamma: f64,
    pub weight_kwh: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityReport {
    pub per_request: BTreeMap<RequestId, f64>,
    pub per_household: BTreeMap<HouseholdId, HouseholdScore>,
    pub system: f64,
    pub target: f64,
    /// `system - target`; negative when the target is not met.
    pub gap: f64,
    pub suggestions: Vec<String>,
}

impl ReliabilityReport {
    /// Report over the requests decided in a run, households weighted by the energy they
    /// requested in it.
    pub fn build(outcomes: &[AllocationOutcome], requests: &BTreeMap<RequestId, Request>, target: f64) -> Result<Self> {
        let mut per_request = BTreeMap::new();
        let mut records: BTreeMap<HouseholdId, HouseholdRecord> = BTreeMap::new();
        for o in outcomes {
            let r = requests
                .get(&o.request_id)
                .ok_or_else(|| Error::invalid("reliability", format!("no request {}", o.request_id)))?;
            per_request.insert(o.request_id.clone(), request_success(o, r));
            records
                .entry(r.household.clone())
                .or_insert_with(|| HouseholdRecord::new(r.household.clone()))
                .record(r.energy_kwh, o.delivered_kwh);
        }
        let system = system_reliability(records.values())?;
        let per_household = records
            .into_iter()
            .map(|(id, h)| {
                (
                    id,
                    HouseholdScore {
                        gamma: h.gamma,
                        weight_kwh: h.requested_kwh,
                    },
                )
            })
            .collect();
        let gap = system - target;
        let suggestions = if gap < 0.0 { levers() } else { Vec::new() };
        Ok(ReliabilityReport {
            per_request,
            per_household,
            system,
            target,
            gap,
            suggestions,
        })
    }

    pub fn meets_target(&self) -> bool {
        self.gap >= 0.0
    }
}

fn levers() -> Vec<String> {
    vec![
        "raise sp_max to attract more controllable supply".to_string(),
        "encourage consumers to offer more flexibility (larger sigma)".to_string(),
    ]
}

/// How much flexibility the modelled population offers, per request.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SigmaDistribution {
    Fixed { hours: f64 },
    Uniform { min_hours: f64, max_hours: f64 },
    Choice { hours: Vec<f64> },
}

impl SigmaDistribution {
    fn validate(&self) -> Result<()> {
        let ok = match self {
            SigmaDistribution::Fixed { hours } => *hours >= 0.0,
            SigmaDistribution::Uniform { min_hours, max_hours } => 0.0 <= *min_hours && min_hours <= max_hours,
            SigmaDistribution::Choice { hours } => !hours.is_empty() && hours.iter().all(|h| *h >= 0.0),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("sigma distribution", "hours must be non-negative and ranges ordered"))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            SigmaDistribution::Fixed { hours } => *hours,
            SigmaDistribution::Uniform { min_hours, max_hours } => {
                if min_hours == max_hours {
                    *min_hours
                } else {
                    rng.random_range(*min_hours..=*max_hours)
                }
            }
            SigmaDistribution::Choice { hours } => hours[rng.random_range(0..hours.len())],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssessOptions {
    /// Re-run the simulation with each lever applied when the target is missed.
    pub resimulate_levers: bool,
    /// Multiplier on the sell-price ceiling for the supplier-price lever.
    pub sp_max_factor: f64,
    /// Extra flexibility added to every request for the flexibility lever.
    pub sigma_extra_hours: f64,
}

impl Default for AssessOptions {
    fn default() -> Self {
        AssessOptions {
            resimulate_levers: false,
            sp_max_factor: 2.0,
            sigma_extra_hours: 3.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeverTrial {
    pub lever: String,
    pub gamma_actual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assessment {
    pub report: ReliabilityReport,
    pub levers: Vec<LeverTrial>,
}

/// Requests with a flexibility drawn per request from `sigma`, rounded down to the
/// market resolution.
fn modelled_requests<R: Rng + ?Sized>(
    spec: &ScenarioSpec,
    data: &PreparedData,
    sigma: &SigmaDistribution,
    extra_hours: f64,
    rng: &mut R,
) -> Result<Vec<Request>> {
    let res = spec.market.resolution_minutes;
    let mut out = Vec::new();
    for mut r in data.requests(0, spec.bp_h_max, spec.period)? {
        let hours = sigma.sample(rng) + extra_hours;
        let minutes = (hours * MINUTES_PER_HOUR as f64).round() as i64 / res * res;
        r.latest = r.latest + minutes;
        if r.latest <= data.grid.end() {
            out.push(r);
        }
    }
    Ok(out)
}

fn gamma_of(
    spec: &ScenarioSpec,
    data: &PreparedData,
    requests: Vec<Request>,
    sp_max_factor: f64,
) -> Result<Option<ReliabilityReport>> {
    let mut spec = spec.clone();
    spec.market.sp_max = Some(spec.market.effective_sp_max() * sp_max_factor);
    let sim = simulation_for(&spec, data, spec.approach, requests, BTreeMap::new());
    Ok(simulate(&sim, &mut spec.market_rng())?.reliability)
}

/// Simulate the modelled population and compare the achieved system reliability with
/// `spec.market.gamma_target`. When the target is missed the report lists the two levers
/// (pay controllable suppliers more, offer more flexibility) and, if requested, the
/// reliability each achieves on its own.
pub fn assess_target<R: Rng + ?Sized>(
    spec: &ScenarioSpec,
    sigma: &SigmaDistribution,
    options: &AssessOptions,
    rng: &mut R,
) -> Result<Assessment> {
    sigma.validate()?;
    let data = prepare(spec)?;
    if let Some(p) = spec.period {
        if p.start < data.grid.start() || p.end > data.grid.end() {
            return Err(Error::Coverage(format!(
                "models cover {}..{} but the horizon is {}..{}",
                data.grid.start(),
                data.grid.end(),
                p.start,
                p.end
            )));
        }
    }
    let requests = modelled_requests(spec, &data, sigma, 0.0, rng)?;
    let report = gamma_of(spec, &data, requests.clone(), 1.0)?
        .ok_or_else(|| Error::UndefinedMetric("the modelled population made no requests".into()))?;
    let mut levers = Vec::new();
    if !report.meets_target() && options.resimulate_levers {
        if let Some(r) = gamma_of(spec, &data, requests, options.sp_max_factor)? {
            levers.push(LeverTrial {
                lever: format!("sp_max x{}", options.sp_max_factor),
                gamma_actual: r.system,
            });
        }
        let wider = modelled_requests(spec, &data, sigma, options.sigma_extra_hours, rng)?;
        if let Some(r) = gamma_of(spec, &data, wider, 1.0)? {
            levers.push(LeverTrial {
                lever: format!("sigma +{}h", options.sigma_extra_hours),
                gamma_actual: r.system,
            });
        }
    }
    Ok(Assessment { report, levers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocators::Slot;
    use crate::grid::Timestamp;

    fn req(id: &str, h: &str, q: f64) -> Request {
        Request::new(id, h, Timestamp::from_hours(0), Timestamp::from_hours(10), q, 1.0, 1.0, 1.0).unwrap()
    }

    fn served(r: &Request) -> AllocationOutcome {
        AllocationOutcome::served(
            r,
            Slot {
                start_period: 0,
                n_periods: 1,
                power_kw: 1.0,
                cost_gbp: 0.0,
            },
        )
    }

    #[test]
    fn request_success_is_all_or_nothing() {
        let r = req("a", "h", 2.0);
        assert_eq!(request_success(&served(&r), &r), 1.0);
        assert_eq!(served(&r).delivered_kwh, 2.0);
        assert_eq!(request_success(&AllocationOutcome::unserved(&r), &r), 0.0);
    }

    #[test]
    fn household_examples() {
        let (a, b) = (req("a", "h", 2.0), req("b", "h", 2.0));
        let g = household_reliability(&[served(&a), AllocationOutcome::unserved(&b)], &[&a, &b]).unwrap();
        assert_eq!(g, 0.5);
        let (c, d) = (req("c", "h", 1.0), req("d", "h", 3.0));
        let g = household_reliability(&[served(&c), AllocationOutcome::unserved(&d)], &[&c, &d]).unwrap();
        assert_eq!(g, 0.25);
        assert_eq!(household_reliability(&[served(&a)], &[&a]).unwrap(), 1.0);
        assert_eq!(household_reliability(&[], &[]).unwrap(), 1.0);
    }

    #[test]
    fn system_examples() {
        let h = |id: &str, g: f64, w: f64| HouseholdRecord::seeded(id, g, w).unwrap();
        assert_eq!(system_reliability(&[h("a", 1.0, 10.0), h("b", 0.0, 10.0)]).unwrap(), 0.5);
        assert_eq!(system_reliability(&[h("a", 1.0, 30.0), h("b", 0.5, 10.0)]).unwrap(), 0.875);
        assert_eq!(system_reliability(&[h("a", 0.3, 7.0)]).unwrap(), 0.3);
        assert!(matches!(
            system_reliability(&[HouseholdRecord::new("x")]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn report_gap_and_levers() {
        let (a, b) = (req("a", "h1", 3.0), req("b", "h2", 1.0));
        let requests: BTreeMap<RequestId, Request> = [a.clone(), b.clone()].into_iter().map(|r| (r.id.clone(), r)).collect();
        let outcomes = [served(&a), AllocationOutcome::unserved(&b)];
        let rep = ReliabilityReport::build(&outcomes, &requests, 0.9).unwrap();
        assert_eq!(rep.system, 0.75);
        assert!((rep.gap + 0.15).abs() < 1e-12);
        assert_eq!(rep.suggestions.len(), 2);
        assert_eq!(rep.per_household[&HouseholdId::new("h2")].gamma, 0.0);
    }

    fn assess_spec(case: crate::data_io::SupplyCase, upsilon: f64) -> ScenarioSpec {
        let mut spec = ScenarioSpec {
            upsilon,
            ..ScenarioSpec::default()
        };
        spec.synth.households = 20;
        spec.synth.cases = vec![case];
        spec
    }

    fn assess(spec: &ScenarioSpec, levers: bool) -> Result<Assessment> {
        use rand::SeedableRng;
        let options = AssessOptions {
            resimulate_levers: levers,
            ..AssessOptions::default()
        };
        let sigma = SigmaDistribution::Choice { hours: vec![0.0, 3.0] };
        assess_target(spec, &sigma, &options, &mut rand_chacha::ChaCha8Rng::seed_from_u64(1))
    }

    #[test]
    fn abundant_supply_meets_any_target() {
        let spec = assess_spec(crate::data_io::SupplyCase::HighFlat, 1_000.0);
        let a = assess(&spec, true).unwrap();
        assert_eq!(a.report.system, 1.0);
        assert!(a.report.meets_target());
        assert!(a.levers.is_empty());
    }

    #[test]
    fn no_flexible_supply_gives_zero() {
        let spec = assess_spec(crate::data_io::SupplyCase::LowFlat, 1e12);
        let a = assess(&spec, true).unwrap();
        assert_eq!(a.report.system, 0.0);
        assert!(!a.report.meets_target());
        assert_eq!(a.report.suggestions.len(), 2);
        assert_eq!(a.levers.len(), 2);
    }

    #[test]
    fn horizon_beyond_models_is_a_coverage_error() {
        let mut spec = assess_spec(crate::data_io::SupplyCase::Variable, 125_000.0);
        spec.period = Some(crate::experiments::Period {
            start: Timestamp::from_hours(0),
            end: Timestamp::from_hours(48),
        });
        assert!(matches!(assess(&spec, false), Err(Error::Coverage(_))));
    }

    #[test]
    fn sigma_distributions_sample_in_range() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let u = SigmaDistribution::Uniform { min_hours: 1.0, max_hours: 2.0 };
        assert!((0..100).map(|_| u.sample(&mut rng)).all(|h| (1.0..=2.0).contains(&h)));
        assert_eq!(SigmaDistribution::Fixed { hours: 4.0 }.sample(&mut rng), 4.0);
        assert!(SigmaDistribution::Choice { hours: vec![] }.validate().is_err());
    }
}
