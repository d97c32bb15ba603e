//! Scenario-level pipelines: ingest or synthesise data, characterise it, run the market,
//! and summarise. These back the command-line subcommands.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::allocators::{Approach, FairnessPolicy, SolverOptions};
use crate::amm::{affordability_cutoff, supply_mix_excess, tariff_cost, Tariff};
use crate::characterizer::{blocks_to_requests, characterize_all, CharacterizerParams, ConsumptionSeries, FlexibleBlock};
use crate::data_io::{
    load_consumption_detailed, load_supply_csv, load_tariff_csv, scale_supply, slice_series, synth_generate, SupplyCase,
    SynthSpec,
};
use crate::engine::{simulate, Invariants, OutcomeRecord, RunResult, Simulation};
use crate::error::{Error, Result};
use crate::grid::{TimeGrid, Timestamp, MINUTES_PER_HOUR};
use crate::market::MarketConfig;
use crate::types::{HouseholdId, HouseholdRecord, Offer, Request};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Period {
    pub start: Timestamp,
    pub end: Timestamp,
}

/// Initial conditions of the two duplicated request groups in the shortage experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShortageSpec {
    pub group1_gamma: f64,
    pub group1_bp_max: f64,
    pub group2_gamma: f64,
    pub group2_bp_max: f64,
    /// Energy behind each household's seeded reliability, kWh.
    pub history_kwh: f64,
}

impl Default for ShortageSpec {
    fn default() -> Self {
        ShortageSpec {
            group1_gamma: 1.0,
            group1_bp_max: 1_000_000.0,
            group2_gamma: 0.0,
            group2_bp_max: 1.0,
            history_kwh: 100.0,
        }
    }
}

/// One complete scenario. Data comes from `consumption_csv` and `supply_csv` when both are
/// given, otherwise from `synth`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub consumption_csv: Option<PathBuf>,
    pub supply_csv: Option<PathBuf>,
    pub tariff_csv: Option<PathBuf>,
    pub synth: SynthSpec,
    /// Divisor from national supply to the cohort.
    pub upsilon: f64,
    /// Flexibility granted to every request, hours.
    pub sigma_hours: f64,
    /// Budget per kWh for every request.
    pub bp_h_max: f64,
    pub approach: Approach,
    pub market: MarketConfig,
    pub fairness: FairnessPolicy,
    pub solver: SolverOptions,
    pub characterizer: CharacterizerParams,
    pub offers: Vec<Offer>,
    pub seed: u64,
    pub period: Option<Period>,
    pub shortage: ShortageSpec,
    /// Flat comparator tariff for the supply-mix report, GBP/kWh.
    pub flat_tariff: f64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            consumption_csv: None,
            supply_csv: None,
            tariff_csv: None,
            synth: SynthSpec::default(),
            upsilon: 125_000.0,
            sigma_hours: 3.0,
            bp_h_max: 1.0,
            approach: Approach::FairPlay,
            market: MarketConfig::default(),
            fairness: FairnessPolicy::default(),
            solver: SolverOptions::default(),
            characterizer: CharacterizerParams::default(),
            offers: Vec::new(),
            seed: 0,
            period: None,
            shortage: ShortageSpec::default(),
            flat_tariff: 0.2084,
        }
    }
}

impl ScenarioSpec {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut spec: ScenarioSpec = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut spec.consumption_csv, &mut spec.supply_csv, &mut spec.tariff_csv].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        const WHAT: &str = "scenario";
        if !(self.upsilon.is_finite() && self.upsilon > 0.0) {
            return Err(Error::invalid(WHAT, "upsilon must be positive"));
        }
        if !(self.sigma_hours.is_finite() && self.sigma_hours >= 0.0) {
            return Err(Error::invalid(WHAT, "sigma_hours must be non-negative"));
        }
        if !(self.bp_h_max.is_finite() && self.bp_h_max >= 0.0) {
            return Err(Error::invalid(WHAT, "bp_h_max must be non-negative"));
        }
        if self.consumption_csv.is_some() != self.supply_csv.is_some() {
            return Err(Error::invalid(WHAT, "give both consumption_csv and supply_csv, or neither"));
        }
        self.market.validate()?;
        self.fairness.validate()?;
        self.characterizer.validate(self.market.resolution_minutes)?;
        Ok(())
    }

    pub fn sigma_min(&self) -> i64 {
        hours_to_minutes(self.sigma_hours, self.market.resolution_minutes)
    }

    fn data_rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    /// Market draws use their own stream so data and allocation randomness stay independent.
    pub fn market_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(1);
        rng
    }
}

fn hours_to_minutes(hours: f64, resolution_min: i64) -> i64 {
    let m = (hours * MINUTES_PER_HOUR as f64).round() as i64;
    m / resolution_min * resolution_min
}

/// Ingested or synthesised data on a common grid, scaled and characterised.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedData {
    pub grid: TimeGrid,
    pub consumption: Vec<ConsumptionSeries>,
    /// Scaled total supply, kW.
    pub supply_kw: Vec<f64>,
    /// Aggregate essential consumption, kW.
    pub essential_kw: Vec<f64>,
    pub blocks: Vec<FlexibleBlock>,
    pub case_label: Option<SupplyCase>,
    pub dropped_days: usize,
}

impl PreparedData {
    /// Requests for every block whose window fits inside the data and starts in `period`.
    pub fn requests(&self, sigma_min: i64, bp_h_max: f64, period: Option<Period>) -> Result<Vec<Request>> {
        let (from, to) = period.map_or((self.grid.start(), self.grid.end()), |p| (p.start, p.end));
        Ok(blocks_to_requests(&self.blocks, sigma_min, bp_h_max)?
            .into_iter()
            .filter(|r| r.earliest >= from && r.earliest < to && r.latest <= self.grid.end())
            .collect())
    }
}

fn slice_consumption(s: &ConsumptionSeries, grid: &TimeGrid) -> Result<ConsumptionSeries> {
    let power = slice_series(&s.grid, &s.power_kw, grid, s.household.as_str())?;
    ConsumptionSeries::new(s.household.clone(), *grid, power)
}

pub fn prepare(spec: &ScenarioSpec) -> Result<PreparedData> {
    spec.validate()?;
    let (consumption, supply, dropped_days) = match (&spec.consumption_csv, &spec.supply_csv) {
        (Some(c), Some(s)) => {
            let load = load_consumption_detailed(c)?;
            (load.series, load_supply_csv(s)?, load.dropped_days.len())
        }
        _ => {
            let (c, s) = synth_generate(&spec.synth, &mut spec.data_rng())?;
            (c, s, 0)
        }
    };
    if consumption.is_empty() {
        return Err(Error::Coverage("no consumption data".into()));
    }
    let res = spec.market.resolution_minutes;
    if supply.grid.resolution_min() != res || consumption[0].grid.resolution_min() != res {
        return Err(Error::invalid("scenario", "data resolution differs from the market resolution"));
    }
    let start = supply.grid.start().max(consumption[0].grid.start());
    let end = supply.grid.end().min(consumption[0].grid.end());
    if end <= start {
        return Err(Error::Coverage("consumption and supply data do not overlap".into()));
    }
    let grid = TimeGrid::new(start, end, res)?;
    let scaled = scale_supply(&supply, spec.upsilon)?;
    let supply_kw = scaled.slice(&grid)?;
    let consumption = consumption
        .iter()
        .map(|s| slice_consumption(s, &grid))
        .collect::<Result<Vec<_>>>()?;
    let characterized = characterize_all(&consumption, &spec.characterizer)?;
    let mut essential_kw = vec![0.0; grid.len()];
    let mut blocks = Vec::new();
    for c in characterized {
        for (t, p) in c.essential.power_kw.iter().enumerate() {
            essential_kw[t] += p;
        }
        blocks.extend(c.blocks);
    }
    Ok(PreparedData {
        grid,
        consumption,
        supply_kw,
        essential_kw,
        blocks,
        case_label: supply.case_label,
        dropped_days,
    })
}

pub fn simulation_for(
    spec: &ScenarioSpec,
    data: &PreparedData,
    approach: Approach,
    requests: Vec<Request>,
    households: BTreeMap<HouseholdId, HouseholdRecord>,
) -> Simulation {
    let (start, end) = spec.period.map_or((data.grid.start(), data.grid.end()), |p| (p.start, p.end));
    Simulation {
        config: spec.market.clone(),
        approach,
        policy: spec.fairness,
        solver: spec.solver.clone(),
        grid: data.grid,
        supply_kw: data.supply_kw.clone(),
        essential_kw: data.essential_kw.clone(),
        requests,
        offers: spec.offers.clone(),
        households,
        start,
        end,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupShare {
    pub requested_kwh: f64,
    pub served_kwh: f64,
    pub share: f64,
}

impl GroupShare {
    fn from_outcomes<'a>(outcomes: impl Iterator<Item = &'a OutcomeRecord>) -> Self {
        let (mut requested_kwh, mut served_kwh) = (0.0, 0.0);
        for o in outcomes {
            requested_kwh += o.energy_kwh;
            served_kwh += o.delivered_kwh;
        }
        GroupShare {
            requested_kwh,
            served_kwh,
            share: if requested_kwh > 0.0 { served_kwh / requested_kwh } else { 0.0 },
        }
    }
}

/// The machine-readable result of one run, written as `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub approach: Approach,
    pub seed: u64,
    pub sigma_hours: f64,
    pub gamma_actual: Option<f64>,
    pub gamma_target: f64,
    pub gamma_gap: Option<f64>,
    pub total_cost_gbp: f64,
    pub served_kwh: f64,
    pub requested_kwh: f64,
    pub requests: usize,
    pub served_requests: usize,
    pub instances: usize,
    pub exact: bool,
    pub capacity_violations: usize,
    pub invariants: Invariants,
    pub offers_rational: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_group: Option<BTreeMap<String, GroupShare>>,
}

impl Summary {
    pub fn new(spec: &ScenarioSpec, approach: Approach, result: &RunResult) -> Self {
        Summary {
            approach,
            seed: spec.seed,
            sigma_hours: spec.sigma_hours,
            gamma_actual: result.gamma_actual(),
            gamma_target: spec.market.gamma_target,
            gamma_gap: result.reliability.as_ref().map(|r| r.gap),
            total_cost_gbp: result.total_cost_gbp(),
            served_kwh: result.served_kwh(),
            requested_kwh: result.requested_kwh(),
            requests: result.outcomes.len(),
            served_requests: result.outcomes.iter().filter(|o| o.served).count(),
            instances: result.instances.len(),
            exact: result.instances.iter().all(|i| i.exact),
            capacity_violations: result.capacity_violations,
            invariants: result.invariants,
            offers_rational: result.offers_rational,
            per_group: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub result: RunResult,
    pub summary: Summary,
}

/// The full pipeline for `spec.approach`.
pub fn run(spec: &ScenarioSpec) -> Result<RunOutput> {
    let data = prepare(spec)?;
    run_prepared(spec, &data, spec.approach)
}

pub fn run_prepared(spec: &ScenarioSpec, data: &PreparedData, approach: Approach) -> Result<RunOutput> {
    let requests = data.requests(spec.sigma_min(), spec.bp_h_max, spec.period)?;
    let sim = simulation_for(spec, data, approach, requests, BTreeMap::new());
    let result = simulate(&sim, &mut spec.market_rng())?;
    let summary = Summary::new(spec, approach, &result);
    Ok(RunOutput { result, summary })
}

/// Write `outcomes.csv`, `prices.csv`, and `summary.json` into `dir`.
pub fn write_run_outputs(dir: impl AsRef<Path>, result: &RunResult, summary: &Summary) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    write_csv(dir.join("outcomes.csv"), &result.outcomes)?;
    write_csv(dir.join("prices.csv"), &result.prices)?;
    write_json(dir.join("summary.json"), summary)
}

pub fn write_csv<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Linear-interpolation percentile of sorted values, `q` in `[0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sigma_hours: f64,
    pub p25: Option<f64>,
    pub median: Option<f64>,
    pub p75: Option<f64>,
    pub requests: usize,
    pub served_requests: usize,
    pub invariants_hold: bool,
}

/// Unit cost of served flexible energy (GBP/kWh) at each flexibility level.
pub fn sweep_flex(spec: &ScenarioSpec, sigmas_hours: &[f64]) -> Result<Vec<SweepRow>> {
    let data = prepare(spec)?;
    sigmas_hours
        .iter()
        .map(|&sigma| {
            let s = ScenarioSpec {
                sigma_hours: sigma,
                ..spec.clone()
            };
            let out = run_prepared(&s, &data, s.approach)?;
            let mut costs: Vec<f64> = out.result.outcomes.iter().filter_map(OutcomeRecord::unit_cost).collect();
            costs.sort_by(f64::total_cmp);
            Ok(SweepRow {
                sigma_hours: sigma,
                p25: percentile(&costs, 0.25),
                median: percentile(&costs, 0.5),
                p75: percentile(&costs, 0.75),
                requests: out.summary.requests,
                served_requests: out.summary.served_requests,
                invariants_hold: out.summary.invariants.all_hold(),
            })
        })
        .collect()
}

pub const GROUP_1: &str = "group1";
pub const GROUP_2: &str = "group2";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShortageRow {
    pub approach: Approach,
    pub group1: GroupShare,
    pub group2: GroupShare,
    pub overall: GroupShare,
    pub summary: Summary,
}

/// Duplicate every request into two groups that differ only in seeded reliability and
/// willingness to pay, then run each approach on the same data and seed.
pub fn shortage_experiment(spec: &ScenarioSpec) -> Result<Vec<ShortageRow>> {
    let data = prepare(spec)?;
    shortage_prepared(spec, &data, &Approach::ALL)
}

pub fn shortage_prepared(spec: &ScenarioSpec, data: &PreparedData, approaches: &[Approach]) -> Result<Vec<ShortageRow>> {
    let sh = &spec.shortage;
    let base = data.requests(spec.sigma_min(), 1.0, spec.period)?;
    let mut requests = Vec::with_capacity(base.len() * 2);
    let mut households = BTreeMap::new();
    let mut group_of: BTreeMap<HouseholdId, &'static str> = BTreeMap::new();
    for (tag, gamma, bp) in [(GROUP_1, sh.group1_gamma, sh.group1_bp_max), (GROUP_2, sh.group2_gamma, sh.group2_bp_max)] {
        for r in &base {
            let household = HouseholdId::new(format!("{tag}-{}", r.household));
            let mut copy = r.clone();
            copy.id = format!("{tag}-{}", r.id).as_str().into();
            copy.household = household.clone();
            copy.budget_gbp = bp * r.energy_kwh;
            requests.push(copy);
            if !households.contains_key(&household) {
                households.insert(household.clone(), HouseholdRecord::seeded(household.clone(), gamma, sh.history_kwh)?);
            }
            group_of.insert(household, tag);
        }
    }
    approaches
        .iter()
        .map(|&approach| {
            let sim = simulation_for(spec, data, approach, requests.clone(), households.clone());
            let result = simulate(&sim, &mut spec.market_rng())?;
            let in_group = |tag: &'static str| {
                GroupShare::from_outcomes(
                    result
                        .outcomes
                        .iter()
                        .filter(|o| group_of.get(&o.household).copied() == Some(tag)),
                )
            };
            let group1 = in_group(GROUP_1);
            let group2 = in_group(GROUP_2);
            let overall = GroupShare::from_outcomes(result.outcomes.iter());
            let mut summary = Summary::new(spec, approach, &result);
            summary.per_group = Some(BTreeMap::from([
                (GROUP_1.to_string(), group1.clone()),
                (GROUP_2.to_string(), group2.clone()),
            ]));
            Ok(ShortageRow {
                approach,
                group1,
                group2,
                overall,
                summary,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixRow {
    /// Share of essential energy met by uncontrollable supply.
    pub mix: f64,
    pub excess_kwh: f64,
    pub cutoff_flat: Option<f64>,
    pub cutoff_static_tou: Option<f64>,
    pub cutoff_dynamic_tou: Option<f64>,
}

/// Excess generation and the controllable-supply price cutoff against each comparator
/// tariff, per uncontrollable share of essential energy.
pub fn supply_mix_report(spec: &ScenarioSpec, mixes: &[f64]) -> Result<Vec<MixRow>> {
    let data = prepare(spec)?;
    let h = data.grid.period_hours();
    let essential = ConsumptionSeries::new(HouseholdId::new("all"), data.grid, data.essential_kw.clone())?;
    let essential_kwh = essential.energy_kwh();
    let flat = tariff_cost(&essential, &Tariff::flat(data.grid, spec.flat_tariff))?;
    let static_tou = tariff_cost(&essential, &Tariff::uk_static_tou(data.grid))?;
    let dynamic = match &spec.tariff_csv {
        Some(p) => Some(tariff_cost(&essential, &load_tariff_csv(p)?)?),
        None => None,
    };
    mixes
        .iter()
        .map(|&mix| {
            let share = 1.0 - mix;
            let cutoff = |cost: f64| affordability_cutoff(cost, essential_kwh, share).ok();
            Ok(MixRow {
                mix,
                excess_kwh: supply_mix_excess(&data.supply_kw, &data.essential_kw, h, mix)?,
                cutoff_flat: cutoff(flat),
                cutoff_static_tou: cutoff(static_tou),
                cutoff_dynamic_tou: dynamic.and_then(cutoff),
            })
        })
        .collect()
}

/// Block and request statistics for the `characterize` subcommand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CharacterizeSummary {
    pub households: usize,
    pub periods: usize,
    pub blocks: usize,
    pub flexible_kwh: f64,
    pub essential_kwh: f64,
    pub mean_block_kwh: Option<f64>,
    pub dropped_days: usize,
}

pub fn characterize_summary(data: &PreparedData) -> CharacterizeSummary {
    let flexible_kwh: f64 = data.blocks.iter().map(|b| b.energy_kwh).sum();
    CharacterizeSummary {
        households: data.consumption.len(),
        periods: data.grid.len(),
        blocks: data.blocks.len(),
        flexible_kwh,
        essential_kwh: data.essential_kw.iter().sum::<f64>() * data.grid.period_hours(),
        mean_block_kwh: (!data.blocks.is_empty()).then(|| flexible_kwh / data.blocks.len() as f64),
        dropped_days: data.dropped_days,
    }
}
