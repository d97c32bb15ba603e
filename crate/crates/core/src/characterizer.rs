//! Splits a household's metered power into essential and flexible consumption and turns
//! the flexible part into market requests.
//!
//! Thresholding runs on power quantised down to multiples of `p_base`. A period belongs to
//! an excursion when its quantised power clears `p_threshold` on top of a `p_base`
//! allowance for baseload; excursions shorter than `t_threshold` (kettles, showers) stay
//! essential. Within a kept excursion everything above the local baseline (the power just
//! before it, capped at `p_base`) is flexible, and the baseline stays essential.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{TimeGrid, Timestamp, MINUTES_PER_HOUR};
use crate::types::{HouseholdId, Request, RequestId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsumptionSeries {
    pub household: HouseholdId,
    pub grid: TimeGrid,
    pub power_kw: Vec<f64>,
}

impl ConsumptionSeries {
    pub fn new(household: HouseholdId, grid: TimeGrid, power_kw: Vec<f64>) -> Result<Self> {
        if power_kw.len() != grid.len() {
            return Err(Error::invalid(
                "consumption series",
                format!("{household}: {} samples for {} periods", power_kw.len(), grid.len()),
            ));
        }
        if let Some(bad) = power_kw.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(Error::invalid("consumption series", format!("{household}: power {bad} is negative")));
        }
        Ok(ConsumptionSeries {
            household,
            grid,
            power_kw,
        })
    }

    pub fn energy_kwh(&self) -> f64 {
        self.power_kw.iter().sum::<f64>() * self.grid.period_hours()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CharacterizerParams {
    pub p_base_kw: f64,
    pub p_threshold_kw: f64,
    pub t_threshold_minutes: i64,
}

impl Default for CharacterizerParams {
    fn default() -> Self {
        CharacterizerParams {
            p_base_kw: 0.25,
            p_threshold_kw: 1.0,
            t_threshold_minutes: 30,
        }
    }
}

impl CharacterizerParams {
    pub fn validate(&self, resolution_min: i64) -> Result<()> {
        const WHAT: &str = "characterizer params";
        if !(self.p_base_kw > 0.0 && self.p_threshold_kw > 0.0 && self.t_threshold_minutes > 0) {
            return Err(Error::invalid(WHAT, "all thresholds must be positive"));
        }
        if self.t_threshold_minutes < resolution_min || self.t_threshold_minutes % resolution_min != 0 {
            return Err(Error::invalid(
                WHAT,
                format!("t_threshold {} is not a multiple of the {resolution_min}-minute resolution", self.t_threshold_minutes),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlexibleBlock {
    pub household: HouseholdId,
    pub start: Timestamp,
    pub duration_min: i64,
    pub mean_power_kw: f64,
    pub energy_kwh: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Characterized {
    pub essential: ConsumptionSeries,
    pub blocks: Vec<FlexibleBlock>,
}

pub fn characterize(series: &ConsumptionSeries, params: &CharacterizerParams) -> Result<Characterized> {
    let grid = series.grid;
    params.validate(grid.resolution_min())?;
    let p = &series.power_kw;
    let n = p.len();
    let min_periods = (params.t_threshold_minutes / grid.resolution_min()) as usize;
    let trigger = params.p_threshold_kw + params.p_base_kw;
    let quantised = |v: f64| (v / params.p_base_kw + 1e-9).floor() * params.p_base_kw;
    let h = grid.period_hours();

    let mut essential = p.clone();
    let mut blocks = Vec::new();
    let mut t = 0;
    while t < n {
        if quantised(p[t]) < trigger {
            t += 1;
            continue;
        }
        let start = t;
        while t < n && quantised(p[t]) >= trigger {
            t += 1;
        }
        let end = t;
        if end - start < min_periods {
            continue;
        }
        let neighbour = if start > 0 {
            p[start - 1]
        } else if end < n {
            p[end]
        } else {
            params.p_base_kw
        };
        let baseline = neighbour.min(params.p_base_kw);
        let mut energy = 0.0;
        for e in &mut essential[start..end] {
            energy += (*e - baseline) * h;
            *e = baseline;
        }
        let duration_min = (end - start) as i64 * grid.resolution_min();
        blocks.push(FlexibleBlock {
            household: series.household.clone(),
            start: grid.period_start(start),
            duration_min,
            mean_power_kw: energy / (duration_min as f64 / MINUTES_PER_HOUR as f64),
            energy_kwh: energy,
        });
    }
    Ok(Characterized {
        essential: ConsumptionSeries {
            household: series.household.clone(),
            grid,
            power_kw: essential,
        },
        blocks,
    })
}

pub fn characterize_all(series: &[ConsumptionSeries], params: &CharacterizerParams) -> Result<Vec<Characterized>> {
    series.iter().map(|s| characterize(s, params)).collect()
}

/// One request per block: its energy at its mean power, valid from the block start until
/// `sigma_min` after the block would have finished, budgeted at `bp_h_max` per kWh.
pub fn blocks_to_requests(blocks: &[FlexibleBlock], sigma_min: i64, bp_h_max: f64) -> Result<Vec<Request>> {
    if sigma_min < 0 {
        return Err(Error::invalid("sigma", "flexibility must be non-negative"));
    }
    let mut out = Vec::with_capacity(blocks.len());
    let mut counter: std::collections::BTreeMap<&HouseholdId, usize> = Default::default();
    for b in blocks {
        let k = counter.entry(&b.household).or_default();
        let r = Request::new(
            RequestId(format!("{}-{:04}", b.household, k)),
            b.household.clone(),
            b.start,
            b.start + b.duration_min + sigma_min,
            b.energy_kwh,
            b.mean_power_kw,
            b.mean_power_kw,
            bp_h_max * b.energy_kwh,
        )?;
        *k += 1;
        out.push(r);
    }
    Ok(out)
}
