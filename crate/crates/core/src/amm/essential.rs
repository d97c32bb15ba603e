//! Essential-energy economics: the socialised unit price, excess generation at a given
//! supply mix, break-even prices for controllable supply, and comparator tariffs.

use serde::{Deserialize, Serialize};

use crate::characterizer::ConsumptionSeries;
use crate::error::{Error, Result};
use crate::grid::{TimeGrid, Timestamp};

/// A unit-price series (GBP/kWh) on a period grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tariff {
    pub grid: TimeGrid,
    pub price: Vec<f64>,
}

impl Tariff {
    pub fn new(grid: TimeGrid, price: Vec<f64>) -> Result<Self> {
        if price.len() != grid.len() {
            return Err(Error::invalid("tariff", "price count does not match the grid"));
        }
        if price.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("tariff", "prices must be finite"));
        }
        Ok(Tariff { grid, price })
    }

    pub fn flat(grid: TimeGrid, unit_price: f64) -> Self {
        Tariff {
            grid,
            price: vec![unit_price; grid.len()],
        }
    }

    /// Two-band time-of-use tariff: `high` inside any `[from, to)` minute-of-day band,
    /// `low` elsewhere.
    pub fn static_tou(grid: TimeGrid, low: f64, high: f64, bands: &[(i64, i64)]) -> Self {
        let price = grid
            .timestamps()
            .map(|ts| {
                let m = ts.minute_of_day();
                if bands.iter().any(|&(from, to)| m >= from && m < to) {
                    high
                } else {
                    low
                }
            })
            .collect();
        Tariff { grid, price }
    }

    /// Flat 15p/30p tariff with the high band over 07:00-09:00 and 17:00-20:00.
    pub fn uk_static_tou(grid: TimeGrid) -> Self {
        Self::static_tou(grid, 0.15, 0.30, &[(7 * 60, 9 * 60), (17 * 60, 20 * 60)])
    }

    pub fn price_at(&self, ts: Timestamp) -> Option<f64> {
        self.grid.index_of(ts).map(|i| self.price[i])
    }
}

/// Cost of `essential` consumption billed at `tariff`.
pub fn tariff_cost(essential: &ConsumptionSeries, tariff: &Tariff) -> Result<f64> {
    let h = essential.grid.period_hours();
    let mut cost = 0.0;
    for (ts, p) in essential.grid.timestamps().zip(&essential.power_kw) {
        let price = tariff
            .price_at(ts)
            .ok_or_else(|| Error::Coverage(format!("tariff has no price for {ts}")))?;
        cost += p * h * price;
    }
    Ok(cost)
}

/// Cost of buying controllable energy for every period where essential demand exceeds
/// total supply.
pub fn essential_procurement_cost(total_kw: &[f64], essential_kw: &[f64], period_hours: f64, unit_price: f64) -> f64 {
    total_kw
        .iter()
        .zip(essential_kw)
        .map(|(s, c)| (c - s).max(0.0) * period_hours * unit_price)
        .sum()
}

/// Flat unit price of essential energy that recovers `u_total`.
pub fn essential_unit_cost(u_total: f64, essential_kw: &[f64], grid: &TimeGrid) -> Result<f64> {
    let energy: f64 = essential_kw.iter().sum::<f64>() * grid.period_hours();
    if energy <= 0.0 {
        return Err(Error::UndefinedPrice("no essential energy to spread the cost over".into()));
    }
    Ok(u_total / energy)
}

/// Excess energy (kWh) produced when the uncontrollable profile is scaled just enough to
/// supply `mix` of the essential energy, the rest coming from controllable supply that
/// produces only what is needed.
pub fn supply_mix_excess(uncontrollable_kw: &[f64], essential_kw: &[f64], period_hours: f64, mix: f64) -> Result<f64> {
    if uncontrollable_kw.len() != essential_kw.len() {
        return Err(Error::invalid("supply mix", "profile and demand lengths differ"));
    }
    if !(0.0..=1.0).contains(&mix) {
        return Err(Error::invalid("supply mix", format!("mix {mix} outside [0, 1]")));
    }
    let total: f64 = essential_kw.iter().sum();
    let target = mix * total;
    if target <= 0.0 {
        return Ok(0.0);
    }
    let scale = mix_scale(uncontrollable_kw, essential_kw, target)?;
    Ok(uncontrollable_kw
        .iter()
        .zip(essential_kw)
        .map(|(u, c)| (scale * u - c).max(0.0) * period_hours)
        .sum())
}

/// Smallest `k` with `sum_t min(k u_t, c_t) >= target`. The served energy is piecewise
/// linear in `k` with a breakpoint at each `c_t / u_t`, so walk the sorted breakpoints.
fn mix_scale(u: &[f64], c: &[f64], target: f64) -> Result<f64> {
    let mut points: Vec<(f64, f64, f64)> = u
        .iter()
        .zip(c)
        .filter(|(u, _)| **u > 0.0)
        .map(|(&u, &c)| (c / u, u, c))
        .collect();
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut below_c = 0.0;
    let mut above_u: f64 = points.iter().map(|p| p.1).sum();
    for &(k, u_t, c_t) in &points {
        if below_c + k * above_u >= target {
            return Ok((target - below_c) / above_u);
        }
        below_c += c_t;
        above_u -= u_t;
    }
    if below_c >= target * (1.0 - 1e-12) {
        return Ok(points.last().map_or(0.0, |p| p.0));
    }
    Err(Error::invalid(
        "supply mix",
        "uncontrollable profile is zero where essential demand is positive; the mix is unreachable",
    ))
}

/// Highest unit price controllable suppliers can charge while keeping essential energy no
/// dearer than `comparator_cost`, with uncontrollable energy free.
pub fn affordability_cutoff(comparator_cost: f64, essential_kwh: f64, controllable_share: f64) -> Result<f64> {
    if !(controllable_share > 0.0 && controllable_share <= 1.0) {
        return Err(Error::UndefinedPrice(format!(
            "controllable share {controllable_share} must lie in (0, 1]"
        )));
    }
    if essential_kwh <= 0.0 {
        return Err(Error::UndefinedPrice("essential energy must be positive".into()));
    }
    Ok(comparator_cost / (controllable_share * essential_kwh))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::HouseholdId;

    fn day_grid(res: i64) -> TimeGrid {
        TimeGrid::new(Timestamp::from_hours(0), Timestamp::from_hours(24), res).unwrap()
    }

    #[test]
    fn unit_cost_examples() {
        let g = TimeGrid::with_periods(Timestamp::from_hours(0), 5000, 60).unwrap();
        assert!((essential_unit_cost(500.0, &vec![1.0; 5000], &g).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(essential_unit_cost(0.0, &vec![1.0; 5000], &g).unwrap(), 0.0);
        assert!(matches!(essential_unit_cost(1.0, &[0.0; 3], &day_grid(60)), Err(Error::UndefinedPrice(_))));
        // 345.79 MWh at the flat-tariff total recovers the flat rate
        let g = TimeGrid::with_periods(Timestamp::from_hours(0), 1, 60).unwrap();
        let rate = essential_unit_cost(72_063.34, &[345_790.0], &g).unwrap();
        assert!((rate - 0.2084).abs() < 1e-4);
    }

    #[test]
    fn cutoff_examples() {
        assert!((affordability_cutoff(72_063.34, 345_790.0, 0.30).unwrap() - 0.6947).abs() < 1e-4);
        assert!((affordability_cutoff(67_308.54, 345_790.0, 0.30).unwrap() - 0.6488).abs() < 1e-4);
        assert_eq!(affordability_cutoff(100.0, 50.0, 1.0).unwrap(), 2.0);
        assert!(affordability_cutoff(100.0, 50.0, 0.0).is_err());
    }

    #[test]
    fn static_tou_band_arithmetic() {
        let g = day_grid(5);
        let flat = ConsumptionSeries::new(HouseholdId::new("x"), g, vec![1.0; g.len()]).unwrap();
        let cost = tariff_cost(&flat, &Tariff::uk_static_tou(g)).unwrap();
        assert!((cost - 4.35).abs() < 1e-9);
        let zero = ConsumptionSeries::new(HouseholdId::new("x"), g, vec![0.0; g.len()]).unwrap();
        assert_eq!(tariff_cost(&zero, &Tariff::flat(g, 0.2084)).unwrap(), 0.0);
    }

    #[test]
    fn tariff_must_cover_series() {
        let g = day_grid(60);
        let s = ConsumptionSeries::new(HouseholdId::new("x"), g, vec![1.0; 24]).unwrap();
        let short = Tariff::flat(TimeGrid::with_periods(Timestamp::from_hours(0), 12, 60).unwrap(), 0.2);
        assert!(matches!(tariff_cost(&s, &short), Err(Error::Coverage(_))));
    }

    #[test]
    fn mix_excess_examples() {
        let c = [1.0, 2.0, 1.0, 2.0];
        assert_eq!(supply_mix_excess(&[3.0, 0.0, 0.0, 3.0], &c, 1.0, 0.0).unwrap(), 0.0);
        assert_eq!(supply_mix_excess(&c, &c, 1.0, 1.0).unwrap(), 0.0);
        // solar-like profile: all supply in two periods, scaled to cover everything
        let u = [0.0, 1.0, 1.0, 0.0];
        assert!(supply_mix_excess(&u, &c, 1.0, 1.0).is_err());
        let u = [0.5, 1.0, 1.0, 0.5];
        let e = supply_mix_excess(&u, &c, 1.0, 1.0).unwrap();
        // breakpoints c/u = [2, 2, 1, 4]; k = 4 -> 4u = [2, 4, 4, 2], excess 1 + 2 + 3 + 0
        assert!((e - 6.0).abs() < 1e-12);
    }

    #[test]
    fn mix_excess_half() {
        // one flat period pair, target half of 4 kWh
        let e = supply_mix_excess(&[1.0, 1.0], &[2.0, 2.0], 1.0, 0.5).unwrap();
        assert_eq!(e, 0.0);
        let e = supply_mix_excess(&[2.0, 0.5], &[1.0, 1.0], 1.0, 0.75).unwrap();
        // k: sum min(2k, 1) + min(0.5k, 1) = 1.5 -> k = 1 (2k hits 1 at k=0.5, then 1 + 0.5k = 1.5)
        assert!((e - 1.0).abs() < 1e-12);
    }
}
