use super::Slot;
use crate::amm::MarketState;
use crate::types::{Request, EPS};

/// Cheapest start for `request` that fits the remaining capacity in every occupied period
/// and costs no more than its budget. Scans every admissible start; ties go to the
/// earliest. `None` when no start qualifies.
pub fn find_cheapest_slot(request: &Request, state: &MarketState) -> Option<Slot> {
    let res = state.grid().resolution_min();
    let n = request.n_periods(res);
    let power = request.delivery_power_kw(res);
    let budget = request.budget_gbp + EPS * request.budget_gbp.max(1.0);
    let starts = state.start_range(request);
    if starts.is_empty() {
        return None;
    }
    let mut best: Option<(usize, f64)> = None;
    for start in starts {
        let cost = state.slot_cost(request, start);
        if cost > budget {
            continue;
        }
        if let Some((_, b)) = best {
            if cost >= b - 1e-12 * b.abs().max(1.0) {
                continue;
            }
        }
        if state.fits(request, start) {
            best = Some((start, cost));
        }
    }
    best.map(|(start_period, cost_gbp)| Slot {
        start_period,
        n_periods: n,
        power_kw: power,
        cost_gbp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{TimeGrid, Timestamp};
    use crate::market::MarketConfig;

    /// Three hourly periods with buy prices 0.5, 0.2, 0.3 (bp_max 1, linear curve).
    fn priced_state(available: f64) -> MarketState {
        let cfg = MarketConfig {
            resolution_minutes: 60,
            bp_max: 1.0,
            ..MarketConfig::default()
        };
        let grid = TimeGrid::with_periods(Timestamp::from_hours(0), 3, 60).unwrap();
        let mut s = MarketState::new(&cfg, grid, vec![available; 3], vec![0.0; 3]).unwrap();
        // forecast demand chosen so alpha = available / c_fa gives 0.5, 0.8, 0.7
        let demand = |id: &str, hour: i64, kw: f64| {
            Request::new(id, "x", Timestamp::from_hours(hour), Timestamp::from_hours(hour + 1), kw, kw, kw, 0.0).unwrap()
        };
        s.open_requests(&[demand("d0", 0, 2.0), demand("d1", 1, 1.25), demand("d2", 2, 1.0 / 0.7)]);
        s
    }

    fn one_kwh(budget: f64) -> Request {
        Request::new("r", "h", Timestamp::from_hours(0), Timestamp::from_hours(3), 1.0, 1.0, 1.0, budget).unwrap()
    }

    #[test]
    fn picks_cheapest_affordable_start() {
        let s = priced_state(1.0);
        let bp = &s.prices().bp;
        assert!((bp[0] - 0.5).abs() < 1e-12 && (bp[1] - 0.2).abs() < 1e-12 && (bp[2] - 0.3).abs() < 1e-12);
        let slot = find_cheapest_slot(&one_kwh(10.0), &s).unwrap();
        assert_eq!(slot.start_period, 1);
        assert!((slot.cost_gbp - 0.2).abs() < 1e-12);
    }

    #[test]
    fn budget_excludes_every_start() {
        assert!(find_cheapest_slot(&one_kwh(0.10), &priced_state(1.0)).is_none());
    }

    #[test]
    fn no_capacity_no_slot() {
        let cfg = MarketConfig {
            resolution_minutes: 60,
            ..MarketConfig::default()
        };
        let grid = TimeGrid::with_periods(Timestamp::from_hours(0), 3, 60).unwrap();
        let s = MarketState::new(&cfg, grid, vec![0.0; 3], vec![0.0; 3]).unwrap();
        assert!(find_cheapest_slot(&one_kwh(10.0), &s).is_none());
    }

    #[test]
    fn ties_go_to_earliest_start() {
        let cfg = MarketConfig {
            resolution_minutes: 60,
            ..MarketConfig::default()
        };
        let grid = TimeGrid::with_periods(Timestamp::from_hours(0), 3, 60).unwrap();
        let s = MarketState::new(&cfg, grid, vec![5.0; 3], vec![0.0; 3]).unwrap();
        assert_eq!(find_cheapest_slot(&one_kwh(1.0), &s).unwrap().start_period, 0);
    }
}
