use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{alpha, buy_price, sell_price, DemandForecast, PriceSeries, SupplySplit};
use crate::allocators::Slot;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::ledger::{CommitmentLedger, LedgerEntry};
use crate::market::{MarketConfig, PricingMode};
use crate::types::{Offer, OfferId, Request, RequestId, EPS};

/// Slack allowed when checking a booking against available power.
const CAPACITY_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
struct OpenDemand {
    range: Range<usize>,
    avg_kw: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OfferDecision {
    pub offer_id: OfferId,
    pub admitted: bool,
    pub power_kw: f64,
    pub unit_floor: f64,
    pub mean_sp: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct AdmittedOffer {
    pub offer: Offer,
    pub range: Range<usize>,
    pub power_kw: f64,
}

/// One live market instance: supply, forecast demand, prices, and the bookings made so
/// far. Mutated by a single engine thread; clone it to hand a snapshot elsewhere.
#[derive(Clone, Debug, PartialEq)]
pub struct MarketState {
    config: MarketConfig,
    grid: TimeGrid,
    supply: SupplySplit,
    forecast: DemandForecast,
    /// Number of open requests whose interval covers each period.
    cover: Vec<u32>,
    prices: PriceSeries,
    open: BTreeMap<RequestId, OpenDemand>,
    ledger: CommitmentLedger,
    pub(crate) admitted: Vec<AdmittedOffer>,
}

impl MarketState {
    pub fn new(config: &MarketConfig, grid: TimeGrid, total_kw: Vec<f64>, essential_kw: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let n = grid.len();
        if grid.resolution_min() != config.resolution_minutes {
            return Err(Error::invalid("market state", "grid resolution differs from the config"));
        }
        if total_kw.len() != n || essential_kw.len() != n {
            return Err(Error::invalid(
                "market state",
                format!("series lengths {}/{} do not match {n} periods", total_kw.len(), essential_kw.len()),
            ));
        }
        if total_kw.iter().chain(&essential_kw).any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("market state", "supply and demand must be finite and non-negative"));
        }
        let mut state = MarketState {
            config: config.clone(),
            grid,
            supply: SupplySplit::new(total_kw, essential_kw),
            forecast: DemandForecast { c_fa: vec![0.0; n] },
            cover: vec![0; n],
            prices: PriceSeries::new(n),
            open: BTreeMap::new(),
            ledger: CommitmentLedger::new(n),
            admitted: Vec::new(),
        };
        state.refresh_prices(0..n);
        Ok(state)
    }

    /// Reserve power already committed by earlier instances.
    pub fn with_carried(mut self, carried_kw: &[f64]) -> Result<Self> {
        if carried_kw.len() != self.grid.len() {
            return Err(Error::invalid("market state", "carried commitments do not match the grid"));
        }
        for (t, &c) in carried_kw.iter().enumerate() {
            if c > self.supply.available[t] + CAPACITY_TOL {
                return Err(Error::Capacity {
                    period: t,
                    required: c,
                    available: self.supply.available[t],
                });
            }
            self.supply.carried[t] = c;
            self.supply.available[t] = (self.supply.available[t] - c).max(0.0);
        }
        self.refresh_prices(0..self.grid.len());
        Ok(self)
    }

    /// Add requests to the outstanding-demand forecast.
    pub fn open_requests<'a, I>(&mut self, requests: I)
    where
        I: IntoIterator<Item = &'a Request>,
    {
        let res = self.grid.resolution_min();
        let (mut lo, mut hi) = (usize::MAX, 0);
        for r in requests {
            if self.open.contains_key(&r.id) {
                continue;
            }
            let range = self.grid.covered_range(r.earliest, r.latest);
            let avg_kw = r.average_power_kw(res);
            for t in range.clone() {
                self.forecast.c_fa[t] += avg_kw;
                self.cover[t] += 1;
            }
            lo = lo.min(range.start);
            hi = hi.max(range.end);
            self.open.insert(r.id.clone(), OpenDemand { range, avg_kw });
        }
        if lo < hi {
            self.refresh_prices(lo..hi);
        }
    }

    /// Drop a request from the forecast without booking it. Returns whether it was open.
    pub fn withdraw_request(&mut self, id: &RequestId) -> bool {
        match self.open.remove(id) {
            Some(d) => {
                self.remove_demand(&d);
                self.refresh_prices(d.range);
                true
            }
            None => false,
        }
    }

    /// Admit offers whose unit revenue floor does not exceed the mean sell price over their
    /// window; admitted energy is spread at constant power and adds to available supply.
    pub fn admit_offers(&mut self, offers: &[Offer]) -> Result<Vec<OfferDecision>> {
        let mut decisions = Vec::with_capacity(offers.len());
        for offer in offers {
            offer.validate()?;
            let range = self.grid.covered_range(offer.earliest, offer.latest);
            let unit_floor = offer.unit_floor();
            let mean_sp = if range.is_empty() {
                0.0
            } else {
                self.prices.sp[range.clone()].iter().sum::<f64>() / range.len() as f64
            };
            let admitted = !range.is_empty() && unit_floor <= mean_sp + EPS;
            let power_kw = offer.spread_power_kw();
            if admitted {
                self.add_offer(offer);
            }
            decisions.push(OfferDecision {
                offer_id: offer.id.clone(),
                admitted,
                power_kw: if admitted { power_kw } else { 0.0 },
                unit_floor,
                mean_sp,
            });
        }
        Ok(decisions)
    }

    /// Add an offer accepted by an earlier instance without re-checking its price.
    pub fn readmit_offer(&mut self, offer: &Offer) -> Result<()> {
        offer.validate()?;
        self.add_offer(offer);
        Ok(())
    }

    fn add_offer(&mut self, offer: &Offer) {
        let range = self.grid.covered_range(offer.earliest, offer.latest);
        let power_kw = offer.spread_power_kw();
        for t in range.clone() {
            self.supply.offered[t] += power_kw;
            self.supply.available[t] += power_kw;
        }
        self.refresh_prices(range.clone());
        self.admitted.push(AdmittedOffer {
            offer: offer.clone(),
            range,
            power_kw,
        });
    }

    pub fn config(&self) -> &MarketConfig {
        &self.config
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn supply(&self) -> &SupplySplit {
        &self.supply
    }

    pub fn forecast(&self) -> &DemandForecast {
        &self.forecast
    }

    pub fn prices(&self) -> &PriceSeries {
        &self.prices
    }

    pub fn ledger(&self) -> &CommitmentLedger {
        &self.ledger
    }

    pub fn available_kw(&self) -> &[f64] {
        &self.supply.available
    }

    pub fn is_open(&self, id: &RequestId) -> bool {
        self.open.contains_key(id)
    }

    pub fn open_count(&self) -> usize {
        self.open.len()
    }

    /// Total booked power at `t`, carried commitments included (`S^b_t`).
    pub fn scheduled_kw(&self, t: usize) -> f64 {
        self.supply.carried[t] + self.ledger.scheduled_kw()[t]
    }

    /// Candidate start periods for `request` in this instance: inside its valid interval and
    /// finishing by the end of the grid.
    pub fn start_range(&self, request: &Request) -> Range<usize> {
        let res = self.grid.resolution_min();
        let n = request.n_periods(res) as i64;
        let len = self.grid.len() as i64;
        let lo = self.grid.offset_ceil(request.earliest).max(0);
        let hi = self.grid.offset_floor(request.latest_start(res)).min(len - n);
        if hi < lo {
            return 0..0;
        }
        lo as usize..hi as usize + 1
    }

    /// Price of booking `request` from `start` at current prices.
    pub fn slot_cost(&self, request: &Request, start: usize) -> f64 {
        let res = self.grid.resolution_min();
        let n = request.n_periods(res);
        let power = request.delivery_power_kw(res);
        let h = self.grid.period_hours();
        match self.config.pricing_mode {
            PricingMode::PerPeriod => self.prices.bp[start..start + n].iter().map(|bp| bp * power * h).sum(),
            PricingMode::PaperLiteral => self.prices.bp[start] * power * n as f64 * h,
        }
    }

    pub fn fits(&self, request: &Request, start: usize) -> bool {
        let res = self.grid.resolution_min();
        let n = request.n_periods(res);
        let power = request.delivery_power_kw(res);
        start + n <= self.grid.len()
            && self.supply.available[start..start + n]
                .iter()
                .all(|&a| a + CAPACITY_TOL >= power)
    }

    /// Book `request` from `start` at current prices.
    pub fn commit_request(&mut self, request: &Request, start: usize) -> Result<LedgerEntry> {
        let res = self.grid.resolution_min();
        let slot = Slot {
            start_period: start,
            n_periods: request.n_periods(res),
            power_kw: request.delivery_power_kw(res),
            cost_gbp: if start < self.grid.len() { self.slot_cost(request, start) } else { 0.0 },
        };
        self.commit_slot(request, &slot)
    }

    /// Book `request` into `slot` at the slot's quoted cost. Fails without touching the
    /// state if the slot is outside the request's window, over budget, or over capacity.
    pub fn commit_slot(&mut self, request: &Request, slot: &Slot) -> Result<LedgerEntry> {
        let res = self.grid.resolution_min();
        if slot.n_periods != request.n_periods(res)
            || (slot.power_kw - request.delivery_power_kw(res)).abs() > EPS * slot.power_kw.max(1.0)
        {
            return Err(Error::invalid("slot", format!("{}: shape does not match the request", request.id)));
        }
        if !self.start_range(request).contains(&slot.start_period) {
            return Err(Error::invalid(
                "slot",
                format!("{}: start period {} is outside the valid interval", request.id, slot.start_period),
            ));
        }
        if slot.cost_gbp > request.budget_gbp + EPS * request.budget_gbp.max(1.0) {
            return Err(Error::invalid(
                "slot",
                format!("{}: cost {} exceeds budget {}", request.id, slot.cost_gbp, request.budget_gbp),
            ));
        }
        let periods = slot.start_period..slot.start_period + slot.n_periods;
        for t in periods.clone() {
            if self.supply.available[t] + CAPACITY_TOL < slot.power_kw {
                return Err(Error::Capacity {
                    period: t,
                    required: slot.power_kw,
                    available: self.supply.available[t],
                });
            }
        }
        for t in periods.clone() {
            self.supply.available[t] = (self.supply.available[t] - slot.power_kw).max(0.0);
        }
        let mut lo = periods.start;
        let mut hi = periods.end;
        if let Some(d) = self.open.remove(&request.id) {
            self.remove_demand(&d);
            if !d.range.is_empty() {
                lo = lo.min(d.range.start);
                hi = hi.max(d.range.end);
            }
        }
        let entry = LedgerEntry {
            request_id: request.id.clone(),
            household: request.household.clone(),
            start: self.grid.period_start(slot.start_period),
            start_period: slot.start_period,
            n_periods: slot.n_periods,
            power_kw: slot.power_kw,
            cost_gbp: slot.cost_gbp,
        };
        self.ledger.push(entry.clone());
        self.refresh_prices(lo..hi);
        Ok(entry)
    }

    fn remove_demand(&mut self, d: &OpenDemand) {
        for t in d.range.clone() {
            self.cover[t] -= 1;
            self.forecast.c_fa[t] = if self.cover[t] == 0 {
                0.0
            } else {
                (self.forecast.c_fa[t] - d.avg_kw).max(0.0)
            };
        }
    }

    fn refresh_prices(&mut self, range: Range<usize>) {
        for t in range {
            let a = alpha(self.supply.available[t], self.forecast.c_fa[t]);
            self.prices.alpha[t] = a;
            self.prices.bp[t] = buy_price(a, &self.config);
            self.prices.sp[t] = sell_price(a, &self.config);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::amm::predict_flexible_consumption;
    use crate::grid::Timestamp;

    fn hourly(hours: usize) -> (MarketConfig, TimeGrid) {
        let cfg = MarketConfig {
            resolution_minutes: 60,
            ..MarketConfig::default()
        };
        let grid = TimeGrid::with_periods(Timestamp::from_hours(0), hours, 60).unwrap();
        (cfg, grid)
    }

    fn req(id: &str, e: i64, l: i64, q: f64, p: f64) -> Request {
        Request::new(id, "h", Timestamp::from_hours(e), Timestamp::from_hours(l), q, p, p, 100.0).unwrap()
    }

    #[test]
    fn committing_only_request_clears_scarcity() {
        let (cfg, grid) = hourly(6);
        let mut s = MarketState::new(&cfg, grid, vec![2.0; 6], vec![1.0; 6]).unwrap();
        let r = req("a", 0, 6, 2.0, 1.0);
        s.open_requests([&r]);
        assert!(s.prices().alpha.iter().any(|&a| a < 1.0) || s.forecast().c_fa.iter().all(|&c| c <= 0.5));
        s.commit_request(&r, 0).unwrap();
        assert!(s.forecast().c_fa.iter().all(|&c| c == 0.0));
        assert!(s.prices().alpha.iter().all(|&a| a == 1.0));
        assert!(s.prices().bp.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn commit_subtracts_pointwise() {
        let (cfg, grid) = hourly(4);
        let mut s = MarketState::new(&cfg, grid, vec![2.0; 4], vec![1.0; 4]).unwrap();
        let r = req("a", 1, 3, 2.0, 1.0);
        s.commit_request(&r, 1).unwrap();
        assert_eq!(s.available_kw(), &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(s.ledger().scheduled_kw(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn over_capacity_commit_is_rejected_untouched() {
        let (cfg, grid) = hourly(4);
        let mut s = MarketState::new(&cfg, grid, vec![1.5; 4], vec![1.0; 4]).unwrap();
        let r = req("a", 0, 4, 2.0, 1.0);
        s.open_requests([&r]);
        let before = s.clone();
        assert!(matches!(s.commit_request(&r, 0), Err(Error::Capacity { .. })));
        assert_eq!(s, before);
    }

    #[test]
    fn commit_order_does_not_change_supply_or_prices() {
        let (cfg, grid) = hourly(8);
        let a = req("a", 0, 6, 2.0, 1.0);
        let b = req("b", 2, 8, 3.0, 1.0);
        let base = {
            let mut s = MarketState::new(&cfg, grid, vec![2.5; 8], vec![0.5; 8]).unwrap();
            s.open_requests([&a, &b]);
            s
        };
        let mut ab = base.clone();
        ab.commit_slot(&a, &Slot { start_period: 1, n_periods: 2, power_kw: 1.0, cost_gbp: 0.0 }).unwrap();
        ab.commit_slot(&b, &Slot { start_period: 3, n_periods: 3, power_kw: 1.0, cost_gbp: 0.0 }).unwrap();
        let mut ba = base.clone();
        ba.commit_slot(&b, &Slot { start_period: 3, n_periods: 3, power_kw: 1.0, cost_gbp: 0.0 }).unwrap();
        ba.commit_slot(&a, &Slot { start_period: 1, n_periods: 2, power_kw: 1.0, cost_gbp: 0.0 }).unwrap();
        assert_eq!(ab.supply(), ba.supply());
        assert_eq!(ab.forecast(), ba.forecast());
        assert_eq!(ab.prices(), ba.prices());
    }

    #[test]
    fn incremental_forecast_matches_rebuild() {
        let (cfg, grid) = hourly(12);
        let rs = [req("a", 0, 6, 2.0, 1.0), req("b", 2, 12, 3.0, 1.5), req("c", 4, 9, 1.0, 0.5)];
        let mut s = MarketState::new(&cfg, grid, vec![5.0; 12], vec![0.5; 12]).unwrap();
        s.open_requests(&rs);
        s.commit_request(&rs[1], 3).unwrap();
        let rebuilt = predict_flexible_consumption([&rs[0], &rs[2]], &grid);
        for (a, b) in s.forecast().c_fa.iter().zip(&rebuilt.c_fa) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(s.withdraw_request(&rs[0].id));
        assert!(!s.withdraw_request(&rs[0].id));
    }

    #[test]
    fn start_range_respects_window_and_grid_end() {
        let (cfg, grid) = hourly(24);
        let s = MarketState::new(&cfg, grid, vec![1.0; 24], vec![0.0; 24]).unwrap();
        assert_eq!(s.start_range(&req("a", 5, 10, 2.0, 1.0)), 5..9);
        // straddles the end: only starts that finish by hour 24
        assert_eq!(s.start_range(&req("b", 20, 30, 3.0, 1.0)), 20..22);
        // started in the past
        assert_eq!(s.start_range(&req("c", -3, 2, 1.0, 1.0)), 0..2);
        assert!(s.start_range(&req("d", -3, 0, 1.0, 1.0)).is_empty());
    }

    #[test]
    fn offers_admitted_only_when_floor_is_met() {
        let (cfg, grid) = hourly(4);
        let mut s = MarketState::new(&cfg, grid, vec![1.0; 4], vec![1.0; 4]).unwrap();
        let r = req("a", 0, 4, 4.0, 1.0);
        s.open_requests([&r]);
        assert_eq!(s.prices().sp, vec![1.0; 4]);
        let offer = |id: &str, floor: f64| Offer {
            id: OfferId::new(id),
            agent: "battery".into(),
            earliest: Timestamp::from_hours(0),
            latest: Timestamp::from_hours(4),
            energy_kwh: 2.0,
            p_min_kw: 0.1,
            p_max_kw: 1.0,
            revenue_floor_gbp: floor,
            controllable: true,
        };
        let d = s.admit_offers(&[offer("cheap", 1.0), offer("dear", 10.0)]).unwrap();
        assert!(d[0].admitted);
        assert!(!d[1].admitted);
        assert_eq!(s.available_kw(), &[0.5; 4]);
        assert!(s.prices().alpha.iter().all(|&a| (a - 0.5).abs() < 1e-12));
    }
}
