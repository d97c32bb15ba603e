use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::MarketState;
use crate::types::OfferId;

/// Receipt key for the pooled uncontrollable supply.
pub const UNCONTROLLABLE_POOL: &str = "uncontrollable";

/// Half a penny: payments and receipts must agree to the penny.
const PENNY_TOL: f64 = 0.005;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OfferSettlement {
    pub offer_id: OfferId,
    pub receipts_gbp: f64,
    pub revenue_floor_gbp: f64,
}

impl OfferSettlement {
    pub fn is_rational(&self) -> bool {
        self.receipts_gbp + 1e-9 >= self.revenue_floor_gbp
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SettlementReport {
    pub buyer_payments_gbp: f64,
    pub receipts_gbp: BTreeMap<String, f64>,
    pub offers: Vec<OfferSettlement>,
}

impl SettlementReport {
    pub fn seller_receipts_gbp(&self) -> f64 {
        self.receipts_gbp.values().sum()
    }

    pub fn is_balanced(&self) -> bool {
        (self.buyer_payments_gbp - self.seller_receipts_gbp()).abs() < PENNY_TOL
    }

    pub fn offers_rational(&self) -> bool {
        self.offers.iter().all(OfferSettlement::is_rational)
    }
}

/// Pass every buyer payment through to the suppliers: each booking's cost is spread evenly
/// over its occupied periods, then shared among the suppliers present in each period in
/// proportion to the power they made available there.
pub fn settle(state: &MarketState) -> SettlementReport {
    let n = state.grid().len();
    let mut paid_per_period = vec![0.0; n];
    let mut buyer_payments_gbp = 0.0;
    for e in state.ledger().entries() {
        buyer_payments_gbp += e.cost_gbp;
        let share = e.cost_gbp / e.n_periods as f64;
        for t in e.periods() {
            paid_per_period[t] += share;
        }
    }

    let supply = state.supply();
    let mut pool = 0.0;
    let mut offer_receipts = vec![0.0; state.admitted.len()];
    for (t, &paid) in paid_per_period.iter().enumerate() {
        if paid == 0.0 {
            continue;
        }
        let pool_kw = supply.flexible_supply[t].max(0.0);
        let offered_kw: f64 = state
            .admitted
            .iter()
            .filter(|a| a.range.contains(&t))
            .map(|a| a.power_kw)
            .sum();
        let total_kw = pool_kw + offered_kw;
        if total_kw <= 0.0 {
            pool += paid;
            continue;
        }
        pool += paid * pool_kw / total_kw;
        for (i, a) in state.admitted.iter().enumerate() {
            if a.range.contains(&t) {
                offer_receipts[i] += paid * a.power_kw / total_kw;
            }
        }
    }

    let mut receipts_gbp = BTreeMap::new();
    receipts_gbp.insert(UNCONTROLLABLE_POOL.to_owned(), pool);
    let mut offers = Vec::with_capacity(offer_receipts.len());
    for (a, r) in state.admitted.iter().zip(offer_receipts) {
        *receipts_gbp.entry(a.offer.id.to_string()).or_insert(0.0) += r;
        offers.push(OfferSettlement {
            offer_id: a.offer.id.clone(),
            receipts_gbp: r,
            revenue_floor_gbp: a.offer.revenue_floor_gbp,
        });
    }
    SettlementReport {
        buyer_payments_gbp,
        receipts_gbp,
        offers,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{TimeGrid, Timestamp};
    use crate::market::MarketConfig;
    use crate::types::{Offer, Request};

    #[test]
    fn receipts_match_payments() {
        let cfg = MarketConfig {
            resolution_minutes: 60,
            ..MarketConfig::default()
        };
        let grid = TimeGrid::with_periods(Timestamp::from_hours(0), 6, 60).unwrap();
        let mut s = MarketState::new(&cfg, grid, vec![2.0; 6], vec![1.0; 6]).unwrap();
        let reqs: Vec<Request> = (0..6)
            .map(|i| {
                Request::new(format!("r{i}").as_str(), "h", Timestamp::from_hours(0), Timestamp::from_hours(6), 2.0, 1.0, 1.0, 50.0)
                    .unwrap()
            })
            .collect();
        s.open_requests(&reqs);
        s.admit_offers(&[Offer {
            id: OfferId::new("bat"),
            agent: "a".into(),
            earliest: Timestamp::from_hours(0),
            latest: Timestamp::from_hours(6),
            energy_kwh: 3.0,
            p_min_kw: 0.1,
            p_max_kw: 1.0,
            revenue_floor_gbp: 0.0,
            controllable: true,
        }])
        .unwrap();
        s.commit_request(&reqs[0], 0).unwrap();
        s.commit_request(&reqs[1], 2).unwrap();
        let report = settle(&s);
        assert!(report.buyer_payments_gbp > 0.0);
        assert!(report.is_balanced());
        assert!(report.offers_rational());
        assert_eq!(report.receipts_gbp.len(), 2);
    }
}
