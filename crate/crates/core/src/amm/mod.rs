//! Automatic Market Maker: splits supply between essential and flexible use, forecasts
//! outstanding flexible demand, and turns the resulting scarcity ratio into buy and sell
//! prices that are refreshed after every commitment.

mod essential;
mod settlement;
mod state;

pub use essential::{
    affordability_cutoff, essential_procurement_cost, essential_unit_cost, supply_mix_excess, tariff_cost,
    Tariff,
};
pub use settlement::{settle, OfferSettlement, SettlementReport, UNCONTROLLABLE_POOL};
pub use state::{MarketState, OfferDecision};

use serde::{Deserialize, Serialize};

use crate::grid::TimeGrid;
use crate::market::MarketConfig;
use crate::types::Request;

/// Per-period supply bookkeeping for one instance, all in kW.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupplySplit {
    /// Total supply `S^T`.
    pub total: Vec<f64>,
    /// Aggregate essential consumption `C^B`, served first.
    pub essential_demand: Vec<f64>,
    /// `S^T - C^B`; negative where essential demand alone exceeds supply.
    pub flexible_supply: Vec<f64>,
    /// Admitted controllable offers.
    pub offered: Vec<f64>,
    /// Power committed by earlier instances.
    pub carried: Vec<f64>,
    /// Headroom left for new bookings.
    pub available: Vec<f64>,
}

impl SupplySplit {
    pub fn new(total: Vec<f64>, essential_demand: Vec<f64>) -> Self {
        let n = total.len();
        let flexible_supply: Vec<f64> = total.iter().zip(&essential_demand).map(|(s, c)| s - c).collect();
        let available = flexible_supply.iter().map(|f| f.max(0.0)).collect();
        SupplySplit {
            total,
            essential_demand,
            flexible_supply,
            offered: vec![0.0; n],
            carried: vec![0.0; n],
            available,
        }
    }

    /// Supply usable by flexible demand before any booking: the non-negative part of
    /// `S^fa` plus admitted offers.
    pub fn capacity(&self, t: usize) -> f64 {
        self.flexible_supply[t].max(0.0) + self.offered[t]
    }

    pub fn len(&self) -> usize {
        self.total.len()
    }

    pub fn is_empty(&self) -> bool {
        self.total.is_empty()
    }
}

/// Forecast flexible consumption `C^fa` per period.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemandForecast {
    pub c_fa: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriceSeries {
    pub alpha: Vec<f64>,
    pub bp: Vec<f64>,
    pub sp: Vec<f64>,
}

impl PriceSeries {
    fn new(n: usize) -> Self {
        PriceSeries {
            alpha: vec![1.0; n],
            bp: vec![0.0; n],
            sp: vec![0.0; n],
        }
    }
}

/// Scarcity ratio: 1 when available supply covers forecast demand (or nothing is
/// outstanding), otherwise the servable fraction.
pub fn alpha(available_kw: f64, c_fa_kw: f64) -> f64 {
    if c_fa_kw <= 0.0 || available_kw >= c_fa_kw {
        1.0
    } else {
        (available_kw.max(0.0) / c_fa_kw).clamp(0.0, 1.0)
    }
}

pub fn buy_price(alpha: f64, config: &MarketConfig) -> f64 {
    config.bp_max * config.curve.scarcity(alpha)
}

pub fn sell_price(alpha: f64, config: &MarketConfig) -> f64 {
    config.effective_sp_max() * config.curve.scarcity(alpha)
}

/// `C^fa` rebuilt from scratch: every request contributes its average power to each
/// period its valid interval covers.
pub fn predict_flexible_consumption<'a, I>(open: I, grid: &TimeGrid) -> DemandForecast
where
    I: IntoIterator<Item = &'a Request>,
{
    let mut c_fa = vec![0.0; grid.len()];
    for r in open {
        let p = r.average_power_kw(grid.resolution_min());
        for t in grid.covered_range(r.earliest, r.latest) {
            c_fa[t] += p;
        }
    }
    DemandForecast { c_fa }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Timestamp;
    use crate::market::PriceCurve;

    #[test]
    fn alpha_examples() {
        assert_eq!(alpha(100.0, 100.0), 1.0);
        assert_eq!(alpha(50.0, 100.0), 0.5);
        assert_eq!(alpha(0.0, 0.0), 1.0);
        assert_eq!(alpha(3.0, 0.0), 1.0);
        assert_eq!(alpha(0.0, 2.0), 0.0);
    }

    #[test]
    fn price_examples() {
        let cfg = MarketConfig { bp_max: 1.0, ..MarketConfig::default() };
        assert_eq!(buy_price(0.0, &cfg), 1.0);
        assert_eq!(buy_price(1.0, &cfg), 0.0);
        assert_eq!(buy_price(0.5, &cfg), 0.5);
        assert_eq!(sell_price(1.0, &cfg), 0.0);
        assert_eq!(sell_price(0.5, &cfg), 0.5);
        assert_eq!(sell_price(0.0, &cfg), 1.0);
        let quad = MarketConfig { curve: PriceCurve::Quadratic, bp_max: 2.0, sp_max: Some(0.4), ..cfg };
        assert_eq!(buy_price(0.5, &quad), 0.5);
        assert!((sell_price(0.5, &quad) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn forecast_examples() {
        let grid = TimeGrid::new(Timestamp::from_hours(0), Timestamp::from_hours(24), 60).unwrap();
        let none: [Request; 0] = [];
        assert!(predict_flexible_consumption(&none, &grid).c_fa.iter().all(|&c| c == 0.0));

        let r = Request::new("a", "h", Timestamp::from_hours(0), Timestamp::from_hours(10), 6.0, 3.0, 3.0, 1.0).unwrap();
        let f = predict_flexible_consumption([&r], &grid);
        for (t, c) in f.c_fa.iter().enumerate() {
            let expect = if t < 10 { 0.6 } else { 0.0 };
            assert!((c - expect).abs() < 1e-12, "period {t}: {c}");
        }
        let f2 = predict_flexible_consumption([&r, &r], &grid);
        for (a, b) in f.c_fa.iter().zip(&f2.c_fa) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }
}
