//! Market-instance timing and the relevant-request filter.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{TimeGrid, Timestamp, MINUTES_PER_HOUR};
use crate::types::Request;

/// Shape of the buy/sell price curves between full scarcity (`alpha = 0`) and abundance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriceCurve {
    #[default]
    Linear,
    Quadratic,
}

impl PriceCurve {
    /// Scarcity factor in `[0, 1]`: 1 at `alpha = 0`, 0 at `alpha = 1`.
    pub fn scarcity(self, alpha: f64) -> f64 {
        let x = (1.0 - alpha).clamp(0.0, 1.0);
        match self {
            PriceCurve::Linear => x,
            PriceCurve::Quadratic => x * x,
        }
    }
}

/// How a booked slot is charged.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PricingMode {
    /// Sum of the buy price over every occupied period.
    #[default]
    PerPeriod,
    /// Buy price at the start period applied to the whole request energy.
    PaperLiteral,
}

impl std::str::FromStr for PricingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-period" => Ok(PricingMode::PerPeriod),
            "paper-literal" => Ok(PricingMode::PaperLiteral),
            other => Err(Error::invalid("pricing mode", format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarketConfig {
    /// How far ahead of its start an instance accepts bookings.
    pub window_hours: i64,
    /// Time between the starts of consecutive instances.
    pub spacing_hours: i64,
    pub resolution_minutes: i64,
    /// Buy price at full scarcity, GBP/kWh.
    pub bp_max: f64,
    /// Sell price at full scarcity, GBP/kWh; defaults to `bp_max`.
    pub sp_max: Option<f64>,
    pub curve: PriceCurve,
    pub gamma_target: f64,
    pub pricing_mode: PricingMode,
    /// Price paid for controllable energy that covers essential-demand shortfalls, GBP/kWh.
    pub controllable_unit_price: f64,
}

impl Default for MarketConfig {
    fn default() -> Self {
        MarketConfig {
            window_hours: 24,
            spacing_hours: 3,
            resolution_minutes: 5,
            bp_max: 1.0,
            sp_max: None,
            curve: PriceCurve::Linear,
            gamma_target: 0.9,
            pricing_mode: PricingMode::PerPeriod,
            controllable_unit_price: 0.3,
        }
    }
}

impl MarketConfig {
    pub fn validate(&self) -> Result<()> {
        const WHAT: &str = "market config";
        if self.resolution_minutes <= 0 || self.spacing_hours <= 0 {
            return Err(Error::invalid(WHAT, "resolution and spacing must be positive"));
        }
        if self.window_hours < self.spacing_hours {
            return Err(Error::invalid(WHAT, "window must be at least the spacing"));
        }
        if (self.window_min() % self.resolution_minutes) != 0 || (self.spacing_min() % self.resolution_minutes) != 0 {
            return Err(Error::invalid(WHAT, "resolution must divide window and spacing"));
        }
        if !(self.bp_max.is_finite() && self.bp_max > 0.0) {
            return Err(Error::invalid(WHAT, "bp_max must be positive"));
        }
        if let Some(sp) = self.sp_max {
            if !(sp.is_finite() && sp >= 0.0) {
                return Err(Error::invalid(WHAT, "sp_max must be non-negative"));
            }
        }
        if !(self.gamma_target > 0.0 && self.gamma_target <= 1.0) {
            return Err(Error::invalid(WHAT, "gamma_target must lie in (0, 1]"));
        }
        if !(self.controllable_unit_price.is_finite() && self.controllable_unit_price >= 0.0) {
            return Err(Error::invalid(WHAT, "controllable_unit_price must be non-negative"));
        }
        Ok(())
    }

    pub fn window_min(&self) -> i64 {
        self.window_hours * MINUTES_PER_HOUR
    }

    pub fn spacing_min(&self) -> i64 {
        self.spacing_hours * MINUTES_PER_HOUR
    }

    pub fn effective_sp_max(&self) -> f64 {
        self.sp_max.unwrap_or(self.bp_max)
    }
}

/// The instance live at `clock`: it opened at the latest multiple of the spacing not after
/// `clock` (an instance opening exactly at `clock` replaces its predecessor).
pub fn advance_instance(config: &MarketConfig, clock: Timestamp) -> Result<TimeGrid> {
    if !clock.is_aligned(config.resolution_minutes) {
        return Err(Error::Misaligned {
            timestamp: clock,
            resolution_min: config.resolution_minutes,
        });
    }
    let start = clock.floor_to(config.spacing_min());
    TimeGrid::new(start, start + config.window_min(), config.resolution_minutes)
}

/// Whether `request` belongs to the instance covering `grid`: it spans the whole window,
/// lies within it, or straddles its end.
pub fn is_relevant(request: &Request, grid: &TimeGrid) -> bool {
    let d = request.min_duration_min(grid.resolution_min());
    let (ms, me) = (grid.start(), grid.end());
    let (e, l) = (request.earliest, request.latest);
    (e <= ms && l - d >= me) || (e + d >= ms && l <= me) || (e <= me && l >= me)
}

pub fn relevant_requests<'a, I>(waiting: I, grid: &TimeGrid) -> Vec<&'a Request>
where
    I: IntoIterator<Item = &'a Request>,
{
    waiting.into_iter().filter(|r| is_relevant(r, grid)).collect()
}
