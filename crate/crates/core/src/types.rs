//! Market participants' submissions: flexible-appliance requests, supplier offers,
//! and the per-household reliability record.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Timestamp, MINUTES_PER_HOUR};

/// Relative slack used when comparing floating-point energy and power figures.
pub(crate) const EPS: f64 = 1e-9;

macro_rules! string_id {
    ($name:ident) => {
        #[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                $name(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                $name(s.to_owned())
            }
        }
    };
}

string_id!(RequestId);
string_id!(HouseholdId);
string_id!(OfferId);

fn check_positive(what: &'static str, name: &str, value: f64) -> Result<()> {
    if !(value.is_finite() && value > 0.0) {
        return Err(Error::invalid(what, format!("{name} must be positive, got {value}")));
    }
    Ok(())
}

/// A flexible appliance's demand: `energy_kwh` somewhere inside `[earliest, latest]`,
/// drawn at no more than `p_max_kw`, for at most `budget_gbp`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: RequestId,
    pub household: HouseholdId,
    pub earliest: Timestamp,
    pub latest: Timestamp,
    pub energy_kwh: f64,
    /// Carried for completeness; delivery runs at a single fixed power.
    pub p_min_kw: f64,
    pub p_max_kw: f64,
    pub budget_gbp: f64,
}

impl Request {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: impl Into<RequestId>,
        household: impl Into<HouseholdId>,
        earliest: Timestamp,
        latest: Timestamp,
        energy_kwh: f64,
        p_min_kw: f64,
        p_max_kw: f64,
        budget_gbp: f64,
    ) -> Result<Self> {
        let r = Request {
            id: id.into(),
            household: household.into(),
            earliest,
            latest,
            energy_kwh,
            p_min_kw,
            p_max_kw,
            budget_gbp,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        const WHAT: &str = "request";
        if self.latest <= self.earliest {
            return Err(Error::invalid(WHAT, format!("{}: latest must be after earliest", self.id)));
        }
        check_positive(WHAT, "energy", self.energy_kwh)?;
        check_positive(WHAT, "p_min", self.p_min_kw)?;
        check_positive(WHAT, "p_max", self.p_max_kw)?;
        if self.p_min_kw > self.p_max_kw {
            return Err(Error::invalid(WHAT, format!("{}: p_min exceeds p_max", self.id)));
        }
        if !(self.budget_gbp.is_finite() && self.budget_gbp >= 0.0) {
            return Err(Error::invalid(WHAT, format!("{}: budget must be non-negative", self.id)));
        }
        let window_h = (self.latest - self.earliest) as f64 / MINUTES_PER_HOUR as f64;
        if self.energy_kwh / self.p_max_kw > window_h * (1.0 + EPS) {
            return Err(Error::invalid(
                WHAT,
                format!("{}: cannot deliver {} kWh at {} kW within {window_h} h", self.id, self.energy_kwh, self.p_max_kw),
            ));
        }
        Ok(())
    }

    pub fn window_min(&self) -> i64 {
        self.latest - self.earliest
    }

    /// Number of whole periods needed at full power, rounded up.
    pub fn n_periods(&self, resolution_min: i64) -> usize {
        let exact = self.energy_kwh / self.p_max_kw * MINUTES_PER_HOUR as f64 / resolution_min as f64;
        ((exact - 1e-9).ceil() as usize).max(1)
    }

    /// Minimum delivery duration in minutes, a whole number of periods.
    pub fn min_duration_min(&self, resolution_min: i64) -> i64 {
        self.n_periods(resolution_min) as i64 * resolution_min
    }

    /// Slack beyond the minimum delivery duration, in minutes.
    pub fn flexibility_min(&self, resolution_min: i64) -> i64 {
        self.window_min() - self.min_duration_min(resolution_min)
    }

    /// Fixed power at which the request is delivered over its rounded duration.
    /// Equals `p_max_kw` when the duration divides evenly, otherwise slightly below it.
    pub fn delivery_power_kw(&self, resolution_min: i64) -> f64 {
        let hours = self.min_duration_min(resolution_min) as f64 / MINUTES_PER_HOUR as f64;
        self.energy_kwh / hours
    }

    /// Power spread evenly over the valid interval, as used by the demand forecast.
    pub fn average_power_kw(&self, resolution_min: i64) -> f64 {
        self.min_duration_min(resolution_min) as f64 / self.window_min() as f64
            * self.delivery_power_kw(resolution_min)
    }

    /// Latest timestamp at which delivery can begin.
    pub fn latest_start(&self, resolution_min: i64) -> Timestamp {
        self.latest - self.min_duration_min(resolution_min)
    }

    pub fn unit_budget(&self) -> f64 {
        self.budget_gbp / self.energy_kwh
    }
}

/// A supplier's availability of `energy_kwh` within `[earliest, latest]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Offer {
    pub id: OfferId,
    pub agent: String,
    pub earliest: Timestamp,
    pub latest: Timestamp,
    pub energy_kwh: f64,
    pub p_min_kw: f64,
    pub p_max_kw: f64,
    /// Minimum revenue the supplier will accept for the whole offer.
    pub revenue_floor_gbp: f64,
    pub controllable: bool,
}

impl Offer {
    pub fn validate(&self) -> Result<()> {
        const WHAT: &str = "offer";
        if self.latest <= self.earliest {
            return Err(Error::invalid(WHAT, format!("{}: latest must be after earliest", self.id)));
        }
        check_positive(WHAT, "energy", self.energy_kwh)?;
        check_positive(WHAT, "p_min", self.p_min_kw)?;
        check_positive(WHAT, "p_max", self.p_max_kw)?;
        if self.p_min_kw > self.p_max_kw {
            return Err(Error::invalid(WHAT, format!("{}: p_min exceeds p_max", self.id)));
        }
        if !(self.revenue_floor_gbp.is_finite() && self.revenue_floor_gbp >= 0.0) {
            return Err(Error::invalid(WHAT, format!("{}: revenue floor must be non-negative", self.id)));
        }
        Ok(())
    }

    pub fn unit_floor(&self) -> f64 {
        self.revenue_floor_gbp / self.energy_kwh
    }

    /// Constant power that spreads the offer's energy over its window, capped at `p_max_kw`.
    pub fn spread_power_kw(&self) -> f64 {
        let hours = (self.latest - self.earliest) as f64 / MINUTES_PER_HOUR as f64;
        (self.energy_kwh / hours).min(self.p_max_kw)
    }
}

/// Running delivered-vs-requested energy for one household.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HouseholdRecord {
    pub id: HouseholdId,
    pub served_kwh: f64,
    pub requested_kwh: f64,
    pub gamma: f64,
}

impl HouseholdRecord {
    /// A household with no history starts fully reliable.
    pub fn new(id: impl Into<HouseholdId>) -> Self {
        HouseholdRecord {
            id: id.into(),
            served_kwh: 0.0,
            requested_kwh: 0.0,
            gamma: 1.0,
        }
    }

    /// A household carrying `history_kwh` of prior requests at reliability `gamma`.
    pub fn seeded(id: impl Into<HouseholdId>, gamma: f64, history_kwh: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::invalid("household", format!("gamma {gamma} outside [0, 1]")));
        }
        check_positive("household", "history", history_kwh)?;
        Ok(HouseholdRecord {
            id: id.into(),
            served_kwh: gamma * history_kwh,
            requested_kwh: history_kwh,
            gamma,
        })
    }

    pub fn record(&mut self, requested_kwh: f64, delivered_kwh: f64) {
        debug_assert!(delivered_kwh <= requested_kwh * (1.0 + EPS));
        self.requested_kwh += requested_kwh;
        self.served_kwh += delivered_kwh;
        if self.requested_kwh > 0.0 {
            self.gamma = (self.served_kwh / self.requested_kwh).clamp(0.0, 1.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(e_h: i64, l_h: i64, q: f64, pmax: f64) -> Request {
        Request::new("r", "h", Timestamp::from_hours(e_h), Timestamp::from_hours(l_h), q, pmax, pmax, 10.0).unwrap()
    }

    #[test]
    fn min_duration_examples() {
        assert_eq!(req(0, 10, 6.0, 3.0).min_duration_min(5), 120);
        assert_eq!(req(0, 10, 6.0, 3.0).n_periods(5), 24);
        assert_eq!(req(0, 10, 1.0, 1.0).min_duration_min(5), 60);
        assert_eq!(req(0, 10, 1.0, 4.0).min_duration_min(5), 15);
    }

    #[test]
    fn duration_rounds_up_and_power_drops() {
        // 1 kWh at 7 kW is 8.57 min, which needs two 5-minute periods
        let r = req(0, 1, 1.0, 7.0);
        assert_eq!(r.min_duration_min(5), 10);
        assert!(r.delivery_power_kw(5) <= 7.0);
        assert!((r.delivery_power_kw(5) * 10.0 / 60.0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn flexibility_examples() {
        assert_eq!(req(0, 10, 6.0, 3.0).flexibility_min(5), 8 * 60);
        assert_eq!(req(0, 2, 6.0, 3.0).flexibility_min(5), 0);
    }

    #[test]
    fn average_power_examples() {
        assert!((req(0, 10, 6.0, 3.0).average_power_kw(5) - 0.6).abs() < 1e-12);
        assert!((req(0, 2, 6.0, 3.0).average_power_kw(5) - 3.0).abs() < 1e-12);
        assert!((req(0, 4, 1.0, 1.0).average_power_kw(5) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn rejects_unsatisfiable_window() {
        let err = Request::new("r", "h", Timestamp::from_hours(0), Timestamp::from_hours(1), 6.0, 3.0, 3.0, 1.0);
        assert!(err.is_err());
        let err = Request::new("r", "h", Timestamp::from_hours(0), Timestamp::from_hours(4), 6.0, 4.0, 3.0, 1.0);
        assert!(err.is_err());
        let err = Request::new("r", "h", Timestamp::from_hours(0), Timestamp::from_hours(4), 6.0, 3.0, 3.0, -1.0);
        assert!(err.is_err());
    }

    #[test]
    fn household_record_tracks_ratio() {
        let mut h = HouseholdRecord::new("h");
        assert_eq!(h.gamma, 1.0);
        h.record(2.0, 2.0);
        h.record(2.0, 0.0);
        assert_eq!(h.gamma, 0.5);
        let s = HouseholdRecord::seeded("g", 0.0, 100.0).unwrap();
        assert_eq!(s.gamma, 0.0);
    }
}
