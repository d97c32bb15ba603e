use std::collections::BTreeMap;

use rand::Rng;

use super::{draw_next_request, fairness_scores, find_cheapest_slot, AllocationOutcome, FairnessPolicy};
use crate::amm::MarketState;
use crate::error::Result;
use crate::types::{HouseholdId, HouseholdRecord, Request};

/// Continuous clearing of one instance. Requests are drawn one at a time with probability
/// proportional to their fairness score and booked into their cheapest feasible slot;
/// requests with no feasible slot are withdrawn from the forecast and reported unserved.
/// Ends when the backlog is empty, which is also when every remaining request has been
/// proven infeasible.
///
/// The requests should already be open in `state` so that their demand shapes prices.
pub fn fair_play_run<R: Rng + ?Sized>(
    state: &mut MarketState,
    requests: &[&Request],
    households: &BTreeMap<HouseholdId, HouseholdRecord>,
    policy: &FairnessPolicy,
    rng: &mut R,
) -> Result<Vec<AllocationOutcome>> {
    policy.validate()?;
    let mut backlog: Vec<&Request> = requests.to_vec();
    backlog.sort_by(|a, b| a.id.cmp(&b.id));
    let mut outcomes = Vec::with_capacity(backlog.len());
    let mut scores = fairness_scores(&backlog, households, policy);
    while !backlog.is_empty() {
        let pick = draw_next_request(&backlog, &scores, rng);
        let request = backlog.remove(pick);
        match find_cheapest_slot(request, state) {
            Some(slot) => {
                state.commit_slot(request, &slot)?;
                outcomes.push(AllocationOutcome::served(request, slot));
                scores = fairness_scores(&backlog, households, policy);
            }
            None => {
                state.withdraw_request(&request.id);
                outcomes.push(AllocationOutcome::unserved(request));
            }
        }
    }
    Ok(outcomes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{TimeGrid, Timestamp};
    use crate::market::MarketConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn hourly_state(supply: f64, periods: usize) -> MarketState {
        let cfg = MarketConfig {
            resolution_minutes: 60,
            ..MarketConfig::default()
        };
        let grid = TimeGrid::with_periods(Timestamp::from_hours(0), periods, 60).unwrap();
        MarketState::new(&cfg, grid, vec![supply; periods], vec![0.0; periods]).unwrap()
    }

    fn req(id: &str, h: &str, e: i64, l: i64, q: f64) -> Request {
        Request::new(id, h, Timestamp::from_hours(e), Timestamp::from_hours(l), q, 1.0, 1.0, 100.0).unwrap()
    }

    #[test]
    fn abundance_serves_everything_for_free() {
        let mut s = hourly_state(100.0, 12);
        let rs: Vec<Request> = (0..6).map(|i| req(&format!("r{i}"), "h", i, i + 6, 2.0)).collect();
        let refs: Vec<&Request> = rs.iter().collect();
        s.open_requests(refs.iter().copied());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = fair_play_run(&mut s, &refs, &BTreeMap::new(), &FairnessPolicy::default(), &mut rng).unwrap();
        assert!(out.iter().all(|o| o.served));
        assert_eq!(out.iter().map(AllocationOutcome::cost_gbp).sum::<f64>(), 0.0);
    }

    #[test]
    fn infeasible_request_leaves_state_unchanged() {
        let mut s = hourly_state(0.5, 4);
        let r = req("r", "h", 0, 4, 2.0);
        s.open_requests([&r]);
        let mut expected = s.clone();
        expected.withdraw_request(&r.id);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = fair_play_run(&mut s, &[&r], &BTreeMap::new(), &FairnessPolicy::default(), &mut rng).unwrap();
        assert_eq!(out, vec![AllocationOutcome::unserved(&r)]);
        assert_eq!(s, expected);
        assert!(s.ledger().entries().is_empty());
    }

    #[test]
    fn same_seed_same_outcomes() {
        let rs: Vec<Request> = (0..10).map(|i| req(&format!("r{i}"), &format!("h{}", i % 3), 0, 6, 2.0)).collect();
        let refs: Vec<&Request> = rs.iter().collect();
        let run = |seed| {
            let mut s = hourly_state(2.0, 6);
            s.open_requests(refs.iter().copied());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            fair_play_run(&mut s, &refs, &BTreeMap::new(), &FairnessPolicy::default(), &mut rng).unwrap()
        };
        assert_eq!(run(11), run(11));
    }
}
