use std::collections::{BTreeMap, BTreeSet};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use super::FairnessPolicy;
use crate::types::{HouseholdId, HouseholdRecord, Request, RequestId};

fn effective_gamma(households: &BTreeMap<HouseholdId, HouseholdRecord>, id: &HouseholdId, floor: f64) -> f64 {
    households.get(id).map_or(1.0, |h| h.gamma).max(floor)
}

/// Selection score per request: the inverse of its household's reliability, normalised over
/// the households present in `requests`. Households missing from the map count as new
/// (reliability 1).
pub fn fairness_scores(
    requests: &[&Request],
    households: &BTreeMap<HouseholdId, HouseholdRecord>,
    policy: &FairnessPolicy,
) -> BTreeMap<RequestId, f64> {
    let present: BTreeSet<&HouseholdId> = requests.iter().map(|r| &r.household).collect();
    let norm: f64 = present
        .iter()
        .map(|h| 1.0 / effective_gamma(households, h, policy.gamma_floor))
        .sum();
    requests
        .iter()
        .map(|r| {
            let inv = 1.0 / effective_gamma(households, &r.household, policy.gamma_floor);
            (r.id.clone(), policy.scale * inv / norm)
        })
        .collect()
}

/// Index into `backlog` of the next request to evaluate, drawn with probability
/// proportional to its score. One weighted draw stands in for repeated uniform picks each
/// followed by a biased coin; both select request `r` with probability `phi_r / sum(phi)`.
pub fn draw_next_request<R: Rng + ?Sized>(
    backlog: &[&Request],
    scores: &BTreeMap<RequestId, f64>,
    rng: &mut R,
) -> usize {
    assert!(!backlog.is_empty(), "cannot draw from an empty backlog");
    if backlog.len() == 1 {
        return 0;
    }
    let weights = backlog.iter().map(|r| scores.get(&r.id).copied().unwrap_or(0.0));
    match WeightedIndex::new(weights) {
        Ok(dist) => dist.sample(rng),
        Err(_) => rng.random_range(0..backlog.len()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Timestamp;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn req(id: &str, h: &str) -> Request {
        Request::new(id, h, Timestamp::from_hours(0), Timestamp::from_hours(2), 1.0, 1.0, 1.0, 1.0).unwrap()
    }

    fn records(gammas: &[(&str, f64)]) -> BTreeMap<HouseholdId, HouseholdRecord> {
        gammas
            .iter()
            .map(|&(h, g)| (HouseholdId::new(h), HouseholdRecord::seeded(h, g, 10.0).unwrap()))
            .collect()
    }

    #[test]
    fn inverse_reliability_scores() {
        let (a, b) = (req("a", "h1"), req("b", "h2"));
        let s = fairness_scores(&[&a, &b], &records(&[("h1", 0.5), ("h2", 0.25)]), &FairnessPolicy::default());
        assert!((s[&a.id] - 1.0 / 3.0).abs() < 1e-12);
        assert!((s[&b.id] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn equal_reliability_is_uniform_and_scale_keeps_ratio() {
        let rs = [req("a", "h1"), req("b", "h2"), req("c", "h3")];
        let refs: Vec<&Request> = rs.iter().collect();
        let h = records(&[("h1", 0.7), ("h2", 0.7), ("h3", 0.7)]);
        let s = fairness_scores(&refs, &h, &FairnessPolicy::default());
        assert!(s.values().all(|&v| (v - 1.0 / 3.0).abs() < 1e-12));

        let h = records(&[("h1", 0.01), ("h2", 1.0)]);
        let refs = [&rs[0], &rs[1]];
        let base = fairness_scores(&refs, &h, &FairnessPolicy::default());
        assert!((base[&rs[0].id] / base[&rs[1].id] - 100.0).abs() < 1e-9);
        let scaled = fairness_scores(&refs, &h, &FairnessPolicy { scale: 40.0, ..FairnessPolicy::default() });
        assert!((scaled[&rs[0].id] / scaled[&rs[1].id] - 100.0).abs() < 1e-9);
    }

    #[test]
    fn zero_reliability_is_floored() {
        let (a, b) = (req("a", "h1"), req("b", "h2"));
        let s = fairness_scores(&[&a, &b], &records(&[("h1", 0.0), ("h2", 1.0)]), &FairnessPolicy::default());
        assert!((s[&a.id] / s[&b.id] - 1000.0).abs() < 1e-6);
    }

    #[test]
    fn single_request_always_drawn() {
        let a = req("a", "h1");
        let s = fairness_scores(&[&a], &BTreeMap::new(), &FairnessPolicy::default());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            assert_eq!(draw_next_request(&[&a], &s, &mut rng), 0);
        }
    }

    #[test]
    fn equal_weights_split_evenly() {
        let (a, b) = (req("a", "h1"), req("b", "h2"));
        let s = fairness_scores(&[&a, &b], &BTreeMap::new(), &FairnessPolicy::default());
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let hits = (0..10_000).filter(|_| draw_next_request(&[&a, &b], &s, &mut rng) == 0).count();
        assert!((hits as f64 / 10_000.0 - 0.5).abs() < 0.02, "{hits}");
    }
}
