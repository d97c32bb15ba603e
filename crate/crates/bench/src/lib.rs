//! Benchmark fixtures shared by the criterion benches.

use flexmarket::amm::MarketState;
use flexmarket::{MarketConfig, Request, TimeGrid, Timestamp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One 24-hour instance at 5-minute resolution with `n` requests competing for roughly
/// half the power they would need.
pub fn instance(n: usize, seed: u64) -> (MarketState, Vec<Request>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = MarketConfig::default();
    let periods = 288;
    let grid = TimeGrid::with_periods(Timestamp::from_hours(0), periods, 5).unwrap();
    let requests: Vec<Request> = (0..n)
        .map(|i| {
            let e = rng.random_range(0..200i64) * 5;
            let len = rng.random_range(24..=88i64) * 5;
            let p = rng.random_range(1.0..3.0);
            let q = p * rng.random_range(0.5..1.5);
            Request::new(
                format!("r{i:04}").as_str(),
                format!("h{}", i % 50).as_str(),
                Timestamp::from_minutes(e),
                Timestamp::from_minutes(e + len),
                q,
                p,
                p,
                q,
            )
            .unwrap()
        })
        .collect();
    let supply = n as f64 * 0.05;
    let mut state = MarketState::new(&cfg, grid, vec![supply; periods], vec![0.0; periods]).unwrap();
    state.open_requests(&requests);
    (state, requests)
}
