use super::Objective;
use crate::amm::MarketState;
use crate::error::{Error, Result};
use crate::grid::MINUTES_PER_HOUR;
use crate::market::PricingMode;
use crate::types::Request;

pub const ORACLE_MAX_REQUESTS: usize = 8;
pub const ORACLE_MAX_PERIODS: usize = 48;

struct Placement {
    starts: Vec<(usize, f64)>,
    n: usize,
    power: f64,
}

/// Every start of `r` on the state's grid, worked out from first principles: whole
/// periods at full power, window containment, and budget.
fn placements(r: &Request, state: &MarketState) -> Placement {
    let grid = state.grid();
    let res = grid.resolution_min();
    let h = res as f64 / MINUTES_PER_HOUR as f64;
    let exact_periods = r.energy_kwh / (r.p_max_kw * h);
    let mut n = exact_periods.round() as usize;
    if (n as f64 - exact_periods).abs() > 1e-9 {
        n = exact_periods.ceil() as usize;
    }
    let n = n.max(1);
    let power = r.energy_kwh / (n as f64 * h);
    let bp = &state.prices().bp;
    let mut starts = Vec::new();
    for s in 0..grid.len() {
        if s + n > grid.len() {
            break;
        }
        let begin = grid.period_start(s);
        let finish = begin + n as i64 * res;
        if begin < r.earliest || finish > r.latest {
            continue;
        }
        let cost = match state.config().pricing_mode {
            PricingMode::PerPeriod => (s..s + n).map(|t| bp[t] * power * h).sum(),
            PricingMode::PaperLiteral => bp[s] * power * n as f64 * h,
        };
        if cost <= r.budget_gbp * (1.0 + 1e-9) + 1e-12 {
            starts.push((s, cost));
        }
    }
    Placement { starts, n, power }
}

fn assignable(order: &[usize], places: &[Placement], avail: &mut [f64]) -> bool {
    let Some((&first, rest)) = order.split_first() else {
        return true;
    };
    let p = &places[first];
    for &(s, _) in &p.starts {
        if avail[s..s + p.n].iter().all(|&a| a + 1e-9 >= p.power) {
            for a in &mut avail[s..s + p.n] {
                *a -= p.power;
            }
            let ok = assignable(rest, places, avail);
            for a in &mut avail[s..s + p.n] {
                *a += p.power;
            }
            if ok {
                return true;
            }
        }
    }
    false
}

/// Optimal objective by enumerating every subset of `requests` and checking whether it
/// can be placed against the state's available power. Only for tiny instances.
pub fn brute_force_oracle(requests: &[&Request], state: &MarketState, objective: Objective) -> Result<f64> {
    if requests.len() > ORACLE_MAX_REQUESTS || state.grid().len() > ORACLE_MAX_PERIODS {
        return Err(Error::TooLarge {
            requests: requests.len(),
            periods: state.grid().len(),
        });
    }
    let places: Vec<Placement> = requests.iter().map(|r| placements(r, state)).collect();
    let mut avail = state.available_kw().to_vec();
    let mut best = 0.0;
    for mask in 1u32..(1 << requests.len()) {
        let members: Vec<usize> = (0..requests.len()).filter(|i| mask & (1 << i) != 0).collect();
        let value: f64 = members.iter().map(|&i| objective.value(requests[i])).sum();
        if value <= best {
            continue;
        }
        if members.iter().any(|&i| places[i].starts.is_empty()) {
            continue;
        }
        if assignable(&members, &places, &mut avail) {
            best = value;
        }
    }
    Ok(best)
}
