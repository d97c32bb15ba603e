use serde::{Deserialize, Serialize};

use super::{AllocationOutcome, Slot};
use crate::amm::MarketState;
use crate::error::{Error, Result};
use crate::types::{Request, EPS};

/// What the global benchmark maximises over the served set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Delivered energy, `sum Q_r`.
    Volume,
    /// Budgets of served requests, `sum C_r`.
    Revenue,
}

impl Objective {
    pub fn value(self, request: &Request) -> f64 {
        match self {
            Objective::Volume => request.energy_kwh,
            Objective::Revenue => request.budget_gbp,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Fall back to greedy plus local search when the instance is too large to solve
    /// exactly; otherwise such instances are rejected.
    pub allow_heuristic: bool,
    /// Largest instance solved exactly: requests with at least one feasible slot.
    pub max_requests: usize,
    pub max_periods: usize,
    /// Search nodes before the exact search gives up and returns its incumbent.
    pub node_limit: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            allow_heuristic: true,
            max_requests: 30,
            max_periods: 288,
            node_limit: 5_000_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalSolution {
    /// One outcome per input request, in input order.
    pub outcomes: Vec<AllocationOutcome>,
    pub objective: f64,
    /// Whether the objective is proven optimal.
    pub exact: bool,
}

#[derive(Clone, Debug)]
struct Candidate {
    start: usize,
    cost: f64,
}

#[derive(Clone, Debug)]
struct Item {
    index: usize,
    value: f64,
    energy: f64,
    power: f64,
    n: usize,
    candidates: Vec<Candidate>,
    /// Union of the periods any candidate occupies.
    span: std::ops::Range<usize>,
}

struct Problem {
    items: Vec<Item>,
    capacity: Vec<f64>,
    h: f64,
    objective: Objective,
}

const CAPACITY_TOL: f64 = 1e-9;

fn fnv1a(text: &str) -> u64 {
    text.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

fn fits(avail: &[f64], start: usize, n: usize, power: f64) -> bool {
    avail[start..start + n].iter().all(|&a| a + CAPACITY_TOL >= power)
}

fn take(avail: &mut [f64], start: usize, n: usize, power: f64) {
    for a in &mut avail[start..start + n] {
        *a -= power;
    }
}

fn give(avail: &mut [f64], start: usize, n: usize, power: f64) {
    for a in &mut avail[start..start + n] {
        *a += power;
    }
}

impl Problem {
    fn build(state: &MarketState, requests: &[&Request], objective: Objective) -> Self {
        let res = state.grid().resolution_min();
        let budget_slack = |r: &Request| r.budget_gbp + EPS * r.budget_gbp.max(1.0);
        let capacity = state.available_kw().to_vec();
        let mut items = Vec::new();
        for (index, r) in requests.iter().enumerate() {
            let n = r.n_periods(res);
            let power = r.delivery_power_kw(res);
            let mut candidates: Vec<Candidate> = state
                .start_range(r)
                .filter(|&s| fits(&capacity, s, n, power))
                .map(|s| Candidate {
                    start: s,
                    cost: state.slot_cost(r, s),
                })
                .filter(|c| c.cost <= budget_slack(r))
                .collect();
            if candidates.is_empty() {
                continue;
            }
            candidates.sort_by(|a, b| a.cost.total_cmp(&b.cost).then(a.start.cmp(&b.start)));
            let lo = candidates.iter().map(|c| c.start).min().unwrap_or(0);
            let hi = candidates.iter().map(|c| c.start + n).max().unwrap_or(0);
            items.push(Item {
                index,
                value: objective.value(r),
                energy: r.energy_kwh,
                power,
                n,
                candidates,
                span: lo..hi,
            });
        }
        // Equal values are ordered by a hash of the id so that input order (for example
        // one group listed before another) does not decide who is packed first.
        let key: Vec<u64> = requests.iter().map(|r| fnv1a(r.id.as_str())).collect();
        items.sort_by(|a, b| {
            b.value
                .total_cmp(&a.value)
                .then(key[a.index].cmp(&key[b.index]))
                .then(a.index.cmp(&b.index))
        });
        Problem {
            items,
            capacity,
            h: state.grid().period_hours(),
            objective,
        }
    }

    /// Objective of a selection, summed in input order.
    fn score(&self, chosen: &[Option<usize>]) -> f64 {
        let mut served: Vec<(usize, f64)> = self
            .items
            .iter()
            .zip(chosen)
            .filter(|(_, c)| c.is_some())
            .map(|(it, _)| (it.index, it.value))
            .collect();
        served.sort_by_key(|&(i, _)| i);
        served.iter().map(|&(_, v)| v).sum()
    }
}

/// Greedy packing in item order, each item at its cheapest start that still fits.
fn greedy(p: &Problem) -> (Vec<Option<usize>>, Vec<f64>) {
    let mut avail = p.capacity.clone();
    let mut chosen = vec![None; p.items.len()];
    for (k, it) in p.items.iter().enumerate() {
        if let Some(ci) = it.candidates.iter().position(|c| fits(&avail, c.start, it.n, it.power)) {
            take(&mut avail, it.candidates[ci].start, it.n, it.power);
            chosen[k] = Some(ci);
        }
    }
    (chosen, avail)
}

fn try_insert(p: &Problem, k: usize, avail: &mut [f64], work: &mut u64) -> Option<usize> {
    let it = &p.items[k];
    for (ci, c) in it.candidates.iter().enumerate() {
        *work += it.n as u64;
        if fits(avail, c.start, it.n, it.power) {
            take(avail, c.start, it.n, it.power);
            return Some(ci);
        }
    }
    None
}

/// Greedy followed by first-improvement swaps: drop one served item, add an unserved
/// item at least as valuable, then refill. Stops after `WORK_LIMIT` period checks.
fn local_search(p: &Problem) -> Vec<Option<usize>> {
    const WORK_LIMIT: u64 = 20_000_000;
    let (mut chosen, mut avail) = greedy(p);
    let mut best = p.score(&chosen);
    let mut work = 0u64;
    let mut improved = true;
    while improved && work < WORK_LIMIT {
        improved = false;
        'outer: for s in 0..p.items.len() {
            let Some(cs) = chosen[s] else { continue };
            for u in 0..p.items.len() {
                if chosen[u].is_some() || p.items[u].value < p.items[s].value {
                    continue;
                }
                if work >= WORK_LIMIT {
                    break 'outer;
                }
                let mut trial = chosen.clone();
                let mut trial_avail = avail.clone();
                let is = &p.items[s];
                give(&mut trial_avail, is.candidates[cs].start, is.n, is.power);
                trial[s] = None;
                let Some(cu) = try_insert(p, u, &mut trial_avail, &mut work) else { continue };
                trial[u] = Some(cu);
                for (k, slot) in trial.iter_mut().enumerate() {
                    if slot.is_none() && k != s {
                        *slot = try_insert(p, k, &mut trial_avail, &mut work);
                    }
                }
                let score = p.score(&trial);
                if score > best + 1e-9 * best.abs().max(1.0) {
                    chosen = trial;
                    avail = trial_avail;
                    best = score;
                    improved = true;
                    break 'outer;
                }
            }
        }
    }
    chosen
}

struct Search<'a> {
    p: &'a Problem,
    /// `suffix_power[k][t]`: power items `k..` could draw at period `t`.
    suffix_power: Vec<Vec<f64>>,
    suffix_value: Vec<f64>,
    /// Item positions sorted by value per unit energy, for the revenue bound.
    by_density: Vec<usize>,
    avail: Vec<f64>,
    current: Vec<Option<usize>>,
    current_value: f64,
    best: Vec<Option<usize>>,
    best_value: f64,
    nodes: u64,
    node_limit: u64,
    aborted: bool,
}

impl<'a> Search<'a> {
    fn new(p: &'a Problem, incumbent: Vec<Option<usize>>, node_limit: u64) -> Self {
        let m = p.items.len();
        let len = p.capacity.len();
        let mut suffix_power = vec![vec![0.0; len]; m + 1];
        let mut suffix_value = vec![0.0; m + 1];
        for k in (0..m).rev() {
            suffix_power[k] = suffix_power[k + 1].clone();
            for t in p.items[k].span.clone() {
                suffix_power[k][t] += p.items[k].power;
            }
            suffix_value[k] = suffix_value[k + 1] + p.items[k].value;
        }
        let mut by_density: Vec<usize> = (0..m).collect();
        by_density.sort_by(|&a, &b| {
            let da = p.items[a].value / p.items[a].energy;
            let db = p.items[b].value / p.items[b].energy;
            db.total_cmp(&da).then(a.cmp(&b))
        });
        let best_value = p.score(&incumbent);
        Search {
            p,
            suffix_power,
            suffix_value,
            by_density,
            avail: p.capacity.clone(),
            current: vec![None; m],
            current_value: 0.0,
            best: incumbent,
            best_value,
            nodes: 0,
            node_limit,
            aborted: false,
        }
    }

    fn energy_cap(&self, k: usize) -> f64 {
        self.avail
            .iter()
            .zip(&self.suffix_power[k])
            .map(|(&a, &d)| a.max(0.0).min(d))
            .sum::<f64>()
            * self.p.h
    }

    fn bound(&self, k: usize) -> f64 {
        let cap = self.energy_cap(k) * (1.0 + 1e-9) + 1e-9;
        match self.p.objective {
            Objective::Volume => self.suffix_value[k].min(cap),
            Objective::Revenue => {
                let mut room = cap;
                let mut total = 0.0;
                for &j in &self.by_density {
                    if j < k {
                        continue;
                    }
                    let it = &self.p.items[j];
                    if it.energy <= room {
                        room -= it.energy;
                        total += it.value;
                    } else {
                        total += it.value * room / it.energy;
                        break;
                    }
                }
                total
            }
        }
    }

    fn run(&mut self, k: usize) {
        if self.aborted {
            return;
        }
        self.nodes += 1;
        if self.nodes > self.node_limit {
            self.aborted = true;
            return;
        }
        if self.current_value > self.best_value + 1e-9 * self.best_value.abs().max(1.0) {
            self.best_value = self.current_value;
            self.best = self.current.clone();
        }
        if k == self.p.items.len() {
            return;
        }
        let tol = 1e-9 * self.best_value.abs().max(1.0);
        if self.current_value + self.bound(k) <= self.best_value + tol {
            return;
        }
        let it = &self.p.items[k];
        let (n, power, value) = (it.n, it.power, it.value);
        for ci in 0..it.candidates.len() {
            let start = self.p.items[k].candidates[ci].start;
            if !fits(&self.avail, start, n, power) {
                continue;
            }
            let saved: Vec<f64> = self.avail[start..start + n].to_vec();
            take(&mut self.avail, start, n, power);
            self.current[k] = Some(ci);
            self.current_value += value;
            self.run(k + 1);
            self.current_value -= value;
            self.current[k] = None;
            self.avail[start..start + n].copy_from_slice(&saved);
            if self.aborted {
                return;
            }
        }
        self.run(k + 1);
    }
}

/// Best served set for `objective` over the requests open in `state`, priced at the
/// state's current (snapshot) prices. Exact up to the size limits in `options`.
/// The state is left unchanged; see [`commit_solution`] to book the result.
pub fn solve_global(
    state: &MarketState,
    requests: &[&Request],
    objective: Objective,
    options: &SolverOptions,
) -> Result<GlobalSolution> {
    let p = Problem::build(state, requests, objective);
    let too_large = p.items.len() > options.max_requests || state.grid().len() > options.max_periods;
    if too_large && !options.allow_heuristic {
        return Err(Error::TooLarge {
            requests: p.items.len(),
            periods: state.grid().len(),
        });
    }
    let incumbent = local_search(&p);
    let (chosen, exact) = if too_large {
        (incumbent, false)
    } else {
        let mut search = Search::new(&p, incumbent, options.node_limit);
        search.run(0);
        (search.best, !search.aborted)
    };

    let mut outcomes: Vec<AllocationOutcome> = requests.iter().map(|r| AllocationOutcome::unserved(r)).collect();
    for (it, c) in p.items.iter().zip(&chosen) {
        if let Some(ci) = c {
            let cand = &it.candidates[*ci];
            let slot = Slot {
                start_period: cand.start,
                n_periods: it.n,
                power_kw: it.power,
                cost_gbp: cand.cost,
            };
            outcomes[it.index] = AllocationOutcome::served(requests[it.index], slot);
        }
    }
    Ok(GlobalSolution {
        objective: p.score(&chosen),
        outcomes,
        exact,
    })
}

/// Book every served outcome of `solution` into `state` at its quoted cost and withdraw
/// the unserved requests from the forecast.
pub fn commit_solution(state: &mut MarketState, requests: &[&Request], solution: &GlobalSolution) -> Result<()> {
    for (r, o) in requests.iter().zip(&solution.outcomes) {
        match &o.slot {
            Some(slot) => {
                state.commit_slot(r, slot)?;
            }
            None => {
                state.withdraw_request(&r.id);
            }
        }
    }
    Ok(())
}

pub fn volume_max_solve(state: &MarketState, requests: &[&Request], options: &SolverOptions) -> Result<GlobalSolution> {
    solve_global(state, requests, Objective::Volume, options)
}

pub fn revenue_max_solve(state: &MarketState, requests: &[&Request], options: &SolverOptions) -> Result<GlobalSolution> {
    solve_global(state, requests, Objective::Revenue, options)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{TimeGrid, Timestamp};
    use crate::market::MarketConfig;

    fn state(supply: Vec<f64>) -> MarketState {
        let cfg = MarketConfig {
            resolution_minutes: 60,
            ..MarketConfig::default()
        };
        let grid = TimeGrid::with_periods(Timestamp::from_hours(0), supply.len(), 60).unwrap();
        let n = supply.len();
        MarketState::new(&cfg, grid, supply, vec![0.0; n]).unwrap()
    }

    fn req(id: &str, e: i64, l: i64, q: f64, p: f64, c: f64) -> Request {
        Request::new(id, "h", Timestamp::from_hours(e), Timestamp::from_hours(l), q, p, p, c).unwrap()
    }

    #[test]
    fn volume_prefers_two_small_over_one_large_when_it_packs_more() {
        // 2 kW for 2 h; one 3 kWh block at 1.5 kW fits alone, two 2 kWh blocks at 2 kW fit together.
        let s = state(vec![2.0, 2.0]);
        let big = req("big", 0, 2, 3.0, 1.5, 10.0);
        let a = req("a", 0, 1, 2.0, 2.0, 1.0);
        let b = req("b", 1, 2, 2.0, 2.0, 1.0);
        let sol = volume_max_solve(&s, &[&big, &a, &b], &SolverOptions::default()).unwrap();
        assert!(sol.exact);
        assert_eq!(sol.objective, 4.0);
        assert!(!sol.outcomes[0].served && sol.outcomes[1].served && sol.outcomes[2].served);
        let rev = revenue_max_solve(&s, &[&big, &a, &b], &SolverOptions::default()).unwrap();
        assert_eq!(rev.objective, 10.0);
        assert!(rev.outcomes[0].served);
    }

    #[test]
    fn too_large_without_heuristic_is_an_error() {
        let s = state(vec![1.0; 4]);
        let rs: Vec<Request> = (0..5).map(|i| req(&format!("r{i}"), 0, 4, 1.0, 1.0, 1.0)).collect();
        let refs: Vec<&Request> = rs.iter().collect();
        let opts = SolverOptions {
            allow_heuristic: false,
            max_requests: 3,
            ..SolverOptions::default()
        };
        assert!(matches!(volume_max_solve(&s, &refs, &opts), Err(Error::TooLarge { .. })));
        let opts = SolverOptions {
            max_requests: 3,
            ..SolverOptions::default()
        };
        let sol = volume_max_solve(&s, &refs, &opts).unwrap();
        assert!(!sol.exact);
        assert_eq!(sol.objective, 4.0);
    }

    #[test]
    fn commit_books_exactly_the_served_set() {
        let mut s = state(vec![2.0, 2.0]);
        let a = req("a", 0, 2, 2.0, 1.0, 10.0);
        let b = req("b", 0, 2, 4.0, 2.0, 10.0);
        s.open_requests([&a, &b]);
        let sol = volume_max_solve(&s, &[&a, &b], &SolverOptions::default()).unwrap();
        commit_solution(&mut s, &[&a, &b], &sol).unwrap();
        assert_eq!(s.ledger().entries().len(), 1);
        assert_eq!(s.ledger().entries()[0].request_id, b.id);
        assert_eq!(s.open_count(), 0);
    }
}
