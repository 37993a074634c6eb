//! Offline allocations: greedy placement and exhaustive search.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::gain::GainTable;
use crate::geometry::Configuration;

/// Content placement across all caches.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    capacity: usize,
    configs: Vec<Configuration>,
    /// Contents of each station in placement order.
    lists: Vec<Vec<usize>>,
}

impl Allocation {
    pub fn empty(stations: usize, capacity: usize, num_contents: usize) -> Self {
        Allocation {
            capacity,
            configs: vec![Configuration::EMPTY; num_contents],
            lists: vec![Vec::new(); stations],
        }
    }

    /// Builds an allocation from per-station content lists.
    pub fn from_lists(lists: Vec<Vec<usize>>, capacity: usize, num_contents: usize) -> Result<Self> {
        let mut a = Allocation::empty(lists.len(), capacity, num_contents);
        for (b, list) in lists.into_iter().enumerate() {
            for f in list {
                a.place(f, b)?;
            }
        }
        Ok(a)
    }

    /// Adds a copy of `f` at `b`.
    pub fn place(&mut self, f: usize, b: usize) -> Result<()> {
        if f >= self.configs.len() || b >= self.lists.len() {
            return Err(Error::Contract(format!("no slot ({f}, {b})")));
        }
        if self.configs[f].contains(b) {
            return Err(Error::Contract(format!("content {f} already at station {b}")));
        }
        if self.lists[b].len() >= self.capacity {
            return Err(Error::Contract(format!("station {b} is full")));
        }
        self.configs[f] = self.configs[f].with(b);
        self.lists[b].push(f);
        Ok(())
    }

    pub fn stations(&self) -> usize {
        self.lists.len()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn num_contents(&self) -> usize {
        self.configs.len()
    }

    /// `x_f`.
    pub fn configuration(&self, f: usize) -> Configuration {
        self.configs[f]
    }

    pub fn configurations(&self) -> &[Configuration] {
        &self.configs
    }

    /// Contents of station `b` in placement order.
    pub fn station_list(&self, b: usize) -> &[usize] {
        &self.lists[b]
    }

    pub fn station_lists(&self) -> &[Vec<usize>] {
        &self.lists
    }

    /// Every cache holds exactly `capacity` contents.
    pub fn is_full(&self) -> bool {
        self.lists.iter().all(|l| l.len() == self.capacity)
    }

    /// `Σ_f G_f(x_f)`.
    pub fn gain(&self, table: &GainTable) -> f64 {
        self.configs
            .iter()
            .enumerate()
            .filter(|(_, x)| !x.is_empty())
            .map(|(f, x)| table.total(f, *x))
            .sum()
    }

    /// `(content, station)` pairs sorted by station then placement order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.lists
            .iter()
            .enumerate()
            .flat_map(|(b, l)| l.iter().map(move |&f| (f, b)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GreedyStrategy {
    /// Priority queue keyed by marginal gain, refreshing only the entries of
    /// the content that just changed.
    #[default]
    Lazy,
    /// Rescans every candidate at every step.
    Exhaustive,
}

#[derive(Debug, Clone)]
pub struct GreedyResult {
    pub allocation: Allocation,
    pub gain: f64,
    /// Marginal gain of every placement, in order.
    pub marginals: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    value: f64,
    f: usize,
    b: usize,
    version: u32,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    /// Larger value first, then smaller content, then smaller station.
    fn cmp(&self, other: &Self) -> Ordering {
        self.value
            .total_cmp(&other.value)
            .then(other.f.cmp(&self.f))
            .then(other.b.cmp(&self.b))
    }
}

/// Repeatedly places the copy with the largest marginal gain until every
/// cache holds `capacity` contents; ties go to the smaller content id, then
/// the smaller station id.
pub fn greedy_allocation(
    table: &GainTable,
    capacity: usize,
    strategy: GreedyStrategy,
) -> Result<GreedyResult> {
    let (stations, contents) = (table.stations(), table.num_contents());
    if capacity > contents {
        return Err(Error::config(
            "C",
            format!("capacity {capacity} exceeds the catalog size {contents}"),
        ));
    }
    let mut alloc = Allocation::empty(stations, capacity, contents);
    let mut marginals = Vec::with_capacity(stations * capacity);
    let mut total = 0.0;
    let steps = stations * capacity;
    match strategy {
        GreedyStrategy::Lazy => {
            let mut version = vec![0u32; contents];
            let mut heap = BinaryHeap::with_capacity(stations * contents);
            for f in 0..contents {
                for b in 0..stations {
                    heap.push(Candidate {
                        value: table.insert_marginal(f, b, Configuration::EMPTY),
                        f,
                        b,
                        version: 0,
                    });
                }
            }
            while marginals.len() < steps {
                let c = heap.pop().expect("enough candidates for an exact fill");
                if c.version != version[c.f] || alloc.station_list(c.b).len() >= capacity {
                    continue;
                }
                alloc.place(c.f, c.b)?;
                marginals.push(c.value);
                total += c.value;
                version[c.f] += 1;
                let x = alloc.configuration(c.f);
                for b in 0..stations {
                    if !x.contains(b) && alloc.station_list(b).len() < capacity {
                        heap.push(Candidate {
                            value: table.insert_marginal(c.f, b, x),
                            f: c.f,
                            b,
                            version: version[c.f],
                        });
                    }
                }
            }
        }
        GreedyStrategy::Exhaustive => {
            while marginals.len() < steps {
                let mut best: Option<Candidate> = None;
                for f in 0..contents {
                    let x = alloc.configuration(f);
                    for b in 0..stations {
                        if x.contains(b) || alloc.station_list(b).len() >= capacity {
                            continue;
                        }
                        let c = Candidate {
                            value: table.insert_marginal(f, b, x),
                            f,
                            b,
                            version: 0,
                        };
                        if best.is_none_or(|cur| c > cur) {
                            best = Some(c);
                        }
                    }
                }
                let c = best.expect("enough candidates for an exact fill");
                alloc.place(c.f, c.b)?;
                marginals.push(c.value);
                total += c.value;
            }
        }
    }
    Ok(GreedyResult {
        allocation: alloc,
        gain: total,
        marginals,
    })
}

/// Default enumeration budget for [`brute_force_allocation`].
pub const BRUTE_FORCE_BUDGET: f64 = 1e7;

#[derive(Debug, Clone)]
pub struct BruteForceResult {
    pub allocation: Allocation,
    pub gain: f64,
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Exact maximizer of `Σ_f G_f(x_f)` over exactly filled allocations.
/// Among equal optima the first in lexicographic order of the per-station
/// sorted content lists wins.
pub fn brute_force_allocation(
    table: &GainTable,
    capacity: usize,
    budget: f64,
) -> Result<BruteForceResult> {
    let (stations, contents) = (table.stations(), table.num_contents());
    if capacity > contents {
        return Err(Error::config(
            "C",
            format!("capacity {capacity} exceeds the catalog size {contents}"),
        ));
    }
    let needed = binomial(contents, capacity).powi(stations as i32);
    if needed > budget {
        return Err(Error::BudgetExceeded { needed, budget });
    }
    let subsets = k_subsets(contents, capacity);
    let mut state = vec![Configuration::EMPTY; contents];
    let mut choice = vec![0usize; stations];
    let mut best: Option<(f64, Vec<usize>)> = None;
    search(table, &subsets, 0, &mut state, &mut choice, &mut best);
    let (gain, picks) = best.expect("at least one allocation");
    let lists = picks.iter().map(|&i| subsets[i].clone()).collect();
    Ok(BruteForceResult {
        allocation: Allocation::from_lists(lists, capacity, contents)?,
        gain,
    })
}

fn search(
    table: &GainTable,
    subsets: &[Vec<usize>],
    b: usize,
    state: &mut Vec<Configuration>,
    choice: &mut Vec<usize>,
    best: &mut Option<(f64, Vec<usize>)>,
) {
    if b == choice.len() {
        let g: f64 = state
            .iter()
            .enumerate()
            .filter(|(_, x)| !x.is_empty())
            .map(|(f, x)| table.total(f, *x))
            .sum();
        let better = match best {
            None => true,
            Some((v, _)) => g > *v + 1e-12 * v.abs().max(1.0),
        };
        if better {
            *best = Some((g, choice.clone()));
        }
        return;
    }
    for (i, s) in subsets.iter().enumerate() {
        for &f in s {
            state[f] = state[f].with(b);
        }
        choice[b] = i;
        search(table, subsets, b + 1, state, choice, best);
        for &f in s {
            state[f] = state[f].without(b);
        }
    }
}

/// All `k`-subsets of `0..n` in lexicographic order.
fn k_subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..k).collect();
    loop {
        out.push(cur.clone());
        let Some(i) = (0..k).rev().find(|&i| cur[i] < n - k + i) else {
            return out;
        };
        cur[i] += 1;
        for j in i + 1..k {
            cur[j] = cur[j - 1] + 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gain::HitRateGain;
    use crate::traffic::Demand;

    fn one_class(stations: usize, coverage: Configuration, rates: &[f64]) -> Demand {
        let table = rates.iter().map(|r| vec![*r]).collect();
        Demand::from_table(stations, vec![coverage], table).unwrap()
    }

    #[test]
    fn subsets_enumerated_in_order() {
        assert_eq!(
            k_subsets(4, 2),
            vec![vec![0, 1], vec![0, 2], vec![0, 3], vec![1, 2], vec![1, 3], vec![2, 3]]
        );
        assert_eq!(k_subsets(3, 0), vec![Vec::<usize>::new()]);
    }

    #[test]
    fn single_cache_takes_most_popular() {
        let rates = crate::traffic::zipf_popularity(10, 0.9);
        let d = one_class(1, Configuration::single(0), &rates);
        let t = GainTable::new(&HitRateGain, &d);
        let g = greedy_allocation(&t, 3, GreedyStrategy::Lazy).unwrap();
        assert_eq!(g.allocation.station_list(0), &[0, 1, 2]);
        let bf = brute_force_allocation(&t, 3, BRUTE_FORCE_BUDGET).unwrap();
        assert!((bf.gain - g.gain).abs() < 1e-12);
    }

    #[test]
    fn overlapping_pair_splits_contents() {
        let d = one_class(2, Configuration::from_mask(0b11), &[0.7, 0.3]);
        let t = GainTable::new(&HitRateGain, &d);
        let g = greedy_allocation(&t, 1, GreedyStrategy::Lazy).unwrap();
        assert_eq!(g.allocation.configuration(0), Configuration::single(0));
        assert_eq!(g.allocation.configuration(1), Configuration::single(1));
        assert!((g.gain - 1.0).abs() < 1e-12);
        let bf = brute_force_allocation(&t, 1, BRUTE_FORCE_BUDGET).unwrap();
        assert!((bf.gain - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_slot_picks_popular_content() {
        let d = one_class(1, Configuration::single(0), &[0.9, 0.1]);
        let t = GainTable::new(&HitRateGain, &d);
        let bf = brute_force_allocation(&t, 1, BRUTE_FORCE_BUDGET).unwrap();
        assert_eq!(bf.allocation.station_list(0), &[0]);
        assert!((bf.gain - 0.9).abs() < 1e-15);
    }

    #[test]
    fn zero_gain_slots_filled_in_id_order() {
        let d = one_class(2, Configuration::single(0), &[1.0, 0.5, 0.2]);
        let t = GainTable::new(&HitRateGain, &d);
        let g = greedy_allocation(&t, 2, GreedyStrategy::Lazy).unwrap();
        assert!(g.allocation.is_full());
        assert_eq!(g.allocation.station_list(1), &[0, 1]);
    }

    #[test]
    fn refuses_oversized_capacity_and_budget() {
        let d = one_class(1, Configuration::single(0), &[1.0, 0.5]);
        let t = GainTable::new(&HitRateGain, &d);
        assert!(greedy_allocation(&t, 3, GreedyStrategy::Lazy).is_err());
        let d = one_class(3, Configuration::from_mask(0b111), &vec![1.0; 40]);
        let t = GainTable::new(&HitRateGain, &d);
        assert!(matches!(
            brute_force_allocation(&t, 5, BRUTE_FORCE_BUDGET),
            Err(Error::BudgetExceeded { .. })
        ));
    }
}
