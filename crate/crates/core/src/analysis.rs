//! Characteristic-time fixed points, per-content configuration chains and
//! their small-`q` behavior: resistances, in-trees, the potential `φ`,
//! stochastically stable states and optimality checks.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gain::{GainTable, Normalizers, INSERT_FLOOR};
use crate::geometry::Configuration;

/// Rate at which a copy with aggregate marginal `delta_g` leaves a cache
/// with characteristic time `tc`: `β ΔG / (exp(β ΔG T_c) − 1)`, and `1/T_c`
/// at `ΔG = 0`.
pub fn sojourn_rate(delta_g: f64, beta: f64, tc: f64) -> f64 {
    debug_assert!(tc > 0.0 && beta > 0.0 && delta_g >= 0.0);
    let x = beta * delta_g * tc;
    if x < 1e-300 {
        1.0 / tc
    } else {
        x / x.exp_m1() / tc
    }
}

/// Characteristic times and the capacity residual they leave.
#[derive(Debug, Clone, PartialEq)]
pub struct CtaSolution {
    pub tc: Vec<f64>,
    /// Largest `|occupancy − C|` over stations.
    pub residual: f64,
    pub iterations: usize,
}

/// Timer semantics of a single cache.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CtaPolicy {
    Lru,
    Qlru { q: f64 },
    Fifo,
}

impl CtaPolicy {
    /// Occupancy (and hit probability) of a content requested at `rate`.
    pub fn occupancy(self, rate: f64, tc: f64) -> f64 {
        match self {
            CtaPolicy::Lru => -(-rate * tc).exp_m1(),
            CtaPolicy::Qlru { q } => {
                let miss = (-rate * tc).exp();
                let stay = -(-rate * tc).exp_m1();
                q * stay / (miss + q * stay)
            }
            CtaPolicy::Fifo => rate * tc / (1.0 + rate * tc),
        }
    }
}

/// Solves `occupancy(T) = capacity` for a nondecreasing `occupancy` with
/// `occupancy(0) = 0` by bracketing and bisection.
pub fn solve_characteristic_time<F: Fn(f64) -> f64>(
    occupancy: F,
    capacity: f64,
    scale: f64,
) -> Result<(f64, f64)> {
    let tol = 1e-9 * capacity;
    let mut hi = scale;
    let mut grow = 0;
    while occupancy(hi) < capacity {
        hi *= 2.0;
        grow += 1;
        if grow > 2000 || !hi.is_finite() {
            return Err(Error::NoSolution(format!(
                "occupancy stays below {capacity} for every characteristic time"
            )));
        }
    }
    let mut lo = 0.0;
    let mut best = (hi, occupancy(hi) - capacity);
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let r = occupancy(mid) - capacity;
        if r.abs() < best.1.abs() {
            best = (mid, r);
        }
        if r.abs() < tol {
            break;
        }
        if r < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((best.0, best.1.abs()))
}

/// Characteristic time of one cache of size `capacity` fed by `rates`.
pub fn solve_tc_single(policy: CtaPolicy, rates: &[f64], capacity: f64) -> Result<CtaSolution> {
    let active = rates.iter().filter(|r| **r > 0.0).count();
    if capacity >= active as f64 {
        return Err(Error::NoSolution(format!(
            "capacity {capacity} holds all {active} requested contents"
        )));
    }
    if capacity <= 0.0 {
        return Err(Error::config("C", "capacity must be positive"));
    }
    let total: f64 = rates.iter().sum();
    let scale = capacity / total;
    let (tc, residual) = solve_characteristic_time(
        |t| rates.iter().map(|&r| policy.occupancy(r, t)).sum(),
        capacity,
        scale,
    )?;
    Ok(CtaSolution {
        tc: vec![tc],
        residual,
        iterations: 1,
    })
}

/// Request-weighted hit probability of one cache under the CTA.
pub fn cta_hit_probability(policy: CtaPolicy, rates: &[f64], tc: f64) -> f64 {
    let total: f64 = rates.iter().sum();
    rates
        .iter()
        .map(|&r| r * policy.occupancy(r, tc))
        .sum::<f64>()
        / total
}

/// Parameters of the per-content configuration chains.
#[derive(Debug, Clone, PartialEq)]
pub struct EaParams {
    pub q: f64,
    pub gamma: Vec<f64>,
    pub beta: f64,
    pub delta: f64,
    pub tc: Vec<f64>,
}

impl EaParams {
    /// Characteristic times following the small-`q` schedule
    /// `T_c^(b) = ln(1/q^(b)) / (β γ_b) = ln(1/q) / β`.
    pub fn asymptotic(q: f64, gamma: Vec<f64>, norm: Normalizers) -> Self {
        let tc = vec![(1.0 / q).ln() / norm.beta; gamma.len()];
        EaParams {
            q,
            gamma,
            beta: norm.beta,
            delta: norm.delta,
            tc,
        }
    }

    pub fn station_q(&self, b: usize) -> f64 {
        self.q.powf(self.gamma[b])
    }

    fn validate(&self, stations: usize) -> Result<()> {
        if self.gamma.len() != stations || self.tc.len() != stations {
            return Err(Error::config("gamma", "one exponent and one T_c per station"));
        }
        if !(self.q >= 0.0 && self.q <= 1.0) {
            return Err(Error::config("q", "must lie in [0, 1]"));
        }
        if self.tc.iter().any(|t| !(*t > 0.0)) || self.gamma.iter().any(|g| !(*g > 0.0)) {
            return Err(Error::config("tc", "characteristic times and exponents must be > 0"));
        }
        Ok(())
    }
}

/// Continuous-time chain of one content's configuration over `2^B` states.
#[derive(Debug, Clone, PartialEq)]
pub struct EaChain {
    pub content: usize,
    stations: usize,
    /// `rates[x * B + b]`: rate of flipping bit `b` in state `x`.
    rates: Vec<f64>,
}

impl EaChain {
    pub fn stations(&self) -> usize {
        self.stations
    }

    pub fn num_states(&self) -> usize {
        1 << self.stations
    }

    /// Rate of `x → x ⊕ e(b)` (if `b ∉ x`) or `x → x ⊖ e(b)` (if `b ∈ x`).
    pub fn flip_rate(&self, x: Configuration, b: usize) -> f64 {
        self.rates[x.mask() as usize * self.stations + b]
    }

    /// Rate of `x → y`; zero unless the two differ in one bit.
    pub fn rate(&self, x: Configuration, y: Configuration) -> f64 {
        let d = x.mask() ^ y.mask();
        if d.count_ones() == 1 {
            self.flip_rate(x, d.trailing_zeros() as usize)
        } else {
            0.0
        }
    }

    pub fn max_rate(&self) -> f64 {
        self.rates.iter().fold(0.0, |a, b| a.max(*b))
    }

    /// Copy with every rate multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> EaChain {
        EaChain {
            rates: self.rates.iter().map(|r| r * factor).collect(),
            ..self.clone()
        }
    }
}

/// Builds the chain of content `f`. Down-moves leave at the sojourn rate of
/// the removed copy; up-moves add one copy at the per-request insertion
/// expectation. Insertions whose aggregate marginal vanishes are floored at
/// [`INSERT_FLOOR`] per covered request so the chain stays irreducible.
pub fn build_ea_chain(f: usize, table: &GainTable, params: &EaParams) -> Result<EaChain> {
    let stations = table.stations();
    params.validate(stations)?;
    if stations >= 31 {
        return Err(Error::config("stations", "too many stations to enumerate states"));
    }
    let covered: Vec<f64> = (0..stations).map(|b| table.covered_rate(f, b)).collect();
    let qb: Vec<f64> = (0..stations).map(|b| params.station_q(b)).collect();
    let mut rates = vec![0.0; stations << stations];
    for x in Configuration::all(stations) {
        for b in 0..stations {
            let r = if x.contains(b) {
                let dg = table.marginal(f, b, x).max(0.0);
                sojourn_rate(dg, params.beta, params.tc[b])
            } else {
                let mut dg = table.insert_marginal(f, b, x).max(0.0);
                if dg == 0.0 {
                    dg = INSERT_FLOOR * covered[b];
                }
                qb[b] * params.delta * dg
            };
            rates[x.mask() as usize * stations + b] = r;
        }
    }
    Ok(EaChain {
        content: f,
        stations,
        rates,
    })
}

/// Stationary law of a chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Stationary {
    pub pi: Vec<f64>,
    /// `max_y |Σ_x π(x) Q(x, y)|`.
    pub residual: f64,
}

impl Stationary {
    pub fn prob(&self, x: Configuration) -> f64 {
        self.pi[x.mask() as usize]
    }

    /// Expected number of copies held by station `b`.
    pub fn occupancy(&self, b: usize) -> f64 {
        self.pi
            .iter()
            .enumerate()
            .filter(|(x, _)| x >> b & 1 == 1)
            .map(|(_, p)| p)
            .sum()
    }
}

fn check_irreducible(chain: &EaChain) -> Result<()> {
    let n = chain.num_states();
    let b = chain.stations;
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(x) = stack.pop() {
            for bit in 0..b {
                let y = x ^ (1 << bit);
                let r = if forward {
                    chain.rates[x * b + bit]
                } else {
                    chain.rates[y * b + bit]
                };
                if r > 0.0 && !seen[y] {
                    seen[y] = true;
                    stack.push(y);
                }
            }
        }
        seen
    };
    let (fwd, bwd) = (reach(true), reach(false));
    let cut: Vec<u64> = (0..n)
        .filter(|&x| !(fwd[x] && bwd[x]))
        .map(|x| x as u64)
        .collect();
    if cut.is_empty() {
        Ok(())
    } else {
        Err(Error::Reducible { states: cut })
    }
}

/// Solves `πQ = 0`, `Σπ = 1` by Grassmann–Taksar–Heyman elimination, which
/// avoids subtractions and keeps tiny probabilities accurate.
pub fn stationary(chain: &EaChain) -> Result<Stationary> {
    check_irreducible(chain)?;
    let n = chain.num_states();
    let bits = chain.stations;
    let mut p = vec![0.0; n * n];
    for x in 0..n {
        for b in 0..bits {
            p[x * n + (x ^ (1 << b))] = chain.rates[x * bits + b];
        }
    }
    for k in (1..n).rev() {
        let s: f64 = p[k * n..k * n + k].iter().sum();
        if s <= 0.0 {
            return Err(Error::Reducible {
                states: vec![k as u64],
            });
        }
        for i in 0..k {
            p[i * n + k] /= s;
        }
        for i in 0..k {
            let pik = p[i * n + k];
            if pik == 0.0 {
                continue;
            }
            for j in 0..k {
                p[i * n + j] += pik * p[k * n + j];
            }
        }
    }
    let mut pi = vec![0.0; n];
    pi[0] = 1.0;
    for k in 1..n {
        pi[k] = (0..k).map(|i| pi[i] * p[i * n + k]).sum();
        // State 0 may be far less likely than later states.
        if pi[k] > 1e150 {
            let scale = pi[k];
            pi[..=k].iter_mut().for_each(|v| *v /= scale);
        }
    }
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|v| *v /= total);

    let mut residual: f64 = 0.0;
    for y in 0..n {
        let mut flow = 0.0;
        for b in 0..bits {
            let x = y ^ (1 << b);
            flow += pi[x] * chain.rates[x * bits + b];
            flow -= pi[y] * chain.rates[y * bits + b];
        }
        residual = residual.max(flow.abs());
    }
    Ok(Stationary { pi, residual })
}

/// Stationary laws of every content's chain.
pub fn stationary_all(table: &GainTable, params: &EaParams) -> Result<Vec<Stationary>> {
    (0..table.num_contents())
        .into_par_iter()
        .map(|f| build_ea_chain(f, table, params).and_then(|c| stationary(&c)))
        .collect()
}

fn station_occupancy(laws: &[Stationary], b: usize) -> f64 {
    laws.iter().map(|s| s.occupancy(b)).sum()
}

/// Options for the network fixed point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Weight of the new estimate in each damped update.
    pub damping: f64,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        FixedPointOptions {
            tolerance: 1e-6,
            max_iterations: 200,
            damping: 0.7,
        }
    }
}

/// Characteristic times making every station's expected occupancy equal
/// `capacity`, with chains built at admission parameter `q` and exponents
/// `gamma`.
pub fn solve_tc_network(
    table: &GainTable,
    q: f64,
    gamma: &[f64],
    norm: Normalizers,
    capacity: f64,
    opts: FixedPointOptions,
) -> Result<CtaSolution> {
    let stations = table.stations();
    let mut params = EaParams {
        q,
        gamma: gamma.to_vec(),
        beta: norm.beta,
        delta: norm.delta,
        tc: vec![1.0; stations],
    };
    let tol = opts.tolerance * capacity;
    let total_rate: f64 = (0..table.num_contents())
        .map(|f| (0..stations).map(|b| table.covered_rate(f, b)).fold(0.0, f64::max))
        .sum();
    let scale = capacity / total_rate.max(f64::MIN_POSITIVE);
    for iteration in 1..=opts.max_iterations {
        for b in 0..stations {
            let (t, _) = solve_characteristic_time(
                |t| {
                    let mut p = params.clone();
                    p.tc[b] = t;
                    stationary_all(table, &p)
                        .map(|laws| station_occupancy(&laws, b))
                        .unwrap_or(f64::NAN)
                },
                capacity,
                scale,
            )?;
            params.tc[b] = (1.0 - opts.damping) * params.tc[b] + opts.damping * t;
        }
        let laws = stationary_all(table, &params)?;
        let residual = (0..stations)
            .map(|b| (station_occupancy(&laws, b) - capacity).abs())
            .fold(0.0, f64::max);
        if residual < tol {
            return Ok(CtaSolution {
                tc: params.tc,
                residual,
                iterations: iteration,
            });
        }
        if iteration == opts.max_iterations {
            return Err(Error::NonConvergence {
                iterations: iteration,
                residual,
            });
        }
    }
    unreachable!("loop returns")
}

/// Exponents `γ` for which the chains with asymptotic characteristic times
/// at admission parameter `q` fill every cache to `capacity` in
/// expectation. Returns the exponents and the capacity residual.
pub fn calibrate_gamma(
    table: &GainTable,
    q: f64,
    norm: Normalizers,
    capacity: f64,
    opts: FixedPointOptions,
) -> Result<(Vec<f64>, f64)> {
    let stations = table.stations();
    let mut params = EaParams::asymptotic(q, vec![1.0; stations], norm);
    let tol = opts.tolerance * capacity;
    let occ = |p: &EaParams, b: usize| stationary_all(table, p).map(|l| station_occupancy(&l, b));
    for _ in 0..opts.max_iterations {
        for b in 0..stations {
            // Occupancy falls as γ_b grows; bisect on ln γ_b, keeping
            // q^γ_b well above the smallest positive double.
            let ceiling = (600.0 / (1.0 / q).ln()).min(1e3);
            let (mut lo, mut hi) = ((1e-4f64).ln(), ceiling.ln());
            let mut p = params.clone();
            p.gamma[b] = lo.exp();
            if occ(&p, b)? < capacity {
                return Err(Error::NoSolution(format!(
                    "station {b} cannot reach occupancy {capacity} at q = {q}"
                )));
            }
            p.gamma[b] = hi.exp();
            if occ(&p, b)? > capacity {
                return Err(Error::NoSolution(format!(
                    "station {b} stays above occupancy {capacity} at q = {q}"
                )));
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                p.gamma[b] = mid.exp();
                let r = occ(&p, b)? - capacity;
                if r.abs() < 1e-3 * tol {
                    lo = mid;
                    hi = mid;
                    break;
                }
                if r > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo < 1e-15 {
                    break;
                }
            }
            let target = 0.5 * (lo + hi);
            let current = params.gamma[b].ln();
            params.gamma[b] = ((1.0 - opts.damping) * current + opts.damping * target).exp();
        }
        let laws = stationary_all(table, &params)?;
        let residual = (0..stations)
            .map(|b| (station_occupancy(&laws, b) - capacity).abs())
            .fold(0.0, f64::max);
        if residual < tol {
            return Ok((params.gamma, residual));
        }
    }
    let laws = stationary_all(table, &params)?;
    let residual = (0..stations)
        .map(|b| (station_occupancy(&laws, b) - capacity).abs())
        .fold(0.0, f64::max);
    Err(Error::NonConvergence {
        iterations: opts.max_iterations,
        residual,
    })
}

/// Directed graph with nonnegative edge resistances.
#[derive(Debug, Clone, PartialEq)]
pub struct ResistanceGraph {
    nodes: usize,
    edges: Vec<(usize, usize, f64)>,
}

/// Which upward moves the resistance graph contains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UpEdges {
    /// One added copy per move, as in the chain.
    #[default]
    SingleBit,
    /// Any ancestor, with resistance `γᵀ(y − x)`.
    AllAncestors,
}

impl ResistanceGraph {
    pub fn new(nodes: usize) -> Self {
        ResistanceGraph {
            nodes,
            edges: Vec::new(),
        }
    }

    /// Adds `from → to`; infinite resistances are not edges.
    pub fn add_edge(&mut self, from: usize, to: usize, resistance: f64) {
        assert!(from < self.nodes && to < self.nodes);
        assert!(resistance >= 0.0, "resistances are nonnegative");
        if from != to && resistance.is_finite() {
            self.edges.push((from, to, resistance));
        }
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    /// Finite resistance of `from → to`, if the edge exists.
    pub fn resistance(&self, from: usize, to: usize) -> Option<f64> {
        self.edges
            .iter()
            .filter(|e| e.0 == from && e.1 == to)
            .map(|e| e.2)
            .reduce(f64::min)
    }

    /// Resistance graph of content `f`: `x → x ⊕ e(b)` costs `γ_b`,
    /// `y → y ⊖ e(b)` costs `ΔG_f^(b)(y)`.
    pub fn for_content(f: usize, table: &GainTable, gamma: &[f64], up: UpEdges) -> Self {
        let stations = table.stations();
        let mut g = ResistanceGraph::new(1 << stations);
        for x in Configuration::all(stations) {
            for b in x.iter() {
                let dg = table.marginal(f, b, x).max(0.0);
                g.add_edge(x.mask() as usize, x.without(b).mask() as usize, dg);
            }
            match up {
                UpEdges::SingleBit => {
                    for b in (0..stations).filter(|&b| !x.contains(b)) {
                        g.add_edge(x.mask() as usize, x.with(b).mask() as usize, gamma[b]);
                    }
                }
                UpEdges::AllAncestors => {
                    for y in Configuration::all(stations) {
                        if y != x && x.is_subset_of(y) {
                            let r = y.difference(x).iter().map(|b| gamma[b]).sum();
                            g.add_edge(x.mask() as usize, y.mask() as usize, r);
                        }
                    }
                }
            }
        }
        g
    }
}

/// Outcome of a minimum in-tree search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InTree {
    /// Total resistance; infinite when some node cannot reach the root.
    pub resistance: f64,
    /// A node with no finite path to the root.
    pub unreachable: Option<usize>,
}

/// Minimum total resistance of a spanning in-tree directed toward `root`,
/// via Chu–Liu/Edmonds contraction on the reversed graph.
pub fn min_intree_resistance(graph: &ResistanceGraph, root: usize) -> InTree {
    let n = graph.nodes;
    assert!(root < n);
    // Nodes that can reach the root.
    let mut seen = vec![false; n];
    seen[root] = true;
    let mut stack = vec![root];
    while let Some(v) = stack.pop() {
        for &(u, w, _) in &graph.edges {
            if w == v && !seen[u] {
                seen[u] = true;
                stack.push(u);
            }
        }
    }
    if let Some(v) = seen.iter().position(|s| !s) {
        return InTree {
            resistance: f64::INFINITY,
            unreachable: Some(v),
        };
    }
    // Reversed edges: an out-arborescence from the root.
    let mut edges: Vec<(usize, usize, f64)> =
        graph.edges.iter().map(|&(u, v, w)| (v, u, w)).collect();
    let (mut n, mut root) = (n, root);
    let mut total = 0.0;
    loop {
        let mut best_in = vec![f64::INFINITY; n];
        let mut pred = vec![usize::MAX; n];
        for &(u, v, w) in &edges {
            if u != v && w < best_in[v] {
                best_in[v] = w;
                pred[v] = u;
            }
        }
        best_in[root] = 0.0;
        let mut id = vec![usize::MAX; n];
        let mut mark = vec![usize::MAX; n];
        let mut comps = 0;
        for v in 0..n {
            total += best_in[v];
            let mut u = v;
            while mark[u] != v && id[u] == usize::MAX && u != root {
                mark[u] = v;
                u = pred[u];
            }
            if u != root && id[u] == usize::MAX {
                let mut x = pred[u];
                while x != u {
                    id[x] = comps;
                    x = pred[x];
                }
                id[u] = comps;
                comps += 1;
            }
        }
        if comps == 0 {
            break;
        }
        for v in id.iter_mut() {
            if *v == usize::MAX {
                *v = comps;
                comps += 1;
            }
        }
        edges = edges
            .into_iter()
            .filter(|&(u, v, _)| id[u] != id[v])
            .map(|(u, v, w)| (id[u], id[v], w - best_in[v]))
            .collect();
        n = comps;
        root = id[root];
    }
    InTree {
        resistance: total,
        unreachable: None,
    }
}

/// `r(x)` for every node.
pub fn state_resistances(graph: &ResistanceGraph) -> Vec<f64> {
    (0..graph.nodes)
        .map(|x| min_intree_resistance(graph, x).resistance)
        .collect()
}

/// `φ_f(x) = G_f(x) − γᵀx`.
pub fn phi(f: usize, x: Configuration, gamma: &[f64], table: &GainTable) -> f64 {
    table.total(f, x) - x.iter().map(|b| gamma[b]).sum::<f64>()
}

/// `φ_f` over all `2^B` states.
pub fn phi_all(f: usize, gamma: &[f64], table: &GainTable) -> Vec<f64> {
    Configuration::all(table.stations())
        .map(|x| phi(f, x, gamma, table))
        .collect()
}

fn tie_tolerance(values: &[f64]) -> f64 {
    1e-9 * values.iter().fold(1.0f64, |m, v| m.max(v.abs()))
}

/// Global maximizers of `φ_f`.
pub fn stable_states(f: usize, gamma: &[f64], table: &GainTable) -> Vec<Configuration> {
    let p = phi_all(f, gamma, table);
    let best = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tol = tie_tolerance(&p);
    p.iter()
        .enumerate()
        .filter(|(_, v)| **v >= best - tol)
        .map(|(x, _)| Configuration::from_mask(x as u64))
        .collect()
}

/// Outcome of the balance-equation check.
#[derive(Debug, Clone, PartialEq)]
pub struct BalanceReport {
    pub holds: bool,
    /// Largest violation found over pairs and subsets.
    pub worst: f64,
    /// Parent-child pair with the largest pairwise violation.
    pub worst_pair: Option<(Configuration, Configuration)>,
    /// A state subset (as a bitmask over states) whose aggregate equation
    /// fails, if any.
    pub violated_subset: Option<u64>,
    pub subsets_checked: usize,
}

/// Checks that `potential` (by default `φ_f`) satisfies the pairwise
/// balance identity on every parent-child pair and the aggregate balance
/// equation on every proper nonempty subset of states.
pub fn check_balance(
    f: usize,
    gamma: &[f64],
    table: &GainTable,
    potential: Option<&[f64]>,
) -> Result<BalanceReport> {
    let stations = table.stations();
    if stations > 4 {
        return Err(Error::config("stations", "subset enumeration needs B <= 4"));
    }
    let own;
    let nu = match potential {
        Some(p) => p,
        None => {
            own = phi_all(f, gamma, table);
            &own
        }
    };
    let n = 1usize << stations;
    let graph = ResistanceGraph::for_content(f, table, gamma, UpEdges::SingleBit);
    let mut r = vec![f64::INFINITY; n * n];
    for &(u, v, w) in graph.edges() {
        r[u * n + v] = r[u * n + v].min(w);
    }
    let tol = tie_tolerance(nu);

    let mut worst: f64 = 0.0;
    let mut worst_pair = None;
    for x in Configuration::all(stations) {
        for b in (0..stations).filter(|&b| !x.contains(b)) {
            let y = x.with(b);
            let (i, j) = (x.mask() as usize, y.mask() as usize);
            let gap = ((nu[i] - r[i * n + j]) - (nu[j] - r[j * n + i])).abs();
            if gap > worst {
                worst = gap;
                worst_pair = Some((x, y));
            }
        }
    }

    let mut violated_subset = None;
    let mut subsets_checked = 0;
    for a in 1u64..(1u64 << n) - 1 {
        subsets_checked += 1;
        let (mut out, mut back) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for &(u, v, _) in graph.edges() {
            let (iu, iv) = (a >> u & 1 == 1, a >> v & 1 == 1);
            if iu && !iv {
                out = out.max(nu[u] - r[u * n + v]);
                back = back.max(nu[v] - r[v * n + u]);
            }
        }
        let gap = (out - back).abs();
        if gap > tol && violated_subset.is_none() {
            violated_subset = Some(a);
        }
        worst = worst.max(gap);
    }
    Ok(BalanceReport {
        holds: worst <= tol,
        worst,
        worst_pair: if worst <= tol { None } else { worst_pair },
        violated_subset,
        subsets_checked,
    })
}

/// Optimality report for a family of per-content distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct KktReport {
    /// Largest `|Σ_f Σ_x x^(b) π_f(x) − C|` over stations.
    pub capacity_residual: f64,
    /// Largest `|Σ_x π_f(x) − 1|` over contents.
    pub mass_residual: f64,
    pub feasible: bool,
    /// Largest mass any content puts on states with positive reduced cost
    /// `max φ_f − φ_f(x)`.
    pub unstable_mass: f64,
    /// `Σ_f Σ_x π_f(x) (max φ_f − φ_f(x))`: zero exactly when the laws
    /// only charge states where the Lagrangian gradient vanishes.
    pub complementarity_gap: f64,
    pub gradient_ok: bool,
    /// `Σ_f Σ_x π_f(x) G_f(x)`.
    pub objective: f64,
    /// Best exactly filled integer allocation.
    pub integer_optimum: f64,
    /// Dual bound `Σ_f max φ_f + C Σ_b γ_b`.
    pub dual_bound: f64,
    pub dominance_ok: bool,
}

impl KktReport {
    pub fn passed(&self) -> bool {
        self.feasible && self.gradient_ok && self.dominance_ok
    }
}

/// Checks feasibility, the sign of the Lagrangian gradient with multipliers
/// `χ = γ` and `ζ_f = max φ_f`, and that the relaxed objective reaches the
/// integer optimum. The gradient condition holds when the mass-weighted
/// reduced cost is within `tolerance` of the objective; at positive `q`
/// near-tied states keep mass, so exact complementary slackness is only
/// reported. `tolerance` is relative for the capacity, gradient and
/// objective checks and absolute for probabilities.
pub fn check_kkt(
    laws: &[Vec<f64>],
    gamma: &[f64],
    table: &GainTable,
    capacity: usize,
    integer_optimum: f64,
    tolerance: f64,
) -> Result<KktReport> {
    let stations = table.stations();
    let n = 1usize << stations;
    if laws.len() != table.num_contents() || laws.iter().any(|l| l.len() != n) {
        return Err(Error::config("pi", "one distribution over 2^B states per content"));
    }
    let c = capacity as f64;
    let capacity_residual = (0..stations)
        .map(|b| {
            let occ: f64 = laws
                .iter()
                .flat_map(|l| l.iter().enumerate().filter(|(x, _)| x >> b & 1 == 1))
                .map(|(_, p)| p)
                .sum();
            (occ - c).abs()
        })
        .fold(0.0, f64::max);
    let mass_residual = laws
        .iter()
        .map(|l| (l.iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    let negative = laws.iter().flatten().any(|p| *p < -tolerance);
    let feasible = capacity_residual <= tolerance * c && mass_residual <= tolerance && !negative;

    let mut unstable_mass: f64 = 0.0;
    let mut complementarity_gap = 0.0;
    let mut objective = 0.0;
    let mut dual_bound = c * gamma.iter().sum::<f64>();
    for (f, law) in laws.iter().enumerate() {
        let p = phi_all(f, gamma, table);
        let best = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let tol = tie_tolerance(&p);
        dual_bound += best;
        let leak: f64 = law
            .iter()
            .zip(&p)
            .filter(|(_, v)| best - **v > tol)
            .map(|(m, _)| m)
            .sum();
        unstable_mass = unstable_mass.max(leak);
        complementarity_gap += law.iter().zip(&p).map(|(m, v)| m * (best - v)).sum::<f64>();
        objective += law
            .iter()
            .enumerate()
            .map(|(x, m)| m * table.total(f, Configuration::from_mask(x as u64)))
            .sum::<f64>();
    }
    let gradient_ok = complementarity_gap <= tolerance * objective.abs();
    let dominance_ok = objective >= integer_optimum * (1.0 - tolerance);
    Ok(KktReport {
        capacity_residual,
        mass_residual,
        feasible,
        unstable_mass,
        complementarity_gap,
        gradient_ok,
        objective,
        integer_optimum,
        dual_bound,
        dominance_ok,
    })
}

/// Least-squares slope of `y` against `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Slope of `ln π_q(x)` against `ln q` for every state, from stationary
/// laws computed on `qs`.
pub fn exponent_fits(qs: &[f64], laws: &[Stationary]) -> Vec<f64> {
    assert_eq!(qs.len(), laws.len());
    let lx: Vec<f64> = qs.iter().map(|q| q.ln()).collect();
    let states = laws[0].pi.len();
    (0..states)
        .map(|x| {
            let ly: Vec<f64> = laws.iter().map(|l| l.pi[x].ln()).collect();
            fit_slope(&lx, &ly)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gain::HitRateGain;
    use crate::traffic::Demand;

    fn single_user(stations: usize, coverage: u64, rates: &[f64]) -> Demand {
        Demand::from_table(
            stations,
            vec![Configuration::from_mask(coverage)],
            rates.iter().map(|r| vec![*r]).collect(),
        )
        .unwrap()
    }

    const UNIT: Normalizers = Normalizers {
        beta: 1.0,
        delta: 1.0,
    };

    #[test]
    fn sojourn_rate_limits() {
        assert_eq!(sojourn_rate(0.0, 1.0, 4.0), 0.25);
        let (beta, dg) = (2.0, 3.0);
        let tc = 2f64.ln() / (beta * dg);
        assert!((sojourn_rate(dg, beta, tc) - beta * dg).abs() < 1e-12);
        let mut last = f64::INFINITY;
        for i in 0..50 {
            let v = sojourn_rate(i as f64 * 0.1, 1.0, 3.0);
            assert!(v < last);
            last = v;
        }
        assert!((sojourn_rate(1e-12, 1.0, 3.0) - 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn lru_equal_rates_closed_form() {
        let rates = vec![0.5; 40];
        let s = solve_tc_single(CtaPolicy::Lru, &rates, 10.0).unwrap();
        let want = -(1.0 - 10.0 / 40.0f64).ln() / 0.5;
        assert!((s.tc[0] - want).abs() / want < 1e-8);
        assert!(s.residual < 1e-8);
        assert!(solve_tc_single(CtaPolicy::Lru, &rates, 40.0).is_err());
    }

    #[test]
    fn two_state_chain_odds() {
        let d = single_user(1, 1, &[2.0]);
        let t = GainTable::new(&HitRateGain, &d);
        let p = EaParams {
            q: 0.3,
            gamma: vec![1.0],
            beta: 1.0,
            delta: 1.0,
            tc: vec![0.7],
        };
        let c = build_ea_chain(0, &t, &p).unwrap();
        let up = c.rate(Configuration::EMPTY, Configuration::single(0));
        let down = c.rate(Configuration::single(0), Configuration::EMPTY);
        assert!((up - 0.6).abs() < 1e-15);
        assert!((down - sojourn_rate(2.0, 1.0, 0.7)).abs() < 1e-15);
        let s = stationary(&c).unwrap();
        assert!((s.pi[1] / s.pi[0] - up / down).abs() < 1e-12);
        // Matches the single-cache qLRU occupancy.
        let occ = CtaPolicy::Qlru { q: 0.3 }.occupancy(2.0, 0.7);
        assert!((s.pi[1] - occ).abs() < 1e-12);
    }

    #[test]
    fn zero_q_is_reducible() {
        let d = single_user(2, 0b11, &[1.0]);
        let t = GainTable::new(&HitRateGain, &d);
        let p = EaParams {
            q: 0.0,
            gamma: vec![1.0, 1.0],
            beta: 1.0,
            delta: 1.0,
            tc: vec![1.0, 1.0],
        };
        let c = build_ea_chain(0, &t, &p).unwrap();
        for x in Configuration::all(2) {
            for b in 0..2 {
                if !x.contains(b) {
                    assert_eq!(c.flip_rate(x, b), 0.0);
                }
            }
        }
        assert!(matches!(stationary(&c), Err(Error::Reducible { .. })));
    }

    #[test]
    fn halving_q_halves_up_rates() {
        let d = single_user(2, 0b11, &[1.5]);
        let t = GainTable::new(&HitRateGain, &d);
        let a = build_ea_chain(0, &t, &EaParams::asymptotic(0.2, vec![1.0; 2], UNIT)).unwrap();
        let mut p = EaParams::asymptotic(0.2, vec![1.0; 2], UNIT);
        p.q = 0.1;
        let b = build_ea_chain(0, &t, &p).unwrap();
        for x in Configuration::all(2) {
            for bit in (0..2).filter(|&bit| !x.contains(bit)) {
                assert!((b.flip_rate(x, bit) - 0.5 * a.flip_rate(x, bit)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn stationary_invariant_to_rescaling() {
        let d = single_user(3, 0b111, &[1.0]);
        let t = GainTable::new(&HitRateGain, &d);
        let c = build_ea_chain(0, &t, &EaParams::asymptotic(0.05, vec![0.4; 3], UNIT)).unwrap();
        let a = stationary(&c).unwrap();
        let b = stationary(&c.scaled(37.0)).unwrap();
        assert!((a.pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(a.residual < 1e-12 * c.max_rate());
        for (x, y) in a.pi.iter().zip(&b.pi) {
            assert!((x - y).abs() < 1e-12 * x.max(1e-300) + 1e-15);
        }
    }

    #[test]
    fn intree_small_cases() {
        let g = ResistanceGraph::new(1);
        assert_eq!(min_intree_resistance(&g, 0).resistance, 0.0);
        let mut g = ResistanceGraph::new(3);
        g.add_edge(2, 1, 1.0);
        g.add_edge(1, 0, 1.0);
        g.add_edge(0, 1, 5.0);
        assert_eq!(min_intree_resistance(&g, 0).resistance, 2.0);
        let r = min_intree_resistance(&g, 2);
        assert_eq!(r.unreachable, Some(0));
        assert!(r.resistance.is_infinite());
    }

    #[test]
    fn intree_with_cycle_contraction() {
        // Cheapest choices form the cycle 1 <-> 2; breaking it costs extra.
        let mut g = ResistanceGraph::new(3);
        g.add_edge(1, 2, 1.0);
        g.add_edge(2, 1, 1.0);
        g.add_edge(1, 0, 10.0);
        g.add_edge(2, 0, 4.0);
        assert_eq!(min_intree_resistance(&g, 0).resistance, 5.0);
    }

    #[test]
    fn phi_and_stable_states() {
        let d = single_user(1, 1, &[2.0]);
        let t = GainTable::new(&HitRateGain, &d);
        assert_eq!(phi(0, Configuration::EMPTY, &[1.0], &t), 0.0);
        assert_eq!(phi(0, Configuration::single(0), &[1.0], &t), 1.0);
        assert_eq!(stable_states(0, &[1.0], &t), vec![Configuration::single(0)]);
        let zero = single_user(2, 0b11, &[0.0]);
        let t = GainTable::new(&HitRateGain, &zero);
        assert_eq!(stable_states(0, &[1.0, 1.0], &t), vec![Configuration::EMPTY]);
    }

    #[test]
    fn balance_holds_and_detects_perturbation() {
        let d = single_user(1, 1, &[0.8]);
        let t = GainTable::new(&HitRateGain, &d);
        assert!(check_balance(0, &[1.0], &t, None).unwrap().holds);

        let d = Demand::from_table(
            3,
            vec![Configuration::from_mask(0b011), Configuration::from_mask(0b110)],
            vec![vec![1.3, 0.4]],
        )
        .unwrap();
        let t = GainTable::new(&HitRateGain, &d);
        let gamma = [0.5, 0.7, 0.9];
        let rep = check_balance(0, &gamma, &t, None).unwrap();
        assert!(rep.holds, "{rep:?}");
        assert_eq!(rep.subsets_checked, 254);
        let mut p = phi_all(0, &gamma, &t);
        p[5] += 0.1;
        let rep = check_balance(0, &gamma, &t, Some(&p)).unwrap();
        assert!(!rep.holds);
        let (a, b) = rep.worst_pair.unwrap();
        assert!(a.mask() == 5 || b.mask() == 5);
    }

    #[test]
    fn resistance_differences_follow_phi() {
        let d = Demand::from_table(
            2,
            vec![Configuration::from_mask(0b01), Configuration::from_mask(0b11)],
            vec![vec![1.0, 2.5]],
        )
        .unwrap();
        let t = GainTable::new(&HitRateGain, &d);
        let gamma = [0.8, 1.1];
        let r = state_resistances(&ResistanceGraph::for_content(0, &t, &gamma, UpEdges::SingleBit));
        let p = phi_all(0, &gamma, &t);
        let rmin = r.iter().copied().fold(f64::INFINITY, f64::min);
        let pmax = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for x in 0..4 {
            assert!(((r[x] - rmin) - (pmax - p[x])).abs() < 1e-12);
        }
    }

    #[test]
    fn slope_fit_exact_line() {
        let x = [1.0, 2.0, 3.0];
        let y = [2.0, 4.5, 7.0];
        assert!((fit_slope(&x, &y) - 2.5).abs() < 1e-12);
    }
}
