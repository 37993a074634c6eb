//! Quick invariant suite run by `edgecache validate`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analysis::{
    check_balance, cta_hit_probability, min_intree_resistance, solve_tc_single, CtaPolicy,
    ResistanceGraph,
};
use crate::gain::{GainTable, HitRateGain};
use crate::geometry::{BaseStation, ChannelModel, Configuration, Point, Topology};
use crate::placement::{brute_force_allocation, greedy_allocation, GreedyStrategy, BRUTE_FORCE_BUDGET};
use crate::policies::{Network, PolicyKind, PolicySpec};
use crate::traffic::{zipf_popularity, Catalog, Demand, RequestSource};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

pub fn run_all() -> Vec<Check> {
    vec![
        zipf_normalized(),
        berlin_coverage(),
        qlru_unit_q_is_lru(),
        single_cache_delta_is_qlru(),
        cache_capacity_respected(),
        lru_matches_cta(),
        greedy_half_optimal(),
        intree_matches_enumeration(),
        balance_equations(),
    ]
}

fn zipf_normalized() -> Check {
    let worst = [0.0, 0.8, 1.0, 1.2, 2.0]
        .iter()
        .map(|&a| (zipf_popularity(1000, a).iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    check("zipf_normalized", worst < 1e-12, format!("max |sum - 1| = {worst:.1e}"))
}

fn berlin_coverage() -> Check {
    let t = Topology::berlin();
    let (mut n, mut total) = (0u64, 0u64);
    for p in t.grid_points(200) {
        let k = t.coverage_set(&p).weight();
        if k > 0 {
            n += 1;
            total += u64::from(k);
        }
    }
    let mean = total as f64 / n as f64;
    check(
        "berlin_coverage",
        (mean - 5.9).abs() <= 0.2,
        format!("mean stations in range of a covered point = {mean:.3}"),
    )
}

fn lone(stations: usize) -> Topology {
    let s = (0..stations)
        .map(|id| BaseStation {
            id,
            position: Point::new(0.0, 0.0),
            range: 10.0,
        })
        .collect();
    Topology::new(s, None).expect("valid")
}

fn same_trace(a: PolicySpec, b: PolicySpec, seed: u64) -> bool {
    let t = lone(1);
    let cat = Catalog::zipf(200, 0.9, 1.0).expect("valid");
    let gain = HitRateGain;
    let ch = ChannelModel::default();
    let mut na = Network::new(&t, a, &gain, ch, 20, 200, seed).expect("valid");
    let mut nb = Network::new(&t, b, &gain, ch, 20, 200, seed).expect("valid");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let origin = Point::new(0.0, 0.0);
    for _ in 0..20_000 {
        let f = cat.sample(&mut rng);
        na.process_at(&origin, f);
        nb.process_at(&origin, f);
        if na.caches()[0] != nb.caches()[0] {
            return false;
        }
    }
    true
}

fn qlru_unit_q_is_lru() -> Check {
    let ok = same_trace(
        PolicySpec::new(PolicyKind::Qlru, 1.0),
        PolicySpec::new(PolicyKind::Lru, 1.0),
        5,
    );
    check("qlru_unit_q_is_lru", ok, "20000-request trace, cache states compared".into())
}

fn single_cache_delta_is_qlru() -> Check {
    let ok = [0.5, 0.05].iter().all(|&q| {
        same_trace(
            PolicySpec::new(PolicyKind::QlruDelta, q),
            PolicySpec::new(PolicyKind::Qlru, q),
            11,
        )
    });
    check(
        "single_cache_delta_is_qlru",
        ok,
        "hit-rate gain, q in {0.5, 0.05}".into(),
    )
}

fn cache_capacity_respected() -> Check {
    let stations = (0..4)
        .map(|id| BaseStation {
            id,
            position: Point::new(10.0 * id as f64, 0.0),
            range: 18.0,
        })
        .collect();
    let t = Topology::new(stations, None).expect("valid");
    let cat = Catalog::zipf(300, 0.8, 1.0).expect("valid");
    let gain = HitRateGain;
    let capacity = 15;
    let mut worst = 0usize;
    let mut ok = true;
    for kind in [PolicyKind::QlruDelta, PolicyKind::Qlru, PolicyKind::Fifo, PolicyKind::LruAll] {
        let mut net =
            Network::new(&t, PolicySpec::new(kind, 0.3), &gain, ChannelModel::default(), capacity, 300, 2)
                .expect("valid");
        let mut gen = crate::traffic::RequestGenerator::new(&t, &cat, &RequestSource::Spatial { density: 1.0 }, 2)
            .expect("valid");
        for _ in 0..5000 {
            net.process_request(&gen.next_request());
            let total: usize = net.caches().iter().map(|c| c.len()).sum();
            worst = worst.max(total);
            ok &= net.caches().iter().all(|c| c.len() <= capacity);
            ok &= net.copy_counts().iter().all(|&k| usize::from(k) <= t.len());
        }
    }
    check(
        "cache_capacity_respected",
        ok && worst <= t.len() * capacity,
        format!("largest total occupancy {worst} of {}", t.len() * capacity),
    )
}

fn lru_matches_cta() -> Check {
    let t = lone(1);
    let cat = Catalog::zipf(500, 0.8, 1.0).expect("valid");
    let rates: Vec<f64> = (0..500).map(|f| cat.rate(f)).collect();
    let capacity = 50;
    let predicted = solve_tc_single(CtaPolicy::Lru, &rates, capacity as f64)
        .map(|s| cta_hit_probability(CtaPolicy::Lru, &rates, s.tc[0]))
        .unwrap_or(f64::NAN);
    let gain = HitRateGain;
    let mut net = Network::new(&t, PolicySpec::new(PolicyKind::Lru, 1.0), &gain, ChannelModel::default(), capacity, 500, 3)
        .expect("valid");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let origin = Point::new(0.0, 0.0);
    let mut hits = 0u64;
    let n = 200_000u64;
    for i in 0..2 * n {
        let out = net.process_at(&origin, cat.sample(&mut rng));
        if i >= n {
            hits += u64::from(out.served);
        }
    }
    let measured = hits as f64 / n as f64;
    let rel = (measured - predicted).abs() / predicted;
    check(
        "lru_matches_cta",
        rel <= 0.02,
        format!("simulated {measured:.4}, approximation {predicted:.4}"),
    )
}

/// Random demand over `stations` stations with a handful of user classes.
fn random_demand(rng: &mut ChaCha8Rng, stations: usize, contents: usize) -> Demand {
    let n_classes = rng.random_range(1..=4);
    let classes: Vec<Configuration> = (0..n_classes)
        .map(|_| Configuration::from_mask(rng.random_range(1..1u64 << stations)))
        .collect();
    let table = (0..contents)
        .map(|_| (0..n_classes).map(|_| rng.random::<f64>()).collect())
        .collect();
    Demand::from_table(stations, classes, table).expect("valid")
}

fn greedy_half_optimal() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst: f64 = 1.0;
    for _ in 0..20 {
        let stations = rng.random_range(1..=3);
        let contents = rng.random_range(2..=5);
        let capacity = rng.random_range(1..contents);
        let d = random_demand(&mut rng, stations, contents);
        let table = GainTable::new(&HitRateGain, &d);
        let g = greedy_allocation(&table, capacity, GreedyStrategy::Lazy).expect("fits");
        let opt = brute_force_allocation(&table, capacity, BRUTE_FORCE_BUDGET).expect("small");
        if opt.gain > 0.0 {
            worst = worst.min(g.gain / opt.gain);
        }
    }
    check("greedy_half_optimal", worst >= 0.5, format!("worst greedy/optimum ratio {worst:.4}"))
}

/// Minimum over every parent assignment that forms an in-tree to `root`.
fn enumerate_intrees(g: &ResistanceGraph, root: usize) -> f64 {
    let n = g.nodes();
    let others: Vec<usize> = (0..n).filter(|&v| v != root).collect();
    let mut best = f64::INFINITY;
    let mut parent = vec![0usize; n];
    fn reaches(parent: &[usize], root: usize, mut v: usize, n: usize) -> bool {
        for _ in 0..n {
            if v == root {
                return true;
            }
            v = parent[v];
        }
        v == root
    }
    let total = n.pow(others.len() as u32);
    for code in 0..total {
        let mut c = code;
        let mut cost = 0.0;
        let mut ok = true;
        for &v in &others {
            let p = c % n;
            c /= n;
            match g.resistance(v, p) {
                Some(r) if p != v => {
                    parent[v] = p;
                    cost += r;
                }
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if ok && others.iter().all(|&v| reaches(&parent, root, v, n)) {
            best = best.min(cost);
        }
    }
    best
}

fn intree_matches_enumeration() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut worst: f64 = 0.0;
    for _ in 0..30 {
        let n = rng.random_range(2..=5);
        let mut g = ResistanceGraph::new(n);
        for u in 0..n {
            for v in 0..n {
                if u != v && rng.random::<f64>() < 0.6 {
                    g.add_edge(u, v, rng.random_range(0.0..3.0));
                }
            }
        }
        let root = rng.random_range(0..n);
        let fast = min_intree_resistance(&g, root).resistance;
        let slow = enumerate_intrees(&g, root);
        let diff = if fast.is_infinite() && slow.is_infinite() {
            0.0
        } else {
            (fast - slow).abs()
        };
        worst = worst.max(diff);
    }
    check(
        "intree_matches_enumeration",
        worst <= 1e-9,
        format!("largest difference {worst:.1e} over 30 random graphs"),
    )
}

fn balance_equations() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let mut ok = true;
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let stations = rng.random_range(1..=3);
        let d = random_demand(&mut rng, stations, 2);
        let gamma: Vec<f64> = (0..stations).map(|_| rng.random_range(0.2..2.0)).collect();
        let table = GainTable::new(&HitRateGain, &d);
        for f in 0..2 {
            match check_balance(f, &gamma, &table, None) {
                Ok(r) => {
                    ok &= r.holds;
                    worst = worst.max(r.worst);
                }
                Err(_) => ok = false,
            }
        }
    }
    check("balance_equations", ok, format!("largest violation {worst:.1e}"))
}
