use std::collections::VecDeque;

use edgecache::analysis::{
    build_ea_chain, cta_hit_probability, solve_tc_single, sojourn_rate, stationary, CtaPolicy, EaParams,
};
use edgecache::gain::{
    build_gain, insert_prob, move_to_front_prob, GainKind, GainModel, GainTable,
};
use edgecache::geometry::{BaseStation, ChannelModel, Configuration, Point, Topology};
use edgecache::policies::{CacheList, Network, PolicyKind, PolicySpec};
use edgecache::sim::cosine_distance;
use edgecache::traffic::{Catalog, Demand, RequestGenerator, RequestSource};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn gains() -> Vec<Box<dyn GainModel>> {
    [GainKind::HitRate, GainKind::CompDelay]
        .into_iter()
        .map(|k| build_gain(k, &ChannelModel::default()).unwrap())
        .collect()
}

fn row(n: usize) -> Topology {
    let s = (0..n)
        .map(|id| BaseStation {
            id,
            position: Point::new(40.0 * id as f64, 0.0),
            range: 70.0,
        })
        .collect();
    Topology::new(s, None).unwrap()
}

#[derive(Debug, Clone)]
enum Op {
    Insert(usize),
    Touch(usize),
    Remove(usize),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (0..30usize).prop_map(Op::Insert),
        (0..30usize).prop_map(Op::Touch),
        (0..30usize).prop_map(Op::Remove),
    ]
}

proptest! {
    #[test]
    fn cache_list_matches_deque(capacity in 1..8usize, ops in prop::collection::vec(op(), 0..200)) {
        let mut list = CacheList::new(capacity, 30);
        let mut model: VecDeque<usize> = VecDeque::new();
        for o in ops {
            match o {
                Op::Insert(f) if !model.contains(&f) => {
                    let evicted = list.insert_front(f);
                    model.push_front(f);
                    let expect = if model.len() > capacity { model.pop_back() } else { None };
                    prop_assert_eq!(evicted, expect);
                }
                Op::Insert(_) => {}
                Op::Touch(f) => {
                    let was = model.iter().position(|&g| g == f);
                    prop_assert_eq!(list.move_to_front(f), was.is_some());
                    if let Some(i) = was {
                        model.remove(i);
                        model.push_front(f);
                    }
                }
                Op::Remove(f) => {
                    let was = model.iter().position(|&g| g == f);
                    prop_assert_eq!(list.remove(f), was.is_some());
                    if let Some(i) = was {
                        model.remove(i);
                    }
                }
            }
            prop_assert_eq!(list.to_vec(), model.iter().copied().collect::<Vec<_>>());
            prop_assert!(list.len() <= capacity);
        }
    }

    #[test]
    fn networks_respect_capacity_and_count_copies(
        stations in 1..5usize,
        capacity in 1..6usize,
        q in 0.01..1.0f64,
        kind in prop::sample::select(vec![
            PolicyKind::QlruDelta, PolicyKind::Qlru, PolicyKind::Lru,
            PolicyKind::Fifo, PolicyKind::LruOne, PolicyKind::LruAll,
        ]),
        delay in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let t = row(stations);
        let catalog = Catalog::zipf(40, 0.9, 1.0).unwrap();
        let gain = build_gain(if delay { GainKind::CompDelay } else { GainKind::HitRate }, &ChannelModel::default()).unwrap();
        let mut net = Network::new(&t, PolicySpec::new(kind, q), gain.as_ref(), ChannelModel::default(), capacity, 40, seed).unwrap();
        let mut gen = RequestGenerator::new(&t, &catalog, &RequestSource::Spatial { density: 1.0 }, seed).unwrap();
        for _ in 0..500 {
            let r = gen.next_request();
            let out = net.process_request(&r);
            prop_assert!(out.hits.is_subset_of(out.coverage));
            prop_assert_eq!(out.served, !out.hits.is_empty());
            prop_assert!(out.delay > 0.0);
            prop_assert!(net.caches().iter().all(|c| c.len() <= capacity));
        }
        for f in 0..40 {
            let held = net.caches().iter().filter(|c| c.contains(f)).count();
            prop_assert_eq!(usize::from(net.copy_counts()[f]), held);
            prop_assert_eq!(net.configuration(f).weight() as usize, held);
        }
    }

    #[test]
    fn expected_gain_is_monotone_and_submodular(coverage in 1u64..32, x in 0u64..32, b in 0..5usize, c in 0..5usize) {
        let cov = Configuration::from_mask(coverage);
        let x = Configuration::from_mask(x);
        for g in gains() {
            let gx = |s: Configuration| g.expected_gain(s.intersect(cov), cov);
            let add_b = gx(x.with(b)) - gx(x);
            prop_assert!(add_b >= -1e-12);
            // Adding `c` first can only shrink the gain of adding `b`.
            let add_b_later = gx(x.with(c).with(b)) - gx(x.with(c));
            prop_assert!(add_b_later <= add_b + 1e-12);
        }
    }

    #[test]
    fn update_probabilities_lie_in_unit_interval(coverage in 1u64..16, hits in 0u64..16, b in 0..4usize, q in 0.0..=1.0f64) {
        let cov = Configuration::from_mask(coverage);
        let hits = Configuration::from_mask(hits).intersect(cov);
        let snr = vec![10.0; 4];
        for g in gains() {
            let norm = g.normalizers(true).unwrap();
            let p = if hits.contains(b) {
                move_to_front_prob(g.as_ref(), &norm, b, hits, &snr).unwrap()
            } else {
                insert_prob(g.as_ref(), &norm, b, hits, &snr, q).unwrap()
            };
            prop_assert!((0.0..=1.0).contains(&p));
        }
    }

    #[test]
    fn cosine_distance_is_bounded(u in prop::collection::vec(0.0..10.0f64, 1..20), v in prop::collection::vec(0.0..10.0f64, 1..20)) {
        let n = u.len().min(v.len());
        if let Ok(d) = cosine_distance(&u[..n], &v[..n]) {
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&d));
        }
        if let Ok(d) = cosine_distance(&u, &u) {
            prop_assert!(d.abs() < 1e-12);
        }
    }

    #[test]
    fn sojourn_rate_decreases_in_gain(a in 0.0..5.0f64, extra in 0.01..5.0f64, tc in 0.1..50.0f64) {
        prop_assert!(sojourn_rate(a + extra, 1.0, tc) <= sojourn_rate(a, 1.0, tc));
        prop_assert!(sojourn_rate(0.0, 1.0, tc) > 0.0);
    }

    #[test]
    fn stationary_laws_are_distributions(
        stations in 1..4usize,
        rates in prop::collection::vec(0.1..3.0f64, 4),
        q in 1e-4..0.5f64,
        delay in any::<bool>(),
    ) {
        let classes: Vec<Configuration> = (0..stations).map(Configuration::single)
            .chain([Configuration::from_mask((1 << stations) - 1)])
            .collect();
        let table: Vec<Vec<f64>> = vec![rates[..classes.len()].to_vec()];
        let d = Demand::from_table(stations, classes, table).unwrap();
        let g = build_gain(if delay { GainKind::CompDelay } else { GainKind::HitRate }, &ChannelModel::default()).unwrap();
        let t = GainTable::new(g.as_ref(), &d);
        let params = EaParams::asymptotic(q, vec![1.0; stations], g.normalizers(stations > 1).unwrap());
        let law = stationary(&build_ea_chain(0, &t, &params).unwrap()).unwrap();
        prop_assert!((law.pi.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(law.pi.iter().all(|p| *p >= 0.0));
    }
}

/// Pearson statistic against expected counts.
fn chi_square(observed: &[u64], expected: &[f64]) -> f64 {
    observed
        .iter()
        .zip(expected)
        .map(|(&o, &e)| (o as f64 - e).powi(2) / e)
        .sum()
}

/// Loose upper quantile of a chi-square law with `df` degrees of freedom.
fn chi_square_bound(df: usize) -> f64 {
    let df = df as f64;
    df + 5.0 * (2.0 * df).sqrt()
}

#[test]
fn content_draws_follow_zipf() {
    let catalog = Catalog::zipf(20, 1.1, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let n = 200_000;
    let mut counts = vec![0u64; 20];
    for _ in 0..n {
        counts[catalog.sample(&mut rng)] += 1;
    }
    let expected: Vec<f64> = catalog.popularity().iter().map(|p| p * n as f64).collect();
    assert!(chi_square(&counts, &expected) < chi_square_bound(19));
}

#[test]
fn location_and_content_are_independent() {
    // Two stations side by side; left, right and overlap regions.
    let t = row(2);
    let catalog = Catalog::zipf(5, 0.8, 1.0).unwrap();
    let mut gen = RequestGenerator::new(&t, &catalog, &RequestSource::Spatial { density: 1.0 }, 5).unwrap();
    let mut table = [[0u64; 5]; 4];
    let n = 200_000;
    for _ in 0..n {
        let r = gen.next_request();
        table[t.coverage_set(&r.location).mask() as usize][r.content] += 1;
    }
    let rows: Vec<u64> = table.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<u64> = (0..5).map(|f| table.iter().map(|r| r[f]).sum()).collect();
    let (mut observed, mut expected) = (Vec::new(), Vec::new());
    for (m, r) in table.iter().enumerate().filter(|(m, _)| rows[*m] > 0) {
        for f in 0..5 {
            observed.push(r[f]);
            expected.push(rows[m] as f64 * cols[f] as f64 / n as f64);
        }
    }
    let used_rows = rows.iter().filter(|r| **r > 0).count();
    assert!(chi_square(&observed, &expected) < chi_square_bound((used_rows - 1) * 4));
}

fn simulated_single(kind: PolicyKind, q: f64, catalog: &Catalog, capacity: usize) -> f64 {
    let t = row(1);
    let g = build_gain(GainKind::HitRate, &ChannelModel::default()).unwrap();
    let mut net = Network::new(&t, PolicySpec::new(kind, q), g.as_ref(), ChannelModel::default(), capacity, catalog.len(), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let origin = Point::new(0.0, 0.0);
    let n = 400_000;
    let mut hits = 0u64;
    for i in 0..2 * n {
        let out = net.process_at(&origin, catalog.sample(&mut rng));
        if i >= n {
            hits += u64::from(out.served);
        }
    }
    hits as f64 / n as f64
}

#[test]
fn characteristic_time_predicts_single_caches() {
    let catalog = Catalog::zipf(1000, 0.8, 1.0).unwrap();
    let rates: Vec<f64> = (0..1000).map(|f| catalog.rate(f)).collect();
    for (kind, cta) in [
        (PolicyKind::Lru, CtaPolicy::Lru),
        (PolicyKind::Qlru, CtaPolicy::Qlru { q: 0.1 }),
        (PolicyKind::Fifo, CtaPolicy::Fifo),
    ] {
        let tc = solve_tc_single(cta, &rates, 50.0).unwrap().tc[0];
        let predicted = cta_hit_probability(cta, &rates, tc);
        let simulated = simulated_single(kind, 0.1, &catalog, 50);
        let rel = (simulated - predicted).abs() / predicted;
        assert!(rel < 0.03, "{kind}: simulated {simulated}, predicted {predicted}");
    }
}
