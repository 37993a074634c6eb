//! Online policies against the greedy allocation on the bundled ten-station
//! layout, under both gain models.
//!
//! cargo run --release --example policy_comparison -- [requests] [q] [warmup]

use edgecache::gain::{CompDelayGain, GainModel, GainTable, HitRateGain};
use edgecache::geometry::{ChannelModel, Topology};
use edgecache::placement::{greedy_allocation, GreedyStrategy};
use edgecache::policies::{PolicyKind, PolicySpec};
use edgecache::sim::{greedy_occupancy_vector, run_experiment, ExperimentConfig};
use edgecache::traffic::{Catalog, Demand, RequestSource};
use rayon::prelude::*;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let requests: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(2_000_000);
    let q: f64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1e-3);
    let warmup: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(requests);

    let topology = Topology::berlin();
    let catalog = Catalog::zipf(10_000, 1.2, 1.0)?;
    let source = RequestSource::Spatial { density: 1.0 };
    let channel = ChannelModel::default();
    let capacity = 100;
    let demand = Demand::resolve(&topology, &catalog, &source, 200)?;

    let hit = HitRateGain;
    let delay = CompDelayGain::new(channel)?;
    let gains: [(&str, &dyn GainModel); 2] = [("hit_rate", &hit), ("comp_delay", &delay)];

    for (name, gain) in gains {
        let table = GainTable::new(gain, &demand);
        let greedy = greedy_allocation(&table, capacity, GreedyStrategy::Lazy)?;
        let reference = greedy_occupancy_vector(&greedy.allocation);
        let static_run = ExperimentConfig {
            topology: &topology,
            catalog: &catalog,
            source: &source,
            channel,
            gain,
            policy: PolicySpec::new(PolicyKind::Static, 1.0),
            capacity,
            warmup_requests: 0,
            measure_requests: requests,
            seed: 1,
            initial_allocation: Some(&greedy.allocation),
            reference_occupancy: Some(&reference),
            snapshot_every: None,
        };
        let kinds = [PolicyKind::QlruDelta, PolicyKind::Qlru, PolicyKind::Fifo];
        let reports: Vec<_> = kinds
            .par_iter()
            .map(|&kind| {
                let cfg = ExperimentConfig {
                    policy: PolicySpec::new(kind, if kind.uses_q() { q } else { 1.0 }),
                    warmup_requests: warmup,
                    initial_allocation: None,
                    ..static_run.clone()
                };
                run_experiment(&cfg).map(|r| (kind.name(), r))
            })
            .collect::<Result<_, _>>()?;
        let greedy_report = run_experiment(&static_run)?;

        println!("gain = {name}, q = {q}, {requests} measured requests");
        println!("{:<12} {:>9} {:>12} {:>10}", "policy", "hit_rate", "delay_ms", "cos_dist");
        for (policy, r) in reports.iter().chain([&("greedy", greedy_report)]) {
            println!(
                "{:<12} {:>9.4} {:>12.3} {:>10.4}",
                policy,
                r.hit_rate,
                1e3 * r.mean_delay,
                r.cosine_to_reference.unwrap_or(f64::NAN)
            );
        }
        println!();
    }
    Ok(())
}
