//! Starts caches from a greedy allocation computed on noisy popularity
//! estimates and compares the online policy with the frozen allocation.
//!
//! cargo run --release --example warm_start -- [sigma2] [requests]

use edgecache::gain::{build_gain, GainKind, GainTable};
use edgecache::geometry::{ChannelModel, Topology};
use edgecache::placement::{greedy_allocation, GreedyStrategy};
use edgecache::policies::{PolicyKind, PolicySpec};
use edgecache::sim::{run_experiment, ExperimentConfig};
use edgecache::traffic::{Catalog, Demand, RequestSource};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let sigma2: f64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1.0);
    let requests: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(2_000_000);

    let topology = Topology::berlin();
    let catalog = Catalog::zipf(10_000, 1.2, 1.0)?;
    let source = RequestSource::Spatial { density: 1.0 };
    let channel = ChannelModel::default();
    let model = build_gain(GainKind::HitRate, &channel)?;

    let estimate = catalog.noisy_estimate(sigma2, &mut ChaCha8Rng::seed_from_u64(11))?;
    let noisy = Demand::resolve(&topology, &estimate, &source, 200)?;
    let start = greedy_allocation(&GainTable::new(model.as_ref(), &noisy), 100, GreedyStrategy::Lazy)?.allocation;

    let base = ExperimentConfig {
        topology: &topology,
        catalog: &catalog,
        source: &source,
        channel,
        gain: model.as_ref(),
        policy: PolicySpec::new(PolicyKind::Static, 1.0),
        capacity: 100,
        warmup_requests: 0,
        measure_requests: requests,
        seed: 1,
        initial_allocation: Some(&start),
        reference_occupancy: None,
        snapshot_every: Some(requests / 4),
    };
    let frozen = run_experiment(&base)?;
    let online = run_experiment(&ExperimentConfig {
        policy: PolicySpec::new(PolicyKind::QlruDelta, 1e-3),
        ..base.clone()
    })?;
    let cold = run_experiment(&ExperimentConfig {
        policy: PolicySpec::new(PolicyKind::QlruDelta, 1e-3),
        initial_allocation: None,
        ..base.clone()
    })?;

    println!("sigma2 = {sigma2}: cumulative hit rate by measured requests");
    println!("requests   frozen   warm qlru_delta   cold qlru_delta");
    for ((f, w), c) in frozen.snapshots.iter().zip(&online.snapshots).zip(&cold.snapshots) {
        println!(
            "{:<10} {:<8.4} {:<17.4} {:.4}",
            f.requests_processed, f.hit_rate, w.hit_rate, c.hit_rate
        );
    }
    Ok(())
}
